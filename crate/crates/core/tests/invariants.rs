mod common;

use common::{case, CASES};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn treated_row_collapse(c in case()) {
        common::treated_row_collapse(&c)?;
    }

    #[test]
    fn tpr_fpr_complementarity(c in case()) {
        common::tpr_fpr_complementarity(&c)?;
    }

    #[test]
    fn zero_residual_agreement(c in case()) {
        common::zero_residual_agreement(&c)?;
    }

    #[test]
    fn reweigh_identity(c in case()) {
        common::reweigh_identity(&c)?;
    }

    #[test]
    fn mixing_affinity(c in case()) {
        common::mixing_affinity(&c)?;
    }
}
