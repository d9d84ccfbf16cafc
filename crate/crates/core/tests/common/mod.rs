//! Randomized small inputs and the algebraic invariants checked on them.
#![allow(dead_code)]

use cfeval::corrections::{fit_mixing, kamiran_weights, weighted_group_rate, PostprocessOptions};
use cfeval::estimators::{
    dr_fpr, dr_gfnr, dr_gfpr, dr_tpr, estimate_mean_y0, pseudo_outcomes, MeanMethod,
};
use cfeval::nuisance::Provenance;
use cfeval::{Dataset, NuisanceSet, Positivity};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const TOL: f64 = 1e-12;
pub const CASES: u32 = 256;

/// Every `(a, y)` combination appears in the first four rows.
const COVER: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone)]
pub struct Case {
    pub ds: Dataset,
    pub nuisances: NuisanceSet,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub lambda: [f64; 2],
}

type RawRow = (f64, u8, u8, u8, f64, f64, f64, u8);

fn raw_row() -> impl Strategy<Value = RawRow> {
    (
        -3.0..3.0f64,
        0..=1u8,
        0..=1u8,
        0..=1u8,
        0.0..0.9f64,
        0.05..0.95f64,
        0.0..=1.0f64,
        0..=1u8,
    )
}

pub fn case() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(raw_row(), 4..40),
        0.0..=1.0f64,
        0.0..=1.0f64,
    )
        .prop_map(|(mut rows, l0, l1)| {
            for (r, &(a, y)) in rows.iter_mut().zip(&COVER) {
                r.1 = a;
                r.3 = y;
            }
            let ds = Dataset {
                z: rows.iter().map(|r| r.0).collect(),
                a: rows.iter().map(|r| r.1).collect(),
                t: rows.iter().map(|r| r.2).collect(),
                y: rows.iter().map(|r| r.3).collect(),
                ..Dataset::default()
            };
            let nuisances = NuisanceSet {
                propensity: rows.iter().map(|r| r.4).collect(),
                cf_scores: rows.iter().map(|r| r.5).collect(),
                obs_scores: None,
                provenance: Provenance {
                    propensity: "random".into(),
                    counterfactual: "random".into(),
                    observational: None,
                },
            };
            Case {
                ds,
                nuisances,
                scores: rows.iter().map(|r| r.6).collect(),
                labels: rows.iter().map(|r| r.7).collect(),
                lambda: [l0, l1],
            }
        })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn pos() -> Positivity {
    Positivity::default()
}

/// Treated rows transform to their counterfactual score whatever their
/// outcome or propensity.
pub fn treated_row_collapse(c: &Case) -> Result<(), TestCaseError> {
    let phi = pseudo_outcomes(&c.ds, &c.nuisances, &pos()).unwrap();
    let mut flipped = c.ds.clone();
    let mut moved = c.nuisances.clone();
    for i in 0..flipped.len() {
        if flipped.t[i] == 1 {
            flipped.y[i] = 1 - flipped.y[i];
            moved.propensity[i] *= 0.5;
        }
    }
    let phi2 = pseudo_outcomes(&flipped, &moved, &pos()).unwrap();
    for i in 0..c.ds.len() {
        if c.ds.t[i] == 1 {
            prop_assert_eq!(phi.0[i], c.nuisances.cf_scores[i]);
            prop_assert_eq!(phi2.0[i], c.nuisances.cf_scores[i]);
        }
    }
    Ok(())
}

/// `TPR * mean(phi) + FPR * mean(1 - phi) = mean(Y_hat)`.
pub fn tpr_fpr_complementarity(c: &Case) -> Result<(), TestCaseError> {
    let phi = pseudo_outcomes(&c.ds, &c.nuisances, &pos()).unwrap();
    let n = c.ds.len() as f64;
    let m_phi = phi.0.iter().sum::<f64>() / n;
    let m_hat = c.labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
    let (tpr, fpr) = match (
        dr_tpr(&c.ds, &c.nuisances, &c.labels, &pos()),
        dr_fpr(&c.ds, &c.nuisances, &c.labels, &pos()),
    ) {
        (Ok(t), Ok(f)) => (t.value, f.value),
        _ => {
            prop_assume!(false, "rate undefined");
            unreachable!()
        }
    };
    let lhs = tpr * m_phi + fpr * (1.0 - m_phi);
    prop_assert!(close(lhs, m_hat), "{lhs} vs {m_hat}");
    Ok(())
}

/// With `s0_hat = y` on every control row the DR and plug-in estimates agree.
pub fn zero_residual_agreement(c: &Case) -> Result<(), TestCaseError> {
    let mut ns = c.nuisances.clone();
    for i in 0..c.ds.len() {
        if c.ds.t[i] == 0 {
            ns.cf_scores[i] = f64::from(c.ds.y[i]);
        }
    }
    let dr = estimate_mean_y0(&c.ds, &ns, MeanMethod::Dr, &pos()).unwrap();
    let plugin = estimate_mean_y0(&c.ds, &ns, MeanMethod::Plugin, &pos()).unwrap();
    prop_assert!(close(dr.value, plugin.value), "{} vs {}", dr.value, plugin.value);
    let phi = pseudo_outcomes(&c.ds, &ns, &pos()).unwrap();
    for (p, s) in phi.0.iter().zip(&ns.cf_scores) {
        prop_assert!(close(*p, *s));
    }
    Ok(())
}

/// Reweighted observed base rates coincide across groups.
pub fn reweigh_identity(c: &Case) -> Result<(), TestCaseError> {
    let plan = kamiran_weights(&c.ds).unwrap();
    let w = plan.row_weights(&c.ds);
    let r0 = weighted_group_rate(&c.ds, &c.ds.y, &w, 0).unwrap();
    let r1 = weighted_group_rate(&c.ds, &c.ds.y, &w, 1).unwrap();
    prop_assert!(close(r0, r1), "{r0} vs {r1}");
    let overall = c.ds.y.iter().map(|&v| f64::from(v)).sum::<f64>() / c.ds.len() as f64;
    prop_assert!(close(r0, overall));
    Ok(())
}

fn group(c: &Case, g: u8) -> (Dataset, NuisanceSet, Vec<usize>) {
    let rows: Vec<usize> = (0..c.ds.len()).filter(|&i| c.ds.a[i] == g).collect();
    (c.ds.select(&rows), c.nuisances.select(&rows), rows)
}

/// Expected mixed scores move every generalized rate affinely toward the
/// trivial predictor's rate.
pub fn mixing_affinity(c: &Case) -> Result<(), TestCaseError> {
    let opts = PostprocessOptions {
        forced_lambda: Some(c.lambda),
        ..PostprocessOptions::default()
    };
    let policy = fit_mixing(&c.ds, &c.scores, &opts).unwrap();
    let mixed = policy.expected_scores(&c.ds.a, &c.scores).unwrap();
    for g in 0..=1u8 {
        let l = c.lambda[g as usize];
        let (gds, gns, rows) = group(c, g);
        let s: Vec<f64> = rows.iter().map(|&i| c.scores[i]).collect();
        let m: Vec<f64> = rows.iter().map(|&i| mixed[i]).collect();
        let mu = gds.y.iter().filter(|&&v| v == 1).count() as f64 / gds.len() as f64;

        let obs = |v: &[f64], y: u8, miss: bool| {
            let sel: Vec<f64> = (0..gds.len())
                .filter(|&i| gds.y[i] == y)
                .map(|i| if miss { 1.0 - v[i] } else { v[i] })
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        let (fnr, fpr) = (obs(&s, 1, true), obs(&s, 0, false));
        prop_assert!(close(obs(&m, 1, true), (1.0 - l) * fnr + l * (1.0 - mu)));
        prop_assert!(close(obs(&m, 0, false), (1.0 - l) * fpr + l * mu));

        if let (Ok(before), Ok(after)) = (
            dr_gfnr(&gds, &gns, &s, &pos()),
            dr_gfnr(&gds, &gns, &m, &pos()),
        ) {
            let want = (1.0 - l) * before.value + l * (1.0 - mu);
            prop_assert!(close(after.value, want), "{} vs {want}", after.value);
        }
        if let (Ok(before), Ok(after)) = (
            dr_gfpr(&gds, &gns, &s, &pos()),
            dr_gfpr(&gds, &gns, &m, &pos()),
        ) {
            let want = (1.0 - l) * before.value + l * mu;
            prop_assert!(close(after.value, want), "{} vs {want}", after.value);
        }
    }
    Ok(())
}

pub type Invariant = fn(&Case) -> Result<(), TestCaseError>;

pub const INVARIANTS: [(&str, Invariant); 5] = [
    ("treated-row collapse", treated_row_collapse),
    ("TPR/FPR numerator complementarity", tpr_fpr_complementarity),
    ("plug-in/DR zero-residual agreement", zero_residual_agreement),
    ("reweigh identity", reweigh_identity),
    ("mixing affinity", mixing_affinity),
];

/// Run one invariant on `CASES` deterministic random instances.
pub fn run_invariant(check: Invariant) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&case(), |c| check(&c)).map_err(|e| e.to_string())
}
