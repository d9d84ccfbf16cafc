//! Plug-in, IPW and doubly-robust estimates of counterfactual performance
//! metrics, i.e. metrics measured against the baseline potential outcome `Y0`.
//!
//! Every DR metric is built from the per-row pseudo-outcome
//!
//! ```text
//! phi_i = (1 - t_i) / (1 - pi_hat_i) * (y_i - s0_hat_i) + s0_hat_i
//! ```
//!
//! whose mean estimates `E[Y0]`. Ratio metrics (TPR, FPR, generalized rates)
//! divide two such means; their standard errors use the delta method with the
//! empirical covariance of numerator and denominator terms.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceSet;

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Plugin,
    Ipw,
    Dr,
    Observational,
    Control,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanY0,
    Tpr,
    Fpr,
    Precision,
    CalibrationBin,
    Gfnr,
    Gfpr,
    BaseRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub metric: Metric,
    pub kind: EstimatorKind,
    /// Raw point estimate; DR values may fall outside [0, 1].
    pub value: f64,
    /// `value` clamped to [0, 1], for plotting.
    pub clipped_value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_effective: usize,
    /// Calibration-bin reference value `(r1 + r2) / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl Estimate {
    pub fn new(metric: Metric, kind: EstimatorKind, value: f64, stderr: f64, n: usize) -> Self {
        Self {
            metric,
            kind,
            value,
            clipped_value: value.clamp(0.0, 1.0),
            stderr,
            ci_low: value - Z_95 * stderr,
            ci_high: value + Z_95 * stderr,
            n_effective: n,
            reference: None,
        }
    }

    /// Mean of `terms` with stderr `sd / sqrt(n)`.
    pub fn from_terms(metric: Metric, kind: EstimatorKind, terms: &[f64]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyConditioningSet(format!("{metric:?}: no rows")));
        }
        let (m, v) = mean_var(terms);
        Ok(Self::new(metric, kind, m, (v / terms.len() as f64).sqrt(), terms.len()))
    }

    /// `mean(num) / mean(den)` with a delta-method stderr.
    pub fn from_ratio(
        metric: Metric,
        kind: EstimatorKind,
        num: &[f64],
        den: &[f64],
    ) -> Result<Self> {
        debug_assert_eq!(num.len(), den.len());
        let n = num.len();
        if n == 0 {
            return Err(Error::EmptyConditioningSet(format!("{metric:?}: no rows")));
        }
        let d_mean = mean(den);
        if !(d_mean > 0.0) {
            return Err(Error::UndefinedMetric(format!(
                "{metric:?}: denominator estimate {d_mean} is not positive"
            )));
        }
        let ratio = mean(num) / d_mean;
        let resid: Vec<f64> = num.iter().zip(den).map(|(a, b)| a - ratio * b).collect();
        let (_, v) = mean_var(&resid);
        let stderr = (v / n as f64).sqrt() / d_mean;
        Ok(Self::new(metric, kind, ratio, stderr, n))
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and sample variance (n - 1 denominator; NaN for a single value).
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len();
    if n < 2 {
        return (m, f64::NAN);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, ss / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityMode {
    /// Rows with `pi_hat > 1 - clip` are an error.
    #[default]
    Reject,
    /// Such rows have `pi_hat` truncated to `1 - clip`.
    Winsorize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub clip: f64,
    pub mode: PositivityMode,
}

impl Default for Positivity {
    fn default() -> Self {
        Self {
            clip: 0.01,
            mode: PositivityMode::Reject,
        }
    }
}

impl Positivity {
    pub fn bound(&self) -> f64 {
        1.0 - self.clip
    }

    /// Propensities after applying the clip rule.
    pub fn apply(&self, propensity: &[f64]) -> Result<Vec<f64>> {
        let bound = self.bound();
        match self.mode {
            PositivityMode::Reject => {
                let rows: Vec<usize> = propensity
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > bound)
                    .map(|(i, _)| i)
                    .collect();
                if rows.is_empty() {
                    Ok(propensity.to_vec())
                } else {
                    Err(Error::Positivity { bound, rows })
                }
            }
            PositivityMode::Winsorize => Ok(propensity.iter().map(|&p| p.min(bound)).collect()),
        }
    }
}

/// Per-row DR transforms of `Y0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes(pub Vec<f64>);

impl PseudoOutcomes {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch {
            what: what.into(),
            got,
            expected,
        });
    }
    Ok(())
}

pub fn pseudo_outcomes(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    positivity: &Positivity,
) -> Result<PseudoOutcomes> {
    nuisances.check_aligned(ds)?;
    let pi = positivity.apply(&nuisances.propensity)?;
    Ok(PseudoOutcomes(
        (0..ds.len())
            .map(|i| {
                let s0 = nuisances.cf_scores[i];
                if ds.t[i] == 1 {
                    s0
                } else {
                    (f64::from(ds.y[i]) - s0) / (1.0 - pi[i]) + s0
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMethod {
    Plugin,
    Ipw,
    Dr,
}

pub fn estimate_mean_y0(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    method: MeanMethod,
    positivity: &Positivity,
) -> Result<Estimate> {
    nuisances.check_aligned(ds)?;
    let (kind, terms) = match method {
        MeanMethod::Plugin => (EstimatorKind::Plugin, nuisances.cf_scores.clone()),
        MeanMethod::Ipw => {
            let pi = positivity.apply(&nuisances.propensity)?;
            let terms = (0..ds.len())
                .map(|i| {
                    if ds.t[i] == 1 {
                        0.0
                    } else {
                        f64::from(ds.y[i]) / (1.0 - pi[i])
                    }
                })
                .collect();
            (EstimatorKind::Ipw, terms)
        }
        MeanMethod::Dr => (
            EstimatorKind::Dr,
            pseudo_outcomes(ds, nuisances, positivity)?.0,
        ),
    };
    Estimate::from_terms(Metric::MeanY0, kind, &terms)
}

fn labels_as_weights(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&v| f64::from(v)).collect()
}

/// `E[w(X) Y0] / E[Y0]` with DR numerator and denominator. With `w = Y_hat`
/// this is the counterfactual TPR; with `w = s_hat` it is one minus the
/// counterfactual generalized FNR.
pub(crate) fn dr_positive_rate(phi: &[f64], w: &[f64], metric: Metric) -> Result<Estimate> {
    let num: Vec<f64> = w.iter().zip(phi).map(|(w, p)| w * p).collect();
    Estimate::from_ratio(metric, EstimatorKind::Dr, &num, phi)
}

/// `E[w(X) (1 - Y0)] / E[1 - Y0]` with DR numerator and denominator.
pub(crate) fn dr_negative_rate(phi: &[f64], w: &[f64], metric: Metric) -> Result<Estimate> {
    let den: Vec<f64> = phi.iter().map(|p| 1.0 - p).collect();
    let num: Vec<f64> = w.iter().zip(&den).map(|(w, d)| w * d).collect();
    Estimate::from_ratio(metric, EstimatorKind::Dr, &num, &den)
}

pub fn dr_tpr(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    predicted: &[u8],
    positivity: &Positivity,
) -> Result<Estimate> {
    check_len("predicted labels", predicted.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    dr_positive_rate(&phi.0, &labels_as_weights(predicted), Metric::Tpr)
}

pub fn dr_fpr(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    predicted: &[u8],
    positivity: &Positivity,
) -> Result<Estimate> {
    check_len("predicted labels", predicted.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    dr_negative_rate(&phi.0, &labels_as_weights(predicted), Metric::Fpr)
}

/// Counterfactual generalized FNR, `E[1 - s_hat | Y0 = 1]`.
pub fn dr_gfnr(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    scores: &[f64],
    positivity: &Positivity,
) -> Result<Estimate> {
    check_len("scores", scores.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    let miss: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    dr_positive_rate(&phi.0, &miss, Metric::Gfnr)
}

/// Counterfactual generalized FPR, `E[s_hat | Y0 = 0]`.
pub fn dr_gfpr(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    scores: &[f64],
    positivity: &Positivity,
) -> Result<Estimate> {
    check_len("scores", scores.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    dr_negative_rate(&phi.0, scores, Metric::Gfpr)
}

pub fn dr_precision(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    predicted: &[u8],
    positivity: &Positivity,
) -> Result<Estimate> {
    check_len("predicted labels", predicted.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    precision_from_terms(&phi.0, predicted, EstimatorKind::Dr)
}

/// Mean of `terms` over predicted positives.
pub(crate) fn precision_from_terms(
    terms: &[f64],
    predicted: &[u8],
    kind: EstimatorKind,
) -> Result<Estimate> {
    let selected: Vec<f64> = terms
        .iter()
        .zip(predicted)
        .filter(|(_, &l)| l == 1)
        .map(|(&p, _)| p)
        .collect();
    if selected.is_empty() {
        return Err(Error::UndefinedMetric(
            "precision: no predicted positives".into(),
        ));
    }
    Estimate::from_terms(Metric::Precision, kind, &selected)
}

/// DR estimate of `E[Y0 | r1 <= s_hat <= r2]`, with the bin midpoint attached
/// as the reference value.
pub fn dr_calibration_bin(
    ds: &Dataset,
    nuisances: &NuisanceSet,
    scores: &[f64],
    r1: f64,
    r2: f64,
    positivity: &Positivity,
) -> Result<Estimate> {
    if !(r1 < r2) {
        return Err(Error::InvalidParameter(format!(
            "calibration bin needs r1 < r2, got [{r1}, {r2}]"
        )));
    }
    check_len("scores", scores.len(), ds.len())?;
    let phi = pseudo_outcomes(ds, nuisances, positivity)?;
    calibration_from_terms(&phi.0, scores, r1, r2, EstimatorKind::Dr)
}

/// Mean of `terms` over rows with `r1 <= score <= r2`; stderr `sqrt(var / n_r)`.
pub(crate) fn calibration_from_terms(
    terms: &[f64],
    scores: &[f64],
    r1: f64,
    r2: f64,
    kind: EstimatorKind,
) -> Result<Estimate> {
    let in_bin: Vec<f64> = terms
        .iter()
        .zip(scores)
        .filter(|(_, &s)| r1 <= s && s <= r2)
        .map(|(&p, _)| p)
        .collect();
    if in_bin.is_empty() {
        return Err(Error::EmptyConditioningSet(format!(
            "calibration bin [{r1}, {r2}] is empty"
        )));
    }
    let mut est = Estimate::from_terms(Metric::CalibrationBin, kind, &in_bin)?;
    est.reference = Some(0.5 * (r1 + r2));
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Row;
    use crate::nuisance::Provenance;

    fn rows(spec: &[(u8, u8)]) -> Dataset {
        let rows: Vec<Row> = spec
            .iter()
            .map(|&(t, y)| Row { z: 0.0, a: 0, y0: None, y1: None, t, y })
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    fn nuis(pi: &[f64], s0: &[f64]) -> NuisanceSet {
        NuisanceSet {
            propensity: pi.to_vec(),
            cf_scores: s0.to_vec(),
            obs_scores: None,
            provenance: Provenance {
                propensity: "test".into(),
                counterfactual: "test".into(),
                observational: None,
            },
        }
    }

    #[test]
    fn pseudo_outcome_examples() {
        let ds = rows(&[(0, 1), (1, 1), (1, 0), (0, 1)]);
        let ns = nuis(&[0.5, 0.9, 0.2, 0.3], &[0.6, 0.3, 0.3, 1.0]);
        let phi = pseudo_outcomes(&ds, &ns, &Positivity::default()).unwrap();
        assert!((phi.0[0] - 1.4).abs() < 1e-15);
        assert_eq!(phi.0[1], 0.3);
        assert_eq!(phi.0[2], 0.3);
        assert_eq!(phi.0[3], 1.0);
    }

    #[test]
    fn positivity_violation_names_rows() {
        let ds = rows(&[(0, 1), (1, 0), (0, 0)]);
        let ns = nuis(&[0.5, 0.995, 0.999], &[0.5, 0.5, 0.5]);
        match pseudo_outcomes(&ds, &ns, &Positivity::default()) {
            Err(Error::Positivity { rows, .. }) => assert_eq!(rows, vec![1, 2]),
            other => panic!("{other:?}"),
        }
        let wins = Positivity { clip: 0.01, mode: PositivityMode::Winsorize };
        let phi = pseudo_outcomes(&ds, &ns, &wins).unwrap();
        assert!((phi.0[2] - (0.0 - 0.5) / 0.01 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn two_row_dr_mean() {
        let ds = rows(&[(0, 1), (1, 0)]);
        let ns = nuis(&[0.5, 0.7], &[0.6, 0.3]);
        let est = estimate_mean_y0(&ds, &ns, MeanMethod::Dr, &Positivity::default()).unwrap();
        assert!((est.value - 0.85).abs() < 1e-15);
        assert_eq!(est.n_effective, 2);
        assert!((est.ci_high - est.value - Z_95 * est.stderr).abs() < 1e-15);
    }

    #[test]
    fn ipw_with_zero_propensity_is_sample_mean() {
        let ds = rows(&[(0, 1), (0, 0), (0, 1), (0, 1)]);
        let ns = nuis(&[0.0; 4], &[0.2; 4]);
        let est = estimate_mean_y0(&ds, &ns, MeanMethod::Ipw, &Positivity::default()).unwrap();
        assert_eq!(est.value, 0.75);
    }

    #[test]
    fn all_and_no_positive_classifiers() {
        let ds = rows(&[(0, 1), (1, 0), (0, 0), (1, 1), (0, 1)]);
        let ns = nuis(&[0.4, 0.6, 0.3, 0.8, 0.5], &[0.7, 0.2, 0.4, 0.6, 0.5]);
        let pos = Positivity::default();
        assert_eq!(dr_tpr(&ds, &ns, &[1; 5], &pos).unwrap().value, 1.0);
        assert_eq!(dr_tpr(&ds, &ns, &[0; 5], &pos).unwrap().value, 0.0);
        assert_eq!(dr_fpr(&ds, &ns, &[1; 5], &pos).unwrap().value, 1.0);
        assert_eq!(dr_fpr(&ds, &ns, &[0; 5], &pos).unwrap().value, 0.0);
        let prec = dr_precision(&ds, &ns, &[1; 5], &pos).unwrap();
        let mean = estimate_mean_y0(&ds, &ns, MeanMethod::Dr, &pos).unwrap();
        assert!((prec.value - mean.value).abs() < 1e-15);
        assert!(matches!(
            dr_precision(&ds, &ns, &[0; 5], &pos),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn single_positive_precision_can_exceed_one() {
        let ds = rows(&[(0, 1), (1, 0)]);
        let ns = nuis(&[0.5, 0.5], &[0.6, 0.3]);
        let est = dr_precision(&ds, &ns, &[1, 0], &Positivity::default()).unwrap();
        assert!((est.value - 1.4).abs() < 1e-15);
        assert_eq!(est.clipped_value, 1.0);
    }

    #[test]
    fn non_positive_denominator_is_undefined() {
        // every phi is zero
        let ds = rows(&[(1, 0), (1, 1)]);
        let ns = nuis(&[0.5, 0.5], &[0.0, 0.0]);
        assert!(matches!(
            dr_tpr(&ds, &ns, &[1, 0], &Positivity::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn calibration_bins() {
        let ds = rows(&[(0, 1), (1, 0), (0, 0), (1, 1)]);
        let ns = nuis(&[0.4, 0.6, 0.3, 0.8], &[0.7, 0.2, 0.4, 0.6]);
        let pos = Positivity::default();
        let scores = [0.5; 4];
        let bin = dr_calibration_bin(&ds, &ns, &scores, 0.4, 0.6, &pos).unwrap();
        let mean = estimate_mean_y0(&ds, &ns, MeanMethod::Dr, &pos).unwrap();
        assert!((bin.value - mean.value).abs() < 1e-15);
        assert_eq!(bin.reference, Some(0.5));
        assert!(matches!(
            dr_calibration_bin(&ds, &ns, &scores, 0.9, 1.0, &pos),
            Err(Error::EmptyConditioningSet(_))
        ));
        assert!(dr_calibration_bin(&ds, &ns, &scores, 0.6, 0.4, &pos).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let ds = rows(&[(0, 1), (1, 0)]);
        let ns = nuis(&[0.5], &[0.6]);
        assert!(matches!(
            estimate_mean_y0(&ds, &ns, MeanMethod::Plugin, &Positivity::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
