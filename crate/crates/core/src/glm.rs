//! Weighted logistic regression fitted by damped Newton iterations
//! (iteratively reweighted least squares).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_columns(names: &[&str], columns: &[Vec<f64>]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                got: columns.len(),
            });
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (name, col) in names.iter().zip(columns) {
            if col.len() != n_rows {
                return Err(Error::LengthMismatch {
                    what: format!("feature column `{name}`"),
                    got: col.len(),
                    expected: n_rows,
                });
            }
        }
        let p = names.len();
        let mut data = vec![0.0; n_rows * p];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * p + j] = v;
            }
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            n_rows,
            data,
        })
    }

    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            n_rows: rows.len(),
            data,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.data[i * p..(i + 1) * p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient of the
    /// weight-normalized penalized negative log-likelihood.
    pub gradient_tolerance: f64,
    /// Ridge penalty on the slope coefficients (the intercept is not penalized).
    pub l2_penalty: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            l2_penalty: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidParameter("gradient_tolerance must be > 0".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::InvalidParameter("l2_penalty must be >= 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loss: f64,
    pub n_rows: usize,
    pub total_weight: f64,
}

/// A logistic scorer: `sigmoid(intercept + coefficients . x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub feature_spec: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

impl ScoreModel {
    pub fn new(feature_spec: &[&str], coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if feature_spec.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_spec.len(),
                got: coefficients.len(),
            });
        }
        Ok(Self {
            feature_spec: feature_spec.iter().map(|s| s.to_string()).collect(),
            coefficients,
            intercept,
            diagnostics: None,
        })
    }

    /// A scorer that ignores its features and always returns `p`.
    pub fn constant(feature_spec: &[&str], p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constant score must lie in (0, 1), got {p}"
            )));
        }
        Self::new(feature_spec, vec![0.0; feature_spec.len()], logit(p))
    }

    pub fn linear_predictor(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: features.len(),
            });
        }
        Ok(self.intercept
            + self
                .coefficients
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.linear_predictor(features).map(sigmoid)
    }

    pub fn score_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.names() != self.feature_spec.as_slice() {
            return Err(Error::InvalidParameter(format!(
                "feature spec mismatch: model {:?}, matrix {:?}",
                self.feature_spec,
                x.names()
            )));
        }
        (0..x.n_rows()).map(|i| self.score(x.row(i))).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.feature_spec
            .iter()
            .position(|f| f == name)
            .map(|j| self.coefficients[j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ScoreModel = serde_json::from_str(s)?;
        if m.feature_spec.len() != m.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: m.feature_spec.len(),
                got: m.coefficients.len(),
            });
        }
        Ok(m)
    }
}

/// Label 1 iff `score >= threshold`.
pub fn threshold_labels(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

struct Objective<'a> {
    x: &'a FeatureMatrix,
    y: &'a [u8],
    w: &'a [f64],
    total_weight: f64,
    penalty: f64,
}

impl Objective<'_> {
    fn eta(&self, beta: &DVector<f64>, i: usize) -> f64 {
        let row = self.x.row(i);
        beta[0] + row.iter().enumerate().map(|(j, v)| beta[j + 1] * v).sum::<f64>()
    }

    fn loss(&self, beta: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.x.n_rows() {
            if self.w[i] == 0.0 {
                continue;
            }
            let eta = self.eta(beta, i);
            acc += self.w[i] * (softplus(eta) - f64::from(self.y[i]) * eta);
        }
        let ridge: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        acc / self.total_weight + 0.5 * self.penalty * ridge
    }

    fn separates(&self, beta: &DVector<f64>) -> bool {
        (0..self.x.n_rows()).all(|i| {
            let eta = self.eta(beta, i);
            self.w[i] == 0.0 || if self.y[i] == 1 { eta > 0.0 } else { eta < 0.0 }
        })
    }

    fn gradient_hessian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = beta.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut xt = vec![0.0; d];
        xt[0] = 1.0;
        for i in 0..self.x.n_rows() {
            let wi = self.w[i];
            if wi == 0.0 {
                continue;
            }
            xt[1..].copy_from_slice(self.x.row(i));
            let p = sigmoid(self.eta(beta, i));
            let r = wi * (p - f64::from(self.y[i]));
            let v = wi * p * (1.0 - p);
            for j in 0..d {
                g[j] += r * xt[j];
                for l in 0..=j {
                    h[(j, l)] += v * xt[j] * xt[l];
                }
            }
        }
        for j in 0..d {
            for l in 0..j {
                h[(l, j)] = h[(j, l)];
            }
        }
        g /= self.total_weight;
        h /= self.total_weight;
        for j in 1..d {
            g[j] += self.penalty * beta[j];
            h[(j, j)] += self.penalty;
        }
        (g, h)
    }
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    // near-singular Hessian: add a small diagonal ridge
    let scale = h.diagonal().amax().max(1e-300);
    let jittered = h + DMatrix::identity(h.nrows(), h.ncols()) * (scale * 1e-10);
    jittered.cholesky().map(|ch| ch.solve(g))
}

const SEPARATION_LOSS: f64 = 1e-9;
const SEPARATION_COEF_NORM: f64 = 1e6;

/// Fit `P(label = 1 | x)` by maximizing the (weighted, optionally ridge
/// penalized) log-likelihood. An intercept is always included.
pub fn fit_logistic(
    x: &FeatureMatrix,
    labels: &[u8],
    weights: Option<&[f64]>,
    config: &FitConfig,
) -> Result<ScoreModel> {
    config.validate()?;
    let n = x.n_rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels".into(),
            got: labels.len(),
            expected: n,
        });
    }
    let unit;
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    what: "weights".into(),
                    got: w.len(),
                    expected: n,
                });
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParameter(
                    "weights must be finite and non-negative".into(),
                ));
            }
            w
        }
        None => {
            unit = vec![1.0; n];
            &unit[..]
        }
    };
    if let Some(&bad) = labels.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidParameter(format!("labels must be 0/1, got {bad}")));
    }
    let (mut w_pos, mut w_neg) = (0.0, 0.0);
    for (&yi, &wi) in labels.iter().zip(w) {
        if yi == 1 {
            w_pos += wi;
        } else {
            w_neg += wi;
        }
    }
    if w_pos <= 0.0 || w_neg <= 0.0 {
        return Err(Error::DegenerateClasses);
    }
    let total_weight = w_pos + w_neg;
    let obj = Objective {
        x,
        y: labels,
        w,
        total_weight,
        penalty: config.l2_penalty,
    };

    let d = x.n_features() + 1;
    let mut beta = DVector::zeros(d);
    beta[0] = logit(w_pos / total_weight);
    let mut loss = obj.loss(&beta);

    for iter in 0..=config.max_iterations {
        let (g, h) = obj.gradient_hessian(&beta);
        let gnorm = g.amax();
        let coef_norm = beta.iter().skip(1).map(|b| b * b).sum::<f64>().sqrt();
        if config.l2_penalty == 0.0 && (loss < SEPARATION_LOSS || coef_norm > SEPARATION_COEF_NORM)
        {
            return Err(Error::Separation {
                iterations: iter,
                coef_norm,
            });
        }
        if gnorm <= config.gradient_tolerance {
            // a linear predictor that classifies every row correctly means
            // the likelihood has no finite maximizer
            if config.l2_penalty == 0.0 && obj.separates(&beta) {
                return Err(Error::Separation {
                    iterations: iter,
                    coef_norm,
                });
            }
            let names: Vec<&str> = x.names().iter().map(String::as_str).collect();
            let mut model = ScoreModel::new(&names, beta.as_slice()[1..].to_vec(), beta[0])?;
            model.diagnostics = Some(FitDiagnostics {
                iterations: iter,
                gradient_norm: gnorm,
                loss,
                n_rows: n,
                total_weight,
            });
            return Ok(model);
        }
        if iter == config.max_iterations {
            return Err(Error::NonConvergence {
                iterations: iter,
                gradient_norm: gnorm,
            });
        }
        let Some(step) = solve_newton(&h, &g) else {
            return Err(Error::NonConvergence {
                iterations: iter,
                gradient_norm: gnorm,
            });
        };
        // step halving until the loss does not increase
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta - &step * t;
            let cand_loss = obj.loss(&candidate);
            if cand_loss <= loss + 1e-15 * loss.abs().max(1.0) {
                beta = candidate;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // loss is flat to rounding; take the full step and let the gradient decide
            beta -= &step;
            loss = obj.loss(&beta);
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(z: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_columns(&["z"], &[z.to_vec()]).unwrap()
    }

    #[test]
    fn score_examples() {
        let zero = ScoreModel::new(&["z"], vec![0.0], 0.0).unwrap();
        assert_eq!(zero.score(&[3.0]).unwrap(), 0.5);
        let big = ScoreModel::new(&["z"], vec![0.0], 10.0).unwrap();
        assert!(big.score(&[0.0]).unwrap() > 0.9999);
        let unit = ScoreModel::new(&["z"], vec![1.0], 0.0).unwrap();
        assert!((unit.score(&[-0.5]).unwrap() - 0.377_540_668_798_145_4).abs() < 1e-15);
        assert!(matches!(
            unit.score(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_monotone_in_intercept() {
        let mut prev = 0.0;
        for b in [-5.0, -1.0, 0.0, 1.0, 5.0, 10.0] {
            let s = ScoreModel::new(&["z"], vec![1.0], b).unwrap().score(&[0.0]).unwrap();
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(threshold_labels(&[0.2, 0.8], 0.5), vec![0, 1]);
        assert_eq!(threshold_labels(&[0.0, 0.3, 1.0], 0.0), vec![1, 1, 1]);
        assert_eq!(threshold_labels(&[0.4, 0.5], 0.5), vec![0, 1]);
    }

    #[test]
    fn all_equal_labels_rejected() {
        let x = design(&[0.1, 0.2, 0.3]);
        assert!(matches!(
            fit_logistic(&x, &[1, 1, 1], None, &FitConfig::default()),
            Err(Error::DegenerateClasses)
        ));
        // a class whose only rows have zero weight counts as absent
        assert!(matches!(
            fit_logistic(&x, &[1, 0, 1], Some(&[1.0, 0.0, 1.0]), &FitConfig::default()),
            Err(Error::DegenerateClasses)
        ));
    }

    #[test]
    fn complete_separation_detected() {
        let x = design(&[-2.0, -1.0, 1.0, 2.0]);
        let err = fit_logistic(&x, &[0, 0, 1, 1], None, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
        let cfg = FitConfig {
            l2_penalty: 0.1,
            ..FitConfig::default()
        };
        assert!(fit_logistic(&x, &[0, 0, 1, 1], None, &cfg).is_ok());
    }

    #[test]
    fn non_convergence_reports_gradient() {
        let x = design(&[-1.0, 0.5, 1.0, -0.3, 2.0]);
        let cfg = FitConfig {
            max_iterations: 1,
            gradient_tolerance: 1e-15,
            l2_penalty: 0.0,
        };
        match fit_logistic(&x, &[0, 1, 0, 1, 1], None, &cfg) {
            Err(Error::NonConvergence { gradient_norm, .. }) => assert!(gradient_norm > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicated_half_weights_match_unit_weights() {
        let z = [-1.2, -0.4, 0.3, 0.9, 1.7, -0.1, 0.6];
        let y = [0, 1, 0, 1, 1, 0, 0];
        let single = fit_logistic(&design(&z), &y, None, &FitConfig::default()).unwrap();
        let z2: Vec<f64> = z.iter().chain(z.iter()).copied().collect();
        let y2: Vec<u8> = y.iter().chain(y.iter()).copied().collect();
        let w2 = vec![0.5; z2.len()];
        let double = fit_logistic(&design(&z2), &y2, Some(&w2), &FitConfig::default()).unwrap();
        assert!((single.intercept - double.intercept).abs() < 1e-9);
        assert!((single.coefficients[0] - double.coefficients[0]).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let m = ScoreModel::new(&["z", "a"], vec![1.0, -0.25], -0.5).unwrap();
        assert_eq!(ScoreModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
