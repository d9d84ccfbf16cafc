//! PR, ROC and calibration curves under four evaluation modes:
//!
//! * `observational`: against the observed outcome `y` on all rows;
//! * `control`: against `y` on the control rows (`t = 0`) only;
//! * `dr`: against `Y0` through the doubly-robust pseudo-outcomes;
//! * `oracle`: against the true `y0` column (synthetic data only).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{io_err, Error, Result};
use crate::estimators::{
    calibration_from_terms, dr_negative_rate, dr_positive_rate, precision_from_terms,
    pseudo_outcomes, Estimate, EstimatorKind, Metric, Positivity,
};
use crate::glm::threshold_labels;
use crate::nuisance::NuisanceSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Observational,
    Control,
    Dr,
    Oracle,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::Observational,
        EvalMode::Control,
        EvalMode::Dr,
        EvalMode::Oracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Observational => "observational",
            EvalMode::Control => "control",
            EvalMode::Dr => "dr",
            EvalMode::Oracle => "oracle",
        }
    }

    fn kind(&self) -> EstimatorKind {
        match self {
            EvalMode::Observational => EstimatorKind::Observational,
            EvalMode::Control => EstimatorKind::Control,
            EvalMode::Dr => EstimatorKind::Dr,
            EvalMode::Oracle => EstimatorKind::Oracle,
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "observational" => EvalMode::Observational,
            "control" => EvalMode::Control,
            "dr" => EvalMode::Dr,
            "oracle" => EvalMode::Oracle,
            other => return Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        })
    }
}

/// A metric together with the classifier output it is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum ModeMetric<'a> {
    BaseRate,
    Tpr(&'a [u8]),
    Fpr(&'a [u8]),
    Precision(&'a [u8]),
    CalibrationBin { scores: &'a [f64], r1: f64, r2: f64 },
    /// Generalized FNR, `E[1 - s | outcome = 1]`.
    Gfnr(&'a [f64]),
    /// Generalized FPR, `E[s | outcome = 0]`.
    Gfpr(&'a [f64]),
}

impl ModeMetric<'_> {
    fn input_len(&self) -> Option<usize> {
        match self {
            ModeMetric::BaseRate => None,
            ModeMetric::Tpr(l) | ModeMetric::Fpr(l) | ModeMetric::Precision(l) => Some(l.len()),
            ModeMetric::CalibrationBin { scores, .. } => Some(scores.len()),
            ModeMetric::Gfnr(s) | ModeMetric::Gfpr(s) => Some(s.len()),
        }
    }
}

/// Per-row outcome terms for one evaluation mode. For `dr` the terms are the
/// pseudo-outcomes over all rows; for the other modes they are the 0/1
/// outcome restricted to the mode's rows.
#[derive(Debug, Clone)]
pub struct ModeData {
    mode: EvalMode,
    rows: Option<Vec<usize>>,
    terms: Vec<f64>,
}

impl ModeData {
    pub fn new(
        mode: EvalMode,
        ds: &Dataset,
        nuisances: Option<&NuisanceSet>,
        positivity: &Positivity,
    ) -> Result<Self> {
        let as_f64 = |c: &[u8]| c.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        Ok(match mode {
            EvalMode::Observational => ModeData {
                mode,
                rows: None,
                terms: as_f64(&ds.y),
            },
            EvalMode::Oracle => ModeData {
                mode,
                rows: None,
                terms: as_f64(ds.y0()?),
            },
            EvalMode::Control => {
                let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.t[i] == 0).collect();
                if rows.is_empty() {
                    return Err(Error::EmptyConditioningSet(
                        "control population is empty".into(),
                    ));
                }
                let terms = rows.iter().map(|&i| f64::from(ds.y[i])).collect();
                ModeData {
                    mode,
                    rows: Some(rows),
                    terms,
                }
            }
            EvalMode::Dr => {
                let ns = nuisances.ok_or(Error::MissingNuisances)?;
                ModeData {
                    mode,
                    rows: None,
                    terms: pseudo_outcomes(ds, ns, positivity)?.0,
                }
            }
        })
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    fn n_rows(&self) -> usize {
        self.terms.len()
    }

    fn restrict<T: Copy>(&self, col: &[T]) -> Vec<T> {
        match &self.rows {
            None => col.to_vec(),
            Some(rows) => rows.iter().map(|&i| col[i]).collect(),
        }
    }

    /// Mean of `w` over rows whose (binary) outcome equals `outcome`.
    fn conditional_mean(&self, w: &[f64], outcome: f64, metric: Metric) -> Result<Estimate> {
        let sel: Vec<f64> = w
            .iter()
            .zip(&self.terms)
            .filter(|(_, &o)| o == outcome)
            .map(|(&w, _)| w)
            .collect();
        if sel.is_empty() {
            return Err(Error::EmptyConditioningSet(format!(
                "{metric:?} under {} mode: no rows with outcome {outcome}",
                self.mode
            )));
        }
        Estimate::from_terms(metric, self.mode.kind(), &sel)
    }

    pub fn eval(&self, metric: ModeMetric<'_>, full_len: usize) -> Result<Estimate> {
        if let Some(len) = metric.input_len() {
            if len != full_len {
                return Err(Error::LengthMismatch {
                    what: "metric input".into(),
                    got: len,
                    expected: full_len,
                });
            }
        }
        let kind = self.mode.kind();
        let dr = self.mode == EvalMode::Dr;
        let labels_f64 = |l: &[u8]| self.restrict(l).iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        match metric {
            ModeMetric::BaseRate => Estimate::from_terms(Metric::BaseRate, kind, &self.terms),
            ModeMetric::Tpr(l) => {
                let w = labels_f64(l);
                if dr {
                    dr_positive_rate(&self.terms, &w, Metric::Tpr)
                } else {
                    self.conditional_mean(&w, 1.0, Metric::Tpr)
                }
            }
            ModeMetric::Fpr(l) => {
                let w = labels_f64(l);
                if dr {
                    dr_negative_rate(&self.terms, &w, Metric::Fpr)
                } else {
                    self.conditional_mean(&w, 0.0, Metric::Fpr)
                }
            }
            ModeMetric::Precision(l) => precision_from_terms(&self.terms, &self.restrict(l), kind),
            ModeMetric::CalibrationBin { scores, r1, r2 } => {
                if !(r1 < r2) {
                    return Err(Error::InvalidParameter(format!(
                        "calibration bin needs r1 < r2, got [{r1}, {r2}]"
                    )));
                }
                calibration_from_terms(&self.terms, &self.restrict(scores), r1, r2, kind)
            }
            ModeMetric::Gfnr(s) => {
                let miss: Vec<f64> = self.restrict(s).iter().map(|v| 1.0 - v).collect();
                if dr {
                    dr_positive_rate(&self.terms, &miss, Metric::Gfnr)
                } else {
                    self.conditional_mean(&miss, 1.0, Metric::Gfnr)
                }
            }
            ModeMetric::Gfpr(s) => {
                let s = self.restrict(s);
                if dr {
                    dr_negative_rate(&self.terms, &s, Metric::Gfpr)
                } else {
                    self.conditional_mean(&s, 0.0, Metric::Gfpr)
                }
            }
        }
    }
}

/// Evaluate `metric` under `mode`.
pub fn metric_under_mode(
    metric: ModeMetric<'_>,
    mode: EvalMode,
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    positivity: &Positivity,
) -> Result<Estimate> {
    let data = ModeData::new(mode, ds, nuisances, positivity)?;
    debug_assert!(data.n_rows() <= ds.len());
    data.eval(metric, ds.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Pr,
    Roc,
    Calibration,
}

impl CurveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::Pr => "pr",
            CurveKind::Roc => "roc",
            CurveKind::Calibration => "calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Threshold (PR/ROC) or bin midpoint (calibration).
    pub param: f64,
    pub x: f64,
    pub y: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub model: String,
    pub mode: EvalMode,
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Trapezoidal area under the curve, integrating over `x`.
    pub fn area(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.x, p.y)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
            .sum()
    }

    pub fn point_at(&self, param: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| (p.param - param).abs() < 1e-12)
    }
}

/// `steps + 1` evenly spaced thresholds on [0, 1].
pub fn threshold_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// The default 101-point threshold grid.
pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(100)
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("threshold list is empty".into()));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("thresholds must be sorted".into()));
    }
    Ok(())
}

fn keep_or_skip(
    res: Result<Option<CurvePoint>>,
    mode: EvalMode,
    param: f64,
) -> Result<Option<CurvePoint>> {
    match res {
        Err(e) if e.is_missing_value() => {
            log::debug!("{mode} point at {param} omitted: {e}");
            Ok(None)
        }
        other => other,
    }
}

fn label_curve(
    kind: CurveKind,
    data: &ModeData,
    scores: &[f64],
    thresholds: &[f64],
    model: &str,
) -> Result<Curve> {
    check_thresholds(thresholds)?;
    let n = scores.len();
    let points: Vec<Option<CurvePoint>> = thresholds
        .par_iter()
        .map(|&thr| {
            let labels = threshold_labels(scores, thr);
            let res = (|| {
                let tpr = data.eval(ModeMetric::Tpr(&labels), n)?;
                let (x, y) = match kind {
                    CurveKind::Pr => (tpr.value, data.eval(ModeMetric::Precision(&labels), n)?),
                    _ => (data.eval(ModeMetric::Fpr(&labels), n)?.value, tpr),
                };
                Ok(Some(CurvePoint {
                    param: thr,
                    x,
                    y: y.value,
                    ci_low: y.stderr.is_finite().then_some(y.ci_low),
                    ci_high: y.stderr.is_finite().then_some(y.ci_high),
                }))
            })();
            keep_or_skip(res, data.mode(), thr)
        })
        .collect::<Result<_>>()?;
    Ok(Curve {
        model: model.to_string(),
        mode: data.mode(),
        kind,
        points: points.into_iter().flatten().collect(),
    })
}

/// Precision (y) against TPR (x) for each threshold.
pub fn pr_curve(
    mode: EvalMode,
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    thresholds: &[f64],
    positivity: &Positivity,
    model: &str,
) -> Result<Curve> {
    let data = ModeData::new(mode, ds, nuisances, positivity)?;
    check_scores(scores, ds)?;
    label_curve(CurveKind::Pr, &data, scores, thresholds, model)
}

/// TPR (y) against FPR (x) for each threshold.
pub fn roc_curve(
    mode: EvalMode,
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    thresholds: &[f64],
    positivity: &Positivity,
    model: &str,
) -> Result<Curve> {
    let data = ModeData::new(mode, ds, nuisances, positivity)?;
    check_scores(scores, ds)?;
    label_curve(CurveKind::Roc, &data, scores, thresholds, model)
}

/// Outcome mean per equal-width score bin on [0, 1]; empty bins are omitted.
pub fn calibration_curve(
    mode: EvalMode,
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    n_bins: usize,
    positivity: &Positivity,
    model: &str,
) -> Result<Curve> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be >= 1".into()));
    }
    let data = ModeData::new(mode, ds, nuisances, positivity)?;
    check_scores(scores, ds)?;
    let points: Vec<Option<CurvePoint>> = (0..n_bins)
        .into_par_iter()
        .map(|b| {
            let r1 = b as f64 / n_bins as f64;
            let r2 = (b + 1) as f64 / n_bins as f64;
            let mid = 0.5 * (r1 + r2);
            let res = data
                .eval(ModeMetric::CalibrationBin { scores, r1, r2 }, scores.len())
                .map(|e| {
                    Some(CurvePoint {
                        param: mid,
                        x: mid,
                        y: e.value,
                        ci_low: e.stderr.is_finite().then_some(e.ci_low),
                        ci_high: e.stderr.is_finite().then_some(e.ci_high),
                    })
                });
            keep_or_skip(res, mode, mid)
        })
        .collect::<Result<_>>()?;
    Ok(Curve {
        model: model.to_string(),
        mode,
        kind: CurveKind::Calibration,
        points: points.into_iter().flatten().collect(),
    })
}

fn check_scores(scores: &[f64], ds: &Dataset) -> Result<()> {
    if scores.len() != ds.len() {
        return Err(Error::LengthMismatch {
            what: "scores".into(),
            got: scores.len(),
            expected: ds.len(),
        });
    }
    Ok(())
}

/// PR, ROC and calibration curves for one scorer under each requested mode.
#[allow(clippy::too_many_arguments)]
pub fn curve_family(
    modes: &[EvalMode],
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    thresholds: &[f64],
    n_bins: usize,
    positivity: &Positivity,
    model: &str,
) -> Result<Vec<Curve>> {
    let mut out = Vec::with_capacity(modes.len() * 3);
    for &mode in modes {
        out.push(pr_curve(mode, ds, nuisances, scores, thresholds, positivity, model)?);
        out.push(roc_curve(mode, ds, nuisances, scores, thresholds, positivity, model)?);
        out.push(calibration_curve(mode, ds, nuisances, scores, n_bins, positivity, model)?);
    }
    Ok(out)
}

/// Largest absolute y-gap between two curves at shared parameter values.
pub fn max_pointwise_gap(a: &Curve, b: &Curve) -> Option<f64> {
    a.points
        .iter()
        .filter_map(|p| b.point_at(p.param).map(|q| (p.y - q.y).abs()))
        .reduce(f64::max)
}

/// Write curves with header `model,mode,curve,param,x,y,ci_low,ci_high`.
pub fn write_curves_csv(path: &Path, curves: &[Curve]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["model", "mode", "curve", "param", "x", "y", "ci_low", "ci_high"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.model.clone(),
                c.mode.to_string(),
                c.kind.as_str().to_string(),
                p.param.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                opt(p.ci_low),
                opt(p.ci_high),
            ])?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorParams};

    fn small() -> (Dataset, NuisanceSet, GeneratorParams) {
        let p = GeneratorParams::new(20_000, 0.1, 1.6, 21);
        let ds = generate(&p).unwrap();
        let ns = NuisanceSet::oracle(&ds, &p);
        (ds, ns, p)
    }

    #[test]
    fn control_mode_matches_oracle_on_control_rows() {
        let (ds, _, _) = small();
        let ctrl_rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.t[i] == 0).collect();
        let ctrl = ds.select(&ctrl_rows);
        let pos = Positivity::default();
        let c = metric_under_mode(ModeMetric::BaseRate, EvalMode::Control, &ds, None, &pos).unwrap();
        let o = metric_under_mode(ModeMetric::BaseRate, EvalMode::Oracle, &ctrl, None, &pos).unwrap();
        assert_eq!(c.value, o.value);
        let labels = threshold_labels(&ds.z, 0.0);
        let ctrl_labels = threshold_labels(&ctrl.z, 0.0);
        let c = metric_under_mode(ModeMetric::Tpr(&labels), EvalMode::Control, &ds, None, &pos).unwrap();
        let o = metric_under_mode(ModeMetric::Tpr(&ctrl_labels), EvalMode::Oracle, &ctrl, None, &pos)
            .unwrap();
        assert_eq!(c.value, o.value);
    }

    #[test]
    fn all_positive_oracle_tpr_is_one() {
        let (ds, _, _) = small();
        let ones = vec![1u8; ds.len()];
        let e = metric_under_mode(ModeMetric::Tpr(&ones), EvalMode::Oracle, &ds, None, &Positivity::default())
            .unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn dr_mode_requires_nuisances() {
        let (ds, _, _) = small();
        assert!(matches!(
            metric_under_mode(ModeMetric::BaseRate, EvalMode::Dr, &ds, None, &Positivity::default()),
            Err(Error::MissingNuisances)
        ));
    }

    #[test]
    fn perfect_scorer_has_unit_precision() {
        let (ds, _, _) = small();
        let scores: Vec<f64> = ds.y0().unwrap().iter().map(|&v| f64::from(v)).collect();
        let thr = [0.01, 0.25, 0.5, 0.99, 1.0];
        let c = pr_curve(EvalMode::Oracle, &ds, None, &scores, &thr, &Positivity::default(), "m").unwrap();
        assert_eq!(c.points.len(), thr.len());
        assert!(c.points.iter().all(|p| p.y == 1.0));
    }

    #[test]
    fn threshold_zero_endpoints() {
        let (ds, ns, _) = small();
        let pos = Positivity::default();
        let thr = default_thresholds();
        for mode in EvalMode::ALL {
            let pr = pr_curve(mode, &ds, Some(&ns), &ns.cf_scores, &thr, &pos, "cf").unwrap();
            let base = metric_under_mode(ModeMetric::BaseRate, mode, &ds, Some(&ns), &pos).unwrap();
            let p0 = pr.point_at(0.0).unwrap();
            assert_eq!(p0.x, 1.0);
            assert!((p0.y - base.value).abs() < 1e-12, "{mode}");
            let roc = roc_curve(mode, &ds, Some(&ns), &ns.cf_scores, &thr, &pos, "cf").unwrap();
            let r0 = roc.point_at(0.0).unwrap();
            assert_eq!((r0.x, r0.y), (1.0, 1.0));
            let r1 = roc.point_at(1.0).unwrap();
            assert_eq!((r1.x, r1.y), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_scorer_single_bin() {
        let (ds, _, _) = small();
        let m = ds.y.iter().map(|&v| f64::from(v)).sum::<f64>() / ds.len() as f64;
        let scores = vec![m; ds.len()];
        let c = calibration_curve(EvalMode::Observational, &ds, None, &scores, 10, &Positivity::default(), "c")
            .unwrap();
        assert_eq!(c.points.len(), 1);
        assert!((c.points[0].y - m).abs() < 1e-12);
        assert!((c.points[0].x - m).abs() < 0.05);
    }

    #[test]
    fn curves_invariant_to_row_permutation() {
        let (ds, ns, _) = small();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let (ds2, ns2) = (ds.select(&perm), ns.select(&perm));
        let pos = Positivity::default();
        let thr = threshold_grid(20);
        for mode in EvalMode::ALL {
            let a = roc_curve(mode, &ds, Some(&ns), &ns.cf_scores, &thr, &pos, "m").unwrap();
            let b = roc_curve(mode, &ds2, Some(&ns2), &ns2.cf_scores, &thr, &pos, "m").unwrap();
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        let (ds, _, _) = small();
        assert!(pr_curve(EvalMode::Oracle, &ds, None, &ds.z, &[0.5, 0.1], &Positivity::default(), "m").is_err());
        assert!(pr_curve(EvalMode::Oracle, &ds, None, &ds.z, &[], &Positivity::default(), "m").is_err());
    }

    #[test]
    fn area_of_diagonal() {
        let c = Curve {
            model: "m".into(),
            mode: EvalMode::Oracle,
            kind: CurveKind::Roc,
            points: (0..=10)
                .map(|i| {
                    let v = i as f64 / 10.0;
                    CurvePoint { param: 1.0 - v, x: v, y: v, ci_low: None, ci_high: None }
                })
                .collect(),
        };
        assert!((c.area() - 0.5).abs() < 1e-12);
    }
}
