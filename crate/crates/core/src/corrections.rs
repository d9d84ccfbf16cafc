//! Fairness corrections: reweighing the training data toward base-rate
//! parity, and post-processing scores toward parity in the generalized
//! FNR/FPR by mixing each group with its trivial predictor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{default_thresholds, roc_curve, Curve, EvalMode};
use crate::datagen::{generate, Dataset, GeneratorParams};
use crate::error::{io_err, Error, Result};
use crate::estimators::{mean, Positivity};
use crate::fairness::{bootstrap_stderr, group_metrics, BootstrapConfig, CellTable, Event, Var};
use crate::glm::{threshold_labels, FitConfig, ScoreModel};
use crate::nuisance::{attach_scores, fit_observational_weighted, score_dataset, NuisanceModels, NuisanceOptions};

/// Substream reserved for randomized score mixing.
const MIXING_STREAM: u64 = 0x006d_6978;

/// Cell weights `w(a, y) = P(A=a) P(Y=y) / P(A=a, Y=y)`. Weights average to
/// one over the rows they were estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweighPlan {
    /// Indexed `[a][y]`.
    pub weights: [[f64; 2]; 2],
    pub cell_counts: [[usize; 2]; 2],
}

impl ReweighPlan {
    pub fn weight(&self, a: u8, y: u8) -> f64 {
        self.weights[a as usize][y as usize]
    }

    pub fn row_weights(&self, ds: &Dataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.weight(ds.a[i], ds.y[i])).collect()
    }
}

fn plan_from_counts(counts: [[usize; 2]; 2]) -> Result<ReweighPlan> {
    for a in 0..2 {
        for y in 0..2 {
            if counts[a][y] == 0 {
                return Err(Error::EmptyConditioningSet(format!(
                    "reweighing cell (a = {a}, y = {y}) is empty"
                )));
            }
        }
    }
    let n: usize = counts.iter().flatten().sum();
    let n = n as f64;
    let pa = |a: usize| (counts[a][0] + counts[a][1]) as f64 / n;
    let py = |y: usize| (counts[0][y] + counts[1][y]) as f64 / n;
    let mut weights = [[0.0; 2]; 2];
    for a in 0..2 {
        for y in 0..2 {
            weights[a][y] = pa(a) * py(y) / (counts[a][y] as f64 / n);
        }
    }
    Ok(ReweighPlan {
        weights,
        cell_counts: counts,
    })
}

/// Reweighing plan from the empirical `(a, y)` frequencies of `ds`.
pub fn kamiran_weights(ds: &Dataset) -> Result<ReweighPlan> {
    let mut counts = [[0usize; 2]; 2];
    for i in 0..ds.len() {
        counts[ds.a[i] as usize][ds.y[i] as usize] += 1;
    }
    plan_from_counts(counts)
}

/// Weighted mean of `values` over rows of group `g`.
pub fn weighted_group_rate(ds: &Dataset, values: &[u8], weights: &[f64], g: u8) -> Result<f64> {
    for (what, len) in [("values", values.len()), ("weights", weights.len())] {
        if len != ds.len() {
            return Err(Error::LengthMismatch {
                what: what.into(),
                got: len,
                expected: ds.len(),
            });
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..ds.len()).filter(|&i| ds.a[i] == g) {
        num += weights[i] * f64::from(values[i]);
        den += weights[i];
    }
    if den <= 0.0 {
        return Err(Error::EmptyConditioningSet(format!("group a = {g} has no weight")));
    }
    Ok(num / den)
}

/// Observational model fitted with reweighing training weights.
pub fn fit_reweighed(
    ds: &Dataset,
    plan: &ReweighPlan,
    include_treatment: bool,
    config: &FitConfig,
) -> Result<ScoreModel> {
    fit_observational_weighted(ds, include_treatment, Some(&plan.row_weights(ds)), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    /// `rate(group 1) - rate(group 0)`.
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweighRow {
    pub c: f64,
    pub k: f64,
    pub n: usize,
    pub seed: u64,
    pub plan: ReweighPlan,
    /// Per-group rates indexed by group.
    pub obs_before: [f64; 2],
    pub obs_after: [f64; 2],
    pub cf_before: [f64; 2],
    pub cf_after: [f64; 2],
    pub disparity_obs_before: Disparity,
    pub disparity_obs_after: Disparity,
    pub disparity_cf_before: Disparity,
    pub disparity_cf_after: Disparity,
}

/// The four disparities from a contingency table, with weights re-estimated
/// from that same table.
fn table_disparities(tab: &CellTable) -> Option<[f64; 4]> {
    let mut counts = [[0usize; 2]; 2];
    for a in 0..2u8 {
        for y in 0..2u8 {
            counts[a as usize][y as usize] =
                tab.count(Event::is(Var::A, a).and(Var::Y, y)) as usize;
        }
    }
    let plan = plan_from_counts(counts).ok()?;
    let rate = |a: u8, var: Var, weighted: bool| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..2u8 {
            let w = if weighted { plan.weight(a, y) } else { 1.0 };
            let cell = Event::is(Var::A, a).and(Var::Y, y);
            num += w * tab.count(cell.and(var, 1)) as f64;
            den += w * tab.count(cell) as f64;
        }
        num / den
    };
    let d = |var, weighted| rate(1, var, weighted) - rate(0, var, weighted);
    Some([
        d(Var::Y, false),
        d(Var::Y, true),
        d(Var::Y0, false),
        d(Var::Y0, true),
    ])
}

/// Group base rates before and after reweighing, observed and counterfactual.
pub fn reweigh_rates(ds: &Dataset, bootstrap: &BootstrapConfig) -> Result<ReweighRow> {
    let plan = kamiran_weights(ds)?;
    let y0 = ds.y0()?;
    let ones = vec![1.0; ds.len()];
    let w = plan.row_weights(ds);
    let rates = |values: &[u8], weights: &[f64]| -> Result<[f64; 2]> {
        Ok([
            weighted_group_rate(ds, values, weights, 0)?,
            weighted_group_rate(ds, values, weights, 1)?,
        ])
    };
    let obs_before = rates(&ds.y, &ones)?;
    let obs_after = rates(&ds.y, &w)?;
    let cf_before = rates(y0, &ones)?;
    let cf_after = rates(y0, &w)?;
    let tab = CellTable::from_oracle(ds, None)?;
    let se: Vec<f64> = (0..4)
        .map(|j| bootstrap_stderr(&tab, bootstrap, |t| table_disparities(t).map(|d| d[j])))
        .collect();
    let disp = |r: [f64; 2], j: usize| Disparity {
        value: r[1] - r[0],
        stderr: se[j],
    };
    let params = ds.params.unwrap_or_default();
    Ok(ReweighRow {
        c: params.c,
        k: params.k,
        n: ds.len(),
        seed: params.seed,
        plan,
        obs_before,
        obs_after,
        cf_before,
        cf_after,
        disparity_obs_before: disp(obs_before, 0),
        disparity_obs_after: disp(obs_after, 1),
        disparity_cf_before: disp(cf_before, 2),
        disparity_cf_after: disp(cf_after, 3),
    })
}

/// One row per `k`; every grid point shares `seed`, so the draws of
/// `z, a, y0, y1` coincide across the grid.
pub fn reweigh_experiment(k_grid: &[f64], c: f64, n: usize, seed: u64) -> Result<Vec<ReweighRow>> {
    if k_grid.is_empty() {
        return Err(Error::InvalidParameter("k grid is empty".into()));
    }
    let bootstrap = BootstrapConfig {
        resamples: BootstrapConfig::default().resamples,
        seed,
    };
    k_grid
        .par_iter()
        .map(|&k| {
            let ds = generate(&GeneratorParams::new(n, c, k, seed))?;
            reweigh_rates(&ds, &bootstrap)
        })
        .collect()
}

/// Generalized error rates of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedRates {
    pub gfnr: f64,
    pub gfpr: f64,
}

impl GeneralizedRates {
    /// Expected rates after replacing each score by `mu` with probability `lambda`.
    pub fn mixed(&self, mu: f64, lambda: f64) -> GeneralizedRates {
        GeneralizedRates {
            gfnr: (1.0 - lambda) * self.gfnr + lambda * (1.0 - mu),
            gfpr: (1.0 - lambda) * self.gfpr + lambda * mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub grid_step: f64,
    pub evaluated: usize,
    /// `(dGFNR)^2 + (dGFPR)^2` at the chosen mixing rates.
    pub objective: f64,
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingPolicy {
    /// Mixing rate per group.
    pub lambda: [f64; 2],
    /// Trivial prediction (observed base rate) per group.
    pub mu: [f64; 2],
    /// Observed generalized rates of the unmixed scores on the calibration data.
    pub calibration_rates: [GeneralizedRates; 2],
    pub diagnostics: SearchDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedScores {
    pub scores: Vec<f64>,
    /// True for rows whose score was replaced.
    pub mixed: Vec<bool>,
}

impl MixingPolicy {
    pub fn expected_rates(&self, g: u8) -> GeneralizedRates {
        let g = g as usize;
        self.calibration_rates[g].mixed(self.mu[g], self.lambda[g])
    }

    /// Deterministic expected scores `(1 - lambda) s + lambda mu`.
    pub fn expected_scores(&self, groups: &[u8], scores: &[f64]) -> Result<Vec<f64>> {
        check_len("scores", scores.len(), groups.len())?;
        Ok(groups
            .iter()
            .zip(scores)
            .map(|(&g, &s)| {
                let (l, m) = (self.lambda[g as usize], self.mu[g as usize]);
                (1.0 - l) * s + l * m
            })
            .collect())
    }

    /// Randomized mixing: one uniform draw per row, in row order, from the
    /// mixing substream of `seed`.
    pub fn apply(&self, groups: &[u8], scores: &[f64], seed: u64) -> Result<MixedScores> {
        check_len("scores", scores.len(), groups.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(MIXING_STREAM);
        let mut out = Vec::with_capacity(scores.len());
        let mut mixed = Vec::with_capacity(scores.len());
        for (&g, &s) in groups.iter().zip(scores) {
            let u: f64 = rng.random();
            let m = u < self.lambda[g as usize];
            out.push(if m { self.mu[g as usize] } else { s });
            mixed.push(m);
        }
        Ok(MixedScores { scores: out, mixed })
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessOptions {
    pub grid_step: f64,
    /// Skip the search and use these mixing rates.
    pub forced_lambda: Option<[f64; 2]>,
}

impl Default for PostprocessOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            forced_lambda: None,
        }
    }
}

/// Observed base rate and generalized rates per group.
fn calibration_stats(ds: &Dataset, scores: &[f64]) -> Result<([f64; 2], [GeneralizedRates; 2])> {
    check_len("scores", scores.len(), ds.len())?;
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidParameter(format!(
            "scores must lie in [0, 1], got {s}"
        )));
    }
    let mut mu = [0.0; 2];
    let mut rates = [GeneralizedRates { gfnr: 0.0, gfpr: 0.0 }; 2];
    for g in 0..=1u8 {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.a[i] == g).collect();
        if rows.is_empty() {
            return Err(Error::EmptyConditioningSet(format!("group a = {g} is empty")));
        }
        let pos: Vec<f64> = rows.iter().filter(|&&i| ds.y[i] == 1).map(|&i| 1.0 - scores[i]).collect();
        let neg: Vec<f64> = rows.iter().filter(|&&i| ds.y[i] == 0).map(|&i| scores[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "group a = {g} has a degenerate base rate"
            )));
        }
        mu[g as usize] = pos.len() as f64 / rows.len() as f64;
        rates[g as usize] = GeneralizedRates {
            gfnr: mean(&pos),
            gfpr: mean(&neg),
        };
    }
    Ok((mu, rates))
}

fn objective(rates: &[GeneralizedRates; 2], mu: &[f64; 2], lambda: [f64; 2]) -> f64 {
    let r0 = rates[0].mixed(mu[0], lambda[0]);
    let r1 = rates[1].mixed(mu[1], lambda[1]);
    (r1.gfnr - r0.gfnr).powi(2) + (r1.gfpr - r0.gfpr).powi(2)
}

/// Choose per-group mixing rates on calibration data by grid search over
/// `(lambda_0, lambda_1)`, minimizing the squared observed generalized-rate
/// disparities; ties go to the smaller `lambda_0 + lambda_1`.
pub fn fit_mixing(ds: &Dataset, scores: &[f64], opts: &PostprocessOptions) -> Result<MixingPolicy> {
    let (mu, rates) = calibration_stats(ds, scores)?;
    if let Some(l) = opts.forced_lambda {
        if l.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "mixing rates must lie in [0, 1], got {l:?}"
            )));
        }
        return Ok(MixingPolicy {
            lambda: l,
            mu,
            calibration_rates: rates,
            diagnostics: SearchDiagnostics {
                grid_step: opts.grid_step,
                evaluated: 1,
                objective: objective(&rates, &mu, l),
                forced: true,
            },
        });
    }
    if !(opts.grid_step > 0.0 && opts.grid_step <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid step must lie in (0, 1], got {}",
            opts.grid_step
        )));
    }
    let steps = (1.0 / opts.grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let mut best: Option<([f64; 2], f64)> = None;
    for &l0 in &grid {
        for &l1 in &grid {
            let l = [l0, l1];
            let obj = objective(&rates, &mu, l);
            let better = match best {
                None => true,
                Some((bl, bo)) => {
                    obj < bo - 1e-15 || ((obj - bo).abs() <= 1e-15 && l0 + l1 < bl[0] + bl[1])
                }
            };
            if better {
                best = Some((l, obj));
            }
        }
    }
    let (lambda, obj) = best.expect("grid is non-empty");
    Ok(MixingPolicy {
        lambda,
        mu,
        calibration_rates: rates,
        diagnostics: SearchDiagnostics {
            grid_step: 1.0 / steps as f64,
            evaluated: grid.len() * grid.len(),
            objective: obj,
            forced: false,
        },
    })
}

/// Fit mixing rates on `ds` and apply randomized mixing to its scores.
pub fn postprocess_equalized_odds(
    ds: &Dataset,
    scores: &[f64],
    seed: u64,
    opts: &PostprocessOptions,
) -> Result<(MixedScores, MixingPolicy)> {
    let policy = fit_mixing(ds, scores, opts)?;
    let mixed = policy.apply(&ds.a, scores, seed)?;
    Ok((mixed, policy))
}

/// One row of the generalized-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub group: String,
    pub method: String,
    #[serde(rename = "cGFNR")]
    pub cgfnr: Option<f64>,
    #[serde(rename = "cGFPR")]
    pub cgfpr: Option<f64>,
    #[serde(rename = "oGFNR")]
    pub ogfnr: Option<f64>,
    #[serde(rename = "oGFPR")]
    pub ogfpr: Option<f64>,
}

/// Counterfactual (via `cf_mode`) and observational generalized rates per group.
pub fn generalized_rate_rows(
    ds: &Dataset,
    nuisances: Option<&crate::nuisance::NuisanceSet>,
    scores: &[f64],
    cf_mode: EvalMode,
    positivity: &Positivity,
    method: &str,
) -> Result<Vec<TableRow>> {
    let labels = threshold_labels(scores, 0.5);
    let gm = group_metrics(ds, nuisances, scores, &labels, cf_mode, positivity)?;
    Ok(gm
        .iter()
        .rev()
        .map(|g| TableRow {
            group: format!("A={}", g.group),
            method: method.to_string(),
            cgfnr: g.gfnr_cf.as_ref().map(|e| e.value),
            cgfpr: g.gfpr_cf.as_ref().map(|e| e.value),
            ogfnr: g.gfnr_obs.as_ref().map(|e| e.value),
            ogfpr: g.gfpr_obs.as_ref().map(|e| e.value),
        })
        .collect())
}

/// Write rows with header `group,method,cGFNR,cGFPR,oGFNR,oGFPR`.
pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessOutcome {
    pub c: f64,
    pub k: f64,
    pub n: usize,
    pub seed: u64,
    pub policy: MixingPolicy,
    /// Fraction of test rows whose score was replaced, per group.
    pub mixed_fraction: [f64; 2],
    pub table: Vec<TableRow>,
    /// Per-group DR ROC curves of the unmixed and mixed test scores.
    pub roc_before: Vec<Curve>,
    pub roc_after: Vec<Curve>,
}

impl PostprocessOutcome {
    pub fn cell(&self, group: u8, method: &str) -> Option<&TableRow> {
        let g = format!("A={group}");
        self.table.iter().find(|r| r.group == g && r.method == method)
    }
}

pub const METHOD_ORIGINAL: &str = "Original";
pub const METHOD_POSTPROC: &str = "Post-Proc.";

/// One post-processing run on generated data: nuisances and the
/// counterfactual scorer are fitted on the train half, mixing rates are
/// chosen on the train half, and all rates are reported on the test half.
pub fn postprocess_run(params: &GeneratorParams, fit: &FitConfig, positivity: &Positivity) -> Result<PostprocessOutcome> {
    let ds = generate(params)?;
    let (_, train, test) = ds.split(0.5, params.seed)?;
    let models = NuisanceModels::fit(
        &train,
        NuisanceOptions {
            include_treatment: false,
            shift_correction: false,
            clip: positivity.clip,
            group_blind: false,
        },
        fit,
    )?;
    let train_scores = score_dataset(&models.counterfactual, &train)?;
    let policy = fit_mixing(&train, &train_scores, &PostprocessOptions::default())?;

    let ns = attach_scores(&test, &models)?;
    let scores = ns.cf_scores.clone();
    let mixed = policy.apply(&test.a, &scores, params.seed)?;

    let mut table = generalized_rate_rows(&test, Some(&ns), &scores, EvalMode::Dr, positivity, METHOD_ORIGINAL)?;
    table.extend(generalized_rate_rows(
        &test,
        Some(&ns),
        &mixed.scores,
        EvalMode::Dr,
        positivity,
        METHOD_POSTPROC,
    )?);

    let thresholds = default_thresholds();
    let mut roc_before = Vec::new();
    let mut roc_after = Vec::new();
    let mut mixed_fraction = [0.0; 2];
    for g in 0..=1u8 {
        let rows: Vec<usize> = (0..test.len()).filter(|&i| test.a[i] == g).collect();
        let sub = test.select(&rows);
        let sub_ns = ns.select(&rows);
        let pick = |s: &[f64]| rows.iter().map(|&i| s[i]).collect::<Vec<_>>();
        let name = format!("A={g}");
        roc_before.push(roc_curve(EvalMode::Dr, &sub, Some(&sub_ns), &pick(&scores), &thresholds, positivity, &name)?);
        roc_after.push(roc_curve(EvalMode::Dr, &sub, Some(&sub_ns), &pick(&mixed.scores), &thresholds, positivity, &name)?);
        mixed_fraction[g as usize] =
            rows.iter().filter(|&&i| mixed.mixed[i]).count() as f64 / rows.len() as f64;
    }
    Ok(PostprocessOutcome {
        c: params.c,
        k: params.k,
        n: params.n,
        seed: params.seed,
        policy,
        mixed_fraction,
        table,
        roc_before,
        roc_after,
    })
}

/// Post-processing runs over the `(c, k)` grid.
pub fn postprocess_experiment(
    c_grid: &[f64],
    k_grid: &[f64],
    n: usize,
    seed: u64,
    positivity: &Positivity,
) -> Result<Vec<PostprocessOutcome>> {
    if c_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::InvalidParameter("c and k grids must be non-empty".into()));
    }
    let points: Vec<(f64, f64)> = c_grid
        .iter()
        .flat_map(|&c| k_grid.iter().map(move |&k| (c, k)))
        .collect();
    points
        .par_iter()
        .map(|&(c, k)| postprocess_run(&GeneratorParams::new(n, c, k, seed), &FitConfig::default(), positivity))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Row;

    fn rows(spec: &[(u8, u8)]) -> Dataset {
        let r: Vec<Row> = spec
            .iter()
            .map(|&(a, y)| Row { z: 0.0, a, y0: Some(y), y1: Some(0), t: 0, y })
            .collect();
        Dataset::from_rows(&r).unwrap()
    }

    #[test]
    fn hand_table_weight() {
        // P(A=1,Y=1) = 3/8, P(A=1) = P(Y=1) = 1/2
        let ds = rows(&[(1, 1), (1, 1), (1, 1), (1, 0), (0, 1), (0, 0), (0, 0), (0, 0)]);
        let plan = kamiran_weights(&ds).unwrap();
        assert!((plan.weight(1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((plan.weight(1, 0) - 2.0).abs() < 1e-15);
        let w = plan.row_weights(&ds);
        assert!((w.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn independent_cells_give_unit_weights() {
        let ds = rows(&[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let plan = kamiran_weights(&ds).unwrap();
        assert!(plan.weights.iter().flatten().all(|&w| w == 1.0));
    }

    #[test]
    fn empty_cell_is_rejected() {
        let ds = rows(&[(0, 0), (0, 1), (1, 0)]);
        assert!(kamiran_weights(&ds).is_err());
    }

    #[test]
    fn paper_data_weighted_rates_equal() {
        let ds = generate(&GeneratorParams::new(100_000, 0.1, 1.6, 3)).unwrap();
        let plan = kamiran_weights(&ds).unwrap();
        let w = plan.row_weights(&ds);
        let r0 = weighted_group_rate(&ds, &ds.y, &w, 0).unwrap();
        let r1 = weighted_group_rate(&ds, &ds.y, &w, 1).unwrap();
        assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn reweighed_fit_solves_weighted_score_equations() {
        let ds = generate(&GeneratorParams::new(20_000, 0.1, 1.6, 5)).unwrap();
        let plan = kamiran_weights(&ds).unwrap();
        let model = fit_reweighed(&ds, &plan, false, &FitConfig::default()).unwrap();
        let s = score_dataset(&model, &ds).unwrap();
        let w = plan.row_weights(&ds);
        // the intercept and group score equations give equal weighted means
        // of residuals within each group
        for g in 0..=1u8 {
            let r: f64 = (0..ds.len())
                .filter(|&i| ds.a[i] == g)
                .map(|i| w[i] * (f64::from(ds.y[i]) - s[i]))
                .sum();
            assert!(r.abs() / ds.len() as f64 <= 1e-8, "group {g}: {r}");
        }
    }

    #[test]
    fn k_zero_disparities_vanish() {
        let rows = reweigh_experiment(&[0.0], 0.1, 50_000, 11).unwrap();
        let r = &rows[0];
        for d in [
            r.disparity_obs_before,
            r.disparity_obs_after,
            r.disparity_cf_before,
            r.disparity_cf_after,
        ] {
            assert!(d.value.abs() < 3.0 * d.stderr + 1e-12, "{d:?}");
        }
        assert!(r.disparity_obs_after.value.abs() < 1e-12);
    }

    fn mixing_data() -> (Dataset, Vec<f64>) {
        let ds = generate(&GeneratorParams::new(10_000, 0.1, 1.6, 8)).unwrap();
        let s = ds.z.iter().map(|&z| crate::glm::sigmoid(z - 0.5)).collect();
        (ds, s)
    }

    #[test]
    fn zero_mixing_is_identity() {
        let (ds, s) = mixing_data();
        let opts = PostprocessOptions { forced_lambda: Some([0.0, 0.0]), ..Default::default() };
        let (m, p) = postprocess_equalized_odds(&ds, &s, 1, &opts).unwrap();
        assert_eq!(m.scores, s);
        assert!(m.mixed.iter().all(|&b| !b));
        assert_eq!(p.expected_rates(0), p.calibration_rates[0]);
    }

    #[test]
    fn full_mixing_gives_trivial_rates() {
        let (ds, s) = mixing_data();
        let opts = PostprocessOptions { forced_lambda: Some([1.0, 1.0]), ..Default::default() };
        let (m, p) = postprocess_equalized_odds(&ds, &s, 1, &opts).unwrap();
        for i in 0..ds.len() {
            assert_eq!(m.scores[i], p.mu[ds.a[i] as usize]);
        }
        let (_, rates) = calibration_stats(&ds, &m.scores).unwrap();
        for g in 0..2 {
            assert!((rates[g].gfnr - (1.0 - p.mu[g])).abs() < 1e-12);
            assert!((rates[g].gfpr - p.mu[g]).abs() < 1e-12);
        }
    }

    #[test]
    fn search_equalizes_expected_rates() {
        let (ds, s) = mixing_data();
        let p = fit_mixing(&ds, &s, &PostprocessOptions::default()).unwrap();
        assert_eq!(p.diagnostics.evaluated, 101 * 101);
        let (r0, r1) = (p.expected_rates(0), p.expected_rates(1));
        assert!((r0.gfnr - r1.gfnr).abs() < 0.02);
        assert!((r0.gfpr - r1.gfpr).abs() < 0.02);
    }

    #[test]
    fn unmixed_rows_keep_their_scores() {
        let (ds, s) = mixing_data();
        let (m, _) = postprocess_equalized_odds(&ds, &s, 4, &PostprocessOptions::default()).unwrap();
        for i in 0..ds.len() {
            if !m.mixed[i] {
                assert_eq!(m.scores[i], s[i]);
            }
        }
        let (m2, _) = postprocess_equalized_odds(&ds, &s, 4, &PostprocessOptions::default()).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn degenerate_group_rejected() {
        let ds = rows(&[(0, 0), (0, 1), (1, 0), (1, 0)]);
        assert!(fit_mixing(&ds, &[0.5; 4], &PostprocessOptions::default()).is_err());
        let ds = rows(&[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(fit_mixing(&ds, &[0.5, 1.5, 0.5, 0.5], &PostprocessOptions::default()).is_err());
    }
}
