//! Observational and counterfactual group-fairness metrics, and empirical
//! evaluation of the balance / independence conditions under which an
//! observational parity carries over to its counterfactual counterpart.
//!
//! The balance and independence conditions involve joint laws of both
//! potential outcomes, so they are evaluated only on oracle datasets. All of
//! them are functions of the 64-cell contingency table over
//! `(a, y, y0, y1, t, y_hat)`; the nonparametric bootstrap resamples that
//! table multinomially, which is equivalent in law to resampling rows.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{EvalMode, ModeData, ModeMetric};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{mean_var, Estimate, Positivity};
use crate::nuisance::NuisanceSet;

/// Significance multiple used to declare a condition violated.
pub const SIGNIFICANCE_STDERRS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    A,
    Y,
    Y0,
    Y1,
    T,
    Yhat,
}

impl Var {
    fn bit(self) -> u8 {
        match self {
            Var::A => 1,
            Var::Y => 2,
            Var::Y0 => 4,
            Var::Y1 => 8,
            Var::T => 16,
            Var::Yhat => 32,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Var::A => "A",
            Var::Y => "Y",
            Var::Y0 => "Y0",
            Var::Y1 => "Y1",
            Var::T => "T",
            Var::Yhat => "Yhat",
        }
    }
}

/// A conjunction of variable assignments. Contradictory conjunctions are empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    mask: u8,
    value: u8,
    empty: bool,
}

impl Event {
    pub const ANY: Event = Event {
        mask: 0,
        value: 0,
        empty: false,
    };

    pub fn is(var: Var, v: u8) -> Event {
        Event::ANY.and(var, v)
    }

    pub fn and(self, var: Var, v: u8) -> Event {
        let bit = var.bit();
        let val = if v != 0 { bit } else { 0 };
        let clash = self.mask & bit != 0 && self.value & bit != val;
        Event {
            mask: self.mask | bit,
            value: self.value | val,
            empty: self.empty || clash,
        }
    }

    pub fn with(self, other: Event) -> Event {
        let shared = self.mask & other.mask;
        Event {
            mask: self.mask | other.mask,
            value: self.value | other.value,
            empty: self.empty || other.empty || (self.value & shared) != (other.value & shared),
        }
    }

    fn matches(&self, cell: usize) -> bool {
        !self.empty && (cell as u8) & self.mask == self.value
    }
}

/// Counts over the 64 joint cells of `(a, y, y0, y1, t, y_hat)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellTable {
    counts: [u64; 64],
    n: u64,
}

impl CellTable {
    /// Tabulate an oracle dataset. Without predicted labels every row gets
    /// `y_hat = 1` (the sure event).
    pub fn from_oracle(ds: &Dataset, predicted: Option<&[u8]>) -> Result<Self> {
        let (y0, y1) = (ds.y0()?, ds.y1()?);
        if let Some(p) = predicted {
            if p.len() != ds.len() {
                return Err(Error::LengthMismatch {
                    what: "predicted labels".into(),
                    got: p.len(),
                    expected: ds.len(),
                });
            }
        }
        let mut counts = [0u64; 64];
        for i in 0..ds.len() {
            let yhat = predicted.map_or(1, |p| p[i]);
            let mut code = 0u8;
            for (var, v) in [
                (Var::A, ds.a[i]),
                (Var::Y, ds.y[i]),
                (Var::Y0, y0[i]),
                (Var::Y1, y1[i]),
                (Var::T, ds.t[i]),
                (Var::Yhat, yhat),
            ] {
                if v != 0 {
                    code |= var.bit();
                }
            }
            counts[code as usize] += 1;
        }
        Ok(Self {
            counts,
            n: ds.len() as u64,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, e: Event) -> u64 {
        (0..64).filter(|&c| e.matches(c)).map(|c| self.counts[c]).sum()
    }

    /// `P(e)`; `None` on an empty table.
    pub fn prob(&self, e: Event) -> Option<f64> {
        self.cond(e, Event::ANY)
    }

    /// `P(e | given)`; `None` when `given` has no mass.
    pub fn cond(&self, e: Event, given: Event) -> Option<f64> {
        let d = self.count(given);
        (d > 0).then(|| self.count(e.with(given)) as f64 / d as f64)
    }

    /// Multinomial resample of the same size (conditional-binomial draws).
    pub fn resample(&self, rng: &mut ChaCha8Rng) -> CellTable {
        let mut out = [0u64; 64];
        let mut remaining_n = self.n;
        let mut remaining_mass = self.n;
        for c in 0..64 {
            if remaining_n == 0 || remaining_mass == 0 {
                break;
            }
            let k = self.counts[c];
            if k == 0 {
                continue;
            }
            let p = (k as f64 / remaining_mass as f64).min(1.0);
            let draw = if p >= 1.0 {
                remaining_n
            } else {
                Binomial::new(remaining_n, p)
                    .expect("probability in [0, 1)")
                    .sample(rng)
            };
            out[c] = draw;
            remaining_n -= draw;
            remaining_mass -= k;
        }
        CellTable {
            counts: out,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 200,
            seed: 0,
        }
    }
}

/// Bootstrap stderr of `stat`; resamples where `stat` is undefined are skipped.
pub(crate) fn bootstrap_stderr<F>(tab: &CellTable, cfg: &BootstrapConfig, stat: F) -> f64
where
    F: Fn(&CellTable) -> Option<f64> + Sync,
{
    let draws: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            stat(&tab.resample(&mut rng))
        })
        .collect();
    if draws.len() < 2 {
        return f64::NAN;
    }
    mean_var(&draws).1.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BalanceCondition {
    #[serde(rename = "balBP")]
    BalBp,
    #[serde(rename = "balPP")]
    BalPp,
    #[serde(rename = "balEO")]
    BalEo,
}

impl fmt::Display for BalanceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BalanceCondition::BalBp => "balBP",
            BalanceCondition::BalPp => "balPP",
            BalanceCondition::BalEo => "balEO",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceResidual {
    pub condition: BalanceCondition,
    pub group: u8,
    pub y: u8,
    /// Predicted-label stratum for balPP.
    pub yhat: Option<u8>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub residual: Option<f64>,
    pub stderr: f64,
    /// False when some conditional probability had an empty conditioning event.
    pub estimable: bool,
    /// Empirical check of the positivity-like assumptions.
    pub assumptions_hold: bool,
    /// `|residual| > 3 stderr`.
    pub significant: bool,
}

impl BalanceResidual {
    fn build(
        condition: BalanceCondition,
        group: u8,
        y: u8,
        yhat: Option<u8>,
        tab: &CellTable,
        cfg: &BootstrapConfig,
        terms: impl Fn(&CellTable) -> Option<(f64, f64)> + Sync,
        assumptions: bool,
    ) -> Self {
        let point = terms(tab);
        let stderr = match point {
            Some(_) => bootstrap_stderr(tab, cfg, |t| terms(t).map(|(l, r)| l - r)),
            None => f64::NAN,
        };
        let residual = point.map(|(l, r)| l - r);
        BalanceResidual {
            condition,
            group,
            y,
            yhat,
            lhs: point.map(|p| p.0),
            rhs: point.map(|p| p.1),
            residual,
            stderr,
            estimable: point.is_some(),
            assumptions_hold: assumptions,
            significant: residual
                .is_some_and(|r| stderr.is_finite() && r.abs() > SIGNIFICANCE_STDERRS * stderr),
        }
    }
}

/// Left and right sides of the base-rate balance condition within stratum `g`.
fn bal_bp_terms(tab: &CellTable, g: Event, a: u8, y: u8) -> Option<(f64, f64)> {
    let ga = g.and(Var::A, a);
    let y1 = Event::is(Var::Y1, y);
    let y0 = Event::is(Var::Y0, y);
    let t1 = Event::is(Var::T, 1);
    let lhs = tab.cond(y1, g)? * tab.cond(t1, y1.with(g))?
        - tab.cond(y1, ga)? * tab.cond(t1, y1.with(ga))?;
    let rhs = tab.cond(y0, g)? * (tab.cond(t1, y0.with(g))? - tab.cond(t1, y0.with(ga))?);
    Some((lhs, rhs))
}

fn control_positivity(tab: &CellTable, g: Event, a: u8, y: u8) -> bool {
    let strat = g.and(Var::A, a).and(Var::Y0, y);
    tab.count(strat.and(Var::T, 0)) > 0
}

/// Base-rate balance residual for group `a` and outcome value `y`.
pub fn balance_bp_table(tab: &CellTable, a: u8, y: u8, cfg: &BootstrapConfig) -> BalanceResidual {
    BalanceResidual::build(
        BalanceCondition::BalBp,
        a,
        y,
        None,
        tab,
        cfg,
        |t| bal_bp_terms(t, Event::ANY, a, y),
        control_positivity(tab, Event::ANY, a, y),
    )
}

pub fn balance_bp(
    ds: &Dataset,
    a: u8,
    y: u8,
    cfg: &BootstrapConfig,
) -> Result<BalanceResidual> {
    Ok(balance_bp_table(&CellTable::from_oracle(ds, None)?, a, y, cfg))
}

/// Predictive-parity balance residual: the base-rate condition with every
/// probability additionally conditioned on `y_hat`.
pub fn balance_pp_table(
    tab: &CellTable,
    a: u8,
    y: u8,
    yhat: u8,
    cfg: &BootstrapConfig,
) -> BalanceResidual {
    let g = Event::is(Var::Yhat, yhat);
    let mut r = BalanceResidual::build(
        BalanceCondition::BalPp,
        a,
        y,
        Some(yhat),
        tab,
        cfg,
        |t| bal_bp_terms(t, g, a, y),
        control_positivity(tab, g, a, y),
    );
    r.condition = BalanceCondition::BalPp;
    r
}

pub fn balance_pp(
    ds: &Dataset,
    predicted: &[u8],
    a: u8,
    y: u8,
    yhat: u8,
    cfg: &BootstrapConfig,
) -> Result<BalanceResidual> {
    Ok(balance_pp_table(
        &CellTable::from_oracle(ds, Some(predicted))?,
        a,
        y,
        yhat,
        cfg,
    ))
}

fn bal_eo_terms(tab: &CellTable, a: u8, y: u8) -> Option<(f64, f64)> {
    let ga = Event::is(Var::A, a);
    let yh = Event::is(Var::Yhat, 1);
    let y1 = Event::is(Var::Y1, y);
    let y0 = Event::is(Var::Y0, y);
    let yobs = Event::is(Var::Y, y);
    let t1 = Event::is(Var::T, 1);
    let t0 = Event::is(Var::T, 0);

    let p_y = tab.prob(yobs)?;
    let p_y_a = tab.cond(yobs, ga)?;
    if p_y == 0.0 || p_y_a == 0.0 {
        return None;
    }
    let lhs = tab.cond(yh, y1)? * tab.cond(t1, yh.with(y1))? * tab.prob(y1)? / p_y
        - tab.cond(yh, y1.with(ga))? * tab.cond(t1, yh.with(y1).with(ga))? * tab.cond(y1, ga)?
            / p_y_a;
    let rhs = tab.cond(yh, y0)?
        * (tab.cond(t0, yh.with(y0).with(ga))? * tab.cond(y0, ga)? / p_y_a
            - tab.cond(t0, yh.with(y0))? * tab.prob(y0)? / p_y);
    Some((lhs, rhs))
}

/// Equalized-odds balance residual for group `a` and outcome value `y`.
pub fn balance_eo_table(tab: &CellTable, a: u8, y: u8, cfg: &BootstrapConfig) -> BalanceResidual {
    let ga = Event::is(Var::A, a);
    let assumptions = tab.count(ga.and(Var::Y, y)) > 0
        && (0..=1).all(|yh| control_positivity(tab, Event::is(Var::Yhat, yh), a, y));
    BalanceResidual::build(
        BalanceCondition::BalEo,
        a,
        y,
        None,
        tab,
        cfg,
        |t| bal_eo_terms(t, a, y),
        assumptions,
    )
}

pub fn balance_eo(
    ds: &Dataset,
    predicted: &[u8],
    a: u8,
    y: u8,
    cfg: &BootstrapConfig,
) -> Result<BalanceResidual> {
    Ok(balance_eo_table(
        &CellTable::from_oracle(ds, Some(predicted))?,
        a,
        y,
        cfg,
    ))
}

/// One conditional-independence statement `target ⊥ A | conditioning`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Independence {
    pub family: &'static str,
    pub target: Vec<Var>,
    pub given: Vec<Var>,
}

impl Independence {
    fn new(family: &'static str, target: &[Var], given: &[Var]) -> Self {
        Self {
            family,
            target: target.to_vec(),
            given: given.to_vec(),
        }
    }

    pub fn statement(&self) -> String {
        let tgt: Vec<&str> = self.target.iter().map(|v| v.name()).collect();
        let tgt = if tgt.len() == 1 {
            tgt[0].to_string()
        } else {
            format!("({})", tgt.join(", "))
        };
        if self.given.is_empty() {
            format!("{tgt} ⊥ A")
        } else {
            let g: Vec<&str> = self.given.iter().map(|v| v.name()).collect();
            format!("{tgt} ⊥ A | {}", g.join(", "))
        }
    }
}

/// The independence lists that suffice for each observational parity to
/// imply its counterfactual counterpart.
pub fn independence_conditions() -> Vec<Independence> {
    use Var::*;
    vec![
        Independence::new("indBP", &[T], &[Y0]),
        Independence::new("indBP", &[Y1, T], &[]),
        Independence::new("indPP", &[T], &[Y0, Yhat]),
        Independence::new("indPP", &[Y1, T], &[Yhat]),
        Independence::new("indEO", &[Y], &[]),
        Independence::new("indEO", &[Y0], &[]),
        Independence::new("indEO", &[T], &[Yhat, Y0]),
        Independence::new("indEO", &[Y1, Yhat, T], &[]),
    ]
}

fn assignments(vars: &[Var]) -> Vec<Event> {
    (0..(1u32 << vars.len()))
        .map(|bits| {
            vars.iter()
                .enumerate()
                .fold(Event::ANY, |e, (j, &v)| e.and(v, ((bits >> j) & 1) as u8))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceEntry {
    pub family: String,
    pub statement: String,
    /// `max |P(v | s, a) - P(v | s)|` over strata `s`, groups `a` and target values `v`.
    pub max_deviation: Option<f64>,
    pub stderr: f64,
    pub pass: bool,
    /// Conditioning strata (with group) that had no rows.
    pub empty_strata: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub entries: Vec<IndependenceEntry>,
}

impl IndependenceReport {
    pub fn get(&self, statement: &str) -> Option<&IndependenceEntry> {
        self.entries.iter().find(|e| e.statement == statement)
    }
}

fn evaluate_independence(
    tab: &CellTable,
    cond: &Independence,
    cfg: &BootstrapConfig,
) -> IndependenceEntry {
    let strata = assignments(&cond.given);
    let values = assignments(&cond.target);
    let mut empty = 0;
    let mut best: Option<(f64, Event, Event)> = None;
    for &s in &strata {
        for a in 0..=1u8 {
            let sa = s.and(Var::A, a);
            if tab.count(sa) == 0 {
                empty += 1;
                continue;
            }
            for &v in &values {
                let (Some(with), Some(without)) = (tab.cond(v, sa), tab.cond(v, s)) else {
                    continue;
                };
                let d = with - without;
                if best.is_none_or(|(b, _, _)| d.abs() > b.abs()) {
                    best = Some((d, v, sa));
                }
            }
        }
    }
    let (max_deviation, stderr) = match best {
        None => (None, f64::NAN),
        Some((d, v, sa)) => {
            let s = Event {
                mask: sa.mask & !Var::A.bit(),
                value: sa.value & !Var::A.bit(),
                empty: false,
            };
            let se = bootstrap_stderr(tab, cfg, |t| Some(t.cond(v, sa)? - t.cond(v, s)?));
            (Some(d.abs()), se)
        }
    };
    IndependenceEntry {
        family: cond.family.to_string(),
        statement: cond.statement(),
        max_deviation,
        stderr,
        pass: max_deviation
            .is_some_and(|d| d <= SIGNIFICANCE_STDERRS * stderr || d == 0.0),
        empty_strata: empty,
    }
}

pub fn independence_report_table(tab: &CellTable, cfg: &BootstrapConfig) -> IndependenceReport {
    IndependenceReport {
        entries: independence_conditions()
            .iter()
            .map(|c| evaluate_independence(tab, c, cfg))
            .collect(),
    }
}

pub fn independence_report(
    ds: &Dataset,
    predicted: &[u8],
    cfg: &BootstrapConfig,
) -> Result<IndependenceReport> {
    Ok(independence_report_table(
        &CellTable::from_oracle(ds, Some(predicted))?,
        cfg,
    ))
}

/// Every balance residual: balBP and balEO for `a, y ∈ {0, 1}`, balPP
/// additionally for `y_hat ∈ {0, 1}`.
pub fn all_balance_residuals(tab: &CellTable, cfg: &BootstrapConfig) -> Vec<BalanceResidual> {
    let mut out = Vec::new();
    for a in 0..=1 {
        for y in 0..=1 {
            out.push(balance_bp_table(tab, a, y, cfg));
        }
    }
    for a in 0..=1 {
        for y in 0..=1 {
            for yhat in 0..=1 {
                out.push(balance_pp_table(tab, a, y, yhat, cfg));
            }
        }
    }
    for a in 0..=1 {
        for y in 0..=1 {
            out.push(balance_eo_table(tab, a, y, cfg));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: u8,
    pub n: usize,
    pub base_rate_obs: Option<Estimate>,
    pub base_rate_cf: Option<Estimate>,
    pub tpr_obs: Option<Estimate>,
    pub tpr_cf: Option<Estimate>,
    pub fpr_obs: Option<Estimate>,
    pub fpr_cf: Option<Estimate>,
    pub precision_obs: Option<Estimate>,
    pub precision_cf: Option<Estimate>,
    pub gfnr_obs: Option<Estimate>,
    pub gfpr_obs: Option<Estimate>,
    pub gfnr_cf: Option<Estimate>,
    pub gfpr_cf: Option<Estimate>,
}

pub const GROUP_METRIC_NAMES: [&str; 12] = [
    "base_rate_obs",
    "base_rate_cf",
    "tpr_obs",
    "tpr_cf",
    "fpr_obs",
    "fpr_cf",
    "precision_obs",
    "precision_cf",
    "gfnr_obs",
    "gfpr_obs",
    "gfnr_cf",
    "gfpr_cf",
];

impl GroupMetrics {
    pub fn get(&self, name: &str) -> Result<Option<&Estimate>> {
        Ok(match name {
            "base_rate_obs" => self.base_rate_obs.as_ref(),
            "base_rate_cf" => self.base_rate_cf.as_ref(),
            "tpr_obs" => self.tpr_obs.as_ref(),
            "tpr_cf" => self.tpr_cf.as_ref(),
            "fpr_obs" => self.fpr_obs.as_ref(),
            "fpr_cf" => self.fpr_cf.as_ref(),
            "precision_obs" => self.precision_obs.as_ref(),
            "precision_cf" => self.precision_cf.as_ref(),
            "gfnr_obs" => self.gfnr_obs.as_ref(),
            "gfpr_obs" => self.gfpr_obs.as_ref(),
            "gfnr_cf" => self.gfnr_cf.as_ref(),
            "gfpr_cf" => self.gfpr_cf.as_ref(),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown group metric `{other}`"
                )))
            }
        })
    }
}

fn missing_ok(r: Result<Estimate>) -> Result<Option<Estimate>> {
    match r {
        Ok(e) => Ok(Some(e)),
        Err(e) if e.is_missing_value() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-group observational and counterfactual metrics. Counterfactual entries
/// use `cf_mode` (`Dr` or `Oracle`); generalized rates substitute the score
/// for the predicted label.
pub fn group_metrics(
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    predicted: &[u8],
    cf_mode: EvalMode,
    positivity: &Positivity,
) -> Result<Vec<GroupMetrics>> {
    if !matches!(cf_mode, EvalMode::Dr | EvalMode::Oracle) {
        return Err(Error::InvalidParameter(format!(
            "counterfactual metrics need dr or oracle mode, got {cf_mode}"
        )));
    }
    for (what, len) in [("scores", scores.len()), ("predicted labels", predicted.len())] {
        if len != ds.len() {
            return Err(Error::LengthMismatch {
                what: what.into(),
                got: len,
                expected: ds.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(2);
    for g in 0..=1u8 {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.a[i] == g).collect();
        if rows.is_empty() {
            return Err(Error::EmptyConditioningSet(format!("group a = {g} is empty")));
        }
        let sub = ds.select(&rows);
        let sub_ns = nuisances.map(|n| n.select(&rows));
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = rows.iter().map(|&i| predicted[i]).collect();
        let n = sub.len();
        let obs = ModeData::new(EvalMode::Observational, &sub, None, positivity)?;
        let cf = ModeData::new(cf_mode, &sub, sub_ns.as_ref(), positivity)?;
        let both = |m: ModeMetric<'_>| -> Result<(Option<Estimate>, Option<Estimate>)> {
            Ok((missing_ok(obs.eval(m, n))?, missing_ok(cf.eval(m, n))?))
        };
        let (base_rate_obs, base_rate_cf) = both(ModeMetric::BaseRate)?;
        let (tpr_obs, tpr_cf) = both(ModeMetric::Tpr(&l))?;
        let (fpr_obs, fpr_cf) = both(ModeMetric::Fpr(&l))?;
        let (precision_obs, precision_cf) = both(ModeMetric::Precision(&l))?;
        let (gfnr_obs, gfnr_cf) = both(ModeMetric::Gfnr(&s))?;
        let (gfpr_obs, gfpr_cf) = both(ModeMetric::Gfpr(&s))?;
        out.push(GroupMetrics {
            group: g,
            n,
            base_rate_obs,
            base_rate_cf,
            tpr_obs,
            tpr_cf,
            fpr_obs,
            fpr_cf,
            precision_obs,
            precision_cf,
            gfnr_obs,
            gfpr_obs,
            gfnr_cf,
            gfpr_cf,
        });
    }
    Ok(out)
}

/// `value(group 1) - value(group 0)`; `None` when either entry is missing.
pub fn disparity(metrics: &[GroupMetrics], name: &str) -> Result<Option<f64>> {
    if metrics.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "disparity needs exactly two groups, got {}",
            metrics.len()
        )));
    }
    let find = |g: u8| {
        metrics
            .iter()
            .find(|m| m.group == g)
            .ok_or_else(|| Error::InvalidParameter(format!("group {g} missing")))
    };
    let (g0, g1) = (find(0)?, find(1)?);
    Ok(match (g1.get(name)?, g0.get(name)?) {
        (Some(a), Some(b)) => Some(a.value - b.value),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub threshold: f64,
    pub cf_mode: EvalMode,
    pub groups: Vec<GroupMetrics>,
    pub disparities: BTreeMap<String, Option<f64>>,
    pub residuals: Vec<BalanceResidual>,
    pub independence: Option<IndependenceReport>,
}

/// Group metrics and disparities; balance residuals and independence checks
/// when `balance` is set (requires an oracle dataset).
pub fn audit(
    ds: &Dataset,
    nuisances: Option<&NuisanceSet>,
    scores: &[f64],
    threshold: f64,
    cf_mode: EvalMode,
    positivity: &Positivity,
    balance: Option<&BootstrapConfig>,
) -> Result<FairnessReport> {
    let predicted = crate::glm::threshold_labels(scores, threshold);
    let groups = group_metrics(ds, nuisances, scores, &predicted, cf_mode, positivity)?;
    let disparities = GROUP_METRIC_NAMES
        .iter()
        .map(|&n| Ok((n.to_string(), disparity(&groups, n)?)))
        .collect::<Result<_>>()?;
    let (residuals, independence) = match balance {
        None => (Vec::new(), None),
        Some(cfg) => {
            let tab = CellTable::from_oracle(ds, Some(&predicted))?;
            (
                all_balance_residuals(&tab, cfg),
                Some(independence_report_table(&tab, cfg)),
            )
        }
    };
    Ok(FairnessReport {
        threshold,
        cf_mode,
        groups,
        disparities,
        residuals,
        independence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorParams, Row};

    /// All eight (a, y0, y1) combinations with t = y0 xor y1.
    fn symmetric_table() -> Dataset {
        let mut rows = Vec::new();
        for a in 0..=1u8 {
            for y0 in 0..=1u8 {
                for y1 in 0..=1u8 {
                    let t = y0 ^ y1;
                    let y = if t == 1 { y1 } else { y0 };
                    rows.push(Row { z: 0.0, a, y0: Some(y0), y1: Some(y1), t, y });
                }
            }
        }
        Dataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn event_algebra() {
        let e = Event::is(Var::A, 1).and(Var::T, 0);
        assert!(e.matches(0b000001));
        assert!(!e.matches(0b010001));
        assert!(Event::is(Var::A, 1).and(Var::A, 0).empty);
        assert!(Event::is(Var::A, 1).with(Event::is(Var::A, 0)).empty);
    }

    #[test]
    fn symmetric_hand_table_balances_exactly() {
        let ds = symmetric_table();
        let cfg = BootstrapConfig { resamples: 20, seed: 1 };
        for a in 0..=1 {
            for y in 0..=1 {
                let r = balance_bp(&ds, a, y, &cfg).unwrap();
                assert_eq!(r.residual, Some(0.0), "{r:?}");
            }
        }
        let rep = independence_report(&ds, &[1; 8], &cfg).unwrap();
        assert_eq!(rep.get("T ⊥ A | Y0").unwrap().max_deviation, Some(0.0));
        assert_eq!(rep.get("(Y1, T) ⊥ A").unwrap().max_deviation, Some(0.0));
    }

    #[test]
    fn sure_classifier_pp_equals_bp() {
        let ds = generate(&GeneratorParams::new(20_000, 0.1, 1.6, 2)).unwrap();
        let cfg = BootstrapConfig { resamples: 50, seed: 4 };
        for a in 0..=1 {
            for y in 0..=1 {
                let bp = balance_bp(&ds, a, y, &cfg).unwrap();
                let pp = balance_pp(&ds, &vec![1; ds.len()], a, y, 1, &cfg).unwrap();
                assert_eq!(bp.residual, pp.residual);
                assert_eq!(bp.stderr, pp.stderr);
            }
        }
    }

    #[test]
    fn degenerate_classifier_is_inestimable() {
        let ds = generate(&GeneratorParams::new(5_000, 0.1, 1.6, 2)).unwrap();
        let r = balance_eo(&ds, &vec![0; ds.len()], 1, 1, &BootstrapConfig::default()).unwrap();
        assert!(!r.estimable);
        assert_eq!(r.residual, None);
        assert!(!r.significant);
    }

    #[test]
    fn resample_preserves_total() {
        let ds = generate(&GeneratorParams::new(5_000, 0.1, 1.6, 2)).unwrap();
        let tab = CellTable::from_oracle(&ds, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = tab.resample(&mut rng);
        assert_eq!(r.counts.iter().sum::<u64>(), tab.n());
        // cells with no mass stay empty
        for c in 0..64 {
            if tab.counts[c] == 0 {
                assert_eq!(r.counts[c], 0);
            }
        }
    }

    #[test]
    fn residuals_invariant_to_row_permutation() {
        let ds = generate(&GeneratorParams::new(8_000, 0.1, 1.6, 2)).unwrap();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let cfg = BootstrapConfig { resamples: 30, seed: 9 };
        let a = balance_bp(&ds, 1, 1, &cfg).unwrap();
        let b = balance_bp(&ds.select(&perm), 1, 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disparity_of_equal_groups_is_zero() {
        let ds = symmetric_table();
        let scores = vec![0.5; ds.len()];
        let labels = vec![1; ds.len()];
        let gm = group_metrics(&ds, None, &scores, &labels, EvalMode::Oracle, &Positivity::default())
            .unwrap();
        for name in GROUP_METRIC_NAMES {
            assert_eq!(disparity(&gm, name).unwrap(), Some(0.0), "{name}");
        }
        assert!(disparity(&gm[..1], "tpr_obs").is_err());
    }

    #[test]
    fn unit_scores_give_degenerate_generalized_rates() {
        let ds = generate(&GeneratorParams::new(5_000, 0.1, 1.6, 2)).unwrap();
        let ones = vec![1.0; ds.len()];
        let labels = vec![1; ds.len()];
        let gm = group_metrics(&ds, None, &ones, &labels, EvalMode::Oracle, &Positivity::default())
            .unwrap();
        for g in &gm {
            assert_eq!(g.gfnr_obs.as_ref().unwrap().value, 0.0);
            assert_eq!(g.gfpr_obs.as_ref().unwrap().value, 1.0);
        }
    }

    #[test]
    fn control_rows_have_equal_obs_and_cf_base_rates() {
        let ds = generate(&GeneratorParams::new(5_000, 0.1, 1.6, 2)).unwrap();
        let ctrl: Vec<usize> = (0..ds.len()).filter(|&i| ds.t[i] == 0).collect();
        let sub = ds.select(&ctrl);
        let s = vec![0.5; sub.len()];
        let l = vec![1; sub.len()];
        let gm = group_metrics(&sub, None, &s, &l, EvalMode::Oracle, &Positivity::default()).unwrap();
        for g in &gm {
            assert_eq!(
                g.base_rate_obs.as_ref().unwrap().value,
                g.base_rate_cf.as_ref().unwrap().value
            );
        }
    }
}
