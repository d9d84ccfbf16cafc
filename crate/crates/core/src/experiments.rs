//! End-to-end synthetic pipelines: generate, split, fit on the train half,
//! evaluate on the test half.

use serde::{Deserialize, Serialize};

use crate::curves::{curve_family, default_thresholds, max_pointwise_gap, Curve, CurveKind, EvalMode};
use crate::datagen::{generate, Dataset, GeneratorParams};
use crate::error::{Error, Result};
use crate::estimators::{Positivity, PositivityMode};
use crate::fairness::{audit, BootstrapConfig, FairnessReport};
use crate::glm::FitConfig;
use crate::nuisance::{attach_scores, NuisanceModels, NuisanceOptions, NuisanceSet};

pub const OBSERVATIONAL_MODEL: &str = "observational";
pub const COUNTERFACTUAL_MODEL: &str = "counterfactual";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub params: GeneratorParams,
    pub fit: FitConfig,
    pub positivity: Positivity,
    pub train_fraction: f64,
    pub thresholds: Vec<f64>,
    pub n_bins: usize,
    /// Give the observational model the treatment decision as a feature.
    pub include_treatment: bool,
    /// Reweigh the counterfactual model's control-row fit by `1/(1 - pi_hat)`.
    pub shift_correction: bool,
    /// Fit the counterfactual model on `z` alone.
    pub group_blind: bool,
}

impl PipelineConfig {
    /// Pipelines winsorize extreme propensities rather than abort on them.
    pub fn new(params: GeneratorParams) -> Self {
        Self {
            params,
            fit: FitConfig::default(),
            positivity: Positivity {
                clip: 0.01,
                mode: PositivityMode::Winsorize,
            },
            train_fraction: 0.5,
            thresholds: default_thresholds(),
            n_bins: 10,
            include_treatment: false,
            shift_correction: false,
            group_blind: false,
        }
    }
}

/// Fitted models and test-half data shared by the pipelines.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub models: NuisanceModels,
    pub test_nuisances: NuisanceSet,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let ds = generate(&cfg.params)?;
    let (_, train, test) = ds.split(cfg.train_fraction, cfg.params.seed)?;
    let models = NuisanceModels::fit(
        &train,
        NuisanceOptions {
            include_treatment: cfg.include_treatment,
            shift_correction: cfg.shift_correction,
            clip: cfg.positivity.clip,
            group_blind: cfg.group_blind,
        },
        &cfg.fit,
    )?;
    let test_nuisances = attach_scores(&test, &models)?;
    Ok(Prepared {
        train,
        test,
        models,
        test_nuisances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub model: String,
    pub mode: EvalMode,
    pub pr_area: f64,
    pub roc_area: f64,
    /// Largest calibration-curve gap to the oracle-mode curve.
    pub calibration_gap_to_oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvesOutcome {
    pub params: GeneratorParams,
    pub include_treatment: bool,
    pub curves: Vec<Curve>,
    pub summary: Vec<ModeSummary>,
}

impl CurvesOutcome {
    pub fn summary_for(&self, model: &str, mode: EvalMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.model == model && s.mode == mode)
    }

    /// DR calibration is strictly closer to the oracle than observational
    /// calibration is.
    pub fn dr_closest(&self, model: &str) -> Option<bool> {
        let dr = self.summary_for(model, EvalMode::Dr)?.calibration_gap_to_oracle?;
        let obs = self
            .summary_for(model, EvalMode::Observational)?
            .calibration_gap_to_oracle?;
        Some(dr < obs)
    }

    /// True when `mode` ranks the observational model above the
    /// counterfactual model by PR area.
    pub fn observational_ranked_first(&self, mode: EvalMode) -> Option<bool> {
        let o = self.summary_for(OBSERVATIONAL_MODEL, mode)?.pr_area;
        let c = self.summary_for(COUNTERFACTUAL_MODEL, mode)?.pr_area;
        Some(o > c)
    }
}

fn find<'a>(curves: &'a [Curve], model: &str, mode: EvalMode, kind: CurveKind) -> Option<&'a Curve> {
    curves
        .iter()
        .find(|c| c.model == model && c.mode == mode && c.kind == kind)
}

/// Both models' PR, ROC and calibration curves under all four modes.
pub fn curves_run(cfg: &PipelineConfig) -> Result<CurvesOutcome> {
    let prep = prepare(cfg)?;
    let ns = &prep.test_nuisances;
    let obs_scores = ns
        .obs_scores
        .clone()
        .ok_or_else(|| Error::InvalidParameter("observational model missing".into()))?;
    let mut curves = Vec::new();
    for (name, scores) in [
        (OBSERVATIONAL_MODEL, &obs_scores),
        (COUNTERFACTUAL_MODEL, &ns.cf_scores),
    ] {
        curves.extend(curve_family(
            &EvalMode::ALL,
            &prep.test,
            Some(ns),
            scores,
            &cfg.thresholds,
            cfg.n_bins,
            &cfg.positivity,
            name,
        )?);
    }
    let mut summary = Vec::new();
    for model in [OBSERVATIONAL_MODEL, COUNTERFACTUAL_MODEL] {
        let oracle_cal = find(&curves, model, EvalMode::Oracle, CurveKind::Calibration);
        for mode in EvalMode::ALL {
            let area = |k| find(&curves, model, mode, k).map_or(f64::NAN, Curve::area);
            summary.push(ModeSummary {
                model: model.to_string(),
                mode,
                pr_area: area(CurveKind::Pr),
                roc_area: area(CurveKind::Roc),
                calibration_gap_to_oracle: find(&curves, model, mode, CurveKind::Calibration)
                    .zip(oracle_cal)
                    .and_then(|(a, b)| max_pointwise_gap(a, b)),
            });
        }
    }
    Ok(CurvesOutcome {
        params: cfg.params,
        include_treatment: cfg.include_treatment,
        curves,
        summary,
    })
}

/// Curves pipeline at every `(c, k)` grid point.
pub fn curves_sweep(c_grid: &[f64], k_grid: &[f64], base: &PipelineConfig) -> Result<Vec<CurvesOutcome>> {
    if c_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::InvalidParameter("c and k grids must be non-empty".into()));
    }
    let mut out = Vec::new();
    for &c in c_grid {
        for &k in k_grid {
            let mut cfg = base.clone();
            cfg.params.c = c;
            cfg.params.k = k;
            out.push(curves_run(&cfg)?);
        }
    }
    Ok(out)
}

/// Fairness audit of the counterfactual model's test-half scores.
pub fn audit_run(cfg: &PipelineConfig, threshold: f64, bootstrap: &BootstrapConfig) -> Result<FairnessReport> {
    let prep = prepare(cfg)?;
    let scores = prep.test_nuisances.cf_scores.clone();
    audit(
        &prep.test,
        Some(&prep.test_nuisances),
        &scores,
        threshold,
        EvalMode::Dr,
        &cfg.positivity,
        Some(bootstrap),
    )
}
