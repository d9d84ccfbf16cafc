//! Observational, counterfactual and propensity models, and the per-row
//! nuisance scores the estimators consume.

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, GeneratorParams};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, FeatureMatrix, FitConfig, ScoreModel};

/// Default covariates: `X = (z, a)`.
pub const BASE_FEATURES: [&str; 2] = ["z", "a"];
/// Observational-model covariates when the treatment is used as a feature.
pub const TREATMENT_FEATURES: [&str; 3] = ["z", "a", "t"];
/// Covariates of a counterfactual model that ignores the protected attribute.
pub const GROUP_BLIND_FEATURES: [&str; 1] = ["z"];

fn column(ds: &Dataset, name: &str) -> Result<Vec<f64>> {
    Ok(match name {
        "z" => ds.z.clone(),
        "a" => ds.a.iter().map(|&v| f64::from(v)).collect(),
        "t" => ds.t.iter().map(|&v| f64::from(v)).collect(),
        other => return Err(Error::UnknownFeature(other.to_string())),
    })
}

/// Design matrix for `spec`, built from dataset columns by name.
pub fn feature_matrix<S: AsRef<str>>(ds: &Dataset, spec: &[S]) -> Result<FeatureMatrix> {
    let names: Vec<&str> = spec.iter().map(AsRef::as_ref).collect();
    let cols = names
        .iter()
        .map(|n| column(ds, n))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_columns(&names, &cols)
}

pub fn score_dataset(model: &ScoreModel, ds: &Dataset) -> Result<Vec<f64>> {
    model.score_matrix(&feature_matrix(ds, &model.feature_spec)?)
}

fn require_rows(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    Ok(())
}

/// Model of `E[Y | X]` (or `E[Y | X, T]`) on all rows.
pub fn fit_observational(
    ds: &Dataset,
    include_treatment: bool,
    config: &FitConfig,
) -> Result<ScoreModel> {
    fit_observational_weighted(ds, include_treatment, None, config)
}

pub fn fit_observational_weighted(
    ds: &Dataset,
    include_treatment: bool,
    weights: Option<&[f64]>,
    config: &FitConfig,
) -> Result<ScoreModel> {
    require_rows(ds)?;
    let spec: &[&str] = if include_treatment {
        &TREATMENT_FEATURES
    } else {
        &BASE_FEATURES
    };
    fit_logistic(&feature_matrix(ds, spec)?, &ds.y, weights, config)
}

/// Covariate-shift correction for the counterfactual model.
#[derive(Debug, Clone, Copy)]
pub struct ShiftCorrection<'a> {
    pub propensity: &'a ScoreModel,
    /// Rows with `pi_hat > 1 - clip` violate positivity.
    pub clip: f64,
}

/// Model of `E[Y | X, T = 0]` fit on the control rows. With a shift
/// correction, control row `i` is weighted by `1 / (1 - pi_hat(X_i))` so the
/// weighted control sample targets the full-population covariate law.
pub fn fit_counterfactual(
    ds: &Dataset,
    shift: Option<ShiftCorrection<'_>>,
    config: &FitConfig,
) -> Result<ScoreModel> {
    fit_counterfactual_on(ds, &BASE_FEATURES, shift, config)
}

/// [`fit_counterfactual`] with an explicit covariate list.
pub fn fit_counterfactual_on(
    ds: &Dataset,
    features: &[&str],
    shift: Option<ShiftCorrection<'_>>,
    config: &FitConfig,
) -> Result<ScoreModel> {
    let control: Vec<usize> = (0..ds.len()).filter(|&i| ds.t[i] == 0).collect();
    if control.is_empty() {
        return Err(Error::InvalidParameter(
            "control population (t = 0) is empty".into(),
        ));
    }
    let ctrl = ds.select(&control);
    let x = feature_matrix(&ctrl, features)?;
    let weights = match shift {
        None => None,
        Some(s) => {
            let pi = score_dataset(s.propensity, &ctrl)?;
            let bound = 1.0 - s.clip;
            let bad: Vec<usize> = pi
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > bound)
                .map(|(j, _)| control[j])
                .collect();
            if !bad.is_empty() {
                return Err(Error::Positivity { bound, rows: bad });
            }
            Some(pi.iter().map(|p| 1.0 / (1.0 - p)).collect::<Vec<_>>())
        }
    };
    fit_logistic(&x, &ctrl.y, weights.as_deref(), config)
}

/// Model of `P(T = 1 | X)` on all rows.
pub fn fit_propensity(ds: &Dataset, config: &FitConfig) -> Result<ScoreModel> {
    require_rows(ds)?;
    fit_logistic(&feature_matrix(ds, &BASE_FEATURES)?, &ds.t, None, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModels {
    pub propensity: ScoreModel,
    pub counterfactual: ScoreModel,
    pub observational: Option<ScoreModel>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NuisanceOptions {
    pub include_treatment: bool,
    pub shift_correction: bool,
    pub clip: f64,
    /// Fit the counterfactual model on `z` alone.
    pub group_blind: bool,
}

impl NuisanceModels {
    /// Fit all three model roles on `ds`.
    pub fn fit(ds: &Dataset, opts: NuisanceOptions, config: &FitConfig) -> Result<Self> {
        let propensity = fit_propensity(ds, config)?;
        let shift = opts.shift_correction.then_some(ShiftCorrection {
            propensity: &propensity,
            clip: opts.clip,
        });
        let features: &[&str] = if opts.group_blind {
            &GROUP_BLIND_FEATURES
        } else {
            &BASE_FEATURES
        };
        let counterfactual = fit_counterfactual_on(ds, features, shift, config)?;
        let observational = Some(fit_observational(ds, opts.include_treatment, config)?);
        Ok(Self {
            propensity,
            counterfactual,
            observational,
        })
    }

    /// The generator's own conditional laws, as logistic models.
    pub fn oracle(params: &GeneratorParams) -> Result<Self> {
        Ok(Self {
            propensity: ScoreModel::new(&BASE_FEATURES, vec![1.0, params.k], params.offset)?,
            counterfactual: ScoreModel::new(&BASE_FEATURES, vec![1.0, 0.0], params.offset)?,
            observational: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub propensity: String,
    pub counterfactual: String,
    pub observational: Option<String>,
}

/// Per-row nuisance scores aligned with a dataset's row order.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    /// `pi_hat(X_i)`.
    pub propensity: Vec<f64>,
    /// `s0_hat(X_i)`, the counterfactual-model score.
    pub cf_scores: Vec<f64>,
    pub obs_scores: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl NuisanceSet {
    pub fn len(&self) -> usize {
        self.propensity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.propensity.is_empty()
    }

    pub fn check_aligned(&self, ds: &Dataset) -> Result<()> {
        let n = ds.len();
        let mut cols = vec![("pi_hat", self.propensity.len()), ("s0_hat", self.cf_scores.len())];
        if let Some(o) = &self.obs_scores {
            cols.push(("obs_hat", o.len()));
        }
        for (what, got) in cols {
            if got != n {
                return Err(Error::LengthMismatch {
                    what: what.into(),
                    got,
                    expected: n,
                });
            }
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> NuisanceSet {
        let pick = |c: &[f64]| indices.iter().map(|&i| c[i]).collect::<Vec<_>>();
        NuisanceSet {
            propensity: pick(&self.propensity),
            cf_scores: pick(&self.cf_scores),
            obs_scores: self.obs_scores.as_deref().map(pick),
            provenance: self.provenance.clone(),
        }
    }

    /// Analytic generator probabilities for every row.
    pub fn oracle(ds: &Dataset, params: &GeneratorParams) -> NuisanceSet {
        let propensity: Vec<f64> = (0..ds.len())
            .map(|i| params.propensity(ds.z[i], ds.a[i]))
            .collect();
        let cf_scores: Vec<f64> = ds.z.iter().map(|&z| params.baseline_risk(z)).collect();
        let obs_scores = propensity
            .iter()
            .zip(&cf_scores)
            .map(|(&p, &s)| p * params.c * s + (1.0 - p) * s)
            .collect();
        NuisanceSet {
            propensity,
            cf_scores,
            obs_scores: Some(obs_scores),
            provenance: Provenance {
                propensity: "oracle".into(),
                counterfactual: "oracle".into(),
                observational: Some("oracle".into()),
            },
        }
    }
}

fn describe(model: &ScoreModel) -> String {
    format!(
        "logistic[{}]",
        model
            .feature_spec
            .iter()
            .zip(&model.coefficients)
            .map(|(n, b)| format!("{n}={b:.4}"))
            .chain(std::iter::once(format!("intercept={:.4}", model.intercept)))
            .collect::<Vec<_>>()
            .join(",")
    )
}

/// Score every row of `ds` with each model.
pub fn attach_scores(ds: &Dataset, models: &NuisanceModels) -> Result<NuisanceSet> {
    Ok(NuisanceSet {
        propensity: score_dataset(&models.propensity, ds)?,
        cf_scores: score_dataset(&models.counterfactual, ds)?,
        obs_scores: models
            .observational
            .as_ref()
            .map(|m| score_dataset(m, ds))
            .transpose()?,
        provenance: Provenance {
            propensity: describe(&models.propensity),
            counterfactual: describe(&models.counterfactual),
            observational: models.observational.as_ref().map(describe),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Row};

    fn tiny() -> Dataset {
        Dataset::from_rows(&[
            Row { z: 0.3, a: 0, y0: None, y1: None, t: 0, y: 1 },
            Row { z: -1.1, a: 1, y0: None, y1: None, t: 1, y: 0 },
        ])
        .unwrap()
    }

    #[test]
    fn constant_models_give_half() {
        let half = ScoreModel::constant(&BASE_FEATURES, 0.5).unwrap();
        let models = NuisanceModels {
            propensity: half.clone(),
            counterfactual: half.clone(),
            observational: Some(half),
        };
        let ns = attach_scores(&tiny(), &models).unwrap();
        for col in [&ns.propensity, &ns.cf_scores, ns.obs_scores.as_ref().unwrap()] {
            assert!(col.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn unknown_feature_is_an_error() {
        let m = ScoreModel::new(&["z", "w"], vec![1.0, 1.0], 0.0).unwrap();
        assert!(matches!(score_dataset(&m, &tiny()), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn oracle_models_reproduce_generator_law() {
        let p = GeneratorParams::new(5_000, 0.1, 1.6, 4);
        let ds = generate(&p).unwrap();
        let ns = attach_scores(&ds, &NuisanceModels::oracle(&p).unwrap()).unwrap();
        for (i, &s) in ns.cf_scores.iter().enumerate() {
            let expected = 1.0 / (1.0 + (-(ds.z[i] - 0.5)).exp());
            assert!((s - expected).abs() < 1e-12);
        }
        let direct = NuisanceSet::oracle(&ds, &p);
        for i in 0..ds.len() {
            assert!((direct.propensity[i] - ns.propensity[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_rows_permute_scores() {
        let p = GeneratorParams::new(500, 0.1, 1.6, 4);
        let ds = generate(&p).unwrap();
        let models = NuisanceModels::fit(&ds, NuisanceOptions::default(), &FitConfig::default()).unwrap();
        let ns = attach_scores(&ds, &models).unwrap();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let ns_perm = attach_scores(&ds.select(&perm), &models).unwrap();
        assert_eq!(ns.select(&perm), ns_perm);
    }

    #[test]
    fn all_control_counterfactual_equals_observational() {
        let mut ds = generate(&GeneratorParams::new(3_000, 0.1, 1.6, 6)).unwrap();
        ds.t.iter_mut().for_each(|t| *t = 0);
        ds.y = ds.y0.clone().unwrap();
        let cfg = FitConfig::default();
        let cf = fit_counterfactual(&ds, None, &cfg).unwrap();
        let obs = fit_observational(&ds, false, &cfg).unwrap();
        assert_eq!(cf.coefficients, obs.coefficients);
        assert_eq!(cf.intercept, obs.intercept);
    }

    #[test]
    fn empty_control_set_rejected() {
        let mut ds = tiny();
        ds.t = vec![1, 1];
        assert!(fit_counterfactual(&ds, None, &FitConfig::default()).is_err());
    }

    #[test]
    fn shift_correction_positivity_error() {
        let ds = generate(&GeneratorParams::new(2_000, 0.1, 1.6, 6)).unwrap();
        let sure = ScoreModel::constant(&BASE_FEATURES, 0.995).unwrap();
        let err = fit_counterfactual(
            &ds,
            Some(ShiftCorrection { propensity: &sure, clip: 0.01 }),
            &FitConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Positivity { .. }));
    }

    #[test]
    fn treatment_flag_adds_coefficient() {
        let ds = generate(&GeneratorParams::new(5_000, 0.1, 1.6, 6)).unwrap();
        let m = fit_observational(&ds, true, &FitConfig::default()).unwrap();
        assert_eq!(m.feature_spec, vec!["z", "a", "t"]);
        assert!(m.coefficient("t").unwrap() < 0.0);
    }
}
