//! Synthetic potential-outcomes population.
//!
//! Each unit carries a standard-normal covariate `z`, a group indicator `a`,
//! both potential outcomes `y0`/`y1`, a treatment `t` and the observed outcome
//! `y = t*y1 + (1-t)*y0`:
//!
//! ```text
//! z  ~ N(0, 1)
//! a  ~ Bern(0.5)
//! y0 ~ Bern(sigmoid(z + offset))
//! y1 ~ Bern(c * sigmoid(z + offset))
//! t  ~ Bern(sigmoid(z + offset + k*a))
//! ```
//!
//! Rows are drawn in fixed-size blocks; block `b` uses the ChaCha8 stream `b`
//! of the run seed, so output does not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::sigmoid;

const BLOCK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    /// Treatment-effect multiplier: `P(y1 = 1 | z) = c * P(y0 = 1 | z)`.
    pub c: f64,
    /// Treatment-assignment bias toward group `a = 1`.
    pub k: f64,
    /// Logit shift shared by the outcome and treatment laws.
    pub offset: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            n: 100_000,
            c: 0.1,
            k: 1.6,
            offset: -0.5,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn new(n: usize, c: f64, k: f64, seed: u64) -> Self {
        Self {
            n,
            c,
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::InvalidParameter(format!(
                "c must lie in [0, 1], got {}",
                self.c
            )));
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "k must be a finite non-negative real, got {}",
                self.k
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidParameter("offset must be finite".into()));
        }
        Ok(())
    }

    /// True `P(y0 = 1 | z)`.
    pub fn baseline_risk(&self, z: f64) -> f64 {
        sigmoid(z + self.offset)
    }

    /// True propensity `P(t = 1 | z, a)`.
    pub fn propensity(&self, z: f64, a: u8) -> f64 {
        sigmoid(z + self.offset + self.k * f64::from(a))
    }
}

/// One unit of a dataset. Potential outcomes are `None` for observational data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub z: f64,
    pub a: u8,
    pub y0: Option<u8>,
    pub y1: Option<u8>,
    pub t: u8,
    pub y: u8,
}

/// Column-oriented dataset. When `y0`/`y1` are present it is an oracle
/// dataset carrying both potential outcomes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub z: Vec<f64>,
    pub a: Vec<u8>,
    pub t: Vec<u8>,
    pub y: Vec<u8>,
    pub y0: Option<Vec<u8>>,
    pub y1: Option<Vec<u8>>,
    pub params: Option<GeneratorParams>,
}

impl Dataset {
    pub fn from_rows(rows: &[Row]) -> Result<Self> {
        let oracle = rows.first().is_some_and(|r| r.y0.is_some() && r.y1.is_some());
        let mut ds = Dataset {
            z: Vec::with_capacity(rows.len()),
            a: Vec::with_capacity(rows.len()),
            t: Vec::with_capacity(rows.len()),
            y: Vec::with_capacity(rows.len()),
            y0: oracle.then(|| Vec::with_capacity(rows.len())),
            y1: oracle.then(|| Vec::with_capacity(rows.len())),
            params: None,
        };
        for (i, r) in rows.iter().enumerate() {
            for (name, v) in [("a", r.a), ("t", r.t), ("y", r.y)] {
                check_indicator(name, i, v)?;
            }
            ds.z.push(r.z);
            ds.a.push(r.a);
            ds.t.push(r.t);
            ds.y.push(r.y);
            match (oracle, r.y0, r.y1) {
                (true, Some(y0), Some(y1)) => {
                    check_indicator("y0", i, y0)?;
                    check_indicator("y1", i, y1)?;
                    ds.y0.as_mut().unwrap().push(y0);
                    ds.y1.as_mut().unwrap().push(y1);
                }
                (false, None, None) => {}
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "row {i}: potential outcomes must be present on all rows or none"
                    )))
                }
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn has_oracle(&self) -> bool {
        self.y0.is_some() && self.y1.is_some()
    }

    pub fn y0(&self) -> Result<&[u8]> {
        self.y0.as_deref().ok_or(Error::MissingOracle)
    }

    pub fn y1(&self) -> Result<&[u8]> {
        self.y1.as_deref().ok_or(Error::MissingOracle)
    }

    pub fn row(&self, i: usize) -> Row {
        Row {
            z: self.z[i],
            a: self.a[i],
            y0: self.y0.as_ref().map(|c| c[i]),
            y1: self.y1.as_ref().map(|c| c[i]),
            t: self.t[i],
            y: self.y[i],
        }
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let pick_u8 = |col: &[u8]| indices.iter().map(|&i| col[i]).collect::<Vec<_>>();
        Dataset {
            z: indices.iter().map(|&i| self.z[i]).collect(),
            a: pick_u8(&self.a),
            t: pick_u8(&self.t),
            y: pick_u8(&self.y),
            y0: self.y0.as_deref().map(pick_u8),
            y1: self.y1.as_deref().map(pick_u8),
            params: self.params,
        }
    }

    /// Seeded shuffle split into (train, test); `train_fraction` of the rows go to train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Split, Dataset, Dataset)> {
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let split = Split::new(self.len(), train_fraction, seed);
        let train = self.select(&split.train);
        let test = self.select(&split.test);
        Ok((split, train, test))
    }

    /// Check the consistency identity `y = t*y1 + (1-t)*y0` on every row.
    pub fn consistency_violations(&self) -> Result<Vec<usize>> {
        let (y0, y1) = (self.y0()?, self.y1()?);
        Ok((0..self.len())
            .filter(|&i| {
                let expected = if self.t[i] == 1 { y1[i] } else { y0[i] };
                self.y[i] != expected
            })
            .collect())
    }
}

fn check_indicator(name: &str, row: usize, v: u8) -> Result<()> {
    if v > 1 {
        return Err(Error::InvalidParameter(format!(
            "row {row}: column {name} must be 0 or 1, got {v}"
        )));
    }
    Ok(())
}

/// A recorded train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, train_fraction: f64, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let test = idx.split_off(n_train.min(n));
        Split {
            seed,
            train_fraction,
            train: idx,
            test,
        }
    }
}

fn draw_block(params: &GeneratorParams, block: usize, rows: usize) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(block as u64);
    (0..rows)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let a = u8::from(rng.random::<f64>() < 0.5);
            let risk = params.baseline_risk(z);
            let y0 = u8::from(rng.random::<f64>() < risk);
            let y1 = u8::from(rng.random::<f64>() < params.c * risk);
            let t = u8::from(rng.random::<f64>() < params.propensity(z, a));
            let y = if t == 1 { y1 } else { y0 };
            Row {
                z,
                a,
                y0: Some(y0),
                y1: Some(y1),
                t,
                y,
            }
        })
        .collect()
}

/// Draw an oracle dataset of exactly `params.n` rows.
pub fn generate(params: &GeneratorParams) -> Result<Dataset> {
    params.validate()?;
    let n_blocks = params.n.div_ceil(BLOCK_ROWS);
    let blocks: Vec<Vec<Row>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK_ROWS.min(params.n - b * BLOCK_ROWS);
            draw_block(params, b, rows)
        })
        .collect();
    let rows: Vec<Row> = blocks.into_iter().flatten().collect();
    let mut ds = Dataset::from_rows(&rows)?;
    ds.params = Some(*params);
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean_y: f64,
    /// `None` when the dataset has no potential-outcome columns.
    pub mean_y0: Option<f64>,
    pub mean_y1: Option<f64>,
    pub mean_t: f64,
    /// `None` when the group is empty.
    pub mean_t_given_a0: Option<f64>,
    pub mean_t_given_a1: Option<f64>,
}

fn mean_u8(col: &[u8]) -> f64 {
    col.iter().map(|&v| f64::from(v)).sum::<f64>() / col.len() as f64
}

fn group_mean(values: &[u8], groups: &[u8], g: u8) -> Option<f64> {
    let (sum, count) = values
        .iter()
        .zip(groups)
        .filter(|(_, &a)| a == g)
        .fold((0u64, 0u64), |(s, c), (&v, _)| (s + u64::from(v), c + 1));
    (count > 0).then(|| sum as f64 / count as f64)
}

pub fn summarize(ds: &Dataset) -> Result<MomentSummary> {
    if ds.is_empty() {
        return Err(Error::InvalidParameter("cannot summarize an empty dataset".into()));
    }
    Ok(MomentSummary {
        n: ds.len(),
        mean_y: mean_u8(&ds.y),
        mean_y0: ds.y0.as_deref().map(mean_u8),
        mean_y1: ds.y1.as_deref().map(mean_u8),
        mean_t: mean_u8(&ds.t),
        mean_t_given_a0: group_mean(&ds.t, &ds.a, 0),
        mean_t_given_a1: group_mean(&ds.t, &ds.a, 1),
    })
}
