//! Configuration ablation and hidden-size sweep runners.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::encoder::check_hidden_size;
use crate::error::{Error, Result};
use crate::mnist::Dataset;
use crate::pipeline::{FeatureMap, InputMode, NeuronKind};
use crate::readout::QuantizedReadout;
use crate::trainer::{evaluate_float, evaluate_model, train_calibrated, train_with, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Float64,
    Fixed6,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentConfig {
    pub config_id: u8,
    pub input_mode: InputMode,
    pub neuron_kind: NeuronKind,
    pub weight_mode: WeightMode,
    pub n_hidden: usize,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Configurations 1..=4: each adds one hardware simplification to the
    /// previous one (binary input, then rate neurons, then 6-bit weights).
    pub fn preset(config_id: u8, n_hidden: usize, seeds: Vec<u64>) -> Result<Self> {
        use InputMode::*;
        use NeuronKind::*;
        use WeightMode::*;
        let (input_mode, neuron_kind, weight_mode) = match config_id {
            1 => (Grey, Tanh, Float64),
            2 => (Binary, Tanh, Float64),
            3 => (Binary, Rate, Float64),
            4 => (Binary, Rate, Fixed6),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "configuration {other} is not one of 1..=4"
                )))
            }
        };
        check_hidden_size(n_hidden)?;
        Ok(ExperimentConfig {
            config_id,
            input_mode,
            neuron_kind,
            weight_mode,
            n_hidden,
            seeds,
        })
    }
}

/// Train with OPIUM lite at one seed and count test errors.
pub fn run_one(cfg: &ExperimentConfig, seed: u64, train: &Dataset, test: &Dataset) -> Result<usize> {
    let features = FeatureMap::new(seed, cfg.n_hidden, cfg.input_mode, cfg.neuron_kind)?;
    match cfg.weight_mode {
        WeightMode::Float64 => {
            let w = train_with(&features, train.images(), Variant::Lite)?;
            Ok(evaluate_float(&features, &w, test.images()).errors)
        }
        WeightMode::Fixed6 => {
            if cfg.input_mode != InputMode::Binary || cfg.neuron_kind != NeuronKind::Rate {
                return Err(Error::InvalidArgument(
                    "6-bit weights require binary input and rate neurons".into(),
                ));
            }
            let (w, gram) = train_calibrated(&features, train.images(), Variant::Lite)?;
            let model = QuantizedReadout::from_weights_calibrated(&w, &gram, seed, features.mapping())?;
            Ok(evaluate_model(&model, test.images())?.errors)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub config: u8,
    pub seed: u64,
    pub errors: usize,
}

/// Every configuration runs over the same seed list, so results pair up by
/// seed. Rows come back ordered by (config, seed position).
pub fn run_ablation(configs: &[ExperimentConfig], train: &Dataset, test: &Dataset) -> Result<Vec<AblationRow>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = configs.iter().find(|c| c.seeds != first.seeds) {
        return Err(Error::InvalidArgument(format!(
            "configuration {} uses a different seed list than configuration {}",
            bad.config_id, first.config_id
        )));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        for &seed in &cfg.seeds {
            rows.push(AblationRow {
                config: cfg.config_id,
                seed,
                errors: run_one(cfg, seed, train, test)?,
            });
        }
    }
    Ok(rows)
}

pub const HISTOGRAM_BIN: i64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: i64,
    pub max: i64,
    /// `(bin lower edge, count)`, bins of width 5, ascending.
    pub histogram: Vec<(i64, usize)>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Summary of the per-seed differences `b - a`.
pub fn paired_difference(errors_a: &[usize], errors_b: &[usize]) -> Result<PairedSummary> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::LengthMismatch {
            what: "paired error lists",
            expected: errors_a.len(),
            actual: errors_b.len(),
        });
    }
    if errors_a.is_empty() {
        return Err(Error::InvalidArgument("no paired runs to summarize".into()));
    }
    let diffs: Vec<i64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(&a, &b)| b as i64 - a as i64)
        .collect();
    let as_f64: Vec<f64> = diffs.iter().map(|&d| d as f64).collect();
    let mut bins = BTreeMap::new();
    for d in &diffs {
        *bins.entry(d.div_euclid(HISTOGRAM_BIN) * HISTOGRAM_BIN).or_insert(0) += 1;
    }
    Ok(PairedSummary {
        n: diffs.len(),
        mean: as_f64.iter().sum::<f64>() / diffs.len() as f64,
        median: median(&as_f64).expect("non-empty"),
        min: *diffs.iter().min().expect("non-empty"),
        max: *diffs.iter().max().expect("non-empty"),
        histogram: bins.into_iter().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub seed: u64,
    pub errors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepMedian {
    pub size: usize,
    pub median_error_rate: f64,
}

/// Fixed-point configuration at each hidden size, OPIUM lite over the seed
/// list.
pub fn sweep_hidden(
    sizes: &[usize],
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<(Vec<SweepRow>, Vec<SweepMedian>)> {
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &size in sizes {
        let cfg = ExperimentConfig::preset(4, size, seeds.to_vec())?;
        let mut rates = Vec::new();
        for &seed in seeds {
            let errors = run_one(&cfg, seed, train, test)?;
            rows.push(SweepRow { size, seed, errors });
            rates.push(errors as f64 / test.len().max(1) as f64);
        }
        if let Some(m) = median(&rates) {
            medians.push(SweepMedian {
                size,
                median_error_rate: m,
            });
        }
    }
    Ok((rows, medians))
}
