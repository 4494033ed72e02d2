//! Online pseudoinverse training of the decoding weights.
//!
//! Full OPIUM is the rank-one inverse-correlation recursion started from
//! `W = 0`, `Ψ = I`:
//!
//! ```text
//! u = Ψ h,  k = u / (1 + hᵀu)
//! W ← W + (y - W h) kᵀ
//! Ψ ← Ψ - k uᵀ
//! ```
//!
//! After any sample stream it equals the ridge solution `Y Hᵀ (H Hᵀ + I)⁻¹`.
//! Writing the correction as `k uᵀ = u uᵀ / (1 + hᵀu)` keeps Ψ exactly
//! symmetric in floating point. OPIUM lite keeps only the diagonal of Ψ.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mnist::{onehot, Dataset, GreyImage, NUM_CLASSES};
use crate::pipeline::FeatureMap;
use crate::readout::{argmax, DecodingWeights, FixedPointClassifier, Gram, QuantizedReadout};

/// Images per feature-extraction batch during training.
const TRAIN_BATCH: usize = 512;

/// Leading training digits whose activations calibrate 6-bit rounding.
pub const CALIBRATION_SAMPLES: usize = 30_000;

pub trait OnlineSolver {
    fn update(&mut self, h: &[f64], y: &[f64; NUM_CLASSES]) -> Result<()>;
    fn weights(&self) -> &DecodingWeights;
    fn into_weights(self) -> DecodingWeights;
    fn samples_seen(&self) -> usize;
}

fn check_len(h: &[f64], n: usize) -> Result<()> {
    if h.len() != n {
        return Err(Error::LengthMismatch {
            what: "hidden activation vector",
            expected: n,
            actual: h.len(),
        });
    }
    Ok(())
}

/// `W ← W + (y - W h) kᵀ`.
fn correct_weights(w: &mut DecodingWeights, h: &[f64], y: &[f64; NUM_CLASSES], k: &[f64]) {
    let n = w.n_hidden();
    let residual: Vec<f64> = w
        .scores(h)
        .iter()
        .zip(y)
        .map(|(wh, t)| t - wh)
        .collect();
    for (row, e) in w.as_mut_slice().chunks_exact_mut(n).zip(residual) {
        for (wi, ki) in row.iter_mut().zip(k) {
            *wi += e * ki;
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpiumFull {
    w: DecodingWeights,
    psi: Vec<f64>,
    samples_seen: usize,
}

impl OpiumFull {
    pub fn new(n_hidden: usize) -> Self {
        let mut psi = vec![0.0; n_hidden * n_hidden];
        for i in 0..n_hidden {
            psi[i * n_hidden + i] = 1.0;
        }
        OpiumFull {
            w: DecodingWeights::zeros(n_hidden),
            psi,
            samples_seen: 0,
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.w.n_hidden()
    }

    /// Row-major N×N inverse-correlation matrix.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n_hidden();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.psi[i * n + j] - self.psi[j * n + i]).abs());
            }
        }
        worst
    }
}

impl OnlineSolver for OpiumFull {
    fn update(&mut self, h: &[f64], y: &[f64; NUM_CLASSES]) -> Result<()> {
        let n = self.n_hidden();
        check_len(h, n)?;
        let u: Vec<f64> = self
            .psi
            .chunks_exact(n)
            .map(|row| row.iter().zip(h).map(|(p, x)| p * x).sum())
            .collect();
        let denom = 1.0 + h.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        if !denom.is_finite() || denom <= 0.0 {
            return Err(Error::NonFinite("OPIUM gain denominator"));
        }
        let k: Vec<f64> = u.iter().map(|v| v / denom).collect();
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("OPIUM gain"));
        }
        correct_weights(&mut self.w, h, y, &k);
        for (row, ki) in self.psi.chunks_exact_mut(n).zip(&k) {
            if *ki != 0.0 {
                for (p, uj) in row.iter_mut().zip(&u) {
                    *p -= ki * uj;
                }
            }
        }
        self.samples_seen += 1;
        Ok(())
    }

    fn weights(&self) -> &DecodingWeights {
        &self.w
    }

    fn into_weights(self) -> DecodingWeights {
        self.w
    }

    fn samples_seen(&self) -> usize {
        self.samples_seen
    }
}

#[derive(Clone, Debug)]
pub struct OpiumLite {
    w: DecodingWeights,
    d: Vec<f64>,
    samples_seen: usize,
}

impl OpiumLite {
    pub fn new(n_hidden: usize) -> Self {
        OpiumLite {
            w: DecodingWeights::zeros(n_hidden),
            d: vec![1.0; n_hidden],
            samples_seen: 0,
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }
}

impl OnlineSolver for OpiumLite {
    fn update(&mut self, h: &[f64], y: &[f64; NUM_CLASSES]) -> Result<()> {
        check_len(h, self.d.len())?;
        // Same arithmetic as the full update with Ψ restricted to its diagonal.
        let u: Vec<f64> = self.d.iter().zip(h).map(|(d, x)| d * x).collect();
        let denom = 1.0 + h.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        if !denom.is_finite() {
            return Err(Error::NonFinite("OPIUM lite gain denominator"));
        }
        let k: Vec<f64> = u.iter().map(|v| v / denom).collect();
        correct_weights(&mut self.w, h, y, &k);
        for ((d, ki), ui) in self.d.iter_mut().zip(&k).zip(&u) {
            *d -= ki * ui;
        }
        self.samples_seen += 1;
        Ok(())
    }

    fn weights(&self) -> &DecodingWeights {
        &self.w
    }

    fn into_weights(self) -> DecodingWeights {
        self.w
    }

    fn samples_seen(&self) -> usize {
        self.samples_seen
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Lite,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "lite" => Ok(Variant::Lite),
            other => Err(Error::InvalidArgument(format!(
                "unknown OPIUM variant {other:?} (expected full or lite)"
            ))),
        }
    }
}

fn stream_into<S: OnlineSolver>(
    mut solver: S,
    features: &FeatureMap,
    images: &[GreyImage],
    mut gram: Option<&mut Gram>,
) -> Result<DecodingWeights> {
    for batch in images.chunks(TRAIN_BATCH) {
        let rows: Vec<Vec<f64>> = batch.par_iter().map(|g| features.features(g)).collect();
        if let Some(gram) = gram.as_deref_mut() {
            let take = CALIBRATION_SAMPLES.saturating_sub(gram.samples()).min(rows.len());
            gram.add_batch(&rows[..take])?;
        }
        for (h, g) in rows.iter().zip(batch) {
            solver.update(h, &onehot(g.label().into())?)?;
        }
    }
    Ok(solver.into_weights())
}

/// One pass over `images` in order with the given feature map.
pub fn train_with(features: &FeatureMap, images: &[GreyImage], variant: Variant) -> Result<DecodingWeights> {
    let n = features.n_hidden();
    match variant {
        Variant::Full => stream_into(OpiumFull::new(n), features, images, None),
        Variant::Lite => stream_into(OpiumLite::new(n), features, images, None),
    }
}

/// As [`train_with`], also collecting the Gram matrix of the training
/// activations for [`quantize_calibrated`](crate::readout::quantize_calibrated).
pub fn train_calibrated(
    features: &FeatureMap,
    images: &[GreyImage],
    variant: Variant,
) -> Result<(DecodingWeights, Gram)> {
    let n = features.n_hidden();
    let mut gram = Gram::new(n);
    let w = match variant {
        Variant::Full => stream_into(OpiumFull::new(n), features, images, Some(&mut gram))?,
        Variant::Lite => stream_into(OpiumLite::new(n), features, images, Some(&mut gram))?,
    };
    Ok((w, gram))
}

/// Train the fixed-point configuration and quantize with calibrated rounding.
pub fn train_fixed(
    dataset: &Dataset,
    master_seed: u64,
    n_hidden: usize,
    variant: Variant,
) -> Result<(DecodingWeights, QuantizedReadout)> {
    let features = FeatureMap::fixed_point(master_seed, n_hidden)?;
    let (w, gram) = train_calibrated(&features, dataset.images(), variant)?;
    let model = QuantizedReadout::from_weights_calibrated(&w, &gram, master_seed, features.mapping())?;
    Ok((w, model))
}

/// Train the fixed-point configuration (binary input, rate neurons).
pub fn train(dataset: &Dataset, master_seed: u64, n_hidden: usize, variant: Variant) -> Result<DecodingWeights> {
    train_with(&FeatureMap::fixed_point(master_seed, n_hidden)?, dataset.images(), variant)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Evaluation {
    pub errors: usize,
    pub total: usize,
}

impl Evaluation {
    pub fn error_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.errors as f64 / self.total as f64
        }
    }
}

pub fn evaluate_with<F>(test: &[GreyImage], predict: F) -> Evaluation
where
    F: Fn(&GreyImage) -> u8 + Sync,
{
    let errors = test.par_iter().filter(|g| predict(g) != g.label()).count();
    Evaluation {
        errors,
        total: test.len(),
    }
}

/// Float readout: argmax of `W · features`.
pub fn evaluate_float(features: &FeatureMap, w: &DecodingWeights, test: &[GreyImage]) -> Evaluation {
    evaluate_with(test, |g| argmax(&w.scores(&features.features(g))) as u8)
}

/// Fixed-point inference with a quantized model.
pub fn evaluate_model(model: &QuantizedReadout, test: &[GreyImage]) -> Result<Evaluation> {
    let clf = FixedPointClassifier::new(model.clone())?;
    Ok(evaluate_with(test, |g| clf.classify_grey(g)))
}

#[derive(Clone, Debug)]
pub struct RegressionSettings {
    pub n_hidden: usize,
    pub error_threshold: usize,
    pub max_seeds: usize,
    pub start_seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl RegressionSettings {
    pub const DEFAULT_THRESHOLD: usize = 500;
    pub const DEFAULT_MAX_SEEDS: usize = 1000;
}

#[derive(Clone, Debug)]
pub struct RegressionOutcome {
    pub best_seed: u64,
    pub best_lite_error: usize,
    pub final_weights: DecodingWeights,
    /// `final_weights` quantized with calibrated rounding.
    pub final_model: QuantizedReadout,
    pub seeds_tried: usize,
    pub timed_out: bool,
    /// `(seed, lite test errors)` for every seed tried, in seed order.
    pub history: Vec<(u64, usize)>,
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(u64, usize)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("seed") {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(s, e)| Some((s.trim().parse().ok()?, e.trim().parse().ok()?)));
        match parsed {
            Some(rec) => records.push(rec),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: malformed checkpoint record {line:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(records)
}

fn append_checkpoint(path: &Path, records: &[(u64, usize)]) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("seed,lite_error\n");
    }
    for (seed, err) in records {
        text.push_str(&format!("{seed},{err}\n"));
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Test errors of OPIUM lite at one seed.
pub fn lite_errors(train: &Dataset, test: &Dataset, seed: u64, n_hidden: usize) -> Result<usize> {
    let features = FeatureMap::fixed_point(seed, n_hidden)?;
    let w = train_with(&features, train.images(), Variant::Lite)?;
    Ok(evaluate_float(&features, &w, test.images()).errors)
}

/// Screen seeds `start, start+1, ...` with OPIUM lite until one scores below
/// the threshold or `max_seeds` have been tried, then train full OPIUM at the
/// chosen seed.
///
/// Seeds are screened in batches of the worker count. The stopping seed is
/// the lowest one in seed order that meets the threshold, so the outcome does
/// not depend on scheduling.
pub fn seed_regression(train: &Dataset, test: &Dataset, settings: &RegressionSettings) -> Result<RegressionOutcome> {
    if settings.max_seeds == 0 {
        return Err(Error::InvalidArgument("max_seeds must be positive".into()));
    }
    let known: std::collections::HashMap<u64, usize> = match &settings.checkpoint {
        Some(p) => read_checkpoint(p)?.into_iter().collect(),
        None => Default::default(),
    };
    let batch = rayon::current_num_threads().max(1);
    let mut history = Vec::new();
    let mut hit = None;

    let mut index = 0;
    'outer: while index < settings.max_seeds {
        let end = (index + batch).min(settings.max_seeds);
        let seeds: Vec<u64> = (index..end)
            .map(|i| settings.start_seed.wrapping_add(i as u64))
            .collect();
        let results: Vec<(u64, usize)> = seeds
            .par_iter()
            .map(|&s| match known.get(&s) {
                Some(&e) => Ok((s, e)),
                None => lite_errors(train, test, s, settings.n_hidden).map(|e| (s, e)),
            })
            .collect::<Result<_>>()?;
        if let Some(p) = &settings.checkpoint {
            let fresh: Vec<_> = results
                .iter()
                .copied()
                .filter(|(s, _)| !known.contains_key(s))
                .collect();
            append_checkpoint(p, &fresh)?;
        }
        for rec in results {
            history.push(rec);
            if rec.1 < settings.error_threshold {
                hit = Some(rec);
                break 'outer;
            }
        }
        index = end;
    }

    let (best_seed, best_lite_error, timed_out) = match hit {
        Some((s, e)) => (s, e, false),
        None => {
            let &(s, e) = history
                .iter()
                .min_by_key(|(s, e)| (*e, *s))
                .expect("at least one seed screened");
            (s, e, true)
        }
    };
    let (final_weights, final_model) = train_fixed(train, best_seed, settings.n_hidden, Variant::Full)?;
    Ok(RegressionOutcome {
        best_seed,
        best_lite_error,
        final_weights,
        final_model,
        seeds_tried: history.len(),
        timed_out,
        history,
    })
}
