//! Quantized linear readout: 6-bit decoding weights, integer accumulation
//! into ten output neurons, argmax, and the on-disk model format.
//!
//! Model file (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "NEFP"
//!      4     2  version (1)
//!      6     4  n_hidden
//!     10     8  master_seed
//!     18     2  stimulus offset (signed)
//!     20     1  stimulus shift
//!     21     8  scale (IEEE-754 f64)
//!     29  10·N  q, signed bytes, row-major, rows = digits 0..9
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use crate::encoder::{check_hidden_size, LfsrBank, StimMapping, WeightMatrix};
use crate::error::{Error, Result};
use crate::mnist::{binarize, BinaryImage, GreyImage, NUM_CLASSES};
use crate::neuron::{ActivationColumn, RateNeuronParams, TuningTable};

pub const WEIGHT_LIMIT: i8 = 31;
pub const MODEL_MAGIC: [u8; 4] = *b"NEFP";
pub const MODEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 29;

/// Real-valued decoding weights, 10 rows × `n_hidden` columns, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodingWeights {
    n_hidden: usize,
    data: Vec<f64>,
}

impl DecodingWeights {
    pub fn zeros(n_hidden: usize) -> Self {
        DecodingWeights {
            n_hidden,
            data: vec![0.0; NUM_CLASSES * n_hidden],
        }
    }

    pub fn from_rows(n_hidden: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != NUM_CLASSES * n_hidden {
            return Err(Error::LengthMismatch {
                what: "decoding weights",
                expected: NUM_CLASSES * n_hidden,
                actual: data.len(),
            });
        }
        Ok(DecodingWeights { n_hidden, data })
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.data[class * self.n_hidden..(class + 1) * self.n_hidden]
    }

    pub fn get(&self, class: usize, j: usize) -> f64 {
        self.data[class * self.n_hidden + j]
    }

    /// `W · h`.
    pub fn scores(&self, h: &[f64]) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.row(c).iter().zip(h).map(|(w, x)| w * x).sum();
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DecodingWeights) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// How real weights are rounded onto the 6-bit grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Round half away from zero, independently per weight.
    Nearest,
    /// Round each row left to right, carrying the residual into the next
    /// weight. Every prefix sum of a row stays within half a step of the
    /// real prefix sum, which preserves the shared offset carried by runs
    /// of saturated neurons.
    #[default]
    ErrorFeedback,
}

#[inline]
fn round_half_away(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5).floor()
}

/// Global symmetric scale `max|W| / 31` (1 for an all-zero matrix) and the
/// integer weights in `[-31, 31]`.
pub fn quantize_weights(w: &DecodingWeights, rounding: Rounding) -> Result<(Vec<i8>, f64)> {
    let scale = global_scale(w)?;
    let limit = f64::from(WEIGHT_LIMIT);
    let q = match rounding {
        Rounding::Nearest => w
            .data
            .iter()
            .map(|x| round_half_away(x / scale).clamp(-limit, limit) as i8)
            .collect(),
        Rounding::ErrorFeedback => {
            let mut q = Vec::with_capacity(w.data.len());
            for row in w.data.chunks(w.n_hidden.max(1)) {
                let mut carry = 0.0;
                for &x in row {
                    let target = x + carry;
                    let level = round_half_away(target / scale).clamp(-limit, limit);
                    carry = target - level * scale;
                    q.push(level as i8);
                }
            }
            q
        }
    };
    Ok((q, scale))
}

fn global_scale(w: &DecodingWeights) -> Result<f64> {
    if w.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("decoding weights"));
    }
    let max = w.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(if max == 0.0 {
        1.0
    } else {
        max / f64::from(WEIGHT_LIMIT)
    })
}

/// Running `H Hᵀ` over training activations.
#[derive(Clone, Debug)]
pub struct Gram {
    matrix: DMatrix<f64>,
    samples: usize,
}

impl Gram {
    pub fn new(n_hidden: usize) -> Self {
        Gram {
            matrix: DMatrix::zeros(n_hidden, n_hidden),
            samples: 0,
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn add_batch(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        let n = self.n_hidden();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch {
                what: "hidden activation vector",
                expected: n,
                actual: bad.len(),
            });
        }
        if rows.is_empty() {
            return Ok(());
        }
        let x = DMatrix::from_fn(rows.len(), n, |k, i| rows[k][i]);
        self.matrix.gemm(1.0, &x.transpose(), &x, 1.0);
        self.samples += rows.len();
        Ok(())
    }
}

/// Lower Cholesky factor of `(G + damping·I)⁻¹`; column `i` is row `i` of
/// its upper factor. With `J` the index reversal and `J G J = L Lᵀ`, the
/// factor is `J L⁻ᵀ J`.
fn inverse_factor(g: &DMatrix<f64>, damping: f64) -> Option<DMatrix<f64>> {
    let n = g.nrows();
    let rev = DMatrix::from_fn(n, n, |i, j| g[(n - 1 - i, n - 1 - j)] + if i == j { damping } else { 0.0 });
    let l = rev.cholesky()?.unpack();
    let mut inv = DMatrix::identity(n, n);
    if !l.solve_lower_triangular_mut(&mut inv) {
        return None;
    }
    let m = DMatrix::from_fn(n, n, |i, j| inv[(n - 1 - j, n - 1 - i)]);
    m.iter().all(|x| x.is_finite()).then_some(m)
}

/// Relative ridge added to the Gram diagonal before factorization.
const CALIBRATION_DAMPING: f64 = 0.01;

/// Data-aware rounding on the same grid and scale as [`quantize_weights`].
///
/// Weights are fixed one column at a time; the rounding error of each is
/// pushed onto the not-yet-rounded columns through the inverse of the
/// training Gram matrix, so the output scores on training activations move
/// as little as possible.
pub fn quantize_calibrated(w: &DecodingWeights, gram: &Gram) -> Result<(Vec<i8>, f64)> {
    let n = w.n_hidden;
    if gram.n_hidden() != n {
        return Err(Error::LengthMismatch {
            what: "gram matrix",
            expected: n,
            actual: gram.n_hidden(),
        });
    }
    let scale = global_scale(w)?;
    let mean_diag = (0..n).map(|i| gram.matrix[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let mut damping = CALIBRATION_DAMPING * mean_diag.max(1.0);
    let factor = loop {
        match inverse_factor(&gram.matrix, damping) {
            Some(l) => break l,
            None if damping < f64::MAX / 16.0 => damping *= 10.0,
            None => return Err(Error::NonFinite("gram factorization")),
        }
    };
    let limit = f64::from(WEIGHT_LIMIT);
    let mut q = Vec::with_capacity(w.data.len());
    for row in w.data.chunks(n.max(1)) {
        let mut target = row.to_vec();
        for i in 0..n {
            let level = round_half_away(target[i] / scale).clamp(-limit, limit);
            q.push(level as i8);
            let col = factor.column(i);
            let e = (target[i] - level * scale) / col[i];
            for j in i + 1..n {
                target[j] -= e * col[j];
            }
        }
    }
    Ok((q, scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedReadout {
    q: Vec<i8>,
    scale: f64,
    master_seed: u64,
    n_hidden: usize,
    mapping: StimMapping,
}

impl QuantizedReadout {
    pub fn new(
        q: Vec<i8>,
        scale: f64,
        master_seed: u64,
        n_hidden: usize,
        mapping: StimMapping,
    ) -> Result<Self> {
        check_hidden_size(n_hidden)?;
        if q.len() != NUM_CLASSES * n_hidden {
            return Err(Error::LengthMismatch {
                what: "quantized weights",
                expected: NUM_CLASSES * n_hidden,
                actual: q.len(),
            });
        }
        if let Some(bad) = q.iter().find(|v| v.abs() > WEIGHT_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "quantized weight {bad} outside [-31, 31]"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        Ok(QuantizedReadout {
            q,
            scale,
            master_seed,
            n_hidden,
            mapping,
        })
    }

    pub fn from_weights(
        w: &DecodingWeights,
        master_seed: u64,
        mapping: StimMapping,
        rounding: Rounding,
    ) -> Result<Self> {
        let (q, scale) = quantize_weights(w, rounding)?;
        QuantizedReadout::new(q, scale, master_seed, w.n_hidden, mapping)
    }

    pub fn from_weights_calibrated(
        w: &DecodingWeights,
        gram: &Gram,
        master_seed: u64,
        mapping: StimMapping,
    ) -> Result<Self> {
        let (q, scale) = quantize_calibrated(w, gram)?;
        QuantizedReadout::new(q, scale, master_seed, w.n_hidden, mapping)
    }

    pub fn q(&self) -> &[i8] {
        &self.q
    }

    pub fn q_row(&self, class: usize) -> &[i8] {
        &self.q[class * self.n_hidden..(class + 1) * self.n_hidden]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn mapping(&self) -> StimMapping {
        self.mapping
    }

    pub fn dequantized(&self) -> DecodingWeights {
        DecodingWeights {
            n_hidden: self.n_hidden,
            data: self.q.iter().map(|&v| f64::from(v) * self.scale).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.q.len());
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_hidden as u32).to_le_bytes());
        out.extend_from_slice(&self.master_seed.to_le_bytes());
        out.extend_from_slice(&self.mapping.offset.to_le_bytes());
        out.push(self.mapping.shift);
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend(self.q.iter().map(|&v| v as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        fn field<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N]> {
            bytes
                .get(at..at + N)
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| Error::model(bytes.len(), format!("file ends before field at byte {at}")))
        }
        let magic: [u8; 4] = field(bytes, 0)?;
        if magic != MODEL_MAGIC {
            return Err(Error::model(0, format!("bad magic {magic:02x?}")));
        }
        let version = u16::from_le_bytes(field(bytes, 4)?);
        if version != MODEL_VERSION {
            return Err(Error::model(
                4,
                format!("version {version}, expected {MODEL_VERSION}"),
            ));
        }
        let n_hidden = u32::from_le_bytes(field(bytes, 6)?) as usize;
        if check_hidden_size(n_hidden).is_err() {
            return Err(Error::model(
                6,
                format!("n_hidden {n_hidden} is not a positive multiple of 64"),
            ));
        }
        let master_seed = u64::from_le_bytes(field(bytes, 10)?);
        let offset = i16::from_le_bytes(field(bytes, 18)?);
        let [shift] = field::<1>(bytes, 20)?;
        let scale = f64::from_le_bytes(field(bytes, 21)?);
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::model(21, format!("scale {scale} is not positive")));
        }
        let expected = HEADER_LEN + NUM_CLASSES * n_hidden;
        if bytes.len() != expected {
            return Err(Error::model(
                bytes.len().min(expected),
                format!("file is {} bytes, expected {expected}", bytes.len()),
            ));
        }
        let mut q = Vec::with_capacity(NUM_CLASSES * n_hidden);
        for (i, &b) in bytes[HEADER_LEN..].iter().enumerate() {
            let v = b as i8;
            if v.abs() > WEIGHT_LIMIT {
                return Err(Error::model(
                    HEADER_LEN + i,
                    format!("weight {v} outside [-31, 31]"),
                ));
            }
            q.push(v);
        }
        Ok(QuantizedReadout {
            q,
            scale,
            master_seed,
            n_hidden,
            mapping: StimMapping { offset, shift },
        })
    }
}

pub fn save_model(r: &QuantizedReadout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, r.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<QuantizedReadout> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    QuantizedReadout::from_bytes(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct OutputScores {
    pub sums: [i32; NUM_CLASSES],
}

/// `sums[c] = Σ_j q[c][j] · rates[j]` in exact integer arithmetic.
pub fn accumulate(h: &ActivationColumn, r: &QuantizedReadout) -> Result<OutputScores> {
    if h.rates.len() != r.n_hidden {
        return Err(Error::LengthMismatch {
            what: "activation column",
            expected: r.n_hidden,
            actual: h.rates.len(),
        });
    }
    let mut sums = [0i32; NUM_CLASSES];
    for (c, s) in sums.iter_mut().enumerate() {
        *s = r
            .q_row(c)
            .iter()
            .zip(&h.rates)
            .map(|(&q, &rate)| i32::from(q) * i32::from(rate))
            .sum();
    }
    Ok(OutputScores { sums })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(scores: &OutputScores) -> u8 {
    argmax(&scores.sums) as u8
}

/// End-to-end fixed-point classification of one digit, with a freshly
/// seeded LFSR bank.
pub fn infer(img: &BinaryImage, r: &QuantizedReadout) -> Result<u8> {
    let mut bank = LfsrBank::new(r.master_seed);
    let stims = crate::encoder::encode_digit(img, &mut bank, r.n_hidden, r.mapping)?;
    let table = TuningTable::new(&RateNeuronParams::default());
    let h = table.activations(&stims.stim)?;
    Ok(classify(&accumulate(&h, r)?))
}

/// A model with its projection materialized, for classifying many digits.
#[derive(Clone, Debug)]
pub struct FixedPointClassifier {
    readout: QuantizedReadout,
    weights: WeightMatrix,
    table: TuningTable,
}

impl FixedPointClassifier {
    pub fn new(readout: QuantizedReadout) -> Result<Self> {
        let weights = WeightMatrix::generate(readout.master_seed, readout.n_hidden)?;
        Ok(FixedPointClassifier {
            readout,
            weights,
            table: TuningTable::new(&RateNeuronParams::default()),
        })
    }

    pub fn readout(&self) -> &QuantizedReadout {
        &self.readout
    }

    pub fn scores(&self, img: &BinaryImage) -> OutputScores {
        let stims = self.weights.encode(img, self.readout.mapping);
        let h = self
            .table
            .activations(&stims.stim)
            .expect("hidden size validated at construction");
        accumulate(&h, &self.readout).expect("lengths agree by construction")
    }

    pub fn classify(&self, img: &BinaryImage) -> u8 {
        classify(&self.scores(img))
    }

    pub fn classify_grey(&self, img: &GreyImage) -> u8 {
        self.classify(&binarize(img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_quantizes_to_zero_with_unit_scale() {
        let w = DecodingWeights::zeros(64);
        for mode in [Rounding::Nearest, Rounding::ErrorFeedback] {
            let (q, scale) = quantize_weights(&w, mode).unwrap();
            assert_eq!(scale, 1.0);
            assert!(q.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn single_entry_maps_to_full_scale() {
        let mut w = DecodingWeights::zeros(64);
        w.as_mut_slice()[70] = 0.62;
        for mode in [Rounding::Nearest, Rounding::ErrorFeedback] {
            let (q, scale) = quantize_weights(&w, mode).unwrap();
            assert!((scale - 0.02).abs() < 1e-15);
            assert_eq!(q[70], 31);
            assert_eq!(q.iter().filter(|&&v| v != 0).count(), 1);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut w = DecodingWeights::zeros(64);
        w.as_mut_slice()[3] = f64::NAN;
        assert!(matches!(
            quantize_weights(&w, Rounding::Nearest),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn error_feedback_keeps_shared_offset() {
        // 64 identical tiny weights: nearest rounding zeroes them all, the
        // carried residual keeps their sum.
        let mut data = vec![1e-3; 640];
        data[0] = 1.0;
        let w = DecodingWeights::from_rows(64, data).unwrap();
        let (q_near, _) = quantize_weights(&w, Rounding::Nearest).unwrap();
        assert_eq!(q_near[1..64].iter().map(|&v| i32::from(v)).sum::<i32>(), 0);
        let (q_fb, scale) = quantize_weights(&w, Rounding::ErrorFeedback).unwrap();
        let sum: f64 = q_fb[1..64].iter().map(|&v| f64::from(v) * scale).sum();
        assert!((sum - 63e-3).abs() <= scale);
    }

    #[test]
    fn classify_ties_and_maximum() {
        let mut s = OutputScores::default();
        assert_eq!(classify(&s), 0);
        s.sums[7] = 5;
        assert_eq!(classify(&s), 7);
        let s = OutputScores {
            sums: [1, 2, 0, 9, -4, 0, 0, 0, 9, 3],
        };
        assert_eq!(classify(&s), 3);
    }

    #[test]
    fn accumulate_edge_cases() {
        let q: Vec<i8> = (0..640).map(|i| ((i * 7) % 63) as i8 - 31).collect();
        let r = QuantizedReadout::new(q, 0.5, 1, 64, StimMapping::BINARY).unwrap();
        let zero = ActivationColumn { rates: vec![0; 64] };
        assert_eq!(accumulate(&zero, &r).unwrap().sums, [0; 10]);
        let mut unit = vec![0u8; 64];
        unit[13] = 1;
        let s = accumulate(&ActivationColumn { rates: unit }, &r).unwrap();
        for c in 0..10 {
            assert_eq!(s.sums[c], i32::from(r.q_row(c)[13]));
        }
        let short = ActivationColumn { rates: vec![0; 63] };
        assert!(matches!(
            accumulate(&short, &r),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accumulator_bound_at_extreme_size() {
        let n = 16384;
        let r = QuantizedReadout::new(
            (0..10 * n).map(|i| if i < 5 * n { 31 } else { -31 }).collect(),
            1.0,
            0,
            n,
            StimMapping::BINARY,
        )
        .unwrap();
        let h = ActivationColumn {
            rates: vec![127; n],
        };
        let s = accumulate(&h, &r).unwrap();
        assert_eq!(s.sums[0], 31 * 127 * 16384);
        assert_eq!(s.sums[9], -31 * 127 * 16384);
    }

    #[test]
    fn readout_validation() {
        assert!(QuantizedReadout::new(vec![0; 640], 1.0, 0, 64, StimMapping::BINARY).is_ok());
        assert!(QuantizedReadout::new(vec![40; 640], 1.0, 0, 64, StimMapping::BINARY).is_err());
        assert!(QuantizedReadout::new(vec![0; 640], 0.0, 0, 64, StimMapping::BINARY).is_err());
        assert!(QuantizedReadout::new(vec![0; 639], 1.0, 0, 64, StimMapping::BINARY).is_err());
        assert!(QuantizedReadout::new(vec![0; 500], 1.0, 0, 50, StimMapping::BINARY).is_err());
    }

    #[test]
    fn model_bytes_round_trip_and_corruption() {
        let q: Vec<i8> = (0..640).map(|i| (i % 63) as i8 - 31).collect();
        let r = QuantizedReadout::new(
            q,
            0.013,
            0xfeed_f00d,
            64,
            StimMapping {
                offset: -3,
                shift: 5,
            },
        )
        .unwrap();
        let bytes = r.to_bytes();
        assert_eq!(bytes.len(), 29 + 640);
        assert_eq!(&bytes[..4], b"NEFP");
        assert_eq!(QuantizedReadout::from_bytes(&bytes).unwrap(), r);

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            QuantizedReadout::from_bytes(&bad),
            Err(Error::ModelFormat { offset: 0, .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            QuantizedReadout::from_bytes(&bad),
            Err(Error::ModelFormat { offset: 4, .. })
        ));
        let mut bad = bytes.clone();
        bad[29 + 5] = 40;
        assert!(matches!(
            QuantizedReadout::from_bytes(&bad),
            Err(Error::ModelFormat { offset: 34, .. })
        ));
        assert!(QuantizedReadout::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(QuantizedReadout::from_bytes(&bytes[..10]).is_err());
    }
}
