//! Random-projection encoder.
//!
//! Forty-nine 20-bit LFSRs generate the projection weights on the fly. Each
//! clock every register produces a fresh 20-bit word that is cut into four
//! 5-bit signed weights, giving 196 weights per clock and one full 784-weight
//! neuron row every four clocks. All registers reload their seeds when a new
//! digit arrives, so every digit sees the same weight stream.

use crate::error::{Error, Result};
use crate::mnist::{BinaryImage, GreyImage, IMAGE_PIXELS};

pub const NUM_GENERATORS: usize = 49;
pub const WEIGHTS_PER_WORD: usize = 4;
pub const ROW_WEIGHTS: usize = NUM_GENERATORS * WEIGHTS_PER_WORD;
pub const ROWS_PER_NEURON: usize = IMAGE_PIXELS / ROW_WEIGHTS;
pub const CORE_SIZE: usize = 64;

pub const LFSR_BITS: u32 = 20;
pub const LFSR_MASK: u32 = (1 << LFSR_BITS) - 1;
/// Period of the x^20 + x^3 + 1 register.
pub const LFSR_PERIOD: u32 = LFSR_MASK;

const LCG_MULTIPLIER: u64 = 6364136223846793005;
const LCG_INCREMENT: u64 = 1442695040888963407;

/// A 5-bit two's-complement weight in `[-16, 15]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Weight5(i8);

impl Weight5 {
    pub const MIN: i8 = -16;
    pub const MAX: i8 = 15;

    pub fn new(value: i8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Weight5(value))
    }

    /// Sign-extend the low five bits of `bits`.
    pub fn from_bits(bits: u32) -> Self {
        let v = (bits & 0x1f) as i8;
        Weight5(if v >= 16 { v - 32 } else { v })
    }

    pub fn get(self) -> i8 {
        self.0
    }
}

/// One step of the master-seed LCG (MMIX constants).
pub fn lcg_next(x: u64) -> u64 {
    x.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT)
}

/// Expand a 64-bit master seed into the 49 nonzero 20-bit register seeds:
/// bits 43..24 of successive LCG outputs, skipping zero slices.
pub fn expand_seeds(master_seed: u64) -> [u32; NUM_GENERATORS] {
    let mut seeds = [0u32; NUM_GENERATORS];
    let mut x = master_seed;
    let mut filled = 0;
    while filled < NUM_GENERATORS {
        x = lcg_next(x);
        let slice = ((x >> 24) as u32) & LFSR_MASK;
        if slice != 0 {
            seeds[filled] = slice;
            filled += 1;
        }
    }
    seeds
}

#[inline]
fn step(state: u32) -> u32 {
    let feedback = ((state >> 19) ^ (state >> 2)) & 1;
    ((state << 1) | feedback) & LFSR_MASK
}

/// Fibonacci LFSR step for x^20 + x^3 + 1: feedback is bit 19 xor bit 2.
pub fn lfsr_step(state: u32) -> Result<u32> {
    if state & LFSR_MASK == 0 {
        return Err(Error::ZeroLfsrState);
    }
    Ok(step(state & LFSR_MASK))
}

#[inline]
fn next_word(state: u32) -> u32 {
    (0..LFSR_BITS).fold(state, |s, _| step(s))
}

#[inline]
fn split_word(word: u32) -> [Weight5; WEIGHTS_PER_WORD] {
    [
        Weight5::from_bits(word),
        Weight5::from_bits(word >> 5),
        Weight5::from_bits(word >> 10),
        Weight5::from_bits(word >> 15),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LfsrBank {
    states: [u32; NUM_GENERATORS],
    seeds: [u32; NUM_GENERATORS],
    master_seed: u64,
}

impl LfsrBank {
    /// A bank seeded from `master_seed`, already in its reloaded state.
    pub fn new(master_seed: u64) -> Self {
        let seeds = expand_seeds(master_seed);
        LfsrBank {
            states: seeds,
            seeds,
            master_seed,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn states(&self) -> &[u32; NUM_GENERATORS] {
        &self.states
    }

    pub fn seeds(&self) -> &[u32; NUM_GENERATORS] {
        &self.seeds
    }

    pub fn reload(&mut self) {
        self.states = self.seeds;
    }

    /// Advance every register by one 20-bit word and emit the 196 weights,
    /// generator-major (generator 0 slices 0..4, generator 1 slices 0..4, ...).
    pub fn next_weight_row(&mut self) -> [Weight5; ROW_WEIGHTS] {
        let mut row = [Weight5::default(); ROW_WEIGHTS];
        for (g, state) in self.states.iter_mut().enumerate() {
            *state = next_word(*state);
            row[g * WEIGHTS_PER_WORD..(g + 1) * WEIGHTS_PER_WORD]
                .copy_from_slice(&split_word(*state));
        }
        row
    }

    /// Four consecutive rows: the 784 weights of one neuron.
    pub fn next_neuron_weights(&mut self) -> [Weight5; IMAGE_PIXELS] {
        let mut out = [Weight5::default(); IMAGE_PIXELS];
        for chunk in out.chunks_exact_mut(ROW_WEIGHTS) {
            chunk.copy_from_slice(&self.next_weight_row());
        }
        out
    }
}

/// `Vin = Σ weights[i]` over the active pixels.
pub fn stimulus_raw(img: &BinaryImage, weights: &[Weight5; IMAGE_PIXELS]) -> i32 {
    img.on_pixels().map(|i| i32::from(weights[i].get())).sum()
}

/// Grey-scale variant: each 8-bit pixel multiplies its weight.
pub fn stimulus_raw_grey(img: &GreyImage, weights: &[Weight5; IMAGE_PIXELS]) -> i32 {
    img.pixels()
        .iter()
        .zip(weights)
        .map(|(&p, w)| i32::from(p) * i32::from(w.get()))
        .sum()
}

/// Affine map from the wide accumulator to an 8-bit stimulus:
/// `clamp(offset + floor(vin / 2^shift), 0, 255)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StimMapping {
    pub offset: i16,
    pub shift: u8,
}

impl StimMapping {
    pub const BINARY: StimMapping = StimMapping {
        offset: 128,
        shift: 2,
    };
    pub const GREY: StimMapping = StimMapping {
        offset: 128,
        shift: 12,
    };

    #[inline]
    pub fn apply(self, vin: i32) -> u8 {
        // Arithmetic shift is floor division by 2^shift.
        (i32::from(self.offset) + (vin >> self.shift)).clamp(0, 255) as u8
    }
}

impl Default for StimMapping {
    fn default() -> Self {
        StimMapping::BINARY
    }
}

pub fn vin_to_stim(vin: i32) -> u8 {
    StimMapping::BINARY.apply(vin)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StimulusVector {
    pub stim: Vec<u8>,
    pub raw_vin: Vec<i32>,
}

impl StimulusVector {
    pub fn len(&self) -> usize {
        self.stim.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stim.is_empty()
    }
}

pub fn check_hidden_size(n_hidden: usize) -> Result<()> {
    if n_hidden == 0 || n_hidden % CORE_SIZE != 0 {
        return Err(Error::HiddenSize(n_hidden));
    }
    Ok(())
}

/// Streaming encoder: reload the bank, then draw 784 weights per neuron in
/// order. This is the literal hardware schedule; [`WeightMatrix`] is the
/// cached equivalent used for bulk work.
pub fn encode_digit(
    img: &BinaryImage,
    bank: &mut LfsrBank,
    n_hidden: usize,
    mapping: StimMapping,
) -> Result<StimulusVector> {
    check_hidden_size(n_hidden)?;
    bank.reload();
    let raw_vin: Vec<i32> = (0..n_hidden)
        .map(|_| stimulus_raw(img, &bank.next_neuron_weights()))
        .collect();
    let stim = raw_vin.iter().map(|&v| mapping.apply(v)).collect();
    Ok(StimulusVector { stim, raw_vin })
}

/// Streaming encoder for grey-scale input.
pub fn encode_digit_grey(
    img: &GreyImage,
    bank: &mut LfsrBank,
    n_hidden: usize,
    mapping: StimMapping,
) -> Result<StimulusVector> {
    check_hidden_size(n_hidden)?;
    bank.reload();
    let raw_vin: Vec<i32> = (0..n_hidden)
        .map(|_| stimulus_raw_grey(img, &bank.next_neuron_weights()))
        .collect();
    let stim = raw_vin.iter().map(|&v| mapping.apply(v)).collect();
    Ok(StimulusVector { stim, raw_vin })
}

/// The full projection for one master seed, materialized pixel-major
/// (`data[pixel * n_hidden + neuron]`) so a digit's accumulators can be
/// built by adding one contiguous row per active pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightMatrix {
    master_seed: u64,
    n_hidden: usize,
    data: Vec<i8>,
}

impl WeightMatrix {
    pub fn generate(master_seed: u64, n_hidden: usize) -> Result<Self> {
        check_hidden_size(n_hidden)?;
        let mut bank = LfsrBank::new(master_seed);
        let mut data = vec![0i8; IMAGE_PIXELS * n_hidden];
        for neuron in 0..n_hidden {
            for (pixel, w) in bank.next_neuron_weights().iter().enumerate() {
                data[pixel * n_hidden + neuron] = w.get();
            }
        }
        Ok(WeightMatrix {
            master_seed,
            n_hidden,
            data,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn weight(&self, neuron: usize, pixel: usize) -> i8 {
        self.data[pixel * self.n_hidden + neuron]
    }

    /// Raw accumulators for a binary digit.
    pub fn raw_vin(&self, img: &BinaryImage) -> Vec<i32> {
        // |Vin| ≤ 16·784 = 12544, so 16-bit lanes cannot overflow.
        let mut acc = vec![0i16; self.n_hidden];
        for pixel in img.on_pixels() {
            let row = &self.data[pixel * self.n_hidden..(pixel + 1) * self.n_hidden];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += i16::from(w);
            }
        }
        acc.into_iter().map(i32::from).collect()
    }

    pub fn raw_vin_grey(&self, img: &GreyImage) -> Vec<i32> {
        let mut acc = vec![0i32; self.n_hidden];
        for (pixel, &p) in img.pixels().iter().enumerate().filter(|(_, &p)| p > 0) {
            let row = &self.data[pixel * self.n_hidden..(pixel + 1) * self.n_hidden];
            let p = i32::from(p);
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += p * i32::from(w);
            }
        }
        acc
    }

    pub fn encode(&self, img: &BinaryImage, mapping: StimMapping) -> StimulusVector {
        let raw_vin = self.raw_vin(img);
        let stim = raw_vin.iter().map(|&v| mapping.apply(v)).collect();
        StimulusVector { stim, raw_vin }
    }
}
