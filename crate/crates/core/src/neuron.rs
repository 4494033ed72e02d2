//! Fixed-point "broken-stick" rate neurons.
//!
//! Every 64-neuron core shares one family of tuning curves. For neuron index
//! `n` and stimulus `s`:
//!
//! ```text
//! T      = 255 - (s + 4n)   if n < 32
//!          s + 4n           otherwise
//! F_rate = clamp(floor(2·n·T / 64), 0, 127)
//! ```
//!
//! The first half of a core fires for low stimuli, the second half for high
//! ones. The 7-bit output register saturates at 127.

use std::io::Write;

use crate::encoder::{StimulusVector, CORE_SIZE};
use crate::error::{Error, Result};

pub const STIM_LEVELS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateNeuronParams {
    pub core_size: u32,
    pub max_stim: u32,
    pub rate_cap: u32,
}

impl Default for RateNeuronParams {
    fn default() -> Self {
        RateNeuronParams {
            core_size: CORE_SIZE as u32,
            max_stim: 255,
            rate_cap: 127,
        }
    }
}

#[inline]
fn rate_unchecked(n_index: i64, stim: i64, params: &RateNeuronParams) -> u8 {
    let core = i64::from(params.core_size);
    let t = if n_index < core / 2 {
        i64::from(params.max_stim) - (stim + 4 * n_index)
    } else {
        stim + 4 * n_index
    };
    (2 * n_index * t)
        .div_euclid(core)
        .clamp(0, i64::from(params.rate_cap)) as u8
}

pub fn rate_neuron(n_index: usize, stim: u32, params: &RateNeuronParams) -> Result<u8> {
    if n_index >= params.core_size as usize {
        return Err(Error::NeuronIndex {
            index: n_index,
            core_size: params.core_size as usize,
        });
    }
    if stim > params.max_stim {
        return Err(Error::StimulusRange {
            stim,
            max_stim: params.max_stim,
        });
    }
    Ok(rate_unchecked(n_index as i64, i64::from(stim), params))
}

/// Tuning curves of one core: `rows[n][s]` is the rate of neuron `n` at
/// stimulus `s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TuningTable {
    rows: Vec<[u8; STIM_LEVELS]>,
}

impl TuningTable {
    pub fn new(params: &RateNeuronParams) -> Self {
        let rows = (0..params.core_size as i64)
            .map(|n| {
                let mut row = [0u8; STIM_LEVELS];
                for (s, r) in row.iter_mut().enumerate() {
                    *r = if s as u32 <= params.max_stim {
                        rate_unchecked(n, s as i64, params)
                    } else {
                        0
                    };
                }
                row
            })
            .collect();
        TuningTable { rows }
    }

    pub fn core_size(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[u8; STIM_LEVELS]] {
        &self.rows
    }

    #[inline]
    pub fn rate(&self, n_index: usize, stim: u8) -> u8 {
        self.rows[n_index][usize::from(stim)]
    }

    /// Rates for a whole hidden layer; neuron `j` uses curve `j % 64`.
    pub fn activations(&self, stim: &[u8]) -> Result<ActivationColumn> {
        let core = self.rows.len();
        if stim.is_empty() || stim.len() % core != 0 {
            return Err(Error::HiddenSize(stim.len()));
        }
        let rates = stim
            .chunks_exact(core)
            .flat_map(|block| block.iter().zip(&self.rows).map(|(&s, row)| row[usize::from(s)]))
            .collect();
        Ok(ActivationColumn { rates })
    }

    /// CSV with one row per neuron and one column per stimulus level.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..STIM_LEVELS).map(|s| format!("s{s}")).collect();
        writeln!(out, "neuron,{}", header.join(","))?;
        for (n, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            writeln!(out, "{n},{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn tuning_table(params: &RateNeuronParams) -> TuningTable {
    TuningTable::new(params)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationColumn {
    pub rates: Vec<u8>,
}

impl ActivationColumn {
    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.rates.iter().map(|&r| f64::from(r)).collect()
    }
}

pub fn hidden_activations(stims: &StimulusVector, params: &RateNeuronParams) -> Result<ActivationColumn> {
    TuningTable::new(params).activations(&stims.stim)
}

pub const TANH_DIVISOR: f64 = 512.0;

/// Floating-point reference neurons: `tanh(vin / divisor)`.
pub fn tanh_activations(raw_vin: &[i32], divisor: f64) -> Vec<f64> {
    raw_vin.iter().map(|&v| (f64::from(v) / divisor).tanh()).collect()
}
