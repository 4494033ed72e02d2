//! Feature extraction for the four network configurations: grey or binary
//! input, tanh or fixed-point rate hidden neurons.

use crate::encoder::{StimMapping, WeightMatrix};
use crate::error::Result;
use crate::mnist::{binarize, GreyImage};
use crate::neuron::{tanh_activations, ActivationColumn, RateNeuronParams, TuningTable, TANH_DIVISOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Grey,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Tanh,
    Rate,
}

/// Grey accumulators are 2^10 times wider than binary ones (shift 12 vs 2),
/// so the tanh divisor scales by the same factor.
const GREY_TANH_FACTOR: f64 = 1024.0;

#[derive(Clone, Debug)]
pub struct FeatureMap {
    input: InputMode,
    neuron: NeuronKind,
    weights: WeightMatrix,
    table: TuningTable,
    mapping: StimMapping,
    tanh_divisor: f64,
}

impl FeatureMap {
    pub fn new(master_seed: u64, n_hidden: usize, input: InputMode, neuron: NeuronKind) -> Result<Self> {
        let (mapping, tanh_divisor) = match input {
            InputMode::Binary => (StimMapping::BINARY, TANH_DIVISOR),
            InputMode::Grey => (StimMapping::GREY, TANH_DIVISOR * GREY_TANH_FACTOR),
        };
        Ok(FeatureMap {
            input,
            neuron,
            weights: WeightMatrix::generate(master_seed, n_hidden)?,
            table: TuningTable::new(&RateNeuronParams::default()),
            mapping,
            tanh_divisor,
        })
    }

    /// The fixed-point configuration: binary input, rate neurons.
    pub fn fixed_point(master_seed: u64, n_hidden: usize) -> Result<Self> {
        Self::new(master_seed, n_hidden, InputMode::Binary, NeuronKind::Rate)
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.n_hidden()
    }

    pub fn master_seed(&self) -> u64 {
        self.weights.master_seed()
    }

    pub fn mapping(&self) -> StimMapping {
        self.mapping
    }

    pub fn input(&self) -> InputMode {
        self.input
    }

    pub fn neuron(&self) -> NeuronKind {
        self.neuron
    }

    pub fn raw_vin(&self, img: &GreyImage) -> Vec<i32> {
        match self.input {
            InputMode::Binary => self.weights.raw_vin(&binarize(img)),
            InputMode::Grey => self.weights.raw_vin_grey(img),
        }
    }

    /// Integer firing rates; meaningful for the rate-neuron kind.
    pub fn rates(&self, img: &GreyImage) -> ActivationColumn {
        let stim: Vec<u8> = self
            .raw_vin(img)
            .into_iter()
            .map(|v| self.mapping.apply(v))
            .collect();
        self.table
            .activations(&stim)
            .expect("hidden size validated at construction")
    }

    pub fn features(&self, img: &GreyImage) -> Vec<f64> {
        match self.neuron {
            NeuronKind::Rate => self.rates(img).to_f64(),
            NeuronKind::Tanh => tanh_activations(&self.raw_vin(img), self.tanh_divisor),
        }
    }
}
