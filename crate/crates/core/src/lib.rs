//! Fixed-point Neural Engineering Framework classifier.
//!
//! A digit is projected through LFSR-generated 5-bit random weights onto
//! 8-bit stimuli ([`encoder`]), passed through 64-neuron cores of piecewise
//! linear rate neurons ([`neuron`]), and read out by ten integer output
//! neurons with 6-bit decoding weights ([`readout`]). Decoding weights are
//! learned online with full or diagonal OPIUM ([`trainer`]).

pub mod encoder;
pub mod error;
pub mod experiments;
pub mod hardware;
pub mod mnist;
pub mod neuron;
pub mod pipeline;
pub mod readout;
pub mod trainer;

pub use error::{Error, Result};
