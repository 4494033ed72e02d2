#![allow(dead_code)]

use nalgebra::DMatrix;
use nef_core::mnist::{Dataset, GreyImage, Split, IMAGE_PIXELS, NUM_CLASSES};
use nef_core::readout::DecodingWeights;

/// splitmix64, enough for reproducible test fixtures.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            v.swap(i, j);
        }
    }
}

/// `Y Hᵀ (H Hᵀ + I)⁻¹` with samples as columns of `H`.
pub fn ridge(samples: &[(Vec<f64>, [f64; NUM_CLASSES])]) -> DecodingWeights {
    let n = samples[0].0.len();
    let m = samples.len();
    let h = DMatrix::from_fn(n, m, |i, k| samples[k].0[i]);
    let y = DMatrix::from_fn(NUM_CLASSES, m, |c, k| samples[k].1[c]);
    let a = &h * h.transpose() + DMatrix::identity(n, n);
    // W A = Y Hᵀ, solved as A Wᵀ = H Yᵀ since A is symmetric.
    let wt = a.lu().solve(&(&h * y.transpose())).expect("ridge system is nonsingular");
    let data: Vec<f64> = (0..NUM_CLASSES).flat_map(|c| (0..n).map(move |i| (c, i))).map(|(c, i)| wt[(i, c)]).collect();
    DecodingWeights::from_rows(n, data).unwrap()
}

/// Digits drawn around one fixed random stroke pattern per class.
pub fn synthetic_digits(count: usize, seed: u64, split: Split) -> Dataset {
    let mut proto_rng = Rng::new(0xd161_7000);
    let prototypes: Vec<Vec<bool>> = (0..NUM_CLASSES)
        .map(|_| (0..IMAGE_PIXELS).map(|_| proto_rng.below(5) == 0).collect())
        .collect();
    let mut rng = Rng::new(seed);
    let images = (0..count)
        .map(|i| {
            let label = (i % NUM_CLASSES) as u8;
            let pixels: Vec<u8> = prototypes[label as usize]
                .iter()
                .map(|&on| {
                    let flip = rng.below(10) == 0;
                    if on != flip {
                        1 + rng.below(255) as u8
                    } else {
                        0
                    }
                })
                .collect();
            GreyImage::new(&pixels, label).unwrap()
        })
        .collect();
    Dataset::new(images, split)
}
