use nef_core::encoder::StimMapping;
use nef_core::mnist::{BinaryImage, IMAGE_PIXELS, NUM_CLASSES};
use nef_core::neuron::{rate_neuron, ActivationColumn, RateNeuronParams};
use nef_core::readout::*;
use proptest::prelude::*;

fn readout(n_hidden: usize) -> impl Strategy<Value = QuantizedReadout> {
    (
        prop::collection::vec(-31i8..=31, NUM_CLASSES * n_hidden),
        1e-6f64..10.0,
        any::<u64>(),
        -300i16..300,
        0u8..16,
    )
        .prop_map(move |(q, scale, seed, offset, shift)| {
            QuantizedReadout::new(q, scale, seed, n_hidden, StimMapping { offset, shift }).unwrap()
        })
}

fn rates(n: usize, max: u8) -> impl Strategy<Value = ActivationColumn> {
    prop::collection::vec(0..=max, n).prop_map(|rates| ActivationColumn { rates })
}

fn weights(n_hidden: usize) -> impl Strategy<Value = DecodingWeights> {
    prop::collection::vec(-2.0f64..2.0, NUM_CLASSES * n_hidden)
        .prop_map(move |d| DecodingWeights::from_rows(n_hidden, d).unwrap())
}

proptest! {
    #[test]
    fn accumulate_is_linear(r in readout(64), a in rates(64, 127), b in rates(64, 127)) {
        let sum = ActivationColumn { rates: a.rates.iter().zip(&b.rates).map(|(x, y)| x + y).collect() };
        let (sa, sb, ss) = (accumulate(&a, &r).unwrap(), accumulate(&b, &r).unwrap(), accumulate(&sum, &r).unwrap());
        for c in 0..NUM_CLASSES {
            prop_assert_eq!(ss.sums[c], sa.sums[c] + sb.sums[c]);
        }
    }

    #[test]
    fn classification_ignores_positive_scale(r in readout(64), h in rates(64, 127), k in 1i64..100_000) {
        let s = accumulate(&h, &r).unwrap();
        let scaled: Vec<i64> = s.sums.iter().map(|&v| i64::from(v) * k).collect();
        prop_assert_eq!(argmax(&scaled), classify(&s) as usize);
        // A power-of-two scale keeps the dequantized float sums exact.
        let exact = QuantizedReadout::new(r.q().to_vec(), 0.125, 0, 64, StimMapping::BINARY).unwrap();
        let float = exact.dequantized().scores(&h.to_f64());
        prop_assert_eq!(argmax(&float), classify(&s) as usize);
    }

    #[test]
    fn nearest_rounding_error_within_half_step(w in weights(64)) {
        let (q, scale) = quantize_weights(&w, Rounding::Nearest).unwrap();
        for (x, &v) in w.as_slice().iter().zip(&q) {
            prop_assert!((-31..=31).contains(&v));
            prop_assert!((x - f64::from(v) * scale).abs() <= scale / 2.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn error_feedback_bounds(w in weights(64)) {
        let (q, scale) = quantize_weights(&w, Rounding::ErrorFeedback).unwrap();
        let tol = 1.0 + 1e-9;
        for (row_w, row_q) in w.as_slice().chunks(64).zip(q.chunks(64)) {
            let (mut real, mut quant) = (0.0, 0.0);
            for (x, &v) in row_w.iter().zip(row_q) {
                prop_assert!((x - f64::from(v) * scale).abs() <= scale * tol);
                real += x;
                quant += f64::from(v) * scale;
                prop_assert!((real - quant).abs() <= scale / 2.0 * tol);
            }
        }
    }

    #[test]
    fn model_bytes_round_trip(r in readout(128)) {
        let bytes = r.to_bytes();
        prop_assert_eq!(bytes.len(), 29 + NUM_CLASSES * 128);
        let back = QuantizedReadout::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, r);
    }

    #[test]
    fn argmax_ties_pick_lowest(v in prop::collection::vec(-5i32..5, 1..12)) {
        let best = argmax(&v);
        let max = *v.iter().max().unwrap();
        prop_assert_eq!(best, v.iter().position(|&x| x == max).unwrap());
    }
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nefp");
    let q: Vec<i8> = (0..NUM_CLASSES * 64).map(|i| (i % 63) as i8 - 31).collect();
    let r = QuantizedReadout::new(q, 0.3, 77, 64, StimMapping::BINARY).unwrap();
    save_model(&r, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), r.to_bytes());
    assert_eq!(load_model(&path).unwrap(), r);
}

#[test]
fn header_layout() {
    let q = vec![0i8; NUM_CLASSES * 64];
    let r = QuantizedReadout::new(q, 1.5, 0x0102_0304_0506_0708, 64, StimMapping { offset: -2, shift: 3 }).unwrap();
    let b = r.to_bytes();
    assert_eq!(&b[0..4], b"NEFP");
    assert_eq!(&b[4..6], &[1, 0]);
    assert_eq!(&b[6..10], &[64, 0, 0, 0]);
    assert_eq!(&b[10..18], &[8, 7, 6, 5, 4, 3, 2, 1]);
    assert_eq!(&b[18..20], &[0xfe, 0xff]);
    assert_eq!(b[20], 3);
    assert_eq!(&b[21..29], &1.5f64.to_le_bytes());
}

#[test]
fn blank_digit_matches_brute_force() {
    // A blank digit gives Vin = 0 everywhere, so every neuron sees stimulus 128.
    let blank = BinaryImage::from_bits(&[false; IMAGE_PIXELS], 0).unwrap();
    let p = RateNeuronParams::default();
    for seed in 0..8u64 {
        let q: Vec<i8> = (0..NUM_CLASSES * 128)
            .map(|i| ((i as u64 * 2654435761 + seed * 97) % 63) as i8 - 31)
            .collect();
        let r = QuantizedReadout::new(q.clone(), 1.0, seed, 128, StimMapping::BINARY).unwrap();
        let mut sums = [0i64; NUM_CLASSES];
        for (c, s) in sums.iter_mut().enumerate() {
            for j in 0..128 {
                let rate = rate_neuron(j % 64, 128, &p).unwrap();
                *s += i64::from(q[c * 128 + j]) * i64::from(rate);
            }
        }
        assert_eq!(infer(&blank, &r).unwrap() as usize, argmax(&sums));
        let fast = FixedPointClassifier::new(r).unwrap();
        assert_eq!(fast.classify(&blank) as usize, argmax(&sums));
    }
}

#[test]
fn calibrated_rounding_tracks_scores_better_than_nearest() {
    let n = 64;
    let mut x = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x
    };
    let samples: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..n).map(|_| (next() % 128) as f64).collect())
        .collect();
    let w: Vec<f64> = (0..NUM_CLASSES * n)
        .map(|_| (next() % 2001) as f64 / 1000.0 - 1.0)
        .collect();
    let w = DecodingWeights::from_rows(n, w).unwrap();
    let mut gram = Gram::new(n);
    gram.add_batch(&samples).unwrap();
    assert_eq!(gram.samples(), 400);

    let (qc, sc) = quantize_calibrated(&w, &gram).unwrap();
    let (qn, sn) = quantize_weights(&w, Rounding::Nearest).unwrap();
    assert_eq!(sc, sn);
    assert!(qc.iter().all(|v| (-31..=31).contains(v)));

    let score_error = |q: &[i8]| -> f64 {
        let d = QuantizedReadout::new(q.to_vec(), sc, 0, n, StimMapping::BINARY).unwrap().dequantized();
        samples
            .iter()
            .map(|h| {
                let (a, b) = (w.scores(h), d.scores(h));
                a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum()
    };
    assert!(score_error(&qc) < score_error(&qn));
}

#[test]
fn gram_rejects_wrong_width() {
    let mut gram = Gram::new(64);
    assert!(gram.add_batch(&[vec![0.0; 63]]).is_err());
    let w = DecodingWeights::zeros(128);
    assert!(quantize_calibrated(&w, &gram).is_err());
}

#[test]
fn accumulator_extremes_fit_in_32_bits() {
    let n = 16384;
    let h = ActivationColumn { rates: vec![127; n] };
    for sign in [31i8, -31] {
        let r = QuantizedReadout::new(vec![sign; NUM_CLASSES * n], 1.0, 0, n, StimMapping::BINARY).unwrap();
        let s = accumulate(&h, &r).unwrap();
        assert!(s.sums.iter().all(|&v| i64::from(v) == i64::from(sign) * 127 * n as i64));
    }
}
