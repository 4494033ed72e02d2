use nef_core::encoder::*;
use nef_core::mnist::{BinaryImage, IMAGE_PIXELS};
use nef_core::neuron::{hidden_activations, RateNeuronParams};

fn data(name: &str) -> String {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn ints(line: &str) -> Vec<i64> {
    line.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

fn sample_image() -> BinaryImage {
    let bits: Vec<bool> = (0..IMAGE_PIXELS).map(|i| i % 3 == 0 || i % 7 == 0).collect();
    BinaryImage::from_bits(&bits, 0).unwrap()
}

#[test]
fn seeds_match_golden() {
    let want: Vec<i64> = data("seeds_master0.txt").lines().map(|l| l.trim().parse().unwrap()).collect();
    let got: Vec<i64> = expand_seeds(0).iter().map(|&s| i64::from(s)).collect();
    assert_eq!(got, want);
}

#[test]
fn first_neuron_weights_match_golden() {
    let want = ints(&data("weights_master0_row0.txt"));
    let mut bank = LfsrBank::new(0);
    let got: Vec<i64> = bank.next_neuron_weights().iter().map(|w| i64::from(w.get())).collect();
    assert_eq!(got, want);
}

#[test]
fn encode_matches_golden() {
    let text = data("encode_master0_n64.txt");
    let line = |tag: &str| {
        let l = text.lines().find(|l| l.starts_with(tag)).unwrap();
        ints(&l[tag.len()..])
    };
    let img = sample_image();
    let mut bank = LfsrBank::new(0);
    let sv = encode_digit(&img, &mut bank, 64, StimMapping::BINARY).unwrap();
    let vin: Vec<i64> = sv.raw_vin.iter().map(|&v| v.into()).collect();
    let stim: Vec<i64> = sv.stim.iter().map(|&v| v.into()).collect();
    assert_eq!(vin, line("vin"));
    assert_eq!(stim, line("stim"));
    let rates = hidden_activations(&sv, &RateNeuronParams::default()).unwrap();
    let rates: Vec<i64> = rates.rates.iter().map(|&v| v.into()).collect();
    assert_eq!(rates, line("rate"));
}

#[test]
fn lfsr_has_maximal_period() {
    let start = 1u32;
    let mut s = start;
    let mut steps = 0u32;
    loop {
        s = lfsr_step(s).unwrap();
        steps += 1;
        assert_ne!(s, 0);
        if s == start {
            break;
        }
        assert!(steps < LFSR_PERIOD);
    }
    assert_eq!(steps, LFSR_PERIOD);
    assert_eq!(LFSR_PERIOD, (1 << 20) - 1);
}

#[test]
fn lfsr_rejects_zero() {
    assert!(lfsr_step(0).is_err());
    assert!(lfsr_step(1 << 20).is_err());
}

#[test]
fn weight_slices_are_uniform_over_a_period() {
    // Every nonzero state appears once per period, so each 5-bit slice takes
    // every value 2^15 times except the all-zero pattern of the full state.
    let mut counts = [[0u32; 32]; 4];
    let mut s = 1u32;
    for _ in 0..LFSR_PERIOD {
        for (k, c) in counts.iter_mut().enumerate() {
            c[((s >> (5 * k)) & 0x1f) as usize] += 1;
        }
        s = lfsr_step(s).unwrap();
    }
    for c in &counts {
        assert_eq!(c[0], (1 << 15) - 1);
        assert!(c[1..].iter().all(|&n| n == 1 << 15));
    }
}

#[test]
fn weight_stream_chi_square() {
    let mut bank = LfsrBank::new(12345);
    let mut counts = [0u64; 32];
    let draws = 256;
    for _ in 0..draws {
        for w in bank.next_neuron_weights() {
            counts[(w.get() as i32 + 16) as usize] += 1;
        }
    }
    let total = (draws * IMAGE_PIXELS) as f64;
    let expected = total / 32.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 31 degrees of freedom; 61.1 is the 0.1% upper tail.
    assert!(chi2 < 61.1, "chi-square {chi2}");
}

#[test]
fn weights_stay_in_five_bit_range() {
    let w = WeightMatrix::generate(3, 128).unwrap();
    for n in 0..128 {
        for p in 0..IMAGE_PIXELS {
            assert!((-16..=15).contains(&w.weight(n, p)));
        }
    }
}

#[test]
fn streaming_and_cached_encoders_agree() {
    let img = sample_image();
    for seed in [0u64, 1, 0xdead_beef, u64::MAX] {
        let matrix = WeightMatrix::generate(seed, 192).unwrap();
        let mut bank = LfsrBank::new(seed);
        let streamed = encode_digit(&img, &mut bank, 192, StimMapping::BINARY).unwrap();
        assert_eq!(streamed, matrix.encode(&img, StimMapping::BINARY));
        // A second digit through the same bank must see the same weights.
        let again = encode_digit(&img, &mut bank, 192, StimMapping::BINARY).unwrap();
        assert_eq!(again, streamed);
    }
}

#[test]
fn distinct_seeds_give_distinct_weights() {
    let a = WeightMatrix::generate(0, 64).unwrap();
    let b = WeightMatrix::generate(1, 64).unwrap();
    assert_ne!(a, b);
}

#[test]
fn hidden_size_must_be_a_multiple_of_the_core() {
    let img = sample_image();
    let mut bank = LfsrBank::new(0);
    for n in [0usize, 1, 63, 65, 100] {
        assert!(encode_digit(&img, &mut bank, n, StimMapping::BINARY).is_err(), "{n}");
    }
    assert!(encode_digit(&img, &mut bank, 128, StimMapping::BINARY).is_ok());
}
