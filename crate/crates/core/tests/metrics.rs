//! Metric values against frozen reference numbers and metric properties.

use ntse_core::datakit::mix_at_snr;
use ntse_core::datakit::synth::{file_rng, speech_like};
use ntse_core::dsp::{rms, Waveform};
use ntse_core::evalkit::{seg_snr, si_sdr, stoi, Resampler};
use proptest::prelude::*;
use rand::Rng;

const FS: f64 = 16_000.0;

/// Harmonic tone with 3.1 Hz envelope, silent for the first quarter second.
fn oracle_clean() -> Vec<f64> {
    (0..32_000)
        .map(|n| {
            if n < 4000 {
                return 0.0;
            }
            let t = n as f64 / FS;
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * 3.1 * t).cos();
            let voiced: f64 = (1..=20)
                .map(|k| (2.0 * std::f64::consts::PI * k as f64 * 140.0 * t).sin() / k as f64)
                .sum();
            0.1 * env * voiced
        })
        .collect()
}

/// 32-bit LCG, uniform in [-0.5, 0.5).
fn oracle_noise() -> Vec<f64> {
    let mut s: u64 = 12345;
    (0..32_000)
        .map(|_| {
            s = (1_664_525 * s + 1_013_904_223) % (1 << 32);
            s as f64 / 4_294_967_296.0 - 0.5
        })
        .collect()
}

fn oracle_mix(snr: f64) -> Vec<f64> {
    let (c, n) = (oracle_clean(), oracle_noise());
    let g = rms(&c) / (rms(&n) * 10f64.powf(snr / 20.0));
    c.iter().zip(&n).map(|(a, b)| a + g * b).collect()
}

fn w(v: Vec<f64>) -> Waveform {
    Waveform::new(v).unwrap()
}

#[test]
fn resampler_matches_reference_samples() {
    // scipy resample_poly with the Octave-compatible window, as used by pystoi 0.4.1
    let r = Resampler::new(10_000, 16_000).unwrap();
    let y = r.apply(&oracle_clean());
    assert_eq!(y.len(), 20_000);
    let expect = [
        (0, 0.0),
        (1, 0.0),
        (3000, 2.447_664_599_894_365_3e-9),
        (7777, -0.115_674_760_335_794_71),
        (12345, -0.029_007_432_835_256_68),
        (19999, -0.049_690_197_710_301_1),
    ];
    for (i, v) in expect {
        assert!((y[i] - v).abs() < 1e-12, "sample {i}: {} vs {v}", y[i]);
    }
}

#[test]
fn stoi_matches_reference_values() {
    // pystoi 0.4.1 on the same signals
    let clean = w(oracle_clean());
    let cases = [
        ("self", oracle_clean(), 0.999_999_999_999_962_9),
        ("10 dB", oracle_mix(10.0), 0.910_217_582_500_566_7),
        ("0 dB", oracle_mix(0.0), 0.766_190_052_736_586_5),
        ("-5 dB", oracle_mix(-5.0), 0.646_099_917_011_281),
        (
            "scaled",
            oracle_clean().iter().zip(oracle_mix(0.0)).map(|(c, m)| 0.5 * c + 0.3 * m).collect(),
            0.897_153_890_492_557,
        ),
    ];
    for (name, est, expect) in cases {
        let got = stoi(&w(est), &clean).unwrap();
        assert!((got - expect).abs() < 1e-9, "{name}: {got} vs {expect}");
    }
}

fn speech(seed: u64, secs: f64) -> Vec<f64> {
    speech_like(&mut file_rng(seed, "metric", 0), (secs * FS) as usize)
}

fn white(seed: u64, n: usize) -> Waveform {
    let mut rng = file_rng(seed, "white", 0);
    w((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn stoi_of_identity_is_one() {
    for seed in 0..5 {
        let x = w(speech(seed, 3.0));
        assert!(stoi(&x, &x).unwrap() > 0.999);
    }
}

#[test]
fn stoi_falls_strictly_with_snr() {
    for seed in 0..5 {
        let x = w(speech(seed, 3.0));
        let noise = white(seed + 100, x.len());
        let scores: Vec<f64> = [20.0, 10.0, 0.0, -10.0]
            .iter()
            .map(|&snr| {
                let m = mix_at_snr(&x, &noise, snr, seed).unwrap();
                stoi(&m.noisy, &m.clean).unwrap()
            })
            .collect();
        assert!(scores.windows(2).all(|p| p[0] > p[1]), "seed {seed}: {scores:?}");
    }
}

#[test]
fn stoi_ignores_appended_silence() {
    for seed in 0..3 {
        let x = speech(seed, 3.0);
        let noise = white(seed + 7, x.len());
        let m = mix_at_snr(&w(x), &noise, 5.0, 1).unwrap();
        let base = stoi(&m.noisy, &m.clean).unwrap();
        let pad = |v: &Waveform| {
            let mut s = v.samples().to_vec();
            s.extend(std::iter::repeat(0.0).take(16_000));
            w(s)
        };
        let padded = stoi(&pad(&m.noisy), &pad(&m.clean)).unwrap();
        assert!((base - padded).abs() < 0.01, "{base} vs {padded}");
    }
}

#[test]
fn clean_beats_every_zero_db_mixture() {
    for seed in 0..10 {
        let x = w(speech(seed, 2.0));
        let m = mix_at_snr(&x, &white(seed + 50, x.len()), 0.0, seed).unwrap();
        let c = &m.clean;
        assert!(si_sdr(c, c).unwrap() > si_sdr(&m.noisy, c).unwrap());
        assert!(stoi(c, c).unwrap() > stoi(&m.noisy, c).unwrap());
        assert!(seg_snr(c, c).unwrap() > seg_snr(&m.noisy, c).unwrap());
    }
}

/// Rotates by 2048 samples: a whole number of frames for every metric
/// (4 segSNR hops, 10 STOI hops after resampling, 256 resampler periods).
fn rotate(v: &Waveform) -> Waveform {
    let mut s = v.samples().to_vec();
    s.rotate_right(2048);
    w(s)
}

#[test]
fn metrics_are_invariant_to_a_whole_frame_shift() {
    for seed in 0..3 {
        // silent margins keep the wrap-around out of every active frame
        let mut x = vec![0.0; 4096];
        x.extend(speech(seed, 2.0));
        x.extend(vec![0.0; 4096]);
        let x = w(x);
        let noisy = mix_at_snr(&x, &white(seed, x.len()), 5.0, 3).unwrap();
        let (e, r) = (&noisy.noisy, &noisy.clean);
        let (er, rr) = (rotate(e), rotate(r));
        assert!((si_sdr(e, r).unwrap() - si_sdr(&er, &rr).unwrap()).abs() < 1e-9);
        assert!((seg_snr(e, r).unwrap() - seg_snr(&er, &rr).unwrap()).abs() < 1e-9);
        assert!((stoi(e, r).unwrap() - stoi(&er, &rr).unwrap()).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn si_sdr_is_scale_invariant(seed in 0u64..1000, a in 1e-3f64..1e3, snr in -10.0f64..30.0) {
        let x = w(speech(seed, 0.5));
        let m = mix_at_snr(&x, &white(seed, x.len()), snr, seed).unwrap();
        let base = si_sdr(&m.noisy, &m.clean).unwrap();
        let scaled = w(m.noisy.samples().iter().map(|v| a * v).collect());
        prop_assert!((si_sdr(&scaled, &m.clean).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn metric_ranges(seed in 0u64..1000, snr in -10.0f64..30.0) {
        let x = w(speech(seed, 2.0));
        let m = mix_at_snr(&x, &white(seed, x.len()), snr, seed).unwrap();
        let s = stoi(&m.noisy, &m.clean).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let d = si_sdr(&m.noisy, &m.clean).unwrap();
        prop_assert!(d.is_finite() && d.abs() <= 60.0);
        let g = seg_snr(&m.noisy, &m.clean).unwrap();
        prop_assert!((-10.0..=35.0).contains(&g));
    }
}
