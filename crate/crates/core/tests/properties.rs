//! Randomized invariants of the signal path, the loss, mixing and the
//! tensor kernels.

use ntse_core::datakit::wav::pcm16_exact;
use ntse_core::datakit::{measured_snr, mix_at_snr, read_wav, write_wav};
use ntse_core::dsp::{istft, stft, StftParams, Waveform};
use ntse_core::enhancer::{apply_mask, ideal_ratio_mask, compressed_loss, LossConfig, SoftMask};
use ntse_core::tensor::clip_grad_norm;
use ntse_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wave(len: usize, seed: u64, amp: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masking_never_amplifies(len in 600usize..6000, seed in any::<u64>()) {
        let spec = stft(&wave(len, seed, 0.5), StftParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mask = SoftMask::new(
            spec.frames,
            spec.bins,
            (0..spec.frames * spec.bins).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        )
        .unwrap();
        let out = apply_mask(&mask, &spec).unwrap();
        for ((y, z), m) in out.data.iter().zip(&spec.data).zip(&mask.data) {
            prop_assert!(y.norm() <= z.norm());
            prop_assert!((y - z * *m).norm() == 0.0);
        }
    }

    #[test]
    fn loss_is_non_negative_and_zero_at_the_target(len in 600usize..6000, seed in any::<u64>()) {
        let p = StftParams::default();
        let clean = stft(&wave(len, seed, 0.5), p).unwrap();
        let other = stft(&wave(len, seed ^ 7, 0.5), p).unwrap();
        let cfg = LossConfig::default();
        prop_assert!(compressed_loss(&other, &clean, &cfg).unwrap() >= 0.0);
        prop_assert!(compressed_loss(&clean, &clean, &cfg).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ratio_mask_lies_in_unit_interval(len in 600usize..6000, seed in any::<u64>()) {
        let p = StftParams::default();
        let clean = wave(len, seed, 0.3);
        let noise = wave(len, seed ^ 3, 0.3);
        let noisy = Waveform::new(clean.samples().iter().zip(noise.samples()).map(|(a, b)| a + b).collect()).unwrap();
        let m = ideal_ratio_mask(&stft(&clean, p).unwrap(), &stft(&noisy, p).unwrap()).unwrap();
        prop_assert!(m.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mixtures_hit_the_requested_snr(snr in -10.0f64..25.0, seed in any::<u64>(), amp in 0.01f64..2.0) {
        let clean = wave(8000, seed, 0.5);
        let noise = wave(3000, seed ^ 5, amp);
        let mix = mix_at_snr(&clean, &noise, snr, seed).unwrap();
        prop_assert!((measured_snr(mix.clean.samples(), mix.noise.samples()) - snr).abs() < 1e-9);
        prop_assert!(mix.noisy.peak() <= 1.0);
        for ((y, c), n) in mix.noisy.samples().iter().zip(mix.clean.samples()).zip(mix.noise.samples()) {
            prop_assert!((y - (c + n)).abs() < 1e-15);
        }
    }

    #[test]
    fn stft_round_trip(len in 1usize..5000, seed in any::<u64>()) {
        let x = wave(len, seed, 1.0);
        let back = istft(&stft(&x, StftParams::default()).unwrap()).unwrap();
        prop_assert_eq!(back.len(), len);
        let err = x.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "max error {}", err);
    }

    #[test]
    fn pcm16_wav_round_trip(len in 1usize..4000, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = pcm16_exact(&wave(len, seed, 1.0));
        write_wav(&path, &w).unwrap();
        prop_assert_eq!(read_wav(&path).unwrap(), w);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..20, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-scale..scale)));
        let y = tape.value(tape.softmax(x, 1).unwrap());
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn tensor_length_matches_shape(a in 0usize..5, b in 0usize..5, extra in 1usize..3) {
        prop_assert!(Tensor::new(&[a, b], vec![0.0; a * b]).is_ok());
        prop_assert!(Tensor::new(&[a, b], vec![0.0; a * b + extra]).is_err());
    }

    #[test]
    fn clipped_gradients_respect_the_bound(seed in any::<u64>(), max in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grads: Vec<Vec<f64>> = (0..4).map(|i| (0..i * 7 + 1).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let before = grads.clone();
        let norm = clip_grad_norm(&mut grads, max);
        let after = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        prop_assert!(after <= max * (1.0 + 1e-12));
        if norm <= max {
            prop_assert_eq!(grads, before);
        }
    }
}
