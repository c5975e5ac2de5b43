//! SNR-controlled mixing of clean speech and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{rms, Waveform};
use crate::error::{Error, Result};

/// Peak level applied when a mixture would clip.
pub const CLIP_PEAK: f64 = 0.99;
const SILENCE_RMS: f64 = 1e-8;

/// Aligned clean reference, scaled noise and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub clean: Waveform,
    pub noise: Waveform,
    pub noisy: Waveform,
    /// Noise gain before any anti-clipping rescale.
    pub gain: f64,
}

/// Noise segment of `len` samples starting at a seed-derived offset, tiled
/// circularly when the noise is shorter.
pub fn noise_segment(noise: &[f64], len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..noise.len());
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// `noisy = clean + gain * noise_segment` with `gain` set so the
/// full-clip SNR equals `snr_db`. If anything would exceed full scale, all
/// three signals are rescaled together to peak at [`CLIP_PEAK`].
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if clean.is_empty() {
        return Err(Error::Empty("clean signal is empty".into()));
    }
    if noise.is_empty() {
        return Err(Error::Degenerate("noise signal is empty".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr {snr_db} dB is not finite")));
    }
    let segment = noise_segment(noise.samples(), clean.len(), seed);
    let (rc, rn) = (clean.rms(), rms(&segment));
    if rc < SILENCE_RMS {
        return Err(Error::Degenerate(format!("clean signal is silent (rms {rc:e})")));
    }
    if rn < SILENCE_RMS {
        return Err(Error::Degenerate(format!("noise segment is silent (rms {rn:e})")));
    }
    let gain = rc / (rn * 10f64.powf(snr_db / 20.0));
    let mut c = clean.samples().to_vec();
    let mut n: Vec<f64> = segment.iter().map(|v| v * gain).collect();
    let mut y: Vec<f64> = c.iter().zip(&n).map(|(a, b)| a + b).collect();
    let peak = y.iter().chain(&c).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let k = CLIP_PEAK / peak;
        for v in c.iter_mut().chain(n.iter_mut()).chain(y.iter_mut()) {
            *v *= k;
        }
    }
    Ok(Mixture {
        clean: Waveform::new(c)?,
        noise: Waveform::new(n)?,
        noisy: Waveform::new(y)?,
        gain,
    })
}

/// `10 log10(|clean|^2 / |noise|^2)`.
pub fn measured_snr(clean: &[f64], noise: &[f64]) -> f64 {
    let e = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    10.0 * (e(clean) / e(noise)).log10()
}
