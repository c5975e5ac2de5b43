//! Classic short-time objective intelligibility.
//!
//! Follows the reference implementation step for step: Octave-compatible
//! polyphase resampling to 10 kHz, 40 dB frame VAD on the reference,
//! 256-sample Hann frames at 50% overlap, 15 one-third-octave bands from
//! 150 Hz, 30-frame segments, clipping at -15 dB SDR.

use std::f64::consts::PI;
use std::sync::OnceLock;

use realfft::RealFftPlanner;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Rational resampler by `up / down` with a Kaiser-windowed sinc designed
/// for 60 dB stopband rejection, matching Octave's `resample`.
#[derive(Clone, Debug)]
pub struct Resampler {
    up: usize,
    down: usize,
    taps: Vec<f64>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl Resampler {
    pub fn new(up: usize, down: usize) -> Result<Self> {
        if up == 0 || down == 0 {
            return Err(Error::Config("resampling factors must be positive".into()));
        }
        let g = gcd(up, down);
        let (up, down) = (up / g, down / g);
        let cutoff = 1.0 / (2.0 * up.max(down) as f64);
        let roll_off = cutoff / 10.0;
        let rejection_db = 60.0;
        let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
        let beta = 0.1102 * (rejection_db - 8.7);
        let m = (2 * half) as f64;
        let i0b = bessel_i0(beta);
        let mut taps: Vec<f64> = (-half..=half)
            .map(|t| {
                let arg = 2.0 * cutoff * t as f64;
                let sinc = if t == 0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let r = 2.0 * (t + half) as f64 / m - 1.0;
                let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                kaiser * 2.0 * up as f64 * cutoff * sinc
            })
            .collect();
        // unit DC gain per phase after upsampling
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|h| *h *= up as f64 / sum);
        Ok(Resampler { up, down, taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Output has `ceil(len * up / down)` samples; sample `i` is aligned
    /// with input time `i * down / up`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (up, down) = (self.up as i64, self.down as i64);
        let half = (self.taps.len() as i64 - 1) / 2;
        let n_out = (x.len() as i64 * up + down - 1) / down;
        let pre_pad = down - half % down;
        let pre_remove = (half + pre_pad) / down;
        let h_len = self.taps.len() as i64 + pre_pad;
        (0..n_out)
            .map(|i| {
                // y = sum_n x[n] * h_pad[(i + pre_remove) * down - n * up]
                let k = (i + pre_remove) * down;
                let n_hi = (k / up).min(x.len() as i64 - 1);
                let n_lo = ((k - h_len + 1 + up - 1).max(0)) / up;
                let mut acc = 0.0;
                for n in n_lo..=n_hi {
                    let j = k - n * up - pre_pad;
                    if j >= 0 && j < self.taps.len() as i64 {
                        acc += x[n as usize] * self.taps[j as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

fn resampler() -> &'static Resampler {
    static R: OnceLock<Resampler> = OnceLock::new();
    R.get_or_init(|| Resampler::new(STOI_RATE as usize, SAMPLE_RATE as usize).unwrap())
}

/// Symmetric Hann of `n` points without the zero end points.
fn hanning_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Drops frames whose reference energy is more than 40 dB below the
/// loudest, then overlap-adds the survivors back into signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hanning_inner(FRAME);
    let starts: Vec<usize> = (0..x.len().saturating_sub(FRAME)).step_by(HOP).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * HOP + FRAME;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// One-third-octave band edges as FFT bin ranges `[lo, hi)`.
fn band_edges() -> &'static [(usize, usize); BANDS] {
    static EDGES: OnceLock<[(usize, usize); BANDS]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let nearest = |f: f64| -> usize {
            (0..=NFFT / 2)
                .min_by(|&a, &b| {
                    let da = (a as f64 * STOI_RATE as f64 / NFFT as f64 - f).powi(2);
                    let db = (b as f64 * STOI_RATE as f64 / NFFT as f64 - f).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap()
        };
        std::array::from_fn(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
    })
}

/// Band envelopes `[frames][BANDS]` of Hann-windowed, zero-padded frames.
fn band_envelopes(x: &[f64]) -> Vec<[f64; BANDS]> {
    let w = hanning_inner(FRAME);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut input = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let edges = band_edges();
    (0..x.len().saturating_sub(FRAME))
        .step_by(HOP)
        .map(|s| {
            input.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..FRAME {
                input[i] = w[i] * x[s + i];
            }
            fft.process(&mut input, &mut spec).expect("fft buffer sizes are fixed");
            std::array::from_fn(|b| {
                let (lo, hi) = edges[b];
                spec[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
            })
        })
        .collect()
}

fn normalize(v: &mut [f64; SEGMENT]) {
    let mean = v.iter().sum::<f64>() / SEGMENT as f64;
    v.iter_mut().for_each(|e| *e -= mean);
    let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt() + f64::EPSILON;
    v.iter_mut().for_each(|e| *e /= norm);
}

/// STOI of `estimate` against `reference`, both 16 kHz, clamped to [0, 1].
pub fn stoi(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Alignment(format!(
            "stoi: estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.samples().iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("stoi: reference is silent".into()));
    }
    let x = resampler().apply(reference.samples());
    let y = resampler().apply(estimate.samples());
    let (x, y) = remove_silent_frames(&x, &y);
    let xe = band_envelopes(&x);
    let ye = band_envelopes(&y);
    if xe.len() < SEGMENT {
        return Err(Error::TooShort(format!(
            "stoi needs {SEGMENT} active frames (384 ms), found {}",
            xe.len()
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = xe.len() - SEGMENT + 1;
    let mut total = 0.0;
    for m in 0..segments {
        for b in 0..BANDS {
            let mut xs: [f64; SEGMENT] = std::array::from_fn(|j| xe[m + j][b]);
            let ys: [f64; SEGMENT] = std::array::from_fn(|j| ye[m + j][b]);
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + f64::EPSILON);
            let mut yp: [f64; SEGMENT] = std::array::from_fn(|j| (alpha * ys[j]).min(xs[j] * clip));
            normalize(&mut yp);
            normalize(&mut xs);
            total += xs.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((total / (segments * BANDS) as f64).clamp(0.0, 1.0))
}
