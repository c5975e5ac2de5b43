//! Synthetic stand-in corpus: speech-like clean clips and 25 noise types.
//!
//! Layout under a root directory:
//!
//! ```text
//! clean/train/*.wav   clean/test/*.wav
//! noise/train/<type>/*.wav   noise/test/<type>/*.wav
//! ```
//!
//! "Speech" here is a source-filter toy: harmonic vowels with formant
//! envelopes, fricative bursts and pauses. It has the temporal and spectral
//! structure a mask estimator needs, nothing more.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::wav::write_wav;
use crate::dsp::{rms, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const FS: f64 = SAMPLE_RATE as f64;

pub const TRAIN_NOISE_TYPES: [&str; 21] = [
    "aircon", "brown", "chirps", "crackle", "drone", "engine", "fan", "hum", "machine", "pink",
    "pulses", "rain", "rumble", "sawtooth", "siren", "static", "steam", "tonal", "traffic",
    "white", "wind",
];
pub const TEST_NOISE_TYPES: [&str; 4] = ["announcement", "babble", "squeak", "typing"];

const VOWELS: [[f64; 3]; 7] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [440.0, 1020.0, 2240.0],
    [570.0, 840.0, 2410.0],
];

/// RBJ biquad section, direct form I.
#[derive(Clone, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a: [f64; 2]) -> Self {
        Biquad {
            b: b.map(|v| v / a0),
            a: a.map(|v| v / a0),
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn bandpass(center: f64, q: f64) -> Self {
        let w = 2.0 * PI * center / FS;
        let alpha = w.sin() / (2.0 * q);
        Biquad::new([alpha, 0.0, -alpha], 1.0 + alpha, [-2.0 * w.cos(), 1.0 - alpha])
    }

    fn lowpass(cutoff: f64, q: f64) -> Self {
        let w = 2.0 * PI * cutoff / FS;
        let (c, alpha) = (w.cos(), w.sin() / (2.0 * q));
        Biquad::new([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    fn highpass(cutoff: f64, q: f64) -> Self {
        let w = 2.0 * PI * cutoff / FS;
        let (c, alpha) = (w.cos(), w.sin() / (2.0 * q));
        Biquad::new([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }

    fn run(mut self, xs: &mut [f64]) {
        for x in xs {
            *x = self.tick(*x);
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}

/// Raised-cosine attack and release of `ramp` samples on each end.
fn fade(x: &mut [f64], ramp: usize) {
    let n = x.len();
    let ramp = ramp.min(n / 2);
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

fn tone(freq: impl Fn(f64) -> f64, n: usize, phase0: f64) -> Vec<f64> {
    let mut phase = phase0;
    (0..n)
        .map(|i| {
            let v = phase.sin();
            phase += 2.0 * PI * freq(i as f64 / FS) / FS;
            v
        })
        .collect()
}

/// One voice: f0 range and formant scale.
#[derive(Clone, Copy, Debug)]
struct Voice {
    f0: f64,
    formant_scale: f64,
}

impl Voice {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Voice {
            f0: rng.gen_range(95.0..240.0),
            formant_scale: rng.gen_range(0.9..1.2),
        }
    }
}

fn vowel(rng: &mut ChaCha8Rng, voice: Voice, n: usize) -> Vec<f64> {
    let formants = VOWELS[rng.gen_range(0..VOWELS.len())].map(|f| f * voice.formant_scale);
    let widths = [rng.gen_range(60.0..110.0), rng.gen_range(90.0..150.0), rng.gen_range(120.0..200.0)];
    let gains = [1.0, 0.6, 0.3];
    let f0 = voice.f0 * rng.gen_range(0.85..1.15);
    let slope = rng.gen_range(-0.25..0.1);
    let vib = rng.gen_range(3.0..6.0);
    let dur = n as f64 / FS;
    let contour = |t: f64| f0 * (1.0 + slope * t / dur.max(1e-3)) * (1.0 + 0.01 * (2.0 * PI * vib * t).sin());
    let mut out = vec![0.0; n];
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        let f = contour(i as f64 / FS);
        let mut s = 0.0;
        let mut k = 1;
        while (k as f64) * f < 4000.0 {
            let h = k as f64 * f;
            let env: f64 = (0..3)
                .map(|j| gains[j] / (1.0 + ((h - formants[j]) / widths[j]).powi(2)))
                .sum();
            s += env / (k as f64).sqrt() * (k as f64 * phase).sin();
            k += 1;
        }
        *o = s;
        phase = (phase + 2.0 * PI * f / FS) % (2.0 * PI);
    }
    out
}

fn fricative(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x = gauss(rng, n);
    Biquad::bandpass(rng.gen_range(2500.0..6000.0), rng.gen_range(1.0..3.0)).run(&mut x);
    x
}

fn utterance(rng: &mut ChaCha8Rng, voice: Voice, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.05..0.3) * FS) as usize;
    while pos < len {
        if rng.gen_bool(0.35) {
            let n = (rng.gen_range(0.04..0.1) * FS) as usize;
            let mut f = fricative(rng, n);
            scale_to_rms(&mut f, 0.25);
            fade(&mut f, n / 4);
            for (o, v) in out[pos..].iter_mut().zip(&f) {
                *o += v;
            }
            pos += n;
        }
        let n = (rng.gen_range(0.12..0.32) * FS) as usize;
        let mut v = vowel(rng, voice, n);
        scale_to_rms(&mut v, rng.gen_range(0.5..1.0));
        fade(&mut v, n / 5);
        for (o, s) in out.iter_mut().skip(pos).zip(&v) {
            *o += s;
        }
        pos += n;
        let pause = if rng.gen_bool(0.15) {
            rng.gen_range(0.25..0.5)
        } else {
            rng.gen_range(0.02..0.12)
        };
        pos += (pause * FS) as usize;
    }
    out
}

/// A speech-like clip of `len` samples, RMS drawn from [0.05, 0.12].
pub fn speech_like(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let voice = Voice::random(rng);
    let mut x = utterance(rng, voice, len);
    let target = rng.gen_range(0.05..0.12);
    scale_to_rms(&mut x, target);
    x
}

fn impulses(rng: &mut ChaCha8Rng, len: usize, rate: f64, burst: impl Fn(&mut ChaCha8Rng) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.gen::<f64>()).ln() / rate;
        let pos = (t * FS) as usize;
        if pos >= len {
            break;
        }
        let b = burst(rng);
        for (o, v) in out[pos..].iter_mut().zip(&b) {
            *o += v;
        }
    }
    out
}

fn decaying(rng: &mut ChaCha8Rng, n: usize, center: f64, q: f64, tau: f64) -> Vec<f64> {
    let mut x = gauss(rng, n);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= (-(i as f64) / (tau * FS)).exp();
    }
    Biquad::bandpass(center, q).run(&mut x);
    x
}

/// Slowly varying positive gain with period around `secs`.
fn slow_gain(rng: &mut ChaCha8Rng, len: usize, secs: f64, depth: f64) -> Vec<f64> {
    let (f1, f2) = (1.0 / secs * rng.gen_range(0.7..1.3), 1.0 / secs * rng.gen_range(1.7..2.5));
    let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    (0..len)
        .map(|i| {
            let t = i as f64 / FS;
            1.0 + depth * (0.6 * (2.0 * PI * f1 * t + p1).sin() + 0.4 * (2.0 * PI * f2 * t + p2).sin())
        })
        .collect()
}

fn harmonics(rng: &mut ChaCha8Rng, len: usize, f0: f64, count: usize, decay: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for k in 1..=count {
        let amp = decay.powi(k as i32 - 1);
        let ph = rng.gen_range(0.0..2.0 * PI);
        for (o, v) in out.iter_mut().zip(tone(|_| f0 * k as f64, len, ph)) {
            *o += amp * v;
        }
    }
    out
}

fn add(a: &mut [f64], b: &[f64], g: f64) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += g * y);
}

fn noise_samples(kind: &str, rng: &mut ChaCha8Rng, len: usize) -> Option<Vec<f64>> {
    let x = match kind {
        "white" => gauss(rng, len),
        "pink" => {
            // Kellet's economy filter
            let mut b = [0.0; 3];
            gauss(rng, len)
                .into_iter()
                .map(|w| {
                    b[0] = 0.99765 * b[0] + w * 0.0990460;
                    b[1] = 0.96300 * b[1] + w * 0.2965164;
                    b[2] = 0.57000 * b[2] + w * 1.0526913;
                    b[0] + b[1] + b[2] + w * 0.1848
                })
                .collect()
        }
        "brown" => {
            let mut acc = 0.0;
            gauss(rng, len)
                .into_iter()
                .map(|w| {
                    acc = 0.995 * acc + 0.1 * w;
                    acc
                })
                .collect()
        }
        "rumble" => {
            let mut x = gauss(rng, len);
            Biquad::lowpass(rng.gen_range(80.0..160.0), 0.9).run(&mut x);
            x
        }
        "static" => {
            let mut x = gauss(rng, len);
            Biquad::highpass(rng.gen_range(3000.0..4500.0), 0.7).run(&mut x);
            x
        }
        "steam" => {
            let mut x = gauss(rng, len);
            Biquad::bandpass(rng.gen_range(3000.0..5000.0), 0.8).run(&mut x);
            let g = slow_gain(rng, len, 1.5, 0.4);
            x.iter_mut().zip(&g).for_each(|(v, g)| *v *= g);
            x
        }
        "aircon" => {
            let mut x = gauss(rng, len);
            Biquad::lowpass(rng.gen_range(700.0..1200.0), 0.7).run(&mut x);
            scale_to_rms(&mut x, 1.0);
            add(&mut x, &harmonics(rng, len, 60.0, 4, 0.6), 0.2);
            x
        }
        "fan" => {
            let mut x = gauss(rng, len);
            Biquad::bandpass(rng.gen_range(350.0..700.0), 1.2).run(&mut x);
            scale_to_rms(&mut x, 1.0);
            let blade = rng.gen_range(150.0..260.0);
            add(&mut x, &harmonics(rng, len, blade, 3, 0.5), 0.5);
            x
        }
        "hum" => {
            let mains = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
            harmonics(rng, len, mains, 12, 0.8)
        }
        "drone" => {
            let f0 = rng.gen_range(90.0..140.0);
            let mut x = harmonics(rng, len, f0, 8, 0.75);
            let g = slow_gain(rng, len, 3.0, 0.3);
            x.iter_mut().zip(&g).for_each(|(v, g)| *v *= g);
            x
        }
        "tonal" => {
            let mut x = vec![0.0; len];
            for _ in 0..3 {
                let f = rng.gen_range(300.0..3500.0);
                let (ph, g) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0));
                add(&mut x, &tone(|_| f, len, ph), g);
            }
            x
        }
        "sawtooth" => {
            let f0 = rng.gen_range(200.0..400.0);
            let mut phase = rng.gen::<f64>();
            (0..len)
                .map(|i| {
                    let f = f0 * (1.0 + 0.02 * (2.0 * PI * 5.0 * i as f64 / FS).sin());
                    phase = (phase + f / FS) % 1.0;
                    2.0 * phase - 1.0
                })
                .collect()
        }
        "siren" => {
            let (lo, hi) = (rng.gen_range(500.0..700.0), rng.gen_range(1100.0..1500.0));
            let period = rng.gen_range(1.5..3.0);
            tone(
                |t| lo + (hi - lo) * (0.5 - 0.5 * (2.0 * PI * t / period).cos()),
                len,
                rng.gen_range(0.0..2.0 * PI),
            )
        }
        "chirps" => impulses(rng, len, 3.0, |r| {
            let n = (r.gen_range(0.08..0.2) * FS) as usize;
            let (a, b) = (r.gen_range(1000.0..2500.0), r.gen_range(2500.0..5000.0));
            let d = n as f64 / FS;
            let mut c = tone(|t| a + (b - a) * t / d, n, 0.0);
            fade(&mut c, n / 8);
            c
        }),
        "pulses" => {
            let f = rng.gen_range(700.0..1500.0);
            let (on, off) = (rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.2));
            let mut x = tone(|_| f, len, 0.0);
            for (i, v) in x.iter_mut().enumerate() {
                let t = (i as f64 / FS) % (on + off);
                if t >= on {
                    *v = 0.0;
                }
            }
            x
        }
        "crackle" => impulses(rng, len, 40.0, |r| {
            let n = r.gen_range(4..40);
            let a = r.gen_range(0.2..1.5) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            (0..n).map(|i| a * (-(i as f64) / 6.0).exp()).collect()
        }),
        "rain" => {
            let mut x = impulses(rng, len, 150.0, |r| {
                let c = r.gen_range(2000.0..7000.0);
                decaying(r, 160, c, 4.0, 0.003)
            });
            let mut bed = gauss(rng, len);
            Biquad::highpass(1500.0, 0.7).run(&mut bed);
            scale_to_rms(&mut x, 1.0);
            add(&mut x, &bed, 0.3);
            x
        }
        "machine" => {
            let period = rng.gen_range(0.2..0.45);
            let center = rng.gen_range(600.0..1800.0);
            let mut x = vec![0.0; len];
            let mut pos = 0;
            while pos < len {
                let b = decaying(rng, 2400, center, 6.0, 0.03);
                add(&mut x[pos..], &b, 1.0);
                pos += (period * FS) as usize;
            }
            let mut bed = gauss(rng, len);
            Biquad::lowpass(400.0, 0.7).run(&mut bed);
            add(&mut x, &bed, 0.05);
            x
        }
        "engine" => {
            let rpm = rng.gen_range(25.0..45.0);
            let mut phase = 0.0;
            let mut x: Vec<f64> = (0..len)
                .map(|i| {
                    let f = rpm * (1.0 + 0.1 * (2.0 * PI * 0.3 * i as f64 / FS).sin());
                    phase = (phase + f / FS) % 1.0;
                    if phase < 0.1 { 1.0 } else { 0.0 }
                })
                .collect();
            Biquad::lowpass(600.0, 1.0).run(&mut x);
            scale_to_rms(&mut x, 1.0);
            let mut bed = gauss(rng, len);
            Biquad::lowpass(300.0, 0.7).run(&mut bed);
            scale_to_rms(&mut bed, 1.0);
            add(&mut x, &bed, 0.5);
            x
        }
        "traffic" => {
            let mut x = gauss(rng, len);
            Biquad::lowpass(rng.gen_range(400.0..900.0), 0.7).run(&mut x);
            let g = slow_gain(rng, len, 4.0, 0.7);
            x.iter_mut().zip(&g).for_each(|(v, g)| *v *= g.max(0.1));
            x
        }
        "wind" => {
            let w = gauss(rng, len);
            let sweep = slow_gain(rng, len, 2.5, 0.6);
            let base = rng.gen_range(300.0..700.0);
            // time-varying bandpass, coefficients refreshed every 64 samples
            let mut f = Biquad::bandpass(base, 2.0);
            let mut out = Vec::with_capacity(len);
            for (i, v) in w.into_iter().enumerate() {
                if i % 64 == 0 {
                    let next = Biquad::bandpass(base * sweep[i].max(0.2), 2.0);
                    f.b = next.b;
                    f.a = next.a;
                }
                out.push(f.tick(v) * sweep[i].max(0.1));
            }
            out
        }
        "babble" => {
            let mut x = vec![0.0; len];
            for _ in 0..rng.gen_range(4..7) {
                let v = Voice::random(rng);
                let mut u = utterance(rng, v, len);
                scale_to_rms(&mut u, 1.0);
                add(&mut x, &u, 1.0);
            }
            x
        }
        "typing" => impulses(rng, len, 7.0, |r| {
            let c = r.gen_range(1800.0..3500.0);
            let mut k = decaying(r, 400, c, 3.0, 0.004);
            if r.gen_bool(0.7) {
                // key release
                let gap = (r.gen_range(0.06..0.12) * FS) as usize;
                k.resize(gap, 0.0);
                let c = r.gen_range(2500.0..4500.0);
                k.extend(decaying(r, 300, c, 3.0, 0.003));
            }
            k
        }),
        "squeak" => impulses(rng, len, 2.5, |r| {
            let n = (r.gen_range(0.1..0.35) * FS) as usize;
            let (a, b) = (r.gen_range(1500.0..3000.0), r.gen_range(2500.0..4500.0));
            let d = n as f64 / FS;
            let wob = r.gen_range(15.0..40.0);
            let mut c = tone(|t| a + (b - a) * t / d + 80.0 * (2.0 * PI * wob * t).sin(), n, 0.0);
            fade(&mut c, n / 6);
            c
        }),
        "announcement" => {
            let voice = Voice::random(rng);
            let mut x = utterance(rng, voice, len);
            Biquad::highpass(300.0, 0.7).run(&mut x);
            Biquad::lowpass(3400.0, 0.7).run(&mut x);
            scale_to_rms(&mut x, 1.0);
            let mut pos = 0;
            let period = (rng.gen_range(2.0..3.0) * FS) as usize;
            while pos < len {
                for (j, f) in [660.0, 550.0, 440.0].into_iter().enumerate() {
                    let n = (0.3 * FS) as usize;
                    let mut c = tone(|_| f, n, 0.0);
                    fade(&mut c, n / 3);
                    let at = pos + j * n;
                    if at < len {
                        add(&mut x[at..], &c, 1.5);
                    }
                }
                pos += period;
            }
            x
        }
        _ => return None,
    };
    Some(x)
}

/// Noise clip of kind `kind`, normalized to RMS 0.1.
pub fn noise_like(kind: &str, rng: &mut ChaCha8Rng, len: usize) -> Result<Vec<f64>> {
    let mut x = noise_samples(kind, rng, len)
        .ok_or_else(|| Error::Config(format!("unknown synthetic noise type {kind:?}")))?;
    scale_to_rms(&mut x, 0.1);
    Ok(x)
}

/// Per-file RNG stream derived from the corpus seed and a tag.
pub fn file_rng(seed: u64, tag: &str, index: usize) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(index.to_le_bytes()) {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub clean_train: usize,
    pub clean_test: usize,
    pub clip_seconds: f64,
    pub noise_files: usize,
    pub noise_seconds: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            clean_train: 330,
            clean_test: 40,
            clip_seconds: 4.0,
            noise_files: 3,
            noise_seconds: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorpusLayout {
    pub root: PathBuf,
}

impl CorpusLayout {
    pub fn clean_train(&self) -> PathBuf {
        self.root.join("clean").join("train")
    }

    pub fn clean_test(&self) -> PathBuf {
        self.root.join("clean").join("test")
    }

    pub fn noise(&self) -> PathBuf {
        self.root.join("noise")
    }
}

fn write_clip(dir: &Path, name: &str, samples: Vec<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let samples = if peak > 0.99 {
        samples.into_iter().map(|v| v * 0.99 / peak).collect()
    } else {
        samples
    };
    write_wav(&dir.join(name), &Waveform::new(samples)?)
}

/// Writes the whole synthetic corpus under `root`. Every file has its own
/// RNG stream, so output bytes depend only on `cfg`.
pub fn generate_corpus(root: &Path, cfg: &CorpusConfig) -> Result<CorpusLayout> {
    if cfg.clip_seconds <= 0.0 || cfg.noise_seconds <= 0.0 || cfg.noise_files == 0 {
        return Err(Error::Config("corpus sizes must be positive".into()));
    }
    let layout = CorpusLayout { root: root.to_path_buf() };
    let clip = (cfg.clip_seconds * FS) as usize;
    let noise_len = (cfg.noise_seconds * FS) as usize;

    let mut jobs: Vec<(PathBuf, String, String, usize)> = Vec::new();
    for (dir, tag, n) in [
        (layout.clean_train(), "clean-train", cfg.clean_train),
        (layout.clean_test(), "clean-test", cfg.clean_test),
    ] {
        jobs.extend((0..n).map(|i| (dir.clone(), tag.to_owned(), format!("{tag}-{i:04}.wav"), i)));
    }
    for (split, types) in [("train", &TRAIN_NOISE_TYPES[..]), ("test", &TEST_NOISE_TYPES[..])] {
        for kind in types {
            let dir = layout.noise().join(split).join(kind);
            jobs.extend((0..cfg.noise_files).map(|i| (dir.clone(), kind.to_string(), format!("{kind}-{i:02}.wav"), i)));
        }
    }

    jobs.par_iter()
        .map(|(dir, tag, name, i)| {
            let mut rng = file_rng(cfg.seed, tag, *i);
            let samples = if tag.starts_with("clean") {
                speech_like(&mut rng, clip)
            } else {
                noise_like(tag, &mut rng, noise_len)?
            };
            write_clip(dir, name, samples)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(layout)
}
