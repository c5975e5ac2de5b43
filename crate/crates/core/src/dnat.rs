//! Causal noise PSD tracking (minima-controlled recursive averaging family),
//! used as the externally estimated noise embedding baseline.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor added before taking the log of the PSD track.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DnatConfig {
    /// Periodogram smoothing.
    pub eta: f64,
    /// Presence threshold on the ratio of smoothed power to its minimum.
    pub delta: f64,
    /// Presence probability smoothing.
    pub alpha_p: f64,
    /// Base noise update smoothing.
    pub alpha_d: f64,
    /// Minimum tracking constants.
    pub gamma: f64,
    pub beta: f64,
    /// Freeze the noise update on frames where the instantaneous presence
    /// indicator fires, not only in proportion to the smoothed probability.
    pub hard_gate: bool,
}

impl Default for DnatConfig {
    fn default() -> Self {
        DnatConfig {
            eta: 0.7,
            delta: 5.0,
            alpha_p: 0.2,
            alpha_d: 0.85,
            gamma: 0.998,
            beta: 0.96,
            hard_gate: true,
        }
    }
}

impl DnatConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("eta", self.eta),
            ("alpha_p", self.alpha_p),
            ("alpha_d", self.alpha_d),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ];
        for (name, v) in unit {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta = {} must be positive", self.delta)));
        }
        Ok(())
    }
}

/// Per-frame noise PSD estimate, `[T x F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePsdTrack {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl NoisePsdTrack {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// `log(D + 1e-10)` as a `[T x F]` feature matrix.
    pub fn log_features(&self) -> Tensor {
        Tensor::from_fn(&[self.frames, self.bins], |i| (self.data[i] + LOG_FLOOR).ln())
    }
}

/// Streaming tracker state for one utterance.
#[derive(Clone, Debug)]
pub struct NoiseTracker {
    config: DnatConfig,
    smoothed: Vec<f64>,
    minimum: Vec<f64>,
    presence: Vec<f64>,
    noise: Vec<f64>,
    started: bool,
}

impl NoiseTracker {
    pub fn new(config: DnatConfig, bins: usize) -> Result<Self> {
        config.validate()?;
        Ok(NoiseTracker {
            config,
            smoothed: vec![0.0; bins],
            minimum: vec![0.0; bins],
            presence: vec![0.0; bins],
            noise: vec![0.0; bins],
            started: false,
        })
    }

    /// Consumes one frame of periodogram values `|Y|^2` and returns the
    /// updated noise estimate.
    pub fn push(&mut self, power: &[f64]) -> &[f64] {
        assert_eq!(power.len(), self.noise.len(), "frame width");
        if !self.started {
            self.smoothed.copy_from_slice(power);
            self.minimum.copy_from_slice(power);
            self.noise.copy_from_slice(power);
            self.started = true;
            return &self.noise;
        }
        let c = &self.config;
        let min_gain = (1.0 - c.gamma) / (1.0 - c.beta);
        for k in 0..power.len() {
            let prev = self.smoothed[k];
            let p = c.eta * prev + (1.0 - c.eta) * power[k];
            self.smoothed[k] = p;
            self.minimum[k] = if self.minimum[k] < p {
                c.gamma * self.minimum[k] + min_gain * (p - c.beta * prev)
            } else {
                p
            };
            let indicator = if p > c.delta * self.minimum[k] { 1.0 } else { 0.0 };
            self.presence[k] = c.alpha_p * self.presence[k] + (1.0 - c.alpha_p) * indicator;
            let gate = if c.hard_gate {
                self.presence[k].max(indicator)
            } else {
                self.presence[k]
            };
            let alpha_s = c.alpha_d + (1.0 - c.alpha_d) * gate;
            self.noise[k] = alpha_s * self.noise[k] + (1.0 - alpha_s) * power[k];
        }
        &self.noise
    }

    pub fn presence(&self) -> &[f64] {
        &self.presence
    }

    pub fn smoothed(&self) -> &[f64] {
        &self.smoothed
    }
}

/// Runs the tracker over a magnitude spectrogram, frame by frame.
pub fn track_noise_psd(noisy: &MagnitudeSpectrogram, config: &DnatConfig) -> Result<NoisePsdTrack> {
    if noisy.frames == 0 {
        return Err(Error::Empty("noise tracking needs at least one frame".into()));
    }
    let mut tracker = NoiseTracker::new(config.clone(), noisy.bins)?;
    let mut data = Vec::with_capacity(noisy.frames * noisy.bins);
    let mut power = vec![0.0; noisy.bins];
    for t in 0..noisy.frames {
        for (p, m) in power.iter_mut().zip(noisy.frame(t)) {
            *p = m * m;
        }
        data.extend_from_slice(tracker.push(&power));
    }
    Ok(NoisePsdTrack {
        frames: noisy.frames,
        bins: noisy.bins,
        data,
    })
}

/// Writes `frame,bin,psd` rows.
pub fn write_psd_csv(track: &NoisePsdTrack, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "frame,bin,psd")?;
        for t in 0..track.frames {
            for (k, d) in track.frame(t).iter().enumerate() {
                writeln!(w, "{t},{k},{d}")?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
