//! STFT analysis/synthesis and power-law spectral compression.

use std::f64::consts::PI;

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const NFFT: usize = 512;
pub const HOP: usize = 256;
/// `NFFT / 2 + 1`
pub const BINS: usize = 257;
/// Exponent of the power-law compression applied to model inputs and the loss.
pub const COMPRESSION: f64 = 0.3;

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples })
    }

    /// Checks the rate before wrapping; only 16 kHz audio is accepted.
    pub fn with_rate(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz"
            )));
        }
        Waveform::new(samples)
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Hard-limits every sample to `[-1, 1]`.
    pub fn clipped(mut self) -> Self {
        self.samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
        self
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftParams {
    pub nfft: usize,
    pub hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            nfft: NFFT,
            hop: HOP,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    fn validate(&self) -> Result<()> {
        if !self.nfft.is_power_of_two() || self.nfft < 4 || self.hop * 2 != self.nfft {
            return Err(Error::Config(format!(
                "STFT needs a power-of-two nfft with hop = nfft/2, got nfft={} hop={}",
                self.nfft, self.hop
            )));
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples after `nfft/2` reflect padding.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Frames x bins complex spectrum, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub params: StftParams,
    /// Length of the analysed waveform, restored by [`istft`].
    pub signal_len: usize,
}

/// Frames x bins nonnegative magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
    pub params: StftParams,
}

impl ComplexSpectrogram {
    pub fn zeros_like(&self) -> Self {
        ComplexSpectrogram {
            data: vec![Complex64::new(0.0, 0.0); self.data.len()],
            ..self.clone()
        }
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|z| z.norm()).collect(),
            params: self.params,
        }
    }

    /// Squared magnitudes.
    pub fn power(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|z| z.norm_sqr()).collect(),
            params: self.params,
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn same_layout(&self, other: &ComplexSpectrogram) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }
}

impl MagnitudeSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Index into a signal of length `len` extended by mirror reflection
/// (edge sample not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(wave: &Waveform, params: StftParams) -> Result<ComplexSpectrogram> {
    params.validate()?;
    let x = wave.samples();
    if x.is_empty() {
        return Err(Error::Empty("cannot analyse an empty waveform".into()));
    }
    let StftParams { nfft, hop } = params;
    let pad = nfft / 2;
    let frames = params.frames_for(x.len());
    let bins = params.bins();
    let window = hann(nfft);

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = (t * hop) as isize - pad as isize;
        for (n, slot) in frame.iter_mut().enumerate() {
            *slot = x[reflect(start + n as isize, x.len())] * window[n];
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .map_err(|e| Error::Contract(format!("fft: {e}")))?;
        data.extend_from_slice(&spectrum);
    }
    Ok(ComplexSpectrogram {
        frames,
        bins,
        data,
        params,
        signal_len: x.len(),
    })
}

/// Weighted overlap-add with a Hann synthesis window, normalized by the
/// summed squared window. Returns exactly `spec.signal_len` samples.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    spec.params.validate()?;
    let StftParams { nfft, hop } = spec.params;
    if spec.bins != spec.params.bins() || spec.data.len() != spec.frames * spec.bins {
        return Err(Error::Config(format!(
            "spectrogram of {} frames x {} bins does not match nfft {nfft}",
            spec.frames, spec.bins
        )));
    }
    if spec.frames != spec.params.frames_for(spec.signal_len) {
        return Err(Error::Config(format!(
            "{} frames cannot come from a {}-sample signal",
            spec.frames, spec.signal_len
        )));
    }
    let pad = nfft / 2;
    let window = hann(nfft);
    let total = (spec.frames - 1) * hop + nfft;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);
    let mut buf = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / nfft as f64;
    for t in 0..spec.frames {
        buf.copy_from_slice(spec.frame(t));
        // A real signal has purely real DC and Nyquist bins.
        buf[0].im = 0.0;
        buf[spec.bins - 1].im = 0.0;
        ifft.process_with_scratch(&mut buf, &mut frame, &mut scratch)
            .map_err(|e| Error::Contract(format!("inverse fft: {e}")))?;
        let start = t * hop;
        for n in 0..nfft {
            acc[start + n] += frame[n] * scale * window[n];
            norm[start + n] += window[n] * window[n];
        }
    }
    let samples = (0..spec.signal_len)
        .map(|i| {
            let j = i + pad;
            if norm[j] > 1e-12 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples)
}

/// `z -> |z|^p * exp(i arg z)`, with `0 -> 0`.
pub fn power_compress(spec: &ComplexSpectrogram, p: f64) -> Result<ComplexSpectrogram> {
    check_exponent(p)?;
    let data = spec.data.iter().map(|&z| compress_bin(z, p)).collect();
    Ok(ComplexSpectrogram {
        data,
        ..spec.clone()
    })
}

/// `|z| -> |z|^p` on magnitudes.
pub fn compress_magnitude(mag: &MagnitudeSpectrogram, p: f64) -> Result<MagnitudeSpectrogram> {
    check_exponent(p)?;
    Ok(MagnitudeSpectrogram {
        data: mag.data.iter().map(|m| m.powf(p)).collect(),
        ..mag.clone()
    })
}

pub fn compress_bin(z: Complex64, p: f64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * r.powf(p - 1.0)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("compression exponent {p} outside (0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        let spec = stft(&noise(16000, 0), StftParams::default()).unwrap();
        // padded length 16512 -> 1 + (16512 - 512) / 256
        assert_eq!(spec.frames, 1 + (16512 - 512) / 256);
        assert_eq!(spec.frames, 63);
        assert_eq!(spec.bins, BINS);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let w = Waveform::new(vec![0.0; 3000]).unwrap();
        let spec = stft(&w, StftParams::default()).unwrap();
        assert!(spec.data.iter().all(|z| z.norm() == 0.0));
        let back = istft(&spec.zeros_like()).unwrap();
        assert_eq!(back.len(), 3000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let x: Vec<f64> = (0..8000)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&Waveform::new(x).unwrap(), StftParams::default()).unwrap();
        let mag = spec.magnitude();
        // Frames whose window overlaps the reflected padding see |sin| folding.
        let interior = (1..mag.frames).filter(|t| t * HOP + NFFT / 2 <= 8000);
        for t in interior {
            let frame = mag.frame(t);
            let argmax = (0..frame.len())
                .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
                .unwrap();
            assert_eq!(argmax, 14, "frame {t}");
        }
    }

    #[test]
    fn matches_direct_dft() {
        let w = noise(2000, 9);
        let spec = stft(&w, StftParams::default()).unwrap();
        let win = hann(NFFT);
        let t = 3;
        let start = t * HOP - NFFT / 2;
        for k in [0, 1, 37, 128, 256] {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..NFFT {
                let ang = -2.0 * PI * (k * n) as f64 / NFFT as f64;
                acc += Complex64::from_polar(w.samples()[start + n] * win[n], ang);
            }
            assert!((acc - spec.frame(t)[k]).norm() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let w = noise(4000, 11);
        let spec = stft(&w, StftParams::default()).unwrap();
        let win = hann(NFFT);
        for t in 1..spec.frames - 2 {
            let start = t * HOP - NFFT / 2;
            let time: f64 = (0..NFFT).map(|n| (w.samples()[start + n] * win[n]).powi(2)).sum();
            // Interior bins appear twice in the full spectrum.
            let freq: f64 = spec
                .frame(t)
                .iter()
                .enumerate()
                .map(|(k, z)| if k == 0 || k == BINS - 1 { z.norm_sqr() } else { 2.0 * z.norm_sqr() })
                .sum();
            assert!((freq - NFFT as f64 * time).abs() / freq < 1e-9);
        }
    }

    #[test]
    fn dc_and_nyquist_are_real() {
        let spec = stft(&noise(5000, 3), StftParams::default()).unwrap();
        for t in 0..spec.frames {
            assert_eq!(spec.frame(t)[0].im, 0.0);
            assert_eq!(spec.frame(t)[BINS - 1].im, 0.0);
        }
    }

    #[test]
    fn short_signals_round_trip() {
        for len in [1, 2, 100, 256, 257, 511, 513] {
            let w = noise(len, len as u64);
            let back = istft(&stft(&w, StftParams::default()).unwrap()).unwrap();
            assert_eq!(back.len(), len);
            for (a, b) in w.samples().iter().zip(back.samples()) {
                assert!((a - b).abs() < 1e-9, "len {len}");
            }
        }
    }

    #[test]
    fn empty_waveform_is_rejected() {
        let w = Waveform::new(Vec::new()).unwrap();
        assert!(matches!(stft(&w, StftParams::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let mut spec = stft(&noise(1000, 1), StftParams::default()).unwrap();
        spec.signal_len = 5000;
        assert!(matches!(istft(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn compression_scalar_cases() {
        let c = compress_bin(Complex64::new(0.5, 0.0), 0.3);
        assert!((c.re - 0.812252396).abs() < 1e-8);
        assert_eq!(c.im, 0.0);
        assert_eq!(compress_bin(Complex64::new(0.0, 0.0), 0.3), Complex64::new(0.0, 0.0));
        let unit = Complex64::from_polar(1.0, 0.7);
        assert!((compress_bin(unit, 0.3) - unit).norm() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_exponent() {
        let spec = stft(&noise(600, 2), StftParams::default()).unwrap();
        assert!(power_compress(&spec, 0.0).is_err());
        assert!(power_compress(&spec, 1.5).is_err());
    }

    #[test]
    fn non_16k_rate_is_rejected() {
        assert!(Waveform::with_rate(vec![0.0; 4], 44_100).is_err());
    }
}
