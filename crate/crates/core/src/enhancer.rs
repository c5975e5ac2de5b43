//! Masking enhancement model: input projection, two BLSTM layers and a
//! sigmoid output layer, optionally conditioned on a noise embedding.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex64;

use crate::dnat::{track_noise_psd, DnatConfig};
use crate::dsp::{compress_bin, istft, stft, ComplexSpectrogram, StftParams, Waveform, BINS, COMPRESSION};
use crate::error::{Error, Result};
use crate::layers::{BiRnn, Linear, NormPhase, RunningStats};
use crate::tensor::{BatchStats, BATCHNORM_MOMENTUM, CellKind, ParamStore, Tape, Tensor, Var};
use crate::tokens::{AttentionWeights, NoiseTokens, TokenConfig};

/// What, if anything, is concatenated to the magnitude features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EmbeddingMode {
    None,
    Dnat,
    Nts,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMode::None => "none",
            EmbeddingMode::Dnat => "dnat",
            EmbeddingMode::Nts => "nts",
        })
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EmbeddingMode::None),
            "dnat" => Ok(EmbeddingMode::Dnat),
            "nts" => Ok(EmbeddingMode::Nts),
            _ => Err(Error::Config(format!("unknown embedding mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    Paper,
    Toy,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Toy => "toy",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "toy" => Ok(Scale::Toy),
            _ => Err(Error::Config(format!("unknown model scale {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: EmbeddingMode,
    pub scale: Scale,
    pub proj_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub tokens: TokenConfig,
    pub dnat: DnatConfig,
}

impl ModelConfig {
    pub fn new(mode: EmbeddingMode, scale: Scale) -> Self {
        let (proj_dim, lstm_hidden, tokens) = match scale {
            Scale::Paper => (512, 512, TokenConfig::paper()),
            Scale::Toy => (64, 64, TokenConfig::toy()),
        };
        ModelConfig {
            mode,
            scale,
            proj_dim,
            lstm_hidden,
            lstm_layers: 2,
            tokens,
            dnat: DnatConfig::default(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self.mode {
            EmbeddingMode::None => 0,
            EmbeddingMode::Dnat => BINS,
            EmbeddingMode::Nts => self.tokens.embed_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        BINS + self.embedding_dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub p: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            p: COMPRESSION,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!(
                "loss needs lambda >= 0 and p in (0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Real-valued per-bin gain, `[T x F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::dim("soft mask", &[frames, bins], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("mask value {v} outside [0, 1]")));
        }
        Ok(SoftMask { frames, bins, data })
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        SoftMask::new(frames, bins, vec![value; frames * bins])
    }
}

/// `M * S` bin by bin; phase is untouched.
pub fn apply_mask(mask: &SoftMask, noisy: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if mask.frames != noisy.frames || mask.bins != noisy.bins {
        return Err(Error::dim(
            "apply_mask",
            &[mask.frames, mask.bins],
            &[noisy.frames, noisy.bins],
        ));
    }
    let data = noisy.data.iter().zip(&mask.data).map(|(z, m)| z * *m).collect();
    Ok(ComplexSpectrogram {
        data,
        ..noisy.clone()
    })
}

/// `min(|clean| / |noisy|, 1)`, zero where the noisy bin is silent.
pub fn ideal_ratio_mask(clean: &ComplexSpectrogram, noisy: &ComplexSpectrogram) -> Result<SoftMask> {
    if !clean.same_layout(noisy) {
        return Err(Error::dim(
            "ideal_ratio_mask",
            &[clean.frames, clean.bins],
            &[noisy.frames, noisy.bins],
        ));
    }
    let data = clean
        .data
        .iter()
        .zip(&noisy.data)
        .map(|(c, n)| {
            let nn = n.norm();
            if nn > 0.0 {
                (c.norm() / nn).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    SoftMask::new(clean.frames, clean.bins, data)
}

/// Per-bin loss terms and their gradients with respect to the enhanced
/// real and imaginary parts.
fn loss_terms(z: Complex64, clean_c: Complex64, clean_mag: f64, cfg: &LossConfig) -> (f64, f64, f64) {
    let p = cfg.p;
    let r = z.norm();
    let c = compress_bin(z, p);
    let mag_err = r.powf(p) - clean_mag;
    let e = c - clean_c;
    let value = mag_err * mag_err + cfg.lambda * e.norm_sqr();
    if r < 1e-12 {
        return (value, 0.0, 0.0);
    }
    let rp1 = r.powf(p - 1.0);
    let rp3 = rp1 / (r * r);
    let k = (p - 1.0) * rp3;
    // d|z|^p / d(re, im)
    let g_mag = 2.0 * mag_err * p * rp1 / r;
    let d_re_re = rp1 + k * z.re * z.re;
    let d_im_im = rp1 + k * z.im * z.im;
    let d_cross = k * z.re * z.im;
    let g_re = g_mag * z.re + 2.0 * cfg.lambda * (e.re * d_re_re + e.im * d_cross);
    let g_im = g_mag * z.im + 2.0 * cfg.lambda * (e.re * d_cross + e.im * d_im_im);
    (value, g_re, g_im)
}

/// Compressed clean reference, precomputed once per utterance.
#[derive(Clone, Debug)]
pub struct LossTarget {
    compressed: Vec<Complex64>,
    magnitude: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl LossTarget {
    pub fn new(clean: &ComplexSpectrogram, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        let compressed: Vec<Complex64> = clean.data.iter().map(|&z| compress_bin(z, cfg.p)).collect();
        let magnitude = clean.data.iter().map(|z| z.norm().powf(cfg.p)).collect();
        Ok(LossTarget {
            compressed,
            magnitude,
            frames: clean.frames,
            bins: clean.bins,
        })
    }
}

/// Mean compressed-magnitude error plus `lambda` times the mean compressed
/// complex error, as a tape op on the enhanced real and imaginary parts.
pub fn compressed_loss_var(tape: &Tape, re: Var, im: Var, target: &LossTarget, cfg: &LossConfig) -> Result<Var> {
    let (rv, iv) = (tape.value(re), tape.value(im));
    let want = [target.frames, target.bins];
    if rv.shape() != want || iv.shape() != want {
        return Err(Error::dim("compressed_loss", rv.shape(), &want));
    }
    let n = rv.len() as f64;
    let mut total = 0.0;
    let mut g_re = Vec::with_capacity(rv.len());
    let mut g_im = Vec::with_capacity(rv.len());
    for i in 0..rv.len() {
        let z = Complex64::new(rv.data()[i], iv.data()[i]);
        let (v, gr, gi) = loss_terms(z, target.compressed[i], target.magnitude[i], cfg);
        total += v;
        g_re.push(gr / n);
        g_im.push(gi / n);
    }
    tape.record(
        "compressed_loss",
        &[re, im],
        Tensor::scalar(total / n),
        Box::new(move |ctx| {
            let g = ctx.grad[0];
            vec![
                ctx.needs[0].then(|| g_re.iter().map(|v| v * g).collect()),
                ctx.needs[1].then(|| g_im.iter().map(|v| v * g).collect()),
            ]
        }),
    )
}

/// The loss on plain spectrograms.
pub fn compressed_loss(enhanced: &ComplexSpectrogram, clean: &ComplexSpectrogram, cfg: &LossConfig) -> Result<f64> {
    if !enhanced.same_layout(clean) {
        return Err(Error::dim(
            "compressed_loss",
            &[enhanced.frames, enhanced.bins],
            &[clean.frames, clean.bins],
        ));
    }
    let target = LossTarget::new(clean, cfg)?;
    let total: f64 = enhanced
        .data
        .iter()
        .enumerate()
        .map(|(i, &z)| loss_terms(z, target.compressed[i], target.magnitude[i], cfg).0)
        .sum();
    Ok(total / enhanced.data.len() as f64)
}

/// Compressed magnitude features `[T x F]`.
pub fn compressed_magnitude(spec: &ComplexSpectrogram, p: f64) -> Tensor {
    Tensor::from_fn(&[spec.frames, spec.bins], |i| spec.data[i].norm().powf(p))
}

#[derive(Clone, Debug)]
pub struct MaskEstimator {
    pub proj: Linear,
    pub lstms: Vec<BiRnn>,
    pub out: Linear,
}

impl MaskEstimator {
    fn new<R: rand::Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let proj = Linear::new(store, rng, "mask.proj", cfg.input_dim(), cfg.proj_dim)?;
        let mut lstms = Vec::with_capacity(cfg.lstm_layers);
        let mut width = cfg.proj_dim;
        for l in 0..cfg.lstm_layers {
            let name = format!("mask.lstm{l}");
            lstms.push(BiRnn::new(store, rng, &name, CellKind::Lstm, width, cfg.lstm_hidden)?);
            width = 2 * cfg.lstm_hidden;
        }
        let out = Linear::new(store, rng, "mask.out", width, BINS)?;
        Ok(MaskEstimator { proj, lstms, out })
    }

    /// `[T x input_dim]` features to a sigmoid mask `[T x 257]`.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let mut x = self.proj.forward(tape, store, features)?;
        for layer in &self.lstms {
            x = layer.forward(tape, store, x)?;
        }
        let logits = self.out.forward(tape, store, x)?;
        tape.sigmoid(logits)
    }
}

/// Result of one forward pass.
pub struct Forward {
    pub mask: Var,
    pub weights: Option<AttentionWeights>,
    pub stats: Vec<BatchStats>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Batch-norm running statistics of the noise encoder (empty otherwise).
    pub running: Vec<RunningStats>,
    pub tokens: Option<NoiseTokens>,
    pub estimator: MaskEstimator,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let tokens = match config.mode {
            EmbeddingMode::Nts => Some(NoiseTokens::new(config.tokens.clone(), &mut store, &mut rng)?),
            _ => None,
        };
        let estimator = MaskEstimator::new(&config, &mut store, &mut rng)?;
        let running = tokens.as_ref().map(|t| t.fresh_running_stats()).unwrap_or_default();
        Ok(Model {
            config,
            store,
            running,
            tokens,
            estimator,
        })
    }

    /// Folds batch statistics from a training pass into the running stats.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        for (slot, s) in self.running.iter_mut().zip(stats) {
            s.update_running(slot, BATCHNORM_MOMENTUM);
        }
    }

    /// Magnitude features plus the embedding for this model's mode, fed
    /// through the mask estimator.
    pub fn forward(&self, tape: &Tape, noisy: &ComplexSpectrogram, train: bool) -> Result<Forward> {
        let mag = tape.constant(compressed_magnitude(noisy, COMPRESSION));
        let phase = if train {
            NormPhase::Train
        } else {
            NormPhase::Eval(&self.running)
        };
        let (features, weights, stats) = match (self.config.mode, &self.tokens) {
            (EmbeddingMode::None, _) => (mag, None, Vec::new()),
            (EmbeddingMode::Dnat, _) => {
                let track = track_noise_psd(&noisy.magnitude(), &self.config.dnat)?;
                let log_psd = tape.constant(track.log_features());
                (tape.concat_cols(&[mag, log_psd])?, None, Vec::new())
            }
            (EmbeddingMode::Nts, Some(nt)) => {
                let (emb, w, stats) = nt.embed(tape, &self.store, mag, phase)?;
                (tape.concat_cols(&[mag, emb])?, Some(w), stats)
            }
            (EmbeddingMode::Nts, None) => {
                return Err(Error::Config("nts model without a token layer".into()))
            }
        };
        let mask = self.estimator.forward(tape, &self.store, features)?;
        Ok(Forward {
            mask,
            weights,
            stats,
        })
    }

    /// Training objective on one (noisy, clean) spectrogram pair.
    pub fn loss(
        &self,
        tape: &Tape,
        noisy: &ComplexSpectrogram,
        target: &LossTarget,
        cfg: &LossConfig,
        train: bool,
    ) -> Result<(Var, Forward)> {
        let fwd = self.forward(tape, noisy, train)?;
        let (t, f) = (noisy.frames, noisy.bins);
        let s_re = tape.constant(Tensor::new(&[t, f], noisy.real_parts())?);
        let s_im = tape.constant(Tensor::new(&[t, f], noisy.imag_parts())?);
        let re = tape.mul(fwd.mask, s_re)?;
        let im = tape.mul(fwd.mask, s_im)?;
        Ok((compressed_loss_var(tape, re, im, target, cfg)?, fwd))
    }
}

/// Mask from externally supplied compressed magnitudes and embedding.
pub fn estimate_mask(model: &Model, mag: &Tensor, embedding: Option<&Tensor>) -> Result<SoftMask> {
    let (t, f) = mag.dims2()?;
    if f != BINS {
        return Err(Error::dim("estimate_mask", mag.shape(), &[t, BINS]));
    }
    let tape = Tape::new();
    let m = tape.constant(mag.clone());
    let features = match embedding {
        None => m,
        Some(e) => {
            let (te, _) = e.dims2()?;
            if te != t {
                return Err(Error::Alignment(format!(
                    "magnitude has {t} frames but the embedding has {te}"
                )));
            }
            tape.concat_cols(&[m, tape.constant(e.clone())])?
        }
    };
    let width = tape.shape(features)[1];
    if width != model.config.input_dim() {
        return Err(Error::Config(format!(
            "model expects {} input features, got {width}",
            model.config.input_dim()
        )));
    }
    let mask = model.estimator.forward(&tape, &model.store, features)?;
    SoftMask::new(t, f, tape.value(mask).data().to_vec())
}

/// Output of [`enhance_utterance`].
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub wave: Waveform,
    pub mask: SoftMask,
    pub weights: Option<AttentionWeights>,
}

/// stft, mask estimation, masking with the noisy phase, istft; the result is
/// clipped to `[-1, 1]` and has the input's length.
pub fn enhance_utterance(wave: &Waveform, model: &Model, mode: EmbeddingMode) -> Result<Enhanced> {
    if mode != model.config.mode {
        return Err(Error::Config(format!(
            "model was built for mode {} but {mode} was requested",
            model.config.mode
        )));
    }
    let noisy = stft(wave, StftParams::default())?;
    let tape = Tape::new();
    let fwd = model.forward(&tape, &noisy, false)?;
    let mask = SoftMask::new(noisy.frames, noisy.bins, tape.value(fwd.mask).data().to_vec())?;
    let out = istft(&apply_mask(&mask, &noisy)?)?.clipped();
    Ok(Enhanced {
        wave: out,
        mask,
        weights: fwd.weights,
    })
}

/// Applies an arbitrary mask to a waveform's spectrum and resynthesizes.
pub fn enhance_with_mask(wave: &Waveform, mask: &SoftMask) -> Result<Waveform> {
    let noisy = stft(wave, StftParams::default())?;
    Ok(istft(&apply_mask(mask, &noisy)?)?.clipped())
}
