//! Noise encoder and noise token layer.
//!
//! The encoder turns a compressed noisy magnitude spectrogram into one query
//! vector per frame (conv stack, then a bidirectional GRU). The token layer
//! attends from each query over a bank of trainable templates; the weighted
//! template sum is the per-frame noise embedding.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::dsp::BINS;
use crate::error::{Error, Result};
use crate::layers::{BiRnn, ConvBlock, NormPhase, RunningStats};
use crate::tensor::{
    multihead_attention, xavier_uniform, AttentionParams, BatchNormMode, BatchStats, CellKind,
    ParamId, ParamStore, Tape, Tensor, Var,
};

pub const CONV_LAYERS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenConfig {
    pub channels: [usize; CONV_LAYERS],
    pub gru_hidden: usize,
    pub templates: usize,
    pub heads: usize,
}

impl TokenConfig {
    pub fn paper() -> Self {
        TokenConfig {
            channels: [32, 32, 64, 64, 128, 128],
            gru_hidden: 128,
            templates: 16,
            heads: 8,
        }
    }

    pub fn toy() -> Self {
        TokenConfig {
            channels: [8, 8, 16, 16, 32, 32],
            gru_hidden: 16,
            templates: 4,
            heads: 2,
        }
    }

    /// Width of the query, the templates and the embedding.
    pub fn embed_dim(&self) -> usize {
        2 * self.gru_hidden
    }

    /// Frequency positions left after the conv stack.
    pub fn freq_out(&self) -> usize {
        (0..CONV_LAYERS).fold(BINS, |f, _| (f + 2 - 3) / 2 + 1)
    }
}

/// Per-head, per-frame softmax weights over the templates, `[H x T x N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub heads: usize,
    pub frames: usize,
    pub templates: usize,
    pub data: Vec<f64>,
}

impl AttentionWeights {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[heads, frames, templates] = t.shape() else {
            return Err(Error::dim("attention weights", t.shape(), &[]));
        };
        Ok(AttentionWeights {
            heads,
            frames,
            templates,
            data: t.data().to_vec(),
        })
    }

    pub fn row(&self, head: usize, frame: usize) -> &[f64] {
        let start = (head * self.frames + frame) * self.templates;
        &self.data[start..start + self.templates]
    }

    /// Index of the most active template; ties resolve to the lowest index.
    pub fn argmax(&self, head: usize, frame: usize) -> usize {
        let row = self.row(head, frame);
        let mut best = 0;
        for (i, &w) in row.iter().enumerate() {
            if w > row[best] {
                best = i;
            }
        }
        best
    }
}

/// Writes `frame,head,template,weight` rows with 6-decimal weights.
pub fn export_weights(weights: &AttentionWeights, path: &Path) -> Result<()> {
    let mut out = String::from("frame,head,template,weight\n");
    for t in 0..weights.frames {
        for h in 0..weights.heads {
            for (n, w) in weights.row(h, t).iter().enumerate() {
                out.push_str(&format!("{t},{h},{n},{w:.6}\n"));
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_weights`].
pub fn import_weights(path: &Path) -> Result<AttentionWeights> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::Format(format!("weights row has {} fields", rec.len())))
        };
        let idx = |i: usize| -> Result<usize> {
            field(i)?
                .parse()
                .map_err(|_| Error::Format(format!("bad index {:?}", field(i))))
        };
        let w: f64 = field(3)?
            .parse()
            .map_err(|_| Error::Format(format!("bad weight {:?}", field(3))))?;
        rows.push((idx(0)?, idx(1)?, idx(2)?, w));
    }
    let frames = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let heads = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let templates = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
    if rows.len() != frames * heads * templates {
        return Err(Error::Format("weights file is not a full grid".into()));
    }
    let mut data = vec![0.0; rows.len()];
    for (t, h, n, w) in rows {
        data[(h * frames + t) * templates + n] = w;
    }
    Ok(AttentionWeights {
        heads,
        frames,
        templates,
        data,
    })
}

#[derive(Clone, Debug)]
pub struct NoiseEncoder {
    pub convs: Vec<ConvBlock>,
    pub gru: BiRnn,
}

#[derive(Clone, Copy, Debug)]
pub struct NoiseTokenLayer {
    pub templates: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// Encoder and token layer together, parameters named `enc.*` and `ntl.*`.
#[derive(Clone, Debug)]
pub struct NoiseTokens {
    pub config: TokenConfig,
    pub encoder: NoiseEncoder,
    pub layer: NoiseTokenLayer,
}

impl NoiseTokens {
    pub fn new<R: Rng + ?Sized>(
        config: TokenConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.embed_dim();
        if config.heads == 0 || d % config.heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {d} is not divisible by {} heads",
                config.heads
            )));
        }
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut c_in = 1;
        for (i, &c_out) in config.channels.iter().enumerate() {
            convs.push(ConvBlock::new(store, rng, i, c_in, c_out)?);
            c_in = c_out;
        }
        let gru_in = c_in * config.freq_out();
        let gru = BiRnn::new(store, rng, "enc.gru", CellKind::Gru, gru_in, config.gru_hidden)?;

        let n = config.templates;
        let templates = store.add("ntl.templates", crate::layers::template_init(rng, n, d))?;
        let mut proj = |name: &str| store.add(name, xavier_uniform(rng, &[d, d], d, d));
        let layer = NoiseTokenLayer {
            wq: proj("ntl.attn.wq")?,
            wk: proj("ntl.attn.wk")?,
            wv: proj("ntl.attn.wv")?,
            wo: proj("ntl.attn.wo")?,
            templates,
        };
        Ok(NoiseTokens {
            config,
            encoder: NoiseEncoder { convs, gru },
            layer,
        })
    }

    /// Conv stack output flattened per frame, `[T x C*5]`.
    pub fn conv_features(
        &self,
        tape: &Tape,
        store: &ParamStore,
        mag: Var,
        phase: NormPhase<'_>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let shape = tape.shape(mag);
        let &[t, f] = shape.as_slice() else {
            return Err(Error::dim("encode_environment", &shape, &[0, BINS]));
        };
        if t == 0 {
            return Err(Error::Empty("noise encoder needs at least one frame".into()));
        }
        if f != BINS {
            return Err(Error::dim("encode_environment", &shape, &[t, BINS]));
        }
        let mut x = tape.reshape(mag, &[1, t, f])?;
        let mut stats = Vec::new();
        for (i, block) in self.encoder.convs.iter().enumerate() {
            let mode = match phase {
                NormPhase::Train => BatchNormMode::Train,
                NormPhase::Eval(running) => BatchNormMode::Eval {
                    running: running
                        .get(i)
                        .and_then(|r| r.as_ref())
                        .map(|(m, v)| (m.as_slice(), v.as_slice())),
                },
            };
            let (y, s) = block.forward(tape, store, x, mode)?;
            stats.extend(s);
            x = y;
        }
        let sh = tape.shape(x);
        let feats = tape.permute3(x, [1, 0, 2])?;
        Ok((tape.reshape(feats, &[t, sh[0] * sh[2]])?, stats))
    }

    /// Compressed noisy magnitude `[T x 257]` to GRU queries `[T x 2*hidden]`.
    pub fn encode_environment(
        &self,
        tape: &Tape,
        store: &ParamStore,
        mag: Var,
        phase: NormPhase<'_>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let (feats, stats) = self.conv_features(tape, store, mag, phase)?;
        Ok((self.encoder.gru.forward(tape, store, feats)?, stats))
    }

    /// Attention over the template bank; templates serve as keys and values.
    pub fn attend_templates(
        &self,
        tape: &Tape,
        store: &ParamStore,
        query: Var,
    ) -> Result<(Var, AttentionWeights)> {
        let bank = tape.param(store, self.layer.templates);
        let p = AttentionParams {
            wq: tape.param(store, self.layer.wq),
            wk: tape.param(store, self.layer.wk),
            wv: tape.param(store, self.layer.wv),
            wo: tape.param(store, self.layer.wo),
        };
        let (emb, w) = multihead_attention(tape, query, bank, bank, self.config.heads, &p)?;
        Ok((emb, AttentionWeights::from_tensor(&w)?))
    }

    /// Full path from magnitude to embedding.
    pub fn embed(
        &self,
        tape: &Tape,
        store: &ParamStore,
        mag: Var,
        phase: NormPhase<'_>,
    ) -> Result<(Var, AttentionWeights, Vec<BatchStats>)> {
        let (query, stats) = self.encode_environment(tape, store, mag, phase)?;
        let (emb, weights) = self.attend_templates(tape, store, query)?;
        Ok((emb, weights, stats))
    }

    /// Empty running statistics, one slot per conv layer.
    pub fn fresh_running_stats(&self) -> Vec<RunningStats> {
        vec![None; CONV_LAYERS]
    }
}
