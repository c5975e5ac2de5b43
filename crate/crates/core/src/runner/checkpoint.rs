//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NTSE" | u32 version | u32 len, key = value text | u32 count, records
//! record: u32 name len, name | u32 ndim, u64 dims | f32 values
//! u64 adam step | u64 train step | [u8; 32] rng seed | u64 stream | u128 word pos
//! ```
//!
//! Records hold the parameters under their own names, encoder batch-norm
//! running statistics as `enc.bn{i}.running_mean` / `running_var`, and Adam
//! moments as `adam.m.<name>` / `adam.v.<name>`.

use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{parse_key_values, parse_value, TrainConfig};
use crate::dnat::DnatConfig;
use crate::enhancer::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Tensor};
use crate::tokens::{TokenConfig, CONV_LAYERS};

pub const MAGIC: &[u8; 4] = b"NTSE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub train: Option<TrainConfig>,
    /// Noise types seen in training; evaluation refuses any overlap.
    pub train_noise_types: Vec<String>,
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

impl Checkpoint {
    /// Wraps training state, rounding every stored value to `f32` so the
    /// in-memory checkpoint equals what [`Checkpoint::load`] returns.
    pub fn new(
        mut model: Model,
        mut adam: Adam,
        step: u64,
        rng: ChaCha8Rng,
        train: Option<TrainConfig>,
        train_noise_types: Vec<String>,
    ) -> Self {
        for p in model.store.iter_mut() {
            round_f32(p.value.data_mut());
        }
        for (m, v) in model.running.iter_mut().flatten() {
            round_f32(m);
            round_f32(v);
        }
        adam.m.iter_mut().chain(adam.v.iter_mut()).for_each(|x| round_f32(x));
        Checkpoint {
            model,
            adam,
            step,
            rng,
            train,
            train_noise_types,
        }
    }

    /// A checkpoint of a freshly initialized model.
    pub fn untrained(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = Model::new(config, seed)?;
        let adam = Adam::new(AdamConfig::default(), &model.store);
        Ok(Checkpoint::new(model, adam, 0, ChaCha8Rng::seed_from_u64(seed), None, Vec::new()))
    }

    fn config_text(&self) -> String {
        let c = &self.model.config;
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", c.mode);
        let _ = writeln!(s, "model_scale = {}", c.scale);
        let _ = writeln!(s, "proj_dim = {}", c.proj_dim);
        let _ = writeln!(s, "lstm_hidden = {}", c.lstm_hidden);
        let _ = writeln!(s, "lstm_layers = {}", c.lstm_layers);
        let ch: Vec<String> = c.tokens.channels.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "channels = {}", ch.join(","));
        let _ = writeln!(s, "gru_hidden = {}", c.tokens.gru_hidden);
        let _ = writeln!(s, "templates = {}", c.tokens.templates);
        let _ = writeln!(s, "heads = {}", c.tokens.heads);
        let d = &c.dnat;
        let _ = writeln!(s, "dnat_eta = {}", d.eta);
        let _ = writeln!(s, "dnat_delta = {}", d.delta);
        let _ = writeln!(s, "dnat_alpha_p = {}", d.alpha_p);
        let _ = writeln!(s, "dnat_alpha_d = {}", d.alpha_d);
        let _ = writeln!(s, "dnat_gamma = {}", d.gamma);
        let _ = writeln!(s, "dnat_beta = {}", d.beta);
        let _ = writeln!(s, "dnat_hard_gate = {}", d.hard_gate);
        let a = &self.adam.config;
        let _ = writeln!(s, "adam_lr = {}", a.lr);
        let _ = writeln!(s, "adam_beta1 = {}", a.beta1);
        let _ = writeln!(s, "adam_beta2 = {}", a.beta2);
        let _ = writeln!(s, "adam_eps = {}", a.eps);
        let _ = writeln!(s, "train_noise_types = {}", self.train_noise_types.join(","));
        if let Some(t) = &self.train {
            s.push_str(&t.to_text());
        }
        s
    }

    fn records(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for p in self.model.store.iter() {
            out.push((p.name.clone(), p.value.shape().to_vec(), p.value.data()));
        }
        for (i, stats) in self.model.running.iter().enumerate() {
            if let Some((m, v)) = stats {
                out.push((format!("enc.bn{i}.running_mean"), vec![m.len()], m));
                out.push((format!("enc.bn{i}.running_var"), vec![v.len()], v));
            }
        }
        for (i, p) in self.model.store.iter().enumerate() {
            out.push((format!("adam.m.{}", p.name), p.value.shape().to_vec(), &self.adam.m[i]));
            out.push((format!("adam.v.{}", p.name), p.value.shape().to_vec(), &self.adam.v[i]));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config_text();
        b.extend_from_slice(&(text.len() as u32).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        let records = self.records();
        b.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, shape, values) in records {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                b.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        b.extend_from_slice(&self.adam.step.to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.rng.get_seed());
        b.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        b.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        b
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(Cursor::new(bytes));
        if &r.array::<4>()? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let text_len = r.u32()? as usize;
        let text = String::from_utf8(r.bytes(text_len)?)
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        let header = Header::parse(&text)?;

        let mut model = Model::new(header.model.clone(), 0)?;
        let mut adam = Adam::new(header.adam, &model.store);
        let count = r.u32()?;
        let mut seen = vec![false; model.store.len()];
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.bytes(name_len)?)
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            place(&mut model, &mut adam, &mut seen, &name, &shape, values)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "checkpoint lacks parameter `{}`",
                model.store.iter().nth(i).unwrap().name
            )));
        }
        adam.step = r.u64()?;
        let step = r.u64()?;
        let seed = r.array::<32>()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array::<16>()?);
        if r.0.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Checkpoint {
            model,
            adam,
            step,
            rng,
            train: header.train,
            train_noise_types: header.train_noise_types,
        })
    }
}

fn place(
    model: &mut Model,
    adam: &mut Adam,
    seen: &mut [bool],
    name: &str,
    shape: &[usize],
    values: Vec<f64>,
) -> Result<()> {
    let check = |expect: &[usize]| {
        if expect != shape {
            Err(Error::Format(format!("record `{name}` has shape {shape:?}, expected {expect:?}")))
        } else {
            Ok(())
        }
    };
    if let Some(rest) = name.strip_prefix("adam.") {
        let (slot, pname) = rest
            .split_once('.')
            .ok_or_else(|| Error::Format(format!("bad optimizer record `{name}`")))?;
        let id = model
            .store
            .id(pname)
            .ok_or_else(|| Error::Format(format!("optimizer record for unknown parameter `{pname}`")))?;
        check(model.store.get(id).value.shape())?;
        match slot {
            "m" => adam.m[id.index()] = values,
            "v" => adam.v[id.index()] = values,
            _ => return Err(Error::Format(format!("bad optimizer record `{name}`"))),
        }
        return Ok(());
    }
    if let Some(rest) = name.strip_prefix("enc.bn") {
        if let Some((idx, stat)) = rest.split_once(".running_") {
            let i: usize = idx
                .parse()
                .map_err(|_| Error::Format(format!("bad running-stat record `{name}`")))?;
            let channels = model.config.tokens.channels;
            if i >= model.running.len() || i >= CONV_LAYERS {
                return Err(Error::Format(format!("running stats `{name}` for a model without that layer")));
            }
            check(&[channels[i]])?;
            let slot = model.running[i].get_or_insert_with(|| (vec![0.0; channels[i]], vec![1.0; channels[i]]));
            match stat {
                "mean" => slot.0 = values,
                "var" => slot.1 = values,
                _ => return Err(Error::Format(format!("bad running-stat record `{name}`"))),
            }
            return Ok(());
        }
    }
    let id = model
        .store
        .id(name)
        .ok_or_else(|| Error::Format(format!("unknown parameter `{name}` for this model configuration")))?;
    check(model.store.get(id).value.shape())?;
    model.store.get_mut(id).value = Tensor::new(shape, values)?;
    seen[id.index()] = true;
    Ok(())
}

struct Header {
    model: ModelConfig,
    adam: AdamConfig,
    train: Option<TrainConfig>,
    train_noise_types: Vec<String>,
}

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(p, _)| p == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint config lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> { parse_value(k, get(k)?) };
        let int = |k: &str| -> Result<usize> { parse_value(k, get(k)?) };
        let mode = parse_value("mode", get("mode")?)?;
        let scale = parse_value("model_scale", get("model_scale")?)?;
        let channels: Vec<usize> = get("channels")?
            .split(',')
            .map(|c| parse_value("channels", c.trim()))
            .collect::<Result<_>>()?;
        let channels: [usize; CONV_LAYERS] = channels
            .try_into()
            .map_err(|_| Error::Format(format!("`channels` must list {CONV_LAYERS} values")))?;
        let model = ModelConfig {
            mode,
            scale,
            proj_dim: int("proj_dim")?,
            lstm_hidden: int("lstm_hidden")?,
            lstm_layers: int("lstm_layers")?,
            tokens: TokenConfig {
                channels,
                gru_hidden: int("gru_hidden")?,
                templates: int("templates")?,
                heads: int("heads")?,
            },
            dnat: DnatConfig {
                eta: num("dnat_eta")?,
                delta: num("dnat_delta")?,
                alpha_p: num("dnat_alpha_p")?,
                alpha_d: num("dnat_alpha_d")?,
                gamma: num("dnat_gamma")?,
                beta: num("dnat_beta")?,
                hard_gate: parse_value("dnat_hard_gate", get("dnat_hard_gate")?)?,
            },
        };
        let adam = AdamConfig {
            lr: num("adam_lr")?,
            beta1: num("adam_beta1")?,
            beta2: num("adam_beta2")?,
            eps: num("adam_eps")?,
        };
        let types = get("train_noise_types")?;
        let train_noise_types = if types.is_empty() {
            Vec::new()
        } else {
            types.split(',').map(str::to_owned).collect()
        };
        let train_pairs: Vec<(String, String)> = pairs
            .iter()
            .filter(|(k, _)| TrainConfig::KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        let train = if train_pairs.is_empty() {
            None
        } else {
            Some(TrainConfig::from_pairs(&train_pairs)?)
        };
        Ok(Header {
            model,
            adam,
            train,
            train_noise_types,
        })
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let remaining = self.0.get_ref().len() - self.0.position() as usize;
        if n > remaining {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let mut v = vec![0; n];
        self.0.read_exact(&mut v).map_err(|_| Error::Format("checkpoint is truncated".into()))?;
        Ok(v)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0; N];
        self.0.read_exact(&mut a).map_err(|_| Error::Format("checkpoint is truncated".into()))?;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }
}
