//! Training loop with validation and best-checkpoint selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::datakit::{entry_id, Manifest, Split};
use crate::dsp::{stft, StftParams, Waveform, SAMPLE_RATE};
use crate::enhancer::{LossConfig, LossTarget, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{clip_grad_norm, Adam, AdamConfig, BatchStats, Tape};

pub const GRAD_CLIP: f64 = 5.0;
const DATA_STREAM: u64 = 1;

/// One aligned training pair.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub noise_type: String,
    pub clean: Waveform,
    pub noisy: Waveform,
}

/// FNV-1a of the clean-file stem, used to hold out whole clean clips.
pub fn stem_hash(stem: &str) -> u64 {
    stem.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn is_validation(stem: &str, fraction: f64) -> bool {
    (stem_hash(stem) % 10_000) < (fraction * 10_000.0).round() as u64
}

#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<Utterance>,
    pub validation: Vec<Utterance>,
    pub noise_types: Vec<String>,
}

impl TrainData {
    /// Synthesizes every mixture of a training manifest and splits off the
    /// validation share by clean-clip hash.
    pub fn from_manifest(manifest: &Manifest, validation_fraction: f64) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Empty("training manifest has no entries".into()));
        }
        if let Some(e) = manifest.entries.iter().find(|e| e.split != Split::Train) {
            return Err(Error::Protocol(format!(
                "training manifest contains a {} entry ({})",
                e.split, e.clean_path
            )));
        }
        let utts: Vec<(bool, Utterance)> = manifest
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let mix = e.synthesize()?;
                let utt = Utterance {
                    id: entry_id(i),
                    noise_type: e.noise_type.clone(),
                    clean: mix.clean,
                    noisy: mix.noisy,
                };
                Ok((is_validation(&e.clean_stem(), validation_fraction), utt))
            })
            .collect::<Result<_>>()?;
        let (val, train): (Vec<_>, Vec<_>) = utts.into_iter().partition(|(v, _)| *v);
        let data = TrainData {
            train: train.into_iter().map(|(_, u)| u).collect(),
            validation: val.into_iter().map(|(_, u)| u).collect(),
            noise_types: manifest.noise_types().into_iter().collect(),
        };
        if data.train.is_empty() {
            return Err(Error::Empty("every manifest entry fell into the validation split".into()));
        }
        Ok(data)
    }

    pub fn from_utterances(train: Vec<Utterance>, validation: Vec<Utterance>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("no training utterances".into()));
        }
        let mut noise_types: Vec<String> = train.iter().chain(&validation).map(|u| u.noise_type.clone()).collect();
        noise_types.sort();
        noise_types.dedup();
        Ok(TrainData {
            train,
            validation,
            noise_types,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub const CURVE_HEADER: &str = "step,train_loss,val_loss";

pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER.split(','))?;
    for p in curve {
        w.write_record([
            p.step.to_string(),
            p.train_loss.to_string(),
            p.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the lowest validation loss, or the final state when there is
    /// no validation data.
    pub best: Checkpoint,
    pub best_step: usize,
    pub curve: Vec<CurvePoint>,
}

fn segment(u: &Utterance, len: usize, rng: &mut ChaCha8Rng) -> (Waveform, Waveform) {
    let n = u.clean.len();
    if n <= len {
        return (u.clean.clone(), u.noisy.clone());
    }
    let start = rng.gen_range(0..=n - len);
    let cut = |w: &Waveform| Waveform::new(w.samples()[start..start + len].to_vec()).expect("finite slice");
    (cut(&u.clean), cut(&u.noisy))
}

struct Step {
    loss: f64,
    grads: Vec<Vec<f64>>,
    stats: Vec<BatchStats>,
}

fn utterance_step(model: &Model, clean: &Waveform, noisy: &Waveform, loss_cfg: &LossConfig) -> Result<Step> {
    let params = StftParams::default();
    let target = LossTarget::new(&stft(clean, params)?, loss_cfg)?;
    let noisy = stft(noisy, params)?;
    let tape = Tape::new();
    let (loss, fwd) = model.loss(&tape, &noisy, &target, loss_cfg, true)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.for_params(&model.store);
    Ok(Step {
        loss: value,
        grads,
        stats: fwd.stats,
    })
}

/// Mean loss over whole utterances with the model in evaluation mode.
pub fn validation_loss(model: &Model, utts: &[Utterance], loss_cfg: &LossConfig) -> Result<f64> {
    let params = StftParams::default();
    let losses: Vec<f64> = utts
        .par_iter()
        .map(|u| {
            let target = LossTarget::new(&stft(&u.clean, params)?, loss_cfg)?;
            let noisy = stft(&u.noisy, params)?;
            let tape = Tape::new();
            let (loss, _) = model.loss(&tape, &noisy, &target, loss_cfg, false)?;
            Ok(tape.value(loss).item())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    pub model: Model,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub step: usize,
    data: TrainData,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model_config: ModelConfig, data: TrainData) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(model_config, cfg.seed)?;
        let adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(DATA_STREAM);
        let order = (0..data.train.len()).collect();
        Ok(Trainer {
            cfg,
            loss: LossConfig::default(),
            model,
            adam,
            rng,
            step: 0,
            data,
            order,
            cursor: usize::MAX,
        })
    }

    /// Next batch: sequential chunks of a per-epoch shuffle.
    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.order.len();
        let size = self.cfg.batch_size.min(n);
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor >= n {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step; returns the mean batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let len = (self.cfg.segment_seconds * f64::from(SAMPLE_RATE)).round() as usize;
        let segments: Vec<(usize, Waveform, Waveform)> = batch
            .iter()
            .map(|&i| {
                let (c, n) = segment(&self.data.train[i], len, &mut self.rng);
                (i, c, n)
            })
            .collect();
        let step_no = self.step + 1;
        let (model, loss_cfg, data) = (&self.model, &self.loss, &self.data);
        let results: Vec<Step> = segments
            .par_iter()
            .map(|(i, c, n)| {
                utterance_step(model, c, n, loss_cfg).map_err(|e| match e {
                    Error::Numeric { op } => Error::Diverged {
                        step: step_no,
                        utterance: data.train[*i].id.clone(),
                        reason: format!("non-finite value in {op}"),
                    },
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        for (r, (i, _, _)) in results.iter().zip(&segments) {
            if !r.loss.is_finite() {
                return Err(Error::Diverged {
                    step: step_no,
                    utterance: self.data.train[*i].id.clone(),
                    reason: format!("loss is {}", r.loss),
                });
            }
        }

        let scale = 1.0 / results.len() as f64;
        let mut grads: Vec<Vec<f64>> = results[0].grads.iter().map(|g| vec![0.0; g.len()]).collect();
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
            }
        }
        clip_grad_norm(&mut grads, GRAD_CLIP);
        self.adam.step(&mut self.model.store, &grads);
        for r in &results {
            self.model.update_running(&r.stats);
        }
        self.step = step_no;
        Ok(results.iter().map(|r| r.loss).sum::<f64>() * scale)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.model.clone(),
            self.adam.clone(),
            self.step as u64,
            self.rng.clone(),
            Some(self.cfg.clone()),
            self.data.noise_types.clone(),
        )
    }

    pub fn validation_loss(&self) -> Result<Option<f64>> {
        if self.data.validation.is_empty() || self.model.running.iter().any(Option::is_none) {
            return Ok(None);
        }
        validation_loss(&self.model, &self.data.validation, &self.loss).map(Some)
    }

    /// Runs all configured steps.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut curve = Vec::with_capacity(self.cfg.steps);
        let mut best: Option<(f64, usize, Checkpoint)> = None;
        while self.step < self.cfg.steps {
            let train_loss = self.train_step()?;
            let validate = self.step % self.cfg.validate_every == 0 || self.step == self.cfg.steps;
            let val_loss = if validate { self.validation_loss()? } else { None };
            if let Some(v) = val_loss {
                if !v.is_finite() {
                    return Err(Error::Diverged {
                        step: self.step,
                        utterance: "validation".into(),
                        reason: format!("validation loss is {v}"),
                    });
                }
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, self.step, self.checkpoint()));
                }
            }
            curve.push(CurvePoint {
                step: self.step,
                train_loss,
                val_loss,
            });
        }
        let (best_step, best) = match best {
            Some((_, step, ck)) => (step, ck),
            None => (self.step, self.checkpoint()),
        };
        Ok(TrainOutcome { best, best_step, curve })
    }
}

/// Trains the model described by `cfg` on its manifest.
pub fn train_model(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::read(&cfg.manifest)?;
    let data = TrainData::from_manifest(&manifest, cfg.validation_fraction)?;
    let model_config = ModelConfig::new(cfg.embedding_mode, cfg.scale);
    Trainer::new(cfg.clone(), model_config, data)?.run()
}
