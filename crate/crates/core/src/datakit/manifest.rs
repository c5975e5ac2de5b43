//! Noise-type partitions and mixture manifests.
//!
//! A noise directory holds `train/<type>/*.wav` and `test/<type>/*.wav`.
//! Partition `Nk` is the first `k` training types in lexicographic order,
//! so smaller partitions are always subsets of larger ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mix::{mix_at_snr, Mixture};
use super::wav::{read_wav, write_wav};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const TRAIN_SNRS: [f64; 5] = [-5.0, 0.0, 5.0, 10.0, 15.0];
pub const TEST_SNRS: [f64; 5] = [-2.5, 2.5, 7.5, 12.5, 17.5];
pub const MANIFEST_HEADER: &str = "clean_path,noise_path,snr_db,noise_type,split,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn default_snrs(self) -> &'static [f64] {
        match self {
            Split::Train => &TRAIN_SNRS,
            Split::Test => &TEST_SNRS,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    N7,
    N12,
    N16,
    N21,
}

impl Partition {
    pub const ALL: [Partition; 4] = [Partition::N7, Partition::N12, Partition::N16, Partition::N21];

    pub fn size(self) -> usize {
        match self {
            Partition::N7 => 7,
            Partition::N12 => 12,
            Partition::N16 => 16,
            Partition::N21 => 21,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.size())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown partition {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean_path: String,
    pub noise_path: String,
    pub snr_db: f64,
    pub noise_type: String,
    pub split: Split,
    pub seed: u64,
}

impl ManifestEntry {
    /// Reads both files and mixes them as recorded.
    pub fn synthesize(&self) -> Result<Mixture> {
        let clean = read_wav(Path::new(&self.clean_path))?;
        let noise = read_wav(Path::new(&self.noise_path))?;
        mix_at_snr(&clean, &noise, self.snr_db, self.seed)
    }

    /// Stem of the clean file, used as the speaker/utterance key.
    pub fn clean_stem(&self) -> String {
        Path::new(&self.clean_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Identifier of the entry at `index`.
pub fn entry_id(index: usize) -> String {
    format!("{index:05}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn noise_types(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.noise_type.clone()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER.split(','))?;
        for e in &self.entries {
            w.write_record([
                e.clean_path.as_str(),
                e.noise_path.as_str(),
                &e.snr_db.to_string(),
                &e.noise_type,
                &e.split.to_string(),
                &e.seed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != MANIFEST_HEADER {
            return Err(Error::Format(format!(
                "{}: manifest header must be {MANIFEST_HEADER:?}",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Format(format!("{}: row {}: bad {what}", path.display(), i + 1));
            entries.push(ManifestEntry {
                clean_path: rec[0].to_owned(),
                noise_path: rec[1].to_owned(),
                snr_db: rec[2].parse().map_err(|_| bad("snr_db"))?,
                noise_type: rec[3].to_owned(),
                split: rec[4].parse().map_err(|_| bad("split"))?,
                seed: rec[5].parse().map_err(|_| bad("seed"))?,
            });
        }
        Ok(Manifest { entries })
    }

    /// Total clean duration in seconds, from the WAV headers.
    pub fn clean_seconds(&self) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.entries {
            total += wav_seconds(Path::new(&e.clean_path))?;
        }
        Ok(total)
    }

    /// Writes every noisy mixture to `out/{split}/<type>/<id>_<snr>.wav`.
    pub fn write_mixtures(&self, out: &Path) -> Result<Vec<PathBuf>> {
        self.entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let dir = out.join(e.split.to_string()).join(&e.noise_type);
                fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
                let path = dir.join(format!("{}_{}.wav", entry_id(i), e.snr_db));
                write_wav(&path, &e.synthesize()?.noisy)?;
                Ok(path)
            })
            .collect()
    }
}

/// Duration of a WAV file from its header.
pub fn wav_seconds(path: &Path) -> Result<f64> {
    let r = hound::WavReader::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(r.duration() as f64 / f64::from(SAMPLE_RATE))
}

/// Sorted `.wav` files directly under `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn list_types(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut types = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(types);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            let files = list_wavs(&path)?;
            if !files.is_empty() {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                types.insert(name, files);
            }
        }
    }
    Ok(types)
}

/// Training and test noise files grouped by type.
#[derive(Clone, Debug)]
pub struct NoiseCatalog {
    pub train: BTreeMap<String, Vec<PathBuf>>,
    pub test: BTreeMap<String, Vec<PathBuf>>,
}

impl NoiseCatalog {
    pub fn scan(noise_dir: &Path) -> Result<Self> {
        let train = list_types(&noise_dir.join("train"))?;
        let test = list_types(&noise_dir.join("test"))?;
        let shared: Vec<&String> = train.keys().filter(|k| test.contains_key(*k)).collect();
        if !shared.is_empty() {
            return Err(Error::Leakage(format!(
                "noise types present in both train and test: {shared:?}"
            )));
        }
        Ok(NoiseCatalog { train, test })
    }

    /// The first `k` training types in lexicographic order.
    pub fn partition(&self, p: Partition) -> Result<Vec<String>> {
        if self.train.len() < p.size() {
            return Err(Error::Capacity(format!(
                "partition {p} needs {} training noise types, found {}",
                p.size(),
                self.train.len()
            )));
        }
        Ok(self.train.keys().take(p.size()).cloned().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildConfig {
    pub split: Split,
    /// Ignored for the test split, which uses every test type.
    pub partition: Partition,
    pub minutes: f64,
    pub snr_levels: Vec<f64>,
    pub seed: u64,
}

/// Draws clean clips (each at most once) until `minutes` of speech are
/// covered, pairing them with noise types and SNR levels in a balanced,
/// seed-determined order.
pub fn build_manifest(clean_dir: &Path, noise_dir: &Path, cfg: &BuildConfig) -> Result<Manifest> {
    if !(cfg.minutes > 0.0) || cfg.snr_levels.is_empty() {
        return Err(Error::Config("manifest needs positive minutes and at least one SNR level".into()));
    }
    let allowed = cfg.split.default_snrs();
    if let Some(s) = cfg.snr_levels.iter().find(|s| !allowed.contains(s)) {
        return Err(Error::Config(format!("{s} dB is not a {} SNR level", cfg.split)));
    }
    let catalog = NoiseCatalog::scan(noise_dir)?;
    let (types, files) = match cfg.split {
        Split::Train => (catalog.partition(cfg.partition)?, &catalog.train),
        Split::Test => (catalog.test.keys().cloned().collect(), &catalog.test),
    };
    if types.is_empty() {
        return Err(Error::Empty(format!("no {} noise types under {}", cfg.split, noise_dir.display())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clean = list_wavs(clean_dir)?;
    clean.shuffle(&mut rng);
    let target = cfg.minutes * 60.0;
    let mut covered = 0.0;
    let mut chosen = Vec::new();
    for path in clean {
        if covered >= target {
            break;
        }
        covered += wav_seconds(&path)?;
        chosen.push(path);
    }
    if covered < target {
        return Err(Error::Capacity(format!(
            "{} holds {:.1} s of clean audio, {target:.1} s requested",
            clean_dir.display(),
            covered
        )));
    }

    let levels = cfg.snr_levels.len();
    let entries = chosen
        .into_iter()
        .enumerate()
        .map(|(i, clean_path)| {
            let noise_type = &types[(i / levels) % types.len()];
            let pool = &files[noise_type];
            let noise_path = &pool[rng.gen_range(0..pool.len())];
            ManifestEntry {
                clean_path: clean_path.to_string_lossy().into_owned(),
                noise_path: noise_path.to_string_lossy().into_owned(),
                snr_db: cfg.snr_levels[i % levels],
                noise_type: noise_type.clone(),
                split: cfg.split,
                seed: rng.gen(),
            }
        })
        .collect();
    Ok(Manifest { entries })
}
