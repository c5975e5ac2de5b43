//! Noise-diversity experiment: one model per training corpus and mode,
//! all scored on the same unseen-noise test set.

use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::{parse_key_values, parse_value, TrainConfig};
use super::evaluate::{check_test_manifest, evaluate_model};
use super::train::train_model;
use crate::datakit::{Manifest, Partition};
use crate::enhancer::EmbeddingMode;
use crate::error::{Error, Result};
use crate::evalkit::Scores;

/// Corpora may differ in clean duration by at most this fraction.
pub const DURATION_TOLERANCE: f64 = 0.01;

pub const SUMMARY_HEADER: &str = "partition,mode,noise_types,seeds,si_sdr_db,stoi,seg_snr_db,\
si_sdr_improvement_pct,stoi_improvement_pct,seg_snr_improvement_pct";

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityConfig {
    /// Shared training settings; `manifest`, `embedding_mode` and `seed` are
    /// set per run.
    pub base: TrainConfig,
    /// Training manifests, smallest partition first; the first is the
    /// relative-improvement baseline.
    pub manifests: Vec<(Partition, PathBuf)>,
    pub test_manifest: PathBuf,
    pub seeds: Vec<u64>,
    pub modes: Vec<EmbeddingMode>,
    /// Where per-run checkpoints are written, if anywhere.
    pub work_dir: Option<PathBuf>,
}

impl DiversityConfig {
    /// Training keys plus `manifest_n7`, `manifest_n12`, `manifest_n16`,
    /// `manifest_n21`, `test_manifest`, `seeds`, `modes` and `work_dir`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut train_pairs = Vec::new();
        let mut manifests = Vec::new();
        let mut test_manifest = None;
        let mut seeds = vec![0, 1, 2];
        let mut modes = vec![EmbeddingMode::None, EmbeddingMode::Nts];
        let mut work_dir = None;
        for (k, v) in parse_key_values(text)? {
            if let Some(p) = k.strip_prefix("manifest_") {
                manifests.push((p.parse::<Partition>()?, PathBuf::from(v)));
                continue;
            }
            match k.as_str() {
                "test_manifest" => test_manifest = Some(PathBuf::from(v)),
                "seeds" => seeds = v.split(',').map(|s| parse_value("seeds", s.trim())).collect::<Result<_>>()?,
                "modes" => modes = v.split(',').map(|s| parse_value("modes", s.trim())).collect::<Result<_>>()?,
                "work_dir" => work_dir = Some(PathBuf::from(v)),
                "manifest" | "embedding_mode" => {
                    return Err(Error::Config(format!("`{k}` is set per run in a diversity config")))
                }
                _ => train_pairs.push((k, v)),
            }
        }
        manifests.sort_by_key(|(p, _)| *p);
        let cfg = DiversityConfig {
            base: TrainConfig::from_pairs(&train_pairs)?,
            manifests,
            test_manifest: test_manifest.ok_or_else(|| Error::Config("`test_manifest` is required".into()))?,
            seeds,
            modes,
            work_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifests.len() < 2 {
            return Err(Error::Config("a diversity run needs at least two training manifests".into()));
        }
        if self.manifests.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("each partition may appear once".into()));
        }
        if self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("`seeds` and `modes` must be non-empty".into()));
        }
        self.base.validate()
    }
}

/// Scores of one trained model on the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub partition: Partition,
    pub mode: EmbeddingMode,
    pub seed: u64,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub partition: Partition,
    pub mode: EmbeddingMode,
    pub noise_types: usize,
    pub seeds: usize,
    /// Mean over seeds.
    pub scores: Scores,
    /// Percent change relative to the baseline partition, same mode.
    pub improvement_pct: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversitySummary {
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<RunResult>,
}

impl DiversitySummary {
    pub fn row(&self, partition: Partition, mode: EmbeddingMode) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.partition == partition && r.mode == mode)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(SUMMARY_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.partition.to_string(),
                r.mode.to_string(),
                r.noise_types.to_string(),
                r.seeds.to_string(),
                r.scores.si_sdr_db.to_string(),
                r.scores.stoi.to_string(),
                r.scores.seg_snr_db.to_string(),
                format!("{:.2}", r.improvement_pct.si_sdr_db),
                format!("{:.2}", r.improvement_pct.stoi),
                format!("{:.2}", r.improvement_pct.seg_snr_db),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `(metric - baseline) / |baseline|` in percent.
pub fn relative_improvement(metric: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        return 0.0;
    }
    100.0 * (metric - baseline) / baseline.abs()
}

fn mean_scores(runs: &[&RunResult]) -> Scores {
    let n = runs.len() as f64;
    Scores {
        si_sdr_db: runs.iter().map(|r| r.scores.si_sdr_db).sum::<f64>() / n,
        stoi: runs.iter().map(|r| r.scores.stoi).sum::<f64>() / n,
        seg_snr_db: runs.iter().map(|r| r.scores.seg_snr_db).sum::<f64>() / n,
    }
}

/// Builds summary rows from finished runs.
pub fn summarize(cfg: &DiversityConfig, runs: Vec<RunResult>, type_counts: &[usize]) -> Result<DiversitySummary> {
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let mut baseline: Option<Scores> = None;
        for (k, (partition, _)) in cfg.manifests.iter().enumerate() {
            let mine: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.partition == *partition && r.mode == mode && cfg.seeds.contains(&r.seed))
                .collect();
            if mine.len() != cfg.seeds.len() {
                return Err(Error::State(format!("missing runs for {partition}/{mode}")));
            }
            let scores = mean_scores(&mine);
            let base = *baseline.get_or_insert(scores);
            rows.push(SummaryRow {
                partition: *partition,
                mode,
                noise_types: type_counts[k],
                seeds: mine.len(),
                scores,
                improvement_pct: Scores {
                    si_sdr_db: relative_improvement(scores.si_sdr_db, base.si_sdr_db),
                    stoi: relative_improvement(scores.stoi, base.stoi),
                    seg_snr_db: relative_improvement(scores.seg_snr_db, base.seg_snr_db),
                },
            });
        }
    }
    Ok(DiversitySummary { rows, runs })
}

/// Trains one model per (corpus, mode, seed) and scores it on the test set.
/// Runs already present in `prior` are reused instead of retrained.
pub fn run_diversity_experiment(cfg: &DiversityConfig, prior: &[RunResult]) -> Result<DiversitySummary> {
    cfg.validate()?;
    let test = Manifest::read(&cfg.test_manifest)?;
    let mut corpora = Vec::new();
    for (partition, path) in &cfg.manifests {
        let m = Manifest::read(path)?;
        // leakage is checked for every corpus before anything is trained
        let types: Vec<String> = m.noise_types().into_iter().collect();
        check_test_manifest(&test, &types)?;
        corpora.push((*partition, path.clone(), m.clean_seconds()?, types.len()));
    }
    let durations: Vec<f64> = corpora.iter().map(|c| c.2).collect();
    let (lo, hi) = durations
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if hi - lo > DURATION_TOLERANCE * lo {
        return Err(Error::Protocol(format!(
            "training corpora differ in duration by more than 1% ({lo:.1} s vs {hi:.1} s)"
        )));
    }

    let mut runs = Vec::new();
    for &mode in &cfg.modes {
        for (partition, path, _, _) in &corpora {
            for &seed in &cfg.seeds {
                let known = prior
                    .iter()
                    .find(|r| r.partition == *partition && r.mode == mode && r.seed == seed);
                if let Some(r) = known {
                    runs.push(r.clone());
                    continue;
                }
                let train_cfg = TrainConfig {
                    embedding_mode: mode,
                    seed,
                    manifest: path.clone(),
                    ..cfg.base.clone()
                };
                let outcome = train_model(&train_cfg)?;
                if let Some(dir) = &cfg.work_dir {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    outcome.best.save(&dir.join(format!("{partition}_{mode}_{seed}.ckpt")))?;
                }
                let scores = evaluate_model(&outcome.best, &test)?.mean()?;
                runs.push(RunResult {
                    partition: *partition,
                    mode,
                    seed,
                    scores,
                });
            }
        }
    }
    let counts: Vec<usize> = corpora.iter().map(|c| c.3).collect();
    summarize(cfg, runs, &counts)
}

/// Trains on `cfg.manifest` and scores on `test`.
pub fn train_and_score(cfg: &TrainConfig, test: &Manifest) -> Result<(Checkpoint, Scores)> {
    let outcome = train_model(cfg)?;
    let scores = evaluate_model(&outcome.best, test)?.mean()?;
    Ok((outcome.best, scores))
}
