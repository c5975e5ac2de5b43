//! `ntse`: corpus synthesis, mixing, training, enhancement and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ntse_core::datakit::{
    build_manifest, generate_corpus, read_wav, write_wav, BuildConfig, CorpusConfig, Manifest, Partition, Split,
};
use ntse_core::dnat::{track_noise_psd, write_psd_csv, DnatConfig};
use ntse_core::dsp::{stft, StftParams};
use ntse_core::enhancer::{enhance_utterance, EmbeddingMode, Enhanced, Scale};
use ntse_core::runner::config::parse_key_values;
use ntse_core::runner::train::write_curve;
use ntse_core::runner::{evaluate_model, run_diversity_experiment, train_model, Checkpoint, DiversityConfig, TrainConfig};
use ntse_core::tokens::export_weights;
use ntse_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ntse", version, about = "Noise-token conditioned speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clean-speech and noise corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of clean training clips.
        #[arg(long, default_value_t = 330)]
        clean_train: usize,
        /// Number of clean test clips.
        #[arg(long, default_value_t = 40)]
        clean_test: usize,
    },
    /// Build a mixture manifest and write the mixtures under `--out`.
    Mix {
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        /// n7, n12, n16 or n21.
        #[arg(long)]
        partition: Partition,
        /// train or test.
        #[arg(long)]
        split: Split,
        #[arg(long)]
        minutes: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; the loss curve is written next to the checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// none, dnat or nts.
        #[arg(long)]
        mode: EmbeddingMode,
        /// toy or paper.
        #[arg(long, default_value = "toy")]
        scale: Scale,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Further `key = value` training settings; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Enhance one WAV file.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-frame template weights (nts models only).
        #[arg(long)]
        dump_weights: Option<PathBuf>,
    },
    /// Score a checkpoint on a test manifest.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Dump per-frame template weights for one WAV file.
    Tokens {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the tracked noise PSD of one WAV file.
    Dnat {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score one model per corpus, mode and seed.
    Diversity {
        #[arg(long)]
        base_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn enhance_file(ckpt: &Path, input: &Path) -> Result<Enhanced> {
    let ckpt = Checkpoint::load(ckpt)?;
    let wave = read_wav(input)?;
    enhance_utterance(&wave, &ckpt.model, ckpt.model.config.mode)
}

fn write_weights(enhanced: &Enhanced, path: &Path) -> Result<()> {
    let weights = enhanced
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("template weights exist only for nts checkpoints".into()))?;
    export_weights(weights, path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::Io {
            path: p.to_owned(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            seed,
            clean_train,
            clean_test,
        } => {
            let cfg = CorpusConfig {
                clean_train,
                clean_test,
                seed,
                ..CorpusConfig::default()
            };
            let layout = generate_corpus(&out, &cfg)?;
            println!(
                "clean train {}, clean test {}, noise {}",
                layout.clean_train().display(),
                layout.clean_test().display(),
                layout.noise().display()
            );
        }
        Command::Mix {
            clean_dir,
            noise_dir,
            partition,
            split,
            minutes,
            seed,
            out,
        } => {
            let cfg = BuildConfig {
                split,
                partition,
                minutes,
                snr_levels: split.default_snrs().to_vec(),
                seed,
            };
            let manifest = build_manifest(&clean_dir, &noise_dir, &cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            manifest.write(&out.join("manifest.csv"))?;
            manifest.write_mixtures(&out)?;
            println!("{} mixtures, {} noise types", manifest.len(), manifest.noise_types().len());
        }
        Command::Train {
            manifest,
            mode,
            scale,
            steps,
            seed,
            out,
            config,
        } => {
            let mut pairs = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    parse_key_values(&text)?
                }
                None => Vec::new(),
            };
            pairs.retain(|(k, _)| !matches!(k.as_str(), "manifest" | "embedding_mode" | "scale" | "seed"));
            let mut cfg = TrainConfig::from_pairs(&pairs)?;
            cfg.manifest = manifest;
            cfg.embedding_mode = mode;
            cfg.scale = scale;
            cfg.seed = seed;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            cfg.validate()?;
            let outcome = train_model(&cfg)?;
            ensure_parent(&out)?;
            outcome.best.save(&out)?;
            write_curve(&outcome.curve, &out.with_extension("curve.csv"))?;
            println!("best checkpoint from step {} written to {}", outcome.best_step, out.display());
        }
        Command::Enhance {
            ckpt,
            input,
            out,
            dump_weights,
        } => {
            let enhanced = enhance_file(&ckpt, &input)?;
            if let Some(path) = &dump_weights {
                write_weights(&enhanced, path)?;
            }
            write_wav(&out, &enhanced.wave)?;
        }
        Command::Evaluate { ckpt, manifest, report } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let manifest = Manifest::read(&manifest)?;
            let metrics = evaluate_model(&ckpt, &manifest)?;
            metrics.write(&report)?;
            let m = metrics.mean()?;
            println!(
                "{} utterances: si_sdr {:.3} dB, stoi {:.4}, seg_snr {:.3} dB",
                metrics.rows.len(),
                m.si_sdr_db,
                m.stoi,
                m.seg_snr_db
            );
        }
        Command::Tokens { ckpt, input, out } => {
            let enhanced = enhance_file(&ckpt, &input)?;
            write_weights(&enhanced, &out)?;
        }
        Command::Dnat { input, out } => {
            let wave = read_wav(&input)?;
            let spec = stft(&wave, StftParams::default())?;
            let track = track_noise_psd(&spec.magnitude(), &DnatConfig::default())?;
            write_psd_csv(&track, &out)?;
        }
        Command::Diversity { base_config, out } => {
            let cfg = DiversityConfig::load(&base_config)?;
            let summary = run_diversity_experiment(&cfg, &[])?;
            summary.write(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
