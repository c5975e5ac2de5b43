//! Training, checkpointing and evaluation end to end on a tiny corpus.

use std::fs;

use ntse_core::datakit::{
    build_manifest, generate_corpus, BuildConfig, CorpusConfig, CorpusLayout, Manifest, Partition, Split,
    TEST_SNRS, TRAIN_SNRS,
};
use ntse_core::dsp::{stft, StftParams};
use ntse_core::enhancer::{enhance_with_mask, ideal_ratio_mask, EmbeddingMode, ModelConfig, Scale};
use ntse_core::evalkit::{si_sdr, MetricsReport};
use ntse_core::runner::train::write_curve;
use ntse_core::runner::{
    evaluate_identity, evaluate_model, run_diversity_experiment, train_model, Checkpoint, DiversityConfig,
    TrainConfig, TrainData, Trainer,
};
use ntse_core::Error;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
    train: std::path::PathBuf,
    test: Manifest,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let c: CorpusLayout = generate_corpus(
        dir.path(),
        &CorpusConfig {
            clean_train: 60,
            clean_test: 24,
            clip_seconds: 1.0,
            noise_files: 2,
            noise_seconds: 2.0,
            seed: 9,
        },
    )
    .unwrap();
    let train = build_manifest(
        &c.clean_train(),
        &c.noise(),
        &BuildConfig {
            split: Split::Train,
            partition: Partition::N7,
            minutes: 0.9,
            snr_levels: TRAIN_SNRS.to_vec(),
            seed: 2,
        },
    )
    .unwrap();
    let path = dir.path().join("train.csv");
    train.write(&path).unwrap();
    let test = build_manifest(
        &c.clean_test(),
        &c.noise(),
        &BuildConfig {
            split: Split::Test,
            partition: Partition::N7,
            minutes: 0.34,
            snr_levels: TEST_SNRS.to_vec(),
            seed: 3,
        },
    )
    .unwrap();
    Fixture { dir, train: path, test }
}

fn quick(mode: EmbeddingMode, f: &Fixture) -> TrainConfig {
    TrainConfig {
        embedding_mode: mode,
        segment_seconds: 0.5,
        batch_size: 2,
        steps: 4,
        validate_every: 2,
        manifest: f.train.clone(),
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_training_is_byte_identical() {
    let f = fixture();
    for mode in [EmbeddingMode::None, EmbeddingMode::Dnat, EmbeddingMode::Nts] {
        let a = train_model(&quick(mode, &f)).unwrap();
        let b = train_model(&quick(mode, &f)).unwrap();
        assert_eq!(a.best.to_bytes(), b.best.to_bytes(), "{mode}");
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 4);
        assert!(a.curve[1].val_loss.is_some() && a.curve[3].val_loss.is_some());
        assert!(a.curve[0].val_loss.is_none());

        let other = train_model(&TrainConfig { seed: 12, ..quick(mode, &f) }).unwrap();
        assert_ne!(a.best.to_bytes(), other.best.to_bytes());
    }
}

#[test]
fn loaded_checkpoint_scores_identically() {
    let f = fixture();
    let out = train_model(&quick(EmbeddingMode::Nts, &f)).unwrap();
    let path = f.dir.path().join("m.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());

    let before = evaluate_model(&out.best, &f.test).unwrap();
    let after = evaluate_model(&loaded, &f.test).unwrap();
    assert_eq!(before, after);
    assert_eq!(after.rows.len(), f.test.len());

    let report = f.dir.path().join("report.csv");
    after.write(&report).unwrap();
    assert_eq!(MetricsReport::read(&report).unwrap(), after);

    let curve = f.dir.path().join("curve.csv");
    write_curve(&out.curve, &curve).unwrap();
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), out.curve.len() + 1);
}

#[test]
fn evaluation_guards_the_protocol() {
    let f = fixture();
    let train = Manifest::read(&f.train).unwrap();
    let ckpt = Checkpoint::untrained(ModelConfig::new(EmbeddingMode::None, Scale::Toy), 0).unwrap();
    assert!(matches!(evaluate_model(&ckpt, &train), Err(Error::Protocol(_))));
    assert!(matches!(evaluate_model(&ckpt, &Manifest::default()), Err(Error::Empty(_))));

    let mut leaky = ckpt.clone();
    leaky.train_noise_types = vec!["babble".into()];
    assert!(matches!(evaluate_model(&leaky, &f.test), Err(Error::Leakage(_))));
}

#[test]
fn identity_report_matches_the_mixing_snr() {
    let f = fixture();
    let report = evaluate_identity(&f.test).unwrap();
    assert_eq!(report.rows.len(), f.test.len());
    // at the mixing SNR the noisy signal's SI-SDR is close to the SNR itself
    for row in &report.rows {
        assert!((row.scores.si_sdr_db - row.snr_db).abs() < 0.5, "{row:?}");
    }
}

#[test]
fn oracle_ratio_mask_beats_the_noisy_input() {
    let f = fixture();
    let params = StftParams::default();
    for e in &f.test.entries {
        let mix = e.synthesize().unwrap();
        let mask = ideal_ratio_mask(&stft(&mix.clean, params).unwrap(), &stft(&mix.noisy, params).unwrap()).unwrap();
        let out = enhance_with_mask(&mix.noisy, &mask).unwrap();
        let noisy = si_sdr(&mix.noisy, &mix.clean).unwrap();
        let oracle = si_sdr(&out, &mix.clean).unwrap();
        assert!(oracle > noisy + 3.0, "{}: {oracle} vs {noisy}", e.noise_type);
    }
}

#[test]
fn non_finite_parameters_abort_training() {
    let f = fixture();
    let cfg = quick(EmbeddingMode::None, &f);
    let data = TrainData::from_manifest(&Manifest::read(&f.train).unwrap(), cfg.validation_fraction).unwrap();
    let mut trainer = Trainer::new(cfg, ModelConfig::new(EmbeddingMode::None, Scale::Toy), data).unwrap();
    trainer.train_step().unwrap();
    trainer.model.store.iter_mut().next().unwrap().value.data_mut()[0] = f64::NAN;
    match trainer.train_step() {
        Err(Error::Diverged { step, utterance, .. }) => {
            assert_eq!(step, 2);
            assert!(!utterance.is_empty());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn diversity_rejects_unequal_corpora_and_leaks_before_training() {
    let f = fixture();
    let test_path = f.dir.path().join("test.csv");
    f.test.write(&test_path).unwrap();
    let full = Manifest::read(&f.train).unwrap();
    let short = Manifest {
        entries: full.entries[..full.len() / 2].to_vec(),
    };
    let short_path = f.dir.path().join("short.csv");
    short.write(&short_path).unwrap();

    let text = |n7: &std::path::Path, n21: &std::path::Path, test: &std::path::Path| {
        format!(
            "manifest_n7 = {}\nmanifest_n21 = {}\ntest_manifest = {}\nsteps = 1\nseeds = 0\n",
            n7.display(),
            n21.display(),
            test.display()
        )
    };
    let unequal = DiversityConfig::parse(&text(&short_path, &f.train, &test_path)).unwrap();
    assert!(matches!(run_diversity_experiment(&unequal, &[]), Err(Error::Protocol(_))));

    // a training manifest in the test slot fails before any model is trained
    let swapped = DiversityConfig::parse(&text(&f.train, &f.train, &f.train)).unwrap();
    assert!(matches!(run_diversity_experiment(&swapped, &[]), Err(Error::Protocol(_))));
}
