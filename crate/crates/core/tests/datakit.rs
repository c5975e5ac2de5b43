//! Manifests, partitions and mixtures over a small synthetic corpus.

use std::collections::BTreeMap;
use std::fs;

use ntse_core::datakit::manifest::{list_wavs, MANIFEST_HEADER};
use ntse_core::datakit::{
    build_manifest, generate_corpus, measured_snr, read_wav, BuildConfig, CorpusConfig, CorpusLayout,
    Manifest, Partition, Split, TEST_NOISE_TYPES, TEST_SNRS, TRAIN_SNRS,
};
use ntse_core::Error;
use tempfile::TempDir;

fn corpus() -> (TempDir, CorpusLayout) {
    let dir = TempDir::new().unwrap();
    let cfg = CorpusConfig {
        clean_train: 120,
        clean_test: 24,
        clip_seconds: 1.0,
        noise_files: 2,
        noise_seconds: 2.0,
        seed: 5,
    };
    let layout = generate_corpus(dir.path(), &cfg).unwrap();
    (dir, layout)
}

fn train_cfg(partition: Partition, minutes: f64, seed: u64) -> BuildConfig {
    BuildConfig {
        split: Split::Train,
        partition,
        minutes,
        snr_levels: TRAIN_SNRS.to_vec(),
        seed,
    }
}

#[test]
fn manifests_are_deterministic_nested_and_leak_free() {
    let (dir, c) = corpus();
    let build = |p, seed| build_manifest(&c.clean_train(), &c.noise(), &train_cfg(p, 1.8, seed)).unwrap();

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    build(Partition::N7, 3).write(&a).unwrap();
    build(Partition::N7, 3).write(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), MANIFEST_HEADER);

    let n7 = build(Partition::N7, 3);
    assert_eq!(Manifest::read(&a).unwrap(), n7);
    let n21 = build(Partition::N21, 3);
    assert_eq!(n7.noise_types().len(), 7);
    assert_eq!(n21.noise_types().len(), 21);
    assert!(n7.noise_types().is_subset(&n21.noise_types()));
    let mut previous = n7.noise_types();
    for p in [Partition::N12, Partition::N16, Partition::N21] {
        let types = build(p, 3).noise_types();
        assert!(previous.is_subset(&types), "{p}");
        previous = types;
    }
    for m in [&n7, &n21] {
        for e in &m.entries {
            assert!(!TEST_NOISE_TYPES.contains(&e.noise_type.as_str()));
            assert!(TRAIN_SNRS.contains(&e.snr_db));
        }
    }
}

#[test]
fn snr_levels_are_balanced() {
    let (_dir, c) = corpus();
    let m = build_manifest(&c.clean_train(), &c.noise(), &train_cfg(Partition::N12, 0.9, 1)).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &m.entries {
        *counts.entry(e.snr_db.to_string()).or_default() += 1;
    }
    assert_eq!(counts.len(), 5);
    let mean = m.len() as f64 / 5.0;
    for (level, n) in counts {
        assert!((n as f64 - mean).abs() <= 1.0, "{level}: {n} vs {mean}");
    }
}

#[test]
fn insufficient_clean_audio_is_a_capacity_error() {
    let (_dir, c) = corpus();
    let r = build_manifest(&c.clean_train(), &c.noise(), &train_cfg(Partition::N7, 5.0, 0));
    assert!(matches!(r, Err(Error::Capacity(_))), "{r:?}");
}

#[test]
fn wrong_split_levels_are_rejected() {
    let (_dir, c) = corpus();
    let mut cfg = train_cfg(Partition::N7, 0.2, 0);
    cfg.snr_levels = TEST_SNRS.to_vec();
    assert!(matches!(
        build_manifest(&c.clean_train(), &c.noise(), &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn shared_noise_type_is_leakage() {
    let (_dir, c) = corpus();
    let src = c.noise().join("test").join("babble");
    let dst = c.noise().join("train").join("babble");
    fs::create_dir_all(&dst).unwrap();
    for f in list_wavs(&src).unwrap() {
        fs::copy(&f, dst.join(f.file_name().unwrap())).unwrap();
    }
    let r = build_manifest(&c.clean_train(), &c.noise(), &train_cfg(Partition::N7, 0.2, 0));
    assert!(matches!(r, Err(Error::Leakage(_))), "{r:?}");
}

#[test]
fn test_manifest_uses_every_test_type() {
    let (_dir, c) = corpus();
    let cfg = BuildConfig {
        split: Split::Test,
        partition: Partition::N7,
        minutes: 0.34,
        snr_levels: TEST_SNRS.to_vec(),
        seed: 4,
    };
    let m = build_manifest(&c.clean_test(), &c.noise(), &cfg).unwrap();
    assert_eq!(m.noise_types().len(), TEST_NOISE_TYPES.len());
    assert!(m.entries.iter().all(|e| e.split == Split::Test && TEST_SNRS.contains(&e.snr_db)));
}

#[test]
fn written_mixtures_hit_the_requested_snr() {
    let (dir, c) = corpus();
    let m = build_manifest(&c.clean_train(), &c.noise(), &train_cfg(Partition::N7, 0.2, 8)).unwrap();
    let out = dir.path().join("mixed");
    let paths = m.write_mixtures(&out).unwrap();
    assert_eq!(paths.len(), m.len());
    for (i, (e, path)) in m.entries.iter().zip(&paths).enumerate() {
        let expect = out
            .join("train")
            .join(&e.noise_type)
            .join(format!("{i:05}_{}.wav", e.snr_db));
        assert_eq!(path, &expect);
        let mix = e.synthesize().unwrap();
        let snr = measured_snr(mix.clean.samples(), mix.noise.samples());
        assert!((snr - e.snr_db).abs() < 0.01, "{snr} vs {}", e.snr_db);
        let on_disk = read_wav(path).unwrap();
        assert_eq!(on_disk.len(), mix.noisy.len());
    }
}

#[test]
fn corpus_generation_is_deterministic() {
    let (_a, ca) = corpus();
    let (_b, cb) = corpus();
    let fa = list_wavs(&ca.noise().join("test").join("typing")).unwrap();
    let fb = list_wavs(&cb.noise().join("test").join("typing")).unwrap();
    assert_eq!(fs::read(&fa[1]).unwrap(), fs::read(&fb[1]).unwrap());
    let ga = list_wavs(&ca.clean_train()).unwrap();
    let gb = list_wavs(&cb.clean_train()).unwrap();
    assert_eq!(fs::read(&ga[7]).unwrap(), fs::read(&gb[7]).unwrap());
}
