//! Scoring enhanced test mixtures.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use crate::datakit::{entry_id, Manifest, Split};
use crate::dsp::Waveform;
use crate::enhancer::enhance_utterance;
use crate::error::{Error, Result};
use crate::evalkit::{score, MetricsReport, MetricsRow};

/// Errors unless every entry is a test entry whose noise type is absent
/// from `train_types`.
pub fn check_test_manifest(manifest: &Manifest, train_types: &[String]) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::Empty("test manifest has no entries".into()));
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.split != Split::Test) {
        return Err(Error::Protocol(format!(
            "evaluation needs test entries, found a {} entry ({})",
            e.split, e.clean_path
        )));
    }
    let train: BTreeSet<&str> = train_types.iter().map(String::as_str).collect();
    let shared: Vec<String> = manifest
        .noise_types()
        .into_iter()
        .filter(|t| train.contains(t.as_str()))
        .collect();
    if !shared.is_empty() {
        return Err(Error::Leakage(format!(
            "test noise types {shared:?} were used in training"
        )));
    }
    Ok(())
}

/// Scores `enhance(noisy)` against the clean reference of every entry.
pub fn evaluate_with<F>(manifest: &Manifest, enhance: F) -> Result<MetricsReport>
where
    F: Fn(&Waveform) -> Result<Waveform> + Sync,
{
    let rows = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mix = e.synthesize()?;
            let out = enhance(&mix.noisy)?;
            Ok(MetricsRow {
                id: entry_id(i),
                noise_type: e.noise_type.clone(),
                snr_db: e.snr_db,
                scores: score(&out, &mix.clean)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { rows })
}

/// Enhances every test entry with the checkpoint's model and scores it.
pub fn evaluate_model(ckpt: &Checkpoint, manifest: &Manifest) -> Result<MetricsReport> {
    check_test_manifest(manifest, &ckpt.train_noise_types)?;
    let mode = ckpt.model.config.mode;
    evaluate_with(manifest, |noisy| Ok(enhance_utterance(noisy, &ckpt.model, mode)?.wave))
}

/// Metrics of the unprocessed noisy mixtures.
pub fn evaluate_identity(manifest: &Manifest) -> Result<MetricsReport> {
    check_test_manifest(manifest, &[])?;
    evaluate_with(manifest, |noisy| Ok(noisy.clone()))
}
