//! Objective metrics: SI-SDR, STOI and segmental SNR, plus CSV reports.

pub mod stoi;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub use stoi::{stoi, Resampler};

pub const SI_SDR_CAP_DB: f64 = 60.0;
pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEIL_DB: f64 = 35.0;
/// Frames quieter than this relative to the loudest reference frame are
/// skipped by [`seg_snr`].
pub const SEG_SNR_RANGE_DB: f64 = 40.0;
const SEG_FRAME: usize = 512;
const SEG_HOP: usize = 256;
const SILENT: f64 = 1e-20;

pub const REPORT_HEADER: &str = "id,noise_type,snr_db,si_sdr_db,stoi,seg_snr_db";
pub const CELLS_HEADER: &str =
    "noise_type,snr_db,count,si_sdr_db,si_sdr_std,stoi,stoi_std,seg_snr_db,seg_snr_std";

fn same_length(op: &str, a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "{op}: estimate has {} samples, reference {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64, lo: f64, hi: f64) -> f64 {
    if den <= 0.0 {
        return hi;
    }
    if num <= 0.0 {
        return lo;
    }
    (10.0 * (num / den).log10()).clamp(lo, hi)
}

/// Scale-invariant SDR in dB, capped to +-60.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    same_length("si_sdr", estimate, reference)?;
    let center = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (e, r) = (center(estimate.samples()), center(reference.samples()));
    let rr = dot(&r, &r);
    if rr < SILENT {
        return Err(Error::Degenerate("si_sdr: reference is silent".into()));
    }
    let alpha = dot(&e, &r) / rr;
    let target: Vec<f64> = r.iter().map(|v| alpha * v).collect();
    let residual: Vec<f64> = e.iter().zip(&target).map(|(a, b)| a - b).collect();
    Ok(ratio_db(dot(&target, &target), dot(&residual, &residual), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Per-frame SNRs (32 ms frames, 50% overlap) of frames within 40 dB of the
/// loudest reference frame, each clamped to [-10, 35] dB.
pub fn seg_snr_frames(estimate: &Waveform, reference: &Waveform) -> Result<Vec<f64>> {
    same_length("seg_snr", estimate, reference)?;
    let (e, r) = (estimate.samples(), reference.samples());
    let frame = SEG_FRAME.min(r.len());
    let starts: Vec<usize> = if r.is_empty() {
        Vec::new()
    } else {
        (0..=r.len() - frame).step_by(SEG_HOP).collect()
    };
    let energy: Vec<f64> = starts.iter().map(|&s| dot(&r[s..s + frame], &r[s..s + frame])).collect();
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    if peak < SILENT {
        return Err(Error::Degenerate("seg_snr: reference is silent".into()));
    }
    let floor = peak * 10f64.powf(-SEG_SNR_RANGE_DB / 10.0);
    Ok(starts
        .iter()
        .zip(&energy)
        .filter(|(_, &en)| en > floor)
        .map(|(&s, &en)| {
            let err: f64 = (s..s + frame).map(|i| (r[i] - e[i]).powi(2)).sum();
            ratio_db(en, err, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
        })
        .collect())
}

/// Mean of [`seg_snr_frames`].
pub fn seg_snr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    let frames = seg_snr_frames(estimate, reference)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub si_sdr_db: f64,
    pub stoi: f64,
    pub seg_snr_db: f64,
}

pub fn score(estimate: &Waveform, reference: &Waveform) -> Result<Scores> {
    Ok(Scores {
        si_sdr_db: si_sdr(estimate, reference)?,
        stoi: stoi(estimate, reference)?,
        seg_snr_db: seg_snr(estimate, reference)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub noise_type: String,
    pub snr_db: f64,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub noise_type: String,
    pub snr_db: f64,
    pub count: usize,
    /// (mean, population std) per metric
    pub si_sdr_db: (f64, f64),
    pub stoi: (f64, f64),
    pub seg_snr_db: (f64, f64),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn column(&self, f: impl Fn(&Scores) -> f64) -> Vec<f64> {
        self.rows.iter().map(|r| f(&r.scores)).collect()
    }

    pub fn mean(&self) -> Result<Scores> {
        if self.rows.is_empty() {
            return Err(Error::Empty("metrics report has no rows".into()));
        }
        Ok(Scores {
            si_sdr_db: mean_std(&self.column(|s| s.si_sdr_db)).0,
            stoi: mean_std(&self.column(|s| s.stoi)).0,
            seg_snr_db: mean_std(&self.column(|s| s.seg_snr_db)).0,
        })
    }

    /// Aggregates per (noise type, SNR) cell, sorted by type then SNR.
    pub fn cells(&self) -> Vec<CellSummary> {
        let mut groups: BTreeMap<(String, i64), Vec<&MetricsRow>> = BTreeMap::new();
        for r in &self.rows {
            // SNR levels are multiples of 0.5 dB; key on millibels for ordering
            let key = (r.noise_type.clone(), (r.snr_db * 100.0).round() as i64);
            groups.entry(key).or_default().push(r);
        }
        groups
            .into_values()
            .map(|rows| {
                let col = |f: fn(&Scores) -> f64| mean_std(&rows.iter().map(|r| f(&r.scores)).collect::<Vec<_>>());
                CellSummary {
                    noise_type: rows[0].noise_type.clone(),
                    snr_db: rows[0].snr_db,
                    count: rows.len(),
                    si_sdr_db: col(|s| s.si_sdr_db),
                    stoi: col(|s| s.stoi),
                    seg_snr_db: col(|s| s.seg_snr_db),
                }
            })
            .collect()
    }

    /// Path of the per-cell file written next to a report.
    pub fn cells_path(report: &Path) -> PathBuf {
        let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        report.with_file_name(format!("{stem}_cells.csv"))
    }

    /// Writes the per-utterance report and the per-cell aggregates beside it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.noise_type.clone(),
                r.snr_db.to_string(),
                r.scores.si_sdr_db.to_string(),
                r.scores.stoi.to_string(),
                r.scores.seg_snr_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let cells_path = Self::cells_path(path);
        let mut w = csv::Writer::from_path(&cells_path)?;
        w.write_record(CELLS_HEADER.split(','))?;
        for c in self.cells() {
            w.write_record([
                c.noise_type,
                c.snr_db.to_string(),
                c.count.to_string(),
                c.si_sdr_db.0.to_string(),
                c.si_sdr_db.1.to_string(),
                c.stoi.0.to_string(),
                c.stoi.1.to_string(),
                c.seg_snr_db.0.to_string(),
                c.seg_snr_db.1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&cells_path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
            return Err(Error::Format(format!("{}: report header must be {REPORT_HEADER:?}", path.display())));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: row {}: bad number {:?}", path.display(), i + 1, &rec[k])))
            };
            rows.push(MetricsRow {
                id: rec[0].to_owned(),
                noise_type: rec[1].to_owned(),
                snr_db: num(2)?,
                scores: Scores {
                    si_sdr_db: num(3)?,
                    stoi: num(4)?,
                    seg_snr_db: num(5)?,
                },
            });
        }
        Ok(MetricsReport { rows })
    }
}
