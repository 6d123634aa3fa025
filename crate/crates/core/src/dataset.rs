//! Manifest-driven training-pair generation.
//!
//! A manifest is a JSON array of entries:
//!
//! ```json
//! [{"clean_path": "clean/a.wav", "rir_path": "rir/large.wav", "rir_channel": 3,
//!   "noise_path": "noise/ac.wav", "snr_db": 20,
//!   "target": {"kind": "rts", "t60_target_s": 0.15}, "seed": 17}]
//! ```
//!
//! Relative paths resolve against the manifest's directory. `seed` is
//! optional; when absent it is derived from the master seed and the entry
//! index. Each entry `i` produces `{i:05}_input.wav`, `{i:05}_target.wav` and
//! `{i:05}.json` in the output directory, plus one `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rir::{estimate_t60, RoomImpulseResponse, DEFAULT_FIT_RANGE_DB};
use crate::target::{make_training_pair, TargetSpec};
use crate::wav::{encode_wav, read_wav, write_atomic, WavEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub rir_path: PathBuf,
    #[serde(default)]
    pub rir_channel: usize,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub target: TargetSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Parses and validates every entry; nothing is processed if any entry
    /// is malformed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if entries.is_empty() {
            return Err(Error::Manifest("no entries".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            e.target
                .validate()
                .map_err(|err| Error::Manifest(format!("entry {i}: {err}")))?;
            if e.snr_db.is_nan() {
                return Err(Error::Manifest(format!("entry {i}: snr_db is NaN")));
            }
        }
        Ok(Self { entries, base_dir })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Stable per-entry seed from a master seed (splitmix64 finaliser over both
/// words), independent of processing order and worker count.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sidecar written next to each pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetadata {
    pub index: usize,
    pub clean_path: PathBuf,
    pub rir_path: PathBuf,
    pub rir_channel: usize,
    pub noise_path: PathBuf,
    pub target: TargetSpec,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub length: usize,
    pub snr_db: f64,
    pub noise_gain: f64,
    pub noise_offset: usize,
    pub n1: usize,
    /// `None` when the RIR has no measurable decay.
    pub t60_estimated_s: Option<f64>,
    /// Only for RTS targets.
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failures: Vec<EntryFailure>,
}

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub master_seed: u64,
}

fn process_entry(
    manifest: &Manifest,
    index: usize,
    entry: &ManifestEntry,
    opts: &PrepOptions,
) -> Result<PairMetadata> {
    let clean = read_wav(manifest.resolve(&entry.clean_path), 0)?;
    let rir_wave = read_wav(manifest.resolve(&entry.rir_path), entry.rir_channel)?;
    let noise = read_wav(manifest.resolve(&entry.noise_path), 0)?;
    let t60_estimated_s = estimate_t60(&rir_wave, DEFAULT_FIT_RANGE_DB)
        .ok()
        .map(|d| d.t60_s);
    let rir = RoomImpulseResponse::from_measured(rir_wave)?;
    let seed = entry
        .seed
        .unwrap_or_else(|| derive_seed(opts.master_seed, index as u64));
    let pair = make_training_pair(&clean, &rir, &entry.target, &noise, entry.snr_db, seed)?;

    let meta = PairMetadata {
        index,
        clean_path: entry.clean_path.clone(),
        rir_path: entry.rir_path.clone(),
        rir_channel: entry.rir_channel,
        noise_path: entry.noise_path.clone(),
        target: entry.target,
        seed,
        sample_rate_hz: pair.input.sample_rate_hz(),
        length: pair.input.len(),
        snr_db: entry.snr_db,
        noise_gain: pair.noise_gain,
        noise_offset: pair.noise_offset,
        n1: pair.window.n1,
        t60_estimated_s,
        q: matches!(entry.target, TargetSpec::Rts { .. }).then_some(pair.window.q),
    };
    let stem = format!("{index:05}");
    let dir = &opts.out_dir;
    write_atomic(
        &dir.join(format!("{stem}_input.wav")),
        &encode_wav(&pair.input, WavEncoding::Float32)?,
    )?;
    write_atomic(
        &dir.join(format!("{stem}_target.wav")),
        &encode_wav(&pair.target, WavEncoding::Float32)?,
    )?;
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&dir.join(format!("{stem}.json")), &json)?;
    Ok(meta)
}

/// Processes every entry on a pool of `opts.jobs` workers. Per-entry
/// failures are collected rather than aborting the batch.
pub fn prepare_dataset(manifest: &Manifest, opts: &PrepOptions) -> Result<PrepSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let results: Vec<Result<PairMetadata>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| process_entry(manifest, i, e, opts))
            .collect()
    });
    let failures: Vec<EntryFailure> = results
        .iter()
        .enumerate()
        .filter_map(|(index, r)| {
            r.as_ref().err().map(|e| EntryFailure {
                index,
                error: e.to_string(),
            })
        })
        .collect();
    let summary = PrepSummary {
        total: results.len(),
        succeeded: results.len() - failures.len(),
        failures,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&opts.out_dir.join("summary.json"), &json)?;
    Ok(summary)
}
