//! Scripted scenarios that regenerate the window/RIR shape plots and the EDC
//! comparison on synthetic data.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::{edc_report, EdcTable, DEFAULT_REGULARIZATION, DEFAULT_RIR_LENGTH_S};
use crate::error::Result;
use crate::rir::{synth_polack_rir, PolackParams, RoomImpulseResponse};
use crate::signal::{convolve, Waveform};
use crate::target::{build_window, shorten_rir, ShorteningWindow, TargetSpec};
use crate::wav::write_atomic;

pub const SCENARIO_T60_S: f64 = 0.7;
const SCENARIO_SEED: u64 = 2022;
const SCENARIO_ONSET_S: f64 = 0.005;

/// The source RIR shared by both scenarios.
pub fn scenario_rir() -> Result<RoomImpulseResponse> {
    let mut params = PolackParams::new(SCENARIO_T60_S, SCENARIO_SEED);
    params.onset_s = SCENARIO_ONSET_S;
    synth_polack_rir(&params)
}

fn targets() -> [(&'static str, TargetSpec); 3] {
    [
        ("direct", TargetSpec::DirectPath),
        ("early", TargetSpec::early()),
        ("rts", TargetSpec::rts()),
    ]
}

pub struct Fig1Data {
    pub rir: RoomImpulseResponse,
    /// (name, window) for direct, early and rts.
    pub windows: Vec<(&'static str, ShorteningWindow)>,
    /// (name, desired part of the RIR), same order.
    pub desired: Vec<(&'static str, RoomImpulseResponse)>,
}

pub fn fig1_data() -> Result<Fig1Data> {
    let rir = scenario_rir()?;
    let mut windows = Vec::new();
    let mut desired = Vec::new();
    for (name, spec) in targets() {
        windows.push((name, build_window(&spec, &rir)?));
        desired.push((name, shorten_rir(&rir, &spec)?));
    }
    Ok(Fig1Data {
        rir,
        windows,
        desired,
    })
}

/// Writes `windows.csv` (time_s, direct, early, rts) and
/// `rir_<target>.csv` (time_s, original, desired) for each target.
pub fn scenario_fig1(out_dir: &Path) -> Result<Fig1Data> {
    fs::create_dir_all(out_dir)?;
    let data = fig1_data()?;
    let fs_hz = data.rir.sample_rate_hz() as f64;

    let mut csv = String::from("time_s,direct,early,rts\n");
    for n in 0..data.rir.len() {
        csv.push_str(&(n as f64 / fs_hz).to_string());
        for (_, w) in &data.windows {
            csv.push(',');
            csv.push_str(&w.values[n].to_string());
        }
        csv.push('\n');
    }
    write_atomic(&out_dir.join("windows.csv"), csv.as_bytes())?;

    let original = data.rir.wave().samples();
    for (name, d) in &data.desired {
        let mut csv = String::from("time_s,original,desired\n");
        for (n, (o, v)) in original.iter().zip(d.wave().samples()).enumerate() {
            csv.push_str(&format!("{},{},{}\n", n as f64 / fs_hz, o, v));
        }
        write_atomic(&out_dir.join(format!("rir_{name}.csv")), csv.as_bytes())?;
    }
    Ok(data)
}

/// White-noise stand-in for clean speech.
pub fn clean_surrogate(seconds: f64, sample_rate_hz: u32, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (seconds * sample_rate_hz as f64).round() as usize;
    let samples = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.1 * z
        })
        .collect();
    Waveform::new(samples, sample_rate_hz)
}

/// EDCs of the remaining RIR for the unprocessed signal and for oracle
/// outputs matching each target exactly.
pub fn fig2_table() -> Result<EdcTable> {
    let rir = scenario_rir()?;
    let clean = clean_surrogate(3.0, rir.sample_rate_hz(), SCENARIO_SEED + 1)?;
    let mut signals = vec![("unprocessed".to_string(), convolve(&clean, rir.wave())?)];
    for (name, spec) in targets() {
        let desired = shorten_rir(&rir, &spec)?;
        signals.push((format!("target_{name}"), convolve(&clean, desired.wave())?));
    }
    edc_report(
        &signals,
        &clean,
        DEFAULT_RIR_LENGTH_S,
        DEFAULT_REGULARIZATION,
    )
}

/// Writes `edc.csv` and a gnuplot-ready `edc.dat`.
pub fn scenario_fig2(out_dir: &Path) -> Result<EdcTable> {
    fs::create_dir_all(out_dir)?;
    let table = fig2_table()?;
    write_atomic(&out_dir.join("edc.csv"), table.to_csv().as_bytes())?;
    write_atomic(&out_dir.join("edc.dat"), table.to_gnuplot().as_bytes())?;
    Ok(table)
}
