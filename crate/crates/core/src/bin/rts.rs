//! `rts`: batch command-line front end.
//!
//! Machine-readable JSON goes to stdout, diagnostics to stderr. Exit codes:
//! 0 success, 2 validation error, 1 runtime or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rts_dereverb::analysis::{edc_report, DEFAULT_REGULARIZATION, DEFAULT_RIR_LENGTH_S};
use rts_dereverb::crossband::{
    identify_crossband_filters, reconstruction_error_db, CrossbandReport, CrossbandReportRow,
    IdentifyOptions,
};
use rts_dereverb::dataset::{prepare_dataset, Manifest, PrepOptions};
use rts_dereverb::rir::{
    detect_direct_path, edc, estimate_t60, synth_polack_rir, PolackParams, RoomImpulseResponse,
    DEFAULT_DIRECT_MARGIN_S,
};
use rts_dereverb::scenarios::{clean_surrogate, scenario_fig1, scenario_fig2};
use rts_dereverb::target::{
    apply_window, build_window, TargetSpec, DEFAULT_EARLY_MS, DEFAULT_T60_TARGET_S,
};
use rts_dereverb::wav::{read_wav, write_atomic, write_wav, WavEncoding};
use rts_dereverb::{Error, StftConfig, WindowKind};

#[derive(Parser)]
#[command(
    name = "rts",
    version,
    about = "Dereverberation targets and RIR analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKind {
    Direct,
    Early,
    Rts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Fig1,
    Fig2,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a Polack-model RIR.
    SynthRir {
        #[arg(long)]
        t60: f64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 16000)]
        fs: u32,
        #[arg(long = "drr-db", default_value_t = 0.0, allow_negative_numbers = true)]
        drr_db: f64,
        #[arg(long, default_value_t = 0.0)]
        onset: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write 16-bit PCM instead of 32-bit float.
        #[arg(long)]
        pcm16: bool,
    },
    /// Estimate T60, decay rate and direct-path end of a RIR file.
    AnalyzeRir {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Also write the EDC as CSV (time_s, edc_db).
        #[arg(long = "edc-csv")]
        edc_csv: Option<PathBuf>,
    },
    /// Apply a target window to a RIR file.
    Shorten {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, value_enum)]
        target: TargetKind,
        #[arg(long = "early-ms", default_value_t = DEFAULT_EARLY_MS)]
        early_ms: f64,
        #[arg(long = "t60-target", default_value_t = DEFAULT_T60_TARGET_S)]
        t60_target: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate (input, target) pairs from a manifest.
    PrepDataset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Master seed for entries without their own seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// EDCs of remaining RIRs for named signals against a clean reference.
    Edc {
        #[arg(long)]
        clean: PathBuf,
        /// name=path, repeatable; column order follows the flags.
        #[arg(long = "signal", required = true)]
        signals: Vec<String>,
        #[arg(long = "rir-len", default_value_t = DEFAULT_RIR_LENGTH_S)]
        rir_len: f64,
        #[arg(long, default_value_t = DEFAULT_REGULARIZATION)]
        reg: f64,
        #[arg(long)]
        out: PathBuf,
        /// Additionally write whitespace-separated plot data.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Identify cross-band filters per neighbourhood radius and report the
    /// held-out reconstruction error.
    CrossbandVerify {
        #[arg(long)]
        rir: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long = "l", value_delimiter = ',', default_value = "0,1,2,4,8")]
        l_values: Vec<usize>,
        /// Frame lags per filter (default derived from the RIR length).
        #[arg(long)]
        taps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        acausal: usize,
        #[arg(long = "probe-seconds", default_value_t = 100.0)]
        probe_seconds: f64,
        #[arg(long = "test-seconds", default_value_t = 5.0)]
        test_seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        #[arg(long, default_value_t = 512)]
        window: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
        /// CSV report (l, error_db).
        #[arg(long)]
        out: PathBuf,
        /// Directory for binary filter banks, one per radius.
        #[arg(long = "bank-dir")]
        bank_dir: Option<PathBuf>,
    },
    /// Regenerate the window/RIR shape or EDC comparison datasets.
    Scenario {
        #[arg(value_enum)]
        which: Scenario,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthRir {
            t60,
            duration,
            fs,
            drr_db,
            onset,
            seed,
            out,
            pcm16,
        } => {
            if t60.is_nan() || t60 <= 0.0 {
                return Err(validation(format!("--t60 must be positive, got {t60}")));
            }
            if duration.is_nan() || duration <= 0.0 {
                return Err(validation(format!(
                    "--duration must be positive, got {duration}"
                )));
            }
            let params = PolackParams {
                t60_s: t60,
                duration_s: duration,
                sample_rate_hz: fs,
                drr_db,
                onset_s: onset,
                direct_margin_s: DEFAULT_DIRECT_MARGIN_S,
                seed,
            };
            let rir = synth_polack_rir(&params)?;
            let encoding = if pcm16 {
                WavEncoding::Pcm16
            } else {
                WavEncoding::Float32
            };
            write_wav(&out, rir.wave(), encoding)?;
            let decay = rir.decay().expect("synthetic RIR carries its decay");
            print_json(&json!({
                "p": decay.p,
                "t60_s": decay.t60_s,
                "n1": rir.direct_path_end_index(),
                "fs": fs,
                "length": rir.len(),
            }));
        }
        Command::AnalyzeRir {
            input,
            channel,
            edc_csv,
        } => {
            let wave = read_wav(&input, channel)?;
            let n1 = detect_direct_path(&wave, DEFAULT_DIRECT_MARGIN_S)?;
            let decay = estimate_t60(&wave, rts_dereverb::rir::DEFAULT_FIT_RANGE_DB)?;
            if let Some(path) = edc_csv {
                write_atomic(&path, edc(&wave)?.to_csv().as_bytes())?;
            }
            print_json(&json!({
                "t60_s": decay.t60_s,
                "p": decay.p,
                "n1": n1,
                "fs": wave.sample_rate_hz(),
            }));
        }
        Command::Shorten {
            input,
            channel,
            target,
            early_ms,
            t60_target,
            out,
        } => {
            let spec = match target {
                TargetKind::Direct => TargetSpec::DirectPath,
                TargetKind::Early => TargetSpec::Early { early_ms },
                TargetKind::Rts => TargetSpec::Rts {
                    t60_target_s: t60_target,
                },
            };
            let wave = read_wav(&input, channel)?;
            let rir = RoomImpulseResponse::from_measured(wave)?;
            let source_t60 = rir.decay_or_estimate().ok().map(|d| d.t60_s);
            let window = build_window(&spec, &rir)?;
            let shortened = apply_window(&rir, &window, &spec)?;
            write_wav(&out, shortened.wave(), WavEncoding::Float32)?;
            print_json(&json!({
                "target": spec,
                "n1": window.n1,
                "q": matches!(spec, TargetSpec::Rts { .. }).then_some(window.q),
                "t60_source_s": source_t60,
                "fs": rir.sample_rate_hz(),
            }));
        }
        Command::PrepDataset {
            manifest,
            out_dir,
            jobs,
            seed,
        } => {
            if jobs == 0 {
                return Err(validation("--jobs must be at least 1"));
            }
            let manifest = Manifest::load(&manifest)?;
            let summary = prepare_dataset(
                &manifest,
                &PrepOptions {
                    out_dir,
                    jobs,
                    master_seed: seed,
                },
            )?;
            for f in &summary.failures {
                eprintln!("entry {}: {}", f.index, f.error);
            }
            print_json(&serde_json::to_value(&summary).expect("summary serializes"));
            if !summary.failures.is_empty() {
                return Err(Failure {
                    code: 1,
                    message: format!(
                        "{} of {} entries failed",
                        summary.failures.len(),
                        summary.total
                    ),
                });
            }
        }
        Command::Edc {
            clean,
            signals,
            rir_len,
            reg,
            out,
            gnuplot,
        } => {
            let clean = read_wav(&clean, 0)?;
            let mut named = Vec::with_capacity(signals.len());
            for s in &signals {
                let (name, path) = s
                    .split_once('=')
                    .ok_or_else(|| validation(format!("--signal expects name=path, got {s:?}")))?;
                if name.is_empty() {
                    return Err(validation(format!("empty signal name in {s:?}")));
                }
                named.push((name.to_string(), read_wav(path, 0)?));
            }
            let table = edc_report(&named, &clean, rir_len, reg)?;
            write_atomic(&out, table.to_csv().as_bytes())?;
            if let Some(path) = gnuplot {
                write_atomic(&path, table.to_gnuplot().as_bytes())?;
            }
            let crossings: serde_json::Map<String, serde_json::Value> = named
                .iter()
                .map(|(name, _)| {
                    let col = table.column(name).expect("column per signal");
                    let t = col
                        .iter()
                        .position(|&v| v <= -60.0)
                        .map(|n| n as f64 / table.sample_rate_hz as f64);
                    (name.clone(), json!(t))
                })
                .collect();
            print_json(&json!({ "rows": table.len(), "t_minus60_s": crossings }));
        }
        Command::CrossbandVerify {
            rir,
            channel,
            l_values,
            taps,
            acausal,
            probe_seconds,
            test_seconds,
            seed,
            ridge,
            window,
            hop,
            out,
            bank_dir,
        } => {
            if l_values.is_empty() {
                return Err(validation("--l needs at least one radius"));
            }
            let rir = read_wav(&rir, channel)?;
            let cfg = StftConfig::new(window, hop, WindowKind::Hamming)?;
            let opts = IdentifyOptions {
                n_taps: taps,
                n_acausal: acausal,
                probe_seconds,
                seed,
                ridge,
            };
            // held-out test signal, independent of the probe stream
            let test = clean_surrogate(test_seconds, rir.sample_rate_hz(), seed ^ 0x5EED_7E57)?;
            if let Some(dir) = &bank_dir {
                std::fs::create_dir_all(dir).map_err(Error::from)?;
            }
            let mut rows = Vec::new();
            for &l in &l_values {
                let (bank, diag) = identify_crossband_filters(&rir, &cfg, l, &opts)?;
                let error_db = reconstruction_error_db(&bank, &rir, &test)?;
                eprintln!(
                    "l={l}: {error_db:.2} dB ({} rows, {} unknowns, {} rank-deficient bands)",
                    diag.rows,
                    diag.max_unknowns,
                    diag.rank_deficient_bands.len()
                );
                if let Some(dir) = &bank_dir {
                    let mut buf = Vec::new();
                    bank.write_to(&mut buf)?;
                    write_atomic(&dir.join(format!("bank_l{l}.xbf")), &buf)?;
                }
                rows.push(CrossbandReportRow {
                    l,
                    error_db,
                    n_taps: bank.n_taps(),
                    rank_deficient_bands: diag.rank_deficient_bands.len(),
                });
            }
            let report = CrossbandReport { rows };
            write_atomic(&out, report.to_csv().as_bytes())?;
            print_json(&serde_json::to_value(&report).expect("report serializes"));
        }
        Command::Scenario { which, out_dir } => match which {
            Scenario::Fig1 => {
                let data = scenario_fig1(&out_dir)?;
                let q = data
                    .windows
                    .iter()
                    .find(|(n, _)| *n == "rts")
                    .map(|(_, w)| w.q);
                print_json(&json!({
                    "files": ["windows.csv", "rir_direct.csv", "rir_early.csv", "rir_rts.csv"],
                    "n1": data.rir.direct_path_end_index(),
                    "q": q,
                }));
            }
            Scenario::Fig2 => {
                let table = scenario_fig2(&out_dir)?;
                let crossings: serde_json::Map<String, serde_json::Value> = table
                    .columns
                    .iter()
                    .map(|(name, col)| {
                        let t = col
                            .iter()
                            .position(|&v| v <= -60.0)
                            .map(|n| n as f64 / table.sample_rate_hz as f64);
                        (name.clone(), json!(t))
                    })
                    .collect();
                print_json(&json!({ "files": ["edc.csv", "edc.dat"], "t_minus60_s": crossings }));
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
