//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Tolerances and frozen thresholds are pinned
//! here and nowhere else.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rts_dereverb::analysis::{remaining_rir, DEFAULT_REGULARIZATION};
use rts_dereverb::crossband::{
    identify_crossband_filters, reconstruction_error_db, IdentifyOptions,
};
use rts_dereverb::rir::{edc, estimate_t60, synth_polack_rir, PolackParams, DEFAULT_FIT_RANGE_DB};
use rts_dereverb::signal::{convolve, measured_snr_db, mix_at_snr};
use rts_dereverb::stft::{istft, stft};
use rts_dereverb::target::{
    build_window, compute_q, make_training_pair, shorten_rir, waveform_magnitude_mse,
};
use rts_dereverb::wav::{write_wav, WavEncoding};
use rts_dereverb::{StftConfig, TargetSpec, Waveform};

const FS: u32 = 16000;
const ROOM_T60S: [f64; 3] = [0.25, 0.5, 0.7];
const N_SEEDS: u64 = 20;
const T60_REL_TOL: f64 = 0.10;

const Q_TOL: f64 = 1e-9;
const STFT_REL_RMS: f64 = 1e-6;
const SNR_TOL_DB: f64 = 0.01;
const REMAINING_REL_RMS: f64 = 1e-3;

// Frozen from an oracle run with the configuration in `crossband_validity`
// (l=4 measured -39.995 dB).
const CROSSBAND_L4_MAX_DB: f64 = -37.0;
const CROSSBAND_GAIN_OVER_L0_DB: f64 = 10.0;
const CROSSBAND_JITTER_DB: f64 = 1.0;

fn white(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
        .collect();
    Waveform::new(s, FS).unwrap()
}

fn rel_rms(estimate: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(estimate.len(), reference.len());
    let err: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let ref_e: f64 = reference.iter().map(|v| v * v).sum();
    (err / ref_e).sqrt()
}

fn polack(t60: f64, seed: u64) -> rts_dereverb::RoomImpulseResponse {
    synth_polack_rir(&PolackParams::new(t60, seed)).unwrap()
}

fn window_parameter() -> String {
    // 3/(0.15*16000) - 3/(0.7*16000) = 1/800 - 3/11200 = 11/11200
    let oracle = 11.0 / 11200.0;
    let q = compute_q(0.7, 0.15, FS).unwrap();
    assert!((q - oracle).abs() < Q_TOL, "q={q:e} oracle={oracle:e}");
    assert!((q - 9.82143e-4).abs() < 1e-9);
    format!("q={q:.8e}")
}

fn shortening_closure() -> String {
    let mut worst: f64 = 0.0;
    for &t60 in &ROOM_T60S {
        for seed in 0..N_SEEDS {
            let short = shorten_rir(&polack(t60, seed), &TargetSpec::rts()).unwrap();
            let est = estimate_t60(short.wave(), DEFAULT_FIT_RANGE_DB)
                .unwrap()
                .t60_s;
            let rel = (est - 0.15).abs() / 0.15;
            assert!(rel <= T60_REL_TOL, "T60={t60} seed={seed}: estimated {est}");
            worst = worst.max(rel);
        }
    }
    format!("worst relative deviation {:.2}%", 100.0 * worst)
}

fn t60_round_trip() -> String {
    let mut worst: f64 = 0.0;
    for &t60 in &ROOM_T60S {
        for seed in 0..N_SEEDS {
            let est = estimate_t60(polack(t60, seed).wave(), DEFAULT_FIT_RANGE_DB)
                .unwrap()
                .t60_s;
            let rel = (est - t60).abs() / t60;
            assert!(rel <= T60_REL_TOL, "T60={t60} seed={seed}: estimated {est}");
            worst = worst.max(rel);
        }
    }
    format!("worst relative deviation {:.2}%", 100.0 * worst)
}

fn stft_reconstruction() -> String {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let len = rng.random_range(cfg.window_length..3 * FS as usize);
        let x = white(len, 1000 + i);
        let y = istft(&stft(&x, &cfg).unwrap(), FS).unwrap();
        let e = rel_rms(y.samples(), x.samples());
        assert!(e < STFT_REL_RMS, "signal {i} (len {len}): {e:e}");
        worst = worst.max(e);
    }
    format!("worst relative RMS {worst:.2e}")
}

fn snr_mixing() -> String {
    let signal = white(3 * FS as usize, 50);
    let noise = white(5 * FS as usize, 51);
    let mut worst: f64 = 0.0;
    for (i, snr) in [5.0, 20.0, -10.0, 0.0, 40.0].into_iter().enumerate() {
        let m = mix_at_snr(&signal, &noise, snr, i as u64).unwrap();
        let added: Vec<f64> = m
            .mixed
            .samples()
            .iter()
            .zip(signal.samples())
            .map(|(y, s)| y - s)
            .collect();
        let measured = measured_snr_db(signal.samples(), &added);
        assert!(
            (measured - snr).abs() < SNR_TOL_DB,
            "requested {snr}, measured {measured}"
        );
        worst = worst.max((measured - snr).abs());
    }
    format!("worst deviation {worst:.2e} dB")
}

fn crossband_validity() -> String {
    let mut params = PolackParams::new(0.5, 7);
    params.duration_s = 0.5;
    let rir = synth_polack_rir(&params).unwrap();
    let cfg = StftConfig::default();
    let test = white(5 * FS as usize, 99);
    let opts = IdentifyOptions {
        seed: 1,
        ..Default::default()
    };
    let mut errors = Vec::new();
    for l in [0usize, 1, 2, 4, 8] {
        let (bank, _) = identify_crossband_filters(rir.wave(), &cfg, l, &opts).unwrap();
        errors.push((
            l,
            reconstruction_error_db(&bank, rir.wave(), &test).unwrap(),
        ));
    }
    for w in errors.windows(2) {
        assert!(
            w[1].1 <= w[0].1 + CROSSBAND_JITTER_DB,
            "error rose from l={} to l={}: {:?}",
            w[0].0,
            w[1].0,
            errors
        );
    }
    let e0 = errors[0].1;
    let e4 = errors[3].1;
    assert!(e4 <= e0 - CROSSBAND_GAIN_OVER_L0_DB, "{errors:?}");
    assert!(e4 <= CROSSBAND_L4_MAX_DB, "{errors:?}");
    errors
        .iter()
        .map(|(l, e)| format!("l={l}:{e:.2}dB"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn remaining_rir_identity() -> String {
    let mut worst: f64 = 0.0;
    let mut crossings = Vec::new();
    for seed in 0..3 {
        let rir = polack(0.7, 300 + seed);
        let clean = white(3 * FS as usize, 400 + seed);
        let reverberant = convolve(&clean, rir.wave()).unwrap();
        let recovered =
            remaining_rir(&reverberant, &clean, DEFAULT_REGULARIZATION, rir.len()).unwrap();
        let e = rel_rms(recovered.samples(), rir.wave().samples());
        assert!(e < REMAINING_REL_RMS, "seed {seed}: {e:e}");
        worst = worst.max(e);
        let t = edc(&recovered)
            .unwrap()
            .crossing_time_s(-60.0)
            .expect("EDC reaches -60 dB");
        assert!(
            (t - 0.7).abs() <= T60_REL_TOL * 0.7,
            "seed {seed}: -60 dB at {t} s"
        );
        crossings.push(format!("{t:.3}"));
    }
    format!(
        "worst relative RMS {worst:.2e}, -60 dB at [{}] s",
        crossings.join(", ")
    )
}

fn window_geometry() -> String {
    let rir = polack(0.7, 11);
    let n1 = rir.direct_path_end_index();

    let rts = build_window(&TargetSpec::rts(), &rir).unwrap();
    let ratio = 10f64.powf(-rts.q);
    for (n, &v) in rts.values.iter().enumerate() {
        if n <= n1 {
            assert_eq!(v, 1.0, "n={n}");
        } else {
            let r = v / rts.values[n - 1];
            assert!((r - ratio).abs() <= 1e-12 * ratio, "n={n}: ratio {r}");
        }
    }

    let direct = build_window(&TargetSpec::DirectPath, &rir).unwrap();
    let early = build_window(&TargetSpec::early(), &rir).unwrap();
    for (name, w) in [("direct", &direct), ("early", &early)] {
        assert!(
            w.values.iter().all(|&v| v == 0.0 || v == 1.0),
            "{name} not 0/1"
        );
    }
    let last_one = |w: &[f64]| w.iter().rposition(|&v| v == 1.0).unwrap();
    assert_eq!(last_one(&direct.values), n1);
    assert_eq!(last_one(&early.values), n1 + 800);
    assert!(direct.values[..=n1].iter().all(|&v| v == 1.0));
    assert!(early.values[..=n1 + 800].iter().all(|&v| v == 1.0));
    format!("N1={n1}, early cutoff {}", n1 + 800)
}

fn difficulty_ordering() -> String {
    let cfg = StftConfig::default();
    let noise = white(4 * FS as usize, 7000);
    let mut sums = [0.0; 3];
    for seed in 0..10u64 {
        let rir = polack(0.7, 500 + seed);
        let clean = white(2 * FS as usize, 600 + seed);
        let mut mse = [0.0; 3];
        for (i, spec) in [
            TargetSpec::early(),
            TargetSpec::rts(),
            TargetSpec::DirectPath,
        ]
        .iter()
        .enumerate()
        {
            let pair = make_training_pair(&clean, &rir, spec, &noise, 20.0, seed).unwrap();
            mse[i] = waveform_magnitude_mse(&pair.input, &pair.target, &cfg).unwrap();
        }
        assert!(
            mse[0] < mse[1] && mse[1] < mse[2],
            "seed {seed}: early/rts/direct = {mse:?}"
        );
        for i in 0..3 {
            sums[i] += mse[i] / 10.0;
        }
    }
    format!(
        "mean MSE early {:.3} < rts {:.3} < direct {:.3}",
        sums[0], sums[1], sums[2]
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn dataset_determinism() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    for (i, t60) in ROOM_T60S.iter().enumerate() {
        write_wav(
            root.join(format!("rir{i}.wav")),
            polack(*t60, i as u64).wave(),
            WavEncoding::Float32,
        )
        .unwrap();
    }
    for i in 0..4u64 {
        let clean: Vec<f64> = white(FS as usize, 800 + i)
            .samples()
            .iter()
            .map(|v| 0.1 * v)
            .collect();
        write_wav(
            root.join(format!("clean{i}.wav")),
            &Waveform::new(clean, FS).unwrap(),
            WavEncoding::Float32,
        )
        .unwrap();
    }
    write_wav(
        root.join("noise.wav"),
        &white(4 * FS as usize, 900),
        WavEncoding::Float32,
    )
    .unwrap();

    let targets = [
        r#"{"kind":"direct"}"#,
        r#"{"kind":"early","early_ms":50}"#,
        r#"{"kind":"rts","t60_target_s":0.15}"#,
    ];
    let entries: Vec<String> = (0..20)
        .map(|i| {
            let seed = if i % 2 == 0 { format!(r#","seed":{}"#, 100 + i) } else { String::new() };
            format!(
                r#"{{"clean_path":"clean{}.wav","rir_path":"rir{}.wav","noise_path":"noise.wav","snr_db":{},"target":{}{}}}"#,
                i % 4,
                i % 3,
                [5, 20][i % 2],
                targets[i % 3],
                seed
            )
        })
        .collect();
    let manifest = root.join("manifest.json");
    fs::write(&manifest, format!("[{}]", entries.join(",\n"))).unwrap();

    let run = |jobs: &str, out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_rts"))
            .args(["prep-dataset", "--manifest"])
            .arg(&manifest)
            .arg("--out-dir")
            .arg(out)
            .args(["--jobs", jobs, "--seed", "42"])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "--jobs {jobs} failed");
        tree(out)
    };
    let a = run("1", &root.join("out1"));
    let b = run("8", &root.join("out8"));
    assert_eq!(a.len(), 20 * 3 + 1, "unexpected file count");
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(
            bytes == &b[name],
            "{name} differs between --jobs 1 and --jobs 8"
        );
    }
    format!("{} files byte-identical", a.len())
}

type Criterion = (&'static str, fn() -> String, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "window parameter arithmetic",
            window_parameter,
            Duration::from_secs(1),
        ),
        (
            "RTS shortening closure",
            shortening_closure,
            Duration::from_secs(10),
        ),
        ("T60 round trip", t60_round_trip, Duration::from_secs(10)),
        (
            "STFT perfect reconstruction",
            stft_reconstruction,
            Duration::from_secs(10),
        ),
        ("SNR mixing", snr_mixing, Duration::from_secs(5)),
        (
            "cross-band validity",
            crossband_validity,
            Duration::from_secs(120),
        ),
        (
            "remaining-RIR identity",
            remaining_rir_identity,
            Duration::from_secs(30),
        ),
        ("window geometry", window_geometry, Duration::from_secs(1)),
        (
            "unprocessed difficulty ordering",
            difficulty_ordering,
            Duration::from_secs(60),
        ),
        (
            "dataset determinism",
            dataset_determinism,
            Duration::from_secs(60),
        ),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(detail) if elapsed <= *budget => (true, detail),
            Ok(detail) => (false, format!("{detail}; over budget {budget:?}")),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, msg)
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {detail} ({:.2?})",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
