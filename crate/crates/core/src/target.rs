//! Learning targets: direct-path, early reflections and reverberation time
//! shortening (RTS), plus training-pair assembly and spectral features.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rir::RoomImpulseResponse;
use crate::signal::{convolve, mix_at_snr, Waveform};
use crate::stft::{stft, Spectrogram, StftConfig};

pub const DEFAULT_EARLY_MS: f64 = 50.0;
pub const DEFAULT_T60_TARGET_S: f64 = 0.15;

fn default_early_ms() -> f64 {
    DEFAULT_EARLY_MS
}

fn default_t60_target_s() -> f64 {
    DEFAULT_T60_TARGET_S
}

/// Which desired part of the RIR the target keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    #[serde(rename = "direct")]
    DirectPath,
    Early {
        #[serde(default = "default_early_ms")]
        early_ms: f64,
    },
    Rts {
        #[serde(default = "default_t60_target_s")]
        t60_target_s: f64,
    },
}

impl TargetSpec {
    pub fn early() -> Self {
        TargetSpec::Early {
            early_ms: DEFAULT_EARLY_MS,
        }
    }

    pub fn rts() -> Self {
        TargetSpec::Rts {
            t60_target_s: DEFAULT_T60_TARGET_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetSpec::DirectPath => Ok(()),
            TargetSpec::Early { early_ms } if early_ms > 0.0 && early_ms.is_finite() => Ok(()),
            TargetSpec::Early { early_ms } => Err(invalid(format!(
                "early_ms must be positive, got {early_ms}"
            ))),
            TargetSpec::Rts { t60_target_s } if t60_target_s > 0.0 && t60_target_s.is_finite() => {
                Ok(())
            }
            TargetSpec::Rts { t60_target_s } => Err(invalid(format!(
                "t60_target_s must be positive, got {t60_target_s}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::DirectPath => "direct",
            TargetSpec::Early { .. } => "early",
            TargetSpec::Rts { .. } => "rts",
        }
    }
}

/// Window `w(n)` applied to the RIR; `q` is zero for the rectangular kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct ShorteningWindow {
    pub values: Vec<f64>,
    pub n1: usize,
    pub q: f64,
}

/// Extra per-sample base-10 decay that turns a source T60 into the target:
/// `q = 3/(T'60 fs) - 3/(T60 fs)`.
pub fn compute_q(t60_source_s: f64, t60_target_s: f64, sample_rate_hz: u32) -> Result<f64> {
    if sample_rate_hz == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    if !(t60_target_s > 0.0 && t60_target_s.is_finite() && t60_source_s.is_finite()) {
        return Err(invalid(format!(
            "T60 values must be positive and finite, got source {t60_source_s}, target {t60_target_s}"
        )));
    }
    if t60_target_s >= t60_source_s {
        return Err(invalid(format!(
            "target T60 {t60_target_s} s is not shorter than source T60 {t60_source_s} s"
        )));
    }
    let fs = sample_rate_hz as f64;
    Ok(3.0 / (t60_target_s * fs) - 3.0 / (t60_source_s * fs))
}

pub fn build_window(spec: &TargetSpec, rir: &RoomImpulseResponse) -> Result<ShorteningWindow> {
    spec.validate()?;
    let len = rir.len();
    let n1 = rir.direct_path_end_index();
    let fs = rir.sample_rate_hz();
    let rect = |last_one: usize| -> Vec<f64> {
        (0..len)
            .map(|n| if n <= last_one { 1.0 } else { 0.0 })
            .collect()
    };
    let window = match *spec {
        TargetSpec::DirectPath => ShorteningWindow {
            values: rect(n1),
            n1,
            q: 0.0,
        },
        TargetSpec::Early { early_ms } => {
            let extra = (early_ms * fs as f64 / 1000.0).round() as usize;
            ShorteningWindow {
                values: rect(n1 + extra),
                n1,
                q: 0.0,
            }
        }
        TargetSpec::Rts { t60_target_s } => {
            let source = rir.decay_or_estimate()?;
            let q = compute_q(source.t60_s, t60_target_s, fs)?;
            let values = (0..len)
                .map(|n| {
                    if n <= n1 {
                        1.0
                    } else {
                        10f64.powf(-q * (n - n1) as f64)
                    }
                })
                .collect();
            ShorteningWindow { values, n1, q }
        }
    };
    Ok(window)
}

/// `a_d(n) = w(n) a(n)`. The result keeps N1; for RTS its decay metadata is
/// the target T60.
pub fn apply_window(
    rir: &RoomImpulseResponse,
    window: &ShorteningWindow,
    spec: &TargetSpec,
) -> Result<RoomImpulseResponse> {
    if window.values.len() != rir.len() {
        return Err(Error::ShapeMismatch(format!(
            "window of {} samples for RIR of {}",
            window.values.len(),
            rir.len()
        )));
    }
    let samples = rir
        .wave()
        .samples()
        .iter()
        .zip(&window.values)
        .map(|(a, w)| a * w)
        .collect();
    let decay = match *spec {
        TargetSpec::Rts { t60_target_s } => Some(crate::rir::DecayEstimate::from_t60(
            t60_target_s,
            rir.sample_rate_hz(),
        )?),
        _ => None,
    };
    RoomImpulseResponse::new(rir.wave().with_samples(samples)?, window.n1, decay)
}

pub fn shorten_rir(rir: &RoomImpulseResponse, spec: &TargetSpec) -> Result<RoomImpulseResponse> {
    let window = build_window(spec, rir)?;
    apply_window(rir, &window, spec)
}

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: Waveform,
    pub target: Waveform,
    pub window: ShorteningWindow,
    pub noise_gain: f64,
    pub noise_offset: usize,
}

/// Input is `clean * rir` plus noise at `snr_db`; target is `clean * a_d`.
/// Both have length `len(clean) + len(rir) - 1` and keep the direct-path
/// delay.
pub fn make_training_pair(
    clean: &Waveform,
    rir: &RoomImpulseResponse,
    spec: &TargetSpec,
    noise: &Waveform,
    snr_db: f64,
    seed: u64,
) -> Result<TrainingPair> {
    if clean.energy() == 0.0 {
        return Err(Error::ZeroEnergy("clean speech"));
    }
    let window = build_window(spec, rir)?;
    let desired = apply_window(rir, &window, spec)?;
    let reverberant = convolve(clean, rir.wave())?;
    let mixture = mix_at_snr(&reverberant, noise, snr_db, seed)?;
    let target = convolve(clean, desired.wave())?;
    debug_assert_eq!(mixture.mixed.len(), target.len());
    Ok(TrainingPair {
        input: mixture.mixed,
        target,
        window,
        noise_gain: mixture.gain,
        noise_offset: mixture.noise_offset,
    })
}

/// Real-valued time-frequency grid, frame-major like [`Spectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeGrid {
    pub values: Vec<f64>,
    pub n_freqs: usize,
    pub n_frames: usize,
}

impl MagnitudeGrid {
    pub fn get(&self, k: usize, p: usize) -> f64 {
        self.values[p * self.n_freqs + k]
    }
}

/// `|X(k,p)|^(1/3)`, the compressed magnitude used as network feature.
pub fn cubic_root_magnitude(x: &Spectrogram) -> MagnitudeGrid {
    MagnitudeGrid {
        values: x.coefficients().iter().map(|c| c.norm().cbrt()).collect(),
        n_freqs: x.n_freqs(),
        n_frames: x.n_frames(),
    }
}

/// Mean of `(|P| - |T|)²` over all bins and frames.
pub fn magnitude_mse(predicted: &Spectrogram, target: &Spectrogram) -> Result<f64> {
    if predicted.config() != target.config() || predicted.n_frames() != target.n_frames() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames vs {} frames (or differing STFT configs)",
            predicted.n_frames(),
            target.n_frames()
        )));
    }
    let n = predicted.coefficients().len();
    if n == 0 {
        return Err(Error::EmptyInput("spectrogram"));
    }
    let sum: f64 = predicted
        .coefficients()
        .iter()
        .zip(target.coefficients())
        .map(|(p, t)| (p.norm() - t.norm()).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// [`magnitude_mse`] between the STFTs of two equal-length waveforms.
pub fn waveform_magnitude_mse(
    predicted: &Waveform,
    target: &Waveform,
    cfg: &StftConfig,
) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "waveforms of {} and {} samples",
            predicted.len(),
            target.len()
        )));
    }
    magnitude_mse(&stft(predicted, cfg)?, &stft(target, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rir::{synth_polack_rir, DecayEstimate, PolackParams};
    use num_complex::Complex64;

    fn rir_with(n: usize, n1: usize, t60: Option<f64>) -> RoomImpulseResponse {
        let mut v = vec![0.01; n];
        v[n1.saturating_sub(32)] = 1.0;
        let decay = t60.map(|t| DecayEstimate::from_t60(t, 16000).unwrap());
        RoomImpulseResponse::new(Waveform::new(v, 16000).unwrap(), n1, decay).unwrap()
    }

    #[test]
    fn q_for_large_room() {
        let q = compute_q(0.7, 0.15, 16000).unwrap();
        let oracle = 3.0 / 2400.0 - 3.0 / 11200.0;
        assert!((q - oracle).abs() < 1e-18);
        assert!((q - 9.82143e-4).abs() < 1e-9);
        assert!(compute_q(0.15, 0.15, 16000).is_err());
        assert!(compute_q(0.1, 0.15, 16000).is_err());
        assert!(compute_q(0.7, 0.0, 16000).is_err());
    }

    #[test]
    fn early_window_cutoff() {
        let rir = rir_with(2000, 132, None);
        let w = build_window(&TargetSpec::early(), &rir).unwrap();
        assert!(w.values[..=932].iter().all(|v| *v == 1.0));
        assert!(w.values[933..].iter().all(|v| *v == 0.0));
        assert_eq!(w.q, 0.0);
    }

    #[test]
    fn direct_window_support() {
        let rir = rir_with(500, 132, None);
        let w = build_window(&TargetSpec::DirectPath, &rir).unwrap();
        assert_eq!(w.values.iter().filter(|v| **v == 1.0).count(), 133);
        let d = shorten_rir(&rir, &TargetSpec::DirectPath).unwrap();
        assert!(d.wave().samples()[133..].iter().all(|v| *v == 0.0));
        assert_eq!(&d.wave().samples()[..=132], &rir.wave().samples()[..=132]);
    }

    #[test]
    fn rts_window_hits_tenth_at_inverse_q() {
        let rir = rir_with(20000, 132, Some(0.7));
        let w = build_window(&TargetSpec::rts(), &rir).unwrap();
        assert!(w.values[..=132].iter().all(|v| *v == 1.0));
        // target chosen so that q = 1e-3 and 1/q is a whole number of samples
        let t_target = 3.0 / ((1e-3 + 3.0 / (0.7 * 16000.0)) * 16000.0);
        let w2 = build_window(
            &TargetSpec::Rts {
                t60_target_s: t_target,
            },
            &rir,
        )
        .unwrap();
        assert!((w2.q - 1e-3).abs() < 1e-15);
        assert!((w2.values[132 + 1000] - 0.1).abs() < 1e-12);
        for n in 133..w.values.len() - 1 {
            let ratio = w.values[n + 1] / w.values[n];
            assert!((ratio - 10f64.powf(-w.q)).abs() < 1e-12);
        }
    }

    #[test]
    fn rts_requires_longer_source() {
        let rir = rir_with(2000, 132, Some(0.1));
        assert!(build_window(&TargetSpec::rts(), &rir).is_err());
        // no metadata and no decay to estimate
        let mut v = vec![0.0; 2000];
        v[100] = 1.0;
        let anechoic =
            RoomImpulseResponse::new(Waveform::new(v, 16000).unwrap(), 132, None).unwrap();
        assert!(build_window(&TargetSpec::rts(), &anechoic).is_err());
    }

    #[test]
    fn anechoic_impulse_unchanged_by_direct_target() {
        let mut p = PolackParams::new(0.5, 0);
        p.drr_db = f64::INFINITY;
        let rir = synth_polack_rir(&p).unwrap();
        let d = shorten_rir(&rir, &TargetSpec::DirectPath).unwrap();
        assert_eq!(d.wave(), rir.wave());
    }

    #[test]
    fn spec_serde_shape() {
        let s: TargetSpec = serde_json::from_str(r#"{"kind":"rts"}"#).unwrap();
        assert_eq!(s, TargetSpec::rts());
        let s: TargetSpec = serde_json::from_str(r#"{"kind":"early","early_ms":30}"#).unwrap();
        assert_eq!(s, TargetSpec::Early { early_ms: 30.0 });
        let s: TargetSpec = serde_json::from_str(r#"{"kind":"direct"}"#).unwrap();
        assert_eq!(s, TargetSpec::DirectPath);
        assert!(TargetSpec::Early { early_ms: 0.0 }.validate().is_err());
    }

    fn spec_of(values: &[Complex64]) -> Spectrogram {
        let cfg = StftConfig::new(4, 2, crate::stft::WindowKind::Hamming).unwrap();
        Spectrogram::from_parts(values.to_vec(), values.len() / 3, cfg, 4).unwrap()
    }

    #[test]
    fn cubic_root_values() {
        let s = spec_of(&[
            Complex64::new(0.0, 0.0),
            Complex64::new(8.0, 0.0),
            Complex64::new(0.0, -27.0),
        ]);
        let g = cubic_root_magnitude(&s);
        assert_eq!(g.values[0], 0.0);
        assert!((g.values[1] - 2.0).abs() < 1e-15);
        assert!((g.get(2, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn mse_cases() {
        let t = spec_of(&[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 2.0),
            Complex64::new(3.0, 4.0),
        ]);
        assert_eq!(magnitude_mse(&t, &t).unwrap(), 0.0);
        let rotated: Vec<_> = t
            .coefficients()
            .iter()
            .map(|c| c * Complex64::from_polar(1.0, 0.7))
            .collect();
        assert!(magnitude_mse(&spec_of(&rotated), &t).unwrap() < 1e-28);
        let offset: Vec<_> = t
            .coefficients()
            .iter()
            .map(|c| c * ((c.norm() + 0.5) / c.norm()))
            .collect();
        assert!((magnitude_mse(&spec_of(&offset), &t).unwrap() - 0.25).abs() < 1e-14);
        let bigger = spec_of(&[Complex64::default(); 6]);
        assert!(matches!(
            magnitude_mse(&bigger, &t),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
