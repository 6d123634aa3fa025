//! Room impulse responses: Polack-model synthesis, direct-path detection,
//! Schroeder energy decay curves and T60 estimation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::Waveform;

/// Where the direct path is taken to end, after its peak.
pub const DEFAULT_DIRECT_MARGIN_S: f64 = 0.002;
/// Finite stand-in for silence in decay curves.
pub const EDC_FLOOR_DB: f64 = -120.0;
/// Upper and lower EDC levels of the regression window (T20-style).
pub const DEFAULT_FIT_RANGE_DB: (f64, f64) = (-5.0, -25.0);

/// Per-sample base-10 decay exponent `p` and the matching reverberation time,
/// tied by `T60 = 3 / (p · fs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub p: f64,
    pub t60_s: f64,
}

impl DecayEstimate {
    pub fn from_t60(t60_s: f64, sample_rate_hz: u32) -> Result<Self> {
        if !(t60_s > 0.0 && t60_s.is_finite()) {
            return Err(invalid(format!(
                "T60 must be positive and finite, got {t60_s}"
            )));
        }
        Ok(Self {
            p: decay_rate_for_t60(t60_s, sample_rate_hz),
            t60_s,
        })
    }
}

/// `p = 3 / (T60 · fs)`: amplitude falls by 10^-3 (60 dB in power) over T60.
pub fn decay_rate_for_t60(t60_s: f64, sample_rate_hz: u32) -> f64 {
    3.0 / (t60_s * sample_rate_hz as f64)
}

pub fn t60_for_decay_rate(p: f64, sample_rate_hz: u32) -> f64 {
    3.0 / (p * sample_rate_hz as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    wave: Waveform,
    direct_path_end_index: usize,
    decay: Option<DecayEstimate>,
}

impl RoomImpulseResponse {
    pub fn new(
        wave: Waveform,
        direct_path_end_index: usize,
        decay: Option<DecayEstimate>,
    ) -> Result<Self> {
        if direct_path_end_index >= wave.len() {
            return Err(invalid(format!(
                "direct path end {} outside RIR of {} samples",
                direct_path_end_index,
                wave.len()
            )));
        }
        Ok(Self {
            wave,
            direct_path_end_index,
            decay,
        })
    }

    /// Wraps a measured response: detects N1 with the default margin and
    /// leaves the decay unset.
    pub fn from_measured(wave: Waveform) -> Result<Self> {
        let n1 = detect_direct_path(&wave, DEFAULT_DIRECT_MARGIN_S)?;
        Self::new(wave, n1, None)
    }

    pub fn wave(&self) -> &Waveform {
        &self.wave
    }

    pub fn into_wave(self) -> Waveform {
        self.wave
    }

    pub fn direct_path_end_index(&self) -> usize {
        self.direct_path_end_index
    }

    pub fn decay(&self) -> Option<DecayEstimate> {
        self.decay
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.wave.sample_rate_hz()
    }

    pub fn len(&self) -> usize {
        self.wave.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wave.is_empty()
    }

    /// Metadata decay if present, otherwise a fresh estimate with the default
    /// fit range.
    pub fn decay_or_estimate(&self) -> Result<DecayEstimate> {
        match self.decay {
            Some(d) => Ok(d),
            None => estimate_t60(&self.wave, DEFAULT_FIT_RANGE_DB),
        }
    }

    pub fn with_decay(mut self, decay: Option<DecayEstimate>) -> Self {
        self.decay = decay;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolackParams {
    pub t60_s: f64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    /// Direct-to-reverberant energy ratio; `+inf` yields an anechoic impulse.
    pub drr_db: f64,
    pub onset_s: f64,
    pub direct_margin_s: f64,
    pub seed: u64,
}

impl PolackParams {
    pub fn new(t60_s: f64, seed: u64) -> Self {
        Self {
            t60_s,
            duration_s: 1.0,
            sample_rate_hz: 16000,
            drr_db: 0.0,
            onset_s: 0.0,
            direct_margin_s: DEFAULT_DIRECT_MARGIN_S,
            seed,
        }
    }
}

/// Unit direct impulse at the onset, zeros through N1, then Gaussian noise
/// under the envelope `10^(-p (n - N1))` scaled to the requested DRR.
pub fn synth_polack_rir(params: &PolackParams) -> Result<RoomImpulseResponse> {
    let fs = params.sample_rate_hz;
    if fs == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    let decay = DecayEstimate::from_t60(params.t60_s, fs)?;
    if !(params.onset_s >= 0.0 && params.direct_margin_s >= 0.0) {
        return Err(invalid("onset and direct-path margin must be non-negative"));
    }
    if params.drr_db.is_nan() || params.drr_db == f64::NEG_INFINITY {
        return Err(invalid("DRR must be a number or +inf"));
    }
    let len = (params.duration_s * fs as f64).round() as usize;
    let onset = (params.onset_s * fs as f64).round() as usize;
    let n1 = onset + (params.direct_margin_s * fs as f64).round() as usize;
    if n1 >= len {
        return Err(invalid(format!(
            "duration of {len} samples leaves no room after the direct path end {n1}"
        )));
    }

    let mut samples = vec![0.0; len];
    samples[onset] = 1.0;
    if params.drr_db.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut tail_energy = 0.0;
        for (m, s) in samples[n1 + 1..].iter_mut().enumerate() {
            let b: f64 = StandardNormal.sample(&mut rng);
            *s = b * 10f64.powf(-decay.p * (m + 1) as f64);
            tail_energy += *s * *s;
        }
        if tail_energy > 0.0 {
            let target = 10f64.powf(-params.drr_db / 10.0);
            let g = (target / tail_energy).sqrt();
            samples[n1 + 1..].iter_mut().for_each(|s| *s *= g);
        }
    }
    RoomImpulseResponse::new(Waveform::new(samples, fs)?, n1, Some(decay))
}

/// `argmax |a(n)|` (earliest on ties) plus `margin_s` worth of samples,
/// clamped to the last index.
pub fn detect_direct_path(rir: &Waveform, margin_s: f64) -> Result<usize> {
    if rir.is_empty() {
        return Err(Error::EmptyInput("impulse response"));
    }
    if margin_s.is_nan() || margin_s < 0.0 {
        return Err(invalid("direct-path margin must be non-negative"));
    }
    let mut peak = 0;
    let mut peak_abs = 0.0;
    for (i, v) in rir.samples().iter().enumerate() {
        if v.abs() > peak_abs {
            peak_abs = v.abs();
            peak = i;
        }
    }
    if peak_abs == 0.0 {
        return Err(Error::ZeroEnergy("impulse response"));
    }
    let margin = (margin_s * rir.sample_rate_hz() as f64).round() as usize;
    Ok((peak + margin).min(rir.len() - 1))
}

/// Schroeder backward-integrated energy, dB re. the total, floored at
/// [`EDC_FLOOR_DB`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDecayCurve {
    values_db: Vec<f64>,
    sample_rate_hz: u32,
}

impl EnergyDecayCurve {
    pub fn values_db(&self) -> &[f64] {
        &self.values_db
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.values_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_db.is_empty()
    }

    pub fn time_s(&self, n: usize) -> f64 {
        n as f64 / self.sample_rate_hz as f64
    }

    /// First index at or below `level_db`.
    pub fn crossing_index(&self, level_db: f64) -> Option<usize> {
        self.values_db.iter().position(|&v| v <= level_db)
    }

    pub fn crossing_time_s(&self, level_db: f64) -> Option<f64> {
        self.crossing_index(level_db).map(|n| self.time_s(n))
    }

    /// Two-column CSV `time_s,edc_db` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,edc_db\n");
        for (n, v) in self.values_db.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time_s(n), v));
        }
        out
    }
}

pub fn edc(rir: &Waveform) -> Result<EnergyDecayCurve> {
    if rir.is_empty() {
        return Err(Error::EmptyInput("impulse response"));
    }
    let x = rir.samples();
    let mut cumulative = vec![0.0; x.len()];
    let mut acc = 0.0;
    for (c, v) in cumulative.iter_mut().zip(x).rev() {
        acc += v * v;
        *c = acc;
    }
    let total = cumulative[0];
    if total == 0.0 {
        return Err(Error::ZeroEnergy("impulse response"));
    }
    let values_db = cumulative
        .iter()
        .map(|&e| {
            if e > 0.0 {
                (10.0 * (e / total).log10()).max(EDC_FLOOR_DB)
            } else {
                EDC_FLOOR_DB
            }
        })
        .collect();
    Ok(EnergyDecayCurve {
        values_db,
        sample_rate_hz: rir.sample_rate_hz(),
    })
}

/// Least-squares line through the EDC between `fit_range_db = (upper, lower)`
/// (e.g. `(-5, -25)`), extrapolated to -60 dB.
pub fn estimate_t60(rir: &Waveform, fit_range_db: (f64, f64)) -> Result<DecayEstimate> {
    let (upper, lower) = fit_range_db;
    if !(upper > lower && upper <= 0.0 && lower > EDC_FLOOR_DB) {
        return Err(invalid(format!(
            "fit range must satisfy 0 >= upper > lower > {EDC_FLOOR_DB}, got ({upper}, {lower})"
        )));
    }
    let curve = edc(rir)?;
    let v = curve.values_db();
    let reached = *v.last().expect("non-empty");
    if reached > lower {
        return Err(Error::InsufficientDecay {
            reached_db: reached,
            needed_db: lower,
        });
    }
    let start = v
        .iter()
        .position(|&d| d <= upper)
        .expect("curve reaches lower bound");
    let end = v.iter().rposition(|&d| d >= lower).map_or(0, |i| i + 1);
    if end < start + 2 {
        return Err(Error::NoDecayRegion {
            upper_db: upper,
            lower_db: lower,
        });
    }
    let slope = fit_slope(&v[start..end]);
    if slope.is_nan() || slope >= 0.0 {
        return Err(Error::NoDecayRegion {
            upper_db: upper,
            lower_db: lower,
        });
    }
    let fs = rir.sample_rate_hz();
    let t60_s = -60.0 / slope / fs as f64;
    Ok(DecayEstimate {
        p: decay_rate_for_t60(t60_s, fs),
        t60_s,
    })
}

/// Ordinary least-squares slope of `y` against its index.
fn fit_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(len: usize, at: usize) -> Waveform {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        Waveform::new(v, 16000).unwrap()
    }

    #[test]
    fn decay_rate_for_half_second() {
        assert!((decay_rate_for_t60(0.5, 16000) - 3.75e-4).abs() < 1e-18);
        let d = DecayEstimate::from_t60(0.5, 16000).unwrap();
        assert!((t60_for_decay_rate(d.p, 16000) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn synth_rejects_bad_parameters() {
        assert!(synth_polack_rir(&PolackParams::new(0.0, 1)).is_err());
        assert!(synth_polack_rir(&PolackParams::new(-1.0, 1)).is_err());
        let mut p = PolackParams::new(0.5, 1);
        p.sample_rate_hz = 0;
        assert!(synth_polack_rir(&p).is_err());
    }

    #[test]
    fn synth_structure() {
        let mut p = PolackParams::new(0.4, 5);
        p.onset_s = 0.01;
        let r = synth_polack_rir(&p).unwrap();
        let x = r.wave().samples();
        assert_eq!(x.len(), 16000);
        assert_eq!(x[160], 1.0);
        assert_eq!(r.direct_path_end_index(), 192);
        assert!(x[..160].iter().all(|v| *v == 0.0));
        assert!(x[161..=192].iter().all(|v| *v == 0.0));
        let tail: f64 = x[193..].iter().map(|v| v * v).sum();
        assert!((tail - 1.0).abs() < 1e-12, "0 dB DRR");
        let d = r.decay().unwrap();
        assert!((d.t60_s - 3.0 / (d.p * 16000.0)).abs() < 1e-12);
    }

    #[test]
    fn synth_anechoic_sentinel() {
        let mut p = PolackParams::new(0.5, 1);
        p.drr_db = f64::INFINITY;
        let r = synth_polack_rir(&p).unwrap();
        assert_eq!(r.wave().energy(), 1.0);
        assert_eq!(r.wave().samples()[0], 1.0);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_polack_rir(&PolackParams::new(0.7, 11)).unwrap();
        let b = synth_polack_rir(&PolackParams::new(0.7, 11)).unwrap();
        let c = synth_polack_rir(&PolackParams::new(0.7, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn synth_t60_round_trip() {
        for seed in 0..5 {
            let r = synth_polack_rir(&PolackParams::new(0.7, seed)).unwrap();
            let est = estimate_t60(r.wave(), DEFAULT_FIT_RANGE_DB).unwrap();
            assert!((est.t60_s / 0.7 - 1.0).abs() < 0.1, "{est:?}");
        }
    }

    #[test]
    fn direct_path_rules() {
        assert_eq!(detect_direct_path(&impulse(1000, 100), 0.002).unwrap(), 132);
        let mut v = vec![0.0; 200];
        v[50] = -0.9;
        v[80] = 0.9;
        let w = Waveform::new(v, 16000).unwrap();
        assert_eq!(detect_direct_path(&w, 0.0).unwrap(), 50);
        assert_eq!(detect_direct_path(&impulse(100, 99), 0.002).unwrap(), 99);
        assert!(matches!(
            detect_direct_path(&Waveform::zeros(10, 16000).unwrap(), 0.002),
            Err(Error::ZeroEnergy(_))
        ));
    }

    #[test]
    fn edc_of_impulse_and_constant() {
        let e = edc(&impulse(4, 0)).unwrap();
        assert_eq!(e.values_db(), &[0.0, -120.0, -120.0, -120.0]);
        let e = edc(&Waveform::new(vec![0.3, 0.3], 16000).unwrap()).unwrap();
        assert_eq!(e.values_db()[0], 0.0);
        assert!((e.values_db()[1] + 3.010_299_956_639_812).abs() < 1e-12);
        assert!(matches!(
            edc(&Waveform::zeros(3, 16000).unwrap()),
            Err(Error::ZeroEnergy(_))
        ));
    }

    #[test]
    fn edc_of_exponential_crosses_at_t60() {
        // closed form: EDC(n) = (r^n - r^L) / (1 - r^L), r = 10^(-2p); with
        // L = 3 s the truncation term is ~1e-18 and the crossing sits at T60·fs.
        let fs = 16000u32;
        let p = decay_rate_for_t60(0.5, fs);
        let len = 3 * fs as usize;
        let x: Vec<f64> = (0..len).map(|n| 10f64.powf(-p * n as f64)).collect();
        let e = edc(&Waveform::new(x, fs).unwrap()).unwrap();
        let r = 10f64.powf(-2.0 * p);
        let tail = r.powi(len as i32);
        let oracle = (0..len)
            .position(|n| 10.0 * ((r.powi(n as i32) - tail) / (1.0 - tail)).log10() <= -60.0)
            .unwrap();
        let got = e.crossing_index(-60.0).unwrap();
        assert!(got.abs_diff(oracle) <= 1);
        assert!(got.abs_diff(8000) <= 1, "{got}");
    }

    #[test]
    fn estimate_exact_exponential() {
        let fs = 16000u32;
        let p = decay_rate_for_t60(0.7, fs);
        let x: Vec<f64> = (0..3 * fs as usize)
            .map(|n| 10f64.powf(-p * n as f64))
            .collect();
        let est = estimate_t60(&Waveform::new(x, fs).unwrap(), DEFAULT_FIT_RANGE_DB).unwrap();
        assert!((est.t60_s - 0.7).abs() < 0.007);
        assert!((est.t60_s - 3.0 / (est.p * fs as f64)).abs() < 1e-12);
    }

    #[test]
    fn estimate_rejects_anechoic_and_short_decay() {
        assert!(matches!(
            estimate_t60(&impulse(1000, 10), DEFAULT_FIT_RANGE_DB),
            Err(Error::NoDecayRegion { .. })
        ));
        let flat = Waveform::new(vec![1.0; 100], 16000).unwrap();
        assert!(matches!(
            estimate_t60(&flat, DEFAULT_FIT_RANGE_DB),
            Err(Error::InsufficientDecay { .. })
        ));
        assert!(estimate_t60(&flat, (-25.0, -5.0)).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let e = edc(&Waveform::new(vec![1.0, 1.0], 2).unwrap()).unwrap();
        let csv = e.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time_s,edc_db"));
        assert_eq!(lines.next(), Some("0,0"));
        assert!(lines.next().unwrap().starts_with("0.5,-3.0102"));
    }
}
