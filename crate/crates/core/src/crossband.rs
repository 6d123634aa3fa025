//! Cross-band filter identification and verification.
//!
//! A time-domain convolution `y = s * a` is modelled in the STFT domain as
//!
//! ```text
//! Y(k, p) = Σ_{d=-l..l} Σ_τ A(k, d, τ) · S(k + d, p - τ)
//! ```
//!
//! with `τ` running over `n_acausal` negative lags and the remaining causal
//! ones. Source bins are indexed on the full (two-sided) DFT circle, so near
//! DC and Nyquist the neighbourhood wraps onto negative frequencies, where
//! `S(N - j) = conj(S(j))` for real signals. With every bin included the model
//! is exact. Output bins cover the one-sided spectrum only.
//!
//! Filters are fitted by least squares on a white-noise probe and scored on a
//! separate test signal. Both signals are analysed as if zero-extended on
//! either side, so every frame touching a nonzero sample is included. With
//! that convention the normal equations are exact block-Toeplitz
//! correlations and are assembled from FFT cross-correlations between bands
//! instead of explicit regressors.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::{Complex32, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::{convolve, Waveform};
use crate::stft::{analyze_frames, StftConfig};

/// Relative reconstruction errors are reported no lower than this.
pub const ERROR_FLOOR_DB: f64 = -120.0;
/// Equations per unknown required for identification.
pub const MIN_OVERDETERMINATION: usize = 10;
const CONTAINER_MAGIC: &[u8; 4] = b"XBFB";
const CONTAINER_VERSION: u32 = 1;
/// Cholesky pivots below this fraction of the largest flag a band as rank
/// deficient; it is then re-solved for the minimum-norm solution.
const RANK_TOLERANCE: f64 = 1e-12;

/// `ceil((len(rir) + window) / hop) + 1` frame lags.
pub fn default_n_taps(rir_len: usize, cfg: &StftConfig) -> usize {
    (rir_len + cfg.window_length).div_ceil(cfg.hop_length) + 1
}

/// Distinct bin offsets for radius `l` on a DFT circle of `fft_size` bins.
/// Once `2l + 1` reaches the circle size every bin is covered exactly once.
pub fn neighbour_offsets(l: usize, fft_size: usize) -> std::ops::RangeInclusive<isize> {
    if 2 * l < fft_size {
        -(l as isize)..=l as isize
    } else {
        -(((fft_size - 1) / 2) as isize)..=(fft_size / 2) as isize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    /// `None` selects [`default_n_taps`].
    pub n_taps: Option<usize>,
    pub n_acausal: usize,
    pub probe_seconds: f64,
    pub seed: u64,
    /// Diagonal loading relative to the mean Gram diagonal; 0 disables it.
    pub ridge: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            n_taps: None,
            n_acausal: 1,
            probe_seconds: 100.0,
            seed: 0,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBandFilterBank {
    config: StftConfig,
    l: usize,
    n_taps: usize,
    n_acausal: usize,
    /// `[k][d + l][tap]`; slots outside [`neighbour_offsets`] stay zero.
    taps: Vec<Complex64>,
}

impl CrossBandFilterBank {
    fn zeros(config: StftConfig, l: usize, n_taps: usize, n_acausal: usize) -> Self {
        let taps = vec![Complex64::default(); config.n_freqs() * (2 * l + 1) * n_taps];
        Self {
            config,
            l,
            n_taps,
            n_acausal,
            taps,
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn n_acausal(&self) -> usize {
        self.n_acausal
    }

    pub fn n_freqs(&self) -> usize {
        self.config.n_freqs()
    }

    pub fn offsets(&self) -> std::ops::RangeInclusive<isize> {
        neighbour_offsets(self.l, self.config.fft_size)
    }

    fn slot(&self, k: usize, d: isize) -> usize {
        (k * (2 * self.l + 1) + (d + self.l as isize) as usize) * self.n_taps
    }

    /// Taps of `A(k, k + d, ·)`, first entry at lag `-n_acausal`. Source bin
    /// `k + d` is taken modulo the FFT size. `None` outside the neighbourhood.
    pub fn filter(&self, k: usize, d: isize) -> Option<&[Complex64]> {
        if k >= self.n_freqs() || !self.offsets().contains(&d) {
            return None;
        }
        let o = self.slot(k, d);
        Some(&self.taps[o..o + self.n_taps])
    }

    fn filter_mut(&mut self, k: usize, d: isize) -> &mut [Complex64] {
        let o = self.slot(k, d);
        let n = self.n_taps;
        &mut self.taps[o..o + n]
    }

    pub fn all_taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Versioned little-endian container: magic, version, K, l, n_taps,
    /// n_acausal (u32 each), then `K·(2l+1)·n_taps` complex64 values
    /// (f32 re, f32 im) in `[k][d][tap]` order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CONTAINER_MAGIC)?;
        for v in [
            CONTAINER_VERSION,
            self.n_freqs() as u32,
            self.l as u32,
            self.n_taps as u32,
            self.n_acausal as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in &self.taps {
            let c = Complex32::new(c.re as f32, c.im as f32);
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a container written by [`write_to`](Self::write_to). The STFT
    /// configuration is not stored, so the caller supplies it and its bin
    /// count must match.
    pub fn read_from(mut r: impl Read, config: StftConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CONTAINER_MAGIC {
            return Err(invalid("not a cross-band filter container"));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, k, l, n_taps, n_acausal] = header;
        if version != CONTAINER_VERSION {
            return Err(invalid(format!("unsupported container version {version}")));
        }
        if k as usize != config.n_freqs() {
            return Err(Error::ShapeMismatch(format!(
                "container has {k} bins, config gives {}",
                config.n_freqs()
            )));
        }
        let mut bank = Self::zeros(config, l as usize, n_taps as usize, n_acausal as usize);
        for c in bank.taps.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let re = f32::from_le_bytes(b[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(b[4..].try_into().expect("4 bytes"));
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::NonFinite("filter tap"));
            }
            *c = Complex64::new(re as f64, im as f64);
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyDiagnostics {
    /// Equations per band (frames in the regression).
    pub rows: usize,
    /// Unknowns of the widest band problem.
    pub max_unknowns: usize,
    /// Bands solved by the minimum-norm fallback.
    pub rank_deficient_bands: Vec<usize>,
}

/// Source bands on the full DFT circle and observed one-sided bands, each a
/// frame sequence zero-padded to a common length.
struct BandSequences {
    /// `[j][frame]`, `j` in `0..fft_size`
    source: Vec<Vec<Complex64>>,
    /// `[k][frame]`, `k` in `0..n_freqs`
    observed: Vec<Vec<Complex64>>,
}

/// First frame index and frame count covering every nonzero sample of a
/// signal of length `len`.
fn frame_span(len: usize, cfg: &StftConfig) -> (isize, usize) {
    let first = -(((cfg.window_length - 1) / cfg.hop_length) as isize);
    let last = ((len.max(1) - 1) / cfg.hop_length) as isize;
    (first, (last - first + 1) as usize)
}

/// Rows of the regression: frames where either side of the model can be
/// nonzero, starting `n_acausal` frames early.
fn regression_rows(
    src_len: usize,
    obs_len: usize,
    n_taps: usize,
    n_acausal: usize,
    cfg: &StftConfig,
) -> usize {
    let (_, n_src) = frame_span(src_len, cfg);
    let (_, n_obs) = frame_span(obs_len, cfg);
    n_obs.max(n_src + n_taps - 1 - n_acausal) + n_acausal
}

/// Bin `j` of the two-sided spectrum from a one-sided frame.
fn two_sided_bin(frame: &[Complex64], j: usize, fft_size: usize) -> Complex64 {
    if j < frame.len() {
        frame[j]
    } else {
        frame[fft_size - j].conj()
    }
}

fn band_sequences(
    source: &[f64],
    observed: &[f64],
    cfg: &StftConfig,
    pad_to: usize,
) -> BandSequences {
    let (first, n_src) = frame_span(source.len(), cfg);
    let (_, n_obs) = frame_span(observed.len(), cfg);
    let k = cfg.n_freqs();
    let n = cfg.fft_size;
    let s = analyze_frames(source, cfg, first, n_src);
    let y = analyze_frames(observed, cfg, first, n_obs);
    let source = (0..n)
        .map(|j| {
            let mut band = vec![Complex64::default(); pad_to.max(n_src)];
            for (p, b) in band.iter_mut().take(n_src).enumerate() {
                *b = two_sided_bin(&s[p * k..(p + 1) * k], j, n);
            }
            band
        })
        .collect();
    let observed = (0..k)
        .map(|j| {
            let mut band = vec![Complex64::default(); pad_to.max(n_obs)];
            for (p, b) in band.iter_mut().take(n_obs).enumerate() {
                *b = y[p * k + j];
            }
            band
        })
        .collect();
    BandSequences { source, observed }
}

fn white_probe(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn wrap(k: usize, d: isize, fft_size: usize) -> usize {
    (k as isize + d).rem_euclid(fft_size as isize) as usize
}

/// Circular cross-correlation `Σ_m conj(a(m)) b(m + δ)` for `δ ∈ [-max_lag, max_lag]`,
/// given spectra of equal-length zero-padded sequences.
fn correlate(
    fa: &[Complex64],
    fb: &[Complex64],
    max_lag: usize,
    ifft: &dyn rustfft::Fft<f64>,
    scratch: &mut Vec<Complex64>,
) -> Vec<Complex64> {
    let n = fa.len();
    scratch.clear();
    scratch.extend(fa.iter().zip(fb).map(|(a, b)| a.conj() * b));
    ifft.process(scratch);
    let scale = 1.0 / n as f64;
    (0..=2 * max_lag)
        .map(|i| {
            let lag = i as isize - max_lag as isize;
            scratch[lag.rem_euclid(n as isize) as usize] * scale
        })
        .collect()
}

/// Solves the Hermitian system `g x = h`, via Cholesky when well conditioned
/// and otherwise by the eigen-decomposition pseudo-inverse (minimum norm).
/// Returns the solution and whether the fallback was used.
fn solve_hermitian(g: DMatrix<Complex64>, h: DVector<Complex64>) -> (DVector<Complex64>, bool) {
    if let Some(chol) = g.clone().cholesky() {
        let (lo, hi) = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.re * d.re)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if hi > 0.0 && lo > RANK_TOLERANCE * hi {
            return (chol.solve(&h), false);
        }
    }
    let eig = g.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = RANK_TOLERANCE * lambda_max;
    let projected = eig.eigenvectors.adjoint() * &h;
    let scaled = DVector::from_iterator(
        projected.len(),
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, &lam)| {
                if lam > cutoff {
                    c / lam
                } else {
                    Complex64::default()
                }
            }),
    );
    (&eig.eigenvectors * scaled, true)
}

/// Fits cross-band filters of radius `l` mapping the STFT of a white-noise
/// probe to the STFT of the probe convolved with `rir`.
pub fn identify_crossband_filters(
    rir: &Waveform,
    cfg: &StftConfig,
    l: usize,
    opts: &IdentifyOptions,
) -> Result<(CrossBandFilterBank, IdentifyDiagnostics)> {
    cfg.validate()?;
    if rir.is_empty() {
        return Err(Error::EmptyInput("impulse response"));
    }
    let n_taps = opts
        .n_taps
        .unwrap_or_else(|| default_n_taps(rir.len(), cfg));
    if n_taps == 0 {
        return Err(invalid("n_taps must be at least 1"));
    }
    if opts.n_acausal >= n_taps {
        return Err(invalid(format!(
            "n_acausal {} leaves no causal taps out of {n_taps}",
            opts.n_acausal
        )));
    }
    if !(opts.probe_seconds > 0.0 && opts.probe_seconds.is_finite()) {
        return Err(invalid("probe length must be positive"));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(invalid("ridge must be non-negative"));
    }
    let fs = rir.sample_rate_hz();
    let n_fft = cfg.fft_size;
    let n_freqs = cfg.n_freqs();
    let offsets: Vec<isize> = neighbour_offsets(l, n_fft).collect();
    let max_unknowns = offsets.len() * n_taps;

    let probe_len = ((opts.probe_seconds * fs as f64).round() as usize).max(1);
    let obs_len = probe_len + rir.len() - 1;
    let rows = regression_rows(probe_len, obs_len, n_taps, opts.n_acausal, cfg);
    let needed_rows = MIN_OVERDETERMINATION * max_unknowns;
    if rows < needed_rows {
        return Err(Error::ProbeTooShort {
            rows,
            unknowns: max_unknowns,
            required_seconds: (needed_rows * cfg.hop_length + rir.len()) as f64 / fs as f64,
        });
    }

    let probe = Waveform::new(white_probe(probe_len, opts.seed), fs)?;
    let observed = convolve(&probe, rir)?;
    let (_, n_obs) = frame_span(obs_len, cfg);
    let fft_len = (n_obs + n_taps + 1).next_power_of_two();
    let bands = band_sequences(probe.samples(), observed.samples(), cfg, fft_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    // Only source bins that some output bin's neighbourhood touches.
    let used: BTreeSet<usize> = (0..n_freqs)
        .flat_map(|k| offsets.iter().map(move |&d| wrap(k, d, n_fft)))
        .collect();
    let mut src_f: Vec<Option<Vec<Complex64>>> = bands
        .source
        .into_par_iter()
        .enumerate()
        .map(|(j, mut b)| {
            used.contains(&j).then(|| {
                fft.process(&mut b);
                b
            })
        })
        .collect();
    let obs_f: Vec<Vec<Complex64>> = bands
        .observed
        .into_par_iter()
        .map(|mut b| {
            fft.process(&mut b);
            b
        })
        .collect();

    let max_lag = n_taps - 1;
    let span = offsets.len() - 1;
    // auto[a][e] = corr(S_a, S_{a+e}) over the lag window
    let auto: Vec<Option<Vec<Vec<Complex64>>>> = (0..n_fft)
        .into_par_iter()
        .map(|a| {
            let fa = src_f[a].as_ref()?;
            let mut scratch = Vec::with_capacity(fft_len);
            Some(
                (0..=span)
                    .map(|e| match &src_f[(a + e) % n_fft] {
                        Some(fb) => correlate(fa, fb, max_lag, ifft.as_ref(), &mut scratch),
                        None => Vec::new(),
                    })
                    .collect(),
            )
        })
        .collect();
    let gram_entry = |k: usize, da: isize, db: isize, lag: isize| -> Complex64 {
        if db >= da {
            let a = wrap(k, da, n_fft);
            auto[a].as_ref().expect("used bin")[(db - da) as usize]
                [(lag + max_lag as isize) as usize]
        } else {
            let b = wrap(k, db, n_fft);
            auto[b].as_ref().expect("used bin")[(da - db) as usize]
                [(max_lag as isize - lag) as usize]
                .conj()
        }
    };

    let acausal = opts.n_acausal as isize;
    let solved: Vec<(Vec<Complex64>, bool)> = (0..n_freqs)
        .into_par_iter()
        .map(|k| {
            let n = offsets.len() * n_taps;
            let mut scratch = Vec::with_capacity(fft_len);
            let mut h = DVector::<Complex64>::zeros(n);
            for (ai, &d) in offsets.iter().enumerate() {
                let fa = src_f[wrap(k, d, n_fft)].as_ref().expect("used bin");
                let c = correlate(fa, &obs_f[k], max_lag, ifft.as_ref(), &mut scratch);
                for t in 0..n_taps {
                    let tau = t as isize - acausal;
                    h[ai * n_taps + t] = c[(tau + max_lag as isize) as usize];
                }
            }
            let mut g = DMatrix::<Complex64>::zeros(n, n);
            for (ai, &da) in offsets.iter().enumerate() {
                for (bi, &db) in offsets.iter().enumerate() {
                    for ti in 0..n_taps {
                        for tj in 0..n_taps {
                            g[(ai * n_taps + ti, bi * n_taps + tj)] =
                                gram_entry(k, da, db, ti as isize - tj as isize);
                        }
                    }
                }
            }
            if opts.ridge > 0.0 {
                let load = opts.ridge * g.diagonal().iter().map(|c| c.re).sum::<f64>() / n as f64;
                for i in 0..n {
                    g[(i, i)] += Complex64::new(load, 0.0);
                }
            }
            let (x, fallback) = solve_hermitian(g, h);
            (x.as_slice().to_vec(), fallback)
        })
        .collect();
    src_f.clear();

    let mut bank = CrossBandFilterBank::zeros(*cfg, l, n_taps, opts.n_acausal);
    let mut rank_deficient_bands = Vec::new();
    for (k, (x, fallback)) in solved.into_iter().enumerate() {
        if fallback {
            rank_deficient_bands.push(k);
        }
        if x.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite("filter tap"));
        }
        for (ai, &d) in offsets.iter().enumerate() {
            bank.filter_mut(k, d)
                .copy_from_slice(&x[ai * n_taps..(ai + 1) * n_taps]);
        }
    }
    Ok((
        bank,
        IdentifyDiagnostics {
            rows,
            max_unknowns,
            rank_deficient_bands,
        },
    ))
}

/// `10·log10(Σ|Y - Ŷ|² / Σ|Y|²)` where `Ŷ` applies `bank` to the STFT of
/// `signal` and `Y` is the STFT of `signal * rir`, floored at
/// [`ERROR_FLOOR_DB`].
pub fn reconstruction_error_db(
    bank: &CrossBandFilterBank,
    rir: &Waveform,
    signal: &Waveform,
) -> Result<f64> {
    let cfg = bank.config;
    let observed = convolve(signal, rir)?;
    let rows = regression_rows(
        signal.len(),
        observed.len(),
        bank.n_taps,
        bank.n_acausal,
        &cfg,
    );
    let bands = band_sequences(signal.samples(), observed.samples(), &cfg, rows);
    let acausal = bank.n_acausal as isize;

    let (err, total) = (0..bank.n_freqs())
        .into_par_iter()
        .map(|k| {
            let mut predicted = vec![Complex64::default(); rows];
            for d in bank.offsets() {
                let src = &bands.source[wrap(k, d, cfg.fft_size)];
                let taps = bank.filter(k, d).expect("in neighbourhood");
                for (t, &a) in taps.iter().enumerate() {
                    if a == Complex64::default() {
                        continue;
                    }
                    let tau = t as isize - acausal;
                    // row p is frame p - n_acausal
                    for (p, out) in predicted.iter_mut().enumerate() {
                        let m = p as isize - acausal - tau;
                        if m >= 0 && (m as usize) < src.len() {
                            *out += a * src[m as usize];
                        }
                    }
                }
            }
            let obs = &bands.observed[k];
            let mut err = 0.0;
            let mut total = 0.0;
            for (p, pred) in predicted.iter().enumerate() {
                let y = usize::try_from(p as isize - acausal)
                    .ok()
                    .and_then(|f| obs.get(f).copied())
                    .unwrap_or_default();
                err += (y - pred).norm_sqr();
                total += y.norm_sqr();
            }
            (err, total)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0.0 {
        return Err(Error::ZeroEnergy("observed spectrogram"));
    }
    if err == 0.0 {
        return Ok(ERROR_FLOOR_DB);
    }
    Ok((10.0 * (err / total).log10()).max(ERROR_FLOOR_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbandReportRow {
    pub l: usize,
    pub error_db: f64,
    pub n_taps: usize,
    pub rank_deficient_bands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbandReport {
    pub rows: Vec<CrossbandReportRow>,
}

impl CrossbandReport {
    pub fn error_db(&self, l: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.l == l).map(|r| r.error_db)
    }

    /// `l,error_db` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,error_db\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.l, r.error_db));
        }
        out
    }
}

/// Identifies filters for each `l` on a probe and scores them on
/// `test_signal`, which must not be the probe.
pub fn verify_crossband_model(
    rir: &Waveform,
    cfg: &StftConfig,
    l_values: &[usize],
    test_signal: &Waveform,
    opts: &IdentifyOptions,
) -> Result<CrossbandReport> {
    if l_values.is_empty() {
        return Err(invalid("no neighbourhood radii given"));
    }
    if test_signal.energy() == 0.0 {
        return Err(Error::ZeroEnergy("test signal"));
    }
    let mut rows = Vec::with_capacity(l_values.len());
    for &l in l_values {
        let (bank, diag) = identify_crossband_filters(rir, cfg, l, opts)?;
        rows.push(CrossbandReportRow {
            l,
            error_db: reconstruction_error_db(&bank, rir, test_signal)?,
            n_taps: bank.n_taps,
            rank_deficient_bands: diag.rank_deficient_bands.len(),
        });
    }
    Ok(CrossbandReport { rows })
}
