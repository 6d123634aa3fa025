//! Short-time Fourier analysis with a least-squares dual synthesis window.

use std::f64::consts::PI;

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic (DFT-even) window of the given length.
    pub fn generate(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub window_kind: WindowKind,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 512-point Hamming window, 256-sample hop.
    fn default() -> Self {
        Self {
            window_length: 512,
            hop_length: 256,
            window_kind: WindowKind::Hamming,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop_length: usize, window_kind: WindowKind) -> Result<Self> {
        let cfg = Self {
            window_length,
            hop_length,
            window_kind,
            fft_size: window_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop_length == 0 {
            return Err(invalid("window and hop lengths must be positive"));
        }
        if self.hop_length > self.window_length {
            return Err(invalid(format!(
                "hop {} exceeds window {}",
                self.hop_length, self.window_length
            )));
        }
        if self.fft_size < self.window_length {
            return Err(invalid(format!(
                "fft size {} below window length {}",
                self.fft_size, self.window_length
            )));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, `fft_size / 2 + 1`.
    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `ceil((len - window) / hop) + 1`, frames at multiples of the hop with
    /// tail zero padding.
    pub fn n_frames(&self, signal_len: usize) -> usize {
        (signal_len - self.window_length).div_ceil(self.hop_length) + 1
    }

    pub fn window(&self) -> Vec<f64> {
        self.window_kind.generate(self.window_length)
    }
}

/// One-sided STFT coefficients, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    coefficients: Vec<Complex64>,
    n_frames: usize,
    config: StftConfig,
    original_length: usize,
}

impl Spectrogram {
    /// Wraps a frame-major coefficient grid; `coefficients.len()` must equal
    /// `n_frames * config.n_freqs()`.
    pub fn from_parts(
        coefficients: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        original_length: usize,
    ) -> Result<Self> {
        config.validate()?;
        if coefficients.len() != n_frames * config.n_freqs() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for {} frames x {} bins",
                coefficients.len(),
                n_frames,
                config.n_freqs()
            )));
        }
        Ok(Self {
            coefficients,
            n_frames,
            config,
            original_length,
        })
    }

    pub fn n_freqs(&self) -> usize {
        self.config.n_freqs()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn get(&self, k: usize, p: usize) -> Complex64 {
        self.coefficients[p * self.n_freqs() + k]
    }

    pub fn frame(&self, p: usize) -> &[Complex64] {
        let k = self.n_freqs();
        &self.coefficients[p * k..(p + 1) * k]
    }

    /// Flat frame-major view.
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    /// Two-sided energy `Σ_p Σ_k |X(k,p)|² / fft_size`, which by Parseval
    /// equals `Σ_n x(n)² Σ_p w(n - pH)²`.
    pub fn energy(&self) -> f64 {
        let n = self.config.fft_size;
        let nyquist = if n.is_multiple_of(2) {
            Some(n / 2)
        } else {
            None
        };
        let mut total = 0.0;
        for p in 0..self.n_frames {
            for (k, c) in self.frame(p).iter().enumerate() {
                let weight = if k == 0 || Some(k) == nyquist {
                    1.0
                } else {
                    2.0
                };
                total += weight * c.norm_sqr();
            }
        }
        total / n as f64
    }
}

/// Transforms frames `first_frame .. first_frame + n_frames` of `x`, treating
/// samples outside `[0, len)` as zero. Returns a frame-major grid.
pub(crate) fn analyze_frames(
    x: &[f64],
    cfg: &StftConfig,
    first_frame: isize,
    n_frames: usize,
) -> Vec<Complex64> {
    let window = cfg.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut out = Vec::with_capacity(n_frames * cfg.n_freqs());
    for f in 0..n_frames {
        let start = (first_frame + f as isize) * cfg.hop_length as isize;
        input.iter_mut().for_each(|v| *v = 0.0);
        for (i, w) in window.iter().enumerate() {
            let n = start + i as isize;
            if n >= 0 && (n as usize) < x.len() {
                input[i] = x[n as usize] * w;
            }
        }
        fft.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
            .expect("fft buffer sizes");
        out.extend_from_slice(&spectrum);
    }
    out
}

pub fn stft(x: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.len() < cfg.window_length {
        return Err(Error::SignalTooShort {
            len: x.len(),
            window: cfg.window_length,
        });
    }
    let n_frames = cfg.n_frames(x.len());
    let coefficients = analyze_frames(x.samples(), cfg, 0, n_frames);
    Ok(Spectrogram {
        coefficients,
        n_frames,
        config: *cfg,
        original_length: x.len(),
    })
}

/// Per-sample overlap-add of squared analysis windows over `n_frames` frames.
fn squared_window_sum(cfg: &StftConfig, n_frames: usize) -> Vec<f64> {
    let window = cfg.window();
    let len = (n_frames - 1) * cfg.hop_length + cfg.window_length;
    let mut acc = vec![0.0; len];
    for p in 0..n_frames {
        let start = p * cfg.hop_length;
        for (a, w) in acc[start..start + cfg.window_length]
            .iter_mut()
            .zip(&window)
        {
            *a += w * w;
        }
    }
    acc
}

/// Overlap-add resynthesis with the least-squares dual window
/// `w(n) / Σ_p w(n - pH)²`, truncated to the original length.
///
/// Samples no frame observes with nonzero weight come back as zero; with the
/// periodic Hann window this is sample 0.
pub fn istft(spec: &Spectrogram, sample_rate_hz: u32) -> Result<Waveform> {
    let cfg = spec.config;
    cfg.validate()?;
    if spec.n_frames == 0 || spec.coefficients.len() != spec.n_frames * cfg.n_freqs() {
        return Err(Error::ShapeMismatch(
            "empty or inconsistent spectrogram grid".into(),
        ));
    }
    let covered = (spec.n_frames - 1) * cfg.hop_length + cfg.window_length;
    if spec.original_length > covered {
        return Err(Error::ShapeMismatch(format!(
            "{} frames cover {} samples, original length is {}",
            spec.n_frames, covered, spec.original_length
        )));
    }
    let window = cfg.window();
    let norm = squared_window_sum(&cfg, spec.n_frames);

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let mut out = vec![0.0; covered];
    let scale = 1.0 / cfg.fft_size as f64;
    for p in 0..spec.n_frames {
        spectrum.copy_from_slice(spec.frame(p));
        spectrum[0].im = 0.0;
        if cfg.fft_size.is_multiple_of(2) {
            spectrum[cfg.fft_size / 2].im = 0.0;
        }
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .expect("fft buffer sizes");
        let start = p * cfg.hop_length;
        for (i, w) in window.iter().enumerate() {
            out[start + i] += frame[i] * scale * w;
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o = if *d > f64::EPSILON { *o / d } else { 0.0 };
    }
    out.truncate(spec.original_length);
    Waveform::new(out, sample_rate_hz)
}
