//! Time-domain containers, FFT convolution and SNR-controlled mixing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;

use crate::error::{invalid, Error, Result};

/// Real-valued sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    /// Rejects a zero sample rate and any non-finite sample.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// Mean square over the whole extent; zero for an empty waveform.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// Same rate, new samples. Fails only on non-finite values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(Error::RateMismatch(a.sample_rate_hz, b.sample_rate_hz));
    }
    Ok(())
}

/// Below this length of the shorter operand the direct sum is cheaper than
/// three FFTs.
const DIRECT_CONVOLUTION_MAX: usize = 64;

/// Full linear convolution, output length `len(x) + len(h) - 1`.
pub fn convolve(x: &Waveform, h: &Waveform) -> Result<Waveform> {
    check_rates(x, h)?;
    if x.is_empty() || h.is_empty() {
        return Err(Error::EmptyInput("convolution operand"));
    }
    let out = if x.len().min(h.len()) <= DIRECT_CONVOLUTION_MAX {
        convolve_direct(x.samples(), h.samples())
    } else {
        convolve_fft(x.samples(), h.samples())
    };
    x.with_samples(out)
}

pub(crate) fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &hv) in out[i..].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

pub(crate) fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut xb = fwd.make_input_vec();
    xb[..x.len()].copy_from_slice(x);
    let mut hb = fwd.make_input_vec();
    hb[..h.len()].copy_from_slice(h);
    let mut xs = fwd.make_output_vec();
    let mut hs = fwd.make_output_vec();
    fwd.process(&mut xb, &mut xs).expect("fft buffer sizes");
    fwd.process(&mut hb, &mut hs).expect("fft buffer sizes");
    for (a, b) in xs.iter_mut().zip(&hs) {
        *a *= *b;
    }
    // c2r requires purely real DC and Nyquist bins.
    xs[0].im = 0.0;
    if let Some(last) = xs.last_mut() {
        last.im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(&mut xs, &mut out).expect("fft buffer sizes");
    let scale = 1.0 / n as f64;
    out.truncate(out_len);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixed: Waveform,
    /// Linear gain applied to the cropped noise.
    pub gain: f64,
    /// Start of the noise segment that was used.
    pub noise_offset: usize,
}

/// Adds `gain * noise` so that the signal-to-scaled-noise power ratio over
/// the signal's extent equals `snr_db`. When the noise is longer than the
/// signal a contiguous segment is taken at a seed-derived offset.
///
/// `snr_db = +inf` yields a zero gain (noise-free mixture).
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    check_rates(signal, noise)?;
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(invalid(format!(
            "snr_db must be a number or +inf, got {snr_db}"
        )));
    }
    if signal.is_empty() {
        return Err(Error::EmptyInput("signal"));
    }
    if noise.len() < signal.len() {
        return Err(invalid(format!(
            "noise has {} samples, signal needs {}",
            noise.len(),
            signal.len()
        )));
    }
    let slack = noise.len() - signal.len();
    let noise_offset = if slack == 0 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..=slack)
    };
    let crop = &noise.samples()[noise_offset..noise_offset + signal.len()];

    let p_signal = signal.power();
    let p_noise = energy(crop) / crop.len() as f64;
    if p_signal == 0.0 {
        return Err(Error::ZeroEnergy("signal"));
    }
    if p_noise == 0.0 {
        return Err(Error::ZeroEnergy("noise segment"));
    }
    let gain = if snr_db == f64::INFINITY {
        0.0
    } else {
        (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
    };
    let mixed = signal
        .samples()
        .iter()
        .zip(crop)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(Mixture {
        mixed: signal.with_samples(mixed)?,
        gain,
        noise_offset,
    })
}

/// 10·log10 of the power ratio between `signal` and `noise` over their common
/// extent.
pub fn measured_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let n = signal.len().min(noise.len());
    10.0 * (energy(&signal[..n]) / energy(&noise[..n])).log10()
}
