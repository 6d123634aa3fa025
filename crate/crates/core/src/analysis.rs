//! Remaining-RIR identification by spectral division and EDC comparison
//! tables.

use rayon::prelude::*;
use realfft::RealFftPlanner;

use crate::error::{invalid, Error, Result};
use crate::rir::edc;
use crate::signal::{check_rates, Waveform};

pub const DEFAULT_REGULARIZATION: f64 = 1e-8;
pub const DEFAULT_RIR_LENGTH_S: f64 = 1.0;

/// `Re{IDFT[DFT(enhanced) / DFT(clean)]}` over a common length of at least
/// `len(enhanced) + len(clean) - 1`, truncated to `rir_len` samples.
///
/// Denominator magnitudes below `regularization · max|DFT(clean)|` are raised
/// to that floor with their phase kept.
pub fn remaining_rir(
    enhanced: &Waveform,
    clean: &Waveform,
    regularization: f64,
    rir_len: usize,
) -> Result<Waveform> {
    check_rates(enhanced, clean)?;
    if enhanced.is_empty() || clean.is_empty() {
        return Err(Error::EmptyInput("remaining RIR operand"));
    }
    if clean.energy() == 0.0 {
        return Err(Error::ZeroEnergy("clean reference"));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(invalid(format!(
            "regularization must be >= 0, got {regularization}"
        )));
    }
    if rir_len == 0 {
        return Err(invalid("RIR length must be positive"));
    }
    let n = (enhanced.len() + clean.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut num_t = fwd.make_input_vec();
    num_t[..enhanced.len()].copy_from_slice(enhanced.samples());
    let mut den_t = fwd.make_input_vec();
    den_t[..clean.len()].copy_from_slice(clean.samples());
    let mut num = fwd.make_output_vec();
    let mut den = fwd.make_output_vec();
    fwd.process(&mut num_t, &mut num).expect("fft buffer sizes");
    fwd.process(&mut den_t, &mut den).expect("fft buffer sizes");

    let max_den = den.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = regularization * max_den;
    for (q, d) in num.iter_mut().zip(&den) {
        let mag = d.norm();
        let d = if mag >= floor && mag > 0.0 {
            *d
        } else if mag > 0.0 {
            d * (floor / mag)
        } else {
            num_complex::Complex64::new(floor, 0.0)
        };
        *q = if d.norm() > 0.0 {
            *q / d
        } else {
            num_complex::Complex64::default()
        };
    }
    num[0].im = 0.0;
    if let Some(last) = num.last_mut() {
        last.im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(&mut num, &mut out).expect("fft buffer sizes");
    let scale = 1.0 / n as f64;
    out.truncate(rir_len.min(n));
    out.iter_mut().for_each(|v| *v *= scale);
    out.resize(rir_len, 0.0);
    enhanced.with_samples(out)
}

/// EDC columns on a shared time axis, one per named signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdcTable {
    pub sample_rate_hz: u32,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl EdcTable {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |(_, c)| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }

    /// `time_s,<name>_db,...` with a header line.
    pub fn to_csv(&self) -> String {
        self.render(",", "")
    }

    /// Whitespace-separated columns with a `#` header, for gnuplot.
    pub fn to_gnuplot(&self) -> String {
        self.render(" ", "# ")
    }

    fn render(&self, sep: &str, header_prefix: &str) -> String {
        let mut out = String::from(header_prefix);
        out.push_str("time_s");
        for (name, _) in &self.columns {
            out.push_str(sep);
            out.push_str(name);
            out.push_str("_db");
        }
        out.push('\n');
        for n in 0..self.len() {
            out.push_str(&(n as f64 / self.sample_rate_hz as f64).to_string());
            for (_, col) in &self.columns {
                out.push_str(sep);
                out.push_str(&col[n].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// For each named signal, identifies the remaining RIR against `clean` and
/// takes its Schroeder EDC. Column order follows `signals`.
pub fn edc_report(
    signals: &[(String, Waveform)],
    clean: &Waveform,
    rir_length_s: f64,
    regularization: f64,
) -> Result<EdcTable> {
    if signals.is_empty() {
        return Err(Error::EmptyInput("signal list"));
    }
    if !(rir_length_s > 0.0 && rir_length_s.is_finite()) {
        return Err(invalid(format!(
            "RIR length must be positive, got {rir_length_s}"
        )));
    }
    let rir_len = (rir_length_s * clean.sample_rate_hz() as f64)
        .round()
        .max(1.0) as usize;
    let columns = signals
        .par_iter()
        .map(|(name, wave)| {
            let a = remaining_rir(wave, clean, regularization, rir_len)?;
            Ok((name.clone(), edc(&a)?.values_db().to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdcTable {
        sample_rate_hz: clean.sample_rate_hz(),
        columns,
    })
}
