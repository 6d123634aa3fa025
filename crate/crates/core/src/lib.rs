//! Dereverberation learning targets and the analysis tooling around them.
//!
//! * [`signal`] and [`stft`]: waveforms, FFT convolution, SNR mixing and a
//!   perfectly reconstructing STFT.
//! * [`rir`]: Polack-model impulse responses, direct-path detection,
//!   Schroeder energy decay curves and T60 estimation.
//! * [`target`]: direct-path, early-reflection and reverberation-time-shortening
//!   targets, training pairs and magnitude features.
//! * [`crossband`]: least-squares identification of STFT cross-band filters.
//! * [`analysis`]: remaining-RIR identification and EDC tables.
//! * [`dataset`], [`scenarios`]: batch pipelines used by the `rts` binary.

pub mod analysis;
pub mod crossband;
pub mod dataset;
pub mod error;
pub mod rir;
pub mod scenarios;
pub mod signal;
pub mod stft;
pub mod target;
pub mod wav;

pub use error::{Error, Result};
pub use rir::{DecayEstimate, EnergyDecayCurve, PolackParams, RoomImpulseResponse};
pub use signal::Waveform;
pub use stft::{Spectrogram, StftConfig, WindowKind};
pub use target::{ShorteningWindow, TargetSpec};
