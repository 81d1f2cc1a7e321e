//! Pulse envelopes and the echoed cross-resonance schedule.
//!
//! All drive pulses are flat-top envelopes with truncated-Gaussian edges.
//! Time is in nanoseconds throughout; the device converts pulse areas to
//! evolution times in microseconds.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Integrated area of both Gaussian edges, per unit of rise time.
///
/// The edge is a Gaussian of sigma `rise` truncated at `2 * rise` on each
/// side, shifted so the envelope reaches exactly zero at the truncation
/// point and rescaled to unit peak:
///
/// ```text
/// edge(x) = (exp(-x^2 / (2 rise^2)) - exp(-2)) / (1 - exp(-2)),  |x| <= 2 rise
/// ```
///
/// Closed form: `2 * (sqrt(pi/2) * erf(sqrt(2)) - 2 exp(-2)) / (1 - exp(-2))`.
/// The value is frozen here and pinned against a quadrature oracle in tests.
pub const GAUSSIAN_EDGE_AREA_PER_RISE: f64 = 2.140985815436424;

/// Support of one truncated-Gaussian edge, in units of the rise time.
pub const EDGE_SUPPORT_PER_RISE: f64 = 2.0;

/// A flat-top pulse with truncated-Gaussian edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Dimensionless drive strength in `[0, 1]`.
    pub amplitude: f64,
    /// Drive phase in radians.
    pub phase: f64,
    /// Flat-top duration in ns.
    pub width: f64,
    /// Gaussian edge sigma in ns.
    pub rise: f64,
}

impl PulseParams {
    /// Builds a flat-top Gaussian pulse, validating every field.
    pub fn flat_top_gaussian(amplitude: f64, phase: f64, width: f64, rise: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) || !amplitude.is_finite() {
            return Err(Error::validation(
                "amplitude",
                format!("{amplitude} outside [0, 1]"),
            ));
        }
        if width.is_nan() || width < 0.0 || !width.is_finite() {
            return Err(Error::validation("width", format!("{width} is negative")));
        }
        if rise.is_nan() || rise <= 0.0 || !rise.is_finite() {
            return Err(Error::validation("rise", format!("{rise} is not positive")));
        }
        if !phase.is_finite() {
            return Err(Error::validation("phase", format!("{phase} is not finite")));
        }
        Ok(PulseParams {
            amplitude,
            phase,
            width,
            rise,
        })
    }

    /// Total pulse duration in ns: flat top plus both truncated edges.
    pub fn duration(&self) -> f64 {
        self.width + 2.0 * EDGE_SUPPORT_PER_RISE * self.rise
    }

    /// Unit-amplitude envelope area in ns: `width + c_edge * rise`.
    ///
    /// Linear in width and independent of amplitude and phase; this is the
    /// quantity the device maps to an evolution time.
    pub fn effective_area(&self) -> f64 {
        self.width + GAUSSIAN_EDGE_AREA_PER_RISE * self.rise
    }

    /// Same pulse with a different flat-top width.
    pub fn with_width(&self, width: f64) -> Result<Self> {
        Self::flat_top_gaussian(self.amplitude, self.phase, width, self.rise)
    }
}

/// The echoed cross-resonance schedule: two CR segments on the control
/// qubit with an interleaved X pulse, plus an optional cancellation tone on
/// the target with matching width and rise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoedCrSchedule {
    /// CR drive on the control qubit at the target frequency.
    pub cr_pulse: PulseParams,
    /// Resonant cancellation tone on the target qubit, if present.
    pub cancellation: Option<PulseParams>,
    /// Whether the two-segment echo with interleaved X pulses is applied.
    /// Always true for calibrated gates.
    pub echo: bool,
    /// Virtual phase applied identically to both tones, in radians.
    pub phase_frame_shift: f64,
}

impl EchoedCrSchedule {
    /// Builds an echoed schedule. The cancellation tone, when present, must
    /// duration-match the CR pulse.
    pub fn new(
        cr_pulse: PulseParams,
        cancellation: Option<PulseParams>,
        phase_frame_shift: f64,
    ) -> Result<Self> {
        if let Some(cancel) = &cancellation {
            if cancel.width != cr_pulse.width {
                return Err(Error::validation(
                    "cancellation.width",
                    format!(
                        "{} does not match CR pulse width {}",
                        cancel.width, cr_pulse.width
                    ),
                ));
            }
            if cancel.rise != cr_pulse.rise {
                return Err(Error::validation(
                    "cancellation.rise",
                    format!(
                        "{} does not match CR pulse rise {}",
                        cancel.rise, cr_pulse.rise
                    ),
                ));
            }
        }
        Ok(EchoedCrSchedule {
            cr_pulse,
            cancellation,
            echo: true,
            phase_frame_shift,
        })
    }

    /// Number of drive segments: two CR segments, plus two cancellation
    /// segments when the tone is present.
    pub fn segment_count(&self) -> usize {
        if self.cancellation.is_some() {
            4
        } else {
            2
        }
    }

    /// Total schedule duration in ns: two CR segments plus the two
    /// single-qubit echo pulses of the given duration.
    pub fn duration(&self, single_qubit_pulse_ns: f64) -> f64 {
        2.0 * self.cr_pulse.duration() + 2.0 * single_qubit_pulse_ns
    }

    /// Integrated CR drive area over the whole schedule in ns. The echo
    /// doubles the single-segment area.
    pub fn cr_drive_area(&self) -> f64 {
        let segments = if self.echo { 2.0 } else { 1.0 };
        segments * self.cr_pulse.effective_area()
    }

    /// Returns the schedule with the phase frame advanced by `delta`,
    /// applied identically to the CR drive and the cancellation tone.
    pub fn shift_phase(&self, delta: f64) -> Self {
        let mut shifted = *self;
        shifted.phase_frame_shift += delta;
        shifted
    }

    /// Returns the schedule rebuilt at a different flat-top width. The
    /// cancellation tone width tracks the CR pulse.
    pub fn with_width(&self, width: f64) -> Result<Self> {
        let cr = self.cr_pulse.with_width(width)?;
        let cancel = match &self.cancellation {
            Some(c) => Some(c.with_width(width)?),
            None => None,
        };
        let mut schedule = Self::new(cr, cancel, self.phase_frame_shift)?;
        schedule.echo = self.echo;
        Ok(schedule)
    }

    /// Total CR drive phase seen by the device: pulse phase plus frame.
    pub fn cr_total_phase(&self) -> f64 {
        self.cr_pulse.phase + self.phase_frame_shift
    }

    /// Total cancellation-tone phase, if the tone is present.
    pub fn cancel_total_phase(&self) -> Option<f64> {
        self.cancellation
            .as_ref()
            .map(|c| c.phase + self.phase_frame_shift)
    }
}
