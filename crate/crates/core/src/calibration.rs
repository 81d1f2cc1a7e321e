//! The four-experiment CR(θ) calibration pipeline.
//!
//! Stage order: amplitude sweep, baseline tomography (no cancellation),
//! phase formulas, cancellation-probe tomography, amplitude extrapolation,
//! then verification tomography on the assembled gate (and optionally its
//! inverse). Phases are derived in the baseline frame and applied as a
//! whole-schedule phase, so the extrapolation runs stay frame-consistent.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{confusion_matrix, mitigate_readout};
use crate::device::{ControlState, DeviceConfig, MeasBasis};
use crate::error::Error;
use crate::exec::{
    derive_seed, map_indexed, STAGE_AMPLITUDE_SWEEP, STAGE_TOMOGRAPHY_BASELINE,
    STAGE_TOMOGRAPHY_CANCEL_PROBE, STAGE_VERIFY_GATE, STAGE_VERIFY_INVERSE,
};
use crate::fit::MonotoneCubic;
use crate::pulse::{EchoedCrSchedule, PulseParams, GAUSSIAN_EDGE_AREA_PER_RISE};
use crate::synthesis::{phase_shifted_axis_gate, TwoQubitGateSpec};
use crate::tomography::{
    extract_coefficients, fit_bloch_trajectories, fmt9, run_tomography, CoefficientReport,
    HamiltonianCoefficients, TomographyData,
};
use crate::Result;

/// Schema version of persisted gate files.
pub const GATE_SCHEMA_VERSION: u32 = 1;

/// Coefficients are treated as signal only above this many standard errors.
pub const NOISE_FLOOR_SIGMAS: f64 = 3.0;

/// Pipeline knobs. Serialized into the config hash, so any change shows up
/// in provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Number of points in the amplitude sweep grid.
    pub amplitude_points: usize,
    /// Largest amplitude swept.
    pub amplitude_max: f64,
    /// Shots per amplitude-sweep cell.
    pub sweep_shots: u64,
    /// Shots per tomography cell.
    pub tomography_shots: u64,
    /// Width points per tomography experiment.
    pub width_points: usize,
    /// Total precession angle the width grid should span, in rad.
    pub target_total_angle: f64,
    /// Cancellation probe amplitude A0; defaults to half the device's
    /// nominal cancellation amplitude when unset.
    pub cancel_probe_amplitude: Option<f64>,
    /// Master seed; every experiment derives its own stream from it.
    pub master_seed: u64,
    /// Whether verification also measures the inverse gate (frame shift π).
    pub verify_inverse: bool,
    /// Verification threshold on max(|other|) / |c_zx|.
    pub dominance_threshold: f64,
}

impl CalibrationConfig {
    pub fn with_seed(master_seed: u64) -> Self {
        CalibrationConfig {
            amplitude_points: 24,
            amplitude_max: 0.95,
            sweep_shots: 20_000,
            tomography_shots: 20_000,
            width_points: 16,
            target_total_angle: 4.0 * std::f64::consts::PI,
            cancel_probe_amplitude: None,
            master_seed,
            verify_inverse: true,
            dominance_threshold: 0.02,
        }
    }

    pub fn amplitude_grid(&self) -> Vec<f64> {
        linspace(0.0, self.amplitude_max, self.amplitude_points)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// SHA-256 hex digest over serialized configuration parts.
pub fn config_digest(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Width grid for tomography: spans widths such that the dominant
/// precession angle reaches `target_total_angle`, using the defining
/// property of the calibrated amplitude (angle θ at the inherited width).
pub fn tomography_width_grid(
    theta: f64,
    width_inherited: f64,
    rise: f64,
    points: usize,
    target_total_angle: f64,
) -> Vec<f64> {
    let edge = GAUSSIAN_EDGE_AREA_PER_RISE * rise;
    let area_inherited = width_inherited + edge;
    let area_max = area_inherited * target_total_angle / theta;
    let w_max = (area_max - edge).max(width_inherited);
    linspace(0.0, w_max, points)
}

/// One point of the amplitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub expectation: f64,
    pub std_err: f64,
}

/// Measured ⟨Z(A)⟩ with the control in |0⟩ and |1⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSweep {
    pub amplitudes: Vec<f64>,
    /// Index 0: control |0⟩ (used for the root); index 1: control |1⟩.
    pub series: [Vec<SweepPoint>; 2],
}

impl AmplitudeSweep {
    /// CSV rows `amplitude,control,z_expectation,std_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("amplitude,control,z_expectation,std_err\n");
        for (control, series) in self.series.iter().enumerate() {
            for p in series {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt9(p.amplitude),
                    control,
                    fmt9(p.expectation),
                    fmt9(p.std_err)
                ));
            }
        }
        out
    }
}

/// Sweeps the CR amplitude and reads off `A_theta` where the control-|0⟩
/// series crosses `cos(theta)`. The width and rise are inherited from the
/// device defaults.
pub fn calibrate_amplitude(
    dev: &DeviceConfig,
    theta: f64,
    sweep_grid: &[f64],
    shots: u64,
    seed: u64,
) -> Result<(f64, AmplitudeSweep)> {
    validate_theta(theta)?;
    if sweep_grid.len() < 10 {
        return Err(Error::validation(
            "sweep_grid",
            format!("{} points, need at least 10", sweep_grid.len()),
        ));
    }
    if sweep_grid[0] != 0.0 {
        return Err(Error::validation("sweep_grid", "must start at amplitude 0"));
    }
    if sweep_grid.windows(2).any(|w| w[1] <= w[0]) || sweep_grid.iter().any(|&a| a > 1.0) {
        return Err(Error::validation(
            "sweep_grid",
            "must be strictly increasing within [0, 1]",
        ));
    }

    let width = dev.metadata.cr_width_ns;
    let rise = dev.metadata.cr_rise_ns;
    let confusion = confusion_matrix(&dev.readout_confusion_target);
    let det = dev.readout_confusion_target[0][0] * dev.readout_confusion_target[1][1]
        - dev.readout_confusion_target[0][1] * dev.readout_confusion_target[1][0];
    let gain = 1.0 / det.abs().max(1e-12);

    let n_cells = sweep_grid.len() * 2;
    let cells: Vec<Result<SweepPoint>> = map_indexed(n_cells, |idx| {
        let a_idx = idx / 2;
        let control = ControlState::BOTH[idx % 2];
        let pulse = PulseParams::flat_top_gaussian(sweep_grid[a_idx], 0.0, width, rise)?;
        let schedule = EchoedCrSchedule::new(pulse, None, 0.0)?;
        let counts = dev.sample_measurement(
            &schedule,
            control,
            MeasBasis::Z,
            shots,
            derive_seed(seed, &[idx as u64]),
        )?;
        let p1 = counts.p1();
        let mitigated = mitigate_readout(&[1.0 - p1, p1], &confusion)?;
        let variance = (p1 * (1.0 - p1)).max(0.25 / shots as f64) / shots as f64;
        Ok(SweepPoint {
            amplitude: sweep_grid[a_idx],
            expectation: mitigated[0] - mitigated[1],
            std_err: 2.0 * variance.sqrt() * gain,
        })
    });

    let mut series: [Vec<SweepPoint>; 2] = [
        Vec::with_capacity(sweep_grid.len()),
        Vec::with_capacity(sweep_grid.len()),
    ];
    for (idx, cell) in cells.into_iter().enumerate() {
        series[idx % 2].push(cell?);
    }

    let target = theta.cos();
    let a_theta = solve_amplitude_for_target(&series[0], target)?;
    Ok((
        a_theta,
        AmplitudeSweep {
            amplitudes: sweep_grid.to_vec(),
            series,
        },
    ))
}

/// Root finder on the sweep: monotone cubic interpolation on the first
/// descending branch, then bisection for the smallest amplitude with
/// `⟨Z(A)⟩ = target`.
pub fn solve_amplitude_for_target(points: &[SweepPoint], target: f64) -> Result<f64> {
    // First descending branch: cut at the first statistically significant
    // upturn.
    let mut end = points.len();
    for k in 1..points.len() {
        let rise = points[k].expectation - points[k - 1].expectation;
        if rise > 3.0 * (points[k].std_err + points[k - 1].std_err) {
            end = k;
            break;
        }
    }
    let branch = &points[..end];
    if branch.len() < 2 {
        return Err(Error::calibration(
            "amplitude_sweep",
            "descending branch too short to interpolate",
        ));
    }

    let bracket = branch
        .windows(2)
        .position(|w| (w[0].expectation - target) * (w[1].expectation - target) <= 0.0);
    let Some(k) = bracket else {
        let min_z = branch
            .iter()
            .map(|p| p.expectation)
            .fold(f64::INFINITY, f64::min);
        return Err(Error::calibration(
            "amplitude_sweep",
            format!(
                "target <Z> = {target:.6} not bracketed (sweep reaches {min_z:.6}); \
                 increase the sweep amplitude maximum or widen the grid"
            ),
        ));
    };

    let xs: Vec<f64> = branch.iter().map(|p| p.amplitude).collect();
    let ys: Vec<f64> = branch.iter().map(|p| p.expectation).collect();
    let interp = MonotoneCubic::new(&xs, &ys)?;
    interp.bisect(xs[k], xs[k + 1], target)
}

/// Phase that nulls the Z⊗Y component: `φ₀ = -atan2(C_ZY, C_ZX)`. The
/// full-quadrant form resolves the branch so that the shifted `c_zx` is
/// positive.
pub fn calibrate_cr_phase(coeffs: &HamiltonianCoefficients) -> Result<f64> {
    let floor_x = NOISE_FLOOR_SIGMAS * coeffs.std_err(0);
    let floor_y = NOISE_FLOOR_SIGMAS * coeffs.std_err(1);
    if coeffs.c_zx.abs() < floor_x && coeffs.c_zy.abs() < floor_y {
        return Err(Error::calibration(
            "cr_phase",
            "no cross-resonance signal: both C_ZX and C_ZY below the noise floor",
        ));
    }
    Ok(-coeffs.c_zy.atan2(coeffs.c_zx))
}

/// Cancellation-tone phase derived from the same baseline tomography.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationPhase {
    /// Absolute tone phase of the final gate, `φ₀ - φ₁`.
    pub phase: f64,
    /// False when the spurious terms sit below the noise floor and no tone
    /// is required.
    pub needed: bool,
}

/// `φ₁ = -atan2(C_1Y, C_1X)`; the correct tone phase is `φ₀ - φ₁`. Returns
/// `φ₀` with a "no cancellation needed" flag when there is no spurious
/// signal to cancel.
pub fn calibrate_cancellation_phase(
    coeffs: &HamiltonianCoefficients,
    phi0: f64,
) -> CancellationPhase {
    let floor_x = NOISE_FLOOR_SIGMAS * coeffs.std_err(3);
    let floor_y = NOISE_FLOOR_SIGMAS * coeffs.std_err(4);
    if coeffs.c_ix.abs() < floor_x && coeffs.c_iy.abs() < floor_y {
        return CancellationPhase {
            phase: phi0,
            needed: false,
        };
    }
    let phi1 = -coeffs.c_iy.atan2(coeffs.c_ix);
    CancellationPhase {
        phase: phi0 - phi1,
        needed: true,
    }
}

/// Cancellation amplitude extrapolated from the probe pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationAmplitude {
    /// Extrapolation along the X axis: `A_X = A0 C¹_1X / (C¹_1X - C²_1X)`.
    pub a_x: f64,
    /// Extrapolation along the Y axis.
    pub a_y: f64,
    /// Adopted amplitude, `(A_X + A_Y) / 2`.
    pub a_c: f64,
    /// `|A_X - A_Y| / A_c`.
    pub relative_disagreement: f64,
}

/// Linear extrapolation of the tone amplitude from a run without the tone
/// (`run1`) and a run with the tone at `a0` (`run2`), both in the same
/// drive frame.
pub fn calibrate_cancellation_amplitude(
    run1: &HamiltonianCoefficients,
    run2: &HamiltonianCoefficients,
    a0: f64,
) -> Result<CancellationAmplitude> {
    if a0.is_nan() || a0 <= 0.0 {
        return Err(Error::validation("a0", format!("{a0} must be positive")));
    }
    let d_x = run1.c_ix - run2.c_ix;
    let d_y = run1.c_iy - run2.c_iy;
    let combined_x = (run1.std_err(3).powi(2) + run2.std_err(3).powi(2)).sqrt();
    let combined_y = (run1.std_err(4).powi(2) + run2.std_err(4).powi(2)).sqrt();
    if d_x.abs() < combined_x || d_y.abs() < combined_y {
        return Err(Error::calibration(
            "cancellation_amplitude",
            "cancellation tone had no measurable effect; increase A0",
        ));
    }
    let a_x = a0 * run1.c_ix / d_x;
    let a_y = a0 * run1.c_iy / d_y;
    let a_c = 0.5 * (a_x + a_y);
    if !a_c.is_finite() || a_c == 0.0 {
        return Err(Error::calibration(
            "cancellation_amplitude",
            format!("extrapolated amplitude {a_c} is unusable"),
        ));
    }
    Ok(CancellationAmplitude {
        a_x,
        a_y,
        a_c,
        relative_disagreement: (a_x - a_y).abs() / a_c.abs(),
    })
}

/// One tomography experiment with its fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyExperiment {
    pub label: String,
    pub seed: u64,
    pub shots: u64,
    pub data: TomographyData,
    pub coefficients: HamiltonianCoefficients,
}

/// Record of one experiment for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub label: String,
    pub seed: u64,
    pub shots: u64,
}

/// Everything needed to reproduce and audit a calibrated gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
    /// Hamiltonian tomography experiments performed; the pipeline needs at
    /// most four.
    pub tomography_experiments: u32,
    pub experiments: Vec<ExperimentRecord>,
    pub amplitude_grid: Vec<f64>,
    pub width_grid: Vec<f64>,
    pub probe_amplitude: Option<f64>,
    pub cancellation: Option<CancellationAmplitude>,
    pub phi1: Option<f64>,
}

/// A calibrated CR(θ) gate: drive amplitude and phase, cancellation tone,
/// and the inherited envelope geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedGate {
    pub theta: f64,
    /// CR drive amplitude `A_θ`.
    pub amplitude: f64,
    /// CR drive phase `φ₀`.
    pub cr_phase: f64,
    /// Cancellation-tone amplitude `A_c` (0 disables the tone).
    pub cancel_amplitude: f64,
    /// Cancellation-tone phase `φ₀ - φ₁`.
    pub cancel_phase: f64,
    /// Inherited flat-top width in ns.
    pub width: f64,
    /// Inherited Gaussian rise in ns.
    pub rise: f64,
    pub provenance: Provenance,
}

impl CalibratedGate {
    /// The full echoed pulse schedule of this gate.
    pub fn to_schedule(&self) -> Result<EchoedCrSchedule> {
        let cr =
            PulseParams::flat_top_gaussian(self.amplitude, self.cr_phase, self.width, self.rise)?;
        let cancellation = if self.cancel_amplitude > 0.0 {
            Some(PulseParams::flat_top_gaussian(
                self.cancel_amplitude,
                self.cancel_phase,
                self.width,
                self.rise,
            )?)
        } else {
            None
        };
        EchoedCrSchedule::new(cr, cancellation, 0.0)
    }

    /// Gate spec of the axis-shifted family Z(cos(δ)X + sin(δ)Y)(θ)
    /// realized by virtual phases around this gate.
    pub fn axis_shifted_spec(&self, dphi: f64) -> TwoQubitGateSpec {
        phase_shifted_axis_gate(self.theta, dphi)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            schema_version: u32,
            gate: &'a CalibratedGate,
        }
        serde_json::to_string_pretty(&Record {
            schema_version: GATE_SCHEMA_VERSION,
            gate: self,
        })
        .expect("gate serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Record {
            schema_version: u32,
            gate: CalibratedGate,
        }
        let record: Record =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        if record.schema_version != GATE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported gate schema_version {} (expected {})",
                record.schema_version, GATE_SCHEMA_VERSION
            )));
        }
        Ok(record.gate)
    }
}

/// Verification knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub width_points: usize,
    pub target_total_angle: f64,
    pub dominance_threshold: f64,
    pub include_inverse: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            width_points: 16,
            target_total_angle: 4.0 * std::f64::consts::PI,
            dominance_threshold: 0.02,
            include_inverse: true,
        }
    }
}

/// Lean verification summary (persisted as JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub gate: CoefficientReport,
    pub inverse: Option<CoefficientReport>,
    /// max(|c_zy|, |c_zz|, |c_ix|, |c_iy|, |c_iz|) / |c_zx| of the gate run.
    pub dominance_ratio: f64,
    pub threshold: f64,
    /// Largest gate-vs-inverse coefficient magnitude gap, in combined
    /// standard errors.
    pub max_magnitude_discrepancy_sigmas: Option<f64>,
    pub passed: bool,
}

/// Verification result with the underlying trajectory data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub summary: VerificationSummary,
    pub gate_data: TomographyData,
    pub inverse_data: Option<TomographyData>,
}

/// Runs tomography on the calibrated gate and (optionally) on its inverse
/// (frame shift π, which negates the ZX sign), and checks the dominance
/// condition.
pub fn verify_calibration(
    dev: &DeviceConfig,
    gate: &CalibratedGate,
    shots: u64,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let widths = tomography_width_grid(
        gate.theta,
        gate.width,
        gate.rise,
        opts.width_points,
        opts.target_total_angle,
    );
    let schedule = gate.to_schedule()?;

    let gate_seed = derive_seed(seed, &[STAGE_VERIFY_GATE]);
    let gate_data = run_tomography(dev, &schedule, &widths, shots, gate_seed)?;
    let gate_coeffs = extract_coefficients(&fit_bloch_trajectories(&gate_data)?);

    let (inverse_data, inverse_coeffs) = if opts.include_inverse {
        let inverse_schedule = schedule.shift_phase(std::f64::consts::PI);
        let inverse_seed = derive_seed(seed, &[STAGE_VERIFY_INVERSE]);
        let data = run_tomography(dev, &inverse_schedule, &widths, shots, inverse_seed)?;
        let coeffs = extract_coefficients(&fit_bloch_trajectories(&data)?);
        (Some(data), Some(coeffs))
    } else {
        (None, None)
    };

    let dominance_ratio = gate_coeffs.dominance_ratio();
    let max_magnitude_discrepancy_sigmas = inverse_coeffs.as_ref().map(|inv| {
        gate_coeffs
            .as_array()
            .iter()
            .zip(inv.as_array())
            .enumerate()
            .map(|(i, (g, v))| {
                let combined = (gate_coeffs.std_err(i).powi(2) + inv.std_err(i).powi(2))
                    .sqrt()
                    .max(1e-12);
                (g.abs() - v.abs()).abs() / combined
            })
            .fold(0.0, f64::max)
    });

    let summary = VerificationSummary {
        gate: CoefficientReport::new("gate", &gate_coeffs),
        inverse: inverse_coeffs
            .as_ref()
            .map(|c| CoefficientReport::new("inverse", c)),
        dominance_ratio,
        threshold: opts.dominance_threshold,
        max_magnitude_discrepancy_sigmas,
        passed: dominance_ratio < opts.dominance_threshold,
    };

    Ok(VerificationReport {
        summary,
        gate_data,
        inverse_data,
    })
}

/// Full output of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub gate: CalibratedGate,
    pub sweep: AmplitudeSweep,
    pub baseline: TomographyExperiment,
    pub cancel_probe: Option<TomographyExperiment>,
    pub verification: VerificationReport,
}

fn validate_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= std::f64::consts::PI) {
        return Err(Error::validation(
            "theta",
            format!("{theta} outside (0, pi]"),
        ));
    }
    Ok(())
}

/// Executes the full pipeline. The tomography budget is at most four
/// experiments: baseline, cancellation probe, gate verification, and
/// (optionally) inverse verification.
pub fn run_full_calibration(
    dev: &DeviceConfig,
    theta: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationRun> {
    validate_theta(theta)?;
    let width = dev.metadata.cr_width_ns;
    let rise = dev.metadata.cr_rise_ns;
    let master = config.master_seed;
    let config_hash = config_digest(&[
        &serde_json::to_string(dev).map_err(|e| Error::Config(e.to_string()))?,
        &serde_json::to_string(config).map_err(|e| Error::Config(e.to_string()))?,
        &format!("{theta:.17e}"),
    ]);

    let mut experiments = Vec::new();
    let mut tomography_count = 0u32;

    // Stage 1: amplitude sweep at the uncalibrated phase.
    let amplitude_grid = config.amplitude_grid();
    let sweep_seed = derive_seed(master, &[STAGE_AMPLITUDE_SWEEP]);
    let (a_theta, sweep) =
        calibrate_amplitude(dev, theta, &amplitude_grid, config.sweep_shots, sweep_seed)?;
    experiments.push(ExperimentRecord {
        label: "amplitude_sweep".into(),
        seed: sweep_seed,
        shots: config.sweep_shots,
    });

    // Stage 2: baseline tomography, no cancellation, phase 0.
    let widths = tomography_width_grid(
        theta,
        width,
        rise,
        config.width_points,
        config.target_total_angle,
    );
    let cr_pulse = PulseParams::flat_top_gaussian(a_theta, 0.0, width, rise)?;
    let baseline_schedule = EchoedCrSchedule::new(cr_pulse, None, 0.0)?;
    let baseline_seed = derive_seed(master, &[STAGE_TOMOGRAPHY_BASELINE]);
    let baseline_data = run_tomography(
        dev,
        &baseline_schedule,
        &widths,
        config.tomography_shots,
        baseline_seed,
    )?;
    let baseline_coeffs = extract_coefficients(&fit_bloch_trajectories(&baseline_data)?);
    tomography_count += 1;
    experiments.push(ExperimentRecord {
        label: "tomography_baseline".into(),
        seed: baseline_seed,
        shots: config.tomography_shots,
    });

    // Stage 3: phase formulas from the baseline run.
    let phi0 = calibrate_cr_phase(&baseline_coeffs)?;
    let cancel_phase = calibrate_cancellation_phase(&baseline_coeffs, phi0);

    // Stage 4: cancellation probe in the baseline frame (CR phase still 0,
    // tone at -φ₁), then the linear extrapolation.
    let mut cancel_probe = None;
    let mut cancellation = None;
    let mut probe_amplitude = None;
    let cancel_amplitude = if cancel_phase.needed {
        let a0 = config
            .cancel_probe_amplitude
            .unwrap_or(0.5 * dev.metadata.nominal_cancel_amplitude);
        let probe_tone =
            PulseParams::flat_top_gaussian(a0, cancel_phase.phase - phi0, width, rise)?;
        let probe_schedule = EchoedCrSchedule::new(cr_pulse, Some(probe_tone), 0.0)?;
        let probe_seed = derive_seed(master, &[STAGE_TOMOGRAPHY_CANCEL_PROBE]);
        let probe_data = run_tomography(
            dev,
            &probe_schedule,
            &widths,
            config.tomography_shots,
            probe_seed,
        )?;
        let probe_coeffs = extract_coefficients(&fit_bloch_trajectories(&probe_data)?);
        tomography_count += 1;
        experiments.push(ExperimentRecord {
            label: "tomography_cancellation_probe".into(),
            seed: probe_seed,
            shots: config.tomography_shots,
        });

        let amps = calibrate_cancellation_amplitude(&baseline_coeffs, &probe_coeffs, a0)?;
        if !(amps.a_c > 0.0 && amps.a_c <= 1.0) {
            return Err(Error::calibration(
                "cancellation_amplitude",
                format!("extrapolated amplitude {} outside (0, 1]", amps.a_c),
            ));
        }
        cancel_probe = Some(TomographyExperiment {
            label: "tomography_cancellation_probe".into(),
            seed: probe_seed,
            shots: config.tomography_shots,
            data: probe_data,
            coefficients: probe_coeffs,
        });
        probe_amplitude = Some(a0);
        let a_c = amps.a_c;
        cancellation = Some(amps);
        a_c
    } else {
        0.0
    };

    // Stage 5: gate assembly. The calibrated phases shift the whole
    // schedule, keeping the tone aligned against the crosstalk.
    let gate = CalibratedGate {
        theta,
        amplitude: a_theta,
        cr_phase: phi0,
        cancel_amplitude,
        cancel_phase: cancel_phase.phase,
        width,
        rise,
        provenance: Provenance {
            master_seed: master,
            config_hash,
            tomography_experiments: 0, // filled below
            experiments: Vec::new(),
            amplitude_grid,
            width_grid: widths.clone(),
            probe_amplitude,
            cancellation,
            phi1: cancel_phase.needed.then_some(phi0 - cancel_phase.phase),
        },
    };

    // Stage 6: verification tomography on the gate (and inverse).
    let verify_opts = VerifyOptions {
        width_points: config.width_points,
        target_total_angle: config.target_total_angle,
        dominance_threshold: config.dominance_threshold,
        include_inverse: config.verify_inverse,
    };
    let verify_seed = derive_seed(master, &[STAGE_VERIFY_GATE, STAGE_VERIFY_INVERSE]);
    let verification = verify_calibration(
        dev,
        &gate,
        config.tomography_shots,
        verify_seed,
        &verify_opts,
    )?;
    tomography_count += 1;
    experiments.push(ExperimentRecord {
        label: "tomography_verification_gate".into(),
        seed: verify_seed,
        shots: config.tomography_shots,
    });
    if config.verify_inverse {
        tomography_count += 1;
        experiments.push(ExperimentRecord {
            label: "tomography_verification_inverse".into(),
            seed: verify_seed,
            shots: config.tomography_shots,
        });
    }

    let mut gate = gate;
    gate.provenance.tomography_experiments = tomography_count;
    gate.provenance.experiments = experiments;

    let baseline = TomographyExperiment {
        label: "tomography_baseline".into(),
        seed: baseline_seed,
        shots: config.tomography_shots,
        data: baseline_data,
        coefficients: baseline_coeffs,
    };

    Ok(CalibrationRun {
        gate,
        sweep,
        baseline,
        cancel_probe,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::exact_tomography;
    use proptest::prelude::*;

    fn coeffs(values: [f64; 6]) -> HamiltonianCoefficients {
        HamiltonianCoefficients {
            c_zx: values[0],
            c_zy: values[1],
            c_zz: values[2],
            c_ix: values[3],
            c_iy: values[4],
            c_iz: values[5],
            covariance: [[0.0; 6]; 6],
            chi2_per_dof: 1.0,
        }
    }

    #[test]
    fn cr_phase_formula_examples() {
        assert_eq!(
            calibrate_cr_phase(&coeffs([5.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap(),
            0.0
        );
        let phi = calibrate_cr_phase(&coeffs([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((phi + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let phi = calibrate_cr_phase(&coeffs([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((phi + std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn cr_phase_requires_signal_above_noise_floor() {
        let mut c = coeffs([1e-6, 1e-6, 0.0, 0.0, 0.0, 0.0]);
        c.covariance[0][0] = 1e-4;
        c.covariance[1][1] = 1e-4;
        let err = calibrate_cr_phase(&c).unwrap_err();
        assert!(
            err.to_string().contains("no cross-resonance signal"),
            "got: {err}"
        );
    }

    proptest! {
        /// Scale invariance: the phase depends only on the coefficient
        /// direction, not its magnitude.
        #[test]
        fn cr_phase_is_scale_invariant(
            zx in -5.0f64..5.0,
            zy in -5.0f64..5.0,
            k in 1e-3f64..1e3,
        ) {
            prop_assume!(zx.hypot(zy) > 1e-3);
            let base = calibrate_cr_phase(&coeffs([zx, zy, 0.0, 0.0, 0.0, 0.0])).unwrap();
            let scaled = calibrate_cr_phase(&coeffs([k * zx, k * zy, 0.0, 0.0, 0.0, 0.0])).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
        }
    }

    #[test]
    fn cancellation_phase_examples() {
        let c = calibrate_cancellation_phase(&coeffs([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), 0.0);
        assert!(c.needed);
        assert_eq!(c.phase, 0.0);

        let c = calibrate_cancellation_phase(&coeffs([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), 0.0);
        assert!((c.phase - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn cancellation_phase_flags_when_not_needed() {
        let mut c = coeffs([1.0, 0.0, 0.0, 1e-7, 1e-7, 0.0]);
        c.covariance[3][3] = 1e-6;
        c.covariance[4][4] = 1e-6;
        let result = calibrate_cancellation_phase(&c, 0.42);
        assert!(!result.needed);
        assert_eq!(result.phase, 0.42);
    }

    #[test]
    fn cancellation_amplitude_examples() {
        let run1 = coeffs([0.0, 0.0, 0.0, 1.2, 1.2, 0.0]);
        let run2 = coeffs([0.0, 0.0, 0.0, 0.4, 0.4, 0.0]);
        let amp = calibrate_cancellation_amplitude(&run1, &run2, 0.05).unwrap();
        assert!((amp.a_x - 0.075).abs() < 1e-12, "a_x = {}", amp.a_x);
        assert!((amp.a_y - 0.075).abs() < 1e-12);
        assert!(amp.relative_disagreement < 1e-12);

        // Tone exactly cancels at A0.
        let run2 = coeffs([0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let amp = calibrate_cancellation_amplitude(&run1, &run2, 0.05).unwrap();
        assert!((amp.a_x - 0.05).abs() < 1e-12);
    }

    #[test]
    fn cancellation_amplitude_requires_measurable_effect() {
        let mut run1 = coeffs([0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let mut run2 = run1.clone();
        run1.covariance[3][3] = 1.0;
        run1.covariance[4][4] = 1.0;
        run2.covariance[3][3] = 1.0;
        run2.covariance[4][4] = 1.0;
        run2.c_ix = 1.000001;
        run2.c_iy = 0.999999;
        let err = calibrate_cancellation_amplitude(&run1, &run2, 0.05).unwrap_err();
        assert!(err.to_string().contains("increase A0"), "got: {err}");
    }

    #[test]
    fn theta_validation() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig::with_seed(1);
        assert!(run_full_calibration(&dev, 0.0, &config).is_err());
        assert!(run_full_calibration(&dev, -0.3, &config).is_err());
        assert!(run_full_calibration(&dev, 3.5, &config).is_err());
    }

    #[test]
    fn amplitude_root_on_exact_device_matches_closed_form() {
        // Oracle: on a device with no spurious terms, <Z(A)> = cos(g(A) t),
        // so A_theta solves g1 A + g3 A^3 = theta / t with t the echoed
        // drive time at the inherited width.
        let mut dev = DeviceConfig::default_virtual();
        dev.eps_ix = 0.0;
        dev.eps_iy = 0.0;
        dev.eps_iz = 0.0;
        dev.eps_zz = 0.0;
        let theta = std::f64::consts::PI / 5.0;

        let pulse = PulseParams::flat_top_gaussian(
            0.5,
            0.0,
            dev.metadata.cr_width_ns,
            dev.metadata.cr_rise_ns,
        )
        .unwrap();
        let schedule = EchoedCrSchedule::new(pulse, None, 0.0).unwrap();
        let t = dev.evolution_time_us(&schedule);

        // Closed-form root by Newton iteration on the cubic.
        let rate = theta / t;
        let mut a = rate / dev.g1;
        for _ in 0..60 {
            let f = dev.g1 * a + dev.g3 * a.powi(3) - rate;
            let df = dev.g1 + 3.0 * dev.g3 * a * a;
            a -= f / df;
        }

        // Exact (noise-free) sweep through the same root-finding machinery.
        let grid = super::linspace(0.0, 0.95, 48);
        let points: Vec<SweepPoint> = grid
            .iter()
            .map(|&amp| {
                let p = PulseParams::flat_top_gaussian(
                    amp,
                    0.0,
                    dev.metadata.cr_width_ns,
                    dev.metadata.cr_rise_ns,
                )
                .unwrap();
                let s = EchoedCrSchedule::new(p, None, 0.0).unwrap();
                SweepPoint {
                    amplitude: amp,
                    expectation: dev.exact_expectation(&s, ControlState::Zero, MeasBasis::Z),
                    std_err: 1e-9,
                }
            })
            .collect();
        let root = solve_amplitude_for_target(&points, theta.cos()).unwrap();
        assert!(
            (root - a).abs() < 1e-4,
            "interpolated root {root} vs closed form {a}"
        );
    }

    #[test]
    fn tiny_theta_needs_tiny_amplitude() {
        let dev = DeviceConfig::default_virtual();
        let grid = super::linspace(0.0, 0.95, 24);
        let (a, _) = calibrate_amplitude(&dev, 0.01, &grid, 20_000, 3).unwrap();
        assert!(a < 0.01, "A_theta = {a}");
    }

    #[test]
    fn unbracketed_target_reports_helpful_error() {
        let dev = DeviceConfig::default_virtual();
        let grid = super::linspace(0.0, 0.95, 24);
        // theta = 3.0 rad needs <Z> = -0.99, below the sweep's reach.
        let err = calibrate_amplitude(&dev, 3.0, &grid, 20_000, 3).unwrap_err();
        assert!(err.to_string().contains("not bracketed"), "got: {err}");
    }

    /// Noiseless pipeline driver: the same formulas run on exact
    /// expectation values instead of sampled counts.
    fn exact_coefficients(
        dev: &DeviceConfig,
        schedule: &EchoedCrSchedule,
        widths: &[f64],
    ) -> HamiltonianCoefficients {
        let data = exact_tomography(dev, schedule, widths, 1e-6).unwrap();
        extract_coefficients(&fit_bloch_trajectories(&data).unwrap())
    }

    #[test]
    fn branch_point_phase_is_disambiguated_by_closed_loop() {
        // A device whose hidden CR offset sits at the atan2 branch point:
        // the baseline run measures (c_zx, c_zy) ~ (-g, 0), the formula
        // returns -pi, and the shifted schedule must land on c_zx > 0.
        let mut dev = DeviceConfig::default_virtual();
        dev.phi_dev_cr = std::f64::consts::PI;
        let widths = tomography_width_grid(
            std::f64::consts::PI / 5.0,
            200.0,
            20.0,
            16,
            4.0 * std::f64::consts::PI,
        );
        let pulse = PulseParams::flat_top_gaussian(0.219, 0.0, 200.0, 20.0).unwrap();
        let schedule = EchoedCrSchedule::new(pulse, None, 0.0).unwrap();
        let baseline = exact_coefficients(&dev, &schedule, &widths);
        assert!(
            baseline.c_zx < 0.0,
            "branch setup: c_zx = {}",
            baseline.c_zx
        );

        let phi0 = calibrate_cr_phase(&baseline).unwrap();
        assert!(
            (phi0.abs() - std::f64::consts::PI).abs() < 1e-6,
            "phi0 = {phi0}"
        );
        let after = exact_coefficients(&dev, &schedule.shift_phase(phi0), &widths);
        assert!(after.c_zx > 0.0);
        assert!(after.c_zy.abs() < 1e-8, "c_zy = {}", after.c_zy);
    }

    #[test]
    fn half_pi_gate_angle_matches_on_clean_device() {
        // Without spurious terms the calibrated gate's rotation angle
        // (c_zx times the evolution time) matches theta to within shot
        // noise.
        let mut dev = DeviceConfig::default_virtual();
        dev.eps_ix = 0.0;
        dev.eps_iy = 0.0;
        dev.eps_iz = 0.0;
        dev.eps_zz = 0.0;
        let theta = std::f64::consts::FRAC_PI_2;
        let config = CalibrationConfig::with_seed(17);
        let run = run_full_calibration(&dev, theta, &config).unwrap();

        let schedule = run.gate.to_schedule().unwrap();
        let h = dev.effective_hamiltonian(&schedule);
        let angle = h.c_zx * dev.evolution_time_us(&schedule);
        assert!(
            (angle - theta).abs() / theta < 0.01,
            "gate angle {angle} vs theta {theta}"
        );
        // <Z(A_theta)> targets cos(pi/2) = 0.
        let z = dev.exact_expectation(&schedule, ControlState::Zero, MeasBasis::Z);
        assert!(z.abs() < 0.03, "<Z> = {z}");
    }

    #[test]
    fn amplitude_target_is_cos_theta() {
        // The worked example angle: cos(pi/5) is the golden-ratio value.
        let theta = std::f64::consts::PI / 5.0;
        assert!((theta.cos() - 0.8090169943749475).abs() < 1e-15);
    }

    #[test]
    fn noiseless_phase_shift_nulls_zy_exactly() {
        let dev = DeviceConfig::default_virtual();
        let widths = tomography_width_grid(
            std::f64::consts::PI / 5.0,
            200.0,
            20.0,
            16,
            4.0 * std::f64::consts::PI,
        );
        let pulse = PulseParams::flat_top_gaussian(0.219, 0.0, 200.0, 20.0).unwrap();
        let schedule = EchoedCrSchedule::new(pulse, None, 0.0).unwrap();
        let baseline = exact_coefficients(&dev, &schedule, &widths);
        let phi0 = calibrate_cr_phase(&baseline).unwrap();

        let shifted = schedule.shift_phase(phi0);
        let after = exact_coefficients(&dev, &shifted, &widths);
        assert!(after.c_zy.abs() < 1e-10, "c_zy = {}", after.c_zy);
        assert!(after.c_zx > 0.0);
    }

    #[test]
    fn noiseless_cancellation_is_exact() {
        let dev = DeviceConfig::default_virtual();
        let theta = std::f64::consts::PI / 5.0;
        let widths = tomography_width_grid(theta, 200.0, 20.0, 16, 4.0 * std::f64::consts::PI);
        let amplitude = 0.219;
        let cr = PulseParams::flat_top_gaussian(amplitude, 0.0, 200.0, 20.0).unwrap();
        let baseline_schedule = EchoedCrSchedule::new(cr, None, 0.0).unwrap();
        let baseline = exact_coefficients(&dev, &baseline_schedule, &widths);

        let phi0 = calibrate_cr_phase(&baseline).unwrap();
        let cancel = calibrate_cancellation_phase(&baseline, phi0);
        assert!(cancel.needed);

        let a0 = 0.02;
        let probe_tone =
            PulseParams::flat_top_gaussian(a0, cancel.phase - phi0, 200.0, 20.0).unwrap();
        let probe_schedule = EchoedCrSchedule::new(cr, Some(probe_tone), 0.0).unwrap();
        let probe = exact_coefficients(&dev, &probe_schedule, &widths);
        let amps = calibrate_cancellation_amplitude(&baseline, &probe, a0).unwrap();

        // The device's tone response is linear, so both extrapolations
        // agree and the applied tone nulls the spurious vector.
        assert!(amps.relative_disagreement < 1e-8, "{:?}", amps);
        let tone =
            PulseParams::flat_top_gaussian(amps.a_c, cancel.phase - phi0, 200.0, 20.0).unwrap();
        let final_schedule = EchoedCrSchedule::new(cr, Some(tone), 0.0)
            .unwrap()
            .shift_phase(phi0);
        let h = dev.effective_hamiltonian(&final_schedule);
        assert!(
            h.c_ix.hypot(h.c_iy) < 1e-10,
            "residual spurious field ({}, {})",
            h.c_ix,
            h.c_iy
        );
        assert!(h.c_zy.abs() < 1e-10);
    }

    #[test]
    fn full_calibration_closed_loop_passes_dominance() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig::with_seed(424242);
        let run = run_full_calibration(&dev, std::f64::consts::PI / 5.0, &config).unwrap();

        assert!(run.verification.summary.passed);
        let c = &run.verification.summary.gate.coefficients;
        for (label, value) in [("c_zy", c.c_zy), ("c_ix", c.c_ix), ("c_iy", c.c_iy)] {
            assert!(
                value.abs() / c.c_zx.abs() < 0.02,
                "{label} ratio {} too large",
                value.abs() / c.c_zx.abs()
            );
        }
        assert!(run.gate.provenance.tomography_experiments <= 4);
        assert_eq!(run.gate.provenance.tomography_experiments, 4);
    }

    #[test]
    fn full_calibration_is_deterministic() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig {
            sweep_shots: 4000,
            tomography_shots: 4000,
            ..CalibrationConfig::with_seed(7)
        };
        let a = run_full_calibration(&dev, 0.9, &config).unwrap();
        let b = run_full_calibration(&dev, 0.9, &config).unwrap();
        assert_eq!(a.gate, b.gate);
        assert_eq!(a.sweep, b.sweep);
        assert_eq!(a.verification.summary, b.verification.summary);
    }

    #[test]
    fn gate_json_round_trips() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig {
            sweep_shots: 4000,
            tomography_shots: 4000,
            ..CalibrationConfig::with_seed(7)
        };
        let run = run_full_calibration(&dev, 0.9, &config).unwrap();
        let json = run.gate.to_json();
        let back = CalibratedGate::from_json(&json).unwrap();
        assert_eq!(run.gate, back);
    }

    #[test]
    fn misset_phase_fails_verification() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig::with_seed(99);
        let run = run_full_calibration(&dev, std::f64::consts::PI / 5.0, &config).unwrap();

        let mut bad_gate = run.gate.clone();
        bad_gate.cr_phase += 0.3;
        let report = verify_calibration(
            &dev,
            &bad_gate,
            20_000,
            derive_seed(1234, &[]),
            &VerifyOptions::default(),
        )
        .unwrap();
        // The device gives |c_zy / c_zx| = |tan 0.3| ~= 0.31 for the
        // misset gate.
        assert!(
            report.summary.dominance_ratio > 0.02,
            "ratio = {}",
            report.summary.dominance_ratio
        );
        assert!(!report.summary.passed);
        assert!((report.summary.dominance_ratio - 0.309).abs() < 0.05);
    }

    #[test]
    fn gate_and_inverse_magnitudes_agree() {
        let dev = DeviceConfig::default_virtual();
        let config = CalibrationConfig::with_seed(31);
        let run = run_full_calibration(&dev, std::f64::consts::PI / 5.0, &config).unwrap();
        let sigmas = run
            .verification
            .summary
            .max_magnitude_discrepancy_sigmas
            .unwrap();
        assert!(sigmas < 5.0, "gate vs inverse discrepancy {sigmas} sigma");
    }
}
