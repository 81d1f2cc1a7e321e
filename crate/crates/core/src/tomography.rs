//! Hamiltonian tomography: width sweeps, Bloch-trajectory fitting, and
//! extraction of the six Pauli coefficients.
//!
//! A tomography experiment sweeps the flat-top width of the CR schedule,
//! measures the target in all three bases with the control prepared in |0>
//! and |1>, and fits the two precession fields. Half the difference of the
//! fields gives the Z-conditioned coefficients, half the sum the
//! control-independent ones.

use serde::{Deserialize, Serialize};

use crate::device::{confusion_matrix, mitigate_readout, ControlState, DeviceConfig, MeasBasis};
use crate::error::Error;
use crate::exec::{derive_seed, map_indexed};
use crate::fit::{levenberg_marquardt, FitResult, LevMarOptions};
use crate::pulse::EchoedCrSchedule;
use crate::Result;

/// Below this total precession angle over the sweep, the field direction is
/// not identifiable and the fit is flagged degenerate.
pub const DEGENERATE_ANGLE_RAD: f64 = 0.2;

/// One measured cell of a tomography experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomographyPoint {
    /// Flat-top width in ns.
    pub width: f64,
    /// Evolution time in us derived from the schedule at this width.
    pub time_us: f64,
    /// Raw excited counts.
    pub n1: u64,
    /// Shots for this cell.
    pub shots: u64,
    /// Observed excited fraction before mitigation.
    pub p1_raw: f64,
    /// Readout-mitigated expectation value of the measured Pauli.
    pub expectation: f64,
    /// Standard error of the mitigated expectation.
    pub std_err: f64,
}

/// All width points of one (control state, basis) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographySeries {
    pub control: ControlState,
    pub basis: MeasBasis,
    pub points: Vec<TomographyPoint>,
}

/// Complete dataset of one tomography experiment: six series on an
/// identical width grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyData {
    pub widths: Vec<f64>,
    pub times_us: Vec<f64>,
    pub shots_per_point: u64,
    /// Six series in fixed (control, basis) order.
    pub series: Vec<TomographySeries>,
}

impl TomographyData {
    /// Series lookup by control state and basis.
    pub fn series_for(&self, control: ControlState, basis: MeasBasis) -> &TomographySeries {
        &self.series[control.index() * 3 + basis.index()]
    }

    /// CSV dump: one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("width_ns,control,basis,shots,n1,p1_raw,expectation,std_err\n");
        for series in &self.series {
            for p in &series.points {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    fmt9(p.width),
                    series.control,
                    series.basis,
                    p.shots,
                    p.n1,
                    fmt9(p.p1_raw),
                    fmt9(p.expectation),
                    fmt9(p.std_err),
                ));
            }
        }
        out
    }
}

/// Formats a float at 9 significant digits for diffable CSV output.
pub(crate) fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

fn validate_widths(widths: &[f64]) -> Result<()> {
    if widths.len() < 8 {
        return Err(Error::validation(
            "widths",
            format!(
                "{} points would leave the trajectory fit under-determined (need at least 8)",
                widths.len()
            ),
        ));
    }
    if widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("widths", "must be strictly increasing"));
    }
    if widths.iter().any(|&w| w < 0.0) {
        return Err(Error::validation("widths", "must be non-negative"));
    }
    Ok(())
}

/// Runs a tomography experiment on the virtual device.
///
/// For every width the schedule is rebuilt at that width and all six
/// (control, basis) cells are sampled with `shots` each. Cells execute
/// independently (in parallel under the `parallel` feature) and derive
/// their seeds from `seed` and the cell index, so results are identical to
/// sequential execution.
pub fn run_tomography(
    dev: &DeviceConfig,
    base: &EchoedCrSchedule,
    widths: &[f64],
    shots: u64,
    seed: u64,
) -> Result<TomographyData> {
    validate_widths(widths)?;
    if shots < 1000 {
        return Err(Error::validation(
            "shots",
            format!("{shots} below the minimum of 1000"),
        ));
    }

    let schedules: Vec<EchoedCrSchedule> = widths
        .iter()
        .map(|&w| base.with_width(w))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = schedules.iter().map(|s| dev.evolution_time_us(s)).collect();
    let confusion = confusion_matrix(&dev.readout_confusion_target);
    let mitigation_gain = expectation_mitigation_gain(&dev.readout_confusion_target);

    let n_cells = widths.len() * 6;
    let cells: Vec<Result<TomographyPoint>> = map_indexed(n_cells, |idx| {
        let w_idx = idx / 6;
        let control = ControlState::BOTH[(idx / 3) % 2];
        let basis = MeasBasis::ALL[idx % 3];
        let cell_seed = derive_seed(seed, &[idx as u64]);
        let counts = dev.sample_measurement(&schedules[w_idx], control, basis, shots, cell_seed)?;
        let p1_raw = counts.p1();
        let mitigated = mitigate_readout(&[1.0 - p1_raw, p1_raw], &confusion)?;
        let expectation = mitigated[0] - mitigated[1];
        let variance = (p1_raw * (1.0 - p1_raw)).max(0.25 / shots as f64) / shots as f64;
        let std_err = 2.0 * variance.sqrt() * mitigation_gain;
        Ok(TomographyPoint {
            width: widths[w_idx],
            time_us: times[w_idx],
            n1: counts.n1,
            shots,
            p1_raw,
            expectation,
            std_err,
        })
    });

    let mut series: Vec<TomographySeries> = ControlState::BOTH
        .iter()
        .flat_map(|&control| {
            MeasBasis::ALL.iter().map(move |&basis| TomographySeries {
                control,
                basis,
                points: Vec::with_capacity(widths.len()),
            })
        })
        .collect();
    for (idx, cell) in cells.into_iter().enumerate() {
        let series_idx = ((idx / 3) % 2) * 3 + idx % 3;
        series[series_idx].points.push(cell?);
    }

    Ok(TomographyData {
        widths: widths.to_vec(),
        times_us: times,
        shots_per_point: shots,
        series,
    })
}

/// Noise-free tomography dataset: exact expectation values with a uniform
/// nominal standard error. Useful for analytic studies and exactness tests.
pub fn exact_tomography(
    dev: &DeviceConfig,
    base: &EchoedCrSchedule,
    widths: &[f64],
    nominal_std_err: f64,
) -> Result<TomographyData> {
    validate_widths(widths)?;
    let schedules: Vec<EchoedCrSchedule> = widths
        .iter()
        .map(|&w| base.with_width(w))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = schedules.iter().map(|s| dev.evolution_time_us(s)).collect();

    let series = ControlState::BOTH
        .iter()
        .flat_map(|&control| {
            let schedules = &schedules;
            let times = &times;
            MeasBasis::ALL.iter().map(move |&basis| TomographySeries {
                control,
                basis,
                points: schedules
                    .iter()
                    .zip(times)
                    .map(|(s, &t)| {
                        let expectation = dev.exact_expectation(s, control, basis);
                        TomographyPoint {
                            width: s.cr_pulse.width,
                            time_us: t,
                            n1: 0,
                            shots: 0,
                            p1_raw: (1.0 - expectation) / 2.0,
                            expectation,
                            std_err: nominal_std_err,
                        }
                    })
                    .collect(),
            })
        })
        .collect();

    Ok(TomographyData {
        widths: widths.to_vec(),
        times_us: times,
        shots_per_point: 0,
        series,
    })
}

/// Error amplification of the mitigated expectation relative to the raw
/// excited fraction: `d<P>/dp1 = -2 / det(confusion)`.
fn expectation_mitigation_gain(c: &[[f64; 2]; 2]) -> f64 {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    1.0 / det.abs().max(1e-12)
}

/// Fitted precession fields for both control states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryFit {
    /// Field with control in |0>, rad/us.
    pub omega0: [f64; 3],
    /// Field with control in |1>, rad/us.
    pub omega1: [f64; 3],
    /// 3x3 covariance of `omega0` (row-major).
    pub cov0: [[f64; 3]; 3],
    /// 3x3 covariance of `omega1` (row-major).
    pub cov1: [[f64; 3]; 3],
    /// Weighted chi-squared per degree of freedom, both fits pooled.
    pub chi2_per_dof: f64,
    /// Set when the total precession angle over the sweep is too small to
    /// identify the field for that control state.
    pub degenerate: [bool; 2],
}

impl TrajectoryFit {
    pub fn omega(&self, control: ControlState) -> [f64; 3] {
        match control {
            ControlState::Zero => self.omega0,
            ControlState::One => self.omega1,
        }
    }
}

/// Fits the Rodrigues trajectory `r(t; omega)` from (0, 0, 1) against the
/// three measured series of each control state simultaneously.
pub fn fit_bloch_trajectories(data: &TomographyData) -> Result<TrajectoryFit> {
    let mut omegas = [[0.0; 3]; 2];
    let mut covs = [[[0.0; 3]; 3]; 2];
    let mut degenerate = [false; 2];
    let mut chi2 = 0.0;
    let mut dof = 0usize;

    for control in ControlState::BOTH {
        let cells = collect_cells(data, control);
        let seed_field = seed_field(&cells);
        let t_max = cells.iter().map(|c| c.t).fold(0.0, f64::max);
        let seed_norm = norm3(&seed_field);

        if seed_norm * t_max < DEGENERATE_ANGLE_RAD {
            degenerate[control.index()] = true;
            omegas[control.index()] = seed_field;
            covs[control.index()] = [[f64::INFINITY; 3]; 3];
            continue;
        }

        let eval = |p: &[f64]| trajectory_residuals(&cells, p);
        let fit: FitResult = levenberg_marquardt(eval, &seed_field, &LevMarOptions::default())?;
        omegas[control.index()] = [fit.params[0], fit.params[1], fit.params[2]];
        let mut cov = [[0.0; 3]; 3];
        for (i, row) in cov.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = fit.covariance[(i, j)];
            }
        }
        covs[control.index()] = cov;
        chi2 += fit.chi2;
        dof += fit.dof;
    }

    Ok(TrajectoryFit {
        omega0: omegas[0],
        omega1: omegas[1],
        cov0: covs[0],
        cov1: covs[1],
        chi2_per_dof: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
        degenerate,
    })
}

struct Cell {
    t: f64,
    basis: MeasBasis,
    y: f64,
    std_err: f64,
}

/// Gathers the three series of one control state into flat cells, sorted by
/// time so the fit does not depend on input ordering.
fn collect_cells(data: &TomographyData, control: ControlState) -> Vec<Cell> {
    let mut cells = Vec::new();
    for basis in MeasBasis::ALL {
        for p in &data.series_for(control, basis).points {
            cells.push(Cell {
                t: p.time_us,
                basis,
                y: p.expectation,
                std_err: p.std_err.max(1e-12),
            });
        }
    }
    cells.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.basis.index().cmp(&b.basis.index()))
    });
    cells
}

/// Initial field estimate: direction from a linear least-squares solve of
/// the discretized precession equation dr/dt = omega x r, magnitude from
/// the dominant DFT bin of the <Z> series.
fn seed_field(cells: &[Cell]) -> [f64; 3] {
    // Reassemble per-time Bloch vectors (X, Y, Z share the time grid).
    let mut times: Vec<f64> = cells.iter().map(|c| c.t).collect();
    times.dedup();
    let mut rs: Vec<[f64; 3]> = vec![[0.0; 3]; times.len()];
    for c in cells {
        let k = times.iter().position(|&t| t == c.t).unwrap();
        rs[k][c.basis.index()] = c.y;
    }

    // Linear LSQ: (r_{k+1} - r_k)/dt = omega x r_mid, 3 equations per
    // segment; normal equations are 3x3.
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for k in 0..times.len().saturating_sub(1) {
        let dt = times[k + 1] - times[k];
        if dt <= 0.0 {
            continue;
        }
        let mid = [
            0.5 * (rs[k][0] + rs[k + 1][0]),
            0.5 * (rs[k][1] + rs[k + 1][1]),
            0.5 * (rs[k][2] + rs[k + 1][2]),
        ];
        let dr = [
            (rs[k + 1][0] - rs[k][0]) / dt,
            (rs[k + 1][1] - rs[k][1]) / dt,
            (rs[k + 1][2] - rs[k][2]) / dt,
        ];
        // omega x mid = dr  =>  rows of the cross-product matrix.
        let rows = [
            [0.0, mid[2], -mid[1]],
            [-mid[2], 0.0, mid[0]],
            [mid[1], -mid[0], 0.0],
        ];
        for (row, &b) in rows.iter().zip(&dr) {
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * b;
            }
        }
    }
    let direction = solve3(&ata, &atb).unwrap_or([0.0; 3]);

    // Dominant-frequency magnitude from the <Z> series.
    let zs: Vec<f64> = rs.iter().map(|r| r[2]).collect();
    let omega_dft = dominant_angular_frequency(&times, &zs);

    let dir_norm = norm3(&direction);
    if dir_norm > 0.0 && omega_dft > 0.0 {
        let s = omega_dft / dir_norm;
        [direction[0] * s, direction[1] * s, direction[2] * s]
    } else {
        direction
    }
}

/// Dominant angular frequency of a uniformly sampled series by direct DFT
/// magnitude scan (the grids here are small).
fn dominant_angular_frequency(times: &[f64], values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return 0.0;
    }
    let span = times[n - 1] - times[0];
    if span <= 0.0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut best = (0usize, 0.0f64);
    for j in 1..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in values.iter().enumerate() {
            let ang = std::f64::consts::TAU * j as f64 * k as f64 / n as f64;
            re += (v - mean) * ang.cos();
            im -= (v - mean) * ang.sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (j, mag);
        }
    }
    // Bin j corresponds to j cycles over the n-sample span.
    std::f64::consts::TAU * best.0 as f64 / (span * n as f64 / (n - 1) as f64)
}

fn trajectory_residuals(cells: &[Cell], omega: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let w = [omega[0], omega[1], omega[2]];
    let mut residuals = Vec::with_capacity(cells.len());
    let mut jacobian = Vec::with_capacity(cells.len());
    for cell in cells {
        let (r, dr) = rodrigues_with_jacobian(&w, cell.t);
        let b = cell.basis.index();
        residuals.push((r[b] - cell.y) / cell.std_err);
        jacobian.push(vec![
            dr[0][b] / cell.std_err,
            dr[1][b] / cell.std_err,
            dr[2][b] / cell.std_err,
        ]);
    }
    (residuals, jacobian)
}

/// Rodrigues rotation of (0,0,1) about `omega` for time `t`, with the
/// analytic derivative with respect to each field component.
/// Returns `(r, dr)` where `dr[i]` is the derivative w.r.t. `omega[i]`.
fn rodrigues_with_jacobian(omega: &[f64; 3], t: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let r0 = [0.0, 0.0, 1.0];
    let w = norm3(omega);
    let angle = w * t;

    if angle.abs() < 1e-9 {
        // Linearized regime: r = r0 + t (omega x r0).
        let r = [
            r0[0] + t * (omega[1] * r0[2] - omega[2] * r0[1]),
            r0[1] + t * (omega[2] * r0[0] - omega[0] * r0[2]),
            r0[2] + t * (omega[0] * r0[1] - omega[1] * r0[0]),
        ];
        let dr = [
            [0.0, -t, 0.0], // d/dw_x (e_x x r0) = t * (0, -1, 0) for r0 = z
            [t, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ];
        return (r, dr);
    }

    let n = [omega[0] / w, omega[1] / w, omega[2] / w];
    let (sin_a, cos_a) = angle.sin_cos();
    let n_cross_r0 = [n[1], -n[0], 0.0]; // n x (0,0,1)
    let n_dot_r0 = n[2];

    let r = [
        r0[0] * cos_a + n_cross_r0[0] * sin_a + n[0] * n_dot_r0 * (1.0 - cos_a),
        r0[1] * cos_a + n_cross_r0[1] * sin_a + n[1] * n_dot_r0 * (1.0 - cos_a),
        r0[2] * cos_a + n_cross_r0[2] * sin_a + n[2] * n_dot_r0 * (1.0 - cos_a),
    ];

    let mut dr = [[0.0; 3]; 3];
    for i in 0..3 {
        let e_i = [
            (i == 0) as u8 as f64,
            (i == 1) as u8 as f64,
            (i == 2) as u8 as f64,
        ];
        // dn/dw_i = (e_i - n_i n) / w;  dalpha/dw_i = t n_i.
        let dn = [
            (e_i[0] - n[i] * n[0]) / w,
            (e_i[1] - n[i] * n[1]) / w,
            (e_i[2] - n[i] * n[2]) / w,
        ];
        let da = t * n[i];
        let dn_cross_r0 = [dn[1], -dn[0], 0.0];
        let dn_dot_r0 = dn[2];
        for k in 0..3 {
            dr[i][k] = -sin_a * da * r0[k]
                + cos_a * da * n_cross_r0[k]
                + sin_a * dn_cross_r0[k]
                + sin_a * da * n_dot_r0 * n[k]
                + (1.0 - cos_a) * (dn_dot_r0 * n[k] + n_dot_r0 * dn[k]);
        }
    }
    (r, dr)
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Solves a symmetric 3x3 system by Gaussian elimination with pivoting.
#[allow(clippy::needless_range_loop)] // forward elimination reads two rows at once
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [
        [a[0][0], a[0][1], a[0][2], b[0]],
        [a[1][0], a[1][1], a[1][2], b[1]],
        [a[2][0], a[2][1], a[2][2], b[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut s = m[col][3];
        for k in col + 1..3 {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

/// Pauli coefficients extracted from a trajectory fit, with linearized
/// covariance in the order (c_zx, c_zy, c_zz, c_ix, c_iy, c_iz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianCoefficients {
    pub c_zx: f64,
    pub c_zy: f64,
    pub c_zz: f64,
    pub c_ix: f64,
    pub c_iy: f64,
    pub c_iz: f64,
    pub covariance: [[f64; 6]; 6],
    pub chi2_per_dof: f64,
}

impl HamiltonianCoefficients {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.c_zx, self.c_zy, self.c_zz, self.c_ix, self.c_iy, self.c_iz,
        ]
    }

    /// Standard error of the i-th coefficient in `as_array` order.
    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[i][i].max(0.0).sqrt()
    }

    /// Largest non-ZX coefficient magnitude relative to |c_zx|.
    pub fn dominance_ratio(&self) -> f64 {
        let others = [
            self.c_zy.abs(),
            self.c_zz.abs(),
            self.c_ix.abs(),
            self.c_iy.abs(),
            self.c_iz.abs(),
        ];
        others.into_iter().fold(0.0, f64::max) / self.c_zx.abs()
    }
}

/// Inverts the field construction: `c_z = (omega0 - omega1) / 2`,
/// `c_i = (omega0 + omega1) / 2`, with covariance propagated linearly.
pub fn extract_coefficients(fit: &TrajectoryFit) -> HamiltonianCoefficients {
    let half_diff = |i: usize| (fit.omega0[i] - fit.omega1[i]) / 2.0;
    let half_sum = |i: usize| (fit.omega0[i] + fit.omega1[i]) / 2.0;

    // Block covariance: Cov(c_z) = Cov(c_i) = (V0 + V1)/4,
    // Cov(c_z, c_i) = (V0 - V1)/4.
    let mut cov = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            let sum = (fit.cov0[i][j] + fit.cov1[i][j]) / 4.0;
            let diff = (fit.cov0[i][j] - fit.cov1[i][j]) / 4.0;
            cov[i][j] = sum;
            cov[i + 3][j + 3] = sum;
            cov[i][j + 3] = diff;
            cov[i + 3][j] = diff;
        }
    }

    HamiltonianCoefficients {
        c_zx: half_diff(0),
        c_zy: half_diff(1),
        c_zz: half_diff(2),
        c_ix: half_sum(0),
        c_iy: half_sum(1),
        c_iz: half_sum(2),
        covariance: cov,
        chi2_per_dof: fit.chi2_per_dof,
    }
}

/// Report emitted alongside the coefficient JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub label: String,
    pub coefficients: HamiltonianCoefficients,
    pub std_errs: [f64; 6],
}

impl CoefficientReport {
    pub fn new(label: impl Into<String>, coefficients: &HamiltonianCoefficients) -> Self {
        let std_errs = std::array::from_fn(|i| coefficients.std_err(i));
        CoefficientReport {
            label: label.into(),
            coefficients: coefficients.clone(),
            std_errs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{rotate_about, BlochVector};
    use crate::pulse::PulseParams;

    fn base_schedule(amplitude: f64) -> EchoedCrSchedule {
        let cr = PulseParams::flat_top_gaussian(amplitude, 0.0, 200.0, 20.0).unwrap();
        EchoedCrSchedule::new(cr, None, 0.0).unwrap()
    }

    fn width_grid(n: usize, max: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * max / (n - 1) as f64).collect()
    }

    #[test]
    fn too_few_widths_are_rejected() {
        let dev = DeviceConfig::default_virtual();
        let err =
            run_tomography(&dev, &base_schedule(0.3), &width_grid(5, 1000.0), 2000, 1).unwrap_err();
        assert!(err.to_string().contains("under-determined"), "got: {err}");
    }

    #[test]
    fn zero_amplitude_gives_flat_series() {
        let dev = DeviceConfig::default_virtual();
        let data =
            run_tomography(&dev, &base_schedule(0.0), &width_grid(8, 2000.0), 20_000, 3).unwrap();
        for control in ControlState::BOTH {
            for p in &data.series_for(control, MeasBasis::Z).points {
                assert!(p.expectation > 0.98, "Z = {}", p.expectation);
            }
            for basis in [MeasBasis::X, MeasBasis::Y] {
                for p in &data.series_for(control, basis).points {
                    assert!(p.expectation.abs() < 0.05, "{basis} = {}", p.expectation);
                }
            }
        }
    }

    #[test]
    fn tomography_is_deterministic() {
        let dev = DeviceConfig::default_virtual();
        let widths = width_grid(8, 3000.0);
        let a = run_tomography(&dev, &base_schedule(0.3), &widths, 2000, 17).unwrap();
        let b = run_tomography(&dev, &base_schedule(0.3), &widths, 2000, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let omegas = [
            [2.0, -0.4, 0.7],
            [0.3, 0.0, 0.0],
            [-1.0, 2.0, -3.0],
            [0.01, 0.02, -0.005],
        ];
        for omega in omegas {
            for t in [0.2, 1.5, 4.0] {
                let (_, dr) = rodrigues_with_jacobian(&omega, t);
                for i in 0..3 {
                    let h = 1e-6;
                    let mut wp = omega;
                    wp[i] += h;
                    let mut wm = omega;
                    wm[i] -= h;
                    let (rp, _) = rodrigues_with_jacobian(&wp, t);
                    let (rm, _) = rodrigues_with_jacobian(&wm, t);
                    for k in 0..3 {
                        let fd = (rp[k] - rm[k]) / (2.0 * h);
                        assert!(
                            (dr[i][k] - fd).abs() < 1e-6,
                            "omega {omega:?} t {t} d[{i}][{k}]: analytic {} vs fd {}",
                            dr[i][k],
                            fd
                        );
                    }
                }
            }
        }
    }

    /// Builds a noiseless synthetic dataset directly from a known field.
    fn synthetic_data(omega0: [f64; 3], omega1: [f64; 3], se: f64) -> TomographyData {
        let times: Vec<f64> = (0..16).map(|k| 0.1 + 0.35 * k as f64).collect();
        let widths: Vec<f64> = (0..16).map(|k| k as f64).collect();
        let series = ControlState::BOTH
            .iter()
            .flat_map(|&control| {
                let omega = if control == ControlState::Zero {
                    omega0
                } else {
                    omega1
                };
                let times = times.clone();
                let widths = widths.clone();
                MeasBasis::ALL.iter().map(move |&basis| TomographySeries {
                    control,
                    basis,
                    points: times
                        .iter()
                        .zip(&widths)
                        .map(|(&t, &w)| {
                            let r = rotate_about(&omega, t, BlochVector::GROUND);
                            TomographyPoint {
                                width: w,
                                time_us: t,
                                n1: 0,
                                shots: 0,
                                p1_raw: 0.0,
                                expectation: r.component(basis),
                                std_err: se,
                            }
                        })
                        .collect(),
                })
            })
            .collect();
        TomographyData {
            widths,
            times_us: times,
            shots_per_point: 0,
            series,
        }
    }

    #[test]
    fn noiseless_roundtrip_recovers_field() {
        let omega = [2.0, 0.0, 0.5];
        let data = synthetic_data(omega, [-2.0, 0.0, 0.5], 1e-3);
        let fit = fit_bloch_trajectories(&data).unwrap();
        for (i, want) in omega.iter().enumerate() {
            assert!(
                (fit.omega0[i] - want).abs() < 1e-6,
                "omega0[{i}] = {} vs {want}",
                fit.omega0[i]
            );
        }
        assert!(!fit.degenerate[0] && !fit.degenerate[1]);
        assert!(fit.chi2_per_dof < 1e-10);
    }

    #[test]
    fn flat_data_is_flagged_degenerate() {
        let data = synthetic_data([0.0, 0.0, 0.01], [0.0, 0.0, 0.01], 1e-3);
        let fit = fit_bloch_trajectories(&data).unwrap();
        assert!(fit.degenerate[0] && fit.degenerate[1]);
    }

    #[test]
    fn fit_is_invariant_under_point_reordering() {
        let data = synthetic_data([1.5, -0.8, 0.3], [-1.2, 0.9, 0.3], 1e-3);
        let mut shuffled = data.clone();
        for series in &mut shuffled.series {
            series.points.reverse();
            series.points.rotate_left(5);
        }
        let a = fit_bloch_trajectories(&data).unwrap();
        let b = fit_bloch_trajectories(&shuffled).unwrap();
        for i in 0..3 {
            assert!((a.omega0[i] - b.omega0[i]).abs() < 1e-12);
            assert!((a.omega1[i] - b.omega1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn control_states_show_distinct_frequencies() {
        // With crosstalk present the |0> and |1> fields differ in norm.
        let dev = DeviceConfig::default_virtual();
        let data = run_tomography(
            &dev,
            &base_schedule(0.25),
            &width_grid(16, 4800.0),
            20_000,
            5,
        )
        .unwrap();
        let fit = fit_bloch_trajectories(&data).unwrap();
        let n0 = norm3(&fit.omega0);
        let n1 = norm3(&fit.omega1);
        assert!(
            (n0 - n1).abs() > 0.02,
            "expected distinct precession rates, got {n0} vs {n1}"
        );
    }

    #[test]
    fn extraction_examples() {
        let fit = TrajectoryFit {
            omega0: [3.0, 0.0, 0.0],
            omega1: [-3.0, 0.0, 0.0],
            cov0: [[0.0; 3]; 3],
            cov1: [[0.0; 3]; 3],
            chi2_per_dof: 0.0,
            degenerate: [false; 2],
        };
        let c = extract_coefficients(&fit);
        assert_eq!(c.c_zx, 3.0);
        assert_eq!(c.c_ix, 0.0);
        assert_eq!(c.c_zy, 0.0);

        let fit = TrajectoryFit {
            omega0: [1.0, 1.0, 1.0],
            omega1: [1.0, 1.0, 1.0],
            cov0: [[0.0; 3]; 3],
            cov1: [[0.0; 3]; 3],
            chi2_per_dof: 0.0,
            degenerate: [false; 2],
        };
        let c = extract_coefficients(&fit);
        assert_eq!([c.c_zx, c.c_zy, c.c_zz], [0.0, 0.0, 0.0]);
        assert_eq!([c.c_ix, c.c_iy, c.c_iz], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn extraction_inverts_field_construction_exactly() {
        use crate::device::EffectiveHamiltonian;
        let h = EffectiveHamiltonian {
            c_zx: 1.3,
            c_zy: -0.2,
            c_zz: 0.08,
            c_ix: 0.05,
            c_iy: 0.07,
            c_iz: 0.02,
        };
        let fit = TrajectoryFit {
            omega0: h.precession_field(ControlState::Zero),
            omega1: h.precession_field(ControlState::One),
            cov0: [[0.0; 3]; 3],
            cov1: [[0.0; 3]; 3],
            chi2_per_dof: 0.0,
            degenerate: [false; 2],
        };
        let c = extract_coefficients(&fit);
        let expected = [h.c_zx, h.c_zy, h.c_zz, h.c_ix, h.c_iy, h.c_iz];
        for (got, want) in c.as_array().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_loop_recovers_device_hamiltonian() {
        let dev = DeviceConfig::default_virtual();
        let schedule = base_schedule(0.25);
        let data = run_tomography(&dev, &schedule, &width_grid(16, 4800.0), 20_000, 11).unwrap();
        let fit = fit_bloch_trajectories(&data).unwrap();
        let c = extract_coefficients(&fit);
        let truth = dev.effective_hamiltonian(&schedule);
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
        assert!(
            rel(c.c_zx.hypot(c.c_zy), truth.c_zx.hypot(truth.c_zy)) < 0.02,
            "dominant coefficient off: fit ({}, {}), truth ({}, {})",
            c.c_zx,
            c.c_zy,
            truth.c_zx,
            truth.c_zy
        );
    }

    #[test]
    fn covariance_shrinks_with_shots() {
        let dev = DeviceConfig::default_virtual();
        let widths = width_grid(16, 4800.0);
        let lo = run_tomography(&dev, &base_schedule(0.25), &widths, 10_000, 23).unwrap();
        let hi = run_tomography(&dev, &base_schedule(0.25), &widths, 40_000, 23).unwrap();
        let var = |d: &TomographyData| {
            let fit = fit_bloch_trajectories(d).unwrap();
            fit.cov0[0][0] + fit.cov0[1][1] + fit.cov0[2][2]
        };
        assert!(
            var(&hi) < var(&lo),
            "variance did not shrink: {} vs {}",
            var(&hi),
            var(&lo)
        );
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let dev = DeviceConfig::default_virtual();
        let data =
            run_tomography(&dev, &base_schedule(0.2), &width_grid(8, 2000.0), 2000, 9).unwrap();
        let csv = data.to_csv();
        assert_eq!(csv.lines().count(), 1 + 8 * 6);
        assert!(csv.starts_with("width_ns,control,basis,"));
    }
}
