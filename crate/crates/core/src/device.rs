//! Virtual two-qubit device with hidden parameters.
//!
//! The device maps an echoed CR schedule to an effective interaction
//! Hamiltonian, evolves the target-qubit Bloch vector exactly, and produces
//! shot-sampled, readout-corrupted measurement counts. It also models
//! per-CR-pulse depolarizing noise for benchmarking. The hidden couplings
//! are the ground truth that calibration and tomography must recover.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pulse::EchoedCrSchedule;
use crate::Result;

/// Schema version accepted by [`DeviceConfig::from_json`].
pub const DEVICE_SCHEMA_VERSION: u32 = 1;

/// A 2x2 row-stochastic readout confusion matrix:
/// `m[true_state][observed_state]`.
pub type Confusion2 = [[f64; 2]; 2];

/// Qubit frequencies and pulse defaults carried alongside the hidden
/// couplings. Only `cr_width_ns`, `cr_rise_ns`, and
/// `nominal_cancel_amplitude` feed back into the pipeline; the rest is
/// descriptive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceMetadata {
    /// Control-qubit resonance frequency in GHz.
    pub f_control_ghz: f64,
    /// Control-qubit anharmonicity in GHz.
    pub anharmonicity_control_ghz: f64,
    /// Target-qubit resonance frequency in GHz.
    pub f_target_ghz: f64,
    /// Target-qubit anharmonicity in GHz.
    pub anharmonicity_target_ghz: f64,
    /// Inherited CR flat-top width in ns.
    pub cr_width_ns: f64,
    /// Inherited CR Gaussian rise in ns.
    pub cr_rise_ns: f64,
    /// Nominal cancellation-tone amplitude scale of the inherited pulse;
    /// the calibration probe amplitude defaults to half of it.
    pub nominal_cancel_amplitude: f64,
}

/// Hidden ground truth of the virtual device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    /// Config schema version; must equal [`DEVICE_SCHEMA_VERSION`].
    pub schema_version: u32,
    /// Hidden frame offset of the CR drive in rad; ground truth for the
    /// calibrated pulse phase.
    pub phi_dev_cr: f64,
    /// Hidden frame offset of the CR-induced crosstalk on the target in
    /// rad; ground truth for the cancellation-phase relation.
    pub phi_dev_cancel: f64,
    /// Linear ZX coupling in rad/us per unit amplitude.
    pub g1: f64,
    /// Cubic saturation term in rad/us per unit amplitude cubed.
    pub g3: f64,
    /// Crosstalk strength into the X quadrature, rad/us per unit amplitude.
    /// Equal `eps_ix`/`eps_iy` make the crosstalk a rotating vector, which
    /// the phase-based cancellation nulls exactly.
    pub eps_ix: f64,
    /// Crosstalk strength into the Y quadrature, rad/us per unit amplitude.
    pub eps_iy: f64,
    /// Residual 1Z term surviving the echo, rad/us per unit amplitude.
    pub eps_iz: f64,
    /// Residual ZZ term surviving the echo, rad/us per unit amplitude.
    pub eps_zz: f64,
    /// Cancellation-tone coupling in rad/us per unit tone amplitude.
    pub kappa_c: f64,
    /// Readout confusion matrix of the control qubit.
    pub readout_confusion_control: Confusion2,
    /// Readout confusion matrix of the target qubit.
    pub readout_confusion_target: Confusion2,
    /// Depolarizing strength per CR pulse, applied in benchmarking.
    pub p_depol_per_cr_pulse: f64,
    /// Depolarizing strength per Clifford in benchmarking, so the
    /// reference curve also decays.
    pub p_depol_per_clifford: f64,
    /// Duration of a single-qubit pulse in ns (schedule metadata only).
    pub sq_pulse_ns: f64,
    /// Frequencies and inherited pulse defaults.
    pub metadata: DeviceMetadata,
}

fn validate_confusion(name: &'static str, m: &Confusion2) -> Result<()> {
    for (i, row) in m.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                name,
                format!("row {i} sums to {sum}, expected 1"),
            ));
        }
        for &p in row {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(name, format!("entry {p} outside [0, 1]")));
            }
        }
    }
    Ok(())
}

impl DeviceConfig {
    /// The default ground-truth config shipped as `device_default.json`.
    pub fn default_virtual() -> Self {
        DeviceConfig {
            schema_version: DEVICE_SCHEMA_VERSION,
            phi_dev_cr: 0.37,
            phi_dev_cancel: -0.81,
            g1: 6.0,
            g3: -2.0,
            eps_ix: 0.40,
            eps_iy: 0.40,
            eps_iz: 0.08,
            eps_zz: 0.08,
            kappa_c: 3.0,
            readout_confusion_control: [[0.985, 0.015], [0.04, 0.96]],
            readout_confusion_target: [[0.98, 0.02], [0.05, 0.95]],
            p_depol_per_cr_pulse: 0.006,
            p_depol_per_clifford: 0.002,
            sq_pulse_ns: 35.6,
            metadata: DeviceMetadata {
                f_control_ghz: 4.962,
                anharmonicity_control_ghz: -0.344,
                f_target_ghz: 5.046,
                anharmonicity_target_ghz: -0.343,
                cr_width_ns: 200.0,
                cr_rise_ns: 20.0,
                nominal_cancel_amplitude: 0.06,
            },
        }
    }

    /// Parses and validates a device config from JSON. Unknown fields and
    /// schema-version mismatches are rejected.
    pub fn from_json(json: &str) -> Result<Self> {
        let config: DeviceConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks the invariants of the hidden parameters.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DEVICE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {})",
                self.schema_version, DEVICE_SCHEMA_VERSION
            )));
        }
        if self.g1.is_nan() || self.g1 <= 0.0 {
            return Err(Error::validation("g1", format!("{} must be > 0", self.g1)));
        }
        for (name, p) in [
            ("p_depol_per_cr_pulse", self.p_depol_per_cr_pulse),
            ("p_depol_per_clifford", self.p_depol_per_clifford),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::validation(name, format!("{p} outside [0, 1)")));
            }
        }
        validate_confusion("readout_confusion_control", &self.readout_confusion_control)?;
        validate_confusion("readout_confusion_target", &self.readout_confusion_target)?;
        Ok(())
    }

    /// Amplitude-to-coupling map of the ZX interaction, rad/us.
    pub fn coupling(&self, amplitude: f64) -> f64 {
        self.g1 * amplitude + self.g3 * amplitude.powi(3)
    }

    /// Effective interaction Hamiltonian induced by a schedule.
    ///
    /// With `A` the CR amplitude, `phi` the total CR phase, and
    /// `g(A) = g1 A + g3 A^3`:
    ///
    /// ```text
    /// c_zx = g(A) cos(phi - phi_dev_cr)
    /// c_zy = g(A) sin(phi - phi_dev_cr)
    /// c_ix = eps_ix A cos(phi - phi_dev_cancel) - kappa_c A_c cos(phi_c)
    /// c_iy = eps_iy A sin(phi - phi_dev_cancel) - kappa_c A_c sin(phi_c)
    /// c_iz = eps_iz A
    /// c_zz = eps_zz A
    /// ```
    ///
    /// The cancellation tone couples opposite to its programmed phase
    /// `phi_c`, so a tone at the calibrated phase opposes the crosstalk
    /// vector. Deterministic; no randomness.
    pub fn effective_hamiltonian(&self, schedule: &EchoedCrSchedule) -> EffectiveHamiltonian {
        let a = schedule.cr_pulse.amplitude;
        let phi = schedule.cr_total_phase();
        let g = self.coupling(a);

        let mut c_ix = self.eps_ix * a * (phi - self.phi_dev_cancel).cos();
        let mut c_iy = self.eps_iy * a * (phi - self.phi_dev_cancel).sin();
        if let Some(cancel) = &schedule.cancellation {
            let phi_c = schedule.cancel_total_phase().unwrap();
            c_ix -= self.kappa_c * cancel.amplitude * phi_c.cos();
            c_iy -= self.kappa_c * cancel.amplitude * phi_c.sin();
        }

        EffectiveHamiltonian {
            c_zx: g * (phi - self.phi_dev_cr).cos(),
            c_zy: g * (phi - self.phi_dev_cr).sin(),
            c_zz: self.eps_zz * a,
            c_ix,
            c_iy,
            c_iz: self.eps_iz * a,
        }
    }

    /// Evolution time of the schedule in us, from the integrated CR drive
    /// area over both echo segments.
    pub fn evolution_time_us(&self, schedule: &EchoedCrSchedule) -> f64 {
        schedule.cr_drive_area() / 1000.0
    }

    /// Analytic expectation value of the given Pauli on the target qubit
    /// after the schedule, with the control prepared in `control`.
    pub fn exact_expectation(
        &self,
        schedule: &EchoedCrSchedule,
        control: ControlState,
        basis: MeasBasis,
    ) -> f64 {
        let h = self.effective_hamiltonian(schedule);
        let t = self.evolution_time_us(schedule);
        let r = evolve_bloch(&h, control, t, BlochVector::GROUND);
        match basis {
            MeasBasis::X => r.x,
            MeasBasis::Y => r.y,
            MeasBasis::Z => r.z,
        }
    }

    /// Samples shot counts for one measurement cell.
    ///
    /// Computes the exact expectation, converts to an excited-state
    /// probability, corrupts it with the target-qubit confusion matrix, and
    /// draws binomial counts. Deterministic for a fixed seed.
    pub fn sample_measurement(
        &self,
        schedule: &EchoedCrSchedule,
        control: ControlState,
        basis: MeasBasis,
        shots: u64,
        seed: u64,
    ) -> Result<MeasurementCounts> {
        if shots == 0 {
            return Err(Error::validation("shots", "must be at least 1"));
        }
        let expectation = self.exact_expectation(schedule, control, basis);
        let p1_true = ((1.0 - expectation) / 2.0).clamp(0.0, 1.0);
        let c = &self.readout_confusion_target;
        let p1_observed = ((1.0 - p1_true) * c[0][1] + p1_true * c[1][1]).clamp(0.0, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Binomial::new(shots, p1_observed)
            .map_err(|e| Error::Numeric(format!("binomial: {e}")))?
            .sample(&mut rng);
        Ok(MeasurementCounts { n0: shots - n1, n1 })
    }
}

/// Which computational state the control qubit is prepared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlState {
    Zero,
    One,
}

impl ControlState {
    pub const BOTH: [ControlState; 2] = [ControlState::Zero, ControlState::One];

    /// Sign of the Z-conditioned terms: +1 for |0>, -1 for |1>.
    pub fn sign(&self) -> f64 {
        match self {
            ControlState::Zero => 1.0,
            ControlState::One => -1.0,
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ControlState::Zero => 0,
            ControlState::One => 1,
        }
    }
}

impl std::fmt::Display for ControlState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Measurement basis on the target qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasBasis {
    X,
    Y,
    Z,
}

impl MeasBasis {
    pub const ALL: [MeasBasis; 3] = [MeasBasis::X, MeasBasis::Y, MeasBasis::Z];

    pub fn index(&self) -> usize {
        match self {
            MeasBasis::X => 0,
            MeasBasis::Y => 1,
            MeasBasis::Z => 2,
        }
    }
}

impl std::fmt::Display for MeasBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasBasis::X => write!(f, "X"),
            MeasBasis::Y => write!(f, "Y"),
            MeasBasis::Z => write!(f, "Z"),
        }
    }
}

/// Pauli coefficients of the effective interaction Hamiltonian, in rad/us.
/// These are Bloch precession rates: the target precesses about
/// `omega(control)` at angular frequency equal to the field norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonian {
    pub c_zx: f64,
    pub c_zy: f64,
    pub c_zz: f64,
    pub c_ix: f64,
    pub c_iy: f64,
    pub c_iz: f64,
}

impl EffectiveHamiltonian {
    /// Precession field seen by the target for the given control state:
    /// `(c_ix ± c_zx, c_iy ± c_zy, c_iz ± c_zz)`.
    pub fn precession_field(&self, control: ControlState) -> [f64; 3] {
        let s = control.sign();
        [
            self.c_ix + s * self.c_zx,
            self.c_iy + s * self.c_zy,
            self.c_iz + s * self.c_zz,
        ]
    }
}

/// Bloch vector of the target qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    /// The |0> state.
    pub const GROUND: BlochVector = BlochVector {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn component(&self, basis: MeasBasis) -> f64 {
        match basis {
            MeasBasis::X => self.x,
            MeasBasis::Y => self.y,
            MeasBasis::Z => self.z,
        }
    }
}

/// Rotates `r0` about the control-conditioned precession field by angle
/// `|omega| * t` (Rodrigues' formula). Exactly norm-preserving.
pub fn evolve_bloch(
    h: &EffectiveHamiltonian,
    control: ControlState,
    t: f64,
    r0: BlochVector,
) -> BlochVector {
    let omega = h.precession_field(control);
    rotate_about(&omega, t, r0)
}

/// Rodrigues rotation of `r0` about the axis of `omega` by `|omega| * t`.
pub(crate) fn rotate_about(omega: &[f64; 3], t: f64, r0: BlochVector) -> BlochVector {
    let w = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    let angle = w * t;
    if angle == 0.0 {
        return r0;
    }
    let n = [omega[0] / w, omega[1] / w, omega[2] / w];
    let r = [r0.x, r0.y, r0.z];
    let (sin_a, cos_a) = angle.sin_cos();
    let n_cross_r = [
        n[1] * r[2] - n[2] * r[1],
        n[2] * r[0] - n[0] * r[2],
        n[0] * r[1] - n[1] * r[0],
    ];
    let n_dot_r = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
    BlochVector {
        x: r[0] * cos_a + n_cross_r[0] * sin_a + n[0] * n_dot_r * (1.0 - cos_a),
        y: r[1] * cos_a + n_cross_r[1] * sin_a + n[1] * n_dot_r * (1.0 - cos_a),
        z: r[2] * cos_a + n_cross_r[2] * sin_a + n[2] * n_dot_r * (1.0 - cos_a),
    }
}

/// Shot counts of a single measurement cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementCounts {
    pub n0: u64,
    pub n1: u64,
}

impl MeasurementCounts {
    pub fn shots(&self) -> u64 {
        self.n0 + self.n1
    }

    /// Observed excited-state fraction.
    pub fn p1(&self) -> f64 {
        self.n1 as f64 / self.shots() as f64
    }
}

/// Applies inverse-confusion readout mitigation to an observed probability
/// vector, then clips to `[0, 1]` and renormalizes.
///
/// `confusion` is row-stochastic with `confusion[i][j] = P(observe j |
/// true i)`; the observed vector satisfies `observed = confusion^T * true`.
/// The clipping step makes the estimate biased near the boundary of the
/// simplex, which is acceptable for the moderate error rates modeled here.
pub fn mitigate_readout(observed: &[f64], confusion: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = observed.len();
    if confusion.nrows() != n || confusion.ncols() != n {
        return Err(Error::validation(
            "confusion",
            format!(
                "{}x{} matrix for {n}-outcome vector",
                confusion.nrows(),
                confusion.ncols()
            ),
        ));
    }
    let total: f64 = observed.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::validation(
            "observed",
            format!("entries sum to {total}, expected 1"),
        ));
    }

    let transpose = confusion.transpose();
    let svd = transpose.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if s_min <= s_max * 1e-12 {
        return Err(Error::Numeric(format!(
            "confusion matrix is singular (condition number {:.3e})",
            if s_min > 0.0 {
                s_max / s_min
            } else {
                f64::INFINITY
            }
        )));
    }

    let rhs = DMatrix::from_column_slice(n, 1, observed);
    let solved = transpose
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("confusion inversion failed".into()))?;

    let mut out: Vec<f64> = solved.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    let sum: f64 = out.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Numeric("mitigated vector collapsed to zero".into()));
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Embeds a per-qubit 2x2 confusion matrix as a [`DMatrix`].
pub fn confusion_matrix(c: &Confusion2) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]])
}

/// Tensor product of the control and target confusion matrices in the
/// `|control, target>` basis ordering `00, 01, 10, 11`.
pub fn two_qubit_confusion(control: &Confusion2, target: &Confusion2) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4, 4);
    for ic in 0..2 {
        for it in 0..2 {
            for jc in 0..2 {
                for jt in 0..2 {
                    m[(ic * 2 + it, jc * 2 + jt)] = control[ic][jc] * target[it][jt];
                }
            }
        }
    }
    m
}

/// Two-qubit Bloch-contraction factor of `n_pulses` depolarizing
/// applications of strength `p`: `(1 - p)^n_pulses`.
pub fn depolarizing_survival(p: f64, n_pulses: u32) -> f64 {
    debug_assert!((0.0..1.0).contains(&p));
    (1.0 - p).powi(n_pulses as i32)
}
