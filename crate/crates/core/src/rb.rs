//! Interleaved randomized benchmarking.
//!
//! Random Clifford sequences of increasing length are closed with their
//! exact inverse element, so each sequence is logically the identity. The
//! interleaved variants insert the pair AB(θ)AB(−θ) after every Clifford;
//! the pair is an exact identity, so the same inversion element stays
//! correct and the pair contributes noise only. Populations decay toward
//! the fully mixed state at 0.25; the per-Clifford survival λ is fitted
//! with the asymptote fixed, and the interleaved gate quality is
//! `F = sqrt(λ_int / λ_ref)`.

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::clifford::CliffordGroup;
use crate::device::{depolarizing_survival, mitigate_readout, two_qubit_confusion, DeviceConfig};
use crate::error::Error;
use crate::exec::{derive_seed, map_indexed, STAGE_RB};
use crate::fit::{levenberg_marquardt, LevMarOptions};
use crate::Result;

type C64 = Complex64;

/// Fixed decay asymptote: the fully mixed two-qubit state has ground-state
/// population 1/4.
pub const DECAY_ASYMPTOTE: f64 = 0.25;

/// Benchmarking campaign parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbConfig {
    /// Shortest sequence length.
    pub m1: u32,
    /// Increment between sequence lengths.
    pub delta: u32,
    /// Longest sequence length.
    pub n_max: u32,
    /// Random sequences per length.
    pub n_seeds: u32,
    /// Shots per sequence.
    pub shots: u64,
    /// CR pulses per gate in the pulse-level implementation.
    pub interleave_pulses_custom: u32,
    /// CR pulses per gate in the circuit-level implementation.
    pub interleave_pulses_standard: u32,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            m1: 5,
            delta: 7,
            n_max: 68,
            n_seeds: 10,
            shots: 20_000,
            interleave_pulses_custom: 2,
            interleave_pulses_standard: 4,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m1 < 1 {
            return Err(Error::validation("m1", "must be at least 1"));
        }
        if self.delta < 1 {
            return Err(Error::validation("delta", "must be at least 1"));
        }
        if self.n_max < self.m1 {
            return Err(Error::validation("n_max", "must be at least m1"));
        }
        if self.n_seeds < 1 {
            return Err(Error::validation("n_seeds", "must be at least 1"));
        }
        if self.shots < 1 {
            return Err(Error::validation("shots", "must be at least 1"));
        }
        Ok(())
    }

    /// Sequence lengths `{m1, m1 + delta, ...} <= n_max`.
    pub fn sequence_lengths(&self) -> Vec<u32> {
        (0..)
            .map(|k| self.m1 + k * self.delta)
            .take_while(|&m| m <= self.n_max)
            .collect()
    }
}

/// Which of the three campaigns a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RbVariant {
    Reference,
    StandardInterleaved,
    CustomInterleaved,
}

impl RbVariant {
    pub const ALL: [RbVariant; 3] = [
        RbVariant::Reference,
        RbVariant::StandardInterleaved,
        RbVariant::CustomInterleaved,
    ];

    fn id(&self) -> u64 {
        match self {
            RbVariant::Reference => 0,
            RbVariant::StandardInterleaved => 1,
            RbVariant::CustomInterleaved => 2,
        }
    }

    /// CR pulses per interleaved gate, or None for the reference.
    pub fn pulses_per_gate(&self, cfg: &RbConfig) -> Option<u32> {
        match self {
            RbVariant::Reference => None,
            RbVariant::StandardInterleaved => Some(cfg.interleave_pulses_standard),
            RbVariant::CustomInterleaved => Some(cfg.interleave_pulses_custom),
        }
    }
}

impl std::fmt::Display for RbVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RbVariant::Reference => write!(f, "reference"),
            RbVariant::StandardInterleaved => write!(f, "standard_interleaved"),
            RbVariant::CustomInterleaved => write!(f, "custom_interleaved"),
        }
    }
}

/// The interleaved unit after every Clifford: the pair AB(θ)AB(−θ),
/// logically an exact identity carrying `2 * pulses_per_gate` CR pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedPair {
    pub pulses_per_gate: u32,
}

/// One RB sequence: `m` Cliffords closed by the exact inversion element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrbSequence {
    pub m: u32,
    pub seed_index: u32,
    /// Element indices of C₁ ... C_m.
    pub cliffords: Vec<u32>,
    /// Element index of the inversion Clifford.
    pub inversion: u32,
    pub interleave: Option<InterleavedPair>,
}

/// Builds the paired sequences of one variant.
///
/// Per seed index, the Clifford stream C₁ ... C_N is drawn once from the
/// master seed; every length is a prefix of it, and all variants share the
/// identical draws (the interleaved pair is an identity, so the reference
/// inversion element remains correct).
pub fn build_irb_sequences(
    cfg: &RbConfig,
    group: &CliffordGroup,
    master_seed: u64,
    variant: RbVariant,
) -> Result<Vec<IrbSequence>> {
    cfg.validate()?;
    let lengths = cfg.sequence_lengths();
    let interleave = variant
        .pulses_per_gate(cfg)
        .map(|pulses_per_gate| InterleavedPair { pulses_per_gate });

    let mut sequences = Vec::with_capacity(lengths.len() * cfg.n_seeds as usize);
    for seed_index in 0..cfg.n_seeds {
        // Draw seed is variant-independent: paired design.
        let draw_seed = derive_seed(master_seed, &[STAGE_RB, seed_index as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let stream: Vec<u32> = (0..cfg.n_max).map(|_| group.sample(&mut rng)).collect();

        let mut accumulated = group.identity();
        let mut prefix_inversions = Vec::with_capacity(cfg.n_max as usize);
        for &c in &stream {
            accumulated = group.compose(accumulated, c);
            prefix_inversions.push(group.invert(accumulated));
        }

        for &m in &lengths {
            sequences.push(IrbSequence {
                m,
                seed_index,
                cliffords: stream[..m as usize].to_vec(),
                inversion: prefix_inversions[m as usize - 1],
                interleave,
            });
        }
    }
    Ok(sequences)
}

/// Two-qubit depolarizing contraction: scales the traceless part of the
/// density matrix by `survival`, preserving the identity component.
fn contract(rho: &mut Matrix4<C64>, survival: f64) {
    let quarter_trace = rho.trace() / C64::new(4.0, 0.0);
    let id = Matrix4::<C64>::identity();
    *rho = (*rho - id * quarter_trace) * C64::new(survival, 0.0) + id * quarter_trace;
}

/// Exact final ground-state population of a sequence before sampling and
/// readout: density-matrix propagation through the ideal unitaries with
/// the depolarizing contractions applied in place.
pub fn simulate_sequence_exact(
    dev: &DeviceConfig,
    group: &CliffordGroup,
    seq: &IrbSequence,
) -> f64 {
    let mut rho = Matrix4::<C64>::zeros();
    rho[(0, 0)] = C64::new(1.0, 0.0);

    let clifford_survival = 1.0 - dev.p_depol_per_clifford;
    let pair_survival = seq
        .interleave
        .map(|pair| depolarizing_survival(dev.p_depol_per_cr_pulse, 2 * pair.pulses_per_gate));

    for &c in &seq.cliffords {
        let u = group.unitary(c);
        rho = u * rho * u.adjoint();
        contract(&mut rho, clifford_survival);
        if let Some(s) = pair_survival {
            // The interleaved pair is an exact identity; only its noise
            // factor acts on the state.
            contract(&mut rho, s);
        }
    }
    let u = group.unitary(seq.inversion);
    rho = u * rho * u.adjoint();
    contract(&mut rho, clifford_survival);

    rho[(0, 0)].re
}

/// Runs one sequence on the device: exact propagation, two-qubit readout
/// corruption, multinomial sampling, and mitigation. Returns the mitigated
/// ground-state population estimate.
pub fn simulate_sequence(
    dev: &DeviceConfig,
    group: &CliffordGroup,
    seq: &IrbSequence,
    shots: u64,
    seed: u64,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::validation("shots", "must be at least 1"));
    }
    let mut rho = Matrix4::<C64>::zeros();
    rho[(0, 0)] = C64::new(1.0, 0.0);

    let clifford_survival = 1.0 - dev.p_depol_per_clifford;
    let pair_survival = seq
        .interleave
        .map(|pair| depolarizing_survival(dev.p_depol_per_cr_pulse, 2 * pair.pulses_per_gate));

    for &c in &seq.cliffords {
        let u = group.unitary(c);
        rho = u * rho * u.adjoint();
        contract(&mut rho, clifford_survival);
        if let Some(s) = pair_survival {
            contract(&mut rho, s);
        }
    }
    let u = group.unitary(seq.inversion);
    rho = u * rho * u.adjoint();
    contract(&mut rho, clifford_survival);

    let true_probs: Vec<f64> = (0..4).map(|k| rho[(k, k)].re.clamp(0.0, 1.0)).collect();
    let confusion = two_qubit_confusion(
        &dev.readout_confusion_control,
        &dev.readout_confusion_target,
    );
    let mut observed = vec![0.0; 4];
    for (i, &p) in true_probs.iter().enumerate() {
        for j in 0..4 {
            observed[j] += p * confusion[(i, j)];
        }
    }
    let total: f64 = observed.iter().sum();
    for o in &mut observed {
        *o /= total;
    }

    let counts = sample_multinomial(&observed, shots, seed)?;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / shots as f64).collect();
    let mitigated = mitigate_readout(&frequencies, &confusion)?;
    Ok(mitigated[0])
}

/// Multinomial draw by conditional binomials, deterministic per seed.
fn sample_multinomial(probs: &[f64], shots: u64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; probs.len()];
    let mut remaining_shots = shots;
    let mut remaining_prob = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if k + 1 == probs.len() || remaining_prob <= 0.0 {
            counts[k] = remaining_shots;
            break;
        }
        let conditional = (p / remaining_prob).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining_shots, conditional)
            .map_err(|e| Error::Numeric(format!("binomial: {e}")))?
            .sample(&mut rng);
        counts[k] = draw;
        remaining_shots -= draw;
        remaining_prob -= p;
        if remaining_shots == 0 {
            break;
        }
    }
    Ok(counts)
}

/// Measured decay curve of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCurve {
    pub variant: RbVariant,
    pub points: Vec<RbCurvePoint>,
}

/// Per-length statistics over the random sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCurvePoint {
    pub m: u32,
    /// Mitigated ground-state populations, one per seed index.
    pub populations: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    /// Standard error of the mean, floored to keep weights finite.
    pub std_err: f64,
}

impl RbCurve {
    pub fn decay_points(&self) -> Vec<(u32, f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.m, p.mean, p.std_err))
            .collect()
    }

    /// CSV rows `variant,m,mean,std_dev,std_err`.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.variant,
                p.m,
                crate::tomography::fmt9(p.mean),
                crate::tomography::fmt9(p.std_dev),
                crate::tomography::fmt9(p.std_err),
            ));
        }
        out
    }
}

/// Runs the full curve of one variant: all lengths, all seed indices.
/// Cells execute independently with derived seeds.
pub fn run_rb_curve(
    dev: &DeviceConfig,
    group: &CliffordGroup,
    cfg: &RbConfig,
    master_seed: u64,
    variant: RbVariant,
) -> Result<RbCurve> {
    let sequences = build_irb_sequences(cfg, group, master_seed, variant)?;
    let populations: Vec<Result<f64>> = map_indexed(sequences.len(), |idx| {
        let seq = &sequences[idx];
        let shot_seed = derive_seed(
            master_seed,
            &[STAGE_RB, variant.id(), seq.m as u64, seq.seed_index as u64],
        );
        simulate_sequence(dev, group, seq, cfg.shots, shot_seed)
    });

    let lengths = cfg.sequence_lengths();
    let mut by_length: Vec<Vec<f64>> =
        vec![Vec::with_capacity(cfg.n_seeds as usize); lengths.len()];
    for (seq, pop) in sequences.iter().zip(populations) {
        let li = lengths.iter().position(|&m| m == seq.m).unwrap();
        by_length[li].push(pop?);
    }

    let points = lengths
        .iter()
        .zip(by_length)
        .map(|(&m, populations)| {
            let n = populations.len() as f64;
            let mean = populations.iter().sum::<f64>() / n;
            let variance =
                populations.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let std_dev = variance.sqrt();
            let std_err = (std_dev / n.sqrt()).max(1e-4);
            RbCurvePoint {
                m,
                populations,
                mean,
                std_dev,
                std_err,
            }
        })
        .collect();

    Ok(RbCurve { variant, points })
}

/// Fitted decay `P(m) = a λ^m + 0.25` with the asymptote fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub lambda: f64,
    /// Fixed, not fitted.
    pub asymptote: f64,
    pub stderr_lambda: f64,
    pub chi2_per_dof: f64,
}

/// Weighted least squares of the decay curve over `(a, λ)`, initialized by
/// log-linear regression on `p - 0.25`.
pub fn fit_decay(points: &[(u32, f64, f64)]) -> Result<DecayFit> {
    if points.len() < 4 {
        return Err(Error::validation(
            "decay points",
            format!("{} points, need at least 4", points.len()),
        ));
    }
    for &(_, p, _) in points {
        if !(-0.05..=1.05).contains(&p) {
            return Err(Error::validation(
                "decay points",
                format!("population {p} outside [0, 1]"),
            ));
        }
    }
    let has_signal = points
        .iter()
        .any(|&(_, p, se)| p - DECAY_ASYMPTOTE > 2.0 * se.max(1e-6));
    if !has_signal {
        return Err(Error::NoDecaySignal);
    }

    // Log-linear initialization on the shifted populations.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut n = 0.0;
    for &(m, p, _) in points {
        let shifted = p - DECAY_ASYMPTOTE;
        if shifted > 1e-6 {
            let x = m as f64;
            let y = shifted.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            n += 1.0;
        }
    }
    let (a0, lambda0) = if n >= 2.0 && n * sxx - sx * sx > 0.0 {
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        (
            intercept.exp().clamp(1e-3, 1.0),
            slope.exp().clamp(0.01, 1.0),
        )
    } else {
        (0.75, 0.99)
    };

    let eval = |params: &[f64]| {
        let (a, lambda) = (params[0], params[1]);
        let mut res = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len());
        for &(m, p, se) in points {
            let se = se.max(1e-6);
            let lm = lambda.powi(m as i32);
            res.push((a * lm + DECAY_ASYMPTOTE - p) / se);
            let dlm = if m == 0 {
                0.0
            } else {
                a * m as f64 * lambda.powi(m as i32 - 1)
            };
            jac.push(vec![lm / se, dlm / se]);
        }
        (res, jac)
    };

    let fit = levenberg_marquardt(eval, &[a0, lambda0], &LevMarOptions::default())?;
    Ok(DecayFit {
        amplitude: fit.params[0],
        lambda: fit.params[1],
        asymptote: DECAY_ASYMPTOTE,
        stderr_lambda: fit.covariance[(1, 1)].max(0.0).sqrt(),
        chi2_per_dof: fit.chi2_per_dof(),
    })
}

/// Interleaved-gate quality factor extracted from a reference and an
/// interleaved decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    /// `sqrt(λ_int / λ_ref)`, clamped to at most 1.
    pub f: f64,
    pub std_err: f64,
    /// Set when the raw ratio exceeded 1 and was clamped.
    pub clamped: bool,
}

/// `F = sqrt(λ_int / λ_ref)` with error propagated from both fits.
pub fn interleaved_fidelity(
    reference: &DecayFit,
    interleaved: &DecayFit,
) -> Result<FidelityEstimate> {
    if reference.lambda <= 0.0 {
        return Err(Error::validation(
            "reference.lambda",
            format!("{} must be positive", reference.lambda),
        ));
    }
    let ratio = interleaved.lambda / reference.lambda;
    let raw = ratio.max(0.0).sqrt();
    let f = raw.min(1.0);
    let rel_int = interleaved.stderr_lambda / interleaved.lambda.abs().max(1e-12);
    let rel_ref = reference.stderr_lambda / reference.lambda;
    let std_err = 0.5 * raw * (rel_int * rel_int + rel_ref * rel_ref).sqrt();
    Ok(FidelityEstimate {
        f,
        std_err,
        clamped: raw > 1.0,
    })
}

/// Summary of the three campaigns for one gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateBenchmark {
    pub gate: String,
    pub lambda_reference: DecayFit,
    pub lambda_standard: DecayFit,
    pub lambda_custom: DecayFit,
    pub f_standard: FidelityEstimate,
    pub f_custom: FidelityEstimate,
}

/// Runs reference, standard-interleaved, and custom-interleaved campaigns
/// for one gate label and extracts both quality factors.
pub fn benchmark_gate(
    dev: &DeviceConfig,
    group: &CliffordGroup,
    cfg: &RbConfig,
    master_seed: u64,
    gate: &str,
) -> Result<(GateBenchmark, Vec<RbCurve>)> {
    let gate_seed = derive_seed(master_seed, &[STAGE_RB, gate_tag(gate)]);
    let mut curves = Vec::with_capacity(3);
    for variant in RbVariant::ALL {
        curves.push(run_rb_curve(dev, group, cfg, gate_seed, variant)?);
    }
    let fit_of = |variant: RbVariant| -> Result<DecayFit> {
        let curve = curves.iter().find(|c| c.variant == variant).unwrap();
        fit_decay(&curve.decay_points())
    };
    let lambda_reference = fit_of(RbVariant::Reference)?;
    let lambda_standard = fit_of(RbVariant::StandardInterleaved)?;
    let lambda_custom = fit_of(RbVariant::CustomInterleaved)?;
    let summary = GateBenchmark {
        gate: gate.to_string(),
        lambda_reference,
        lambda_standard,
        lambda_custom,
        f_standard: interleaved_fidelity(&lambda_reference, &lambda_standard)?,
        f_custom: interleaved_fidelity(&lambda_reference, &lambda_custom)?,
    };
    Ok((summary, curves))
}

fn gate_tag(gate: &str) -> u64 {
    gate.bytes().fold(0xcbf2_9ce4_8422_2325u64, |acc, b| {
        (acc ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}
