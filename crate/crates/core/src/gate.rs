//! Bell-state preparation around a controlled-phase gate and the fidelity
//! metrics derived from it.
//!
//! The circuit prepares `(|0⟩−|1⟩)⊗(|0⟩−|1⟩)/2`, runs the pulse sequence,
//! applies `R_φ ⊗ R_φ` with `R_φ = diag(1, e^{−iφ})` and finally a Hadamard
//! on the second qubit. The compensation phase φ is calibrated once from a
//! noiseless unitary run and then held fixed for decay-only and Monte-Carlo
//! runs.

use crate::atom::{collapse_operators_sparse, pair_index, single_atom_hamiltonian, AtomModel, ExcitationKind, Level, DIM, N_LEVELS};
use crate::dynamics::{
    propagate_gksl, propagate_unitary, propagator, propagator_columns, DenseHamiltonian, GateHamiltonian, IntegratorConfig,
    Trajectory,
};
use crate::linalg::{ComplexMatrix, DensityMatrix, StateVector, C64, ONE, ZERO};
use crate::noise::{run_monte_carlo, McSummary, NoiseRealization, NoiseToggles};
use crate::pulse::{sequence_phases, PulseSchedule, Segment, SegmentOrder, Waveform};
use crate::units::{wrap_2pi, wrap_pi};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// 25-dim indices of `|00⟩, |01⟩, |10⟩, |11⟩`.
pub const QUBIT_INDICES: [usize; 4] = [0, 1, 5, 6];

/// Computational basis populations below this make a phase unreadable.
const PHASE_FLOOR: f64 = 1e-6;

/// Bell state `|β_ij⟩ = (|0j⟩ + (−1)^i |1 j̄⟩)/√2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BellTarget {
    pub i: u8,
    pub j: u8,
}

impl BellTarget {
    pub const B00: Self = Self { i: 0, j: 0 };
    pub const B01: Self = Self { i: 0, j: 1 };

    pub fn new(i: u8, j: u8) -> Result<Self> {
        if i > 1 || j > 1 {
            return Err(Error::InvalidParameter(format!("Bell index ({i},{j}) outside {{0,1}}²")));
        }
        Ok(Self { i, j })
    }

    /// Positions in the 4-dim qubit block of the two populated basis states.
    pub fn support(&self) -> (usize, usize) {
        let first = self.j as usize;
        (first, 3 - first)
    }

    pub fn vector(&self) -> StateVector {
        let (a, b) = self.support();
        let mut v = vec![ZERO; 4];
        v[a] = C64::new(FRAC_1_SQRT_2, 0.0);
        v[b] = C64::new(if self.i == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 }, 0.0);
        StateVector::new(v).expect("finite amplitudes")
    }

    pub fn label(&self) -> String {
        format!("beta{}{}", self.i, self.j)
    }

    /// Value of φ₁₀ for the ideal gate that prepares this target: π for
    /// `CZ_π` (targets with j = 0), 0 for `CZ`.
    pub fn nominal_phase(&self) -> f64 {
        if self.j == 0 {
            PI
        } else {
            0.0
        }
    }
}

/// `(|0⟩−|1⟩)⊗(|0⟩−|1⟩)/2` embedded in the 25-dim two-atom space.
pub fn initial_state() -> StateVector {
    let mut a = vec![ZERO; DIM];
    for (k, &idx) in QUBIT_INDICES.iter().enumerate() {
        let sign = if k == 1 || k == 2 { -0.5 } else { 0.5 };
        a[idx] = C64::new(sign, 0.0);
    }
    StateVector::new(a).expect("finite amplitudes")
}

/// `(𝟙 ⊗ H)(R_φ ⊗ R_φ)` on the qubit block.
pub fn frame_correction(phi: f64) -> ComplexMatrix {
    let e = C64::from_polar(1.0, -phi);
    let r = [ONE, e, e, e * e];
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let h = [[s, s], [s, -s]];
    ComplexMatrix::from_fn(4, 4, |row, col| {
        let (a, b) = (row / 2, row % 2);
        let (c, d) = (col / 2, col % 2);
        if a == c {
            h[b][d] * r[col]
        } else {
            ZERO
        }
    })
}

fn qubit_amplitudes(psi: &StateVector) -> Result<StateVector> {
    if psi.dim() != DIM {
        return Err(Error::Dimension(format!("expected a {DIM}-dim state, got {}", psi.dim())));
    }
    StateVector::new(QUBIT_INDICES.iter().map(|&i| psi.amplitudes()[i]).collect())
}

/// Final qubit-block density matrix after the frame correction. Population
/// outside the qubit block is dropped, so the trace measures the retained
/// population.
pub fn finalize_state(rho: &DensityMatrix, phi: f64) -> Result<DensityMatrix> {
    if rho.dim() != DIM {
        return Err(Error::Dimension(format!("expected a {DIM}-dim density matrix, got {}", rho.dim())));
    }
    let block = ComplexMatrix::from_fn(4, 4, |a, b| rho.matrix()[(QUBIT_INDICES[a], QUBIT_INDICES[b])]);
    let u = frame_correction(phi);
    DensityMatrix::new_unchecked(u.matmul(&block)?.matmul(&u.adjoint())?)
}

/// Pure-state counterpart of [`finalize_state`] (not renormalized).
pub fn finalize_pure(psi: &StateVector, phi: f64) -> Result<StateVector> {
    frame_correction(phi).apply(&qubit_amplitudes(psi)?)
}

/// `(ρ_aa + ρ_bb)/2 + |ρ_ab|` over the two basis states supporting `target`.
pub fn fidelity_against(rho_f: &DensityMatrix, target: BellTarget) -> Result<f64> {
    if rho_f.dim() != 4 {
        return Err(Error::Dimension(format!("fidelity expects a 4-dim qubit block, got {}", rho_f.dim())));
    }
    let (a, b) = target.support();
    let m = rho_f.matrix();
    Ok(0.5 * (m[(a, a)].re + m[(b, b)].re) + m[(b, a)].norm())
}

/// Bell fidelity against `|β₀₁⟩`.
pub fn fidelity(rho_f: &DensityMatrix) -> Result<f64> {
    fidelity_against(rho_f, BellTarget::B01)
}

/// Fidelity of a finalized pure qubit state: the same formula as
/// [`fidelity_against`] applied to `|ψ⟩⟨ψ|`.
pub fn intrinsic_fidelity(psi_f: &StateVector, target: BellTarget) -> Result<f64> {
    if psi_f.dim() != 4 {
        return Err(Error::Dimension(format!("intrinsic fidelity expects a 4-dim state, got {}", psi_f.dim())));
    }
    let (a, b) = target.support();
    let (x, y) = (psi_f.amplitudes()[a], psi_f.amplitudes()[b]);
    Ok(0.5 * (x.norm_sqr() + y.norm_sqr()) + x.norm() * y.norm())
}

/// Gate phases relative to `|00⟩`: `φ_ij = arg(a_ij(T)/a_ij(0)) − arg(a₀₀(T)/a₀₀(0))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePhases {
    pub phi_01: f64,
    pub phi_10: f64,
    pub phi_11: f64,
}

impl GatePhases {
    pub fn from_states(psi0: &StateVector, psi_t: &StateVector) -> Result<Self> {
        let rel = |idx: usize| -> Result<f64> {
            let (a0, at) = (psi0.amplitudes()[idx], psi_t.amplitudes()[idx]);
            if a0.norm() < PHASE_FLOOR || at.norm() < PHASE_FLOOR {
                return Err(Error::PhaseUndefined(at.norm().min(a0.norm())));
            }
            Ok((at / a0).arg())
        };
        let base = rel(QUBIT_INDICES[0])?;
        Ok(Self {
            phi_01: wrap_2pi(rel(QUBIT_INDICES[1])? - base),
            phi_10: wrap_2pi(rel(QUBIT_INDICES[2])? - base),
            phi_11: wrap_2pi(rel(QUBIT_INDICES[3])? - base),
        })
    }

    /// `(φ₁₁ − 2φ₁₀) mod 2π`.
    pub fn relation(&self) -> f64 {
        wrap_2pi(self.phi_11 - 2.0 * self.phi_10)
    }

    /// Distance of the phase relation from π (controlled-phase condition).
    pub fn relation_error(&self) -> f64 {
        (self.relation() - PI).abs()
    }
}

/// Single-qubit compensation phase φ₁₀ read from a noiseless run.
pub fn extract_phi(psi0: &StateVector, psi_t: &StateVector) -> Result<f64> {
    Ok(GatePhases::from_states(psi0, psi_t)?.phi_10)
}

/// Pulse sequence and Bell target of a gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDesign {
    pub base: Waveform,
    /// Phase of each consecutive copy of `base`.
    pub phases: Vec<f64>,
    pub order: SegmentOrder,
    pub target: BellTarget,
}

impl GateDesign {
    /// Two identical adiabatic pulses. One-photon rapid passage yields `CZ_π`
    /// (target β₀₀); two-photon STIRAP yields `CZ` (target β₀₁).
    pub fn adiabatic(base: Waveform) -> Self {
        let target = match base.kind() {
            ExcitationKind::Dipole => BellTarget::B00,
            ExcitationKind::Quadrupole => BellTarget::B01,
        };
        Self { base, phases: vec![0.0, 0.0], order: SegmentOrder::Translated, target }
    }

    /// Four transitionless pulses with phases `0, φ_r, φ_R, φ_R + φ_r`.
    pub fn ctqd(base: Waveform, phi_r: f64, phi_big_r: f64, order: SegmentOrder) -> Self {
        Self { base, phases: sequence_phases(phi_r, phi_big_r).to_vec(), order, target: BellTarget::B01 }
    }

    pub fn schedule(&self) -> Result<PulseSchedule> {
        PulseSchedule::repeated(self.base, &self.phases, self.order)
    }

    pub fn gate_time(&self) -> f64 {
        self.base.duration() * self.phases.len() as f64
    }

    /// Same design with every pulse stretched so the gate lasts `gate_time`.
    pub fn with_gate_time(&self, gate_time: f64) -> Self {
        Self { base: self.base.with_duration(gate_time / self.phases.len() as f64), ..self.clone() }
    }

    pub fn kind(&self) -> ExcitationKind {
        self.base.kind()
    }
}

/// Per-level diagonal `D` with `H(φ) = D H(0) D†` for a segment phase φ.
/// The phase sits on `|1⟩⟨r|` (dipole) or `|1⟩⟨p|` (two-photon), so `|p⟩`
/// and `|r⟩` pick up `e^{−iφ}`.
fn phase_diagonal(phi: f64) -> [C64; DIM] {
    let e = C64::from_polar(1.0, -phi);
    let single = |l: usize| if l == Level::P.index() || l == Level::R.index() { e } else { ONE };
    std::array::from_fn(|k| single(k / 5) * single(k % 5))
}

/// Levels with no coupling and no energy: an atom parked there leaves the
/// other atom evolving on its own.
fn is_idle(model: &AtomModel, level: usize) -> bool {
    level == Level::Zero.index()
        || level == Level::G.index()
        || (model.excitation == ExcitationKind::Dipole && level == Level::P.index())
}

/// Two-atom propagator of a single-segment schedule. Columns where either
/// atom sits in an idle level factorize into a single-atom propagator of the
/// other atom; only the remaining columns need the two-atom integration.
fn pulse_propagator(
    model: &AtomModel,
    sched: &PulseSchedule,
    noise: &NoiseRealization,
    cfg: &IntegratorConfig,
) -> Result<ComplexMatrix> {
    let single = |atom: usize| -> Result<ComplexMatrix> {
        let h = DenseHamiltonian::new(N_LEVELS, vec![(0.0, sched.total_duration())], |_, t| {
            single_atom_hamiltonian(model, &sched.drive_in_segment(0, t)?, &noise.atoms[atom])
        });
        propagator(&h, cfg)
    };
    let (u1, u2) = (single(0)?, single(1)?);
    let driven: Vec<usize> =
        (0..DIM).filter(|&c| !is_idle(model, c / N_LEVELS) && !is_idle(model, c % N_LEVELS)).collect();
    let cols = propagator_columns(&GateHamiltonian::new(model, sched, noise)?, &driven, cfg)?;
    let mut u = ComplexMatrix::zeros(DIM, DIM);
    for c in 0..DIM {
        let (a, b) = (c / N_LEVELS, c % N_LEVELS);
        match (is_idle(model, a), is_idle(model, b)) {
            (true, true) => u[(c, c)] = ONE,
            (true, false) => (0..N_LEVELS).for_each(|j| u[(a * N_LEVELS + j, c)] = u2[(j, b)]),
            (false, true) => (0..N_LEVELS).for_each(|i| u[(i * N_LEVELS + b, c)] = u1[(i, a)]),
            (false, false) => {
                let k = driven.iter().position(|&d| d == c).expect("driven column");
                (0..DIM).for_each(|r| u[(r, c)] = cols[(r, k)]);
            }
        }
    }
    Ok(u)
}

/// Propagators of one pulse (and of its time reverse when mirrored
/// segments are used). Phase-shifted copies follow by diagonal conjugation.
#[derive(Clone, Debug)]
pub struct SegmentPropagators {
    forward: ComplexMatrix,
    mirrored: Option<ComplexMatrix>,
}

impl SegmentPropagators {
    pub fn compute(
        model: &AtomModel,
        base: &Waveform,
        order: SegmentOrder,
        noise: &NoiseRealization,
        cfg: &IntegratorConfig,
    ) -> Result<Self> {
        let one = |mirrored: bool| -> Result<ComplexMatrix> {
            let sched = PulseSchedule::new(vec![Segment { start: 0.0, waveform: *base, phase: 0.0, mirrored }])?;
            pulse_propagator(model, &sched, noise, cfg)
        };
        let forward = one(false)?;
        let mirrored = if order == SegmentOrder::Mirrored { Some(one(true)?) } else { None };
        Ok(Self { forward, mirrored })
    }

    /// Applies the phase-shifted sequence to `psi`.
    pub fn apply(&self, phases: &[f64], psi: &StateVector) -> Result<StateVector> {
        let mut x = psi.amplitudes().to_vec();
        let mut y = vec![ZERO; DIM];
        for (k, &phi) in phases.iter().enumerate() {
            let u = match (&self.mirrored, k % 2) {
                (Some(m), 1) => m,
                _ => &self.forward,
            };
            let d = phase_diagonal(phi);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi *= di.conj();
            }
            let us = u.as_slice();
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = us[i * DIM..(i + 1) * DIM].iter().zip(&x).map(|(a, b)| a * b).sum();
            }
            for ((xi, yi), di) in x.iter_mut().zip(&y).zip(&d) {
                *xi = yi * di;
            }
        }
        StateVector::new(x)
    }
}

/// Outcome of a noiseless unitary gate run.
#[derive(Clone, Debug)]
pub struct IntrinsicResult {
    pub f0: f64,
    pub phases: GatePhases,
    /// φ used in `R_φ`: φ₁₀ minus the target's nominal phase.
    pub phi_comp: f64,
    /// Return populations of `|11⟩, |10⟩, |01⟩` relative to their initial value.
    pub transfer: [f64; 3],
    pub final_state: StateVector,
}

impl IntrinsicResult {
    pub fn from_final_state(psi_t: StateVector, target: BellTarget) -> Result<Self> {
        let psi0 = initial_state();
        let phases = GatePhases::from_states(&psi0, &psi_t)?;
        let phi_comp = wrap_2pi(phases.phi_10 - target.nominal_phase());
        let f0 = intrinsic_fidelity(&finalize_pure(&psi_t, phi_comp)?, target)?;
        let ret = |k: usize| psi_t.amplitudes()[QUBIT_INDICES[k]].norm_sqr() / psi0.amplitudes()[QUBIT_INDICES[k]].norm_sqr();
        Ok(Self { f0, phases, phi_comp, transfer: [ret(3), ret(2), ret(1)], final_state: psi_t })
    }
}

/// Intrinsic run by direct propagation, optionally recording the trajectory.
pub fn intrinsic_trajectory(
    model: &AtomModel,
    design: &GateDesign,
    cfg: &IntegratorConfig,
) -> Result<(IntrinsicResult, Trajectory<StateVector>)> {
    let sched = design.schedule()?;
    let ham = GateHamiltonian::noiseless(model, &sched)?;
    let traj = propagate_unitary(&ham, &initial_state(), cfg)?;
    let res = IntrinsicResult::from_final_state(traj.final_state.clone(), design.target)?;
    Ok((res, traj))
}

/// Intrinsic run using one segment propagator and phase conjugation.
pub fn intrinsic(model: &AtomModel, design: &GateDesign, cfg: &IntegratorConfig) -> Result<IntrinsicResult> {
    let props = SegmentPropagators::compute(
        model,
        &design.base,
        design.order,
        &NoiseRealization::ideal(model.n_lasers()),
        &cfg.final_only(),
    )?;
    let psi_t = props.apply(&design.phases, &initial_state())?;
    IntrinsicResult::from_final_state(psi_t, design.target)
}

/// Time series of `φ₁₁ − 2φ₁₀` (wrapped to (−π, π]) along a recorded trajectory.
pub fn phase_relation_series(traj: &Trajectory<StateVector>) -> Vec<(f64, Option<f64>)> {
    let psi0 = initial_state();
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| (t, GatePhases::from_states(&psi0, s).ok().map(|p| wrap_pi(p.phi_11 - 2.0 * p.phi_10))))
        .collect()
}

/// Fidelity of one GKSL (or, without decay, unitary) run.
pub fn realistic_fidelity(
    model: &AtomModel,
    design: &GateDesign,
    noise: &NoiseRealization,
    decay: bool,
    phi_comp: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let sched = design.schedule()?;
    let ham = GateHamiltonian::new(model, &sched, noise)?;
    let cfg = cfg.final_only();
    if decay {
        let c = collapse_operators_sparse(model);
        let rho = propagate_gksl(&ham, &c, &DensityMatrix::from_pure(&initial_state()), &cfg)?.final_state;
        fidelity_against(&finalize_state(&rho, phi_comp)?, design.target)
    } else {
        let psi = propagate_unitary(&ham, &initial_state(), &cfg)?.final_state;
        intrinsic_fidelity(&finalize_pure(&psi, phi_comp)?, design.target)
    }
}

/// Which imperfections a realistic evaluation includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSettings {
    pub decay: bool,
    pub toggles: NoiseToggles,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self { decay: true, toggles: NoiseToggles::ALL }
    }
}

/// Monte-Carlo ensemble of realistic runs with a fixed compensation phase.
pub fn monte_carlo(
    model: &AtomModel,
    design: &GateDesign,
    settings: NoiseSettings,
    n_runs: usize,
    seed: u64,
    phi_comp: f64,
    cfg: &IntegratorConfig,
) -> Result<McSummary> {
    run_monte_carlo(model, settings.toggles, n_runs, seed, |noise| {
        realistic_fidelity(model, design, noise, settings.decay, phi_comp, cfg)
    })
}

/// Which evaluations [`evaluate`] performs beyond the intrinsic run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub decay_only: bool,
    pub monte_carlo: Option<MonteCarloPlan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloPlan {
    pub n_runs: usize,
    pub seed: u64,
    pub settings: NoiseSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub gate_time_us: f64,
    pub target: String,
    pub f0: f64,
    pub f_s: Option<f64>,
    pub f: Option<f64>,
    pub sigma_f: Option<f64>,
    pub n_runs: usize,
    pub seed: Option<u64>,
    pub phi_10: f64,
    pub phi_01: f64,
    pub phi_11: f64,
    /// `(φ₁₁ − 2φ₁₀) mod 2π`.
    pub phase_relation: f64,
    pub phi_comp: f64,
    pub transfer_11: f64,
    pub transfer_10: f64,
    pub transfer_01: f64,
    pub pulse_area: crate::optimize::PulseArea,
    #[serde(skip)]
    pub mc_fidelities: Vec<f64>,
}

pub fn evaluate(model: &AtomModel, design: &GateDesign, plan: &EvaluationPlan, cfg: &IntegratorConfig) -> Result<GateReport> {
    let intr = intrinsic(model, design, cfg)?;
    let f_s = if plan.decay_only {
        Some(realistic_fidelity(model, design, &NoiseRealization::ideal(model.n_lasers()), true, intr.phi_comp, cfg)?)
    } else {
        None
    };
    let mc = match plan.monte_carlo {
        Some(p) => Some(monte_carlo(model, design, p.settings, p.n_runs, p.seed, intr.phi_comp, cfg)?),
        None => None,
    };
    let area = crate::optimize::pulse_area(&design.schedule()?)?;
    Ok(GateReport {
        gate_time_us: design.gate_time(),
        target: design.target.label(),
        f0: intr.f0,
        f_s,
        f: mc.as_ref().map(|m| m.mean_f),
        sigma_f: mc.as_ref().map(|m| m.std_error),
        n_runs: mc.as_ref().map_or(0, |m| m.n_runs),
        seed: mc.as_ref().map(|m| m.seed),
        phi_10: intr.phases.phi_10,
        phi_01: intr.phases.phi_01,
        phi_11: intr.phases.phi_11,
        phase_relation: intr.phases.relation(),
        phi_comp: intr.phi_comp,
        transfer_11: intr.transfer[0],
        transfer_10: intr.transfer[1],
        transfer_01: intr.transfer[2],
        pulse_area: area,
        mc_fidelities: mc.map(|m| m.fidelities).unwrap_or_default(),
    })
}

/// Returns the `|ab⟩` amplitude index for readability in callers.
pub fn index_of(a: Level, b: Level) -> usize {
    pair_index(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `CZ_φ` acting on the computational block: phases `0, φ, φ, 2φ + π`.
    fn ideal_gate_state(phi: f64) -> StateVector {
        let mut psi = initial_state();
        let ph = [0.0, phi, phi, 2.0 * phi + PI];
        for (k, &i) in QUBIT_INDICES.iter().enumerate() {
            psi.amplitudes_mut()[i] *= C64::from_polar(1.0, ph[k]);
        }
        psi
    }

    #[test]
    fn initial_state_signs() {
        let psi = initial_state();
        assert!((psi.norm() - 1.0).abs() < 1e-15);
        let a = psi.amplitudes();
        assert_eq!(a[index_of(Level::Zero, Level::Zero)], C64::new(0.5, 0.0));
        assert_eq!(a[index_of(Level::Zero, Level::One)], C64::new(-0.5, 0.0));
        assert_eq!(a[index_of(Level::One, Level::Zero)], C64::new(-0.5, 0.0));
        assert_eq!(a[index_of(Level::One, Level::One)], C64::new(0.5, 0.0));
    }

    #[test]
    fn ideal_cz_gives_unit_fidelity() {
        for phi in [0.0, 0.7, PI, 4.0] {
            let psi = ideal_gate_state(phi);
            let res = IntrinsicResult::from_final_state(psi.clone(), BellTarget::B01).unwrap();
            assert!((res.phases.phi_10 - wrap_2pi(phi)).abs() < 1e-12);
            assert!((res.f0 - 1.0).abs() < 1e-12);
            assert!(res.phases.relation_error() < 1e-12);
            let rho_f = finalize_state(&DensityMatrix::from_pure(&psi), res.phi_comp).unwrap();
            assert!((fidelity(&rho_f).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_cz_pi_targets_beta00() {
        let psi = ideal_gate_state(PI);
        let res = IntrinsicResult::from_final_state(psi, BellTarget::B00).unwrap();
        assert!((res.phi_comp - 0.0).abs() < 1e-12 || (res.phi_comp - 2.0 * PI).abs() < 1e-12);
        assert!((res.f0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_ideal_cz_is_singlet_like() {
        let psi = ideal_gate_state(0.3);
        let out = finalize_pure(&psi, 0.3).unwrap();
        let a = out.amplitudes();
        assert!(a[0].norm() < 1e-12 && a[3].norm() < 1e-12);
        assert!((a[1].norm() - FRAC_1_SQRT_2).abs() < 1e-12 && (a[2].norm() - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn no_gate_gives_quarter() {
        // (𝟙⊗H)|ψ₀⟩ = (|01⟩ − |11⟩)/√2, which overlaps β₀₁ with amplitude 1/2.
        let rho = DensityMatrix::from_pure(&initial_state());
        let rho_f = finalize_state(&rho, 0.0).unwrap();
        assert!((fidelity(&rho_f).unwrap() - 0.25).abs() < 1e-12);
        assert!((rho_f.expectation_in(&BellTarget::B01.vector()) - 0.25).abs() < 1e-12);
        assert!((fidelity_against(&rho_f, BellTarget::B00).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reference_fidelities() {
        let b = BellTarget::B01.vector();
        assert!((fidelity(&DensityMatrix::from_pure(&b)).unwrap() - 1.0).abs() < 1e-15);
        assert!((fidelity(&DensityMatrix::maximally_mixed(4)).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn leakage_reduces_block_trace() {
        let mut a = vec![ZERO; DIM];
        let s = (0.9f64 / 4.0).sqrt();
        for &i in &QUBIT_INDICES {
            a[i] = C64::new(s, 0.0);
        }
        a[index_of(Level::R, Level::Zero)] = C64::new(0.1f64.sqrt(), 0.0);
        let rho = DensityMatrix::from_pure(&StateVector::new(a).unwrap());
        assert!((finalize_state(&rho, 0.4).unwrap().trace() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn frame_correction_is_unitary() {
        let u = frame_correction(1.234);
        assert!(u.adjoint().matmul(&u).unwrap().max_abs_diff(&ComplexMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn phase_diagonal_conjugation_matches_phased_hamiltonian() {
        use crate::atom::{default_model, two_atom_hamiltonian, Drive};
        use crate::noise::AtomNoise;
        for kind in [ExcitationKind::Dipole, ExcitationKind::Quadrupole] {
            let m = default_model(kind);
            let d = match kind {
                ExcitationKind::Dipole => Drive::Dipole { omega: C64::new(3.0, 0.0), delta: 1.0 },
                ExcitationKind::Quadrupole => {
                    Drive::Quadrupole { omega_b: C64::new(3.0, 0.0), omega_r: C64::new(2.0, 0.0), delta_b: 40.0 }
                }
            };
            let n = AtomNoise::ideal(m.n_lasers());
            let phi = 0.77;
            let dp = d.with_phase(phi);
            let h0 = two_atom_hamiltonian(&m, [&d, &d], [&n, &n]).unwrap();
            let h1 = two_atom_hamiltonian(&m, [&dp, &dp], [&n, &n]).unwrap();
            let diag = phase_diagonal(phi);
            let conj = ComplexMatrix::from_fn(DIM, DIM, |i, j| diag[i] * h0[(i, j)] * diag[j].conj());
            assert!(conj.max_abs_diff(&h1) < 1e-14 * h1.max_abs());
        }
    }

    #[test]
    fn factorized_propagator_matches_full_integration() {
        use crate::atom::default_model;
        use crate::noise::{run_rng, sample_noise};
        use crate::pulse::{LcgParams, ZchgParams};
        use crate::units::from_mhz;
        let cfg = IntegratorConfig::default();
        let lcg = Waveform::TqdDipole(LcgParams { duration: 0.03, omega0: from_mhz(24.92), tau: 0.266 * 0.03, delta0: from_mhz(49.55) });
        let zchg = Waveform::TqdQuadrupole(ZchgParams {
            duration: 0.06,
            omega_b0: from_mhz(300.0),
            omega_r0: from_mhz(300.0),
            tau_b: 0.021,
            tau_r: 0.021,
            delta_b: from_mhz(1762.9),
        });
        for w in [lcg, zchg] {
            let m = default_model(w.kind());
            let noise = sample_noise(&m, NoiseToggles::ALL, &mut run_rng(3, 0));
            let sched = PulseSchedule::single(w).unwrap();
            let full = propagator(&GateHamiltonian::new(&m, &sched, &noise).unwrap(), &cfg).unwrap();
            let fact = pulse_propagator(&m, &sched, &noise, &cfg).unwrap();
            // The two routes take different RK4 steps, so they agree to the integration error.
            assert!(full.max_abs_diff(&fact) < 1e-5, "{}", full.max_abs_diff(&fact));
        }
    }

    proptest! {
        #[test]
        fn shortcut_bounds_projector_and_matches_pure_states(
            re in proptest::collection::vec(-1.0f64..1.0, 4),
            im in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let amps: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
            let psi = StateVector::new(amps).unwrap();
            prop_assume!(psi.norm() > 1e-3);
            let psi = psi.normalized().unwrap();
            let rho = DensityMatrix::from_pure(&psi);
            let shortcut = fidelity(&rho).unwrap();
            let direct = rho.expectation_in(&BellTarget::B01.vector());
            prop_assert!(shortcut >= direct - 1e-12);
            prop_assert!((shortcut - intrinsic_fidelity(&psi, BellTarget::B01).unwrap()).abs() < 1e-12);
            // Aligning the coherence phase makes the shortcut exact.
            let (a, b) = BellTarget::B01.support();
            let rel = (psi.amplitudes()[a] * psi.amplitudes()[b].conj()).arg();
            let mut aligned = psi.clone();
            aligned.amplitudes_mut()[b] *= C64::from_polar(1.0, rel);
            let ra = DensityMatrix::from_pure(&aligned);
            prop_assert!((fidelity(&ra).unwrap() - ra.expectation_in(&BellTarget::B01.vector())).abs() < 1e-12);
        }
    }
}
