//! Fixed-step RK4 propagation of state vectors, propagators and density
//! matrices under piecewise-smooth Hamiltonians.
//!
//! Steps never straddle a segment edge. Inside a segment the step is the
//! smaller of [`IntegratorConfig::step`] and `max_phase_per_step / ‖H‖`, with
//! `‖H‖` a Gershgorin bound sampled across the segment, so stiff blockade and
//! intermediate-detuning terms stay well resolved.

use crate::atom::{two_atom_sparse, AtomModel};
use crate::linalg::{eigensystem_2x2, ComplexMatrix, DensityMatrix, SparseMatrix, StateVector, C64, ONE, ZERO};
use crate::noise::{AtomNoise, NoiseRealization};
use crate::pulse::PulseSchedule;
use crate::{Error, Result};

/// Time-dependent Hamiltonian on a fixed set of contiguous segments.
pub trait Hamiltonian: Sync {
    fn dim(&self) -> usize;
    /// `(start, end)` of every segment in order.
    fn segments(&self) -> Vec<(f64, f64)>;
    /// Writes `H(t)` of segment `segment` into `out`. Evaluations at segment
    /// edges use that segment's one-sided limit.
    fn fill(&self, segment: usize, t: f64, out: &mut SparseMatrix) -> Result<()>;
}

/// Hamiltonian given by a closure returning dense matrices.
pub struct DenseHamiltonian<F> {
    dim: usize,
    segments: Vec<(f64, f64)>,
    f: F,
}

impl<F> DenseHamiltonian<F>
where
    F: Fn(usize, f64) -> Result<ComplexMatrix> + Sync,
{
    pub fn new(dim: usize, segments: Vec<(f64, f64)>, f: F) -> Self {
        Self { dim, segments, f }
    }
}

impl<F> Hamiltonian for DenseHamiltonian<F>
where
    F: Fn(usize, f64) -> Result<ComplexMatrix> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        self.segments.clone()
    }

    fn fill(&self, segment: usize, t: f64, out: &mut SparseMatrix) -> Result<()> {
        let m = (self.f)(segment, t)?;
        if m.rows() != self.dim || !m.is_square() {
            return Err(Error::Dimension(format!("Hamiltonian is {}x{}, expected {}", m.rows(), m.cols(), self.dim)));
        }
        *out = SparseMatrix::from_dense(&m);
        Ok(())
    }
}

/// Two-atom Hamiltonian driven by a pulse schedule, with both atoms seeing
/// the same laser waveform and their own noise factors.
pub struct GateHamiltonian<'a> {
    model: &'a AtomModel,
    schedule: &'a PulseSchedule,
    noise: [AtomNoise; 2],
}

impl<'a> GateHamiltonian<'a> {
    pub fn new(model: &'a AtomModel, schedule: &'a PulseSchedule, noise: &NoiseRealization) -> Result<Self> {
        if schedule.kind() != model.excitation {
            return Err(Error::InvalidParameter(format!(
                "{:?} schedule applied to a {:?} model",
                schedule.kind(),
                model.excitation
            )));
        }
        for a in &noise.atoms {
            if a.spatial.len() != model.n_lasers() || a.intensity.len() != model.n_lasers() {
                return Err(Error::Dimension("noise realization does not match the laser count".into()));
            }
        }
        Ok(Self { model, schedule, noise: noise.atoms.clone() })
    }

    pub fn noiseless(model: &'a AtomModel, schedule: &'a PulseSchedule) -> Result<Self> {
        Self::new(model, schedule, &NoiseRealization::ideal(model.n_lasers()))
    }
}

impl Hamiltonian for GateHamiltonian<'_> {
    fn dim(&self) -> usize {
        crate::atom::DIM
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        self.schedule.segments().iter().map(|s| (s.start, s.end())).collect()
    }

    fn fill(&self, segment: usize, t: f64, out: &mut SparseMatrix) -> Result<()> {
        let drive = self.schedule.drive_in_segment(segment, t)?;
        let mut scratch = Vec::with_capacity(8);
        two_atom_sparse(self.model, [&drive, &drive], [&self.noise[0], &self.noise[1]], &mut scratch, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    /// Upper bound on the RK4 step in μs.
    pub step: f64,
    /// Upper bound on `‖H‖·h`.
    pub max_phase_per_step: f64,
    /// Record a sample every this many steps (segment edges are always sampled).
    pub sample_every: usize,
    /// Keep intermediate states; otherwise only the final state is kept.
    pub record_states: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { step: 1e-4, max_phase_per_step: 0.03, sample_every: 10, record_states: true }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.max_phase_per_step > 0.0) || self.sample_every == 0 {
            return Err(Error::InvalidParameter(format!("invalid integrator settings {self:?}")));
        }
        Ok(())
    }

    /// Same settings with both step limits halved.
    pub fn halved(&self) -> Self {
        Self { step: 0.5 * self.step, max_phase_per_step: 0.5 * self.max_phase_per_step, ..*self }
    }

    pub fn final_only(&self) -> Self {
        Self { record_states: false, ..*self }
    }
}

/// Tolerances enforced during propagation.
pub const NORM_DRIFT_LIMIT: f64 = 1e-5;
pub const TRACE_DRIFT_LIMIT: f64 = 1e-5;
pub const NEGATIVE_EIGEN_LIMIT: f64 = -1e-6;
/// Amplitudes smaller than this carry no usable phase.
pub const PHASE_AMPLITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    /// Empty unless states were recorded.
    pub states: Vec<S>,
    pub final_time: f64,
    pub final_state: S,
    pub steps: usize,
}

impl Trajectory<StateVector> {
    pub fn populations(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.amplitudes()[index].norm_sqr()).collect()
    }

    pub fn amplitudes(&self, index: usize) -> Vec<C64> {
        self.states.iter().map(|s| s.amplitudes()[index]).collect()
    }

    /// Population of the normalized superposition `Σ c_k |k⟩`.
    pub fn projection(&self, combination: &[(usize, C64)]) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| combination.iter().map(|&(k, c)| c.conj() * s.amplitudes()[k]).sum::<C64>().norm_sqr())
            .collect()
    }
}

impl Trajectory<DensityMatrix> {
    pub fn populations(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|r| r.population(index)).collect()
    }
}

struct Workspace {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![ZERO; n]), tmp: vec![ZERO; n] }
    }
}

/// Drives RK4 over every segment of `ham`. `rhs(h, x, out)` writes `dx/dt`;
/// `after_step` may project the state; `sample(t, x)` observes the state at
/// t = start, every `sample_every` steps, and at every segment edge.
fn integrate<R, A, S>(
    ham: &dyn Hamiltonian,
    cfg: &IntegratorConfig,
    x: &mut [C64],
    mut rhs: R,
    mut after_step: A,
    mut sample: S,
) -> Result<(usize, f64)>
where
    R: FnMut(&SparseMatrix, &[C64], &mut [C64]),
    A: FnMut(&mut [C64]),
    S: FnMut(f64, &[C64]) -> Result<()>,
{
    cfg.validate()?;
    let segments = ham.segments();
    let Some(&(t0, _)) = segments.first() else {
        return Err(Error::InvalidParameter("Hamiltonian has no segments".into()));
    };
    let n = x.len();
    let dim = ham.dim();
    let mut h0 = SparseMatrix::new(dim);
    let mut hm = SparseMatrix::new(dim);
    let mut h1 = SparseMatrix::new(dim);
    let mut w = Workspace::new(n);
    let mut steps = 0usize;
    let mut t_final = t0;
    sample(t0, x)?;
    for (seg, &(a, b)) in segments.iter().enumerate() {
        let len = b - a;
        if !(len > 0.0) {
            continue;
        }
        let mut bound = 0.0f64;
        for i in 0..=16 {
            ham.fill(seg, a + len * i as f64 / 16.0, &mut h0)?;
            bound = bound.max(h0.gershgorin_bound());
        }
        let mut h_max = cfg.step;
        if bound > 0.0 {
            h_max = h_max.min(cfg.max_phase_per_step / bound);
        }
        let n_steps = (len / h_max).ceil().max(1.0) as usize;
        let h = len / n_steps as f64;
        ham.fill(seg, a, &mut h0)?;
        for i in 0..n_steps {
            let t = a + i as f64 * h;
            let t_end = if i + 1 == n_steps { b } else { a + (i + 1) as f64 * h };
            ham.fill(seg, t + 0.5 * h, &mut hm)?;
            ham.fill(seg, t_end, &mut h1)?;

            let [k1, k2, k3, k4] = &mut w.k;
            let tmp = &mut w.tmp;
            rhs(&h0, x, k1);
            for j in 0..n {
                tmp[j] = x[j] + k1[j] * (0.5 * h);
            }
            rhs(&hm, tmp, k2);
            for j in 0..n {
                tmp[j] = x[j] + k2[j] * (0.5 * h);
            }
            rhs(&hm, tmp, k3);
            for j in 0..n {
                tmp[j] = x[j] + k3[j] * h;
            }
            rhs(&h1, tmp, k4);
            for j in 0..n {
                x[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
            }
            after_step(x);
            std::mem::swap(&mut h0, &mut h1);
            steps += 1;
            if steps % cfg.sample_every == 0 || i + 1 == n_steps {
                if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::NonFinite("propagated state"));
                }
                sample(t_end, x)?;
            }
        }
        t_final = b;
    }
    Ok((steps, t_final))
}

fn check_dim(ham: &dyn Hamiltonian, dim: usize) -> Result<()> {
    if ham.dim() != dim {
        return Err(Error::Dimension(format!("state has dimension {dim}, Hamiltonian {}", ham.dim())));
    }
    Ok(())
}

/// Solves `i dψ/dt = H(t) ψ` from `psi0` over all segments of `ham`.
pub fn propagate_unitary(ham: &dyn Hamiltonian, psi0: &StateVector, cfg: &IntegratorConfig) -> Result<Trajectory<StateVector>> {
    check_dim(ham, psi0.dim())?;
    let n0 = psi0.norm();
    let mut x = psi0.amplitudes().to_vec();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let minus_i = C64::new(0.0, -1.0);
    let (steps, t_final) = integrate(
        ham,
        cfg,
        &mut x,
        |h, x, out| h.matvec_into(x, minus_i, out),
        |_| {},
        |t, x| {
            let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - n0).abs() > NORM_DRIFT_LIMIT {
                return Err(Error::NormDrift(norm - n0));
            }
            if cfg.record_states {
                times.push(t);
                states.push(StateVector::new(x.to_vec())?);
            }
            Ok(())
        },
    )?;
    Ok(Trajectory { times, states, final_time: t_final, final_state: StateVector::new(x)?, steps })
}

/// Propagator `U(T, 0)` of `ham`, obtained by evolving every basis column.
pub fn propagator(ham: &dyn Hamiltonian, cfg: &IntegratorConfig) -> Result<ComplexMatrix> {
    let all: Vec<usize> = (0..ham.dim()).collect();
    propagator_columns(ham, &all, cfg)
}

/// Selected columns `U(T, 0)|j⟩` of the propagator, as a dim×k matrix.
/// Fails if the evolved columns lose orthonormality.
pub fn propagator_columns(ham: &dyn Hamiltonian, columns: &[usize], cfg: &IntegratorConfig) -> Result<ComplexMatrix> {
    let n = ham.dim();
    let k = columns.len();
    if k == 0 || columns.iter().any(|&c| c >= n) {
        return Err(Error::Dimension(format!("column selection {columns:?} invalid for dimension {n}")));
    }
    let mut x = ComplexMatrix::from_fn(n, k, |i, j| if columns[j] == i { ONE } else { ZERO }).as_slice().to_vec();
    let minus_i = C64::new(0.0, -1.0);
    integrate(ham, cfg, &mut x, |h, x, out| h.matmul_dense_into(x, minus_i, out), |_| {}, |_, _| Ok(()))?;
    let u = ComplexMatrix::from_vec(n, k, x)?;
    let drift = u.adjoint().matmul(&u)?.max_abs_diff(&ComplexMatrix::identity(k));
    if drift > NORM_DRIFT_LIMIT {
        return Err(Error::NormDrift(drift));
    }
    Ok(u)
}

/// `(k, j, c)` entries of one collapse operator `c|k⟩⟨j|`.
type CollapseEntries = Vec<(usize, usize, C64)>;

/// Solves `dρ/dt = −i[H, ρ] + Σ (cρc† − ½{c†c, ρ})` from `rho0`.
///
/// The right-hand side is evaluated as `−i(Gρ − ρG†) + Σ cρc†` with
/// `G = H − (i/2)Σ c†c`, and the state is re-symmetrized after every step.
/// Trace drift is checked at every sample and positivity at every recorded
/// sample and at the end.
pub fn propagate_gksl(
    ham: &dyn Hamiltonian,
    collapse: &[SparseMatrix],
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<DensityMatrix>> {
    let n = rho0.dim();
    check_dim(ham, n)?;
    if let Some(c) = collapse.iter().find(|c| c.dim() != n) {
        return Err(Error::Dimension(format!("collapse operator has dimension {}, expected {n}", c.dim())));
    }
    let mut k_dense = ComplexMatrix::zeros(n, n);
    for c in collapse {
        let entries = c.entries();
        for &(k, i, a) in entries {
            for &(k2, j, b) in entries {
                if k == k2 {
                    k_dense[(i, j)] += a.conj() * b;
                }
            }
        }
    }
    let k_sparse = SparseMatrix::from_dense(&k_dense);
    let jumps: Vec<CollapseEntries> = collapse.iter().map(|c| c.entries().to_vec()).collect();

    let mut x = rho0.matrix().as_slice().to_vec();
    let mut gx = vec![ZERO; n * n];
    let half_minus_i = C64::new(0.0, -0.5);
    let i_unit = C64::new(0.0, 1.0);
    let mut times = Vec::new();
    let mut states = Vec::new();

    let rhs = |h: &SparseMatrix, rho: &[C64], out: &mut [C64]| {
        h.matmul_dense_into(rho, ONE, &mut gx);
        for &(i, k, v) in k_sparse.entries() {
            let w = v * half_minus_i;
            for j in 0..n {
                gx[i * n + j] += w * rho[k * n + j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = i_unit * (gx[j * n + i].conj() - gx[i * n + j]);
            }
        }
        for c in &jumps {
            for &(k, a_idx, a) in c {
                for &(l, b_idx, b) in c {
                    out[k * n + l] += a * b.conj() * rho[a_idx * n + b_idx];
                }
            }
        }
    };
    let symmetrize = |rho: &mut [C64]| {
        for i in 0..n {
            rho[i * n + i].im = 0.0;
            for j in (i + 1)..n {
                let avg = 0.5 * (rho[i * n + j] + rho[j * n + i].conj());
                rho[i * n + j] = avg;
                rho[j * n + i] = avg.conj();
            }
        }
    };
    let (steps, t_final) = integrate(ham, cfg, &mut x, rhs, symmetrize, |t, rho| {
        let tr: f64 = (0..n).map(|i| rho[i * n + i].re).sum();
        if (tr - 1.0).abs() > TRACE_DRIFT_LIMIT {
            return Err(Error::TraceDrift(tr - 1.0));
        }
        if cfg.record_states {
            let d = DensityMatrix::new_unchecked(ComplexMatrix::from_vec(n, n, rho.to_vec())?)?;
            check_positive(&d)?;
            times.push(t);
            states.push(d);
        }
        Ok(())
    })?;
    let final_state = DensityMatrix::new_unchecked(ComplexMatrix::from_vec(n, n, x)?)?;
    check_positive(&final_state)?;
    Ok(Trajectory { times, states, final_time: t_final, final_state, steps })
}

fn check_positive(rho: &DensityMatrix) -> Result<()> {
    let m = rho.min_eigenvalue();
    if m < NEGATIVE_EIGEN_LIMIT {
        return Err(Error::NegativeEigenvalue(m));
    }
    Ok(())
}

/// Unwrapped phase history of one amplitude.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseSeries {
    pub times: Vec<f64>,
    pub phases: Vec<f64>,
    /// Sample indices skipped because the amplitude was below [`PHASE_AMPLITUDE_FLOOR`].
    pub skipped: Vec<usize>,
}

/// Continuous branch of `arg ⟨index|ψ(t)⟩` over the recorded samples.
pub fn accumulated_phase(traj: &Trajectory<StateVector>, index: usize) -> PhaseSeries {
    let mut out = PhaseSeries::default();
    let mut last: Option<f64> = None;
    for (k, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let a = s.amplitudes()[index];
        if a.norm() < PHASE_AMPLITUDE_FLOOR {
            out.skipped.push(k);
            continue;
        }
        let raw = a.arg();
        let phase = match last {
            None => raw,
            Some(prev) => prev + crate::units::wrap_pi(raw - prev),
        };
        last = Some(phase);
        out.times.push(*t);
        out.phases.push(phase);
    }
    out
}

/// Smallest squared overlap between the normalized recorded states (2-dim)
/// and the instantaneous eigenvector of `h2` that they started closest to,
/// followed by continuity of the eigenvector across samples.
pub fn adiabaticity_monitor<F>(times: &[f64], states: &[StateVector], h2: F) -> Result<f64>
where
    F: Fn(f64) -> Result<ComplexMatrix>,
{
    if times.len() != states.len() || times.is_empty() {
        return Err(Error::Dimension("adiabaticity monitor needs matching, non-empty samples".into()));
    }
    let mut followed: Option<StateVector> = None;
    let mut min_overlap = f64::INFINITY;
    for (&t, psi) in times.iter().zip(states) {
        if psi.dim() != 2 {
            return Err(Error::Dimension(format!("adiabaticity monitor needs 2-dim states, got {}", psi.dim())));
        }
        let norm = psi.norm();
        if norm < PHASE_AMPLITUDE_FLOOR {
            continue;
        }
        let eig = eigensystem_2x2(&h2(t)?)?;
        let reference = followed.as_ref().unwrap_or(psi);
        let pick = if reference.inner(&eig.vectors[0]).norm() >= reference.inner(&eig.vectors[1]).norm() { 0 } else { 1 };
        let v = eig.vectors[pick].clone();
        min_overlap = min_overlap.min(v.inner(psi).norm_sqr() / (norm * norm));
        followed = Some(v);
    }
    Ok(min_overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{collapse_operators_sparse, default_model, pair_index, ExcitationKind, Level};
    use crate::pulse::{build_sequence, LcgParams, SegmentOrder, Waveform};
    use crate::units::from_mhz;
    use proptest::prelude::*;

    fn two_level(omega: f64, delta: f64) -> ComplexMatrix {
        let c = C64::new(0.5 * omega, 0.0);
        ComplexMatrix::from_vec(2, 2, vec![C64::new(-0.5 * delta, 0.0), c, c, C64::new(0.5 * delta, 0.0)]).unwrap()
    }

    #[test]
    fn resonant_rabi_oscillation() {
        let omega = from_mhz(1.0);
        let h = DenseHamiltonian::new(2, vec![(0.0, 1.3)], move |_, _| Ok(two_level(omega, 0.0)));
        let traj = propagate_unitary(&h, &StateVector::basis(2, 0), &IntegratorConfig::default()).unwrap();
        for (t, p) in traj.times.iter().zip(traj.populations(1)) {
            assert!((p - (0.5 * omega * t).sin().powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn free_phase_slope() {
        let delta = 3.0;
        let h = DenseHamiltonian::new(2, vec![(0.0, 2.0)], move |_, _| Ok(two_level(0.0, delta)));
        let traj = propagate_unitary(&h, &StateVector::basis(2, 0), &IntegratorConfig::default()).unwrap();
        let ph = accumulated_phase(&traj, 0);
        assert!(ph.skipped.is_empty());
        for (t, p) in ph.times.iter().zip(&ph.phases) {
            assert!((p - 0.5 * delta * t).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_hamiltonian_keeps_phase() {
        let h = DenseHamiltonian::new(3, vec![(0.0, 0.5)], |_, _| Ok(ComplexMatrix::zeros(3, 3)));
        let traj = propagate_unitary(&h, &StateVector::basis(3, 1), &IntegratorConfig::default()).unwrap();
        assert!(accumulated_phase(&traj, 1).phases.iter().all(|p| *p == 0.0));
        assert_eq!(accumulated_phase(&traj, 0).skipped.len(), traj.times.len());
    }

    #[test]
    fn exponential_decay() {
        let gamma: f64 = 0.7;
        let mut c = SparseMatrix::new(2);
        c.push(0, 1, C64::new(gamma.sqrt(), 0.0));
        let h = DenseHamiltonian::new(2, vec![(0.0, 3.0)], |_, _| Ok(ComplexMatrix::zeros(2, 2)));
        let rho0 = DensityMatrix::from_pure(&StateVector::basis(2, 1));
        let traj = propagate_gksl(&h, &[c], &rho0, &IntegratorConfig::default()).unwrap();
        for (t, p) in traj.times.iter().zip(traj.populations(1)) {
            assert!((p - (-gamma * t).exp()).abs() < 1e-8);
        }
    }

    fn lcg_schedule(t: f64) -> PulseSchedule {
        let p = LcgParams { duration: t, omega0: from_mhz(24.92), tau: 0.266 * t, delta0: from_mhz(49.55) };
        build_sequence(Waveform::TqdDipole(p), 0.4 * std::f64::consts::PI, 1.9 * std::f64::consts::PI, SegmentOrder::Translated)
            .unwrap()
    }

    fn plus_state() -> StateVector {
        let mut a = vec![ZERO; 25];
        a[pair_index(Level::Zero, Level::Zero)] = C64::new(0.5, 0.0);
        a[pair_index(Level::One, Level::One)] = C64::new(0.5, 0.0);
        a[pair_index(Level::One, Level::Zero)] = C64::new(0.0, 0.5);
        a[pair_index(Level::Zero, Level::One)] = C64::new(-0.5, 0.0);
        StateVector::new(a).unwrap()
    }

    #[test]
    fn closed_system_limit_matches_unitary() {
        let model = default_model(ExcitationKind::Dipole).without_decay();
        let sched = lcg_schedule(0.02);
        let ham = GateHamiltonian::noiseless(&model, &sched).unwrap();
        let psi0 = plus_state();
        let cfg = IntegratorConfig::default().final_only();
        let psi = propagate_unitary(&ham, &psi0, &cfg).unwrap().final_state;
        let rho = propagate_gksl(&ham, &[], &DensityMatrix::from_pure(&psi0), &cfg).unwrap().final_state;
        assert!(rho.matrix().max_abs_diff(&DensityMatrix::from_pure(&psi).into_matrix()) < 1e-7);
    }

    #[test]
    fn gksl_with_decay_stays_physical() {
        let model = default_model(ExcitationKind::Dipole);
        let sched = lcg_schedule(0.02);
        let ham = GateHamiltonian::noiseless(&model, &sched).unwrap();
        let c = collapse_operators_sparse(&model);
        let traj = propagate_gksl(&ham, &c, &DensityMatrix::from_pure(&plus_state()), &IntegratorConfig::default()).unwrap();
        for r in &traj.states {
            r.validate(1e-7, 1e-6).unwrap();
            assert!(r.matrix().hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn zero_zero_amplitude_is_conserved() {
        let model = default_model(ExcitationKind::Dipole);
        let sched = lcg_schedule(0.03);
        let ham = GateHamiltonian::noiseless(&model, &sched).unwrap();
        let traj = propagate_unitary(&ham, &plus_state(), &IntegratorConfig::default()).unwrap();
        for a in traj.amplitudes(0) {
            assert!((a.norm() - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn step_halving_converges() {
        let model = default_model(ExcitationKind::Dipole);
        let sched = lcg_schedule(0.03);
        let ham = GateHamiltonian::noiseless(&model, &sched).unwrap();
        let cfg = IntegratorConfig::default().final_only();
        let a = propagate_unitary(&ham, &plus_state(), &cfg).unwrap().final_state;
        let b = propagate_unitary(&ham, &plus_state(), &cfg.halved()).unwrap().final_state;
        assert!(a.distance(&b) < 1e-7, "{}", a.distance(&b));
    }

    #[test]
    fn propagator_is_unitary_and_consistent() {
        let model = default_model(ExcitationKind::Dipole);
        let sched = lcg_schedule(0.02);
        let ham = GateHamiltonian::noiseless(&model, &sched).unwrap();
        let cfg = IntegratorConfig::default().final_only();
        let u = propagator(&ham, &cfg).unwrap();
        let direct = propagate_unitary(&ham, &plus_state(), &cfg).unwrap().final_state;
        assert!(u.apply(&plus_state()).unwrap().distance(&direct) < 1e-10);
    }

    #[test]
    fn eigenstate_of_constant_hamiltonian_stays_adiabatic() {
        let hm = two_level(2.0, 1.0);
        let v = eigensystem_2x2(&hm).unwrap().vectors[0].clone();
        let h = DenseHamiltonian::new(2, vec![(0.0, 1.0)], move |_, _| Ok(two_level(2.0, 1.0)));
        let traj = propagate_unitary(&h, &v, &IntegratorConfig::default()).unwrap();
        let m = adiabaticity_monitor(&traj.times, &traj.states, |_| Ok(two_level(2.0, 1.0))).unwrap();
        assert!((m - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sudden_quench_is_not_adiabatic() {
        let h = DenseHamiltonian::new(2, vec![(0.0, 1.0)], |_, _| Ok(two_level(5.0, 0.0)));
        let traj = propagate_unitary(&h, &StateVector::basis(2, 0), &IntegratorConfig::default()).unwrap();
        // Basis state |0⟩ sits at overlap ½ with either eigenvector of σ_x.
        let m = adiabaticity_monitor(&traj.times, &traj.states, |_| Ok(two_level(5.0, 0.0))).unwrap();
        assert!(m < 0.99);
        assert!((m - 0.5).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn matches_exponential_of_piecewise_constant_snapshots(
            vals in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -3.0f64..3.0), 3),
            lens in proptest::collection::vec(0.05f64..0.4, 3),
        ) {
            let mut segs = Vec::new();
            let mut t = 0.0;
            for l in &lens {
                segs.push((t, t + l));
                t += l;
            }
            let mats: Vec<ComplexMatrix> = vals
                .iter()
                .map(|&(o, d, phi)| {
                    let c = C64::from_polar(0.5 * o, phi);
                    ComplexMatrix::from_vec(2, 2, vec![C64::new(-0.5 * d, 0.0), c, c.conj(), C64::new(0.5 * d, 0.0)]).unwrap()
                })
                .collect();
            let m2 = mats.clone();
            let h = DenseHamiltonian::new(2, segs, move |k, _| Ok(m2[k].clone()));
            let u = propagator(&h, &IntegratorConfig::default()).unwrap();
            let mut exact = ComplexMatrix::identity(2);
            for (m, l) in mats.iter().zip(&lens) {
                exact = m.scale(C64::new(0.0, -l)).exp().matmul(&exact).unwrap();
            }
            prop_assert!(u.max_abs_diff(&exact) < 1e-6);
        }
    }
}
