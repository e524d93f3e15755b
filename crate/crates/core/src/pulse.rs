//! Adiabatic pulse families, their transitionless-driving counterparts, and
//! four-segment phase-shifted gate schedules.
//!
//! The linearly chirped Gaussian (LCG) drives a one-photon transition. The
//! zero-chirp hyper-Gaussian (ZCHG) pair drives a two-photon STIRAP transition
//! through an intermediate level detuned by a constant Δ_B. Both are turned
//! into transitionless (TQD) pulses by applying the two-level counterdiabatic
//! correction to the effective `|11⟩ ↔ |+⟩` transition and folding the
//! correction back into physical Rabi frequencies and detunings.

use crate::atom::{Drive, ExcitationKind};
use crate::dynamics::{propagate_unitary, DenseHamiltonian, IntegratorConfig};
use crate::linalg::{ComplexMatrix, StateVector, C64};
use crate::{Error, Result};
use crate::units::from_mhz;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

/// Step used for the central difference of the counterdiabatic term.
pub const TQD_FD_STEP: f64 = 1e-5;
/// Floor applied to the denominators of the counterdiabatic expressions.
pub const TQD_DENOMINATOR_FLOOR: f64 = 1e-12;
/// Time slack when checking that an evaluation lies inside a pulse window.
const WINDOW_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcgParams {
    /// Single-pulse duration T in μs.
    pub duration: f64,
    pub omega0: f64,
    /// Gaussian width τ in μs.
    pub tau: f64,
    pub delta0: f64,
}

impl LcgParams {
    pub fn validate(&self) -> Result<()> {
        let v = [self.duration, self.omega0, self.tau, self.delta0];
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("LCG parameters must be positive and finite: {self:?}")));
        }
        Ok(())
    }

    /// Same pulse stretched to `duration`, keeping τ/T fixed.
    pub fn with_duration(&self, duration: f64) -> Self {
        Self { duration, tau: self.tau / self.duration * duration, ..*self }
    }

    pub fn with_amplitude(&self, omega0: f64) -> Self {
        Self { omega0, ..*self }
    }

    /// Reference dipole pulse: Ω₀/2π = 24.92 MHz, Δ₀/2π = 49.55 MHz, τ = 0.266 T.
    pub fn reference(duration: f64) -> Self {
        Self { duration, omega0: from_mhz(24.92), tau: 0.266 * duration, delta0: from_mhz(49.55) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZchgParams {
    pub duration: f64,
    pub omega_b0: f64,
    pub omega_r0: f64,
    pub tau_b: f64,
    pub tau_r: f64,
    /// Constant intermediate-level detuning Δ_B in rad/μs.
    pub delta_b: f64,
}

impl ZchgParams {
    /// Below this Δ_B / max(Ω) ratio the intermediate level is no longer
    /// safely eliminated.
    pub const ELIMINATION_RATIO: f64 = 5.0;

    pub fn validate(&self) -> Result<()> {
        let v = [self.duration, self.omega_b0, self.omega_r0, self.tau_b, self.tau_r, self.delta_b];
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("ZCHG parameters must be positive and finite: {self:?}")));
        }
        Ok(())
    }

    pub fn elimination_ratio(&self) -> f64 {
        self.delta_b / self.omega_b0.max(self.omega_r0)
    }

    /// Reference quadrupole pulse pair: Ω_B0/2π = Ω_R0/2π = 300 MHz,
    /// Δ_B/2π = 1762.9 MHz, τ_B = τ_R = 0.35 T.
    pub fn reference(duration: f64) -> Self {
        Self {
            duration,
            omega_b0: from_mhz(300.0),
            omega_r0: from_mhz(300.0),
            tau_b: 0.35 * duration,
            tau_r: 0.35 * duration,
            delta_b: from_mhz(1762.90),
        }
    }

    pub fn with_duration(&self, duration: f64) -> Self {
        let s = duration / self.duration;
        Self { duration, tau_b: self.tau_b * s, tau_r: self.tau_r * s, ..*self }
    }
}

fn check_window(t: f64, duration: f64) -> Result<()> {
    if t < -WINDOW_SLACK || t > duration + WINDOW_SLACK || !t.is_finite() {
        return Err(Error::OutsideWindow { t, duration });
    }
    Ok(())
}

/// A two-level drive and its time derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveJet {
    pub omega: f64,
    pub omega_dot: f64,
    pub delta: f64,
    pub delta_dot: f64,
}

fn lcg_jet(p: &LcgParams, t: f64) -> DriveJet {
    let s = t - 0.5 * p.duration;
    let omega = p.omega0 * (-(s * s) / (p.tau * p.tau)).exp();
    DriveJet {
        omega,
        omega_dot: omega * (-2.0 * s / (p.tau * p.tau)),
        delta: 2.0 * p.delta0 * s / p.duration,
        delta_dot: 2.0 * p.delta0 / p.duration,
    }
}

/// `(Ω, Δ)` of the chirped Gaussian at `t ∈ [0, T]`.
pub fn lcg_eval(p: &LcgParams, t: f64) -> Result<(f64, f64)> {
    check_window(t, p.duration)?;
    let j = lcg_jet(p, t);
    Ok((j.omega, j.delta))
}

/// `(Ω_B, Ω̇_B, Ω_R, Ω̇_R)`.
fn zchg_jet(p: &ZchgParams, t: f64) -> (f64, f64, f64, f64) {
    let sb = t - 2.0 * p.duration / 3.0;
    let sr = t - p.duration / 3.0;
    let tb4 = p.tau_b.powi(4);
    let tr4 = p.tau_r.powi(4);
    let ob = p.omega_b0 * (-sb.powi(4) / tb4).exp();
    let or = p.omega_r0 * (-sr.powi(4) / tr4).exp();
    (ob, ob * (-4.0 * sb.powi(3) / tb4), or, or * (-4.0 * sr.powi(3) / tr4))
}

/// `(Ω_B, Ω_R, Δ_B)` of the hyper-Gaussian STIRAP pair at `t ∈ [0, T]`.
pub fn zchg_eval(p: &ZchgParams, t: f64) -> Result<(f64, f64, f64)> {
    check_window(t, p.duration)?;
    let (ob, _, or, _) = zchg_jet(p, t);
    Ok((ob, or, p.delta_b))
}

/// Counterdiabatic control amplitude Ω_c for a two-level drive.
fn control_amplitude(j: &DriveJet) -> f64 {
    (j.omega * j.delta_dot - j.delta * j.omega_dot) / (j.delta * j.delta + j.omega * j.omega).max(TQD_DENOMINATOR_FLOOR)
}

/// Transitionless version `(Ω̃, Δ̃)` of the two-level drive `jet` at `t`:
/// Ω̃ = √(Ω² + Ω_c²) and Δ̃ = Δ + θ̇ with θ = arctan(Ω_c/Ω).
pub fn tqd_transform(jet: impl Fn(f64) -> DriveJet, t: f64) -> (f64, f64) {
    let j = jet(t);
    let oc = control_amplitude(&j);
    let h = TQD_FD_STEP;
    let oc_dot = (control_amplitude(&jet(t + h)) - control_amplitude(&jet(t - h))) / (2.0 * h);
    let theta_dot =
        (j.omega * oc_dot - oc * j.omega_dot) / (j.omega * j.omega + oc * oc).max(TQD_DENOMINATOR_FLOOR);
    ((j.omega * j.omega + oc * oc).sqrt(), j.delta + theta_dot)
}

/// Effective `|11⟩ ↔ |+⟩` drive of the chirped Gaussian: Ω_eff = √2·Ω.
fn dipole_effective_jet(p: &LcgParams, t: f64) -> DriveJet {
    let j = lcg_jet(p, t);
    DriveJet { omega: SQRT_2 * j.omega, omega_dot: SQRT_2 * j.omega_dot, ..j }
}

/// Transitionless single-atom drive `(Ω̃, Δ̃)` for the chirped Gaussian.
pub fn tqd_dipole(p: &LcgParams, t: f64) -> Result<(f64, f64)> {
    check_window(t, p.duration)?;
    let (oe, d) = tqd_transform(|s| dipole_effective_jet(p, s), t);
    Ok((oe / SQRT_2, d))
}

/// Effective two-photon `|11⟩ ↔ |+⟩` drive after eliminating `|p⟩`:
/// Ω_eff = −√2·Ω_B·Ω_R/(2Δ_B), Δ_eff = (Ω_B² − Ω_R²)/(4Δ_B).
pub fn quadrupole_effective(p: &ZchgParams, t: f64) -> DriveJet {
    let (ob, obd, or, ord) = zchg_jet(p, t);
    let db = p.delta_b;
    DriveJet {
        omega: -SQRT_2 * ob * or / (2.0 * db),
        omega_dot: -SQRT_2 * (obd * or + ob * ord) / (2.0 * db),
        delta: (ob * ob - or * or) / (4.0 * db),
        delta_dot: (2.0 * ob * obd - 2.0 * or * ord) / (4.0 * db),
    }
}

/// Physical `(Ω̃_B, Ω̃_R)` realizing the effective drive `(Ω̃_eff, Δ̃_eff)`
/// at intermediate detuning Δ_B.
pub fn invert_quadrupole(omega_eff: f64, delta_eff: f64, delta_b: f64) -> Result<(f64, f64)> {
    let r = (delta_eff * delta_eff + 0.5 * omega_eff * omega_eff).sqrt();
    let rb = 2.0 * delta_b * (r + delta_eff);
    let rr = 2.0 * delta_b * (r - delta_eff);
    let slack = 1e-12 * (2.0 * delta_b.abs() * r).max(1.0);
    if rb < -slack || rr < -slack {
        return Err(Error::NegativeRadicand(rb.min(rr)));
    }
    Ok((rb.max(0.0).sqrt(), rr.max(0.0).sqrt()))
}

/// Transitionless two-photon drive `(Ω̃_B, Ω̃_R, Δ_B)` for the ZCHG pair.
pub fn tqd_quadrupole(p: &ZchgParams, t: f64) -> Result<(f64, f64, f64)> {
    check_window(t, p.duration)?;
    let (oe, de) = tqd_transform(|s| quadrupole_effective(p, s), t);
    let (ob, or) = invert_quadrupole(oe, de, p.delta_b)?;
    Ok((ob, or, p.delta_b))
}

/// A single pulse shape on `[0, duration]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Waveform {
    Lcg(LcgParams),
    TqdDipole(LcgParams),
    Zchg(ZchgParams),
    TqdQuadrupole(ZchgParams),
    ConstantDipole { duration: f64, omega: f64, delta: f64 },
    ConstantQuadrupole { duration: f64, omega_b: f64, omega_r: f64, delta_b: f64 },
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        match self {
            Waveform::Lcg(p) | Waveform::TqdDipole(p) => p.duration,
            Waveform::Zchg(p) | Waveform::TqdQuadrupole(p) => p.duration,
            Waveform::ConstantDipole { duration, .. } | Waveform::ConstantQuadrupole { duration, .. } => *duration,
        }
    }

    pub fn kind(&self) -> ExcitationKind {
        match self {
            Waveform::Lcg(_) | Waveform::TqdDipole(_) | Waveform::ConstantDipole { .. } => ExcitationKind::Dipole,
            _ => ExcitationKind::Quadrupole,
        }
    }

    pub fn is_tqd(&self) -> bool {
        matches!(self, Waveform::TqdDipole(_) | Waveform::TqdQuadrupole(_))
    }

    /// The adiabatic pulse a TQD waveform was derived from (identity otherwise).
    pub fn adiabatic(&self) -> Self {
        match *self {
            Waveform::TqdDipole(p) => Waveform::Lcg(p),
            Waveform::TqdQuadrupole(p) => Waveform::Zchg(p),
            w => w,
        }
    }

    pub fn with_duration(&self, duration: f64) -> Self {
        match *self {
            Waveform::Lcg(p) => Waveform::Lcg(p.with_duration(duration)),
            Waveform::TqdDipole(p) => Waveform::TqdDipole(p.with_duration(duration)),
            Waveform::Zchg(p) => Waveform::Zchg(p.with_duration(duration)),
            Waveform::TqdQuadrupole(p) => Waveform::TqdQuadrupole(p.with_duration(duration)),
            Waveform::ConstantDipole { omega, delta, .. } => Waveform::ConstantDipole { duration, omega, delta },
            Waveform::ConstantQuadrupole { omega_b, omega_r, delta_b, .. } => {
                Waveform::ConstantQuadrupole { duration, omega_b, omega_r, delta_b }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Waveform::Lcg(p) | Waveform::TqdDipole(p) => p.validate(),
            Waveform::Zchg(p) | Waveform::TqdQuadrupole(p) => p.validate(),
            w => {
                if w.duration() > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("waveform duration must be positive".into()))
                }
            }
        }
    }

    /// Real-valued drive at local time `t`.
    pub fn drive(&self, t: f64) -> Result<Drive> {
        let real = |x: f64| C64::new(x, 0.0);
        Ok(match self {
            Waveform::Lcg(p) => {
                let (o, d) = lcg_eval(p, t)?;
                Drive::Dipole { omega: real(o), delta: d }
            }
            Waveform::TqdDipole(p) => {
                let (o, d) = tqd_dipole(p, t)?;
                Drive::Dipole { omega: real(o), delta: d }
            }
            Waveform::Zchg(p) => {
                let (ob, or, db) = zchg_eval(p, t)?;
                Drive::Quadrupole { omega_b: real(ob), omega_r: real(or), delta_b: db }
            }
            Waveform::TqdQuadrupole(p) => {
                let (ob, or, db) = tqd_quadrupole(p, t)?;
                Drive::Quadrupole { omega_b: real(ob), omega_r: real(or), delta_b: db }
            }
            Waveform::ConstantDipole { duration, omega, delta } => {
                check_window(t, *duration)?;
                Drive::Dipole { omega: real(*omega), delta: *delta }
            }
            Waveform::ConstantQuadrupole { duration, omega_b, omega_r, delta_b } => {
                check_window(t, *duration)?;
                Drive::Quadrupole { omega_b: real(*omega_b), omega_r: real(*omega_r), delta_b: *delta_b }
            }
        })
    }

    /// Equivalent single-atom two-level drive `(Ω, Δ)` on `|1⟩ ↔ |r⟩`. For
    /// two-photon pulses this is the drive after eliminating `|p⟩`.
    pub fn two_level(&self, t: f64) -> Result<(f64, f64)> {
        Ok(match self.drive(t)? {
            Drive::Dipole { omega, delta } => (omega.norm(), delta),
            Drive::Quadrupole { omega_b, omega_r, delta_b } => {
                let (ob, or) = (omega_b.norm(), omega_r.norm());
                (ob * or / (2.0 * delta_b), (ob * ob - or * or) / (4.0 * delta_b))
            }
        })
    }

    /// Peak Rabi frequency per laser over a uniform sample grid.
    pub fn peak_rabi(&self, samples: usize) -> Result<Vec<f64>> {
        let mut peak = vec![0.0f64; if self.kind() == ExcitationKind::Dipole { 1 } else { 2 }];
        for k in 0..=samples {
            let t = self.duration() * k as f64 / samples as f64;
            match self.drive(t)? {
                Drive::Dipole { omega, .. } => peak[0] = peak[0].max(omega.norm()),
                Drive::Quadrupole { omega_b, omega_r, .. } => {
                    peak[0] = peak[0].max(omega_b.norm());
                    peak[1] = peak[1].max(omega_r.norm());
                }
            }
        }
        Ok(peak)
    }
}

/// How the second pulse of each pair is placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrder {
    /// Every segment is a time-translated copy of the base pulse.
    #[default]
    Translated,
    /// The second pulse of each pair runs the base pulse backwards in time.
    Mirrored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub waveform: Waveform,
    /// Phase (rad) multiplying the phase-carrying Rabi term.
    pub phase: f64,
    pub mirrored: bool,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.waveform.duration()
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }

    fn local_time(&self, t: f64) -> f64 {
        let local = (t - self.start).clamp(0.0, self.duration());
        if self.mirrored {
            self.duration() - local
        } else {
            local
        }
    }
}

/// Contiguous sequence of phase-shifted pulse segments starting at t = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    segments: Vec<Segment>,
}

impl PulseSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one segment".into()));
        }
        let kind = segments[0].waveform.kind();
        let mut t = 0.0;
        for s in &segments {
            s.waveform.validate()?;
            if (s.start - t).abs() > 1e-12 * t.max(1.0) {
                return Err(Error::InvalidParameter(format!("segment starting at {} is not contiguous with {t}", s.start)));
            }
            if !s.phase.is_finite() {
                return Err(Error::InvalidParameter("segment phase must be finite".into()));
            }
            if s.waveform.kind() != kind {
                return Err(Error::InvalidParameter("segments mix excitation kinds".into()));
            }
            t = s.end();
        }
        Ok(Self { segments })
    }

    /// Copies of `base` back to back with the given phases.
    pub fn repeated(base: Waveform, phases: &[f64], order: SegmentOrder) -> Result<Self> {
        let d = base.duration();
        let segments = phases
            .iter()
            .enumerate()
            .map(|(k, &phase)| Segment {
                start: k as f64 * d,
                waveform: base,
                phase,
                mirrored: order == SegmentOrder::Mirrored && k % 2 == 1,
            })
            .collect();
        Self::new(segments)
    }

    pub fn single(base: Waveform) -> Result<Self> {
        Self::repeated(base, &[0.0], SegmentOrder::Translated)
    }

    /// Two identical pulses without relative phase (adiabatic double passage).
    pub fn double(base: Waveform) -> Result<Self> {
        Self::repeated(base, &[0.0, 0.0], SegmentOrder::Translated)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn kind(&self) -> ExcitationKind {
        self.segments[0].waveform.kind()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.last().map(Segment::end).unwrap_or(0.0)
    }

    /// Segment edges including 0 and the total duration.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.segments.iter().map(|s| s.start).collect();
        b.push(self.total_duration());
        b
    }

    /// Drive of segment `k` at global time `t`; `t` is clamped to the segment
    /// so that endpoint evaluations use the one-sided limit of that segment.
    pub fn drive_in_segment(&self, k: usize, t: f64) -> Result<Drive> {
        let s = &self.segments[k];
        Ok(s.waveform.drive(s.local_time(t))?.with_phase(s.phase))
    }

    pub fn segment_at(&self, t: f64) -> Result<usize> {
        let total = self.total_duration();
        if !(-WINDOW_SLACK..=total + WINDOW_SLACK).contains(&t) {
            return Err(Error::OutsideWindow { t, duration: total });
        }
        Ok(self.segments.iter().rposition(|s| s.start <= t).unwrap_or(0))
    }

    pub fn drive_at(&self, t: f64) -> Result<Drive> {
        self.drive_in_segment(self.segment_at(t)?, t)
    }

    /// Equivalent two-level `(Ω, Δ)` of segment `k` at global time `t`.
    pub fn two_level_in_segment(&self, k: usize, t: f64) -> Result<(f64, f64)> {
        let s = &self.segments[k];
        s.waveform.two_level(s.local_time(t))
    }
}

/// Four-segment gate schedule: phases `0, φ_r, φ_R, φ_R + φ_r`.
pub fn build_sequence(base: Waveform, phi_r: f64, phi_big_r: f64, order: SegmentOrder) -> Result<PulseSchedule> {
    PulseSchedule::repeated(base, &sequence_phases(phi_r, phi_big_r), order)
}

pub fn sequence_phases(phi_r: f64, phi_big_r: f64) -> [f64; 4] {
    [0.0, phi_r, phi_big_r, phi_big_r + phi_r]
}

/// Bounds and resolution for [`min_pulse_duration`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationSearch {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    /// Minimum final `|+⟩` population.
    pub min_transfer: f64,
    /// Allowed ratio of TQD peak to adiabatic peak Rabi frequency.
    pub max_peak_ratio: f64,
    pub peak_samples: usize,
}

impl Default for DurationSearch {
    fn default() -> Self {
        Self { lower: 0.002, upper: 1.0, tolerance: 1e-5, min_transfer: 0.99, max_peak_ratio: 1.1, peak_samples: 2000 }
    }
}

/// Final `|+⟩` population when the transitionless pulse drives the effective
/// two-level `|11⟩ ↔ |+⟩` transition (coupling √2·Ω̃) from `|11⟩`.
pub fn tqd_transfer_population(base: &Waveform) -> Result<f64> {
    let tqd = match *base {
        Waveform::Lcg(p) | Waveform::TqdDipole(p) => Waveform::TqdDipole(p),
        Waveform::Zchg(p) | Waveform::TqdQuadrupole(p) => Waveform::TqdQuadrupole(p),
        _ => return Err(Error::InvalidParameter("transfer check needs an LCG or ZCHG pulse".into())),
    };
    let h = DenseHamiltonian::new(2, vec![(0.0, tqd.duration())], move |_, t| {
        let (o, d) = tqd.two_level(t)?;
        let c = C64::new(0.5 * SQRT_2 * o, 0.0);
        ComplexMatrix::from_vec(2, 2, vec![C64::new(-0.5 * d, 0.0), c, c, C64::new(0.5 * d, 0.0)])
    });
    let traj = propagate_unitary(&h, &StateVector::basis(2, 0), &IntegratorConfig::default())?;
    Ok(traj.final_state.amplitudes()[1].norm_sqr())
}

fn duration_ok(base: &Waveform, duration: f64, cfg: &DurationSearch) -> Result<bool> {
    let adiabatic = base.adiabatic().with_duration(duration);
    let tqd = match adiabatic {
        Waveform::Lcg(p) => Waveform::TqdDipole(p),
        Waveform::Zchg(p) => Waveform::TqdQuadrupole(p),
        _ => return Err(Error::InvalidParameter("T_min needs an LCG or ZCHG pulse".into())),
    };
    let peak_a = adiabatic.peak_rabi(cfg.peak_samples)?;
    let peak_t = tqd.peak_rabi(cfg.peak_samples)?;
    if peak_t.iter().zip(&peak_a).any(|(t, a)| *t > cfg.max_peak_ratio * a) {
        return Ok(false);
    }
    Ok(tqd_transfer_population(&tqd)? > cfg.min_transfer)
}

/// Whether a TQD pulse of the given duration satisfies both the transfer and
/// the peak-Rabi criteria. Other parameters keep their ratio to the duration.
pub fn duration_feasible(base: &Waveform, duration: f64, cfg: &DurationSearch) -> Result<bool> {
    duration_ok(base, duration, cfg)
}

/// Shortest TQD pulse duration satisfying both criteria, by bisection.
pub fn min_pulse_duration(base: &Waveform, cfg: &DurationSearch) -> Result<f64> {
    let (mut lo, mut hi) = (cfg.lower, cfg.upper);
    if !duration_ok(base, hi, cfg)? {
        return Err(Error::NoFeasibleDuration { lower: cfg.lower, upper: cfg.upper });
    }
    if duration_ok(base, lo, cfg)? {
        return Ok(lo);
    }
    while hi - lo > cfg.tolerance {
        let mid = 0.5 * (lo + hi);
        if duration_ok(base, mid, cfg)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_lcg(duration: f64) -> LcgParams {
        LcgParams::reference(duration)
    }

    fn reference_zchg(duration: f64) -> ZchgParams {
        ZchgParams::reference(duration)
    }

    #[test]
    fn lcg_landmarks() {
        let p = reference_lcg(0.24);
        let (o, d) = lcg_eval(&p, 0.12).unwrap();
        assert!((o - p.omega0).abs() < 1e-12 && d.abs() < 1e-12);
        assert!((lcg_eval(&p, 0.0).unwrap().1 + p.delta0).abs() < 1e-9);
        assert!((lcg_eval(&p, 0.24).unwrap().1 - p.delta0).abs() < 1e-9);
        let (o, _) = lcg_eval(&p, 0.12 + p.tau).unwrap();
        assert!((o - p.omega0 / std::f64::consts::E).abs() < 1e-9);
        assert!(matches!(lcg_eval(&p, 0.3), Err(Error::OutsideWindow { .. })));
    }

    #[test]
    fn zchg_landmarks() {
        let p = reference_zchg(0.81);
        let (_, or, _) = zchg_eval(&p, 0.27).unwrap();
        assert!((or - p.omega_r0).abs() < 1e-9);
        let (ob, _, db) = zchg_eval(&p, 0.54).unwrap();
        assert!((ob - p.omega_b0).abs() < 1e-9);
        assert_eq!(db, p.delta_b);
        let (ob, _, _) = zchg_eval(&p, 0.54 - p.tau_b).unwrap();
        assert!((ob - p.omega_b0 / std::f64::consts::E).abs() < 1e-9);
        assert!(zchg_eval(&p, -0.1).is_err());
    }

    #[test]
    fn static_drive_is_its_own_tqd() {
        let jet = |_: f64| DriveJet { omega: 3.0, omega_dot: 0.0, delta: -2.0, delta_dot: 0.0 };
        let (o, d) = tqd_transform(jet, 0.1);
        assert!((o - 3.0).abs() < 1e-12 && (d + 2.0).abs() < 1e-9);
    }

    #[test]
    fn tqd_dipole_center_closed_form() {
        let p = reference_lcg(0.06);
        let (o, _) = tqd_dipole(&p, 0.03).unwrap();
        let delta_dot = 2.0 * p.delta0 / p.duration;
        let expect = (p.omega0.powi(2) + (delta_dot / (2.0 * p.omega0)).powi(2)).sqrt();
        assert!((o - expect).abs() / expect < 1e-9, "{o} vs {expect}");
    }

    #[test]
    fn quadrupole_equal_rabi_gives_zero_detuning() {
        let p = reference_zchg(0.2);
        // Ω_B and Ω_R cross at t = T/2 for equal amplitudes and widths.
        assert!(quadrupole_effective(&p, 0.1).delta.abs() < 1e-9);
    }

    #[test]
    fn static_quadrupole_round_trip() {
        let p = ZchgParams { tau_b: 1e6, tau_r: 1e6, ..reference_zchg(0.2) };
        let (ob, or, _) = tqd_quadrupole(&p, 0.05).unwrap();
        assert!((ob - p.omega_b0).abs() / p.omega_b0 < 1e-6);
        assert!((or - p.omega_r0).abs() / p.omega_r0 < 1e-6);
    }

    proptest! {
        #[test]
        fn tqd_dipole_dominates_adiabatic(frac in 0.0f64..=1.0, t in 0.03f64..0.5) {
            let p = reference_lcg(t);
            let (o, _) = lcg_eval(&p, frac * t).unwrap();
            let (ot, _) = tqd_dipole(&p, frac * t).unwrap();
            prop_assert!(ot >= o * (1.0 - 1e-12));
        }

        #[test]
        fn quadrupole_inversion_round_trip(frac in 0.0f64..=1.0, t in 0.1f64..1.0) {
            let p = reference_zchg(t);
            let s = frac * t;
            let (oe, de) = tqd_transform(|x| quadrupole_effective(&p, x), s);
            let (ob, or, db) = tqd_quadrupole(&p, s).unwrap();
            let scale = oe.abs().max(de.abs()).max(1.0);
            prop_assert!(((ob * ob - or * or) / (4.0 * db) - de).abs() <= 1e-9 * scale);
            prop_assert!((ob * or / (2.0 * db) - oe / SQRT_2).abs() <= 1e-9 * scale);
        }

        #[test]
        fn schedule_is_contiguous_with_requested_phases(pr in 0.0f64..6.28, pbr in 0.0f64..6.28, t in 0.01f64..0.3) {
            let s = build_sequence(Waveform::TqdDipole(reference_lcg(t)), pr, pbr, SegmentOrder::Translated).unwrap();
            prop_assert_eq!(s.segments().len(), 4);
            prop_assert!((s.total_duration() - 4.0 * t).abs() < 1e-12);
            let phases: Vec<f64> = s.segments().iter().map(|x| x.phase).collect();
            prop_assert_eq!(phases, sequence_phases(pr, pbr).to_vec());
            for w in s.segments().windows(2) {
                prop_assert!((w[0].end() - w[1].start).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_phase_sequence_has_identical_segments() {
        let base = Waveform::Lcg(reference_lcg(0.06));
        let s = build_sequence(base, 0.0, 0.0, SegmentOrder::Translated).unwrap();
        for k in 0..4 {
            let (o, d) = match (s.drive_in_segment(k, k as f64 * 0.06 + 0.017).unwrap(), base.drive(0.017).unwrap()) {
                (Drive::Dipole { omega: a, delta: da }, Drive::Dipole { omega: b, delta: db }) => ((a - b).norm(), (da - db).abs()),
                _ => unreachable!(),
            };
            assert!(o < 1e-9 && d < 1e-9);
        }
    }

    #[test]
    fn mirrored_segments_run_backwards() {
        let base = Waveform::Lcg(reference_lcg(0.06));
        let s = build_sequence(base, 0.0, 0.0, SegmentOrder::Mirrored).unwrap();
        match (s.drive_in_segment(1, 0.06 + 0.01).unwrap(), base.drive(0.05).unwrap()) {
            (Drive::Dipole { omega: a, delta: da }, Drive::Dipole { omega: b, delta: db }) => {
                assert!((a - b).norm() < 1e-9 && (da - db).abs() < 1e-9)
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn segment_phase_rides_on_rabi_term() {
        let base = Waveform::ConstantDipole { duration: 1.0, omega: 2.0, delta: 0.0 };
        let s = build_sequence(base, 0.4, 1.0, SegmentOrder::Translated).unwrap();
        match s.drive_at(3.5).unwrap() {
            Drive::Dipole { omega, .. } => assert!((omega - C64::from_polar(2.0, 1.4)).norm() < 1e-12),
            _ => unreachable!(),
        }
    }

    #[test]
    fn min_duration_agrees_with_linear_scan() {
        let base = Waveform::Lcg(reference_lcg(0.24));
        let cfg = DurationSearch { lower: 0.01, upper: 0.06, tolerance: 1e-4, ..Default::default() };
        let t_min = min_pulse_duration(&base, &cfg).unwrap();
        let mut scan = None;
        let mut t = 0.01;
        while t <= 0.06 {
            if duration_feasible(&base, t, &cfg).unwrap() {
                scan = Some(t);
                break;
            }
            t += 1e-3;
        }
        let scan = scan.expect("scan finds a feasible duration");
        assert!((t_min - scan).abs() <= 1e-3 + 1e-4, "bisection {t_min} vs scan {scan}");
    }

    #[test]
    fn strong_drive_hits_lower_bound() {
        let p = LcgParams { duration: 0.1, omega0: from_mhz(2000.0), tau: 0.266 * 0.1, delta0: from_mhz(4000.0) };
        let cfg = DurationSearch { lower: 0.02, upper: 0.5, ..Default::default() };
        assert_eq!(min_pulse_duration(&Waveform::Lcg(p), &cfg).unwrap(), 0.02);
    }
}
