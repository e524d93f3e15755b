//! Five-level atom model, decay channels, laser geometry, and the single- and
//! two-atom Hamiltonians for one-photon (dipole) and two-photon (quadrupole)
//! Rydberg excitation.

use crate::linalg::{kron, ComplexMatrix, SparseMatrix, C64, ZERO};
use crate::noise::AtomNoise;
use crate::units::from_mhz;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const N_LEVELS: usize = 5;
pub const DIM: usize = N_LEVELS * N_LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Zero = 0,
    One = 1,
    G = 2,
    P = 3,
    R = 4,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Zero, Level::One, Level::G, Level::P, Level::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::Zero => "0",
            Level::One => "1",
            Level::G => "g",
            Level::P => "p",
            Level::R => "r",
        }
    }
}

/// Two-atom basis index of `|ab⟩`, atom one first.
pub fn pair_index(a: Level, b: Level) -> usize {
    a.index() * N_LEVELS + b.index()
}

/// Basis label such as `"1r"` for a two-atom index.
pub fn pair_label(index: usize) -> String {
    let a = Level::ALL[index / N_LEVELS];
    let b = Level::ALL[index % N_LEVELS];
    format!("{}{}", a.label(), b.label())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationKind {
    Dipole,
    Quadrupole,
}

/// Radiative decay `from → to` at `rate = b·γ` (rad/μs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayChannel {
    pub from: Level,
    pub to: Level,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserGeometry {
    pub name: String,
    pub wavelength_um: f64,
    pub waist_um: f64,
    pub rayleigh_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomModel {
    pub excitation: ExcitationKind,
    /// Blockade shift B in rad/μs.
    pub blockade: f64,
    pub decay_channels: Vec<DecayChannel>,
    /// One laser for dipole excitation; blue then red for quadrupole.
    pub lasers: Vec<LaserGeometry>,
    /// Effective wave-vector in 1/μm.
    pub k_eff: f64,
    pub t2_doppler_us: f64,
    pub t2_magnetic_us: f64,
    /// Relative intensity fluctuation per laser.
    pub intensity_sigma: Vec<f64>,
    /// Position spread (σx, σy, σz) in μm.
    pub position_sigma: [f64; 3],
}

impl AtomModel {
    /// Total decay rate out of `level`.
    pub fn total_decay(&self, level: Level) -> f64 {
        self.decay_channels.iter().filter(|c| c.from == level).map(|c| c.rate).sum()
    }

    pub fn n_lasers(&self) -> usize {
        self.lasers.len()
    }

    /// Copy of the model with all decay channels removed.
    pub fn without_decay(&self) -> Self {
        Self { decay_channels: Vec::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.excitation {
            ExcitationKind::Dipole => 1,
            ExcitationKind::Quadrupole => 2,
        };
        if self.lasers.len() != expected || self.intensity_sigma.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{:?} excitation needs {expected} laser(s)",
                self.excitation
            )));
        }
        let positive = [self.blockade, self.k_eff, self.t2_doppler_us, self.t2_magnetic_us];
        if positive.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("blockade, k_eff and T2 values must be positive".into()));
        }
        for l in &self.lasers {
            if !(l.waist_um > 0.0 && l.rayleigh_um > 0.0 && l.wavelength_um > 0.0) {
                return Err(Error::InvalidParameter(format!("laser {} has non-positive geometry", l.name)));
            }
        }
        if self.intensity_sigma.iter().chain(&self.position_sigma).any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidParameter("noise widths must be non-negative".into()));
        }
        for c in &self.decay_channels {
            let downhill = match c.from {
                Level::R => c.to != Level::R,
                Level::P => !matches!(c.to, Level::P | Level::R),
                _ => false,
            };
            if !(c.rate >= 0.0) || !downhill {
                return Err(Error::InvalidParameter(format!("invalid decay channel {:?}", c)));
            }
        }
        Ok(())
    }
}

fn channels(from: Level, gamma: f64, branching: &[(Level, f64)]) -> Vec<DecayChannel> {
    branching.iter().map(|&(to, b)| DecayChannel { from, to, rate: b * gamma }).collect()
}

/// Reference parameters for Cs driven to n=112 by a 319 nm laser (dipole) or
/// by 459 nm + 1038 nm lasers through 7p½ (quadrupole).
/// Decay rates are inverse radiative lifetimes in μs⁻¹.
pub fn default_model(kind: ExcitationKind) -> AtomModel {
    match kind {
        ExcitationKind::Dipole => {
            let gamma_r = 1.0 / 593.0;
            AtomModel {
                excitation: kind,
                blockade: from_mhz(3000.0),
                decay_channels: channels(
                    Level::R,
                    gamma_r,
                    &[(Level::Zero, 1.0 / 16.0), (Level::One, 1.0 / 16.0), (Level::G, 7.0 / 8.0)],
                ),
                lasers: vec![LaserGeometry {
                    name: "uv".into(),
                    wavelength_um: 0.319,
                    waist_um: 2.5,
                    rayleigh_um: 61.5,
                }],
                k_eff: 19.7,
                t2_doppler_us: 4.0,
                t2_magnetic_us: 50.0,
                intensity_sigma: vec![0.05],
                position_sigma: [0.24, 0.24, 0.92],
            }
        }
        ExcitationKind::Quadrupole => {
            let gamma_r = 1.0 / 367.0;
            let gamma_p = 1.0 / 0.155;
            let mut decay = channels(
                Level::R,
                gamma_r,
                &[
                    (Level::Zero, 1.0 / 32.0),
                    (Level::One, 1.0 / 32.0),
                    (Level::G, 7.0 / 16.0),
                    (Level::P, 1.0 / 2.0),
                ],
            );
            decay.extend(channels(
                Level::P,
                gamma_p,
                &[(Level::Zero, 1.0 / 16.0), (Level::One, 1.0 / 16.0), (Level::G, 7.0 / 8.0)],
            ));
            AtomModel {
                excitation: kind,
                blockade: from_mhz(2000.0),
                decay_channels: decay,
                lasers: vec![
                    LaserGeometry { name: "blue".into(), wavelength_um: 0.459, waist_um: 3.0, rayleigh_um: 61.6 },
                    LaserGeometry { name: "red".into(), wavelength_um: 1.038, waist_um: 3.0, rayleigh_um: 27.2 },
                ],
                k_eff: 7.63,
                t2_doppler_us: 10.5,
                t2_magnetic_us: 34.0,
                intensity_sigma: vec![0.01, 0.01],
                position_sigma: [0.24, 0.24, 0.92],
            }
        }
    }
}

/// Instantaneous laser drive of one atom. Rabi terms are complex so that
/// segment phases ride on them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Drive {
    Dipole { omega: C64, delta: f64 },
    /// The two-photon detuning Δ_BR is held at zero.
    Quadrupole { omega_b: C64, omega_r: C64, delta_b: f64 },
}

impl Drive {
    pub fn zero(kind: ExcitationKind) -> Self {
        match kind {
            ExcitationKind::Dipole => Drive::Dipole { omega: ZERO, delta: 0.0 },
            ExcitationKind::Quadrupole => Drive::Quadrupole { omega_b: ZERO, omega_r: ZERO, delta_b: 0.0 },
        }
    }

    pub fn kind(&self) -> ExcitationKind {
        match self {
            Drive::Dipole { .. } => ExcitationKind::Dipole,
            Drive::Quadrupole { .. } => ExcitationKind::Quadrupole,
        }
    }

    /// Multiplies the phase-carrying coupling (the single laser, or the blue
    /// laser) by `e^{iφ}`.
    pub fn with_phase(self, phi: f64) -> Self {
        let ph = C64::from_polar(1.0, phi);
        match self {
            Drive::Dipole { omega, delta } => Drive::Dipole { omega: omega * ph, delta },
            Drive::Quadrupole { omega_b, omega_r, delta_b } => {
                Drive::Quadrupole { omega_b: omega_b * ph, omega_r, delta_b }
            }
        }
    }
}

/// Nonzero entries `(row, col, value)` of the 5×5 single-atom Hamiltonian.
pub fn single_atom_entries(
    model: &AtomModel,
    drive: &Drive,
    noise: &AtomNoise,
    out: &mut Vec<(usize, usize, C64)>,
) -> Result<()> {
    out.clear();
    if drive.kind() != model.excitation {
        return Err(Error::InvalidParameter(format!(
            "{:?} drive applied to a {:?} model",
            drive.kind(),
            model.excitation
        )));
    }
    let (one, p, r) = (Level::One.index(), Level::P.index(), Level::R.index());
    let mut push = |i: usize, j: usize, v: C64| {
        if v != ZERO {
            out.push((i, j, v));
        }
    };
    match *drive {
        Drive::Dipole { omega, delta } => {
            let c = omega * (0.5 * noise.spatial[0] * noise.intensity[0]);
            push(one, r, c);
            push(r, one, c.conj());
            let d = 0.5 * (delta + noise.detuning_shift);
            push(one, one, C64::new(-d, 0.0));
            push(r, r, C64::new(d, 0.0));
        }
        Drive::Quadrupole { omega_b, omega_r, delta_b } => {
            let cb = omega_b * (0.5 * noise.spatial[0] * noise.intensity[0]);
            let cr = omega_r * (0.5 * noise.spatial[1] * noise.intensity[1]);
            push(one, p, cb);
            push(p, one, cb.conj());
            push(p, r, cr);
            push(r, p, cr.conj());
            push(p, p, C64::new(delta_b, 0.0));
            push(r, r, C64::new(noise.detuning_shift, 0.0));
        }
    }
    Ok(())
}

pub fn single_atom_hamiltonian(model: &AtomModel, drive: &Drive, noise: &AtomNoise) -> Result<ComplexMatrix> {
    let mut entries = Vec::with_capacity(8);
    single_atom_entries(model, drive, noise, &mut entries)?;
    let mut h = ComplexMatrix::zeros(N_LEVELS, N_LEVELS);
    for (i, j, v) in entries {
        h[(i, j)] += v;
    }
    Ok(h)
}

/// Fills `out` with `H₁⊗𝟙 + 𝟙⊗H₂ + B|rr⟩⟨rr|` in sparse form.
pub fn two_atom_sparse(
    model: &AtomModel,
    drives: [&Drive; 2],
    noise: [&AtomNoise; 2],
    scratch: &mut Vec<(usize, usize, C64)>,
    out: &mut SparseMatrix,
) -> Result<()> {
    out.clear();
    single_atom_entries(model, drives[0], noise[0], scratch)?;
    for &(i, j, v) in scratch.iter() {
        for k in 0..N_LEVELS {
            out.push(i * N_LEVELS + k, j * N_LEVELS + k, v);
        }
    }
    single_atom_entries(model, drives[1], noise[1], scratch)?;
    for &(i, j, v) in scratch.iter() {
        for k in 0..N_LEVELS {
            out.push(k * N_LEVELS + i, k * N_LEVELS + j, v);
        }
    }
    let rr = pair_index(Level::R, Level::R);
    out.push(rr, rr, C64::new(model.blockade, 0.0));
    Ok(())
}

pub fn two_atom_hamiltonian(model: &AtomModel, drives: [&Drive; 2], noise: [&AtomNoise; 2]) -> Result<ComplexMatrix> {
    let h1 = single_atom_hamiltonian(model, drives[0], noise[0])?;
    let h2 = single_atom_hamiltonian(model, drives[1], noise[1])?;
    let id = ComplexMatrix::identity(N_LEVELS);
    let mut h = kron(&h1, &id).add(&kron(&id, &h2))?;
    let rr = pair_index(Level::R, Level::R);
    h[(rr, rr)] += C64::new(model.blockade, 0.0);
    Ok(h)
}

/// Two-atom collapse operators `√(b·γ)|k⟩⟨j|⊗𝟙` and `𝟙⊗√(b·γ)|k⟩⟨j|`, in
/// channel order with atom one first for each channel.
pub fn collapse_operators(model: &AtomModel) -> Vec<ComplexMatrix> {
    collapse_operators_sparse(model).iter().map(SparseMatrix::to_dense).collect()
}

pub fn collapse_operators_sparse(model: &AtomModel) -> Vec<SparseMatrix> {
    let mut ops = Vec::with_capacity(2 * model.decay_channels.len());
    for ch in &model.decay_channels {
        let amp = C64::new(ch.rate.sqrt(), 0.0);
        let (j, k) = (ch.from.index(), ch.to.index());
        let mut first = SparseMatrix::new(DIM);
        let mut second = SparseMatrix::new(DIM);
        for m in 0..N_LEVELS {
            first.push(k * N_LEVELS + m, j * N_LEVELS + m, amp);
            second.push(m * N_LEVELS + k, m * N_LEVELS + j, amp);
        }
        ops.push(first);
        ops.push(second);
    }
    ops
}
