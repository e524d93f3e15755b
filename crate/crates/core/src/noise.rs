//! Quasi-static technical noise: atomic position spread, laser intensity
//! fluctuation, Doppler and magnetic detuning shifts. Also the Monte-Carlo
//! ensemble driver with per-run deterministic random streams.

use crate::atom::{AtomModel, LaserGeometry};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Multiplicative Rabi factors per laser and additive Rydberg detuning for
/// one atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomNoise {
    pub spatial: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Δ_D + Δ_m in rad/μs.
    pub detuning_shift: f64,
}

impl AtomNoise {
    pub fn ideal(n_lasers: usize) -> Self {
        Self { spatial: vec![1.0; n_lasers], intensity: vec![1.0; n_lasers], detuning_shift: 0.0 }
    }

    pub fn is_ideal(&self) -> bool {
        self.detuning_shift == 0.0 && self.spatial.iter().chain(&self.intensity).all(|&x| x == 1.0)
    }
}

/// One draw of all imperfections for both atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub positions_um: [[f64; 3]; 2],
    pub doppler_shift: [f64; 2],
    pub magnetic_shift: [f64; 2],
    pub atoms: [AtomNoise; 2],
}

impl NoiseRealization {
    pub fn ideal(n_lasers: usize) -> Self {
        Self {
            positions_um: [[0.0; 3]; 2],
            doppler_shift: [0.0; 2],
            magnetic_shift: [0.0; 2],
            atoms: [AtomNoise::ideal(n_lasers), AtomNoise::ideal(n_lasers)],
        }
    }
}

/// Which imperfections are sampled. Disabled sources stay at their ideal value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseToggles {
    pub position: bool,
    pub intensity: bool,
    pub doppler: bool,
    pub magnetic: bool,
}

impl NoiseToggles {
    pub const ALL: Self = Self { position: true, intensity: true, doppler: true, magnetic: true };
    pub const NONE: Self = Self { position: false, intensity: false, doppler: false, magnetic: false };

    pub fn any(&self) -> bool {
        self.position || self.intensity || self.doppler || self.magnetic
    }
}

impl Default for NoiseToggles {
    fn default() -> Self {
        Self::ALL
    }
}

/// Gaussian-beam intensity profile factor at position `r` (μm).
pub fn spatial_form_factor(r: [f64; 3], laser: &LaserGeometry) -> f64 {
    let axial = 1.0 + (r[2] / laser.rayleigh_um).powi(2);
    (-(r[0] * r[0] + r[1] * r[1]) / (laser.waist_um * laser.waist_um * axial)).exp() / axial.sqrt()
}

/// Detuning noise widths (σ_D, σ_m) = √2/T₂ in rad/μs.
pub fn dephasing_sigmas(model: &AtomModel) -> (f64, f64) {
    (2f64.sqrt() / model.t2_doppler_us, 2f64.sqrt() / model.t2_magnetic_us)
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// Draws an independent realization for both atoms.
pub fn sample_noise<R: Rng>(model: &AtomModel, toggles: NoiseToggles, rng: &mut R) -> NoiseRealization {
    let n = model.n_lasers();
    let (sigma_d, sigma_m) = dephasing_sigmas(model);
    let mut out = NoiseRealization::ideal(n);
    for a in 0..2 {
        if toggles.position {
            let r = [
                gaussian(rng, model.position_sigma[0]),
                gaussian(rng, model.position_sigma[1]),
                gaussian(rng, model.position_sigma[2]),
            ];
            out.positions_um[a] = r;
            for (l, laser) in model.lasers.iter().enumerate() {
                out.atoms[a].spatial[l] = spatial_form_factor(r, laser);
            }
        }
        if toggles.intensity {
            for l in 0..n {
                let sigma = model.intensity_sigma[l];
                let f = loop {
                    let radicand = 1.0 + gaussian(rng, sigma);
                    if radicand >= 0.0 {
                        break radicand.sqrt();
                    }
                };
                out.atoms[a].intensity[l] = f;
            }
        }
        if toggles.doppler {
            out.doppler_shift[a] = gaussian(rng, sigma_d);
        }
        if toggles.magnetic {
            out.magnetic_shift[a] = gaussian(rng, sigma_m);
        }
        out.atoms[a].detuning_shift = out.doppler_shift[a] + out.magnetic_shift[a];
    }
    out
}

/// Random stream for run `index` of an ensemble seeded with `seed`.
pub fn run_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_runs: usize,
    pub seed: u64,
    pub fidelities: Vec<f64>,
    pub mean_f: f64,
    /// Sample standard deviation divided by √n.
    pub std_error: f64,
}

impl McSummary {
    pub fn from_fidelities(seed: u64, fidelities: Vec<f64>) -> Self {
        let n = fidelities.len();
        let mean = fidelities.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { n_runs: n, seed, fidelities, mean_f: mean, std_error }
    }
}

/// Runs `n_runs` independent evaluations of `run`, each with a freshly
/// sampled realization from its own `(seed, index)` stream. Runs execute on
/// the current rayon pool; results are gathered in index order.
pub fn run_monte_carlo<F>(
    model: &AtomModel,
    toggles: NoiseToggles,
    n_runs: usize,
    seed: u64,
    run: F,
) -> Result<McSummary>
where
    F: Fn(&NoiseRealization) -> Result<f64> + Sync,
{
    if n_runs == 0 {
        return Err(Error::InvalidParameter("Monte-Carlo ensemble needs at least one run".into()));
    }
    let fidelities = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = run_rng(seed, i);
            let realization = sample_noise(model, toggles, &mut rng);
            run(&realization).map_err(|e| Error::RunFailed { run: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McSummary::from_fidelities(seed, fidelities))
}
