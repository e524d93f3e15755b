//! Experiment configuration files (TOML). Every quantity carries its unit in
//! the key name: `_us` for microseconds, `_mhz` for value/2π in MHz, `_pi`
//! for phases in units of π. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ctqd::atom::{default_model, AtomModel, ExcitationKind};
use ctqd::dynamics::IntegratorConfig;
use ctqd::gate::{BellTarget, GateDesign, NoiseSettings};
use ctqd::noise::NoiseToggles;
use ctqd::optimize::{DeConfig, GateFamily, PhaseSearch, ResourceSearch};
use ctqd::pulse::{LcgParams, SegmentOrder, Waveform, ZchgParams};
use ctqd::units::from_mhz;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Excitation {
    Dipole,
    Quadrupole,
}

impl From<Excitation> for ExcitationKind {
    fn from(e: Excitation) -> Self {
        match e {
            Excitation::Dipole => ExcitationKind::Dipole,
            Excitation::Quadrupole => ExcitationKind::Quadrupole,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Two adiabatic pulses (rapid passage or STIRAP).
    Adiabatic,
    /// Four phase-shifted transitionless pulses.
    Ctqd,
    /// Zero drive for the same duration.
    Idle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub excitation: Excitation,
    pub gate: GateKind,
    pub gate_time_us: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    pub scan: Option<ScanSection>,
    pub optimize: Option<OptimizeSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub blockade_mhz: Option<f64>,
}

/// Pulse parameters. Omitted values take the reference set of the chosen
/// excitation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub omega0_mhz: Option<f64>,
    pub delta0_mhz: Option<f64>,
    pub tau_ratio: Option<f64>,
    pub omega_b0_mhz: Option<f64>,
    pub omega_r0_mhz: Option<f64>,
    pub delta_b_mhz: Option<f64>,
    pub tau_b_ratio: Option<f64>,
    pub tau_r_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Translated,
    Mirrored,
}

impl From<Order> for SegmentOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::Translated => SegmentOrder::Translated,
            Order::Mirrored => SegmentOrder::Mirrored,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub phi_r_pi: Option<f64>,
    pub phi_big_r_pi: Option<f64>,
    /// Search the phase pair instead of taking it from the file.
    #[serde(default)]
    pub search: bool,
    #[serde(default = "default_grid")]
    pub search_grid: usize,
    #[serde(default = "default_order")]
    pub order: Order,
}

fn default_grid() -> usize {
    200
}

fn default_order() -> Order {
    Order::Translated
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self { phi_r_pi: None, phi_big_r_pi: None, search: false, search_grid: default_grid(), order: default_order() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub decay: bool,
    #[serde(default)]
    pub position: bool,
    #[serde(default)]
    pub intensity: bool,
    #[serde(default)]
    pub doppler: bool,
    #[serde(default)]
    pub magnetic: bool,
    /// Monte-Carlo runs with the enabled imperfections; 0 skips the ensemble.
    #[serde(default)]
    pub mc_runs: usize,
    /// Also run once with decay and no technical noise.
    #[serde(default)]
    pub decay_only_run: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            decay: false,
            position: false,
            intensity: false,
            doppler: false,
            magnetic: false,
            mc_runs: 0,
            decay_only_run: false,
        }
    }
}

impl NoiseSection {
    pub fn settings(&self) -> NoiseSettings {
        NoiseSettings {
            decay: self.decay,
            toggles: NoiseToggles {
                position: self.position,
                intensity: self.intensity,
                doppler: self.doppler,
                magnetic: self.magnetic,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_step")]
    pub step_us: f64,
    #[serde(default = "default_phase_step")]
    pub max_phase_per_step_rad: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
}

fn default_step() -> f64 {
    IntegratorConfig::default().step
}

fn default_phase_step() -> f64 {
    IntegratorConfig::default().max_phase_per_step
}

fn default_sample_every() -> usize {
    IntegratorConfig::default().sample_every
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self { step_us: default_step(), max_phase_per_step_rad: default_phase_step(), sample_every: default_sample_every() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    /// Fidelity against gate time.
    GateTime,
    /// Fidelity against pulse amplitude at the configured gate time.
    OmegaMax,
    /// Smallest peak Rabi frequency reaching `target_f0` at each gate time.
    IsoFidelity,
    /// Shortest adiabatic and cTQD gate times at each amplitude.
    Speedup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub variable: ScanVariable,
    pub gate_times_us: Option<Vec<f64>>,
    pub omega_max_mhz: Option<Vec<f64>>,
    pub target_f0: Option<f64>,
}

impl ScanSection {
    /// Grid values in the scan's own unit (μs or MHz).
    pub fn grid(&self) -> Result<&[f64]> {
        let (grid, key) = match self.variable {
            ScanVariable::GateTime | ScanVariable::IsoFidelity => (&self.gate_times_us, "scan.gate_times_us"),
            ScanVariable::OmegaMax | ScanVariable::Speedup => (&self.omega_max_mhz, "scan.omega_max_mhz"),
        };
        let g = grid.as_deref().with_context(|| format!("{key} is required for this scan variable"))?;
        if g.is_empty() || g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            bail!("{key} must be a non-empty list of positive numbers");
        }
        Ok(g)
    }

    pub fn target(&self) -> Result<f64> {
        let t = self.target_f0.context("scan.target_f0 is required for this scan variable")?;
        if !(t > 0.0 && t < 1.0) {
            bail!("scan.target_f0 must lie in (0, 1), got {t}");
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeTarget {
    /// Differential evolution over the adiabatic pulse domain.
    Adiabatic,
    /// Grid and local search of the sequence phase pair.
    Phases,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub target: OptimizeTarget,
    pub generations: Option<usize>,
    pub population: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gate_time_us > 0.0) || !self.gate_time_us.is_finite() {
            bail!("gate_time_us must be positive, got {}", self.gate_time_us);
        }
        let p = &self.pulse;
        let (own, foreign) = match self.excitation {
            Excitation::Dipole => (
                [("omega0_mhz", p.omega0_mhz), ("delta0_mhz", p.delta0_mhz), ("tau_ratio", p.tau_ratio)].to_vec(),
                [
                    ("omega_b0_mhz", p.omega_b0_mhz),
                    ("omega_r0_mhz", p.omega_r0_mhz),
                    ("delta_b_mhz", p.delta_b_mhz),
                    ("tau_b_ratio", p.tau_b_ratio),
                    ("tau_r_ratio", p.tau_r_ratio),
                ]
                .to_vec(),
            ),
            Excitation::Quadrupole => (
                [
                    ("omega_b0_mhz", p.omega_b0_mhz),
                    ("omega_r0_mhz", p.omega_r0_mhz),
                    ("delta_b_mhz", p.delta_b_mhz),
                    ("tau_b_ratio", p.tau_b_ratio),
                    ("tau_r_ratio", p.tau_r_ratio),
                ]
                .to_vec(),
                [("omega0_mhz", p.omega0_mhz), ("delta0_mhz", p.delta0_mhz), ("tau_ratio", p.tau_ratio)].to_vec(),
            ),
        };
        if let Some((k, _)) = foreign.iter().find(|(_, v)| v.is_some()) {
            bail!("pulse.{k} does not apply to {:?} excitation", self.excitation);
        }
        if let Some((k, v)) = own.iter().find(|(_, v)| v.is_some_and(|x| !(x > 0.0) || !x.is_finite())) {
            bail!("pulse.{k} must be positive, got {}", v.unwrap());
        }
        if let Some(b) = self.model.blockade_mhz {
            if !(b > 0.0) {
                bail!("model.blockade_mhz must be positive, got {b}");
            }
        }
        let s = &self.sequence;
        let literal = s.phi_r_pi.is_some() || s.phi_big_r_pi.is_some();
        match self.gate {
            GateKind::Ctqd => {
                if s.search && literal {
                    bail!("sequence.search conflicts with sequence.phi_r_pi / sequence.phi_big_r_pi");
                }
                if !s.search && (s.phi_r_pi.is_none() || s.phi_big_r_pi.is_none()) {
                    bail!("a ctqd gate needs sequence.phi_r_pi and sequence.phi_big_r_pi, or sequence.search = true");
                }
                if s.search_grid == 0 {
                    bail!("sequence.search_grid must be positive");
                }
            }
            _ if literal || s.search => bail!("the [sequence] phases only apply to ctqd gates"),
            _ => {}
        }
        let i = &self.integrator;
        if !(i.step_us > 0.0) || !(i.max_phase_per_step_rad > 0.0) || i.sample_every == 0 {
            bail!("integrator settings must be positive");
        }
        if self.noise.mc_runs > 0 && !self.noise.settings().toggles.any() && !self.noise.decay {
            bail!("noise.mc_runs > 0 needs at least one imperfection enabled");
        }
        if let Some(scan) = &self.scan {
            scan.grid()?;
            match scan.variable {
                ScanVariable::IsoFidelity | ScanVariable::Speedup => {
                    scan.target()?;
                    if self.excitation != Excitation::Dipole {
                        bail!("{:?} scans are defined for dipole excitation only", scan.variable);
                    }
                    if scan.variable == ScanVariable::IsoFidelity && self.gate == GateKind::Idle {
                        bail!("an iso-fidelity scan needs an adiabatic or ctqd gate");
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ExcitationKind {
        self.excitation.into()
    }

    pub fn model(&self) -> AtomModel {
        let mut m = default_model(self.kind());
        if let Some(b) = self.model.blockade_mhz {
            m.blockade = from_mhz(b);
        }
        m
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            step: self.integrator.step_us,
            max_phase_per_step: self.integrator.max_phase_per_step_rad,
            sample_every: self.integrator.sample_every,
            record_states: true,
        }
    }

    fn pulses(&self) -> usize {
        match self.gate {
            GateKind::Adiabatic | GateKind::Idle => 2,
            GateKind::Ctqd => 4,
        }
    }

    pub fn lcg(&self, pulse_duration: f64) -> LcgParams {
        let r = LcgParams::reference(pulse_duration);
        let p = &self.pulse;
        LcgParams {
            duration: pulse_duration,
            omega0: p.omega0_mhz.map_or(r.omega0, from_mhz),
            tau: p.tau_ratio.map_or(r.tau, |x| x * pulse_duration),
            delta0: p.delta0_mhz.map_or(r.delta0, from_mhz),
        }
    }

    pub fn zchg(&self, pulse_duration: f64) -> ZchgParams {
        let r = ZchgParams::reference(pulse_duration);
        let p = &self.pulse;
        ZchgParams {
            duration: pulse_duration,
            omega_b0: p.omega_b0_mhz.map_or(r.omega_b0, from_mhz),
            omega_r0: p.omega_r0_mhz.map_or(r.omega_r0, from_mhz),
            tau_b: p.tau_b_ratio.map_or(r.tau_b, |x| x * pulse_duration),
            tau_r: p.tau_r_ratio.map_or(r.tau_r, |x| x * pulse_duration),
            delta_b: p.delta_b_mhz.map_or(r.delta_b, from_mhz),
        }
    }

    /// Single-pulse waveform for a gate of duration `gate_time`.
    pub fn base_waveform(&self, gate_time: f64) -> Waveform {
        let t = gate_time / self.pulses() as f64;
        match (self.gate, self.excitation) {
            (GateKind::Adiabatic, Excitation::Dipole) => Waveform::Lcg(self.lcg(t)),
            (GateKind::Adiabatic, Excitation::Quadrupole) => Waveform::Zchg(self.zchg(t)),
            (GateKind::Ctqd, Excitation::Dipole) => Waveform::TqdDipole(self.lcg(t)),
            (GateKind::Ctqd, Excitation::Quadrupole) => Waveform::TqdQuadrupole(self.zchg(t)),
            (GateKind::Idle, Excitation::Dipole) => Waveform::ConstantDipole { duration: t, omega: 0.0, delta: 0.0 },
            (GateKind::Idle, Excitation::Quadrupole) => {
                Waveform::ConstantQuadrupole { duration: t, omega_b: 0.0, omega_r: 0.0, delta_b: 0.0 }
            }
        }
    }

    pub fn phase_search(&self) -> PhaseSearch {
        PhaseSearch { grid: self.sequence.search_grid, ..PhaseSearch::default() }
    }

    /// Gate design with explicit sequence phases. For a searched cTQD
    /// sequence the caller supplies the found pair.
    pub fn design(&self, gate_time: f64, searched: Option<(f64, f64)>) -> Result<GateDesign> {
        let base = self.base_waveform(gate_time);
        let order: SegmentOrder = self.sequence.order.into();
        Ok(match self.gate {
            GateKind::Adiabatic => GateDesign::adiabatic(base),
            GateKind::Ctqd => {
                let (r, big_r) = match (searched, self.sequence.phi_r_pi, self.sequence.phi_big_r_pi) {
                    (Some(p), _, _) => p,
                    (None, Some(a), Some(b)) => (a * PI, b * PI),
                    _ => bail!("the cTQD phase pair has not been searched yet"),
                };
                GateDesign::ctqd(base, r, big_r, order)
            }
            GateKind::Idle => {
                GateDesign { base, phases: vec![0.0; 2], order, target: BellTarget::B01 }
            }
        })
    }

    pub fn resource_search(&self, family: GateFamily, target: f64, speedup: bool) -> ResourceSearch {
        let mut s =
            if speedup { ResourceSearch::for_speedup(family, target) } else { ResourceSearch::new(family, target) };
        let r = self.lcg(1.0);
        s.delta0 = r.delta0;
        s.tau_ratio = r.tau;
        s.order = self.sequence.order.into();
        s.phase_search.grid = self.sequence.search_grid.min(s.phase_search.grid);
        s
    }

    pub fn de_config(&self, seed: u64) -> DeConfig {
        let dim = match self.excitation {
            Excitation::Dipole => 4,
            Excitation::Quadrupole => 6,
        };
        let mut de = DeConfig::for_dim(dim, seed);
        if let Some(o) = &self.optimize {
            if let Some(g) = o.generations {
                de.max_generations = g;
            }
            if let Some(p) = o.population {
                de.population_size = p;
            }
        }
        de
    }
}

/// Parsed configuration together with the SHA-256 of the file bytes.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let config = ExperimentConfig::parse(text).with_context(|| format!("in {}", path.display()))?;
    Ok(LoadedConfig { config, hash: hex::encode(Sha256::digest(&bytes)) })
}
