use std::collections::HashSet;
use std::path::Path;
use std::sync::mpsc::Sender;

use anyhow::{bail, Context, Result};
use ctqd::atom::{pair_index, Drive, Level};
use ctqd::gate::{
    evaluate, intrinsic, intrinsic_trajectory, monte_carlo, phase_relation_series, realistic_fidelity, EvaluationPlan,
    GateDesign, GateReport, MonteCarloPlan,
};
use ctqd::fit::{fit_logistic, fit_power_law, FitResult};
use ctqd::noise::NoiseRealization;
use ctqd::optimize::{
    in_units_of_pi, min_gate_time_search, min_omega_search, optimize_phases, search_adiabatic_parameters, DeResult,
    GateFamily, PhaseSearchResult,
};
use ctqd::pulse::{PulseSchedule, Waveform};
use ctqd::units::{from_mhz, to_mhz};
use ctqd::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Excitation, ExperimentConfig, GateKind, LoadedConfig, OptimizeTarget, ScanVariable};
use crate::output::{
    self, num, opt, read_table, write_json, write_table, Provenance, RowSink, TableWriter, FIDELITY_SCAN,
    FIT_PARAMS, ISO_FIDELITY, MC_RUNS, SPEEDUP, TRAJECTORY, WAVEFORM, XY,
};

/// Shared inputs of the config-driven subcommands.
pub struct Run<'a> {
    pub loaded: &'a LoadedConfig,
    pub seed: u64,
    pub out_dir: &'a Path,
}

impl Run<'_> {
    fn cfg(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn provenance(&self) -> Provenance {
        Provenance { config_sha256: self.loaded.hash.clone(), seed: self.seed }
    }
}

/// Phase pair for the configured gate, searching if requested.
fn resolve_phases(c: &ExperimentConfig, gate_time: f64) -> Result<Option<PhaseSearchResult>> {
    if c.gate != GateKind::Ctqd || !c.sequence.search {
        return Ok(None);
    }
    let model = c.model();
    let base = c.base_waveform(gate_time);
    let found = optimize_phases(&model, &base, c.sequence.order.into(), &c.phase_search(), &c.integrator())?;
    Ok(Some(found))
}

fn design_for(c: &ExperimentConfig, gate_time: f64) -> Result<(GateDesign, Option<PhaseSearchResult>)> {
    let found = resolve_phases(c, gate_time)?;
    let design = c.design(gate_time, found.map(|f| (f.phi_r, f.phi_big_r)))?;
    Ok((design, found))
}

fn sequence_pair(design: &GateDesign) -> (Option<f64>, Option<f64>) {
    if design.phases.len() == 4 {
        (Some(in_units_of_pi(design.phases[1])), Some(in_units_of_pi(design.phases[2])))
    } else {
        (None, None)
    }
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    excitation: Excitation,
    gate: GateKind,
    phi_r_pi: Option<f64>,
    phi_big_r_pi: Option<f64>,
    phases_searched: bool,
    report: &'a GateReport,
}

pub fn simulate(run: &Run) -> Result<GateReport> {
    let c = run.cfg();
    let model = c.model();
    let icfg = c.integrator();
    let (design, found) = design_for(c, c.gate_time_us)?;
    let plan = EvaluationPlan {
        decay_only: c.noise.decay_only_run,
        monte_carlo: (c.noise.mc_runs > 0).then(|| MonteCarloPlan {
            n_runs: c.noise.mc_runs,
            seed: run.seed,
            settings: c.noise.settings(),
        }),
    };
    let report = evaluate(&model, &design, &plan, &icfg)?;
    let prov = run.provenance();

    let (_, traj) = intrinsic_trajectory(&model, &design, &icfg)?;
    let rel = phase_relation_series(&traj);
    let idx = |a: Level, b: Level| pair_index(a, b);
    let rydberg: Vec<usize> = (0..25).filter(|k| k / 5 == Level::R.index() || k % 5 == Level::R.index()).collect();
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(&rel)
        .map(|((t, s), (_, r))| {
            let a = s.amplitudes();
            let p = |k: usize| a[k].norm_sqr();
            vec![
                num(*t),
                num(p(idx(Level::Zero, Level::Zero))),
                num(p(idx(Level::Zero, Level::One))),
                num(p(idx(Level::One, Level::Zero))),
                num(p(idx(Level::One, Level::One))),
                num(rydberg.iter().map(|&k| p(k)).sum()),
                opt(*r),
            ]
        })
        .collect();
    write_table(&run.out_dir.join("trajectory.csv"), TRAJECTORY, &prov, &rows)?;

    if !report.mc_fidelities.is_empty() {
        let rows: Vec<Vec<String>> =
            report.mc_fidelities.iter().enumerate().map(|(k, f)| vec![k.to_string(), num(*f)]).collect();
        write_table(&run.out_dir.join("mc_runs.csv"), MC_RUNS, &prov, &rows)?;
    }
    let (phi_r_pi, phi_big_r_pi) = sequence_pair(&design);
    let summary = SimulateSummary {
        excitation: c.excitation,
        gate: c.gate,
        phi_r_pi,
        phi_big_r_pi,
        phases_searched: found.is_some(),
        report: &report,
    };
    write_json(&run.out_dir.join("report.json"), "ctqd.report", &prov, &summary)?;
    Ok(report)
}

/// Scan table that resumes an earlier run with the same provenance.
fn open_scan_table(path: &Path, schema: output::Schema, prov: &Provenance, overwrite: bool) -> Result<(TableWriter, HashSet<usize>)> {
    if path.exists() && !overwrite {
        let (w, rows) = TableWriter::append(path, schema, prov)?;
        let done = rows
            .iter()
            .filter(|r| matches!(r.get(schema.columns.len() - 1), Some("ok" | "unreachable")))
            .filter_map(|r| r.get(0).and_then(|s| s.parse().ok()))
            .collect();
        return Ok((w, done));
    }
    Ok((TableWriter::create(path, schema, prov)?, HashSet::new()))
}

#[derive(Serialize)]
pub struct ScanSummary {
    pub variable: ScanVariable,
    pub table: String,
    pub points: usize,
    pub skipped: usize,
    pub written: usize,
    pub failures: Vec<PointFailure>,
}

#[derive(Clone, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub value: f64,
    pub error: String,
}

fn blank(n: usize) -> Vec<String> {
    vec![String::new(); n]
}

fn fidelity_row(c: &ExperimentConfig, seed: u64, variable: ScanVariable, value: f64) -> Result<Vec<String>> {
    let mut cfg = c.clone();
    let gate_time = match variable {
        ScanVariable::GateTime => value,
        _ => {
            match c.excitation {
                Excitation::Dipole => cfg.pulse.omega0_mhz = Some(value),
                Excitation::Quadrupole => {
                    cfg.pulse.omega_b0_mhz = Some(value);
                    cfg.pulse.omega_r0_mhz = Some(value);
                }
            }
            c.gate_time_us
        }
    };
    let model = cfg.model();
    let icfg = cfg.integrator();
    let (design, _) = design_for(&cfg, gate_time)?;
    let intr = intrinsic(&model, &design, &icfg)?;
    let f_s = if cfg.noise.decay_only_run {
        let ideal = NoiseRealization::ideal(model.n_lasers());
        Some(realistic_fidelity(&model, &design, &ideal, true, intr.phi_comp, &icfg)?)
    } else {
        None
    };
    let mc = if cfg.noise.mc_runs > 0 {
        Some(monte_carlo(&model, &design, cfg.noise.settings(), cfg.noise.mc_runs, seed, intr.phi_comp, &icfg)?)
    } else {
        None
    };
    let omega0 = match design.base.adiabatic() {
        Waveform::Lcg(p) => to_mhz(p.omega0),
        Waveform::Zchg(p) => to_mhz(p.omega_b0.max(p.omega_r0)),
        _ => 0.0,
    };
    let (pr, pbr) = sequence_pair(&design);
    Ok(vec![
        String::new(),
        num(gate_time),
        num(omega0),
        opt(pr),
        opt(pbr),
        num(intr.f0),
        opt(f_s),
        opt(mc.as_ref().map(|m| m.mean_f)),
        opt(mc.as_ref().map(|m| m.std_error)),
        mc.as_ref().map_or(0, |m| m.n_runs).to_string(),
        "ok".into(),
    ])
}

fn family(c: &ExperimentConfig) -> GateFamily {
    match c.gate {
        GateKind::Ctqd => GateFamily::Ctqd,
        _ => GateFamily::Adiabatic,
    }
}

fn iso_row(c: &ExperimentConfig, target: f64, gate_time: f64) -> Result<Vec<String>> {
    let search = c.resource_search(family(c), target, false);
    match min_omega_search(&c.model(), &search, gate_time, &c.integrator()) {
        Ok(p) => Ok(vec![
            String::new(),
            num(gate_time),
            num(to_mhz(p.omega0)),
            num(to_mhz(p.omega_max)),
            num(p.f0),
            "ok".into(),
        ]),
        Err(Error::Unreachable { .. }) => {
            let mut r = blank(ISO_FIDELITY.columns.len());
            r[1] = num(gate_time);
            r[5] = "unreachable".into();
            Ok(r)
        }
        Err(e) => Err(e.into()),
    }
}

fn speedup_row(c: &ExperimentConfig, target: f64, omega_mhz: f64) -> Result<Vec<String>> {
    let model = c.model();
    let icfg = c.integrator();
    let omega = from_mhz(omega_mhz);
    let t = |fam| -> Result<Option<f64>> {
        match min_gate_time_search(&model, &c.resource_search(fam, target, true), omega, &icfg) {
            Ok(p) => Ok(Some(p.gate_time)),
            Err(Error::Unreachable { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let (ta, tc) = (t(GateFamily::Adiabatic)?, t(GateFamily::Ctqd)?);
    let speedup = ta.zip(tc).map(|(a, c)| a / c);
    let status = if speedup.is_some() { "ok" } else { "unreachable" };
    Ok(vec![String::new(), num(omega_mhz), opt(ta), opt(tc), opt(speedup), status.into()])
}

pub fn scan(run: &Run, overwrite: bool) -> Result<ScanSummary> {
    let c = run.cfg();
    let section = c.scan.as_ref().context("the configuration has no [scan] section")?;
    let grid = section.grid()?.to_vec();
    let (schema, file) = match section.variable {
        ScanVariable::GateTime | ScanVariable::OmegaMax => (FIDELITY_SCAN, "scan.csv"),
        ScanVariable::IsoFidelity => (ISO_FIDELITY, "iso_fidelity.csv"),
        ScanVariable::Speedup => (SPEEDUP, "speedup.csv"),
    };
    let path = run.out_dir.join(file);
    let prov = run.provenance();
    let (writer, done) = open_scan_table(&path, schema, &prov, overwrite)?;
    let sink = RowSink::spawn(writer);
    let todo: Vec<(usize, f64)> = grid.iter().copied().enumerate().filter(|(k, _)| !done.contains(k)).collect();
    let variable = section.variable;
    let value_column = if variable == ScanVariable::OmegaMax { 2 } else { 1 };
    let failures: Vec<PointFailure> = todo
        .par_iter()
        .map_with(sink.sender(), |tx: &mut Sender<Vec<String>>, &(k, v)| {
            let row = match variable {
                ScanVariable::GateTime | ScanVariable::OmegaMax => fidelity_row(c, run.seed, variable, v),
                ScanVariable::IsoFidelity => section.target().and_then(|t| iso_row(c, t, v)),
                ScanVariable::Speedup => section.target().and_then(|t| speedup_row(c, t, v)),
            };
            let (mut row, failure) = match row {
                Ok(r) => (r, None),
                Err(e) => {
                    eprintln!("scan point {k} ({v:?}) failed: {e:#}");
                    let mut r = blank(schema.columns.len());
                    r[value_column] = num(v);
                    *r.last_mut().unwrap() = "error".into();
                    (r, Some(PointFailure { index: k, value: v, error: format!("{e:#}") }))
                }
            };
            row[0] = k.to_string();
            // A closed channel means the writer failed; that error surfaces from finish().
            let _ = tx.send(row);
            failure
        })
        .flatten()
        .collect();
    let written = sink.finish()?;
    let summary = ScanSummary {
        variable,
        table: file.into(),
        points: grid.len(),
        skipped: grid.len() - todo.len(),
        written,
        failures,
    };
    write_json(&run.out_dir.join("scan_summary.json"), "ctqd.scan_summary", &prov, &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct OptimizeSummary {
    target: OptimizeTarget,
    gate_time_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    de: Option<DeResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pulse_mhz: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_r_pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_big_r_pi: Option<f64>,
    f0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    flat_landscape: Option<bool>,
}

pub fn optimize(run: &Run) -> Result<f64> {
    let c = run.cfg();
    let target = c.optimize.as_ref().map_or(OptimizeTarget::Phases, |o| o.target);
    let model = c.model();
    let icfg = c.integrator();
    let summary = match target {
        OptimizeTarget::Adiabatic => {
            let (de, w) = search_adiabatic_parameters(&model, c.kind(), &c.de_config(run.seed), &icfg)?;
            let pulse = match w {
                Waveform::Lcg(p) => serde_json::json!({
                    "pulse_duration_us": p.duration,
                    "omega0_mhz": to_mhz(p.omega0),
                    "delta0_mhz": to_mhz(p.delta0),
                    "tau_ratio": p.tau / p.duration,
                }),
                Waveform::Zchg(p) => serde_json::json!({
                    "pulse_duration_us": p.duration,
                    "omega_b0_mhz": to_mhz(p.omega_b0),
                    "omega_r0_mhz": to_mhz(p.omega_r0),
                    "delta_b_mhz": to_mhz(p.delta_b),
                    "tau_b_ratio": p.tau_b / p.duration,
                    "tau_r_ratio": p.tau_r / p.duration,
                }),
                _ => bail!("unexpected waveform from the adiabatic search"),
            };
            OptimizeSummary {
                target,
                gate_time_us: 2.0 * w.duration(),
                f0: -de.value,
                de: Some(de),
                pulse_mhz: Some(pulse),
                phi_r_pi: None,
                phi_big_r_pi: None,
                flat_landscape: None,
            }
        }
        OptimizeTarget::Phases => {
            if c.gate != GateKind::Ctqd {
                bail!("phase optimization needs gate = \"ctqd\"");
            }
            let base = c.base_waveform(c.gate_time_us);
            let r = optimize_phases(&model, &base, c.sequence.order.into(), &c.phase_search(), &icfg)?;
            OptimizeSummary {
                target,
                gate_time_us: c.gate_time_us,
                de: None,
                pulse_mhz: None,
                phi_r_pi: Some(in_units_of_pi(r.phi_r)),
                phi_big_r_pi: Some(in_units_of_pi(r.phi_big_r)),
                f0: r.f0,
                flat_landscape: Some(r.flat),
            }
        }
    };
    let f0 = summary.f0;
    write_json(&run.out_dir.join("optimize.json"), "ctqd.optimize", &run.provenance(), summary)?;
    Ok(f0)
}

pub fn waveform(run: &Run, samples_per_segment: usize) -> Result<usize> {
    if samples_per_segment < 2 {
        bail!("--samples must be at least 2");
    }
    let c = run.cfg();
    let (design, _) = design_for(c, c.gate_time_us)?;
    let sched: PulseSchedule = design.schedule()?;
    let mut rows = Vec::new();
    for (k, seg) in sched.segments().iter().enumerate() {
        for j in 0..samples_per_segment {
            let t = seg.start + seg.duration() * j as f64 / (samples_per_segment - 1) as f64;
            let (o, d) = sched.two_level_in_segment(k, t)?;
            let physical = match sched.drive_in_segment(k, t)? {
                Drive::Dipole { .. } => [String::new(), String::new(), String::new()],
                Drive::Quadrupole { omega_b, omega_r, delta_b } => {
                    [num(to_mhz(omega_b.norm())), num(to_mhz(omega_r.norm())), num(to_mhz(delta_b))]
                }
            };
            let mut row = vec![num(t), k.to_string(), num(to_mhz(o)), num(to_mhz(d)), num(seg.phase)];
            row.extend(physical);
            rows.push(row);
        }
    }
    write_table(&run.out_dir.join("waveform.csv"), WAVEFORM, &run.provenance(), &rows)?;
    Ok(rows.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `Ω_max = ν₁·T^(−p) + ν₂` on iso-fidelity data.
    Power,
    /// `a / (1 + e^(−b·x + c)) + d` on speedup data.
    Logistic,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: FitModel,
    input: String,
    input_schema: String,
    points: usize,
    fit: &'a FitResult,
}

fn column(schema: &output::Schema, name: &str) -> usize {
    schema.columns.iter().position(|c| *c == name).expect("column exists in schema")
}

fn parse_cell(r: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    let s = r.get(i).unwrap_or("");
    s.parse::<f64>().with_context(|| format!("row {line}: '{s}' is not a number"))
}

pub fn fit(input: &Path, model: FitModel, out_dir: &Path) -> Result<FitResult> {
    let accepted = match model {
        FitModel::Power => [ISO_FIDELITY, XY],
        FitModel::Logistic => [SPEEDUP, XY],
    };
    let (schema, prov, rows) = read_table(input, &accepted)?;
    let (xi, yi, status) = if schema == XY {
        (0, 1, None)
    } else if schema == ISO_FIDELITY {
        (column(&schema, "gate_time_us"), column(&schema, "omega_max_mhz"), Some(column(&schema, "status")))
    } else {
        (column(&schema, "omega_max_mhz"), column(&schema, "speedup"), Some(column(&schema, "status")))
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        if status.is_some_and(|s| r.get(s) != Some("ok")) {
            continue;
        }
        x.push(parse_cell(r, xi, k + 1)?);
        y.push(parse_cell(r, yi, k + 1)?);
    }
    let result = match model {
        FitModel::Power => fit_power_law(&x, &y)?,
        FitModel::Logistic => fit_logistic(&x, &y)?,
    };
    let params: Vec<Vec<String>> = result
        .names
        .iter()
        .zip(result.params.iter().zip(&result.sigmas))
        .map(|(n, (v, s))| vec![n.clone(), num(*v), num(*s)])
        .collect();
    let stem = match model {
        FitModel::Power => "fit_power",
        FitModel::Logistic => "fit_logistic",
    };
    write_table(&out_dir.join(format!("{stem}.csv")), FIT_PARAMS, &prov, &params)?;
    let summary = FitSummary {
        model,
        input: input.display().to_string(),
        input_schema: schema.tag(),
        points: x.len(),
        fit: &result,
    };
    write_json(&out_dir.join(format!("{stem}.json")), "ctqd.fit", &prov, &summary)?;
    Ok(result)
}
