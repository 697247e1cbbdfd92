//! Runs a validated configuration and writes its output files.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use serde::Serialize;

use crate::ale::{piece_min_gap, AleField, FlowMap};
use crate::energy::{potential_energy, EnergyLedger};
use crate::error::{Error, Result};
use crate::harmonic::{gram, orthonormalize, solve_reflections, ReflectionOptions};
use crate::inviscid::{integrate_inviscid, PhaseState};
use crate::io::{emit_ledger, emit_report, emit_trajectory, Provenance, RunConfig, Scenario, TrajectoryHeader};
use crate::quadrature::{fd_jacobian4, make_sphere_rule};
use crate::rayleigh_plesset::{rp_integrate, RpState};
use crate::trajectory::{Event, EventTag, Trajectory, TrajectoryRecord};
use crate::viscous::{run_scheme, SolenoidalMode};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BASIS_FILE: &str = "basis.json";

/// Command-line switches applied on top of a configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    /// Drop the convection term of the viscous scheme.
    pub stokes_mode: bool,
    pub override_horizon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub event: Option<Event>,
    /// Failed verification checks (`ale-verify` only).
    pub failed_checks: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// 0 success, 3 numerical failure, 4 collision-terminated.
    pub fn exit_code(&self) -> i32 {
        match self.event.map(|e| e.tag) {
            Some(EventTag::Collision | EventTag::NearContact) => 4,
            Some(EventTag::Collapse) => 3,
            _ if !self.failed_checks.is_empty() => 3,
            _ => 0,
        }
    }
}

/// 2 for configuration and file errors, 3 for numerical failures.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::ConfigViolations(_) | Error::Parse { .. } | Error::Io { .. } | Error::NotAdmissible { .. } => 2,
        _ => 3,
    }
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    provenance: Provenance,
    scenario: Scenario,
    event: Option<Event>,
    #[serde(flatten)]
    details: T,
}

struct Writer<'a> {
    out: &'a Path,
    provenance: Provenance,
    scenario: Scenario,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn trajectory(&mut self, traj: &Trajectory, labels: Vec<String>) -> Result<()> {
        let path = self.out.join(TRAJECTORY_FILE);
        let header = TrajectoryHeader {
            provenance: self.provenance.clone(),
            scenario: self.scenario,
            coefficient_labels: labels,
            records: traj.len(),
            event: traj.event,
        };
        emit_trajectory(traj, &header, &path)?;
        self.files.push(path.clone());
        self.files.push(crate::io::header_path(&path));
        Ok(())
    }

    fn ledger(&mut self, ledger: &EnergyLedger) -> Result<()> {
        let path = self.out.join(LEDGER_FILE);
        emit_ledger(ledger, &path)?;
        self.files.push(path);
        Ok(())
    }

    fn report<T: Serialize>(&mut self, event: Option<Event>, details: T) -> Result<()> {
        let path = self.out.join(REPORT_FILE);
        let r = Report { provenance: self.provenance.clone(), scenario: self.scenario, event, details };
        emit_report(&r, &path)?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `config` and writes its outputs to `out`.
pub fn run(config: &RunConfig, config_text: &str, out: &Path, overrides: Overrides) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    let mut w = Writer { out, provenance: Provenance::new(config_text), scenario: config.scenario, files: Vec::new() };
    let (event, failed_checks) = match config.scenario {
        Scenario::Rp => (run_rp(config, &mut w)?, Vec::new()),
        Scenario::Inviscid => (run_inviscid(config, &mut w)?, Vec::new()),
        Scenario::Viscous => (run_viscous(config, overrides, &mut w)?, Vec::new()),
        Scenario::Basis => (run_basis(config, &mut w)?, Vec::new()),
        Scenario::AleVerify => (None, run_ale(config, &mut w)?),
    };
    Ok(RunOutcome { event, failed_checks, files: w.files })
}

fn coefficient_labels(n: usize) -> Vec<String> {
    (0..4 * n).map(|a| crate::harmonic::FieldKind::of_index(a, n).label()).collect()
}

#[derive(Serialize)]
struct RpDetails {
    steps: usize,
    collapse_time: Option<f64>,
    e0: f64,
    max_energy_drift: f64,
}

fn run_rp(config: &RunConfig, w: &mut Writer) -> Result<Option<Event>> {
    let b = &config.bubbles[0];
    let params = config.rp_params();
    let init = RpState { r: b.radius, rdot: b.rdot };
    let rp = rp_integrate(init, &params, config.t_end(), config.params.tol, &config.params.sample_times)?;
    let energy = |s: &RpState| {
        let k = 2.0 * PI * s.rdot * s.rdot * s.r.powi(3);
        let p = potential_energy(&[s.r], &[params.c], params.gamma) + params.p_inf * 4.0 * PI * s.r.powi(3) / 3.0;
        (k, p)
    };
    let (k0, p0) = energy(&init);
    let mut ledger = EnergyLedger::new(k0 + p0);
    let mut records = Vec::with_capacity(rp.times.len());
    // viscous dissipation 16πν r ṙ² accumulated by the trapezoidal rule between samples
    let mut diss = 0.0;
    let mut prev: Option<(f64, RpState)> = None;
    for (&t, s) in rp.times.iter().zip(&rp.states) {
        if let Some((t0, s0)) = prev {
            let rate = |s: &RpState| 16.0 * PI * params.nu * s.r * s.rdot * s.rdot;
            diss += 0.5 * (t - t0) * (rate(&s0) + rate(s));
        }
        prev = Some((t, *s));
        let (k, p) = energy(s);
        let entry = ledger.push(t, k, p, diss)?;
        records.push(TrajectoryRecord {
            time: t,
            centers: vec![b.center],
            radii: vec![s.r],
            coefficients: vec![s.rdot],
            ledger: Some(entry),
            event: EventTag::None,
            accumulated: None,
        });
    }
    let event = rp.collapse_time.map(|time| Event { tag: EventTag::Collapse, time });
    if let (Some(e), Some(last)) = (event, records.last_mut()) {
        last.event = e.tag;
    }
    let traj = Trajectory { records, event };
    w.trajectory(&traj, vec!["rdot".into()])?;
    w.ledger(&ledger)?;
    let drift = ledger.entries.iter().map(|e| (e.kinetic + e.potential + e.dissipation - ledger.e0).abs()).fold(0.0, f64::max);
    w.report(event, RpDetails { steps: rp.steps, collapse_time: rp.collapse_time, e0: ledger.e0, max_energy_drift: drift })?;
    Ok(event)
}

#[derive(Serialize)]
struct InviscidDetails {
    accepted: usize,
    rejected: usize,
    reflection_solves: usize,
    e0: f64,
    max_energy_drift: f64,
    records: usize,
}

fn run_inviscid(config: &RunConfig, w: &mut Writer) -> Result<Option<Event>> {
    let bc = config.bubble_config()?;
    let init = PhaseState::new(bc.clone(), config.qdot())?;
    let run = integrate_inviscid(&init, config.t_end(), &config.inviscid_params())?;
    w.trajectory(&run.trajectory, coefficient_labels(bc.len()))?;
    w.ledger(&run.ledger)?;
    let event = run.trajectory.event;
    w.report(
        event,
        InviscidDetails {
            accepted: run.accepted,
            rejected: run.rejected,
            reflection_solves: run.reflection_solves,
            e0: run.ledger.e0,
            max_energy_drift: run.ledger.max_abs_slack(),
            records: run.trajectory.len(),
        },
    )?;
    Ok(event)
}

#[derive(Serialize)]
struct ViscousDetails {
    e0: f64,
    horizon: f64,
    override_horizon: bool,
    convection: bool,
    windows: usize,
    rejected_steps: usize,
    min_slack: f64,
    block_coupling: f64,
    records: usize,
}

fn run_viscous(config: &RunConfig, overrides: Overrides, w: &mut Writer) -> Result<Option<Event>> {
    let bc = config.bubble_config()?;
    let mut params = config.scheme_params();
    params.convection &= !overrides.stokes_mode;
    params.override_horizon |= overrides.override_horizon;
    let modes: Vec<Arc<dyn SolenoidalMode>> =
        config.rotlets().into_iter().map(|r| Arc::new(r) as Arc<dyn SolenoidalMode>).collect();
    let run = run_scheme(&config.initial_coefficients(), &bc, &params, &modes)?;
    w.trajectory(&run.trajectory, run.labels.clone())?;
    w.ledger(&run.ledger)?;
    let event = run.trajectory.event;
    w.report(
        event,
        ViscousDetails {
            e0: run.ledger.e0,
            horizon: run.horizon,
            override_horizon: params.override_horizon,
            convection: params.convection,
            windows: run.windows,
            rejected_steps: run.rejected,
            min_slack: run.ledger.min_slack(),
            block_coupling: run.block_coupling,
            records: run.trajectory.len(),
        },
    )?;
    Ok(event)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

#[derive(Serialize)]
struct BasisDetails {
    labels: Vec<String>,
    sweeps: usize,
    sweep_residuals: Vec<f64>,
    max_sweep_ratio: Option<f64>,
    field_residuals: Vec<f64>,
    gram: Vec<Vec<f64>>,
    gram_raw_asymmetry: f64,
    gram_min_eigenvalue: f64,
    orthonormalizer: Vec<Vec<f64>>,
}

fn run_basis(config: &RunConfig, w: &mut Writer) -> Result<Option<Event>> {
    let bc = config.bubble_config()?;
    let opts = ReflectionOptions { pointwise_residuals: true, ..config.reflection_options() };
    let basis = solve_reflections(&bc, &opts)?;
    let g = gram(&basis, &bc)?;
    let lambda = orthonormalize(&g)?;
    let sr = &basis.sweep_residuals;
    let ratio = basis.max_sweep_ratio();
    let path = w.out.join(BASIS_FILE);
    fs::write(&path, basis.to_text()).map_err(|source| Error::Io { path: path.clone(), source })?;
    w.files.push(path);
    w.report(
        None,
        BasisDetails {
            labels: coefficient_labels(bc.len()),
            sweeps: sr.len(),
            sweep_residuals: sr.clone(),
            max_sweep_ratio: ratio,
            field_residuals: basis.residuals.clone(),
            gram: rows(&g.matrix),
            gram_raw_asymmetry: g.raw_asymmetry,
            gram_min_eigenvalue: g.min_eigenvalue(),
            orthonormalizer: rows(&lambda),
        },
    )?;
    Ok(None)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub max: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &str, values: impl IntoIterator<Item = f64>, tolerance: f64) -> Check {
    let max = values.into_iter().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    Check { name: name.into(), max, tolerance, passed: max <= tolerance }
}

#[derive(Serialize)]
struct AleDetails {
    delta: f64,
    m0: f64,
    min_gap: f64,
    flow_tol: f64,
    steps_per_piece: Vec<usize>,
    times: Vec<f64>,
    checks: Vec<Check>,
}

/// Verification checks of the ALE flow and the pushforward on the configured trajectory.
pub fn ale_checks(map: &FlowMap, times: &[f64], sample_degree: usize) -> Result<Vec<Check>> {
    let f = map.field();
    let tol = map.tol();
    let delta = f.delta();
    let dirs = make_sphere_rule(sample_degree)?.nodes;
    let t0 = f.start_time();
    let span = f.end_time() - t0;
    let v = |x: &Vector3<f64>| Vector3::new(-x[1], x[0] + x[2], 0.3 * x[0]);
    let (mut closed, mut det, mut far, mut piola, mut div, mut round, mut normal, mut tangent, mut transport) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    for &t in times {
        far.push((map.map(t, &Vector3::new(f.m0() + 0.1, 0.0, 0.0))? - Vector3::new(f.m0() + 0.1, 0.0, 0.0)).norm());
        for i in 0..f.bubble_count() {
            let (c0, r0) = f.bubble(i, t0);
            let (c1, r1) = f.bubble(i, t);
            let rot = |y: &Vector3<f64>| (y - c0).cross(&Vector3::new(0.3, -0.2, 1.0));
            for n in &dirs {
                let x = c0 + n * (r0 + delta / 8.0);
                let fp = map.flow(t, &x)?;
                closed.push((fp.position - map.closed_form(i, t, &x)).norm());
                det.push((fp.det() - (r1 / r0).powi(3)).abs());

                let xm = c0 + n * (r0 + delta / 2.0);
                let cof = map.flow(t, &xm)?.cofactor();
                for k in 0..3 {
                    let row = |y: &Vector3<f64>| map.flow(t, y).map(|p| p.cofactor().row(k).transpose()).unwrap_or(Vector3::repeat(f64::NAN));
                    piola.push(fd_jacobian4(row, &xm, 6.25e-5).trace().abs() / cof.amax());
                }
                let y = map.map(t, &xm)?;
                let pushed = |z: &Vector3<f64>| map.pushforward(t, v, z).unwrap_or(Vector3::repeat(f64::NAN));
                div.push(fd_jacobian4(pushed, &y, 1.25e-4).trace().abs());
                round.push((map.pullback(t, pushed, &xm)? - v(&xm)).norm());

                let xb = c0 + n * r0;
                let nt = map.transported_normal(t, &xb, n)?;
                let yb = map.map(t, &xb)?;
                normal.push((nt - (yb - c1) / r1).norm());
                tangent.push(map.pushforward(t, rot, &yb)?.dot(&nt).abs());

                let dt = 5e-4 * span;
                let tt = t.clamp(t0 + 2.0 * dt, t0 + span - 2.0 * dt);
                let z = map.map(tt, &xm)?;
                transport.push(map.transport_residual(tt, v, &z, dt, 1.25e-4)?.norm());
            }
        }
    }
    Ok(vec![
        check("closed_form", closed, 10.0 * tol),
        check("scaling_determinant", det, 10.0 * tol),
        check("far_field_identity", far, 0.0),
        check("piola_relative", piola, 1e-7),
        check("pushforward_divergence", div, 1e-6),
        check("pushforward_round_trip", round, 1e-8),
        check("normal_transport", normal, 1e-8),
        check("tangency", tangent, 1e-7),
        check("transport_identity", transport, 1e-5),
    ])
}

fn run_ale(config: &RunConfig, w: &mut Writer) -> Result<Vec<String>> {
    let knots = config.ale_knots()?;
    let a = &config.params.ale;
    let delta = match a.delta {
        Some(d) => d,
        None if knots[0].radii.len() == 1 => 0.5 * knots.iter().flat_map(|k| k.radii.iter().cloned()).fold(f64::INFINITY, f64::min),
        None => 0.25 * knots.windows(2).map(|p| piece_min_gap(&p[0], &p[1])).fold(f64::INFINITY, f64::min),
    };
    let field = AleField::new(knots, delta)?;
    let map = FlowMap::build(field, a.flow_tol)?;
    let (t0, t1) = (map.field().start_time(), map.field().end_time());
    let times = a.times.clone().unwrap_or_else(|| vec![0.5 * (t0 + t1), t1]);
    let checks = ale_checks(&map, &times, a.sample_degree)?;
    let failed = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let f = map.field();
    w.report(
        None,
        AleDetails {
            delta: f.delta(),
            m0: f.m0(),
            min_gap: f.min_gap(),
            flow_tol: map.tol(),
            steps_per_piece: map.steps().to_vec(),
            times,
            checks,
        },
    )?;
    Ok(failed)
}
