//! Euler–Lagrange dynamics of the inviscid system with Lagrangian
//! `L = ½ q̇ᵀ M(q) q̇ - E_p(R)`, `q = (r_1..r_N, x_1..x_N)`.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::energy::{kinetic_energy, potential_energy, potential_energy_derivative, EnergyLedger};
use crate::error::{Error, Result};
use crate::geometry::{detect_collision, BubbleConfig};
use crate::harmonic::{gram, solve_reflections, solve_reflections_from, HarmonicBasis, ReflectionOptions};
use crate::ode::{dopri5, Control, Dopri5Options, Status};
use crate::rayleigh_plesset::R_FLOOR;
use crate::trajectory::{to_array, Event, EventTag, Trajectory, TrajectoryRecord};

const CACHE_CAPACITY: usize = 256;

/// Configuration plus generalized velocities `(ṙ_1..ṙ_N, ẋ_1..ẋ_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub config: BubbleConfig,
    pub qdot: Vec<f64>,
}

impl PhaseState {
    pub fn new(config: BubbleConfig, qdot: Vec<f64>) -> Result<Self> {
        let n = 4 * config.len();
        if qdot.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: qdot.len() });
        }
        if let Some(k) = qdot.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { location: format!("velocity component {k}") });
        }
        Ok(Self { config, qdot })
    }

    /// At rest.
    pub fn at_rest(config: BubbleConfig) -> Self {
        let n = 4 * config.len();
        Self { config, qdot: vec![0.0; n] }
    }
}

/// Mass matrix `M(q)`: the Gram matrix of the harmonic basis.
pub fn mass_matrix(config: &BubbleConfig, opts: &ReflectionOptions) -> Result<DMatrix<f64>> {
    let basis = solve_reflections(config, opts)?;
    Ok(gram(&basis, config)?.matrix)
}

#[derive(Default)]
struct MassCache {
    entries: HashMap<Vec<u64>, DMatrix<f64>>,
    warm: Option<HarmonicBasis>,
    solves: usize,
}

/// Mass matrices with caching and warm-started reflections, plus the
/// Lagrange right-hand side built on them.
pub struct MassModel {
    opts: ReflectionOptions,
    fd_step: Option<f64>,
    cache: RefCell<MassCache>,
}

impl MassModel {
    /// `fd_step = None` uses `1e-5` times the smallest radius.
    pub fn new(opts: ReflectionOptions, fd_step: Option<f64>) -> Self {
        Self { opts, fd_step, cache: RefCell::new(MassCache::default()) }
    }

    /// Number of reflection solves performed so far.
    pub fn solves(&self) -> usize {
        self.cache.borrow().solves
    }

    /// Cached by the exact bit pattern of the coordinates.
    pub fn mass_matrix(&self, config: &BubbleConfig) -> Result<DMatrix<f64>> {
        let key: Vec<u64> = config.coordinates().iter().map(|v| v.to_bits()).collect();
        let mut cache = self.cache.borrow_mut();
        if let Some(m) = cache.entries.get(&key) {
            return Ok(m.clone());
        }
        let basis = solve_reflections_from(config, &self.opts, cache.warm.as_ref())?;
        let m = gram(&basis, config)?.matrix;
        cache.solves += 1;
        cache.warm = Some(basis);
        if cache.entries.len() >= CACHE_CAPACITY {
            cache.entries.clear();
        }
        cache.entries.insert(key, m.clone());
        Ok(m)
    }

    fn fd_step(&self, config: &BubbleConfig) -> f64 {
        self.fd_step
            .unwrap_or_else(|| 1e-5 * config.radii().iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// `q̈` from `M q̈ = -(Σ_k ∂_k M q̇_k) q̇ + ½ ∇_q(q̇ᵀ M q̇) - ∇_q E_p`,
    /// with `∂M` by central differences.
    pub fn lagrange_rhs(&self, state: &PhaseState) -> Result<Vec<f64>> {
        let config = &state.config;
        let n = config.len();
        let dim = 4 * n;
        if state.qdot.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: state.qdot.len() });
        }
        let m0 = self.mass_matrix(config)?;
        let q = config.coordinates();
        let qdot = DVector::from_column_slice(&state.qdot);
        let h = self.fd_step(config);
        let mut force = DVector::zeros(dim);

        let scale = qdot.amax();
        if scale > 0.0 {
            let shifted = |sign: f64| -> Result<DMatrix<f64>> {
                let p: Vec<f64> = q.iter().zip(qdot.iter()).map(|(a, v)| a + sign * h * v / scale).collect();
                self.mass_matrix(&config.from_coordinates(&p)?)
            };
            let directional = (shifted(1.0)? - shifted(-1.0)?) * (scale / (2.0 * h));
            force -= directional * &qdot;
            for k in 0..dim {
                let mut p = q.clone();
                p[k] = q[k] + h;
                let mp = self.mass_matrix(&config.from_coordinates(&p)?)?;
                p[k] = q[k] - h;
                let mm = self.mass_matrix(&config.from_coordinates(&p)?)?;
                force[k] += 0.5 * (qdot.dot(&(&mp * &qdot)) - qdot.dot(&(&mm * &qdot))) / (2.0 * h);
            }
        }
        for i in 0..n {
            force[i] -= potential_energy_derivative(config.radii()[i], config.pressure_constants()[i], config.gamma());
        }
        let chol = Cholesky::new(m0).ok_or_else(|| Error::Degenerate("mass matrix is not positive definite".into()))?;
        let qdd = chol.solve(&force);
        if let Some(k) = qdd.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { location: format!("acceleration component {k}") });
        }
        Ok(qdd.iter().cloned().collect())
    }

    /// `E_k + E_p` of a phase state.
    pub fn energy(&self, state: &PhaseState) -> Result<(f64, f64)> {
        let m = self.mass_matrix(&state.config)?;
        let c = &state.config;
        Ok((kinetic_energy(&state.qdot, &m)?, potential_energy(c.radii(), c.pressure_constants(), c.gamma())))
    }
}

/// Settings for [`integrate_inviscid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InviscidParams {
    pub reflections: ReflectionOptions,
    /// ODE tolerance, used as both relative and absolute tolerance.
    pub tol: f64,
    pub fd_step: Option<f64>,
    /// The run stops when the minimal gap reaches this value.
    pub collision_threshold: f64,
    pub max_step: f64,
}

impl Default for InviscidParams {
    fn default() -> Self {
        Self {
            reflections: ReflectionOptions { pointwise_residuals: false, ..ReflectionOptions::default() },
            tol: 1e-8,
            fd_step: None,
            collision_threshold: 0.0,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InviscidRun {
    pub trajectory: Trajectory,
    pub ledger: EnergyLedger,
    pub accepted: usize,
    pub rejected: usize,
    pub reflection_solves: usize,
}

fn split_state(template: &BubbleConfig, y: &[f64]) -> Result<PhaseState> {
    let dim = 4 * template.len();
    let config = template.from_coordinates(&y[..dim])?;
    PhaseState::new(config, y[dim..].to_vec())
}

fn record(state: &PhaseState, time: f64, ledger: &EnergyLedger) -> TrajectoryRecord {
    TrajectoryRecord {
        time,
        centers: state.config.centers().iter().map(to_array).collect(),
        radii: state.config.radii().to_vec(),
        coefficients: state.qdot.clone(),
        ledger: ledger.entries.last().copied(),
        event: EventTag::None,
        accumulated: None,
    }
}

/// Adaptive integration on `[0, t_end]` with a record and ledger entry at
/// every accepted step.
///
/// Stops early at a collision (gap reaching the threshold, time located by
/// linear interpolation), at a collapse, or when the basis degenerates near
/// contact so that no step can be completed.
pub fn integrate_inviscid(init: &PhaseState, t_end: f64, params: &InviscidParams) -> Result<InviscidRun> {
    if !(params.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", params.tol)));
    }
    let model = MassModel::new(params.reflections, params.fd_step);
    let template = init.config.clone();
    let gap0 = template.min_gap();
    if gap0 <= params.collision_threshold {
        return Err(Error::NotAdmissible { min_gap: gap0 });
    }
    let (k0, p0) = model.energy(init)?;
    let mut ledger = EnergyLedger::new(k0 + p0);
    ledger.push(0.0, k0, p0, 0.0)?;
    let mut trajectory = Trajectory { records: vec![record(init, 0.0, &ledger)], event: None };

    let mut y0 = init.config.coordinates();
    y0.extend_from_slice(&init.qdot);
    let dim = 4 * template.len();
    let opts = Dopri5Options { h_max: params.max_step, ..Dopri5Options::with_tol(params.tol) };

    let mut failure: Option<Error> = None;
    let summary = dopri5(
        |_, y, dy| {
            let state = split_state(&template, y)?;
            let qdd = model.lagrange_rhs(&state)?;
            dy[..dim].copy_from_slice(&state.qdot);
            dy[dim..].copy_from_slice(&qdd);
            Ok(())
        },
        0.0,
        &y0,
        t_end,
        &opts,
        |y| y[..template.len()].iter().all(|&r| r > R_FLOOR) && split_state(&template, y).is_ok_and(|s| s.config.min_gap() > 0.0),
        |step| {
            let t = step.t1();
            let state = split_state(&template, &step.end())?;
            let (k, p) = model.energy(&state)?;
            if let Err(e) = ledger.push(t, k, p, 0.0) {
                failure = Some(e);
                return Ok(Control::Stop);
            }
            trajectory.records.push(record(&state, t, &ledger));
            if state.config.min_gap() <= params.collision_threshold {
                let tail = &trajectory.records[trajectory.records.len() - 2..];
                let time = detect_collision(tail.iter().map(|r| (r.time, r.min_gap())), params.collision_threshold)?
                    .unwrap_or(t);
                trajectory.event = Some(Event { tag: EventTag::Collision, time });
                return Ok(Control::Stop);
            }
            Ok(Control::Continue)
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    if summary.status == Status::Underflow {
        let last = trajectory.records.last().expect("initial record");
        let collapsed = last.radii.iter().any(|&r| r < 1e3 * R_FLOOR);
        let tag = if collapsed { EventTag::Collapse } else { EventTag::NearContact };
        trajectory.event = Some(Event { tag, time: summary.t });
    }
    if let Some(ev) = trajectory.event {
        if let Some(last) = trajectory.records.last_mut() {
            last.event = ev.tag;
        }
    }
    Ok(InviscidRun {
        trajectory,
        ledger,
        accepted: summary.accepted,
        rejected: summary.rejected,
        reflection_solves: model.solves(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rayleigh_plesset::{rp_integrate, RpParams, RpState};
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn single(r: f64) -> BubbleConfig {
        BubbleConfig::single(Vector3::zeros(), r, 4.0 * PI, 5.0 / 3.0).unwrap()
    }

    fn pair(d: f64) -> BubbleConfig {
        BubbleConfig::new(
            vec![Vector3::new(-d / 2.0, 0.0, 0.0), Vector3::new(d / 2.0, 0.0, 0.0)],
            vec![1.0, 1.0],
            vec![4.0 * PI; 2],
            5.0 / 3.0,
        )
        .unwrap()
    }

    #[test]
    fn single_bubble_mass_matrix() {
        for r in [1.0, 1.7] {
            let m = mass_matrix(&single(r), &ReflectionOptions::default()).unwrap();
            let r3 = r.powi(3);
            let expected = [4.0 * PI * r3, 2.0 * PI * r3 / 3.0, 2.0 * PI * r3 / 3.0, 2.0 * PI * r3 / 3.0];
            for a in 0..4 {
                for b in 0..4 {
                    let e = if a == b { expected[a] } else { 0.0 };
                    assert!((m[(a, b)] - e).abs() < 1e-10 * expected[0], "({a},{b})");
                }
            }
        }
    }

    #[test]
    fn off_diagonal_blocks_decay() {
        let opts = ReflectionOptions::default();
        let c10 = mass_matrix(&pair(10.0), &opts).unwrap()[(0, 1)].abs();
        let c20 = mass_matrix(&pair(20.0), &opts).unwrap()[(0, 1)].abs();
        assert!((c10 / c20 - 2.0).abs() < 0.05, "{}", c10 / c20);
    }

    #[test]
    fn rest_state_acceleration_is_pressure() {
        let model = MassModel::new(ReflectionOptions::default(), None);
        let qdd = model.lagrange_rhs(&PhaseState::at_rest(single(1.0))).unwrap();
        assert!((qdd[0] - 1.0).abs() < 1e-12);
        assert!(qdd[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn radial_motion_matches_rayleigh_plesset_rhs() {
        let model = MassModel::new(ReflectionOptions::default(), None);
        let state = PhaseState::new(single(1.2), vec![0.7, 0.0, 0.0, 0.0]).unwrap();
        let qdd = model.lagrange_rhs(&state).unwrap();
        let p = RpParams { c: 4.0 * PI, gamma: 5.0 / 3.0, nu: 0.0, p_inf: 0.0 };
        let (_, rdd) = crate::rayleigh_plesset::rp_rhs(&RpState { r: 1.2, rdot: 0.7 }, &p).unwrap();
        assert!((qdd[0] - rdd).abs() < 1e-8, "{} vs {rdd}", qdd[0]);
    }

    #[test]
    fn translation_drives_radial_growth() {
        // r r̈ = |ẋ|²/4 for a translating sphere without gas pressure
        let c = BubbleConfig::single(Vector3::zeros(), 1.0, 0.0, 5.0 / 3.0).unwrap();
        let model = MassModel::new(ReflectionOptions::default(), None);
        let qdd = model.lagrange_rhs(&PhaseState::new(c, vec![0.0, 0.3, -0.2, 0.1]).unwrap()).unwrap();
        assert!((qdd[0] - 0.14 / 4.0).abs() < 1e-8, "{qdd:?}");
        assert!(qdd[1..].iter().all(|v| v.abs() < 1e-8), "{qdd:?}");
    }

    #[test]
    fn mirror_symmetric_pair() {
        let model = MassModel::new(ReflectionOptions::default(), None);
        let state = PhaseState::new(pair(5.0), vec![0.1, 0.1, 0.2, 0.0, 0.0, -0.2, 0.0, 0.0]).unwrap();
        let qdd = model.lagrange_rhs(&state).unwrap();
        assert!((qdd[0] - qdd[1]).abs() < 1e-10);
        assert!((qdd[2] + qdd[5]).abs() < 1e-10);
        for k in [3, 4, 6, 7] {
            assert!(qdd[k].abs() < 1e-10);
        }
    }

    #[test]
    fn fd_step_halving() {
        let state = PhaseState::new(pair(4.0), vec![0.2, -0.1, 0.3, 0.0, 0.1, 0.0, 0.0, 0.0]).unwrap();
        let a = MassModel::new(ReflectionOptions::default(), Some(1e-5)).lagrange_rhs(&state).unwrap();
        let b = MassModel::new(ReflectionOptions::default(), Some(5e-6)).lagrange_rhs(&state).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn single_bubble_follows_rayleigh_plesset() {
        let params = InviscidParams { tol: 1e-10, ..InviscidParams::default() };
        let run = integrate_inviscid(&PhaseState::at_rest(single(1.0)), 1.0, &params).unwrap();
        let times: Vec<f64> = run.trajectory.records.iter().map(|r| r.time).collect();
        let p = RpParams { c: 4.0 * PI, gamma: 5.0 / 3.0, nu: 0.0, p_inf: 0.0 };
        let rp = rp_integrate(RpState { r: 1.0, rdot: 0.0 }, &p, 1.0, 1e-10, &times).unwrap();
        for (rec, s) in run.trajectory.records.iter().zip(&rp.states) {
            assert!((rec.radii[0] - s.r).abs() <= 1e-6 * s.r);
        }
        assert!(run.ledger.max_abs_slack() <= 1e-7 * run.ledger.e0);
        assert!(run.trajectory.event.is_none());
    }

    #[test]
    fn approaching_pair_collides() {
        let c = BubbleConfig::new(
            vec![Vector3::new(-1.5, 0.0, 0.0), Vector3::new(1.5, 0.0, 0.0)],
            vec![1.0, 1.0],
            vec![0.0; 2],
            5.0 / 3.0,
        )
        .unwrap();
        let state = PhaseState::new(c, vec![0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let params = InviscidParams { tol: 1e-6, collision_threshold: 0.5, ..InviscidParams::default() };
        let run = integrate_inviscid(&state, 2.0, &params).unwrap();
        let ev = run.trajectory.event.unwrap();
        assert_eq!(ev.tag, EventTag::Collision);
        assert!(ev.time > 0.0 && ev.time < 2.0);
        assert_eq!(run.trajectory.last().unwrap().event, EventTag::Collision);
    }
}
