//! The single-bubble radial equation `r r̈ + 3/2 ṙ² + 4ν ṙ/r = p(r) - p_∞`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::energy::{bubble_pressure, potential_energy};
use crate::error::{Error, Result};
use crate::ode::{dopri5, Control, Dopri5Options, Status};

/// Radii at or below this end the integration as a collapse.
pub const R_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpParams {
    /// Relaxed pressure constant: `p = c/(4π) r^{-3γ}`.
    pub c: f64,
    pub gamma: f64,
    pub nu: f64,
    pub p_inf: f64,
}

impl RpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !(self.nu >= 0.0) || !(self.p_inf >= 0.0) || !(self.c >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid Rayleigh–Plesset parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpState {
    pub r: f64,
    pub rdot: f64,
}

/// `(ṙ, r̈)`.
pub fn rp_rhs(state: &RpState, params: &RpParams) -> Result<(f64, f64)> {
    let r = state.r;
    if !(r > 0.0) {
        return Err(Error::Collapse { bubble: 0, radius: r });
    }
    let p = bubble_pressure(r, params.c, params.gamma)?;
    let rdd = (p - params.p_inf - 1.5 * state.rdot * state.rdot - 4.0 * params.nu * state.rdot / r) / r;
    Ok((state.rdot, rdd))
}

/// Kinetic plus potential energy, conserved when `ν = 0`.
pub fn rp_energy(state: &RpState, params: &RpParams) -> f64 {
    2.0 * PI * state.rdot * state.rdot * state.r.powi(3)
        + potential_energy(&[state.r], &[params.c], params.gamma)
        + params.p_inf * 4.0 * PI * state.r.powi(3) / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<RpState>,
    /// Time at which the radius reached [`R_FLOOR`], if it did.
    pub collapse_time: Option<f64>,
    pub steps: usize,
}

/// Adaptive integration on `[0, t_end]`.
///
/// With an empty `sample_times`, every accepted step is recorded; otherwise
/// the dense output is sampled at the given increasing times.
pub fn rp_integrate(init: RpState, params: &RpParams, t_end: f64, tol: f64, sample_times: &[f64]) -> Result<RpTrajectory> {
    params.validate()?;
    if !(init.r > R_FLOOR) {
        return Err(Error::Collapse { bubble: 0, radius: init.r });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if sample_times.windows(2).any(|w| w[1] <= w[0]) || sample_times.iter().any(|&t| t < 0.0 || t > t_end) {
        return Err(Error::InvalidConfig("sample times must increase within [0, t_end]".into()));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= 0.0 {
        times.push(sample_times[next]);
        states.push(init);
        next += 1;
    }
    if sample_times.is_empty() {
        times.push(0.0);
        states.push(init);
    }
    let opts = Dopri5Options::with_tol(tol);
    let summary = dopri5(
        |_, y, dy| {
            let (a, b) = rp_rhs(&RpState { r: y[0], rdot: y[1] }, params)?;
            dy[0] = a;
            dy[1] = b;
            Ok(())
        },
        0.0,
        &[init.r, init.rdot],
        t_end,
        &opts,
        |y| y[0] > R_FLOOR,
        |step| {
            if sample_times.is_empty() {
                let y = step.end();
                times.push(step.t1());
                states.push(RpState { r: y[0], rdot: y[1] });
            } else {
                while next < sample_times.len() && sample_times[next] <= step.t1() {
                    let y = step.eval(sample_times[next]);
                    times.push(sample_times[next]);
                    states.push(RpState { r: y[0], rdot: y[1] });
                    next += 1;
                }
            }
            Ok(Control::Continue)
        },
    )?;
    let collapse_time = (summary.status == Status::Underflow).then_some(summary.t);
    Ok(RpTrajectory { times, states, collapse_time, steps: summary.accepted })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(nu: f64, p_inf: f64) -> RpParams {
        RpParams { c: 4.0 * PI, gamma: 5.0 / 3.0, nu, p_inf }
    }

    #[test]
    fn rhs_examples() {
        let p = params(0.0, 0.0);
        let (v, a) = rp_rhs(&RpState { r: 1.0, rdot: 0.0 }, &p).unwrap();
        assert_eq!(v, 0.0);
        assert!((a - 1.0).abs() < 1e-15);
        let (_, a) = rp_rhs(&RpState { r: 1.0, rdot: 0.0 }, &params(0.0, 1.0)).unwrap();
        assert!(a.abs() < 1e-15);
        let s = RpState { r: 1.3, rdot: 0.4 };
        let (_, a0) = rp_rhs(&s, &params(0.0, 0.0)).unwrap();
        let (_, a1) = rp_rhs(&s, &params(0.2, 0.0)).unwrap();
        assert!((a0 - a1 - 4.0 * 0.2 * 0.4 / (1.3 * 1.3)).abs() < 1e-14);
        assert!(rp_rhs(&RpState { r: 0.0, rdot: 0.0 }, &p).is_err());
    }

    #[test]
    fn energy_is_conserved() {
        let p = params(0.0, 0.0);
        let init = RpState { r: 1.0, rdot: 0.0 };
        for tol in [1e-8, 1e-10] {
            let traj = rp_integrate(init, &p, 1.0, tol, &[]).unwrap();
            let e0 = rp_energy(&init, &p);
            let drift = traj.states.iter().map(|s| (rp_energy(s, &p) - e0).abs()).fold(0.0, f64::max);
            assert!(drift <= 10.0 * tol * e0.max(1.0), "tol {tol}: drift {drift}");
        }
    }

    #[test]
    fn equilibrium_is_constant() {
        let p = params(0.0, 1.0);
        let traj = rp_integrate(RpState { r: 1.0, rdot: 0.0 }, &p, 5.0, 1e-10, &[]).unwrap();
        for s in &traj.states {
            assert!((s.r - 1.0).abs() < 1e-14 && s.rdot.abs() < 1e-14);
        }
    }

    #[test]
    fn time_reversal() {
        let p = params(0.0, 0.5);
        let tol = 1e-10;
        let init = RpState { r: 0.9, rdot: 0.3 };
        let fwd = rp_integrate(init, &p, 1.0, tol, &[]).unwrap();
        let end = *fwd.states.last().unwrap();
        let back = rp_integrate(RpState { r: end.r, rdot: -end.rdot }, &p, 1.0, tol, &[]).unwrap();
        let fin = back.states.last().unwrap();
        assert!((fin.r - init.r).abs() < 100.0 * tol);
        assert!((fin.rdot + init.rdot).abs() < 100.0 * tol);
    }

    #[test]
    fn collapse_is_an_event() {
        // no gas pressure, strong inward motion: the radius reaches zero
        let p = RpParams { c: 0.0, gamma: 1.4, nu: 0.0, p_inf: 1.0 };
        let traj = rp_integrate(RpState { r: 1.0, rdot: -1.0 }, &p, 10.0, 1e-8, &[]).unwrap();
        assert!(traj.collapse_time.is_some());
        assert!(traj.states.iter().all(|s| s.r > R_FLOOR));
    }

    #[test]
    fn dense_samples() {
        let p = params(0.1, 0.0);
        let ts: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
        let traj = rp_integrate(RpState { r: 1.0, rdot: 0.0 }, &p, 1.0, 1e-10, &ts).unwrap();
        assert_eq!(traj.times, ts);
        assert!(rp_integrate(RpState { r: 1.0, rdot: 0.0 }, &p, 1.0, 1e-10, &[0.5, 0.2]).is_err());
    }
}
