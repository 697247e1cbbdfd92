//! Radial oscillation of a single bubble about its equilibrium radius.

use std::f64::consts::PI;

use bubblesim::rayleigh_plesset::{rp_energy, rp_integrate, RpParams, RpState};

fn main() -> bubblesim::Result<()> {
    let params = RpParams { c: 4.0 * PI, gamma: 5.0 / 3.0, nu: 0.02, p_inf: 1.0 };
    let init = RpState { r: 1.05, rdot: 0.0 };
    let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
    let tr = rp_integrate(init, &params, 20.0, 1e-10, &times)?;
    println!("{:>6} {:>10} {:>11} {:>10}", "t", "r", "rdot", "energy");
    for (t, s) in tr.times.iter().zip(&tr.states) {
        println!("{t:>6.2} {:>10.6} {:>11.6} {:>10.6}", s.r, s.rdot, rp_energy(s, &params));
    }
    println!("{} adaptive steps", tr.steps);
    Ok(())
}
