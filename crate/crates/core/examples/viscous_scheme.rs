//! Viscous prescribed-dynamics scheme for a translating pair with a rotlet mode.

use std::sync::Arc;

use bubblesim::viscous::{run_scheme, Rotlet, SchemeParams, SolenoidalMode};
use bubblesim::{BubbleConfig, Vector3};

fn main() -> bubblesim::Result<()> {
    let config = BubbleConfig::new(
        vec![Vector3::new(-1.5, 0.0, 0.0), Vector3::new(1.5, 0.0, 0.0)],
        vec![1.0, 1.0],
        vec![4.0 * std::f64::consts::PI; 2],
        5.0 / 3.0,
    )?;
    let modes: Vec<Arc<dyn SolenoidalMode>> =
        vec![Arc::new(Rotlet { bubble: 0, omega: Vector3::new(0.0, 0.0, 1.0), delta: 0.5 })];
    // harmonic coefficients (monopoles, dipoles) followed by the rotlet amplitude
    let init = [0.1, 0.1, 0.3, 0.0, 0.0, -0.3, 0.0, 0.0, 0.2];
    let params = SchemeParams { h: 0.01, t_end: 0.05, nu: 0.1, override_horizon: true, ..SchemeParams::default() };
    let run = run_scheme(&init, &config, &params, &modes)?;
    println!("labels {:?}", run.labels);
    println!("horizon {:.3e}, block coupling {:.2e}", run.horizon, run.block_coupling);
    for rec in &run.trajectory.records {
        let e = rec.ledger.unwrap();
        println!(
            "t={:.3} r=({:.6}, {:.6}) K={:.6} P={:.6} D={:.3e} slack={:+.1e}",
            rec.time, rec.radii[0], rec.radii[1], e.kinetic, e.potential, e.dissipation, e.slack
        );
    }
    Ok(())
}
