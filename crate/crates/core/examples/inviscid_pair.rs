//! Two bubbles approaching head-on under the inviscid Lagrangian dynamics.

use bubblesim::inviscid::{integrate_inviscid, InviscidParams, PhaseState};
use bubblesim::{BubbleConfig, Vector3};

fn main() -> bubblesim::Result<()> {
    let config = BubbleConfig::new(
        vec![Vector3::new(-1.5, 0.0, 0.0), Vector3::new(1.5, 0.0, 0.0)],
        vec![1.0, 0.8],
        vec![4.0 * std::f64::consts::PI; 2],
        1.4,
    )?;
    // (rdot_1, rdot_2, xdot_1, xdot_2)
    let qdot = vec![0.0, 0.0, 0.4, 0.0, 0.0, -0.4, 0.0, 0.0];
    let params = InviscidParams { tol: 1e-9, collision_threshold: 0.05, ..InviscidParams::default() };
    let run = integrate_inviscid(&PhaseState::new(config, qdot)?, 2.0, &params)?;
    for rec in run.trajectory.records.iter().step_by(4) {
        let e = rec.ledger.unwrap();
        println!(
            "t={:.4} x=({:+.5}, {:+.5}) r=({:.5}, {:.5}) gap={:.5} K+P={:.10}",
            rec.time,
            rec.centers[0][0],
            rec.centers[1][0],
            rec.radii[0],
            rec.radii[1],
            rec.min_gap(),
            e.kinetic + e.potential
        );
    }
    println!("event {:?}, max |E - E0| = {:.2e}", run.trajectory.event, run.ledger.max_abs_slack());
    Ok(())
}
