//! ALE flow of three moving bubbles and the pushforward of a divergence-free field.

use bubblesim::ale::{AleField, FlowMap};
use bubblesim::driver::ale_checks;
use bubblesim::{BubbleConfig, Vector3};

fn main() -> bubblesim::Result<()> {
    let config = BubbleConfig::new(
        vec![Vector3::new(-2.5, 0.0, 0.0), Vector3::new(2.0, 0.5, 0.0), Vector3::new(0.0, 3.0, 0.5)],
        vec![1.0, 0.8, 0.9],
        vec![1.0; 3],
        1.4,
    )?;
    let xdot = [Vector3::new(0.2, 0.1, 0.0), Vector3::new(-0.1, 0.0, 0.3), Vector3::new(0.0, -0.2, 0.0)];
    let rdot = [0.3, -0.2, 0.1];
    // a quarter of the smallest gap along the motion
    let field = AleField::affine(&config, &xdot, &rdot, 0.5, 0.3)?;
    let map = FlowMap::build(field, 1e-10)?;
    let x = Vector3::new(-2.5, 0.0, 1.03);
    let y = map.map(0.5, &x)?;
    println!("Θ(0.5, {x:?}) = {y:?}, det = {:.10}", map.flow(0.5, &x)?.det());
    let v = |p: &Vector3<f64>| Vector3::new(-p[1], p[0], 0.0);
    println!("pushforward at Θ(x): {:?}", map.pushforward(0.5, v, &y)?);
    for c in ale_checks(&map, &[0.25, 0.5], 2)? {
        println!("{:<24} max {:.2e} tol {:.0e} {}", c.name, c.max, c.tolerance, if c.passed { "ok" } else { "FAILED" });
    }
    Ok(())
}
