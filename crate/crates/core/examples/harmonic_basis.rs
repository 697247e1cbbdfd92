//! Harmonic basis of three bubbles: reflection sweeps, Gram matrix and orthonormal frame.

use bubblesim::harmonic::{evaluate, gram, orthonormalize, solve_reflections, ReflectionOptions};
use bubblesim::{BubbleConfig, Vector3};

fn main() -> bubblesim::Result<()> {
    let config = BubbleConfig::new(
        vec![Vector3::new(-2.5, 0.0, 0.0), Vector3::new(2.0, 0.5, 0.0), Vector3::new(0.0, 3.0, 0.5)],
        vec![1.0, 0.8, 0.9],
        vec![1.0; 3],
        1.4,
    )?;
    let basis = solve_reflections(&config, &ReflectionOptions::with_order(6))?;
    let sweeps: Vec<String> = basis.sweep_residuals.iter().map(|r| format!("{r:.2e}")).collect();
    println!("sweep residuals [{}]", sweeps.join(", "));
    println!("max sweep ratio {:.3?}, max field residual {:.2e}", basis.max_sweep_ratio(), basis.max_residual());
    let g = gram(&basis, &config)?;
    println!("monopole block of the Gram matrix:");
    for i in 0..3 {
        println!("  {:>10.6} {:>10.6} {:>10.6}", g.matrix[(i, 0)], g.matrix[(i, 1)], g.matrix[(i, 2)]);
    }
    println!("min eigenvalue {:.6}, raw asymmetry {:.1e}", g.min_eigenvalue(), g.raw_asymmetry);
    let lambda = orthonormalize(&g)?;
    let id = &lambda * &g.matrix * lambda.transpose();
    println!("|Λ G Λᵀ - I| = {:.1e}", (id - nalgebra::DMatrix::identity(12, 12)).amax());
    let mut coeffs = vec![0.0; 12];
    coeffs[0] = 1.0;
    let u = evaluate(&basis, &coeffs, &Vector3::new(-2.5, 0.0, 1.0))?;
    println!("∇q_1 on top of bubble 1: ({:.6}, {:.6}, {:.6})", u[0], u[1], u[2]);
    Ok(())
}
