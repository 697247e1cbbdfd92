//! Randomized invariants across modules.

use std::f64::consts::PI;

use bubblesim::corpus::ENTRIES;
use bubblesim::harmonic::{gram, solve_reflections, ReflectionOptions};
use bubblesim::io::{parse_config, to_json_pretty};
use bubblesim::rayleigh_plesset::{rp_energy, rp_integrate, RpParams, RpState};
use bubblesim::viscous::{run_scheme, SchemeParams};
use bubblesim::{BubbleConfig, Vector3};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pair(r1: f64, r2: f64, gap: f64, dir: Vector3<f64>, shift: Vector3<f64>, scale: f64) -> BubbleConfig {
    let d = dir.normalize() * (r1 + r2 + gap);
    BubbleConfig::new(vec![shift * scale, (shift + d) * scale], vec![r1 * scale, r2 * scale], vec![1.0, 1.0], 1.4).unwrap()
}

fn pair_gram(c: &BubbleConfig) -> DMatrix<f64> {
    let opts = ReflectionOptions { pointwise_residuals: false, ..ReflectionOptions::default() };
    gram(&solve_reflections(c, &opts).unwrap(), c).unwrap().matrix
}

fn arb_vec(lo: f64, hi: f64) -> impl Strategy<Value = Vector3<f64>> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gram_is_spd_translation_invariant_and_cubic_in_scale(
        r1 in 0.5..1.5f64,
        r2 in 0.5..1.5f64,
        gap in 0.8..4.0f64,
        dir in arb_vec(-1.0, 1.0).prop_filter("nonzero", |v| v.norm() > 0.1),
        shift in arb_vec(-5.0, 5.0),
        scale in 0.5..2.0f64,
    ) {
        let base = pair_gram(&pair(r1, r2, gap, dir, Vector3::zeros(), 1.0));
        let moved = pair_gram(&pair(r1, r2, gap, dir, shift, 1.0));
        let scaled = pair_gram(&pair(r1, r2, gap, dir, Vector3::zeros(), scale));
        let norm = base.amax();
        prop_assert!((&base - base.transpose()).amax() <= 1e-12 * norm);
        prop_assert!(base.clone().symmetric_eigenvalues().min() > 0.0);
        prop_assert!((&moved - &base).amax() <= 1e-10 * norm);
        prop_assert!((&scaled / scale.powi(3) - &base).amax() <= 1e-10 * norm);
    }

    #[test]
    fn inviscid_rayleigh_plesset_conserves_energy(
        r0 in 0.5..2.0f64,
        rdot0 in -0.5..0.5f64,
        c in 1.0..20.0f64,
        p_inf in 0.0..2.0f64,
    ) {
        let params = RpParams { c, gamma: 1.4, nu: 0.0, p_inf };
        let init = RpState { r: r0, rdot: rdot0 };
        let e0 = rp_energy(&init, &params);
        let tr = rp_integrate(init, &params, 2.0, 1e-11, &[]).unwrap();
        prop_assume!(tr.collapse_time.is_none());
        for s in &tr.states {
            prop_assert!((rp_energy(s, &params) - e0).abs() <= 1e-8 * e0);
        }
    }

    #[test]
    fn viscous_scheme_dissipates_energy(rdot in -0.3..0.3f64, nu in 0.01..0.5f64, r in 0.6..1.5f64) {
        let config = BubbleConfig::single(Vector3::new(0.3, 0.0, -0.2), r, 4.0 * PI, 5.0 / 3.0).unwrap();
        let params = SchemeParams { h: 0.01, t_end: 0.05, nu, override_horizon: true, ..SchemeParams::default() };
        let run = run_scheme(&[rdot, 0.0, 0.0, 0.0], &config, &params, &[]).unwrap();
        let e0 = run.ledger.e0;
        prop_assert!(run.ledger.min_slack() >= -1e-10 * e0);
        for w in run.ledger.entries.windows(2) {
            prop_assert!(w[1].dissipation >= w[0].dissipation);
            prop_assert!(w[1].kinetic + w[1].potential <= w[0].kinetic + w[0].potential + 1e-12 * e0);
        }
    }

    #[test]
    fn factor_three_normalization(c in arb_vec(-10.0, 10.0), degree in 2usize..12) {
        let rule = bubblesim::quadrature::make_sphere_rule(degree).unwrap();
        let mean = rule.integrate_vec(|n| n * c.dot(n)) / (4.0 * PI);
        prop_assert!((mean * 3.0 - c).norm() <= 1e-14 * c.norm().max(1.0));
    }
}

#[test]
fn corpus_configs_round_trip_through_json() {
    for e in ENTRIES {
        let config = e.config().unwrap();
        let again = parse_config(&to_json_pretty(&config)).unwrap();
        assert_eq!(config, again, "{}", e.name);
    }
}
