//! Bubble configurations, admissibility and collision detection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions, radii and gas-law constants of N spherical bubbles.
///
/// The pressure inside bubble i is `c_i / (4π) · r_i^{-3γ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfig {
    centers: Vec<Vector3<f64>>,
    radii: Vec<f64>,
    pressure_constants: Vec<f64>,
    gamma: f64,
}

impl BubbleConfig {
    pub fn new(
        centers: Vec<Vector3<f64>>,
        radii: Vec<f64>,
        pressure_constants: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::InvalidConfig("at least one bubble is required".into()));
        }
        if radii.len() != n || pressure_constants.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} centers, {} radii and {} pressure constants",
                n,
                radii.len(),
                pressure_constants.len()
            )));
        }
        if let Some(i) = centers.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig(format!("center {i} is not finite")));
        }
        if let Some(i) = radii.iter().position(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "radius {i} must be positive, got {}",
                radii[i]
            )));
        }
        if let Some(i) = pressure_constants.iter().position(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "pressure constant {i} must be nonnegative, got {}",
                pressure_constants[i]
            )));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(Self { centers, radii, pressure_constants, gamma })
    }

    /// A single bubble.
    pub fn single(center: Vector3<f64>, radius: f64, c: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![center], vec![radius], vec![c], gamma)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vector3<f64>] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn pressure_constants(&self) -> &[f64] {
        &self.pressure_constants
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same constants, new centers and radii.
    pub fn with_geometry(&self, centers: Vec<Vector3<f64>>, radii: Vec<f64>) -> Result<Self> {
        Self::new(centers, radii, self.pressure_constants.clone(), self.gamma)
    }

    /// Same geometry, new pressure constants.
    pub fn with_pressure_constants(&self, c: Vec<f64>) -> Result<Self> {
        Self::new(self.centers.clone(), self.radii.clone(), c, self.gamma)
    }

    /// Generalized coordinates `(r_1..r_N, x_1..x_N)` as a flat vector of length 4N.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut q = self.radii.clone();
        for c in &self.centers {
            q.extend_from_slice(c.as_slice());
        }
        q
    }

    /// Inverse of [`coordinates`](Self::coordinates).
    pub fn from_coordinates(&self, q: &[f64]) -> Result<Self> {
        let n = self.len();
        if q.len() != 4 * n {
            return Err(Error::DimensionMismatch { expected: 4 * n, got: q.len() });
        }
        let radii = q[..n].to_vec();
        let centers = (0..n)
            .map(|i| Vector3::new(q[n + 3 * i], q[n + 3 * i + 1], q[n + 3 * i + 2]))
            .collect();
        self.with_geometry(centers, radii)
    }

    /// Smallest surface-to-surface distance, `+∞` for a single bubble.
    pub fn min_gap(&self) -> f64 {
        min_gap(&self.centers, &self.radii)
    }

    /// Largest distance between points of the bubbles.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len() {
            d = d.max(2.0 * self.radii[i]);
            for j in 0..i {
                d = d.max((self.centers[i] - self.centers[j]).norm() + self.radii[i] + self.radii[j]);
            }
        }
        d
    }

    /// Index of the bubble containing `x` (closed ball), if any.
    pub fn containing_bubble(&self, x: &Vector3<f64>) -> Option<usize> {
        (0..self.len()).find(|&i| (x - self.centers[i]).norm() <= self.radii[i])
    }

    pub fn ball(&self, i: usize) -> Ball {
        Ball { center: self.centers[i], radius: self.radii[i] }
    }
}

/// Minimal surface gap between spheres.
pub fn min_gap(centers: &[Vector3<f64>], radii: &[f64]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..centers.len() {
        for j in 0..i {
            g = g.min((centers[i] - centers[j]).norm() - radii[i] - radii[j]);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub min_gap: f64,
    /// Separation margin: a quarter of the minimal gap, or half the radius for a lone bubble.
    pub delta: f64,
}

pub fn validate_admissible(config: &BubbleConfig) -> Result<AdmissibilityReport> {
    if let Some(i) = config.radii.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::InvalidConfig(format!("radius {i} is not positive")));
    }
    if config.len() == 1 {
        return Ok(AdmissibilityReport {
            admissible: true,
            min_gap: f64::INFINITY,
            delta: 0.5 * config.radii[0],
        });
    }
    let g = config.min_gap();
    Ok(AdmissibilityReport { admissible: g > 0.0, min_gap: g, delta: 0.25 * g })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Hausdorff distance between two closed balls.
pub fn hausdorff_distance(a: &Ball, b: &Ball) -> f64 {
    (a.center - b.center).norm() + (a.radius - b.radius).abs()
}

/// First time at which the sampled gap drops to `threshold`, linearly
/// interpolated between consecutive samples.
///
/// Samples are `(time, min_gap)` pairs at increasing times.
pub fn detect_collision<I>(samples: I, threshold: f64) -> Result<Option<f64>>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut it = samples.into_iter();
    let Some((mut t0, mut g0)) = it.next() else {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    };
    if g0 <= threshold {
        return Ok(Some(t0));
    }
    for (t1, g1) in it {
        if g1 <= threshold {
            let s = if g1.is_finite() && g0.is_finite() && g0 != g1 {
                (g0 - threshold) / (g0 - g1)
            } else {
                1.0
            };
            return Ok(Some(t0 + s * (t1 - t0)));
        }
        t0 = t1;
        g0 = g1;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(d: f64, r: f64) -> BubbleConfig {
        BubbleConfig::new(
            vec![Vector3::new(-d / 2.0, 0.0, 0.0), Vector3::new(d / 2.0, 0.0, 0.0)],
            vec![r, r],
            vec![1.0, 1.0],
            5.0 / 3.0,
        )
        .unwrap()
    }

    #[test]
    fn admissibility_examples() {
        let r = validate_admissible(&pair(4.0, 1.0)).unwrap();
        assert!(r.admissible);
        assert_eq!(r.min_gap, 2.0);
        assert_eq!(r.delta, 0.5);

        let r = validate_admissible(&pair(2.0, 1.0)).unwrap();
        assert!(!r.admissible);
        assert_eq!(r.min_gap, 0.0);

        let one = BubbleConfig::single(Vector3::zeros(), 2.0, 1.0, 1.4).unwrap();
        let r = validate_admissible(&one).unwrap();
        assert!(r.admissible);
        assert_eq!(r.delta, 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BubbleConfig::single(Vector3::zeros(), -1.0, 1.0, 1.4).is_err());
        assert!(BubbleConfig::single(Vector3::zeros(), 1.0, 1.0, 1.0).is_err());
        assert!(BubbleConfig::single(Vector3::new(f64::NAN, 0.0, 0.0), 1.0, 1.0, 1.4).is_err());
        assert!(BubbleConfig::new(vec![], vec![], vec![], 1.4).is_err());
    }

    #[test]
    fn coordinates_round_trip() {
        let c = pair(5.0, 0.7);
        let q = c.coordinates();
        assert_eq!(q.len(), 8);
        assert_eq!(c.from_coordinates(&q).unwrap(), c);
    }

    #[test]
    fn hausdorff_examples() {
        let a = Ball { center: Vector3::zeros(), radius: 1.0 };
        assert_eq!(hausdorff_distance(&a, &a), 0.0);
        let b = Ball { center: Vector3::zeros(), radius: 2.0 };
        assert_eq!(hausdorff_distance(&a, &b), 1.0);
        let c = Ball { center: Vector3::new(3.0, 0.0, 0.0), radius: 1.0 };
        assert_eq!(hausdorff_distance(&a, &c), 3.0);
    }

    fn linear_gap(threshold: f64) -> Option<f64> {
        let samples = (0..=8).map(|k| {
            let t = 0.25 * k as f64;
            (t, 2.0 - 2.0 * t)
        });
        detect_collision(samples, threshold).unwrap()
    }

    #[test]
    fn collision_examples() {
        let constant = (0..10).map(|k| (k as f64, 2.0));
        assert_eq!(detect_collision(constant, 0.1).unwrap(), None);
        assert!((linear_gap(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((linear_gap(0.5).unwrap() - 0.75).abs() < 1e-12);
        assert!(detect_collision(std::iter::empty(), 0.0).is_err());
    }

    fn arb_ball() -> impl Strategy<Value = Ball> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, 0.1..3.0f64)
            .prop_map(|(x, y, z, r)| Ball { center: Vector3::new(x, y, z), radius: r })
    }

    proptest! {
        #[test]
        fn hausdorff_is_a_metric(a in arb_ball(), b in arb_ball(), c in arb_ball()) {
            let ab = hausdorff_distance(&a, &b);
            prop_assert!((ab - hausdorff_distance(&b, &a)).abs() < 1e-14);
            prop_assert!(ab >= 0.0);
            prop_assert!(hausdorff_distance(&a, &a) == 0.0);
            prop_assert!(ab <= hausdorff_distance(&a, &c) + hausdorff_distance(&c, &b) + 1e-12);
        }

        #[test]
        fn min_gap_permutation_and_translation_invariant(
            pts in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, 0.1..1.0f64), 2..5),
            shift in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
        ) {
            let centers: Vec<_> = pts.iter().map(|p| Vector3::new(p.0, p.1, p.2)).collect();
            let radii: Vec<_> = pts.iter().map(|p| p.3).collect();
            let g = min_gap(&centers, &radii);
            let mut rc = centers.clone();
            let mut rr = radii.clone();
            rc.reverse();
            rr.reverse();
            prop_assert!((min_gap(&rc, &rr) - g).abs() < 1e-12);
            let s = Vector3::new(shift.0, shift.1, shift.2);
            let tc: Vec<_> = centers.iter().map(|c| c + s).collect();
            prop_assert!((min_gap(&tc, &radii) - g).abs() < 1e-9);
        }

        #[test]
        fn collision_time_monotone_in_threshold(
            gaps in proptest::collection::vec(-1.0..3.0f64, 2..20),
            a in -1.0..3.0f64,
            b in -1.0..3.0f64,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let samples: Vec<_> = gaps.iter().enumerate().map(|(k, &g)| (k as f64, g)).collect();
            let t_lo = detect_collision(samples.clone(), lo).unwrap();
            let t_hi = detect_collision(samples, hi).unwrap();
            if let Some(tl) = t_lo {
                let th = t_hi.expect("larger threshold must trigger too");
                prop_assert!(th <= tl + 1e-12);
            }
        }
    }
}
