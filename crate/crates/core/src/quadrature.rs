//! Sphere and exterior-domain quadrature, plus finite-difference operators.
//!
//! Every reduction in this module runs sequentially in node order with
//! Neumaier compensation, so results are bitwise reproducible.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::BubbleConfig;

/// Largest supported exactness degree for [`make_sphere_rule`].
pub const MAX_SPHERE_DEGREE: usize = 400;

/// Compensated running sum (Neumaier's variant of Kahan summation).
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Quadrature rule on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    pub nodes: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

/// Tensor-product rule: Gauss–Legendre in cos θ times uniform azimuth.
///
/// Exact for every polynomial of total degree ≤ `degree` restricted to the sphere.
pub fn make_sphere_rule(degree: usize) -> Result<SphereRule> {
    if degree > MAX_SPHERE_DEGREE {
        return Err(Error::UnsupportedDegree { requested: degree, max: MAX_SPHERE_DEGREE });
    }
    let n_theta = degree / 2 + 1;
    // an even azimuthal count keeps the rule invariant under x -> -x
    let mut n_phi = degree + 1;
    if n_phi % 2 == 1 {
        n_phi += 1;
    }
    let (mu, wmu) = gauss_legendre(n_theta);
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * PI / n_phi as f64;
    for (m, wm) in mu.iter().zip(&wmu) {
        let st = (1.0 - m * m).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = dphi * k as f64;
            nodes.push(Vector3::new(st * phi.cos(), st * phi.sin(), *m));
            weights.push(wm * dphi);
        }
    }
    Ok(SphereRule { nodes, weights, exactness_degree: degree })
}

impl SphereRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∮ f dω over the unit sphere.
    pub fn integrate<F: FnMut(&Vector3<f64>) -> f64>(&self, mut f: F) -> f64 {
        let mut s = NeumaierSum::default();
        for (n, w) in self.nodes.iter().zip(&self.weights) {
            s.add(w * f(n));
        }
        s.value()
    }

    /// Vector-valued ∮ f dω.
    pub fn integrate_vec<F: FnMut(&Vector3<f64>) -> Vector3<f64>>(&self, mut f: F) -> Vector3<f64> {
        let mut s = [NeumaierSum::default(); 3];
        for (n, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(n);
            for k in 0..3 {
                s[k].add(w * v[k]);
            }
        }
        Vector3::new(s[0].value(), s[1].value(), s[2].value())
    }
}

/// Treatment of the far field beyond the radial shells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FarField {
    /// Shells extend to infinity through the map s = r / u, u ∈ (0, 1].
    Mapped,
    /// Shells stop at `radius` (measured from each center); the remainder is
    /// added as `R³ ∮ f`, exact for integrands decaying like |x|⁻⁴.
    AnalyticTail { radius: f64 },
    /// Shells stop at `radius`; the dropped tail is only reported.
    Cutoff { radius: f64 },
}

/// Per-bubble radial shells blended by a smooth partition of unity.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorRule {
    pub sphere_degree: usize,
    pub radial_panels: usize,
    pub radial_order: usize,
    pub far_field: FarField,
    /// Exponent p of the partition weights `d_i^{-p}`, d_i the distance to sphere i.
    pub partition_exponent: i32,
}

impl Default for ExteriorRule {
    fn default() -> Self {
        Self {
            sphere_degree: 16,
            radial_panels: 6,
            radial_order: 6,
            far_field: FarField::Mapped,
            partition_exponent: 4,
        }
    }
}

/// Materialized exterior nodes for one configuration.
#[derive(Debug, Clone)]
pub struct ExteriorNodes {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    /// Marks nodes in the outermost radial panel (mapped mode).
    pub outer: Vec<bool>,
    pub tail_points: Vec<Vector3<f64>>,
    pub tail_weights: Vec<f64>,
    pub far_field: FarField,
}

/// A quadrature value with an estimate of the far-field contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExteriorIntegral {
    pub value: f64,
    pub truncation_estimate: f64,
}

/// Partition-of-unity weight of bubble `i` at `x`; zero inside any bubble.
pub fn partition_weight(config: &BubbleConfig, i: usize, x: &Vector3<f64>, p: i32) -> f64 {
    let n = config.len();
    if n == 1 {
        return if (x - config.centers()[0]).norm() > config.radii()[0] { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    let mut own = 0.0;
    for j in 0..n {
        let d = (x - config.centers()[j]).norm() - config.radii()[j];
        if d <= 0.0 {
            return 0.0;
        }
        let v = d.powi(-p);
        total += v;
        if j == i {
            own = v;
        }
    }
    own / total
}

fn composite_gl(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64, usize)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi, p));
        }
    }
    out
}

/// Gauss–Legendre on panels with geometrically growing widths.
fn geometric_gl(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let ratio = (b / a).powf(1.0 / panels as f64);
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a * ratio.powi(p as i32);
        let hi = if p + 1 == panels { b } else { lo * ratio };
        let h = hi - lo;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

pub fn exterior_nodes(config: &BubbleConfig, rule: &ExteriorRule) -> Result<ExteriorNodes> {
    if rule.radial_panels == 0 || rule.radial_order == 0 {
        return Err(Error::InvalidConfig("exterior rule needs at least one radial node".into()));
    }
    let sphere = make_sphere_rule(rule.sphere_degree)?;
    let mut out = ExteriorNodes {
        points: Vec::new(),
        weights: Vec::new(),
        outer: Vec::new(),
        tail_points: Vec::new(),
        tail_weights: Vec::new(),
        far_field: rule.far_field,
    };
    let p = rule.partition_exponent;
    for i in 0..config.len() {
        let c = config.centers()[i];
        let r = config.radii()[i];
        // (s, weight including s² ds, outermost-panel flag)
        let radial: Vec<(f64, f64, bool)> = match rule.far_field {
            FarField::Mapped => composite_gl(0.0, 1.0, rule.radial_panels, rule.radial_order)
                .into_iter()
                .map(|(u, w, panel)| (r / u, w * r.powi(3) / u.powi(4), panel == 0))
                .collect(),
            FarField::AnalyticTail { radius } | FarField::Cutoff { radius } => {
                if radius <= r {
                    return Err(Error::InvalidConfig(format!(
                        "truncation radius {radius} does not exceed bubble radius {r}"
                    )));
                }
                geometric_gl(r, radius, rule.radial_panels, rule.radial_order)
                    .into_iter()
                    .map(|(s, w)| (s, w * s * s, false))
                    .collect()
            }
        };
        for &(s, ws, outer) in &radial {
            for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
                let x = c + n * s;
                let pw = partition_weight(config, i, &x, p);
                if pw > 0.0 {
                    out.points.push(x);
                    out.weights.push(ws * wn * pw);
                    out.outer.push(outer);
                }
            }
        }
        if let FarField::AnalyticTail { radius } | FarField::Cutoff { radius } = rule.far_field {
            for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
                let x = c + n * radius;
                let pw = partition_weight(config, i, &x, p);
                if pw > 0.0 {
                    out.tail_points.push(x);
                    out.tail_weights.push(radius.powi(3) * wn * pw);
                }
            }
        }
    }
    Ok(out)
}

impl ExteriorNodes {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of volume weights: the measure of the discretized region.
    pub fn total_weight(&self) -> f64 {
        let mut s = NeumaierSum::default();
        for w in &self.weights {
            s.add(*w);
        }
        s.value()
    }

    pub fn integrate<F: FnMut(&Vector3<f64>) -> f64>(&self, mut f: F) -> Result<ExteriorIntegral> {
        let mut body = NeumaierSum::default();
        let mut outer = NeumaierSum::default();
        for ((x, w), o) in self.points.iter().zip(&self.weights).zip(&self.outer) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite { location: format!("exterior node {:?}", x.as_slice()) });
            }
            body.add(w * v);
            if *o {
                outer.add(w * v);
            }
        }
        let mut tail = NeumaierSum::default();
        for (x, w) in self.tail_points.iter().zip(&self.tail_weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite { location: format!("tail node {:?}", x.as_slice()) });
            }
            tail.add(w * v);
        }
        Ok(match self.far_field {
            FarField::Mapped => ExteriorIntegral {
                value: body.value(),
                truncation_estimate: outer.value().abs(),
            },
            FarField::AnalyticTail { .. } => ExteriorIntegral {
                value: body.value() + tail.value(),
                truncation_estimate: tail.value().abs(),
            },
            FarField::Cutoff { .. } => ExteriorIntegral {
                value: body.value(),
                truncation_estimate: tail.value().abs(),
            },
        })
    }
}

/// ∫ f over the fluid region outside all bubbles.
pub fn exterior_integral<F: FnMut(&Vector3<f64>) -> f64>(
    f: F,
    config: &BubbleConfig,
    rule: &ExteriorRule,
) -> Result<ExteriorIntegral> {
    exterior_nodes(config, rule)?.integrate(f)
}

/// Central-difference Jacobian `J[i][k] = ∂_k f_i`, second-order accurate.
pub fn fd_jacobian<F: Fn(&Vector3<f64>) -> Vector3<f64>>(f: F, x: &Vector3<f64>, step: f64) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = step;
        let d = (f(&(x + e)) - f(&(x - e))) / (2.0 * step);
        j.set_column(k, &d);
    }
    j
}

/// Five-point central-difference Jacobian, fourth-order accurate.
pub fn fd_jacobian4<F: Fn(&Vector3<f64>) -> Vector3<f64>>(f: F, x: &Vector3<f64>, step: f64) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = step;
        let d = (f(&(x - 2.0 * e)) - 8.0 * f(&(x - e)) + 8.0 * f(&(x + e)) - f(&(x + 2.0 * e)))
            / (12.0 * step);
        j.set_column(k, &d);
    }
    j
}

pub fn fd_divergence<F: Fn(&Vector3<f64>) -> Vector3<f64>>(f: F, x: &Vector3<f64>, step: f64) -> f64 {
    fd_jacobian(f, x, step).trace()
}
