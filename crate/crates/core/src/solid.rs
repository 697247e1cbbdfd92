//! Real solid harmonics.
//!
//! `P_lm(x) = |x|^l Y_lm(x/|x|)` are homogeneous harmonic polynomials built
//! from real, orthonormal spherical harmonics without the Condon–Shortley
//! phase (so `P_11 ∝ x`, `P_1,-1 ∝ y`, `P_10 ∝ z`). The irregular harmonics
//! `I_lm(x) = P_lm(x) / |x|^{2l+1}` are harmonic away from the origin.
//!
//! Index convention: `(l, m)` with `-l ≤ m ≤ l` maps to `l² + l + m`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

pub fn sh_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// `(l, m)` for every index up to `lmax`.
pub fn sh_degrees(lmax: usize) -> Vec<(usize, i64)> {
    let mut out = Vec::with_capacity(sh_count(lmax));
    for l in 0..=lmax {
        for m in -(l as i64)..=(l as i64) {
            out.push((l, m));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Poly {
    terms: Vec<([usize; 3], f64)>,
}

impl Poly {
    fn constant(c: f64) -> Self {
        Self { terms: vec![([0, 0, 0], c)] }
    }

    fn monomial(e: [usize; 3]) -> Self {
        Self { terms: vec![(e, 1.0)] }
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for &(e, c) in &other.terms {
            match out.terms.iter_mut().find(|t| t.0 == e) {
                Some(t) => t.1 += c,
                None => out.terms.push((e, c)),
            }
        }
        out.terms.retain(|t| t.1 != 0.0);
        out
    }

    fn scale(&self, s: f64) -> Poly {
        Poly { terms: self.terms.iter().map(|&(e, c)| (e, c * s)).collect() }
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for &(a, ca) in &self.terms {
            for &(b, cb) in &other.terms {
                out = out.add(&Poly { terms: vec![([a[0] + b[0], a[1] + b[1], a[2] + b[2]], ca * cb)] });
            }
        }
        out
    }

    fn derivative(&self, k: usize) -> Poly {
        let mut out = Poly::default();
        for &(e, c) in &self.terms {
            if e[k] > 0 {
                let mut f = e;
                f[k] -= 1;
                out = out.add(&Poly { terms: vec![(f, c * e[k] as f64)] });
            }
        }
        out
    }

    fn eval(&self, pw: &[[f64; 3]]) -> f64 {
        let mut s = 0.0;
        for &(e, c) in &self.terms {
            s += c * pw[e[0]][0] * pw[e[1]][1] * pw[e[2]][2];
        }
        s
    }
}

const HESS_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Tabulated solid harmonics and their first and second derivatives.
#[derive(Debug, Clone)]
pub struct SolidHarmonics {
    lmax: usize,
    degree: Vec<usize>,
    p: Vec<Poly>,
    dp: Vec<[Poly; 3]>,
    d2p: Vec<[Poly; 6]>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

impl SolidHarmonics {
    pub fn new(lmax: usize) -> Self {
        let x = Poly::monomial([1, 0, 0]);
        let y = Poly::monomial([0, 1, 0]);
        let z = Poly::monomial([0, 0, 1]);
        let s2 = Poly::monomial([2, 0, 0]).add(&Poly::monomial([0, 2, 0])).add(&Poly::monomial([0, 0, 2]));

        // A_m + i B_m = (x + i y)^m
        let mut a = vec![Poly::constant(1.0)];
        let mut b = vec![Poly::default()];
        for m in 0..lmax {
            let am = a[m].mul(&x).add(&b[m].mul(&y).scale(-1.0));
            let bm = b[m].mul(&x).add(&a[m].mul(&y));
            a.push(am);
            b.push(bm);
        }

        let n = sh_count(lmax);
        let mut p = vec![Poly::default(); n];
        let mut degree = vec![0; n];
        for m in 0..=lmax {
            // Π_l^m(z, s²) for l = m..=lmax
            let mut pi: Vec<Poly> = Vec::new();
            let dfact = (1..=m).fold(1.0, |acc, k| acc * (2 * k - 1) as f64);
            pi.push(Poly::constant(dfact));
            if m < lmax {
                pi.push(z.mul(&pi[0]).scale((2 * m + 1) as f64));
            }
            for l in m + 2..=lmax {
                let t1 = z.mul(&pi[l - m - 1]).scale((2 * l - 1) as f64);
                let t2 = s2.mul(&pi[l - m - 2]).scale(-((l + m - 1) as f64));
                pi.push(t1.add(&t2).scale(1.0 / (l - m) as f64));
            }
            for l in m..=lmax {
                let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - m) / factorial(l + m)).sqrt();
                let base = &pi[l - m];
                if m == 0 {
                    p[sh_index(l, 0)] = base.scale(norm);
                } else {
                    let f = norm * std::f64::consts::SQRT_2;
                    p[sh_index(l, m as i64)] = base.mul(&a[m]).scale(f);
                    p[sh_index(l, -(m as i64))] = base.mul(&b[m]).scale(f);
                }
                degree[sh_index(l, m as i64)] = l;
                degree[sh_index(l, -(m as i64))] = l;
            }
        }
        let dp: Vec<[Poly; 3]> =
            p.iter().map(|q| [q.derivative(0), q.derivative(1), q.derivative(2)]).collect();
        let d2p: Vec<[Poly; 6]> = dp
            .iter()
            .map(|d| HESS_PAIRS.map(|(i, j)| d[i].derivative(j)))
            .collect();
        Self { lmax, degree, p, dp, d2p }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.degree[idx]
    }

    fn powers(&self, y: &Vector3<f64>) -> Vec<[f64; 3]> {
        let mut pw = vec![[1.0; 3]; self.lmax + 1];
        for e in 1..=self.lmax {
            for k in 0..3 {
                pw[e][k] = pw[e - 1][k] * y[k];
            }
        }
        pw
    }

    /// Regular solid harmonics `P_lm(y)`; on the unit sphere these are `Y_lm`.
    pub fn regular(&self, y: &Vector3<f64>, out: &mut [f64]) {
        let pw = self.powers(y);
        for (o, q) in out.iter_mut().zip(&self.p) {
            *o = q.eval(&pw);
        }
    }

    /// Irregular harmonics `I_lm(y)` and, optionally, gradients and Hessians.
    pub fn irregular(
        &self,
        y: &Vector3<f64>,
        val: &mut [f64],
        mut grad: Option<&mut [Vector3<f64>]>,
        mut hess: Option<&mut [Matrix3<f64>]>,
    ) {
        let pw = self.powers(y);
        let s2 = y.norm_squared();
        let s = s2.sqrt();
        let inv_s2 = 1.0 / s2;
        // s^{-(2l+1)} for each l
        let mut rho = vec![0.0; self.lmax + 1];
        rho[0] = 1.0 / s;
        for l in 1..=self.lmax {
            rho[l] = rho[l - 1] * inv_s2;
        }
        let yy = y * y.transpose();
        for idx in 0..self.p.len() {
            let l = self.degree[idx];
            let pv = self.p[idx].eval(&pw);
            let r = rho[l];
            val[idx] = pv * r;
            if grad.is_none() && hess.is_none() {
                continue;
            }
            let k = (2 * l + 1) as f64;
            let dp = Vector3::new(
                self.dp[idx][0].eval(&pw),
                self.dp[idx][1].eval(&pw),
                self.dp[idx][2].eval(&pw),
            );
            let drho = y * (-k * r * inv_s2);
            if let Some(g) = grad.as_deref_mut() {
                g[idx] = dp * r + drho * pv;
            }
            if let Some(h) = hess.as_deref_mut() {
                let mut hp = Matrix3::zeros();
                for (c, &(i, j)) in HESS_PAIRS.iter().enumerate() {
                    let v = self.d2p[idx][c].eval(&pw);
                    hp[(i, j)] = v;
                    hp[(j, i)] = v;
                }
                let r3 = r * inv_s2;
                let hrho = (Matrix3::identity() - yy * ((k + 2.0) * inv_s2)) * (-k * r3);
                h[idx] = hp * r + dp * drho.transpose() + drho * dp.transpose() + hrho * pv;
            }
        }
    }
}

/// Largest expansion order served by [`table`].
pub const MAX_TABLE_ORDER: usize = 32;

static TABLES: [std::sync::OnceLock<SolidHarmonics>; MAX_TABLE_ORDER + 1] =
    [const { std::sync::OnceLock::new() }; MAX_TABLE_ORDER + 1];

/// Shared, lazily built table for expansion order `lmax`.
///
/// # Panics
/// Panics if `lmax > MAX_TABLE_ORDER`.
pub fn table(lmax: usize) -> &'static SolidHarmonics {
    assert!(lmax <= MAX_TABLE_ORDER, "expansion order {lmax} exceeds {MAX_TABLE_ORDER}");
    TABLES[lmax].get_or_init(|| SolidHarmonics::new(lmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{fd_jacobian, make_sphere_rule};

    #[test]
    fn low_order_closed_forms() {
        let sh = SolidHarmonics::new(2);
        let mut v = vec![0.0; sh.len()];
        let y = Vector3::new(0.3, -0.4, 0.5);
        sh.regular(&y, &mut v);
        let c0 = (1.0 / (4.0 * PI)).sqrt();
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        assert!((v[sh_index(0, 0)] - c0).abs() < 1e-15);
        assert!((v[sh_index(1, 1)] - c1 * y[0]).abs() < 1e-15);
        assert!((v[sh_index(1, -1)] - c1 * y[1]).abs() < 1e-15);
        assert!((v[sh_index(1, 0)] - c1 * y[2]).abs() < 1e-15);
        let c20 = (5.0 / (16.0 * PI)).sqrt();
        let s2 = y.norm_squared();
        assert!((v[sh_index(2, 0)] - c20 * (3.0 * y[2] * y[2] - s2)).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_on_sphere() {
        let lmax = 5;
        let sh = SolidHarmonics::new(lmax);
        let rule = make_sphere_rule(2 * lmax).unwrap();
        let n = sh.len();
        let mut gram = vec![0.0; n * n];
        let mut v = vec![0.0; n];
        for (node, w) in rule.nodes.iter().zip(&rule.weights) {
            sh.regular(node, &mut v);
            for a in 0..n {
                for b in 0..n {
                    gram[a * n + b] += w * v[a] * v[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] - e).abs() < 1e-13, "{a} {b} {}", gram[a * n + b]);
            }
        }
    }

    #[test]
    fn irregular_derivatives_and_harmonicity() {
        let lmax = 4;
        let sh = SolidHarmonics::new(lmax);
        let n = sh.len();
        let y = Vector3::new(0.7, -1.1, 0.4);
        let mut v = vec![0.0; n];
        let mut g = vec![Vector3::zeros(); n];
        let mut h = vec![Matrix3::zeros(); n];
        sh.irregular(&y, &mut v, Some(&mut g), Some(&mut h));
        for idx in 0..n {
            let l = sh.degree(idx) as f64;
            // harmonic: zero Laplacian
            assert!(h[idx].trace().abs() < 1e-12, "idx {idx}");
            // radial derivative of s^{-(l+1)} Y
            let s = y.norm();
            let radial = g[idx].dot(&(y / s));
            assert!((radial + (l + 1.0) / s * v[idx]).abs() < 1e-13);
            let val = |x: &Vector3<f64>| {
                let mut vv = vec![0.0; n];
                sh.irregular(x, &mut vv, None, None);
                vv[idx]
            };
            let fd_g = Vector3::from_fn(|k, _| {
                let mut e = Vector3::zeros();
                e[k] = 1e-5;
                (val(&(y + e)) - val(&(y - e))) / 2e-5
            });
            assert!((fd_g - g[idx]).amax() < 1e-8);
            let grad = |x: &Vector3<f64>| {
                let mut vv = vec![0.0; n];
                let mut gg = vec![Vector3::zeros(); n];
                sh.irregular(x, &mut vv, Some(&mut gg), None);
                gg[idx]
            };
            let fd_h = fd_jacobian(grad, &y, 1e-5);
            assert!((fd_h - h[idx]).amax() < 1e-8);
        }
    }
}
