//! Arbitrary Lagrangian–Eulerian maps for a prescribed piecewise-affine
//! bubble motion: cutoffs `χ_i`, the ALE velocity field, its flow `Θ`, and
//! the Piola pushforward `S(t)`.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_gap, BubbleConfig};
use crate::ode::dopri5_fixed_step;
use crate::quadrature::{fd_jacobian4, gauss_legendre};

const TABLE_CELLS: usize = 512;
const CELL_ORDER: usize = 10;
const MAX_STEPS_PER_PIECE: usize = 1 << 14;

struct MollifierTable {
    z: f64,
    cdf: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn bump(tau: f64) -> f64 {
    if tau.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - tau * tau)).exp()
    }
}

fn cell_integral(a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes.iter().zip(weights).map(|(x, w)| w * bump(mid + half * x)).sum::<f64>() * half
}

fn table() -> &'static MollifierTable {
    static TABLE: OnceLock<MollifierTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(CELL_ORDER);
        let width = 2.0 / TABLE_CELLS as f64;
        let mut cdf = Vec::with_capacity(TABLE_CELLS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..TABLE_CELLS {
            let a = -1.0 + k as f64 * width;
            acc += cell_integral(a, a + width, &nodes, &weights);
            cdf.push(acc);
        }
        let z = acc;
        for v in &mut cdf {
            *v /= z;
        }
        MollifierTable { z, cdf, nodes, weights }
    })
}

/// `∫_{-1}^{1} exp(-1/(1-τ²)) dτ`.
pub fn mollifier_mass() -> f64 {
    table().z
}

/// Unit-mass bump `ω(τ) = exp(-1/(1-τ²))/Z` supported on `[-1, 1]`.
pub fn mollifier(tau: f64) -> f64 {
    bump(tau) / table().z
}

pub fn mollifier_derivative(tau: f64) -> f64 {
    if tau.abs() >= 1.0 {
        return 0.0;
    }
    let d = 1.0 - tau * tau;
    mollifier(tau) * (-2.0 * tau / (d * d))
}

/// `W(τ) = ∫_{-1}^{τ} ω`, from a cached table plus one Gauss cell.
pub fn mollifier_cdf(tau: f64) -> f64 {
    if tau <= -1.0 {
        return 0.0;
    }
    if tau >= 1.0 {
        return 1.0;
    }
    let t = table();
    let width = 2.0 / TABLE_CELLS as f64;
    let k = (((tau + 1.0) / width) as usize).min(TABLE_CELLS - 1);
    let a = -1.0 + k as f64 * width;
    t.cdf[k] + cell_integral(a, tau, &t.nodes, &t.weights) / t.z
}

/// Cutoff in the radial coordinate `s = |x - x_i|`: 1 on `[0, r + δ/4]`,
/// 0 beyond `r + 3δ/4`, nonincreasing in between.
pub fn chi(s: f64, r: f64, delta: f64) -> f64 {
    mollifier_cdf(4.0 * (r + 0.5 * delta - s) / delta)
}

/// `(χ, dχ/ds, d²χ/ds²)`.
pub fn chi_derivatives(s: f64, r: f64, delta: f64) -> (f64, f64, f64) {
    let u = 4.0 * (r + 0.5 * delta - s) / delta;
    let k = 4.0 / delta;
    (mollifier_cdf(u), -k * mollifier(u), k * k * mollifier_derivative(u))
}

/// Bubble state at one knot of the reference trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub time: f64,
    pub centers: Vec<Vector3<f64>>,
    pub radii: Vec<f64>,
}

/// ALE velocity field of a piecewise-affine trajectory `(X(t), R(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AleField {
    knots: Vec<Knot>,
    delta: f64,
    m0: f64,
    min_gap: f64,
}

/// Smallest gap over one affine piece; the gap of each pair is convex in time.
pub(crate) fn piece_min_gap(a: &Knot, b: &Knot) -> f64 {
    let n = a.radii.len();
    let at = |s: f64| -> (Vec<Vector3<f64>>, Vec<f64>) {
        let c = (0..n).map(|i| a.centers[i] * (1.0 - s) + b.centers[i] * s).collect();
        let r = (0..n).map(|i| a.radii[i] * (1.0 - s) + b.radii[i] * s).collect();
        (c, r)
    };
    let mut worst = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let gap = |s: f64| {
                let (c, r) = at(s);
                min_gap(&[c[i], c[j]], &[r[i], r[j]])
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..80 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if gap(m1) <= gap(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            worst = worst.min(gap(0.0)).min(gap(1.0)).min(gap(0.5 * (lo + hi)));
        }
    }
    worst
}

impl AleField {
    /// Requires increasing knot times, positive radii throughout and a
    /// minimal gap of at least `4δ` on the whole time range.
    pub fn new(knots: Vec<Knot>, delta: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidConfig("an ALE trajectory needs at least two knots".into()));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
        }
        let n = knots[0].radii.len();
        if n == 0 {
            return Err(Error::InvalidConfig("an ALE trajectory needs at least one bubble".into()));
        }
        for (k, knot) in knots.iter().enumerate() {
            if knot.radii.len() != n || knot.centers.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: knot.radii.len().min(knot.centers.len()) });
            }
            if !knot.radii.iter().all(|&r| r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!("knot {k} has a nonpositive radius")));
            }
            if !knot.time.is_finite() || (k > 0 && knot.time <= knots[k - 1].time) {
                return Err(Error::InvalidConfig("knot times must increase".into()));
            }
        }
        let gap = knots.windows(2).map(|w| piece_min_gap(&w[0], &w[1])).fold(f64::INFINITY, f64::min);
        if gap < 4.0 * delta {
            return Err(Error::NotAdmissible { min_gap: gap });
        }
        let m0 = knots
            .iter()
            .map(|k| (0..n).map(|i| k.centers[i].norm() + k.radii[i]).fold(0.0, f64::max))
            .fold(0.0, f64::max)
            + delta;
        Ok(Self { knots, delta, m0, min_gap: gap })
    }

    /// One affine piece on `[0, t_end]` starting from `config`.
    pub fn affine(config: &BubbleConfig, xdot: &[Vector3<f64>], rdot: &[f64], t_end: f64, delta: f64) -> Result<Self> {
        let n = config.len();
        if xdot.len() != n || rdot.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: xdot.len().min(rdot.len()) });
        }
        let start = Knot { time: 0.0, centers: config.centers().to_vec(), radii: config.radii().to_vec() };
        let end = Knot {
            time: t_end,
            centers: (0..n).map(|i| config.centers()[i] + xdot[i] * t_end).collect(),
            radii: (0..n).map(|i| config.radii()[i] + rdot[i] * t_end).collect(),
        };
        Self::new(vec![start, end], delta)
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Radius beyond which the field vanishes and the flow is the identity.
    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// Smallest gap over the whole trajectory.
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn bubble_count(&self) -> usize {
        self.knots[0].radii.len()
    }

    pub fn start_time(&self) -> f64 {
        self.knots[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.knots[self.knots.len() - 1].time
    }

    fn piece_count(&self) -> usize {
        self.knots.len() - 1
    }

    fn piece_of(&self, t: f64) -> usize {
        let p = self.knots.partition_point(|k| k.time <= t);
        p.saturating_sub(1).min(self.piece_count() - 1)
    }

    /// Centers, radii and their constant rates on piece `p` at time `t`.
    fn piece_state(&self, p: usize, t: f64, i: usize) -> (Vector3<f64>, f64, Vector3<f64>, f64) {
        let a = &self.knots[p];
        let b = &self.knots[p + 1];
        let dt = b.time - a.time;
        let xdot = (b.centers[i] - a.centers[i]) / dt;
        let rdot = (b.radii[i] - a.radii[i]) / dt;
        let s = t - a.time;
        (a.centers[i] + xdot * s, a.radii[i] + rdot * s, xdot, rdot)
    }

    /// `(x_i(t), r_i(t))`.
    pub fn bubble(&self, i: usize, t: f64) -> (Vector3<f64>, f64) {
        let (x, r, _, _) = self.piece_state(self.piece_of(t), t, i);
        (x, r)
    }

    /// `χ_i(t, s)`.
    pub fn chi(&self, i: usize, t: f64, s: f64) -> f64 {
        chi(s, self.bubble(i, t).1, self.delta)
    }

    fn velocity_in_piece(&self, p: usize, t: f64, x: &Vector3<f64>) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for i in 0..self.bubble_count() {
            let (c, r, xdot, rdot) = self.piece_state(p, t, i);
            let d = x - c;
            let s = d.norm();
            if s >= r + 0.75 * self.delta {
                continue;
            }
            v += (xdot + d * (rdot / r)) * chi(s, r, self.delta);
        }
        v
    }

    fn gradient_in_piece(&self, p: usize, t: f64, x: &Vector3<f64>) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for i in 0..self.bubble_count() {
            let (c, r, xdot, rdot) = self.piece_state(p, t, i);
            let d = x - c;
            let s = d.norm();
            if s >= r + 0.75 * self.delta {
                continue;
            }
            let (ch, dch, _) = chi_derivatives(s, r, self.delta);
            let w = xdot + d * (rdot / r);
            if s > 0.0 {
                g += w * (d / s).transpose() * dch;
            }
            g += Matrix3::identity() * (ch * rdot / r);
        }
        g
    }

    /// `v^ALE(t, x) = Σ_i χ_i (ẋ_i + (ṙ_i/r_i)(x - x_i))`.
    pub fn velocity(&self, t: f64, x: &Vector3<f64>) -> Vector3<f64> {
        self.velocity_in_piece(self.piece_of(t), t, x)
    }

    /// `J[j][k] = ∂_k v_j`.
    pub fn velocity_gradient(&self, t: f64, x: &Vector3<f64>) -> Matrix3<f64> {
        self.gradient_in_piece(self.piece_of(t), t, x)
    }
}

/// `Θ(t, x)` with its Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub position: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
}

impl FlowPoint {
    pub fn det(&self) -> f64 {
        self.jacobian.determinant()
    }

    /// `Cof(DΘ) = det(DΘ) DΘ^{-T}`.
    pub fn cofactor(&self) -> Matrix3<f64> {
        cofactor(&self.jacobian)
    }
}

pub fn cofactor(m: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| {
        let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
        let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let minor = m[(r[0], c[0])] * m[(r[1], c[1])] - m[(r[0], c[1])] * m[(r[1], c[0])];
        if (i + j) % 2 == 0 {
            minor
        } else {
            -minor
        }
    })
}

fn pack(x: &Vector3<f64>, j: &Matrix3<f64>) -> [f64; 12] {
    let mut y = [0.0; 12];
    y[..3].copy_from_slice(x.as_slice());
    y[3..].copy_from_slice(j.as_slice());
    y
}

fn unpack(y: &[f64]) -> FlowPoint {
    FlowPoint { position: Vector3::new(y[0], y[1], y[2]), jacobian: Matrix3::from_column_slice(&y[3..12]) }
}

/// Flow of an [`AleField`] with a fixed time grid: every piece is split into
/// equal fifth-order steps, so the discrete map is smooth in `x` and `t`.
#[derive(Debug, Clone)]
pub struct FlowMap {
    field: AleField,
    steps: Vec<usize>,
    tol: f64,
}

impl FlowMap {
    /// Chooses the steps per piece by doubling until the flow of probe
    /// points in each transition shell changes by less than `tol / 10`.
    pub fn build(field: AleField, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("flow tolerance must be positive, got {tol}")));
        }
        let mut steps = vec![0; field.piece_count()];
        for p in 0..field.piece_count() {
            let t0 = field.knots[p].time;
            let probes: Vec<Vector3<f64>> = (0..field.bubble_count())
                .flat_map(|i| {
                    let (c, r) = (field.knots[p].centers[i], field.knots[p].radii[i]);
                    let d = field.delta;
                    [0.0, 0.25, 0.5, 0.625]
                        .into_iter()
                        .flat_map(move |f| {
                            [Vector3::x(), -Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, 1.0, 1.0).normalize()]
                                .into_iter()
                                .map(move |e| c + e * (r + f * d))
                        })
                })
                .collect();
            let mut n = 2;
            let mut prev: Vec<FlowPoint> = probes.iter().map(|x| integrate_piece(&field, p, t0, x, n, 1.0)).collect();
            loop {
                n *= 2;
                let next: Vec<FlowPoint> = probes.iter().map(|x| integrate_piece(&field, p, t0, x, n, 1.0)).collect();
                let change = prev
                    .iter()
                    .zip(&next)
                    .map(|(a, b)| (a.position - b.position).amax().max((a.jacobian - b.jacobian).amax()))
                    .fold(0.0, f64::max);
                prev = next;
                if change < 0.1 * tol {
                    break;
                }
                if n >= MAX_STEPS_PER_PIECE {
                    return Err(Error::Integration {
                        time: t0,
                        reason: format!("flow did not reach tolerance {tol:e} with {n} steps"),
                    });
                }
            }
            steps[p] = n;
        }
        Ok(Self { field, steps, tol })
    }

    pub fn field(&self) -> &AleField {
        &self.field
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= self.field.start_time() && t <= self.field.end_time()) {
            return Err(Error::InvalidConfig(format!(
                "time {t} outside the trajectory [{}, {}]",
                self.field.start_time(),
                self.field.end_time()
            )));
        }
        Ok(())
    }

    /// `Θ(t, x)` and `DΘ(t, x)`, flowing from the start time.
    pub fn flow(&self, t: f64, x: &Vector3<f64>) -> Result<FlowPoint> {
        self.check_time(t)?;
        let mut y = pack(x, &Matrix3::identity());
        if x.norm() >= self.field.m0 {
            return Ok(unpack(&y));
        }
        for p in 0..self.field.piece_count() {
            let a = self.field.knots[p].time;
            if t <= a {
                break;
            }
            let b = self.field.knots[p + 1].time;
            let h = (b - a) / self.steps[p] as f64;
            y = advance(&self.field, p, a, t.min(b), h, &y);
        }
        Ok(unpack(&y))
    }

    /// Position only.
    pub fn map(&self, t: f64, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.flow(t, x)?.position)
    }

    /// `Θ(t, ·)⁻¹(x)`: backward flow, then Newton on `Θ(t, y) = x`.
    pub fn inverse(&self, t: f64, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        self.check_time(t)?;
        if x.norm() >= self.field.m0 {
            return Ok(*x);
        }
        let mut y = pack(x, &Matrix3::identity());
        for p in (0..self.field.piece_count()).rev() {
            let a = self.field.knots[p].time;
            if t <= a {
                continue;
            }
            let b = self.field.knots[p + 1].time.min(t);
            let h = (self.field.knots[p + 1].time - a) / self.steps[p] as f64;
            y = retreat(&self.field, p, b, a, h, &y);
        }
        let mut z = Vector3::new(y[0], y[1], y[2]);
        let scale = x.norm().max(self.field.m0);
        for _ in 0..20 {
            let fp = self.flow(t, &z)?;
            let r = fp.position - x;
            if r.norm() <= 1e-14 * scale {
                return Ok(z);
            }
            let dz = fp
                .jacobian
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Degenerate(format!("singular flow Jacobian at {z:?}")))?;
            z -= dz;
        }
        let r = (self.flow(t, &z)?.position - x).norm();
        if r <= 1e-11 * scale {
            Ok(z)
        } else {
            Err(Error::NonConvergence { sweeps: 20, last_residual: r })
        }
    }

    /// Scaling map `x_i(t) + (r_i(t)/r_i(0))(x - x_i(0))` valid near bubble i.
    pub fn closed_form(&self, i: usize, t: f64, x: &Vector3<f64>) -> Vector3<f64> {
        let (c0, r0) = self.field.bubble(i, self.field.start_time());
        let (c, r) = self.field.bubble(i, t);
        c + (x - c0) * (r / r0)
    }

    /// `(S(t)v)(x) = [Cof DΘ_t⁻¹(x)]ᵀ v(Θ_t⁻¹(x)) = DΘ v / det DΘ` at the preimage.
    pub fn pushforward<F: Fn(&Vector3<f64>) -> Vector3<f64>>(&self, t: f64, v: F, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let y = self.inverse(t, x)?;
        let fp = self.flow(t, &y)?;
        Ok(fp.jacobian * v(&y) / fp.det())
    }

    /// `(S(t)⁻¹w)(y) = Cof(DΘ)ᵀ w(Θ(y))`.
    pub fn pullback<F: Fn(&Vector3<f64>) -> Vector3<f64>>(&self, t: f64, w: F, y: &Vector3<f64>) -> Result<Vector3<f64>> {
        let fp = self.flow(t, y)?;
        Ok(fp.cofactor().transpose() * w(&fp.position))
    }

    /// `∂_t e + (v·∇)e + (div v) e - (e·∇)v` for `e(t) = S(t)v₀` and the ALE
    /// velocity v, by fourth-order central differences with steps `dt` in
    /// time and `h` in space. Requires `[t - 2dt, t + 2dt]` inside the trajectory.
    pub fn transport_residual<F: Fn(&Vector3<f64>) -> Vector3<f64>>(
        &self,
        t: f64,
        v0: F,
        x: &Vector3<f64>,
        dt: f64,
        h: f64,
    ) -> Result<Vector3<f64>> {
        self.check_time(t - 2.0 * dt)?;
        self.check_time(t + 2.0 * dt)?;
        let e = |s: f64, y: &Vector3<f64>| self.pushforward(s, &v0, y).unwrap_or_else(|_| Vector3::repeat(f64::NAN));
        let et = (e(t - 2.0 * dt, x) - e(t + 2.0 * dt, x) + (e(t + dt, x) - e(t - dt, x)) * 8.0) / (12.0 * dt);
        let ex = e(t, x);
        let de = fd_jacobian4(|y| e(t, y), x, h);
        let v = self.field.velocity(t, x);
        let dv = self.field.velocity_gradient(t, x);
        let res = et + de * v + ex * dv.trace() - dv * ex;
        if !res.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { location: format!("transport residual at t = {t}, x = {x:?}") });
        }
        Ok(res)
    }

    /// Image of the reference normal under the Lagrangian transport,
    /// `Cof(DΘ) n / |Cof(DΘ) n|`.
    pub fn transported_normal(&self, t: f64, y: &Vector3<f64>, n: &Vector3<f64>) -> Result<Vector3<f64>> {
        let m = self.flow(t, y)?.cofactor() * n;
        Ok(m / m.norm())
    }
}

fn variational_rhs(field: &AleField, p: usize, t: f64, y: &[f64], dy: &mut [f64]) {
    let x = Vector3::new(y[0], y[1], y[2]);
    let v = field.velocity_in_piece(p, t, &x);
    let g = field.gradient_in_piece(p, t, &x);
    let j = Matrix3::from_column_slice(&y[3..12]);
    dy[..3].copy_from_slice(v.as_slice());
    dy[3..].copy_from_slice((g * j).as_slice());
}

/// Forward from `a` to `b` in steps of `h` (last step shortened).
fn advance(field: &AleField, p: usize, a: f64, b: f64, h: f64, y: &[f64; 12]) -> [f64; 12] {
    let mut y = *y;
    let mut t = a;
    let mut k = 0usize;
    loop {
        let next = a + (k + 1) as f64 * h;
        let step = if next >= b - 1e-12 * h { b - t } else { h };
        if step > 0.0 {
            let out = dopri5_fixed_step(|tt, yy, dd| variational_rhs(field, p, tt, yy, dd), t, &y, step);
            y.copy_from_slice(&out);
        }
        if next >= b - 1e-12 * h {
            return y;
        }
        t = next;
        k += 1;
    }
}

/// Backward from `b` to `a`, using the forward grid of piece `p` anchored at `a`.
fn retreat(field: &AleField, p: usize, b: f64, a: f64, h: f64, y: &[f64; 12]) -> [f64; 12] {
    let mut y = *y;
    let full = ((b - a) / h - 1e-12).floor().max(0.0) as usize;
    let grid = a + full as f64 * h;
    if b > grid {
        let out = dopri5_fixed_step(|tt, yy, dd| variational_rhs(field, p, tt, yy, dd), b, &y, grid - b);
        y.copy_from_slice(&out);
    }
    for k in (0..full).rev() {
        let t = a + (k + 1) as f64 * h;
        let out = dopri5_fixed_step(|tt, yy, dd| variational_rhs(field, p, tt, yy, dd), t, &y, -h);
        y.copy_from_slice(&out);
    }
    y
}

fn integrate_piece(field: &AleField, p: usize, t0: f64, x: &Vector3<f64>, n: usize, frac: f64) -> FlowPoint {
    let b = field.knots[p + 1].time;
    let h = (b - t0) / n as f64;
    let end = t0 + frac * (b - t0);
    unpack(&advance(field, p, t0, end, h, &pack(x, &Matrix3::identity())))
}

/// `Θ(t, x)` for a single query; builds a [`FlowMap`] with tolerance `tol`.
pub fn flow(field: &AleField, t: f64, x: &Vector3<f64>, tol: f64) -> Result<FlowPoint> {
    FlowMap::build(field.clone(), tol)?.flow(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{fd_divergence, make_sphere_rule};
    use std::f64::consts::PI;

    fn pair_field() -> AleField {
        let config = BubbleConfig::new(
            vec![Vector3::new(-2.0, 0.0, 0.0), Vector3::new(2.0, 0.5, 0.0)],
            vec![1.0, 0.8],
            vec![4.0 * PI; 2],
            5.0 / 3.0,
        )
        .unwrap();
        let delta = 0.25 * config.min_gap() * 0.5;
        AleField::affine(&config, &[Vector3::new(0.2, 0.1, 0.0), Vector3::new(-0.1, 0.0, 0.3)], &[0.3, -0.2], 0.5, delta)
            .unwrap()
    }

    #[test]
    fn mollifier_properties() {
        assert!((mollifier_mass() - 0.443_993_816_168_079_4).abs() < 1e-14);
        assert!((mollifier_cdf(0.0) - 0.5).abs() < 1e-14);
        assert_eq!(mollifier_cdf(-1.0), 0.0);
        assert_eq!(mollifier_cdf(1.0), 1.0);
        for k in 0..200 {
            let t = -0.995 + k as f64 * 0.01;
            let d = (mollifier_cdf(t + 1e-5) - mollifier_cdf(t - 1e-5)) / 2e-5;
            assert!((d - mollifier(t)).abs() < 1e-8, "{t}");
            assert!((mollifier_cdf(t) + mollifier_cdf(-t) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn chi_examples() {
        let (r, d) = (1.0, 0.4);
        assert_eq!(chi(r, r, d), 1.0);
        assert_eq!(chi(r + 0.25 * d, r, d), 1.0);
        assert_eq!(chi(r + d, r, d), 0.0);
        assert_eq!(chi(r + 0.75 * d, r, d), 0.0);
        let mut prev = 1.0;
        for k in 0..=100 {
            let c = chi(r + d * k as f64 / 100.0, r, d);
            assert!(c <= prev && (0.0..=1.0).contains(&c));
            prev = c;
        }
        let (_, d1, d2) = chi_derivatives(1.2, r, d);
        let h = 1e-5;
        assert!((d1 - (chi(1.2 + h, r, d) - chi(1.2 - h, r, d)) / (2.0 * h)).abs() < 1e-6);
        let (_, a, _) = chi_derivatives(1.2 + h, r, d);
        let (_, b, _) = chi_derivatives(1.2 - h, r, d);
        assert!((d2 - (a - b) / (2.0 * h)).abs() < 1e-4 * d2.abs().max(1.0));
    }

    #[test]
    fn velocity_examples() {
        let f = pair_field();
        let rule = make_sphere_rule(6).unwrap();
        for n in &rule.nodes {
            let x = Vector3::new(-2.0, 0.0, 0.0) + n;
            let v = f.velocity(0.0, &x);
            assert!((v - (Vector3::new(0.2, 0.1, 0.0) + n * 0.3)).norm() < 1e-15);
        }
        assert_eq!(f.velocity(0.3, &Vector3::new(0.0, 0.0, 30.0)), Vector3::zeros());
        assert_eq!(f.velocity(0.3, &Vector3::new(0.0, 0.25, 0.0)), Vector3::zeros());
        let x = Vector3::new(-0.6, 0.2, 0.1);
        let g = f.velocity_gradient(0.2, &x);
        let fd = fd_jacobian4(|y| f.velocity(0.2, y), &x, 1e-4);
        assert!((g - fd).amax() < 1e-8);
    }

    #[test]
    fn flow_properties() {
        let f = pair_field();
        let tol = 1e-10;
        let map = FlowMap::build(f.clone(), tol).unwrap();
        let far = Vector3::new(f.m0() + 0.1, 0.0, 0.0);
        assert_eq!(map.map(0.5, &far).unwrap(), far);
        let (c0, r0) = f.bubble(0, 0.0);
        let (_, r1) = f.bubble(0, 0.4);
        for dir in [Vector3::x(), Vector3::y(), -Vector3::z()] {
            let x = c0 + dir * (r0 + f.delta() / 8.0);
            let fp = map.flow(0.4, &x).unwrap();
            assert!((fp.position - map.closed_form(0, 0.4, &x)).norm() < 10.0 * tol);
            assert!((fp.det() - (r1 / r0).powi(3)).abs() < 10.0 * tol);
        }
        let x = Vector3::new(-0.6, 0.3, 0.1);
        let fp = map.flow(0.5, &x).unwrap();
        let fd = fd_jacobian4(|y| map.map(0.5, y).unwrap(), &x, 2.5e-4);
        assert!((fp.jacobian - fd).amax() < 1e-8);
        assert!(fp.det() > 0.0);
        let back = map.inverse(0.5, &fp.position).unwrap();
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn pushforward_identities() {
        let f = pair_field();
        let map = FlowMap::build(f.clone(), 1e-11).unwrap();
        let v = |x: &Vector3<f64>| Vector3::new(-x[1], x[0] + x[2], 0.3 * x[0]);
        let x = Vector3::new(-0.5, 0.4, 0.2);
        assert!((map.pushforward(0.0, v, &x).unwrap() - v(&x)).norm() < 1e-14);
        let pushed = |y: &Vector3<f64>| map.pushforward(0.45, v, y).unwrap();
        let back = map.pullback(0.45, pushed, &x).unwrap();
        assert!((back - v(&x)).norm() < 1e-8);
        let div = fd_divergence(pushed, &x, 1e-3);
        assert!(div.abs() < 1e-6, "{div}");
    }

    #[test]
    fn piola_identity() {
        let f = pair_field();
        let map = FlowMap::build(f, 1e-11).unwrap();
        for x in [Vector3::new(-0.6, 0.3, 0.1), Vector3::new(0.9, 0.9, -0.2), Vector3::new(-2.0, 1.25, 0.0)] {
            let cof = map.flow(0.5, &x).unwrap().cofactor();
            let h = 2.5e-4;
            for i in 0..3 {
                let row = |y: &Vector3<f64>| map.flow(0.5, y).unwrap().cofactor().row(i).transpose();
                let res = fd_divergence4(row, &x, h);
                assert!(res.abs() <= 1e-7 * cof.amax(), "{x:?} row {i}: {res}");
            }
        }
    }

    fn fd_divergence4<F: Fn(&Vector3<f64>) -> Vector3<f64>>(f: F, x: &Vector3<f64>, h: f64) -> f64 {
        fd_jacobian4(f, x, h).trace()
    }

    #[test]
    fn transport_identity() {
        let f = pair_field();
        let map = FlowMap::build(f, 1e-11).unwrap();
        let v = |x: &Vector3<f64>| Vector3::new(-x[1], x[0] + x[2], 0.3 * x[0]);
        for x in [Vector3::new(-0.6, 0.3, 0.1), Vector3::new(0.9, 0.9, -0.2), Vector3::new(-2.0, 1.25, 0.0)] {
            let res = map.transport_residual(0.25, v, &x, 1e-3, 2.5e-4).unwrap();
            assert!(res.norm() <= 1e-5, "{x:?}: {res:?}");
        }
    }

    #[test]
    fn normal_transport_and_tangency() {
        let f = pair_field();
        let map = FlowMap::build(f.clone(), 1e-11).unwrap();
        let rule = make_sphere_rule(8).unwrap();
        let (c0, r0) = f.bubble(1, 0.0);
        let (c1, r1) = f.bubble(1, 0.5);
        // tangent to sphere 1 at time 0
        let v = |y: &Vector3<f64>| (y - c0).cross(&Vector3::new(0.3, -0.2, 1.0));
        for n in &rule.nodes {
            let y = c0 + n * r0;
            let nt = map.transported_normal(0.5, &y, n).unwrap();
            let x = map.map(0.5, &y).unwrap();
            assert!((nt - (x - c1) / r1).norm() < 1e-8);
            assert!(map.pushforward(0.5, v, &x).unwrap().dot(&nt).abs() < 1e-7);
        }
    }
}
