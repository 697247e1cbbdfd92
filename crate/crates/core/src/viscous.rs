//! Prescribed-dynamics Galerkin windows and the time-stepping scheme built
//! on them.
//!
//! Inside a window the bubbles follow a given affine motion and the velocity
//! `u = Σ a_c φ_c` is expanded on the harmonic fields of the moving
//! configuration, optionally augmented by solenoidal modes tangent to every
//! sphere. In the orthonormal frame `b = G^{1/2} a` (`Λ = G^{-1/2}`) the
//! Galerkin system reads
//!
//! `ḃ = Ω b + Λ T(a) - Λ K Λᵀ b + Λ F`,
//!
//! where `Ω` is the skew part of `Λ̇ Λ⁻¹ + Λ Pᵀ Λᵀ`, `P_cd = ∫ φ_c·∂_t φ_d`,
//! `K` the dissipation matrix, `T` the convection term combined with the
//! part of the boundary mismatch term quadratic in `u`, and `F` the pressure
//! forcing. The symmetric part of `Λ̇ Λ⁻¹ + Λ Pᵀ Λᵀ` cancels the remaining
//! part of the mismatch term exactly and both are omitted.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::ale::{chi_derivatives, piece_min_gap, Knot};
use crate::energy::{apriori_velocity_bounds, potential_energy, EnergyLedger, LedgerEntry};
use crate::error::{Error, Result};
use crate::geometry::{detect_collision, validate_admissible, BubbleConfig};
use crate::harmonic::{gram, solve_reflections, EvalLevel, FieldKind, GramMatrix, HarmonicBasis, ReflectionOptions};
use crate::quadrature::{exterior_nodes, make_sphere_rule, ExteriorNodes, ExteriorRule, FarField, NeumaierSum, SphereRule};
use crate::rayleigh_plesset::R_FLOOR;
use crate::trajectory::{to_array, Accumulated, Event, EventTag, Trajectory, TrajectoryRecord};

/// A divergence-free field tangent to every sphere, defined for any configuration.
pub trait SolenoidalMode: Send + Sync {
    fn label(&self) -> String;

    /// Value and Jacobian `J[j][k] = ∂_k e_j` at `x`.
    fn eval(&self, config: &BubbleConfig, x: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>);
}

/// Rotating flow around bubble i, `ω × (x - x_i) (r_i/s)³ χ(s)`, cut off by
/// the ALE mollifier so it vanishes near the other bubbles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotlet {
    pub bubble: usize,
    pub omega: Vector3<f64>,
    pub delta: f64,
}

impl SolenoidalMode for Rotlet {
    fn label(&self) -> String {
        format!("rotlet_{}", self.bubble + 1)
    }

    fn eval(&self, config: &BubbleConfig, x: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let c = config.centers()[self.bubble];
        let r = config.radii()[self.bubble];
        let d = x - c;
        let s = d.norm();
        if s >= r + 0.75 * self.delta || s == 0.0 {
            return (Vector3::zeros(), Matrix3::zeros());
        }
        let (ch, dch, _) = chi_derivatives(s, r, self.delta);
        let p = (r / s).powi(3);
        let f = ch * p;
        let df = dch * p - 3.0 * ch * p / s;
        let w = self.omega.cross(&d);
        let cross = Matrix3::new(
            0.0,
            -self.omega[2],
            self.omega[1],
            self.omega[2],
            0.0,
            -self.omega[0],
            -self.omega[1],
            self.omega[0],
            0.0,
        );
        (w * f, w * (d / s).transpose() * df + cross * f)
    }
}

/// Which harmonic fields enter the reduced basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSelection {
    All,
    MonopolesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipationMethod {
    /// Volume quadrature of `D(φ_c):D(φ_d)`.
    Exterior,
    /// `-Σ_j ∮ φ_c·(∇φ_d n)`, valid for harmonic gradients only.
    Boundary,
}

pub type Modes = [Arc<dyn SolenoidalMode>];

/// Harmonic fields of one configuration plus solenoidal modes, with Gram matrix.
#[derive(Clone)]
pub struct ReducedBasis {
    config: BubbleConfig,
    harmonic: HarmonicBasis,
    fields: Vec<usize>,
    modes: Vec<Arc<dyn SolenoidalMode>>,
    pub gram: GramMatrix,
    /// `max |G_ab|` between a harmonic field and a solenoidal mode.
    pub block_coupling: f64,
}

impl fmt::Debug for ReducedBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedBasis")
            .field("fields", &self.fields)
            .field("modes", &self.modes.iter().map(|m| m.label()).collect::<Vec<_>>())
            .field("block_coupling", &self.block_coupling)
            .finish()
    }
}

/// Values and Jacobians of all fields at one point.
struct PointValues {
    value: Vec<Vector3<f64>>,
    jacobian: Vec<Matrix3<f64>>,
}

fn nodes_with_weights(nodes: &ExteriorNodes) -> impl Iterator<Item = (&Vector3<f64>, f64)> {
    let tail = matches!(nodes.far_field, FarField::AnalyticTail { .. });
    nodes
        .points
        .iter()
        .zip(nodes.weights.iter().copied())
        .chain(nodes.tail_points.iter().zip(nodes.tail_weights.iter().copied()).filter(move |_| tail))
}

impl ReducedBasis {
    pub fn build(
        config: &BubbleConfig,
        selection: FieldSelection,
        modes: &Modes,
        reflections: &ReflectionOptions,
        exterior: &ExteriorRule,
    ) -> Result<Self> {
        let harmonic = solve_reflections(config, reflections)?;
        let n = config.len();
        let fields: Vec<usize> = match selection {
            FieldSelection::All => (0..4 * n).collect(),
            FieldSelection::MonopolesOnly => (0..n).collect(),
        };
        let full = gram(&harmonic, config)?;
        let nh = fields.len();
        let nf = nh + modes.len();
        let mut g = DMatrix::zeros(nf, nf);
        for (p, &a) in fields.iter().enumerate() {
            for (q, &b) in fields.iter().enumerate() {
                g[(p, q)] = full.matrix[(a, b)];
            }
        }
        let mut basis = Self {
            config: config.clone(),
            harmonic,
            fields,
            modes: modes.to_vec(),
            gram: GramMatrix { matrix: DMatrix::zeros(0, 0), raw_asymmetry: full.raw_asymmetry },
            block_coupling: 0.0,
        };
        if !modes.is_empty() {
            let nodes = exterior_nodes(config, exterior)?;
            let mut acc = vec![NeumaierSum::default(); nf * nf];
            for (x, w) in nodes_with_weights(&nodes) {
                let v = basis.eval(x, false);
                for p in 0..nf {
                    for q in nh.max(p)..nf {
                        acc[p * nf + q].add(w * v.value[p].dot(&v.value[q]));
                    }
                }
            }
            for p in 0..nf {
                for q in nh.max(p)..nf {
                    g[(p, q)] = acc[p * nf + q].value();
                    g[(q, p)] = g[(p, q)];
                    if p < nh {
                        basis.block_coupling = basis.block_coupling.max(g[(p, q)].abs());
                    }
                }
            }
        }
        basis.gram.matrix = g;
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.fields.len() + self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> &BubbleConfig {
        &self.config
    }

    pub fn harmonic(&self) -> &HarmonicBasis {
        &self.harmonic
    }

    /// Number of harmonic fields (they come first).
    pub fn harmonic_len(&self) -> usize {
        self.fields.len()
    }

    pub fn kind(&self, p: usize) -> Option<FieldKind> {
        self.fields.get(p).map(|&a| self.harmonic.kind(a))
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.harmonic_len())
            .map(|p| self.kind(p).expect("harmonic index").label())
            .chain(self.modes.iter().map(|m| m.label()))
            .collect()
    }

    fn eval(&self, x: &Vector3<f64>, jacobians: bool) -> PointValues {
        let level = if jacobians { EvalLevel::Hessian } else { EvalLevel::Gradient };
        let vals = self.harmonic.eval_all(x, level);
        let mut value = Vec::with_capacity(self.len());
        let mut jacobian = Vec::with_capacity(if jacobians { self.len() } else { 0 });
        for &a in &self.fields {
            value.push(vals.gradient[a]);
            if jacobians {
                jacobian.push(vals.hessian[a]);
            }
        }
        for m in &self.modes {
            let (v, j) = m.eval(&self.config, x);
            value.push(v);
            if jacobians {
                jacobian.push(j);
            }
        }
        PointValues { value, jacobian }
    }

    fn potentials(&self, x: &Vector3<f64>) -> Vec<f64> {
        let vals = self.harmonic.eval_all(x, EvalLevel::Potential);
        self.fields.iter().map(|&a| vals.potential[a]).collect()
    }

    /// Velocity `Σ a_c φ_c` at `x`.
    pub fn velocity(&self, coefficients: &[f64], x: &Vector3<f64>) -> Result<Vector3<f64>> {
        if coefficients.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: coefficients.len() });
        }
        if let Some(i) = self.config.containing_bubble(x) {
            return Err(Error::Domain { point: [x[0], x[1], x[2]], reason: format!("inside bubble {i}") });
        }
        let v = self.eval(x, false);
        Ok(v.value.iter().zip(coefficients).fold(Vector3::zeros(), |acc, (f, c)| acc + f * *c))
    }
}

/// `2ν ∫ D(φ_c):D(φ_d)`.
pub fn dissipation_matrix(
    basis: &ReducedBasis,
    nu: f64,
    method: DissipationMethod,
    exterior: &ExteriorRule,
    sphere: &SphereRule,
) -> Result<DMatrix<f64>> {
    if !(nu >= 0.0) {
        return Err(Error::InvalidConfig(format!("viscosity must be nonnegative, got {nu}")));
    }
    let nf = basis.len();
    if nu == 0.0 {
        return Ok(DMatrix::zeros(nf, nf));
    }
    let mut acc = vec![NeumaierSum::default(); nf * nf];
    match method {
        DissipationMethod::Exterior => {
            let nodes = exterior_nodes(&basis.config, exterior)?;
            for (x, w) in nodes_with_weights(&nodes) {
                let v = basis.eval(x, true);
                let d: Vec<Matrix3<f64>> = v.jacobian.iter().map(|j| (j + j.transpose()) * 0.5).collect();
                for p in 0..nf {
                    for q in p..nf {
                        acc[p * nf + q].add(w * d[p].dot(&d[q]));
                    }
                }
            }
        }
        DissipationMethod::Boundary => {
            if !basis.modes.is_empty() {
                return Err(Error::InvalidConfig(
                    "the boundary dissipation formula applies to harmonic fields only".into(),
                ));
            }
            let c = basis.config();
            for j in 0..c.len() {
                let r2 = c.radii()[j] * c.radii()[j];
                for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
                    let x = c.centers()[j] + n * c.radii()[j];
                    let v = basis.eval(&x, true);
                    for p in 0..nf {
                        for q in p..nf {
                            let a = v.value[p].dot(&(v.jacobian[q] * n));
                            let b = v.value[q].dot(&(v.jacobian[p] * n));
                            acc[p * nf + q].add(-0.5 * r2 * wn * (a + b));
                        }
                    }
                }
            }
        }
    }
    let mut k = DMatrix::zeros(nf, nf);
    for p in 0..nf {
        for q in p..nf {
            k[(p, q)] = 2.0 * nu * acc[p * nf + q].value();
            k[(q, p)] = k[(p, q)];
        }
    }
    Ok(k)
}

/// Energy-neutral convection tensor `T[d][c][e]`, stored as `d·n² + c·n + e`.
fn convection_tensor(basis: &ReducedBasis, exterior: &ExteriorRule, sphere: &SphereRule) -> Result<Vec<f64>> {
    let nf = basis.len();
    let mut acc = vec![NeumaierSum::default(); nf * nf * nf];
    if basis.modes.is_empty() {
        // ½∮ (φ_c·φ_e)(φ_d·n) - ¼(φ_c·n)(φ_e·φ_d) - ¼(φ_e·n)(φ_c·φ_d)
        let c = basis.config();
        for j in 0..c.len() {
            let r2 = c.radii()[j] * c.radii()[j];
            for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
                let x = c.centers()[j] + n * c.radii()[j];
                let v = basis.eval(&x, false);
                let vn: Vec<f64> = v.value.iter().map(|f| f.dot(n)).collect();
                let w = r2 * wn;
                for d in 0..nf {
                    for cc in 0..nf {
                        for e in 0..nf {
                            let t = 0.5 * v.value[cc].dot(&v.value[e]) * vn[d]
                                - 0.25 * vn[cc] * v.value[e].dot(&v.value[d])
                                - 0.25 * vn[e] * v.value[cc].dot(&v.value[d]);
                            acc[(d * nf + cc) * nf + e].add(w * t);
                        }
                    }
                }
            }
        }
    } else {
        // ½∫ φ_c·(φ_e·∇)φ_d - φ_d·(φ_e·∇)φ_c
        let nodes = exterior_nodes(&basis.config, exterior)?;
        for (x, w) in nodes_with_weights(&nodes) {
            let v = basis.eval(x, true);
            for e in 0..nf {
                let adv: Vec<Vector3<f64>> = v.jacobian.iter().map(|j| j * v.value[e]).collect();
                for d in 0..nf {
                    for cc in 0..nf {
                        let t = 0.5 * (v.value[cc].dot(&adv[d]) - v.value[d].dot(&adv[cc]));
                        acc[(d * nf + cc) * nf + e].add(w * t);
                    }
                }
            }
        }
    }
    Ok(acc.iter().map(|s| s.value()).collect())
}

fn contract(t: &[f64], a: &[f64]) -> Vec<f64> {
    let nf = a.len();
    (0..nf)
        .map(|d| {
            let mut s = 0.0;
            for c in 0..nf {
                let row = &t[(d * nf + c) * nf..(d * nf + c + 1) * nf];
                let inner: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
                s += a[c] * inner;
            }
            s
        })
        .collect()
}

/// Boundary averages: `N[i][d] = ⨏_i φ_d·n` and `X[i][k][d] = 3⨏_i (φ_d·n) n_k`.
fn boundary_rates(basis: &ReducedBasis, sphere: &SphereRule) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = basis.config();
    let n = c.len();
    let nf = basis.len();
    let mut nm = DMatrix::zeros(n, nf);
    let mut xm = DMatrix::zeros(3 * n, nf);
    for i in 0..n {
        let mut s = vec![NeumaierSum::default(); nf];
        let mut v = vec![NeumaierSum::default(); 3 * nf];
        for (node, w) in sphere.nodes.iter().zip(&sphere.weights) {
            let x = c.centers()[i] + node * c.radii()[i];
            let vals = basis.eval(&x, false);
            for d in 0..nf {
                let un = vals.value[d].dot(node);
                s[d].add(w * un);
                for k in 0..3 {
                    v[3 * d + k].add(w * un * node[k]);
                }
            }
        }
        for d in 0..nf {
            nm[(i, d)] = s[d].value() / (4.0 * PI);
            for k in 0..3 {
                xm[(3 * i + k, d)] = 3.0 * v[3 * d + k].value() / (4.0 * PI);
            }
        }
    }
    (nm, xm)
}

/// `½ Σ_i ∮ (u·n - ṙ_i - ẋ_i·n)(φ_d·u)` for the prescribed rates `(Ẋ, Ṙ)`.
pub fn mismatch_term(
    basis: &ReducedBasis,
    coefficients: &[f64],
    xdot: &[Vector3<f64>],
    rdot: &[f64],
    sphere: &SphereRule,
) -> Result<Vec<f64>> {
    let nf = basis.len();
    let c = basis.config();
    if coefficients.len() != nf {
        return Err(Error::DimensionMismatch { expected: nf, got: coefficients.len() });
    }
    if xdot.len() != c.len() || rdot.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: c.len(), got: xdot.len().min(rdot.len()) });
    }
    let mut acc = vec![NeumaierSum::default(); nf];
    for j in 0..c.len() {
        let r2 = c.radii()[j] * c.radii()[j];
        for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
            let x = c.centers()[j] + n * c.radii()[j];
            let v = basis.eval(&x, false);
            let u = v.value.iter().zip(coefficients).fold(Vector3::zeros(), |acc, (f, a)| acc + f * *a);
            let jump = u.dot(n) - rdot[j] - xdot[j].dot(n);
            for d in 0..nf {
                acc[d].add(0.5 * r2 * wn * jump * v.value[d].dot(&u));
            }
        }
    }
    Ok(acc.iter().map(|s| s.value()).collect())
}

/// Settings of the time-stepping scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    /// Window length.
    pub h: f64,
    /// Final time; `t_end / h` must be an integer.
    pub t_end: f64,
    pub nu: f64,
    /// Implicit-midpoint steps per window (halved further on rejection).
    pub substeps: usize,
    pub convection: bool,
    pub selection: FieldSelection,
    pub dissipation: DissipationMethod,
    pub reflections: ReflectionOptions,
    pub exterior: ExteriorRule,
    /// Exactness degree of the sphere rule for boundary terms; `None` picks `2L + 24`.
    pub sphere_degree: Option<usize>,
    /// Convergence threshold of the fixed-point iteration, relative to `|b|`.
    pub galerkin_tol: f64,
    /// Allowed energy-inequality violation, relative to `E₀`.
    pub energy_tol: f64,
    pub collision_threshold: f64,
    /// Continue past the separation horizon.
    pub override_horizon: bool,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            h: 1e-2,
            t_end: 0.1,
            nu: 0.1,
            substeps: 1,
            convection: true,
            selection: FieldSelection::All,
            dissipation: DissipationMethod::Exterior,
            reflections: ReflectionOptions { pointwise_residuals: false, ..ReflectionOptions::default() },
            exterior: ExteriorRule::default(),
            sphere_degree: None,
            galerkin_tol: 1e-14,
            energy_tol: 1e-9,
            collision_threshold: 0.0,
            override_horizon: false,
        }
    }
}

impl SchemeParams {
    pub fn windows(&self) -> Result<usize> {
        if !(self.h > 0.0 && self.t_end > 0.0) {
            return Err(Error::InvalidConfig("window length and horizon must be positive".into()));
        }
        let k = self.t_end / self.h;
        let m = k.round();
        if m < 1.0 || (k - m).abs() > 1e-9 * m {
            return Err(Error::InvalidConfig(format!(
                "T/h must be a positive integer, got {} / {} = {k}",
                self.t_end, self.h
            )));
        }
        Ok(m as usize)
    }

    fn sphere_rule(&self) -> Result<SphereRule> {
        make_sphere_rule(self.sphere_degree.unwrap_or(2 * self.reflections.order + 24))
    }
}

/// Affine prescribed motion on `[start, start + duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProblem {
    pub start: f64,
    pub duration: f64,
    /// Prescribed configuration at `start`.
    pub config: BubbleConfig,
    pub xdot: Vec<Vector3<f64>>,
    pub rdot: Vec<f64>,
}

impl WindowProblem {
    pub fn stationary(start: f64, duration: f64, config: BubbleConfig) -> Self {
        let n = config.len();
        Self { start, duration, config, xdot: vec![Vector3::zeros(); n], rdot: vec![0.0; n] }
    }

    pub fn config_at(&self, t: f64) -> Result<BubbleConfig> {
        let s = t - self.start;
        let c = &self.config;
        let centers = c.centers().iter().zip(&self.xdot).map(|(x, v)| x + v * s).collect();
        let radii = c.radii().iter().zip(&self.rdot).map(|(r, v)| r + v * s).collect();
        c.with_geometry(centers, radii)
    }

    fn is_stationary(&self) -> bool {
        self.rdot.iter().all(|&v| v == 0.0) && self.xdot.iter().all(|v| v.iter().all(|&c| c == 0.0))
    }

    fn knot(&self, s: f64) -> Knot {
        let c = &self.config;
        Knot {
            time: self.start + s,
            centers: c.centers().iter().zip(&self.xdot).map(|(x, v)| x + v * s).collect(),
            radii: c.radii().iter().zip(&self.rdot).map(|(r, v)| r + v * s).collect(),
        }
    }

    /// Smallest gap over the window.
    pub fn min_gap(&self) -> f64 {
        if self.config.len() < 2 {
            return f64::INFINITY;
        }
        piece_min_gap(&self.knot(0.0), &self.knot(self.duration))
    }
}

/// Galerkin operators of a window frozen at one time.
#[derive(Debug, Clone)]
pub struct WindowOperators {
    pub time: f64,
    pub basis: ReducedBasis,
    /// `Λ = G^{-1/2}`.
    pub lambda: DMatrix<f64>,
    /// Skew-symmetric frame rotation.
    pub omega: DMatrix<f64>,
    /// `Λ K Λᵀ`, K including the factor `2ν`.
    pub dissipation: DMatrix<f64>,
    convection: Option<Vec<f64>>,
    /// `⨏_i φ_d·n`.
    pub normal_rates: DMatrix<f64>,
    /// `3⨏_i (φ_d·n) n`.
    pub translation_rates: DMatrix<f64>,
}

fn gram_of(problem: &WindowProblem, t: f64, params: &SchemeParams, modes: &Modes) -> Result<ReducedBasis> {
    ReducedBasis::build(&problem.config_at(t)?, params.selection, modes, &params.reflections, &params.exterior)
}

/// `P_cd = ∫ φ_c·∂_t φ_d` by central differences of the moving basis.
fn basis_motion(
    basis: &ReducedBasis,
    plus: &ReducedBasis,
    minus: &ReducedBasis,
    eps: f64,
    params: &SchemeParams,
    sphere: &SphereRule,
) -> Result<DMatrix<f64>> {
    let nf = basis.len();
    let nh = basis.harmonic_len();
    let c = basis.config();
    let mut p = DMatrix::zeros(nf, nf);
    // harmonic pairs: -∮_{j(c)} ∂_t q_d g_c
    for cidx in 0..nh {
        let kind = basis.kind(cidx).expect("harmonic index");
        let j = kind.bubble();
        let r2 = c.radii()[j] * c.radii()[j];
        let mut acc = vec![NeumaierSum::default(); nh];
        for (n, wn) in sphere.nodes.iter().zip(&sphere.weights) {
            let x = c.centers()[j] + n * c.radii()[j];
            let qp = plus.potentials(&x);
            let qm = minus.potentials(&x);
            let g = kind.target(n);
            for d in 0..nh {
                acc[d].add(-r2 * wn * g * (qp[d] - qm[d]) / (2.0 * eps));
            }
        }
        for d in 0..nh {
            p[(cidx, d)] = acc[d].value();
        }
    }
    if nf > nh {
        let nodes = exterior_nodes(c, &params.exterior)?;
        let mut acc = vec![NeumaierSum::default(); nf * nf];
        for (x, w) in nodes_with_weights(&nodes) {
            let v = basis.eval(x, false);
            let vp = plus.eval(x, false);
            let vm = minus.eval(x, false);
            for cc in 0..nf {
                for d in 0..nf {
                    if cc < nh && d < nh {
                        continue;
                    }
                    let dt = (vp.value[d] - vm.value[d]) / (2.0 * eps);
                    acc[cc * nf + d].add(w * v.value[cc].dot(&dt));
                }
            }
        }
        for cc in 0..nf {
            for d in 0..nf {
                if cc >= nh || d >= nh {
                    p[(cc, d)] = acc[cc * nf + d].value();
                }
            }
        }
    }
    Ok(p)
}

/// Symmetric orthonormal frame `Λ = G^{-1/2}`; unlike Gram–Schmidt it does
/// not depend on the ordering of the fields, so mirror symmetries of the
/// configuration carry over to the discrete scheme.
pub fn frame(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = g.clone().symmetric_eigen();
    let top = e.eigenvalues.amax();
    if let Some(d) = e.eigenvalues.iter().find(|&&d| !(d > 1e-13 * top)) {
        return Err(Error::Degenerate(format!("Gram eigenvalue {d:e}")));
    }
    Ok(matrix_function(&e, |d| d.powf(-0.5)))
}

/// `G^{1/2}`, the inverse of [`frame`].
pub fn frame_inverse(g: &DMatrix<f64>) -> DMatrix<f64> {
    matrix_function(&g.clone().symmetric_eigen(), f64::sqrt)
}

fn matrix_function(e: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &e.eigenvectors;
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    v * d * v.transpose()
}

/// Derivative of `G^{-1/2}` along `Ġ` by divided differences in the eigenbasis.
fn frame_derivative(g: &DMatrix<f64>, gdot: &DMatrix<f64>) -> DMatrix<f64> {
    let e = g.clone().symmetric_eigen();
    let v = &e.eigenvectors;
    let d = &e.eigenvalues;
    let mut w = v.transpose() * gdot * v;
    for i in 0..d.len() {
        for j in 0..d.len() {
            let (a, b) = (d[i], d[j]);
            let q = if (a - b).abs() > 1e-8 * a.max(b) {
                (a.powf(-0.5) - b.powf(-0.5)) / (a - b)
            } else {
                -0.5 * (0.5 * (a + b)).powf(-1.5)
            };
            w[(i, j)] *= q;
        }
    }
    v * w * v.transpose()
}

/// Builds the frozen operators at time `t` of a window.
pub fn window_operators(problem: &WindowProblem, t: f64, params: &SchemeParams, modes: &Modes) -> Result<WindowOperators> {
    let sphere = params.sphere_rule()?;
    let basis = gram_of(problem, t, params, modes)?;
    let nf = basis.len();
    let lambda = frame(&basis.gram.matrix)?;
    let omega = if problem.is_stationary() {
        DMatrix::zeros(nf, nf)
    } else {
        let speed = problem
            .rdot
            .iter()
            .map(|v| v.abs())
            .chain(problem.xdot.iter().map(|v| v.amax()))
            .fold(0.0, f64::max);
        let rmin = basis.config().radii().iter().cloned().fold(f64::INFINITY, f64::min);
        let eps = 1e-4 * rmin / speed;
        let plus = gram_of(problem, t + eps, params, modes)?;
        let minus = gram_of(problem, t - eps, params, modes)?;
        let gdot = (&plus.gram.matrix - &minus.gram.matrix) / (2.0 * eps);
        let p = basis_motion(&basis, &plus, &minus, eps, params, &sphere)?;
        let x = frame_derivative(&basis.gram.matrix, &gdot) * frame_inverse(&basis.gram.matrix);
        let m = &lambda * p.transpose() * lambda.transpose();
        (&x - x.transpose() + &m - m.transpose()) * 0.5
    };
    let k = dissipation_matrix(&basis, params.nu, params.dissipation, &params.exterior, &sphere)?;
    let dissipation = &lambda * k * lambda.transpose();
    let convection = if params.convection { Some(convection_tensor(&basis, &params.exterior, &sphere)?) } else { None };
    let (normal_rates, translation_rates) = boundary_rates(&basis, &sphere);
    Ok(WindowOperators { time: t, basis, lambda, omega, dissipation, convection, normal_rates, translation_rates })
}

impl WindowOperators {
    /// Basis coefficients `a = Λᵀ b`.
    pub fn coefficients(&self, b: &[f64]) -> Vec<f64> {
        (self.lambda.transpose() * DVector::from_column_slice(b)).iter().cloned().collect()
    }

    /// `ḃ` given per-bubble pressure factors `π_i` multiplying `⨏_i ψ·n`.
    pub fn rhs(&self, b: &[f64], pressure: &[f64]) -> Vec<f64> {
        let bv = DVector::from_column_slice(b);
        let a = self.lambda.transpose() * &bv;
        let mut force = self.normal_rates.transpose() * DVector::from_column_slice(pressure);
        if let Some(t) = &self.convection {
            force += DVector::from_vec(contract(t, a.as_slice()));
        }
        let out = &self.omega * &bv - &self.dissipation * &bv + &self.lambda * force;
        out.iter().cloned().collect()
    }
}

/// `ḃ` at time `t` with the pressure evaluated at the accumulated radii `r[u]`.
pub fn window_rhs(
    problem: &WindowProblem,
    t: f64,
    b: &[f64],
    accumulated_radii: &[f64],
    params: &SchemeParams,
    modes: &Modes,
) -> Result<Vec<f64>> {
    let ops = window_operators(problem, t, params, modes)?;
    if b.len() != ops.basis.len() {
        return Err(Error::DimensionMismatch { expected: ops.basis.len(), got: b.len() });
    }
    let c = &problem.config;
    let mut pressure = Vec::with_capacity(c.len());
    for (i, &r) in accumulated_radii.iter().enumerate() {
        if !(r > 0.0) {
            return Err(Error::Collapse { bubble: i, radius: r });
        }
        pressure.push(c.pressure_constants()[i] * r.powf(2.0 - 3.0 * c.gamma()));
    }
    Ok(ops.rhs(b, &pressure))
}

/// State carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    pub time: f64,
    /// Orthonormal-frame coefficients.
    pub b: Vec<f64>,
    /// Basis coefficients at `time`.
    pub coefficients: Vec<f64>,
    /// `r_i[u]`.
    pub radii: Vec<f64>,
    /// `x_i[u]`.
    pub centers: Vec<Vector3<f64>>,
    pub dissipation: f64,
}

/// Result of one window.
#[derive(Debug, Clone)]
pub struct WindowSolution {
    /// States after every accepted internal step.
    pub states: Vec<SchemeState>,
    /// Prescribed configuration at the end of each step.
    pub configs: Vec<BubbleConfig>,
    pub rejected: usize,
}

impl WindowSolution {
    pub fn last(&self) -> Option<&SchemeState> {
        self.states.last()
    }
}

fn discrete_pressure(config: &BubbleConfig, r0: &[f64], r1: &[f64]) -> Result<Vec<f64>> {
    let g = config.gamma();
    let mut out = Vec::with_capacity(r0.len());
    for i in 0..r0.len() {
        let c = config.pressure_constants()[i];
        if !(r1[i] > R_FLOOR) {
            return Err(Error::Collapse { bubble: i, radius: r1[i] });
        }
        let dr = r1[i] - r0[i];
        let ep = |r: f64| c / (3.0 * g - 3.0) * r.powf(3.0 - 3.0 * g);
        if dr.abs() > 1e-7 * r0[i] {
            out.push(-(ep(r1[i]) - ep(r0[i])) / dr);
        } else {
            let rm = 0.5 * (r0[i] + r1[i]);
            out.push(c * rm.powf(2.0 - 3.0 * g));
        }
    }
    Ok(out)
}

/// One implicit-midpoint step; `None` when the fixed point does not converge.
fn midpoint_step(
    ops: &WindowOperators,
    state: &SchemeState,
    dt: f64,
    config: &BubbleConfig,
    tol: f64,
) -> Result<Option<(Vec<f64>, Vec<f64>, Vec<Vector3<f64>>, f64)>> {
    let nf = state.b.len();
    let n = state.radii.len();
    let b0 = DVector::from_column_slice(&state.b);
    let mut b1 = b0.clone();
    let scale = b0.norm().max(1.0);
    for _ in 0..200 {
        let bh = (&b0 + &b1) * 0.5;
        let a = ops.lambda.transpose() * &bh;
        let rdot = &ops.normal_rates * &a;
        let r1: Vec<f64> = (0..n).map(|i| state.radii[i] + dt * rdot[i]).collect();
        let pressure = match discrete_pressure(config, &state.radii, &r1) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let f = DVector::from_vec(ops.rhs(bh.as_slice(), &pressure));
        let next = &b0 + f * dt;
        let change = (&next - &b1).amax();
        b1 = next;
        if !change.is_finite() {
            return Ok(None);
        }
        if change <= tol * scale {
            let bh = (&b0 + &b1) * 0.5;
            let a = ops.lambda.transpose() * &bh;
            let rdot = &ops.normal_rates * &a;
            let xdot = &ops.translation_rates * &a;
            let r1 = (0..n).map(|i| state.radii[i] + dt * rdot[i]).collect();
            let x1 = (0..n)
                .map(|i| state.centers[i] + Vector3::new(xdot[3 * i], xdot[3 * i + 1], xdot[3 * i + 2]) * dt)
                .collect();
            let diss = dt * bh.dot(&(&ops.dissipation * &bh));
            debug_assert_eq!(b1.len(), nf);
            return Ok(Some((b1.iter().cloned().collect(), r1, x1, diss)));
        }
    }
    Ok(None)
}

fn total_energy(state: &SchemeState, config: &BubbleConfig) -> (f64, f64) {
    let k = 0.5 * state.b.iter().map(|v| v * v).sum::<f64>();
    let p = potential_energy(&state.radii, config.pressure_constants(), config.gamma());
    (k, p)
}

/// Integrates one window from `state`, appending ledger entries.
pub fn solve_window(
    problem: &WindowProblem,
    state: &SchemeState,
    params: &SchemeParams,
    modes: &Modes,
    ledger: &mut EnergyLedger,
) -> Result<WindowSolution> {
    if params.substeps == 0 {
        return Err(Error::InvalidConfig("at least one substep per window is required".into()));
    }
    let end = problem.start + problem.duration;
    let mut current = state.clone();
    let mut out = WindowSolution { states: Vec::new(), configs: Vec::new(), rejected: 0 };
    let nominal = problem.duration / params.substeps as f64;
    let mut dt = nominal;
    let tol = params.energy_tol * ledger.e0.abs().max(f64::MIN_POSITIVE);
    while current.time < end - 1e-12 * problem.duration {
        let step = dt.min(end - current.time);
        let mid = current.time + 0.5 * step;
        let ops = window_operators(problem, mid, params, modes)?;
        let t1 = if end - (current.time + step) <= 1e-12 * problem.duration { end } else { current.time + step };
        let accepted = match midpoint_step(&ops, &current, step, &problem.config, params.galerkin_tol)? {
            Some((b, radii, centers, diss)) => {
                let config1 = problem.config_at(t1)?;
                let basis1 = ReducedBasis::build(&config1, params.selection, modes, &params.reflections, &params.exterior)?;
                let lambda1 = frame(&basis1.gram.matrix)?;
                let coefficients = (lambda1.transpose() * DVector::from_column_slice(&b)).iter().cloned().collect();
                let next = SchemeState {
                    time: t1,
                    b,
                    coefficients,
                    radii,
                    centers,
                    dissipation: current.dissipation + diss,
                };
                let (k, p) = total_energy(&next, &problem.config);
                let slack = ledger.e0 - (k + p + next.dissipation);
                if slack >= -tol && next.radii.iter().all(|&r| r > R_FLOOR) {
                    ledger.push(t1, k, p, next.dissipation)?;
                    Some((next, config1))
                } else {
                    None
                }
            }
            None => None,
        };
        match accepted {
            Some((next, config1)) => {
                current = next;
                out.states.push(current.clone());
                out.configs.push(config1);
            }
            None => {
                out.rejected += 1;
                dt *= 0.5;
                if dt < nominal * 1e-6 {
                    return Err(Error::Integration {
                        time: current.time,
                        reason: "implicit midpoint step rejected down to the minimal step".into(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Largest `T₀` keeping `sup r ≤ 2 sup r₀`, `inf r ≥ ½ inf r₀` and a
/// separation margin of at least `δ₀/2` under the a-priori velocity bounds.
pub fn separation_horizon(e0: f64, delta0: f64, config: &BubbleConfig) -> Result<f64> {
    if !(delta0 > 0.0) {
        return Err(Error::InvalidConfig(format!("delta0 must be positive, got {delta0}")));
    }
    if !(e0 >= 0.0) {
        return Err(Error::InvalidConfig(format!("E0 must be nonnegative, got {e0}")));
    }
    if e0 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let sup_r = config.radii().iter().cloned().fold(0.0, f64::max);
    let inf_r = config.radii().iter().cloned().fold(f64::INFINITY, f64::min);
    let rmin = 0.5 * inf_r;
    let probe = config.with_geometry(config.centers().to_vec(), vec![rmin; config.len()])?;
    let bounds = apriori_velocity_bounds(e0, 0.5 * delta0, &probe);
    let cr = bounds.rdot.iter().cloned().fold(0.0, f64::max);
    let cx = bounds.xdot.iter().cloned().fold(0.0, f64::max);
    Ok((sup_r / cr).min(inf_r / (2.0 * cr)).min(delta0 / (4.0 * (cr + cx))))
}

#[derive(Debug, Clone)]
pub struct ViscousRun {
    pub trajectory: Trajectory,
    pub ledger: EnergyLedger,
    pub horizon: f64,
    pub windows: usize,
    pub rejected: usize,
    pub labels: Vec<String>,
    pub block_coupling: f64,
}

fn record(time: f64, config: &BubbleConfig, state: &SchemeState, ledger: Option<LedgerEntry>) -> TrajectoryRecord {
    TrajectoryRecord {
        time,
        centers: config.centers().iter().map(to_array).collect(),
        radii: config.radii().to_vec(),
        coefficients: state.coefficients.clone(),
        ledger,
        event: EventTag::None,
        accumulated: Some(Accumulated { radii: state.radii.clone(), centers: state.centers.iter().map(to_array).collect() }),
    }
}

/// Time of the first crossing of `threshold` by the window's minimal gap.
fn window_crossing(problem: &WindowProblem, threshold: f64) -> Option<f64> {
    if problem.config.len() < 2 || problem.min_gap() > threshold {
        return None;
    }
    let samples: Vec<(f64, f64)> = (0..=256)
        .map(|k| {
            let s = problem.duration * k as f64 / 256.0;
            let knot = problem.knot(s);
            (s, crate::geometry::min_gap(&knot.centers, &knot.radii))
        })
        .collect();
    detect_collision(samples, threshold).ok().flatten()
}

/// Runs the scheme from basis coefficients `init` at configuration `config`.
///
/// Window 0 keeps the bubbles at rest; window k moves them with the average
/// of `(ẋ[u], ṙ[u])` over window k-1. Stops at `t_end`, at the separation
/// horizon (unless overridden), at a collision or a collapse.
pub fn run_scheme(init: &[f64], config: &BubbleConfig, params: &SchemeParams, modes: &Modes) -> Result<ViscousRun> {
    let windows = params.windows()?;
    let report = validate_admissible(config)?;
    if !report.admissible || report.min_gap <= params.collision_threshold {
        return Err(Error::NotAdmissible { min_gap: report.min_gap });
    }
    let basis0 = ReducedBasis::build(config, params.selection, modes, &params.reflections, &params.exterior)?;
    let nf = basis0.len();
    if init.len() != nf {
        return Err(Error::DimensionMismatch { expected: nf, got: init.len() });
    }
    let g0 = &basis0.gram.matrix;
    frame(g0)?;
    let a0 = DVector::from_column_slice(init);
    let b0: Vec<f64> = (frame_inverse(g0) * &a0).iter().cloned().collect();
    let k0 = 0.5 * b0.iter().map(|v| v * v).sum::<f64>();
    let p0 = potential_energy(config.radii(), config.pressure_constants(), config.gamma());
    let e0 = k0 + p0;
    let horizon = separation_horizon(e0, report.delta, config)?;

    let mut ledger = EnergyLedger::new(e0);
    let mut state = SchemeState {
        time: 0.0,
        b: b0,
        coefficients: init.to_vec(),
        radii: config.radii().to_vec(),
        centers: config.centers().to_vec(),
        dissipation: 0.0,
    };
    let entry = ledger.push(0.0, k0, p0, 0.0)?;
    let mut trajectory = Trajectory { records: vec![record(0.0, config, &state, Some(entry))], event: None };
    let mut geometry = config.clone();
    let mut xdot = vec![Vector3::zeros(); config.len()];
    let mut rdot = vec![0.0; config.len()];
    let mut rejected = 0;
    let mut done = 0;
    for k in 0..windows {
        let start = k as f64 * params.h;
        let end = start + params.h;
        if !params.override_horizon && end > horizon * (1.0 + 1e-12) {
            trajectory.event = Some(Event { tag: EventTag::Horizon, time: start });
            break;
        }
        let mut problem = WindowProblem { start, duration: params.h, config: geometry.clone(), xdot: xdot.clone(), rdot: rdot.clone() };
        let mut truncated = None;
        if let Some(s) = window_crossing(&problem, params.collision_threshold) {
            truncated = Some((EventTag::Collision, start + s));
            problem.duration = s;
        }
        if let Some(s) = (0..config.len())
            .filter(|&i| problem.rdot[i] < 0.0)
            .map(|i| (R_FLOOR - problem.config.radii()[i]) / problem.rdot[i])
            .filter(|&s| s <= problem.duration)
            .min_by(|a, b| a.total_cmp(b))
        {
            truncated = Some((EventTag::Collapse, start + s));
            problem.duration = s;
        }
        if problem.duration <= 1e-12 * params.h {
            let (tag, time) = truncated.expect("window shortened by an event");
            trajectory.event = Some(Event { tag, time });
            break;
        }
        let start_state = state.clone();
        let first = ledger.len();
        let sol = solve_window(&problem, &state, params, modes, &mut ledger)?;
        rejected += sol.rejected;
        for ((s, c), e) in sol.states.iter().zip(&sol.configs).zip(&ledger.entries[first..]) {
            trajectory.records.push(record(s.time, c, s, Some(*e)));
        }
        state = sol.last().cloned().unwrap_or(start_state.clone());
        geometry = sol.configs.last().cloned().unwrap_or(geometry);
        done += 1;
        if let Some((tag, time)) = truncated {
            trajectory.event = Some(Event { tag, time });
            break;
        }
        rdot = (0..config.len()).map(|i| (state.radii[i] - start_state.radii[i]) / params.h).collect();
        xdot = (0..config.len()).map(|i| (state.centers[i] - start_state.centers[i]) / params.h).collect();
    }
    if let Some(ev) = trajectory.event {
        if let Some(last) = trajectory.records.last_mut() {
            last.event = ev.tag;
        }
    }
    Ok(ViscousRun {
        trajectory,
        ledger,
        horizon,
        windows: done,
        rejected,
        labels: basis0.labels(),
        block_coupling: basis0.block_coupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::fd_jacobian4;
    use crate::rayleigh_plesset::{rp_rhs, RpParams, RpState};

    fn single(r: f64, c: f64) -> BubbleConfig {
        BubbleConfig::single(Vector3::zeros(), r, c, 5.0 / 3.0).unwrap()
    }

    fn pair(d: f64) -> BubbleConfig {
        BubbleConfig::new(
            vec![Vector3::new(-d / 2.0, 0.0, 0.0), Vector3::new(d / 2.0, 0.0, 0.0)],
            vec![1.0, 1.0],
            vec![4.0 * PI; 2],
            5.0 / 3.0,
        )
        .unwrap()
    }

    fn basis(c: &BubbleConfig, sel: FieldSelection) -> ReducedBasis {
        let p = SchemeParams::default();
        ReducedBasis::build(c, sel, &[], &p.reflections, &p.exterior).unwrap()
    }

    #[test]
    fn monopole_dissipation() {
        let sphere = make_sphere_rule(24).unwrap();
        let ext = ExteriorRule::default();
        for r in [1.0, 2.0] {
            let b = basis(&single(r, 4.0 * PI), FieldSelection::MonopolesOnly);
            for method in [DissipationMethod::Exterior, DissipationMethod::Boundary] {
                let k = dissipation_matrix(&b, 0.3, method, &ext, &sphere).unwrap();
                let expected = 16.0 * PI * 0.3 * r;
                assert!((k[(0, 0)] - expected).abs() < 1e-6 * expected, "{method:?} {r}: {}", k[(0, 0)]);
            }
            let k = dissipation_matrix(&b, 0.0, DissipationMethod::Exterior, &ext, &sphere).unwrap();
            assert_eq!(k.amax(), 0.0);
        }
    }

    #[test]
    fn dissipation_methods_agree_for_a_pair() {
        let sphere = make_sphere_rule(40).unwrap();
        let b = basis(&pair(3.0), FieldSelection::All);
        let ext = ExteriorRule { sphere_degree: 30, radial_panels: 10, radial_order: 8, ..ExteriorRule::default() };
        let a = dissipation_matrix(&b, 1.0, DissipationMethod::Exterior, &ext, &sphere).unwrap();
        let c = dissipation_matrix(&b, 1.0, DissipationMethod::Boundary, &ext, &sphere).unwrap();
        assert!((&a - &c).amax() < 1e-3 * c.amax(), "{}", (&a - &c).amax());
        assert!(c.clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn translation_rates_recover_dipole_velocity() {
        let b = basis(&single(1.3, 0.0), FieldSelection::All);
        let (nm, xm) = boundary_rates(&b, &make_sphere_rule(24).unwrap());
        assert!((nm[(0, 0)] - 1.0).abs() < 1e-12);
        for k in 0..3 {
            for j in 0..3 {
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((xm[(j, 1 + k)] - expected).abs() < 1e-12);
            }
            assert!(nm[(0, 1 + k)].abs() < 1e-12);
            assert!(xm[(k, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn mismatch_vanishes_for_matched_motion() {
        let sphere = make_sphere_rule(24).unwrap();
        let b = basis(&single(1.0, 0.0), FieldSelection::All);
        let a = [0.3, -0.2, 0.1, 0.5];
        let m = mismatch_term(&b, &a, &[Vector3::new(-0.2, 0.1, 0.5)], &[0.3], &sphere).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12), "{m:?}");
        let m = mismatch_term(&b, &a, &[Vector3::zeros()], &[0.0], &sphere).unwrap();
        assert!(m.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn stationary_single_bubble_matches_radial_equation() {
        let c = single(1.2, 4.0 * PI);
        let params = SchemeParams { nu: 0.05, ..SchemeParams::default() };
        let problem = WindowProblem::stationary(0.0, 0.1, c.clone());
        let g = 4.0 * PI * 1.2f64.powi(3);
        let rdot = 0.4;
        let b = [g.sqrt() * rdot, 0.0, 0.0, 0.0];
        let bdot = window_rhs(&problem, 0.0, &b, &[1.1], &params, &[]).unwrap();
        let rddot = bdot[0] / g.sqrt();
        // the radial velocity is carried at the frozen radius 1.2; pressure at 1.1
        let p = c.pressure_constants()[0] * 1.1f64.powi(-3) / (4.0 * PI * 1.2f64.powi(3));
        let expected = p - 4.0 * 0.05 * rdot / (1.2 * 1.2);
        assert!((rddot - expected).abs() < 1e-10, "{rddot} {expected}");
        let rp = RpParams { c: 4.0 * PI, gamma: 5.0 / 3.0, nu: 0.05, p_inf: 0.0 };
        let b = [g.sqrt() * rdot, 0.0, 0.0, 0.0];
        let bdot = window_rhs(&problem, 0.0, &b, &[1.2], &params, &[]).unwrap();
        let (_, r2) = rp_rhs(&RpState { r: 1.2, rdot }, &rp).unwrap();
        assert!((bdot[0] / g.sqrt() - (r2 + 1.5 * rdot * rdot / 1.2)).abs() < 1e-10);
        assert!(bdot[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_data_stays_zero() {
        let c = pair(3.0).with_pressure_constants(vec![0.0; 2]).unwrap();
        let params = SchemeParams { h: 0.05, t_end: 0.2, ..SchemeParams::default() };
        let run = run_scheme(&[0.0; 8], &c, &params, &[]).unwrap();
        assert_eq!(run.windows, 4);
        assert!(run.trajectory.event.is_none());
        for r in &run.trajectory.records {
            assert!(r.coefficients.iter().all(|&v| v == 0.0));
            assert_eq!(r.radii, vec![1.0, 1.0]);
        }
    }

    fn moving_pair_run(h: f64, t_end: f64, nu: f64) -> ViscousRun {
        let c = pair(3.0);
        let params = SchemeParams { h, t_end, nu, override_horizon: true, ..SchemeParams::default() };
        let init = [0.2, 0.2, -0.3, 0.0, 0.0, 0.3, 0.0, 0.0];
        run_scheme(&init, &c, &params, &[]).unwrap()
    }

    #[test]
    fn energy_identity_and_symmetry() {
        let run = moving_pair_run(0.02, 0.2, 0.1);
        assert_eq!(run.windows, 10);
        assert!(run.ledger.max_abs_slack() < 1e-9 * run.ledger.e0, "{}", run.ledger.max_abs_slack());
        let d = run.ledger.entries.last().unwrap().dissipation;
        assert!(d > 0.0);
        for r in &run.trajectory.records {
            assert!((r.radii[0] - r.radii[1]).abs() < 1e-8);
            assert!((r.centers[0][0] + r.centers[1][0]).abs() < 1e-8);
            assert!(r.centers.iter().all(|c| c[1].abs() < 1e-8 && c[2].abs() < 1e-8));
            let acc = r.accumulated.as_ref().unwrap();
            assert!((acc.radii[0] - acc.radii[1]).abs() < 1e-8, "{:?} {:?}", acc, r.coefficients);
        }
        let last = run.trajectory.last().unwrap();
        assert!(last.centers[0][0] != -1.5);
    }

    #[test]
    fn inviscid_run_conserves_energy() {
        let run = moving_pair_run(0.02, 0.1, 0.0);
        assert!(run.ledger.max_abs_slack() < 1e-9 * run.ledger.e0);
        assert_eq!(run.ledger.entries.last().unwrap().dissipation, 0.0);
    }

    #[test]
    fn prescribed_motion_follows_previous_window() {
        let run = moving_pair_run(0.02, 0.06, 0.1);
        let recs = &run.trajectory.records;
        // window 0 is stationary
        assert_eq!(recs[1].radii, vec![1.0, 1.0]);
        // window 1 moves by the increment accumulated over window 0
        let acc1 = recs[1].accumulated.as_ref().unwrap();
        assert!(acc1.radii[0] != 1.0);
        assert!((recs[2].radii[0] - acc1.radii[0]).abs() < 1e-12);
        assert!((recs[2].centers[1][0] - acc1.centers[1][0]).abs() < 1e-12);
    }

    #[test]
    fn horizon_shrinks_with_energy_and_is_enforced() {
        let c = pair(3.0);
        let h1 = separation_horizon(1.0, 0.25, &c).unwrap();
        let h2 = separation_horizon(4.0, 0.25, &c).unwrap();
        let h3 = separation_horizon(1.0, 0.125, &c).unwrap();
        assert!(h2 < h1 && h3 < h1);
        assert!((h1 / h2 - 2.0).abs() < 1e-12);
        let params = SchemeParams { h: 0.01, t_end: 1.0, ..SchemeParams::default() };
        let run = run_scheme(&[0.2, 0.2, -0.3, 0.0, 0.0, 0.3, 0.0, 0.0], &c, &params, &[]).unwrap();
        let ev = run.trajectory.event.unwrap();
        assert_eq!(ev.tag, EventTag::Horizon);
        assert!(ev.time <= run.horizon && ev.time + 0.01 > run.horizon);
        assert!(run.trajectory.last().unwrap().time <= run.horizon);
    }

    #[test]
    fn window_count_must_be_integral() {
        let params = SchemeParams { h: 0.03, t_end: 0.1, ..SchemeParams::default() };
        assert!(params.windows().is_err());
        let params = SchemeParams { h: 0.025, t_end: 0.1, ..SchemeParams::default() };
        assert_eq!(params.windows().unwrap(), 4);
    }

    #[test]
    fn rotlet_is_tangent_and_solenoidal() {
        let c = single(1.0, 0.0);
        let rot = Rotlet { bubble: 0, omega: Vector3::new(0.2, -0.4, 1.0), delta: 0.5 };
        for x in [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.6, 0.0, 0.8), Vector3::new(0.3, 0.9, -0.4)] {
            let y = x.normalize();
            assert!(rot.eval(&c, &y).0.dot(&y).abs() < 1e-14);
            let p = y * 1.2;
            let (_, j) = rot.eval(&c, &p);
            assert!(j.trace().abs() < 1e-13);
            let fd = fd_jacobian4(|z| rot.eval(&c, z).0, &p, 1e-3);
            assert!((j - fd).amax() < 1e-7, "{}", (j - fd).amax());
        }
        assert_eq!(rot.eval(&c, &Vector3::new(2.0, 0.0, 0.0)).0, Vector3::zeros());
    }

    #[test]
    fn rotlet_block_decouples_and_carries_energy() {
        let c = single(1.0, 0.0);
        let params = SchemeParams { h: 0.05, t_end: 0.2, nu: 0.1, override_horizon: true, ..SchemeParams::default() };
        let modes: Vec<Arc<dyn SolenoidalMode>> =
            vec![Arc::new(Rotlet { bubble: 0, omega: Vector3::new(0.0, 0.0, 1.0), delta: 0.5 })];
        let b = ReducedBasis::build(&c, FieldSelection::All, &modes, &params.reflections, &params.exterior).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.block_coupling < 1e-10, "{}", b.block_coupling);
        assert_eq!(b.labels()[4], "rotlet_1");
        let run = run_scheme(&[0.0, 0.0, 0.0, 0.0, 1.0], &c, &params, &modes).unwrap();
        let last = run.trajectory.last().unwrap();
        assert!(last.coefficients[4] > 0.0 && last.coefficients[4] < 1.0);
        // swirl feeds the monopole through convection, never the dipoles
        assert!(last.coefficients[1..4].iter().all(|v| v.abs() < 1e-10), "{:?}", last.coefficients);
        assert!(run.ledger.max_abs_slack() < 1e-9 * run.ledger.e0);
    }
}
