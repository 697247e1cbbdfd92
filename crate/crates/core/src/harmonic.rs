//! Exterior harmonic basis of the dilation space.
//!
//! For N spheres, `q_i` solves the exterior Laplace problem with Neumann data
//! `∂_n q_i = δ_ij` on sphere j, and `q_i^k` the one with data `δ_ij n^k`,
//! where n points out of the bubble into the fluid. Their gradients span the
//! 4N-dimensional space of harmonic velocity fields whose normal traces are
//! dilations plus translations. Each potential is stored as a sum of
//! irregular solid harmonics centered at every bubble, truncated at order L,
//! and the coefficients are found by Jacobi-style reflections.
//!
//! Field ordering is `q_1..q_N` followed by `q_i^k` at index `N + 3i + k`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_admissible, BubbleConfig};
use crate::quadrature::{make_sphere_rule, NeumaierSum, SphereRule};
use crate::solid::{sh_count, sh_degrees, sh_index, table, MAX_TABLE_ORDER};

pub const DEFAULT_ORDER: usize = 4;

/// Roundoff level of the unit-scale Neumann residual; decay below it is not measurable.
pub const SWEEP_RESIDUAL_FLOOR: f64 = 1e-15;

/// Row of the order-1 harmonic carrying the Cartesian component k.
fn dipole_index(k: usize) -> usize {
    match k {
        0 => sh_index(1, 1),
        1 => sh_index(1, -1),
        _ => sh_index(1, 0),
    }
}

const SQRT_4PI: f64 = 3.5449077018110318;

fn sqrt_4pi_3() -> f64 {
    (4.0 * PI / 3.0).sqrt()
}

/// Which Neumann problem a basis field solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    /// `q_i`: unit normal velocity on sphere i.
    Monopole { bubble: usize },
    /// `q_i^k`: normal velocity `n^k` on sphere i.
    Dipole { bubble: usize, axis: usize },
}

impl FieldKind {
    pub fn of_index(a: usize, n: usize) -> Self {
        if a < n {
            FieldKind::Monopole { bubble: a }
        } else {
            FieldKind::Dipole { bubble: (a - n) / 3, axis: (a - n) % 3 }
        }
    }

    pub fn index(&self, n: usize) -> usize {
        match *self {
            FieldKind::Monopole { bubble } => bubble,
            FieldKind::Dipole { bubble, axis } => n + 3 * bubble + axis,
        }
    }

    pub fn bubble(&self) -> usize {
        match *self {
            FieldKind::Monopole { bubble } | FieldKind::Dipole { bubble, .. } => bubble,
        }
    }

    /// Neumann data on the field's own sphere at unit normal `n`.
    pub fn target(&self, n: &Vector3<f64>) -> f64 {
        match *self {
            FieldKind::Monopole { .. } => 1.0,
            FieldKind::Dipole { axis, .. } => n[axis],
        }
    }

    /// (row, coefficient) of the Neumann data in the real harmonic expansion.
    fn target_row(&self) -> (usize, f64) {
        match *self {
            FieldKind::Monopole { .. } => (0, SQRT_4PI),
            FieldKind::Dipole { axis, .. } => (dipole_index(axis), sqrt_4pi_3()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            FieldKind::Monopole { bubble } => format!("q_{}", bubble + 1),
            FieldKind::Dipole { bubble, axis } => format!("q_{}^{}", bubble + 1, axis + 1),
        }
    }
}

/// A harmonic potential represented by irregular multipoles at each center.
///
/// Normal derivatives are taken along the normal pointing out of the bubble.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicField {
    pub centers: Vec<Vector3<f64>>,
    pub order: usize,
    /// `coefficients[j * (L+1)² + idx(l, m)]`
    pub coefficients: Vec<f64>,
}

impl HarmonicField {
    fn accumulate(
        &self,
        x: &Vector3<f64>,
        pot: &mut f64,
        grad: Option<&mut Vector3<f64>>,
        hess: Option<&mut Matrix3<f64>>,
    ) {
        let sh = table(self.order);
        let nh = sh.len();
        let mut v = vec![0.0; nh];
        let mut g = vec![Vector3::zeros(); nh];
        let mut h = vec![Matrix3::zeros(); nh];
        let want_g = grad.is_some();
        let want_h = hess.is_some();
        let mut gs = Vector3::zeros();
        let mut hs = Matrix3::zeros();
        for (j, c) in self.centers.iter().enumerate() {
            let coeffs = &self.coefficients[j * nh..(j + 1) * nh];
            if coeffs.iter().all(|&b| b == 0.0) {
                continue;
            }
            sh.irregular(
                &(x - c),
                &mut v,
                if want_g { Some(&mut g) } else { None },
                if want_h { Some(&mut h) } else { None },
            );
            for idx in 0..nh {
                *pot += coeffs[idx] * v[idx];
                if want_g {
                    gs += g[idx] * coeffs[idx];
                }
                if want_h {
                    hs += h[idx] * coeffs[idx];
                }
            }
        }
        if let Some(gg) = grad {
            *gg = gs;
        }
        if let Some(hh) = hess {
            *hh = hs;
        }
    }

    pub fn potential(&self, x: &Vector3<f64>) -> f64 {
        let mut p = 0.0;
        self.accumulate(x, &mut p, None, None);
        p
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut p = 0.0;
        let mut g = Vector3::zeros();
        self.accumulate(x, &mut p, Some(&mut g), None);
        g
    }

    pub fn hessian(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let mut p = 0.0;
        let mut h = Matrix3::zeros();
        self.accumulate(x, &mut p, None, Some(&mut h));
        h
    }
}

fn single_sphere_field(center: Vector3<f64>, radius: f64, row: usize, coefficient: f64) -> Result<HarmonicField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {radius}")));
    }
    let mut coefficients = vec![0.0; sh_count(1)];
    coefficients[row] = coefficient;
    Ok(HarmonicField { centers: vec![center], order: 1, coefficients })
}

/// `q(x) = -r² / |x - c|`, with unit outward normal derivative on the sphere.
pub fn single_sphere_monopole(center: Vector3<f64>, radius: f64) -> Result<HarmonicField> {
    single_sphere_field(center, radius, 0, -SQRT_4PI * radius * radius)
}

/// `q(x) = -(r³/2) (x - c)_k / |x - c|³`, with normal derivative `n^k`.
pub fn single_sphere_dipole(center: Vector3<f64>, radius: f64, axis: usize) -> Result<HarmonicField> {
    if axis > 2 {
        return Err(Error::InvalidConfig(format!("dipole axis must be 0, 1 or 2, got {axis}")));
    }
    single_sphere_field(center, radius, dipole_index(axis), -sqrt_4pi_3() * radius.powi(3) / 2.0)
}

/// Settings for [`solve_reflections`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionOptions {
    /// Expansion order L.
    pub order: usize,
    /// Stop once the band-limited Neumann residual is below this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Sweeps always performed for N ≥ 2, so the decay rate is observable.
    pub min_sweeps: usize,
    /// Exactness degree of the sphere rule used for transfer operators;
    /// `None` picks `2L + 24`.
    pub quadrature_degree: Option<usize>,
    /// Fill [`HarmonicBasis::residuals`]; costs one gradient evaluation per
    /// field and boundary node.
    pub pointwise_residuals: bool,
}

impl Default for ReflectionOptions {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, tolerance: 1e-13, max_sweeps: 500, min_sweeps: 6, quadrature_degree: None, pointwise_residuals: true }
    }
}

impl ReflectionOptions {
    pub fn with_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }

    fn degree(&self) -> usize {
        self.quadrature_degree.unwrap_or(2 * self.order + 24)
    }
}

/// The 4N fields `∇q_i`, `∇q_i^k` for one configuration.
#[derive(Debug, Clone)]
pub struct HarmonicBasis {
    centers: Vec<Vector3<f64>>,
    radii: Vec<f64>,
    order: usize,
    /// Rows `j * (L+1)² + idx`, one column per field.
    coefficients: DMatrix<f64>,
    /// Order ≤ 1 projections of each potential on each sphere: rows `4j + idx`.
    boundary_potential: DMatrix<f64>,
    /// Sup-norm Neumann mismatch of each field including truncated orders.
    pub residuals: Vec<f64>,
    /// Band-limited sup-norm residual after every sweep (max over fields).
    pub sweep_residuals: Vec<f64>,
}

impl HarmonicBasis {
    pub fn len(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.ncols() == 0
    }

    pub fn bubble_count(&self) -> usize {
        self.centers.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn centers(&self) -> &[Vector3<f64>] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn coefficient_matrix(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn kind(&self, a: usize) -> FieldKind {
        FieldKind::of_index(a, self.bubble_count())
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest ratio of successive sweep residuals, skipping sweeps that start
    /// at or below [`SWEEP_RESIDUAL_FLOOR`].
    pub fn max_sweep_ratio(&self) -> Option<f64> {
        self.sweep_residuals
            .windows(2)
            .filter(|p| p[0] > SWEEP_RESIDUAL_FLOOR)
            .map(|p| p[1] / p[0])
            .reduce(f64::max)
    }

    pub fn field(&self, a: usize) -> HarmonicField {
        HarmonicField {
            centers: self.centers.clone(),
            order: self.order,
            coefficients: self.coefficients.column(a).iter().cloned().collect(),
        }
    }

    pub fn fields(&self) -> Vec<HarmonicField> {
        (0..self.len()).map(|a| self.field(a)).collect()
    }

    /// Values of every field at `x`, without a domain check.
    pub fn eval_all(&self, x: &Vector3<f64>, level: EvalLevel) -> FieldValues {
        let sh = table(self.order);
        let nh = sh.len();
        let nf = self.len();
        let mut out = FieldValues {
            potential: vec![0.0; nf],
            gradient: vec![Vector3::zeros(); nf],
            hessian: if level == EvalLevel::Hessian { vec![Matrix3::zeros(); nf] } else { Vec::new() },
        };
        let mut v = vec![0.0; nh];
        let mut g = vec![Vector3::zeros(); nh];
        let mut h = vec![Matrix3::zeros(); nh];
        for (j, c) in self.centers.iter().enumerate() {
            sh.irregular(
                &(x - c),
                &mut v,
                if level != EvalLevel::Potential { Some(&mut g) } else { None },
                if level == EvalLevel::Hessian { Some(&mut h) } else { None },
            );
            for a in 0..nf {
                let col = self.coefficients.column(a);
                let coeffs = &col.as_slice()[j * nh..(j + 1) * nh];
                let mut p = 0.0;
                let mut gs = Vector3::zeros();
                let mut hs = Matrix3::zeros();
                for idx in 0..nh {
                    let b = coeffs[idx];
                    if b == 0.0 {
                        continue;
                    }
                    p += b * v[idx];
                    if level != EvalLevel::Potential {
                        gs += g[idx] * b;
                    }
                    if level == EvalLevel::Hessian {
                        hs += h[idx] * b;
                    }
                }
                out.potential[a] += p;
                if level != EvalLevel::Potential {
                    out.gradient[a] += gs;
                }
                if level == EvalLevel::Hessian {
                    out.hessian[a] += hs;
                }
            }
        }
        out
    }

    fn check_point(&self, x: &Vector3<f64>) -> Result<()> {
        for (c, r) in self.centers.iter().zip(&self.radii) {
            if (x - c).norm() < *r {
                return Err(Error::Domain {
                    point: [x[0], x[1], x[2]],
                    reason: "point lies inside a bubble".into(),
                });
            }
        }
        Ok(())
    }

    fn check_config(&self, config: &BubbleConfig) -> Result<()> {
        if config.centers() != self.centers.as_slice() || config.radii() != self.radii.as_slice() {
            return Err(Error::InvalidConfig("basis was built for a different configuration".into()));
        }
        Ok(())
    }

    /// Structured text dump: per field, `(bubble, l, m, coefficient)` terms.
    pub fn to_text(&self) -> String {
        let degrees = sh_degrees(self.order);
        let nh = degrees.len();
        let dump = BasisDump {
            order: self.order,
            centers: self.centers.iter().map(|c| [c[0], c[1], c[2]]).collect(),
            radii: self.radii.clone(),
            fields: (0..self.len())
                .map(|a| FieldDump {
                    label: self.kind(a).label(),
                    terms: (0..self.coefficients.nrows())
                        .filter(|&row| self.coefficients[(row, a)] != 0.0)
                        .map(|row| {
                            let (l, m) = degrees[row % nh];
                            (row / nh, l, m, self.coefficients[(row, a)])
                        })
                        .collect(),
                })
                .collect(),
            residuals: self.residuals.clone(),
            sweep_residuals: self.sweep_residuals.clone(),
        };
        serde_json::to_string_pretty(&dump).expect("basis dump serializes")
    }

    /// Inverse of [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let dump: BasisDump = serde_json::from_str(text)
            .map_err(|e| Error::Parse { path: "basis".into(), message: e.to_string() })?;
        let n = dump.centers.len();
        if dump.order > MAX_TABLE_ORDER || dump.fields.len() != 4 * n || dump.radii.len() != n {
            return Err(Error::Parse { path: "basis".into(), message: "inconsistent dimensions".into() });
        }
        let nh = sh_count(dump.order);
        let mut coefficients = DMatrix::zeros(n * nh, 4 * n);
        for (a, f) in dump.fields.iter().enumerate() {
            for &(j, l, m, c) in &f.terms {
                if j >= n || l > dump.order || m.unsigned_abs() as usize > l {
                    return Err(Error::Parse {
                        path: format!("fields[{a}]"),
                        message: format!("term ({j}, {l}, {m}) out of range"),
                    });
                }
                coefficients[(j * nh + sh_index(l, m), a)] = c;
            }
        }
        let centers: Vec<Vector3<f64>> = dump.centers.iter().map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let boundary_potential = boundary_projection(&centers, &dump.radii, dump.order, &coefficients, 2 * dump.order + 24)?;
        Ok(Self {
            centers,
            radii: dump.radii,
            order: dump.order,
            coefficients,
            boundary_potential,
            residuals: dump.residuals,
            sweep_residuals: dump.sweep_residuals,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BasisDump {
    order: usize,
    centers: Vec<[f64; 3]>,
    radii: Vec<f64>,
    fields: Vec<FieldDump>,
    residuals: Vec<f64>,
    sweep_residuals: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldDump {
    label: String,
    terms: Vec<(usize, usize, i64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalLevel {
    Potential,
    Gradient,
    Hessian,
}

/// Potentials, gradients and (optionally) Hessians of all basis fields at one point.
#[derive(Debug, Clone)]
pub struct FieldValues {
    pub potential: Vec<f64>,
    pub gradient: Vec<Vector3<f64>>,
    pub hessian: Vec<Matrix3<f64>>,
}

/// Pairwise transfer operators between spheres.
struct Transfer {
    /// `normal[i][j]`: Neumann projections on sphere i of the harmonics centered at j.
    normal: Vec<Vec<Option<DMatrix<f64>>>>,
    /// `potential[i][j]`: order ≤ 1 projections of the potentials.
    potential: Vec<Vec<Option<DMatrix<f64>>>>,
}

fn sample_harmonics(rule: &SphereRule, lmax: usize) -> DMatrix<f64> {
    let sh = table(lmax);
    let mut y = DMatrix::zeros(rule.len(), sh.len());
    let mut buf = vec![0.0; sh.len()];
    for (q, n) in rule.nodes.iter().enumerate() {
        sh.regular(n, &mut buf);
        for (idx, v) in buf.iter().enumerate() {
            y[(q, idx)] = *v;
        }
    }
    y
}

fn build_transfer(centers: &[Vector3<f64>], radii: &[f64], lmax: usize, rule: &SphereRule, ys: &DMatrix<f64>) -> Transfer {
    let n = centers.len();
    let sh = table(lmax);
    let nh = sh.len();
    let mut normal = vec![vec![None; n]; n];
    let mut potential = vec![vec![None; n]; n];
    let mut v = vec![0.0; nh];
    let mut g = vec![Vector3::zeros(); nh];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // weighted samples: rows are nodes, columns are source harmonics
            let nq = rule.len();
            let mut dn = DMatrix::zeros(nq, nh);
            let mut pot = DMatrix::zeros(nq, nh);
            for (q, (node, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                let x = centers[i] + node * radii[i];
                sh.irregular(&(x - centers[j]), &mut v, Some(&mut g), None);
                for idx in 0..nh {
                    dn[(q, idx)] = w * g[idx].dot(node);
                    pot[(q, idx)] = w * v[idx];
                }
            }
            normal[i][j] = Some(ys.transpose() * dn);
            potential[i][j] = Some(ys.columns(0, 4).transpose() * pot);
        }
    }
    Transfer { normal, potential }
}

fn own_normal(l: usize, r: f64) -> f64 {
    -((l + 1) as f64) * r.powi(-(l as i32) - 2)
}

fn boundary_projection(
    centers: &[Vector3<f64>],
    radii: &[f64],
    lmax: usize,
    coefficients: &DMatrix<f64>,
    degree: usize,
) -> Result<DMatrix<f64>> {
    let rule = make_sphere_rule(degree)?;
    let ys = sample_harmonics(&rule, lmax);
    let transfer = build_transfer(centers, radii, lmax, &rule, &ys);
    Ok(assemble_boundary_potential(centers.len(), radii, lmax, coefficients, &transfer))
}

fn assemble_boundary_potential(n: usize, radii: &[f64], lmax: usize, b: &DMatrix<f64>, transfer: &Transfer) -> DMatrix<f64> {
    let nh = sh_count(lmax);
    let nf = b.ncols();
    let mut out = DMatrix::zeros(4 * n, nf);
    for j in 0..n {
        for idx in 0..4 {
            let l = if idx == 0 { 0 } else { 1 };
            let f = radii[j].powi(-(l as i32) - 1);
            for a in 0..nf {
                out[(4 * j + idx, a)] = f * b[(j * nh + idx, a)];
            }
        }
        for k in 0..n {
            if let Some(v) = &transfer.potential[j][k] {
                let contrib = v * b.rows(k * nh, nh);
                let mut block = out.rows_mut(4 * j, 4);
                block += contrib;
            }
        }
    }
    out
}

/// Builds the 4N basis fields by Jacobi reflections.
pub fn solve_reflections(config: &BubbleConfig, opts: &ReflectionOptions) -> Result<HarmonicBasis> {
    solve_reflections_from(config, opts, None)
}

/// [`solve_reflections`] started from the coefficients of a nearby basis.
pub fn solve_reflections_from(
    config: &BubbleConfig,
    opts: &ReflectionOptions,
    warm: Option<&HarmonicBasis>,
) -> Result<HarmonicBasis> {
    let report = validate_admissible(config)?;
    if !report.admissible {
        return Err(Error::NotAdmissible { min_gap: report.min_gap });
    }
    if opts.order < 1 || opts.order > MAX_TABLE_ORDER {
        return Err(Error::InvalidConfig(format!(
            "expansion order must be in 1..={MAX_TABLE_ORDER}, got {}",
            opts.order
        )));
    }
    let n = config.len();
    let lmax = opts.order;
    let nh = sh_count(lmax);
    let degrees = sh_degrees(lmax);
    let centers = config.centers();
    let radii = config.radii();
    let rule = make_sphere_rule(opts.degree())?;
    let ys = sample_harmonics(&rule, lmax);
    let transfer = build_transfer(centers, radii, lmax, &rule, &ys);

    let nf = 4 * n;
    let mut target = DMatrix::zeros(n * nh, nf);
    for a in 0..nf {
        let kind = FieldKind::of_index(a, n);
        let (row, c) = kind.target_row();
        target[(kind.bubble() * nh + row, a)] = c;
    }
    let own: Vec<f64> = (0..n * nh).map(|row| own_normal(degrees[row % nh].0, radii[row / nh])).collect();

    let mut b = match warm {
        Some(w) if n > 1 && w.order == lmax && w.bubble_count() == n => w.coefficients.clone(),
        _ => DMatrix::from_fn(n * nh, nf, |row, a| target[(row, a)] / own[row]),
    };

    // residual in coefficient space: target - own * b - Σ T b
    let residual = |b: &DMatrix<f64>| -> DMatrix<f64> {
        let mut r = target.clone();
        for row in 0..n * nh {
            for a in 0..nf {
                r[(row, a)] -= own[row] * b[(row, a)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                if let Some(t) = &transfer.normal[i][j] {
                    let c = t * b.rows(j * nh, nh);
                    let mut block = r.rows_mut(i * nh, nh);
                    block -= c;
                }
            }
        }
        r
    };
    let sup_norm = |r: &DMatrix<f64>| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let vals = &ys * r.rows(i * nh, nh);
            worst = worst.max(vals.amax());
        }
        worst
    };

    let mut sweep_residuals = Vec::new();
    if n > 1 {
        let mut sweeps = 0;
        loop {
            let mut rhs = target.clone();
            for i in 0..n {
                for j in 0..n {
                    if let Some(t) = &transfer.normal[i][j] {
                        let c = t * b.rows(j * nh, nh);
                        let mut block = rhs.rows_mut(i * nh, nh);
                        block -= c;
                    }
                }
            }
            for row in 0..n * nh {
                for a in 0..nf {
                    b[(row, a)] = rhs[(row, a)] / own[row];
                }
            }
            sweeps += 1;
            let res = sup_norm(&residual(&b));
            sweep_residuals.push(res);
            if !res.is_finite() {
                return Err(Error::NonConvergence { sweeps, last_residual: res });
            }
            if res <= opts.tolerance && sweeps >= opts.min_sweeps {
                break;
            }
            if sweeps >= opts.max_sweeps {
                return Err(Error::NonConvergence { sweeps, last_residual: res });
            }
        }
    }

    let boundary_potential = assemble_boundary_potential(n, radii, lmax, &b, &transfer);
    let mut basis = HarmonicBasis {
        centers: centers.to_vec(),
        radii: radii.to_vec(),
        order: lmax,
        coefficients: b,
        boundary_potential,
        residuals: Vec::new(),
        sweep_residuals,
    };
    if opts.pointwise_residuals {
        basis.residuals = full_residuals(&basis, &rule);
    }
    Ok(basis)
}

/// Sup-norm Neumann mismatch of each field, evaluated pointwise.
fn full_residuals(basis: &HarmonicBasis, rule: &SphereRule) -> Vec<f64> {
    let n = basis.bubble_count();
    let mut res = vec![0.0f64; basis.len()];
    for i in 0..n {
        for node in &rule.nodes {
            let x = basis.centers[i] + node * basis.radii[i];
            let vals = basis.eval_all(&x, EvalLevel::Gradient);
            for (a, r) in res.iter_mut().enumerate() {
                let kind = basis.kind(a);
                let t = if kind.bubble() == i { kind.target(node) } else { 0.0 };
                *r = r.max((vals.gradient[a].dot(node) - t).abs());
            }
        }
    }
    res
}

/// Symmetric Gram matrix of the basis gradients.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    /// `max |G_ab - G_ba|` before symmetrization.
    pub raw_asymmetry: f64,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().min()
    }
}

/// `G_ab = -Σ_j ∮_{∂B_j} q_a g_b dS`, with `g_b` the Neumann data of field b.
pub fn gram(basis: &HarmonicBasis, config: &BubbleConfig) -> Result<GramMatrix> {
    basis.check_config(config)?;
    let n = basis.bubble_count();
    let nf = basis.len();
    let mut raw = DMatrix::zeros(nf, nf);
    for b in 0..nf {
        let kind = basis.kind(b);
        let j = kind.bubble();
        let (row, c) = kind.target_row();
        let r2 = basis.radii[j] * basis.radii[j];
        for a in 0..nf {
            raw[(a, b)] = -r2 * c * basis.boundary_potential[(4 * j + row, a)];
        }
    }
    let mut asym: f64 = 0.0;
    for a in 0..nf {
        for b in 0..a {
            asym = asym.max((raw[(a, b)] - raw[(b, a)]).abs());
        }
    }
    let matrix = (&raw + raw.transpose()) * 0.5;
    if Cholesky::new(matrix.clone()).is_none() {
        return Err(Error::Degenerate(format!(
            "Gram matrix of {n} bubbles is not positive definite"
        )));
    }
    Ok(GramMatrix { matrix, raw_asymmetry: asym })
}

/// Lower-triangular `Λ` with `Λ G Λᵀ = I`; row a gives the a-th orthonormal
/// field as a combination of the basis fields (Gram–Schmidt in basis order).
pub fn orthonormalize(gram: &GramMatrix) -> Result<DMatrix<f64>> {
    let g = &gram.matrix;
    let n = g.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-13 * g[(j, j)].abs()) {
            return Err(Error::Degenerate(format!("Gram–Schmidt pivot {j} is {d:e}")));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    let inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Degenerate("triangular factor is singular".into()))?;
    Ok(inv)
}

/// Velocity `Σ_a c_a ∇q_a(x)` at a fluid point.
pub fn evaluate(basis: &HarmonicBasis, coefficients: &[f64], point: &Vector3<f64>) -> Result<Vector3<f64>> {
    if coefficients.len() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), got: coefficients.len() });
    }
    basis.check_point(point)?;
    let vals = basis.eval_all(point, EvalLevel::Gradient);
    Ok(vals.gradient.iter().zip(coefficients).fold(Vector3::zeros(), |acc, (g, c)| acc + g * *c))
}

/// A vector field sampled at the nodes of a sphere rule on every bubble.
#[derive(Debug, Clone)]
pub struct BoundarySamples {
    pub rule: SphereRule,
    pub centers: Vec<Vector3<f64>>,
    pub radii: Vec<f64>,
    /// `values[i][q]` at `centers[i] + radii[i] * rule.nodes[q]`.
    pub values: Vec<Vec<Vector3<f64>>>,
}

impl BoundarySamples {
    pub fn sample<F: FnMut(&Vector3<f64>) -> Vector3<f64>>(config: &BubbleConfig, rule: SphereRule, mut f: F) -> Self {
        let values = (0..config.len())
            .map(|i| {
                rule.nodes
                    .iter()
                    .map(|n| f(&(config.centers()[i] + n * config.radii()[i])))
                    .collect()
            })
            .collect();
        Self { rule, centers: config.centers().to_vec(), radii: config.radii().to_vec(), values }
    }

    /// Per bubble: the mean normal velocity `⨏ u·n` and `3 ⨏ (u·n) n`.
    pub fn rates(&self) -> Vec<(f64, Vector3<f64>)> {
        self.values
            .iter()
            .map(|vals| {
                let mut s = NeumaierSum::default();
                let mut v = [NeumaierSum::default(); 3];
                for ((n, w), u) in self.rule.nodes.iter().zip(&self.rule.weights).zip(vals) {
                    let un = u.dot(n);
                    s.add(w * un);
                    for k in 0..3 {
                        v[k].add(w * un * n[k]);
                    }
                }
                let inv = 1.0 / (4.0 * PI);
                (s.value() * inv, Vector3::new(v[0].value(), v[1].value(), v[2].value()) * (3.0 * inv))
            })
            .collect()
    }
}

/// Result of projecting a sampled divergence-free field onto the harmonic basis.
#[derive(Debug, Clone)]
pub struct LiouvilleSplit {
    pub coefficients: Vec<f64>,
    /// Sup-norm of the normal trace not represented by the harmonic part.
    pub normal_mismatch: f64,
}

/// Harmonic-gradient component of a divergence-free field from its boundary samples.
pub fn liouville_split(samples: &BoundarySamples, basis: &HarmonicBasis, gram: &GramMatrix) -> Result<LiouvilleSplit> {
    let n = basis.bubble_count();
    if samples.values.len() != n || gram.dim() != basis.len() {
        return Err(Error::DimensionMismatch { expected: n, got: samples.values.len() });
    }
    let nf = basis.len();
    let mut rhs = vec![NeumaierSum::default(); nf];
    for j in 0..n {
        let r2 = samples.radii[j] * samples.radii[j];
        for ((node, w), u) in samples.rule.nodes.iter().zip(&samples.rule.weights).zip(&samples.values[j]) {
            let x = samples.centers[j] + node * samples.radii[j];
            let vals = basis.eval_all(&x, EvalLevel::Potential);
            let un = u.dot(node);
            for a in 0..nf {
                rhs[a].add(-r2 * w * vals.potential[a] * un);
            }
        }
    }
    let b = DVector::from_iterator(nf, rhs.iter().map(|s| s.value()));
    let chol = Cholesky::new(gram.matrix.clone())
        .ok_or_else(|| Error::Degenerate("Gram matrix is singular".into()))?;
    let c = chol.solve(&b);
    let mut mismatch: f64 = 0.0;
    for j in 0..n {
        for (node, u) in samples.rule.nodes.iter().zip(&samples.values[j]) {
            let mut t = 0.0;
            for a in 0..nf {
                let kind = basis.kind(a);
                if kind.bubble() == j {
                    t += c[a] * kind.target(node);
                }
            }
            mismatch = mismatch.max((u.dot(node) - t).abs());
        }
    }
    Ok(LiouvilleSplit { coefficients: c.iter().cloned().collect(), normal_mismatch: mismatch })
}
