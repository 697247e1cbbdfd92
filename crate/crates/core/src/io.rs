//! Run configurations and bit-stable output files.
//!
//! Configurations are JSON. Trajectories are written as JSON lines with a
//! header sidecar, ledgers as CSV and reports as JSON; every float is written
//! with 17 significant digits so reading a file back reproduces it bitwise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::ale::Knot;
use crate::calibration;
use crate::energy::EnergyLedger;
use crate::error::{ConfigViolation, Error, Result};
use crate::geometry::BubbleConfig;
use crate::harmonic::ReflectionOptions;
use crate::inviscid::InviscidParams;
use crate::quadrature::{ExteriorRule, FarField};
use crate::rayleigh_plesset::RpParams;
use crate::trajectory::{Event, Trajectory, TrajectoryRecord};
use crate::viscous::{DissipationMethod, FieldSelection, Rotlet, SchemeParams};

/// JSON formatter writing floats as `{:.16e}`.
struct Precise<F>(F);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
            self.0.$name(w)
        })*
    };
}

impl<F: Formatter> Formatter for Precise<F> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(begin_array, end_array, begin_object, end_object, begin_object_value, end_object_value);

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
}

fn serialize_with<T: Serialize, F: Formatter>(value: &T, formatter: F) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(formatter));
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Single-line JSON with 17 significant digits per float.
pub fn to_json_line<T: Serialize>(value: &T) -> String {
    serialize_with(value, CompactFormatter)
}

/// Indented JSON with 17 significant digits per float.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    serialize_with(value, PrettyFormatter::new())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Build identity written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub crate_name: String,
    pub version: String,
    pub modules: BTreeMap<String, String>,
    pub calibration: BTreeMap<String, f64>,
}

impl Provenance {
    pub fn new(config_text: &str) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        let version = env!("CARGO_PKG_VERSION").to_string();
        let modules = [
            "geometry",
            "quadrature",
            "harmonic",
            "energy",
            "rayleigh_plesset",
            "inviscid",
            "ale",
            "viscous",
            "io",
        ]
        .iter()
        .map(|m| (m.to_string(), version.clone()))
        .collect();
        let calibration = [
            ("xdot_bound_constant", calibration::XDOT_BOUND_CONSTANT),
            ("far_field_decay_constant", calibration::FAR_FIELD_DECAY_CONSTANT),
            ("rp_oscillation_amplitude", calibration::RP_OSCILLATION_AMPLITUDE),
            ("weak_coupling_tolerance", calibration::WEAK_COUPLING_TOLERANCE),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
        Self {
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            crate_name: env!("CARGO_PKG_NAME").to_string(),
            version,
            modules,
            calibration,
        }
    }
}

/// Contents of the trajectory header sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub provenance: Provenance,
    pub scenario: Scenario,
    /// Names of the coefficient entries.
    pub coefficient_labels: Vec<String>,
    pub records: usize,
    pub event: Option<Event>,
}

/// `<path>` with the extension replaced by `header.json`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

/// Writes one JSON record per line to `path` and the header to its sidecar.
pub fn emit_trajectory(trajectory: &Trajectory, header: &TrajectoryHeader, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut prev = f64::NEG_INFINITY;
    for r in &trajectory.records {
        if !(r.time > prev) {
            return Err(Error::InvalidConfig(format!("record times not increasing at t = {}", r.time)));
        }
        prev = r.time;
        writeln!(w, "{}", to_json_line(r)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let mut header = header.clone();
    header.records = trajectory.records.len();
    header.event = trajectory.event;
    write_file(&header_path(path), &(to_json_pretty(&header) + "\n"))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: format!("{}:{}", path.display(), k + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trajectory_header(path: &Path) -> Result<TrajectoryHeader> {
    let p = header_path(path);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: p.display().to_string(), message: e.to_string() })
}

pub fn emit_ledger(ledger: &EnergyLedger, path: &Path) -> Result<()> {
    write_file(path, &ledger.to_csv())
}

pub fn read_ledger(path: &Path, e0: f64) -> Result<EnergyLedger> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    EnergyLedger::from_csv(&text, e0)
}

pub fn emit_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    write_file(path, &(to_json_pretty(report) + "\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Rp,
    Inviscid,
    Viscous,
    Basis,
    AleVerify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleSpec {
    pub center: [f64; 3],
    pub radius: f64,
    /// Relaxed pressure constant in `p = c/(4π) r^{-3γ}`.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub rdot: f64,
    #[serde(default)]
    pub xdot: [f64; 3],
}

fn default_c() -> f64 {
    4.0 * PI
}

fn default_gamma() -> f64 {
    5.0 / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum FarFieldSpec {
    Mapped,
    AnalyticTail { radius: f64 },
    Cutoff { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExteriorSpec {
    pub sphere_degree: usize,
    pub radial_panels: usize,
    pub radial_order: usize,
    pub far_field: FarFieldSpec,
    pub partition_exponent: i32,
}

impl Default for ExteriorSpec {
    fn default() -> Self {
        let d = ExteriorRule::default();
        Self {
            sphere_degree: d.sphere_degree,
            radial_panels: d.radial_panels,
            radial_order: d.radial_order,
            far_field: FarFieldSpec::Mapped,
            partition_exponent: d.partition_exponent,
        }
    }
}

impl ExteriorSpec {
    pub fn rule(&self) -> ExteriorRule {
        ExteriorRule {
            sphere_degree: self.sphere_degree,
            radial_panels: self.radial_panels,
            radial_order: self.radial_order,
            far_field: match self.far_field {
                FarFieldSpec::Mapped => FarField::Mapped,
                FarFieldSpec::AnalyticTail { radius } => FarField::AnalyticTail { radius },
                FarFieldSpec::Cutoff { radius } => FarField::Cutoff { radius },
            },
            partition_exponent: self.partition_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotletSpec {
    pub bubble: usize,
    pub omega: [f64; 3],
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotSpec {
    pub time: f64,
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AleSpec {
    /// Cutoff width; defaults to a quarter of the smallest gap along the trajectory.
    pub delta: Option<f64>,
    pub flow_tol: f64,
    /// Piecewise-affine trajectory; when absent the bubbles move with their
    /// `rdot`/`xdot` over `[0, t_end]`.
    pub knots: Option<Vec<KnotSpec>>,
    /// Check times; default `t_end/2` and `t_end`.
    pub times: Option<Vec<f64>>,
    /// Exactness degree of the sphere rule providing sample directions.
    pub sample_degree: usize,
}

impl Default for AleSpec {
    fn default() -> Self {
        Self { delta: None, flow_tol: 1e-10, knots: None, times: None, sample_degree: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub t_end: Option<f64>,
    /// Tolerance of the adaptive ODE integrators.
    pub tol: f64,
    /// Truncation order L of the harmonic expansions.
    pub order: usize,
    pub reflection_tol: f64,
    pub max_sweeps: usize,
    pub min_sweeps: usize,
    pub nu: f64,
    pub p_inf: f64,
    pub sample_times: Vec<f64>,
    pub fd_step: Option<f64>,
    pub max_step: Option<f64>,
    pub collision_threshold: f64,
    pub h: Option<f64>,
    pub substeps: usize,
    pub convection: bool,
    pub selection: FieldSelection,
    pub dissipation: DissipationMethod,
    pub galerkin_tol: f64,
    pub energy_tol: f64,
    pub override_horizon: bool,
    pub exterior: ExteriorSpec,
    pub rotlets: Vec<RotletSpec>,
    pub ale: AleSpec,
}

impl Default for Params {
    fn default() -> Self {
        let s = SchemeParams::default();
        let r = ReflectionOptions::default();
        Self {
            t_end: None,
            tol: 1e-10,
            order: r.order,
            reflection_tol: r.tolerance,
            max_sweeps: r.max_sweeps,
            min_sweeps: r.min_sweeps,
            nu: 0.0,
            p_inf: 0.0,
            sample_times: Vec::new(),
            fd_step: None,
            max_step: None,
            collision_threshold: 0.0,
            h: None,
            substeps: s.substeps,
            convection: true,
            selection: FieldSelection::All,
            dissipation: DissipationMethod::Exterior,
            galerkin_tol: s.galerkin_tol,
            energy_tol: s.energy_tol,
            override_horizon: false,
            exterior: ExteriorSpec::default(),
            rotlets: Vec::new(),
            ale: AleSpec::default(),
        }
    }
}

/// A validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub bubbles: Vec<BubbleSpec>,
    /// Full initial coefficient vector of the viscous scheme; overrides
    /// `rdot`/`xdot` when present.
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default)]
    pub params: Params,
}

struct Violations(Vec<ConfigViolation>);

impl Violations {
    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(ConfigViolation { path: path.into(), message: message.into() });
        }
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Parses and validates a JSON configuration, reporting every violation with its field path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::ConfigViolations(vec![ConfigViolation {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }])
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Violations(Vec::new());
        let p = &self.params;
        let n = self.bubbles.len();
        v.check(n > 0, "bubbles", "at least one bubble is required");
        v.check(self.gamma > 1.0 && self.gamma.is_finite(), "gamma", format!("must exceed 1, got {}", self.gamma));
        for (i, b) in self.bubbles.iter().enumerate() {
            v.check(finite(&b.center), format!("bubbles[{i}].center"), "must be finite");
            v.check(b.radius > 0.0 && b.radius.is_finite(), format!("bubbles[{i}].radius"), format!("must be positive, got {}", b.radius));
            v.check(b.c >= 0.0 && b.c.is_finite(), format!("bubbles[{i}].c"), format!("must be nonnegative, got {}", b.c));
            v.check(b.rdot.is_finite(), format!("bubbles[{i}].rdot"), "must be finite");
            v.check(finite(&b.xdot), format!("bubbles[{i}].xdot"), "must be finite");
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&self.bubbles[i], &self.bubbles[j]);
                let d = (Vector3::from(a.center) - Vector3::from(b.center)).norm();
                v.check(
                    d > a.radius + b.radius,
                    format!("bubbles[{j}]"),
                    format!("overlaps bubble {i} (distance {d}, radii {} and {})", a.radius, b.radius),
                );
            }
        }
        let needs_time = self.scenario != Scenario::Basis;
        match p.t_end {
            Some(t) => v.check(t > 0.0 && t.is_finite(), "params.t_end", format!("must be positive, got {t}")),
            None => v.check(!needs_time, "params.t_end", "required for this scenario"),
        }
        v.check(p.tol > 0.0, "params.tol", "must be positive");
        v.check(p.order >= 1, "params.order", "must be at least 1");
        v.check(p.reflection_tol > 0.0, "params.reflection_tol", "must be positive");
        v.check(p.nu >= 0.0 && p.nu.is_finite(), "params.nu", format!("must be nonnegative, got {}", p.nu));
        v.check(p.p_inf >= 0.0, "params.p_inf", "must be nonnegative");
        v.check(p.collision_threshold >= 0.0, "params.collision_threshold", "must be nonnegative");
        if let Some(s) = p.fd_step {
            v.check(s > 0.0, "params.fd_step", "must be positive");
        }
        if let Some(s) = p.max_step {
            v.check(s > 0.0, "params.max_step", "must be positive");
        }
        match self.scenario {
            Scenario::Rp => {
                v.check(n == 1, "bubbles", "the radial equation takes exactly one bubble");
                let mut prev = f64::NEG_INFINITY;
                for (k, &t) in p.sample_times.iter().enumerate() {
                    v.check(t > prev && t >= 0.0, format!("params.sample_times[{k}]"), "must be nonnegative and increasing");
                    prev = t;
                }
            }
            Scenario::Viscous => {
                match p.h {
                    None => v.check(false, "params.h", "required for the viscous scheme"),
                    Some(h) => {
                        v.check(h > 0.0, "params.h", "must be positive");
                        if let (Some(t), true) = (p.t_end, h > 0.0) {
                            let probe = SchemeParams { h, t_end: t, ..SchemeParams::default() };
                            if let Err(e) = probe.windows() {
                                v.check(false, "params.h", format!("SchemeParams invariant: {e}"));
                            }
                        }
                    }
                }
                v.check(p.substeps >= 1, "params.substeps", "must be at least 1");
                v.check(p.galerkin_tol > 0.0, "params.galerkin_tol", "must be positive");
                v.check(p.energy_tol >= 0.0, "params.energy_tol", "must be nonnegative");
                for (k, r) in p.rotlets.iter().enumerate() {
                    v.check(r.bubble < n, format!("params.rotlets[{k}].bubble"), format!("no bubble {}", r.bubble));
                    v.check(r.delta > 0.0, format!("params.rotlets[{k}].delta"), "must be positive");
                    v.check(finite(&r.omega), format!("params.rotlets[{k}].omega"), "must be finite");
                }
                v.check(
                    p.rotlets.is_empty() || p.dissipation == DissipationMethod::Exterior,
                    "params.dissipation",
                    "solenoidal modes need the exterior dissipation quadrature",
                );
                if let Some(c) = &self.coefficients {
                    let m = self.field_count();
                    v.check(c.len() == m, "coefficients", format!("expected {m} entries, got {}", c.len()));
                    v.check(finite(c), "coefficients", "must be finite");
                }
            }
            Scenario::AleVerify => {
                let a = &p.ale;
                v.check(a.flow_tol > 0.0, "params.ale.flow_tol", "must be positive");
                if let Some(d) = a.delta {
                    v.check(d > 0.0, "params.ale.delta", "must be positive");
                }
                if let Some(knots) = &a.knots {
                    v.check(knots.len() >= 2, "params.ale.knots", "at least two knots are required");
                    for (k, kn) in knots.iter().enumerate() {
                        v.check(kn.centers.len() == n && kn.radii.len() == n, format!("params.ale.knots[{k}]"), format!("expected {n} bubbles"));
                        v.check(kn.radii.iter().all(|&r| r > 0.0), format!("params.ale.knots[{k}].radii"), "must be positive");
                        if k > 0 {
                            v.check(kn.time > knots[k - 1].time, format!("params.ale.knots[{k}].time"), "must increase");
                        }
                    }
                }
            }
            Scenario::Inviscid | Scenario::Basis => {}
        }
        if v.0.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(v.0))
        }
    }

    pub fn bubble_config(&self) -> Result<BubbleConfig> {
        BubbleConfig::new(
            self.bubbles.iter().map(|b| Vector3::from(b.center)).collect(),
            self.bubbles.iter().map(|b| b.radius).collect(),
            self.bubbles.iter().map(|b| b.c).collect(),
            self.gamma,
        )
    }

    pub fn t_end(&self) -> f64 {
        self.params.t_end.unwrap_or(0.0)
    }

    pub fn rdot(&self) -> Vec<f64> {
        self.bubbles.iter().map(|b| b.rdot).collect()
    }

    pub fn xdot(&self) -> Vec<Vector3<f64>> {
        self.bubbles.iter().map(|b| Vector3::from(b.xdot)).collect()
    }

    /// `(ṙ_1..ṙ_N, ẋ_1..ẋ_N)`, which is also the harmonic coefficient layout.
    pub fn qdot(&self) -> Vec<f64> {
        let mut q = self.rdot();
        for b in &self.bubbles {
            q.extend_from_slice(&b.xdot);
        }
        q
    }

    fn field_count(&self) -> usize {
        let n = self.bubbles.len();
        let h = match self.params.selection {
            FieldSelection::All => 4 * n,
            FieldSelection::MonopolesOnly => n,
        };
        h + self.params.rotlets.len()
    }

    /// Initial coefficients of the viscous scheme.
    pub fn initial_coefficients(&self) -> Vec<f64> {
        if let Some(c) = &self.coefficients {
            return c.clone();
        }
        let mut a = match self.params.selection {
            FieldSelection::All => self.qdot(),
            FieldSelection::MonopolesOnly => self.rdot(),
        };
        a.extend(std::iter::repeat(0.0).take(self.params.rotlets.len()));
        a
    }

    pub fn reflection_options(&self) -> ReflectionOptions {
        ReflectionOptions {
            order: self.params.order,
            tolerance: self.params.reflection_tol,
            max_sweeps: self.params.max_sweeps,
            min_sweeps: self.params.min_sweeps,
            quadrature_degree: None,
            pointwise_residuals: false,
        }
    }

    pub fn rp_params(&self) -> RpParams {
        let b = &self.bubbles[0];
        RpParams { c: b.c, gamma: self.gamma, nu: self.params.nu, p_inf: self.params.p_inf }
    }

    pub fn inviscid_params(&self) -> InviscidParams {
        InviscidParams {
            reflections: self.reflection_options(),
            tol: self.params.tol,
            fd_step: self.params.fd_step,
            collision_threshold: self.params.collision_threshold,
            max_step: self.params.max_step.unwrap_or(f64::INFINITY),
        }
    }

    pub fn scheme_params(&self) -> SchemeParams {
        let p = &self.params;
        SchemeParams {
            h: p.h.unwrap_or(0.0),
            t_end: self.t_end(),
            nu: p.nu,
            substeps: p.substeps,
            convection: p.convection,
            selection: p.selection,
            dissipation: p.dissipation,
            reflections: self.reflection_options(),
            exterior: p.exterior.rule(),
            sphere_degree: None,
            galerkin_tol: p.galerkin_tol,
            energy_tol: p.energy_tol,
            collision_threshold: p.collision_threshold,
            override_horizon: p.override_horizon,
        }
    }

    pub fn rotlets(&self) -> Vec<Rotlet> {
        self.params
            .rotlets
            .iter()
            .map(|r| Rotlet { bubble: r.bubble, omega: Vector3::from(r.omega), delta: r.delta })
            .collect()
    }

    /// Knots of the ALE trajectory.
    pub fn ale_knots(&self) -> Result<Vec<Knot>> {
        if let Some(k) = &self.params.ale.knots {
            return Ok(k
                .iter()
                .map(|k| Knot { time: k.time, centers: k.centers.iter().map(|c| Vector3::from(*c)).collect(), radii: k.radii.clone() })
                .collect());
        }
        let t = self.t_end();
        let c = self.bubble_config()?;
        let end = Knot {
            time: t,
            centers: c.centers().iter().zip(self.xdot()).map(|(x, v)| x + v * t).collect(),
            radii: c.radii().iter().zip(self.rdot()).map(|(r, v)| r + v * t).collect(),
        };
        Ok(vec![Knot { time: 0.0, centers: c.centers().to_vec(), radii: c.radii().to_vec() }, end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::LedgerEntry;
    use crate::trajectory::{Accumulated, EventTag};

    const MINIMAL_RP: &str = r#"{"scenario": "rp", "bubbles": [{"center": [0, 0, 0], "radius": 1}], "params": {"t_end": 1}}"#;

    #[test]
    fn minimal_rp_config_fills_defaults() {
        let c = parse_config(MINIMAL_RP).unwrap();
        assert_eq!(c.scenario, Scenario::Rp);
        assert_eq!(c.gamma, 5.0 / 3.0);
        assert_eq!(c.bubbles[0].c, 4.0 * PI);
        assert_eq!(c.bubbles[0].rdot, 0.0);
        assert_eq!(c.params.tol, 1e-10);
        assert_eq!(c.params.nu, 0.0);
        assert_eq!(c.params.order, 4);
        assert!(c.coefficients.is_none());
    }

    #[test]
    fn negative_radius_names_the_field() {
        let text = MINIMAL_RP.replace("\"radius\": 1", "\"radius\": -1");
        match parse_config(&text) {
            Err(Error::ConfigViolations(v)) => {
                assert_eq!(v.len(), 1, "{v:?}");
                assert_eq!(v[0].path, "bubbles[0].radius");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_a_path() {
        let text = MINIMAL_RP.replace("\"radius\": 1", "\"radius\": \"big\"");
        match parse_config(&text) {
            Err(Error::ConfigViolations(v)) => assert_eq!(v[0].path, "bubbles[0].radius"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL_RP.replace("\"t_end\"", "\"t_ned\"");
        match parse_config(&text) {
            Err(Error::ConfigViolations(v)) => assert!(v[0].path.starts_with("params"), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_integer_window_count_is_rejected() {
        let text = r#"{"scenario": "viscous", "bubbles": [{"center": [0, 0, 0], "radius": 1}],
            "params": {"t_end": 0.1, "h": 0.03}}"#;
        match parse_config(text) {
            Err(Error::ConfigViolations(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].path, "params.h");
                assert!(v[0].message.contains("SchemeParams"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let text = r#"{"scenario": "viscous", "gamma": 0.5, "bubbles": [
            {"center": [0, 0, 0], "radius": 1}, {"center": [1, 0, 0], "radius": 1, "c": -1}],
            "params": {"nu": -1}}"#;
        let Err(Error::ConfigViolations(v)) = parse_config(text) else { panic!() };
        let paths: Vec<&str> = v.iter().map(|x| x.path.as_str()).collect();
        for p in ["gamma", "bubbles[1].c", "bubbles[1]", "params.t_end", "params.nu", "params.h"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
    }

    fn record(k: usize) -> TrajectoryRecord {
        let t = k as f64 * 0.1 + 1.0 / 3.0;
        TrajectoryRecord {
            time: t,
            centers: vec![[t.sin(), -t.cos() * 1e-300, PI * t], [1.0 / 7.0, 0.0, -0.0]],
            radii: vec![1.0 + t.exp() * 1e-17, 2.0_f64.sqrt()],
            coefficients: vec![t.ln(), f64::MIN_POSITIVE, 5e-324, f64::MAX],
            ledger: Some(LedgerEntry { time: t, kinetic: t / 3.0, potential: 0.1, dissipation: t * t, slack: -1e-17 }),
            event: if k == 99 { EventTag::Collision } else { EventTag::None },
            accumulated: (k % 2 == 0).then(|| Accumulated { radii: vec![t / 7.0], centers: vec![[t, t, t]] }),
        }
    }

    fn header() -> TrajectoryHeader {
        TrajectoryHeader {
            provenance: Provenance::new(MINIMAL_RP),
            scenario: Scenario::Rp,
            coefficient_labels: vec![],
            records: 0,
            event: None,
        }
    }

    #[test]
    fn trajectory_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.jsonl");
        let traj = Trajectory { records: (0..100).map(record).collect(), event: None };
        emit_trajectory(&traj, &header(), &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in traj.records.iter().zip(&back) {
            assert_eq!(to_json_line(a), to_json_line(b));
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a, b);
        }
        assert_eq!(read_trajectory_header(&path).unwrap().records, 100);
    }

    #[test]
    fn empty_trajectory_writes_empty_file_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.jsonl");
        emit_trajectory(&Trajectory::default(), &header(), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        let h = read_trajectory_header(&path).unwrap();
        assert_eq!(h.records, 0);
        assert_eq!(h.provenance.config_sha256.len(), 64);
        assert!(h.provenance.calibration.contains_key("xdot_bound_constant"));
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(to_json_line(&vec![0.1, 1.0, -2.5e-300]), "[1.0000000000000001e-1,1.0000000000000000e0,-2.5000000000000000e-300]");
    }

    #[test]
    fn ledger_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.csv");
        let mut l = EnergyLedger::new(1.0 / 3.0);
        for k in 0..10 {
            l.push(k as f64 / 7.0, 0.1 / (k + 1) as f64, 0.2, k as f64 * 1e-3).unwrap();
        }
        emit_ledger(&l, &path).unwrap();
        assert_eq!(read_ledger(&path, l.e0).unwrap(), l);
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = read_trajectory(Path::new("/nonexistent/dir/t.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/t.jsonl"));
    }
}
