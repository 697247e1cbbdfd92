//! Pressure law, energies, the energy ledger and a-priori velocity bounds.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::calibration::XDOT_BOUND_CONSTANT;
use crate::error::{Error, Result};
use crate::geometry::BubbleConfig;

/// Gas-law constant as written in a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureConstant {
    /// `p = c/(4π) r^{-3γ}`.
    Relaxed(f64),
    /// `p = ĉ |B|^{-γ}` with `|B| = 4π r³/3`.
    FullModel(f64),
}

impl PressureConstant {
    pub fn relaxed(&self, gamma: f64) -> f64 {
        match *self {
            PressureConstant::Relaxed(c) => c,
            PressureConstant::FullModel(c_hat) => c_hat * (4.0 * PI / 3.0).powf(-gamma) * 4.0 * PI,
        }
    }
}

/// `c/(4π) r^{-3γ}`.
pub fn bubble_pressure(r: f64, c: f64, gamma: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Collapse { bubble: 0, radius: r });
    }
    Ok(c / (4.0 * PI) * r.powf(-3.0 * gamma))
}

/// `Σ c_i/(3γ-3) r_i^{3-3γ}`.
pub fn potential_energy(radii: &[f64], constants: &[f64], gamma: f64) -> f64 {
    radii
        .iter()
        .zip(constants)
        .map(|(r, c)| c / (3.0 * gamma - 3.0) * r.powf(3.0 - 3.0 * gamma))
        .sum()
}

/// `dE_p/dr_i = -c_i r_i^{2-3γ} = -4π r_i² p_i`.
pub fn potential_energy_derivative(r: f64, c: f64, gamma: f64) -> f64 {
    -c * r.powf(2.0 - 3.0 * gamma)
}

pub fn config_potential_energy(config: &BubbleConfig) -> f64 {
    potential_energy(config.radii(), config.pressure_constants(), config.gamma())
}

/// `½ cᵀ G c`.
pub fn kinetic_energy(coefficients: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    if gram.nrows() != coefficients.len() || gram.ncols() != coefficients.len() {
        return Err(Error::DimensionMismatch { expected: gram.nrows(), got: coefficients.len() });
    }
    let c = DVector::from_column_slice(coefficients);
    Ok(0.5 * c.dot(&(gram * &c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub time: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub dissipation: f64,
    /// `E₀ - (kinetic + potential + dissipation)`.
    pub slack: f64,
}

/// Append-only record of the energy balance along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub e0: f64,
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new(e0: f64) -> Self {
        Self { e0, entries: Vec::new() }
    }

    /// Appends a sample; cumulative dissipation may not decrease.
    pub fn push(&mut self, time: f64, kinetic: f64, potential: f64, dissipation: f64) -> Result<LedgerEntry> {
        if let Some(last) = self.entries.last() {
            if dissipation < last.dissipation {
                return Err(Error::InvalidConfig(format!(
                    "cumulative dissipation decreased from {} to {dissipation}",
                    last.dissipation
                )));
            }
        }
        if !potential.is_finite() || !kinetic.is_finite() {
            return Err(Error::NonFinite { location: format!("ledger sample at t = {time}") });
        }
        let entry = LedgerEntry {
            time,
            kinetic,
            potential,
            dissipation,
            slack: self.e0 - (kinetic + potential + dissipation),
        };
        self.entries.push(entry);
        Ok(entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.slack.abs()).fold(0.0, f64::max)
    }

    /// CSV with a header row and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,kinetic,potential,dissipation,slack\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.time, e.kinetic, e.potential, e.dissipation, e.slack
            );
        }
        s
    }

    pub fn from_csv(text: &str, e0: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let v: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let v = v.map_err(|e| Error::Parse { path: format!("ledger line {}", k + 1), message: e.to_string() })?;
            if v.len() != 5 {
                return Err(Error::Parse { path: format!("ledger line {}", k + 1), message: "expected 5 columns".into() });
            }
            entries.push(LedgerEntry { time: v[0], kinetic: v[1], potential: v[2], dissipation: v[3], slack: v[4] });
        }
        Ok(Self { e0, entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCheckReport {
    /// Indices of samples with `kinetic + potential + dissipation > E₀ + tol`.
    pub violations: Vec<usize>,
    /// `max (kinetic + potential + dissipation - E₀)` over the ledger.
    pub max_violation: f64,
}

impl EnergyCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_energy_inequality(ledger: &EnergyLedger, e0: f64, tol: f64) -> EnergyCheckReport {
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (k, e) in ledger.entries.iter().enumerate() {
        let excess = e.kinetic + e.potential + e.dissipation - e0;
        worst = worst.max(excess);
        if excess > tol {
            violations.push(k);
        }
    }
    EnergyCheckReport { violations, max_violation: worst }
}

/// Radial cutoff equal to 1 on sphere i and 0 at distance `delta` from it.
pub fn phi_delta(i: usize, config: &BubbleConfig, delta: f64, x: &Vector3<f64>) -> Result<f64> {
    let r = config.radii()[i];
    let s = (x - config.centers()[i]).norm();
    if s < r * (1.0 - 1e-12) || s > (r + delta) * (1.0 + 1e-12) {
        return Err(Error::Domain {
            point: [x[0], x[1], x[2]],
            reason: format!("outside the shell {r} ≤ |x - x_i| ≤ {}", r + delta),
        });
    }
    Ok((delta + r) * r / delta / s - r / delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriBounds {
    /// Bound on `|ṙ_i|`.
    pub rdot: Vec<f64>,
    /// Bound on `|ẋ_i|`: the same functional form times a calibrated constant.
    pub xdot: Vec<f64>,
}

/// `|ṙ_i| ≤ √(2E₀) (1/δ + 1/r_i) / (4π r_i²)`.
pub fn rdot_bound(e0: f64, delta: f64, r: f64) -> f64 {
    (2.0 * e0).sqrt() * (1.0 / delta + 1.0 / r) / (4.0 * PI * r * r)
}

/// `|ṙ_i| ≤ √(2E₀) ‖∇φ_δ‖ / (4π r_i²)` with `‖∇φ_δ‖² = 4π r_i (δ + r_i)/δ`,
/// from `4π r_i² ṙ_i = -∫ u·∇φ_δ` and `½‖u‖² ≤ E₀`; needs `δ` at most half the gap.
pub fn rdot_energy_bound(e0: f64, delta: f64, r: f64) -> f64 {
    let grad_sq = if delta.is_infinite() { 4.0 * PI * r } else { 4.0 * PI * r * (delta + r) / delta };
    (2.0 * e0).sqrt() * grad_sq.sqrt() / (4.0 * PI * r * r)
}

pub fn apriori_velocity_bounds(e0: f64, delta: f64, config: &BubbleConfig) -> AprioriBounds {
    let rdot: Vec<f64> = config.radii().iter().map(|&r| rdot_bound(e0, delta, r)).collect();
    let xdot = rdot.iter().map(|b| b * XDOT_BOUND_CONSTANT).collect();
    AprioriBounds { rdot, xdot }
}
