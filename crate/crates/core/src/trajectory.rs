//! Time-stamped simulation output shared by all drivers.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::energy::LedgerEntry;
use crate::error::Result;
use crate::geometry::{detect_collision, min_gap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventTag {
    None,
    Collision,
    NearContact,
    Horizon,
    Collapse,
}

/// Positions and radii carried by the velocity field itself, when they
/// differ from the geometry (viscous scheme).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulated {
    pub radii: Vec<f64>,
    pub centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    /// Velocity coefficients in the harmonic basis ordering.
    pub coefficients: Vec<f64>,
    pub ledger: Option<LedgerEntry>,
    pub event: EventTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accumulated: Option<Accumulated>,
}

impl TrajectoryRecord {
    pub fn centers_vec(&self) -> Vec<Vector3<f64>> {
        self.centers.iter().map(|c| Vector3::new(c[0], c[1], c[2])).collect()
    }

    pub fn min_gap(&self) -> f64 {
        min_gap(&self.centers_vec(), &self.radii)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tag: EventTag,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub event: Option<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gap_series(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.records.iter().map(|r| (r.time, r.min_gap()))
    }

    /// First time the gap reaches `threshold`, interpolated between records.
    pub fn collision_time(&self, threshold: f64) -> Result<Option<f64>> {
        detect_collision(self.gap_series(), threshold)
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }
}

pub fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v[0], v[1], v[2]]
}
