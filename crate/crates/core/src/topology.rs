//! Branched-tube geometry and flow configuration.
//!
//! `K` branches each carry one transmitter and merge at a junction into a
//! single main tube. The receiver sits in the main tube, centered
//! `main_length` downstream of the junction. Lengths are meters and flow rates
//! m³/s internally; the JSON file format uses the lab units (ml/min, mm).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reynolds number above which the laminar model is rejected.
pub const LAMINAR_REYNOLDS_LIMIT: f64 = 2300.0;

/// Default tube inner diameter (m).
pub const DEFAULT_DIAMETER: f64 = 1.5e-3;

/// 10 ml/min, the per-branch flow of the reference two-branch setup.
pub const DEFAULT_BRANCH_FLOW: f64 = 10.0 * ML_PER_MIN;

pub const DEFAULT_NU: f64 = 1e-6;
pub const DEFAULT_MAIN_LENGTH: f64 = 0.01;
pub const DEFAULT_RX_LENGTH: f64 = 0.01;
pub const DEFAULT_BRANCH_LENGTH: f64 = 0.30;

const ML_PER_MIN: f64 = 1e-6 / 60.0;

/// Mean (bulk) speed of a volumetric flow through a circular tube.
pub fn mean_speed(flow_rate: f64, diameter: f64) -> Result<f64> {
    if !(flow_rate > 0.0 && flow_rate.is_finite()) {
        return Err(Error::Domain(format!(
            "flow rate must be positive, got {flow_rate}"
        )));
    }
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::Domain(format!(
            "diameter must be positive, got {diameter}"
        )));
    }
    let radius = diameter / 2.0;
    Ok(flow_rate / (PI * radius * radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub branch_length: f64,
    /// Distance from the release cross-section to the junction.
    pub tx_offset: f64,
    pub flow_rate: f64,
    pub diameter: f64,
}

impl BranchSpec {
    pub fn new(branch_length: f64, tx_offset: f64, flow_rate: f64, diameter: f64) -> Result<Self> {
        let spec = BranchSpec {
            branch_length,
            tx_offset,
            flow_rate,
            diameter,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("branch_length", self.branch_length),
            ("tx_offset", self.tx_offset),
            ("flow_rate", self.flow_rate),
            ("diameter", self.diameter),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tx_offset > self.branch_length {
            return Err(Error::Domain(format!(
                "tx_offset {} exceeds branch_length {}",
                self.tx_offset, self.branch_length
            )));
        }
        Ok(())
    }

    pub fn mean_speed(&self) -> f64 {
        mean_speed(self.flow_rate, self.diameter).expect("validated at construction")
    }
}

/// A tube segment of the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Branch(usize),
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct BranchTopology {
    branches: Vec<BranchSpec>,
    main_length: f64,
    main_diameter: f64,
    rx_length: f64,
    kinematic_viscosity: f64,
}

impl BranchTopology {
    pub fn new(
        branches: Vec<BranchSpec>,
        main_length: f64,
        main_diameter: f64,
        rx_length: f64,
        kinematic_viscosity: f64,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Argument("topology needs at least one branch".into()));
        }
        for b in &branches {
            b.validate()?;
        }
        for (name, v) in [
            ("main_length", main_length),
            ("main_diameter", main_diameter),
            ("rx_length", rx_length),
            ("kinematic_viscosity", kinematic_viscosity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if rx_length >= 2.0 * main_length {
            return Err(Error::Domain(format!(
                "receiver of length {rx_length} does not fit in a main tube of length {main_length}"
            )));
        }
        let topo = BranchTopology {
            branches,
            main_length,
            main_diameter,
            rx_length,
            kinematic_viscosity,
        };
        for seg in topo.segments() {
            let re = topo.reynolds(seg)?;
            if re >= LAMINAR_REYNOLDS_LIMIT {
                return Err(Error::Domain(format!(
                    "segment {seg:?} has Reynolds number {re:.1}, flow is not laminar"
                )));
            }
        }
        Ok(topo)
    }

    /// `k` identical branches with the reference flow and diameter, Tx placed
    /// so that each Tx-Rx path length equals the given distance.
    pub fn symmetric(distances: &[f64]) -> Result<Self> {
        let branches = distances
            .iter()
            .map(|&d| {
                BranchSpec::new(
                    DEFAULT_BRANCH_LENGTH.max(d - DEFAULT_MAIN_LENGTH),
                    d - DEFAULT_MAIN_LENGTH,
                    DEFAULT_BRANCH_FLOW,
                    DEFAULT_DIAMETER,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        BranchTopology::new(
            branches,
            DEFAULT_MAIN_LENGTH,
            DEFAULT_DIAMETER,
            DEFAULT_RX_LENGTH,
            DEFAULT_NU,
        )
    }

    /// Same geometry with each Tx moved so that its Tx-Rx distance is
    /// `distances[k]`. Branches are lengthened when the Tx would not fit.
    pub fn with_distances(&self, distances: &[f64]) -> Result<Self> {
        if distances.len() != self.branches.len() {
            return Err(Error::Argument(format!(
                "{} distances given for {} branches",
                distances.len(),
                self.branches.len()
            )));
        }
        let branches = self
            .branches
            .iter()
            .zip(distances)
            .map(|(b, &d)| {
                let offset = d - self.main_length;
                BranchSpec::new(b.branch_length.max(offset), offset, b.flow_rate, b.diameter)
            })
            .collect::<Result<Vec<_>>>()?;
        BranchTopology::new(
            branches,
            self.main_length,
            self.main_diameter,
            self.rx_length,
            self.kinematic_viscosity,
        )
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    pub fn branch(&self, index: usize) -> Result<&BranchSpec> {
        self.branches.get(index).ok_or(Error::Lookup {
            index,
            len: self.branches.len(),
        })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn main_length(&self) -> f64 {
        self.main_length
    }

    pub fn main_diameter(&self) -> f64 {
        self.main_diameter
    }

    pub fn rx_length(&self) -> f64 {
        self.rx_length
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.kinematic_viscosity
    }

    /// Flow through the main tube: the sum of all branch inflows.
    pub fn main_flow_rate(&self) -> f64 {
        self.branches.iter().map(|b| b.flow_rate).sum()
    }

    pub fn main_speed(&self) -> f64 {
        mean_speed(self.main_flow_rate(), self.main_diameter).expect("validated at construction")
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> {
        (0..self.branches.len())
            .map(Segment::Branch)
            .chain(std::iter::once(Segment::Main))
    }

    pub fn segment_speed(&self, segment: Segment) -> Result<f64> {
        match segment {
            Segment::Branch(i) => Ok(self.branch(i)?.mean_speed()),
            Segment::Main => Ok(self.main_speed()),
        }
    }

    fn segment_diameter(&self, segment: Segment) -> Result<f64> {
        match segment {
            Segment::Branch(i) => Ok(self.branch(i)?.diameter),
            Segment::Main => Ok(self.main_diameter),
        }
    }

    pub fn reynolds(&self, segment: Segment) -> Result<f64> {
        Ok(reynolds_number(
            self.segment_speed(segment)?,
            self.segment_diameter(segment)?,
            self.kinematic_viscosity,
        ))
    }

    /// Path length from the Tx cross-section to the receiver center.
    pub fn tx_rx_distance(&self, branch_index: usize) -> Result<f64> {
        Ok(self.branch(branch_index)?.tx_offset + self.main_length)
    }

    pub fn distances(&self) -> Vec<f64> {
        (0..self.branches.len())
            .map(|i| self.branches[i].tx_offset + self.main_length)
            .collect()
    }

    pub fn from_json_str(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}

pub fn reynolds_number(speed: f64, diameter: f64, nu: f64) -> f64 {
    speed * diameter / nu
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BranchEntry {
    branch_length_m: f64,
    tx_offset_m: f64,
    flow_ml_per_min: f64,
    diameter_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MainEntry {
    length_m: f64,
    diameter_mm: f64,
    rx_length_m: f64,
}

/// On-disk topology layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    branches: Vec<BranchEntry>,
    main: MainEntry,
    nu_m2_per_s: f64,
}

impl TryFrom<TopologyFile> for BranchTopology {
    type Error = Error;

    fn try_from(f: TopologyFile) -> Result<Self> {
        let branches = f
            .branches
            .iter()
            .map(|b| {
                BranchSpec::new(
                    b.branch_length_m,
                    b.tx_offset_m,
                    b.flow_ml_per_min * ML_PER_MIN,
                    b.diameter_mm * 1e-3,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        BranchTopology::new(
            branches,
            f.main.length_m,
            f.main.diameter_mm * 1e-3,
            f.main.rx_length_m,
            f.nu_m2_per_s,
        )
    }
}

impl From<BranchTopology> for TopologyFile {
    fn from(t: BranchTopology) -> Self {
        TopologyFile {
            branches: t
                .branches
                .iter()
                .map(|b| BranchEntry {
                    branch_length_m: b.branch_length,
                    tx_offset_m: b.tx_offset,
                    flow_ml_per_min: b.flow_rate / ML_PER_MIN,
                    diameter_mm: b.diameter * 1e3,
                })
                .collect(),
            main: MainEntry {
                length_m: t.main_length,
                diameter_mm: t.main_diameter * 1e3,
                rx_length_m: t.rx_length,
            },
            nu_m2_per_s: t.kinematic_viscosity,
        }
    }
}
