//! The programmable 8×8 qubit lattice.
//!
//! Qubits are grouped in 16 units of 2×2. Inside a unit, Q0 is the top-left
//! qubit and the indices run clockwise (Q1 top-right, Q2 bottom-right, Q3
//! bottom-left), so U00Q0 is the top-left corner of the array and U33Q2 the
//! bottom-right one.
//!
//! All frequencies here are linear (ω/2π). The Hamiltonian builder is the only
//! place that converts to angular units.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::{Coupling, LatticeGraph, Site};
use crate::rng;

pub const GRID_SIZE: usize = 8;
pub const INTERACTION_FREQUENCY_GHZ: f64 = 5.02;
pub const PARKED_FREQUENCY_GHZ: f64 = 4.97;
pub const DEFAULT_J_EFF_MHZ: f64 = 2.01;
/// 0.8·J_eff/2π, the residual disorder reached after alignment.
pub const DEFAULT_DISORDER_BOUND_MHZ: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitId {
    pub unit_row: u8,
    pub unit_col: u8,
    pub index: u8,
}

impl QubitId {
    pub fn new(unit_row: u8, unit_col: u8, index: u8) -> Result<Self> {
        if unit_row > 3 || unit_col > 3 || index > 3 {
            return Err(Error::InvalidLabel(format!(
                "U{unit_row}{unit_col}Q{index}"
            )));
        }
        Ok(QubitId {
            unit_row,
            unit_col,
            index,
        })
    }

    /// (row, col) on the 8×8 grid.
    pub fn grid_position(self) -> (usize, usize) {
        let (dr, dc) = match self.index {
            0 => (0, 0),
            1 => (0, 1),
            2 => (1, 1),
            _ => (1, 0),
        };
        (
            2 * self.unit_row as usize + dr,
            2 * self.unit_col as usize + dc,
        )
    }

    pub fn from_grid(row: usize, col: usize) -> Result<Self> {
        if row >= GRID_SIZE || col >= GRID_SIZE {
            return Err(Error::InvalidArgument(format!(
                "grid position ({row}, {col}) outside the 8×8 array"
            )));
        }
        let index = match (row % 2, col % 2) {
            (0, 0) => 0,
            (0, 1) => 1,
            (1, 1) => 2,
            _ => 3,
        };
        QubitId::new((row / 2) as u8, (col / 2) as u8, index)
    }

    pub fn is_grid_neighbor(self, other: QubitId) -> bool {
        let (r1, c1) = self.grid_position();
        let (r2, c2) = other.grid_position();
        r1.abs_diff(r2) + c1.abs_diff(c2) == 1
    }

    pub fn all() -> impl Iterator<Item = QubitId> {
        (0..4u8).flat_map(|r| {
            (0..4u8).flat_map(move |c| {
                (0..4u8).map(move |i| QubitId {
                    unit_row: r,
                    unit_col: c,
                    index: i,
                })
            })
        })
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U{}{}Q{}", self.unit_row, self.unit_col, self.index)
    }
}

impl FromStr for QubitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        if b.len() != 5 || b[0] != b'U' || b[3] != b'Q' {
            return Err(Error::InvalidLabel(s.to_string()));
        }
        let digit = |c: u8| -> Result<u8> {
            if (b'0'..=b'3').contains(&c) {
                Ok(c - b'0')
            } else {
                Err(Error::InvalidLabel(s.to_string()))
            }
        };
        QubitId::new(digit(b[1])?, digit(b[2])?, digit(b[4])?)
    }
}

impl Serialize for QubitId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QubitId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-qubit device parameters. Defaults are the array means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QubitParams {
    pub max_frequency_ghz: f64,
    pub idle_frequency_ghz: f64,
    /// U/2π (= η/2π), negative.
    pub anharmonicity_mhz: f64,
    pub t1_us: f64,
    pub t2_star_us: f64,
    pub readout_fidelity_0: f64,
    pub readout_fidelity_1: f64,
    pub effective_temperature_mk: f64,
    pub dispersive_shift_mhz: f64,
    pub resonator_linewidth_mhz: f64,
}

impl Default for QubitParams {
    fn default() -> Self {
        QubitParams {
            max_frequency_ghz: 5.442,
            idle_frequency_ghz: 5.200,
            anharmonicity_mhz: -248.9,
            t1_us: 12.26,
            t2_star_us: 1.63,
            readout_fidelity_0: 0.966,
            readout_fidelity_1: 0.919,
            effective_temperature_mk: 66.0,
            dispersive_shift_mhz: 1.14,
            resonator_linewidth_mhz: 5.06,
        }
    }
}

impl QubitParams {
    fn validate(&self, q: QubitId) -> Result<()> {
        let fail = |reason: String| Error::Device {
            qubit: q.to_string(),
            reason,
        };
        for (name, f) in [
            ("readout_fidelity_0", self.readout_fidelity_0),
            ("readout_fidelity_1", self.readout_fidelity_1),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(fail(format!("{name} = {f} outside (0, 1]")));
            }
        }
        if !(self.t1_us > 0.0) {
            return Err(fail(format!("T1 = {} must be positive", self.t1_us)));
        }
        if !(self.t2_star_us > 0.0) {
            return Err(fail(format!("T2* = {} must be positive", self.t2_star_us)));
        }
        if !(self.anharmonicity_mhz < 0.0) {
            return Err(fail(format!(
                "anharmonicity {} MHz must be negative",
                self.anharmonicity_mhz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEdge {
    pub a: QubitId,
    pub b: QubitId,
    pub j_eff_mhz: f64,
    pub functional: bool,
}

fn ordered(a: QubitId, b: QubitId) -> (QubitId, QubitId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub qubits: BTreeMap<QubitId, QubitParams>,
    pub edges: BTreeMap<(QubitId, QubitId), CouplingEdge>,
    pub broken_qubits: BTreeSet<QubitId>,
    pub broken_edges: BTreeSet<(QubitId, QubitId)>,
}

/// The 62-qubit array with mean parameters everywhere.
pub fn default_device() -> DeviceModel {
    let broken_qubits: BTreeSet<QubitId> = ["U03Q2", "U22Q1"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let broken_edges: BTreeSet<(QubitId, QubitId)> = [("U10Q0", "U10Q3")]
        .iter()
        .map(|(a, b)| ordered(a.parse().unwrap(), b.parse().unwrap()))
        .collect();
    DeviceModel::build(
        &QubitParams::default(),
        DEFAULT_J_EFF_MHZ,
        broken_qubits,
        broken_edges,
    )
}

impl DeviceModel {
    fn build(
        params: &QubitParams,
        j_eff_mhz: f64,
        broken_qubits: BTreeSet<QubitId>,
        broken_edges: BTreeSet<(QubitId, QubitId)>,
    ) -> DeviceModel {
        let qubits: BTreeMap<QubitId, QubitParams> =
            QubitId::all().map(|q| (q, params.clone())).collect();
        let mut edges = BTreeMap::new();
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                let q = QubitId::from_grid(r, c).unwrap();
                for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                    if nr >= GRID_SIZE || nc >= GRID_SIZE {
                        continue;
                    }
                    let n = QubitId::from_grid(nr, nc).unwrap();
                    let key = ordered(q, n);
                    let functional = !broken_edges.contains(&key)
                        && !broken_qubits.contains(&q)
                        && !broken_qubits.contains(&n);
                    edges.insert(
                        key,
                        CouplingEdge {
                            a: key.0,
                            b: key.1,
                            j_eff_mhz: j_eff_mhz,
                            functional,
                        },
                    );
                }
            }
        }
        DeviceModel {
            qubits,
            edges,
            broken_qubits,
            broken_edges,
        }
    }

    pub fn is_functional(&self, q: QubitId) -> bool {
        self.qubits.contains_key(&q) && !self.broken_qubits.contains(&q)
    }

    pub fn functional_qubits(&self) -> impl Iterator<Item = QubitId> + '_ {
        self.qubits.keys().copied().filter(|q| !self.broken_qubits.contains(q))
    }

    pub fn functional_qubit_count(&self) -> usize {
        self.functional_qubits().count()
    }

    pub fn edge(&self, a: QubitId, b: QubitId) -> Option<&CouplingEdge> {
        self.edges.get(&ordered(a, b))
    }

    pub fn edge_functional(&self, a: QubitId, b: QubitId) -> bool {
        self.edge(a, b).is_some_and(|e| e.functional)
    }

    pub fn params(&self, q: QubitId) -> Result<&QubitParams> {
        self.qubits
            .get(&q)
            .ok_or_else(|| Error::UnknownQubit(q.to_string()))
    }

    /// Grid neighbors of `q` (whether or not the coupler works).
    pub fn lattice_neighbors(&self, q: QubitId) -> Vec<QubitId> {
        self.edges
            .values()
            .filter_map(|e| {
                if e.a == q {
                    Some(e.b)
                } else if e.b == q {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Per-edge J drawn from N(mean, sigma²); non-functional edges are untouched.
    pub fn with_coupling_spread(&self, sigma_mhz: f64, seed: u64) -> Result<DeviceModel> {
        let mut out = self.clone();
        let mut rng = rng::task_rng(seed, 0);
        for e in out.edges.values_mut().filter(|e| e.functional) {
            let normal = Normal::new(e.j_eff_mhz, sigma_mhz)
                .map_err(|err| Error::InvalidArgument(err.to_string()))?;
            e.j_eff_mhz = normal.sample(&mut rng);
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for (q, p) in &self.qubits {
            p.validate(*q)?;
        }
        for q in &self.broken_qubits {
            if !self.qubits.contains_key(q) {
                return Err(Error::Device {
                    qubit: q.to_string(),
                    reason: "broken qubit is not part of the array".into(),
                });
            }
        }
        for e in self.edges.values() {
            if !e.a.is_grid_neighbor(e.b) {
                return Err(Error::Device {
                    qubit: e.a.to_string(),
                    reason: format!("edge to {} is not nearest-neighbor", e.b),
                });
            }
            if e.functional {
                for q in [e.a, e.b] {
                    if self.broken_qubits.contains(&q) {
                        return Err(Error::Device {
                            qubit: q.to_string(),
                            reason: "broken qubit has a functional coupling".into(),
                        });
                    }
                }
                if !(e.j_eff_mhz > 0.0) {
                    return Err(Error::Device {
                        qubit: e.a.to_string(),
                        reason: format!("J_eff to {} must be positive", e.b),
                    });
                }
                if self.broken_edges.contains(&(e.a, e.b)) {
                    return Err(Error::Device {
                        qubit: e.a.to_string(),
                        reason: format!("edge to {} is listed broken but functional", e.b),
                    });
                }
            }
        }
        Ok(())
    }

    /// Full functional lattice as a graph.
    pub fn lattice(&self) -> LatticeGraph {
        let config = FrequencyConfig::aligned(
            self.functional_qubits(),
            INTERACTION_FREQUENCY_GHZ,
            &DisorderMap::default(),
        );
        active_subgraph(self, &config).expect("device has functional qubits")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DeviceModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DeviceModel::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<DeviceModel> {
        let file: DeviceFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("device file: {e}")))?;
        file.into_model()
    }

    pub fn to_toml(&self) -> String {
        DeviceFile::from_model(self).to_toml()
    }
}

pub const DEVICE_SCHEMA_VERSION: u32 = 1;

/// On-disk device description: shared defaults, sparse per-qubit overrides and
/// an explicit edge list for non-default couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub schema_version: u32,
    #[serde(default = "default_j")]
    pub j_eff_mhz: f64,
    #[serde(default)]
    pub defaults: QubitParams,
    #[serde(default)]
    pub broken_qubits: Vec<String>,
    #[serde(default)]
    pub broken_edges: Vec<[String; 2]>,
    #[serde(default)]
    pub qubits: BTreeMap<String, toml::Table>,
    #[serde(default)]
    pub edges: Vec<EdgeOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeOverride {
    pub a: String,
    pub b: String,
    pub j_eff_mhz: f64,
}

fn default_j() -> f64 {
    DEFAULT_J_EFF_MHZ
}

fn parse_label(s: &str) -> Result<QubitId> {
    s.parse()
}

impl DeviceFile {
    pub fn into_model(self) -> Result<DeviceModel> {
        if self.schema_version != DEVICE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported device schema version {}",
                self.schema_version
            )));
        }
        let broken_qubits = self
            .broken_qubits
            .iter()
            .map(|s| parse_label(s))
            .collect::<Result<BTreeSet<_>>>()?;
        let mut broken_edges = BTreeSet::new();
        for [a, b] in &self.broken_edges {
            let (a, b) = (parse_label(a)?, parse_label(b)?);
            if !a.is_grid_neighbor(b) {
                return Err(Error::Device {
                    qubit: a.to_string(),
                    reason: format!("broken edge to {b} is not nearest-neighbor"),
                });
            }
            broken_edges.insert(ordered(a, b));
        }
        let mut model =
            DeviceModel::build(&self.defaults, self.j_eff_mhz, broken_qubits, broken_edges);
        let base = toml::Table::try_from(&self.defaults)
            .map_err(|e| Error::Config(e.to_string()))?;
        for (label, overrides) in &self.qubits {
            let q = parse_label(label)?;
            let mut merged = base.clone();
            for (k, v) in overrides {
                merged.insert(k.clone(), v.clone());
            }
            let params: QubitParams = merged.try_into().map_err(|e| Error::Device {
                qubit: label.clone(),
                reason: format!("bad parameters: {e}"),
            })?;
            model.qubits.insert(q, params);
        }
        for e in &self.edges {
            let (a, b) = (parse_label(&e.a)?, parse_label(&e.b)?);
            let edge = model.edges.get_mut(&ordered(a, b)).ok_or_else(|| Error::Device {
                qubit: e.a.clone(),
                reason: format!("no lattice edge to {}", e.b),
            })?;
            edge.j_eff_mhz = e.j_eff_mhz;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn from_model(model: &DeviceModel) -> DeviceFile {
        let defaults = QubitParams::default();
        let base = toml::Table::try_from(&defaults).unwrap();
        let mut qubits = BTreeMap::new();
        for (q, p) in &model.qubits {
            let t = toml::Table::try_from(p).unwrap();
            let diff: toml::Table = t
                .into_iter()
                .filter(|(k, v)| base.get(k) != Some(v))
                .collect();
            if !diff.is_empty() {
                qubits.insert(q.to_string(), diff);
            }
        }
        let edges = model
            .edges
            .values()
            .filter(|e| e.j_eff_mhz != DEFAULT_J_EFF_MHZ)
            .map(|e| EdgeOverride {
                a: e.a.to_string(),
                b: e.b.to_string(),
                j_eff_mhz: e.j_eff_mhz,
            })
            .collect();
        DeviceFile {
            schema_version: DEVICE_SCHEMA_VERSION,
            j_eff_mhz: DEFAULT_J_EFF_MHZ,
            defaults,
            broken_qubits: model.broken_qubits.iter().map(|q| q.to_string()).collect(),
            broken_edges: model
                .broken_edges
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
            qubits,
            edges,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("device file serializes")
    }
}

/// Per-qubit detunings from the interaction frequency, in MHz.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisorderMap {
    pub offsets: BTreeMap<QubitId, f64>,
}

impl DisorderMap {
    pub fn get(&self, q: QubitId) -> f64 {
        self.offsets.get(&q).copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.offsets.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn from_vector(labels: &[String], values: &[f64]) -> Result<DisorderMap> {
        if labels.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: values.len(),
            });
        }
        let offsets = labels
            .iter()
            .zip(values)
            .map(|(l, v)| Ok((l.parse()?, *v)))
            .collect::<Result<_>>()?;
        Ok(DisorderMap { offsets })
    }
}

/// Uniform random offsets in `[-bound, bound]` MHz on the given sites.
pub fn sample_disorder(
    sites: impl IntoIterator<Item = QubitId>,
    bound_mhz: f64,
    seed: u64,
) -> Result<DisorderMap> {
    if !(bound_mhz >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disorder bound {bound_mhz} must be nonnegative"
        )));
    }
    let sites: Vec<QubitId> = sites.into_iter().collect();
    let mut rng = rng::task_rng(seed, 0);
    let values = rng::uniform_offsets(&mut rng, sites.len(), bound_mhz);
    Ok(DisorderMap {
        offsets: sites.into_iter().zip(values).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub working_frequency_ghz: BTreeMap<QubitId, f64>,
    pub active_set: BTreeSet<QubitId>,
    pub interaction_frequency_ghz: f64,
    pub parked_frequency_ghz: f64,
}

impl FrequencyConfig {
    /// Active qubits at the interaction frequency plus their offset; the rest parked.
    pub fn aligned(
        active: impl IntoIterator<Item = QubitId>,
        interaction_frequency_ghz: f64,
        disorder: &DisorderMap,
    ) -> FrequencyConfig {
        let active_set: BTreeSet<QubitId> = active.into_iter().collect();
        let working_frequency_ghz = active_set
            .iter()
            .map(|&q| (q, interaction_frequency_ghz + disorder.get(q) * 1e-3))
            .collect();
        FrequencyConfig {
            working_frequency_ghz,
            active_set,
            interaction_frequency_ghz,
            parked_frequency_ghz: PARKED_FREQUENCY_GHZ,
        }
    }

    /// Offsets of active qubits from the interaction frequency, MHz.
    pub fn disorder(&self) -> DisorderMap {
        DisorderMap {
            offsets: self
                .active_set
                .iter()
                .map(|q| {
                    let w = self
                        .working_frequency_ghz
                        .get(q)
                        .copied()
                        .unwrap_or(self.interaction_frequency_ghz);
                    (*q, (w - self.interaction_frequency_ghz) * 1e3)
                })
                .collect(),
        }
    }

    pub fn validate(&self, device: &DeviceModel) -> Result<()> {
        for q in &self.active_set {
            if !device.is_functional(*q) {
                return Err(Error::NotFunctional(q.to_string()));
            }
        }
        Ok(())
    }
}

/// Functional couplings among the active qubits. Parked qubits drop out.
pub fn active_subgraph(device: &DeviceModel, config: &FrequencyConfig) -> Result<LatticeGraph> {
    if config.active_set.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    config.validate(device)?;
    let order: Vec<QubitId> = config.active_set.iter().copied().collect();
    let sites = order
        .iter()
        .map(|q| {
            let (row, col) = q.grid_position();
            Site {
                label: q.to_string(),
                row: row as i32,
                col: col as i32,
            }
        })
        .collect();
    let position: BTreeMap<QubitId, usize> =
        order.iter().enumerate().map(|(i, q)| (*q, i)).collect();
    let edges = device.edges.values().filter_map(|e| {
        if !e.functional {
            return None;
        }
        let a = *position.get(&e.a)?;
        let b = *position.get(&e.b)?;
        Some(Coupling {
            a,
            b,
            j_mhz: e.j_eff_mhz,
        })
    });
    LatticeGraph::new(sites, edges)
}
