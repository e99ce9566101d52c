//! The experiments as declarative scenarios: full-array walks, the
//! Mach–Zehnder interferometer with its disorder steps and variants, the
//! decoherence ring and the disordered-lattice velocity study.

use std::collections::BTreeSet;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, FrontFit, VelocityFit};
use crate::device::{
    active_subgraph, default_device, DeviceModel, DisorderMap, FrequencyConfig, QubitId,
    INTERACTION_FREQUENCY_GHZ,
};
use crate::error::{Error, Result};
use crate::evolution::lindblad::{evolve_lindblad, LindbladModel};
use crate::evolution::{self, EvolutionPlan, Snapshot};
use crate::hamiltonian::HamiltonianMatrix;
use crate::lattice::LatticeGraph;
use crate::rng;
use crate::sector::{QuantumState, SectorBasis};

pub const MZ_PATH_LENGTH: usize = 10;
pub const SINGLE_WALKER_READOUT_NS: f64 = 650.0;
pub const TWO_WALKER_READOUT_NS: f64 = 550.0;

fn grid_qubit(row: usize, col: usize) -> QubitId {
    QubitId::from_grid(row, col).expect("position on the array")
}

/// Named interferometer sites on the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MZLayout {
    pub s: QubitId,
    pub bs1: QubitId,
    pub left: Vec<QubitId>,
    pub right: Vec<QubitId>,
    pub bs2: QubitId,
    pub d: QubitId,
}

impl Default for MZLayout {
    /// Boundary of the rows 1–7 × columns 1–6 rectangle: BS1 and BS2 at opposite
    /// corners, the arms along the two halves of the boundary, S above BS1 and D
    /// right of BS2.
    fn default() -> Self {
        let left = (2..=6)
            .map(|c| grid_qubit(1, c))
            .chain((2..=6).map(|r| grid_qubit(r, 6)))
            .collect();
        let right = (2..=7)
            .map(|r| grid_qubit(r, 1))
            .chain((2..=5).map(|c| grid_qubit(7, c)))
            .collect();
        MZLayout {
            s: grid_qubit(0, 1),
            bs1: grid_qubit(1, 1),
            left,
            right,
            bs2: grid_qubit(7, 6),
            d: grid_qubit(7, 7),
        }
    }
}

impl MZLayout {
    /// S, BS1, L1..L10, R1..R10, BS2, D.
    pub fn sites(&self) -> Vec<QubitId> {
        let mut v = vec![self.s, self.bs1];
        v.extend(&self.left);
        v.extend(&self.right);
        v.push(self.bs2);
        v.push(self.d);
        v
    }

    pub fn named_edges(&self) -> Vec<(QubitId, QubitId)> {
        let mut e = vec![(self.s, self.bs1)];
        for arm in [&self.left, &self.right] {
            e.push((self.bs1, arm[0]));
            e.extend(arm.windows(2).map(|w| (w[0], w[1])));
            e.push((arm[arm.len() - 1], self.bs2));
        }
        e.push((self.bs2, self.d));
        e
    }

    /// Resolves `S`, `BS1`, `L1`…`L10`, `R1`…`R10`, `BS2`, `D`.
    pub fn site(&self, name: &str) -> Result<QubitId> {
        let arm = |list: &[QubitId], k: &str| -> Option<QubitId> {
            let k: usize = k.parse().ok()?;
            (1..=list.len()).contains(&k).then(|| list[k - 1])
        };
        let found = match name {
            "S" => Some(self.s),
            "BS1" => Some(self.bs1),
            "BS2" => Some(self.bs2),
            "D" => Some(self.d),
            _ if name.starts_with('L') => arm(&self.left, &name[1..]),
            _ if name.starts_with('R') => arm(&self.right, &name[1..]),
            _ => None,
        };
        found.ok_or_else(|| Error::InvalidArgument(format!("no interferometer site named `{name}`")))
    }

    /// The same layout with the arms exchanged.
    pub fn mirrored(&self) -> MZLayout {
        MZLayout {
            left: self.right.clone(),
            right: self.left.clone(),
            ..self.clone()
        }
    }

    pub fn validate(&self, device: &DeviceModel) -> Result<()> {
        if self.left.len() != MZ_PATH_LENGTH || self.right.len() != MZ_PATH_LENGTH {
            return Err(Error::InvalidArgument(format!(
                "arms have {} and {} sites, both must have {MZ_PATH_LENGTH}",
                self.left.len(),
                self.right.len()
            )));
        }
        let sites = self.sites();
        let unique: BTreeSet<QubitId> = sites.iter().copied().collect();
        if unique.len() != sites.len() {
            return Err(Error::InvalidArgument("interferometer sites must be distinct".into()));
        }
        for q in &sites {
            if !device.is_functional(*q) {
                return Err(Error::NotFunctional(q.to_string()));
            }
        }
        let named: BTreeSet<(QubitId, QubitId)> = self
            .named_edges()
            .into_iter()
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        for &(a, b) in &named {
            if !device.edge_functional(a, b) {
                return Err(Error::Device {
                    qubit: a.to_string(),
                    reason: format!("interferometer needs a working coupler to {b}"),
                });
            }
        }
        for (i, &a) in sites.iter().enumerate() {
            for &b in &sites[i + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                if device.edge_functional(a, b) && !named.contains(&key) {
                    return Err(Error::Device {
                        qubit: a.to_string(),
                        reason: format!("stray coupling to {b} inside the interferometer"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Triangular detuning ramps along the two arms: site k of an arm gets
/// k·d for k ≤ 5 and (11−k)·d after the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisorderStepProtocol {
    pub d_l: f64,
    pub d_r: f64,
}

impl DisorderStepProtocol {
    pub fn weight(k: usize) -> f64 {
        let half = MZ_PATH_LENGTH / 2;
        if k < half {
            (k + 1) as f64
        } else {
            (MZ_PATH_LENGTH - k) as f64
        }
    }

    pub fn offsets(&self, layout: &MZLayout) -> DisorderMap {
        let mut map = DisorderMap::default();
        for (k, q) in layout.left.iter().enumerate() {
            map.offsets.insert(*q, Self::weight(k) * self.d_l);
        }
        for (k, q) in layout.right.iter().enumerate() {
            map.offsets.insert(*q, Self::weight(k) * self.d_r);
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VariantFlags {
    /// Park R1 and R10, cutting the right arm.
    #[serde(default)]
    pub blocked: bool,
    /// Park S and BS1.
    #[serde(default)]
    pub removed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    /// Simulated shots per readout; `None` reports exact populations.
    pub shots: Option<u64>,
    pub post_select: bool,
    /// Use the device readout fidelities instead of perfect readout.
    pub readout_errors: bool,
    pub thermal_excitation: bool,
}

impl Default for MeasurementPlan {
    fn default() -> Self {
        MeasurementPlan {
            shots: None,
            post_select: false,
            readout_errors: false,
            thermal_excitation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Device description file; the built-in array when absent.
    #[serde(default)]
    pub device_file: Option<String>,
    pub active_set: BTreeSet<QubitId>,
    pub initial_excitations: Vec<QubitId>,
    #[serde(default)]
    pub disorder: DisorderMap,
    pub times_ns: Vec<f64>,
    #[serde(default)]
    pub measurement: MeasurementPlan,
    #[serde(default)]
    pub variant: VariantFlags,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_method() -> String {
    "auto".into()
}

/// A scenario ready to evolve: graph, basis and initial state resolved.
pub struct PreparedScenario {
    pub graph: LatticeGraph,
    pub basis: Arc<SectorBasis>,
    pub initial: QuantumState,
    pub hamiltonian: Arc<HamiltonianMatrix>,
}

impl Scenario {
    pub fn device(&self) -> Result<DeviceModel> {
        match &self.device_file {
            Some(p) => DeviceModel::load(p),
            None => Ok(default_device()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for q in &self.initial_excitations {
            if !self.active_set.contains(q) {
                return Err(Error::InvalidArgument(format!("walker {q} is not in the active set")));
            }
        }
        let unique: BTreeSet<_> = self.initial_excitations.iter().collect();
        if unique.len() != self.initial_excitations.len() {
            return Err(Error::InvalidArgument("walkers must start on distinct sites".into()));
        }
        evolution::validate_times(&self.times_ns)
    }

    pub fn frequency_config(&self) -> FrequencyConfig {
        FrequencyConfig::aligned(
            self.active_set.iter().copied(),
            INTERACTION_FREQUENCY_GHZ,
            &self.disorder,
        )
    }

    pub fn prepare(&self, device: &DeviceModel) -> Result<PreparedScenario> {
        self.validate()?;
        let graph = active_subgraph(device, &self.frequency_config())?;
        let basis = Arc::new(SectorBasis::new(graph.n_sites(), self.initial_excitations.len())?);
        let excited = self
            .initial_excitations
            .iter()
            .map(|q| graph.require(&q.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let initial = QuantumState::basis_state(basis.clone(), &excited)?;
        let hamiltonian = Arc::new(HamiltonianMatrix::from_disorder_map(&graph, basis.clone(), &self.disorder)?);
        Ok(PreparedScenario {
            graph,
            basis,
            initial,
            hamiltonian,
        })
    }

    pub fn evolve(&self, device: &DeviceModel) -> Result<(PreparedScenario, Vec<Snapshot>)> {
        let prepared = self.prepare(device)?;
        let plan = EvolutionPlan::new(prepared.hamiltonian.clone(), self.times_ns.clone()).with_method(&self.method);
        let snaps = evolution::evolve_unitary(&plan, &prepared.initial)?;
        Ok((prepared, snaps))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Walkers on the full functional array.
pub fn ctqw_scenario(
    device: &DeviceModel,
    walkers: &[QubitId],
    t_max_ns: f64,
    step_ns: f64,
) -> Result<Scenario> {
    if walkers.is_empty() {
        return Err(Error::InvalidArgument("at least one walker is required".into()));
    }
    for q in walkers {
        if !device.is_functional(*q) {
            return Err(Error::NotFunctional(q.to_string()));
        }
    }
    let s = Scenario {
        name: format!("ctqw-{}", walkers.iter().map(|q| q.to_string()).collect::<Vec<_>>().join("-")),
        device_file: None,
        active_set: device.functional_qubits().collect(),
        initial_excitations: walkers.to_vec(),
        disorder: DisorderMap::default(),
        times_ns: evolution::time_grid(0.0, t_max_ns, step_ns)?,
        measurement: MeasurementPlan::default(),
        variant: VariantFlags::default(),
        method: default_method(),
    };
    s.validate()?;
    Ok(s)
}

/// Interferometer active set after applying the variant flags.
pub fn mz_active_set(layout: &MZLayout, variant: VariantFlags) -> BTreeSet<QubitId> {
    let mut set: BTreeSet<QubitId> = layout.sites().into_iter().collect();
    if variant.blocked {
        set.remove(&layout.right[0]);
        set.remove(&layout.right[MZ_PATH_LENGTH - 1]);
    }
    if variant.removed {
        set.remove(&layout.s);
        set.remove(&layout.bs1);
    }
    set
}

pub fn mz_scenario(
    device: &DeviceModel,
    layout: &MZLayout,
    sources: &[&str],
    protocol: DisorderStepProtocol,
    variant: VariantFlags,
    times_ns: Vec<f64>,
) -> Result<Scenario> {
    layout.validate(device)?;
    let active_set = mz_active_set(layout, variant);
    let initial = sources
        .iter()
        .map(|name| {
            let q = layout.site(name)?;
            if active_set.contains(&q) {
                Ok(q)
            } else {
                Err(Error::InvalidArgument(format!("source {name} is parked in this variant")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut disorder = protocol.offsets(layout);
    disorder.offsets.retain(|q, _| active_set.contains(q));
    let s = Scenario {
        name: format!("mz-{}", sources.join("-")),
        device_file: None,
        active_set,
        initial_excitations: initial,
        disorder,
        times_ns,
        measurement: MeasurementPlan::default(),
        variant,
        method: default_method(),
    };
    s.validate()?;
    Ok(s)
}

/// Population of `site` at each of the scenario's sample times.
pub fn site_population(scenario: &Scenario, device: &DeviceModel, site: QubitId) -> Result<Vec<f64>> {
    let (prepared, snaps) = scenario.evolve(device)?;
    let j = prepared.graph.require(&site.to_string())?;
    Ok(snaps.iter().map(|s| s.state.populations()[j]).collect())
}

/// D population at `readout_ns` over the (d_L, d_R) grid; rows follow `d_l`.
pub fn disorder_sweep(
    device: &DeviceModel,
    layout: &MZLayout,
    sources: &[&str],
    variant: VariantFlags,
    d_l: &[f64],
    d_r: &[f64],
    readout_ns: f64,
    method: &str,
) -> Result<DMatrix<f64>> {
    if d_l.is_empty() || d_r.is_empty() {
        return Err(Error::InvalidArgument("sweep ranges must be nonempty".into()));
    }
    let cells: Vec<(usize, usize)> = (0..d_l.len())
        .flat_map(|a| (0..d_r.len()).map(move |b| (a, b)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(a, b)| {
            let protocol = DisorderStepProtocol { d_l: d_l[a], d_r: d_r[b] };
            let mut s = mz_scenario(device, layout, sources, protocol, variant, vec![readout_ns])?;
            s.method = method.to_string();
            Ok(site_population(&s, device, layout.d)?[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DMatrix::from_row_slice(d_l.len(), d_r.len(), &values))
}

/// `n` evenly spaced values from 0 to `max`.
pub fn step_range(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Eight-site ring on the boundary of the top-left 3×3 block, with source and
/// destination on opposite corners. Returns the ring graph and (S, D) indices.
pub fn ring_circuit(device: &DeviceModel) -> Result<(LatticeGraph, usize, usize)> {
    let sites: Vec<QubitId> = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .filter(|&(r, c)| (r, c) != (1, 1))
        .map(|(r, c)| grid_qubit(r, c))
        .collect();
    let cfg = FrequencyConfig::aligned(sites, INTERACTION_FREQUENCY_GHZ, &DisorderMap::default());
    let graph = active_subgraph(device, &cfg)?;
    if graph.edges().len() != 8 {
        return Err(Error::Device {
            qubit: grid_qubit(0, 0).to_string(),
            reason: "ring circuit needs 8 working couplers".into(),
        });
    }
    let s = graph.require(&grid_qubit(0, 0).to_string())?;
    let d = graph.require(&grid_qubit(2, 2).to_string())?;
    Ok((graph, s, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingDecoherenceResult {
    pub times_ns: Vec<f64>,
    pub ideal: Vec<f64>,
    pub noisy: Vec<f64>,
    /// (time, population) of the largest D population in each run.
    pub ideal_peak: (f64, f64),
    pub noisy_peak: (f64, f64),
    /// noisy peak / ideal peak
    pub reduction: f64,
}

fn peak(times: &[f64], values: &[f64]) -> (f64, f64) {
    times
        .iter()
        .zip(values)
        .fold((0.0, f64::NEG_INFINITY), |best, (&t, &v)| if v > best.1 { (t, v) } else { best })
}

/// Single walker from S around the ring with uniform T1 and Tφ on every site,
/// compared against the same walk without decoherence.
pub fn ring_decoherence(device: &DeviceModel, t1_us: f64, t_phi_us: f64, times_ns: &[f64]) -> Result<RingDecoherenceResult> {
    let (graph, s, d) = ring_circuit(device)?;
    let n = graph.n_sites();
    let run = |t1: f64, tphi: f64| -> Result<Vec<f64>> {
        let model = LindbladModel::new(&graph, &vec![0.0; n], 1, &vec![t1; n], &vec![tphi; n])?;
        let rho0 = model.pure_state(&[s])?;
        Ok(evolve_lindblad(&model, &rho0, times_ns)?
            .iter()
            .map(|(_, rho)| model.populations(rho)[d])
            .collect())
    };
    let ideal = run(f64::INFINITY, f64::INFINITY)?;
    let noisy = run(t1_us, t_phi_us)?;
    let ideal_peak = peak(times_ns, &ideal);
    let noisy_peak = peak(times_ns, &noisy);
    if !(ideal_peak.1 > 0.0) {
        return Err(Error::InvalidArgument("the walker never reaches D in this window".into()));
    }
    Ok(RingDecoherenceResult {
        times_ns: times_ns.to_vec(),
        reduction: noisy_peak.1 / ideal_peak.1,
        ideal,
        noisy,
        ideal_peak,
        noisy_peak,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityStudyConfig {
    pub size: usize,
    pub seeds: usize,
    pub bound_mhz: f64,
    pub j_mhz: f64,
    pub t_max_ns: f64,
    pub step_ns: f64,
    /// Window starts d0 = k·√2 for k = 1..=max_window_index.
    pub max_window_index: usize,
    pub signal: String,
    pub master_seed: u64,
}

impl Default for VelocityStudyConfig {
    fn default() -> Self {
        VelocityStudyConfig {
            size: 15,
            seeds: 20,
            bound_mhz: 1.6,
            j_mhz: crate::device::DEFAULT_J_EFF_MHZ,
            t_max_ns: 800.0,
            step_ns: 5.0,
            max_window_index: 8,
            signal: "arrival".into(),
            master_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityStudyResult {
    pub d0: Vec<f64>,
    /// `per_seed[s][k]` is the velocity of seed s in window k.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fronts: Vec<Vec<FrontFit>>,
}

/// Diagonal fronts from a corner walker and windowed velocities for one
/// lattice with the given disorder (MHz per site, row-major).
pub fn diagonal_velocities(
    graph: &LatticeGraph,
    size: usize,
    disorder: &[f64],
    cfg: &VelocityStudyConfig,
) -> Result<(Vec<FrontFit>, Vec<VelocityFit>)> {
    let times = evolution::time_grid(0.0, cfg.t_max_ns, cfg.step_ns)?;
    let trace = evolution::single_walker_trace(graph, disorder, 0, &times)?;
    let last = cfg.max_window_index + 3;
    if last >= size {
        return Err(Error::InvalidArgument(format!(
            "a {size}×{size} lattice has no diagonal site {last} steps out"
        )));
    }
    let targets: Vec<(usize, f64)> = (1..=last).map(|k| (k * size + k, k as f64 * SQRT_2)).collect();
    let signal = analysis::front_signal(&cfg.signal)?;
    let fronts = analysis::extract_fronts(&trace, 0, &targets, &*signal, analysis::DEFAULT_NOISE_FLOOR)?;
    let v = (1..=cfg.max_window_index)
        .map(|k| analysis::instantaneous_velocity(&fronts, k as f64 * SQRT_2))
        .collect::<Result<_>>()?;
    Ok((fronts, v))
}

pub fn velocity_study(cfg: &VelocityStudyConfig) -> Result<VelocityStudyResult> {
    let graph = LatticeGraph::square(cfg.size, cfg.size, cfg.j_mhz)?;
    let n = graph.n_sites();
    let per: Vec<(Vec<FrontFit>, Vec<f64>)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::task_rng(cfg.master_seed, s as u64);
            let disorder = rng::uniform_offsets(&mut r, n, cfg.bound_mhz);
            let (fronts, v) = diagonal_velocities(&graph, cfg.size, &disorder, cfg)?;
            Ok((fronts, v.into_iter().map(|f| f.velocity).collect()))
        })
        .collect::<Result<_>>()?;
    let windows = cfg.max_window_index;
    let mut mean = vec![0.0; windows];
    let mut std = vec![0.0; windows];
    for k in 0..windows {
        let xs: Vec<f64> = per.iter().map(|(_, v)| v[k]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        mean[k] = m;
        std[k] = if xs.len() > 1 {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
    }
    Ok(VelocityStudyResult {
        d0: (1..=windows).map(|k| k as f64 * SQRT_2).collect(),
        per_seed: per.iter().map(|(_, v)| v.clone()).collect(),
        fronts: per.into_iter().map(|(f, _)| f).collect(),
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let d = default_device();
        let l = MZLayout::default();
        l.validate(&d).unwrap();
        let cfg = FrequencyConfig::aligned(l.sites(), INTERACTION_FREQUENCY_GHZ, &DisorderMap::default());
        let g = active_subgraph(&d, &cfg).unwrap();
        assert_eq!(g.n_sites(), 24);
        assert_eq!(g.edges().len(), 24);
        l.mirrored().validate(&d).unwrap();
    }

    #[test]
    fn protocol_ramp() {
        let w: Vec<f64> = (0..10).map(DisorderStepProtocol::weight).collect();
        assert_eq!(w, vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn variant_sizes_and_sources() {
        let d = default_device();
        let l = MZLayout::default();
        let p = DisorderStepProtocol::default();
        let t = vec![0.0];
        let open = mz_scenario(&d, &l, &["S"], p, VariantFlags::default(), t.clone()).unwrap();
        assert_eq!(open.active_set.len(), 24);
        let blocked = VariantFlags { blocked: true, removed: false };
        assert_eq!(mz_scenario(&d, &l, &["S"], p, blocked, t.clone()).unwrap().active_set.len(), 22);
        let removed = VariantFlags { blocked: false, removed: true };
        assert_eq!(mz_scenario(&d, &l, &["L1"], p, removed, t.clone()).unwrap().active_set.len(), 22);
        assert!(mz_scenario(&d, &l, &["S"], p, removed, t.clone()).is_err());
        assert!(mz_scenario(&d, &l, &["R1"], p, blocked, t.clone()).is_err());
        assert!(mz_scenario(&d, &l, &["Q7"], p, VariantFlags::default(), t).is_err());
    }

    #[test]
    fn layout_rejects_stray_edges() {
        let d = default_device();
        let mut l = MZLayout::default();
        l.s = grid_qubit(1, 0);
        l.validate(&d).unwrap();
        l.d = grid_qubit(6, 7);
        assert!(l.validate(&d).is_err());
    }

    #[test]
    fn ctqw_rejects_broken_walker() {
        let d = default_device();
        let q: QubitId = "U03Q2".parse().unwrap();
        assert!(matches!(ctqw_scenario(&d, &[q], 600.0, 10.0), Err(Error::NotFunctional(_))));
    }

    #[test]
    fn scenario_toml_round_trip() {
        let d = default_device();
        let l = MZLayout::default();
        let p = DisorderStepProtocol { d_l: 0.3, d_r: 0.7 };
        let s = mz_scenario(&d, &l, &["L1", "R1"], p, VariantFlags::default(), vec![0.0, 550.0]).unwrap();
        let text = s.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn ring_is_a_cycle() {
        let (g, s, d) = ring_circuit(&default_device()).unwrap();
        assert_eq!(g.n_sites(), 8);
        assert!((0..8).all(|i| g.neighbors(i).len() == 2));
        assert_ne!(s, d);
    }
}
