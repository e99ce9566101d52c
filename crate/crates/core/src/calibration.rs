//! Device calibration against a twin with hidden disorder: swap-data
//! generation, disorder-map fitting, the alignment loop, two-stage
//! interferometer optimization and idle-frequency assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{
    active_subgraph, DeviceModel, DisorderMap, FrequencyConfig, QubitId, INTERACTION_FREQUENCY_GHZ,
};
use crate::error::{Error, Result};
use crate::evolution::expm::Spectrum;
use crate::evolution::time_grid;
use crate::hamiltonian::HamiltonianMatrix;
use crate::lattice::LatticeGraph;
use crate::measurement::{sample_distribution_stream, ReadoutModel};
use crate::rng;
use crate::scenarios::{MZLayout, SINGLE_WALKER_READOUT_NS, TWO_WALKER_READOUT_NS};
use crate::sector::SectorBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Edge length of the initial simplex, MHz.
    pub init_scale: f64,
    /// Converged when the simplex cost spread falls below this.
    pub cost_tolerance: f64,
    /// ... and every vertex lies within this distance of the best one.
    pub x_tolerance: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 60_000,
            init_scale: 0.5,
            cost_tolerance: 1e-12,
            x_tolerance: 1e-6,
            restarts: 5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_scale > 0.0 && self.cost_tolerance > 0.0 && self.x_tolerance > 0.0) {
            return Err(Error::InvalidArgument("optimizer scales and tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_cost: f64,
    pub step: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub history: Vec<IterationRecord>,
}

/// Downhill simplex with reflection 1, expansion 2, contraction ½, shrink ½.
#[derive(Debug, Clone, Default)]
pub struct NelderMead {
    pub config: OptimizerConfig,
}

impl NelderMead {
    pub fn new(config: OptimizerConfig) -> Self {
        NelderMead { config }
    }

    pub fn minimize<F>(&self, f: F, x0: &[f64]) -> Result<OptimizeResult>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.config.validate()?;
        let n = x0.len();
        if n == 0 {
            return Err(Error::InvalidArgument("nothing to optimize".into()));
        }
        let cfg = &self.config;
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut evaluations = 0usize;
        let mut iterations = 0usize;
        let mut history = Vec::new();
        let mut best_x = x0.to_vec();
        let mut best_f = eval(x0);
        evaluations += 1;
        let mut converged_once = false;

        for round in 0..=cfg.restarts {
            let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best_x.clone(), best_f)];
            let vertices: Vec<Vec<f64>> = (0..n)
                .map(|k| {
                    let mut v = best_x.clone();
                    v[k] += cfg.init_scale;
                    v
                })
                .collect();
            let costs: Vec<f64> = vertices.par_iter().map(|v| eval(v)).collect();
            evaluations += n;
            simplex.extend(vertices.into_iter().zip(costs));
            let round_start = best_f;
            let mut converged = false;

            while iterations < cfg.max_iterations {
                simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
                let f_best = simplex[0].1;
                let spread = simplex[n].1 - f_best;
                let extent = simplex[1..]
                    .iter()
                    .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                    .fold(0.0, f64::max);
                if spread.abs() <= cfg.cost_tolerance && extent <= cfg.x_tolerance {
                    converged = true;
                    break;
                }
                iterations += 1;
                let mut centroid = vec![0.0; n];
                for (v, _) in &simplex[..n] {
                    for (c, x) in centroid.iter_mut().zip(v) {
                        *c += x / n as f64;
                    }
                }
                let worst = simplex[n].clone();
                let along = |t: f64| -> Vec<f64> {
                    centroid
                        .iter()
                        .zip(&worst.0)
                        .map(|(c, w)| c + t * (c - w))
                        .collect()
                };
                let xr = along(1.0);
                let fr = eval(&xr);
                evaluations += 1;
                let step;
                if fr < simplex[0].1 {
                    let xe = along(2.0);
                    let fe = eval(&xe);
                    evaluations += 1;
                    simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                    step = if fe < fr { "expand" } else { "reflect" };
                } else if fr < simplex[n - 1].1 {
                    simplex[n] = (xr, fr);
                    step = "reflect";
                } else {
                    let outside = fr < worst.1;
                    let xc = if outside { along(0.5) } else { along(-0.5) };
                    let fc = eval(&xc);
                    evaluations += 1;
                    let accept = if outside { fc <= fr } else { fc < worst.1 };
                    if accept {
                        simplex[n] = (xc, fc);
                        step = "contract";
                    } else {
                        let x_best = simplex[0].0.clone();
                        let shrunk: Vec<Vec<f64>> = simplex[1..]
                            .iter()
                            .map(|(v, _)| {
                                x_best.iter().zip(v).map(|(b, x)| b + 0.5 * (x - b)).collect()
                            })
                            .collect();
                        let costs: Vec<f64> = shrunk.par_iter().map(|v| eval(v)).collect();
                        evaluations += n;
                        for (slot, pair) in simplex[1..].iter_mut().zip(shrunk.into_iter().zip(costs)) {
                            *slot = pair;
                        }
                        step = "shrink";
                    }
                }
                let current = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
                history.push(IterationRecord {
                    iteration: iterations,
                    best_cost: current,
                    step: step.to_string(),
                });
            }
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[0].1 <= best_f {
                best_x = simplex[0].0.clone();
                best_f = simplex[0].1;
            }
            if !converged {
                if converged_once {
                    break;
                }
                return Err(Error::OptimizerExhausted {
                    iterations,
                    best_cost: best_f,
                    best: best_x,
                });
            }
            converged_once = true;
            if round > 0 && round_start - best_f <= cfg.cost_tolerance {
                break;
            }
        }
        Ok(OptimizeResult {
            x: best_x,
            cost: best_f,
            iterations,
            evaluations,
            history,
        })
    }
}

/// A simulated device whose true detunings are hidden from the calibration.
#[derive(Debug, Clone)]
pub struct DeviceTwin {
    pub device: DeviceModel,
    pub hidden: DisorderMap,
    /// Qubits taking part in the calibration.
    pub region: BTreeSet<QubitId>,
}

impl DeviceTwin {
    pub fn new(device: DeviceModel, hidden: DisorderMap, region: impl IntoIterator<Item = QubitId>) -> Result<Self> {
        let region: BTreeSet<QubitId> = region.into_iter().collect();
        if region.is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        for q in &region {
            if !device.is_functional(*q) {
                return Err(Error::NotFunctional(q.to_string()));
            }
        }
        Ok(DeviceTwin { device, hidden, region })
    }

    /// Rows `r0..r0+rows`, columns `c0..c0+cols` of the array.
    pub fn block(device: DeviceModel, hidden: DisorderMap, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        let region = (r0..r0 + rows)
            .flat_map(|r| (c0..c0 + cols).map(move |c| (r, c)))
            .map(|(r, c)| QubitId::from_grid(r, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(device, hidden, region)
    }

    /// Hidden offset plus the applied correction.
    pub fn true_offsets(&self, correction: &DisorderMap) -> DisorderMap {
        let mut m = DisorderMap::default();
        for q in &self.region {
            m.offsets.insert(*q, self.hidden.get(*q) + correction.get(*q));
        }
        m
    }

    /// Center plus its working-coupler neighbors inside the region.
    pub fn star(&self, center: QubitId) -> Result<(Vec<QubitId>, LatticeGraph)> {
        if !self.region.contains(&center) {
            return Err(Error::UnknownQubit(center.to_string()));
        }
        let mut sites = vec![center];
        let mut nbrs: Vec<QubitId> = self
            .device
            .lattice_neighbors(center)
            .into_iter()
            .filter(|q| self.region.contains(q) && self.device.edge_functional(center, *q))
            .collect();
        nbrs.sort();
        sites.extend(nbrs);
        let cfg = FrequencyConfig::aligned(sites.iter().copied(), INTERACTION_FREQUENCY_GHZ, &DisorderMap::default());
        let full = active_subgraph(&self.device, &cfg)?;
        // keep only center–neighbor couplers
        let c = full.require(&center.to_string())?;
        let edges: Vec<_> = full.edges().iter().filter(|e| e.a == c || e.b == c).copied().collect();
        let graph = LatticeGraph::new(full.sites().to_vec(), edges)?;
        let order = sites;
        Ok((order, graph))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapDataset {
    pub center: QubitId,
    pub neighbors: Vec<QubitId>,
    pub times_ns: Vec<f64>,
    /// `populations[q][t]`, q = 0 the center then the neighbors.
    pub populations: Vec<Vec<f64>>,
}

impl SwapDataset {
    pub fn qubits(&self) -> Vec<QubitId> {
        let mut v = vec![self.center];
        v.extend(&self.neighbors);
        v
    }
}

/// Populations of `qubits` (in that order) after exciting `source`, one row per qubit.
fn simulate_populations(
    graph: &LatticeGraph,
    offsets: &DisorderMap,
    source: usize,
    rows: &[usize],
    times_ns: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let basis = Arc::new(SectorBasis::new(graph.n_sites(), 1)?);
    let h = HamiltonianMatrix::from_disorder_map(graph, basis, offsets)?;
    let spec = Spectrum::of(&h);
    let mut e0 = vec![num_complex::Complex64::new(0.0, 0.0); h.dim()];
    e0[source] = num_complex::Complex64::new(1.0, 0.0);
    let c = spec.project(&e0);
    let mut out = vec![Vec::with_capacity(times_ns.len()); rows.len()];
    for &t in times_ns {
        let psi = spec.evolve_projected(&c, t * 1e-3);
        for (row, &r) in out.iter_mut().zip(rows) {
            row.push(psi[r].norm_sqr());
        }
    }
    Ok(out)
}

fn star_rows(graph: &LatticeGraph, order: &[QubitId]) -> Result<Vec<usize>> {
    order.iter().map(|q| graph.require(&q.to_string())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    pub shots: u64,
    pub seed: u64,
}

pub fn swap_times() -> Vec<f64> {
    time_grid(0.0, 1000.0, 10.0).expect("valid grid")
}

/// Excite `center`, align it with its neighbors and record every population.
pub fn generate_swap_data(
    twin: &DeviceTwin,
    correction: &DisorderMap,
    center: QubitId,
    times_ns: &[f64],
    noise: Option<ShotNoise>,
) -> Result<SwapDataset> {
    let (order, graph) = twin.star(center)?;
    let rows = star_rows(&graph, &order)?;
    let offsets = twin.true_offsets(correction);
    let mut populations = simulate_populations(&graph, &offsets, rows[0], &rows, times_ns)?;
    if let Some(noise) = noise {
        let n = graph.n_sites();
        let words: Vec<u64> = (0..n).map(|k| 1u64 << k).collect();
        let readout = ReadoutModel::perfect(n);
        // distinct stream per (center, time) so datasets are independent
        let center_tag = order[0].to_string().bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
        for t in 0..times_ns.len() {
            let mut probs = vec![0.0; n];
            for (row, &r) in populations.iter().zip(&rows) {
                probs[r] = row[t];
            }
            let counts = sample_distribution_stream(
                &words,
                &probs,
                &readout,
                noise.shots,
                noise.seed,
                center_tag.wrapping_mul(1 << 16).wrapping_add(t as u64),
            )?;
            let measured = counts.populations();
            for (row, &r) in populations.iter_mut().zip(&rows) {
                row[t] = measured[r];
            }
        }
    }
    Ok(SwapDataset {
        center,
        neighbors: order[1..].to_vec(),
        times_ns: times_ns.to_vec(),
        populations,
    })
}

pub fn generate_all_swap_data(
    twin: &DeviceTwin,
    correction: &DisorderMap,
    times_ns: &[f64],
    noise: Option<ShotNoise>,
) -> Result<Vec<SwapDataset>> {
    twin.region
        .iter()
        .map(|&c| generate_swap_data(twin, correction, c, times_ns, noise))
        .collect()
}

struct PreparedStar {
    graph: LatticeGraph,
    rows: Vec<usize>,
    params: Vec<usize>,
}

/// Summed squared distance between datasets and simulations with the given offsets.
pub struct SwapCost {
    labels: Vec<QubitId>,
    stars: Vec<PreparedStar>,
    datasets: Vec<SwapDataset>,
}

impl SwapCost {
    pub fn new(twin: &DeviceTwin, datasets: &[SwapDataset]) -> Result<Self> {
        let mut labels: BTreeSet<QubitId> = BTreeSet::new();
        for d in datasets {
            labels.extend(d.qubits());
        }
        let labels: Vec<QubitId> = labels.into_iter().collect();
        let position: BTreeMap<QubitId, usize> = labels.iter().enumerate().map(|(i, q)| (*q, i)).collect();
        let stars = datasets
            .iter()
            .map(|d| {
                let order = d.qubits();
                let (_, graph) = twin.star(d.center)?;
                if graph.n_sites() != order.len() {
                    return Err(Error::DimensionMismatch { expected: graph.n_sites(), got: order.len() });
                }
                let rows = star_rows(&graph, &order)?;
                let params = graph
                    .sites()
                    .iter()
                    .map(|s| position[&s.label.parse::<QubitId>().expect("device label")])
                    .collect();
                Ok(PreparedStar { graph, rows, params })
            })
            .collect::<Result<_>>()?;
        Ok(SwapCost { labels, stars, datasets: datasets.to_vec() })
    }

    pub fn labels(&self) -> &[QubitId] {
        &self.labels
    }

    pub fn map_of(&self, x: &[f64]) -> DisorderMap {
        DisorderMap {
            offsets: self.labels.iter().copied().zip(x.iter().copied()).collect(),
        }
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (star, data) in self.stars.iter().zip(&self.datasets) {
            let disorder: Vec<f64> = star.params.iter().map(|&p| x[p]).collect();
            let Ok(basis) = SectorBasis::new(star.graph.n_sites(), 1) else {
                return f64::INFINITY;
            };
            let Ok(h) = HamiltonianMatrix::build(&star.graph, Arc::new(basis), &disorder) else {
                return f64::INFINITY;
            };
            let spec = Spectrum::of(&h);
            let mut e0 = vec![num_complex::Complex64::new(0.0, 0.0); h.dim()];
            e0[star.rows[0]] = num_complex::Complex64::new(1.0, 0.0);
            let c = spec.project(&e0);
            for (k, &t) in data.times_ns.iter().enumerate() {
                let psi = spec.evolve_projected(&c, t * 1e-3);
                for (q, &r) in star.rows.iter().enumerate() {
                    let d = psi[r].norm_sqr() - data.populations[q][k];
                    total += d * d;
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderFit {
    /// Fitted offsets with their mean removed (a common shift is unobservable).
    pub map: DisorderMap,
    pub cost: f64,
    /// Cost of the zero-disorder model against the same data.
    pub overall_distance: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Nelder–Mead search for the offsets that best reproduce the swap data.
pub fn fit_disorder_map(twin: &DeviceTwin, datasets: &[SwapDataset], config: &OptimizerConfig) -> Result<DisorderFit> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("no swap datasets".into()));
    }
    for d in datasets {
        for row in &d.populations {
            if row.len() != d.times_ns.len() {
                return Err(Error::DimensionMismatch { expected: d.times_ns.len(), got: row.len() });
            }
        }
    }
    let cost = SwapCost::new(twin, datasets)?;
    for q in &twin.region {
        if !cost.labels().contains(q) {
            return Err(Error::InvalidArgument(format!("{q} appears in no swap dataset")));
        }
    }
    let zero = vec![0.0; cost.labels().len()];
    let overall_distance = cost.cost(&zero);
    let res = NelderMead::new(config.clone()).minimize(|x| cost.cost(x), &zero)?;
    let mean = res.x.iter().sum::<f64>() / res.x.len() as f64;
    let centered: Vec<f64> = res.x.iter().map(|v| v - mean).collect();
    Ok(DisorderFit {
        map: cost.map_of(&centered),
        cost: res.cost,
        overall_distance,
        iterations: res.iterations,
        evaluations: res.evaluations,
    })
}

/// Cost of the zero-disorder model against a fresh measurement of the twin.
pub fn overall_distance(twin: &DeviceTwin, correction: &DisorderMap, times_ns: &[f64], noise: Option<ShotNoise>) -> Result<f64> {
    let data = generate_all_swap_data(twin, correction, times_ns, noise)?;
    let cost = SwapCost::new(twin, &data)?;
    Ok(cost.cost(&vec![0.0; cost.labels().len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub stage: String,
    pub round: usize,
    pub cost: f64,
    pub parameters: Vec<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub correction: DisorderMap,
    pub config: FrequencyConfig,
    /// Overall distance before any correction, then after each accepted round.
    pub distances: Vec<f64>,
    /// Largest |residual − mean residual| over the region, MHz.
    pub residual_max_mhz: f64,
    pub log: Vec<CalibrationStep>,
}

fn centered_max(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).abs()).fold(0.0, f64::max)
}

/// Fit, try the correction with both signs, keep whichever lowers the overall
/// distance, repeat until no sign helps or `rounds` is reached.
pub fn alignment_loop(
    twin: &DeviceTwin,
    rounds: usize,
    config: &OptimizerConfig,
    noise: Option<ShotNoise>,
) -> Result<AlignmentReport> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("at least one alignment round is required".into()));
    }
    let times = swap_times();
    let mut correction = DisorderMap::default();
    let round_noise = |round: usize| noise.map(|n| ShotNoise { shots: n.shots, seed: n.seed.wrapping_add(round as u64 * 7919) });
    let mut current = overall_distance(twin, &correction, &times, round_noise(0))?;
    let mut distances = vec![current];
    let mut log = Vec::new();
    for round in 1..=rounds {
        let data = generate_all_swap_data(twin, &correction, &times, round_noise(round))?;
        let fit = fit_disorder_map(twin, &data, config)?;
        log.push(CalibrationStep {
            stage: "fit".into(),
            round,
            cost: fit.cost,
            parameters: fit.map.offsets.values().copied().collect(),
            accepted: true,
        });
        let mut best: Option<(f64, DisorderMap)> = None;
        for sign in [-1.0, 1.0] {
            let mut trial = correction.clone();
            for (q, v) in &fit.map.offsets {
                *trial.offsets.entry(*q).or_insert(0.0) += sign * v;
            }
            let d = overall_distance(twin, &trial, &times, round_noise(round))?;
            let accepted = d < current && best.as_ref().is_none_or(|(b, _)| d < *b);
            log.push(CalibrationStep {
                stage: if sign < 0.0 { "apply_minus".into() } else { "apply_plus".into() },
                round,
                cost: d,
                parameters: trial.offsets.values().copied().collect(),
                accepted,
            });
            if accepted {
                best = Some((d, trial));
            }
        }
        match best {
            Some((d, trial)) => {
                current = d;
                correction = trial;
                distances.push(d);
            }
            None => break,
        }
    }
    let residual = twin.true_offsets(&correction);
    let residual_max_mhz = centered_max(residual.offsets.values().copied());
    let config = FrequencyConfig::aligned(twin.region.iter().copied(), INTERACTION_FREQUENCY_GHZ, &correction);
    Ok(AlignmentReport {
        correction,
        config,
        distances,
        residual_max_mhz,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferometerConfig {
    pub stage1: OptimizerConfig,
    pub stage2: OptimizerConfig,
    pub stage1_time_ns: f64,
    pub stage2_time_ns: f64,
    /// Stage 1 fails if either arm end carries less than this.
    pub arm_floor: f64,
    pub target: f64,
}

impl Default for InterferometerConfig {
    fn default() -> Self {
        InterferometerConfig {
            stage1: OptimizerConfig {
                init_scale: 0.5,
                restarts: 2,
                cost_tolerance: 1e-10,
                x_tolerance: 1e-5,
                max_iterations: 40_000,
            },
            stage2: OptimizerConfig {
                init_scale: 0.3,
                restarts: 2,
                cost_tolerance: 1e-10,
                x_tolerance: 1e-5,
                max_iterations: 40_000,
            },
            stage1_time_ns: TWO_WALKER_READOUT_NS,
            stage2_time_ns: SINGLE_WALKER_READOUT_NS,
            arm_floor: 0.01,
            target: 0.43,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferometerReport {
    pub correction: DisorderMap,
    pub config: FrequencyConfig,
    pub d_before: f64,
    pub d_after_stage1: f64,
    pub d_after: f64,
    pub arm_ends_after_stage1: (f64, f64),
    pub met_target: bool,
    pub stage1: OptimizeResult,
    pub stage2: OptimizeResult,
}

struct PathModel {
    graph: LatticeGraph,
    labels: Vec<QubitId>,
    hidden: Vec<f64>,
    source: usize,
}

impl PathModel {
    fn new(twin: &DeviceTwin, sites: &[QubitId], source: QubitId) -> Result<Self> {
        let cfg = FrequencyConfig::aligned(sites.iter().copied(), INTERACTION_FREQUENCY_GHZ, &DisorderMap::default());
        let graph = active_subgraph(&twin.device, &cfg)?;
        let labels: Vec<QubitId> = graph.sites().iter().map(|s| s.label.parse()).collect::<Result<_>>()?;
        let hidden = labels.iter().map(|q| twin.hidden.get(*q)).collect();
        let source = graph.require(&source.to_string())?;
        Ok(PathModel { graph, labels, hidden, source })
    }

    fn index(&self, q: QubitId) -> Result<usize> {
        self.graph.require(&q.to_string())
    }

    fn populations(&self, correction: &[f64], t_ns: f64) -> Result<Vec<f64>> {
        let disorder: Vec<f64> = self.hidden.iter().zip(correction).map(|(h, c)| h + c).collect();
        let basis = Arc::new(SectorBasis::new(self.graph.n_sites(), 1)?);
        let h = HamiltonianMatrix::build(&self.graph, basis, &disorder)?;
        let spec = Spectrum::of(&h);
        let mut e0 = vec![num_complex::Complex64::new(0.0, 0.0); h.dim()];
        e0[self.source] = num_complex::Complex64::new(1.0, 0.0);
        let psi = spec.evolve_projected(&spec.project(&e0), t_ns * 1e-3);
        Ok(psi.iter().map(|a| a.norm_sqr()).collect())
    }
}

/// D population at `t_ns` for the twin with `correction` applied, walker from S.
pub fn interferometer_output(twin: &DeviceTwin, layout: &MZLayout, correction: &DisorderMap, t_ns: f64) -> Result<f64> {
    let model = PathModel::new(twin, &layout.sites(), layout.s)?;
    let c: Vec<f64> = model.labels.iter().map(|q| correction.get(*q)).collect();
    Ok(model.populations(&c, t_ns)?[model.index(layout.d)?])
}

/// Stage 1 balances the two arms (maximize P(L10)·P(R10) with BS2 and D
/// parked); stage 2 maximizes the D population at the readout time.
pub fn optimize_interferometer(
    twin: &DeviceTwin,
    layout: &MZLayout,
    config: &InterferometerConfig,
) -> Result<InterferometerReport> {
    layout.validate(&twin.device)?;
    let l10 = layout.left[layout.left.len() - 1];
    let r10 = layout.right[layout.right.len() - 1];
    let d_before = interferometer_output(twin, layout, &DisorderMap::default(), config.stage2_time_ns)?;

    let arms: Vec<QubitId> = layout
        .sites()
        .into_iter()
        .filter(|q| *q != layout.bs2 && *q != layout.d)
        .collect();
    let stage1_model = PathModel::new(twin, &arms, layout.s)?;
    let (il, ir) = (stage1_model.index(l10)?, stage1_model.index(r10)?);
    let t1 = config.stage1_time_ns;
    let stage1 = NelderMead::new(config.stage1.clone()).minimize(
        |x| match stage1_model.populations(x, t1) {
            Ok(p) => -p[il] * p[ir],
            Err(_) => f64::INFINITY,
        },
        &vec![0.0; stage1_model.labels.len()],
    )?;
    let p1 = stage1_model.populations(&stage1.x, t1)?;
    let arm_ends = (p1[il], p1[ir]);
    if arm_ends.0 < config.arm_floor || arm_ends.1 < config.arm_floor {
        return Err(Error::PathBlocked(format!(
            "P(L10) = {:.4}, P(R10) = {:.4} at {t1} ns, floor {}",
            arm_ends.0, arm_ends.1, config.arm_floor
        )));
    }
    let mut correction = DisorderMap::default();
    for (q, v) in stage1_model.labels.iter().zip(&stage1.x) {
        correction.offsets.insert(*q, *v);
    }
    let d_after_stage1 = interferometer_output(twin, layout, &correction, config.stage2_time_ns)?;

    let full = PathModel::new(twin, &layout.sites(), layout.s)?;
    let id = full.index(layout.d)?;
    let t2 = config.stage2_time_ns;
    let x0: Vec<f64> = full.labels.iter().map(|q| correction.get(*q)).collect();
    let stage2 = NelderMead::new(config.stage2.clone()).minimize(
        |x| match full.populations(x, t2) {
            Ok(p) => -p[id],
            Err(_) => f64::INFINITY,
        },
        &x0,
    )?;
    let correction = DisorderMap {
        offsets: full.labels.iter().copied().zip(stage2.x.iter().copied()).collect(),
    };
    let d_after = -stage2.cost;
    let config_out = FrequencyConfig::aligned(layout.sites(), INTERACTION_FREQUENCY_GHZ, &correction);
    Ok(InterferometerReport {
        correction,
        config: config_out,
        d_before,
        d_after_stage1,
        d_after,
        arm_ends_after_stage1: arm_ends,
        met_target: d_after >= config.target,
        stage1,
        stage2,
    })
}

/// Dispersive ZZ shift −2g²(η1+η2)/((Δ−η1)(Δ+η2)), all in MHz.
pub fn zz_coupling(g: f64, eta1: f64, eta2: f64, delta: f64) -> Result<f64> {
    let a = delta - eta1;
    let b = delta + eta2;
    let eps = 1e-12 * (1.0 + delta.abs() + eta1.abs() + eta2.abs());
    if a.abs() <= eps {
        return Err(Error::Resonance(format!("Δ = η1 = {eta1} MHz (|11⟩ ↔ |20⟩)")));
    }
    if b.abs() <= eps {
        return Err(Error::Resonance(format!("Δ = −η2 = {} MHz (|11⟩ ↔ |02⟩)", -eta2)));
    }
    Ok(-2.0 * g * g * (eta1 + eta2) / (a * b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleRules {
    pub min_neighbor_gap_mhz: f64,
    pub two_photon_guard_mhz: f64,
    pub min_f12_gap_mhz: f64,
    pub min_frequency_ghz: f64,
}

impl Default for IdleRules {
    fn default() -> Self {
        IdleRules {
            min_neighbor_gap_mhz: 50.0,
            two_photon_guard_mhz: 1.0,
            min_f12_gap_mhz: 45.0,
            min_frequency_ghz: 4.9,
        }
    }
}

/// One admissible idle frequency and its T1 (the selection weight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleOption {
    pub frequency_ghz: f64,
    pub t1_us: f64,
}

fn anharmonicity_ghz(device: &DeviceModel, q: QubitId) -> Result<f64> {
    Ok(device.params(q)?.anharmonicity_mhz * 1e-3)
}

/// First rule broken by placing `a` at `fa` next to `b` at `fb`.
fn pair_conflict(
    rules: &IdleRules,
    a: QubitId,
    fa: f64,
    eta_a: f64,
    b: QubitId,
    fb: f64,
    eta_b: f64,
) -> Option<String> {
    let gap = (fa - fb).abs() * 1e3;
    if gap < rules.min_neighbor_gap_mhz {
        return Some(format!("neighbor gap {gap:.1} MHz < {} MHz between {a} and {b}", rules.min_neighbor_gap_mhz));
    }
    for (x, fx, y, fy, eta_y) in [(a, fa, b, fb, eta_b), (b, fb, a, fa, eta_a)] {
        let half_f02 = fy + eta_y / 2.0;
        if (fx - half_f02).abs() * 1e3 < rules.two_photon_guard_mhz {
            return Some(format!("{x} sits on the two-photon line f02/2 of {y}"));
        }
        let f12 = fy + eta_y;
        let d = (fx - f12).abs() * 1e3;
        if d < rules.min_f12_gap_mhz {
            return Some(format!("{x} is {d:.1} MHz from f12 of {y} (< {} MHz)", rules.min_f12_gap_mhz));
        }
    }
    None
}

fn coupled_pairs(device: &DeviceModel, qubits: &BTreeSet<QubitId>) -> Vec<(QubitId, QubitId)> {
    device
        .edges
        .values()
        .filter(|e| e.functional && qubits.contains(&e.a) && qubits.contains(&e.b))
        .map(|e| (e.a, e.b))
        .collect()
}

/// Randomized greedy assignment, T1-weighted, starting from the qubit with the
/// fewest options; restarts on dead ends.
pub fn assign_idle_frequencies(
    device: &DeviceModel,
    tables: &BTreeMap<QubitId, Vec<IdleOption>>,
    rules: &IdleRules,
    seed: u64,
    max_restarts: usize,
) -> Result<BTreeMap<QubitId, f64>> {
    for (q, t) in tables {
        if t.is_empty() {
            return Err(Error::InvalidArgument(format!("{q} has an empty frequency table")));
        }
        device.params(*q)?;
    }
    let qubits: BTreeSet<QubitId> = tables.keys().copied().collect();
    let mut neighbors: BTreeMap<QubitId, Vec<QubitId>> = BTreeMap::new();
    for (a, b) in coupled_pairs(device, &qubits) {
        neighbors.entry(a).or_default().push(b);
        neighbors.entry(b).or_default().push(a);
    }
    let mut order: Vec<QubitId> = qubits.iter().copied().collect();
    order.sort_by_key(|q| (tables[q].len(), *q));
    let mut last_conflict = String::from("no attempts made");
    for attempt in 0..=max_restarts {
        let mut rng = rng::task_rng(seed, attempt as u64);
        let mut chosen: BTreeMap<QubitId, f64> = BTreeMap::new();
        let mut dead_end = false;
        for &q in &order {
            let eta_q = anharmonicity_ghz(device, q)?;
            let mut feasible: Vec<IdleOption> = Vec::new();
            for opt in &tables[&q] {
                if opt.frequency_ghz < rules.min_frequency_ghz {
                    last_conflict = format!("{q}: {} GHz below {} GHz", opt.frequency_ghz, rules.min_frequency_ghz);
                    continue;
                }
                let mut ok = true;
                for n in neighbors.get(&q).into_iter().flatten() {
                    if let Some(&fn_) = chosen.get(n) {
                        if let Some(c) = pair_conflict(rules, q, opt.frequency_ghz, eta_q, *n, fn_, anharmonicity_ghz(device, *n)?) {
                            last_conflict = c;
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    feasible.push(*opt);
                }
            }
            if feasible.is_empty() {
                dead_end = true;
                break;
            }
            let total: f64 = feasible.iter().map(|o| o.t1_us.max(0.0)).sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut k = feasible.len() - 1;
                for (i, o) in feasible.iter().enumerate() {
                    u -= o.t1_us.max(0.0);
                    if u < 0.0 {
                        k = i;
                        break;
                    }
                }
                k
            } else {
                rng.random_range(0..feasible.len())
            };
            chosen.insert(q, feasible[pick].frequency_ghz);
        }
        if !dead_end {
            return Ok(chosen);
        }
    }
    Err(Error::Infeasible {
        restarts: max_restarts,
        constraint: last_conflict,
    })
}

/// Every rule violated by `assignment`, checked pair by pair.
pub fn idle_violations(device: &DeviceModel, assignment: &BTreeMap<QubitId, f64>, rules: &IdleRules) -> Vec<String> {
    let mut out = Vec::new();
    for (q, f) in assignment {
        if *f < rules.min_frequency_ghz {
            out.push(format!("{q} below the minimum frequency"));
        }
    }
    for e in device.edges.values().filter(|e| e.functional) {
        let (Some(&fa), Some(&fb)) = (assignment.get(&e.a), assignment.get(&e.b)) else {
            continue;
        };
        let (Ok(pa), Ok(pb)) = (device.params(e.a), device.params(e.b)) else {
            out.push(format!("{}-{} missing parameters", e.a, e.b));
            continue;
        };
        let (ea, eb) = (pa.anharmonicity_mhz, pb.anharmonicity_mhz);
        let (fa, fb) = (fa * 1e3, fb * 1e3);
        if (fa - fb).abs() < rules.min_neighbor_gap_mhz {
            out.push(format!("{}-{} gap", e.a, e.b));
        }
        if (fa - (fb + eb / 2.0)).abs() < rules.two_photon_guard_mhz || (fb - (fa + ea / 2.0)).abs() < rules.two_photon_guard_mhz {
            out.push(format!("{}-{} two-photon", e.a, e.b));
        }
        if (fa - (fb + eb)).abs() < rules.min_f12_gap_mhz || (fb - (fa + ea)).abs() < rules.min_f12_gap_mhz {
            out.push(format!("{}-{} f12", e.a, e.b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::default_device;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = NelderMead::default().minimize(f, &[-1.2, 1.0]).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1].best_cost <= w[0].best_cost));
    }

    #[test]
    fn nelder_mead_budget() {
        let cfg = OptimizerConfig { max_iterations: 3, ..Default::default() };
        let f = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum();
        let err = NelderMead::new(cfg).minimize(f, &[0.0, 0.0, 0.0]).unwrap_err();
        match err {
            Error::OptimizerExhausted { best, .. } => assert_eq!(best.len(), 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn zz_values() {
        assert_eq!(zz_coupling(0.0, -250.0, -250.0, 10.0).unwrap(), 0.0);
        let v = zz_coupling(2.0, -250.0, -250.0, 0.0).unwrap();
        assert!((v + 0.064).abs() < 1e-12);
        assert!(matches!(zz_coupling(2.0, -250.0, -250.0, -250.0), Err(Error::Resonance(_))));
        assert!(matches!(zz_coupling(2.0, -250.0, -240.0, 240.0), Err(Error::Resonance(_))));
        assert_eq!(zz_coupling(3.0, -240.0, -250.0, 80.0).unwrap(), zz_coupling(-3.0, -240.0, -250.0, 80.0).unwrap());
    }

    #[test]
    fn isolated_and_conflicting_pairs() {
        let d = default_device();
        let a: QubitId = "U00Q0".parse().unwrap();
        let b: QubitId = "U00Q1".parse().unwrap();
        let far: QubitId = "U33Q2".parse().unwrap();
        let t = |f: f64| vec![IdleOption { frequency_ghz: f, t1_us: 10.0 }];
        let rules = IdleRules::default();
        let tables: BTreeMap<_, _> = [(a, t(5.0)), (far, t(5.0))].into_iter().collect();
        assert_eq!(assign_idle_frequencies(&d, &tables, &rules, 1, 3).unwrap().len(), 2);
        let tables: BTreeMap<_, _> = [(a, t(5.0)), (b, t(5.03))].into_iter().collect();
        match assign_idle_frequencies(&d, &tables, &rules, 1, 3) {
            Err(Error::Infeasible { constraint, .. }) => assert!(constraint.contains("gap"), "{constraint}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn star_has_only_center_couplers() {
        let twin = DeviceTwin::block(default_device(), DisorderMap::default(), 0, 0, 3, 3).unwrap();
        let c = QubitId::from_grid(1, 1).unwrap();
        let (order, g) = twin.star(c).unwrap();
        assert_eq!(order.len(), 5);
        assert_eq!(g.edges().len(), 4);
        let corner = QubitId::from_grid(0, 0).unwrap();
        assert_eq!(twin.star(corner).unwrap().0.len(), 3);
    }
}
