//! Time evolution: unitary propagation inside a sector and Lindblad dynamics
//! for small open systems.
//!
//! Unitary propagators sit behind the [`Propagator`] trait and are looked up
//! by name in a [`PropagatorRegistry`], so scenarios and the CLI choose the
//! method at runtime.

pub mod expm;
pub mod krylov;
pub mod lindblad;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianMatrix;
use crate::lattice::LatticeGraph;
use crate::sector::QuantumState;

pub use lindblad::{evolve_lindblad, LindbladModel};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Sector dimension below which `auto` uses the dense exponential.
pub const AUTO_DENSE_LIMIT: usize = 256;

/// Computes `exp(-i H t) psi0` at a list of times (µs, measured from `psi0`).
pub trait Propagator: Send + Sync {
    fn name(&self) -> &'static str;

    fn propagate(
        &self,
        h: &HamiltonianMatrix,
        psi0: &[Complex64],
        times_us: &[f64],
        tol: f64,
    ) -> Result<Vec<Vec<Complex64>>>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct KrylovPropagator {
    pub settings: krylov::KrylovSettings,
}

impl Propagator for KrylovPropagator {
    fn name(&self) -> &'static str {
        "krylov"
    }

    fn propagate(
        &self,
        h: &HamiltonianMatrix,
        psi0: &[Complex64],
        times_us: &[f64],
        tol: f64,
    ) -> Result<Vec<Vec<Complex64>>> {
        let mut psi = psi0.to_vec();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times_us.len());
        for &t in times_us {
            krylov::propagate(h, &mut psi, t - now, tol, &self.settings).map_err(|e| match e {
                Error::KrylovNonConvergence { estimate, .. } => Error::KrylovNonConvergence {
                    time_ns: t * 1e3,
                    estimate,
                },
                other => other,
            })?;
            now = t;
            out.push(psi.clone());
        }
        Ok(out)
    }
}

/// Padé exponential of the dense matrix, cached per distinct step length.
#[derive(Debug, Default, Clone, Copy)]
pub struct DenseExpmPropagator;

impl Propagator for DenseExpmPropagator {
    fn name(&self) -> &'static str {
        "dense_expm"
    }

    fn propagate(
        &self,
        h: &HamiltonianMatrix,
        psi0: &[Complex64],
        times_us: &[f64],
        _tol: f64,
    ) -> Result<Vec<Vec<Complex64>>> {
        let dense = h.to_dense();
        let mut cache: BTreeMap<u64, DMatrix<Complex64>> = BTreeMap::new();
        let mut psi = nalgebra::DVector::from_column_slice(psi0);
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times_us.len());
        for &t in times_us {
            let dt = t - now;
            if dt != 0.0 {
                // steps equal to within rounding share one exponential
                let key = ((dt * 1e9).round() as i64) as u64;
                if !cache.contains_key(&key) {
                    cache.insert(key, expm::unitary_step(&dense, dt)?);
                }
                psi = &cache[&key] * psi;
            }
            now = t;
            out.push(psi.iter().copied().collect());
        }
        Ok(out)
    }
}

/// Full eigendecomposition; every sample time is computed directly from `psi0`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SpectralPropagator;

impl Propagator for SpectralPropagator {
    fn name(&self) -> &'static str {
        "spectral"
    }

    fn propagate(
        &self,
        h: &HamiltonianMatrix,
        psi0: &[Complex64],
        times_us: &[f64],
        _tol: f64,
    ) -> Result<Vec<Vec<Complex64>>> {
        let spec = expm::Spectrum::of(h);
        let c = spec.project(psi0);
        Ok(times_us.iter().map(|&t| spec.evolve_projected(&c, t)).collect())
    }
}

/// Dense exponential for small sectors, Krylov otherwise.
#[derive(Debug, Default, Clone, Copy)]
pub struct AutoPropagator;

impl Propagator for AutoPropagator {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn propagate(
        &self,
        h: &HamiltonianMatrix,
        psi0: &[Complex64],
        times_us: &[f64],
        tol: f64,
    ) -> Result<Vec<Vec<Complex64>>> {
        if h.dim() < AUTO_DENSE_LIMIT {
            DenseExpmPropagator.propagate(h, psi0, times_us, tol)
        } else {
            KrylovPropagator::default().propagate(h, psi0, times_us, tol)
        }
    }
}

type PropagatorFactory = fn() -> Arc<dyn Propagator>;

/// Name → propagator lookup.
#[derive(Clone)]
pub struct PropagatorRegistry {
    entries: BTreeMap<String, PropagatorFactory>,
}

impl Default for PropagatorRegistry {
    fn default() -> Self {
        let mut r = PropagatorRegistry {
            entries: BTreeMap::new(),
        };
        r.register("krylov", || Arc::new(KrylovPropagator::default()));
        r.register("dense_expm", || Arc::new(DenseExpmPropagator));
        r.register("spectral", || Arc::new(SpectralPropagator));
        r.register("auto", || Arc::new(AutoPropagator));
        r
    }
}

impl PropagatorRegistry {
    pub fn register(&mut self, name: &str, factory: PropagatorFactory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Propagator>> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "propagator",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

pub fn propagator(name: &str) -> Result<Arc<dyn Propagator>> {
    PropagatorRegistry::default().get(name)
}

#[derive(Debug, Clone)]
pub struct EvolutionPlan {
    pub hamiltonian: Arc<HamiltonianMatrix>,
    pub times_ns: Vec<f64>,
    pub method: String,
    pub tolerance: f64,
}

impl EvolutionPlan {
    pub fn new(hamiltonian: Arc<HamiltonianMatrix>, times_ns: Vec<f64>) -> Self {
        EvolutionPlan {
            hamiltonian,
            times_ns,
            method: "auto".into(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_method(mut self, method: &str) -> Self {
        self.method = method.to_string();
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_times(&self.times_ns)?;
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        Ok(())
    }
}

pub fn validate_times(times_ns: &[f64]) -> Result<()> {
    let ok = times_ns.iter().all(|t| t.is_finite() && *t >= 0.0)
        && times_ns.windows(2).all(|w| w[1] > w[0]);
    if ok {
        Ok(())
    } else {
        Err(Error::BadTimeGrid)
    }
}

/// `start, start+step, …` up to and including `stop` (ns).
pub fn time_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start {
        return Err(Error::BadTimeGrid);
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time_ns: f64,
    pub state: QuantumState,
}

pub fn evolve_unitary(plan: &EvolutionPlan, psi0: &QuantumState) -> Result<Vec<Snapshot>> {
    plan.validate()?;
    evolve_with(
        &*propagator(&plan.method)?,
        plan,
        psi0,
    )
}

pub fn evolve_with(
    method: &dyn Propagator,
    plan: &EvolutionPlan,
    psi0: &QuantumState,
) -> Result<Vec<Snapshot>> {
    let h = &plan.hamiltonian;
    if psi0.amplitudes().len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: psi0.amplitudes().len(),
        });
    }
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "initial state has norm {norm}, expected 1"
        )));
    }
    let times_us: Vec<f64> = plan.times_ns.iter().map(|t| t * 1e-3).collect();
    let states = method.propagate(h, psi0.amplitudes(), &times_us, plan.tolerance)?;
    states
        .into_iter()
        .zip(&plan.times_ns)
        .map(|(amps, &t)| {
            Ok(Snapshot {
                time_ns: t,
                state: QuantumState::new(psi0.basis().clone(), amps)?,
            })
        })
        .collect()
}

/// Evolve by a single signed interval (ns); used for reversibility checks.
pub fn evolve_for(
    method: &str,
    h: &HamiltonianMatrix,
    psi: &QuantumState,
    dt_ns: f64,
    tol: f64,
) -> Result<QuantumState> {
    let mut out = propagator(method)?.propagate(h, psi.amplitudes(), &[dt_ns * 1e-3], tol)?;
    QuantumState::new(psi.basis().clone(), out.pop().expect("one time requested"))
}

/// Sites × times matrix of ⟨n_j⟩.
pub fn time_series_populations(snapshots: &[Snapshot]) -> Result<DMatrix<f64>> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::InvalidArgument("no snapshots".into()))?;
    let n = first.state.basis().n_sites();
    let mut m = DMatrix::zeros(n, snapshots.len());
    for (k, s) in snapshots.iter().enumerate() {
        for (j, p) in s.state.populations().into_iter().enumerate() {
            m[(j, k)] = p;
        }
    }
    Ok(m)
}

/// Site populations of one walker sampled over time (sites × times).
#[derive(Debug, Clone, PartialEq)]
pub struct SingleWalkerTrace {
    pub times_ns: Vec<f64>,
    pub populations: DMatrix<f64>,
}

/// Exact single-walker evolution on graphs of any size. In the one-excitation
/// sector the Hamiltonian is the weighted adjacency matrix plus the disorder
/// diagonal, so no occupation words are needed.
pub fn single_walker_trace(
    graph: &LatticeGraph,
    disorder_mhz: &[f64],
    source: usize,
    times_ns: &[f64],
) -> Result<SingleWalkerTrace> {
    validate_times(times_ns)?;
    let n = graph.n_sites();
    if disorder_mhz.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: disorder_mhz.len() });
    }
    if source >= n {
        return Err(Error::DimensionMismatch { expected: n, got: source });
    }
    let tau = std::f64::consts::TAU;
    let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, disorder_mhz.iter().map(|d| tau * d)));
    for e in graph.edges() {
        h[(e.a, e.b)] = tau * e.j_mhz;
        h[(e.b, e.a)] = tau * e.j_mhz;
    }
    let eig = nalgebra::SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let weights: Vec<f64> = (0..n).map(|k| v[(source, k)]).collect();
    let mut populations = DMatrix::zeros(n, times_ns.len());
    let mut phase = vec![Complex64::new(0.0, 0.0); n];
    for (t_idx, &t) in times_ns.iter().enumerate() {
        for k in 0..n {
            phase[k] = Complex64::from_polar(weights[k], -eig.eigenvalues[k] * t * 1e-3);
        }
        for j in 0..n {
            let mut a = Complex64::new(0.0, 0.0);
            for k in 0..n {
                a += phase[k] * v[(j, k)];
            }
            populations[(j, t_idx)] = a.norm_sqr();
        }
    }
    Ok(SingleWalkerTrace { times_ns: times_ns.to_vec(), populations })
}
