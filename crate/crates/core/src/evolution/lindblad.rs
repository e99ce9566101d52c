//! Master-equation dynamics for small lattices with relaxation and dephasing.
//!
//! The density matrix lives on the union of sectors with at most
//! `max_excitations` excitations, which relaxation never leaves. Jump
//! operators are σ⁻ at rate 1/T1 and σz/√2 at rate 1/Tφ, so a single-qubit
//! coherence decays as exp(-t/Tφ).

use std::collections::HashMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::evolution::validate_times;
use crate::lattice::LatticeGraph;

pub const MAX_LINDBLAD_SITES: usize = 12;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub type DensityMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone)]
pub struct LindbladModel {
    n_sites: usize,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
    hamiltonian: DMatrix<Complex64>,
    /// Relaxation rates 1/T1 per site, 1/µs.
    gamma1: Vec<f64>,
    /// Dephasing rates 1/Tφ per site, 1/µs.
    gamma_phi: Vec<f64>,
    /// `raise[j][a]`: index of state a with site j filled, if a has it empty.
    raise: Vec<Vec<Option<usize>>>,
    pub rtol: f64,
    pub atol: f64,
}

fn rate(t_us: f64) -> Result<f64> {
    if t_us.is_infinite() && t_us > 0.0 {
        Ok(0.0)
    } else if t_us > 0.0 {
        Ok(1.0 / t_us)
    } else {
        Err(Error::InvalidArgument(format!(
            "coherence time {t_us} µs must be positive"
        )))
    }
}

impl LindbladModel {
    /// `t1_us`/`t_phi_us` per site; `f64::INFINITY` disables a channel.
    pub fn new(
        graph: &LatticeGraph,
        disorder_mhz: &[f64],
        max_excitations: usize,
        t1_us: &[f64],
        t_phi_us: &[f64],
    ) -> Result<Self> {
        let n = graph.n_sites();
        if n > MAX_LINDBLAD_SITES {
            return Err(Error::InvalidArgument(format!(
                "{n} sites exceed the density-matrix limit of {MAX_LINDBLAD_SITES}"
            )));
        }
        for len in [disorder_mhz.len(), t1_us.len(), t_phi_us.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let states: Vec<u64> = (0u64..1 << n)
            .filter(|w| w.count_ones() as usize <= max_excitations)
            .collect();
        let index: HashMap<u64, usize> = states.iter().enumerate().map(|(i, &w)| (w, i)).collect();
        let dim = states.len();
        let mut hamiltonian = DMatrix::from_element(dim, dim, ZERO);
        for (i, &w) in states.iter().enumerate() {
            let d: f64 = (0..n).filter(|j| w >> j & 1 == 1).map(|j| disorder_mhz[j]).sum();
            hamiltonian[(i, i)] = Complex64::new(TAU * d, 0.0);
            for e in graph.edges() {
                let mask = (1u64 << e.a) | (1u64 << e.b);
                let occ = w & mask;
                if occ != 0 && occ != mask {
                    let k = index[&(w ^ mask)];
                    hamiltonian[(i, k)] = Complex64::new(TAU * e.j_mhz, 0.0);
                }
            }
        }
        let raise = (0..n)
            .map(|j| {
                states
                    .iter()
                    .map(|&w| {
                        if w >> j & 1 == 0 {
                            index.get(&(w | 1 << j)).copied()
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(LindbladModel {
            n_sites: n,
            states,
            index,
            hamiltonian,
            gamma1: t1_us.iter().map(|t| rate(*t)).collect::<Result<_>>()?,
            gamma_phi: t_phi_us.iter().map(|t| rate(*t)).collect::<Result<_>>()?,
            raise,
            rtol: 1e-8,
            atol: 1e-12,
        })
    }

    pub fn uniform(
        graph: &LatticeGraph,
        disorder_mhz: &[f64],
        max_excitations: usize,
        t1_us: f64,
        t_phi_us: f64,
    ) -> Result<Self> {
        let n = graph.n_sites();
        Self::new(graph, disorder_mhz, max_excitations, &vec![t1_us; n], &vec![t_phi_us; n])
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.hamiltonian
    }

    /// |ψ⟩⟨ψ| for the occupation word with `excited` filled.
    pub fn pure_state(&self, excited: &[usize]) -> Result<DensityMatrix> {
        let word = excited.iter().fold(0u64, |w, &s| w | 1 << s);
        let amps = [(word, Complex64::new(1.0, 0.0))];
        self.density_from_amplitudes(&amps)
    }

    pub fn density_from_amplitudes(&self, amps: &[(u64, Complex64)]) -> Result<DensityMatrix> {
        let mut psi = vec![ZERO; self.dim()];
        for (w, a) in amps {
            let i = self.index.get(w).ok_or(Error::SectorLeak(*w))?;
            psi[*i] += a;
        }
        let v = nalgebra::DVector::from_vec(psi);
        Ok(&v * v.adjoint())
    }

    pub fn populations(&self, rho: &DensityMatrix) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites];
        for (i, &w) in self.states.iter().enumerate() {
            let p = rho[(i, i)].re;
            for (j, o) in out.iter_mut().enumerate() {
                if w >> j & 1 == 1 {
                    *o += p;
                }
            }
        }
        out
    }

    fn rhs(&self, rho: &DensityMatrix, out: &mut DensityMatrix) {
        let minus_i = Complex64::new(0.0, -1.0);
        let comm = &self.hamiltonian * rho - rho * &self.hamiltonian;
        out.copy_from(&(comm * minus_i));
        let dim = self.dim();
        for j in 0..self.n_sites {
            let g1 = self.gamma1[j];
            let gp = self.gamma_phi[j];
            if g1 == 0.0 && gp == 0.0 {
                continue;
            }
            let bit = |a: usize| (self.states[a] >> j & 1) as f64;
            for b in 0..dim {
                let nb = bit(b);
                for a in 0..dim {
                    let na = bit(a);
                    let mut d = ZERO;
                    if g1 != 0.0 {
                        d -= rho[(a, b)] * (0.5 * g1 * (na + nb));
                        if let (Some(ra), Some(rb)) = (self.raise[j][a], self.raise[j][b]) {
                            d += rho[(ra, rb)] * g1;
                        }
                    }
                    if gp != 0.0 && na != nb {
                        d -= rho[(a, b)] * gp;
                    }
                    out[(a, b)] += d;
                }
            }
        }
    }
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the master equation; steps end exactly on each sample time (ns).
pub fn evolve_lindblad(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    times_ns: &[f64],
) -> Result<Vec<(f64, DensityMatrix)>> {
    validate_times(times_ns)?;
    let dim = model.dim();
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: rho0.nrows(),
        });
    }
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut h: f64 = 1e-3;
    let mut k: Vec<DensityMatrix> = vec![DMatrix::from_element(dim, dim, ZERO); 7];
    let mut stage = DMatrix::from_element(dim, dim, ZERO);
    let mut out = Vec::with_capacity(times_ns.len());
    for &target_ns in times_ns {
        let target = target_ns * 1e-3;
        while target - t > 1e-15 * target.max(1.0) {
            let step = h.min(target - t);
            if step < 1e-14 * target.max(1e-3) {
                return Err(Error::StepUnderflow { time_ns: t * 1e3 });
            }
            model.rhs(&rho, &mut k[0]);
            for s in 1..7 {
                stage.copy_from(&rho);
                for (m, a) in A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        stage += &k[m] * Complex64::new(a * step, 0.0);
                    }
                }
                model.rhs(&stage, &mut k[s]);
            }
            let mut y5 = rho.clone();
            let mut err = DMatrix::from_element(dim, dim, ZERO);
            for s in 0..7 {
                if B5[s] != 0.0 {
                    y5 += &k[s] * Complex64::new(B5[s] * step, 0.0);
                }
                let db = B5[s] - B4[s];
                if db != 0.0 {
                    err += &k[s] * Complex64::new(db * step, 0.0);
                }
            }
            let mut ratio: f64 = 0.0;
            for ((e, y0), y1) in err.iter().zip(rho.iter()).zip(y5.iter()) {
                let scale = model.atol + model.rtol * y0.norm().max(y1.norm());
                ratio = ratio.max(e.norm() / scale);
            }
            if ratio <= 1.0 {
                t += step;
                rho = y5;
                // keep exact hermiticity against rounding drift
                rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            if ratio <= 1.0 && step < h {
                // shortened to hit a sample time; do not shrink the proposal
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
        }
        t = target;
        out.push((target_ns, rho.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_qubit_relaxation() {
        let g = LatticeGraph::square(1, 1, 2.01).unwrap();
        let m = LindbladModel::uniform(&g, &[0.0], 1, 12.3, f64::INFINITY).unwrap();
        let rho0 = m.pure_state(&[0]).unwrap();
        let out = evolve_lindblad(&m, &rho0, &[0.0, 12300.0]).unwrap();
        let p = m.populations(&out[1].1)[0];
        assert!((p - (-1f64).exp()).abs() < 1e-6, "{p}");
    }

    #[test]
    fn single_qubit_dephasing() {
        let g = LatticeGraph::square(1, 1, 2.01).unwrap();
        let m = LindbladModel::uniform(&g, &[0.0], 1, f64::INFINITY, 1.6).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rho0 = m
            .density_from_amplitudes(&[(0, Complex64::new(h, 0.0)), (1, Complex64::new(h, 0.0))])
            .unwrap();
        let out = evolve_lindblad(&m, &rho0, &[800.0, 1600.0]).unwrap();
        for (t, rho) in out {
            let expect = 0.5 * (-t * 1e-3 / 1.6f64).exp();
            assert!((rho[(0, 1)].norm() - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = LatticeGraph::square(1, 13, 2.01).unwrap();
        assert!(LindbladModel::uniform(&g, &[0.0; 13], 1, 10.0, 10.0).is_err());
        let g = LatticeGraph::square(1, 2, 2.01).unwrap();
        assert!(LindbladModel::uniform(&g, &[0.0; 2], 1, -1.0, 10.0).is_err());
        let m = LindbladModel::uniform(&g, &[0.0; 2], 1, 10.0, 10.0).unwrap();
        let rho = m.pure_state(&[0]).unwrap();
        assert!(evolve_lindblad(&m, &rho, &[10.0, 5.0]).is_err());
    }
}
