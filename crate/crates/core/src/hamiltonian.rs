//! Sparse hopping Hamiltonian restricted to one excitation sector.
//!
//! Works in the frame rotating at the common interaction frequency, so the
//! diagonal only carries disorder offsets. Entries are angular frequencies in
//! rad/µs; the upper triangle is stored in compressed rows and mirrored when
//! applied, which keeps the operator exactly Hermitian.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::device::DisorderMap;
use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::sector::{QuantumState, SectorBasis};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    basis: Arc<SectorBasis>,
    diagonal: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
    disorder_hash: u64,
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl HamiltonianMatrix {
    /// `disorder_mhz[j]` is site j's offset from the interaction frequency.
    pub fn build(
        graph: &LatticeGraph,
        basis: Arc<SectorBasis>,
        disorder_mhz: &[f64],
    ) -> Result<Self> {
        let n = graph.n_sites();
        if basis.n_sites() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: basis.n_sites(),
            });
        }
        if disorder_mhz.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: disorder_mhz.len(),
            });
        }
        let dim = basis.dim();
        let mut diagonal = Vec::with_capacity(dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for &word in basis.states() {
            let mut d = 0.0;
            let mut w = word;
            while w != 0 {
                d += disorder_mhz[w.trailing_zeros() as usize];
                w &= w - 1;
            }
            diagonal.push(TAU * d);

            row.clear();
            for e in graph.edges() {
                let mask = (1u64 << e.a) | (1u64 << e.b);
                let occ = word & mask;
                if occ == 0 || occ == mask {
                    continue;
                }
                let target = word ^ mask;
                if target <= word {
                    continue;
                }
                let j = basis.index_of(target).ok_or(Error::SectorLeak(target))?;
                row.push((j, TAU * e.j_mhz));
            }
            row.sort_by_key(|(j, _)| *j);
            for &(j, v) in &row {
                cols.push(j);
                values.push(Complex64::new(v, 0.0));
            }
            row_ptr.push(cols.len());
        }
        Ok(HamiltonianMatrix {
            basis,
            diagonal,
            row_ptr,
            cols,
            values,
            disorder_hash: fnv1a(disorder_mhz),
        })
    }

    pub fn from_disorder_map(
        graph: &LatticeGraph,
        basis: Arc<SectorBasis>,
        disorder: &DisorderMap,
    ) -> Result<Self> {
        let v = graph.disorder_vector(disorder);
        Self::build(graph, basis, &v)
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    /// Stored off-diagonal entries (upper triangle only).
    pub fn nnz_upper(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of the full matrix.
    pub fn nnz(&self) -> usize {
        2 * self.values.len() + self.diagonal.iter().filter(|d| **d != 0.0).count()
    }

    pub fn disorder_hash(&self) -> u64 {
        self.disorder_hash
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let mut sums: Vec<f64> = self.diagonal.iter().map(|d| d.abs()).collect();
        for i in 0..self.dim() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k].norm();
                sums[i] += a;
                sums[self.cols[k]] += a;
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// `y = H x`.
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        for (yi, (d, xi)) in y.iter_mut().zip(self.diagonal.iter().zip(x)) {
            *yi = xi * *d;
        }
        for i in 0..self.dim() {
            let xi = x[i];
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let h = self.values[k];
                acc += h * x[j];
                y[j] += h.conj() * xi;
            }
            y[i] += acc;
        }
    }

    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut y = vec![ZERO; self.dim()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    pub fn apply_state(&self, v: &QuantumState) -> Result<Vec<Complex64>> {
        self.apply(v.amplitudes())
    }

    /// ⟨v|H|v⟩; real up to rounding.
    pub fn expectation(&self, v: &[Complex64]) -> Result<Complex64> {
        let hv = self.apply(v)?;
        Ok(v.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            m[(i, i)] = Complex64::new(self.diagonal[i], 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                m[(i, j)] = self.values[k];
                m[(j, i)] = self.values[k].conj();
            }
        }
        m
    }

    /// Dense real symmetric form; `None` if any entry is complex.
    pub fn to_dense_real(&self) -> Option<DMatrix<f64>> {
        if !self.is_real() {
            return None;
        }
        Some(self.to_dense().map(|c| c.re))
    }

    /// Upper triangle and diagonal as `row col re im` lines (0-based).
    pub fn to_triplets(&self) -> String {
        let mut out = format!("# dim {} nnz_upper {}\n", self.dim(), self.nnz_upper());
        for i in 0..self.dim() {
            if self.diagonal[i] != 0.0 {
                let _ = writeln!(out, "{i} {i} {:.17e} 0", self.diagonal[i]);
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[k];
                let _ = writeln!(out, "{i} {} {:.17e} {:.17e}", self.cols[k], v.re, v.im);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> LatticeGraph {
        LatticeGraph::square(1, n, 2.01).unwrap()
    }

    #[test]
    fn resonant_pair() {
        let g = chain(2);
        let b = Arc::new(SectorBasis::new(2, 1).unwrap());
        let h = HamiltonianMatrix::build(&g, b, &[0.0, 0.0]).unwrap();
        let m = h.to_dense();
        let j = TAU * 2.01;
        assert_eq!(m[(0, 0)].re, 0.0);
        assert_eq!(m[(0, 1)].re, j);
        assert_eq!(m[(1, 0)].re, j);
    }

    #[test]
    fn hard_core_exclusion() {
        let g = chain(3);
        let b = Arc::new(SectorBasis::new(3, 2).unwrap());
        let h = HamiltonianMatrix::build(&g, b.clone(), &[0.0; 3]).unwrap();
        let m = h.to_dense();
        // sites 0,1 occupied → only 0,2 reachable
        let from = b.index_of(0b011).unwrap();
        let to = b.index_of(0b101).unwrap();
        let blocked = b.index_of(0b110).unwrap();
        assert!(m[(from, to)].re != 0.0);
        assert_eq!(m[(from, blocked)].re, 0.0);
    }

    #[test]
    fn diagonal_sums_occupied_offsets() {
        let g = chain(3);
        let b = Arc::new(SectorBasis::new(3, 2).unwrap());
        let h = HamiltonianMatrix::build(&g, b.clone(), &[0.5, -0.25, 1.0]).unwrap();
        let i = b.index_of(0b101).unwrap();
        assert!((h.diagonal()[i] - TAU * 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let g = LatticeGraph::square(2, 3, 2.01).unwrap();
        let b = Arc::new(SectorBasis::new(6, 2).unwrap());
        let h = HamiltonianMatrix::build(&g, b, &[0.1; 6]).unwrap();
        let y = h.apply(&vec![ZERO; h.dim()]).unwrap();
        assert!(y.iter().all(|v| *v == ZERO));
        assert!(h.apply(&[ZERO]).is_err());
    }

    #[test]
    fn size_mismatch_rejected() {
        let g = chain(3);
        let b = Arc::new(SectorBasis::new(4, 1).unwrap());
        assert!(HamiltonianMatrix::build(&g, b, &[0.0; 3]).is_err());
    }
}
