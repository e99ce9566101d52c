//! Fixed-excitation-number basis and state vectors.
//!
//! States are occupation words: bit `j` set means site `j` holds one hard-core
//! boson. The basis lists every word of a given Hamming weight in ascending
//! integer order, which makes state indices reproducible across runs.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sector the enumerator will materialize.
pub const MAX_SECTOR_DIMENSION: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct SectorBasis {
    n_sites: usize,
    n_excitations: usize,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
}

pub fn binomial(n: usize, k: usize) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Next larger word with the same popcount (Gosper's hack).
fn next_same_weight(x: u64) -> Option<u64> {
    let c = x & x.wrapping_neg();
    let r = x.checked_add(c)?;
    Some((((r ^ x) >> 2) / c) | r)
}

impl SectorBasis {
    pub fn new(n_sites: usize, n_excitations: usize) -> Result<Self> {
        let invalid = |reason: &str| Error::Sector {
            n_sites,
            n_excitations,
            reason: reason.to_string(),
        };
        if n_sites > 64 {
            return Err(invalid("at most 64 sites fit an occupation word"));
        }
        if n_excitations > n_sites {
            return Err(invalid("more excitations than sites"));
        }
        let dim = binomial(n_sites, n_excitations)
            .filter(|d| *d <= MAX_SECTOR_DIMENSION)
            .ok_or_else(|| invalid("dimension exceeds the enumeration limit"))?;

        let mut states = Vec::with_capacity(dim);
        if n_excitations == 0 {
            states.push(0);
        } else {
            let limit = if n_sites == 64 { u64::MAX } else { (1u64 << n_sites) - 1 };
            let mut x = if n_excitations == 64 { u64::MAX } else { (1u64 << n_excitations) - 1 };
            loop {
                states.push(x);
                match next_same_weight(x) {
                    Some(nx) if nx <= limit && nx > x => x = nx,
                    _ => break,
                }
            }
        }
        debug_assert_eq!(states.len(), dim);
        let index = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(SectorBasis {
            n_sites,
            n_excitations,
            states,
            index,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_excitations(&self) -> usize {
        self.n_excitations
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, i: usize) -> u64 {
        self.states[i]
    }

    pub fn index_of(&self, word: u64) -> Option<usize> {
        self.index.get(&word).copied()
    }

    pub fn word_for(&self, excited: &[usize]) -> Result<u64> {
        let mut word = 0u64;
        for &s in excited {
            if s >= self.n_sites {
                return Err(Error::DimensionMismatch {
                    expected: self.n_sites,
                    got: s,
                });
            }
            word |= 1 << s;
        }
        if word.count_ones() as usize != self.n_excitations {
            return Err(Error::ExcitationCount {
                expected: self.n_excitations,
                got: word.count_ones() as usize,
            });
        }
        Ok(word)
    }
}

#[derive(Debug, Clone)]
pub struct QuantumState {
    basis: Arc<SectorBasis>,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    pub fn new(basis: Arc<SectorBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: amplitudes.len(),
            });
        }
        Ok(QuantumState { basis, amplitudes })
    }

    /// Unit vector on the word with exactly `excited` occupied.
    pub fn basis_state(basis: Arc<SectorBasis>, excited: &[usize]) -> Result<Self> {
        let word = basis.word_for(excited)?;
        let i = basis.index_of(word).expect("word of correct weight is in the basis");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[i] = Complex64::new(1.0, 0.0);
        Ok(QuantumState { basis, amplitudes })
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for a in &mut self.amplitudes {
                *a /= n;
            }
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// ⟨n_j⟩ for every site.
    pub fn populations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.n_sites()];
        for (&word, a) in self.basis.states().iter().zip(&self.amplitudes) {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let mut w = word;
            while w != 0 {
                out[w.trailing_zeros() as usize] += p;
                w &= w - 1;
            }
        }
        out
    }

    /// ⟨n_i n_j⟩.
    pub fn pair_occupation(&self, i: usize, j: usize) -> f64 {
        let mask = (1u64 << i) | (1u64 << j);
        self.basis
            .states()
            .iter()
            .zip(&self.amplitudes)
            .filter(|(w, _)| *w & mask == mask)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    pub fn inner(&self, other: &QuantumState) -> Result<Complex64> {
        if other.amplitudes.len() != self.amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.amplitudes.len(),
                got: other.amplitudes.len(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            n_sites: self.basis.n_sites(),
            n_excitations: self.basis.n_excitations(),
            amplitudes: self.amplitudes.iter().map(|a| [a.re, a.im]).collect(),
        }
    }

    pub fn from_snapshot(snapshot: &StateSnapshot) -> Result<Self> {
        let basis = Arc::new(SectorBasis::new(snapshot.n_sites, snapshot.n_excitations)?);
        let amps = snapshot
            .amplitudes
            .iter()
            .map(|[re, im]| Complex64::new(*re, *im))
            .collect();
        QuantumState::new(basis, amps)
    }
}

/// Serializable form of a sector state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub n_sites: usize,
    pub n_excitations: usize,
    pub amplitudes: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_sector_dimensions() {
        assert_eq!(SectorBasis::new(62, 1).unwrap().dim(), 62);
        assert_eq!(SectorBasis::new(62, 2).unwrap().dim(), 1891);
        let b = SectorBasis::new(3, 0).unwrap();
        assert_eq!(b.states(), &[0]);
        assert!(SectorBasis::new(3, 4).is_err());
        assert!(SectorBasis::new(65, 1).is_err());
        assert!(SectorBasis::new(64, 32).is_err());
    }

    #[test]
    fn full_word_edge_cases() {
        let b = SectorBasis::new(64, 1).unwrap();
        assert_eq!(b.dim(), 64);
        assert_eq!(*b.states().last().unwrap(), 1 << 63);
        let b = SectorBasis::new(64, 64).unwrap();
        assert_eq!(b.states(), &[u64::MAX]);
        let b = SectorBasis::new(64, 63).unwrap();
        assert_eq!(b.dim(), 64);
    }

    #[test]
    fn ordering_is_ascending() {
        let b = SectorBasis::new(2, 1).unwrap();
        assert_eq!(b.states(), &[0b01, 0b10]);
        let b = SectorBasis::new(4, 2).unwrap();
        assert!(b.states().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn basis_state_and_populations() {
        let b = Arc::new(SectorBasis::new(62, 2).unwrap());
        let s = QuantumState::basis_state(b.clone(), &[0, 61]).unwrap();
        assert_eq!(s.amplitudes().iter().filter(|a| a.norm() > 0.0).count(), 1);
        let p = s.populations();
        assert_eq!((p[0], p[61]), (1.0, 1.0));
        assert_eq!(p.iter().sum::<f64>(), 2.0);

        let b1 = Arc::new(SectorBasis::new(2, 1).unwrap());
        assert!(QuantumState::basis_state(b1.clone(), &[]).is_err());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = QuantumState::new(b1, vec![Complex64::new(h, 0.0), Complex64::new(0.0, h)]).unwrap();
        let p = s.populations();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let b = Arc::new(SectorBasis::new(5, 2).unwrap());
        let s = QuantumState::basis_state(b, &[1, 3]).unwrap();
        let json = serde_json::to_string(&s.snapshot()).unwrap();
        let back: StateSnapshot = serde_json::from_str(&json).unwrap();
        let t = QuantumState::from_snapshot(&back).unwrap();
        assert_eq!(t.amplitudes(), s.amplitudes());
    }
}
