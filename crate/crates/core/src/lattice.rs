//! Undirected coupling graphs that the Hamiltonian builder consumes.
//!
//! A [`LatticeGraph`] is the dynamical view of a device: an ordered list of
//! sites (the order fixes bit positions in the sector basis) and the
//! couplings between them. Graphs come from [`crate::device::active_subgraph`]
//! or from the synthetic builders here.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::device::DisorderMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub label: String,
    pub row: i32,
    pub col: i32,
}

/// One undirected coupling; `a < b` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    /// J/2π in MHz.
    pub j_mhz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGraph {
    sites: Vec<Site>,
    edges: Vec<Coupling>,
    index: HashMap<String, usize>,
}

impl LatticeGraph {
    pub fn new(sites: Vec<Site>, edges: impl IntoIterator<Item = Coupling>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if index.insert(s.label.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate site {}", s.label)));
            }
        }
        let mut normalized: Vec<Coupling> = Vec::new();
        for e in edges {
            let (a, b) = if e.a < e.b { (e.a, e.b) } else { (e.b, e.a) };
            if a == b || b >= sites.len() {
                return Err(Error::InvalidArgument(format!(
                    "bad coupling ({}, {})",
                    e.a, e.b
                )));
            }
            if normalized.iter().any(|c| c.a == a && c.b == b) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate coupling {}-{}",
                    sites[a].label, sites[b].label
                )));
            }
            normalized.push(Coupling { a, b, j_mhz: e.j_mhz });
        }
        normalized.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));
        Ok(LatticeGraph {
            sites,
            edges: normalized,
            index,
        })
    }

    /// Open-boundary `rows × cols` square lattice with uniform coupling.
    pub fn square(rows: usize, cols: usize, j_mhz: f64) -> Result<Self> {
        let mut sites = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                sites.push(Site {
                    label: format!("R{r}C{c}"),
                    row: r as i32,
                    col: c as i32,
                });
            }
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push(Coupling { a: i, b: i + 1, j_mhz });
                }
                if r + 1 < rows {
                    edges.push(Coupling { a: i, b: i + cols, j_mhz });
                }
            }
        }
        LatticeGraph::new(sites, edges)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn edges(&self) -> &[Coupling] {
        &self.edges
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::UnknownQubit(label.to_string()))
    }

    pub fn coupling(&self, a: usize, b: usize) -> Option<&Coupling> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().find(|c| c.a == a && c.b == b)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|c| {
                if c.a == i {
                    Some(c.b)
                } else if c.b == i {
                    Some(c.a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Subgraph induced by `keep` (indices into this graph), in ascending site order.
    pub fn induced(&self, keep: &[usize]) -> Result<LatticeGraph> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut remap = vec![usize::MAX; self.sites.len()];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.sites.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.sites.len(),
                    got: old,
                });
            }
            remap[old] = new;
        }
        let sites = keep.iter().map(|&i| self.sites[i].clone()).collect();
        let edges = self.edges.iter().filter_map(|c| {
            let (a, b) = (remap[c.a], remap[c.b]);
            (a != usize::MAX && b != usize::MAX).then_some(Coupling {
                a,
                b,
                j_mhz: c.j_mhz,
            })
        });
        LatticeGraph::new(sites, edges)
    }

    /// Subgraph induced by the named sites.
    pub fn induced_by_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<LatticeGraph> {
        let keep = labels
            .iter()
            .map(|l| self.require(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        self.induced(&keep)
    }

    /// Per-site detunings in MHz; sites absent from the map get 0.
    pub fn disorder_vector(&self, map: &DisorderMap) -> Vec<f64> {
        self.sites
            .iter()
            .map(|s| {
                s.label
                    .parse()
                    .ok()
                    .and_then(|q| map.offsets.get(&q).copied())
                    .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let dr = (self.sites[i].row - self.sites[j].row) as f64;
        let dc = (self.sites[i].col - self.sites[j].col) as f64;
        dr.hypot(dc)
    }

    pub fn with_uniform_coupling(&self, j_mhz: f64) -> LatticeGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.j_mhz = j_mhz;
        }
        g
    }

    pub fn labels(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.label.clone()).collect()
    }
}
