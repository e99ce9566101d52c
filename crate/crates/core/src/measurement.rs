//! Simulated single-shot readout, post-selection and distribution overlap.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::rng;
use crate::sector::QuantumState;

/// h/k_B in mK per GHz.
const H_OVER_KB_MK_PER_GHZ: f64 = 47.992_430_73;

/// Independent per-qubit confusion matrices plus thermal excitation at preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// P(read 0 | true 0) per site.
    pub fidelity_0: Vec<f64>,
    /// P(read 1 | true 1) per site.
    pub fidelity_1: Vec<f64>,
    /// Probability a site is spuriously excited before the walk starts.
    pub thermal_excitation: Vec<f64>,
}

impl ReadoutModel {
    pub fn perfect(n_sites: usize) -> Self {
        Self::uniform(n_sites, 1.0, 1.0)
    }

    pub fn uniform(n_sites: usize, f0: f64, f1: f64) -> Self {
        ReadoutModel {
            fidelity_0: vec![f0; n_sites],
            fidelity_1: vec![f1; n_sites],
            thermal_excitation: vec![0.0; n_sites],
        }
    }

    /// Per-site fidelities from the device; thermal excitation from each
    /// qubit's effective temperature when `thermal` is set.
    pub fn from_device(device: &DeviceModel, graph: &LatticeGraph, thermal: bool) -> Result<Self> {
        let mut m = Self::perfect(graph.n_sites());
        for (k, site) in graph.sites().iter().enumerate() {
            let p = device.params(site.label.parse()?)?;
            m.fidelity_0[k] = p.readout_fidelity_0;
            m.fidelity_1[k] = p.readout_fidelity_1;
            if thermal {
                m.thermal_excitation[k] =
                    thermal_population(p.effective_temperature_mk, p.idle_frequency_ghz)?;
            }
        }
        Ok(m)
    }

    pub fn n_sites(&self) -> usize {
        self.fidelity_0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        for len in [self.fidelity_1.len(), self.thermal_excitation.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        let all = self
            .fidelity_0
            .iter()
            .chain(&self.fidelity_1)
            .chain(&self.thermal_excitation);
        for p in all {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Measured bitstrings; character k of a key is site k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub counts: BTreeMap<String, u64>,
    pub n_shots: u64,
    pub n_sites: usize,
}

pub fn word_to_bits(word: u64, n_sites: usize) -> String {
    (0..n_sites)
        .map(|k| if word >> k & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub fn bits_to_word(bits: &str) -> Result<u64> {
    if bits.len() > 64 {
        return Err(Error::InvalidArgument(format!("bitstring `{bits}` longer than 64")));
    }
    bits.chars().enumerate().try_fold(0u64, |w, (k, c)| match c {
        '0' => Ok(w),
        '1' => Ok(w | 1 << k),
        _ => Err(Error::InvalidArgument(format!("bad bitstring `{bits}`"))),
    })
}

impl ShotCounts {
    pub fn from_counts(n_sites: usize, counts: BTreeMap<String, u64>) -> Result<Self> {
        for k in counts.keys() {
            if k.len() != n_sites {
                return Err(Error::DimensionMismatch { expected: n_sites, got: k.len() });
            }
            bits_to_word(k)?;
        }
        let n_shots = counts.values().sum();
        Ok(ShotCounts { counts, n_shots, n_sites })
    }

    /// Fraction of shots with site j read as 1.
    pub fn populations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites];
        if self.n_shots == 0 {
            return out;
        }
        for (bits, &c) in &self.counts {
            for (j, ch) in bits.chars().enumerate() {
                if ch == '1' {
                    out[j] += c as f64;
                }
            }
        }
        for p in &mut out {
            *p /= self.n_shots as f64;
        }
        out
    }

    pub fn frequency(&self, bits: &str) -> f64 {
        if self.n_shots == 0 {
            return 0.0;
        }
        self.counts.get(bits).copied().unwrap_or(0) as f64 / self.n_shots as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (bits, c) in &self.counts {
            let _ = writeln!(out, "{bits} {c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut n_sites = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut parts = line.split_whitespace();
            let (Some(bits), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::InvalidArgument(format!("bad count line `{line}`")));
            };
            let c: u64 = c
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad count `{c}`")))?;
            if *n_sites.get_or_insert(bits.len()) != bits.len() {
                return Err(Error::InvalidArgument("bitstrings differ in length".into()));
            }
            *counts.entry(bits.to_string()).or_insert(0) += c;
        }
        Self::from_counts(n_sites.unwrap_or(0), counts)
    }
}

/// Draws `n_shots` readouts of occupation words distributed as `probs`.
pub fn sample_distribution(
    words: &[u64],
    probs: &[f64],
    readout: &ReadoutModel,
    n_shots: u64,
    seed: u64,
) -> Result<ShotCounts> {
    sample_distribution_stream(words, probs, readout, n_shots, seed, 0)
}

/// As [`sample_distribution`], drawing from stream `stream` of the seed.
pub fn sample_distribution_stream(
    words: &[u64],
    probs: &[f64],
    readout: &ReadoutModel,
    n_shots: u64,
    seed: u64,
    stream: u64,
) -> Result<ShotCounts> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be positive".into()));
    }
    if words.len() != probs.len() {
        return Err(Error::DimensionMismatch { expected: words.len(), got: probs.len() });
    }
    readout.validate()?;
    let n_sites = readout.n_sites();
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidArgument("distribution has no weight".into()));
    }
    let mut rng = rng::task_rng(seed, stream);
    let mut tally: BTreeMap<u64, u64> = BTreeMap::new();
    for _ in 0..n_shots {
        let u = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|c| *c <= u).min(words.len() - 1);
        let mut word = words[k];
        for j in 0..n_sites {
            let th = readout.thermal_excitation[j];
            if th > 0.0 && rng.random::<f64>() < th {
                word |= 1 << j;
            }
        }
        let mut seen = word;
        for j in 0..n_sites {
            let one = word >> j & 1 == 1;
            let keep = if one { readout.fidelity_1[j] } else { readout.fidelity_0[j] };
            if keep < 1.0 && rng.random::<f64>() >= keep {
                seen ^= 1 << j;
            }
        }
        *tally.entry(seen).or_insert(0) += 1;
    }
    let counts = tally
        .into_iter()
        .map(|(w, c)| (word_to_bits(w, n_sites), c))
        .collect();
    Ok(ShotCounts { counts, n_shots, n_sites })
}

pub fn sample_shots(
    state: &QuantumState,
    readout: &ReadoutModel,
    n_shots: u64,
    seed: u64,
) -> Result<ShotCounts> {
    let n = state.basis().n_sites();
    if readout.n_sites() != n {
        return Err(Error::DimensionMismatch { expected: n, got: readout.n_sites() });
    }
    sample_distribution(state.basis().states(), &state.probabilities(), readout, n_shots, seed)
}

/// Keeps shots with exactly `n_excitations` ones; returns them with the retained fraction.
pub fn post_select(counts: &ShotCounts, n_excitations: usize) -> Result<(ShotCounts, f64)> {
    let kept: BTreeMap<String, u64> = counts
        .counts
        .iter()
        .filter(|(b, _)| b.bytes().filter(|c| *c == b'1').count() == n_excitations)
        .map(|(b, c)| (b.clone(), *c))
        .collect();
    let n_kept: u64 = kept.values().sum();
    if n_kept == 0 {
        return Err(Error::NothingRetained);
    }
    let retention = n_kept as f64 / counts.n_shots as f64;
    Ok((
        ShotCounts { counts: kept, n_shots: n_kept, n_sites: counts.n_sites },
        retention,
    ))
}

/// Squared statistical overlap (Σ√(p q))² / (Σp Σq).
pub fn overlap_fidelity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    if p.iter().chain(q).any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument("distributions must be nonnegative".into()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if sp == 0.0 && sq == 0.0 {
        return Err(Error::InvalidArgument("both distributions are zero".into()));
    }
    if sp == 0.0 || sq == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((s * s / (sp * sq)).min(1.0))
}

/// Two-level Boltzmann excited-state probability at `temperature_mk`.
pub fn thermal_population(temperature_mk: f64, frequency_ghz: f64) -> Result<f64> {
    if temperature_mk < 0.0 || !(frequency_ghz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature_mk} mK / frequency {frequency_ghz} GHz out of range"
        )));
    }
    if temperature_mk == 0.0 {
        return Ok(0.0);
    }
    let x = H_OVER_KB_MK_PER_GHZ * frequency_ghz / temperature_mk;
    Ok(1.0 / (1.0 + x.exp()))
}

/// Temperature (mK) at which a qubit at `frequency_ghz` holds `p_excited`.
pub fn effective_temperature(p_excited: f64, frequency_ghz: f64) -> Result<f64> {
    if !(p_excited > 0.0 && p_excited < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "excited population {p_excited} must lie in (0, 0.5)"
        )));
    }
    if !(frequency_ghz > 0.0) {
        return Err(Error::InvalidArgument(format!("frequency {frequency_ghz} GHz")));
    }
    let x = ((1.0 - p_excited) / p_excited).ln();
    Ok(H_OVER_KB_MK_PER_GHZ * frequency_ghz / x)
}
