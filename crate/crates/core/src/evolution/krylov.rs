//! Lanczos approximation of `exp(-i H t) v` with adaptive subspace size and
//! substepping.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy)]
pub struct KrylovSettings {
    pub initial_dim: usize,
    pub max_dim: usize,
    pub growth: usize,
    pub max_substeps: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings {
            initial_dim: 20,
            max_dim: 80,
            growth: 10,
            max_substeps: 100_000,
        }
    }
}

struct Lanczos {
    basis: Vec<Vec<Complex64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Norm of the residual after the last vector; ~0 means the subspace is invariant.
    tail: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn lanczos(h: &HamiltonianMatrix, v: &[Complex64], beta0: f64, m: usize) -> Lanczos {
    let n = v.len();
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut w = vec![ZERO; n];
    let scale = h.norm_bound().max(1e-300);
    let mut tail = 0.0;
    for k in 0..m {
        h.apply_into(&basis[k], &mut w);
        // full reorthogonalization, twice is enough
        let mut a = 0.0;
        for _ in 0..2 {
            for (j, q) in basis.iter().enumerate() {
                let c = dot(q, &w);
                if j == k {
                    a += c.re;
                }
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        alpha.push(a);
        let b = norm(&w);
        tail = b;
        if b <= 1e-13 * scale || k + 1 == n {
            tail = if k + 1 == n { 0.0 } else { b };
            break;
        }
        if k + 1 == m {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    if tail <= 1e-13 * scale {
        tail = 0.0;
    }
    Lanczos {
        basis,
        alpha,
        beta,
        tail,
    }
}

/// `exp(-i T tau) e1` for the leading k×k block of the tridiagonal matrix.
fn small_exp(alpha: &[f64], beta: &[f64], k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

fn coeffs(evals: &[f64], evecs: &DMatrix<f64>, tau: f64) -> Vec<Complex64> {
    let k = evals.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|l| Complex64::from_polar(evecs[(i, l)] * evecs[(0, l)], -evals[l] * tau))
                .sum()
        })
        .collect()
}

/// Replace `psi` with `exp(-i H dt) psi`, `dt` in µs (any sign).
pub fn propagate(
    h: &HamiltonianMatrix,
    psi: &mut [Complex64],
    dt: f64,
    tol: f64,
    settings: &KrylovSettings,
) -> Result<()> {
    if dt == 0.0 {
        return Ok(());
    }
    let total = dt.abs();
    let sign = dt.signum();
    let mut done = 0.0;
    let mut tau = total;
    let mut substeps = 0;
    let max_dim = settings.max_dim.max(settings.initial_dim).min(psi.len());
    while done < total {
        substeps += 1;
        if substeps > settings.max_substeps {
            return Err(Error::KrylovNonConvergence {
                time_ns: dt * 1e3,
                estimate: f64::NAN,
            });
        }
        let beta0 = norm(psi);
        if beta0 == 0.0 {
            return Ok(());
        }
        tau = tau.min(total - done);
        let lz = lanczos(h, psi, beta0, max_dim);
        let built = lz.alpha.len();
        let mut accepted: Option<(Vec<Complex64>, usize)> = None;
        let mut estimate;
        'shrink: loop {
            let target = tol * tau / total;
            let mut k = settings.initial_dim.min(built);
            loop {
                let (evals, evecs) = small_exp(&lz.alpha, &lz.beta, k);
                let c = coeffs(&evals, &evecs, sign * tau);
                // residual bound: tau · beta · β_{k+1} · |e_k^T exp(-iTτ) e1|
                let next = if k < built { lz.beta[k - 1] } else { lz.tail };
                estimate = tau * beta0 * next * c[k - 1].norm();
                if estimate <= target {
                    accepted = Some((c, k));
                    break 'shrink;
                }
                if k == built {
                    break;
                }
                k = (k + settings.growth).min(built);
            }
            tau *= 0.5;
            if tau < total * 1e-12 {
                break;
            }
        }
        let (c, k) = accepted.ok_or(Error::KrylovNonConvergence {
            time_ns: dt * 1e3,
            estimate,
        })?;
        for x in psi.iter_mut() {
            *x = ZERO;
        }
        for (ci, q) in c.iter().zip(&lz.basis[..k]) {
            let f = ci * beta0;
            for (x, qi) in psi.iter_mut().zip(q) {
                *x += f * qi;
            }
        }
        done += tau;
        if total - done <= total * 1e-14 {
            break;
        }
        // try a longer step next time
        tau *= 2.0;
    }
    Ok(())
}
