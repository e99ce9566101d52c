//! Dense matrix exponentials: Padé scaling-and-squaring and eigendecomposition.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianMatrix;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Complex product through four real products, which use the optimized real
/// matrix kernel instead of the generic complex one.
fn cmul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

/// `exp(a)` by degree-13 Padé approximation with scaling and squaring.
pub fn expm(a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / Complex64::new(2f64.powi(s), 0.0);
    let b = PADE13.map(|x| Complex64::new(x, 0.0));
    let id = DMatrix::<Complex64>::identity(n, n);
    let a2 = cmul(&a, &a);
    let a4 = cmul(&a2, &a2);
    let a6 = cmul(&a4, &a2);
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = cmul(&a, &(cmul(&a6, &inner_u) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]));
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = cmul(&a6, &inner_v) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::InvalidArgument("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = cmul(&r, &r);
    }
    Ok(r)
}

/// `exp(-i H dt)` for a dense Hermitian `H`.
pub fn unitary_step(h: &DMatrix<Complex64>, dt: f64) -> Result<DMatrix<Complex64>> {
    expm(&(h * Complex64::new(0.0, -dt)))
}

/// Eigendecomposition of a sector Hamiltonian, reused across many times.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors.
    pub vectors: DMatrix<Complex64>,
}

impl Spectrum {
    pub fn of(h: &HamiltonianMatrix) -> Spectrum {
        if let Some(real) = h.to_dense_real() {
            let eig = real.symmetric_eigen();
            Spectrum {
                eigenvalues: eig.eigenvalues.iter().copied().collect(),
                vectors: eig.eigenvectors.map(|x| Complex64::new(x, 0.0)),
            }
        } else {
            let eig = h.to_dense().symmetric_eigen();
            Spectrum {
                eigenvalues: eig.eigenvalues.iter().copied().collect(),
                vectors: eig.eigenvectors,
            }
        }
    }

    /// Coordinates of `psi` in the eigenbasis.
    pub fn project(&self, psi: &[Complex64]) -> DVector<Complex64> {
        self.vectors.adjoint() * DVector::from_column_slice(psi)
    }

    /// `exp(-i H t)` applied to a state given by its eigenbasis coordinates.
    pub fn evolve_projected(&self, coeffs: &DVector<Complex64>, t: f64) -> Vec<Complex64> {
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, e)| c * Complex64::from_polar(1.0, -e * t)),
        );
        (&self.vectors * phased).iter().copied().collect()
    }
}
