//! Random singular-value spectra of initialized weight matrices.
//!
//! Two samplers draw from the same distribution. `Dense` materializes the
//! whole Gaussian matrix and runs a full SVD. `Bidiagonal` draws the
//! Golub–Kahan bidiagonal form of that matrix directly: Householder
//! reduction of an i.i.d. Gaussian `m×n` matrix (`m ≤ n`) yields a lower
//! bidiagonal matrix whose diagonal entries are independent `χ_n, χ_{n-1},
//! …, χ_{n-m+1}` variates and whose subdiagonal entries are `χ_{m-1}, …, χ_1`.
//! Only that `O(m)` data is sampled; its entropy is a tridiagonal
//! log-determinant, also `O(m)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSampler {
    #[default]
    Bidiagonal,
    Dense,
}

/// Per-eigenvalue sweep cap for the tridiagonal QL iteration.
const QL_MAX_SWEEPS: usize = 60;

/// Singular values of a `rows×cols` matrix with i.i.d. `N(0, std_dev²)`
/// entries, in no particular order.
pub fn sample_singular_values<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std_dev: f64,
    sampler: SpectrumSampler,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match sampler {
        SpectrumSampler::Bidiagonal => bidiagonal(rows, cols, std_dev, rng),
        SpectrumSampler::Dense => dense(rows, cols, std_dev, rng),
    }
}

fn dense<R: Rng + ?Sized>(rows: usize, cols: usize, std_dev: f64, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, std_dev).map_err(|e| Error::Domain(e.to_string()))?;
    let w = DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng));
    let svd = w
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or(Error::Decomposition { rows, cols })?;
    Ok(svd.singular_values.iter().copied().collect())
}

fn chi<R: Rng + ?Sized>(dof: usize, rng: &mut R) -> Result<f64> {
    let d = ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng).sqrt())
}

/// Lower-bidiagonal `m×m` matrix sharing its singular values with an
/// i.i.d. Gaussian `rows×cols` matrix, `m = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidiagonal {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl Bidiagonal {
    pub fn sample<R: Rng + ?Sized>(rows: usize, cols: usize, std_dev: f64, rng: &mut R) -> Result<Self> {
        let (m, n) = (rows.min(cols), rows.max(cols));
        if m == 0 {
            return Ok(Self {
                diag: Vec::new(),
                sub: Vec::new(),
            });
        }
        let diag = (0..m)
            .map(|i| chi(n - i, rng).map(|x| x * std_dev))
            .collect::<Result<_>>()?;
        let sub = (0..m - 1)
            .map(|i| chi(m - 1 - i, rng).map(|x| x * std_dev))
            .collect::<Result<_>>()?;
        Ok(Self { diag, sub })
    }

    /// Diagonal and off-diagonal of the tridiagonal `B·Bᵀ`.
    fn gram(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (&self.diag, &self.sub);
        let m = a.len();
        let d = (0..m)
            .map(|i| a[i] * a[i] + if i > 0 { b[i - 1] * b[i - 1] } else { 0.0 })
            .collect();
        let e = (0..m).map(|i| if i + 1 < m { a[i] * b[i] } else { 0.0 }).collect();
        (d, e)
    }

    pub fn singular_values(&self) -> Result<Vec<f64>, NoConvergence> {
        let (mut d, mut e) = self.gram();
        tridiagonal_eigenvalues(&mut d, &mut e)?;
        Ok(d.into_iter().map(|l| l.max(0.0).sqrt()).collect())
    }

    /// `Σ_j ln(1 + s_j²/ε²)` computed as `ln det(I + B·Bᵀ/ε²)`.
    ///
    /// The matrix is symmetric positive definite and tridiagonal, so an
    /// unpivoted LDLᵀ sweep is stable and every pivot is at least 1.
    pub fn log_det_entropy(&self, epsilon: f64) -> f64 {
        let (d, e) = self.gram();
        let inv = 1.0 / (epsilon * epsilon);
        let mut total = 0.0;
        let mut prev_pivot = 1.0;
        let mut prev_off = 0.0;
        for (di, ei) in d.iter().zip(&e) {
            let pivot = 1.0 + di * inv - prev_off * prev_off / prev_pivot;
            total += pivot.ln();
            prev_pivot = pivot;
            prev_off = ei * inv;
        }
        total
    }
}

fn bidiagonal<R: Rng + ?Sized>(rows: usize, cols: usize, std_dev: f64, rng: &mut R) -> Result<Vec<f64>> {
    Bidiagonal::sample(rows, cols, std_dev, rng)?
        .singular_values()
        .map_err(|_| Error::Decomposition { rows, cols })
}

/// One draw of the matrix entropy of a `rows×cols` Gaussian matrix, in nats.
pub fn sample_matrix_entropy<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std_dev: f64,
    epsilon: f64,
    sampler: SpectrumSampler,
    rng: &mut R,
) -> Result<f64> {
    match sampler {
        SpectrumSampler::Bidiagonal => Ok(Bidiagonal::sample(rows, cols, std_dev, rng)?.log_det_entropy(epsilon)),
        SpectrumSampler::Dense => super::entropy_from_singulars(&dense(rows, cols, std_dev, rng)?, epsilon),
    }
}

#[derive(Debug)]
pub struct NoConvergence;

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with
/// Wilkinson shifts, computed in place into `diag`.
///
/// `off[i]` couples `diag[i]` and `diag[i + 1]`; `off` must have the same
/// length as `diag` and its contents are destroyed.
pub fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<(), NoConvergence> {
    let n = diag.len();
    assert_eq!(off.len(), n);
    if n == 0 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    let d = diag;
    let e = off;
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(NoConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = (f * f + g * g).sqrt();
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
