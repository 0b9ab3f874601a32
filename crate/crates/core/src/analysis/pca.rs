//! Principal components through cyclic Jacobi rotations of the covariance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Rotations stop once the off-diagonal Frobenius norm drops below this.
pub const JACOBI_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix, largest eigenvalue first.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` belongs to `values[k]`; unit length, with its largest
    /// magnitude entry positive.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

fn off_diagonal(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    Float::sqrt(s)
}

/// Cyclic Jacobi on a row-major symmetric `n × n` matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<SymmetricEigen> {
    if matrix.len() != n * n {
        return Err(Error::dim("jacobi", format!("{} entries for a {n}×{n} matrix", matrix.len())));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let mut sweeps = 0;
    while off_diagonal(&a, n) >= JACOBI_TOLERANCE {
        if sweeps == MAX_SWEEPS {
            return Err(Error::contract(
                "jacobi",
                format!("no convergence after {MAX_SWEEPS} sweeps (off-diagonal norm {})", off_diagonal(&a, n)),
            ));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + Float::sqrt(theta * theta + 1.0));
                let c = 1.0 / Float::sqrt(t * t + 1.0);
                let s = t * c;
                // A ← Jᵀ A J with J the (p, q) rotation
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&col| {
            let mut e: Vec<f64> = (0..n).map(|k| v[k * n + col]).collect();
            let mut big = 0;
            for (i, x) in e.iter().enumerate() {
                if x.abs() > e[big].abs() {
                    big = i;
                }
            }
            if e[big] < 0.0 {
                e.iter_mut().for_each(|x| *x = -*x);
            }
            e
        })
        .collect();
    Ok(SymmetricEigen { values, vectors, sweeps })
}

/// Result of projecting rows onto the leading principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit vectors of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Every covariance eigenvalue, largest first.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance carried by each kept component.
    pub explained: Vec<f64>,
    /// Centred rows projected onto the components, `M × k`.
    pub projected: Vec<Vec<f64>>,
    /// `projected` rows scaled to unit length; zero rows stay at the origin.
    pub sphereized: Vec<Vec<f64>>,
}

/// Projects `rows` (all of equal length `d`) onto their top `k` principal
/// axes. Covariance uses the population normaliser `1/M`.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let m = rows.len();
    if m < k || k == 0 {
        return Err(Error::contract("pca", format!("need at least {k} rows (and k ≥ 1), got {m}")));
    }
    let d = rows[0].len();
    if k > d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::dim("pca", format!("rows must all have length ≥ {k}, first has {d}")));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (a, x) in mean.iter_mut().zip(r) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, u)| x - u).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= m as f64);
    let eig = jacobi_eigen(&cov, d)?;
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let components: Vec<Vec<f64>> = eig.vectors[..k].to_vec();
    let explained = eig.values[..k]
        .iter()
        .map(|v| if total > 0.0 { v.max(0.0) / total } else { 0.0 })
        .collect();
    let projected: Vec<Vec<f64>> = centred
        .iter()
        .map(|r| components.iter().map(|c| c.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let sphereized = projected
        .iter()
        .map(|p: &Vec<f64>| {
            let n = Float::sqrt(p.iter().map(|x| x * x).sum::<f64>());
            if n > 0.0 {
                p.iter().map(|x| x / n).collect()
            } else {
                p.clone()
            }
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues: eig.values,
        explained,
        projected,
        sphereized,
    })
}
