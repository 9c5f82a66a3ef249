#![allow(clippy::needless_range_loop)]

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpiq_core::harness::SyntheticModelSpec;
use rpiq_core::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Inputs with a shared per-row component, so the Gram matrix is far from
/// diagonal.
pub fn correlated(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let shared: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_fn(rows, cols, |r, _| {
        0.7 * shared[r] + 0.5 * rng.random_range(-1.0..1.0)
    })
}

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut s = 0.0;
        for k in 0..a.cols() {
            s += a.get(i, k) * b.get(k, j);
        }
        s
    })
}

pub fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let norm: f64 = b.data().iter().map(|y| y * y).sum();
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

/// Least squares by Householder QR on the augmented system. Returns `B`
/// with `X·Bᵀ ≈ T`, one row per target column.
pub fn qr_least_squares(x: &DenseMatrix, t: &DenseMatrix) -> DenseMatrix {
    let (n, p) = (x.rows(), x.cols());
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| x.row(r).to_vec()).collect();
    let mut y: Vec<Vec<f64>> = (0..n).map(|r| t.row(r).to_vec()).collect();
    for k in 0..p {
        let norm = (k..n).map(|r| a[r][k] * a[r][k]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|r| a[r][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|e| e * e).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in k..p {
            let dot: f64 = (k..n).map(|r| v[r - k] * a[r][c]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..n {
                a[r][c] -= f * v[r - k];
            }
        }
        for c in 0..t.cols() {
            let dot: f64 = (k..n).map(|r| v[r - k] * y[r][c]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..n {
                y[r][c] -= f * v[r - k];
            }
        }
    }
    // back substitution R·β = Qᵀy, one target column at a time
    let mut out = DenseMatrix::zeros(t.cols(), p);
    for c in 0..t.cols() {
        for k in (0..p).rev() {
            let mut s = y[k][c];
            for j in k + 1..p {
                s -= a[k][j] * out.get(c, j);
            }
            out.set(c, k, s / a[k][k]);
        }
    }
    out
}

/// The desk-scale reference model used by the property checks.
pub fn reference_spec(seed: u64, batches: usize) -> SyntheticModelSpec {
    SyntheticModelSpec::new(vec![(64, 64); 3], seed, batches, 32)
}
