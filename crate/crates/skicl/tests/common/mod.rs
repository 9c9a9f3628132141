//! Shared test oracles: finite differences and brute-force statistics.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skicl::Mat;

pub const FD_H: f64 = 1e-6;
pub const FD_RTOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_vec(rows, cols, rand_vec(r, rows * cols, lo, hi)).unwrap()
}

/// Central finite differences of a scalar function at x0.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + FD_H;
        let up = f(&x);
        x[i] = x0[i] - FD_H;
        let dn = f(&x);
        x[i] = x0[i];
        g[i] = (up - dn) / (2.0 * FD_H);
    }
    g
}

/// Asserts analytic ≈ finite-difference gradient, elementwise relative error
/// below FD_RTOL (absolute for tiny values).
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], label: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{label}: length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = 1.0_f64.max(a.abs() + n.abs());
        let rel = (a - n).abs() / denom;
        assert!(
            rel < FD_RTOL,
            "{label}[{i}]: analytic {a} vs numeric {n} (rel {rel:.3e})"
        );
    }
}

/// Brute-force two-pass covariance with (n-1) normalization.
pub fn cov_oracle(h: &Mat) -> Mat {
    let (n, q) = (h.rows, h.cols);
    let mut c = Mat::zeros(q, q);
    if n < 2 {
        return c;
    }
    let mut mean = vec![0.0; q];
    for i in 0..n {
        for j in 0..q {
            mean[j] += h.get(i, j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for a in 0..q {
        for b in 0..q {
            let mut s = 0.0;
            for i in 0..n {
                s += (h.get(i, a) - mean[a]) * (h.get(i, b) - mean[b]);
            }
            c.set(a, b, s / (n as f64 - 1.0));
        }
    }
    c
}

/// Brute-force CORAL distance from the covariance oracle.
pub fn coral_oracle(a: &Mat, b: &Mat) -> f64 {
    let (ca, cb) = (cov_oracle(a), cov_oracle(b));
    let q = a.cols as f64;
    let mut s = 0.0;
    for (x, y) in ca.data.iter().zip(&cb.data) {
        s += (x - y) * (x - y);
    }
    s / (4.0 * q * q)
}
