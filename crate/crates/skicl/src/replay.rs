//! Representation-matching memory construction: CORAL distance, greedy
//! diverse-mode splitting, proportional per-mode greedy sample selection,
//! and the random-replay baseline.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Two-pass covariance with (n-1) normalization. Fewer than two rows give
/// the zero matrix.
pub fn covariance(h: &Mat) -> Mat {
    let (n, q) = (h.rows, h.cols);
    let mut c = Mat::zeros(q, q);
    if n < 2 {
        return c;
    }
    let mut mean = vec![0.0; q];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(h.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for i in 0..n {
        let row = h.row(i);
        for a in 0..q {
            let da = row[a] - mean[a];
            for b in 0..q {
                c.data[a * q + b] += da * (row[b] - mean[b]);
            }
        }
    }
    for v in &mut c.data {
        *v /= (n - 1) as f64;
    }
    c
}

/// CORAL distance between two representation sets:
/// D = ||C_a - C_b||_F^2 / (4 q^2).
pub fn coral_distance(h_a: &Mat, h_b: &Mat) -> Result<f64> {
    if h_a.cols != h_b.cols {
        return Err(Error::ShapeMismatch {
            op: "coral_distance",
            lhs: vec![h_a.rows, h_a.cols],
            rhs: vec![h_b.rows, h_b.cols],
        });
    }
    let q = h_a.cols as f64;
    let ca = covariance(h_a);
    let cb = covariance(h_b);
    let mut s = 0.0;
    for (a, b) in ca.data.iter().zip(&cb.data) {
        s += (a - b) * (a - b);
    }
    Ok(s / (4.0 * q * q))
}

fn coral_between_covs(ca: &Mat, cb: &Mat, q: usize) -> f64 {
    let mut s = 0.0;
    for (a, b) in ca.data.iter().zip(&cb.data) {
        s += (a - b) * (a - b);
    }
    s / (4.0 * (q * q) as f64)
}

/// Contiguous partition of the representation rows into K modes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSplit {
    /// K+1 increasing indices, starting at 0 and ending at n.
    pub boundaries: Vec<usize>,
    /// True when no feasible split existed and the single-mode fallback
    /// was used.
    pub fallback: bool,
}

impl ModeSplit {
    pub fn k(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn mode_range(&self, i: usize) -> (usize, usize) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }
}

fn rows_slice(h: &Mat, from: usize, to: usize) -> Mat {
    Mat {
        rows: to - from,
        cols: h.cols,
        data: h.data[from * h.cols..to * h.cols].to_vec(),
    }
}

/// Mean pairwise CORAL objective (1/K) sum_{i != j} D(M_i, M_j) for the
/// partition given by `boundaries`.
fn split_objective(h: &Mat, boundaries: &[usize]) -> f64 {
    let k = boundaries.len() - 1;
    let covs: Vec<Mat> = (0..k)
        .map(|i| covariance(&rows_slice(h, boundaries[i], boundaries[i + 1])))
        .collect();
    let mut s = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            s += coral_between_covs(&covs[i], &covs[j], h.cols);
        }
    }
    2.0 * s / k as f64
}

fn feasible(boundaries: &[usize], d1: usize, d2: usize) -> bool {
    boundaries
        .windows(2)
        .all(|w| w[1] - w[0] > d1 && w[1] - w[0] < d2)
}

/// Greedy diverse-mode splitting. Candidate cuts are the N_parts-1 even
/// cut points; cuts are added one at a time for K = 2..min(K0, N_parts-1),
/// each pick maximizing the objective. The returned split is the feasible
/// greedy candidate with the largest objective; ties prefer smaller K,
/// then the lexicographically smallest boundary list. With no feasible
/// candidate the single-mode fallback is returned and flagged.
pub fn characterize_modes(
    h: &Mat,
    delta1: usize,
    delta2: usize,
    k0: usize,
    n_parts: usize,
) -> Result<ModeSplit> {
    let n = h.rows;
    if n_parts < 3 {
        return Err(Error::Config(format!(
            "n_parts must be >= 3, got {n_parts}"
        )));
    }
    if n < n_parts {
        return Err(Error::Config(format!(
            "need at least n_parts={n_parts} rows, got {n}"
        )));
    }
    if k0 < 2 {
        return Err(Error::Config(format!("k0 must be >= 2, got {k0}")));
    }
    let mut candidates: Vec<usize> = (1..n_parts).map(|i| i * n / n_parts).collect();
    candidates.dedup();
    candidates.retain(|&c| c > 0 && c < n);

    let k_max = k0.min(n_parts - 1);
    let mut chosen: Vec<usize> = Vec::new();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for _k in 2..=k_max {
        let remaining: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|c| !chosen.contains(c))
            .collect();
        if remaining.is_empty() {
            break;
        }
        let mut pick: Option<(f64, usize)> = None;
        for &c in &remaining {
            let mut b = vec![0];
            b.extend(chosen.iter().copied());
            b.push(c);
            b.push(n);
            b.sort_unstable();
            let obj = split_objective(h, &b);
            // strict > keeps the smallest cut on ties (remaining is sorted)
            if pick.map_or(true, |(po, _)| obj > po) {
                pick = Some((obj, c));
            }
        }
        let (obj, c) = pick.expect("remaining is non-empty");
        chosen.push(c);
        chosen.sort_unstable();
        let mut b = vec![0];
        b.extend(chosen.iter().copied());
        b.push(n);
        if feasible(&b, delta1, delta2) {
            let better = match &best {
                None => true,
                Some((bo, bk, bb)) => {
                    obj > *bo
                        || (obj == *bo && (b.len() - 1) < *bk)
                        || (obj == *bo && (b.len() - 1) == *bk && b < *bb)
                }
            };
            if better {
                best = Some((obj, b.len() - 1, b));
            }
        }
    }
    match best {
        Some((_, _, boundaries)) => Ok(ModeSplit {
            boundaries,
            fallback: false,
        }),
        None => {
            log::warn!("no feasible mode split; falling back to a single mode");
            Ok(ModeSplit {
                boundaries: vec![0, n],
                fallback: true,
            })
        }
    }
}

fn gather_rows(h: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), h.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.data[r * h.cols..(r + 1) * h.cols].copy_from_slice(h.row(i));
    }
    out
}

/// Proportional per-mode quotas, then within each mode a greedy pick of the
/// row minimizing CORAL between the selected subset and the whole mode.
/// Returns sorted row indices, at most `n_m` of them.
pub fn select_samples(h: &Mat, split: &ModeSplit, n_m: usize) -> Result<Vec<usize>> {
    let n = h.rows;
    if n_m == 0 {
        return Err(Error::Config("memory budget must be >= 1".into()));
    }
    if n_m >= n {
        log::warn!("budget {n_m} >= {n} samples; selecting everything");
        return Ok((0..n).collect());
    }
    let k = split.k();
    let mut quotas: Vec<usize> = (0..k)
        .map(|i| {
            let (a, b) = split.mode_range(i);
            ((n_m * (b - a)) / n).max(1)
        })
        .collect();
    // trim overshoot from the largest quotas, later modes first
    while quotas.iter().sum::<usize>() > n_m {
        let mut best = 0;
        for i in 0..k {
            if quotas[i] >= quotas[best] {
                best = i;
            }
        }
        quotas[best] -= 1;
    }
    // top up flooring losses so exactly n_m samples are kept, giving the
    // extra slots to the modes with the most unselected samples left
    while quotas.iter().sum::<usize>() < n_m {
        let mut best: Option<usize> = None;
        for i in 0..k {
            let (a, b) = split.mode_range(i);
            let room = (b - a) - quotas[i];
            if room == 0 {
                continue;
            }
            match best {
                Some(j) => {
                    let (ja, jb) = split.mode_range(j);
                    if room > (jb - ja) - quotas[j] {
                        best = Some(i);
                    }
                }
                None => best = Some(i),
            }
        }
        let Some(i) = best else { break };
        quotas[i] += 1;
    }
    let mut selected = Vec::new();
    for (i, &quota) in quotas.iter().enumerate() {
        let (a, b) = split.mode_range(i);
        let mode = rows_slice(h, a, b);
        let mode_cov = covariance(&mode);
        let mut s: Vec<usize> = Vec::new();
        for _ in 0..quota.min(b - a) {
            let mut pick: Option<(f64, usize)> = None;
            for cand in a..b {
                if s.contains(&cand) {
                    continue;
                }
                let mut trial = s.clone();
                trial.push(cand);
                let cov = covariance(&gather_rows(h, &trial));
                let d = coral_between_covs(&cov, &mode_cov, h.cols);
                if pick.map_or(true, |(pd, _)| d < pd) {
                    pick = Some((d, cand));
                }
            }
            if let Some((_, cand)) = pick {
                s.push(cand);
            }
        }
        selected.extend(s);
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Uniform selection without replacement, seeded; the `er` baseline.
pub fn random_select(ids: &[usize], n_m: usize, seed: u64) -> Vec<usize> {
    if n_m >= ids.len() {
        return ids.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, ids.len(), n_m)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    picked
}
