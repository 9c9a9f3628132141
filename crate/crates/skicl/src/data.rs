//! Regime data: synthetic random-walk generation, structural-knowledge
//! constructors, sliding windows, normalization, and the on-disk regime
//! directory layout (data.csv / structure.csv / mask.csv / meta.json).

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::consistency::{EdgeKind, StructuralKnowledge};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Time-ordered 6/2/2 split shared by the whole pipeline.
pub const TRAIN_FRAC_NUM: usize = 6;
pub const VAL_FRAC_NUM: usize = 2;
pub const FRAC_DEN: usize = 10;

/// Safety clip for the synthetic walk.
const WALK_CLIP: f64 = 10.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_n_vars")]
    pub n_vars: usize,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_regimes")]
    pub regimes: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prior_threshold")]
    pub prior_threshold: f64,
}

fn default_n_vars() -> usize {
    10
}
fn default_total_steps() -> usize {
    4000
}
fn default_regimes() -> usize {
    4
}
fn default_noise_std() -> f64 {
    0.01
}
fn default_sparsity() -> f64 {
    0.1
}
fn default_prior_threshold() -> f64 {
    0.5
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_vars: default_n_vars(),
            total_steps: default_total_steps(),
            regimes: default_regimes(),
            noise_std: default_noise_std(),
            sparsity: default_sparsity(),
            seed: 0,
            prior_threshold: default_prior_threshold(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegimeData {
    pub name: String,
    /// N x T_regime series.
    pub x: Mat,
    pub prior: StructuralKnowledge,
    /// Transition matrix of the generating walk (synthetic only).
    pub ground_truth: Option<Mat>,
}

/// One (input, target) sample; `start` is the index of the first input step
/// inside its source split.
#[derive(Clone, Debug)]
pub struct MtsWindow {
    pub regime: usize,
    pub start: usize,
    /// N x tau.
    pub input: Mat,
    /// N x tau'.
    pub target: Mat,
}

// ---- synthetic generation ----

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Mat {
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < sparsity {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

fn spectral_radius(m: &Mat) -> f64 {
    let n = m.rows;
    // Constant vectors sit in the null space of a random-walk Laplacian,
    // so start from something with no obvious structure.
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm0;
    }
    let mut rho = 0.0;
    for _ in 0..200 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let row = m.row(i);
            w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        rho = norm;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    rho
}

/// Random-walk Laplacian of `a`, rescaled to spectral radius 0.9 so the
/// generated walk neither collapses nor diverges over thousands of steps.
fn transition_matrix(a: &Mat) -> Result<Mat> {
    let n = a.rows;
    let mut l = Mat::identity(n);
    for i in 0..n {
        let deg: f64 = a.row(i).iter().sum();
        if deg == 0.0 {
            continue;
        }
        for j in 0..n {
            let v = l.get(i, j) - a.get(i, j) / deg;
            l.set(i, j, v);
        }
    }
    let rho = spectral_radius(&l);
    if rho <= 1e-12 {
        return Err(Error::Config(
            "degenerate transition matrix: zero spectral radius".into(),
        ));
    }
    for v in &mut l.data {
        *v *= 0.9 / rho;
    }
    Ok(l)
}

/// Piecewise random walk: S regimes of floor(L/S) steps, each
/// driven by its own sparsified-graph transition matrix; values propagate
/// continuously across regime boundaries.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<RegimeData>> {
    if cfg.noise_std <= 0.0 {
        return Err(Error::Config("noise_std must be > 0".into()));
    }
    if !(cfg.sparsity > 0.0 && cfg.sparsity < 1.0) {
        return Err(Error::Config("sparsity must lie in (0,1)".into()));
    }
    if cfg.regimes == 0 || cfg.n_vars == 0 {
        return Err(Error::Config("regimes and n_vars must be >= 1".into()));
    }
    let t_regime = cfg.total_steps / cfg.regimes;
    if t_regime < 2 {
        return Err(Error::Config(format!(
            "total_steps {} too short for {} regimes",
            cfg.total_steps, cfg.regimes
        )));
    }
    let n = cfg.n_vars;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut transitions = Vec::with_capacity(cfg.regimes);
    for _ in 0..cfg.regimes {
        let mut attempts = 0;
        let g = loop {
            let a = random_adjacency(&mut rng, n, cfg.sparsity);
            if a.data.iter().any(|&v| v != 0.0) {
                break transition_matrix(&a)?;
            }
            attempts += 1;
            if attempts >= 100 {
                return Err(Error::Config(
                    "sparsity produced an empty graph in 100 attempts".into(),
                ));
            }
        };
        transitions.push(g);
    }

    const INIT_SET: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];
    let mut state: Vec<f64> = (0..n).map(|_| INIT_SET[rng.gen_range(0..4)]).collect();

    let mut regimes = Vec::with_capacity(cfg.regimes);
    for (ri, g) in transitions.iter().enumerate() {
        let mut x = Mat::zeros(n, t_regime);
        for t in 0..t_regime {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let row = g.row(i);
                let mean: f64 = row.iter().zip(&state).map(|(a, b)| a * b).sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                next[i] = (mean + cfg.noise_std * noise).clamp(-WALK_CLIP, WALK_CLIP);
            }
            for i in 0..n {
                x.set(i, t, next[i]);
            }
            state = next;
        }
        let train_end = t_regime * TRAIN_FRAC_NUM / FRAC_DEN;
        let train = slice_cols(&x, 0, train_end);
        let mut prior = extract_correlation_prior(&train, cfg.prior_threshold, None)?;
        prior.regime = ri;
        regimes.push(RegimeData {
            name: format!("regime_{ri}"),
            x,
            prior,
            ground_truth: Some(g.clone()),
        });
    }
    Ok(regimes)
}

pub fn slice_cols(x: &Mat, from: usize, to: usize) -> Mat {
    let w = to - from;
    let mut out = Mat::zeros(x.rows, w);
    for i in 0..x.rows {
        out.data[i * w..(i + 1) * w].copy_from_slice(&x.row(i)[from..to]);
    }
    out
}

// ---- structural-knowledge constructors ----

/// Gaussian-kernel adjacency from pairwise distances:
/// A_ij = exp(-d_ij^2 / sigma_d^2) when i != j and d_ij <= eps, else 0.
pub fn gaussian_kernel_adjacency(
    distances: &Mat,
    sigma_d: f64,
    eps_thresh: f64,
) -> Result<StructuralKnowledge> {
    if sigma_d <= 0.0 {
        return Err(Error::Config(format!("sigma_d must be > 0, got {sigma_d}")));
    }
    let n = distances.rows;
    if distances.cols != n {
        return Err(Error::Config("distance matrix must be square".into()));
    }
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = distances.get(i, j);
            if i != j && d <= eps_thresh {
                a.set(i, j, (-(d * d) / (sigma_d * sigma_d)).exp());
            }
        }
    }
    Ok(StructuralKnowledge::fully_observed(
        a,
        EdgeKind::Continuous,
        0,
    ))
}

/// Pearson correlation between two equally long slices; zero-variance
/// inputs yield 0.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Windowed-correlation confidence rule for partially observed priors:
/// an entry is observed when the given percentile of its absolute
/// correlation across non-overlapping windows clears `mask_threshold`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercentileMode {
    pub window: usize,
    pub percentile: f64,
    pub mask_threshold: f64,
}

fn percentile_of(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let idx = ((pct / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Binary correlation prior: edge iff |pearson| > threshold (diagonal 1).
/// With `percentile_mode` the prior is partial: only entries passing the
/// windowed confidence rule are marked observed.
pub fn extract_correlation_prior(
    x: &Mat,
    threshold: f64,
    percentile_mode: Option<&PercentileMode>,
) -> Result<StructuralKnowledge> {
    let n = x.rows;
    let t = x.cols;
    if t < 30 {
        return Err(Error::Config(format!(
            "correlation prior needs >= 30 steps, got {t}"
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "correlation threshold must lie in (0,1), got {threshold}"
        )));
    }
    for i in 0..n {
        let row = x.row(i);
        let m = row.iter().sum::<f64>() / t as f64;
        if row.iter().all(|&v| (v - m).abs() < 1e-15) {
            log::warn!("variable {i} has zero variance; its correlations default to 0");
        }
    }
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
        for j in (i + 1)..n {
            let c = pearson(x.row(i), x.row(j)).abs();
            let v = if c > threshold { 1.0 } else { 0.0 };
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut sk = StructuralKnowledge::fully_observed(a, EdgeKind::Binary, 0);
    if let Some(pm) = percentile_mode {
        if pm.window < 2 || pm.window > t {
            return Err(Error::Config(format!(
                "percentile window {} invalid for series length {t}",
                pm.window
            )));
        }
        let n_windows = t / pm.window;
        if n_windows >= 2 {
            let mut mask = Mat::zeros(n, n);
            for i in 0..n {
                mask.set(i, i, 1.0);
                for j in (i + 1)..n {
                    let mut cs: Vec<f64> = (0..n_windows)
                        .map(|w| {
                            let from = w * pm.window;
                            let to = from + pm.window;
                            pearson(&x.row(i)[from..to], &x.row(j)[from..to]).abs()
                        })
                        .collect();
                    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let p = percentile_of(&cs, pm.percentile);
                    let m = if p > pm.mask_threshold { 1.0 } else { 0.0 };
                    mask.set(i, j, m);
                    mask.set(j, i, m);
                }
            }
            sk.mask = mask;
        } else {
            log::warn!("series too short for windowed confidence; mask left fully observed");
        }
    }
    sk.validate()?;
    Ok(sk)
}

// ---- windowing and normalization ----

/// Sliding windows (input tau, target tau') ordered by start index;
/// count = floor((T - tau - tau') / stride) + 1.
pub fn window_dataset(
    x: &Mat,
    regime: usize,
    tau: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<MtsWindow>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let t = x.cols;
    if t < tau + horizon {
        return Err(Error::Config(format!(
            "series length {t} too short for tau={tau} + horizon={horizon}"
        )));
    }
    let count = (t - tau - horizon) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = k * stride;
        out.push(MtsWindow {
            regime,
            start: s,
            input: slice_cols(x, s, s + tau),
            target: slice_cols(x, s + tau, s + tau + horizon),
        });
    }
    Ok(out)
}

/// Per-variable z-score statistics fitted on a training slice.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(x: &Mat) -> Self {
        let t = x.cols as f64;
        let mut mean = vec![0.0; x.rows];
        let mut std = vec![0.0; x.rows];
        for i in 0..x.rows {
            let row = x.row(i);
            let m = row.iter().sum::<f64>() / t;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
            mean[i] = m;
            std[i] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        NormStats { mean, std }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for i in 0..x.rows {
            let (m, s) = (self.mean[i], self.std[i]);
            for v in &mut out.data[i * x.cols..(i + 1) * x.cols] {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

// ---- regime directory layout ----

#[derive(Serialize, Deserialize)]
struct RegimeMeta {
    edge_kind: EdgeKind,
    name: String,
}

fn write_mat_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.rows {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn read_mat_csv(path: &Path) -> Result<Mat> {
    let fname = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cols = 0usize;
    for (li, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
                file: fname.clone(),
                line: li + 1,
                msg: format!("non-numeric cell `{}`", cell.trim()),
            })?;
            row.push(v);
        }
        if cols == 0 {
            cols = row.len();
        } else if row.len() != cols {
            return Err(Error::Data {
                file: fname.clone(),
                line: li + 1,
                msg: format!("expected {cols} columns, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data {
            file: fname,
            line: 1,
            msg: "empty matrix".into(),
        });
    }
    let r = rows.len();
    Mat::from_vec(r, cols, rows.into_iter().flatten().collect())
}

/// Write one regime directory: data.csv (rows = time steps, header =
/// variable names), structure.csv, mask.csv when partial, meta.json, and
/// ground_truth_W.csv when known.
pub fn save_regime_dir(dir: &Path, regime: &RegimeData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let n = regime.x.rows;
    let t = regime.x.cols;
    let mut s = String::new();
    let header: Vec<String> = (0..n).map(|i| format!("var{i}")).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for step in 0..t {
        let row: Vec<String> = (0..n).map(|i| format!("{}", regime.x.get(i, step))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(dir.join("data.csv"), s)?;
    write_mat_csv(&dir.join("structure.csv"), &regime.prior.a)?;
    if regime.prior.mask.data.iter().any(|&m| m != 1.0) {
        write_mat_csv(&dir.join("mask.csv"), &regime.prior.mask)?;
    }
    if let Some(g) = &regime.ground_truth {
        write_mat_csv(&dir.join("ground_truth_W.csv"), g)?;
    }
    let meta = RegimeMeta {
        edge_kind: regime.prior.edge_kind,
        name: regime.name.clone(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Load one regime directory; missing mask.csv means fully observed.
pub fn load_regime_csv(dir: &Path) -> Result<RegimeData> {
    let data_path = dir.join("data.csv");
    let fname = data_path.display().to_string();
    let text = std::fs::read_to_string(&data_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Data {
        file: fname.clone(),
        line: 1,
        msg: "missing header".into(),
    })?;
    let n = header.split(',').count();
    let mut steps: Vec<Vec<f64>> = Vec::new();
    for (li, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(n);
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
                file: fname.clone(),
                line: li + 1,
                msg: format!("non-numeric cell `{}`", cell.trim()),
            })?;
            row.push(v);
        }
        if row.len() != n {
            return Err(Error::Data {
                file: fname.clone(),
                line: li + 1,
                msg: format!("expected {n} columns, found {}", row.len()),
            });
        }
        steps.push(row);
    }
    let t = steps.len();
    let mut x = Mat::zeros(n, t);
    for (step, row) in steps.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            x.set(i, step, v);
        }
    }

    let meta_path = dir.join("meta.json");
    let meta: RegimeMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;

    let a = read_mat_csv(&dir.join("structure.csv"))?;
    if a.rows != n || a.cols != n {
        return Err(Error::Data {
            file: dir.join("structure.csv").display().to_string(),
            line: 1,
            msg: format!(
                "structure is {}x{}, data.csv has {n} variables",
                a.rows, a.cols
            ),
        });
    }
    let mask_path = dir.join("mask.csv");
    let mask = if mask_path.exists() {
        let m = read_mat_csv(&mask_path)?;
        if m.rows != n || m.cols != n {
            return Err(Error::Data {
                file: mask_path.display().to_string(),
                line: 1,
                msg: format!("mask is {}x{}, expected {n}x{n}", m.rows, m.cols),
            });
        }
        m
    } else {
        Mat::from_vec(n, n, vec![1.0; n * n])?
    };
    let prior = StructuralKnowledge {
        a,
        edge_kind: meta.edge_kind,
        mask,
        regime: 0,
    };
    prior.validate()?;

    let gt_path = dir.join("ground_truth_W.csv");
    let ground_truth = if gt_path.exists() {
        Some(read_mat_csv(&gt_path)?)
    } else {
        None
    };

    if !x.all_finite() {
        return Err(Error::Data {
            file: fname,
            line: 1,
            msg: "non-finite values in series".into(),
        });
    }
    Ok(RegimeData {
        name: meta.name,
        x,
        prior,
        ground_truth,
    })
}
