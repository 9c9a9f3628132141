//! Sequential per-regime training with memory replay, evaluation over all
//! seen regimes, and run-directory artifacts.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{scheduled_lr, AdamState};
use crate::config::{EarlyStopMetric, ExperimentConfig, Selector};
use crate::consistency::{consistency_loss, total_loss, EdgeKind, StructuralKnowledge};
use crate::data::{
    slice_cols, window_dataset, MtsWindow, NormStats, RegimeData, FRAC_DEN, TRAIN_FRAC_NUM,
    VAL_FRAC_NUM,
};
use crate::error::{Error, Result};
use crate::forecaster::forecasting_loss;
use crate::graph::binarize;
use crate::linalg::Mat;
use crate::metrics::{self, PerformanceMatrix, RegimeSummary};
use crate::model::SkiclModel;
use crate::replay::{characterize_modes, random_select, select_samples, ModeSplit};
use crate::tensor::Tape;

pub const BINARIZE_THRESHOLD: f64 = 0.5;

/// One regime's windowed, normalized splits.
#[derive(Clone, Debug)]
pub struct RegimePack {
    pub regime: usize,
    pub name: String,
    pub stats: NormStats,
    pub train: Vec<MtsWindow>,
    pub val: Vec<MtsWindow>,
    pub test: Vec<MtsWindow>,
    pub prior: StructuralKnowledge,
}

/// Time-ordered 6/2/2 split, z-scored with the regime's train statistics.
pub fn prepare_regimes(
    regimes: &[RegimeData],
    tau: usize,
    horizon: usize,
) -> Result<Vec<RegimePack>> {
    if regimes.is_empty() {
        return Err(Error::Config("no regimes given".into()));
    }
    let n = regimes[0].x.rows;
    let kind = regimes[0].prior.edge_kind;
    let mut packs = Vec::with_capacity(regimes.len());
    for (ri, rd) in regimes.iter().enumerate() {
        if rd.x.rows != n {
            return Err(Error::Config(format!(
                "regime {ri} has {} variables, regime 0 has {n}",
                rd.x.rows
            )));
        }
        if rd.prior.edge_kind != kind {
            return Err(Error::Config(
                "all regimes must share one structural edge kind".into(),
            ));
        }
        rd.prior.validate()?;
        let t = rd.x.cols;
        let t1 = t * TRAIN_FRAC_NUM / FRAC_DEN;
        let t2 = t * (TRAIN_FRAC_NUM + VAL_FRAC_NUM) / FRAC_DEN;
        if t1 < tau + horizon || t2 - t1 < tau + horizon || t - t2 < tau + horizon {
            return Err(Error::Config(format!(
                "regime {ri}: length {t} too short for a 6/2/2 split with tau={tau}, horizon={horizon}"
            )));
        }
        let train_raw = slice_cols(&rd.x, 0, t1);
        let stats = NormStats::fit(&train_raw);
        let train = window_dataset(&stats.apply(&train_raw), ri, tau, horizon, 1)?;
        let val = window_dataset(&stats.apply(&slice_cols(&rd.x, t1, t2)), ri, tau, horizon, 1)?;
        let test = window_dataset(&stats.apply(&slice_cols(&rd.x, t2, t)), ri, tau, horizon, 1)?;
        let mut prior = rd.prior.clone();
        prior.regime = ri;
        packs.push(RegimePack {
            regime: ri,
            name: rd.name.clone(),
            stats,
            train,
            val,
            test,
            prior,
        });
    }
    Ok(packs)
}

/// Stored replay state for one past regime. Snapshots are never mutated
/// after insertion.
#[derive(Clone, Debug)]
pub struct MemoryRegime {
    pub regime: usize,
    pub budget: usize,
    pub selected: Vec<usize>,
    pub windows: Vec<MtsWindow>,
    pub prior: StructuralKnowledge,
}

#[derive(Clone, Debug, Default)]
pub struct MemoryBuffer {
    pub regimes: Vec<MemoryRegime>,
}

impl MemoryBuffer {
    pub fn is_empty(&self) -> bool {
        self.regimes.is_empty()
    }

    fn pool(&self) -> Vec<(&MtsWindow, &StructuralKnowledge)> {
        self.regimes
            .iter()
            .flat_map(|r| r.windows.iter().map(move |w| (w, &r.prior)))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayManifest {
    pub regimes: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub regime: usize,
    pub budget: usize,
    pub selected_window_starts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub mae: f64,
    pub rmse: f64,
    /// Present only for binary priors.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_graph: Mat,
}

/// Pure test-time evaluation: forecast errors plus, for binary priors,
/// structure precision/recall after thresholding each window's graph.
pub fn evaluate_pack(model: &SkiclModel, pack: &RegimePack) -> Result<EvalResult> {
    if pack.test.is_empty() {
        return Err(Error::Config(format!(
            "regime {} has no test windows",
            pack.regime
        )));
    }
    let n = model.cfg.n_vars;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut prec_sum = 0.0;
    let mut rec_sum = 0.0;
    let mut mean_graph = Mat::zeros(n, n);
    for w in &pack.test {
        let (adj, yhat) = model.predict(&w.input)?;
        for (a, b) in w.target.data.iter().zip(&yhat.data) {
            abs += (a - b).abs();
            sq += (a - b) * (a - b);
        }
        count += w.target.data.len();
        if pack.prior.edge_kind == EdgeKind::Binary {
            let pred = binarize(&adj, BINARIZE_THRESHOLD)?;
            let (p, r) = metrics::precision_recall(&pred, &pack.prior)?;
            prec_sum += p;
            rec_sum += r;
        }
        for (m, v) in mean_graph.data.iter_mut().zip(&adj.data) {
            *m += v;
        }
    }
    let nw = pack.test.len() as f64;
    for v in &mut mean_graph.data {
        *v /= nw;
    }
    let (precision, recall) = if pack.prior.edge_kind == EdgeKind::Binary {
        (Some(prec_sum / nw), Some(rec_sum / nw))
    } else {
        (None, None)
    };
    Ok(EvalResult {
        mae: abs / count as f64,
        rmse: (sq / count as f64).sqrt(),
        precision,
        recall,
        mean_graph,
    })
}

/// Validation forecast MAE plus the full per-window objective
/// (L_F + lambda * L_G), both averaged over the windows.
fn val_scores(
    model: &SkiclModel,
    windows: &[MtsWindow],
    prior: &StructuralKnowledge,
    lambda: f64,
) -> Result<(f64, f64)> {
    let mut abs = 0.0;
    let mut count = 0usize;
    let mut loss = 0.0;
    for w in windows {
        let (adj, yhat) = model.predict(&w.input)?;
        for (a, b) in w.target.data.iter().zip(&yhat.data) {
            abs += (a - b).abs();
        }
        count += w.target.data.len();
        let mut tape = Tape::new();
        let adj_v = tape.constant(vec![adj.rows, adj.cols], adj.data.clone())?;
        let lg = consistency_loss(&mut tape, adj_v, model.cfg.edge_kind, prior)?;
        let mut lf = 0.0;
        for (a, b) in w.target.data.iter().zip(&yhat.data) {
            lf += (a - b) * (a - b);
        }
        loss += lf / w.target.cols as f64 + lambda * tape.values(lg)[0];
    }
    Ok((abs / count as f64, loss / windows.len() as f64))
}

fn subseed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn init_seed(seed: u64) -> u64 {
    subseed(seed, 0)
}

struct BatchLoss {
    lf: f64,
    lg: f64,
}

/// Mean of (L_F + lambda * L_G) over a batch, on the tape.
fn batch_loss(
    model: &SkiclModel,
    tape: &mut Tape,
    vars: &[crate::tensor::Var],
    batch: &[(&MtsWindow, &StructuralKnowledge)],
    lambda: f64,
) -> Result<(crate::tensor::Var, BatchLoss)> {
    let mut acc: Option<crate::tensor::Var> = None;
    let mut lf_sum = 0.0;
    let mut lg_sum = 0.0;
    for (w, prior) in batch {
        let out = model.forward_window(tape, vars, &w.input)?;
        let lf = forecasting_loss(tape, out.yhat, &w.target)?;
        let lg = consistency_loss(tape, out.adj, model.cfg.edge_kind, prior)?;
        lf_sum += tape.values(lf)[0];
        lg_sum += tape.values(lg)[0];
        let l = total_loss(tape, lf, lg, lambda)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, l)?,
            None => l,
        });
    }
    let total = tape.scale(acc.expect("batch is non-empty"), 1.0 / batch.len() as f64);
    let k = batch.len() as f64;
    Ok((
        total,
        BatchLoss {
            lf: lf_sum / k,
            lg: lg_sum / k,
        },
    ))
}

pub struct EpochLog {
    pub regime: usize,
    pub epoch: usize,
    pub lf: f64,
    pub lg: f64,
    pub lmem: f64,
    pub lr: f64,
    pub val_mae: f64,
}

/// Train the model on one regime with balanced memory replay. Restores the
/// best validation weights before returning.
pub fn train_regime(
    model: &mut SkiclModel,
    pack: &RegimePack,
    memory: &MemoryBuffer,
    cfg: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<()> {
    if pack.train.is_empty() {
        return Err(Error::Config(format!(
            "regime {} has zero training windows",
            pack.regime
        )));
    }
    for mr in &memory.regimes {
        for w in &mr.windows {
            if w.input.rows != model.cfg.n_vars {
                return Err(Error::Config(format!(
                    "memory window from regime {} has {} variables, model expects {}",
                    mr.regime,
                    w.input.rows,
                    model.cfg.n_vars
                )));
            }
        }
    }
    let t = &cfg.trainer;
    let mut adam = AdamState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(subseed(t.seed, 1000 + pack.regime as u64));
    let mut mem_rng = ChaCha8Rng::seed_from_u64(subseed(t.seed, 3000 + pack.regime as u64));
    let pool = memory.pool();
    let use_memory = !pool.is_empty() && t.alpha > 0.0;

    let mut best_val = f64::INFINITY;
    let mut best_snap = model.params.snapshot();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..pack.train.len()).collect();

    for epoch in 0..t.epochs {
        let lr = scheduled_lr(t.base_lr, t.lr_decay, t.lr_decay_every, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut lf_ep = 0.0;
        let mut lg_ep = 0.0;
        let mut lmem_ep = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(t.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape, true);
            let current: Vec<(&MtsWindow, &StructuralKnowledge)> = chunk
                .iter()
                .map(|&i| (&pack.train[i], &pack.prior))
                .collect();
            let (cur_loss, cur_stats) = batch_loss(model, &mut tape, &vars, &current, t.lambda)?;
            let loss = if use_memory {
                let mem_batch: Vec<(&MtsWindow, &StructuralKnowledge)> = (0..chunk.len())
                    .map(|_| pool[mem_rng.gen_range(0..pool.len())])
                    .collect();
                let (mem_loss, mem_stats) =
                    batch_loss(model, &mut tape, &vars, &mem_batch, t.lambda)?;
                lmem_ep += tape.values(mem_loss)[0];
                let _ = mem_stats;
                total_loss(&mut tape, cur_loss, mem_loss, t.alpha)?
            } else {
                cur_loss
            };
            tape.backward(loss)?;
            model.params.zero_grads();
            model.params.accumulate_grads(&tape, &vars);
            adam.step(&mut model.params, lr)?;
            lf_ep += cur_stats.lf;
            lg_ep += cur_stats.lg;
            steps += 1;
        }
        let (vm, vl) = val_scores(model, &pack.val, &pack.prior, t.lambda)?;
        on_epoch(&EpochLog {
            regime: pack.regime,
            epoch,
            lf: lf_ep / steps as f64,
            lg: lg_ep / steps as f64,
            lmem: lmem_ep / steps as f64,
            lr,
            val_mae: vm,
        });
        // patience == 0 disables early stopping and best-weight restore:
        // the final-epoch weights are kept as-is.
        if t.patience > 0 {
            let score = match t.early_stop_metric {
                EarlyStopMetric::ValMae => vm,
                EarlyStopMetric::ValLoss => vl,
            };
            if score < best_val {
                best_val = score;
                best_snap = model.params.snapshot();
                stale = 0;
            } else {
                stale += 1;
                if stale >= t.patience {
                    break;
                }
            }
        }
    }
    if t.patience > 0 {
        model.params.restore(&best_snap);
    }
    Ok(())
}

/// Select this regime's memory entries after training finished on it.
pub fn update_memory(
    model: &SkiclModel,
    pack: &RegimePack,
    cfg: &ExperimentConfig,
    memory: &mut MemoryBuffer,
) -> Result<()> {
    let n = pack.train.len();
    let budget = ((cfg.replay.budget_ratio * n as f64).ceil() as usize).max(1);
    let selected = match cfg.replay.selector {
        Selector::None => return Ok(()),
        Selector::Er => {
            let ids: Vec<usize> = (0..n).collect();
            random_select(
                &ids,
                budget,
                subseed(cfg.trainer.seed, 2000 + pack.regime as u64),
            )
        }
        Selector::SkiCl => {
            let reps = model.representations(&pack.train)?;
            let split = if n < cfg.replay.n_parts {
                log::warn!(
                    "regime {}: {n} windows < n_parts {}; single-mode fallback",
                    pack.regime,
                    cfg.replay.n_parts
                );
                ModeSplit {
                    boundaries: vec![0, n],
                    fallback: true,
                }
            } else {
                characterize_modes(
                    &reps,
                    cfg.replay.delta1,
                    cfg.replay.delta2.unwrap_or(n),
                    cfg.replay.k_max,
                    cfg.replay.n_parts,
                )?
            };
            select_samples(&reps, &split, budget)?
        }
    };
    let windows: Vec<MtsWindow> = selected.iter().map(|&i| pack.train[i].clone()).collect();
    memory.regimes.push(MemoryRegime {
        regime: pack.regime,
        budget,
        selected: selected.clone(),
        windows,
        prior: pack.prior.clone(),
    });
    Ok(())
}

pub struct RunOutcome {
    pub perf: PerformanceMatrix,
    pub summary: Vec<RegimeSummary>,
    pub manifest: ReplayManifest,
}

/// Filesystem sink for run artifacts; every write of a training run goes
/// through here.
pub struct RunWriter {
    dir: PathBuf,
    log: File,
}

impl RunWriter {
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::create_dir_all(dir.join("graphs"))?;
        std::fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(cfg)?,
        )?;
        let log = File::create(dir.join("train.log"))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn epoch(&mut self, e: &EpochLog) -> Result<()> {
        writeln!(
            self.log,
            "regime={} epoch={} lf={:.6} lg={:.6} lmem={:.6} lr={:.6e} val_mae={:.6}",
            e.regime + 1,
            e.epoch + 1,
            e.lf,
            e.lg,
            e.lmem,
            e.lr,
            e.val_mae
        )?;
        Ok(())
    }

    fn checkpoint(&self, regime: usize, model: &SkiclModel) -> Result<()> {
        model
            .params
            .save_checkpoint(&self.dir.join(format!("checkpoint_regime_{}.json", regime + 1)))
    }

    fn mean_graph(&self, trained_through: usize, evaluated: usize, g: &Mat) -> Result<()> {
        let path = self.dir.join("graphs").join(format!(
            "mean_regime_{}_after_{}.csv",
            evaluated + 1,
            trained_through + 1
        ));
        let mut s = String::new();
        for i in 0..g.rows {
            let row: Vec<String> = g.row(i).iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    fn finish(&self, perf: &PerformanceMatrix, summary: &[RegimeSummary], manifest: &ReplayManifest) -> Result<()> {
        for m in perf.metrics().map(String::from).collect::<Vec<_>>() {
            std::fs::write(
                self.dir.join(format!("performance_matrix_{m}.csv")),
                perf.to_csv(&m)?,
            )?;
        }
        std::fs::write(
            self.dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        std::fs::write(
            self.dir.join("replay_manifest.json"),
            serde_json::to_string_pretty(manifest)?,
        )?;
        Ok(())
    }

    fn marker(&self, regime: usize, err: &Error) {
        let _ = std::fs::write(
            self.dir.join("MARKER"),
            format!("training failed in regime {}: {err}\n", regime + 1),
        );
    }
}

/// Full sequential pipeline: train each regime in order, evaluate on every
/// seen regime, update memory per the selector, and persist artifacts when
/// an output directory is given.
pub fn run_sequence(
    cfg: &ExperimentConfig,
    regimes: &[RegimeData],
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let packs = prepare_regimes(regimes, cfg.model.tau, cfg.model.horizon)?;
    let n_vars = regimes[0].x.rows;
    let edge_kind = regimes[0].prior.edge_kind;
    let model_cfg = cfg.model_config(n_vars, edge_kind);
    let mut model = SkiclModel::build(model_cfg, init_seed(cfg.trainer.seed))?;
    let mut writer = match out_dir {
        Some(d) => Some(RunWriter::create(d, cfg)?),
        None => None,
    };

    let mut memory = MemoryBuffer::default();
    let mut perf = PerformanceMatrix::new();

    for i in 0..packs.len() {
        let pack = &packs[i];
        let step = (|| -> Result<()> {
            train_regime(&mut model, pack, &memory, cfg, |e| {
                if let Some(w) = writer.as_mut() {
                    let _ = w.epoch(e);
                }
            })?;

            let mut mae_row = Vec::with_capacity(i + 1);
            let mut rmse_row = Vec::with_capacity(i + 1);
            let mut prec_row = Vec::with_capacity(i + 1);
            let mut rec_row = Vec::with_capacity(i + 1);
            for (j, past) in packs.iter().take(i + 1).enumerate() {
                let ev = evaluate_pack(&model, past)?;
                mae_row.push(ev.mae);
                rmse_row.push(ev.rmse);
                if let (Some(p), Some(r)) = (ev.precision, ev.recall) {
                    prec_row.push(p);
                    rec_row.push(r);
                }
                if let Some(w) = writer.as_ref() {
                    w.mean_graph(i, j, &ev.mean_graph)?;
                }
            }
            perf.push_row("mae", mae_row)?;
            perf.push_row("rmse", rmse_row)?;
            if edge_kind == EdgeKind::Binary {
                perf.push_row("precision", prec_row)?;
                perf.push_row("recall", rec_row)?;
            }
            if let Some(w) = writer.as_ref() {
                w.checkpoint(i, &model)?;
            }
            update_memory(&model, pack, cfg, &mut memory)?;
            Ok(())
        })();
        if let Err(e) = step {
            if let Some(w) = writer.as_ref() {
                w.marker(i, &e);
            }
            return Err(e);
        }
    }

    let summary = metrics::summarize(&perf)?;
    let manifest = ReplayManifest {
        regimes: memory
            .regimes
            .iter()
            .map(|m| ManifestEntry {
                regime: m.regime + 1,
                budget: m.budget,
                selected_window_starts: m.selected.iter().map(|&i| pack_start(&packs[m.regime], i)).collect(),
            })
            .collect(),
    };
    if let Some(w) = writer.as_ref() {
        w.finish(&perf, &summary, &manifest)?;
    }
    Ok(RunOutcome {
        perf,
        summary,
        manifest,
    })
}

fn pack_start(pack: &RegimePack, train_index: usize) -> usize {
    pack.train[train_index].start
}
