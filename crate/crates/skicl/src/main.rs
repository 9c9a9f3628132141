use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skicl::config::{DataConfig, ExperimentConfig, Selector};
use skicl::data::{generate_synthetic, load_regime_csv, save_regime_dir, RegimeData};
use skicl::error::{Error, Result};
use skicl::model::SkiclModel;
use skicl::trainer::{self, evaluate_pack, prepare_regimes, run_sequence};

#[derive(Parser)]
#[command(name = "skicl", about = "Continual multivariate time-series forecasting with structural knowledge", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replay selector: ski-cl | er | none.
    #[arg(long)]
    selector: Option<Selector>,
    /// Memory budget as a fraction of each regime's training windows.
    #[arg(long)]
    budget: Option<f64>,
    /// Weight of the structure-consistency loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the memory-replay loss.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic regimes and write one directory per regime.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train sequentially over regimes and write all run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
        /// Also honored for train (mean graphs are always written).
        #[arg(long)]
        dump_graphs: bool,
    },
    /// Evaluate a checkpoint on the configured regimes (test splits only).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_graphs: bool,
    },
    /// Run memory selection standalone on a checkpoint and one regime.
    ReplaySelect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-based regime index.
        #[arg(long)]
        regime: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        over: Overrides,
    },
}

fn apply_overrides(cfg: &mut ExperimentConfig, over: &Overrides) {
    if let Some(s) = over.seed {
        cfg.trainer.seed = s;
    }
    if let Some(sel) = over.selector {
        cfg.replay.selector = sel;
    }
    if let Some(b) = over.budget {
        cfg.replay.budget_ratio = b;
    }
    if let Some(l) = over.lambda {
        cfg.trainer.lambda = l;
    }
    if let Some(a) = over.alpha {
        cfg.trainer.alpha = a;
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<Vec<RegimeData>> {
    match &cfg.data {
        DataConfig::Synthetic(s) => generate_synthetic(s),
        DataConfig::Dirs(dirs) => dirs.iter().map(|d| load_regime_csv(d)).collect(),
    }
}

fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    cfg.validate()?;
    let mut syn = match cfg.data {
        DataConfig::Synthetic(s) => s,
        DataConfig::Dirs(_) => {
            return Err(Error::Config(
                "generate requires a synthetic data section".into(),
            ))
        }
    };
    if let Some(s) = seed {
        syn.seed = s;
    }
    let regimes = generate_synthetic(&syn)?;
    std::fs::create_dir_all(out)?;
    for rd in &regimes {
        save_regime_dir(&out.join(&rd.name), rd)?;
    }
    println!("wrote {} regime directories under {}", regimes.len(), out.display());
    Ok(())
}

fn cmd_train(config: &Path, out: &Path, over: &Overrides) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let regimes = load_data(&cfg)?;
    let outcome = run_sequence(&cfg, &regimes, Some(out))?;
    for s in &outcome.summary {
        println!(
            "regime {}: {}",
            s.regime,
            serde_json::to_string(&s.metrics)?
        );
    }
    Ok(())
}

fn write_graph_csv(path: &Path, g: &skicl::Mat) -> Result<()> {
    let mut s = String::new();
    for i in 0..g.rows {
        let row: Vec<String> = g.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn cmd_evaluate(config: &Path, checkpoint: &Path, out: &Path, dump_graphs: bool) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    cfg.validate()?;
    let regimes = load_data(&cfg)?;
    let packs = prepare_regimes(&regimes, cfg.model.tau, cfg.model.horizon)?;
    let model_cfg = cfg.model_config(regimes[0].x.rows, regimes[0].prior.edge_kind);
    let mut model = SkiclModel::build(model_cfg, trainer::init_seed(cfg.trainer.seed))?;
    model.params.load_checkpoint(checkpoint)?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for pack in &packs {
        let ev = evaluate_pack(&model, pack)?;
        let mut m = serde_json::Map::new();
        m.insert("regime".into(), (pack.regime + 1).into());
        m.insert("mae".into(), ev.mae.into());
        m.insert("rmse".into(), ev.rmse.into());
        if let (Some(p), Some(r)) = (ev.precision, ev.recall) {
            m.insert("precision".into(), p.into());
            m.insert("recall".into(), r.into());
        }
        rows.push(serde_json::Value::Object(m));
        if dump_graphs {
            write_graph_csv(
                &out.join(format!("mean_graph_regime_{}.csv", pack.regime + 1)),
                &ev.mean_graph,
            )?;
        }
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Array(rows))?;
    std::fs::write(out.join("evaluation.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn cmd_replay_select(
    config: &Path,
    checkpoint: &Path,
    regime: usize,
    out: Option<&Path>,
    over: &Overrides,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let regimes = load_data(&cfg)?;
    if regime == 0 || regime > regimes.len() {
        return Err(Error::Config(format!(
            "regime {regime} out of range 1..={}",
            regimes.len()
        )));
    }
    let packs = prepare_regimes(&regimes, cfg.model.tau, cfg.model.horizon)?;
    let model_cfg = cfg.model_config(regimes[0].x.rows, regimes[0].prior.edge_kind);
    let mut model = SkiclModel::build(model_cfg, trainer::init_seed(cfg.trainer.seed))?;
    model.params.load_checkpoint(checkpoint)?;
    let mut memory = skicl::trainer::MemoryBuffer::default();
    trainer::update_memory(&model, &packs[regime - 1], &cfg, &mut memory)?;
    let entry = match memory.regimes.first() {
        Some(m) => serde_json::json!({
            "regime": regime,
            "budget": m.budget,
            "selected_window_starts": m.selected.iter().map(|&i| packs[regime - 1].train[i].start).collect::<Vec<_>>(),
        }),
        None => serde_json::json!({ "regime": regime, "selector": "none", "selected_window_starts": [] }),
    };
    let json = serde_json::to_string_pretty(&entry)?;
    if let Some(p) = out {
        std::fs::write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Generate { config, out, seed } => cmd_generate(config, out, *seed),
        Cmd::Train {
            config,
            out,
            over,
            dump_graphs: _,
        } => cmd_train(config, out, over),
        Cmd::Evaluate {
            config,
            checkpoint,
            out,
            dump_graphs,
        } => cmd_evaluate(config, checkpoint, out, *dump_graphs),
        Cmd::ReplaySelect {
            config,
            checkpoint,
            regime,
            out,
            over,
        } => cmd_replay_select(config, checkpoint, *regime, out.as_deref(), over),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
