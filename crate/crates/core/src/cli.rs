//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for usage and input
//! errors. Everything a command prints to stdout is a function of its inputs,
//! config and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::checkpoint;
use crate::config::{self, Ablation, Settings};
use crate::error::{Result, RosaError};
use crate::eval::{self, ProtocolResult};
use crate::gemd::{self, rectify_cost};
use crate::graph::{self, Graph};
use crate::trainer::{self, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "rosa", version, about = "Graph contrastive pretraining with a graph-aware earth mover's distance")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Dataset directory (edges.tsv, features.csv, optional labels.txt and splits.txt,
    /// or a LINQS `*.content` / `*.cites` pair).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "full")]
    pub ablation: Ablation,
    /// Config override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain an encoder; writes checkpoint.txt, loss.csv, trace.csv and config.txt.
    Pretrain,
    /// Linear-probe accuracy of a checkpoint's embeddings; writes embeddings.csv.
    Evaluate {
        /// Defaults to `<out>/checkpoint.txt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Probe the raw node features instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        raw: bool,
    },
    /// g-EMD between two views; writes D.csv (rectified cost) and gamma.csv.
    Emd {
        /// Directory holding the first view's features.csv.
        #[arg(long)]
        view_a: PathBuf,
        #[arg(long)]
        view_b: PathBuf,
        /// Hop-distance matrix CSV, rows for view A and columns for view B. Zero when omitted.
        #[arg(long)]
        hops: Option<PathBuf>,
    },
    /// Write a stochastic block model dataset to `--out`.
    GenData {
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 30)]
        per_block: usize,
        #[arg(long, default_value_t = 0.2)]
        p_in: f64,
        #[arg(long, default_value_t = 0.02)]
        p_out: f64,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Pretrain and evaluate every ablation mode into `<out>/<mode>/`.
    Ablate {
        /// Skip the probe after each run.
        #[arg(long)]
        no_eval: bool,
    },
}

impl GlobalArgs {
    /// File settings, then `--set` overrides, then `--seed`, then the ablation.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| RosaError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            s.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            s.train.seed = seed;
        }
        self.ablation.apply(&mut s.train);
        s.validate()?;
        Ok(s)
    }

    fn dataset(&self) -> Result<Graph> {
        let dir = self.data.as_ref().ok_or_else(|| RosaError::Usage("--data DIR is required".into()))?;
        graph::load_dataset(dir)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RosaError::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| RosaError::io(path, e))
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| RosaError::io("<stdout>", e))
}

pub fn accuracy_line(r: &ProtocolResult) -> String {
    format!("accuracy: {:.4} ± {:.4}", 100.0 * r.mean, 100.0 * r.std)
}

fn config_echo(s: &Settings, ablation: Ablation) -> String {
    format!("# ablation = {ablation}\n{}", config::render(s))
}

pub fn run_pretrain(g: &Graph, s: &Settings, ablation: Ablation, out_dir: &Path, out: &mut dyn Write) -> Result<TrainOutcome> {
    create_dir(out_dir)?;
    write_file(&out_dir.join("config.txt"), &config_echo(s, ablation))?;
    let outcome = trainer::pretrain_with(g, &s.train, |r| {
        let _ = writeln!(out, "epoch {} loss {:.6}", r.epoch, r.loss);
    })?;
    checkpoint::save(&outcome.best, &out_dir.join("checkpoint.txt"))?;
    write_file(&out_dir.join("loss.csv"), &trainer::loss_csv(&outcome.history))?;
    write_file(&out_dir.join("trace.csv"), &trainer::trace_csv(&outcome.history))?;
    emit(
        out,
        format_args!("best epoch {} of {}{}", outcome.best_epoch, outcome.history.len(), if outcome.stopped_early { " (early stop)" } else { "" }),
    )?;
    Ok(outcome)
}

pub fn run_evaluate(g: &Graph, s: &Settings, model_path: Option<&Path>, out_dir: &Path, out: &mut dyn Write) -> Result<ProtocolResult> {
    let embeddings = match model_path {
        Some(path) => {
            let model = checkpoint::load(path)?;
            if model.encoder.input_dim() != g.feature_dim() {
                return Err(RosaError::Usage(format!(
                    "checkpoint {} expects {} input features, dataset has {}",
                    path.display(),
                    model.encoder.input_dim(),
                    g.feature_dim()
                )));
            }
            eval::extract_embeddings(&model, g)?
        }
        None => g.features().clone(),
    };
    let result = eval::evaluate_embeddings(&embeddings, g, &s.probe)?;
    create_dir(out_dir)?;
    eval::write_embeddings(&embeddings, &out_dir.join("embeddings.csv"))?;
    emit(out, format_args!("{}", accuracy_line(&result)))?;
    Ok(result)
}

pub fn run_emd(s: &Settings, view_a: &Path, view_b: &Path, hops: Option<&Path>, out_dir: &Path, out: &mut dyn Write) -> Result<f64> {
    let zx = graph::read_matrix_csv(&view_a.join("features.csv"))?;
    let zy = graph::read_matrix_csv(&view_b.join("features.csv"))?;
    if zx.ncols() != zy.ncols() {
        return Err(RosaError::Usage(format!("views have feature dimensions {} and {}", zx.ncols(), zy.ncols())));
    }
    let psi = match hops {
        Some(p) => graph::read_matrix_csv(p)?,
        None => Array2::zeros((zx.nrows(), zy.nrows())),
    };
    if psi.dim() != (zx.nrows(), zy.nrows()) {
        return Err(RosaError::Usage(format!("hop matrix is {:?}, views have {} and {} nodes", psi.dim(), zx.nrows(), zy.nrows())));
    }
    let report = gemd::g_emd_report(&zx, &zy, &psi, &s.train.loss.gemd)?;
    create_dir(out_dir)?;
    let rectified = rectify_cost(&report.cost, &report.scale)?;
    write_file(&out_dir.join("D.csv"), &graph::matrix_to_csv(&rectified))?;
    write_file(&out_dir.join("gamma.csv"), &graph::matrix_to_csv(&report.plan.gamma))?;
    emit(out, format_args!("g-emd: {:?}", report.plan.value))?;
    Ok(report.plan.value)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let global = &cli.global;
    match &cli.command {
        Command::Pretrain => {
            let g = global.dataset()?;
            let s = global.settings()?;
            run_pretrain(&g, &s, global.ablation, &global.out, out)?;
        }
        Command::Evaluate { checkpoint, raw } => {
            let g = global.dataset()?;
            let s = global.settings()?;
            let default = global.out.join("checkpoint.txt");
            let model = if *raw { None } else { Some(checkpoint.as_deref().unwrap_or(&default)) };
            run_evaluate(&g, &s, model, &global.out, out)?;
        }
        Command::Emd { view_a, view_b, hops } => {
            let s = global.settings()?;
            run_emd(&s, view_a, view_b, hops.as_deref(), &global.out, out)?;
        }
        Command::GenData {
            blocks,
            per_block,
            p_in,
            p_out,
            dim,
            noise,
        } => {
            let seed = global.seed.unwrap_or(0);
            let g = graph::generate_sbm(*blocks, *per_block, *p_in, *p_out, *dim, *noise, seed)?;
            graph::write_graph(&g, &global.out)?;
            emit(out, format_args!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), global.out.display()))?;
        }
        Command::Ablate { no_eval } => {
            let g = global.dataset()?;
            for mode in Ablation::ALL {
                let args = GlobalArgs {
                    ablation: mode,
                    ..global.clone()
                };
                let s = args.settings()?;
                let dir = global.out.join(mode.to_string());
                emit(out, format_args!("== {mode}"))?;
                let outcome = run_pretrain(&g, &s, mode, &dir, out)?;
                if !no_eval {
                    let model = dir.join("checkpoint.txt");
                    run_evaluate(&g, &s, Some(&model), &dir, out)?;
                }
                let last = outcome.history.last().map_or(f64::NAN, |r| r.loss);
                emit(out, format_args!("{mode}: final loss {last:.6}"))?;
            }
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
