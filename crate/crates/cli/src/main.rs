use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kgrl_core::agent::{Agent, Variant};
use kgrl_core::config::{ConfigError, RunConfig};
use kgrl_core::data::{save_dataset_dir, DataError, Dataset, Split};
use kgrl_core::env::{auc, fit_lmf, EnvError};
use kgrl_core::eval::{
    bench_search, evaluate, log_log_slope, summarize, write_bench_csv, EvalError, MetricReport, Policy, SearchMode,
};
use kgrl_core::pipeline::{self, PipelineError};
use kgrl_core::training::TrainError;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "kgrl", version, about = "Knowledge-graph guided actor-critic recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file or `dotted.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `dotted.key=value` assignments, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Local knowledge network update cadence, in critic updates.
    #[arg(long)]
    lkg_every: Option<usize>,
    /// `learned` or `formula`.
    #[arg(long)]
    q_mode: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut sets = self.set.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={}", s));
        }
        if let Some(k) = self.lkg_every {
            sets.push(format!("train.lkg.every={}", k));
        }
        if let Some(q) = &self.q_mode {
            sets.push(format!("agent.q_mode={}", q));
        }
        RunConfig::load(self.config.as_deref(), &sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read a ratings file (and optional triples), preprocess and split it.
    Ingest(Common),
    /// Generate the planted synthetic dataset.
    Synth(Common),
    /// Fit the LMF click model.
    FitSim(Common),
    /// Train one agent variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate checkpoints, or the random/oracle baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// `agent`, `random` or `oracle`.
        #[arg(long, default_value = "agent")]
        policy: String,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Train and evaluate every configured variant for every configured seed.
    Ablate(Common),
    /// Time local-subgraph against full-graph search.
    Bench(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::InvalidArgument(_) => EXIT_CONFIG,
                PipelineError::Data(_) | PipelineError::Env(EnvError::Data(_)) => EXIT_DATA,
                PipelineError::Train(TrainError::Env(EnvError::Data(_))) => EXIT_DATA,
                PipelineError::Eval(EvalError::Env(EnvError::Data(_))) => EXIT_DATA,
                _ => 1,
            };
        }
    }
    1
}

fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git").args(["describe", "--always", "--dirty", "--tags"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

struct Run {
    command: &'static str,
    cfg: RunConfig,
    out: PathBuf,
    started: f64,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, common: &Common) -> Result<Self> {
        let cfg = common.resolve()?;
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        Ok(Self { command, cfg, out: common.out.clone(), started: unix_time(), outputs: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn finish(self, summary: serde_json::Value) -> Result<()> {
        let manifest = json!({
            "command": self.command,
            "config": self.cfg,
            "git_describe": git_describe(),
            "started_unix": self.started,
            "finished_unix": unix_time(),
            "outputs": self.outputs,
            "summary": summary,
        });
        let path = self.out.join("manifest.json");
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        f.flush()?;
        println!("{}", serde_json::to_string_pretty(&manifest["summary"])?);
        Ok(())
    }
}

fn variant_of(arg: &Option<String>, cfg: &RunConfig) -> Result<Variant> {
    match arg {
        Some(v) => Ok(v.parse::<Variant>().map_err(|e| ConfigError::Invalid(e.to_string()))?),
        None => Ok(cfg.agent.variant),
    }
}

fn report_json(r: &MetricReport) -> serde_json::Value {
    json!({"precision": r.precision, "recall": r.recall, "ndcg": r.ndcg, "n_users": r.n_users, "skipped": r.skipped})
}

fn dataset_summary(ds: &Dataset) -> serde_json::Value {
    let [train, validation, test] = ds.split_counts();
    json!({
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "interactions": ds.interactions.len(),
        "triples": ds.triples.len(),
        "train": train,
        "validation": validation,
        "test": test,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(c) => {
            let run = Run::start("ingest", &c)?;
            let ds = pipeline::ingest(&run.cfg)?;
            save_dataset(run, ds)
        }
        Command::Synth(c) => {
            let run = Run::start("synth", &c)?;
            let ds = pipeline::synthesize(&run.cfg)?;
            save_dataset(run, ds)
        }
        Command::FitSim(c) => {
            let mut run = Run::start("fit-sim", &c)?;
            let ds = pipeline::dataset(&run.cfg)?;
            let fit = fit_lmf(&ds, &run.cfg.lmf, run.cfg.seed).map_err(PipelineError::from)?;
            serde_json::to_writer(run.create("lmf.json")?, &fit)?;
            let mut w = csv::Writer::from_writer(run.create("lmf_loss.csv")?);
            w.write_record(["epoch", "loss"])?;
            for (e, l) in fit.loss_curve.iter().enumerate() {
                w.write_record([e.to_string(), format!("{:?}", l)])?;
            }
            w.flush()?;
            let summary = json!({
                "final_loss": fit.loss_curve.last(),
                "auc_train": auc(&fit.model, &ds, Split::Train),
                "auc_validation": auc(&fit.model, &ds, Split::Validation),
                "auc_test": auc(&fit.model, &ds, Split::Test),
            });
            run.finish(summary)
        }
        Command::Train { common, variant } => {
            let mut run = Run::start("train", &common)?;
            let variant = variant_of(&variant, &run.cfg)?;
            let prep = pipeline::prepare(&run.cfg)?;
            let every = run.cfg.checkpoint_every;
            let out = run.out.clone();
            let mut written = Vec::new();
            let (trainer, log) = pipeline::train(&run.cfg, &prep, variant, run.cfg.seed, &mut |ep, t| {
                if every > 0 && ep % every == 0 {
                    let name = format!("checkpoints/episode_{:06}.ckpt", ep);
                    fs::create_dir_all(out.join("checkpoints"))?;
                    t.agent.write_checkpoint(BufWriter::new(File::create(out.join(&name))?))?;
                    written.push(name);
                }
                Ok(())
            })?;
            run.outputs.extend(written);
            trainer.agent.write_checkpoint(run.create("checkpoint.ckpt")?)?;
            log.write_steps_csv(run.create("train_steps.csv")?)?;
            log.write_episodes_csv(run.create("train_episodes.csv")?)?;
            let n = log.episodes.len();
            let w = n.min(10);
            let summary = json!({
                "variant": variant,
                "episodes": n,
                "warmup_steps": log.warmup_steps,
                "first10_mean_reward": log.mean_episode_reward(0..w),
                "last10_mean_reward": log.mean_episode_reward(n - w..n),
                "critic_median_ns": pipeline::median(&log.critic_nanos),
            });
            run.finish(summary)
        }
        Command::Evaluate { common, checkpoint, policy, variant } => {
            let mut run = Run::start("evaluate", &common)?;
            let variant = variant_of(&variant, &run.cfg)?;
            let prep = pipeline::prepare(&run.cfg)?;
            let (k, split, threads) = (run.cfg.eval.k, run.cfg.eval.split, run.cfg.eval.threads);
            let mut agents = Vec::new();
            match policy.as_str() {
                "agent" => {
                    if checkpoint.is_empty() {
                        return Err(ConfigError::Invalid("--checkpoint is required for the agent policy".into()).into());
                    }
                    for path in &checkpoint {
                        let template = pipeline::new_agent(&run.cfg, &prep, variant, run.cfg.seed)?;
                        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                        agents.push(Agent::read_checkpoint(template.cfg, template.history, BufReader::new(file))?);
                    }
                }
                "random" | "oracle" => {}
                other => return Err(ConfigError::Invalid(format!("unknown policy {:?}", other)).into()),
            }
            let policies: Vec<Policy> = match policy.as_str() {
                "agent" => agents.iter().map(Policy::Agent).collect(),
                "random" => run.cfg.eval.seeds.iter().map(|&seed| Policy::Random { seed }).collect(),
                _ => vec![Policy::Oracle],
            };
            let mut reports = Vec::new();
            let mut w = csv::Writer::from_writer(run.create("metrics.csv")?);
            w.write_record(["run", "user", "precision", "recall", "ndcg"])?;
            for (n, p) in policies.into_iter().enumerate() {
                let (report, users) = evaluate(&prep.env, &prep.dataset, p, split, k, threads)?;
                for u in users {
                    let f = |x: f64| format!("{:?}", x);
                    w.write_record([n.to_string(), u.user.to_string(), f(u.precision), f(u.recall), f(u.ndcg)])?;
                }
                reports.push(report);
            }
            w.flush()?;
            let summary = json!({
                "policy": policy,
                "runs": reports.iter().map(report_json).collect::<Vec<_>>(),
                "mean_std": summarize(&reports),
            });
            run.finish(summary)
        }
        Command::Ablate(c) => {
            let mut run = Run::start("ablate", &c)?;
            let prep = pipeline::prepare(&run.cfg)?;
            let mut rows = Vec::new();
            let mut by_variant = serde_json::Map::new();
            for &variant in &run.cfg.eval.variants {
                let mut reports = Vec::new();
                for &seed in &run.cfg.eval.seeds {
                    let (row, report) = pipeline::run_ablation(&run.cfg, &prep, variant, seed)?;
                    eprintln!(
                        "{} seed {}: precision {:.4} ndcg {:.4} critic median {} ns",
                        variant.as_str(),
                        seed,
                        row.precision,
                        row.ndcg,
                        row.critic_median_ns
                    );
                    rows.push(row);
                    reports.push(report);
                }
                by_variant.insert(variant.as_str().to_string(), json!(summarize(&reports)));
            }
            let mut w = csv::Writer::from_writer(run.create("ablation.csv")?);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            run.finish(serde_json::Value::Object(by_variant))
        }
        Command::Bench(c) => {
            let mut run = Run::start("bench", &c)?;
            let bcfg = kgrl_core::eval::BenchConfig { seed: run.cfg.seed, ..run.cfg.bench.clone() };
            let records = bench_search(&bcfg)?;
            write_bench_csv(run.create("bench.csv")?, &records)?;
            let mut slopes = Vec::new();
            for level in 1..=bcfg.levels {
                for mode in [SearchMode::Local, SearchMode::Global] {
                    let time = log_log_slope(&records, mode, level, |r| r.wall_ns as f64);
                    let nodes = log_log_slope(&records, mode, level, |r| r.nodes_touched as f64);
                    slopes.push(json!({"mode": mode, "level": level, "time_slope": time, "nodes_slope": nodes}));
                }
            }
            run.finish(json!({ "slopes": slopes }))
        }
    }
}

fn save_dataset(mut run: Run, ds: Dataset) -> Result<()> {
    let dir = run.out.join("data");
    save_dataset_dir(&dir, &ds)?;
    run.outputs.push("data".into());
    let summary = dataset_summary(&ds);
    run.finish(summary)
}
