use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use econsim_core::experiment::{
    export_metrics, paired_ttest, per_skill_breakdown, run_eval, tax_gaming_report, train_phase1,
    train_phase2, verify_replay, write_breakdown_csv, write_tick_series, write_training_csv,
    EpisodeReplay, ExperimentConfig, Treatment,
};
use econsim_core::learn::{Checkpoint, IterStats};
use econsim_core::tax::{fit_elasticity, saez_bins, saez_schedule, TaxSchedule};
use econsim_serve::SessionConfig;
use serde::Deserialize;
use tracing::info;

#[derive(Parser)]
#[command(name = "econsim", version, about = "Gather-and-build economy: train, evaluate, analyse, serve")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train agents (phase one) and, for taxed treatments, continue under the tax (phase two).
    Train(TrainArgs),
    /// Evaluate a treatment and export per-episode metrics and replays.
    Eval(EvalArgs),
    /// Verify a replay by re-simulation; optionally export its tick series.
    Replay(ReplayArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    /// Fit the income elasticity on (income, rate) samples and print the Saez schedule.
    SaezFit(SaezFitArgs),
    /// Run the human-play server.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    treatment: Option<Treatment>,
    /// Comma-separated seed list, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.treatment {
            cfg.treatment = t;
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Reuse a phase-one checkpoint instead of training one.
    #[arg(long)]
    phase1: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint; untrained agents are used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Skip writing replay files.
    #[arg(long)]
    no_replays: bool,
}

#[derive(Args)]
struct ReplayArgs {
    file: PathBuf,
    /// Write per-tick coin/labor/utility to this CSV.
    #[arg(long)]
    ticks_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Income, tax and transfers per building-skill rank, averaged over replays.
    Breakdown {
        #[arg(required = true)]
        replays: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare an agent's actual tax with what smoothing its income would have cost.
    Gaming {
        replay: PathBuf,
        #[arg(long)]
        agent: usize,
    },
    /// Paired t-test of a metric between two summary.csv files, matched on (seed, episode).
    Ttest {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "eq_times_prod")]
        metric: String,
    },
}

#[derive(Args)]
struct SaezFitArgs {
    /// CSV with `income` and `rate` columns.
    samples: PathBuf,
    /// Experiment config supplying the bracket cutoffs and fit settings.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080", env = "ECONSIM_ADDR")]
    addr: SocketAddr,
    /// Session config (TOML); the human-play defaults apply when omitted.
    #[arg(long, short, env = "ECONSIM_SESSION")]
    config: Option<PathBuf>,
    /// Where replays and survey answers go.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hide tax information from players.
    #[arg(long)]
    qualification: bool,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Replay(a) => replay(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::SaezFit(a) => saez_fit(a),
        Cmd::Serve(a) => serve(a),
    }
}

fn log_iter(s: &IterStats) {
    info!(
        phase = s.phase,
        iteration = s.iteration,
        samples = s.samples,
        rate_cap = s.rate_cap,
        agent_reward = s.mean_agent_reward,
        planner_reward = s.mean_planner_reward,
        eq_times_prod = s.mean_eq_times_prod,
        "iteration"
    );
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    for &seed in &cfg.seeds {
        let dir = cfg.output_dir.join(cfg.treatment.name()).join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
        let phase1 = match &a.phase1 {
            Some(p) => Checkpoint::load(p).with_context(|| p.display().to_string())?,
            None => {
                let (ckpt, hist) = train_phase1(&cfg, seed, log_iter)?;
                ckpt.save(&dir.join("phase1.ckpt"))?;
                write_training_csv(&dir.join("training-phase1.csv"), &hist)?;
                ckpt
            }
        };
        if cfg.treatment == Treatment::Free && a.phase1.is_none() {
            continue;
        }
        let (ckpt, hist) = train_phase2(&cfg, &phase1, seed, log_iter)?;
        ckpt.save(&dir.join("phase2.ckpt"))?;
        write_training_csv(&dir.join("training-phase2.csv"), &hist)?;
        info!(dir = %dir.display(), "saved");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let ckpt = a
        .checkpoint
        .as_deref()
        .map(|p| Checkpoint::load(p).with_context(|| p.display().to_string()))
        .transpose()?;
    let run = run_eval(&cfg, ckpt.as_ref())?;
    let dir = cfg.output_dir.join(cfg.treatment.name());
    for p in export_metrics(&dir, std::slice::from_ref(&run.summary))? {
        info!(path = %p.display(), "wrote");
    }
    if !a.no_replays {
        let rdir = dir.join("replays");
        fs::create_dir_all(&rdir)?;
        for (i, rep) in run.replays.iter().enumerate() {
            rep.save(&rdir.join(format!("episode-{i:04}-seed-{}.jsonl", rep.header.seed)))?;
        }
    }
    let s = &run.summary;
    println!(
        "{}: {} episodes ({} excluded), productivity {:.2}, equality {:.4}, eq*prod {:.2}, weighted swf {:.3}",
        s.treatment,
        s.episodes.len(),
        s.excluded,
        s.productivity.mean,
        s.equality.mean,
        s.eq_times_prod.mean,
        s.weighted_swf.mean
    );
    Ok(())
}

fn load_replay(p: &Path) -> Result<EpisodeReplay> {
    EpisodeReplay::load(p).with_context(|| p.display().to_string())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let rep = load_replay(&a.file)?;
    verify_replay(&rep).with_context(|| format!("{} does not re-simulate", a.file.display()))?;
    let s = &rep.summary;
    println!(
        "ok: {} ticks, treatment {}, seed {}, productivity {:.2}, equality {:.4}, total tax {:.2}",
        rep.ticks.len(),
        rep.header.treatment,
        rep.header.seed,
        s.productivity,
        s.equality,
        s.total_tax
    );
    if let Some(p) = a.ticks_csv {
        write_tick_series(&p, &rep)?;
    }
    Ok(())
}

fn summary_metric(path: &Path, metric: &str) -> Result<Vec<((u64, usize), f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(seed), Some(episode), Some(value)) = (col("seed"), col("episode"), col(metric)) else {
        bail!("{}: needs seed, episode and {metric} columns", path.display());
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(((row[seed].parse()?, row[episode].parse()?), row[value].parse()?));
    }
    Ok(out)
}

fn analyze(a: Analyze) -> Result<()> {
    match a {
        Analyze::Breakdown { replays, out } => {
            let reps = replays.iter().map(|p| load_replay(p)).collect::<Result<Vec<_>>>()?;
            let rows = per_skill_breakdown(&reps)?;
            write_breakdown_csv(&out, &rows)?;
            for r in &rows {
                println!(
                    "rank {} skill {:.2}: pre-tax {:.2}, tax {:.2}, net tax {:.2}, post-tax {:.2}",
                    r.rank, r.skill, r.pre_tax_income, r.tax_paid, r.net_tax, r.post_tax_income
                );
            }
        }
        Analyze::Gaming { replay, agent } => {
            let r = tax_gaming_report(&load_replay(&replay)?, agent)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Analyze::Ttest { a, b, metric } => {
            let t = paired_ttest(&summary_metric(&a, &metric)?, &summary_metric(&b, &metric)?)?;
            println!(
                "{metric}: n {}, mean diff (a - b) {:.4}, t {:.3}, p {:.4}, one-sided p {:.4}",
                t.n, t.mean_diff, t.t, t.p, t.p_greater
            );
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct Sample {
    income: f64,
    rate: f64,
}

fn saez_fit(a: SaezFitArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut r = csv::Reader::from_path(&a.samples).with_context(|| a.samples.display().to_string())?;
    let samples: Vec<Sample> = r.deserialize().collect::<Result<_, _>>()?;
    let fit = fit_elasticity(samples.iter().map(|s| (s.income, s.rate)), &cfg.saez.fit);
    let (lo, hi) = cfg.saez.elasticity_bounds;
    let e = fit.elasticity.clamp(lo, hi);
    let incomes: Vec<f64> = samples.iter().map(|s| s.income).collect();
    let zero = TaxSchedule::zero(&cfg.env.tax_cutoffs);
    let schedule = saez_schedule(&incomes, e, &zero, cfg.saez.bin_width);
    let bins = saez_bins(&incomes, e, cfg.saez.bin_width);
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "fit": fit,
            "elasticity_used": e,
            "cutoffs": schedule.lower_edges(),
            "rates": schedule.rates(),
            "bins": bins.map(|b| b.income.len()),
        }))?
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg: SessionConfig = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => SessionConfig::default(),
    };
    if a.out.is_some() {
        cfg.output_dir = a.out;
    }
    cfg.qualification |= a.qualification;
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        econsim_serve::serve(listener, cfg).await
    })?;
    Ok(())
}

