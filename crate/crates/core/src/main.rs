use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use autojudge::corpus::{minicorpus, write_dialogues};
use autojudge::judge::{NegativeKind, SplitMode};
use autojudge::pipeline::{run_all, run_stage, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "autojudge", version, about = "Train dialogue systems, collect ratings and fit a dialogue judge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct JudgeFlags {
    /// convo or system.
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated negative kinds, e.g. EMPTY,REPEAT_PREV.
    #[arg(long, value_delimiter = ',')]
    negatives: Option<Vec<NegativeKind>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured system on the corpus.
    Train(Common),
    /// Let each system continue sampled contexts.
    Selftalk(Common),
    /// Collect ratings: simulated, or over HTTP until interrupted.
    Serve(Common),
    /// Aggregate ratings with MACE and build the judge dataset.
    Aggregate(Common),
    /// Fit the judge on all aggregated labels.
    JudgeTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        judge: JudgeFlags,
    },
    /// Cross-validate the judge.
    JudgeEval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        judge: JudgeFlags,
    },
    /// Compare judge-selected responses against single systems.
    Rerank(Common),
    /// Policy-gradient training with the judge as reward.
    Rl(Common),
    /// Render the RL trace as SVG.
    Plot(Common),
    /// Summarise every report into report.md and report.json.
    Report(Common),
    /// Run every stage in order (requires simulated annotation).
    All(Common),
    /// Write the bundled mini-corpus, or a freshly generated one.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Number of dialogues; the bundled corpus when absent.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = minicorpus::BUNDLED_SEED)]
        seed: u64,
    },
}

fn load(common: &Common, judge: Option<&JudgeFlags>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = judge {
        if let Some(s) = j.split {
            cfg.judge.split = s;
        }
        if let Some(k) = j.k {
            cfg.judge.k = k;
        }
        if let Some(n) = &j.negatives {
            cfg.judge.negatives = n.clone();
        }
    }
    cfg.validate().context("validating configuration")?;
    Ok(cfg)
}

fn stage(s: Stage, common: &Common, judge: Option<&JudgeFlags>) -> anyhow::Result<()> {
    let cfg = load(common, judge)?;
    let m = run_stage(s, &cfg).with_context(|| format!("stage {s}"))?;
    for (path, hash) in &m.outputs {
        println!("{}  {}", &hash[..12], cfg.work_dir.join(path).display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => stage(Stage::Train, &c, None),
        Command::Selftalk(c) => stage(Stage::SelfTalk, &c, None),
        Command::Serve(c) => stage(Stage::Serve, &c, None),
        Command::Aggregate(c) => stage(Stage::Aggregate, &c, None),
        Command::JudgeTrain { common, judge } => stage(Stage::JudgeTrain, &common, Some(&judge)),
        Command::JudgeEval { common, judge } => stage(Stage::JudgeEval, &common, Some(&judge)),
        Command::Rerank(c) => stage(Stage::Rerank, &c, None),
        Command::Rl(c) => stage(Stage::Rl, &c, None),
        Command::Plot(c) => stage(Stage::Plot, &c, None),
        Command::Report(c) => stage(Stage::Report, &c, None),
        Command::All(c) => {
            let cfg = load(&c, None)?;
            run_all(&cfg)?;
            let report = cfg.work_dir.join(autojudge::pipeline::REPORT_MD);
            print!("{}", std::fs::read_to_string(&report).with_context(|| report.display().to_string())?);
            Ok(())
        }
        Command::GenCorpus { out, n, seed } => {
            let dialogues = match n {
                Some(n) => minicorpus::generate(n, seed),
                None => minicorpus::bundled()?,
            };
            write_dialogues(&out, &dialogues)?;
            println!("wrote {} dialogues to {}", dialogues.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "autojudge=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
