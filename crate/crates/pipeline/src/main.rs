use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ehrsql::embed::HttpProvider;
use ehrsql::{run, Overrides, RunConfig};
use ehrsql_core::ensemble::VoteRule;
use ehrsql_core::scoring::{render_report, ScoreMode};

#[derive(Parser)]
#[command(name = "ehrsql", version, about = "Reliable text-to-SQL for EHR question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Exemplars per prompt.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    db: Option<PathBuf>,
    /// Comma-separated abstention costs, e.g. `0,5,10`.
    #[arg(long, value_delimiter = ',')]
    costs: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    rule: Option<Rule>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Task,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Strict,
    Majority,
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve exemplars, build prompts and generate predictions for every model.
    Generate(Common),
    /// Validate model subsets by result agreement and report all runs.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Directory of `<model>.json` prediction files; defaults to `<output_dir>/predictions`.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Score one prediction file.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Row label in the report; defaults to the file stem.
        #[arg(long)]
        label: Option<String>,
    },
    /// Run the four prompt configurations for one model.
    Ablate(Common),
    /// Write retrieval-augmented fine-tuning records for the train split.
    ExportRaft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed question files through an embedding service and write a vector file.
    EmbedIndex {
        #[arg(long)]
        model_id: String,
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        url: String,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Question files to index.
        #[arg(required = true)]
        questions: Vec<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        config.apply(&Overrides {
            n: self.n,
            parallelism: self.parallelism,
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            db: self.db.clone(),
            costs: self.costs.clone(),
            scoring_mode: self.mode.map(|m| match m {
                Mode::Task => ScoreMode::Task,
                Mode::PaperLiteral => ScoreMode::PaperLiteral,
            }),
            rule: self.rule.map(|r| match r {
                Rule::Strict => VoteRule::Strict,
                Rule::Majority => VoteRule::Majority,
            }),
        });
        Ok(config)
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate(common) => {
            let config = common.load()?;
            for r in run::run_generate(&config)? {
                let nulls = r.answers().filter(|(_, a)| a.is_null()).count();
                let errors = r.outcomes.iter().filter(|(_, e)| e.is_some()).count();
                println!("{}: {} predictions, {nulls} null, {errors} errors", r.model_id, r.outcomes.len());
            }
        }
        Command::Ensemble { common, predictions } => {
            let config = common.load()?;
            let reports = run::run_ensemble_and_score(&config, predictions.as_deref())?;
            print!("{}", render_report(&reports, &config.costs));
        }
        Command::Score { common, predictions, label } => {
            let config = common.load()?;
            let label = label.unwrap_or_else(|| {
                predictions.file_stem().map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned())
            });
            let report = run::run_score(&config, &predictions, &label)?;
            print!("{}", render_report(&[report], &config.costs));
        }
        Command::Ablate(common) => {
            let config = common.load()?;
            let reports = run::run_ablation(&config)?;
            print!("{}", render_report(&reports, &config.costs));
        }
        Command::ExportRaft { common, out } => {
            let config = common.load()?;
            let (path, count) = run::export_raft(&config, out.as_deref())?;
            println!("wrote {count} records to {}", path.display());
        }
        Command::EmbedIndex { model_id, dims, url, batch_size, out, questions } => {
            let provider = HttpProvider::new(&model_id, dims, &url, batch_size)?;
            let count = run::embed_index(&provider, &questions, &out)?;
            println!("wrote {count} vectors to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
