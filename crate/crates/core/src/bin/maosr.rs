use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maosr::harness::{
    compare_runs, emit_figures, run_pipeline, write_comparison, CompareMetric, ExperimentConfig, Stage,
};
use maosr::metrics::EvalReport;
use maosr::model::Variant;
use maosr::scoring::Scorer;
use maosr::splits::CorrelationKind;
use maosr::{Error, Result};

#[derive(Parser)]
#[command(name = "maosr", version, about = "Multi-attribute open-set recognition benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the dataset.
    Generate(PipelineArgs),
    /// Generate the dataset and train one model per seed.
    Train(PipelineArgs),
    /// Train as needed and write prediction dumps.
    Score(PipelineArgs),
    /// Score as needed, evaluate every seed and aggregate.
    Evaluate(PipelineArgs),
    /// Full pipeline including figures.
    Run(PipelineArgs),
    /// Tabulate one metric over evaluated experiment directories.
    Compare(CompareArgs),
    /// Render heatmaps from a report JSON.
    Figures(FiguresArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Experiment config JSON; flags override its fields.
    config_file: Option<PathBuf>,
    /// Built-in preset name or preset JSON path.
    #[arg(long)]
    dataset: Option<String>,
    /// Correlation configuration: uc, sc or c.
    #[arg(long = "config")]
    correlation: Option<CorrelationKind>,
    /// Baseline scorers, comma separated: msp, mls, openmax.
    #[arg(long = "baseline", value_delimiter = ',')]
    baselines: Vec<Scorer>,
    /// shared or duplicated.
    #[arg(long)]
    variant: Option<Variant>,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    samples_per_combination: Option<usize>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Asset root; overrides the environment variable.
    #[arg(long)]
    asset_root: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment directories (`<out>/experiments/<id>`), one column each.
    #[arg(required = true)]
    experiments: Vec<PathBuf>,
    /// avg_oscr, avg_auroc, oscr_complex, oscr_simple, oscr_<m> or auroc_<m>.
    #[arg(long, default_value = "avg_oscr")]
    metric: CompareMetric,
    /// Also write `<stem>.csv` and `<stem>.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FiguresArgs {
    report: PathBuf,
    /// Output directory; defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PipelineArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config_file, &self.dataset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(dataset)) => {
                let mut c = ExperimentConfig::new(dataset, CorrelationKind::Uncorrelated);
                c.correlation = None;
                c
            }
            (None, None) => return Err(Error::Config("give a config file or --dataset".into())),
        };
        if let Some(d) = self.dataset {
            config.dataset = d;
        }
        if self.correlation.is_some() {
            config.correlation = self.correlation;
        }
        if !self.baselines.is_empty() {
            config.baselines = self.baselines;
        }
        if let Some(v) = self.variant {
            config.variant = v;
        }
        if !self.seeds.is_empty() {
            config.seeds = self.seeds;
        }
        if self.epochs.is_some() {
            config.training.epochs = self.epochs;
        }
        if self.samples_per_combination.is_some() {
            config.samples_per_combination = self.samples_per_combination;
        }
        if let Some(o) = self.out {
            config.output = o;
        }
        if self.asset_root.is_some() {
            config.asset_root = self.asset_root;
        }
        Ok(config)
    }
}

fn pipeline(args: PipelineArgs, until: Stage) -> Result<()> {
    let config = args.into_config().map_err(|e| e.in_stage("config"))?;
    if let Some(outcome) = run_pipeline(&config, until)? {
        for (scorer, report) in &outcome.reports {
            let per_attr: Vec<String> = report
                .attributes
                .iter()
                .map(|a| format!("{} {:.1}", a.name, 100.0 * a.oscr))
                .collect();
            println!(
                "{} {scorer}: avg OSCR {:.1} avg AUROC {:.1} ({})",
                config.label()?,
                100.0 * report.average_oscr,
                100.0 * report.average_auroc,
                per_attr.join(", ")
            );
        }
        println!("{}", outcome.experiment_dir.display());
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => pipeline(a, Stage::Generate),
        Command::Train(a) => pipeline(a, Stage::Train),
        Command::Score(a) => pipeline(a, Stage::Score),
        Command::Evaluate(a) => pipeline(a, Stage::Aggregate),
        Command::Run(a) => pipeline(a, Stage::Figures),
        Command::Compare(a) => {
            let table = compare_runs(&a.experiments, a.metric).map_err(|e| e.in_stage("compare"))?;
            print!("{}", table.to_text());
            if let Some(stem) = a.out {
                write_comparison(&table, &stem).map_err(|e| e.in_stage("compare"))?;
            }
            Ok(())
        }
        Command::Figures(a) => {
            let report = EvalReport::load(&a.report).map_err(|e| e.in_stage("figures"))?;
            let dir = a
                .out
                .or_else(|| a.report.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            for p in emit_figures(&report, &dir).map_err(|e| e.in_stage("figures"))? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
