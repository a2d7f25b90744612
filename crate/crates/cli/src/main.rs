//! `specxplain`: spectrogram preprocessing, CNN training and explanations
//! from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, SEED_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "specxplain",
    version,
    about = "Cough spectrogram classification with explanations"
)]
struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file and SPECXPLAIN_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// WAV files to 128-row Mel-spectrogram PNGs plus a manifest.
    Preprocess(PreprocessArgs),
    /// Writes each WAV plus its augmented variants.
    Augment(AugmentArgs),
    /// Splits a manifest, trains the CNN and saves the best checkpoint.
    Train(TrainArgs),
    /// Scores a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// SmoothGrad, Grad-CAM or LIME explanation of one image.
    Explain(ExplainArgs),
    /// Activation-maximization images for filters or classes.
    VisualizeFilters(FiltersArgs),
    /// Synthetic images with planted class patches and their masks.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Directory with `covid/` and `non_covid/` subdirectories of WAVs, or
    /// any WAV directory together with `--label`.
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label every WAV under `audio_dir` with this class.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<specxplain::dataset::Label>,
    /// Resize images to this width instead of the configured one.
    #[arg(long)]
    pub target_width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest CSV (`path,label`) of spectrogram PNGs.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also write `evaluation.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Smoothgrad,
    Gradcam,
    Lime,
}

/// One class or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassArg {
    One(specxplain::dataset::Label),
    Both,
}

impl ClassArg {
    pub fn labels(self) -> Vec<specxplain::dataset::Label> {
        match self {
            ClassArg::One(label) => vec![label],
            ClassArg::Both => specxplain::dataset::Label::ALL.to_vec(),
        }
    }
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Spectrogram PNG.
    pub image: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// covid, non_covid, 0, 1 or both.
    #[arg(long, default_value = "both", value_parser = parse_class)]
    pub class: ClassArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SmoothGrad sample count.
    #[arg(long)]
    pub n: Option<usize>,
    /// SmoothGrad noise level, a fraction of the input range.
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// LIME perturbation count.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// LIME segments kept.
    #[arg(long)]
    pub n_features: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FiltersArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Convolution layer 1, 2 or 3, or `dense` for the class outputs.
    #[arg(long, value_parser = parse_layer)]
    pub layer: LayerArg,
    /// 1-based inclusive range `a..b` or a single index. Default: the last five.
    #[arg(long, value_parser = parse_filters)]
    pub filters: Option<(usize, usize)>,
    /// Class for `--layer dense`: covid, non_covid, 0, 1 or both.
    #[arg(long, default_value = "both", value_parser = parse_class)]
    pub class: ClassArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerArg {
    Conv(usize),
    Dense,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Images per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// 128x820 images instead of the configured geometry.
    #[arg(long)]
    pub full_width: bool,
}

fn parse_label(s: &str) -> Result<specxplain::dataset::Label, String> {
    match s {
        "0" => Ok(specxplain::dataset::Label::Covid),
        "1" => Ok(specxplain::dataset::Label::NonCovid),
        other => other.parse(),
    }
}

fn parse_class(s: &str) -> Result<ClassArg, String> {
    if s == "both" {
        Ok(ClassArg::Both)
    } else {
        parse_label(s)
            .map(ClassArg::One)
            .map_err(|e| format!("{e}, 0, 1 or both"))
    }
}

fn parse_layer(s: &str) -> Result<LayerArg, String> {
    match s {
        "dense" => Ok(LayerArg::Dense),
        _ => match s.parse::<usize>() {
            Ok(n @ 1..=3) => Ok(LayerArg::Conv(n)),
            _ => Err(format!("layer must be 1, 2, 3 or dense, got {s:?}")),
        },
    }
}

fn parse_filters(s: &str) -> Result<(usize, usize), String> {
    let index = |t: &str| {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| format!("filter indices are 1-based integers, got {t:?}"))
    };
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (index(a)?, index(b.trim_start_matches('='))?),
        None => {
            let v = index(s)?;
            (v, v)
        }
    };
    if a > b {
        return Err(format!("empty filter range {s:?}"));
    }
    Ok((a, b))
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        "warn"
    } else {
        match cli.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut config = RunConfig::resolve(cli.config.as_deref(), env_seed.as_deref(), cli.seed)?;
    match &cli.command {
        Some(Command::Train(a)) => {
            let t = &mut config.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
            t.early_stop_patience = a.patience.unwrap_or(t.early_stop_patience);
            if let Some(f) = a.test_fraction {
                config.split.test_fraction = f;
            }
        }
        Some(Command::Explain(a)) => {
            config.smoothgrad.n = a.n.unwrap_or(config.smoothgrad.n);
            config.smoothgrad.noise_level = a.noise_level.unwrap_or(config.smoothgrad.noise_level);
            config.lime.n_samples = a.n_samples.unwrap_or(config.lime.n_samples);
            config.lime.n_features = a.n_features.unwrap_or(config.lime.n_features);
        }
        Some(Command::VisualizeFilters(a)) => {
            config.actmax.steps = a.steps.unwrap_or(config.actmax.steps);
            config.actmax.step_size = a.step_size.unwrap_or(config.actmax.step_size);
        }
        Some(Command::Preprocess(a)) => {
            config.audio.target_width = a.target_width.unwrap_or(config.audio.target_width);
        }
        Some(Command::Synth(a)) => {
            if a.full_width {
                config.synth = specxplain::dataset::SyntheticSpec {
                    per_class: config.synth.per_class,
                    ..specxplain::dataset::SyntheticSpec::full_width()
                };
            }
            if let Some(n) = a.per_class {
                config.synth.per_class = [n, n];
            }
        }
        Some(Command::Augment(_)) | Some(Command::Evaluate(_)) | None => {}
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let Some(command) = cli.command else {
        unreachable!("checked in main");
    };
    match command {
        Command::Preprocess(a) => commands::preprocess::run(&a, &config),
        Command::Augment(a) => commands::augment::run(&a, &config),
        Command::Train(a) => commands::train::run(&a, &config),
        Command::Evaluate(a) => commands::train::evaluate(&a, &config),
        Command::Explain(a) => commands::explain::run(&a, &config),
        Command::VisualizeFilters(a) => commands::filters::run(&a, &config),
        Command::Synth(a) => commands::synth::run(&a, &config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.command.is_none() && !cli.print_config {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        let _ = cmd.print_help();
        return ExitCode::from(2);
    }
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_ranges_are_one_based_inclusive() {
        assert_eq!(parse_filters("60..64"), Ok((60, 64)));
        assert_eq!(parse_filters("1..=16"), Ok((1, 16)));
        assert_eq!(parse_filters("7"), Ok((7, 7)));
        assert!(parse_filters("0..3").is_err());
        assert!(parse_filters("5..2").is_err());
        assert!(parse_filters("a..b").is_err());
    }

    #[test]
    fn class_and_layer_values() {
        use specxplain::dataset::Label;
        assert_eq!(parse_class("0"), Ok(ClassArg::One(Label::Covid)));
        assert_eq!(parse_class("non_covid"), Ok(ClassArg::One(Label::NonCovid)));
        assert_eq!(parse_class("both").unwrap().labels().len(), 2);
        assert!(parse_class("2").is_err());
        assert_eq!(parse_layer("3"), Ok(LayerArg::Conv(3)));
        assert_eq!(parse_layer("dense"), Ok(LayerArg::Dense));
        assert!(parse_layer("4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
