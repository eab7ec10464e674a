use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hierank::config::{DataSource, Experiment, LossKind};
use hierank::gradcheck::{self, Mutation};
use hierank::projection::{Checkpoint, OptimizerConfig};
use hierank::{train, BatchMode, Dataset, Error, Split, SynthSpec, TrainConfig};

#[derive(Parser)]
#[command(
    name = "hierank",
    version,
    about = "Hierarchical metric learning with a rank-based loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a projection and write metrics, checkpoint and reports
    Train(TrainArgs),
    /// Print the silhouette report of a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Write a synthetic hierarchical dataset as CSV
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    InitEmb,
    QuadL,
    Rbl,
    RblUnc,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::InitEmb => Experiment::InitEmb,
            ExperimentArg::QuadL => Experiment::QuadL,
            ExperimentArg::Rbl => Experiment::Rbl,
            ExperimentArg::RblUnc => Experiment::RblUnc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Rbl,
    Quadruplet,
}

#[derive(Clone, Copy, ValueEnum)]
enum BatchModeArg {
    Balanced,
    Unconstrained,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Clone, Default)]
struct SynthFlags {
    /// Number of coarse classes
    #[arg(long)]
    coarse: Option<usize>,
    /// Fine classes per coarse class
    #[arg(long)]
    fine: Option<usize>,
    /// Samples per fine class
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    coarse_spread: Option<f64>,
    #[arg(long)]
    fine_spread: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Seed of the generator used by `train`
    #[arg(long)]
    synth_seed: Option<u64>,
}

impl SynthFlags {
    fn is_set(&self) -> bool {
        self.coarse.is_some()
            || self.fine.is_some()
            || self.per_class.is_some()
            || self.dim.is_some()
            || self.coarse_spread.is_some()
            || self.fine_spread.is_some()
            || self.noise.is_some()
            || self.synth_seed.is_some()
    }

    fn apply(&self, spec: &mut SynthSpec) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { spec.$field = v; })*
            };
        }
        set!(coarse => coarse, fine => fine_per_coarse, per_class => per_class, dim => dim,
             coarse_spread => coarse_spread, fine_spread => fine_spread, noise => noise,
             synth_seed => seed);
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment preset applied before the other flags
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    batch_mode: Option<BatchModeArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin_fine: Option<f64>,
    #[arg(long)]
    margin_coarse: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV (`id,labels,f0,...`)
    #[arg(long, conflicts_with = "coarse")]
    data: Option<PathBuf>,
    /// Fine classes per coarse class held out as the unseen-class test set
    #[arg(long)]
    holdout_per_coarse: Option<usize>,
    #[command(flatten)]
    synth: SynthFlags,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `id,split` file written by `train`
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Split to evaluate (train, val, test, alt_test); all rows if omitted
    #[arg(long, requires = "splits")]
    split: Option<String>,
    /// Evaluate the standardized input features without the projection
    #[arg(long)]
    raw_features: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TRIALS)]
    trials: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = args.experiment {
        Experiment::from(e).apply(&mut cfg);
    }
    if let Some(l) = args.loss {
        cfg.loss = match l {
            LossArg::Rbl => LossKind::Rbl,
            LossArg::Quadruplet => LossKind::Quadruplet,
        };
    }
    if let Some(m) = args.batch_mode {
        cfg.batch_mode = match m {
            BatchModeArg::Balanced => BatchMode::Balanced,
            BatchModeArg::Unconstrained => BatchMode::Unconstrained,
        };
    }
    if let Some(o) = args.optimizer {
        let lr = cfg.optimizer.lr();
        cfg.optimizer = match o {
            OptimizerArg::Adam => OptimizerConfig::adam(lr),
            OptimizerArg::Sgd => OptimizerConfig::Sgd { lr },
        };
    }
    if let Some(lr) = args.lr {
        cfg.optimizer = cfg.optimizer.with_lr(lr);
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    set!(batch_size => batch_size, d_out => d_out, patience => patience,
         max_epochs => max_epochs, seed => seed, holdout_per_coarse => holdout_per_coarse);
    if let Some(v) = args.margin_fine {
        cfg.margins.fine = v;
    }
    if let Some(v) = args.margin_coarse {
        cfg.margins.coarse = v;
    }
    if let Some(path) = &args.data {
        cfg.data = DataSource::Csv(path.clone());
    } else if args.synth.is_set() {
        let mut spec = match &cfg.data {
            DataSource::Synth(s) => s.clone(),
            DataSource::Csv(_) => SynthSpec::default(),
        };
        args.synth.apply(&mut spec);
        cfg.data = DataSource::Synth(spec);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let outcome = train::run(&cfg)?;
    let summary = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{summary}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let mut dataset = Dataset::load_csv(&args.data)?;
    if let Some(path) = &args.splits {
        dataset.load_splits(path)?;
    }
    let split = args.split.as_deref().map(str::parse::<Split>).transpose()?;
    let report = train::evaluate_checkpoint(&checkpoint, &dataset, split, args.raw_features)?;
    let text = serde_json::to_string(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let reports = gradcheck::run_all(args.seed, args.trials, Mutation::None)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<18} trials={:<3} max_rel_error={:.3e} {}",
            r.suite,
            r.trials,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check exceeded relative error {:e}",
            gradcheck::TOLERANCE
        )))
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthSpec {
        seed: args.seed,
        ..SynthSpec::default()
    };
    args.synth.apply(&mut spec);
    let dataset = spec.generate()?;
    dataset.save_csv(&args.out)?;
    eprintln!("wrote {} rows to {}", dataset.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
