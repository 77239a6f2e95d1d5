use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use qcorr::estimators::{Encoding, DESK_CONV_CHANNELS, DESK_HIDDEN_WIDTHS};
use qcorr::harness::{
    cmd_gen_data, cmd_maxlik, cmd_predict, cmd_sweep_mae, cmd_train, cmd_werner_sweep, GenDataConfig, MaxLikCommand,
    MaxLikSettings, PredictCommand, SweepConfig, TrainCommand, WernerConfig,
};
use qcorr::maxlik::MaxLikMap;
use qcorr::neural::{NAdamHyper, TrainConfig};
use qcorr::{CorrelationKind, Error, ErrorClass, RandomSeed};

/// Environment variable capping the number of worker threads.
const WORKERS_ENV: &str = "QCORR_WORKERS";

#[derive(Parser)]
#[command(name = "qcorr", version, about = "Estimate quantum correlations from incomplete measurements")]
struct Cli {
    /// TOML file with settings for the chosen subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/validation/test datasets.
    GenData(GenDataArgs),
    /// Train a network on generated datasets.
    Train(TrainArgs),
    /// MAE versus number of projectors for MaxLik and both networks.
    SweepMae(SweepArgs),
    /// Concurrence estimates along the Werner family.
    WernerSweep(WernerArgs),
    /// Reconstruct a state from a counts or probabilities file.
    Maxlik(MaxLikArgs),
    /// Apply a trained model to a counts or probabilities file.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_qubits: Option<usize>,
    #[arg(long)]
    kind: Option<CorrelationKind>,
    #[arg(long)]
    encoding: Option<Encoding>,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    test_set_size: Option<usize>,
    /// 0/1 string over the canonical projectors.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    hidden: Vec<usize>,
    conv_channels: usize,
    epochs: usize,
    batches_per_epoch: usize,
    patience: usize,
    incremental: bool,
    dataset_refresh_size: usize,
    learning_rate: f64,
    seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: DESK_HIDDEN_WIDTHS.to_vec(),
            conv_channels: DESK_CONV_CHANNELS,
            epochs: t.epochs,
            batches_per_epoch: t.batches_per_epoch,
            patience: t.patience,
            incremental: t.incremental,
            dataset_refresh_size: t.dataset_refresh_size,
            learning_rate: t.hyper.lr,
            seed: t.seed.0,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    report_out: PathBuf,
    /// Continue from a saved model and its optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    incremental: bool,
    #[arg(long)]
    dataset_refresh_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CommonSweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// Directory for trained models; reused when the recipe matches.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    projector_counts: Option<Vec<usize>>,
    #[arg(long)]
    n_specific_networks_per_count: Option<usize>,
    #[arg(long)]
    n_random_measurements: Option<usize>,
    #[arg(long)]
    shots_per_projector: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_maxlik: bool,
    #[arg(long)]
    no_specific: bool,
    #[arg(long)]
    no_independent: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonSweepArgs,
    #[arg(long)]
    n_qubits: Option<usize>,
    #[arg(long)]
    kind: Option<CorrelationKind>,
    #[arg(long)]
    test_set_size: Option<usize>,
}

#[derive(Args)]
struct WernerArgs {
    #[command(flatten)]
    common: CommonSweepArgs,
    #[arg(long)]
    p_points: Option<usize>,
}

#[derive(Args)]
struct MaxLikArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    /// `corrected` or `gram_frame`.
    #[arg(long, value_parser = parse_map)]
    map: Option<MaxLikMap>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_map(s: &str) -> Result<MaxLikMap, String> {
    match s {
        "corrected" => Ok(MaxLikMap::Corrected),
        "gram_frame" | "gram-frame" => Ok(MaxLikMap::GramFrame),
        other => Err(format!("unknown map `{other}` (corrected, gram_frame)")),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> qcorr::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

macro_rules! apply_common {
    ($cfg:expr, $c:expr) => {{
        set(&mut $cfg.projector_counts, $c.projector_counts.clone());
        set(&mut $cfg.n_specific_networks_per_count, $c.n_specific_networks_per_count);
        set(&mut $cfg.n_random_measurements, $c.n_random_measurements);
        set(&mut $cfg.seed, $c.seed);
        if $c.shots_per_projector.is_some() {
            $cfg.shots_per_projector = $c.shots_per_projector;
        }
        $cfg.methods.maxlik &= !$c.no_maxlik;
        $cfg.methods.specific &= !$c.no_specific;
        $cfg.methods.independent &= !$c.no_independent;
    }};
}

fn run(cli: Cli) -> qcorr::Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => {
            let mut cfg: GenDataConfig = load_config(config)?;
            set(&mut cfg.n_qubits, a.n_qubits);
            set(&mut cfg.kind, a.kind);
            set(&mut cfg.encoding, a.encoding);
            set(&mut cfg.n_states, a.n_states);
            set(&mut cfg.test_set_size, a.test_set_size);
            set(&mut cfg.k_min, a.k_min);
            set(&mut cfg.seed, a.seed);
            if a.mask.is_some() {
                cfg.mask = a.mask;
            }
            let rep = cmd_gen_data(&cfg, &a.out_dir)?;
            for (path, n) in rep.files {
                println!("{}\t{n} samples", path.display());
            }
        }
        Command::Train(a) => {
            let mut s: TrainSettings = load_config(config)?;
            set(&mut s.hidden, a.hidden);
            set(&mut s.conv_channels, a.conv_channels);
            set(&mut s.epochs, a.epochs);
            set(&mut s.batches_per_epoch, a.batches_per_epoch);
            set(&mut s.patience, a.patience);
            set(&mut s.dataset_refresh_size, a.dataset_refresh_size);
            set(&mut s.learning_rate, a.learning_rate);
            set(&mut s.seed, a.seed);
            s.incremental |= a.incremental;
            let mut cmd = TrainCommand::new(a.train, a.val, a.model_out, a.report_out);
            cmd.hidden = s.hidden;
            cmd.conv_channels = s.conv_channels;
            cmd.resume = a.resume;
            cmd.config = TrainConfig {
                epochs: s.epochs,
                batches_per_epoch: s.batches_per_epoch,
                patience: s.patience,
                incremental: s.incremental,
                dataset_refresh_size: s.dataset_refresh_size,
                hyper: NAdamHyper {
                    lr: s.learning_rate,
                    ..NAdamHyper::default()
                },
                seed: RandomSeed(s.seed),
            };
            let rep = cmd_train(&cmd)?;
            println!(
                "epochs run {}, best validation MAE {:.5} (epoch {}), model {}",
                rep.epochs_run, rep.best_val_mae, rep.history.best_epoch, rep.model_digest
            );
            if let Some(e) = rep.history.early_stop_epoch {
                println!("early stop at epoch {e}");
            }
        }
        Command::SweepMae(a) => {
            let mut cfg: SweepConfig = load_config(config)?;
            apply_common!(cfg, a.common);
            set(&mut cfg.n_qubits, a.n_qubits);
            set(&mut cfg.kind, a.kind);
            set(&mut cfg.test_set_size, a.test_set_size);
            let res = cmd_sweep_mae(&cfg, &a.common.out, a.common.model_dir.as_deref())?;
            for c in &res.cells {
                println!("{:<12} k={:<3} MAE {:.5} ± {:.5} ({} reps)", c.method, c.k, c.mean, c.std, c.repetitions);
            }
        }
        Command::WernerSweep(a) => {
            let mut cfg: WernerConfig = load_config(config)?;
            apply_common!(cfg, a.common);
            set(&mut cfg.p_points, a.p_points);
            let res = cmd_werner_sweep(&cfg, &a.common.out, a.common.model_dir.as_deref())?;
            for &k in &cfg.projector_counts {
                for m in ["maxlik", "specific", "independent"] {
                    if let Some(d) = res.curve_deviation(m, k) {
                        println!("{m:<12} k={k:<3} mean deviation from closed form {d:.5}");
                    }
                }
            }
        }
        Command::Maxlik(a) => {
            let mut s: MaxLikSettings = load_config(config)?;
            set(&mut s.max_iterations, a.max_iterations);
            set(&mut s.convergence_tol, a.convergence_tol);
            set(&mut s.map, a.map);
            let rep = cmd_maxlik(&MaxLikCommand {
                input: a.input,
                out: a.out,
                settings: s,
            })?;
            println!("iterations {}, converged {}", rep.iterations, rep.converged);
            if let Some(c) = rep.concurrence {
                println!("concurrence {c:.6}");
            }
            println!("mutual information {:?}", rep.mutual_information);
        }
        Command::Predict(a) => {
            let rep = cmd_predict(&PredictCommand {
                model: a.model,
                input: a.input,
                out: a.out,
            })?;
            println!("{} {} {:?} (model {})", rep.estimator, rep.kind, rep.values, rep.model_digest);
            if !rep.informative {
                println!("warning: no projector was measured; the estimate carries no information");
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                qcorr::par::init_workers(n);
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
