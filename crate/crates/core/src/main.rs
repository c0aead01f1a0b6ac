use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use dplora::config::{
    ConfigLayer, DataSection, FederationSection, ModelSection, OutputSection, PrivacySection, TrainConfig,
    TrainingSection,
};
use dplora::ledger::{ModelShape, LLAMA_7B_TOTAL};
use dplora::privacy::{CalibrationMode, PrivacyParams};
use dplora::{report, selftest, Error};

#[derive(Parser)]
#[command(name = "dplora", version, about = "Differentially private federated LoRA simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run federated training and write metrics, summary, checkpoint and config.
    Train(Box<TrainArgs>),
    /// Noise multiplier for a target (epsilon, delta).
    Calibrate(CalibrateArgs),
    /// Privacy spent by a noise multiplier under both accountants.
    Account(AccountArgs),
    /// Parameter and communication ledger.
    Overhead(OverheadArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_steps: Option<usize>,
    /// Full-parameter FedAvg without adapters or noise.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    bytes_per_element: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    clip_mode: Option<String>,
    #[arg(long)]
    noise_target: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    accountant: Option<String>,
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    adapter_scale: Option<f64>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    base_gain: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    dirichlet_alpha: Option<f64>,
    /// Output directory (default: $DPLORA_OUT, else ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value = "numeric")]
    mode: String,
    #[arg(long, default_value_t = 0.01)]
    q: f64,
    #[arg(long, default_value_t = 50)]
    rounds: u64,
    #[arg(long, default_value_t = 1.0)]
    rho_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long)]
    c1: Option<f64>,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    rounds: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_bar: f64,
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long, default_value_t = 32)]
    layers: u64,
    #[arg(long, default_value_t = 4096)]
    width: u64,
    #[arg(long, default_value_t = 256)]
    rank: u64,
    /// Adapted square projections per block.
    #[arg(long, default_value_t = 3)]
    proj: u64,
    #[arg(long, default_value_t = 5)]
    nodes: u64,
    #[arg(long, default_value_t = 50)]
    rounds: u64,
    #[arg(long, default_value_t = LLAMA_7B_TOTAL)]
    dense_total: u64,
    /// Include the published Llama-7B rows.
    #[arg(long)]
    reported: bool,
}

fn parse_enum<T: DeserializeOwned>(key: &str, value: Option<String>) -> Result<Option<T>, Error> {
    value
        .map(|v| {
            serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| Error::Config(format!("`{key}`: unrecognised value {v:?}")))
        })
        .transpose()
}

impl TrainArgs {
    fn layer(self) -> Result<ConfigLayer, Error> {
        Ok(ConfigLayer {
            seed: self.seed,
            federation: FederationSection {
                nodes: self.nodes,
                rounds: self.rounds,
                local_steps: self.local_steps,
                baseline: self.baseline.then_some(true),
                threads: self.threads,
                bytes_per_element: self.bytes_per_element,
                rho: self.rho,
            },
            training: TrainingSection {
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
            },
            privacy: PrivacySection {
                clip: self.clip,
                clip_mode: parse_enum("clip_mode", self.clip_mode)?,
                noise_target: parse_enum("noise_target", self.noise_target)?,
                sigma: self.sigma,
                epsilon: self.epsilon,
                delta: self.delta,
                c2: self.c2,
                c1: self.c1,
                accountant: parse_enum("accountant", self.accountant)?,
                calibration: parse_enum("calibration", self.calibration)?,
            },
            model: ModelSection {
                layers: self.layers,
                width: self.width,
                rank: self.rank,
                num_classes: self.num_classes,
                adapter_scale: self.adapter_scale,
                activation: parse_enum("activation", self.activation)?,
                base_gain: self.base_gain,
            },
            data: DataSection {
                samples: self.samples,
                margin: self.margin,
                partition: parse_enum("partition", self.partition)?,
                dirichlet_alpha: self.dirichlet_alpha,
            },
            output: OutputSection { dir: self.out },
        })
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let file = args
        .config
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let cfg = TrainConfig::from_sources(file.as_deref(), &args.layer()?)?;
    let (out, files) = report::train(&cfg)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&out.summary(&cfg))?;
    eprintln!("wrote {}", files.metrics.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let mode: CalibrationMode = parse_enum("mode", Some(args.mode))?.expect("value given");
    let p = PrivacyParams {
        epsilon: args.epsilon,
        delta: args.delta,
        q: args.q,
        t_rounds: args.rounds,
        rho_bar: args.rho_bar,
        c2: args.c2,
        c1: args.c1,
        ..PrivacyParams::default()
    };
    print_json(&report::calibrate(&p, mode)?)
}

fn account(args: AccountArgs) -> anyhow::Result<()> {
    let p = PrivacyParams {
        sigma: args.sigma,
        q: args.q,
        t_rounds: args.rounds,
        delta: args.delta,
        rho_bar: args.rho_bar,
        ..PrivacyParams::default()
    };
    let r = report::account(&p)?;
    print_json(&r)?;
    match r.moments_inapplicable {
        Some(why) => Err(Error::Inapplicable(why).into()),
        None => Ok(()),
    }
}

fn overhead(args: OverheadArgs) -> anyhow::Result<()> {
    let shape = ModelShape {
        layers: args.layers,
        width: args.width,
        projections_per_layer: args.proj,
        dense_total: args.dense_total,
    };
    print_json(&report::overhead(&shape, args.rank, args.nodes, args.rounds, args.reported)?)
}

fn run_selftest() -> anyhow::Result<()> {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    anyhow::ensure!(failed == 0, "{failed} check(s) failed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(*a),
        Command::Calibrate(a) => calibrate(a),
        Command::Account(a) => account(a),
        Command::Overhead(a) => overhead(a),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(4, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
