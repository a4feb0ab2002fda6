//! Command-line front end: dataset generation, pretraining, evaluation,
//! fine-tuning, and ablation sweeps driven by a TOML experiment config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simper::eval::MetricsReport;
use simper::experiment::{
    evaluate, finetune, generate_split, prepare_data, pretrain, run_ablation, write_split, AblationAxis,
    DataConfig, ExperimentConfig, Method, PreparedData, Protocol, Provenance, MANIFEST_NAME,
};
use simper::ndtensor::Checkpoint;
use simper::synthdata::{SourceKind, SplitRule};
use simper::train::TrainOutcome;
use simper::{Error, Result};

#[derive(Parser)]
#[command(name = "simper", version, about = "Self-supervised periodic representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its train/test split.
    Gen(GenArgs),
    /// Pretrain an encoder with SimPer or the instance-discrimination baseline.
    Pretrain {
        #[command(flatten)]
        exp: ExpArgs,
        /// Overrides `method` from the config.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Evaluate a pretrained checkpoint.
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "fft")]
        protocol: ProtocolArg,
        /// Also write the test-set feature table as CSV.
        #[arg(long)]
        export_features: bool,
    },
    /// Train a regression head and encoder on labels, from a checkpoint or from scratch.
    Finetune {
        #[command(flatten)]
        exp: ExpArgs,
        /// Checkpoint manifest to start from, or `none` for the supervised baseline.
        #[arg(long)]
        init: String,
    },
    /// Sweep one axis: pretrain and evaluate per listed value and seed.
    Ablate {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Grid points run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args, Clone)]
struct ExpArgs {
    /// TOML experiment config layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting configuration: reference, desk or smoke.
    #[arg(long)]
    preset: Option<String>,
    /// Dotted `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the configured seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, env = "SIMPER_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
}

impl ExpArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if !self.seeds.is_empty() {
            let list: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        ExperimentConfig::load(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Data section of an experiment config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Signal family.
    #[arg(long, value_enum)]
    preset: Option<SourceArg>,
    /// Samples before splitting.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Held-out band `LO:HI` in Hz for gap splits.
    #[arg(long, value_parser = parse_band)]
    band: Option<[f64; 2]>,
    /// Kept share for the subsample split.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Destination directory; defaults under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "SIMPER_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Rotating,
    Sine,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SplitArg {
    Uniform,
    Interpolation,
    Extrapolation,
    Spurious,
    Subsample,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Simper,
    InfonceBaseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Fft,
    Knn,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    SpeedRange,
    NumViews,
    Similarity,
    LossMode,
    DataFraction,
    LabelFraction,
}

fn parse_band(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok([num(lo)?, num(hi)?])
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data_config(args: &GenArgs) -> Result<DataConfig> {
    let mut data = match &args.config {
        Some(path) => ExperimentConfig::load(None, Some(path), &[])?.data,
        None => DataConfig::default(),
    };
    data.dir = None;
    if let Some(src) = args.preset {
        data.source = match src {
            SourceArg::Rotating => SourceKind::RotatingSprite,
            SourceArg::Sine => SourceKind::Sine1d,
        };
    }
    data.n = args.n.unwrap_or(data.n);
    data.seed = args.seed.unwrap_or(data.seed);
    data.split_seed = args.split_seed.unwrap_or(data.split_seed);
    let band = args.band;
    let need_band = || band.ok_or_else(|| Error::Config("gap splits need --band LO:HI".into()));
    if let Some(split) = args.split {
        data.split = match split {
            SplitArg::Uniform => SplitRule::Uniform,
            SplitArg::Interpolation => SplitRule::InterpolationGap { band: need_band()? },
            SplitArg::Extrapolation => SplitRule::ExtrapolationGap { band: need_band()? },
            SplitArg::Spurious => SplitRule::Spurious,
            SplitArg::Subsample => SplitRule::Subsample {
                fraction: args.fraction.unwrap_or(0.5),
            },
        };
    }
    Ok(data)
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let data = gen_data_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.output_root
            .join("datasets")
            .join(format!("{}-seed{}", data.split.name(), data.seed))
    });
    let mut source = match data.source {
        SourceKind::RotatingSprite => {
            simper::synthdata::generate_rotating_sprites(data.n, &data.generator, data.seed)?
        }
        SourceKind::Sine1d => simper::synthdata::generate_sine1d(data.n, &data.generator, data.seed)?,
    };
    source.fill_checksums()?;
    let mut pair = generate_split(&data)?;
    write_split(&mut pair, &out)?;
    source.save(&out.join(MANIFEST_NAME))?;
    println!("dataset {}", out.display());
    println!("source {} ({} entries)", source.checksum(), source.len());
    println!("train  {} ({} entries)", pair.train.checksum(), pair.train.len());
    println!("test   {} ({} entries)", pair.test.checksum(), pair.test.len());
    Ok(())
}

fn save_outcome(dir: &Path, out: &TrainOutcome, hash: &str) -> Result<PathBuf> {
    let ckpt = dir.join("checkpoint.txt");
    out.checkpoint.save(&ckpt)?;
    write(&dir.join("loss.csv"), &format!("# config_hash = {hash}\n{}", out.curve_csv()))?;
    Ok(ckpt)
}

fn save_report(cfg: &ExperimentConfig, root: &Path, dir: &Path, report: &MetricsReport) -> Result<()> {
    let path = dir.join(format!("report-{}.txt", report.protocol));
    write(&path, &report.to_text())?;
    report.append_csv(&cfg.experiment_dir(root).join("results.csv"))?;
    println!("{}", path.display());
    print!("{}", report.to_text());
    Ok(())
}

fn announce(cfg: &ExperimentConfig, data: &PreparedData) {
    eprintln!(
        "experiment {} (config {}): {} train, {} labelled, {} test samples",
        cfg.name,
        cfg.hash(),
        data.train.len(),
        data.labeled.len(),
        data.test.len()
    );
}

fn cmd_pretrain(exp: &ExpArgs, method: Option<MethodArg>) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(m) = method {
        let m = match m {
            MethodArg::Simper => Method::Simper,
            MethodArg::InfonceBaseline => Method::InfonceBaseline,
        };
        extra.push(format!("method=\"{}\"", m.name()));
    }
    let cfg = ExpArgs {
        overrides: [exp.overrides.clone(), extra].concat(),
        ..exp.clone()
    }
    .load()?;
    let data = prepare_data(&cfg.data)?;
    announce(&cfg, &data);
    let exp_dir = cfg.experiment_dir(&exp.output_root);
    write(&exp_dir.join(format!("config-{}.toml", cfg.hash())), &cfg.to_toml()?)?;
    for &seed in &cfg.seeds {
        let out = pretrain(&cfg, &data, seed)?;
        let dir = cfg.run_dir(&exp.output_root, seed);
        let ckpt = save_outcome(&dir, &out, &cfg.hash())?;
        Provenance::new(&cfg, &data, seed).save(&dir.join("provenance.json"))?;
        let last = out.curve.last().map_or(f64::NAN, |r| r.mean_loss);
        println!("seed {seed}: {} final loss {last:.4}, checkpoint {}", cfg.method.name(), ckpt.display());
    }
    Ok(())
}

fn cmd_eval(exp: &ExpArgs, checkpoint: &Path, protocol: ProtocolArg, export: bool) -> Result<()> {
    let cfg = exp.load()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let protocol = match protocol {
        ProtocolArg::Fft => Protocol::Fft,
        ProtocolArg::Knn => Protocol::Knn,
    };
    if ckpt.meta.get("config_hash").is_some_and(|h| *h != cfg.hash()) {
        eprintln!("note: checkpoint was trained under config {}, evaluating under {}", ckpt.meta["config_hash"], cfg.hash());
    }
    let seed = match ckpt.meta.get("train.seed") {
        Some(s) => s.parse().map_err(|_| Error::Data(format!("bad train.seed `{s}` in checkpoint")))?,
        None => cfg.seeds[0],
    };
    let data = prepare_data(&cfg.data)?;
    announce(&cfg, &data);
    let dir = cfg.run_dir(&exp.output_root, seed);
    let features = export.then(|| dir.join(format!("features-{}.csv", cfg.hash())));
    let report = evaluate(&cfg, &ckpt, &data, protocol, seed, features.as_deref())?;
    if let Some(f) = &features {
        println!("{}", f.display());
    }
    save_report(&cfg, &exp.output_root, &dir, &report)
}

fn cmd_finetune(exp: &ExpArgs, init: &str) -> Result<()> {
    let cfg = exp.load()?;
    let init = match init {
        "none" => None,
        path => Some(Checkpoint::load(Path::new(path))?),
    };
    let data = prepare_data(&cfg.data)?;
    announce(&cfg, &data);
    let sub = if init.is_some() { "finetune" } else { "supervised" };
    for &seed in &cfg.seeds {
        let (out, mut report) = finetune(&cfg, &data, init.as_ref(), seed)?;
        if init.is_none() {
            report.protocol = "supervised".into();
        }
        let dir = cfg.run_dir(&exp.output_root, seed).join(sub);
        let ckpt = save_outcome(&dir, &out, &cfg.hash())?;
        println!("seed {seed}: checkpoint {}", ckpt.display());
        save_report(&cfg, &exp.output_root, &dir, &report)?;
    }
    Ok(())
}

fn cmd_ablate(exp: &ExpArgs, axis: AxisArg, jobs: usize) -> Result<()> {
    let cfg = exp.load()?;
    let axis = match axis {
        AxisArg::SpeedRange => AblationAxis::SpeedRange,
        AxisArg::NumViews => AblationAxis::NumViews,
        AxisArg::Similarity => AblationAxis::Similarity,
        AxisArg::LossMode => AblationAxis::LossMode,
        AxisArg::DataFraction => AblationAxis::DataFraction,
        AxisArg::LabelFraction => AblationAxis::LabelFraction,
    };
    let csv = cfg
        .experiment_dir(&exp.output_root)
        .join(format!("ablation-{}-{}.csv", axis.name(), cfg.hash()));
    if let Some(dir) = csv.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let rows = run_ablation(&cfg, axis, &csv, jobs, &|msg| eprintln!("running {msg}"))?;
    println!("{rows} rows appended to {}", csv.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Pretrain { exp, method } => cmd_pretrain(&exp, method),
        Command::Eval {
            exp,
            checkpoint,
            protocol,
            export_features,
        } => cmd_eval(&exp, &checkpoint, protocol, export_features),
        Command::Finetune { exp, init } => cmd_finetune(&exp, &init),
        Command::Ablate { exp, axis, jobs } => cmd_ablate(&exp, axis, jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
