//! `psfr`: degradation synthesis, training, parsing, restoration and
//! evaluation from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psfr_core::degrade::{degrade, resize_to, sample_params, DegradationParams, Interp};
use psfr_core::imaging::{images_to_tensor, Image8, PIPELINE_SIZE};
use psfr_core::metrics::{frechet_distance, read_features, FeatureStats};
use psfr_core::pipeline::dataset::{list_images, to_pipeline_size};
use psfr_core::pipeline::{
    dump_pyramid, evaluate_dirs, load_fpn, report_csv, Checkpoint, Dataset, FpnTrainer, PipelineConfig, PsfrTrainer,
    Restorer, RunOptions,
};
use psfr_core::seed::derive_seed;
use psfr_core::{CoreError, Result};

#[derive(Parser)]
#[command(name = "psfr", version, about = "Blind face restoration toolkit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
    /// Reproducible arithmetic. Computation is single-threaded and ordered,
    /// so runs are always deterministic; the flag is accepted for scripts.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize LQ images and a JSON-lines parameter manifest.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply these parameters to every image instead of sampling.
        #[arg(long)]
        params_json: Option<PathBuf>,
    },
    /// Train the parsing network.
    TrainFpn(TrainArgs),
    /// Train the generator and discriminators.
    TrainPsfr {
        #[command(flatten)]
        train: TrainArgs,
        /// Parsing checkpoint, required when labels come from the network.
        #[arg(long)]
        fpn: Option<PathBuf>,
    },
    /// Predict label maps (8-bit PNG, value = class index).
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore LQ faces.
    Restore {
        #[arg(long)]
        fpn: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write every pyramid level next to the output.
        #[arg(long)]
        dump_pyramid: bool,
        /// Comma-separated 1-based pyramid levels to zero, or `all`.
        #[arg(long)]
        zero_levels: Option<String>,
    },
    /// Score restorations or compare feature statistics.
    Evaluate {
        #[arg(long, requires_all = ["gt", "report"])]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Feature file of the first set, for the Fréchet distance.
        #[arg(long, requires = "features_b")]
        features_a: Option<PathBuf>,
        #[arg(long)]
        features_b: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory with `images/` and `labels/`.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use this many generated faces instead of a dataset directory.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(args: &TrainArgs, seed: u64) -> Result<Dataset> {
    match (&args.data, args.synthetic) {
        (Some(dir), _) => Dataset::load_dir(dir),
        (None, Some(n)) => Dataset::synthetic(n, seed),
        (None, None) => Err(CoreError::Config("either --data or --synthetic is required".into())),
    }
}

/// Loads a checkpoint to resume; an explicit `--config` replaces the embedded
/// one (the architecture must still match the stored weights).
fn resume_checkpoint(cli: &Cli, path: &Path) -> Result<Checkpoint<f32>> {
    let mut ckpt = Checkpoint::load(path)?;
    if cli.config.is_some() {
        ckpt.config = load_config(cli)?.to_toml();
    }
    Ok(ckpt)
}

fn run_options(args: &TrainArgs) -> RunOptions {
    RunOptions { checkpoint: Some(args.out.clone()), log: args.log.clone() }
}

fn cmd_degrade(input: &Path, out: &Path, params_json: Option<&Path>, seed: u64) -> Result<()> {
    let fixed: Option<DegradationParams> = match params_json {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CoreError::io(p, e))?;
            let params: DegradationParams = serde_json::from_str(&text)?;
            params.validate()?;
            Some(params)
        }
        None => None,
    };
    ensure_dir(out)?;
    let mut manifest = String::new();
    for (i, path) in list_images(input)?.iter().enumerate() {
        let hq = to_pipeline_size(&Image8::load(path)?)?;
        let params = fixed.clone().unwrap_or_else(|| sample_params(derive_seed(seed, &[i as u64])));
        let name = format!("{}.png", stem(path));
        degrade(&hq, &params)?.save_png(&out.join(&name))?;
        manifest.push_str(&serde_json::json!({ "file": name, "params": params }).to_string());
        manifest.push('\n');
    }
    let path = out.join("manifest.jsonl");
    std::fs::write(&path, manifest).map_err(|e| CoreError::io(&path, e))
}

fn cmd_train_fpn(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => FpnTrainer::<f32>::from_checkpoint(&resume_checkpoint(cli, path)?)?,
        None => FpnTrainer::new(load_config(cli)?)?,
    };
    let cfg = trainer.config().clone();
    let data = load_dataset(args, cfg.train.seed)?.prepare(cfg.train.resolution)?;
    let logs = trainer.run(&data, &run_options(args))?;
    if let Some(last) = logs.last() {
        log::info!("finished at step {} with loss {:.5}", last.step + 1, last.total);
    }
    Ok(())
}

fn cmd_train_psfr(cli: &Cli, args: &TrainArgs, fpn: Option<&Path>) -> Result<()> {
    let fpn = fpn.map(|p| Checkpoint::<f32>::load(p).and_then(|c| load_fpn(&c))).transpose()?;
    let mut trainer = match &args.resume {
        Some(path) => PsfrTrainer::<f32>::from_checkpoint(&resume_checkpoint(cli, path)?, fpn)?,
        None => PsfrTrainer::new(load_config(cli)?, fpn)?,
    };
    let cfg = trainer.config().clone();
    let data = load_dataset(args, cfg.train.seed)?.prepare(cfg.train.resolution)?;
    trainer.run(&data, &run_options(args))?;
    Ok(())
}

fn cmd_parse(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let fpn = load_fpn(&Checkpoint::<f32>::load(model)?)?;
    let r = fpn.config().in_resolution;
    ensure_dir(out)?;
    for path in list_images(input)? {
        let full = resize_to(&Image8::load(&path)?, PIPELINE_SIZE, PIPELINE_SIZE, Interp::Bicubic)?;
        let img = resize_to(&full, r, r, Interp::Area)?;
        let labels = fpn.parse(&images_to_tensor::<f32>(std::slice::from_ref(&img))?)?;
        labels.save_png(0, &out.join(format!("{}.png", stem(&path))))?;
    }
    Ok(())
}

fn parse_levels(spec: &str, count: usize) -> Result<Vec<usize>> {
    if spec.trim() == "all" {
        return Ok((0..count).collect());
    }
    spec.split(',')
        .map(|s| {
            let v: usize = s.trim().parse().map_err(|_| CoreError::InvalidParam(format!("bad level {s:?}")))?;
            if v == 0 || v > count {
                return Err(CoreError::InvalidParam(format!("level {v} outside 1..={count}")));
            }
            Ok(v - 1)
        })
        .collect()
}

fn cmd_restore(fpn: &Path, gen: &Path, input: &Path, out: &Path, dump: bool, zero: Option<&str>) -> Result<()> {
    let restorer = Restorer::<f32>::from_checkpoints(&Checkpoint::load(fpn)?, &Checkpoint::load(gen)?)?;
    let levels = restorer.num_levels();
    let zero = zero.map(|z| parse_levels(z, levels)).transpose()?.unwrap_or_default();
    ensure_dir(out)?;
    for path in list_images(input)? {
        let name = stem(&path);
        let r = restorer.restore(&Image8::load(&path)?, &zero)?;
        r.hq.save_png(&out.join(format!("{name}.png")))?;
        r.labels.save_png(0, &out.join(format!("{name}_parse.png")))?;
        if dump {
            dump_pyramid(&r.pyramid, &out.join(format!("{name}_pyramid")))?;
        }
    }
    Ok(())
}

fn cmd_evaluate(
    pred: Option<&Path>,
    gt: Option<&Path>,
    report: Option<&Path>,
    fa: Option<&Path>,
    fb: Option<&Path>,
) -> Result<()> {
    if let (Some(pred), Some(gt), Some(report)) = (pred, gt, report) {
        let csv = report_csv(&evaluate_dirs(pred, gt)?);
        std::fs::write(report, &csv).map_err(|e| CoreError::io(report, e))?;
        print!("{}", csv.lines().last().map(|l| format!("{l}\n")).unwrap_or_default());
    }
    if let (Some(fa), Some(fb)) = (fa, fb) {
        let stats = |p: &Path| -> Result<FeatureStats> {
            let rows: Vec<Vec<f64>> =
                read_features(p)?.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
            FeatureStats::from_samples(&rows)
        };
        let d = frechet_distance(&stats(fa)?, &stats(fb)?)?;
        println!("{}", serde_json::json!({ "frechet_distance": d }));
    }
    if pred.is_none() && fa.is_none() {
        return Err(CoreError::Config("evaluate needs --pred/--gt/--report or --features-a/--features-b".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(CoreError::Config(format!("device {:?} is not available; use cpu", cli.device)));
    }
    match &cli.command {
        Command::Degrade { input, out, params_json } => {
            cmd_degrade(input, out, params_json.as_deref(), cli.seed.unwrap_or(0))
        }
        Command::TrainFpn(args) => cmd_train_fpn(cli, args),
        Command::TrainPsfr { train, fpn } => cmd_train_psfr(cli, train, fpn.as_deref()),
        Command::Parse { model, input, out } => cmd_parse(model, input, out),
        Command::Restore { fpn, gen, input, out, dump_pyramid, zero_levels } => {
            cmd_restore(fpn, gen, input, out, *dump_pyramid, zero_levels.as_deref())
        }
        Command::Evaluate { pred, gt, report, features_a, features_b } => cmd_evaluate(
            pred.as_deref(),
            gt.as_deref(),
            report.as_deref(),
            features_a.as_deref(),
            features_b.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
