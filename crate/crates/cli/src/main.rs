//! `advseg`: train, run and evaluate the adversarial segmentation engine.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 bad data.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advseg::data::{generate_phantom, load_mask, load_volume, save_mask, save_volume, PhantomConfig};
use advseg::gradcheck::full_suite;
use advseg::metrics::{evaluate_case, evaluate_set, MetricsReport};
use advseg::network::{load_checkpoint, read_checkpoint, write_checkpoint};
use advseg::optim::AdamConfig;
use advseg::train::{fit_with, predict_volume_batched, TrainConfig};
use advseg::unet::{build_unet, unet_config_from_checkpoint};
use advseg::{Network, VolumeCase};
use clap::{Args, Parser, Subcommand};

use config::ConfigFile;

#[derive(Parser)]
#[command(name = "advseg", version, about = "Adversarial U-Net lesion segmentation")]
struct Cli {
    /// `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a segmentor (and discriminator) on VOL1 cases or phantoms.
    Train(TrainArgs),
    /// Segment VOL1 cases with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write synthetic VOL1 cases.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of `.vol1` cases with masks.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train on N generated phantoms instead of `--data`.
    #[arg(long, value_name = "N")]
    phantom: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Phantom in-plane size.
    #[arg(long)]
    size: Option<usize>,
    /// Phantom slice count.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of `.vol1` cases to segment.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted mask files.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Directory of ground-truth `.vol1` files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lesions: Option<usize>,
}

enum Failure {
    Check(String),
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Config(m) | Failure::Data(m) => m,
        }
    }
}

impl From<advseg::Error> for Failure {
    fn from(e: advseg::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn config_err(e: String) -> Failure {
    Failure::Config(e)
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    p.ok_or_else(|| Failure::Config(format!("--{what} is required")))
}

/// Sorted `.vol1` files of a directory.
fn vol1_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Data(format!("{} is not a directory", dir.display())));
    }
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol1"))
        .collect();
    files.sort();
    Ok(files)
}

fn case_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn create_out_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn save_network(net: &Network, path: &Path) -> Outcome {
    let file = fs::File::create(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(net, &mut w)?;
    w.flush().map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs, file: &ConfigFile) -> Outcome {
    let d = TrainConfig::default();
    let lr = file.pick(args.lr, "lr", d.optimizer.learning_rate).map_err(config_err)?;
    let cfg = TrainConfig {
        lambda_adv: file.pick(args.lambda_adv, "lambda_adv", d.lambda_adv).map_err(config_err)?,
        optimizer: AdamConfig {
            learning_rate: lr,
            beta1: file.pick(None, "beta1", d.optimizer.beta1).map_err(config_err)?,
            beta2: file.pick(None, "beta2", d.optimizer.beta2).map_err(config_err)?,
            eps: file.pick(None, "adam_eps", d.optimizer.eps).map_err(config_err)?,
        },
        epochs: file.pick(args.epochs, "epochs", d.epochs).map_err(config_err)?,
        batch_size: file.pick(args.batch_size, "batch_size", d.batch_size).map_err(config_err)?,
        split_ratio: file.pick(args.split_ratio, "split_ratio", d.split_ratio).map_err(config_err)?,
        seed: file.pick(args.seed, "seed", d.seed).map_err(config_err)?,
        dropout_rate: file.pick(args.dropout, "dropout", d.dropout_rate).map_err(config_err)?,
        base_channels: file.pick(args.base_channels, "base_channels", d.base_channels).map_err(config_err)?,
        ..d
    };
    cfg.validate()?;
    let out = required(file.pick_opt(args.out, "out").map_err(config_err)?, "out")?;
    let phantom = file.pick_opt(args.phantom, "phantom").map_err(config_err)?;
    let data = file.pick_opt(args.data, "data").map_err(config_err)?;

    let cases: Vec<VolumeCase> = match (phantom, data) {
        (Some(_), Some(_)) => return Err(Failure::Config("use either --data or --phantom, not both".into())),
        (None, None) => return Err(Failure::Config("--data or --phantom is required".into())),
        (Some(n), None) => {
            let size = file.pick(args.size, "size", 256usize).map_err(config_err)?;
            let depth = file.pick(args.depth, "depth", 4usize).map_err(config_err)?;
            (0..n as u64)
                .map(|i| {
                    generate_phantom(&PhantomConfig { seed: cfg.seed.wrapping_add(i), depth, size, lesion_count: 2 })
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(dir)) => {
            let files = vol1_files(&dir)?;
            let mut cases = Vec::with_capacity(files.len());
            for f in &files {
                cases.push(load_volume(f).map_err(|e| Failure::Data(format!("{}: {e}", f.display())))?);
            }
            cases
        }
    };
    if cases.len() < 2 {
        return Err(Failure::Data(format!("training needs at least 2 cases, found {}", cases.len())));
    }
    if let Some(c) = cases.iter().find(|c| c.mask.is_none()) {
        return Err(Failure::Data(format!("case {} has no mask", c.case_id)));
    }

    eprintln!("training on {} cases, {} epochs, lambda_adv {}", cases.len(), cfg.epochs, cfg.lambda_adv);
    let outcome = fit_with(cases, &cfg, |e| {
        eprintln!(
            "epoch {:>4}  chi {:.5}  chi_seg {:.5}  chi_adv {:.5}  disc {:.5}  val_dice {:.4}  {:.1}s",
            e.epoch, e.losses.chi, e.losses.chi_seg, e.losses.chi_adv, e.losses.disc_loss, e.val_dice, e.seconds
        )
    })?;

    create_out_dir(&out)?;
    save_network(&outcome.best_segmentor, &out.join("best.ckpt"))?;
    save_network(&outcome.final_segmentor, &out.join("final.ckpt"))?;
    if let Some(d) = &outcome.discriminator {
        save_network(d, &out.join("discriminator.ckpt"))?;
    }
    let history = out.join("history.csv");
    fs::write(&history, outcome.history.to_csv()).map_err(|e| Failure::Data(format!("{}: {e}", history.display())))?;
    if let Some(best) = outcome.history.best_epoch {
        eprintln!("best epoch {best}; wrote {}", out.display());
    }
    Ok(())
}

fn load_segmentor(path: &Path) -> Result<Network, Failure> {
    let bytes =
        fs::read(path).map_err(|e| Failure::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let bad = |e: advseg::Error| Failure::Config(format!("{}: {e}", path.display()));
    let entries = read_checkpoint(&bytes[..]).map_err(bad)?;
    let mut net = build_unet(&unet_config_from_checkpoint(&entries).map_err(bad)?).map_err(bad)?;
    load_checkpoint(&mut net, &bytes[..]).map_err(bad)?;
    Ok(net)
}

fn cmd_predict(args: PredictArgs, file: &ConfigFile) -> Outcome {
    let checkpoint = required(file.pick_opt(args.checkpoint, "checkpoint").map_err(config_err)?, "checkpoint")?;
    let data = required(file.pick_opt(args.data, "data").map_err(config_err)?, "data")?;
    let out = required(file.pick_opt(args.out, "out").map_err(config_err)?, "out")?;
    let batch = file.pick(args.batch_size, "batch_size", 4usize).map_err(config_err)?;
    if batch == 0 {
        return Err(Failure::Config("--batch-size must be >= 1".into()));
    }
    let net = load_segmentor(&checkpoint)?;
    let files = vol1_files(&data)?;
    if files.is_empty() {
        return Err(Failure::Data(format!("no .vol1 files in {}", data.display())));
    }
    create_out_dir(&out)?;
    for f in &files {
        let case = load_volume(f).map_err(|e| Failure::Data(format!("{}: {e}", f.display())))?;
        let mask = predict_volume_batched(&net, &case, batch)?;
        let target = out.join(format!("{}.vol1", case.case_id));
        save_mask(&mask, &target)?;
        eprintln!("{}: {} lesion voxels", case.case_id, mask.count());
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, file: &ConfigFile) -> Outcome {
    let pred = required(args.pred, "pred")?;
    let gt = required(file.pick_opt(args.data, "data").map_err(config_err)?, "data")?;
    let pred_files = vol1_files(&pred)?;
    let gt_files = vol1_files(&gt)?;
    let pred_ids: Vec<String> = pred_files.iter().map(|p| case_id(p)).collect();
    let gt_ids: Vec<String> = gt_files.iter().map(|p| case_id(p)).collect();
    let mut unmatched: Vec<String> =
        pred_ids.iter().filter(|id| !gt_ids.contains(id)).map(|id| format!("{id} (no ground truth)")).collect();
    unmatched.extend(gt_ids.iter().filter(|id| !pred_ids.contains(id)).map(|id| format!("{id} (no prediction)")));
    if !unmatched.is_empty() {
        return Err(Failure::Data(format!("unmatched cases: {}", unmatched.join(", "))));
    }
    if pred_files.is_empty() {
        return Err(Failure::Data("no cases to evaluate".into()));
    }
    let mut csv = String::from(MetricsReport::CSV_HEADER);
    csv.push('\n');
    let mut reports = Vec::with_capacity(pred_files.len());
    for (p, g) in pred_files.iter().zip(&gt_files) {
        let load = |path: &Path| load_mask(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())));
        let report = evaluate_case(&load(p)?, &load(g)?).map_err(|e| Failure::Data(format!("{}: {e}", case_id(p))))?;
        csv.push_str(&report.csv_row(&case_id(p)));
        csv.push('\n');
        reports.push(report);
    }
    let set = evaluate_set(&reports)?;
    csv.push_str(&set.mean.csv_row("mean"));
    csv.push('\n');
    print!("{csv}");
    if set.distance_excluded + set.avd_excluded > 0 {
        eprintln!(
            "{} case(s) left out of distance means, {} out of the AVD mean (empty masks)",
            set.distance_excluded, set.avd_excluded
        );
    }
    if let Some(path) = args.out {
        fs::write(&path, &csv).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, file: &ConfigFile) -> Outcome {
    let seed = file.pick(args.seed, "seed", 0u64).map_err(config_err)?;
    let results = full_suite(seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<24} worst {:.3e}  tol {:.0e}  checked {:>4}  skipped {:>4}  {status}",
            r.name, r.max_rel_error, r.tolerance, r.checked, r.skipped
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn cmd_phantom(args: PhantomArgs, file: &ConfigFile) -> Outcome {
    let out = required(file.pick_opt(args.out, "out").map_err(config_err)?, "out")?;
    let count = file.pick(args.count, "phantom", 1usize).map_err(config_err)?;
    let seed = file.pick(args.seed, "seed", 0u64).map_err(config_err)?;
    let size = file.pick(args.size, "size", 256usize).map_err(config_err)?;
    let depth = file.pick(args.depth, "depth", 4usize).map_err(config_err)?;
    let lesions = file.pick(args.lesions, "lesions", 2usize).map_err(config_err)?;
    let configs: Vec<PhantomConfig> = (0..count as u64)
        .map(|i| PhantomConfig { seed: seed.wrapping_add(i), depth, size, lesion_count: lesions })
        .collect();
    // Reject bad geometry before touching the output directory.
    let cases = configs.iter().map(generate_phantom).collect::<Result<Vec<_>, _>>()?;
    create_out_dir(&out)?;
    for case in &cases {
        save_volume(case, &out.join(format!("{}.vol1", case.case_id)))?;
    }
    eprintln!("wrote {} phantom case(s) to {}", cases.len(), out.display());
    Ok(())
}

fn apply_thread_limit() -> Outcome {
    if let Ok(v) = std::env::var("ADVSEG_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("ADVSEG_THREADS must be a positive integer, got `{v}`")))?;
        std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    apply_thread_limit()?;
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(config_err)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Train(a) => cmd_train(a, &file),
        Command::Predict(a) => cmd_predict(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Gradcheck(a) => cmd_gradcheck(a, &file),
        Command::Phantom(a) => cmd_phantom(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
