use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use uap_core::eval::{
    craft, craft_and_evaluate, evaluate_uap, labelled, one_per_class, single_sample_attack,
    single_sample_config, sweep_confidence, sweep_datacount, transfer_matrix, trim_grid,
    write_json, write_sweep, CraftConfig, SweepRow, DEFAULT_KAPPA_GRID, DEFAULT_M_GRID,
};
use uap_core::model::{
    accuracy, export_dataset, generate_synthetic_dataset, import_dataset, load_checkpoint,
    save_checkpoint, train, Architecture, DatasetSpec, LabeledSample, Split, TrainConfig,
};
use uap_core::stats::{critical_value, two_proportion_z_with, DEFAULT_Z_ALPHA};
use uap_core::{
    AdamConfig, AttackMode, DdnConfig, GreedyConfig, Model, Norm, PenaltyConfig, Perturbation,
    Projection,
};

#[derive(Parser)]
#[command(
    name = "uap",
    version,
    about = "Craft and evaluate universal adversarial audio perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tone dataset as WAV files plus labels.csv.
    GenData(GenData),
    /// Train a victim classifier on a dataset's training split.
    TrainVictim(TrainVictim),
    /// Craft a universal perturbation from a dataset's training split.
    Craft(Craft),
    /// Evaluate a perturbation and write per-sample rows as CSV.
    Evaluate(Evaluate),
    /// Craft and evaluate over a parameter grid.
    #[command(subcommand)]
    Sweep(Sweep),
    /// Success rates of each model's perturbation against the other models.
    Transfer(Transfer),
    /// Penalty perturbations crafted from one sample of each class.
    SingleSample(SingleSample),
    /// Two-proportion z-test on a pair of success rates.
    Ztest(Ztest),
}

#[derive(Args, Serialize)]
struct GenData {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Samples per class; two thirds go to training, the rest to test.
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Draw the carrier frequency and phase per sample instead of per class.
    #[arg(long)]
    random_carrier: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainVictim {
    #[arg(long, value_parser = parse_arch)]
    #[serde(serialize_with = "display")]
    arch: Architecture,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Greedy,
    Penalty,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Targeted,
    Untargeted,
}

#[derive(Args, Serialize, Clone)]
struct AttackArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Untargeted)]
    mode: ModeArg,
    /// Target class for targeted attacks.
    #[arg(long)]
    target: Option<usize>,
    /// Penalty coefficient (penalty method).
    #[arg(long)]
    c: Option<f64>,
    /// Confidence margin on the logits (penalty method).
    #[arg(long)]
    kappa: Option<f64>,
    /// Stop once the training success rate reaches 1 - delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Radius of the norm ball (greedy method).
    #[arg(long)]
    xi: Option<f64>,
    /// Norm of the ball, 2 or inf (greedy method).
    #[arg(long, value_parser = parse_norm)]
    #[serde(serialize_with = "display_opt")]
    p: Option<Norm>,
    /// Mini-batch size (penalty method).
    #[arg(long)]
    batch: Option<usize>,
    /// Iteration cap (Adam steps for penalty, epochs for greedy).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Project the penalty perturbation onto an L2 ball of this radius.
    #[arg(long)]
    project_l2: Option<f64>,
}

fn resolve_mode(mode: ModeArg, target: Option<usize>) -> Result<AttackMode> {
    match (mode, target) {
        (ModeArg::Untargeted, None) => Ok(AttackMode::Untargeted),
        (ModeArg::Untargeted, Some(_)) => bail!("--target only applies to targeted attacks"),
        (ModeArg::Targeted, Some(t)) => Ok(AttackMode::Targeted(t)),
        (ModeArg::Targeted, None) => bail!("targeted attacks need --target"),
    }
}

impl AttackArgs {
    fn mode(&self) -> Result<AttackMode> {
        resolve_mode(self.mode, self.target)
    }

    fn greedy(&self) -> Result<GreedyConfig> {
        let mut cfg = GreedyConfig::new(self.mode()?);
        cfg.delta = self.delta;
        cfg.seed = self.seed;
        cfg.inner = DdnConfig {
            seed: self.seed,
            ..DdnConfig::default()
        };
        if let Some(xi) = self.xi {
            cfg.xi = xi;
        }
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(n) = self.iters {
            cfg.max_epochs = n;
        }
        Ok(cfg)
    }

    fn penalty(&self) -> Result<PenaltyConfig> {
        let mut cfg = PenaltyConfig::new(self.mode()?);
        cfg.delta = self.delta;
        cfg.seed = self.seed;
        if let Some(c) = self.c {
            cfg.c = c;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(b) = self.batch {
            cfg.batch_size = b;
        }
        if let Some(n) = self.iters {
            cfg.max_iterations = n;
        }
        cfg.projection = self.project_l2.map(|xi| Projection { p: Norm::L2, xi });
        Ok(cfg)
    }

    fn config(&self, method: MethodArg) -> Result<CraftConfig> {
        Ok(match method {
            MethodArg::Greedy => CraftConfig::Greedy(self.greedy()?),
            MethodArg::Penalty => CraftConfig::Penalty(self.penalty()?),
        })
    }
}

#[derive(Args, Serialize)]
struct Craft {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    attack: AttackArgs,
}

#[derive(Args, Serialize)]
struct Evaluate {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pert: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    #[serde(serialize_with = "display")]
    split: Split,
}

#[derive(Subcommand)]
enum Sweep {
    /// Penalty method over a grid of confidence values.
    Confidence(SweepConfidence),
    /// Both methods over a grid of training-set sizes.
    Datacount(SweepDatacount),
}

#[derive(Args, Serialize)]
struct SweepConfidence {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated confidence values (default 0,10,20,40,60,90).
    #[arg(long, value_delimiter = ',')]
    kappas: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    attack: AttackArgs,
}

#[derive(Args, Serialize)]
struct SweepDatacount {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training-set sizes (default 1,5,10,50,100,500, trimmed
    /// to the training split).
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(flatten)]
    attack: AttackArgs,
}

#[derive(Args, Serialize)]
struct Transfer {
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One perturbation per model; crafted from the training split when absent.
    #[arg(long, value_delimiter = ',')]
    perts: Option<Vec<PathBuf>>,
    #[arg(long, value_enum, default_value_t = MethodArg::Penalty)]
    method: MethodArg,
    #[command(flatten)]
    #[serde(flatten)]
    attack: AttackArgs,
}

#[derive(Args, Serialize)]
struct SingleSample {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Untargeted)]
    mode: ModeArg,
    #[arg(long)]
    target: Option<usize>,
    /// Penalty coefficient (default 0.2).
    #[arg(long)]
    c: Option<f64>,
    /// Confidence margin (default 90).
    #[arg(long)]
    kappa: Option<f64>,
    /// Adam steps per sample (default 19).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct Ztest {
    #[arg(long)]
    pl: f64,
    #[arg(long)]
    ph: f64,
    #[arg(long)]
    m: u64,
    /// One-sided significance level; the default critical value is 1.58.
    #[arg(long)]
    alpha: Option<f64>,
    /// Also write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn display_opt<T: std::fmt::Display, S: serde::Serializer>(
    v: &Option<T>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: uap_core::Error| e.to_string())
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e: uap_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: uap_core::Error| e.to_string())
}

/// Path of the run manifest written beside `artifact`.
fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    artifact.with_file_name(name)
}

fn write_manifest<C: Serialize>(
    artifact: &Path,
    command: &str,
    args: &C,
    results: serde_json::Value,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "results": results,
    });
    let path = manifest_path(artifact);
    write_json(&manifest, &path).with_context(|| format!("writing {}", path.display()))
}

fn load_split(dir: &Path, split: Split) -> Result<Vec<LabeledSample>> {
    let data = import_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    let items = data.split(split);
    if items.is_empty() {
        bail!("dataset {} has no {split} samples", dir.display());
    }
    Ok(items)
}

fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn gen_data(a: &GenData) -> Result<()> {
    let spec = DatasetSpec {
        random_carrier: a.random_carrier,
        ..DatasetSpec::new(a.classes, a.per_class, a.dim, a.noise, a.seed)
    };
    let data = generate_synthetic_dataset(&spec)?;
    export_dataset(&data, &a.out)?;
    write_manifest(
        &a.out.join(uap_core::model::LABELS_FILE),
        "gen-data",
        a,
        json!({ "spec": spec, "samples": data.items.len() }),
    )?;
    println!("wrote {} samples to {}", data.items.len(), a.out.display());
    Ok(())
}

fn train_victim(a: &TrainVictim) -> Result<()> {
    let data = import_dataset(&a.data)?;
    let train_set = data.split(Split::Train);
    let test_set = data.split(Split::Test);
    let mut model = a.arch.build(data.dim, data.classes, a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    let history = train(&mut model, &train_set, &cfg)?;
    // match what a reload will see
    model.snap_to_f32();
    let train_acc = accuracy(&model, &train_set)?;
    let test_acc = if test_set.is_empty() {
        None
    } else {
        Some(accuracy(&model, &test_set)?)
    };
    create_parent(&a.out)?;
    save_checkpoint(&model, &a.out)?;
    write_manifest(
        &a.out,
        "train-victim",
        a,
        json!({ "train_config": cfg, "history": history, "train_accuracy": train_acc, "test_accuracy": test_acc }),
    )?;
    println!(
        "train accuracy {train_acc:.4}, test accuracy {}",
        test_acc.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn craft_cmd(a: &Craft) -> Result<()> {
    let model = load_model(&a.model)?;
    let train_set = load_split(&a.data, Split::Train)?;
    let cfg = a.attack.config(a.method)?;
    let mut crafted = craft(&model, &labelled(&train_set), &cfg)?;
    crafted.perturbation.snap_to_f32();
    create_parent(&a.out)?;
    crafted.perturbation.save(&a.out)?;
    write_manifest(
        &a.out,
        "craft",
        a,
        json!({
            "config": cfg,
            "train_asr": crafted.train_asr,
            "converged": crafted.converged,
            "iterations": crafted.iterations,
            "norms": crafted.perturbation.norms(),
        }),
    )?;
    println!(
        "train ASR {:.4} after {} iterations (converged: {})",
        crafted.train_asr, crafted.iterations, crafted.converged
    );
    Ok(())
}

fn evaluate_cmd(a: &Evaluate) -> Result<()> {
    let model = load_model(&a.model)?;
    let samples = load_split(&a.data, a.split)?;
    let pert =
        Perturbation::load(&a.pert).with_context(|| format!("loading {}", a.pert.display()))?;
    let report = evaluate_uap(&model, &samples, &pert, pert.mode)?;
    create_parent(&a.report)?;
    let file = std::fs::File::create(&a.report)
        .with_context(|| format!("creating {}", a.report.display()))?;
    report.write_rows_csv(file)?;
    write_manifest(
        &a.report,
        "evaluate",
        a,
        json!({
            "method": report.method,
            "mode": report.mode,
            "test_asr": report.test_asr,
            "mean_snr": report.mean_snr,
            "mean_l_db": report.mean_l_db,
            "rows": report.rows.len(),
            "perturbation": report.config,
        }),
    )?;
    eprintln!("evaluated in {:.2?}", report.elapsed);
    println!(
        "ASR {:.4}, mean SNR {:.2} dB, mean l_dB {}",
        report.test_asr,
        report.mean_snr,
        report.mean_l_db.map_or("n/a".into(), |v| format!("{v:.3}"))
    );
    Ok(())
}

fn write_sweep_file(path: &Path, rows: &[SweepRow]) -> Result<()> {
    create_parent(path)?;
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_sweep(rows, file)?;
    for r in rows {
        println!(
            "{} m={} kappa={} train {:.3} test {:.3} snr {:.2}",
            r.method,
            r.m,
            r.kappa.map_or("-".into(), |k| k.to_string()),
            r.train_asr,
            r.test_asr,
            r.mean_snr
        );
    }
    Ok(())
}

fn sweep_confidence_cmd(a: &SweepConfidence) -> Result<()> {
    let model = load_model(&a.model)?;
    let train_set = load_split(&a.data, Split::Train)?;
    let test_set = load_split(&a.data, Split::Test)?;
    let kappas = a
        .kappas
        .clone()
        .unwrap_or_else(|| DEFAULT_KAPPA_GRID.to_vec());
    let base = a.attack.penalty()?;
    let cells = sweep_confidence(&model, &train_set, &test_set, &kappas, &base)?;
    let rows: Vec<SweepRow> = cells.into_iter().map(|(r, _)| r).collect();
    write_sweep_file(&a.out, &rows)?;
    write_manifest(
        &a.out,
        "sweep confidence",
        a,
        json!({ "base": base, "kappas": kappas }),
    )
}

fn sweep_datacount_cmd(a: &SweepDatacount) -> Result<()> {
    let model = load_model(&a.model)?;
    let train_set = load_split(&a.data, Split::Train)?;
    let test_set = load_split(&a.data, Split::Test)?;
    let ms = match &a.ms {
        Some(ms) => ms.clone(),
        None => trim_grid(&DEFAULT_M_GRID, train_set.len()),
    };
    let greedy = a.attack.greedy()?;
    let penalty = a.attack.penalty()?;
    let cells = sweep_datacount(
        &model,
        &train_set,
        &test_set,
        &ms,
        &greedy,
        &penalty,
        a.attack.seed,
    )?;
    let rows: Vec<SweepRow> = cells.into_iter().map(|(r, _)| r).collect();
    write_sweep_file(&a.out, &rows)?;
    write_manifest(
        &a.out,
        "sweep datacount",
        a,
        json!({ "greedy": greedy, "penalty": penalty, "ms": ms }),
    )
}

fn transfer_cmd(a: &Transfer) -> Result<()> {
    if a.models.len() < 2 {
        bail!("--models needs at least two checkpoints");
    }
    let models = a
        .models
        .iter()
        .map(|p| {
            let name = p.file_name().map_or_else(
                || p.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            Ok((name, load_model(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let test_set = load_split(&a.data, Split::Test)?;
    let cfg = a.attack.config(a.method)?;
    let perts = match &a.perts {
        Some(paths) => {
            if paths.len() != models.len() {
                bail!("--perts must list one perturbation per model");
            }
            paths
                .iter()
                .map(|p| Perturbation::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            let train_set = load_split(&a.data, Split::Train)?;
            models
                .iter()
                .map(|(_, m)| {
                    Ok(craft_and_evaluate(m, &train_set, &test_set, &cfg)?
                        .0
                        .perturbation)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let matrix = transfer_matrix(&models, &perts, &test_set, cfg.mode())?;
    create_parent(&a.out)?;
    let file =
        std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    matrix.write_csv(file)?;
    write_manifest(
        &a.out,
        "transfer",
        a,
        json!({ "config": cfg, "matrix": matrix }),
    )?;
    for (name, row) in matrix.names.iter().zip(&matrix.asr) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| v.map_or("-".into(), |x| format!("{x:.3}")))
            .collect();
        println!("{name}: {}", cells.join(" "));
    }
    Ok(())
}

fn single_sample_cmd(a: &SingleSample) -> Result<()> {
    let model = load_model(&a.model)?;
    let train_set = load_split(&a.data, Split::Train)?;
    let test_set = load_split(&a.data, Split::Test)?;
    let mode = resolve_mode(a.mode, a.target)?;
    let picks = one_per_class(&train_set, a.seed);
    let base = single_sample_config(mode);
    let cfg = PenaltyConfig {
        c: a.c.unwrap_or(base.c),
        kappa: a.kappa.unwrap_or(base.kappa),
        max_iterations: a.iters.unwrap_or(base.max_iterations),
        seed: a.seed,
        ..base
    };
    let reports = single_sample_attack(&model, &picks, &test_set, &cfg)?;
    let rows: Vec<SweepRow> = reports
        .iter()
        .map(|r| SweepRow {
            method: r.method,
            mode: r.mode.to_string(),
            m: 1,
            kappa: Some(cfg.kappa),
            train_asr: r.train_asr.unwrap_or(0.0),
            test_asr: r.test_asr,
            mean_snr: r.mean_snr,
            mean_l_db: r.mean_l_db,
            converged: r.train_asr.is_some_and(|t| t >= 1.0 - cfg.delta),
            iterations: cfg.max_iterations,
        })
        .collect();
    write_sweep_file(&a.out, &rows)?;
    let ids: Vec<&str> = picks.iter().map(|p| p.id.as_str()).collect();
    write_manifest(
        &a.out,
        "single-sample",
        a,
        json!({ "config": cfg, "samples": ids }),
    )
}

fn ztest_cmd(a: &Ztest) -> Result<()> {
    let z_alpha = match a.alpha {
        Some(alpha) => critical_value(alpha)?,
        None => DEFAULT_Z_ALPHA,
    };
    let t = two_proportion_z_with(a.pl, a.ph, a.m, z_alpha)?;
    println!(
        "Z = {:.3} ({} H0 at z_alpha = {:.3})",
        t.z,
        if t.reject { "reject" } else { "keep" },
        t.z_alpha
    );
    if let Some(out) = &a.out {
        create_parent(out)?;
        write_json(&t, out)?;
        write_manifest(out, "ztest", a, serde_json::to_value(t)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainVictim(a) => train_victim(a),
        Command::Craft(a) => craft_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(Sweep::Confidence(a)) => sweep_confidence_cmd(a),
        Command::Sweep(Sweep::Datacount(a)) => sweep_datacount_cmd(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::SingleSample(a) => single_sample_cmd(a),
        Command::Ztest(a) => ztest_cmd(a),
    }
}
