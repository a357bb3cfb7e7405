//! The `gmvae` command-line tool.
//!
//! Every command reads an optional JSON [`RunConfig`] and then applies flag
//! overrides; flags win. Outputs land in the configured output directory.
//! Exit status is 0 on success, 1 for usage errors and 2 for failures while
//! running.

mod config;
mod report;

pub use config::{DataSource, RunConfig, Split, ThresholdOverrides};
pub use report::{
    read_dump, read_json, write_dump, write_json, ClassReport, Counts, CsvOut, DumpSidecar, EvalReport,
    SCHEMA_VERSION,
};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    fgsm, momentum_iterative, pgd, whitebox_adversarial, whitebox_fooling, AttackConfig, AttackResult, NormOrder,
    Outcome,
};
use crate::data::{write_idx, Dataset, SyntheticSpec};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::gmvae::GmvaeModel;
use crate::reclassify::{reclassify, reclassify_accept_always, InversionConfig};
use crate::selector::{calibrate, selective_classify, Decision, RejectReason, Thresholds, DEFAULT_CONFIDENCE};
use crate::training::{train_with_progress, TrainStats};

#[derive(Debug, Parser)]
#[command(name = "gmvae", version, about = "Gaussian-mixture VAE classifier with a reject option")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes the checkpoint, training statistics and calibrated thresholds.
    Train(TrainArgs),
    /// Classify the test split with and without thresholds.
    Eval(EvalArgs),
    /// FGSM over a grid of budgets, classifying every perturbed batch.
    Sweep(SweepArgs),
    /// Run one attack over the test split and report per-case outcomes.
    Attack(AttackArgs),
    /// Recover labels for a dump of rejected samples by decoder inversion.
    Reclassify(ReclassifyArgs),
    /// Write a synthetic train/test pair in IDX format.
    GenData(GenDataArgs),
    /// Recompute thresholds from saved training statistics.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed for training and attacks.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// IDX image file; replaces the synthetic source.
    #[arg(long, requires = "labels", conflicts_with_all = ["classes", "per_class", "test_per_class", "side", "noise", "data_seed"])]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Checkpoint; defaults to `<out-dir>/model.gmva`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Thresholds JSON; defaults to `<out-dir>/thresholds.json`.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    tau_enc: Option<f64>,
    #[arg(long)]
    tau_dec: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Keep only `--labeled-per-class` labels per class.
    #[arg(long)]
    semi_supervised: bool,
    #[arg(long)]
    labeled_per_class: Option<usize>,
    /// Confidence for the latent threshold.
    #[arg(long)]
    confidence: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Budgets to sweep; default 0, 0.02, ..., 0.30.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Budgets whose rejected samples are dumped for `reclassify`.
    #[arg(long, value_delimiter = ',')]
    dump_at: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackKind {
    Fgsm,
    Pgd,
    Mim,
    Whitebox,
    Fooling,
}

impl AttackKind {
    fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mim => "mim",
            AttackKind::Whitebox => "whitebox",
            AttackKind::Fooling => "fooling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    kind: AttackKind,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight of the perturbation penalty in the white-box objective.
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    /// Attack only the first N test samples of each class.
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Fooling only: random starts per class.
    #[arg(long, default_value_t = 50)]
    seeds_per_class: u64,
}

#[derive(Debug, Args)]
struct ReclassifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Dump prefix, as written by eval, sweep or attack.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Training statistics; defaults to `<out-dir>/stats.json`.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    confidence: Option<f64>,
}

/// `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub stats: TrainStats,
}

/// `thresholds.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub thresholds: Thresholds,
}

/// `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub schema_version: u32,
    pub thresholded: EvalReport,
    pub unthresholded: EvalReport,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Reclassify(a) => cmd_reclassify(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(s) = cfg.seed {
        cfg.train.seed = s;
        cfg.attack.seed = s;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) -> Result<()> {
    if let (Some(images), Some(labels)) = (&a.images, &a.labels) {
        cfg.data = DataSource::Idx {
            images: images.clone(),
            labels: labels.clone(),
        };
    }
    let synthetic_flags = a.classes.is_some()
        || a.per_class.is_some()
        || a.test_per_class.is_some()
        || a.side.is_some()
        || a.noise.is_some()
        || a.data_seed.is_some();
    if synthetic_flags {
        if let DataSource::Idx { .. } = cfg.data {
            cfg.data = DataSource::default();
        }
    }
    if let DataSource::Synthetic { spec, test_per_class } = &mut cfg.data {
        if let Some(v) = a.classes {
            spec.num_classes = v;
        }
        if let Some(v) = a.per_class {
            spec.per_class = v;
        }
        if let Some(v) = a.test_per_class {
            *test_per_class = v;
        }
        if let Some(v) = a.side {
            spec.side = v;
        }
        if let Some(v) = a.noise {
            spec.noise = v;
        }
        if let Some(v) = a.data_seed {
            spec.seed = v;
        }
    }
    if let DataSource::Idx { images, labels } = &cfg.data {
        for p in [images, labels] {
            if !p.exists() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
    }
    Ok(())
}

fn apply_threshold_flags(cfg: &mut RunConfig, a: &ModelArgs) {
    if a.tau_enc.is_some() {
        cfg.thresholds.tau_enc = a.tau_enc;
    }
    if a.tau_dec.is_some() {
        cfg.thresholds.tau_dec = a.tau_dec;
    }
}

fn load_model(cfg: &RunConfig, a: &ModelArgs) -> Result<GmvaeModel> {
    let path = a.model.clone().unwrap_or_else(|| cfg.out_dir.join("model.gmva"));
    GmvaeModel::load(&path)
}

/// Thresholds from file (when present) with overrides applied on top.
fn load_thresholds(cfg: &RunConfig, a: &ModelArgs) -> Result<Thresholds> {
    let path = a.thresholds.clone().unwrap_or_else(|| cfg.out_dir.join("thresholds.json"));
    let o = cfg.thresholds;
    let mut t = if a.thresholds.is_none() && !path.exists() && o.tau_enc.is_some() && o.tau_dec.is_some() {
        Thresholds {
            tau_enc: 0.0,
            tau_dec: 0.0,
            confidence: o.confidence.unwrap_or(DEFAULT_CONFIDENCE),
        }
    } else {
        read_json::<ThresholdsFile>(&path)?.thresholds
    };
    if let Some(v) = o.tau_enc {
        t.tau_enc = v;
    }
    if let Some(v) = o.tau_dec {
        t.tau_dec = v;
    }
    Ok(t)
}

/// Test split with every label present and within the model's classes.
fn labeled_test_set(cfg: &RunConfig, model: &GmvaeModel) -> Result<(Dataset, Vec<usize>)> {
    let d = cfg.data.load(Split::Test)?;
    if d.input_dim() != model.input_dim() {
        return Err(Error::shape("test data vs model", &[d.input_dim()], &[model.input_dim()]));
    }
    let mut labels = Vec::with_capacity(d.len());
    for l in d.labels() {
        match l {
            Some(y) if *y < model.num_classes() => labels.push(*y),
            Some(y) => {
                return Err(Error::UnknownLabel {
                    label: *y,
                    num_classes: model.num_classes(),
                })
            }
            None => return Err(Error::Config("evaluation data must be fully labeled".into())),
        }
    }
    Ok((d, labels))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn reason_str(d: &Decision) -> &'static str {
    d.reason().map(RejectReason::as_str).unwrap_or("")
}

fn verdict_str(d: &Decision) -> &'static str {
    if d.is_accepted() {
        "accept"
    } else {
        "reject"
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data)?;
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.adam.learning_rate = v;
    }
    if a.semi_supervised {
        t.semi_supervised = true;
    }
    if let Some(v) = a.labeled_per_class {
        t.labeled_per_class = Some(v);
    }
    let confidence = a.confidence.or(cfg.thresholds.confidence).unwrap_or(DEFAULT_CONFIDENCE);

    let data = cfg.data.load(Split::Train)?;
    let (model, stats) = train_with_progress(&data, &cfg.train, |r| {
        eprintln!("epoch {:>4}  loss {:.6}  recon {:.6}  latent {:.6}", r.epoch, r.mean_loss, r.mean_recon, r.mean_latent);
    })?;
    let thresholds = calibrate(&stats, model.latent_dim(), confidence)?;

    let out = &cfg.out_dir;
    model.save(out.join("model.gmva"))?;
    println!(
        "trained {} parameters; labeled steps {}, unlabeled steps {}",
        model.num_params(),
        stats.labeled_steps,
        stats.unlabeled_steps
    );
    write_json(
        &out.join("stats.json"),
        &StatsFile {
            schema_version: SCHEMA_VERSION,
            stats,
        },
    )?;
    write_json(
        &out.join("thresholds.json"),
        &ThresholdsFile {
            schema_version: SCHEMA_VERSION,
            thresholds,
        },
    )?;
    println!("tau_enc {}  tau_dec {}", thresholds.tau_enc, thresholds.tau_dec);
    write_json(&out.join("config.json"), &cfg)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let cfg = base_config(&a.common)?;
    let model = load_model(&cfg, &a.model)?;
    let path = a.stats.clone().unwrap_or_else(|| cfg.out_dir.join("stats.json"));
    let stats: StatsFile = read_json(&path)?;
    let confidence = a.confidence.or(cfg.thresholds.confidence).unwrap_or(DEFAULT_CONFIDENCE);
    let thresholds = calibrate(&stats.stats, model.latent_dim(), confidence)?;
    let dest = a.model.thresholds.clone().unwrap_or_else(|| cfg.out_dir.join("thresholds.json"));
    write_json(
        &dest,
        &ThresholdsFile {
            schema_version: SCHEMA_VERSION,
            thresholds,
        },
    )?;
    println!("tau_enc {}  tau_dec {}", thresholds.tau_enc, thresholds.tau_dec);
    Ok(())
}

/// Dumps the rejected entries of `decisions` under `prefix`.
fn dump_rejected(
    prefix: &Path,
    source: String,
    model: &GmvaeModel,
    dataset: &Dataset,
    images: &[Tensor],
    true_labels: &[Option<usize>],
    decisions: &[Decision],
) -> Result<usize> {
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    let mut reasons = Vec::new();
    let mut correct = 0;
    for ((x, y), d) in images.iter().zip(true_labels).zip(decisions) {
        match d.reason() {
            Some(r) => {
                imgs.push(x.clone());
                labels.push(*y);
                reasons.push(r);
            }
            None if d.label() == *y => correct += 1,
            None => {}
        }
    }
    let n = imgs.len();
    write_dump(
        prefix,
        &imgs,
        &DumpSidecar {
            schema_version: SCHEMA_VERSION,
            source,
            num_classes: model.num_classes(),
            rows: dataset.rows(),
            cols: dataset.cols(),
            true_labels: labels,
            detected_by: reasons,
            source_total: images.len(),
            source_accepted_correct: correct,
        },
    )?;
    Ok(n)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data)?;
    apply_threshold_flags(&mut cfg, &a.model);
    let model = load_model(&cfg, &a.model)?;
    let thresholds = load_thresholds(&cfg, &a.model)?;
    let (data, labels) = labeled_test_set(&cfg, &model)?;

    let both: Vec<(Decision, Decision)> = data
        .images()
        .par_iter()
        .map(|x| {
            let d = selective_classify(&model, &thresholds, x)?;
            let u = Decision::Accepted(d.diagnostics().clone());
            Ok((d, u))
        })
        .collect::<Result<_>>()?;
    let (thr, unthr): (Vec<Decision>, Vec<Decision>) = both.into_iter().unzip();
    let k = model.num_classes();
    let report = EvalFile {
        schema_version: SCHEMA_VERSION,
        thresholded: EvalReport::from_decisions(&thr, &labels, k, Some(thresholds)),
        unthresholded: EvalReport::from_decisions(&unthr, &labels, k, None),
    };
    let out = &cfg.out_dir;
    write_json(&out.join("eval.json"), &report)?;

    let mut csv = CsvOut::create(
        &out.join("eval.csv"),
        &["index", "true_label", "unthresholded_label", "verdict", "label", "reason", "mahalanobis_sq", "recon_error"],
    )?;
    for (i, (d, y)) in thr.iter().zip(&labels).enumerate() {
        let diag = d.diagnostics();
        csv.row([
            i.to_string(),
            y.to_string(),
            diag.label.to_string(),
            verdict_str(d).to_string(),
            fmt_opt(d.label()),
            reason_str(d).to_string(),
            diag.mahalanobis_sq.to_string(),
            diag.recon_error.to_string(),
        ])?;
    }
    csv.finish()?;
    let truth: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
    dump_rejected(&out.join("eval-rejected"), "eval".into(), &model, &data, data.images(), &truth, &thr)?;

    let t = &report.thresholded;
    let u = &report.unthresholded;
    println!("thresholded:   accuracy {:.2}%  error {:.2}%  rejection {:.2}%", t.accuracy, t.error, t.rejection);
    println!("unthresholded: accuracy {:.2}%  error {:.2}%", u.accuracy, u.error);
    Ok(())
}

fn default_epsilons() -> Vec<f64> {
    (0..=15).map(|i| i as f64 * 0.02).collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data)?;
    apply_threshold_flags(&mut cfg, &a.model);
    let model = load_model(&cfg, &a.model)?;
    let thresholds = load_thresholds(&cfg, &a.model)?;
    let (data, labels) = labeled_test_set(&cfg, &model)?;
    let epsilons = a.epsilons.clone().unwrap_or_else(default_epsilons);
    if let Some(e) = epsilons.iter().chain(&a.dump_at).find(|e| !(**e >= 0.0)) {
        return Err(Error::Config(format!("epsilon must be nonnegative, got {e}")));
    }

    let out = &cfg.out_dir;
    let mut csv = CsvOut::create(
        &out.join("sweep.csv"),
        &["epsilon", "accuracy", "error", "rejection", "accepted_correct", "accepted_wrong", "rejected", "total"],
    )?;
    let mut grid = epsilons.clone();
    for e in &a.dump_at {
        if !grid.contains(e) {
            grid.push(*e);
        }
    }
    for &eps in &grid {
        let results: Vec<AttackResult> = (0..data.len())
            .into_par_iter()
            .map(|i| fgsm(&model, &thresholds, data.image(i), labels[i], eps, cfg.attack.norm))
            .collect::<Result<_>>()?;
        let decisions: Vec<Decision> = results.iter().map(|r| r.decision.clone()).collect();
        let r = EvalReport::from_decisions(&decisions, &labels, model.num_classes(), Some(thresholds));
        if epsilons.contains(&eps) {
            csv.row([
                eps.to_string(),
                r.accuracy.to_string(),
                r.error.to_string(),
                r.rejection.to_string(),
                r.counts.accepted_correct.to_string(),
                r.counts.accepted_wrong.to_string(),
                r.counts.rejected.to_string(),
                r.counts.total.to_string(),
            ])?;
            println!(
                "eps {eps:.3}  accuracy {:.2}%  error {:.2}%  rejection {:.2}%",
                r.accuracy, r.error, r.rejection
            );
        }
        if a.dump_at.contains(&eps) {
            let images: Vec<Tensor> = results.into_iter().map(|r| r.x_adv).collect();
            let truth: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
            let prefix = out.join(format!("sweep-eps{eps}-rejected"));
            let n = dump_rejected(&prefix, format!("sweep eps={eps}"), &model, &data, &images, &truth, &decisions)?;
            println!("dumped {n} rejected samples to {}", prefix.display());
        }
    }
    csv.finish()
}

/// One attacked case: sample index (seed for fooling), target and result.
struct Case {
    sample: usize,
    true_label: Option<usize>,
    target: Option<usize>,
    result: AttackResult,
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data)?;
    apply_threshold_flags(&mut cfg, &a.model);
    let model = load_model(&cfg, &a.model)?;
    let thresholds = load_thresholds(&cfg, &a.model)?;
    let (data, labels) = labeled_test_set(&cfg, &model)?;

    let mut ac = cfg.attack;
    // the white-box attacks get their own step budget unless one was set
    let whitebox = matches!(a.kind, AttackKind::Whitebox | AttackKind::Fooling);
    if whitebox && ac.steps == AttackConfig::default().steps {
        ac.steps = AttackConfig::whitebox().steps;
    }
    if let Some(v) = a.epsilon {
        ac.epsilon = v;
    }
    if let Some(v) = a.penalty {
        ac.penalty = v;
    }
    if let Some(v) = a.steps {
        ac.steps = v;
    }
    if a.step_size.is_some() {
        ac.step_size = a.step_size;
    }
    if let Some(n) = a.norm {
        ac.norm = match n {
            NormArg::L2 => NormOrder::L2,
            NormArg::Linf => NormOrder::Linf,
        };
    }
    ac.validate()?;

    let k = model.num_classes();
    let mut picked = Vec::new();
    for c in 0..k {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == c).collect();
        let take = a.samples_per_class.unwrap_or(idx.len()).min(idx.len());
        picked.extend_from_slice(&idx[..take]);
    }
    picked.sort_unstable();

    let jobs: Vec<(usize, Option<usize>, Option<usize>)> = match a.kind {
        AttackKind::Whitebox => picked
            .iter()
            .flat_map(|&i| {
                let y = labels[i];
                (0..k).filter(move |&t| t != y).map(move |t| (i, Some(y), Some(t)))
            })
            .collect(),
        AttackKind::Fooling => (0..k)
            .flat_map(|t| (0..a.seeds_per_class).map(move |s| (s as usize, None, Some(t))))
            .collect(),
        _ => picked.iter().map(|&i| (i, Some(labels[i]), None)).collect(),
    };
    let cases: Vec<Case> = jobs
        .par_iter()
        .map(|&(sample, true_label, target)| {
            let result = match (a.kind, true_label, target) {
                (AttackKind::Fgsm, Some(y), _) => fgsm(&model, &thresholds, data.image(sample), y, ac.epsilon, ac.norm),
                (AttackKind::Pgd, Some(y), _) => pgd(&model, &thresholds, data.image(sample), y, &ac),
                (AttackKind::Mim, Some(y), _) => momentum_iterative(&model, &thresholds, data.image(sample), y, &ac),
                (AttackKind::Whitebox, _, Some(t)) => whitebox_adversarial(&model, &thresholds, data.image(sample), t, &ac),
                (AttackKind::Fooling, _, Some(t)) => {
                    let seeded = AttackConfig {
                        seed: ac.seed.wrapping_add(sample as u64),
                        ..ac
                    };
                    whitebox_fooling(&model, &thresholds, t, &seeded)
                }
                _ => unreachable!("jobs are built per attack kind"),
            }?;
            Ok(Case {
                sample,
                true_label,
                target,
                result,
            })
        })
        .collect::<Result<_>>()?;

    let out = &cfg.out_dir;
    let name = a.kind.name();
    let mut csv = CsvOut::create(
        &out.join(format!("attack-{name}.csv")),
        &[
            "sample", "true_label", "target", "epsilon", "steps", "outcome", "verdict", "label", "reason",
            "final_objective", "eta_l2", "eta_linf",
        ],
    )?;
    let mut tally = [0usize; 3];
    let mut target_hits = 0;
    for c in &cases {
        let outcome = Outcome::of(&c.result.decision, c.true_label);
        tally[outcome as usize] += 1;
        if c.target.is_some() && c.result.decision.label() == c.target {
            target_hits += 1;
        }
        let d = &c.result.decision;
        csv.row([
            c.sample.to_string(),
            fmt_opt(c.true_label),
            fmt_opt(c.target),
            ac.epsilon.to_string(),
            (c.result.trace.len() - 1).to_string(),
            outcome.as_str().to_string(),
            verdict_str(d).to_string(),
            fmt_opt(d.label()),
            reason_str(d).to_string(),
            c.result.final_objective().to_string(),
            c.result.eta.norm_l2().to_string(),
            c.result.eta.norm_linf().to_string(),
        ])?;
    }
    csv.finish()?;

    let images: Vec<Tensor> = cases.iter().map(|c| c.result.x_adv.clone()).collect();
    let truth: Vec<Option<usize>> = cases.iter().map(|c| c.true_label).collect();
    let decisions: Vec<Decision> = cases.iter().map(|c| c.result.decision.clone()).collect();
    let prefix = out.join(format!("attack-{name}-rejected"));
    dump_rejected(&prefix, format!("attack {name}"), &model, &data, &images, &truth, &decisions)?;

    write_json(
        &out.join(format!("attack-{name}.json")),
        &serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "kind": name,
            "config": ac,
            "cases": cases.len(),
            "evaded": tally[Outcome::Evaded as usize],
            "rejected": tally[Outcome::Rejected as usize],
            "correct": tally[Outcome::Correct as usize],
            "target_hits": target_hits,
        }),
    )?;
    println!(
        "{name}: {} cases  evaded {}  rejected {}  correct {}",
        cases.len(),
        tally[Outcome::Evaded as usize],
        tally[Outcome::Rejected as usize],
        tally[Outcome::Correct as usize]
    );
    Ok(())
}

/// `reclassify.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReclassifySummary {
    pub schema_version: u32,
    pub source: String,
    pub total: usize,
    pub with_true_label: usize,
    pub accepted: usize,
    pub accepted_correct: usize,
    pub accept_always_correct: usize,
    /// Percent of labeled inputs accepted with the true label.
    pub accuracy: f64,
    /// Percent of labeled inputs whose accept-always label is right.
    pub accept_always_accuracy: f64,
    pub source_total: usize,
    pub pipeline_accuracy_before: f64,
    pub pipeline_accuracy_after: f64,
    pub pipeline_accuracy_after_accept_always: f64,
}

fn cmd_reclassify(a: ReclassifyArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_threshold_flags(&mut cfg, &a.model);
    if let Some(s) = a.steps {
        cfg.inversion_steps = s;
    }
    let model = load_model(&cfg, &a.model)?;
    let thresholds = load_thresholds(&cfg, &a.model)?;
    let (images, side) = read_dump(&a.input)?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inv = InversionConfig {
        steps: cfg.inversion_steps,
        ..InversionConfig::default()
    };
    let results: Vec<_> = images
        .par_iter()
        .map(|x| {
            let r = reclassify(&model, &thresholds, x, &inv)?;
            let always = reclassify_accept_always(&model, x, &inv)?;
            Ok((r, always))
        })
        .collect::<Result<_>>()?;

    let out = &cfg.out_dir;
    let mut csv = CsvOut::create(
        &out.join("reclassify.csv"),
        &[
            "index", "detected_by", "true_label", "winning_start", "winning_class", "recon_error", "mahalanobis_sq",
            "accepted", "label", "accept_always_label",
        ],
    )?;
    let (mut accepted, mut acc_correct, mut always_correct, mut labeled) = (0, 0, 0, 0);
    for (i, (r, always)) in results.iter().enumerate() {
        let d = &r.decision;
        let y = side.true_labels[i];
        if y.is_some() {
            labeled += 1;
        }
        if d.is_accepted() {
            accepted += 1;
            if d.label() == y {
                acc_correct += 1;
            }
        }
        if Some(*always) == y {
            always_correct += 1;
        }
        csv.row([
            i.to_string(),
            side.detected_by[i].as_str().to_string(),
            fmt_opt(y),
            r.winner.to_string(),
            d.diagnostics().label.to_string(),
            d.diagnostics().recon_error.to_string(),
            d.diagnostics().mahalanobis_sq.to_string(),
            d.is_accepted().to_string(),
            fmt_opt(d.label()),
            always.to_string(),
        ])?;
    }
    csv.finish()?;

    let pct = |n: usize, of: usize| if of == 0 { 0.0 } else { 100.0 * n as f64 / of as f64 };
    let st = side.source_total;
    let summary = ReclassifySummary {
        schema_version: SCHEMA_VERSION,
        source: side.source.clone(),
        total: images.len(),
        with_true_label: labeled,
        accepted,
        accepted_correct: acc_correct,
        accept_always_correct: always_correct,
        accuracy: pct(acc_correct, labeled),
        accept_always_accuracy: pct(always_correct, labeled),
        source_total: st,
        pipeline_accuracy_before: pct(side.source_accepted_correct, st),
        pipeline_accuracy_after: pct(side.source_accepted_correct + acc_correct, st),
        pipeline_accuracy_after_accept_always: pct(side.source_accepted_correct + always_correct, st),
    };
    write_json(&out.join("reclassify.json"), &summary)?;
    println!(
        "{} inputs: accepted {} ({} correct), accept-always correct {}",
        summary.total, accepted, acc_correct, always_correct
    );
    println!(
        "pipeline accuracy {:.2}% -> {:.2}% (accept-always {:.2}%)",
        summary.pipeline_accuracy_before, summary.pipeline_accuracy_after, summary.pipeline_accuracy_after_accept_always
    );
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if a.data.images.is_some() {
        return Err(Error::Config("gen-data only writes synthetic data".into()));
    }
    apply_data(&mut cfg, &a.data)?;
    if let DataSource::Idx { .. } = cfg.data {
        cfg.data = DataSource::Synthetic {
            spec: SyntheticSpec::default(),
            test_per_class: 200,
        };
    }
    let out = &cfg.out_dir;
    for (split, name) in [(Split::Train, "train"), (Split::Test, "test")] {
        let d = cfg.data.load(split)?;
        write_idx(
            &d,
            out.join(format!("{name}-images-idx3-ubyte")),
            out.join(format!("{name}-labels-idx1-ubyte")),
        )?;
        println!("wrote {} {name} samples", d.len());
    }
    Ok(())
}
