//! The eight-stage pipeline plus report emission. Every stage writes its
//! artifacts and a manifest of input/output digests; rerunning a stage with
//! identical inputs reproduces identical artifacts bitwise.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};

use opline_core::checkpoint::{self, Checkpoint, Lineage, Role};
use opline_core::grid::GridField;
use opline_core::merge::{
    self, compose_at, decompose, endpoint_average, task_arithmetic, CoordinateLine,
};
use opline_core::metrics::{self, rollout_l2, IndexSet};
use opline_core::operator::{finetune_endpoint, train_anchor, Operator, TrainLogRow};
use opline_core::select::{
    calibrate_gamma, select_coord, select_prefix, select_prefix_per_task, select_scale,
    wrong_sign, AlphaBank, GammaCase, PrefixObjective, SelectorMode,
};
use opline_core::sim::{
    build_family_with, read_trajectory, write_trajectory, FamilyKind, FamilySpec, RegimeRole,
    RegimeTask, TrajectoryDataset, TrajectorySample,
};
use opline_core::theory::{
    bound_audit, finite_difference_orders, verify_lemma_synthetic, BoundReport,
};

use crate::config::ExperimentConfig;
use crate::csvutil::{column, fnum, read_csv, write_csv};
use crate::manifest::{
    collect_digests, require_upstream, write_stage_manifest, StageManifest,
};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainAnchor,
    FinetuneEndpoints,
    MergeSweep,
    Calibrate,
    Select,
    Evaluate,
    TheoryAudit,
    Report,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainAnchor => "train-anchor",
            Stage::FinetuneEndpoints => "finetune-endpoints",
            Stage::MergeSweep => "merge-sweep",
            Stage::Calibrate => "calibrate",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
            Stage::TheoryAudit => "theory-audit",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::all().into_iter().find(|s| s.name() == name)
    }

    pub fn all() -> [Stage; 9] {
        [
            Stage::GenData,
            Stage::TrainAnchor,
            Stage::FinetuneEndpoints,
            Stage::MergeSweep,
            Stage::Calibrate,
            Stage::Select,
            Stage::Evaluate,
            Stage::TheoryAudit,
            Stage::Report,
        ]
    }

    fn upstream(&self) -> &'static [&'static str] {
        match self {
            Stage::GenData => &[],
            Stage::TrainAnchor => &["gen-data"],
            Stage::FinetuneEndpoints => &["gen-data", "train-anchor"],
            Stage::MergeSweep => &["gen-data", "train-anchor", "finetune-endpoints"],
            Stage::Calibrate => &["gen-data", "train-anchor", "finetune-endpoints"],
            Stage::Select => &[
                "gen-data",
                "train-anchor",
                "finetune-endpoints",
                "merge-sweep",
                "calibrate",
            ],
            Stage::Evaluate => &[
                "gen-data",
                "train-anchor",
                "finetune-endpoints",
                "merge-sweep",
                "calibrate",
                "select",
            ],
            Stage::TheoryAudit => &["train-anchor", "finetune-endpoints"],
            Stage::Report => &["merge-sweep", "select", "evaluate", "theory-audit"],
        }
    }
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub config_digest: String,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Self {
        let config_digest = cfg.digest();
        Self {
            cfg,
            out,
            config_digest,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

pub fn run_stage(ctx: &Ctx, stage: Stage) -> Result<()> {
    let started = Instant::now();
    let mut inputs = BTreeMap::new();
    for dep in stage.upstream() {
        let dep_inputs = require_upstream(&ctx.out, dep, &ctx.config_digest)?;
        inputs.extend(dep_inputs);
    }
    let outputs_rel = match stage {
        Stage::GenData => gen_data(ctx)?,
        Stage::TrainAnchor => train_anchor_stage(ctx)?,
        Stage::FinetuneEndpoints => finetune_stage(ctx)?,
        Stage::MergeSweep => merge_sweep_stage(ctx)?,
        Stage::Calibrate => calibrate_stage(ctx)?,
        Stage::Select => select_stage(ctx)?,
        Stage::Evaluate => evaluate_stage(ctx)?,
        Stage::TheoryAudit => theory_audit_stage(ctx)?,
        Stage::Report => report::report_stage(ctx)?,
    };
    let outputs = collect_digests(&ctx.out, &outputs_rel)?;
    write_stage_manifest(
        &ctx.out,
        &StageManifest {
            stage: stage.name().to_string(),
            config_digest: ctx.config_digest.clone(),
            inputs,
            outputs,
            wall_ms: started.elapsed().as_millis() as u64,
        },
    )?;
    Ok(())
}

pub fn run_pipeline(ctx: &Ctx) -> Result<()> {
    for stage in Stage::all() {
        run_stage(ctx, stage)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- data

#[derive(Debug, Serialize, Deserialize)]
struct DataManifest {
    spec: FamilySpec,
    train_samples: usize,
    eval_samples: usize,
    seed: u64,
    regimes: Vec<RegimeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegimeEntry {
    dir: String,
    task: RegimeTask,
    files: Vec<String>,
}

fn gen_data(ctx: &Ctx) -> Result<Vec<String>> {
    let spec = ctx.cfg.family_spec()?;
    let counts = ctx.cfg.sample_counts();
    let datasets = build_family_with(&spec, &counts, ctx.cfg.data.seed)?;

    let mut outputs = Vec::new();
    let mut regimes = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let dir = format!("data/regime_{i:02}");
        std::fs::create_dir_all(ctx.path(&dir))?;
        let mut files = Vec::new();
        for (j, sample) in ds.samples.iter().enumerate() {
            let rel = format!("{dir}/sample_{j:03}.traj");
            write_trajectory(&ctx.path(&rel), &sample.frames)?;
            files.push(rel.clone());
            outputs.push(rel);
        }
        let rel = format!("{dir}/manifest.json");
        std::fs::write(ctx.path(&rel), serde_json::to_vec_pretty(&ds.task)?)?;
        outputs.push(rel);
        regimes.push(RegimeEntry {
            dir,
            task: ds.task.clone(),
            files,
        });
    }
    let manifest = DataManifest {
        spec,
        train_samples: counts.train,
        eval_samples: counts.eval,
        seed: ctx.cfg.data.seed,
        regimes,
    };
    std::fs::write(
        ctx.path("data/manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    outputs.push("data/manifest.json".into());
    Ok(outputs)
}

fn load_data(ctx: &Ctx) -> Result<(FamilySpec, Vec<TrajectoryDataset>)> {
    let manifest: DataManifest =
        serde_json::from_slice(&std::fs::read(ctx.path("data/manifest.json"))?)?;
    let mut datasets = Vec::new();
    for entry in &manifest.regimes {
        let mut samples = Vec::new();
        for (seed, rel) in entry.task.seeds.iter().zip(entry.files.iter()) {
            samples.push(TrajectorySample {
                seed: *seed,
                frames: read_trajectory(&ctx.path(rel))?,
            });
        }
        datasets.push(TrajectoryDataset {
            task: entry.task.clone(),
            samples,
        });
    }
    Ok((manifest.spec, datasets))
}

/// Regimes the sweep, selection, and evaluation stages target: endpoints and
/// all evaluation regimes, never the support data.
fn target_datasets(datasets: &[TrajectoryDataset]) -> Vec<&TrajectoryDataset> {
    datasets
        .iter()
        .filter(|d| d.task.role != RegimeRole::Support)
        .collect()
}

// ---------------------------------------------------------------- training

fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.loss.to_string(),
                r.lr.to_string(),
                r.wall_ms.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["step", "loss", "lr", "wall_ms"], &rows)
}

fn train_anchor_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let (spec, datasets) = load_data(ctx)?;
    let support: Vec<&TrajectoryDataset> = datasets
        .iter()
        .filter(|d| d.task.role == RegimeRole::Support)
        .collect();
    let cfg = ctx.cfg.anchor_operator_config();
    let (weights, norm, log) = train_anchor(&cfg, &support)?;
    let ckpt = Checkpoint::new(
        weights,
        cfg.clone(),
        norm,
        Lineage {
            role: Role::Anchor,
            family: spec.kind.id().to_string(),
            lambda: None,
            parent: None,
            anchor: None,
            seed: cfg.seed,
            config_digest: ctx.config_digest.clone(),
            alpha: None,
            sources: None,
            note: "train-anchor".into(),
        },
    );
    std::fs::create_dir_all(ctx.path("train"))?;
    checkpoint::save(&ckpt, &ctx.path("train/anchor.ckpt"))?;
    write_train_log(&ctx.path("train/anchor_train_log.csv"), &log)?;
    Ok(vec![
        "train/anchor.ckpt".into(),
        "train/anchor_train_log.csv".into(),
    ])
}

fn finetune_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let (spec, datasets) = load_data(ctx)?;
    let anchor = checkpoint::load(&ctx.path("train/anchor.ckpt"))?;
    std::fs::create_dir_all(ctx.path("experts"))?;
    let mut outputs = Vec::new();
    for (role, offset, tag) in [
        (RegimeRole::EndpointLow, 1u64, "low"),
        (RegimeRole::EndpointHigh, 2u64, "high"),
    ] {
        let ds = datasets
            .iter()
            .find(|d| d.task.role == role)
            .ok_or_else(|| anyhow!("missing endpoint regime {role:?}"))?;
        let cfg = ctx.cfg.expert_operator_config(offset);
        let (weights, log) = finetune_endpoint(&anchor.weights, &anchor.normalizer, ds, &cfg)?;
        let ckpt = Checkpoint::new(
            weights,
            anchor.config.clone(),
            anchor.normalizer.clone(),
            Lineage {
                role: if tag == "low" {
                    Role::EndpointLow
                } else {
                    Role::EndpointHigh
                },
                family: spec.kind.id().to_string(),
                lambda: Some(ds.task.lambda),
                parent: Some(anchor.content_hash()),
                anchor: Some(anchor.content_hash()),
                seed: cfg.seed,
                config_digest: ctx.config_digest.clone(),
                alpha: None,
                sources: None,
                note: "finetune-endpoints".into(),
            },
        );
        let rel = format!("experts/expert_{tag}.ckpt");
        checkpoint::save(&ckpt, &ctx.path(&rel))?;
        outputs.push(rel);
        let log_rel = format!("experts/expert_{tag}_train_log.csv");
        write_train_log(&ctx.path(&log_rel), &log)?;
        outputs.push(log_rel);
    }
    Ok(outputs)
}

fn load_line(ctx: &Ctx) -> Result<(CoordinateLine, Checkpoint)> {
    let anchor = checkpoint::load(&ctx.path("train/anchor.ckpt"))?;
    let low = checkpoint::load(&ctx.path("experts/expert_low.ckpt"))?;
    let high = checkpoint::load(&ctx.path("experts/expert_high.ckpt"))?;
    let d = decompose(&anchor, &low, &high)?;
    let bank = ctx.cfg.alpha_bank()?;
    let (lo, hi) = bank.bounds();
    Ok((CoordinateLine::new(d, lo, hi)?, anchor))
}

// ---------------------------------------------------------------- sweep

const SWEEP_HEADER: [&str; 9] = [
    "family",
    "lambda",
    "s",
    "role",
    "validation",
    "alpha",
    "seed",
    "full_l2",
    "future_l2",
];

fn role_name(role: RegimeRole) -> &'static str {
    match role {
        RegimeRole::Support => "support",
        RegimeRole::EndpointLow => "endpoint-low",
        RegimeRole::EndpointHigh => "endpoint-high",
        RegimeRole::Interpolation => "interpolation",
        RegimeRole::OodLow => "ood-low",
        RegimeRole::OodHigh => "ood-high",
    }
}

fn merge_sweep_stage(ctx: &Ctx) -> Result<Vec<String>> {
    use rayon::prelude::*;
    let (spec, datasets) = load_data(ctx)?;
    let (line, _) = load_line(ctx)?;
    let bank = ctx.cfg.alpha_bank()?;
    let k = ctx.cfg.select.prefix_len;
    let t = spec.frames;
    let (_, fut) = metrics::split_protocol(t, k)
        .map_err(|e| anyhow!("prefix length vs horizon: {e}"))?;
    let full = IndexSet::full(t);

    let targets = target_datasets(&datasets);
    let jobs: Vec<(usize, f64)> = (0..targets.len())
        .flat_map(|ti| bank.values().iter().map(move |&a| (ti, a)))
        .collect();
    let results: Vec<Vec<Vec<String>>> = jobs
        .par_iter()
        .map(|&(ti, alpha)| -> Result<Vec<Vec<String>>> {
            let ds = targets[ti];
            let op = line.compose_operator(alpha)?;
            let mut rows = Vec::new();
            for sample in &ds.samples {
                let truth = &sample.frames[1..];
                let rollout = op.rollout(&sample.frames[0], truth.len())?;
                let full_l2 = rollout_l2(&rollout.frames, truth, &full)?;
                let future_l2 = rollout_l2(&rollout.frames, truth, &fut)?;
                rows.push(vec![
                    spec.kind.id().to_string(),
                    ds.task.lambda.to_string(),
                    ds.task.s.to_string(),
                    role_name(ds.task.role).to_string(),
                    ds.task.validation.to_string(),
                    alpha.to_string(),
                    sample.seed.to_string(),
                    full_l2.to_string(),
                    future_l2.to_string(),
                ]);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = results.into_iter().flatten().collect();
    write_csv(&ctx.path("sweep/alpha_sweep.csv"), &SWEEP_HEADER, &rows)?;
    Ok(vec!["sweep/alpha_sweep.csv".into()])
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub s: f64,
    pub role: String,
    pub validation: bool,
    pub alpha: f64,
    pub seed: u64,
    pub full_l2: f64,
    pub future_l2: f64,
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let (header, rows) = read_csv(path)?;
    let c = |n| column(&header, n);
    let (cl, cs, cr, cv, ca, cseed, cfull, cfut) = (
        c("lambda")?,
        c("s")?,
        c("role")?,
        c("validation")?,
        c("alpha")?,
        c("seed")?,
        c("full_l2")?,
        c("future_l2")?,
    );
    rows.iter()
        .map(|r| {
            Ok(SweepRow {
                lambda: fnum(&r[cl])?,
                s: fnum(&r[cs])?,
                role: r[cr].clone(),
                validation: r[cv] == "true",
                alpha: fnum(&r[ca])?,
                seed: r[cseed].parse()?,
                full_l2: fnum(&r[cfull])?,
                future_l2: fnum(&r[cfut])?,
            })
        })
        .collect()
}

/// Argmin over alphas with the smaller-|alpha|, then smaller-alpha tie rule.
fn argmin_alpha_pairs(cands: &[(f64, f64)]) -> f64 {
    let mut best = cands[0];
    for &(a, l) in &cands[1..] {
        let better = l < best.1
            || (l == best.1 && (a.abs() < best.0.abs() || (a.abs() == best.0.abs() && a < best.0)));
        if better {
            best = (a, l);
        }
    }
    best.0
}

/// Best fixed alpha: one bank coefficient shared across the family, selected
/// on the non-OOD, non-validation targets (endpoints and interpolation).
pub fn best_fixed_alpha(sweep: &[SweepRow], bank: &AlphaBank) -> Option<f64> {
    let mut cands = Vec::new();
    for &alpha in bank.values() {
        let vals: Vec<f64> = sweep
            .iter()
            .filter(|r| {
                r.alpha == alpha
                    && !r.validation
                    && (r.role.starts_with("endpoint") || r.role == "interpolation")
            })
            .map(|r| r.full_l2)
            .collect();
        if !vals.is_empty() {
            cands.push((alpha, vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    if cands.is_empty() {
        None
    } else {
        Some(argmin_alpha_pairs(&cands))
    }
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub mode: SelectorMode,
    pub gamma: f64,
    pub per_gamma: Vec<(f64, f64)>,
}

fn calibrate_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let calibration = if ctx.cfg.select.mode == SelectorMode::Scale {
        let (_, datasets) = load_data(ctx)?;
        let (line, _) = load_line(ctx)?;
        let validation: Vec<&TrajectoryDataset> = datasets
            .iter()
            .filter(|d| d.task.validation)
            .collect();
        if validation.is_empty() {
            bail!("scale mode needs validation-flagged evaluation regimes");
        }
        let mut cases = Vec::new();
        for ds in &validation {
            for sample in &ds.samples {
                cases.push(GammaCase {
                    s: ds.task.s,
                    u0: &sample.frames[0],
                    truth: &sample.frames[1..],
                });
            }
        }
        let result = calibrate_gamma(&line, &cases, &ctx.cfg.select.gamma_grid)?;
        CalibrationFile {
            mode: SelectorMode::Scale,
            gamma: result.gamma,
            per_gamma: result.per_gamma,
        }
    } else {
        CalibrationFile {
            mode: ctx.cfg.select.mode,
            gamma: 1.0,
            per_gamma: Vec::new(),
        }
    };
    std::fs::create_dir_all(ctx.path("calibrate"))?;
    std::fs::write(
        ctx.path("calibrate/calibration.json"),
        serde_json::to_vec_pretty(&calibration)?,
    )?;
    Ok(vec!["calibrate/calibration.json".into()])
}

pub fn load_gamma(ctx: &Ctx) -> Result<f64> {
    let file: CalibrationFile =
        serde_json::from_slice(&std::fs::read(ctx.path("calibrate/calibration.json"))?)?;
    Ok(file.gamma)
}

// ---------------------------------------------------------------- select

const SELECTION_HEADER: [&str; 11] = [
    "family",
    "lambda",
    "s",
    "role",
    "validation",
    "mode",
    "k",
    "objective",
    "scope",
    "alpha_hat",
    "candidates",
];

fn objective_name(o: PrefixObjective) -> &'static str {
    match o {
        PrefixObjective::FullPrefixL2 => "full-prefix-l2",
        PrefixObjective::MeanStep => "mean-step",
        PrefixObjective::FirstStep => "first-step",
        PrefixObjective::FinalStep => "final-step",
        PrefixObjective::RecencyWeighted => "recency-weighted",
    }
}

fn candidates_field(cands: &[(f64, f64)]) -> String {
    cands
        .iter()
        .map(|(a, l)| format!("{a}={l}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn select_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let (spec, datasets) = load_data(ctx)?;
    let (line, _) = load_line(ctx)?;
    let bank = ctx.cfg.alpha_bank()?;
    let bounds = bank.bounds();
    let gamma = load_gamma(ctx)?;
    let k = ctx.cfg.select.prefix_len;
    let objective = ctx.cfg.select.objective;
    if k >= spec.frames {
        bail!("prefix length K={k} must be below the horizon T={}", spec.frames);
    }
    let sweep = read_sweep(&ctx.path("sweep/alpha_sweep.csv"))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |task: &RegimeTask, mode: &str, scope: String, alpha: f64, cands: &[(f64, f64)]| {
        rows.push(vec![
            spec.kind.id().to_string(),
            task.lambda.to_string(),
            task.s.to_string(),
            role_name(task.role).to_string(),
            task.validation.to_string(),
            mode.to_string(),
            k.to_string(),
            objective_name(objective).to_string(),
            scope,
            alpha.to_string(),
            candidates_field(cands),
        ]);
    };

    for ds in target_datasets(&datasets) {
        let task = &ds.task;
        push(task, "coord", "task".into(), select_coord(task.s, bounds), &[]);
        push(
            task,
            "scale",
            "task".into(),
            select_scale(task.s, gamma, bounds),
            &[],
        );
        push(task, "wrong-sign", "task".into(), wrong_sign(task.s, bounds), &[]);

        // Oracle from the sweep's full-window losses: per sample and per task.
        let mut task_cands: Vec<(f64, f64)> = Vec::new();
        for &alpha in bank.values() {
            let vals: Vec<f64> = sweep
                .iter()
                .filter(|r| r.lambda == task.lambda && r.alpha == alpha)
                .map(|r| r.full_l2)
                .collect();
            if !vals.is_empty() {
                task_cands.push((alpha, vals.iter().sum::<f64>() / vals.len() as f64));
            }
        }
        if !task_cands.is_empty() {
            push(task, "oracle", "task".into(), argmin_alpha_pairs(&task_cands), &task_cands);
        }
        for sample in &ds.samples {
            let cands: Vec<(f64, f64)> = bank
                .values()
                .iter()
                .filter_map(|&alpha| {
                    sweep
                        .iter()
                        .find(|r| r.lambda == task.lambda && r.alpha == alpha && r.seed == sample.seed)
                        .map(|r| (alpha, r.full_l2))
                })
                .collect();
            if !cands.is_empty() {
                push(
                    task,
                    "oracle",
                    sample.seed.to_string(),
                    argmin_alpha_pairs(&cands),
                    &cands,
                );
            }
        }

        // Prefix selection, per sample (sample-specific coefficients) and the
        // per-task aggregation.
        for sample in &ds.samples {
            let prefix = &sample.frames[1..=k];
            let r = select_prefix(&line, &bank, &sample.frames[0], prefix, objective)?;
            push(task, "prefix", sample.seed.to_string(), r.alpha_hat, &r.per_candidate);
        }
        let cases: Vec<(&GridField, &[GridField])> = ds
            .samples
            .iter()
            .map(|sample| (&sample.frames[0], &sample.frames[1..=k]))
            .collect();
        let r = select_prefix_per_task(&line, &bank, &cases, objective)?;
        push(task, "prefix", "task".into(), r.alpha_hat, &r.per_candidate);
    }
    write_csv(&ctx.path("select/selection.csv"), &SELECTION_HEADER, &rows)?;
    Ok(vec!["select/selection.csv".into()])
}

#[derive(Debug, Clone)]
pub struct SelectionRow {
    pub lambda: f64,
    pub s: f64,
    pub role: String,
    pub validation: bool,
    pub mode: String,
    pub scope: String,
    pub alpha_hat: f64,
}

pub fn read_selection(path: &Path) -> Result<Vec<SelectionRow>> {
    let (header, rows) = read_csv(path)?;
    let c = |n| column(&header, n);
    let (cl, cs, cr, cv, cm, csc, ca) = (
        c("lambda")?,
        c("s")?,
        c("role")?,
        c("validation")?,
        c("mode")?,
        c("scope")?,
        c("alpha_hat")?,
    );
    rows.iter()
        .map(|r| {
            Ok(SelectionRow {
                lambda: fnum(&r[cl])?,
                s: fnum(&r[cs])?,
                role: r[cr].clone(),
                validation: r[cv] == "true",
                mode: r[cm].clone(),
                scope: r[csc].clone(),
                alpha_hat: fnum(&r[ca])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- evaluate

const PER_SAMPLE_HEADER: [&str; 10] = [
    "family",
    "lambda",
    "s",
    "role",
    "validation",
    "method",
    "seed",
    "alpha",
    "full_l2",
    "future_l2",
];

const METRICS_HEADER: [&str; 8] = [
    "family", "lambda", "s", "role", "validation", "method", "metric", "value",
];

/// How a method produces its prediction for one sample.
enum MethodKind<'a> {
    FixedOperator(Operator),
    PerRegimeAlpha(Box<dyn Fn(&RegimeTask) -> f64 + Sync + 'a>),
    PerSampleAlpha(BTreeMap<(String, u64), f64>),
    Ensemble(Operator, Operator),
}

struct MethodSpecd<'a> {
    name: &'static str,
    alpha_label: Option<f64>,
    kind: MethodKind<'a>,
}

struct SampleOutcome {
    seed: u64,
    alpha: Option<f64>,
    full_l2: f64,
    future_l2: f64,
    physics: Vec<(String, f64)>,
}

fn physics_for(
    kind: FamilyKind,
    pred: &[GridField],
    truth: &[GridField],
    full: &IndexSet,
) -> Result<Vec<(String, f64)>> {
    Ok(match kind {
        FamilyKind::Rdb => metrics::physics_rdb(pred, truth, full)?.entries,
        FamilyKind::Ns2d => metrics::physics_ns2d(pred, truth, full)?.entries,
        FamilyKind::DiffReact => Vec::new(),
    })
}

fn evaluate_stage(ctx: &Ctx) -> Result<Vec<String>> {
    use rayon::prelude::*;
    let (spec, datasets) = load_data(ctx)?;
    let (line, anchor) = load_line(ctx)?;
    let bank = ctx.cfg.alpha_bank()?;
    let bounds = bank.bounds();
    let gamma = load_gamma(ctx)?;
    let k = ctx.cfg.select.prefix_len;
    let t = spec.frames;
    let (_, fut) = metrics::split_protocol(t, k)?;
    let full = IndexSet::full(t);
    let sweep = read_sweep(&ctx.path("sweep/alpha_sweep.csv"))?;
    let selection = read_selection(&ctx.path("select/selection.csv"))?;

    let per_sample_alpha = |mode: &str| -> BTreeMap<(String, u64), f64> {
        selection
            .iter()
            .filter(|r| r.mode == mode && r.scope != "task")
            .filter_map(|r| {
                r.scope
                    .parse::<u64>()
                    .ok()
                    .map(|seed| ((r.lambda.to_string(), seed), r.alpha_hat))
            })
            .collect()
    };

    let d = &line.decomposition;
    let low_op = d.expert_low.operator()?;
    let high_op = d.expert_high.operator()?;

    let mut methods: Vec<MethodSpecd> = vec![
        MethodSpecd {
            name: "base",
            alpha_label: None,
            kind: MethodKind::FixedOperator(anchor.operator()?),
        },
        MethodSpecd {
            name: "expert-low",
            alpha_label: Some(-1.0),
            kind: MethodKind::FixedOperator(low_op.clone()),
        },
        MethodSpecd {
            name: "expert-high",
            alpha_label: Some(1.0),
            kind: MethodKind::FixedOperator(high_op.clone()),
        },
        MethodSpecd {
            name: "endpoint-average",
            alpha_label: Some(0.0),
            kind: MethodKind::FixedOperator(endpoint_average(&line)?.operator()?),
        },
        MethodSpecd {
            name: "coord-select",
            alpha_label: None,
            kind: MethodKind::PerRegimeAlpha(Box::new(move |task| select_coord(task.s, bounds))),
        },
        MethodSpecd {
            name: "wrong-sign",
            alpha_label: None,
            kind: MethodKind::PerRegimeAlpha(Box::new(move |task| wrong_sign(task.s, bounds))),
        },
        MethodSpecd {
            name: "prefix-select",
            alpha_label: None,
            kind: MethodKind::PerSampleAlpha(per_sample_alpha("prefix")),
        },
        MethodSpecd {
            name: "oracle",
            alpha_label: None,
            kind: MethodKind::PerSampleAlpha(per_sample_alpha("oracle")),
        },
        MethodSpecd {
            name: "task-arithmetic",
            alpha_label: None,
            kind: MethodKind::FixedOperator(
                task_arithmetic(&d.anchor, &[(&d.delta_low, 1.0), (&d.delta_high, 1.0)])?
                    .operator()?,
            ),
        },
        MethodSpecd {
            name: "ties",
            alpha_label: None,
            kind: MethodKind::FixedOperator(
                merge::ties_merge(
                    &d.anchor,
                    &[&d.delta_low, &d.delta_high],
                    ctx.cfg.baselines.ties_trim,
                )?
                .operator()?,
            ),
        },
        MethodSpecd {
            name: "dare",
            alpha_label: None,
            kind: MethodKind::FixedOperator(
                merge::dare_merge(
                    &d.anchor,
                    &[&d.delta_low, &d.delta_high],
                    ctx.cfg.baselines.dare_drop,
                    ctx.cfg.baselines.dare_seed,
                )?
                .operator()?,
            ),
        },
        MethodSpecd {
            name: "output-ensemble",
            alpha_label: None,
            kind: MethodKind::Ensemble(low_op, high_op),
        },
    ];
    if let Some(alpha) = best_fixed_alpha(&sweep, &bank) {
        methods.push(MethodSpecd {
            name: "best-fixed",
            alpha_label: Some(alpha),
            kind: MethodKind::FixedOperator(compose_at(&line, alpha)?.operator()?),
        });
    }
    if ctx.cfg.select.mode == SelectorMode::Scale {
        methods.push(MethodSpecd {
            name: "scale-select",
            alpha_label: None,
            kind: MethodKind::PerRegimeAlpha(Box::new(move |task| {
                select_scale(task.s, gamma, bounds)
            })),
        });
    }

    let targets = target_datasets(&datasets);
    let mut per_sample_rows: Vec<Vec<String>> = Vec::new();
    let mut metric_rows: Vec<Vec<String>> = Vec::new();

    for m in &methods {
        let outcomes: Vec<(usize, Vec<SampleOutcome>)> = targets
            .par_iter()
            .enumerate()
            .map(|(ti, ds)| -> Result<(usize, Vec<SampleOutcome>)> {
                let task = &ds.task;
                let mut outs = Vec::new();
                for sample in &ds.samples {
                    let truth = &sample.frames[1..];
                    let (frames, alpha) = match &m.kind {
                        MethodKind::FixedOperator(op) => {
                            (op.rollout(&sample.frames[0], truth.len())?.frames, m.alpha_label)
                        }
                        MethodKind::PerRegimeAlpha(f) => {
                            let a = f(task);
                            let op = line.compose_operator(a)?;
                            (op.rollout(&sample.frames[0], truth.len())?.frames, Some(a))
                        }
                        MethodKind::PerSampleAlpha(map) => {
                            let a = *map
                                .get(&(task.lambda.to_string(), sample.seed))
                                .ok_or_else(|| {
                                    anyhow!(
                                        "missing selection for lambda={} seed={}",
                                        task.lambda,
                                        sample.seed
                                    )
                                })?;
                            let op = line.compose_operator(a)?;
                            (op.rollout(&sample.frames[0], truth.len())?.frames, Some(a))
                        }
                        MethodKind::Ensemble(a, b) => (
                            merge::output_ensemble(
                                &[a, b],
                                &[0.5, 0.5],
                                &sample.frames[0],
                                truth.len(),
                            )?,
                            None,
                        ),
                    };
                    let full_l2 = rollout_l2(&frames, truth, &full)?;
                    let future_l2 = rollout_l2(&frames, truth, &fut)?;
                    let physics = physics_for(spec.kind, &frames, truth, &full)?;
                    outs.push(SampleOutcome {
                        seed: sample.seed,
                        alpha,
                        full_l2,
                        future_l2,
                        physics,
                    });
                }
                Ok((ti, outs))
            })
            .collect::<Result<_>>()?;

        for (ti, outs) in outcomes {
            let task = &targets[ti].task;
            let mut mean_full = 0.0;
            let mut mean_future = 0.0;
            let mut physics_sums: BTreeMap<String, f64> = BTreeMap::new();
            for o in &outs {
                per_sample_rows.push(vec![
                    spec.kind.id().to_string(),
                    task.lambda.to_string(),
                    task.s.to_string(),
                    role_name(task.role).to_string(),
                    task.validation.to_string(),
                    m.name.to_string(),
                    o.seed.to_string(),
                    o.alpha.map(|a| a.to_string()).unwrap_or_default(),
                    o.full_l2.to_string(),
                    o.future_l2.to_string(),
                ]);
                mean_full += o.full_l2 / outs.len() as f64;
                mean_future += o.future_l2 / outs.len() as f64;
                for (name, v) in &o.physics {
                    *physics_sums.entry(name.clone()).or_insert(0.0) += v / outs.len() as f64;
                }
            }
            let mut push_metric = |metric: &str, value: f64| {
                metric_rows.push(vec![
                    spec.kind.id().to_string(),
                    task.lambda.to_string(),
                    task.s.to_string(),
                    role_name(task.role).to_string(),
                    task.validation.to_string(),
                    m.name.to_string(),
                    metric.to_string(),
                    value.to_string(),
                ]);
            };
            push_metric("full_l2", mean_full);
            push_metric("future_l2", mean_future);
            for (name, v) in physics_sums {
                push_metric(&name, v);
            }
        }
    }

    write_csv(
        &ctx.path("evaluate/per_sample.csv"),
        &PER_SAMPLE_HEADER,
        &per_sample_rows,
    )?;
    write_csv(&ctx.path("evaluate/metrics.csv"), &METRICS_HEADER, &metric_rows)?;

    let primary = if ctx.cfg.select.mode == SelectorMode::Prefix {
        "future_l2"
    } else {
        "full_l2"
    };
    write_win_loss(ctx, &metric_rows, primary)?;
    write_bootstrap(ctx, &per_sample_rows, primary)?;
    evaluate_invariants(ctx, &sweep, &selection, &metric_rows)?;

    Ok(vec![
        "evaluate/per_sample.csv".into(),
        "evaluate/metrics.csv".into(),
        "evaluate/win_loss.csv".into(),
        "evaluate/bootstrap.csv".into(),
    ])
}

fn metric_value(rows: &[Vec<String>], method: &str, lambda: &str, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r[5] == method && r[1] == lambda && r[6] == metric)
        .and_then(|r| r[7].parse().ok())
}

fn write_win_loss(ctx: &Ctx, metric_rows: &[Vec<String>], primary: &str) -> Result<()> {
    // Tasks: non-validation target regimes, identified by lambda.
    let mut lambdas: Vec<String> = metric_rows
        .iter()
        .filter(|r| r[4] == "false" && r[6] == primary && r[5] == "base")
        .map(|r| r[1].clone())
        .collect();
    lambdas.dedup();
    let methods: Vec<String> = {
        let mut m: Vec<String> = metric_rows.iter().map(|r| r[5].clone()).collect();
        m.sort();
        m.dedup();
        m.retain(|x| x != "base");
        m
    };
    let mut rows = Vec::new();
    for method in &methods {
        let base: Vec<f64> = lambdas
            .iter()
            .filter_map(|l| metric_value(metric_rows, "base", l, primary))
            .collect();
        let vals: Vec<f64> = lambdas
            .iter()
            .filter_map(|l| metric_value(metric_rows, method, l, primary))
            .collect();
        if base.len() != vals.len() || base.is_empty() {
            continue;
        }
        let (w, l, r) = metrics::win_loss_regret(&base, &vals)?;
        rows.push(vec![
            method.clone(),
            primary.to_string(),
            w.to_string(),
            l.to_string(),
            r.to_string(),
        ]);
    }
    write_csv(
        &ctx.path("evaluate/win_loss.csv"),
        &["method", "metric", "wins", "losses", "neg_regret"],
        &rows,
    )
}

fn write_bootstrap(ctx: &Ctx, per_sample_rows: &[Vec<String>], primary: &str) -> Result<()> {
    let col = if primary == "future_l2" { 9 } else { 8 };
    let selected = match ctx.cfg.select.mode {
        SelectorMode::Coord => "coord-select",
        SelectorMode::Scale => "scale-select",
        SelectorMode::Prefix => "prefix-select",
        SelectorMode::Oracle => "oracle",
        SelectorMode::WrongSign => "wrong-sign",
    };
    let mut rows = Vec::new();
    for method in [selected, "endpoint-average"] {
        // Paired per-sample improvements base - method on OOD samples.
        let mut improvements = Vec::new();
        for r in per_sample_rows {
            if r[5] != method || !r[3].starts_with("ood") {
                continue;
            }
            let base = per_sample_rows.iter().find(|b| {
                b[5] == "base" && b[1] == r[1] && b[6] == r[6]
            });
            if let Some(b) = base {
                improvements.push(fnum(&b[col])? - fnum(&r[col])?);
            }
        }
        if improvements.len() >= 2 {
            let (mean, lo, hi) =
                metrics::bootstrap_ci(&improvements, 2000, 0.95, ctx.cfg.data.seed)?;
            rows.push(vec![
                method.to_string(),
                primary.to_string(),
                mean.to_string(),
                lo.to_string(),
                hi.to_string(),
                "2000".into(),
                "0.95".into(),
            ]);
        }
    }
    write_csv(
        &ctx.path("evaluate/bootstrap.csv"),
        &[
            "method",
            "metric",
            "mean_improvement",
            "ci_lo",
            "ci_hi",
            "resamples",
            "level",
        ],
        &rows,
    )
}

/// Invariant suite gating the evaluate stage's exit status.
fn evaluate_invariants(
    ctx: &Ctx,
    sweep: &[SweepRow],
    selection: &[SelectionRow],
    metric_rows: &[Vec<String>],
) -> Result<()> {
    // Oracle argmin dominance: the per-task oracle loss never exceeds any
    // fixed bank coefficient's mean loss on the same regime.
    let bank = ctx.cfg.alpha_bank()?;
    let mut lambdas: Vec<String> = sweep.iter().map(|r| r.lambda.to_string()).collect();
    lambdas.sort();
    lambdas.dedup();
    for lambda in &lambdas {
        let oracle = selection
            .iter()
            .find(|r| r.mode == "oracle" && r.scope == "task" && r.lambda.to_string() == *lambda);
        let Some(oracle) = oracle else { continue };
        let mean_at = |alpha: f64| -> Option<f64> {
            let vals: Vec<f64> = sweep
                .iter()
                .filter(|r| r.lambda.to_string() == *lambda && r.alpha == alpha)
                .map(|r| r.full_l2)
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let Some(oracle_loss) = mean_at(oracle.alpha_hat) else { continue };
        for &alpha in bank.values() {
            if let Some(l) = mean_at(alpha) {
                if oracle_loss > l {
                    bail!(
                        "invariant violation: oracle loss {oracle_loss} exceeds fixed alpha {alpha} loss {l} at lambda {lambda}"
                    );
                }
            }
        }
    }

    // OOD worst >= OOD mean for every method.
    let mut methods: Vec<String> = metric_rows.iter().map(|r| r[5].clone()).collect();
    methods.sort();
    methods.dedup();
    for method in &methods {
        let ood: Vec<f64> = metric_rows
            .iter()
            .filter(|r| r[5] == *method && r[3].starts_with("ood") && r[6] == "full_l2")
            .filter_map(|r| r[7].parse().ok())
            .collect();
        if !ood.is_empty() {
            let mean = ood.iter().sum::<f64>() / ood.len() as f64;
            let worst = ood.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if worst < mean - 1e-12 {
                bail!("invariant violation: OOD worst {worst} below OOD mean {mean} for {method}");
            }
        }
    }

    // Index exclusion: perturbing calibration-frame predictions cannot move
    // the future metric.
    let t = ctx.cfg.family.frames;
    let k = ctx.cfg.select.prefix_len;
    let (_, fut) = metrics::split_protocol(t, k)?;
    let truth: Vec<GridField> = (0..t)
        .map(|i| {
            GridField::from_fn(4, 4, 1, 1.0, 1.0, |a, b, _| 1.0 + ((a + b + i) % 3) as f64)
                .map_err(|e| anyhow!("{e}"))
        })
        .collect::<Result<_>>()?;
    let pred: Vec<GridField> = truth.iter().map(|f| f.map(|v| v + 0.05)).collect();
    let perturbed: Vec<GridField> = pred
        .iter()
        .enumerate()
        .map(|(i, f)| if i + 1 <= k { f.map(|v| v + 7.0) } else { f.clone() })
        .collect();
    let a = rollout_l2(&pred, &truth, &fut)?;
    let b = rollout_l2(&perturbed, &truth, &fut)?;
    if a.to_bits() != b.to_bits() {
        bail!("invariant violation: future metric moved under calibration-frame perturbation");
    }
    Ok(())
}

// ---------------------------------------------------------------- theory

fn theory_audit_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let spec = ctx.cfg.family_spec()?;
    let (line, _) = load_line(ctx)?;
    let bank = ctx.cfg.alpha_bank()?;

    // Synthetic invariant suite: interpolation inequality and
    // finite-difference orders.
    let grid: Vec<f64> = (0..25).map(|i| -1.5 + i as f64 * 0.125).collect();
    let quad = verify_lemma_synthetic(|t| vec![t * t], |_| 2.0, &grid)?;
    let sine = verify_lemma_synthetic(
        |t| vec![t.sin()],
        |alpha| alpha.abs().max(1.0).sin(),
        &grid,
    )?;
    let mut lemma_rows = Vec::new();
    for (curve, rows) in [("quadratic", &quad), ("sine", &sine)] {
        for r in rows {
            lemma_rows.push(vec![
                curve.to_string(),
                r.alpha.to_string(),
                r.error.to_string(),
                r.bound.to_string(),
                r.slack.to_string(),
            ]);
        }
    }
    write_csv(
        &ctx.path("theory/lemma_check.csv"),
        &["curve", "alpha", "error", "bound", "slack"],
        &lemma_rows,
    )?;
    for r in &quad {
        if r.slack.abs() > 1e-12 {
            bail!("lemma saturation violated on the quadratic curve at alpha {}", r.alpha);
        }
    }
    for r in &sine {
        if r.slack < -1e-14 {
            bail!("lemma inequality violated on the sine curve at alpha {}", r.alpha);
        }
    }

    let phase = std::f64::consts::FRAC_PI_4;
    let orders = finite_difference_orders(
        |q| vec![(q + phase).sin()],
        &[phase.sin()],
        &[phase.cos()],
        &[0.4, 0.2, 0.1, 0.05],
    )?;
    let order_rows: Vec<Vec<String>> = orders
        .rows
        .iter()
        .map(|r| {
            vec![
                r.h.to_string(),
                r.shared_err.to_string(),
                r.signed_err.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("theory/orders.csv"),
        &["h", "shared_err", "signed_err"],
        &order_rows,
    )?;
    let s2 = orders.shared_slope.ok_or_else(|| anyhow!("degenerate shared fit"))?;
    let s3 = orders.signed_slope.ok_or_else(|| anyhow!("degenerate signed fit"))?;
    if !(1.8..=2.2).contains(&s2) || !(2.8..=3.2).contains(&s3) {
        bail!("finite-difference orders out of range: shared {s2}, signed {s3}");
    }

    // The trained-line audit.
    let report = bound_audit(
        &line,
        &spec,
        bank.values(),
        ctx.cfg.theory.probe_count,
        ctx.cfg.theory.probe_seed,
    )?;
    write_bound_report(ctx, &report)?;
    let (lo, hi) = bank.bounds();
    for row in &report.rows {
        let interior = row.alpha > lo && row.alpha < hi;
        if interior && row.slack < -row.tolerance {
            bail!(
                "bound audit failed at alpha {}: slack {} below -tolerance {}",
                row.alpha,
                row.slack,
                row.tolerance
            );
        }
    }

    Ok(vec![
        "theory/lemma_check.csv".into(),
        "theory/orders.csv".into(),
        "theory/bound_report.csv".into(),
        "theory/bound_summary.csv".into(),
    ])
}

fn write_bound_report(ctx: &Ctx, report: &BoundReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.alpha.to_string(),
                r.measured.to_string(),
                r.bound.to_string(),
                r.slack.to_string(),
                r.k_e.to_string(),
                r.k_f.to_string(),
                r.k_s.to_string(),
                r.tolerance.to_string(),
                r.mismatch_measured.to_string(),
                r.mismatch_bound.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("theory/bound_report.csv"),
        &[
            "alpha",
            "measured",
            "bound",
            "slack",
            "k_e",
            "k_f",
            "k_s",
            "tolerance",
            "mismatch_measured",
            "mismatch_bound",
        ],
        &rows,
    )?;
    write_csv(
        &ctx.path("theory/bound_summary.csv"),
        &["eps_minus", "eps_plus", "lipschitz_s", "delta"],
        &[vec![
            report.eps_minus.to_string(),
            report.eps_plus.to_string(),
            report.lipschitz_s.to_string(),
            report.delta.to_string(),
        ]],
    )
}
