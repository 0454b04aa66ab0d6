//! Subcommand implementations. Each returns after writing its manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bayesic::checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
use bayesic::dataset::{
    load_agent_labels, load_staypoints, save_agent_labels, save_staypoints, Label, MobilityDataset, SplitTag,
};
use bayesic::encoding::monday_anchor_utc;
use bayesic::evaluation::{
    align, evaluate, fit_visit_rates, fuse_scores, save_curve, visit_rate_scores, Level, MetricsReport,
};
use bayesic::scoring::{agent_scores, load_agent_scores, load_scores, save_agent_scores, save_scores, score_dataset};
use bayesic::synthgen::{generate, inject_anomalies, PersonaTemplate};
use bayesic::training::{train, PipelineConfig, TrainedPipeline};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Recorder;

/// Headline numbers of one evaluation level, without the curves.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub level: Level,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub average_precision: f64,
    pub max_f1: f64,
    pub threshold_at_max_f1: f64,
    pub precision_at_max_f1: f64,
    pub recall_at_max_f1: f64,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(m: &MetricsReport) -> Self {
        Self {
            level: m.level,
            n_pos: m.n_pos,
            n_neg: m.n_neg,
            auroc: m.auroc,
            aupr: m.aupr,
            average_precision: m.average_precision,
            max_f1: m.max_f1,
            threshold_at_max_f1: m.threshold_at_max_f1,
            precision_at_max_f1: m.precision_at_max_f1,
            recall_at_max_f1: m.recall_at_max_f1,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load(path: &Path, config: &RunConfig) -> Result<MobilityDataset> {
    load_staypoints(path, &config.schema).with_context(|| format!("loading staypoints from {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Agent labels from `labels` if given, else derived from staypoint labels.
fn agent_labels(test: &MobilityDataset, labels: Option<&Path>) -> Result<BTreeMap<u64, bool>> {
    let raw = match labels {
        Some(p) => load_agent_labels(p).with_context(|| format!("loading agent labels from {}", p.display()))?,
        None => test.derived_agent_labels(),
    };
    Ok(raw.into_iter().map(|(a, l)| (a, l.is_anomalous())).collect())
}

fn labels_for(scores: &BTreeMap<u64, f64>, labels: &BTreeMap<u64, bool>) -> Result<BTreeMap<u64, bool>> {
    scores
        .keys()
        .map(|a| {
            labels
                .get(a)
                .map(|l| (*a, *l))
                .ok_or_else(|| anyhow!("agent {a} has a score but no label"))
        })
        .collect()
}

// ------------------------------------------------------------------ generate

pub fn generate_cmd(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("generate", config);
    let data = generate(&PersonaTemplate::defaults(), &config.generator, config.seed)?;
    let injected = inject_anomalies(&data.test, &config.anomalies, config.seed)?;
    for w in &injected.warnings {
        eprintln!("warning: {w}");
    }
    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    let labels_path = out_dir.join("agent_labels.csv");
    let personas_path = out_dir.join("personas.csv");
    save_staypoints(&train_path, &data.train)?;
    save_staypoints(&test_path, &injected.dataset)?;
    save_agent_labels(&labels_path, &injected.agent_labels)?;
    let personas: String = std::iter::once("agent_id,persona\n".to_string())
        .chain(data.personas.iter().map(|(a, p)| format!("{a},{}\n", p.as_str())))
        .collect();
    std::fs::write(&personas_path, personas)?;
    rec.output("train", &train_path)?;
    rec.output("test", &test_path)?;
    rec.output("agent_labels", &labels_path)?;
    rec.output("personas", &personas_path)?;
    eprintln!(
        "generated {} train / {} test staypoints, {} anomalous agents",
        data.train.staypoint_count(),
        injected.dataset.staypoint_count(),
        injected.selected.len()
    );
    rec.finish(out_dir)
}

// ------------------------------------------------------------------ train

pub fn train_cmd(config: &RunConfig, out_dir: &Path, train_path: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("train", config);
    rec.input("train", train_path)?;
    let data = load(train_path, config)?.with_split_tag(SplitTag::Train);
    let outcome = train(&data, &config.pipeline())?;
    for e in &outcome.log.epochs {
        eprintln!("epoch {:3} l_ae {:.5} l_f {:.3} l_total {:.3}", e.epoch, e.l_ae, e.l_f, e.l_total);
    }
    let ckpt = out_dir.join("model.ckpt");
    let log = out_dir.join("training_log.jsonl");
    save_checkpoint(&ckpt, &outcome.pipeline)?;
    std::fs::write(&log, outcome.log.to_json_lines())?;
    rec.output("checkpoint", &ckpt)?;
    rec.output("checkpoint_sidecar", &sidecar_path(&ckpt))?;
    rec.output("training_log", &log)?;
    rec.finish(out_dir)
}

// ------------------------------------------------------------------ score

fn score_into(pipeline: &TrainedPipeline, test: &MobilityDataset, out_dir: &Path, rec: &mut Recorder) -> Result<()> {
    let test = test.with_vocabulary(&pipeline.stats.vocabulary)?;
    let records = score_dataset(pipeline, &test)?;
    let scores = out_dir.join("scores.csv");
    let agents = out_dir.join("agent_scores.csv");
    save_scores(&scores, &records)?;
    save_agent_scores(&agents, &agent_scores(&records))?;
    rec.output("scores", &scores)?;
    rec.output("agent_scores", &agents)?;
    Ok(())
}

pub fn score_cmd(config: &RunConfig, out_dir: &Path, checkpoint: &Path, test_path: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("score", config);
    rec.input("checkpoint", checkpoint)?;
    rec.input("test", test_path)?;
    let pipeline =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let test = load(test_path, config)?.with_split_tag(SplitTag::Test);
    score_into(&pipeline, &test, out_dir, &mut rec)?;
    rec.finish(out_dir)
}

// ------------------------------------------------------------------ evaluate

#[derive(Debug, Serialize)]
struct EvaluationOutput {
    /// `None` when no staypoint is labeled anomalous.
    staypoint: Option<MetricsSummary>,
    agent: MetricsSummary,
}

fn write_curves(report: &MetricsReport, out_dir: &Path, rec: &mut Recorder) -> Result<()> {
    let tag = match report.level {
        Level::Agent => "agent",
        Level::Staypoint => "staypoint",
    };
    let roc = out_dir.join(format!("roc_{tag}.csv"));
    let pr = out_dir.join(format!("pr_{tag}.csv"));
    save_curve(&roc, ["fpr", "tpr"], &report.roc_points)?;
    save_curve(&pr, ["recall", "precision"], &report.pr_points)?;
    rec.output(&format!("roc_{tag}"), &roc)?;
    rec.output(&format!("pr_{tag}"), &pr)?;
    Ok(())
}

pub fn evaluate_cmd(
    config: &RunConfig,
    out_dir: &Path,
    scores_path: &Path,
    test_path: &Path,
    labels_path: Option<&Path>,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("evaluate", config);
    rec.input("scores", scores_path)?;
    rec.input("test", test_path)?;
    if let Some(p) = labels_path {
        rec.input("agent_labels", p)?;
    }
    let records = load_scores(scores_path).with_context(|| format!("loading scores {}", scores_path.display()))?;
    let test = load(test_path, config)?;
    let truth: BTreeMap<(u64, usize), bool> = test
        .agents()
        .iter()
        .flat_map(|(a, seq)| {
            seq.staypoints
                .iter()
                .enumerate()
                .map(move |(i, sp)| ((*a, i), sp.label == Some(Label::Anomalous)))
        })
        .collect();
    let mut s = Vec::with_capacity(records.len());
    let mut l = Vec::with_capacity(records.len());
    for r in &records {
        let lab = truth
            .get(&(r.agent_id, r.staypoint_idx))
            .ok_or_else(|| anyhow!("score row for agent {} index {} has no test staypoint", r.agent_id, r.staypoint_idx))?;
        s.push(r.score);
        l.push(*lab);
    }
    let staypoint = if l.iter().any(|x| *x) && l.iter().any(|x| !*x) {
        let report = evaluate(&s, &l, Level::Staypoint)?;
        write_curves(&report, out_dir, &mut rec)?;
        Some(report)
    } else {
        eprintln!("note: staypoint labels are single-class; staypoint metrics skipped");
        None
    };
    let agents = agent_scores(&records);
    let labels = labels_for(&agents, &agent_labels(&test, labels_path)?)?;
    let (a, b) = align(&agents, &labels)?;
    let agent = evaluate(&a, &b, Level::Agent)?;
    write_curves(&agent, out_dir, &mut rec)?;
    let out = EvaluationOutput { staypoint: staypoint.as_ref().map(Into::into), agent: (&agent).into() };
    let metrics = out_dir.join("metrics.json");
    write_json(&metrics, &out)?;
    rec.output("metrics", &metrics)?;
    if let Some(sp) = &out.staypoint {
        eprintln!("staypoint auroc {:.4} aupr {:.4}", sp.auroc, sp.aupr);
    }
    eprintln!("agent     auroc {:.4} aupr {:.4} max_f1 {:.4}", out.agent.auroc, out.agent.aupr, out.agent.max_f1);
    rec.finish(out_dir)
}

// ------------------------------------------------------------------ fuse

#[derive(Debug, Serialize)]
struct FusionOutput {
    unfused: MetricsSummary,
    fused: MetricsSummary,
    degenerate_range: bool,
}

pub fn fuse_cmd(
    config: &RunConfig,
    out_dir: &Path,
    agent_scores_path: &Path,
    train_path: &Path,
    test_path: &Path,
    labels_path: Option<&Path>,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("fuse", config);
    rec.input("agent_scores", agent_scores_path)?;
    rec.input("train", train_path)?;
    rec.input("test", test_path)?;
    if let Some(p) = labels_path {
        rec.input("agent_labels", p)?;
    }
    let model = load_agent_scores(agent_scores_path)?;
    let train_set = load(train_path, config)?;
    let test = load(test_path, config)?;
    let start = train_set.time_range().ok_or_else(|| anyhow!("empty training set"))?.0;
    let profile = fit_visit_rates(&train_set, &test, monday_anchor_utc(start))?;
    let visit: BTreeMap<u64, f64> = visit_rate_scores(&profile)
        .into_iter()
        .filter(|(a, _)| model.contains_key(a))
        .collect();
    let fusion = fuse_scores(&model, &visit)?;
    let labels = labels_for(&model, &agent_labels(&test, labels_path)?)?;
    let (s, l) = align(&model, &labels)?;
    let unfused = evaluate(&s, &l, Level::Agent)?;
    let (s, l) = align(&fusion.scores, &labels)?;
    let fused = evaluate(&s, &l, Level::Agent)?;

    let visit_path = out_dir.join("visit_rate_scores.csv");
    let fused_path = out_dir.join("fused_agent_scores.csv");
    let metrics_path = out_dir.join("fused_metrics.json");
    save_agent_scores(&visit_path, &visit)?;
    save_agent_scores(&fused_path, &fusion.scores)?;
    write_json(
        &metrics_path,
        &FusionOutput { unfused: (&unfused).into(), fused: (&fused).into(), degenerate_range: fusion.degenerate_range },
    )?;
    rec.output("visit_rate_scores", &visit_path)?;
    rec.output("fused_agent_scores", &fused_path)?;
    rec.output("fused_metrics", &metrics_path)?;
    eprintln!("agent aupr unfused {:.4} fused {:.4}", unfused.aupr, fused.aupr);
    rec.finish(out_dir)
}

// ------------------------------------------------------------------ ablate

#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub agent_auroc: f64,
    pub agent_aupr: f64,
    pub agent_max_f1: f64,
    pub staypoint_auroc: Option<f64>,
    pub staypoint_aupr: Option<f64>,
}

pub const ABLATION_VARIANTS: [&str; 5] = ["full", "no_arrival", "no_poi", "no_duration", "no_embedding"];

fn variant_config(base: &PipelineConfig, variant: &str) -> Result<PipelineConfig> {
    let mut c = base.clone();
    let t = &mut c.training;
    match variant {
        "full" => {}
        "no_arrival" => t.use_arrival = false,
        "no_poi" => t.use_poi = false,
        "no_duration" => t.use_duration = false,
        "no_embedding" => t.use_embedding = false,
        other => bail!("unknown ablation variant `{other}`"),
    }
    Ok(c)
}

pub fn ablate_cmd(
    config: &RunConfig,
    out_dir: &Path,
    train_path: &Path,
    test_path: &Path,
    labels_path: Option<&Path>,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let mut rec = Recorder::new("ablate", config);
    rec.input("train", train_path)?;
    rec.input("test", test_path)?;
    if let Some(p) = labels_path {
        rec.input("agent_labels", p)?;
    }
    let train_set = load(train_path, config)?.with_split_tag(SplitTag::Train);
    let test = load(test_path, config)?.with_split_tag(SplitTag::Test);
    let truth = agent_labels(&test, labels_path)?;
    let base = config.pipeline();
    let mut rows = Vec::new();
    for variant in ABLATION_VARIANTS {
        eprintln!("training {variant}");
        let outcome = train(&train_set, &variant_config(&base, variant)?)?;
        let remapped = test.with_vocabulary(&outcome.pipeline.stats.vocabulary)?;
        let records = score_dataset(&outcome.pipeline, &remapped)?;
        let s: Vec<f64> = records.iter().map(|r| r.score).collect();
        let l: Vec<bool> = records.iter().map(|r| r.label == Some(Label::Anomalous)).collect();
        let sp = evaluate(&s, &l, Level::Staypoint).ok();
        let agents = agent_scores(&records);
        let (a, b) = align(&agents, &labels_for(&agents, &truth)?)?;
        let ag = evaluate(&a, &b, Level::Agent)?;
        rows.push(AblationRow {
            variant: variant.to_string(),
            agent_auroc: ag.auroc,
            agent_aupr: ag.aupr,
            agent_max_f1: ag.max_f1,
            staypoint_auroc: sp.as_ref().map(|m| m.auroc),
            staypoint_aupr: sp.as_ref().map(|m| m.aupr),
        });
    }
    let csv_path = out_dir.join("ablation.csv");
    let json_path = out_dir.join("ablation.json");
    let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
    let mut table = String::from("variant,agent_auroc,agent_aupr,agent_max_f1,staypoint_auroc,staypoint_aupr\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{}\n",
            r.variant,
            r.agent_auroc,
            r.agent_aupr,
            r.agent_max_f1,
            fmt(r.staypoint_auroc),
            fmt(r.staypoint_aupr)
        ));
    }
    std::fs::write(&csv_path, &table)?;
    write_json(&json_path, &rows)?;
    print!("{table}");
    rec.output("ablation_table", &csv_path)?;
    rec.output("ablation_json", &json_path)?;
    rec.finish(out_dir)
}
