//! Ranking metrics, curve points, the visit-rate baseline and score fusion.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::MobilityDataset;
use crate::encoding::week_index;
use crate::error::{Error, Result};

/// Added to the training std in the visit-rate z-score.
pub const VISIT_RATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Agent,
    Staypoint,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score; ties keep input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Runs of equal scores in descending order, as `(score, positives, negatives)`.
fn threshold_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in descending(scores) {
        let (p, n) = if labels[i] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += p;
                g.2 += n;
            }
            _ => groups.push((scores[i], p, n)),
        }
    }
    groups
}

/// Mann–Whitney AUROC with half credit for ties (midranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the rank sum keeps midranks integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let positives = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        rank_sum_x2 += positives * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// Step-wise average precision: mean precision at the rank of every
/// positive, with ties ordered by input position.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive".into()));
    }
    let mut tp = 0usize;
    let mut total = 0.0;
    for (rank, i) in descending(scores).into_iter().enumerate() {
        if labels[i] {
            tp += 1;
            total += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxF1 {
    pub f1: f64,
    /// Lowest threshold (`score ≥ threshold` flags) attaining the maximum.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Best F1 over thresholds at every distinct score.
pub fn max_f1(scores: &[f64], labels: &[bool]) -> Result<MaxF1> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("max F1 needs a positive".into()));
    }
    let mut best = MaxF1 { f1: -1.0, threshold: f64::INFINITY, precision: 0.0, recall: 0.0 };
    let (mut tp, mut fp) = (0usize, 0usize);
    for (score, p, n) in threshold_groups(scores, labels) {
        tp += p;
        fp += n;
        let fneg = pos - tp;
        let f1 = (2 * tp) as f64 / (2 * tp + fp + fneg) as f64;
        if f1 >= best.f1 {
            best = MaxF1 {
                f1,
                threshold: score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / pos as f64,
            };
        }
    }
    Ok(best)
}

/// `(fpr, tpr)` at every distinct threshold, from `(0,0)` to `(1,1)`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("ROC needs both classes".into()));
    }
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in threshold_groups(scores, labels) {
        tp += p;
        fp += n;
        out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(out)
}

/// `(recall, precision)` at every distinct threshold, highest first.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("PR curve needs a positive".into()));
    }
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in threshold_groups(scores, labels) {
        tp += p;
        fp += n;
        out.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Same value as `average_precision` (step-wise integral).
    pub aupr: f64,
    pub auroc: f64,
    pub average_precision: f64,
    pub max_f1: f64,
    pub threshold_at_max_f1: f64,
    pub precision_at_max_f1: f64,
    pub recall_at_max_f1: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

pub fn evaluate(scores: &[f64], labels: &[bool], level: Level) -> Result<MetricsReport> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let ap = average_precision(scores, labels)?;
    let f = max_f1(scores, labels)?;
    Ok(MetricsReport {
        level,
        n_pos,
        n_neg,
        aupr: ap,
        auroc: auroc(scores, labels)?,
        average_precision: ap,
        max_f1: f.f1,
        threshold_at_max_f1: f.threshold,
        precision_at_max_f1: f.precision,
        recall_at_max_f1: f.recall,
        roc_points: roc_points(scores, labels)?,
        pr_points: pr_points(scores, labels)?,
    })
}

/// Joins keyed scores and labels; every scored key must have a label.
pub fn align<K: Ord + std::fmt::Debug>(
    scores: &BTreeMap<K, f64>,
    labels: &BTreeMap<K, bool>,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let mut s = Vec::with_capacity(scores.len());
    let mut l = Vec::with_capacity(scores.len());
    for (k, v) in scores {
        let lab = labels
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no label for {k:?}")))?;
        s.push(*v);
        l.push(*lab);
    }
    Ok((s, l))
}

pub fn write_curve<W: Write>(writer: W, header: [&str; 2], points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (x, y) in points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<curve>", e))?;
    Ok(())
}

pub fn save_curve(path: impl AsRef<Path>, header: [&str; 2], points: &[(f64, f64)]) -> Result<()> {
    let p = path.as_ref();
    let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
    write_curve(std::io::BufWriter::new(f), header, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitStats {
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
}

impl VisitStats {
    pub fn z(&self) -> f64 {
        (self.test_mean - self.train_mean).abs() / (self.train_std + VISIT_RATE_EPS)
    }
}

/// Weekly visit statistics per agent and POI type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitRateProfile {
    pub agents: BTreeMap<u64, BTreeMap<String, VisitStats>>,
}

fn weekly_counts(data: &MobilityDataset, anchor: i64) -> (usize, BTreeMap<(u64, String), Vec<f64>>) {
    let Some((lo, hi)) = data.time_range() else {
        return (0, BTreeMap::new());
    };
    let first = week_index(lo, anchor);
    let weeks = (week_index(hi, anchor) - first + 1) as usize;
    let mut counts: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for sp in data.staypoints() {
        let w = (week_index(sp.arrival_epoch, anchor) - first) as usize;
        counts
            .entry((sp.agent_id, sp.poi_type.clone()))
            .or_insert_with(|| vec![0.0; weeks])[w] += 1.0;
    }
    (weeks, counts)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Weekly visit counts per `(agent, POI)` over calendar weeks from
/// `week_anchor`; each period spans the weeks its dataset covers.
pub fn fit_visit_rates(train: &MobilityDataset, test: &MobilityDataset, week_anchor: i64) -> Result<VisitRateProfile> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_weeks, train_counts) = weekly_counts(train, week_anchor);
    let (test_weeks, test_counts) = weekly_counts(test, week_anchor);
    let agents: BTreeSet<u64> = train.agent_ids().chain(test.agent_ids()).collect();
    let keys: BTreeSet<&(u64, String)> = train_counts.keys().chain(test_counts.keys()).collect();
    let mut profile = VisitRateProfile::default();
    for a in agents {
        profile.agents.insert(a, BTreeMap::new());
    }
    let zeros_train = vec![0.0; train_weeks];
    let zeros_test = vec![0.0; test_weeks];
    for key in keys {
        let (train_mean, train_std) = mean_std(train_counts.get(key).unwrap_or(&zeros_train));
        let (test_mean, _) = mean_std(test_counts.get(key).unwrap_or(&zeros_test));
        profile.agents.get_mut(&key.0).expect("agent registered").insert(
            key.1.clone(),
            VisitStats { train_mean, train_std, test_mean },
        );
    }
    Ok(profile)
}

/// Largest per-POI z-score for the agent.
pub fn visit_rate_score(profile: &VisitRateProfile, agent_id: u64) -> Result<f64> {
    let entries = profile.agents.get(&agent_id).ok_or(Error::AgentNotFound(agent_id))?;
    Ok(entries.values().map(VisitStats::z).fold(0.0, f64::max))
}

pub fn visit_rate_scores(profile: &VisitRateProfile) -> BTreeMap<u64, f64> {
    profile
        .agents
        .keys()
        .map(|&a| (a, visit_rate_score(profile, a).expect("agent present")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub scores: BTreeMap<u64, f64>,
    /// All visit scores equal; every normalized score is 0.
    pub degenerate_range: bool,
}

/// `minmax(visit) · model` per agent.
pub fn fuse_scores(model: &BTreeMap<u64, f64>, visit: &BTreeMap<u64, f64>) -> Result<Fusion> {
    if !model.keys().eq(visit.keys()) {
        return Err(Error::InvalidArgument("model and visit-rate agent sets differ".into()));
    }
    if model.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lo = visit.values().copied().fold(f64::INFINITY, f64::min);
    let hi = visit.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate_range = !(hi > lo);
    let scores = model
        .iter()
        .map(|(a, s)| {
            let v = if degenerate_range { 0.0 } else { (visit[a] - lo) / (hi - lo) };
            (*a, v * s)
        })
        .collect();
    Ok(Fusion { scores, degenerate_range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Staypoint, SplitTag};

    fn lab(xs: &[u8]) -> Vec<bool> {
        xs.iter().map(|x| *x == 1).collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.3], &lab(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &lab(&[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.2, 0.5], &lab(&[1, 1, 0])).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &lab(&[1, 1])).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &lab(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.8, 0.7, 0.1], &lab(&[0, 0, 0, 1])).unwrap(), 0.25);
        assert_eq!(average_precision(&[0.3, 0.2], &lab(&[1, 1])).unwrap(), 1.0);
        assert!(average_precision(&[0.3], &lab(&[0])).is_err());
    }

    #[test]
    fn max_f1_examples() {
        let m = max_f1(&[0.9, 0.8, 0.1, 0.2], &lab(&[1, 1, 0, 0])).unwrap();
        assert_eq!((m.f1, m.threshold, m.precision), (1.0, 0.8, 1.0));
        let mut s = vec![0.1; 10];
        s[0] = 0.9;
        let mut l = vec![false; 10];
        l[0] = true;
        assert_eq!(max_f1(&s, &l).unwrap().f1, 1.0);
        let m = max_f1(&[0.9, 0.8, 0.7], &lab(&[1, 0, 1])).unwrap();
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert_eq!(m.threshold, 0.7);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn curves_have_endpoints() {
        let s = [0.9, 0.4, 0.4, 0.1];
        let l = lab(&[1, 0, 1, 0]);
        let roc = roc_points(&s, &l).unwrap();
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc.len(), 4);
        let pr = pr_points(&s, &l).unwrap();
        assert_eq!(pr[0], (0.5, 1.0));
        let r = evaluate(&s, &l, Level::Staypoint).unwrap();
        assert_eq!(r.aupr, r.average_precision);
        assert_eq!((r.n_pos, r.n_neg), (2, 2));
        assert!(evaluate(&s, &l[..3], Level::Agent).is_err());
    }

    #[test]
    fn visit_rate_examples() {
        let mk = |tm: f64, sd: f64, te: f64| VisitStats { train_mean: tm, train_std: sd, test_mean: te };
        let mut p = VisitRateProfile::default();
        p.agents.insert(1, BTreeMap::from([("a".to_string(), mk(2.0, 1.0, 2.0))]));
        p.agents.insert(2, BTreeMap::from([("a".to_string(), mk(5.0, 1.0, 8.0))]));
        p.agents.insert(
            3,
            BTreeMap::from([("a".to_string(), mk(1.0, 1.0, 1.5)), ("b".to_string(), mk(1.0, 0.5, 2.0))]),
        );
        assert_eq!(visit_rate_score(&p, 1).unwrap(), 0.0);
        assert!((visit_rate_score(&p, 2).unwrap() - 3.0).abs() < 1e-5);
        assert!((visit_rate_score(&p, 3).unwrap() - 2.0).abs() < 1e-5);
        assert!(matches!(visit_rate_score(&p, 9), Err(Error::AgentNotFound(9))));
    }

    #[test]
    fn visit_rates_from_data() {
        const A: i64 = 1_704_067_200;
        const W: i64 = 604_800;
        let sp = |agent: u64, t: i64, poi: &str| Staypoint {
            agent_id: agent,
            arrival_epoch: t,
            duration: 60.0,
            poi_type: poi.into(),
            location: None,
            label: None,
        };
        let train = vec![sp(1, A, "work"), sp(1, A + W, "work"), sp(1, A + W + 10, "work")];
        let test = vec![sp(1, A + 2 * W, "home"), sp(1, A + 3 * W, "home")];
        let vocab = vec!["home".to_string(), "work".to_string()];
        let tr = MobilityDataset::from_staypoints(train, vocab.clone(), SplitTag::Train).unwrap();
        let te = MobilityDataset::from_staypoints(test, vocab, SplitTag::Test).unwrap();
        let p = fit_visit_rates(&tr, &te, A).unwrap();
        let work = p.agents[&1]["work"];
        assert_eq!((work.train_mean, work.train_std, work.test_mean), (1.5, 0.5, 0.0));
        let home = p.agents[&1]["home"];
        assert_eq!((home.train_mean, home.train_std, home.test_mean), (0.0, 0.0, 1.0));
    }

    #[test]
    fn fusion_examples() {
        let model = BTreeMap::from([(1, 0.8), (2, 0.9)]);
        let f = fuse_scores(&model, &BTreeMap::from([(1, 0.0), (2, 3.0)])).unwrap();
        assert_eq!(f.scores, BTreeMap::from([(1, 0.0), (2, 0.9)]));
        let f = fuse_scores(&model, &BTreeMap::from([(1, 2.0), (2, 2.0)])).unwrap();
        assert!(f.degenerate_range);
        assert!(f.scores.values().all(|v| *v == 0.0));
        assert!(fuse_scores(&model, &BTreeMap::from([(1, 0.0), (3, 1.0)])).is_err());
    }
}
