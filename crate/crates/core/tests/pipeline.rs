mod common;

use std::collections::BTreeMap;

use bayesic::dataset::{Label, MobilityDataset, SplitTag, Staypoint, UNKNOWN_POI};
use bayesic::evaluation::{align, evaluate, fit_visit_rates, fuse_scores, visit_rate_scores, Level};
use bayesic::scoring::{agent_score, agent_scores, load_scores, save_scores, score_dataset, score_sequence, score_staypoint};
use bayesic::synthgen::{inject_anomalies, AnomalySpec};
use bayesic::training::train;

#[test]
fn train_score_evaluate_end_to_end() {
    let data = common::small_data(11);
    let injected = inject_anomalies(&data.test, &AnomalySpec { fraction: 0.3, ..AnomalySpec::default() }, 11).unwrap();
    let out = train(&data.train, &common::tiny_config(2)).unwrap();
    let first = out.log.epochs.first().unwrap().l_total;
    let last = out.log.epochs.last().unwrap().l_total;
    assert!(last < first, "loss did not decrease: {first} -> {last}");

    let records = score_dataset(&out.pipeline, &injected.dataset).unwrap();
    assert_eq!(records.len(), injected.dataset.staypoint_count());
    for r in &records {
        assert!((0.0..1.0).contains(&r.score));
        assert!((r.joint - r.p_arrival * r.p_poi * r.p_duration).abs() < 1e-15);
        assert!(r.cascade_nll.is_finite());
    }

    let agents = agent_scores(&records);
    assert_eq!(agents.len(), injected.dataset.agent_count());
    let labels: BTreeMap<u64, bool> = injected.agent_labels.iter().map(|(a, l)| (*a, l.is_anomalous())).collect();
    let (s, l) = align(&agents, &labels).unwrap();
    let report = evaluate(&s, &l, Level::Agent).unwrap();
    assert!((0.0..=1.0).contains(&report.auroc) && (0.0..=1.0).contains(&report.aupr));

    let profile = fit_visit_rates(&data.train, &injected.dataset, out.pipeline.stats.week_anchor).unwrap();
    let fused = fuse_scores(&agents, &visit_rate_scores(&profile)).unwrap();
    for (a, f) in &fused.scores {
        assert!(*f >= 0.0 && *f <= agents[a] + 1e-15);
    }
}

#[test]
fn staypoint_scoring_matches_sequence_scoring() {
    let data = common::small_data(12);
    let out = train(&data.train, &common::tiny_config(3)).unwrap();
    let (&id, seq) = data.test.agents().iter().next().unwrap();
    let sps = &seq.staypoints;
    let all = score_sequence(&out.pipeline, id, sps).unwrap();
    let k = sps.len() / 2;
    let one = score_staypoint(&out.pipeline, id, &sps[k], &sps[..k]).unwrap();
    assert_eq!(one.score.to_bits(), all[k].score.to_bits());
    assert_eq!(agent_score(&all).unwrap(), agent_scores(&all)[&id]);
    assert!(score_sequence(&out.pipeline, id, &[]).unwrap().is_empty());
}

#[test]
fn all_switches_off_gives_zero_scores() {
    let data = common::small_data(13);
    let mut cfg = common::tiny_config(4);
    cfg.training.use_arrival = false;
    cfg.training.use_poi = false;
    cfg.training.use_duration = false;
    let out = train(&data.train, &cfg).unwrap();
    let records = score_dataset(&out.pipeline, &data.test).unwrap();
    assert!(records.iter().all(|r| r.score == 0.0));
}

#[test]
fn cold_start_agent_and_foreign_tokens() {
    let data = common::small_data(14);
    let out = train(&data.train, &common::tiny_config(6)).unwrap();
    let vocab = out.pipeline.stats.vocabulary.clone();
    let start = data.test.time_range().unwrap().0;
    let sps = vec![
        Staypoint {
            agent_id: 9_999,
            arrival_epoch: start,
            duration: 3_600.0,
            poi_type: "home".into(),
            location: None,
            label: Some(Label::Normal),
        },
        Staypoint {
            agent_id: 9_999,
            arrival_epoch: start + 7_200,
            duration: 1_800.0,
            poi_type: "museum".into(),
            location: None,
            label: Some(Label::Normal),
        },
    ];
    let mut foreign_vocab = vocab.clone();
    foreign_vocab.push("museum".into());
    let foreign = MobilityDataset::from_staypoints(sps, foreign_vocab, SplitTag::Test).unwrap();
    assert!(score_dataset(&out.pipeline, &foreign).is_err());

    let remapped = foreign.with_vocabulary(&vocab).unwrap();
    assert_eq!(remapped.agent(9_999).unwrap().staypoints[1].poi_type, UNKNOWN_POI);
    let records = score_dataset(&out.pipeline, &remapped).unwrap();
    assert_eq!(records.len(), 2);
    assert!(out.pipeline.embedding_for(9_999).values().iter().all(|v| *v == 0.0));
}

#[test]
fn scores_csv_roundtrip() {
    let data = common::small_data(15);
    let out = train(&data.train, &common::tiny_config(7)).unwrap();
    let records = score_dataset(&out.pipeline, &data.test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    save_scores(&path, &records).unwrap();
    let back = load_scores(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!((a.agent_id, a.staypoint_idx, a.arrival_epoch), (b.agent_id, b.staypoint_idx, b.arrival_epoch));
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}
