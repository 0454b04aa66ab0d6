//! Desk-scale benchmark: generate, train, score and evaluate.
//!
//! `cargo run --release -p bayesic-core --example benchmark [epochs] [switch-to-disable]`

use std::collections::BTreeMap;
use std::time::Instant;

use bayesic::dataset::Label;
use bayesic::evaluation::{align, evaluate, Level};
use bayesic::scoring::{agent_scores, score_dataset};
use bayesic::synthgen::{generate, inject_anomalies, AnomalySpec, GeneratorConfig, PersonaTemplate};
use bayesic::training::{train, PipelineConfig};

fn main() -> bayesic::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs"));
    let start = Instant::now();
    let data = generate(&PersonaTemplate::defaults(), &GeneratorConfig::default(), 7)?;
    let injected = inject_anomalies(&data.test, &AnomalySpec::default(), 7)?;
    println!(
        "train {} staypoints, test {} staypoints, {} anomalous agents",
        data.train.staypoint_count(),
        injected.dataset.staypoint_count(),
        injected.selected.len()
    );
    let mut config = PipelineConfig::default();
    config.training.seed = 7;
    config.training.epochs = epochs;
    match std::env::args().nth(2).as_deref() {
        None => {}
        Some("arrival") => config.training.use_arrival = false,
        Some("poi") => config.training.use_poi = false,
        Some("duration") => config.training.use_duration = false,
        Some("embedding") => config.training.use_embedding = false,
        Some(other) => panic!("unknown switch {other}"),
    }
    let outcome = train(&data.train, &config)?;
    for e in &outcome.log.epochs {
        println!("epoch {:2} l_ae {:.5} l_f {:.2} l_total {:.2}", e.epoch, e.l_ae, e.l_f, e.l_total);
    }
    println!("trained in {:.1?}", start.elapsed());
    let records = score_dataset(&outcome.pipeline, &injected.dataset)?;
    let sp_scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let sp_labels: Vec<bool> = records.iter().map(|r| r.label == Some(Label::Anomalous)).collect();
    let sp = evaluate(&sp_scores, &sp_labels, Level::Staypoint)?;
    let agents = agent_scores(&records);
    let labels: BTreeMap<u64, bool> = injected
        .agent_labels
        .iter()
        .map(|(a, l)| (*a, l.is_anomalous()))
        .collect();
    let (s, l) = align(&agents, &labels)?;
    let ag = evaluate(&s, &l, Level::Agent)?;
    println!("staypoint auroc {:.4} aupr {:.4}", sp.auroc, sp.aupr);
    println!("agent     auroc {:.4} aupr {:.4} max_f1 {:.4}", ag.auroc, ag.aupr, ag.max_f1);
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
