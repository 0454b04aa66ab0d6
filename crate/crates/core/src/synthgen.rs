//! Seeded synthetic mobility generator with persona schedules and injected
//! anomalies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, MobilityDataset, SplitTag, Staypoint, UNKNOWN_POI};
use crate::encoding::{monday_anchor_utc, week_index, HOURS_PER_WEEK, WEEK_SECONDS};
use crate::error::{Error, Result};

/// 2024-01-01 00:00 UTC, a Monday.
pub const DEFAULT_START_EPOCH: i64 = 1_704_067_200;

/// POI vocabulary of generated data (`unknown` last).
pub const SYNTH_VOCABULARY: [&str; 6] = ["home", "work", "school", "restaurant", "recreation", UNKNOWN_POI];

const MIN_DURATION_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persona {
    Worker,
    Student,
    Flexible,
}

impl Persona {
    pub const ALL: [Persona; 3] = [Persona::Worker, Persona::Student, Persona::Flexible];

    pub fn as_str(self) -> &'static str {
        match self {
            Persona::Worker => "worker",
            Persona::Student => "student",
            Persona::Flexible => "flexible",
        }
    }
}

/// One recurring visit in a weekly schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub poi_type: String,
    /// Mean arrival, hours since Monday 00:00.
    pub mean_time_h: f64,
    pub time_jitter_h: f64,
    pub mean_duration_s: f64,
    pub duration_jitter_s: f64,
    pub visit_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaTemplate {
    pub persona: Persona,
    pub schedule: Vec<ScheduleEntry>,
}

fn entry(poi: &str, day: usize, hour: f64, jitter: f64, dur_h: f64, dur_jitter_min: f64, p: f64) -> ScheduleEntry {
    ScheduleEntry {
        poi_type: poi.to_string(),
        mean_time_h: day as f64 * 24.0 + hour,
        time_jitter_h: jitter,
        mean_duration_s: dur_h * 3600.0,
        duration_jitter_s: dur_jitter_min * 60.0,
        visit_probability: p,
    }
}

impl PersonaTemplate {
    pub fn new(persona: Persona, schedule: Vec<ScheduleEntry>) -> Result<Self> {
        for e in &schedule {
            if !(0.0..=1.0).contains(&e.visit_probability) {
                return Err(Error::InvalidArgument(format!("visit probability {} not in [0,1]", e.visit_probability)));
            }
            if !(e.mean_duration_s > 0.0) || e.time_jitter_h < 0.0 || e.duration_jitter_s < 0.0 {
                return Err(Error::InvalidArgument("schedule entry needs positive duration and jitter ≥ 0".into()));
            }
        }
        Ok(Self { persona, schedule })
    }

    /// Built-in weekly schedule for `persona`.
    pub fn default_for(persona: Persona) -> Self {
        let mut s = Vec::new();
        match persona {
            Persona::Worker => {
                for d in 0..5 {
                    s.push(entry("work", d, 9.0, 0.25, 8.5, 20.0, 1.0));
                    s.push(entry("home", d, 18.0, 0.4, 14.5, 30.0, 1.0));
                }
                s.push(entry("recreation", 1, 19.5, 0.4, 2.0, 20.0, 0.6));
                s.push(entry("recreation", 3, 19.5, 0.4, 2.0, 20.0, 0.6));
                s.push(entry("restaurant", 4, 20.0, 0.5, 1.5, 15.0, 0.5));
                s.push(entry("home", 5, 10.0, 0.5, 4.0, 30.0, 1.0));
                s.push(entry("recreation", 5, 15.0, 0.6, 3.0, 30.0, 0.7));
                s.push(entry("restaurant", 5, 19.5, 0.5, 1.5, 15.0, 0.6));
                s.push(entry("home", 6, 11.0, 0.8, 20.0, 45.0, 1.0));
            }
            Persona::Student => {
                for d in 0..5 {
                    s.push(entry("school", d, 8.5, 0.2, 3.5, 10.0, 1.0));
                    s.push(entry("restaurant", d, 12.25, 0.25, 0.75, 10.0, 0.8));
                    s.push(entry("school", d, 13.5, 0.2, 3.0, 10.0, 0.9));
                    s.push(entry("home", d, 17.5, 0.5, 15.0, 30.0, 1.0));
                }
                s.push(entry("recreation", 4, 20.0, 0.5, 3.0, 30.0, 0.7));
                s.push(entry("home", 5, 11.0, 0.8, 6.0, 40.0, 1.0));
                s.push(entry("recreation", 5, 18.0, 0.6, 4.0, 40.0, 0.8));
                s.push(entry("home", 6, 12.0, 0.8, 20.0, 45.0, 1.0));
            }
            Persona::Flexible => {
                for d in [0, 2, 4] {
                    s.push(entry("work", d, 11.0, 0.75, 6.0, 40.0, 0.8));
                }
                for d in [1, 3] {
                    s.push(entry("recreation", d, 10.0, 0.75, 2.0, 30.0, 0.6));
                    s.push(entry("restaurant", d, 13.0, 0.5, 1.0, 15.0, 0.7));
                }
                for d in 0..7 {
                    s.push(entry("home", d, 20.0, 0.75, 13.0, 45.0, 1.0));
                }
                s.push(entry("restaurant", 5, 12.5, 0.6, 1.25, 15.0, 0.7));
                s.push(entry("recreation", 6, 15.0, 0.8, 3.0, 30.0, 0.6));
            }
        }
        Self::new(persona, s).expect("built-in schedule is valid")
    }

    pub fn defaults() -> Vec<Self> {
        Persona::ALL.iter().map(|p| Self::default_for(*p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_agents: usize,
    pub weeks_train: usize,
    pub weeks_test: usize,
    /// Must be a Monday 00:00 UTC.
    pub start_epoch: i64,
    /// Std of the per-agent schedule shift, hours.
    pub agent_shift_h: f64,
    /// Std of the per-agent log duration scale.
    pub agent_duration_log_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_agents: 200,
            weeks_train: 4,
            weeks_test: 2,
            start_epoch: DEFAULT_START_EPOCH,
            agent_shift_h: 0.5,
            agent_duration_log_std: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: MobilityDataset,
    pub test: MobilityDataset,
    /// Persona of every agent.
    pub personas: BTreeMap<u64, Persona>,
}

fn agent_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn vocabulary() -> Vec<String> {
    SYNTH_VOCABULARY.iter().map(|s| s.to_string()).collect()
}

/// Generates `weeks_train + weeks_test` weeks for each agent, split at the
/// week boundary. Persona of agent `i` is `personas[(i + seed) % len]`.
pub fn generate(personas: &[PersonaTemplate], config: &GeneratorConfig, seed: u64) -> Result<GeneratedData> {
    if config.n_agents == 0 || config.weeks_train == 0 || config.weeks_test == 0 {
        return Err(Error::InvalidArgument("need n_agents, weeks_train, weeks_test ≥ 1".into()));
    }
    if personas.is_empty() {
        return Err(Error::InvalidArgument("no personas".into()));
    }
    if monday_anchor_utc(config.start_epoch) != config.start_epoch {
        return Err(Error::InvalidArgument("start_epoch must be a Monday 00:00 UTC".into()));
    }
    let boundary = config.start_epoch + config.weeks_train as i64 * WEEK_SECONDS;
    let weeks = config.weeks_train + config.weeks_test;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut assigned = BTreeMap::new();
    for i in 0..config.n_agents {
        let agent = i as u64;
        let template = &personas[(i + (seed % personas.len() as u64) as usize) % personas.len()];
        assigned.insert(agent, template.persona);
        let mut rng = agent_rng(seed, agent);
        let shift = Normal::new(0.0, config.agent_shift_h.max(0.0))
            .expect("finite std")
            .sample(&mut rng);
        let scale = Normal::new(0.0, config.agent_duration_log_std.max(0.0))
            .expect("finite std")
            .sample(&mut rng)
            .exp();
        for week in 0..weeks {
            let week_start = config.start_epoch + week as i64 * WEEK_SECONDS;
            for e in &template.schedule {
                if !rng.random_bool(e.visit_probability) {
                    continue;
                }
                let jitter: f64 = Normal::new(0.0, e.time_jitter_h).expect("valid").sample(&mut rng);
                let dj: f64 = Normal::new(0.0, e.duration_jitter_s).expect("valid").sample(&mut rng);
                let tow = (e.mean_time_h + shift + jitter).rem_euclid(HOURS_PER_WEEK);
                let secs = ((tow * 3600.0).round() as i64).min(WEEK_SECONDS - 1);
                let sp = Staypoint {
                    agent_id: agent,
                    arrival_epoch: week_start + secs,
                    duration: (e.mean_duration_s * scale + dj).max(MIN_DURATION_S).round(),
                    poi_type: e.poi_type.clone(),
                    location: None,
                    label: Some(Label::Normal),
                };
                if sp.arrival_epoch < boundary {
                    train.push(sp);
                } else {
                    test.push(sp);
                }
            }
        }
    }
    Ok(GeneratedData {
        train: MobilityDataset::from_staypoints(train, vocabulary(), SplitTag::Train)?,
        test: MobilityDataset::from_staypoints(test, vocabulary(), SplitTag::Test)?,
        personas: assigned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Hunger,
    Social,
    Work,
    Combined,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Hunger => "hunger",
            AnomalyKind::Social => "social",
            AnomalyKind::Work => "work",
            AnomalyKind::Combined => "combined",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hunger" => Ok(AnomalyKind::Hunger),
            "social" => Ok(AnomalyKind::Social),
            "work" => Ok(AnomalyKind::Work),
            "combined" => Ok(AnomalyKind::Combined),
            other => Err(Error::InvalidArgument(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Fraction of agents made anomalous.
    pub fraction: f64,
    /// Extra restaurant visits per test week (hunger).
    pub meals_per_week: usize,
    pub meal_duration_s: f64,
    pub meal_duration_jitter_s: f64,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            kind: AnomalyKind::Combined,
            fraction: 0.05,
            meals_per_week: 3,
            meal_duration_s: 2700.0,
            meal_duration_jitter_s: 600.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InjectionOutcome {
    /// Test data with every staypoint labeled.
    pub dataset: MobilityDataset,
    pub agent_labels: BTreeMap<u64, Label>,
    pub selected: Vec<u64>,
    pub added: usize,
    pub modified: usize,
    pub deleted: usize,
    pub warnings: Vec<String>,
}

/// POI types a social anomaly may substitute for `recreation`.
const SOCIAL_REPLACEMENTS: [&str; 4] = ["home", "work", "school", "restaurant"];

/// Work anomalies remove these visits.
const OBLIGATION_POIS: [&str; 2] = ["work", "school"];

/// Selects `⌈fraction · n⌉` agents by seeded shuffle and applies `spec`.
pub fn inject_anomalies(test: &MobilityDataset, spec: &AnomalySpec, seed: u64) -> Result<InjectionOutcome> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::InvalidArgument(format!("fraction {} not in [0,1]", spec.fraction)));
    }
    let ids: Vec<u64> = test.agent_ids().collect();
    let count = ((spec.fraction * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut rng = agent_rng(seed, u64::MAX);
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut rng);
    let mut selected: Vec<u64> = shuffled[..count].to_vec();
    selected.sort_unstable();

    let mut warnings = Vec::new();
    if count == 0 {
        warnings.push("anomaly fraction selects no agents; dataset unchanged".to_string());
    }
    let (lo, hi) = test.time_range().ok_or(Error::EmptyDataset)?;
    let anchor = monday_anchor_utc(lo);
    let weeks = (week_index(hi, anchor) + 1) as usize;
    let kind = spec.kind;
    let (hunger, social, work) = (
        matches!(kind, AnomalyKind::Hunger | AnomalyKind::Combined),
        matches!(kind, AnomalyKind::Social | AnomalyKind::Combined),
        matches!(kind, AnomalyKind::Work | AnomalyKind::Combined),
    );
    let (mut added, mut modified, mut deleted) = (0, 0, 0);
    let mut out = Vec::with_capacity(test.staypoint_count());
    let mut agent_labels = BTreeMap::new();
    for (id, seq) in test.agents() {
        let chosen = selected.binary_search(id).is_ok();
        agent_labels.insert(*id, if chosen { Label::Anomalous } else { Label::Normal });
        if !chosen {
            out.extend(seq.staypoints.iter().cloned().map(|mut sp| {
                sp.label = Some(Label::Normal);
                sp
            }));
            continue;
        }
        let mut rng = agent_rng(seed, *id);
        for sp in &seq.staypoints {
            let mut sp = sp.clone();
            sp.label = Some(Label::Normal);
            if work && OBLIGATION_POIS.contains(&sp.poi_type.as_str()) {
                deleted += 1;
                continue;
            }
            if social && sp.poi_type == "recreation" {
                sp.poi_type = SOCIAL_REPLACEMENTS.choose(&mut rng).expect("non-empty").to_string();
                sp.label = Some(Label::Anomalous);
                modified += 1;
            }
            out.push(sp);
        }
        if hunger {
            let dur = Normal::new(spec.meal_duration_s, spec.meal_duration_jitter_s.max(0.0))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for w in 0..weeks {
                for _ in 0..spec.meals_per_week {
                    let secs = rng.random_range(0..WEEK_SECONDS);
                    out.push(Staypoint {
                        agent_id: *id,
                        arrival_epoch: anchor + w as i64 * WEEK_SECONDS + secs,
                        duration: dur.sample(&mut rng).max(MIN_DURATION_S).round(),
                        poi_type: "restaurant".into(),
                        location: None,
                        label: Some(Label::Anomalous),
                    });
                    added += 1;
                }
            }
        }
    }
    let dataset = MobilityDataset::from_staypoints(out, test.poi_vocabulary().to_vec(), SplitTag::Test)?;
    Ok(InjectionOutcome {
        dataset,
        agent_labels,
        selected,
        added,
        modified,
        deleted,
        warnings,
    })
}
