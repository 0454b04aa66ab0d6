//! Staypoint data model, CSV ingestion, POI mapping and time splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved token for staypoints without a resolvable POI.
pub const UNKNOWN_POI: &str = "unknown";

/// Default mapping radius for nearest-POI lookup, in meters.
pub const DEFAULT_POI_RADIUS_M: f64 = 15.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    /// Accepts `normal`/`anomalous` as well as `0`/`1` and `false`/`true`.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" | "false" => Some(Label::Normal),
            "anomalous" | "anomaly" | "1" | "true" => Some(Label::Anomalous),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

/// One dwell event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staypoint {
    pub agent_id: u64,
    /// Seconds since the Unix epoch.
    pub arrival_epoch: i64,
    /// Stay length in seconds, always positive.
    pub duration: f64,
    pub poi_type: String,
    /// `(latitude, longitude)` in degrees.
    pub location: Option<(f64, f64)>,
    pub label: Option<Label>,
}

/// All staypoints of one agent, sorted by arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSequence {
    pub agent_id: u64,
    pub staypoints: Vec<Staypoint>,
}

impl AgentSequence {
    pub fn len(&self) -> usize {
        self.staypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.staypoints.is_empty()
    }

    /// `Some(Anomalous)` if any staypoint carries an anomalous label.
    pub fn derived_label(&self) -> Option<Label> {
        let mut any_label = false;
        for sp in &self.staypoints {
            match sp.label {
                Some(Label::Anomalous) => return Some(Label::Anomalous),
                Some(Label::Normal) => any_label = true,
                None => {}
            }
        }
        any_label.then_some(Label::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    /// Loaded as-is, not yet split.
    Full,
}

/// Immutable collection of agent sequences sharing one POI vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityDataset {
    agents: BTreeMap<u64, AgentSequence>,
    poi_vocabulary: Vec<String>,
    split_tag: SplitTag,
}

impl MobilityDataset {
    /// Groups staypoints by agent, sorts each sequence by arrival (stable),
    /// and validates every staypoint against `vocabulary`.
    ///
    /// `unknown` is always placed last, whether or not `vocabulary` lists it.
    pub fn from_staypoints(
        staypoints: Vec<Staypoint>,
        vocabulary: Vec<String>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        let mut vocab: Vec<String> = vocabulary
            .into_iter()
            .filter(|t| t != UNKNOWN_POI)
            .collect();
        let distinct: BTreeSet<&String> = vocab.iter().collect();
        if distinct.len() != vocab.len() {
            return Err(Error::InvalidArgument("duplicate vocabulary token".into()));
        }
        vocab.push(UNKNOWN_POI.to_string());
        let mut agents: BTreeMap<u64, AgentSequence> = BTreeMap::new();
        for sp in staypoints {
            if !(sp.duration > 0.0) || !sp.duration.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "agent {}: non-positive duration {}",
                    sp.agent_id, sp.duration
                )));
            }
            if !vocab.contains(&sp.poi_type) {
                return Err(Error::UnknownPoi(sp.poi_type));
            }
            agents
                .entry(sp.agent_id)
                .or_insert_with(|| AgentSequence {
                    agent_id: sp.agent_id,
                    staypoints: Vec::new(),
                })
                .staypoints
                .push(sp);
        }
        for seq in agents.values_mut() {
            seq.staypoints.sort_by_key(|sp| sp.arrival_epoch);
        }
        Ok(Self {
            agents,
            poi_vocabulary: vocab,
            split_tag,
        })
    }

    pub fn agents(&self) -> &BTreeMap<u64, AgentSequence> {
        &self.agents
    }

    pub fn agent(&self, id: u64) -> Option<&AgentSequence> {
        self.agents.get(&id)
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.agents.keys().copied()
    }

    /// Number of distinct agents.
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn staypoint_count(&self) -> usize {
        self.agents.values().map(AgentSequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.staypoint_count() == 0
    }

    /// Vocabulary with `unknown` last.
    pub fn poi_vocabulary(&self) -> &[String] {
        &self.poi_vocabulary
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    pub fn staypoints(&self) -> impl Iterator<Item = &Staypoint> {
        self.agents.values().flat_map(|a| a.staypoints.iter())
    }

    /// `(earliest, latest)` arrival epochs.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        let mut it = self.staypoints().map(|s| s.arrival_epoch);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    /// Same data under a different vocabulary; tokens missing from
    /// `vocabulary` are routed to `unknown`.
    pub fn with_vocabulary(&self, vocabulary: &[String]) -> Result<Self> {
        let vocab: Vec<String> = vocabulary
            .iter()
            .filter(|t| *t != UNKNOWN_POI)
            .cloned()
            .collect();
        let sps = self
            .staypoints()
            .cloned()
            .map(|mut sp| {
                if !vocab.contains(&sp.poi_type) {
                    sp.poi_type = UNKNOWN_POI.to_string();
                }
                sp
            })
            .collect();
        Self::from_staypoints(sps, vocab, self.split_tag)
    }

    pub fn with_split_tag(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }

    /// Agent-level ground truth derived from staypoint labels.
    pub fn derived_agent_labels(&self) -> BTreeMap<u64, Label> {
        self.agents
            .iter()
            .filter_map(|(id, seq)| seq.derived_label().map(|l| (*id, l)))
            .collect()
    }
}

/// Header names for the staypoint CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub agent_id: String,
    pub arrival_epoch: String,
    pub duration: String,
    pub poi_type: String,
    pub lat: String,
    pub lon: String,
    pub label: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            agent_id: "agent_id".into(),
            arrival_epoch: "arrival_epoch".into(),
            duration: "duration_s".into(),
            poi_type: "poi_type".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            label: "label".into(),
        }
    }
}

/// Optional nearest-POI resolution applied to rows with an empty `poi_type`.
#[derive(Debug, Clone, Copy)]
pub struct PoiResolver<'a> {
    pub index: &'a PoiIndex,
    pub radius_m: f64,
}

pub fn load_staypoints(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MobilityDataset> {
    load_staypoints_with(path, schema, None)
}

pub fn load_staypoints_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    resolver: Option<PoiResolver<'_>>,
) -> Result<MobilityDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_staypoints(file, schema, resolver)
}

/// Parses staypoint CSV from any reader. Empty `poi_type` cells resolve
/// through `resolver` when given, else to `unknown`.
pub fn read_staypoints<R: Read>(
    reader: R,
    schema: &CsvSchema,
    resolver: Option<PoiResolver<'_>>,
) -> Result<MobilityDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let i_agent = require(&schema.agent_id)?;
    let i_time = require(&schema.arrival_epoch)?;
    let i_dur = require(&schema.duration)?;
    let i_poi = require(&schema.poi_type)?;
    let i_lat = col(&schema.lat);
    let i_lon = col(&schema.lon);
    let i_label = col(&schema.label);

    let mut staypoints = Vec::new();
    let mut tokens = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let row_err = |message: String| Error::Row { line, message };

        let agent_id: u64 = field(i_agent)
            .parse()
            .map_err(|_| row_err(format!("bad agent_id `{}`", field(i_agent))))?;
        let arrival_epoch: i64 = field(i_time)
            .parse()
            .map_err(|_| row_err(format!("bad arrival_epoch `{}`", field(i_time))))?;
        let duration: f64 = field(i_dur)
            .parse()
            .map_err(|_| row_err(format!("bad duration `{}`", field(i_dur))))?;
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(row_err(format!("duration must be positive, got {duration}")));
        }
        let parse_opt = |i: Option<usize>, what: &str| -> Result<Option<f64>> {
            match i.map(field).filter(|s| !s.is_empty()) {
                None => Ok(None),
                Some(s) => s
                    .parse()
                    .map(Some)
                    .map_err(|_| row_err(format!("bad {what} `{s}`"))),
            }
        };
        let location = match (parse_opt(i_lat, "lat")?, parse_opt(i_lon, "lon")?) {
            (Some(lat), Some(lon)) => {
                check_coordinates(lat, lon).map_err(|e| row_err(e.to_string()))?;
                Some((lat, lon))
            }
            (None, None) => None,
            _ => return Err(row_err("lat and lon must both be present or both empty".into())),
        };
        let label = match i_label.map(field).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(Label::parse(s).ok_or_else(|| row_err(format!("bad label `{s}`")))?),
        };
        let mut poi_type = field(i_poi).to_string();
        if poi_type.is_empty() {
            poi_type = match (resolver, location) {
                (Some(r), Some((lat, lon))) => map_poi(lat, lon, r.index, r.radius_m)?,
                _ => UNKNOWN_POI.to_string(),
            };
        }
        if poi_type != UNKNOWN_POI {
            tokens.insert(poi_type.clone());
        }
        staypoints.push(Staypoint {
            agent_id,
            arrival_epoch,
            duration,
            poi_type,
            location,
            label,
        });
    }
    if staypoints.is_empty() {
        return Err(Error::EmptyDataset);
    }
    MobilityDataset::from_staypoints(staypoints, tokens.into_iter().collect(), SplitTag::Full)
}

/// Writes the canonical staypoint CSV. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_staypoints<W: Write>(writer: W, ds: &MobilityDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "agent_id",
        "arrival_epoch",
        "duration_s",
        "poi_type",
        "lat",
        "lon",
        "label",
    ])?;
    for sp in ds.staypoints() {
        let (lat, lon) = sp
            .location
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        w.write_record([
            sp.agent_id.to_string(),
            sp.arrival_epoch.to_string(),
            sp.duration.to_string(),
            sp.poi_type.clone(),
            lat,
            lon,
            sp.label.map_or("", Label::as_str).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_staypoints(path: impl AsRef<Path>, ds: &MobilityDataset) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_staypoints(f, ds)
}

/// `agent_id,label` sidecar.
pub fn save_agent_labels(path: impl AsRef<Path>, labels: &BTreeMap<u64, Label>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["agent_id", "label"])?;
    for (id, l) in labels {
        w.write_record([id.to_string(), l.as_str().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_agent_labels(path: impl AsRef<Path>) -> Result<BTreeMap<u64, Label>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let headers = rdr.headers()?.clone();
    let find = |n: &str| {
        headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::MissingColumn(n.to_string()))
    };
    let (ia, il) = (find("agent_id")?, find("label")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[ia].parse().map_err(|_| Error::Row {
            line,
            message: format!("bad agent_id `{}`", &rec[ia]),
        })?;
        let l = Label::parse(&rec[il]).ok_or_else(|| Error::Row {
            line,
            message: format!("bad label `{}`", &rec[il]),
        })?;
        out.insert(id, l);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEntry {
    pub poi_id: u64,
    pub poi_type: String,
    pub lat: f64,
    pub lon: f64,
}

/// Known POIs with coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoiIndex {
    entries: Vec<PoiEntry>,
}

fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::OutOfRange(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::OutOfRange(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

impl PoiIndex {
    pub fn new(entries: Vec<PoiEntry>) -> Result<Self> {
        for e in &entries {
            check_coordinates(e.lat, e.lon)?;
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PoiEntry] {
        &self.entries
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let mut entries = Vec::new();
        for rec in rdr.deserialize() {
            entries.push(rec?);
        }
        Self::new(entries)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Type of the nearest POI within `radius_m`, else `unknown`. Equal
/// distances resolve to the lowest `poi_id`.
pub fn map_poi(lat: f64, lon: f64, index: &PoiIndex, radius_m: f64) -> Result<String> {
    if !(radius_m > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius_m}")));
    }
    let best = index
        .entries
        .iter()
        .map(|e| (haversine_m((lat, lon), (e.lat, e.lon)), e))
        .min_by(|(da, ea), (db, eb)| da.total_cmp(db).then(ea.poi_id.cmp(&eb.poi_id)));
    Ok(match best {
        Some((d, e)) if d <= radius_m => e.poi_type.clone(),
        _ => UNKNOWN_POI.to_string(),
    })
}

/// Result of [`split_by_time`].
#[derive(Debug, Clone)]
pub struct TimeSplit {
    pub train: MobilityDataset,
    pub test: MobilityDataset,
    /// Agents that appear only in the test half.
    pub cold_start: BTreeSet<u64>,
}

/// Half-open split: arrivals `< boundary` train, the rest test.
pub fn split_by_time(ds: &MobilityDataset, boundary_epoch: i64) -> Result<TimeSplit> {
    let (lo, hi) = ds.time_range().ok_or(Error::EmptyDataset)?;
    if boundary_epoch < lo || boundary_epoch > hi + 1 {
        return Err(Error::OutOfRange(format!(
            "boundary {boundary_epoch} outside data range [{lo}, {hi}]"
        )));
    }
    let (train, test): (Vec<Staypoint>, Vec<Staypoint>) = ds
        .staypoints()
        .cloned()
        .partition(|sp| sp.arrival_epoch < boundary_epoch);
    let vocab = ds.poi_vocabulary().to_vec();
    let train = MobilityDataset::from_staypoints(train, vocab.clone(), SplitTag::Train)?;
    let test = MobilityDataset::from_staypoints(test, vocab, SplitTag::Test)?;
    let cold_start = test
        .agent_ids()
        .filter(|id| train.agent(*id).is_none())
        .collect();
    Ok(TimeSplit {
        train,
        test,
        cold_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(body: &str) -> Result<MobilityDataset> {
        read_staypoints(body.as_bytes(), &CsvSchema::default(), None)
    }

    const HEADER: &str = "agent_id,arrival_epoch,duration_s,poi_type,lat,lon,label\n";

    #[test]
    fn load_sorts_each_agent_by_arrival() {
        let ds = csv(&format!(
            "{HEADER}1,300,60,home,,,\n1,100,60,work,,,\n1,200,60,home,,,\n"
        ))
        .unwrap();
        let times: Vec<i64> = ds.agent(1).unwrap().staypoints.iter().map(|s| s.arrival_epoch).collect();
        assert_eq!(times, vec![100, 200, 300]);
    }

    #[test]
    fn zero_duration_names_line_two() {
        let err = csv(&format!("{HEADER}1,100,0,home,,,\n")).unwrap_err();
        match err {
            Error::Row { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocabulary_appends_unknown() {
        let ds = csv(&format!("{HEADER}1,100,5,work,,,\n2,100,5,home,,,\n")).unwrap();
        assert_eq!(ds.poi_vocabulary(), &["home", "work", "unknown"]);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let err = csv("agent_id,arrival_epoch,poi_type\n1,2,home\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "duration_s"));
        assert!(matches!(csv(HEADER).unwrap_err(), Error::EmptyDataset));
    }

    #[test]
    fn labels_and_locations_parse() {
        let ds = csv(&format!("{HEADER}4,10,5.5,home,34.0,-118.2,anomalous\n")).unwrap();
        let sp = &ds.agent(4).unwrap().staypoints[0];
        assert_eq!(sp.label, Some(Label::Anomalous));
        assert_eq!(sp.location, Some((34.0, -118.2)));
        assert_eq!(ds.derived_agent_labels()[&4], Label::Anomalous);
    }

    fn index() -> PoiIndex {
        PoiIndex::new(vec![
            PoiEntry { poi_id: 2, poi_type: "home".into(), lat: 0.0, lon: 20.0 / 111_195.0 },
            PoiEntry { poi_id: 1, poi_type: "restaurant".into(), lat: 0.0, lon: -14.0 / 111_195.0 },
        ])
        .unwrap()
    }

    #[test]
    fn map_poi_exact_location() {
        let idx = index();
        let e = &idx.entries()[0];
        assert_eq!(map_poi(e.lat, e.lon, &idx, 15.0).unwrap(), "home");
    }

    #[test]
    fn map_poi_picks_nearest_within_radius() {
        // brute-force distances: 14 m to restaurant, 20 m to home
        let idx = index();
        let dists: Vec<f64> = idx.entries().iter().map(|e| haversine_m((0.0, 0.0), (e.lat, e.lon))).collect();
        assert!((dists[0] - 20.0).abs() < 0.01 && (dists[1] - 14.0).abs() < 0.01, "{dists:?}");
        assert_eq!(map_poi(0.0, 0.0, &idx, 15.0).unwrap(), "restaurant");
    }

    #[test]
    fn map_poi_out_of_radius_is_unknown() {
        let idx = index();
        // 37 m east of the origin: 17 m from home, 51 m from the restaurant
        let lon = 37.0 / 111_195.0;
        assert!(idx.entries().iter().all(|e| haversine_m((0.0, lon), (e.lat, e.lon)) >= 16.0));
        assert_eq!(map_poi(0.0, lon, &idx, 15.0).unwrap(), UNKNOWN_POI);
        assert_eq!(map_poi(0.0, 0.0, &PoiIndex::default(), 15.0).unwrap(), UNKNOWN_POI);
        assert!(map_poi(0.0, 0.0, &idx, 0.0).is_err());
    }

    #[test]
    fn map_poi_ties_go_to_lowest_id() {
        let idx = PoiIndex::new(vec![
            PoiEntry { poi_id: 9, poi_type: "a".into(), lat: 10.0, lon: 10.0 },
            PoiEntry { poi_id: 3, poi_type: "b".into(), lat: 10.0, lon: 10.0 },
        ])
        .unwrap();
        assert_eq!(map_poi(10.0, 10.0, &idx, 15.0).unwrap(), "b");
    }

    #[test]
    fn poi_index_rejects_bad_coordinates() {
        let bad = PoiEntry { poi_id: 1, poi_type: "a".into(), lat: 91.0, lon: 0.0 };
        assert!(PoiIndex::new(vec![bad]).is_err());
    }

    #[test]
    fn empty_poi_cells_resolve_through_index() {
        let idx = index();
        let r = PoiResolver { index: &idx, radius_m: 15.0 };
        let ds = read_staypoints(
            format!("{HEADER}1,10,5,,0.0,0.0,\n1,20,5,,,,\n").as_bytes(),
            &CsvSchema::default(),
            Some(r),
        )
        .unwrap();
        let types: Vec<&str> = ds.agent(1).unwrap().staypoints.iter().map(|s| s.poi_type.as_str()).collect();
        assert_eq!(types, vec!["restaurant", UNKNOWN_POI]);
    }

    fn ten_point_agent() -> MobilityDataset {
        let sps = (0..10)
            .map(|i| Staypoint {
                agent_id: 5,
                arrival_epoch: i * 100,
                duration: 10.0,
                poi_type: "home".into(),
                location: None,
                label: None,
            })
            .collect();
        MobilityDataset::from_staypoints(sps, vec!["home".into()], SplitTag::Full).unwrap()
    }

    #[test]
    fn split_counts_and_boundary_convention() {
        let ds = ten_point_agent();
        let s = split_by_time(&ds, 600).unwrap();
        assert_eq!(s.train.agent(5).unwrap().len(), 6);
        assert_eq!(s.test.agent(5).unwrap().len(), 4);
        // the staypoint exactly at the boundary is test
        assert_eq!(s.test.agent(5).unwrap().staypoints[0].arrival_epoch, 600);
        assert_eq!(s.train.poi_vocabulary(), s.test.poi_vocabulary());
    }

    #[test]
    fn split_past_end_keeps_everything_in_train() {
        let ds = ten_point_agent();
        let s = split_by_time(&ds, 901).unwrap();
        assert_eq!(s.train.staypoint_count(), 10);
        assert!(s.test.is_empty());
        assert!(split_by_time(&ds, 5000).is_err());
        assert!(split_by_time(&ds, -1).is_err());
    }

    #[test]
    fn split_flags_cold_start_agents() {
        let mut sps: Vec<Staypoint> = ten_point_agent().staypoints().cloned().collect();
        sps.push(Staypoint { agent_id: 8, arrival_epoch: 800, duration: 1.0, poi_type: "home".into(), location: None, label: None });
        let ds = MobilityDataset::from_staypoints(sps, vec!["home".into()], SplitTag::Full).unwrap();
        let s = split_by_time(&ds, 500).unwrap();
        assert!(s.cold_start.contains(&8));
        assert!(!s.cold_start.contains(&5));
    }
}
