//! Streaming reader and writer for line-delimited JSON event files.
//!
//! A file is one header line followed by one event per line:
//!
//! ```text
//! {"format_version":"1.0","source":"synthetic","class_names":["none","jpsi"]}
//! {"id":"ev-1","objects":[{"kind":"muon","pt":30.0,"eta":0.5,"phi":0.1}],"met":{"pt":12.0,"phi":-1.0},"class":1}
//! ```
//!
//! Object kinds are `electron`, `muon`, `jet`, `bjet`. Optional object keys
//! are `mass` (defaults per kind), `btag` (jets only) and `quality`
//! (upstream isolation/identification flag, default `true`). `met` and
//! `class` are optional on events. Unknown keys are ignored and counted.
//!
//! The reader holds one line in memory at a time.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::event::{Event, ObjectKind, PhysicsObject};

pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_VERSIONS: &[&str] = &["1", "1.0"];
const MAX_REPORTED_VIOLATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFileHeader {
    pub format_version: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl EventFileHeader {
    pub fn new(source: impl Into<String>, class_names: Vec<String>) -> Self {
        EventFileHeader {
            format_version: FORMAT_VERSION.to_string(),
            source: source.into(),
            class_names,
        }
    }
}

/// A broken invariant on an event: which field, which rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Position of a record in the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    /// 1-based line number, counting the header.
    pub line: usize,
    /// Byte offset of the start of the line.
    pub offset: u64,
    /// 0-based index among event records.
    pub event_index: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} (byte offset {}, event #{})",
            self.line, self.offset, self.event_index
        )
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("input has no header line")]
    MissingHeader,
    #[error("bad header: {0}")]
    Header(String),
    #[error("malformed record at {at}: {message}")]
    Malformed { at: Location, message: String },
    #[error("unknown object kind {kind:?} at {at}")]
    UnknownKind { at: Location, kind: String },
    #[error("non-finite value in field `{field}` at {at}")]
    NonFinite { at: Location, field: String },
    #[error("invalid event at {at}: {}", join_violations(.violations))]
    Invalid { at: Location, violations: Vec<Violation> },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl IngestError {
    /// Record-level errors leave the reader usable; the next call moves on
    /// to the following line.
    pub fn is_record_error(&self) -> bool {
        self.location().is_some()
    }

    pub fn location(&self) -> Option<Location> {
        match self {
            IngestError::Malformed { at, .. }
            | IngestError::UnknownKind { at, .. }
            | IngestError::NonFinite { at, .. }
            | IngestError::Invalid { at, .. } => Some(*at),
            _ => None,
        }
    }
}

/// Checks every event invariant and lists what is broken.
pub fn validate_event(event: &Event) -> Vec<Violation> {
    let mut out = Vec::new();
    if event.id.is_empty() {
        out.push(Violation::new("id", "non-empty"));
    }
    let mut met_entries = 0usize;
    for (i, obj) in event.objects.iter().enumerate() {
        if obj.kind == ObjectKind::Met {
            met_entries += 1;
            continue;
        }
        check_object(&format!("objects[{i}]"), obj, &mut out);
    }
    if event.met.kind != ObjectKind::Met {
        out.push(Violation::new("met.kind", "kind = met"));
    }
    check_object("met", &event.met, &mut out);
    if met_entries > 0 {
        out.push(Violation::new("met", "duplicate MET"));
    }
    out
}

fn check_object(field: &str, obj: &PhysicsObject, out: &mut Vec<Violation>) {
    let values = [("pt", obj.pt), ("eta", obj.eta), ("phi", obj.phi), ("mass", obj.mass)];
    for (name, v) in values {
        if !v.is_finite() {
            out.push(Violation::new(format!("{field}.{name}"), "finite"));
        }
    }
    if obj.pt < 0.0 {
        out.push(Violation::new(format!("{field}.pt"), "pT ≥ 0"));
    }
    if obj.phi.is_finite() && !(-PI..=PI).contains(&obj.phi) {
        out.push(Violation::new(format!("{field}.phi"), "phi ∈ [−π, π]"));
    }
    if obj.mass < 0.0 {
        out.push(Violation::new(format!("{field}.mass"), "mass ≥ 0"));
    }
    if let Some(b) = obj.btag {
        if !obj.kind.is_jet() {
            out.push(Violation::new(format!("{field}.btag"), "btag only on jets"));
        } else if !(0.0..=1.0).contains(&b) {
            out.push(Violation::new(format!("{field}.btag"), "btag ∈ [0, 1]"));
        }
    }
}

/// Counters a reader accumulates while streaming.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReaderStats {
    pub records: usize,
    pub unknown_fields: usize,
}

/// Lazily parses events from a buffered reader.
pub struct EventReader<R> {
    reader: R,
    header: EventFileHeader,
    buf: String,
    line_no: usize,
    offset: u64,
    event_index: usize,
    stats: ReaderStats,
    finished: bool,
}

/// Opens an event stream: reads and checks the header, then yields events
/// in file order.
pub fn parse_events<R: Read>(reader: R) -> Result<EventReader<BufReader<R>>, IngestError> {
    EventReader::new(BufReader::new(reader))
}

impl<R: BufRead> EventReader<R> {
    pub fn new(mut reader: R) -> Result<Self, IngestError> {
        let mut buf = String::new();
        let mut line_no = 0;
        let mut offset = 0u64;
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf)?;
            if n == 0 {
                return Err(IngestError::MissingHeader);
            }
            line_no += 1;
            offset += n as u64;
            if !buf.trim().is_empty() {
                break;
            }
        }
        let header = parse_header(buf.trim())?;
        Ok(EventReader {
            reader,
            header,
            buf,
            line_no,
            offset,
            event_index: 0,
            stats: ReaderStats::default(),
            finished: false,
        })
    }

    pub fn header(&self) -> &EventFileHeader {
        &self.header
    }

    pub fn stats(&self) -> &ReaderStats {
        &self.stats
    }
}

fn parse_header(line: &str) -> Result<EventFileHeader, IngestError> {
    let value: Value = serde_json::from_str(line).map_err(|e| IngestError::Header(e.to_string()))?;
    if value.get("format_version").is_none() {
        return Err(IngestError::Header("first line has no `format_version` key".into()));
    }
    let header: EventFileHeader = serde_json::from_value(value).map_err(|e| IngestError::Header(e.to_string()))?;
    if !SUPPORTED_VERSIONS.contains(&header.format_version.as_str()) {
        return Err(IngestError::Header(format!(
            "unsupported format_version {:?}",
            header.format_version
        )));
    }
    Ok(header)
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            self.buf.clear();
            let n = match self.reader.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(e) => {
                    self.finished = true;
                    return Some(Err(e.into()));
                }
            };
            if n == 0 {
                self.finished = true;
                return None;
            }
            let at = Location {
                line: self.line_no + 1,
                offset: self.offset,
                event_index: self.event_index,
            };
            self.line_no += 1;
            self.offset += n as u64;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            self.event_index += 1;
            self.stats.records += 1;
            let mut unknown = 0;
            let result = decode_event(line, at, &self.header, &mut unknown);
            self.stats.unknown_fields += unknown;
            return Some(result);
        }
    }
}

fn decode_event(line: &str, at: Location, header: &EventFileHeader, unknown: &mut usize) -> Result<Event, IngestError> {
    let value: Value = serde_json::from_str(line).map_err(|e| {
        let message = e.to_string();
        if message.contains("out of range") {
            IngestError::NonFinite {
                at,
                field: "<number>".into(),
            }
        } else {
            IngestError::Malformed { at, message }
        }
    })?;
    let Value::Object(map) = value else {
        return Err(malformed(at, "record is not a JSON object"));
    };

    let mut id = None;
    let mut objects = Vec::new();
    let mut met = PhysicsObject::met(0.0, 0.0);
    let mut truth_class = None;
    for (key, v) in &map {
        match key.as_str() {
            "id" => id = Some(decode_id(v, at)?),
            "objects" => {
                let Value::Array(items) = v else {
                    return Err(malformed(at, "`objects` must be an array"));
                };
                for (i, item) in items.iter().enumerate() {
                    objects.push(decode_object(item, &format!("objects[{i}]"), at, unknown)?);
                }
            }
            "met" => met = decode_met(v, at, unknown)?,
            "class" => {
                let c = v
                    .as_u64()
                    .and_then(|c| u32::try_from(c).ok())
                    .ok_or_else(|| malformed(at, "`class` must be a non-negative integer"))?;
                truth_class = Some(c);
            }
            _ => *unknown += 1,
        }
    }
    let id = id.ok_or_else(|| malformed(at, "missing `id`"))?;
    let event = Event {
        id,
        objects,
        met,
        truth_class,
    };

    let mut violations = validate_event(&event);
    if let Some(c) = event.truth_class {
        if c as usize >= header.class_names.len() {
            violations.push(Violation::new("class", "class index within header class_names"));
        }
    }
    if violations.is_empty() {
        Ok(event)
    } else {
        Err(IngestError::Invalid { at, violations })
    }
}

fn malformed(at: Location, message: &str) -> IngestError {
    IngestError::Malformed {
        at,
        message: message.to_string(),
    }
}

fn decode_id(v: &Value, at: Location) -> Result<String, IngestError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) if n.is_u64() || n.is_i64() => Ok(n.to_string()),
        _ => Err(malformed(at, "`id` must be a string or an integer")),
    }
}

fn decode_number(map: &Map<String, Value>, key: &str, path: &str, at: Location) -> Result<Option<f64>, IngestError> {
    match map.get(key) {
        None => Ok(None),
        Some(Value::Number(n)) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            if x.is_finite() {
                Ok(Some(x))
            } else {
                Err(IngestError::NonFinite {
                    at,
                    field: format!("{path}.{key}"),
                })
            }
        }
        Some(Value::String(s)) if is_non_finite_literal(s) => Err(IngestError::NonFinite {
            at,
            field: format!("{path}.{key}"),
        }),
        Some(_) => Err(malformed(at, &format!("`{path}.{key}` must be a number"))),
    }
}

fn is_non_finite_literal(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "nan" | "inf" | "+inf" | "-inf" | "infinity" | "+infinity" | "-infinity"
    )
}

fn require_number(map: &Map<String, Value>, key: &str, path: &str, at: Location) -> Result<f64, IngestError> {
    decode_number(map, key, path, at)?.ok_or_else(|| malformed(at, &format!("missing `{path}.{key}`")))
}

fn decode_object(v: &Value, path: &str, at: Location, unknown: &mut usize) -> Result<PhysicsObject, IngestError> {
    let Value::Object(map) = v else {
        return Err(malformed(at, &format!("`{path}` must be an object")));
    };
    let kind_name = map
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(at, &format!("missing `{path}.kind`")))?;
    let kind = ObjectKind::parse(kind_name).ok_or_else(|| IngestError::UnknownKind {
        at,
        kind: kind_name.to_string(),
    })?;
    let pt = require_number(map, "pt", path, at)?;
    let eta = decode_number(map, "eta", path, at)?;
    let phi = require_number(map, "phi", path, at)?;
    let eta = match (kind, eta) {
        (_, Some(e)) => e,
        (ObjectKind::Met, None) => 0.0,
        (_, None) => return Err(malformed(at, &format!("missing `{path}.eta`"))),
    };
    let mass = decode_number(map, "mass", path, at)?.unwrap_or_else(|| kind.default_mass());
    let btag = decode_number(map, "btag", path, at)?;
    let quality = match map.get("quality") {
        None => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(malformed(at, &format!("`{path}.quality` must be a boolean"))),
    };
    const KNOWN: &[&str] = &["kind", "pt", "eta", "phi", "mass", "btag", "quality"];
    *unknown += map.keys().filter(|k| !KNOWN.contains(&k.as_str())).count();
    Ok(PhysicsObject {
        kind,
        pt,
        eta,
        phi,
        mass,
        btag,
        quality,
    })
}

fn decode_met(v: &Value, at: Location, unknown: &mut usize) -> Result<PhysicsObject, IngestError> {
    let Value::Object(map) = v else {
        return Err(malformed(at, "`met` must be an object"));
    };
    let pt = require_number(map, "pt", "met", at)?;
    let phi = require_number(map, "phi", "met", at)?;
    *unknown += map.keys().filter(|k| !matches!(k.as_str(), "pt" | "phi")).count();
    Ok(PhysicsObject::met(pt, phi))
}

fn encode_object(obj: &PhysicsObject) -> Value {
    let mut map = Map::new();
    map.insert("kind".into(), Value::from(obj.kind.as_str()));
    map.insert("pt".into(), Value::from(obj.pt));
    map.insert("eta".into(), Value::from(obj.eta));
    map.insert("phi".into(), Value::from(obj.phi));
    map.insert("mass".into(), Value::from(obj.mass));
    if let Some(b) = obj.btag {
        map.insert("btag".into(), Value::from(b));
    }
    if !obj.quality {
        map.insert("quality".into(), Value::from(false));
    }
    Value::Object(map)
}

/// JSON value of one event record, keys in a fixed order.
pub fn encode_event(event: &Event) -> Value {
    let mut map = Map::new();
    map.insert("id".into(), Value::from(event.id.as_str()));
    map.insert(
        "objects".into(),
        Value::Array(event.objects.iter().map(encode_object).collect()),
    );
    let mut met = Map::new();
    met.insert("pt".into(), Value::from(event.met.pt));
    met.insert("phi".into(), Value::from(event.met.phi));
    map.insert("met".into(), Value::Object(met));
    if let Some(c) = event.truth_class {
        map.insert("class".into(), Value::from(c));
    }
    Value::Object(map)
}

/// Writes event files line by line.
pub struct EventWriter<W: Write> {
    out: W,
}

impl<W: Write> EventWriter<W> {
    pub fn new(mut out: W, header: &EventFileHeader) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(EventWriter { out })
    }

    pub fn write(&mut self, event: &Event) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &encode_event(event))?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Serializes a whole event sequence to a string.
pub fn to_ndjson_string(header: &EventFileHeader, events: &[Event]) -> String {
    let mut w = EventWriter::new(Vec::new(), header).expect("writing to memory");
    for e in events {
        w.write(e).expect("writing to memory");
    }
    String::from_utf8(w.into_inner()).expect("JSON is UTF-8")
}

/// Machine-readable validation summary for a whole file.
#[derive(Clone, Debug, Default, Serialize)]
pub struct IngestReport {
    pub source: String,
    pub class_names: Vec<String>,
    pub parsed: usize,
    pub rejected: usize,
    pub unknown_field_warnings: usize,
    pub duplicate_ids: usize,
    pub class_counts: Vec<usize>,
    /// First rejected records, formatted.
    pub first_violations: Vec<String>,
}

/// Reads a whole file, collecting valid events and a report. Record-level
/// problems are counted; only I/O or header failures abort.
pub fn read_all<R: Read>(reader: R) -> Result<(EventFileHeader, Vec<Event>, IngestReport), IngestError> {
    let mut events = Vec::new();
    let (header, report) = scan(reader, |e| events.push(e))?;
    Ok((header, events, report))
}

/// Like [`read_all`] but keeps nothing but the report.
pub fn summarize<R: Read>(reader: R) -> Result<IngestReport, IngestError> {
    scan(reader, |_| {}).map(|(_, r)| r)
}

fn scan<R: Read>(reader: R, mut sink: impl FnMut(Event)) -> Result<(EventFileHeader, IngestReport), IngestError> {
    let mut events = parse_events(reader)?;
    let header = events.header().clone();
    let mut report = IngestReport {
        source: header.source.clone(),
        class_names: header.class_names.clone(),
        class_counts: vec![0; header.class_names.len()],
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for item in events.by_ref() {
        match item {
            Ok(event) => {
                if !seen.insert(event.id.clone()) {
                    report.duplicate_ids += 1;
                    report.rejected += 1;
                    if report.first_violations.len() < MAX_REPORTED_VIOLATIONS {
                        report.first_violations.push(format!(
                            "event #{}: duplicate id {:?}",
                            report.parsed + report.rejected - 1,
                            event.id
                        ));
                    }
                    continue;
                }
                report.parsed += 1;
                if let Some(c) = event.truth_class {
                    report.class_counts[c as usize] += 1;
                }
                sink(event);
            }
            Err(e) if e.is_record_error() => {
                report.rejected += 1;
                if report.first_violations.len() < MAX_REPORTED_VIOLATIONS {
                    report.first_violations.push(e.to_string());
                }
            }
            Err(e) => return Err(e),
        }
    }
    report.unknown_field_warnings = events.stats().unknown_fields;
    Ok((header, report))
}
