//! Event-log and metadata ingestion.
//!
//! Events are JSON lines with the fixed field order
//! `project_id, actor_id, timestamp, channel[, size_delta]`. Metadata is a
//! CSV table keyed by `project_id` with optional `featured_year`, `watchers`
//! and `final_size` columns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use coordination::analytics::{Channel, Event, ProjectLog};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Wire form of one event.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    project_id: String,
    actor_id: String,
    timestamp: i64,
    channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size_delta: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub project_id: String,
    pub featured_year: Option<i32>,
    pub watchers: Option<u64>,
    pub final_size: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// One log per project, ascending id.
    pub logs: Vec<ProjectLog>,
    pub metadata: BTreeMap<String, ProjectMeta>,
    pub warnings: Vec<String>,
}

impl Corpus {
    /// Featured year per project, for projects in the corpus.
    pub fn featured_labels(&self) -> BTreeMap<String, i32> {
        self.metadata
            .values()
            .filter_map(|m| m.featured_year.map(|y| (m.project_id.clone(), y)))
            .filter(|(id, _)| self.logs.iter().any(|l| l.project_id() == id))
            .collect()
    }

    pub fn event_count(&self) -> usize {
        self.logs.iter().map(|l| l.events().len()).sum()
    }
}

fn parse_line(line: &str, lineno: usize) -> CliResult<Event> {
    let bad = |msg: String| CliError::Data(format!("line {lineno}: {msg}"));
    let rec: EventRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    if rec.project_id.is_empty() || rec.actor_id.is_empty() {
        return Err(bad("empty project_id or actor_id".into()));
    }
    if rec.timestamp < 0 {
        return Err(bad(format!("negative timestamp {}", rec.timestamp)));
    }
    let channel: Channel = rec.channel.parse().map_err(|e: coordination::Error| bad(e.to_string()))?;
    Ok(Event {
        project_id: rec.project_id,
        actor_id: rec.actor_id,
        timestamp: rec.timestamp,
        channel,
        size_delta: rec.size_delta,
    })
}

/// Parses event lines; blank lines are skipped, anything else malformed is
/// an error naming its 1-based line number.
pub fn parse_events<R: BufRead>(reader: R) -> CliResult<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_line(&line, i + 1)?);
    }
    Ok(events)
}

pub fn parse_metadata<R: Read>(reader: R) -> CliResult<BTreeMap<String, ProjectMeta>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<ProjectMeta>() {
        let meta = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("metadata line {line}: {e}"))
        })?;
        if meta.project_id.is_empty() {
            return Err(CliError::Data("metadata row with empty project_id".into()));
        }
        if out.contains_key(&meta.project_id) {
            return Err(CliError::Data(format!(
                "duplicate metadata row for project '{}'",
                meta.project_id
            )));
        }
        out.insert(meta.project_id.clone(), meta);
    }
    Ok(out)
}

/// Groups events into time-sorted project logs and joins metadata.
pub fn build_corpus(events: Vec<Event>, metadata: BTreeMap<String, ProjectMeta>) -> CliResult<Corpus> {
    let mut grouped: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for e in events {
        grouped.entry(e.project_id.clone()).or_default().push(e);
    }
    let mut warnings = Vec::new();
    if grouped.is_empty() {
        warnings.push("event log is empty".to_string());
    }
    for id in metadata.keys().filter(|id| !grouped.contains_key(*id)) {
        warnings.push(format!("metadata for unknown project '{id}' ignored"));
    }
    let logs = grouped
        .into_iter()
        .map(|(id, evs)| {
            let final_size = metadata.get(&id).and_then(|m| m.final_size);
            ProjectLog::new(id, evs, final_size)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus {
        logs,
        metadata,
        warnings,
    })
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn ingest(events_path: &Path, metadata_path: Option<&Path>) -> CliResult<Corpus> {
    let events = parse_events(BufReader::new(open(events_path)?))
        .map_err(|e| CliError::Data(format!("{}: {e}", events_path.display())))?;
    let metadata = match metadata_path {
        Some(p) => parse_metadata(open(p)?)?,
        None => BTreeMap::new(),
    };
    build_corpus(events, metadata)
}

/// Canonical event file: projects by ascending id, events in log order.
pub fn write_events<W: Write>(logs: &[ProjectLog], mut out: W) -> CliResult<()> {
    for log in logs {
        for e in log.events() {
            let rec = EventRecord {
                project_id: e.project_id.clone(),
                actor_id: e.actor_id.clone(),
                timestamp: e.timestamp,
                channel: e.channel.as_str().to_string(),
                size_delta: e.size_delta,
            };
            let line = serde_json::to_string(&rec).map_err(|e| CliError::Data(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Canonical metadata table, ascending id.
pub fn write_metadata<W: Write>(metadata: &BTreeMap<String, ProjectMeta>, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metadata.values() {
        w.serialize(m).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
