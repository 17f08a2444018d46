//! Flow labeling from an attack log.
//!
//! Two schemes are produced side by side:
//!
//! * **IT** (injection timing): a flow gets attack `A` when its
//!   `[start, end]` interval intersects `A`'s window. Touching a boundary
//!   counts.
//! * **NST** (network security tools): additionally, one of the flow's
//!   endpoints must be the attacker: its IP for IP flows, its MAC for ARP
//!   flows.
//!
//! When several windows qualify, the entry with the latest start wins (ties go
//! to the entry that appears first in the file) and the flow is counted as
//! ambiguous.

use std::fs::File;
use std::io::{self, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::flow::{Endpoint, FlowProtocol, FlowRecord};
use crate::packet::MacAddr;

pub const NORMAL: &str = "normal";

pub const ATTACK_LOG_COLUMNS: [&str; 6] = ["attack", "startStamp", "endStamp", "attackerIP", "attackerMAC", "description"];

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("cannot open {path}")]
    Open { path: PathBuf, source: io::Error },
    #[error("attack log")]
    Csv(#[from] csv::Error),
    #[error("attack log header must be `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("attack log row {row}: {reason}")]
    Row { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackLogEntry {
    pub attack: String,
    pub start_ts: f64,
    pub end_ts: f64,
    pub attacker_ip: Ipv4Addr,
    pub attacker_mac: MacAddr,
    pub extra: String,
    /// Position in the source file, 0-based; used for tie-breaking.
    pub order: usize,
}

impl AttackLogEntry {
    fn overlaps(&self, start: f64, end: f64) -> bool {
        start <= self.end_ts && end >= self.start_ts
    }

    fn touches(&self, flow: &FlowRecord) -> bool {
        let attacker = match flow.key.protocol {
            FlowProtocol::Arp => Endpoint::Mac(self.attacker_mac),
            _ => Endpoint::Ip(self.attacker_ip),
        };
        flow.key.sender == attacker || flow.key.receiver == attacker
    }
}

/// Parsed attack log, sorted by start time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackLog {
    pub entries: Vec<AttackLogEntry>,
    /// File-order indices of entry pairs whose windows overlap.
    pub overlaps: Vec<(usize, usize)>,
}

impl AttackLog {
    pub fn new(mut entries: Vec<AttackLogEntry>) -> Self {
        entries.sort_by(|a, b| a.start_ts.total_cmp(&b.start_ts).then(a.order.cmp(&b.order)));
        let mut overlaps = Vec::new();
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if b.start_ts > a.end_ts {
                    continue;
                }
                log::warn!(
                    "attack log entries {} ({}) and {} ({}) overlap",
                    a.order + 1,
                    a.attack,
                    b.order + 1,
                    b.attack
                );
                overlaps.push((a.order, b.order));
            }
        }
        AttackLog { entries, overlaps }
    }
}

fn parse_timestamp(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn read_attack_log<R: Read>(reader: R) -> Result<AttackLog, LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(AttackLog::default());
    }
    let ok = headers.len() == ATTACK_LOG_COLUMNS.len()
        && headers
            .iter()
            .zip(ATTACK_LOG_COLUMNS)
            .all(|(h, want)| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(want));
    if !ok {
        return Err(LabelError::Header {
            expected: ATTACK_LOG_COLUMNS.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut entries = Vec::new();
    for (order, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = order + 2;
        let bad = |reason: String| LabelError::Row { row, reason };
        let start = parse_timestamp(&rec[1]).ok_or_else(|| bad(format!("unparseable start time `{}`", &rec[1])))?;
        let end = parse_timestamp(&rec[2]).ok_or_else(|| bad(format!("unparseable end time `{}`", &rec[2])))?;
        if end < start {
            return Err(bad(format!("end time {end} precedes start time {start}")));
        }
        let attacker_ip = rec[3]
            .parse::<Ipv4Addr>()
            .map_err(|_| bad(format!("invalid attacker IP `{}`", &rec[3])))?;
        let attacker_mac = rec[4]
            .parse::<MacAddr>()
            .map_err(|_| bad(format!("invalid attacker MAC `{}`", &rec[4])))?;
        let attack = rec[0].to_ascii_lowercase();
        if attack.is_empty() || attack == NORMAL {
            return Err(bad(format!("invalid attack name `{}`", &rec[0])));
        }
        entries.push(AttackLogEntry {
            attack,
            start_ts: start,
            end_ts: end,
            attacker_ip,
            attacker_mac,
            extra: rec[5].to_string(),
            order,
        });
    }
    Ok(AttackLog::new(entries))
}

pub fn parse_attack_log(path: impl AsRef<Path>) -> Result<AttackLog, LabelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LabelError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    read_attack_log(io::BufReader::new(file))
}

/// Write entries in the order given. Timestamps keep six decimals.
pub fn write_attack_log<W: Write>(writer: W, entries: &[AttackLogEntry]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ATTACK_LOG_COLUMNS)?;
    for e in entries {
        w.write_record([
            e.attack.clone(),
            format!("{:.6}", e.start_ts),
            format!("{:.6}", e.end_ts),
            e.attacker_ip.to_string(),
            e.attacker_mac.to_string(),
            e.extra.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The four label columns of a flow.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet {
    pub it_b: u8,
    pub it_m: String,
    pub nst_b: u8,
    pub nst_m: String,
}

impl LabelSet {
    pub fn normal() -> Self {
        LabelSet {
            it_b: 0,
            it_m: NORMAL.to_string(),
            nst_b: 0,
            nst_m: NORMAL.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let consistent = |b: u8, m: &str| (b == 0) == (m == NORMAL) && b <= 1;
        if !consistent(self.it_b, &self.it_m) {
            return Err(format!("IT labels disagree: {} / `{}`", self.it_b, self.it_m));
        }
        if !consistent(self.nst_b, &self.nst_m) {
            return Err(format!("NST labels disagree: {} / `{}`", self.nst_b, self.nst_m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelReport {
    pub flows: usize,
    pub it_attack: usize,
    pub nst_attack: usize,
    /// Flows whose interval intersects more than one attack window.
    pub ambiguous: usize,
}

/// Latest-starting entry among `candidates`; earliest file order on ties.
fn pick<'a>(candidates: impl Iterator<Item = &'a AttackLogEntry>) -> Option<&'a AttackLogEntry> {
    candidates.reduce(|best, e| {
        if e.start_ts > best.start_ts || (e.start_ts == best.start_ts && e.order < best.order) {
            e
        } else {
            best
        }
    })
}

/// Labels for a single flow, plus whether more than one window overlapped.
pub fn label_flow(flow: &FlowRecord, log: &AttackLog) -> (LabelSet, bool) {
    let overlapping: Vec<&AttackLogEntry> = log
        .entries
        .iter()
        .filter(|e| e.overlaps(flow.start, flow.end))
        .collect();
    let mut labels = LabelSet::normal();
    if let Some(e) = pick(overlapping.iter().copied()) {
        labels.it_b = 1;
        labels.it_m = e.attack.clone();
    }
    if let Some(e) = pick(overlapping.iter().copied().filter(|e| e.touches(flow))) {
        labels.nst_b = 1;
        labels.nst_m = e.attack.clone();
    }
    (labels, overlapping.len() > 1)
}

/// Attach labels to every flow in place.
pub fn label_flows(flows: &mut [FlowRecord], log: &AttackLog) -> LabelReport {
    let mut report = LabelReport {
        flows: flows.len(),
        ..Default::default()
    };
    for f in flows.iter_mut() {
        let (labels, ambiguous) = label_flow(f, log);
        report.it_attack += usize::from(labels.it_b);
        report.nst_attack += usize::from(labels.nst_b);
        report.ambiguous += usize::from(ambiguous);
        f.labels = Some(labels);
    }
    report
}
