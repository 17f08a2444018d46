//! The 54-column flow CSV.
//!
//! Floats are written with six digits after the decimal point (microsecond
//! precision for timestamps); counts and byte extrema as integers. TCP
//! columns are left empty for non-TCP flows and label columns are empty until
//! the flows are labeled.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{DirectionStats, Endpoint, FlowKey, FlowProtocol, FlowRecord, TcpStats};
use crate::label::LabelSet;

pub const FLOW_COLUMNS: [&str; 54] = [
    "sAddress", "rAddress", "protocol",
    "start", "end", "startOffset", "endOffset", "duration",
    "sPackets", "rPackets", "sBytesMax", "rBytesMax", "sBytesMin", "rBytesMin", "sBytesAvg", "rBytesAvg",
    "sLoad", "rLoad", "sPayloadMax", "rPayloadMax", "sPayloadMin", "rPayloadMin", "sPayloadAvg", "rPayloadAvg",
    "sInterPacket", "rInterPacket",
    "sttl", "rttl", "sAckDelayMax", "rAckDelayMax", "sAckDelayMin", "rAckDelayMin", "sAckDelayAvg", "rAckDelayAvg",
    "sAckRate", "rAckRate", "sFinRate", "rFinRate", "sPshRate", "rPshRate", "sRstRate", "rRstRate",
    "sUrgRate", "rUrgRate", "sSynRate", "rSynRate", "sWinTCP", "rWinTCP", "sFragmentRate", "rFragmentRate",
    "IT-B-Label", "IT-M-Label", "NST-B-Label", "NST-M-Label",
];

/// Columns 4..=26: timing and general per-direction features.
pub const GENERAL_COLUMNS: std::ops::Range<usize> = 3..26;
/// Columns 27..=50: TCP header features.
pub const TCP_COLUMNS: std::ops::Range<usize> = 26..50;
/// Columns 51..=54.
pub const LABEL_COLUMNS: std::ops::Range<usize> = 50..54;

/// Header spellings seen in externally produced flow files.
const ALIASES: &[(&str, &str)] = &[
    ("sMaxAckDelay", "sAckDelayMax"),
    ("rMaxAckDelay", "rAckDelayMax"),
    ("sMinAckDelay", "sAckDelayMin"),
    ("rMinAckDelay", "rAckDelayMin"),
    ("sAvgAckDelay", "sAckDelayAvg"),
    ("rAvgAckDelay", "rAckDelayAvg"),
    ("sByteAvg", "sBytesAvg"),
    ("rByteAvg", "rBytesAvg"),
    ("sByteMax", "sBytesMax"),
    ("rByteMax", "rBytesMax"),
    ("sByteMin", "sBytesMin"),
    ("rByteMin", "rBytesMin"),
    ("sTTL", "sttl"),
    ("rTTL", "rttl"),
    ("sWin", "sWinTCP"),
    ("rWin", "rWinTCP"),
    ("ITBLabel", "IT-B-Label"),
    ("ITMLabel", "IT-M-Label"),
    ("NSTBLabel", "NST-B-Label"),
    ("NSTMLabel", "NST-M-Label"),
];

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Map a header cell to its canonical column name. Matching ignores case,
/// `-`, `_` and spaces, then falls back to the alias table.
pub fn canonical_column(name: &str) -> Option<&'static str> {
    let key = squash(name.trim().trim_start_matches('\u{feff}'));
    FLOW_COLUMNS
        .iter()
        .find(|c| squash(c) == key)
        .copied()
        .or_else(|| {
            ALIASES
                .iter()
                .find(|(alias, _)| squash(alias) == key)
                .map(|(_, canon)| *canon)
        })
}

#[derive(Debug, thiserror::Error)]
pub enum FlowCsvError {
    #[error("cannot write {path} (partial file left: {partial})")]
    Write {
        path: PathBuf,
        partial: bool,
        source: io::Error,
    },
    #[error("cannot read flows")]
    Read(#[from] csv::Error),
    #[error("cannot open {path}")]
    Open { path: PathBuf, source: io::Error },
    #[error("unknown column(s) in flow file: {0}")]
    UnknownColumns(String),
    #[error("flow file is missing column(s): {0}")]
    MissingColumns(String),
    #[error("row {row}, column {column}: {reason}")]
    Cell {
        row: usize,
        column: &'static str,
        reason: String,
    },
}

fn float(v: f64) -> String {
    format!("{v:.6}")
}

fn row_cells(f: &FlowRecord) -> Vec<String> {
    let (s, r) = (&f.sender, &f.receiver);
    let mut cells = Vec::with_capacity(54);
    cells.push(f.key.sender.to_string());
    cells.push(f.key.receiver.to_string());
    cells.push(f.key.protocol.to_string());
    for v in [f.start, f.end, f.start_offset, f.end_offset, f.duration] {
        cells.push(float(v));
    }
    for v in [s.packets, r.packets, s.bytes_max, r.bytes_max, s.bytes_min, r.bytes_min] {
        cells.push(v.to_string());
    }
    for v in [s.bytes_avg, r.bytes_avg, s.load, r.load] {
        cells.push(float(v));
    }
    for v in [s.payload_max, r.payload_max, s.payload_min, r.payload_min] {
        cells.push(v.to_string());
    }
    for v in [s.payload_avg, r.payload_avg, s.inter_packet, r.inter_packet] {
        cells.push(float(v));
    }
    match &f.tcp {
        Some([ts, tr]) => {
            for (a, b) in tcp_pairs(ts, tr) {
                cells.push(float(a));
                cells.push(float(b));
            }
        }
        None => cells.extend(std::iter::repeat_n(String::new(), TCP_COLUMNS.len())),
    }
    match &f.labels {
        Some(l) => {
            cells.push(l.it_b.to_string());
            cells.push(l.it_m.clone());
            cells.push(l.nst_b.to_string());
            cells.push(l.nst_m.clone());
        }
        None => cells.extend(std::iter::repeat_n(String::new(), LABEL_COLUMNS.len())),
    }
    cells
}

fn tcp_pairs(s: &TcpStats, r: &TcpStats) -> [(f64, f64); 12] {
    [
        (s.ttl, r.ttl),
        (s.ack_delay_max, r.ack_delay_max),
        (s.ack_delay_min, r.ack_delay_min),
        (s.ack_delay_avg, r.ack_delay_avg),
        (s.ack_rate, r.ack_rate),
        (s.fin_rate, r.fin_rate),
        (s.psh_rate, r.psh_rate),
        (s.rst_rate, r.rst_rate),
        (s.urg_rate, r.urg_rate),
        (s.syn_rate, r.syn_rate),
        (s.win_tcp, r.win_tcp),
        (s.fragment_rate, r.fragment_rate),
    ]
}

/// Write header plus one row per flow; returns the number of rows.
pub fn write_flows<'a, W, I>(writer: W, flows: I) -> Result<usize, csv::Error>
where
    W: Write,
    I: IntoIterator<Item = &'a FlowRecord>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FLOW_COLUMNS)?;
    let mut rows = 0;
    for f in flows {
        w.write_record(row_cells(f))?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

pub fn write_flow_csv<'a, I>(flows: I, path: impl AsRef<Path>) -> Result<usize, FlowCsvError>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| FlowCsvError::Write {
        path: path.to_path_buf(),
        partial: false,
        source,
    })?;
    write_flows(BufWriter::new(file), flows).map_err(|e| FlowCsvError::Write {
        path: path.to_path_buf(),
        partial: true,
        source: io::Error::other(e),
    })
}

struct Cells<'r> {
    record: &'r csv::StringRecord,
    index: &'r [usize; 54],
    row: usize,
}

impl Cells<'_> {
    fn raw(&self, col: usize) -> &str {
        self.record.get(self.index[col]).unwrap_or("").trim()
    }

    fn err(&self, col: usize, reason: impl Into<String>) -> FlowCsvError {
        FlowCsvError::Cell {
            row: self.row,
            column: FLOW_COLUMNS[col],
            reason: reason.into(),
        }
    }

    fn float(&self, col: usize) -> Result<f64, FlowCsvError> {
        let s = self.raw(col);
        s.parse::<f64>().map_err(|_| self.err(col, format!("`{s}` is not a number")))
    }

    fn count(&self, col: usize) -> Result<u64, FlowCsvError> {
        let s = self.raw(col);
        if let Ok(v) = s.parse::<u64>() {
            return Ok(v);
        }
        // Some producers write counts as floats ("60.0").
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as u64),
            _ => Err(self.err(col, format!("`{s}` is not a non-negative integer"))),
        }
    }

    fn direction_pair(&self) -> Result<(DirectionStats, DirectionStats), FlowCsvError> {
        let mut s = DirectionStats::default();
        let mut r = DirectionStats::default();
        s.packets = self.count(8)?;
        r.packets = self.count(9)?;
        s.bytes_max = self.count(10)?;
        r.bytes_max = self.count(11)?;
        s.bytes_min = self.count(12)?;
        r.bytes_min = self.count(13)?;
        s.bytes_avg = self.float(14)?;
        r.bytes_avg = self.float(15)?;
        s.load = self.float(16)?;
        r.load = self.float(17)?;
        s.payload_max = self.count(18)?;
        r.payload_max = self.count(19)?;
        s.payload_min = self.count(20)?;
        r.payload_min = self.count(21)?;
        s.payload_avg = self.float(22)?;
        r.payload_avg = self.float(23)?;
        s.inter_packet = self.float(24)?;
        r.inter_packet = self.float(25)?;
        Ok((s, r))
    }

    fn tcp(&self) -> Result<Option<[TcpStats; 2]>, FlowCsvError> {
        let empty = TCP_COLUMNS.clone().all(|c| self.raw(c).is_empty());
        if empty {
            return Ok(None);
        }
        let mut v = [0.0; 24];
        for (i, c) in TCP_COLUMNS.enumerate() {
            v[i] = self.float(c)?;
        }
        let side = |o: usize| TcpStats {
            ttl: v[o],
            ack_delay_max: v[2 + o],
            ack_delay_min: v[4 + o],
            ack_delay_avg: v[6 + o],
            ack_rate: v[8 + o],
            fin_rate: v[10 + o],
            psh_rate: v[12 + o],
            rst_rate: v[14 + o],
            urg_rate: v[16 + o],
            syn_rate: v[18 + o],
            win_tcp: v[20 + o],
            fragment_rate: v[22 + o],
        };
        Ok(Some([side(0), side(1)]))
    }

    fn binary(&self, col: usize) -> Result<u8, FlowCsvError> {
        match self.raw(col) {
            "0" | "0.0" => Ok(0),
            "1" | "1.0" => Ok(1),
            other => Err(self.err(col, format!("`{other}` is not 0 or 1"))),
        }
    }

    fn labels(&self) -> Result<Option<LabelSet>, FlowCsvError> {
        if LABEL_COLUMNS.clone().all(|c| self.raw(c).is_empty()) {
            return Ok(None);
        }
        let set = LabelSet {
            it_b: self.binary(50)?,
            it_m: self.raw(51).to_string(),
            nst_b: self.binary(52)?,
            nst_m: self.raw(53).to_string(),
        };
        set.validate().map_err(|e| self.err(50, e))?;
        Ok(Some(set))
    }

    fn record(&self) -> Result<FlowRecord, FlowCsvError> {
        let endpoint = |col: usize| {
            self.raw(col)
                .parse::<Endpoint>()
                .map_err(|e| self.err(col, e.to_string()))
        };
        let key = FlowKey {
            sender: endpoint(0)?,
            receiver: endpoint(1)?,
            protocol: self.raw(2).parse::<FlowProtocol>().map_err(|e| self.err(2, e))?,
        };
        let (sender, receiver) = self.direction_pair()?;
        Ok(FlowRecord {
            key,
            start: self.float(3)?,
            end: self.float(4)?,
            start_offset: self.float(5)?,
            end_offset: self.float(6)?,
            duration: self.float(7)?,
            sender,
            receiver,
            tcp: self.tcp()?,
            labels: self.labels()?,
        })
    }
}

/// Resolve a header row against the schema. Label columns may be absent.
fn column_index(headers: &csv::StringRecord) -> Result<[usize; 54], FlowCsvError> {
    let mut index = [usize::MAX; 54];
    let mut unknown = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match canonical_column(h).and_then(|c| FLOW_COLUMNS.iter().position(|x| *x == c)) {
            Some(pos) => index[pos] = i,
            None => unknown.push(h.to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(FlowCsvError::UnknownColumns(unknown.join(", ")));
    }
    let missing: Vec<&str> = (0..50)
        .filter(|&c| index[c] == usize::MAX)
        .map(|c| FLOW_COLUMNS[c])
        .collect();
    if !missing.is_empty() {
        return Err(FlowCsvError::MissingColumns(missing.join(", ")));
    }
    Ok(index)
}

pub fn read_flows<R: Read>(reader: R) -> Result<Vec<FlowRecord>, FlowCsvError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let index = column_index(&headers)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cells = Cells {
            record: &rec,
            index: &index,
            // 1-based, counting the header as row 1
            row: i + 2,
        };
        out.push(cells.record()?);
    }
    Ok(out)
}

pub fn read_flow_csv(path: impl AsRef<Path>) -> Result<Vec<FlowRecord>, FlowCsvError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| FlowCsvError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    read_flows(io::BufReader::new(file))
}
