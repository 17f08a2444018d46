//! Classic libpcap file format, both byte orders, micro- and nanosecond
//! timestamps. PCAPNG is not handled.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::{decode_packet, DecodedPacket};

pub const LINKTYPE_ETHERNET: u32 = 1;

const MAGIC_MICRO: u32 = 0xa1b2_c3d4;
const MAGIC_NANO: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PcapError {
    #[error("cannot read {path}")]
    Open { path: PathBuf, source: io::Error },
    #[error("I/O error while reading capture")]
    Io(#[from] io::Error),
    #[error("not a classic pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("truncated pcap global header ({0} of 24 bytes)")]
    ShortHeader(usize),
    #[error("unsupported link type {0}; only Ethernet (1) is decoded")]
    LinkType(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsResolution {
    Micro,
    Nano,
}

impl TsResolution {
    fn units_per_second(self) -> f64 {
        match self {
            TsResolution::Micro => 1e6,
            TsResolution::Nano => 1e9,
        }
    }
}

/// Combine the per-record seconds and sub-second fields into float seconds.
pub fn timestamp_from_parts(ts_sec: u32, ts_subsec: u32, resolution: TsResolution) -> f64 {
    f64::from(ts_sec) + f64::from(ts_subsec) / resolution.units_per_second()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub endianness: Endianness,
    pub resolution: TsResolution,
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub linktype: u32,
}

impl PcapHeader {
    pub fn ethernet(endianness: Endianness, resolution: TsResolution) -> Self {
        PcapHeader {
            endianness,
            resolution,
            version_major: 2,
            version_minor: 4,
            snaplen: 65535,
            linktype: LINKTYPE_ETHERNET,
        }
    }

    fn u16(&self, b: [u8; 2]) -> u16 {
        match self.endianness {
            Endianness::Little => u16::from_le_bytes(b),
            Endianness::Big => u16::from_be_bytes(b),
        }
    }

    fn u32(&self, b: &[u8]) -> u32 {
        let b = [b[0], b[1], b[2], b[3]];
        match self.endianness {
            Endianness::Little => u32::from_le_bytes(b),
            Endianness::Big => u32::from_be_bytes(b),
        }
    }

    fn put_u16(&self, v: u16) -> [u8; 2] {
        match self.endianness {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        }
    }

    fn put_u32(&self, v: u32) -> [u8; 4] {
        match self.endianness {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        }
    }

    fn parse(bytes: &[u8; GLOBAL_HEADER_LEN]) -> Result<Self, PcapError> {
        let le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let be = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let (endianness, resolution) = match (le, be) {
            (MAGIC_MICRO, _) => (Endianness::Little, TsResolution::Micro),
            (MAGIC_NANO, _) => (Endianness::Little, TsResolution::Nano),
            (_, MAGIC_MICRO) => (Endianness::Big, TsResolution::Micro),
            (_, MAGIC_NANO) => (Endianness::Big, TsResolution::Nano),
            _ => return Err(PcapError::BadMagic(be)),
        };
        let mut h = PcapHeader::ethernet(endianness, resolution);
        h.version_major = h.u16([bytes[4], bytes[5]]);
        h.version_minor = h.u16([bytes[6], bytes[7]]);
        h.snaplen = h.u32(&bytes[16..20]);
        h.linktype = h.u32(&bytes[20..24]);
        Ok(h)
    }

    pub fn to_bytes(&self) -> [u8; GLOBAL_HEADER_LEN] {
        let magic = match self.resolution {
            TsResolution::Micro => MAGIC_MICRO,
            TsResolution::Nano => MAGIC_NANO,
        };
        let mut out = [0u8; GLOBAL_HEADER_LEN];
        out[0..4].copy_from_slice(&self.put_u32(magic));
        out[4..6].copy_from_slice(&self.put_u16(self.version_major));
        out[6..8].copy_from_slice(&self.put_u16(self.version_minor));
        // thiszone and sigfigs stay zero
        out[16..20].copy_from_slice(&self.put_u32(self.snaplen));
        out[20..24].copy_from_slice(&self.put_u32(self.linktype));
        out
    }
}

/// One raw record as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_subsec: u32,
    pub orig_len: u32,
    pub data: Vec<u8>,
}

/// Counters for records that were dropped or degraded while reading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub records: u64,
    pub skipped_records: u64,
    pub truncated_tail: bool,
    pub malformed_frames: u64,
}

impl ReadStats {
    pub fn warnings(&self) -> u64 {
        self.skipped_records + self.malformed_frames
    }
}

/// Fill `buf` as far as the reader allows; returns the byte count read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    stats: ReadStats,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut buf)?;
        if n < 4 {
            return Err(PcapError::ShortHeader(n));
        }
        // Check the magic before complaining about length so that
        // arbitrary short files report the more useful error.
        let header = PcapHeader::parse(&buf)?;
        if n < GLOBAL_HEADER_LEN {
            return Err(PcapError::ShortHeader(n));
        }
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::LinkType(header.linktype));
        }
        Ok(PcapReader {
            inner,
            header,
            stats: ReadStats::default(),
            done: false,
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn stats(&self) -> &ReadStats {
        &self.stats
    }

    pub fn timestamp(&self, rec: &PcapRecord) -> f64 {
        timestamp_from_parts(rec.ts_sec, rec.ts_subsec, self.header.resolution)
    }

    /// Next well-formed record, or `None` at end of file. Oversized and
    /// truncated records are counted in [`ReadStats`] and skipped.
    pub fn next_record(&mut self) -> Result<Option<PcapRecord>, PcapError> {
        loop {
            if self.done {
                return Ok(None);
            }
            let mut hdr = [0u8; RECORD_HEADER_LEN];
            let n = read_full(&mut self.inner, &mut hdr)?;
            if n == 0 {
                self.done = true;
                return Ok(None);
            }
            if n < RECORD_HEADER_LEN {
                self.truncated();
                return Ok(None);
            }
            let h = &self.header;
            let ts_sec = h.u32(&hdr[0..4]);
            let ts_subsec = h.u32(&hdr[4..8]);
            let caplen = h.u32(&hdr[8..12]);
            let orig_len = h.u32(&hdr[12..16]);

            let mut data = Vec::new();
            let got = (&mut self.inner).take(u64::from(caplen)).read_to_end(&mut data)?;
            if got < caplen as usize {
                self.truncated();
                return Ok(None);
            }
            if self.header.snaplen != 0 && caplen > self.header.snaplen {
                log::warn!("record with caplen {caplen} exceeds snaplen {}; skipped", self.header.snaplen);
                self.stats.skipped_records += 1;
                continue;
            }
            self.stats.records += 1;
            return Ok(Some(PcapRecord {
                ts_sec,
                ts_subsec,
                orig_len,
                data,
            }));
        }
    }

    fn truncated(&mut self) {
        log::warn!("capture ends inside a record; trailing record skipped");
        self.stats.skipped_records += 1;
        self.stats.truncated_tail = true;
        self.done = true;
    }
}

/// Decoded packets in file order.
pub struct PacketStream<R> {
    reader: PcapReader<R>,
}

impl<R: Read> PacketStream<R> {
    pub fn new(reader: PcapReader<R>) -> Self {
        PacketStream { reader }
    }

    pub fn from_reader(inner: R) -> Result<Self, PcapError> {
        PcapReader::new(inner).map(Self::new)
    }

    pub fn stats(&self) -> &ReadStats {
        self.reader.stats()
    }

    pub fn header(&self) -> &PcapHeader {
        self.reader.header()
    }
}

impl<R: Read> Iterator for PacketStream<R> {
    type Item = Result<DecodedPacket, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.next_record() {
            Ok(Some(rec)) => {
                let pkt = decode_packet(&rec.data, self.reader.timestamp(&rec));
                if pkt.malformed {
                    self.reader.stats.malformed_frames += 1;
                }
                Some(Ok(pkt))
            }
            Ok(None) => None,
            Err(e) => {
                self.reader.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Open a capture file and stream its decoded packets.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<PacketStream<BufReader<File>>, PcapError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| PcapError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    PacketStream::from_reader(BufReader::with_capacity(1 << 20, file))
}

pub struct PcapWriter<W> {
    inner: W,
    header: PcapHeader,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, header: PcapHeader) -> io::Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(PcapWriter { inner, header })
    }

    pub fn write_record(&mut self, ts_sec: u32, ts_subsec: u32, data: &[u8]) -> io::Result<()> {
        let len = u32::try_from(data.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
        let h = &self.header;
        let mut rec = [0u8; RECORD_HEADER_LEN];
        rec[0..4].copy_from_slice(&h.put_u32(ts_sec));
        rec[4..8].copy_from_slice(&h.put_u32(ts_subsec));
        rec[8..12].copy_from_slice(&h.put_u32(len));
        rec[12..16].copy_from_slice(&h.put_u32(len));
        self.inner.write_all(&rec)?;
        self.inner.write_all(data)
    }

    /// Write a frame stamped with an absolute time in microseconds.
    pub fn write_micros(&mut self, micros: u64, data: &[u8]) -> io::Result<()> {
        let sec = u32::try_from(micros / 1_000_000)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "timestamp beyond 2106"))?;
        let sub = (micros % 1_000_000) as u32;
        let sub = match self.header.resolution {
            TsResolution::Micro => sub,
            TsResolution::Nano => sub * 1000,
        };
        self.write_record(sec, sub, data)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
