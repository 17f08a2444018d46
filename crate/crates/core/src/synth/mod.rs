//! Deterministic synthetic captures with ground truth.
//!
//! A [`TraceScript`] describes a small plant (PLCs, HMIs, an attacker), the
//! HMIs' polling rates and a list of attack phases. [`synth_trace`] renders
//! it to PCAP bytes on an integer-microsecond timeline and returns a
//! [`TraceManifest`] with packet counts and the expected flow membership of
//! every packet. Payloads are opaque bytes shaped like Modbus/TCP reads.

pub mod frames;
pub mod random;

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::{write_attack_log, AttackLogEntry, NORMAL};
use crate::packet::{timestamp_from_parts, Endianness, MacAddr, PcapHeader, PcapWriter, TcpFlags, TsResolution};
use frames::{arp_frame, tcp_frame, ArpFields, Ipv4Header, TcpHeader, ARP_REPLY, ARP_REQUEST, IPPROTO_TCP};

pub const DEFAULT_START_TIME: u32 = 1_660_000_000;
pub const MODBUS_PORT: u16 = 502;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid script: {0}")]
    Script(String),
    #[error("cannot parse script")]
    Toml(#[from] toml::de::Error),
    #[error("I/O error")]
    Io(#[from] io::Error),
}

fn bad<T>(msg: impl Into<String>) -> Result<T, SynthError> {
    Err(SynthError::Script(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Plc,
    Hmi,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
}

impl NodeSpec {
    fn new(name: &str, role: Role, last: u8, mac_last: u8) -> Self {
        NodeSpec {
            name: name.into(),
            role,
            ip: Ipv4Addr::new(192, 168, 0, last),
            mac: MacAddr([0x02, 0x42, 0xc0, 0xa8, 0x00, mac_last]),
        }
    }
}

/// Two PLCs, three HMIs and the attacker on 192.168.0.0/24.
pub fn default_topology() -> Vec<NodeSpec> {
    vec![
        NodeSpec::new("PLC1", Role::Plc, 11, 0x0b),
        NodeSpec::new("PLC2", Role::Plc, 12, 0x0c),
        NodeSpec::new("HMI1", Role::Hmi, 21, 0x15),
        NodeSpec::new("HMI2", Role::Hmi, 22, 0x16),
        NodeSpec::new("HMI3", Role::Hmi, 23, 0x17),
        NodeSpec::new("Attacker", Role::Attacker, 41, 0x29),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollerSpec {
    pub hmi: String,
    pub plc: String,
    /// Requests per second.
    pub rate: f64,
}

pub fn default_pollers() -> Vec<PollerSpec> {
    vec![
        PollerSpec {
            hmi: "HMI1".into(),
            plc: "PLC1".into(),
            rate: 5.0,
        },
        PollerSpec {
            hmi: "HMI2".into(),
            plc: "PLC2".into(),
            rate: 5.0,
        },
        PollerSpec {
            hmi: "HMI3".into(),
            plc: "PLC1".into(),
            rate: 2.0,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    IpScan,
    PortScan,
    Replay,
    Ddos,
    Mitm,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::IpScan,
        AttackKind::PortScan,
        AttackKind::Replay,
        AttackKind::Ddos,
        AttackKind::Mitm,
    ];

    /// Label string used in attack logs and flow labels.
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::IpScan => "ip-scan",
            AttackKind::PortScan => "port-scan",
            AttackKind::Replay => "replay",
            AttackKind::Ddos => "ddos",
            AttackKind::Mitm => "mitm",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub attack: AttackKind,
    /// Seconds from the start of the trace.
    pub start: f64,
    pub end: f64,
    /// Rate multiplier relative to the attack's base rate.
    #[serde(default = "one")]
    pub intensity: f64,
    /// Victim node (PLC for replay/ddos/port-scan, HMI for mitm). Defaults
    /// depend on the attack.
    #[serde(default)]
    pub target: Option<String>,
}

fn default_start_time() -> u32 {
    DEFAULT_START_TIME
}
fn default_interval() -> f64 {
    crate::flow::DEFAULT_INTERVAL
}
fn default_arp_refresh() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceScript {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    /// Capture start, whole seconds since the Unix epoch.
    #[serde(default = "default_start_time")]
    pub start_time: u32,
    /// Flow interval the manifest groups packets with.
    #[serde(default = "default_interval")]
    pub flow_interval: f64,
    #[serde(default)]
    pub allow_overlap: bool,
    /// Seconds between benign ARP refreshes per poller; 0 disables them.
    #[serde(default = "default_arp_refresh")]
    pub arp_refresh: f64,
    #[serde(default = "default_topology")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "default_pollers")]
    pub pollers: Vec<PollerSpec>,
    #[serde(default)]
    pub phases: Vec<PhaseSpec>,
}

impl TraceScript {
    /// Benign traffic only, default topology and pollers.
    pub fn benign(seed: u64, duration: f64) -> Self {
        TraceScript {
            seed,
            duration,
            start_time: DEFAULT_START_TIME,
            flow_interval: default_interval(),
            allow_overlap: false,
            arp_refresh: default_arp_refresh(),
            nodes: default_topology(),
            pollers: default_pollers(),
            phases: Vec::new(),
        }
    }

    /// One phase of each attack, evenly spaced with benign gaps.
    pub fn all_attacks(seed: u64, duration: f64) -> Self {
        let mut s = Self::benign(seed, duration);
        let slot = duration / AttackKind::ALL.len() as f64;
        s.phases = AttackKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &attack)| PhaseSpec {
                attack,
                start: i as f64 * slot + 0.25 * slot,
                end: i as f64 * slot + 0.75 * slot,
                intensity: 1.0,
                target: None,
            })
            .collect();
        s
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: TraceScript = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }

    fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn attacker(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == Role::Attacker)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be a non-negative number, got {}", self.duration));
        }
        if self.duration > 86_400.0 {
            return bad("duration above one day is not supported");
        }
        if !(self.flow_interval > 0.0 && self.flow_interval.is_finite()) {
            return bad("flow_interval must be positive");
        }
        if !(self.arp_refresh >= 0.0 && self.arp_refresh.is_finite()) {
            return bad("arp_refresh must be non-negative");
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.name == n.name || m.ip == n.ip || m.mac == n.mac) {
                return bad(format!("node {} repeats a name, IP or MAC", n.name));
            }
        }
        if self.nodes.iter().filter(|n| n.role == Role::Attacker).count() > 1 {
            return bad("at most one attacker node is supported");
        }
        for p in &self.pollers {
            match (self.node(&p.hmi), self.node(&p.plc)) {
                (Some(h), Some(c)) if h.role != Role::Attacker && c.role == Role::Plc => {}
                _ => return bad(format!("poller {} → {} must name an HMI and a PLC", p.hmi, p.plc)),
            }
            if !(p.rate > 0.0 && p.rate <= 1000.0) {
                return bad(format!("poller rate {} outside (0, 1000]", p.rate));
            }
        }
        if !self.phases.is_empty() && self.attacker().is_none() {
            return bad("attack phases need an attacker node");
        }
        for p in &self.phases {
            if !(p.start >= 0.0 && p.end <= self.duration && p.start < p.end) {
                return bad(format!("{} phase [{}, {}] is not inside [0, {}]", p.attack, p.start, p.end, self.duration));
            }
            if p.end - p.start <= self.flow_interval {
                return bad(format!("{} phase must last longer than the flow interval", p.attack));
            }
            if !(p.intensity > 0.0 && p.intensity <= 1000.0) {
                return bad(format!("{} intensity {} outside (0, 1000]", p.attack, p.intensity));
            }
            if let Some(t) = &p.target {
                if self.node(t).is_none_or(|n| n.role == Role::Attacker) {
                    return bad(format!("{} target `{t}` is not a plant node", p.attack));
                }
            }
            if matches!(p.attack, AttackKind::Mitm) && self.pollers.is_empty() {
                return bad("mitm needs at least one poller to intercept");
            }
            if matches!(p.attack, AttackKind::Replay | AttackKind::Ddos)
                && !self.nodes.iter().any(|n| n.role == Role::Plc)
            {
                return bad(format!("{} needs a PLC", p.attack));
            }
        }
        if !self.allow_overlap {
            let mut sorted: Vec<&PhaseSpec> = self.phases.iter().collect();
            sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in sorted.windows(2) {
                if w[1].start < w[0].end {
                    return bad(format!(
                        "phases {} and {} overlap; set allow_overlap = true to permit this",
                        w[0].attack, w[1].attack
                    ));
                }
            }
        }
        Ok(())
    }
}

fn micros(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

/// Absolute timestamp of a trace offset, as packet decoding sees it.
fn absolute(start_time: u32, t_us: u64) -> f64 {
    timestamp_from_parts(
        start_time + (t_us / 1_000_000) as u32,
        (t_us % 1_000_000) as u32,
        TsResolution::Micro,
    )
}

fn window_bound(start_time: u32, t_us: u64) -> f64 {
    format!("{}.{:06}", start_time as u64 + t_us / 1_000_000, t_us % 1_000_000)
        .parse()
        .expect("decimal timestamp")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum SimpleKey {
    Ip(Ipv4Addr, Ipv4Addr, u8),
    Mac(MacAddr, MacAddr),
}

impl SimpleKey {
    fn ip(a: Ipv4Addr, b: Ipv4Addr, proto: u8) -> Self {
        SimpleKey::Ip(a.min(b), a.max(b), proto)
    }
    fn mac(a: MacAddr, b: MacAddr) -> Self {
        SimpleKey::Mac(a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Benign,
    Phase(usize),
}

struct Event {
    t: u64,
    order: u64,
    frame: Vec<u8>,
    origin: Origin,
    key: SimpleKey,
}

struct Timeline {
    events: Vec<Event>,
    limit: u64,
    next: u64,
}

impl Timeline {
    fn push(&mut self, t: u64, frame: Vec<u8>, origin: Origin, key: SimpleKey) {
        if t < self.limit {
            self.events.push(Event {
                t,
                order: self.next,
                frame,
                origin,
                key,
            });
            self.next += 1;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Host {
    ip: Ipv4Addr,
    mac: MacAddr,
}

impl From<&NodeSpec> for Host {
    fn from(n: &NodeSpec) -> Self {
        Host { ip: n.ip, mac: n.mac }
    }
}

/// TCP connection state: next sequence number on each side.
struct Conn {
    client: Host,
    server: Host,
    cport: u16,
    sport: u16,
    cseq: u32,
    sseq: u32,
    cttl: u8,
    sttl: u8,
}

/// One segment ready to be framed.
struct Segment {
    src: Host,
    dst: Host,
    ip: Ipv4Header,
    tcp: TcpHeader,
    payload: Vec<u8>,
}

impl Segment {
    fn frame(&self) -> Vec<u8> {
        tcp_frame(self.src.mac, self.dst.mac, &self.ip, &self.tcp, &self.payload)
    }

    fn key(&self) -> SimpleKey {
        SimpleKey::ip(self.ip.src, self.ip.dst, IPPROTO_TCP)
    }
}

impl Conn {
    fn new(client: Host, server: Host, cport: u16, sport: u16, rng: &mut ChaCha8Rng) -> Self {
        Conn {
            client,
            server,
            cport,
            sport,
            cseq: rng.gen(),
            sseq: rng.gen(),
            cttl: 64,
            sttl: 64,
        }
    }

    fn advance(seq: &mut u32, flags: TcpFlags, len: usize) {
        let mut n = len as u32;
        if flags.intersects(TcpFlags::SYN | TcpFlags::FIN) {
            n += 1;
        }
        *seq = seq.wrapping_add(n);
    }

    fn client_segment(&mut self, flags: TcpFlags, payload: &[u8]) -> Segment {
        let ack = if flags.contains(TcpFlags::ACK) { self.sseq } else { 0 };
        let seg = Segment {
            src: self.client,
            dst: self.server,
            ip: Ipv4Header::new(self.client.ip, self.server.ip, IPPROTO_TCP, self.cttl),
            tcp: TcpHeader {
                src_port: self.cport,
                dst_port: self.sport,
                seq: self.cseq,
                ack,
                flags,
                window: 502,
            },
            payload: payload.to_vec(),
        };
        Self::advance(&mut self.cseq, flags, payload.len());
        seg
    }

    fn server_segment(&mut self, flags: TcpFlags, payload: &[u8]) -> Segment {
        let ack = if flags.contains(TcpFlags::ACK) { self.cseq } else { 0 };
        let seg = Segment {
            src: self.server,
            dst: self.client,
            ip: Ipv4Header::new(self.server.ip, self.client.ip, IPPROTO_TCP, self.sttl),
            tcp: TcpHeader {
                src_port: self.sport,
                dst_port: self.cport,
                seq: self.sseq,
                ack,
                flags,
                window: 8192,
            },
            payload: payload.to_vec(),
        };
        Self::advance(&mut self.sseq, flags, payload.len());
        seg
    }
}

fn read_request(tid: u16, start: u16, count: u16) -> Vec<u8> {
    let mut p = Vec::with_capacity(12);
    p.extend_from_slice(&tid.to_be_bytes());
    p.extend_from_slice(&[0, 0, 0, 6, 1, 3]);
    p.extend_from_slice(&start.to_be_bytes());
    p.extend_from_slice(&count.to_be_bytes());
    p
}

fn read_response(tid: u16, values: &[u16]) -> Vec<u8> {
    let mut p = Vec::with_capacity(9 + 2 * values.len());
    p.extend_from_slice(&tid.to_be_bytes());
    p.extend_from_slice(&[0, 0]);
    p.extend_from_slice(&((3 + 2 * values.len()) as u16).to_be_bytes());
    p.extend_from_slice(&[1, 3, (2 * values.len()) as u8]);
    for v in values {
        p.extend_from_slice(&v.to_be_bytes());
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub attack: String,
    pub start_ts: f64,
    pub end_ts: f64,
    /// Packets emitted by the attack itself.
    pub packets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFlow {
    pub sender: String,
    pub receiver: String,
    pub protocol: String,
    pub start: f64,
    pub end: f64,
    pub packets: u64,
    pub it_label: String,
    pub nst_label: String,
}

/// Ground truth for a synthetic capture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub seed: u64,
    pub start_time: u32,
    pub duration: f64,
    pub flow_interval: f64,
    pub total_packets: u64,
    pub benign_packets: u64,
    pub phases: Vec<PhaseCount>,
    /// Flows in order of their first packet.
    pub flows: Vec<ManifestFlow>,
}

impl TraceManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Flow counts per IT and NST multi-class label.
    pub fn label_counts(&self) -> (HashMap<String, usize>, HashMap<String, usize>) {
        let mut it = HashMap::new();
        let mut nst = HashMap::new();
        for f in &self.flows {
            *it.entry(f.it_label.clone()).or_insert(0) += 1;
            *nst.entry(f.nst_label.clone()).or_insert(0) += 1;
        }
        (it, nst)
    }
}

struct Generator<'a> {
    script: &'a TraceScript,
    rng: ChaCha8Rng,
    tl: Timeline,
    /// Mitm windows in microseconds with the intercepted poller index.
    mitm: Vec<(u64, u64, usize, usize)>,
    attacker: Option<Host>,
    captured: Vec<(u64, Vec<u8>)>,
    next_port: u16,
}

impl<'a> Generator<'a> {
    fn ephemeral_port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p >= 60999 { 32768 } else { p + 1 };
        p
    }

    fn jitter(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.gen_range(lo..=hi)
    }

    fn phase_window(&self, i: usize) -> (u64, u64) {
        let p = &self.script.phases[i];
        (micros(p.start), micros(p.end))
    }

    fn intercepting(&self, poller: usize, t: u64) -> Option<usize> {
        self.mitm
            .iter()
            .find(|(s, e, p, _)| *p == poller && t > *s && t < *e)
            .map(|(_, _, _, phase)| *phase)
    }

    /// Emit a benign segment, detouring through the attacker while a mitm
    /// phase intercepts this poller.
    fn emit_benign(&mut self, poller: usize, t: u64, seg: Segment, modify: bool) {
        match (self.intercepting(poller, t), self.attacker) {
            (Some(phase), Some(att)) => {
                let key = seg.key();
                let first = tcp_frame(seg.src.mac, att.mac, &seg.ip, &seg.tcp, &seg.payload);
                self.tl.push(t, first, Origin::Benign, key);
                let mut payload = seg.payload.clone();
                if modify && payload.len() > 9 {
                    for b in payload[9..].iter_mut().skip(1).step_by(2) {
                        *b = b.wrapping_mul(2);
                    }
                }
                let mut ip = seg.ip;
                ip.ttl -= 1;
                let second = tcp_frame(att.mac, seg.dst.mac, &ip, &seg.tcp, &payload);
                let dt = self.jitter(40, 120);
                self.tl.push(t + dt, second, Origin::Phase(phase), key);
            }
            _ => {
                let key = seg.key();
                self.tl.push(t, seg.frame(), Origin::Benign, key);
            }
        }
    }

    fn push_seg(&mut self, t: u64, seg: Segment, origin: Origin) {
        let key = seg.key();
        self.tl.push(t, seg.frame(), origin, key);
    }

    fn arp(&mut self, t: u64, link_src: MacAddr, link_dst: MacAddr, fields: ArpFields, origin: Origin) {
        let key = SimpleKey::mac(link_src, link_dst);
        self.tl.push(t, arp_frame(link_src, link_dst, &fields), origin, key);
    }

    fn pollers(&mut self) {
        let limit = self.tl.limit;
        for (i, p) in self.script.pollers.clone().iter().enumerate() {
            let hmi: Host = self.script.node(&p.hmi).expect("validated").into();
            let plc: Host = self.script.node(&p.plc).expect("validated").into();
            let period = (1e6 / p.rate).round().max(1.0) as u64;
            let registers = self.rng.gen_range(1..=4u16);
            let base_reg = self.rng.gen_range(0..100u16);
            let mut values: Vec<u16> = (0..registers).map(|_| self.rng.gen_range(0..1000)).collect();
            let port = self.ephemeral_port();
            let mut conn = Conn::new(hmi, plc, port, MODBUS_PORT, &mut self.rng);
            let mut t = self.jitter(0, period.min(1_000_000));
            let syn = conn.client_segment(TcpFlags::SYN, &[]);
            self.emit_benign(i, t, syn, false);
            t += self.jitter(150, 600);
            let synack = conn.server_segment(TcpFlags::SYN | TcpFlags::ACK, &[]);
            self.emit_benign(i, t, synack, false);
            t += self.jitter(50, 200);
            let ack = conn.client_segment(TcpFlags::ACK, &[]);
            self.emit_benign(i, t, ack, false);
            let first_poll = t + 2_000;
            let mut tid: u16 = 0;
            for k in 0.. {
                let nominal = first_poll + k * period;
                if nominal >= limit {
                    break;
                }
                let spread = period / 50;
                let t_req = nominal + self.jitter(0, spread);
                tid = tid.wrapping_add(1);
                let req = read_request(tid, base_reg, registers);
                self.captured.push((t_req, req.clone()));
                let seg = conn.client_segment(TcpFlags::PSH | TcpFlags::ACK, &req);
                self.emit_benign(i, t_req, seg, false);
                for v in values.iter_mut() {
                    *v = (*v as i32 + self.rng.gen_range(-3..=3)).clamp(0, 1000) as u16;
                }
                let t_resp = t_req + self.jitter(800, 2_500);
                let seg = conn.server_segment(TcpFlags::PSH | TcpFlags::ACK, &read_response(tid, &values));
                self.emit_benign(i, t_resp, seg, true);
                let t_ack = t_resp + self.jitter(100, 600);
                let seg = conn.client_segment(TcpFlags::ACK, &[]);
                self.emit_benign(i, t_ack, seg, false);
            }
        }
    }

    fn arp_refresh(&mut self) {
        if self.script.arp_refresh <= 0.0 {
            return;
        }
        let period = micros(self.script.arp_refresh).max(1);
        for p in self.script.pollers.clone() {
            let hmi: Host = self.script.node(&p.hmi).expect("validated").into();
            let plc: Host = self.script.node(&p.plc).expect("validated").into();
            let mut t = self.jitter(0, period);
            while t < self.tl.limit {
                self.arp(
                    t,
                    hmi.mac,
                    MacAddr::BROADCAST,
                    ArpFields {
                        operation: ARP_REQUEST,
                        sender_mac: hmi.mac,
                        sender_ip: hmi.ip,
                        target_mac: MacAddr::ZERO,
                        target_ip: plc.ip,
                    },
                    Origin::Benign,
                );
                let tr = t + self.jitter(100, 300);
                self.arp(
                    tr,
                    plc.mac,
                    hmi.mac,
                    ArpFields {
                        operation: ARP_REPLY,
                        sender_mac: plc.mac,
                        sender_ip: plc.ip,
                        target_mac: hmi.mac,
                        target_ip: hmi.ip,
                    },
                    Origin::Benign,
                );
                t += period;
            }
        }
    }

    fn plant(&self) -> Vec<Host> {
        self.script
            .nodes
            .iter()
            .filter(|n| n.role != Role::Attacker)
            .map(Host::from)
            .collect()
    }

    fn target_plc(&self, phase: &PhaseSpec) -> Host {
        phase
            .target
            .as_deref()
            .and_then(|t| self.script.node(t))
            .or_else(|| self.script.nodes.iter().find(|n| n.role == Role::Plc))
            .expect("validated")
            .into()
    }

    /// Event times spaced `1/rate` apart inside the phase, away from its edges.
    fn schedule(&mut self, window: (u64, u64), rate: f64) -> Vec<u64> {
        let step = (1e6 / rate).max(1.0) as u64;
        let mut out = Vec::new();
        let mut t = window.0 + 1_000 + self.jitter(0, step.min(1_000));
        while t + 20_000 < window.1 {
            out.push(t);
            t += step;
        }
        out
    }

    fn ip_scan(&mut self, idx: usize, att: Host) {
        let phase = self.script.phases[idx].clone();
        let origin = Origin::Phase(idx);
        let plant = self.plant();
        let net = att.ip.octets();
        let mut host: u8 = 1;
        for t in self.schedule(self.phase_window(idx), 20.0 * phase.intensity) {
            if host == net[3] {
                host = host % 254 + 1;
            }
            let target_ip = Ipv4Addr::new(net[0], net[1], net[2], host);
            host = host % 254 + 1;
            self.arp(
                t,
                att.mac,
                MacAddr::BROADCAST,
                ArpFields {
                    operation: ARP_REQUEST,
                    sender_mac: att.mac,
                    sender_ip: att.ip,
                    target_mac: MacAddr::ZERO,
                    target_ip,
                },
                origin,
            );
            if let Some(h) = plant.iter().find(|h| h.ip == target_ip) {
                let tr = t + self.jitter(100, 300);
                self.arp(
                    tr,
                    h.mac,
                    att.mac,
                    ArpFields {
                        operation: ARP_REPLY,
                        sender_mac: h.mac,
                        sender_ip: h.ip,
                        target_mac: att.mac,
                        target_ip: att.ip,
                    },
                    origin,
                );
            }
        }
    }

    fn port_scan(&mut self, idx: usize, att: Host) {
        let phase = self.script.phases[idx].clone();
        let origin = Origin::Phase(idx);
        let targets: Vec<(Host, bool)> = match phase.target.as_deref().and_then(|t| self.script.node(t)) {
            Some(n) => vec![(n.into(), n.role == Role::Plc)],
            None => self
                .script
                .nodes
                .iter()
                .filter(|n| n.role != Role::Attacker)
                .map(|n| (n.into(), n.role == Role::Plc))
                .collect(),
        };
        let sport = self.rng.gen_range(40000..60000u16);
        for (n, t) in self.schedule(self.phase_window(idx), 50.0 * phase.intensity).into_iter().enumerate() {
            let (target, is_plc) = targets[n % targets.len()];
            let port = (n / targets.len() % 1024) as u16 + 1;
            let mut conn = Conn::new(att, target, sport, port, &mut self.rng);
            let syn = conn.client_segment(TcpFlags::SYN, &[]);
            self.push_seg(t, syn, origin);
            let tr = t + self.jitter(100, 400);
            if is_plc && port == MODBUS_PORT {
                let sa = conn.server_segment(TcpFlags::SYN | TcpFlags::ACK, &[]);
                self.push_seg(tr, sa, origin);
                let rst = conn.client_segment(TcpFlags::RST, &[]);
                let tt = tr + self.jitter(50, 150);
                self.push_seg(tt, rst, origin);
            } else {
                let rst = conn.server_segment(TcpFlags::RST | TcpFlags::ACK, &[]);
                self.push_seg(tr, rst, origin);
            }
        }
    }

    fn ddos(&mut self, idx: usize, att: Host) {
        let phase = self.script.phases[idx].clone();
        let origin = Origin::Phase(idx);
        let plcs: Vec<Host> = match phase.target.as_deref().and_then(|t| self.script.node(t)) {
            Some(n) => vec![n.into()],
            None => self
                .script
                .nodes
                .iter()
                .filter(|n| n.role == Role::Plc)
                .map(Host::from)
                .collect(),
        };
        let baseline: f64 = self.script.pollers.iter().map(|p| p.rate).sum::<f64>().max(1.0);
        for (n, t) in self.schedule(self.phase_window(idx), baseline * phase.intensity).into_iter().enumerate() {
            let plc = plcs[n % plcs.len()];
            let port = self.ephemeral_port();
            let mut conn = Conn::new(att, plc, port, MODBUS_PORT, &mut self.rng);
            let mut tt = t;
            let seg = conn.client_segment(TcpFlags::SYN, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(150, 900);
            let seg = conn.server_segment(TcpFlags::SYN | TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(30, 100);
            let seg = conn.client_segment(TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(10, 50);
            let seg = conn.client_segment(TcpFlags::PSH | TcpFlags::ACK, &read_request(1, 0, 125));
            self.push_seg(tt, seg, origin);
            tt += self.jitter(1_500, 6_000);
            let values = vec![0u16; 125];
            let seg = conn.server_segment(TcpFlags::PSH | TcpFlags::ACK, &read_response(1, &values));
            self.push_seg(tt, seg, origin);
            tt += self.jitter(30, 100);
            let seg = conn.client_segment(TcpFlags::RST | TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
        }
    }

    fn replay(&mut self, idx: usize, att: Host) {
        let phase = self.script.phases[idx].clone();
        let origin = Origin::Phase(idx);
        let window = self.phase_window(idx);
        let plc = self.target_plc(&phase);
        let payload = self
            .captured
            .iter()
            .filter(|(t, _)| *t < window.0)
            .max_by_key(|(t, _)| *t)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| read_request(1, 0, 4));
        for t in self.schedule(window, phase.intensity) {
            let port = self.ephemeral_port();
            let mut conn = Conn::new(att, plc, port, MODBUS_PORT, &mut self.rng);
            let mut tt = t;
            let seg = conn.client_segment(TcpFlags::SYN, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(150, 600);
            let seg = conn.server_segment(TcpFlags::SYN | TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(50, 200);
            let seg = conn.client_segment(TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            for _ in 0..3 {
                tt += self.jitter(500, 2_000);
                let seg = conn.client_segment(TcpFlags::PSH | TcpFlags::ACK, &payload);
                self.push_seg(tt, seg, origin);
                tt += self.jitter(800, 2_500);
                let seg = conn.server_segment(TcpFlags::PSH | TcpFlags::ACK, &read_response(1, &[7, 7, 7, 7]));
                self.push_seg(tt, seg, origin);
                tt += self.jitter(100, 600);
                let seg = conn.client_segment(TcpFlags::ACK, &[]);
                self.push_seg(tt, seg, origin);
            }
            tt += self.jitter(200, 800);
            let seg = conn.client_segment(TcpFlags::FIN | TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(150, 600);
            let seg = conn.server_segment(TcpFlags::FIN | TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
            tt += self.jitter(50, 200);
            let seg = conn.client_segment(TcpFlags::ACK, &[]);
            self.push_seg(tt, seg, origin);
        }
    }

    /// ARP poisoning of the intercepted pair; the detoured frames themselves
    /// come from `emit_benign`.
    fn mitm_poison(&mut self, idx: usize, att: Host) {
        let phase = self.script.phases[idx].clone();
        let origin = Origin::Phase(idx);
        let poller = self.mitm.iter().find(|m| m.3 == idx).expect("registered").2;
        let p = &self.script.pollers[poller];
        let hmi: Host = self.script.node(&p.hmi).expect("validated").into();
        let plc: Host = self.script.node(&p.plc).expect("validated").into();
        for (n, t) in self.schedule(self.phase_window(idx), 2.0 * phase.intensity).into_iter().enumerate() {
            let (victim, spoofed) = if n % 2 == 0 { (hmi, plc) } else { (plc, hmi) };
            self.arp(
                t,
                att.mac,
                victim.mac,
                ArpFields {
                    operation: ARP_REPLY,
                    sender_mac: att.mac,
                    sender_ip: spoofed.ip,
                    target_mac: victim.mac,
                    target_ip: victim.ip,
                },
                origin,
            );
        }
    }
}

/// Render a script. Identical scripts give identical bytes and manifests.
pub fn synth_trace(script: &TraceScript) -> Result<(Vec<u8>, TraceManifest), SynthError> {
    script.validate()?;
    let limit = micros(script.duration);
    let attacker = script.attacker().map(Host::from);
    let mitm = script
        .phases
        .iter()
        .enumerate()
        .filter(|(_, p)| p.attack == AttackKind::Mitm)
        .map(|(i, p)| {
            let poller = p
                .target
                .as_deref()
                .and_then(|t| script.pollers.iter().position(|q| q.hmi == t || q.plc == t))
                .unwrap_or(0);
            (micros(p.start), micros(p.end), poller, i)
        })
        .collect();
    let mut g = Generator {
        script,
        rng: ChaCha8Rng::seed_from_u64(script.seed),
        tl: Timeline {
            events: Vec::new(),
            limit,
            next: 0,
        },
        mitm,
        attacker,
        captured: Vec::new(),
        next_port: 49152,
    };
    g.pollers();
    g.arp_refresh();
    if let Some(att) = attacker {
        for (i, p) in script.phases.iter().enumerate() {
            match p.attack {
                AttackKind::IpScan => g.ip_scan(i, att),
                AttackKind::PortScan => g.port_scan(i, att),
                AttackKind::Ddos => g.ddos(i, att),
                AttackKind::Replay => g.replay(i, att),
                AttackKind::Mitm => g.mitm_poison(i, att),
            }
        }
    }
    let mut events = g.tl.events;
    // Benign packets never sit exactly on a window edge.
    let edges: Vec<u64> = script.phases.iter().flat_map(|p| [micros(p.start), micros(p.end)]).collect();
    for e in events.iter_mut() {
        while edges.contains(&e.t) {
            e.t += 1;
        }
    }
    events.retain(|e| e.t < limit);
    events.sort_by_key(|e| (e.t, e.order));

    let header = PcapHeader::ethernet(Endianness::Little, TsResolution::Micro);
    let mut w = PcapWriter::new(Vec::new(), header)?;
    for e in &events {
        w.write_record(
            script.start_time + (e.t / 1_000_000) as u32,
            (e.t % 1_000_000) as u32,
            &e.frame,
        )?;
    }
    let manifest = build_manifest(script, &events);
    Ok((w.into_inner(), manifest))
}

fn build_manifest(script: &TraceScript, events: &[Event]) -> TraceManifest {
    let mut phases: Vec<PhaseCount> = script
        .phases
        .iter()
        .map(|p| PhaseCount {
            attack: p.attack.as_str().into(),
            start_ts: window_bound(script.start_time, micros(p.start)),
            end_ts: window_bound(script.start_time, micros(p.end)),
            packets: 0,
        })
        .collect();
    let windows: Vec<(u64, u64)> = script.phases.iter().map(|p| (micros(p.start), micros(p.end))).collect();
    let attacker = script.attacker();
    let mut benign = 0;

    struct Open {
        first: f64,
        flow: usize,
    }
    struct Acc {
        key: SimpleKey,
        start: f64,
        end: f64,
        packets: u64,
        phase: Option<usize>,
    }
    let mut open: HashMap<SimpleKey, Open> = HashMap::new();
    let mut flows: Vec<Acc> = Vec::new();
    for e in events {
        match e.origin {
            Origin::Benign => benign += 1,
            Origin::Phase(i) => phases[i].packets += 1,
        }
        let ts = absolute(script.start_time, e.t);
        let idx = match open.get(&e.key) {
            Some(o) if ts - o.first <= script.flow_interval => o.flow,
            _ => {
                flows.push(Acc {
                    key: e.key,
                    start: ts,
                    end: ts,
                    packets: 0,
                    phase: None,
                });
                open.insert(e.key, Open { first: ts, flow: flows.len() - 1 });
                flows.len() - 1
            }
        };
        let f = &mut flows[idx];
        f.end = f.end.max(ts);
        f.packets += 1;
        for (i, &(s, end)) in windows.iter().enumerate() {
            if e.t >= s && e.t <= end {
                let later = match f.phase {
                    None => true,
                    Some(j) => windows[i].0 > windows[j].0,
                };
                if later {
                    f.phase = Some(i);
                }
            }
        }
    }
    let flows = flows
        .into_iter()
        .map(|f| {
            let (sender, receiver, protocol, touches) = match f.key {
                SimpleKey::Ip(a, b, proto) => (
                    a.to_string(),
                    b.to_string(),
                    match proto {
                        6 => "IPV4-TCP",
                        17 => "IPV4-UDP",
                        _ => "IPV4-OTHER",
                    },
                    attacker.is_some_and(|n| n.ip == a || n.ip == b),
                ),
                SimpleKey::Mac(a, b) => (
                    a.to_string(),
                    b.to_string(),
                    "ARP",
                    attacker.is_some_and(|n| n.mac == a || n.mac == b),
                ),
            };
            let it = f.phase.map_or(NORMAL, |i| script.phases[i].attack.as_str());
            ManifestFlow {
                sender,
                receiver,
                protocol: protocol.into(),
                start: f.start,
                end: f.end,
                packets: f.packets,
                it_label: it.into(),
                nst_label: if touches { it.into() } else { NORMAL.into() },
            }
        })
        .collect();
    TraceManifest {
        seed: script.seed,
        start_time: script.start_time,
        duration: script.duration,
        flow_interval: script.flow_interval,
        total_packets: events.len() as u64,
        benign_packets: benign,
        phases,
        flows,
    }
}

/// Attack-log rows for every phase, in script order.
pub fn synth_attack_entries(script: &TraceScript) -> Vec<AttackLogEntry> {
    let Some(att) = script.attacker() else {
        return Vec::new();
    };
    script
        .phases
        .iter()
        .enumerate()
        .map(|(i, p)| AttackLogEntry {
            attack: p.attack.as_str().into(),
            start_ts: window_bound(script.start_time, micros(p.start)),
            end_ts: window_bound(script.start_time, micros(p.end)),
            attacker_ip: att.ip,
            attacker_mac: att.mac,
            extra: format!("synthetic intensity {}", p.intensity),
            order: i,
        })
        .collect()
}

pub fn synth_attack_log<W: Write>(writer: W, script: &TraceScript) -> Result<(), csv::Error> {
    write_attack_log(writer, &synth_attack_entries(script))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::PacketStream;

    fn decode_all(bytes: &[u8]) -> (u64, u64) {
        let mut s = PacketStream::from_reader(bytes).unwrap();
        let n = s.by_ref().inspect(|p| assert!(p.is_ok())).count() as u64;
        (n, s.stats().malformed_frames)
    }

    #[test]
    fn zero_duration_is_header_only() {
        let (bytes, m) = synth_trace(&TraceScript::benign(1, 0.0)).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(m.total_packets, 0);
        assert!(m.flows.is_empty());
    }

    #[test]
    fn manifest_counts_match_decoded_packets() {
        let mut s = TraceScript::benign(42, 10.0);
        s.pollers.truncate(2);
        let (bytes, m) = synth_trace(&s).unwrap();
        let (n, malformed) = decode_all(&bytes);
        assert_eq!(n, m.total_packets);
        assert_eq!(malformed, 0);
        assert_eq!(m.benign_packets, m.total_packets);
        assert!(m.flows.iter().all(|f| f.it_label == NORMAL));
        assert_eq!(m.flows.iter().map(|f| f.packets).sum::<u64>(), m.total_packets);
    }

    #[test]
    fn deterministic() {
        let s = TraceScript::all_attacks(7, 30.0);
        let a = synth_trace(&s).unwrap();
        let b = synth_trace(&s).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let mut s2 = s.clone();
        s2.seed = 8;
        assert_ne!(synth_trace(&s2).unwrap().0, a.0);
    }

    #[test]
    fn every_attack_emits_clean_frames() {
        let s = TraceScript::all_attacks(3, 50.0);
        let (bytes, m) = synth_trace(&s).unwrap();
        let (n, malformed) = decode_all(&bytes);
        assert_eq!(malformed, 0);
        assert_eq!(n, m.total_packets);
        assert_eq!(m.benign_packets + m.phases.iter().map(|p| p.packets).sum::<u64>(), m.total_packets);
        for p in &m.phases {
            assert!(p.packets > 0, "{} emitted nothing", p.attack);
        }
    }

    #[test]
    fn ddos_rate_exceeds_baseline() {
        let mut s = TraceScript::benign(5, 40.0);
        s.phases.push(PhaseSpec {
            attack: AttackKind::Ddos,
            start: 20.0,
            end: 30.0,
            intensity: 10.0,
            target: None,
        });
        let (_, m) = synth_trace(&s).unwrap();
        let baseline = m.benign_packets as f64 / 40.0;
        let ddos = m.phases[0].packets as f64 / 10.0;
        assert!(ddos >= 5.0 * baseline, "{ddos} vs {baseline}");
    }

    #[test]
    fn overlapping_phases_need_flag() {
        let mut s = TraceScript::benign(1, 100.0);
        for (a, st, en) in [(AttackKind::Ddos, 10.0, 30.0), (AttackKind::Replay, 20.0, 40.0)] {
            s.phases.push(PhaseSpec {
                attack: a,
                start: st,
                end: en,
                intensity: 1.0,
                target: None,
            });
        }
        assert!(matches!(synth_trace(&s), Err(SynthError::Script(m)) if m.contains("overlap")));
        s.allow_overlap = true;
        assert!(synth_trace(&s).is_ok());
    }

    #[test]
    fn attack_log_rows() {
        let mut s = TraceScript::benign(1, 200.0);
        let mut buf = Vec::new();
        synth_attack_log(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        s.phases.push(PhaseSpec {
            attack: AttackKind::Ddos,
            start: 100.0,
            end: 160.0,
            intensity: 1.0,
            target: None,
        });
        let e = synth_attack_entries(&s);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].end_ts - e[0].start_ts, 60.0);
        assert_eq!(e[0].attacker_ip, Ipv4Addr::new(192, 168, 0, 41));
    }

    #[test]
    fn toml_round_trip() {
        let s = TraceScript::all_attacks(9, 60.0);
        assert_eq!(TraceScript::from_toml(&s.to_toml()).unwrap(), s);
        let minimal = TraceScript::from_toml("seed = 1\nduration = 5.0\n").unwrap();
        assert_eq!(minimal.nodes, default_topology());
        assert!(TraceScript::from_toml("seed = 1\nduration = 5.0\nbogus = 1\n").is_err());
    }
}
