//! Bidirectional flow aggregation.
//!
//! Packets are grouped by a direction-free key (canonical address pair plus
//! protocol). A flow stays open until a packet for the same key arrives more
//! than `interval` seconds after the flow's first packet; that packet closes
//! the old flow and opens a new one. Whatever is still open at the end of the
//! capture is flushed.
//!
//! "Sender" and "receiver" are keying conventions: the sender is the
//! numerically smaller address of the pair, not the endpoint that opened the
//! conversation. `s*` features count packets whose source is the sender.

mod engine;
mod schema;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::label::LabelSet;
use crate::packet::{DecodedPacket, EtherKind, MacAddr, Transport};

pub use engine::{generate_flows, FlowAccumulator, FlowGenerator, GeneratorStats, DEFAULT_INTERVAL};
pub use schema::{
    canonical_column, read_flow_csv, read_flows, write_flow_csv, write_flows, FlowCsvError, FLOW_COLUMNS,
    GENERAL_COLUMNS, LABEL_COLUMNS, TCP_COLUMNS,
};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("interval must be a positive number of seconds, got {0}")]
    BadInterval(f64),
    #[error("frame has no protocol the flow engine can key")]
    NotKeyable,
}

/// One side of a flow: an IPv4 address for IP flows, a MAC for ARP flows.
///
/// Ordering is numeric on the raw address bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Ip(Ipv4Addr),
    Mac(MacAddr),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Ip(ip) => ip.fmt(f),
            Endpoint::Mac(mac) => mac.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is neither an IPv4 nor a MAC address")]
pub struct ParseEndpointError(pub String);

impl FromStr for Endpoint {
    type Err = ParseEndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(ip) = s.parse::<Ipv4Addr>() {
            return Ok(Endpoint::Ip(ip));
        }
        s.parse::<MacAddr>()
            .map(Endpoint::Mac)
            .map_err(|_| ParseEndpointError(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlowProtocol {
    Arp,
    Ipv4Tcp,
    Ipv4Udp,
    Ipv4Other,
}

impl FlowProtocol {
    pub const ALL: [FlowProtocol; 4] = [
        FlowProtocol::Arp,
        FlowProtocol::Ipv4Tcp,
        FlowProtocol::Ipv4Udp,
        FlowProtocol::Ipv4Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowProtocol::Arp => "ARP",
            FlowProtocol::Ipv4Tcp => "IPV4-TCP",
            FlowProtocol::Ipv4Udp => "IPV4-UDP",
            FlowProtocol::Ipv4Other => "IPV4-OTHER",
        }
    }
}

impl fmt::Display for FlowProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlowProtocol::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown flow protocol `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub protocol: FlowProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Packet source is the flow's sender (the smaller address).
    Forward,
    Backward,
}

/// Endpoints and protocol of a packet, before canonical ordering.
fn packet_endpoints(packet: &DecodedPacket) -> Option<(Endpoint, Endpoint, FlowProtocol)> {
    match packet.ether_kind {
        EtherKind::NonProtocol => None,
        EtherKind::Arp => Some((
            Endpoint::Mac(packet.link_src),
            Endpoint::Mac(packet.link_dst),
            FlowProtocol::Arp,
        )),
        EtherKind::Ipv4 => {
            let protocol = match packet.transport {
                Transport::Tcp => FlowProtocol::Ipv4Tcp,
                Transport::Udp => FlowProtocol::Ipv4Udp,
                Transport::Other | Transport::None => FlowProtocol::Ipv4Other,
            };
            Some((Endpoint::Ip(packet.net_src?), Endpoint::Ip(packet.net_dst?), protocol))
        }
    }
}

/// Key a packet and report which way it travels relative to that key.
pub fn key_and_direction(packet: &DecodedPacket) -> Option<(FlowKey, Direction)> {
    let (src, dst, protocol) = packet_endpoints(packet)?;
    let (sender, receiver, direction) = if src <= dst {
        (src, dst, Direction::Forward)
    } else {
        (dst, src, Direction::Backward)
    };
    Some((
        FlowKey {
            sender,
            receiver,
            protocol,
        },
        direction,
    ))
}

pub fn canonical_flow_key(packet: &DecodedPacket) -> Result<FlowKey, FlowError> {
    key_and_direction(packet).map(|(k, _)| k).ok_or(FlowError::NotKeyable)
}

/// General (protocol-independent) features for one direction of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DirectionStats {
    pub packets: u64,
    pub bytes_max: u64,
    pub bytes_min: u64,
    pub bytes_avg: f64,
    /// Bits per second over the whole flow duration.
    pub load: f64,
    pub payload_max: u64,
    pub payload_min: u64,
    pub payload_avg: f64,
    pub inter_packet: f64,
}

/// TCP header features for one direction of a TCP flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TcpStats {
    pub ttl: f64,
    pub ack_delay_max: f64,
    pub ack_delay_min: f64,
    pub ack_delay_avg: f64,
    pub ack_rate: f64,
    pub fin_rate: f64,
    pub psh_rate: f64,
    pub rst_rate: f64,
    pub urg_rate: f64,
    pub syn_rate: f64,
    pub win_tcp: f64,
    pub fragment_rate: f64,
}

/// One emitted flow: key, timing, per-direction features and optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub start: f64,
    pub end: f64,
    pub start_offset: f64,
    pub end_offset: f64,
    pub duration: f64,
    pub sender: DirectionStats,
    pub receiver: DirectionStats,
    /// `[sender, receiver]`; present only for TCP flows.
    pub tcp: Option<[TcpStats; 2]>,
    pub labels: Option<LabelSet>,
}

impl FlowRecord {
    pub fn total_packets(&self) -> u64 {
        self.sender.packets + self.receiver.packets
    }
}
