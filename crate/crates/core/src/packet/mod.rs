//! Packet ingest: classic PCAP reading/writing and Ethernet/ARP/IPv4/TCP/UDP
//! frame decoding.
//!
//! Every frame of at least 14 bytes decodes to a [`DecodedPacket`]. Frames the
//! flow engine cannot key (802.3/LLC, IPv6, unknown EtherTypes, truncated
//! headers) come back as [`EtherKind::NonProtocol`] and are dropped later.

pub mod decode;
mod pcap;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

pub use decode::{decode_packet, ETHERTYPE_ARP, ETHERTYPE_IPV4, ETHERTYPE_VLAN};
pub use pcap::{
    read_pcap, timestamp_from_parts, Endianness, PacketStream, PcapError, PcapHeader, PcapReader,
    PcapRecord, PcapWriter, ReadStats, TsResolution, LINKTYPE_ETHERNET,
};

/// 48-bit hardware address. Ordering is numeric over the six octets.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
    pub const ZERO: MacAddr = MacAddr([0; 6]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address `{0}`")]
pub struct ParseMacError(pub String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMacError(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.trim().split([':', '-']);
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.is_empty() || part.len() > 2 {
                return Err(err());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(MacAddr(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EtherKind {
    Arp,
    Ipv4,
    NonProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transport {
    Tcp,
    Udp,
    Other,
    None,
}

bitflags! {
    /// TCP control bits, using their wire positions.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const URG = 0x20;
    }
}

/// TCP header fields carried by TCP packets only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcpInfo {
    pub flags: TcpFlags,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArpInfo {
    pub operation: u16,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

/// One captured frame, normalized.
///
/// `tcp` is `Some` exactly when `transport == Transport::Tcp`, and a
/// `NonProtocol` frame carries no network or transport fields at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedPacket {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub link_src: MacAddr,
    pub link_dst: MacAddr,
    pub ether_kind: EtherKind,
    pub net_src: Option<Ipv4Addr>,
    pub net_dst: Option<Ipv4Addr>,
    pub transport: Transport,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub frame_bytes: u32,
    pub payload_bytes: u32,
    pub ttl: Option<u8>,
    pub tcp: Option<TcpInfo>,
    pub ip_fragmented: bool,
    pub arp: Option<ArpInfo>,
    /// Set when the frame announced a protocol but its headers were cut
    /// short; such frames are degraded to `NonProtocol`.
    pub malformed: bool,
}

impl DecodedPacket {
    pub(crate) fn non_protocol(
        timestamp: f64,
        link_src: MacAddr,
        link_dst: MacAddr,
        frame_bytes: u32,
        malformed: bool,
    ) -> Self {
        DecodedPacket {
            timestamp,
            link_src,
            link_dst,
            ether_kind: EtherKind::NonProtocol,
            net_src: None,
            net_dst: None,
            transport: Transport::None,
            src_port: None,
            dst_port: None,
            frame_bytes,
            payload_bytes: 0,
            ttl: None,
            tcp: None,
            ip_fragmented: false,
            arp: None,
            malformed,
        }
    }

    pub fn tcp_flags(&self) -> TcpFlags {
        self.tcp.map(|t| t.flags).unwrap_or_default()
    }

    pub fn is_keyable(&self) -> bool {
        self.ether_kind != EtherKind::NonProtocol
    }
}
