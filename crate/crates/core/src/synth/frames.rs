//! Ethernet frame construction.

use std::net::Ipv4Addr;

use crate::packet::decode::{ETHERTYPE_ARP, ETHERTYPE_IPV4};
use crate::packet::{MacAddr, TcpFlags};

/// Frames shorter than this are zero-padded (minimum Ethernet size without FCS).
pub const MIN_FRAME: usize = 60;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        let mut it = chunk.chunks_exact(2);
        for w in &mut it {
            sum += u16::from_be_bytes([w[0], w[1]]) as u32;
        }
        if let [b] = it.remainder() {
            sum += (*b as u32) << 8;
        }
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn ethernet(dst: MacAddr, src: MacAddr, ethertype: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity((14 + payload.len()).max(MIN_FRAME));
    f.extend_from_slice(&dst.0);
    f.extend_from_slice(&src.0);
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(payload);
    if f.len() < MIN_FRAME {
        f.resize(MIN_FRAME, 0);
    }
    f
}

/// 802.3 frame with an LLC header; the length field is ≤ 1500.
pub fn llc(dst: MacAddr, src: MacAddr, payload: &[u8]) -> Vec<u8> {
    let mut body = vec![0x42, 0x42, 0x03];
    body.extend_from_slice(payload);
    ethernet(dst, src, body.len() as u16, &body)
}

#[derive(Debug, Clone, Copy)]
pub struct Ipv4Header {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub ttl: u8,
    pub ident: u16,
    pub more_fragments: bool,
    /// In 8-byte units.
    pub fragment_offset: u16,
}

impl Ipv4Header {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, ttl: u8) -> Self {
        Ipv4Header {
            src,
            dst,
            protocol,
            ttl,
            ident: 0,
            more_fragments: false,
            fragment_offset: 0,
        }
    }
}

pub fn ipv4(h: &Ipv4Header, payload: &[u8]) -> Vec<u8> {
    let total = 20 + payload.len();
    let mut p = Vec::with_capacity(total);
    p.push(0x45);
    p.push(0);
    p.extend_from_slice(&(total as u16).to_be_bytes());
    p.extend_from_slice(&h.ident.to_be_bytes());
    let frag = (h.fragment_offset & 0x1fff) | if h.more_fragments { 0x2000 } else { 0x4000 * (h.fragment_offset == 0) as u16 };
    p.extend_from_slice(&frag.to_be_bytes());
    p.push(h.ttl);
    p.push(h.protocol);
    p.extend_from_slice(&[0, 0]);
    p.extend_from_slice(&h.src.octets());
    p.extend_from_slice(&h.dst.octets());
    let c = checksum(&[&p]);
    p[10..12].copy_from_slice(&c.to_be_bytes());
    p.extend_from_slice(payload);
    p
}

fn pseudo_header(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, len: usize) -> [u8; 12] {
    let mut ph = [0u8; 12];
    ph[..4].copy_from_slice(&src.octets());
    ph[4..8].copy_from_slice(&dst.octets());
    ph[9] = protocol;
    ph[10..].copy_from_slice(&(len as u16).to_be_bytes());
    ph
}

#[derive(Debug, Clone, Copy)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
}

pub fn tcp_segment(src: Ipv4Addr, dst: Ipv4Addr, h: &TcpHeader, payload: &[u8]) -> Vec<u8> {
    let mut s = Vec::with_capacity(20 + payload.len());
    s.extend_from_slice(&h.src_port.to_be_bytes());
    s.extend_from_slice(&h.dst_port.to_be_bytes());
    s.extend_from_slice(&h.seq.to_be_bytes());
    s.extend_from_slice(&h.ack.to_be_bytes());
    s.push(5 << 4);
    s.push(h.flags.bits());
    s.extend_from_slice(&h.window.to_be_bytes());
    s.extend_from_slice(&[0, 0, 0, 0]);
    s.extend_from_slice(payload);
    let c = checksum(&[&pseudo_header(src, dst, IPPROTO_TCP, s.len()), &s]);
    s[16..18].copy_from_slice(&c.to_be_bytes());
    s
}

pub fn udp_datagram(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let len = 8 + payload.len();
    let mut s = Vec::with_capacity(len);
    s.extend_from_slice(&src_port.to_be_bytes());
    s.extend_from_slice(&dst_port.to_be_bytes());
    s.extend_from_slice(&(len as u16).to_be_bytes());
    s.extend_from_slice(&[0, 0]);
    s.extend_from_slice(payload);
    let c = checksum(&[&pseudo_header(src, dst, IPPROTO_UDP, len), &s]);
    s[6..8].copy_from_slice(&(if c == 0 { 0xffff } else { c }).to_be_bytes());
    s
}

/// Complete Ethernet/IPv4/TCP frame.
pub fn tcp_frame(
    src_mac: MacAddr,
    dst_mac: MacAddr,
    ip: &Ipv4Header,
    tcp: &TcpHeader,
    payload: &[u8],
) -> Vec<u8> {
    let seg = tcp_segment(ip.src, ip.dst, tcp, payload);
    ethernet(dst_mac, src_mac, ETHERTYPE_IPV4, &ipv4(ip, &seg))
}

pub fn udp_frame(
    src_mac: MacAddr,
    dst_mac: MacAddr,
    ip: &Ipv4Header,
    src_port: u16,
    dst_port: u16,
    payload: &[u8],
) -> Vec<u8> {
    let d = udp_datagram(ip.src, ip.dst, src_port, dst_port, payload);
    ethernet(dst_mac, src_mac, ETHERTYPE_IPV4, &ipv4(ip, &d))
}

/// ICMP echo request.
pub fn icmp_echo_frame(src_mac: MacAddr, dst_mac: MacAddr, ip: &Ipv4Header, ident: u16, seq: u16) -> Vec<u8> {
    let mut m = vec![8, 0, 0, 0];
    m.extend_from_slice(&ident.to_be_bytes());
    m.extend_from_slice(&seq.to_be_bytes());
    m.extend_from_slice(&[0xab; 32]);
    let c = checksum(&[&m]);
    m[2..4].copy_from_slice(&c.to_be_bytes());
    ethernet(dst_mac, src_mac, ETHERTYPE_IPV4, &ipv4(ip, &m))
}

pub const ARP_REQUEST: u16 = 1;
pub const ARP_REPLY: u16 = 2;

#[derive(Debug, Clone, Copy)]
pub struct ArpFields {
    pub operation: u16,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

pub fn arp_frame(link_src: MacAddr, link_dst: MacAddr, a: &ArpFields) -> Vec<u8> {
    let mut p = Vec::with_capacity(28);
    p.extend_from_slice(&1u16.to_be_bytes());
    p.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    p.push(6);
    p.push(4);
    p.extend_from_slice(&a.operation.to_be_bytes());
    p.extend_from_slice(&a.sender_mac.0);
    p.extend_from_slice(&a.sender_ip.octets());
    p.extend_from_slice(&a.target_mac.0);
    p.extend_from_slice(&a.target_ip.octets());
    ethernet(link_dst, link_src, ETHERTYPE_ARP, &p)
}
