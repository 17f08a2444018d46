use std::net::Ipv4Addr;

use super::{ArpInfo, DecodedPacket, EtherKind, MacAddr, TcpFlags, TcpInfo, Transport};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_VLAN: u16 = 0x8100;

/// Largest value of the Ethernet type/length field that is a length (802.3).
const MAX_8023_LENGTH: u16 = 1500;

const ETH_HEADER: usize = 14;
const ARP_BODY: usize = 28;
const IPV4_MIN_HEADER: usize = 20;
const TCP_MIN_HEADER: usize = 20;
const UDP_HEADER: usize = 8;

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn mac(b: &[u8], at: usize) -> MacAddr {
    let mut m = [0u8; 6];
    m.copy_from_slice(&b[at..at + 6]);
    MacAddr(m)
}

fn ipv4(b: &[u8], at: usize) -> Ipv4Addr {
    Ipv4Addr::new(b[at], b[at + 1], b[at + 2], b[at + 3])
}

/// Decode one Ethernet frame.
///
/// Never fails: frames shorter than the headers they announce come back as
/// `NonProtocol` with `malformed` set. Frames under 14 bytes are treated the
/// same way, with whatever MAC bytes are present.
pub fn decode_packet(raw: &[u8], timestamp: f64) -> DecodedPacket {
    let frame_bytes = raw.len() as u32;
    if raw.len() < ETH_HEADER {
        let mut dst = [0u8; 6];
        let mut src = [0u8; 6];
        for (i, b) in raw.iter().enumerate().take(12) {
            if i < 6 {
                dst[i] = *b;
            } else {
                src[i - 6] = *b;
            }
        }
        return DecodedPacket::non_protocol(timestamp, MacAddr(src), MacAddr(dst), frame_bytes, true);
    }

    let link_dst = mac(raw, 0);
    let link_src = mac(raw, 6);
    let mut ether_type = be16(raw, 12);
    let mut l3 = ETH_HEADER;

    // One 802.1Q tag is unwrapped; stacked tags are left undecoded.
    if ether_type == ETHERTYPE_VLAN {
        if raw.len() < ETH_HEADER + 4 {
            return DecodedPacket::non_protocol(timestamp, link_src, link_dst, frame_bytes, true);
        }
        ether_type = be16(raw, 16);
        l3 += 4;
    }

    let degraded = |malformed| DecodedPacket::non_protocol(timestamp, link_src, link_dst, frame_bytes, malformed);

    if ether_type <= MAX_8023_LENGTH {
        return degraded(false);
    }

    match ether_type {
        ETHERTYPE_ARP => {
            if raw.len() < l3 + ARP_BODY {
                return degraded(true);
            }
            let hlen = raw[l3 + 4];
            let plen = raw[l3 + 5];
            if hlen != 6 || plen != 4 {
                return degraded(true);
            }
            let arp = ArpInfo {
                operation: be16(raw, l3 + 6),
                sender_mac: mac(raw, l3 + 8),
                sender_ip: ipv4(raw, l3 + 14),
                target_mac: mac(raw, l3 + 18),
                target_ip: ipv4(raw, l3 + 24),
            };
            DecodedPacket {
                ether_kind: EtherKind::Arp,
                arp: Some(arp),
                malformed: false,
                ..degraded(false)
            }
        }
        ETHERTYPE_IPV4 => decode_ipv4(raw, l3, timestamp, link_src, link_dst).unwrap_or_else(|| degraded(true)),
        // IPv6 and everything else cannot be keyed.
        _ => degraded(false),
    }
}

fn decode_ipv4(
    raw: &[u8],
    l3: usize,
    timestamp: f64,
    link_src: MacAddr,
    link_dst: MacAddr,
) -> Option<DecodedPacket> {
    if raw.len() < l3 + IPV4_MIN_HEADER {
        return None;
    }
    let version = raw[l3] >> 4;
    let ihl = usize::from(raw[l3] & 0x0f) * 4;
    if version != 4 || ihl < IPV4_MIN_HEADER || raw.len() < l3 + ihl {
        return None;
    }
    let total_len = usize::from(be16(raw, l3 + 2));
    if total_len < ihl {
        return None;
    }
    let flags_frag = be16(raw, l3 + 6);
    let more_fragments = flags_frag & 0x2000 != 0;
    let frag_offset = flags_frag & 0x1fff;
    let ttl = raw[l3 + 8];
    let proto = raw[l3 + 9];
    let net_src = ipv4(raw, l3 + 12);
    let net_dst = ipv4(raw, l3 + 16);
    let l4 = l3 + ihl;
    let frame_bytes = raw.len() as u32;

    let mut pkt = DecodedPacket {
        timestamp,
        link_src,
        link_dst,
        ether_kind: EtherKind::Ipv4,
        net_src: Some(net_src),
        net_dst: Some(net_dst),
        transport: Transport::Other,
        src_port: None,
        dst_port: None,
        frame_bytes,
        payload_bytes: 0,
        ttl: Some(ttl),
        tcp: None,
        ip_fragmented: more_fragments || frag_offset > 0,
        arp: None,
        malformed: false,
    };

    let ip_payload = total_len - ihl;
    // Non-first fragments carry no transport header.
    let payload = if frag_offset > 0 {
        ip_payload
    } else {
        match proto {
            6 => {
                if raw.len() < l4 + TCP_MIN_HEADER {
                    return None;
                }
                let data_offset = usize::from(raw[l4 + 12] >> 4) * 4;
                if data_offset < TCP_MIN_HEADER || raw.len() < l4 + data_offset {
                    return None;
                }
                pkt.transport = Transport::Tcp;
                pkt.src_port = Some(be16(raw, l4));
                pkt.dst_port = Some(be16(raw, l4 + 2));
                pkt.tcp = Some(TcpInfo {
                    flags: TcpFlags::from_bits_truncate(raw[l4 + 13]),
                    seq: be32(raw, l4 + 4),
                    ack: be32(raw, l4 + 8),
                    window: be16(raw, l4 + 14),
                });
                ip_payload.saturating_sub(data_offset)
            }
            17 => {
                if raw.len() < l4 + UDP_HEADER {
                    return None;
                }
                pkt.transport = Transport::Udp;
                pkt.src_port = Some(be16(raw, l4));
                pkt.dst_port = Some(be16(raw, l4 + 2));
                ip_payload.saturating_sub(UDP_HEADER)
            }
            _ => ip_payload,
        }
    };
    pkt.payload_bytes = (payload as u32).min(frame_bytes);
    Some(pkt)
}
