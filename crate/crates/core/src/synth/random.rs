//! Randomized mixed-protocol traces for property and oracle tests.

use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frames::{
    arp_frame, icmp_echo_frame, llc, tcp_frame, udp_frame, ArpFields, Ipv4Header, TcpHeader, ARP_REPLY, ARP_REQUEST,
    IPPROTO_ICMP, IPPROTO_TCP, IPPROTO_UDP,
};
use crate::packet::{Endianness, MacAddr, PcapHeader, PcapWriter, TcpFlags, TsResolution};

/// A frame and its offset in microseconds from the capture start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedFrame {
    pub micros: u64,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
struct Ep {
    ip: Ipv4Addr,
    mac: MacAddr,
}

/// `n_packets` frames among up to `max_endpoints` hosts: TCP with
/// consistent sequence numbers and partial/late ACKs, UDP, ARP, ICMP, IP
/// fragments and a few LLC frames. Gaps are mostly short with occasional
/// pauses longer than the default flow interval.
pub fn random_frames(seed: u64, n_packets: usize, max_endpoints: usize) -> Vec<TimedFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ep = rng.gen_range(2..=max_endpoints.max(2));
    let eps: Vec<Ep> = (0..n_ep)
        .map(|i| Ep {
            ip: Ipv4Addr::new(10, 0, rng.gen_range(0..3), 1 + i as u8 * 7),
            mac: MacAddr([0x02, 0, 0, rng.gen(), rng.gen(), i as u8]),
        })
        .collect();
    // Next sequence number per ordered pair, and data awaiting ACK.
    let mut seq: Vec<u32> = (0..n_ep * n_ep).map(|_| rng.gen()).collect();
    let mut sent: Vec<Vec<u32>> = vec![Vec::new(); n_ep * n_ep];
    let mut t: u64 = rng.gen_range(0..1_000_000);
    let mut out = Vec::with_capacity(n_packets);
    for _ in 0..n_packets {
        t += match rng.gen_range(0..100) {
            0..=4 => rng.gen_range(400_000..1_500_000),
            5..=9 => 0,
            _ => rng.gen_range(1..60_000),
        };
        let a = rng.gen_range(0..n_ep);
        let mut b = rng.gen_range(0..n_ep - 1);
        if b >= a {
            b += 1;
        }
        let (src, dst) = (eps[a], eps[b]);
        let ttl = rng.gen_range(30..=128);
        let frame = match rng.gen_range(0..100) {
            0..=54 => {
                let fwd = a * n_ep + b;
                let back = b * n_ep + a;
                let len = if rng.gen_bool(0.6) { rng.gen_range(1..200) } else { 0 };
                let mut flags = TcpFlags::from_bits_truncate(rng.gen::<u8>() & 0x3f);
                let ack = if rng.gen_bool(0.8) {
                    flags |= TcpFlags::ACK;
                    let pending = &sent[back];
                    if !pending.is_empty() && rng.gen_bool(0.7) {
                        let target = pending[rng.gen_range(0..pending.len())];
                        match rng.gen_range(0..3) {
                            0 => target.wrapping_sub(rng.gen_range(1..10)),
                            _ => target,
                        }
                    } else {
                        seq[back]
                    }
                } else {
                    flags.remove(TcpFlags::ACK);
                    rng.gen()
                };
                let s = seq[fwd];
                seq[fwd] = s.wrapping_add(len as u32);
                if len > 0 {
                    sent[fwd].push(seq[fwd]);
                    if sent[fwd].len() > 8 {
                        sent[fwd].remove(0);
                    }
                }
                let mut ip = Ipv4Header::new(src.ip, dst.ip, IPPROTO_TCP, ttl);
                if rng.gen_bool(0.05) {
                    ip.more_fragments = true;
                }
                let hdr = TcpHeader {
                    src_port: rng.gen_range(1000..1004),
                    dst_port: 502,
                    seq: s,
                    ack,
                    flags,
                    window: rng.gen(),
                };
                tcp_frame(src.mac, dst.mac, &ip, &hdr, &vec![0x5a; len])
            }
            55..=74 => {
                let ip = Ipv4Header::new(src.ip, dst.ip, IPPROTO_UDP, ttl);
                let len = rng.gen_range(0..300);
                udp_frame(src.mac, dst.mac, &ip, 5000, 5001, &vec![1; len])
            }
            75..=86 => {
                let request = rng.gen_bool(0.5);
                let fields = ArpFields {
                    operation: if request { ARP_REQUEST } else { ARP_REPLY },
                    sender_mac: src.mac,
                    sender_ip: src.ip,
                    target_mac: if request { MacAddr::ZERO } else { dst.mac },
                    target_ip: dst.ip,
                };
                let link_dst = if request { MacAddr::BROADCAST } else { dst.mac };
                arp_frame(src.mac, link_dst, &fields)
            }
            87..=93 => {
                let mut ip = Ipv4Header::new(src.ip, dst.ip, IPPROTO_ICMP, ttl);
                ip.ident = rng.gen();
                icmp_echo_frame(src.mac, dst.mac, &ip, 1, rng.gen())
            }
            94..=96 => {
                // Non-first fragment of a UDP datagram.
                let mut ip = Ipv4Header::new(src.ip, dst.ip, IPPROTO_UDP, ttl);
                ip.fragment_offset = rng.gen_range(1..100);
                let body = vec![3u8; rng.gen_range(8..100)];
                let raw = super::frames::ipv4(&ip, &body);
                super::frames::ethernet(dst.mac, src.mac, crate::packet::decode::ETHERTYPE_IPV4, &raw)
            }
            _ => llc(MacAddr([0x01, 0x80, 0xc2, 0, 0, 0]), src.mac, &[0; 35]),
        };
        out.push(TimedFrame { micros: t, frame });
    }
    out
}

/// Classic little-endian microsecond PCAP of `frames`.
pub fn pcap_bytes(start_time: u32, frames: &[TimedFrame]) -> Vec<u8> {
    let header = PcapHeader::ethernet(Endianness::Little, TsResolution::Micro);
    let mut w = PcapWriter::new(Vec::new(), header).expect("writing to memory");
    for f in frames {
        w.write_record(
            start_time + (f.micros / 1_000_000) as u32,
            (f.micros % 1_000_000) as u32,
            &f.frame,
        )
        .expect("writing to memory");
    }
    w.into_inner()
}
