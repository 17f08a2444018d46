//! Shared helpers for integration tests: a brute-force flow aggregator used
//! as an oracle, flow comparison and flow invariants.

#![allow(dead_code)]

use std::collections::HashMap;

use icsflow::flow::{DirectionStats, Endpoint, FlowKey, FlowProtocol, FlowRecord, TcpStats};
use icsflow::packet::{DecodedPacket, EtherKind, PacketStream, TcpFlags, Transport};

pub fn decode_bytes(bytes: &[u8]) -> Vec<DecodedPacket> {
    PacketStream::from_reader(bytes)
        .expect("valid header")
        .map(|p| p.expect("readable record"))
        .collect()
}

fn oracle_key(p: &DecodedPacket) -> Option<(FlowKey, bool)> {
    let (a, b, protocol) = match p.ether_kind {
        EtherKind::NonProtocol => return None,
        EtherKind::Arp => (Endpoint::Mac(p.link_src), Endpoint::Mac(p.link_dst), FlowProtocol::Arp),
        EtherKind::Ipv4 => {
            let proto = match p.transport {
                Transport::Tcp => FlowProtocol::Ipv4Tcp,
                Transport::Udp => FlowProtocol::Ipv4Udp,
                _ => FlowProtocol::Ipv4Other,
            };
            (Endpoint::Ip(p.net_src?), Endpoint::Ip(p.net_dst?), proto)
        }
    };
    let forward = a <= b;
    let (sender, receiver) = if forward { (a, b) } else { (b, a) };
    Some((
        FlowKey {
            sender,
            receiver,
            protocol,
        },
        forward,
    ))
}

fn direction_stats(pkts: &[&DecodedPacket], duration: f64) -> DirectionStats {
    if pkts.is_empty() {
        return DirectionStats::default();
    }
    let n = pkts.len() as f64;
    let bytes: Vec<u64> = pkts.iter().map(|p| p.frame_bytes as u64).collect();
    let payload: Vec<u64> = pkts.iter().map(|p| p.payload_bytes as u64).collect();
    let total: u64 = bytes.iter().sum();
    DirectionStats {
        packets: pkts.len() as u64,
        bytes_max: *bytes.iter().max().unwrap(),
        bytes_min: *bytes.iter().min().unwrap(),
        bytes_avg: total as f64 / n,
        load: if duration > 0.0 { total as f64 * 8.0 / duration } else { 0.0 },
        payload_max: *payload.iter().max().unwrap(),
        payload_min: *payload.iter().min().unwrap(),
        payload_avg: payload.iter().sum::<u64>() as f64 / n,
        inter_packet: if pkts.len() > 1 {
            (pkts[pkts.len() - 1].timestamp - pkts[0].timestamp) / (n - 1.0)
        } else {
            0.0
        },
    }
}

/// For each data segment in `dir`, the delay until the first later packet
/// of the opposite direction whose ACK covers it.
fn ack_delays(pkts: &[(&DecodedPacket, bool)], dir: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, (d, d_dir)) in pkts.iter().enumerate() {
        if *d_dir != dir || d.payload_bytes == 0 {
            continue;
        }
        let Some(tcp) = d.tcp else { continue };
        let seq_end = tcp.seq as u64 + d.payload_bytes as u64;
        for (a, a_dir) in &pkts[i + 1..] {
            if *a_dir == dir {
                continue;
            }
            let Some(at) = a.tcp else { continue };
            if !at.flags.contains(TcpFlags::ACK) {
                continue;
            }
            // Covering modulo 2^32: the forward distance from seq_end to
            // ack is less than half the sequence space.
            let dist = (at.ack as u64 + (1u64 << 32) - (seq_end % (1u64 << 32))) % (1u64 << 32);
            if dist < (1u64 << 31) {
                out.push(a.timestamp - d.timestamp);
                break;
            }
        }
    }
    out
}

fn tcp_stats(all: &[(&DecodedPacket, bool)], dir: bool) -> TcpStats {
    let pkts: Vec<&DecodedPacket> = all.iter().filter(|(_, d)| *d == dir).map(|(p, _)| *p).collect();
    if pkts.is_empty() {
        return TcpStats::default();
    }
    let n = pkts.len() as f64;
    let count = |f: TcpFlags| pkts.iter().filter(|p| p.tcp.is_some_and(|t| t.flags.contains(f))).count() as f64 / n;
    let delays = ack_delays(all, dir);
    let (mx, mn, avg) = if delays.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            delays.iter().cloned().fold(f64::MIN, f64::max),
            delays.iter().cloned().fold(f64::MAX, f64::min),
            delays.iter().sum::<f64>() / delays.len() as f64,
        )
    };
    TcpStats {
        ttl: pkts.iter().map(|p| p.ttl.unwrap_or(0) as f64).sum::<f64>() / n,
        ack_delay_max: mx,
        ack_delay_min: mn,
        ack_delay_avg: avg,
        ack_rate: count(TcpFlags::ACK),
        fin_rate: count(TcpFlags::FIN),
        psh_rate: count(TcpFlags::PSH),
        rst_rate: count(TcpFlags::RST),
        urg_rate: count(TcpFlags::URG),
        syn_rate: count(TcpFlags::SYN),
        win_tcp: pkts.iter().map(|p| p.tcp.map_or(0.0, |t| t.window as f64)).sum::<f64>() / n,
        fragment_rate: pkts.iter().filter(|p| p.ip_fragmented).count() as f64 / n,
    }
}

/// Brute-force aggregation: bucket packet indices per flow, then compute
/// every feature from the bucket.
pub fn oracle_flows(packets: &[DecodedPacket], interval: f64) -> Vec<FlowRecord> {
    let t0 = packets.first().map_or(0.0, |p| p.timestamp);
    let mut buckets: Vec<(FlowKey, Vec<(usize, bool)>)> = Vec::new();
    let mut current: HashMap<FlowKey, usize> = HashMap::new();
    for (i, p) in packets.iter().enumerate() {
        let Some((key, fwd)) = oracle_key(p) else { continue };
        let start_new = match current.get(&key) {
            None => true,
            Some(&b) => p.timestamp - packets[buckets[b].1[0].0].timestamp > interval,
        };
        if start_new {
            buckets.push((key, Vec::new()));
            current.insert(key, buckets.len() - 1);
        }
        buckets[current[&key]].1.push((i, fwd));
    }
    buckets
        .into_iter()
        .map(|(key, members)| {
            let all: Vec<(&DecodedPacket, bool)> = members.iter().map(|&(i, f)| (&packets[i], f)).collect();
            let start = all[0].0.timestamp;
            let end = all.iter().map(|(p, _)| p.timestamp).fold(f64::MIN, f64::max);
            let duration = end - start;
            let side = |dir: bool| -> Vec<&DecodedPacket> { all.iter().filter(|(_, d)| *d == dir).map(|(p, _)| *p).collect() };
            FlowRecord {
                key,
                start,
                end,
                start_offset: start - t0,
                end_offset: end - t0,
                duration,
                sender: direction_stats(&side(true), duration),
                receiver: direction_stats(&side(false), duration),
                tcp: (key.protocol == FlowProtocol::Ipv4Tcp).then(|| [tcp_stats(&all, true), tcp_stats(&all, false)]),
                labels: None,
            }
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn cmp_dir(a: &DirectionStats, b: &DirectionStats, tol: f64) -> Result<(), String> {
    if (a.packets, a.bytes_max, a.bytes_min, a.payload_max, a.payload_min)
        != (b.packets, b.bytes_max, b.bytes_min, b.payload_max, b.payload_min)
    {
        return Err(format!("integer fields differ: {a:?} vs {b:?}"));
    }
    for (x, y, name) in [
        (a.bytes_avg, b.bytes_avg, "bytes_avg"),
        (a.load, b.load, "load"),
        (a.payload_avg, b.payload_avg, "payload_avg"),
        (a.inter_packet, b.inter_packet, "inter_packet"),
    ] {
        if !close(x, y, tol * x.abs().max(1.0)) {
            return Err(format!("{name}: {x} vs {y}"));
        }
    }
    Ok(())
}

fn cmp_tcp(a: &TcpStats, b: &TcpStats, tol: f64) -> Result<(), String> {
    let fa = [
        a.ttl, a.ack_delay_max, a.ack_delay_min, a.ack_delay_avg, a.ack_rate, a.fin_rate, a.psh_rate, a.rst_rate,
        a.urg_rate, a.syn_rate, a.win_tcp, a.fragment_rate,
    ];
    let fb = [
        b.ttl, b.ack_delay_max, b.ack_delay_min, b.ack_delay_avg, b.ack_rate, b.fin_rate, b.psh_rate, b.rst_rate,
        b.urg_rate, b.syn_rate, b.win_tcp, b.fragment_rate,
    ];
    for (i, (x, y)) in fa.iter().zip(fb).enumerate() {
        if !close(*x, y, tol) {
            return Err(format!("tcp field {i}: {x} vs {y}"));
        }
    }
    Ok(())
}

/// Compare two flow lists as multisets keyed by (key, start). Integer
/// fields must match exactly; floats within `tol` (relative for loads and
/// other large magnitudes, absolute otherwise).
pub fn compare_flows(got: &[FlowRecord], want: &[FlowRecord], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} flows vs {} expected", got.len(), want.len()));
    }
    let index: HashMap<(FlowKey, u64), &FlowRecord> = want.iter().map(|f| ((f.key, f.start.to_bits()), f)).collect();
    for g in got {
        let w = index
            .get(&(g.key, g.start.to_bits()))
            .ok_or_else(|| format!("unexpected flow {:?} at {}", g.key, g.start))?;
        let ctx = |e: String| format!("{:?}@{}: {e}", g.key, g.start);
        for (x, y, name) in [
            (g.end, w.end, "end"),
            (g.start_offset, w.start_offset, "startOffset"),
            (g.end_offset, w.end_offset, "endOffset"),
            (g.duration, w.duration, "duration"),
        ] {
            if !close(x, y, tol) {
                return Err(ctx(format!("{name}: {x} vs {y}")));
            }
        }
        cmp_dir(&g.sender, &w.sender, tol).map_err(ctx)?;
        cmp_dir(&g.receiver, &w.receiver, tol).map_err(ctx)?;
        match (&g.tcp, &w.tcp) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                cmp_tcp(&a[0], &b[0], tol).map_err(ctx)?;
                cmp_tcp(&a[1], &b[1], tol).map_err(ctx)?;
            }
            _ => return Err(ctx("TCP block presence differs".into())),
        }
    }
    Ok(())
}

fn check_dir(d: &DirectionStats) -> Result<(), String> {
    if d.packets == 0 {
        return Ok(());
    }
    let ok = d.bytes_min as f64 <= d.bytes_avg + 1e-9
        && d.bytes_avg <= d.bytes_max as f64 + 1e-9
        && d.payload_min as f64 <= d.payload_avg + 1e-9
        && d.payload_avg <= d.payload_max as f64 + 1e-9
        && d.inter_packet >= 0.0
        && d.load >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(format!("min/avg/max ordering broken: {d:?}"))
    }
}

/// Invariants every emitted flow must satisfy.
pub fn flow_invariants(f: &FlowRecord, interval: f64) -> Result<(), String> {
    if !(f.duration >= 0.0 && f.duration <= interval + 1e-9) {
        return Err(format!("duration {} outside [0, {interval}]", f.duration));
    }
    if f.total_packets() == 0 {
        return Err("flow without packets".into());
    }
    check_dir(&f.sender)?;
    check_dir(&f.receiver)?;
    match (&f.tcp, f.key.protocol == FlowProtocol::Ipv4Tcp) {
        (Some(t), true) => {
            for s in t {
                let rates = [
                    s.ack_rate,
                    s.fin_rate,
                    s.psh_rate,
                    s.rst_rate,
                    s.urg_rate,
                    s.syn_rate,
                    s.fragment_rate,
                ];
                if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(format!("flag rate outside [0, 1]: {s:?}"));
                }
                if !(s.ack_delay_min <= s.ack_delay_avg + 1e-12 && s.ack_delay_avg <= s.ack_delay_max + 1e-12) {
                    return Err(format!("ack delay ordering broken: {s:?}"));
                }
            }
        }
        (None, false) => {}
        _ => return Err("TCP cells must be present exactly for TCP flows".into()),
    }
    Ok(())
}
