use indexmap::IndexMap;

use super::{key_and_direction, Direction, DirectionStats, FlowError, FlowKey, FlowProtocol, FlowRecord, TcpStats};
use crate::packet::{DecodedPacket, TcpFlags};

/// Flow interval in seconds used when none is given.
pub const DEFAULT_INTERVAL: f64 = 0.5;

/// Timestamp regressions smaller than this are treated as capture jitter.
const JITTER_TOLERANCE: f64 = 1e-3;

/// `ack` acknowledges everything up to and including `seq_end` (mod 2^32).
fn ack_covers(ack: u32, seq_end: u32) -> bool {
    (ack.wrapping_sub(seq_end) as i32) >= 0
}

#[derive(Debug, Clone, Default)]
struct DirectionAcc {
    packets: u64,
    bytes_sum: u64,
    bytes_min: u64,
    bytes_max: u64,
    payload_sum: u64,
    payload_min: u64,
    payload_max: u64,
    last_ts: Option<f64>,
    gap_sum: f64,
    ttl_sum: u64,
    ack: u64,
    fin: u64,
    psh: u64,
    rst: u64,
    urg: u64,
    syn: u64,
    window_sum: u64,
    fragments: u64,
    delay_count: u64,
    delay_sum: f64,
    delay_min: f64,
    delay_max: f64,
    /// Data segments sent in this direction and not yet acknowledged:
    /// (sequence end, send time).
    unmatched: Vec<(u32, f64)>,
}

impl DirectionAcc {
    fn add(&mut self, pkt: &DecodedPacket) {
        let bytes = u64::from(pkt.frame_bytes);
        let payload = u64::from(pkt.payload_bytes);
        if self.packets == 0 {
            self.bytes_min = bytes;
            self.bytes_max = bytes;
            self.payload_min = payload;
            self.payload_max = payload;
        } else {
            self.bytes_min = self.bytes_min.min(bytes);
            self.bytes_max = self.bytes_max.max(bytes);
            self.payload_min = self.payload_min.min(payload);
            self.payload_max = self.payload_max.max(payload);
        }
        self.packets += 1;
        self.bytes_sum += bytes;
        self.payload_sum += payload;
        if let Some(prev) = self.last_ts {
            self.gap_sum += pkt.timestamp - prev;
        }
        self.last_ts = Some(pkt.timestamp);
        self.ttl_sum += u64::from(pkt.ttl.unwrap_or(0));
        self.fragments += u64::from(pkt.ip_fragmented);
        if let Some(tcp) = pkt.tcp {
            let f = tcp.flags;
            self.ack += u64::from(f.contains(TcpFlags::ACK));
            self.fin += u64::from(f.contains(TcpFlags::FIN));
            self.psh += u64::from(f.contains(TcpFlags::PSH));
            self.rst += u64::from(f.contains(TcpFlags::RST));
            self.urg += u64::from(f.contains(TcpFlags::URG));
            self.syn += u64::from(f.contains(TcpFlags::SYN));
            self.window_sum += u64::from(tcp.window);
        }
    }

    fn record_delay(&mut self, delay: f64) {
        if self.delay_count == 0 {
            self.delay_min = delay;
            self.delay_max = delay;
        } else {
            self.delay_min = self.delay_min.min(delay);
            self.delay_max = self.delay_max.max(delay);
        }
        self.delay_count += 1;
        self.delay_sum += delay;
    }

    fn general(&self, duration: f64) -> DirectionStats {
        if self.packets == 0 {
            return DirectionStats::default();
        }
        let n = self.packets as f64;
        DirectionStats {
            packets: self.packets,
            bytes_max: self.bytes_max,
            bytes_min: self.bytes_min,
            bytes_avg: self.bytes_sum as f64 / n,
            load: if duration > 0.0 {
                (self.bytes_sum * 8) as f64 / duration
            } else {
                0.0
            },
            payload_max: self.payload_max,
            payload_min: self.payload_min,
            payload_avg: self.payload_sum as f64 / n,
            inter_packet: if self.packets > 1 {
                self.gap_sum / (n - 1.0)
            } else {
                0.0
            },
        }
    }

    fn tcp(&self) -> TcpStats {
        if self.packets == 0 {
            return TcpStats::default();
        }
        let n = self.packets as f64;
        let rate = |c: u64| c as f64 / n;
        let (ack_delay_max, ack_delay_min, ack_delay_avg) = if self.delay_count > 0 {
            (self.delay_max, self.delay_min, self.delay_sum / self.delay_count as f64)
        } else {
            (0.0, 0.0, 0.0)
        };
        TcpStats {
            ttl: self.ttl_sum as f64 / n,
            ack_delay_max,
            ack_delay_min,
            ack_delay_avg,
            ack_rate: rate(self.ack),
            fin_rate: rate(self.fin),
            psh_rate: rate(self.psh),
            rst_rate: rate(self.rst),
            urg_rate: rate(self.urg),
            syn_rate: rate(self.syn),
            win_tcp: self.window_sum as f64 / n,
            fragment_rate: rate(self.fragments),
        }
    }
}

/// Running state of one open flow.
#[derive(Debug, Clone)]
pub struct FlowAccumulator {
    key: FlowKey,
    first_ts: f64,
    last_ts: f64,
    forward: DirectionAcc,
    backward: DirectionAcc,
}

impl FlowAccumulator {
    pub fn new(key: FlowKey, first_ts: f64) -> Self {
        FlowAccumulator {
            key,
            first_ts,
            last_ts: first_ts,
            forward: DirectionAcc::default(),
            backward: DirectionAcc::default(),
        }
    }

    pub fn key(&self) -> &FlowKey {
        &self.key
    }

    pub fn first_ts(&self) -> f64 {
        self.first_ts
    }

    pub fn packet_count(&self) -> u64 {
        self.forward.packets + self.backward.packets
    }

    pub fn add(&mut self, pkt: &DecodedPacket, direction: Direction) {
        self.last_ts = self.last_ts.max(pkt.timestamp);
        let (own, other) = match direction {
            Direction::Forward => (&mut self.forward, &mut self.backward),
            Direction::Backward => (&mut self.backward, &mut self.forward),
        };
        own.add(pkt);

        if self.key.protocol != FlowProtocol::Ipv4Tcp {
            return;
        }
        let Some(tcp) = pkt.tcp else { return };
        // This packet's ACK settles the earliest-waiting opposite-direction
        // segments it covers; then its own data starts waiting.
        if tcp.flags.contains(TcpFlags::ACK) && !other.unmatched.is_empty() {
            let mut delays = Vec::new();
            other.unmatched.retain(|&(seq_end, sent)| {
                if ack_covers(tcp.ack, seq_end) {
                    delays.push(pkt.timestamp - sent);
                    false
                } else {
                    true
                }
            });
            for d in delays {
                other.record_delay(d);
            }
        }
        if pkt.payload_bytes > 0 {
            own.unmatched.push((tcp.seq.wrapping_add(pkt.payload_bytes), pkt.timestamp));
        }
    }

    /// Freeze the accumulated state into a [`FlowRecord`]. `capture_t0` is
    /// the timestamp of the first packet in the capture.
    pub fn finalize(&self, capture_t0: f64) -> FlowRecord {
        let duration = self.last_ts - self.first_ts;
        let tcp = (self.key.protocol == FlowProtocol::Ipv4Tcp).then(|| [self.forward.tcp(), self.backward.tcp()]);
        FlowRecord {
            key: self.key,
            start: self.first_ts,
            end: self.last_ts,
            start_offset: self.first_ts - capture_t0,
            end_offset: self.last_ts - capture_t0,
            duration,
            sender: self.forward.general(duration),
            receiver: self.backward.general(duration),
            tcp,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratorStats {
    pub packets_seen: u64,
    pub packets_discarded: u64,
    pub flows_emitted: u64,
    pub timestamp_regressions: u64,
}

/// Streaming flow aggregator with lazy per-key flushing.
pub struct FlowGenerator {
    interval: f64,
    open: IndexMap<FlowKey, FlowAccumulator>,
    capture_t0: Option<f64>,
    latest_ts: f64,
    stats: GeneratorStats,
}

impl FlowGenerator {
    pub fn new(interval: f64) -> Result<Self, FlowError> {
        if !(interval.is_finite() && interval > 0.0) {
            return Err(FlowError::BadInterval(interval));
        }
        Ok(FlowGenerator {
            interval,
            open: IndexMap::new(),
            capture_t0: None,
            latest_ts: f64::NEG_INFINITY,
            stats: GeneratorStats::default(),
        })
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn stats(&self) -> &GeneratorStats {
        &self.stats
    }

    /// Feed one packet; returns the flow it closed, if any.
    pub fn push(&mut self, pkt: &DecodedPacket) -> Option<FlowRecord> {
        self.stats.packets_seen += 1;
        let t0 = *self.capture_t0.get_or_insert(pkt.timestamp);
        if pkt.timestamp < self.latest_ts - JITTER_TOLERANCE {
            self.stats.timestamp_regressions += 1;
            log::warn!(
                "packet at {:.6} arrives {:.6}s after a later one",
                pkt.timestamp,
                self.latest_ts - pkt.timestamp
            );
        }
        self.latest_ts = self.latest_ts.max(pkt.timestamp);

        let Some((key, direction)) = key_and_direction(pkt) else {
            self.stats.packets_discarded += 1;
            return None;
        };

        let mut flushed = None;
        match self.open.get_mut(&key) {
            Some(acc) => {
                if pkt.timestamp - acc.first_ts > self.interval {
                    flushed = Some(acc.finalize(t0));
                    *acc = FlowAccumulator::new(key, pkt.timestamp);
                }
                acc.add(pkt, direction);
            }
            None => {
                let mut acc = FlowAccumulator::new(key, pkt.timestamp);
                acc.add(pkt, direction);
                self.open.insert(key, acc);
            }
        }
        if flushed.is_some() {
            self.stats.flows_emitted += 1;
        }
        flushed
    }

    /// Flush every open flow in first-seen key order.
    pub fn finish(mut self) -> (Vec<FlowRecord>, GeneratorStats) {
        let t0 = self.capture_t0.unwrap_or(0.0);
        let rest: Vec<FlowRecord> = self.open.values().map(|acc| acc.finalize(t0)).collect();
        self.stats.flows_emitted += rest.len() as u64;
        (rest, self.stats)
    }
}

/// Aggregate a whole packet sequence into flows.
pub fn generate_flows<I>(packets: I, interval: f64) -> Result<(Vec<FlowRecord>, GeneratorStats), FlowError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<DecodedPacket>,
{
    use std::borrow::Borrow;
    let mut gen = FlowGenerator::new(interval)?;
    let mut flows = Vec::new();
    for p in packets {
        if let Some(f) = gen.push(p.borrow()) {
            flows.push(f);
        }
    }
    let (rest, stats) = gen.finish();
    flows.extend(rest);
    Ok((flows, stats))
}
