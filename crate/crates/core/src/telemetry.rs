//! Run log, metric samples, derived metrics and export.
//!
//! The event log is the source of truth: every figure in a [`Summary`] is
//! recomputed from it. Metric samples are a separate, optional stream and
//! never enter the log hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fabric::TrafficClass;
use crate::simkernel::VirtualTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    RunStart { scenario: String, mode: String, seed: u64, config_hash: String },
    RunEnd,
    /// The full effective configuration of the run.
    EffectiveConfig { config: serde_json::Value },
    ScriptError { detail: String },
    ChannelInfo { channel: u32, group: String, interval_us: u64 },
    CatalogInfo { chunk_duration_us: u64 },

    Inject {
        pkt: u64,
        size: u32,
        class: TrafficClass,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        msg: Option<u64>,
    },
    LinkTx { pkt: u64, size: u32, class: TrafficClass, fp: bool },
    Replicate { pkt: u64, size: u32, extra: u32 },
    Deliver { pkt: u64, size: u32, class: TrafficClass },
    Drop { pkt: u64, size: u32, reason: String },
    InFlight { pkt: u64, size: u32 },
    LinkState { up: bool },

    Publish { name: String },
    Unpublish { name: String },
    Subscribe { name: String },
    Unsubscribe { name: String },
    Match { name: String, publisher: String, subscriber: String },
    FidUpdate { name: String, fid: String, epoch: u64 },
    PceTopology { link: String, up: bool, epoch: u64, invalidated: u64 },
    RoutingState { digest: String },

    GroupOpen { group: u64, url: String },
    GroupJoin { group: u64, member: String },
    GroupClose { group: u64, members: u32 },
    GroupServed { group: u64, msg: u64, packets: u32, members: u32 },
    Spurious { pkt: u64 },
    NapError { detail: String },

    ServerRequest { url: String },
    ServerResponse { url: String, status: u16, size: u64, class: TrafficClass, msg: u64 },
    ServerLost { url: String },
    ServerState { up: bool },
    SurrogateState { on: bool },

    HttpRequest { req: u64, url: String, server: String },
    HttpResponse { req: u64, url: String, status: u16, size: u64, class: TrafficClass },
    ChunkArrival { index: u64, bitrate: u64, size: u64, throughput_bps: u64 },
    PlaybackStart { index: u64 },
    Stall { start: VirtualTime, end: VirtualTime, truncated: bool },
    BitrateSwitch { from: u64, to: u64 },
    Timeout { req: u64, url: String },
    DnsFailover { from: String, to: String, exhausted: bool },
    LateResponse { req: u64 },

    IptvEmit { channel: u32, seq: u64 },
    IptvRx { channel: u32, seq: u64 },
    Zap { from: Option<u32>, to: u32 },
    Acquisition { channel: u32, acquisition_us: u64 },
    IgmpJoin { group: String },
    IgmpLeave { group: String },
    IgmpWarning { detail: String },

    StpReconverge { until: VirtualTime },
    StpTree { links: Vec<String> },
    SnoopFlush,

    /// A metric sample (only in the sample stream).
    Sample { metric: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: VirtualTime,
    pub element: String,
    #[serde(flatten)]
    pub event: Event,
}

impl LogRecord {
    pub fn is_sample(&self) -> bool {
        matches!(self.event, Event::Sample { .. })
    }
}

/// Run-wide collector.
#[derive(Debug, Clone, Default)]
pub struct Telemetry {
    samples_enabled: bool,
    events: Vec<LogRecord>,
    samples: Vec<LogRecord>,
}

const HASH_SEED: &[u8] = b"pointsim event log v1";

/// SHA-256 over a seed line followed by the canonical JSONL form of every
/// record, so it equals the hash of an exported event-only log.
pub fn chain_hash<'a, I: IntoIterator<Item = &'a LogRecord>>(records: I) -> String {
    let mut h = Sha256::new();
    h.update(HASH_SEED);
    h.update(b"\n");
    let mut line = Vec::with_capacity(256);
    for r in records {
        line.clear();
        serde_json::to_writer(&mut line, r).expect("record serializes");
        line.push(b'\n');
        h.update(&line);
    }
    hex::encode(h.finalize())
}

impl Telemetry {
    pub fn new(samples_enabled: bool) -> Self {
        Telemetry {
            samples_enabled,
            ..Default::default()
        }
    }

    pub fn samples_enabled(&self) -> bool {
        self.samples_enabled
    }

    pub fn log(&mut self, t: VirtualTime, element: &str, event: Event) {
        self.events.push(LogRecord {
            t,
            element: element.to_owned(),
            event,
        });
    }

    /// Appends a sample stamped with `t`; a no-op when samples are off.
    pub fn record(&mut self, t: VirtualTime, element: &str, metric: &str, value: f64) {
        if self.samples_enabled {
            self.samples.push(LogRecord {
                t,
                element: element.to_owned(),
                event: Event::Sample {
                    metric: metric.to_owned(),
                    value,
                },
            });
        }
    }

    pub fn events(&self) -> &[LogRecord] {
        &self.events
    }

    pub fn samples(&self) -> &[LogRecord] {
        &self.samples
    }

    pub fn event_hash(&self) -> String {
        chain_hash(&self.events)
    }

    pub fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts {
            events: self.events,
            samples: self.samples,
        }
    }
}

/// Event log and sample stream of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunArtifacts {
    pub events: Vec<LogRecord>,
    pub samples: Vec<LogRecord>,
}

impl RunArtifacts {
    pub fn event_hash(&self) -> String {
        chain_hash(&self.events)
    }

    /// Events and samples merged by time; events first on ties.
    fn merged(&self) -> impl Iterator<Item = &LogRecord> {
        let mut e = self.events.iter().peekable();
        let mut s = self.samples.iter().peekable();
        std::iter::from_fn(move || match (e.peek(), s.peek()) {
            (Some(a), Some(b)) => {
                if b.t < a.t {
                    s.next()
                } else {
                    e.next()
                }
            }
            (Some(_), None) => e.next(),
            (None, Some(_)) => s.next(),
            (None, None) => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in self.merged() {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut a = RunArtifacts::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            if rec.is_sample() {
                a.samples.push(rec);
            } else {
                a.events.push(rec);
            }
        }
        Ok(a)
    }

    pub fn export_jsonl(&self, path: &Path) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(io::BufWriter::new(f))
    }

    pub fn import_jsonl(path: &Path) -> io::Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(io::BufReader::new(f))
    }

    /// Metric samples as `t,element,metric,value` (t in microseconds).
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t", "element", "metric", "value"])?;
        for r in &self.samples {
            if let Event::Sample { metric, value } = &r.event {
                c.write_record([
                    r.t.as_micros().to_string(),
                    r.element.clone(),
                    metric.clone(),
                    value.to_string(),
                ])?;
            }
        }
        c.flush()
    }

    pub fn export_csv(&self, path: &Path) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(f))
    }

    /// Reads samples back from CSV, skipping `#` comment lines.
    pub fn read_csv<R: io::Read>(r: R) -> io::Result<Vec<LogRecord>> {
        let mut c = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut out = Vec::new();
        for row in c.records() {
            let row = row.map_err(io::Error::other)?;
            let bad = |what: &str| io::Error::new(io::ErrorKind::InvalidData, what.to_owned());
            let t: u64 = row.get(0).ok_or_else(|| bad("t"))?.parse().map_err(|_| bad("t"))?;
            let value: f64 = row.get(3).ok_or_else(|| bad("value"))?.parse().map_err(|_| bad("value"))?;
            out.push(LogRecord {
                t: VirtualTime(t),
                element: row.get(1).ok_or_else(|| bad("element"))?.to_owned(),
                event: Event::Sample {
                    metric: row.get(2).ok_or_else(|| bad("metric"))?.to_owned(),
                    value,
                },
            });
        }
        Ok(out)
    }
}

/// Maximal delivery gaps longer than `max_gap`, as `[due, resumed)` where
/// `due` is one nominal interval after the last arrival (when the next
/// payload was expected) and `resumed` is the next arrival. A gap running
/// to the end of the active period ends there. No arrivals at all gives one
/// interval covering the whole active period.
pub fn disruption_intervals(
    arrivals: &[VirtualTime],
    active: (VirtualTime, VirtualTime),
    nominal: VirtualTime,
    max_gap: VirtualTime,
) -> Vec<(VirtualTime, VirtualTime)> {
    let mut out = Vec::new();
    let Some(&first) = arrivals.first() else {
        if active.1 > active.0 {
            out.push(active);
        }
        return out;
    };
    let mut prev = first;
    for &a in &arrivals[1..] {
        if a.saturating_sub(prev) > max_gap {
            out.push((prev + nominal, a));
        }
        prev = a;
    }
    if active.1.saturating_sub(prev) > max_gap {
        out.push((prev + nominal, active.1));
    }
    out
}

/// Byte accounting identity of the forwarding plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub injected: u64,
    pub replicated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.injected + self.replicated == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub chunks: u64,
    pub stalls: u64,
    pub stall_us: u64,
    pub longest_stall_us: u64,
    pub downshifts: u64,
    pub upshifts: u64,
    pub timeouts: u64,
    pub failovers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StbSummary {
    pub packets: u64,
    pub acquisitions: Vec<u64>,
    pub disruptions: Vec<(VirtualTime, VirtualTime)>,
}

impl StbSummary {
    pub fn longest_disruption_us(&self) -> u64 {
        self.disruptions
            .iter()
            .map(|(a, b)| b.saturating_sub(*a).as_micros())
            .max()
            .unwrap_or(0)
    }
}

/// Everything a report needs, recomputed from an event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub end_us: u64,
    pub event_hash: String,
    /// link -> class -> bytes transmitted.
    pub link_bytes: BTreeMap<String, BTreeMap<String, u64>>,
    pub conservation: Conservation,
    /// class -> (client deliveries, server transmissions).
    pub merge: BTreeMap<String, (u64, u64)>,
    pub clients: BTreeMap<String, ClientSummary>,
    pub stbs: BTreeMap<String, StbSummary>,
    pub false_positives: u64,
    pub spurious: u64,
    pub link_events: u64,
}

impl Summary {
    pub fn merge_ratio(&self, class: &str) -> Option<f64> {
        self.merge
            .get(class)
            .filter(|(_, s)| *s > 0)
            .map(|(d, s)| *d as f64 / *s as f64)
    }

    /// Bytes of `class` sent on every directed link whose label starts with `prefix`.
    pub fn bytes_on(&self, prefix: &str, class: &str) -> u64 {
        self.link_bytes
            .iter()
            .filter(|(l, _)| l.starts_with(prefix))
            .filter_map(|(_, m)| m.get(class))
            .sum()
    }

    pub fn total_stalls(&self) -> u64 {
        self.clients.values().map(|c| c.stalls).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario     {}", self.scenario);
        let _ = writeln!(s, "mode         {}", self.mode);
        let _ = writeln!(s, "seed         {}", self.seed);
        let _ = writeln!(s, "config hash  {}", self.config_hash);
        let _ = writeln!(s, "event hash   {}", self.event_hash);
        let _ = writeln!(s, "end          {}", VirtualTime(self.end_us));
        let c = &self.conservation;
        let _ = writeln!(
            s,
            "\nconservation injected={} replicated={} delivered={} dropped={} in_flight={} ({})",
            c.injected,
            c.replicated,
            c.delivered,
            c.dropped,
            c.in_flight,
            if c.holds() { "ok" } else { "VIOLATED" }
        );
        let _ = writeln!(s, "false positives {}  spurious deliveries {}", self.false_positives, self.spurious);
        if !self.link_bytes.is_empty() {
            let _ = writeln!(s, "\nlink bytes");
            for (l, m) in &self.link_bytes {
                let total: u64 = m.values().sum();
                let parts: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(s, "  {l:<28} {total:>12}  {}", parts.join(" "));
            }
        }
        if !self.merge.is_empty() {
            let _ = writeln!(s, "\nmerge ratio");
            for (k, (d, t)) in &self.merge {
                let r = self.merge_ratio(k).map_or("-".into(), |r| format!("{r:.3}"));
                let _ = writeln!(s, "  {k:<10} deliveries={d} upstream={t} ratio={r}");
            }
        }
        if !self.clients.is_empty() {
            let _ = writeln!(s, "\nhls clients");
            for (n, c) in &self.clients {
                let _ = writeln!(
                    s,
                    "  {n:<10} chunks={} stalls={} stall={} longest={} down={} up={} timeouts={} failovers={}",
                    c.chunks,
                    c.stalls,
                    VirtualTime(c.stall_us),
                    VirtualTime(c.longest_stall_us),
                    c.downshifts,
                    c.upshifts,
                    c.timeouts,
                    c.failovers
                );
            }
        }
        if !self.stbs.is_empty() {
            let _ = writeln!(s, "\nset-top boxes");
            for (n, b) in &self.stbs {
                let acq: Vec<String> = b.acquisitions.iter().map(|a| VirtualTime(*a).to_string()).collect();
                let _ = writeln!(
                    s,
                    "  {n:<10} packets={} acquisitions=[{}] disruptions={} longest={}",
                    b.packets,
                    acq.join(", "),
                    b.disruptions.len(),
                    VirtualTime(b.longest_disruption_us())
                );
                for (a, e) in &b.disruptions {
                    let _ = writeln!(s, "    [{a}, {e}) {}", e.saturating_sub(*a));
                }
            }
        }
        s
    }
}

fn class_name(c: TrafficClass) -> String {
    serde_json::to_value(c)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Recomputes a summary from an event log alone.
pub fn summarize(events: &[LogRecord]) -> Summary {
    let mut s = Summary {
        event_hash: chain_hash(events),
        ..Default::default()
    };
    let mut chunk_d = None;
    let mut channels: BTreeMap<u32, u64> = BTreeMap::new();
    let mut rx: BTreeMap<String, Vec<VirtualTime>> = BTreeMap::new();
    let mut stb_start: BTreeMap<String, VirtualTime> = BTreeMap::new();
    let mut stb_channel: BTreeMap<String, u32> = BTreeMap::new();
    for r in events {
        s.end_us = s.end_us.max(r.t.as_micros());
        match &r.event {
            Event::RunStart { scenario, mode, seed, config_hash } => {
                s.scenario = scenario.clone();
                s.mode = mode.clone();
                s.seed = *seed;
                s.config_hash = config_hash.clone();
            }
            Event::CatalogInfo { chunk_duration_us } => chunk_d = Some(*chunk_duration_us),
            Event::ChannelInfo { channel, interval_us, .. } => {
                channels.insert(*channel, *interval_us);
            }
            Event::Inject { size, .. } => s.conservation.injected += *size as u64,
            Event::Replicate { size, extra, .. } => s.conservation.replicated += *size as u64 * *extra as u64,
            Event::Deliver { size, .. } => s.conservation.delivered += *size as u64,
            Event::Drop { size, .. } => s.conservation.dropped += *size as u64,
            Event::InFlight { size, .. } => s.conservation.in_flight += *size as u64,
            Event::LinkTx { size, class, fp, .. } => {
                *s.link_bytes
                    .entry(r.element.clone())
                    .or_default()
                    .entry(class_name(*class))
                    .or_insert(0) += *size as u64;
                if *fp {
                    s.false_positives += 1;
                }
            }
            Event::LinkState { .. } => s.link_events += 1,
            Event::Spurious { .. } => s.spurious += 1,
            Event::ServerResponse { status: 200, class, .. } => {
                s.merge.entry(class_name(*class)).or_default().1 += 1;
            }
            Event::HttpResponse { status: 200, class, .. } => {
                s.merge.entry(class_name(*class)).or_default().0 += 1;
            }
            Event::ChunkArrival { .. } => s.clients.entry(r.element.clone()).or_default().chunks += 1,
            Event::Stall { start, end, .. } => {
                let c = s.clients.entry(r.element.clone()).or_default();
                let d = end.saturating_sub(*start).as_micros();
                c.stalls += 1;
                c.stall_us += d;
                c.longest_stall_us = c.longest_stall_us.max(d);
            }
            Event::BitrateSwitch { from, to } => {
                let c = s.clients.entry(r.element.clone()).or_default();
                if to < from {
                    c.downshifts += 1;
                } else {
                    c.upshifts += 1;
                }
            }
            Event::Timeout { .. } => s.clients.entry(r.element.clone()).or_default().timeouts += 1,
            Event::DnsFailover { .. } => s.clients.entry(r.element.clone()).or_default().failovers += 1,
            Event::Zap { to, .. } => {
                stb_start.entry(r.element.clone()).or_insert(r.t);
                stb_channel.insert(r.element.clone(), *to);
                s.stbs.entry(r.element.clone()).or_default();
            }
            Event::IptvRx { .. } => {
                s.stbs.entry(r.element.clone()).or_default().packets += 1;
                rx.entry(r.element.clone()).or_default().push(r.t);
            }
            Event::Acquisition { acquisition_us, .. } => {
                s.stbs.entry(r.element.clone()).or_default().acquisitions.push(*acquisition_us);
            }
            _ => {}
        }
    }
    let end = VirtualTime(s.end_us);
    for (name, stb) in s.stbs.iter_mut() {
        let Some(interval) = stb_channel.get(name).and_then(|c| channels.get(c)) else {
            continue;
        };
        let arrivals = rx.get(name).map(Vec::as_slice).unwrap_or(&[]);
        // Disruptions are counted once the channel has been acquired.
        let start = arrivals.first().copied().unwrap_or(stb_start[name]);
        let nominal = VirtualTime(*interval);
        stb.disruptions = disruption_intervals(arrivals, (start, end), nominal, VirtualTime(2 * interval));
    }
    let _ = chunk_d;
    s
}
