//! Application models: live HLS server and adaptive client, IPTV channels
//! and set-top boxes.
//!
//! Clients are driven by the scenario engine through [`HlsClient::on_input`],
//! which returns what the client wants done next.

use serde::{Deserialize, Serialize};

use crate::simkernel::VirtualTime;

/// Live HLS catalog shared by the primary and surrogate servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlsCatalog {
    pub host: String,
    pub chunk_duration: VirtualTime,
    /// Ascending, bits per second.
    pub bitrates: Vec<u64>,
    /// Chunks listed in the playlist window.
    pub window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Playlist,
    Chunk { index: u64, bitrate: u64 },
}

/// What a response carries, at message level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Body {
    Playlist {
        /// Newest available chunk, if any.
        live_edge: Option<u64>,
        bitrates: Vec<u64>,
    },
    Chunk { index: u64, bitrate: u64 },
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub size: u64,
    pub body: Body,
}

pub const PLAYLIST_PATH: &str = "/live/playlist.m3u8";
const PLAYLIST_HEADER_BYTES: u64 = 120;
const PLAYLIST_LINE_BYTES: u64 = 48;
const NOT_FOUND_BYTES: u64 = 200;

impl HlsCatalog {
    /// Newest chunk published by `now`. Chunk `i` covers
    /// `[i*D, (i+1)*D)` and is available from `(i+1)*D`.
    pub fn live_edge(&self, now: VirtualTime) -> Option<u64> {
        let d = self.chunk_duration.as_micros();
        (now.as_micros() / d).checked_sub(1)
    }

    /// Time chunk `index` becomes available.
    pub fn available_at(&self, index: u64) -> VirtualTime {
        VirtualTime((index + 1) * self.chunk_duration.as_micros())
    }

    pub fn chunk_size(&self, bitrate: u64) -> u64 {
        (bitrate as u128 * self.chunk_duration.as_micros() as u128 / 8_000_000) as u64
    }

    pub fn chunk_path(index: u64, bitrate: u64) -> String {
        format!("/live/{}k/seg{}.ts", bitrate / 1000, index)
    }

    pub fn parse_path(&self, path: &str) -> Option<Resource> {
        if path == PLAYLIST_PATH {
            return Some(Resource::Playlist);
        }
        let rest = path.strip_prefix("/live/")?;
        let (rate, seg) = rest.split_once("k/")?;
        let index = seg.strip_prefix("seg")?.strip_suffix(".ts")?.parse().ok()?;
        let bitrate = rate.parse::<u64>().ok()? * 1000;
        self.bitrates
            .contains(&bitrate)
            .then_some(Resource::Chunk { index, bitrate })
    }

    /// The response an up server gives at `now`.
    pub fn serve(&self, now: VirtualTime, path: &str) -> HttpResponse {
        let edge = self.live_edge(now);
        match self.parse_path(path) {
            Some(Resource::Playlist) => {
                let listed = edge.map_or(0, |e| (e + 1).min(self.window));
                HttpResponse {
                    status: 200,
                    size: PLAYLIST_HEADER_BYTES
                        + PLAYLIST_LINE_BYTES * listed * self.bitrates.len() as u64,
                    body: Body::Playlist {
                        live_edge: edge,
                        bitrates: self.bitrates.clone(),
                    },
                }
            }
            Some(Resource::Chunk { index, bitrate }) if edge.is_some_and(|e| index <= e) => {
                HttpResponse {
                    status: 200,
                    size: self.chunk_size(bitrate),
                    body: Body::Chunk { index, bitrate },
                }
            }
            _ => HttpResponse {
                status: 404,
                size: NOT_FOUND_BYTES,
                body: Body::NotFound,
            },
        }
    }
}

/// Fixed adaptation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrParams {
    pub alpha: f64,
    pub upshift_after: u32,
    pub ewma_weight: f64,
    pub timeout: VirtualTime,
    /// Buffer target in chunks; also the live hold-back.
    pub buffer_chunks: u64,
}

impl Default for AbrParams {
    fn default() -> Self {
        AbrParams {
            alpha: 0.8,
            upshift_after: 3,
            ewma_weight: 0.5,
            timeout: VirtualTime::from_secs(4),
            buffer_chunks: 3,
        }
    }
}

/// Highest bitrate not above `alpha * throughput`, else the lowest.
pub fn eligible_bitrate(bitrates: &[u64], alpha: f64, throughput_bps: f64) -> u64 {
    bitrates
        .iter()
        .copied()
        .filter(|b| (*b as f64) <= alpha * throughput_bps)
        .max()
        .unwrap_or_else(|| bitrates.iter().copied().min().unwrap_or(0))
}

/// Playback position against downloaded content, in content microseconds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Playback {
    started: bool,
    pos: u64,
    buffered: u64,
    at: VirtualTime,
    stalled_since: Option<VirtualTime>,
}

impl Playback {
    /// Advances playback to `now`, entering a stall if the buffer ran dry.
    fn advance(&mut self, now: VirtualTime) {
        if self.started && self.stalled_since.is_none() {
            let elapsed = now.saturating_sub(self.at).as_micros();
            let avail = self.buffered - self.pos;
            if elapsed <= avail {
                self.pos += elapsed;
            } else {
                self.pos = self.buffered;
                self.stalled_since = Some(self.at + VirtualTime(avail));
            }
        }
        self.at = now;
    }

    /// Buffered seconds ahead of the playhead at `now`.
    pub fn level(&self, now: VirtualTime) -> VirtualTime {
        let mut p = self.clone();
        p.advance(now);
        VirtualTime(p.buffered - p.pos)
    }

    pub fn is_stalled(&self) -> bool {
        self.stalled_since.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pending {
    Playlist,
    Chunk { index: u64, bitrate: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outstanding {
    req: u64,
    what: Pending,
    sent_at: VirtualTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientInput {
    Start,
    Wake,
    Response { req: u64, response: HttpResponse },
    Timeout { req: u64 },
    /// End of run: close any open stall.
    Finish,
}

/// Things the client asks for, or reports.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientOutput {
    Request { req: u64, path: String, timeout_at: VirtualTime },
    WakeAt(VirtualTime),
    PlaybackStart { index: u64 },
    ChunkArrival { index: u64, bitrate: u64, size: u64, throughput_bps: u64 },
    Stall { start: VirtualTime, end: VirtualTime, truncated: bool },
    BitrateSwitch { from: u64, to: u64 },
    Timeout { req: u64, path: String },
    /// Response to a request that is no longer outstanding.
    Late { req: u64 },
    /// Asks the network side to change servers (IP mode only acts on it).
    Failover,
}

#[derive(Debug, Clone)]
pub struct HlsClient {
    pub params: AbrParams,
    chunk_duration: VirtualTime,
    bitrates: Vec<u64>,
    known_edge: Option<u64>,
    next_chunk: Option<u64>,
    first_chunk: Option<u64>,
    current: u64,
    ewma: Option<f64>,
    good: u32,
    outstanding: Option<Outstanding>,
    last_playlist_sent: Option<VirtualTime>,
    wake_at: Option<VirtualTime>,
    playback: Playback,
    req_seq: u64,
    req_base: u64,
}

impl HlsClient {
    /// `req_base` makes request ids unique across clients.
    pub fn new(params: AbrParams, chunk_duration: VirtualTime, initial_bitrates: &[u64], req_base: u64) -> Self {
        let mut bitrates = initial_bitrates.to_vec();
        bitrates.sort_unstable();
        HlsClient {
            params,
            chunk_duration,
            current: bitrates.first().copied().unwrap_or(0),
            bitrates,
            known_edge: None,
            next_chunk: None,
            first_chunk: None,
            ewma: None,
            good: 0,
            outstanding: None,
            last_playlist_sent: None,
            wake_at: None,
            playback: Playback::default(),
            req_seq: 0,
            req_base,
        }
    }

    pub fn current_bitrate(&self) -> u64 {
        self.current
    }

    pub fn throughput_estimate(&self) -> Option<f64> {
        self.ewma
    }

    pub fn buffer_level(&self, now: VirtualTime) -> VirtualTime {
        self.playback.level(now)
    }

    pub fn on_input(&mut self, now: VirtualTime, input: ClientInput) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        match input {
            ClientInput::Start => {}
            ClientInput::Wake => {
                if self.wake_at != Some(now) {
                    return out;
                }
                self.wake_at = None;
            }
            ClientInput::Response { req, response } => {
                let Some(o) = self.outstanding.filter(|o| o.req == req) else {
                    out.push(ClientOutput::Late { req });
                    return out;
                };
                self.outstanding = None;
                self.on_response(now, o, response, &mut out);
            }
            ClientInput::Timeout { req } => {
                let Some(o) = self.outstanding.filter(|o| o.req == req) else {
                    return out;
                };
                self.outstanding = None;
                let path = self.path_of(o.what);
                out.push(ClientOutput::Timeout { req, path });
                out.push(ClientOutput::Failover);
                // Collapse of measured throughput.
                self.ewma = None;
                self.good = 0;
                if let Pending::Playlist = o.what {
                    self.last_playlist_sent = None;
                }
            }
            ClientInput::Finish => {
                self.playback.advance(now);
                if let Some(start) = self.playback.stalled_since.take() {
                    out.push(ClientOutput::Stall {
                        start,
                        end: now,
                        truncated: true,
                    });
                }
                return out;
            }
        }
        self.schedule_next(now, &mut out);
        out
    }

    fn path_of(&self, p: Pending) -> String {
        match p {
            Pending::Playlist => PLAYLIST_PATH.to_owned(),
            Pending::Chunk { index, bitrate } => HlsCatalog::chunk_path(index, bitrate),
        }
    }

    fn on_response(&mut self, now: VirtualTime, o: Outstanding, resp: HttpResponse, out: &mut Vec<ClientOutput>) {
        match (o.what, resp.body) {
            (Pending::Playlist, Body::Playlist { live_edge, bitrates }) => {
                if !bitrates.is_empty() {
                    self.bitrates = bitrates;
                    self.bitrates.sort_unstable();
                }
                self.known_edge = live_edge.max(self.known_edge);
                if self.next_chunk.is_none() {
                    if let Some(e) = live_edge {
                        let start = e.saturating_sub(self.params.buffer_chunks - 1);
                        self.next_chunk = Some(start);
                        self.first_chunk = Some(start);
                    }
                }
            }
            (Pending::Chunk { index, bitrate }, Body::Chunk { .. }) if resp.status == 200 => {
                let dt = now.saturating_sub(o.sent_at).as_micros().max(1);
                let sample = resp.size as f64 * 8.0 * 1e6 / dt as f64;
                let w = self.params.ewma_weight;
                self.ewma = Some(match self.ewma {
                    Some(e) => w * sample + (1.0 - w) * e,
                    None => sample,
                });
                self.good += 1;
                out.push(ClientOutput::ChunkArrival {
                    index,
                    bitrate,
                    size: resp.size,
                    throughput_bps: sample as u64,
                });
                self.playback.advance(now);
                self.playback.buffered += self.chunk_duration.as_micros();
                if !self.playback.started {
                    self.playback.started = true;
                    self.playback.at = now;
                    out.push(ClientOutput::PlaybackStart { index });
                } else if let Some(start) = self.playback.stalled_since.take() {
                    out.push(ClientOutput::Stall {
                        start,
                        end: now,
                        truncated: false,
                    });
                    self.playback.at = now;
                }
                self.next_chunk = Some(index + 1);
            }
            _ => {
                // 404 or an unexpected body: the chunk is not there yet.
                if let Pending::Chunk { index, .. } = o.what {
                    self.known_edge = index.checked_sub(1);
                }
            }
        }
    }

    fn choose_bitrate(&mut self, out: &mut Vec<ClientOutput>) -> u64 {
        let est = self.ewma.unwrap_or(0.0);
        let eligible = eligible_bitrate(&self.bitrates, self.params.alpha, est);
        if !self.bitrates.contains(&self.current) {
            let to = eligible;
            out.push(ClientOutput::BitrateSwitch { from: self.current, to });
            self.current = to;
            self.good = 0;
        } else if eligible < self.current {
            out.push(ClientOutput::BitrateSwitch {
                from: self.current,
                to: eligible,
            });
            self.current = eligible;
            self.good = 0;
        } else if eligible > self.current && self.good >= self.params.upshift_after {
            let pos = self.bitrates.iter().position(|b| *b == self.current).unwrap_or(0);
            let to = self.bitrates[(pos + 1).min(self.bitrates.len() - 1)];
            out.push(ClientOutput::BitrateSwitch { from: self.current, to });
            self.current = to;
            self.good = 0;
        }
        self.current
    }

    fn request(&mut self, now: VirtualTime, what: Pending, out: &mut Vec<ClientOutput>) {
        self.req_seq += 1;
        let req = self.req_base + self.req_seq;
        if what == Pending::Playlist {
            self.last_playlist_sent = Some(now);
        }
        self.outstanding = Some(Outstanding {
            req,
            what,
            sent_at: now,
        });
        out.push(ClientOutput::Request {
            req,
            path: self.path_of(what),
            timeout_at: now + self.params.timeout,
        });
    }

    fn wake(&mut self, at: VirtualTime, out: &mut Vec<ClientOutput>) {
        if self.wake_at.is_none_or(|w| at < w) {
            self.wake_at = Some(at);
            out.push(ClientOutput::WakeAt(at));
        }
    }

    fn schedule_next(&mut self, now: VirtualTime, out: &mut Vec<ClientOutput>) {
        if self.outstanding.is_some() {
            return;
        }
        let d = self.chunk_duration;
        match self.next_chunk {
            Some(i) if self.known_edge.is_some_and(|e| i <= e) => {
                let level = self.playback.level(now);
                let limit = VirtualTime(d.as_micros() * (self.params.buffer_chunks - 1));
                if level <= limit {
                    let b = self.choose_bitrate(out);
                    self.request(now, Pending::Chunk { index: i, bitrate: b }, out);
                } else {
                    self.wake(now + (level - limit), out);
                }
            }
            _ => {
                let at = self.last_playlist_sent.map_or(now, |t| (t + d).max(now));
                if at <= now {
                    self.request(now, Pending::Playlist, out);
                } else {
                    self.wake(at, out);
                }
            }
        }
    }
}

/// Independent replay of the buffer model from chunk arrival times.
/// Returns (stall start, stall end) pairs; `end` of an open stall is `t_end`.
pub fn replay_stalls(chunk_duration: VirtualTime, arrivals: &[VirtualTime], t_end: VirtualTime) -> Vec<(VirtualTime, VirtualTime)> {
    let mut stalls = Vec::new();
    let Some(&first) = arrivals.first() else {
        return stalls;
    };
    // Deadline of chunk k: when playback reaches it, given earlier stalls.
    let d = chunk_duration.as_micros();
    let mut deadline = first.as_micros() + d;
    for a in &arrivals[1..] {
        let a = a.as_micros();
        if a > deadline {
            stalls.push((VirtualTime(deadline), VirtualTime(a)));
            deadline = a;
        }
        deadline += d;
    }
    if t_end.as_micros() > deadline {
        stalls.push((VirtualTime(deadline), t_end));
    }
    stalls
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IptvChannel {
    pub id: u32,
    pub group: u32,
    pub bitrate_bps: u64,
    pub packet_size: u32,
}

impl IptvChannel {
    pub fn packet_interval(&self) -> VirtualTime {
        VirtualTime((self.packet_size as u128 * 8 * 1_000_000 / self.bitrate_bps as u128) as u64)
    }
}

/// Set-top box: current channel and acquisition tracking.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stb {
    pub current: Option<u32>,
    zap_requested_at: Option<VirtualTime>,
}

/// Membership changes a zap needs, as (join, group) pairs in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zap {
    pub leave: Option<u32>,
    pub join: Option<u32>,
}

impl Stb {
    /// Switches to `channel`. Re-selecting the current channel needs no
    /// membership change but still measures acquisition.
    pub fn zap(&mut self, now: VirtualTime, channel: u32) -> Zap {
        self.zap_requested_at = Some(now);
        if self.current == Some(channel) {
            return Zap { leave: None, join: None };
        }
        let leave = self.current.replace(channel);
        Zap {
            leave,
            join: Some(channel),
        }
    }

    /// Records a received packet; returns the acquisition time if this
    /// packet completes a zap.
    pub fn on_packet(&mut self, now: VirtualTime, channel: u32) -> Option<VirtualTime> {
        if self.current != Some(channel) {
            return None;
        }
        self.zap_requested_at.take().map(|z| now.saturating_sub(z))
    }
}
