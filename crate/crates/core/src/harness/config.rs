//! Scenario files: schema, defaults, validation and hashing.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fid::{FidConfig, FidMode};
use crate::topology::NodeRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Icn,
    Ip,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Icn => "icn",
            Mode::Ip => "ip",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icn" => Ok(Mode::Icn),
            "ip" => Ok(Mode::Ip),
            other => Err(format!("unknown mode {other:?} (expected icn or ip)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration_ms: u64,
    pub topology: TopologySpec,
    #[serde(default)]
    pub fid: FidConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub access: AccessSpec,
    #[serde(default)]
    pub hls: Option<HlsSpec>,
    #[serde(default)]
    pub iptv: Option<IptvSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub role: NodeRole,
}

fn default_capacity() -> u64 {
    1_000_000_000
}

fn default_latency() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub label: String,
    pub a: String,
    pub b: String,
    #[serde(default = "default_capacity")]
    pub capacity_bps: u64,
    #[serde(default = "default_latency")]
    pub latency_us: u64,
}

/// Timers and knobs shared by both modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub seed: u64,
    /// Coalescing window W at sNAPs.
    pub coalescing_window_ms: u64,
    /// HLS client request timeout T.
    pub client_timeout_ms: u64,
    /// Link or server failure to control-plane notification.
    pub detection_delay_ms: u64,
    /// PCE computation plus notice delivery to NAPs.
    pub pce_processing_us: u64,
    /// NAP to PCE message latency.
    pub control_latency_us: u64,
    pub reconvergence_delay_ms: u64,
    /// IGMP membership report period Q.
    pub igmp_query_interval_ms: u64,
    /// Per-link queue cap; unbounded when absent.
    pub queue_cap_bytes: Option<u64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            seed: 1,
            coalescing_window_ms: 100,
            client_timeout_ms: 4_000,
            detection_delay_ms: 10,
            pce_processing_us: 1_000,
            control_latency_us: 1_000,
            reconvergence_delay_ms: 30_000,
            igmp_query_interval_ms: 5_000,
            queue_cap_bytes: None,
        }
    }
}

/// Host attachment: client links are slow access lines, servers sit next
/// to their edge node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccessSpec {
    pub client_capacity_bps: u64,
    pub client_latency_us: u64,
    pub server_latency_us: u64,
}

impl Default for AccessSpec {
    fn default() -> Self {
        AccessSpec {
            client_capacity_bps: 24_000_000,
            client_latency_us: 2_000,
            server_latency_us: 100,
        }
    }
}

fn default_host() -> String {
    "tv.example".into()
}
fn default_chunk_ms() -> u64 {
    2_000
}
fn default_bitrates() -> Vec<u64> {
    vec![2_000_000, 8_000_000]
}
fn default_window() -> u64 {
    5
}
fn default_alpha() -> f64 {
    0.8
}
fn default_upshift() -> u32 {
    3
}
fn default_ewma() -> f64 {
    0.5
}
fn default_buffer_chunks() -> u64 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HlsSpec {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_chunk_ms")]
    pub chunk_duration_ms: u64,
    #[serde(default = "default_bitrates")]
    pub bitrates_bps: Vec<u64>,
    #[serde(default = "default_window")]
    pub playlist_window: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_upshift")]
    pub upshift_after: u32,
    #[serde(default = "default_ewma")]
    pub ewma_weight: f64,
    #[serde(default = "default_buffer_chunks")]
    pub buffer_chunks: u64,
    pub servers: Vec<ServerSpec>,
    pub clients: Vec<ClientSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub name: String,
    pub nap: String,
    /// Surrogates start withdrawn and are brought in by the script.
    #[serde(default)]
    pub surrogate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub name: String,
    pub nap: String,
    #[serde(default)]
    pub start_ms: u64,
    /// Uniform random extra start delay in [0, jitter) ms.
    #[serde(default)]
    pub start_jitter_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IptvSpec {
    /// Name of the host streaming the channels.
    #[serde(default = "default_source")]
    pub source_name: String,
    /// NAP the source is attached to.
    pub source: String,
    pub channels: Vec<ChannelSpec>,
    pub stbs: Vec<StbSpec>,
}

fn default_source() -> String {
    "iptv_source".into()
}

fn default_channel_rate() -> u64 {
    4_000_000
}

fn default_packet_size() -> u32 {
    1_400
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub id: u32,
    /// IPv4 multicast group, dotted quad.
    pub group: String,
    #[serde(default = "default_channel_rate")]
    pub bitrate_bps: u64,
    #[serde(default = "default_packet_size")]
    pub packet_size: u32,
}

impl ChannelSpec {
    pub fn group_addr(&self) -> Option<u32> {
        let a: Ipv4Addr = self.group.parse().ok()?;
        a.is_multicast().then(|| u32::from(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StbSpec {
    pub name: String,
    pub nap: String,
    pub channel: u32,
    #[serde(default)]
    pub start_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    LinkDown { link: String },
    LinkUp { link: String },
    ServerDown { server: String },
    ServerUp { server: String },
    SurrogateOn { server: String },
    SurrogateOff { server: String },
    Zap { stb: String, channel: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.params.seed = seed;
        self
    }

    /// The configuration with every default filled in.
    pub fn effective(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hash of the effective configuration (seed included, mode not).
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.effective()).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn node_role(&self, name: &str) -> Option<NodeRole> {
        self.topology.nodes.iter().find(|n| n.name == name).map(|n| n.role)
    }

    /// Checks references and ranges, listing every violation found.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let dur = self.duration_ms;
        if dur == 0 {
            v.push("duration_ms must be positive".to_owned());
        }

        let mut names = BTreeSet::new();
        let mut pce = 0;
        for n in &self.topology.nodes {
            if n.name.is_empty() {
                v.push("node with empty name".to_owned());
            }
            if !names.insert(n.name.as_str()) {
                v.push(format!("duplicate node {:?}", n.name));
            }
            if n.role == NodeRole::Pce {
                pce += 1;
            }
        }
        if pce != 1 {
            v.push(format!("topology needs exactly one pce node, found {pce}"));
        }
        let mut labels = BTreeSet::new();
        for l in &self.topology.links {
            if !labels.insert(l.label.as_str()) {
                v.push(format!("duplicate link label {:?}", l.label));
            }
            for end in [&l.a, &l.b] {
                match self.node_role(end) {
                    None => v.push(format!("link {:?}: unknown node {:?}", l.label, end)),
                    Some(NodeRole::Pce) => {
                        v.push(format!("link {:?}: the pce node has no data links", l.label))
                    }
                    Some(_) => {}
                }
            }
            if l.a == l.b {
                v.push(format!("link {:?} is a self loop", l.label));
            }
            if l.capacity_bps == 0 {
                v.push(format!("link {:?}: capacity_bps must be positive", l.label));
            }
        }
        let directed = 2 * self.topology.links.len();
        let f = &self.fid;
        if f.m == 0 || f.k == 0 || f.k >= f.m {
            v.push(format!("fid: need 1 <= k < m (m={}, k={})", f.m, f.k));
        }
        if f.mode == FidMode::Exact && directed > f.m {
            v.push(format!(
                "fid: exact mode needs m >= directed links ({} links need {directed} bits, m={})",
                self.topology.links.len(),
                f.m
            ));
        }

        let p = &self.params;
        if p.client_timeout_ms == 0 {
            v.push("params.client_timeout_ms must be positive".to_owned());
        }
        if p.igmp_query_interval_ms == 0 {
            v.push("params.igmp_query_interval_ms must be positive".to_owned());
        }
        if p.queue_cap_bytes == Some(0) {
            v.push("params.queue_cap_bytes must be positive when set".to_owned());
        }
        if self.access.client_capacity_bps == 0 {
            v.push("access.client_capacity_bps must be positive".to_owned());
        }

        let nap = |v: &mut Vec<String>, what: &str, name: &str| match self.node_role(name) {
            Some(NodeRole::Nap) => {}
            Some(_) => v.push(format!("{what}: node {name:?} is not a nap")),
            None => v.push(format!("{what}: unknown node {name:?}")),
        };
        let mut hosts = BTreeSet::new();
        let mut host = |v: &mut Vec<String>, name: &str| {
            if !hosts.insert(name.to_owned()) {
                v.push(format!("duplicate host name {name:?}"));
            }
        };
        let mut servers = BTreeSet::new();
        if let Some(h) = &self.hls {
            if h.host.is_empty() || h.host.contains(char::is_whitespace) {
                v.push(format!("hls.host {:?} is not a host name", h.host));
            }
            if h.chunk_duration_ms == 0 {
                v.push("hls.chunk_duration_ms must be positive".to_owned());
            }
            if h.bitrates_bps.is_empty() {
                v.push("hls.bitrates_bps is empty".to_owned());
            }
            if h.bitrates_bps.windows(2).any(|w| w[0] >= w[1]) {
                v.push("hls.bitrates_bps must be strictly ascending".to_owned());
            }
            if h.bitrates_bps.iter().any(|b| *b == 0 || b % 1000 != 0) {
                v.push("hls.bitrates_bps must be positive multiples of 1000".to_owned());
            }
            if !(h.alpha > 0.0 && h.alpha <= 1.0) {
                v.push(format!("hls.alpha {} outside (0, 1]", h.alpha));
            }
            if !(h.ewma_weight > 0.0 && h.ewma_weight <= 1.0) {
                v.push(format!("hls.ewma_weight {} outside (0, 1]", h.ewma_weight));
            }
            if h.buffer_chunks == 0 {
                v.push("hls.buffer_chunks must be positive".to_owned());
            }
            if h.playlist_window == 0 {
                v.push("hls.playlist_window must be positive".to_owned());
            }
            if !h.servers.iter().any(|s| !s.surrogate) {
                v.push("hls needs a non-surrogate server".to_owned());
            }
            let mut server_naps = BTreeSet::new();
            for s in &h.servers {
                nap(&mut v, &format!("server {:?}", s.name), &s.nap);
                host(&mut v, &s.name);
                servers.insert((s.name.as_str(), s.surrogate));
                if !server_naps.insert(s.nap.as_str()) {
                    v.push(format!("server {:?}: nap {:?} already has a server", s.name, s.nap));
                }
            }
            for c in &h.clients {
                nap(&mut v, &format!("client {:?}", c.name), &c.nap);
                host(&mut v, &c.name);
                if server_naps.contains(c.nap.as_str()) {
                    v.push(format!("client {:?}: nap {:?} is a server nap", c.name, c.nap));
                }
                if c.start_ms >= dur {
                    v.push(format!("client {:?} starts after the end of the run", c.name));
                }
            }
        }
        let mut stbs = BTreeSet::new();
        let mut channels = BTreeSet::new();
        if let Some(t) = &self.iptv {
            nap(&mut v, "iptv.source", &t.source);
            host(&mut v, &t.source_name);
            if let Some(h) = &self.hls {
                if h.servers.iter().any(|s| s.nap == t.source) {
                    v.push(format!("iptv.source: nap {:?} already has a server", t.source));
                }
            }
            let mut groups = BTreeSet::new();
            for c in &t.channels {
                if !channels.insert(c.id) {
                    v.push(format!("duplicate channel id {}", c.id));
                }
                match c.group_addr() {
                    Some(g) => {
                        if !groups.insert(g) {
                            v.push(format!("channel {}: group {} used twice", c.id, c.group));
                        }
                    }
                    None => v.push(format!("channel {}: {:?} is not an IPv4 multicast group", c.id, c.group)),
                }
                if c.bitrate_bps == 0 || c.packet_size == 0 {
                    v.push(format!("channel {}: bitrate and packet size must be positive", c.id));
                } else if (c.packet_size as u128 * 8_000_000) < c.bitrate_bps as u128 {
                    v.push(format!("channel {}: packet interval rounds to zero", c.id));
                }
            }
            for s in &t.stbs {
                nap(&mut v, &format!("stb {:?}", s.name), &s.nap);
                host(&mut v, &s.name);
                stbs.insert(s.name.as_str());
                if s.nap == t.source {
                    v.push(format!("stb {:?}: nap {:?} is the source nap", s.name, s.nap));
                }
                if !t.channels.iter().any(|c| c.id == s.channel) {
                    v.push(format!("stb {:?}: unknown channel {}", s.name, s.channel));
                }
                if s.start_ms >= dur {
                    v.push(format!("stb {:?} starts after the end of the run", s.name));
                }
            }
        }

        for (i, e) in self.script.iter().enumerate() {
            let at = format!("script[{i}]");
            if e.at_ms > dur {
                v.push(format!("{at}: at_ms {} is past duration_ms {dur}", e.at_ms));
            }
            match &e.action {
                ScriptAction::LinkDown { link } | ScriptAction::LinkUp { link } => {
                    if !labels.contains(link.as_str()) {
                        v.push(format!("{at}: unknown link {link:?}"));
                    }
                }
                ScriptAction::ServerDown { server } | ScriptAction::ServerUp { server } => {
                    if !servers.iter().any(|(n, _)| n == server) {
                        v.push(format!("{at}: unknown server {server:?}"));
                    }
                }
                ScriptAction::SurrogateOn { server } | ScriptAction::SurrogateOff { server } => {
                    if !servers.contains(&(server.as_str(), true)) {
                        v.push(format!("{at}: {server:?} is not a surrogate server"));
                    }
                }
                ScriptAction::Zap { stb, channel } => {
                    if !stbs.contains(stb.as_str()) {
                        v.push(format!("{at}: unknown stb {stb:?}"));
                    }
                    if !channels.contains(channel) {
                        v.push(format!("{at}: unknown channel {channel}"));
                    }
                }
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "duration_ms": 1000,
        "topology": {
            "nodes": [{"name": "pce", "role": "pce"}, {"name": "a", "role": "nap"}, {"name": "b", "role": "nap"}],
            "links": [{"label": "ab", "a": "a", "b": "b"}]
        }
    }"#;

    #[test]
    fn defaults_are_filled() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        let e = c.effective();
        assert_eq!(e["params"]["coalescing_window_ms"], 100);
        assert_eq!(e["params"]["client_timeout_ms"], 4000);
        assert_eq!(e["topology"]["links"][0]["capacity_bps"], 1_000_000_000u64);
        assert_eq!(e["fid"]["mode"], "exact");
        let again: ScenarioConfig = serde_json::from_value(e).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn hash_depends_on_seed() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.config_hash(), c.clone().config_hash());
        assert_ne!(c.config_hash(), c.clone().with_seed(9).config_hash());
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"{
            "name": "bad",
            "duration_ms": 1000,
            "topology": {
                "nodes": [{"name": "a", "role": "nap"}],
                "links": [{"label": "x", "a": "a", "b": "ghost"}]
            },
            "script": [{"at_ms": 5000, "action": "link_down", "link": "nope"}]
        }"#;
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::from_json(text) else {
            panic!("expected rejection");
        };
        assert!(v.iter().any(|s| s.contains("ghost")));
        assert!(v.iter().any(|s| s.contains("pce")));
        assert!(v.iter().any(|s| s.contains("past duration")));
        assert!(v.iter().any(|s| s.contains("unknown link")));
    }

    #[test]
    fn exact_mode_overflow_rejected() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.fid = FidConfig::exact(8);
        for i in 0..19 {
            c.topology.links.push(LinkSpec {
                label: format!("l{i}"),
                a: "a".into(),
                b: "b".into(),
                capacity_bps: 1,
                latency_us: 1,
            });
        }
        let Err(ConfigError::Invalid(v)) = c.validate() else {
            panic!("expected rejection");
        };
        assert!(v.iter().any(|s| s.contains("exact mode")));
    }

    #[test]
    fn groups_must_be_multicast() {
        let c = ChannelSpec {
            id: 1,
            group: "10.0.0.1".into(),
            bitrate_bps: 1,
            packet_size: 1,
        };
        assert_eq!(c.group_addr(), None);
        let c = ChannelSpec {
            group: "239.1.1.1".into(),
            ..c
        };
        assert_eq!(c.group_addr(), Some(0xEF01_0101));
    }
}
