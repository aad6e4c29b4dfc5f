//! The scenario engine: builds every component from a config and drives
//! them on one event loop.
//!
//! Hosts (HLS servers and clients, the IPTV source, set-top boxes) hang off
//! edge nodes through access pipes that are not part of the fabric. In icn
//! mode edge nodes are NAPs and the core forwards on FIDs; in ip mode every
//! node is a learning switch on a spanning tree.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::Rng;

use super::config::{Mode, ScenarioConfig, ScriptAction};
use crate::apps::{
    AbrParams, Body, ClientInput, ClientOutput, HlsCatalog, HlsClient, HttpResponse, IptvChannel,
    Stb, replay_stalls, PLAYLIST_PATH,
};
use crate::fabric::{
    serialization, DropReason, Fabric, Header, HostId, Packet, PacketKind, Payload, TrafficClass,
    Transmission, DEFAULT_TTL,
};
use crate::fid::Fid;
use crate::ip_baseline::{DnsClient, DnsRecord, FailoverOutcome, IpNetwork};
use crate::nap::{
    segment_count, segment_size, CnapAction, Cnap, Demux, HttpRequest, MatchOutcome,
    RequestFingerprint, Snap,
};
use crate::pce::{label_hash, ContentName, Pce, PceError, PceNotice};
use crate::simkernel::{substream, Scheduler, VirtualTime};
use crate::telemetry::{summarize, Conservation, Event, RunArtifacts, Summary, Telemetry};
use crate::topology::{LinkIdx, NodeId, NodeRole, TopologyError, TopologyEvent, TopologyGraph};

const REQUEST_BYTES: u32 = 300;
const IGMP_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record metric samples next to the event log.
    pub samples: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub effective_config: serde_json::Value,
    pub artifacts: RunArtifacts,
    pub summary: Summary,
    /// Violated run-end invariants, by name. Empty on success.
    pub violations: Vec<String>,
}

impl RunOutput {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Runs `cfg` (already validated) in `mode` with the seed in its params.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode, opts: RunOptions) -> Result<RunOutput, TopologyError> {
    let mut w = World::new(cfg, mode, opts)?;
    w.run();
    Ok(w.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HostKind {
    Server(usize),
    Client(usize),
    Stb(usize),
    Source,
}

#[derive(Debug, Clone)]
struct Host {
    name: String,
    kind: HostKind,
    /// Downstream access pipe (toward the host) busy until.
    down_busy: VirtualTime,
}

#[derive(Debug, Clone)]
struct Server {
    host: HostId,
    node: NodeId,
    surrogate: bool,
    up: bool,
    enabled: bool,
}

impl Server {
    fn answering(&self) -> bool {
        self.up && (!self.surrogate || self.enabled)
    }
}

#[derive(Debug, Clone)]
struct ClientRt {
    host: HostId,
    node: NodeId,
    hls: HlsClient,
    dns: Option<DnsClient>,
    arrivals: Vec<VirtualTime>,
    stalls: Vec<(VirtualTime, VirtualTime)>,
}

#[derive(Debug, Clone)]
struct StbRt {
    host: HostId,
    node: NodeId,
    stb: Stb,
    channel: u32,
    phase: VirtualTime,
}

#[derive(Debug, Clone)]
struct ChannelRt {
    ch: IptvChannel,
    name: ContentName,
    seq: u64,
}

#[derive(Debug, Clone)]
enum MsgInfo {
    Request { client: usize, req: u64, path: String },
    Response { url: String, name: ContentName, response: HttpResponse, req: u64 },
}

#[derive(Debug, Clone, Copy)]
enum Origin {
    Snap { node: NodeId, group: u64 },
    Host { client: HostId, req: u64 },
}

#[derive(Debug, Clone, Copy)]
enum PceMsg {
    Publish(ContentName, NodeId),
    Unpublish(ContentName, NodeId),
    Subscribe(ContentName, NodeId),
    Unsubscribe(ContentName, NodeId),
}

#[derive(Debug, Clone)]
enum Action {
    Script(usize),
    ClientStart(usize),
    ClientWake(usize),
    ClientTimeout { client: usize, req: u64 },
    ClientResponse { client: usize, req: u64, msg: u64 },
    RequestAtEdge { client: usize, req: u64, path: String },
    ToPce(PceMsg),
    Topology(TopologyEvent),
    Notice(PceNotice),
    GroupClose { snap: NodeId, group: u64 },
    ServerRequest { server: usize, from: Origin, path: String },
    SnapResponse { snap: NodeId, group: u64, msg: u64 },
    ServerInject { server: usize, msg: u64, dst: HostId },
    Arrive { tx: Transmission, pkt: Packet },
    StbStart(usize),
    IgmpAtEdge { stb: usize, group: u32, join: bool },
    IgmpReport(usize),
    IptvEmit(usize),
    IptvRx { stb: usize, channel: u32, seq: u64 },
    StpFinish(VirtualTime),
    ServerCheck(usize),
}

#[derive(Debug, Clone, Copy)]
enum Elem {
    Run,
    Stp,
    Node(NodeId),
    Link(LinkIdx),
    Phys(usize),
    Host(HostId),
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    mode: Mode,
    seed: u64,
    config_hash: String,
    sched: Scheduler<Action>,
    tel: Telemetry,
    fabric: Fabric,
    pce: Pce,
    pce_node: NodeId,
    ipnet: IpNetwork,

    node_names: Vec<String>,
    link_names: Vec<String>,
    phys_names: Vec<String>,
    hosts: Vec<Host>,
    servers: Vec<Server>,
    clients: Vec<ClientRt>,
    stbs: Vec<StbRt>,
    channels: Vec<ChannelRt>,
    source: Option<(HostId, NodeId)>,
    catalog: Option<HlsCatalog>,
    hls_scope: Option<ContentName>,

    cnaps: BTreeMap<NodeId, Cnap>,
    snaps: BTreeMap<NodeId, Snap>,
    snap_server: BTreeMap<NodeId, usize>,
    published: BTreeMap<NodeId, bool>,
    trees: BTreeMap<(NodeId, ContentName), Rc<BTreeSet<LinkIdx>>>,
    fingerprints: BTreeMap<ContentName, RequestFingerprint>,
    channel_of_name: BTreeMap<ContentName, u32>,
    messages: BTreeMap<u64, MsgInfo>,
    host_rx: BTreeMap<(HostId, u64), u32>,
    digests: BTreeMap<NodeId, String>,
    initial_fn_digests: BTreeMap<NodeId, String>,

    next_pkt: u64,
    next_msg: u64,
    live: Conservation,
    violations: Vec<String>,
    end: VirtualTime,
}

fn class_of(body: &Body) -> TrafficClass {
    match body {
        Body::Chunk { .. } => TrafficClass::Chunk,
        Body::Playlist { .. } => TrafficClass::Playlist,
        Body::NotFound => TrafficClass::Other,
    }
}

fn group_str(g: u32) -> String {
    std::net::Ipv4Addr::from(g).to_string()
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, mode: Mode, opts: RunOptions) -> Result<Self, TopologyError> {
        let seed = cfg.params.seed;
        let mut topo = TopologyGraph::new();
        for n in &cfg.topology.nodes {
            topo.add_node(&n.name, n.role)?;
        }
        let id = |topo: &TopologyGraph, name: &str| {
            topo.node_id(name)
                .ok_or_else(|| TopologyError::UnknownNode(name.to_owned()))
        };
        for l in &cfg.topology.links {
            let (a, b) = (id(&topo, &l.a)?, id(&topo, &l.b)?);
            topo.add_link(a, b, l.capacity_bps, VirtualTime(l.latency_us), &l.label)?;
        }
        topo.assign_link_ids(&cfg.fid, seed)?;
        let node_names: Vec<String> = topo.nodes().map(|(_, n)| n.name.clone()).collect();
        let link_names: Vec<String> = topo
            .links()
            .map(|(_, l)| format!("{}:{}>{}", l.label, node_names[l.src.0], node_names[l.dst.0]))
            .collect();
        let phys_names: Vec<String> = cfg.topology.links.iter().map(|l| l.label.clone()).collect();
        let pce_node = topo
            .nodes()
            .find(|(_, n)| n.role == NodeRole::Pce)
            .map(|(i, _)| i)
            .ok_or_else(|| TopologyError::UnknownNode("pce".into()))?;

        let p = &cfg.params;
        let mut w = World {
            cfg,
            mode,
            seed,
            config_hash: cfg.config_hash(),
            sched: Scheduler::new(),
            tel: Telemetry::new(opts.samples),
            fabric: Fabric::new(topo.clone(), p.queue_cap_bytes),
            pce: Pce::new(topo.clone()),
            pce_node,
            ipnet: IpNetwork::new(&topo, VirtualTime::from_millis(p.reconvergence_delay_ms)),
            node_names,
            link_names,
            phys_names,
            hosts: Vec::new(),
            servers: Vec::new(),
            clients: Vec::new(),
            stbs: Vec::new(),
            channels: Vec::new(),
            source: None,
            catalog: None,
            hls_scope: None,
            cnaps: BTreeMap::new(),
            snaps: BTreeMap::new(),
            snap_server: BTreeMap::new(),
            published: BTreeMap::new(),
            trees: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            channel_of_name: BTreeMap::new(),
            messages: BTreeMap::new(),
            host_rx: BTreeMap::new(),
            digests: BTreeMap::new(),
            initial_fn_digests: BTreeMap::new(),
            next_pkt: 0,
            next_msg: 0,
            live: Conservation::default(),
            violations: Vec::new(),
            end: VirtualTime::from_millis(cfg.duration_ms),
        };
        w.build(&topo);
        Ok(w)
    }

    fn add_host(&mut self, name: &str, node: NodeId, kind: HostKind) -> HostId {
        let h = HostId(self.hosts.len());
        self.hosts.push(Host {
            name: name.to_owned(),
            kind,
            down_busy: VirtualTime::ZERO,
        });
        self.ipnet.attach_host(h, node);
        h
    }

    fn build(&mut self, topo: &TopologyGraph) {
        let cfg = self.cfg;
        let nid = |name: &str| topo.node_id(name).expect("validated node");
        let window = VirtualTime::from_millis(cfg.params.coalescing_window_ms);

        if let Some(h) = &cfg.hls {
            let catalog = HlsCatalog {
                host: h.host.clone(),
                chunk_duration: VirtualTime::from_millis(h.chunk_duration_ms),
                bitrates: h.bitrates_bps.clone(),
                window: h.playlist_window,
            };
            self.hls_scope = Some(ContentName::whole_scope(label_hash(&h.host)));
            for (i, s) in h.servers.iter().enumerate() {
                let node = nid(&s.nap);
                let host = self.add_host(&s.name, node, HostKind::Server(i));
                self.servers.push(Server {
                    host,
                    node,
                    surrogate: s.surrogate,
                    up: true,
                    enabled: !s.surrogate,
                });
                self.snaps.insert(node, Snap::new(node, window, !s.surrogate));
                self.snap_server.insert(node, i);
                self.published.insert(node, false);
            }
            let mut order: Vec<&super::config::ServerSpec> = h.servers.iter().filter(|s| !s.surrogate).collect();
            order.extend(h.servers.iter().filter(|s| s.surrogate));
            let record = DnsRecord {
                name: h.host.clone(),
                addresses: order
                    .iter()
                    .map(|s| self.servers[h.servers.iter().position(|x| x.name == s.name).unwrap()].host)
                    .collect(),
            };
            let abr = AbrParams {
                alpha: h.alpha,
                upshift_after: h.upshift_after,
                ewma_weight: h.ewma_weight,
                timeout: VirtualTime::from_millis(cfg.params.client_timeout_ms),
                buffer_chunks: h.buffer_chunks,
            };
            for (i, c) in h.clients.iter().enumerate() {
                let node = nid(&c.nap);
                let host = self.add_host(&c.name, node, HostKind::Client(i));
                self.clients.push(ClientRt {
                    host,
                    node,
                    hls: HlsClient::new(abr, catalog.chunk_duration, &catalog.bitrates, (i as u64 + 1) * 1_000_000),
                    dns: (self.mode == Mode::Ip).then(|| DnsClient::new(record.clone())),
                    arrivals: Vec::new(),
                    stalls: Vec::new(),
                });
            }
            self.catalog = Some(catalog);
        }

        if let Some(t) = &cfg.iptv {
            let node = nid(&t.source);
            let host = self.add_host(&t.source_name, node, HostKind::Source);
            self.source = Some((host, node));
            self.snaps.insert(node, Snap::new(node, window, true));
            for c in &t.channels {
                let group = c.group_addr().expect("validated group");
                let name = ContentName::from_labels(&c.group, &c.id.to_string());
                self.pce.mark_stream_scope(name.scope);
                self.ipnet.set_querier(group, node);
                self.channel_of_name.insert(name, c.id);
                self.channels.push(ChannelRt {
                    ch: IptvChannel {
                        id: c.id,
                        group,
                        bitrate_bps: c.bitrate_bps,
                        packet_size: c.packet_size,
                    },
                    name,
                    seq: 0,
                });
            }
            let q = cfg.params.igmp_query_interval_ms * 1_000;
            for (i, s) in t.stbs.iter().enumerate() {
                let node = nid(&s.nap);
                let host = self.add_host(&s.name, node, HostKind::Stb(i));
                let phase = substream(self.seed, &format!("igmp.phase.{}", s.name)).random_range(0..q);
                self.stbs.push(StbRt {
                    host,
                    node,
                    stb: Stb::default(),
                    channel: s.channel,
                    phase: VirtualTime(phase),
                });
            }
        }

        for (n, node) in topo.nodes() {
            if node.role == NodeRole::Nap && !self.snaps.contains_key(&n) {
                let mut c = Cnap::new(n);
                for ch in &self.channels {
                    c.register_channel(ch.ch.group, ch.name);
                }
                self.cnaps.insert(n, c);
            }
        }
    }

    fn emit(&mut self, e: Elem, ev: Event) {
        let now = self.sched.now();
        let name: &str = match e {
            Elem::Run => "run",
            Elem::Stp => "stp",
            Elem::Node(n) => &self.node_names[n.0],
            Elem::Link(l) => &self.link_names[l.0],
            Elem::Phys(p) => &self.phys_names[p],
            Elem::Host(h) => &self.hosts[h.0].name,
        };
        self.tel.log(now, name, ev);
    }

    fn sample(&mut self, e: Elem, metric: &str, value: f64) {
        if !self.tel.samples_enabled() {
            return;
        }
        let now = self.sched.now();
        let name: &str = match e {
            Elem::Run => "run",
            Elem::Stp => "stp",
            Elem::Node(n) => &self.node_names[n.0],
            Elem::Link(l) => &self.link_names[l.0],
            Elem::Phys(p) => &self.phys_names[p],
            Elem::Host(h) => &self.hosts[h.0].name,
        };
        self.tel.record(now, name, metric, value);
    }

    fn describe(&self, name: &ContentName) -> String {
        if let Some(fp) = self.fingerprints.get(name) {
            return format!("{}{}", fp.host, fp.path);
        }
        if let Some(c) = self.channel_of_name.get(name) {
            return format!("channel/{c}");
        }
        if Some(*name) == self.hls_scope {
            return format!("{}/*", self.catalog.as_ref().map_or("", |c| c.host.as_str()));
        }
        format!("{:016x}/{:016x}", name.scope, name.item)
    }

    fn violation(&mut self, what: String) {
        self.violations.push(what);
    }

    // ---- setup and main loop ----

    fn run(&mut self) {
        let cfg = self.cfg;
        self.emit(
            Elem::Run,
            Event::RunStart {
                scenario: cfg.name.clone(),
                mode: self.mode.as_str().into(),
                seed: self.seed,
                config_hash: self.config_hash.clone(),
            },
        );
        self.emit(Elem::Run, Event::EffectiveConfig { config: cfg.effective() });
        if let Some(c) = &self.catalog {
            let d = c.chunk_duration.as_micros();
            self.emit(Elem::Run, Event::CatalogInfo { chunk_duration_us: d });
        }
        for i in 0..self.channels.len() {
            let ch = self.channels[i].ch;
            self.emit(
                Elem::Run,
                Event::ChannelInfo {
                    channel: ch.id,
                    group: group_str(ch.group),
                    interval_us: ch.packet_interval().as_micros(),
                },
            );
        }
        if self.mode == Mode::Icn {
            let nodes: Vec<NodeId> = self.fabric.topology().nodes().map(|(n, _)| n).collect();
            for n in nodes {
                let d = match self.fabric.topology().node(n).role {
                    NodeRole::Pce => continue,
                    NodeRole::Fn => {
                        let d = self.fabric.node(n).expect("node").state_digest();
                        self.initial_fn_digests.insert(n, d.clone());
                        d
                    }
                    NodeRole::Nap => match self.snaps.get(&n) {
                        Some(s) => s.routing_digest(),
                        None => crate::nap::FidTable::default().digest(),
                    },
                };
                self.digests.insert(n, d.clone());
                self.emit(Elem::Node(n), Event::RoutingState { digest: d });
            }
            let d = self.pce.state_digest();
            self.digests.insert(self.pce_node, d.clone());
            self.emit(Elem::Node(self.pce_node), Event::RoutingState { digest: d });

            let snaps: Vec<NodeId> = self.snap_server.keys().copied().collect();
            for n in snaps {
                self.sync_publication(n);
            }
            if let Some((_, node)) = self.source {
                for i in 0..self.channels.len() {
                    let name = self.channels[i].name;
                    let desc = self.describe(&name);
                    self.emit(Elem::Node(node), Event::Publish { name: desc });
                    self.to_pce(PceMsg::Publish(name, node));
                }
            }
        } else {
            let tree = self.ipnet.stp.active.clone();
            self.log_tree(&tree);
        }

        if let Some(h) = &cfg.hls {
            for (i, c) in h.clients.iter().enumerate() {
                let mut at = c.start_ms * 1_000;
                if c.start_jitter_ms > 0 {
                    at += substream(self.seed, &format!("client.jitter.{}", c.name))
                        .random_range(0..c.start_jitter_ms * 1_000);
                }
                self.sched.schedule(VirtualTime(at), Action::ClientStart(i));
            }
        }
        if let Some(t) = &cfg.iptv {
            for i in 0..self.channels.len() {
                self.sched.schedule(VirtualTime::ZERO, Action::IptvEmit(i));
            }
            for (i, s) in t.stbs.iter().enumerate() {
                self.sched.schedule(VirtualTime::from_millis(s.start_ms), Action::StbStart(i));
            }
        }
        for (i, e) in cfg.script.iter().enumerate() {
            self.sched.schedule(VirtualTime::from_millis(e.at_ms), Action::Script(i));
        }

        let end = self.end;
        while let Some((_, a)) = self.sched.pop_due(end) {
            self.handle(a);
        }
        self.sched.run_until(end, |_, _, _| {}).expect("bound not in past");
    }

    fn handle(&mut self, a: Action) {
        match a {
            Action::Script(i) => self.script(i),
            Action::ClientStart(i) => self.client_input(i, ClientInput::Start),
            Action::ClientWake(i) => self.client_input(i, ClientInput::Wake),
            Action::ClientTimeout { client, req } => self.client_input(client, ClientInput::Timeout { req }),
            Action::ClientResponse { client, req, msg } => self.client_response(client, req, msg),
            Action::RequestAtEdge { client, req, path } => self.request_at_edge(client, req, path),
            Action::ToPce(m) => self.pce_message(m),
            Action::Topology(ev) => self.pce_topology(ev),
            Action::Notice(n) => self.notice(n),
            Action::GroupClose { snap, group } => self.group_close(snap, group),
            Action::ServerRequest { server, from, path } => self.server_request(server, from, path),
            Action::SnapResponse { snap, group, msg } => self.snap_response(snap, group, msg),
            Action::ServerInject { server, msg, dst } => self.server_inject(server, msg, dst),
            Action::Arrive { tx, pkt } => {
                if self.fabric.arrive(&tx, pkt.size) {
                    let node = self.fabric.topology().link(tx.link).dst;
                    self.process_at(node, pkt, Some(tx.link), None);
                } else {
                    self.drop_pkt(Elem::Link(tx.link), &pkt, DropReason::LostInFlight);
                }
            }
            Action::StbStart(i) => {
                let ch = self.stbs[i].channel;
                self.zap(i, ch);
                let phase = self.stbs[i].phase;
                self.sched.schedule(phase, Action::IgmpReport(i));
            }
            Action::IgmpAtEdge { stb, group, join } => self.igmp_at_edge(stb, group, join),
            Action::IgmpReport(i) => {
                if let Some(ch) = self.stbs[i].stb.current {
                    let group = self.channel(ch).ch.group;
                    self.send_igmp(i, group, true);
                }
                let q = VirtualTime::from_millis(self.cfg.params.igmp_query_interval_ms);
                self.sched.schedule(q, Action::IgmpReport(i));
            }
            Action::IptvEmit(c) => self.iptv_emit(c),
            Action::IptvRx { stb, channel, seq } => {
                let now = self.sched.now();
                let s = &mut self.stbs[stb];
                if s.stb.current != Some(channel) {
                    return;
                }
                let acq = s.stb.on_packet(now, channel);
                let host = s.host;
                self.emit(Elem::Host(host), Event::IptvRx { channel, seq });
                if let Some(a) = acq {
                    self.emit(
                        Elem::Host(host),
                        Event::Acquisition {
                            channel,
                            acquisition_us: a.as_micros(),
                        },
                    );
                    self.sample(Elem::Host(host), "acquisition_us", a.as_micros() as f64);
                }
            }
            Action::StpFinish(end) => self.stp_finish(end),
            Action::ServerCheck(i) => self.server_check(i),
        }
    }

    fn channel(&self, id: u32) -> &ChannelRt {
        self.channels.iter().find(|c| c.ch.id == id).expect("known channel")
    }

    // ---- script ----

    fn script(&mut self, i: usize) {
        let now = self.sched.now();
        let action = self.cfg.script[i].action.clone();
        match action {
            ScriptAction::LinkDown { link } => self.set_link(&link, false),
            ScriptAction::LinkUp { link } => self.set_link(&link, true),
            ScriptAction::ServerDown { server } | ScriptAction::ServerUp { server } => {
                let up = matches!(self.cfg.script[i].action, ScriptAction::ServerUp { .. });
                let s = self.server_index(&server);
                if self.servers[s].up == up {
                    self.emit(Elem::Run, Event::ScriptError { detail: format!("server {server} already {}", if up { "up" } else { "down" }) });
                    return;
                }
                self.servers[s].up = up;
                let host = self.servers[s].host;
                self.emit(Elem::Host(host), Event::ServerState { up });
                if self.mode == Mode::Icn {
                    let d = VirtualTime::from_millis(self.cfg.params.detection_delay_ms);
                    self.sched.schedule(d, Action::ServerCheck(s));
                }
            }
            ScriptAction::SurrogateOn { server } | ScriptAction::SurrogateOff { server } => {
                let on = matches!(self.cfg.script[i].action, ScriptAction::SurrogateOn { .. });
                let s = self.server_index(&server);
                self.servers[s].enabled = on;
                let (host, node) = (self.servers[s].host, self.servers[s].node);
                self.emit(Elem::Host(host), Event::SurrogateState { on });
                if self.mode == Mode::Icn {
                    self.snaps.get_mut(&node).expect("server snap").set_agent_enabled(on);
                    self.sync_publication(node);
                }
            }
            ScriptAction::Zap { stb, channel } => {
                let i = self.stbs.iter().position(|s| self.hosts[s.host.0].name == stb).expect("validated stb");
                self.zap(i, channel);
            }
        }
        let _ = now;
    }

    fn server_index(&self, name: &str) -> usize {
        self.servers
            .iter()
            .position(|s| self.hosts[s.host.0].name == name)
            .expect("validated server")
    }

    fn set_link(&mut self, label: &str, up: bool) {
        let now = self.sched.now();
        let l = self.fabric.topology().link_by_label(label).expect("validated link");
        match self.fabric.set_link_state(l, up, now) {
            Ok(ev) => {
                self.emit(Elem::Phys(l.physical()), Event::LinkState { up });
                match self.mode {
                    Mode::Icn => {
                        let d = VirtualTime::from_millis(self.cfg.params.detection_delay_ms);
                        self.sched.schedule(d, Action::Topology(ev));
                    }
                    Mode::Ip => {
                        let topo = self.fabric.topology();
                        if let Some(end) = self.ipnet.stp.on_link_event(topo, now) {
                            self.emit(Elem::Stp, Event::StpReconverge { until: end });
                            self.sched.schedule_at(end, Action::StpFinish(end)).expect("future");
                        }
                    }
                }
            }
            Err(e) => self.emit(Elem::Run, Event::ScriptError { detail: e.to_string() }),
        }
    }

    fn log_tree(&mut self, tree: &BTreeSet<usize>) {
        let links = tree.iter().map(|p| self.phys_names[*p].clone()).collect();
        self.emit(Elem::Stp, Event::StpTree { links });
    }

    fn stp_finish(&mut self, end: VirtualTime) {
        let topo = self.fabric.topology();
        if !self.ipnet.stp.finish(topo, end) {
            return;
        }
        self.ipnet.flush_all();
        let tree = self.ipnet.stp.active.clone();
        // The tree must be acyclic, connected over up links.
        let topo = self.fabric.topology();
        let root = self.ipnet.stp.root;
        let mut seen = BTreeSet::from([root]);
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &l in topo.out_links(u) {
                let v = topo.link(l).dst;
                if tree.contains(&l.physical()) && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        if tree.iter().any(|p| !topo.is_up(LinkIdx(p * 2))) || seen.len() != tree.len() + 1 {
            self.violation(format!("spanning tree: invalid tree {tree:?} at {end}"));
        }
        self.log_tree(&tree);
        self.emit(Elem::Stp, Event::SnoopFlush);
    }

    // ---- control plane (icn) ----

    fn to_pce(&mut self, m: PceMsg) {
        let d = VirtualTime(self.cfg.params.control_latency_us);
        self.sched.schedule(d, Action::ToPce(m));
    }

    fn sync_publication(&mut self, node: NodeId) {
        let want = self.snaps[&node].should_publish();
        if self.published.get(&node) == Some(&want) {
            return;
        }
        self.published.insert(node, want);
        let scope = self.hls_scope.expect("hls configured");
        let desc = self.describe(&scope);
        if want {
            self.emit(Elem::Node(node), Event::Publish { name: desc });
            self.to_pce(PceMsg::Publish(scope, node));
        } else {
            self.emit(Elem::Node(node), Event::Unpublish { name: desc });
            self.to_pce(PceMsg::Unpublish(scope, node));
        }
    }

    fn pce_message(&mut self, m: PceMsg) {
        let r = match m {
            PceMsg::Publish(n, node) => self.pce.publish(n, node),
            PceMsg::Unpublish(n, node) => self.pce.unpublish(n, node),
            PceMsg::Subscribe(n, node) => self.pce.subscribe(n, node),
            PceMsg::Unsubscribe(n, node) => self.pce.unsubscribe(n, node),
        };
        match r {
            Ok(notices) => self.dispatch(notices),
            Err(e) => {
                self.emit(Elem::Node(self.pce_node), Event::NapError { detail: e.to_string() });
                self.violation(format!("pce: {e}"));
            }
        }
        self.check_routing();
    }

    fn dispatch(&mut self, notices: Vec<PceNotice>) {
        let d = VirtualTime(self.cfg.params.pce_processing_us);
        for n in notices {
            if let PceNotice::Match { publisher, subscriber, name } = &n {
                let ev = Event::Match {
                    name: self.describe(name),
                    publisher: self.node_names[publisher.0].clone(),
                    subscriber: self.node_names[subscriber.0].clone(),
                };
                self.emit(Elem::Node(self.pce_node), ev);
            }
            self.sched.schedule(d, Action::Notice(n));
        }
    }

    fn pce_topology(&mut self, ev: TopologyEvent) {
        match self.pce.on_topology_event(&ev) {
            Ok(rep) => {
                let e = Event::PceTopology {
                    link: self.phys_names[ev.link.physical()].clone(),
                    up: ev.up,
                    epoch: rep.epoch,
                    invalidated: rep.invalidated as u64,
                };
                self.emit(Elem::Node(self.pce_node), e);
                self.dispatch(rep.notices);
            }
            Err(e) => self.violation(format!("pce topology: {e}")),
        }
        self.check_routing();
    }

    fn notice(&mut self, n: PceNotice) {
        match n {
            PceNotice::Match { publisher, subscriber, name } => {
                if self.channel_of_name.contains_key(&name) {
                    // Streams are served through FID updates.
                    return;
                }
                let Some(fp) = self.fingerprints.get(&name).cloned() else {
                    self.emit(Elem::Node(publisher), Event::NapError { detail: format!("match for unknown name {}", self.describe(&name)) });
                    return;
                };
                let now = self.sched.now();
                let Some(snap) = self.snaps.get_mut(&publisher) else {
                    self.violation(format!("match sent to non-snap {}", self.node_names[publisher.0]));
                    return;
                };
                match snap.on_match(now, &fp, subscriber) {
                    MatchOutcome::Opened { group, close_at } => {
                        self.emit(Elem::Node(publisher), Event::GroupOpen { group, url: format!("{}{}", fp.host, fp.path) });
                        self.emit(Elem::Node(publisher), Event::GroupJoin { group, member: self.node_names[subscriber.0].clone() });
                        self.sched
                            .schedule_at(close_at, Action::GroupClose { snap: publisher, group })
                            .expect("close in future");
                    }
                    MatchOutcome::Joined { group } => {
                        self.emit(Elem::Node(publisher), Event::GroupJoin { group, member: self.node_names[subscriber.0].clone() });
                    }
                    MatchOutcome::AlreadyMember { .. } => {}
                }
            }
            PceNotice::FidUpdate { nap, name, tree, epoch } => {
                let Some(snap) = self.snaps.get_mut(&nap) else {
                    self.violation(format!("fid update sent to non-snap {}", self.node_names[nap.0]));
                    return;
                };
                snap.fid_table.apply_update(name, tree.fid.clone(), epoch);
                self.trees.insert((nap, name), Rc::new(tree.links));
                let e = Event::FidUpdate {
                    name: self.describe(&name),
                    fid: tree.fid.to_hex(),
                    epoch,
                };
                self.emit(Elem::Node(nap), e);
                self.check_routing();
            }
        }
    }

    /// Logs a routing-state digest for every element whose digest changed.
    fn check_routing(&mut self) {
        if self.mode != Mode::Icn {
            return;
        }
        let mut cur = vec![(self.pce_node, self.pce.state_digest())];
        cur.extend(self.snaps.iter().map(|(n, s)| (*n, s.routing_digest())));
        for (n, d) in cur {
            if self.digests.get(&n) != Some(&d) {
                self.digests.insert(n, d.clone());
                self.emit(Elem::Node(n), Event::RoutingState { digest: d });
            }
        }
    }

    fn group_close(&mut self, snap: NodeId, group: u64) {
        let Some(g) = self.snaps.get_mut(&snap).and_then(|s| s.close(group)) else {
            return;
        };
        let members = g.members.len() as u32;
        let path = g.fingerprint.path.clone();
        self.emit(Elem::Node(snap), Event::GroupClose { group, members });
        let server = self.snap_server[&snap];
        let d = VirtualTime(self.cfg.access.server_latency_us);
        self.sched.schedule(
            d,
            Action::ServerRequest {
                server,
                from: Origin::Snap { node: snap, group },
                path,
            },
        );
    }

    fn server_check(&mut self, i: usize) {
        let (up, node) = (self.servers[i].up, self.servers[i].node);
        let snap = self.snaps.get_mut(&node).expect("server snap");
        snap.set_server_up(up);
        if !up {
            let lost = snap.abandon_serving();
            for g in lost {
                self.emit(Elem::Node(node), Event::ServerLost { url: format!("{}{}", g.fingerprint.host, g.fingerprint.path) });
            }
        }
        self.sync_publication(node);
    }

    // ---- servers ----

    fn server_request(&mut self, server: usize, from: Origin, path: String) {
        let now = self.sched.now();
        let catalog = self.catalog.as_ref().expect("hls configured");
        let url = format!("{}{}", catalog.host, path);
        let host = self.servers[server].host;
        self.emit(Elem::Host(host), Event::ServerRequest { url: url.clone() });
        if !self.servers[server].answering() {
            self.emit(Elem::Host(host), Event::ServerLost { url });
            return;
        }
        let catalog = self.catalog.as_ref().expect("hls configured");
        let response = catalog.serve(now, &path);
        let name = ContentName::from_labels(&catalog.host, &path);
        let msg = self.next_msg;
        self.next_msg += 1;
        let class = class_of(&response.body);
        self.emit(
            Elem::Host(host),
            Event::ServerResponse {
                url: url.clone(),
                status: response.status,
                size: response.size,
                class,
                msg,
            },
        );
        let req = match from {
            Origin::Host { req, .. } => req,
            Origin::Snap { .. } => 0,
        };
        self.messages.insert(msg, MsgInfo::Response { url, name, response, req });
        let d = VirtualTime(self.cfg.access.server_latency_us);
        match from {
            Origin::Snap { node, group } => {
                self.sched.schedule(d, Action::SnapResponse { snap: node, group, msg });
            }
            Origin::Host { client, .. } => {
                self.sched.schedule(d, Action::ServerInject { server, msg, dst: client });
            }
        }
    }

    fn response_meta(&self, msg: u64) -> (ContentName, u64, TrafficClass) {
        match &self.messages[&msg] {
            MsgInfo::Response { name, response, .. } => (*name, response.size, class_of(&response.body)),
            MsgInfo::Request { .. } => unreachable!("request message used as response"),
        }
    }

    fn snap_response(&mut self, snap: NodeId, group: u64, msg: u64) {
        let Some(g) = self.snaps.get_mut(&snap).and_then(|s| s.take_for_response(group)) else {
            return;
        };
        let receivers: BTreeSet<NodeId> = g.members.iter().copied().collect();
        let (fid, intended) = match self.pce.build_multicast_tree(snap, &receivers) {
            Ok(t) => (t.fid, Some(Rc::new(t.links))),
            Err(PceError::PartialTree { fid, unreachable }) => {
                let names: Vec<&str> = unreachable.iter().map(|n| self.node_names[n.0].as_str()).collect();
                let detail = format!("group {group}: unreachable receivers {}", names.join(","));
                self.emit(Elem::Node(snap), Event::NapError { detail });
                (fid, None)
            }
            Err(e) => {
                self.emit(Elem::Node(snap), Event::NapError { detail: e.to_string() });
                return;
            }
        };
        let (name, size, class) = self.response_meta(msg);
        self.emit(
            Elem::Node(snap),
            Event::GroupServed {
                group,
                msg,
                packets: segment_count(size),
                members: receivers.len() as u32,
            },
        );
        self.inject_message(snap, Header::Icn { fid }, name, class, msg, size, None, intended);
        self.check_routing();
    }

    fn server_inject(&mut self, server: usize, msg: u64, dst: HostId) {
        let (host, node) = (self.servers[server].host, self.servers[server].node);
        let (name, size, class) = self.response_meta(msg);
        self.inject_message(node, Header::IpUnicast { src: host, dst }, name, class, msg, size, Some(host), None);
    }

    // ---- clients ----

    fn client_input(&mut self, i: usize, input: ClientInput) {
        let now = self.sched.now();
        let outs = self.clients[i].hls.on_input(now, input);
        for o in outs {
            self.client_output(i, o);
        }
    }

    fn client_output(&mut self, i: usize, o: ClientOutput) {
        let now = self.sched.now();
        let host = self.clients[i].host;
        let catalog = self.catalog.as_ref().expect("hls configured");
        let site = catalog.host.clone();
        match o {
            ClientOutput::Request { req, path, timeout_at } => {
                if path != PLAYLIST_PATH && catalog.parse_path(&path).is_none() {
                    let who = self.hosts[host.0].name.clone();
                    self.violation(format!("client {who}: requested {path} not offered"));
                }
                let url = format!("{site}{path}");
                let server = match &self.clients[i].dns {
                    Some(d) => self.hosts[d.current().0].name.clone(),
                    None => site.clone(),
                };
                self.emit(Elem::Host(host), Event::HttpRequest { req, url, server });
                self.sched
                    .schedule_at(timeout_at, Action::ClientTimeout { client: i, req })
                    .expect("timeout in future");
                let up = serialization(REQUEST_BYTES, self.cfg.access.client_capacity_bps)
                    + VirtualTime(self.cfg.access.client_latency_us);
                self.sched.schedule(up, Action::RequestAtEdge { client: i, req, path });
            }
            ClientOutput::WakeAt(t) => {
                self.sched.schedule_at(t, Action::ClientWake(i)).expect("wake in future");
            }
            ClientOutput::PlaybackStart { index } => {
                self.emit(Elem::Host(host), Event::PlaybackStart { index });
            }
            ClientOutput::ChunkArrival { index, bitrate, size, throughput_bps } => {
                self.clients[i].arrivals.push(now);
                self.emit(Elem::Host(host), Event::ChunkArrival { index, bitrate, size, throughput_bps });
                let level = self.clients[i].hls.buffer_level(now).as_micros() as f64;
                self.sample(Elem::Host(host), "buffer_us", level);
                self.sample(Elem::Host(host), "throughput_bps", throughput_bps as f64);
            }
            ClientOutput::Stall { start, end, truncated } => {
                self.clients[i].stalls.push((start, end));
                self.emit(Elem::Host(host), Event::Stall { start, end, truncated });
                self.sample(Elem::Host(host), "stall_us", end.saturating_sub(start).as_micros() as f64);
            }
            ClientOutput::BitrateSwitch { from, to } => {
                self.emit(Elem::Host(host), Event::BitrateSwitch { from, to });
            }
            ClientOutput::Timeout { req, path } => {
                let url = format!("{site}{path}");
                self.emit(Elem::Host(host), Event::Timeout { req, url });
            }
            ClientOutput::Late { req } => {
                self.emit(Elem::Host(host), Event::LateResponse { req });
            }
            ClientOutput::Failover => {
                if let Some(d) = self.clients[i].dns.as_mut() {
                    let (from, to, exhausted) = match d.on_timeout() {
                        FailoverOutcome::Switched { from, to } => (from, to, false),
                        FailoverOutcome::Exhausted { from, to } => (from, to, true),
                    };
                    let ev = Event::DnsFailover {
                        from: self.hosts[from.0].name.clone(),
                        to: self.hosts[to.0].name.clone(),
                        exhausted,
                    };
                    self.emit(Elem::Host(host), ev);
                }
            }
        }
    }

    fn client_response(&mut self, client: usize, req: u64, msg: u64) {
        let MsgInfo::Response { url, response, .. } = &self.messages[&msg] else {
            unreachable!("response expected");
        };
        let (url, response) = (url.clone(), response.clone());
        let host = self.clients[client].host;
        self.emit(
            Elem::Host(host),
            Event::HttpResponse {
                req,
                url,
                status: response.status,
                size: response.size,
                class: class_of(&response.body),
            },
        );
        self.client_input(client, ClientInput::Response { req, response });
    }

    fn request_at_edge(&mut self, client: usize, req: u64, path: String) {
        let (host, node) = (self.clients[client].host, self.clients[client].node);
        let catalog = self.catalog.as_ref().expect("hls configured");
        let request = HttpRequest::get(&catalog.host, &path);
        let fp = RequestFingerprint::parse(&request).ok();
        let name = fp.as_ref().map_or(ContentName::new(0, 0), |f| f.name());
        match self.mode {
            Mode::Icn => {
                if let Some(fp) = fp {
                    self.fingerprints.entry(name).or_insert(fp);
                }
                let cnap = self.cnaps.get_mut(&node).expect("client cnap");
                match cnap.handle_http(host, req, &request) {
                    CnapAction::Subscribe(n) => {
                        let desc = self.describe(&n);
                        self.emit(Elem::Node(node), Event::Subscribe { name: desc });
                        self.to_pce(PceMsg::Subscribe(n, node));
                    }
                    CnapAction::ErrorResponse { reason, .. } => {
                        self.emit(Elem::Node(node), Event::NapError { detail: reason });
                    }
                    _ => {}
                }
            }
            Mode::Ip => {
                let dst = self.clients[client].dns.as_ref().expect("ip client").current();
                let msg = self.next_msg;
                self.next_msg += 1;
                self.messages.insert(msg, MsgInfo::Request { client, req, path });
                self.inject_message(
                    node,
                    Header::IpUnicast { src: host, dst },
                    name,
                    TrafficClass::Request,
                    msg,
                    REQUEST_BYTES as u64,
                    Some(host),
                    None,
                );
            }
        }
    }

    // ---- iptv ----

    fn zap(&mut self, i: usize, channel: u32) {
        let now = self.sched.now();
        let z = self.stbs[i].stb.zap(now, channel);
        let host = self.stbs[i].host;
        self.emit(Elem::Host(host), Event::Zap { from: z.leave, to: channel });
        if let Some(old) = z.leave {
            let g = self.channel(old).ch.group;
            self.send_igmp(i, g, false);
        }
        if let Some(new) = z.join {
            let g = self.channel(new).ch.group;
            self.send_igmp(i, g, true);
        }
    }

    fn send_igmp(&mut self, i: usize, group: u32, join: bool) {
        let host = self.stbs[i].host;
        let g = group_str(group);
        self.emit(Elem::Host(host), if join { Event::IgmpJoin { group: g } } else { Event::IgmpLeave { group: g } });
        let d = VirtualTime(self.cfg.access.client_latency_us);
        self.sched.schedule(d, Action::IgmpAtEdge { stb: i, group, join });
    }

    fn igmp_at_edge(&mut self, stb: usize, group: u32, join: bool) {
        let (host, node) = (self.stbs[stb].host, self.stbs[stb].node);
        match self.mode {
            Mode::Icn => {
                let cnap = self.cnaps.get_mut(&node).expect("stb cnap");
                match cnap.handle_igmp(host, join, group) {
                    Ok(Some(CnapAction::Subscribe(n))) => {
                        let desc = self.describe(&n);
                        self.emit(Elem::Node(node), Event::Subscribe { name: desc });
                        self.to_pce(PceMsg::Subscribe(n, node));
                    }
                    Ok(Some(CnapAction::Unsubscribe(n))) => {
                        let desc = self.describe(&n);
                        self.emit(Elem::Node(node), Event::Unsubscribe { name: desc });
                        self.to_pce(PceMsg::Unsubscribe(n, node));
                    }
                    Ok(Some(CnapAction::Warning(w))) => {
                        self.emit(Elem::Node(node), Event::IgmpWarning { detail: w });
                    }
                    Ok(_) => {}
                    Err(e) => self.emit(Elem::Node(node), Event::NapError { detail: e.to_string() }),
                }
            }
            Mode::Ip => {
                let name = self
                    .channels
                    .iter()
                    .find(|c| c.ch.group == group)
                    .map_or(ContentName::new(0, 0), |c| c.name);
                let pkt = self.packet(Header::Igmp { group, host, join }, name, TrafficClass::Igmp, IGMP_BYTES, Payload::Empty, node, None);
                self.inject(node, pkt, Some(host), None);
            }
        }
    }

    fn iptv_emit(&mut self, c: usize) {
        let (host, node) = self.source.expect("iptv configured");
        let ch = &mut self.channels[c];
        ch.seq += 1;
        let (id, seq, name, group, size, interval) =
            (ch.ch.id, ch.seq, ch.name, ch.ch.group, ch.ch.packet_size, ch.ch.packet_interval());
        self.emit(Elem::Host(host), Event::IptvEmit { channel: id, seq });
        let payload = Payload::Iptv { channel: id, seq };
        match self.mode {
            Mode::Icn => {
                let m = self.fabric.topology().fid_width();
                let fid = self.snaps[&node].fid_table.get(&name).cloned().unwrap_or_else(|| Fid::zero(m));
                let intended = self.trees.get(&(node, name)).cloned();
                let pkt = self.packet(Header::Icn { fid }, name, TrafficClass::Iptv, size, payload, node, intended);
                self.inject(node, pkt, None, None);
            }
            Mode::Ip => {
                let pkt = self.packet(Header::IpMulticast { group }, name, TrafficClass::Iptv, size, payload, node, None);
                self.inject(node, pkt, Some(host), None);
            }
        }
        self.sched.schedule(interval, Action::IptvEmit(c));
    }

    // ---- forwarding plane ----

    #[allow(clippy::too_many_arguments)]
    fn packet(
        &mut self,
        header: Header,
        name: ContentName,
        class: TrafficClass,
        size: u32,
        payload: Payload,
        origin: NodeId,
        intended: Option<Rc<BTreeSet<LinkIdx>>>,
    ) -> Packet {
        self.next_pkt += 1;
        Packet {
            id: self.next_pkt,
            header,
            name,
            kind: if class == TrafficClass::Igmp { PacketKind::Control } else { PacketKind::Data },
            class,
            size,
            payload: Rc::new(payload),
            origin,
            ttl: DEFAULT_TTL,
            intended,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn inject_message(
        &mut self,
        node: NodeId,
        header: Header,
        name: ContentName,
        class: TrafficClass,
        msg: u64,
        size: u64,
        from_host: Option<HostId>,
        intended: Option<Rc<BTreeSet<LinkIdx>>>,
    ) {
        let total = segment_count(size);
        for seq in 0..total {
            let payload = Payload::Fragment { msg, seq, total };
            let pkt = self.packet(header.clone(), name, class, segment_size(size, seq), payload, node, intended.clone());
            self.inject(node, pkt, from_host, Some(msg));
        }
    }

    fn inject(&mut self, node: NodeId, pkt: Packet, from_host: Option<HostId>, msg: Option<u64>) {
        if let Err(e) = self.fabric.check_inject(node, &pkt) {
            self.violation(format!("inject at {}: {e}", self.node_names[node.0]));
            return;
        }
        self.emit(
            Elem::Node(node),
            Event::Inject {
                pkt: pkt.id,
                size: pkt.size,
                class: pkt.class,
                msg,
            },
        );
        self.live.injected += pkt.size as u64;
        self.process_at(node, pkt, None, from_host);
    }

    fn drop_pkt(&mut self, e: Elem, pkt: &Packet, reason: DropReason) {
        self.live.dropped += pkt.size as u64;
        self.emit(
            e,
            Event::Drop {
                pkt: pkt.id,
                size: pkt.size,
                reason: reason.as_str().into(),
            },
        );
    }

    fn deliver(&mut self, e: Elem, pkt: &Packet) {
        self.live.delivered += pkt.size as u64;
        self.emit(
            e,
            Event::Deliver {
                pkt: pkt.id,
                size: pkt.size,
                class: pkt.class,
            },
        );
    }

    /// One forwarding step at `node`: every copy the node makes is sent,
    /// delivered locally or dropped.
    fn process_at(&mut self, node: NodeId, pkt: Packet, ingress: Option<LinkIdx>, from_host: Option<HostId>) {
        let mut blocked = Vec::new();
        let mut hosts = Vec::new();
        let egress;
        let local;
        match &pkt.header {
            Header::Icn { fid } => {
                let d = self.fabric.forward_step(node, fid, ingress).expect("known node");
                egress = d.egress;
                blocked = d.blocked;
                local = ingress.is_some() && self.fabric.topology().node(node).role == NodeRole::Nap;
            }
            h => {
                let topo = self.fabric.topology();
                let accepted = ingress.is_none_or(|l| self.ipnet.stp.is_forwarding(topo, l));
                let d = self.ipnet.ip_forward(topo, node, h, ingress, from_host);
                egress = d.links;
                hosts = d.hosts;
                // Membership reports end at the querier.
                local = accepted
                    && matches!(h, Header::Igmp { .. })
                    && self.source.is_some_and(|(_, q)| q == node);
            }
        }
        let copies = egress.len() + blocked.len() + hosts.len() + local as usize;
        if copies == 0 {
            self.drop_pkt(Elem::Node(node), &pkt, DropReason::NoEgress);
            return;
        }
        if copies > 1 {
            let extra = copies as u32 - 1;
            self.live.replicated += pkt.size as u64 * extra as u64;
            self.emit(
                Elem::Node(node),
                Event::Replicate {
                    pkt: pkt.id,
                    size: pkt.size,
                    extra,
                },
            );
        }
        for l in blocked {
            self.drop_pkt(Elem::Link(l), &pkt, DropReason::LinkDown);
        }
        for l in egress {
            self.send(l, &pkt);
        }
        if local {
            self.deliver(Elem::Node(node), &pkt);
            if self.mode == Mode::Icn {
                self.nap_receive(node, &pkt);
            }
        }
        for h in hosts {
            self.deliver(Elem::Host(h), &pkt);
            self.host_receive(h, &pkt);
        }
    }

    fn send(&mut self, l: LinkIdx, pkt: &Packet) {
        if pkt.ttl <= 1 {
            self.drop_pkt(Elem::Link(l), pkt, DropReason::TtlExpired);
            return;
        }
        let mut p = pkt.clone();
        p.ttl -= 1;
        let now = self.sched.now();
        match self.fabric.transmit(l, &p, now) {
            Ok(tx) => {
                let fp = p.intended.as_ref().is_some_and(|s| !s.contains(&l));
                self.emit(
                    Elem::Link(l),
                    Event::LinkTx {
                        pkt: p.id,
                        size: p.size,
                        class: p.class,
                        fp,
                    },
                );
                let total = self.fabric.counters(l).tx_bytes as f64;
                self.sample(Elem::Link(l), "tx_bytes", total);
                self.sched
                    .schedule_at(tx.arrival, Action::Arrive { tx, pkt: p })
                    .expect("arrival in future");
            }
            Err(r) => self.drop_pkt(Elem::Link(l), &p, r),
        }
    }

    /// Pushes `size` bytes down a host's access line; returns when they are out.
    fn pipe(&mut self, h: HostId, size: u32) -> VirtualTime {
        let now = self.sched.now();
        let cap = self.cfg.access.client_capacity_bps;
        let host = &mut self.hosts[h.0];
        host.down_busy = host.down_busy.max(now) + serialization(size, cap);
        host.down_busy + VirtualTime(self.cfg.access.client_latency_us)
    }

    fn client_of(&self, h: HostId) -> usize {
        match self.hosts[h.0].kind {
            HostKind::Client(i) => i,
            _ => unreachable!("not a client host"),
        }
    }

    fn stb_of(&self, h: HostId) -> Option<usize> {
        match self.hosts[h.0].kind {
            HostKind::Stb(i) => Some(i),
            _ => None,
        }
    }

    /// A packet delivered to an icn NAP.
    fn nap_receive(&mut self, node: NodeId, pkt: &Packet) {
        let Some(cnap) = self.cnaps.get_mut(&node) else {
            self.emit(Elem::Node(node), Event::Spurious { pkt: pkt.id });
            return;
        };
        match *pkt.payload {
            Payload::Fragment { msg, total, .. } => {
                let waiting: Vec<HostId> = cnap.pending(&pkt.name).iter().map(|p| p.client).collect();
                let demux = cnap.on_fragment(&pkt.name, msg, total);
                let mut ready = BTreeMap::new();
                for h in waiting {
                    ready.insert(h, self.pipe(h, pkt.size));
                }
                match demux {
                    Demux::Complete { msg, clients, unsubscribe } => {
                        for c in clients {
                            let at = ready[&c.client];
                            let client = self.client_of(c.client);
                            self.sched
                                .schedule_at(at, Action::ClientResponse { client, req: c.req, msg })
                                .expect("future");
                        }
                        let desc = self.describe(&unsubscribe);
                        self.emit(Elem::Node(node), Event::Unsubscribe { name: desc });
                        self.to_pce(PceMsg::Unsubscribe(unsubscribe, node));
                    }
                    Demux::Spurious => self.emit(Elem::Node(node), Event::Spurious { pkt: pkt.id }),
                    _ => {}
                }
            }
            Payload::Iptv { channel, seq } => match cnap.on_stream_packet(&pkt.name) {
                Demux::Stream(members) => {
                    for h in members {
                        let at = self.pipe(h, pkt.size);
                        if let Some(stb) = self.stb_of(h) {
                            self.sched
                                .schedule_at(at, Action::IptvRx { stb, channel, seq })
                                .expect("future");
                        }
                    }
                }
                _ => self.emit(Elem::Node(node), Event::Spurious { pkt: pkt.id }),
            },
            Payload::Empty => self.emit(Elem::Node(node), Event::Spurious { pkt: pkt.id }),
        }
    }

    /// A packet delivered to a host port in ip mode.
    fn host_receive(&mut self, h: HostId, pkt: &Packet) {
        match (self.hosts[h.0].kind, &*pkt.payload) {
            (HostKind::Client(client), &Payload::Fragment { msg, total, .. }) => {
                let at = self.pipe(h, pkt.size);
                let got = self.host_rx.entry((h, msg)).or_insert(0);
                *got += 1;
                if *got == total {
                    self.host_rx.remove(&(h, msg));
                    if let Some(MsgInfo::Response { req, .. }) = self.messages.get(&msg) {
                        let req = *req;
                        self.sched
                            .schedule_at(at, Action::ClientResponse { client, req, msg })
                            .expect("future");
                    }
                }
            }
            (HostKind::Server(server), &Payload::Fragment { msg, .. }) => {
                if let Some(MsgInfo::Request { client, req, path }) = self.messages.get(&msg) {
                    let from = Origin::Host {
                        client: self.clients[*client].host,
                        req: *req,
                    };
                    let path = path.clone();
                    let d = VirtualTime(self.cfg.access.server_latency_us);
                    self.sched.schedule(d, Action::ServerRequest { server, from, path });
                }
            }
            (HostKind::Stb(stb), &Payload::Iptv { channel, seq }) => {
                let at = self.pipe(h, pkt.size);
                self.sched
                    .schedule_at(at, Action::IptvRx { stb, channel, seq })
                    .expect("future");
            }
            _ => {}
        }
    }

    // ---- end of run ----

    fn finish(mut self) -> RunOutput {
        for i in 0..self.clients.len() {
            self.client_input(i, ClientInput::Finish);
        }
        for (_, a) in self.sched.drain_pending() {
            if let Action::Arrive { tx, pkt } = a {
                self.live.in_flight += pkt.size as u64;
                self.emit(Elem::Link(tx.link), Event::InFlight { pkt: pkt.id, size: pkt.size });
            }
        }
        self.emit(Elem::Run, Event::RunEnd);

        if !self.live.holds() {
            self.violation(format!("conservation: {:?}", self.live));
        }
        for v in self.pce.violations().to_vec() {
            self.violation(format!("pce: {v}"));
        }
        if let Some(c) = &self.catalog {
            let d = c.chunk_duration;
            for (i, cl) in self.clients.iter().enumerate() {
                let replay = replay_stalls(d, &cl.arrivals, self.end);
                if replay != cl.stalls {
                    self.violations.push(format!(
                        "stall accounting: client {} logged {:?}, replay {:?}",
                        self.hosts[self.clients[i].host.0].name, cl.stalls, replay
                    ));
                }
            }
        }
        for (n, s) in &self.snaps {
            for name in self.fingerprints.keys() {
                if s.upstream_requests(name) > s.windows_opened(name) {
                    self.violations.push(format!(
                        "coalescing: {} sent more upstream requests than windows for {}",
                        self.node_names[n.0],
                        self.describe(name)
                    ));
                }
            }
        }
        for (n, d) in &self.initial_fn_digests {
            if self.fabric.node(*n).expect("node").state_digest() != *d {
                self.violations.push(format!("statelessness: forwarding node {} changed", self.node_names[n.0]));
            }
        }

        let artifacts = self.tel.into_artifacts();
        let summary = summarize(&artifacts.events);
        if summary.conservation != self.live {
            self.violations.push(format!(
                "summary self-consistency: log gives {:?}, live counters {:?}",
                summary.conservation, self.live
            ));
        }
        RunOutput {
            scenario: self.cfg.name.clone(),
            mode: self.mode,
            seed: self.seed,
            config_hash: self.config_hash,
            effective_config: self.cfg.effective(),
            artifacts,
            summary,
            violations: self.violations,
        }
    }
}
