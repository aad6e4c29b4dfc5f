//! Network attachment points: the IP/ICN gateways.
//!
//! A cNAP turns client HTTP requests and IGMP membership into subscriptions
//! and turns ICN packets back into per-client deliveries. An sNAP publishes
//! what its server offers, coalesces matching requests inside a window and
//! answers each group with one multicast response.
//!
//! Both are plain state machines. The scenario engine feeds them inputs and
//! carries out the actions they return.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fabric::HostId;
use crate::fid::Fid;
use crate::pce::ContentName;
use crate::simkernel::VirtualTime;
use crate::topology::NodeId;

pub const MTU: u32 = 1400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NapError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("invalid group address {0}")]
    BadGroup(u32),
}

/// Request line fields as seen on the IP side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub host: String,
    pub path: String,
}

impl HttpRequest {
    pub fn get(host: &str, path: &str) -> Self {
        HttpRequest {
            method: "GET".into(),
            host: host.into(),
            path: path.into(),
        }
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.host, self.path)
    }
}

/// The mergeable identity of a request: method, host and path only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestFingerprint {
    pub method: String,
    pub host: String,
    pub path: String,
}

impl RequestFingerprint {
    pub fn parse(req: &HttpRequest) -> Result<Self, NapError> {
        if req.method != "GET" && req.method != "HEAD" {
            return Err(NapError::Malformed(format!("method {}", req.method)));
        }
        if req.host.is_empty() || req.host.contains(char::is_whitespace) {
            return Err(NapError::Malformed("host".into()));
        }
        if !req.path.starts_with('/') || req.path.contains(char::is_whitespace) {
            return Err(NapError::Malformed(format!("path {:?}", req.path)));
        }
        Ok(RequestFingerprint {
            method: req.method.clone(),
            host: req.host.clone(),
            path: req.path.clone(),
        })
    }

    /// scope = hash(host), item = hash(method + path).
    pub fn name(&self) -> ContentName {
        if self.method == "GET" {
            ContentName::from_labels(&self.host, &self.path)
        } else {
            ContentName::from_labels(&self.host, &format!("{} {}", self.method, self.path))
        }
    }
}

/// Number of MTU-sized packets needed for `size` bytes.
pub fn segment_count(size: u64) -> u32 {
    size.div_ceil(MTU as u64).max(1) as u32
}

/// Size of packet `seq` (0-based) when `size` bytes are segmented.
pub fn segment_size(size: u64, seq: u32) -> u32 {
    let n = segment_count(size);
    if seq + 1 < n {
        MTU
    } else {
        let rest = size - (n as u64 - 1) * MTU as u64;
        rest.max(1) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PendingClient {
    pub client: HostId,
    pub req: u64,
}

/// IGMP state of one cNAP: group address -> member hosts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IgmpMembership {
    groups: BTreeMap<u32, BTreeSet<HostId>>,
}

impl IgmpMembership {
    pub fn members(&self, group: u32) -> impl Iterator<Item = HostId> + '_ {
        self.groups.get(&group).into_iter().flatten().copied()
    }

    pub fn member_count(&self, group: u32) -> usize {
        self.groups.get(&group).map_or(0, BTreeSet::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CnapAction {
    Subscribe(ContentName),
    Unsubscribe(ContentName),
    /// Request merged into an existing local pending entry.
    MergedLocally(ContentName),
    /// IP-side error, nothing enters the ICN.
    ErrorResponse { client: HostId, req: u64, reason: String },
    /// Leave without a prior join.
    Warning(String),
}

/// What a cNAP does with an arriving ICN data packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Demux {
    /// Fragment accepted; the message is not complete yet.
    Partial,
    /// Last fragment of an HTTP response: deliver to these clients.
    Complete { msg: u64, clients: Vec<PendingClient>, unsubscribe: ContentName },
    /// Stream packet for these IGMP members.
    Stream(Vec<HostId>),
    /// No local consumer.
    Spurious,
}

#[derive(Debug, Clone)]
pub struct Cnap {
    pub node: NodeId,
    pending: BTreeMap<ContentName, Vec<PendingClient>>,
    reassembly: BTreeMap<u64, u32>,
    igmp: IgmpMembership,
    channel_names: BTreeMap<u32, ContentName>,
    name_groups: BTreeMap<ContentName, u32>,
    spurious: u64,
}

impl Cnap {
    pub fn new(node: NodeId) -> Self {
        Cnap {
            node,
            pending: BTreeMap::new(),
            reassembly: BTreeMap::new(),
            igmp: IgmpMembership::default(),
            channel_names: BTreeMap::new(),
            name_groups: BTreeMap::new(),
            spurious: 0,
        }
    }

    pub fn spurious(&self) -> u64 {
        self.spurious
    }

    pub fn pending(&self, name: &ContentName) -> &[PendingClient] {
        self.pending.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn membership(&self) -> &IgmpMembership {
        &self.igmp
    }

    /// Makes the channel name of a group address known to this cNAP.
    pub fn register_channel(&mut self, group: u32, name: ContentName) {
        self.channel_names.insert(group, name);
        self.name_groups.insert(name, group);
    }

    pub fn handle_http(&mut self, client: HostId, req: u64, request: &HttpRequest) -> CnapAction {
        let fp = match RequestFingerprint::parse(request) {
            Ok(fp) => fp,
            Err(e) => {
                return CnapAction::ErrorResponse {
                    client,
                    req,
                    reason: e.to_string(),
                }
            }
        };
        let name = fp.name();
        let entry = self.pending.entry(name).or_default();
        let first = entry.is_empty();
        // A retry from the same client replaces its older record.
        entry.retain(|p| p.client != client);
        entry.push(PendingClient { client, req });
        if first {
            CnapAction::Subscribe(name)
        } else {
            CnapAction::MergedLocally(name)
        }
    }

    /// Accepts fragment `seq` of `total` of message `msg` named `name`.
    pub fn on_fragment(&mut self, name: &ContentName, msg: u64, total: u32) -> Demux {
        if !self.pending.contains_key(name) {
            self.spurious += 1;
            return Demux::Spurious;
        }
        let got = self.reassembly.entry(msg).or_insert(0);
        *got += 1;
        if *got < total {
            return Demux::Partial;
        }
        self.reassembly.remove(&msg);
        let clients = self.pending.remove(name).unwrap_or_default();
        Demux::Complete {
            msg,
            clients,
            unsubscribe: *name,
        }
    }

    /// Demultiplexes a stream packet to the members of its channel.
    pub fn on_stream_packet(&mut self, name: &ContentName) -> Demux {
        let members: Vec<HostId> = match self.name_groups.get(name) {
            Some(g) => self.igmp.members(*g).collect(),
            None => Vec::new(),
        };
        if members.is_empty() {
            self.spurious += 1;
            Demux::Spurious
        } else {
            Demux::Stream(members)
        }
    }

    pub fn handle_igmp(&mut self, client: HostId, join: bool, group: u32) -> Result<Option<CnapAction>, NapError> {
        let name = *self.channel_names.get(&group).ok_or(NapError::BadGroup(group))?;
        if join {
            let set = self.igmp.groups.entry(group).or_default();
            let first = set.is_empty();
            set.insert(client);
            Ok(first.then_some(CnapAction::Subscribe(name)))
        } else {
            let Some(set) = self.igmp.groups.get_mut(&group) else {
                return Ok(Some(CnapAction::Warning(format!("leave without join for {group}"))));
            };
            if !set.remove(&client) {
                return Ok(Some(CnapAction::Warning(format!("leave without join for {group}"))));
            }
            if set.is_empty() {
                self.igmp.groups.remove(&group);
                Ok(Some(CnapAction::Unsubscribe(name)))
            } else {
                Ok(None)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupState {
    Open,
    Serving,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoalesceGroup {
    pub id: u64,
    pub fingerprint: RequestFingerprint,
    pub name: ContentName,
    pub window_open_at: VirtualTime,
    pub members: Vec<NodeId>,
    pub state: GroupState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    /// New group; close it at `close_at` (equal to now when W is zero).
    Opened { group: u64, close_at: VirtualTime },
    Joined { group: u64 },
    /// This cNAP is already a member of the open group.
    AlreadyMember { group: u64 },
}

/// Entry-point routing state: FIDs written only from PCE notifications.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FidTable {
    entries: BTreeMap<ContentName, Fid>,
    epoch: u64,
}

impl FidTable {
    pub fn get(&self, name: &ContentName) -> Option<&Fid> {
        self.entries.get(name)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies a PCE FID update; a zero FID removes the entry.
    pub fn apply_update(&mut self, name: ContentName, fid: Fid, epoch: u64) {
        if fid.is_zero() {
            self.entries.remove(&name);
        } else {
            self.entries.insert(name, fid);
        }
        self.epoch = self.epoch.max(epoch);
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (n, f) in &self.entries {
            h.update(n.scope.to_be_bytes());
            h.update(n.item.to_be_bytes());
            h.update(f.to_hex().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct Snap {
    pub node: NodeId,
    pub window: VirtualTime,
    groups: BTreeMap<u64, CoalesceGroup>,
    open: BTreeMap<ContentName, u64>,
    next_group: u64,
    pub fid_table: FidTable,
    server_up: bool,
    agent_enabled: bool,
    windows_opened: BTreeMap<ContentName, u64>,
    upstream_requests: BTreeMap<ContentName, u64>,
}

impl Snap {
    pub fn new(node: NodeId, window: VirtualTime, agent_enabled: bool) -> Self {
        Snap {
            node,
            window,
            groups: BTreeMap::new(),
            open: BTreeMap::new(),
            next_group: 0,
            fid_table: FidTable::default(),
            server_up: true,
            agent_enabled,
            windows_opened: BTreeMap::new(),
            upstream_requests: BTreeMap::new(),
        }
    }

    /// Whether the sNAP should currently advertise its server's content.
    pub fn should_publish(&self) -> bool {
        self.server_up && self.agent_enabled
    }

    pub fn set_server_up(&mut self, up: bool) {
        self.server_up = up;
    }

    pub fn set_agent_enabled(&mut self, on: bool) {
        self.agent_enabled = on;
    }

    pub fn group(&self, id: u64) -> Option<&CoalesceGroup> {
        self.groups.get(&id)
    }

    pub fn windows_opened(&self, name: &ContentName) -> u64 {
        self.windows_opened.get(name).copied().unwrap_or(0)
    }

    pub fn upstream_requests(&self, name: &ContentName) -> u64 {
        self.upstream_requests.get(name).copied().unwrap_or(0)
    }

    pub fn on_match(&mut self, now: VirtualTime, fp: &RequestFingerprint, subscriber: NodeId) -> MatchOutcome {
        let name = fp.name();
        if let Some(&id) = self.open.get(&name) {
            let g = self.groups.get_mut(&id).expect("open group exists");
            if g.members.contains(&subscriber) {
                return MatchOutcome::AlreadyMember { group: id };
            }
            g.members.push(subscriber);
            return MatchOutcome::Joined { group: id };
        }
        let id = self.next_group;
        self.next_group += 1;
        self.groups.insert(
            id,
            CoalesceGroup {
                id,
                fingerprint: fp.clone(),
                name,
                window_open_at: now,
                members: vec![subscriber],
                state: GroupState::Open,
            },
        );
        self.open.insert(name, id);
        *self.windows_opened.entry(name).or_insert(0) += 1;
        MatchOutcome::Opened {
            group: id,
            close_at: now + self.window,
        }
    }

    /// Closes the window of `group`: one request goes upstream.
    pub fn close(&mut self, group: u64) -> Option<&CoalesceGroup> {
        let g = self.groups.get_mut(&group)?;
        if g.state != GroupState::Open {
            return None;
        }
        g.state = GroupState::Serving;
        self.open.remove(&g.name);
        *self.upstream_requests.entry(g.name).or_insert(0) += 1;
        Some(g)
    }

    /// Takes a serving group out for its response; it is then closed for good.
    pub fn take_for_response(&mut self, group: u64) -> Option<CoalesceGroup> {
        let mut g = self.groups.remove(&group)?;
        if g.state != GroupState::Serving {
            self.groups.insert(group, g);
            return None;
        }
        g.state = GroupState::Closed;
        Some(g)
    }

    /// Groups still waiting for their server (dropped when the server dies).
    pub fn abandon_serving(&mut self) -> Vec<CoalesceGroup> {
        let ids: Vec<u64> = self
            .groups
            .values()
            .filter(|g| g.state == GroupState::Serving)
            .map(|g| g.id)
            .collect();
        ids.into_iter().filter_map(|id| self.groups.remove(&id)).collect()
    }

    pub fn routing_digest(&self) -> String {
        self.fid_table.digest()
    }
}
