//! Network topology: nodes, capacity-limited links, routers with mutable
//! redirect state, and firewalls with ingress block lists.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::packet::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    ClientHost,
    AttackAgent,
    Handler,
    Router,
    Firewall,
    ProductionServer,
    HoneyFarmHost,
    HoneyVm,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("no route from {node} toward {dst}")]
    NoRoute { node: NodeId, dst: Address },
    #[error("redirect target {target} is not a honey farm host")]
    InvalidTarget { target: NodeId },
}

/// Per-router forwarding state: default next hops plus source-match redirects.
/// Redirects take precedence and there is at most one per source address.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    pub default_routes: BTreeMap<Address, NodeId>,
    pub redirects: Vec<(Address, NodeId)>,
}

impl RoutingTable {
    pub fn redirect_for(&self, source: Address) -> Option<NodeId> {
        self.redirects.iter().find(|(s, _)| *s == source).map(|(_, t)| *t)
    }

    fn set_redirect(&mut self, source: Address, target: NodeId) {
        if let Some(entry) = self.redirects.iter_mut().find(|(s, _)| *s == source) {
            entry.1 = target;
        } else {
            self.redirects.push((source, target));
        }
    }
}

/// Ingress block list of a firewall. Entries never expire.
#[derive(Debug, Clone, Default)]
pub struct FirewallRuleSet {
    pub blocked_sources: BTreeSet<Address>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Allow,
    Drop,
}

/// One direction of a link: fixed propagation latency plus a FIFO transmit
/// queue draining at the configured packet rate. Packets queued beyond the
/// cap are dropped, which is what makes flooding physically meaningful.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub latency_ms: u64,
    /// Per-packet transmission time in microseconds.
    tx_gap_us: u64,
    queue_cap: usize,
    free_at_us: u64,
    /// Departure timestamps (us) of packets not yet on the wire.
    in_queue: VecDeque<u64>,
    pub dropped: u64,
    pub carried: u64,
}

impl LinkState {
    pub fn new(latency_ms: u64, bandwidth_pkts_per_ms: f64, queue_cap: usize) -> Self {
        assert!(bandwidth_pkts_per_ms > 0.0);
        let tx_gap_us = (1000.0 / bandwidth_pkts_per_ms).round().max(1.0) as u64;
        LinkState {
            latency_ms,
            tx_gap_us,
            queue_cap,
            free_at_us: 0,
            in_queue: VecDeque::new(),
            dropped: 0,
            carried: 0,
        }
    }

    /// Admits a packet at `now` (ms). Returns the arrival time at the far
    /// end, or None when the transmit queue is full and the packet drops.
    pub fn admit(&mut self, now_ms: u64) -> Option<u64> {
        let now_us = now_ms * 1000;
        while let Some(&dep) = self.in_queue.front() {
            if dep <= now_us {
                self.in_queue.pop_front();
            } else {
                break;
            }
        }
        if self.in_queue.len() >= self.queue_cap {
            self.dropped += 1;
            return None;
        }
        let start = self.free_at_us.max(now_us);
        let depart = start + self.tx_gap_us;
        self.free_at_us = depart;
        self.in_queue.push_back(depart);
        self.carried += 1;
        Some(depart.div_ceil(1000) + self.latency_ms)
    }
}

/// The simulated network. Built once per run; routing and firewall state is
/// the only part the defense mutates afterwards.
#[derive(Debug, Default)]
pub struct Topology {
    pub nodes: BTreeMap<NodeId, NodeKind>,
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    neighbors: BTreeMap<NodeId, Vec<NodeId>>,
    pub routing: BTreeMap<NodeId, RoutingTable>,
    pub firewalls: BTreeMap<NodeId, FirewallRuleSet>,
    /// Where each known address terminates.
    pub address_owner: BTreeMap<Address, NodeId>,
    /// next_hop[node][dst_node] along shortest paths, lowest-id tie-break.
    next_hop: BTreeMap<NodeId, BTreeMap<NodeId, NodeId>>,
    /// For routers/firewalls: neighbors on the side facing the outside
    /// world. Packets arriving from one of them count as inbound.
    outer: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub firewall_drops: BTreeMap<NodeId, u64>,
}

impl Topology {
    pub fn kind(&self, node: NodeId) -> NodeKind {
        self.nodes[&node]
    }

    pub fn add_node(&mut self, id: NodeId, kind: NodeKind) {
        self.nodes.insert(id, kind);
        self.neighbors.entry(id).or_default();
        match kind {
            NodeKind::Router => {
                self.routing.insert(id, RoutingTable::default());
            }
            NodeKind::Firewall => {
                self.firewalls.insert(id, FirewallRuleSet::default());
                self.firewall_drops.insert(id, 0);
            }
            _ => {}
        }
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, latency_ms: u64, bandwidth: f64, cap: usize) {
        assert_ne!(a, b, "no self-links");
        self.links.insert((a, b), LinkState::new(latency_ms, bandwidth, cap));
        self.links.insert((b, a), LinkState::new(latency_ms, bandwidth, cap));
        self.neighbors.get_mut(&a).expect("node a").push(b);
        self.neighbors.get_mut(&b).expect("node b").push(a);
    }

    pub fn assign_address(&mut self, addr: Address, owner: NodeId) {
        self.address_owner.insert(addr, owner);
    }

    pub fn link_mut(&mut self, from: NodeId, to: NodeId) -> &mut LinkState {
        self.links.get_mut(&(from, to)).expect("link exists")
    }

    pub fn links(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &LinkState)> {
        self.links.iter()
    }

    /// Recomputes all-pairs next hops by BFS from every node. Neighbor lists
    /// are walked in insertion order and first-found wins, so results are
    /// deterministic.
    pub fn rebuild_routes(&mut self) {
        self.next_hop.clear();
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for &src in &ids {
            let mut table = BTreeMap::new();
            let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
            let mut q = VecDeque::new();
            q.push_back(src);
            prev.insert(src, src);
            while let Some(u) = q.pop_front() {
                for &v in &self.neighbors[&u] {
                    if !prev.contains_key(&v) {
                        prev.insert(v, u);
                        q.push_back(v);
                    }
                }
            }
            for &dst in &ids {
                if dst == src || !prev.contains_key(&dst) {
                    continue;
                }
                let mut hop = dst;
                while prev[&hop] != src {
                    hop = prev[&hop];
                }
                table.insert(dst, hop);
            }
            self.next_hop.insert(src, table);
        }
        // default routes for routers: one entry per known address
        let owners: Vec<(Address, NodeId)> =
            self.address_owner.iter().map(|(a, n)| (*a, *n)).collect();
        let router_ids: Vec<NodeId> = self.routing.keys().copied().collect();
        for r in router_ids {
            let mut defaults = BTreeMap::new();
            for &(addr, owner) in &owners {
                if owner == r {
                    continue;
                }
                if let Some(hop) = self.next_hop[&r].get(&owner) {
                    defaults.insert(addr, *hop);
                }
            }
            self.routing.get_mut(&r).expect("router").default_routes = defaults;
        }
    }

    pub fn mark_outer(&mut self, node: NodeId, via: NodeId) {
        self.outer.entry(node).or_default().insert(via);
    }

    /// Did this packet arrive from the node's outer (external-facing) side?
    pub fn is_inbound(&self, node: NodeId, via: Option<NodeId>) -> bool {
        match via {
            Some(v) => self.outer.get(&node).map(|s| s.contains(&v)).unwrap_or(false),
            None => false,
        }
    }

    /// Next hop from `node` toward the owner of `dst`.
    pub fn hop_toward(&self, node: NodeId, dst: Address) -> Result<NodeId, TopologyError> {
        let owner = self
            .address_owner
            .get(&dst)
            .ok_or(TopologyError::NoRoute { node, dst })?;
        if *owner == node {
            return Ok(node);
        }
        self.next_hop
            .get(&node)
            .and_then(|t| t.get(owner))
            .copied()
            .ok_or(TopologyError::NoRoute { node, dst })
    }

    /// Router forwarding decision for a packet `(src_claimed, dst)` that
    /// arrived on the `inbound` side flag. Redirects match the claimed
    /// source, take precedence over default routes, and apply only to
    /// traffic entering from the external side.
    pub fn route(
        &self,
        router: NodeId,
        src_claimed: Address,
        dst: Address,
        inbound: bool,
    ) -> Result<NodeId, TopologyError> {
        assert_eq!(self.kind(router), NodeKind::Router, "route() on a non-router");
        let table = &self.routing[&router];
        if inbound {
            if let Some(farm) = table.redirect_for(src_claimed) {
                return self
                    .next_hop
                    .get(&router)
                    .and_then(|t| t.get(&farm))
                    .copied()
                    .ok_or(TopologyError::NoRoute { node: router, dst });
            }
        }
        table
            .default_routes
            .get(&dst)
            .copied()
            .ok_or(TopologyError::NoRoute { node: router, dst })
    }

    /// Ingress filter at a firewall: drop iff the claimed source is blocked.
    pub fn firewall_filter(&mut self, fw: NodeId, src_claimed: Address) -> FilterDecision {
        assert_eq!(self.kind(fw), NodeKind::Firewall, "filter on a non-firewall");
        if self.firewalls[&fw].blocked_sources.contains(&src_claimed) {
            *self.firewall_drops.get_mut(&fw).expect("fw") += 1;
            FilterDecision::Drop
        } else {
            FilterDecision::Allow
        }
    }

    /// Installs (or replaces) a source redirect on one router.
    pub fn install_redirect(
        &mut self,
        router: NodeId,
        source: Address,
        farm: NodeId,
    ) -> Result<(), TopologyError> {
        if self.kind(farm) != NodeKind::HoneyFarmHost {
            return Err(TopologyError::InvalidTarget { target: farm });
        }
        assert_eq!(self.kind(router), NodeKind::Router);
        self.routing.get_mut(&router).expect("router").set_redirect(source, farm);
        Ok(())
    }

    /// Adds a source to a firewall's permanent block list. Idempotent.
    pub fn block_source(&mut self, fw: NodeId, source: Address) {
        assert_eq!(self.kind(fw), NodeKind::Firewall);
        self.firewalls.get_mut(&fw).expect("fw").blocked_sources.insert(source);
    }

    pub fn routers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.routing.keys().copied()
    }

    pub fn total_firewall_drops(&self) -> u64 {
        self.firewall_drops.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // fw(0) -- router(1) -- server(2), farm(3) off the router
    fn tiny() -> Topology {
        let mut t = Topology::default();
        t.add_node(NodeId(0), NodeKind::Firewall);
        t.add_node(NodeId(1), NodeKind::Router);
        t.add_node(NodeId(2), NodeKind::ProductionServer);
        t.add_node(NodeId(3), NodeKind::HoneyFarmHost);
        t.add_node(NodeId(4), NodeKind::ClientHost);
        t.add_link(NodeId(4), NodeId(0), 1, 10.0, 100);
        t.add_link(NodeId(0), NodeId(1), 1, 10.0, 100);
        t.add_link(NodeId(1), NodeId(2), 1, 10.0, 100);
        t.add_link(NodeId(1), NodeId(3), 1, 10.0, 100);
        t.assign_address(Address(10), NodeId(2));
        t.assign_address(Address(20), NodeId(4));
        t.rebuild_routes();
        t.mark_outer(NodeId(1), NodeId(0));
        t
    }

    #[test]
    fn default_route_reaches_server() {
        let t = tiny();
        assert_eq!(t.route(NodeId(1), Address(20), Address(10), true), Ok(NodeId(2)));
    }

    #[test]
    fn redirect_wins_over_default_route() {
        let mut t = tiny();
        t.install_redirect(NodeId(1), Address(20), NodeId(3)).unwrap();
        assert_eq!(t.route(NodeId(1), Address(20), Address(10), true), Ok(NodeId(3)));
        // other sources keep the default path
        assert_eq!(t.route(NodeId(1), Address(99), Address(10), true), Ok(NodeId(2)));
        // non-inbound traffic is not redirected
        assert_eq!(t.route(NodeId(1), Address(20), Address(10), false), Ok(NodeId(2)));
    }

    #[test]
    fn unknown_destination_is_no_route() {
        let t = tiny();
        assert_eq!(
            t.route(NodeId(1), Address(20), Address(77), true),
            Err(TopologyError::NoRoute { node: NodeId(1), dst: Address(77) })
        );
    }

    #[test]
    fn reinstall_replaces_redirect() {
        let mut t = tiny();
        t.install_redirect(NodeId(1), Address(20), NodeId(3)).unwrap();
        t.install_redirect(NodeId(1), Address(20), NodeId(3)).unwrap();
        assert_eq!(t.routing[&NodeId(1)].redirects.len(), 1);
    }

    #[test]
    fn redirect_to_non_farm_is_rejected() {
        let mut t = tiny();
        assert_eq!(
            t.install_redirect(NodeId(1), Address(20), NodeId(2)),
            Err(TopologyError::InvalidTarget { target: NodeId(2) })
        );
    }

    #[test]
    fn firewall_blocks_exactly_listed_sources() {
        let mut t = tiny();
        assert_eq!(t.firewall_filter(NodeId(0), Address(20)), FilterDecision::Allow);
        t.block_source(NodeId(0), Address(20));
        t.block_source(NodeId(0), Address(20));
        assert_eq!(t.firewalls[&NodeId(0)].blocked_sources.len(), 1);
        assert_eq!(t.firewall_filter(NodeId(0), Address(20)), FilterDecision::Drop);
        assert_eq!(t.firewall_filter(NodeId(0), Address(21)), FilterDecision::Allow);
        assert_eq!(t.firewall_drops[&NodeId(0)], 1);
    }

    #[test]
    fn link_queue_drains_at_rate_and_overflows_at_cap() {
        let mut l = LinkState::new(2, 1.0, 3); // 1 pkt/ms, cap 3
        assert_eq!(l.admit(0), Some(3)); // departs at 1ms + 2ms latency
        assert_eq!(l.admit(0), Some(4));
        assert_eq!(l.admit(0), Some(5));
        assert_eq!(l.admit(0), None); // queue full
        assert_eq!(l.dropped, 1);
        // after the queue drains, capacity is available again
        assert_eq!(l.admit(10), Some(13));
    }

    #[test]
    fn fractional_bandwidth_spaces_departures() {
        let mut l = LinkState::new(0, 0.1, 100); // 10ms per packet
        assert_eq!(l.admit(0), Some(10));
        assert_eq!(l.admit(0), Some(20));
        assert_eq!(l.admit(25), Some(35));
    }
}
