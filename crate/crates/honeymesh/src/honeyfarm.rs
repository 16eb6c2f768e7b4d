//! Honey-VM farm: server-mimicking decoys on one simulated physical host,
//! deliberate trap vulnerabilities, attacker engagement, compromise
//! handling, and standby-pool failover.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::packet::{Address, FragInfo, Packet, PacketKind, Protocol};
use crate::sim::topology::NodeId;
use crate::traffic::{crash_signature, AttackType};

/// Every fourth engaged packet from a source also gets a decoy challenge,
/// keeping the attacker busy answering queries.
const DECOY_CHALLENGE_EVERY: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceKind {
    Web,
    File,
    Mail,
    Dns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interaction {
    Low,
    High,
}

#[derive(Debug, Clone)]
pub struct HoneyVmProfile {
    pub mimics: ServiceKind,
    pub interaction: Interaction,
    pub exposed_vulns: BTreeSet<AttackType>,
    pub engage_reply_latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VmId(pub u32);

impl std::fmt::Display for VmId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Standby,
    Active,
    Engaged { source: Address },
    Compromised { at: u64 },
    Restoring { until: u64 },
}

fn legal_transition(from: Lifecycle, to: Lifecycle) -> bool {
    use Lifecycle::*;
    matches!(
        (from, to),
        (Standby, Active)
            | (Active, Engaged { .. })
            | (Engaged { .. }, Engaged { .. })
            | (Engaged { .. }, Active)
            | (Active, Compromised { .. })
            | (Engaged { .. }, Compromised { .. })
            | (Compromised { .. }, Restoring { .. })
            | (Restoring { .. }, Standby)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogAction {
    Engaged,
    Trapped,
}

/// Append-only record of everything a honey VM saw.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub at: u64,
    pub pkt_id: u64,
    pub source: Address,
    pub kind: PacketKind,
    pub action: LogAction,
}

#[derive(Debug)]
pub struct HoneyVmState {
    pub id: VmId,
    pub profile_idx: usize,
    pub addr: Address,
    pub lifecycle: Lifecycle,
    pub attack_log: Vec<LogEntry>,
    trap_frags: BTreeMap<Address, Vec<FragInfo>>,
    engaged_counts: BTreeMap<Address, u64>,
}

impl HoneyVmState {
    fn transition(&mut self, to: Lifecycle) {
        assert!(
            legal_transition(self.lifecycle, to),
            "illegal lifecycle transition {:?} -> {:?} on {}",
            self.lifecycle,
            to,
            self.id
        );
        self.lifecycle = to;
    }

    pub fn is_operational(&self) -> bool {
        matches!(self.lifecycle, Lifecycle::Active | Lifecycle::Engaged { .. })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FarmError {
    #[error("honey vm {vm} is not operational")]
    NotOperational { vm: VmId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapResult {
    Triggered(AttackType),
    NotTriggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailoverOutcome {
    Activated(VmId),
    PoolExhausted,
}

/// What the farm asks the event loop to do after a delivery.
#[derive(Debug, Clone, PartialEq)]
pub enum FarmEffect {
    /// Send a mimic reply or decoy challenge at the given time.
    Emit { at: u64, pkt: Packet },
    /// First packet from this source reached the farm.
    EngagementStarted { source: Address },
    /// A trap fired: the VM is compromised; control must fail over and block.
    Trapped { vm: VmId, source: Address, cause: AttackType },
}

#[derive(Debug)]
struct ProfileRuntime {
    profile: HoneyVmProfile,
    /// Production address this profile mimics.
    service_addr: Address,
    vms: Vec<VmId>,
}

/// The honey farm: all VMs share one simulated physical host and its uplink.
#[derive(Debug)]
pub struct Farm {
    pub host: NodeId,
    profiles: Vec<ProfileRuntime>,
    vms: BTreeMap<VmId, HoneyVmState>,
    by_service: BTreeMap<Address, usize>,
    pub restore_delay_ms: u64,
    pub pool_exhaustions: u64,
    pub sink_drops: u64,
    pub delivered: u64,
    pub archived_entries: u64,
    engaged_seen: BTreeSet<Address>,
}

impl Farm {
    pub fn new(host: NodeId, restore_delay_ms: u64) -> Self {
        Farm {
            host,
            profiles: Vec::new(),
            vms: BTreeMap::new(),
            by_service: BTreeMap::new(),
            restore_delay_ms,
            pool_exhaustions: 0,
            sink_drops: 0,
            delivered: 0,
            archived_entries: 0,
            engaged_seen: BTreeSet::new(),
        }
    }

    /// Adds a profile with one active VM plus `standby` spares.
    pub fn add_profile(
        &mut self,
        profile: HoneyVmProfile,
        service_addr: Address,
        standby: usize,
        mut next_vm: impl FnMut() -> (VmId, Address),
    ) {
        let idx = self.profiles.len();
        let mut vms = Vec::new();
        for k in 0..standby + 1 {
            let (id, addr) = next_vm();
            let lifecycle = if k == 0 { Lifecycle::Active } else { Lifecycle::Standby };
            self.vms.insert(
                id,
                HoneyVmState {
                    id,
                    profile_idx: idx,
                    addr,
                    lifecycle,
                    attack_log: Vec::new(),
                    trap_frags: BTreeMap::new(),
                    engaged_counts: BTreeMap::new(),
                },
            );
            vms.push(id);
        }
        self.by_service.insert(service_addr, idx);
        self.profiles.push(ProfileRuntime { profile, service_addr, vms });
    }

    pub fn vm(&self, id: VmId) -> &HoneyVmState {
        &self.vms[&id]
    }

    pub fn vm_addresses(&self) -> Vec<(VmId, Address)> {
        self.vms.values().map(|v| (v.id, v.addr)).collect()
    }

    pub fn vms(&self) -> impl Iterator<Item = &HoneyVmState> {
        self.vms.values()
    }

    pub fn service_addresses(&self) -> Vec<Address> {
        self.profiles.iter().map(|p| p.service_addr).collect()
    }

    pub fn profile_of_service(&self, service: Address) -> Option<usize> {
        self.by_service.get(&service).copied()
    }

    fn active_vm_of(&self, profile_idx: usize) -> Option<VmId> {
        self.profiles[profile_idx]
            .vms
            .iter()
            .copied()
            .find(|id| self.vms[id].is_operational())
    }

    pub fn active_vm_for_service(&self, service: Address) -> Option<VmId> {
        self.profile_of_service(service).and_then(|idx| self.active_vm_of(idx))
    }

    /// True when a VM address belongs to this farm (challenge responses to
    /// farm-issued challenges are addressed to the VM).
    pub fn owns_vm_address(&self, addr: Address) -> bool {
        self.vms.values().any(|v| v.addr == addr)
    }

    /// Delivers a redirected packet to the farm: the active VM of the
    /// mimicked service checks its traps, then engages. Mimic replies spoof
    /// the production address so the attacker sees nothing unusual; replies
    /// that would flow toward a production address are suppressed, so the
    /// farm never forwards traffic into the protected network.
    pub fn deliver(
        &mut self,
        pkt: &Packet,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Vec<FarmEffect> {
        self.delivered += 1;
        let Some(profile_idx) = self.by_service.get(&pkt.dst).copied() else {
            self.sink_drops += 1;
            return Vec::new();
        };
        let Some(vm_id) = self.active_vm_of(profile_idx) else {
            self.sink_drops += 1;
            return Vec::new();
        };
        let mut effects = Vec::new();
        if self.engaged_seen.insert(pkt.src_claimed) {
            effects.push(FarmEffect::EngagementStarted { source: pkt.src_claimed });
        }

        match self.trap_trigger(vm_id, pkt, now) {
            TrapResult::Triggered(cause) => {
                // apparent success: the attacker gets the reply it wanted
                if let Some(reply) = self.mimic_reply(vm_id, pkt, now, next_pkt_id) {
                    effects.push(reply);
                }
                effects.push(FarmEffect::Trapped { vm: vm_id, source: pkt.src_claimed, cause });
            }
            TrapResult::NotTriggered => {
                effects.extend(self.engage(vm_id, pkt, now, next_pkt_id).expect("vm operational"));
            }
        }
        effects
    }

    /// Keeps the attacker talking: log, mimic the profile's service after
    /// the configured latency, and interleave decoy challenge queries.
    pub fn engage(
        &mut self,
        vm_id: VmId,
        pkt: &Packet,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Result<Vec<FarmEffect>, FarmError> {
        if !self.vms[&vm_id].is_operational() {
            return Err(FarmError::NotOperational { vm: vm_id });
        }
        let mut effects = Vec::new();
        let reply = self.mimic_reply(vm_id, pkt, now, next_pkt_id);
        let vm = self.vms.get_mut(&vm_id).expect("vm");
        vm.attack_log.push(LogEntry {
            at: now,
            pkt_id: pkt.id,
            source: pkt.src_claimed,
            kind: pkt.kind,
            action: LogAction::Engaged,
        });
        let count = vm.engaged_counts.entry(pkt.src_claimed).or_insert(0);
        *count += 1;
        let send_decoy = (*count).is_multiple_of(DECOY_CHALLENGE_EVERY);
        vm.transition(Lifecycle::Engaged { source: pkt.src_claimed });
        effects.extend(reply);
        if send_decoy {
            let at = now + self.profiles[self.vms[&vm_id].profile_idx].profile.engage_reply_latency_ms;
            let decoy = Packet::new(
                next_pkt_id(),
                Protocol::Udp,
                PacketKind::Challenge,
                pkt.dst,
                self.vms[&vm_id].addr,
                pkt.src_claimed,
                64,
                at,
            );
            if !self.by_service.contains_key(&decoy.dst) {
                effects.push(FarmEffect::Emit { at, pkt: decoy });
            }
        }
        Ok(effects)
    }

    fn mimic_reply(
        &mut self,
        vm_id: VmId,
        pkt: &Packet,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Option<FarmEffect> {
        let vm = &self.vms[&vm_id];
        let profile = &self.profiles[vm.profile_idx].profile;
        let answered = match profile.interaction {
            Interaction::High => matches!(
                pkt.kind,
                PacketKind::Syn | PacketKind::Data | PacketKind::EchoRequest
            ),
            // low interaction only mimics the frequently probed basics
            Interaction::Low => matches!(pkt.kind, PacketKind::Syn | PacketKind::EchoRequest),
        };
        if !answered {
            return None;
        }
        let (proto, kind, size) = match (pkt.protocol, pkt.kind) {
            (Protocol::Tcp, PacketKind::Syn) => (Protocol::Tcp, PacketKind::SynAck, 40),
            (Protocol::Tcp, PacketKind::Data) => (Protocol::Tcp, PacketKind::Data, pkt.size_bytes),
            (Protocol::Udp, PacketKind::Data) => (Protocol::Icmp, PacketKind::DestUnreachable, 56),
            (Protocol::Icmp, PacketKind::EchoRequest) => {
                (Protocol::Icmp, PacketKind::EchoReply, pkt.size_bytes.min(65_535))
            }
            _ => return None,
        };
        // replies claim the mimicked production address
        let at = now + profile.engage_reply_latency_ms;
        let mut reply =
            Packet::new(next_pkt_id(), proto, kind, pkt.dst, self.vms[&vm_id].addr, pkt.src_claimed, size, at);
        if let Some(corr) = pkt.corr {
            reply = reply.with_corr(corr);
        }
        // containment: never emit toward a production service address
        if self.by_service.contains_key(&reply.dst) {
            return None;
        }
        Some(FarmEffect::Emit { at, pkt: reply })
    }

    /// Deliberate-flaw check: does this packet structurally match one of
    /// the VM's exposed vulnerabilities? Triggering compromises the VM.
    pub fn trap_trigger(&mut self, vm_id: VmId, pkt: &Packet, now: u64) -> TrapResult {
        let vm = self.vms.get_mut(&vm_id).expect("vm");
        assert!(vm.is_operational(), "trap check on a non-operational vm");
        let exposed = &self.profiles[vm.profile_idx].profile.exposed_vulns;
        let prior = vm.trap_frags.get(&pkt.src_claimed).map(|v| v.as_slice()).unwrap_or(&[]);
        let hit = crash_signature(pkt, prior, 65_535).filter(|c| exposed.contains(c));
        if let Some(frag) = &pkt.frag {
            let buf = vm.trap_frags.entry(pkt.src_claimed).or_default();
            buf.push(*frag);
            if buf.len() > 32 {
                buf.remove(0);
            }
        }
        match hit {
            Some(cause) => {
                vm.attack_log.push(LogEntry {
                    at: now,
                    pkt_id: pkt.id,
                    source: pkt.src_claimed,
                    kind: pkt.kind,
                    action: LogAction::Trapped,
                });
                vm.transition(Lifecycle::Compromised { at: now });
                TrapResult::Triggered(cause)
            }
            None => TrapResult::NotTriggered,
        }
    }

    /// Zero-delay takeover: a standby VM of the same profile becomes active
    /// at the same simulated instant; the failed VM begins restoring.
    /// Returns the activation outcome and the restore completion time.
    pub fn failover(&mut self, failed: VmId, now: u64) -> (FailoverOutcome, u64) {
        let profile_idx = self.vms[&failed].profile_idx;
        assert!(
            matches!(self.vms[&failed].lifecycle, Lifecycle::Compromised { .. }),
            "failover requires a compromised vm"
        );
        let restore_at = now + self.restore_delay_ms;
        self.vms.get_mut(&failed).expect("vm").transition(Lifecycle::Restoring { until: restore_at });
        let standby = self.profiles[profile_idx]
            .vms
            .iter()
            .copied()
            .find(|id| self.vms[id].lifecycle == Lifecycle::Standby);
        match standby {
            Some(id) => {
                self.vms.get_mut(&id).expect("vm").transition(Lifecycle::Active);
                (FailoverOutcome::Activated(id), restore_at)
            }
            None => {
                self.pool_exhaustions += 1;
                (FailoverOutcome::PoolExhausted, restore_at)
            }
        }
    }

    /// Returns every VM whose restore completed: its log is archived (the
    /// entries are handed back for the run trace) and it rejoins as
    /// standby. A profile left without an operational VM re-activates the
    /// lowest-id standby immediately.
    pub fn restore_tick(&mut self, now: u64) -> Vec<(VmId, Vec<LogEntry>)> {
        let due: Vec<VmId> = self
            .vms
            .values()
            .filter(|v| matches!(v.lifecycle, Lifecycle::Restoring { until } if until <= now))
            .map(|v| v.id)
            .collect();
        let mut archived = Vec::new();
        for id in due {
            let vm = self.vms.get_mut(&id).expect("vm");
            let entries = std::mem::take(&mut vm.attack_log);
            self.archived_entries += entries.len() as u64;
            vm.trap_frags.clear();
            vm.engaged_counts.clear();
            vm.transition(Lifecycle::Standby);
            archived.push((id, entries));
        }
        // restart coverage where a pool had gone empty
        for idx in 0..self.profiles.len() {
            if self.active_vm_of(idx).is_none() {
                let standby = self.profiles[idx]
                    .vms
                    .iter()
                    .copied()
                    .find(|id| self.vms[id].lifecycle == Lifecycle::Standby);
                if let Some(id) = standby {
                    self.vms.get_mut(&id).expect("vm").transition(Lifecycle::Active);
                }
            }
        }
        archived
    }

    /// Control notified us the source is now blocked at the perimeter:
    /// engaged VMs tracking it go back to plain active duty.
    pub fn source_blocked(&mut self, source: Address) {
        let ids: Vec<VmId> = self
            .vms
            .values()
            .filter(|v| v.lifecycle == Lifecycle::Engaged { source })
            .map(|v| v.id)
            .collect();
        for id in ids {
            self.vms.get_mut(&id).expect("vm").transition(Lifecycle::Active);
        }
    }

    /// Log-completeness accounting: every delivered packet is in a live
    /// log, was archived, or hit the sink.
    pub fn logged_total(&self) -> u64 {
        let live: u64 = self.vms.values().map(|v| v.attack_log.len() as u64).sum();
        live + self.archived_entries + self.sink_drops
    }
}
