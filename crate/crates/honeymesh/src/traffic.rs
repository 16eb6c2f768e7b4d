//! Traffic generation: legitimate request workloads, the eight attack
//! shapes, and the ground-truth oracle used by metrics only.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::packet::{Address, FragInfo, Packet, PacketKind, Protocol};
use crate::sim::topology::NodeId;

pub const SYN_SIZE: u32 = 40;
pub const PING_SIZE: u32 = 64;
pub const UDP_FLOOD_SIZE: u32 = 512;
pub const TEARDROP_FRAG_SIZE: u32 = 64;
pub const OVERSIZE_PING: u32 = 70_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackType {
    Smurf,
    SynFlood,
    UdpFlood,
    Teardrop,
    PingOfDeath,
    Land,
    PingFlood,
    Nuke,
}

pub const ALL_ATTACKS: [AttackType; 8] = [
    AttackType::Smurf,
    AttackType::SynFlood,
    AttackType::UdpFlood,
    AttackType::Teardrop,
    AttackType::PingOfDeath,
    AttackType::Land,
    AttackType::PingFlood,
    AttackType::Nuke,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackClass {
    Flood,
    Crash,
}

impl AttackType {
    /// Impact class: floods degrade service, crash attacks exploit
    /// vulnerabilities to halt the server. Used for metrics grouping.
    pub fn class(self) -> AttackClass {
        match self {
            AttackType::Smurf | AttackType::SynFlood | AttackType::UdpFlood | AttackType::PingFlood => {
                AttackClass::Flood
            }
            AttackType::Teardrop | AttackType::PingOfDeath | AttackType::Land | AttackType::Nuke => {
                AttackClass::Crash
            }
        }
    }

    /// Attacks that forge their claimed source from a spoof pool.
    pub fn requires_spoof_pool(self) -> bool {
        matches!(
            self,
            AttackType::Smurf | AttackType::SynFlood | AttackType::UdpFlood | AttackType::Nuke
        )
    }
}

impl std::fmt::Display for AttackType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{attack} requires a non-empty spoof pool")]
    InvalidScenario { attack: AttackType },
    #[error("attack window must satisfy start < end")]
    BadWindow,
    #[error("scenario needs at least one agent")]
    NoAgents,
    #[error("rates must be positive")]
    BadRate,
}

/// One attack campaign: who fires, what they forge, at whom, how fast.
/// `rate_pkts_per_ms` is the aggregate rate across all agents.
#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub attack: AttackType,
    pub agents: Vec<(NodeId, Address)>,
    pub spoof_pool: Vec<Address>,
    pub target: Address,
    pub rate_pkts_per_ms: f64,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Probability a (non-spoofing) agent answers a level-1 challenge
    /// correctly. Level-2 challenges are never answered by bots.
    pub p_bot_l1: f64,
}

impl AttackScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        if self.start_ms >= self.end_ms {
            return Err(ScenarioError::BadWindow);
        }
        if self.rate_pkts_per_ms <= 0.0 {
            return Err(ScenarioError::BadRate);
        }
        if self.attack.requires_spoof_pool() && self.spoof_pool.is_empty() {
            return Err(ScenarioError::InvalidScenario { attack: self.attack });
        }
        Ok(())
    }

    /// Every address this scenario's packets may claim as source.
    pub fn claimed_sources(&self) -> Vec<Address> {
        let mut v: Vec<Address> = match self.attack {
            AttackType::Land => vec![self.target],
            a if a.requires_spoof_pool() => self.spoof_pool.clone(),
            _ => self.agents.iter().map(|(_, a)| *a).collect(),
        };
        v.sort();
        v.dedup();
        v
    }
}

/// Request size model for legitimate clients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SizeDist {
    pub mean: f64,
    pub stddev: f64,
}

impl SizeDist {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let n = Normal::new(self.mean, self.stddev).expect("valid size distribution");
        n.sample(rng).round().max(1.0) as u32
    }
}

/// Legitimate workload: Poisson request arrivals per client.
#[derive(Debug, Clone)]
pub struct LegitProfile {
    pub clients: Vec<(NodeId, Address)>,
    pub request_rate_per_client: f64,
    pub request_size_bytes: SizeDist,
    pub target: Address,
    pub answer_challenges: f64,
}

impl LegitProfile {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.request_rate_per_client <= 0.0 || self.request_size_bytes.mean <= 0.0 {
            return Err(ScenarioError::BadRate);
        }
        if !(0.0..=1.0).contains(&self.answer_challenges) {
            return Err(ScenarioError::BadRate);
        }
        Ok(())
    }
}

/// Monotone packet-id source; one per run so ids are globally unique.
#[derive(Debug, Default)]
pub struct IdGen(u64);

impl IdGen {
    pub fn next_id(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, start: u64, end: u64) -> Vec<u64> {
    let exp = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = start as f64;
    loop {
        t += exp.sample(rng);
        if t >= end as f64 {
            break;
        }
        let ms = (t.round() as u64).clamp(start, end.saturating_sub(1));
        out.push(ms);
    }
    out
}

/// Legit request initiations (TCP `Syn`, honest source) for every client of
/// the profile, merged into one time-ordered stream. The data phase of each
/// request is driven by client state during the run.
pub fn gen_legit(
    profile: &LegitProfile,
    rng: &mut ChaCha8Rng,
    duration_ms: u64,
    ids: &mut IdGen,
    corr: &mut IdGen,
) -> Vec<(u64, Packet)> {
    let mut raw: Vec<(u64, usize)> = Vec::new();
    for (ci, _) in profile.clients.iter().enumerate() {
        for t in poisson_times(rng, profile.request_rate_per_client, 0, duration_ms) {
            raw.push((t, ci));
        }
    }
    raw.sort_by_key(|&(t, ci)| (t, ci));
    raw.into_iter()
        .map(|(t, ci)| {
            let (_, addr) = profile.clients[ci];
            let pkt = Packet::new(
                ids.next_id(),
                Protocol::Tcp,
                PacketKind::Syn,
                addr,
                addr,
                profile.target,
                SYN_SIZE,
                t,
            )
            .with_corr(corr.next_id());
            (t, pkt)
        })
        .collect()
}

/// What a detector at the target service observes per legit request during
/// training: the handshake packet plus the data packet a beat later. Used
/// to build the warmup sample the baseline is trained on.
pub fn gen_warmup_observations(
    profile: &LegitProfile,
    rng: &mut ChaCha8Rng,
    warmup_n: usize,
    ids: &mut IdGen,
) -> Vec<Packet> {
    // generate enough requests to cover warmup_n observation packets
    let horizon = ((warmup_n as f64)
        / (2.0 * profile.request_rate_per_client * profile.clients.len() as f64)
        * 1.5) as u64
        + 10_000;
    let mut raw: Vec<(u64, usize)> = Vec::new();
    for (ci, _) in profile.clients.iter().enumerate() {
        for t in poisson_times(rng, profile.request_rate_per_client, 0, horizon) {
            raw.push((t, ci));
        }
    }
    raw.sort_by_key(|&(t, ci)| (t, ci));
    let mut obs = Vec::new();
    for (t, ci) in raw {
        let (_, addr) = profile.clients[ci];
        let syn = Packet::new(
            ids.next_id(),
            Protocol::Tcp,
            PacketKind::Syn,
            addr,
            addr,
            profile.target,
            SYN_SIZE,
            t,
        );
        let size = profile.request_size_bytes.sample(rng);
        let data = Packet::new(
            ids.next_id(),
            Protocol::Tcp,
            PacketKind::Data,
            addr,
            addr,
            profile.target,
            size,
            t + 2,
        );
        obs.push(syn);
        obs.push(data);
        if obs.len() >= warmup_n {
            break;
        }
    }
    obs.sort_by_key(|p| (p.sent_at, p.id));
    obs.truncate(warmup_n);
    obs
}

/// Attack packet stream shaped per the attack type. Emission is at fixed
/// intervals (attack tools blast at a configured rate), agents take turns,
/// and forged sources rotate round-robin through the spoof pool.
pub fn gen_attack(
    scenario: &AttackScenario,
    _rng: &mut ChaCha8Rng,
    ids: &mut IdGen,
    corr: &mut IdGen,
) -> Result<Vec<(u64, Packet)>, ScenarioError> {
    scenario.validate()?;
    let mut out = Vec::new();
    let n_agents = scenario.agents.len();
    let total = ((scenario.end_ms - scenario.start_ms) as f64 * scenario.rate_pkts_per_ms) as u64;
    let mut per_agent_frag_parity = vec![false; n_agents];
    for k in 0..total {
        let t = scenario.start_ms + (k as f64 / scenario.rate_pkts_per_ms).floor() as u64;
        if t >= scenario.end_ms {
            break;
        }
        let ai = (k as usize) % n_agents;
        let (_, agent_addr) = scenario.agents[ai];
        let spoof = if scenario.spoof_pool.is_empty() {
            agent_addr
        } else {
            scenario.spoof_pool[(k as usize) % scenario.spoof_pool.len()]
        };
        let id = ids.next_id();
        let pkt = match scenario.attack {
            AttackType::Smurf => Packet::new(
                id,
                Protocol::Icmp,
                PacketKind::EchoRequest,
                spoof,
                agent_addr,
                scenario.target,
                PING_SIZE,
                t,
            ),
            AttackType::SynFlood => Packet::new(
                id,
                Protocol::Tcp,
                PacketKind::Syn,
                spoof,
                agent_addr,
                scenario.target,
                SYN_SIZE,
                t,
            )
            .with_corr(corr.next_id()),
            AttackType::UdpFlood => Packet::new(
                id,
                Protocol::Udp,
                PacketKind::Data,
                spoof,
                agent_addr,
                scenario.target,
                UDP_FLOOD_SIZE,
                t,
            ),
            AttackType::Teardrop => {
                // alternating overlapping fragment pairs per agent
                let first = !per_agent_frag_parity[ai];
                per_agent_frag_parity[ai] = first;
                let frag = if first {
                    FragInfo { offset: 0, length: 512 }
                } else {
                    FragInfo { offset: 256, length: 512 }
                };
                Packet::new(
                    id,
                    Protocol::Tcp,
                    PacketKind::Fragment,
                    agent_addr,
                    agent_addr,
                    scenario.target,
                    TEARDROP_FRAG_SIZE,
                    t,
                )
                .with_frag(frag)
            }
            AttackType::PingOfDeath => Packet::new(
                id,
                Protocol::Icmp,
                PacketKind::EchoRequest,
                agent_addr,
                agent_addr,
                scenario.target,
                OVERSIZE_PING,
                t,
            ),
            AttackType::Land => Packet::new(
                id,
                Protocol::Tcp,
                PacketKind::Syn,
                scenario.target,
                agent_addr,
                scenario.target,
                SYN_SIZE,
                t,
            ),
            AttackType::PingFlood => Packet::new(
                id,
                Protocol::Icmp,
                PacketKind::EchoRequest,
                agent_addr,
                agent_addr,
                scenario.target,
                PING_SIZE,
                t,
            ),
            AttackType::Nuke => Packet::new(
                id,
                Protocol::Icmp,
                PacketKind::Data,
                spoof,
                agent_addr,
                scenario.target,
                0,
                t,
            ),
        };
        out.push((t, pkt.with_attack_tag(scenario.attack)));
    }
    Ok(out)
}

/// True when an ICMP packet carries a kind/size combination no real ICMP
/// message would: the shape nuke packets exploit.
pub fn malformed_icmp(pkt: &Packet) -> bool {
    pkt.protocol == Protocol::Icmp
        && (!matches!(
            pkt.kind,
            PacketKind::EchoRequest | PacketKind::EchoReply | PacketKind::DestUnreachable
        ) || pkt.size_bytes == 0)
}

/// Structural trigger check for the four crash-class attack shapes. Pure
/// packet inspection: no ground-truth fields are consulted. `prior_frags`
/// holds fragments already buffered for the packet's claimed source.
pub fn crash_signature(
    pkt: &Packet,
    prior_frags: &[FragInfo],
    reassembly_max_bytes: u32,
) -> Option<AttackType> {
    if pkt.kind.is_request() && pkt.src_claimed == pkt.dst {
        return Some(AttackType::Land);
    }
    if pkt.protocol == Protocol::Icmp
        && pkt.kind == PacketKind::EchoRequest
        && pkt.size_bytes > reassembly_max_bytes
    {
        return Some(AttackType::PingOfDeath);
    }
    if malformed_icmp(pkt) {
        return Some(AttackType::Nuke);
    }
    if let Some(frag) = &pkt.frag {
        if prior_frags.iter().any(|f| f.overlaps(frag)) {
            return Some(AttackType::Teardrop);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    Malicious,
    Benign,
}

/// The oracle: metrics-only classification of a packet.
pub fn ground_truth(pkt: &Packet) -> GroundTruth {
    if pkt.attack_tag().is_some() {
        GroundTruth::Malicious
    } else {
        GroundTruth::Benign
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::substream;

    fn scenario(attack: AttackType) -> AttackScenario {
        AttackScenario {
            attack,
            agents: vec![(NodeId(1), Address(101)), (NodeId(2), Address(102))],
            spoof_pool: vec![Address(200), Address(201), Address(202)],
            target: Address(7),
            rate_pkts_per_ms: 0.5,
            start_ms: 1000,
            end_ms: 3000,
            p_bot_l1: 0.0,
        }
    }

    fn gen(attack: AttackType) -> Vec<(u64, Packet)> {
        let mut ids = IdGen::default();
        let mut corr = IdGen::default();
        let mut rng = substream(1, "attack");
        gen_attack(&scenario(attack), &mut rng, &mut ids, &mut corr).unwrap()
    }

    #[test]
    fn land_packets_claim_the_target_itself() {
        for (_, p) in gen(AttackType::Land) {
            assert_eq!(p.src_claimed, p.dst);
            assert_eq!(p.dst, Address(7));
        }
    }

    #[test]
    fn ping_of_death_packets_are_oversize() {
        for (_, p) in gen(AttackType::PingOfDeath) {
            assert!(p.size_bytes >= 65_536);
            assert_eq!(p.protocol, Protocol::Icmp);
        }
    }

    #[test]
    fn teardrop_emits_overlapping_fragment_pairs() {
        let pkts = gen(AttackType::Teardrop);
        // group by claimed source, check consecutive pairs overlap
        for src in [Address(101), Address(102)] {
            let frags: Vec<FragInfo> = pkts
                .iter()
                .filter(|(_, p)| p.src_claimed == src)
                .map(|(_, p)| p.frag.expect("fragment"))
                .collect();
            assert!(frags.len() >= 2);
            for pair in frags.chunks(2) {
                if let [a, b] = pair {
                    assert!(b.offset < a.offset + a.length, "pair must overlap");
                    assert!(a.overlaps(b));
                }
            }
        }
    }

    #[test]
    fn spoofing_invariant_per_attack_type() {
        for attack in ALL_ATTACKS {
            let pkts = gen(attack);
            assert!(!pkts.is_empty());
            for (_, p) in &pkts {
                assert_eq!(p.attack_tag(), Some(attack));
                match attack {
                    AttackType::Smurf | AttackType::SynFlood | AttackType::UdpFlood | AttackType::Nuke => {
                        assert!(p.is_spoofed(), "{attack} must forge sources")
                    }
                    AttackType::PingFlood | AttackType::Teardrop | AttackType::PingOfDeath => {
                        assert!(!p.is_spoofed(), "{attack} uses true sources")
                    }
                    AttackType::Land => assert_eq!(p.src_claimed, p.dst),
                }
            }
        }
    }

    #[test]
    fn attack_packets_stay_inside_window() {
        for attack in ALL_ATTACKS {
            for (t, p) in gen(attack) {
                assert!(t >= 1000 && t < 3000);
                assert_eq!(p.sent_at, t);
            }
        }
    }

    #[test]
    fn missing_spoof_pool_is_invalid() {
        let mut s = scenario(AttackType::SynFlood);
        s.spoof_pool.clear();
        let mut ids = IdGen::default();
        let mut corr = IdGen::default();
        let mut rng = substream(1, "attack");
        assert_eq!(
            gen_attack(&s, &mut rng, &mut ids, &mut corr),
            Err(ScenarioError::InvalidScenario { attack: AttackType::SynFlood })
        );
        // teardrop does not need one
        let mut s2 = scenario(AttackType::Teardrop);
        s2.spoof_pool.clear();
        assert!(gen_attack(&s2, &mut rng, &mut ids, &mut corr).is_ok());
    }

    #[test]
    fn rate_fidelity_of_attack_stream() {
        let pkts = gen(AttackType::UdpFlood);
        let expected = 0.5 * 2000.0;
        let n = pkts.len() as f64;
        assert!((n - expected).abs() / expected < 0.1, "n={n}");
    }

    fn profile() -> LegitProfile {
        LegitProfile {
            clients: vec![(NodeId(10), Address(10)), (NodeId(11), Address(11))],
            request_rate_per_client: 0.01,
            request_size_bytes: SizeDist { mean: 500.0, stddev: 200.0 },
            target: Address(7),
            answer_challenges: 1.0,
        }
    }

    #[test]
    fn legit_packets_are_honest() {
        let mut ids = IdGen::default();
        let mut corr = IdGen::default();
        let mut rng = substream(3, "legit");
        let pkts = gen_legit(&profile(), &mut rng, 100_000, &mut ids, &mut corr);
        assert!(!pkts.is_empty());
        for (_, p) in &pkts {
            assert!(!p.is_spoofed());
            assert!(p.attack_tag().is_none());
            assert_eq!(ground_truth(p), GroundTruth::Benign);
        }
    }

    #[test]
    fn legit_stream_is_deterministic() {
        let run = |seed| {
            let mut ids = IdGen::default();
            let mut corr = IdGen::default();
            let mut rng = substream(seed, "legit");
            gen_legit(&profile(), &mut rng, 50_000, &mut ids, &mut corr)
        };
        assert_eq!(run(9), run(9));
        assert_ne!(
            run(9).iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            run(10).iter().map(|(t, _)| *t).collect::<Vec<_>>()
        );
    }

    // Poisson mean oracle: one client at 0.001/ms over 10^6 ms averages
    // 1000 requests; the empirical mean over 20 seeds must sit within 5%.
    #[test]
    fn legit_poisson_mean_matches_rate() {
        let p = LegitProfile {
            clients: vec![(NodeId(10), Address(10))],
            request_rate_per_client: 0.001,
            request_size_bytes: SizeDist { mean: 500.0, stddev: 200.0 },
            target: Address(7),
            answer_challenges: 1.0,
        };
        let mut total = 0usize;
        for seed in 0..20 {
            let mut ids = IdGen::default();
            let mut corr = IdGen::default();
            let mut rng = substream(seed, "legit-mean");
            total += gen_legit(&p, &mut rng, 1_000_000, &mut ids, &mut corr).len();
        }
        let mean = total as f64 / 20.0;
        assert!((mean - 1000.0).abs() < 50.0, "mean={mean}");
    }

    #[test]
    fn any_generated_attack_packet_is_malicious() {
        for attack in ALL_ATTACKS {
            for (_, p) in gen(attack) {
                assert_eq!(ground_truth(&p), GroundTruth::Malicious);
            }
        }
    }

    #[test]
    fn flood_crash_classification() {
        assert_eq!(AttackType::SynFlood.class(), AttackClass::Flood);
        assert_eq!(AttackType::PingFlood.class(), AttackClass::Flood);
        assert_eq!(AttackType::Teardrop.class(), AttackClass::Crash);
        assert_eq!(AttackType::Nuke.class(), AttackClass::Crash);
    }

    #[test]
    fn land_claimed_sources_is_the_target() {
        assert_eq!(scenario(AttackType::Land).claimed_sources(), vec![Address(7)]);
        assert_eq!(
            scenario(AttackType::SynFlood).claimed_sources(),
            vec![Address(200), Address(201), Address(202)]
        );
    }
}
