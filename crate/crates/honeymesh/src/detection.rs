//! Behavioral baseline learning, per-source anomaly scoring, and the
//! two-level challenge-response confirmation state machine.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sim::event::DetectorSite;
use crate::sim::packet::{Address, ChallengePayload, FragInfo, Packet, PacketKind, Protocol};
use crate::traffic::crash_signature;

/// Floor applied to every trained sigma so scoring never divides by zero.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// L1 distance between protocol mixes is scaled by this to a pseudo-z.
pub const PROTO_MIX_SCALE: f64 = 0.25;
pub const BUCKET_MS: u64 = 1000;

pub const DEFAULT_WARMUP_N: usize = 2000;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CHALLENGE_TIMEOUT_MS: u64 = 2000;
pub const DEFAULT_Z_CAP: f64 = 6.0;
pub const DEFAULT_IDLE_EVICT_MS: u64 = 60_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectionError {
    #[error("training sample has {got} requests, need {need}")]
    InsufficientSample { got: usize, need: usize },
    #[error("a challenge is already outstanding for {0}")]
    ChallengeOutstanding(Address),
}

fn proto_index(p: Protocol) -> usize {
    match p {
        Protocol::Icmp => 0,
        Protocol::Tcp => 1,
        Protocol::Udp => 2,
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, SIGMA_FLOOR);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Learned per-service traffic statistics; frozen once trained.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    /// Service arrival rate over fixed 1000 ms buckets, pkts/ms.
    pub rate_mean: f64,
    pub rate_std: f64,
    /// Packet size, bytes.
    pub size_mean: f64,
    pub size_std: f64,
    /// Frequency vector over {ICMP, TCP, UDP}; sums to 1.
    pub protocol_mix: [f64; 3],
    /// Per distinct claimed source rate over 1000 ms buckets, pkts/ms.
    pub per_source_rate_mean: f64,
    pub per_source_rate_std: f64,
    pub trained_on: usize,
}

/// Trains a baseline over exactly the first `warmup_n` packets of the
/// ordered sample. Rate statistics use complete 1000 ms buckets only,
/// measured relative to the first packet.
pub fn train_baseline(sample: &[Packet], warmup_n: usize) -> Result<BaselineModel, DetectionError> {
    if sample.len() < warmup_n {
        return Err(DetectionError::InsufficientSample { got: sample.len(), need: warmup_n });
    }
    let sample = &sample[..warmup_n];
    let t0 = sample.first().map(|p| p.sent_at).unwrap_or(0);
    let t_last = sample.last().map(|p| p.sent_at).unwrap_or(t0) - t0;
    // bucket b is complete once all of [b*1000, (b+1)*1000) has elapsed
    let complete = ((t_last + 1) / BUCKET_MS).max(1);

    let mut bucket_counts = vec![0u64; complete as usize];
    let mut per_source: BTreeMap<Address, Vec<u64>> = BTreeMap::new();
    let mut proto = [0u64; 3];
    let mut sizes = Vec::with_capacity(warmup_n);
    for p in sample {
        let tau = p.sent_at - t0;
        let b = tau / BUCKET_MS;
        if b < complete {
            bucket_counts[b as usize] += 1;
            per_source
                .entry(p.src_claimed)
                .or_insert_with(|| vec![0u64; complete as usize])[b as usize] += 1;
        }
        proto[proto_index(p.protocol)] += 1;
        sizes.push(p.size_bytes as f64);
    }

    let rates: Vec<f64> = bucket_counts.iter().map(|&c| c as f64 / BUCKET_MS as f64).collect();
    let (rate_mean, rate_std) = mean_std(&rates);
    let (size_mean, size_std) = mean_std(&sizes);
    let per_source_rates: Vec<f64> = per_source
        .values()
        .flat_map(|counts| counts.iter().map(|&c| c as f64 / BUCKET_MS as f64))
        .collect();
    let (ps_mean, ps_std) = mean_std(&per_source_rates);
    let total = proto.iter().sum::<u64>() as f64;
    let protocol_mix = [proto[0] as f64 / total, proto[1] as f64 / total, proto[2] as f64 / total];

    Ok(BaselineModel {
        rate_mean,
        rate_std,
        size_mean,
        size_std,
        protocol_mix,
        per_source_rate_mean: ps_mean,
        per_source_rate_std: ps_std,
        trained_on: warmup_n,
    })
}

/// Per-source observation window. Only packets claiming this source feed it.
#[derive(Debug, Clone)]
pub struct FlowStats {
    pub source: Address,
    window: VecDeque<u64>,
    count: u64,
    size_sum: u64,
    proto_counts: [u64; 3],
    pub last_seen: u64,
}

impl FlowStats {
    pub fn new(source: Address) -> Self {
        FlowStats { source, window: VecDeque::new(), count: 0, size_sum: 0, proto_counts: [0; 3], last_seen: 0 }
    }

    pub fn observe(&mut self, pkt: &Packet, now: u64) {
        debug_assert_eq!(pkt.src_claimed, self.source);
        let cutoff = now.saturating_sub(BUCKET_MS);
        while let Some(&t) = self.window.front() {
            if t <= cutoff {
                self.window.pop_front();
            } else {
                break;
            }
        }
        self.window.push_back(now);
        self.count += 1;
        self.size_sum += pkt.size_bytes as u64;
        self.proto_counts[proto_index(pkt.protocol)] += 1;
        self.last_seen = now;
    }

    /// Packets per ms over the sliding 1000 ms window ending now.
    pub fn rate(&self) -> f64 {
        self.window.len() as f64 / BUCKET_MS as f64
    }

    pub fn mean_size(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.size_sum as f64 / self.count as f64
        }
    }

    pub fn mix(&self) -> [f64; 3] {
        let total = self.proto_counts.iter().sum::<u64>() as f64;
        if total == 0.0 {
            return [0.0; 3];
        }
        [
            self.proto_counts[0] as f64 / total,
            self.proto_counts[1] as f64 / total,
            self.proto_counts[2] as f64 / total,
        ]
    }
}

/// Deviation of a flow from the baseline, in [0, 1]: the largest of the
/// per-source-rate z, mean-size z, and the protocol-mix pseudo-z, capped at
/// `z_cap` and normalized.
pub fn anomaly_score(m: &BaselineModel, f: &FlowStats, z_cap: f64) -> f64 {
    let z_rate = (f.rate() - m.per_source_rate_mean).abs() / m.per_source_rate_std;
    let z_size = (f.mean_size() - m.size_mean).abs() / m.size_std;
    let mix = f.mix();
    let d: f64 = mix
        .iter()
        .zip(m.protocol_mix.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let z_proto = d / PROTO_MIX_SCALE;
    (z_rate.max(z_size).max(z_proto) / z_cap).min(1.0)
}

/// Boundary-inclusive suspicion trigger.
pub fn decide_suspicion(score: f64, threshold: f64) -> bool {
    score >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeLevel {
    None,
    L1Pending,
    L2Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Benign,
    Suspicious,
    Confirmed,
}

/// Per-source detection state machine. Verdicts only move Benign →
/// Suspicious → {Benign, Confirmed}; Confirmed is terminal.
#[derive(Debug, Clone)]
pub struct SuspicionRecord {
    pub source: Address,
    pub score: f64,
    pub level: ChallengeLevel,
    pub challenges_sent: u32,
    pub last_challenge_id: Option<u64>,
    pub verdict: Verdict,
}

impl SuspicionRecord {
    fn new(source: Address) -> Self {
        SuspicionRecord {
            source,
            score: 0.0,
            level: ChallengeLevel::None,
            challenges_sent: 0,
            last_challenge_id: None,
            verdict: Verdict::Benign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub id: u64,
    pub level: u8,
    pub issued_to: Address,
    pub issued_at: u64,
    pub deadline: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeOutcome {
    Pass,
    Fail,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextStep {
    Clear,
    Escalate,
    Confirm,
}

/// Challenge resolution. A response passes only with the right nonce, in
/// time; a missing response at or past the deadline is a timeout — which is
/// where every spoofed source lands, since the challenge went to an address
/// the attacker never sees.
pub fn evaluate_response(c: &Challenge, resp: Option<&Packet>, now: u64) -> ChallengeOutcome {
    match resp {
        Some(r) => {
            let nonce_ok = r.challenge.map(|p| p.id == c.id && p.nonce == c.nonce).unwrap_or(false);
            if nonce_ok && now <= c.deadline {
                ChallengeOutcome::Pass
            } else {
                ChallengeOutcome::Fail
            }
        }
        None => {
            debug_assert!(now >= c.deadline, "timeout evaluated before deadline");
            ChallengeOutcome::Timeout
        }
    }
}

/// Ladder policy: a pass at either level clears, a level-1 failure
/// escalates, a level-2 failure confirms. Runs with no operator input.
pub fn next_action(level: ChallengeLevel, outcome: ChallengeOutcome) -> NextStep {
    match (level, outcome) {
        (ChallengeLevel::L1Pending, ChallengeOutcome::Pass) => NextStep::Clear,
        (ChallengeLevel::L1Pending, _) => NextStep::Escalate,
        (ChallengeLevel::L2Pending, ChallengeOutcome::Pass) => NextStep::Clear,
        (ChallengeLevel::L2Pending, _) => NextStep::Confirm,
        (ChallengeLevel::None, _) => unreachable!("next_action without a pending challenge"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub suspicion_threshold: f64,
    pub challenge_timeout_ms: u64,
    pub z_cap: f64,
    pub idle_evict_ms: u64,
    pub reassembly_max_bytes: u32,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            suspicion_threshold: DEFAULT_THRESHOLD,
            challenge_timeout_ms: DEFAULT_CHALLENGE_TIMEOUT_MS,
            z_cap: DEFAULT_Z_CAP,
            idle_evict_ms: DEFAULT_IDLE_EVICT_MS,
            reassembly_max_bytes: 65_535,
        }
    }
}

/// What the host node must do on behalf of the detector: send a challenge
/// packet, arm its deadline, and surface verdict transitions to the
/// defense orchestrator.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorEffect {
    SuspicionRaised { source: Address, score: f64 },
    SendChallenge { pkt: Packet, deadline: u64 },
    Escalated { source: Address },
    Cleared { source: Address },
    Confirmed { source: Address },
}

/// Gate decision for one observed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserveDecision {
    /// Benign-scored traffic proceeds to the service.
    Forward,
    /// Source has a pending challenge; traffic held until it resolves.
    Withhold,
    /// Source is locally confirmed hostile.
    DropConfirmed,
}

/// One detection instance: the shared pipeline run by honey VMs over their
/// monitored service and by honey-d daemons inside production servers.
#[derive(Debug)]
pub struct Detector {
    pub site: DetectorSite,
    /// Address challenge packets are sent from (and answered to).
    pub challenge_src: Address,
    pub baseline: BaselineModel,
    pub cfg: DetectionConfig,
    flows: BTreeMap<Address, FlowStats>,
    records: BTreeMap<Address, SuspicionRecord>,
    outstanding: BTreeMap<Address, Challenge>,
    frag_shadow: BTreeMap<Address, Vec<FragInfo>>,
    rng: ChaCha8Rng,
    next_challenge_id: u64,
}

impl Detector {
    pub fn new(
        site: DetectorSite,
        challenge_src: Address,
        baseline: BaselineModel,
        cfg: DetectionConfig,
        rng: ChaCha8Rng,
    ) -> Self {
        Detector {
            site,
            challenge_src,
            baseline,
            cfg,
            flows: BTreeMap::new(),
            records: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            frag_shadow: BTreeMap::new(),
            rng,
            next_challenge_id: 0,
        }
    }

    pub fn record(&self, source: Address) -> Option<&SuspicionRecord> {
        self.records.get(&source)
    }

    pub fn flow(&self, source: Address) -> Option<&FlowStats> {
        self.flows.get(&source)
    }

    pub fn verdict(&self, source: Address) -> Verdict {
        self.records.get(&source).map(|r| r.verdict).unwrap_or(Verdict::Benign)
    }

    /// Runs the pipeline over one inbound packet: update flow stats, score
    /// (behavioral plus the crash-shape screen), and drive the challenge
    /// ladder. Non-request kinds pass through unscored.
    pub fn observe(
        &mut self,
        pkt: &Packet,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> (ObserveDecision, Vec<DetectorEffect>) {
        if !pkt.kind.is_request() {
            return (ObserveDecision::Forward, Vec::new());
        }
        let source = pkt.src_claimed;
        if self.verdict(source) == Verdict::Confirmed {
            return (ObserveDecision::DropConfirmed, Vec::new());
        }

        let flow = self.flows.entry(source).or_insert_with(|| FlowStats::new(source));
        flow.observe(pkt, now);
        let behavioral = anomaly_score(&self.baseline, flow, self.cfg.z_cap);
        let shadow = self.frag_shadow.entry(source).or_default();
        let structural = crash_signature(pkt, shadow, self.cfg.reassembly_max_bytes);
        if let Some(frag) = &pkt.frag {
            shadow.push(*frag);
            if shadow.len() > 32 {
                shadow.remove(0);
            }
        }
        let score = if structural.is_some() { 1.0 } else { behavioral };

        let rec = self.records.entry(source).or_insert_with(|| SuspicionRecord::new(source));
        rec.score = score;
        if rec.level != ChallengeLevel::None {
            return (ObserveDecision::Withhold, Vec::new());
        }
        if rec.verdict == Verdict::Benign && decide_suspicion(score, self.cfg.suspicion_threshold) {
            rec.verdict = Verdict::Suspicious;
            let mut effects = vec![DetectorEffect::SuspicionRaised { source, score }];
            effects.extend(self.start_challenge(source, 1, now, next_pkt_id));
            return (ObserveDecision::Withhold, effects);
        }
        (ObserveDecision::Forward, Vec::new())
    }

    /// Issues a challenge toward `source`. The packet is addressed to the
    /// claimed source, so a forged source never sees it.
    pub fn issue_challenge(
        &mut self,
        source: Address,
        level: u8,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Result<(Challenge, Packet), DetectionError> {
        if self.outstanding.contains_key(&source) {
            return Err(DetectionError::ChallengeOutstanding(source));
        }
        self.next_challenge_id += 1;
        let challenge = Challenge {
            id: self.next_challenge_id,
            level,
            issued_to: source,
            issued_at: now,
            deadline: now + self.cfg.challenge_timeout_ms,
            nonce: self.rng.random::<u64>(),
        };
        let pkt = Packet::new(
            next_pkt_id(),
            Protocol::Udp,
            PacketKind::Challenge,
            self.challenge_src,
            self.challenge_src,
            source,
            64,
            now,
        )
        .with_challenge(ChallengePayload { id: challenge.id, level, nonce: challenge.nonce });
        self.outstanding.insert(source, challenge.clone());
        let rec = self.records.entry(source).or_insert_with(|| SuspicionRecord::new(source));
        rec.level = if level == 1 { ChallengeLevel::L1Pending } else { ChallengeLevel::L2Pending };
        rec.challenges_sent += 1;
        rec.last_challenge_id = Some(challenge.id);
        Ok((challenge, pkt))
    }

    fn start_challenge(
        &mut self,
        source: Address,
        level: u8,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Vec<DetectorEffect> {
        match self.issue_challenge(source, level, now, next_pkt_id) {
            Ok((challenge, pkt)) => {
                vec![DetectorEffect::SendChallenge { pkt, deadline: challenge.deadline }]
            }
            Err(_) => Vec::new(),
        }
    }

    /// A `ChallengeResponse` packet came back from `pkt.src_claimed`.
    pub fn on_response(
        &mut self,
        pkt: &Packet,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Vec<DetectorEffect> {
        let source = pkt.src_claimed;
        let Some(challenge) = self.outstanding.get(&source) else {
            return Vec::new(); // stale or decoy response
        };
        if pkt.challenge.map(|c| c.id) != Some(challenge.id) {
            return Vec::new();
        }
        let outcome = evaluate_response(challenge, Some(pkt), now);
        self.resolve(source, outcome, now, next_pkt_id)
    }

    /// The deadline timer for `challenge_id` fired.
    pub fn on_deadline(
        &mut self,
        source: Address,
        challenge_id: u64,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Vec<DetectorEffect> {
        let Some(challenge) = self.outstanding.get(&source) else {
            return Vec::new();
        };
        if challenge.id != challenge_id {
            return Vec::new(); // resolved and reissued meanwhile
        }
        let outcome = evaluate_response(challenge, None, now);
        self.resolve(source, outcome, now, next_pkt_id)
    }

    fn resolve(
        &mut self,
        source: Address,
        outcome: ChallengeOutcome,
        now: u64,
        next_pkt_id: &mut dyn FnMut() -> u64,
    ) -> Vec<DetectorEffect> {
        self.outstanding.remove(&source);
        let level = self.records.get(&source).map(|r| r.level).unwrap_or(ChallengeLevel::None);
        if level == ChallengeLevel::None {
            return Vec::new();
        }
        match next_action(level, outcome) {
            NextStep::Clear => {
                // full reset: a source that deviates again gets re-challenged
                self.records.remove(&source);
                self.flows.remove(&source);
                self.frag_shadow.remove(&source);
                vec![DetectorEffect::Cleared { source }]
            }
            NextStep::Escalate => {
                let rec = self.records.get_mut(&source).expect("pending record");
                rec.level = ChallengeLevel::None;
                let mut effects = vec![DetectorEffect::Escalated { source }];
                effects.extend(self.start_challenge(source, 2, now, next_pkt_id));
                effects
            }
            NextStep::Confirm => {
                let rec = self.records.get_mut(&source).expect("pending record");
                rec.verdict = Verdict::Confirmed;
                rec.level = ChallengeLevel::None;
                vec![DetectorEffect::Confirmed { source }]
            }
        }
    }

    /// Drops idle per-source state. Confirmed verdicts are never evicted.
    pub fn evict_idle(&mut self, now: u64) {
        let idle: Vec<Address> = self
            .flows
            .iter()
            .filter(|(src, f)| {
                f.last_seen + self.cfg.idle_evict_ms < now
                    && self.verdict(**src) != Verdict::Confirmed
                    && !self.outstanding.contains_key(src)
            })
            .map(|(src, _)| *src)
            .collect();
        for src in idle {
            self.flows.remove(&src);
            self.records.remove(&src);
            self.frag_shadow.remove(&src);
        }
    }

    pub fn tracked_sources(&self) -> usize {
        self.flows.len()
    }
}
