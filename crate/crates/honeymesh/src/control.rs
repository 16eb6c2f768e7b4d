//! Defense orchestration: consume verdicts from honey VMs and honey-d
//! daemons, install router redirects, and land firewall blocks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detection::Verdict;
use crate::sim::packet::Address;
use crate::sim::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefensePolicy {
    pub farm_enabled: bool,
    pub honeyd_enabled: bool,
    pub suspicion_threshold: f64,
    /// Time between redirecting a confirmed source to the farm and blocking
    /// it at the perimeter; the farm studies the attacker in between.
    pub engagement_window_ms: u64,
    pub challenge_timeout_ms: u64,
    pub warmup_n: usize,
}

impl Default for DefensePolicy {
    fn default() -> Self {
        DefensePolicy {
            farm_enabled: true,
            honeyd_enabled: true,
            suspicion_threshold: 0.5,
            engagement_window_ms: 10_000,
            challenge_timeout_ms: 2000,
            warmup_n: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefenseEventKind {
    SuspicionRaised,
    ChallengeIssued,
    Escalated,
    Cleared,
    Confirmed,
    RedirectInstalled,
    EngagementStarted,
    TrapTriggered,
    FailoverDone,
    BlockInstalled,
}

/// Which detection instance produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    HoneyD(NodeId),
    HoneyVm(u32),
    Control,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::HoneyD(n) => write!(f, "honeyd@{n}"),
            Origin::HoneyVm(v) => write!(f, "vm{v}"),
            Origin::Control => write!(f, "control"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseEvent {
    pub at: u64,
    pub kind: DefenseEventKind,
    pub source: Address,
    pub origin: Origin,
}

/// Topology mutations and timers the orchestrator wants executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseAction {
    /// Install a redirect for the source on every internal router, at once.
    InstallRedirectAll { source: Address },
    /// Arm the perimeter block timer.
    ScheduleBlock { source: Address, at: u64 },
    /// Block the source at the external firewall now.
    BlockNow { source: Address },
    /// Run farm failover for a compromised VM.
    Failover { vm: u32 },
}

/// Defense sequencing state. Actions are deduplicated per source so
/// replayed verdicts are no-ops; events are emitted only on state change.
#[derive(Debug, Default)]
pub struct Orchestrator {
    pub policy: DefensePolicy,
    confirmed: BTreeSet<Address>,
    redirected: BTreeSet<Address>,
    block_armed: BTreeSet<Address>,
    blocked: BTreeSet<Address>,
    pub events: Vec<DefenseEvent>,
}

impl Orchestrator {
    pub fn new(policy: DefensePolicy) -> Self {
        Orchestrator { policy, ..Default::default() }
    }

    pub fn emit(&mut self, at: u64, kind: DefenseEventKind, source: Address, origin: Origin) {
        self.events.push(DefenseEvent { at, kind, source, origin });
    }

    pub fn is_blocked(&self, source: Address) -> bool {
        self.blocked.contains(&source)
    }

    pub fn is_redirected(&self, source: Address) -> bool {
        self.redirected.contains(&source)
    }

    /// A detection instance reached a verdict. Confirmation redirects the
    /// source to the farm immediately and schedules the perimeter block at
    /// the end of the engagement window; a clear mutates nothing.
    pub fn on_verdict(
        &mut self,
        source: Address,
        verdict: Verdict,
        origin: Origin,
        now: u64,
    ) -> Vec<DefenseAction> {
        match verdict {
            Verdict::Confirmed => {
                self.confirmed.insert(source);
                self.emit(now, DefenseEventKind::Confirmed, source, origin);
                let mut actions = Vec::new();
                if self.redirected.insert(source) {
                    actions.push(DefenseAction::InstallRedirectAll { source });
                    self.emit(now, DefenseEventKind::RedirectInstalled, source, Origin::Control);
                }
                if !self.blocked.contains(&source) && self.block_armed.insert(source) {
                    actions.push(DefenseAction::ScheduleBlock {
                        source,
                        at: now + self.policy.engagement_window_ms,
                    });
                }
                actions
            }
            _ => Vec::new(),
        }
    }

    /// A honey VM trap fired: fail over the pool and block right away —
    /// the source proved hostility, no engagement window applies.
    pub fn on_trap(&mut self, vm: u32, source: Address, now: u64) -> Vec<DefenseAction> {
        self.emit(now, DefenseEventKind::TrapTriggered, source, Origin::HoneyVm(vm));
        let mut actions = vec![DefenseAction::Failover { vm }];
        if !self.blocked.contains(&source) {
            actions.push(DefenseAction::BlockNow { source });
        }
        actions
    }

    /// The engagement-window timer fired for a source.
    pub fn on_block_due(&mut self, source: Address, _now: u64) -> Vec<DefenseAction> {
        if !self.blocked.contains(&source) {
            vec![DefenseAction::BlockNow { source }]
        } else {
            Vec::new()
        }
    }

    /// A standby took over for a compromised VM.
    pub fn note_failover_done(&mut self, vm: u32, source: Address, now: u64) {
        self.emit(now, DefenseEventKind::FailoverDone, source, Origin::HoneyVm(vm));
    }

    /// The block actually landed on the firewall. Returns false when the
    /// source was already blocked (duplicate paths race harmlessly).
    pub fn note_block_installed(&mut self, source: Address, now: u64) -> bool {
        if self.blocked.insert(source) {
            self.emit(now, DefenseEventKind::BlockInstalled, source, Origin::Control);
            true
        } else {
            false
        }
    }

    pub fn first_event(&self, kind: DefenseEventKind, source: Address) -> Option<u64> {
        self.events
            .iter()
            .find(|e| e.kind == kind && e.source == source)
            .map(|e| e.at)
    }
}

/// Checks the per-source pipeline partial order on an ordered event list:
/// suspicion precedes challenges, challenges precede their resolution, and
/// confirmation precedes redirect precedes block. Returns the first
/// violation found.
pub fn check_event_ordering(events: &[DefenseEvent]) -> Result<(), String> {
    use DefenseEventKind::*;
    let mut sources: BTreeSet<Address> = BTreeSet::new();
    for e in events {
        sources.insert(e.source);
    }
    // events must be time-ordered as emitted
    for w in events.windows(2) {
        if w[0].at > w[1].at {
            return Err(format!("events out of time order at t={}", w[1].at));
        }
    }
    for src in sources {
        let per_origin: BTreeSet<Origin> =
            events.iter().filter(|e| e.source == src).map(|e| e.origin).collect();
        for origin in per_origin {
            let seq: Vec<DefenseEventKind> = events
                .iter()
                .filter(|e| e.source == src && e.origin == origin)
                .map(|e| e.kind)
                .collect();
            let pos = |k: DefenseEventKind| seq.iter().position(|x| *x == k);
            if let Some(ci) = pos(ChallengeIssued) {
                match pos(SuspicionRaised) {
                    Some(si) if si <= ci => {}
                    _ => return Err(format!("{src}: challenge before suspicion ({origin})")),
                }
            }
            for (i, k) in seq.iter().enumerate() {
                if matches!(k, Cleared | Escalated) {
                    let prior_challenge = seq[..i].iter().any(|x| *x == ChallengeIssued);
                    if !prior_challenge {
                        return Err(format!("{src}: {k:?} without a prior challenge"));
                    }
                }
            }
        }
        let first = |k: DefenseEventKind| {
            events
                .iter()
                .find(|e| e.source == src && e.kind == k)
                .map(|e| e.at)
        };
        if let Some(r) = first(RedirectInstalled) {
            match first(Confirmed) {
                Some(c) if c <= r => {}
                _ => return Err(format!("{src}: redirect before confirmation")),
            }
        }
        if let Some(b) = first(BlockInstalled) {
            let confirmed_first = first(Confirmed).map(|c| c <= b).unwrap_or(false);
            let trapped_first = first(TrapTriggered).map(|t| t <= b).unwrap_or(false);
            if !confirmed_first && !trapped_first {
                return Err(format!("{src}: block without confirmation or trap"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: Address = Address(50);

    #[test]
    fn confirmation_redirects_now_and_blocks_after_window() {
        let mut o = Orchestrator::new(DefensePolicy::default());
        let actions = o.on_verdict(S, Verdict::Confirmed, Origin::HoneyD(NodeId(5)), 4000);
        assert_eq!(
            actions,
            vec![
                DefenseAction::InstallRedirectAll { source: S },
                DefenseAction::ScheduleBlock { source: S, at: 14_000 },
            ]
        );
        assert_eq!(o.first_event(DefenseEventKind::Confirmed, S), Some(4000));
        assert_eq!(o.first_event(DefenseEventKind::RedirectInstalled, S), Some(4000));
        let actions = o.on_block_due(S, 14_000);
        assert_eq!(actions, vec![DefenseAction::BlockNow { source: S }]);
        assert!(o.note_block_installed(S, 14_000));
        assert_eq!(o.first_event(DefenseEventKind::BlockInstalled, S), Some(14_000));
        // the window arithmetic is exact
        assert_eq!(
            o.first_event(DefenseEventKind::BlockInstalled, S).unwrap()
                - o.first_event(DefenseEventKind::Confirmed, S).unwrap(),
            o.policy.engagement_window_ms
        );
    }

    #[test]
    fn cleared_verdict_mutates_nothing() {
        let mut o = Orchestrator::new(DefensePolicy::default());
        o.emit(1, DefenseEventKind::SuspicionRaised, S, Origin::HoneyD(NodeId(5)));
        o.emit(1, DefenseEventKind::ChallengeIssued, S, Origin::HoneyD(NodeId(5)));
        let actions = o.on_verdict(S, Verdict::Benign, Origin::HoneyD(NodeId(5)), 100);
        assert!(actions.is_empty());
        assert!(!o.is_redirected(S));
    }

    #[test]
    fn repeated_confirmation_is_idempotent() {
        let mut o = Orchestrator::new(DefensePolicy::default());
        let a1 = o.on_verdict(S, Verdict::Confirmed, Origin::HoneyD(NodeId(5)), 4000);
        assert_eq!(a1.len(), 2);
        let a2 = o.on_verdict(S, Verdict::Confirmed, Origin::HoneyVm(1), 4200);
        assert!(a2.is_empty(), "second confirmation must not mutate topology");
        let redirects = o
            .events
            .iter()
            .filter(|e| e.kind == DefenseEventKind::RedirectInstalled)
            .count();
        assert_eq!(redirects, 1);
    }

    #[test]
    fn trap_blocks_immediately_and_fails_over() {
        let mut o = Orchestrator::new(DefensePolicy::default());
        o.on_verdict(S, Verdict::Confirmed, Origin::HoneyVm(1), 4000);
        let actions = o.on_trap(1, S, 5000);
        assert_eq!(
            actions,
            vec![DefenseAction::Failover { vm: 1 }, DefenseAction::BlockNow { source: S }]
        );
        o.note_failover_done(1, S, 5000);
        assert!(o.note_block_installed(S, 5000));
        assert_eq!(o.first_event(DefenseEventKind::FailoverDone, S), Some(5000));
        assert_eq!(o.first_event(DefenseEventKind::BlockInstalled, S), Some(5000));
        // scheduled block later finds the source already blocked
        let actions = o.on_block_due(S, 14_000);
        assert!(actions.is_empty());
        assert!(!o.note_block_installed(S, 14_000));
        let blocks = o
            .events
            .iter()
            .filter(|e| e.kind == DefenseEventKind::BlockInstalled)
            .count();
        assert_eq!(blocks, 1, "no duplicate block events");
    }

    #[test]
    fn ordering_checker_accepts_pipeline_and_rejects_inversions() {
        let o = Origin::HoneyD(NodeId(5));
        let good = vec![
            DefenseEvent { at: 1, kind: DefenseEventKind::SuspicionRaised, source: S, origin: o },
            DefenseEvent { at: 1, kind: DefenseEventKind::ChallengeIssued, source: S, origin: o },
            DefenseEvent { at: 3, kind: DefenseEventKind::Escalated, source: S, origin: o },
            DefenseEvent { at: 3, kind: DefenseEventKind::ChallengeIssued, source: S, origin: o },
            DefenseEvent { at: 5, kind: DefenseEventKind::Confirmed, source: S, origin: o },
            DefenseEvent { at: 5, kind: DefenseEventKind::RedirectInstalled, source: S, origin: Origin::Control },
            DefenseEvent { at: 15, kind: DefenseEventKind::BlockInstalled, source: S, origin: Origin::Control },
        ];
        assert!(check_event_ordering(&good).is_ok());

        let bad = vec![
            DefenseEvent { at: 1, kind: DefenseEventKind::ChallengeIssued, source: S, origin: o },
            DefenseEvent { at: 2, kind: DefenseEventKind::SuspicionRaised, source: S, origin: o },
        ];
        assert!(check_event_ordering(&bad).is_err());

        let bad2 = vec![
            DefenseEvent { at: 5, kind: DefenseEventKind::RedirectInstalled, source: S, origin: Origin::Control },
            DefenseEvent { at: 6, kind: DefenseEventKind::Confirmed, source: S, origin: o },
        ];
        assert!(check_event_ordering(&bad2).is_err());
    }
}
