//! Deterministic discrete-event engine and network model.

pub mod event;
pub mod packet;
pub mod topology;

pub use event::{DetectorSite, Event, EventPayload, Runtime, ScheduleError, SimClock, TimerTag};
pub use packet::{Address, ChallengePayload, FragInfo, Packet, PacketKind, Protocol};
pub use topology::{
    FilterDecision, FirewallRuleSet, LinkState, NodeId, NodeKind, RoutingTable, Topology,
    TopologyError,
};
