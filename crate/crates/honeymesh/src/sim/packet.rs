//! Simulated datagrams and the flat address space they travel in.

use serde::{Deserialize, Serialize};

use crate::traffic::AttackType;

/// Opaque endpoint identifier in a flat address space.
///
/// Addresses are totally ordered so that every per-address map in the
/// simulator iterates deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address(pub u32);

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "addr{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Icmp,
    Tcp,
    Udp,
}

/// Protocol-specific tag carried by a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    EchoRequest,
    EchoReply,
    Syn,
    SynAck,
    Data,
    Fragment,
    DestUnreachable,
    Challenge,
    ChallengeResponse,
}

impl PacketKind {
    /// Kinds that count as service requests for detection and service queues.
    /// Replies and the challenge control plane are excluded.
    pub fn is_request(self) -> bool {
        matches!(
            self,
            PacketKind::EchoRequest | PacketKind::Syn | PacketKind::Data | PacketKind::Fragment
        )
    }

    pub fn is_challenge_plane(self) -> bool {
        matches!(self, PacketKind::Challenge | PacketKind::ChallengeResponse)
    }
}

/// Fragment geometry; present iff `kind == Fragment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragInfo {
    pub offset: u32,
    pub length: u32,
}

impl FragInfo {
    pub fn overlaps(&self, other: &FragInfo) -> bool {
        self.offset < other.offset + other.length && other.offset < self.offset + self.length
    }
}

/// Challenge-response payload riding on `Challenge`/`ChallengeResponse` packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengePayload {
    pub id: u64,
    pub level: u8,
    pub nonce: u64,
}

/// A simulated datagram.
///
/// `src_claimed` is what the network and all defense logic see. The true
/// origin and the attack tag are ground truth: they are private and exposed
/// only through [`Packet::true_source`] / [`Packet::attack_tag`], which the
/// traffic oracle and the metrics layer alone may consult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub protocol: Protocol,
    pub kind: PacketKind,
    pub src_claimed: Address,
    src_actual: Address,
    pub dst: Address,
    pub size_bytes: u32,
    pub frag: Option<FragInfo>,
    attack_tag: Option<AttackType>,
    pub sent_at: u64,
    /// Request/flow correlation id so replies can be matched to requests.
    /// Plumbing only; never consulted by detection or defense logic.
    pub corr: Option<u64>,
    pub challenge: Option<ChallengePayload>,
}

impl Packet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        protocol: Protocol,
        kind: PacketKind,
        src_claimed: Address,
        src_actual: Address,
        dst: Address,
        size_bytes: u32,
        sent_at: u64,
    ) -> Self {
        Packet {
            id,
            protocol,
            kind,
            src_claimed,
            src_actual,
            dst,
            size_bytes,
            frag: None,
            attack_tag: None,
            sent_at,
            corr: None,
            challenge: None,
        }
    }

    pub fn with_frag(mut self, frag: FragInfo) -> Self {
        debug_assert_eq!(self.kind, PacketKind::Fragment);
        self.frag = Some(frag);
        self
    }

    pub fn with_attack_tag(mut self, tag: AttackType) -> Self {
        self.attack_tag = Some(tag);
        self
    }

    pub fn with_corr(mut self, corr: u64) -> Self {
        self.corr = Some(corr);
        self
    }

    pub fn with_challenge(mut self, payload: ChallengePayload) -> Self {
        self.challenge = Some(payload);
        self
    }

    /// Ground truth: the real origin address. Oracle/metrics use only.
    pub fn true_source(&self) -> Address {
        self.src_actual
    }

    /// Ground truth: the attack type that generated this packet, if any.
    /// Oracle/metrics use only.
    pub fn attack_tag(&self) -> Option<AttackType> {
        self.attack_tag
    }

    /// True when the claimed source differs from the real origin.
    /// Ground truth; used by traffic tests and metrics only.
    pub fn is_spoofed(&self) -> bool {
        self.src_claimed != self.src_actual
    }

    pub fn frag_ok(&self) -> bool {
        (self.kind == PacketKind::Fragment) == self.frag.is_some()
    }
}
