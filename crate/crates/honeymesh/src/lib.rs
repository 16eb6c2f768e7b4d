//! Deterministic discrete-event simulation of a honeypot-mesh DDoS defense.
//!
//! The library models a production network behind a two-firewall DMZ, a farm
//! of virtual honeypots with standby failover, in-server honeypot daemons,
//! behavioral baseline detection with two-level challenge-response
//! confirmation, and router-redirect plus firewall-block mitigation. The
//! [`harness`] module loads scenario configs, runs them, and emits metrics
//! reports and replayable traces; the `honeymesh` binary is a thin CLI over
//! it.

pub mod control;
pub mod detection;
pub mod harness;
pub mod honeyfarm;
pub mod seed;
pub mod sim;
pub mod traffic;
pub mod victim;
