//! Scenario configuration: strict TOML schema, cross-reference validation,
//! and the canonical DMZ topology the runner builds from it.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::honeyfarm::{Interaction, ServiceKind};
use crate::traffic::AttackType;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Required: there is no wall-clock fallback, runs must be reproducible.
    pub seed: Option<u64>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub trace: String,
    pub report_json: String,
    pub report_csv: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            trace: "trace.jsonl".into(),
            report_json: "report.json".into(),
            report_csv: "report.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub external_latency_ms: u64,
    pub external_bandwidth_pkts_per_ms: f64,
    pub dmz_latency_ms: u64,
    pub dmz_bandwidth_pkts_per_ms: f64,
    pub farm_latency_ms: u64,
    pub farm_bandwidth_pkts_per_ms: f64,
    pub queue_cap: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            external_latency_ms: 5,
            external_bandwidth_pkts_per_ms: 10.0,
            dmz_latency_ms: 2,
            dmz_bandwidth_pkts_per_ms: 10.0,
            farm_latency_ms: 2,
            farm_bandwidth_pkts_per_ms: 5.0,
            queue_cap: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub name: String,
    pub service: ServiceKind,
    #[serde(default = "d_service_rate")]
    pub service_rate_pkts_per_ms: f64,
    #[serde(default = "d_queue_cap")]
    pub queue_cap: usize,
    #[serde(default = "d_backlog_cap")]
    pub syn_backlog_cap: usize,
    #[serde(default = "d_halfopen_timeout")]
    pub syn_halfopen_timeout_ms: u64,
    #[serde(default = "d_reassembly_max")]
    pub reassembly_max_bytes: u32,
    #[serde(default)]
    pub vulnerable_to: Vec<AttackType>,
    #[serde(default = "d_reboot_time")]
    pub reboot_time_ms: u64,
}

fn d_service_rate() -> f64 {
    0.1
}
fn d_queue_cap() -> usize {
    200
}
fn d_backlog_cap() -> usize {
    64
}
fn d_halfopen_timeout() -> u64 {
    3000
}
fn d_reassembly_max() -> u32 {
    65_535
}
fn d_reboot_time() -> u64 {
    60_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub clients: Vec<String>,
    #[serde(default)]
    pub attack_agents: Vec<String>,
    #[serde(default)]
    pub handlers: Vec<String>,
    pub routers: Vec<String>,
    #[serde(default = "d_ext_fw")]
    pub external_firewall: String,
    #[serde(default = "d_int_fw")]
    pub internal_firewall: String,
    #[serde(default = "d_farm_host")]
    pub farm_host: String,
    #[serde(default)]
    pub links: LinkSection,
    pub servers: Vec<ServerSection>,
}

fn d_ext_fw() -> String {
    "fw-ext".into()
}
fn d_int_fw() -> String {
    "fw-int".into()
}
fn d_farm_host() -> String {
    "farm".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegitSection {
    pub clients: Vec<String>,
    pub target: String,
    pub request_rate_per_client: f64,
    #[serde(default = "d_size_mean")]
    pub request_size_mean: f64,
    #[serde(default = "d_size_stddev")]
    pub request_size_stddev: f64,
    #[serde(default = "d_answer")]
    pub answer_challenges: f64,
}

fn d_size_mean() -> f64 {
    500.0
}
fn d_size_stddev() -> f64 {
    200.0
}
fn d_answer() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub attack: AttackType,
    pub agents: Vec<String>,
    #[serde(default)]
    pub spoof_pool: Vec<String>,
    pub target: String,
    pub rate_pkts_per_ms: f64,
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default)]
    pub p_bot_l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub warmup_n: usize,
    pub suspicion_threshold: f64,
    pub challenge_timeout_ms: u64,
    pub z_cap: f64,
    pub idle_evict_ms: u64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection {
            warmup_n: 2000,
            suspicion_threshold: 0.5,
            challenge_timeout_ms: 2000,
            z_cap: 6.0,
            idle_evict_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub farm_enabled: bool,
    pub honeyd_enabled: bool,
    pub engagement_window_ms: u64,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection { farm_enabled: true, honeyd_enabled: true, engagement_window_ms: 10_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmProfileSection {
    pub mimics: ServiceKind,
    #[serde(default = "d_interaction")]
    pub interaction: Interaction,
    pub exposed_vulns: Vec<AttackType>,
    #[serde(default = "d_engage_latency")]
    pub engage_reply_latency_ms: u64,
    #[serde(default = "d_standby")]
    pub standby: usize,
}

fn d_interaction() -> Interaction {
    Interaction::High
}
fn d_engage_latency() -> u64 {
    5
}
fn d_standby() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmSection {
    #[serde(default = "d_restore_delay")]
    pub restore_delay_ms: u64,
    pub profiles: Vec<FarmProfileSection>,
}

fn d_restore_delay() -> u64 {
    30_000
}

/// A full scenario: everything a run needs, seed included.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub legit: Vec<LegitSection>,
    #[serde(default)]
    pub attack: Vec<AttackSection>,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub defense: DefenseSection,
    pub farm: FarmSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), err: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Validation(msg));
        if self.run.seed.is_none() {
            return fail("run.seed is required; runs must be reproducible".into());
        }
        if self.run.duration_ms == 0 {
            return fail("run.duration_ms must be positive".into());
        }

        // node names must be unique across every role
        let mut names: BTreeSet<&str> = BTreeSet::new();
        let t = &self.topology;
        let all_names = t
            .clients
            .iter()
            .chain(&t.attack_agents)
            .chain(&t.handlers)
            .chain(&t.routers)
            .chain(t.servers.iter().map(|s| &s.name))
            .chain([&t.external_firewall, &t.internal_firewall, &t.farm_host]);
        for n in all_names {
            if !names.insert(n.as_str()) {
                return fail(format!("node name '{n}' is used more than once"));
            }
        }
        if t.routers.is_empty() {
            return fail("topology needs at least one router".into());
        }
        if t.servers.is_empty() {
            return fail("topology needs at least one production server".into());
        }
        for s in &t.servers {
            if s.service_rate_pkts_per_ms <= 0.0 || s.queue_cap == 0 || s.syn_backlog_cap == 0 {
                return fail(format!("server '{}': rates and caps must be positive", s.name));
            }
            for v in &s.vulnerable_to {
                if v.class() != crate::traffic::AttackClass::Crash {
                    return fail(format!("server '{}': {v} is not a crash-class vulnerability", s.name));
                }
            }
        }

        let server_names: BTreeSet<&str> = t.servers.iter().map(|s| s.name.as_str()).collect();
        let client_names: BTreeSet<&str> = t.clients.iter().map(|s| s.as_str()).collect();
        let agent_names: BTreeSet<&str> = t.attack_agents.iter().map(|s| s.as_str()).collect();

        for (i, l) in self.legit.iter().enumerate() {
            if l.clients.is_empty() {
                return fail(format!("legit[{i}]: needs at least one client"));
            }
            for c in &l.clients {
                if !client_names.contains(c.as_str()) {
                    return fail(format!("legit[{i}]: unknown client '{c}'"));
                }
            }
            if !server_names.contains(l.target.as_str()) {
                return fail(format!("legit[{i}]: unknown target server '{}'", l.target));
            }
            if l.request_rate_per_client <= 0.0 || l.request_size_mean <= 0.0 {
                return fail(format!("legit[{i}]: rates and sizes must be positive"));
            }
            if !(0.0..=1.0).contains(&l.answer_challenges) {
                return fail(format!("legit[{i}]: answer_challenges must be in [0,1]"));
            }
        }

        for (i, a) in self.attack.iter().enumerate() {
            if a.agents.is_empty() {
                return fail(format!("attack[{i}]: needs at least one agent"));
            }
            for ag in &a.agents {
                if !agent_names.contains(ag.as_str()) {
                    return fail(format!("attack[{i}]: unknown agent '{ag}'"));
                }
            }
            if !server_names.contains(a.target.as_str()) {
                return fail(format!("attack[{i}]: unknown target server '{}'", a.target));
            }
            if a.start_ms >= a.end_ms {
                return fail(format!("attack[{i}]: start_ms must precede end_ms"));
            }
            if a.end_ms > self.run.duration_ms {
                return fail(format!("attack[{i}]: window extends past run duration"));
            }
            if a.rate_pkts_per_ms <= 0.0 {
                return fail(format!("attack[{i}]: rate must be positive"));
            }
            if a.attack.requires_spoof_pool() && a.spoof_pool.is_empty() {
                return fail(format!("attack[{i}]: {} requires a spoof_pool", a.attack));
            }
            for sp in &a.spoof_pool {
                if names.contains(sp.as_str()) {
                    return fail(format!(
                        "attack[{i}]: spoof_pool entry '{sp}' collides with a topology node; forged addresses must be outside the topology"
                    ));
                }
            }
            if !(0.0..=1.0).contains(&a.p_bot_l1) {
                return fail(format!("attack[{i}]: p_bot_l1 must be in [0,1]"));
            }
        }

        // one honey profile per production service kind present
        let kinds: BTreeSet<ServiceKind> = t.servers.iter().map(|s| s.service).collect();
        for kind in &kinds {
            let n = self.farm.profiles.iter().filter(|p| p.mimics == *kind).count();
            if n != 1 {
                return fail(format!(
                    "farm must define exactly one profile mimicking {kind:?} (found {n})"
                ));
            }
        }
        for (i, p) in self.farm.profiles.iter().enumerate() {
            if p.exposed_vulns.is_empty() {
                return fail(format!("farm.profiles[{i}]: exposed_vulns must not be empty"));
            }
            for v in &p.exposed_vulns {
                if v.class() != crate::traffic::AttackClass::Crash {
                    return fail(format!("farm.profiles[{i}]: {v} is not crash-class"));
                }
            }
        }

        // detection feeds on legit baselines: every server targeted by an
        // attack or protected by the defense needs warmup traffic
        if self.defense.honeyd_enabled || self.defense.farm_enabled {
            for s in &t.servers {
                let covered = self.legit.iter().any(|l| l.target == s.name);
                if !covered {
                    return fail(format!(
                        "server '{}' has no legit profile to train its baseline on",
                        s.name
                    ));
                }
            }
        }
        if self.detection.warmup_n == 0
            || !(0.0..=1.0).contains(&self.detection.suspicion_threshold)
            || self.detection.suspicion_threshold == 0.0
            || self.detection.z_cap <= 0.0
        {
            return fail("detection: warmup_n and z_cap must be positive, threshold in (0,1]".into());
        }
        Ok(())
    }
}
