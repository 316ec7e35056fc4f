//! Scenario files: topology, peerings, and a timed event schedule.
//!
//! Scenarios are TOML. A minimal file:
//!
//! ```toml
//! version = 1
//! mtu = 1500
//! mechanism = "itro"
//!
//! [[nodes]]
//! id = "ha-mn"
//! role = "home-agent"
//! address = "2001:db8:1::1"
//!
//! [[nodes]]
//! id = "mn"
//! role = "mobile"
//! address = "2001:db8:1::10"
//! home_agent = "ha-mn"
//!
//! [[schedule]]
//! at = 0
//! action = "move"
//! node = "mn"
//! to = "2001:db8:a::10"
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binding::{Mechanism, RotFlags};
use crate::packet::{Address, BASE_HEADER_LEN, DEFAULT_MTU, EXTENSION_HEADER_LEN};
use crate::SimTime;

pub const SCHEMA_VERSION: u32 = 1;
/// A base header plus both extension headers.
pub const MIN_MTU: usize = BASE_HEADER_LEN + 2 * EXTENSION_HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    #[serde(rename = "mobile")]
    MobileNode,
    #[serde(rename = "correspondent")]
    CorrespondentNode,
    HomeAgent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub role: Role,
    /// Home address for endpoints; the agent's own address for home agents.
    pub address: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_agent: Option<String>,
    /// Care-of address at start. Absent means at home.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Address>,
    #[serde(default)]
    pub rot1: bool,
    #[serde(default)]
    pub rot0: bool,
}

impl NodeConfig {
    pub fn flags(&self) -> RotFlags {
        RotFlags {
            rot1: self.rot1,
            rot0: self.rot0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peering {
    pub node: String,
    pub peer: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// As many payload bytes as fit in one MTU under the run's mechanism.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadSize {
    Bytes(usize),
    Fill(Fill),
}

impl PayloadSize {
    pub fn resolve(self, mechanism: Mechanism, mtu: usize) -> usize {
        match self {
            PayloadSize::Bytes(n) => n,
            PayloadSize::Fill(Fill::Full) => mtu
                .saturating_sub(BASE_HEADER_LEN)
                .saturating_sub(mechanism.per_hop_overhead()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Action {
    Move {
        at: SimTime,
        node: String,
        to: Address,
    },
    Send {
        at: SimTime,
        node: String,
        to: Address,
        payload: PayloadSize,
    },
    BuRefresh {
        at: SimTime,
        node: String,
    },
}

impl Action {
    pub fn at(&self) -> SimTime {
        match self {
            Action::Move { at, .. } | Action::Send { at, .. } | Action::BuRefresh { at, .. } => *at,
        }
    }

    pub fn node(&self) -> &str {
        match self {
            Action::Move { node, .. }
            | Action::Send { node, .. }
            | Action::BuRefresh { node, .. } => node,
        }
    }
}

fn default_mtu() -> usize {
    DEFAULT_MTU
}

fn default_lifetime() -> u16 {
    600
}

fn default_horizon() -> SimTime {
    100_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default = "default_mtu")]
    pub mtu: usize,
    /// Seeds payload contents.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lifetime")]
    pub binding_lifetime: u16,
    #[serde(default = "default_horizon")]
    pub horizon: SimTime,
    /// Overrides every endpoint's flags, or selects bidirectional tunneling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<Mechanism>,
    /// Run the scenario once per listed mechanism.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<Mechanism>,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub peerings: Vec<Peering>,
    #[serde(default)]
    pub schedule: Vec<Action>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|span| line_column(text, span.start))
                .unwrap_or((1, 1));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// One config per run: expands `compare` into single-mechanism configs.
    pub fn variants(&self) -> Vec<ScenarioConfig> {
        if self.compare.is_empty() {
            return vec![self.clone()];
        }
        self.compare
            .iter()
            .map(|&m| ScenarioConfig {
                mechanism: Some(m),
                compare: Vec::new(),
                ..self.clone()
            })
            .collect()
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Mechanism an endpoint runs under this config.
    pub fn endpoint_mechanism(&self, node: &NodeConfig) -> Mechanism {
        self.mechanism.unwrap_or_else(|| node.flags().mechanism())
    }

    /// All validation findings; empty means the scenario is runnable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |code: &'static str, field: String, message: String| {
            out.push(Diagnostic {
                code,
                field,
                message,
            });
        };

        if self.version != SCHEMA_VERSION {
            push(
                "unsupported-version",
                "version".into(),
                format!("expected {SCHEMA_VERSION}, found {}", self.version),
            );
        }
        if self.mtu < MIN_MTU {
            push(
                "mtu-too-small",
                "mtu".into(),
                format!("{} is below the minimum of {MIN_MTU}", self.mtu),
            );
        }
        if self.mtu > usize::from(u16::MAX) {
            push(
                "mtu-too-large",
                "mtu".into(),
                format!("{} exceeds {}", self.mtu, u16::MAX),
            );
        }
        if self.binding_lifetime == 0 {
            push(
                "invalid-lifetime",
                "binding_lifetime".into(),
                "must be positive".into(),
            );
        }
        if self.mechanism.is_some() && !self.compare.is_empty() {
            push(
                "conflicting-mechanism",
                "compare".into(),
                "`mechanism` and `compare` are mutually exclusive".into(),
            );
        }
        let mut seen_compare = HashSet::new();
        for (i, m) in self.compare.iter().enumerate() {
            if !seen_compare.insert(*m) {
                push(
                    "duplicate-mechanism",
                    format!("compare[{i}]"),
                    format!("{m} listed twice"),
                );
            }
        }

        let mut by_id: HashMap<&str, &NodeConfig> = HashMap::new();
        let mut addresses: HashMap<Address, String> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.is_empty() {
                push(
                    "empty-id",
                    format!("nodes[{i}].id"),
                    "node id is empty".into(),
                );
            }
            if by_id.insert(&node.id, node).is_some() {
                push(
                    "duplicate-id",
                    format!("nodes[{i}].id"),
                    format!("node id {:?} used twice", node.id),
                );
            }
            for (what, a) in std::iter::once(("address", node.address))
                .chain(node.location.map(|l| ("location", l)))
            {
                if a.is_unspecified() {
                    push(
                        "unspecified-address",
                        format!("nodes[{i}].{what}"),
                        "the unspecified address is not allowed".into(),
                    );
                } else if let Some(owner) = addresses.insert(a, node.id.clone()) {
                    push(
                        "duplicate-address",
                        format!("nodes[{i}].{what}"),
                        format!("{a} already used by {owner:?}"),
                    );
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            match node.role {
                Role::HomeAgent => {
                    if node.home_agent.is_some()
                        || node.location.is_some()
                        || node.rot0
                        || node.rot1
                    {
                        push(
                            "invalid-home-agent",
                            format!("nodes[{i}]"),
                            "home agents take no home_agent, location or rot flags".into(),
                        );
                    }
                }
                Role::MobileNode | Role::CorrespondentNode => {
                    match &node.home_agent {
                        None if node.role == Role::MobileNode => push(
                            "missing-home-agent",
                            format!("nodes[{i}].home_agent"),
                            format!("mobile node {:?} needs a home agent", node.id),
                        ),
                        None => {}
                        Some(ha) => match by_id.get(ha.as_str()) {
                            None => push(
                                "dangling-home-agent",
                                format!("nodes[{i}].home_agent"),
                                format!("unknown node id {ha:?}"),
                            ),
                            Some(target) if target.role != Role::HomeAgent => push(
                                "not-a-home-agent",
                                format!("nodes[{i}].home_agent"),
                                format!("{ha:?} is not a home agent"),
                            ),
                            Some(_) => {}
                        },
                    }
                    if node.location.is_some() && node.home_agent.is_none() {
                        push(
                            "stationary-location",
                            format!("nodes[{i}].location"),
                            "nodes without a home agent cannot start away from home".into(),
                        );
                    }
                }
            }
        }

        let endpoint_hoas: HashMap<Address, &NodeConfig> = self
            .nodes
            .iter()
            .filter(|n| n.role != Role::HomeAgent)
            .map(|n| (n.address, n))
            .collect();
        let endpoint = |id: &str| by_id.get(id).filter(|n| n.role != Role::HomeAgent).copied();

        for (i, p) in self.peerings.iter().enumerate() {
            match endpoint(&p.node) {
                None => push(
                    "unknown-node",
                    format!("peerings[{i}].node"),
                    format!("no endpoint {:?}", p.node),
                ),
                Some(n) if n.address == p.peer => push(
                    "self-peering",
                    format!("peerings[{i}].peer"),
                    "a node cannot peer with itself".into(),
                ),
                Some(_) => {}
            }
            if !endpoint_hoas.contains_key(&p.peer) {
                push(
                    "unknown-peer",
                    format!("peerings[{i}].peer"),
                    format!("{} is not the home address of any endpoint", p.peer),
                );
            }
        }

        let mut move_targets: HashMap<Address, &str> = HashMap::new();
        for (i, action) in self.schedule.iter().enumerate() {
            let Some(node) = endpoint(action.node()) else {
                push(
                    "unknown-node",
                    format!("schedule[{i}].node"),
                    format!("no endpoint {:?}", action.node()),
                );
                continue;
            };
            match action {
                Action::Move { to, .. } => {
                    if node.home_agent.is_none() {
                        push(
                            "not-mobile",
                            format!("schedule[{i}].node"),
                            format!("{:?} has no home agent and cannot move", node.id),
                        );
                    }
                    if *to != node.address {
                        if let Some(owner) = addresses.get(to) {
                            if owner != &node.id {
                                push(
                                    "address-in-use",
                                    format!("schedule[{i}].to"),
                                    format!("{to} belongs to {owner:?}"),
                                );
                            }
                        }
                        if let Some(other) = move_targets.insert(*to, &node.id) {
                            if other != node.id {
                                push(
                                    "address-in-use",
                                    format!("schedule[{i}].to"),
                                    format!("{to} is also a care-of address of {other:?}"),
                                );
                            }
                        }
                    }
                    if to.is_unspecified() {
                        push(
                            "unspecified-address",
                            format!("schedule[{i}].to"),
                            "the unspecified address is not allowed".into(),
                        );
                    }
                }
                Action::Send { to, payload, .. } => {
                    if !endpoint_hoas.contains_key(to) {
                        push(
                            "unknown-destination",
                            format!("schedule[{i}].to"),
                            format!("{to} is not the home address of any endpoint"),
                        );
                    } else if *to == node.address {
                        push(
                            "self-send",
                            format!("schedule[{i}].to"),
                            "a node cannot send to itself".into(),
                        );
                    }
                    if let PayloadSize::Bytes(n) = payload {
                        if n + BASE_HEADER_LEN > self.mtu {
                            push(
                                "payload-too-large",
                                format!("schedule[{i}].payload"),
                                format!(
                                    "{n} bytes plus a base header exceed the {}-byte MTU",
                                    self.mtu
                                ),
                            );
                        }
                    }
                }
                Action::BuRefresh { .. } => {}
            }
            if action.at() > self.horizon {
                push(
                    "beyond-horizon",
                    format!("schedule[{i}].at"),
                    format!("{} is after the horizon {}", action.at(), self.horizon),
                );
            }
        }

        out
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |nl| before.len() - nl - 1)
        + 1;
    (line, column)
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: &'static str,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.code, self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} validation error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
version = 1
mechanism = "itro"

[[nodes]]
id = "ha-mn"
role = "home-agent"
address = "2001:db8:1::1"

[[nodes]]
id = "ha-cn"
role = "home-agent"
address = "2001:db8:2::1"

[[nodes]]
id = "mn"
role = "mobile"
address = "2001:db8:1::10"
home_agent = "ha-mn"

[[nodes]]
id = "cn"
role = "mobile"
address = "2001:db8:2::20"
home_agent = "ha-cn"

[[peerings]]
node = "mn"
peer = "2001:db8:2::20"

[[schedule]]
at = 0
action = "move"
node = "mn"
to = "2001:db8:a::10"

[[schedule]]
at = 2
action = "send"
node = "mn"
to = "2001:db8:2::20"
payload = "full"

[[schedule]]
at = 3
action = "send"
node = "mn"
to = "2001:db8:2::20"
payload = 12

[[schedule]]
at = 4
action = "bu-refresh"
node = "cn"
"#;

    fn codes(cfg: &ScenarioConfig) -> Vec<&'static str> {
        cfg.validate().into_iter().map(|d| d.code).collect()
    }

    #[test]
    fn parses_and_validates() {
        let cfg = ScenarioConfig::parse(VALID).unwrap();
        assert_eq!(cfg.mtu, 1500);
        assert_eq!(cfg.nodes.len(), 4);
        assert_eq!(cfg.schedule.len(), 4);
        assert_eq!(
            cfg.schedule[1],
            Action::Send {
                at: 2,
                node: "mn".into(),
                to: "2001:db8:2::20".parse().unwrap(),
                payload: PayloadSize::Fill(Fill::Full)
            }
        );
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::parse(VALID).unwrap();
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parse_error_has_position() {
        let err = ScenarioConfig::parse("version = 1\nmtu = \n").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id() {
        let mut cfg = ScenarioConfig::parse(VALID).unwrap();
        cfg.nodes[3].id = "mn".into();
        assert!(codes(&cfg).contains(&"duplicate-id"));
    }

    #[test]
    fn dangling_home_agent() {
        let mut cfg = ScenarioConfig::parse(VALID).unwrap();
        cfg.nodes[2].home_agent = Some("ha-nowhere".into());
        assert_eq!(codes(&cfg), vec!["dangling-home-agent"]);
    }

    #[test]
    fn small_mtu() {
        let mut cfg = ScenarioConfig::parse(VALID).unwrap();
        cfg.mtu = 50;
        assert!(codes(&cfg).contains(&"mtu-too-small"));
        cfg.mtu = 88;
        assert!(!codes(&cfg).contains(&"mtu-too-small"));
    }

    #[test]
    fn move_into_someone_elses_address() {
        let mut cfg = ScenarioConfig::parse(VALID).unwrap();
        cfg.schedule.push(Action::Move {
            at: 5,
            node: "cn".into(),
            to: "2001:db8:a::10".parse().unwrap(),
        });
        assert_eq!(codes(&cfg), vec!["address-in-use"]);
    }

    #[test]
    fn variants_expand_compare() {
        let mut cfg = ScenarioConfig::parse(VALID).unwrap();
        cfg.mechanism = None;
        cfg.compare = Mechanism::ALL.to_vec();
        let runs = cfg.variants();
        assert_eq!(runs.len(), 4);
        assert_eq!(runs[0].mechanism, Some(Mechanism::BidirectionalTunneling));
        assert!(runs.iter().all(|r| r.compare.is_empty()));
    }

    #[test]
    fn full_payload_resolution() {
        let full = PayloadSize::Fill(Fill::Full);
        assert_eq!(full.resolve(Mechanism::BidirectionalTunneling, 1500), 1420);
        assert_eq!(full.resolve(Mechanism::RouteOptimization, 1500), 1412);
        assert_eq!(full.resolve(Mechanism::Tro, 1500), 1420);
        assert_eq!(full.resolve(Mechanism::Itro, 1500), 1460);
    }
}
