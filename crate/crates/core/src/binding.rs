//! Binding cache, Binding Update messages, and ROT flag negotiation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::Address;
use crate::SimTime;

/// The four routing mechanisms.
///
/// Ordered from least to most optimized within the route-optimization
/// family; negotiation between two peers picks the lower of the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    BidirectionalTunneling,
    RouteOptimization,
    Tro,
    Itro,
}

impl Mechanism {
    /// Comparison-table row order.
    pub const ALL: [Mechanism; 4] = [
        Mechanism::BidirectionalTunneling,
        Mechanism::RouteOptimization,
        Mechanism::Tro,
        Mechanism::Itro,
    ];

    pub const fn label(self) -> &'static str {
        match self {
            Mechanism::BidirectionalTunneling => "bidirectional-tunneling",
            Mechanism::RouteOptimization => "route-optimization",
            Mechanism::Tro => "tro",
            Mechanism::Itro => "itro",
        }
    }

    /// Flags advertised in Binding Updates. Bidirectional tunneling is not
    /// flag-negotiated and has none.
    pub const fn rot_flags(self) -> Option<RotFlags> {
        match self {
            Mechanism::BidirectionalTunneling => None,
            Mechanism::RouteOptimization => Some(RotFlags {
                rot1: false,
                rot0: false,
            }),
            Mechanism::Tro => Some(RotFlags {
                rot1: false,
                rot0: true,
            }),
            Mechanism::Itro => Some(RotFlags {
                rot1: true,
                rot0: true,
            }),
        }
    }

    /// Mobility bytes added on each hop that carries them when both
    /// endpoints are away from home.
    pub const fn per_hop_overhead(self) -> usize {
        match self {
            Mechanism::BidirectionalTunneling | Mechanism::Tro => crate::packet::BASE_HEADER_LEN,
            Mechanism::RouteOptimization => 2 * crate::packet::EXTENSION_HEADER_LEN,
            Mechanism::Itro => 0,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown mechanism {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RotFlags {
    pub rot1: bool,
    pub rot0: bool,
}

impl RotFlags {
    pub fn mechanism(self) -> Mechanism {
        select_mechanism(self.rot1, self.rot0)
    }
}

/// Maps ROT1/ROT0 to a mechanism. ROT0 is ignored once ROT1 is set.
pub fn select_mechanism(rot1: bool, rot0: bool) -> Mechanism {
    match (rot1, rot0) {
        (false, false) => Mechanism::RouteOptimization,
        (false, true) => Mechanism::Tro,
        (true, _) => Mechanism::Itro,
    }
}

/// A Binding Update message body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindingUpdate {
    pub hoa: Address,
    pub coa: Address,
    pub sequence: u32,
    /// Zero deregisters the binding.
    pub lifetime: u16,
    pub rot0: bool,
    pub rot1: bool,
}

impl BindingUpdate {
    pub const BODY_LEN: usize = 40;

    const FLAG_ROT0: u8 = 0b01;
    const FLAG_ROT1: u8 = 0b10;

    pub fn flags(&self) -> RotFlags {
        RotFlags {
            rot1: self.rot1,
            rot0: self.rot0,
        }
    }

    pub fn encode_body(&self) -> [u8; Self::BODY_LEN] {
        let mut out = [0u8; Self::BODY_LEN];
        out[0..16].copy_from_slice(&self.hoa.octets());
        out[16..32].copy_from_slice(&self.coa.octets());
        out[32..36].copy_from_slice(&self.sequence.to_be_bytes());
        out[36..38].copy_from_slice(&self.lifetime.to_be_bytes());
        let mut flags = 0;
        if self.rot0 {
            flags |= Self::FLAG_ROT0;
        }
        if self.rot1 {
            flags |= Self::FLAG_ROT1;
        }
        out[38] = flags;
        out
    }

    /// Caller guarantees `bytes.len() >= BODY_LEN`.
    pub(crate) fn decode_body(bytes: &[u8]) -> Self {
        let mut hoa = [0u8; 16];
        let mut coa = [0u8; 16];
        hoa.copy_from_slice(&bytes[0..16]);
        coa.copy_from_slice(&bytes[16..32]);
        BindingUpdate {
            hoa: Address::from_bits(u128::from_be_bytes(hoa)),
            coa: Address::from_bits(u128::from_be_bytes(coa)),
            sequence: u32::from_be_bytes([bytes[32], bytes[33], bytes[34], bytes[35]]),
            lifetime: u16::from_be_bytes([bytes[36], bytes[37]]),
            rot0: bytes[38] & Self::FLAG_ROT0 != 0,
            rot1: bytes[38] & Self::FLAG_ROT1 != 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindingEntry {
    pub hoa: Address,
    pub coa: Address,
    /// The entry is live strictly before this time.
    pub expires_at: SimTime,
    pub sequence: u32,
    pub rot0: bool,
    pub rot1: bool,
}

impl BindingEntry {
    pub fn is_live(&self, now: SimTime) -> bool {
        now < self.expires_at
    }

    pub fn lifetime_remaining(&self, now: SimTime) -> SimTime {
        self.expires_at.saturating_sub(now)
    }

    pub fn flags(&self) -> RotFlags {
        RotFlags {
            rot1: self.rot1,
            rot0: self.rot0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("stale binding update for {hoa}: sequence {received} < {current}")]
    StaleSequence {
        hoa: Address,
        received: u32,
        current: u32,
    },
    #[error("care-of address {0} is bound to more than one home address")]
    AmbiguousCoa(Address),
    #[error("binding update carries the unspecified address as home address")]
    UnspecifiedHomeAddress,
}

/// Result of a binding update that was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Created,
    Updated,
    Deregistered,
    /// The update was applied, but `coa` is now claimed by another live
    /// home address as well. Reverse lookups on `coa` will fail until one
    /// of the bindings changes.
    Collision {
        coa: Address,
        other_hoa: Address,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BindingCache {
    entries: BTreeMap<Address, BindingEntry>,
    // survives deregistration so replays stay stale
    last_sequence: BTreeMap<Address, u32>,
}

impl BindingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(
        &mut self,
        bu: &BindingUpdate,
        now: SimTime,
    ) -> Result<UpdateOutcome, BindingError> {
        if bu.hoa.is_unspecified() {
            return Err(BindingError::UnspecifiedHomeAddress);
        }
        if let Some(&current) = self.last_sequence.get(&bu.hoa) {
            if bu.sequence < current {
                return Err(BindingError::StaleSequence {
                    hoa: bu.hoa,
                    received: bu.sequence,
                    current,
                });
            }
        }
        self.last_sequence.insert(bu.hoa, bu.sequence);

        if bu.lifetime == 0 {
            self.entries.remove(&bu.hoa);
            return Ok(UpdateOutcome::Deregistered);
        }

        let entry = BindingEntry {
            hoa: bu.hoa,
            coa: bu.coa,
            expires_at: now + SimTime::from(bu.lifetime),
            sequence: bu.sequence,
            rot0: bu.rot0,
            rot1: bu.rot1,
        };
        let previous = self.entries.insert(bu.hoa, entry);

        let clash = self
            .entries
            .values()
            .find(|e| e.hoa != bu.hoa && e.coa == bu.coa && e.is_live(now));
        Ok(match (clash, previous) {
            (Some(other), _) => UpdateOutcome::Collision {
                coa: bu.coa,
                other_hoa: other.hoa,
            },
            (None, Some(_)) => UpdateOutcome::Updated,
            (None, None) => UpdateOutcome::Created,
        })
    }

    pub fn lookup(&self, hoa: Address, now: SimTime) -> Option<&BindingEntry> {
        self.entries.get(&hoa).filter(|e| e.is_live(now))
    }

    pub fn lookup_coa(&self, hoa: Address, now: SimTime) -> Option<Address> {
        self.lookup(hoa, now).map(|e| e.coa)
    }

    /// Finds the home address currently bound to `coa`.
    pub fn reverse_lookup_hoa(
        &self,
        coa: Address,
        now: SimTime,
    ) -> Result<Option<Address>, BindingError> {
        let mut matches = self
            .entries
            .values()
            .filter(|e| e.coa == coa && e.is_live(now));
        match (matches.next(), matches.next()) {
            (None, _) => Ok(None),
            (Some(entry), None) => Ok(Some(entry.hoa)),
            (Some(_), Some(_)) => Err(BindingError::AmbiguousCoa(coa)),
        }
    }

    /// True if some care-of address is bound by more than one live entry.
    pub fn is_degraded(&self, now: SimTime) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.entries
            .values()
            .filter(|e| e.is_live(now))
            .any(|e| !seen.insert(e.coa))
    }

    /// Drops the entry for `hoa` if it has expired. Returns whether one was removed.
    pub fn remove_if_expired(&mut self, hoa: Address, now: SimTime) -> bool {
        match self.entries.get(&hoa) {
            Some(entry) if !entry.is_live(now) => {
                self.entries.remove(&hoa);
                true
            }
            _ => false,
        }
    }

    pub fn evict_expired(&mut self, now: SimTime) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.is_live(now));
        before - self.entries.len()
    }

    pub fn live_entries(&self, now: SimTime) -> impl Iterator<Item = &BindingEntry> {
        self.entries.values().filter(move |e| e.is_live(now))
    }

    pub fn last_sequence(&self, hoa: Address) -> Option<u32> {
        self.last_sequence.get(&hoa).copied()
    }
}
