//! Mobile IPv6 routing mechanisms as byte-exact packet pipelines.
//!
//! Four mechanisms are modeled: bidirectional tunneling through home agents,
//! route optimization with Home Address Option and Type 2 Routing headers,
//! tunneling-based route optimization (TRO), and improved TRO (ITRO), which
//! rewrites the base header's address fields and recovers home addresses
//! from the binding cache, adding no header bytes at all.
//!
//! [`simnet`] runs them over a deterministic discrete-event network and
//! [`metrics`] compares the measured overhead and delay with closed forms.

pub mod binding;
pub mod cli;
pub mod mechanisms;
pub mod metrics;
pub mod packet;
pub mod scenario;
pub mod simnet;

/// Simulated time in Internet-time units: one unit per Internet traversal.
pub type SimTime = u64;

pub use binding::{select_mechanism, BindingCache, BindingUpdate, Mechanism};
pub use mechanisms::{EndpointContext, UpperLayerPacket};
pub use packet::{decapsulate, encapsulate, Address, Packet, PacketError};
pub use scenario::ScenarioConfig;
pub use simnet::{build_world, TraceRecord, World};
