//! Packet model and the fixed-size wire codec.
//!
//! Header sizes follow the overhead accounting used throughout the crate,
//! not the RFC encodings:
//!
//! ```text
//! base header (40 B)
//!   [source 16][destination 16][payload_length 2][next_header 1][hop_limit 1][reserved 4]
//! extension header (24 B, Type 2 Routing or Home Address Option)
//!   [next_header 1][length 1][address 16][padding 6]
//! binding update body (40 B)
//!   [home address 16][care-of address 16][sequence 4][lifetime 2][flags 1][reserved 1]
//! ```
//!
//! All multi-byte integers are big-endian. Extension headers always appear in
//! the order Type 2 Routing, then Home Address Option. The `length` byte of an
//! extension header holds the header size in 8-octet units minus one (2).
//!
//! The intra-header layout is a convention of this crate; only the total
//! sizes are load-bearing.

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binding::BindingUpdate;

/// Size of an IPv6 base header, and therefore of one tunnel header.
pub const BASE_HEADER_LEN: usize = 40;
/// Size of a Type 2 Routing header or a Home Address Option header.
pub const EXTENSION_HEADER_LEN: usize = 24;
/// Ethernet MTU, the default packet size budget.
pub const DEFAULT_MTU: usize = 1500;
pub const DEFAULT_HOP_LIMIT: u8 = 64;

const EXTENSION_LENGTH_FIELD: u8 = (EXTENSION_HEADER_LEN / 8 - 1) as u8;

/// A 128-bit IPv6 address, used for both home and care-of addresses.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(Ipv6Addr);

impl Address {
    pub const UNSPECIFIED: Address = Address(Ipv6Addr::UNSPECIFIED);

    pub const fn new(addr: Ipv6Addr) -> Self {
        Address(addr)
    }

    pub const fn from_bits(bits: u128) -> Self {
        Address(Ipv6Addr::from_bits(bits))
    }

    pub const fn to_bits(self) -> u128 {
        self.0.to_bits()
    }

    pub const fn octets(self) -> [u8; 16] {
        self.0.octets()
    }

    pub fn is_unspecified(self) -> bool {
        self.0.is_unspecified()
    }

    fn read(bytes: &[u8]) -> Self {
        let mut octets = [0u8; 16];
        octets.copy_from_slice(&bytes[..16]);
        Address(Ipv6Addr::from(octets))
    }
}

impl From<Ipv6Addr> for Address {
    fn from(addr: Ipv6Addr) -> Self {
        Address(addr)
    }
}

impl From<Address> for Ipv6Addr {
    fn from(addr: Address) -> Self {
        addr.0
    }
}

impl FromStr for Address {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Ipv6Addr>().map(Address)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Header-kind tags carried in `next_header` fields.
#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeaderKind {
    /// An IPv6 header. As a `next_header` value it marks an encapsulated packet.
    Ipv6 = 41,
    Type2Routing = 43,
    HomeAddressOption = 60,
    BindingUpdate = 135,
    /// Opaque upper-layer bytes.
    Payload = 253,
}

impl TryFrom<u8> for HeaderKind {
    type Error = PacketError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            41 => Ok(HeaderKind::Ipv6),
            43 => Ok(HeaderKind::Type2Routing),
            60 => Ok(HeaderKind::HomeAddressOption),
            135 => Ok(HeaderKind::BindingUpdate),
            253 => Ok(HeaderKind::Payload),
            other => Err(PacketError::UnknownHeaderKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("encoded packet is {size} bytes, exceeding the {mtu}-byte MTU")]
    Oversize { size: usize, mtu: usize },
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown header kind {0}")]
    UnknownHeaderKind(u8),
    #[error("header kind {0:?} is not valid at this position")]
    UnexpectedHeader(HeaderKind),
    #[error("payload_length field says {declared} bytes but {actual} follow the base header")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("extension header length field is {0}, expected {EXTENSION_LENGTH_FIELD}")]
    BadExtensionLength(u8),
    #[error("tunnel packets cannot be nested")]
    NestingViolation,
    #[error("packet does not carry an encapsulated packet")]
    NotATunnel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseHeader {
    pub source: Address,
    pub destination: Address,
    pub hop_limit: u8,
}

impl BaseHeader {
    pub fn new(source: Address, destination: Address) -> Self {
        BaseHeader {
            source,
            destination,
            hop_limit: DEFAULT_HOP_LIMIT,
        }
    }
}

/// Carries the sender's home address while it is away from home.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HomeAddressOption {
    pub home_address: Address,
}

/// Carries the receiver's home address when the destination field holds its
/// care-of address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Type2RoutingHeader {
    pub home_address: Address,
}

/// What follows the base header and any extension headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Payload(Vec<u8>),
    Tunnel(Box<Packet>),
    BindingUpdate(BindingUpdate),
}

impl Body {
    fn kind(&self) -> HeaderKind {
        match self {
            Body::Payload(_) => HeaderKind::Payload,
            Body::Tunnel(_) => HeaderKind::Ipv6,
            Body::BindingUpdate(_) => HeaderKind::BindingUpdate,
        }
    }

    fn wire_size(&self) -> usize {
        match self {
            Body::Payload(bytes) => bytes.len(),
            Body::Tunnel(inner) => inner.wire_size(),
            Body::BindingUpdate(_) => BindingUpdate::BODY_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub base: BaseHeader,
    pub type2_routing: Option<Type2RoutingHeader>,
    pub home_address_option: Option<HomeAddressOption>,
    pub body: Body,
}

impl Packet {
    /// A plain packet: base header plus opaque payload.
    pub fn new(source: Address, destination: Address, payload: Vec<u8>) -> Self {
        Packet {
            base: BaseHeader::new(source, destination),
            type2_routing: None,
            home_address_option: None,
            body: Body::Payload(payload),
        }
    }

    pub fn binding_update(source: Address, destination: Address, bu: BindingUpdate) -> Self {
        Packet {
            base: BaseHeader::new(source, destination),
            type2_routing: None,
            home_address_option: None,
            body: Body::BindingUpdate(bu),
        }
    }

    pub fn with_home_address_option(mut self, home_address: Address) -> Self {
        self.home_address_option = Some(HomeAddressOption { home_address });
        self
    }

    pub fn with_type2_routing(mut self, home_address: Address) -> Self {
        self.type2_routing = Some(Type2RoutingHeader { home_address });
        self
    }

    pub fn source(&self) -> Address {
        self.base.source
    }

    pub fn destination(&self) -> Address {
        self.base.destination
    }

    pub fn inner(&self) -> Option<&Packet> {
        match &self.body {
            Body::Tunnel(inner) => Some(inner),
            _ => None,
        }
    }

    pub fn payload(&self) -> Option<&[u8]> {
        match &self.body {
            Body::Payload(bytes) => Some(bytes),
            _ => None,
        }
    }

    pub fn is_tunnel(&self) -> bool {
        matches!(self.body, Body::Tunnel(_))
    }

    pub fn has_extension_headers(&self) -> bool {
        self.type2_routing.is_some() || self.home_address_option.is_some()
    }

    /// Number of extension headers on this packet (not counting any inner packet).
    pub fn extension_count(&self) -> usize {
        usize::from(self.type2_routing.is_some()) + usize::from(self.home_address_option.is_some())
    }

    /// Value of the base header's `next_header` field.
    pub fn next_header(&self) -> HeaderKind {
        if self.type2_routing.is_some() {
            HeaderKind::Type2Routing
        } else if self.home_address_option.is_some() {
            HeaderKind::HomeAddressOption
        } else {
            self.body.kind()
        }
    }

    /// Value of the base header's `payload_length` field.
    pub fn payload_length(&self) -> usize {
        self.wire_size() - BASE_HEADER_LEN
    }

    /// Encoded length, computed without encoding.
    pub fn wire_size(&self) -> usize {
        BASE_HEADER_LEN + EXTENSION_HEADER_LEN * self.extension_count() + self.body.wire_size()
    }

    /// Every header on the wire in encoding order, inner packet included.
    pub fn header_kinds(&self) -> Vec<HeaderKind> {
        let mut kinds = Vec::with_capacity(4);
        self.collect_header_kinds(&mut kinds);
        kinds
    }

    fn collect_header_kinds(&self, kinds: &mut Vec<HeaderKind>) {
        kinds.push(HeaderKind::Ipv6);
        if self.type2_routing.is_some() {
            kinds.push(HeaderKind::Type2Routing);
        }
        if self.home_address_option.is_some() {
            kinds.push(HeaderKind::HomeAddressOption);
        }
        match &self.body {
            Body::Payload(_) => {}
            Body::Tunnel(inner) => inner.collect_header_kinds(kinds),
            Body::BindingUpdate(_) => kinds.push(HeaderKind::BindingUpdate),
        }
    }

    /// Encodes against the default 1500-byte MTU.
    pub fn encode(&self) -> Result<Vec<u8>, PacketError> {
        self.encode_with_mtu(DEFAULT_MTU)
    }

    pub fn encode_with_mtu(&self, mtu: usize) -> Result<Vec<u8>, PacketError> {
        let size = self.wire_size();
        if size > mtu {
            return Err(PacketError::Oversize { size, mtu });
        }
        if let Some(inner) = self.inner() {
            if inner.is_tunnel() {
                return Err(PacketError::NestingViolation);
            }
        }
        let mut out = Vec::with_capacity(size);
        self.write(&mut out);
        debug_assert_eq!(out.len(), size);
        Ok(out)
    }

    fn write(&self, out: &mut Vec<u8>) {
        let payload_length =
            u16::try_from(self.payload_length()).expect("payload length bounded by MTU check");
        out.extend_from_slice(&self.base.source.octets());
        out.extend_from_slice(&self.base.destination.octets());
        out.extend_from_slice(&payload_length.to_be_bytes());
        out.push(self.next_header() as u8);
        out.push(self.base.hop_limit);
        out.extend_from_slice(&[0; 4]);

        if let Some(rh) = &self.type2_routing {
            let next = if self.home_address_option.is_some() {
                HeaderKind::HomeAddressOption
            } else {
                self.body.kind()
            };
            write_extension(out, next, rh.home_address);
        }
        if let Some(hao) = &self.home_address_option {
            write_extension(out, self.body.kind(), hao.home_address);
        }

        match &self.body {
            Body::Payload(bytes) => out.extend_from_slice(bytes),
            Body::Tunnel(inner) => inner.write(out),
            Body::BindingUpdate(bu) => out.extend_from_slice(&bu.encode_body()),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Packet, PacketError> {
        Self::decode_at_depth(bytes, 0)
    }

    fn decode_at_depth(bytes: &[u8], depth: usize) -> Result<Packet, PacketError> {
        if bytes.len() < BASE_HEADER_LEN {
            return Err(PacketError::Truncated {
                needed: BASE_HEADER_LEN,
                available: bytes.len(),
            });
        }
        let source = Address::read(&bytes[0..16]);
        let destination = Address::read(&bytes[16..32]);
        let declared = usize::from(u16::from_be_bytes([bytes[32], bytes[33]]));
        let mut next = HeaderKind::try_from(bytes[34])?;
        let hop_limit = bytes[35];

        let rest = &bytes[BASE_HEADER_LEN..];
        if declared != rest.len() {
            return Err(PacketError::LengthMismatch {
                declared,
                actual: rest.len(),
            });
        }

        let mut cursor = 0;
        let mut type2_routing = None;
        let mut home_address_option = None;

        if next == HeaderKind::Type2Routing {
            let (following, home_address) = read_extension(&rest[cursor..])?;
            type2_routing = Some(Type2RoutingHeader { home_address });
            cursor += EXTENSION_HEADER_LEN;
            next = following;
        }
        if next == HeaderKind::HomeAddressOption {
            let (following, home_address) = read_extension(&rest[cursor..])?;
            home_address_option = Some(HomeAddressOption { home_address });
            cursor += EXTENSION_HEADER_LEN;
            next = following;
        }

        let remaining = &rest[cursor..];
        let body = match next {
            HeaderKind::Payload => Body::Payload(remaining.to_vec()),
            HeaderKind::Ipv6 => {
                if depth > 0 {
                    return Err(PacketError::NestingViolation);
                }
                Body::Tunnel(Box::new(Self::decode_at_depth(remaining, depth + 1)?))
            }
            HeaderKind::BindingUpdate => {
                if remaining.len() < BindingUpdate::BODY_LEN {
                    return Err(PacketError::Truncated {
                        needed: BindingUpdate::BODY_LEN,
                        available: remaining.len(),
                    });
                }
                if remaining.len() > BindingUpdate::BODY_LEN {
                    return Err(PacketError::LengthMismatch {
                        declared,
                        actual: cursor + BindingUpdate::BODY_LEN,
                    });
                }
                Body::BindingUpdate(BindingUpdate::decode_body(remaining))
            }
            other @ (HeaderKind::Type2Routing | HeaderKind::HomeAddressOption) => {
                return Err(PacketError::UnexpectedHeader(other));
            }
        };

        Ok(Packet {
            base: BaseHeader {
                source,
                destination,
                hop_limit,
            },
            type2_routing,
            home_address_option,
            body,
        })
    }
}

fn write_extension(out: &mut Vec<u8>, next: HeaderKind, address: Address) {
    out.push(next as u8);
    out.push(EXTENSION_LENGTH_FIELD);
    out.extend_from_slice(&address.octets());
    out.extend_from_slice(&[0; 6]);
}

fn read_extension(bytes: &[u8]) -> Result<(HeaderKind, Address), PacketError> {
    if bytes.len() < EXTENSION_HEADER_LEN {
        return Err(PacketError::Truncated {
            needed: EXTENSION_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let next = HeaderKind::try_from(bytes[0])?;
    if bytes[1] != EXTENSION_LENGTH_FIELD {
        return Err(PacketError::BadExtensionLength(bytes[1]));
    }
    Ok((next, Address::read(&bytes[2..18])))
}

/// Wraps `inner` in a new base header addressed `outer_src -> outer_dst`.
pub fn encapsulate(
    inner: Packet,
    outer_src: Address,
    outer_dst: Address,
) -> Result<Packet, PacketError> {
    if inner.is_tunnel() {
        return Err(PacketError::NestingViolation);
    }
    Ok(Packet {
        base: BaseHeader::new(outer_src, outer_dst),
        type2_routing: None,
        home_address_option: None,
        body: Body::Tunnel(Box::new(inner)),
    })
}

/// Strips the outer header of a tunnel packet.
pub fn decapsulate(packet: Packet) -> Result<Packet, PacketError> {
    match packet.body {
        Body::Tunnel(inner) => Ok(*inner),
        _ => Err(PacketError::NotATunnel),
    }
}
