//! Outbound and inbound packet pipelines for each routing mechanism.
//!
//! Upper layers only ever see home addresses. Outbound functions turn an
//! [`UpperLayerPacket`] into the packet put on the wire; inbound functions
//! undo that at the receiver. All of them are pure over their inputs and a
//! binding-cache snapshot.

use thiserror::Error;

use crate::binding::{BindingCache, BindingError, Mechanism};
use crate::packet::{decapsulate, encapsulate, Address, Body, Packet, PacketError};
use crate::SimTime;

/// A packet as the transport layer hands it down: home addresses only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpperLayerPacket {
    pub src_hoa: Address,
    pub dst_hoa: Address,
    pub payload: Vec<u8>,
}

impl UpperLayerPacket {
    pub fn new(src_hoa: Address, dst_hoa: Address, payload: Vec<u8>) -> Self {
        UpperLayerPacket {
            src_hoa,
            dst_hoa,
            payload,
        }
    }

    /// Size of the packet the upper layer would send with no mobility support.
    pub fn original_size(&self) -> usize {
        crate::packet::BASE_HEADER_LEN + self.payload.len()
    }

    fn plain(&self) -> Packet {
        Packet::new(self.src_hoa, self.dst_hoa, self.payload.clone())
    }
}

/// What the tunnel manager of one endpoint knows about itself.
#[derive(Debug, Clone, Copy)]
pub struct EndpointContext<'a> {
    pub hoa: Address,
    pub coa: Address,
    /// Address of this node's home agent, if it is mobile.
    pub home_agent: Option<Address>,
    pub cache: &'a BindingCache,
    /// The mechanism this node is configured for.
    pub mechanism: Mechanism,
}

impl EndpointContext<'_> {
    pub fn at_home(&self) -> bool {
        self.hoa == self.coa
    }

    /// Mechanism to use toward `peer`: the lower of our own configuration and
    /// what the peer advertised in its last Binding Update. Without a live
    /// binding the route-optimization path is used.
    pub fn mechanism_for(&self, peer: Address, now: SimTime) -> Mechanism {
        if self.mechanism == Mechanism::BidirectionalTunneling {
            return Mechanism::BidirectionalTunneling;
        }
        match self.cache.lookup(peer, now) {
            Some(entry) => self.mechanism.min(entry.flags().mechanism()),
            None => Mechanism::RouteOptimization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("no binding for sender care-of address {0}")]
    UnknownSender(Address),
    #[error(transparent)]
    Binding(#[from] BindingError),
    #[error("packet for {found} delivered to node with home address {expected}")]
    Misdelivery { expected: Address, found: Address },
    #[error("no registration for home address {0}")]
    NoBinding(Address),
    #[error("mobile node away from home has no home agent")]
    NoHomeAgent,
    #[error("expected a data packet")]
    NotData,
    #[error(transparent)]
    Packet(#[from] PacketError),
}

fn tunnel(inner: Packet, src: Address, dst: Address) -> Packet {
    encapsulate(inner, src, dst).expect("plain inner packet")
}

fn check_sender(ulp: &UpperLayerPacket, ctx: &EndpointContext<'_>) {
    debug_assert_eq!(
        ulp.src_hoa, ctx.hoa,
        "upper-layer source must be our home address"
    );
}

/// Improved TRO: rewrite both address fields, add nothing.
///
/// Falls back to [`ro_outbound`] when the peer's care-of address is unknown.
pub fn itro_outbound(ulp: &UpperLayerPacket, ctx: &EndpointContext<'_>, now: SimTime) -> Packet {
    check_sender(ulp, ctx);
    match ctx.cache.lookup_coa(ulp.dst_hoa, now) {
        Some(peer_coa) => Packet::new(ctx.coa, peer_coa, ulp.payload.clone()),
        None => ro_outbound(ulp, ctx, now),
    }
}

/// Undoes [`itro_outbound`]: destination back to our home address, source
/// recovered from the binding cache by care-of address.
pub fn itro_inbound(
    wire: &Packet,
    ctx: &EndpointContext<'_>,
    now: SimTime,
) -> Result<UpperLayerPacket, RoutingError> {
    if wire.destination() != ctx.coa {
        return Err(RoutingError::Misdelivery {
            expected: ctx.coa,
            found: wire.destination(),
        });
    }
    let payload = match &wire.body {
        Body::Payload(bytes) if !wire.has_extension_headers() => bytes.clone(),
        _ => return Err(RoutingError::NotData),
    };
    let src_hoa = ctx
        .cache
        .reverse_lookup_hoa(wire.source(), now)?
        .ok_or(RoutingError::UnknownSender(wire.source()))?;
    Ok(UpperLayerPacket {
        src_hoa,
        dst_hoa: ctx.hoa,
        payload,
    })
}

/// Standard route optimization: Home Address Option while we are away,
/// Type 2 Routing header when the destination is a care-of address.
pub fn ro_outbound(ulp: &UpperLayerPacket, ctx: &EndpointContext<'_>, now: SimTime) -> Packet {
    check_sender(ulp, ctx);
    let dst = ctx
        .cache
        .lookup_coa(ulp.dst_hoa, now)
        .unwrap_or(ulp.dst_hoa);
    let mut packet = Packet::new(ctx.coa, dst, ulp.payload.clone());
    if dst != ulp.dst_hoa {
        packet = packet.with_type2_routing(ulp.dst_hoa);
    }
    if !ctx.at_home() {
        packet = packet.with_home_address_option(ctx.hoa);
    }
    packet
}

pub fn ro_inbound(
    wire: &Packet,
    ctx: &EndpointContext<'_>,
) -> Result<UpperLayerPacket, RoutingError> {
    let dst = wire.destination();
    if dst != ctx.coa && dst != ctx.hoa {
        return Err(RoutingError::Misdelivery {
            expected: ctx.hoa,
            found: dst,
        });
    }
    let payload = wire.payload().ok_or(RoutingError::NotData)?.to_vec();
    let dst_hoa = match wire.type2_routing {
        Some(rh) if rh.home_address != ctx.hoa => {
            return Err(RoutingError::Misdelivery {
                expected: ctx.hoa,
                found: rh.home_address,
            })
        }
        Some(rh) => rh.home_address,
        None => dst,
    };
    let src_hoa = wire
        .home_address_option
        .map_or(wire.source(), |hao| hao.home_address);
    Ok(UpperLayerPacket {
        src_hoa,
        dst_hoa,
        payload,
    })
}

/// Tunneling-based route optimization: CoA-to-CoA tunnel around the
/// untouched HoA-to-HoA packet.
pub fn tro_outbound(ulp: &UpperLayerPacket, ctx: &EndpointContext<'_>, now: SimTime) -> Packet {
    check_sender(ulp, ctx);
    match ctx.cache.lookup_coa(ulp.dst_hoa, now) {
        Some(peer_coa) => tunnel(ulp.plain(), ctx.coa, peer_coa),
        None => ro_outbound(ulp, ctx, now),
    }
}

pub fn tro_inbound(
    wire: &Packet,
    ctx: &EndpointContext<'_>,
) -> Result<UpperLayerPacket, RoutingError> {
    detunnel(wire, ctx)
}

/// Reverse tunnel to our home agent. At home the packet goes out untouched.
pub fn bt_outbound(
    ulp: &UpperLayerPacket,
    ctx: &EndpointContext<'_>,
) -> Result<Packet, RoutingError> {
    check_sender(ulp, ctx);
    if ctx.at_home() {
        return Ok(ulp.plain());
    }
    let ha = ctx.home_agent.ok_or(RoutingError::NoHomeAgent)?;
    Ok(tunnel(ulp.plain(), ctx.coa, ha))
}

pub fn bt_inbound(
    wire: &Packet,
    ctx: &EndpointContext<'_>,
) -> Result<UpperLayerPacket, RoutingError> {
    detunnel(wire, ctx)
}

fn detunnel(wire: &Packet, ctx: &EndpointContext<'_>) -> Result<UpperLayerPacket, RoutingError> {
    let inner = wire.inner().ok_or(PacketError::NotATunnel)?;
    if wire.destination() != ctx.coa {
        return Err(RoutingError::Misdelivery {
            expected: ctx.coa,
            found: wire.destination(),
        });
    }
    // A home agent may have intercepted a route-optimization packet.
    if inner.has_extension_headers() {
        return ro_inbound(inner, ctx);
    }
    if inner.destination() != ctx.hoa {
        return Err(RoutingError::Misdelivery {
            expected: ctx.hoa,
            found: inner.destination(),
        });
    }
    Ok(UpperLayerPacket {
        src_hoa: inner.source(),
        dst_hoa: inner.destination(),
        payload: inner.payload().ok_or(RoutingError::NotData)?.to_vec(),
    })
}

/// Home agent handling of a data packet.
///
/// A reverse-tunnel packet addressed to the home agent is decapsulated and
/// the inner packet forwarded as-is, unless its destination is also
/// registered here, in which case it goes straight into the forward tunnel.
/// Any other packet is an interception for a registered home address and is
/// tunneled to the registered care-of address.
pub fn ha_forward(
    wire: Packet,
    ha_address: Address,
    registrations: &BindingCache,
    now: SimTime,
) -> Result<Packet, RoutingError> {
    if wire.is_tunnel() && wire.destination() == ha_address {
        let inner = decapsulate(wire)?;
        return Ok(match registrations.lookup_coa(inner.destination(), now) {
            Some(coa) => encapsulate(inner, ha_address, coa)?,
            None => inner,
        });
    }
    let hoa = wire.destination();
    let coa = registrations
        .lookup_coa(hoa, now)
        .ok_or(RoutingError::NoBinding(hoa))?;
    Ok(encapsulate(wire, ha_address, coa)?)
}

/// Runs the outbound pipeline the sender would pick toward `ulp.dst_hoa`.
/// Returns the wire packet and the mechanism that actually shaped it
/// (fallbacks report [`Mechanism::RouteOptimization`]).
pub fn outbound(
    ulp: &UpperLayerPacket,
    ctx: &EndpointContext<'_>,
    now: SimTime,
) -> Result<(Packet, Mechanism), RoutingError> {
    let mechanism = ctx.mechanism_for(ulp.dst_hoa, now);
    let packet = match mechanism {
        Mechanism::BidirectionalTunneling => bt_outbound(ulp, ctx)?,
        Mechanism::RouteOptimization => ro_outbound(ulp, ctx, now),
        Mechanism::Tro => tro_outbound(ulp, ctx, now),
        Mechanism::Itro => itro_outbound(ulp, ctx, now),
    };
    Ok((packet, mechanism))
}

/// Receive-side dispatch on packet shape.
///
/// Tunnels are decapsulated; extension headers mean route optimization; a
/// bare packet addressed to our care-of address is an address-rewritten
/// packet when we run the improved mechanism, plain IPv6 otherwise.
pub fn inbound(
    wire: &Packet,
    ctx: &EndpointContext<'_>,
    now: SimTime,
) -> Result<UpperLayerPacket, RoutingError> {
    match &wire.body {
        Body::Tunnel(_) => detunnel(wire, ctx),
        Body::BindingUpdate(_) => Err(RoutingError::NotData),
        Body::Payload(_) if wire.has_extension_headers() => ro_inbound(wire, ctx),
        Body::Payload(_) if ctx.mechanism == Mechanism::Itro && wire.destination() == ctx.coa => {
            itro_inbound(wire, ctx, now)
        }
        Body::Payload(_) => ro_inbound(wire, ctx),
    }
}
