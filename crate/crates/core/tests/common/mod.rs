#![allow(dead_code)]

use mip6sim::binding::{BindingUpdate, Mechanism};
use mip6sim::packet::Address;
use mip6sim::scenario::{
    Action, NodeConfig, PayloadSize, Peering, Role, ScenarioConfig, SCHEMA_VERSION,
};
use mip6sim::simnet::World;
use mip6sim::Packet;
use proptest::prelude::*;
use rand::Rng;

pub const H_MN: &str = "2001:db8:1::10";
pub const H_CN: &str = "2001:db8:2::20";
pub const C_MN: &str = "2001:db8:a::10";
pub const C_CN: &str = "2001:db8:b::20";

pub fn addr(s: &str) -> Address {
    s.parse().unwrap()
}

pub fn arb_address() -> impl Strategy<Value = Address> {
    any::<u128>().prop_map(Address::from_bits)
}

fn arb_payload(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..=max)
}

fn arb_binding_update() -> impl Strategy<Value = BindingUpdate> {
    (
        arb_address(),
        arb_address(),
        any::<u32>(),
        any::<u16>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(hoa, coa, sequence, lifetime, rot0, rot1)| BindingUpdate {
            hoa,
            coa,
            sequence,
            lifetime,
            rot0,
            rot1,
        })
}

/// A non-tunnel packet with any extension headers, small enough to be
/// wrapped in one more base header under a 1500-byte MTU.
pub fn arb_inner_packet() -> impl Strategy<Value = Packet> {
    let body = prop_oneof![
        4 => arb_payload(1300).prop_map(Some),
        1 => Just(None),
    ];
    (
        arb_address(),
        arb_address(),
        any::<u8>(),
        prop::option::of(arb_address()),
        prop::option::of(arb_address()),
        body,
        arb_binding_update(),
    )
        .prop_map(|(src, dst, hop_limit, rh, hao, payload, bu)| {
            let mut p = match payload {
                Some(bytes) => Packet::new(src, dst, bytes),
                None => Packet::binding_update(src, dst, bu),
            };
            p.base.hop_limit = hop_limit;
            if let Some(a) = rh {
                p = p.with_type2_routing(a);
            }
            if let Some(a) = hao {
                p = p.with_home_address_option(a);
            }
            p
        })
}

/// Any encodable packet, including one level of tunneling.
pub fn arb_packet() -> impl Strategy<Value = Packet> {
    prop_oneof![
        3 => arb_inner_packet(),
        1 => (arb_inner_packet(), arb_address(), arb_address(), prop::option::of(arb_address()), prop::option::of(arb_address()))
            .prop_map(|(inner, src, dst, rh, hao)| {
                let mut p = mip6sim::encapsulate(inner, src, dst).unwrap();
                if let Some(a) = rh {
                    p = p.with_type2_routing(a);
                }
                if let Some(a) = hao {
                    p = p.with_home_address_option(a);
                }
                p
            }),
    ]
}

pub fn read_fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}.hex", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let hex: String = text.split_whitespace().collect();
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
        .collect()
}

pub const TRANSPARENCY_MTU: usize = 1600;
pub const MAX_TRANSPARENCY_PAYLOAD: usize = 1452;

/// A random multi-phase scenario.
///
/// Every endpoint announces itself at t=0. Each phase moves some mobiles at
/// `t0`, sends at `t0 + 2`, and the next phase starts at `t0 + 6`, after all
/// traffic of the phase has landed. Care-of addresses are never reused.
/// `mode` 0..=3 forces `Mechanism::ALL[mode]`; 4 mixes per-node flags.
pub fn random_scenario<R: Rng>(rng: &mut R, mode: usize) -> ScenarioConfig {
    let has = rng.random_range(1..=2usize);
    let endpoints = rng.random_range(2..=4usize);
    let mut nodes = Vec::new();
    for h in 0..has {
        nodes.push(NodeConfig {
            id: format!("ha{h}"),
            role: Role::HomeAgent,
            address: addr(&format!("2001:db8:{}::1", h + 1)),
            home_agent: None,
            location: None,
            rot1: false,
            rot0: false,
        });
    }
    for e in 0..endpoints {
        let mobile = e == 0 || rng.random_bool(0.75);
        let (rot1, rot0) = (rng.random_bool(0.5), rng.random_bool(0.5));
        let node = if mobile {
            let h = rng.random_range(0..has);
            NodeConfig {
                id: format!("n{e}"),
                role: Role::MobileNode,
                address: addr(&format!("2001:db8:{}::{:x}", h + 1, 0x10 + e)),
                home_agent: Some(format!("ha{h}")),
                location: None,
                rot1,
                rot0,
            }
        } else {
            NodeConfig {
                id: format!("n{e}"),
                role: Role::CorrespondentNode,
                address: addr(&format!("2001:db8:f0::{:x}", 0x10 + e)),
                home_agent: None,
                location: None,
                rot1,
                rot0,
            }
        };
        nodes.push(node);
    }
    let endpoint_nodes: Vec<NodeConfig> = nodes
        .iter()
        .filter(|n| n.role != Role::HomeAgent)
        .cloned()
        .collect();

    let mut peerings = Vec::new();
    for a in &endpoint_nodes {
        for b in &endpoint_nodes {
            if a.id != b.id {
                peerings.push(Peering {
                    node: a.id.clone(),
                    peer: b.address,
                });
            }
        }
    }

    let mut schedule: Vec<Action> = endpoint_nodes
        .iter()
        .map(|n| Action::BuRefresh {
            at: 0,
            node: n.id.clone(),
        })
        .collect();
    let phases = rng.random_range(1..=4u64);
    for phase in 0..phases {
        let t0 = 2 + 6 * phase;
        for (e, n) in endpoint_nodes.iter().enumerate() {
            if n.role != Role::MobileNode {
                continue;
            }
            let roll: f64 = rng.random();
            let to = if roll < 0.6 {
                addr(&format!("2001:db8:{:x}::{:x}", 0x100 + phase, 0x10 + e))
            } else if roll < 0.75 {
                n.address
            } else {
                continue;
            };
            schedule.push(Action::Move {
                at: t0,
                node: n.id.clone(),
                to,
            });
        }
        for _ in 0..rng.random_range(1..=3) {
            let src = rng.random_range(0..endpoint_nodes.len());
            let mut dst = rng.random_range(0..endpoint_nodes.len() - 1);
            if dst >= src {
                dst += 1;
            }
            schedule.push(Action::Send {
                at: t0 + 2,
                node: endpoint_nodes[src].id.clone(),
                to: endpoint_nodes[dst].address,
                payload: PayloadSize::Bytes(rng.random_range(0..=MAX_TRANSPARENCY_PAYLOAD)),
            });
        }
    }

    ScenarioConfig {
        version: SCHEMA_VERSION,
        mtu: TRANSPARENCY_MTU,
        seed: rng.random(),
        binding_lifetime: 600,
        horizon: 1000,
        mechanism: Mechanism::ALL.get(mode).copied(),
        compare: Vec::new(),
        nodes,
        peerings,
        schedule,
    }
}

/// Runs `config` and checks that every injected packet arrived unchanged
/// and nothing was dropped. Returns the mechanism of each delivery, or a
/// description of the first problem.
pub fn check_transparency(config: &ScenarioConfig) -> Result<Vec<Mechanism>, String> {
    let mut world = World::build(config).map_err(|e| format!("build: {e}"))?;
    world
        .run_until_quiescent(config.horizon)
        .map_err(|e| format!("run: {e}"))?;
    if world.total_drops() != 0 {
        return Err(format!("drops: {:?}", world.drops()));
    }
    if world.deliveries().len() != world.injected().len() {
        return Err(format!(
            "{} injected, {} delivered",
            world.injected().len(),
            world.deliveries().len()
        ));
    }
    for sent in world.injected() {
        let got = world
            .deliveries()
            .iter()
            .find(|d| d.ulp_id == sent.ulp_id)
            .ok_or_else(|| format!("ulp {} not delivered", sent.ulp_id))?;
        if got.ulp != sent.ulp {
            return Err(format!("ulp {} altered in transit", sent.ulp_id));
        }
    }
    Ok(world.deliveries().iter().map(|d| d.mechanism).collect())
}
