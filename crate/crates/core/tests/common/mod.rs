//! Helpers shared by the integration tests, including straight-line
//! reference implementations used as oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use anonboot::hostchain::{ChainConfig, HostChain};
use anonboot::pow::{pow_solve, PowParams};
use anonboot::pulse_state::PulseConfig;
use anonboot::wire::{
    encode_peer_advertisement, encode_service_request, Capabilities, ConnectorKey, Header, OpReturnScript,
    PeerAdvertisement, ServiceRequest,
};
use proptest::prelude::*;
use rand::Rng;
use sha2::{Digest, Sha256};

pub fn sha(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// Election seed computed straight from its definition.
pub fn oracle_seed(merkle_root: &[u8; 32], nonces: &[[u8; 8]]) -> [u8; 32] {
    let joined: Vec<u8> = nonces.iter().flatten().copied().collect();
    let mut outer = merkle_root.to_vec();
    outer.extend_from_slice(&sha(&joined));
    sha(&outer)
}

/// Fisher-Yates over `0..n` driven by SHA-256 in counter mode; returns the
/// first `k` indices.
pub fn oracle_committee(seed: &[u8; 32], n: usize, k: usize) -> Vec<usize> {
    let mut stream: Vec<u8> = Vec::new();
    let mut block = 0u64;
    let mut cursor = 0usize;
    let mut next = |stream: &mut Vec<u8>| -> u64 {
        if cursor + 8 > stream.len() {
            let mut input = seed.to_vec();
            input.extend_from_slice(&block.to_be_bytes());
            stream.extend_from_slice(&sha(&input));
            block += 1;
        }
        let v = u64::from_be_bytes(stream[cursor..cursor + 8].try_into().unwrap());
        cursor += 8;
        v
    };
    let mut items: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let range = i as u64 + 1;
        // largest multiple of range that is <= 2^64, minus one
        let rem = (u64::MAX % range + 1) % range;
        let j = loop {
            let x = next(&mut stream);
            if rem == 0 || x <= u64::MAX - rem {
                break x % range;
            }
        };
        items.swap(i, j as usize);
    }
    items.truncate(k);
    items
}

pub fn key(i: u32) -> ConnectorKey {
    let mut k = [0x5au8; 33];
    k[0] = 0x02 | (i & 1) as u8;
    k[1..5].copy_from_slice(&i.to_be_bytes());
    ConnectorKey(k)
}

pub fn advertisement(i: u32, service_id: u16, chain: &HostChain, pulse_height: u64, pow: &PowParams) -> OpReturnScript {
    let mut ad = PeerAdvertisement::new(
        key(i),
        format!("10.7.{}.{}:{}", (i >> 8) & 0xff, i & 0xff, 8000 + (i % 1000))
            .parse()
            .unwrap(),
        service_id,
        Capabilities::default(),
    );
    let hash = chain.get_block(pulse_height).unwrap().block_hash;
    ad.nonce = pow_solve(&ad.connector_key, &hash, pow, [0; 8], u64::MAX)
        .unwrap()
        .nonce;
    encode_peer_advertisement(&ad).unwrap()
}

pub fn request(service_id: u16, k: u16, nonce: [u8; 8]) -> OpReturnScript {
    encode_service_request(&ServiceRequest::new(service_id, Capabilities::for_committee(k), nonce)).unwrap()
}

/// A chain spanning several pulses with randomly churning peers, random
/// requests and random noise outside the negotiation windows.
pub fn random_chain<R: Rng>(rng: &mut R) -> (HostChain, PulseConfig) {
    let negotiation_length = rng.gen_range(1..=3);
    let pulse_length = negotiation_length + 2 + rng.gen_range(0..4);
    let config = PulseConfig {
        pulse_length,
        negotiation_length,
        pow: PowParams::new(rng.gen_range(0..=2)),
        service_ttl: rng.gen_range(1..=3),
    };
    let chain_config = ChainConfig::default();
    let mut chain = HostChain::new(rng.gen(), &chain_config);
    let mut queue = VecDeque::new();
    let pulses = rng.gen_range(1..=6u64);
    let population = rng.gen_range(3..=14u32);
    for p in 0..pulses {
        let pb = config.pulse_block_height(p);
        chain.mine_to(pb, &mut queue, &chain_config);
        for i in 0..population {
            if rng.gen_bool(0.7) {
                queue.push_back(advertisement(i, 1 + (i % 3) as u16, &chain, pb, &config.pow));
            }
        }
        for _ in 0..rng.gen_range(0..=3) {
            queue.push_back(request(rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen()));
        }
        let window_end = *config.negotiation_window(p).end();
        while chain.height() < window_end {
            chain.mine_block(&mut queue, &chain_config);
        }
        // noise in the spawn block
        if rng.gen_bool(0.5) {
            queue.push_back(advertisement(population + 1, 1, &chain, pb, &config.pow));
            queue.push_back(request(1, 1, rng.gen()));
        }
        chain.mine_to(config.spawn_block_height(p), &mut queue, &chain_config);
        queue.clear();
    }
    // sometimes leave a partial pulse at the tip
    let extra = rng.gen_range(0..config.pulse_length);
    chain.mine_to(chain.height() + extra, &mut queue, &chain_config);
    (chain, config)
}

pub fn arb_key() -> impl Strategy<Value = ConnectorKey> {
    (
        prop_oneof![Just(0x02u8), Just(0x03u8)],
        prop::array::uniform32(any::<u8>()),
    )
        .prop_map(|(prefix, rest)| {
            let mut k = [0u8; 33];
            k[0] = prefix;
            k[1..].copy_from_slice(&rest);
            ConnectorKey(k)
        })
}

pub fn arb_advertisement() -> impl Strategy<Value = PeerAdvertisement> {
    (
        (0u8..16, any::<bool>(), any::<bool>(), 0u8..64),
        arb_key(),
        prop::array::uniform16(any::<u8>()),
        any::<[u8; 4]>(),
        (any::<u16>(), any::<u16>()),
        any::<[u8; 14]>(),
        any::<[u8; 8]>(),
    )
        .prop_map(
            |((reserved, direct, ipv6, flags), connector_key, v6, v4, (port, service_id), caps, nonce)| {
                let address = if ipv6 {
                    v6
                } else {
                    std::net::Ipv4Addr::from(v4).to_ipv6_mapped().octets()
                };
                PeerAdvertisement {
                    header: Header { version: 1, reserved },
                    direct,
                    ipv6,
                    reserved_flags: flags,
                    connector_key,
                    address,
                    port,
                    service_id,
                    capabilities: Capabilities(caps),
                    nonce,
                }
            },
        )
}

pub fn arb_request() -> impl Strategy<Value = ServiceRequest> {
    (0u8..16, any::<u16>(), 1u16.., any::<[u8; 12]>(), any::<[u8; 8]>()).prop_map(
        |(reserved, service_id, k, rest, nonce)| {
            let mut caps = [0u8; 14];
            caps[..2].copy_from_slice(&k.to_be_bytes());
            caps[2..].copy_from_slice(&rest);
            ServiceRequest {
                header: Header { version: 1, reserved },
                service_id,
                capabilities: Capabilities(caps),
                nonce,
            }
        },
    )
}
