//! Request aggregation, seed derivation and deterministic peer election.
//!
//! Requests for the same service id form one class. A class's seed is
//! `SHA-256(spawn_merkle_root || SHA-256(nonce_1 || ... || nonce_m))` with the
//! nonces in chain order. The seed drives a SHA-256 counter-mode [`Prng`]
//! which Fisher-Yates shuffles the eligible peers (kept in canonical
//! repository order); the first `k` shuffled peers form the committee, in
//! cascade order.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::hash::{sha256, Hash256};
use crate::hostchain::{extract_entropy, Block};
use crate::pulse_state::{PeerRecord, Position};
use crate::wire::{Capabilities, ServiceRequest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("service {service_id}: {eligible} eligible peers, {requested} requested")]
    Unserved {
        service_id: u16,
        eligible: usize,
        requested: usize,
    },
    #[error("only {found} of {requested} reachable eligible peers")]
    Exhausted { requested: usize, found: usize },
}

/// Deterministic byte stream: block `j` is `SHA-256(seed || j)` with `j` as a
/// big-endian u64. Integers are read as big-endian u64 chunks.
#[derive(Debug, Clone)]
pub struct Prng {
    seed: Hash256,
    counter: u64,
    block: [u8; 32],
    offset: usize,
}

impl Prng {
    pub fn new(seed: Hash256) -> Self {
        Prng {
            seed,
            counter: 0,
            block: [0; 32],
            offset: 32,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        if self.offset == 32 {
            self.block = sha256(&[&self.seed.0, &self.counter.to_be_bytes()]).0;
            self.counter += 1;
            self.offset = 0;
        }
        let mut chunk = [0u8; 8];
        chunk.copy_from_slice(&self.block[self.offset..self.offset + 8]);
        self.offset += 8;
        u64::from_be_bytes(chunk)
    }

    /// Uniform integer in `[0, n)`: chunks at or above the largest multiple
    /// of `n` not exceeding 2^64 are discarded.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = accept_zone(n);
        loop {
            let x = self.next_u64();
            if (x as u128) < zone {
                return x % n;
            }
        }
    }
}

/// `floor(2^64 / n) * n`.
pub(crate) fn accept_zone(n: u64) -> u128 {
    let space = 1u128 << 64;
    space - space % n as u128
}

/// Fisher-Yates from the last index down, drawing `j` in `[0, i]`.
pub fn shuffle<T>(items: &mut [T], prng: &mut Prng) {
    for i in (1..items.len()).rev() {
        let j = prng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElectionSeed(pub Hash256);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestClass {
    pub service_id: u16,
    /// Chain order.
    pub requests: Vec<ServiceRequest>,
    pub merged_capabilities: Capabilities,
}

impl RequestClass {
    pub fn committee_size(&self) -> usize {
        self.merged_capabilities.committee_size() as usize
    }
}

/// Groups requests by service id, ascending, merging capabilities by
/// element-wise maximum.
pub fn aggregate_requests(requests: &[ServiceRequest]) -> Vec<RequestClass> {
    let mut classes: BTreeMap<u16, RequestClass> = BTreeMap::new();
    for req in requests {
        classes
            .entry(req.service_id)
            .and_modify(|c| {
                c.merged_capabilities = c.merged_capabilities.merge(&req.capabilities);
                c.requests.push(req.clone());
            })
            .or_insert_with(|| RequestClass {
                service_id: req.service_id,
                requests: vec![req.clone()],
                merged_capabilities: req.capabilities,
            });
    }
    classes.into_values().collect()
}

pub fn derive_seed(spawn_block: &Block, class: &RequestClass) -> ElectionSeed {
    derive_seed_from_entropy(
        &extract_entropy(spawn_block),
        class.requests.iter().map(|r| &r.nonce[..]),
    )
}

pub fn derive_seed_from_entropy<'a>(entropy: &Hash256, nonces: impl IntoIterator<Item = &'a [u8]>) -> ElectionSeed {
    let parts: Vec<&[u8]> = nonces.into_iter().collect();
    let nonce_digest = sha256(&parts);
    ElectionSeed(sha256(&[&entropy.0, &nonce_digest.0]))
}

/// Compatibility between advertised and requested capabilities.
pub trait CapabilityMatcher {
    fn satisfies(&self, offered: &Capabilities, required: &Capabilities) -> bool;
}

/// Element-wise `>=` over capability bytes 2..14.
#[derive(Debug, Default, Clone, Copy)]
pub struct AtLeastMatcher;

impl CapabilityMatcher for AtLeastMatcher {
    fn satisfies(&self, offered: &Capabilities, required: &Capabilities) -> bool {
        offered.satisfies(required)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceInstance {
    pub service_id: u16,
    pub merged_capabilities: Capabilities,
    /// Cascade order.
    pub peers: Vec<PeerRecord>,
    pub spawned_pulse: u64,
    pub ttl_remaining: u32,
}

impl ServiceInstance {
    /// Whether two instances resulted from the same election: same class,
    /// same pulse and byte-identical member advertisements in the same order.
    /// TTL and peer statistics are local bookkeeping and ignored.
    pub fn same_election(&self, other: &ServiceInstance) -> bool {
        self.service_id == other.service_id
            && self.merged_capabilities == other.merged_capabilities
            && self.spawned_pulse == other.spawned_pulse
            && self.peers.len() == other.peers.len()
            && self
                .peers
                .iter()
                .zip(&other.peers)
                .all(|(a, b)| a.position == b.position && a.advertisement == b.advertisement)
    }

    pub fn positions(&self) -> Vec<Position> {
        self.peers.iter().map(|p| p.position).collect()
    }

    /// Cascade position of the peer with `key`, if elected.
    pub fn cascade_position(&self, key: &crate::wire::ConnectorKey) -> Option<usize> {
        self.peers.iter().position(|p| &p.advertisement.connector_key == key)
    }
}

pub fn elect(
    repository: &[PeerRecord],
    class: &RequestClass,
    seed: &ElectionSeed,
    spawned_pulse: u64,
    ttl: u32,
) -> Result<ServiceInstance, ElectionError> {
    elect_with(&AtLeastMatcher, repository, class, seed, spawned_pulse, ttl)
}

pub fn elect_with(
    matcher: &dyn CapabilityMatcher,
    repository: &[PeerRecord],
    class: &RequestClass,
    seed: &ElectionSeed,
    spawned_pulse: u64,
    ttl: u32,
) -> Result<ServiceInstance, ElectionError> {
    let mut eligible: Vec<&PeerRecord> = repository
        .iter()
        .filter(|p| {
            p.advertisement.service_id == class.service_id
                && matcher.satisfies(&p.advertisement.capabilities, &class.merged_capabilities)
        })
        .collect();
    let k = class.committee_size();
    if eligible.len() < k {
        return Err(ElectionError::Unserved {
            service_id: class.service_id,
            eligible: eligible.len(),
            requested: k,
        });
    }
    shuffle(&mut eligible, &mut Prng::new(seed.0));
    Ok(ServiceInstance {
        service_id: class.service_id,
        merged_capabilities: class.merged_capabilities,
        peers: eligible[..k].iter().map(|p| (*p).clone()).collect(),
        spawned_pulse,
        ttl_remaining: ttl,
    })
}

/// Committee indices into an eligible list of length `eligible` for seed
/// `seed`; the same draw sequence [`elect`] performs.
pub fn committee_indices(eligible: usize, k: usize, seed: &ElectionSeed) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eligible).collect();
    shuffle(&mut idx, &mut Prng::new(seed.0));
    idx.truncate(k);
    idx
}

/// User-side selection independent of pulses: uniformly samples peers
/// matching `accept` with the caller's randomness, discarding any peer the
/// reachability oracle rejects, until `count` reachable peers are found.
pub fn local_select<'a, R: Rng + ?Sized>(
    repository: &'a [PeerRecord],
    accept: impl Fn(&PeerRecord) -> bool,
    count: usize,
    mut reachable: impl FnMut(&PeerRecord) -> bool,
    rng: &mut R,
) -> Result<Vec<&'a PeerRecord>, ElectionError> {
    let mut pool: Vec<&PeerRecord> = repository.iter().filter(|p| accept(p)).collect();
    let mut chosen = Vec::with_capacity(count);
    while chosen.len() < count {
        if pool.is_empty() {
            return Err(ElectionError::Exhausted {
                requested: count,
                found: chosen.len(),
            });
        }
        let candidate = pool.swap_remove(rng.gen_range(0..pool.len()));
        if reachable(candidate) {
            chosen.push(candidate);
        }
    }
    Ok(chosen)
}
