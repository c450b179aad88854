//! Pulse arithmetic and derivation of the AnonBoot state from the chain.
//!
//! Pulse `i` starts at the pulse block `i * L_p`. Messages count only inside
//! the negotiation window `(pulse block, pulse block + L_N]`; the block right
//! after it is the spawn block whose Merkle root seeds the elections.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::election::{aggregate_requests, derive_seed, elect, ElectionError, ServiceInstance};
use crate::hostchain::{ChainError, ChainView};
use crate::pow::{PowInput, PowParams, PowRegistry};
use crate::wire::{Capabilities, ConnectorKey, Message, PeerAdvertisement, ServiceRequest};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid pulse configuration: {0}")]
    InvalidConfig(String),
    #[error("spawn block {spawn_height} of pulse {pulse} not mined yet (tip {tip})")]
    SpawnBlockMissing { pulse: u64, spawn_height: u64, tip: u64 },
    #[error("previous state is for pulse {previous}, not before pulse {pulse}")]
    PreviousStateAhead { previous: u64, pulse: u64 },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseConfig {
    /// L_p, in blocks.
    pub pulse_length: u64,
    /// L_N, in blocks.
    pub negotiation_length: u64,
    pub pow: PowParams,
    /// Pulses a spawned service stays listed.
    pub service_ttl: u32,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            pulse_length: 12,
            negotiation_length: 3,
            pow: PowParams::default(),
            service_ttl: 2,
        }
    }
}

impl PulseConfig {
    pub fn validate(&self) -> Result<(), StateError> {
        let bad = |m: String| Err(StateError::InvalidConfig(m));
        if self.negotiation_length < 1 {
            return bad("negotiation length must be at least 1".into());
        }
        // the spawn block must come before the next pulse block
        if self.negotiation_length + 2 > self.pulse_length {
            return bad(format!(
                "negotiation length {} needs a pulse length of at least {}",
                self.negotiation_length,
                self.negotiation_length + 2
            ));
        }
        if self.service_ttl < 1 {
            return bad("service ttl must be at least one pulse".into());
        }
        self.pow
            .validate()
            .map_err(|e| StateError::InvalidConfig(e.to_string()))?;
        PowRegistry::builtin()
            .scheme(&self.pow.scheme_id)
            .map_err(|e| StateError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn pulse_block_height(&self, pulse: u64) -> u64 {
        pulse * self.pulse_length
    }

    pub fn spawn_block_height(&self, pulse: u64) -> u64 {
        self.pulse_block_height(pulse) + self.negotiation_length + 1
    }

    pub fn negotiation_window(&self, pulse: u64) -> RangeInclusive<u64> {
        let start = self.pulse_block_height(pulse);
        start + 1..=start + self.negotiation_length
    }

    /// Latest pulse whose spawn block is at or below `tip`.
    pub fn latest_concluded_pulse(&self, tip: u64) -> Option<u64> {
        let offset = self.negotiation_length + 1;
        (tip >= offset).then(|| (tip - offset) / self.pulse_length)
    }
}

pub fn pulse_block_height(pulse: u64, config: &PulseConfig) -> u64 {
    config.pulse_block_height(pulse)
}

pub fn spawn_block_height(pulse: u64, config: &PulseConfig) -> u64 {
    config.spawn_block_height(pulse)
}

/// Location of a transaction: the canonical ordering key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub height: u64,
    pub tx_index: u32,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.height, self.tx_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerStats {
    pub first_seen_pulse: u64,
    pub refresh_count: u64,
    /// `refresh_count / (pulses since first_seen, inclusive)`.
    pub regularity: f64,
}

impl PeerStats {
    pub fn first_seen(pulse: u64) -> Self {
        PeerStats {
            first_seen_pulse: pulse,
            refresh_count: 1,
            regularity: 1.0,
        }
    }

    fn observe(&mut self, pulse: u64) {
        let span = pulse.saturating_sub(self.first_seen_pulse) + 1;
        self.regularity = self.refresh_count as f64 / span as f64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerRecord {
    pub advertisement: PeerAdvertisement,
    pub position: Position,
    pub stats: PeerStats,
}

impl PeerRecord {
    pub fn key(&self) -> &ConnectorKey {
        &self.advertisement.connector_key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Error)]
pub enum Rejection {
    #[error("outside the negotiation window")]
    OutOfWindow,
    #[error("proof of work targets an earlier pulse block")]
    StalePow,
    #[error("invalid proof of work")]
    InvalidPow,
    #[error("connector key already advertised this pulse")]
    Duplicate,
    #[error("malformed advertisement: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedAdvertisement {
    pub position: Position,
    pub connector_key: ConnectorKey,
    pub reason: Rejection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnservedClass {
    pub service_id: u16,
    pub requested: usize,
    pub eligible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnonBootState {
    pub pulse_index: u64,
    /// Sorted by position.
    pub repository: Vec<PeerRecord>,
    pub services: Vec<ServiceInstance>,
    pub unserved: Vec<UnservedClass>,
    pub stats: BTreeMap<ConnectorKey, PeerStats>,
    /// Advertisements seen in the window or the spawn block but not accepted.
    pub rejected: Vec<RejectedAdvertisement>,
}

/// The part of a state every honest participant agrees on, whatever
/// history they synced from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusView {
    pub pulse_index: u64,
    pub repository: Vec<(Position, PeerAdvertisement)>,
    pub services: Vec<(u16, Capabilities, u64, u32, Vec<Position>)>,
    pub unserved: Vec<UnservedClass>,
}

impl AnonBootState {
    pub fn consensus_view(&self) -> ConsensusView {
        ConsensusView {
            pulse_index: self.pulse_index,
            repository: self
                .repository
                .iter()
                .map(|r| (r.position, r.advertisement.clone()))
                .collect(),
            services: self
                .services
                .iter()
                .map(|s| {
                    (
                        s.service_id,
                        s.merged_capabilities,
                        s.spawned_pulse,
                        s.ttl_remaining,
                        s.positions(),
                    )
                })
                .collect(),
            unserved: self.unserved.clone(),
        }
    }

    pub fn peer(&self, key: &ConnectorKey) -> Option<&PeerRecord> {
        self.repository.iter().find(|r| r.key() == key)
    }

    /// Line-oriented text dump, one record per peer and per service.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "state pulse={} peers={} services={} unserved={} rejected={}",
            self.pulse_index,
            self.repository.len(),
            self.services.len(),
            self.unserved.len(),
            self.rejected.len()
        )?;
        for r in &self.repository {
            let ad = &r.advertisement;
            writeln!(
                out,
                "peer pos={} key={} endpoint={} direct={} service={} caps={} first_seen={} refreshes={} regularity={:.4}",
                r.position,
                ad.connector_key.to_hex(),
                ad.endpoint(),
                ad.direct as u8,
                ad.service_id,
                hex::encode(ad.capabilities.0),
                r.stats.first_seen_pulse,
                r.stats.refresh_count,
                r.stats.regularity
            )?;
        }
        for s in &self.services {
            let members: Vec<String> = s.peers.iter().map(|p| p.position.to_string()).collect();
            writeln!(
                out,
                "service id={} spawned={} ttl={} caps={} members={}",
                s.service_id,
                s.spawned_pulse,
                s.ttl_remaining,
                hex::encode(s.merged_capabilities.0),
                members.join(",")
            )?;
        }
        for u in &self.unserved {
            writeln!(
                out,
                "unserved id={} requested={} eligible={}",
                u.service_id, u.requested, u.eligible
            )?;
        }
        for r in &self.rejected {
            writeln!(
                out,
                "rejected pos={} key={} reason={:?}",
                r.position,
                r.connector_key.to_hex(),
                r.reason
            )?;
        }
        Ok(())
    }
}

/// Checks one advertisement of pulse `pulse`. `seen` holds the keys already
/// accepted this pulse; the key is added on acceptance. The outer error is
/// reserved for chain access failures.
pub fn validate_advertisement<C: ChainView + ?Sized>(
    ad: &PeerAdvertisement,
    position: Position,
    pulse: u64,
    chain: &C,
    config: &PulseConfig,
    seen: &mut HashSet<ConnectorKey>,
) -> Result<Result<(), Rejection>, StateError> {
    if !config.negotiation_window(pulse).contains(&position.height) {
        return Ok(Err(Rejection::OutOfWindow));
    }
    if let Err(e) = ad.validate() {
        return Ok(Err(Rejection::Malformed(e.to_string())));
    }
    let registry = PowRegistry::builtin();
    let verify = |block_height: u64| -> Result<bool, StateError> {
        let input = PowInput {
            connector_key: ad.connector_key,
            pulse_block_hash: chain.block_hash(block_height)?,
            nonce: ad.nonce,
        };
        registry
            .verify(&input, &config.pow)
            .map_err(|e| StateError::InvalidConfig(e.to_string()))
    };
    if !verify(config.pulse_block_height(pulse))? {
        let stale = pulse > 0 && verify(config.pulse_block_height(pulse - 1))?;
        return Ok(Err(if stale {
            Rejection::StalePow
        } else {
            Rejection::InvalidPow
        }));
    }
    if !seen.insert(ad.connector_key) {
        return Ok(Err(Rejection::Duplicate));
    }
    Ok(Ok(()))
}

/// Derives the state at the end of pulse `pulse`.
///
/// With `previous` (the state of an earlier pulse) peer statistics carry
/// over and older services age by the number of elapsed pulses; without it
/// both start fresh.
pub fn derive_state<C: ChainView + ?Sized>(
    chain: &C,
    pulse: u64,
    config: &PulseConfig,
    previous: Option<&AnonBootState>,
) -> Result<AnonBootState, StateError> {
    config.validate()?;
    let spawn_height = config.spawn_block_height(pulse);
    let tip = chain.tip_height();
    if tip < spawn_height {
        return Err(StateError::SpawnBlockMissing {
            pulse,
            spawn_height,
            tip,
        });
    }
    if let Some(prev) = previous {
        if prev.pulse_index >= pulse {
            return Err(StateError::PreviousStateAhead {
                previous: prev.pulse_index,
                pulse,
            });
        }
    }

    let mut seen = HashSet::new();
    let mut accepted: Vec<(Position, PeerAdvertisement)> = Vec::new();
    let mut rejected = Vec::new();
    let mut requests: Vec<ServiceRequest> = Vec::new();

    for height in config.negotiation_window(pulse).chain(std::iter::once(spawn_height)) {
        let block = chain.block(height)?;
        for (i, tx) in block.txs.iter().enumerate() {
            let position = Position {
                height,
                tx_index: i as u32,
            };
            match tx.anonboot_message() {
                Some(Message::Advertisement(ad)) => {
                    match validate_advertisement(&ad, position, pulse, chain, config, &mut seen)? {
                        Ok(()) => accepted.push((position, ad)),
                        Err(reason) => rejected.push(RejectedAdvertisement {
                            position,
                            connector_key: ad.connector_key,
                            reason,
                        }),
                    }
                }
                Some(Message::Request(req)) if height != spawn_height && req.validate().is_ok() => requests.push(req),
                _ => {}
            }
        }
    }

    let mut stats = previous.map(|p| p.stats.clone()).unwrap_or_default();
    for (_, ad) in &accepted {
        stats
            .entry(ad.connector_key)
            .and_modify(|s| s.refresh_count += 1)
            .or_insert_with(|| PeerStats::first_seen(pulse));
    }
    for s in stats.values_mut() {
        s.observe(pulse);
    }

    let repository: Vec<PeerRecord> = accepted
        .into_iter()
        .map(|(position, advertisement)| PeerRecord {
            stats: stats[&advertisement.connector_key],
            advertisement,
            position,
        })
        .collect();

    let mut services: Vec<ServiceInstance> = match previous {
        Some(prev) => {
            let elapsed = (pulse - prev.pulse_index).min(u32::MAX as u64) as u32;
            prev.services
                .iter()
                .filter(|s| s.ttl_remaining > elapsed)
                .map(|s| ServiceInstance {
                    ttl_remaining: s.ttl_remaining - elapsed,
                    ..s.clone()
                })
                .collect()
        }
        None => Vec::new(),
    };

    let spawn_block = chain.block(spawn_height)?;
    let mut unserved = Vec::new();
    for class in aggregate_requests(&requests) {
        let seed = derive_seed(spawn_block, &class);
        match elect(&repository, &class, &seed, pulse, config.service_ttl) {
            Ok(instance) => services.push(instance),
            Err(ElectionError::Unserved {
                service_id,
                eligible,
                requested,
            }) => unserved.push(UnservedClass {
                service_id,
                requested,
                eligible,
            }),
            Err(e @ ElectionError::Exhausted { .. }) => unreachable!("elect never exhausts: {e}"),
        }
    }

    Ok(AnonBootState {
        pulse_index: pulse,
        repository,
        services,
        unserved,
        stats,
        rejected,
    })
}

/// Derives the latest concluded pulse by replaying only the pulses whose
/// services can still be alive (the last `service_ttl`), starting without
/// peer statistics.
pub fn derive_state_from_recent<C: ChainView + ?Sized>(
    chain: &C,
    config: &PulseConfig,
) -> Result<AnonBootState, StateError> {
    config.validate()?;
    let latest = latest_pulse(chain, config)?;
    let first = latest.saturating_sub(config.service_ttl as u64 - 1);
    let mut state: Option<AnonBootState> = None;
    for pulse in first..=latest {
        state = Some(derive_state(chain, pulse, config, state.as_ref())?);
    }
    Ok(state.expect("at least one pulse derived"))
}

/// Derives every pulse from 0 to the latest concluded one, carrying state.
pub fn derive_state_full<C: ChainView + ?Sized>(chain: &C, config: &PulseConfig) -> Result<AnonBootState, StateError> {
    config.validate()?;
    let latest = latest_pulse(chain, config)?;
    let mut state: Option<AnonBootState> = None;
    for pulse in 0..=latest {
        state = Some(derive_state(chain, pulse, config, state.as_ref())?);
    }
    Ok(state.expect("at least one pulse derived"))
}

fn latest_pulse<C: ChainView + ?Sized>(chain: &C, config: &PulseConfig) -> Result<u64, StateError> {
    let tip = chain.tip_height();
    config.latest_concluded_pulse(tip).ok_or(StateError::SpawnBlockMissing {
        pulse: 0,
        spawn_height: config.spawn_block_height(0),
        tip,
    })
}
