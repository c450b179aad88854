//! Simulated connector layer: authenticated handovers over an in-process
//! transport, hop-by-hop circuit construction and cascade bootstrap of
//! elected service instances.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::election::{local_select, ServiceInstance};
use crate::hash::sha256;
use crate::hostchain::HostChain;
use crate::pulse_state::{derive_state, PeerRecord, PulseConfig};
use crate::wire::ConnectorKey;

pub type Challenge = [u8; 32];

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("no candidate left for hop {hop} of {length}")]
    Exhausted { hop: usize, length: usize },
    #[error("circuit length must be at least 1")]
    EmptyCircuit,
    #[error("service {service_id} from pulse {spawned_pulse} has expired")]
    Stale { service_id: u16, spawned_pulse: u64 },
    #[error("bootstrap incomplete: link {} -> {} failed", .report.links[*.failed_link].from.to_hex(), .report.links[*.failed_link].to.to_hex())]
    PartialBootstrap {
        report: Box<BootstrapReport>,
        failed_link: usize,
    },
}

/// secp256k1 signing key with a compressed 33-byte public encoding.
#[derive(Clone)]
pub struct Keypair(SigningKey);

impl Keypair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Keypair(SigningKey::random(rng))
    }

    /// Deterministic key for simulations.
    pub fn from_seed(seed: u64) -> Self {
        Self::generate(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn public(&self) -> ConnectorKey {
        let point = self.0.verifying_key().to_encoded_point(true);
        let mut key = [0u8; 33];
        key.copy_from_slice(point.as_bytes());
        ConnectorKey(key)
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        let sig: Signature = self.0.sign(msg);
        sig.to_bytes().into()
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair({})", self.public().to_hex())
    }
}

pub fn verify_signature(key: &ConnectorKey, msg: &[u8], sig: &[u8; 64]) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(&key.0) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    vk.verify(msg, &sig).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Accepts connections but never answers a challenge.
    Silent,
    /// Answers with a key other than the advertised one.
    WrongKey,
}

/// A simulated peer reachable through the transport.
#[derive(Debug, Clone)]
pub struct PeerEndpoint {
    pub connector_key: ConnectorKey,
    pub address: SocketAddr,
    pub reachable: bool,
    pub behavior: Behavior,
    pub keypair: Option<Keypair>,
    pub challenges_answered: u64,
}

impl PeerEndpoint {
    pub fn honest(keypair: Keypair, address: SocketAddr) -> Self {
        PeerEndpoint {
            connector_key: keypair.public(),
            address,
            reachable: true,
            behavior: Behavior::Honest,
            keypair: Some(keypair),
            challenges_answered: 0,
        }
    }

    /// Endpoint advertising `claimed` while holding an unrelated key.
    pub fn impostor(claimed: ConnectorKey, own: Keypair, address: SocketAddr) -> Self {
        PeerEndpoint {
            connector_key: claimed,
            address,
            reachable: true,
            behavior: Behavior::WrongKey,
            keypair: Some(own),
            challenges_answered: 0,
        }
    }

    pub fn silent(connector_key: ConnectorKey, address: SocketAddr) -> Self {
        PeerEndpoint {
            connector_key,
            address,
            reachable: true,
            behavior: Behavior::Silent,
            keypair: None,
            challenges_answered: 0,
        }
    }

    pub fn unreachable(mut self) -> Self {
        self.reachable = false;
        self
    }

    fn answer(&mut self, challenge: &Challenge) -> Option<[u8; 64]> {
        match self.behavior {
            Behavior::Silent => None,
            Behavior::Honest | Behavior::WrongKey => {
                self.challenges_answered += 1;
                self.keypair.as_ref().map(|k| k.sign(challenge))
            }
        }
    }
}

/// Who opened a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    User,
    /// Through an established circuit whose last hop is this peer.
    Relay(ConnectorKey),
    /// A privacy peer setting up a service link.
    Peer(ConnectorKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connection {
    pub origin: Origin,
    pub target: SocketAddr,
    pub accepted: bool,
}

/// In-process registry of simulated endpoints with a connection log.
#[derive(Debug, Default)]
pub struct Transport {
    peers: RwLock<HashMap<SocketAddr, Arc<Mutex<PeerEndpoint>>>>,
    log: Mutex<Vec<Connection>>,
}

impl Transport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, endpoint: PeerEndpoint) {
        self.peers
            .write()
            .unwrap()
            .insert(endpoint.address, Arc::new(Mutex::new(endpoint)));
    }

    pub fn set_reachable(&self, address: &SocketAddr, reachable: bool) -> bool {
        match self.peers.read().unwrap().get(address) {
            Some(p) => {
                p.lock().unwrap().reachable = reachable;
                true
            }
            None => false,
        }
    }

    pub fn connect(&self, origin: Origin, target: SocketAddr) -> Option<Arc<Mutex<PeerEndpoint>>> {
        let peer = self.peers.read().unwrap().get(&target).cloned();
        let peer = peer.filter(|p| p.lock().unwrap().reachable);
        self.log.lock().unwrap().push(Connection {
            origin,
            target,
            accepted: peer.is_some(),
        });
        peer
    }

    pub fn log(&self) -> Vec<Connection> {
        self.log.lock().unwrap().clone()
    }

    pub fn log_len(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

/// Opaque handle standing in for the service protocol session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionToken(pub [u8; 32]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoverOutcome {
    Authenticated(SessionToken),
    Unreachable,
    KeyMismatch,
}

impl HandoverOutcome {
    pub fn is_authenticated(&self) -> bool {
        matches!(self, HandoverOutcome::Authenticated(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverResult {
    pub peer: PeerRecord,
    pub outcome: HandoverOutcome,
}

/// Connects to the advertised endpoint of `peer` and checks its signature
/// over `challenge` against the advertised connector key. Direct and
/// connector-mediated peers authenticate the same way.
pub fn handover(transport: &Transport, origin: Origin, peer: &PeerRecord, challenge: &Challenge) -> HandoverResult {
    let ad = &peer.advertisement;
    let outcome = match transport.connect(origin, ad.endpoint()) {
        None => HandoverOutcome::Unreachable,
        Some(endpoint) => match endpoint.lock().unwrap().answer(challenge) {
            None => HandoverOutcome::Unreachable,
            Some(sig) if verify_signature(&ad.connector_key, challenge, &sig) => {
                HandoverOutcome::Authenticated(SessionToken(sha256(&[challenge, &sig]).0))
            }
            Some(_) => HandoverOutcome::KeyMismatch,
        },
    };
    HandoverResult {
        peer: peer.clone(),
        outcome,
    }
}

/// Hands over to every peer concurrently, each with its own fresh challenge
/// drawn from a stream keyed by `seed` and the peer's index.
pub fn handover_all(transport: &Transport, origin: Origin, peers: &[PeerRecord], seed: u64) -> Vec<HandoverResult> {
    peers
        .par_iter()
        .enumerate()
        .map(|(i, peer)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            handover(transport, origin, peer, &rng.gen())
        })
        .collect()
}

/// Per-hop candidate filter.
pub type HopConstraint<'a> = Box<dyn Fn(&PeerRecord) -> bool + 'a>;

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub hops: Vec<PeerRecord>,
    pub sessions: Vec<SessionToken>,
    /// Every handover tried, in order, including replaced candidates.
    pub attempts: Vec<HandoverResult>,
}

/// Builds a circuit of `hop_constraints.len()` distinct authenticated hops.
///
/// Hop 1 is authenticated directly by the user, every later hop through
/// the last established one. A candidate the `reachable` oracle rejects or
/// that fails its handover is dropped and a replacement drawn.
pub fn build_circuit<R: Rng + ?Sized>(
    transport: &Transport,
    repository: &[PeerRecord],
    hop_constraints: &[HopConstraint<'_>],
    mut reachable: impl FnMut(&PeerRecord) -> bool,
    rng: &mut R,
) -> Result<Circuit, ConnectorError> {
    let length = hop_constraints.len();
    if length == 0 {
        return Err(ConnectorError::EmptyCircuit);
    }
    let mut challenges = ChaCha20Rng::from_seed(rng.gen());
    let mut circuit = Circuit {
        hops: Vec::with_capacity(length),
        sessions: Vec::with_capacity(length),
        attempts: Vec::new(),
    };
    let mut tried: HashSet<ConnectorKey> = HashSet::new();

    for (hop, constraint) in hop_constraints.iter().enumerate() {
        let origin = match circuit.hops.last() {
            None => Origin::User,
            Some(last) => Origin::Relay(*last.key()),
        };
        let mut session = None;
        let picked = local_select(
            repository,
            |p| !tried.contains(p.key()) && constraint(p),
            1,
            |p| {
                if !reachable(p) {
                    return false;
                }
                let result = handover(transport, origin, p, &challenges.gen());
                let outcome = result.outcome;
                circuit.attempts.push(result);
                match outcome {
                    HandoverOutcome::Authenticated(token) => {
                        session = Some(token);
                        true
                    }
                    _ => false,
                }
            },
            rng,
        )
        .map_err(|_| ConnectorError::Exhausted { hop: hop + 1, length })?;
        let peer = picked[0].clone();
        // failed candidates stay excluded for later hops as well
        tried.extend(circuit.attempts.iter().map(|a| *a.peer.key()));
        circuit.hops.push(peer);
        circuit.sessions.push(session.expect("selected hop authenticated"));
    }
    Ok(circuit)
}

/// What a privacy peer knows locally: its own chain copy.
#[derive(Debug, Clone)]
pub struct LocalPeer {
    pub chain: Arc<HostChain>,
    pub config: PulseConfig,
}

#[derive(Debug, Clone, Default)]
pub struct PeerRegistry {
    peers: HashMap<ConnectorKey, LocalPeer>,
}

impl PeerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: ConnectorKey, peer: LocalPeer) {
        self.peers.insert(key, peer);
    }

    pub fn get(&self, key: &ConnectorKey) -> Option<&LocalPeer> {
        self.peers.get(key)
    }

    /// Replays the election behind `instance` from the peer's own chain.
    /// Returns the peer's cascade position if its replay matches.
    pub fn replay(&self, key: &ConnectorKey, instance: &ServiceInstance) -> Option<usize> {
        let local = self.peers.get(key)?;
        let state = derive_state(local.chain.as_ref(), instance.spawned_pulse, &local.config, None).ok()?;
        let mine = state.services.iter().find(|s| s.same_election(instance))?;
        mine.cascade_position(key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub from: ConnectorKey,
    pub to: ConnectorKey,
    /// `None` when `from` abstained after a disagreeing replay.
    pub outcome: Option<HandoverOutcome>,
}

impl LinkReport {
    pub fn authenticated(&self) -> bool {
        self.outcome.is_some_and(|o| o.is_authenticated())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    pub service_id: u16,
    pub spawned_pulse: u64,
    /// Members whose replay did not reproduce the instance.
    pub abstained: Vec<ConnectorKey>,
    /// Cascade links, member i to member i+1.
    pub links: Vec<LinkReport>,
    pub live: bool,
}

/// Each member replays the election, then the cascade links are opened
/// and authenticated. The instance is live iff every link authenticates.
pub fn bootstrap_service<R: Rng + ?Sized>(
    instance: &ServiceInstance,
    registry: &PeerRegistry,
    transport: &Transport,
    rng: &mut R,
) -> Result<BootstrapReport, ConnectorError> {
    if instance.ttl_remaining == 0 {
        return Err(ConnectorError::Stale {
            service_id: instance.service_id,
            spawned_pulse: instance.spawned_pulse,
        });
    }
    let mut abstained = Vec::new();
    let mut agrees = Vec::with_capacity(instance.peers.len());
    for (i, member) in instance.peers.iter().enumerate() {
        let ok = registry.replay(member.key(), instance) == Some(i);
        if !ok {
            abstained.push(*member.key());
        }
        agrees.push(ok);
    }
    let links: Vec<LinkReport> = instance
        .peers
        .windows(2)
        .zip(&agrees)
        .map(|(pair, &ok)| LinkReport {
            from: *pair[0].key(),
            to: *pair[1].key(),
            outcome: ok.then(|| handover(transport, Origin::Peer(*pair[0].key()), &pair[1], &rng.gen()).outcome),
        })
        .collect();
    // the last member has no outgoing link but must still agree
    let tail_ok = agrees.last().copied().unwrap_or(true);
    let report = BootstrapReport {
        service_id: instance.service_id,
        spawned_pulse: instance.spawned_pulse,
        live: tail_ok && links.iter().all(LinkReport::authenticated),
        abstained,
        links,
    };
    if report.live {
        return Ok(report);
    }
    let failed_link = report
        .links
        .iter()
        .position(|l| !l.authenticated())
        .unwrap_or(report.links.len().saturating_sub(1));
    Err(ConnectorError::PartialBootstrap {
        report: Box::new(report),
        failed_link,
    })
}
