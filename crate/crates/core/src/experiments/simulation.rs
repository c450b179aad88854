//! Scripted multi-pulse run: honest and impostor peers advertise, users
//! request services, committees bootstrap and a user builds a circuit.

use std::collections::{HashSet, VecDeque};
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::connector::{
    bootstrap_service, build_circuit, handover_all, BootstrapReport, Circuit, Connection, ConnectorError,
    HandoverResult, HopConstraint, Keypair, LocalPeer, Origin, PeerEndpoint, PeerRegistry, Transport,
};
use crate::election::ServiceInstance;
use crate::hostchain::{ChainConfig, HostChain};
use crate::pow::PowRegistry;
use crate::pulse_state::{derive_state, AnonBootState, PulseConfig, StateError};
use crate::wire::{
    encode_peer_advertisement, encode_service_request, Capabilities, ConnectorKey, OpReturnScript, PeerAdvertisement,
    ServiceRequest,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation: {0}")]
    Invalid(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("proof of work: {0}")]
    Pow(String),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedRequest {
    pub pulse: u64,
    pub service_id: u16,
    pub committee_size: u16,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub pulses: u64,
    pub pulse: PulseConfig,
    pub chain: ChainConfig,
    pub honest_peers: u32,
    /// Services the honest peers are spread over, round robin from id 1.
    pub services: u16,
    /// Peers advertising keys they do not hold.
    pub adversarial_peers: u32,
    pub adversarial_service: u16,
    pub adversaries_from_pulse: u64,
    pub requests: Vec<ScriptedRequest>,
    /// Adds one advertisement landing in a spawn block and one carrying
    /// proof of work for the previous pulse.
    pub inject_invalid: bool,
    pub circuit_length: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let mut pulse = PulseConfig::default();
        pulse.pow.difficulty_bits = 8;
        SimulationConfig {
            pulses: 3,
            pulse,
            chain: ChainConfig::default(),
            honest_peers: 20,
            services: 3,
            adversarial_peers: 5,
            adversarial_service: 3,
            adversaries_from_pulse: 1,
            requests: vec![
                ScriptedRequest {
                    pulse: 1,
                    service_id: 1,
                    committee_size: 3,
                },
                ScriptedRequest {
                    pulse: 2,
                    service_id: 2,
                    committee_size: 4,
                },
            ],
            inject_invalid: true,
            circuit_length: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceOutcome {
    pub instance: ServiceInstance,
    pub bootstrap: BootstrapReport,
}

#[derive(Debug)]
pub struct SimulationReport {
    pub chain: HostChain,
    /// One state per pulse.
    pub states: Vec<AnonBootState>,
    pub services: Vec<ServiceOutcome>,
    pub honest_keys: HashSet<ConnectorKey>,
    pub adversarial_keys: HashSet<ConnectorKey>,
    /// Keys behind the injected invalid advertisements.
    pub injected_keys: HashSet<ConnectorKey>,
    /// User handovers to every repository peer of the last pulse.
    pub sweep: Vec<HandoverResult>,
    pub circuit: Option<Circuit>,
    /// Transport log entries written while the circuit was built.
    pub circuit_log: Vec<Connection>,
}

impl SimulationReport {
    pub fn final_state(&self) -> &AnonBootState {
        self.states.last().expect("at least one pulse")
    }

    pub fn direct_user_connections(&self) -> usize {
        self.circuit_log.iter().filter(|c| c.origin == Origin::User).count()
    }
}

struct SimPeer {
    key: ConnectorKey,
    address: SocketAddr,
    service_id: u16,
    from_pulse: u64,
}

fn address(group: u8, i: u32) -> SocketAddr {
    (Ipv4Addr::new(10, group, (i >> 8) as u8, i as u8), 9000 + group as u16).into()
}

fn advertise(
    peer: &SimPeer,
    chain: &HostChain,
    pulse_height: u64,
    config: &PulseConfig,
    rng: &mut ChaCha20Rng,
) -> Result<OpReturnScript, SimulationError> {
    let mut ad = PeerAdvertisement::new(peer.key, peer.address, peer.service_id, Capabilities::default());
    let hash = chain.get_block(pulse_height).expect("pulse block mined").block_hash;
    let solution = PowRegistry::builtin()
        .solve(&peer.key, &hash, &config.pow, rng.gen(), u64::MAX)
        .map_err(|e| SimulationError::Pow(e.to_string()))?;
    ad.nonce = solution.nonce;
    encode_peer_advertisement(&ad).map_err(|e| SimulationError::Invalid(e.to_string()))
}

pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    config.pulse.validate()?;
    config.chain.validate().map_err(SimulationError::Invalid)?;
    if config.pulses == 0 || config.services == 0 {
        return Err(SimulationError::Invalid(
            "need at least one pulse and one service".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let transport = Transport::new();

    let mut peers = Vec::new();
    let mut honest_keys = HashSet::new();
    for i in 0..config.honest_peers {
        let kp = Keypair::generate(&mut rng);
        let peer = SimPeer {
            key: kp.public(),
            address: address(1, i),
            service_id: 1 + (i % config.services as u32) as u16,
            from_pulse: 0,
        };
        transport.register(PeerEndpoint::honest(kp, peer.address));
        honest_keys.insert(peer.key);
        peers.push(peer);
    }
    let mut adversarial_keys = HashSet::new();
    for i in 0..config.adversarial_peers {
        let claimed = Keypair::generate(&mut rng).public();
        let peer = SimPeer {
            key: claimed,
            address: address(2, i),
            service_id: config.adversarial_service,
            from_pulse: config.adversaries_from_pulse,
        };
        transport.register(PeerEndpoint::impostor(
            claimed,
            Keypair::generate(&mut rng),
            peer.address,
        ));
        adversarial_keys.insert(claimed);
        peers.push(peer);
    }
    let mut injected = Vec::new();
    if config.inject_invalid {
        for i in 0..2 {
            let kp = Keypair::generate(&mut rng);
            injected.push(SimPeer {
                key: kp.public(),
                address: address(3, i),
                service_id: 1,
                from_pulse: 0,
            });
            transport.register(PeerEndpoint::honest(kp, address(3, i)));
        }
    }

    let pc = &config.pulse;
    let mut chain = HostChain::new(config.seed, &config.chain);
    let mut queue = VecDeque::new();
    for pulse in 0..config.pulses {
        let pb = pc.pulse_block_height(pulse);
        chain.mine_to(pb, &mut queue, &config.chain);
        for peer in peers.iter().filter(|p| p.from_pulse <= pulse) {
            queue.push_back(advertise(peer, &chain, pb, pc, &mut rng)?);
        }
        if config.inject_invalid && pulse > 0 {
            // valid only against the previous pulse block
            queue.push_back(advertise(
                &injected[0],
                &chain,
                pc.pulse_block_height(pulse - 1),
                pc,
                &mut rng,
            )?);
        }
        for r in config.requests.iter().filter(|r| r.pulse == pulse) {
            let req = ServiceRequest::new(r.service_id, Capabilities::for_committee(r.committee_size), rng.gen());
            queue.push_back(encode_service_request(&req).map_err(|e| SimulationError::Invalid(e.to_string()))?);
        }
        chain.mine_to(*pc.negotiation_window(pulse).end(), &mut queue, &config.chain);
        if config.inject_invalid {
            queue.push_back(advertise(&injected[1], &chain, pb, pc, &mut rng)?);
        }
        chain.mine_to(pc.spawn_block_height(pulse), &mut queue, &config.chain);
    }

    let shared = Arc::new(chain.clone());
    let mut registry = PeerRegistry::new();
    for key in &honest_keys {
        registry.insert(
            *key,
            LocalPeer {
                chain: Arc::clone(&shared),
                config: pc.clone(),
            },
        );
    }

    let mut states: Vec<AnonBootState> = Vec::new();
    let mut services = Vec::new();
    for pulse in 0..config.pulses {
        let state = derive_state(&chain, pulse, pc, states.last())?;
        for instance in state.services.iter().filter(|s| s.spawned_pulse == pulse) {
            let bootstrap = match bootstrap_service(instance, &registry, &transport, &mut rng) {
                Ok(report) => report,
                Err(ConnectorError::PartialBootstrap { report, .. }) => *report,
                Err(e) => return Err(e.into()),
            };
            services.push(ServiceOutcome {
                instance: instance.clone(),
                bootstrap,
            });
        }
        states.push(state);
    }

    let last = states.last().expect("pulses >= 1");
    let sweep = handover_all(&transport, Origin::User, &last.repository, rng.gen());

    let before = transport.log_len();
    // the entry hop must have advertised in every pulse so far
    let pulses_seen = config.pulses;
    let mut hops: Vec<HopConstraint> = vec![Box::new(move |p| p.stats.refresh_count >= pulses_seen)];
    for _ in 1..config.circuit_length {
        hops.push(Box::new(|_| true));
    }
    let circuit = if config.circuit_length > 0 {
        Some(build_circuit(&transport, &last.repository, &hops, |_| true, &mut rng)?)
    } else {
        None
    };
    let circuit_log = transport.log()[before..].to_vec();

    Ok(SimulationReport {
        chain,
        states,
        services,
        honest_keys,
        adversarial_keys,
        injected_keys: injected.iter().map(|p| p.key).collect(),
        sweep,
        circuit,
        circuit_log,
    })
}
