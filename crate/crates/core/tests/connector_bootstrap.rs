mod common;

use std::collections::VecDeque;
use std::sync::Arc;

use anonboot::connector::{
    bootstrap_service, handover, ConnectorError, HandoverOutcome, Keypair, LocalPeer, Origin, PeerEndpoint,
    PeerRegistry, Transport,
};
use anonboot::hostchain::{ChainConfig, HostChain};
use anonboot::pow::{pow_solve, PowParams};
use anonboot::pulse_state::{derive_state, AnonBootState, PeerRecord, PeerStats, Position, PulseConfig};
use anonboot::wire::{encode_peer_advertisement, Capabilities, PeerAdvertisement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Net {
    chain: HostChain,
    config: PulseConfig,
    transport: Transport,
    keys: Vec<Keypair>,
}

fn network(peers: u64, k: u16) -> Net {
    let config = PulseConfig {
        pow: PowParams::new(4),
        ..PulseConfig::default()
    };
    let cc = ChainConfig::default();
    let mut chain = HostChain::new(9, &cc);
    let transport = Transport::new();
    let keys: Vec<Keypair> = (0..peers).map(|i| Keypair::from_seed(1000 + i)).collect();
    let mut queue = VecDeque::new();
    let pb = chain.get_block(0).unwrap().block_hash;
    for (i, kp) in keys.iter().enumerate() {
        let endpoint = format!("10.5.0.{}:7000", i + 1).parse().unwrap();
        let mut ad = PeerAdvertisement::new(kp.public(), endpoint, 1, Capabilities::default());
        ad.nonce = pow_solve(&kp.public(), &pb, &config.pow, [0; 8], u64::MAX)
            .unwrap()
            .nonce;
        queue.push_back(encode_peer_advertisement(&ad).unwrap());
        transport.register(PeerEndpoint::honest(kp.clone(), endpoint));
    }
    queue.push_back(common::request(1, k, [4; 8]));
    chain.mine_to(config.spawn_block_height(0), &mut queue, &cc);
    Net {
        chain,
        config,
        transport,
        keys,
    }
}

fn registry(net: &Net, corrupt: Option<&Keypair>) -> PeerRegistry {
    let honest = Arc::new(net.chain.clone());
    let mut registry = PeerRegistry::new();
    for kp in &net.keys {
        let chain = match corrupt {
            Some(c) if c.public() == kp.public() => {
                // a local copy whose spawn block differs
                let mut other = net.chain.prefix(net.config.spawn_block_height(0) - 1).unwrap();
                let cc = ChainConfig::default();
                other.mine_block(&mut VecDeque::from([common::request(1, 1, [9; 8])]), &cc);
                Arc::new(other)
            }
            _ => Arc::clone(&honest),
        };
        registry.insert(
            kp.public(),
            LocalPeer {
                chain,
                config: net.config.clone(),
            },
        );
    }
    registry
}

fn state(net: &Net) -> AnonBootState {
    derive_state(&net.chain, 0, &net.config, None).unwrap()
}

#[test]
fn honest_committee_bootstraps_live() {
    let net = network(8, 4);
    let instance = &state(&net).services[0];
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let report = bootstrap_service(instance, &registry(&net, None), &net.transport, &mut rng).unwrap();
    assert!(report.live);
    assert_eq!(report.links.len(), 3);
    assert!(report.links.iter().all(|l| l.authenticated()));
    for (link, pair) in report.links.iter().zip(instance.peers.windows(2)) {
        assert_eq!((&link.from, &link.to), (pair[0].key(), pair[1].key()));
    }
    let peer_links = net
        .transport
        .log()
        .iter()
        .filter(|c| matches!(c.origin, Origin::Peer(_)))
        .count();
    assert_eq!(peer_links, 3);
}

#[test]
fn every_elected_peer_replays_its_position() {
    let net = network(10, 5);
    let instance = &state(&net).services[0];
    let registry = registry(&net, None);
    for (i, p) in instance.peers.iter().enumerate() {
        assert_eq!(registry.replay(p.key(), instance), Some(i));
    }
}

#[test]
fn disagreeing_replay_abstains() {
    let net = network(8, 4);
    let instance = state(&net).services[0].clone();
    let member = instance.peers[1].key();
    let corrupt = net.keys.iter().find(|k| &k.public() == member).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    match bootstrap_service(&instance, &registry(&net, Some(corrupt)), &net.transport, &mut rng) {
        Err(ConnectorError::PartialBootstrap { report, failed_link }) => {
            assert!(!report.live);
            assert_eq!(report.abstained, vec![*member]);
            assert_eq!(failed_link, 1);
            assert_eq!(report.links[1].outcome, None);
            assert!(report.links[0].authenticated() && report.links[2].authenticated());
        }
        other => panic!("expected partial bootstrap, got {other:?}"),
    }
}

#[test]
fn unregistered_impostor_breaks_the_cascade() {
    let net = network(6, 3);
    let instance = state(&net).services[0].clone();
    let target = instance.peers[2].clone();
    net.transport.register(PeerEndpoint::impostor(
        *target.key(),
        Keypair::from_seed(1),
        target.advertisement.endpoint(),
    ));
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let err = bootstrap_service(&instance, &registry(&net, None), &net.transport, &mut rng).unwrap_err();
    let ConnectorError::PartialBootstrap { report, failed_link } = err else {
        panic!()
    };
    assert_eq!(failed_link, 1);
    assert_eq!(report.links[1].outcome, Some(HandoverOutcome::KeyMismatch));
}

#[test]
fn impersonation_never_authenticates() {
    let transport = Transport::new();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut successes = 0;
    for i in 0..1000u32 {
        let victim = Keypair::generate(&mut rng);
        let attacker = Keypair::generate(&mut rng);
        let endpoint = format!("10.6.{}.{}:7100", i >> 8, i & 0xff).parse().unwrap();
        transport.register(PeerEndpoint::impostor(victim.public(), attacker, endpoint));
        let record = PeerRecord {
            advertisement: PeerAdvertisement::new(victim.public(), endpoint, 1, Capabilities::default()),
            position: Position { height: 1, tx_index: i },
            stats: PeerStats::first_seen(0),
        };
        let challenge: [u8; 32] = rng.gen();
        if handover(&transport, Origin::User, &record, &challenge)
            .outcome
            .is_authenticated()
        {
            successes += 1;
        }
    }
    assert_eq!(successes, 0);
}
