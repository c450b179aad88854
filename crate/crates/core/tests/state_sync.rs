mod common;

use std::collections::VecDeque;

use anonboot::hostchain::{Capacity, ChainConfig, HostChain};
use anonboot::pow::PowParams;
use anonboot::pulse_state::{derive_state, derive_state_from_recent, derive_state_full, PulseConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn recent_sync_matches_full_history(seed in any::<u64>()) {
        let (chain, config) = common::random_chain(&mut ChaCha20Rng::seed_from_u64(seed));
        let recent = derive_state_from_recent(&chain, &config).unwrap();
        let full = derive_state_full(&chain, &config).unwrap();
        prop_assert_eq!(recent.consensus_view(), full.consensus_view());
    }

    #[test]
    fn accepted_ads_lie_in_their_window(seed in any::<u64>()) {
        let (chain, config) = common::random_chain(&mut ChaCha20Rng::seed_from_u64(seed));
        let state = derive_state_full(&chain, &config).unwrap();
        let window = config.negotiation_window(state.pulse_index);
        let mut keys = std::collections::HashSet::new();
        for r in &state.repository {
            prop_assert!(window.contains(&r.position.height));
            prop_assert!(keys.insert(*r.key()));
            prop_assert!(r.stats.regularity > 0.0 && r.stats.regularity <= 1.0);
        }
        prop_assert!(state.repository.windows(2).all(|w| w[0].position < w[1].position));
        for s in &state.services {
            let spawned = derive_state(&chain, s.spawned_pulse, &config, None).unwrap();
            for p in &s.peers {
                prop_assert!(spawned.repository.iter().any(|r| r.position == p.position));
            }
        }
    }
}

#[test]
fn a_thousand_ads_fit_a_five_block_window_at_five_percent() {
    let config = PulseConfig {
        pulse_length: 12,
        negotiation_length: 5,
        pow: PowParams::new(0),
        service_ttl: 2,
    };
    let cc = ChainConfig::with_capacity(Capacity::new(1, 20).unwrap());
    let mut chain = HostChain::new(0, &cc);
    let mut queue: VecDeque<_> = (0..1000)
        .map(|i| common::advertisement(i, 1, &chain, 0, &config.pow))
        .collect();
    chain.mine_to(config.spawn_block_height(0), &mut queue, &cc);
    assert!(queue.is_empty());
    let state = derive_state(&chain, 0, &config, None).unwrap();
    assert_eq!(state.repository.len(), 1000);
    assert!(state.rejected.is_empty());
}

#[test]
fn late_joiner_reconstructs_the_repository() {
    let config = PulseConfig {
        pow: PowParams::new(2),
        ..PulseConfig::default()
    };
    let cc = ChainConfig::default();
    let mut chain = HostChain::new(0, &cc);
    let mut queue = VecDeque::new();
    let mut carried = None;
    for p in 0..=10u64 {
        let pb = config.pulse_block_height(p);
        chain.mine_to(pb, &mut queue, &cc);
        for i in 0..8 {
            queue.push_back(common::advertisement(i, 1, &chain, pb, &config.pow));
        }
        queue.push_back(common::request(1, 3, p.to_be_bytes()));
        chain.mine_to(config.spawn_block_height(p), &mut queue, &cc);
        carried = Some(derive_state(&chain, p, &config, carried.as_ref()).unwrap());
    }
    let veteran = carried.unwrap();
    let joiner = derive_state_from_recent(&chain, &config).unwrap();
    assert_eq!(joiner.pulse_index, 10);
    assert_eq!(joiner.consensus_view(), veteran.consensus_view());
    assert_eq!(veteran.stats[&common::key(0)].refresh_count, 11);
    assert_eq!(joiner.stats[&common::key(0)].refresh_count, 2);
}
