mod common;

use anonboot::election::{elect, ElectionSeed, RequestClass};
use anonboot::experiments::exact_tail;
use anonboot::hash::Hash256;
use anonboot::pulse_state::{PeerRecord, PeerStats, Position};
use anonboot::wire::{Capabilities, PeerAdvertisement};
use statrs::distribution::{Discrete, Hypergeometric};

fn repository(n: u32) -> Vec<PeerRecord> {
    (0..n)
        .map(|i| PeerRecord {
            advertisement: PeerAdvertisement::new(
                common::key(i),
                format!("10.4.0.{i}:9000").parse().unwrap(),
                1,
                Capabilities::default(),
            ),
            position: Position { height: 1, tx_index: i },
            stats: PeerStats::first_seen(0),
        })
        .collect()
}

fn class(k: u16) -> RequestClass {
    RequestClass {
        service_id: 1,
        requests: Vec::new(),
        merged_capabilities: Capabilities::for_committee(k),
    }
}

fn seed(i: u64) -> ElectionSeed {
    ElectionSeed(Hash256(common::sha(&i.to_be_bytes())))
}

#[test]
fn each_peer_is_elected_k_over_n_of_the_time() {
    let (n, k, seeds) = (20u32, 5u16, 100_000u64);
    let repo = repository(n);
    let class = class(k);
    let mut counts = vec![0u64; n as usize];
    for s in 0..seeds {
        for p in elect(&repo, &class, &seed(s), 0, 1).unwrap().peers {
            counts[p.position.tx_index as usize] += 1;
        }
    }
    let p = k as f64 / n as f64;
    let mean = seeds as f64 * p;
    let sd = (seeds as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!((*c as f64 - mean).abs() <= 4.0 * sd, "peer {i}: {c} vs {mean}");
    }
}

#[test]
fn adversarial_members_follow_the_hypergeometric_law() {
    let (n, adversaries, k, seeds) = (40u64, 12u64, 8u16, 40_000u64);
    let repo = repository(n as u32);
    let class = class(k);
    let mut hist = vec![0u64; k as usize + 1];
    for s in 0..seeds {
        let a = elect(&repo, &class, &seed(s), 0, 1)
            .unwrap()
            .peers
            .iter()
            .filter(|p| (p.position.tx_index as u64) < adversaries)
            .count();
        hist[a] += 1;
    }
    let reference = Hypergeometric::new(n, adversaries, k as u64).unwrap();
    for (x, &observed) in hist.iter().enumerate() {
        let x = x as u64;
        let pmf = exact_tail(n, adversaries, k as u64, x) - exact_tail(n, adversaries, k as u64, x + 1);
        assert!((pmf - reference.pmf(x)).abs() < 1e-12);
        let sd = (seeds as f64 * pmf * (1.0 - pmf)).sqrt();
        assert!(
            (observed as f64 - seeds as f64 * pmf).abs() <= 4.0 * sd + 1e-9,
            "x={x}: observed {observed}, pmf {pmf}"
        );
    }
}

#[test]
fn every_participant_replays_the_same_committee() {
    let repo = repository(30);
    let class = class(7);
    for s in 0..200 {
        let a = elect(&repo, &class, &seed(s), 3, 2).unwrap();
        let b = elect(&repo.clone(), &class, &seed(s), 3, 2).unwrap();
        assert_eq!(a, b);
        let oracle = common::oracle_committee(&seed(s).0 .0, 30, 7);
        let got: Vec<usize> = a.peers.iter().map(|p| p.position.tx_index as usize).collect();
        assert_eq!(got, oracle);
    }
}
