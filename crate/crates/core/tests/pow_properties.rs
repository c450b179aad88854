mod common;

use anonboot::hash::Hash256;
use anonboot::pow::{pow_solve, pow_verify, PowInput, PowParams, PowRegistry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solutions_verify(key in common::arb_key(), block in any::<[u8; 32]>(), start in any::<[u8; 8]>(), d in 0u32..=10) {
        let params = PowParams::new(d);
        let sol = pow_solve(&key, &Hash256(block), &params, start, u64::MAX).unwrap();
        let input = PowInput { connector_key: key, pulse_block_hash: Hash256(block), nonce: sol.nonce };
        prop_assert!(pow_verify(&input, &params).unwrap());
        for lower in 0..=d {
            prop_assert!(pow_verify(&input, &PowParams::new(lower)).unwrap());
        }
    }
}

#[test]
fn solutions_do_not_transfer_between_pulse_blocks() {
    let params = PowParams::new(16);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..100 {
        let key = common::key(rng.gen());
        let (a, b) = (Hash256(rng.gen()), Hash256(rng.gen()));
        let sol = pow_solve(&key, &a, &params, rng.gen(), u64::MAX).unwrap();
        let moved = PowInput {
            connector_key: key,
            pulse_block_hash: b,
            nonce: sol.nonce,
        };
        assert!(!pow_verify(&moved, &params).unwrap());
    }
}

#[test]
fn zero_difficulty_returns_the_start_nonce() {
    let sol = pow_solve(&common::key(1), &Hash256::ZERO, &PowParams::new(0), [0; 8], 1).unwrap();
    assert_eq!((sol.nonce, sol.attempts), ([0; 8], 1));
}

/// An operator with a fixed attempt budget per pulse, spending it on fresh
/// identities, lands about budget / 2^d of them.
#[test]
fn sybil_budget_bounds_identities() {
    let d = 6;
    let params = PowParams::new(d);
    let budget = 6400u64;
    let expected = budget as f64 / 2f64.powi(d as i32);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let pulses = 20;
    let mut total = 0u64;
    for _ in 0..pulses {
        let block = Hash256(rng.gen());
        let mut left = budget;
        while left > 0 {
            match PowRegistry::builtin().solve(&common::key(rng.gen()), &block, &params, rng.gen(), left) {
                Ok(sol) => {
                    total += 1;
                    left -= sol.attempts;
                }
                Err(_) => break,
            }
        }
    }
    let mean = total as f64 / pulses as f64;
    // identities per pulse are roughly Poisson(expected)
    let bound = 4.0 * expected.sqrt() / (pulses as f64).sqrt();
    assert!((mean - expected).abs() <= bound, "mean {mean}, expected {expected}");
}
