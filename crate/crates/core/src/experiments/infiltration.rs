use num_bigint::{BigInt, BigUint};
use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::election::{aggregate_requests, derive_seed, elect};
use crate::hash::{sha256, Hash256};
use crate::hostchain::{Block, Transaction};
use crate::pulse_state::{PeerRecord, PeerStats, Position};
use crate::wire::{encode_service_request, Capabilities, ConnectorKey, PeerAdvertisement, ServiceRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// `ceil(t_I * n)` adversarial members infiltrate.
    #[default]
    Ceil,
    /// `floor(t_I * n)`.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Spawn block, seed derivation and the election itself, per trial.
    #[default]
    Full,
    /// Plain uniform sample of `n` indices.
    Shortcut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfiltrationConfig {
    pub repository_size: u64,
    pub adversary_fractions: Vec<f64>,
    pub network_sizes: Vec<u64>,
    pub trials: u64,
    pub threshold: Ratio<u64>,
    pub threshold_mode: ThresholdMode,
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for InfiltrationConfig {
    fn default() -> Self {
        let mut fractions: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
        fractions.push(1.0 / 3.0);
        fractions.sort_by(f64::total_cmp);
        InfiltrationConfig {
            repository_size: 1000,
            adversary_fractions: fractions,
            network_sizes: vec![4, 16, 31, 100],
            trials: 100_000,
            threshold: Ratio::new(1, 3),
            threshold_mode: ThresholdMode::Ceil,
            sampler: Sampler::Full,
            seed: 0,
        }
    }
}

impl InfiltrationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if let Some(f) = self.adversary_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(format!("adversary fraction {f} outside [0, 1]"));
        }
        if let Some(n) = self
            .network_sizes
            .iter()
            .find(|&&n| n == 0 || n > self.repository_size || n > u16::MAX as u64)
        {
            return Err(format!(
                "network size {n} must lie in 1..={}",
                self.repository_size.min(u16::MAX as u64)
            ));
        }
        if self.threshold > Ratio::from_integer(1) {
            return Err("threshold must not exceed 1".into());
        }
        Ok(())
    }

    pub fn adversaries(&self, fraction: f64) -> u64 {
        (fraction * self.repository_size as f64).round() as u64
    }
}

pub fn threshold_count(n: u64, threshold: Ratio<u64>, mode: ThresholdMode) -> u64 {
    let scaled = threshold * n;
    match mode {
        ThresholdMode::Ceil => scaled.ceil().to_integer(),
        ThresholdMode::Floor => scaled.floor().to_integer(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    #[serde(rename = "f_R")]
    pub f_r: f64,
    pub n: u64,
    pub threshold_count: u64,
    pub trials: u64,
    pub infiltrated: u64,
    pub rate: f64,
    pub exact_rate: f64,
    pub robustness: f64,
    #[serde(skip)]
    pub adversaries: u64,
}

impl RobustnessRow {
    /// Monte Carlo standard error of the rate under the exact expectation.
    pub fn sigma(&self) -> f64 {
        (self.exact_rate * (1.0 - self.exact_rate) / self.trials as f64).sqrt()
    }

    pub fn within(&self, sigmas: f64) -> bool {
        (self.rate - self.exact_rate).abs() <= sigmas * self.sigma()
    }
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `Pr[X >= t]` for `X ~ Hypergeom(population, successes, draws)`, exactly.
pub fn exact_tail_ratio(population: u64, successes: u64, draws: u64, t: u64) -> BigRational {
    let total = binomial(population, draws);
    let mut hits = BigUint::zero();
    for x in t..=draws.min(successes) {
        hits += binomial(successes, x) * binomial(population - successes, draws - x);
    }
    BigRational::new(BigInt::from(hits), BigInt::from(total))
}

pub fn exact_tail(population: u64, successes: u64, draws: u64, t: u64) -> f64 {
    exact_tail_ratio(population, successes, draws, t)
        .to_f64()
        .expect("probability is finite")
}

fn trial_digest(seed: u64, cell: u64, trial: u64) -> Hash256 {
    sha256(&[
        b"infiltration",
        &seed.to_be_bytes(),
        &cell.to_be_bytes(),
        &trial.to_be_bytes(),
    ])
}

fn repository(size: u64) -> Vec<PeerRecord> {
    (0..size)
        .map(|i| {
            let mut key = [0u8; 33];
            key[0] = 0x02;
            key[25..].copy_from_slice(&i.to_be_bytes());
            let octets = (i as u32).to_be_bytes();
            PeerRecord {
                advertisement: PeerAdvertisement::new(
                    ConnectorKey(key),
                    (std::net::Ipv4Addr::new(10, octets[1], octets[2], octets[3]), 9001).into(),
                    1,
                    Capabilities::default(),
                ),
                position: Position {
                    height: 1,
                    tx_index: i as u32 + 1,
                },
                stats: PeerStats::first_seen(0),
            }
        })
        .collect()
}

/// Adversarial members in one committee drawn through the real election:
/// a spawn block carrying a trial-specific coinbase and one request.
fn full_trial(repo: &[PeerRecord], adversaries: u64, n: u64, digest: &Hash256) -> u64 {
    let mut nonce = [0u8; 8];
    nonce.copy_from_slice(&digest.0[..8]);
    let request = ServiceRequest::new(1, Capabilities::for_committee(n as u16), nonce);
    let script = encode_service_request(&request).expect("valid request");
    let mut coinbase = vec![0x51, b'c', b'b'];
    coinbase.extend_from_slice(&digest.0);
    let block = Block::assemble(
        1,
        Hash256::ZERO,
        vec![
            Transaction::new(coinbase, 400, 0),
            Transaction::new(script.to_bytes(), 901, 1),
        ],
    );
    let class = &aggregate_requests(&[request])[0];
    let seed = derive_seed(&block, class);
    let instance = elect(repo, class, &seed, 0, 1).expect("repository covers every network size");
    instance
        .peers
        .iter()
        .filter(|p| (p.position.tx_index as u64) <= adversaries)
        .count() as u64
}

fn shortcut_trial(size: u64, adversaries: u64, n: u64, digest: &Hash256) -> u64 {
    let mut rng = ChaCha8Rng::from_seed(digest.0);
    rand::seq::index::sample(&mut rng, size as usize, n as usize)
        .iter()
        .filter(|&i| (i as u64) < adversaries)
        .count() as u64
}

/// Runs every (fraction, network size) cell. Results depend only on the
/// configuration and seed, not on thread scheduling.
pub fn run_infiltration(config: &InfiltrationConfig) -> Result<Vec<RobustnessRow>, String> {
    config.validate()?;
    let repo = match config.sampler {
        Sampler::Full => repository(config.repository_size),
        Sampler::Shortcut => Vec::new(),
    };
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &f_r in &config.adversary_fractions {
        let adversaries = config.adversaries(f_r);
        for &n in &config.network_sizes {
            let t = threshold_count(n, config.threshold, config.threshold_mode);
            let infiltrated = (0..config.trials)
                .into_par_iter()
                .filter(|&trial| {
                    let digest = trial_digest(config.seed, cell, trial);
                    let a = match config.sampler {
                        Sampler::Full => full_trial(&repo, adversaries, n, &digest),
                        Sampler::Shortcut => shortcut_trial(config.repository_size, adversaries, n, &digest),
                    };
                    a >= t
                })
                .count() as u64;
            let rate = infiltrated as f64 / config.trials as f64;
            rows.push(RobustnessRow {
                f_r,
                n,
                threshold_count: t,
                trials: config.trials,
                infiltrated,
                rate,
                exact_rate: exact_tail(config.repository_size, adversaries, n, t),
                robustness: 1.0 - rate,
                adversaries,
            });
            cell += 1;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_counts() {
        let third = Ratio::new(1, 3);
        let ceil: Vec<_> = [4, 16, 31, 100]
            .iter()
            .map(|&n| threshold_count(n, third, ThresholdMode::Ceil))
            .collect();
        let floor: Vec<_> = [4, 16, 31, 100]
            .iter()
            .map(|&n| threshold_count(n, third, ThresholdMode::Floor))
            .collect();
        assert_eq!(ceil, vec![2, 6, 11, 34]);
        assert_eq!(floor, vec![1, 5, 10, 33]);
        assert_eq!(threshold_count(3, third, ThresholdMode::Ceil), 1);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(4, 5), BigUint::zero());
        assert_eq!(binomial(1000, 0), BigUint::one());
    }

    #[test]
    fn tail_edges() {
        assert_eq!(exact_tail(1000, 0, 100, 34), 0.0);
        assert_eq!(exact_tail(1000, 1000, 100, 34), 1.0);
        assert_eq!(exact_tail(1000, 250, 100, 0), 1.0);
        // one draw: tail is just K/N
        assert_eq!(exact_tail_ratio(10, 3, 1, 1), BigRational::new(3.into(), 10.into()));
    }

    #[test]
    fn default_grid() {
        let c = InfiltrationConfig::default();
        assert_eq!(c.adversary_fractions.len(), 12);
        assert_eq!(c.adversaries(1.0 / 3.0), 333);
        assert_eq!(c.adversaries(0.15), 150);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs() {
        let base = InfiltrationConfig::default();
        let bad = [
            InfiltrationConfig {
                trials: 0,
                ..base.clone()
            },
            InfiltrationConfig {
                adversary_fractions: vec![1.5],
                ..base.clone()
            },
            InfiltrationConfig {
                network_sizes: vec![1001],
                ..base.clone()
            },
        ];
        for c in bad {
            assert!(run_infiltration(&c).is_err());
        }
    }

    #[test]
    fn seed_fixes_the_table() {
        let c = InfiltrationConfig {
            repository_size: 60,
            adversary_fractions: vec![0.3],
            network_sizes: vec![10],
            trials: 200,
            ..Default::default()
        };
        let a = run_infiltration(&c).unwrap();
        assert_eq!(a, run_infiltration(&c).unwrap());
        assert_ne!(trial_digest(0, 0, 0), trial_digest(1, 0, 0));
    }
}
