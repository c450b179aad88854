//! Proof of work binding an advertisement to a connector key and a pulse block.
//!
//! The puzzle preimage is `connector_key (33) || pulse_block_hash (32) || nonce (8)`.
//! A nonce solves the puzzle when the scheme's digest of the preimage has at
//! least `difficulty_bits` leading zero bits. Schemes are looked up by id in a
//! [`PowRegistry`]; the built-in registry only knows `hash256` (double SHA-256).

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::hash::{hash256, Hash256};
use crate::wire::{ConnectorKey, CONNECTOR_KEY_LEN, NONCE_LEN};

pub const HASH256_SCHEME: &str = "hash256";
pub const PREIMAGE_LEN: usize = CONNECTOR_KEY_LEN + 32 + NONCE_LEN;
pub const MAX_DIFFICULTY_BITS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PowError {
    #[error("unknown PoW scheme `{0}`")]
    UnknownScheme(String),
    #[error("difficulty of {0} bits exceeds the 256-bit digest")]
    InvalidDifficulty(u32),
    #[error("no solution within {attempts} attempts")]
    BudgetExhausted { attempts: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PowParams {
    pub difficulty_bits: u32,
    pub scheme_id: String,
}

impl PowParams {
    pub fn new(difficulty_bits: u32) -> Self {
        PowParams {
            difficulty_bits,
            scheme_id: HASH256_SCHEME.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PowError> {
        if self.difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(PowError::InvalidDifficulty(self.difficulty_bits));
        }
        Ok(())
    }
}

impl Default for PowParams {
    fn default() -> Self {
        PowParams::new(16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowInput {
    pub connector_key: ConnectorKey,
    pub pulse_block_hash: Hash256,
    pub nonce: [u8; NONCE_LEN],
}

impl PowInput {
    pub fn preimage(&self) -> [u8; PREIMAGE_LEN] {
        let mut out = [0u8; PREIMAGE_LEN];
        out[..33].copy_from_slice(&self.connector_key.0);
        out[33..65].copy_from_slice(&self.pulse_block_hash.0);
        out[65..].copy_from_slice(&self.nonce);
        out
    }
}

/// A digest function usable as a PoW puzzle.
pub trait PowScheme: Send + Sync {
    fn digest(&self, preimage: &[u8]) -> Hash256;
}

/// Double SHA-256, the default CPU-bound scheme.
#[derive(Debug, Default, Clone, Copy)]
pub struct Hash256Scheme;

impl PowScheme for Hash256Scheme {
    fn digest(&self, preimage: &[u8]) -> Hash256 {
        hash256(&[preimage])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowSolution {
    pub nonce: [u8; NONCE_LEN],
    /// Candidates hashed, including the successful one.
    pub attempts: u64,
}

#[derive(Clone, Default)]
pub struct PowRegistry {
    schemes: HashMap<String, Arc<dyn PowScheme>>,
}

impl PowRegistry {
    /// Registry containing only the `hash256` scheme.
    pub fn with_builtin() -> Self {
        let mut reg = PowRegistry::default();
        reg.register(HASH256_SCHEME, Arc::new(Hash256Scheme));
        reg
    }

    /// Shared instance of [`PowRegistry::with_builtin`].
    pub fn builtin() -> &'static PowRegistry {
        static BUILTIN: OnceLock<PowRegistry> = OnceLock::new();
        BUILTIN.get_or_init(PowRegistry::with_builtin)
    }

    pub fn register(&mut self, id: &str, scheme: Arc<dyn PowScheme>) {
        self.schemes.insert(id.to_string(), scheme);
    }

    pub fn scheme(&self, id: &str) -> Result<&dyn PowScheme, PowError> {
        self.schemes
            .get(id)
            .map(|s| s.as_ref())
            .ok_or_else(|| PowError::UnknownScheme(id.to_string()))
    }

    pub fn verify(&self, input: &PowInput, params: &PowParams) -> Result<bool, PowError> {
        params.validate()?;
        let scheme = self.scheme(&params.scheme_id)?;
        Ok(meets_difficulty(scheme, input, params.difficulty_bits))
    }

    /// Sequential scan from `start_nonce` (as a big-endian counter, wrapping)
    /// for at most `max_attempts` candidates.
    pub fn solve(
        &self,
        connector_key: &ConnectorKey,
        pulse_block_hash: &Hash256,
        params: &PowParams,
        start_nonce: [u8; NONCE_LEN],
        max_attempts: u64,
    ) -> Result<PowSolution, PowError> {
        params.validate()?;
        let scheme = self.scheme(&params.scheme_id)?;
        let mut input = PowInput {
            connector_key: *connector_key,
            pulse_block_hash: *pulse_block_hash,
            nonce: start_nonce,
        };
        let mut counter = u64::from_be_bytes(start_nonce);
        for attempt in 1..=max_attempts {
            input.nonce = counter.to_be_bytes();
            if meets_difficulty(scheme, &input, params.difficulty_bits) {
                return Ok(PowSolution {
                    nonce: input.nonce,
                    attempts: attempt,
                });
            }
            counter = counter.wrapping_add(1);
        }
        Err(PowError::BudgetExhausted { attempts: max_attempts })
    }

    /// Splits the nonce space into `workers` interleaved strides. Returns some
    /// valid nonce; which one depends on scheduling.
    pub fn solve_parallel(
        &self,
        connector_key: &ConnectorKey,
        pulse_block_hash: &Hash256,
        params: &PowParams,
        start_nonce: [u8; NONCE_LEN],
        max_attempts: u64,
        workers: usize,
    ) -> Result<PowSolution, PowError> {
        params.validate()?;
        let scheme = self.scheme(&params.scheme_id)?;
        let workers = workers.max(1) as u64;
        let start = u64::from_be_bytes(start_nonce);
        let found = AtomicBool::new(false);
        let attempts = AtomicU64::new(0);
        let result: Mutex<Option<[u8; NONCE_LEN]>> = Mutex::new(None);
        let per_worker = max_attempts.div_ceil(workers);

        std::thread::scope(|s| {
            for w in 0..workers {
                let (found, attempts, result) = (&found, &attempts, &result);
                s.spawn(move || {
                    let mut input = PowInput {
                        connector_key: *connector_key,
                        pulse_block_hash: *pulse_block_hash,
                        nonce: [0; NONCE_LEN],
                    };
                    for i in 0..per_worker {
                        if found.load(Ordering::Relaxed) {
                            return;
                        }
                        input.nonce = start.wrapping_add(w).wrapping_add(i * workers).to_be_bytes();
                        attempts.fetch_add(1, Ordering::Relaxed);
                        if meets_difficulty(scheme, &input, params.difficulty_bits) {
                            found.store(true, Ordering::Relaxed);
                            result.lock().unwrap().get_or_insert(input.nonce);
                            return;
                        }
                    }
                });
            }
        });

        let attempts = attempts.into_inner();
        match result.into_inner().unwrap() {
            Some(nonce) => Ok(PowSolution { nonce, attempts }),
            None => Err(PowError::BudgetExhausted { attempts }),
        }
    }
}

fn meets_difficulty(scheme: &dyn PowScheme, input: &PowInput, bits: u32) -> bool {
    if bits == 0 {
        return true;
    }
    scheme.digest(&input.preimage()).leading_zero_bits() >= bits
}

/// Verifies against the built-in registry.
pub fn pow_verify(input: &PowInput, params: &PowParams) -> Result<bool, PowError> {
    PowRegistry::builtin().verify(input, params)
}

/// Solves against the built-in registry, see [`PowRegistry::solve`].
pub fn pow_solve(
    connector_key: &ConnectorKey,
    pulse_block_hash: &Hash256,
    params: &PowParams,
    start_nonce: [u8; NONCE_LEN],
    max_attempts: u64,
) -> Result<PowSolution, PowError> {
    PowRegistry::builtin().solve(connector_key, pulse_block_hash, params, start_nonce, max_attempts)
}
