//! A deterministic, append-only stand-in for the host blockchain.
//!
//! Blocks carry opaque scripts with a weight in weight units (WU). Each block
//! starts with a coinbase transaction, followed by as many queued AnonBoot
//! messages as the per-block capacity allows, followed by optional filler.
//! There is no host-chain PoW: the block hash is
//! `HASH256(height || prev_hash || merkle_root)`.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_rational::Ratio;
use thiserror::Error;

use crate::hash::{hash256, Hash256};
use crate::wire::{decode_script_bytes, Message, OpReturnScript};

pub const DEFAULT_MAX_BLOCK_WEIGHT: u64 = 4_000_000;
pub const DEFAULT_MESSAGE_WEIGHT: u64 = 901;
pub const DEFAULT_COINBASE_WEIGHT: u64 = 400;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("height {height} out of range (tip is {tip})")]
    OutOfRange { height: u64, tip: u64 },
    #[error("block at height {height} is already part of the chain")]
    Immutable { height: u64 },
    #[error("competing block at height {height}: fork detected")]
    ForkDetected { height: u64 },
    #[error("invalid block at height {height}: {reason}")]
    InvalidBlock { height: u64, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Share of a block's weight budget available to AnonBoot messages, in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Capacity(Ratio<u64>);

impl Capacity {
    pub const FULL: Capacity = Capacity(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self, String> {
        if denom == 0 || numer == 0 || numer > denom {
            return Err(format!("capacity {numer}/{denom} must lie in (0, 1]"));
        }
        Ok(Capacity(Ratio::new(numer, denom)))
    }

    /// Exact conversion through the shortest decimal representation of `c`,
    /// so `0.05` becomes 1/20 rather than the nearest binary fraction.
    pub fn from_f64(c: f64) -> Result<Self, String> {
        format!("{c}").parse()
    }

    pub fn as_ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `floor(c * weight)`.
    pub fn budget(&self, weight: u64) -> u64 {
        let num = weight as u128 * *self.0.numer() as u128;
        (num / *self.0.denom() as u128) as u64
    }
}

impl FromStr for Capacity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| format!("bad capacity `{s}`"))?;
            let d = d.trim().parse().map_err(|_| format!("bad capacity `{s}`"))?;
            return Capacity::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad capacity `{s}`"));
        }
        let denom = 10u64.pow(frac.len() as u32);
        let int: u64 = int.parse().map_err(|_| format!("bad capacity `{s}`"))?;
        let frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().unwrap() };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(|| format!("bad capacity `{s}`"))?;
        Capacity::new(numer, denom)
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

/// Opaque non-AnonBoot traffic added after the AnonBoot messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillerPolicy {
    /// Fraction of the weight left after messages to fill, in [0, 1].
    pub fill_ratio: f64,
    pub tx_weight: u64,
}

impl Default for FillerPolicy {
    fn default() -> Self {
        FillerPolicy {
            fill_ratio: 0.0,
            tx_weight: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub max_block_weight: u64,
    pub message_weight: u64,
    pub capacity: Capacity,
    pub coinbase_weight: u64,
    pub filler: FillerPolicy,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            max_block_weight: DEFAULT_MAX_BLOCK_WEIGHT,
            message_weight: DEFAULT_MESSAGE_WEIGHT,
            capacity: Capacity::FULL,
            coinbase_weight: DEFAULT_COINBASE_WEIGHT,
            filler: FillerPolicy::default(),
        }
    }
}

impl ChainConfig {
    pub fn with_capacity(capacity: Capacity) -> Self {
        ChainConfig {
            capacity,
            ..ChainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.message_weight == 0 || self.coinbase_weight == 0 || self.filler.tx_weight == 0 {
            return Err("transaction weights must be at least 1 WU".into());
        }
        if self.coinbase_weight + self.message_weight > self.max_block_weight {
            return Err("block weight limit cannot hold a coinbase and one message".into());
        }
        if !(0.0..=1.0).contains(&self.filler.fill_ratio) {
            return Err("filler ratio must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Weight available to AnonBoot messages in one block.
    pub fn message_budget(&self) -> u64 {
        self.capacity
            .budget(self.max_block_weight)
            .min(self.max_block_weight.saturating_sub(self.coinbase_weight))
    }

    pub fn messages_per_block(&self) -> u64 {
        self.message_budget() / self.message_weight
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub txid: Hash256,
    pub script: Vec<u8>,
    pub weight: u64,
    /// Chain-wide creation counter; keeps identical scripts distinct.
    pub counter: u64,
}

impl Transaction {
    pub fn new(script: Vec<u8>, weight: u64, counter: u64) -> Self {
        let txid = hash256(&[&script, &counter.to_be_bytes()]);
        Transaction {
            txid,
            script,
            weight,
            counter,
        }
    }

    /// Decodes the script as an AnonBoot message, `None` for any other script.
    pub fn anonboot_message(&self) -> Option<Message> {
        decode_script_bytes(&self.script).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash256,
    pub merkle_root: Hash256,
    pub block_hash: Hash256,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn assemble(height: u64, prev_hash: Hash256, txs: Vec<Transaction>) -> Self {
        let ids: Vec<Hash256> = txs.iter().map(|t| t.txid).collect();
        let merkle_root = merkle_root(&ids);
        Block {
            height,
            prev_hash,
            merkle_root,
            block_hash: header_hash(height, &prev_hash, &merkle_root),
            txs,
        }
    }

    pub fn weight(&self) -> u64 {
        self.txs.iter().map(|t| t.weight).sum()
    }

    pub fn message_count(&self) -> usize {
        self.txs.iter().filter(|t| t.anonboot_message().is_some()).count()
    }

    /// Recomputes Merkle root and header hash.
    pub fn check_integrity(&self) -> Result<(), ChainError> {
        let ids: Vec<Hash256> = self.txs.iter().map(|t| t.txid).collect();
        let bad = |reason: &str| ChainError::InvalidBlock {
            height: self.height,
            reason: reason.to_string(),
        };
        for tx in &self.txs {
            if tx.txid != hash256(&[&tx.script, &tx.counter.to_be_bytes()]) {
                return Err(bad("txid does not match script and counter"));
            }
            if tx.weight == 0 {
                return Err(bad("zero-weight transaction"));
            }
        }
        if merkle_root(&ids) != self.merkle_root {
            return Err(bad("merkle root mismatch"));
        }
        if header_hash(self.height, &self.prev_hash, &self.merkle_root) != self.block_hash {
            return Err(bad("block hash mismatch"));
        }
        Ok(())
    }
}

pub fn header_hash(height: u64, prev_hash: &Hash256, merkle_root: &Hash256) -> Hash256 {
    hash256(&[&height.to_be_bytes(), &prev_hash.0, &merkle_root.0])
}

/// Bitcoin-style binary Merkle root: parents are `HASH256(left || right)` and
/// an odd level duplicates its last node. The empty tree has an all-zero root.
pub fn merkle_root(txids: &[Hash256]) -> Hash256 {
    if txids.is_empty() {
        return Hash256::ZERO;
    }
    let mut level: Vec<Hash256> = txids.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                hash256(&[&pair[0].0, &right.0])
            })
            .collect();
    }
    level[0]
}

/// The entropy a block contributes to peer election: its Merkle root.
pub fn extract_entropy(block: &Block) -> Hash256 {
    block.merkle_root
}

/// Read access to a chain. `block_hash` models header-only access; `block`
/// is a full block read.
pub trait ChainView {
    fn tip_height(&self) -> u64;
    fn block(&self, height: u64) -> Result<&Block, ChainError>;
    fn block_hash(&self, height: u64) -> Result<Hash256, ChainError> {
        self.block(height).map(|b| b.block_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostChain {
    blocks: Vec<Block>,
    next_counter: u64,
    miner_tag: u64,
}

impl HostChain {
    /// A chain holding only a genesis block. `miner_tag` is written into every
    /// coinbase so that otherwise identical simulations yield distinct chains.
    pub fn new(miner_tag: u64, config: &ChainConfig) -> Self {
        let mut chain = HostChain {
            blocks: Vec::new(),
            next_counter: 0,
            miner_tag,
        };
        let coinbase = chain.coinbase(0, config);
        chain.blocks.push(Block::assemble(0, Hash256::ZERO, vec![coinbase]));
        chain
    }

    pub fn miner_tag(&self) -> u64 {
        self.miner_tag
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn get_block(&self, height: u64) -> Result<&Block, ChainError> {
        self.blocks.get(height as usize).ok_or(ChainError::OutOfRange {
            height,
            tip: self.height(),
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn coinbase(&mut self, height: u64, config: &ChainConfig) -> Transaction {
        let mut script = vec![0x51, b'c', b'b'];
        script.extend_from_slice(&height.to_be_bytes());
        script.extend_from_slice(&self.miner_tag.to_be_bytes());
        self.transaction(script, config.coinbase_weight)
    }

    fn transaction(&mut self, script: Vec<u8>, weight: u64) -> Transaction {
        let tx = Transaction::new(script, weight, self.next_counter);
        self.next_counter += 1;
        tx
    }

    /// Mines one block, taking messages from the front of `queue` while they
    /// fit into the AnonBoot budget. Messages that do not fit stay queued.
    pub fn mine_block(&mut self, queue: &mut VecDeque<OpReturnScript>, config: &ChainConfig) -> &Block {
        let height = self.height() + 1;
        let mut txs = vec![self.coinbase(height, config)];
        let budget = config.message_budget();
        let mut used = 0;
        while used + config.message_weight <= budget {
            let Some(script) = queue.pop_front() else { break };
            used += config.message_weight;
            let tx = self.transaction(script.to_bytes(), config.message_weight);
            txs.push(tx);
        }

        let spare = config.max_block_weight - config.coinbase_weight - used;
        let filler_weight = (spare as f64 * config.filler.fill_ratio) as u64;
        for _ in 0..filler_weight / config.filler.tx_weight {
            let mut script = vec![0x51, b'f'];
            script.extend_from_slice(&self.next_counter.to_be_bytes());
            let tx = self.transaction(script, config.filler.tx_weight);
            txs.push(tx);
        }

        let block = Block::assemble(height, self.tip().block_hash, txs);
        debug_assert!(block.weight() <= config.max_block_weight);
        self.blocks.push(block);
        self.tip()
    }

    /// Mines blocks until the chain reaches `height`.
    pub fn mine_to(&mut self, height: u64, queue: &mut VecDeque<OpReturnScript>, config: &ChainConfig) {
        while self.height() < height {
            self.mine_block(queue, config);
        }
    }

    /// Appends an externally built block after validating it. Blocks at or
    /// below the tip are never replaced.
    pub fn append(&mut self, block: Block) -> Result<(), ChainError> {
        if block.height <= self.height() {
            let existing = &self.blocks[block.height as usize];
            return Err(if existing.block_hash == block.block_hash {
                ChainError::Immutable { height: block.height }
            } else {
                ChainError::ForkDetected { height: block.height }
            });
        }
        if block.height != self.height() + 1 {
            return Err(ChainError::InvalidBlock {
                height: block.height,
                reason: format!("expected height {}", self.height() + 1),
            });
        }
        if block.prev_hash != self.tip().block_hash {
            return Err(ChainError::InvalidBlock {
                height: block.height,
                reason: "prev_hash does not link to the tip".into(),
            });
        }
        block.check_integrity()?;
        let max_counter = block.txs.iter().map(|t| t.counter).max();
        if let Some(c) = max_counter {
            self.next_counter = self.next_counter.max(c + 1);
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Independent copy of heights `0..=height`.
    pub fn prefix(&self, height: u64) -> Result<HostChain, ChainError> {
        self.get_block(height)?;
        let blocks = self.blocks[..=height as usize].to_vec();
        let next_counter = blocks
            .iter()
            .flat_map(|b| b.txs.iter().map(|t| t.counter + 1))
            .max()
            .unwrap_or(0);
        Ok(HostChain {
            blocks,
            next_counter,
            miner_tag: self.miner_tag,
        })
    }

    /// Full scan of Merkle roots, header hashes and prev-hash linkage.
    pub fn verify(&self) -> Result<(), ChainError> {
        for (i, block) in self.blocks.iter().enumerate() {
            if block.height != i as u64 {
                return Err(ChainError::InvalidBlock {
                    height: block.height,
                    reason: format!("stored at index {i}"),
                });
            }
            let expected_prev = if i == 0 {
                Hash256::ZERO
            } else {
                self.blocks[i - 1].block_hash
            };
            if block.prev_hash != expected_prev {
                return Err(ChainError::InvalidBlock {
                    height: block.height,
                    reason: "broken prev_hash linkage".into(),
                });
            }
            block.check_integrity()?;
        }
        Ok(())
    }

    /// One block per line:
    /// `height prev_hash merkle_root block_hash counter:weight:script_hex ...`
    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# anonboot-chain v1 miner_tag={}", self.miner_tag)?;
        for b in &self.blocks {
            write!(out, "{} {} {} {}", b.height, b.prev_hash, b.merkle_root, b.block_hash)?;
            for tx in &b.txs {
                write!(out, " {}:{}:{}", tx.counter, tx.weight, hex::encode(&tx.script))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(input: R) -> Result<HostChain, ChainError> {
        let mut chain: Option<HostChain> = None;
        let mut miner_tag = 0;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let perr = |reason: String| ChainError::Parse { line: lineno, reason };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(tag) = comment.split_whitespace().find_map(|w| w.strip_prefix("miner_tag=")) {
                    miner_tag = tag.parse().map_err(|_| perr("bad miner_tag".into()))?;
                }
                continue;
            }
            let mut fields = line.split_whitespace();
            let mut next = |name: &str| fields.next().ok_or_else(|| perr(format!("missing {name}")));
            let height: u64 = next("height")?.parse().map_err(|_| perr("bad height".into()))?;
            let prev_hash = Hash256::from_hex(next("prev_hash")?).map_err(|e| perr(e.to_string()))?;
            let merkle = Hash256::from_hex(next("merkle_root")?).map_err(|e| perr(e.to_string()))?;
            let hash = Hash256::from_hex(next("block_hash")?).map_err(|e| perr(e.to_string()))?;
            let mut txs = Vec::new();
            for field in fields {
                let mut parts = field.splitn(3, ':');
                let (Some(c), Some(w), Some(s)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(perr(format!("bad transaction `{field}`")));
                };
                let counter = c.parse().map_err(|_| perr("bad tx counter".into()))?;
                let weight = w.parse().map_err(|_| perr("bad tx weight".into()))?;
                let script = hex::decode(s).map_err(|e| perr(e.to_string()))?;
                txs.push(Transaction::new(script, weight, counter));
            }
            let block = Block {
                height,
                prev_hash,
                merkle_root: merkle,
                block_hash: hash,
                txs,
            };
            match chain.as_mut() {
                None => {
                    if height != 0 || prev_hash != Hash256::ZERO {
                        return Err(perr("first block must be genesis".into()));
                    }
                    block.check_integrity()?;
                    let next_counter = block.txs.iter().map(|t| t.counter + 1).max().unwrap_or(0);
                    chain = Some(HostChain {
                        blocks: vec![block],
                        next_counter,
                        miner_tag,
                    });
                }
                Some(c) => c.append(block)?,
            }
        }
        chain.ok_or(ChainError::Parse {
            line: 0,
            reason: "empty chain file".into(),
        })
    }
}

impl ChainView for HostChain {
    fn tip_height(&self) -> u64 {
        self.height()
    }

    fn block(&self, height: u64) -> Result<&Block, ChainError> {
        self.get_block(height)
    }
}
