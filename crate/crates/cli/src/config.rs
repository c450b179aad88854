//! TOML configuration. Every key is optional; command-line flags override
//! file values, which override built-in defaults.

use std::path::Path;

use anonboot::experiments::{InfiltrationConfig, Sampler, ThresholdMode};
use anonboot::hostchain::{Capacity, ChainConfig};
use anonboot::pow::PowParams;
use anonboot::pulse_state::PulseConfig;
use anyhow::{Context, Result};
use num_rational::Ratio;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub infiltration: InfiltrationSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub pulse_length: Option<u64>,
    pub negotiation_length: Option<u64>,
    pub difficulty_bits: Option<u32>,
    pub scheme_id: Option<String>,
    pub service_ttl: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub max_block_weight: Option<u64>,
    pub message_weight: Option<u64>,
    /// Decimal ("0.05") or fraction ("1/20").
    pub capacity: Option<String>,
    pub coinbase_weight: Option<u64>,
    pub filler_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiltrationSection {
    pub repository_size: Option<u64>,
    pub adversary_fractions: Option<Vec<f64>>,
    pub network_sizes: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub threshold: Option<String>,
    pub threshold_mode: Option<String>,
    pub sampler: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub pulses: Option<u64>,
    pub honest_peers: Option<u32>,
    pub adversarial_peers: Option<u32>,
    pub services: Option<u16>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn pulse_config(&self) -> PulseConfig {
        let d = PulseConfig::default();
        let p = &self.pulse;
        PulseConfig {
            pulse_length: p.pulse_length.unwrap_or(d.pulse_length),
            negotiation_length: p.negotiation_length.unwrap_or(d.negotiation_length),
            pow: PowParams {
                difficulty_bits: p.difficulty_bits.unwrap_or(d.pow.difficulty_bits),
                scheme_id: p.scheme_id.clone().unwrap_or(d.pow.scheme_id),
            },
            service_ttl: p.service_ttl.unwrap_or(d.service_ttl),
        }
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        let mut c = ChainConfig::default();
        let s = &self.chain;
        if let Some(v) = s.max_block_weight {
            c.max_block_weight = v;
        }
        if let Some(v) = s.message_weight {
            c.message_weight = v;
        }
        if let Some(v) = &s.capacity {
            c.capacity = parse_capacity(v)?;
        }
        if let Some(v) = s.coinbase_weight {
            c.coinbase_weight = v;
        }
        if let Some(v) = s.filler_ratio {
            c.filler.fill_ratio = v;
        }
        Ok(c)
    }

    pub fn infiltration_config(&self) -> Result<InfiltrationConfig> {
        let mut c = InfiltrationConfig::default();
        let s = &self.infiltration;
        if let Some(v) = s.repository_size {
            c.repository_size = v;
        }
        if let Some(v) = &s.adversary_fractions {
            c.adversary_fractions = v.clone();
        }
        if let Some(v) = &s.network_sizes {
            c.network_sizes = v.clone();
        }
        if let Some(v) = s.trials {
            c.trials = v;
        }
        if let Some(v) = &s.threshold {
            c.threshold = parse_ratio(v)?;
        }
        if let Some(v) = &s.threshold_mode {
            c.threshold_mode = parse_threshold_mode(v)?;
        }
        if let Some(v) = &s.sampler {
            c.sampler = parse_sampler(v)?;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        Ok(c)
    }
}

pub fn parse_capacity(s: &str) -> Result<Capacity> {
    s.parse::<Capacity>()
        .map_err(|e| anyhow::anyhow!("capacity {s:?}: {e}"))
}

pub fn parse_ratio(s: &str) -> Result<Ratio<u64>> {
    let c = parse_capacity(s)?;
    Ok(c.as_ratio())
}

pub fn parse_threshold_mode(s: &str) -> Result<ThresholdMode> {
    match s {
        "ceil" => Ok(ThresholdMode::Ceil),
        "floor" => Ok(ThresholdMode::Floor),
        _ => anyhow::bail!("threshold mode must be ceil or floor, got {s:?}"),
    }
}

pub fn parse_sampler(s: &str) -> Result<Sampler> {
    match s {
        "full" => Ok(Sampler::Full),
        "shortcut" => Ok(Sampler::Shortcut),
        _ => anyhow::bail!("sampler must be full or shortcut, got {s:?}"),
    }
}
