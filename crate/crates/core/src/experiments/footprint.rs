use std::collections::VecDeque;

use serde::Serialize;

use crate::hostchain::{Capacity, ChainConfig, HostChain};
use crate::wire::{encode_peer_advertisement, Capabilities, ConnectorKey, PeerAdvertisement};

pub const DEFAULT_CAPACITIES: [(u64, u64); 5] = [(1, 20), (1, 10), (1, 4), (1, 2), (1, 1)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootprintRow {
    #[serde(serialize_with = "as_decimal")]
    pub capacity: Capacity,
    pub messages: u64,
    pub blocks: u64,
    /// Message slots left unused in those blocks.
    #[serde(skip)]
    pub spare_slots: u64,
}

fn as_decimal<S: serde::Serializer>(c: &Capacity, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(c.as_f64())
}

/// Mines `count` advertisements on a fresh chain per capacity and reports
/// how many blocks the queue needs to drain.
pub fn run_footprint(message_counts: &[u64], capacities: &[Capacity], base: &ChainConfig) -> Vec<FootprintRow> {
    let mut ad = PeerAdvertisement::new(
        ConnectorKey([2; 33]),
        "192.0.2.1:9001".parse().expect("literal address"),
        1,
        Capabilities::default(),
    );
    ad.nonce = [0; 8];
    let script = encode_peer_advertisement(&ad).expect("valid advertisement");

    let mut rows = Vec::new();
    for &capacity in capacities {
        let config = ChainConfig {
            capacity,
            ..base.clone()
        };
        for &count in message_counts {
            let mut chain = HostChain::new(0, &config);
            let mut queue: VecDeque<_> = std::iter::repeat_n(script.clone(), count as usize).collect();
            let mut slots = 0;
            while !queue.is_empty() {
                chain.mine_block(&mut queue, &config);
                slots += config.messages_per_block();
            }
            rows.push(FootprintRow {
                capacity,
                messages: count,
                blocks: chain.height(),
                spare_slots: slots - count,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_queue_needs_no_blocks() {
        let caps: Vec<_> = DEFAULT_CAPACITIES
            .iter()
            .map(|&(n, d)| Capacity::new(n, d).unwrap())
            .collect();
        for row in run_footprint(&[0], &caps, &ChainConfig::default()) {
            assert_eq!((row.blocks, row.spare_slots), (0, 0));
        }
    }

    #[test]
    fn blocks_match_ceiling_division() {
        let base = ChainConfig::default();
        let caps: Vec<_> = DEFAULT_CAPACITIES
            .iter()
            .map(|&(n, d)| Capacity::new(n, d).unwrap())
            .collect();
        for row in run_footprint(&[1, 500, 2500], &caps, &base) {
            let per = ChainConfig {
                capacity: row.capacity,
                ..base.clone()
            }
            .messages_per_block();
            assert_eq!(row.blocks, row.messages.div_ceil(per));
        }
    }
}
