#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub fee_sat: u64,
    pub fee_usd: f64,
}

impl CostEstimate {
    /// Fee in whole cents, rounded half away from zero.
    pub fn usd_cents(&self) -> u64 {
        (self.fee_usd * 100.0).round() as u64
    }

    pub fn usd_display(&self) -> String {
        let cents = self.usd_cents();
        format!("{}.{:02}", cents / 100, cents % 100)
    }
}

pub fn estimate_cost(tx_size_bytes: u64, fee_rate_sat_per_byte: u64, btc_price_usd: f64) -> CostEstimate {
    let fee_sat = tx_size_bytes * fee_rate_sat_per_byte;
    CostEstimate {
        fee_sat,
        fee_usd: fee_sat as f64 * 1e-8 * btc_price_usd,
    }
}
