//! Run summary built from a trace alone.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

use super::trace::{EventKind, Trace, TraceEvent};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Volume {
    /// Units bought straight off the curve.
    pub amm_units: u64,
    /// Units bought by resting bids matched against the curve.
    pub bid_fill_units: u64,
    pub clearing_units: u64,
    pub residual_units: u64,
    /// X paid for all of the above, fees excluded.
    pub total_x: f64,
    pub total_fees: f64,
}

impl Volume {
    pub fn total_units(&self) -> u64 {
        self.amm_units + self.bid_fill_units + self.clearing_units + self.residual_units
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProviderSummary {
    pub id: u32,
    pub fees_credited: f64,
    pub fees_paid: f64,
    pub clearing_payout: f64,
    pub withdrawn_x: f64,
    pub withdrawn_y: f64,
    /// Last recorded metric row; absent if the provider never had one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_share: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_dl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_order_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClearingSummary {
    pub listed: u64,
    pub sold: u64,
    pub unsold: u64,
    pub refunds: u64,
    pub proceeds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greedy_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_weight: Option<f64>,
    /// greedy / exact; 1 when both are zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_ratio: Option<f64>,
}

/// Absolute gaps between amounts that must agree; all zero on a sound run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Reconciliation {
    /// Fees charged on trades vs fees credited to providers.
    pub fee_credit_gap: f64,
    /// Fees credited vs fees paid out at exit or retrieval.
    pub fee_payout_gap: f64,
    /// Clearing sale proceeds vs clearing payouts.
    pub clearing_payout_gap: f64,
}

impl Reconciliation {
    pub fn max_gap(&self) -> f64 {
        self.fee_credit_gap
            .max(self.fee_payout_gap)
            .max(self.clearing_payout_gap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub events: usize,
    pub start: u64,
    pub end: u64,
    pub halted: bool,
    pub volume: Volume,
    pub clearing: ClearingSummary,
    pub reconciliation: Reconciliation,
    pub providers: Vec<ProviderSummary>,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary fields are all representable")
    }
}

/// Aggregates a complete trace.
pub fn report(trace: &Trace) -> Result<Summary> {
    trace.require_complete()?;
    let mut s = Summary {
        events: trace.len(),
        start: trace.events[0].time,
        end: trace.events[trace.len() - 1].time,
        ..Default::default()
    };
    let mut providers: BTreeMap<u32, ProviderSummary> = BTreeMap::new();
    let mut fees_charged = 0.0;
    let mut retrieved = false;
    let v = &mut s.volume;
    let c = &mut s.clearing;

    for e in &trace.events {
        let x = e.amount_x.unwrap_or(0.0);
        let fee = e.fee.unwrap_or(0.0);
        match e.kind {
            EventKind::Init | EventKind::Join => {
                entry(&mut providers, e)?;
            }
            EventKind::AmmTrade | EventKind::BidFill => {
                if e.kind == EventKind::AmmTrade {
                    v.amm_units += 1;
                } else {
                    v.bid_fill_units += 1;
                }
                v.total_x += x;
                fees_charged += fee;
            }
            EventKind::FeeCredit => entry(&mut providers, e)?.fees_credited += fee,
            EventKind::Metric => {
                let p = entry(&mut providers, e)?;
                p.final_share = e.share;
                p.final_dl = e.dl;
                p.final_order_loss = e.order_loss;
            }
            EventKind::Listing => c.listed += 1,
            EventKind::Clearing => {
                c.greedy_weight = e.greedy_weight;
                c.exact_weight = e.exact_weight;
            }
            EventKind::ClearingFill | EventKind::ResidualFill => {
                if e.kind == EventKind::ClearingFill {
                    v.clearing_units += 1;
                } else {
                    v.residual_units += 1;
                }
                let price = e.price.unwrap_or(0.0);
                v.total_x += price;
                c.sold += 1;
                c.proceeds += price;
            }
            EventKind::Refund => c.refunds += 1,
            EventKind::ClearingPayout => entry(&mut providers, e)?.clearing_payout += x,
            EventKind::Exit | EventKind::Retrieve => {
                retrieved |= e.kind == EventKind::Retrieve;
                let p = entry(&mut providers, e)?;
                p.withdrawn_x += x;
                p.withdrawn_y += e.amount_y.unwrap_or(0.0);
                p.fees_paid += fee;
            }
            EventKind::SetConstant | EventKind::Tick | EventKind::BidSubmit | EventKind::BidRaise => {}
            EventKind::End => {
                s.halted = retrieved || (e.pool_x == Some(0.0) && e.pool_y == Some(0.0));
            }
        }
    }

    v.total_fees = fees_charged;
    c.unsold = c.listed.saturating_sub(c.sold);
    c.weight_ratio = match (c.greedy_weight, c.exact_weight) {
        (Some(_), Some(0.0)) => Some(1.0),
        (Some(g), Some(x)) => Some(g / x),
        _ => None,
    };
    let credited: f64 = providers.values().map(|p| p.fees_credited).sum();
    let paid: f64 = providers.values().map(|p| p.fees_paid).sum();
    let payouts: f64 = providers.values().map(|p| p.clearing_payout).sum();
    s.reconciliation = Reconciliation {
        fee_credit_gap: (fees_charged - credited).abs(),
        // Fees are only all paid once the pool has been wound up.
        fee_payout_gap: if s.halted { (credited - paid).abs() } else { 0.0 },
        clearing_payout_gap: (c.proceeds - payouts).abs(),
    };
    s.providers = providers.into_values().collect();
    Ok(s)
}

fn entry<'a>(
    providers: &'a mut BTreeMap<u32, ProviderSummary>,
    e: &TraceEvent,
) -> Result<&'a mut ProviderSummary> {
    let id = e
        .actor
        .ok_or_else(|| Error::IncompleteTrace(format!("`{}` event {} has no actor", e.kind, e.seq)))?;
    Ok(providers.entry(id).or_insert_with(|| ProviderSummary {
        id,
        ..Default::default()
    }))
}
