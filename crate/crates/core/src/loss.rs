//! Provider loss accounting.
//!
//! Both metrics compare a provider's current position with the one frozen
//! when it joined. Divergence loss marks the reserves at the curve's spot
//! price; order loss marks them at what the resting bids would pay. In both,
//! a negative value is a loss for the provider.

use serde::{Deserialize, Serialize};

use crate::curve::PoolState;
use crate::error::{positive, Error, Result};
use crate::orders::Bid;
use crate::pool::JoinSnapshot;
use crate::types::BidId;

/// A resting bid as seen by the order-loss metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: BidId,
    pub price: f64,
}

impl From<&Bid> for Order {
    fn from(b: &Bid) -> Self {
        Order {
            id: b.id,
            price: b.price,
        }
    }
}

pub fn orders_of(bids: &[Bid]) -> Vec<Order> {
    bids.iter().map(Order::from).collect()
}

/// Position of one provider at join time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSnapshot {
    pub share0: f64,
    pub x0: f64,
    pub y0: f64,
    pub c0: f64,
    /// Always `c0 * y0 / x0`.
    pub price0: f64,
    pub orders0: Vec<Order>,
}

impl LossSnapshot {
    pub fn new(share0: f64, state0: PoolState, c0: f64, orders0: Vec<Order>) -> Result<Self> {
        let x0 = positive("x0", state0.x)?;
        let y0 = positive("y0", state0.y)?;
        let c0 = positive("c0", c0)?;
        Ok(LossSnapshot {
            share0,
            x0,
            y0,
            c0,
            price0: c0 * y0 / x0,
            orders0,
        })
    }

    pub fn from_join(join: &JoinSnapshot, orders0: Vec<Order>) -> Result<Self> {
        Self::new(
            join.share0,
            PoolState {
                x: join.x0,
                y: join.y0,
            },
            join.c0,
            orders0,
        )
    }

    fn value0(&self) -> f64 {
        self.share0 * (self.x0 + self.price0 * self.y0)
    }
}

/// `s * (x + p*y) - s0 * (x0 + p0*y0)` with `p = c*y/x`.
pub fn divergence_loss(
    snapshot: &LossSnapshot,
    share: f64,
    state: PoolState,
    c: f64,
) -> Result<f64> {
    let x = positive("x", state.x)?;
    let y = positive("y", state.y)?;
    let p = c * y / x;
    Ok(share * (x + p * y) - snapshot.value0())
}

/// Partial derivative of divergence loss in the provider's own constant:
/// `y^2 * s^2 * c / (x * c_own)`.
pub fn dl_sensitivity(share: f64, c_own: f64, c_aggregate: f64, state: PoolState) -> Result<f64> {
    let s = positive("share", share)?;
    let c_own = positive("c_own", c_own)?;
    let c = positive("c_aggregate", c_aggregate)?;
    let x = positive("x", state.x)?;
    let y = positive("y", state.y)?;
    Ok(y * y * s * s * c / (x * c_own))
}

/// Second prices of every order, aligned with `orders`.
///
/// An order's second price is the highest price at or below its own among
/// the other orders, or its own price when there is none. After sorting by
/// price, that is the own price when a neighbour ties, else the next lower.
pub fn second_prices(orders: &[Order]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..orders.len()).collect();
    idx.sort_by(|&a, &b| orders[b].price.total_cmp(&orders[a].price));
    let mut out = vec![0.0; orders.len()];
    for (rank, &i) in idx.iter().enumerate() {
        let p = orders[i].price;
        let tied = (rank > 0 && orders[idx[rank - 1]].price == p)
            || idx.get(rank + 1).is_some_and(|&j| orders[j].price == p);
        out[i] = if tied {
            p
        } else {
            idx.get(rank + 1).map_or(p, |&j| orders[j].price)
        };
    }
    out
}

pub fn second_price(id: BidId, orders: &[Order]) -> Result<f64> {
    let own = orders
        .iter()
        .find(|o| o.id == id)
        .ok_or(Error::Membership(id))?;
    Ok(orders
        .iter()
        .filter(|o| o.id != id && o.price <= own.price)
        .map(|o| o.price)
        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))))
        .unwrap_or(own.price))
}

/// `x` plus the sum of the `floor(y)` largest second prices.
pub fn min_profit(x: f64, y: f64, orders: &[Order]) -> f64 {
    let k = y.max(0.0).floor() as usize;
    let mut sp = second_prices(orders);
    sp.sort_by(|a, b| b.total_cmp(a));
    x + sp.iter().take(k).sum::<f64>()
}

/// `s0 * minProfit(x0, y0; O0) - s * minProfit(x, y; O)`.
pub fn order_loss(snapshot: &LossSnapshot, share: f64, state: PoolState, orders: &[Order]) -> f64 {
    snapshot.share0 * min_profit(snapshot.x0, snapshot.y0, &snapshot.orders0)
        - share * min_profit(state.x, state.y, orders)
}
