//! Escrowed bid book and per-unit seller listings.
//!
//! Bids are locked: once placed they can only be raised. A bid executes
//! against the AMM as soon as the all-in price of the next unit drops to
//! its limit. Bids still resting at clearing time go to the clearing
//! mechanism together with one listing per remaining whole unit.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::Pool;
use crate::types::{BidId, ProviderId, Timestamp, UnitId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub id: BidId,
    pub user: UserId,
    /// Most X the user pays for one unit.
    pub price: f64,
    pub escrow: f64,
    pub submitted_at: Timestamp,
    pub hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitListing {
    pub unit_id: UnitId,
    pub owner: ProviderId,
    pub ask: f64,
}

/// Book order: price descending, then earlier submission, then lower id.
pub fn bid_priority(a: &Bid, b: &Bid) -> Ordering {
    b.price
        .total_cmp(&a.price)
        .then(a.submitted_at.cmp(&b.submitted_at))
        .then(a.id.cmp(&b.id))
}

/// Listing order: ask descending, then lower unit id (insertion order).
pub fn listing_priority(a: &UnitListing, b: &UnitListing) -> Ordering {
    b.ask.total_cmp(&a.ask).then(a.unit_id.cmp(&b.unit_id))
}

/// One bid executed against the AMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Fill {
    pub bid: BidId,
    pub user: UserId,
    pub cost: f64,
    pub fee: f64,
    pub refund: f64,
    pub credits: Vec<(ProviderId, f64)>,
}

impl Fill {
    pub fn paid(&self) -> f64 {
        self.cost + self.fee
    }
}

/// Running totals for escrow conservation:
/// `open + refunded + paid == submitted`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EscrowLedger {
    pub submitted: f64,
    pub refunded: f64,
    pub paid: f64,
}

/// Whole units and resting bids frozen at clearing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClearingSnapshot {
    pub units: Vec<UnitListing>,
    pub bids: Vec<Bid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderBook {
    bids: Vec<Bid>,
    listings: Vec<UnitListing>,
    min_bid: f64,
    clearing_time: Timestamp,
    next_bid: u64,
    frozen: bool,
    allocated: bool,
    ledger: EscrowLedger,
}

impl OrderBook {
    /// `min_bid` is the exclusive lower limit on bid prices (at least zero).
    pub fn new(min_bid: f64, clearing_time: Timestamp) -> Self {
        Self {
            bids: Vec::new(),
            listings: Vec::new(),
            min_bid: min_bid.max(0.0),
            clearing_time,
            next_bid: 0,
            frozen: false,
            allocated: false,
            ledger: EscrowLedger::default(),
        }
    }

    pub fn bids(&self) -> &[Bid] {
        &self.bids
    }

    pub fn bid(&self, id: BidId) -> Option<&Bid> {
        self.bids.iter().find(|b| b.id == id)
    }

    pub fn listings(&self) -> &[UnitListing] {
        &self.listings
    }

    pub fn ledger(&self) -> EscrowLedger {
        self.ledger
    }

    pub fn open_escrow(&self) -> f64 {
        self.bids.iter().map(|b| b.escrow).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn clearing_time(&self) -> Timestamp {
        self.clearing_time
    }

    fn resort(&mut self) {
        self.bids.sort_by(bid_priority);
    }

    fn position(&self, id: BidId) -> Result<usize> {
        self.bids
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBid(id))
    }

    /// Rests a new single-unit bid with its full price in escrow.
    pub fn submit_bid(
        &mut self,
        user: UserId,
        price: f64,
        now: Timestamp,
        hidden: bool,
    ) -> Result<BidId> {
        if self.frozen || now >= self.clearing_time {
            return Err(Error::MarketClosed {
                now,
                clearing_time: self.clearing_time,
            });
        }
        if !price.is_finite() || price <= self.min_bid {
            return Err(Error::BidPriceTooLow {
                price,
                minimum: self.min_bid,
            });
        }
        let id = BidId(self.next_bid);
        self.next_bid += 1;
        self.bids.push(Bid {
            id,
            user,
            price,
            escrow: price,
            submitted_at: now,
            hidden,
        });
        self.ledger.submitted += price;
        self.resort();
        Ok(id)
    }

    /// Raises a bid to `new_price`, topping up escrow. Returns the top-up.
    pub fn raise_bid(&mut self, id: BidId, new_price: f64) -> Result<f64> {
        if self.frozen {
            return Err(Error::BookFrozen);
        }
        let i = self.position(id)?;
        let bid = &mut self.bids[i];
        if !new_price.is_finite() || new_price <= bid.price {
            return Err(Error::LockedOrder {
                bid: id,
                current: bid.price,
            });
        }
        let top_up = new_price - bid.escrow;
        bid.price = new_price;
        bid.escrow = new_price;
        self.ledger.submitted += top_up;
        self.resort();
        Ok(top_up)
    }

    /// Bids cannot be withdrawn; this always fails for a known bid.
    pub fn withdraw_bid(&self, id: BidId) -> Result<()> {
        let bid = &self.bids[self.position(id)?];
        Err(Error::LockedOrder {
            bid: id,
            current: bid.price,
        })
    }

    /// Executes resting bids against the AMM, best first, while the best
    /// bid covers the all-in price of the next unit. Fills are charged the
    /// AMM price, never the bid price.
    pub fn match_against_amm(&mut self, pool: &mut Pool) -> Vec<Fill> {
        let mut fills = Vec::new();
        while let Some(top) = self.bids.first() {
            let Some(quote) = pool.quote(1) else { break };
            if top.price < quote {
                break;
            }
            let Ok(trade) = pool.buy_units(1) else { break };
            let bid = self.bids.remove(0);
            let refund = bid.escrow - trade.total();
            self.ledger.paid += trade.total();
            self.ledger.refunded += refund;
            fills.push(Fill {
                bid: bid.id,
                user: bid.user,
                cost: trade.cost,
                fee: trade.fee,
                refund,
                credits: trade.credits,
            });
        }
        fills
    }

    /// Splits the pool's remaining whole units among providers by share
    /// (largest remainder, ties to the lower provider id) and freezes the
    /// bid side. Listings start with ask 0.
    pub fn allocate_units(&mut self, pool: &Pool, now: Timestamp) -> Result<&[UnitListing]> {
        if now < self.clearing_time {
            return Err(Error::PrematureSnapshot {
                now,
                clearing_time: self.clearing_time,
            });
        }
        self.frozen = true;
        if self.allocated {
            return Ok(&self.listings);
        }
        self.allocated = true;
        let whole = if pool.is_halted() {
            0
        } else {
            (pool.state().y + 1e-9).floor().max(0.0) as u64
        };
        let counts = largest_remainder(&pool.shares(), whole);
        let mut next = 0u64;
        for (owner, count) in counts {
            for _ in 0..count {
                self.listings.push(UnitListing {
                    unit_id: UnitId(next),
                    owner,
                    ask: 0.0,
                });
                next += 1;
            }
        }
        self.listings.sort_by(listing_priority);
        Ok(&self.listings)
    }

    pub fn set_unit_ask(
        &mut self,
        owner: ProviderId,
        unit: UnitId,
        ask: f64,
    ) -> Result<UnitListing> {
        if !ask.is_finite() || ask < 0.0 {
            return Err(Error::Domain {
                what: "ask (nonnegative)",
                value: ask,
            });
        }
        let listing = self
            .listings
            .iter_mut()
            .find(|l| l.unit_id == unit && l.owner == owner)
            .ok_or(Error::Ownership {
                unit,
                claimed_by: owner,
            })?;
        listing.ask = ask;
        let updated = listing.clone();
        self.listings.sort_by(listing_priority);
        Ok(updated)
    }

    /// Sets the same ask on every unit `owner` holds.
    pub fn set_owner_ask(&mut self, owner: ProviderId, ask: f64) -> Result<usize> {
        let units: Vec<_> = self
            .listings
            .iter()
            .filter(|l| l.owner == owner)
            .map(|l| l.unit_id)
            .collect();
        for &unit in &units {
            self.set_unit_ask(owner, unit, ask)?;
        }
        Ok(units.len())
    }

    /// Copies the listings (ask descending) and open bids (price
    /// descending), allocating units first if that has not happened yet.
    pub fn snapshot_for_clearing(&mut self, pool: &Pool, now: Timestamp) -> Result<ClearingSnapshot> {
        self.allocate_units(pool, now)?;
        Ok(ClearingSnapshot {
            units: self.listings.clone(),
            bids: self.bids.clone(),
        })
    }

    /// Closes a bid that cleared at `paid`; the remainder of its escrow is refunded.
    pub fn settle_bid(&mut self, id: BidId, paid: f64) -> Result<f64> {
        let i = self.position(id)?;
        let bid = self.bids.remove(i);
        let refund = bid.escrow - paid;
        self.ledger.paid += paid;
        self.ledger.refunded += refund;
        Ok(refund)
    }

    /// Returns a bid's full escrow.
    pub fn refund_bid(&mut self, id: BidId) -> Result<f64> {
        self.settle_bid(id, 0.0)
    }

    /// Removes sold units from the listing set.
    pub fn remove_listing(&mut self, unit: UnitId) -> Option<UnitListing> {
        let i = self.listings.iter().position(|l| l.unit_id == unit)?;
        Some(self.listings.remove(i))
    }
}

/// Apportions `total` whole units by share with the largest-remainder rule.
/// Ties in the fractional part go to the lower provider id.
pub fn largest_remainder(shares: &[(ProviderId, f64)], total: u64) -> Vec<(ProviderId, u64)> {
    let mut sorted: Vec<_> = shares.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let quotas: Vec<f64> = sorted.iter().map(|(_, s)| s * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| (q + 1e-12).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);

    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - counts[i] as f64, quotas[j] - counts[j] as f64);
        if (ri - rj).abs() <= 1e-12 {
            sorted[i].0.cmp(&sorted[j].0)
        } else {
            rj.total_cmp(&ri)
        }
    });
    for &i in order.iter().cycle().take(sorted.len() * 2) {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    sorted
        .into_iter()
        .zip(counts)
        .map(|((id, _), n)| (id, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{Bounds, PoolState};
    use crate::pool::EpochSchedule;
    use proptest::prelude::*;

    fn pool(x: f64, y: f64) -> Pool {
        Pool::new(
            Bounds::new(0.5, 4.0).unwrap(),
            EpochSchedule::uniform(0, 10, 3).unwrap(),
            0.0,
            ProviderId(1),
            PoolState::new(x, y),
            1.0,
        )
        .unwrap()
    }

    fn book() -> OrderBook {
        OrderBook::new(0.0, 30)
    }

    #[test]
    fn bid_below_market_rests() {
        let mut p = pool(100.0, 50.0);
        let mut b = book();
        // Next unit costs ~2.04; a 1.5 bid stays put.
        b.submit_bid(UserId(1), 1.5, 0, false).unwrap();
        assert!(b.match_against_amm(&mut p).is_empty());
        assert_eq!(b.bids().len(), 1);
        assert_eq!(b.bids()[0].escrow, 1.5);
    }

    #[test]
    fn crossing_bid_fills_at_amm_price() {
        let mut p = pool(100.0, 50.0);
        let mut b = book();
        let expected = 5000.0 / 49.0 - 100.0;
        b.submit_bid(UserId(1), 3.0, 0, false).unwrap();
        let fills = b.match_against_amm(&mut p);
        assert_eq!(fills.len(), 1);
        assert!((fills[0].cost - expected).abs() < 1e-12);
        assert!((fills[0].refund - (3.0 - expected)).abs() < 1e-12);
        assert!((fills[0].refund - 0.9592).abs() < 1e-4);
        assert!(b.bids().is_empty());
        assert_eq!(p.state().y, 49.0);
    }

    #[test]
    fn high_bid_fills_once_then_rests() {
        // After one fill the next unit costs 5000/48 - 5000/49 ~ 2.126 < 10,
        // so a single bid of 10 only buys one unit (bids are single-unit).
        let mut p = pool(100.0, 50.0);
        let mut b = book();
        b.submit_bid(UserId(1), 10.0, 0, false).unwrap();
        let fills = b.match_against_amm(&mut p);
        assert_eq!(fills.len(), 1);
        assert!((fills[0].cost - 2.0408163265).abs() < 1e-9);
    }

    #[test]
    fn equal_bids_fill_in_submission_order() {
        // Pool with two units: only one unit can leave through the curve.
        let mut p = pool(100.0, 2.0);
        let mut b = book();
        let first = b.submit_bid(UserId(1), 300.0, 0, false).unwrap();
        let second = b.submit_bid(UserId(2), 300.0, 1, false).unwrap();
        let fills = b.match_against_amm(&mut p);
        assert_eq!(fills.len(), 1);
        assert_eq!(fills[0].bid, first);
        assert_eq!(b.bids()[0].id, second);
    }

    #[test]
    fn bid_at_clearing_time_rejected() {
        let mut b = book();
        assert!(matches!(
            b.submit_bid(UserId(1), 3.0, 30, false),
            Err(Error::MarketClosed { .. })
        ));
        assert!(matches!(
            b.submit_bid(UserId(1), 0.0, 0, false),
            Err(Error::BidPriceTooLow { .. })
        ));
        let mut b = OrderBook::new(0.5, 30);
        assert!(b.submit_bid(UserId(1), 0.5, 0, false).is_err());
        assert!(b.submit_bid(UserId(1), 0.51, 0, false).is_ok());
    }

    #[test]
    fn raise_rules() {
        let mut b = book();
        let id = b.submit_bid(UserId(1), 3.0, 0, false).unwrap();
        assert!(matches!(b.raise_bid(id, 3.0), Err(Error::LockedOrder { .. })));
        assert!(matches!(b.raise_bid(id, 2.0), Err(Error::LockedOrder { .. })));
        assert!(matches!(b.withdraw_bid(id), Err(Error::LockedOrder { .. })));
        assert_eq!(b.raise_bid(id, 4.0).unwrap(), 1.0);
        assert_eq!(b.bid(id).unwrap().escrow, 4.0);
        assert!(matches!(
            b.raise_bid(BidId(99), 5.0),
            Err(Error::UnknownBid(_))
        ));
    }

    #[test]
    fn raised_bid_executes_when_price_falls() {
        let mut p = pool(100.0, 50.0);
        let mut b = book();
        let id = b.submit_bid(UserId(1), 1.0, 0, false).unwrap();
        b.raise_bid(id, 1.9).unwrap();
        assert!(b.match_against_amm(&mut p).is_empty());
        // Raising the exponent flattens x(y) = (k/y)^(1/c): the next unit gets cheaper.
        p.update_constant(ProviderId(1), 4.0, 10).unwrap();
        p.epoch_tick(10).unwrap();
        let oracle = (p.curve().invariant() / 49.0).powf(1.0 / 4.0) - 100.0;
        assert!(oracle < 1.9);
        let fills = b.match_against_amm(&mut p);
        assert_eq!(fills.len(), 1);
        assert!((fills[0].cost - oracle).abs() < 1e-9);
        assert!((fills[0].refund - (1.9 - oracle)).abs() < 1e-9);
    }

    #[test]
    fn listing_order_and_ownership() {
        let p = pool(100.0, 2.0);
        let mut b = book();
        assert!(matches!(
            b.allocate_units(&p, 29),
            Err(Error::PrematureSnapshot { .. })
        ));
        let units: Vec<_> = b.allocate_units(&p, 30).unwrap().to_vec();
        assert_eq!(units.len(), 2);
        assert!(b.set_unit_ask(ProviderId(1), units[0].unit_id, 3.0).is_ok());
        assert!(b.set_unit_ask(ProviderId(1), units[1].unit_id, 5.0).is_ok());
        let asks: Vec<_> = b.listings().iter().map(|l| l.ask).collect();
        assert_eq!(asks, vec![5.0, 3.0]);
        assert!(b.set_unit_ask(ProviderId(1), units[0].unit_id, 0.0).is_ok());
        assert!(matches!(
            b.set_unit_ask(ProviderId(2), units[0].unit_id, 1.0),
            Err(Error::Ownership { .. })
        ));
        assert!(matches!(
            b.submit_bid(UserId(1), 1.0, 10, false),
            Err(Error::MarketClosed { .. })
        ));
    }

    #[test]
    fn largest_remainder_examples() {
        let a = largest_remainder(&[(ProviderId(1), 0.6), (ProviderId(2), 0.4)], 10);
        assert_eq!(a, vec![(ProviderId(1), 6), (ProviderId(2), 4)]);
        let a = largest_remainder(&[(ProviderId(2), 0.5), (ProviderId(1), 0.5)], 5);
        assert_eq!(a, vec![(ProviderId(1), 3), (ProviderId(2), 2)]);
        let a = largest_remainder(&[(ProviderId(1), 1.0)], 0);
        assert_eq!(a, vec![(ProviderId(1), 0)]);
    }

    #[test]
    fn snapshot_without_bids() {
        let p = pool(100.0, 3.0);
        let mut b = book();
        let snap = b.snapshot_for_clearing(&p, 30).unwrap();
        assert!(snap.bids.is_empty());
        assert_eq!(snap.units.len(), 3);
    }

    #[derive(Debug, Clone)]
    enum Action {
        Submit(f64),
        Raise(usize, f64),
        Tick(f64),
    }

    proptest! {
        #[test]
        fn escrow_and_book_invariants(
            actions in prop::collection::vec(prop_oneof![
                (0.1f64..6.0).prop_map(Action::Submit),
                (0usize..16, 0.01f64..3.0).prop_map(|(i, d)| Action::Raise(i, d)),
                (0.5f64..4.0).prop_map(Action::Tick),
            ], 1..60),
        ) {
            let mut p = Pool::new(
                Bounds::new(0.5, 4.0).unwrap(),
                EpochSchedule::uniform(0, 1, 100).unwrap(),
                0.003,
                ProviderId(1),
                PoolState::new(100.0, 40.0),
                1.0,
            ).unwrap();
            let mut b = OrderBook::new(0.0, 100);
            let mut history: std::collections::BTreeMap<BidId, Vec<f64>> = Default::default();
            for (t, a) in actions.into_iter().enumerate() {
                let t = t as u64;
                match a {
                    Action::Submit(price) => {
                        let id = b.submit_bid(UserId(t as u32), price, t, false).unwrap();
                        history.entry(id).or_default().push(price);
                    }
                    Action::Raise(i, d) => {
                        if !b.bids().is_empty() {
                            let bid = b.bids()[i % b.bids().len()].clone();
                            b.raise_bid(bid.id, bid.price + d).unwrap();
                            history.entry(bid.id).or_default().push(bid.price + d);
                        }
                    }
                    Action::Tick(c) => {
                        p.update_constant(ProviderId(1), c, t).unwrap();
                        p.epoch_tick(t).unwrap();
                    }
                }
                let fills = b.match_against_amm(&mut p);
                for f in &fills {
                    let last = *history[&f.bid].last().unwrap();
                    prop_assert!(f.paid() <= last + 1e-12);
                    prop_assert!(f.refund >= -1e-12);
                }
                let l = b.ledger();
                prop_assert!((b.open_escrow() + l.refunded + l.paid - l.submitted).abs() <= 1e-9);
                if let (Some(top), Some(q)) = (b.bids().first(), p.quote(1)) {
                    prop_assert!(top.price < q);
                }
                prop_assert!(b.bids().windows(2).all(|w| bid_priority(&w[0], &w[1]).is_le()));
                for bid in b.bids() {
                    prop_assert!(bid.escrow >= bid.price);
                }
            }
            for prices in history.values() {
                prop_assert!(prices.windows(2).all(|w| w[1] > w[0]));
            }
        }

        #[test]
        fn largest_remainder_sums(
            raw in prop::collection::vec(0.0f64..1.0, 1..8),
            total in 0u64..200,
        ) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let shares: Vec<_> = raw.iter().enumerate()
                .map(|(i, s)| (ProviderId(i as u32), s / sum)).collect();
            let counts = largest_remainder(&shares, total);
            prop_assert_eq!(counts.iter().map(|c| c.1).sum::<u64>(), total);
            for ((_, s), (_, n)) in shares.iter().zip(&counts) {
                prop_assert!((*n as f64 - s * total as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
