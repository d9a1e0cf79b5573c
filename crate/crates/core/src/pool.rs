//! Liquidity-provider registry and the epoch-driven curve controller.
//!
//! Providers each hold a share `s` of the reserves and publish a constant
//! `c_l` in `[a, b]`. At every epoch the curve exponent becomes the
//! share-weighted geometric mean of those constants and the curve is
//! re-anchored at the current reserves.

use serde::{Deserialize, Serialize};

use crate::curve::{Bounds, CurveParams, PoolState};
use crate::error::{positive, Error, Result};
use crate::types::{ProviderId, Timestamp};

/// Tolerance on `sum(shares) == 1`.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_FEE_RATE: f64 = 0.003;

/// Pool state captured when a provider joined, used for loss accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoinSnapshot {
    pub at: Timestamp,
    pub x0: f64,
    pub y0: f64,
    pub c0: f64,
    pub share0: f64,
    pub price0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityProvider {
    pub id: ProviderId,
    pub share: f64,
    pub constant: f64,
    pub join_snapshot: JoinSnapshot,
    pub fees_accrued: f64,
}

/// Uniform epoch times followed by the clearing and retrieval instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    times: Vec<Timestamp>,
    clearing_time: Timestamp,
    retrieval_time: Timestamp,
}

impl EpochSchedule {
    pub fn new(
        times: Vec<Timestamp>,
        clearing_time: Timestamp,
        retrieval_time: Timestamp,
    ) -> Result<Self> {
        let Some(&last) = times.last() else {
            return Err(Error::Schedule("no epoch times".into()));
        };
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schedule("epoch times not strictly increasing".into()));
        }
        if times.len() > 2 {
            let stride = times[1] - times[0];
            if times.windows(2).any(|w| w[1] - w[0] != stride) {
                return Err(Error::Schedule("epoch times not uniformly spaced".into()));
            }
        }
        if !(last < clearing_time && clearing_time < retrieval_time) {
            return Err(Error::Schedule(format!(
                "need last epoch {last} < clearing {clearing_time} < retrieval {retrieval_time}"
            )));
        }
        Ok(Self {
            times,
            clearing_time,
            retrieval_time,
        })
    }

    /// `count` epochs at `first + i * stride`; clearing one stride after the
    /// last epoch and retrieval one tick after clearing.
    pub fn uniform(first: Timestamp, stride: Timestamp, count: usize) -> Result<Self> {
        if stride == 0 || count == 0 {
            return Err(Error::Schedule("stride and count must be positive".into()));
        }
        let times: Vec<_> = (0..count as u64).map(|i| first + i * stride).collect();
        let clearing = times[count - 1] + stride;
        Self::new(times, clearing, clearing + 1)
    }

    pub fn times(&self) -> &[Timestamp] {
        &self.times
    }

    pub fn is_epoch(&self, t: Timestamp) -> bool {
        self.times.binary_search(&t).is_ok()
    }

    pub fn last_epoch(&self) -> Timestamp {
        *self.times.last().expect("schedule is nonempty")
    }

    pub fn clearing_time(&self) -> Timestamp {
        self.clearing_time
    }

    pub fn retrieval_time(&self) -> Timestamp {
        self.retrieval_time
    }
}

/// `c = prod c_l^{s_l}`, the share-weighted geometric mean.
///
/// A provider with zero share contributes exactly nothing and a sole
/// provider with share one contributes exactly its constant.
pub fn aggregate_constant(providers: &[LiquidityProvider]) -> Result<f64> {
    if providers.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(providers
        .iter()
        .filter(|p| p.share > 0.0)
        .map(|p| p.constant.powf(p.share))
        .product())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinReceipt {
    pub deposit_x: f64,
    pub deposit_y: f64,
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickReceipt {
    pub constant: f64,
    pub updates_applied: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub units: u64,
    /// X moved into reserves.
    pub cost: f64,
    /// X charged on top of `cost` and credited to providers.
    pub fee: f64,
    pub credits: Vec<(ProviderId, f64)>,
}

impl Trade {
    pub fn total(&self) -> f64 {
        self.cost + self.fee
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payout {
    pub provider: ProviderId,
    pub x: f64,
    pub y: f64,
    pub fees: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PendingUpdate {
    seq: u64,
    provider: ProviderId,
    constant_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    state: PoolState,
    curve: CurveParams,
    bounds: Bounds,
    providers: Vec<LiquidityProvider>,
    schedule: EpochSchedule,
    fee_rate: f64,
    clock: Timestamp,
    pending: Vec<PendingUpdate>,
    next_seq: u64,
    halted: bool,
}

impl Pool {
    /// Opens a pool funded entirely by `founder`, who holds share 1.
    pub fn new(
        bounds: Bounds,
        schedule: EpochSchedule,
        fee_rate: f64,
        founder: ProviderId,
        initial: PoolState,
        constant: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&fee_rate) {
            return Err(Error::Domain {
                what: "fee rate in [0, 1)",
                value: fee_rate,
            });
        }
        positive("initial x", initial.x)?;
        positive("initial y", initial.y)?;
        bounds.check(constant)?;
        let curve = CurveParams::anchored_at(constant, initial)?;
        let clock = schedule.times()[0];
        let founder = LiquidityProvider {
            id: founder,
            share: 1.0,
            constant,
            join_snapshot: JoinSnapshot {
                at: clock,
                x0: initial.x,
                y0: initial.y,
                c0: constant,
                share0: 1.0,
                price0: constant * initial.y / initial.x,
            },
            fees_accrued: 0.0,
        };
        Ok(Self {
            state: initial,
            curve,
            bounds,
            providers: vec![founder],
            schedule,
            fee_rate,
            clock,
            pending: Vec::new(),
            next_seq: 0,
            halted: false,
        })
    }

    pub fn state(&self) -> PoolState {
        self.state
    }

    pub fn curve(&self) -> &CurveParams {
        &self.curve
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    pub fn fee_rate(&self) -> f64 {
        self.fee_rate
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn providers(&self) -> &[LiquidityProvider] {
        &self.providers
    }

    pub fn provider(&self, id: ProviderId) -> Option<&LiquidityProvider> {
        self.providers.iter().find(|p| p.id == id)
    }

    pub fn shares(&self) -> Vec<(ProviderId, f64)> {
        self.providers.iter().map(|p| (p.id, p.share)).collect()
    }

    pub fn total_fees_outstanding(&self) -> f64 {
        self.providers.iter().map(|p| p.fees_accrued).sum()
    }

    /// Current instantaneous price `c y / x`.
    pub fn spot_price(&self) -> Option<f64> {
        (!self.halted).then(|| self.curve.exponent() * self.state.y / self.state.x)
    }

    /// Curve cost plus fee for the next `n` units, if the pool can sell them.
    pub fn quote(&self, n: u64) -> Option<f64> {
        if self.halted {
            return None;
        }
        let cost = self.curve.cost_to_buy_units(self.state, n).ok()?;
        Some(cost * (1.0 + self.fee_rate))
    }

    fn epoch_guard(&self, at: Timestamp) -> Result<()> {
        if at < self.clock {
            return Err(Error::StaleTime {
                at,
                clock: self.clock,
            });
        }
        if !self.schedule.is_epoch(at) {
            return Err(Error::NotAnEpoch(at));
        }
        Ok(())
    }

    fn index_of(&self, id: ProviderId) -> Result<usize> {
        self.providers
            .iter()
            .position(|p| p.id == id)
            .ok_or(Error::UnknownProvider(id))
    }

    fn recompute_curve(&mut self) -> Result<f64> {
        let raw = aggregate_constant(&self.providers)?;
        // The mean of values in [a, b] stays in [a, b]; clamp rounding only.
        let c = raw.clamp(self.bounds.lower(), self.bounds.upper());
        self.curve = self.curve.rebase(c, self.state, &self.bounds)?;
        Ok(c)
    }

    fn renormalize(&mut self) {
        let total: f64 = self.providers.iter().map(|p| p.share).sum();
        if total > 0.0 {
            for p in &mut self.providers {
                p.share /= total;
            }
        }
    }

    /// Admits a provider depositing `deposit_x` of X and the matching amount
    /// of Y at the current reserve ratio. Takes effect immediately.
    pub fn join(
        &mut self,
        id: ProviderId,
        deposit_x: f64,
        constant: f64,
        at: Timestamp,
    ) -> Result<JoinReceipt> {
        self.epoch_guard(at)?;
        self.bounds.check(constant)?;
        positive("deposit", deposit_x)?;
        if self.halted {
            return Err(Error::EmptyPool);
        }
        if self.provider(id).is_some() {
            return Err(Error::DuplicateProvider(id));
        }
        let PoolState { x, y } = self.state;
        let deposit_y = deposit_x * y / x;
        let share = deposit_x / (x + deposit_x);
        let scale = x / (x + deposit_x);
        for p in &mut self.providers {
            p.share *= scale;
        }
        self.state = PoolState::new(x + deposit_x, y + deposit_y);
        let slot = self.providers.partition_point(|p| p.id < id);
        self.providers.insert(
            slot,
            LiquidityProvider {
                id,
                share,
                constant,
                join_snapshot: JoinSnapshot {
                    at,
                    x0: 0.0,
                    y0: 0.0,
                    c0: 0.0,
                    share0: share,
                    price0: 0.0,
                },
                fees_accrued: 0.0,
            },
        );
        self.renormalize();
        let c = self.recompute_curve()?;
        self.clock = at;

        let state = self.state;
        let p = &mut self.providers[slot];
        p.join_snapshot = JoinSnapshot {
            at,
            x0: state.x,
            y0: state.y,
            c0: c,
            share0: p.share,
            price0: c * state.y / state.x,
        };
        Ok(JoinReceipt {
            deposit_x,
            deposit_y,
            share: p.share,
        })
    }

    /// Queues a new constant for `id`; it is applied at the epoch tick.
    pub fn update_constant(&mut self, id: ProviderId, constant: f64, at: Timestamp) -> Result<()> {
        self.epoch_guard(at)?;
        self.index_of(id)?;
        self.bounds.check(constant)?;
        self.pending.push(PendingUpdate {
            seq: self.next_seq,
            provider: id,
            constant_bits: constant.to_bits(),
        });
        self.next_seq += 1;
        self.clock = at;
        Ok(())
    }

    /// Applies queued updates in submission order and re-anchors the curve
    /// at the current reserves.
    pub fn epoch_tick(&mut self, at: Timestamp) -> Result<TickReceipt> {
        self.epoch_guard(at)?;
        self.clock = at;
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by_key(|u| u.seq);
        let mut applied = 0;
        for update in pending {
            // Providers that exited after queueing are ignored.
            if let Ok(i) = self.index_of(update.provider) {
                self.providers[i].constant = f64::from_bits(update.constant_bits);
                applied += 1;
            }
        }
        if self.halted {
            return Ok(TickReceipt {
                constant: self.curve.exponent(),
                updates_applied: applied,
            });
        }
        let constant = self.recompute_curve()?;
        Ok(TickReceipt {
            constant,
            updates_applied: applied,
        })
    }

    /// Credits `fee_rate * trade_x` to providers by share. Reserves are untouched.
    pub fn accrue_and_distribute_fees(&mut self, trade_x: f64) -> Vec<(ProviderId, f64)> {
        let fee = self.fee_rate * trade_x;
        if fee <= 0.0 {
            return Vec::new();
        }
        self.providers
            .iter_mut()
            .map(|p| {
                let credit = p.share * fee;
                p.fees_accrued += credit;
                (p.id, credit)
            })
            .collect()
    }

    /// Sells `n` whole units along the active curve.
    pub fn buy_units(&mut self, n: u64) -> Result<Trade> {
        if self.halted {
            return Err(Error::EmptyPool);
        }
        let cost = self.curve.cost_to_buy_units(self.state, n)?;
        self.state = PoolState::new(self.state.x + cost, self.state.y - n as f64);
        let credits = self.accrue_and_distribute_fees(cost);
        let fee = credits.iter().map(|(_, c)| c).sum::<f64>();
        Ok(Trade {
            units: n,
            cost,
            fee,
            credits,
        })
    }

    /// Pro-rata exit at an epoch: pays `(s x, s y)` plus accrued fees.
    pub fn remove_liquidity(&mut self, id: ProviderId, at: Timestamp) -> Result<Payout> {
        self.epoch_guard(at)?;
        let i = self.index_of(id)?;
        let p = self.providers.remove(i);
        let payout = Payout {
            provider: id,
            x: p.share * self.state.x,
            y: p.share * self.state.y,
            fees: p.fees_accrued,
        };
        self.clock = at;
        let remaining: f64 = self.providers.iter().map(|p| p.share).sum();
        if remaining <= 0.0 {
            // Zero-share stragglers keep their accrued fees until retrieval.
            let all = Payout {
                x: self.state.x,
                y: self.state.y,
                ..payout
            };
            self.state = PoolState::default();
            self.halted = true;
            return Ok(all);
        }
        self.state = PoolState::new(self.state.x - payout.x, self.state.y - payout.y);
        self.renormalize();
        self.recompute_curve()?;
        Ok(payout)
    }

    /// Pays every provider its share of the remaining reserves and fees and
    /// halts the pool. Used at retrieval time.
    pub fn retrieve_all(&mut self, at: Timestamp) -> Vec<Payout> {
        let state = self.state;
        let payouts = self
            .providers
            .iter()
            .map(|p| Payout {
                provider: p.id,
                x: p.share * state.x,
                y: p.share * state.y,
                fees: p.fees_accrued,
            })
            .collect();
        self.providers.clear();
        self.pending.clear();
        self.state = PoolState::default();
        self.halted = true;
        self.clock = self.clock.max(at);
        payouts
    }

    /// Removes `n` whole units from the reserves outside the curve (clearing
    /// hands units to buyers directly, not through a swap).
    pub(crate) fn release_units(&mut self, n: u64) {
        self.state.y -= n as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule() -> EpochSchedule {
        EpochSchedule::uniform(0, 10, 5).unwrap()
    }

    fn pool(x: f64, y: f64, c: f64) -> Pool {
        Pool::new(
            Bounds::new(0.25, 16.0).unwrap(),
            schedule(),
            0.0,
            ProviderId(1),
            PoolState::new(x, y),
            c,
        )
        .unwrap()
    }

    fn lp(id: u32, share: f64, constant: f64) -> LiquidityProvider {
        LiquidityProvider {
            id: ProviderId(id),
            share,
            constant,
            join_snapshot: JoinSnapshot {
                at: 0,
                x0: 1.0,
                y0: 1.0,
                c0: 1.0,
                share0: share,
                price0: 1.0,
            },
            fees_accrued: 0.0,
        }
    }

    fn share_sum(pool: &Pool) -> f64 {
        pool.providers().iter().map(|p| p.share).sum()
    }

    #[test]
    fn schedule_layout() {
        let s = schedule();
        assert_eq!(s.times(), &[0, 10, 20, 30, 40]);
        assert_eq!(s.clearing_time(), 50);
        assert_eq!(s.retrieval_time(), 51);
        assert!(EpochSchedule::new(vec![0, 10, 25], 30, 31).is_err());
        assert!(EpochSchedule::new(vec![0, 10], 10, 11).is_err());
        assert!(EpochSchedule::new(vec![], 10, 11).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_constant(&[lp(1, 1.0, 7.0)]).unwrap(), 7.0);

        let with_zero = aggregate_constant(&[lp(1, 0.5, 2.0), lp(2, 0.5, 8.0), lp(3, 0.0, 3.0)]);
        let without = aggregate_constant(&[lp(1, 0.5, 2.0), lp(2, 0.5, 8.0)]);
        assert_eq!(with_zero.unwrap(), without.as_ref().copied().unwrap());

        let c = without.unwrap();
        let cross = 2.0f64.powf(0.5) * 8.0f64.powf(0.5);
        assert!((c - 4.0).abs() < 1e-12);
        assert!((c - cross).abs() < 1e-12);

        assert!(matches!(aggregate_constant(&[]), Err(Error::EmptyPool)));
    }

    #[test]
    fn join_halves_shares() {
        let mut p = pool(100.0, 50.0, 1.0);
        let price_before = p.spot_price().unwrap();
        let r = p.join(ProviderId(2), 100.0, 1.0, 10).unwrap();
        assert_eq!(r.share, 0.5);
        assert_eq!(r.deposit_y, 50.0);
        assert_eq!(p.state(), PoolState::new(200.0, 100.0));
        assert_eq!(p.provider(ProviderId(1)).unwrap().share, 0.5);
        assert!((share_sum(&p) - 1.0).abs() < SHARE_SUM_TOLERANCE);
        assert!((p.spot_price().unwrap() - price_before).abs() / price_before < 1e-12);
        assert_eq!(p.curve().anchor(), p.state());
        let snap = p.provider(ProviderId(2)).unwrap().join_snapshot;
        assert_eq!((snap.x0, snap.y0, snap.c0), (200.0, 100.0, 1.0));
        assert!((snap.price0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tiny_join_leaves_shares() {
        let mut p = pool(100.0, 50.0, 1.0);
        p.join(ProviderId(2), 1e-12, 2.0, 0).unwrap();
        assert!((p.provider(ProviderId(1)).unwrap().share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn join_errors() {
        let mut p = pool(100.0, 50.0, 1.0);
        assert!(matches!(
            p.join(ProviderId(2), 10.0, 1.0, 5),
            Err(Error::NotAnEpoch(5))
        ));
        assert!(matches!(
            p.join(ProviderId(2), 10.0, 17.0, 10),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            p.join(ProviderId(1), 10.0, 1.0, 10),
            Err(Error::DuplicateProvider(_))
        ));
    }

    #[test]
    fn update_constant_examples() {
        let mut p = pool(100.0, 50.0, 1.0);
        p.update_constant(ProviderId(1), 1.0, 10).unwrap();
        p.epoch_tick(10).unwrap();
        assert_eq!(p.curve().exponent(), 1.0);

        p.update_constant(ProviderId(1), 3.0, 20).unwrap();
        assert_eq!(p.curve().exponent(), 1.0, "takes effect at the tick");
        p.epoch_tick(20).unwrap();
        assert!((p.curve().exponent() - 3.0).abs() < 1e-15);

        assert!(matches!(
            p.update_constant(ProviderId(9), 1.0, 30),
            Err(Error::UnknownProvider(_))
        ));
        assert!(matches!(
            p.update_constant(ProviderId(1), 1.0, 31),
            Err(Error::NotAnEpoch(31))
        ));
    }

    #[test]
    fn quarter_share_scales_aggregate() {
        // Founder keeps 0.75 at c=1, newcomer holds 0.25.
        let mut p = pool(300.0, 150.0, 1.0);
        p.join(ProviderId(2), 100.0, 1.0, 0).unwrap();
        p.epoch_tick(0).unwrap();
        let before = p.curve().exponent();
        p.update_constant(ProviderId(2), 16.0, 10).unwrap();
        p.epoch_tick(10).unwrap();
        assert!((p.curve().exponent() / before - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tick_with_two_providers() {
        let mut p = pool(100.0, 50.0, 2.0);
        p.join(ProviderId(2), 100.0, 8.0, 0).unwrap();
        let r = p.epoch_tick(0).unwrap();
        assert!((r.constant - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tick_without_changes_keeps_state_set() {
        let mut p = pool(100.0, 50.0, 2.0);
        p.buy_units(3).unwrap();
        let before = *p.curve();
        p.epoch_tick(10).unwrap();
        assert_eq!(p.curve().exponent(), before.exponent());
        assert!(before.contains(p.curve().anchor()));
        for x in [50.0, 120.0, 400.0] {
            let y = p.curve().eval(x).unwrap();
            assert!(before.residual(PoolState::new(x, y)) < 1e-9);
        }
    }

    #[test]
    fn updates_after_last_epoch_rejected() {
        let mut p = pool(100.0, 50.0, 1.0);
        p.epoch_tick(40).unwrap();
        assert!(p.update_constant(ProviderId(1), 2.0, 41).is_err());
        assert!(p.update_constant(ProviderId(1), 2.0, 50).is_err());
    }

    #[test]
    fn pending_updates_apply_in_order() {
        let mut p = pool(100.0, 50.0, 1.0);
        p.update_constant(ProviderId(1), 2.0, 10).unwrap();
        p.update_constant(ProviderId(1), 5.0, 10).unwrap();
        let r = p.epoch_tick(10).unwrap();
        assert_eq!(r.updates_applied, 2);
        assert!((r.constant - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fee_examples() {
        let mut p = pool(100.0, 50.0, 1.0);
        assert!(p.accrue_and_distribute_fees(200.0).is_empty());

        let mut p = Pool::new(
            Bounds::new(0.25, 16.0).unwrap(),
            schedule(),
            0.01,
            ProviderId(1),
            PoolState::new(60.0, 30.0),
            1.0,
        )
        .unwrap();
        p.join(ProviderId(2), 40.0, 1.0, 0).unwrap();
        let state = p.state();
        let credits = p.accrue_and_distribute_fees(200.0);
        assert_eq!(p.state(), state);
        assert!((credits[0].1 - 1.2).abs() < 1e-12);
        assert!((credits[1].1 - 0.8).abs() < 1e-12);
        assert!((credits.iter().map(|c| c.1).sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_provider_takes_whole_fee() {
        let mut p = Pool::new(
            Bounds::new(0.25, 16.0).unwrap(),
            schedule(),
            0.003,
            ProviderId(1),
            PoolState::new(100.0, 50.0),
            1.0,
        )
        .unwrap();
        let t = p.buy_units(1).unwrap();
        assert!((t.fee - 0.003 * t.cost).abs() < 1e-15);
        assert_eq!(p.provider(ProviderId(1)).unwrap().fees_accrued, t.fee);
        assert!(p.curve().contains(p.state()));
    }

    #[test]
    fn sole_provider_exit_halts() {
        let mut p = pool(100.0, 50.0, 1.0);
        let out = p.remove_liquidity(ProviderId(1), 10).unwrap();
        assert_eq!((out.x, out.y), (100.0, 50.0));
        assert!(p.is_halted());
        assert!(p.buy_units(1).is_err());
        assert!(p.epoch_tick(20).is_ok());
    }

    #[test]
    fn half_exit_and_rejoin() {
        let mut p = pool(100.0, 50.0, 1.0);
        p.join(ProviderId(2), 100.0, 2.0, 10).unwrap();
        let before = p.shares();
        let out = p.remove_liquidity(ProviderId(2), 20).unwrap();
        assert_eq!((out.x, out.y), (100.0, 50.0));
        assert!((share_sum(&p) - 1.0).abs() < SHARE_SUM_TOLERANCE);
        assert_eq!(p.curve().exponent(), 1.0);

        p.join(ProviderId(2), out.x, 2.0, 20).unwrap();
        for ((a, s), (b, t)) in before.iter().zip(p.shares()) {
            assert_eq!(*a, b);
            assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn exit_errors() {
        let mut p = pool(100.0, 50.0, 1.0);
        assert!(matches!(
            p.remove_liquidity(ProviderId(4), 10),
            Err(Error::UnknownProvider(_))
        ));
        assert!(matches!(
            p.remove_liquidity(ProviderId(1), 11),
            Err(Error::NotAnEpoch(11))
        ));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Join(f64, f64),
        Exit(usize),
        Update(usize, f64),
        Buy(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0.01f64..500.0, 0.25f64..16.0).prop_map(|(d, c)| Op::Join(d, c)),
            (0usize..8).prop_map(Op::Exit),
            (0usize..8, 0.25f64..16.0).prop_map(|(i, c)| Op::Update(i, c)),
            (1u64..4).prop_map(Op::Buy),
        ]
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(ops in prop::collection::vec(op(), 1..40)) {
            let mut p = Pool::new(
                Bounds::new(0.25, 16.0).unwrap(),
                EpochSchedule::uniform(0, 1, 64).unwrap(),
                0.003,
                ProviderId(0),
                PoolState::new(1000.0, 500.0),
                1.0,
            ).unwrap();
            let mut next_id = 1;
            for (t, op) in ops.into_iter().enumerate() {
                let t = t as u64;
                if p.is_halted() { break; }
                let ids: Vec<_> = p.providers().iter().map(|l| l.id).collect();
                match op {
                    Op::Join(d, c) => { p.join(ProviderId(next_id), d, c, t).unwrap(); next_id += 1; }
                    Op::Exit(i) => { p.remove_liquidity(ids[i % ids.len()], t).unwrap(); }
                    Op::Update(i, c) => { p.update_constant(ids[i % ids.len()], c, t).unwrap(); }
                    Op::Buy(n) => { let _ = p.buy_units(n); }
                }
                p.epoch_tick(t).unwrap();
                if !p.is_halted() {
                    prop_assert!((share_sum(&p) - 1.0).abs() <= SHARE_SUM_TOLERANCE);
                    let c = p.curve().exponent();
                    prop_assert!(p.bounds().contains(c));
                    prop_assert!(p.curve().contains(p.state()));
                }
            }
        }

        #[test]
        fn aggregate_within_bounds(
            parts in prop::collection::vec((0.0f64..1.0, 0.25f64..16.0), 1..10)
        ) {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            prop_assume!(total > 1e-9);
            let lps: Vec<_> = parts.iter().enumerate()
                .map(|(i, (s, c))| lp(i as u32, s / total, *c)).collect();
            let c = aggregate_constant(&lps).unwrap();
            let lo = parts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi = parts.iter().map(|p| p.1).fold(0.0, f64::max);
            prop_assert!(c >= lo * (1.0 - 1e-12) && c <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn zero_share_is_neutral(
            parts in prop::collection::vec((0.01f64..1.0, 0.25f64..16.0), 1..6),
            extra in 0.25f64..16.0,
        ) {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let mut lps: Vec<_> = parts.iter().enumerate()
                .map(|(i, (s, c))| lp(i as u32, s / total, *c)).collect();
            let before = aggregate_constant(&lps).unwrap();
            lps.push(lp(99, 0.0, extra));
            prop_assert_eq!(before, aggregate_constant(&lps).unwrap());
        }

        #[test]
        fn raising_a_constant_raises_aggregate(
            parts in prop::collection::vec((0.01f64..1.0, 0.25f64..8.0), 1..6),
            bump in 1.001f64..2.0,
        ) {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let mut lps: Vec<_> = parts.iter().enumerate()
                .map(|(i, (s, c))| lp(i as u32, s / total, *c)).collect();
            let before = aggregate_constant(&lps).unwrap();
            lps[0].constant *= bump;
            prop_assert!(aggregate_constant(&lps).unwrap() > before);
        }

        #[test]
        fn proportional_join_keeps_price(
            x in 1.0f64..1e4, y in 1.0f64..1e4, d in 0.01f64..1e4, c in 0.25f64..16.0,
        ) {
            let mut p = pool(x, y, c);
            let before = p.spot_price().unwrap();
            p.join(ProviderId(2), d, c, 0).unwrap();
            let after = p.spot_price().unwrap();
            prop_assert!((after - before).abs() / before <= 1e-12);
        }
    }
}
