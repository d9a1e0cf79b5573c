//! Deterministic discrete-event engine.
//!
//! Within one tick the order is fixed: provider actions (by provider id),
//! the epoch tick, a pass of resting bids against the moved curve, per
//! provider metrics, then customer actions (by user id, each followed by a
//! pass of resting bids). Clearing runs at `clearing_time` and retrieval
//! one tick later.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clearing::{clear_market, Mechanism, Payee, Sale};
use crate::curve::PoolState;
use crate::error::{Error, Result};
use crate::loss::{divergence_loss, order_loss, orders_of, LossSnapshot};
use crate::orders::{Fill, OrderBook};
use crate::pool::{Payout, Pool, Trade};
use crate::types::{BidId, ProviderId, Timestamp, UserId};

use super::scenario::{Action, ActionKind, Agent, AgentKind, Policy, Scenario};
use super::trace::{EventKind, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProviderAccount {
    /// X and Y put into the pool.
    pub deposit_x: f64,
    pub deposit_y: f64,
    /// Reserves paid back at exit or retrieval.
    pub withdrawn_x: f64,
    pub withdrawn_y: f64,
    pub fees_credited: f64,
    pub fees_paid: f64,
    pub clearing_x: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UserAccount {
    /// Escrow deposited plus direct AMM payments.
    pub paid_in: f64,
    pub refunded: f64,
    pub units: u64,
}

/// Everything the run ends with; the verifier rebuilds this from the trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinalState {
    pub pool: PoolState,
    pub halted: bool,
    pub open_escrow: f64,
    pub fees_outstanding: f64,
    pub unsold_units: u64,
    pub providers: BTreeMap<ProviderId, ProviderAccount>,
    pub users: BTreeMap<UserId, UserAccount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub final_state: FinalState,
    pub hidden_bids: Vec<u64>,
}

impl RunOutput {
    pub fn public_trace(&self) -> Trace {
        self.trace.redacted(&self.hidden_bids)
    }
}

/// Runs the scenario with its own seed.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    run_with_seed(scenario, scenario.seed)
}

pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<RunOutput> {
    scenario.validate()?;
    let agents = compile_agents(scenario, seed)?;
    Engine::new(scenario, agents)?.execute()
}

/// An agent with its policy expanded into a concrete script.
#[derive(Debug, Clone)]
struct Script {
    id: u32,
    kind: AgentKind,
    actions: Vec<Action>,
    ask: Option<f64>,
    /// Stochastic scripts skip actions the market state makes impossible.
    lenient: bool,
}

/// Expands stochastic policies into scripts using one RNG stream per agent.
fn compile_agents(scenario: &Scenario, seed: u64) -> Result<Vec<Script>> {
    let schedule = scenario.schedule()?;
    let bounds = scenario.bounds()?;
    let mut scripts = Vec::with_capacity(scenario.agents.len());
    for (i, agent) in scenario.agents.iter().enumerate() {
        let Some(policy) = &agent.policy else {
            scripts.push(Script {
                id: agent.id,
                kind: agent.kind,
                actions: agent.actions.clone(),
                ask: agent.ask,
                lenient: false,
            });
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let owner = agent.kind.is_provider() && agent.id == scenario.pool.owner.0;
        let actions = if agent.kind.is_provider() {
            provider_script(policy, owner, schedule.times(), &bounds, &mut rng)
        } else {
            let window = (scenario.market.first_epoch, schedule.clearing_time());
            customer_script(agent, policy, window, &mut rng)
        };
        scripts.push(Script {
            id: agent.id,
            kind: agent.kind,
            actions,
            ask: agent.ask,
            lenient: true,
        });
    }
    Ok(scripts)
}

fn jitter(rng: &mut ChaCha8Rng, mean: f64, spread: f64) -> f64 {
    if spread == 0.0 {
        mean
    } else {
        mean * rng.random_range(1.0 - spread..1.0 + spread)
    }
}

fn provider_script(
    policy: &Policy,
    owner: bool,
    epochs: &[Timestamp],
    bounds: &crate::curve::Bounds,
    rng: &mut ChaCha8Rng,
) -> Vec<Action> {
    let draw = |rng: &mut ChaCha8Rng| {
        jitter(rng, policy.constant, policy.spread).clamp(bounds.lower(), bounds.upper())
    };
    let mut actions = Vec::new();
    let member = owner || policy.deposit > 0.0;
    for (k, &at) in epochs.iter().enumerate() {
        if k == 0 && !owner && policy.deposit > 0.0 {
            let constant = draw(rng);
            actions.push(Action {
                at,
                kind: ActionKind::Join {
                    deposit: policy.deposit,
                    constant,
                },
            });
            continue;
        }
        if !member {
            break;
        }
        if k > 0 && rng.random_bool(policy.exit_prob) {
            actions.push(Action {
                at,
                kind: ActionKind::Exit,
            });
            break;
        }
        let constant = draw(rng);
        actions.push(Action {
            at,
            kind: ActionKind::SetConstant { constant },
        });
    }
    actions
}

fn customer_script(
    agent: &Agent,
    policy: &Policy,
    (start, clearing): (Timestamp, Timestamp),
    rng: &mut ChaCha8Rng,
) -> Vec<Action> {
    let mut times: Vec<Timestamp> = (0..policy.arrivals)
        .map(|_| rng.random_range(start..clearing))
        .collect();
    times.sort_unstable();
    let valuation = jitter(rng, policy.valuation, policy.spread);
    let mut actions = Vec::new();
    let mut bid_price = None::<f64>;
    for at in times {
        let kind = match agent.kind {
            AgentKind::BargainHunter => match bid_price {
                None => {
                    bid_price = Some(valuation);
                    ActionKind::Bid {
                        price: valuation,
                        hidden: false,
                    }
                }
                Some(p) if rng.random_bool(policy.raise_prob) => {
                    let raised = p * (1.0 + rng.random_range(0.01..0.01 + policy.spread.max(0.01)));
                    bid_price = Some(raised);
                    ActionKind::Raise { bid: 0, price: raised }
                }
                Some(_) => continue,
            },
            AgentKind::Normal | AgentKind::HighFlyer => ActionKind::Buy {
                units: 1,
                limit: Some(valuation),
            },
            AgentKind::Provider => unreachable!("providers use provider_script"),
        };
        actions.push(Action { at, kind });
    }
    actions
}

/// Errors a stochastic script may run into through no fault of its own.
fn tolerable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyPool
            | Error::UnknownProvider(_)
            | Error::DuplicateProvider(_)
            | Error::UnknownBid(_)
            | Error::LockedOrder { .. }
            | Error::MarketClosed { .. }
            | Error::BidPriceTooLow { .. }
            | Error::InsufficientInventory { .. }
    )
}

struct Engine<'a> {
    scenario: &'a Scenario,
    scripts: Vec<Script>,
    pool: Pool,
    book: OrderBook,
    trace: Trace,
    snapshots: BTreeMap<ProviderId, LossSnapshot>,
    /// Bids placed by each user, in submission order.
    user_bids: BTreeMap<UserId, Vec<BidId>>,
    hidden: Vec<u64>,
    state: FinalState,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, mut scripts: Vec<Script>) -> Result<Self> {
        let p = &scenario.pool;
        let initial = PoolState::new(p.x, p.y);
        let schedule = scenario.schedule()?;
        let clearing = schedule.clearing_time();
        let pool = Pool::new(
            scenario.bounds()?,
            schedule,
            scenario.market.fee_rate,
            p.owner,
            initial,
            p.constant,
        )?;
        scripts.sort_by_key(|s| (s.kind.is_provider(), s.id));
        let mut snapshots = BTreeMap::new();
        snapshots.insert(p.owner, LossSnapshot::new(1.0, initial, p.constant, Vec::new())?);
        let mut state = FinalState::default();
        state.providers.insert(
            p.owner,
            ProviderAccount {
                deposit_x: p.x,
                deposit_y: p.y,
                ..Default::default()
            },
        );
        Ok(Engine {
            scenario,
            scripts,
            pool,
            book: OrderBook::new(scenario.market.min_bid, clearing),
            trace: Trace::default(),
            snapshots,
            user_bids: BTreeMap::new(),
            hidden: Vec::new(),
            state,
        })
    }

    fn emit(&mut self, e: TraceEvent) {
        self.trace.push(e);
    }

    fn pool_columns(&self, e: &mut TraceEvent) {
        let s = self.pool.state();
        e.pool_x = Some(s.x);
        e.pool_y = Some(s.y);
    }

    fn execute(mut self) -> Result<RunOutput> {
        let schedule = self.pool.schedule().clone();
        let clearing = schedule.clearing_time();
        let retrieval = schedule.retrieval_time();
        let start = schedule.times()[0];

        let mut init = TraceEvent::new(start, EventKind::Init);
        init.actor = Some(self.scenario.pool.owner.0);
        init.amount_x = Some(self.scenario.pool.x);
        init.amount_y = Some(self.scenario.pool.y);
        init.constant = Some(self.scenario.pool.constant);
        init.share = Some(1.0);
        self.pool_columns(&mut init);
        self.emit(init);

        let mut times: BTreeSet<Timestamp> = schedule.times().iter().copied().collect();
        for s in &self.scripts {
            times.extend(s.actions.iter().map(|a| a.at));
        }
        for t in times.into_iter().filter(|t| *t < clearing) {
            if schedule.is_epoch(t) {
                self.epoch(t)?;
            }
            self.customers(t)?;
        }
        self.clear(clearing)?;
        self.retrieve(retrieval);
        Ok(self.finish(retrieval))
    }

    fn actions_at(&self, provider: bool, t: Timestamp) -> Vec<(usize, Action)> {
        self.scripts
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind.is_provider() == provider)
            .flat_map(|(i, s)| s.actions.iter().filter(move |a| a.at == t).map(move |a| (i, a.clone())))
            .collect()
    }

    fn epoch(&mut self, t: Timestamp) -> Result<()> {
        for (i, action) in self.actions_at(true, t) {
            let (id, lenient) = (ProviderId(self.scripts[i].id), self.scripts[i].lenient);
            match self.provider_action(id, &action.kind, t) {
                Err(e) if lenient && tolerable(&e) => {}
                r => r.map_err(|e| e.at(t, format!("provider {id} {}", action.kind.name())))?,
            }
        }
        let receipt = self.pool.epoch_tick(t).map_err(|e| e.at(t, "tick"))?;
        let mut tick = TraceEvent::new(t, EventKind::Tick);
        tick.constant = Some(receipt.constant);
        self.pool_columns(&mut tick);
        self.emit(tick);
        self.match_bids(t);
        self.metrics(t)
    }

    fn provider_action(&mut self, id: ProviderId, kind: &ActionKind, t: Timestamp) -> Result<()> {
        match *kind {
            ActionKind::Join { deposit, constant } => {
                let r = self.pool.join(id, deposit, constant, t)?;
                let lp = self.pool.provider(id).expect("just joined");
                let snap = LossSnapshot::from_join(&lp.join_snapshot, orders_of(self.book.bids()))?;
                self.snapshots.insert(id, snap);
                let acct = self.state.providers.entry(id).or_default();
                acct.deposit_x += r.deposit_x;
                acct.deposit_y += r.deposit_y;
                let mut e = TraceEvent::new(t, EventKind::Join);
                e.actor = Some(id.0);
                e.amount_x = Some(r.deposit_x);
                e.amount_y = Some(r.deposit_y);
                e.constant = Some(constant);
                e.share = Some(r.share);
                self.pool_columns(&mut e);
                self.emit(e);
            }
            ActionKind::SetConstant { constant } => {
                self.pool.update_constant(id, constant, t)?;
                let mut e = TraceEvent::new(t, EventKind::SetConstant);
                e.actor = Some(id.0);
                e.constant = Some(constant);
                self.emit(e);
            }
            ActionKind::Exit => {
                let payout = self.pool.remove_liquidity(id, t)?;
                self.payout_event(t, EventKind::Exit, payout);
            }
            _ => unreachable!("validated: customer action on provider"),
        }
        Ok(())
    }

    fn payout_event(&mut self, t: Timestamp, kind: EventKind, p: Payout) {
        let acct = self.state.providers.entry(p.provider).or_default();
        acct.withdrawn_x += p.x;
        acct.withdrawn_y += p.y;
        acct.fees_paid += p.fees;
        let mut e = TraceEvent::new(t, kind);
        e.actor = Some(p.provider.0);
        e.amount_x = Some(p.x);
        e.amount_y = Some(p.y);
        e.fee = Some(p.fees);
        self.pool_columns(&mut e);
        self.emit(e);
    }

    fn metrics(&mut self, t: Timestamp) -> Result<()> {
        if self.pool.is_halted() {
            return Ok(());
        }
        let state = self.pool.state();
        let c = self.pool.curve().exponent();
        let orders = orders_of(self.book.bids());
        let rows: Vec<_> = self
            .pool
            .providers()
            .iter()
            .map(|p| {
                let snap = &self.snapshots[&p.id];
                let dl = divergence_loss(snap, p.share, state, c)?;
                let ol = order_loss(snap, p.share, state, &orders);
                Ok((p.id, p.share, dl, ol))
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| e.at(t, "metrics"))?;
        for (id, share, dl, ol) in rows {
            let mut e = TraceEvent::new(t, EventKind::Metric);
            e.actor = Some(id.0);
            e.share = Some(share);
            e.dl = Some(dl);
            e.order_loss = Some(ol);
            self.emit(e);
        }
        Ok(())
    }

    fn customers(&mut self, t: Timestamp) -> Result<()> {
        for (i, action) in self.actions_at(false, t) {
            let (id, lenient) = (UserId(self.scripts[i].id), self.scripts[i].lenient);
            match self.customer_action(id, &action.kind, t) {
                Err(e) if lenient && tolerable(&e) => {}
                r => r.map_err(|e| e.at(t, format!("user {id} {}", action.kind.name())))?,
            }
            self.match_bids(t);
        }
        Ok(())
    }

    fn customer_action(&mut self, user: UserId, kind: &ActionKind, t: Timestamp) -> Result<()> {
        match *kind {
            ActionKind::Bid { price, hidden } => {
                let id = self.book.submit_bid(user, price, t, hidden)?;
                self.user_bids.entry(user).or_default().push(id);
                if hidden {
                    self.hidden.push(id.0);
                }
                self.state.users.entry(user).or_default().paid_in += price;
                let mut e = TraceEvent::new(t, EventKind::BidSubmit);
                e.actor = Some(user.0);
                e.bid = Some(id.0);
                e.price = Some(price);
                e.amount_x = Some(price);
                self.emit(e);
            }
            ActionKind::Raise { bid, price } => {
                let id = self
                    .user_bids
                    .get(&user)
                    .and_then(|b| b.get(bid))
                    .copied()
                    .ok_or(Error::UnknownBid(BidId(bid as u64)))?;
                let top_up = self.book.raise_bid(id, price)?;
                self.state.users.entry(user).or_default().paid_in += top_up;
                let mut e = TraceEvent::new(t, EventKind::BidRaise);
                e.actor = Some(user.0);
                e.bid = Some(id.0);
                e.price = Some(price);
                e.amount_x = Some(top_up);
                self.emit(e);
            }
            ActionKind::Buy { units, limit } => {
                for _ in 0..units {
                    let Some(quote) = self.pool.quote(1) else { break };
                    if limit.is_some_and(|l| quote > l) {
                        break;
                    }
                    let trade = self.pool.buy_units(1)?;
                    let acct = self.state.users.entry(user).or_default();
                    acct.paid_in += trade.total();
                    acct.units += 1;
                    let mut e = TraceEvent::new(t, EventKind::AmmTrade);
                    e.actor = Some(user.0);
                    e.amount_x = Some(trade.cost);
                    e.amount_y = Some(1.0);
                    e.fee = Some(trade.fee);
                    self.pool_columns(&mut e);
                    self.emit(e);
                    self.fee_credits(t, &trade);
                }
            }
            _ => unreachable!("validated: provider action on customer"),
        }
        Ok(())
    }

    fn fee_credits(&mut self, t: Timestamp, trade: &Trade) {
        for &(p, credit) in &trade.credits {
            self.state.providers.entry(p).or_default().fees_credited += credit;
            let mut e = TraceEvent::new(t, EventKind::FeeCredit);
            e.actor = Some(p.0);
            e.fee = Some(credit);
            self.emit(e);
        }
    }

    fn match_bids(&mut self, t: Timestamp) {
        let fills: Vec<Fill> = self.book.match_against_amm(&mut self.pool);
        for f in fills {
            let acct = self.state.users.entry(f.user).or_default();
            acct.units += 1;
            acct.refunded += f.refund;
            let mut e = TraceEvent::new(t, EventKind::BidFill);
            e.actor = Some(f.user.0);
            e.bid = Some(f.bid.0);
            e.amount_x = Some(f.cost);
            e.amount_y = Some(1.0);
            e.fee = Some(f.fee);
            e.refund = Some(f.refund);
            self.emit(e);
            let trade = Trade {
                units: 1,
                cost: f.cost,
                fee: f.fee,
                credits: f.credits,
            };
            self.fee_credits(t, &trade);
        }
    }

    fn clear(&mut self, t: Timestamp) -> Result<()> {
        let m = &self.scenario.market;
        let ctx = |e: Error| e.at(t, "clearing");
        self.book.allocate_units(&self.pool, t).map_err(ctx)?;
        let owners: BTreeSet<_> = self.book.listings().iter().map(|l| l.owner).collect();
        for owner in owners {
            let ask = match m.mechanism {
                Mechanism::Dutch => m.floor,
                Mechanism::Matching => self
                    .scripts
                    .iter()
                    .find(|s| s.kind.is_provider() && s.id == owner.0)
                    .and_then(|s| s.ask)
                    .unwrap_or(m.floor),
            };
            self.book.set_owner_ask(owner, ask).map_err(ctx)?;
        }
        let snapshot = self.book.snapshot_for_clearing(&self.pool, t).map_err(ctx)?;
        let mut units = snapshot.units.clone();
        units.sort_by_key(|u| u.unit_id);
        for u in &units {
            let mut e = TraceEvent::new(t, EventKind::Listing);
            e.actor = Some(u.owner.0);
            e.unit = Some(u.unit_id.0);
            e.price = Some(u.ask);
            self.emit(e);
        }

        let report = clear_market(&snapshot, &self.pool.shares(), m.mechanism, m.floor, m.oracle)
            .map_err(ctx)?;
        let mut e = TraceEvent::new(t, EventKind::Clearing);
        e.greedy_weight = report.greedy_weight;
        e.exact_weight = report.exact_weight;
        e.amount_y = Some(snapshot.units.len() as f64);
        self.emit(e);

        for (kind, sales) in [
            (EventKind::ClearingFill, &report.sales),
            (EventKind::ResidualFill, &report.residual_sales),
        ] {
            for s in sales {
                self.sale(t, kind, s).map_err(ctx)?;
            }
        }
        for &(bid, _) in &report.refunds {
            let user = self.book.bid(bid).map(|b| b.user).ok_or(Error::UnknownBid(bid)).map_err(ctx)?;
            let refund = self.book.refund_bid(bid).map_err(ctx)?;
            self.state.users.entry(user).or_default().refunded += refund;
            let mut e = TraceEvent::new(t, EventKind::Refund);
            e.actor = Some(user.0);
            e.bid = Some(bid.0);
            e.refund = Some(refund);
            self.emit(e);
        }
        for (&p, &x) in &report.payouts {
            self.state.providers.entry(p).or_default().clearing_x += x;
            let mut e = TraceEvent::new(t, EventKind::ClearingPayout);
            e.actor = Some(p.0);
            e.amount_x = Some(x);
            self.emit(e);
        }
        self.state.unsold_units = self.book.listings().len() as u64;
        Ok(())
    }

    fn sale(&mut self, t: Timestamp, kind: EventKind, s: &Sale) -> Result<()> {
        let refund = self.book.settle_bid(s.bid, s.price)?;
        self.book.remove_listing(s.unit);
        self.pool.release_units(1);
        let acct = self.state.users.entry(s.user).or_default();
        acct.units += 1;
        acct.refunded += refund;
        let mut e = TraceEvent::new(t, kind);
        e.actor = Some(s.user.0);
        e.counterparty = match s.payee {
            Payee::Owner(p) => Some(p.0),
            Payee::ProRata => None,
        };
        e.bid = Some(s.bid.0);
        e.unit = Some(s.unit.0);
        e.price = Some(s.price);
        e.refund = Some(refund);
        self.emit(e);
        Ok(())
    }

    fn retrieve(&mut self, t: Timestamp) {
        let payouts = self.pool.retrieve_all(t);
        let last = payouts.len().saturating_sub(1);
        for (i, p) in payouts.into_iter().enumerate() {
            self.payout_event(t, EventKind::Retrieve, p);
            if i != last {
                // Only the last payout leaves the pool empty.
                let e = self.trace.events.last_mut().expect("just emitted");
                e.pool_x = None;
                e.pool_y = None;
            }
        }
    }

    fn finish(mut self, t: Timestamp) -> RunOutput {
        let mut end = TraceEvent::new(t, EventKind::End);
        self.pool_columns(&mut end);
        self.emit(end);
        self.state.pool = self.pool.state();
        self.state.halted = self.pool.is_halted();
        self.state.open_escrow = self.book.open_escrow();
        self.state.fees_outstanding = self.pool.total_fees_outstanding();
        RunOutput {
            trace: self.trace,
            final_state: self.state,
            hidden_bids: self.hidden,
        }
    }
}
