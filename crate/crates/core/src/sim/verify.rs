//! Invariant checks over a finished run.
//!
//! The trace is replayed into an independent set of accounts: pool reserves,
//! fees held for providers, escrow per bid, and what every provider and user
//! has put in and taken out. Each event must move value between accounts
//! without creating or destroying any, and the replayed end state must
//! match what the engine reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::curve::PoolState;
use crate::error::Result;
use crate::types::{ProviderId, UserId};

use super::engine::{run, FinalState, ProviderAccount, UserAccount};
use super::scenario::Scenario;
use super::trace::{EventKind, Trace, TraceEvent};

/// Absolute tolerance, scaled by the magnitude of the quantities compared.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// Index of the offending event, when one can be named.
    pub event: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub events: usize,
    pub halted: bool,
}

impl VerifyReport {
    pub fn failure_count(&self) -> usize {
        self.checks.iter().map(|c| c.failures.len()).sum()
    }

    pub fn passed(&self) -> bool {
        self.failure_count() == 0
    }

    fn check(&mut self, name: &'static str) -> &mut Vec<Failure> {
        if let Some(i) = self.checks.iter().position(|c| c.name == name) {
            return &mut self.checks[i].failures;
        }
        self.checks.push(Check {
            name,
            failures: Vec::new(),
        });
        &mut self.checks.last_mut().expect("just pushed").failures
    }

    fn fail(&mut self, name: &'static str, event: Option<u64>, message: impl Into<String>) {
        self.check(name).push(Failure {
            event,
            message: message.into(),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events = {}", self.events)?;
        writeln!(f, "halted = {}", self.halted)?;
        writeln!(f, "failures = {}", self.failure_count())?;
        for c in &self.checks {
            let status = if c.failures.is_empty() { "ok" } else { "FAIL" };
            writeln!(f, "[{status}] {} ({} failures)", c.name, c.failures.len())?;
            for fl in c.failures.iter().take(20) {
                match fl.event {
                    Some(i) => writeln!(f, "    event {i}: {}", fl.message)?,
                    None => writeln!(f, "    {}", fl.message)?,
                }
            }
        }
        Ok(())
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= TOLERANCE * scale.max(1.0)
}

const CHECKS: &[&str] = &[
    "sequencing",
    "conservation_x",
    "conservation_y",
    "escrow",
    "fees",
    "clearing_prices",
    "clearance",
    "dutch_order",
    "approximation",
    "shares",
    "replay",
    "determinism",
];

#[derive(Debug, Default)]
struct Replay {
    pool: PoolState,
    /// Fee of the latest trade not yet credited.
    fees_pending: f64,
    fees_held: BTreeMap<ProviderId, f64>,
    escrow: BTreeMap<u64, f64>,
    /// Clearing sale proceeds not yet paid to providers.
    proceeds: f64,
    price: BTreeMap<u64, f64>,
    providers: BTreeMap<ProviderId, ProviderAccount>,
    users: BTreeMap<UserId, UserAccount>,
    listings: BTreeMap<u64, f64>,
    refunded_bids: BTreeSet<u64>,
    halted: bool,
    /// Largest magnitude seen, for scaling tolerances.
    scale: f64,
    /// X that entered from outside minus X paid back out.
    x_external: f64,
}

impl Replay {
    fn x_internal(&self) -> f64 {
        self.pool.x
            + self.fees_pending
            + self.fees_held.values().sum::<f64>()
            + self.escrow.values().sum::<f64>()
            + self.proceeds
    }

    fn see(&mut self, v: Option<f64>) -> f64 {
        let v = v.unwrap_or(0.0);
        self.scale = self.scale.max(v.abs());
        v
    }

    fn tol(&self) -> f64 {
        TOLERANCE * self.scale.max(1.0)
    }
}

/// Replays `trace` and checks every invariant. With `expected`, also checks
/// that the replayed end state equals the engine's.
pub fn verify_trace(trace: &Trace, expected: Option<&FinalState>) -> VerifyReport {
    let mut report = VerifyReport {
        events: trace.len(),
        ..Default::default()
    };
    for name in CHECKS {
        report.check(name);
    }
    if let Err(e) = trace.require_complete() {
        report.fail("sequencing", None, e.to_string());
        return report;
    }

    let mut r = Replay::default();
    let mut cx = Cursor::default();
    let mut last_time = 0;

    for (i, e) in trace.events.iter().enumerate() {
        let idx = Some(i as u64);
        if e.seq != i as u64 {
            report.fail("sequencing", idx, format!("seq {} at position {i}", e.seq));
        }
        if e.time < last_time {
            report.fail("sequencing", idx, format!("time {} after {last_time}", e.time));
        }
        last_time = e.time;

        // Fee credits must directly follow their trade.
        if e.kind != EventKind::FeeCredit {
            if let Some(j) = cx.pending_fee.take() {
                if r.fees_pending.abs() > r.tol() {
                    report.fail("fees", Some(j), format!("{} of the fee was never credited", r.fees_pending));
                }
            }
        }

        apply(&mut r, &mut cx, e, i, &mut report);

        if (r.x_internal() - r.x_external).abs() > r.tol() {
            report.fail(
                "conservation_x",
                idx,
                format!("X held {} but net inflow {}", r.x_internal(), r.x_external),
            );
            // Resynchronize so one bad event is reported once.
            r.x_external = r.x_internal();
        }
        if let Some(v) = e.pool_x {
            if (v - r.pool.x).abs() > r.tol() {
                report.fail("replay", idx, format!("pool_x column {v}, replay {}", r.pool.x));
                r.pool.x = v;
                r.x_external = r.x_internal();
            }
        }
        if let Some(v) = e.pool_y {
            if (v - r.pool.y).abs() > r.tol() {
                report.fail("conservation_y", idx, format!("pool_y column {v}, flows give {}", r.pool.y));
                r.pool.y = v;
            }
        }
    }

    for (&at, &total) in &cx.shares_at {
        if (total - 1.0).abs() > TOLERANCE {
            report.fail("shares", None, format!("shares at t={at} sum to {total}"));
        }
    }
    if r.halted && (r.pool.x.abs() > r.tol() || r.pool.y.abs() > r.tol()) {
        report.fail(
            "conservation_y",
            None,
            format!("pool retains ({}, {}) after retrieval", r.pool.x, r.pool.y),
        );
    }
    let deposited: f64 = r.providers.values().map(|a| a.deposit_y).sum();
    let withdrawn: f64 = r.providers.values().map(|a| a.withdrawn_y).sum();
    let bought = r.users.values().map(|a| a.units).sum::<u64>() as f64;
    if (deposited - withdrawn - bought - r.pool.y).abs() > r.tol() {
        report.fail(
            "conservation_y",
            None,
            format!("{deposited} units deposited but {withdrawn} withdrawn, {bought} bought, {} pooled", r.pool.y),
        );
    }
    if r.proceeds.abs() > r.tol() {
        report.fail("conservation_x", None, format!("{} of clearing proceeds never paid out", r.proceeds));
    }

    // Clearance: no unsold listing is covered by a refunded bid.
    let cheapest = r.listings.values().cloned().fold(f64::INFINITY, f64::min);
    for bid in &r.refunded_bids {
        let p = r.price.get(bid).copied().unwrap_or(0.0);
        if cheapest <= p {
            report.fail(
                "clearance",
                None,
                format!("bid {bid} at {p} refunded while a unit asks {cheapest}"),
            );
        }
    }
    if !r.escrow.is_empty() {
        report.fail("escrow", None, format!("{} bids still hold escrow at the end", r.escrow.len()));
    }

    report.halted = r.halted;
    if let Some(expected) = expected {
        compare_final(&r, expected, &mut report);
    }
    report
}

#[derive(Debug, Default)]
struct Cursor {
    dutch_last: Option<f64>,
    shares_at: BTreeMap<u64, f64>,
    pending_fee: Option<u64>,
}

fn apply(r: &mut Replay, cx: &mut Cursor, e: &TraceEvent, i: usize, report: &mut VerifyReport) {
    let idx = Some(i as u64);
    let actor = e.actor.unwrap_or(u32::MAX);
    let (p, u) = (ProviderId(actor), UserId(actor));
    let b = e.bid.unwrap_or(u64::MAX);
    let ax = r.see(e.amount_x);
    let ay = r.see(e.amount_y);
    let fee = r.see(e.fee);
    let refund = r.see(e.refund);
    let price = r.see(e.price);
    if refund < -r.tol() {
        report.fail("escrow", idx, format!("negative refund {refund}"));
    }
    match e.kind {
        EventKind::Init | EventKind::Join => {
            r.pool.x += ax;
            r.pool.y += ay;
            r.x_external += ax;
            let acct = r.providers.entry(p).or_default();
            acct.deposit_x += ax;
            acct.deposit_y += ay;
        }
        EventKind::Exit | EventKind::Retrieve => {
            r.pool.x -= ax;
            r.pool.y -= ay;
            r.x_external -= ax + fee;
            *r.fees_held.entry(p).or_default() -= fee;
            let acct = r.providers.entry(p).or_default();
            acct.withdrawn_x += ax;
            acct.withdrawn_y += ay;
            acct.fees_paid += fee;
            let emptied = e.pool_x == Some(0.0) && e.pool_y == Some(0.0);
            if e.kind == EventKind::Retrieve || emptied {
                r.halted = true;
            }
        }
        EventKind::SetConstant | EventKind::Tick | EventKind::End => {}
        EventKind::Listing => {
            r.listings.insert(e.unit.unwrap_or(u64::MAX), price);
        }
        EventKind::Metric => {
            *cx.shares_at.entry(e.time).or_default() += e.share.unwrap_or(0.0);
        }
        EventKind::AmmTrade => {
            r.pool.x += ax;
            r.pool.y -= ay;
            r.fees_pending += fee;
            r.x_external += ax + fee;
            cx.pending_fee = idx;
            let acct = r.users.entry(u).or_default();
            acct.paid_in += ax + fee;
            acct.units += ay as u64;
        }
        EventKind::FeeCredit => {
            r.fees_pending -= fee;
            *r.fees_held.entry(p).or_default() += fee;
            r.providers.entry(p).or_default().fees_credited += fee;
        }
        EventKind::BidSubmit | EventKind::BidRaise => {
            *r.escrow.entry(b).or_default() += ax;
            r.x_external += ax;
            r.users.entry(u).or_default().paid_in += ax;
            let held = r.escrow[&b];
            if (held - price).abs() > r.tol() {
                report.fail("escrow", idx, format!("bid {b} escrow {held} differs from price {price}"));
            }
            r.price.insert(b, price);
        }
        EventKind::BidFill => {
            let limit = r.price.get(&b).copied().unwrap_or(0.0);
            if ax + fee > limit + r.tol() {
                report.fail("clearing_prices", idx, format!("bid {b} paid {} above its limit {limit}", ax + fee));
            }
            close_bid(r, b, idx, report);
            r.pool.x += ax;
            r.pool.y -= ay;
            r.fees_pending += fee;
            r.x_external -= refund;
            cx.pending_fee = idx;
            let acct = r.users.entry(u).or_default();
            acct.units += ay as u64;
            acct.refunded += refund;
        }
        EventKind::ClearingFill | EventKind::ResidualFill => {
            let limit = r.price.get(&b).copied().unwrap_or(0.0);
            if price > limit + r.tol() {
                report.fail("clearing_prices", idx, format!("bid {b} at {limit} charged {price}"));
            }
            close_bid(r, b, idx, report);
            r.proceeds += price;
            r.x_external -= refund;
            r.pool.y -= 1.0;
            if e.unit.and_then(|unit| r.listings.remove(&unit)).is_none() {
                report.fail("clearance", idx, "sold a unit that was never listed or sold it twice");
            }
            if e.kind == EventKind::ClearingFill && e.counterparty.is_none() {
                if let Some(last) = cx.dutch_last.filter(|last| price > *last) {
                    report.fail("dutch_order", idx, format!("price {price} after {last}"));
                }
                cx.dutch_last = Some(price);
            }
            let acct = r.users.entry(u).or_default();
            acct.units += 1;
            acct.refunded += refund;
        }
        EventKind::Refund => {
            close_bid(r, b, idx, report);
            r.x_external -= refund;
            r.refunded_bids.insert(b);
            r.users.entry(u).or_default().refunded += refund;
        }
        EventKind::Clearing => {
            if let (Some(g), Some(x)) = (e.greedy_weight, e.exact_weight) {
                if g < 0.5 * x - TOLERANCE * x.abs().max(1.0) {
                    report.fail("approximation", idx, format!("greedy weight {g} below half of {x}"));
                }
            }
        }
        EventKind::ClearingPayout => {
            r.proceeds -= ax;
            r.x_external -= ax;
            r.providers.entry(p).or_default().clearing_x += ax;
        }
    }
}

/// Removes bid `b` from escrow; its balance leaves through the event's
/// other columns, which the conservation check then balances.
fn close_bid(r: &mut Replay, b: u64, idx: Option<u64>, report: &mut VerifyReport) {
    if r.escrow.remove(&b).is_none() {
        report.fail("escrow", idx, format!("bid {b} settled twice or never placed"));
    }
}

fn compare_final(r: &Replay, expected: &FinalState, report: &mut VerifyReport) {
    let scale = r.scale;
    let mut diff = |what: String, a: f64, b: f64| {
        if !close(a, b, scale) {
            report.fail("replay", None, format!("{what}: trace {a}, engine {b}"));
        }
    };
    diff("pool.x".into(), r.pool.x, expected.pool.x);
    diff("pool.y".into(), r.pool.y, expected.pool.y);
    let escrow: f64 = r.escrow.values().sum();
    diff("open_escrow".into(), escrow, expected.open_escrow);
    diff("fees_outstanding".into(), r.fees_held.values().sum(), expected.fees_outstanding);
    diff("unsold_units".into(), r.listings.len() as f64, expected.unsold_units as f64);
    let ids: BTreeSet<_> = r.providers.keys().chain(expected.providers.keys()).copied().collect();
    for id in ids {
        let a = r.providers.get(&id).copied().unwrap_or_default();
        let b = expected.providers.get(&id).copied().unwrap_or_default();
        diff(format!("provider {id} deposit_x"), a.deposit_x, b.deposit_x);
        diff(format!("provider {id} deposit_y"), a.deposit_y, b.deposit_y);
        diff(format!("provider {id} withdrawn_x"), a.withdrawn_x, b.withdrawn_x);
        diff(format!("provider {id} withdrawn_y"), a.withdrawn_y, b.withdrawn_y);
        diff(format!("provider {id} fees_credited"), a.fees_credited, b.fees_credited);
        diff(format!("provider {id} fees_paid"), a.fees_paid, b.fees_paid);
        diff(format!("provider {id} clearing_x"), a.clearing_x, b.clearing_x);
    }
    let ids: BTreeSet<_> = r.users.keys().chain(expected.users.keys()).copied().collect();
    for id in ids {
        let a = r.users.get(&id).copied().unwrap_or_default();
        let b = expected.users.get(&id).copied().unwrap_or_default();
        diff(format!("user {id} paid_in"), a.paid_in, b.paid_in);
        diff(format!("user {id} refunded"), a.refunded, b.refunded);
        diff(format!("user {id} units"), a.units as f64, b.units as f64);
    }
    if r.halted != expected.halted {
        report.fail("replay", None, format!("halted: trace {}, engine {}", r.halted, expected.halted));
    }
}

/// Runs the scenario twice, checks byte-identical traces, and verifies the
/// first run against its own end state.
pub fn verify(scenario: &Scenario) -> Result<VerifyReport> {
    let first = run(scenario)?;
    let second = run(scenario)?;
    let mut report = verify_trace(&first.trace, Some(&first.final_state));
    let (a, b) = (first.trace.to_csv_bytes(), second.trace.to_csv_bytes());
    if a != b {
        let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        report.fail("determinism", None, format!("reruns differ from byte {at}"));
    }
    Ok(report)
}
