//! End-of-life market clearing.
//!
//! Two mechanisms share one snapshot of whole units `U` and resting bids `B`:
//!
//! - a uniform Dutch auction that sells to the highest bids first and splits
//!   every payment across providers by share;
//! - the auction-graph mechanism: unit `u` and bid `b` are adjacent iff
//!   `ask(u) <= price(b)`, the edge weighs `ask(u)`, and a matching sells each
//!   matched unit to its bid at the ask, paying the unit's owner.
//!
//! The production matching is the single-pass greedy that walks both sides
//! in descending price order. It is maximal and at least half the optimum;
//! the exact solvers here exist to check that.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orders::{bid_priority, listing_priority, Bid, ClearingSnapshot, UnitListing};
use crate::types::{BidId, ProviderId, UnitId, UserId};

/// Default vertex cap for [`ExactMode::Exhaustive`].
pub const EXHAUSTIVE_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Dutch,
    Matching,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Dutch => "dutch",
            Mechanism::Matching => "matching",
        })
    }
}

/// Who receives the X from a clearing sale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payee {
    Owner(ProviderId),
    ProRata,
}

impl fmt::Display for Payee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payee::Owner(id) => id.fmt(f),
            Payee::ProRata => f.write_str("*"),
        }
    }
}

/// A unit sold to a bid during clearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sale {
    pub unit: UnitId,
    pub bid: BidId,
    pub user: UserId,
    pub price: f64,
    pub payee: Payee,
    pub refund: f64,
}

fn sorted_bids(bids: &[Bid]) -> Vec<Bid> {
    let mut b = bids.to_vec();
    b.sort_by(bid_priority);
    b
}

fn sorted_units(units: &[UnitListing]) -> Vec<UnitListing> {
    let mut u = units.to_vec();
    u.sort_by(listing_priority);
    u
}

fn add_pro_rata(payouts: &mut BTreeMap<ProviderId, f64>, shares: &[(ProviderId, f64)], amount: f64) {
    for &(id, s) in shares {
        *payouts.entry(id).or_default() += s * amount;
    }
}

// ---------------------------------------------------------------------------
// Uniform Dutch auction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DutchOutcome {
    /// In execution order; prices are nonincreasing.
    pub sales: Vec<Sale>,
    pub payouts: BTreeMap<ProviderId, f64>,
    pub refunds: Vec<(BidId, f64)>,
    pub unsold: Vec<UnitListing>,
}

/// Sells one unit to the best remaining bid while both sides are nonempty
/// and the best bid meets `floor`; each sale pays every provider `s * price`.
pub fn dutch_auction(
    units: &[UnitListing],
    bids: &[Bid],
    shares: &[(ProviderId, f64)],
    floor: f64,
) -> DutchOutcome {
    let units = sorted_units(units);
    let bids = sorted_bids(bids);
    let mut out = DutchOutcome::default();
    let mut supply = units.into_iter();
    let mut bid_iter = bids.into_iter();

    for bid in bid_iter.by_ref() {
        if bid.price < floor {
            out.refunds.push((bid.id, bid.escrow));
            break;
        }
        let Some(unit) = supply.next() else {
            out.refunds.push((bid.id, bid.escrow));
            break;
        };
        add_pro_rata(&mut out.payouts, shares, bid.price);
        out.sales.push(Sale {
            unit: unit.unit_id,
            bid: bid.id,
            user: bid.user,
            price: bid.price,
            payee: Payee::ProRata,
            refund: bid.escrow - bid.price,
        });
    }
    out.refunds
        .extend(bid_iter.map(|b| (b.id, b.escrow)));
    out.unsold = supply.collect();
    out
}

// ---------------------------------------------------------------------------
// Auction graph and matchings
// ---------------------------------------------------------------------------

/// Bipartite graph on listings and bids; edges are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionGraph {
    units: Vec<UnitListing>,
    bids: Vec<Bid>,
}

impl AuctionGraph {
    pub fn units(&self) -> &[UnitListing] {
        &self.units
    }

    pub fn bids(&self) -> &[Bid] {
        &self.bids
    }

    pub fn has_edge(&self, unit: usize, bid: usize) -> bool {
        self.units[unit].ask <= self.bids[bid].price
    }

    pub fn weight(&self, unit: usize) -> f64 {
        self.units[unit].ask
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.units.len())
            .flat_map(move |u| (0..self.bids.len()).map(move |b| (u, b)))
            .filter(|&(u, b)| self.has_edge(u, b))
    }

    pub fn edge_count(&self) -> usize {
        // Units sorted by ask desc and bids by price desc: count per unit via
        // the number of bids priced at or above its ask.
        self.units
            .iter()
            .map(|u| self.bids.partition_point(|b| b.price >= u.ask))
            .sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.units.len() + self.bids.len()
    }

    fn pair(&self, unit: usize, bid: usize) -> MatchedPair {
        MatchedPair {
            unit: self.units[unit].unit_id,
            bid: self.bids[bid].id,
            price: self.units[unit].ask,
        }
    }
}

pub fn build_auction_graph(units: &[UnitListing], bids: &[Bid]) -> AuctionGraph {
    AuctionGraph {
        units: sorted_units(units),
        bids: sorted_bids(bids),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub unit: UnitId,
    pub bid: BidId,
    /// Settlement price: the unit's ask.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
}

impl Matching {
    pub fn weight(&self) -> f64 {
        self.pairs.iter().map(|p| p.price).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub matching: Matching,
    /// Unmatched units, skipped ones returned to the pool (`U <- U u U'`).
    pub remaining_units: Vec<UnitListing>,
    pub remaining_bids: Vec<Bid>,
    /// Loop iterations executed; at most `|U| + |B|`.
    pub iterations: usize,
}

/// Single-pass greedy matching over the implicit auction graph.
///
/// Repeatedly takes the highest-ask unit and the highest bid: matches them
/// when the bid covers the ask, otherwise sets the unit aside. Stops once
/// no edge is left, i.e. the cheapest remaining unit costs more than the
/// best remaining bid. Ties go to the lower id.
pub fn greedy_matching(units: &[UnitListing], bids: &[Bid]) -> GreedyOutcome {
    let units = sorted_units(units);
    let bids = sorted_bids(bids);
    let mut matching = Matching::default();
    let mut skipped = Vec::new();
    let (mut u, mut b) = (0usize, 0usize);
    let mut iterations = 0usize;

    // The remaining sides are always suffixes of the sorted lists, so the
    // graph has an edge iff the last (cheapest) unit fits under bids[b].
    let has_edge = |u: usize, b: usize| {
        u < units.len() && b < bids.len() && units[units.len() - 1].ask <= bids[b].price
    };
    while has_edge(u, b) {
        iterations += 1;
        if units[u].ask <= bids[b].price {
            matching.pairs.push(MatchedPair {
                unit: units[u].unit_id,
                bid: bids[b].id,
                price: units[u].ask,
            });
            b += 1;
        } else {
            skipped.push(units[u].clone());
        }
        u += 1;
    }

    let mut remaining_units = skipped;
    remaining_units.extend_from_slice(&units[u..]);
    remaining_units.sort_by(listing_priority);
    GreedyOutcome {
        matching,
        remaining_units,
        remaining_bids: bids[b..].to_vec(),
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMode {
    /// Search over every subset of bids; refuses graphs above `limit` vertices.
    Exhaustive { limit: usize },
    /// Kuhn-Munkres assignment; any size.
    Hungarian,
}

impl Default for ExactMode {
    fn default() -> Self {
        ExactMode::Exhaustive {
            limit: EXHAUSTIVE_LIMIT,
        }
    }
}

/// A matching of maximum total ask.
pub fn exact_max_weight_matching(graph: &AuctionGraph, mode: ExactMode) -> Result<Matching> {
    match mode {
        ExactMode::Exhaustive { limit } => {
            if graph.vertex_count() > limit {
                return Err(Error::SizeLimit {
                    size: graph.vertex_count(),
                    limit,
                });
            }
            Ok(exhaustive(graph))
        }
        ExactMode::Hungarian => Ok(hungarian(graph)),
    }
}

/// Memoized search over (unit index, set of used bids). Each unit is either
/// left out or matched to one unused adjacent bid, so every matching of the
/// graph is covered.
fn exhaustive(graph: &AuctionGraph) -> Matching {
    let (nu, nb) = (graph.units.len(), graph.bids.len());
    if nu == 0 || nb == 0 {
        return Matching::default();
    }
    let masks = 1usize << nb;
    let mut best = vec![f64::NAN; (nu + 1) * masks];
    for mask in 0..masks {
        best[nu * masks + mask] = 0.0;
    }
    for u in (0..nu).rev() {
        for mask in 0..masks {
            let mut value = best[(u + 1) * masks + mask];
            for b in 0..nb {
                if mask & (1 << b) == 0 && graph.has_edge(u, b) {
                    let with = graph.weight(u) + best[(u + 1) * masks + (mask | 1 << b)];
                    if with > value {
                        value = with;
                    }
                }
            }
            best[u * masks + mask] = value;
        }
    }
    // Walk the table forward to recover one optimal matching.
    let mut pairs = Vec::new();
    let mut mask = 0usize;
    for u in 0..nu {
        let target = best[u * masks + mask];
        if target == best[(u + 1) * masks + mask] {
            continue;
        }
        let b = (0..nb)
            .find(|&b| {
                mask & (1 << b) == 0
                    && graph.has_edge(u, b)
                    && graph.weight(u) + best[(u + 1) * masks + (mask | 1 << b)] == target
            })
            .expect("table entry must be realized by some bid");
        pairs.push(graph.pair(u, b));
        mask |= 1 << b;
    }
    Matching { pairs }
}

/// Maximum-weight bipartite matching via the shortest-augmenting-path
/// Hungarian method on a square cost matrix (non-edges cost 0).
fn hungarian(graph: &AuctionGraph) -> Matching {
    let (nu, nb) = (graph.units.len(), graph.bids.len());
    let n = nu.max(nb);
    if nu == 0 || nb == 0 {
        return Matching::default();
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < nu && j < nb && graph.has_edge(i, j) {
            -graph.weight(i)
        } else {
            0.0
        }
    };
    // 1-based potentials and assignment, column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<_> = (1..=n)
        .filter_map(|j| {
            let i = p[j];
            (i >= 1 && i <= nu && j <= nb && graph.has_edge(i - 1, j - 1))
                .then(|| graph.pair(i - 1, j - 1))
        })
        .collect();
    pairs.sort_by_key(|p| p.unit);
    Matching { pairs }
}

/// True when no unmatched unit and unmatched bid are adjacent.
pub fn is_maximal(graph: &AuctionGraph, matching: &Matching) -> bool {
    let used_units: BTreeSet<_> = matching.pairs.iter().map(|p| p.unit).collect();
    let used_bids: BTreeSet<_> = matching.pairs.iter().map(|p| p.bid).collect();
    !graph.edges().any(|(u, b)| {
        !used_units.contains(&graph.units[u].unit_id) && !used_bids.contains(&graph.bids[b].id)
    })
}

/// True when every pair is an edge and no vertex repeats.
pub fn is_valid_matching(graph: &AuctionGraph, matching: &Matching) -> bool {
    let mut units = BTreeSet::new();
    let mut bids = BTreeSet::new();
    matching.pairs.iter().all(|pair| {
        let u = graph.units.iter().find(|u| u.unit_id == pair.unit);
        let b = graph.bids.iter().find(|b| b.id == pair.bid);
        match (u, b) {
            (Some(u), Some(b)) => {
                u.ask <= b.price
                    && pair.price == u.ask
                    && units.insert(pair.unit)
                    && bids.insert(pair.bid)
            }
            _ => false,
        }
    })
}

// ---------------------------------------------------------------------------
// Settlement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SettlementLedger {
    pub sales: Vec<Sale>,
    pub owner_payouts: BTreeMap<ProviderId, f64>,
}

/// Tracks which units and bids have already been settled.
#[derive(Debug, Clone, Default)]
pub struct Settlement {
    units: BTreeSet<UnitId>,
    bids: BTreeSet<BidId>,
}

impl Settlement {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sells each matched unit to its bid at the unit's ask and pays the
    /// whole amount to the unit's owner. Nothing is recorded on error.
    pub fn settle(
        &mut self,
        matching: &Matching,
        units: &[UnitListing],
        bids: &[Bid],
    ) -> Result<SettlementLedger> {
        let mut seen_units = BTreeSet::new();
        let mut seen_bids = BTreeSet::new();
        let mut resolved = Vec::with_capacity(matching.len());
        for pair in &matching.pairs {
            if self.units.contains(&pair.unit)
                || self.bids.contains(&pair.bid)
                || !seen_units.insert(pair.unit)
                || !seen_bids.insert(pair.bid)
            {
                return Err(Error::DoubleSettlement {
                    unit: pair.unit,
                    bid: pair.bid,
                });
            }
            let unit = units.iter().find(|u| u.unit_id == pair.unit);
            let bid = bids.iter().find(|b| b.id == pair.bid);
            let (Some(unit), Some(bid)) = (unit, bid) else {
                return Err(Error::InvalidMatching);
            };
            if unit.ask > bid.price {
                return Err(Error::InvalidMatching);
            }
            resolved.push((unit, bid));
        }

        let mut ledger = SettlementLedger::default();
        for (unit, bid) in resolved {
            self.units.insert(unit.unit_id);
            self.bids.insert(bid.id);
            *ledger.owner_payouts.entry(unit.owner).or_default() += unit.ask;
            ledger.sales.push(Sale {
                unit: unit.unit_id,
                bid: bid.id,
                user: bid.user,
                price: unit.ask,
                payee: Payee::Owner(unit.owner),
                refund: bid.escrow - unit.ask,
            });
        }
        Ok(ledger)
    }
}

// ---------------------------------------------------------------------------
// Residual clearing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualOutcome {
    pub sales: Vec<Sale>,
    pub payouts: BTreeMap<ProviderId, f64>,
    pub refunds: Vec<(BidId, f64)>,
    pub unsold: Vec<UnitListing>,
}

/// Any-price clearing of what the first phase left over.
///
/// Bids go in descending price order. A bid at or above `floor` takes the
/// next remaining unit at the floor price. A bid below the floor buys only
/// from a unit whose ask it covers (the highest such ask, at that ask), and
/// is refunded otherwise. Proceeds are split across providers by share.
pub fn residual_clearing(
    units: &[UnitListing],
    bids: &[Bid],
    shares: &[(ProviderId, f64)],
    floor: f64,
) -> ResidualOutcome {
    let mut remaining = sorted_units(units);
    let mut out = ResidualOutcome::default();
    for bid in sorted_bids(bids) {
        let pick = if remaining.is_empty() {
            None
        } else if bid.price >= floor {
            Some((0, floor))
        } else {
            // Sorted by ask descending: the first covered ask is the highest.
            remaining
                .iter()
                .position(|u| u.ask <= bid.price)
                .map(|i| (i, remaining[i].ask))
        };
        match pick {
            Some((i, price)) => {
                let unit = remaining.remove(i);
                add_pro_rata(&mut out.payouts, shares, price);
                out.sales.push(Sale {
                    unit: unit.unit_id,
                    bid: bid.id,
                    user: bid.user,
                    price,
                    payee: Payee::ProRata,
                    refund: bid.escrow - price,
                });
            }
            None => out.refunds.push((bid.id, bid.escrow)),
        }
    }
    out.unsold = remaining;
    out
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Structured record of one clearing run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingReport {
    pub mechanism: Mechanism,
    pub sales: Vec<Sale>,
    pub residual_sales: Vec<Sale>,
    pub refunds: Vec<(BidId, f64)>,
    pub payouts: BTreeMap<ProviderId, f64>,
    pub unsold: Vec<UnitListing>,
    pub greedy_weight: Option<f64>,
    pub exact_weight: Option<f64>,
    pub greedy_iterations: Option<usize>,
}

impl ClearingReport {
    /// Units still listed and bids refunded must not form an `ask <= bid` pair.
    pub fn leaves_crossing_pair(&self, bids: &[Bid]) -> bool {
        let refunded: BTreeSet<_> = self.refunds.iter().map(|r| r.0).collect();
        bids.iter()
            .filter(|b| refunded.contains(&b.id))
            .any(|b| self.unsold.iter().any(|u| u.ask <= b.price))
    }
}

/// Runs the selected mechanism and then residual clearing over a snapshot.
///
/// With `oracle` set, the matching mechanism also computes the exact optimum
/// (exhaustive when small enough, Hungarian otherwise) for comparison.
pub fn clear_market(
    snapshot: &ClearingSnapshot,
    shares: &[(ProviderId, f64)],
    mechanism: Mechanism,
    floor: f64,
    oracle: bool,
) -> Result<ClearingReport> {
    let mut payouts: BTreeMap<ProviderId, f64> = BTreeMap::new();
    let merge = |into: &mut BTreeMap<ProviderId, f64>, from: &BTreeMap<ProviderId, f64>| {
        for (id, v) in from {
            *into.entry(*id).or_default() += v;
        }
    };

    let (sales, leftover_units, leftover_bids, greedy_weight, exact_weight, iterations) =
        match mechanism {
            Mechanism::Dutch => {
                let out = dutch_auction(&snapshot.units, &snapshot.bids, shares, floor);
                merge(&mut payouts, &out.payouts);
                let refunded: BTreeSet<_> = out.refunds.iter().map(|r| r.0).collect();
                let bids: Vec<_> = snapshot
                    .bids
                    .iter()
                    .filter(|b| refunded.contains(&b.id))
                    .cloned()
                    .collect();
                (out.sales, out.unsold, bids, None, None, None)
            }
            Mechanism::Matching => {
                let greedy = greedy_matching(&snapshot.units, &snapshot.bids);
                let ledger =
                    Settlement::new().settle(&greedy.matching, &snapshot.units, &snapshot.bids)?;
                merge(&mut payouts, &ledger.owner_payouts);
                let exact = if oracle {
                    let graph = build_auction_graph(&snapshot.units, &snapshot.bids);
                    let mode = if graph.vertex_count() <= EXHAUSTIVE_LIMIT {
                        ExactMode::default()
                    } else {
                        ExactMode::Hungarian
                    };
                    Some(exact_max_weight_matching(&graph, mode)?.weight())
                } else {
                    None
                };
                (
                    ledger.sales,
                    greedy.remaining_units,
                    greedy.remaining_bids,
                    Some(greedy.matching.weight()),
                    exact,
                    Some(greedy.iterations),
                )
            }
        };

    let residual = residual_clearing(&leftover_units, &leftover_bids, shares, floor);
    merge(&mut payouts, &residual.payouts);
    Ok(ClearingReport {
        mechanism,
        sales,
        residual_sales: residual.sales,
        refunds: residual.refunds,
        payouts,
        unsold: residual.unsold,
        greedy_weight,
        exact_weight,
        greedy_iterations: iterations,
    })
}
