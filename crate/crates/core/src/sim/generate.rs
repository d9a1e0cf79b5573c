//! Random full scenarios for end-to-end property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clearing::Mechanism;
use crate::orders::{Bid, UnitListing};
use crate::types::{BidId, ProviderId, UnitId, UserId};

use super::scenario::{Action, ActionKind, Agent, AgentKind, InitialPool, Market, Policy, Scenario, SCHEMA_VERSION};

const BOUNDS: [f64; 2] = [0.25, 4.0];

/// A valid scenario with 1-4 providers and 2-12 customers of every kind,
/// mixing stochastic policies with a scripted hidden bid. Deterministic in
/// `seed`.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mechanism = if rng.random_bool(0.5) {
        Mechanism::Dutch
    } else {
        Mechanism::Matching
    };
    let pool = InitialPool {
        x: rng.random_range(50.0..200.0),
        y: rng.random_range(10..60) as f64,
        constant: rng.random_range(0.5..2.0),
        owner: ProviderId(1),
    };
    // Marginal X cost of one unit off the curve.
    let unit = pool.x / (pool.constant * pool.y);
    let market = Market {
        bounds: BOUNDS,
        fee_rate: rng.random_range(0.0..0.01),
        first_epoch: 0,
        epochs: rng.random_range(1..6),
        stride: rng.random_range(2..12),
        mechanism,
        floor: unit * rng.random_range(0.0..0.8),
        min_bid: 0.0,
        oracle: mechanism == Mechanism::Matching,
    };

    let mut agents = Vec::new();
    let providers = rng.random_range(1..=4u32);
    for id in 1..=providers {
        let ask = (mechanism == Mechanism::Matching && rng.random_bool(0.7))
            .then(|| unit * rng.random_range(0.5..1.5));
        agents.push(Agent {
            id,
            kind: AgentKind::Provider,
            actions: Vec::new(),
            policy: Some(Policy {
                constant: rng.random_range(0.5..2.0),
                spread: rng.random_range(0.0..0.5),
                deposit: if id == 1 { 0.0 } else { rng.random_range(5.0..50.0) },
                exit_prob: rng.random_range(0.0..0.2),
                ..Policy::default()
            }),
            ask,
        });
    }

    let customers = rng.random_range(2..=12u32);
    for k in 0..customers {
        let kind = match rng.random_range(0..3) {
            0 => AgentKind::BargainHunter,
            1 => AgentKind::Normal,
            _ => AgentKind::HighFlyer,
        };
        let premium = match kind {
            AgentKind::BargainHunter => rng.random_range(0.3..1.0),
            AgentKind::Normal => rng.random_range(0.8..1.3),
            _ => rng.random_range(1.2..3.0),
        };
        agents.push(Agent {
            id: 100 + k,
            kind,
            actions: Vec::new(),
            policy: Some(Policy {
                valuation: unit * premium,
                spread: rng.random_range(0.0..0.4),
                arrivals: rng.random_range(1..=4),
                raise_prob: rng.random_range(0.0..0.6),
                ..Policy::default()
            }),
            ask: None,
        });
    }

    let clearing = market.first_epoch + market.stride * market.epochs as u64;
    agents.push(Agent {
        id: 100 + customers,
        kind: AgentKind::BargainHunter,
        actions: vec![Action {
            at: rng.random_range(0..clearing),
            kind: ActionKind::Bid {
                price: unit * rng.random_range(0.2..0.9),
                hidden: true,
            },
        }],
        policy: None,
        ask: None,
    });

    Scenario {
        schema_version: SCHEMA_VERSION,
        seed: rng.random(),
        market,
        pool,
        agents,
    }
}

/// A clearing book with integer asks and bids drawn uniformly from
/// `1..=max_price`, units spread over three owners.
pub fn random_book<R: Rng>(
    rng: &mut R,
    units: usize,
    bids: usize,
    max_price: u32,
) -> (Vec<UnitListing>, Vec<Bid>) {
    let listings = (0..units)
        .map(|i| UnitListing {
            unit_id: UnitId(i as u64),
            owner: ProviderId(1 + (i % 3) as u32),
            ask: rng.random_range(1..=max_price) as f64,
        })
        .collect();
    let book = (0..bids)
        .map(|i| {
            let price = rng.random_range(1..=max_price) as f64;
            Bid {
                id: BidId(i as u64),
                user: UserId(100 + i as u32),
                price,
                escrow: price,
                submitted_at: i as u64,
                hidden: false,
            }
        })
        .collect();
    (listings, book)
}
