//! Deterministic workloads shared by the criterion benches.

use perishable_core::orders::{Bid, UnitListing};
use perishable_core::sim::generate::random_book;
use perishable_core::{CurveParams, PoolState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Book = (Vec<UnitListing>, Vec<Bid>);

/// `count` books with `size` units and `size` bids each, prices in 1..=20.
pub fn books(seed: u64, size: usize, count: usize) -> Vec<Book> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_book(&mut rng, size, size, 20)).collect()
}

/// Curves with `c` in [0.5, 4] anchored in [1, 200]^2, each paired with a
/// reserve state on the curve holding at least 20 units of Y.
pub fn curves(seed: u64, count: usize) -> Vec<(CurveParams, PoolState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = rng.random_range(0.5..=4.0);
            let x0 = rng.random_range(1.0..200.0);
            let y0 = rng.random_range(20.0..200.0);
            let p = CurveParams::new(c, x0, y0).expect("parameters in range");
            (p, PoolState::new(x0, y0))
        })
        .collect()
}
