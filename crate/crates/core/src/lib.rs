//! Automated market maker for perishable goods.
//!
//! Liquidity providers steer a power-law state curve `y = y0 (x/x0)^-c`
//! through a share-weighted geometric mean of their chosen constants.
//! Bargain hunters rest escrowed bids that execute as soon as the curve
//! price falls to them, and whatever is left at the end of the asset's
//! life is cleared either by a uniform Dutch auction or by a greedy
//! maximum-weight matching on the auction graph.
//!
//! The crate is split by concern:
//!
//! - [`curve`]: state curve, induced AMM surface, prices and swaps.
//! - [`pool`]: provider registry, shares, epochs, fees.
//! - [`orders`]: the bid book and per-unit listings.
//! - [`clearing`]: end-of-life clearing mechanisms.
//! - [`loss`]: divergence loss and order loss metrics.
//! - [`beliefs`]: Monte Carlo harness for provider belief models.
//! - [`sim`]: deterministic discrete-event engine, trace and verification.

pub mod beliefs;
pub mod clearing;
pub mod curve;
mod error;
pub mod loss;
pub mod orders;
pub mod pool;
pub mod sim;
mod types;

pub use curve::{AxiomReport, Bounds, CurveParams, GridSpec, PoolState};
pub use error::{Error, Result};
pub use pool::{EpochSchedule, LiquidityProvider, Pool};
pub use types::{BidId, ProviderId, Timestamp, UnitId, UserId};
