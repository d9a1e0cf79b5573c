use std::path::PathBuf;

use crate::types::{BidId, ProviderId, Timestamp, UnitId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("cannot buy {requested} units from a pool holding {available}")]
    InsufficientInventory { requested: u64, available: f64 },

    #[error("state is off the active curve (relative residual {residual:e})")]
    OffCurve { residual: f64 },

    #[error("constant {c} outside admissible bounds [{a}, {b}]")]
    OutOfBounds { c: f64, a: f64, b: f64 },

    #[error("invalid bounds: need 0 < a < b, got [{a}, {b}]")]
    InvalidBounds { a: f64, b: f64 },

    #[error("time {0} is not an epoch time")]
    NotAnEpoch(Timestamp),

    #[error("time {at} precedes pool clock {clock}")]
    StaleTime { at: Timestamp, clock: Timestamp },

    #[error("invalid epoch schedule: {0}")]
    Schedule(String),

    #[error("unknown provider {0}")]
    UnknownProvider(ProviderId),

    #[error("provider {0} already in pool")]
    DuplicateProvider(ProviderId),

    #[error("pool has no liquidity providers")]
    EmptyPool,

    #[error("market closed at {clearing_time}, request at {now}")]
    MarketClosed {
        now: Timestamp,
        clearing_time: Timestamp,
    },

    #[error("bid price {price} must exceed minimum {minimum}")]
    BidPriceTooLow { price: f64, minimum: f64 },

    /// Bids may only be raised; lowering or withdrawing is refused.
    #[error("bid {bid} is locked at price {current}")]
    LockedOrder { bid: BidId, current: f64 },

    #[error("unknown bid {0}")]
    UnknownBid(BidId),

    #[error("unit {unit} is not owned by provider {claimed_by}")]
    Ownership { unit: UnitId, claimed_by: ProviderId },

    #[error("clearing snapshot requested at {now}, before clearing time {clearing_time}")]
    PrematureSnapshot {
        now: Timestamp,
        clearing_time: Timestamp,
    },

    #[error("order book is frozen for clearing")]
    BookFrozen,

    #[error("exhaustive matching limited to {limit} vertices, graph has {size}")]
    SizeLimit { size: usize, limit: usize },

    #[error("pair (unit {unit}, bid {bid}) already settled")]
    DoubleSettlement { unit: UnitId, bid: BidId },

    #[error("matching references a unit or bid outside the snapshot")]
    InvalidMatching,

    #[error("order {0} is not a member of the order set")]
    Membership(BidId),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),

    #[error("at t={time} ({event})")]
    Event {
        time: Timestamp,
        event: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, time: Timestamp, event: impl Into<String>) -> Self {
        Error::Event {
            time,
            event: event.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn positive(what: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { what, value })
    }
}

pub(crate) fn toml_error(text: &str, e: toml::de::Error) -> Error {
    Error::Parse {
        line: e
            .span()
            .map_or(0, |s| 1 + text[..s.start].matches('\n').count()),
        message: e.message().to_string(),
    }
}
