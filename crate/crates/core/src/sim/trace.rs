//! Event trace.
//!
//! One CSV row per event with a fixed column set; a column is empty when it
//! does not apply to the row's kind. Floats are written in shortest
//! round-trip form, so a parsed trace carries the engine's exact values and
//! identical runs produce identical bytes.
//!
//! | kind            | actor    | meaning of the filled columns                              |
//! |-----------------|----------|------------------------------------------------------------|
//! | init            | owner    | constant, pool_x, pool_y; amount_x/amount_y = seed reserves|
//! | join            | provider | amount_x/amount_y deposited, constant chosen, share        |
//! | set_constant    | provider | constant queued for the next tick                          |
//! | exit            | provider | amount_x/amount_y paid out, fee = accrued fees paid        |
//! | tick            | -        | constant = new aggregate, pool_x, pool_y                   |
//! | metric          | provider | dl, order_loss, share                                      |
//! | amm_trade       | user     | amount_x = curve cost, amount_y = 1, fee                   |
//! | bid_submit      | user     | bid, price, amount_x = escrow deposited                    |
//! | bid_raise       | user     | bid, price, amount_x = escrow top-up                       |
//! | bid_fill        | user     | bid, amount_x = curve cost, amount_y = 1, fee, refund      |
//! | fee_credit      | provider | fee credited                                               |
//! | listing         | provider | unit, price = ask                                          |
//! | clearing        | -        | greedy_weight, exact_weight (matching only)                |
//! | clearing_fill   | user     | counterparty = owner if paid directly, bid, unit, price, refund |
//! | residual_fill   | user     | as clearing_fill                                           |
//! | refund          | user     | bid, refund                                                |
//! | clearing_payout | provider | amount_x received from clearing sales                      |
//! | retrieve        | provider | amount_x/amount_y paid out, fee = accrued fees paid        |
//! | end             | -        | pool_x, pool_y                                             |

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Timestamp;

pub const TRACE_COLUMNS: &[&str] = &[
    "seq",
    "time",
    "kind",
    "actor",
    "counterparty",
    "bid",
    "unit",
    "price",
    "amount_x",
    "amount_y",
    "fee",
    "refund",
    "constant",
    "share",
    "pool_x",
    "pool_y",
    "dl",
    "order_loss",
    "greedy_weight",
    "exact_weight",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Init,
    Join,
    SetConstant,
    Exit,
    Tick,
    Metric,
    AmmTrade,
    BidSubmit,
    BidRaise,
    BidFill,
    FeeCredit,
    Listing,
    Clearing,
    ClearingFill,
    ResidualFill,
    Refund,
    ClearingPayout,
    Retrieve,
    End,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = kind_name(*self);
        f.write_str(s)
    }
}

fn kind_name(k: EventKind) -> &'static str {
    match k {
        EventKind::Init => "init",
        EventKind::Join => "join",
        EventKind::SetConstant => "set_constant",
        EventKind::Exit => "exit",
        EventKind::Tick => "tick",
        EventKind::Metric => "metric",
        EventKind::AmmTrade => "amm_trade",
        EventKind::BidSubmit => "bid_submit",
        EventKind::BidRaise => "bid_raise",
        EventKind::BidFill => "bid_fill",
        EventKind::FeeCredit => "fee_credit",
        EventKind::Listing => "listing",
        EventKind::Clearing => "clearing",
        EventKind::ClearingFill => "clearing_fill",
        EventKind::ResidualFill => "residual_fill",
        EventKind::Refund => "refund",
        EventKind::ClearingPayout => "clearing_payout",
        EventKind::Retrieve => "retrieve",
        EventKind::End => "end",
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| kind_name(*k) == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

const ALL_KINDS: [EventKind; 19] = [
    EventKind::Init,
    EventKind::Join,
    EventKind::SetConstant,
    EventKind::Exit,
    EventKind::Tick,
    EventKind::Metric,
    EventKind::AmmTrade,
    EventKind::BidSubmit,
    EventKind::BidRaise,
    EventKind::BidFill,
    EventKind::FeeCredit,
    EventKind::Listing,
    EventKind::Clearing,
    EventKind::ClearingFill,
    EventKind::ResidualFill,
    EventKind::Refund,
    EventKind::ClearingPayout,
    EventKind::Retrieve,
    EventKind::End,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub time: Timestamp,
    pub kind: EventKind,
    pub actor: Option<u32>,
    pub counterparty: Option<u32>,
    pub bid: Option<u64>,
    pub unit: Option<u64>,
    pub price: Option<f64>,
    pub amount_x: Option<f64>,
    pub amount_y: Option<f64>,
    pub fee: Option<f64>,
    pub refund: Option<f64>,
    pub constant: Option<f64>,
    pub share: Option<f64>,
    pub pool_x: Option<f64>,
    pub pool_y: Option<f64>,
    pub dl: Option<f64>,
    pub order_loss: Option<f64>,
    pub greedy_weight: Option<f64>,
    pub exact_weight: Option<f64>,
}

impl TraceEvent {
    pub fn new(time: Timestamp, kind: EventKind) -> Self {
        TraceEvent {
            seq: 0,
            time,
            kind,
            actor: None,
            counterparty: None,
            bid: None,
            unit: None,
            price: None,
            amount_x: None,
            amount_y: None,
            fee: None,
            refund: None,
            constant: None,
            share: None,
            pool_x: None,
            pool_y: None,
            dl: None,
            order_loss: None,
            greedy_weight: None,
            exact_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, mut event: TraceEvent) {
        event.seq = self.events.len() as u64;
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.events {
            w.serialize(e)?;
        }
        if self.events.is_empty() {
            w.write_record(TRACE_COLUMNS)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<trace>".into(),
            source,
        })
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != TRACE_COLUMNS {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected trace header {header:?}"),
            });
        }
        let mut events = Vec::new();
        for (i, row) in r.deserialize().enumerate() {
            let e: TraceEvent = row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    /// Copy with the prices and escrow of hidden bids blanked, for publication.
    pub fn redacted(&self, hidden_bids: &[u64]) -> Trace {
        let mut t = self.clone();
        for e in &mut t.events {
            let hidden = e.bid.is_some_and(|b| hidden_bids.contains(&b));
            if hidden && matches!(e.kind, EventKind::BidSubmit | EventKind::BidRaise) {
                e.price = None;
                e.amount_x = None;
            }
        }
        t
    }

    /// Fails unless the trace starts with `init` and ends with `end`.
    pub fn require_complete(&self) -> Result<()> {
        match (self.events.first(), self.events.last()) {
            (Some(f), Some(l)) if f.kind == EventKind::Init && l.kind == EventKind::End => Ok(()),
            (None, _) => Err(Error::IncompleteTrace("no events".into())),
            (Some(f), _) if f.kind != EventKind::Init => {
                Err(Error::IncompleteTrace(format!("first event is `{}`, not `init`", f.kind)))
            }
            (_, Some(l)) => Err(Error::IncompleteTrace(format!(
                "last event is `{}` at t={}, not `end`",
                l.kind, l.time
            ))),
            _ => unreachable!(),
        }
    }
}
