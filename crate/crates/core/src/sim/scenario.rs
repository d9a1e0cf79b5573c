//! Scenario documents.
//!
//! A scenario is a TOML file:
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [market]
//! bounds = [0.25, 4.0]
//! fee_rate = 0.003
//! epochs = 4          # epoch times first_epoch + i * stride
//! stride = 10
//! mechanism = "dutch" # or "matching"
//! floor = 0.0
//!
//! [pool]
//! x = 100.0
//! y = 40.0
//! constant = 1.0
//! owner = 1
//!
//! [[agents]]
//! id = 7
//! kind = "bargain_hunter"
//! actions = [{ at = 3, do = "bid", price = 1.2 }]
//! ```
//!
//! Agents are either scripted (`actions`) or stochastic (`policy`). Provider
//! ids and customer ids live in separate namespaces.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clearing::Mechanism;
use crate::curve::Bounds;
use crate::error::{toml_error, Error, Result};
use crate::pool::EpochSchedule;
use crate::types::{ProviderId, Timestamp, UserId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub market: Market,
    pub pool: InitialPool,
    #[serde(default)]
    pub agents: Vec<Agent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Market {
    pub bounds: [f64; 2],
    #[serde(default)]
    pub fee_rate: f64,
    #[serde(default)]
    pub first_epoch: Timestamp,
    pub epochs: usize,
    pub stride: Timestamp,
    pub mechanism: Mechanism,
    #[serde(default)]
    pub floor: f64,
    /// Bids must be strictly above this.
    #[serde(default)]
    pub min_bid: f64,
    /// Compute the exact matching optimum alongside the greedy.
    #[serde(default)]
    pub oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPool {
    pub x: f64,
    pub y: f64,
    pub constant: f64,
    pub owner: ProviderId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    BargainHunter,
    Normal,
    HighFlyer,
    Provider,
}

impl AgentKind {
    pub fn is_provider(self) -> bool {
        self == AgentKind::Provider
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: u32,
    pub kind: AgentKind,
    #[serde(default)]
    pub actions: Vec<Action>,
    pub policy: Option<Policy>,
    /// Providers: ask for every unit they hold at clearing. Defaults to the floor.
    pub ask: Option<f64>,
}

impl Agent {
    pub fn provider_id(&self) -> ProviderId {
        ProviderId(self.id)
    }

    pub fn user_id(&self) -> UserId {
        UserId(self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionKind {
    Join { deposit: f64, constant: f64 },
    SetConstant { constant: f64 },
    Exit,
    Bid {
        price: f64,
        #[serde(default)]
        hidden: bool,
    },
    /// Raises this agent's `bid`-th bid (0-based, in submission order).
    Raise { bid: usize, price: f64 },
    /// Buys up to `units` from the AMM, one at a time, while the all-in
    /// price stays at or below `limit`.
    Buy { units: u64, limit: Option<f64> },
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Join { .. } => "join",
            ActionKind::SetConstant { .. } => "set_constant",
            ActionKind::Exit => "exit",
            ActionKind::Bid { .. } => "bid",
            ActionKind::Raise { .. } => "raise",
            ActionKind::Buy { .. } => "buy",
        }
    }

    fn for_provider(&self) -> bool {
        matches!(
            self,
            ActionKind::Join { .. } | ActionKind::SetConstant { .. } | ActionKind::Exit
        )
    }
}

// Read through a table: serde's `flatten` would disable unknown-field checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct Action {
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: ActionKind,
}

impl TryFrom<toml::Table> for Action {
    type Error = String;

    fn try_from(mut t: toml::Table) -> std::result::Result<Self, String> {
        let at = match t.remove("at") {
            Some(toml::Value::Integer(at)) if at >= 0 => at as Timestamp,
            Some(v) => return Err(format!("action `at` must be a nonnegative integer, got {v}")),
            None => return Err("action is missing `at`".into()),
        };
        let kind = t.try_into::<ActionKind>().map_err(|e| e.message().to_string())?;
        Ok(Action { at, kind })
    }
}

/// Parameters of a stochastic agent. Unused fields are ignored by kinds
/// that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    /// Customers: mean willingness to pay per unit, in X.
    #[serde(default = "one")]
    pub valuation: f64,
    /// Relative half-width of the uniform draw around each mean.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Customers: number of market visits.
    #[serde(default = "one_u32")]
    pub arrivals: u32,
    /// Bargain hunters: chance of raising a resting bid on a later visit.
    #[serde(default)]
    pub raise_prob: f64,
    /// Providers: mean constant, redrawn every epoch.
    #[serde(default = "one")]
    pub constant: f64,
    /// Providers: X deposited at the first epoch (ignored for the pool owner).
    #[serde(default)]
    pub deposit: f64,
    /// Providers: chance of exiting at each epoch after the first.
    #[serde(default)]
    pub exit_prob: f64,
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

fn default_spread() -> f64 {
    0.25
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            valuation: 1.0,
            spread: default_spread(),
            arrivals: 1,
            raise_prob: 0.0,
            constant: 1.0,
            deposit: 0.0,
            exit_prob: 0.0,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.market.bounds[0], self.market.bounds[1])
    }

    pub fn schedule(&self) -> Result<EpochSchedule> {
        EpochSchedule::uniform(self.market.first_epoch, self.market.stride, self.market.epochs)
    }

    /// Checks every cross-field invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let m = &self.market;
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        let bounds = Bounds::new(m.bounds[0], m.bounds[1]);
        if bounds.is_err() {
            errs.push(format!(
                "bounds: need 0 < a < b, got [{}, {}]",
                m.bounds[0], m.bounds[1]
            ));
        }
        if !(0.0..1.0).contains(&m.fee_rate) {
            errs.push(format!("fee_rate: must lie in [0, 1), got {}", m.fee_rate));
        }
        if m.epochs == 0 {
            errs.push("epochs: need at least one epoch".into());
        }
        if m.stride == 0 {
            errs.push("stride: must be positive".into());
        }
        if !(m.floor >= 0.0 && m.floor.is_finite()) {
            errs.push(format!("floor: must be nonnegative, got {}", m.floor));
        }
        if !(m.min_bid >= 0.0 && m.min_bid.is_finite()) {
            errs.push(format!("min_bid: must be nonnegative, got {}", m.min_bid));
        }
        let p = &self.pool;
        for (name, v) in [("pool.x", p.x), ("pool.y", p.y), ("pool.constant", p.constant)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be positive, got {v}"));
            }
        }
        if let Ok(b) = &bounds {
            if !b.contains(p.constant) {
                errs.push(format!(
                    "pool.constant: {} outside bounds [{}, {}]",
                    p.constant,
                    b.lower(),
                    b.upper()
                ));
            }
        }

        let schedule = self.schedule().ok();
        let clearing = schedule.as_ref().map(|s| s.clearing_time());
        let mut providers = BTreeSet::new();
        let mut users = BTreeSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let label = format!("agents[{i}] (id {})", agent.id);
            let fresh = if agent.kind.is_provider() {
                providers.insert(agent.id)
            } else {
                users.insert(agent.id)
            };
            if !fresh {
                errs.push(format!("{label}: duplicate id"));
            }
            if agent.policy.is_some() && !agent.actions.is_empty() {
                errs.push(format!("{label}: give either actions or policy, not both"));
            }
            if let Some(ask) = agent.ask {
                if !agent.kind.is_provider() {
                    errs.push(format!("{label}: only providers set an ask"));
                }
                if !(ask >= 0.0 && ask.is_finite()) {
                    errs.push(format!("{label}: ask must be nonnegative"));
                }
            }
            if let Some(pol) = &agent.policy {
                validate_policy(pol, agent, &label, bounds.as_ref().ok(), &mut errs);
            }
            let owner = agent.kind.is_provider() && agent.id == p.owner.0;
            let mut last = 0;
            for (j, action) in agent.actions.iter().enumerate() {
                let al = format!("{label}.actions[{j}] ({})", action.kind.name());
                if action.at < last {
                    errs.push(format!("{al}: actions must be in time order"));
                }
                last = action.at;
                if agent.kind.is_provider() != action.kind.for_provider() {
                    errs.push(format!("{al}: not available to {:?}", agent.kind));
                }
                if agent.kind.is_provider() {
                    if let Some(s) = &schedule {
                        if !s.is_epoch(action.at) {
                            errs.push(format!("{al}: provider actions must fall on epoch times"));
                        }
                    }
                    if owner && j == 0 && matches!(action.kind, ActionKind::Join { .. }) {
                        errs.push(format!("{al}: the pool owner is already a member"));
                    }
                } else if let Some(c) = clearing {
                    if action.at >= c || action.at < m.first_epoch {
                        errs.push(format!(
                            "{al}: customer actions must fall in [{}, {c})",
                            m.first_epoch
                        ));
                    }
                }
                validate_action(&action.kind, bounds.as_ref().ok(), &al, &mut errs);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn check_positive(v: f64, what: &str, errs: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(format!("{what}: must be positive, got {v}"));
    }
}

fn validate_action(kind: &ActionKind, bounds: Option<&Bounds>, al: &str, errs: &mut Vec<String>) {
    let in_bounds = |c: f64, errs: &mut Vec<String>| {
        if let Some(b) = bounds {
            if !b.contains(c) {
                errs.push(format!("{al}: constant {c} outside bounds"));
            }
        }
    };
    match kind {
        ActionKind::Join { deposit, constant } => {
            check_positive(*deposit, &format!("{al}.deposit"), errs);
            in_bounds(*constant, errs);
        }
        ActionKind::SetConstant { constant } => in_bounds(*constant, errs),
        ActionKind::Exit => {}
        ActionKind::Bid { price, .. } | ActionKind::Raise { price, .. } => {
            check_positive(*price, &format!("{al}.price"), errs)
        }
        ActionKind::Buy { units, limit } => {
            if *units == 0 {
                errs.push(format!("{al}.units: must be at least 1"));
            }
            if let Some(l) = limit {
                check_positive(*l, &format!("{al}.limit"), errs);
            }
        }
    }
}

fn validate_policy(pol: &Policy, agent: &Agent, label: &str, bounds: Option<&Bounds>, errs: &mut Vec<String>) {
    check_positive(pol.valuation, &format!("{label}.policy.valuation"), errs);
    if !(0.0..1.0).contains(&pol.spread) {
        errs.push(format!("{label}.policy.spread: must lie in [0, 1)"));
    }
    for (name, v) in [("raise_prob", pol.raise_prob), ("exit_prob", pol.exit_prob)] {
        if !(0.0..=1.0).contains(&v) {
            errs.push(format!("{label}.policy.{name}: must lie in [0, 1]"));
        }
    }
    if agent.kind.is_provider() {
        check_positive(pol.constant, &format!("{label}.policy.constant"), errs);
        if let Some(b) = bounds {
            if !b.contains(pol.constant) {
                errs.push(format!("{label}.policy.constant: outside bounds"));
            }
        }
        if !(pol.deposit >= 0.0 && pol.deposit.is_finite()) {
            errs.push(format!("{label}.policy.deposit: must be nonnegative"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        schema_version = 1
        [market]
        bounds = [0.5, 2.0]
        epochs = 1
        stride = 10
        mechanism = "dutch"
        [pool]
        x = 100.0
        y = 10.0
        constant = 1.0
        owner = 1
    "#;

    fn messages(e: Error) -> Vec<String> {
        match e {
            Error::Validation(v) => v,
            other => vec![other.to_string()],
        }
    }

    #[test]
    fn minimal_loads() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert!(s.agents.is_empty());
        assert_eq!(s.schedule().unwrap().clearing_time(), 10);
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bad_bounds_named() {
        let text = MINIMAL.replace("[0.5, 2.0]", "[2.0, 2.0]");
        let msgs = messages(Scenario::from_toml(&text).unwrap_err());
        assert!(msgs.iter().any(|m| m.starts_with("bounds")), "{msgs:?}");
    }

    #[test]
    fn unknown_mechanism_lists_allowed() {
        let text = MINIMAL.replace("\"dutch\"", "\"vickrey\"");
        let err = Scenario::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dutch") && msg.contains("matching"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err:?}");
    }

    #[test]
    fn misspelled_action_fields_are_rejected() {
        for (action, needle) in [
            ("{ at = 1, do = \"bid\", prise = 2.0 }", "prise"),
            ("{ at = 1, do = \"sell\" }", "sell"),
            ("{ do = \"exit\" }", "at"),
        ] {
            let text = format!("{MINIMAL}\n[[agents]]\nid = 2\nkind = \"normal\"\nactions = [{action}]\n");
            let msg = Scenario::from_toml(&text).unwrap_err().to_string();
            assert!(msg.contains(needle), "{action}: {msg}");
        }
    }

    #[test]
    fn reports_every_violation() {
        let text = format!(
            "{MINIMAL}\n[[agents]]\nid = 2\nkind = \"normal\"\nactions = [{{ at = 50, do = \"buy\", units = 0 }}, {{ at = 1, do = \"exit\" }}]\n"
        );
        let msgs = messages(Scenario::from_toml(&text).unwrap_err());
        assert!(msgs.len() >= 4, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("time order")));
        assert!(msgs.iter().any(|m| m.contains("not available")));
        assert!(msgs.iter().any(|m| m.contains("units")));
    }

    #[test]
    fn provider_actions_need_epochs() {
        let text = format!(
            "{MINIMAL}\n[[agents]]\nid = 3\nkind = \"provider\"\nactions = [{{ at = 5, do = \"join\", deposit = 1.0, constant = 1.0 }}]\n"
        );
        let msgs = messages(Scenario::from_toml(&text).unwrap_err());
        assert!(msgs.iter().any(|m| m.contains("epoch times")), "{msgs:?}");
    }
}
