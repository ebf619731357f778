//! Screening policies: grid-indexed tables from the occupancy programs, and
//! age-based schedules.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::WAIT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub t: usize,
    pub k: usize,
    pub probs: Vec<f64>,
    /// Zero occupancy: the action is payoff-irrelevant and defaults to wait.
    pub unvisited: bool,
}

/// Action distribution per `(epoch, grid point)`; entries exist only for
/// pairs the program kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub horizon: usize,
    pub n_grid: usize,
    pub n_actions: usize,
    pub entries: Vec<PolicyEntry>,
    /// Used at pairs without an entry; `None` makes such visits an error.
    pub default_action: Option<usize>,
    #[serde(skip)]
    lookup: Vec<Option<usize>>,
}

impl GridPolicy {
    pub fn new(horizon: usize, n_grid: usize, n_actions: usize, entries: Vec<PolicyEntry>, default_action: Option<usize>) -> Self {
        let mut p = Self { horizon, n_grid, n_actions, entries, default_action, lookup: Vec::new() };
        p.reindex();
        p
    }

    /// Rebuilds the `(t, k)` index, e.g. after deserializing.
    pub fn reindex(&mut self) {
        self.lookup = vec![None; self.horizon * self.n_grid];
        for (e, entry) in self.entries.iter().enumerate() {
            self.lookup[entry.t * self.n_grid + entry.k] = Some(e);
        }
    }

    pub fn entry(&self, t: usize, k: usize) -> Option<&PolicyEntry> {
        self.lookup.get(t * self.n_grid + k).copied().flatten().map(|e| &self.entries[e])
    }

    /// Action distribution at `(t, k)`, falling back to the default action.
    pub fn dist(&self, t: usize, k: usize) -> Result<std::borrow::Cow<'_, [f64]>> {
        if let Some(e) = self.entry(t, k) {
            return Ok(std::borrow::Cow::Borrowed(&e.probs));
        }
        match self.default_action {
            Some(a) => {
                let mut v = vec![0.0; self.n_actions];
                v[a] = 1.0;
                Ok(std::borrow::Cow::Owned(v))
            }
            None => Err(CoreError::PolicyDomain { t, k }),
        }
    }

    /// Most likely action at `(t, k)` (lowest index on ties).
    pub fn mode(&self, t: usize, k: usize) -> Result<usize> {
        let d = self.dist(t, k)?;
        let mut best = 0;
        for a in 1..d.len() {
            if d[a] > d[best] {
                best = a;
            }
        }
        Ok(best)
    }

    pub fn is_deterministic(&self) -> bool {
        self.entries.iter().all(|e| e.probs.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// `t,k,<one column per action>,unvisited`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("t,k");
        for l in labels {
            let _ = write!(out, ",p[{l}]");
        }
        out.push_str(",unvisited\n");
        for e in &self.entries {
            let _ = write!(out, "{},{}", e.t, e.k);
            for p in &e.probs {
                let _ = write!(out, ",{p}");
            }
            let _ = writeln!(out, ",{}", e.unvisited as u8);
        }
        out
    }
}

/// Age-based fixed-interval screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub action: usize,
    /// Screen at epochs `offset, offset + interval, ...`.
    pub interval: usize,
    #[serde(default)]
    pub offset: usize,
}

impl Schedule {
    pub fn action_at(&self, t: usize) -> usize {
        if self.interval > 0 && t >= self.offset && (t - self.offset).is_multiple_of(self.interval) {
            self.action
        } else {
            WAIT
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Grid(GridPolicy),
    Rule(Schedule),
    NoScreening,
}

impl Policy {
    /// Annual (`interval = 1`) or biennial (`2`) use of `action`.
    pub fn every(action: usize, interval: usize) -> Self {
        Policy::Rule(Schedule { action, interval, offset: 0 })
    }

    pub fn name(&self, labels: &[String]) -> String {
        match self {
            Policy::Grid(_) => "grid".into(),
            Policy::NoScreening => "no-screening".into(),
            Policy::Rule(s) => match s.interval {
                1 => format!("annual-{}", labels[s.action]),
                2 => format!("biennial-{}", labels[s.action]),
                n => format!("every-{n}-{}", labels[s.action]),
            },
        }
    }
}
