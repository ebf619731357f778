//! Screening POMDP instances: the declarative document ([`ModelSpec`]), its
//! validation, and the compiled form ([`Model`]) every algorithm works on.
//!
//! Index conventions: action 0 is the wait action, observation 0 is a
//! negative result and 1 a positive one, state 0 is healthy and the last core
//! state is the most advanced. The first absorbing state is death by cancer.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const SCHEMA: &str = "cpomdp-model/1";
pub const WAIT: usize = 0;
pub const NEG: usize = 0;
pub const POS: usize = 1;
pub const HEALTHY: usize = 0;

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disutilities {
    /// Per action, in days; the wait entry must be 0.
    pub screening: Vec<f64>,
    pub true_positive: f64,
    pub false_positive: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// The model document as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    #[serde(default)]
    pub start_age: u32,
    pub states: Vec<String>,
    pub absorbing_states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    /// `transition[t][a][i][j]`, rows over core then absorbing states.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub action_independent: bool,
    /// `sensitivity[t][a]`; used to derive observation rows when
    /// `observation` is absent.
    #[serde(default)]
    pub sensitivity: Vec<Vec<f64>>,
    #[serde(default)]
    pub specificity: Vec<Vec<f64>>,
    /// Optional explicit `z[t][a][i][theta]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    pub disutilities_days: Disutilities,
    /// `salvage[t][i]`, QALYs credited on diagnosis.
    pub salvage: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    /// `post_diag_mortality[t][i]`.
    pub post_diag_mortality: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default = "one")]
    pub discount: f64,
    pub scale: [f64; 2],
    /// When false, the core-state transition rows are renormalized so that
    /// death never removes mass (it still counts towards rewards and risk).
    #[serde(default = "yes")]
    pub death_exits: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_belief: Option<Vec<f64>>,
}

/// One failed invariant, located by an index path such as `transition[3][1][2]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn prob_ok(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        if spec.schema != SCHEMA {
            return Err(CoreError::ModelFormat(format!("unsupported schema '{}', expected '{SCHEMA}'", spec.schema)));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    fn n(&self) -> usize {
        self.states.len()
    }

    fn n_full(&self) -> usize {
        self.states.len() + self.absorbing_states.len()
    }

    /// Observation probability as the spec defines it (explicit or derived).
    fn z_raw(&self, t: usize, a: usize, i: usize, theta: usize) -> f64 {
        if let Some(z) = &self.observation {
            return z[t][a][i][theta];
        }
        let (sens, spec) = (self.sensitivity[t][a], self.specificity[t][a]);
        match (i == HEALTHY, theta == POS) {
            (true, false) => spec,
            (true, true) => 1.0 - spec,
            (false, true) => sens,
            (false, false) => 1.0 - sens,
        }
    }

    /// Every invariant violation; empty iff the document is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: String, message: &str| out.push(Violation { path, message: message.to_string() });
        let (t_max, n, na) = (self.horizon, self.n(), self.actions.len());
        if self.schema != SCHEMA {
            bad("schema".into(), "unsupported schema version");
        }
        if t_max < 1 {
            bad("horizon".into(), "must be at least 1");
        }
        if n < 2 {
            bad("states".into(), "need at least two core states");
        }
        if self.absorbing_states.is_empty() {
            bad("absorbing_states".into(), "need a death-by-cancer state");
        }
        if na < 2 {
            bad("actions".into(), "need the wait action and at least one screening action");
        }
        if self.observations.len() != 2 {
            bad("observations".into(), "exactly two observations (negative, positive) are supported");
        }
        // Shapes first; value checks only make sense on well-shaped data.
        let nf = self.n_full();
        let shape4 = |x: &Vec<Vec<Vec<Vec<f64>>>>, d: [usize; 4]| {
            x.len() == d[0]
                && x.iter().all(|xt| {
                    xt.len() == d[1] && xt.iter().all(|xa| xa.len() == d[2] && xa.iter().all(|r| r.len() == d[3]))
                })
        };
        let shape2 = |x: &Vec<Vec<f64>>, d: [usize; 2]| x.len() == d[0] && x.iter().all(|r| r.len() == d[1]);
        if !shape4(&self.transition, [t_max, na, n, nf]) {
            bad("transition".into(), &format!("expected shape [{t_max}][{na}][{n}][{nf}]"));
        }
        match &self.observation {
            Some(z) => {
                if !shape4(z, [t_max, na, n, 2]) {
                    bad("observation".into(), &format!("expected shape [{t_max}][{na}][{n}][2]"));
                }
            }
            None => {
                for (key, x) in [("sensitivity", &self.sensitivity), ("specificity", &self.specificity)] {
                    if !shape2(x, [t_max, na]) {
                        bad(key.into(), &format!("expected shape [{t_max}][{na}]"));
                    }
                }
            }
        }
        if self.disutilities_days.screening.len() != na {
            bad("disutilities_days.screening".into(), &format!("expected {na} entries"));
        }
        for (key, x) in [("salvage", &self.salvage), ("post_diag_mortality", &self.post_diag_mortality)] {
            if !shape2(x, [t_max, n]) {
                bad(key.into(), &format!("expected shape [{t_max}][{n}]"));
            }
        }
        if self.terminal.len() != n {
            bad("terminal".into(), &format!("expected {n} entries"));
        }
        if self.costs.len() != na {
            bad("costs".into(), &format!("expected {na} entries"));
        }
        if let Some(b) = &self.initial_belief {
            if b.len() != n {
                bad("initial_belief".into(), &format!("expected {n} entries"));
            }
        }
        if !out.is_empty() {
            return out;
        }

        let mut bad = |path: String, message: String| out.push(Violation { path, message });
        for t in 0..t_max {
            for a in 0..na {
                for i in 0..n {
                    let row = &self.transition[t][a][i];
                    let path = format!("transition[{t}][{a}][{i}]");
                    if row.iter().any(|&x| !prob_ok(x)) {
                        bad(path.clone(), "entries must lie in [0, 1]".into());
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > ROW_TOL {
                        bad(path.clone(), format!("row sums to {s}, expected 1"));
                    }
                    for (j, &x) in row.iter().enumerate().take(i) {
                        if x != 0.0 {
                            bad(format!("{path}[{j}]"), "transition matrices must be upper diagonal".into());
                        }
                    }
                    if self.action_independent && a > 0 && self.transition[t][a][i] != self.transition[t][0][i] {
                        bad(path.clone(), "differs from the wait row of a declared action-independent model".into());
                    }
                    let z: Vec<f64> = (0..2).map(|th| self.z_raw(t, a, i, th)).collect();
                    let zpath = format!("observation[{t}][{a}][{i}]");
                    if z.iter().any(|&x| !prob_ok(x)) {
                        bad(zpath.clone(), "entries must lie in [0, 1]".into());
                    }
                    if (z[0] + z[1] - 1.0).abs() > ROW_TOL {
                        bad(zpath, format!("row sums to {}, expected 1", z[0] + z[1]));
                    }
                }
                if self.observation.is_some() && !self.sensitivity.is_empty() && !self.specificity.is_empty() {
                    let (se, sp) = (self.sensitivity[t][a], self.specificity[t][a]);
                    if (self.z_raw(t, a, HEALTHY, NEG) - sp).abs() > ROW_TOL
                        || (1..n).any(|i| (self.z_raw(t, a, i, POS) - se).abs() > ROW_TOL)
                    {
                        bad(format!("observation[{t}][{a}]"), "inconsistent with sensitivity/specificity".into());
                    }
                }
            }
            for i in 0..n {
                if !prob_ok(self.post_diag_mortality[t][i]) {
                    bad(format!("post_diag_mortality[{t}][{i}]"), "must lie in [0, 1]".into());
                }
                if !self.salvage[t][i].is_finite() {
                    bad(format!("salvage[{t}][{i}]"), "must be finite".into());
                }
            }
        }
        for (a, &c) in self.costs.iter().enumerate() {
            if !(c >= 0.0 && c.is_finite()) {
                bad(format!("costs[{a}]"), "must be finite and nonnegative".into());
            }
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0 && b.is_finite()) {
                bad("budget".into(), "must be finite and nonnegative".into());
            }
        }
        let d = &self.disutilities_days;
        if d.screening.first().copied().unwrap_or(0.0) != 0.0 {
            bad("disutilities_days.screening[0]".into(), "the wait action carries no screening disutility".into());
        }
        for (k, &x) in d.screening.iter().chain([&d.true_positive, &d.false_positive]).enumerate() {
            if !(x >= 0.0 && x.is_finite()) {
                bad(format!("disutilities_days[{k}]"), "must be finite and nonnegative".into());
            }
        }
        if self.terminal.iter().any(|x| !x.is_finite()) {
            bad("terminal".into(), "must be finite".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            bad("discount".into(), "must lie in (0, 1]".into());
        }
        if !(self.scale[0] > 0.0 && self.scale[1] > 0.0) {
            bad("scale".into(), "scale factors must be positive".into());
        }
        if let Some(b) = &self.initial_belief {
            if let Err(e) = BeliefState::new(b.clone()) {
                bad("initial_belief".into(), e.to_string());
            }
        }
        out
    }
}

/// A probability vector over the core states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefState(Vec<f64>);

impl BeliefState {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.iter().any(|&x| !(x >= 0.0)) {
            return Err(CoreError::InvalidArgument("belief components must be nonnegative".into()));
        }
        let s: f64 = pi.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidArgument(format!("belief sums to {s}, expected 1")));
        }
        Ok(Self(pi))
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for BeliefState {
    type Error = CoreError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BeliefState> for Vec<f64> {
    fn from(b: BeliefState) -> Self {
        b.0
    }
}

impl std::ops::Deref for BeliefState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A validated model with flat, precomputed tensors.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    n: usize,
    na: usize,
    horizon: usize,
    /// Core-state transition rows `[t][a][i][j]`, substochastic when death exits.
    p: Vec<f64>,
    z: Vec<f64>,
    /// `[t][a][i]` probability of any absorbing transition in the full space.
    death: Vec<f64>,
    cancer_death: Vec<f64>,
    /// `[t][a][i][theta]` per-epoch QALY reward.
    reward: Vec<f64>,
    /// `[t][a][i]` expected immediate QALYs including salvage (undiscounted).
    qaly: Vec<f64>,
    risk: Vec<f64>,
    diag: Vec<f64>,
    surv: Vec<f64>,
    disc: Vec<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let v = spec.validate();
        if !v.is_empty() {
            return Err(CoreError::InvalidModel(v));
        }
        let (t_max, na, n) = (spec.horizon, spec.actions.len(), spec.states.len());
        let cells = t_max * na * n;
        let mut m = Model {
            n,
            na,
            horizon: t_max,
            p: vec![0.0; cells * n],
            z: vec![0.0; cells * 2],
            death: vec![0.0; cells],
            cancer_death: vec![0.0; cells],
            reward: vec![0.0; cells * 2],
            qaly: vec![0.0; cells],
            risk: vec![0.0; cells],
            diag: vec![0.0; cells],
            surv: vec![0.0; cells],
            disc: (0..=t_max).map(|t| spec.discount.powi(t as i32)).collect(),
            spec,
        };
        for t in 0..t_max {
            for a in 0..na {
                for i in 0..n {
                    let c = m.cell(t, a, i);
                    let full = &m.spec.transition[t][a][i];
                    let core: f64 = full[..n].iter().sum();
                    let norm = if m.spec.death_exits || core <= 0.0 { 1.0 } else { core };
                    for j in 0..n {
                        m.p[c * n + j] = full[j] / norm;
                    }
                    m.surv[c] = m.p[c * n..(c + 1) * n].iter().sum();
                    m.death[c] = full[n..].iter().sum();
                    m.cancer_death[c] = full[n];
                    for th in 0..2 {
                        m.z[c * 2 + th] = m.spec.z_raw(t, a, i, th);
                    }
                }
            }
        }
        for t in 0..t_max {
            for a in 0..na {
                let rows = m.screening_rewards_unchecked(t, a);
                for (i, row) in rows.iter().enumerate() {
                    let c = m.cell(t, a, i);
                    m.reward[c * 2..c * 2 + 2].copy_from_slice(row);
                    let diag = if m.exits_on(a, POS, i) { m.z[c * 2 + POS] } else { 0.0 };
                    let q = m.spec.post_diag_mortality[t][i];
                    m.diag[c] = diag;
                    m.qaly[c] = m.z[c * 2] * row[0] + m.z[c * 2 + 1] * row[1] + diag * m.spec.salvage[t][i];
                    m.risk[c] = diag * q + m.cancer_death[c] * (1.0 - diag);
                }
            }
        }
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(ModelSpec::from_json(text)?)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_actions(&self) -> usize {
        self.na
    }

    pub fn n_observations(&self) -> usize {
        2
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_label(&self, a: usize) -> &str {
        &self.spec.actions[a]
    }

    pub fn age(&self, t: usize) -> u32 {
        self.spec.start_age + t as u32
    }

    fn cell(&self, t: usize, a: usize, i: usize) -> usize {
        (t * self.na + a) * self.n + i
    }

    /// Whether observing `theta` after `a` in state `i` ends the process (a
    /// true positive diagnosis).
    pub fn exits_on(&self, a: usize, theta: usize, i: usize) -> bool {
        a != WAIT && theta == POS && i != HEALTHY
    }

    pub fn p(&self, t: usize, a: usize, i: usize, j: usize) -> f64 {
        self.p[self.cell(t, a, i) * self.n + j]
    }

    pub fn p_row(&self, t: usize, a: usize, i: usize) -> &[f64] {
        let c = self.cell(t, a, i) * self.n;
        &self.p[c..c + self.n]
    }

    /// Full-space row including absorbing states.
    pub fn p_full_row(&self, t: usize, a: usize, i: usize) -> &[f64] {
        &self.spec.transition[t][a][i]
    }

    pub fn z(&self, t: usize, a: usize, i: usize, theta: usize) -> f64 {
        self.z[self.cell(t, a, i) * 2 + theta]
    }

    pub fn death_prob(&self, t: usize, a: usize, i: usize) -> f64 {
        self.death[self.cell(t, a, i)]
    }

    pub fn cancer_death_prob(&self, t: usize, a: usize, i: usize) -> f64 {
        self.cancer_death[self.cell(t, a, i)]
    }

    /// Mass of core state `i` that stays in the core states for one step.
    pub fn survival(&self, t: usize, a: usize, i: usize) -> f64 {
        self.surv[self.cell(t, a, i)]
    }

    /// Per-epoch QALY reward `r^{ta}_{i theta}` (undiscounted).
    pub fn reward(&self, t: usize, a: usize, i: usize, theta: usize) -> f64 {
        self.reward[self.cell(t, a, i) * 2 + theta]
    }

    /// Expected QALYs credited at epoch `t` for state `i` under `a`, including
    /// diagnosis salvage, discounted to epoch 0.
    pub fn qaly_coef(&self, t: usize, a: usize, i: usize) -> f64 {
        self.disc[t] * self.qaly[self.cell(t, a, i)]
    }

    /// Probability that state `i` under `a` at `t` produces a death-by-cancer
    /// event this epoch (after diagnosis or while undiagnosed).
    pub fn risk_coef(&self, t: usize, a: usize, i: usize) -> f64 {
        self.risk[self.cell(t, a, i)]
    }

    /// Probability of a true-positive exit.
    pub fn diag_mass(&self, t: usize, a: usize, i: usize) -> f64 {
        self.diag[self.cell(t, a, i)]
    }

    pub fn terminal_value(&self, i: usize) -> f64 {
        self.disc[self.horizon] * self.spec.terminal[i]
    }

    pub fn discount_factor(&self, t: usize) -> f64 {
        self.disc[t]
    }

    pub fn salvage(&self, t: usize, i: usize) -> f64 {
        self.spec.salvage[t][i]
    }

    pub fn post_diag_mortality(&self, t: usize, i: usize) -> f64 {
        self.spec.post_diag_mortality[t][i]
    }

    pub fn cost(&self, a: usize) -> f64 {
        self.spec.costs[a]
    }

    pub fn budget(&self) -> Option<f64> {
        self.spec.budget
    }

    pub fn scale(&self) -> [f64; 2] {
        self.spec.scale
    }

    /// Half-cycle corrected reward of an epoch spent in state `i`: a full
    /// year if alive at the next epoch, half a year otherwise.
    pub fn wait_reward(&self, t: usize, i: usize) -> f64 {
        half_cycle(self.death_prob(t, WAIT, i))
    }

    fn screening_rewards_unchecked(&self, t: usize, a: usize) -> Vec<[f64; 2]> {
        let d = &self.spec.disutilities_days;
        let scr = d.screening[a] / 365.0;
        (0..self.n)
            .map(|i| {
                let w = half_cycle(self.spec.transition[t][WAIT][i][self.n..].iter().sum());
                if a == WAIT {
                    return [w, w];
                }
                let pos = if i == HEALTHY { d.false_positive } else { d.true_positive } / 365.0;
                [w - scr, w - scr - pos]
            })
            .collect()
    }

    /// Rows `r[i][theta]` for action `a` at epoch `t`.
    pub fn screening_rewards(&self, t: usize, a: usize) -> Vec<[f64; 2]> {
        (0..self.n).map(|i| [self.reward(t, a, i, NEG), self.reward(t, a, i, POS)]).collect()
    }

    /// Bayes update with observation at the source state, then transition.
    /// Accepts unnormalized input; the output is normalized.
    pub fn belief_update(&self, pi: &[f64], t: usize, a: usize, theta: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        for (i, &pi_i) in pi.iter().enumerate() {
            let w = pi_i * self.z(t, a, i, theta);
            if w == 0.0 {
                continue;
            }
            for (o, &pij) in out.iter_mut().zip(self.p_row(t, a, i)) {
                *o += w * pij;
            }
        }
        let total: f64 = out.iter().sum();
        if !(total > 0.0) {
            return Err(CoreError::ZeroLikelihood { t, a, theta });
        }
        out.iter_mut().for_each(|x| *x /= total);
        Ok(out)
    }

    /// The belief the process continues from after `(a, theta)` at `b`, and
    /// the probability of continuing that way. True positives leave the
    /// process, so after a positive screening result only the healthy mass
    /// continues. Returns `None` when that probability is zero.
    pub fn continuation(&self, b: &[f64], t: usize, a: usize, theta: usize) -> Option<(f64, Vec<f64>)> {
        let mut out = vec![0.0; self.n];
        for (i, &b_i) in b.iter().enumerate() {
            if b_i == 0.0 || self.exits_on(a, theta, i) {
                continue;
            }
            let w = b_i * self.z(t, a, i, theta);
            for (o, &pij) in out.iter_mut().zip(self.p_row(t, a, i)) {
                *o += w * pij;
            }
        }
        let mass: f64 = out.iter().sum();
        if !(mass > 0.0) {
            return None;
        }
        out.iter_mut().for_each(|x| *x /= mass);
        Some((mass, out))
    }

    /// Initial belief from the document, if present.
    pub fn initial_belief(&self) -> Option<BeliefState> {
        self.spec.initial_belief.clone().map(BeliefState)
    }
}

/// `1·(1−d) + 0.5·d`.
pub fn half_cycle(d: f64) -> f64 {
    1.0 - 0.5 * d
}
