//! Monte-Carlo evaluation of screening policies.
//!
//! Each replication owns a ChaCha8 stream `(seed, replication)` and draws a
//! fixed number of uniforms per epoch whether or not it uses them, so two
//! policies simulated with the same seed share random numbers epoch by epoch.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GridSet;
use crate::model::{Model, HEALTHY, NEG, POS, WAIT};
use crate::policy::Policy;
use crate::projection::{dominant, project_with, ProjectionStrategy, ProjectionTables};

const DRAWS_PER_EPOCH: usize = 7;
const U_ACTION: usize = 0;
const U_STATE: usize = 1;
const U_OBS: usize = 2;
const U_FATE: usize = 3;
const U_NEXT: usize = 4;
const U_DIAG_DEATH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// The approximate chain over grid points that the programs optimize.
    GridChain,
    /// The underlying partially observed process with belief tracking.
    Belief,
}

impl std::str::FromStr for SimMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid-chain" => Ok(SimMode::GridChain),
            "belief" => Ok(SimMode::Belief),
            _ => Err(CoreError::InvalidArgument(format!("unknown simulation mode '{s}'"))),
        }
    }
}

/// What a simulation needs besides the policy. Grid-indexed policies need
/// `grid`; grid-chain mode needs `tables`.
#[derive(Debug, Clone, Copy)]
pub struct SimContext<'a> {
    pub model: &'a Model,
    pub grid: Option<&'a GridSet>,
    pub tables: Option<&'a ProjectionTables>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub reps: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub mode: SimMode,
    pub reps: usize,
    pub seed: u64,
    pub qaly: Estimate,
    /// Share of replications dying of cancer.
    pub lbcmr: Estimate,
    pub cost: Estimate,
    pub actions: Vec<String>,
    /// Percentage of decision epochs spent on each action.
    pub action_pct: Vec<f64>,
    pub budget: Option<f64>,
    /// Mean cost above the budget.
    pub overshoot: bool,
}

impl SimReport {
    pub fn csv_header(actions: &[String]) -> String {
        let mut h = String::from("policy,mode,reps,seed,qaly,qaly_se,lbcmr,lbcmr_se,cost,cost_se");
        for a in actions {
            let _ = write!(h, ",pct[{a}]");
        }
        h.push_str(",overshoot");
        h
    }

    pub fn csv_row(&self) -> String {
        let mode = match self.mode {
            SimMode::GridChain => "grid-chain",
            SimMode::Belief => "belief",
        };
        let mut r = format!(
            "{},{mode},{},{},{},{},{},{},{},{}",
            self.policy, self.reps, self.seed, self.qaly.mean, self.qaly.se, self.lbcmr.mean, self.lbcmr.se, self.cost.mean, self.cost.se
        );
        for p in &self.action_pct {
            let _ = write!(r, ",{p}");
        }
        let _ = write!(r, ",{}", self.overshoot as u8);
        r
    }
}

/// Outcome of one simulated lifetime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub qaly: f64,
    /// Cancer death events (0 or 1 when deaths leave the process).
    pub cancer_deaths: f64,
    pub cost: f64,
    pub action_counts: Vec<u32>,
}

/// Neumaier-compensated sum, in slice order.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Sample mean and standard error of the mean.
pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate { mean: f64::NAN, se: f64::NAN };
    }
    let mean = neumaier_sum(xs.iter().copied()) / n as f64;
    if n == 1 {
        return Estimate { mean, se: 0.0 };
    }
    let var = neumaier_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64;
    Estimate { mean, se: (var / n as f64).sqrt() }
}

fn sample_index(weights: impl IntoIterator<Item = (usize, f64)>, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if u < acc {
            return last;
        }
    }
    last
}

fn rng_for(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn epoch_draws(rng: &mut ChaCha8Rng) -> [f64; DRAWS_PER_EPOCH] {
    let mut u = [0.0; DRAWS_PER_EPOCH];
    for x in &mut u {
        *x = rng.gen();
    }
    u
}

fn strategy(ctx: &SimContext) -> ProjectionStrategy {
    ctx.tables.map(|t| t.strategy).unwrap_or_default()
}

/// Action at `(t, k)`; `k` is ignored for schedules.
fn choose(policy: &Policy, t: usize, k: Option<usize>, u: f64) -> Result<usize> {
    match policy {
        Policy::NoScreening => Ok(WAIT),
        Policy::Rule(s) => Ok(s.action_at(t)),
        Policy::Grid(g) => {
            let k = k.ok_or_else(|| CoreError::InvalidArgument("grid policy needs a grid".into()))?;
            let d = g.dist(t, k)?;
            Ok(sample_index(d.iter().copied().enumerate(), u).unwrap_or(WAIT))
        }
    }
}

fn check(ctx: &SimContext, policy: &Policy, pi0: &[f64], mode: SimMode) -> Result<()> {
    let m = ctx.model;
    if pi0.len() != m.n_states() {
        return Err(CoreError::InvalidArgument(format!("initial belief has {} entries, model has {} states", pi0.len(), m.n_states())));
    }
    if let Policy::Grid(g) = policy {
        let grid = ctx.grid.ok_or_else(|| CoreError::InvalidArgument("grid policy needs a grid".into()))?;
        if g.n_grid != grid.len() || g.horizon != m.horizon() || g.n_actions != m.n_actions() {
            return Err(CoreError::InvalidArgument("policy shape does not match the model and grid".into()));
        }
    }
    if let Policy::Rule(s) = policy {
        if s.action >= m.n_actions() {
            return Err(CoreError::InvalidArgument(format!("schedule action {} out of range", s.action)));
        }
    }
    if mode == SimMode::GridChain && (ctx.tables.is_none() || ctx.grid.is_none()) {
        return Err(CoreError::InvalidArgument("grid-chain mode needs a grid and projection tables".into()));
    }
    Ok(())
}

fn run_grid_chain(ctx: &SimContext, policy: &Policy, delta: &[(u32, f64)], rep: usize, seed: u64) -> Result<Outcome> {
    let m = ctx.model;
    let grid = ctx.grid.expect("checked");
    let tables = ctx.tables.expect("checked");
    let n = m.n_states();
    let mut rng = rng_for(seed, rep);
    let mut out = Outcome { action_counts: vec![0; m.n_actions()], ..Default::default() };
    let mut k = sample_index(delta.iter().map(|&(k, w)| (k as usize, w)), rng.gen()).expect("projection has support");
    for t in 0..m.horizon() {
        let u = epoch_draws(&mut rng);
        let a = choose(policy, t, Some(k), u[U_ACTION])?;
        out.action_counts[a] += 1;
        out.cost += m.cost(a);
        let g = &grid.points[k];
        let i = sample_index(g.iter().copied().enumerate(), u[U_STATE]).expect("grid point has support");
        let theta = if u[U_OBS] < m.z(t, a, i, NEG) { NEG } else { POS };
        let disc = m.discount_factor(t);
        out.qaly += disc * m.reward(t, a, i, theta);
        if m.exits_on(a, theta, i) {
            out.qaly += disc * m.salvage(t, i);
            if u[U_DIAG_DEATH] < m.post_diag_mortality(t, i) {
                out.cancer_deaths += 1.0;
            }
            return Ok(out);
        }
        let cancer = m.cancer_death_prob(t, a, i);
        if m.spec().death_exits {
            if u[U_FATE] < m.death_prob(t, a, i) {
                if u[U_FATE] < cancer {
                    out.cancer_deaths += 1.0;
                }
                return Ok(out);
            }
        } else if u[U_FATE] < cancer {
            out.cancer_deaths += 1.0;
        }
        let row = tables.beta.row(t, a, theta, k).ok_or_else(|| {
            CoreError::InvalidArgument(format!("continuation from grid point {k} at epoch {t} has zero probability"))
        })?;
        k = sample_index(row.iter().map(|&(l, w)| (l as usize, w)), u[U_NEXT]).expect("non-empty row");
    }
    out.qaly += grid.points[k].iter().enumerate().map(|(i, g)| g * m.terminal_value(i)).sum::<f64>();
    debug_assert!(n == grid.points[k].len());
    Ok(out)
}

fn run_belief(ctx: &SimContext, policy: &Policy, pi0: &[f64], rep: usize, seed: u64) -> Result<Outcome> {
    let m = ctx.model;
    let n = m.n_states();
    let dis = &m.spec().disutilities_days;
    let mut rng = rng_for(seed, rep);
    let mut out = Outcome { action_counts: vec![0; m.n_actions()], ..Default::default() };
    let mut s = sample_index(pi0.iter().copied().enumerate(), rng.gen()).expect("belief has support");
    let mut b = pi0.to_vec();
    for t in 0..m.horizon() {
        let u = epoch_draws(&mut rng);
        let k = match (policy, ctx.grid) {
            (Policy::Grid(_), Some(grid)) => Some(dominant(&project_with(&b, grid, strategy(ctx))?)),
            _ => None,
        };
        let a = choose(policy, t, k, u[U_ACTION])?;
        out.action_counts[a] += 1;
        out.cost += m.cost(a);
        let theta = if u[U_OBS] < m.z(t, a, s, NEG) { NEG } else { POS };
        let disc = m.discount_factor(t);
        let mut disutility = 0.0;
        if a != WAIT {
            disutility += dis.screening[a] / 365.0;
            if theta == POS {
                disutility += if s == HEALTHY { dis.false_positive } else { dis.true_positive } / 365.0;
            }
        }
        if m.exits_on(a, theta, s) {
            out.qaly += disc * (m.reward(t, a, s, theta) + m.salvage(t, s));
            if u[U_DIAG_DEATH] < m.post_diag_mortality(t, s) {
                out.cancer_deaths += 1.0;
            }
            return Ok(out);
        }
        if m.spec().death_exits {
            let full = m.p_full_row(t, a, s);
            let next = sample_index(full.iter().copied().enumerate(), u[U_FATE]).expect("row has support");
            if next >= n {
                out.qaly += disc * (0.5 - disutility);
                if next == n {
                    out.cancer_deaths += 1.0;
                }
                return Ok(out);
            }
            out.qaly += disc * (1.0 - disutility);
            s = next;
        } else {
            if u[U_FATE] < m.cancer_death_prob(t, a, s) {
                out.cancer_deaths += 1.0;
            }
            out.qaly += disc * m.reward(t, a, s, theta);
            s = sample_index(m.p_row(t, a, s).iter().copied().enumerate(), u[U_NEXT]).expect("row has support");
        }
        b = m.continuation(&b, t, a, theta).map(|(_, img)| img).ok_or(CoreError::ZeroLikelihood { t, a, theta })?;
    }
    out.qaly += m.terminal_value(s);
    Ok(out)
}

/// Per-replication outcomes, in replication order.
pub fn simulate_outcomes(ctx: &SimContext, policy: &Policy, pi0: &[f64], cfg: &SimConfig) -> Result<Vec<Outcome>> {
    if cfg.reps == 0 {
        return Err(CoreError::InvalidArgument("at least one replication is required".into()));
    }
    check(ctx, policy, pi0, cfg.mode)?;
    let delta = match cfg.mode {
        SimMode::GridChain => project_with(pi0, ctx.grid.expect("checked"), strategy(ctx))?,
        SimMode::Belief => Vec::new(),
    };
    let run = |rep: usize| match cfg.mode {
        SimMode::GridChain => run_grid_chain(ctx, policy, &delta, rep, cfg.seed),
        SimMode::Belief => run_belief(ctx, policy, pi0, rep, cfg.seed),
    };
    let threads = cfg.threads.clamp(1, cfg.reps);
    if threads == 1 {
        return (0..cfg.reps).map(run).collect();
    }
    let chunk = cfg.reps.div_ceil(threads);
    let mut parts: Vec<Result<Vec<Outcome>>> = Vec::new();
    std::thread::scope(|sc| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let run = &run;
                sc.spawn(move || (w * chunk..((w + 1) * chunk).min(cfg.reps)).map(run).collect::<Result<Vec<_>>>())
            })
            .collect();
        parts = handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect();
    });
    let mut all = Vec::with_capacity(cfg.reps);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

pub fn summarize(model: &Model, policy: &Policy, outcomes: &[Outcome], cfg: &SimConfig) -> SimReport {
    let col = |f: fn(&Outcome) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
    let na = model.n_actions();
    let mut counts = vec![0u64; na];
    for o in outcomes {
        for (c, &x) in counts.iter_mut().zip(&o.action_counts) {
            *c += x as u64;
        }
    }
    let epochs: u64 = counts.iter().sum();
    let action_pct = counts.iter().map(|&c| if epochs == 0 { 0.0 } else { 100.0 * c as f64 / epochs as f64 }).collect();
    let cost = estimate(&col(|o| o.cost));
    let labels: Vec<String> = model.spec().actions.clone();
    SimReport {
        policy: policy.name(&labels),
        mode: cfg.mode,
        reps: outcomes.len(),
        seed: cfg.seed,
        qaly: estimate(&col(|o| o.qaly)),
        lbcmr: estimate(&col(|o| o.cancer_deaths)),
        overshoot: model.budget().is_some_and(|c| cost.mean > c + 1e-9),
        cost,
        actions: labels,
        action_pct,
        budget: model.budget(),
    }
}

/// Simulates `cfg.reps` lifetimes starting from `pi0`.
pub fn simulate(ctx: &SimContext, policy: &Policy, pi0: &[f64], cfg: &SimConfig) -> Result<SimReport> {
    let outcomes = simulate_outcomes(ctx, policy, pi0, cfg)?;
    Ok(summarize(ctx.model, policy, &outcomes, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub policy: String,
    /// Paired mean QALY difference against the baseline.
    pub qaly_gain: Estimate,
    /// Paired decrease in cancer mortality against the baseline.
    pub lbcmr_decrease: Estimate,
    pub cost_increase: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub reports: Vec<SimReport>,
    pub deltas: Vec<Delta>,
}

/// Simulates every policy on common random numbers and reports paired
/// differences against `policies[baseline]`.
pub fn compare_policies(ctx: &SimContext, policies: &[Policy], baseline: usize, pi0: &[f64], cfg: &SimConfig) -> Result<Comparison> {
    if baseline >= policies.len() {
        return Err(CoreError::InvalidArgument(format!("baseline index {baseline} out of range")));
    }
    let runs = policies.iter().map(|p| simulate_outcomes(ctx, p, pi0, cfg)).collect::<Result<Vec<_>>>()?;
    let base = &runs[baseline];
    let paired = |o: &[Outcome], f: fn(&Outcome) -> f64, sign: f64| {
        estimate(&o.iter().zip(base).map(|(x, y)| sign * (f(x) - f(y))).collect::<Vec<_>>())
    };
    let labels = &ctx.model.spec().actions;
    Ok(Comparison {
        baseline: policies[baseline].name(labels),
        reports: policies.iter().zip(&runs).map(|(p, o)| summarize(ctx.model, p, o, cfg)).collect(),
        deltas: policies
            .iter()
            .zip(&runs)
            .map(|(p, o)| Delta {
                policy: p.name(labels),
                qaly_gain: paired(o, |x| x.qaly, 1.0),
                lbcmr_decrease: paired(o, |x| x.cancer_deaths, -1.0),
                cost_increase: paired(o, |x| x.cost, 1.0),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub age: u32,
    pub belief: Vec<f64>,
    /// Grid point whose action was used, for grid policies.
    pub k: Option<usize>,
    pub action: usize,
}

/// Follows a patient whose every result is negative: the belief is pushed
/// through the negative-observation update after each epoch.
pub fn trace_scenario(ctx: &SimContext, policy: &Policy, pi0: &[f64]) -> Result<Vec<TraceRow>> {
    let m = ctx.model;
    check(ctx, policy, pi0, SimMode::Belief)?;
    let mut b = pi0.to_vec();
    let mut rows = Vec::with_capacity(m.horizon());
    for t in 0..m.horizon() {
        let (k, a) = match (policy, ctx.grid) {
            (Policy::Grid(g), Some(grid)) => {
                let k = dominant(&project_with(&b, grid, strategy(ctx))?);
                (Some(k), g.mode(t, k)?)
            }
            _ => (None, choose(policy, t, None, 0.0)?),
        };
        rows.push(TraceRow { t, age: m.age(t), belief: b.clone(), k, action: a });
        b = m.belief_update(&b, t, a, NEG)?;
    }
    Ok(rows)
}

/// `age,<percent per non-healthy state>,action`, optionally without wait rows.
pub fn trace_csv(model: &Model, rows: &[TraceRow], omit_wait: bool) -> String {
    let states = &model.spec().states;
    let mut out = String::from("age");
    for s in states.iter().skip(1) {
        let _ = write!(out, ",{s}_pct");
    }
    out.push_str(",action\n");
    for r in rows.iter().filter(|r| !(omit_wait && r.action == WAIT)) {
        let _ = write!(out, "{}", r.age);
        for p in r.belief.iter().skip(1) {
            let _ = write!(out, ",{}", 100.0 * p);
        }
        let _ = writeln!(out, ",{}", model.action_label(r.action));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::build_fixed;
    use crate::model::BeliefState;

    fn cfg(reps: usize, mode: SimMode) -> SimConfig {
        SimConfig { reps, seed: 11, mode, threads: 3 }
    }

    /// Two core states, no cancer, constant other-cause death.
    fn cancer_free(horizon: usize, d: f64) -> Model {
        let p = vec![vec![1.0 - d, 0.0, 0.0, d], vec![0.0, 1.0 - d, 0.0, d]];
        let mut spec = fixtures::stationary(horizon, vec![p.clone(), p], vec![0.05, 0.9], vec![0.99, 0.9]);
        spec.terminal = vec![4.0, 2.0];
        spec.costs = vec![0.0, 100.0];
        Model::new(spec).unwrap()
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(neumaier_sum(xs), 1.0);
        let e = estimate(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.se - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_screening_matches_survival_product() {
        let (h, d) = (5, 0.1);
        let m = cancer_free(h, d);
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let r = simulate(&ctx, &Policy::NoScreening, &[1.0, 0.0], &cfg(100_000, SimMode::Belief)).unwrap();
        let mut expect = 0.0;
        for t in 0..h {
            expect += (1.0 - d).powi(t as i32) * (1.0 - 0.5 * d);
        }
        expect += (1.0 - d).powi(h as i32) * 4.0;
        assert!((r.qaly.mean - expect).abs() < 3.0 * r.qaly.se + 1e-12, "{} vs {expect} ({})", r.qaly.mean, r.qaly.se);
        assert_eq!(r.cost.mean, 0.0);
        assert_eq!(r.lbcmr.mean, 0.0);
        assert_eq!(r.action_pct[WAIT], 100.0);
    }

    #[test]
    fn immediate_death_gives_half_cycle() {
        let p = vec![vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 0.0]];
        let m = Model::new(fixtures::stationary(3, vec![p.clone(), p], vec![0.1, 0.9], vec![0.9, 0.9])).unwrap();
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let r = simulate(&ctx, &Policy::NoScreening, &[1.0, 0.0], &cfg(50, SimMode::Belief)).unwrap();
        assert_eq!((r.qaly.mean, r.lbcmr.mean), (0.5, 0.0));
        let r = simulate(&ctx, &Policy::NoScreening, &[0.0, 1.0], &cfg(50, SimMode::Belief)).unwrap();
        assert_eq!((r.qaly.mean, r.lbcmr.mean), (0.5, 1.0));
        assert_eq!(r.qaly.se, 0.0);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let m = fixtures::default_model();
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let mut c = cfg(2000, SimMode::Belief);
        let a = simulate(&ctx, &Policy::every(1, 1), &fixtures::AVERAGE_RISK_BELIEF, &c).unwrap();
        c.threads = 1;
        let b = simulate(&ctx, &Policy::every(1, 1), &fixtures::AVERAGE_RISK_BELIEF, &c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        c.seed += 1;
        let d = simulate(&ctx, &Policy::every(1, 1), &fixtures::AVERAGE_RISK_BELIEF, &c).unwrap();
        assert_ne!(a.qaly.mean, d.qaly.mean);
    }

    #[test]
    fn annual_costs_twice_biennial_without_exits() {
        let h = 6;
        let p = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let mut spec = fixtures::stationary(h, vec![p.clone(), p], vec![0.0, 0.0], vec![1.0, 1.0]);
        spec.costs = vec![0.0, 134.0];
        let m = Model::new(spec).unwrap();
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let c = cfg(100, SimMode::Belief);
        let cmp = compare_policies(&ctx, &[Policy::NoScreening, Policy::every(1, 1), Policy::every(1, 2)], 0, &[1.0, 0.0], &c).unwrap();
        assert_eq!(cmp.reports[1].cost.mean, 134.0 * h as f64);
        assert_eq!(cmp.reports[2].cost.mean, 134.0 * (h as f64 / 2.0));
        assert_eq!(cmp.deltas[0].qaly_gain, Estimate { mean: 0.0, se: 0.0 });
        assert_eq!(cmp.baseline, "no-screening");
    }

    #[test]
    fn identical_policies_have_zero_deltas() {
        let m = fixtures::default_model();
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let pol = Policy::every(1, 2);
        let cmp = compare_policies(&ctx, &[pol.clone(), pol], 0, &fixtures::AVERAGE_RISK_BELIEF, &cfg(500, SimMode::Belief)).unwrap();
        for d in &cmp.deltas {
            assert_eq!((d.qaly_gain.mean, d.lbcmr_decrease.mean, d.cost_increase.mean), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn grid_chain_needs_tables_and_grid_policy_needs_grid() {
        let m = cancer_free(2, 0.1);
        let ctx = SimContext { model: &m, grid: None, tables: None };
        assert!(simulate(&ctx, &Policy::NoScreening, &[1.0, 0.0], &cfg(1, SimMode::GridChain)).is_err());
        assert!(simulate(&ctx, &Policy::NoScreening, &[1.0, 0.0], &cfg(0, SimMode::Belief)).is_err());
        let g = build_fixed(1, 2).unwrap();
        let pol = Policy::Grid(crate::policy::GridPolicy::new(2, g.len(), 2, vec![], None));
        let ctx = SimContext { model: &m, grid: Some(&g), tables: None };
        assert!(matches!(
            simulate(&ctx, &pol, &[1.0, 0.0], &cfg(1, SimMode::Belief)),
            Err(CoreError::PolicyDomain { t: 0, .. })
        ));
    }

    #[test]
    fn trace_matches_manual_negative_updates() {
        let m = fixtures::default_model();
        let ctx = SimContext { model: &m, grid: None, tables: None };
        let pol = Policy::every(1, 2);
        let rows = trace_scenario(&ctx, &pol, &fixtures::AVERAGE_RISK_BELIEF).unwrap();
        let mut b = BeliefState::new(fixtures::AVERAGE_RISK_BELIEF.to_vec()).unwrap().into_inner();
        for r in &rows {
            assert_eq!(r.belief, b);
            assert_eq!(r.action, pol_action(&pol, r.t));
            b = m.belief_update(&b, r.t, r.action, NEG).unwrap();
        }
        let csv = trace_csv(&m, &rows, true);
        assert_eq!(csv.lines().count(), 1 + rows.iter().filter(|r| r.action != WAIT).count());
        let none = trace_scenario(&ctx, &Policy::NoScreening, &fixtures::AVERAGE_RISK_BELIEF).unwrap();
        assert_eq!(trace_csv(&m, &none, true).lines().count(), 1);
    }

    fn pol_action(p: &Policy, t: usize) -> usize {
        match p {
            Policy::Rule(s) => s.action_at(t),
            _ => WAIT,
        }
    }

    #[test]
    fn negative_screen_lowers_cancer_mass_with_perfect_specificity() {
        let m = fixtures::default_model();
        let b = fixtures::AVERAGE_RISK_BELIEF.to_vec();
        // Negative result then transition, compared with transition alone.
        let neg = m.belief_update(&b, 0, 1, NEG).unwrap();
        let wait = m.belief_update(&b, 0, WAIT, NEG).unwrap();
        assert!(neg[1] + neg[2] < wait[1] + wait[2]);
    }
}
