//! Occupancy-measure programs over the grid chain: `x[t][k][a]` is the
//! probability of being at grid point `k` at epoch `t` and taking `a`.

use serde::Serialize;

use cpomdp_lp::{solve, Comparison, ConstraintId, Program, Sense, Session, SolveReport, SolveStatus, SolverParams, VarId};

use crate::error::{CoreError, Result};
use crate::grid::GridSet;
use crate::model::{Model, WAIT};
use crate::policy::{GridPolicy, PolicyEntry};
use crate::projection::{project_with, ProjectionTables, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramOptions {
    pub budget: Option<f64>,
    /// Drop `(t, k)` pairs unreachable from the initial distribution.
    pub eliminate: bool,
    /// Add binary indicators forcing one action per kept `(t, k)`.
    pub deterministic: bool,
}

impl ProgramOptions {
    pub fn for_model(model: &Model) -> Self {
        Self { budget: model.budget(), eliminate: true, deterministic: false }
    }
}

/// Forward reachability: `mask[t][k]` for `t in 0..=horizon`.
pub fn useful_mask(tables: &ProjectionTables, delta: &SparseRow) -> Vec<Vec<bool>> {
    let (horizon, ng, na) = (tables.horizon(), tables.n_grid(), tables.n_actions());
    let mut mask = vec![vec![false; ng]; horizon + 1];
    for &(k, w) in delta {
        if w > 0.0 {
            mask[0][k as usize] = true;
        }
    }
    for t in 0..horizon {
        for l in 0..ng {
            if !mask[t][l] {
                continue;
            }
            for a in 0..na {
                for &(k, p) in tables.f_row(t, a, l) {
                    if p > 0.0 {
                        mask[t + 1][k as usize] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Adds `sum(terms) cmp rhs` as one partial-sum row per epoch plus a short
/// total row. A single row over every occupancy variable fills in the basis
/// factorization and slows the simplex badly. Variable names carry the epoch
/// (`x_<t>_...`, `xT_...`), which is how terms are grouped.
fn add_split_row(p: &mut Program, horizon: usize, name: &str, terms: &[(VarId, f64)], cmp: Comparison, rhs: f64) -> ConstraintId {
    let mut groups: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); horizon + 1];
    for &(v, c) in terms {
        let var = &p.variables[v.0].name;
        let t = var.strip_prefix("x_").and_then(|r| r.split('_').next()).and_then(|t| t.parse().ok()).unwrap_or(horizon);
        groups[t.min(horizon)].push((v, c));
    }
    if groups.iter().filter(|g| !g.is_empty()).count() <= 1 {
        return p.add_constraint(name, terms.to_vec(), cmp, rhs);
    }
    let mut total = Vec::new();
    for (t, mut g) in groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty()) {
        let s = p.add_var(format!("{name}_sum_{t}"), f64::NEG_INFINITY, f64::INFINITY);
        g.push((s, -1.0));
        p.add_constraint(format!("{name}_{t}"), g, Comparison::Eq, 0.0);
        total.push((s, 1.0));
    }
    p.add_constraint(name, total, cmp, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    MaxQaly,
    MinRisk,
    /// Maximize `w1 s1 h1 - w2 s2 h2` with the model's scale factors.
    Weighted { w1: f64, w2: f64 },
}

/// Extra rows used by the bi-objective drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    RiskAtMost(f64),
    QalyAtLeast(f64),
}

#[derive(Debug, Clone)]
pub struct OccupancyProgram {
    pub program: Program,
    pub horizon: usize,
    pub n_grid: usize,
    pub n_actions: usize,
    x: Vec<Option<VarId>>,
    terminal: Vec<Option<VarId>>,
    nu: Vec<Option<VarId>>,
    pub h1: Vec<(VarId, f64)>,
    pub h2: Vec<(VarId, f64)>,
    pub cost: Vec<(VarId, f64)>,
    /// Probability of leaving the process, per x variable.
    exit: Vec<(VarId, usize, f64)>,
    pub delta: SparseRow,
    pub useful: Vec<Vec<bool>>,
    pub budget: Option<f64>,
    pub scale: [f64; 2],
}

impl OccupancyProgram {
    pub fn build(model: &Model, grid: &GridSet, tables: &ProjectionTables, pi0: &[f64], opts: ProgramOptions) -> Result<Self> {
        let delta = project_with(pi0, grid, tables.strategy)?;
        let (horizon, ng, na, n) = (model.horizon(), grid.len(), model.n_actions(), model.n_states());
        if tables.n_grid() != ng || tables.horizon() != horizon || tables.n_actions() != na {
            return Err(CoreError::InvalidArgument("projection tables do not match the model and grid".into()));
        }
        let useful = if opts.eliminate { useful_mask(tables, &delta) } else { vec![vec![true; ng]; horizon + 1] };

        let mut program = Program::new(Sense::Maximize);
        let mut x = vec![None; horizon * ng * na];
        let mut terminal = vec![None; ng];
        let (mut h1, mut h2, mut cost, mut exit) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in 0..horizon {
            for k in (0..ng).filter(|&k| useful[t][k]) {
                let g = &grid.points[k];
                for a in 0..na {
                    let v = program.add_nonneg(format!("x_{t}_{k}_{a}"));
                    x[(t * ng + k) * na + a] = Some(v);
                    let q: f64 = (0..n).map(|i| g[i] * model.qaly_coef(t, a, i)).sum();
                    let r: f64 = (0..n).map(|i| g[i] * model.risk_coef(t, a, i)).sum();
                    h1.push((v, q));
                    h2.push((v, r));
                    if model.cost(a) != 0.0 {
                        cost.push((v, model.cost(a)));
                    }
                    exit.push((v, t, tables.exit_mass(t, a, k)));
                }
            }
        }
        for k in (0..ng).filter(|&k| useful[horizon][k]) {
            let v = program.add_nonneg(format!("xT_{k}"));
            terminal[k] = Some(v);
            let g = &grid.points[k];
            h1.push((v, (0..n).map(|i| g[i] * model.terminal_value(i)).sum()));
        }

        // Balance rows: outflow at (t, k) equals inflow from t - 1 (or delta).
        let mut rows: Vec<Vec<Vec<(VarId, f64)>>> = vec![vec![Vec::new(); ng]; horizon + 1];
        for t in 0..horizon {
            for l in (0..ng).filter(|&l| useful[t][l]) {
                for a in 0..na {
                    let v = x[(t * ng + l) * na + a].expect("useful pair has variables");
                    for &(k, p) in tables.f_row(t, a, l) {
                        if p != 0.0 {
                            rows[t + 1][k as usize].push((v, -p));
                        }
                    }
                }
            }
        }
        let mut dvec = vec![0.0; ng];
        for &(k, w) in &delta {
            dvec[k as usize] = w;
        }
        for (t, rows_t) in rows.into_iter().enumerate() {
            for (k, mut terms) in rows_t.into_iter().enumerate() {
                if !useful[t][k] {
                    continue;
                }
                if t < horizon {
                    let own = (0..na).map(|a| (x[(t * ng + k) * na + a].unwrap(), 1.0));
                    terms.splice(0..0, own);
                } else {
                    terms.insert(0, (terminal[k].unwrap(), 1.0));
                }
                let rhs = if t == 0 { dvec[k] } else { 0.0 };
                program.add_constraint(format!("bal_{t}_{k}"), terms, Comparison::Eq, rhs);
            }
        }
        if let Some(c) = opts.budget {
            add_split_row(&mut program, horizon, "budget", &cost, Comparison::Le, c);
        }
        let mut op = Self {
            program,
            horizon,
            n_grid: ng,
            n_actions: na,
            x,
            terminal,
            nu: Vec::new(),
            h1,
            h2,
            cost,
            exit,
            delta,
            useful,
            budget: opts.budget,
            scale: model.scale(),
        };
        if opts.deterministic {
            op.add_deterministic_constraints();
        }
        Ok(op)
    }

    /// Binary `nu[t][k][a] >= x[t][k][a]` with one action per kept pair.
    pub fn add_deterministic_constraints(&mut self) {
        if !self.nu.is_empty() {
            return;
        }
        let (ng, na) = (self.n_grid, self.n_actions);
        self.nu = vec![None; self.horizon * ng * na];
        for t in 0..self.horizon {
            for k in (0..ng).filter(|&k| self.useful[t][k]) {
                let mut pick = Vec::with_capacity(na);
                for a in 0..na {
                    let idx = (t * ng + k) * na + a;
                    let nu = self.program.add_binary(format!("nu_{t}_{k}_{a}"));
                    self.nu[idx] = Some(nu);
                    let xv = self.x[idx].unwrap();
                    self.program.add_constraint(format!("link_{t}_{k}_{a}"), vec![(xv, 1.0), (nu, -1.0)], Comparison::Le, 0.0);
                    pick.push((nu, 1.0));
                }
                self.program.add_constraint(format!("one_{t}_{k}"), pick, Comparison::Eq, 1.0);
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !self.nu.is_empty()
    }

    pub fn x_var(&self, t: usize, k: usize, a: usize) -> Option<VarId> {
        self.x[(t * self.n_grid + k) * self.n_actions + a]
    }

    pub fn terminal_var(&self, k: usize) -> Option<VarId> {
        self.terminal[k]
    }

    /// Number of x variables (excluding indicators).
    pub fn n_occupancy_vars(&self) -> usize {
        self.x.iter().filter(|v| v.is_some()).count() + self.terminal.iter().filter(|v| v.is_some()).count()
    }

    /// Share of grid points kept at each epoch `0..=horizon`.
    pub fn useful_fraction(&self) -> Vec<f64> {
        self.useful.iter().map(|m| m.iter().filter(|&&u| u).count() as f64 / self.n_grid as f64).collect()
    }

    /// Total occupancy of each action over all epochs and grid points.
    pub fn action_occupancy(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        for (idx, v) in self.x.iter().enumerate() {
            if let Some(v) = v {
                out[idx % self.n_actions] += values[v.0].max(0.0);
            }
        }
        out
    }

    fn eval(terms: &[(VarId, f64)], values: &[f64]) -> f64 {
        terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    fn objective_terms(&self, objective: Objective) -> (Sense, Vec<(VarId, f64)>) {
        match objective {
            Objective::MaxQaly => (Sense::Maximize, self.h1.clone()),
            Objective::MinRisk => (Sense::Minimize, self.h2.clone()),
            Objective::Weighted { w1, w2 } => {
                let (a, b) = (w1 * self.scale[0], w2 * self.scale[1]);
                (Sense::Maximize, self.h1.iter().map(|&(v, c)| (v, a * c)).chain(self.h2.iter().map(|&(v, c)| (v, -b * c))).collect())
            }
        }
    }

    /// The program with `objective` and `bounds` applied.
    pub fn instantiate(&self, objective: Objective, bounds: &[Bound]) -> Program {
        let mut p = self.program.clone();
        let (sense, terms) = self.objective_terms(objective);
        p.set_objective(sense, &terms, 0.0);
        for (r, b) in bounds.iter().enumerate() {
            match *b {
                Bound::RiskAtMost(e) => add_split_row(&mut p, self.horizon, &format!("eps{r}"), &self.h2, Comparison::Le, e),
                Bound::QalyAtLeast(q) => add_split_row(&mut p, self.horizon, &format!("keep{r}"), &self.h1, Comparison::Ge, q),
            };
        }
        p
    }

    /// One cold solve of the instantiated program.
    pub fn solve(&self, objective: Objective, bounds: &[Bound], params: &SolverParams) -> Result<OccupancySolution> {
        let p = self.instantiate(objective, bounds);
        let rep = solve(&p, params)?;
        self.finish(rep, objective, bounds)
    }

    /// A warm-started solver for repeated solves with changing bounds.
    pub fn session(&self, params: &SolverParams) -> Result<OccupancySession<'_>> {
        let mut p = self.program.clone();
        let risk_row = add_split_row(&mut p, self.horizon, "eps", &self.h2, Comparison::Le, 0.0);
        let qaly_row = add_split_row(&mut p, self.horizon, "keep", &self.h1, Comparison::Ge, 0.0);
        let mut lp = Session::new(p, params)?;
        lp.set_rhs(risk_row, None)?;
        lp.set_rhs(qaly_row, None)?;
        Ok(OccupancySession { op: self, lp, risk_row, qaly_row })
    }

    fn finish(&self, rep: SolveReport, objective: Objective, bounds: &[Bound]) -> Result<OccupancySolution> {
        log::trace!("{objective:?} with {bounds:?}: {:?} in {:.3}s", rep.status, rep.wall_time.as_secs_f64());
        let values = match (rep.status, rep.values) {
            (SolveStatus::Optimal, Some(v)) => v,
            (status, _) => {
                return Err(CoreError::Solver { status, context: format!("occupancy program ({objective:?}, {bounds:?})") })
            }
        };
        let mut sol = self.solution_from(values);
        sol.objective = rep.objective.unwrap_or(f64::NAN);
        Ok(sol)
    }

    /// Objective values, diagnostics and policy for given variable values.
    pub fn solution_from(&self, values: Vec<f64>) -> OccupancySolution {
        let h1 = Self::eval(&self.h1, &values);
        let h2 = Self::eval(&self.h2, &values);
        let cost = Self::eval(&self.cost, &values);
        let policy = self.extract_policy(&values);
        OccupancySolution {
            h1,
            h2,
            cost,
            objective: f64::NAN,
            flow_residual: self.program.max_violation(&values),
            mass_residual: self.mass_residual(&values),
            deterministic: self.is_deterministic(),
            policy,
            values,
        }
    }

    /// Per epoch: remaining occupancy plus mass that has left equals 1.
    pub fn mass_residual(&self, values: &[f64]) -> f64 {
        let mut present = vec![0.0; self.horizon + 1];
        let mut left = vec![0.0; self.horizon + 1];
        for &(v, t, e) in &self.exit {
            present[t] += values[v.0];
            left[t + 1] += values[v.0] * e;
        }
        for v in self.terminal.iter().flatten() {
            present[self.horizon] += values[v.0];
        }
        let mut cum = 0.0;
        let mut worst: f64 = 0.0;
        for t in 0..=self.horizon {
            cum += left[t];
            worst = worst.max((present[t] + cum - 1.0).abs());
        }
        worst
    }

    pub fn extract_policy(&self, values: &[f64]) -> GridPolicy {
        let (ng, na) = (self.n_grid, self.n_actions);
        let mut entries = Vec::new();
        for t in 0..self.horizon {
            for k in (0..ng).filter(|&k| self.useful[t][k]) {
                let xs: Vec<f64> = (0..na).map(|a| values[self.x_var(t, k, a).unwrap().0].max(0.0)).collect();
                let s: f64 = xs.iter().sum();
                let unvisited = s <= 1e-12;
                let probs = if self.is_deterministic() {
                    let pick = (0..na)
                        .max_by(|&a, &b| {
                            let (va, vb) = (values[self.nu[(t * ng + k) * na + a].unwrap().0], values[self.nu[(t * ng + k) * na + b].unwrap().0]);
                            va.total_cmp(&vb).then(b.cmp(&a))
                        })
                        .unwrap();
                    one_hot(na, pick)
                } else if unvisited {
                    one_hot(na, WAIT)
                } else {
                    xs.iter().map(|x| x / s).collect()
                };
                entries.push(PolicyEntry { t, k, probs, unvisited });
            }
        }
        GridPolicy::new(self.horizon, ng, na, entries, Some(WAIT))
    }
}

fn one_hot(n: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupancySolution {
    /// Expected total QALYs.
    pub h1: f64,
    /// Lifetime probability of death by cancer.
    pub h2: f64,
    pub cost: f64,
    /// Solver objective (scaled for weighted solves).
    pub objective: f64,
    pub flow_residual: f64,
    pub mass_residual: f64,
    pub deterministic: bool,
    #[serde(skip)]
    pub policy: GridPolicy,
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Solver state kept between solves of one program: the risk cap and QALY
/// floor rows are always present and left free when unused.
pub struct OccupancySession<'a> {
    op: &'a OccupancyProgram,
    lp: Session,
    risk_row: ConstraintId,
    qaly_row: ConstraintId,
}

impl OccupancySession<'_> {
    pub fn program(&self) -> &OccupancyProgram {
        self.op
    }

    /// Like [`OccupancyProgram::solve`]; repeated bounds of one kind keep the tightest.
    pub fn solve(&mut self, objective: Objective, bounds: &[Bound]) -> Result<OccupancySolution> {
        let mut risk: Option<f64> = None;
        let mut qaly: Option<f64> = None;
        for b in bounds {
            match *b {
                Bound::RiskAtMost(e) => risk = Some(risk.map_or(e, |r| r.min(e))),
                Bound::QalyAtLeast(q) => qaly = Some(qaly.map_or(q, |r| r.max(q))),
            }
        }
        let (sense, terms) = self.op.objective_terms(objective);
        self.lp.set_objective(sense, &terms)?;
        self.lp.set_rhs(self.risk_row, risk)?;
        self.lp.set_rhs(self.qaly_row, qaly)?;
        let rep = self.lp.solve()?;
        self.op.finish(rep, objective, bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::{build_fixed, build_variable};
    use crate::model::BeliefState;
    use crate::projection::ProjectionStrategy;

    fn setup(spec: crate::ModelSpec, rho: u64) -> (Model, GridSet, ProjectionTables) {
        let m = Model::new(spec).unwrap();
        let g = build_fixed(rho, m.n_states()).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        (m, g, t)
    }

    #[test]
    fn grid_start_gives_unit_delta() {
        let (m, g, t) = setup(fixtures::random_tiny(1, 2, 2), 2);
        let op = OccupancyProgram::build(&m, &g, &t, &g.points[2], ProgramOptions::for_model(&m)).unwrap();
        assert_eq!(op.delta, vec![(2, 1.0)]);
        assert_eq!(op.useful[0].iter().filter(|&&u| u).count(), 1);
    }

    #[test]
    fn row_and_column_counts_without_elimination() {
        let mut spec = fixtures::random_tiny(2, 2, 2);
        spec.budget = Some(50.0);
        let (m, g, t) = setup(spec, 2);
        let opts = ProgramOptions { budget: m.budget(), eliminate: false, deterministic: false };
        let op = OccupancyProgram::build(&m, &g, &t, &[0.9, 0.05, 0.05], opts).unwrap();
        let k = g.len();
        // Balance rows for the initial, interior and terminal epochs, plus the
        // budget as two per-epoch sums and their total.
        assert_eq!(op.program.num_constraints(), k + k + k + 3);
        assert_eq!(op.program.num_vars(), 2 * k * 2 + k + 2);
        let mut none = opts;
        none.budget = None;
        let op = OccupancyProgram::build(&m, &g, &t, &[0.9, 0.05, 0.05], none).unwrap();
        assert_eq!(op.program.num_constraints(), 3 * k);
    }

    #[test]
    fn one_epoch_wait_only_value() {
        // One epoch, start in the healthy vertex, only the wait action pays.
        let p = vec![vec![0.95, 0.03, 0.0, 0.02], vec![0.0, 0.9, 0.06, 0.04]];
        let mut spec = fixtures::stationary(1, vec![p.clone(), p], vec![0.1, 0.9], vec![0.9, 0.9]);
        spec.terminal = vec![3.0, 1.0];
        spec.costs = vec![0.0, 10.0];
        spec.budget = Some(0.0);
        let (m, g, t) = setup(spec, 2);
        let op = OccupancyProgram::build(&m, &g, &t, &[1.0, 0.0], ProgramOptions::for_model(&m)).unwrap();
        let sol = op.solve(Objective::MaxQaly, &[], &SolverParams::default()).unwrap();
        let expect = (1.0 - 0.5 * 0.02) + 0.95 * 3.0 + 0.03 * 1.0;
        assert!((sol.h1 - expect).abs() < 1e-9, "{} vs {expect}", sol.h1);
        assert!(sol.cost.abs() < 1e-12);
    }

    #[test]
    fn salvage_vanishes_without_sensitivity() {
        let p = vec![vec![0.9, 0.1, 0.0, 0.0], vec![0.0, 0.9, 0.1, 0.0]];
        let mut spec = fixtures::stationary(2, vec![p.clone(), p], vec![0.0, 0.0], vec![0.9, 0.9]);
        spec.salvage = vec![vec![0.0, 50.0]; 2];
        let (m, g, t) = setup(spec, 2);
        for i in 0..2 {
            for a in 0..2 {
                assert_eq!(m.diag_mass(0, a, i), 0.0);
            }
        }
        let op = OccupancyProgram::build(&m, &g, &t, &[0.5, 0.5], ProgramOptions::for_model(&m)).unwrap();
        let sol = op.solve(Objective::MaxQaly, &[], &SolverParams::default()).unwrap();
        assert!(sol.h1 < 4.0);
    }

    #[test]
    fn wait_only_risk_is_the_undetected_death_term() {
        let (m, g, t) = setup(fixtures::random_tiny(5, 3, 2), 3);
        let mut opts = ProgramOptions::for_model(&m);
        opts.budget = Some(0.0);
        let op = OccupancyProgram::build(&m, &g, &t, &[0.8, 0.1, 0.1], opts).unwrap();
        let sol = op.solve(Objective::MinRisk, &[], &SolverParams::default()).unwrap();
        // Recompute h2 from the wait-action cancer-death column alone.
        let mut h2 = 0.0;
        for tt in 0..3 {
            for k in 0..g.len() {
                if let Some(v) = op.x_var(tt, k, WAIT) {
                    h2 += sol.values[v.0] * (0..3).map(|i| g.points[k][i] * m.cancer_death_prob(tt, WAIT, i)).sum::<f64>();
                }
            }
        }
        assert!((sol.h2 - h2).abs() < 1e-9);
        assert!(sol.policy.entries.iter().all(|e| e.probs[WAIT] == 1.0));
    }

    #[test]
    fn elimination_preserves_optimum_on_default_fixture() {
        let m = fixtures::default_model();
        let g = build_variable(&[100, 25, 5], &[0.96, 0.8, 0.0], 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        let pi0 = BeliefState::vertex(3, 0);
        let mut opts = ProgramOptions::for_model(&m);
        let with = OccupancyProgram::build(&m, &g, &t, &pi0, opts).unwrap();
        opts.eliminate = false;
        let without = OccupancyProgram::build(&m, &g, &t, &pi0, opts).unwrap();
        assert!(with.n_occupancy_vars() < without.n_occupancy_vars());
        let params = SolverParams::default();
        let a = with.solve(Objective::MaxQaly, &[], &params).unwrap();
        let b = without.solve(Objective::MaxQaly, &[], &params).unwrap();
        assert!((a.h1 - b.h1).abs() < 1e-6);
        assert!(a.cost <= m.budget().unwrap() + 1e-6);
        assert!(a.flow_residual < 1e-6 && a.mass_residual < 1e-6, "{} {}", a.flow_residual, a.mass_residual);
    }

    #[test]
    fn deterministic_never_beats_randomized() {
        let mut spec = fixtures::random_tiny(8, 3, 3);
        spec.budget = Some(40.0);
        let (m, g, t) = setup(spec, 3);
        let opts = ProgramOptions::for_model(&m);
        let lp = OccupancyProgram::build(&m, &g, &t, &[0.7, 0.2, 0.1], opts).unwrap();
        let mut milp = lp.clone();
        milp.add_deterministic_constraints();
        let params = SolverParams::default();
        let r = lp.solve(Objective::MaxQaly, &[], &params).unwrap();
        let d = milp.solve(Objective::MaxQaly, &[], &params).unwrap();
        assert!(d.h1 <= r.h1 + 1e-6);
        assert!(d.policy.is_deterministic());
        let useful: usize = (0..3).map(|tt| lp.useful[tt].iter().filter(|&&u| u).count()).sum();
        assert_eq!(d.policy.entries.len(), useful);
    }

    #[test]
    fn integral_optimum_matches_milp() {
        // No budget: the unconstrained optimum is attained by a deterministic policy.
        let mut spec = fixtures::random_tiny(9, 3, 3);
        spec.budget = None;
        let (m, g, t) = setup(spec, 3);
        let lp = OccupancyProgram::build(&m, &g, &t, &[0.7, 0.2, 0.1], ProgramOptions::for_model(&m)).unwrap();
        let mut milp = lp.clone();
        milp.add_deterministic_constraints();
        let params = SolverParams::default();
        let r = lp.solve(Objective::MaxQaly, &[], &params).unwrap();
        let d = milp.solve(Objective::MaxQaly, &[], &params).unwrap();
        assert!((d.h1 - r.h1).abs() < 1e-6);
    }

    #[test]
    fn zero_budget_means_wait_only() {
        let m = fixtures::default_model();
        let g = build_variable(&[100, 25, 5], &[0.96, 0.8, 0.0], 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        let mut opts = ProgramOptions::for_model(&m);
        opts.budget = Some(0.0);
        let op = OccupancyProgram::build(&m, &g, &t, &fixtures::AVERAGE_RISK_BELIEF, opts).unwrap();
        let sol = op.solve(Objective::MaxQaly, &[], &SolverParams::default()).unwrap();
        for e in &sol.policy.entries {
            assert!(e.probs[WAIT] > 1.0 - 1e-9, "{e:?}");
        }
    }

    #[test]
    fn split_occupancy_gives_split_distribution() {
        let (m, g, t) = setup(fixtures::random_tiny(3, 1, 2), 1);
        let op = OccupancyProgram::build(&m, &g, &t, &g.points[0], ProgramOptions { budget: None, eliminate: true, deterministic: false }).unwrap();
        let mut values = vec![0.0; op.program.num_vars()];
        values[op.x_var(0, 0, 0).unwrap().0] = 0.6;
        values[op.x_var(0, 0, 1).unwrap().0] = 0.4;
        let pol = op.extract_policy(&values);
        assert_eq!(pol.entry(0, 0).unwrap().probs, vec![0.6, 0.4]);
        let zero = op.extract_policy(&vec![0.0; op.program.num_vars()]);
        let e = zero.entry(0, 0).unwrap();
        assert!(e.unvisited && e.probs == vec![1.0, 0.0]);
    }
}
