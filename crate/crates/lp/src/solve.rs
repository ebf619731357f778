use std::time::{Duration, Instant};

use highs::{Col, HighsModelStatus, HighsSolutionStatus, RowProblem, SolvedModel};

use crate::program::{Comparison, ConstraintId, Program, Sense, VarId, VarKind};
use crate::LpError;

/// Tolerances and limits passed to the backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Primal/dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relative MIP gap at which branch and bound stops.
    pub mip_gap: f64,
    pub time_limit_s: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { feas_tol: 1e-9, mip_gap: 1e-6, time_limit_s: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// A time/iteration limit was hit; values are present only with an incumbent.
    Limit,
    Error,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    /// Present iff status is `Optimal`, or `Limit` with a feasible incumbent.
    pub values: Option<Vec<f64>>,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub trait Backend {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &Program, params: &SolverParams) -> Result<SolveReport, LpError>;
}

/// Reference backend: HiGHS (dual simplex for LPs, branch and cut for MILPs).
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

/// Solves `program` with the reference backend.
pub fn solve(program: &Program, params: &SolverParams) -> Result<SolveReport, LpError> {
    HighsBackend.solve(program, params)
}

/// Builds the HiGHS model for `program` with the solver options applied.
fn load(program: &Program, params: &SolverParams, presolve: bool) -> Result<(highs::Model, Vec<Col>), LpError> {
    let mut pb = RowProblem::default();
    let cols: Vec<_> = program
        .variables
        .iter()
        .zip(&program.objective)
        .map(|(v, &c)| match v.kind {
            VarKind::Continuous => pb.add_column(c, v.lower..=v.upper),
            VarKind::Binary => pb.add_integer_column(c, v.lower.max(0.0)..=v.upper.min(1.0)),
        })
        .collect();
    for c in &program.constraints {
        let terms: Vec<_> = c.terms.iter().map(|&(v, a)| (cols[v.0], a)).collect();
        match c.cmp {
            Comparison::Le => pb.add_row(..=c.rhs, terms),
            Comparison::Ge => pb.add_row(c.rhs.., terms),
            Comparison::Eq => pb.add_row(c.rhs..=c.rhs, terms),
        }
    }
    let mut model = pb
        .try_optimise(highs_sense(program.sense))
        .map_err(|s| LpError::BackendUnavailable(format!("HiGHS rejected the model: {s:?}")))?;
    model.make_quiet();
    model.set_option("primal_feasibility_tolerance", params.feas_tol);
    model.set_option("dual_feasibility_tolerance", params.feas_tol);
    model.set_option("mip_rel_gap", params.mip_gap);
    model.set_option("mip_feasibility_tolerance", params.feas_tol.max(1e-9));
    model.set_option("random_seed", 0i32);
    if !presolve {
        model.set_option("presolve", "off");
    }
    if let Some(limit) = params.time_limit_s {
        model.set_option("time_limit", limit);
    }
    Ok((model, cols))
}

fn highs_sense(sense: Sense) -> highs::Sense {
    match sense {
        Sense::Maximize => highs::Sense::Maximise,
        Sense::Minimize => highs::Sense::Minimise,
    }
}

/// `None` when HiGHS could not tell infeasible from unbounded.
fn status_of(solved: &SolvedModel) -> Option<SolveStatus> {
    Some(match solved.status() {
        HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
        HighsModelStatus::Infeasible => SolveStatus::Infeasible,
        HighsModelStatus::Unbounded => SolveStatus::Unbounded,
        HighsModelStatus::UnboundedOrInfeasible => return None,
        HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit
        | HighsModelStatus::ReachedInterrupt
        | HighsModelStatus::ReachedMemoryLimit => SolveStatus::Limit,
        _ => SolveStatus::Error,
    })
}

fn report(solved: &SolvedModel, status: SolveStatus, program: &Program, start: Instant) -> Result<SolveReport, LpError> {
    let has_incumbent = match status {
        SolveStatus::Optimal => true,
        SolveStatus::Limit => solved.primal_solution_status() == HighsSolutionStatus::Feasible,
        _ => false,
    };
    let values = if has_incumbent {
        let mut v = solved.get_solution().columns().to_vec();
        v.resize(program.num_vars(), 0.0);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LpError::NumericalFailure("non-finite value in solution".into()));
        }
        Some(v)
    } else {
        None
    };
    let objective = values.as_ref().map(|v| program.objective_value(v));
    Ok(SolveReport { status, objective, values, wall_time: start.elapsed() })
}

impl HighsBackend {
    fn run(&self, program: &Program, params: &SolverParams, presolve: bool) -> Result<SolveReport, LpError> {
        let start = Instant::now();
        let (model, _) = load(program, params, presolve)?;
        let solved = model.try_solve().map_err(|s| LpError::NumericalFailure(format!("HiGHS run failed: {s:?}")))?;
        match status_of(&solved) {
            Some(status) => report(&solved, status, program, start),
            // Presolve could not tell which; a plain simplex run can.
            None if presolve => self.run(program, params, false),
            None => report(&solved, SolveStatus::Infeasible, program, start),
        }
    }
}

/// A program kept loaded in HiGHS so that objective and right-hand-side
/// changes re-solve from the previous basis.
pub struct Session {
    program: Program,
    params: SolverParams,
    model: Option<highs::Model>,
    cols: Vec<Col>,
    cost_changed: bool,
    rows_changed: bool,
    /// Duration of the latest solve from scratch.
    cold_time: Option<Duration>,
}

impl Session {
    pub fn new(program: Program, params: &SolverParams) -> Result<Self, LpError> {
        program.check()?;
        let (model, cols) = load(&program, params, true)?;
        Ok(Self { program, params: *params, model: Some(model), cols, cost_changed: false, rows_changed: false, cold_time: None })
    }

    /// The program as currently modified; relaxed rows carry `f64::MAX` bounds.
    pub fn program(&self) -> &Program {
        &self.program
    }

    fn model(&mut self) -> Result<&mut highs::Model, LpError> {
        if self.model.is_none() {
            let mut p = self.program.clone();
            for c in &mut p.constraints {
                c.rhs = c.rhs.clamp(-1e30, 1e30);
            }
            self.model = Some(load(&p, &self.params, true)?.0);
        }
        Ok(self.model.as_mut().expect("model loaded above"))
    }

    pub fn set_objective(&mut self, sense: Sense, terms: &[(VarId, f64)]) -> Result<(), LpError> {
        let (old, old_sense) = (self.program.objective.clone(), self.program.sense);
        self.program.set_objective(sense, terms, 0.0);
        let new = self.program.objective.clone();
        if old == new && old_sense == sense {
            return Ok(());
        }
        let cols = self.cols.clone();
        let model = self.model()?;
        for ((&o, &n), &c) in old.iter().zip(&new).zip(&cols) {
            if o != n {
                model.change_column_cost(c, n);
            }
        }
        model.set_sense(highs_sense(sense));
        self.cost_changed = true;
        Ok(())
    }

    /// Moves the row's bound; `None` makes the row free.
    pub fn set_rhs(&mut self, row: ConstraintId, rhs: Option<f64>) -> Result<(), LpError> {
        let c = self.program.constraints.get_mut(row.0).ok_or_else(|| LpError::Malformed(format!("no row {}", row.0)))?;
        let (lo, hi) = match (c.cmp, rhs) {
            (_, Some(r)) if !r.is_finite() => return Err(LpError::Malformed(format!("row {} rhs {r}", row.0))),
            (Comparison::Le, Some(r)) => (f64::NEG_INFINITY, r),
            (Comparison::Ge, Some(r)) => (r, f64::INFINITY),
            (Comparison::Eq, Some(r)) => (r, r),
            (_, None) => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let stored = rhs.unwrap_or(match c.cmp {
            Comparison::Ge => -f64::MAX,
            _ => f64::MAX,
        });
        if stored == c.rhs {
            return Ok(());
        }
        c.rhs = stored;
        let model = self.model()?;
        // SAFETY: the pointer comes from a live model and the row index is in range.
        let status = unsafe { highs_sys::Highs_changeRowBounds(model.as_mut_ptr(), row.0 as highs_sys::HighsInt, lo, hi) };
        if status == highs_sys::STATUS_ERROR {
            return Err(LpError::NumericalFailure(format!("HiGHS refused new bounds for row {}", row.0)));
        }
        self.rows_changed = true;
        Ok(())
    }

    pub fn solve(&mut self) -> Result<SolveReport, LpError> {
        let start = Instant::now();
        // The old basis stays primal feasible after cost changes and dual
        // feasible after bound changes; after both it is usually a poor start.
        let strategy = match (self.cost_changed, self.rows_changed) {
            (true, false) => Some(4),
            (false, _) => Some(1),
            (true, true) => None,
        };
        (self.cost_changed, self.rows_changed) = (false, false);
        let warm = match (strategy, self.cold_time) {
            (Some(strategy), Some(cold)) => self.model.take().map(|m| (strategy, cold, m)),
            _ => None,
        };
        if let Some((strategy, cold, mut model)) = warm {
            // Warm starts are usually far faster but occasionally much
            // slower; give up on them after a multiple of a cold solve.
            let mut allowance = (1.5 * cold.as_secs_f64()).max(1.0);
            if let Some(limit) = self.params.time_limit_s {
                allowance = allowance.min(limit);
            }
            // SAFETY: the pointer comes from a live model.
            unsafe { highs_sys::Highs_zeroAllClocks(model.as_ptr()) };
            model.set_option("time_limit", allowance);
            model.set_option("simplex_strategy", strategy);
            match model.try_solve() {
                Ok(solved) => match status_of(&solved) {
                    Some(SolveStatus::Limit) if self.params.time_limit_s.is_none_or(|l| allowance < l) => {
                        log::debug!("warm start abandoned after {allowance:.2}s");
                    }
                    Some(SolveStatus::Error) | None => log::debug!("warm start inconclusive ({:?})", solved.status()),
                    Some(status) => {
                        let rep = report(&solved, status, &self.program, start);
                        self.model = Some(solved.into());
                        return rep;
                    }
                },
                Err(e) => log::debug!("warm start failed ({e:?})"),
            }
        }
        let mut p = self.program.clone();
        for c in &mut p.constraints {
            c.rhs = c.rhs.clamp(-1e30, 1e30);
        }
        let model = match self.model.take() {
            Some(m) if self.cold_time.is_none() => m,
            _ => load(&p, &self.params, true)?.0,
        };
        let cold_start = Instant::now();
        let solved = model.try_solve().map_err(|s| LpError::NumericalFailure(format!("HiGHS run failed: {s:?}")))?;
        self.cold_time = Some(cold_start.elapsed());
        let rep = match status_of(&solved) {
            Some(status) => report(&solved, status, &self.program, start),
            // Settle the ambiguous status without presolve.
            None => HighsBackend.run(&p, &self.params, false),
        };
        self.model = Some(solved.into());
        rep
    }
}

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(&self, program: &Program, params: &SolverParams) -> Result<SolveReport, LpError> {
        program.check()?;
        if program.num_vars() == 0 {
            let feasible = program.constraints.iter().all(|c| match c.cmp {
                Comparison::Le => 0.0 <= c.rhs + params.feas_tol,
                Comparison::Ge => 0.0 >= c.rhs - params.feas_tol,
                Comparison::Eq => c.rhs.abs() <= params.feas_tol,
            });
            return Ok(SolveReport {
                status: if feasible { SolveStatus::Optimal } else { SolveStatus::Infeasible },
                objective: feasible.then_some(program.objective_offset),
                values: feasible.then(Vec::new),
                wall_time: Duration::ZERO,
            });
        }
        self.run(program, params, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_maximum() {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_nonneg("x");
        p.set_objective_coef(x, 1.0);
        p.add_constraint("cap", vec![(x, 1.0)], Comparison::Le, 3.0);
        let r = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_pair() {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective_coef(x, 1.0);
        p.add_constraint("lo", vec![(x, 1.0)], Comparison::Le, 0.0);
        p.add_constraint("hi", vec![(x, 1.0)], Comparison::Ge, 1.0);
        let r = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.values.is_none());
    }

    #[test]
    fn unbounded_ray() {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_nonneg("x");
        p.set_objective_coef(x, 1.0);
        let r = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn small_binary_program_matches_enumeration() {
        let mut p = Program::new(Sense::Maximize);
        let a = p.add_binary("x1");
        let b = p.add_binary("x2");
        p.set_objective(Sense::Maximize, &[(a, 1.0), (b, 1.0)], 0.0);
        p.add_constraint("cap", vec![(a, 1.0), (b, 1.0)], Comparison::Le, 1.5);
        // enumerate {0,1}^2
        let best = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
            .iter()
            .filter(|(x, y)| x + y <= 1.5)
            .map(|(x, y)| x + y)
            .fold(f64::NEG_INFINITY, f64::max);
        let r = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - best).abs() < 1e-9);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn empty_program_is_trivially_optimal() {
        let mut p = Program::new(Sense::Minimize);
        p.objective_offset = 2.5;
        let r = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.objective, Some(2.5));
    }

    #[test]
    fn repeated_solves_are_identical() {
        let mut p = Program::new(Sense::Minimize);
        let vars: Vec<_> = (0..6).map(|i| p.add_nonneg(format!("v{i}"))).collect();
        for (i, &v) in vars.iter().enumerate() {
            p.set_objective_coef(v, 1.0 + (i % 3) as f64);
        }
        p.add_constraint("sum", vars.iter().map(|&v| (v, 1.0)).collect(), Comparison::Ge, 4.0);
        p.add_constraint("pair", vec![(vars[0], 1.0), (vars[3], 1.0)], Comparison::Le, 1.0);
        let a = solve(&p, &SolverParams::default()).unwrap();
        let b = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(a.values, b.values);
    }

    /// max x + 2y  s.t.  x + y <= 4, y <= cap (relaxable), x, y >= 0.
    fn capped() -> (Program, VarId, VarId, ConstraintId) {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_nonneg("x");
        let y = p.add_nonneg("y");
        p.set_objective(Sense::Maximize, &[(x, 1.0), (y, 2.0)], 0.0);
        p.add_constraint("total", vec![(x, 1.0), (y, 1.0)], Comparison::Le, 4.0);
        let cap = p.add_constraint("cap", vec![(y, 1.0)], Comparison::Le, 1.0);
        (p, x, y, cap)
    }

    #[test]
    fn session_resolves_after_changes() {
        let (p, x, y, cap) = capped();
        let mut s = Session::new(p, &SolverParams::default()).unwrap();
        assert!((s.solve().unwrap().objective.unwrap() - 5.0).abs() < 1e-9);
        s.set_rhs(cap, Some(3.0)).unwrap();
        assert!((s.solve().unwrap().objective.unwrap() - 7.0).abs() < 1e-9);
        s.set_rhs(cap, None).unwrap();
        assert!((s.solve().unwrap().objective.unwrap() - 8.0).abs() < 1e-9);
        s.set_objective(Sense::Minimize, &[(x, -1.0), (y, 1.0)]).unwrap();
        let r = s.solve().unwrap();
        assert!((r.objective.unwrap() + 4.0).abs() < 1e-9, "{r:?}");
        // Both kinds of change at once.
        s.set_objective(Sense::Maximize, &[(y, 1.0)]).unwrap();
        s.set_rhs(cap, Some(2.5)).unwrap();
        assert!((s.solve().unwrap().objective.unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn session_matches_cold_solves() {
        let (mut p, _, _, cap) = capped();
        let mut s = Session::new(p.clone(), &SolverParams::default()).unwrap();
        for rhs in [0.0, 0.5, 2.0, 4.0, 1.5] {
            s.set_rhs(cap, Some(rhs)).unwrap();
            p.constraints[cap.0].rhs = rhs;
            let warm = s.solve().unwrap().objective.unwrap();
            let cold = solve(&p, &SolverParams::default()).unwrap().objective.unwrap();
            assert!((warm - cold).abs() < 1e-9);
        }
        s.set_rhs(cap, Some(-1.0)).unwrap();
        assert_eq!(s.solve().unwrap().status, SolveStatus::Infeasible);
        assert!(s.set_rhs(cap, Some(f64::NAN)).is_err());
        assert!(s.set_rhs(ConstraintId(9), Some(1.0)).is_err());
    }
}
