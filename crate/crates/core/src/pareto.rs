//! Two-objective drivers over an [`OccupancyProgram`]: weighted sums and
//! epsilon constraints on the risk objective.

use std::fmt::Write as _;

use serde::Serialize;

use cpomdp_lp::SolverParams;

use crate::error::{CoreError, Result};
use crate::occupancy::{Bound, Objective, OccupancyProgram, OccupancySession, OccupancySolution};
use crate::policy::GridPolicy;

/// Points closer than this in (h1, h2) are treated as one.
pub const DEDUP_TOL: (f64, f64) = (1e-6, 1e-8);
const EPS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Weighted,
    Epsilon,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Weighted => "weighted",
            Method::Epsilon => "epsilon",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParetoPoint {
    pub h1: f64,
    pub h2: f64,
    pub cost: f64,
    pub method: Method,
    /// `w1` for weighted points, `epsilon` for constrained ones.
    pub param: f64,
    #[serde(skip)]
    pub policy: GridPolicy,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepFailure {
    pub step: usize,
    pub param: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ParetoFront {
    /// Non-dominated, ascending in h2.
    pub points: Vec<ParetoPoint>,
    pub failures: Vec<StepFailure>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `h1,h2,cost,method,param,policy`; `policy_ref(i)` names point i's policy file.
    pub fn to_csv(&self, policy_ref: impl Fn(usize) -> String) -> String {
        let mut out = String::from("h1,h2,cost,method,param,policy\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", p.h1, p.h2, p.cost, p.method.as_str(), p.param, policy_ref(i));
        }
        out
    }
}

fn refine_tol(v: f64) -> f64 {
    1e-8 * v.abs().max(1.0)
}

fn check_weights(w1: f64, w2: f64) -> Result<()> {
    if !(w1 >= 0.0 && w2 >= 0.0) || w1 + w2 == 0.0 || !w1.is_finite() || !w2.is_finite() {
        return Err(CoreError::InvalidArgument(format!("weights must be non-negative and not both zero, got [{w1}, {w2}]")));
    }
    Ok(())
}

/// Maximizes `w1 s1 h1 - w2 s2 h2`. A zero weight makes the solve
/// lexicographic so the ignored objective is still as good as possible.
pub fn solve_weighted(op: &OccupancyProgram, w1: f64, w2: f64, params: &SolverParams) -> Result<OccupancySolution> {
    check_weights(w1, w2)?;
    weighted_in(&mut op.session(params)?, op.scale, w1, w2)
}

fn weighted_in(s: &mut OccupancySession<'_>, scale: [f64; 2], w1: f64, w2: f64) -> Result<OccupancySolution> {
    let mut sol = if w2 == 0.0 {
        let first = s.solve(Objective::MaxQaly, &[])?;
        let keep = Bound::QalyAtLeast(first.h1 - refine_tol(first.h1));
        s.solve(Objective::MinRisk, &[keep]).unwrap_or(first)
    } else if w1 == 0.0 {
        let first = s.solve(Objective::MinRisk, &[])?;
        let keep = Bound::RiskAtMost(first.h2 + refine_tol(first.h2) * 1e-2);
        s.solve(Objective::MaxQaly, &[keep]).unwrap_or(first)
    } else {
        s.solve(Objective::Weighted { w1, w2 }, &[])?
    };
    sol.objective = w1 * scale[0] * sol.h1 - w2 * scale[1] * sol.h2;
    Ok(sol)
}

/// Runs jobs `0..n` on up to `threads` workers, each with its own state from
/// `init`, keeping job order in the result. Workers take contiguous chunks.
fn run_parallel<S, T: Send>(n: usize, threads: usize, init: impl Fn() -> S + Sync, job: impl Fn(&mut S, usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        let mut state = init();
        return (0..n).map(|i| job(&mut state, i)).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk_len = n.div_ceil(threads);
    std::thread::scope(|sc| {
        for (w, chunk) in out.chunks_mut(chunk_len).enumerate() {
            let (init, job) = (&init, &job);
            sc.spawn(move || {
                let mut state = init();
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(job(&mut state, w * chunk_len + j));
                }
            });
        }
    });
    out.into_iter().map(|x| x.expect("every job ran")).collect()
}

fn with_session<T>(
    s: &mut Result<OccupancySession<'_>>,
    f: impl FnOnce(&mut OccupancySession<'_>) -> Result<T>,
) -> Result<T> {
    match s {
        Ok(s) => f(s),
        Err(e) => Err(CoreError::Lp(cpomdp_lp::LpError::BackendUnavailable(format!("solver session unavailable: {e}")))),
    }
}

/// `n` weight pairs `(i/(n-1), 1 - i/(n-1))`, filtered to the non-dominated set.
///
/// The objective is linear in the weight, so a solution optimal at two
/// weights is optimal at every weight between them: a range whose ends return
/// the same point is filled without further solves, otherwise it is bisected.
pub fn weighted_sweep(op: &OccupancyProgram, n: usize, params: &SolverParams, threads: usize) -> Result<ParetoFront> {
    if n < 2 {
        return Err(CoreError::InvalidArgument(format!("weighted sweep needs at least 2 weights, got {n}")));
    }
    let w = |i: usize| i as f64 / (n - 1) as f64;
    let segments = threads.clamp(1, n - 1);
    let cuts: Vec<usize> = (0..=segments).map(|j| j * (n - 1) / segments).collect();
    let parts = run_parallel(segments, threads, || op.session(params), |s, j| {
        let (a, b) = (cuts[j], cuts[j + 1]);
        let mut slots: Vec<Option<Result<OccupancySolution>>> = (a..=b).map(|_| None).collect();
        let solve_at = |s: &mut Result<OccupancySession<'_>>, i: usize| with_session(s, |s| weighted_in(s, op.scale, w(i), 1.0 - w(i)));
        slots[0] = Some(solve_at(s, a));
        slots[b - a] = Some(solve_at(s, b));
        let mut stack = vec![(a, b)];
        while let Some((lo, hi)) = stack.pop() {
            if hi - lo < 2 {
                continue;
            }
            let same = match (&slots[lo - a], &slots[hi - a]) {
                (Some(Ok(x)), Some(Ok(y))) => same_point(x, y),
                _ => false,
            };
            if same {
                for i in lo + 1..hi {
                    slots[i - a] = match &slots[lo - a] {
                        Some(Ok(x)) => Some(Ok(x.clone())),
                        _ => unreachable!("checked above"),
                    };
                }
                continue;
            }
            let mid = (lo + hi) / 2;
            slots[mid - a] = Some(solve_at(s, mid));
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
        slots
    });
    let mut results = Vec::with_capacity(n);
    for (j, part) in parts.into_iter().enumerate() {
        let skip = usize::from(j > 0);
        for (off, r) in part.into_iter().enumerate().skip(skip) {
            results.push((w(cuts[j] + off), r.expect("every weight is filled")));
        }
    }
    Ok(collect(results, Method::Weighted))
}

fn same_point(x: &OccupancySolution, y: &OccupancySolution) -> bool {
    (x.h1 - y.h1).abs() <= DEDUP_TOL.0 && (x.h2 - y.h2).abs() <= DEDUP_TOL.1
}

fn collect(results: Vec<(f64, Result<OccupancySolution>)>, method: Method) -> ParetoFront {
    let mut front = ParetoFront::default();
    let mut raw = Vec::new();
    for (i, (param, r)) in results.into_iter().enumerate() {
        match r {
            Ok(s) => raw.push(point(s, method, param)),
            Err(e) => front.failures.push(StepFailure { step: i, param, message: e.to_string() }),
        }
    }
    front.points = assemble(raw);
    front
}

fn point(s: OccupancySolution, method: Method, param: f64) -> ParetoPoint {
    ParetoPoint { h1: s.h1, h2: s.h2, cost: s.cost, method, param, policy: s.policy }
}

/// Best QALYs with risk at most `eps`, then least risk keeping those QALYs.
pub fn solve_epsilon(op: &OccupancyProgram, eps: f64, params: &SolverParams) -> Result<OccupancySolution> {
    epsilon_in(&mut op.session(params)?, eps)
}

fn epsilon_in(s: &mut OccupancySession<'_>, eps: f64) -> Result<OccupancySolution> {
    let cap = Bound::RiskAtMost(eps + EPS_SLACK);
    let first = s.solve(Objective::MaxQaly, &[cap])?;
    // Without indicators the frontier is concave and increasing up to the
    // max-QALY anchor, so a binding cap already gives the least risk.
    if !s.program().is_deterministic() && first.h2 >= eps - EPS_SLACK {
        return Ok(first);
    }
    let keep = Bound::QalyAtLeast(first.h1 - refine_tol(first.h1));
    Ok(s.solve(Objective::MinRisk, &[cap, keep]).unwrap_or(first))
}

/// The two lexicographic anchors: (max QALYs, min risk).
pub fn anchors(op: &OccupancyProgram, params: &SolverParams) -> Result<(OccupancySolution, OccupancySolution)> {
    let mut s = op.session(params)?;
    Ok((weighted_in(&mut s, op.scale, 1.0, 0.0)?, weighted_in(&mut s, op.scale, 0.0, 1.0)?))
}

/// `steps` risk caps spaced linearly between the anchors' risks.
pub fn epsilon_sweep(op: &OccupancyProgram, steps: usize, params: &SolverParams, threads: usize) -> Result<ParetoFront> {
    if steps < 2 {
        return Err(CoreError::InvalidArgument(format!("epsilon sweep needs at least 2 steps, got {steps}")));
    }
    let (hi, lo) = anchors(op, params)?;
    let (e0, e1) = (lo.h2, hi.h2.max(lo.h2));
    let results = run_parallel(steps, threads, || op.session(params), |s, i| {
        let eps = e0 + (e1 - e0) * i as f64 / (steps - 1) as f64;
        (eps, with_session(s, |s| epsilon_in(s, eps)))
    });
    Ok(collect(results, Method::Epsilon))
}

/// Walks down from the max-QALY anchor, each time capping risk just below
/// the last point found. On a finite policy set (deterministic mode) this
/// visits every non-dominated value.
pub fn epsilon_exhaustive(op: &OccupancyProgram, params: &SolverParams, step: f64, max_points: usize) -> Result<ParetoFront> {
    if !(step > 0.0) {
        return Err(CoreError::InvalidArgument("epsilon decrement must be positive".into()));
    }
    let mut s = op.session(params)?;
    let hi = weighted_in(&mut s, op.scale, 1.0, 0.0)?;
    let lo = weighted_in(&mut s, op.scale, 0.0, 1.0)?;
    let mut raw = vec![point(hi.clone(), Method::Epsilon, hi.h2)];
    let mut eps = hi.h2 - step;
    let mut front = ParetoFront::default();
    while eps >= lo.h2 - EPS_SLACK && raw.len() < max_points {
        match epsilon_in(&mut s, eps) {
            Ok(sol) => {
                eps = sol.h2 - step;
                raw.push(point(sol, Method::Epsilon, eps + step));
            }
            Err(CoreError::Solver { status, .. }) if status == cpomdp_lp::SolveStatus::Infeasible => break,
            Err(e) => {
                front.failures.push(StepFailure { step: raw.len(), param: eps, message: e.to_string() });
                break;
            }
        }
    }
    if raw.len() >= max_points {
        return Err(CoreError::ResourceBound(format!("exhaustive epsilon walk exceeded {max_points} points")));
    }
    front.points = assemble(raw);
    Ok(front)
}

/// Deduplicates (keeping the lower parameter), drops dominated points and
/// sorts by ascending h2.
pub fn assemble(mut raw: Vec<ParetoPoint>) -> Vec<ParetoPoint> {
    raw.sort_by(|a, b| a.param.total_cmp(&b.param));
    let mut uniq: Vec<ParetoPoint> = Vec::new();
    for p in raw {
        if !uniq.iter().any(|q| (q.h1 - p.h1).abs() <= DEDUP_TOL.0 && (q.h2 - p.h2).abs() <= DEDUP_TOL.1) {
            uniq.push(p);
        }
    }
    let kept: Vec<bool> = uniq.iter().map(|q| !uniq.iter().any(|p| dominates(p, q))).collect();
    let mut out: Vec<ParetoPoint> = uniq.into_iter().zip(kept).filter_map(|(p, k)| k.then_some(p)).collect();
    out.sort_by(|a, b| a.h2.total_cmp(&b.h2).then(a.h1.total_cmp(&b.h1)));
    out
}

/// Strict dominance beyond the dedup tolerances.
pub fn dominates(p: &ParetoPoint, q: &ParetoPoint) -> bool {
    dominates_values((p.h1, p.h2), (q.h1, q.h2))
}

pub fn dominates_values(p: (f64, f64), q: (f64, f64)) -> bool {
    p.0 >= q.0 - DEDUP_TOL.0 && p.1 <= q.1 + DEDUP_TOL.1 && (p.0 > q.0 + DEDUP_TOL.0 || p.1 < q.1 - DEDUP_TOL.1)
}
