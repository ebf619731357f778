//! Unconstrained finite-horizon solvers used to validate the grid
//! approximation: exact enumeration, a grid-restricted lower bound and the
//! interpolated grid upper bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cpomdp_lp::{solve, Comparison, Program, Sense, SolverParams};

use crate::error::{CoreError, Result};
use crate::grid::{GridMeta, GridSet};
use crate::model::{Model, WAIT};
use crate::projection::{project_with, ProjectionTables};

#[derive(Debug, Clone, PartialEq)]
pub struct Alpha {
    pub v: Vec<f64>,
    pub action: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Alpha vectors per epoch, `0..=horizon` (the last holds terminal values).
#[derive(Debug, Clone)]
pub struct AlphaSet {
    pub epochs: Vec<Vec<Alpha>>,
}

impl AlphaSet {
    pub fn value(&self, t: usize, b: &[f64]) -> f64 {
        self.epochs[t].iter().map(|a| dot(&a.v, b)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Maximizing vector at `b` (first one on ties).
    pub fn best(&self, t: usize, b: &[f64]) -> &Alpha {
        let mut best = &self.epochs[t][0];
        let mut bv = dot(&best.v, b);
        for a in &self.epochs[t][1..] {
            let v = dot(&a.v, b);
            if v > bv {
                best = a;
                bv = v;
            }
        }
        best
    }

    pub fn total_vectors(&self) -> usize {
        self.epochs.iter().map(Vec::len).sum()
    }
}

fn terminal(model: &Model) -> Vec<Alpha> {
    vec![Alpha { v: (0..model.n_states()).map(|i| model.terminal_value(i)).collect(), action: WAIT }]
}

fn immediate(model: &Model, t: usize, a: usize) -> Vec<f64> {
    (0..model.n_states()).map(|i| model.qaly_coef(t, a, i)).collect()
}

/// `g[i] = z_{i theta} [continues] sum_j p_ij next[j]`.
fn back_project(model: &Model, t: usize, a: usize, theta: usize, next: &[f64]) -> Vec<f64> {
    (0..model.n_states())
        .map(|i| {
            if model.exits_on(a, theta, i) {
                return 0.0;
            }
            model.z(t, a, i, theta) * dot(model.p_row(t, a, i), next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ExactOptions {
    /// Largest cross-sum allowed before giving up.
    pub vector_cap: usize,
    pub tol: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { vector_cap: 200_000, tol: 1e-9 }
    }
}

/// Removes duplicates and pointwise-dominated vectors, keeping first
/// occurrences.
pub fn prune_pointwise(vs: Vec<Alpha>, tol: f64) -> Vec<Alpha> {
    let mut keep = vec![true; vs.len()];
    for i in 0..vs.len() {
        if !keep[i] {
            continue;
        }
        for j in 0..vs.len() {
            if i == j || !keep[j] {
                continue;
            }
            // j dominates i (ties resolved in favour of the earlier index).
            let ge = vs[j].v.iter().zip(&vs[i].v).all(|(a, b)| *a >= *b - tol);
            let eq = vs[j].v.iter().zip(&vs[i].v).all(|(a, b)| (a - b).abs() <= tol);
            if ge && (!eq || j < i) {
                keep[i] = false;
                break;
            }
        }
    }
    vs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(v, _)| v).collect()
}

/// A belief where `phi` beats every vector in `set` by more than `tol`.
fn witness(phi: &[f64], set: &[Alpha], tol: f64) -> Result<Option<Vec<f64>>> {
    let n = phi.len();
    if set.is_empty() {
        return Ok(Some(vec![1.0 / n as f64; n]));
    }
    let mut p = Program::new(Sense::Maximize);
    let b: Vec<_> = (0..n).map(|i| p.add_var(format!("b{i}"), 0.0, 1.0)).collect();
    let delta = p.add_var("delta", f64::NEG_INFINITY, f64::INFINITY);
    p.set_objective_coef(delta, 1.0);
    p.add_constraint("simplex", b.iter().map(|&v| (v, 1.0)).collect(), Comparison::Eq, 1.0);
    for (r, u) in set.iter().enumerate() {
        let mut terms: Vec<_> = b.iter().zip(phi.iter().zip(&u.v)).map(|(&v, (x, y))| (v, x - y)).collect();
        terms.push((delta, -1.0));
        p.add_constraint(format!("beat{r}"), terms, Comparison::Ge, 0.0);
    }
    let rep = solve(&p, &SolverParams::default())?;
    if !rep.is_optimal() {
        return Err(CoreError::Solver { status: rep.status, context: "domination witness".into() });
    }
    let x = rep.values.expect("optimal has values");
    Ok((x[n] > tol).then(|| x[..n].to_vec()))
}

/// Pointwise filter followed by an LP witness test for each survivor.
pub fn prune(vs: Vec<Alpha>, tol: f64) -> Result<Vec<Alpha>> {
    let mut frontier = prune_pointwise(vs, tol);
    let mut kept: Vec<Alpha> = Vec::new();
    while !frontier.is_empty() {
        match witness(&frontier[0].v, &kept, tol)? {
            None => {
                frontier.remove(0);
            }
            Some(b) => {
                // Best vector at the witness; ties to the lexicographically
                // larger vector, then the earliest.
                let mut best = 0;
                for k in 1..frontier.len() {
                    let (vk, vb) = (dot(&frontier[k].v, &b), dot(&frontier[best].v, &b));
                    let lex = frontier[k].v.iter().zip(&frontier[best].v).find(|(x, y)| x != y).map(|(x, y)| x > y);
                    if vk > vb + tol || ((vk - vb).abs() <= tol && lex == Some(true)) {
                        best = k;
                    }
                }
                kept.push(frontier.remove(best));
            }
        }
    }
    Ok(kept)
}

fn cross_sum(a: &[Alpha], b: &[Alpha]) -> Vec<Alpha> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(Alpha { v: x.v.iter().zip(&y.v).map(|(p, q)| p + q).collect(), action: x.action });
        }
    }
    out
}

/// Exact value function by backward induction with incremental pruning.
pub fn monahan_exact(model: &Model, opts: &ExactOptions) -> Result<AlphaSet> {
    let horizon = model.horizon();
    let mut epochs = vec![Vec::new(); horizon + 1];
    epochs[horizon] = terminal(model);
    for t in (0..horizon).rev() {
        let mut all = Vec::new();
        for a in 0..model.n_actions() {
            let mut acc: Option<Vec<Alpha>> = None;
            for theta in 0..model.n_observations() {
                let proj: Vec<Alpha> =
                    epochs[t + 1].iter().map(|n: &Alpha| Alpha { v: back_project(model, t, a, theta, &n.v), action: a }).collect();
                let proj = prune(proj, opts.tol)?;
                acc = Some(match acc {
                    None => proj,
                    Some(prev) => {
                        if prev.len().saturating_mul(proj.len()) > opts.vector_cap {
                            return Err(CoreError::ResourceBound(format!(
                                "cross-sum of {} x {} vectors at epoch {t}",
                                prev.len(),
                                proj.len()
                            )));
                        }
                        prune(cross_sum(&prev, &proj), opts.tol)?
                    }
                });
            }
            let r = immediate(model, t, a);
            all.extend(acc.unwrap_or_default().into_iter().map(|x| Alpha {
                v: x.v.iter().zip(&r).map(|(p, q)| p + q).collect(),
                action: a,
            }));
        }
        epochs[t] = prune(all, opts.tol)?;
    }
    Ok(AlphaSet { epochs })
}

/// Point-based backups restricted to the grid; every retained vector is the
/// value of some conditional plan, so the result never exceeds the optimum.
pub fn lovejoy_lb(model: &Model, grid: &GridSet) -> AlphaSet {
    let horizon = model.horizon();
    let (na, no) = (model.n_actions(), model.n_observations());
    let mut epochs = vec![Vec::new(); horizon + 1];
    epochs[horizon] = terminal(model);
    for t in (0..horizon).rev() {
        let next = &epochs[t + 1];
        // proj[a][theta][m]
        let proj: Vec<Vec<Vec<Vec<f64>>>> = (0..na)
            .map(|a| (0..no).map(|th| next.iter().map(|n| back_project(model, t, a, th, &n.v)).collect()).collect())
            .collect();
        let rewards: Vec<Vec<f64>> = (0..na).map(|a| immediate(model, t, a)).collect();
        let mut set: Vec<Alpha> = Vec::new();
        for g in &grid.points {
            let mut best: Option<(f64, Alpha)> = None;
            for a in 0..na {
                let mut v = rewards[a].clone();
                for th in 0..no {
                    let cand = &proj[a][th];
                    let mut m_best = 0;
                    let mut m_val = dot(&cand[0], g);
                    for (m, c) in cand.iter().enumerate().skip(1) {
                        let val = dot(c, g);
                        if val > m_val {
                            m_best = m;
                            m_val = val;
                        }
                    }
                    v.iter_mut().zip(&cand[m_best]).for_each(|(x, y)| *x += y);
                }
                let val = dot(&v, g);
                if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
                    best = Some((val, Alpha { v, action: a }));
                }
            }
            let (_, alpha) = best.expect("at least one action");
            if !set.iter().any(|s| s.v == alpha.v) {
                set.push(alpha);
            }
        }
        epochs[t] = set;
    }
    AlphaSet { epochs }
}

/// Grid values `V[t][k]` from backward induction over the grid chain, plus
/// the maximizing action per point.
#[derive(Debug, Clone)]
pub struct GridValues {
    pub values: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
}

pub fn grid_ub(model: &Model, grid: &GridSet, tables: &ProjectionTables) -> GridValues {
    let horizon = model.horizon();
    let n = model.n_states();
    let mut values = vec![Vec::new(); horizon + 1];
    let mut actions = vec![Vec::new(); horizon];
    values[horizon] = grid.points.iter().map(|g| (0..n).map(|i| g[i] * model.terminal_value(i)).sum()).collect();
    for t in (0..horizon).rev() {
        let mut vt = Vec::with_capacity(grid.len());
        let mut at = Vec::with_capacity(grid.len());
        for (k, g) in grid.points.iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, WAIT);
            for a in 0..model.n_actions() {
                let r: f64 = (0..n).map(|i| g[i] * model.qaly_coef(t, a, i)).sum();
                let c: f64 = tables.f_row(t, a, k).iter().map(|&(l, p)| p * values[t + 1][l as usize]).sum();
                if r + c > best.0 {
                    best = (r + c, a);
                }
            }
            vt.push(best.0);
            at.push(best.1);
        }
        values[t] = vt;
        actions[t] = at;
    }
    GridValues { values, actions }
}

impl GridValues {
    /// Interpolated value at an arbitrary belief.
    pub fn value_at(&self, t: usize, b: &[f64], grid: &GridSet, tables: &ProjectionTables) -> Result<f64> {
        let row = project_with(b, grid, tables.strategy)?;
        Ok(row.iter().map(|&(k, w)| w * self.values[t][k as usize]).sum())
    }
}

/// `(ub - lb) / |lb|`.
pub fn gap(lb: f64, ub: f64) -> Result<f64> {
    if lb == 0.0 {
        return Err(CoreError::DivisionByZero);
    }
    Ok((ub - lb) / lb.abs())
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Seeded evaluation beliefs. For threshold grids a region is drawn
/// uniformly, then the healthy component uniformly inside it, then the rest
/// of the mass uniformly over the remaining states.
pub fn sample_beliefs(meta: &GridMeta, n_states: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match meta {
            GridMeta::Variable { thresholds, .. } => {
                let r = rng.gen_range(0..thresholds.len());
                let hi = if r == 0 { 1.0 } else { thresholds[r - 1] };
                let lo = thresholds[r];
                let p0 = lo + (hi - lo) * rng.gen::<f64>();
                let rest = dirichlet_ones(&mut rng, n_states - 1);
                std::iter::once(p0).chain(rest.into_iter().map(|x| (1.0 - p0) * x)).collect()
            }
            _ => dirichlet_ones(&mut rng, n_states),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsRow {
    pub grid: String,
    pub size: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    pub exact: Option<f64>,
    pub gap_min: f64,
    pub gap_mean: f64,
    pub gap_max: f64,
    pub samples: usize,
    pub seed: u64,
}

/// LB/UB at `target` plus gap statistics over seeded sample beliefs.
pub fn bounds_row(
    model: &Model,
    grid: &GridSet,
    tables: &ProjectionTables,
    target: &[f64],
    samples: usize,
    seed: u64,
    exact: Option<&AlphaSet>,
) -> Result<BoundsRow> {
    let lb = lovejoy_lb(model, grid);
    let ub = grid_ub(model, grid, tables);
    let lb_t = lb.value(0, target);
    let ub_t = ub.value_at(0, target, grid, tables)?;
    let mut gaps = Vec::with_capacity(samples);
    for b in sample_beliefs(&grid.meta, model.n_states(), samples, seed) {
        gaps.push(gap(lb.value(0, &b), ub.value_at(0, &b, grid, tables)?)?);
    }
    let (gmin, gmax) = gaps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    let label = match &grid.meta {
        GridMeta::Fixed { resolution } => format!("{resolution}"),
        GridMeta::Variable { resolutions, .. } => {
            resolutions.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("/")
        }
        GridMeta::Custom => "custom".into(),
    };
    Ok(BoundsRow {
        grid: label,
        size: grid.len(),
        lb: lb_t,
        ub: ub_t,
        gap: gap(lb_t, ub_t)?,
        exact: exact.map(|e| e.value(0, target)),
        gap_min: if samples > 0 { gmin } else { f64::NAN },
        gap_mean: if samples > 0 { gaps.iter().sum::<f64>() / samples as f64 } else { f64::NAN },
        gap_max: if samples > 0 { gmax } else { f64::NAN },
        samples,
        seed,
    })
}
