//! Occupancy programs checked against direct evaluation of the grid chain.

use cpomdp_core::fixtures;
use cpomdp_core::grid::{build_fixed, GridSet};
use cpomdp_core::model::{Model, NEG, POS};
use cpomdp_core::occupancy::{Objective, OccupancyProgram, ProgramOptions};
use cpomdp_core::policy::GridPolicy;
use cpomdp_core::projection::{ProjectionStrategy, ProjectionTables};
use cpomdp_lp::SolverParams;
use proptest::prelude::*;

/// (h1, h2, cost) of a grid policy by enumerating every (action, state,
/// observation, next point) branch from `(t, k)`.
fn enumerate(m: &Model, g: &GridSet, tab: &ProjectionTables, pol: &GridPolicy, t: usize, k: usize) -> [f64; 3] {
    let n = m.n_states();
    let pt = &g.points[k];
    if t == m.horizon() {
        return [(0..n).map(|i| pt[i] * m.terminal_value(i)).sum(), 0.0, 0.0];
    }
    let dist = pol.dist(t, k).unwrap().into_owned();
    let mut acc = [0.0; 3];
    for (a, &pa) in dist.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        acc[2] += pa * m.cost(a);
        for theta in [NEG, POS] {
            let mut cont = 0.0;
            for i in 0..n {
                let w = pt[i] * m.z(t, a, i, theta);
                if w == 0.0 {
                    continue;
                }
                acc[0] += pa * w * m.discount_factor(t) * m.reward(t, a, i, theta);
                if m.exits_on(a, theta, i) {
                    acc[0] += pa * w * m.discount_factor(t) * m.salvage(t, i);
                    acc[1] += pa * w * m.post_diag_mortality(t, i);
                } else {
                    acc[1] += pa * w * m.cancer_death_prob(t, a, i);
                    cont += w * m.p_row(t, a, i).iter().sum::<f64>();
                }
            }
            if cont > 0.0 {
                for &(l, beta) in tab.beta.row(t, a, theta, k).unwrap() {
                    let v = enumerate(m, g, tab, pol, t + 1, l as usize);
                    for c in 0..3 {
                        acc[c] += pa * cont * beta * v[c];
                    }
                }
            }
        }
    }
    acc
}

fn instance(seed: u64, horizon: usize, budget: Option<f64>) -> (Model, GridSet, ProjectionTables) {
    let mut spec = fixtures::random_tiny(seed, horizon, 3);
    spec.budget = budget;
    let m = Model::new(spec).unwrap();
    let g = build_fixed(2, 3).unwrap();
    let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
    (m, g, t)
}

#[test]
fn objectives_match_path_enumeration() {
    let params = SolverParams::default();
    for seed in 0..6 {
        let (m, g, tab) = instance(seed, 3, Some(25.0));
        let k0 = 1;
        let op = OccupancyProgram::build(&m, &g, &tab, &g.points[k0].clone(), ProgramOptions::for_model(&m)).unwrap();
        for obj in [Objective::MaxQaly, Objective::MinRisk, Objective::Weighted { w1: 0.5, w2: 0.5 }] {
            let sol = op.solve(obj, &[], &params).unwrap();
            let [h1, h2, cost] = enumerate(&m, &g, &tab, &sol.policy, 0, k0);
            assert!((h1 - sol.h1).abs() < 1e-7, "seed {seed} {obj:?}: h1 {h1} vs {}", sol.h1);
            assert!((h2 - sol.h2).abs() < 1e-8, "seed {seed} {obj:?}: h2 {h2} vs {}", sol.h2);
            assert!((cost - sol.cost).abs() < 1e-6, "seed {seed} {obj:?}: cost {cost} vs {}", sol.cost);
            assert!(sol.cost <= 25.0 + 1e-6);
            assert!(sol.flow_residual < 1e-6 && sol.mass_residual < 1e-6);
        }
    }
}

#[test]
fn no_risk_without_cancer_deaths() {
    let (m0, g, _) = instance(3, 3, None);
    let mut spec = m0.spec().clone();
    for t in 0..3 {
        spec.post_diag_mortality[t] = vec![0.0; 3];
        for a in 0..3 {
            for row in &mut spec.transition[t][a] {
                row[4] += row[3];
                row[3] = 0.0;
            }
        }
    }
    let m = Model::new(spec).unwrap();
    let tab = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
    let op = OccupancyProgram::build(&m, &g, &tab, &[0.6, 0.3, 0.1], ProgramOptions::for_model(&m)).unwrap();
    let sol = op.solve(Objective::MaxQaly, &[], &SolverParams::default()).unwrap();
    assert!(sol.h2.abs() < 1e-12);
}

#[test]
fn initial_distribution_reconstructs_start() {
    let (m, g, tab) = instance(1, 2, None);
    let pi0 = [0.55, 0.3, 0.15];
    let op = OccupancyProgram::build(&m, &g, &tab, &pi0, ProgramOptions::for_model(&m)).unwrap();
    let total: f64 = op.delta.iter().map(|x| x.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for i in 0..3 {
        let r: f64 = op.delta.iter().map(|&(k, w)| w * g.points[k as usize][i]).sum();
        assert!((r - pi0[i]).abs() < 1e-8);
    }
    let full: Vec<f64> = vec![1.0 / 3.0; 3];
    let op = OccupancyProgram::build(&m, &g, &tab, &full, ProgramOptions::for_model(&m)).unwrap();
    assert!(op.delta.iter().all(|&(_, w)| w >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn budget_monotonicity(seed in 0u64..1000, c1 in 0.0f64..60.0, extra in 0.0f64..60.0) {
        let (m, g, tab) = instance(seed, 3, None);
        let params = SolverParams::default();
        let solve = |c: f64, obj| {
            let mut o = ProgramOptions::for_model(&m);
            o.budget = Some(c);
            OccupancyProgram::build(&m, &g, &tab, &[0.7, 0.2, 0.1], o).unwrap().solve(obj, &[], &params).unwrap()
        };
        let (lo, hi) = (solve(c1, Objective::MaxQaly), solve(c1 + extra, Objective::MaxQaly));
        prop_assert!(hi.h1 >= lo.h1 - 1e-7);
        let (lo, hi) = (solve(c1, Objective::MinRisk), solve(c1 + extra, Objective::MinRisk));
        prop_assert!(hi.h2 <= lo.h2 + 1e-9);
    }

    #[test]
    fn elimination_is_exact(seed in 0u64..1000) {
        let (m, g, tab) = instance(seed, 4, Some(30.0));
        let params = SolverParams::default();
        let mut o = ProgramOptions::for_model(&m);
        let a = OccupancyProgram::build(&m, &g, &tab, &g.points[0].clone(), o).unwrap();
        o.eliminate = false;
        let b = OccupancyProgram::build(&m, &g, &tab, &g.points[0].clone(), o).unwrap();
        prop_assert!(a.n_occupancy_vars() < b.n_occupancy_vars());
        for obj in [Objective::MaxQaly, Objective::MinRisk] {
            let (x, y) = (a.solve(obj, &[], &params).unwrap(), b.solve(obj, &[], &params).unwrap());
            prop_assert!((x.h1 - y.h1).abs() < 1e-6 || obj == Objective::MinRisk);
            prop_assert!((x.h2 - y.h2).abs() < 1e-6 || obj == Objective::MaxQaly);
        }
    }
}
