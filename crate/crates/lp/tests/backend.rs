use cpomdp_lp::{lp_format, solve, Comparison, Program, Sense, Session, SolveStatus, SolverParams};
use proptest::prelude::*;

/// 0/1 knapsack as a MILP.
fn knapsack(values: &[f64], weights: &[f64], cap: f64) -> Program {
    let mut p = Program::new(Sense::Maximize);
    let xs: Vec<_> = (0..values.len()).map(|i| p.add_binary(format!("x{i}"))).collect();
    for (x, &v) in xs.iter().zip(values) {
        p.set_objective_coef(*x, v);
    }
    p.add_constraint("cap", xs.iter().zip(weights).map(|(x, &w)| (*x, w)).collect(), Comparison::Le, cap);
    p
}

fn brute_knapsack(values: &[f64], weights: &[f64], cap: f64) -> f64 {
    (0u32..1 << values.len())
        .filter_map(|m| {
            let pick = |v: &[f64]| (0..v.len()).filter(|i| m >> i & 1 == 1).map(|i| v[i]).sum::<f64>();
            (pick(weights) <= cap).then(|| pick(values))
        })
        .fold(0.0, f64::max)
}

/// min c.x over x in [0, u] with sum x = d: fill cheapest first.
fn greedy_fill(costs: &[f64], upper: &[f64], demand: f64) -> f64 {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
    let (mut left, mut total) = (demand, 0.0);
    for i in order {
        let take = left.min(upper[i]);
        total += take * costs[i];
        left -= take;
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn milp_matches_enumeration(items in prop::collection::vec((1u32..20, 1u32..15), 1..8), frac in 0.2f64..0.9) {
        let values: Vec<f64> = items.iter().map(|i| i.0 as f64).collect();
        let weights: Vec<f64> = items.iter().map(|i| i.1 as f64).collect();
        let cap = (weights.iter().sum::<f64>() * frac).floor();
        let params = SolverParams { mip_gap: 0.0, ..SolverParams::default() };
        let rep = solve(&knapsack(&values, &weights, cap), &params).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        prop_assert!((rep.objective.unwrap() - brute_knapsack(&values, &weights, cap)).abs() < 1e-6);
    }

    #[test]
    fn session_rhs_sweep_matches_closed_form(
        items in prop::collection::vec((0.0f64..10.0, 0.5f64..3.0), 2..12),
        demands in prop::collection::vec(0.0f64..1.0, 1..6),
    ) {
        let costs: Vec<f64> = items.iter().map(|i| i.0).collect();
        let upper: Vec<f64> = items.iter().map(|i| i.1).collect();
        let mut p = Program::new(Sense::Minimize);
        let xs: Vec<_> = upper.iter().enumerate().map(|(i, &u)| p.add_var(format!("x{i}"), 0.0, u)).collect();
        let terms: Vec<_> = xs.iter().zip(&costs).map(|(x, &c)| (*x, c)).collect();
        p.set_objective(Sense::Minimize, &terms, 0.0);
        let row = p.add_constraint("demand", xs.iter().map(|x| (*x, 1.0)).collect(), Comparison::Eq, 0.0);
        let mut s = Session::new(p, &SolverParams::default()).unwrap();
        let total: f64 = upper.iter().sum();
        for f in demands {
            let d = f * total;
            s.set_rhs(row, Some(d)).unwrap();
            let rep = s.solve().unwrap();
            prop_assert_eq!(rep.status, SolveStatus::Optimal);
            prop_assert!((rep.objective.unwrap() - greedy_fill(&costs, &upper, d)).abs() < 1e-6 * (1.0 + total * 10.0));
        }
    }
}

#[test]
fn text_format_round_trip_preserves_optimum() {
    let mut p = Program::new(Sense::Maximize);
    let x = p.add_nonneg("x");
    let y = p.add_var("y", -2.0, 4.0);
    let z = p.add_binary("z");
    p.set_objective(Sense::Maximize, &[(x, 3.0), (y, 2.0), (z, 1.5)], 0.0);
    p.add_constraint("a", vec![(x, 1.0), (y, 1.0)], Comparison::Le, 5.0);
    p.add_constraint("b", vec![(x, 1.0), (z, 4.0)], Comparison::Le, 4.5);
    p.add_constraint("c", vec![(x, 1.0), (y, -1.0)], Comparison::Ge, -1.0);
    let params = SolverParams { mip_gap: 0.0, ..SolverParams::default() };
    let direct = solve(&p, &params).unwrap();
    let reparsed = solve(&lp_format::parse(&lp_format::write(&p)).unwrap(), &params).unwrap();
    assert_eq!(direct.status, SolveStatus::Optimal);
    assert!((direct.objective.unwrap() - reparsed.objective.unwrap()).abs() < 1e-9);
}

#[test]
fn infeasible_program_is_reported() {
    let mut p = Program::new(Sense::Minimize);
    let x = p.add_var("x", 0.0, 1.0);
    p.add_constraint("lo", vec![(x, 1.0)], Comparison::Ge, 2.0);
    let rep = solve(&p, &SolverParams::default()).unwrap();
    assert_eq!(rep.status, SolveStatus::Infeasible);
    assert!(rep.values.is_none());
}
