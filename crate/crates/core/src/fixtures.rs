//! Built-in instances.
//!
//! The default instance is SYNTHETIC and NON-CLINICAL: incidence, progression,
//! mortality, test accuracy, salvage and post-diagnosis mortality are plausible
//! shapes chosen for exercising the algorithms, not calibrated estimates.
//! Costs, disutilities, terminal rewards, budgets and scale factors follow the
//! conventional values used in the screening literature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Disutilities, Model, ModelSpec, SCHEMA};

pub const DEFAULT_HORIZON: usize = 60;
pub const BUDGETS: [f64; 3] = [350.0, 850.0, 1700.0];
pub const WEIGHTED: [f64; 2] = [0.933, 0.067];
pub const AVERAGE_RISK_BELIEF: [f64; 3] = [0.9954, 0.0016, 0.003];
pub const HIGH_RISK_BELIEF: [f64; 3] = [0.9755, 0.0085, 0.016];

fn other_mortality(t: usize) -> f64 {
    (0.0015 * (0.085 * t as f64).exp()).min(0.5)
}

fn risk_spec(incidence_factor: f64, belief: [f64; 3], name: &str) -> ModelSpec {
    let horizon = DEFAULT_HORIZON;
    let terminal = vec![2.5, 1.2, 0.5];
    let actions = ["W", "M", "M&R", "M&U"];
    // Remaining QALYs of someone free of cancer, used to size the lump sum
    // credited on diagnosis.
    let mut le = vec![0.0; horizon + 1];
    le[horizon] = terminal[0];
    for t in (0..horizon).rev() {
        let m = other_mortality(t);
        le[t] = (1.0 - 0.5 * m) + (1.0 - m) * le[t + 1];
    }
    let mut transition = Vec::with_capacity(horizon);
    let mut sensitivity = Vec::with_capacity(horizon);
    let mut specificity = Vec::with_capacity(horizon);
    let mut salvage = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let tf = t as f64;
        let m = other_mortality(t);
        let to_situ = incidence_factor * (0.0006 + 0.00002 * tf);
        let to_inv = incidence_factor * (0.0012 + 0.00004 * tf);
        let rows = vec![
            vec![1.0 - to_situ - to_inv - m, to_situ, to_inv, 0.0, m],
            vec![0.0, 1.0 - 0.1 - m, 0.1, 0.0, m],
            vec![0.0, 0.0, 1.0 - 0.03 - m, 0.03, m],
        ];
        transition.push(vec![rows; actions.len()]);
        let age_frac = tf / (horizon - 1) as f64;
        sensitivity.push(vec![0.05, 0.75 + 0.10 * age_frac, 0.95, 0.90]);
        specificity.push(vec![0.995, 0.88 + 0.05 * age_frac, 0.80, 0.85]);
        let after = (1.0 - m) * le[t + 1];
        salvage.push(vec![0.0, 0.95 * after, 0.7 * after]);
    }
    ModelSpec {
        schema: SCHEMA.to_string(),
        name: name.to_string(),
        horizon,
        start_age: 40,
        states: vec!["healthy".into(), "in-situ".into(), "invasive".into()],
        absorbing_states: vec!["death-cancer".into(), "death-other".into()],
        actions: actions.iter().map(|s| s.to_string()).collect(),
        observations: vec!["negative".into(), "positive".into()],
        transition,
        action_independent: true,
        sensitivity,
        specificity,
        observation: None,
        disutilities_days: Disutilities { screening: vec![0.0, 0.5, 2.5, 1.0], true_positive: 14.0, false_positive: 28.0 },
        salvage,
        terminal,
        post_diag_mortality: vec![vec![0.0, 0.02, 0.2]; horizon],
        costs: vec![0.0, 134.0, 1752.0, 243.0],
        budget: Some(BUDGETS[1]),
        discount: 1.0,
        scale: [1.0 / 40.0, 10.0],
        death_exits: true,
        initial_belief: Some(belief.to_vec()),
    }
}

/// Synthetic average-risk instance (ages 40 to 99, four actions).
pub fn default_spec() -> ModelSpec {
    risk_spec(1.0, AVERAGE_RISK_BELIEF, "synthetic-average-risk (non-clinical)")
}

/// Synthetic high-risk instance: three times the average-risk incidence.
pub fn high_risk_spec() -> ModelSpec {
    risk_spec(3.0, HIGH_RISK_BELIEF, "synthetic-high-risk (non-clinical)")
}

pub fn default_model() -> Model {
    Model::new(default_spec()).expect("default fixture is valid")
}

/// Time-invariant instance with zero rewards, costs and disutilities; callers
/// fill in what they need. `p_full[a][i]` rows run over core then absorbing
/// states (their count is inferred from the row width).
pub fn stationary(horizon: usize, p_full: Vec<Vec<Vec<f64>>>, sens: Vec<f64>, spec: Vec<f64>) -> ModelSpec {
    let na = p_full.len();
    let n = p_full[0].len();
    let n_abs = p_full[0][0].len() - n;
    ModelSpec {
        schema: SCHEMA.to_string(),
        name: "stationary".into(),
        horizon,
        start_age: 0,
        states: (0..n).map(|i| format!("s{i}")).collect(),
        absorbing_states: (0..n_abs).map(|i| format!("d{i}")).collect(),
        actions: (0..na).map(|a| if a == 0 { "W".to_string() } else { format!("A{a}") }).collect(),
        observations: vec!["negative".into(), "positive".into()],
        transition: vec![p_full; horizon],
        action_independent: false,
        sensitivity: vec![sens; horizon],
        specificity: vec![spec; horizon],
        observation: None,
        disutilities_days: Disutilities { screening: vec![0.0; na], true_positive: 0.0, false_positive: 0.0 },
        salvage: vec![vec![0.0; n]; horizon],
        terminal: vec![0.0; n],
        post_diag_mortality: vec![vec![0.0; n]; horizon],
        costs: vec![0.0; na],
        budget: None,
        discount: 1.0,
        scale: [1.0, 1.0],
        death_exits: true,
        initial_belief: None,
    }
}

/// Random three-state instance with time-varying, action-dependent data.
pub fn random_tiny(seed: u64, horizon: usize, n_actions: usize) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let row = |rng: &mut ChaCha8Rng, i: usize| -> Vec<f64> {
        // Upper-diagonal core part plus two absorbing columns.
        let mut w: Vec<f64> = (0..n + 2)
            .map(|j| {
                if j < i {
                    0.0
                } else if j == i {
                    2.0 + 4.0 * rng.gen::<f64>()
                } else if j == n && i != n - 1 {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        w
    };
    let transition = (0..horizon)
        .map(|_| (0..n_actions).map(|_| (0..n).map(|i| row(&mut rng, i)).collect()).collect())
        .collect();
    let mut spec = stationary(1, vec![vec![vec![0.0; n + 2]; n]; n_actions], vec![0.0; n_actions], vec![0.0; n_actions]);
    spec.name = format!("random-tiny-{seed}");
    spec.horizon = horizon;
    spec.transition = transition;
    spec.sensitivity = (0..horizon)
        .map(|_| (0..n_actions).map(|a| if a == 0 { 0.05 + 0.2 * rng.gen::<f64>() } else { 0.5 + 0.49 * rng.gen::<f64>() }).collect())
        .collect();
    spec.specificity =
        (0..horizon).map(|_| (0..n_actions).map(|_| 0.6 + 0.39 * rng.gen::<f64>()).collect()).collect();
    spec.disutilities_days = Disutilities {
        screening: (0..n_actions).map(|a| if a == 0 { 0.0 } else { 20.0 * rng.gen::<f64>() }).collect(),
        true_positive: 30.0 * rng.gen::<f64>(),
        false_positive: 60.0 * rng.gen::<f64>(),
    };
    spec.salvage = (0..horizon).map(|_| vec![0.0, 2.0 * rng.gen::<f64>(), 1.5 * rng.gen::<f64>()]).collect();
    spec.terminal = vec![1.0 + rng.gen::<f64>(), rng.gen::<f64>(), 0.5 * rng.gen::<f64>()];
    spec.post_diag_mortality = (0..horizon).map(|_| vec![0.0, 0.1 * rng.gen::<f64>(), 0.5 * rng.gen::<f64>()]).collect();
    spec.costs = (0..n_actions).map(|a| if a == 0 { 0.0 } else { 10.0 + 90.0 * rng.gen::<f64>() }).collect();
    spec.discount = 0.9 + 0.1 * rng.gen::<f64>();
    spec
}

/// Two core states on a vertex-only grid, started at `[0.45, 0.55]`. The
/// budget pays for screening the cancer vertex's share of the mass only,
/// while nearest-grid-point lookup screens every patient.
pub fn overshoot_spec() -> ModelSpec {
    let w = vec![vec![0.9, 0.0, 0.0, 0.1], vec![0.0, 0.5, 0.5, 0.0]];
    let mut spec = stationary(1, vec![w.clone(), w], vec![0.05, 0.9], vec![0.99, 0.9]);
    spec.name = "overshoot".into();
    spec.states = vec!["healthy".into(), "cancer".into()];
    spec.absorbing_states = vec!["death-cancer".into(), "death-other".into()];
    spec.actions = vec!["W".into(), "S".into()];
    spec.disutilities_days.screening = vec![0.0, 1.0];
    spec.disutilities_days.false_positive = 28.0;
    spec.salvage = vec![vec![0.0, 10.0]];
    spec.terminal = vec![5.0, 1.0];
    spec.costs = vec![0.0, 1.0];
    spec.budget = Some(0.55);
    spec.initial_belief = Some(vec![0.45, 0.55]);
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        assert!(default_spec().validate().is_empty());
        assert!(high_risk_spec().validate().is_empty());
        for seed in 0..20 {
            let s = random_tiny(seed, 4, 3);
            assert!(s.validate().is_empty(), "seed {seed}: {:?}", s.validate());
        }
    }

    #[test]
    fn random_instances_are_reproducible() {
        assert_eq!(random_tiny(7, 3, 2), random_tiny(7, 3, 2));
        assert_ne!(random_tiny(7, 3, 2), random_tiny(8, 3, 2));
    }

    #[test]
    fn high_risk_has_triple_incidence() {
        let a = default_spec();
        let h = high_risk_spec();
        let inc = |s: &ModelSpec| s.transition[10][0][0][1] + s.transition[10][0][0][2];
        assert!((inc(&h) - 3.0 * inc(&a)).abs() < 1e-15);
    }
}
