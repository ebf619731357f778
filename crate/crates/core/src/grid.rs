//! Uniform belief grids: fixed resolution and threshold-based variable
//! resolution. Points are built from integer numerators and converted to
//! floating point once.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_SIZE_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridMeta {
    Fixed { resolution: u64 },
    Variable { resolutions: Vec<u64>, thresholds: Vec<f64> },
    /// Caller-supplied points (no exact representation).
    Custom,
}

/// An exact grid point: `numerators[i] / denominator`, in lowest terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RationalPoint {
    pub numerators: Vec<u64>,
    pub denominator: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl RationalPoint {
    fn reduced(numerators: Vec<u64>, denominator: u64) -> Self {
        let g = numerators.iter().fold(denominator, |g, &x| gcd(g, x));
        Self { numerators: numerators.iter().map(|x| x / g).collect(), denominator: denominator / g }
    }

    fn to_f64(&self) -> Vec<f64> {
        self.numerators.iter().map(|&x| x as f64 / self.denominator as f64).collect()
    }

    /// Lexicographic comparison of the represented values.
    fn cmp_value(&self, other: &Self) -> Ordering {
        for (&a, &b) in self.numerators.iter().zip(&other.numerators) {
            let l = a as u128 * other.denominator as u128;
            let r = b as u128 * self.denominator as u128;
            match l.cmp(&r) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

/// An ordered set of belief points (lexicographically descending).
#[derive(Debug, Clone)]
pub struct GridSet {
    pub points: Vec<Vec<f64>>,
    /// Exact form of each point; empty for custom grids.
    pub exact: Vec<RationalPoint>,
    /// For variable grids, the (0-based) threshold region each point was
    /// generated in; all zeros for fixed grids.
    pub region: Vec<usize>,
    pub meta: GridMeta,
    index: HashMap<Vec<u64>, usize>,
}

fn key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|x| (x + 0.0).to_bits()).collect()
}

impl GridSet {
    fn from_parts(mut items: Vec<(RationalPoint, usize)>, meta: GridMeta) -> Self {
        items.sort_by(|a, b| b.0.cmp_value(&a.0));
        let exact: Vec<RationalPoint> = items.iter().map(|(p, _)| p.clone()).collect();
        let region = items.iter().map(|(_, r)| *r).collect();
        let points: Vec<Vec<f64>> = exact.iter().map(RationalPoint::to_f64).collect();
        let index = points.iter().enumerate().map(|(k, p)| (key(p), k)).collect();
        Self { points, exact, region, meta, index }
    }

    /// A grid from arbitrary points, kept in the given order. Duplicates
    /// (bitwise) are dropped.
    pub fn custom(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.first().map_or(0, Vec::len);
        let mut index = HashMap::new();
        let mut kept = Vec::new();
        for p in points {
            if p.len() != n || p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CoreError::InvalidArgument("custom grid points must be beliefs of equal length".into()));
            }
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(key(&p)) {
                e.insert(kept.len());
                kept.push(p);
            }
        }
        let region = vec![0; kept.len()];
        Ok(Self { points: kept, exact: Vec::new(), region, meta: GridMeta::Custom, index })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Index of a grid point equal (bitwise, up to signed zero) to `b`.
    pub fn index_of(&self, b: &[f64]) -> Option<usize> {
        self.index.get(&key(b)).copied()
    }

    /// Index of the simplex vertex `e_i`, if present.
    pub fn vertex(&self, i: usize) -> Option<usize> {
        let mut v = vec![0.0; self.n_states()];
        v[i] = 1.0;
        self.index_of(&v)
    }

    /// One point per row: `k,pi_0,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k");
        for i in 0..self.n_states() {
            let _ = write!(out, ",pi_{i}");
        }
        out.push('\n');
        for (k, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{k}");
            for x in p {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

/// `binom(n_states - 1 + rho, rho)`, saturating at `u128::MAX`.
pub fn grid_size_formula(rho: u64, n_states: usize) -> u128 {
    let k = (n_states as u128).saturating_sub(1);
    let mut acc: u128 = 1;
    // binom(rho + k, k) = prod_{j=1..k} (rho + j) / j, exact at every step.
    for j in 1..=k {
        acc = match acc.checked_mul(rho as u128 + j) {
            Some(v) => v / j,
            None => return u128::MAX,
        };
    }
    acc
}

fn compositions(rho: u64, n: usize) -> Vec<Vec<u64>> {
    // Descending lexicographic order: first component from rho down to 0.
    fn rec(left: u64, slots: usize, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in (0..=left).rev() {
            cur.push(x);
            rec(left - x, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(rho, n, &mut Vec::with_capacity(n), &mut out);
    out
}

fn check_fixed(rho: u64, n_states: usize, cap: u128) -> Result<()> {
    if rho < 1 || n_states < 2 {
        return Err(CoreError::InvalidArgument("need resolution >= 1 and at least two states".into()));
    }
    let size = grid_size_formula(rho, n_states);
    if size > cap {
        return Err(CoreError::ResourceBound(format!("grid of resolution {rho} has {size} points (cap {cap})")));
    }
    Ok(())
}

pub fn build_fixed(rho: u64, n_states: usize) -> Result<GridSet> {
    build_fixed_capped(rho, n_states, DEFAULT_SIZE_CAP)
}

pub fn build_fixed_capped(rho: u64, n_states: usize, cap: u128) -> Result<GridSet> {
    check_fixed(rho, n_states, cap)?;
    let items = compositions(rho, n_states).into_iter().map(|c| (RationalPoint::reduced(c, rho), 0)).collect();
    Ok(GridSet::from_parts(items, GridMeta::Fixed { resolution: rho }))
}

pub fn build_variable(resolutions: &[u64], thresholds: &[f64], n_states: usize) -> Result<GridSet> {
    build_variable_capped(resolutions, thresholds, n_states, DEFAULT_SIZE_CAP)
}

/// Region `r` keeps points of resolution `resolutions[r]` whose healthy
/// component lies in the closed interval `[thresholds[r], thresholds[r-1]]`
/// (with an implicit leading threshold of 1). A point already produced by an
/// earlier region is not repeated.
pub fn build_variable_capped(resolutions: &[u64], thresholds: &[f64], n_states: usize, cap: u128) -> Result<GridSet> {
    if resolutions.len() != thresholds.len() || resolutions.is_empty() {
        return Err(CoreError::InvalidThresholds("need one threshold per resolution".into()));
    }
    if thresholds.last() != Some(&0.0) {
        return Err(CoreError::InvalidThresholds("the last threshold must be 0".into()));
    }
    let mut upper = 1.0;
    for &psi in thresholds {
        if !(psi < upper && psi >= 0.0) {
            return Err(CoreError::InvalidThresholds("thresholds must be strictly decreasing within [0, 1)".into()));
        }
        upper = psi;
    }
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    let mut upper = 1.0;
    for (r, (&rho, &psi)) in resolutions.iter().zip(thresholds).enumerate() {
        check_fixed(rho, n_states, cap)?;
        // Compare numerators against the thresholds scaled to this resolution,
        // allowing for the rounding of the decimal threshold itself.
        let slack = 1e-9;
        let lo = psi * rho as f64 - slack;
        let hi = upper * rho as f64 + slack;
        for c in compositions(rho, n_states) {
            let x0 = c[0] as f64;
            if x0 < lo || x0 > hi {
                continue;
            }
            let p = RationalPoint::reduced(c, rho);
            if seen.insert(p.clone()) {
                items.push((p, r));
            }
        }
        if items.len() as u128 > cap {
            return Err(CoreError::ResourceBound(format!("variable grid exceeds {cap} points")));
        }
        upper = psi;
    }
    let meta = GridMeta::Variable { resolutions: resolutions.to_vec(), thresholds: thresholds.to_vec() };
    Ok(GridSet::from_parts(items, meta))
}

/// Builds the grid named by `meta`.
pub fn build(meta: &GridMeta, n_states: usize) -> Result<GridSet> {
    match meta {
        GridMeta::Fixed { resolution } => build_fixed(*resolution, n_states),
        GridMeta::Variable { resolutions, thresholds } => build_variable(resolutions, thresholds, n_states),
        GridMeta::Custom => Err(CoreError::InvalidArgument("custom grids cannot be rebuilt from metadata".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rational(g: &GridSet) -> Vec<Vec<(u64, u64)>> {
        g.exact.iter().map(|p| p.numerators.iter().map(|&x| reduce(x, p.denominator)).collect()).collect()
    }

    fn reduce(a: u64, b: u64) -> (u64, u64) {
        let g = gcd(a, b);
        (a / g, b / g)
    }

    #[test]
    fn two_state_resolution_two() {
        let g = build_fixed(2, 2).unwrap();
        assert_eq!(g.points, vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn resolution_one_gives_vertices() {
        let g = build_fixed(1, 3).unwrap();
        assert_eq!(g.points, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn three_state_resolution_two() {
        let g = build_fixed(2, 3).unwrap();
        let h = 0.5;
        assert_eq!(
            g.points,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![h, h, 0.0],
                vec![h, 0.0, h],
                vec![0.0, 1.0, 0.0],
                vec![0.0, h, h],
                vec![0.0, 0.0, 1.0]
            ]
        );
    }

    #[test]
    fn size_formula_values() {
        assert_eq!(grid_size_formula(2, 3), 6);
        assert_eq!(grid_size_formula(1, 7), 7);
        assert_eq!(grid_size_formula(5, 3), 21);
        assert_eq!(build_fixed(5, 3).unwrap().len(), 21);
        assert_eq!(grid_size_formula(u64::MAX, 40), u128::MAX);
    }

    #[test]
    fn variable_two_region_example() {
        let g = build_variable(&[3, 2], &[0.5, 0.0], 3).unwrap();
        let expected = vec![
            vec![(1, 1), (0, 1), (0, 1)],
            vec![(2, 3), (1, 3), (0, 1)],
            vec![(2, 3), (0, 1), (1, 3)],
            vec![(1, 2), (1, 2), (0, 1)],
            vec![(1, 2), (0, 1), (1, 2)],
            vec![(0, 1), (1, 1), (0, 1)],
            vec![(0, 1), (1, 2), (1, 2)],
            vec![(0, 1), (0, 1), (1, 1)],
        ];
        assert_eq!(rational(&g), expected);
    }

    #[test]
    fn variable_grid_sizes() {
        let psi = [0.96, 0.8, 0.0];
        for (rho, size) in [([100, 25, 5], 51), ([250, 50, 5], 144), ([500, 50, 5], 309), ([1000, 50, 5], 939)] {
            assert_eq!(build_variable(&rho, &psi, 3).unwrap().len(), size, "{rho:?}");
        }
    }

    #[test]
    fn bad_thresholds_rejected() {
        assert!(matches!(build_variable(&[3, 2], &[0.5, 0.1], 3), Err(CoreError::InvalidThresholds(_))));
        assert!(matches!(build_variable(&[3, 2], &[0.0, 0.5], 3), Err(CoreError::InvalidThresholds(_))));
        assert!(matches!(build_variable(&[3], &[0.5, 0.0], 3), Err(CoreError::InvalidThresholds(_))));
    }

    #[test]
    fn size_cap_is_enforced() {
        assert!(matches!(build_fixed_capped(1000, 4, 1000), Err(CoreError::ResourceBound(_))));
    }

    #[test]
    fn lookup_and_csv() {
        let g = build_fixed(2, 3).unwrap();
        assert_eq!(g.index_of(&[0.5, 0.0, 0.5]), Some(2));
        assert_eq!(g.vertex(2), Some(5));
        assert_eq!(g.index_of(&[0.4, 0.6, 0.0]), None);
        assert!(g.to_csv().starts_with("k,pi_0,pi_1,pi_2\n0,1,0,0\n"));
    }

    proptest! {
        #[test]
        fn fixed_size_matches_formula(rho in 1u64..25, n in 2usize..5) {
            let g = build_fixed(rho, n).unwrap();
            prop_assert_eq!(g.len() as u128, grid_size_formula(rho, n));
            for p in &g.points {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for e in &g.exact {
                prop_assert_eq!(rho % e.denominator, 0);
            }
        }

        #[test]
        fn equal_resolutions_collapse_to_fixed(rho in 1u64..12, cuts in prop::collection::btree_set(1u32..99, 0..3)) {
            let mut psi: Vec<f64> = cuts.iter().rev().map(|&c| c as f64 / 100.0).collect();
            psi.push(0.0);
            let v = build_variable(&vec![rho; psi.len()], &psi, 3).unwrap();
            let f = build_fixed(rho, 3).unwrap();
            prop_assert_eq!(v.points, f.points);
        }

        #[test]
        fn each_point_lies_in_its_source_region(r1 in 2u64..20, r2 in 1u64..10, c in 1u32..99) {
            let psi = [c as f64 / 100.0, 0.0];
            let g = build_variable(&[r1, r2], &psi, 3).unwrap();
            for (p, &r) in g.points.iter().zip(&g.region) {
                let (lo, hi) = if r == 0 { (psi[0], 1.0) } else { (0.0, psi[0]) };
                prop_assert!(p[0] >= lo - 1e-12 && p[0] <= hi + 1e-12);
                // A point is attributed to the first region that contains it.
                if r == 1 {
                    let in_first = p[0] >= psi[0] - 1e-12 && (p[0] * r1 as f64 - (p[0] * r1 as f64).round()).abs() < 1e-9
                        && p.iter().all(|x| (x * r1 as f64 - (x * r1 as f64).round()).abs() < 1e-9);
                    prop_assert!(!in_first);
                }
            }
            let again = build_variable(&[r1, r2], &psi, 3).unwrap();
            prop_assert_eq!(g.points, again.points);
        }

        #[test]
        fn ordering_is_descending(rho in 1u64..15) {
            let g = build_fixed(rho, 3).unwrap();
            for w in g.exact.windows(2) {
                prop_assert_eq!(w[0].cmp_value(&w[1]), Ordering::Greater);
            }
        }
    }
}
