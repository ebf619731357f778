//! Convex-combination weights of beliefs over a grid, and the grid-to-grid
//! transition tensor they induce.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::grid::GridSet;
use crate::model::Model;

/// Sparse row of `(grid index, weight)` pairs sorted by index.
pub type SparseRow = Vec<(u32, f64)>;

/// Per-point cost used to pick among the many convex combinations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionStrategy {
    /// `sum_l beta_l * |g_l - b|_1`.
    #[default]
    L1,
    /// `sum_l beta_l * |g_l - b|_2^2`.
    SquaredL2,
}

impl ProjectionStrategy {
    fn cost(self, g: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::L1 => g.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Self::SquaredL2 => g.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }
}

const PRICE_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-12;
const BLAND_AFTER: usize = 25;

/// Inverts a small dense matrix (row-major) with partial pivoting.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| m[r * n + col].abs().total_cmp(&m[s * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Weights `beta >= 0` with `sum_l beta_l g_l = b` minimizing the strategy
/// cost. The basis starts at the simplex vertices; pricing is Dantzig's rule
/// with a switch to Bland's rule after repeated degenerate pivots. Ties go to
/// the lowest grid index.
pub fn project_with(b: &[f64], grid: &GridSet, strategy: ProjectionStrategy) -> Result<SparseRow> {
    let n = b.len();
    if grid.n_states() != n {
        return Err(CoreError::InvalidArgument("belief and grid dimensions differ".into()));
    }
    if let Some(k) = grid.index_of(b) {
        return Ok(vec![(k as u32, 1.0)]);
    }
    let mut basis = Vec::with_capacity(n);
    for i in 0..n {
        basis.push(grid.vertex(i).ok_or_else(|| CoreError::Span(format!("vertex {i} is missing")))?);
    }
    let cost: Vec<f64> = grid.points.iter().map(|g| strategy.cost(g, b)).collect();
    let mut in_basis = vec![false; grid.len()];
    basis.iter().for_each(|&k| in_basis[k] = true);

    let inverse_of = |basis: &[usize]| {
        let mut bm = vec![0.0; n * n];
        for (c, &k) in basis.iter().enumerate() {
            for r in 0..n {
                bm[r * n + c] = grid.points[k][r];
            }
        }
        invert(&bm, n)
    };
    let solve = |binv: &[f64], rhs: &[f64]| -> Vec<f64> {
        (0..n).map(|r| (0..n).map(|j| binv[r * n + j] * rhs[j]).sum()).collect()
    };

    let mut degenerate = 0;
    let max_iter = 50 * (grid.len() + n);
    let mut binv = inverse_of(&basis).ok_or_else(|| CoreError::Span("singular vertex basis".into()))?;
    for _ in 0..max_iter {
        let x = solve(&binv, b);
        // Duals y = c_B^T B^{-1}.
        let y: Vec<f64> = (0..n).map(|j| (0..n).map(|r| cost[basis[r]] * binv[r * n + j]).sum()).collect();
        let bland = degenerate >= BLAND_AFTER;
        let mut entering: Option<(usize, f64)> = None;
        for (l, g) in grid.points.iter().enumerate() {
            if in_basis[l] {
                continue;
            }
            let rc = cost[l] - y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            if rc < -PRICE_TOL && entering.is_none_or(|(_, best)| rc < best) {
                entering = Some((l, rc));
                if bland {
                    break;
                }
            }
        }
        let Some((l, _)) = entering else {
            return Ok(finish(&basis, &x));
        };
        let d = solve(&binv, &grid.points[l]);
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..n {
            if d[r] > PIVOT_TOL {
                let ratio = x[r].max(0.0) / d[r];
                let better = match leave {
                    None => true,
                    Some((s, best)) => ratio < best || (ratio == best && basis[r] < basis[s]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, step)) = leave else {
            return Err(CoreError::Span("projection program is unbounded".into()));
        };
        degenerate = if step <= 1e-15 { degenerate + 1 } else { 0 };
        in_basis[basis[r]] = false;
        in_basis[l] = true;
        basis[r] = l;
        binv = inverse_of(&basis).ok_or_else(|| CoreError::Span("singular basis".into()))?;
    }
    Err(CoreError::Span(format!("projection did not converge in {max_iter} pivots")))
}

fn finish(basis: &[usize], x: &[f64]) -> SparseRow {
    let mut row: SparseRow =
        basis.iter().zip(x).filter(|(_, &w)| w > 1e-15).map(|(&k, &w)| (k as u32, w)).collect();
    let s: f64 = row.iter().map(|e| e.1).sum();
    row.iter_mut().for_each(|e| e.1 /= s);
    row.sort_by_key(|e| e.0);
    row
}

pub fn project(b: &[f64], grid: &GridSet) -> Result<SparseRow> {
    project_with(b, grid, ProjectionStrategy::L1)
}

/// Value of the projection objective for a given row.
pub fn projection_cost(row: &SparseRow, b: &[f64], grid: &GridSet, strategy: ProjectionStrategy) -> f64 {
    row.iter().map(|&(k, w)| w * strategy.cost(&grid.points[k as usize], b)).sum()
}

/// Grid point with the largest weight, ties to the lowest index.
pub fn dominant(row: &SparseRow) -> usize {
    let mut best = (0u32, f64::NEG_INFINITY);
    for &(k, w) in row {
        if w > best.1 {
            best = (k, w);
        }
    }
    best.0 as usize
}

/// Weights of the continuation image of every grid point under every
/// `(t, a, theta)`, together with the probability of that continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTables {
    pub horizon: usize,
    pub n_actions: usize,
    pub n_grid: usize,
    rows: Vec<Option<SparseRow>>,
    mass: Vec<f64>,
}

impl BetaTables {
    fn idx(&self, t: usize, a: usize, theta: usize, k: usize) -> usize {
        ((t * self.n_actions + a) * 2 + theta) * self.n_grid + k
    }

    /// `None` when the continuation has zero probability.
    pub fn row(&self, t: usize, a: usize, theta: usize, k: usize) -> Option<&SparseRow> {
        self.rows[self.idx(t, a, theta, k)].as_ref()
    }

    pub fn mass(&self, t: usize, a: usize, theta: usize, k: usize) -> f64 {
        self.mass[self.idx(t, a, theta, k)]
    }
}

fn threads_for(requested: usize, work: usize) -> usize {
    requested.max(1).min(work.max(1))
}

/// Projects `model.continuation(g_k, t, a, theta)` for every cell.
pub fn build_beta_tables(model: &Model, grid: &GridSet, strategy: ProjectionStrategy, threads: usize) -> Result<BetaTables> {
    let (horizon, na, ng) = (model.horizon(), model.n_actions(), grid.len());
    let per_t = na * 2 * ng;
    let epoch = |t: usize| -> Result<(Vec<Option<SparseRow>>, Vec<f64>)> {
        let mut rows = Vec::with_capacity(per_t);
        let mut mass = Vec::with_capacity(per_t);
        let mut memo: HashMap<Vec<u64>, SparseRow> = HashMap::new();
        for a in 0..na {
            for theta in 0..2 {
                for g in &grid.points {
                    match model.continuation(g, t, a, theta) {
                        Some((w, img)) => {
                            let key: Vec<u64> = img.iter().map(|x| x.to_bits()).collect();
                            let row = match memo.get(&key) {
                                Some(r) => r.clone(),
                                None => {
                                    let r = project_with(&img, grid, strategy)?;
                                    memo.insert(key, r.clone());
                                    r
                                }
                            };
                            rows.push(Some(row));
                            mass.push(w);
                        }
                        None => {
                            rows.push(None);
                            mass.push(0.0);
                        }
                    }
                }
            }
        }
        Ok((rows, mass))
    };
    let workers = threads_for(threads, horizon);
    let mut parts: Vec<Option<Result<(Vec<Option<SparseRow>>, Vec<f64>)>>> = (0..horizon).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = parts.chunks_mut(horizon.div_ceil(workers)).enumerate().collect();
        let chunk_len = horizon.div_ceil(workers);
        for (c, chunk) in chunks {
            let epoch = &epoch;
            s.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(epoch(c * chunk_len + off));
                }
            });
        }
    });
    let mut rows = Vec::with_capacity(horizon * per_t);
    let mut mass = Vec::with_capacity(horizon * per_t);
    for part in parts {
        let (r, m) = part.expect("every epoch computed")?;
        rows.extend(r);
        mass.extend(m);
    }
    Ok(BetaTables { horizon, n_actions: na, n_grid: ng, rows, mass })
}

/// `f[t][a][l]` = sum over observations of continuation probability times the
/// weights of the continuation image of grid point `l`.
pub fn build_f(beta: &BetaTables) -> Vec<SparseRow> {
    let mut f = Vec::with_capacity(beta.horizon * beta.n_actions * beta.n_grid);
    for t in 0..beta.horizon {
        for a in 0..beta.n_actions {
            for l in 0..beta.n_grid {
                let mut acc: SparseRow = Vec::new();
                for theta in 0..2 {
                    if let Some(row) = beta.row(t, a, theta, l) {
                        let w = beta.mass(t, a, theta, l);
                        acc.extend(row.iter().map(|&(k, b)| (k, w * b)));
                    }
                }
                acc.sort_by_key(|e| e.0);
                let mut merged: SparseRow = Vec::with_capacity(acc.len());
                for (k, v) in acc {
                    match merged.last_mut() {
                        Some(last) if last.0 == k => last.1 += v,
                        _ => merged.push((k, v)),
                    }
                }
                f.push(merged);
            }
        }
    }
    f
}

/// β tables plus the induced transition tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTables {
    pub beta: BetaTables,
    f: Vec<SparseRow>,
    pub strategy: ProjectionStrategy,
}

impl ProjectionTables {
    pub fn build(model: &Model, grid: &GridSet, strategy: ProjectionStrategy, threads: usize) -> Result<Self> {
        let beta = build_beta_tables(model, grid, strategy, threads)?;
        let f = build_f(&beta);
        Ok(Self { beta, f, strategy })
    }

    pub fn horizon(&self) -> usize {
        self.beta.horizon
    }

    pub fn n_grid(&self) -> usize {
        self.beta.n_grid
    }

    pub fn n_actions(&self) -> usize {
        self.beta.n_actions
    }

    pub fn f_row(&self, t: usize, a: usize, l: usize) -> &SparseRow {
        &self.f[(t * self.beta.n_actions + a) * self.beta.n_grid + l]
    }

    /// Mass leaving the process (diagnosis or death) from `(t, l, a)`.
    pub fn exit_mass(&self, t: usize, a: usize, l: usize) -> f64 {
        1.0 - self.f_row(t, a, l).iter().map(|e| e.1).sum::<f64>()
    }

    /// Builds the tables, reusing `cache_dir/<key>.bin` when present.
    pub fn build_cached(
        model: &Model,
        grid: &GridSet,
        strategy: ProjectionStrategy,
        threads: usize,
        cache_dir: &Path,
    ) -> Result<Self> {
        let key = cache_key(model, grid, strategy);
        let path = cache_dir.join(format!("{key}.bin"));
        if path.exists() {
            if let Ok(t) = read_cache(&path, &key) {
                log::debug!("projection tables loaded from {}", path.display());
                return Ok(t);
            }
            log::warn!("ignoring unreadable table cache {}", path.display());
        }
        let t = Self::build(model, grid, strategy, threads)?;
        std::fs::create_dir_all(cache_dir)?;
        write_cache(&t, &path, &key)?;
        Ok(t)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"CPOMDPPT";
const CACHE_VERSION: u32 = 1;

/// Content hash of everything the tables depend on.
pub fn cache_key(model: &Model, grid: &GridSet, strategy: ProjectionStrategy) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(serde_json::to_vec(model.spec()).expect("model serializes"));
    h.update(format!("{strategy:?}"));
    for p in &grid.points {
        for x in p {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn write_cache(t: &ProjectionTables, path: &Path, key: &str) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    for v in [t.beta.horizon, t.beta.n_actions, t.beta.n_grid] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.push(match t.strategy {
        ProjectionStrategy::L1 => 0,
        ProjectionStrategy::SquaredL2 => 1,
    });
    let put_row = |buf: &mut Vec<u8>, row: &SparseRow| {
        buf.extend_from_slice(&(row.len() as u32).to_le_bytes());
        for &(k, w) in row {
            buf.extend_from_slice(&k.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
    };
    for (row, m) in t.beta.rows.iter().zip(&t.beta.mass) {
        match row {
            Some(r) => {
                buf.push(1);
                buf.extend_from_slice(&m.to_le_bytes());
                put_row(&mut buf, r);
            }
            None => buf.push(0),
        }
    }
    for r in &t.f {
        put_row(&mut buf, r);
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or_else(|| CoreError::Cache("truncated file".into()))?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn row(&mut self) -> Result<SparseRow> {
        let len = self.u32()? as usize;
        (0..len).map(|_| Ok((self.u32()?, self.f64()?))).collect()
    }
}

pub fn read_cache(path: &Path, key: &str) -> Result<ProjectionTables> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(CoreError::Cache("bad magic".into()));
    }
    if r.u32()? != CACHE_VERSION {
        return Err(CoreError::Cache("unsupported version".into()));
    }
    if r.take(key.len())? != key.as_bytes() {
        return Err(CoreError::Cache("key mismatch".into()));
    }
    let (horizon, na, ng) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    let strategy = match r.u8()? {
        0 => ProjectionStrategy::L1,
        1 => ProjectionStrategy::SquaredL2,
        _ => return Err(CoreError::Cache("unknown strategy".into())),
    };
    let cells = horizon * na * 2 * ng;
    let mut rows = Vec::with_capacity(cells);
    let mut mass = Vec::with_capacity(cells);
    for _ in 0..cells {
        if r.u8()? == 1 {
            mass.push(r.f64()?);
            rows.push(Some(r.row()?));
        } else {
            mass.push(0.0);
            rows.push(None);
        }
    }
    let f = (0..horizon * na * ng).map(|_| r.row()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(CoreError::Cache("trailing bytes".into()));
    }
    Ok(ProjectionTables { beta: BetaTables { horizon, n_actions: na, n_grid: ng, rows, mass }, f, strategy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::{build_fixed, build_variable};
    use crate::model::{NEG, POS, WAIT};
    use proptest::prelude::*;

    fn reconstruct(row: &SparseRow, grid: &GridSet) -> Vec<f64> {
        let mut out = vec![0.0; grid.n_states()];
        for &(k, w) in row {
            for (o, g) in out.iter_mut().zip(&grid.points[k as usize]) {
                *o += w * g;
            }
        }
        out
    }

    #[test]
    fn grid_point_projects_to_itself() {
        let g = build_fixed(4, 3).unwrap();
        for (k, p) in g.points.iter().enumerate() {
            assert_eq!(project(p, &g).unwrap(), vec![(k as u32, 1.0)]);
        }
    }

    #[test]
    fn midpoint_example() {
        let g = build_fixed(2, 3).unwrap();
        let row = project(&[0.75, 0.25, 0.0], &g).unwrap();
        assert_eq!(row.len(), 2);
        assert_eq!(row[0].0, 0);
        assert_eq!(row[1].0, 1);
        assert!((row[0].1 - 0.5).abs() < 1e-12 && (row[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_vertex_is_a_span_error() {
        let g = GridSet::custom(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5]]).unwrap();
        assert!(matches!(project(&[0.2, 0.3, 0.5], &g), Err(CoreError::Span(_))));
    }

    #[test]
    fn squared_strategy_also_reconstructs() {
        let g = build_fixed(3, 3).unwrap();
        let b = [0.41, 0.33, 0.26];
        let row = project_with(&b, &g, ProjectionStrategy::SquaredL2).unwrap();
        for (x, y) in reconstruct(&row, &g).iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_dynamics_rows_stay_put() {
        let p = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
        ];
        let m = Model::new(fixtures::stationary(2, vec![p.clone(), p], vec![0.5; 2], vec![0.5; 2])).unwrap();
        let g = build_fixed(3, 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        for k in 0..g.len() {
            for theta in 0..2 {
                let row = t.beta.row(1, WAIT, theta, k).unwrap();
                assert_eq!(dominant(row), k);
                assert!(row.iter().find(|e| e.0 as usize == k).unwrap().1 > 1.0 - 1e-9);
            }
            assert!((t.f_row(0, WAIT, k).iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // The healthy vertex under a perfect test with absorbing health stays put.
        let mut s = fixtures::stationary(1, vec![vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]; 3]; 2], vec![1.0; 2], vec![1.0; 2]);
        for a in 0..2 {
            s.transition[0][a][1] = vec![0.0, 1.0, 0.0, 0.0, 0.0];
            s.transition[0][a][2] = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        }
        let m = Model::new(s).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        assert_eq!(t.f_row(0, 1, 0), &vec![(0, 1.0)]);
    }

    #[test]
    fn screening_rows_lose_the_detected_mass() {
        // No death, so the only deficit is true-positive exits.
        let p = vec![
            vec![0.9, 0.06, 0.04, 0.0, 0.0],
            vec![0.0, 0.8, 0.2, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
        ];
        let m = Model::new(fixtures::stationary(1, vec![p.clone(), p], vec![0.1, 0.85], vec![0.99, 0.9])).unwrap();
        let g = build_fixed(4, 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        for (l, b) in g.points.iter().enumerate() {
            let deficit = (b[1] + b[2]) * 0.85;
            assert!((t.exit_mass(0, 1, l) - deficit).abs() < 1e-12);
            assert!(t.exit_mass(0, WAIT, l).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_round_trip() {
        let m = fixtures::default_model();
        let g = build_variable(&[20, 5], &[0.8, 0.0], 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("cpomdp-cache-{}", std::process::id()));
        let t2 = ProjectionTables::build_cached(&m, &g, ProjectionStrategy::L1, 1, &dir).unwrap();
        assert_eq!(t, t2);
        let t3 = ProjectionTables::build_cached(&m, &g, ProjectionStrategy::L1, 1, &dir).unwrap();
        assert_eq!(t, t3);
        let key = cache_key(&m, &g, ProjectionStrategy::L1);
        assert!(read_cache(&dir.join(format!("{key}.bin")), &"0".repeat(64)).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn thread_count_does_not_change_tables() {
        let m = fixtures::default_model();
        let g = build_variable(&[10, 5], &[0.8, 0.0], 3).unwrap();
        let a = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        let b = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_rows_reconstruct_their_images() {
        let m = fixtures::default_model();
        let g = build_variable(&[100, 25, 5], &[0.96, 0.8, 0.0], 3).unwrap();
        let t = ProjectionTables::build(&m, &g, ProjectionStrategy::L1, 1).unwrap();
        for tt in [0, 29, 59] {
            for a in 0..4 {
                for theta in [NEG, POS] {
                    for k in (0..g.len()).step_by(5) {
                        let Some(row) = t.beta.row(tt, a, theta, k) else { continue };
                        let (_, img) = m.continuation(&g.points[k], tt, a, theta).unwrap();
                        for (x, y) in reconstruct(row, &g).iter().zip(&img) {
                            assert!((x - y).abs() < 1e-8);
                        }
                        assert!(row.iter().all(|e| e.1 >= 0.0));
                        assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                    for l in 0..g.len() {
                        assert!(t.f_row(tt, a, l).iter().all(|e| e.1 >= 0.0));
                    }
                }
            }
        }
    }

    fn simplex_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 3).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn reconstruction_and_sparsity(b in simplex_point(), rho in 1u64..12) {
            let g = build_fixed(rho, 3).unwrap();
            let row = project(&b, &g).unwrap();
            prop_assert!(row.len() <= 3);
            for (x, y) in reconstruct(&row, &g).iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn refinement_never_increases_cost(b in simplex_point(), rho in 1u64..8) {
            let coarse = build_fixed(rho, 3).unwrap();
            let fine = build_fixed(2 * rho, 3).unwrap();
            let c1 = projection_cost(&project(&b, &coarse).unwrap(), &b, &coarse, ProjectionStrategy::L1);
            let c2 = projection_cost(&project(&b, &fine).unwrap(), &b, &fine, ProjectionStrategy::L1);
            prop_assert!(c2 <= c1 + 1e-9);
        }
    }
}
