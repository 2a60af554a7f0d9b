//! Exact chain functionals on an enumerated state space: transition
//! operators, spectral gap, mixing time, entropy, Dirichlet form, log-Sobolev
//! upper bounds and the block entropy sum of the component dynamics.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glauber::{component_of, site_conditional};
use crate::rng::stream_rng;
use crate::spin_model::{SpinKernel, State};
use crate::tree_config::{enumerate_with, Boundary, Configuration, Enumeration, TreeShape};

/// Below this many states the spectrum is computed densely.
pub const DENSE_LIMIT: usize = 1500;
/// Mixing times scan every start state up to this size.
pub const ALL_STARTS_LIMIT: usize = 10_000;
/// Convergence checks power every point mass up to this size.
pub const CONVERGE_ALL_LIMIT: usize = 1_000;
/// Detailed-balance tolerance.
pub const BALANCE_TOL: f64 = 1e-12;

/// `Omega` under a boundary, with the Gibbs law `mu`.
#[derive(Clone, Debug)]
pub struct StateSpace {
    pub shape: TreeShape,
    pub kernel: SpinKernel,
    pub boundary: Boundary,
    pub omega: Enumeration,
}

impl StateSpace {
    pub fn new(shape: &TreeShape, kernel: &SpinKernel, boundary: &Boundary, guard: usize) -> Result<Self> {
        let omega = enumerate_with(shape, kernel, boundary, guard)?;
        Ok(Self {
            shape: shape.clone(),
            kernel: kernel.clone(),
            boundary: boundary.clone(),
            omega,
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        self.omega.weights()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Glauber,
    Component { block_size: usize },
}

impl Dynamics {
    pub fn label(&self) -> String {
        match self {
            Dynamics::Glauber => "glauber".into(),
            Dynamics::Component { block_size } => format!("component(l={block_size})"),
        }
    }
}

/// Row-compressed sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let mut m = Csr { row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() };
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.cols.push(j);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }
}

/// `P_x` of the component dynamics: configurations are grouped into the
/// components of `B_{x,l}`, and a move redraws within the group from the
/// restricted law.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    pub class_of: Vec<u32>,
    /// Members of each class, as state indices.
    pub members: Vec<Vec<u32>>,
    /// Restricted law of each member within its class.
    pub weight: Vec<f64>,
}

/// A row-stochastic operator on `Omega`.
#[derive(Clone, Debug, PartialEq)]
pub enum TransitionMatrix {
    Sparse(Csr),
    /// `P = (1/n) sum_x P_x`, kept implicit because a block move can connect
    /// a configuration to a large part of `Omega`.
    Blocks { size: usize, parts: Vec<BlockPartition> },
}

impl TransitionMatrix {
    pub fn len(&self) -> usize {
        match self {
            TransitionMatrix::Sparse(m) => m.row_ptr.len() - 1,
            TransitionMatrix::Blocks { size, .. } => *size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distribution after one step: `v P`.
    pub fn step_left(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        match self {
            TransitionMatrix::Sparse(m) => {
                for (i, &vi) in v.iter().enumerate() {
                    if vi != 0.0 {
                        for (j, p) in m.row(i) {
                            out[j] += vi * p;
                        }
                    }
                }
            }
            TransitionMatrix::Blocks { parts, .. } => {
                let scale = 1.0 / parts.len() as f64;
                for part in parts {
                    for members in &part.members {
                        let mass: f64 = members.iter().map(|&i| v[i as usize]).sum();
                        if mass != 0.0 {
                            for &j in members {
                                out[j as usize] += scale * mass * part.weight[j as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `P f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match self {
            TransitionMatrix::Sparse(m) => (0..self.len())
                .map(|i| m.row(i).map(|(j, p)| p * f[j]).sum())
                .collect(),
            TransitionMatrix::Blocks { parts, .. } => {
                let mut out = vec![0.0; self.len()];
                let scale = 1.0 / parts.len() as f64;
                for part in parts {
                    for members in &part.members {
                        let avg: f64 = members.iter().map(|&j| part.weight[j as usize] * f[j as usize]).sum();
                        for &i in members {
                            out[i as usize] += scale * avg;
                        }
                    }
                }
                out
            }
        }
    }

    /// Largest `|sum_j P_ij - 1|`.
    pub fn row_sum_error(&self) -> f64 {
        let ones = vec![1.0; self.len()];
        self.apply(&ones).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest `|mu_i P_ij - mu_j P_ji|`. For block operators classes above
    /// 4096 members are bounded by `max mu^2 * spread(w / mu)` instead of
    /// scanning every pair; the bound dominates the true residual.
    pub fn balance_residual(&self, mu: &[f64]) -> f64 {
        match self {
            TransitionMatrix::Sparse(m) => {
                let mut worst: f64 = 0.0;
                for i in 0..self.len() {
                    for (j, p) in m.row(i) {
                        worst = worst.max((mu[i] * p - mu[j] * m.get(j, i)).abs());
                    }
                }
                worst
            }
            TransitionMatrix::Blocks { parts, .. } => {
                let scale = 1.0 / parts.len() as f64;
                let mut worst: f64 = 0.0;
                for part in parts {
                    for members in &part.members {
                        if members.len() <= 4096 {
                            for &i in members {
                                for &j in members {
                                    let (i, j) = (i as usize, j as usize);
                                    let a = mu[i] * part.weight[j];
                                    let b = mu[j] * part.weight[i];
                                    worst = worst.max(scale * (a - b).abs());
                                }
                            }
                        } else {
                            let (mut lo, mut hi, mut top) = (f64::INFINITY, 0.0f64, 0.0f64);
                            for &i in members {
                                let r = part.weight[i as usize] / mu[i as usize];
                                lo = lo.min(r);
                                hi = hi.max(r);
                                top = top.max(mu[i as usize]);
                            }
                            worst = worst.max(scale * top * top * (hi - lo));
                        }
                    }
                }
                worst
            }
        }
    }

    /// Dense copy, for small instances.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.step_left(&e)
            })
            .collect()
    }
}

/// Glauber: uniform unfrozen vertex, heat-bath update. Built from the local
/// conditionals only, so it does not consult `mu`.
fn glauber_matrix(space: &StateSpace) -> Result<Csr> {
    let shape = &space.shape;
    let kernel = &space.kernel;
    let free: Vec<usize> = (0..shape.n()).filter(|&v| !space.boundary.is_frozen(v)).collect();
    let mut m = Csr { row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() };
    let mut buf: Vec<State> = Vec::new();
    let mut row: Vec<(usize, f64)> = Vec::new();
    for i in 0..space.len() {
        buf.clear();
        buf.extend_from_slice(space.omega.config(i));
        row.clear();
        let mut diag = 0.0;
        if free.is_empty() {
            diag = 1.0;
        }
        for &v in &free {
            let cond = site_conditional(shape, kernel, space.boundary.parent_of_root(), &buf, v);
            let cur = buf[v];
            for (s, &p) in cond.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let p = p / free.len() as f64;
                if s as State == cur {
                    diag += p;
                } else {
                    buf[v] = s as State;
                    let j = space.omega.index_of(&buf).ok_or_else(|| {
                        Error::InconsistentBoundary("a Glauber move left the enumerated space".into())
                    })?;
                    row.push((j, p));
                    buf[v] = cur;
                }
            }
        }
        row.push((i, diag));
        row.sort_by_key(|e| e.0);
        for &(j, p) in row.iter() {
            m.cols.push(j);
            m.vals.push(p);
        }
        m.row_ptr.push(m.cols.len());
    }
    Ok(m)
}

/// The component partition for one block root `x`.
pub fn block_partition(space: &StateSpace, x: usize, l: usize, guard: usize) -> Result<BlockPartition> {
    let n = space.len();
    let mut class_of = vec![u32::MAX; n];
    let mut members = Vec::new();
    let mut weight = vec![0.0; n];
    let mut buf: Vec<State> = Vec::new();
    for i in 0..n {
        if class_of[i] != u32::MAX {
            continue;
        }
        let start = Configuration::new(space.omega.config(i).to_vec());
        let comp = component_of(&start, &space.shape, &space.kernel, &space.boundary, x, l, guard)?;
        let cid = members.len() as u32;
        let mut list = Vec::with_capacity(comp.len());
        buf.clear();
        buf.extend_from_slice(&start.states);
        for m in 0..comp.len() {
            comp.apply(m, &mut buf);
            let j = space
                .omega
                .index_of(&buf)
                .ok_or_else(|| Error::InconsistentBoundary("component member missing from the enumeration".into()))?;
            class_of[j] = cid;
            weight[j] = comp.weights[m];
            list.push(j as u32);
        }
        members.push(list);
    }
    Ok(BlockPartition { class_of, members, weight })
}

pub fn transition_matrix(space: &StateSpace, dynamics: Dynamics, guard: usize) -> Result<TransitionMatrix> {
    if space.len() > guard {
        return Err(Error::too_large("transition matrix", space.len() as f64, guard));
    }
    match dynamics {
        Dynamics::Glauber => Ok(TransitionMatrix::Sparse(glauber_matrix(space)?)),
        Dynamics::Component { block_size } => {
            let parts = (0..space.shape.n())
                .map(|x| block_partition(space, x, block_size, guard))
                .collect::<Result<Vec<_>>>()?;
            Ok(TransitionMatrix::Blocks { size: space.len(), parts })
        }
    }
}

/// Powers start distributions until all are within `tol` of `mu`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Convergence {
    pub steps: usize,
    pub max_tv: f64,
    pub starts: usize,
    pub converged: bool,
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn converge_from(
    p: &TransitionMatrix,
    mu: &[f64],
    starts: &[usize],
    tol: f64,
    max_steps: usize,
) -> Convergence {
    let mut dists: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| {
            let mut v = vec![0.0; p.len()];
            v[s] = 1.0;
            v
        })
        .collect();
    let mut steps = 0;
    loop {
        let max_tv = dists.iter().map(|d| tv(d, mu)).fold(0.0, f64::max);
        if max_tv < tol || steps >= max_steps {
            return Convergence { steps, max_tv, starts: starts.len(), converged: max_tv < tol };
        }
        dists = dists.par_iter().map(|d| p.step_left(d)).collect();
        steps += 1;
    }
}

/// A declared start set for large spaces: the least likely configurations
/// plus the lexicographic extremes.
pub fn extremal_starts(mu: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    idx.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(a.cmp(&b)));
    let mut out: Vec<usize> = idx.into_iter().take(count).collect();
    out.push(0);
    out.push(mu.len() - 1);
    out.sort_unstable();
    out.dedup();
    out
}

/// `1 - lambda_2` of the symmetrized operator `D^{1/2} P D^{-1/2}`.
pub fn spectral_gap(p: &TransitionMatrix, mu: &[f64]) -> Result<f64> {
    let residual = p.balance_residual(mu);
    if residual > BALANCE_TOL {
        return Err(Error::NotReversible { residual });
    }
    let n = p.len();
    if n <= 1 {
        return Ok(1.0);
    }
    let sq: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let lambda2 = if n <= DENSE_LIMIT {
        let eig = dense_spectrum(p, &sq);
        eig[1]
    } else {
        let matvec = |y: &[f64]| -> Vec<f64> {
            let f: Vec<f64> = y.iter().zip(&sq).map(|(a, b)| a / b).collect();
            p.apply(&f).iter().zip(&sq).map(|(a, b)| a * b).collect()
        };
        lanczos_second(matvec, &sq, 1e-10)?
    };
    Ok((1.0 - lambda2).clamp(0.0, 2.0))
}

/// Eigenvalues of the symmetrized operator, descending.
fn dense_spectrum(p: &TransitionMatrix, sq: &[f64]) -> Vec<f64> {
    let n = p.len();
    let dense = p.to_dense();
    let s = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (sq[i] * dense[i][j] / sq[j] + sq[j] * dense[j][i] / sq[i])
    });
    let mut eig: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Starts for a convergence check: all states on small spaces, otherwise
/// [`extremal_starts`].
pub fn convergence_starts(mu: &[f64]) -> Vec<usize> {
    if mu.len() <= CONVERGE_ALL_LIMIT {
        (0..mu.len()).collect()
    } else {
        extremal_starts(mu, 6)
    }
}

/// `(lambda_2, lambda_min)` of the symmetrized operator.
pub fn extreme_eigenvalues(p: &TransitionMatrix, mu: &[f64]) -> Result<(f64, f64)> {
    let residual = p.balance_residual(mu);
    if residual > BALANCE_TOL {
        return Err(Error::NotReversible { residual });
    }
    let n = p.len();
    if n <= 1 {
        return Ok((0.0, 0.0));
    }
    let sq: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let matvec = |y: &[f64]| -> Vec<f64> {
        let f: Vec<f64> = y.iter().zip(&sq).map(|(a, b)| a / b).collect();
        p.apply(&f).iter().zip(&sq).map(|(a, b)| a * b).collect()
    };
    if n <= DENSE_LIMIT {
        let eig = dense_spectrum(p, &sq);
        return Ok((eig[1], eig[n - 1]));
    }
    let l2 = lanczos_second(&matvec, &sq, 1e-10)?;
    // lambda_min is the top of -S; the top eigenvector of S has eigenvalue 1
    // and is deflated either way
    let neg = |y: &[f64]| -> Vec<f64> { matvec(y).into_iter().map(|v| -v).collect() };
    let lmin = -lanczos_second(neg, &sq, 1e-10)?;
    Ok((l2, lmin))
}

/// Bound on `max_sigma d_TV(P^t(sigma, .), mu)` from the spectrum:
/// `(1/2) sqrt((1 - mu_min) / mu_min) lambda_*^t` with
/// `lambda_* = max(lambda_2, |lambda_min|)`. Holds for every start.
pub fn spectral_tv_bound(lambda_star: f64, mu: &[f64], t: usize) -> f64 {
    let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    0.5 * ((1.0 - mu_min) / mu_min).sqrt() * lambda_star.powi(t as i32)
}

/// Largest eigenvalue of a symmetric operator on the complement of the unit
/// vector `top`, by Lanczos with full reorthogonalization. Stops once the
/// residual norm of the leading Ritz pair is below `tol`.
fn lanczos_second(s: impl Fn(&[f64]) -> Vec<f64>, top: &[f64], tol: f64) -> Result<f64> {
    let n = top.len();
    let max_iter = (n - 1).min(400);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let orth = |w: &mut Vec<f64>, q: &[f64]| {
        let c = dot(w, q);
        w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
    };
    let mut rng = stream_rng(0x1a2c05, 0);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    orth(&mut q, top);
    let norm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= norm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut best = f64::NAN;
    for m in 0..max_iter {
        let mut w = s(&basis[m]);
        alpha.push(dot(&w, &basis[m]));
        for _ in 0..2 {
            orth(&mut w, top);
            for b in &basis {
                orth(&mut w, b);
            }
        }
        let b = dot(&w, &w).sqrt();
        beta.push(b);
        let size = m + 1;
        if size % 10 == 0 || b < 1e-14 || size == max_iter {
            let t = DMatrix::from_fn(size, size, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (imax, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            best = theta;
            let resid = (b * eig.eigenvectors[(size - 1, imax)]).abs();
            if resid < tol || b < 1e-14 {
                return Ok(best);
            }
        }
        if b < 1e-14 {
            break;
        }
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    if best.is_nan() {
        return Err(Error::NonErgodicChain { gap: 0.0 });
    }
    Ok(best)
}

/// Result of a mixing-time computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingTime {
    pub t_mix: usize,
    /// True when only a declared start set was scanned.
    pub lower_bound: bool,
    pub starts: usize,
}

/// Least `t` with `max_sigma d_TV(P^t(sigma, .), mu) <= threshold`.
pub fn mixing_time_exact(p: &TransitionMatrix, mu: &[f64], threshold: f64, max_steps: usize) -> Result<MixingTime> {
    let n = p.len();
    let (starts, lower_bound) = if n <= ALL_STARTS_LIMIT {
        ((0..n).collect::<Vec<_>>(), false)
    } else {
        (extremal_starts(mu, 16), true)
    };
    let times: Vec<Option<usize>> = starts
        .par_iter()
        .map(|&s| {
            let mut v = vec![0.0; n];
            v[s] = 1.0;
            for t in 0..=max_steps {
                if tv(&v, mu) <= threshold {
                    return Some(t);
                }
                let next = p.step_left(&v);
                if next == v {
                    return None;
                }
                v = next;
            }
            None
        })
        .collect();
    let mut worst = 0;
    for t in times {
        match t {
            Some(t) => worst = worst.max(t),
            None => return Err(Error::NonErgodicChain { gap: 0.0 }),
        }
    }
    Ok(MixingTime { t_mix: worst, lower_bound, starts: starts.len() })
}

/// `Ent f = mu(f log f) - mu(f) log mu(f)` with `0 log 0 = 0`.
pub fn entropy(f: &[f64], mu: &[f64]) -> Result<f64> {
    if let Some(i) = f.iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeFunction { index: i });
    }
    let mean: f64 = f.iter().zip(mu).map(|(a, b)| a * b).sum();
    if mean == 0.0 {
        return Ok(0.0);
    }
    // sum of mu * mean * phi(f / mean) with phi(x) = x ln x - x + 1 >= 0, so
    // no cancellation when f is close to constant
    let ent: f64 = f.iter().zip(mu).map(|(&a, &m)| m * mean * phi(a / mean)).sum();
    Ok(ent)
}

fn phi(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let u = x - 1.0;
    if u.abs() < 1e-3 {
        // u^2/2 - u^3/6 + u^4/12 - u^5/20
        u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 12.0 - u / 20.0)))
    } else {
        x * x.ln() - u
    }
}

/// `D(f) = (1/2) sum mu(s) P(s,s') (f(s) - f(s'))^2`.
pub fn dirichlet_form(f: &[f64], p: &TransitionMatrix, mu: &[f64]) -> f64 {
    match p {
        TransitionMatrix::Sparse(m) => {
            let mut d = 0.0;
            for i in 0..p.len() {
                for (j, pij) in m.row(i) {
                    d += mu[i] * pij * (f[i] - f[j]).powi(2);
                }
            }
            0.5 * d
        }
        TransitionMatrix::Blocks { parts, .. } => {
            // each class contributes mu(class) * Var_w(f)
            let scale = 1.0 / parts.len() as f64;
            let mut d = 0.0;
            for part in parts {
                for members in &part.members {
                    let mass: f64 = members.iter().map(|&i| mu[i as usize]).sum();
                    let mean: f64 = members.iter().map(|&i| part.weight[i as usize] * f[i as usize]).sum();
                    let var: f64 = members
                        .iter()
                        .map(|&i| part.weight[i as usize] * (f[i as usize] - mean).powi(2))
                        .sum();
                    d += mass * var;
                }
            }
            scale * d
        }
    }
}

/// Gradient of `g -> D(g) / Ent(g^2)` for the polishing steps.
fn ls_ratio_and_gradient(g: &[f64], p: &TransitionMatrix, mu: &[f64]) -> Option<(f64, Vec<f64>)> {
    let f: Vec<f64> = g.iter().map(|x| x * x).collect();
    let ent = entropy(&f, mu).ok()?;
    if ent <= 1e-12 {
        return None;
    }
    let d = dirichlet_form(g, p, mu);
    // dD/dg_i = 2 mu_i (g_i - (P g)_i)
    let pg = p.apply(g);
    let mean: f64 = f.iter().zip(mu).map(|(a, b)| a * b).sum();
    let grad = (0..g.len())
        .map(|i| {
            let dd = 2.0 * mu[i] * (g[i] - pg[i]);
            let de = if g[i] == 0.0 { 0.0 } else { 2.0 * mu[i] * g[i] * (f[i] / mean).ln() };
            (dd * ent - d * de) / (ent * ent)
        })
        .collect();
    Some((d / ent, grad))
}

/// `min D(sqrt f) / Ent f` over random trial functions, each polished by a
/// few projected gradient steps. An upper bound on the log-Sobolev constant.
/// Trial `i` uses stream `(seed, i)`, so more trials never raise the bound.
pub fn log_sobolev_upper(p: &TransitionMatrix, mu: &[f64], trials: usize, seed: u64) -> f64 {
    let n = p.len();
    let results: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let mut g: Vec<f64> = match t % 3 {
                0 => {
                    let amp = 0.05 + 3.0 * rng.random::<f64>();
                    (0..n).map(|_| (amp * (rng.random::<f64>() - 0.5)).exp()).collect()
                }
                1 => {
                    let i = rng.random_range(0..n);
                    (0..n).map(|j| if j == i { 1.0 / mu[i].sqrt() } else { 0.0 }).collect()
                }
                _ => {
                    let frac = rng.random::<f64>();
                    let h = 1.0 + 5.0 * rng.random::<f64>();
                    (0..n).map(|_| if rng.random::<f64>() < frac { h } else { 1.0 }).collect()
                }
            };
            let Some((mut q, mut grad)) = ls_ratio_and_gradient(&g, p, mu) else {
                return f64::INFINITY;
            };
            let mut step = 1.0;
            for _ in 0..25 {
                let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
                if gn == 0.0 {
                    break;
                }
                let mut improved = false;
                while step > 1e-12 {
                    let cand: Vec<f64> = g
                        .iter()
                        .zip(&grad)
                        .map(|(a, b)| (a - step * b / gn).max(0.0))
                        .collect();
                    if let Some((qc, gc)) = ls_ratio_and_gradient(&cand, p, mu) {
                        if qc < q {
                            g = cand;
                            q = qc;
                            grad = gc;
                            step *= 2.0;
                            improved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            q
        })
        .collect();
    let best = results.into_iter().fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// `E*_l(f) = sum_x mu(Ent^{*,sigma}_{B_{x,l}} f)`, read off the block
/// partitions of the component dynamics.
pub fn block_entropy_sum(f: &[f64], p: &TransitionMatrix, mu: &[f64]) -> Result<f64> {
    if let Some(i) = f.iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeFunction { index: i });
    }
    let TransitionMatrix::Blocks { parts, .. } = p else {
        return Err(Error::InvalidParams("block entropy needs the component dynamics".into()));
    };
    let mut total = 0.0;
    for part in parts {
        for members in &part.members {
            let mass: f64 = members.iter().map(|&i| mu[i as usize]).sum();
            let fs: Vec<f64> = members.iter().map(|&i| f[i as usize]).collect();
            let ws: Vec<f64> = members.iter().map(|&i| part.weight[i as usize]).collect();
            total += mass * entropy(&fs, &ws)?;
        }
    }
    Ok(total)
}

/// Largest observed `Ent f / E*_l f` over random positive `f`, skipping
/// functions with `Ent f <= 1e-9`.
pub fn comparison_probe(p: &TransitionMatrix, mu: &[f64], trials: usize, seed: u64) -> Result<f64> {
    let n = p.len();
    let ratios: Vec<Result<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let amp = 0.1 + 4.0 * rng.random::<f64>();
            let f: Vec<f64> = (0..n).map(|_| (amp * (rng.random::<f64>() - 0.5)).exp()).collect();
            let ent = entropy(&f, mu)?;
            if ent <= 1e-9 {
                return Ok(None);
            }
            let e = block_entropy_sum(&f, p, mu)?;
            Ok(Some(ent / e))
        })
        .collect();
    let mut best: f64 = 0.0;
    for r in ratios {
        if let Some(v) = r? {
            best = best.max(v);
        }
    }
    Ok(best)
}

/// One row of the mixing table and the matching JSON report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingRow {
    pub n: usize,
    pub depth: usize,
    pub k: usize,
    pub d: usize,
    pub dynamics: String,
    pub gap: f64,
    pub t_mix: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalsReport {
    pub n: usize,
    pub depth: usize,
    pub k: usize,
    pub d: usize,
    pub dynamics: String,
    pub states: usize,
    pub row_sum_error: f64,
    pub balance_residual: f64,
    pub gap: f64,
    pub t_mix: usize,
    pub t_mix_lower_bound: bool,
    pub log_sobolev_upper: f64,
    pub comparison_ratio: Option<f64>,
}

impl FunctionalsReport {
    pub fn row(&self) -> MixingRow {
        MixingRow {
            n: self.n,
            depth: self.depth,
            k: self.k,
            d: self.d,
            dynamics: self.dynamics.clone(),
            gap: self.gap,
            t_mix: self.t_mix,
        }
    }
}

/// Every functional for one instance.
pub fn functionals_report(
    space: &StateSpace,
    dynamics: Dynamics,
    trials: usize,
    seed: u64,
    guard: usize,
) -> Result<FunctionalsReport> {
    let p = transition_matrix(space, dynamics, guard)?;
    let mu = space.mu();
    let gap = spectral_gap(&p, mu)?;
    let mix = mixing_time_exact(&p, mu, 1.0 / (2.0 * std::f64::consts::E), 1_000_000)?;
    let comparison_ratio = match dynamics {
        Dynamics::Component { .. } => Some(comparison_probe(&p, mu, trials, seed)?),
        Dynamics::Glauber => None,
    };
    Ok(FunctionalsReport {
        n: space.shape.n(),
        depth: space.shape.depth(),
        k: space.kernel.k(),
        d: space.shape.d(),
        dynamics: dynamics.label(),
        states: space.len(),
        row_sum_error: p.row_sum_error(),
        balance_residual: p.balance_residual(mu),
        gap,
        t_mix: mix.t_mix,
        t_mix_lower_bound: mix.lower_bound,
        log_sobolev_upper: log_sobolev_upper(&p, mu, trials, seed),
        comparison_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DEFAULT_GUARD;

    fn space(k: usize, depth: usize) -> StateSpace {
        let t = TreeShape::new(2, depth).unwrap();
        let kern = SpinKernel::coloring(k).unwrap();
        StateSpace::new(&t, &kern, &Boundary::free(&t), DEFAULT_GUARD).unwrap()
    }

    fn dense(rows: Vec<Vec<f64>>) -> TransitionMatrix {
        TransitionMatrix::Sparse(Csr::from_dense(&rows))
    }

    #[test]
    fn single_vertex_chain() {
        let s = space(3, 0);
        let p = transition_matrix(&s, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        for row in p.to_dense() {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!((spectral_gap(&p, s.mu()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mixing_time_exact(&p, s.mu(), 1.0 / (2.0 * std::f64::consts::E), 100).unwrap().t_mix, 1);
    }

    #[test]
    fn identity_chain() {
        let p = dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mu = [0.5, 0.5];
        assert!(spectral_gap(&p, &mu).unwrap().abs() < 1e-12);
        assert_eq!(mixing_time_exact(&p, &mu, 0.1, 100), Err(Error::NonErgodicChain { gap: 0.0 }));
        assert_eq!(log_sobolev_upper(&p, &mu, 20, 1), 0.0);
    }

    #[test]
    fn depth_one_glauber() {
        let s = space(3, 1);
        let p = transition_matrix(&s, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        assert_eq!(p.len(), 12);
        assert!(p.row_sum_error() < 1e-12);
        assert!(p.balance_residual(s.mu()) < 1e-12);
        let g1 = spectral_gap(&p, s.mu()).unwrap();
        let g2 = spectral_gap(&p, s.mu()).unwrap();
        assert!(g1 > 0.0 && (g1 - g2).abs() < 1e-10);
        let t1 = mixing_time_exact(&p, s.mu(), 1.0 / (2.0 * std::f64::consts::E), 1000).unwrap();
        let t2 = mixing_time_exact(&p, s.mu(), 1.0 / std::f64::consts::E, 1000).unwrap();
        assert!(t2.t_mix <= t1.t_mix && !t1.lower_bound);
    }

    #[test]
    fn component_dynamics_root_block_mixes_in_one_move() {
        let s = space(3, 2);
        let part = block_partition(&s, 0, 2, DEFAULT_GUARD).unwrap();
        assert_eq!(part.members.len(), 1);
        for (w, m) in part.weight.iter().zip(s.mu()) {
            assert!((w - m).abs() < 1e-12);
        }
        let p = transition_matrix(&s, Dynamics::Component { block_size: 2 }, DEFAULT_GUARD).unwrap();
        assert!(p.row_sum_error() < 1e-12);
        assert!(p.balance_residual(s.mu()) < 1e-12);
        let back = p.step_left(s.mu());
        assert!(tv(&back, s.mu()) < 1e-14);
    }

    #[test]
    fn component_dynamics_depth_one_is_reversible() {
        let s = space(3, 1);
        let p = transition_matrix(&s, Dynamics::Component { block_size: 1 }, DEFAULT_GUARD).unwrap();
        assert!(p.balance_residual(s.mu()) < 1e-12);
        let dense_rows = p.to_dense();
        for i in 0..12 {
            for j in 0..12 {
                assert!((s.mu()[i] * dense_rows[i][j] - s.mu()[j] * dense_rows[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let s = space(4, 2);
        let p = transition_matrix(&s, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        let gap = spectral_gap(&p, s.mu()).unwrap();
        let sq: Vec<f64> = s.mu().iter().map(|m| m.sqrt()).collect();
        let matvec = |y: &[f64]| -> Vec<f64> {
            let f: Vec<f64> = y.iter().zip(&sq).map(|(a, b)| a / b).collect();
            p.apply(&f).iter().zip(&sq).map(|(a, b)| a * b).collect()
        };
        let lanczos = 1.0 - lanczos_second(matvec, &sq, 1e-10).unwrap();
        assert!((gap - lanczos).abs() < 1e-9, "{gap} vs {lanczos}");
        let small = space(3, 2);
        let p = transition_matrix(&small, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        let sq: Vec<f64> = small.mu().iter().map(|m| m.sqrt()).collect();
        let matvec = |y: &[f64]| -> Vec<f64> {
            let f: Vec<f64> = y.iter().zip(&sq).map(|(a, b)| a / b).collect();
            p.apply(&f).iter().zip(&sq).map(|(a, b)| a * b).collect()
        };
        let lanczos = 1.0 - lanczos_second(matvec, &sq, 1e-10).unwrap();
        assert!((spectral_gap(&p, small.mu()).unwrap() - lanczos).abs() < 1e-9);
    }

    #[test]
    fn extreme_eigenvalues_and_certificate() {
        let flip = dense(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (l2, lmin) = extreme_eigenvalues(&flip, &[0.5, 0.5]).unwrap();
        assert!(l2.abs() < 1e-12 || (l2 + 1.0).abs() < 1e-12);
        assert!((lmin + 1.0).abs() < 1e-12);
        let s = space(4, 2);
        let p = transition_matrix(&s, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        let (l2, lmin) = extreme_eigenvalues(&p, s.mu()).unwrap();
        assert!((1.0 - l2 - spectral_gap(&p, s.mu()).unwrap()).abs() < 1e-12);
        // Glauber is a mixture of heat-bath projections, hence positive semidefinite
        assert!(lmin > -1e-9 && lmin < l2);
        let lstar = l2.max(lmin.abs());
        let c = converge_from(&p, s.mu(), &convergence_starts(s.mu()), 1e-8, 10_000);
        assert!(c.converged);
        // the certificate covers the declared starts too
        assert!(spectral_tv_bound(lstar, s.mu(), c.steps) >= c.max_tv);
    }

    #[test]
    fn entropy_and_dirichlet_examples() {
        let flip = dense(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let mu = [0.5, 0.5];
        let f = [2.0, 0.0];
        assert!((entropy(&f, &mu).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((dirichlet_form(&f, &flip, &mu) - 2.0).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 1.0], &mu).unwrap(), 0.0);
        assert_eq!(dirichlet_form(&[3.0, 3.0], &flip, &mu), 0.0);
        assert_eq!(entropy(&[1.0, -1.0], &mu), Err(Error::NegativeFunction { index: 1 }));
        let g = [0.3, 1.7];
        let e = entropy(&g, &mu).unwrap();
        assert!((entropy(&[0.9, 5.1], &mu).unwrap() - 3.0 * e).abs() < 1e-12);
    }

    #[test]
    fn two_point_log_sobolev() {
        let resample = dense(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let flip = dense(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let mu = [0.5, 0.5];
        assert!((spectral_gap(&resample, &mu).unwrap() - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for trials in [1usize, 5, 20, 80] {
            let b = log_sobolev_upper(&resample, &mu, trials, 3);
            assert!(b >= 0.5 - 1e-9, "{b}");
            assert!(b <= prev);
            prev = b;
        }
        assert!(prev < 0.55);
        assert!(log_sobolev_upper(&flip, &mu, 40, 3) >= 1.0 - 1e-9);
    }

    #[test]
    fn log_sobolev_is_stable_across_seeds() {
        let s = space(3, 1);
        let p = transition_matrix(&s, Dynamics::Glauber, DEFAULT_GUARD).unwrap();
        let a = log_sobolev_upper(&p, s.mu(), 1000, 1);
        let b = log_sobolev_upper(&p, s.mu(), 1000, 2);
        assert!(a > 0.0 && b > 0.0);
        assert!((a - b).abs() / a.max(b) < 0.05, "{a} vs {b}");
        assert!(a <= spectral_gap(&p, s.mu()).unwrap() / 2.0 + 1e-9);
    }

    #[test]
    fn block_entropy_examples() {
        let s = space(3, 2);
        let p = transition_matrix(&s, Dynamics::Component { block_size: 2 }, DEFAULT_GUARD).unwrap();
        let ones = vec![1.0; s.len()];
        assert!(block_entropy_sum(&ones, &p, s.mu()).unwrap().abs() < 1e-15);
        let mut rng = stream_rng(8, 0);
        let f: Vec<f64> = (0..s.len()).map(|_| rng.random::<f64>() + 0.1).collect();
        // the root block is the whole tree, so its term is Ent f
        let TransitionMatrix::Blocks { parts, .. } = &p else { unreachable!() };
        let root = &parts[0];
        let ent_root = entropy(&f, &root.weight).unwrap();
        assert!((ent_root - entropy(&f, s.mu()).unwrap()).abs() < 1e-12);
        let e = block_entropy_sum(&f, &p, s.mu()).unwrap();
        assert!(e >= ent_root - 1e-12);
        let ratio = comparison_probe(&p, s.mu(), 100, 4).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }

    #[test]
    fn functions_of_frozen_parts_have_no_block_entropy() {
        // with the leaves frozen, a function of the leaves is constant on every
        // component of every block
        let t = TreeShape::new(2, 2).unwrap();
        let k = SpinKernel::coloring(3).unwrap();
        let mut b = Boundary::free(&t);
        b.freeze_all(t.level_range(2), &[0, 1, 2, 2]);
        let s = StateSpace::new(&t, &k, &b, DEFAULT_GUARD).unwrap();
        let p = transition_matrix(&s, Dynamics::Component { block_size: 1 }, DEFAULT_GUARD).unwrap();
        let f: Vec<f64> = (0..s.len()).map(|i| 1.0 + s.omega.config(i)[3] as f64).collect();
        assert!(block_entropy_sum(&f, &p, s.mu()).unwrap().abs() < 1e-15);
    }
}
