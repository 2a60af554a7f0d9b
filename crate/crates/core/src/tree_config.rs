//! Complete d-ary trees, configurations on them and the exact oracles.
//!
//! Vertices are numbered in breadth-first order: the root is `0` and the
//! children of `x` are `d*x + 1 ..= d*x + d`. Every level, and the part of a
//! subtree lying on a fixed level, is therefore a contiguous range.
//!
//! The block `B_{x,l}` holds the vertices of `T_x` at relative levels
//! `0..=l`; its bottom level `L_{x,l}` sits at relative level `l`, clipped to
//! the leaves so that `B_{x,l} = T_x` whenever `x` is within `l` of them.

use std::ops::Range;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spin_model::{sample_cumulative, SpinKernel, State};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeShape {
    d: usize,
    depth: usize,
    level_start: Vec<usize>,
}

impl TreeShape {
    pub fn new(d: usize, depth: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParams("arity must be at least 1".into()));
        }
        let mut level_start = Vec::with_capacity(depth + 2);
        let mut start = 0usize;
        let mut width = 1usize;
        for _ in 0..=depth + 1 {
            level_start.push(start);
            start = start
                .checked_add(width)
                .ok_or_else(|| Error::InvalidParams("tree too large".into()))?;
            width = width.saturating_mul(d);
        }
        if level_start[depth + 1] > u32::MAX as usize {
            return Err(Error::InvalidParams("tree too large".into()));
        }
        Ok(Self { d, depth, level_start })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Vertex count `(d^{L+1} - 1) / (d - 1)`.
    pub fn n(&self) -> usize {
        self.level_start[self.depth + 1]
    }

    pub fn parent(&self, x: usize) -> Option<usize> {
        (x > 0).then(|| (x - 1) / self.d)
    }

    pub fn children(&self, x: usize) -> Range<usize> {
        if self.level(x) == self.depth {
            return 0..0;
        }
        self.d * x + 1..self.d * x + self.d + 1
    }

    pub fn level(&self, x: usize) -> usize {
        self.level_start.partition_point(|&s| s <= x) - 1
    }

    /// The level set `L_l`.
    pub fn level_range(&self, l: usize) -> Range<usize> {
        self.level_start[l]..self.level_start[l + 1]
    }

    /// Distance from `x` down to the leaves.
    pub fn height(&self, x: usize) -> usize {
        self.depth - self.level(x)
    }

    /// Descendants of `x` at relative level `j` (`j <= height(x)`).
    pub fn descendants_at(&self, x: usize, j: usize) -> Range<usize> {
        let mut first = x;
        let mut width = 1;
        for _ in 0..j {
            first = self.d * first + 1;
            width *= self.d;
        }
        first..first + width
    }

    /// Relative depth of the block `B_{x,l}` after clipping to the leaves.
    pub fn block_levels(&self, x: usize, l: usize) -> usize {
        l.min(self.height(x))
    }

    /// Vertices of `B_{x,l}` in breadth-first order.
    pub fn block(&self, x: usize, l: usize) -> Vec<usize> {
        (0..=self.block_levels(x, l))
            .flat_map(|j| self.descendants_at(x, j))
            .collect()
    }

    /// The bottom level `L_{x,l}` of the block.
    pub fn block_bottom(&self, x: usize, l: usize) -> Range<usize> {
        self.descendants_at(x, self.block_levels(x, l))
    }

    /// Vertices of `T_x`.
    pub fn subtree(&self, x: usize) -> Vec<usize> {
        self.block(x, self.height(x))
    }
}

/// A state for every vertex, in breadth-first order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub states: Vec<State>,
}

impl Configuration {
    pub fn new(states: Vec<State>) -> Self {
        Self { states }
    }

    /// Every edge carries a positive kernel entry.
    pub fn is_valid(&self, shape: &TreeShape, kernel: &SpinKernel) -> bool {
        self.states.len() == shape.n() && is_valid(shape, kernel, &self.states)
    }

    /// Space-separated 1-based states.
    pub fn to_line(&self) -> String {
        let parts: Vec<String> = self.states.iter().map(|s| (s + 1).to_string()).collect();
        parts.join(" ")
    }

    pub fn parse_line(line: &str, k: usize) -> Result<Self> {
        let states = line
            .split_whitespace()
            .map(|tok| {
                let v: usize = tok
                    .parse()
                    .map_err(|_| Error::Parse { line: 1, msg: format!("bad state {tok:?}") })?;
                if v == 0 || v > k {
                    return Err(Error::Parse { line: 1, msg: format!("state {v} outside 1..={k}") });
                }
                Ok((v - 1) as State)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states })
    }
}

pub fn is_valid(shape: &TreeShape, kernel: &SpinKernel, states: &[State]) -> bool {
    (1..shape.n()).all(|y| kernel.compatible(states[(y - 1) / shape.d()], states[y]))
}

/// A partial assignment of frozen states, plus an optional frozen neighbor
/// standing above the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Boundary {
    frozen: Vec<Option<State>>,
    parent_of_root: Option<State>,
}

impl Boundary {
    pub fn free(shape: &TreeShape) -> Self {
        Self {
            frozen: vec![None; shape.n()],
            parent_of_root: None,
        }
    }

    pub fn with_parent(mut self, s: Option<State>) -> Self {
        self.parent_of_root = s;
        self
    }

    pub fn freeze(&mut self, v: usize, s: State) {
        self.frozen[v] = Some(s);
    }

    pub fn unfreeze(&mut self, v: usize) {
        self.frozen[v] = None;
    }

    /// Freezes `vertices` to the matching entries of `states`.
    pub fn freeze_all(&mut self, vertices: Range<usize>, states: &[State]) {
        for (v, &s) in vertices.zip(states) {
            self.frozen[v] = Some(s);
        }
    }

    /// Freezes every vertex outside `keep` to its state in `config`.
    pub fn outside(shape: &TreeShape, config: &[State], keep: &[usize], parent: Option<State>) -> Self {
        let mut b = Self::free(shape).with_parent(parent);
        for v in 0..shape.n() {
            b.frozen[v] = Some(config[v]);
        }
        for &v in keep {
            b.frozen[v] = None;
        }
        b
    }

    pub fn get(&self, v: usize) -> Option<State> {
        self.frozen[v]
    }

    pub fn is_frozen(&self, v: usize) -> bool {
        self.frozen[v].is_some()
    }

    pub fn parent_of_root(&self) -> Option<State> {
        self.parent_of_root
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    /// Frozen neighbors must be compatible with each other.
    pub fn check(&self, shape: &TreeShape, kernel: &SpinKernel) -> Result<()> {
        if self.frozen.len() != shape.n() {
            return Err(Error::InconsistentBoundary("boundary size does not match the tree".into()));
        }
        for s in self.frozen.iter().flatten().chain(self.parent_of_root.iter()) {
            if *s as usize >= kernel.k() {
                return Err(Error::InconsistentBoundary(format!("state {} out of range", s + 1)));
            }
        }
        if let (Some(p), Some(r)) = (self.parent_of_root, self.frozen[0]) {
            if !kernel.compatible(p, r) {
                return Err(Error::InconsistentBoundary("root clashes with its frozen parent".into()));
            }
        }
        for y in 1..shape.n() {
            if let (Some(a), Some(b)) = (self.frozen[(y - 1) / shape.d()], self.frozen[y]) {
                if !kernel.compatible(a, b) {
                    return Err(Error::InconsistentBoundary(format!(
                        "frozen vertices {} and {} clash",
                        (y - 1) / shape.d(),
                        y
                    )));
                }
            }
        }
        Ok(())
    }

    /// `config` agrees with every frozen vertex.
    pub fn admits(&self, config: &[State]) -> bool {
        self.frozen
            .iter()
            .zip(config)
            .all(|(f, s)| f.is_none_or(|f| f == *s))
    }
}

/// One broadcast draw: root from `pi` (or forced), then each child from the
/// kernel row of its parent.
pub fn broadcast_sample<R: Rng + ?Sized>(
    shape: &TreeShape,
    kernel: &SpinKernel,
    rng: &mut R,
    root_state: Option<State>,
) -> Configuration {
    let mut states = vec![0 as State; shape.n()];
    states[0] = root_state.unwrap_or_else(|| kernel.sample_stationary(rng));
    for y in 1..shape.n() {
        states[y] = kernel.sample_next(states[(y - 1) / shape.d()], rng);
    }
    Configuration { states }
}

/// `pi(root) * prod M` over edges; with a frozen parent of the root the root
/// factor is `M(parent, root)` instead.
pub fn gibbs_weight(shape: &TreeShape, kernel: &SpinKernel, config: &Configuration) -> f64 {
    log_weight(shape, kernel, None, &config.states).map_or(0.0, f64::exp)
}

/// Natural log of the (parent-conditioned) Gibbs weight; `None` when zero.
pub fn log_weight(
    shape: &TreeShape,
    kernel: &SpinKernel,
    parent: Option<State>,
    states: &[State],
) -> Option<f64> {
    let root = match parent {
        Some(p) => kernel.entry(p, states[0]),
        None => kernel.pi()[states[0] as usize],
    };
    if root == 0.0 {
        return None;
    }
    let mut lw = root.ln();
    for y in 1..shape.n() {
        let m = kernel.entry(states[(y - 1) / shape.d()], states[y]);
        if m == 0.0 {
            return None;
        }
        lw += m.ln();
    }
    Some(lw)
}

/// Every valid configuration that agrees with a boundary, sorted
/// lexicographically, with normalized Gibbs weights.
#[derive(Clone, Debug)]
pub struct Enumeration {
    n: usize,
    states: Vec<State>,
    weights: Vec<f64>,
}

impl Enumeration {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn config(&self, i: usize) -> &[State] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index_of(&self, config: &[State]) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.config(mid).cmp(config) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[State], f64)> {
        self.states.chunks(self.n.max(1)).zip(self.weights.iter().copied())
    }
}

/// States each vertex can take given the frozen vertices of its subtree, as
/// bitmasks. Vertices outside `active` are ignored.
fn feasible_masks(shape: &TreeShape, kernel: &SpinKernel, boundary: &Boundary) -> Vec<u64> {
    let k = kernel.k();
    let full = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let mut mask = vec![full; shape.n()];
    for v in (0..shape.n()).rev() {
        let mut m = match boundary.get(v) {
            Some(s) => 1u64 << s,
            None => full,
        };
        for c in shape.children(v) {
            let cm = mask[c];
            let mut ok = 0u64;
            for s in 0..k as State {
                if m >> s & 1 == 1 && (0..k as State).any(|t| cm >> t & 1 == 1 && kernel.compatible(s, t)) {
                    ok |= 1 << s;
                }
            }
            m = ok;
        }
        mask[v] = m;
    }
    mask
}

/// Upper bound on the number of configurations the enumeration visits.
pub fn enumeration_bound(shape: &TreeShape, kernel: &SpinKernel, boundary: &Boundary) -> f64 {
    let k = kernel.k();
    let support = (0..k as State)
        .map(|a| (0..k as State).filter(|&b| kernel.compatible(a, b)).count())
        .max()
        .unwrap_or(k) as f64;
    let mut bound = 1.0;
    for v in 0..shape.n() {
        if boundary.is_frozen(v) {
            continue;
        }
        bound *= if v == 0 && boundary.parent_of_root().is_none() {
            k as f64
        } else {
            support
        };
    }
    bound
}

/// Exact enumeration of `Omega` under a boundary. The guard applies to
/// `enumeration_bound`, i.e. `k * s^{n-1}` for a free tree where `s` is the
/// largest row support of the kernel.
pub fn enumerate_with(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    guard: usize,
) -> Result<Enumeration> {
    boundary.check(shape, kernel)?;
    let bound = enumeration_bound(shape, kernel, boundary);
    if bound > guard as f64 {
        return Err(Error::too_large("enumeration", bound, guard));
    }
    let n = shape.n();
    let mask = feasible_masks(shape, kernel, boundary);
    let root_ok = match boundary.parent_of_root() {
        Some(p) => (0..kernel.k() as State).any(|s| mask[0] >> s & 1 == 1 && kernel.compatible(p, s)),
        None => mask[0] != 0,
    };
    if !root_ok {
        return Err(Error::ZeroProbabilityBoundary);
    }
    let logm: Vec<f64> = (0..kernel.k() * kernel.k())
        .map(|i| {
            let (a, b) = (i / kernel.k(), i % kernel.k());
            kernel.entry(a as State, b as State).ln()
        })
        .collect();
    let mut out = Enumeration { n, states: Vec::new(), weights: Vec::new() };
    let mut logw = Vec::new();
    let mut cur = vec![0 as State; n];
    let mut prefix = vec![0.0; n + 1];
    struct Ctx<'a> {
        shape: &'a TreeShape,
        kernel: &'a SpinKernel,
        mask: &'a [u64],
        logm: &'a [f64],
        parent: Option<State>,
    }
    fn rec(
        ctx: &Ctx,
        v: usize,
        cur: &mut Vec<State>,
        prefix: &mut Vec<f64>,
        out: &mut Enumeration,
        logw: &mut Vec<f64>,
    ) {
        if v == ctx.shape.n() {
            out.states.extend_from_slice(cur);
            logw.push(prefix[v]);
            return;
        }
        let k = ctx.kernel.k();
        let above = if v == 0 { ctx.parent } else { Some(cur[(v - 1) / ctx.shape.d()]) };
        for s in 0..k as State {
            if ctx.mask[v] >> s & 1 == 0 {
                continue;
            }
            let factor = match above {
                Some(a) => {
                    if !ctx.kernel.compatible(a, s) {
                        continue;
                    }
                    ctx.logm[a as usize * k + s as usize]
                }
                None => ctx.kernel.pi()[s as usize].ln(),
            };
            cur[v] = s;
            prefix[v + 1] = prefix[v] + factor;
            rec(ctx, v + 1, cur, prefix, out, logw);
        }
    }
    let ctx = Ctx { shape, kernel, mask: &mask, logm: &logm, parent: boundary.parent_of_root() };
    rec(&ctx, 0, &mut cur, &mut prefix, &mut out, &mut logw);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logw.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    out.weights = weights;
    Ok(out)
}

/// Exact enumeration of the free tree.
pub fn enumerate(shape: &TreeShape, kernel: &SpinKernel, guard: usize) -> Result<Enumeration> {
    enumerate_with(shape, kernel, &Boundary::free(shape), guard)
}

/// Upward messages on `B_{x,l}`: `h_v(s)` is proportional to the probability
/// of the frozen vertices below `v` (inside the block) given `sigma_v = s`.
/// Returned as a flat `n * k` table; rows outside the block are unused.
/// With `scale` each row is divided by its maximum.
fn upward_messages(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    x: usize,
    l: usize,
    scale: bool,
) -> Result<Vec<f64>> {
    let k = kernel.k();
    let mut h = vec![0.0; shape.n() * k];
    let levels = shape.block_levels(x, l);
    let mut buf = vec![0.0; k];
    for j in (0..=levels).rev() {
        for v in shape.descendants_at(x, j) {
            for s in 0..k {
                buf[s] = match boundary.get(v) {
                    Some(f) if f as usize != s => 0.0,
                    _ => 1.0,
                };
            }
            if j < levels {
                for c in shape.children(v) {
                    let hc = &h[c * k..(c + 1) * k];
                    for (s, b) in buf.iter_mut().enumerate() {
                        if *b == 0.0 {
                            continue;
                        }
                        let row = kernel.row(s as State);
                        *b *= row.iter().zip(hc).map(|(m, w)| m * w).sum::<f64>();
                    }
                }
            }
            let max = buf.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                return Err(Error::ZeroProbabilityBoundary);
            }
            let norm = if scale { max } else { 1.0 };
            for s in 0..k {
                h[v * k + s] = buf[s] / norm;
            }
        }
    }
    Ok(h)
}

/// Law of `sigma_x` given the frozen vertices of `B_{x,l}` and, optionally,
/// the state `c` of the parent of `x` (then this is `mu^c`).
pub fn conditional_root_marginal(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    x: usize,
    l: usize,
    parent_state: Option<State>,
) -> Result<Vec<f64>> {
    let k = kernel.k();
    let h = upward_messages(shape, kernel, boundary, x, l, true)?;
    let prior: &[f64] = match parent_state {
        Some(c) => kernel.row(c),
        None => kernel.pi(),
    };
    let mut out: Vec<f64> = (0..k).map(|s| prior[s] * h[x * k + s]).collect();
    let total: f64 = out.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroProbabilityBoundary);
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// `P(sigma on L_{x,l} = tau | sigma_x = c)` for every `c`, unscaled.
pub fn boundary_likelihood(
    shape: &TreeShape,
    kernel: &SpinKernel,
    x: usize,
    l: usize,
    tau: &[State],
) -> Vec<f64> {
    let k = kernel.k();
    let mut b = Boundary::free(shape);
    b.freeze_all(shape.block_bottom(x, l), tau);
    match upward_messages(shape, kernel, &b, x, l, false) {
        Ok(h) => h[x * k..(x + 1) * k].to_vec(),
        Err(_) => vec![0.0; k],
    }
}

/// Calls `f(tau, likelihood)` for every assignment of `L_{x,l}` with positive
/// probability, in lexicographic order.
pub fn for_each_boundary(
    shape: &TreeShape,
    kernel: &SpinKernel,
    x: usize,
    l: usize,
    guard: usize,
    mut f: impl FnMut(&[State], &[f64]),
) -> Result<()> {
    let k = kernel.k();
    let width = shape.block_bottom(x, l).len();
    let count = (k as f64).powi(width as i32);
    if count > guard as f64 {
        return Err(Error::too_large("boundary enumeration", count, guard));
    }
    let mut tau = vec![0 as State; width];
    loop {
        let lik = boundary_likelihood(shape, kernel, x, l, &tau);
        if lik.iter().any(|&p| p > 0.0) {
            f(&tau, &lik);
        }
        // odometer with the last position fastest
        let mut i = width;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if (tau[i] as usize) + 1 < k {
                tau[i] += 1;
                break;
            }
            tau[i] = 0;
        }
    }
}

/// `d_TV` between the laws of `L_{0,l}` given root `c` and given root `c'`.
pub fn reconstruction_tv(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    c: State,
    c_prime: State,
    guard: usize,
) -> Result<f64> {
    check_level(shape, l)?;
    let mut tv = 0.0;
    for_each_boundary(shape, kernel, 0, l, guard, |_, lik| {
        tv += (lik[c as usize] - lik[c_prime as usize]).abs();
    })?;
    Ok(0.5 * tv)
}

/// Largest `d_TV` between root laws over pairs of positive-probability
/// boundaries on `L_l`.
pub fn uniqueness_sup(shape: &TreeShape, kernel: &SpinKernel, l: usize, guard: usize) -> Result<f64> {
    check_level(shape, l)?;
    let k = kernel.k();
    let mut laws: Vec<Vec<f64>> = Vec::new();
    let pi = kernel.pi();
    for_each_boundary(shape, kernel, 0, l, guard, |_, lik| {
        let mut p: Vec<f64> = (0..k).map(|s| pi[s] * lik[s]).collect();
        let t: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= t);
        laws.push(p);
    })?;
    laws.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    laws.dedup();
    if k <= 16 {
        // sup over pairs of TV = max over subsets A of (max p(A) - min q(A))
        let mut best: f64 = 0.0;
        for a in 1u32..(1u32 << k) {
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for p in &laws {
                let mass: f64 = (0..k).filter(|s| a >> s & 1 == 1).map(|s| p[s]).sum();
                hi = hi.max(mass);
                lo = lo.min(mass);
            }
            best = best.max(hi - lo);
        }
        return Ok(best.min(1.0));
    }
    let mut best: f64 = 0.0;
    for i in 0..laws.len() {
        for j in i + 1..laws.len() {
            best = best.max(tv_distance(&laws[i], &laws[j]));
        }
    }
    Ok(best)
}

fn check_level(shape: &TreeShape, l: usize) -> Result<()> {
    if l > shape.depth() {
        return Err(Error::InvalidParams(format!(
            "level {l} is below the tree of depth {}",
            shape.depth()
        )));
    }
    Ok(())
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact draw from `mu` conditioned on a boundary: upward messages, then
/// sampling downward.
pub fn sample_conditional<R: Rng + ?Sized>(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    rng: &mut R,
) -> Result<Configuration> {
    let k = kernel.k();
    let h = upward_messages(shape, kernel, boundary, 0, shape.depth(), true)?;
    let mut states = vec![0 as State; shape.n()];
    let mut p = vec![0.0; k];
    let mut cum = vec![0.0; k];
    let draw = |p: &[f64], cum: &mut [f64], rng: &mut R| -> Result<State> {
        let mut acc = 0.0;
        for (c, v) in cum.iter_mut().zip(p) {
            acc += v;
            *c = acc;
        }
        if acc == 0.0 {
            return Err(Error::ZeroProbabilityBoundary);
        }
        Ok(sample_cumulative(cum, p, rng))
    };
    let prior: &[f64] = match boundary.parent_of_root() {
        Some(c) => kernel.row(c),
        None => kernel.pi(),
    };
    for s in 0..k {
        p[s] = prior[s] * h[s];
    }
    states[0] = draw(&p, &mut cum, rng)?;
    for y in 1..shape.n() {
        let row = kernel.row(states[(y - 1) / shape.d()]);
        for s in 0..k {
            p[s] = row[s] * h[y * k + s];
        }
        states[y] = draw(&p, &mut cum, rng)?;
    }
    Ok(Configuration { states })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvRow {
    pub l: usize,
    pub c: usize,
    pub c_prime: usize,
    pub tv: f64,
}

/// Reconstruction distances for every ordered pair of root states and every
/// level up to `max_l`; states are 1-based in the rows.
pub fn reconstruction_table(
    shape: &TreeShape,
    kernel: &SpinKernel,
    max_l: usize,
    guard: usize,
) -> Result<Vec<TvRow>> {
    let k = kernel.k();
    let mut rows = Vec::new();
    for l in 0..=max_l {
        for c in 0..k {
            for cp in 0..k {
                let tv = reconstruction_tv(shape, kernel, l, c as State, cp as State, guard)?;
                rows.push(TvRow { l, c: c + 1, c_prime: cp + 1, tv });
            }
        }
    }
    Ok(rows)
}
