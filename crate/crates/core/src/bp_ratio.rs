//! Belief-propagation ratios `R~_x(c) = mu(sigma_x = c | tau) / pi_c`.
//!
//! The ratio at `x` is a rational function of the ratios at its children,
//! so the conditional law of a block root given its bottom level can be
//! computed bottom-up without touching the interior configurations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spin_model::{SpinKernel, State};
use crate::tree_config::{broadcast_sample, enumerate, for_each_boundary, Boundary, TreeShape};

/// Normal quantile used by the Wilson intervals.
pub const Z95: f64 = 1.959964;

/// A point of the simplex `{r >= 0, pi . r = 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioVector {
    pub r: Vec<f64>,
}

impl RatioVector {
    pub fn ones(k: usize) -> Self {
        Self { r: vec![1.0; k] }
    }

    /// The ratio of a vertex known to be in state `s`: `e_s / pi_s`.
    pub fn fixed(kernel: &SpinKernel, s: State) -> Self {
        let mut r = vec![0.0; kernel.k()];
        r[s as usize] = 1.0 / kernel.pi()[s as usize];
        Self { r }
    }

    /// `p / pi` for a law `p` on the states.
    pub fn from_law(kernel: &SpinKernel, p: &[f64]) -> Self {
        Self {
            r: p.iter().zip(kernel.pi()).map(|(a, b)| a / b).collect(),
        }
    }

    /// `R = max_c |r_c - 1|`.
    pub fn deviation(&self) -> f64 {
        self.r.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Back to a law on the states.
    pub fn law(&self, kernel: &SpinKernel) -> Vec<f64> {
        self.r.iter().zip(kernel.pi()).map(|(a, b)| a * b).collect()
    }
}

/// `r(c) ∝ prod_i (M r_i)(c)`, normalized so that `pi . r = 1`.
pub fn ratio_step(children: &[RatioVector], kernel: &SpinKernel) -> Result<RatioVector> {
    let mut prod = vec![1.0; kernel.k()];
    for child in children {
        multiply_message(&mut prod, child, kernel)?;
    }
    normalize(prod, kernel)
}

/// `acc *= (M r) / max(M r)`; exact zeros stay zero.
fn multiply_message(acc: &mut [f64], child: &RatioVector, kernel: &SpinKernel) -> Result<()> {
    let k = kernel.k();
    let mut msg = vec![0.0; k];
    for (a, m) in msg.iter_mut().enumerate() {
        *m = kernel.row(a as State).iter().zip(&child.r).map(|(p, r)| p * r).sum();
    }
    let max = msg.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateDenominator);
    }
    for (a, m) in acc.iter_mut().zip(&msg) {
        *a *= m / max;
    }
    Ok(())
}

fn normalize(prod: Vec<f64>, kernel: &SpinKernel) -> Result<RatioVector> {
    let denom: f64 = prod.iter().zip(kernel.pi()).map(|(a, p)| a * p).sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    Ok(RatioVector {
        r: prod.into_iter().map(|a| a / denom).collect(),
    })
}

/// Ratio at `x` given the frozen vertices of `B_{x,l}`. Unfrozen bottom
/// vertices carry the all-ones ratio.
pub fn ratio_from_boundary(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    x: usize,
    l: usize,
) -> Result<RatioVector> {
    let levels = shape.block_levels(x, l);
    let mut below: Vec<RatioVector> = Vec::new();
    for j in (0..=levels).rev() {
        let range = shape.descendants_at(x, j);
        let mut here = Vec::with_capacity(range.len());
        for (i, v) in range.enumerate() {
            let mut prod = vec![1.0; kernel.k()];
            if j < levels {
                let d = shape.d();
                for child in &below[i * d..(i + 1) * d] {
                    multiply_message(&mut prod, child, kernel).map_err(zero_boundary)?;
                }
            }
            if let Some(s) = boundary.get(v) {
                for (c, p) in prod.iter_mut().enumerate() {
                    if c != s as usize {
                        *p = 0.0;
                    }
                }
            }
            here.push(normalize(prod, kernel).map_err(zero_boundary)?);
        }
        below = here;
    }
    Ok(below.pop().expect("block has a root"))
}

fn zero_boundary(e: Error) -> Error {
    match e {
        Error::DegenerateDenominator => Error::ZeroProbabilityBoundary,
        other => other,
    }
}

/// `M^m` as a dense row-major table.
pub fn kernel_power(kernel: &SpinKernel, m: usize) -> Vec<f64> {
    let k = kernel.k();
    let mut a: Vec<f64> = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
    for _ in 0..m {
        let mut next = vec![0.0; k * k];
        for i in 0..k {
            for l in 0..k {
                let ail = a[i * k + l];
                if ail == 0.0 {
                    continue;
                }
                for (j, mlj) in kernel.row(l as State).iter().enumerate() {
                    next[i * k + j] += ail * mlj;
                }
            }
        }
        a = next;
    }
    a
}

/// Contraction of `r -> M^m r` around `1` on the simplex, in the sup norm:
/// `sup ||M^m r - 1|| / ||r - 1||`.
///
/// Since `1` is interior, `r - 1` ranges over every direction of
/// `{pi . v = 0}`, so this is the operator norm of `M^m` on that subspace.
/// Row by row, LP duality gives `sup a.v = min_t ||a - t pi||_1`, a convex
/// piecewise-linear minimum attained at a breakpoint `t = a_j / pi_j`.
pub fn contraction_factor(kernel: &SpinKernel, m: usize) -> f64 {
    let k = kernel.k();
    if k == 1 {
        return 0.0;
    }
    let a = kernel_power(kernel, m);
    let pi = kernel.pi();
    (0..k)
        .map(|i| {
            let row = &a[i * k..(i + 1) * k];
            (0..k)
                .map(|b| {
                    let t = row[b] / pi[b];
                    row.iter().zip(pi).map(|(x, p)| (x - t * p).abs()).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// The same ratio restricted to the simplex vertices `e_s / pi_s`. A lower
/// bound for `contraction_factor`, equal to it for coloring kernels.
pub fn contraction_factor_vertices(kernel: &SpinKernel, m: usize) -> f64 {
    let k = kernel.k();
    let a = kernel_power(kernel, m);
    let pi = kernel.pi();
    (0..k)
        .map(|s| {
            let v: Vec<f64> = (0..k).map(|j| if j == s { 1.0 / pi[s] - 1.0 } else { -1.0 }).collect();
            let vn = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let av = (0..k)
                .map(|i| (0..k).map(|j| a[i * k + j] * v[j]).sum::<f64>().abs())
                .fold(0.0, f64::max);
            av / vn
        })
        .fold(0.0, f64::max)
}

/// Least `m <= max_m` whose contraction factor is below `target`.
pub fn minimal_contraction_steps(kernel: &SpinKernel, target: f64, max_m: usize) -> Option<usize> {
    (0..=max_m).find(|&m| contraction_factor(kernel, m) < target)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionRow {
    pub m: usize,
    pub contraction_factor: f64,
}

pub fn contraction_table(kernel: &SpinKernel, max_m: usize) -> Vec<ContractionRow> {
    (0..=max_m)
        .map(|m| ContractionRow { m, contraction_factor: contraction_factor(kernel, m) })
        .collect()
}

/// Both sides of `E_{tau~mu} |R~_{0,l}(c) - 1| = 2 d_TV(mu^c_{L_l}, mu_{L_l})`.
///
/// The left side runs the ratio recursion on every boundary; the right side
/// reads both boundary laws off a full enumeration of the tree.
pub fn mean_deviation_identity(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    c: State,
    guard: usize,
) -> Result<(f64, f64)> {
    let pi = kernel.pi();
    let level = shape.level_range(l);
    let mut lhs = 0.0;
    let mut err = None;
    for_each_boundary(shape, kernel, 0, l, guard, |tau, lik| {
        let mass: f64 = lik.iter().zip(pi).map(|(a, b)| a * b).sum();
        let mut b = Boundary::free(shape);
        b.freeze_all(level.clone(), tau);
        match ratio_from_boundary(shape, kernel, &b, 0, l) {
            Ok(r) => lhs += mass * (r.r[c as usize] - 1.0).abs(),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let e = enumerate(shape, kernel, guard)?;
    let mut laws: BTreeMap<&[State], (f64, f64)> = BTreeMap::new();
    for (cfg, w) in e.iter() {
        let entry = laws.entry(&cfg[level.clone()]).or_insert((0.0, 0.0));
        entry.0 += w;
        if cfg[0] == c {
            entry.1 += w / pi[c as usize];
        }
    }
    let rhs: f64 = laws.values().map(|(mu, mu_c)| (mu_c - mu).abs()).sum();
    Ok((lhs, rhs))
}

/// How `g(z,l)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailMode {
    Exact { guard: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub l: usize,
    pub z: f64,
    pub g: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub exact: bool,
}

/// Samples per random stream in Monte Carlo mode.
const MC_CHUNK: usize = 4096;

/// `g(z,l) = P_{tau~mu}(R_{0,l} > z)` with `R = max_c |R~(c) - 1|`.
///
/// Zero without computation once `z >= 1/pi_min`, since `R <= 1/pi_min - 1`.
pub fn deviation_tail(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    z: f64,
    mode: TailMode,
) -> Result<TailEstimate> {
    if z.is_nan() || z <= 0.0 {
        return Err(Error::InvalidParams(format!("tail threshold must be positive, got {z}")));
    }
    let exact = matches!(mode, TailMode::Exact { .. });
    if z >= 1.0 / kernel.pi_min() {
        return Ok(TailEstimate { l, z, g: 0.0, ci_low: 0.0, ci_high: 0.0, exact });
    }
    match mode {
        TailMode::Exact { guard } => {
            let mut g = 0.0;
            each_deviation(shape, kernel, l, guard, |mass, r| {
                if r > z {
                    g += mass;
                }
            })?;
            Ok(TailEstimate { l, z, g, ci_low: g, ci_high: g, exact })
        }
        TailMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidParams("Monte Carlo needs at least one sample".into()));
            }
            let chunks = samples.div_ceil(MC_CHUNK);
            let hits: Result<Vec<usize>> = (0..chunks)
                .into_par_iter()
                .map(|ci| {
                    let mut rng = stream_rng(seed, ci as u64);
                    let count = MC_CHUNK.min(samples - ci * MC_CHUNK);
                    let mut hits = 0;
                    for _ in 0..count {
                        let cfg = broadcast_sample(shape, kernel, &mut rng, None);
                        let mut b = Boundary::free(shape);
                        let level = shape.level_range(l);
                        b.freeze_all(level.clone(), &cfg.states[level]);
                        if ratio_from_boundary(shape, kernel, &b, 0, l)?.deviation() > z {
                            hits += 1;
                        }
                    }
                    Ok(hits)
                })
                .collect();
            let hits: usize = hits?.into_iter().sum();
            let (lo, hi) = wilson_interval(hits, samples, Z95);
            Ok(TailEstimate { l, z, g: hits as f64 / samples as f64, ci_low: lo, ci_high: hi, exact })
        }
    }
}

/// Exact `E_{tau~mu} R_{0,l}`.
pub fn expected_deviation(shape: &TreeShape, kernel: &SpinKernel, l: usize, guard: usize) -> Result<f64> {
    let mut e = 0.0;
    each_deviation(shape, kernel, l, guard, |mass, r| e += mass * r)?;
    Ok(e)
}

fn each_deviation(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    guard: usize,
    mut f: impl FnMut(f64, f64),
) -> Result<()> {
    if l > shape.depth() {
        return Err(Error::InvalidParams(format!("level {l} is below the tree")));
    }
    let pi = kernel.pi();
    let level = shape.level_range(l);
    let mut err = None;
    for_each_boundary(shape, kernel, 0, l, guard, |tau, lik| {
        let mass: f64 = lik.iter().zip(pi).map(|(a, b)| a * b).sum();
        let mut b = Boundary::free(shape);
        b.freeze_all(level.clone(), tau);
        match ratio_from_boundary(shape, kernel, &b, 0, l) {
            Ok(r) => f(mass, r.deviation()),
            Err(e) => err = Some(e),
        }
    })?;
    err.map_or(Ok(()), Err)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Table rows `l,z,g_exact|g_hat,ci_low,ci_high`.
pub fn tail_table_header(exact: bool) -> [&'static str; 5] {
    ["l", "z", if exact { "g_exact" } else { "g_hat" }, "ci_low", "ci_high"]
}

pub fn tail_record(t: &TailEstimate) -> Vec<String> {
    vec![
        t.l.to_string(),
        t.z.to_string(),
        t.g.to_string(),
        t.ci_low.to_string(),
        t.ci_high.to_string(),
    ]
}
