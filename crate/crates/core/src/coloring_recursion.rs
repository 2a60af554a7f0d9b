//! Type probabilities of vertices in a uniformly random proper coloring of
//! the complete tree, the Poisson recursion that dominates them, and scans
//! over `d = floor(k (log k + log log k + beta))`.
//!
//! Children of a vertex colored `a` carry multinomial counts `(d_c)` over the
//! `m = k - 1` other colors, and each child is bad independently with
//! probability `p = p^b_{l-1}`. With `q = 1 - p` and
//! `phi(n) = (1 - q^n) / p`:
//!
//! ```text
//! p_r = p^m     E[ prod_c phi(d_c) ]
//! p_2 = m p^(m-1) E[ q^(d_1) prod_{c>1} phi(d_c) ]
//! p_b = p_r + p_2 / m = p^(m-1) (p E1 + E2)
//! ```
//!
//! The multinomial expectations are coefficients of a product of generating
//! functions, evaluated with Poisson weights so every intermediate stays in
//! range. `p^(m-1)` is carried as a logarithm, so double exponential tails
//! never underflow.

use std::f64::consts::E;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glauber::{coloring_fast_classify, VertexType};
use crate::rng::stream_rng;
use crate::spin_model::SpinKernel;
use crate::tree_config::{broadcast_sample, TreeShape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TypeProbs {
    pub l: usize,
    pub p_r: f64,
    pub p2: f64,
    pub p3: f64,
    pub p_b: f64,
    /// `ln p_b`, exact even after `p_b` underflows.
    pub log_p_b: f64,
}

impl TypeProbs {
    pub fn bottom() -> Self {
        TypeProbs { l: 0, p_r: 1.0, p2: 0.0, p3: 0.0, p_b: 1.0, log_p_b: 0.0 }
    }

    pub fn p_g(&self) -> f64 {
        1.0 - self.p_b
    }
}

/// Truncated product of two power series.
fn mul(a: &[f64], b: &[f64], deg: usize) -> Vec<f64> {
    let mut out = vec![0.0; deg + 1];
    for (i, &x) in a.iter().enumerate().take(deg + 1) {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(deg + 1 - i) {
            out[i + j] += x * y;
        }
    }
    out
}

fn power(a: &[f64], mut e: usize, deg: usize) -> Vec<f64> {
    let mut acc = vec![0.0; deg + 1];
    acc[0] = 1.0;
    let mut base = a.to_vec();
    while e > 0 {
        if e & 1 == 1 {
            acc = mul(&acc, &base, deg);
        }
        e >>= 1;
        if e > 0 {
            base = mul(&base, &base, deg);
        }
    }
    acc
}

/// Poisson(`lambda`) probabilities for `0..=deg`, by the stable ratio.
fn poisson_pmf(lambda: f64, deg: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(deg + 1);
    let mut log = -lambda;
    for n in 0..=deg {
        if n > 0 {
            log += lambda.ln() - (n as f64).ln();
        }
        out.push(log.exp());
    }
    out
}

/// `ln P(Poisson(n) = n)`.
fn log_poisson_mode(n: usize) -> f64 {
    let lf: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
    -(n as f64) + n as f64 * (n as f64).max(1.0).ln() - lf
}

/// One level of the exact recursion.
pub fn type_step(k: usize, d: usize, prev: &TypeProbs) -> Result<TypeProbs> {
    if k < 3 || d < 1 {
        return Err(Error::InvalidParams(format!("type recursion needs k >= 3 and d >= 1, got k={k}, d={d}")));
    }
    let m = k - 1;
    let log_p = prev.log_p_b;
    let p = log_p.exp();
    let lambda = d as f64 / m as f64;
    let pmf = poisson_pmf(lambda, d);
    let (phi, qn): (Vec<f64>, Vec<f64>) = (0..=d)
        .map(|n| {
            let n_f = n as f64;
            if p >= 1.0 {
                (if n > 0 { 1.0 } else { 0.0 }, if n == 0 { 1.0 } else { 0.0 })
            } else if p < 1e-200 {
                (n_f, 1.0)
            } else {
                let l1 = (-p).ln_1p();
                (-(n_f * l1).exp_m1() / p, (n_f * l1).exp())
            }
        })
        .unzip();
    let g: Vec<f64> = phi.iter().zip(&pmf).map(|(a, b)| a * b).collect();
    let h: Vec<f64> = qn.iter().zip(&pmf).map(|(a, b)| a * b).collect();
    let gm1 = power(&g, m - 1, d);
    // multinomial expectation = coefficient / P(Poisson(d) = d)
    let norm = (-log_poisson_mode(d)).exp();
    let e1: f64 = (0..=d).map(|i| g[i] * gm1[d - i]).sum::<f64>() * norm;
    let e2: f64 = (0..=d).map(|i| h[i] * gm1[d - i]).sum::<f64>() * norm;
    let inner = p * e1 + e2;
    let log_p_b = if inner > 0.0 { (m - 1) as f64 * log_p + inner.ln() } else { f64::NEG_INFINITY };
    let p_r = ((m as f64) * log_p).exp() * e1;
    let p2 = m as f64 * ((m - 1) as f64 * log_p).exp() * e2;
    let p3 = (1.0 - p_r - p2).max(0.0);
    Ok(TypeProbs { l: prev.l + 1, p_r, p2, p3, p_b: log_p_b.exp(), log_p_b })
}

/// `p_r, p_2, p_3, p_b` for `l = 0..=levels`.
pub fn type_recursion_exact(k: usize, d: usize, levels: usize) -> Result<Vec<TypeProbs>> {
    if k < 3 || d < 1 {
        return Err(Error::InvalidParams(format!("type recursion needs k >= 3 and d >= 1, got k={k}, d={d}")));
    }
    let mut out = vec![TypeProbs::bottom()];
    for _ in 0..levels {
        let next = type_step(k, d, out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

/// A proportion with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub sigma: f64,
    pub samples: u64,
}

impl Estimate {
    fn from_count(hits: u64, n: u64) -> Self {
        let mean = hits as f64 / n as f64;
        Estimate { mean, sigma: (mean * (1.0 - mean) / n as f64).sqrt(), samples: n }
    }

    /// `|mean - x| <= z sqrt(x (1 - x) / n)`: the standard error is taken at
    /// the tested value, so a rare event with no hits is still judged fairly.
    pub fn covers(&self, x: f64, z: f64) -> bool {
        let sigma = (x * (1.0 - x) / self.samples as f64).sqrt();
        (self.mean - x).abs() <= z * sigma + 1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McLevel {
    pub h: usize,
    pub p_r: Estimate,
    pub p2: Estimate,
    pub p3: Estimate,
    pub p_b: Estimate,
    pub p_free: Estimate,
}

/// Broadcast-samples colorings of a tree of depth `depth + 1` and classifies
/// the leftmost vertex at each height `0..=depth`, so every estimate comes
/// from independent draws and every sampled vertex has a parent.
pub fn mc_estimate_probs(k: usize, d: usize, depth: usize, samples: usize, seed: u64, guard: usize) -> Result<Vec<McLevel>> {
    if samples == 0 {
        return Err(Error::InvalidParams("samples must be positive".into()));
    }
    let kernel = SpinKernel::coloring(k)?;
    let shape = TreeShape::new(d, depth + 1)?;
    if shape.n().saturating_mul(samples) > guard.saturating_mul(1000) {
        return Err(Error::too_large("classification samples", (shape.n() * samples) as f64, guard));
    }
    const CHUNK: usize = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let probes: Vec<usize> = (0..=depth).map(|h| shape.level_range(depth + 1 - h).start).collect();
    // per height: rigid, type 2, type 3, bad, free
    let counts: Vec<Vec<[u64; 5]>> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<[u64; 5]>> {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = vec![[0u64; 5]; depth + 1];
            let count = CHUNK.min(samples - c * CHUNK);
            for _ in 0..count {
                let cfg = broadcast_sample(&shape, &kernel, &mut rng, None);
                let cls = coloring_fast_classify(&cfg, &shape, &kernel)?;
                for (h, &v) in probes.iter().enumerate() {
                    let cl = cls[v];
                    let slot = match cl.kind {
                        VertexType::Rigid => 0,
                        VertexType::Type2 => 1,
                        VertexType::Type3 => 2,
                    };
                    acc[h][slot] += 1;
                    acc[h][3] += u64::from(cl.bad == Some(true));
                    acc[h][4] += u64::from(cl.free);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let n = samples as u64;
    Ok((0..=depth)
        .map(|h| {
            let tot = counts.iter().fold([0u64; 5], |mut a, c| {
                for i in 0..5 {
                    a[i] += c[h][i];
                }
                a
            });
            McLevel {
                h,
                p_r: Estimate::from_count(tot[0], n),
                p2: Estimate::from_count(tot[1], n),
                p3: Estimate::from_count(tot[2], n),
                p_b: Estimate::from_count(tot[3], n),
                p_free: Estimate::from_count(tot[4], n),
            }
        })
        .collect())
}

/// Parameters of the dominating recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoissonBoundParams {
    pub k: usize,
    pub d: usize,
    pub beta_star: f64,
    /// `log k + log log k + beta_star`.
    pub big_d: f64,
    /// `P(Poisson((k - 1) D) < d)`.
    pub p: f64,
}

impl PoissonBoundParams {
    pub fn new(k: usize, d: usize, beta_star: f64) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidParams(format!("k must be at least 3, got {k}")));
        }
        let kf = k as f64;
        let big_d = kf.ln() + kf.ln().ln() + beta_star;
        if !(big_d > 0.0) {
            return Err(Error::InvalidParams(format!("D = {big_d} must be positive")));
        }
        let p = poisson_cdf_below((k - 1) as f64 * big_d, d);
        Ok(PoissonBoundParams { k, d, beta_star, big_d, p })
    }
}

/// `P(Poisson(lambda) < d)`, summing whichever tail is smaller with terms
/// built in log space.
pub fn poisson_cdf_below(lambda: f64, d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let log_pmf = |n: usize| -> f64 {
        let lf: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
        -lambda + n as f64 * lambda.ln() - lf
    };
    let mode = lambda.floor() as usize;
    if d <= mode + 1 {
        // lower tail, n = d-1 down to 0, terms shrink
        let top = log_pmf(d - 1);
        let mut sum = 0.0;
        let mut rel = 1.0;
        for n in (0..d).rev() {
            sum += rel;
            rel *= n as f64 / lambda;
            if rel < 1e-18 * sum {
                break;
            }
        }
        (top + sum.ln()).exp().min(1.0)
    } else {
        // upper tail from d upward
        let top = log_pmf(d);
        let mut sum = 0.0;
        let mut rel = 1.0;
        let mut n = d;
        loop {
            sum += rel;
            n += 1;
            rel *= lambda / n as f64;
            if rel < 1e-18 * sum {
                break;
            }
        }
        (1.0 - (top + sum.ln()).exp()).max(0.0)
    }
}

/// `y_0 = 1`, `y_l = exp(-(k - 2) exp(-y_{l-1} D)) + p`.
pub fn poisson_bound_sequence(params: &PoissonBoundParams, levels: usize) -> Vec<f64> {
    let mut y = vec![1.0];
    for _ in 0..levels {
        let prev = *y.last().expect("nonempty");
        y.push((-((params.k - 2) as f64) * (-prev * params.big_d).exp()).exp() + params.p);
    }
    y
}

/// Per-level outcome of the double exponential check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DoubleExpLevel {
    pub l: usize,
    /// `p^b_l <= exp(-(k/2)^(l - l0))`.
    pub envelope: bool,
    /// `p^b_l <= (d p^b_{l-1})^(k-2)`; true at `l0`.
    pub one_step: bool,
}

/// First level with `p^b_l <= 1/(e d)`.
pub fn first_small_level(d: usize, log_pb: &[f64]) -> Option<usize> {
    let cut = -(1.0 + (d as f64).ln());
    log_pb.iter().position(|&v| v <= cut)
}

/// Checks the double exponential envelope from `l0` on, in log form.
pub fn double_exp_check(k: usize, d: usize, log_pb: &[f64], l0: usize) -> Result<Vec<DoubleExpLevel>> {
    let cut = -(1.0 + (d as f64).ln());
    if l0 >= log_pb.len() || log_pb[l0] > cut {
        return Err(Error::PreconditionNotMet(format!("p_b at level {l0} is above 1/(ed)")));
    }
    let half = k as f64 / 2.0;
    let slack = 1e-12;
    Ok((l0..log_pb.len())
        .map(|l| {
            let envelope = log_pb[l] <= -half.powi((l - l0) as i32) + slack;
            let one_step = l == l0 || {
                let bound = (k - 2) as f64 * ((d as f64).ln() + log_pb[l - 1]);
                if bound == f64::NEG_INFINITY {
                    log_pb[l] == f64::NEG_INFINITY
                } else {
                    log_pb[l] <= bound + slack * bound.abs().max(1.0)
                }
            };
            DoubleExpLevel { l, envelope, one_step }
        })
        .collect())
}

/// `floor(k (log k + log log k + beta))`.
pub fn threshold_degree(k: usize, beta: f64) -> usize {
    let kf = k as f64;
    (kf * (kf.ln() + kf.ln().ln() + beta)).floor() as usize
}

/// Row status in a scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Certified,
    NotCertified,
    OutOfRegime,
}

impl ScanStatus {
    pub fn label(self) -> &'static str {
        match self {
            ScanStatus::Certified => "true",
            ScanStatus::NotCertified => "false",
            ScanStatus::OutOfRegime => "out_of_regime",
        }
    }
}

/// One `(k, l)` row of the scan table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub k: usize,
    pub d: usize,
    pub beta: f64,
    pub l: usize,
    pub p_r: f64,
    pub p2: f64,
    pub p3: f64,
    pub p_b: f64,
    pub y_l: f64,
    pub certified: String,
    pub l0: String,
    /// Present once `p_b < 1e-15`.
    pub log_p_b: String,
}

/// Per-`k` summary of a scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSummary {
    pub k: usize,
    pub d: usize,
    pub status: ScanStatus,
    pub l0: Option<usize>,
    /// `p^b_l <= y_l` at every level.
    pub dominated: bool,
    /// Envelope and one-step bound hold at every level from `l0`.
    pub double_exp: bool,
}

/// Runs the exact recursion for one `k` at `d = threshold_degree(k, beta)`.
/// A row certifies when `p_b` falls below `1/(ed)` and the envelope then
/// holds through `levels`. `k < 4` is outside the large-`k` regime.
pub fn scan_one(k: usize, beta: f64, beta_star: f64, levels: usize) -> Result<(ScanSummary, Vec<ScanRow>)> {
    if !(beta < 1.0) {
        return Err(Error::InvalidParams(format!("beta must be below 1, got {beta}")));
    }
    let d = threshold_degree(k, beta).max(1);
    if k < 4 {
        let row = ScanRow {
            k,
            d,
            beta,
            l: 0,
            p_r: 1.0,
            p2: 0.0,
            p3: 0.0,
            p_b: 1.0,
            y_l: 1.0,
            certified: ScanStatus::OutOfRegime.label().into(),
            l0: String::new(),
            log_p_b: String::new(),
        };
        let summary = ScanSummary { k, d, status: ScanStatus::OutOfRegime, l0: None, dominated: false, double_exp: false };
        return Ok((summary, vec![row]));
    }
    let probs = type_recursion_exact(k, d, levels)?;
    let params = PoissonBoundParams::new(k, d, beta_star)?;
    let y = poisson_bound_sequence(&params, levels);
    let logs: Vec<f64> = probs.iter().map(|t| t.log_p_b).collect();
    let l0 = first_small_level(d, &logs);
    let checks = match l0 {
        Some(l0) => double_exp_check(k, d, &logs, l0)?,
        None => Vec::new(),
    };
    let double_exp = l0.is_some() && checks.iter().all(|c| c.envelope && c.one_step);
    let dominated = probs.iter().zip(&y).all(|(t, &y)| t.p_b <= y);
    let status = if double_exp { ScanStatus::Certified } else { ScanStatus::NotCertified };
    let rows = probs
        .iter()
        .zip(&y)
        .map(|(t, &y_l)| {
            let ok = match l0 {
                Some(l0) if t.l >= l0 => checks[..=t.l - l0].iter().all(|c| c.envelope && c.one_step),
                _ => false,
            };
            ScanRow {
                k,
                d,
                beta,
                l: t.l,
                p_r: t.p_r,
                p2: t.p2,
                p3: t.p3,
                p_b: t.p_b,
                y_l,
                certified: if ok { ScanStatus::Certified } else { ScanStatus::NotCertified }.label().into(),
                l0: l0.map(|v| v.to_string()).unwrap_or_default(),
                log_p_b: if t.p_b < 1e-15 { format!("{}", t.log_p_b) } else { String::new() },
            }
        })
        .collect();
    Ok((ScanSummary { k, d, status, l0, dominated, double_exp }, rows))
}

/// [`scan_one`] over a list of `k`, in parallel, rows in input order.
/// `beta_star` defaults to `(beta + 1) / 2`.
pub fn threshold_scan(
    ks: &[usize],
    beta: f64,
    beta_star: Option<f64>,
    levels: usize,
) -> Result<Vec<(ScanSummary, Vec<ScanRow>)>> {
    let beta_star = beta_star.unwrap_or((beta + 1.0) / 2.0);
    if !(beta < beta_star) {
        return Err(Error::InvalidParams(format!("beta* = {beta_star} must exceed beta = {beta}")));
    }
    ks.par_iter().map(|&k| scan_one(k, beta, beta_star, levels)).collect()
}

/// Upper bound `1/(e d)` used for `l0`.
pub fn small_cut(d: usize) -> f64 {
    1.0 / (E * d as f64)
}

/// Draws a fresh seed from a generator; keeps callers from sharing streams.
pub fn derive_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}
