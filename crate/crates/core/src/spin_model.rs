//! Reversible k-state kernels and their potential form.
//!
//! A spin system on a tree is described either by a symmetric pair potential
//! `U` together with a field `W`, or by the broadcast kernel `M` they induce.
//! Hard constraints (infinite potential) are carried as an explicit tag so
//! that the zero pattern of `M` is exact.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A spin value, `0..k`. Text formats use `1..=k`.
pub type State = u8;

/// Largest supported number of states.
pub const MAX_STATES: usize = 64;

/// Tolerance for row sums and detailed balance.
pub const KERNEL_TOL: f64 = 1e-12;

/// One potential entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Energy {
    Finite(f64),
    /// Infinite energy: the pair (or state) is forbidden.
    Hard,
}

impl Energy {
    fn neg_log_weight(self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(v),
            Energy::Hard => None,
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(self, Energy::Hard)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Energy::Finite(v) => write!(f, "{v}"),
            Energy::Hard => f.write_str("hard"),
        }
    }
}

/// Symmetric pair potential `U` and single-site field `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    k: usize,
    pair: Vec<Energy>,
    field: Vec<Energy>,
}

impl Potentials {
    pub fn new(k: usize, pair: Vec<Energy>, field: Vec<Energy>) -> Result<Self> {
        check_state_count(k)?;
        if pair.len() != k * k || field.len() != k {
            return Err(Error::InvalidParams(format!(
                "potentials for k={k} need {} pair and {k} field entries",
                k * k
            )));
        }
        for e in pair.iter().chain(field.iter()) {
            if let Energy::Finite(v) = e {
                if !v.is_finite() {
                    return Err(Error::InvalidParams(format!("non-finite potential {v}")));
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                if pair[i * k + j] != pair[j * k + i] {
                    return Err(Error::InvalidParams(format!(
                        "pair potential is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { k, pair, field })
    }

    /// No interaction and no field.
    pub fn free(k: usize) -> Result<Self> {
        Self::new(k, vec![Energy::Finite(0.0); k * k], vec![Energy::Finite(0.0); k])
    }

    /// `U(c, c') = inf * 1(c = c')`, `W = 0`.
    pub fn coloring(k: usize) -> Result<Self> {
        let pair = (0..k * k)
            .map(|i| if i / k == i % k { Energy::Hard } else { Energy::Finite(0.0) })
            .collect();
        Self::new(k, pair, vec![Energy::Finite(0.0); k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pair(&self, a: usize, b: usize) -> Energy {
        self.pair[a * self.k + b]
    }

    pub fn field(&self, a: usize) -> Energy {
        self.field[a]
    }

    pub fn set_pair(&mut self, a: usize, b: usize, e: Energy) {
        self.pair[a * self.k + b] = e;
        self.pair[b * self.k + a] = e;
    }

    pub fn set_field(&mut self, a: usize, e: Energy) {
        self.field[a] = e;
    }
}

/// A reversible, ergodic broadcast kernel with its stationary law.
#[derive(Clone, Debug)]
pub struct SpinKernel {
    k: usize,
    m: Vec<f64>,
    pi: Vec<f64>,
    hard: Vec<bool>,
    p_min: f64,
    lambda: f64,
    cumulative: Vec<f64>,
    pi_cumulative: Vec<f64>,
}

/// `d * lambda^2` and whether it is strictly below one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KestenStigum {
    pub value: f64,
    pub below: bool,
}

impl SpinKernel {
    /// Validates a row-stochastic matrix and solves for its stationary law.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        check_state_count(k)?;
        let mut m = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NotStochastic(format!("row {} has {} entries", i + 1, row.len())));
            }
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NotStochastic(format!("row {} has entry {v}", i + 1)));
                }
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > KERNEL_TOL {
                return Err(Error::NotStochastic(format!("row {} sums to {s}", i + 1)));
            }
            m.extend_from_slice(row);
        }
        check_ergodic(k, &m)?;
        let pi = solve_stationary(k, &m)?;
        Self::assemble(k, m, pi)
    }

    /// `M(c1,c2) = exp[-(U(c1,c2)+W(c2))] / sum_c' exp[-(U(c1,c')+W(c'))]`.
    ///
    /// The stationary law is `pi_c ∝ exp(-W(c)) * Z(c)` where `Z(c)` is the
    /// row normalizer; it reduces to `exp(-W(c))` only in the gauge where every
    /// row normalizer is equal.
    pub fn from_potentials(pot: &Potentials) -> Result<Self> {
        let k = pot.k();
        let mut m = vec![0.0; k * k];
        let mut log_z = vec![0.0; k];
        for a in 0..k {
            let exps: Vec<Option<f64>> = (0..k)
                .map(|b| match (pot.pair(a, b).neg_log_weight(), pot.field(b).neg_log_weight()) {
                    (Some(u), Some(w)) => Some(-(u + w)),
                    _ => None,
                })
                .collect();
            let max = exps.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::NonNormalizable { row: a + 1 });
            }
            let sum: f64 = exps.iter().flatten().map(|e| (e - max).exp()).sum();
            let lse = max + sum.ln();
            log_z[a] = lse;
            for b in 0..k {
                if let Some(e) = exps[b] {
                    let v = (e - lse).exp();
                    if v == 0.0 {
                        return Err(Error::InvalidParams(format!(
                            "finite potential at ({}, {}) underflows to a zero transition",
                            a + 1,
                            b + 1
                        )));
                    }
                    m[a * k + b] = v;
                }
            }
            let s: f64 = m[a * k..(a + 1) * k].iter().sum();
            for v in &mut m[a * k..(a + 1) * k] {
                *v /= s;
            }
        }
        check_ergodic(k, &m)?;
        let log_pi: Vec<Option<f64>> = (0..k)
            .map(|c| pot.field(c).neg_log_weight().map(|w| log_z[c] - w))
            .collect();
        let max = log_pi.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut pi: Vec<f64> = log_pi
            .iter()
            .map(|lp| lp.map_or(0.0, |v| (v - max).exp()))
            .collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        Self::assemble(k, m, pi)
    }

    /// The proper-coloring kernel: uniform over the other `k - 1` colors.
    pub fn coloring(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParams(format!("coloring needs k >= 2, got {k}")));
        }
        let off = 1.0 / (k - 1) as f64;
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|a| (0..k).map(|b| if a == b { 0.0 } else { off }).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// `M = 1/k` everywhere: no interaction.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_rows(&vec![vec![1.0 / k as f64; k]; k])
    }

    fn assemble(k: usize, m: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        let mut residual: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                residual = residual.max((pi[a] * m[a * k + b] - pi[b] * m[b * k + a]).abs());
            }
        }
        if residual > KERNEL_TOL {
            return Err(Error::NotReversible { residual });
        }
        let hard: Vec<bool> = m.iter().map(|&v| v == 0.0).collect();
        let p_min = m.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        let lambda = symmetric_second_eigenvalue(k, &m, &pi);
        let cumulative = m
            .chunks(k)
            .flat_map(|row| cumulative_sums(row))
            .collect();
        let pi_cumulative = cumulative_sums(&pi);
        Ok(Self {
            k,
            m,
            pi,
            hard,
            p_min,
            lambda,
            cumulative,
            pi_cumulative,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn entry(&self, a: State, b: State) -> f64 {
        self.m[a as usize * self.k + b as usize]
    }

    pub fn row(&self, a: State) -> &[f64] {
        &self.m[a as usize * self.k..(a as usize + 1) * self.k]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn pi_min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True where `M(a, b) = 0`.
    #[inline]
    pub fn is_hard(&self, a: State, b: State) -> bool {
        self.hard[a as usize * self.k + b as usize]
    }

    #[inline]
    pub fn compatible(&self, a: State, b: State) -> bool {
        !self.is_hard(a, b)
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    /// Eigenvalue of `M` second-largest in absolute value, sign preserved.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kesten_stigum(&self, d: usize) -> KestenStigum {
        let value = d as f64 * self.lambda * self.lambda;
        KestenStigum {
            value,
            below: value < 1.0 - KERNEL_TOL,
        }
    }

    /// `M(a, b) = 1/(k-1)` off the diagonal and zero on it.
    pub fn is_coloring(&self) -> bool {
        if self.k < 3 {
            return false;
        }
        let off = 1.0 / (self.k - 1) as f64;
        (0..self.k).all(|a| {
            (0..self.k).all(|b| {
                let v = self.m[a * self.k + b];
                if a == b {
                    v == 0.0
                } else {
                    (v - off).abs() <= KERNEL_TOL
                }
            })
        })
    }

    /// Potentials in the gauge `W = -ln pi`, `U(a,b) = -ln(M(a,b) / pi_b)`.
    pub fn potentials(&self) -> Potentials {
        let k = self.k;
        let mut pair = vec![Energy::Hard; k * k];
        for a in 0..k {
            for b in a..k {
                let e = if self.hard[a * k + b] {
                    Energy::Hard
                } else {
                    let u_ab = -(self.m[a * k + b] / self.pi[b]).ln();
                    let u_ba = -(self.m[b * k + a] / self.pi[a]).ln();
                    Energy::Finite(0.5 * (u_ab + u_ba))
                };
                pair[a * k + b] = e;
                pair[b * k + a] = e;
            }
        }
        let field = self.pi.iter().map(|p| Energy::Finite(-p.ln())).collect();
        Potentials { k, pair, field }
    }

    /// Draws the next state of the broadcast from `a`.
    pub fn sample_next<R: Rng + ?Sized>(&self, a: State, rng: &mut R) -> State {
        let k = self.k;
        let cum = &self.cumulative[a as usize * k..(a as usize + 1) * k];
        sample_cumulative(cum, self.row(a), rng)
    }

    /// Draws a state from `pi`.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        sample_cumulative(&self.pi_cumulative, &self.pi, rng)
    }
}

fn cumulative_sums(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Inverse-CDF draw that never returns a zero-probability state.
pub(crate) fn sample_cumulative<R: Rng + ?Sized>(cum: &[f64], p: &[f64], rng: &mut R) -> State {
    let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
    for (j, (&c, &pj)) in cum.iter().zip(p).enumerate() {
        if u < c && pj > 0.0 {
            return j as State;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0) as State
}

fn check_state_count(k: usize) -> Result<()> {
    if k == 0 || k > MAX_STATES {
        return Err(Error::InvalidParams(format!(
            "state count must be in 1..={MAX_STATES}, got {k}"
        )));
    }
    Ok(())
}

/// Strong connectivity of the support graph plus aperiodicity (gcd of cycle
/// lengths equal to one), decided from the zero pattern only.
fn check_ergodic(k: usize, m: &[f64]) -> Result<()> {
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut level = vec![usize::MAX; k];
        seen[0] = true;
        level[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..k {
                let w = if forward { m[u * k + v] } else { m[v * k + u] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (seen, level)
    };
    let (fwd, level) = reach(true);
    let (bwd, _) = reach(false);
    if let Some(s) = (0..k).find(|&s| !fwd[s] || !bwd[s]) {
        return Err(Error::NonErgodicKernel(format!(
            "state {} is not mutually reachable with state 1",
            s + 1
        )));
    }
    let mut period = 0usize;
    for u in 0..k {
        for v in 0..k {
            if m[u * k + v] > 0.0 {
                let diff = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, diff);
            }
        }
    }
    if period != 1 {
        return Err(Error::NonErgodicKernel(format!("chain has period {period}")));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solves `pi (M - I) = 0`, `sum pi = 1` by LU with one equation replaced.
fn solve_stationary(k: usize, m: &[f64]) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            // row i of the system is column i of (M - I)^T
            a[(i, j)] = m[j * k + i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodicKernel("stationary system is singular".into()))?;
    let mut pi: Vec<f64> = sol.iter().map(|&v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    Ok(pi)
}

/// Works on `D^{1/2} M D^{-1/2}`, symmetric by reversibility.
fn symmetric_second_eigenvalue(k: usize, m: &[f64], pi: &[f64]) -> f64 {
    if k == 1 {
        return 0.0;
    }
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let s = DMatrix::<f64>::from_fn(k, k, |i, j| {
        let a = sq[i] * m[i * k + j] / sq[j];
        let b = sq[j] * m[j * k + i] / sq[i];
        0.5 * (a + b)
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    // drop the Perron eigenvalue
    let top = eig
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    eig.swap_remove(top);
    // largest modulus; on a tie the negative one wins
    eig.into_iter()
        .max_by(|a, b| {
            let (ma, mb) = (a.abs(), b.abs());
            if (ma - mb).abs() <= 1e-13 {
                b.total_cmp(a)
            } else {
                ma.total_cmp(&mb)
            }
        })
        .unwrap_or(0.0)
}

pub fn kernel_from_potentials(pot: &Potentials) -> Result<SpinKernel> {
    SpinKernel::from_potentials(pot)
}

pub fn potentials_from_kernel(kernel: &SpinKernel) -> Potentials {
    kernel.potentials()
}

pub fn coloring_kernel(k: usize) -> Result<SpinKernel> {
    SpinKernel::coloring(k)
}

pub fn second_eigenvalue(kernel: &SpinKernel) -> f64 {
    kernel.lambda()
}

pub fn kesten_stigum_ok(kernel: &SpinKernel, d: usize) -> KestenStigum {
    kernel.kesten_stigum(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn free_potentials_give_uniform_kernel() {
        let k = SpinKernel::from_potentials(&Potentials::free(3).unwrap()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!(close(k.entry(a, b), 1.0 / 3.0));
            }
            assert!(close(k.pi()[a as usize], 1.0 / 3.0));
        }
    }

    #[test]
    fn coloring_potentials_give_coloring_kernel() {
        let k = SpinKernel::from_potentials(&Potentials::coloring(3).unwrap()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 0.0 } else { 0.5 };
                assert_eq!(k.entry(a, b) == 0.0, a == b);
                assert!(close(k.entry(a, b), want));
            }
        }
        assert!(k.is_coloring());
        assert!(k.is_hard(1, 1) && !k.is_hard(0, 1));
    }

    #[test]
    fn two_state_soft_potential() {
        let mut pot = Potentials::free(2).unwrap();
        pot.set_pair(0, 1, Energy::Finite(2f64.ln()));
        let k = SpinKernel::from_potentials(&pot).unwrap();
        assert!(close(k.entry(0, 0), 2.0 / 3.0));
        assert!(close(k.entry(0, 1), 1.0 / 3.0));
        assert!(close(k.entry(1, 1), 2.0 / 3.0));
        assert!(close(k.pi()[0], 0.5));
        assert!(close(k.lambda(), 1.0 / 3.0));
    }

    #[test]
    fn nonnormalizable_row() {
        let mut pot = Potentials::free(2).unwrap();
        pot.set_pair(0, 0, Energy::Hard);
        pot.set_pair(0, 1, Energy::Hard);
        assert_eq!(
            SpinKernel::from_potentials(&pot).unwrap_err(),
            Error::NonNormalizable { row: 1 }
        );
    }

    #[test]
    fn two_coloring_is_periodic() {
        assert!(matches!(SpinKernel::coloring(2), Err(Error::NonErgodicKernel(_))));
        assert!(matches!(
            SpinKernel::from_potentials(&Potentials::coloring(2).unwrap()),
            Err(Error::NonErgodicKernel(_))
        ));
    }

    #[test]
    fn reducible_kernel_rejected() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(SpinKernel::from_rows(&rows), Err(Error::NonErgodicKernel(_))));
    }

    #[test]
    fn nonreversible_kernel_rejected() {
        // cyclic drift on three states
        let rows = vec![
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.8, 0.1, 0.1],
        ];
        assert!(matches!(SpinKernel::from_rows(&rows), Err(Error::NotReversible { .. })));
    }

    #[test]
    fn coloring_spectrum() {
        let k3 = SpinKernel::coloring(3).unwrap();
        assert!(close(k3.lambda(), -0.5));
        let k4 = SpinKernel::coloring(4).unwrap();
        assert!(close(k4.lambda(), -1.0 / 3.0));
        for k in 3..=12 {
            let kern = SpinKernel::coloring(k).unwrap();
            assert!(close(kern.lambda(), -1.0 / (k - 1) as f64), "k={k}");
        }
        assert!(close(SpinKernel::uniform(4).unwrap().lambda(), 0.0));
    }

    #[test]
    fn kesten_stigum_cases() {
        let k3 = SpinKernel::coloring(3).unwrap();
        let ks = k3.kesten_stigum(2);
        assert!(ks.below && close(ks.value, 0.5));
        let ks = k3.kesten_stigum(4);
        assert!(!ks.below && close(ks.value, 1.0));
        let u = SpinKernel::uniform(3).unwrap();
        for d in [1, 5, 100] {
            let ks = u.kesten_stigum(d);
            assert!(ks.below && ks.value.abs() < 1e-12);
        }
    }

    #[test]
    fn p_min_and_mask() {
        let rows = vec![vec![0.5, 0.5, 0.0], vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]];
        let k = SpinKernel::from_rows(&rows).unwrap();
        assert!(close(k.p_min(), 0.25));
        assert!(k.is_hard(0, 2) && k.is_hard(2, 0) && !k.is_hard(1, 2));
        assert!(close(k.pi()[1], 0.5));
    }

    #[test]
    fn sampling_never_hits_forbidden_states() {
        let k = SpinKernel::coloring(3).unwrap();
        let mut rng = crate::rng::stream_rng(1, 0);
        for _ in 0..10_000 {
            assert_ne!(k.sample_next(1, &mut rng), 1);
        }
    }

    /// A random reversible kernel: symmetric conductances over a random law.
    fn reversible_rows(k: usize, weights: &[f64], zero_mask: &[bool]) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; k]; k];
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                let v = if zero_mask[idx] && a != b && b != a + 1 { 0.0 } else { weights[idx] };
                w[a][b] = v;
                w[b][a] = v;
                idx += 1;
            }
        }
        w.into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn potentials_round_trip(
            k in 2usize..6,
            weights in prop::collection::vec(0.05f64..1.0, 21),
            mask in prop::collection::vec(any::<bool>(), 21),
        ) {
            let rows = reversible_rows(k, &weights, &mask);
            let kernel = SpinKernel::from_rows(&rows).unwrap();
            let back = SpinKernel::from_potentials(&kernel.potentials()).unwrap();
            for a in 0..k as State {
                for b in 0..k as State {
                    prop_assert!((kernel.entry(a, b) - back.entry(a, b)).abs() < 1e-12);
                    prop_assert_eq!(kernel.is_hard(a, b), back.is_hard(a, b));
                }
            }
            for c in 0..k {
                prop_assert!((kernel.pi()[c] - back.pi()[c]).abs() < 1e-12);
            }
        }

        #[test]
        fn stationarity_and_balance(
            k in 2usize..7,
            weights in prop::collection::vec(0.05f64..1.0, 28),
            mask in prop::collection::vec(any::<bool>(), 28),
        ) {
            let rows = reversible_rows(k, &weights, &mask);
            let kernel = SpinKernel::from_rows(&rows).unwrap();
            let pi = kernel.pi();
            for b in 0..k {
                let flow: f64 = (0..k).map(|a| pi[a] * rows[a][b]).sum();
                prop_assert!((flow - pi[b]).abs() < 1e-12);
                for a in 0..k {
                    prop_assert!((pi[a] * rows[a][b] - pi[b] * rows[b][a]).abs() < 1e-12);
                }
            }
            prop_assert!(kernel.lambda().abs() < 1.0);
        }
    }
}
