//! The acceptance suite as structured outcomes. Criteria 1 to 10 run here;
//! determinism (11) compares two full reports and lives with the CLI.
//!
//! Reports carry no timings so that identical seeds give identical bytes.

use serde::Serialize;
use serde_json::{json, Value};

use crate::bp_ratio::{contraction_factor, mean_deviation_identity, minimal_contraction_steps, ratio_from_boundary};
use crate::coloring_recursion::{mc_estimate_probs, threshold_scan, type_recursion_exact, ScanStatus};
use crate::error::{Error, Result};
use crate::functionals::{
    convergence_starts, converge_from, extreme_eigenvalues, mixing_time_exact, spectral_tv_bound, transition_matrix,
    Dynamics, StateSpace,
};
use crate::glauber::{
    check_condindep, classify_vertex, coloring_fast_classify, condindep_shape, find_pinning_boundary,
    glauber_components, is_irreducible, membership_trials, seeded_tau,
};
use crate::rng::stream_rng;
use crate::spin_model::{SpinKernel, State};
use crate::tree_config::{broadcast_sample, enumerate, enumerate_with, Boundary, Configuration, TreeShape};

pub const SPEC_VERSION: &str = "1.0";
pub const CRITERIA: [(usize, &str); 11] = [
    (1, "oracle equivalence of the ratio recursion"),
    (2, "duality identity"),
    (3, "contraction of coloring kernels"),
    (4, "dynamics correctness"),
    (5, "irreducibility dichotomy"),
    (6, "conditional independence and membership"),
    (7, "classifier equivalence"),
    (8, "recursion ground truth"),
    (9, "domination and decay"),
    (10, "mixing-scaling probe"),
    (11, "determinism"),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcceptanceReport {
    pub spec_version: String,
    pub seed: u64,
    pub guard: usize,
    pub criteria: Vec<CriterionOutcome>,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

fn outcome(id: usize, passed: bool, summary: String, details: Value) -> CriterionOutcome {
    CriterionOutcome { id, name: CRITERIA[id - 1].1.to_string(), passed, summary, details }
}

/// Runs one criterion (1 to 10). Errors become failed outcomes.
pub fn run_criterion(id: usize, seed: u64, guard: usize) -> CriterionOutcome {
    let res = match id {
        1 => criterion_oracle(guard),
        2 => criterion_duality(guard),
        3 => criterion_contraction(),
        4 => criterion_dynamics(guard),
        5 => criterion_irreducibility(guard),
        6 => criterion_condindep(seed, guard),
        7 => criterion_classifier(seed, guard),
        8 => criterion_recursion(seed, guard),
        9 => criterion_scan(),
        10 => criterion_mixing(guard),
        _ => Err(Error::InvalidParams(format!("criterion {id} is not run by the library"))),
    };
    res.unwrap_or_else(|e| outcome(id, false, format!("error: {e}"), Value::Null))
}

/// Criteria 1 to 10 in order.
pub fn run_all(seed: u64, guard: usize) -> AcceptanceReport {
    AcceptanceReport {
        spec_version: SPEC_VERSION.into(),
        seed,
        guard,
        criteria: (1..=10).map(|id| run_criterion(id, seed, guard)).collect(),
    }
}

const RATIO_INSTANCES: [(usize, usize); 5] = [(3, 1), (3, 2), (3, 3), (4, 1), (4, 2)];

fn odometer(tau: &mut [State], k: usize) -> bool {
    for i in (0..tau.len()).rev() {
        if (tau[i] as usize) + 1 < k {
            tau[i] += 1;
            return true;
        }
        tau[i] = 0;
    }
    false
}

fn criterion_oracle(guard: usize) -> Result<CriterionOutcome> {
    let mut rows = Vec::new();
    let mut passed = true;
    let mut worst_all: f64 = 0.0;
    for (k, l) in RATIO_INSTANCES {
        let shape = TreeShape::new(2, l)?;
        let kernel = SpinKernel::coloring(k)?;
        let level = shape.level_range(l);
        let mut tau = vec![0 as State; level.len()];
        let (mut boundaries, mut degenerate, mut mismatched_support) = (0usize, 0usize, 0usize);
        let mut worst: f64 = 0.0;
        loop {
            boundaries += 1;
            let mut b = Boundary::free(&shape);
            b.freeze_all(level.clone(), &tau);
            let bp = ratio_from_boundary(&shape, &kernel, &b, 0, l);
            let en = enumerate_with(&shape, &kernel, &b, guard);
            match (bp, en) {
                (Ok(r), Ok(e)) => {
                    let mut law = vec![0.0; k];
                    for (cfg, w) in e.iter() {
                        law[cfg[0] as usize] += w;
                    }
                    for c in 0..k {
                        worst = worst.max((r.r[c] - law[c] / kernel.pi()[c]).abs());
                    }
                }
                (Err(Error::ZeroProbabilityBoundary), Err(Error::ZeroProbabilityBoundary)) => degenerate += 1,
                (Err(e), _) | (_, Err(e)) if !matches!(e, Error::ZeroProbabilityBoundary) => return Err(e),
                _ => mismatched_support += 1,
            }
            if !odometer(&mut tau, k) {
                break;
            }
        }
        let ok = worst < 1e-10 && mismatched_support == 0;
        passed &= ok;
        worst_all = worst_all.max(worst);
        rows.push(json!({"k": k, "d": 2, "l": l, "boundaries": boundaries, "zero_probability": degenerate,
            "support_mismatches": mismatched_support, "max_abs_error": worst, "passed": ok}));
    }
    Ok(outcome(1, passed, format!("max abs error {worst_all:.3e} over every boundary"), Value::Array(rows)))
}

fn criterion_duality(guard: usize) -> Result<CriterionOutcome> {
    let mut rows = Vec::new();
    let mut passed = true;
    let mut worst_all: f64 = 0.0;
    for (k, l) in RATIO_INSTANCES {
        let shape = TreeShape::new(2, l)?;
        let kernel = SpinKernel::coloring(k)?;
        for c in 0..k as State {
            let (lhs, rhs) = mean_deviation_identity(&shape, &kernel, l, c, guard)?;
            let gap = (lhs - rhs).abs();
            let ok = gap < 1e-12;
            passed &= ok;
            worst_all = worst_all.max(gap);
            rows.push(json!({"k": k, "l": l, "c": c as usize + 1, "mean_deviation": lhs, "twice_tv": rhs, "passed": ok}));
        }
    }
    let shape = TreeShape::new(2, 1)?;
    let (hand, _) = mean_deviation_identity(&shape, &SpinKernel::coloring(3)?, 1, 0, guard)?;
    let hand_ok = (hand - 1.0).abs() < 1e-12;
    passed &= hand_ok;
    Ok(outcome(
        2,
        passed,
        format!("max |lhs - rhs| {worst_all:.3e}; hand value (k=3,d=2,l=1,c=1) = {hand}"),
        json!({"rows": rows, "hand_value": hand, "hand_value_passed": hand_ok}),
    ))
}

fn criterion_contraction() -> Result<CriterionOutcome> {
    let mut rows = Vec::new();
    let mut passed = true;
    let mut minimal = Vec::new();
    for k in 3..=8usize {
        let kernel = SpinKernel::coloring(k)?;
        for m in 1..=3 {
            let got = contraction_factor(&kernel, m);
            let want = (1.0 / (k - 1) as f64).powi(m as i32);
            let ok = (got - want).abs() < 1e-12;
            passed &= ok;
            rows.push(json!({"k": k, "m": m, "contraction_factor": got, "expected": want, "passed": ok}));
        }
        let m = minimal_contraction_steps(&kernel, 0.25, 16);
        passed &= m.is_some();
        minimal.push(json!({"k": k, "minimal_m_below_quarter": m}));
    }
    Ok(outcome(3, passed, "contraction factor equals (1/(k-1))^m for k=3..8, m=1..3".into(), json!({"rows": rows, "minimal": minimal})))
}

fn dynamics_grid(depth: usize) -> Vec<Dynamics> {
    let mut out = vec![Dynamics::Glauber];
    let mut sizes = vec![1.min(depth), depth];
    sizes.dedup();
    if depth == 0 {
        sizes = vec![0];
    }
    out.extend(sizes.into_iter().map(|block_size| Dynamics::Component { block_size }));
    out
}

fn criterion_dynamics(guard: usize) -> Result<CriterionOutcome> {
    let mut rows = Vec::new();
    let mut passed = true;
    for k in [3usize, 4, 6] {
        let kernel = SpinKernel::coloring(k)?;
        for depth in 0..=2 {
            let shape = TreeShape::new(2, depth)?;
            let space = StateSpace::new(&shape, &kernel, &Boundary::free(&shape), guard)?;
            let (_, components) = glauber_components(&shape, &kernel, &space.boundary, &space.omega);
            let connected = components == 1;
            for dynamics in dynamics_grid(depth) {
                let p = transition_matrix(&space, dynamics, guard)?;
                let mu = space.mu();
                let residual = p.balance_residual(mu);
                let row_error = p.row_sum_error();
                let mut row = json!({"k": k, "d": 2, "depth": depth, "dynamics": dynamics.label(),
                    "states": space.len(), "balance_residual": residual, "row_sum_error": row_error,
                    "connected": connected});
                let mut ok = residual < 1e-12 && row_error < 1e-12;
                if connected {
                    let starts = convergence_starts(mu);
                    let conv = converge_from(&p, mu, &starts, 1e-8, 100_000);
                    let (l2, lmin) = extreme_eigenvalues(&p, mu)?;
                    let lstar = l2.max(lmin.abs());
                    let certificate = (0..1_000_000usize).find(|&t| spectral_tv_bound(lstar, mu, t) < 1e-8);
                    ok &= conv.converged && certificate.is_some();
                    row["starts"] = json!(conv.starts);
                    row["all_starts"] = json!(conv.starts == space.len());
                    row["steps_to_1e-8"] = json!(conv.steps);
                    row["max_tv"] = json!(conv.max_tv);
                    row["lambda_2"] = json!(l2);
                    row["lambda_min"] = json!(lmin);
                    row["certified_steps_all_starts"] = json!(certificate);
                }
                row["passed"] = json!(ok);
                passed &= ok;
                rows.push(row);
            }
        }
    }
    Ok(outcome(
        4,
        passed,
        "reversible to 1e-12 and converged to TV < 1e-8 on every depth <= 2, k in {3,4,6}, d=2 instance".into(),
        Value::Array(rows),
    ))
}

fn criterion_irreducibility(guard: usize) -> Result<CriterionOutcome> {
    let shape = TreeShape::new(2, 2)?;
    let kernel = SpinKernel::coloring(3)?;
    let (irreducible, count) = is_irreducible(&shape, &kernel, &Boundary::free(&shape), guard)?;
    let pin = find_pinning_boundary(&shape, &kernel, guard)?;
    let (pin_ok, pin_json) = match &pin {
        Some(ex) => (
            ex.component_count >= 2,
            json!({"leaves": Configuration::new(ex.pinned.states[shape.level_range(2)].to_vec()).to_line(),
                "pinned": ex.pinned.to_line(), "component_count": ex.component_count, "states": ex.states}),
        ),
        None => (false, Value::Null),
    };
    let passed = irreducible && pin_ok;
    Ok(outcome(
        5,
        passed,
        format!(
            "free boundary: {count} component(s); pinned leaves: {} components",
            pin.as_ref().map_or(0, |p| p.component_count)
        ),
        json!({"free_boundary_components": count, "irreducible": irreducible, "pinning": pin_json}),
    ))
}

fn criterion_condindep(seed: u64, guard: usize) -> Result<CriterionOutcome> {
    let (l, h, d, k) = (4usize, 1usize, 2usize, 3usize);
    let shape = condindep_shape(d, l)?;
    let kernel = SpinKernel::coloring(k)?;
    let parent: State = 0;
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    let mut skipped = 0usize;
    for draw in 0..8u64 {
        if checks.len() == 2 {
            break;
        }
        let mut rng = stream_rng(seed ^ 0xc0de_0006, draw);
        let tau = seeded_tau(&shape, &kernel, l, parent, &mut rng)?;
        match check_condindep(&shape, &kernel, l, h, &tau, parent, None, guard) {
            Ok(r) => {
                worst = worst.max(r.max_discrepancy);
                checks.push(json!({"draw": draw, "tau_leaves": Configuration::new(tau.states[shape.level_range(l + 1)].to_vec()).to_line(),
                    "max_discrepancy": r.max_discrepancy, "eta_checked": r.eta_checked,
                    "component_size": r.component_size, "good_mass": r.good_mass}));
            }
            Err(Error::TooLarge { .. }) | Err(Error::EmptyGoodSet) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let member = membership_trials(&shape, &kernel, l, h, parent, 200, seed ^ 0xc0de_0106, true, guard)?;
    let passed = checks.len() == 2 && worst < 1e-10 && member.trials == 200 && member.counterexamples == 0;
    Ok(outcome(
        6,
        passed,
        format!(
            "max discrepancy {worst:.3e} over {} boundaries; {} triples, {} counterexamples",
            checks.len(),
            member.trials,
            member.counterexamples
        ),
        json!({"k": k, "d": d, "l": l, "h": h, "checks": checks, "skipped_draws": skipped, "membership": member}),
    ))
}

fn criterion_classifier(seed: u64, guard: usize) -> Result<CriterionOutcome> {
    let kernel = SpinKernel::coloring(3)?;
    let compare = |cfg: &Configuration, shape: &TreeShape| -> Result<usize> {
        let fast = coloring_fast_classify(cfg, shape, &kernel)?;
        let mut bad = 0;
        for (x, f) in fast.iter().enumerate() {
            let parent = shape.parent(x).map(|p| cfg.states[p]);
            if classify_vertex(cfg, shape, &kernel, x, parent, guard)? != *f {
                bad += 1;
            }
        }
        Ok(bad)
    };
    let shape = TreeShape::new(2, 2)?;
    let e = enumerate(&shape, &kernel, guard)?;
    let mut exhaustive = 0;
    for (s, _) in e.iter() {
        exhaustive += compare(&Configuration::new(s.to_vec()), &shape)?;
    }
    let deep = TreeShape::new(2, 3)?;
    let mut sampled = 0;
    for i in 0..10_000u64 {
        let mut rng = stream_rng(seed ^ 0xc0de_0007, i);
        sampled += compare(&broadcast_sample(&deep, &kernel, &mut rng, None), &deep)?;
    }
    let passed = exhaustive == 0 && sampled == 0;
    Ok(outcome(
        7,
        passed,
        format!("{} exhaustive configurations and 10000 samples, {} mismatches", e.len(), exhaustive + sampled),
        json!({"exhaustive_configurations": e.len(), "exhaustive_mismatches": exhaustive,
            "samples": 10_000, "sample_mismatches": sampled}),
    ))
}

/// `(p_r, p_2)` by summing over every color count vector.
fn multinomial_sum(k: usize, d: usize, p: f64) -> (f64, f64) {
    let m = k - 1;
    let q = 1.0 - p;
    let fact: Vec<f64> = (0..=d).scan(1.0, |a, i| {
        if i > 0 {
            *a *= i as f64;
        }
        Some(*a)
    }).collect();
    let (mut pr, mut p2) = (0.0, 0.0);
    let mut counts = vec![0usize; m];
    loop {
        if counts.iter().sum::<usize>() == d {
            let w = fact[d] / counts.iter().map(|&n| fact[n]).product::<f64>() / (m as f64).powi(d as i32);
            let blocked: Vec<f64> = counts.iter().map(|&n| 1.0 - q.powi(n as i32)).collect();
            pr += w * blocked.iter().product::<f64>();
            for j in 0..m {
                let others: f64 = (0..m).filter(|&i| i != j).map(|i| blocked[i]).product();
                p2 += w * q.powi(counts[j] as i32) * others;
            }
        }
        // odometer over 0..=d per color
        let mut i = m;
        loop {
            if i == 0 {
                return (pr, p2);
            }
            i -= 1;
            if counts[i] < d {
                counts[i] += 1;
                break;
            }
            counts[i] = 0;
        }
    }
}

fn criterion_recursion(seed: u64, guard: usize) -> Result<CriterionOutcome> {
    let base = type_recursion_exact(3, 2, 1)?;
    let ground = base[0].p_b == 1.0 && base[1].p_b == 0.75;
    let mut worst: f64 = 0.0;
    for k in 3..=6 {
        for d in 1..=6 {
            let seq = type_recursion_exact(k, d, 4)?;
            for w in seq.windows(2) {
                let (pr, p2) = multinomial_sum(k, d, w[0].p_b);
                worst = worst.max((w[1].p_r - pr).abs()).max((w[1].p2 - p2).abs());
            }
        }
    }
    let exact = type_recursion_exact(5, 5, 3)?;
    let mc = mc_estimate_probs(5, 5, 3, 100_000, seed ^ 0xc0de_0008, guard)?;
    let mut mc_rows = Vec::new();
    let mut mc_ok = true;
    for (e, m) in exact.iter().zip(&mc) {
        let ok = m.p_r.covers(e.p_r, 3.0) && m.p2.covers(e.p2, 3.0) && m.p3.covers(e.p3, 3.0) && m.p_b.covers(e.p_b, 3.0);
        mc_ok &= ok;
        mc_rows.push(json!({"l": e.l, "exact_p_b": e.p_b, "mc_p_b": m.p_b.mean, "sigma_p_b": m.p_b.sigma,
            "exact_p_r": e.p_r, "mc_p_r": m.p_r.mean, "exact_p2": e.p2, "mc_p2": m.p2.mean, "within_3_sigma": ok}));
    }
    let passed = ground && worst < 1e-12 && mc_ok;
    Ok(outcome(
        8,
        passed,
        format!("p_b(0) = 1, p_b(k=3,d=2,l=1) = {}; multinomial error {worst:.3e}; MC within 3 sigma: {mc_ok}", base[1].p_b),
        json!({"ground_truth": ground, "multinomial_max_error": worst, "monte_carlo": mc_rows}),
    ))
}

fn criterion_scan() -> Result<CriterionOutcome> {
    let ks: Vec<usize> = (10..=100).collect();
    let out = threshold_scan(&ks, 0.2, None, 40)?;
    let mut failures = Vec::new();
    let mut max_l0 = 0;
    for (s, _) in &out {
        max_l0 = max_l0.max(s.l0.unwrap_or(usize::MAX));
        if !(s.dominated && s.status == ScanStatus::Certified && s.l0.is_some_and(|l| l <= 40)) {
            failures.push(json!(s));
        }
    }
    let passed = failures.is_empty();
    Ok(outcome(
        9,
        passed,
        format!("{} values of k, largest l0 = {max_l0}, {} failures", ks.len(), failures.len()),
        json!({"beta": 0.2, "levels": 40, "rows": out.iter().map(|(s, _)| json!({"k": s.k, "d": s.d, "l0": s.l0,
            "dominated": s.dominated, "double_exp": s.double_exp})).collect::<Vec<_>>(), "failures": failures}),
    ))
}

fn criterion_mixing(guard: usize) -> Result<CriterionOutcome> {
    let mut rows = Vec::new();
    let mut passed = true;
    for k in [3usize, 4, 6] {
        let kernel = SpinKernel::coloring(k)?;
        for depth in 0..=2 {
            let shape = TreeShape::new(2, depth)?;
            let space = StateSpace::new(&shape, &kernel, &Boundary::free(&shape), guard)?;
            for dynamics in [Dynamics::Glauber, Dynamics::Component { block_size: 1.min(depth) }] {
                let p = transition_matrix(&space, dynamics, guard)?;
                let (l2, _) = extreme_eigenvalues(&p, space.mu())?;
                let gap = (1.0 - l2).clamp(0.0, 2.0);
                let mix = mixing_time_exact(&p, space.mu(), 1.0 / (2.0 * std::f64::consts::E), 1_000_000);
                let finite = mix.is_ok();
                let consistent = (gap > 1e-12) == finite;
                passed &= gap > 1e-12 && finite && consistent;
                let (t_mix, lower) = match &mix {
                    Ok(m) => (Some(m.t_mix), m.lower_bound),
                    Err(_) => (None, false),
                };
                rows.push(json!({"n": shape.n(), "depth": depth, "k": k, "d": 2, "dynamics": dynamics.label(),
                    "states": space.len(), "gap": gap, "t_mix": t_mix, "t_mix_lower_bound": lower,
                    "consistent": consistent}));
            }
        }
    }
    let reported: Vec<String> = rows
        .iter()
        .filter(|r| r["k"] == 6 && r["depth"].as_u64() < Some(2) && r["dynamics"] == "glauber")
        .map(|r| format!("n={} t_mix={}", r["n"], r["t_mix"]))
        .collect();
    Ok(outcome(
        10,
        passed,
        format!("gap > 0 and finite t_mix everywhere; k=6 Glauber: {}", reported.join(", ")),
        Value::Array(rows),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_oracle_hand_value() {
        // k=3, d=2 with every child bad
        assert_eq!(multinomial_sum(3, 2, 1.0), (0.5, 0.5));
    }

    #[test]
    fn quick_criteria_pass() {
        for id in [2, 3, 5, 9] {
            let o = run_criterion(id, 1, crate::DEFAULT_GUARD);
            assert!(o.passed, "{o:?}");
        }
    }
}
