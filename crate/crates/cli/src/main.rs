//! `treespin`: batch experiments on spin systems over complete trees.
//!
//! Exit codes: 0 success, 1 numeric or model failure, 2 usage error, 3 a
//! guard was hit.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use treespin::acceptance::{run_criterion, AcceptanceReport, CRITERIA, SPEC_VERSION};
use treespin::bp_ratio::{contraction_table, deviation_tail, expected_deviation, tail_record, tail_table_header, TailMode};
use treespin::coloring_recursion::{
    mc_estimate_probs, poisson_bound_sequence, threshold_scan, type_recursion_exact, PoissonBoundParams,
};
use treespin::functionals::{functionals_report, Dynamics as ChainDynamics, StateSpace};
use treespin::glauber::{component_dynamics_step, glauber_trajectory};
use treespin::model_file::ModelSpec;
use treespin::output::{write_rows, write_table};
use treespin::rng::stream_rng;
use treespin::tree_config::{broadcast_sample, reconstruction_table, Boundary, TreeShape};
use treespin::{Error, SpinKernel, DEFAULT_GUARD};

#[derive(Parser, Debug)]
#[command(name = "treespin", version, about = "Spin systems, Glauber dynamics and recursions on complete d-ary trees")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Base seed; every replica draws from its own stream of this seed.
    #[arg(long, global = true, default_value_t = 20240601)]
    seed: u64,
    /// Number of states (colors).
    #[arg(long, global = true, default_value_t = 3)]
    k: usize,
    /// Branching number.
    #[arg(long, global = true, default_value_t = 2)]
    d: usize,
    /// Tree depth.
    #[arg(long, global = true, default_value_t = 2)]
    depth: usize,
    /// Block size `l` of the component dynamics.
    #[arg(long, global = true, default_value_t = 1)]
    block_size: usize,
    /// Monte Carlo sample count.
    #[arg(long, global = true, default_value_t = 10_000)]
    samples: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Largest state space, component or boundary set any command may build.
    #[arg(long, global = true, default_value_t = DEFAULT_GUARD)]
    guard: usize,
    /// Model file (`k=`, `type=`, `U(i,j)=`, `W(i)=`); overrides `--k`.
    #[arg(long, global = true, visible_alias = "file")]
    model: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelType {
    Coloring,
    /// Potentials read from `--file`.
    Custom,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum DynamicsKind {
    Glauber,
    Component,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum RatioWhat {
    Contraction,
    Tail,
    Reconstruction,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a kernel and print it with its stationary law and eigenvalue.
    Model {
        #[arg(long = "type", value_enum, default_value_t = ModelType::Coloring)]
        model_type: ModelType,
    },
    /// Broadcast samples, one configuration per line.
    Sample,
    /// A Glauber or component-dynamics trajectory from a broadcast start.
    Dynamics {
        #[arg(long, value_enum, default_value_t = DynamicsKind::Glauber)]
        dynamics: DynamicsKind,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// Spectral gap, mixing time and entropy functionals on the free tree.
    Mixing {
        #[arg(long, value_enum, default_value_t = DynamicsKind::Glauber)]
        dynamics: DynamicsKind,
        /// Trial functions for the log-Sobolev and comparison probes.
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Ratio recursion: contraction factors, deviation tails, reconstruction.
    Ratio {
        #[arg(long, value_enum, default_value_t = RatioWhat::Contraction)]
        what: RatioWhat,
        /// Largest power for the contraction table.
        #[arg(long, default_value_t = 4)]
        max_m: usize,
        /// Tail threshold.
        #[arg(long, default_value_t = 0.5)]
        z: f64,
        /// Force Monte Carlo tails even when boundaries can be enumerated.
        #[arg(long)]
        monte_carlo: bool,
    },
    /// Monte Carlo type and freeness frequencies of proper colorings.
    Classify,
    /// Exact type recursion with the dominating Poisson sequence.
    Recursion {
        #[arg(long, default_value_t = 10)]
        levels: usize,
        #[arg(long, default_value_t = 0.6)]
        beta_star: f64,
    },
    /// Threshold scan at `d = floor(k (log k + log log k + beta))`.
    Scan {
        #[arg(long, default_value_t = 10)]
        k_min: usize,
        #[arg(long, default_value_t = 100)]
        k_max: usize,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        /// Defaults to `(beta + 1) / 2`.
        #[arg(long)]
        beta_star: Option<f64>,
        #[arg(long, default_value_t = 40)]
        levels: usize,
    },
    /// Run acceptance criteria 1 to 10 and write the report.
    Verify {
        /// Run only these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::TooLarge { .. }) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn kernel_of(g: &Global) -> Result<(SpinKernel, Value)> {
    match &g.model {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec = ModelSpec::parse(&text)?;
            Ok((spec.kernel()?, json!(spec.echo())))
        }
        None => Ok((SpinKernel::coloring(g.k)?, json!(format!("k={}\ntype=coloring\n", g.k)))),
    }
}

fn emit(g: &Global, bytes: &[u8]) -> Result<()> {
    match &g.out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn json_report(g: &Global, command: &str, params: Value, body: Value) -> Result<Vec<u8>> {
    let report = json!({
        "spec_version": SPEC_VERSION,
        "command": command,
        "parameters": {"global": g, "command": params},
        "result": body,
    });
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(buf)
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_table(&mut buf, header, rows)?;
    Ok(buf)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = cli.global;
    match cli.command {
        Command::Model { model_type } => {
            if model_type == ModelType::Custom && g.model.is_none() {
                use clap::CommandFactory;
                Cli::command()
                    .error(clap::error::ErrorKind::MissingRequiredArgument, "--type custom needs --file")
                    .exit();
            }
            let (kernel, echo) = kernel_of(&g)?;
            let k = kernel.k();
            let ks = kernel.kesten_stigum(g.d);
            let rows: Vec<Vec<String>> = (0..k)
                .flat_map(|i| {
                    let kernel = &kernel;
                    (0..k).map(move |j| {
                        vec![
                            (i + 1).to_string(),
                            (j + 1).to_string(),
                            kernel.entry(i as u8, j as u8).to_string(),
                            kernel.pi()[i].to_string(),
                        ]
                    })
                })
                .collect();
            let bytes = match g.format {
                Format::Csv => csv_table(&["i", "j", "m_ij", "pi_i"], &rows)?,
                Format::Json => {
                    let matrix: Vec<Vec<f64>> = (0..k).map(|i| kernel.row(i as u8).to_vec()).collect();
                    json_report(
                        &g,
                        "model",
                        json!({"type": model_type}),
                        json!({"model": echo, "kernel": matrix, "pi": kernel.pi(), "lambda": kernel.lambda(),
                            "kesten_stigum": ks, "coloring": kernel.is_coloring()}),
                    )?
                }
            };
            emit(&g, &bytes)?;
        }
        Command::Sample => {
            let (kernel, _) = kernel_of(&g)?;
            let shape = TreeShape::new(g.d, g.depth)?;
            if shape.n().saturating_mul(g.samples) > g.guard.saturating_mul(100) {
                return Err(Error::TooLarge {
                    what: "sample output".into(),
                    size: (shape.n() * g.samples) as f64,
                    guard: g.guard,
                }
                .into());
            }
            let lines: Vec<String> = (0..g.samples)
                .map(|i| broadcast_sample(&shape, &kernel, &mut stream_rng(g.seed, i as u64), None).to_line())
                .collect();
            let bytes = match g.format {
                Format::Csv => csv_table(
                    &["sample", "config"],
                    &lines.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.clone()]).collect::<Vec<_>>(),
                )?,
                Format::Json => json_report(&g, "sample", json!({}), json!({"samples": lines}))?,
            };
            emit(&g, &bytes)?;
        }
        Command::Dynamics { dynamics, steps } => {
            let (kernel, _) = kernel_of(&g)?;
            let shape = TreeShape::new(g.d, g.depth)?;
            let boundary = Boundary::free(&shape);
            let mut rng = stream_rng(g.seed, 0);
            let start = broadcast_sample(&shape, &kernel, &mut rng, None);
            let mut rows = Vec::with_capacity(steps);
            match dynamics {
                DynamicsKind::Glauber => {
                    let (_, records) = glauber_trajectory(&start, &shape, &kernel, &boundary, steps, &mut rng)?;
                    let mut states = start.states.clone();
                    for r in records {
                        states[r.vertex] = (r.new_state - 1) as u8;
                        rows.push(vec![
                            r.step.to_string(),
                            r.vertex.to_string(),
                            r.old_state.to_string(),
                            r.new_state.to_string(),
                            treespin::Configuration::new(states.clone()).to_line(),
                        ]);
                    }
                }
                DynamicsKind::Component => {
                    let mut cfg = start.clone();
                    for step in 1..=steps {
                        let (next, x) =
                            component_dynamics_step(&cfg, &shape, &kernel, &boundary, g.block_size, &mut rng, g.guard)?;
                        let changed = cfg.states.iter().zip(&next.states).filter(|(a, b)| a != b).count();
                        cfg = next;
                        rows.push(vec![step.to_string(), x.to_string(), changed.to_string(), String::new(), cfg.to_line()]);
                    }
                }
            }
            let header = match dynamics {
                DynamicsKind::Glauber => ["step", "vertex", "old_state", "new_state", "config"],
                DynamicsKind::Component => ["step", "block_root", "changed", "unused", "config"],
            };
            let bytes = match g.format {
                Format::Csv => {
                    let (h, r): (Vec<&str>, Vec<Vec<String>>) = if dynamics == DynamicsKind::Component {
                        (
                            vec!["step", "block_root", "changed", "config"],
                            rows.into_iter().map(|mut r| {
                                r.remove(3);
                                r
                            }).collect(),
                        )
                    } else {
                        (header.to_vec(), rows)
                    };
                    csv_table(&h, &r)?
                }
                Format::Json => json_report(
                    &g,
                    "dynamics",
                    json!({"dynamics": dynamics, "steps": steps}),
                    json!({"start": start.to_line(), "steps": rows}),
                )?,
            };
            emit(&g, &bytes)?;
        }
        Command::Mixing { dynamics, trials } => {
            let (kernel, _) = kernel_of(&g)?;
            let shape = TreeShape::new(g.d, g.depth)?;
            let space = StateSpace::new(&shape, &kernel, &Boundary::free(&shape), g.guard)?;
            let dyn_ = match dynamics {
                DynamicsKind::Glauber => ChainDynamics::Glauber,
                DynamicsKind::Component => ChainDynamics::Component { block_size: g.block_size },
            };
            let report = functionals_report(&space, dyn_, trials, g.seed, g.guard)?;
            let bytes = match g.format {
                Format::Csv => csv_rows(&[report.row()])?,
                Format::Json => json_report(&g, "mixing", json!({"dynamics": dynamics, "trials": trials}), json!(report))?,
            };
            emit(&g, &bytes)?;
        }
        Command::Ratio { what, max_m, z, monte_carlo } => {
            let (kernel, _) = kernel_of(&g)?;
            let params = json!({"what": what, "max_m": max_m, "z": z, "monte_carlo": monte_carlo});
            let bytes = match what {
                RatioWhat::Contraction => {
                    let rows = contraction_table(&kernel, max_m);
                    match g.format {
                        Format::Csv => csv_rows(&rows)?,
                        Format::Json => json_report(&g, "ratio", params, json!(rows))?,
                    }
                }
                RatioWhat::Reconstruction => {
                    let shape = TreeShape::new(g.d, g.depth)?;
                    let rows = reconstruction_table(&shape, &kernel, g.depth, g.guard)?;
                    match g.format {
                        Format::Csv => csv_rows(&rows)?,
                        Format::Json => json_report(&g, "ratio", params, json!(rows))?,
                    }
                }
                RatioWhat::Tail => {
                    let shape = TreeShape::new(g.d, g.depth)?;
                    let mut tails = Vec::new();
                    let mut means = Vec::new();
                    for l in 1..=g.depth {
                        let exact = if monte_carlo {
                            None
                        } else {
                            match deviation_tail(&shape, &kernel, l, z, TailMode::Exact { guard: g.guard }) {
                                Ok(t) => Some(t),
                                Err(Error::TooLarge { .. }) => None,
                                Err(e) => return Err(e.into()),
                            }
                        };
                        let t = match exact {
                            Some(t) => {
                                means.push(json!({"l": l, "expected_deviation": expected_deviation(&shape, &kernel, l, g.guard)?}));
                                t
                            }
                            None => deviation_tail(
                                &shape,
                                &kernel,
                                l,
                                z,
                                TailMode::MonteCarlo { samples: g.samples, seed: g.seed ^ l as u64 },
                            )?,
                        };
                        tails.push(t);
                    }
                    match g.format {
                        Format::Csv => {
                            let exact = tails.iter().all(|t| t.exact);
                            let rows: Vec<Vec<String>> = tails.iter().map(tail_record).collect();
                            csv_table(&tail_table_header(exact), &rows)?
                        }
                        Format::Json => json_report(&g, "ratio", params, json!({"tails": tails, "means": means}))?,
                    }
                }
            };
            emit(&g, &bytes)?;
        }
        Command::Classify => {
            let est = mc_estimate_probs(g.k, g.d, g.depth, g.samples, g.seed, g.guard)?;
            let bytes = match g.format {
                Format::Csv => {
                    let rows: Vec<Vec<String>> = est
                        .iter()
                        .map(|e| {
                            let mut r = vec![e.h.to_string()];
                            for v in [e.p_r, e.p2, e.p3, e.p_b, e.p_free] {
                                r.push(v.mean.to_string());
                                r.push(v.sigma.to_string());
                            }
                            r
                        })
                        .collect();
                    csv_table(
                        &["h", "p_r", "p_r_sigma", "p2", "p2_sigma", "p3", "p3_sigma", "p_b", "p_b_sigma", "p_free", "p_free_sigma"],
                        &rows,
                    )?
                }
                Format::Json => json_report(&g, "classify", json!({}), json!(est))?,
            };
            emit(&g, &bytes)?;
        }
        Command::Recursion { levels, beta_star } => {
            let probs = type_recursion_exact(g.k, g.d, levels)?;
            let params = PoissonBoundParams::new(g.k, g.d, beta_star)?;
            let y = poisson_bound_sequence(&params, levels);
            let rows: Vec<Vec<String>> = probs
                .iter()
                .zip(&y)
                .map(|(t, y)| {
                    vec![
                        g.k.to_string(),
                        g.d.to_string(),
                        t.l.to_string(),
                        t.p_r.to_string(),
                        t.p2.to_string(),
                        t.p3.to_string(),
                        t.p_b.to_string(),
                        t.log_p_b.to_string(),
                        y.to_string(),
                    ]
                })
                .collect();
            let bytes = match g.format {
                Format::Csv => csv_table(&["k", "d", "l", "p_r", "p2", "p3", "p_b", "log_p_b", "y_l"], &rows)?,
                Format::Json => json_report(
                    &g,
                    "recursion",
                    json!({"levels": levels, "beta_star": beta_star}),
                    json!({"types": probs, "poisson": params, "y": y}),
                )?,
            };
            emit(&g, &bytes)?;
        }
        Command::Scan { k_min, k_max, beta, beta_star, levels } => {
            if k_min > k_max {
                bail!("--k-min must not exceed --k-max");
            }
            let ks: Vec<usize> = (k_min..=k_max).collect();
            let out = threshold_scan(&ks, beta, beta_star, levels)?;
            let bytes = match g.format {
                Format::Csv => {
                    let rows: Vec<_> = out.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
                    csv_rows(&rows)?
                }
                Format::Json => {
                    let summaries: Vec<_> = out.iter().map(|(s, _)| s).collect();
                    json_report(
                        &g,
                        "scan",
                        json!({"k_min": k_min, "k_max": k_max, "beta": beta,
                            "beta_star": beta_star.unwrap_or((beta + 1.0) / 2.0), "levels": levels}),
                        json!({"summaries": summaries}),
                    )?
                }
            };
            emit(&g, &bytes)?;
        }
        Command::Verify { only } => {
            let ids: Vec<usize> = if only.is_empty() { (1..=10).collect() } else { only };
            if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
                bail!("criterion {bad} is not run by verify (valid: 1 to 10)");
            }
            let mut criteria = Vec::new();
            for id in ids {
                let t = Instant::now();
                let o = run_criterion(id, g.seed, g.guard);
                // timings go to stderr so the report stays reproducible
                eprintln!(
                    "criterion {id} ({}): {} elapsed_ms={}",
                    CRITERIA[id - 1].1,
                    if o.passed { "PASS" } else { "FAIL" },
                    t.elapsed().as_millis()
                );
                criteria.push(o);
            }
            let report = AcceptanceReport { spec_version: SPEC_VERSION.into(), seed: g.seed, guard: g.guard, criteria };
            let bytes = match g.format {
                Format::Json => {
                    let mut b = serde_json::to_vec_pretty(&report)?;
                    b.push(b'\n');
                    b
                }
                Format::Csv => {
                    let rows: Vec<Vec<String>> = report
                        .criteria
                        .iter()
                        .map(|c| vec![c.id.to_string(), c.name.clone(), c.passed.to_string(), c.summary.clone()])
                        .collect();
                    csv_table(&["id", "name", "passed", "summary"], &rows)?
                }
            };
            emit(&g, &bytes)?;
            if !report.all_passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
