use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use multiform::finite_group::{obstruction_report, GroupSpec};
use multiform::harness::{run_scan, ScanConfig};
use multiform::linear_forms::FormFamily;
use multiform::operator::{maximal_norm_lower, op_norm_lower, witness_hash, FunctionVec, MultilinearInstance};
use multiform::random_matrix::{
    chernoff_tail_check, matrix_form, row_sum_sup, sample_matrix, spectral_norm_samples, weak_norm_bruteforce,
    MatrixModel, PairSet,
};
use multiform::random_measure::{density_for, sample_r, SelectorModel};
use multiform::reduction::check_random_instance;
use multiform::rng::{purpose, stream_id};
use multiform::trace::{
    expected_trace_exact, matrix_trace_exact, matrix_trace_monte_carlo, trace_monte_carlo, TraceConfig,
};
use multiform::Result;

#[derive(Parser)]
#[command(name = "multiform", version, about = "Experiments on random multilinear operator forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gauss-sum bound and the quadratic obstruction on Z_p^d x Z_p (JSON).
    Obstruction {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        d: u32,
    },
    /// One sampled kernel r on [-N, N] (CSV x,value).
    Sample {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Operator norm lower bounds over sampled kernels (CSV trial,estimate,witness_hash).
    Norm {
        #[arg(long)]
        family: String,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 1)]
        window: i64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimate the maximal operator instead.
        #[arg(long)]
        maximal: bool,
    },
    /// Cauchy-Schwarz step and exceptional bound on random instances (JSON lines).
    ReduceCheck {
        #[arg(long)]
        family: String,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact expected trace moment against Monte Carlo (JSON).
    TraceOracle {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: u32,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the fully independent matrix model.
        #[arg(long)]
        matrix: bool,
    },
    /// Fully independent matrix model experiments.
    Matrix {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Slot forms L_1..L_M; defaults to x; y; x+y truncated to M forms.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_enum)]
        mode: MatrixMode,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter scan from a JSON config (CSV on stdout).
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON summary here instead of stderr.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Write (gamma, log2 N, log2 mean) rows here.
        #[arg(long)]
        emit_plot_data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixMode {
    Form,
    Weak,
    Chernoff,
    Rowsum,
    Scaling,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn default_slots(m: usize) -> Result<FormFamily> {
    let all = ["1,0", "0,1", "1,1"];
    if !(2..=3).contains(&m) {
        return Err(multiform::Error::InvalidParameter(format!("no default family for M = {m}")));
    }
    all[..m].join("; ").parse()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Obstruction { p, d } => {
            let r = obstruction_report(GroupSpec::new(p, d)?)?;
            print_json(&json!({
                "p": r.p,
                "d": r.d,
                "gauss_max": r.gauss_max,
                "expected": r.expected,
                "trilinear_value": r.trilinear_re,
                "trilinear_imag": r.trilinear_im,
                "trilinear_uniform_abs": r.trilinear_uniform_abs,
                "norm_product": r.norm_product,
                "ratio": r.ratio,
            }))
        }
        Command::Sample { n, gamma, density, seed } => {
            let r = sample_r(&SelectorModel::from_gamma(n, gamma, density, seed, 0)?);
            println!("x,value");
            let ni = n as i64;
            for x in -ni..=ni {
                println!("{x},{:.17e}", r.get(x));
            }
            Ok(())
        }
        Command::Norm { family, n, gamma, density, window, trials, restarts, iters, seed, maximal } => {
            let family: FormFamily = family.parse()?;
            println!("trial,estimate,witness_hash");
            for t in 0..trials as u64 {
                let model = SelectorModel::from_gamma(n, gamma, density, seed, stream_id(&[purpose::KERNEL, t]))?;
                let inst = MultilinearInstance::new(family.clone(), sample_r(&model), window, n as i64)?;
                let restart_seed = stream_id(&[seed, purpose::RESTART, t]);
                let (value, hash) = if maximal {
                    let grid = (8 * window as usize * n as usize).max(inst.side());
                    let est = maximal_norm_lower(&inst, grid, restarts, iters, restart_seed)?;
                    let flat = |v: &[num_complex::Complex64]| v.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<_>>();
                    let gs: Vec<Vec<f64>> = est.gs.iter().map(|g| flat(g)).collect();
                    (est.value, witness_hash(&flat(&est.f), &gs))
                } else {
                    let est = op_norm_lower(&inst, restarts, iters, restart_seed)?;
                    (est.value, est.witness_hash)
                };
                println!("{t},{value:.17e},{hash:016x}");
            }
            Ok(())
        }
        Command::ReduceCheck { family, n, gamma, density, trials, seed } => {
            let family: FormFamily = family.parse()?;
            let p = density_for(n, gamma, density)?;
            for t in 0..trials as u64 {
                let c = check_random_instance(&family, n, p, seed, t)?;
                println!(
                    "{}",
                    json!({"trial": t, "lhs2": c.lhs2, "rhs": c.rhs, "B_size": c.b_size, "holds": c.holds})
                );
            }
            Ok(())
        }
        Command::TraceOracle { n, p, q, trials, seed, matrix } => {
            let (exact, mc) = if matrix {
                (matrix_trace_exact(n, p, q)?.exact, matrix_trace_monte_carlo(n, p, q, trials, seed)?)
            } else {
                let cfg = TraceConfig::new(n, p, q)?;
                (expected_trace_exact(&cfg)?, trace_monte_carlo(&cfg, trials, seed)?)
            };
            print_json(&json!({
                "exact": exact,
                "mc_mean": mc.mean,
                "mc_stderr": mc.stderr,
                "z_score": mc.z_score(exact),
            }))
        }
        Command::Matrix { n, gamma, density, m, family, mode, trials, seed } => {
            let model = MatrixModel::from_gamma(n, gamma, density, seed, 0)?;
            let family = match family {
                Some(f) => f.parse()?,
                None => default_slots(m)?,
            };
            let sample_for = |t: u64| sample_matrix(&model.with_stream(stream_id(&[purpose::MATRIX, seed, t])));
            match mode {
                MatrixMode::Form => {
                    println!("trial,value");
                    for t in 0..trials as u64 {
                        let s = sample_for(t);
                        let ones: Vec<FunctionVec> = family
                            .forms()
                            .iter()
                            .map(|l| FunctionVec::constant(l.range_half_width(n as i64, n as i64), 1.0))
                            .collect();
                        println!("{t},{:.17e}", matrix_form(&s, &family, &ones)?);
                    }
                }
                MatrixMode::Weak => {
                    println!("trial,value,e1,e2");
                    for t in 0..trials as u64 {
                        let w = weak_norm_bruteforce(&sample_for(t), &family)?;
                        println!("{t},{:.17e},{},{}", w.value, w.witness.size(0), w.witness.size(1));
                    }
                }
                MatrixMode::Chernoff => {
                    print_json(&chernoff_tail_check(&model, &PairSet::full(n), &[1.0, 2.0, 3.0], trials, seed)?)?;
                }
                MatrixMode::Rowsum => print_json(&row_sum_sup(&model, trials, seed))?,
                MatrixMode::Scaling => {
                    println!("trial,spectral_norm");
                    for (t, v) in spectral_norm_samples(&model, trials, seed).iter().enumerate() {
                        println!("{t},{v:.17e}");
                    }
                }
            }
            Ok(())
        }
        Command::Scan { config, summary, emit_plot_data } => {
            let text = fs::read_to_string(&config)?;
            let cfg: ScanConfig = serde_json::from_str(&text)?;
            let result = run_scan(&cfg)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", result.to_csv());
            let doc = serde_json::to_string_pretty(&json!({ "fits": result.fits, "warnings": result.warnings }))?;
            match summary {
                Some(path) => fs::write(&path, doc)?,
                None => eprintln!("{doc}"),
            }
            if let Some(path) = emit_plot_data {
                let mut out = String::from("gamma,log2_n,log2_mean\n");
                for (g, x, y) in result.plot_data() {
                    out.push_str(&format!("{g},{x},{y}\n"));
                }
                fs::write(&path, out)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
