use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prox_adc::certificate::{log_to_csv, verify, CertificateFile};
use prox_adc::instances::{gen_constrained, gen_unconstrained, GenConfig, InverseOptValInstance};
use prox_adc::protocol::{default_start, solve_constrained, solve_unconstrained, ProtocolConfig};
use prox_adc::solver::{RunLog, RunOutput, RunStatus};
use rayon::prelude::*;
use serde_json::json;

const EXIT_MAX_OUTER: u8 = 2;
const EXIT_INNER_STALLED: u8 = 3;
const EXIT_ERROR: u8 = 4;
const EXIT_VERIFY_FAILED: u8 = 1;

#[derive(Parser)]
#[command(name = "prox-adc", version, about = "Prox-ADC experiments: generate, solve, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random inverse optimal value instance.
    Generate(GenerateArgs),
    /// Run the method and write the log, summary and certificate.
    Solve(SolveArgs),
    /// Recheck a certificate against its log; exit 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Generate the instance with relative-error constraints.
    #[arg(long)]
    constrained: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Solve this instance file instead of generating one.
    #[arg(long, conflicts_with_all = ["seeds", "constrained"])]
    instance_file: Option<PathBuf>,
    /// Comma-separated seeds, one run per seed in its own subdirectory.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1.5)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma0: f64,
    /// Offset of the smoothing schedule; constrained runs double it until the margins are nonempty.
    #[arg(long, default_value_t = 1)]
    k_tilde: u32,
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    /// Defaults to 1e-2, or 2e-2 for constrained instances.
    #[arg(long)]
    eta_bar: Option<f64>,
    /// Defaults to 1e-2, or 2e-2 for constrained instances.
    #[arg(long)]
    beta_bar: Option<f64>,
    /// Defaults to 10, or 5 for constrained instances.
    #[arg(long)]
    k_bar: Option<usize>,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    #[arg(long, default_value_t = 500)]
    max_inner: usize,
    /// Subproblem tolerance as a fraction of min(eps_k, delta_k).
    #[arg(long, default_value_t = 0.1)]
    tol_sub_ratio: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_feas: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    certificate: PathBuf,
    log: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn generate(args: &InstanceArgs) -> Result<InverseOptValInstance> {
    let c = if args.constrained {
        GenConfig::constrained()
    } else {
        GenConfig::unconstrained()
    };
    Ok(if args.constrained {
        gen_constrained(args.seed, c.n, c.m, c.m1, c.eps, c.d, c.l)?
    } else {
        gen_unconstrained(args.seed, c.n, c.m, c.d, c.l)?
    })
}

fn instance_name(args: &InstanceArgs) -> String {
    let kind = if args.constrained { "constrained" } else { "unconstrained" };
    format!("instance-{kind}-{}.json", args.seed)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(args: &GenerateArgs) -> Result<u8> {
    let inst = generate(&args.instance)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join(instance_name(&args.instance));
    write(&path, &inst.to_json())?;
    println!("{}", path.display());
    Ok(0)
}

fn protocol(args: &SolveArgs, constrained: bool) -> ProtocolConfig {
    let mut cfg = if constrained {
        ProtocolConfig::constrained(args.rho)
    } else {
        ProtocolConfig::unconstrained(args.rho)
    };
    cfg.smoothing.gamma0 = args.gamma0;
    cfg.smoothing.k_tilde = args.k_tilde;
    let p = &mut cfg.params;
    p.lambda = args.lambda;
    p.eta_bar = args.eta_bar.unwrap_or(p.eta_bar);
    p.beta_bar = args.beta_bar.unwrap_or(p.beta_bar);
    p.k_bar = args.k_bar.unwrap_or(p.k_bar);
    p.max_outer = args.max_outer;
    p.max_inner = args.max_inner;
    p.tol_sub_ratio = args.tol_sub_ratio;
    p.tol_feas = args.tol_feas;
    cfg
}

fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Certified => 0,
        RunStatus::MaxOuterExceeded => EXIT_MAX_OUTER,
        RunStatus::InnerLoopStalled => EXIT_INNER_STALLED,
    }
}

/// Solves one instance into `dir`; returns the exit code and a one-line report.
fn solve_one(inst: &InverseOptValInstance, args: &SolveArgs, dir: &Path) -> Result<(u8, String)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cfg = protocol(args, inst.is_constrained());
    let start = default_start(inst);
    let mut summary = json!({
        "seed": inst.seed,
        "constrained": inst.is_constrained(),
        "rho": args.rho,
        "gamma0": args.gamma0,
        "lambda": cfg.params.lambda,
        "eta_bar": cfg.params.eta_bar,
        "beta_bar": cfg.params.beta_bar,
        "k_bar": cfg.params.k_bar,
        "start": start.as_slice(),
    });
    let run: Option<RunOutput> = if inst.is_constrained() {
        let out = solve_constrained(inst, &cfg, start, &mut |_| {})?;
        let feas_log = RunLog {
            records: out.feasibility.log.clone(),
        };
        write(&dir.join("feasibility_log.csv"), &log_to_csv(&feas_log))?;
        summary["k_tilde"] = json!(out.smoothing.k_tilde);
        summary["lipschitz"] = json!(out.lipschitz);
        summary["feasibility"] = json!({
            "v": out.feasibility.v,
            "iterations": out.feasibility.iterations,
            "strictly_feasible": out.strictly_feasible,
            "min_margin": out.margins.iter().copied().fold(f64::INFINITY, f64::min),
            "x0": out.feasibility.x0.as_slice(),
        });
        out.run
    } else {
        summary["k_tilde"] = json!(cfg.smoothing.k_tilde);
        Some(solve_unconstrained(inst, &cfg, start, &mut |_| {})?)
    };
    let Some(run) = run else {
        summary["status"] = json!("FeasibilityFailed");
        summary["exit_code"] = json!(EXIT_INNER_STALLED);
        write(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
        return Ok((EXIT_INNER_STALLED, format!("seed {}: feasibility phase failed", inst.seed)));
    };
    let csv = log_to_csv(&run.log);
    write(&dir.join("log.csv"), &csv)?;
    let code = status_code(run.status);
    let last = run.log.records.last();
    summary["status"] = json!(run.status);
    summary["exit_code"] = json!(code);
    summary["outer_iterations"] = json!(last.map_or(0, |r| r.outer_k + 1));
    summary["total_inner"] = json!(last.map_or(0, |r| r.total_inner));
    summary["objective_f"] = json!(inst.true_objective(&run.x)?);
    summary["x"] = json!(run.x.as_slice());
    let mut line = format!("seed {}: {:?}", inst.seed, run.status);
    if let Some(cert) = run.certificate {
        summary["k0"] = json!(cert.k0);
        line.push_str(&format!(" k0={} F={:.6e}", cert.k0, cert.objective_f));
        let file = CertificateFile::new(cert, &csv);
        write(&dir.join("certificate.json"), &file.to_json())?;
    }
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    line.push_str(&format!(" -> {}", dir.display()));
    Ok((code, line))
}

fn thread_cap(jobs: usize) -> Result<usize> {
    let cap = match std::env::var("PROX_ADC_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("PROX_ADC_THREADS={v:?} is not a positive integer"))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(jobs).max(1))
}

fn cmd_solve(args: &SolveArgs) -> Result<u8> {
    if let Some(path) = &args.instance_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let inst = InverseOptValInstance::from_json(&text)?;
        let (code, line) = solve_one(&inst, args, &args.out)?;
        println!("{line}");
        return Ok(code);
    }
    if args.seeds.is_empty() {
        let inst = generate(&args.instance)?;
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        write(&args.out.join("instance.json"), &inst.to_json())?;
        let (code, line) = solve_one(&inst, args, &args.out)?;
        println!("{line}");
        return Ok(code);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap(args.seeds.len())?)
        .build()?;
    let results: Vec<Result<(u8, String)>> = pool.install(|| {
        args.seeds
            .par_iter()
            .map(|&seed| {
                let spec = InstanceArgs {
                    seed,
                    constrained: args.instance.constrained,
                };
                let dir = args.out.join(format!("seed-{seed}"));
                let inst = generate(&spec)?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("instance.json"), &inst.to_json())?;
                solve_one(&inst, args, &dir).with_context(|| format!("seed {seed}"))
            })
            .collect()
    });
    // The worst outcome decides the exit code: errors, then stalls, then missing certificates.
    let mut code = 0;
    for r in results {
        match r {
            Ok((c, line)) => {
                println!("{line}");
                code = code.max(c);
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                code = EXIT_ERROR;
            }
        }
    }
    Ok(code)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let cert_text = fs::read_to_string(&args.certificate)
        .with_context(|| format!("reading {}", args.certificate.display()))?;
    let log_text = fs::read_to_string(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let file = CertificateFile::from_json(&cert_text)?;
    let report = verify(&file, &log_text);
    for c in &report.checks {
        println!("{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if report.checks.iter().any(|c| c.name == "log_parse") {
        bail!("log {} does not parse", args.log.display());
    }
    Ok(if report.ok() { 0 } else { EXIT_VERIFY_FAILED })
}
