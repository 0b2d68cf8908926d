//! `semiprog` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use semiprog::conic::{self, CostResult, CostStatus, SolverSettings};
use semiprog::dynamics::{evolve_state, Choi, Lindbladian};
use semiprog::matcore::{self, c, ket, ketbra, projector, CMatrix};
use semiprog::programmability::{
    cptp_form_check, cptp_form_protocol, pauli_label, pauli_program_protocol,
    port_obstruction_check,
};
use semiprog::protocols::{sample_trajectory, semigroup_family, swap_dephasing_protocol};
use semiprog::Error;

#[derive(Parser)]
#[command(
    name = "semiprog",
    version,
    about = "Programmability of quantum dynamical semigroups"
)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Omit the leading `# generated` line from CSV output.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Worker threads for sampling and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Lindbladian JSON file.
    #[arg(long, short)]
    input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Grid {
    #[arg(long, default_value_t = 10.0)]
    tmax: f64,
    /// Number of time points on [0, tmax], endpoints included.
    #[arg(long, default_value_t = 21)]
    steps: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolName {
    SwapDephasing,
    Ad,
}

#[derive(Subcommand)]
enum Command {
    /// Populations of e^{tL}(ρ0) on a time grid.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        grid: Grid,
        /// Basis index of the initial pure state; defaults to the last level.
        #[arg(long)]
        initial: Option<usize>,
    },
    /// CPTP-programmability verdict as JSON.
    Check {
        #[command(flatten)]
        io: Io,
    },
    /// Pauli mixture weights p(t) of a Pauli Lindbladian.
    PauliProgram {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        grid: Grid,
    },
    /// Quasi-probability sampling of a built-in protocol.
    Protocol {
        #[arg(long, value_enum)]
        name: ProtocolName,
        /// Bell-dephasing rate (swap-dephasing).
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Emission rate (ad).
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Port-based programming cost over an ε sweep.
    Cost {
        #[command(flatten)]
        io: Io,
        /// Comma-separated tolerances.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 10.0)]
        tmax: f64,
        /// Number of time samples on [0, tmax].
        #[arg(long, default_value_t = 20)]
        grid_size: usize,
    },
    /// Diamond norm and implementability of a map given by its Choi operator.
    Diamond {
        #[command(flatten)]
        io: Io,
    },
}

/// Failure modes mapped onto exit codes 2 and 1.
enum Failure {
    Verdict(String),
    Error(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Error(e.to_string())
    }
}

type Run = Result<(), Failure>;

struct Ctx {
    quiet: bool,
    timestamp: bool,
    threads: Option<usize>,
}

impl Ctx {
    fn info(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// `%.12g`-style formatting.
fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..12).contains(&exp) {
        trim(&format!("{:.*}", (11 - exp) as usize, x))
    } else {
        format!("{}e{}", trim(mant), exp)
    }
}

/// JSON number carrying the same 12 significant digits as the CSV output.
fn jnum(x: f64) -> Value {
    json!(num(x).parse::<f64>().unwrap_or(x))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn read_lindbladian(path: &Path) -> Result<Lindbladian, Failure> {
    Lindbladian::from_json(&read(path)?)
        .map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn emit(ctx: &Ctx, output: &Option<PathBuf>, body: &str, csv: bool) -> Run {
    let mut text = String::new();
    if csv && ctx.timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        text.push_str(&format!("# generated {secs}\n"));
    }
    text.push_str(body);
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Error(format!("{}: {e}", p.display()))),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn grid_points(grid: &Grid) -> Result<Vec<f64>, Failure> {
    if !(grid.tmax > 0.0) || grid.steps < 2 {
        return Err(Failure::Error(format!(
            "need tmax > 0 and steps ≥ 2 (got {}, {})",
            grid.tmax, grid.steps
        )));
    }
    Ok(conic::time_grid(grid.tmax, grid.steps)?)
}

fn complex_json(m: &CMatrix) -> Value {
    let rows: Vec<Value> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| json!([jnum(m[(i, j)].re), jnum(m[(i, j)].im)]))
        .collect();
    Value::Array(rows)
}

fn simulate(ctx: &Ctx, io: &Io, grid: &Grid, initial: Option<usize>) -> Run {
    let l = read_lindbladian(&io.input)?;
    let d = l.dim();
    let k = initial.unwrap_or(d - 1);
    if k >= d {
        return Err(Failure::Error(format!(
            "initial level {k} outside dimension {d}"
        )));
    }
    let rho0 = projector(&ket(d, k));
    let mut rows = vec![];
    for t in grid_points(grid)? {
        let rho = evolve_state(&l, &rho0, t)?;
        let mut row = vec![num(t)];
        row.extend((0..d).map(|i| num(rho[(i, i)].re)));
        rows.push(row);
    }
    let names: Vec<String> = std::iter::once("t".to_string())
        .chain((0..d).map(|i| format!("rho_{i}{i}")))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    ctx.info(&format!("simulated {} time points", rows.len()));
    emit(ctx, &io.output, &csv(&header, &rows), true)
}

fn check(ctx: &Ctx, io: &Io) -> Run {
    let l = read_lindbladian(&io.input)?;
    let d = l.dim();
    let h = l.hamiltonian();
    let traceless = h - matcore::identity(d) * (h.trace() / c(d as f64, 0.0));
    let coherent = matcore::max_abs(&traceless) > 1e-12;
    let port = port_obstruction_check(&l, 1e-9);
    let mut verdict = json!({ "port_obstructed": port.is_obstructed() });
    let programmable = match cptp_form_check(&l) {
        None => {
            verdict["cptp_programmable"] = json!(false);
            verdict["reason"] = json!(if coherent {
                "coherent"
            } else {
                "no_channel_form"
            });
            false
        }
        Some(form) => {
            verdict["alpha"] = jnum(form.alpha);
            verdict["channel_choi"] = complex_json(&form.channel_choi.matrix);
            if cptp_form_protocol(&l, &form)?.is_some() {
                verdict["cptp_programmable"] = json!(true);
                verdict["reason"] = json!("measure_and_prepare");
            } else {
                verdict["cptp_programmable"] = Value::Null;
                verdict["reason"] = json!("channel_form_only");
            }
            true
        }
    };
    let body = serde_json::to_string_pretty(&verdict).expect("serializable") + "\n";
    emit(ctx, &io.output, &body, false)?;
    if programmable {
        Ok(())
    } else {
        Err(Failure::Verdict("no CPTP programming protocol".into()))
    }
}

fn pauli_program(ctx: &Ctx, io: &Io, grid: &Grid) -> Run {
    let l = read_lindbladian(&io.input)?;
    let times = grid_points(grid)?;
    let family = match pauli_program_protocol(&l) {
        Ok((_, family)) => family,
        Err(e @ (Error::NonPauliJump(_) | Error::NonzeroHamiltonian)) => {
            let body = json!({ "pauli_programmable": false, "reason": e.to_string() });
            emit(
                ctx,
                &io.output,
                &(serde_json::to_string_pretty(&body).expect("serializable") + "\n"),
                false,
            )?;
            return Err(Failure::Verdict(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let n = l.dim().trailing_zeros() as usize;
    let rows: Vec<Vec<String>> = times
        .iter()
        .map(|&t| {
            let p = family.at(t);
            std::iter::once(num(t))
                .chain((0..family.dim).map(|k| num(p[(k, k)].re)))
                .collect()
        })
        .collect();
    let names: Vec<String> = std::iter::once("t".to_string())
        .chain((0..family.dim).map(|k| format!("p_{}", pauli_label(n, k))))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    emit(ctx, &io.output, &csv(&header, &rows), true)
}

#[allow(clippy::too_many_arguments)]
fn protocol(
    ctx: &Ctx,
    name: ProtocolName,
    lambda: f64,
    gamma: f64,
    grid: &Grid,
    samples: usize,
    seed: u64,
    output: &Option<PathBuf>,
) -> Run {
    if samples == 0 {
        return Err(Failure::Error("samples must be at least 1".into()));
    }
    let times = grid_points(grid)?;
    let (proto, rho0) = match name {
        ProtocolName::SwapDephasing => (swap_dephasing_protocol(lambda)?, ketbra(4, 1, 1)),
        ProtocolName::Ad => (
            semigroup_family(&Lindbladian::emission(gamma)?)?,
            ketbra(2, 1, 1),
        ),
    };
    ctx.info(&format!(
        "{}: κ = {}, {} points × {samples} samples",
        proto.label,
        proto.kappa(),
        times.len()
    ));
    let rows = sample_trajectory(&proto, &rho0, &rho0, &times, samples, seed, ctx.threads)?;
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.t),
                num(r.exact),
                num(r.estimate),
                num(r.stderr),
                r.n_samples.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    emit(
        ctx,
        output,
        &csv(
            &["t", "exact", "estimate", "stderr", "n_samples", "seed"],
            &rows,
        ),
        true,
    )
}

fn cost(ctx: &Ctx, io: &Io, epsilon: &[f64], tmax: f64, grid_size: usize) -> Run {
    let l = read_lindbladian(&io.input)?;
    if epsilon.is_empty() || epsilon.iter().any(|&e| !(e >= 0.0)) {
        return Err(Failure::Error("epsilon entries must be ≥ 0".into()));
    }
    let times = conic::time_grid(tmax, grid_size)?;
    let family = semiprog::protocols::ProgramStateFamily::port_based(&l);
    let settings = SolverSettings::default();
    let solve_one = |&e: &f64| conic::programming_cost_on_grid(&l, &family, &times, e, &settings);
    let results: Vec<semiprog::Result<CostResult>> = match ctx.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Error(e.to_string()))?
            .install(|| epsilon.par_iter().map(solve_one).collect()),
        None => epsilon.par_iter().map(solve_one).collect(),
    };
    let mut rows = vec![];
    let (mut infeasible, mut stalled) = (false, false);
    for (&e, res) in epsilon.iter().zip(results) {
        let res = res?;
        infeasible |= res.status == CostStatus::NotProgrammable;
        stalled |= res.status == CostStatus::SolverFailure;
        rows.push(vec![
            num(e),
            num(res.gamma),
            res.status.as_str().to_string(),
            res.iterations.to_string(),
            num(res.primal_residual),
            num(res.dual_residual),
        ]);
    }
    let header = [
        "epsilon",
        "gamma",
        "status",
        "iterations",
        "primal_residual",
        "dual_residual",
    ];
    emit(ctx, &io.output, &csv(&header, &rows), true)?;
    if stalled {
        Err(Failure::Error("solver hit the iteration limit".into()))
    } else if infeasible {
        Err(Failure::Verdict(
            "not programmable with port-based programs".into(),
        ))
    } else {
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiJson {
    dim_in: usize,
    dim_out: usize,
    matrix: Vec<[f64; 2]>,
}

fn diamond(ctx: &Ctx, io: &Io) -> Run {
    let text = read(&io.input)?;
    let spec: ChoiJson = serde_json::from_str(&text).map_err(|e| {
        Failure::Error(format!(
            "{}: parse error at line {}, column {}: {e}",
            io.input.display(),
            e.line(),
            e.column()
        ))
    })?;
    let n = spec.dim_in * spec.dim_out;
    if spec.matrix.len() != n * n {
        return Err(Failure::Error(format!(
            "field `matrix` has {} entries, expected {}",
            spec.matrix.len(),
            n * n
        )));
    }
    let m = CMatrix::from_fn(n, n, |i, j| {
        let [re, im] = spec.matrix[i * n + j];
        c(re, im)
    });
    let j = Choi::new(spec.dim_in, spec.dim_out, m)?;
    let dn = conic::diamond_norm(&j)?;
    let nu = match conic::implementability_nu(&j) {
        Ok(v) => jnum(v),
        Err(Error::NotHptp(_)) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let body = json!({ "diamond_norm": jnum(dn), "nu": nu });
    emit(
        ctx,
        &io.output,
        &(serde_json::to_string_pretty(&body).expect("serializable") + "\n"),
        false,
    )
}

fn main() -> ExitCode {
    // usage errors exit with 1; clap's default 2 is reserved for verdicts
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ctx = Ctx {
        quiet: cli.quiet,
        timestamp: !cli.no_timestamp,
        threads: cli.threads,
    };
    if ctx.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Simulate { io, grid, initial } => simulate(&ctx, io, grid, *initial),
        Command::Check { io } => check(&ctx, io),
        Command::PauliProgram { io, grid } => pauli_program(&ctx, io, grid),
        Command::Protocol {
            name,
            lambda,
            gamma,
            grid,
            samples,
            seed,
            output,
        } => protocol(&ctx, *name, *lambda, *gamma, grid, *samples, *seed, output),
        Command::Cost {
            io,
            epsilon,
            tmax,
            grid_size,
        } => cost(&ctx, io, epsilon, *tmax, *grid_size),
        Command::Diamond { io } => diamond(&ctx, io),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict(msg)) => {
            ctx.info(&msg);
            ExitCode::from(2)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
