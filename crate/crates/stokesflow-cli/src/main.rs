//! Command-line front end for the reflection solver.
//!
//! Four subcommands share one JSON scenario format: `validate` checks a
//! particle configuration and prints its separation report, `run` drives the
//! reflection iteration and writes report + residual artifacts, `sweep`
//! measures the contraction ratio across a dilution family, and `grid`
//! samples the solved field on a rectangular grid.
//!
//! Artifacts are written atomically (temp file + rename in the target
//! directory), so an interrupted invocation never leaves a truncated file.
//! All output is deterministic: rerunning a scenario reproduces every
//! artifact byte for byte. Exit codes: 0 success, 1 usage/parse/I-O errors,
//! 2 configuration rejected, 3 iteration cap reached, 4 divergence guard.

mod errors;
mod scenario;

use std::env;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use tempfile::NamedTempFile;

use stokesflow::analysis::contraction_sweep;
use stokesflow::fields::{evaluate_strain, evaluate_velocity, FlowField};
use stokesflow::geometry::validate_config;
use stokesflow::reflections::{run, IterationReport, SolverOptions, Terminated};
use stokesflow::Error;

use crate::errors::{CliError, EXIT_DIVERGED, EXIT_MAX_ITERATIONS};
use crate::scenario::{GridSpec, Scenario};

const ENV_HELP: &str = "Environment:\n  STOKESFLOW_OUT  default artifact directory when neither --out nor the scenario names one";

/// Deterministic method-of-reflections solver for rigid spheres in Stokes flow.
#[derive(Parser)]
#[command(name = "stokesflow", version, about, after_help = ENV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override the scenario's surface quadrature order.
    #[arg(long, global = true, value_name = "K")]
    quad_order: Option<usize>,
    /// Artifact directory; beats the scenario's output.dir and STOKESFLOW_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the particle configuration and print its separation report.
    Validate { scenario: PathBuf },
    /// Run the reflection iteration; write report.json and residuals.csv.
    Run { scenario: PathBuf },
    /// Sweep the contraction ratio over phi0; write sweep.csv and sweep.json.
    Sweep { scenario: PathBuf },
    /// Evaluate the solved field on a grid; write grid.csv.
    Grid { scenario: PathBuf },
}

fn main() {
    process::exit(i32::from(real_main()));
}

fn real_main() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return clap_exit(e),
    };
    if let Some(n) = cli.threads {
        // First rayon call in the process, so building the global pool here
        // can only fail if it already exists; either way work proceeds.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn clap_exit(e: clap::Error) -> u8 {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        print!("{e}");
        0
    } else {
        eprint!("{e}");
        1
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Run { scenario } => cmd_run(scenario, cli),
        Command::Sweep { scenario } => cmd_sweep(scenario, cli),
        Command::Grid { scenario } => cmd_grid(scenario, cli),
    }
}

// ---------------------------------------------------------------------------
// Scenario plumbing
// ---------------------------------------------------------------------------

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Solver options after CLI overrides, validated up front so option mistakes
/// are usage errors rather than library errors.
fn solver_options(scen: &Scenario, cli: &Cli) -> Result<SolverOptions, CliError> {
    let mut opts = scen.solver;
    if let Some(k) = cli.quad_order {
        opts.quadrature_order = k;
    }
    opts.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(opts)
}

/// Artifact directory: `--out`, then the scenario, then the environment,
/// then the working directory.
fn out_dir(cli: &Cli, scen: &Scenario) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| scen.output.dir.clone())
        .or_else(|| env::var_os("STOKESFLOW_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn check_grid(spec: &GridSpec) -> Result<(), CliError> {
    if spec.shape.iter().any(|&n| n == 0) {
        return Err(CliError::Usage(format!(
            "grid shape must be positive on every axis, got {:?}",
            spec.shape
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

/// Write `bytes` to `dir/name` atomically: a temp file in the same directory
/// is renamed over the target, so readers never observe a partial artifact.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot stage a file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))?;
    let target = dir.join(name);
    tmp.persist(&target)
        .map_err(|e| CliError::Io(format!("cannot finalize {}: {e}", target.display())))?;
    Ok(())
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize artifact: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// The run artifacts: report.json plus the residual history as CSV. Shared
/// by the success and divergence paths, so a tripped guard still leaves its
/// report behind for post-mortem inspection.
fn write_run_artifacts(dir: &Path, report: &IterationReport) -> Result<(), CliError> {
    write_atomic(dir, "report.json", pretty_json(report)?.as_bytes())?;
    let mut csv = String::from("k,residual\n");
    for (k, r) in report.residuals.iter().enumerate() {
        csv.push_str(&format!("{k},{r}\n"));
    }
    write_atomic(dir, "residuals.csv", csv.as_bytes())
}

// ---------------------------------------------------------------------------
// Grid rendering
// ---------------------------------------------------------------------------

fn axis_coord(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n <= 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Velocity (and optionally strain) at one node; `None` marks a node the
/// field cannot be cleanly evaluated at (kernel singularity, sphere surface).
fn node_values(field: &FlowField, x: &Vector3<f64>, with_strain: bool) -> Option<Vec<f64>> {
    let u = evaluate_velocity(field, x).ok()?;
    let mut vals = vec![u.x, u.y, u.z];
    if with_strain {
        let e = evaluate_strain(field, x).ok()?;
        vals.extend([e.xx(), e.xy(), e.xz(), e.yy(), e.yz()]);
    }
    Some(vals)
}

/// Render the grid CSV: row-major over the shape with the z index fastest,
/// one row per node, a trailing sentinel column flagging rows whose values
/// are NaN because evaluation failed at that node.
fn render_grid(field: &FlowField, spec: &GridSpec) -> String {
    let mut out = String::from("x,y,z,ux,uy,uz");
    if spec.strain {
        out.push_str(",exx,exy,exz,eyy,eyz");
    }
    out.push_str(",flag\n");
    let value_columns = if spec.strain { 8 } else { 3 };
    for ix in 0..spec.shape[0] {
        for iy in 0..spec.shape[1] {
            for iz in 0..spec.shape[2] {
                let x = Vector3::new(
                    axis_coord(spec.lo[0], spec.hi[0], spec.shape[0], ix),
                    axis_coord(spec.lo[1], spec.hi[1], spec.shape[1], iy),
                    axis_coord(spec.lo[2], spec.hi[2], spec.shape[2], iz),
                );
                out.push_str(&format!("{},{},{}", x.x, x.y, x.z));
                match node_values(field, &x, spec.strain) {
                    Some(vals) => {
                        for v in vals {
                            out.push_str(&format!(",{v}"));
                        }
                        out.push_str(",0\n");
                    }
                    None => {
                        for _ in 0..value_columns {
                            out.push_str(",NaN");
                        }
                        out.push_str(",1\n");
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_validate(path: &Path) -> Result<u8, CliError> {
    let scen = load_scenario(path)?;
    let cfg = scen.realize_config()?;
    let report = validate_config(&cfg).map_err(CliError::Lib)?;
    print!("{}", pretty_json(&report)?);
    if report.disjoint && report.theta_ok {
        Ok(0)
    } else {
        match report.overlapping.first() {
            Some(&(i, j)) => eprintln!("error: particles {i} and {j} overlap"),
            None => eprintln!(
                "error: separation margin theta_max = {} is not > 1",
                report.theta_max
            ),
        }
        Ok(2)
    }
}

fn cmd_run(path: &Path, cli: &Cli) -> Result<u8, CliError> {
    let scen = load_scenario(path)?;
    if let Some(g) = &scen.grid {
        check_grid(g)?;
    }
    let cfg = scen.realize_config()?;
    let ambient = scen.ambient_field()?;
    let opts = solver_options(&scen, cli)?;
    let dir = out_dir(cli, &scen);
    match run(&cfg, ambient, &opts) {
        Ok((field, report)) => {
            write_run_artifacts(&dir, &report)?;
            if let Some(g) = &scen.grid {
                write_atomic(&dir, "grid.csv", render_grid(&field, g).as_bytes())?;
            }
            match report.terminated {
                Terminated::Tolerance => Ok(0),
                Terminated::MaxIterations => {
                    eprintln!(
                        "run stopped at the iteration cap ({} iterations); artifacts in {}",
                        report.iterations(),
                        dir.display()
                    );
                    Ok(EXIT_MAX_ITERATIONS)
                }
                // The engine reports divergence through the error channel;
                // this arm exists so the match stays total.
                Terminated::Diverged => Ok(EXIT_DIVERGED),
            }
        }
        Err(Error::Diverged { report }) => {
            write_run_artifacts(&dir, &report)?;
            eprintln!(
                "error: iteration diverged after {} iterations; report retained in {}",
                report.iterations(),
                dir.display()
            );
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(CliError::Lib(e)),
    }
}

fn cmd_sweep(path: &Path, cli: &Cli) -> Result<u8, CliError> {
    let scen = load_scenario(path)?;
    let sw = scen
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("scenario has no sweep section".into()))?;
    if sw.phi0.is_empty() {
        return Err(CliError::Usage("sweep needs a non-empty phi0 list".into()));
    }
    let family = scen.sweep_family(&sw.family)?;
    let opts = solver_options(&scen, cli)?;
    let result = contraction_sweep(&family, &sw.phi0, &opts).map_err(CliError::Lib)?;
    let dir = out_dir(cli, &scen);
    let mut csv = String::from("phi0,rho,N,seed,theta_max,iterations\n");
    for row in &result.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.phi0, row.rho, row.n, row.seed, row.theta_max, row.iterations
        ));
    }
    write_atomic(&dir, "sweep.csv", csv.as_bytes())?;
    write_atomic(&dir, "sweep.json", pretty_json(&result)?.as_bytes())?;
    Ok(0)
}

fn cmd_grid(path: &Path, cli: &Cli) -> Result<u8, CliError> {
    let scen = load_scenario(path)?;
    let g = scen
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Usage("scenario has no grid section".into()))?;
    check_grid(g)?;
    let cfg = scen.realize_config()?;
    let ambient = scen.ambient_field()?;
    let opts = solver_options(&scen, cli)?;
    let (field, _) = run(&cfg, ambient, &opts).map_err(CliError::Lib)?;
    let dir = out_dir(cli, &scen);
    write_atomic(&dir, "grid.csv", render_grid(&field, g).as_bytes())?;
    Ok(0)
}
