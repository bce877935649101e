//! The `tdisc` command line: `solve`, `check` and `curve`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{self, ProblemConfig, Resolved};
use crate::criterion::{self, GridOptions, InnerOptions};
use crate::design::{self, fmt17, Design};
use crate::error::{Error, Result};
use crate::solver::{self, SolveReport};

#[derive(Debug, Parser)]
#[command(name = "tdisc", version, about = "T-optimal discriminating designs")]
pub struct Cli {
    /// Worker threads for inner fits and grid evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an optimal design and write design, trace, Ψ curve and report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the output files (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `solver.eff_tol`.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Check a design against the equivalence theorem.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Overrides `solver.tol`.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write `x,psi` over the grid for a design.
    Curve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_OPTIMAL: i32 = 2;
pub const EXIT_INVALID_START: i32 = 3;

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_ERROR;
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Solve { config, out, seed, tol } => cmd_solve(&config, out.as_deref(), seed, tol),
        Command::Check { config, design, tol, seed } => cmd_check(&config, &design, tol, seed),
        Command::Curve { config, design, out, seed } => cmd_curve(&config, &design, &out, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidStart(_) => EXIT_INVALID_START,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn load(path: &Path, seed: Option<u64>, eff_tol: Option<f64>, check_tol: Option<f64>) -> Result<(ProblemConfig, Resolved)> {
    let mut cfg = ProblemConfig::load(path)?;
    if let Some(s) = seed {
        cfg.solver.seed = s;
    }
    if let Some(t) = eff_tol {
        cfg.solver.eff_tol = t;
    }
    if let Some(t) = check_tol {
        cfg.solver.tol = t;
    }
    let resolved = cfg.resolve().map_err(|e| e.context(path.display().to_string()))?;
    Ok((cfg, resolved))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_psi_csv(path: &Path, t_value: f64, curve: &[(f64, f64)]) -> Result<()> {
    use std::io::Write;
    let mut f = create(path)?;
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    writeln!(f, "# t_value={}", fmt17(t_value)).map_err(io)?;
    writeln!(f, "x,psi").map_err(io)?;
    for (x, v) in curve {
        writeln!(f, "{},{}", fmt17(*x), fmt17(*v)).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Two stacked rows, points over weights, three decimals.
pub fn format_design(d: &Design) -> String {
    let cells: Vec<(String, String)> = d.iter().map(|(x, w)| (format!("{x:.3}"), format!("{w:.3}"))).collect();
    let width = cells.iter().map(|(a, b)| a.len().max(b.len())).max().unwrap_or(0);
    let row = |f: &dyn Fn(&(String, String)) -> &String| {
        cells.iter().map(|c| format!("{:>width$}", f(c))).collect::<Vec<_>>().join("  ")
    };
    format!("  x  {}\n  w  {}\n", row(&|c| &c.0), row(&|c| &c.1))
}

fn report_text(cfg: &ProblemConfig, r: &Resolved, rep: &SolveReport) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "comparisons: {}", r.problem.comparisons().len());
    let _ = writeln!(s, "status: {} after {} iterations", rep.stop.as_str(), rep.iterations);
    let _ = writeln!(s, "T_P = {}", fmt17(rep.t_value));
    let _ = writeln!(s, "max Psi = {} at x = {}", fmt17(rep.max_psi), fmt17(rep.argmax));
    let _ = writeln!(s, "efficiency >= {}", fmt17(rep.efficiency));
    let _ = writeln!(s, "design:");
    s.push_str(&format_design(&rep.design));
    let _ = writeln!(s, "design (full precision):");
    for (x, w) in rep.design.iter() {
        let _ = writeln!(s, "  {},{}", fmt17(x), fmt17(w));
    }
    let _ = writeln!(s, "trace:");
    let _ = writeln!(s, "  iter  support  t_value                  efficiency");
    for e in &rep.trace {
        let _ = writeln!(s, "  {:>4}  {:>7}  {}  {:.6}", e.iter, e.support_size, fmt17(e.t_value), e.efficiency);
    }
    if rep.warnings.is_empty() {
        let _ = writeln!(s, "warnings: none");
    } else {
        let _ = writeln!(s, "warnings:");
        for w in &rep.warnings {
            let _ = writeln!(s, "  {w}");
        }
    }
    let _ = writeln!(s, "effective configuration:");
    s.push_str(&cfg.to_toml()?);
    Ok(s)
}

fn cmd_solve(config: &Path, out: Option<&Path>, seed: Option<u64>, tol: Option<f64>) -> Result<i32> {
    let (cfg, r) = load(config, seed, tol, None)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    let rep = solver::solve(&r.problem, &r.start, &r.options)?;

    design::write_csv(&rep.design, create(&dir.join(&cfg.output.design))?)?;
    solver::write_trace_csv(&rep.trace, create(&dir.join(&cfg.output.trace))?)?;
    let curve = criterion::psi_curve(&r.problem, &rep.eval, r.options.grid_points)?;
    write_psi_csv(&dir.join(&cfg.output.psi), rep.t_value, &curve)?;
    let text = report_text(&cfg, &r, &rep)?;
    std::fs::write(dir.join(&cfg.output.report), &text)
        .map_err(|e| Error::Io(format!("cannot write report: {e}")))?;
    print!("{text}");
    Ok(if rep.converged() { EXIT_OK } else { EXIT_NOT_OPTIMAL })
}

fn inner_of(r: &Resolved) -> InnerOptions {
    r.options.inner()
}

fn grid_of(r: &Resolved) -> GridOptions {
    let space = r.problem.space();
    GridOptions {
        grid_points: r.options.grid_points,
        refine_tol: r.options.refine_tol.unwrap_or(1e-8 * space.width()),
    }
}

fn cmd_check(config: &Path, design_path: &Path, tol: Option<f64>, seed: Option<u64>) -> Result<i32> {
    let (_, r) = load(config, seed, None, tol)?;
    let d = config::read_design(design_path, &r.problem.space())?;
    let rep = criterion::check_optimality_with(&r.problem, &d, r.tol, grid_of(&r), &inner_of(&r))?;
    println!("design:");
    print!("{}", format_design(&d));
    println!("T_P = {}", fmt17(rep.t_value));
    println!("max Psi = {} at x = {}", fmt17(rep.max_psi), fmt17(rep.argmax));
    println!("gap ratio max Psi / T_P = {}", fmt17(rep.gap_ratio));
    println!("efficiency >= {}", fmt17(rep.efficiency));
    println!("Psi at support:");
    for (x, v) in &rep.support_psi {
        println!("  {},{}", fmt17(*x), fmt17(*v));
    }
    println!("max relative deviation at support = {}", fmt17(rep.support_deviation));
    for d in &rep.diagnosis {
        println!("diagnosis: {d}");
    }
    for w in &rep.warnings {
        println!("warning: {w}");
    }
    println!("result: {} (tol {})", if rep.pass { "pass" } else { "fail" }, rep.tol);
    Ok(if rep.pass { EXIT_OK } else { EXIT_NOT_OPTIMAL })
}

fn cmd_curve(config: &Path, design_path: &Path, out: &Path, seed: Option<u64>) -> Result<i32> {
    let (_, r) = load(config, seed, None, None)?;
    let d = config::read_design(design_path, &r.problem.space())?;
    let eval = criterion::t_value_with(&r.problem, &d, None, &inner_of(&r))?;
    let curve = criterion::psi_curve(&r.problem, &eval, r.options.grid_points)?;
    write_psi_csv(out, eval.value, &curve)?;
    println!("wrote {} rows to {} (T_P = {})", curve.len(), out.display(), fmt17(eval.value));
    Ok(EXIT_OK)
}
