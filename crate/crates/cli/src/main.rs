use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use minlag::harness::{self, ExperimentSpec};
use minlag::solver::{self, NewtonConfig};

#[derive(Parser)]
#[command(name = "minlag", version, about = "Minimal Lagrangian graphs by monotone finite differences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one resolution of a configured problem.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resolution; defaults to the first ladder entry.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Run the whole refinement ladder and write convergence.csv.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-dimensional Neumann Poisson problem with the eigenvalue as unknown.
    Poisson1d {
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Write x,u to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Square and disk gallery with containment audit.
    Gallery {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        h: f64,
    },
}

fn solve(config: PathBuf, out: PathBuf, h: Option<f64>) -> Result<()> {
    let spec = ExperimentSpec::load(&config).with_context(|| format!("reading {}", config.display()))?;
    let h = h.unwrap_or(spec.ladder[0]);
    let o = harness::solve_level(&spec, h).with_context(|| format!("solving at h = {h}"))?;
    std::fs::create_dir_all(&out)?;
    o.mesh.write_csv(BufWriter::new(File::create(out.join("mesh.csv"))?))?;
    solver::export_solution(&out, "solution", &o.mesh, &o.stencils, &o.solution)?;
    let s = &o.solution;
    println!("h = {h}  nodes = {}  c = {:.10}  iterations = {}  residual = {:.3e}  step2 = {}", o.mesh.len(), s.c, s.iterations, s.residual, s.step2_used);
    if let Some(ex) = spec.exact()? {
        println!("error = {:.4e}  |c - c_ex| = {:.4e}", ex.error(o.mesh.nodes(), &s.u, s.anchor), (s.c - ex.c).abs());
    }
    Ok(())
}

fn convergence(config: PathBuf, out: PathBuf) -> Result<()> {
    let spec = ExperimentSpec::load(&config).with_context(|| format!("reading {}", config.display()))?;
    let table = match harness::run_experiment(&spec, Some(&out)) {
        Ok(t) => t,
        Err(f) => bail!("ladder aborted at h = {} after {} levels: {}", f.h, f.partial.rows.len(), f.error),
    };
    let fmt = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$e}")).unwrap_or_else(|| "-".into());
    println!("{:>10} {:>8} {:>11} {:>7} {:>7} {:>12} {:>11}", "h", "nodes", "error", "ratio", "order", "c", "|c-c_ex|");
    for r in &table.rows {
        let ratio = r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let order = r.order.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        println!("{:>10.6} {:>8} {:>11} {:>7} {:>7} {:>12.8} {:>11}", r.h, r.nodes, fmt(r.error, 4), ratio, order, r.c, fmt(r.c_error, 3));
    }
    if let Some(m) = table.mean_order() {
        println!("mean order = {m:.3}");
    }
    Ok(())
}

fn poisson1d(n: usize, out: Option<PathBuf>) -> Result<()> {
    let demo = harness::poisson_1d_demo(n)?;
    println!("n = {n}  c = {:.12}  |c - 1| = {:.4e}", demo.c, (demo.c - 1.0).abs());
    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "x,u")?;
        for (x, u) in demo.x.iter().zip(&demo.u) {
            writeln!(w, "{x:.17e},{u:.17e}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn gallery(out: PathBuf, h: f64) -> Result<()> {
    std::fs::create_dir_all(&out)?;
    let mut summary = BufWriter::new(File::create(out.join("gallery.csv"))?);
    writeln!(summary, "name,nodes,c,iterations,step2_used,max_signed_distance,bound")?;
    let mut failed = Vec::new();
    for (name, run) in harness::run_shape_gallery(h, &NewtonConfig::default(), Some(&out)) {
        match run {
            Ok(e) => {
                let s = &e.output.solution;
                println!("{name:<20} c = {:.8}  max sd = {:+.3e}  (2h = {:.3e})", s.c, e.max_signed_distance, 2.0 * h);
                writeln!(summary, "{name},{},{:.10},{},{},{:.6e},{:.6e}", e.output.mesh.len(), s.c, s.iterations, s.step2_used, e.max_signed_distance, 2.0 * h)?;
            }
            Err(err) => {
                eprintln!("{name}: {err}");
                failed.push(name);
            }
        }
    }
    summary.flush()?;
    if !failed.is_empty() {
        bail!("gallery runs failed: {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, out, h } => solve(config, out, h),
        Command::Convergence { config, out } => convergence(config, out),
        Command::Poisson1d { n, out } => poisson1d(n, out),
        Command::Gallery { out, h } => gallery(out, h),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
