//! Nonsmooth Newton solver for the discrete eigenvalue problem.
//!
//! The first scheme is solved for `(u, c)` with the normalization row
//! `u(x0) = 0`. If its solution violates the constrained second scheme, that
//! scheme is solved with `c` fixed and a boundary relaxation `kappa > 0`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, Point2};
use crate::linalg;
use crate::mesh::{MeshParams, NodeId, NodeTag, QuadMesh};
use crate::operators::{
    atan_prime, Active, Branch, Discretization, GridFunction, OperatorConfig, Residual,
};
use crate::stencils::StencilCache;

/// When to run the constrained second solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// Only if the first solution violates the second scheme.
    #[default]
    Auto,
    Never,
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    #[serde(alias = "max_iter")]
    pub max_iterations: usize,
    /// Sup-norm residual tolerance.
    #[serde(alias = "tol")]
    pub tolerance: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub kappa_mode: KappaMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iterations: 100,
            tolerance: 1e-8,
            backtrack: 0.5,
            min_step: 1e-6,
            kappa_mode: KappaMode::Auto,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance = {} must be positive",
                self.tolerance
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!(
                "backtrack = {} must lie in (0, 1)",
                self.backtrack
            )));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::Config(format!(
                "min_step = {} must lie in (0, 1]",
                self.min_step
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Which discrete system to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Unknowns `(u, c)`; interior `F + c`, boundary `H`, normalization row.
    First,
    /// Unknowns `u` with `c` fixed; the max-form constrained system.
    Second,
}

/// Generalized Jacobian as deduplicated triplets, with right-hand side `-G`.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub size: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    /// Column pair exchanged before the iterative solve so every row has a
    /// structural diagonal.
    pub column_swap: Option<(usize, usize)>,
}

impl SparseSystem {
    fn from_rows(size: usize, mut triplets: Vec<(usize, usize, f64)>, residual: &Residual) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let rhs = residual.values.iter().map(|v| -v).collect();
        SparseSystem {
            size,
            triplets: merged,
            rhs,
            column_swap: None,
        }
    }

    /// Entries of one row, sorted by column.
    pub fn row(&self, r: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .triplets
            .iter()
            .filter(|t| t.0 == r)
            .map(|t| (t.1, t.2))
            .collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// `J v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for &(r, c, x) in &self.triplets {
            out[r] += x * v[c];
        }
        out
    }

    /// Solves `J d = rhs`.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let Some((a, b)) = self.column_swap else {
            return linalg::solve_sparse(self.size, &self.triplets, &self.rhs);
        };
        let swap = |c: usize| {
            if c == a {
                b
            } else if c == b {
                a
            } else {
                c
            }
        };
        let permuted: Vec<(usize, usize, f64)> = self
            .triplets
            .iter()
            .map(|&(r, c, v)| (r, swap(c), v))
            .collect();
        let mut x = linalg::solve_sparse(self.size, &permuted, &self.rhs)?;
        x.swap(a, b);
        Ok(x)
    }
}

/// Adds `coef * d/du (sum_k w_k (u_k - u_x))` to row `row`.
fn push_stencil(
    t: &mut Vec<(usize, usize, f64)>,
    row: usize,
    x: NodeId,
    coef: f64,
    terms: impl IntoIterator<Item = (NodeId, f64)>,
) {
    let mut center = 0.0;
    for (k, w) in terms {
        t.push((row, k, coef * w));
        center -= coef * w;
    }
    t.push((row, x, center));
}

/// Generalized Jacobian of the chosen scheme at `(u, c)`; the active branch of
/// each row is read from `residual`, which must be evaluated at the same point.
pub fn assemble_generalized_jacobian(
    disc: &Discretization<'_>,
    residual: &Residual,
    scheme: Scheme,
) -> Result<SparseSystem> {
    let n = disc.mesh.len();
    let size = match scheme {
        Scheme::First => n + 1,
        Scheme::Second => n,
    };
    if residual.values.len() != size {
        return Err(Error::LengthMismatch {
            expected: size,
            got: residual.values.len(),
        });
    }
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(12 * size);
    for (x, active) in residual.active.iter().enumerate() {
        match *active {
            Active::F {
                lo,
                hi,
                lambda_lo,
                lambda_hi,
            } => {
                let st = &disc.stencils.interior(x).directions;
                for (j, lam) in [(lo, lambda_lo), (hi, lambda_hi)] {
                    let s = &st[j];
                    push_stencil(
                        &mut t,
                        x,
                        x,
                        -atan_prime(lam),
                        s.neighbors.iter().copied().zip(s.weights),
                    );
                }
                if scheme == Scheme::First {
                    t.push((x, n, 1.0));
                }
            }
            Active::L { lo } => {
                let s = &disc.stencils.interior(x).directions[lo];
                push_stencil(
                    &mut t,
                    x,
                    x,
                    -1.0,
                    s.neighbors.iter().copied().zip(s.weights),
                );
            }
            Active::HInterior { p } => {
                let st = disc.stencils.interior(x);
                let g = disc.config.target.signed_distance_gradient(p);
                for (axis, gk) in st.axes.iter().zip([g.x, g.y]) {
                    push_stencil(&mut t, x, x, gk, axis.centered_terms());
                    let s = &axis.second;
                    push_stencil(
                        &mut t,
                        x,
                        x,
                        -st.epsilon,
                        s.neighbors.iter().copied().zip(s.weights),
                    );
                }
            }
            Active::HBoundary { slot } => {
                let s = &disc.stencils.boundary(x).directions[slot].stencil;
                push_stencil(&mut t, x, x, 1.0, s.neighbors.iter().copied().zip(s.coeffs));
                if scheme == Scheme::Second && disc.config.kappa > 0.0 {
                    t.push((x, x, disc.config.kappa));
                }
            }
            Active::E { y } => {
                let d = disc.mesh.point(x).distance(disc.mesh.point(y));
                t.push((x, x, 1.0 / d));
                t.push((x, y, -1.0 / d));
            }
            Active::Normalization => t.push((x, disc.anchor(), 1.0)),
        }
    }
    let mut sys = SparseSystem::from_rows(size, t, residual);
    if scheme == Scheme::First {
        sys.column_swap = Some((disc.anchor(), n));
    }
    let mut has_entry = vec![false; size];
    for &(r, _, v) in &sys.triplets {
        if v != 0.0 {
            has_entry[r] = true;
        }
    }
    let empty: Vec<usize> = has_entry
        .iter()
        .enumerate()
        .filter(|(_, &h)| !h)
        .map(|(i, _)| i)
        .collect();
    if !empty.is_empty() {
        return Err(Error::DegenerateRows(empty));
    }
    Ok(sys)
}

/// Converged discrete solution and diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSolution {
    pub u: Vec<f64>,
    pub c: f64,
    pub iterations: usize,
    pub residual: f64,
    pub branches: Vec<Branch>,
    pub step2_used: bool,
    pub kappa_used: f64,
    pub anchor: NodeId,
}

impl EigenSolution {
    pub fn grid_function(&self, mesh: &QuadMesh) -> Result<GridFunction> {
        GridFunction::new(mesh, self.u.clone())
    }
}

fn evaluate(disc: &Discretization<'_>, scheme: Scheme, u: &[f64], c: f64) -> Result<Residual> {
    match scheme {
        Scheme::First => disc.eval_scheme1(u, c),
        Scheme::Second => disc.eval_scheme2(u, c),
    }
}

/// Damped nonsmooth Newton iteration. Full steps are tried first; otherwise
/// the step is halved until the l2 residual decreases.
pub fn newton_solve(
    disc: &Discretization<'_>,
    scheme: Scheme,
    initial: &GridFunction,
    initial_c: f64,
    config: &NewtonConfig,
) -> Result<EigenSolution> {
    config.validate()?;
    let n = disc.mesh.len();
    if initial.values().len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: initial.values().len(),
        });
    }
    if !initial_c.is_finite() {
        return Err(Error::NonFinite(n));
    }
    let mut u = initial.values().to_vec();
    let mut c = initial_c;
    let mut res = evaluate(disc, scheme, &u, c)?;
    let mut iterations = 0;
    while res.sup_norm() > config.tolerance {
        if iterations == config.max_iterations {
            return Err(Error::MaxIterations {
                iterations,
                residual: res.sup_norm(),
            });
        }
        iterations += 1;
        let sys = assemble_generalized_jacobian(disc, &res, scheme)?;
        let step = sys.solve()?;
        let merit = res.l2_norm();
        let mut alpha = 1.0;
        loop {
            let trial_u: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a + alpha * d).collect();
            let trial_c = if scheme == Scheme::First {
                c + alpha * step[n]
            } else {
                c
            };
            let trial = evaluate(disc, scheme, &trial_u, trial_c)?;
            if trial.l2_norm() < merit || trial.sup_norm() <= config.tolerance {
                u = trial_u;
                c = trial_c;
                res = trial;
                break;
            }
            alpha *= config.backtrack;
            if alpha < config.min_step {
                return Err(Error::StagnatedLineSearch {
                    iteration: iterations,
                    residual: res.sup_norm(),
                });
            }
        }
    }
    if scheme == Scheme::First {
        // the residual is invariant under constant shifts apart from the normalization row
        let shift = u[disc.anchor()];
        u.iter_mut().for_each(|v| *v -= shift);
    }
    Ok(EigenSolution {
        u,
        c,
        iterations,
        residual: res.sup_norm(),
        branches: res.branches(),
        step2_used: scheme == Scheme::Second,
        kappa_used: if scheme == Scheme::Second {
            disc.config.kappa
        } else {
            0.0
        },
        anchor: disc.anchor(),
    })
}

/// `u0 = s |x - xbar|^2 / 2` shifted to vanish at the anchor, and `c0 = 2 atan(s)`
/// with `s` the ratio of target to domain support maxima.
pub fn initial_guess(disc: &Discretization<'_>) -> (GridFunction, f64) {
    let mesh = disc.mesh;
    let s = disc.config.target.max_norm() / mesh.domain().max_norm();
    let xbar = mesh.domain().centroid();
    let q = |p: Point2| 0.5 * s * (p - xbar).norm_squared();
    let shift = q(mesh.point(disc.anchor()));
    let values = mesh.nodes().iter().map(|&p| q(p) - shift).collect();
    (
        GridFunction::new(mesh, values).expect("finite quadratic"),
        2.0 * s.atan(),
    )
}

/// Mesh, stencils and the solution for one resolution.
#[derive(Debug)]
pub struct SolveOutput {
    pub mesh: QuadMesh,
    pub stencils: StencilCache,
    pub solution: EigenSolution,
}

/// Two-step procedure: solve the first scheme; if its solution does not also
/// satisfy the second scheme with `kappa = 0`, solve the second with
/// `kappa = sqrt(h)` and renormalize so that `u(x0) = 0`.
pub fn solve_full(
    domain: &ConvexBody,
    target: &ConvexBody,
    params: MeshParams,
    config: &NewtonConfig,
) -> Result<SolveOutput> {
    let mesh = QuadMesh::build(domain, params)?;
    let stencils = StencilCache::build(&mesh)?;
    let solution = solve_on(&mesh, &stencils, target, config)?;
    Ok(SolveOutput {
        mesh,
        stencils,
        solution,
    })
}

/// [`solve_full`] on a prebuilt mesh and stencil cache.
pub fn solve_on(
    mesh: &QuadMesh,
    stencils: &StencilCache,
    target: &ConvexBody,
    config: &NewtonConfig,
) -> Result<EigenSolution> {
    solve_from(mesh, stencils, target, config, None)
}

/// [`solve_on`] starting from `start` instead of [`initial_guess`].
pub fn solve_from(
    mesh: &QuadMesh,
    stencils: &StencilCache,
    target: &ConvexBody,
    config: &NewtonConfig,
    start: Option<(GridFunction, f64)>,
) -> Result<EigenSolution> {
    let disc = Discretization::new(mesh, stencils, OperatorConfig::new(target.clone()))?;
    let (u0, c0) = start.unwrap_or_else(|| initial_guess(&disc));
    let first = newton_solve(&disc, Scheme::First, &u0, c0, config)?;
    let check = disc.eval_scheme2(&first.u, first.c)?;
    let needed = check.sup_norm() > config.tolerance;
    let run_second = match config.kappa_mode {
        KappaMode::Never => false,
        KappaMode::Always => true,
        KappaMode::Auto => needed,
    };
    if !run_second {
        return Ok(EigenSolution {
            branches: check.branches(),
            ..first
        });
    }
    let mut cfg = OperatorConfig::new(target.clone());
    cfg.kappa = mesh.params().h.sqrt();
    let disc2 = Discretization::new(mesh, stencils, cfg)?;
    let start = GridFunction::new(mesh, first.u.clone())?;
    let second = newton_solve(&disc2, Scheme::Second, &start, first.c, config)?;
    let anchor_value = second.u[disc2.anchor()];
    let u = second.u.iter().map(|v| v - anchor_value).collect();
    Ok(EigenSolution {
        u,
        iterations: first.iterations + second.iterations,
        ..second
    })
}

/// Gradient estimate per node: centered differences at interior nodes, a
/// least-squares fit over the boundary triangles at boundary nodes.
pub fn extract_map(
    mesh: &QuadMesh,
    stencils: &StencilCache,
    u: &[f64],
) -> Result<Vec<(NodeId, Point2)>> {
    if u.len() != mesh.len() {
        return Err(Error::LengthMismatch {
            expected: mesh.len(),
            got: u.len(),
        });
    }
    let mut out = Vec::with_capacity(mesh.len());
    for x in 0..mesh.len() {
        let g = match mesh.tag(x) {
            NodeTag::Interior => {
                let axes = &stencils.interior(x).axes;
                Point2::new(axes[0].centered(x, u), axes[1].centered(x, u))
            }
            NodeTag::Boundary => {
                let mut ids: Vec<NodeId> = stencils
                    .boundary(x)
                    .directions
                    .iter()
                    .flat_map(|d| d.stencil.neighbors)
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                least_squares_gradient(mesh, x, &ids, u)
            }
        };
        out.push((x, g));
    }
    Ok(out)
}

/// Transfers `u` from `from` onto the nodes of `to` by a first-order Taylor
/// expansion about the nearest node of `from`.
pub fn prolongate(
    from: &QuadMesh,
    stencils: &StencilCache,
    u: &[f64],
    to: &QuadMesh,
) -> Result<GridFunction> {
    let map = extract_map(from, stencils, u)?;
    let values = to
        .nodes()
        .iter()
        .map(|&p| {
            let q = from.nearest_node(p).expect("nonempty mesh");
            let g = map[q].1;
            let slope = if g.is_finite() {
                g.dot(p - from.point(q))
            } else {
                0.0
            };
            u[q] + slope
        })
        .collect();
    GridFunction::new(to, values)
}

fn least_squares_gradient(mesh: &QuadMesh, x: NodeId, ids: &[NodeId], u: &[f64]) -> Point2 {
    let p0 = mesh.point(x);
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in ids {
        let d = mesh.point(i) - p0;
        let du = u[i] - u[x];
        a11 += d.x * d.x;
        a12 += d.x * d.y;
        a22 += d.y * d.y;
        b1 += d.x * du;
        b2 += d.y * du;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-14 * (a11 + a22).powi(2) {
        return Point2::new(f64::NAN, f64::NAN);
    }
    Point2::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
}

/// Scalar sidecar written next to a solution export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub c: f64,
    pub iterations: usize,
    pub residual: f64,
    pub step2_used: bool,
    pub kappa_used: f64,
    pub realized_h: f64,
}

/// Writes `node_id,x,y,tag,u,grad_x,grad_y`.
pub fn write_solution_csv<W: Write>(
    mesh: &QuadMesh,
    stencils: &StencilCache,
    solution: &EigenSolution,
    writer: W,
) -> Result<()> {
    let map = extract_map(mesh, stencils, &solution.u)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node_id", "x", "y", "tag", "u", "grad_x", "grad_y"])?;
    for (x, g) in map {
        let p = mesh.point(x);
        w.write_record([
            x.to_string(),
            format!("{:.17e}", p.x),
            format!("{:.17e}", p.y),
            mesh.tag(x).as_str().to_string(),
            format!("{:.17e}", solution.u[x]),
            format!("{:.17e}", g.x),
            format!("{:.17e}", g.y),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn export_solution(
    dir: &Path,
    stem: &str,
    mesh: &QuadMesh,
    stencils: &StencilCache,
    solution: &EigenSolution,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_solution_csv(mesh, stencils, solution, std::io::BufWriter::new(csv_file))?;
    let summary = SolutionSummary {
        c: solution.c,
        iterations: solution.iterations,
        residual: solution.residual,
        step2_used: solution.step2_used,
        kappa_used: solution.kappa_used,
        realized_h: mesh.realized_metrics().h,
    };
    let json = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(json, &summary)?;
    Ok(())
}
