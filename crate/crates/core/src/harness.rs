//! Experiment driver: configuration, exact solutions, refinement ladders, the
//! one-dimensional Poisson eigenvalue demo and the target shape gallery.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, Mat2, Point2};
use crate::linalg;
use crate::mesh::{MeshKnobs, MeshParams, NodeTag};
use crate::solver::{export_solution, extract_map, solve_full, NewtonConfig, SolveOutput};

/// Shape description as it appears in configuration files. Matrices are
/// row-major, polygon vertices a flat counterclockwise coordinate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Disk {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        #[serde(default)]
        center: [f64; 2],
        matrix: [f64; 4],
    },
    Square {
        #[serde(default)]
        center: [f64; 2],
        half_width: f64,
    },
    Polygon {
        vertices: Vec<f64>,
    },
    Segment {
        a: [f64; 2],
        b: [f64; 2],
    },
    Bowl,
    Cone,
    Pentagon,
}

fn pt(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

impl ShapeSpec {
    pub fn build(&self) -> Result<ConvexBody> {
        match self {
            ShapeSpec::Disk { center, radius } => ConvexBody::disk(pt(*center), *radius),
            ShapeSpec::Ellipse { center, matrix } => {
                ConvexBody::ellipse(pt(*center), Mat2::from_row_major(*matrix))
            }
            ShapeSpec::Square { center, half_width } => {
                ConvexBody::square(pt(*center), *half_width)
            }
            ShapeSpec::Polygon { vertices } => {
                if vertices.len() % 2 != 0 {
                    return Err(Error::Config(
                        "polygon vertices need an even number of coordinates".into(),
                    ));
                }
                ConvexBody::polygon(
                    vertices
                        .chunks(2)
                        .map(|v| Point2::new(v[0], v[1]))
                        .collect(),
                )
            }
            ShapeSpec::Segment { a, b } => ConvexBody::segment(pt(*a), pt(*b)),
            ShapeSpec::Bowl => ConvexBody::bowl(Point2::new(0.0, -0.6), 1.4, 0.6, 65),
            ShapeSpec::Cone => {
                ConvexBody::cone(Point2::new(0.0, -1.2), Point2::new(0.0, 0.3), PI / 3.0, 49)
            }
            ShapeSpec::Pentagon => ConvexBody::regular_polygon(Point2::ZERO, 1.0, 5, 0.5 * PI),
        }
    }

    /// Center and matrix `M` with the body equal to `center + M (unit disk)`.
    fn affine_image(&self) -> Option<(Point2, Mat2)> {
        match self {
            ShapeSpec::Disk { center, radius } => Some((pt(*center), Mat2::diag(*radius, *radius))),
            ShapeSpec::Ellipse { center, matrix } => {
                Some((pt(*center), Mat2::from_row_major(*matrix)))
            }
            _ => None,
        }
    }
}

/// Which exact solution errors are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactKind {
    #[default]
    None,
    /// Ellipse (or disk) to ellipse; the map is affine.
    Affine,
    /// `u = x^2 / 2`, the map onto the segment `[-1, 1] x {0}`.
    #[serde(alias = "quadratic-x")]
    QuadraticX,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub exact_kind: ExactKind,
}

/// A refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub domain: ShapeSpec,
    pub target: ShapeSpec,
    pub ladder: Vec<f64>,
    #[serde(default)]
    pub mesh: MeshKnobs,
    #[serde(default)]
    pub solver: NewtonConfig,
    #[serde(default)]
    pub experiment: ExperimentOptions,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::Config("ladder is empty".into()));
        }
        if self.ladder.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config(format!(
                "ladder entries must be positive: {:?}",
                self.ladder
            )));
        }
        if self.ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "ladder must be strictly decreasing: {:?}",
                self.ladder
            )));
        }
        self.solver.validate()?;
        self.domain.build()?;
        self.target.build()?;
        self.exact().map(|_| ())
    }

    pub fn exact(&self) -> Result<Option<QuadraticExact>> {
        match self.experiment.exact_kind {
            ExactKind::None => Ok(None),
            ExactKind::QuadraticX => Ok(Some(QuadraticExact::quadratic_x())),
            ExactKind::Affine => {
                let (Some((cx, mx)), Some((cy, my))) =
                    (self.domain.affine_image(), self.target.affine_image())
                else {
                    return Err(Error::Config(
                        "affine exact solution needs disk or ellipse domain and target".into(),
                    ));
                };
                let a = exact_affine_solution(mx, my)?;
                Ok(Some(QuadraticExact {
                    a: a.a,
                    domain_center: cx,
                    target_center: cy,
                    c: a.c,
                }))
            }
        }
    }
}

/// Closed-form affine optimal map between two ellipses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineExact {
    pub theta: f64,
    /// Hessian of the exact potential, `M_y R_theta M_x^{-1}`.
    pub a: Mat2,
    pub c: f64,
}

/// Rotation angle, Hessian and eigenvalue of the affine map from
/// `M_x (unit disk)` onto `M_y (unit disk)`.
pub fn exact_affine_solution(mx: Mat2, my: Mat2) -> Result<AffineExact> {
    let singular = || Error::InvalidShape("ellipse matrix is singular".into());
    let mx_inv = mx.inverse().ok_or_else(singular)?;
    let my_inv = my.inverse().ok_or_else(singular)?;
    let b = mx_inv.mul(&my_inv);
    let j = Mat2::from_row_major([0.0, -1.0, 1.0, 0.0]);
    let theta = (b.mul(&j).trace() / b.trace()).atan();
    let a = my.mul(&Mat2::rotation(theta)).mul(&mx_inv);
    let scale = a.trace().abs().max(1.0);
    if a.asymmetry() > 1e-10 * scale {
        return Err(Error::AsymmetricMap(a.asymmetry()));
    }
    let off = 0.5 * (a.m[0][1] + a.m[1][0]);
    let a = Mat2::new(a.m[0][0], off, off, a.m[1][1]);
    let (lo, hi, _) = a.sym_eigen();
    Ok(AffineExact {
        theta,
        a,
        c: lo.atan() + hi.atan(),
    })
}

/// Exact potential `u(x) = (x - x_c) A (x - x_c) / 2 + y_c . x` with gradient
/// map `A (x - x_c) + y_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticExact {
    pub a: Mat2,
    pub domain_center: Point2,
    pub target_center: Point2,
    pub c: f64,
}

impl QuadraticExact {
    pub fn quadratic_x() -> Self {
        QuadraticExact {
            a: Mat2::diag(1.0, 0.0),
            domain_center: Point2::ZERO,
            target_center: Point2::ZERO,
            c: 0.25 * PI,
        }
    }

    pub fn value(&self, p: Point2) -> f64 {
        let d = p - self.domain_center;
        0.5 * d.dot(self.a.apply(d)) + self.target_center.dot(p)
    }

    pub fn gradient(&self, p: Point2) -> Point2 {
        self.a.apply(p - self.domain_center) + self.target_center
    }

    /// `max |u - u_ex - (u - u_ex)(x0)|` over all nodes.
    pub fn error(&self, nodes: &[Point2], u: &[f64], anchor: usize) -> f64 {
        let offset = u[anchor] - self.value(nodes[anchor]);
        nodes
            .iter()
            .zip(u)
            .map(|(&p, v)| (v - self.value(p) - offset).abs())
            .fold(0.0, f64::max)
    }
}

/// One level of a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub nodes: usize,
    pub error: Option<f64>,
    pub ratio: Option<f64>,
    pub order: Option<f64>,
    pub c: f64,
    pub c_error: Option<f64>,
    pub iterations: usize,
    pub step2_used: bool,
    pub kappa_used: f64,
    pub realized_h: f64,
}

/// Rows of a finished (or aborted) ladder.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.error).collect()
    }

    pub fn c_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.c).collect()
    }

    /// Mean of the observed orders, if any were measured.
    pub fn mean_order(&self) -> Option<f64> {
        let orders: Vec<f64> = self.rows.iter().filter_map(|r| r.order).collect();
        (!orders.is_empty()).then(|| orders.iter().sum::<f64>() / orders.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "h",
            "nodes",
            "error",
            "ratio",
            "order",
            "c",
            "c_error",
            "iterations",
            "step2_used",
            "kappa_used",
            "realized_h",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                format!("{}", r.h),
                r.nodes.to_string(),
                opt(r.error),
                opt(r.ratio),
                opt(r.order),
                format!("{:.10}", r.c),
                opt(r.c_error),
                r.iterations.to_string(),
                r.step2_used.to_string(),
                format!("{:.6e}", r.kappa_used),
                format!("{:.6e}", r.realized_h),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Level file stem, e.g. `level_0`.
fn level_stem(k: usize) -> String {
    format!("level_{k}")
}

/// Solves one level and returns its output.
pub fn solve_level(spec: &ExperimentSpec, h: f64) -> Result<SolveOutput> {
    let domain = spec.domain.build()?;
    let target = spec.target.build()?;
    let params = MeshParams::with_knobs(h, &spec.mesh)?;
    solve_full(&domain, &target, params, &spec.solver)
}

/// Ladder run failure carrying the rows completed before it.
#[derive(Debug)]
pub struct LadderFailure {
    pub partial: ConvergenceTable,
    pub h: f64,
    pub error: Error,
}

/// Runs every level of the ladder. With `out` set, writes `convergence.csv`
/// plus per-level mesh and solution files; the table is rewritten after each
/// level so a failure leaves the completed rows on disk.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out: Option<&Path>,
) -> std::result::Result<ConvergenceTable, LadderFailure> {
    let mut table = ConvergenceTable::default();
    let fail = |table: &ConvergenceTable, h: f64, error: Error| LadderFailure {
        partial: table.clone(),
        h,
        error,
    };
    if let Err(e) = spec.validate() {
        return Err(fail(
            &table,
            spec.ladder.first().copied().unwrap_or(f64::NAN),
            e,
        ));
    }
    let exact = spec.exact().map_err(|e| fail(&table, spec.ladder[0], e))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| fail(&table, spec.ladder[0], e.into()))?;
    }
    for (k, &h) in spec.ladder.iter().enumerate() {
        let level = solve_level(spec, h).and_then(|o| {
            if let Some(dir) = out {
                let file = std::fs::File::create(dir.join(format!("{}_mesh.csv", level_stem(k))))?;
                o.mesh.write_csv(std::io::BufWriter::new(file))?;
                export_solution(dir, &level_stem(k), &o.mesh, &o.stencils, &o.solution)?;
            }
            Ok(o)
        });
        let o = level.map_err(|e| fail(&table, h, e))?;
        let s = &o.solution;
        let error = exact.map(|ex| ex.error(o.mesh.nodes(), &s.u, s.anchor));
        let prev = table.rows.last().and_then(|r| r.error.map(|e| (e, r.h)));
        let (ratio, order) = match (prev, error) {
            (Some((e0, h0)), Some(e1)) => (Some(e0 / e1), Some((e0 / e1).ln() / (h0 / h).ln())),
            _ => (None, None),
        };
        table.rows.push(ConvergenceRow {
            h,
            nodes: o.mesh.len(),
            error,
            ratio,
            order,
            c: s.c,
            c_error: exact.map(|ex| (s.c - ex.c).abs()),
            iterations: s.iterations,
            step2_used: s.step2_used,
            kappa_used: s.kappa_used,
            realized_h: o.mesh.realized_metrics().h,
        });
        if let Some(dir) = out {
            table
                .write_csv(&dir.join("convergence.csv"))
                .map_err(|e| fail(&table, h, e))?;
        }
    }
    Ok(table)
}

/// Discrete solution of `-u'' + c f = 0` on `(0, 1)` with `u' = g` at both
/// ends and `u(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonDemo {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub c: f64,
}

/// Solves the Neumann Poisson problem on `x_j = j / n` with `c` as an extra
/// unknown: centered second differences inside, one-sided differences at the
/// ends, and the row `u_0 = 0`.
pub fn poisson_1d_with(
    n: usize,
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> Result<PoissonDemo> {
    if n < 3 {
        return Err(Error::Config(format!("poisson demo needs n >= 3, got {n}")));
    }
    let h = 1.0 / n as f64;
    let x: Vec<f64> = (0..=n).map(|j| j as f64 * h).collect();
    let c_col = n + 1;
    let mut t = Vec::with_capacity(4 * n + 4);
    let mut rhs = vec![0.0; n + 2];
    for j in 1..n {
        t.push((j, j - 1, -1.0 / (h * h)));
        t.push((j, j, 2.0 / (h * h)));
        t.push((j, j + 1, -1.0 / (h * h)));
        t.push((j, c_col, f(x[j])));
    }
    t.push((0, 1, 1.0 / h));
    t.push((0, 0, -1.0 / h));
    rhs[0] = g(0.0);
    t.push((n, n, 1.0 / h));
    t.push((n, n - 1, -1.0 / h));
    rhs[n] = g(1.0);
    t.push((n + 1, 0, 1.0));
    let sol = linalg::solve_lu(n + 2, &t, &rhs)?;
    Ok(PoissonDemo {
        x,
        u: sol[..=n].to_vec(),
        c: sol[c_col],
    })
}

/// [`poisson_1d_with`] for `f = cos(pi x / 2)`, `g = (2 / pi) sin(pi x / 2)`,
/// whose continuous eigenvalue is 1.
pub fn poisson_1d_demo(n: usize) -> Result<PoissonDemo> {
    poisson_1d_with(
        n,
        |x| (0.5 * PI * x).cos(),
        |x| 2.0 / PI * (0.5 * PI * x).sin(),
    )
}

/// One gallery run.
#[derive(Debug)]
pub struct GalleryEntry {
    pub name: &'static str,
    pub output: SolveOutput,
    /// Largest target signed distance of an interior mapped gradient.
    pub max_signed_distance: f64,
}

/// The five gallery problems: the square `(-1.1, 1.1)^2` onto a bowl, a cone,
/// a pentagon and the unit disk, and the unit disk onto the square.
pub fn gallery_problems() -> Vec<(&'static str, ShapeSpec, ShapeSpec)> {
    let square = ShapeSpec::Square {
        center: [0.0, 0.0],
        half_width: 1.1,
    };
    let disk = ShapeSpec::Disk {
        center: [0.0, 0.0],
        radius: 1.0,
    };
    vec![
        ("square_to_bowl", square.clone(), ShapeSpec::Bowl),
        ("square_to_cone", square.clone(), ShapeSpec::Cone),
        ("square_to_pentagon", square.clone(), ShapeSpec::Pentagon),
        ("square_to_disk", square.clone(), disk.clone()),
        ("disk_to_square", disk, square),
    ]
}

/// Largest `signed_distance_Y(grad u)` over interior nodes.
pub fn containment_audit(output: &SolveOutput, target: &ConvexBody) -> Result<f64> {
    let map = extract_map(&output.mesh, &output.stencils, &output.solution.u)?;
    Ok(map
        .iter()
        .filter(|(x, _)| output.mesh.tag(*x) == NodeTag::Interior)
        .map(|(_, g)| target.signed_distance(*g))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Runs the gallery at resolution `h`, exporting each map when `out` is set.
/// Failures are reported per shape.
pub fn run_shape_gallery(
    h: f64,
    config: &NewtonConfig,
    out: Option<&Path>,
) -> Vec<(&'static str, Result<GalleryEntry>)> {
    gallery_problems()
        .into_iter()
        .map(|(name, domain, target)| {
            let run = || -> Result<GalleryEntry> {
                let target = target.build()?;
                let output = solve_full(&domain.build()?, &target, MeshParams::from_h(h)?, config)?;
                let max_signed_distance = containment_audit(&output, &target)?;
                if let Some(dir) = out {
                    export_solution(dir, name, &output.mesh, &output.stencils, &output.solution)?;
                }
                Ok(GalleryEntry {
                    name,
                    output,
                    max_signed_distance,
                })
            };
            (name, run())
        })
        .collect()
}
