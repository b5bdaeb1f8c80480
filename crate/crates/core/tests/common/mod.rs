//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use minlag::operators::Active;
use minlag::solver::{assemble_generalized_jacobian, Scheme};
use minlag::{
    ConvexBody, Discretization, Mat2, MeshParams, NodeTag, OperatorConfig, Point2, QuadMesh,
    StencilCache,
};
use rand::Rng;

/// Mesh and stencils for one domain at one resolution.
pub struct Fixture {
    pub mesh: QuadMesh,
    pub stencils: StencilCache,
}

impl Fixture {
    pub fn new(domain: &ConvexBody, h: f64) -> Fixture {
        let mesh = QuadMesh::build(domain, MeshParams::from_h(h).unwrap()).unwrap();
        let stencils = StencilCache::build(&mesh).unwrap();
        Fixture { mesh, stencils }
    }

    pub fn disc(&self, target: &ConvexBody) -> Discretization<'_> {
        Discretization::new(
            &self.mesh,
            &self.stencils,
            OperatorConfig::new(target.clone()),
        )
        .unwrap()
    }
}

pub fn ellipse(m: [f64; 4]) -> ConvexBody {
    ConvexBody::ellipse(Point2::ZERO, Mat2::from_row_major(m)).unwrap()
}

/// A convex quadratic with random Hessian plus uniform noise of amplitude `noise`.
pub fn random_state(mesh: &QuadMesh, rng: &mut impl Rng, noise: f64) -> Vec<f64> {
    let a: f64 = rng.gen_range(0.2..3.0);
    let d: f64 = rng.gen_range(0.2..3.0);
    let b = rng.gen_range(-0.5..0.5) * (a * d).sqrt();
    let g = Point2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
    mesh.nodes()
        .iter()
        .map(|p| {
            0.5 * (a * p.x * p.x + 2.0 * b * p.x * p.y + d * p.y * p.y)
                + g.dot(*p)
                + noise * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// Operators audited for monotonicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    F,
    L,
    HInterior,
    HBoundary,
    E,
    Scheme1,
    Scheme2,
}

pub const ALL_OPS: [Op; 7] = [
    Op::F,
    Op::L,
    Op::HInterior,
    Op::HBoundary,
    Op::E,
    Op::Scheme1,
    Op::Scheme2,
];

pub const MONOTONE_SLACK: f64 = 1e-12;

fn eval_at(disc: &Discretization<'_>, op: Op, u: &[f64], c: f64, x: usize) -> f64 {
    match op {
        Op::F => disc.eval_f(u, x) + c,
        Op::L => disc.eval_l(u, x),
        Op::HInterior => disc.eval_h_interior(u, x).0,
        Op::HBoundary => disc.eval_h_boundary(u, x).0,
        Op::E => disc.eval_e(u, x).unwrap().0,
        Op::Scheme1 => disc.eval_scheme1(u, c).unwrap().values[x],
        Op::Scheme2 => disc.eval_scheme2(u, c).unwrap().values[x],
    }
}

/// One randomized bump: either raise `u(x)` or lower some `u(y)` near `x`.
/// Returns how far the operator at `x` decreased (positive means a violation).
pub fn bump_trial(disc: &Discretization<'_>, op: Op, rng: &mut impl Rng) -> f64 {
    let mesh = disc.mesh;
    let x = loop {
        let x = rng.gen_range(0..mesh.len());
        let ok = match op {
            Op::F | Op::L | Op::HInterior => mesh.tag(x) == NodeTag::Interior,
            Op::HBoundary => mesh.tag(x) == NodeTag::Boundary,
            _ => true,
        };
        if ok {
            break x;
        }
    };
    let noise = [0.0, 1e-3, 1e-1][rng.gen_range(0..3)];
    let mut u = random_state(mesh, rng, noise);
    let c = rng.gen_range(-1.0..3.0);
    let delta = 10f64.powf(rng.gen_range(-8.0..0.0));
    let before = eval_at(disc, op, &u, c, x);
    if rng.gen_bool(0.5) {
        u[x] += delta;
    } else {
        let near = mesh.neighbors_in_ball(x, 3.0 * mesh.params().r);
        let y = if near.is_empty() || rng.gen_bool(0.1) {
            rng.gen_range(0..mesh.len())
        } else {
            near[rng.gen_range(0..near.len())]
        };
        if y == x {
            u[x] += delta;
        } else {
            u[y] -= delta;
        }
    }
    before - eval_at(disc, op, &u, c, x)
}

/// Counts trials whose decrease exceeds [`MONOTONE_SLACK`]; also returns the worst decrease.
pub fn monotonicity_violations(
    disc: &Discretization<'_>,
    op: Op,
    trials: usize,
    rng: &mut impl Rng,
) -> (usize, f64) {
    let mut bad = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let d = bump_trial(disc, op, rng);
        worst = worst.max(d);
        if d > MONOTONE_SLACK {
            bad += 1;
        }
    }
    (bad, worst)
}

/// Discrete part of an active branch; equal keys mean the same smooth piece.
fn selection(a: &Active) -> (u8, usize, usize) {
    match *a {
        Active::F { lo, hi, .. } => (0, lo, hi),
        Active::L { lo } => (1, lo, 0),
        Active::HInterior { .. } => (2, 0, 0),
        Active::HBoundary { slot } => (3, slot, 0),
        Active::E { y } => (4, y, 0),
        Active::Normalization => (5, 0, 0),
    }
}

fn same_piece(target: &ConvexBody, a: &Active, b: &Active) -> bool {
    if selection(a) != selection(b) {
        return false;
    }
    match (a, b) {
        (Active::HInterior { p }, Active::HInterior { p: q }) => {
            let (gp, gq) = (
                target.signed_distance_gradient(*p),
                target.signed_distance_gradient(*q),
            );
            (gp - gq).norm() <= 1e-3 * (*p - *q).norm().max(1e-12) + 1e-9
        }
        _ => true,
    }
}

pub struct AuditReport {
    pub matched: usize,
    pub sampled: usize,
    pub redrawn: usize,
    pub worst: f64,
}

impl AuditReport {
    pub fn fraction(&self) -> f64 {
        self.matched as f64 / self.sampled as f64
    }
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;

/// Compares rows of the assembled generalized Jacobian against central
/// differences along random directions. Samples whose active piece changes
/// within the difference stencil are kink-adjacent and redrawn.
pub fn jacobian_audit(
    disc: &Discretization<'_>,
    scheme: Scheme,
    u: &[f64],
    c: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> AuditReport {
    let n = disc.mesh.len();
    let eval = |u: &[f64], c: f64| match scheme {
        Scheme::First => disc.eval_scheme1(u, c).unwrap(),
        Scheme::Second => disc.eval_scheme2(u, c).unwrap(),
    };
    let res = eval(u, c);
    let sys = assemble_generalized_jacobian(disc, &res, scheme).unwrap();
    let size = sys.size;
    let target = &disc.config.target;
    let mut report = AuditReport {
        matched: 0,
        sampled: 0,
        redrawn: 0,
        worst: 0.0,
    };
    let mut attempts = 0;
    while report.sampled < samples && attempts < 50 * samples {
        attempts += 1;
        let row = rng.gen_range(0..size);
        let v: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |s: f64| {
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            let uc = if scheme == Scheme::First {
                c + s * v[n]
            } else {
                c
            };
            eval(&up, uc)
        };
        let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
        if !same_piece(target, &res.active[row], &plus.active[row])
            || !same_piece(target, &res.active[row], &minus.active[row])
        {
            report.redrawn += 1;
            continue;
        }
        let fd = (plus.values[row] - minus.values[row]) / (2.0 * FD_STEP);
        let entries = sys.row(row);
        let jv: f64 = entries.iter().map(|&(k, a)| a * v[k]).sum();
        let scale = entries
            .iter()
            .map(|&(k, a)| (a * v[k]).abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        let rel = (fd - jv).abs() / scale;
        report.worst = report.worst.max(rel);
        report.sampled += 1;
        if rel <= FD_REL_TOL {
            report.matched += 1;
        }
    }
    report
}

/// Quadratic moments `(sum a C, sum a S, sum a C^2, sum a C S)` of a
/// second-derivative stencil in the frame `(nu, nu_perp)`, plus the scale
/// `sum a |d|^2` used to make them relative.
pub fn second_moments(x0: Point2, nu: Point2, pts: &[Point2], w: &[f64]) -> ([f64; 4], f64) {
    let perp = Point2::new(-nu.y, nu.x);
    let mut m = [0.0; 4];
    let mut scale = 0.0;
    for (p, a) in pts.iter().zip(w) {
        let d = *p - x0;
        let (c, s) = (d.dot(nu), d.dot(perp));
        m[0] += a * c;
        m[1] += a * s;
        m[2] += a * c * c;
        m[3] += a * c * s;
        scale += a.abs() * d.norm_squared();
    }
    (m, scale)
}

/// Worst relative residuals of the second-derivative stencils on a mesh:
/// `[affine part (C and S moments), C^2 moment, C S moment]`.
pub fn second_deriv_exactness(f: &Fixture) -> [f64; 3] {
    let mut worst = [0.0f64; 3];
    let dirs = f.stencils.directions().directions().to_vec();
    let mut check = |x0: Point2, nu: Point2, s: &minlag::stencils::SecondDerivStencil| {
        let pts: Vec<Point2> = s.neighbors.iter().map(|&j| f.mesh.point(j)).collect();
        let (m, scale) = second_moments(x0, nu, &pts, &s.weights);
        let radius = pts.iter().map(|p| p.distance(x0)).fold(0.0, f64::max);
        worst[0] = worst[0].max(m[0].abs().max(m[1].abs()) * radius / scale);
        worst[1] = worst[1].max((m[2] - 2.0).abs() / scale);
        worst[2] = worst[2].max(m[3].abs() / scale);
    };
    for x in f.mesh.interior_ids() {
        let x0 = f.mesh.point(x);
        let st = f.stencils.interior(x);
        for (nu, s) in dirs.iter().zip(&st.directions) {
            check(x0, *nu, s);
        }
        for (nu, ax) in [Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]
            .iter()
            .zip(&st.axes)
        {
            check(x0, *nu, &ax.second);
        }
    }
    worst
}

/// Worst relative error of first-derivative and boundary stencils on affine data.
pub fn first_deriv_exactness(f: &Fixture) -> f64 {
    let mut worst = 0.0f64;
    let gradients = [
        Point2::new(1.0, 0.0),
        Point2::new(0.0, 1.0),
        Point2::new(0.7, -1.3),
    ];
    for g in gradients {
        let u: Vec<f64> = f.mesh.nodes().iter().map(|p| g.dot(*p) + 0.25).collect();
        let mut record = |coeffs: [f64; 2], nbrs: [usize; 2], x: usize, got: f64, want: f64| {
            let x0 = f.mesh.point(x);
            let scale: f64 = coeffs
                .iter()
                .zip(nbrs)
                .map(|(b, j)| b.abs() * f.mesh.point(j).distance(x0))
                .sum::<f64>()
                * g.norm();
            worst = worst.max((got - want).abs() / scale.max(g.norm()));
        };
        for x in f.mesh.interior_ids() {
            for (axis, ax) in f.stencils.interior(x).axes.iter().enumerate() {
                let want = if axis == 0 { g.x } else { g.y };
                for tp in [&ax.forward, &ax.backward] {
                    record(tp.coeffs, tp.neighbors, x, tp.apply(x, &u), want);
                }
            }
        }
        for x in f.mesh.boundary_ids() {
            for d in &f.stencils.boundary(x).directions {
                let n = f.stencils.full_circle()[d.direction];
                record(
                    d.stencil.coeffs,
                    d.stencil.neighbors,
                    x,
                    d.stencil.apply(x, &u),
                    g.dot(n),
                );
            }
        }
    }
    worst
}
