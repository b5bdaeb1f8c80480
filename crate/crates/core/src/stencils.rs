//! Generalized finite-difference stencils on unstructured point sets.
//!
//! Second directional derivatives use one neighbor per quadrant of the
//! `(nu, nu_perp)` axes, chosen to align as closely as possible with `nu`.
//! First derivatives reuse those neighbors; boundary directional derivatives
//! use a triangle of nearby nodes containing the inward ray.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::{NodeId, NodeTag, QuadMesh};

const SIN2_TIE: f64 = 1e-12;
const DEGENERATE_REL: f64 = 1e-14;
const ALIGN_REL: f64 = 1e-12;

/// Polar coordinates `(C, S)` of `d` in the `(nu, nu_perp)` frame, with `S`
/// snapped to zero for points on the axis up to round-off.
fn frame(d: Point2, nu: Point2, perp: Point2) -> (f64, f64) {
    let (c, s) = (d.dot(nu), d.dot(perp));
    if s.abs() <= ALIGN_REL * c.abs() {
        (c, 0.0)
    } else {
        (c, s)
    }
}

/// Unit directions `nu_j = (cos(j pi / M), sin(j pi / M))`, `j = 1..=M`, with
/// `M` the smallest even integer such that `pi / M <= dtheta`.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    directions: Vec<Point2>,
    step: f64,
}

impl DirectionSet {
    pub fn new(dtheta: f64) -> Result<Self> {
        if !(dtheta > 0.0 && dtheta <= PI) {
            return Err(Error::InvalidMeshParams(format!("dtheta = {dtheta}")));
        }
        let mut m = (PI / dtheta - 1e-12).ceil().max(2.0) as usize;
        if m % 2 == 1 {
            m += 1;
        }
        let step = PI / m as f64;
        let directions = (1..=m)
            .map(|j| Point2::from_angle(j as f64 * step))
            .collect();
        Ok(DirectionSet { directions, step })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Point2] {
        &self.directions
    }

    pub fn get(&self, j: usize) -> Point2 {
        self.directions[j]
    }

    /// Realized angular gap `pi / M`.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Lower bound `sin(pi / 2M)` on `n . n_x` for boundary directions.
    pub fn admissibility_margin(&self) -> f64 {
        (0.5 * self.step).sin()
    }

    /// `2M` directions `j pi / M`, `j = 0..2M`, covering the full circle.
    pub fn full_circle(&self) -> Vec<Point2> {
        (0..2 * self.directions.len())
            .map(|j| Point2::from_angle(j as f64 * self.step))
            .collect()
    }
}

/// Four-point approximation of `u_{nu nu}(x0) = sum_j a_j (u(x_j) - u(x0))`.
///
/// Slot `j` holds the neighbor selected in quadrant `j + 1`; a node aligned
/// with the axis may fill two slots, in which case its weight is split evenly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondDerivStencil {
    pub neighbors: [NodeId; 4],
    pub weights: [f64; 4],
}

impl SecondDerivStencil {
    pub fn apply(&self, center: NodeId, u: &[f64]) -> f64 {
        let u0 = u[center];
        self.neighbors
            .iter()
            .zip(&self.weights)
            .map(|(&j, &a)| a * (u[j] - u0))
            .sum()
    }

    pub fn center_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Two-point one-sided first difference `sum_i b_i (u(x_i) - u(x0))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPoint {
    pub neighbors: [NodeId; 2],
    pub coeffs: [f64; 2],
}

impl TwoPoint {
    pub fn apply(&self, center: NodeId, u: &[f64]) -> f64 {
        let u0 = u[center];
        self.coeffs[0] * (u[self.neighbors[0]] - u0) + self.coeffs[1] * (u[self.neighbors[1]] - u0)
    }
}

/// Stencils for a coordinate axis: second derivative plus forward and
/// backward first differences built from the same neighbors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisStencil {
    pub second: SecondDerivStencil,
    pub forward: TwoPoint,
    pub backward: TwoPoint,
}

impl AxisStencil {
    /// Centered difference `(D+ + D-) / 2`.
    pub fn centered(&self, center: NodeId, u: &[f64]) -> f64 {
        0.5 * (self.forward.apply(center, u) + self.backward.apply(center, u))
    }

    /// `(node, coefficient)` pairs of the centered difference.
    pub fn centered_terms(&self) -> [(NodeId, f64); 4] {
        let (f, b) = (&self.forward, &self.backward);
        [
            (f.neighbors[0], 0.5 * f.coeffs[0]),
            (f.neighbors[1], 0.5 * f.coeffs[1]),
            (b.neighbors[0], 0.5 * b.coeffs[0]),
            (b.neighbors[1], 0.5 * b.coeffs[1]),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct InteriorStencils {
    /// One stencil per entry of the direction set.
    pub directions: Vec<SecondDerivStencil>,
    /// Axis stencils for `(1, 0)` and `(0, 1)`.
    pub axes: [AxisStencil; 2],
    /// Lax-Friedrichs viscosity `max_j |b_j| / a_j` over the axis stencils.
    pub epsilon: f64,
}

/// Boundary directional derivative along one admissible direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryDirStencil {
    /// Index into [`DirectionSet::full_circle`].
    pub direction: usize,
    pub stencil: TwoPoint,
}

#[derive(Clone, Debug)]
pub struct BoundaryStencils {
    pub directions: Vec<BoundaryDirStencil>,
}

/// Per-node stencils for a fixed mesh and direction set.
#[derive(Clone, Debug)]
pub struct StencilCache {
    directions: DirectionSet,
    full_circle: Vec<Point2>,
    interior: Vec<InteriorStencils>,
    boundary: Vec<BoundaryStencils>,
    interior_count: usize,
    boundary_radius_factor: f64,
}

/// Search radius for boundary triangles, in units of `h`.
pub const BOUNDARY_RADIUS_FACTOR: f64 = 3.0;

impl StencilCache {
    pub fn build(mesh: &QuadMesh) -> Result<StencilCache> {
        let params = mesh.params();
        let directions = DirectionSet::new(params.dtheta)?;
        let full_circle = directions.full_circle();
        let ell = directions.admissibility_margin();

        let interior = mesh
            .interior_ids()
            .map(|x0| interior_stencils(mesh, x0, &directions))
            .collect::<Result<Vec<_>>>()?;

        let mut boundary = Vec::with_capacity(mesh.len() - mesh.interior_count());
        for x0 in mesh.boundary_ids() {
            let normals = mesh.domain().boundary_normals(mesh.point(x0))?;
            let mut dirs = Vec::new();
            for (k, &n) in full_circle.iter().enumerate() {
                if !normals.iter().all(|&nf| n.dot(nf) > ell) {
                    continue;
                }
                let stencil =
                    find_boundary_triangle(mesh, x0, n, BOUNDARY_RADIUS_FACTOR * params.h)
                        .map_err(|_| Error::NoValidTriangle {
                            node: x0,
                            direction: k,
                        })?;
                dirs.push(BoundaryDirStencil {
                    direction: k,
                    stencil,
                });
            }
            if dirs.is_empty() {
                return Err(Error::NoValidTriangle {
                    node: x0,
                    direction: 0,
                });
            }
            boundary.push(BoundaryStencils { directions: dirs });
        }

        Ok(StencilCache {
            directions,
            full_circle,
            interior,
            boundary,
            interior_count: mesh.interior_count(),
            boundary_radius_factor: BOUNDARY_RADIUS_FACTOR,
        })
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    pub fn full_circle(&self) -> &[Point2] {
        &self.full_circle
    }

    pub fn interior(&self, node: NodeId) -> &InteriorStencils {
        &self.interior[node]
    }

    pub fn boundary(&self, node: NodeId) -> &BoundaryStencils {
        &self.boundary[node - self.interior_count]
    }

    pub fn boundary_radius_factor(&self) -> f64 {
        self.boundary_radius_factor
    }

    /// Writes `node,kind,direction,n1,n2,n3,n4,c1,c2,c3,c4`; unused slots are empty.
    pub fn write_csv<W: Write>(&self, mesh: &QuadMesh, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "node",
            "kind",
            "direction",
            "n1",
            "n2",
            "n3",
            "n4",
            "c1",
            "c2",
            "c3",
            "c4",
        ])?;
        let row = |w: &mut csv::Writer<W>,
                   node: NodeId,
                   kind: &str,
                   dir: usize,
                   ids: &[NodeId],
                   cs: &[f64]| {
            let mut rec = vec![node.to_string(), kind.to_string(), dir.to_string()];
            for k in 0..4 {
                rec.push(ids.get(k).map(|i| i.to_string()).unwrap_or_default());
            }
            for k in 0..4 {
                rec.push(cs.get(k).map(|c| format!("{c:.17e}")).unwrap_or_default());
            }
            w.write_record(&rec)
        };
        for x0 in mesh.interior_ids() {
            let st = self.interior(x0);
            for (j, s) in st.directions.iter().enumerate() {
                row(&mut w, x0, "second", j, &s.neighbors, &s.weights)?;
            }
            for (k, a) in st.axes.iter().enumerate() {
                row(
                    &mut w,
                    x0,
                    "forward",
                    k,
                    &a.forward.neighbors,
                    &a.forward.coeffs,
                )?;
                row(
                    &mut w,
                    x0,
                    "backward",
                    k,
                    &a.backward.neighbors,
                    &a.backward.coeffs,
                )?;
            }
        }
        for x0 in mesh.boundary_ids() {
            for d in &self.boundary(x0).directions {
                row(
                    &mut w,
                    x0,
                    "boundary",
                    d.direction,
                    &d.stencil.neighbors,
                    &d.stencil.coeffs,
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Second-derivative stencils for every direction plus the axis stencils at
/// the interior node `x0`, drawn from the ball of radius `r`.
pub fn interior_stencils(
    mesh: &QuadMesh,
    x0: NodeId,
    directions: &DirectionSet,
) -> Result<InteriorStencils> {
    let p0 = mesh.point(x0);
    let mut ball: Vec<(NodeId, Point2)> = Vec::new();
    mesh.for_each_neighbor(x0, mesh.params().r, |id, _| {
        ball.push((id, mesh.point(id) - p0))
    });
    if ball.is_empty() {
        return Err(Error::NoNeighbors(x0));
    }
    ball.sort_unstable_by_key(|&(id, _)| id);

    let dirs = directions
        .directions()
        .iter()
        .enumerate()
        .map(|(j, &nu)| second_deriv_from_ball(x0, j, nu, &ball))
        .collect::<Result<Vec<_>>>()?;
    let axis = |k: usize, nu: Point2| -> Result<AxisStencil> {
        let second = second_deriv_from_ball(x0, directions.len() + k, nu, &ball)?;
        let disp = |id: NodeId| mesh.point(id) - p0;
        let [n1, n2, n3, n4] = second.neighbors;
        let (b1, b4) = first_deriv_coefficients(disp(n1), disp(n4), nu)?;
        let (b2, b3) = first_deriv_coefficients(disp(n2), disp(n3), nu)?;
        Ok(AxisStencil {
            second,
            forward: TwoPoint {
                neighbors: [n1, n4],
                coeffs: [b1, b4],
            },
            backward: TwoPoint {
                neighbors: [n2, n3],
                coeffs: [b2, b3],
            },
        })
    };
    let axes = [
        axis(0, Point2::new(1.0, 0.0))?,
        axis(1, Point2::new(0.0, 1.0))?,
    ];
    let epsilon = axes.iter().map(lax_friedrichs_ratio).fold(0.0, f64::max);
    Ok(InteriorStencils {
        directions: dirs,
        axes,
        epsilon,
    })
}

/// `max |b| / a` over distinct neighbors of an axis stencil.
fn lax_friedrichs_ratio(axis: &AxisStencil) -> f64 {
    let mut worst: f64 = 0.0;
    let terms = [
        (axis.forward.neighbors[0], axis.forward.coeffs[0]),
        (axis.forward.neighbors[1], axis.forward.coeffs[1]),
        (axis.backward.neighbors[0], axis.backward.coeffs[0]),
        (axis.backward.neighbors[1], axis.backward.coeffs[1]),
    ];
    for (node, b) in terms {
        if b == 0.0 {
            continue;
        }
        let a: f64 = axis
            .second
            .neighbors
            .iter()
            .zip(&axis.second.weights)
            .filter(|(&n, _)| n == node)
            .map(|(_, &w)| w)
            .sum();
        worst = worst.max(b.abs() / a);
    }
    worst
}

/// Quadrant membership of a displacement in `(C, S)` coordinates; points with
/// `C = 0` belong to none, points with `S = 0` to two.
fn in_quadrant(q: usize, c: f64, s: f64) -> bool {
    match q {
        0 => c > 0.0 && s >= 0.0,
        1 => c < 0.0 && s >= 0.0,
        2 => c < 0.0 && s <= 0.0,
        _ => c > 0.0 && s <= 0.0,
    }
}

/// Per quadrant, the candidate minimizing `sin^2 phi`, ties to smaller `rho`
/// then smaller id. Candidates are `(id, displacement)` sorted by id.
fn select_from_ball(
    center: NodeId,
    direction: usize,
    nu: Point2,
    ball: &[(NodeId, Point2)],
) -> Result<[(NodeId, Point2); 4]> {
    let perp = nu.perp();
    let mut best: [Option<(NodeId, Point2, f64, f64)>; 4] = [None; 4];
    for &(id, d) in ball {
        let (c, s) = frame(d, nu, perp);
        let rho2 = c * c + s * s;
        if rho2 == 0.0 {
            continue;
        }
        let sin2 = s * s / rho2;
        for (q, slot) in best.iter_mut().enumerate() {
            if !in_quadrant(q, c, s) {
                continue;
            }
            let better = match *slot {
                None => true,
                Some((_, _, bs, br)) => {
                    sin2 < bs - SIN2_TIE || (sin2 <= bs + SIN2_TIE && rho2 < br)
                }
            };
            if better {
                *slot = Some((id, d, sin2, rho2));
            }
        }
    }
    let mut out = [(0, Point2::ZERO); 4];
    for (q, slot) in best.iter().enumerate() {
        let (id, d, _, _) = slot.ok_or(Error::EmptyQuadrant {
            node: center,
            direction,
            quadrant: q + 1,
        })?;
        out[q] = (id, d);
    }
    Ok(out)
}

fn second_deriv_from_ball(
    center: NodeId,
    direction: usize,
    nu: Point2,
    ball: &[(NodeId, Point2)],
) -> Result<SecondDerivStencil> {
    let chosen = select_from_ball(center, direction, nu, ball)?;
    let disp = chosen.map(|(_, d)| d);
    let weights = second_deriv_weights(nu, disp)?;
    Ok(SecondDerivStencil {
        neighbors: chosen.map(|(id, _)| id),
        weights,
    })
}

/// Neighbors `x1..x4` (one per quadrant of the `(nu, nu_perp)` axes) within
/// distance `r` of the interior node `x0`.
pub fn select_quadrant_neighbors(
    mesh: &QuadMesh,
    x0: NodeId,
    nu: Point2,
    r: f64,
) -> Result<[NodeId; 4]> {
    if mesh.tag(x0) != NodeTag::Interior {
        return Err(Error::InvalidMeshParams(format!(
            "node {x0} is not interior"
        )));
    }
    let p0 = mesh.point(x0);
    let ball: Vec<(NodeId, Point2)> = mesh
        .neighbors_in_ball(x0, r)
        .into_iter()
        .map(|id| (id, mesh.point(id) - p0))
        .collect();
    Ok(select_from_ball(x0, 0, nu.normalized(), &ball)?.map(|(id, _)| id))
}

/// Weights `a_1..a_4` for neighbors at `x_j` around `x0`, one per quadrant.
pub fn second_deriv_coefficients(
    x0: Point2,
    nu: Point2,
    neighbors: [Point2; 4],
) -> Result<[f64; 4]> {
    second_deriv_weights(nu.normalized(), neighbors.map(|p| p - x0))
}

fn second_deriv_weights(nu: Point2, disp: [Point2; 4]) -> Result<[f64; 4]> {
    let perp = nu.perp();
    let cs = disp.map(|d| frame(d, nu, perp));
    let c = cs.map(|(c, _)| c);
    let s = cs.map(|(_, s)| s);
    let scale = disp.iter().map(|d| d.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::DegenerateDenominator {
            denominator: 0.0,
            scale,
        });
    }
    let pos_aligned = s[0] == 0.0 && s[3] == 0.0 && disp[0] == disp[3];
    let neg_aligned = s[1] == 0.0 && s[2] == 0.0 && disp[1] == disp[2];

    let weights = match (pos_aligned, neg_aligned) {
        (true, true) => {
            let (rp, rm) = (c[0], -c[1]);
            let ap = 2.0 / (rp * (rp + rm));
            let am = 2.0 / (rm * (rp + rm));
            [0.5 * ap, 0.5 * am, 0.5 * am, 0.5 * ap]
        }
        (true, false) => {
            let (a, a2, a3) = three_point(c[0], (c[1], s[1]), (c[2], s[2]), scale)?;
            [0.5 * a, a2, a3, 0.5 * a]
        }
        (false, true) => {
            let (a, a1, a4) = three_point(c[1], (c[0], s[0]), (c[3], s[3]), scale)?;
            [a1, 0.5 * a, 0.5 * a, a4]
        }
        (false, false) => {
            let [c1, c2, c3, c4] = c;
            let [s1, s2, s3, s4] = s;
            let p = c3 * s2 - c2 * s3;
            let q = c1 * s4 - c4 * s1;
            let den = p * (c1 * c1 * s4 - c4 * c4 * s1) - q * (c3 * c3 * s2 - c2 * c2 * s3);
            if !(den.abs() >= DEGENERATE_REL * scale.powi(6)) {
                return Err(Error::DegenerateDenominator {
                    denominator: den,
                    scale: scale.powi(6),
                });
            }
            [
                2.0 * s4 * p / den,
                2.0 * s3 * q / den,
                -2.0 * s2 * q / den,
                -2.0 * s1 * p / den,
            ]
        }
    };
    if weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::NonMonotoneStencil(weights.to_vec()));
    }
    Ok(weights)
}

/// One aligned node at `C = ca` and two off-axis nodes on the opposite side:
/// solves `sum a C = 0`, `sum a C^2 = 2`, `a_b S_b + a_c S_c = 0`.
fn three_point(
    ca: f64,
    (cb, sb): (f64, f64),
    (cc, sc): (f64, f64),
    scale: f64,
) -> Result<(f64, f64, f64)> {
    if sb == 0.0 || sc == 0.0 {
        return Err(Error::DegenerateDenominator {
            denominator: 0.0,
            scale,
        });
    }
    let w = -sb / sc;
    let p = cb + cc * w;
    let q = cb * cb + cc * cc * w;
    let den = q - p * ca;
    if !(den.abs() >= DEGENERATE_REL * scale * scale) {
        return Err(Error::DegenerateDenominator {
            denominator: den,
            scale: scale * scale,
        });
    }
    let ab = 2.0 / den;
    Ok((-ab * p / ca, ab, ab * w))
}

/// One-sided first difference along `direction` from neighbors `x1`, `x4`
/// straddling the axis: `(b1, b4)` with `b1 = -k4/(k1 h4 - h1 k4)`,
/// `b4 = k1/(k1 h4 - h1 k4)`. An on-axis neighbor gives the two-point rule.
pub fn first_deriv_coefficients(d1: Point2, d4: Point2, direction: Point2) -> Result<(f64, f64)> {
    let perp = direction.perp();
    let (h1, k1) = frame(d1, direction, perp);
    let (h4, k4) = frame(d4, direction, perp);
    if k1 == 0.0 {
        return Ok((1.0 / h1, 0.0));
    }
    if k4 == 0.0 {
        return Ok((0.0, 1.0 / h4));
    }
    let den = k1 * h4 - h1 * k4;
    let scale = d1.norm().max(d4.norm());
    if !(den.abs() >= DEGENERATE_REL * scale * scale) {
        return Err(Error::DegenerateDenominator {
            denominator: den,
            scale: scale * scale,
        });
    }
    Ok((-k4 / den, k1 / den))
}

/// Coefficients multiplying `u(x_i) - u(x0)` in the boundary approximation
/// of the directional derivative along the outward direction `n`.
pub fn boundary_direction_coefficients(
    x0: Point2,
    n: Point2,
    x1: Point2,
    x2: Point2,
) -> Result<[f64; 2]> {
    boundary_coeffs(n.normalized(), x1 - x0, x2 - x0).ok_or(Error::ConvexHullViolation)
}

fn boundary_coeffs(n: Point2, d1: Point2, d2: Point2) -> Option<[f64; 2]> {
    let perp = n.perp();
    let (h1, k1) = (d1.dot(n), d1.dot(perp));
    let (h2, k2) = (d2.dot(n), d2.dot(perp));
    if h1 > 0.0 || h2 > 0.0 || k1 * k2 > 0.0 {
        return None;
    }
    let den = k1 * h2 - h1 * k2;
    let scale = d1.norm().max(d2.norm());
    if !(den.abs() >= 1e-10 * scale * scale) {
        return None;
    }
    let coeffs = [-k2 / den, k1 / den];
    (coeffs.iter().all(|&c| c <= 0.0) && coeffs.iter().any(|&c| c < 0.0)).then_some(coeffs)
}

/// Nodes `x1`, `x2` within `radius` of the boundary node `x0` such that the
/// inward ray `x0 - t n` enters their triangle with `x0`.
///
/// Among valid pairs, minimizes the truncation bound `sum |coef_i| |x_i - x0|^2`;
/// a node exactly on the inward ray is used alone.
pub fn find_boundary_triangle(
    mesh: &QuadMesh,
    x0: NodeId,
    n: Point2,
    radius: f64,
) -> Result<TwoPoint> {
    let n = n.normalized();
    let perp = n.perp();
    let p0 = mesh.point(x0);
    let mut left: Vec<(NodeId, Point2)> = Vec::new();
    let mut right: Vec<(NodeId, Point2)> = Vec::new();
    let mut best: Option<(f64, TwoPoint)> = None;
    let mut consider = |cost: f64, st: TwoPoint| {
        let better = match &best {
            None => true,
            Some((bc, bs)) => cost < *bc || (cost == *bc && st.neighbors < bs.neighbors),
        };
        if better {
            best = Some((cost, st));
        }
    };
    for id in mesh.neighbors_in_ball(x0, radius) {
        let d = mesh.point(id) - p0;
        let (h, k) = (d.dot(n), d.dot(perp));
        if h >= 0.0 {
            continue;
        }
        if k == 0.0 {
            let rho = d.norm();
            consider(
                rho,
                TwoPoint {
                    neighbors: [id, id],
                    coeffs: [-0.5 / rho, -0.5 / rho],
                },
            );
        } else if k > 0.0 {
            left.push((id, d));
        } else {
            right.push((id, d));
        }
    }
    for &(i, di) in &left {
        for &(j, dj) in &right {
            let (a, b, da, db) = if i < j {
                (i, j, di, dj)
            } else {
                (j, i, dj, di)
            };
            if let Some(c) = boundary_coeffs(n, da, db) {
                let cost = c[0].abs() * da.norm_squared() + c[1].abs() * db.norm_squared();
                consider(
                    cost,
                    TwoPoint {
                        neighbors: [a, b],
                        coeffs: c,
                    },
                );
            }
        }
    }
    best.map(|(_, st)| st).ok_or(Error::NoValidTriangle {
        node: x0,
        direction: 0,
    })
}
