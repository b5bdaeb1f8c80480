//! Discrete operators and scheme residuals.
//!
//! Interior nodes carry the Lagrangian-angle operator `F`, the convexity
//! constraint `L`, the Lax-Friedrichs Hamiltonian `H` and the eikonal bound
//! `E`; boundary nodes carry the support-function form of `H` and `E`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, Point2};
use crate::mesh::{NodeId, NodeTag, QuadMesh};
use crate::stencils::StencilCache;

/// Feasibility slack for the eikonal bound.
pub const EIKONAL_SLACK: f64 = 1e-9;

/// Values of `u` at every mesh node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: &QuadMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::LengthMismatch {
                expected: mesh.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(GridFunction { values })
    }

    pub fn from_fn(mesh: &QuadMesh, f: impl Fn(Point2) -> f64) -> Result<Self> {
        GridFunction::new(mesh, mesh.nodes().iter().map(|&p| f(p)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<NodeId> for GridFunction {
    type Output = f64;

    fn index(&self, i: NodeId) -> &f64 {
        &self.values[i]
    }
}

/// Branch attaining the max in a scheme row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    F,
    L,
    H,
    E,
    /// The normalization row `u(x0) = 0`.
    N,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Branch::F => "F",
            Branch::L => "L",
            Branch::H => "H",
            Branch::E => "E",
            Branch::N => "N",
        };
        f.write_str(s)
    }
}

/// Data selected by the active branch, enough to differentiate the row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Active {
    /// `-atan(lambda_lo) - atan(lambda_hi) + c`; direction indices and values.
    F {
        lo: usize,
        hi: usize,
        lambda_lo: f64,
        lambda_hi: f64,
    },
    /// `-lambda_lo`.
    L {
        lo: usize,
    },
    /// Lax-Friedrichs Hamiltonian at the discrete gradient `p`.
    HInterior {
        p: Point2,
    },
    /// Boundary support-function form; index into the node's boundary stencils.
    HBoundary {
        slot: usize,
    },
    /// Eikonal term attained at neighbor `y`.
    E {
        y: NodeId,
    },
    Normalization,
}

impl Active {
    pub fn branch(&self) -> Branch {
        match self {
            Active::F { .. } => Branch::F,
            Active::L { .. } => Branch::L,
            Active::HInterior { .. } | Active::HBoundary { .. } => Branch::H,
            Active::E { .. } => Branch::E,
            Active::Normalization => Branch::N,
        }
    }
}

/// Residual vector with the branch attaining each row.
#[derive(Clone, Debug)]
pub struct Residual {
    pub values: Vec<f64>,
    pub active: Vec<Active>,
}

impl Residual {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn branches(&self) -> Vec<Branch> {
        self.active.iter().map(Active::branch).collect()
    }

    /// Writes `node_id,residual,branch`; the normalization row uses id `n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "residual", "branch"])?;
        for (i, (v, a)) in self.values.iter().zip(&self.active).enumerate() {
            w.write_record([i.to_string(), format!("{v:.17e}"), a.branch().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimal and maximal second directional derivatives over the direction set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaExtremes {
    pub lo: f64,
    pub hi: f64,
    pub argmin: usize,
    pub argmax: usize,
}

/// Problem data shared by all operator evaluations on one mesh.
#[derive(Clone, Debug)]
pub struct OperatorConfig {
    pub target: ConvexBody,
    /// Gradient bound `R`; must exceed the target's support maximum.
    pub gradient_bound: f64,
    /// Boundary relaxation `kappa(h) >= 0` for the second scheme.
    pub kappa: f64,
}

impl OperatorConfig {
    pub fn new(target: ConvexBody) -> Self {
        let gradient_bound = target.gradient_bound_r();
        OperatorConfig {
            target,
            gradient_bound,
            kappa: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_bound > self.target.max_norm()) {
            return Err(Error::Config(format!(
                "gradient bound {} must exceed the target support maximum {}",
                self.gradient_bound,
                self.target.max_norm()
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kappa = {} must be nonnegative",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Mesh, stencils and target bundled for operator evaluation.
#[derive(Debug)]
pub struct Discretization<'a> {
    pub mesh: &'a QuadMesh,
    pub stencils: &'a StencilCache,
    pub config: OperatorConfig,
    /// `H*(n)` per direction of the full circle.
    support: Vec<f64>,
    anchor: NodeId,
}

impl<'a> Discretization<'a> {
    pub fn new(
        mesh: &'a QuadMesh,
        stencils: &'a StencilCache,
        config: OperatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let support = stencils
            .full_circle()
            .iter()
            .map(|&n| config.target.support_function(n))
            .collect();
        let anchor =
            mesh.nearest_interior(mesh.domain().centroid())
                .ok_or(Error::DomainTooSmall {
                    h: mesh.params().h,
                    interior: 0,
                })?;
        Ok(Discretization {
            mesh,
            stencils,
            config,
            support,
            anchor,
        })
    }

    /// The interior node `x0^h` nearest the domain centroid.
    pub fn anchor(&self) -> NodeId {
        self.anchor
    }

    pub fn support(&self, direction: usize) -> f64 {
        self.support[direction]
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.mesh.len() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn lambda_extremes(&self, u: &[f64], x: NodeId) -> LambdaExtremes {
        let st = &self.stencils.interior(x).directions;
        let mut out = LambdaExtremes {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            argmin: 0,
            argmax: 0,
        };
        for (j, s) in st.iter().enumerate() {
            let d = s.apply(x, u);
            if d < out.lo {
                out.lo = d;
                out.argmin = j;
            }
            if d > out.hi {
                out.hi = d;
                out.argmax = j;
            }
        }
        out
    }

    pub fn eval_f(&self, u: &[f64], x: NodeId) -> f64 {
        let l = self.lambda_extremes(u, x);
        -l.lo.atan() - l.hi.atan()
    }

    pub fn eval_l(&self, u: &[f64], x: NodeId) -> f64 {
        -self.lambda_extremes(u, x).lo
    }

    /// `max (u(x) - u(y)) / |x - y|` over the search ball, with the maximizer.
    pub fn eval_e(&self, u: &[f64], x: NodeId) -> Result<(f64, NodeId)> {
        let mut best: Option<(f64, NodeId)> = None;
        let ux = u[x];
        self.mesh
            .for_each_neighbor(x, self.mesh.params().r, |y, d| {
                let v = (ux - u[y]) / d;
                let better = match best {
                    None => true,
                    Some((bv, by)) => v > bv || (v == bv && y < by),
                };
                if better {
                    best = Some((v, y));
                }
            });
        best.ok_or(Error::NoNeighbors(x))
    }

    /// Centered generalized gradient at an interior node.
    pub fn gradient(&self, u: &[f64], x: NodeId) -> Point2 {
        let axes = &self.stencils.interior(x).axes;
        Point2::new(axes[0].centered(x, u), axes[1].centered(x, u))
    }

    /// Lax-Friedrichs Hamiltonian and the discrete gradient it was evaluated at.
    pub fn eval_h_interior(&self, u: &[f64], x: NodeId) -> (f64, Point2) {
        let st = self.stencils.interior(x);
        let p = self.gradient(u, x);
        let lap = st.axes[0].second.apply(x, u) + st.axes[1].second.apply(x, u);
        (self.config.target.signed_distance(p) - st.epsilon * lap, p)
    }

    /// `max_n (D_n u - H*(n))` over admissible directions, with the slot index.
    pub fn eval_h_boundary(&self, u: &[f64], x: NodeId) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, d) in self.stencils.boundary(x).directions.iter().enumerate() {
            let v = d.stencil.apply(x, u) - self.support[d.direction];
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    }

    /// First scheme: interior `F + c`, boundary `H`, then `u(x0)`.
    pub fn eval_scheme1(&self, u: &[f64], c: f64) -> Result<Residual> {
        self.check(u)?;
        let n = self.mesh.len();
        let mut values = Vec::with_capacity(n + 1);
        let mut active = Vec::with_capacity(n + 1);
        for x in 0..n {
            match self.mesh.tag(x) {
                NodeTag::Interior => {
                    let l = self.lambda_extremes(u, x);
                    values.push(-l.lo.atan() - l.hi.atan() + c);
                    active.push(Active::F {
                        lo: l.argmin,
                        hi: l.argmax,
                        lambda_lo: l.lo,
                        lambda_hi: l.hi,
                    });
                }
                NodeTag::Boundary => {
                    let (v, slot) = self.eval_h_boundary(u, x);
                    values.push(v);
                    active.push(Active::HBoundary { slot });
                }
            }
        }
        values.push(u[self.anchor]);
        active.push(Active::Normalization);
        Ok(Residual { values, active })
    }

    /// Second scheme: interior `max{F + c, L, H, E - R}`, boundary
    /// `max{H + kappa u, E - R}`. Ties resolve in the order F, L, H, E.
    pub fn eval_scheme2(&self, u: &[f64], c: f64) -> Result<Residual> {
        self.check(u)?;
        let n = self.mesh.len();
        let r_bound = self.config.gradient_bound;
        let kappa = self.config.kappa;
        let mut values = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        for x in 0..n {
            let (e, y) = self.eval_e(u, x)?;
            let mut best = match self.mesh.tag(x) {
                NodeTag::Interior => {
                    let l = self.lambda_extremes(u, x);
                    let mut best = (
                        -l.lo.atan() - l.hi.atan() + c,
                        Active::F {
                            lo: l.argmin,
                            hi: l.argmax,
                            lambda_lo: l.lo,
                            lambda_hi: l.hi,
                        },
                    );
                    if -l.lo > best.0 {
                        best = (-l.lo, Active::L { lo: l.argmin });
                    }
                    let (h, p) = self.eval_h_interior(u, x);
                    if h > best.0 {
                        best = (h, Active::HInterior { p });
                    }
                    best
                }
                NodeTag::Boundary => {
                    let (h, slot) = self.eval_h_boundary(u, x);
                    (h + kappa * u[x], Active::HBoundary { slot })
                }
            };
            if e - r_bound > best.0 {
                best = (e - r_bound, Active::E { y });
            }
            values.push(best.0);
            active.push(best.1);
        }
        Ok(Residual { values, active })
    }

    /// Whether `E <= R + slack` everywhere; returns the worst node and its `E`.
    pub fn eikonal_feasibility(&self, u: &[f64]) -> Result<(bool, NodeId, f64)> {
        self.check(u)?;
        let mut worst = (0, f64::NEG_INFINITY);
        for x in 0..self.mesh.len() {
            let (e, _) = self.eval_e(u, x)?;
            if e > worst.1 {
                worst = (x, e);
            }
        }
        Ok((
            worst.1 <= self.config.gradient_bound + EIKONAL_SLACK,
            worst.0,
            worst.1,
        ))
    }
}

/// `arctan` derivative.
pub fn atan_prime(x: f64) -> f64 {
    1.0 / (1.0 + x * x)
}

/// Continuum Lagrangian angle operator `-atan(l1) - atan(l2)` of a symmetric matrix.
pub fn lagrangian_angle_operator(eigs: (f64, f64)) -> f64 {
    -eigs.0.atan() - eigs.1.atan()
}
