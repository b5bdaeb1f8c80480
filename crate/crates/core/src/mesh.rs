//! Boundary-augmented piecewise Cartesian point sets.
//!
//! Interior nodes are corners of quadtree leaves lying inside the domain at
//! depth at least `delta`; boundary nodes sit on the domain boundary with
//! spacing at most `h_b`. Nodes are ordered interior first (quadtree
//! traversal order) then boundary (arclength order).

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, Point2};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTag {
    Interior,
    Boundary,
}

impl NodeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeTag::Interior => "interior",
            NodeTag::Boundary => "boundary",
        }
    }
}

/// Constants relating the resolution parameters to `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshKnobs {
    /// `dtheta = c_theta * sqrt(h)`
    pub c_theta: f64,
    /// `r = c_r * sqrt(h)`
    pub c_r: f64,
    /// `delta = delta_factor * h`
    pub delta_factor: f64,
    /// `h_b = h^hb_exponent`
    #[serde(rename = "hB_exponent", alias = "hb_exponent")]
    pub hb_exponent: f64,
    /// Extra quadtree levels on cells cut by the boundary.
    pub boundary_levels: u32,
}

impl Default for MeshKnobs {
    fn default() -> Self {
        MeshKnobs {
            c_theta: 1.0,
            c_r: 2.0,
            delta_factor: 0.5,
            hb_exponent: 1.5,
            boundary_levels: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub h: f64,
    pub h_b: f64,
    pub delta: f64,
    pub dtheta: f64,
    pub r: f64,
    pub boundary_levels: u32,
}

impl MeshParams {
    pub fn from_h(h: f64) -> Result<Self> {
        MeshParams::with_knobs(h, &MeshKnobs::default())
    }

    pub fn with_knobs(h: f64, knobs: &MeshKnobs) -> Result<Self> {
        let params = MeshParams {
            h,
            h_b: h.powf(knobs.hb_exponent),
            delta: knobs.delta_factor * h,
            dtheta: knobs.c_theta * h.sqrt(),
            r: knobs.c_r * h.sqrt(),
            boundary_levels: knobs.boundary_levels,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidMeshParams(msg));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h = {}", self.h));
        }
        if !(self.h_b > 0.0 && self.h_b < self.h) {
            return bad(format!(
                "h_b = {} must lie in (0, h = {})",
                self.h_b, self.h
            ));
        }
        if !(self.delta >= 0.25 * self.h - 1e-15 && self.delta <= self.h + 1e-15) {
            return bad(format!("delta = {} must lie in [h/4, h]", self.delta));
        }
        if !(self.dtheta > 0.0 && self.dtheta <= std::f64::consts::PI) {
            return bad(format!("dtheta = {}", self.dtheta));
        }
        if !(self.r > self.h) {
            return bad(format!(
                "search radius r = {} must exceed h = {}",
                self.r, self.h
            ));
        }
        Ok(())
    }
}

/// Measured resolution of a point set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedMetrics {
    pub h: f64,
    pub h_b: f64,
    pub delta: f64,
}

/// Uniform bucket grid for radius and nearest-neighbor queries.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
    len: usize,
}

impl SpatialIndex {
    pub fn new(points: &[Point2], ids: impl IntoIterator<Item = NodeId>, cell: f64) -> Self {
        let ids: Vec<NodeId> = ids.into_iter().collect();
        let (mut lo, mut hi) = (
            Point2::new(f64::INFINITY, f64::INFINITY),
            Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for &i in &ids {
            let p = points[i];
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if ids.is_empty() {
            lo = Point2::ZERO;
            hi = Point2::ZERO;
        }
        let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut index = SpatialIndex {
            origin: lo,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
            len: ids.len(),
        };
        for &i in &ids {
            let (bx, by) = index.bucket_of(points[i]);
            buckets[by * nx + bx].push(i as u32);
        }
        index.buckets = buckets;
        index
    }

    fn bucket_of(&self, p: Point2) -> (usize, usize) {
        let bx = ((p.x - self.origin.x) / self.cell)
            .floor()
            .clamp(0.0, (self.nx - 1) as f64) as usize;
        let by = ((p.y - self.origin.y) / self.cell)
            .floor()
            .clamp(0.0, (self.ny - 1) as f64) as usize;
        (bx, by)
    }

    fn bucket_range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let a = ((lo - origin) / self.cell).floor();
        let b = ((hi - origin) / self.cell).floor();
        if b < 0.0 || a > (n - 1) as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
    }

    /// Calls `f(id, distance)` for every indexed point with `|p - center| <= radius`.
    pub fn for_each_in_ball(
        &self,
        points: &[Point2],
        center: Point2,
        radius: f64,
        mut f: impl FnMut(NodeId, f64),
    ) {
        let Some((x0, x1)) =
            self.bucket_range(center.x - radius, center.x + radius, self.origin.x, self.nx)
        else {
            return;
        };
        let Some((y0, y1)) =
            self.bucket_range(center.y - radius, center.y + radius, self.origin.y, self.ny)
        else {
            return;
        };
        let r2 = radius * radius;
        for by in y0..=y1 {
            for bx in x0..=x1 {
                for &id in &self.buckets[by * self.nx + bx] {
                    let d = points[id as usize] - center;
                    let d2 = d.norm_squared();
                    if d2 <= r2 {
                        f(id as usize, d2.sqrt());
                    }
                }
            }
        }
    }

    /// Nearest indexed point, ties broken by smaller id.
    pub fn nearest(&self, points: &[Point2], p: Point2) -> Option<(NodeId, f64)> {
        if self.len == 0 {
            return None;
        }
        let (bx, by) = self.bucket_of(p);
        let mut best: Option<(NodeId, f64)> = None;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            let (lx, hx) = (bx as isize - ring as isize, bx as isize + ring as isize);
            let (ly, hy) = (by as isize - ring as isize, by as isize + ring as isize);
            for y in ly..=hy {
                for x in lx..=hx {
                    if x != lx && x != hx && y != ly && y != hy {
                        continue;
                    }
                    if x < 0 || y < 0 || x >= self.nx as isize || y >= self.ny as isize {
                        continue;
                    }
                    for &id in &self.buckets[y as usize * self.nx + x as usize] {
                        let d = points[id as usize].distance(p);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && (id as usize) < bi),
                        };
                        if better {
                            best = Some((id as usize, d));
                        }
                    }
                }
            }
            // every point outside the searched square is at least this far
            let searched = self.cell * ring as f64
                + ((p.x - self.origin.x) - bx as f64 * self.cell)
                    .min((bx + 1) as f64 * self.cell - (p.x - self.origin.x))
                    .min((p.y - self.origin.y) - by as f64 * self.cell)
                    .min((by + 1) as f64 * self.cell - (p.y - self.origin.y))
                    .max(0.0);
            if let Some((_, d)) = best {
                if d < searched {
                    break;
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Cell {
    level: u32,
    ix: u64,
    iy: u64,
}

impl Cell {
    fn children(self) -> [Cell; 4] {
        let (l, x, y) = (self.level + 1, 2 * self.ix, 2 * self.iy);
        [
            Cell {
                level: l,
                ix: x,
                iy: y,
            },
            Cell {
                level: l,
                ix: x + 1,
                iy: y,
            },
            Cell {
                level: l,
                ix: x,
                iy: y + 1,
            },
            Cell {
                level: l,
                ix: x + 1,
                iy: y + 1,
            },
        ]
    }

    fn parent(self) -> Option<Cell> {
        (self.level > 0).then(|| Cell {
            level: self.level - 1,
            ix: self.ix / 2,
            iy: self.iy / 2,
        })
    }
}

/// Quadtree over a square root cell; leaves are stored in depth-first order.
#[derive(Clone, Debug)]
pub struct Quadtree {
    origin: Point2,
    root_side: f64,
    leaves: Vec<Cell>,
}

impl Quadtree {
    /// Refines every cell meeting `domain` down to side `h` (exactly), plus
    /// `extra` levels on cells cut by the boundary, then enforces 2:1 balance.
    pub fn build(domain: &ConvexBody, h: f64, extra: u32) -> Quadtree {
        let center = domain.centroid();
        let (lo, hi) = domain.bounding_box();
        let half_extent = (hi.x - center.x)
            .max(center.x - lo.x)
            .max(hi.y - center.y)
            .max(center.y - lo.y)
            + 2.0 * h;
        let mut uniform_level = 0u32;
        while h * (1u64 << uniform_level) as f64 / 2.0 < half_extent {
            uniform_level += 1;
        }
        let root_side = h * (1u64 << uniform_level) as f64;
        let origin = center - Point2::new(0.5 * root_side, 0.5 * root_side);
        let mut tree = Quadtree {
            origin,
            root_side,
            leaves: Vec::new(),
        };

        let mut leaves: HashSet<Cell> = HashSet::new();
        let mut stack = vec![Cell {
            level: 0,
            ix: 0,
            iy: 0,
        }];
        while let Some(cell) = stack.pop() {
            let (c, half_diag) = tree.cell_center(cell);
            let sd = domain.signed_distance(c);
            let wanted = if sd < half_diag && cell.level < uniform_level {
                true
            } else {
                sd.abs() < half_diag && cell.level < uniform_level + extra
            };
            if wanted {
                stack.extend(cell.children());
            } else {
                leaves.insert(cell);
            }
        }
        balance(&mut leaves);
        tree.leaves = depth_first(&leaves);
        tree
    }

    fn cell_side(&self, cell: Cell) -> f64 {
        self.root_side / (1u64 << cell.level) as f64
    }

    fn cell_center(&self, cell: Cell) -> (Point2, f64) {
        let s = self.cell_side(cell);
        let c = self.origin + Point2::new((cell.ix as f64 + 0.5) * s, (cell.iy as f64 + 0.5) * s);
        (c, s * std::f64::consts::FRAC_1_SQRT_2)
    }

    fn corners(&self, cell: Cell) -> [Point2; 4] {
        let s = self.cell_side(cell);
        let p = self.origin + Point2::new(cell.ix as f64 * s, cell.iy as f64 * s);
        [
            p,
            p + Point2::new(s, 0.0),
            p + Point2::new(0.0, s),
            p + Point2::new(s, s),
        ]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn max_level(&self) -> u32 {
        self.leaves.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Side length and center of every leaf, depth-first.
    pub fn leaf_cells(&self) -> Vec<(Point2, f64)> {
        self.leaves
            .iter()
            .map(|&c| (self.cell_center(c).0, self.cell_side(c)))
            .collect()
    }

    /// True when edge-adjacent leaves differ by at most one level.
    pub fn is_balanced(&self) -> bool {
        let set: HashSet<Cell> = self.leaves.iter().copied().collect();
        self.leaves.iter().all(|&c| {
            edge_neighbors(c)
                .into_iter()
                .flatten()
                .all(|n| match covering_leaf(&set, n) {
                    Some(leaf) => leaf.level + 1 >= c.level,
                    None => true,
                })
        })
    }
}

fn edge_neighbors(c: Cell) -> [Option<Cell>; 4] {
    let n = 1u64 << c.level;
    let at = |x: i64, y: i64| {
        (x >= 0 && y >= 0 && (x as u64) < n && (y as u64) < n).then(|| Cell {
            level: c.level,
            ix: x as u64,
            iy: y as u64,
        })
    };
    let (x, y) = (c.ix as i64, c.iy as i64);
    [at(x - 1, y), at(x + 1, y), at(x, y - 1), at(x, y + 1)]
}

/// Leaf containing `cell` (the cell itself or an ancestor), if any.
fn covering_leaf(leaves: &HashSet<Cell>, cell: Cell) -> Option<Cell> {
    let mut cur = Some(cell);
    while let Some(c) = cur {
        if leaves.contains(&c) {
            return Some(c);
        }
        cur = c.parent();
    }
    None
}

fn balance(leaves: &mut HashSet<Cell>) {
    loop {
        let mut split: Vec<Cell> = Vec::new();
        for &c in leaves.iter() {
            for n in edge_neighbors(c).into_iter().flatten() {
                if let Some(leaf) = covering_leaf(leaves, n) {
                    if leaf.level + 1 < c.level {
                        split.push(leaf);
                    }
                }
            }
        }
        if split.is_empty() {
            return;
        }
        split.sort_by_key(|c| (c.level, c.iy, c.ix));
        split.dedup();
        for c in split {
            if leaves.remove(&c) {
                leaves.extend(c.children());
            }
        }
    }
}

fn depth_first(leaves: &HashSet<Cell>) -> Vec<Cell> {
    let mut out = Vec::with_capacity(leaves.len());
    let mut stack = vec![Cell {
        level: 0,
        ix: 0,
        iy: 0,
    }];
    while let Some(c) = stack.pop() {
        if leaves.contains(&c) {
            out.push(c);
        } else {
            // push in reverse so children come out in (sw, se, nw, ne) order
            let ch = c.children();
            stack.extend(ch.iter().rev().copied());
        }
    }
    out
}

/// Finite point set with interior/boundary tags and a radius-query index.
#[derive(Clone, Debug)]
pub struct QuadMesh {
    domain: ConvexBody,
    params: MeshParams,
    nodes: Vec<Point2>,
    tags: Vec<NodeTag>,
    interior_count: usize,
    index: SpatialIndex,
    quadtree: Option<Quadtree>,
    metrics: RealizedMetrics,
}

impl QuadMesh {
    pub fn build(domain: &ConvexBody, params: MeshParams) -> Result<QuadMesh> {
        params.validate()?;
        let tree = Quadtree::build(domain, params.h, params.boundary_levels);
        let scale = tree.root_side / (1u64 << tree.max_level()) as f64;

        let mut seen: HashMap<(i64, i64), ()> = HashMap::new();
        let mut nodes = Vec::new();
        for &cell in &tree.leaves {
            let corners = tree.corners(cell);
            if corners.iter().any(|&p| domain.signed_distance(p) >= 0.0) {
                continue;
            }
            for p in corners {
                if domain.signed_distance(p) > -params.delta {
                    continue;
                }
                let key = (
                    ((p.x - tree.origin.x) / scale).round() as i64,
                    ((p.y - tree.origin.y) / scale).round() as i64,
                );
                if seen.insert(key, ()).is_none() {
                    nodes.push(p);
                }
            }
        }
        let interior = nodes.len();
        if interior < 9 {
            return Err(Error::DomainTooSmall {
                h: params.h,
                interior,
            });
        }
        let mut tags = vec![NodeTag::Interior; interior];
        let boundary = domain.boundary_points_with_spacing(params.h_b)?;
        tags.extend(std::iter::repeat(NodeTag::Boundary).take(boundary.len()));
        nodes.extend(boundary);
        let mut mesh = QuadMesh::assemble(domain.clone(), params, nodes, tags)?;
        mesh.quadtree = Some(tree);
        Ok(mesh)
    }

    /// Mesh from an explicit node list. Interior nodes must precede boundary nodes.
    pub fn from_nodes(
        domain: &ConvexBody,
        params: MeshParams,
        nodes: Vec<Point2>,
        tags: Vec<NodeTag>,
    ) -> Result<QuadMesh> {
        if nodes.len() != tags.len() {
            return Err(Error::InvalidMeshParams(
                "node and tag counts differ".into(),
            ));
        }
        QuadMesh::assemble(domain.clone(), params, nodes, tags)
    }

    fn assemble(
        domain: ConvexBody,
        params: MeshParams,
        nodes: Vec<Point2>,
        tags: Vec<NodeTag>,
    ) -> Result<QuadMesh> {
        let interior_count = tags.iter().take_while(|&&t| t == NodeTag::Interior).count();
        if tags[interior_count..]
            .iter()
            .any(|&t| t == NodeTag::Interior)
        {
            return Err(Error::InvalidMeshParams(
                "interior nodes must precede boundary nodes".into(),
            ));
        }
        if let Some(p) = nodes.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidMeshParams(format!("non-finite node {p:?}")));
        }
        let index = SpatialIndex::new(&nodes, 0..nodes.len(), params.r.max(params.h));
        let mut mesh = QuadMesh {
            domain,
            params,
            nodes,
            tags,
            interior_count,
            index,
            quadtree: None,
            metrics: RealizedMetrics {
                h: 0.0,
                h_b: 0.0,
                delta: 0.0,
            },
        };
        mesh.metrics = mesh.measure();
        Ok(mesh)
    }

    pub fn domain(&self) -> &ConvexBody {
        &self.domain
    }

    pub fn params(&self) -> &MeshParams {
        &self.params
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point(&self, id: NodeId) -> Point2 {
        self.nodes[id]
    }

    pub fn tag(&self, id: NodeId) -> NodeTag {
        self.tags[id]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn interior_ids(&self) -> std::ops::Range<NodeId> {
        0..self.interior_count
    }

    pub fn boundary_ids(&self) -> std::ops::Range<NodeId> {
        self.interior_count..self.nodes.len()
    }

    pub fn quadtree(&self) -> Option<&Quadtree> {
        self.quadtree.as_ref()
    }

    pub fn realized_metrics(&self) -> RealizedMetrics {
        self.metrics
    }

    /// All nodes `y != node` with `|y - x| <= radius`, sorted by id.
    pub fn neighbors_in_ball(&self, node: NodeId, radius: f64) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.index
            .for_each_in_ball(&self.nodes, self.nodes[node], radius, |id, _| {
                if id != node {
                    out.push(id);
                }
            });
        out.sort_unstable();
        out
    }

    /// Visits `(id, distance)` for nodes in the ball, excluding `node`, in
    /// bucket order.
    pub fn for_each_neighbor(&self, node: NodeId, radius: f64, mut f: impl FnMut(NodeId, f64)) {
        self.index
            .for_each_in_ball(&self.nodes, self.nodes[node], radius, |id, d| {
                if id != node {
                    f(id, d)
                }
            });
    }

    /// Interior node closest to `p`, ties to the smaller id.
    /// Node closest to `p`, ties to the smaller id.
    pub fn nearest_node(&self, p: Point2) -> Option<NodeId> {
        self.index.nearest(&self.nodes, p).map(|(i, _)| i)
    }

    pub fn nearest_interior(&self, p: Point2) -> Option<NodeId> {
        self.interior_ids()
            .map(|i| (i, self.nodes[i].distance(p)))
            .fold(None, |best: Option<(NodeId, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
    }

    fn measure(&self) -> RealizedMetrics {
        let h = self.params.h;
        let all = SpatialIndex::new(&self.nodes, 0..self.nodes.len(), h);
        let bnd = SpatialIndex::new(
            &self.nodes,
            self.boundary_ids(),
            self.params.h_b.max(h / 8.0),
        );

        // covering radius over the domain, sampled on an h/4 lattice plus the boundary
        let (lo, hi) = self.domain.bounding_box();
        let step = 0.25 * h;
        let mut covering: f64 = 0.0;
        let nx = ((hi.x - lo.x) / step).floor() as usize;
        let ny = ((hi.y - lo.y) / step).floor() as usize;
        for j in 0..=ny {
            for i in 0..=nx {
                let p = lo + Point2::new(i as f64 * step, j as f64 * step);
                if self.domain.contains(p) {
                    if let Some((_, d)) = all.nearest(&self.nodes, p) {
                        covering = covering.max(d);
                    }
                }
            }
        }
        let samples = ((self.domain.perimeter() / (0.125 * self.params.h_b.min(step))).ceil()
            as usize)
            .max(64);
        let boundary_samples = self.domain.boundary_sample(samples).unwrap_or_default();
        let mut h_b: f64 = 0.0;
        for &p in &boundary_samples {
            if let Some((_, d)) = all.nearest(&self.nodes, p) {
                covering = covering.max(d);
            }
            if let Some((_, d)) = bnd.nearest(&self.nodes, p) {
                h_b = h_b.max(d);
            }
        }
        let interior = SpatialIndex::new(&self.nodes, self.interior_ids(), h);
        let delta = self
            .boundary_ids()
            .filter_map(|i| interior.nearest(&self.nodes, self.nodes[i]).map(|(_, d)| d))
            .fold(f64::INFINITY, f64::min);
        RealizedMetrics {
            h: covering,
            h_b,
            delta,
        }
    }

    /// Writes `node_id,x,y,tag`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "x", "y", "tag"])?;
        for (i, (p, t)) in self.nodes.iter().zip(&self.tags).enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:.17e}", p.x),
                format!("{:.17e}", p.y),
                t.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        reader: R,
        domain: &ConvexBody,
        params: MeshParams,
    ) -> Result<QuadMesh> {
        #[derive(Deserialize)]
        struct Row {
            node_id: usize,
            x: f64,
            y: f64,
            tag: NodeTag,
        }
        let mut rows: Vec<Row> = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<Result<_, _>>()?;
        rows.sort_by_key(|r| r.node_id);
        if rows.iter().enumerate().any(|(i, r)| r.node_id != i) {
            return Err(Error::InvalidMeshParams("node ids must be 0..n".into()));
        }
        let nodes = rows.iter().map(|r| Point2::new(r.x, r.y)).collect();
        let tags = rows.iter().map(|r| r.tag).collect();
        QuadMesh::from_nodes(domain, params, nodes, tags)
    }
}
