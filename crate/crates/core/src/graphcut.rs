//! Per-seed binary segmentation by discrete energy minimization.
//!
//! Every crop pixel becomes a graph vertex connected to its 8-neighborhood.
//! Edge weights follow the geodesic construction: a metric tensor per pixel
//! blends isotropic behavior with the gradient direction, scaled by a
//! conductance derived from the cross-correlation image. A min-cut between
//! the seed disk (source) and the crop frame (sink) traces the cell contour.

use crate::error::{Error, Result};
use crate::image::{gradient, GrayImage, VectorField};
use crate::membrane::{build_cc_image, BioParams, CCImage, CropWindow};
use crate::seeding::Seed;

/// Reading of the conductance formula (see `GraphCutParams::g_mode`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GMode {
    /// g = exp(-10^cc), the verbatim form.
    #[default]
    Literal,
    /// g = exp(-10 * cc), the alternate typographic reading.
    Linear,
}

impl std::str::FromStr for GMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(GMode::Literal),
            "linear" => Ok(GMode::Linear),
            other => Err(Error::Parameter(format!(
                "g-mode must be literal or linear, got `{other}`"
            ))),
        }
    }
}

/// Pixel side length of the square grid.
pub const DELTA: f64 = 1.0;
/// Angular spacing of the 8 grid directions.
pub const DELTA_PHI: f64 = std::f64::consts::PI / 4.0;
/// Weight used for degenerate denominators and source/sink ties.
pub const W_MAX: f64 = 1e6;

/// Conductance g from a cross-correlation value in `[-1, 1]`.
pub fn conductance(cc: f64, mode: GMode) -> f64 {
    debug_assert!((-1.0..=1.0).contains(&cc));
    match mode {
        GMode::Literal => (-(10f64.powf(cc))).exp(),
        GMode::Linear => (-10.0 * cc).exp(),
    }
}

/// Symmetric positive-semidefinite 2x2 metric tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTensor {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl MetricTensor {
    pub const IDENTITY: MetricTensor = MetricTensor {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Quadratic form `e^T D e`.
    pub fn quad(&self, e: (f64, f64)) -> f64 {
        self.xx * e.0 * e.0 + 2.0 * self.xy * e.0 * e.1 + self.yy * e.1 * e.1
    }
}

/// `D = g * I + (1 - g) * u u^T` for a unit gradient direction `u`.
/// Zero-gradient pixels (u = 0) take the isotropic identity tensor.
pub fn metric_tensor(g: f64, u: (f64, f64)) -> MetricTensor {
    if u.0 == 0.0 && u.1 == 0.0 {
        return MetricTensor::IDENTITY;
    }
    MetricTensor {
        xx: g + (1.0 - g) * u.0 * u.0,
        xy: (1.0 - g) * u.0 * u.1,
        yy: g + (1.0 - g) * u.1 * u.1,
    }
}

/// Geodesic edge weight
/// `w = delta^2 |e|^2 dphi det(D) / (2 [e^T D e]^(3/2))`,
/// taken from the tail pixel's tensor. A degenerate denominator
/// (`e^T D e <= 1e-12`) yields `w_max`.
pub fn edge_weight(
    e_pq: (f64, f64),
    d: &MetricTensor,
    delta: f64,
    delta_phi: f64,
    w_max: f64,
) -> f64 {
    let quad = d.quad(e_pq);
    if quad <= 1e-12 {
        return w_max;
    }
    let len_sq = e_pq.0 * e_pq.0 + e_pq.1 * e_pq.1;
    let w = delta * delta * len_sq * delta_phi * d.det() / (2.0 * quad.powf(1.5));
    w.max(0.0)
}

/// One directed pixel-to-pixel edge with its geodesic weight.
#[derive(Debug, Clone, Copy)]
pub struct GraphEdge {
    pub from: u32,
    pub to: u32,
    pub weight: f64,
}

/// Pixel graph of a crop: 8-neighborhood edges plus the source disk C around
/// the seed and the sink frame B.
#[derive(Debug, Clone)]
pub struct PixelGraph {
    width: u32,
    height: u32,
    edges: Vec<GraphEdge>,
    source_set: Vec<bool>,
    sink_set: Vec<bool>,
    tie_weight: f64,
}

const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl PixelGraph {
    /// Builds an 8-neighborhood grid graph with explicit directed weights.
    /// `weight(p, q)` is called once per ordered neighbor pair.
    /// `source_set` and `sink_set` must be disjoint and the source nonempty.
    pub fn from_weights(
        width: u32,
        height: u32,
        mut weight: impl FnMut((u32, u32), (u32, u32)) -> f64,
        source_set: Vec<bool>,
        sink_set: Vec<bool>,
        tie_weight: f64,
    ) -> Result<Self> {
        let n = (width as usize) * (height as usize);
        if source_set.len() != n || sink_set.len() != n {
            return Err(Error::Dimension(
                "constraint buffers do not match the grid".into(),
            ));
        }
        if source_set.iter().zip(&sink_set).any(|(c, b)| *c && *b) {
            return Err(Error::ConstraintViolation(
                "source and sink sets intersect".into(),
            ));
        }
        if !source_set.iter().any(|&c| c) {
            return Err(Error::ConstraintViolation("source set is empty".into()));
        }
        let mut edges = Vec::with_capacity(8 * n);
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let p = (y as usize) * (width as usize) + (x as usize);
                for (ox, oy) in NEIGHBORS_8 {
                    let (qx, qy) = (x + ox, y + oy);
                    if qx < 0 || qy < 0 || qx >= width as i64 || qy >= height as i64 {
                        continue;
                    }
                    let q = (qy as usize) * (width as usize) + (qx as usize);
                    let w = weight((x as u32, y as u32), (qx as u32, qy as u32));
                    edges.push(GraphEdge {
                        from: p as u32,
                        to: q as u32,
                        weight: w,
                    });
                }
            }
        }
        Ok(Self {
            width,
            height,
            edges,
            source_set,
            sink_set,
            tie_weight,
        })
    }

    /// Builds a graph from per-pixel metric tensors; every edge takes its
    /// weight from the tail pixel's tensor.
    pub fn from_tensors(
        width: u32,
        height: u32,
        tensors: &[MetricTensor],
        source_set: Vec<bool>,
        sink_set: Vec<bool>,
        tie_weight: f64,
    ) -> Result<Self> {
        let n = (width as usize) * (height as usize);
        if tensors.len() != n {
            return Err(Error::Dimension(
                "tensor buffer does not match the grid".into(),
            ));
        }
        Self::from_weights(
            width,
            height,
            |p, q| {
                let e = (q.0 as f64 - p.0 as f64, q.1 as f64 - p.1 as f64);
                let d = &tensors[(p.1 as usize) * (width as usize) + (p.0 as usize)];
                edge_weight(e, d, DELTA, DELTA_PHI, tie_weight)
            },
            source_set,
            sink_set,
            tie_weight,
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn source_set(&self) -> &[bool] {
        &self.source_set
    }

    pub fn sink_set(&self) -> &[bool] {
        &self.sink_set
    }
}

/// Per-pixel binary labeling with the energy of its cut.
#[derive(Debug, Clone)]
pub struct BinaryLabeling {
    /// true = cell, false = background.
    pub labels: Vec<bool>,
    /// Directed cut energy of the labeling.
    pub energy: f64,
    pub width: u32,
    pub height: u32,
}

impl BinaryLabeling {
    #[inline]
    pub fn is_cell(&self, x: u32, y: u32) -> bool {
        self.labels[(y as usize) * (self.width as usize) + (x as usize)]
    }
}

/// Builds the pixel graph of a crop: conductance from the CC image, gradient
/// direction from the field, source disk `C = N(seed, r_c/2)`, sink frame B.
pub fn build_graph(
    cc: &CCImage,
    field: &VectorField,
    seed_xy: (u32, u32),
    r_c: u32,
    mode: GMode,
    w_max: f64,
) -> Result<PixelGraph> {
    let (w, h) = (cc.width(), cc.height());
    if field.width() != w || field.height() != h {
        return Err(Error::Dimension(format!(
            "gradient field {}x{} does not match CC image {w}x{h}",
            field.width(),
            field.height()
        )));
    }
    let (sx, sy) = seed_xy;
    if sx >= w || sy >= h {
        return Err(Error::Parameter(format!(
            "seed ({sx}, {sy}) outside {w}x{h} crop"
        )));
    }
    if r_c < 2 {
        return Err(Error::Parameter(format!(
            "radial distance {r_c} gives an empty seed disk (need r_c/2 >= 1)"
        )));
    }

    let n = (w as usize) * (h as usize);
    let mut tensors = Vec::with_capacity(n);
    let mut source_set = vec![false; n];
    let mut sink_set = vec![false; n];
    let r_c_sq = (r_c as i64) * (r_c as i64);
    for y in 0..h {
        for x in 0..w {
            let g = conductance(cc.get(x, y), mode);
            let (dx, dy) = (field.dx(x, y), field.dy(x, y));
            let mag = dx.hypot(dy);
            let u = if mag > 1e-12 {
                (dx / mag, dy / mag)
            } else {
                (0.0, 0.0)
            };
            tensors.push(metric_tensor(g, u));

            let i = (y as usize) * (w as usize) + (x as usize);
            // q in N(s, r_c/2): 4 (dx^2 + dy^2) <= r_c^2 avoids fractions
            let ddx = x as i64 - sx as i64;
            let ddy = y as i64 - sy as i64;
            if 4 * (ddx * ddx + ddy * ddy) <= r_c_sq {
                source_set[i] = true;
            }
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                sink_set[i] = true;
            }
        }
    }
    for i in 0..n {
        if source_set[i] && sink_set[i] {
            return Err(Error::ConstraintViolation(format!(
                "seed disk of radius {r_c}/2 at ({sx}, {sy}) touches the crop frame"
            )));
        }
    }
    PixelGraph::from_tensors(w, h, &tensors, source_set, sink_set, w_max)
}

/// Directed cut energy of a labeling: the summed weight of edges whose tail
/// is labeled cell and whose head is labeled background. Constraint ties add
/// `tie_weight` for every violated source/sink pixel.
pub fn labeling_energy(graph: &PixelGraph, labels: &[bool]) -> f64 {
    let mut energy = 0.0;
    for e in &graph.edges {
        if labels[e.from as usize] && !labels[e.to as usize] {
            energy += e.weight;
        }
    }
    for i in 0..labels.len() {
        if graph.source_set[i] && !labels[i] {
            energy += graph.tie_weight;
        }
        if graph.sink_set[i] && labels[i] {
            energy += graph.tie_weight;
        }
    }
    energy
}

/// Exact min-cut via Dinic's max-flow. Returns the source-side labeling and
/// its energy (recomputed from the crossing edge weights).
pub fn min_cut(graph: &PixelGraph) -> BinaryLabeling {
    let n = (graph.width as usize) * (graph.height as usize);
    let source = n;
    let sink = n + 1;
    let mut flow = Dinic::new(n + 2);
    // merge the two directed pixel edges of each unordered pair into one
    // arc pair so residuals share storage
    let mut weight_of: std::collections::HashMap<(u32, u32), f64> =
        std::collections::HashMap::with_capacity(graph.edges.len());
    for e in &graph.edges {
        weight_of.insert((e.from, e.to), e.weight);
    }
    for e in &graph.edges {
        if e.from < e.to {
            let back = weight_of.get(&(e.to, e.from)).copied().unwrap_or(0.0);
            flow.add_edge(e.from as usize, e.to as usize, e.weight, back);
        } else if !weight_of.contains_key(&(e.to, e.from)) {
            flow.add_edge(e.from as usize, e.to as usize, e.weight, 0.0);
        }
    }
    for i in 0..n {
        if graph.source_set[i] {
            flow.add_edge(source, i, graph.tie_weight, 0.0);
        }
        if graph.sink_set[i] {
            flow.add_edge(i, sink, graph.tie_weight, 0.0);
        }
    }
    flow.max_flow(source, sink);
    let reachable = flow.residual_reachable(source);
    let labels: Vec<bool> = (0..n).map(|i| reachable[i]).collect();
    let energy = labeling_energy(graph, &labels);
    BinaryLabeling {
        labels,
        energy,
        width: graph.width,
        height: graph.height,
    }
}

const FLOW_EPS: f64 = 1e-12;

struct Dinic {
    // arcs stored in pairs: arc k and k^1 are mutual reverses
    to: Vec<u32>,
    cap: Vec<f64>,
    head: Vec<Vec<u32>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Self {
            to: Vec::new(),
            cap: Vec::new(),
            head: vec![Vec::new(); n],
            level: vec![-1; n],
            iter: vec![0; n],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        let k = self.to.len() as u32;
        self.to.push(v as u32);
        self.cap.push(cap_uv);
        self.to.push(u as u32);
        self.cap.push(cap_vu);
        self.head[u].push(k);
        self.head[v].push(k + 1);
    }

    fn bfs(&mut self, source: usize, sink: usize) -> bool {
        self.level.fill(-1);
        self.level[source] = 0;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &k in &self.head[u] {
                let v = self.to[k as usize] as usize;
                if self.cap[k as usize] > FLOW_EPS && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[sink] >= 0
    }

    fn dfs(&mut self, u: usize, sink: usize, pushed: f64) -> f64 {
        if u == sink {
            return pushed;
        }
        while self.iter[u] < self.head[u].len() {
            let k = self.head[u][self.iter[u]] as usize;
            let v = self.to[k] as usize;
            if self.cap[k] > FLOW_EPS && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, sink, pushed.min(self.cap[k]));
                if d > FLOW_EPS {
                    self.cap[k] -= d;
                    self.cap[k ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(source, sink) {
            self.iter.fill(0);
            loop {
                let f = self.dfs(source, sink, f64::INFINITY);
                if f <= FLOW_EPS {
                    break;
                }
                total += f;
            }
        }
        total
    }

    /// Vertices reachable from `source` in the residual graph.
    fn residual_reachable(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        let mut stack = vec![source];
        seen[source] = true;
        while let Some(u) = stack.pop() {
            for &k in &self.head[u] {
                let v = self.to[k as usize] as usize;
                if self.cap[k as usize] > FLOW_EPS && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Graph-cut configuration shared by all seeds of a run.
#[derive(Debug, Clone, Copy)]
pub struct GraphCutParams {
    pub g_mode: GMode,
    pub w_max: f64,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        Self {
            g_mode: GMode::Literal,
            w_max: W_MAX,
        }
    }
}

/// One segmented cell: mask pixels in slice coordinates, the mean CC along
/// the mask boundary, and the cut energy.
#[derive(Debug, Clone)]
pub struct SegmentedCell {
    pub pixels: Vec<(u32, u32)>,
    pub mean_boundary_cc: f64,
    pub energy: f64,
}

/// Segments one seed: crop, CC image, pixel graph, min-cut, then the
/// cell-labeled connected component containing the seed, mapped back to
/// slice coordinates.
pub fn segment_seed(
    slice: &GrayImage,
    seed: &Seed,
    bio: &BioParams,
    params: &GraphCutParams,
) -> Result<SegmentedCell> {
    let crop = CropWindow::extract(slice, seed.x, seed.y, bio.l_m);
    let cc = build_cc_image(&crop, bio);
    let field = gradient(crop.image())?;
    let seed_local = crop.seed_local();
    let graph = build_graph(&cc, &field, seed_local, seed.r_c, params.g_mode, params.w_max)?;
    let labeling = min_cut(&graph);

    let side = crop.side();
    let component = connected_component(&labeling, seed_local, &crop);
    if component.is_empty() {
        return Err(Error::ConstraintViolation(format!(
            "seed ({}, {}) produced an empty cell component",
            seed.x, seed.y
        )));
    }

    // mean CC along the component boundary (4-neighbor definition)
    let in_component = {
        let mut mask = vec![false; (side as usize) * (side as usize)];
        for &(x, y) in &component {
            mask[(y as usize) * (side as usize) + (x as usize)] = true;
        }
        mask
    };
    let mut boundary_cc_sum = 0.0;
    let mut boundary_count = 0usize;
    for &(x, y) in &component {
        let mut on_boundary = false;
        for (ox, oy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as i64 + ox, y as i64 + oy);
            if nx < 0 || ny < 0 || nx >= side as i64 || ny >= side as i64 {
                on_boundary = true;
                break;
            }
            if !in_component[(ny as usize) * (side as usize) + (nx as usize)] {
                on_boundary = true;
                break;
            }
        }
        if on_boundary {
            boundary_cc_sum += cc.get(x, y);
            boundary_count += 1;
        }
    }
    let mean_boundary_cc = if boundary_count > 0 {
        boundary_cc_sum / boundary_count as f64
    } else {
        0.0
    };

    let mut pixels: Vec<(u32, u32)> = component
        .iter()
        .filter_map(|&(x, y)| crop.to_slice(x, y))
        .collect();
    pixels.sort_unstable_by_key(|&(x, y)| (y, x));
    Ok(SegmentedCell {
        pixels,
        mean_boundary_cc,
        energy: labeling.energy,
    })
}

/// 8-connected component of cell-labeled, valid crop pixels containing the
/// seed.
fn connected_component(
    labeling: &BinaryLabeling,
    start: (u32, u32),
    crop: &CropWindow,
) -> Vec<(u32, u32)> {
    let side = labeling.width;
    if !labeling.is_cell(start.0, start.1) || !crop.is_valid(start.0, start.1) {
        return Vec::new();
    }
    let mut seen = vec![false; (side as usize) * (side as usize)];
    let mut out = Vec::new();
    let mut stack = vec![start];
    seen[(start.1 as usize) * (side as usize) + (start.0 as usize)] = true;
    while let Some((x, y)) = stack.pop() {
        out.push((x, y));
        for (ox, oy) in NEIGHBORS_8 {
            let (nx, ny) = (x as i64 + ox, y as i64 + oy);
            if nx < 0 || ny < 0 || nx >= side as i64 || ny >= side as i64 {
                continue;
            }
            let (nx, ny) = (nx as u32, ny as u32);
            let i = (ny as usize) * (side as usize) + (nx as usize);
            if !seen[i] && labeling.is_cell(nx, ny) && crop.is_valid(nx, ny) {
                seen[i] = true;
                stack.push((nx, ny));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membrane::MembraneProfile;

    #[test]
    fn conductance_literal_values() {
        assert!((conductance(0.0, GMode::Literal) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((conductance(1.0, GMode::Literal) - (-10.0f64).exp()).abs() < 1e-12);
        assert!((conductance(-1.0, GMode::Literal) - (-0.1f64).exp()).abs() < 1e-12);
        assert!((conductance(0.0, GMode::Literal) - 0.367879).abs() < 1e-6);
        assert!((conductance(1.0, GMode::Literal) - 4.54e-5).abs() < 1e-7);
        assert!((conductance(-1.0, GMode::Literal) - 0.904837).abs() < 1e-6);
    }

    #[test]
    fn conductance_linear_mode() {
        assert!((conductance(0.5, GMode::Linear) - (-5.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn metric_tensor_limits() {
        let d = metric_tensor(1.0, (0.6, 0.8));
        assert_eq!(d, MetricTensor::IDENTITY);

        let d = metric_tensor(0.0, (1.0, 0.0));
        assert_eq!((d.xx, d.xy, d.yy), (1.0, 0.0, 0.0));

        let d = metric_tensor(0.5, (0.0, 1.0));
        assert_eq!((d.xx, d.xy, d.yy), (0.5, 0.0, 1.0));

        // zero gradient falls back to the identity
        let d = metric_tensor(0.3, (0.0, 0.0));
        assert_eq!(d, MetricTensor::IDENTITY);
    }

    #[test]
    fn edge_weight_reference_values() {
        let id = MetricTensor::IDENTITY;
        let w = edge_weight((1.0, 0.0), &id, DELTA, DELTA_PHI, W_MAX);
        assert!((w - std::f64::consts::PI / 8.0).abs() < 1e-9);

        let w = edge_weight((1.0, 1.0), &id, DELTA, DELTA_PHI, W_MAX);
        assert!((w - std::f64::consts::PI / (8.0 * std::f64::consts::SQRT_2)).abs() < 1e-9);

        // zero determinant kills the numerator
        let d = MetricTensor {
            xx: 1.0,
            xy: 0.0,
            yy: 0.0,
        };
        assert_eq!(edge_weight((1.0, 0.0), &d, DELTA, DELTA_PHI, W_MAX), 0.0);

        // degenerate denominator falls back to w_max
        assert_eq!(edge_weight((0.0, 1.0), &d, DELTA, DELTA_PHI, W_MAX), W_MAX);
    }

    /// Frame sink, explicit source pixels, constant-weight edges.
    fn grid_graph(
        w: u32,
        h: u32,
        sources: &[(u32, u32)],
        weight: impl FnMut((u32, u32), (u32, u32)) -> f64,
    ) -> PixelGraph {
        let n = (w as usize) * (h as usize);
        let mut source_set = vec![false; n];
        for &(x, y) in sources {
            source_set[(y as usize) * (w as usize) + (x as usize)] = true;
        }
        let mut sink_set = vec![false; n];
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    sink_set[(y as usize) * (w as usize) + (x as usize)] = true;
                }
            }
        }
        PixelGraph::from_weights(w, h, weight, source_set, sink_set, W_MAX).unwrap()
    }

    #[test]
    fn graph_edge_counts_on_3x3() {
        let g = grid_graph(3, 3, &[(1, 1)], |_, _| 1.0);
        let outgoing = |p: u32| g.edges().iter().filter(|e| e.from == p).count();
        assert_eq!(outgoing(4), 8); // center
        assert_eq!(outgoing(0), 3); // corner
        assert_eq!(outgoing(1), 5); // edge midpoint
    }

    #[test]
    fn source_disk_follows_radius() {
        // seed at the center of a 13x13 CC image, r_c = 4 -> C = disk of
        // radius 2 around the seed
        let side = 13u32;
        let cc = CCImage::from_values(side, side, vec![0.0; (side * side) as usize]).unwrap();
        let img = GrayImage::filled(side, side, 0.5).unwrap();
        let field = gradient(&img).unwrap();
        let g = build_graph(&cc, &field, (6, 6), 4, GMode::Literal, W_MAX).unwrap();
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                let expected = (x - 6).pow(2) + (y - 6).pow(2) <= 4;
                assert_eq!(
                    g.source_set()[(y * side as i64 + x) as usize],
                    expected,
                    "({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn sink_frame_of_5x5_has_16_pixels() {
        let g = grid_graph(5, 5, &[(2, 2)], |_, _| 1.0);
        assert_eq!(g.sink_set().iter().filter(|&&b| b).count(), 16);
    }

    #[test]
    fn build_graph_rejects_seed_disk_touching_frame() {
        // 9x9 crop, seed at center, r_c = 8 -> disk radius 4 touches the frame
        let side = 9u32;
        let cc = CCImage::from_values(side, side, vec![0.0; (side * side) as usize]).unwrap();
        let img = GrayImage::filled(side, side, 0.5).unwrap();
        let field = gradient(&img).unwrap();
        assert!(matches!(
            build_graph(&cc, &field, (4, 4), 8, GMode::Literal, W_MAX),
            Err(Error::ConstraintViolation(_))
        ));
    }

    #[test]
    fn min_cut_isolates_single_pixel_source_under_equal_weights() {
        // equal weights everywhere: cutting the 8 edges leaving the center
        // is the cheapest cut
        let w = 0.25;
        let g = grid_graph(5, 5, &[(2, 2)], |_, _| w);
        let labeling = min_cut(&g);
        assert!((labeling.energy - 8.0 * w).abs() < 1e-9);
        assert!(labeling.is_cell(2, 2));
        assert_eq!(labeling.labels.iter().filter(|&&c| c).count(), 1);
    }

    #[test]
    fn min_cut_follows_zero_weight_ring() {
        // edges crossing the radius-2.5 circle cost nothing; the cut is free
        let g = grid_graph(9, 9, &[(4, 4)], |p, q| {
            let rp = ((p.0 as f64 - 4.0).powi(2) + (p.1 as f64 - 4.0).powi(2)).sqrt();
            let rq = ((q.0 as f64 - 4.0).powi(2) + (q.1 as f64 - 4.0).powi(2)).sqrt();
            if (rp <= 2.5) != (rq <= 2.5) {
                0.0
            } else {
                1.0
            }
        });
        let labeling = min_cut(&g);
        assert_eq!(labeling.energy, 0.0);
        // the cell side is exactly the disk inside the free ring
        for y in 0..9u32 {
            for x in 0..9u32 {
                let inside =
                    ((x as f64 - 4.0).powi(2) + (y as f64 - 4.0).powi(2)).sqrt() <= 2.5;
                assert_eq!(labeling.is_cell(x, y), inside, "({x}, {y})");
            }
        }
    }

    /// Exhaustive minimum over all labelings respecting the C/B constraints.
    fn brute_force_energy(g: &PixelGraph) -> f64 {
        let n = (g.width() * g.height()) as usize;
        let free: Vec<usize> = (0..n)
            .filter(|&i| !g.source_set()[i] && !g.sink_set()[i])
            .collect();
        assert!(free.len() <= 20, "brute force blowup");
        let mut labels = vec![false; n];
        for i in 0..n {
            labels[i] = g.source_set()[i];
        }
        let mut best = f64::INFINITY;
        for mask in 0u64..(1 << free.len()) {
            for (bit, &i) in free.iter().enumerate() {
                labels[i] = mask & (1 << bit) != 0;
            }
            let e = labeling_energy(g, &labels);
            if e < best {
                best = e;
            }
        }
        best
    }

    #[test]
    fn min_cut_matches_brute_force_on_random_small_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..40 {
            let (w, h) = [(4u32, 4u32), (5, 4), (5, 5), (6, 5)][case % 4];
            let n = (w * h) as usize;
            let tensors: Vec<MetricTensor> = (0..n)
                .map(|_| {
                    let g: f64 = rng.gen_range(0.01..1.0);
                    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    metric_tensor(g, (theta.cos(), theta.sin()))
                })
                .collect();
            let mut source_set = vec![false; n];
            let mut sink_set = vec![false; n];
            let cx = w / 2;
            let cy = h / 2;
            source_set[(cy * w + cx) as usize] = true;
            for y in 0..h {
                for x in 0..w {
                    if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                        sink_set[(y * w + x) as usize] = true;
                    }
                }
            }
            let g = PixelGraph::from_tensors(w, h, &tensors, source_set, sink_set, W_MAX)
                .unwrap();
            let cut = min_cut(&g);
            let brute = brute_force_energy(&g);
            assert_eq!(cut.energy, brute, "case {case} ({w}x{h})");
        }
    }

    #[test]
    fn min_cut_energy_matches_recomputed_crossing_sum() {
        let g = grid_graph(7, 7, &[(3, 3)], |p, q| {
            ((p.0 + q.1) as f64).sin().abs() + 0.01
        });
        let cut = min_cut(&g);
        assert!((cut.energy - labeling_energy(&g, &cut.labels)).abs() < 1e-9);
    }

    /// Euclidean ring stamp: intensity is the membrane bump evaluated at the
    /// distance from the center.
    fn ring_slice(side: u32, center: (f64, f64), r: f64, m_peak: f64, sigma: f64) -> GrayImage {
        GrayImage::from_fn(side, side, |x, y| {
            let rho = ((x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2)).sqrt();
            0.2 + m_peak * (-(rho - r).powi(2) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    fn ring_template(m_peak: f64, sigma: f64, half: u32) -> MembraneProfile {
        let values: Vec<f64> = (0..=2 * half)
            .map(|k| {
                let d = k as f64 - half as f64;
                0.2 + m_peak * (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        MembraneProfile::new(values).unwrap()
    }

    #[test]
    fn segment_seed_recovers_ring_disk() {
        // the correlation ridge sits on the membrane midline, so the cut
        // traces the ring and the mask is the disk it bounds; a non-integer
        // radius keeps the bump peak off the pixel lattice so every band
        // pixel carries a usable gradient direction
        let r = 13.6;
        let sigma = 1.5;
        let h = 3u32;
        let slice = ring_slice(64, (32.0, 32.0), r, 0.6, sigma);
        let bio = BioParams::new(8, 16, 20, ring_template(0.6, sigma, h)).unwrap();
        let seed = Seed {
            x: 32,
            y: 32,
            r_c: 14,
            score: 1.0,
        };
        let cell = segment_seed(&slice, &seed, &bio, &GraphCutParams::default()).unwrap();

        let truth_radius = r;
        let truth: Vec<(u32, u32)> = (0..64u32)
            .flat_map(|y| (0..64u32).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt() <= truth_radius
            })
            .collect();
        let mask: std::collections::HashSet<_> = cell.pixels.iter().copied().collect();
        let truth_set: std::collections::HashSet<_> = truth.iter().copied().collect();
        let inter = mask.intersection(&truth_set).count();
        let dice = 2.0 * inter as f64 / (mask.len() + truth_set.len()) as f64;
        let max_rho = cell
            .pixels
            .iter()
            .map(|&(x, y)| ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(
            dice >= 0.95,
            "dice = {dice}, mask {} px, truth {} px, inter {inter}, max rho {max_rho}, energy {}",
            mask.len(),
            truth_set.len(),
            cell.energy,
        );
        assert!(cell.mean_boundary_cc > 0.5);
    }

    #[test]
    fn segment_seed_on_blank_crop_stays_near_seed_disk() {
        let slice = GrayImage::filled(64, 64, 0.5).unwrap();
        let bio = BioParams::new(4, 8, 12, ring_template(0.5, 1.5, 3)).unwrap();
        let seed = Seed {
            x: 32,
            y: 32,
            r_c: 8,
            score: 1.0,
        };
        let cell = segment_seed(&slice, &seed, &bio, &GraphCutParams::default()).unwrap();
        // the mask cannot be smaller than C; with no contour evidence it must
        // stay a compact blob around the seed rather than fill the crop
        let c_area = {
            let mut count = 0;
            for dy in -4i64..=4 {
                for dx in -4i64..=4 {
                    if 4 * (dx * dx + dy * dy) <= 64 {
                        count += 1;
                    }
                }
            }
            count
        };
        assert!(cell.pixels.len() >= c_area);
        let crop_area = (2 * 12 + 1) * (2 * 12 + 1);
        assert!(cell.pixels.len() < crop_area as usize / 2);
    }

    #[test]
    fn segment_seed_prefers_inner_matching_ring() {
        // two concentric rings; only the inner one matches the template
        // sigma, so the cut follows it
        let inner_r = 8.0;
        let outer_r = 16.0;
        let slice = GrayImage::from_fn(64, 64, |x, y| {
            let rho = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt();
            let inner = 0.6 * (-(rho - inner_r).powi(2) / (2.0 * 1.5 * 1.5)).exp();
            let outer = 0.25 * (-(rho - outer_r).powi(2) / (2.0 * 4.0 * 4.0)).exp();
            0.2 + inner + outer
        })
        .unwrap();
        let bio = BioParams::new(5, 12, 20, ring_template(0.6, 1.5, 3)).unwrap();
        let seed = Seed {
            x: 32,
            y: 32,
            r_c: 8,
            score: 1.0,
        };
        let cell = segment_seed(&slice, &seed, &bio, &GraphCutParams::default()).unwrap();
        let max_rho = cell
            .pixels
            .iter()
            .map(|&(x, y)| ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(
            max_rho < (inner_r + outer_r) / 2.0,
            "cut escaped to the outer ring: max rho = {max_rho}"
        );
    }
}
