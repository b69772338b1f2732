//! Object-goal navigation on top-down maps: free space from the height
//! layer, goal maps, a fan-of-steps A* with a swept-disk edge check, the
//! grid-Dijkstra oracle and open-loop episode execution against ground truth.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{Cell, GridSpec};
use crate::imgproc::{line_of_sight, morphology, BinaryRaster, MorphOp, Raster};
use crate::memory::SpatialMemory;
use crate::rng::Rng;
use crate::scene::AgentState;
use crate::SemanticMap;

pub const DEFAULT_AGENT_RADIUS: f64 = 0.10;
pub const STEP_LENGTH: f64 = 0.25;
pub const FAN_SIZE: usize = 12;
pub const STOP_RADIUS: f64 = 1.0;
/// Height histogram bin for the floor estimate, meters.
pub const FLOOR_BIN: f64 = 0.01;
/// Heights within this distance of the floor count as free.
pub const FLOOR_TOLERANCE: f64 = 0.05;
/// Square element side for closing free space and opening goal maps.
pub const MORPH_SIDE: usize = 10;

/// Squared Euclidean distance transform in cells: distance from every cell
/// to the nearest set cell of `sites`, `inf` when there is none.
pub fn squared_edt(sites: &BinaryRaster) -> Raster<f64> {
    let (w, h) = (sites.width, sites.height);
    let mut f: Vec<f64> = sites.data.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut buf = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for y in 0..h {
        buf[..w].copy_from_slice(&f[y * w..(y + 1) * w]);
        edt_1d(&buf[..w], &mut out[..w]);
        f[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    for x in 0..w {
        for y in 0..h {
            buf[y] = f[y * w + x];
        }
        edt_1d(&buf[..h], &mut out[..h]);
        for y in 0..h {
            f[y * w + x] = out[y];
        }
    }
    Raster {
        width: w,
        height: h,
        data: f,
    }
}

/// Lower envelope of parabolas (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    let mut v = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    v.push(sites[0]);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    for &q in &sites[1..] {
        loop {
            let p = *v.last().unwrap();
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                *z.last_mut().unwrap() = s;
                v.push(q);
                z.push(f64::INFINITY);
                break;
            }
        }
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Mode of observed heights over [`FLOOR_BIN`]-wide bins centered on
/// multiples of the bin width (ties to the lower bin).
pub fn floor_height(heights: &[f32], observed: &BinaryRaster) -> Result<f64> {
    let mut hist: HashMap<i64, usize> = HashMap::new();
    for (h, &o) in heights.iter().zip(&observed.data) {
        if o {
            *hist.entry((*h as f64 / FLOOR_BIN).round() as i64).or_default() += 1;
        }
    }
    hist.into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(bin, _)| bin as f64 * FLOOR_BIN)
        .ok_or(Error::NoObservations)
}

/// Observed cells near the floor height, closed with a [`MORPH_SIDE`] square.
pub fn freespace_from_heights(heights: &[f32], observed: &BinaryRaster) -> Result<BinaryRaster> {
    let floor = floor_height(heights, observed)?;
    let mut free = Raster::new(observed.width, observed.height, false);
    for i in 0..heights.len() {
        free.data[i] = observed.data[i] && (heights[i] as f64 - floor).abs() <= FLOOR_TOLERANCE;
    }
    Ok(morphology(&free, MorphOp::Close, MORPH_SIDE))
}

pub fn estimate_freespace(mem: &SpatialMemory) -> Result<BinaryRaster> {
    freespace_from_heights(&mem.heights, &mem.observed)
}

/// Target cells opened with a [`MORPH_SIDE`] square.
pub fn build_goal_map(map: &SemanticMap, target: u8) -> BinaryRaster {
    let raw = map.labels.map(|l| l == target);
    morphology(&raw, MorphOp::Open, MORPH_SIDE)
}

/// Distance from a point to an axis-aligned square `[x0,x1] x [z0,z1]`.
fn point_square_distance(p: (f64, f64), x0: f64, x1: f64, z0: f64, z1: f64) -> f64 {
    let dx = (x0 - p.0).max(0.0).max(p.0 - x1);
    let dz = (z0 - p.1).max(0.0).max(p.1 - z1);
    dx.hypot(dz)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vz) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vz * vz;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vz) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vz)
}

/// Liang-Barsky clip of segment `ab` against the square.
fn segment_hits_square(a: (f64, f64), b: (f64, f64), x0: f64, x1: f64, z0: f64, z1: f64) -> bool {
    let (dx, dz) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - x0), (dx, x1 - a.0), (-dz, a.1 - z0), (dz, z1 - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Exact distance between segment `ab` and a square.
pub fn segment_square_distance(a: (f64, f64), b: (f64, f64), x0: f64, x1: f64, z0: f64, z1: f64) -> f64 {
    if segment_hits_square(a, b, x0, x1, z0, z1) {
        return 0.0;
    }
    let mut d = point_square_distance(a, x0, x1, z0, z1).min(point_square_distance(b, x0, x1, z0, z1));
    for corner in [(x0, z0), (x0, z1), (x1, z0), (x1, z1)] {
        d = d.min(point_segment_distance(corner, a, b));
    }
    d
}

/// True iff no blocked or out-of-grid cell comes closer than `radius` to the
/// segment `ab`.
pub fn segment_clear(free: &BinaryRaster, g: &GridSpec, a: (f64, f64), b: (f64, f64), radius: f64) -> bool {
    let (u0, v0) = g.cell_coords(a.0.min(b.0) - radius, a.1.min(b.1) - radius);
    let (u1, v1) = g.cell_coords(a.0.max(b.0) + radius, a.1.max(b.1) + radius);
    for v in v0..=v1 {
        for u in u0..=u1 {
            let blocked = match g.checked_cell(u, v) {
                Some((uu, vv)) => !free.get(uu, vv),
                None => true,
            };
            if !blocked {
                continue;
            }
            let x0 = g.origin_x + u as f64 * g.resolution;
            let z0 = g.origin_z + v as f64 * g.resolution;
            if segment_square_distance(a, b, x0, x0 + g.resolution, z0, z0 + g.resolution) < radius {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    pub agent_radius: f64,
    pub step: f64,
    pub fan: usize,
    pub stop_radius: f64,
    /// Expand by heuristic alone instead of path cost plus heuristic.
    pub greedy: bool,
    pub max_expansions: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            agent_radius: DEFAULT_AGENT_RADIUS,
            step: STEP_LENGTH,
            fan: FAN_SIZE,
            stop_radius: STOP_RADIUS,
            greedy: false,
            max_expansions: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    /// Start pose first.
    pub poses: Vec<AgentState>,
    pub length: f64,
}

/// Goal cells and their distance field, with a memoized stopping test.
struct StopTest<'a> {
    grid: &'a GridSpec,
    goal: &'a BinaryRaster,
    observed: &'a BinaryRaster,
    dist2: Raster<f64>,
    radius_cells: f64,
    memo: HashMap<usize, bool>,
}

impl<'a> StopTest<'a> {
    fn new(grid: &'a GridSpec, goal: &'a BinaryRaster, observed: &'a BinaryRaster, radius: f64) -> Self {
        StopTest {
            grid,
            goal,
            observed,
            dist2: squared_edt(goal),
            radius_cells: radius / grid.resolution,
            memo: HashMap::new(),
        }
    }

    /// Meters from the cell center to the nearest goal cell center.
    fn distance(&self, cell: Cell) -> f64 {
        self.dist2.get(cell.0, cell.1).sqrt() * self.grid.resolution
    }

    /// Within the stop radius of a goal cell that is in line of sight over
    /// the observed mask. Candidates are tried nearest first.
    fn satisfied(&mut self, cell: Cell) -> bool {
        let r = self.radius_cells;
        if self.dist2.get(cell.0, cell.1) > r * r + 1e-9 {
            return false;
        }
        let idx = self.grid.index(cell);
        if let Some(&hit) = self.memo.get(&idx) {
            return hit;
        }
        let reach = r.floor() as i64;
        let (cu, cv) = (cell.0 as i64, cell.1 as i64);
        let mut candidates = Vec::new();
        for v in (cv - reach).max(0)..=(cv + reach).min(self.grid.v_size as i64 - 1) {
            for u in (cu - reach).max(0)..=(cu + reach).min(self.grid.u_size as i64 - 1) {
                let d2 = ((u - cu) * (u - cu) + (v - cv) * (v - cv)) as f64;
                if d2 <= r * r + 1e-9 && self.goal.get(u as usize, v as usize) {
                    candidates.push((d2 as i64, v, u));
                }
            }
        }
        candidates.sort_unstable();
        let hit = candidates
            .into_iter()
            .any(|(_, v, u)| line_of_sight(self.observed, cell, (u as usize, v as usize)).unwrap_or(false));
        self.memo.insert(idx, hit);
        hit
    }
}

/// Distance from each cell center to the nearest blocked cell center, with
/// the area outside the grid counted as blocked.
fn clearance_field(free: &BinaryRaster, g: &GridSpec) -> Raster<f64> {
    let dist2 = squared_edt(&free.complement());
    let mut out = Raster::new(free.width, free.height, 0.0);
    for v in 0..free.height {
        for u in 0..free.width {
            let border = (u + 1).min(v + 1).min(free.width - u).min(free.height - v) as f64;
            out.set(u, v, dist2.get(u, v).sqrt().min(border) * g.resolution);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    f: f64,
    order: u64,
    node: usize,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap pops the smallest f, then the oldest entry
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

struct Node {
    x: f64,
    z: f64,
    /// Heading as start yaw plus `turns` fan increments.
    turns: i64,
    parent: usize,
    g: f64,
}

/// Best-first search over poses reached by fans of fixed-length steps.
///
/// Poses are deduplicated by (grid cell, heading bucket). An edge is valid
/// when the agent disk swept along it touches only free cells. The search
/// stops at the first expanded pose within `stop_radius` of a goal cell that
/// is in line of sight over `observed`.
pub fn plan_astar(
    free: &BinaryRaster,
    goal: &BinaryRaster,
    observed: &BinaryRaster,
    g: &GridSpec,
    start: AgentState,
    params: &PlannerParams,
) -> Result<PlannedPath> {
    let start_cell = g
        .checked_cell(g.cell_coords(start.x, start.z).0, g.cell_coords(start.x, start.z).1)
        .filter(|c| free.get(c.0, c.1))
        .ok_or(Error::StartBlocked)?;
    if goal.count() == 0 {
        return Err(Error::NoPath);
    }
    let mut stop = StopTest::new(g, goal, observed, params.stop_radius);
    let clearance = clearance_field(free, g);
    let fast_clear = params.agent_radius + params.step + g.resolution * std::f64::consts::SQRT_2;
    let fan = params.fan.max(1) as i64;
    let turn = std::f64::consts::TAU / fan as f64;
    let heuristic = |stop: &StopTest, cell: Cell| (stop.distance(cell) - params.stop_radius).max(0.0);

    let mut nodes = vec![Node {
        x: start.x,
        z: start.z,
        turns: 0,
        parent: usize::MAX,
        g: 0.0,
    }];
    let key = |cell: Cell, turns: i64| (g.index(cell), turns.rem_euclid(fan));
    let mut best_g: HashMap<(usize, i64), f64> = HashMap::new();
    best_g.insert(key(start_cell, 0), 0.0);
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    heap.push(Queued {
        f: heuristic(&stop, start_cell),
        order,
        node: 0,
    });
    let mut expansions = 0usize;
    while let Some(Queued { node, .. }) = heap.pop() {
        let (x, z, turns, cost) = (nodes[node].x, nodes[node].z, nodes[node].turns, nodes[node].g);
        let (u, v) = g.cell_coords(x, z);
        let cell = (u as usize, v as usize);
        if best_g.get(&key(cell, turns)).is_some_and(|&b| cost > b) {
            continue;
        }
        if stop.satisfied(cell) {
            return Ok(trace_path(&nodes, node, start.yaw, turn));
        }
        expansions += 1;
        if expansions > params.max_expansions {
            break;
        }
        for k in 0..fan {
            let t = turns + k;
            let yaw = start.yaw + t as f64 * turn;
            let (nx, nz) = (x + params.step * yaw.sin(), z + params.step * yaw.cos());
            let (nu, nv) = g.cell_coords(nx, nz);
            let Some(ncell) = g.checked_cell(nu, nv) else {
                continue;
            };
            if !free.get(ncell.0, ncell.1) {
                continue;
            }
            let ng = cost + params.step;
            let entry = match best_g.entry(key(ncell, t)) {
                Entry::Occupied(e) if *e.get() <= ng => continue,
                e => e,
            };
            let clear = clearance.get(cell.0, cell.1) >= fast_clear
                || segment_clear(free, g, (x, z), (nx, nz), params.agent_radius);
            if !clear {
                continue;
            }
            match entry {
                Entry::Occupied(mut e) => {
                    e.insert(ng);
                }
                Entry::Vacant(e) => {
                    e.insert(ng);
                }
            }
            nodes.push(Node {
                x: nx,
                z: nz,
                turns: t,
                parent: node,
                g: ng,
            });
            order += 1;
            let h = heuristic(&stop, ncell);
            heap.push(Queued {
                f: if params.greedy { h } else { ng + h },
                order,
                node: nodes.len() - 1,
            });
        }
    }
    Err(Error::NoPath)
}

fn trace_path(nodes: &[Node], last: usize, start_yaw: f64, turn: f64) -> PlannedPath {
    let mut poses = Vec::new();
    let mut i = last;
    let length = nodes[last].g;
    loop {
        let n = &nodes[i];
        poses.push(AgentState {
            x: n.x,
            z: n.z,
            yaw: start_yaw + n.turns as f64 * turn,
        });
        if n.parent == usize::MAX {
            break;
        }
        i = n.parent;
    }
    poses.reverse();
    PlannedPath { poses, length }
}

/// Shortest 8-connected grid path length from `start` to the first cell
/// within `stop_radius` of a goal cell (cell-center distances); `inf` when
/// unreachable or when the start is not free.
pub fn oracle_shortest_within(
    free: &BinaryRaster,
    g: &GridSpec,
    start: (f64, f64),
    goal: &BinaryRaster,
    stop_radius: f64,
) -> f64 {
    let (su, sv) = g.cell_coords(start.0, start.1);
    let Some(s) = g.checked_cell(su, sv).filter(|c| free.get(c.0, c.1)) else {
        return f64::INFINITY;
    };
    let dist2 = squared_edt(goal);
    let r = stop_radius / g.resolution;
    let on_shell = |c: Cell| dist2.get(c.0, c.1) <= r * r + 1e-9;
    let mut best = vec![f64::INFINITY; g.len()];
    let mut heap = BinaryHeap::new();
    best[g.index(s)] = 0.0;
    heap.push(Queued {
        f: 0.0,
        order: g.index(s) as u64,
        node: g.index(s),
    });
    let diag = g.resolution * std::f64::consts::SQRT_2;
    while let Some(Queued { f: d, node, .. }) = heap.pop() {
        if d > best[node] {
            continue;
        }
        let (u, v) = g.cell_of_index(node);
        if on_shell((u, v)) {
            return d;
        }
        for dv in -1i64..=1 {
            for du in -1i64..=1 {
                if du == 0 && dv == 0 {
                    continue;
                }
                let Some(n) = g.checked_cell(u as i64 + du, v as i64 + dv) else {
                    continue;
                };
                if !free.get(n.0, n.1) {
                    continue;
                }
                let nd = d + if du != 0 && dv != 0 { diag } else { g.resolution };
                let ni = g.index(n);
                if nd < best[ni] {
                    best[ni] = nd;
                    heap.push(Queued {
                        f: nd,
                        order: ni as u64,
                        node: ni,
                    });
                }
            }
        }
    }
    f64::INFINITY
}

/// [`oracle_shortest_within`] with the default 1 m stopping shell.
pub fn oracle_shortest(free: &BinaryRaster, g: &GridSpec, start: (f64, f64), goal: &BinaryRaster) -> f64 {
    oracle_shortest_within(free, g, start, goal, STOP_RADIUS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub id: u32,
    pub start: AgentState,
    pub target: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub id: u32,
    pub success: bool,
    /// Executed poses, start first.
    pub path: Vec<AgentState>,
    /// Executed length `p`.
    pub path_length: f64,
    /// Oracle shortest length `l` on ground truth.
    pub oracle_length: f64,
    pub initial_distance: f64,
    pub final_distance: f64,
}

/// Maps the planner sees.
#[derive(Debug, Clone, Copy)]
pub struct PlanningMaps<'a> {
    pub semantic: &'a SemanticMap,
    pub free: &'a BinaryRaster,
    pub observed: &'a BinaryRaster,
}

/// Ground truth used to execute and score an episode.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub semantic: &'a SemanticMap,
    pub free: &'a BinaryRaster,
}

/// Plans on `maps`, then executes the plan open loop against ground truth:
/// the agent stops before the first segment whose swept disk touches a
/// GT-occupied cell. Success means the final pose meets the stopping test
/// against the target's GT footprint.
pub fn run_episode(ep: &Episode, maps: &PlanningMaps, gt: &GroundTruth, params: &PlannerParams) -> EpisodeResult {
    let g = &gt.semantic.grid;
    let target = gt.semantic.labels.map(|l| l == ep.target);
    let failed = |path: Vec<AgentState>, l: f64| EpisodeResult {
        id: ep.id,
        success: false,
        path,
        path_length: 0.0,
        oracle_length: l,
        initial_distance: l,
        final_distance: l,
    };
    if target.count() == 0 {
        return failed(vec![ep.start], f64::INFINITY);
    }
    let start = (ep.start.x, ep.start.z);
    let l = oracle_shortest(gt.free, g, start, &target);
    let goal = build_goal_map(maps.semantic, ep.target);
    let planned = plan_astar(maps.free, &goal, maps.observed, g, ep.start, params)
        .map(|p| p.poses)
        .unwrap_or_else(|_| vec![ep.start]);
    let mut path = vec![planned[0]];
    let mut length = 0.0;
    for w in planned.windows(2) {
        let (a, b) = ((w[0].x, w[0].z), (w[1].x, w[1].z));
        if !segment_clear(gt.free, g, a, b, params.agent_radius) {
            break;
        }
        length += (b.0 - a.0).hypot(b.1 - a.1);
        path.push(w[1]);
    }
    let last = *path.last().expect("path has the start");
    let (u, v) = g.cell_coords(last.x, last.z);
    let Some(cell) = g.checked_cell(u, v) else {
        return failed(path, l);
    };
    let success = StopTest::new(g, &target, maps.observed, params.stop_radius).satisfied(cell);
    let d = oracle_shortest(gt.free, g, (last.x, last.z), &target);
    EpisodeResult {
        id: ep.id,
        success,
        path,
        path_length: length,
        oracle_length: l,
        initial_distance: l,
        final_distance: d,
    }
}

/// Seeded episodes: starts at free cell centers with `min_clearance` meters
/// to the nearest occupied cell, targets drawn from the classes present in
/// the GT map, and a finite nonzero oracle length.
pub fn generate_episodes(
    gt: &GroundTruth,
    n: usize,
    seed: u64,
    min_clearance: f64,
) -> Result<Vec<Episode>> {
    let g = &gt.semantic.grid;
    let mut present = [false; crate::NUM_CLASSES];
    for &l in &gt.semantic.labels.data {
        present[l as usize] = true;
    }
    let classes: Vec<u8> = (1..crate::NUM_CLASSES as u8).filter(|&c| present[c as usize]).collect();
    if classes.is_empty() {
        return Err(Error::Invalid("no object classes in ground truth".into()));
    }
    let clearance = clearance_field(gt.free, g);
    let mut rng = Rng::new(seed);
    let mut episodes = Vec::with_capacity(n);
    let mut tries = 0;
    while episodes.len() < n {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::Invalid(format!("found only {} of {n} episodes", episodes.len())));
        }
        let cell = g.cell_of_index(rng.below(g.len() as u64) as usize);
        let yaw = (rng.below(FAN_SIZE as u64) as f64 * 30.0).to_radians();
        let target = classes[rng.below(classes.len() as u64) as usize];
        if !gt.free.get(cell.0, cell.1) || clearance.get(cell.0, cell.1) < min_clearance {
            continue;
        }
        let (x, z) = g.cell_center(cell);
        let goal = gt.semantic.labels.map(|l| l == target);
        let l = oracle_shortest(gt.free, g, (x, z), &goal);
        if !(l.is_finite() && l > 0.0) {
            continue;
        }
        episodes.push(Episode {
            id: episodes.len() as u32,
            start: AgentState { x, z, yaw },
            target,
        });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.0, 0.0, 0.02, w, h).unwrap()
    }

    fn brute_edt(sites: &BinaryRaster) -> Raster<f64> {
        let pts: Vec<(i64, i64)> = (0..sites.data.len())
            .filter(|&i| sites.data[i])
            .map(|i| ((i % sites.width) as i64, (i / sites.width) as i64))
            .collect();
        let mut out = Raster::new(sites.width, sites.height, f64::INFINITY);
        for y in 0..sites.height {
            for x in 0..sites.width {
                for &(px, py) in &pts {
                    let d = ((x as i64 - px).pow(2) + (y as i64 - py).pow(2)) as f64;
                    if d < out.get(x, y) {
                        out.set(x, y, d);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = Rng::new(2);
        for p in [0.0, 0.01, 0.1, 0.5] {
            let sites = Raster::from_vec(23, 17, (0..23 * 17).map(|_| rng.unit() < p).collect()).unwrap();
            assert_eq!(squared_edt(&sites), brute_edt(&sites));
        }
    }

    #[test]
    fn floor_mode_with_jitter() {
        let mut rng = Rng::new(8);
        let n = 4000;
        let heights: Vec<f32> = (0..n)
            .map(|i| if i % 5 == 0 { 0.7 } else { (0.3 + rng.range(-0.01, 0.01)) as f32 })
            .collect();
        let observed = Raster::new(n, 1, true);
        // histogram-mode oracle: count per rounded centimeter
        let mut counts = std::collections::BTreeMap::new();
        for h in &heights {
            *counts.entry((*h as f64 * 100.0).round() as i64).or_insert(0) += 1;
        }
        let mode = counts.iter().max_by_key(|(k, c)| (**c, -**k)).unwrap().0;
        let floor = floor_height(&heights, &observed).unwrap();
        assert_eq!((floor * 100.0).round() as i64, *mode);
        assert!((floor - 0.3).abs() <= 0.01);
    }

    #[test]
    fn freespace_flat_and_box() {
        let w = 60;
        let mut heights = vec![0.0f32; w * w];
        let observed = Raster::new(w, w, true);
        assert_eq!(freespace_from_heights(&heights, &observed).unwrap().count(), w * w);
        for y in 20..45 {
            for x in 20..45 {
                heights[y * w + x] = 0.5;
            }
        }
        let free = freespace_from_heights(&heights, &observed).unwrap();
        for y in 0..w {
            for x in 0..w {
                let inside = (20..45).contains(&x) && (20..45).contains(&y);
                assert_eq!(free.get(x, y), !inside);
            }
        }
        assert!(matches!(
            freespace_from_heights(&heights, &Raster::new(w, w, false)),
            Err(Error::NoObservations)
        ));
    }

    #[test]
    fn goal_map_opening() {
        let g = grid(60, 60);
        let mut m = SemanticMap::void(g);
        assert_eq!(build_goal_map(&m, 2).count(), 0);
        for y in 5..8 {
            for x in 5..8 {
                m.labels.set(x, y, 2);
            }
        }
        for y in 30..50 {
            for x in 30..50 {
                m.labels.set(x, y, 2);
            }
        }
        let goal = build_goal_map(&m, 2);
        assert_eq!(goal.count(), 400);
        assert!(!goal.get(6, 6));
        assert!(goal.get(30, 30) && goal.get(49, 49));
    }

    #[test]
    fn segment_square_distance_cases() {
        assert_eq!(segment_square_distance((0.0, 0.0), (2.0, 0.0), 1.0, 1.5, -0.1, 0.1), 0.0);
        assert!((segment_square_distance((0.0, 0.0), (2.0, 0.0), 1.0, 1.5, 0.3, 0.4) - 0.3).abs() < 1e-12);
        let d = segment_square_distance((0.0, 0.0), (1.0, 1.0), 1.0, 2.0, -1.0, 0.0);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
    }

    /// Dense sampling of the segment against every blocked cell.
    fn sampled_clear(free: &BinaryRaster, g: &GridSpec, a: (f64, f64), b: (f64, f64), r: f64) -> Option<bool> {
        let mut min_d = f64::INFINITY;
        for v in -1..=g.v_size as i64 {
            for u in -1..=g.u_size as i64 {
                let blocked = g.checked_cell(u, v).map(|c| !free.get(c.0, c.1)).unwrap_or(true);
                if !blocked {
                    continue;
                }
                let x0 = u as f64 * g.resolution;
                let z0 = v as f64 * g.resolution;
                for s in 0..=400 {
                    let t = s as f64 / 400.0;
                    let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                    min_d = min_d.min(point_square_distance(p, x0, x0 + g.resolution, z0, z0 + g.resolution));
                }
            }
        }
        // undecidable by sampling when too close to the threshold
        ((min_d - r).abs() > 2e-3).then_some(min_d >= r)
    }

    #[test]
    fn segment_clear_matches_sampling() {
        let g = grid(30, 30);
        let mut rng = Rng::new(14);
        let free = Raster::from_vec(30, 30, (0..900).map(|_| rng.unit() > 0.03).collect()).unwrap();
        let mut checked = 0;
        for _ in 0..300 {
            let a = (rng.range(0.1, 0.5), rng.range(0.1, 0.5));
            let yaw = rng.range(0.0, std::f64::consts::TAU);
            let b = (a.0 + 0.25 * yaw.sin(), a.1 + 0.25 * yaw.cos());
            if let Some(expected) = sampled_clear(&free, &g, a, b, 0.1) {
                assert_eq!(segment_clear(&free, &g, a, b, 0.1), expected, "{a:?} -> {b:?}");
                checked += 1;
            }
        }
        assert!(checked > 250);
    }

    fn corridor() -> (GridSpec, BinaryRaster, BinaryRaster) {
        // 10 m x 1 m
        let g = grid(500, 50);
        (g, Raster::new(500, 50, true), Raster::new(500, 50, true))
    }

    #[test]
    fn corridor_goal_ahead() {
        let (g, free, observed) = corridor();
        let mut goal = Raster::new(500, 50, false);
        // goal column 3 m ahead of the start cell
        let (su, sv) = (25usize, 25usize);
        goal.set(su + 150, sv, true);
        let (x, z) = g.cell_center((su, sv));
        let start = AgentState { x, z, yaw: std::f64::consts::FRAC_PI_2 };
        let p = plan_astar(&free, &goal, &observed, &g, start, &PlannerParams::default()).unwrap();
        assert!(p.length >= 2.0 - 1e-9 && p.length <= 2.25 + 1e-9, "p = {}", p.length);
        let l = oracle_shortest(&free, &g, (x, z), &goal);
        assert!((l - 2.0).abs() <= 0.02, "l = {l}");
        let greedy = PlannerParams {
            greedy: true,
            ..Default::default()
        };
        assert!(plan_astar(&free, &goal, &observed, &g, start, &greedy).is_ok());
    }

    #[test]
    fn start_near_visible_goal_stops_immediately() {
        let (g, free, observed) = corridor();
        let mut goal = Raster::new(500, 50, false);
        goal.set(60, 25, true);
        let (x, z) = g.cell_center((40, 25));
        let p = plan_astar(&free, &goal, &observed, &g, AgentState { x, z, yaw: 0.0 }, &PlannerParams::default()).unwrap();
        assert_eq!(p.poses.len(), 1);
        assert_eq!(p.length, 0.0);
        assert_eq!(oracle_shortest(&free, &g, (x, z), &goal), 0.0);
    }

    #[test]
    fn enclosed_goal_and_blocked_start() {
        // room walled off by a 5-cell band, its interior running to the grid edge
        let g = grid(120, 120);
        let mut free = Raster::new(120, 120, true);
        for v in 0..120 {
            for u in 0..120 {
                if u >= 40 && v >= 40 && (u < 45 || v < 45) {
                    free.set(u, v, false);
                }
            }
        }
        let mut goal = Raster::new(120, 120, false);
        goal.set(100, 100, true);
        let observed = Raster::new(120, 120, true);
        let (x, z) = g.cell_center((20, 20));
        let params = PlannerParams {
            max_expansions: usize::MAX,
            ..Default::default()
        };
        assert!(matches!(
            plan_astar(&free, &goal, &observed, &g, AgentState { x, z, yaw: 0.0 }, &params),
            Err(Error::NoPath)
        ));
        assert_eq!(oracle_shortest(&free, &g, (x, z), &goal), f64::INFINITY);
        let (bx, bz) = g.cell_center((42, 60));
        assert!(matches!(
            plan_astar(&free, &goal, &observed, &g, AgentState { x: bx, z: bz, yaw: 0.0 }, &params),
            Err(Error::StartBlocked)
        ));
    }

    #[test]
    fn goal_out_of_sight_is_not_a_stop() {
        let (g, free, mut observed) = corridor();
        let mut goal = Raster::new(500, 50, false);
        goal.set(60, 25, true);
        for v in 0..50 {
            observed.set(50, v, false);
        }
        let (x, z) = g.cell_center((40, 25));
        let p = plan_astar(&free, &goal, &observed, &g, AgentState { x, z, yaw: 0.0 }, &PlannerParams::default()).unwrap();
        assert!(p.length > 0.0);
        let last = p.poses.last().unwrap();
        assert!(last.x > 1.02);
    }

    #[test]
    fn octile_bound_on_straight_lines() {
        let g = grid(120, 120);
        let free = Raster::new(120, 120, true);
        let mut rng = Rng::new(3);
        for _ in 0..40 {
            let a = (rng.below(120) as usize, rng.below(120) as usize);
            let b = (rng.below(120) as usize, rng.below(120) as usize);
            let mut goal = Raster::new(120, 120, false);
            goal.set(b.0, b.1, true);
            let l = oracle_shortest_within(&free, &g, g.cell_center(a), &goal, 0.0);
            let (ax, az) = g.cell_center(a);
            let (bx, bz) = g.cell_center(b);
            let e = (ax - bx).hypot(az - bz);
            assert!(l >= e - 1e-9 && l <= e * 1.0824 + 1e-9, "l {l} e {e}");
        }
    }

    fn room_maps(w: usize) -> (SemanticMap, BinaryRaster) {
        let g = grid(w, w);
        let mut sem = SemanticMap::void(g);
        let mut free = Raster::new(w, w, true);
        for v in w / 2..w / 2 + 25 {
            for u in w - 40..w - 15 {
                sem.labels.set(u, v, 7);
                free.set(u, v, false);
            }
        }
        (sem, free)
    }

    #[test]
    fn episode_on_ground_truth_succeeds() {
        let (sem, free) = room_maps(200);
        let observed = Raster::new(200, 200, true);
        let gt = GroundTruth {
            semantic: &sem,
            free: &free,
        };
        let maps = PlanningMaps {
            semantic: &sem,
            free: &free,
            observed: &observed,
        };
        let eps = generate_episodes(&gt, 5, 4, 0.2).unwrap();
        for ep in &eps {
            let r = run_episode(ep, &maps, &gt, &PlannerParams::default());
            assert!(r.success, "{ep:?}");
            assert!(r.path_length + 1e-9 >= r.oracle_length);
            for w in r.path.windows(2) {
                assert!(segment_clear(&free, &sem.grid, (w[0].x, w[0].z), (w[1].x, w[1].z), 0.1));
            }
        }
        let absent = Episode {
            target: 3,
            ..eps[0]
        };
        assert!(!run_episode(&absent, &maps, &gt, &PlannerParams::default()).success);
    }

    #[test]
    fn execution_stops_at_first_gt_collision() {
        let (sem, gt_free) = room_maps(200);
        let observed = Raster::new(200, 200, true);
        // planner believes a wall is open
        let wall_free = gt_free.clone();
        let mut gt_wall = gt_free.clone();
        for v in 0..200 {
            for u in 95..100 {
                gt_wall.set(u, v, false);
            }
        }
        let gt = GroundTruth {
            semantic: &sem,
            free: &gt_wall,
        };
        let maps = PlanningMaps {
            semantic: &sem,
            free: &wall_free,
            observed: &observed,
        };
        let (x, z) = sem.grid.cell_center((30, 110));
        let ep = Episode {
            id: 0,
            start: AgentState {
                x,
                z,
                yaw: std::f64::consts::FRAC_PI_2,
            },
            target: 7,
        };
        let r = run_episode(&ep, &maps, &gt, &PlannerParams::default());
        assert!(!r.success);
        assert!(r.path.iter().all(|p| p.x < 95.0 * 0.02));
        assert!(r.path_length > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn planner_complete_in_empty_rooms(su in 10usize..140, sv in 10usize..140, gu in 0usize..150, gv in 0usize..150) {
            let g = grid(150, 150);
            let free = Raster::new(150, 150, true);
            let mut goal = Raster::new(150, 150, false);
            goal.set(gu, gv, true);
            let (x, z) = g.cell_center((su, sv));
            prop_assume!(oracle_shortest(&free, &g, (x, z), &goal).is_finite());
            let p = plan_astar(&free, &goal, &free, &g, AgentState { x, z, yaw: 0.0 }, &PlannerParams::default());
            prop_assert!(p.is_ok());
            let p = p.unwrap();
            for w in p.poses.windows(2) {
                prop_assert!(segment_clear(&free, &g, (w[0].x, w[0].z), (w[1].x, w[1].z), 0.1));
            }
        }
    }
}
