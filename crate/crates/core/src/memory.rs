//! Spatial memory: a grid of per-cell accumulators fed by projected frames.
//!
//! Each frame is reduced to at most one observation per cell (the highest
//! surface point that landed there), and only those cells are touched when
//! the memory is updated. The per-cell update rule is shared by every cell
//! and is pluggable through [`CellAggregator`].

use crate::error::{Error, Result};
use crate::geometry::{Cell, GridSpec, CEILING_MARGIN};
use crate::imgproc::{BinaryRaster, Raster};
use crate::scene::EgoFrame;
use crate::{SemanticMap, NUM_CLASSES};

pub type Scores = [f32; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedObservation {
    pub cell: Cell,
    pub class_id: u8,
    /// World height of the surviving surface point.
    pub height: f64,
    /// Source pixel `(i, j)`.
    pub pixel: (usize, usize),
}

/// Observations of one frame on one grid, sorted by row-major cell index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFrame {
    pub grid: GridSpec,
    pub observations: Vec<ProjectedObservation>,
}

/// Projects every valid pixel and keeps, per cell, the highest point (ties to
/// the smaller row-major pixel index). Pixels with no depth, above the
/// ceiling cutoff or outside the grid are dropped.
pub fn project_frame(frame: &EgoFrame, g: &GridSpec) -> ProjectedFrame {
    project_pixels(frame, g, 0..frame.width() * frame.height())
}

pub(crate) fn project_pixels(frame: &EgoFrame, g: &GridSpec, order: impl Iterator<Item = usize>) -> ProjectedFrame {
    let k = &frame.intrinsics;
    let w = frame.width();
    let rt = frame.pose.rotation.transpose();
    let center = frame.pose.center();
    let ceiling = frame.camera_y + CEILING_MARGIN;
    // per cell: (height, pixel index); pixel u32::MAX = empty
    let mut best: Vec<(f64, u32)> = vec![(f64::NEG_INFINITY, u32::MAX); g.len()];
    let mut touched = Vec::new();
    for p in order {
        let d = frame.depth.data[p];
        if !(d > 0.0) {
            continue;
        }
        let (i, j) = (p % w, p / w);
        let world = rt * (k.ray(i as f64, j as f64) * d) + center;
        if world.y > ceiling {
            continue;
        }
        let (u, v) = g.cell_coords(world.x, world.z);
        let Some(cell) = g.checked_cell(u, v) else {
            continue;
        };
        let idx = g.index(cell);
        let slot = &mut best[idx];
        if slot.1 == u32::MAX {
            touched.push(idx);
        }
        if world.y > slot.0 || (world.y == slot.0 && (p as u32) < slot.1) {
            *slot = (world.y, p as u32);
        }
    }
    touched.sort_unstable();
    let observations = touched
        .into_iter()
        .map(|idx| {
            let (height, p) = best[idx];
            let p = p as usize;
            ProjectedObservation {
                cell: g.cell_of_index(idx),
                class_id: frame.labels.data[p],
                height,
                pixel: (p % w, p / w),
            }
        })
        .collect();
    ProjectedFrame {
        grid: *g,
        observations,
    }
}

/// Mutable view of one cell's accumulator.
pub struct CellState<'a> {
    pub scores: &'a mut Scores,
    /// Aggregator-specific scalar (best height for [`Aggregator::MaxHeight`]).
    pub aux: &'a mut f32,
    pub first: bool,
}

/// Recurrent per-cell update rule, shared by all cells.
pub trait CellAggregator {
    fn update(&self, cell: CellState<'_>, obs: &ProjectedObservation);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    /// Scores become the one-hot of the newest class.
    LatestWins,
    /// Keeps the class observed at the greatest height so far.
    MaxHeight,
    /// Counts observations per class.
    MajorityVote,
    /// Exponential moving average of one-hot observations.
    Ema(f32),
}

pub const DEFAULT_EMA_ALPHA: f32 = 0.3;

impl Aggregator {
    pub fn name(&self) -> String {
        match self {
            Aggregator::LatestWins => "latest_wins".into(),
            Aggregator::MaxHeight => "max_height".into(),
            Aggregator::MajorityVote => "majority_vote".into(),
            Aggregator::Ema(a) => format!("ema({a})"),
        }
    }

    /// Parses `latest_wins`, `max_height`, `majority_vote`, `ema` or `ema(<alpha>)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "latest_wins" => Ok(Aggregator::LatestWins),
            "max_height" => Ok(Aggregator::MaxHeight),
            "majority_vote" => Ok(Aggregator::MajorityVote),
            "ema" => Ok(Aggregator::Ema(DEFAULT_EMA_ALPHA)),
            _ => {
                let alpha = s
                    .strip_prefix("ema(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|a| a.trim().parse::<f32>().ok())
                    .filter(|a| *a > 0.0 && *a <= 1.0)
                    .ok_or_else(|| Error::Invalid(format!("aggregator '{s}'")))?;
                Ok(Aggregator::Ema(alpha))
            }
        }
    }
}

fn one_hot(class: u8) -> Scores {
    let mut s = [0.0; NUM_CLASSES];
    s[class as usize] = 1.0;
    s
}

impl CellAggregator for Aggregator {
    fn update(&self, cell: CellState<'_>, obs: &ProjectedObservation) {
        match *self {
            Aggregator::LatestWins => *cell.scores = one_hot(obs.class_id),
            Aggregator::MaxHeight => {
                let h = obs.height as f32;
                if cell.first || h > *cell.aux {
                    *cell.scores = one_hot(obs.class_id);
                    *cell.aux = h;
                }
            }
            Aggregator::MajorityVote => cell.scores[obs.class_id as usize] += 1.0,
            Aggregator::Ema(alpha) => {
                for (c, s) in cell.scores.iter_mut().enumerate() {
                    let target = if c == obs.class_id as usize { 1.0 } else { 0.0 };
                    *s = (1.0 - alpha) * *s + alpha * target;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMemory {
    pub grid: GridSpec,
    pub scores: Vec<Scores>,
    pub aux: Vec<f32>,
    /// Highest surface seen per cell; `-inf` until observed.
    pub heights: Vec<f32>,
    pub observed: BinaryRaster,
    pub frame_counter: u64,
}

impl SpatialMemory {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.len();
        SpatialMemory {
            grid,
            scores: vec![[0.0; NUM_CLASSES]; n],
            aux: vec![0.0; n],
            heights: vec![f32::NEG_INFINITY; n],
            observed: Raster::new(grid.u_size, grid.v_size, false),
            frame_counter: 0,
        }
    }

    /// Applies one frame's observations; cells not in `frame` are untouched.
    pub fn update(&mut self, frame: &ProjectedFrame, agg: &impl CellAggregator) -> Result<()> {
        self.grid.ensure_same(&frame.grid)?;
        for obs in &frame.observations {
            let idx = self.grid.index(obs.cell);
            let first = !self.observed.data[idx];
            agg.update(
                CellState {
                    scores: &mut self.scores[idx],
                    aux: &mut self.aux[idx],
                    first,
                },
                obs,
            );
            self.observed.data[idx] = true;
            let h = obs.height as f32;
            if first || h > self.heights[idx] {
                self.heights[idx] = h;
            }
        }
        self.frame_counter += 1;
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        self.observed.count()
    }

    /// Height layer with `fill` on unobserved cells.
    pub fn height_raster(&self, fill: f32) -> Raster<f32> {
        let data = self
            .heights
            .iter()
            .zip(&self.observed.data)
            .map(|(&h, &o)| if o { h } else { fill })
            .collect();
        Raster {
            width: self.grid.u_size,
            height: self.grid.v_size,
            data,
        }
    }
}

/// Functional form of [`SpatialMemory::update`].
pub fn update_memory(
    mut mem: SpatialMemory,
    frame: &ProjectedFrame,
    agg: &impl CellAggregator,
) -> Result<SpatialMemory> {
    mem.update(frame, agg)?;
    Ok(mem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// Sum normalized scores of observed cells over a `k x k` window before
    /// the argmax.
    BoxVote(usize),
}

impl Smoothing {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Smoothing::None);
        }
        s.strip_prefix("box_vote(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.trim().parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(Smoothing::BoxVote)
            .ok_or_else(|| Error::Invalid(format!("smoothing '{s}'")))
    }

    pub fn name(&self) -> String {
        match self {
            Smoothing::None => "none".into(),
            Smoothing::BoxVote(k) => format!("box_vote({k})"),
        }
    }
}

fn argmax(s: &Scores) -> u8 {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if s[c] > s[best] {
            best = c;
        }
    }
    best as u8
}

/// Argmax decode of observed cells (ties to the smaller class); unobserved
/// cells are void.
pub fn decode_map(mem: &SpatialMemory, smoothing: Smoothing) -> SemanticMap {
    let g = mem.grid;
    let mut map = SemanticMap::void(g);
    match smoothing {
        Smoothing::None => {
            for idx in 0..g.len() {
                if mem.observed.data[idx] {
                    map.labels.data[idx] = argmax(&mem.scores[idx]);
                }
            }
        }
        Smoothing::BoxVote(k) => {
            let lo = (k / 2) as i64;
            let hi = k as i64 - 1 - lo;
            // separable window sums: along u, then along v
            let (w, h) = (g.u_size, g.v_size);
            let masked: Vec<Scores> = (0..g.len())
                .map(|i| if mem.observed.data[i] { normalized(&mem.scores[i]) } else { [0.0; NUM_CLASSES] })
                .collect();
            let mut rows = vec![[0.0f32; NUM_CLASSES]; g.len()];
            for v in 0..h {
                for u in 0..w {
                    let acc = &mut rows[v * w + u];
                    for uu in (u as i64 - lo).max(0)..=(u as i64 + hi).min(w as i64 - 1) {
                        add_into(acc, &masked[v * w + uu as usize]);
                    }
                }
            }
            for v in 0..h {
                for u in 0..w {
                    let idx = v * w + u;
                    if !mem.observed.data[idx] {
                        continue;
                    }
                    let mut acc = [0.0f32; NUM_CLASSES];
                    for vv in (v as i64 - lo).max(0)..=(v as i64 + hi).min(h as i64 - 1) {
                        add_into(&mut acc, &rows[vv as usize * w + u]);
                    }
                    map.labels.data[idx] = argmax_tolerant(&acc, VOTE_TIE_EPS);
                }
            }
        }
    }
    map
}

/// Window sums of normalized scores closer than this count as tied.
const VOTE_TIE_EPS: f32 = 1e-4;

fn argmax_tolerant(s: &Scores, eps: f32) -> u8 {
    let max = s.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    s.iter().position(|&v| v >= max - eps).unwrap_or(0) as u8
}

/// Scores scaled to sum to one, so every observed cell casts one vote.
fn normalized(s: &Scores) -> Scores {
    let total: f32 = s.iter().sum();
    if total > 0.0 {
        s.map(|v| v / total)
    } else {
        *s
    }
}

#[inline]
fn add_into(acc: &mut Scores, s: &Scores) {
    for (a, b) in acc.iter_mut().zip(s) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::rng::Rng;
    use crate::scene::{generate_scene, raycast_frame, SceneParams, DEFAULT_MAX_RANGE};
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(0.0, 0.0, 0.02, 250, 250).unwrap()
    }

    fn obs(cell: Cell, class_id: u8, height: f64) -> ProjectedObservation {
        ProjectedObservation {
            cell,
            class_id,
            height,
            pixel: (0, 0),
        }
    }

    fn frame_of(g: GridSpec, observations: Vec<ProjectedObservation>) -> ProjectedFrame {
        ProjectedFrame { grid: g, observations }
    }

    /// Tiny camera looking straight down from 1 m, with handcrafted depths.
    fn down_frame(depths: &[(usize, usize, f64, u8)]) -> EgoFrame {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        // camera z -> world -y, camera x -> world x, camera y -> world z
        let rotation = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        let pose = Pose::new(rotation, nalgebra::Vector3::new(-1.0, -1.0, -1.0)).unwrap();
        let mut depth = Raster::new(4, 4, 0.0);
        let mut labels = Raster::new(4, 4, 0u8);
        for &(i, j, d, c) in depths {
            depth.set(i, j, d);
            labels.set(i, j, c);
        }
        EgoFrame {
            instances: Raster::new(4, 4, 0),
            depth,
            labels,
            intrinsics: k,
            pose,
            camera_y: 1.0,
            index: 0,
        }
    }

    #[test]
    fn keeps_highest_point_per_cell() {
        // pixels (2,2) and (2,1) land in the same 1 m cell at heights 0.5 and 0.9
        let f = down_frame(&[(2, 2, 0.5, 2), (2, 1, 0.1, 3)]);
        let g = GridSpec::new(0.0, -0.5, 1.0, 3, 3).unwrap();
        let p = project_frame(&f, &g);
        assert_eq!(p.observations.len(), 1);
        assert_eq!(p.observations[0].class_id, 3);
        assert!((p.observations[0].height - 0.9).abs() < 1e-12);
    }

    #[test]
    fn drops_points_above_ceiling() {
        let mut f = down_frame(&[]);
        // camera looking up: world y = camera_y + 0.6 at depth 0.6
        f.pose = Pose::new(
            nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
            nalgebra::Vector3::new(-1.0, -1.0, -1.0),
        )
        .unwrap();
        f.depth.set(2, 2, 0.6);
        f.labels.set(2, 2, 4);
        let g = GridSpec::new(0.0, 0.0, 1.0, 3, 3).unwrap();
        assert!(project_frame(&f, &g).observations.is_empty());
        f.depth.set(2, 2, 0.4);
        assert_eq!(project_frame(&f, &g).observations.len(), 1);
    }

    fn scene_frame(seed: u64) -> (EgoFrame, GridSpec) {
        let s = generate_scene(seed, &SceneParams::default()).unwrap();
        let k = CameraIntrinsics::from_hfov(80, 60, 90.0).unwrap();
        let pose = Pose::from_agent(2.5, 2.5, 0.7 * seed as f64, 1.25);
        (raycast_frame(&s, &k, &pose, 1.25, DEFAULT_MAX_RANGE), s.default_grid())
    }

    #[test]
    fn projection_matches_grouping_oracle() {
        let (f, g) = scene_frame(2);
        let fast = project_frame(&f, &g);
        // brute force: project every pixel, group by cell, argmax height
        let mut groups: std::collections::BTreeMap<usize, Vec<(f64, usize)>> = Default::default();
        for j in 0..f.height() {
            for i in 0..f.width() {
                let d = f.depth.get(i, j);
                if d <= 0.0 {
                    continue;
                }
                let p = crate::geometry::unproject_pixel(&f.intrinsics, &f.pose, i as f64, j as f64, d).unwrap();
                if p.y > f.camera_y + 0.5 {
                    continue;
                }
                if let Ok(c) = crate::geometry::world_to_cell(&g, &p) {
                    groups.entry(g.index(c)).or_default().push((p.y, j * f.width() + i));
                }
            }
        }
        assert_eq!(fast.observations.len(), groups.len());
        for (o, (idx, pts)) in fast.observations.iter().zip(&groups) {
            assert_eq!(g.index(o.cell), *idx);
            let top = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let winner = pts.iter().filter(|p| p.0 == top).map(|p| p.1).min().unwrap();
            assert_eq!(o.pixel, (winner % f.width(), winner / f.width()));
        }
    }

    #[test]
    fn empty_observations_leave_memory_unchanged() {
        let g = grid();
        let mut m = SpatialMemory::new(g);
        m.update(&frame_of(g, vec![obs((3, 3), 1, 0.5)]), &Aggregator::MajorityVote).unwrap();
        let before = m.clone();
        m.update(&frame_of(g, vec![]), &Aggregator::MajorityVote).unwrap();
        assert_eq!(m.scores, before.scores);
        assert_eq!(m.observed, before.observed);
        assert_eq!(m.heights, before.heights);
    }

    #[test]
    fn majority_counts() {
        let g = grid();
        let mut m = SpatialMemory::new(g);
        for c in [1, 1, 2] {
            m.update(&frame_of(g, vec![obs((5, 6), c, 0.8)]), &Aggregator::MajorityVote).unwrap();
        }
        let s = m.scores[g.index((5, 6))];
        assert_eq!((s[1], s[2]), (2.0, 1.0));
        assert_eq!(decode_map(&m, Smoothing::None).label((5, 6)), 1);
    }

    #[test]
    fn max_height_keeps_tallest() {
        let g = grid();
        let mut m = SpatialMemory::new(g);
        m.update(&frame_of(g, vec![obs((1, 1), 2, 0.4)]), &Aggregator::MaxHeight).unwrap();
        m.update(&frame_of(g, vec![obs((1, 1), 3, 0.3)]), &Aggregator::MaxHeight).unwrap();
        assert_eq!(decode_map(&m, Smoothing::None).label((1, 1)), 2);
        assert_eq!(m.heights[g.index((1, 1))], 0.4);
    }

    #[test]
    fn latest_and_ema() {
        let g = grid();
        let mut latest = SpatialMemory::new(g);
        let mut ema = SpatialMemory::new(g);
        for c in [4, 4, 4, 7] {
            let f = frame_of(g, vec![obs((0, 0), c, 0.1)]);
            latest.update(&f, &Aggregator::LatestWins).unwrap();
            ema.update(&f, &Aggregator::Ema(0.3)).unwrap();
        }
        assert_eq!(decode_map(&latest, Smoothing::None).label((0, 0)), 7);
        // 4: 0.657 * 0.7 = 0.46; 7: 0.3
        assert_eq!(decode_map(&ema, Smoothing::None).label((0, 0)), 4);
        let s = ema.scores[0];
        assert!((s[4] - 0.7 * (1.0 - 0.7f32.powi(3))).abs() < 1e-6);
    }

    #[test]
    fn grid_mismatch() {
        let mut m = SpatialMemory::new(grid());
        let other = GridSpec::new(0.0, 0.0, 0.05, 10, 10).unwrap();
        assert!(matches!(m.update(&frame_of(other, vec![]), &Aggregator::LatestWins), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn decode_unobserved_is_void() {
        let m = SpatialMemory::new(grid());
        assert!(decode_map(&m, Smoothing::BoxVote(3)).labels.data.iter().all(|&c| c == 0));
    }

    #[test]
    fn box_vote_matches_window_sum_oracle() {
        let g = GridSpec::new(0.0, 0.0, 0.02, 16, 16).unwrap();
        let mut rng = Rng::new(4);
        let mut m = SpatialMemory::new(g);
        for _ in 0..6 {
            let mut observations = Vec::new();
            for i in 0..g.len() {
                if rng.unit() < 0.6 {
                    observations.push(obs(g.cell_of_index(i), rng.below(4) as u8, 0.0));
                }
            }
            m.update(&frame_of(g, observations), &Aggregator::MajorityVote).unwrap();
        }
        let fast = decode_map(&m, Smoothing::BoxVote(3));
        for v in 0..16i64 {
            for u in 0..16i64 {
                let idx = (v * 16 + u) as usize;
                if !m.observed.data[idx] {
                    assert_eq!(fast.labels.data[idx], 0);
                    continue;
                }
                let mut sum = [0.0f64; NUM_CLASSES];
                for dv in -1..=1 {
                    for du in -1..=1 {
                        let (uu, vv) = (u + du, v + dv);
                        if (0..16).contains(&uu) && (0..16).contains(&vv) {
                            let j = (vv * 16 + uu) as usize;
                            if m.observed.data[j] {
                                let total: f32 = m.scores[j].iter().sum();
                                for c in 0..NUM_CLASSES {
                                    sum[c] += (m.scores[j][c] / total) as f64;
                                }
                            }
                        }
                    }
                }
                let max = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let best = (0..NUM_CLASSES).find(|&c| sum[c] >= max - 1e-6).unwrap();
                assert_eq!(fast.labels.data[idx], best as u8);
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!(Aggregator::parse("ema(0.5)").unwrap(), Aggregator::Ema(0.5));
        assert_eq!(Aggregator::parse("majority_vote").unwrap(), Aggregator::MajorityVote);
        assert!(Aggregator::parse("gru").is_err());
        assert_eq!(Smoothing::parse("box_vote(3)").unwrap(), Smoothing::BoxVote(3));
        assert_eq!(Smoothing::parse("none").unwrap(), Smoothing::None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn projection_order_independent(seed in 1u64..6, perm_seed in any::<u64>()) {
            let (f, g) = scene_frame(seed);
            let n = f.width() * f.height();
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = Rng::new(perm_seed);
            for i in (1..n).rev() {
                order.swap(i, rng.below(i as u64 + 1) as usize);
            }
            prop_assert_eq!(project_pixels(&f, &g, order.into_iter()), project_frame(&f, &g));
        }

        #[test]
        fn majority_decode_invariant_under_history_duplication(seed in any::<u64>(), times in 2usize..4) {
            let g = GridSpec::new(0.0, 0.0, 0.02, 12, 12).unwrap();
            let mut rng = Rng::new(seed);
            let history: Vec<ProjectedFrame> = (0..5)
                .map(|_| {
                    let mut o = Vec::new();
                    for i in 0..g.len() {
                        if rng.unit() < 0.5 {
                            o.push(obs(g.cell_of_index(i), rng.below(5) as u8, 0.0));
                        }
                    }
                    frame_of(g, o)
                })
                .collect();
            let mut once = SpatialMemory::new(g);
            let mut many = SpatialMemory::new(g);
            for f in &history {
                once.update(f, &Aggregator::MajorityVote).unwrap();
            }
            for _ in 0..times {
                for f in &history {
                    many.update(f, &Aggregator::MajorityVote).unwrap();
                }
            }
            for s in [Smoothing::None, Smoothing::BoxVote(3)] {
                prop_assert_eq!(decode_map(&once, s), decode_map(&many, s));
            }
        }
    }
}
