//! The three map-construction paradigms.
//!
//! * `smnet`: project per-pixel class scores into the spatial memory and
//!   decode the fused memory.
//! * `seg2proj`: project per-frame labels into a label grid, then clean the
//!   grid up with median filters.
//! * `proj2seg`: project geometry only and label the top-down observation
//!   with a lookup fit on training scenes.
//!
//! Every pipeline is available as a streaming [`MapBuilder`] so one rendered
//! (and corrupted) frame can feed several builders.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::imgproc::{downsample_nn, erode_labels, masked_mode_filter, BinaryRaster, Raster};
use crate::memory::{decode_map, project_frame, Aggregator, Smoothing, SpatialMemory};
use crate::noise::{corrupt_labels, NoiseModel};
use crate::scene::EgoFrame;
use crate::{SemanticMap, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Smnet,
    Seg2Proj,
    Proj2Seg,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] = [PipelineKind::Smnet, PipelineKind::Seg2Proj, PipelineKind::Proj2Seg];

    pub fn name(&self) -> &'static str {
        match self {
            PipelineKind::Smnet => "smnet",
            PipelineKind::Seg2Proj => "seg2proj",
            PipelineKind::Proj2Seg => "proj2seg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Invalid(format!("unknown pipeline '{s}'")))
    }
}

/// How a seg2proj cell resolves labels from different frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossFrame {
    LatestWins,
    MaxHeight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seg2ProjOptions {
    /// 1 disables downsampling.
    pub downsample_factor: usize,
    /// 0 disables the hole fill.
    pub fill_median_k: usize,
    /// 0 disables the final median.
    pub post_median_k: usize,
    /// 0 disables label erosion.
    pub erosion_side: usize,
    pub cross_frame: CrossFrame,
}

impl Seg2ProjOptions {
    /// Plain projection with every heuristic off.
    pub fn plain() -> Self {
        Seg2ProjOptions {
            downsample_factor: 1,
            fill_median_k: 0,
            post_median_k: 0,
            erosion_side: 0,
            cross_frame: CrossFrame::LatestWins,
        }
    }
}

impl Default for Seg2ProjOptions {
    fn default() -> Self {
        Seg2ProjOptions {
            downsample_factor: 4,
            fill_median_k: 10,
            post_median_k: 3,
            erosion_side: 0,
            cross_frame: CrossFrame::LatestWins,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proj2SegOptions {
    /// Height quantum of the lookup key, meters.
    pub height_band: f64,
    /// Number of bins for the 5x5 observation density.
    pub density_bins: usize,
    /// Held-out scene seeds the lookup is fit on.
    pub train_seeds: Vec<u64>,
}

impl Default for Proj2SegOptions {
    fn default() -> Self {
        Proj2SegOptions {
            height_band: 0.05,
            density_bins: 5,
            train_seeds: (1001..=1010).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: PipelineKind,
    pub aggregator: Aggregator,
    pub smoothing: Smoothing,
    pub seg2proj: Seg2ProjOptions,
    pub proj2seg: Proj2SegOptions,
    pub noise: NoiseModel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kind: PipelineKind::Smnet,
            aggregator: Aggregator::MajorityVote,
            smoothing: Smoothing::BoxVote(3),
            seg2proj: Seg2ProjOptions::default(),
            proj2seg: Proj2SegOptions::default(),
            noise: NoiseModel::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value '{value}' for key '{key}'")))
}

fn parse_prob(key: &str, value: &str) -> Result<f64> {
    let p: f64 = parse_num(key, value)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("{key} must be in [0, 1], got {p}")));
    }
    Ok(p)
}

/// Seed lists: comma separated values or inclusive ranges (`1001-1010`).
pub fn parse_seed_list(key: &str, value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_num(key, a)?, parse_num(key, b)?);
                if b < a {
                    return Err(Error::Invalid(format!("empty seed range '{part}'")));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(parse_num(key, part)?),
        }
    }
    Ok(seeds)
}

impl PipelineConfig {
    pub fn for_kind(kind: PipelineKind) -> Self {
        PipelineConfig {
            kind,
            ..Default::default()
        }
    }

    /// Applies one `key = value` config entry; returns false for keys that
    /// do not belong to the pipeline.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "pipeline" => self.kind = PipelineKind::parse(value)?,
            "aggregator" => self.aggregator = Aggregator::parse(value)?,
            "smoothing" => self.smoothing = Smoothing::parse(value)?,
            "seg2proj.downsample_factor" => {
                self.seg2proj.downsample_factor = parse_num(key, value)?;
                if self.seg2proj.downsample_factor == 0 {
                    return Err(Error::Invalid("seg2proj.downsample_factor must be >= 1".into()));
                }
            }
            "seg2proj.fill_median_k" => self.seg2proj.fill_median_k = parse_num(key, value)?,
            "seg2proj.post_median_k" => self.seg2proj.post_median_k = parse_num(key, value)?,
            "seg2proj.erosion_side" => self.seg2proj.erosion_side = parse_num(key, value)?,
            "seg2proj.cross_frame" => {
                self.seg2proj.cross_frame = match value.trim() {
                    "latest_wins" => CrossFrame::LatestWins,
                    "max_height" => CrossFrame::MaxHeight,
                    v => return Err(Error::Invalid(format!("unknown seg2proj.cross_frame '{v}'"))),
                }
            }
            "proj2seg.height_band" => {
                self.proj2seg.height_band = parse_num(key, value)?;
                if !(self.proj2seg.height_band > 0.0) {
                    return Err(Error::Invalid("proj2seg.height_band must be positive".into()));
                }
            }
            "proj2seg.density_bins" => {
                self.proj2seg.density_bins = parse_num(key, value)?;
                if self.proj2seg.density_bins == 0 {
                    return Err(Error::Invalid("proj2seg.density_bins must be >= 1".into()));
                }
            }
            "proj2seg.train_seeds" => self.proj2seg.train_seeds = parse_seed_list(key, value)?,
            "noise.boundary_band" => self.noise.boundary_band = parse_num(key, value)?,
            "noise.boundary_flip_prob" => self.noise.boundary_flip_prob = parse_prob(key, value)?,
            "noise.uniform_flip_prob" => self.noise.uniform_flip_prob = parse_prob(key, value)?,
            "noise.seed" => self.noise.seed = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key understood by [`PipelineConfig::set`] with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.seg2proj;
        let seeds: Vec<String> = self.proj2seg.train_seeds.iter().map(u64::to_string).collect();
        vec![
            ("pipeline", self.kind.name().into()),
            ("aggregator", self.aggregator.name()),
            ("smoothing", self.smoothing.name()),
            ("seg2proj.downsample_factor", s.downsample_factor.to_string()),
            ("seg2proj.fill_median_k", s.fill_median_k.to_string()),
            ("seg2proj.post_median_k", s.post_median_k.to_string()),
            ("seg2proj.erosion_side", s.erosion_side.to_string()),
            (
                "seg2proj.cross_frame",
                match s.cross_frame {
                    CrossFrame::LatestWins => "latest_wins".into(),
                    CrossFrame::MaxHeight => "max_height".into(),
                },
            ),
            ("proj2seg.height_band", self.proj2seg.height_band.to_string()),
            ("proj2seg.density_bins", self.proj2seg.density_bins.to_string()),
            ("proj2seg.train_seeds", seeds.join(",")),
            ("noise.boundary_band", self.noise.boundary_band.to_string()),
            ("noise.boundary_flip_prob", self.noise.boundary_flip_prob.to_string()),
            ("noise.uniform_flip_prob", self.noise.uniform_flip_prob.to_string()),
            ("noise.seed", self.noise.seed.to_string()),
        ]
    }
}

/// Streaming map construction.
pub trait MapBuilder: Send {
    /// Feeds a frame whose labels are already corrupted (or clean).
    fn observe_labeled(&mut self, frame: &EgoFrame) -> Result<()>;

    /// Cells that received at least one projected point.
    fn observed(&self) -> &BinaryRaster;

    fn finish(&self) -> Result<SemanticMap>;

    /// Corrupts `frame` with `noise`, then feeds it.
    fn observe(&mut self, frame: &EgoFrame, noise: &NoiseModel) -> Result<()> {
        if noise.is_noiseless() {
            self.observe_labeled(frame)
        } else {
            self.observe_labeled(&corrupt_labels(frame, noise))
        }
    }
}

pub struct SmnetBuilder {
    memory: SpatialMemory,
    aggregator: Aggregator,
    smoothing: Smoothing,
}

impl SmnetBuilder {
    pub fn new(grid: GridSpec, aggregator: Aggregator, smoothing: Smoothing) -> Self {
        SmnetBuilder {
            memory: SpatialMemory::new(grid),
            aggregator,
            smoothing,
        }
    }

    pub fn memory(&self) -> &SpatialMemory {
        &self.memory
    }
}

impl MapBuilder for SmnetBuilder {
    fn observe_labeled(&mut self, frame: &EgoFrame) -> Result<()> {
        let projected = project_frame(frame, &self.memory.grid);
        self.memory.update(&projected, &self.aggregator)
    }

    fn observed(&self) -> &BinaryRaster {
        &self.memory.observed
    }

    fn finish(&self) -> Result<SemanticMap> {
        Ok(decode_map(&self.memory, self.smoothing))
    }
}

pub struct Seg2ProjBuilder {
    grid: GridSpec,
    options: Seg2ProjOptions,
    labels: Raster<u8>,
    heights: Vec<f64>,
    received: BinaryRaster,
    footprint: BinaryRaster,
}

impl Seg2ProjBuilder {
    pub fn new(grid: GridSpec, options: Seg2ProjOptions) -> Self {
        let (w, h) = (grid.u_size, grid.v_size);
        Seg2ProjBuilder {
            grid,
            options,
            labels: Raster::new(w, h, 0),
            heights: vec![f64::NEG_INFINITY; grid.len()],
            received: Raster::new(w, h, false),
            footprint: Raster::new(w, h, false),
        }
    }
}

impl MapBuilder for Seg2ProjBuilder {
    fn observe_labeled(&mut self, frame: &EgoFrame) -> Result<()> {
        let o = self.options;
        let heuristic = o.erosion_side > 0 || o.downsample_factor > 1;
        if heuristic {
            for obs in project_frame(frame, &self.grid).observations {
                self.footprint.data[self.grid.index(obs.cell)] = true;
            }
        }
        let mut f = frame.clone();
        if o.erosion_side > 0 {
            f.labels = erode_labels(&f.labels, o.erosion_side);
        }
        if o.downsample_factor > 1 {
            f.depth = downsample_nn(&f.depth, o.downsample_factor)?;
            f.labels = downsample_nn(&f.labels, o.downsample_factor)?;
            f.instances = downsample_nn(&f.instances, o.downsample_factor)?;
            f.intrinsics = f.intrinsics.downsampled(o.downsample_factor);
        }
        for obs in project_frame(&f, &self.grid).observations {
            let idx = self.grid.index(obs.cell);
            let replace = match o.cross_frame {
                CrossFrame::LatestWins => true,
                CrossFrame::MaxHeight => !self.received.data[idx] || obs.height >= self.heights[idx],
            };
            if replace {
                self.labels.data[idx] = obs.class_id;
                self.heights[idx] = obs.height;
            }
            self.received.data[idx] = true;
            if !heuristic {
                self.footprint.data[idx] = true;
            }
        }
        Ok(())
    }

    fn observed(&self) -> &BinaryRaster {
        &self.footprint
    }

    fn finish(&self) -> Result<SemanticMap> {
        let o = self.options;
        let mut labels = self.labels.clone();
        let mut valid = self.received.clone();
        if o.fill_median_k > 0 {
            let filled = masked_mode_filter(&labels, &self.received, o.fill_median_k);
            for idx in 0..labels.data.len() {
                if self.footprint.data[idx] && !self.received.data[idx] {
                    if let Some(l) = filled.data[idx] {
                        labels.data[idx] = l;
                        valid.data[idx] = true;
                    }
                }
            }
        }
        // holes that stayed unfilled read as void
        for idx in 0..labels.data.len() {
            if !valid.data[idx] {
                labels.data[idx] = 0;
            }
        }
        if o.post_median_k > 0 {
            let smoothed = masked_mode_filter(&labels, &self.footprint, o.post_median_k);
            for idx in 0..labels.data.len() {
                if self.footprint.data[idx] {
                    labels.data[idx] = smoothed.data[idx].unwrap_or(0);
                }
            }
        }
        for idx in 0..labels.data.len() {
            if !self.footprint.data[idx] {
                labels.data[idx] = 0;
            }
        }
        Ok(SemanticMap { grid: self.grid, labels })
    }
}

/// Top-down geometry seen by the proj2seg labeler: no class information.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRaster {
    pub grid: GridSpec,
    /// Highest projected point per cell; meaningless where unobserved.
    pub heights: Raster<f32>,
    pub observed: BinaryRaster,
}

impl ObservationRaster {
    pub fn new(grid: GridSpec) -> Self {
        ObservationRaster {
            grid,
            heights: Raster::new(grid.u_size, grid.v_size, f32::NEG_INFINITY),
            observed: Raster::new(grid.u_size, grid.v_size, false),
        }
    }

    pub fn add_frame(&mut self, frame: &EgoFrame) {
        for obs in project_frame(frame, &self.grid).observations {
            let idx = self.grid.index(obs.cell);
            let h = obs.height as f32;
            if !self.observed.data[idx] || h > self.heights.data[idx] {
                self.heights.data[idx] = h;
            }
            self.observed.data[idx] = true;
        }
    }

    /// Fraction of observed cells in the clipped 5x5 window around each cell.
    fn density(&self) -> Raster<f32> {
        let (w, h) = (self.observed.width, self.observed.height);
        let mut out = Raster::new(w, h, 0.0f32);
        for v in 0..h {
            for u in 0..w {
                let (mut seen, mut total) = (0u32, 0u32);
                for vv in v.saturating_sub(2)..=(v + 2).min(h - 1) {
                    for uu in u.saturating_sub(2)..=(u + 2).min(w - 1) {
                        total += 1;
                        seen += u32::from(self.observed.get(uu, vv));
                    }
                }
                out.set(u, v, seen as f32 / total as f32);
            }
        }
        out
    }
}

type LabelerKey = (i32, u8);

/// Frequency-count lookup from (height band, observation density bin) to class.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownLabeler {
    pub height_band: f64,
    pub density_bins: usize,
    table: BTreeMap<LabelerKey, u8>,
    band_fallback: BTreeMap<i32, u8>,
}

fn argmax_counts(c: &[u64; NUM_CLASSES]) -> u8 {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if c[k] > c[best] {
            best = k;
        }
    }
    best as u8
}

impl TopDownLabeler {
    fn keys(&self, obs: &ObservationRaster) -> Vec<Option<LabelerKey>> {
        let density = obs.density();
        (0..obs.grid.len())
            .map(|idx| {
                obs.observed.data[idx].then(|| {
                    let band = (obs.heights.data[idx] as f64 / self.height_band).floor() as i32;
                    let bin = ((density.data[idx] as f64 * self.density_bins as f64) as usize).min(self.density_bins - 1);
                    (band, bin as u8)
                })
            })
            .collect()
    }

    /// Fits the lookup on observation rasters paired with ground-truth maps.
    pub fn fit(samples: &[(ObservationRaster, SemanticMap)], opts: &Proj2SegOptions) -> Result<Self> {
        let mut labeler = TopDownLabeler {
            height_band: opts.height_band,
            density_bins: opts.density_bins.max(1),
            table: BTreeMap::new(),
            band_fallback: BTreeMap::new(),
        };
        let mut counts: BTreeMap<LabelerKey, [u64; NUM_CLASSES]> = BTreeMap::new();
        let mut band_counts: BTreeMap<i32, [u64; NUM_CLASSES]> = BTreeMap::new();
        for (obs, gt) in samples {
            obs.grid.ensure_same(&gt.grid)?;
            for (idx, key) in labeler.keys(obs).into_iter().enumerate() {
                if let Some(key) = key {
                    let class = gt.labels.data[idx] as usize;
                    counts.entry(key).or_insert([0; NUM_CLASSES])[class] += 1;
                    band_counts.entry(key.0).or_insert([0; NUM_CLASSES])[class] += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyObservation);
        }
        labeler.table = counts.iter().map(|(k, c)| (*k, argmax_counts(c))).collect();
        labeler.band_fallback = band_counts.iter().map(|(k, c)| (*k, argmax_counts(c))).collect();
        Ok(labeler)
    }

    pub fn label(&self, obs: &ObservationRaster) -> Result<SemanticMap> {
        if obs.observed.count() == 0 {
            return Err(Error::EmptyObservation);
        }
        let mut map = SemanticMap::void(obs.grid);
        for (idx, key) in self.keys(obs).into_iter().enumerate() {
            if let Some(key) = key {
                map.labels.data[idx] = self
                    .table
                    .get(&key)
                    .or_else(|| self.band_fallback.get(&key.0))
                    .copied()
                    .unwrap_or(0);
            }
        }
        Ok(map)
    }
}

pub struct Proj2SegBuilder {
    observation: ObservationRaster,
    labeler: Arc<TopDownLabeler>,
}

impl Proj2SegBuilder {
    pub fn new(grid: GridSpec, labeler: Arc<TopDownLabeler>) -> Self {
        Proj2SegBuilder {
            observation: ObservationRaster::new(grid),
            labeler,
        }
    }

    pub fn observation(&self) -> &ObservationRaster {
        &self.observation
    }
}

impl MapBuilder for Proj2SegBuilder {
    fn observe_labeled(&mut self, frame: &EgoFrame) -> Result<()> {
        self.observation.add_frame(frame);
        Ok(())
    }

    fn observed(&self) -> &BinaryRaster {
        &self.observation.observed
    }

    fn finish(&self) -> Result<SemanticMap> {
        self.labeler.label(&self.observation)
    }
}

/// Builder for `cfg.kind`; proj2seg requires a fitted labeler.
pub fn make_builder(
    cfg: &PipelineConfig,
    grid: GridSpec,
    labeler: Option<Arc<TopDownLabeler>>,
) -> Result<Box<dyn MapBuilder>> {
    Ok(match cfg.kind {
        PipelineKind::Smnet => Box::new(SmnetBuilder::new(grid, cfg.aggregator, cfg.smoothing)),
        PipelineKind::Seg2Proj => Box::new(Seg2ProjBuilder::new(grid, cfg.seg2proj)),
        PipelineKind::Proj2Seg => {
            let labeler = labeler.ok_or_else(|| Error::Invalid("proj2seg needs a fitted labeler".into()))?;
            Box::new(Proj2SegBuilder::new(grid, labeler))
        }
    })
}

fn run(builder: &mut dyn MapBuilder, frames: &[EgoFrame], noise: &NoiseModel) -> Result<SemanticMap> {
    for f in frames {
        builder.observe(f, noise)?;
    }
    builder.finish()
}

pub fn run_smnet(frames: &[EgoFrame], grid: GridSpec, cfg: &PipelineConfig) -> Result<SemanticMap> {
    run(&mut SmnetBuilder::new(grid, cfg.aggregator, cfg.smoothing), frames, &cfg.noise)
}

pub fn run_seg2proj(frames: &[EgoFrame], grid: GridSpec, cfg: &PipelineConfig) -> Result<SemanticMap> {
    run(&mut Seg2ProjBuilder::new(grid, cfg.seg2proj), frames, &cfg.noise)
}

pub fn run_proj2seg(
    frames: &[EgoFrame],
    grid: GridSpec,
    cfg: &PipelineConfig,
    labeler: Arc<TopDownLabeler>,
) -> Result<SemanticMap> {
    run(&mut Proj2SegBuilder::new(grid, labeler), frames, &cfg.noise)
}
