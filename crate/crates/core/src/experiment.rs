//! End-to-end runs: rendering, map building, and scene suites.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::formats::{read_config, GridFile};
use crate::geometry::{CameraIntrinsics, GridSpec, DEFAULT_RESOLUTION};
use crate::imgproc::{BinaryRaster, Raster};
use crate::metrics::{eval_segmentation, SegOptions, SegReport};
use crate::nav::{
    freespace_from_heights, generate_episodes, run_episode, EpisodeResult, GroundTruth, PlannerParams, PlanningMaps,
};
use crate::noise::{corrupt_labels, NoiseModel};
use crate::pipelines::{make_builder, ObservationRaster, PipelineConfig, PipelineKind, TopDownLabeler};
use crate::qa::{answer_table, count_instances, eval_qa, prior_baseline, CountParams, CountQuestion, QaReport};
use crate::scene::{
    coverage_trajectory, generate_scene, ground_truth_freespace, ground_truth_map, raycast_frame, CoverageParams,
    EgoFrame, SceneModel, SceneParams, Trajectory, DEFAULT_MAX_RANGE,
};
use crate::{SemanticMap, NUM_CLASSES};

/// Everything a map build needs beyond the scene and trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub camera_width: usize,
    pub camera_height: usize,
    pub hfov_deg: f64,
    /// Render every n-th trajectory state.
    pub frame_stride: usize,
    pub max_range: f64,
    pub resolution: f64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            camera_width: 160,
            camera_height: 120,
            hfov_deg: 90.0,
            frame_stride: 4,
            max_range: DEFAULT_MAX_RANGE,
            resolution: DEFAULT_RESOLUTION,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn for_kind(kind: PipelineKind) -> Self {
        RunConfig {
            pipeline: PipelineConfig::for_kind(kind),
            ..Default::default()
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_hfov(self.camera_width, self.camera_height, self.hfov_deg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad value '{v}' for key '{key}'")))
        };
        let count = |v: &str| -> Result<usize> {
            match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::Invalid(format!("{key} must be a positive integer, got '{v}'"))),
            }
        };
        match key {
            "camera.width" => self.camera_width = count(value)?,
            "camera.height" => self.camera_height = count(value)?,
            "camera.hfov_deg" => self.hfov_deg = num(value)?,
            "frame_stride" => self.frame_stride = count(value)?,
            "max_range" => self.max_range = num(value)?,
            "resolution" => {
                self.resolution = num(value)?;
                if !(self.resolution > 0.0) {
                    return Err(Error::Invalid("resolution must be positive".into()));
                }
            }
            _ => {
                if !self.pipeline.set(key, value)? {
                    return Err(Error::Invalid(format!("unknown config key '{key}'")));
                }
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v, line) in read_config(path)? {
            cfg.set(&k, &v).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("camera.width", self.camera_width.to_string()),
            ("camera.height", self.camera_height.to_string()),
            ("camera.hfov_deg", self.hfov_deg.to_string()),
            ("frame_stride", self.frame_stride.to_string()),
            ("max_range", self.max_range.to_string()),
            ("resolution", self.resolution.to_string()),
        ];
        out.extend(self.pipeline.entries());
        out
    }
}

/// Clean frames for every `frame_stride`-th state; `index` keeps the
/// trajectory position.
pub fn render_frames(scene: &SceneModel, traj: &Trajectory, cfg: &RunConfig) -> Result<Vec<EgoFrame>> {
    let k = cfg.intrinsics()?;
    let stride = cfg.frame_stride.max(1);
    Ok(traj
        .states
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, s)| {
            let mut f = raycast_frame(scene, &k, &s.camera_pose(traj.camera_height), traj.camera_height, cfg.max_range);
            f.index = i as u64;
            f
        })
        .collect())
}

/// Scene, coverage trajectory and clean frames for a seed.
pub fn scene_frames(seed: u64, cfg: &RunConfig) -> Result<(SceneModel, Vec<EgoFrame>)> {
    let scene = generate_scene(seed, &SceneParams::default())?;
    let traj = coverage_trajectory(&scene, seed, &CoverageParams::default())?;
    let frames = render_frames(&scene, &traj, cfg)?;
    Ok((scene, frames))
}

fn par_map<T: Send, U: Send>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use crate::par::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Fits the proj2seg lookup on the configured held-out scenes.
pub fn train_labeler(cfg: &RunConfig) -> Result<TopDownLabeler> {
    let samples = par_map(cfg.pipeline.proj2seg.train_seeds.clone(), |seed| -> Result<_> {
        let (scene, frames) = scene_frames(seed, cfg)?;
        let g = scene.grid(cfg.resolution);
        let mut obs = ObservationRaster::new(g);
        frames.iter().for_each(|f| obs.add_frame(f));
        Ok((obs, ground_truth_map(&scene, &g).0))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    TopDownLabeler::fit(&samples, &cfg.pipeline.proj2seg)
}

/// A built map with the layers written to SMAPGRID files.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltMap {
    pub map: SemanticMap,
    /// Highest observed surface, 0 where unobserved.
    pub heights: Raster<f32>,
    /// Cells reached by the full-resolution projection of any frame; the
    /// same for every pipeline given the same frames.
    pub observed: BinaryRaster,
}

impl BuiltMap {
    pub fn to_grid_file(&self) -> Result<GridFile> {
        GridFile::from_map(&self.map, &self.heights, &self.observed)
    }

    pub fn from_grid_file(f: &GridFile) -> Result<Self> {
        Ok(BuiltMap {
            map: f.semantic_map()?,
            heights: f.heights()?,
            observed: f.observed()?,
        })
    }
}

fn observation_layers(obs: &ObservationRaster) -> (Raster<f32>, BinaryRaster) {
    let heights = Raster {
        width: obs.heights.width,
        height: obs.heights.height,
        data: obs
            .heights
            .data
            .iter()
            .zip(&obs.observed.data)
            .map(|(&h, &o)| if o { h } else { 0.0 })
            .collect(),
    };
    (heights, obs.observed.clone())
}

/// Builds one map per config from the same clean frames. Frames are
/// corrupted once per distinct noise model and shared between builders.
pub fn build_maps(
    frames: &[EgoFrame],
    grid: GridSpec,
    configs: &[PipelineConfig],
    labeler: Option<Arc<TopDownLabeler>>,
) -> Result<Vec<BuiltMap>> {
    let mut builders = configs
        .iter()
        .map(|c| make_builder(c, grid, labeler.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut noises: Vec<NoiseModel> = Vec::new();
    for c in configs {
        if !noises.contains(&c.noise) {
            noises.push(c.noise);
        }
    }
    let mut obs = ObservationRaster::new(grid);
    for f in frames {
        obs.add_frame(f);
        for nm in &noises {
            let corrupted = if nm.is_noiseless() { f.clone() } else { corrupt_labels(f, nm) };
            for (b, c) in builders.iter_mut().zip(configs) {
                if c.noise == *nm {
                    b.observe_labeled(&corrupted)?;
                }
            }
        }
    }
    let (heights, observed) = observation_layers(&obs);
    builders
        .iter()
        .map(|b| {
            Ok(BuiltMap {
                map: b.finish()?,
                heights: heights.clone(),
                observed: observed.clone(),
            })
        })
        .collect()
}

pub fn build_map(
    scene: &SceneModel,
    traj: &Trajectory,
    cfg: &RunConfig,
    labeler: Option<Arc<TopDownLabeler>>,
) -> Result<BuiltMap> {
    let frames = render_frames(scene, traj, cfg)?;
    let grid = scene.grid(cfg.resolution);
    let labeler = match (cfg.pipeline.kind, labeler) {
        (PipelineKind::Proj2Seg, None) => Some(Arc::new(train_labeler(cfg)?)),
        (_, l) => l,
    };
    Ok(build_maps(&frames, grid, std::slice::from_ref(&cfg.pipeline), labeler)?.remove(0))
}

/// Ground-truth map file contents: every floor cell counts as observed.
pub fn ground_truth_built(scene: &SceneModel, grid: &GridSpec) -> BuiltMap {
    let (map, heights) = ground_truth_map(scene, grid);
    let observed = Raster {
        width: grid.u_size,
        height: grid.v_size,
        data: (0..grid.len())
            .map(|i| {
                let (x, z) = grid.cell_center(grid.cell_of_index(i));
                scene.floor.contains(x, z)
            })
            .collect(),
    };
    BuiltMap { map, heights, observed }
}

/// Per-scene segmentation reports, `reports[scene][config]`, evaluated on
/// the projection-observed cells.
pub fn segmentation_suite(
    seeds: &[u64],
    base: &RunConfig,
    configs: &[PipelineConfig],
    opts: &SegOptions,
) -> Result<Vec<Vec<SegReport>>> {
    let labeler = if configs.iter().any(|c| c.kind == PipelineKind::Proj2Seg) {
        Some(Arc::new(train_labeler(base)?))
    } else {
        None
    };
    par_map(seeds.to_vec(), |seed| -> Result<Vec<SegReport>> {
        let (scene, frames) = scene_frames(seed, base)?;
        let g = scene.grid(base.resolution);
        let (gt, _) = ground_truth_map(&scene, &g);
        build_maps(&frames, g, configs, labeler.clone())?
            .iter()
            .map(|b| eval_segmentation(&b.map, &gt, &b.observed, opts))
            .collect()
    })
    .into_iter()
    .collect()
}

/// Navigation on predicted maps next to the same episodes on GT maps.
#[derive(Debug, Clone, PartialEq)]
pub struct NavComparison {
    pub predicted: Vec<EpisodeResult>,
    pub ground_truth: Vec<EpisodeResult>,
}

/// Runs `episodes_per_scene` seeded episodes per scene, planning once on the
/// pipeline's map (free space from its heights) and once on GT maps.
pub fn navigation_suite(
    seeds: &[u64],
    episodes_per_scene: usize,
    base: &RunConfig,
    params: &PlannerParams,
) -> Result<NavComparison> {
    let per_scene = par_map(seeds.to_vec(), |seed| -> Result<(Vec<EpisodeResult>, Vec<EpisodeResult>)> {
        let (scene, frames) = scene_frames(seed, base)?;
        let g = scene.grid(base.resolution);
        let built = build_maps(&frames, g, std::slice::from_ref(&base.pipeline), None)?.remove(0);
        let gt = ground_truth_built(&scene, &g);
        let gt_free = ground_truth_freespace(&scene, &g);
        let truth = GroundTruth {
            semantic: &gt.map,
            free: &gt_free,
        };
        let episodes = generate_episodes(&truth, episodes_per_scene, seed, params.agent_radius)?;
        let pred_free = freespace_from_heights(&built.heights.data, &built.observed)?;
        let all = Raster::new(g.u_size, g.v_size, true);
        let pred_maps = PlanningMaps {
            semantic: &built.map,
            free: &pred_free,
            observed: &built.observed,
        };
        let gt_maps = PlanningMaps {
            semantic: &gt.map,
            free: &gt_free,
            observed: &all,
        };
        let p = episodes.iter().map(|e| run_episode(e, &pred_maps, &truth, params)).collect();
        let t = episodes.iter().map(|e| run_episode(e, &gt_maps, &truth, params)).collect();
        Ok((p, t))
    });
    let mut out = NavComparison {
        predicted: Vec::new(),
        ground_truth: Vec::new(),
    };
    for r in per_scene {
        let (p, t) = r?;
        out.predicted.extend(p);
        out.ground_truth.extend(t);
    }
    for (i, (p, t)) in out.predicted.iter_mut().zip(out.ground_truth.iter_mut()).enumerate() {
        p.id = i as u32;
        t.id = i as u32;
    }
    Ok(out)
}

/// One counting question per object class.
pub fn scene_questions(first_id: u32) -> Vec<CountQuestion> {
    (1..NUM_CLASSES as u8)
        .map(|c| CountQuestion {
            id: first_id + c as u32 - 1,
            target: c,
        })
        .collect()
}

pub fn ground_truth_answers(scene: &SceneModel, qs: &[CountQuestion]) -> Vec<u8> {
    qs.iter()
        .map(|q| scene.instance_count(q.target).min(crate::qa::ANSWER_CAP as usize) as u8)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaComparison {
    pub counting: QaReport,
    pub prior: QaReport,
}

/// Counting on the pipeline's maps versus the training-set prior.
pub fn qa_suite(test_seeds: &[u64], train_seeds: &[u64], base: &RunConfig, params: &CountParams) -> Result<QaComparison> {
    let mut train_q = Vec::new();
    let mut train_a = Vec::new();
    for &seed in train_seeds {
        let scene = generate_scene(seed, &SceneParams::default())?;
        let qs = scene_questions(train_q.len() as u32);
        train_a.extend(ground_truth_answers(&scene, &qs));
        train_q.extend(qs);
    }
    let prior = prior_baseline(&answer_table(&train_q, &train_a)?)?;
    let per_scene = par_map(test_seeds.to_vec(), |seed| -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
        let (scene, frames) = scene_frames(seed, base)?;
        let g = scene.grid(base.resolution);
        let built = build_maps(&frames, g, std::slice::from_ref(&base.pipeline), None)?.remove(0);
        let qs = scene_questions(0);
        let gt = ground_truth_answers(&scene, &qs);
        let counted = qs.iter().map(|q| count_instances(&built.map, q.target, params)).collect();
        let guessed = qs.iter().map(|q| prior.get(&q.target).copied().unwrap_or(0)).collect();
        Ok((gt, counted, guessed))
    });
    let (mut gt, mut counted, mut guessed) = (Vec::new(), Vec::new(), Vec::new());
    for r in per_scene {
        let (a, b, c) = r?;
        gt.extend(a);
        counted.extend(b);
        guessed.extend(c);
    }
    Ok(QaComparison {
        counting: eval_qa(&counted, &gt)?,
        prior: eval_qa(&guessed, &gt)?,
    })
}
