//! WebAssembly bindings for the browser demo in `www/`.
//!
//! [`DemoState`] holds the scene, its maps and the last navigation result;
//! [`Demo`] wraps it for JavaScript.

use semmap::experiment::{build_maps, ground_truth_built, scene_frames, BuiltMap, RunConfig};
use semmap::formats::PALETTE;
use semmap::metrics::{eval_segmentation, SegOptions};
use semmap::nav::{freespace_from_heights, run_episode, Episode, EpisodeResult, GroundTruth, PlannerParams, PlanningMaps};
use semmap::pipelines::{PipelineConfig, PipelineKind};
use semmap::qa::{count_instances, CountParams};
use semmap::scene::{ground_truth_freespace, AgentState, SceneModel};
use semmap::{BinaryRaster, LabelRaster, NUM_CLASSES};
use wasm_bindgen::prelude::*;

/// Frame stride for the demo; coarser than the CLI default to keep the page
/// responsive.
const DEMO_FRAME_STRIDE: usize = 8;

pub struct DemoState {
    scene: SceneModel,
    predicted: BuiltMap,
    truth: BuiltMap,
    gt_free: BinaryRaster,
    pred_free: BinaryRaster,
    miou: f64,
}

pub fn rgba(labels: &LabelRaster) -> Vec<u8> {
    labels
        .data
        .iter()
        .flat_map(|&l| {
            let [r, g, b] = PALETTE[l as usize];
            [r, g, b, 255]
        })
        .collect()
}

impl DemoState {
    /// Generates scene `seed` and builds its map with `pipeline` (smnet or
    /// seg2proj) under boundary flip probability `flip_prob`.
    pub fn new(seed: u64, pipeline: &str, flip_prob: f64) -> Result<Self, String> {
        let kind = PipelineKind::parse(pipeline).map_err(|e| e.to_string())?;
        if kind == PipelineKind::Proj2Seg {
            return Err("proj2seg needs a trained labeler; use the CLI".into());
        }
        let mut cfg = RunConfig::for_kind(kind);
        cfg.frame_stride = DEMO_FRAME_STRIDE;
        cfg.pipeline.set("noise.boundary_flip_prob", &flip_prob.to_string()).map_err(|e| e.to_string())?;
        let (scene, frames) = scene_frames(seed, &cfg).map_err(|e| e.to_string())?;
        let g = scene.grid(cfg.resolution);
        let configs: [PipelineConfig; 1] = [cfg.pipeline.clone()];
        let predicted = build_maps(&frames, g, &configs, None).map_err(|e| e.to_string())?.remove(0);
        let truth = ground_truth_built(&scene, &g);
        let gt_free = ground_truth_freespace(&scene, &g);
        let pred_free = freespace_from_heights(&predicted.heights.data, &predicted.observed).map_err(|e| e.to_string())?;
        let miou = eval_segmentation(&predicted.map, &truth.map, &predicted.observed, &SegOptions::default())
            .map_err(|e| e.to_string())?
            .m_iou;
        Ok(DemoState {
            scene,
            predicted,
            truth,
            gt_free,
            pred_free,
            miou,
        })
    }

    pub fn width(&self) -> usize {
        self.truth.map.grid.u_size
    }

    pub fn height(&self) -> usize {
        self.truth.map.grid.v_size
    }

    pub fn miou(&self) -> f64 {
        self.miou
    }

    pub fn predicted_rgba(&self) -> Vec<u8> {
        rgba(&self.predicted.map.labels)
    }

    pub fn truth_rgba(&self) -> Vec<u8> {
        rgba(&self.truth.map.labels)
    }

    /// Navigates from cell `(u, v)` to `target`, planning on the predicted
    /// map and executing against ground truth.
    pub fn navigate(&self, u: usize, v: usize, target: u8) -> Result<EpisodeResult, String> {
        if target == 0 || target as usize >= NUM_CLASSES {
            return Err(format!("target class {target} not in 1..=12"));
        }
        let g = &self.truth.map.grid;
        if u >= g.u_size || v >= g.v_size {
            return Err(format!("cell ({u}, {v}) outside the map"));
        }
        let (x, z) = g.cell_center((u, v));
        let ep = Episode {
            id: 0,
            start: AgentState { x, z, yaw: 0.0 },
            target,
        };
        let maps = PlanningMaps {
            semantic: &self.predicted.map,
            free: &self.pred_free,
            observed: &self.predicted.observed,
        };
        let truth = GroundTruth {
            semantic: &self.truth.map,
            free: &self.gt_free,
        };
        Ok(run_episode(&ep, &maps, &truth, &PlannerParams::default()))
    }

    /// `(counted on the predicted map, true instance count)`.
    pub fn count(&self, target: u8) -> (u8, usize) {
        (
            count_instances(&self.predicted.map, target, &CountParams::default()),
            self.scene.instance_count(target),
        )
    }
}

#[wasm_bindgen]
pub struct Demo(DemoState);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, pipeline: &str, flip_prob: f64) -> Result<Demo, JsValue> {
        DemoState::new(seed as u64, pipeline, flip_prob)
            .map(Demo)
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn miou(&self) -> f64 {
        self.0.miou()
    }

    #[wasm_bindgen(js_name = predictedRgba)]
    pub fn predicted_rgba(&self) -> Vec<u8> {
        self.0.predicted_rgba()
    }

    #[wasm_bindgen(js_name = truthRgba)]
    pub fn truth_rgba(&self) -> Vec<u8> {
        self.0.truth_rgba()
    }

    /// `[success, path length, oracle length, u0, v0, u1, v1, ...]` with the
    /// executed path in fractional cell coordinates.
    pub fn navigate(&self, u: usize, v: usize, target: u8) -> Result<Vec<f64>, JsValue> {
        let r = self.0.navigate(u, v, target).map_err(|e| JsValue::from_str(&e))?;
        let g = &self.0.truth.map.grid;
        let mut out = vec![f64::from(u8::from(r.success)), r.path_length, r.oracle_length];
        for s in &r.path {
            out.push((s.x - g.origin_x) / g.resolution);
            out.push((s.z - g.origin_z) / g.resolution);
        }
        Ok(out)
    }

    /// `[counted, true count]`.
    pub fn count(&self, target: u8) -> Vec<u32> {
        let (c, t) = self.0.count(target);
        vec![c as u32, t as u32]
    }
}
