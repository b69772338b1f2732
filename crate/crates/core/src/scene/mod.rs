//! Synthetic box worlds standing in for scanned houses: procedural scene
//! generation, ground-truth top-down maps, a depth + semantic ray caster and
//! scripted coverage trajectories.

mod raycast;
mod trajectory;

pub use raycast::{raycast_frame, EgoFrame, DEFAULT_MAX_RANGE};
pub use trajectory::{
    coverage_trajectory, validate_trajectory, AgentState, Trajectory, CoverageParams, FORWARD_STEP, TURN_STEP_DEG,
};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, DEFAULT_RESOLUTION};
use crate::imgproc::{BinaryRaster, Raster};
use crate::rng::Rng;
use crate::{SemanticMap, NUM_CLASSES};

/// Default sensor height above the floor.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.25;

/// Free-space tolerance around the floor height.
pub const FLOOR_BAND: f64 = 0.05;

/// Rejection-sampling budget for one scene.
pub const PLACEMENT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorExtent {
    pub xmin: f64,
    pub zmin: f64,
    pub xmax: f64,
    pub zmax: f64,
}

impl FloorExtent {
    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.zmin + self.zmax) / 2.0)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.xmin && x <= self.xmax && z >= self.zmin && z <= self.zmax
    }
}

/// Axis-aligned labeled box resting on or above the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub class_id: u8,
    pub instance_id: u32,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl LabeledBox {
    /// Whether the floor footprint (closed-open) covers `(x, z)`.
    #[inline]
    pub fn covers(&self, x: f64, z: f64) -> bool {
        x >= self.min[0] && x < self.max[0] && z >= self.min[2] && z < self.max[2]
    }

    pub fn top(&self) -> f64 {
        self.max[1]
    }

    /// Euclidean distance on the floor plane from `(x, z)` to the footprint.
    pub fn floor_distance(&self, x: f64, z: f64) -> f64 {
        let dx = (self.min[0] - x).max(0.0).max(x - self.max[0]);
        let dz = (self.min[2] - z).max(0.0).max(z - self.max[2]);
        dx.hypot(dz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub floor: FloorExtent,
    pub boxes: Vec<LabeledBox>,
    pub seed: u64,
}

impl SceneModel {
    pub fn empty(floor: FloorExtent) -> Self {
        SceneModel {
            floor,
            boxes: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for b in &self.boxes {
            let ok = (0..3).all(|a| b.min[a] < b.max[a])
                && b.min[1] >= 0.0
                && (1..NUM_CLASSES as u8).contains(&b.class_id)
                && b.instance_id > 0
                && ids.insert(b.instance_id);
            if !ok {
                return Err(Error::Invalid(format!("box {b:?}")));
            }
        }
        if !(self.floor.xmin < self.floor.xmax && self.floor.zmin < self.floor.zmax) {
            return Err(Error::Invalid(format!("floor {:?}", self.floor)));
        }
        Ok(())
    }

    /// Grid at `resolution` covering the floor extent.
    pub fn grid(&self, resolution: f64) -> GridSpec {
        GridSpec::covering(self.floor.xmin, self.floor.zmin, self.floor.xmax, self.floor.zmax, resolution)
            .expect("floor extent validated")
    }

    pub fn default_grid(&self) -> GridSpec {
        self.grid(DEFAULT_RESOLUTION)
    }

    pub fn instance_count(&self, class_id: u8) -> usize {
        self.boxes.iter().filter(|b| b.class_id == class_id).count()
    }
}

/// Footprint and height ranges `(w, d, h)` per class, in meters.
/// Heights deliberately overlap across classes.
const CLASS_SHAPES: [[(f64, f64); 3]; 12] = [
    [(0.40, 0.60), (0.40, 0.60), (0.80, 1.00)], // chair
    [(0.80, 1.60), (0.60, 1.00), (0.70, 0.80)], // table
    [(0.30, 0.50), (0.30, 0.50), (0.15, 0.30)], // cushion
    [(0.40, 1.00), (0.40, 0.60), (0.80, 1.50)], // cabinet
    [(0.60, 1.20), (0.30, 0.45), (1.00, 1.60)], // shelving
    [(0.50, 0.80), (0.40, 0.60), (0.80, 0.90)], // sink
    [(0.80, 1.40), (0.40, 0.60), (0.80, 1.10)], // dresser
    [(0.30, 0.50), (0.30, 0.50), (0.50, 1.20)], // plant
    [(1.40, 2.00), (1.90, 2.10), (0.50, 0.70)], // bed
    [(1.60, 2.20), (0.80, 1.00), (0.70, 0.90)], // sofa
    [(1.20, 2.40), (0.50, 0.70), (0.85, 0.95)], // counter
    [(1.00, 1.60), (0.30, 0.60), (0.90, 1.20)], // fireplace
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Floor extent, x and z sizes (m); the floor starts at the origin.
    pub extent: (f64, f64),
    pub n_boxes: usize,
    /// Relative sampling weights of classes 1..=12.
    pub class_weights: [f64; 12],
    /// Minimum floor-plane clearance between boxes and to the extent border.
    pub min_gap: f64,
    /// Radius of the keep-out disk around the agent spawn (extent center).
    pub spawn_radius: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            extent: (5.0, 5.0),
            n_boxes: 8,
            class_weights: [1.0; 12],
            min_gap: 0.35,
            spawn_radius: 0.5,
        }
    }
}

fn mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Box footprints are laid out on this lattice, then shrunk by
/// [`FACE_INSET`] so every vertical face lies strictly inside a grid cell.
pub const FOOTPRINT_LATTICE: f64 = 0.02;
pub const FACE_INSET: f64 = 0.001;

fn snap(x: f64) -> f64 {
    mm((x / FOOTPRINT_LATTICE).round() * FOOTPRINT_LATTICE)
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneModel> {
    let (ex, ez) = params.extent;
    if !(ex > 0.0 && ez > 0.0) {
        return Err(Error::Invalid(format!("extent {ex}x{ez}")));
    }
    let floor = FloorExtent {
        xmin: 0.0,
        zmin: 0.0,
        xmax: ex,
        zmax: ez,
    };
    let (sx, sz) = floor.center();
    let total: f64 = params.class_weights.iter().sum();
    if params.n_boxes > 0 && !(total > 0.0) {
        return Err(Error::Invalid("class weights sum to zero".into()));
    }
    let mut rng = Rng::new(seed);
    let mut boxes: Vec<LabeledBox> = Vec::with_capacity(params.n_boxes);
    let mut tries = 0;
    while boxes.len() < params.n_boxes {
        if tries == PLACEMENT_BUDGET {
            return Err(Error::InfeasiblePlacement {
                placed: boxes.len(),
                requested: params.n_boxes,
                tries,
            });
        }
        tries += 1;
        let mut pick = rng.unit() * total;
        let mut class = 12;
        for (c, &w) in params.class_weights.iter().enumerate() {
            if pick < w {
                class = c + 1;
                break;
            }
            pick -= w;
        }
        let shape = CLASS_SHAPES[class - 1];
        let mut w = snap(rng.range(shape[0].0, shape[0].1));
        let mut d = snap(rng.range(shape[1].0, shape[1].1));
        let h = mm(rng.range(shape[2].0, shape[2].1));
        if rng.below(2) == 1 {
            std::mem::swap(&mut w, &mut d);
        }
        let g = params.min_gap;
        if w + 2.0 * g > ex || d + 2.0 * g > ez {
            continue;
        }
        let x0 = snap(rng.range(g, ex - g - w));
        let z0 = snap(rng.range(g, ez - g - d));
        let candidate = LabeledBox {
            class_id: class as u8,
            instance_id: boxes.len() as u32 + 1,
            min: [mm(x0 + FACE_INSET), 0.0, mm(z0 + FACE_INSET)],
            max: [mm(x0 + w - FACE_INSET), h, mm(z0 + d - FACE_INSET)],
        };
        if candidate.floor_distance(sx, sz) < params.spawn_radius {
            continue;
        }
        let clear = boxes.iter().all(|b| {
            candidate.min[0] >= b.max[0] + g
                || b.min[0] >= candidate.max[0] + g
                || candidate.min[2] >= b.max[2] + g
                || b.min[2] >= candidate.max[2] + g
        });
        if clear {
            boxes.push(candidate);
        }
    }
    Ok(SceneModel { floor, boxes, seed })
}

/// Top-down ground truth: class of the tallest box over each cell center
/// (ties to the lower instance id) and that box's top height (0 for floor).
pub fn ground_truth_map(scene: &SceneModel, g: &GridSpec) -> (SemanticMap, Raster<f32>) {
    let mut map = SemanticMap::void(*g);
    let mut heights = Raster::new(g.u_size, g.v_size, 0.0f32);
    let mut owner = Raster::new(g.u_size, g.v_size, (f64::NEG_INFINITY, u32::MAX));
    for b in &scene.boxes {
        let (u0, v0) = g.cell_coords(b.min[0], b.min[2]);
        let (u1, v1) = g.cell_coords(b.max[0], b.max[2]);
        for v in v0.max(0)..=v1.min(g.v_size as i64 - 1) {
            for u in u0.max(0)..=u1.min(g.u_size as i64 - 1) {
                let cell = (u as usize, v as usize);
                let (cx, cz) = g.cell_center(cell);
                if !b.covers(cx, cz) {
                    continue;
                }
                let (best_h, best_id) = owner.get(cell.0, cell.1);
                if b.top() > best_h || (b.top() == best_h && b.instance_id < best_id) {
                    owner.set(cell.0, cell.1, (b.top(), b.instance_id));
                    map.labels.set(cell.0, cell.1, b.class_id);
                    heights.set(cell.0, cell.1, b.top() as f32);
                }
            }
        }
    }
    (map, heights)
}

/// Instance id of the tallest box over each cell center (0 for none).
pub fn ground_truth_instances(scene: &SceneModel, g: &GridSpec) -> Raster<u32> {
    let mut out = Raster::new(g.u_size, g.v_size, 0u32);
    let mut best = Raster::new(g.u_size, g.v_size, f64::NEG_INFINITY);
    for v in 0..g.v_size {
        for u in 0..g.u_size {
            let (cx, cz) = g.cell_center((u, v));
            for b in &scene.boxes {
                if b.covers(cx, cz) {
                    let cur = best.get(u, v);
                    if b.top() > cur || (b.top() == cur && b.instance_id < out.get(u, v)) {
                        best.set(u, v, b.top());
                        out.set(u, v, b.instance_id);
                    }
                }
            }
        }
    }
    out
}

/// Cells whose ground-truth height lies within the floor band and whose
/// center lies on the floor extent.
pub fn ground_truth_freespace(scene: &SceneModel, g: &GridSpec) -> BinaryRaster {
    let (_, heights) = ground_truth_map(scene, g);
    let floor_y = 0.0;
    let mut free = Raster::new(g.u_size, g.v_size, false);
    for v in 0..g.v_size {
        for u in 0..g.u_size {
            let (cx, cz) = g.cell_center((u, v));
            let h = heights.get(u, v) as f64;
            free.set(u, v, scene.floor.contains(cx, cz) && (h - floor_y).abs() <= FLOOR_BAND);
        }
    }
    free
}
