use nalgebra::Vector3;

use super::SceneModel;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::imgproc::Raster;

pub const DEFAULT_MAX_RANGE: f64 = 10.0;

/// One egocentric observation: planar depth (0 = no return), class ids and
/// instance ids per pixel, plus the camera it was taken with.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoFrame {
    pub depth: Raster<f64>,
    pub labels: Raster<u8>,
    pub instances: Raster<u32>,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub camera_y: f64,
    /// Position in the trajectory; keys the per-frame label noise.
    pub index: u64,
}

impl EgoFrame {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

/// Nearest hit `(t, class, instance)` along `origin + t * dir` where the
/// camera-frame z of `dir` is 1, so `t` is planar depth.
#[inline]
fn trace(scene: &SceneModel, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, u8, u32)> {
    let mut best: Option<(f64, u8, u32)> = None;
    for b in &scene.boxes {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let inv = 1.0 / dir[a];
            let mut ta = (b.min[a] - origin[a]) * inv;
            let mut tb = (b.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf (origin on a slab plane, parallel ray) is ignored by max/min
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        if t0 <= t1 && t0 > 0.0 {
            let better = match best {
                None => true,
                Some((t, _, id)) => t0 < t || (t0 == t && b.instance_id < id),
            };
            if better {
                best = Some((t0, b.class_id, b.instance_id));
            }
        }
    }
    if dir.y < 0.0 && origin.y > 0.0 {
        let t = -origin.y / dir.y;
        if best.map_or(true, |(tb, _, _)| t < tb) {
            best = Some((t, 0, 0));
        }
    }
    best
}

/// Renders depth, labels and instances for a camera in `scene`.
///
/// Floor hits are void with instance 0; hits farther than `max_range` (planar
/// depth) and misses get depth 0.
pub fn raycast_frame(
    scene: &SceneModel,
    k: &CameraIntrinsics,
    pose: &Pose,
    camera_y: f64,
    max_range: f64,
) -> EgoFrame {
    let (w, h) = (k.width, k.height);
    let origin = pose.center();
    let rt = pose.rotation.transpose();
    let render_row = |j: usize, depth: &mut [f64], labels: &mut [u8], inst: &mut [u32]| {
        for i in 0..w {
            let dir = rt * k.ray(i as f64, j as f64);
            if let Some((t, class, id)) = trace(scene, &origin, &dir) {
                if t <= max_range {
                    depth[i] = t;
                    labels[i] = class;
                    inst[i] = id;
                }
            }
        }
    };
    let mut depth = vec![0.0; w * h];
    let mut labels = vec![0u8; w * h];
    let mut instances = vec![0u32; w * h];
    #[cfg(feature = "parallel")]
    {
        use crate::par::*;
        depth
            .par_chunks_mut(w)
            .zip(labels.par_chunks_mut(w))
            .zip(instances.par_chunks_mut(w))
            .enumerate()
            .for_each(|(j, ((d, l), n))| render_row(j, d, l, n));
    }
    #[cfg(not(feature = "parallel"))]
    for (j, ((d, l), n)) in depth
        .chunks_mut(w)
        .zip(labels.chunks_mut(w))
        .zip(instances.chunks_mut(w))
        .enumerate()
    {
        render_row(j, d, l, n);
    }
    EgoFrame {
        depth: Raster::from_vec(w, h, depth).expect("intrinsics validated"),
        labels: Raster::from_vec(w, h, labels).expect("intrinsics validated"),
        instances: Raster::from_vec(w, h, instances).expect("intrinsics validated"),
        intrinsics: *k,
        pose: *pose,
        camera_y,
        index: 0,
    }
}
