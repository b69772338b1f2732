//! Camera models and transforms between pixel, camera, world and grid frames.
//!
//! World frame is Y-up (gravity along -Y). The top-down grid indexes the
//! floor plane: `u` runs along world `x`, `v` along world `z`.
//!
//! Depth is planar: the camera-frame `z` coordinate, not the ray length.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::imgproc::Raster;

/// Height above the camera beyond which observations are treated as ceiling.
pub const CEILING_MARGIN: f64 = 0.50;

/// Default top-down cell size: 2 cm x 2 cm.
pub const DEFAULT_RESOLUTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, focal length from
    /// the horizontal field of view.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width >= 1
            && self.height >= 1
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("camera intrinsics {self:?}")))
        }
    }

    /// Intrinsics of the image obtained by keeping every `factor`-th pixel
    /// starting at the top-left one.
    pub fn downsampled(&self, factor: usize) -> Self {
        let f = factor as f64;
        CameraIntrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame ray with unit `z` through pixel `(i, j)`.
    #[inline]
    pub fn ray(&self, i: f64, j: f64) -> Vector3<f64> {
        Vector3::new((i - self.cx) / self.fx, (j - self.cy) / self.fy, 1.0)
    }
}

impl Default for CameraIntrinsics {
    /// 640x480, 90 degree horizontal field of view.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

/// Camera extrinsics `[R | t]`: `rotation` maps world directions into the
/// camera frame and a world point is recovered as `R^-1 * p_cam - t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if orth <= 1e-9 && (det - 1.0).abs() <= 1e-9 && self.translation.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "pose rotation not orthonormal (|RtR-I|={orth:e}, det={det})"
            )))
        }
    }

    /// Level camera (zero pitch and roll) at `(x, camera_y, z)` looking along
    /// heading `yaw`, where yaw 0 faces +z and yaw pi/2 faces +x.
    /// Image rows grow downwards (-Y) and columns to the camera's right.
    pub fn from_agent(x: f64, z: f64, yaw: f64, camera_y: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let right = Vector3::new(-c, 0.0, s);
        let down = Vector3::new(0.0, -1.0, 0.0);
        let forward = Vector3::new(s, 0.0, c);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Pose {
            rotation,
            translation: -Vector3::new(x, camera_y, z),
        }
    }

    /// World position of the camera center.
    pub fn center(&self) -> Vector3<f64> {
        -self.translation
    }

    /// Camera-frame coordinates of a world point.
    #[inline]
    pub fn to_camera(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * (p.to_vector() + self.translation)
    }

    /// World coordinates of a camera-frame point.
    #[inline]
    pub fn to_world(&self, pc: &Vector3<f64>) -> WorldPoint {
        WorldPoint::from_vector(self.rotation.transpose() * pc - self.translation)
    }

    /// Pose whose unprojections equal this pose's unprojections followed by
    /// the rigid motion `m`.
    pub fn moved_by(&self, m: &RigidMotion) -> Pose {
        Pose {
            rotation: self.rotation * m.rotation.transpose(),
            translation: m.rotation * self.translation - m.translation,
        }
    }
}

/// World-frame rigid motion `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn apply(&self, p: &WorldPoint) -> WorldPoint {
        WorldPoint::from_vector(self.rotation * p.to_vector() + self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        WorldPoint { x, y, z }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        WorldPoint::new(v.x, v.y, v.z)
    }
}

/// Geometry of the top-down grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// World `x` of the corner of cell (0, 0).
    pub origin_x: f64,
    /// World `z` of the corner of cell (0, 0).
    pub origin_z: f64,
    /// Meters per cell side.
    pub resolution: f64,
    pub u_size: usize,
    pub v_size: usize,
}

/// Grid cell index `(u, v)`.
pub type Cell = (usize, usize);

impl GridSpec {
    pub fn new(origin_x: f64, origin_z: f64, resolution: f64, u_size: usize, v_size: usize) -> Result<Self> {
        if !(resolution > 0.0) || u_size == 0 || v_size == 0 {
            return Err(Error::Invalid(format!(
                "grid resolution {resolution} size {u_size}x{v_size}"
            )));
        }
        Ok(GridSpec {
            origin_x,
            origin_z,
            resolution,
            u_size,
            v_size,
        })
    }

    /// Smallest grid at `resolution` whose cells cover `[xmin, xmax] x [zmin, zmax]`.
    pub fn covering(xmin: f64, zmin: f64, xmax: f64, zmax: f64, resolution: f64) -> Result<Self> {
        let u = ((xmax - xmin) / resolution - 1e-9).ceil().max(1.0) as usize;
        let v = ((zmax - zmin) / resolution - 1e-9).ceil().max(1.0) as usize;
        Self::new(xmin, zmin, resolution, u, v)
    }

    pub fn len(&self) -> usize {
        self.u_size * self.v_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index of a cell (rows are `v`).
    #[inline]
    pub fn index(&self, (u, v): Cell) -> usize {
        v * self.u_size + u
    }

    #[inline]
    pub fn cell_of_index(&self, idx: usize) -> Cell {
        (idx % self.u_size, idx / self.u_size)
    }

    /// Unbounded floor-division cell coordinates of a floor position.
    #[inline]
    pub fn cell_coords(&self, x: f64, z: f64) -> (i64, i64) {
        (
            ((x - self.origin_x) / self.resolution).floor() as i64,
            ((z - self.origin_z) / self.resolution).floor() as i64,
        )
    }

    #[inline]
    pub fn checked_cell(&self, u: i64, v: i64) -> Option<Cell> {
        if u >= 0 && v >= 0 && (u as usize) < self.u_size && (v as usize) < self.v_size {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// World `(x, z)` of a cell's center.
    #[inline]
    pub fn cell_center(&self, (u, v): Cell) -> (f64, f64) {
        (
            self.origin_x + (u as f64 + 0.5) * self.resolution,
            self.origin_z + (v as f64 + 0.5) * self.resolution,
        )
    }

    pub fn same_geometry(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Back-projects pixel `(i, j)` at planar depth `d` to the world.
pub fn unproject_pixel(k: &CameraIntrinsics, pose: &Pose, i: f64, j: f64, d: f64) -> Result<WorldPoint> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDepth(d));
    }
    if !(i >= 0.0 && j >= 0.0 && i < k.width as f64 && j < k.height as f64) {
        return Err(Error::PixelOutOfBounds {
            i,
            j,
            width: k.width,
            height: k.height,
        });
    }
    Ok(pose.to_world(&(k.ray(i, j) * d)))
}

/// Projects a world point to `(i, j, d)`; the pixel may fall outside the image.
pub fn project_point(k: &CameraIntrinsics, pose: &Pose, p: &WorldPoint) -> Result<(f64, f64, f64)> {
    let pc = pose.to_camera(p);
    if !(pc.z > 0.0) {
        return Err(Error::BehindCamera(pc.z));
    }
    Ok((k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy, pc.z))
}

pub fn world_to_cell(g: &GridSpec, p: &WorldPoint) -> Result<Cell> {
    let (u, v) = g.cell_coords(p.x, p.z);
    g.checked_cell(u, v).ok_or(Error::CellOutOfGrid {
        u,
        v,
        u_size: g.u_size,
        v_size: g.v_size,
    })
}

/// Cells receiving at least one valid, below-ceiling projected pixel.
pub fn frame_footprint(
    k: &CameraIntrinsics,
    pose: &Pose,
    depth: &Raster<f64>,
    camera_y: f64,
    g: &GridSpec,
) -> BTreeSet<Cell> {
    let mut cells = BTreeSet::new();
    for j in 0..depth.height {
        for i in 0..depth.width {
            let d = depth.get(i, j);
            if !(d > 0.0) {
                continue;
            }
            let p = pose.to_world(&(k.ray(i as f64, j as f64) * d));
            if p.y > camera_y + CEILING_MARGIN {
                continue;
            }
            if let Ok(c) = world_to_cell(g, &p) {
                cells.insert(c);
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 4,
            height: 4,
        }
    }

    fn k2() -> CameraIntrinsics {
        CameraIntrinsics::new(2.0, 2.0, 1.0, 1.0, 8, 8).unwrap()
    }

    fn rot(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    #[test]
    fn unproject_identity_examples() {
        let p = unproject_pixel(&unit_k(), &Pose::identity(), 0.0, 0.0, 2.0).unwrap();
        assert_eq!(p, WorldPoint::new(0.0, 0.0, 2.0));

        let shifted = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let p = unproject_pixel(&unit_k(), &shifted, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(p, WorldPoint::new(-1.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_matches_explicit_matrix_product() {
        // d * K^-1 [i j 1]^T computed with a generic 3x3 inverse.
        let k = k2();
        let kinv = k.matrix().try_inverse().unwrap();
        let expected = kinv * Vector3::new(3.0, 1.0, 1.0) * 4.0;
        assert_relative_eq!(expected, Vector3::new(4.0, 0.0, 4.0), epsilon = 1e-12);
        let p = unproject_pixel(&k, &Pose::identity(), 3.0, 1.0, 4.0).unwrap();
        assert_relative_eq!(p.to_vector(), expected, epsilon = 1e-12);
    }

    #[test]
    fn unproject_errors() {
        let k = unit_k();
        assert!(matches!(
            unproject_pixel(&k, &Pose::identity(), 0.0, 0.0, 0.0),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(matches!(
            unproject_pixel(&k, &Pose::identity(), 4.0, 0.0, 1.0),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn project_examples() {
        let k = unit_k();
        let (i, j, d) = project_point(&k, &Pose::identity(), &WorldPoint::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((i, j, d), (0.0, 0.0, 2.0));
        assert!(matches!(
            project_point(&k, &Pose::identity(), &WorldPoint::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        let (i, j, d) = project_point(&k2(), &Pose::identity(), &WorldPoint::new(4.0, 0.0, 4.0)).unwrap();
        assert_relative_eq!(i, 3.0);
        assert_relative_eq!(j, 1.0);
        assert_relative_eq!(d, 4.0);
    }

    #[test]
    fn world_to_cell_examples() {
        let g = GridSpec::new(0.0, 0.0, 0.02, 100, 100).unwrap();
        assert_eq!(world_to_cell(&g, &WorldPoint::new(0.05, 1.0, 0.03)).unwrap(), (2, 1));
        assert_eq!(world_to_cell(&g, &WorldPoint::new(0.04, 0.0, 0.0)).unwrap(), (2, 0));
        assert!(matches!(
            world_to_cell(&g, &WorldPoint::new(-0.01, 0.0, 0.0)),
            Err(Error::CellOutOfGrid { .. })
        ));
    }

    #[test]
    fn agent_pose_is_valid_and_looks_forward() {
        let pose = Pose::from_agent(1.0, 2.0, 0.3, 1.25);
        pose.validate().unwrap();
        let k = CameraIntrinsics::default();
        let p = unproject_pixel(&k, &pose, k.cx, k.cy, 2.0).unwrap();
        assert_relative_eq!(p.x, 1.0 + 2.0 * 0.3f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(p.z, 2.0 + 2.0 * 0.3f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(p.y, 1.25, epsilon = 1e-12);
        // lower rows look down
        let below = unproject_pixel(&k, &pose, k.cx, k.height as f64 - 1.0, 2.0).unwrap();
        assert!(below.y < 1.25);
    }

    #[test]
    fn footprint_empty_and_single() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 3, 2).unwrap();
        let g = GridSpec::new(-1.0, -1.0, 0.5, 20, 20).unwrap();
        let mut depth = Raster::new(3, 2, 0.0);
        assert!(frame_footprint(&k, &Pose::identity(), &depth, 0.0, &g).is_empty());
        // pixel (0,0) at depth 2 lands at world (0, 0, 2) -> cell (2, 6)
        depth.set(0, 0, 2.0);
        let cells = frame_footprint(&k, &Pose::identity(), &depth, 0.0, &g);
        assert_eq!(cells.into_iter().collect::<Vec<_>>(), vec![(2, 6)]);
    }

    #[test]
    fn footprint_over_floor_matches_per_pixel_oracle() {
        let k = CameraIntrinsics::from_hfov(40, 30, 90.0).unwrap();
        let pose = Pose::from_agent(1.0, 0.5, 0.4, 1.0);
        let g = GridSpec::new(0.0, 0.0, 0.05, 80, 80).unwrap();
        // planar depth of the floor plane y=0 for every downward pixel
        let mut depth = Raster::new(k.width, k.height, 0.0);
        for j in 0..k.height {
            for i in 0..k.width {
                let dir = pose.rotation.transpose() * k.ray(i as f64, j as f64);
                if dir.y < 0.0 {
                    depth.set(i, j, 1.0 / -dir.y);
                }
            }
        }
        let fast = frame_footprint(&k, &pose, &depth, 1.0, &g);
        let mut oracle = BTreeSet::new();
        for j in 0..k.height {
            for i in 0..k.width {
                let d = depth.get(i, j);
                if d <= 0.0 {
                    continue;
                }
                let p = unproject_pixel(&k, &pose, i as f64, j as f64, d).unwrap();
                let u = ((p.x - g.origin_x) / g.resolution).floor();
                let v = ((p.z - g.origin_z) / g.resolution).floor();
                if u >= 0.0 && v >= 0.0 && u < 80.0 && v < 80.0 {
                    oracle.insert((u as usize, v as usize));
                }
            }
        }
        assert!(!oracle.is_empty());
        assert_eq!(fast, oracle);
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(
            i in 0.0f64..640.0, j in 0.0f64..480.0, d in 0.05f64..20.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in -3.1f64..3.1,
            tx in -10.0f64..10.0, ty in -10.0f64..10.0, tz in -10.0f64..10.0,
        ) {
            prop_assume!(ax * ax + ay * ay + az * az > 1e-3);
            let k = CameraIntrinsics::default();
            let pose = Pose::new(rot(Vector3::new(ax, ay, az), angle), Vector3::new(tx, ty, tz)).unwrap();
            let p = unproject_pixel(&k, &pose, i, j, d).unwrap();
            let (i2, j2, d2) = project_point(&k, &pose, &p).unwrap();
            prop_assert!((i2 - i).abs() <= 1e-9 * i.abs().max(1.0));
            prop_assert!((j2 - j).abs() <= 1e-9 * j.abs().max(1.0));
            prop_assert!((d2 - d).abs() <= 1e-9 * d);
        }

        #[test]
        fn pose_composition(
            i in 0.0f64..640.0, j in 0.0f64..480.0, d in 0.05f64..20.0,
            a1 in -3.1f64..3.1, a2 in -3.1f64..3.1,
            tx in -5.0f64..5.0, sz in -5.0f64..5.0,
        ) {
            let k = CameraIntrinsics::default();
            let pose = Pose::new(rot(Vector3::new(0.2, 1.0, -0.3), a1), Vector3::new(tx, 0.5, 1.0)).unwrap();
            let m = RigidMotion { rotation: rot(Vector3::new(1.0, 0.1, 0.4), a2), translation: Vector3::new(0.3, -1.0, sz) };
            let moved = m.apply(&unproject_pixel(&k, &pose, i, j, d).unwrap());
            let composed = unproject_pixel(&k, &pose.moved_by(&m), i, j, d).unwrap();
            prop_assert!((moved.to_vector() - composed.to_vector()).norm() <= 1e-9 * moved.to_vector().norm().max(1.0));
        }

        #[test]
        fn world_to_cell_translation_covariant(
            x in 0.0f64..4.0, z in 0.0f64..4.0, dx in -3.0f64..3.0, dz in -3.0f64..3.0,
        ) {
            // shifts by whole multiples of a power-of-two resolution are exact
            let res = 0.03125;
            let dx = (dx / res).round() * res;
            let dz = (dz / res).round() * res;
            let g = GridSpec::new(0.0, 0.0, res, 200, 200).unwrap();
            let g2 = GridSpec::new(dx, dz, res, 200, 200).unwrap();
            let a = world_to_cell(&g, &WorldPoint::new(x, 0.0, z)).unwrap();
            let b = world_to_cell(&g2, &WorldPoint::new(x + dx, 0.0, z + dz)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
