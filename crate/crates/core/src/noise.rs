//! Egocentric segmentation error model.
//!
//! Pixels near a label boundary take a neighboring region's label with some
//! probability, which produces the characteristic splatter around objects
//! once frames are projected. A small uniform flip rate models background
//! misclassification. Draws are keyed by (seed, frame index, pixel) so the
//! result does not depend on evaluation order.

use crate::imgproc::Raster;
use crate::rng::{mix_key, KeyedStream};
use crate::scene::EgoFrame;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Chebyshev radius (pixels) of the boundary band.
    pub boundary_band: usize,
    pub boundary_flip_prob: f64,
    pub uniform_flip_prob: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            boundary_band: 0,
            boundary_flip_prob: 0.0,
            uniform_flip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.boundary_flip_prob == 0.0 && self.uniform_flip_prob == 0.0
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            boundary_band: 2,
            boundary_flip_prob: 0.3,
            uniform_flip_prob: 0.01,
            seed: 0,
        }
    }
}

/// Sliding min and max over a `(2r+1)`-wide window along rows then columns.
fn window_min_max(labels: &Raster<u8>, r: usize) -> (Vec<u8>, Vec<u8>) {
    let (w, h) = (labels.width, labels.height);
    let mut row_min = vec![0u8; w * h];
    let mut row_max = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut lo, mut hi) = (u8::MAX, 0u8);
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                let v = labels.data[y * w + xx];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            row_min[y * w + x] = lo;
            row_max[y * w + x] = hi;
        }
    }
    let mut min = vec![0u8; w * h];
    let mut max = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut lo, mut hi) = (u8::MAX, 0u8);
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                lo = lo.min(row_min[yy * w + x]);
                hi = hi.max(row_max[yy * w + x]);
            }
            min[y * w + x] = lo;
            max[y * w + x] = hi;
        }
    }
    (min, max)
}

/// Returns a copy of `frame` with corrupted labels. Only pixels with a depth
/// return are touched, so void stays void where there is no depth.
pub fn corrupt_labels(frame: &EgoFrame, nm: &NoiseModel) -> EgoFrame {
    let mut out = frame.clone();
    if nm.is_noiseless() {
        return out;
    }
    let labels = &frame.labels;
    let (w, h) = (labels.width, labels.height);
    let r = nm.boundary_band;
    let (min, max) = window_min_max(labels, r);
    let frame_key = mix_key(nm.seed, frame.index, 0x5EED);

    let corrupt_row = |y: usize, row: &mut [u8]| {
        for x in 0..w {
            let p = y * w + x;
            if !(frame.depth.data[p] > 0.0) {
                continue;
            }
            let mut stream = KeyedStream::new(mix_key(frame_key, p as u64, 0));
            let boundary_draw = stream.unit();
            let pick_draw = stream.unit();
            let uniform_draw = stream.unit();
            let uniform_class = stream.below(NUM_CLASSES as u64) as u8;
            let own = labels.data[p];
            if min[p] != max[p] && boundary_draw < nm.boundary_flip_prob {
                let mut present = [false; NUM_CLASSES];
                for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        present[labels.data[yy * w + xx] as usize] = true;
                    }
                }
                present[own as usize] = false;
                let others: Vec<u8> = (0..NUM_CLASSES as u8).filter(|&c| present[c as usize]).collect();
                let idx = ((pick_draw * others.len() as f64) as usize).min(others.len() - 1);
                row[x] = others[idx];
            }
            if uniform_draw < nm.uniform_flip_prob {
                row[x] = uniform_class;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use crate::par::*;
        out.labels
            .data
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| corrupt_row(y, row));
    }
    #[cfg(not(feature = "parallel"))]
    for (y, row) in out.labels.data.chunks_mut(w).enumerate() {
        corrupt_row(y, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};

    fn frame(w: usize, h: usize, label: impl Fn(usize, usize) -> u8) -> EgoFrame {
        let mut labels = Raster::new(w, h, 0u8);
        for y in 0..h {
            for x in 0..w {
                labels.set(x, y, label(x, y));
            }
        }
        EgoFrame {
            depth: Raster::new(w, h, 1.0),
            labels,
            instances: Raster::new(w, h, 0),
            intrinsics: CameraIntrinsics::from_hfov(w, h, 90.0).unwrap(),
            pose: Pose::identity(),
            camera_y: 1.0,
            index: 3,
        }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let f = frame(32, 24, |x, y| ((x / 5 + y / 7) % 4) as u8);
        let nm = NoiseModel {
            boundary_flip_prob: 0.0,
            uniform_flip_prob: 0.0,
            ..Default::default()
        };
        assert_eq!(corrupt_labels(&f, &nm), f);
    }

    #[test]
    fn constant_frame_has_no_boundaries() {
        let f = frame(32, 24, |_, _| 5);
        let nm = NoiseModel {
            boundary_flip_prob: 1.0,
            uniform_flip_prob: 0.0,
            ..Default::default()
        };
        assert_eq!(corrupt_labels(&f, &nm), f);
    }

    #[test]
    fn boundary_flips_stay_in_band_and_use_neighbor_labels() {
        let f = frame(40, 10, |x, _| if x < 20 { 2 } else { 7 });
        let nm = NoiseModel {
            boundary_band: 2,
            boundary_flip_prob: 1.0,
            uniform_flip_prob: 0.0,
            seed: 1,
        };
        let c = corrupt_labels(&f, &nm);
        for y in 0..10 {
            for x in 0..40 {
                let expected = if (18..22).contains(&x) {
                    if x < 20 { 7 } else { 2 }
                } else {
                    f.labels.get(x, y)
                };
                assert_eq!(c.labels.get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn uniform_flip_rate() {
        let f = frame(1000, 1000, |_, _| 4);
        let nm = NoiseModel {
            boundary_band: 2,
            boundary_flip_prob: 0.0,
            uniform_flip_prob: 0.1,
            seed: 77,
        };
        let c = corrupt_labels(&f, &nm);
        let flipped = c.labels.data.iter().filter(|&&l| l != 4).count() as f64 / 1e6;
        let expected = 0.1 * 12.0 / 13.0;
        assert!((flipped - expected).abs() < 0.001, "flip fraction {flipped}");
    }

    #[test]
    fn deterministic_and_frame_keyed() {
        let mut f = frame(64, 48, |x, y| ((x / 9 + y / 5) % 3) as u8);
        let nm = NoiseModel::default();
        assert_eq!(corrupt_labels(&f, &nm), corrupt_labels(&f, &nm));
        let a = corrupt_labels(&f, &nm);
        f.index += 1;
        assert_ne!(corrupt_labels(&f, &nm).labels, a.labels);
    }

    #[test]
    fn invalid_depth_untouched() {
        let mut f = frame(16, 16, |x, _| (x % 2) as u8);
        for v in f.depth.data.iter_mut() {
            *v = 0.0;
        }
        for v in f.labels.data.iter_mut() {
            *v = 0;
        }
        let nm = NoiseModel {
            uniform_flip_prob: 1.0,
            ..Default::default()
        };
        assert_eq!(corrupt_labels(&f, &nm), f);
    }
}
