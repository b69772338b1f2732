//! Raster primitives: categorical mode filter, square-element binary
//! morphology, connected components, nearest-neighbor downsampling and
//! grid line-of-sight.
//!
//! Rasters are row-major; `(x, y)` is (column, row). On top-down maps the
//! column is the grid `u` index and the row is `v`.

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Class ids, 0 = void.
pub type LabelRaster = Raster<u8>;
pub type BinaryRaster = Raster<bool>;

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Raster {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Invalid(format!(
                "raster {width}x{height} with {} elements",
                data.len()
            )));
        }
        Ok(Raster { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl BinaryRaster {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryRaster {
        self.map(|b| !b)
    }
}

/// Offsets `[lo, hi]` spanned by a window of side `k` anchored at index `k/2`.
#[inline]
fn window_offsets(k: usize) -> (i64, i64) {
    let lo = (k / 2) as i64;
    (-lo, k as i64 - 1 - lo)
}

/// Categorical "median": the window mode, ties to the smaller class id.
///
/// The `k x k` window is anchored at index `k/2` (so even `k` extends one cell
/// further before the center than after it) and clipped at the borders.
/// With `ignore_void`, void cells do not vote and an all-void window yields void.
pub fn median_filter(r: &LabelRaster, k: usize, ignore_void: bool) -> LabelRaster {
    let votes = r.map(|l| if ignore_void && l == 0 { 0 } else { l + 1 });
    window_mode(&votes, k).map(|m| m.saturating_sub(1))
}

/// Window mode counting only cells where `mask` is set; `None` where the
/// window holds no such cell. Same window and tie rule as [`median_filter`].
pub fn masked_mode_filter(r: &LabelRaster, mask: &BinaryRaster, k: usize) -> Raster<Option<u8>> {
    assert!(r.same_dims(mask), "mask dimensions differ");
    let mut votes = r.map(|l| l + 1);
    for (v, &m) in votes.data.iter_mut().zip(&mask.data) {
        if !m {
            *v = 0;
        }
    }
    window_mode(&votes, k).map(|m| m.checked_sub(1))
}

const BINS: usize = NUM_CLASSES + 1;

/// Mode over bins `1..`, bin 0 being "no vote"; returns 0 for an empty window.
fn window_mode(votes: &Raster<u8>, k: usize) -> Raster<u8> {
    assert!(k >= 1, "median window must be at least 1");
    let (lo, hi) = window_offsets(k);
    let mut out = votes.clone();
    // Column histograms of the current row band, slid along each row.
    for y in 0..votes.height {
        let y0 = (y as i64 + lo).max(0) as usize;
        let y1 = (y as i64 + hi).min(votes.height as i64 - 1) as usize;
        let mut cols = vec![[0u32; BINS]; votes.width];
        for (x, col) in cols.iter_mut().enumerate() {
            for yy in y0..=y1 {
                col[votes.get(x, yy) as usize] += 1;
            }
        }
        let mut hist = [0u32; BINS];
        let mut left = 0usize;
        let mut right = 0usize; // exclusive
        for x in 0..votes.width {
            let x0 = (x as i64 + lo).max(0) as usize;
            let x1 = (x as i64 + hi).min(votes.width as i64 - 1) as usize + 1;
            while right < x1 {
                add(&mut hist, &cols[right]);
                right += 1;
            }
            while left < x0 {
                sub(&mut hist, &cols[left]);
                left += 1;
            }
            out.set(x, y, mode(&hist));
        }
    }
    out
}

fn add(h: &mut [u32; BINS], c: &[u32; BINS]) {
    for (a, b) in h.iter_mut().zip(c) {
        *a += b;
    }
}

fn sub(h: &mut [u32; BINS], c: &[u32; BINS]) {
    for (a, b) in h.iter_mut().zip(c) {
        *a -= b;
    }
}

fn mode(hist: &[u32; BINS]) -> u8 {
    let mut best = 0usize;
    let mut best_count = 0u32;
    for (c, &n) in hist.iter().enumerate().skip(1) {
        if n > best_count {
            best = c;
            best_count = n;
        }
    }
    best as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

/// Binary morphology with a `side x side` square structuring element whose
/// origin sits at index `side/2` of each axis.
///
/// Erosion treats everything outside the raster as 0. Opening and closing are
/// evaluated on a canvas padded by `side` cells and cropped, so they equal the
/// operations on the zero-extended plane (and stay idempotent at the border).
pub fn morphology(r: &BinaryRaster, op: MorphOp, side: usize) -> BinaryRaster {
    assert!(side >= 1, "structuring element side must be at least 1");
    match op {
        MorphOp::Erode => erode(r, side),
        MorphOp::Dilate => dilate(r, side),
        MorphOp::Open => {
            let pad = pad(r, side);
            crop(&dilate(&erode(&pad, side), side), side, r.width, r.height)
        }
        MorphOp::Close => {
            let pad = pad(r, side);
            crop(&erode(&dilate(&pad, side), side), side, r.width, r.height)
        }
    }
}

/// Element offsets are `[lo, hi]`; erosion keeps `x` iff every `x + b` is set.
fn erode(r: &BinaryRaster, side: usize) -> BinaryRaster {
    let (lo, hi) = window_offsets(side);
    let rows = sweep_rows(r, lo, hi, true);
    sweep_cols(&rows, lo, hi, true)
}

/// Dilation sets `x` iff some `x - b` is set, i.e. the reflected window.
fn dilate(r: &BinaryRaster, side: usize) -> BinaryRaster {
    let (lo, hi) = window_offsets(side);
    let rows = sweep_rows(r, -hi, -lo, false);
    sweep_cols(&rows, -hi, -lo, false)
}

/// 1-D all/any over `[x+lo, x+hi]` along rows, outside = false.
fn sweep_rows(r: &BinaryRaster, lo: i64, hi: i64, all: bool) -> BinaryRaster {
    let mut out = Raster::new(r.width, r.height, false);
    for y in 0..r.height {
        let row = &r.data[y * r.width..(y + 1) * r.width];
        let res = window_1d(row, lo, hi, all);
        out.data[y * r.width..(y + 1) * r.width].copy_from_slice(&res);
    }
    out
}

fn sweep_cols(r: &BinaryRaster, lo: i64, hi: i64, all: bool) -> BinaryRaster {
    let mut out = Raster::new(r.width, r.height, false);
    let mut col = vec![false; r.height];
    for x in 0..r.width {
        for (y, c) in col.iter_mut().enumerate() {
            *c = r.get(x, y);
        }
        for (y, v) in window_1d(&col, lo, hi, all).into_iter().enumerate() {
            out.set(x, y, v);
        }
    }
    out
}

fn window_1d(line: &[bool], lo: i64, hi: i64, all: bool) -> Vec<bool> {
    let n = line.len() as i64;
    // prefix counts of set cells
    let mut prefix = vec![0u32; line.len() + 1];
    for (i, &b) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + u32::from(b);
    }
    (0..n)
        .map(|x| {
            let a = x + lo;
            let b = x + hi;
            let ca = a.clamp(0, n) as usize;
            let cb = (b + 1).clamp(0, n) as usize;
            let set = if cb > ca { prefix[cb] - prefix[ca] } else { 0 };
            if all {
                a >= 0 && b < n && set as i64 == hi - lo + 1
            } else {
                set > 0
            }
        })
        .collect()
}

fn pad(r: &BinaryRaster, p: usize) -> BinaryRaster {
    let mut out = Raster::new(r.width + 2 * p, r.height + 2 * p, false);
    for y in 0..r.height {
        for x in 0..r.width {
            out.set(x + p, y + p, r.get(x, y));
        }
    }
    out
}

fn crop(r: &BinaryRaster, p: usize, width: usize, height: usize) -> BinaryRaster {
    let mut out = Raster::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            out.set(x, y, r.get(x + p, y + p));
        }
    }
    out
}

/// Per-class erosion of a label image: a pixel keeps its label only if the
/// whole `side x side` window (origin at `side/2`) lies inside the image and
/// carries that same label; otherwise it becomes void.
pub fn erode_labels(r: &LabelRaster, side: usize) -> LabelRaster {
    let (lo, hi) = window_offsets(side);
    let need_before = (-lo) as u32;
    let need_after = hi as u32;
    let (w, h) = (r.width, r.height);
    // Horizontal pass: run lengths of equal labels to the left/right.
    let mut row_ok = vec![false; w * h];
    for y in 0..h {
        let row = &r.data[y * w..(y + 1) * w];
        let mut left = vec![0u32; w];
        for x in 0..w {
            left[x] = if x > 0 && row[x - 1] == row[x] { left[x - 1] + 1 } else { 0 };
        }
        let mut right = 0u32;
        for x in (0..w).rev() {
            right = if x + 1 < w && row[x + 1] == row[x] { right + 1 } else { 0 };
            row_ok[y * w + x] = left[x] >= need_before && right >= need_after;
        }
    }
    // Vertical pass over row-ok cells with equal labels.
    let mut out = Raster::new(w, h, 0u8);
    let same = |x: usize, y0: usize, y1: usize| row_ok[y1 * w + x] && r.get(x, y0) == r.get(x, y1);
    for x in 0..w {
        let mut up = vec![0u32; h];
        for y in 0..h {
            up[y] = if y > 0 && row_ok[y * w + x] && same(x, y, y - 1) { up[y - 1] + 1 } else { 0 };
        }
        let mut down = 0u32;
        for y in (0..h).rev() {
            down = if y + 1 < h && row_ok[y * w + x] && same(x, y, y + 1) { down + 1 } else { 0 };
            if row_ok[y * w + x] && up[y] >= need_before && down >= need_after {
                out.set(x, y, r.get(x, y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Two-pass union-find labeling. Labels are `1..=count`, numbered in order of
/// each component's first cell in row-major order; background is 0.
pub fn connected_components(r: &BinaryRaster, conn: Connectivity) -> (Raster<u32>, usize) {
    let (w, h) = (r.width, r.height);
    let mut provisional = Raster::new(w, h, 0u32);
    let mut parent: Vec<u32> = vec![0];

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    for y in 0..h {
        for x in 0..w {
            if !r.get(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |label: u32| {
                if label != 0 {
                    neighbors[n] = label;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional.get(x - 1, y));
            }
            if y > 0 {
                push(provisional.get(x, y - 1));
                if conn == Connectivity::Eight {
                    if x > 0 {
                        push(provisional.get(x - 1, y - 1));
                    }
                    if x + 1 < w {
                        push(provisional.get(x + 1, y - 1));
                    }
                }
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = find(&mut parent, neighbors[0]);
                for &other in &neighbors[1..n] {
                    let ro = find(&mut parent, other);
                    if ro != root {
                        let (a, b) = (root.min(ro), root.max(ro));
                        parent[b as usize] = a;
                        root = a;
                    }
                }
                root
            };
            provisional.set(x, y, label);
        }
    }

    let mut final_label = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut out = Raster::new(w, h, 0u32);
    for i in 0..w * h {
        let p = provisional.data[i];
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_label[root] == 0 {
            count += 1;
            final_label[root] = count;
        }
        out.data[i] = final_label[root];
    }
    (out, count as usize)
}

/// Keeps the top-left sample of every `factor x factor` block.
pub fn downsample_nn<T: Copy>(r: &Raster<T>, factor: usize) -> Result<Raster<T>> {
    if factor == 0 || r.width % factor != 0 || r.height % factor != 0 {
        return Err(Error::DimsNotDivisible {
            width: r.width,
            height: r.height,
            factor,
        });
    }
    let (w, h) = (r.width / factor, r.height / factor);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(r.get(x * factor, y * factor));
        }
    }
    Ok(Raster { width: w, height: h, data })
}

/// Cells on the Bresenham line from `a` to `b`, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cells = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        cells.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    cells
}

/// True iff every cell on the Bresenham line `a -> b` is set in `mask`.
pub fn line_of_sight(mask: &BinaryRaster, a: (usize, usize), b: (usize, usize)) -> Result<bool> {
    for &(x, y) in &[a, b] {
        if x >= mask.width || y >= mask.height {
            return Err(Error::CellOutOfGrid {
                u: x as i64,
                v: y as i64,
                u_size: mask.width,
                v_size: mask.height,
            });
        }
    }
    Ok(bresenham((a.0 as i64, a.1 as i64), (b.0 as i64, b.1 as i64))
        .into_iter()
        .all(|(x, y)| mask.get(x as usize, y as usize)))
}
