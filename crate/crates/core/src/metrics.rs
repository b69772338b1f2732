//! Segmentation metrics on observed cells, scene-level bootstrap errors and
//! navigation scores.

use crate::error::{Error, Result};
use crate::imgproc::{morphology, BinaryRaster, MorphOp, Raster};
use crate::nav::EpisodeResult;
use crate::rng::Rng;
use crate::{SemanticMap, CLASS_NAMES, NUM_CLASSES};

pub const DEFAULT_BF1_TOLERANCE: usize = 3;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMatcher {
    /// Membership in the tolerance-dilated boundary of the other map.
    Dilation,
    /// All-pairs Chebyshev distances.
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegOptions {
    /// Chebyshev tolerance in cells.
    pub bf1_tolerance: usize,
    pub include_void_in_acc: bool,
    /// Classes predicted but absent from GT add a zero to mPrecision.
    pub penalize_hallucinated: bool,
    pub matcher: BoundaryMatcher,
}

impl Default for SegOptions {
    fn default() -> Self {
        SegOptions {
            bf1_tolerance: DEFAULT_BF1_TOLERANCE,
            include_void_in_acc: true,
            penalize_hallucinated: true,
            matcher: BoundaryMatcher::Dilation,
        }
    }
}

/// Scores of one object class. Ratios with an empty denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub class_id: u8,
    pub in_gt: bool,
    pub in_pred: bool,
    pub recall: f64,
    pub precision: f64,
    pub iou: f64,
    pub bf1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub acc: f64,
    /// Classes 1..=12 in order.
    pub per_class: Vec<ClassScores>,
    pub m_recall: f64,
    pub m_precision: f64,
    pub m_iou: f64,
    pub m_bf1: f64,
}

impl SegReport {
    /// `(name, value)` of the headline metrics.
    pub fn headline(&self) -> [(&'static str, f64); 5] {
        [
            ("acc", self.acc),
            ("mRecall", self.m_recall),
            ("mPrecision", self.m_precision),
            ("mIoU", self.m_iou),
            ("mBF1", self.m_bf1),
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean of `xs`; an empty set scores 1 (nothing to get wrong).
fn mean_or_one(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        1.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Cells of `class` inside `mask` that have an in-mask 4-neighbor of
/// another class.
pub fn class_boundary(labels: &Raster<u8>, mask: &BinaryRaster, class: u8) -> BinaryRaster {
    let (w, h) = (labels.width, labels.height);
    let mut out = Raster::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.data[i] || labels.data[i] != class {
                continue;
            }
            let differs = |xx: i64, yy: i64| {
                if !labels.in_bounds(xx, yy) {
                    return false;
                }
                let j = yy as usize * w + xx as usize;
                mask.data[j] && labels.data[j] != class
            };
            let (xi, yi) = (x as i64, y as i64);
            out.data[i] = differs(xi - 1, yi) || differs(xi + 1, yi) || differs(xi, yi - 1) || differs(xi, yi + 1);
        }
    }
    out
}

/// Number of set cells of `a` within Chebyshev distance `theta` of a set cell of `b`.
fn matched(a: &BinaryRaster, b: &BinaryRaster, theta: usize, matcher: BoundaryMatcher) -> usize {
    match matcher {
        BoundaryMatcher::Dilation => {
            let near = morphology(b, MorphOp::Dilate, 2 * theta + 1);
            a.data.iter().zip(&near.data).filter(|(&x, &n)| x && n).count()
        }
        BoundaryMatcher::BruteForce => {
            let cells = |r: &BinaryRaster| -> Vec<(i64, i64)> {
                (0..r.data.len())
                    .filter(|&i| r.data[i])
                    .map(|i| ((i % r.width) as i64, (i / r.width) as i64))
                    .collect()
            };
            let bs = cells(b);
            cells(a)
                .into_iter()
                .filter(|&(x, y)| {
                    bs.iter()
                        .any(|&(bx, by)| (x - bx).abs().max((y - by).abs()) <= theta as i64)
                })
                .count()
        }
    }
}

/// Boundary F1 of one class: 1 when neither map has a boundary, 0 when only
/// one does.
pub fn boundary_f1(
    pred: &Raster<u8>,
    gt: &Raster<u8>,
    mask: &BinaryRaster,
    class: u8,
    theta: usize,
    matcher: BoundaryMatcher,
) -> f64 {
    let bp = class_boundary(pred, mask, class);
    let bg = class_boundary(gt, mask, class);
    let (np, ng) = (bp.count(), bg.count());
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let p = matched(&bp, &bg, theta, matcher) as f64 / np as f64;
    let r = matched(&bg, &bp, theta, matcher) as f64 / ng as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn eval_segmentation(
    pred: &SemanticMap,
    gt: &SemanticMap,
    mask: &BinaryRaster,
    opts: &SegOptions,
) -> Result<SegReport> {
    pred.grid.ensure_same(&gt.grid)?;
    if !pred.labels.same_dims(mask) {
        return Err(Error::GridMismatch(format!(
            "mask {}x{} vs grid {}x{}",
            mask.width, mask.height, pred.grid.u_size, pred.grid.v_size
        )));
    }
    // confusion[gt][pred] over masked cells
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for i in 0..mask.data.len() {
        if mask.data[i] {
            confusion[gt.labels.data[i] as usize][pred.labels.data[i] as usize] += 1;
        }
    }
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::EmptyObservation);
    }
    let first = usize::from(!opts.include_void_in_acc);
    let correct: usize = (first..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let considered: usize = confusion[first..].iter().flatten().sum();
    let acc = if considered == 0 { 1.0 } else { correct as f64 / considered as f64 };

    let mut per_class = Vec::with_capacity(NUM_CLASSES - 1);
    for c in 1..NUM_CLASSES {
        let tp = confusion[c][c];
        let gt_n: usize = confusion[c].iter().sum();
        let pred_n: usize = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
        let (in_gt, in_pred) = (gt_n > 0, pred_n > 0);
        let bf1 = if in_gt || in_pred {
            boundary_f1(&pred.labels, &gt.labels, mask, c as u8, opts.bf1_tolerance, opts.matcher)
        } else {
            1.0
        };
        per_class.push(ClassScores {
            class_id: c as u8,
            in_gt,
            in_pred,
            recall: ratio(tp, gt_n),
            precision: ratio(tp, pred_n),
            iou: ratio(tp, gt_n + pred_n - tp),
            bf1,
        });
    }
    let present: Vec<&ClassScores> = per_class.iter().filter(|s| s.in_gt).collect();
    let pick = |f: fn(&ClassScores) -> f64| -> Vec<f64> { present.iter().map(|s| f(s)).collect() };
    let mut precisions = pick(|s| s.precision);
    if opts.penalize_hallucinated {
        precisions.extend(per_class.iter().filter(|s| s.in_pred && !s.in_gt).map(|_| 0.0));
    }
    Ok(SegReport {
        acc,
        m_recall: mean_or_one(&pick(|s| s.recall)),
        m_precision: mean_or_one(&precisions),
        m_iou: mean_or_one(&pick(|s| s.iou)),
        m_bf1: mean_or_one(&pick(|s| s.bf1)),
        per_class,
    })
}

/// Standard deviation of the per-metric means over `resamples` scene-level
/// bootstrap resamples. Each inner vector holds one scene's metrics.
pub fn bootstrap_se(per_scene: &[Vec<f64>], resamples: usize, seed: u64) -> Result<Vec<f64>> {
    let n = per_scene.len();
    if n == 0 || resamples == 0 {
        return Err(Error::EmptyInput);
    }
    let m = per_scene[0].len();
    if let Some(bad) = per_scene.iter().find(|s| s.len() != m) {
        return Err(Error::LengthMismatch(bad.len(), m));
    }
    let mut rng = Rng::new(seed);
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for _ in 0..resamples {
        let mut acc = vec![0.0; m];
        for _ in 0..n {
            let s = &per_scene[rng.below(n as u64) as usize];
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
        for k in 0..m {
            let mean = acc[k] / n as f64;
            sum[k] += mean;
            sum_sq[k] += mean * mean;
        }
    }
    let b = resamples as f64;
    Ok((0..m)
        .map(|k| {
            let mean = sum[k] / b;
            (sum_sq[k] / b - mean * mean).max(0.0).sqrt()
        })
        .collect())
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub se: f64,
    /// Scenes the value is averaged over.
    pub n: usize,
}

/// Scene-averaged metrics with bootstrap errors. Per-class IoU rows average
/// over the scenes in which the class occurs in GT.
pub fn summarize_reports(reports: &[SegReport], resamples: usize, seed: u64) -> Result<Vec<MetricRow>> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::new();
    let per_scene: Vec<Vec<f64>> = reports.iter().map(|r| r.headline().iter().map(|h| h.1).collect()).collect();
    let se = bootstrap_se(&per_scene, resamples, seed)?;
    for (k, (name, _)) in reports[0].headline().iter().enumerate() {
        let mean = per_scene.iter().map(|s| s[k]).sum::<f64>() / reports.len() as f64;
        rows.push(MetricRow {
            name: name.to_string(),
            value: mean,
            se: se[k],
            n: reports.len(),
        });
    }
    for c in 1..NUM_CLASSES {
        let values: Vec<Vec<f64>> = reports
            .iter()
            .filter_map(|r| r.per_class.iter().find(|s| s.class_id as usize == c && s.in_gt))
            .map(|s| vec![s.iou])
            .collect();
        if values.is_empty() {
            continue;
        }
        let se = bootstrap_se(&values, resamples, seed)?[0];
        rows.push(MetricRow {
            name: format!("iou.{}", CLASS_NAMES[c]),
            value: values.iter().map(|v| v[0]).sum::<f64>() / values.len() as f64,
            se,
            n: values.len(),
        });
    }
    Ok(rows)
}

/// Human-readable block: `metric = value ± se`.
pub fn format_report(rows: &[MetricRow]) -> String {
    rows.iter()
        .map(|r| format!("{} = {:.4} ± {:.4}\n", r.name, r.value, r.se))
        .collect()
}

/// Machine-readable lines: `metric<TAB>value<TAB>se<TAB>n`.
pub fn format_tsv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric\tvalue\tse\tn\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.6}\t{:.6}\t{}\n", r.name, r.value, r.se, r.n));
    }
    s
}

/// Path-efficiency ratio `l / max(p, l)`; 1 when both are zero.
fn efficiency(r: &EpisodeResult) -> f64 {
    if !r.oracle_length.is_finite() {
        return 0.0;
    }
    let den = r.path_length.max(r.oracle_length);
    if den == 0.0 {
        1.0
    } else {
        r.oracle_length / den
    }
}

pub fn spl(r: &EpisodeResult) -> f64 {
    if r.success {
        efficiency(r)
    } else {
        0.0
    }
}

pub fn soft_spl(r: &EpisodeResult) -> f64 {
    let progress = if !r.initial_distance.is_finite() {
        0.0
    } else if r.initial_distance == 0.0 {
        if r.final_distance == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - r.final_distance / r.initial_distance
    };
    (progress.clamp(0.0, 1.0) * efficiency(r)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub spl: f64,
    pub soft_spl: f64,
    /// Mean over episodes whose final distance is finite.
    pub mean_dist_to_goal: f64,
}

pub fn eval_navigation(results: &[EpisodeResult]) -> NavSummary {
    let n = results.len().max(1) as f64;
    let finite: Vec<f64> = results
        .iter()
        .map(|r| r.final_distance)
        .filter(|d| d.is_finite())
        .collect();
    NavSummary {
        episodes: results.len(),
        success_rate: results.iter().filter(|r| r.success).count() as f64 / n,
        spl: results.iter().map(spl).sum::<f64>() / n,
        soft_spl: results.iter().map(soft_spl).sum::<f64>() / n,
        mean_dist_to_goal: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> SemanticMap {
        let grid = GridSpec::new(0.0, 0.0, 0.02, w, h).unwrap();
        let mut m = SemanticMap::void(grid);
        for y in 0..h {
            for x in 0..w {
                m.labels.set(x, y, f(x, y));
            }
        }
        m
    }

    fn full(w: usize, h: usize) -> BinaryRaster {
        Raster::new(w, h, true)
    }

    fn class(r: &SegReport, c: u8) -> ClassScores {
        r.per_class[c as usize - 1]
    }

    #[test]
    fn identity_scores_one() {
        let m = map(20, 20, |x, y| ((x / 7 + y / 5) % 4) as u8);
        let r = eval_segmentation(&m, &m, &full(20, 20), &SegOptions::default()).unwrap();
        assert_eq!((r.acc, r.m_iou, r.m_bf1, r.m_recall, r.m_precision), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn half_split_example() {
        let gt = map(20, 10, |x, _| if x < 10 { 1 } else { 2 });
        let pred = map(20, 10, |_, _| 1);
        let r = eval_segmentation(&pred, &gt, &full(20, 10), &SegOptions::default()).unwrap();
        assert_eq!(class(&r, 1).iou, 0.5);
        assert_eq!(class(&r, 2).iou, 0.0);
        assert_eq!(r.m_iou, 0.25);
        assert_eq!(r.acc, 0.5);
    }

    #[test]
    fn void_accuracy_flag() {
        let gt = map(4, 1, |x, _| [0, 0, 3, 3][x]);
        let pred = map(4, 1, |x, _| [0, 0, 3, 0][x]);
        let mut o = SegOptions::default();
        assert_eq!(eval_segmentation(&pred, &gt, &full(4, 1), &o).unwrap().acc, 0.75);
        o.include_void_in_acc = false;
        assert_eq!(eval_segmentation(&pred, &gt, &full(4, 1), &o).unwrap().acc, 0.5);
    }

    #[test]
    fn hallucinated_class_only_hits_precision() {
        let gt = map(6, 6, |x, _| if x < 3 { 1 } else { 0 });
        let pred = map(6, 6, |x, y| if x < 3 { 1 } else if y == 0 { 5 } else { 0 });
        let mut o = SegOptions::default();
        let r = eval_segmentation(&pred, &gt, &full(6, 6), &o).unwrap();
        assert_eq!((r.m_iou, r.m_recall, r.m_precision), (1.0, 1.0, 0.5));
        o.penalize_hallucinated = false;
        assert_eq!(eval_segmentation(&pred, &gt, &full(6, 6), &o).unwrap().m_precision, 1.0);
    }

    #[test]
    fn bf1_shift_examples() {
        let gt = map(40, 20, |x, _| if (10..30).contains(&x) { 4 } else { 0 });
        for (shift, perfect) in [(1usize, true), (5, false)] {
            let pred = map(40, 20, |x, _| if (10 + shift..30 + shift).contains(&x) { 4 } else { 0 });
            for m in [BoundaryMatcher::Dilation, BoundaryMatcher::BruteForce] {
                let b = boundary_f1(&pred.labels, &gt.labels, &full(40, 20), 4, 3, m);
                assert_eq!(b == 1.0, perfect, "shift {shift}: {b}");
            }
        }
    }

    #[test]
    fn mask_limits_cells() {
        let gt = map(10, 10, |x, _| if x < 5 { 2 } else { 0 });
        let pred = map(10, 10, |x, y| if x < 5 || y > 7 { 2 } else { 0 });
        let mut mask = full(10, 10);
        for y in 8..10 {
            for x in 0..10 {
                mask.set(x, y, false);
            }
        }
        let r = eval_segmentation(&pred, &gt, &mask, &SegOptions::default()).unwrap();
        assert_eq!(r.acc, 1.0);
        assert_eq!(r.m_iou, 1.0);
    }

    #[test]
    fn grid_mismatch_and_empty_mask() {
        let a = map(4, 4, |_, _| 0);
        let b = map(5, 4, |_, _| 0);
        assert!(matches!(
            eval_segmentation(&a, &b, &full(4, 4), &SegOptions::default()),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            eval_segmentation(&a, &a, &Raster::new(4, 4, false), &SegOptions::default()),
            Err(Error::EmptyObservation)
        ));
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_se(&[vec![0.4], vec![0.4], vec![0.4]], 200, 1).unwrap(), vec![0.0]);
        // mean of two draws from {0, 1}: variance 1/4 / 2
        let se = bootstrap_se(&[vec![0.0], vec![1.0]], 10_000, 7).unwrap()[0];
        assert!((se - 0.125f64.sqrt()).abs() < 0.01, "{se}");
        let data = vec![vec![0.1, 0.5], vec![0.3, 0.2], vec![0.9, 0.4]];
        assert_eq!(bootstrap_se(&data, 100, 3).unwrap(), bootstrap_se(&data, 100, 3).unwrap());
        assert!(matches!(bootstrap_se(&[], 10, 0), Err(Error::EmptyInput)));
    }

    fn episode(success: bool, l: f64, p: f64, d0: f64, d: f64) -> EpisodeResult {
        EpisodeResult {
            id: 0,
            success,
            path: Vec::new(),
            path_length: p,
            oracle_length: l,
            initial_distance: d0,
            final_distance: d,
        }
    }

    #[test]
    fn spl_examples() {
        assert_relative_eq!(spl(&episode(true, 4.0, 5.0, 4.0, 0.5)), 0.8);
        assert_eq!(spl(&episode(false, 4.0, 5.0, 4.0, 2.0)), 0.0);
        assert_eq!(spl(&episode(true, 0.0, 0.0, 0.0, 0.0)), 1.0);
        assert_relative_eq!(soft_spl(&episode(false, 4.0, 4.0, 4.0, 1.0)), 0.75);
        assert_eq!(soft_spl(&episode(false, f64::INFINITY, 0.0, f64::INFINITY, f64::INFINITY)), 0.0);
        let s = eval_navigation(&[episode(true, 4.0, 5.0, 4.0, 0.0), episode(false, 3.0, 1.0, 3.0, 2.0)]);
        assert_relative_eq!(s.success_rate, 0.5);
        assert_relative_eq!(s.spl, 0.4);
        assert_relative_eq!(s.mean_dist_to_goal, 1.0);
    }

    fn labels_strategy(max: usize) -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>, Vec<bool>)> {
        (2..=max, 2..=max).prop_flat_map(|(w, h)| {
            let n = w * h;
            (
                Just(w),
                Just(h),
                proptest::collection::vec(0u8..4, n),
                proptest::collection::vec(0u8..4, n),
                proptest::collection::vec(proptest::bool::weighted(0.85), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn swap_symmetry((w, h, a, b, m) in labels_strategy(24)) {
            let pa = SemanticMap { grid: GridSpec::new(0.0, 0.0, 0.02, w, h).unwrap(), labels: Raster::from_vec(w, h, a).unwrap() };
            let pb = SemanticMap { grid: pa.grid, labels: Raster::from_vec(w, h, b).unwrap() };
            let mask = Raster::from_vec(w, h, m).unwrap();
            prop_assume!(mask.count() > 0);
            let o = SegOptions::default();
            let ab = eval_segmentation(&pa, &pb, &mask, &o).unwrap();
            let ba = eval_segmentation(&pb, &pa, &mask, &o).unwrap();
            for (x, y) in ab.per_class.iter().zip(&ba.per_class) {
                prop_assert_eq!(x.recall, y.precision);
                prop_assert_eq!(x.precision, y.recall);
                prop_assert_eq!(x.iou, y.iou);
                prop_assert_eq!(x.bf1, y.bf1);
                prop_assert!(x.iou <= x.recall && x.iou <= x.precision);
            }
            prop_assert_eq!(ab.acc, ba.acc);
        }

        #[test]
        fn fast_bf1_matches_brute_force((w, h, a, b, m) in labels_strategy(32), theta in 0usize..5) {
            let (a, b, m) = (Raster::from_vec(w, h, a).unwrap(), Raster::from_vec(w, h, b).unwrap(), Raster::from_vec(w, h, m).unwrap());
            for c in 1..4u8 {
                prop_assert_eq!(
                    boundary_f1(&a, &b, &m, c, theta, BoundaryMatcher::Dilation),
                    boundary_f1(&a, &b, &m, c, theta, BoundaryMatcher::BruteForce)
                );
            }
        }

        #[test]
        fn cells_outside_mask_are_ignored((w, h, a, b, m) in labels_strategy(20), junk in any::<u64>()) {
            let grid = GridSpec::new(0.0, 0.0, 0.02, w, h).unwrap();
            let pa = SemanticMap { grid, labels: Raster::from_vec(w, h, a).unwrap() };
            let pb = SemanticMap { grid, labels: Raster::from_vec(w, h, b).unwrap() };
            let mask = Raster::from_vec(w, h, m).unwrap();
            prop_assume!(mask.count() > 0);
            let mut rng = crate::rng::Rng::new(junk);
            let mut qa = pa.clone();
            let mut qb = pb.clone();
            for i in 0..w * h {
                if !mask.data[i] {
                    qa.labels.data[i] = rng.below(13) as u8;
                    qb.labels.data[i] = rng.below(13) as u8;
                }
            }
            let o = SegOptions::default();
            prop_assert_eq!(eval_segmentation(&pa, &pb, &mask, &o).unwrap(), eval_segmentation(&qa, &qb, &mask, &o).unwrap());
        }
    }
}
