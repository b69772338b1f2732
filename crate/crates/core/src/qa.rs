//! Counting questions answered from top-down maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imgproc::{connected_components, Connectivity, Raster};
use crate::{SemanticMap, NUM_CLASSES};

/// Answers are 0..=19 plus this bucket, read as "20 or more".
pub const ANSWER_CAP: u8 = 20;
pub const DEFAULT_MIN_AREA: usize = 25;
/// 5 m at 2 cm cells.
pub const DEFAULT_WINDOW_CELLS: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountQuestion {
    pub id: u32,
    pub target: u8,
}

impl CountQuestion {
    pub fn new(id: u32, target: u8) -> Result<Self> {
        if target == 0 || target as usize >= NUM_CLASSES {
            return Err(Error::Invalid(format!("question target class {target} not in 1..=12")));
        }
        Ok(CountQuestion { id, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Components over the whole map.
    Global,
    /// Sum of per-tile counts over square tiles placed every `stride` cells.
    SlidingWindow { window: usize, stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountParams {
    pub connectivity: Connectivity,
    pub min_area: usize,
    pub mode: CountMode,
}

impl Default for CountParams {
    fn default() -> Self {
        CountParams {
            connectivity: Connectivity::Eight,
            min_area: DEFAULT_MIN_AREA,
            mode: CountMode::Global,
        }
    }
}

fn count_components(mask: &Raster<bool>, params: &CountParams) -> usize {
    let (labels, n) = connected_components(mask, params.connectivity);
    let mut area = vec![0usize; n + 1];
    for &l in &labels.data {
        area[l as usize] += 1;
    }
    area[1..].iter().filter(|&&a| a >= params.min_area).count()
}

fn crop(mask: &Raster<bool>, x0: usize, y0: usize, w: usize, h: usize) -> Raster<bool> {
    let mut out = Raster::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, mask.get(x0 + x, y0 + y));
        }
    }
    out
}

/// Number of target-class components of at least `min_area` cells, clipped
/// to [`ANSWER_CAP`].
pub fn count_instances(map: &SemanticMap, target: u8, params: &CountParams) -> u8 {
    let mask = map.labels.map(|l| l == target);
    let n = match params.mode {
        CountMode::Global => count_components(&mask, params),
        CountMode::SlidingWindow { window, stride } => {
            let (w, h) = (mask.width, mask.height);
            let (window, stride) = (window.max(1), stride.max(1));
            let starts = |len: usize| -> Vec<usize> {
                let mut s: Vec<usize> = (0..len.saturating_sub(window) + 1).step_by(stride).collect();
                if s.is_empty() {
                    s.push(0);
                }
                s
            };
            let mut total = 0;
            for &y0 in &starts(h) {
                for &x0 in &starts(w) {
                    let tile = crop(&mask, x0, y0, window.min(w - x0), window.min(h - y0));
                    total += count_components(&tile, params);
                }
            }
            total
        }
    };
    n.min(ANSWER_CAP as usize) as u8
}

/// Answer counts per class: `table[class][answer] = occurrences`.
pub type AnswerTable = BTreeMap<u8, BTreeMap<u8, usize>>;

pub fn answer_table(questions: &[CountQuestion], answers: &[u8]) -> Result<AnswerTable> {
    if questions.len() != answers.len() {
        return Err(Error::LengthMismatch(questions.len(), answers.len()));
    }
    let mut table = AnswerTable::new();
    for (q, &a) in questions.iter().zip(answers) {
        *table.entry(q.target).or_default().entry(a.min(ANSWER_CAP)).or_default() += 1;
    }
    Ok(table)
}

/// Most frequent training answer per class, ties to the smaller count.
pub fn prior_baseline(table: &AnswerTable) -> Result<BTreeMap<u8, u8>> {
    let mut out = BTreeMap::new();
    for (&class, answers) in table {
        let best = answers
            .iter()
            .filter(|(_, &n)| n > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&a, _)| a)
            .ok_or(Error::EmptyTable(class))?;
        out.insert(class, best);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaReport {
    pub accuracy: f64,
    /// Mean over ground-truth answer values of the accuracy on questions
    /// with that answer.
    pub class_balanced_accuracy: f64,
    /// "20+" counts as 20.
    pub rmse: f64,
}

pub fn eval_qa(pred: &[u8], gt: &[u8]) -> Result<QaReport> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = gt.len() as f64;
    let mut per_answer: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    let mut sq = 0.0;
    for (&p, &t) in pred.iter().zip(gt) {
        let (p, t) = (p.min(ANSWER_CAP), t.min(ANSWER_CAP));
        let e = per_answer.entry(t).or_default();
        e.1 += 1;
        if p == t {
            correct += 1;
            e.0 += 1;
        }
        sq += (p as f64 - t as f64).powi(2);
    }
    let balanced = per_answer.values().map(|&(c, k)| c as f64 / k as f64).sum::<f64>() / per_answer.len() as f64;
    Ok(QaReport {
        accuracy: correct as f64 / n,
        class_balanced_accuracy: balanced,
        rmse: (sq / n).sqrt(),
    })
}
