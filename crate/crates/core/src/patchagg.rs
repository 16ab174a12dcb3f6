//! Patch-grid aggregation: tissue-mask thresholding, re-weighted argmax
//! classification, and case-level pattern percentages.
//!
//! Input grids carry one class-probability 4-vector
//! (nontumor, pattern 3, pattern 4, pattern 5) and one prostatic-tissue
//! confidence per cell. Cells below the tissue threshold are masked out;
//! the rest are classified by argmax over re-weighted probabilities; the
//! case-level percentages are computed over tumor cells only, pooled across
//! all of a case's slides.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatchAggError {
    #[error("invalid grid {slide_id:?}: {reason}")]
    InvalidGrid { slide_id: String, reason: String },
    #[error("invalid class weights: {0}")]
    InvalidWeights(String),
    #[error("threshold selection needs at least one prostatic-labeled score")]
    NoPositiveLabels,
    #[error("invalid threshold input: {0}")]
    InvalidThresholdInput(String),
    #[error(
        "target precision {target} is unattainable: best achievable is {best} (at the maximum score)"
    )]
    UnattainablePrecision { target: f64, best: f64 },
    #[error("slide {0:?} is not mapped to a case in the manifest")]
    UnmappedSlide(String),
    #[error("patch file error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed patch row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
}

/// Per-cell classification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchClass {
    /// Below the prostatic-tissue threshold; excluded from all counts.
    Masked,
    NonTumor,
    Gp3,
    Gp4,
    Gp5,
}

/// A 2-D grid of per-patch class probabilities with a tissue mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub slide_id: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `(p_nontumor, p_gp3, p_gp4, p_gp5)` per cell.
    probs: Vec<[f64; 4]>,
    /// Row-major prostatic-tissue confidence per cell.
    tissue_score: Vec<f64>,
}

/// Tolerance on per-cell probability vectors summing to 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl PatchGrid {
    pub fn new(
        slide_id: impl Into<String>,
        rows: usize,
        cols: usize,
        probs: Vec<[f64; 4]>,
        tissue_score: Vec<f64>,
    ) -> Result<Self, PatchAggError> {
        let slide_id = slide_id.into();
        let fail = |reason: String| {
            Err(PatchAggError::InvalidGrid {
                slide_id: slide_id.clone(),
                reason,
            })
        };
        if rows == 0 || cols == 0 {
            return fail(format!("dimensions {rows}x{cols} must be positive"));
        }
        if probs.len() != rows * cols || tissue_score.len() != rows * cols {
            return fail(format!(
                "expected {} cells, got {} probability vectors and {} tissue scores",
                rows * cols,
                probs.len(),
                tissue_score.len()
            ));
        }
        for (i, p) in probs.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return fail(format!("cell {i} has probabilities outside [0,1]"));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return fail(format!("cell {i} probabilities sum to {sum}"));
            }
        }
        for (i, t) in tissue_score.iter().enumerate() {
            if !t.is_finite() || *t < 0.0 || *t > 1.0 {
                return fail(format!("cell {i} tissue score {t} outside [0,1]"));
            }
        }
        Ok(PatchGrid {
            slide_id,
            rows,
            cols,
            probs,
            tissue_score,
        })
    }

    pub fn probs(&self) -> &[[f64; 4]] {
        &self.probs
    }

    pub fn tissue_scores(&self) -> &[f64] {
        &self.tissue_score
    }
}

/// Multiplicative class re-weighting applied before the argmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Weights for (nontumor, pattern 3, pattern 4, pattern 5).
    pub w: [f64; 4],
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights { w: [1.0; 4] }
    }
}

impl ClassWeights {
    pub fn new(w: [f64; 4]) -> Result<Self, PatchAggError> {
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(PatchAggError::InvalidWeights(format!(
                "weights must be positive and finite, got {w:?}"
            )));
        }
        Ok(ClassWeights { w })
    }
}

/// Result of precision-targeted threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSelection {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Picks the smallest score cutoff whose precision for the prostatic class
/// reaches `target_precision`, maximizing recall subject to that target.
/// `scores` pairs each tissue score with its true label (`true` =
/// prostatic). Candidate cutoffs are the observed score values.
pub fn select_tissue_threshold(
    scores: &[(f64, bool)],
    target_precision: f64,
) -> Result<ThresholdSelection, PatchAggError> {
    if !(target_precision > 0.0 && target_precision <= 1.0) {
        return Err(PatchAggError::InvalidThresholdInput(format!(
            "target precision must lie in (0, 1], got {target_precision}"
        )));
    }
    if scores.is_empty() {
        return Err(PatchAggError::InvalidThresholdInput("no scores given".into()));
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(PatchAggError::InvalidThresholdInput(
            "scores must be finite".into(),
        ));
    }
    let n_pos = scores.iter().filter(|(_, l)| *l).count();
    if n_pos == 0 {
        return Err(PatchAggError::NoPositiveLabels);
    }

    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    // descending by score so a prefix is "score >= cutoff"
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    // walk cutoffs from high to low, tracking the smallest admissible one
    let mut best: Option<(f64, f64, f64)> = None; // (threshold, precision, recall)
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < sorted.len() {
        let cutoff = sorted[i].0;
        // absorb the whole tie block: a cutoff admits every equal score
        while i < sorted.len() && sorted[i].0 == cutoff {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        if precision >= target_precision {
            best = Some((cutoff, precision, tp as f64 / n_pos as f64));
        }
    }
    match best {
        Some((threshold, precision, recall)) => Ok(ThresholdSelection {
            threshold,
            precision,
            recall,
        }),
        None => {
            // best achievable is at the maximum score cutoff
            let max_score = sorted[0].0;
            let (mut tp, mut n) = (0usize, 0usize);
            for &(s, l) in &sorted {
                if s == max_score {
                    n += 1;
                    if l {
                        tp += 1;
                    }
                }
            }
            Err(PatchAggError::UnattainablePrecision {
                target: target_precision,
                best: tp as f64 / n as f64,
            })
        }
    }
}

/// Classifies every cell of a grid. Cells under the tissue threshold are
/// masked; the rest take the argmax of `w_k * p_k`, with probability ties
/// resolved toward the lower-risk class.
pub fn classify_patches(
    grid: &PatchGrid,
    weights: &ClassWeights,
    tissue_threshold: f64,
) -> Vec<PatchClass> {
    const CLASSES: [PatchClass; 4] = [
        PatchClass::NonTumor,
        PatchClass::Gp3,
        PatchClass::Gp4,
        PatchClass::Gp5,
    ];
    grid.probs
        .iter()
        .zip(&grid.tissue_score)
        .map(|(p, &t)| {
            if t < tissue_threshold {
                return PatchClass::Masked;
            }
            let mut arg = 0usize;
            let mut best = weights.w[0] * p[0];
            for k in 1..4 {
                let v = weights.w[k] * p[k];
                if v > best {
                    best = v;
                    arg = k; // strict: ties keep the lower-risk class
                }
            }
            CLASSES[arg]
        })
        .collect()
}

/// Case-level pattern summary over classified cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternSummary {
    pub pct_gp3: f64,
    pub pct_gp4: f64,
    pub pct_gp5: f64,
    pub tumor_present: bool,
    pub n_gp3: u64,
    pub n_gp4: u64,
    pub n_gp5: u64,
    pub n_nontumor: u64,
    pub n_masked: u64,
}

/// Pools classified cells (possibly across many slides of one case) into
/// pattern percentages. Denominator is tumor cells only; with no tumor cell
/// the percentages are reported as 0 with `tumor_present = false`.
pub fn pattern_percentages<I>(cells: I) -> PatternSummary
where
    I: IntoIterator<Item = PatchClass>,
{
    let (mut n3, mut n4, mut n5, mut nt, mut masked) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for c in cells {
        match c {
            PatchClass::Gp3 => n3 += 1,
            PatchClass::Gp4 => n4 += 1,
            PatchClass::Gp5 => n5 += 1,
            PatchClass::NonTumor => nt += 1,
            PatchClass::Masked => masked += 1,
        }
    }
    let tumor = n3 + n4 + n5;
    let (p3, p4, p5) = if tumor == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let d = tumor as f64;
        (
            n3 as f64 / d * 100.0,
            n4 as f64 / d * 100.0,
            n5 as f64 / d * 100.0,
        )
    };
    PatternSummary {
        pct_gp3: p3,
        pct_gp4: p4,
        pct_gp5: p5,
        tumor_present: tumor > 0,
        n_gp3: n3,
        n_gp4: n4,
        n_gp5: n5,
        n_nontumor: nt,
        n_masked: masked,
    }
}

pub const PATCH_HEADER: [&str; 8] = [
    "slide_id",
    "row",
    "col",
    "p_nontumor",
    "p_gp3",
    "p_gp4",
    "p_gp5",
    "tissue_score",
];

/// Reads patch grids from CSV. One file may hold many slides; each slide
/// must form a complete rectangle (every (row, col) in range present
/// exactly once).
pub fn read_patch_grids<R: Read>(reader: R) -> Result<Vec<PatchGrid>, PatchAggError> {
    let mut rdr = csv::Reader::from_reader(reader);
    {
        let got: Vec<&str> = rdr.headers()?.iter().map(str::trim).collect();
        if got != PATCH_HEADER {
            return Err(PatchAggError::MalformedRow {
                row: 1,
                reason: format!("header {got:?} does not match {PATCH_HEADER:?}"),
            });
        }
    }
    struct SlideAcc {
        cells: BTreeMap<(usize, usize), ([f64; 4], f64)>,
        max_row: usize,
        max_col: usize,
    }
    let mut slides: BTreeMap<String, SlideAcc> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = idx + 2;
        let fail = |reason: String| PatchAggError::MalformedRow {
            row: row_no,
            reason,
        };
        if rec.len() != PATCH_HEADER.len() {
            return Err(fail(format!("expected 8 fields, got {}", rec.len())));
        }
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let slide_id = field(0).to_string();
        if slide_id.is_empty() {
            return Err(fail("empty slide_id".into()));
        }
        let r: usize = field(1)
            .parse()
            .map_err(|_| fail(format!("bad row index {:?}", field(1))))?;
        let c: usize = field(2)
            .parse()
            .map_err(|_| fail(format!("bad col index {:?}", field(2))))?;
        let mut vals = [0.0_f64; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(3 + k);
            *v = raw
                .parse()
                .map_err(|_| fail(format!("bad numeric field {raw:?}")))?;
        }
        let acc = slides.entry(slide_id).or_insert_with(|| SlideAcc {
            cells: BTreeMap::new(),
            max_row: 0,
            max_col: 0,
        });
        if acc
            .cells
            .insert((r, c), ([vals[0], vals[1], vals[2], vals[3]], vals[4]))
            .is_some()
        {
            return Err(fail(format!("duplicate cell ({r}, {c})")));
        }
        acc.max_row = acc.max_row.max(r);
        acc.max_col = acc.max_col.max(c);
    }

    let mut grids = Vec::with_capacity(slides.len());
    for (slide_id, acc) in slides {
        let rows = acc.max_row + 1;
        let cols = acc.max_col + 1;
        if acc.cells.len() != rows * cols {
            return Err(PatchAggError::InvalidGrid {
                slide_id,
                reason: format!(
                    "incomplete grid: {} of {} cells present",
                    acc.cells.len(),
                    rows * cols
                ),
            });
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut tissue = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (p, t) = acc.cells[&(r, c)];
                probs.push(p);
                tissue.push(t);
            }
        }
        grids.push(PatchGrid::new(slide_id, rows, cols, probs, tissue)?);
    }
    Ok(grids)
}

/// Reads a `slide_id,case_id` manifest.
pub fn read_slide_manifest(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, PatchAggError> {
    let mut rdr = csv::Reader::from_path(path)?;
    {
        let got: Vec<&str> = rdr.headers()?.iter().map(str::trim).collect();
        if got != ["slide_id", "case_id"] {
            return Err(PatchAggError::MalformedRow {
                row: 1,
                reason: format!("header {got:?} does not match [slide_id, case_id]"),
            });
        }
    }
    let mut map = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let slide = rec.get(0).unwrap_or("").trim().to_string();
        let case = rec.get(1).unwrap_or("").trim().to_string();
        if slide.is_empty() || case.is_empty() {
            return Err(PatchAggError::MalformedRow {
                row: idx + 2,
                reason: "empty slide_id or case_id".into(),
            });
        }
        map.insert(slide, case);
    }
    Ok(map)
}

/// Classifies every grid and pools tumor counts per case (slide order and
/// cell order do not affect the result). Returns per-case summaries sorted
/// by case_id.
pub fn aggregate_cases(
    grids: &[PatchGrid],
    manifest: &BTreeMap<String, String>,
    weights: &ClassWeights,
    tissue_threshold: f64,
) -> Result<Vec<(String, PatternSummary)>, PatchAggError> {
    let mut per_case: BTreeMap<&str, Vec<PatchClass>> = BTreeMap::new();
    for g in grids {
        let case = manifest
            .get(&g.slide_id)
            .ok_or_else(|| PatchAggError::UnmappedSlide(g.slide_id.clone()))?;
        per_case
            .entry(case.as_str())
            .or_default()
            .extend(classify_patches(g, weights, tissue_threshold));
    }
    Ok(per_case
        .into_iter()
        .map(|(case, cells)| (case.to_string(), pattern_percentages(cells)))
        .collect())
}
