//! Localization scoring: optimal per-frame assignment between predicted and
//! ground-truth directions, localization error, and localization recall.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::doa::DoaFrame;
use crate::error::{Error, Result};
use crate::geometry::great_circle_deg;

pub const DEFAULT_THRESHOLD_DEG: f64 = 20.0;

/// One matched prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub frame_index: usize,
    pub pred_index: usize,
    pub gt_index: usize,
    pub angle_deg: f64,
    pub true_positive: bool,
}

/// Minimum-total-angle one-to-one assignment for a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// (prediction index, ground-truth index, great-circle angle in degrees).
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

impl FrameMatch {
    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|&(_, _, a)| a).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub threshold_deg: f64,
    pub frame_count: usize,
    pub gt_count: usize,
    pub pred_count: usize,
    pub true_positives: usize,
    /// Mean angle over true-positive pairs; absent when there are none.
    pub localization_error_deg: Option<f64>,
    /// 100 x true positives / ground-truth instances; absent without any gts.
    pub localization_recall_pct: Option<f64>,
    pub pairs: Vec<MatchedPair>,
}

/// Rectangular assignment by shortest augmenting paths with potentials,
/// O(rows^2 cols) with rows <= cols. Returns the assigned column per row.
fn assign_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    // 1-based potentials; p[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Matches predictions to ground truths minimizing the total great-circle
/// angle; min(P, G) pairs are formed, the rest reported unmatched.
pub fn match_frame(preds: &[[f64; 3]], gts: &[[f64; 3]]) -> FrameMatch {
    let np = preds.len();
    let ng = gts.len();
    if np == 0 || ng == 0 {
        return FrameMatch {
            pairs: Vec::new(),
            unmatched_preds: (0..np).collect(),
            unmatched_gts: (0..ng).collect(),
        };
    }
    // Keep the smaller side as rows so every row gets assigned.
    let transposed = np > ng;
    let (rows, cols) = if transposed { (ng, np) } else { (np, ng) };
    let mut cost = vec![vec![0.0f64; cols]; rows];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            let (pi, gi) = if transposed { (j, i) } else { (i, j) };
            *c = great_circle_deg(preds[pi], gts[gi]);
        }
    }
    let assignment = assign_min_cost(&cost);

    let mut pairs: Vec<(usize, usize, f64)> = assignment
        .iter()
        .enumerate()
        .map(|(row, &col)| {
            let (pi, gi) = if transposed { (col, row) } else { (row, col) };
            (pi, gi, great_circle_deg(preds[pi], gts[gi]))
        })
        .collect();
    pairs.sort_by_key(|&(pi, _, _)| pi);
    let mut pred_used = vec![false; np];
    let mut gt_used = vec![false; ng];
    for &(pi, gi, _) in &pairs {
        pred_used[pi] = true;
        gt_used[gi] = true;
    }
    FrameMatch {
        pairs,
        unmatched_preds: (0..np).filter(|&i| !pred_used[i]).collect(),
        unmatched_gts: (0..ng).filter(|&i| !gt_used[i]).collect(),
    }
}

fn directions_by_frame(frames: &[DoaFrame], role: &str) -> Result<BTreeMap<usize, Vec<[f64; 3]>>> {
    let mut map = BTreeMap::new();
    for frame in frames {
        if map
            .insert(
                frame.frame_index,
                frame.estimates.iter().map(|e| e.direction).collect(),
            )
            .is_some()
        {
            return Err(Error::InvalidInput(format!(
                "duplicate frame index {} in {role} frames",
                frame.frame_index
            )));
        }
    }
    Ok(map)
}

/// Scores predictions against ground truth. Frames are aligned by index;
/// an index present on one side only counts as empty on the other.
pub fn evaluate(
    pred_frames: &[DoaFrame],
    gt_frames: &[DoaFrame],
    threshold_deg: f64,
) -> Result<EvalReport> {
    if !(threshold_deg > 0.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold_deg} must be positive"
        )));
    }
    let preds = directions_by_frame(pred_frames, "prediction")?;
    let gts = directions_by_frame(gt_frames, "ground-truth")?;

    let mut frame_indices: Vec<usize> = preds.keys().chain(gts.keys()).copied().collect();
    frame_indices.sort_unstable();
    frame_indices.dedup();

    let empty: Vec<[f64; 3]> = Vec::new();
    let mut pairs = Vec::new();
    let mut gt_count = 0usize;
    let mut pred_count = 0usize;
    let mut true_positives = 0usize;
    let mut angle_sum = 0.0f64;
    for &fi in &frame_indices {
        let p = preds.get(&fi).unwrap_or(&empty);
        let g = gts.get(&fi).unwrap_or(&empty);
        pred_count += p.len();
        gt_count += g.len();
        for (pi, gi, angle) in match_frame(p, g).pairs {
            let tp = angle <= threshold_deg;
            if tp {
                true_positives += 1;
                angle_sum += angle;
            }
            pairs.push(MatchedPair {
                frame_index: fi,
                pred_index: pi,
                gt_index: gi,
                angle_deg: angle,
                true_positive: tp,
            });
        }
    }
    Ok(EvalReport {
        threshold_deg,
        frame_count: frame_indices.len(),
        gt_count,
        pred_count,
        true_positives,
        localization_error_deg: (true_positives > 0)
            .then(|| angle_sum / true_positives as f64),
        localization_recall_pct: (gt_count > 0)
            .then(|| 100.0 * true_positives as f64 / gt_count as f64),
        pairs,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

/// Plain-text summary, one "key: value" line per field.
pub fn write_text_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!("threshold_deg: {}\n", report.threshold_deg));
    out.push_str(&format!("frames: {}\n", report.frame_count));
    out.push_str(&format!("gt_instances: {}\n", report.gt_count));
    out.push_str(&format!("predictions: {}\n", report.pred_count));
    out.push_str(&format!("true_positives: {}\n", report.true_positives));
    out.push_str(&format!(
        "localization_error_deg: {}\n",
        fmt_opt(report.localization_error_deg)
    ));
    out.push_str(&format!(
        "localization_recall_pct: {}\n",
        fmt_opt(report.localization_recall_pct)
    ));
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// JSON report; absent metrics serialize as null.
pub fn write_json_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}
