//! Positive/negative sample assignment for anchor-based training.
//!
//! Three families of rules are supported: hard IOU thresholds (the presets used
//! by Faster R-CNN, SSD, RetinaNet, RefineDet and M2Det), a clipped logistic
//! weight that softens the 0.5 cut, and the YOLOv2 center-cell rule. Every
//! rule produces an [`AssignmentTable`] of per-anchor loss weights.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::formats::{fmt_decimal, records, ParseError};
use crate::geometry::{iou, BBox};

/// IOU the soft weight is centered on.
pub const SOFT_CENTER: f64 = 0.5;

/// Negatives under the center-cell rule must not exceed this IOU.
pub const CENTER_BEST_NEG_MAX_IOU: f64 = 0.6;

pub const PRESET_NAMES: [&str; 7] = [
    "faster-rcnn",
    "ssd",
    "retinanet",
    "refinedet",
    "m2det",
    "yolov2",
    "soft",
];

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("soft threshold needs 0 < alpha < 0.5 and 0 < beta < 0.5 (got alpha={alpha}, beta={beta})")]
    BadSoftParams { alpha: f64, beta: f64 },
    #[error("IOU thresholds must lie in [0, 1] with positive >= negative (got {positive}, {negative:?})")]
    BadThresholds { positive: f64, negative: Option<f64> },
    #[error("unknown strategy preset `{0}` (expected one of faster-rcnn, ssd, retinanet, refinedet, m2det, yolov2, soft)")]
    UnknownPreset(String),
    #[error("the center-cell rule needs a single-level pyramid (got {0} levels)")]
    MultiLevel(usize),
    #[error("hard-negative ratio must be at least 1")]
    ZeroRatio,
    #[error("loss for anchor {anchor_id} must be finite and non-negative (got {loss})")]
    BadLoss { anchor_id: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Parameters of the clipped logistic weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SoftThresholdSpec", into = "SoftThresholdSpec")]
pub struct SoftThresholdParams {
    alpha: f64,
    beta: f64,
    slope: f64,
}

#[derive(Serialize, Deserialize)]
struct SoftThresholdSpec {
    alpha: f64,
    beta: f64,
}

impl TryFrom<SoftThresholdSpec> for SoftThresholdParams {
    type Error = AssignError;

    fn try_from(s: SoftThresholdSpec) -> Result<Self, Self::Error> {
        SoftThresholdParams::new(s.alpha, s.beta)
    }
}

impl From<SoftThresholdParams> for SoftThresholdSpec {
    fn from(p: SoftThresholdParams) -> Self {
        SoftThresholdSpec {
            alpha: p.alpha,
            beta: p.beta,
        }
    }
}

impl SoftThresholdParams {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_BETA: f64 = 0.001;

    /// Derives the slope so the weight equals `beta` at `0.5 - alpha`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self, AssignError> {
        let open = |v: f64| v > 0.0 && v < 0.5;
        if !open(alpha) || !open(beta) {
            return Err(AssignError::BadSoftParams { alpha, beta });
        }
        let slope = ((1.0 - beta) / beta).ln() / alpha;
        Ok(Self { alpha, beta, slope })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn lower_edge(&self) -> f64 {
        SOFT_CENTER - self.alpha
    }

    pub fn upper_edge(&self) -> f64 {
        SOFT_CENTER + self.alpha
    }
}

impl Default for SoftThresholdParams {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ALPHA, Self::DEFAULT_BETA).expect("defaults are valid")
    }
}

/// Loss weight for an anchor whose IOU with its object is `r`.
///
/// Zero below the band, one above it, logistic on the closed band so the edges
/// evaluate to exactly `beta` and `1 - beta`.
pub fn soft_weight(r: f64, p: &SoftThresholdParams) -> f64 {
    if r < p.lower_edge() {
        0.0
    } else if r > p.upper_edge() {
        1.0
    } else {
        1.0 / (1.0 + (-p.slope * (r - SOFT_CENTER)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouThreshold {
    pub value: f64,
    /// `>=` when set, `>` otherwise.
    pub inclusive: bool,
}

impl IouThreshold {
    pub fn above(value: f64) -> Self {
        Self {
            value,
            inclusive: false,
        }
    }

    pub fn at_least(value: f64) -> Self {
        Self {
            value,
            inclusive: true,
        }
    }

    pub fn admits(&self, r: f64) -> bool {
        if self.inclusive {
            r >= self.value
        } else {
            r > self.value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatchStrategy {
    BinaryThreshold {
        positive: IouThreshold,
        /// Anchors whose best IOU is strictly below this are negatives. Without
        /// it every unassigned anchor is a negative candidate.
        negative_below: Option<f64>,
    },
    SoftSigmoid(SoftThresholdParams),
    CenterBest,
}

impl MatchStrategy {
    /// Strategy by preset name; `soft` uses the supplied parameters.
    pub fn preset(name: &str, soft: SoftThresholdParams) -> Result<Self, AssignError> {
        let binary = |positive, negative_below| MatchStrategy::BinaryThreshold {
            positive,
            negative_below,
        };
        Ok(match name {
            "faster-rcnn" => binary(IouThreshold::above(0.7), Some(0.3)),
            "ssd" | "refinedet" => binary(IouThreshold::above(0.5), None),
            "retinanet" => binary(IouThreshold::at_least(0.5), Some(0.4)),
            "m2det" => binary(IouThreshold::at_least(0.5), None),
            "yolov2" => MatchStrategy::CenterBest,
            "soft" => MatchStrategy::SoftSigmoid(soft),
            other => return Err(AssignError::UnknownPreset(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<(), AssignError> {
        if let MatchStrategy::BinaryThreshold {
            positive,
            negative_below,
        } = self
        {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            let ok = unit(positive.value)
                && negative_below.is_none_or(|n| unit(n) && positive.value >= n);
            if !ok {
                return Err(AssignError::BadThresholds {
                    positive: positive.value,
                    negative: *negative_below,
                });
            }
        }
        Ok(())
    }

    fn weight(&self, r: f64) -> f64 {
        match self {
            MatchStrategy::BinaryThreshold { positive, .. } => {
                if positive.admits(r) {
                    1.0
                } else {
                    0.0
                }
            }
            MatchStrategy::SoftSigmoid(p) => soft_weight(r, p),
            MatchStrategy::CenterBest => unreachable!("center-best has no per-pair weight"),
        }
    }

    fn is_negative(&self, max_iou: f64) -> bool {
        match self {
            MatchStrategy::BinaryThreshold { negative_below, .. } => {
                negative_below.is_none_or(|t| max_iou < t)
            }
            MatchStrategy::SoftSigmoid(p) => max_iou < p.lower_edge(),
            MatchStrategy::CenterBest => max_iou <= CENTER_BEST_NEG_MAX_IOU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub anchor_id: usize,
    pub gt_index: usize,
    pub weight: f64,
}

/// Per-image assignment result.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssignmentTable {
    /// Rows with positive weight, sorted by anchor id; one row per anchor.
    pub rows: Vec<AssignmentRow>,
    pub negatives: BTreeSet<usize>,
    /// Per ground-truth box: whether the best-IOU fallback supplied its anchor.
    pub fallback: Vec<bool>,
    /// Ground-truth boxes that could not be given any anchor.
    pub unassignable: Vec<usize>,
}

impl AssignmentTable {
    /// Positives counted for hard-negative mining: rows with weight >= 0.5.
    pub fn mining_positive_count(&self) -> usize {
        self.rows.iter().filter(|r| r.weight >= 0.5).count()
    }

    pub fn weight_of(&self, anchor_id: usize) -> f64 {
        self.rows
            .binary_search_by_key(&anchor_id, |r| r.anchor_id)
            .map(|k| self.rows[k].weight)
            .unwrap_or(0.0)
    }

    fn from_rows(rows: BTreeMap<usize, (usize, f64)>, negatives: BTreeSet<usize>, n_gt: usize) -> Self {
        Self {
            rows: rows
                .into_iter()
                .map(|(anchor_id, (gt_index, weight))| AssignmentRow {
                    anchor_id,
                    gt_index,
                    weight,
                })
                .collect(),
            negatives,
            fallback: vec![false; n_gt],
            unassignable: Vec::new(),
        }
    }
}

/// Assign every anchor against all ground-truth boxes of one image.
pub fn assign(anchors: &AnchorSet, gts: &[BBox], strategy: &MatchStrategy) -> Result<AssignmentTable, AssignError> {
    strategy.validate()?;
    if let MatchStrategy::CenterBest = strategy {
        return assign_center_best(anchors, gts);
    }

    let mut rows: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut max_iou = vec![0.0f64; anchors.len()];
    for a in anchors.anchors() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let r = iou(&a.bbox, gt);
            max_iou[a.id] = max_iou[a.id].max(r);
            let w = strategy.weight(r);
            // strict `>` keeps the smaller gt index on ties
            if w > 0.0 && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((g, w));
            }
        }
        if let Some(b) = best {
            rows.insert(a.id, b);
        }
    }

    // Fallback for boxes left without any positive anchor: take the best-IOU
    // anchor that is free or whose owner keeps at least one other row, so no
    // other box is uncovered in the process.
    let mut fallback = vec![false; gts.len()];
    let mut unassignable = Vec::new();
    let mut owned = vec![0usize; gts.len()];
    for &(g, _) in rows.values() {
        owned[g] += 1;
    }
    for g in 0..gts.len() {
        if owned[g] > 0 {
            continue;
        }
        let best = anchors
            .anchors()
            .iter()
            .filter(|a| match rows.get(&a.id) {
                None => true,
                Some(&(owner, _)) => !fallback[owner] && owned[owner] > 1,
            })
            .map(|a| (a.id, iou(&a.bbox, &gts[g])))
            .max_by(|(ia, ra), (ib, rb)| ra.total_cmp(rb).then_with(|| ib.cmp(ia)));
        match best {
            Some((id, _)) => {
                if let Some((owner, _)) = rows.insert(id, (g, 1.0)) {
                    owned[owner] -= 1;
                }
                owned[g] += 1;
                fallback[g] = true;
            }
            None => unassignable.push(g),
        }
    }

    let negatives = anchors
        .anchors()
        .iter()
        .filter(|a| !rows.contains_key(&a.id) && strategy.is_negative(max_iou[a.id]))
        .map(|a| a.id)
        .collect();

    let mut table = AssignmentTable::from_rows(rows, negatives, gts.len());
    table.fallback = fallback;
    table.unassignable = unassignable;
    Ok(table)
}

/// YOLOv2 rule: the object's center cell supplies the positive, namely its
/// highest-IOU anchor not already claimed by an earlier ground truth.
pub fn assign_center_best(anchors: &AnchorSet, gts: &[BBox]) -> Result<AssignmentTable, AssignError> {
    let n_levels = anchors.config().levels.len();
    if n_levels != 1 {
        return Err(AssignError::MultiLevel(n_levels));
    }
    let level = anchors.level(0);
    let mut rows: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut unassignable = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let (cx, cy) = gt.center();
        let (fi, fj) = ((cx / level.stride_x).floor(), (cy / level.stride_y).floor());
        if fi < 0.0 || fj < 0.0 || fi >= f64::from(level.grid_w) || fj >= f64::from(level.grid_h) {
            unassignable.push(g);
            continue;
        }
        let mut candidates: Vec<(usize, f64)> = anchors
            .cell_anchors(0, fi as u32, fj as u32)
            .iter()
            .map(|a| (a.id, iou(&a.bbox, gt)))
            .collect();
        candidates.sort_by(|(ia, ra), (ib, rb)| rb.total_cmp(ra).then(ia.cmp(ib)));
        match candidates.iter().find(|(id, _)| !rows.contains_key(id)) {
            Some(&(id, _)) => {
                rows.insert(id, (g, 1.0));
            }
            None => unassignable.push(g),
        }
    }
    let negatives = anchors
        .anchors()
        .iter()
        .filter(|a| !rows.contains_key(&a.id))
        .filter(|a| {
            let m = gts.iter().map(|gt| iou(&a.bbox, gt)).fold(0.0, f64::max);
            MatchStrategy::CenterBest.is_negative(m)
        })
        .map(|a| a.id)
        .collect();
    let mut table = AssignmentTable::from_rows(rows, negatives, gts.len());
    table.unassignable = unassignable;
    Ok(table)
}

/// Highest-loss candidates at `ratio` negatives per positive; ties go to the
/// smaller anchor id.
pub fn select_hard_negatives(
    candidate_losses: &BTreeMap<usize, f64>,
    positive_count: usize,
    ratio: usize,
) -> Result<BTreeSet<usize>, AssignError> {
    if ratio == 0 {
        return Err(AssignError::ZeroRatio);
    }
    if let Some((&anchor_id, &loss)) = candidate_losses
        .iter()
        .find(|(_, &l)| !l.is_finite() || l < 0.0)
    {
        return Err(AssignError::BadLoss { anchor_id, loss });
    }
    let quota = positive_count.saturating_mul(ratio).min(candidate_losses.len());
    let mut ranked: Vec<(usize, f64)> = candidate_losses.iter().map(|(&k, &v)| (k, v)).collect();
    ranked.sort_by(|(ia, la), (ib, lb)| lb.total_cmp(la).then(ia.cmp(ib)));
    Ok(ranked.into_iter().take(quota).map(|(id, _)| id).collect())
}

pub const ASSIGNMENT_HEADER: &str = "image_id,anchor_id,gt_index,weight";

/// Write per-image tables: data rows first, then `#negatives:`, `#fallback:`
/// and `#unassignable:` trailer lines for each image.
pub fn write_assignment<W: Write>(out: &mut W, images: &[(String, AssignmentTable)]) -> std::io::Result<()> {
    writeln!(out, "{ASSIGNMENT_HEADER}")?;
    for (image, table) in images {
        for r in &table.rows {
            writeln!(out, "{image},{},{},{}", r.anchor_id, r.gt_index, fmt_decimal(r.weight))?;
        }
    }
    let join = |items: Vec<String>| items.join(" ");
    for (image, table) in images {
        writeln!(
            out,
            "#negatives:{image}:{}",
            join(table.negatives.iter().map(usize::to_string).collect())
        )?;
        writeln!(
            out,
            "#fallback:{image}:{}",
            join(table.fallback.iter().map(|&f| u8::from(f).to_string()).collect())
        )?;
        writeln!(
            out,
            "#unassignable:{image}:{}",
            join(table.unassignable.iter().map(usize::to_string).collect())
        )?;
    }
    Ok(())
}

pub fn export_assignment(path: &Path, images: &[(String, AssignmentTable)]) -> Result<(), AssignError> {
    let io_err = |source| AssignError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    write_assignment(&mut buf, images).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}

/// Inverse of [`write_assignment`]. Images keep their first-appearance order.
pub fn read_assignment(text: &str) -> Result<Vec<(String, AssignmentTable)>, AssignError> {
    let mut order: Vec<String> = Vec::new();
    let mut tables: BTreeMap<String, AssignmentTable> = BTreeMap::new();
    fn touch<'t>(
        image: &str,
        order: &mut Vec<String>,
        tables: &'t mut BTreeMap<String, AssignmentTable>,
    ) -> &'t mut AssignmentTable {
        if !tables.contains_key(image) {
            order.push(image.to_string());
        }
        tables.entry(image.to_string()).or_default()
    }

    for rec in records(text, ASSIGNMENT_HEADER) {
        rec.expect_len(4)?;
        let image = rec.text(0, "image_id")?;
        let row = AssignmentRow {
            anchor_id: rec.field(1, "anchor_id")?,
            gt_index: rec.field(2, "gt_index")?,
            weight: rec.float(3, "weight")?,
        };
        if !(row.weight > 0.0 && row.weight <= 1.0) {
            return Err(ParseError::new(rec.line, "weight must be in (0, 1]").into());
        }
        touch(image, &mut order, &mut tables).rows.push(row);
    }

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let Some((tag, rest)) = raw.trim().strip_prefix('#').and_then(|s| s.split_once(':')) else {
            continue;
        };
        if !matches!(tag, "negatives" | "fallback" | "unassignable") {
            continue;
        }
        let (image, list) = rest
            .rsplit_once(':')
            .ok_or_else(|| ParseError::new(line, format!("malformed #{tag} trailer")))?;
        let values = list
            .split_whitespace()
            .map(|v| v.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ParseError::new(line, format!("malformed #{tag} list")))?;
        let table = touch(image, &mut order, &mut tables);
        match tag {
            "negatives" => table.negatives = values.into_iter().collect(),
            "fallback" => {
                if values.iter().any(|&v| v > 1) {
                    return Err(ParseError::new(line, "fallback flags must be 0 or 1").into());
                }
                table.fallback = values.into_iter().map(|v| v == 1).collect();
            }
            _ => table.unassignable = values,
        }
    }

    Ok(order
        .into_iter()
        .map(|image| {
            let mut table = tables.remove(&image).expect("ordered image present");
            table.rows.sort_by_key(|r| r.anchor_id);
            (image, table)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{generate_anchors, PyramidConfig, PyramidLevel, Template};
    use crate::geometry::ImageExtent;

    fn single_level(grid: u32, stride: f64, templates: &[(f64, f64)]) -> AnchorSet {
        let extent = (f64::from(grid) * stride) as u32;
        generate_anchors(&PyramidConfig {
            extent: ImageExtent::new(extent, extent).unwrap(),
            levels: vec![PyramidLevel {
                grid_w: grid,
                grid_h: grid,
                stride_x: stride,
                stride_y: stride,
                templates: templates.iter().map(|&(w, h)| Template(w, h)).collect(),
            }],
        })
        .unwrap()
    }

    #[test]
    fn soft_weight_reference_points() {
        let p = SoftThresholdParams::default();
        assert_eq!(soft_weight(0.5, &p), 0.5);
        assert!((soft_weight(0.4, &p) - 0.001).abs() < 1e-12);
        assert!((soft_weight(0.6, &p) - 0.999).abs() < 1e-12);
        assert_eq!(soft_weight(0.39, &p), 0.0);
        assert_eq!(soft_weight(0.61, &p), 1.0);
        assert!((p.slope() - 999f64.ln() / 0.1).abs() < 1e-12);
    }

    #[test]
    fn soft_params_are_validated() {
        assert!(SoftThresholdParams::new(0.0, 0.001).is_err());
        assert!(SoftThresholdParams::new(0.5, 0.001).is_err());
        assert!(SoftThresholdParams::new(0.1, 0.5).is_err());
        assert!(SoftThresholdParams::new(0.2, 0.01).is_ok());
    }

    #[test]
    fn presets() {
        let soft = SoftThresholdParams::default();
        for name in PRESET_NAMES {
            MatchStrategy::preset(name, soft).unwrap().validate().unwrap();
        }
        assert!(matches!(
            MatchStrategy::preset("yolo9000", soft),
            Err(AssignError::UnknownPreset(_))
        ));
        let retina = MatchStrategy::preset("retinanet", soft).unwrap();
        assert_eq!(retina.weight(0.5), 1.0);
        let ssd = MatchStrategy::preset("ssd", soft).unwrap();
        assert_eq!(ssd.weight(0.5), 0.0);
    }

    #[test]
    fn bad_binary_thresholds_rejected() {
        let s = MatchStrategy::BinaryThreshold {
            positive: IouThreshold::above(0.3),
            negative_below: Some(0.5),
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn soft_fallback_fires_when_nothing_reaches_the_band() {
        let set = single_level(2, 10.0, &[(10.0, 10.0)]);
        // IOU 0.3 with the anchor at cell (0, 0): 3x10 strip inside a 10x10 anchor.
        let gt = BBox::new(0.0, 0.0, 3.0, 10.0).unwrap();
        let table = assign(&set, &[gt], &MatchStrategy::SoftSigmoid(Default::default())).unwrap();
        assert_eq!(table.rows, vec![AssignmentRow { anchor_id: 0, gt_index: 0, weight: 1.0 }]);
        assert_eq!(table.fallback, vec![true]);
        assert!(!table.negatives.contains(&0));
    }

    #[test]
    fn binary_identity_match() {
        let set = single_level(2, 10.0, &[(10.0, 10.0), (6.0, 6.0)]);
        let gt = set.get(2).unwrap().bbox;
        let strat = MatchStrategy::preset("ssd", Default::default()).unwrap();
        let table = assign(&set, &[gt], &strat).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].anchor_id, 2);
        assert_eq!(table.fallback, vec![false]);
        assert_eq!(table.negatives.len(), set.len() - 1);
    }

    #[test]
    fn empty_ground_truth_makes_everything_negative() {
        let set = single_level(2, 10.0, &[(10.0, 10.0)]);
        for name in PRESET_NAMES {
            let strat = MatchStrategy::preset(name, Default::default()).unwrap();
            let table = assign(&set, &[], &strat).unwrap();
            assert!(table.rows.is_empty());
            assert_eq!(table.negatives.len(), set.len(), "{name}");
        }
    }

    #[test]
    fn conflicting_anchor_keeps_highest_weight_then_smaller_gt() {
        let set = single_level(2, 10.0, &[(10.0, 10.0)]);
        let a = set.get(0).unwrap().bbox;
        let strat = MatchStrategy::SoftSigmoid(Default::default());
        // IOU 0.55 vs 1.0 on anchor 0: the exact box wins it.
        let partial = BBox::new(0.0, 0.0, 5.5, 10.0).unwrap();
        let table = assign(&set, &[partial, a], &strat).unwrap();
        assert_eq!(table.weight_of(0), 1.0);
        assert_eq!(table.rows.iter().find(|r| r.anchor_id == 0).unwrap().gt_index, 1);
        // gt 0 lost its only candidate; the fallback cannot take anchor 0 from
        // gt 1, so it lands on the best remaining anchor.
        assert_eq!(table.fallback, vec![true, false]);
        assert!(table.rows.iter().any(|r| r.gt_index == 0));

        let table = assign(&set, &[a, a], &strat).unwrap();
        assert_eq!(table.rows.iter().find(|r| r.anchor_id == 0).unwrap().gt_index, 0);
    }

    #[test]
    fn fallback_may_take_a_spare_anchor_from_a_covered_box() {
        // Two anchors: gt 0 owns both with weight 1, gt 1 has IOU 0.3 with anchor 1.
        let set = single_level(2, 10.0, &[(10.0, 10.0)]);
        let wide = BBox::new(0.0, 0.0, 20.0, 10.0).unwrap();
        let strip = BBox::new(10.0, 0.0, 13.0, 10.0).unwrap();
        let strat = MatchStrategy::BinaryThreshold {
            positive: IouThreshold::at_least(0.5),
            negative_below: None,
        };
        let table = assign(&set, &[wide, strip], &strat).unwrap();
        assert_eq!(table.fallback, vec![false, true]);
        let owner = |id| table.rows.iter().find(|r| r.anchor_id == id).unwrap().gt_index;
        assert_eq!((owner(0), owner(1)), (0, 1));
    }

    #[test]
    fn center_best_fixture() {
        // gt centered in cell (1, 1); T0 has IOU 0.6 and T1 IOU 0.3 with it.
        let set = single_level(3, 10.0, &[(10.0, 6.0), (10.0, 3.0)]);
        let gt = BBox::from_center(15.0, 15.0, 10.0, 10.0).unwrap();
        let cell = set.cell_anchors(0, 1, 1);
        assert!((iou(&cell[0].bbox, &gt) - 0.6).abs() < 1e-12);
        assert!((iou(&cell[1].bbox, &gt) - 0.3).abs() < 1e-12);
        let table = assign_center_best(&set, &[gt]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].anchor_id, cell[0].id);
        assert!(table.negatives.contains(&cell[1].id));
        assert!(!table.negatives.contains(&cell[0].id));
    }

    #[test]
    fn center_best_collision_goes_to_next_best() {
        let set = single_level(2, 10.0, &[(8.0, 8.0), (4.0, 4.0)]);
        let g0 = BBox::from_center(5.0, 5.0, 8.0, 8.0).unwrap();
        let g1 = BBox::from_center(5.5, 5.5, 7.0, 7.0).unwrap();
        let table = assign_center_best(&set, &[g0, g1]).unwrap();
        let by_gt: Vec<_> = table.rows.iter().map(|r| (r.gt_index, r.anchor_id)).collect();
        assert!(by_gt.contains(&(0, 0)));
        assert!(by_gt.contains(&(1, 1)));

        let g2 = BBox::from_center(4.0, 4.0, 2.0, 2.0).unwrap();
        let table = assign_center_best(&set, &[g0, g1, g2]).unwrap();
        assert_eq!(table.unassignable, vec![2]);
    }

    #[test]
    fn center_best_outside_grid_is_unassignable() {
        let set = single_level(2, 10.0, &[(8.0, 8.0)]);
        let gt = BBox::from_center(25.0, 5.0, 4.0, 4.0).unwrap();
        let table = assign_center_best(&set, &[gt]).unwrap();
        assert_eq!(table.unassignable, vec![0]);
        assert!(table.rows.is_empty());
    }

    #[test]
    fn center_best_rejects_multi_level() {
        let cfg = PyramidConfig {
            extent: ImageExtent::new(20, 20).unwrap(),
            levels: vec![
                PyramidLevel { grid_w: 2, grid_h: 2, stride_x: 10.0, stride_y: 10.0, templates: vec![Template(8.0, 8.0)] },
                PyramidLevel { grid_w: 1, grid_h: 1, stride_x: 20.0, stride_y: 20.0, templates: vec![Template(16.0, 16.0)] },
            ],
        };
        let set = generate_anchors(&cfg).unwrap();
        assert!(matches!(assign_center_best(&set, &[]), Err(AssignError::MultiLevel(2))));
    }

    #[test]
    fn hard_negative_examples() {
        let losses: BTreeMap<usize, f64> = (0..10).map(|k| (k, f64::from(k as u32) * 0.1)).collect();
        let picked = select_hard_negatives(&losses, 2, 3).unwrap();
        assert_eq!(picked, (4..10).collect());
        assert!(select_hard_negatives(&losses, 0, 3).unwrap().is_empty());
        let two: BTreeMap<usize, f64> = [(3, 0.2), (7, 0.9)].into_iter().collect();
        assert_eq!(select_hard_negatives(&two, 1, 3).unwrap().len(), 2);

        let ties: BTreeMap<usize, f64> = [(5, 1.0), (2, 1.0), (9, 1.0)].into_iter().collect();
        assert_eq!(select_hard_negatives(&ties, 2, 1).unwrap(), [2, 5].into_iter().collect());

        assert!(matches!(select_hard_negatives(&two, 1, 0), Err(AssignError::ZeroRatio)));
        let bad: BTreeMap<usize, f64> = [(1, f64::NAN)].into_iter().collect();
        assert!(matches!(select_hard_negatives(&bad, 1, 3), Err(AssignError::BadLoss { anchor_id: 1, .. })));
    }

    #[test]
    fn export_empty_and_fallback_tables() {
        let mut buf = Vec::new();
        write_assignment(&mut buf, &[("img".into(), AssignmentTable::default())]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "image_id,anchor_id,gt_index,weight\n#negatives:img:\n#fallback:img:\n#unassignable:img:\n"
        );

        let table = AssignmentTable {
            rows: vec![AssignmentRow { anchor_id: 4, gt_index: 0, weight: 1.0 }],
            negatives: [1, 2].into_iter().collect(),
            fallback: vec![true],
            unassignable: vec![],
        };
        let mut buf = Vec::new();
        write_assignment(&mut buf, &[("v/3".into(), table.clone())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\nv/3,4,0,1.000000000\n"));
        assert!(text.contains("#negatives:v/3:1 2\n"));
        assert_eq!(read_assignment(&text).unwrap(), vec![("v/3".to_string(), table)]);
    }

    #[test]
    fn export_reports_path_on_io_failure() {
        let path = Path::new("/nonexistent-dir/for/sure/out.csv");
        let err = export_assignment(path, &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/for/sure/out.csv"));
    }

    #[test]
    fn import_rejects_malformed_rows() {
        let err = read_assignment("image_id,anchor_id,gt_index,weight\na,1,0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(read_assignment("a,1,0,1.5\n").is_err());
    }
}
