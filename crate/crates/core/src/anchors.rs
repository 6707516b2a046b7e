//! Multi-level anchor generation and the neighbor taxonomy between anchors.
//!
//! Anchors are enumerated level-major, then row-major over cells (`cell_j` is
//! the row, `cell_i` the column), then by template index. The position in that
//! enumeration is the anchor id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, GeometryError, ImageExtent};

/// Relative tolerance used when comparing template areas and aspect ratios.
const SHAPE_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("pyramid has no levels")]
    NoLevels,
    #[error("levels[{level}]: grid must be at least 1x1 (got {grid_w}x{grid_h})")]
    EmptyGrid { level: usize, grid_w: u32, grid_h: u32 },
    #[error("levels[{level}]: strides must be positive and finite (got {stride_x}, {stride_y})")]
    BadStride {
        level: usize,
        stride_x: f64,
        stride_y: f64,
    },
    #[error("levels[{level}]: template list is empty")]
    NoTemplates { level: usize },
    #[error("levels[{level}].templates[{template}]: width and height must be positive (got {width}x{height})")]
    BadTemplate {
        level: usize,
        template: usize,
        width: f64,
        height: f64,
    },
    #[error("levels[{level}]: grid spans {span_x}x{span_y} px which misses the {width}x{height} image by more than one stride")]
    SpanMismatch {
        level: usize,
        span_x: f64,
        span_y: f64,
        width: u32,
        height: u32,
    },
    #[error("anchor {0} compared with itself")]
    SelfPair(usize),
    #[error("unknown anchor id {0}")]
    UnknownAnchor(usize),
    #[error("invalid pyramid config: {0}")]
    Parse(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Anchor template as `(width, height)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Template(pub f64, pub f64);

impl Template {
    pub fn width(&self) -> f64 {
        self.0
    }

    pub fn height(&self) -> f64 {
        self.1
    }

    pub fn area(&self) -> f64 {
        self.0 * self.1
    }

    pub fn aspect(&self) -> f64 {
        self.0 / self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub grid_w: u32,
    pub grid_h: u32,
    pub stride_x: f64,
    pub stride_y: f64,
    pub templates: Vec<Template>,
}

impl PyramidLevel {
    pub fn anchor_count(&self) -> usize {
        self.grid_w as usize * self.grid_h as usize * self.templates.len()
    }

    /// Size rank of every template: the number of distinct smaller areas.
    fn size_ranks(&self) -> Vec<usize> {
        let mut areas: Vec<f64> = self.templates.iter().map(Template::area).collect();
        areas.sort_by(f64::total_cmp);
        let mut distinct: Vec<f64> = Vec::new();
        for a in areas {
            if !distinct.last().is_some_and(|&d| approx_eq(d, a)) {
                distinct.push(a);
            }
        }
        self.templates
            .iter()
            .map(|t| {
                distinct
                    .iter()
                    .position(|&d| approx_eq(d, t.area()))
                    .expect("area is in its own distinct list")
            })
            .collect()
    }
}

/// Levels ordered from finest to coarsest grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub extent: ImageExtent,
    pub levels: Vec<PyramidLevel>,
}

impl PyramidConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, AnchorError> {
        let config: PyramidConfig =
            toml::from_str(text).map_err(|e| AnchorError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pyramid config always serializes")
    }

    /// The bundled SSD-300-like pyramid (8732 anchors).
    pub fn ssd300_like() -> Self {
        Self::from_toml_str(include_str!("../../../configs/ssd300_like.toml"))
            .expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.levels.is_empty() {
            return Err(AnchorError::NoLevels);
        }
        for (level, l) in self.levels.iter().enumerate() {
            if l.grid_w == 0 || l.grid_h == 0 {
                return Err(AnchorError::EmptyGrid {
                    level,
                    grid_w: l.grid_w,
                    grid_h: l.grid_h,
                });
            }
            let stride_ok = |s: f64| s.is_finite() && s > 0.0;
            if !stride_ok(l.stride_x) || !stride_ok(l.stride_y) {
                return Err(AnchorError::BadStride {
                    level,
                    stride_x: l.stride_x,
                    stride_y: l.stride_y,
                });
            }
            if l.templates.is_empty() {
                return Err(AnchorError::NoTemplates { level });
            }
            for (template, t) in l.templates.iter().enumerate() {
                let ok = |v: f64| v.is_finite() && v > 0.0;
                if !ok(t.0) || !ok(t.1) {
                    return Err(AnchorError::BadTemplate {
                        level,
                        template,
                        width: t.0,
                        height: t.1,
                    });
                }
            }
            let span_x = f64::from(l.grid_w) * l.stride_x;
            let span_y = f64::from(l.grid_h) * l.stride_y;
            let (width, height) = (self.extent.width(), self.extent.height());
            if (span_x - f64::from(width)).abs() > l.stride_x
                || (span_y - f64::from(height)).abs() > l.stride_y
            {
                return Err(AnchorError::SpanMismatch {
                    level,
                    span_x,
                    span_y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }

    pub fn anchor_count(&self) -> usize {
        self.levels.iter().map(PyramidLevel::anchor_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub id: usize,
    pub level: usize,
    pub cell_i: u32,
    pub cell_j: u32,
    pub template: usize,
    pub bbox: BBox,
}

impl Anchor {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// Kind of boundary between two neighboring anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NeighborKind {
    ScaleBoundary,
    GridBoundary,
    AspectBoundary,
}

impl NeighborKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NeighborKind::ScaleBoundary => "scale",
            NeighborKind::GridBoundary => "grid",
            NeighborKind::AspectBoundary => "aspect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scale" => Some(NeighborKind::ScaleBoundary),
            "grid" => Some(NeighborKind::GridBoundary),
            "aspect" => Some(NeighborKind::AspectBoundary),
            _ => None,
        }
    }
}

impl std::fmt::Display for NeighborKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A generated anchor set together with the config it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    config: PyramidConfig,
    anchors: Vec<Anchor>,
    size_ranks: Vec<Vec<usize>>,
}

pub fn generate_anchors(config: &PyramidConfig) -> Result<AnchorSet, AnchorError> {
    config.validate()?;
    let mut anchors = Vec::with_capacity(config.anchor_count());
    for (level, l) in config.levels.iter().enumerate() {
        for cell_j in 0..l.grid_h {
            for cell_i in 0..l.grid_w {
                let cx = (f64::from(cell_i) + 0.5) * l.stride_x;
                let cy = (f64::from(cell_j) + 0.5) * l.stride_y;
                for (template, t) in l.templates.iter().enumerate() {
                    anchors.push(Anchor {
                        id: anchors.len(),
                        level,
                        cell_i,
                        cell_j,
                        template,
                        bbox: BBox::from_center(cx, cy, t.width(), t.height())?,
                    });
                }
            }
        }
    }
    let size_ranks = config.levels.iter().map(PyramidLevel::size_ranks).collect();
    Ok(AnchorSet {
        config: config.clone(),
        anchors,
        size_ranks,
    })
}

impl AnchorSet {
    pub fn config(&self) -> &PyramidConfig {
        &self.config
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Anchor> {
        self.anchors.get(id)
    }

    pub fn level(&self, index: usize) -> &PyramidLevel {
        &self.config.levels[index]
    }

    /// Anchors of one cell on one level, in template order.
    pub fn cell_anchors(&self, level: usize, cell_i: u32, cell_j: u32) -> &[Anchor] {
        let offset: usize = self.config.levels[..level]
            .iter()
            .map(PyramidLevel::anchor_count)
            .sum();
        let l = &self.config.levels[level];
        let per_cell = l.templates.len();
        let start = offset + (cell_j as usize * l.grid_w as usize + cell_i as usize) * per_cell;
        &self.anchors[start..start + per_cell]
    }

    /// Classify the boundary between two distinct anchors of this set.
    pub fn neighbor_kind(&self, a: &Anchor, b: &Anchor) -> Result<Option<NeighborKind>, AnchorError> {
        if a.id == b.id {
            return Err(AnchorError::SelfPair(a.id));
        }
        for x in [a, b] {
            if self.anchors.get(x.id) != Some(x) {
                return Err(AnchorError::UnknownAnchor(x.id));
            }
        }
        if a.level == b.level {
            let same_cell = a.cell_i == b.cell_i && a.cell_j == b.cell_j;
            if a.template == b.template {
                let di = a.cell_i.abs_diff(b.cell_i);
                let dj = a.cell_j.abs_diff(b.cell_j);
                return Ok((di + dj == 1).then_some(NeighborKind::GridBoundary));
            }
            if !same_cell {
                return Ok(None);
            }
            let ranks = &self.size_ranks[a.level];
            if ranks[a.template] != ranks[b.template] {
                return Ok(Some(NeighborKind::ScaleBoundary));
            }
            let l = &self.config.levels[a.level];
            let (ta, tb) = (l.templates[a.template], l.templates[b.template]);
            return Ok((!approx_eq(ta.aspect(), tb.aspect())).then_some(NeighborKind::AspectBoundary));
        }
        if a.level.abs_diff(b.level) != 1 {
            return Ok(None);
        }
        let (la, lb) = (self.level(a.level), self.level(b.level));
        let coarse_x = la.stride_x.max(lb.stride_x);
        let coarse_y = la.stride_y.max(lb.stride_y);
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let close = (ax - bx).abs() <= coarse_x && (ay - by).abs() <= coarse_y;
        Ok(close.then_some(NeighborKind::ScaleBoundary))
    }

    pub fn neighbor_kind_by_id(&self, a: usize, b: usize) -> Result<Option<NeighborKind>, AnchorError> {
        let fa = *self.get(a).ok_or(AnchorError::UnknownAnchor(a))?;
        let fb = *self.get(b).ok_or(AnchorError::UnknownAnchor(b))?;
        self.neighbor_kind(&fa, &fb)
    }

    /// Anchor with the highest IOU against `target`; ties go to the smallest id.
    pub fn best_anchor_for_box(&self, target: &BBox) -> Option<(&Anchor, f64)> {
        best_anchor_for_box(&self.anchors, target)
    }
}

/// Highest-IOU anchor in any slice, tie-broken by smallest id so the result
/// does not depend on slice order.
pub fn best_anchor_for_box<'a>(anchors: &'a [Anchor], target: &BBox) -> Option<(&'a Anchor, f64)> {
    anchors
        .iter()
        .map(|a| (a, iou(&a.bbox, target)))
        .max_by(|(a, ia), (b, ib)| ia.total_cmp(ib).then_with(|| b.id.cmp(&a.id)))
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= SHAPE_RTOL * a.abs().max(b.abs())
}
