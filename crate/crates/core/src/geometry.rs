//! Axis-aligned boxes, IOU and the axis-aligned warps used for probing.
//!
//! Coordinates are continuous pixels. A box covers `[x_min, x_max) x [y_min, y_max)`
//! and its area is `(x_max - x_min) * (y_max - y_min)`; there is no `+1` pixel
//! convention anywhere in this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box ({x_min}, {y_min}, {x_max}, {y_max}) has non-positive area or non-finite coordinates")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("warp scale factors must be positive and finite (sx={sx}, sy={sy})")]
    NonPositiveScale { sx: f64, sy: f64 },
    #[error("warp translation and center must be finite")]
    NonFiniteWarp,
    #[error("image extent must be at least 1x1 (got {width}x{height})")]
    EmptyExtent { width: u32, height: u32 },
}

/// Axis-aligned box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box of the given size centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x_min, y_min, x_max, y_max).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union. Boxes that only touch along an edge have IOU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Positive image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawExtent")]
pub struct ImageExtent {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct RawExtent {
    width: u32,
    height: u32,
}

impl TryFrom<RawExtent> for ImageExtent {
    type Error = GeometryError;

    fn try_from(raw: RawExtent) -> Result<Self, Self::Error> {
        ImageExtent::new(raw.width, raw.height)
    }
}

impl ImageExtent {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyExtent { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (f64::from(self.width) / 2.0, f64::from(self.height) / 2.0)
    }
}

/// Intersection of `b` with the image rectangle, or `None` when nothing with
/// positive area remains.
pub fn clip_box(b: &BBox, extent: ImageExtent) -> Option<BBox> {
    let x_min = b.x_min.max(0.0);
    let y_min = b.y_min.max(0.0);
    let x_max = b.x_max.min(f64::from(extent.width));
    let y_max = b.y_max.min(f64::from(extent.height));
    BBox::new(x_min, y_min, x_max, y_max).ok()
}

/// Per-axis scale about a pivot followed by a translation:
/// `p' = c + diag(sx, sy) (p - c) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisWarp {
    sx: f64,
    sy: f64,
    tx: f64,
    ty: f64,
    cx: f64,
    cy: f64,
}

impl AxisWarp {
    pub fn new(sx: f64, sy: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sy > 0.0) {
            return Err(GeometryError::NonPositiveScale { sx, sy });
        }
        if ![tx, ty, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteWarp);
        }
        Ok(Self {
            sx,
            sy,
            tx,
            ty,
            cx,
            cy,
        })
    }

    pub fn identity_about(cx: f64, cy: f64) -> Self {
        Self {
            sx: 1.0,
            sy: 1.0,
            tx: 0.0,
            ty: 0.0,
            cx,
            cy,
        }
    }

    pub fn sx(&self) -> f64 {
        self.sx
    }

    pub fn sy(&self) -> f64 {
        self.sy
    }

    pub fn tx(&self) -> f64 {
        self.tx
    }

    pub fn ty(&self) -> f64 {
        self.ty
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn is_identity(&self) -> bool {
        self.sx == 1.0 && self.sy == 1.0 && self.tx == 0.0 && self.ty == 0.0
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.cx + self.sx * (x - self.cx) + self.tx,
            self.cy + self.sy * (y - self.cy) + self.ty,
        )
    }
}

pub fn apply_warp(w: &AxisWarp, b: &BBox) -> BBox {
    if w.is_identity() {
        return *b;
    }
    let (x0, y0) = w.map_point(b.x_min, b.y_min);
    let (x1, y1) = w.map_point(b.x_max, b.y_max);
    // Positive scales keep corner order.
    BBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    }
}
