#![allow(dead_code)]

use anchorlens_core::anchors::{PyramidConfig, PyramidLevel, Template};
use anchorlens_core::{BBox, ImageExtent};
use proptest::prelude::*;

pub const EXTENT: u32 = 64;

/// Box with integer corners inside `[0, max]`.
pub fn int_box(max: i32) -> impl Strategy<Value = BBox> {
    (0..max, 0..max)
        .prop_flat_map(move |(x0, y0)| (Just(x0), Just(y0), (x0 + 1)..=max, (y0 + 1)..=max))
        .prop_map(|(x0, y0, x1, y1)| BBox::new(x0.into(), y0.into(), x1.into(), y1.into()).unwrap())
}

/// Box with real corners, positive size, roughly inside a 64x64 image.
pub fn real_box() -> impl Strategy<Value = BBox> {
    (0.0..60.0f64, 0.0..60.0f64, 1.0..40.0f64, 1.0..40.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn level() -> impl Strategy<Value = PyramidLevel> {
    (0..4u32, 0..4u32, prop::collection::vec((4..48u32, 4..48u32), 1..4)).prop_map(|(a, b, t)| {
        let (gw, gh) = (1u32 << a, 1u32 << b);
        PyramidLevel {
            grid_w: gw,
            grid_h: gh,
            stride_x: f64::from(EXTENT / gw),
            stride_y: f64::from(EXTENT / gh),
            templates: t
                .into_iter()
                .map(|(w, h)| Template(w.into(), h.into()))
                .collect(),
        }
    })
}

/// 1 to 3 levels over a 64x64 image, grids of 1, 2, 4 or 8 cells per axis.
pub fn pyramid() -> impl Strategy<Value = PyramidConfig> {
    prop::collection::vec(level(), 1..4).prop_map(|levels| PyramidConfig {
        extent: ImageExtent::new(EXTENT, EXTENT).unwrap(),
        levels,
    })
}

/// Overlap fraction measured by counting cell centers on a `cells`-way
/// subdivision of the two boxes' hull. Per axis the count factorizes, so
/// the 2-D count is the product of two 1-D counts.
pub fn raster_iou(a: &BBox, b: &BBox, cells: usize) -> f64 {
    let axis = |lo: f64, hi: f64, ranges: &[(f64, f64)]| -> Vec<u64> {
        let step = (hi - lo) / cells as f64;
        let mut counts = vec![0u64; ranges.len()];
        for k in 0..cells {
            let c = lo + (k as f64 + 0.5) * step;
            for (slot, &(r0, r1)) in counts.iter_mut().zip(ranges) {
                if c >= r0 && c <= r1 {
                    *slot += 1;
                }
            }
        }
        counts
    };
    let ix = (a.x_min().max(b.x_min()), a.x_max().min(b.x_max()));
    let iy = (a.y_min().max(b.y_min()), a.y_max().min(b.y_max()));
    let xs = axis(
        a.x_min().min(b.x_min()),
        a.x_max().max(b.x_max()),
        &[(a.x_min(), a.x_max()), (b.x_min(), b.x_max()), ix],
    );
    let ys = axis(
        a.y_min().min(b.y_min()),
        a.y_max().max(b.y_max()),
        &[(a.y_min(), a.y_max()), (b.y_min(), b.y_max()), iy],
    );
    let inter = if ix.0 < ix.1 && iy.0 < iy.1 { xs[2] * ys[2] } else { 0 };
    let union = xs[0] * ys[0] + xs[1] * ys[1] - inter;
    inter as f64 / union as f64
}

/// Logistic slope found by bisection so that the weight at 0.4 is 0.001.
pub fn bisect_slope(alpha: f64, beta: f64) -> f64 {
    let f = |a: f64| 1.0 / (1.0 + (a * alpha).exp());
    let (mut lo, mut hi) = (1e-6, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The three MMD conditions evaluated literally for frame `t`.
pub fn mmd_by_substitution(p: &[f64], t: usize, gamma_min: f64, gamma_ratio: f64, gamma_max: f64) -> bool {
    let neighbors_high = p[t - 1] >= gamma_min && p[t + 1] >= gamma_min;
    let sharp_drop = p[t - 1] > 0.0 && p[t] / p[t - 1] <= gamma_ratio;
    let missed = p[t] < gamma_max;
    neighbors_high && sharp_drop && missed
}
