//! Small synthetic images with known topology.
//!
//! Slender features carry a gray value of 0.8: above the 0.5 threshold, but
//! low enough that a degree-2 smoothing on the voxel mesh drops a
//! one-voxel-wide feature below it.

use alloc::vec;
use alloc::vec::Vec;

use crate::voxel::{BinaryImage, Shape, VoxelGrid};

/// Gray value of one-voxel-wide features.
pub const SLENDER: f64 = 0.8;

/// A window comparison fixture on a subdivided grid.
#[derive(Debug, Clone)]
pub struct WindowCase {
    pub v: BinaryImage,
    pub s: BinaryImage,
    /// Cells of the window outside the outer ring.
    pub inner: BinaryImage,
}

fn paint_bits(img: &mut BinaryImage, x: core::ops::Range<usize>, y: core::ops::Range<usize>, v: bool) {
    for yy in y {
        for xx in x.clone() {
            img.set([xx, yy, 0], v);
        }
    }
}

fn window_base() -> (BinaryImage, BinaryImage) {
    // 7x7 voxel window with r = 3, viewed at n_sub = 2. A ring (χ = 0) and
    // a bar (χ = 1).
    let mut v = BinaryImage::filled(Shape::d2(7, 7), false);
    paint_bits(&mut v, 1..4, 3..6, true);
    v.set([2, 4, 0], false);
    paint_bits(&mut v, 5..6, 2..5, true);
    let v = v.upsample(2);
    let mut inner = BinaryImage::filled(Shape::d2(7, 7), false);
    paint_bits(&mut inner, 1..6, 1..6, true);
    (v, inner.upsample(2))
}

fn smoothed_like(v: &BinaryImage) -> BinaryImage {
    let mut s = v.clone();
    for c in [[2, 6], [7, 6], [2, 11], [7, 11]] {
        s.set([c[0], c[1], 0], false);
    }
    s.set([10, 4, 0], false);
    s.set([11, 9, 0], false);
    s.set([12, 6, 0], true);
    s.set([12, 7, 0], true);
    s
}

/// Same topology, different shapes.
pub fn window_equivalent() -> WindowCase {
    let (v, inner) = window_base();
    let s = smoothed_like(&v);
    WindowCase { v, s, inner }
}

/// The bar is missing from the smooth image.
pub fn window_missing_region() -> WindowCase {
    let (v, inner) = window_base();
    let mut s = smoothed_like(&v);
    paint_bits(&mut s, 9..14, 0..14, false);
    WindowCase { v, s, inner }
}

/// A boundary spills into the window's bottom border in the smooth image.
pub fn window_spillover() -> WindowCase {
    let (v, inner) = window_base();
    let mut s = smoothed_like(&v);
    paint_bits(&mut s, 10..14, 0..2, true);
    WindowCase { v, s, inner }
}

fn paint(values: &mut [f64], nx: usize, x: core::ops::Range<usize>, y: core::ops::Range<usize>, g: f64) {
    for yy in y {
        for xx in x.clone() {
            values[yy * nx + xx] = g;
        }
    }
}

/// 32x32 specimen on the unit square: a solid right pillar and a left
/// pillar whose halves are joined by a one-voxel bridge six voxels long.
pub fn bridge_image() -> VoxelGrid {
    let n = 32;
    let mut g = vec![0.0; n * n];
    paint(&mut g, n, 18..28, 0..32, 1.0);
    paint(&mut g, n, 4..12, 0..13, 1.0);
    paint(&mut g, n, 4..12, 19..32, 1.0);
    paint(&mut g, n, 7..8, 13..19, SLENDER);
    VoxelGrid::new(Shape::d2(n, n), &[1.0 / n as f64; 2], g).expect("valid image")
}

/// Left-branch outlet of [`channel_image`] on the top side, as an x range.
pub const CHANNEL_LEFT_OUTLET: (f64, f64) = (4.0 / 32.0, 10.0 / 32.0);

/// 32x32 fluid domain on the unit square: a trunk from the bottom inlet
/// splits into two branches reaching the top; the left branch narrows to a
/// one-voxel pinch six voxels long.
pub fn channel_image() -> VoxelGrid {
    let n = 32;
    let mut g = vec![0.0; n * n];
    paint(&mut g, n, 12..20, 0..12, 1.0);
    paint(&mut g, n, 4..28, 12..16, 1.0);
    paint(&mut g, n, 4..10, 16..21, 1.0);
    paint(&mut g, n, 7..8, 21..27, SLENDER);
    paint(&mut g, n, 4..10, 27..32, 1.0);
    paint(&mut g, n, 22..28, 16..32, 1.0);
    VoxelGrid::new(Shape::d2(n, n), &[1.0 / n as f64; 2], g).expect("valid image")
}

/// 35x35 image with unit voxels: a block holding a one-voxel slit (a hole
/// that smoothing fills) and a pillar cut by a one-voxel bridge (a link
/// that smoothing breaks), plus a plain disc.
pub fn repair_image() -> VoxelGrid {
    let n = 35;
    let mut g = vec![0.0; n * n];
    paint(&mut g, n, 3..15, 3..32, 1.0);
    paint(&mut g, n, 8..9, 7..28, 1.0 - SLENDER);
    paint(&mut g, n, 20..31, 3..14, 1.0);
    paint(&mut g, n, 20..31, 18..24, 1.0);
    paint(&mut g, n, 25..26, 14..18, SLENDER);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - 25.0, y as f64 - 29.0);
            if dx * dx + dy * dy <= 9.0 {
                g[y * n + x] = 1.0;
            }
        }
    }
    VoxelGrid::unit(Shape::d2(n, n), g).expect("valid image")
}

/// Gray image from text rows, top row first: `#` solid, `+` slender
/// solid, `-` slender gap, anything else empty.
pub fn from_rows_gray(rows: &[&str]) -> VoxelGrid {
    let ny = rows.len();
    let nx = rows[0].len();
    let mut v: Vec<f64> = vec![0.0; nx * ny];
    for (r, line) in rows.iter().enumerate() {
        let y = ny - 1 - r;
        for (x, ch) in line.chars().enumerate() {
            v[y * nx + x] = match ch {
                '#' => 1.0,
                '+' => SLENDER,
                '-' => 1.0 - SLENDER,
                _ => 0.0,
            };
        }
    }
    VoxelGrid::unit(Shape::d2(nx, ny), v).expect("rectangular rows")
}
