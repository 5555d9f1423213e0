//! Bare raster plots; no text, just geometry.

use super::ConfusionMatrix;
use crate::raster::Image;

const CELL: usize = 16;

/// Row-normalized heatmap, one `CELL x CELL` block per matrix entry.
/// Brighter means a larger share of the true class's samples.
pub fn confusion_heatmap(m: &ConfusionMatrix) -> Image {
    let n = m.classes.len().max(1);
    let mut img = Image::filled(n * CELL, n * CELL, 0.0);
    for (i, row) in m.counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &c) in row.iter().enumerate() {
            let v = if total > 0 { c as f32 / total as f32 } else { 0.0 };
            for y in i * CELL..(i + 1) * CELL - 1 {
                for x in j * CELL..(j + 1) * CELL - 1 {
                    img.set(x, y, 0, v);
                }
            }
        }
    }
    img
}

/// Vertical bars for values in `[0, 1]`, left to right, with a faint
/// gridline every 0.1.
pub fn accuracy_bars(values: &[f64]) -> Image {
    const H: usize = 200;
    const W: usize = 24;
    let mut img = Image::filled(values.len().max(1) * W, H + 1, 0.0);
    for t in 0..=10 {
        let y = H - t * H / 10;
        for x in 0..img.width() {
            img.set(x, y, 0, 0.25);
        }
    }
    for (i, v) in values.iter().enumerate() {
        let h = (v.clamp(0.0, 1.0) * H as f64).round() as usize;
        for y in H - h..=H {
            for x in i * W + 3..(i + 1) * W - 3 {
                img.set(x, y, 0, 0.9);
            }
        }
    }
    img
}
