//! Minimal raster plots for training histories. No text is drawn; the CSV
//! next to each plot carries the numbers.

use crate::nn::EpochRecord;
use crate::render::{ImageTensor, Rgb};

const AXIS: Rgb = Rgb([40, 40, 40]);
const GRID: Rgb = Rgb([225, 225, 225]);
pub const TRAIN_COLOR: Rgb = Rgb([31, 119, 180]);
pub const VAL_COLOR: Rgb = Rgb([255, 127, 14]);

/// Draws a segment with Bresenham's algorithm, clipped to the image.
pub fn line(img: &mut ImageTensor, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        img.put(x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// A panel with one polyline per series, y scaled to `[y_min, y_max]`.
pub fn line_panel(width: u32, height: u32, series: &[(&[f64], Rgb)], y_min: f64, y_max: f64) -> ImageTensor {
    let mut img = ImageTensor::filled(width, height, Rgb::WHITE);
    let margin = 10i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    if w <= 1 || h <= 1 {
        return img;
    }
    for k in 1..4 {
        let y = margin + h * k / 4;
        line(&mut img, (margin, y), (margin + w, y), GRID);
    }
    line(&mut img, (margin, margin), (margin, margin + h), AXIS);
    line(&mut img, (margin, margin + h), (margin + w, margin + h), AXIS);
    let span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let n = series.iter().map(|(v, _)| v.len()).max().unwrap_or(0);
    let to_px = |i: usize, v: f64| {
        let x = if n > 1 {
            margin + (w * i as i64) / (n as i64 - 1)
        } else {
            margin
        };
        let frac = ((v - y_min) / span).clamp(0.0, 1.0);
        let y = margin + h - (frac * h as f64).round() as i64;
        (x, y)
    };
    for (values, color) in series {
        let pts: Vec<(i64, i64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| to_px(i, v))
            .collect();
        if let [only] = pts[..] {
            line(&mut img, only, only, *color);
        }
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], *color);
        }
    }
    img
}

/// Loss panel (left) and accuracy panel (right); train in blue, validation
/// in orange. Loss is scaled to its maximum, accuracy to `[0, 1]`.
pub fn history_plot(history: &[EpochRecord]) -> ImageTensor {
    let (pw, ph) = (320u32, 240u32);
    let train_loss: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
    let val_loss: Vec<f64> = history.iter().map(|r| r.val_loss).collect();
    let train_acc: Vec<f64> = history.iter().map(|r| r.train_acc).collect();
    let val_acc: Vec<f64> = history.iter().map(|r| r.val_acc).collect();
    let max_loss = train_loss
        .iter()
        .chain(&val_loss)
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let loss = line_panel(
        pw,
        ph,
        &[(&train_loss, TRAIN_COLOR), (&val_loss, VAL_COLOR)],
        0.0,
        max_loss.max(1e-12),
    );
    let acc = line_panel(pw, ph, &[(&train_acc, TRAIN_COLOR), (&val_acc, VAL_COLOR)], 0.0, 1.0);
    let mut out = ImageTensor::filled(2 * pw, ph, Rgb::WHITE);
    for (x, y, c) in loss.pixels() {
        out.set(x, y, c);
    }
    for (x, y, c) in acc.pixels() {
        out.set(x + pw, y, c);
    }
    out
}
