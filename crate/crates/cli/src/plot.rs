//! Minimal PNG figures: a confusion heatmap and line curves. No text is
//! drawn; the matching CSV carries the numbers.

use image::{ImageBuffer, Rgb, RgbImage};

const CELL: u32 = 32;
const MARGIN: u32 = 8;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Encode as PNG bytes.
pub fn png_bytes(img: &RgbImage) -> anyhow::Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Rows are gt positions, columns predicted positions; values in percent.
/// White is 0, dark blue is 100.
pub fn confusion_heatmap(matrix: &[Vec<f64>]) -> RgbImage {
    let n = matrix.len() as u32;
    let side = 2 * MARGIN + n * CELL;
    let mut img: RgbImage = ImageBuffer::from_pixel(side, side, Rgb([255, 255, 255]));
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v / 100.0).clamp(0.0, 1.0);
            let shade = |lo: f64, hi: f64| (hi + (lo - hi) * t).round() as u8;
            let color = Rgb([shade(8.0, 255.0), shade(48.0, 255.0), shade(107.0, 255.0)]);
            let (x0, y0) = (MARGIN + j as u32 * CELL, MARGIN + i as u32 * CELL);
            for y in y0..y0 + CELL - 1 {
                for x in x0..x0 + CELL - 1 {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

/// One polyline per series over a shared x index; y is clamped to 0..=100.
pub fn curves(series: &[Vec<f64>]) -> RgbImage {
    let (w, h) = (480u32, 320u32);
    let mut img: RgbImage = ImageBuffer::from_pixel(w, h, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    for x in MARGIN..w - MARGIN {
        img.put_pixel(x, h - MARGIN, axis);
    }
    for y in MARGIN..=h - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    let points = series.iter().map(Vec::len).max().unwrap_or(0);
    if points == 0 {
        return img;
    }
    let span_x = (w - 2 * MARGIN - 1) as f64;
    let span_y = (h - 2 * MARGIN - 1) as f64;
    let to_px = |i: usize, v: f64| {
        let x = if points == 1 {
            span_x / 2.0
        } else {
            span_x * i as f64 / (points - 1) as f64
        };
        let y = span_y * v.clamp(0.0, 100.0) / 100.0;
        (
            (MARGIN as f64 + 1.0 + x) as i64,
            (h as f64 - MARGIN as f64 - 1.0 - y) as i64,
        )
    };
    for (s, values) in series.iter().enumerate() {
        let color = Rgb(PALETTE[s % PALETTE.len()]);
        let pts: Vec<(i64, i64)> = values.iter().enumerate().map(|(i, &v)| to_px(i, v)).collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            for dy in -2..=2 {
                for dx in -2..=2 {
                    put(&mut img, x + dx, y + dy, color);
                }
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        put(img, x, y, color);
    }
}
