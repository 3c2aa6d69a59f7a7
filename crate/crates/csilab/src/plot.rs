//! Static PNG line charts for sweep results. Deliberately small: axes,
//! ticks with numeric labels, one polyline per series, and a color legend
//! keyed by series index.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{CsiError, Result};

pub const PALETTE: [[u8; 3]; 6] = [
    [214, 69, 65],
    [31, 119, 180],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const W: u32 = 640;
const H: u32 = 480;
const ML: i64 = 70; // left margin
const MR: i64 = 20;
const MT: i64 = 20;
const MB: i64 = 50;

// 3x5 glyphs, row-major bits, for numeric tick labels
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'e' => [0b000, 0b111, 0b110, 0b100, 0b111],
        ' ' => [0; 5],
        _ => return None,
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(g) = glyph(ch) {
            for (ry, row) in g.iter().enumerate() {
                for rx in 0..3 {
                    if row >> (2 - rx) & 1 == 1 {
                        // 2x scale for legibility
                        for dy in 0..2 {
                            for dx in 0..2 {
                                put(
                                    img,
                                    cx + 2 * rx as i64 + dx,
                                    y + 2 * ry as i64 + dy,
                                    color,
                                );
                            }
                        }
                    }
                }
            }
        }
        cx += 8;
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
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

fn draw_marker(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.1e}")
    }
}

/// Render one chart; every series shares the axes. Colors follow
/// [`PALETTE`] in series order, matching the legend swatches top right.
pub fn render_line_chart(path: &Path, series: &[Series]) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(CsiError::InvalidArgument("nothing to plot".into()));
    }
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(CsiError::InvalidArgument("non-finite plot point".into()));
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if xmax == xmin {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax == ymin {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let xpad = (xmax - xmin) * 0.05;
    let ypad = (ymax - ymin) * 0.05;
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    let px = |x: f64| ML + ((x - xmin) / (xmax - xmin) * (W as i64 - ML - MR) as f64) as i64;
    let py = |y: f64| (H as i64 - MB) - ((y - ymin) / (ymax - ymin) * (H as i64 - MT - MB) as f64) as i64;

    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = [0, 0, 0];
    let grey = [210, 210, 210];

    // grid and ticks
    for i in 0..=5 {
        let xv = xmin + (xmax - xmin) * i as f64 / 5.0;
        let yv = ymin + (ymax - ymin) * i as f64 / 5.0;
        let gx = px(xv);
        let gy = py(yv);
        draw_line(&mut img, gx, MT, gx, H as i64 - MB, grey);
        draw_line(&mut img, ML, gy, W as i64 - MR, gy, grey);
        draw_text(&mut img, gx - 12, H as i64 - MB + 8, &tick_label(xv), black);
        draw_text(&mut img, 4, gy - 5, &tick_label(yv), black);
    }
    // axes
    draw_line(&mut img, ML, MT, ML, H as i64 - MB, black);
    draw_line(&mut img, ML, H as i64 - MB, W as i64 - MR, H as i64 - MB, black);

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts: Vec<(i64, i64)> = s.points.iter().map(|&(x, y)| (px(x), py(y))).collect();
        pts.sort();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0].0, w[0].1, w[1].0, w[1].1, color);
        }
        for &(x, y) in &pts {
            draw_marker(&mut img, x, y, color);
        }
        // legend: swatch plus series index
        let ly = MT + 6 + 16 * si as i64;
        let lx = W as i64 - MR - 60;
        for dy in 0..10 {
            for dx in 0..10 {
                put(&mut img, lx + dx, ly + dy, color);
            }
        }
        draw_text(&mut img, lx + 14, ly, &tick_label((si + 1) as f64), black);
    }

    img.save(path)
        .map_err(|e| CsiError::Io(std::io::Error::other(e)))?;
    Ok(())
}
