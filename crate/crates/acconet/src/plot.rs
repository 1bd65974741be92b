//! Minimal PR-curve plotting: axes, gridlines, and one polyline per curve
//! rendered straight into an RGB image.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::PrPoint;

const WIDTH: u32 = 800;
const HEIGHT: u32 = 600;
const MARGIN: u32 = 60;

const PALETTE: [[u8; 3]; 6] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

struct Canvas {
    img: image::RgbImage,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            img: image::RgbImage::from_pixel(WIDTH, HEIGHT, image::Rgb([255, 255, 255])),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, color);
            // thicken slightly for visibility
            self.put(x.round() as i64, y.round() as i64 + 1, color);
        }
    }
}

/// Map (recall, precision) in [0,1]^2 to pixel coordinates.
fn to_px(recall: f64, precision: f64) -> (f64, f64) {
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    (
        MARGIN as f64 + recall.clamp(0.0, 1.0) * plot_w,
        MARGIN as f64 + (1.0 - precision.clamp(0.0, 1.0)) * plot_h,
    )
}

/// Render precision (y) against recall (x) with 0.2-step gridlines.
pub fn render_pr_plot(curves: &[(String, Vec<PrPoint>)], path: &Path) -> Result<()> {
    let mut canvas = Canvas::new();
    let grid = [120u8, 120, 120];
    let axis = [0u8, 0, 0];
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let (x0, y0) = to_px(v, 0.0);
        let (x1, y1) = to_px(v, 1.0);
        canvas.line(x0, y0, x1, y1, grid);
        let (x0, y0) = to_px(0.0, v);
        let (x1, y1) = to_px(1.0, v);
        canvas.line(x0, y0, x1, y1, grid);
    }
    // axes frame
    let corners = [
        to_px(0.0, 0.0),
        to_px(1.0, 0.0),
        to_px(1.0, 1.0),
        to_px(0.0, 1.0),
    ];
    for k in 0..4 {
        let (x0, y0) = corners[k];
        let (x1, y1) = corners[(k + 1) % 4];
        canvas.line(x0, y0, x1, y1, axis);
    }
    for (ci, (_, points)) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut sorted: Vec<&PrPoint> = points.iter().collect();
        sorted.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
        for pair in sorted.windows(2) {
            let (x0, y0) = to_px(pair[0].recall, pair[0].precision);
            let (x1, y1) = to_px(pair[1].recall, pair[1].precision);
            canvas.line(x0, y0, x1, y1, color);
        }
    }
    canvas.img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
