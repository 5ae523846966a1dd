//! Minimal line charts rendered straight into a grayscale image.

use crate::image::GrayImage;

const MARGIN: usize = 12;
const SHADES: [f64; 4] = [0.0, 110.0, 170.0, 60.0];

/// Draws each series as a polyline over a shared y range. Series `i` uses
/// a fixed gray level, darkest first.
pub fn line_chart(width: usize, height: usize, series: &[&[f64]]) -> GrayImage {
    let mut img = GrayImage::filled(width, height, 255.0);
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.iter())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || width <= 2 * MARGIN || height <= 2 * MARGIN {
        return img;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = ((width - 2 * MARGIN) as f64, (height - 2 * MARGIN) as f64);

    for c in MARGIN..width - MARGIN {
        img.set(height - MARGIN, c, 0.0);
    }
    for r in MARGIN..=height - MARGIN {
        img.set(r, MARGIN, 0.0);
    }
    if lo < 0.0 && hi > 0.0 {
        let zero = MARGIN as f64 + ph * (hi / span);
        for c in (MARGIN..width - MARGIN).step_by(3) {
            img.set(zero.round() as usize, c, 200.0);
        }
    }

    for (k, s) in series.iter().enumerate() {
        let shade = SHADES[k % SHADES.len()];
        let to_px = |i: usize, v: f64| {
            let x = MARGIN as f64 + pw * i as f64 / (s.len().max(2) - 1) as f64;
            let y = MARGIN as f64 + ph * (hi - v) / span;
            (x, y)
        };
        let points: Vec<(f64, f64)> = s
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| to_px(i, v))
            .collect();
        for pair in points.windows(2) {
            draw_segment(&mut img, pair[0], pair[1], shade);
        }
        if let [only] = points[..] {
            draw_segment(&mut img, only, only, shade);
        }
    }
    img
}

fn draw_segment(img: &mut GrayImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), shade: f64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (r, c) = (y.round() as usize, x.round() as usize);
        if r < img.height() && c < img.width() {
            img.set(r, c, shade);
        }
    }
}
