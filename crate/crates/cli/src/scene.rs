//! Procedural street scene used as the bundled test image.
//!
//! The camera is static: the training frame shows the empty background
//! under slightly dimmer light, and the test frame adds a person in front
//! of it. Edges are softened over a few pixels like a real lens would, and
//! the output is quantized to 8 bits.

use crate::image::{GrayImage, Rect};

/// Default side length of the generated frames.
pub const SCENE_SIZE: usize = 512;
/// Relative brightness of the training frame.
pub const TRAINING_LIGHT: f64 = 0.97;

/// Buildings as `(left, right, top, shade)` in 512-pixel coordinates.
const BUILDINGS: [(f64, f64, f64, f64); 4] = [
    (40.0, 150.0, 80.0, 110.0),
    (180.0, 260.0, 130.0, 140.0),
    (300.0, 420.0, 60.0, 95.0),
    (440.0, 500.0, 150.0, 125.0),
];
const HORIZON: f64 = 200.0;
const BUILDING_BASE: f64 = 260.0;

/// 0 outside, 1 inside, with a smooth ramp of width `w` around `d = 0`.
fn soft_inside(d: f64, w: f64) -> f64 {
    let t = (d / w + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn blend(under: f64, over: f64, alpha: f64) -> f64 {
    under * (1.0 - alpha) + over * alpha
}

fn background(x: f64, y: f64) -> f64 {
    let mut v = if y < HORIZON {
        170.0 + 50.0 * (1.0 - y / HORIZON)
    } else {
        90.0 + 40.0 * (y - HORIZON) / 312.0 + 6.0 * (x / 23.0).sin() * (y / 17.0).cos()
    };
    for &(left, right, top, shade) in &BUILDINGS {
        let inside = soft_inside(
            (x - left)
                .min(right - x)
                .min(y - top)
                .min(BUILDING_BASE - y),
            3.0,
        );
        if inside == 0.0 {
            continue;
        }
        let (wx, wy) = (x % 14.0, y % 18.0);
        let lit = if ((x / 14.0).floor() as i64 + (y / 18.0).floor() as i64) % 2 == 0 {
            12.0
        } else {
            -8.0
        };
        let window = soft_inside((wx - 2.0).min(12.0 - wx).min(wy - 3.0).min(15.0 - wy), 2.0);
        v = blend(v, shade + lit * window + 0.05 * (y - top), inside);
    }
    if y > BUILDING_BASE {
        let half_width =
            (x - 256.0 - (y - BUILDING_BASE) * 0.3).abs() * (512.0 / (y + 50.0)).min(3.0);
        let road = soft_inside(60.0 - half_width, 4.0);
        v = blend(v, 70.0 + 0.02 * x, road);
    }
    v
}

fn person(x: f64, y: f64, v: f64) -> f64 {
    let (cx, cy) = (265.0, 335.0);
    let body = soft_inside((45.0 - (x - cx).abs()).min(y - 370.0).min(455.0 - y), 3.0);
    let v = blend(
        v,
        60.0 + 30.0 * (y - 370.0) / 85.0 + 10.0 * ((x - cx) / 9.0).sin(),
        body,
    );
    let r = ((x - cx).powi(2) + (y - cy).powi(2) / 1.6).sqrt();
    let face = soft_inside(28.0 - r, 3.0);
    let eye = ((x - 255.0).abs().min((x - 275.0).abs()).powi(2) + (y - 328.0).powi(2)).sqrt();
    let eyes = soft_inside(4.0 - eye, 1.5);
    let skin = 190.0 - 0.4 * ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - 120.0 * eyes;
    blend(v, skin, face)
}

fn render(size: usize, light: f64, with_person: bool) -> GrayImage {
    let scale = 512.0 / size as f64;
    GrayImage::from_fn(size, size, |r, c| {
        let (x, y) = (c as f64 * scale, r as f64 * scale);
        let mut v = background(x, y);
        if with_person {
            v = person(x, y, v);
        }
        (v * light).round().clamp(0.0, 255.0)
    })
}

/// The frame to protect: background plus a person.
pub fn test_scene(size: usize) -> GrayImage {
    render(size, 1.0, true)
}

/// The empty background, used to train the KLT.
pub fn training_scene(size: usize) -> GrayImage {
    render(size, TRAINING_LIGHT, false)
}

/// The region around the person in a frame of side `size`.
pub fn sensitive_region(size: usize) -> Rect {
    let s = size as f64 / 512.0;
    let px = |v: f64| (v * s).round() as usize;
    Rect {
        x: px(216.0),
        y: px(296.0),
        w: px(104.0).max(1),
        h: px(164.0).max(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_8_bit_frames() {
        let a = test_scene(64);
        assert_eq!(a, test_scene(64));
        assert!(a
            .pixels()
            .iter()
            .all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        assert_ne!(a, training_scene(64));
    }

    #[test]
    fn person_only_changes_the_sensitive_region() {
        let size = 128;
        let with = render(size, 1.0, true);
        let without = render(size, 1.0, false);
        let rect = sensitive_region(size);
        for r in 0..size {
            for c in 0..size {
                if with.get(r, c) != without.get(r, c) {
                    assert!(
                        rect.intersects(c, r, 1, 1),
                        "pixel ({r},{c}) outside region"
                    );
                }
            }
        }
        assert_ne!(with, without);
    }
}
