use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::classes::{background_style, Shape, Texture};

/// Float RGB canvas, values in 0..=255, row-major with interleaved channels.
pub(crate) struct Canvas {
    pub size: usize,
    pub px: Vec<[f64; 3]>,
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

pub(crate) fn render_background<R: Rng>(bg: usize, size: usize, rng: &mut R) -> Canvas {
    let (texture, c1, c2) = background_style(bg);
    let s = size as f64;
    let phase_x: f64 = rng.gen_range(0.0..s);
    let phase_y: f64 = rng.gen_range(0.0..s);
    let period: f64 = rng.gen_range(0.12..0.2) * s;
    let noise = Normal::new(0.0, 7.0).unwrap();
    // a few random plane waves give smooth blotches
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let ang: f64 = rng.gen_range(0.0..PI);
            let freq: f64 = rng.gen_range(1.5..3.5) * 2.0 * PI / s;
            (ang.cos() * freq, ang.sin() * freq, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let (cx, cy) = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s);

    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = match texture {
                Texture::Speckle => {
                    if rng.gen_bool(0.35) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Texture::Blotches => {
                    let v: f64 = waves
                        .iter()
                        .map(|(kx, ky, ph)| (kx * xf + ky * yf + ph).sin())
                        .sum::<f64>()
                        / 3.0;
                    0.5 + 1.2 * v
                }
                Texture::Bricks => {
                    let row_h = period * 0.6;
                    let row = ((yf + phase_y) / row_h).floor();
                    let shift = if row as i64 % 2 == 0 { 0.0 } else { period / 2.0 };
                    let in_mortar_y = (yf + phase_y) % row_h < 1.0;
                    let in_mortar_x = (xf + phase_x + shift) % (period * 1.2) < 1.0;
                    if in_mortar_x || in_mortar_y {
                        1.0
                    } else {
                        0.0
                    }
                }
                Texture::GradientVertical => yf / s + 0.15 * ((xf + phase_x) / period).sin(),
                Texture::GradientDiagonal => (xf + s - yf) / (2.0 * s),
                Texture::Radial => ((xf - cx).hypot(yf - cy) / (0.7 * s)).min(1.0),
                Texture::Waves => {
                    0.5 + 0.5 * ((yf + phase_y) * 2.0 * PI / period + 1.5 * (xf * 2.0 * PI / s).sin()).sin()
                }
                Texture::StripesHorizontal => stripe(yf + phase_y, period),
                Texture::StripesVertical => stripe(xf + phase_x, period),
                Texture::StripesDiagonal => stripe((xf + yf + phase_x) / 2f64.sqrt(), period),
                Texture::Checker => {
                    let a = ((xf + phase_x) / period).floor() as i64;
                    let b = ((yf + phase_y) / period).floor() as i64;
                    ((a + b).rem_euclid(2)) as f64
                }
            };
            let mut c = lerp(c1, c2, t);
            for ch in c.iter_mut() {
                *ch += noise.sample(rng);
            }
            px.push(c);
        }
    }
    Canvas { size, px }
}

fn stripe(coord: f64, period: f64) -> f64 {
    if (coord / (period / 2.0)).floor() as i64 % 2 == 0 {
        0.0
    } else {
        1.0
    }
}

/// A placed shape instance.
#[derive(Clone, Debug)]
pub(crate) struct Placement {
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Placement {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        // rotate into the shape's frame
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let r = self.radius;
        match self.shape {
            Shape::Circle => u * u + v * v <= r * r,
            Shape::Ring => {
                let d2 = u * u + v * v;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
            Shape::Square => u.abs() <= 0.85 * r && v.abs() <= 0.85 * r,
            Shape::Cross => {
                let arm = 0.33 * r;
                (u.abs() <= r && v.abs() <= arm) || (v.abs() <= r && u.abs() <= arm)
            }
            Shape::Triangle => {
                // apex up, base at v = 0.6r
                let top = -r;
                let base = 0.6 * r;
                if v < top || v > base {
                    return false;
                }
                let half = (v - top) / (base - top) * r;
                u.abs() <= half
            }
        }
    }

    /// Bounding-box check against the image border.
    pub fn fits(&self, size: usize) -> bool {
        let s = size as f64;
        self.cx - self.radius >= 0.0
            && self.cy - self.radius >= 0.0
            && self.cx + self.radius <= s
            && self.cy + self.radius <= s
    }
}

/// Paints the shape and returns its binary pixel mask.
pub(crate) fn paint<R: Rng>(canvas: &mut Canvas, placement: &Placement, color: [f64; 3], rng: &mut R) -> Vec<u8> {
    let size = canvas.size;
    let noise = Normal::new(0.0, 6.0).unwrap();
    let jitter: [f64; 3] = [
        rng.gen_range(-18.0..18.0),
        rng.gen_range(-18.0..18.0),
        rng.gen_range(-18.0..18.0),
    ];
    let mut mask = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            if placement.contains(x as f64 + 0.5, y as f64 + 0.5) {
                let i = y * size + x;
                mask[i] = 1;
                for ch in 0..3 {
                    canvas.px[i][ch] = color[ch] + jitter[ch] + noise.sample(rng);
                }
            }
        }
    }
    mask
}

pub(crate) fn quantize(canvas: &Canvas) -> Vec<u8> {
    // channel-major: R plane, G plane, B plane
    let n = canvas.size * canvas.size;
    let mut out = vec![0u8; 3 * n];
    for (i, c) in canvas.px.iter().enumerate() {
        for ch in 0..3 {
            out[ch * n + i] = c[ch].round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
