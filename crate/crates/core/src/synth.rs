//! Procedural face-like test images.
//!
//! A seeded generator of smooth, face-shaped RGB images (hair, skin with
//! directional shading, eyes, brows, nose, mouth, textured background). They
//! stand in for a face dataset in tests and desk-scale experiments.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{save_image, ColorSpace, Image};
use crate::seed::Seed;

/// Bilinearly interpolated lattice noise in `[-1, 1]`.
struct ValueNoise {
    grid: Array2<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        ValueNoise {
            grid: Array2::from_shape_fn((cells + 1, cells + 1), |_| rng.random_range(-1.0..1.0)),
        }
    }

    /// `u`, `v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let n = (self.grid.dim().0 - 1) as f64;
        let (x, y) = (u.clamp(0.0, 1.0) * n, v.clamp(0.0, 1.0) * n);
        let (x0, y0) = (x.floor().min(n - 1.0), y.floor().min(n - 1.0));
        let (fx, fy) = (x - x0, y - y0);
        let (i, j) = (y0 as usize, x0 as usize);
        let g = &self.grid;
        let top = g[[i, j]] * (1.0 - fx) + g[[i, j + 1]] * fx;
        let bot = g[[i + 1, j]] * (1.0 - fx) + g[[i + 1, j + 1]] * fx;
        top * (1.0 - fy) + bot * fy
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Soft coverage in `[0, 1]`; `soft` is the edge width in normalized units.
    fn cover(&self, x: f64, y: f64, soft: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        let d = (dx * dx + dy * dy).sqrt();
        let edge = (1.0 - d) * self.rx.min(self.ry) / soft;
        1.0 / (1.0 + (-edge).exp())
    }
}

fn color(rng: &mut ChaCha8Rng, base: [f64; 3], spread: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-spread..spread)).clamp(0.0, 1.0))
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d * (1.0 - alpha) + s * alpha;
    }
}

/// One `size × size` synthetic face.
pub fn synth_face(size: usize, seed: Seed) -> Image {
    let mut rng = seed.rng();
    let bg_top = color(&mut rng, [0.55, 0.6, 0.65], 0.35);
    let bg_bot = color(&mut rng, [0.45, 0.45, 0.5], 0.35);
    let bg_noise = ValueNoise::new(4, &mut rng);
    let fine = ValueNoise::new((size / 4).max(4), &mut rng);
    let hair_noise = ValueNoise::new(12, &mut rng);

    let tone = rng.random_range(0.0..1.0);
    let skin = [0.95 - 0.45 * tone, 0.78 - 0.42 * tone, 0.66 - 0.38 * tone];
    let hair = color(&mut rng, [0.2, 0.14, 0.1], 0.15);
    let iris = color(&mut rng, [0.3, 0.35, 0.3], 0.25);
    let lips = color(&mut rng, [0.75, 0.35, 0.38], 0.1);

    let cx = rng.random_range(-0.06..0.06);
    let cy = rng.random_range(0.0..0.1);
    let face = Ellipse {
        cx,
        cy,
        rx: rng.random_range(0.42..0.52),
        ry: rng.random_range(0.56..0.66),
    };
    let hair_shape = Ellipse {
        cx: cx + rng.random_range(-0.03..0.03),
        cy: cy - rng.random_range(0.12..0.2),
        rx: face.rx + rng.random_range(0.06..0.14),
        ry: face.ry + rng.random_range(0.0..0.1),
    };
    let eye_dx = rng.random_range(0.17..0.23);
    let eye_y = cy - rng.random_range(0.06..0.14);
    let eye_r = rng.random_range(0.07..0.09);
    let gaze = rng.random_range(-0.015..0.015);
    let mouth = Ellipse {
        cx,
        cy: cy + rng.random_range(0.3..0.36),
        rx: rng.random_range(0.12..0.18),
        ry: rng.random_range(0.03..0.05),
    };
    let nose = Ellipse {
        cx,
        cy: cy + rng.random_range(0.1..0.16),
        rx: 0.05,
        ry: 0.1,
    };
    let light = rng.random_range(-1.0..1.0);
    let stripe_angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let stripe_freq = rng.random_range(25.0..45.0);

    let soft = 1.2 / size as f64;
    Image::from_fn_rgb(size, |y, x| {
        let u = (x as f64 + 0.5) / size as f64;
        let v = (y as f64 + 0.5) / size as f64;
        let (px, py) = (2.0 * u - 1.0, 2.0 * v - 1.0);

        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = bg_top[k] * (1.0 - v) + bg_bot[k] * v + 0.08 * bg_noise.at(u, v);
        }

        let stripes = (stripe_freq * (px * stripe_angle.cos() + py * stripe_angle.sin())).sin();
        let h = hair.map(|k| k * (1.0 + 0.25 * stripes + 0.3 * hair_noise.at(u, v)));
        blend(&mut c, h, hair_shape.cover(px, py, soft));

        let shade = 1.0 + 0.18 * light * (px - face.cx) / face.rx - 0.08 * ((py - face.cy) / face.ry).powi(2);
        blend(&mut c, skin.map(|k| k * shade), face.cover(px, py, soft));
        blend(&mut c, skin.map(|k| k * 0.82), 0.6 * nose.cover(px, py, 3.0 * soft));

        for side in [-1.0, 1.0] {
            let ex = cx + side * eye_dx;
            let brow = Ellipse { cx: ex, cy: eye_y - 1.3 * eye_r, rx: 1.3 * eye_r, ry: 0.25 * eye_r };
            blend(&mut c, hair.map(|k| k * 0.9), brow.cover(px, py, soft));
            let sclera = Ellipse { cx: ex, cy: eye_y, rx: eye_r, ry: 0.55 * eye_r };
            blend(&mut c, [0.92, 0.92, 0.9], sclera.cover(px, py, soft));
            let ir = Ellipse { cx: ex + gaze, cy: eye_y, rx: 0.45 * eye_r, ry: 0.45 * eye_r };
            blend(&mut c, iris, ir.cover(px, py, soft) * sclera.cover(px, py, soft));
            let pupil = Ellipse { cx: ex + gaze, cy: eye_y, rx: 0.2 * eye_r, ry: 0.2 * eye_r };
            blend(&mut c, [0.05, 0.05, 0.06], pupil.cover(px, py, soft));
        }
        blend(&mut c, lips, mouth.cover(px, py, soft));

        let grain = 0.025 * fine.at(u, v);
        c.map(|k| k + grain)
    })
}

impl Image {
    fn from_fn_rgb(size: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Image {
        let mut data = ndarray::Array3::zeros((3, size, size));
        for y in 0..size {
            for x in 0..size {
                let px = f(y, x);
                for (c, v) in px.into_iter().enumerate() {
                    data[[c, y, x]] = v;
                }
            }
        }
        debug_assert_eq!(ColorSpace::Rgb.channels(), 3);
        Image::from_clamped(data)
    }
}

/// Writes `count` faces as `face_00000.png`, … into `dir`.
pub fn write_synth_faces(dir: &Path, count: usize, size: usize, seed: Seed) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("face_{i:05}.png"));
            save_image(&synth_face(size, seed.derive(i as u64)), &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synth_face(32, Seed(1));
        assert_eq!(a, synth_face(32, Seed(1)));
        assert_ne!(a, synth_face(32, Seed(2)));
        assert_eq!((a.height(), a.width(), a.channels()), (32, 32, 3));
    }

    #[test]
    fn has_structure() {
        let img = synth_face(64, Seed(3));
        let m = img.mean();
        let var = img.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / img.data().len() as f64;
        assert!(var > 0.003, "variance {var}");
    }
}
