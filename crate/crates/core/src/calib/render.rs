//! Synthetic marker scenes with known geometry.
//!
//! Used as ground truth when testing the detector and to put markers into
//! generated sample images. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`;
//! coverage is estimated with 4x4 supersampling.

use image::{GrayImage, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dictionary::MarkerDictionary;
use crate::geom::Point2;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerScene {
    pub marker_id: usize,
    pub side_px: f64,
    /// In-plane rotation, radians, same convention as oriented boxes.
    pub angle: f64,
    /// Marker center; `None` centers it on the canvas.
    pub center: Option<Point2>,
    /// Canvas size; `None` picks a square with a white margin of at least
    /// one cell around the rotated marker.
    pub canvas: Option<(u32, u32)>,
    pub background: u8,
    /// Gaussian pixel noise standard deviation in 8-bit levels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MarkerScene {
    pub fn new(marker_id: usize, side_px: f64, angle: f64) -> Self {
        Self {
            marker_id,
            side_px,
            angle,
            center: None,
            canvas: None,
            background: 255,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    fn canvas_size(&self) -> (u32, u32) {
        self.canvas.unwrap_or_else(|| {
            let reach = self.side_px * std::f64::consts::SQRT_2 + self.side_px / 3.0 + 16.0;
            let s = reach.ceil().max(64.0) as u32;
            (s, s)
        })
    }
}

/// Ideal corners of a marker, marker top-left first, clockwise on screen.
pub fn marker_corners(center: Point2, side_px: f64, angle: f64) -> [Point2; 4] {
    let h = side_px / 2.0;
    [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(x, y)| Point2::new(x, y).rotate(angle).add(center))
}

/// Cell colour at marker-local coordinates in `[0, side)^2`: true = white.
fn cell_white(code: u16, side: f64, mx: f64, my: f64) -> bool {
    let cell = side / 6.0;
    let c = ((mx / cell) as usize).min(5);
    let r = ((my / cell) as usize).min(5);
    if r == 0 || c == 0 || r == 5 || c == 5 {
        return false;
    }
    let bit = (r - 1) * 4 + (c - 1);
    (code >> (15 - bit)) & 1 == 1
}

/// Paint a marker into an existing image without noise.
pub fn paint_marker(img: &mut GrayImage, dict: &MarkerDictionary, id: usize, center: Point2, side_px: f64, angle: f64) {
    let code = dict.codes[id];
    let corners = marker_corners(center, side_px, angle);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in corners {
        x0 = x0.min(c.x);
        y0 = y0.min(c.y);
        x1 = x1.max(c.x);
        y1 = y1.max(c.y);
    }
    let (w, h) = img.dimensions();
    let xs = (x0.floor().max(0.0) as u32)..((x1.ceil() + 1.0).min(w as f64) as u32);
    let ys = (y0.floor().max(0.0) as u32)..((y1.ceil() + 1.0).min(h as f64) as u32);
    let half = side_px / 2.0;
    for y in ys {
        for x in xs.clone() {
            let mut acc = 0.0;
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = Point2::new(
                        x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64,
                        y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64,
                    );
                    let m = p.sub(center).rotate(-angle);
                    let (mx, my) = (m.x + half, m.y + half);
                    if (0.0..side_px).contains(&mx) && (0.0..side_px).contains(&my) {
                        covered += 1;
                        if cell_white(code, side_px, mx, my) {
                            acc += 255.0;
                        }
                    }
                }
            }
            if covered == 0 {
                continue;
            }
            let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let bg = img.get_pixel(x, y).0[0] as f64;
            let v = acc / n + bg * (n - covered as f64) / n;
            img.put_pixel(x, y, Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
}

pub fn add_noise(img: &mut GrayImage, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for p in img.pixels_mut() {
        let v = p.0[0] as f64 + normal.sample(&mut rng);
        p.0[0] = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// Render a single-marker scene; returns the image and the true corners.
pub fn render_marker(dict: &MarkerDictionary, scene: &MarkerScene) -> (GrayImage, [Point2; 4]) {
    let (w, h) = scene.canvas_size();
    let center = scene
        .center
        .unwrap_or(Point2::new(w as f64 / 2.0, h as f64 / 2.0));
    let mut img = GrayImage::from_pixel(w, h, Luma([scene.background]));
    paint_marker(&mut img, dict, scene.marker_id, center, scene.side_px, scene.angle);
    add_noise(&mut img, scene.noise_sigma, scene.seed);
    (img, marker_corners(center, scene.side_px, scene.angle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_cells_match_payload() {
        let dict = MarkerDictionary::builtin();
        let (img, corners) = render_marker(dict, &MarkerScene::new(7, 120.0, 0.0));
        let tl = corners[0];
        let cell = 20.0;
        // border is black, inner cells follow the payload
        let at = |r: usize, c: usize| {
            img.get_pixel(
                (tl.x + (c as f64 + 0.5) * cell) as u32,
                (tl.y + (r as f64 + 0.5) * cell) as u32,
            )
            .0[0]
        };
        assert_eq!(at(0, 0), 0);
        let code = dict.codes[7];
        for r in 0..4 {
            for c in 0..4 {
                let white = (code >> (15 - (r * 4 + c))) & 1 == 1;
                assert_eq!(at(r + 1, c + 1), if white { 255 } else { 0 });
            }
        }
    }
}
