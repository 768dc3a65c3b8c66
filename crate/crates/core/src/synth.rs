//! Synthetic scenes with known ground truth: a painted image plus the
//! prediction file a perfect detector would produce for it.
//!
//! Everything is seeded, so the same call always yields the same pixels and
//! the same JSON. The bundled demo dataset and several tests are built from
//! here.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::render::{marker_corners, paint_marker};
use crate::calib::MarkerDictionary;
use crate::geom::{OrientedBox, Point2};
use crate::infer::{DetRecord, FixtureFile, ModelPredictions, VerdictRecord, FIXTURE_SUFFIX};
use crate::pipeline::{PipelineId, PipelineParams};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fill {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
enum Paint {
    Shape(OrientedBox, Fill, Rgb<u8>),
    Marker { id: usize, center: Point2, side: f64, angle: f64 },
}

/// One image and its fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub fixture: FixtureFile,
    background: Rgb<u8>,
    paint: Vec<Paint>,
}

fn round_to(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

/// A box with coordinates rounded the way they are written to fixtures, so
/// what is painted is exactly what is reported.
pub fn fixture_box(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> OrientedBox {
    OrientedBox::new(round_to(cx, 2), round_to(cy, 2), round_to(w, 2), round_to(h, 2), round_to(angle, 4))
        .expect("positive synthetic box")
}

fn record(b: &OrientedBox, category: &str, conf: f64) -> DetRecord {
    DetRecord {
        cx: b.cx(),
        cy: b.cy(),
        w: b.w(),
        h: b.h(),
        angle_rad: b.theta(),
        category: category.into(),
        conf: round_to(conf, 3),
    }
}

/// Vertices of the ellipse inscribed in `b`, counter-clockwise.
pub fn ellipse_polygon(b: &OrientedBox, n: usize) -> Vec<Point2> {
    let c = Point2::new(b.cx(), b.cy());
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            Point2::new(b.w() / 2.0 * t.cos(), b.h() / 2.0 * t.sin())
                .rotate(b.theta())
                .add(c)
        })
        .collect()
}

impl Scene {
    pub fn new(name: &str, width: u32, height: u32, background: [u8; 3]) -> Self {
        Self {
            fixture: FixtureFile {
                image: name.into(),
                width,
                height,
                models: BTreeMap::new(),
            },
            background: Rgb(background),
            paint: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.fixture.image
    }

    pub fn stem(&self) -> &str {
        let n = self.name();
        n.rfind('.').map_or(n, |i| &n[..i])
    }

    fn model(&mut self, role: &str) -> &mut ModelPredictions {
        self.fixture.models.entry(role.into()).or_default()
    }

    /// Report a detection under `role`; returns its index in that role.
    pub fn detect(&mut self, role: &str, b: &OrientedBox, category: &str, conf: f64) -> usize {
        let m = self.model(role);
        m.detections.push(record(b, category, conf));
        m.detections.len() - 1
    }

    /// Make sure `role` exists even if nothing is reported under it.
    pub fn touch(&mut self, role: &str) {
        self.model(role);
    }

    pub fn mask(&mut self, role: &str, index: usize, polygon: &[Point2]) {
        let pts = polygon.iter().map(|p| [round_to(p.x, 2), round_to(p.y, 2)]).collect();
        self.model(role).masks.insert(index.to_string(), pts);
    }

    pub fn verdict(&mut self, role: &str, index: usize, keep: bool, view: Option<&str>) {
        self.model(role).verdicts.insert(
            index.to_string(),
            VerdictRecord {
                keep,
                view: view.map(Into::into),
            },
        );
    }

    pub fn crop_detect(&mut self, role: &str, parent: usize, b: &OrientedBox, category: &str, conf: f64) {
        self.model(role)
            .crops
            .entry(parent.to_string())
            .or_default()
            .detections
            .push(record(b, category, conf));
    }

    pub fn crop_touch(&mut self, role: &str, parent: usize) {
        self.model(role).crops.entry(parent.to_string()).or_default();
    }

    pub fn paint_rect(&mut self, b: &OrientedBox, color: [u8; 3]) {
        self.paint.push(Paint::Shape(*b, Fill::Rect, Rgb(color)));
    }

    pub fn paint_ellipse(&mut self, b: &OrientedBox, color: [u8; 3]) {
        self.paint.push(Paint::Shape(*b, Fill::Ellipse, Rgb(color)));
    }

    /// Print a fiducial marker (with its white quiet zone) into the image.
    pub fn paint_marker(&mut self, id: usize, center: Point2, side: f64, angle: f64) {
        self.paint.push(Paint::Marker { id, center, side, angle });
    }

    pub fn render(&self) -> RgbImage {
        let (w, h) = (self.fixture.width, self.fixture.height);
        let mut img = RgbImage::from_pixel(w, h, self.background);
        for p in &self.paint {
            match p {
                Paint::Shape(b, fill, color) => fill_shape(&mut img, b, *fill, *color),
                Paint::Marker { id, center, side, angle } => {
                    // quiet zone of one module around the code
                    let zone = OrientedBox::new(center.x, center.y, side * 1.5, side * 1.5, *angle).expect("marker box");
                    fill_shape(&mut img, &zone, Fill::Rect, Rgb([255, 255, 255]));
                    let mut gray = GrayImage::from_pixel(w, h, Luma([255]));
                    paint_marker(&mut gray, MarkerDictionary::builtin(), *id, *center, *side, *angle);
                    let (x0, y0, x1, y1) = zone.pixel_crop(0.0, w, h);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = gray.get_pixel(x, y)[0];
                            if v < 255 {
                                img.put_pixel(x, y, Rgb([v, v, v]));
                            }
                        }
                    }
                }
            }
        }
        img
    }

    /// Write `images_dir/<name>` and `preds_dir/<stem>.pred.json`.
    pub fn write(&self, images_dir: &Path, preds_dir: &Path) -> io::Result<()> {
        fs::create_dir_all(images_dir)?;
        fs::create_dir_all(preds_dir)?;
        self.render()
            .save(images_dir.join(self.name()))
            .map_err(io::Error::other)?;
        let mut json = serde_json::to_string_pretty(&self.fixture).expect("fixture serializes");
        json.push('\n');
        fs::write(preds_dir.join(format!("{}{}", self.stem(), FIXTURE_SUFFIX)), json)
    }
}

fn fill_shape(img: &mut RgbImage, b: &OrientedBox, fill: Fill, color: Rgb<u8>) {
    let (x0, y0, x1, y1) = b.pixel_crop(0.0, img.width(), img.height());
    let (c, s) = (b.theta().cos(), b.theta().sin());
    let (a, bb) = (b.w() / 2.0, b.h() / 2.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - b.cx();
            let dy = y as f64 + 0.5 - b.cy();
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let inside = match fill {
                Fill::Rect => u.abs() <= a && v.abs() <= bb,
                Fill::Ellipse => (u / a).powi(2) + (v / bb).powi(2) <= 1.0,
            };
            if inside {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Rejection-sample non-overlapping boxes: no two circumscribed circles
/// (plus `gap`) meet, and every box lies inside `[margin, w - margin]`.
fn scatter(
    rng: &mut ChaCha8Rng,
    n: usize,
    area: (f64, f64, f64, f64),
    size: impl Fn(&mut ChaCha8Rng) -> (f64, f64),
    avoid: &[(Point2, f64)],
    gap: f64,
) -> Vec<OrientedBox> {
    let (ax0, ay0, ax1, ay1) = area;
    let mut placed: Vec<(Point2, f64)> = avoid.to_vec();
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        assert!(tries < 200_000, "cannot place {n} objects");
        let (w, h) = size(rng);
        let r = (w * w + h * h).sqrt() / 2.0;
        if ax1 - ax0 <= 2.0 * r || ay1 - ay0 <= 2.0 * r {
            continue;
        }
        let cx = rng.random_range(ax0 + r..ax1 - r);
        let cy = rng.random_range(ay0 + r..ay1 - r);
        let c = Point2::new(cx, cy);
        if placed.iter().any(|(p, pr)| p.sub(c).norm() < pr + r + gap) {
            continue;
        }
        let angle = rng.random_range(-PI / 2.0..PI / 2.0);
        let b = fixture_box(cx, cy, w, h, angle);
        placed.push((c, r));
        out.push(b);
    }
    out
}

fn conf(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.55..0.99)
}

fn local(b: &OrientedBox, u: f64, v: f64) -> Point2 {
    Point2::new(u, v).rotate(b.theta()).add(Point2::new(b.cx(), b.cy()))
}

const SPIKE: [u8; 3] = [214, 178, 74];
const CANOPY: [u8; 3] = [58, 104, 52];
const SPIKELET: [u8; 3] = [120, 170, 70];
const BLEACHED: [u8; 3] = [236, 222, 190];

/// Field photo: scattered spikes, one duplicate report and one weak false
/// positive that post-processing must remove.
pub fn spike_scene(name: &str, seed: u64, n: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (480, 360);
    let mut s = Scene::new(name, w, h, CANOPY);
    let boxes = scatter(&mut rng, n, (0.0, 0.0, w as f64, h as f64), |r| (r.random_range(58.0..82.0), r.random_range(15.0..22.0)), &[], 4.0);
    for b in &boxes {
        s.paint_rect(b, SPIKE);
        let c = conf(&mut rng);
        s.detect("spike", b, "spike", c);
    }
    let d = &boxes[rng.random_range(0..boxes.len())];
    let dup = fixture_box(d.cx() + 1.5, d.cy() - 1.0, d.w(), d.h(), d.theta() + 0.02);
    s.detect("spike", &dup, "spike", 0.41);
    let weak = fixture_box(w as f64 - 30.0, 20.0, 24.0, 10.0, 0.0);
    s.detect("spike", &weak, "spike", 0.08);
    s
}

/// A large mosaic as seen through `tile`-px windows overlapping by
/// `overlap`: every spike is reported, in tile-local coordinates, by each
/// tile that contains it whole, with a small per-tile jitter. Returns the
/// scene and the ground-truth boxes.
pub fn orthomosaic_scene(
    name: &str,
    seed: u64,
    n: usize,
    (w, h): (u32, u32),
    tile: u32,
    overlap: u32,
) -> (Scene, Vec<OrientedBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scene::new(name, w, h, CANOPY);
    let size_cap = (overlap as f64 * 0.9).min(84.0);
    let truth = scatter(
        &mut rng,
        n,
        (0.0, 0.0, w as f64, h as f64),
        |r| (r.random_range(size_cap * 0.7..size_cap), r.random_range(14.0..20.0)),
        &[],
        6.0,
    );
    for b in &truth {
        s.paint_rect(b, SPIKE);
    }
    let grid = crate::counting::plan_tiles(w, h, tile, overlap).expect("valid tiling");
    for t in &grid.tiles {
        let role = t.role("spike");
        s.touch(&role);
        for b in &truth {
            let inside = b.corners().iter().all(|p| {
                p.x >= t.x0 as f64 && p.x <= t.x1 as f64 && p.y >= t.y0 as f64 && p.y <= t.y1 as f64
            });
            if !inside {
                continue;
            }
            let jx = rng.random_range(-0.4..0.4);
            let jy = rng.random_range(-0.4..0.4);
            let lb = fixture_box(
                b.cx() - t.x0 as f64 + jx,
                b.cy() - t.y0 as f64 + jy,
                b.w(),
                b.h(),
                b.theta() + rng.random_range(-0.01..0.01),
            );
            let c = conf(&mut rng);
            s.detect(&role, &lb, "spike", c);
        }
    }
    (s, truth)
}

fn spikelets_along(b: &OrientedBox, k: usize, size: (f64, f64)) -> Vec<OrientedBox> {
    let step = b.w() * 0.8 / k as f64;
    (0..k)
        .map(|i| {
            let u = -b.w() * 0.4 + step * (i as f64 + 0.5);
            let v = if i % 2 == 0 { -b.h() * 0.2 } else { b.h() * 0.2 };
            let c = local(b, u, v);
            fixture_box(c.x, c.y, size.0, size.1, b.theta())
        })
        .collect()
}

/// Spikes with their spikelets; `stray` adds a spikelet outside every spike.
pub fn spikelet_scene(name: &str, seed: u64, n: usize, stray: bool, empty_spike: bool) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (420, 420);
    let mut s = Scene::new(name, w, h, CANOPY);
    let spikes = scatter(&mut rng, n, (0.0, 0.0, w as f64, h as f64), |r| (r.random_range(120.0..150.0), r.random_range(34.0..42.0)), &[], 20.0);
    for (i, b) in spikes.iter().enumerate() {
        s.paint_rect(b, SPIKE);
        let c = conf(&mut rng);
        s.detect("spike", b, "spike", c);
        if empty_spike && i == 0 {
            continue;
        }
        let k = rng.random_range(4..8);
        for sl in spikelets_along(b, k, (14.0, 10.0)) {
            s.paint_ellipse(&sl, SPIKELET);
            let c = conf(&mut rng);
            s.detect("spikelet", &sl, "spikelet", c);
        }
    }
    s.touch("spikelet");
    if stray {
        let free = scatter(&mut rng, 1, (0.0, 0.0, w as f64, h as f64), |_| (14.0, 10.0), &spikes.iter().map(|b| (Point2::new(b.cx(), b.cy()), (b.w().hypot(b.h())) / 2.0)).collect::<Vec<_>>(), 4.0);
        s.paint_ellipse(&free[0], SPIKELET);
        s.detect("spikelet", &free[0], "spikelet", 0.7);
    }
    s
}

/// One spike on a plain background, `diseased` of its spikelets bleached.
pub fn fhb_single_scene(name: &str, seed: u64, total: usize, diseased: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (300, 520);
    let mut s = Scene::new(name, w, h, [32, 32, 36]);
    let spike = fixture_box(150.0, 260.0, 440.0, 90.0, PI / 2.0 - 0.05);
    s.paint_rect(&spike, SPIKE);
    let mut sick: Vec<bool> = (0..total).map(|i| i < diseased).collect();
    for i in (1..sick.len()).rev() {
        let j = rng.random_range(0..=i);
        sick.swap(i, j);
    }
    for (sl, bad) in spikelets_along(&spike, total, (30.0, 34.0)).iter().zip(sick) {
        let (cat, color) = if bad { ("diseased", BLEACHED) } else { ("healthy", SPIKELET) };
        s.paint_ellipse(sl, color);
        let c = conf(&mut rng);
        s.detect("fhb_spike_single", sl, cat, c);
    }
    s.touch("fhb_spike_single");
    s
}

/// Field photo for FHB: spikes with a view verdict, and spikelets reported
/// per kept spike in crop coordinates. `plan` lists, per spike, whether it
/// is kept and how many spikelets are healthy and diseased.
pub fn fhb_field_scene(name: &str, seed: u64, plan: &[(bool, usize, usize)], padding: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (560, 420);
    let mut s = Scene::new(name, w, h, CANOPY);
    let spikes = scatter(&mut rng, plan.len(), (10.0, 10.0, w as f64 - 10.0, h as f64 - 10.0), |r| (r.random_range(130.0..160.0), r.random_range(36.0..44.0)), &[], 24.0);
    for (i, (b, &(keep, healthy, diseased))) in spikes.iter().zip(plan).enumerate() {
        s.paint_rect(b, SPIKE);
        let c = conf(&mut rng);
        let idx = s.detect("spike", b, "spike", c);
        let view = if i % 2 == 0 { "frontal" } else { "lateral" };
        s.verdict("spike_view", idx, keep, Some(view));
        if !keep {
            continue;
        }
        let (x0, y0, _, _) = b.pixel_crop(padding, w, h);
        s.crop_touch("fhb_spikelet", idx);
        let n = healthy + diseased;
        for (k, sl) in spikelets_along(b, n.max(1), (16.0, 12.0)).into_iter().take(n).enumerate() {
            let (cat, color) = if k < diseased { ("diseased", BLEACHED) } else { ("healthy", SPIKELET) };
            s.paint_ellipse(&sl, color);
            let lb = fixture_box(sl.cx() - x0 as f64, sl.cy() - y0 as f64, sl.w(), sl.h(), sl.theta());
            let c = conf(&mut rng);
            s.crop_detect("fhb_spikelet", idx, &lb, cat, c);
        }
    }
    s
}

const TRAY: [u8; 3] = [226, 226, 222];
const KERNEL: [u8; 3] = [150, 96, 48];
const DAMAGED_KERNEL: [u8; 3] = [222, 196, 186];

/// Kernels on a tray, `damaged` of them pale. Every kernel but those listed
/// in `unmasked` gets a polygon mask.
fn kernel_tray(s: &mut Scene, rng: &mut ChaCha8Rng, boxes: &[OrientedBox], damaged: usize, unmasked: &[usize]) {
    for (i, b) in boxes.iter().enumerate() {
        let bad = i < damaged;
        s.paint_ellipse(b, if bad { DAMAGED_KERNEL } else { KERNEL });
        let c = conf(rng);
        let idx = s.detect("kernel", b, if bad { "damaged" } else { "healthy" }, c);
        if !unmasked.contains(&idx) {
            s.mask("kernel", idx, &ellipse_polygon(b, 32));
        }
    }
    s.touch("kernel");
}

pub fn fdk_scene(name: &str, seed: u64, n: usize, damaged: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (480, 360);
    let mut s = Scene::new(name, w, h, TRAY);
    let boxes = scatter(&mut rng, n, (0.0, 0.0, w as f64, h as f64), |r| (r.random_range(30.0..38.0), r.random_range(16.0..21.0)), &[], 6.0);
    kernel_tray(&mut s, &mut rng, &boxes, damaged, &[n - 1]);
    s
}

/// Kernels next to a printed marker of side `marker_px`.
pub fn kernel_morph_scene(name: &str, seed: u64, n: usize, marker_px: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (640, 480);
    let mut s = Scene::new(name, w, h, TRAY);
    let center = Point2::new(110.0, 110.0);
    let angle = rng.random_range(-0.5..0.5);
    s.paint_marker(3, center, marker_px, angle);
    let keep_out = [(center, marker_px * 1.5 * std::f64::consts::SQRT_2 / 2.0 + 10.0)];
    let boxes = scatter(&mut rng, n, (0.0, 0.0, w as f64, h as f64), |r| (r.random_range(62.0..82.0), r.random_range(30.0..40.0)), &keep_out, 8.0);
    kernel_tray(&mut s, &mut rng, &boxes, n / 4, &[0]);
    s
}

/// Corners of the marker painted by [`kernel_morph_scene`]; for tests.
pub fn kernel_marker_corners(seed: u64, marker_px: f64) -> [Point2; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(-0.5..0.5);
    marker_corners(Point2::new(110.0, 110.0), marker_px, angle)
}

const EPIDERMIS: [u8; 3] = [196, 204, 188];
const GUARD: [u8; 3] = [96, 120, 92];
const PORE: [u8; 3] = [30, 36, 30];

/// Stomata with pores. `apertures` gives each stoma's pore width/length
/// ratio; `None` means a closed stoma with no visible pore. With
/// `duplicate`, the first pore is reported twice.
pub fn stomata_scene(name: &str, seed: u64, apertures: &[Option<f64>], duplicate: bool) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (400, 300);
    let mut s = Scene::new(name, w, h, EPIDERMIS);
    let stomata = scatter(&mut rng, apertures.len(), (0.0, 0.0, w as f64, h as f64), |r| (r.random_range(44.0..54.0), r.random_range(26.0..32.0)), &[], 10.0);
    let mut first = true;
    for (b, ap) in stomata.iter().zip(apertures) {
        s.paint_ellipse(b, GUARD);
        let c = conf(&mut rng);
        s.detect("stoma", b, "stoma", c);
        let Some(ratio) = ap else { continue };
        let len = b.w() * 0.55;
        let pore = fixture_box(b.cx(), b.cy(), len, (len * ratio).max(1.0), b.theta());
        s.paint_ellipse(&pore, PORE);
        let c = conf(&mut rng);
        let idx = s.detect("pore", &pore, "pore", c);
        s.mask("pore", idx, &ellipse_polygon(&pore, 32));
        if duplicate && first {
            // beside the first one, so NMS keeps both
            let c = local(&pore, 0.0, pore.h() * 1.3);
            let twin = fixture_box(c.x, c.y, pore.w(), pore.h(), pore.theta());
            let idx = s.detect("pore", &twin, "pore", 0.3);
            s.mask("pore", idx, &ellipse_polygon(&twin, 32));
        }
        first = false;
    }
    s.touch("pore");
    s
}

/// Side in px of the marker printed on the demo kernel trays.
pub const DEMO_MARKER_PX: f64 = 120.0;
/// Its printed side in mm.
pub const DEMO_MARKER_MM: f64 = 10.0;

/// The demo dataset: three images per pipeline, named `<plot>_<n>.png`.
pub fn demo_dataset(p: PipelineId) -> Vec<Scene> {
    let name = |plot: &str, k: usize| format!("{plot}_{k}.png");
    match p {
        PipelineId::Spike => vec![
            spike_scene(&name("P101", 1), 11, 9),
            spike_scene(&name("P101", 2), 12, 7),
            spike_scene(&name("P102", 1), 13, 11),
        ],
        PipelineId::SpikeUav => (0..3)
            .map(|k| orthomosaic_scene(&name(&format!("UAV{}", 1 + k / 2), k + 1), 20 + k as u64, 40 + 6 * k, (1400, 1100), 512, 96).0)
            .collect(),
        PipelineId::Spikelet => vec![
            spikelet_scene(&name("P201", 1), 31, 3, true, false),
            spikelet_scene(&name("P201", 2), 32, 4, false, true),
            spikelet_scene(&name("P202", 1), 33, 3, true, false),
        ],
        PipelineId::FhbSingle => vec![
            fhb_single_scene(&name("SD2024-017", 1), 41, 14, 3),
            fhb_single_scene(&name("SD2024-017", 2), 42, 12, 0),
            fhb_single_scene(&name("SD2024-018", 1), 43, 16, 9),
        ],
        PipelineId::FhbField => vec![
            fhb_field_scene(&name("F301", 1), 51, &[(true, 4, 1), (true, 5, 0), (false, 0, 0), (true, 2, 3)], 0.1),
            fhb_field_scene(&name("F301", 2), 52, &[(true, 6, 0), (true, 0, 0), (true, 3, 2)], 0.1),
            fhb_field_scene(&name("F302", 1), 53, &[(false, 0, 0), (true, 4, 4), (true, 7, 1)], 0.1),
        ],
        PipelineId::Fdk => vec![
            fdk_scene(&name("SD2024-017", 1), 61, 16, 4),
            fdk_scene(&name("SD2024-017", 2), 62, 20, 2),
            fdk_scene(&name("SD2024-019", 1), 63, 12, 6),
        ],
        PipelineId::KernelMorph => vec![
            kernel_morph_scene(&name("K401", 1), 71, 8, DEMO_MARKER_PX),
            kernel_morph_scene(&name("K401", 2), 72, 10, DEMO_MARKER_PX),
            kernel_morph_scene(&name("K402", 1), 73, 6, DEMO_MARKER_PX),
        ],
        PipelineId::Stomata => vec![
            stomata_scene(&name("L501", 1), 81, &[Some(0.35), Some(0.12), None, Some(0.5), Some(0.28)], false),
            stomata_scene(&name("L501", 2), 82, &[Some(0.2), Some(0.42), Some(0.31), None], true),
            stomata_scene(&name("L502", 1), 83, &[Some(0.08), Some(0.4), Some(0.22), Some(0.36), None, Some(0.15)], false),
        ],
    }
}

/// Parameters the demo dataset is meant to be run with.
pub fn demo_params(p: PipelineId) -> PipelineParams {
    let mut params = PipelineParams::default();
    match p {
        PipelineId::Spike => params.gsd_mm_per_px = Some(0.5),
        PipelineId::SpikeUav => {
            params.gsd_mm_per_px = Some(0.8);
            params.tile_size = 512;
            params.overlap = 96;
        }
        PipelineId::KernelMorph => params.marker_mm = Some(DEMO_MARKER_MM),
        PipelineId::Stomata => params.px_per_um = Some(2.0),
        _ => {}
    }
    params
}

/// Write the demo dataset under `root/<pipeline>/{images,preds}`.
pub fn write_demo_dataset(root: &Path) -> io::Result<()> {
    for p in PipelineId::ALL {
        let dir = root.join(p.as_str());
        for s in demo_dataset(p) {
            s.write(&dir.join("images"), &dir.join("preds"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::{self, FixtureBackend, InferenceParams};

    #[test]
    fn scenes_are_reproducible() {
        let a = spike_scene("a.png", 5, 6);
        let b = spike_scene("a.png", 5, 6);
        assert_eq!(a, b);
        assert_eq!(a.render().as_raw(), b.render().as_raw());
        assert_ne!(a, spike_scene("a.png", 6, 6));
    }

    #[test]
    fn spike_scene_counts_after_postprocess() {
        let dir = tempfile::tempdir().unwrap();
        let s = spike_scene("P1_1.png", 3, 8);
        s.write(&dir.path().join("img"), &dir.path().join("pred")).unwrap();
        let be = FixtureBackend::open(dir.path().join("pred")).unwrap();
        let raw = infer::detect(&be, "P1_1.png", "spike").unwrap();
        assert_eq!(raw.len(), 10);
        let kept = infer::postprocess(&raw, &InferenceParams::new(0.25, 0.3).unwrap());
        assert_eq!(kept.len(), 8);
    }

    #[test]
    fn painted_pixels_follow_boxes() {
        let mut s = Scene::new("x.png", 40, 40, [0, 0, 0]);
        let b = fixture_box(20.0, 20.0, 10.0, 6.0, 0.0);
        s.paint_rect(&b, [255, 0, 0]);
        let img = s.render();
        let lit = img.pixels().filter(|p| p.0 == [255, 0, 0]).count();
        assert_eq!(lit, 60);
    }

    #[test]
    fn demo_params_validate() {
        for p in PipelineId::ALL {
            demo_params(p).validate(p).unwrap();
            assert!(demo_dataset(p).len() >= 3);
        }
    }
}
