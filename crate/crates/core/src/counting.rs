//! Spike counting on close-range and tiled aerial imagery, and spikelet
//! association.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{convex_intersection, obb_corners};
use crate::infer::{self, Backend, DetectionSet, InferError, InferenceParams};

pub const SPIKE_CATEGORY: &str = "spike";
pub const DEFAULT_TILE_SIZE: u32 = 1024;
pub const DEFAULT_OVERLAP: u32 = 128;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum CountError {
    #[error("invalid tiling: {0}")]
    InvalidTiling(String),
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCountResult {
    pub image_ref: String,
    pub spike_count: usize,
    pub spikes_per_m2: Option<f64>,
    pub detections: DetectionSet,
}

impl SpikeCountResult {
    pub fn from_detections(detections: DetectionSet, gsd_mm_per_px: Option<f64>) -> Self {
        let spike_count = detections.count_category(SPIKE_CATEGORY);
        Self {
            image_ref: detections.image_ref.clone(),
            spike_count,
            spikes_per_m2: spikes_per_area(spike_count, gsd_mm_per_px, detections.width, detections.height),
            detections,
        }
    }
}

/// Detect, post-process and count `spike` detections. Density is left to the
/// caller, who knows the ground sampling distance.
pub fn count_spikes(
    image_ref: &str,
    backend: &dyn Backend,
    params: &InferenceParams,
) -> Result<SpikeCountResult, InferError> {
    let raw = infer::detect(backend, image_ref, params.role_or("spike"))?;
    Ok(SpikeCountResult::from_detections(infer::postprocess(&raw, params), None))
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Tile {
    /// Fixture role key for this tile's predictions.
    pub fn role(&self, base: &str) -> String {
        format!("{base}@{}_{}", self.x0, self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overlap: u32,
    /// Row-major: all tiles of the first row, then the next.
    pub tiles: Vec<Tile>,
}

fn origins(len: u32, tile: u32, stride: u32) -> Vec<u32> {
    let mut out = vec![0];
    let mut last = 0;
    while last + tile < len {
        last = (last + stride).min(len - tile);
        out.push(last);
    }
    out
}

pub fn plan_tiles(width: u32, height: u32, tile_size: u32, overlap: u32) -> Result<TileGrid, CountError> {
    if overlap >= tile_size {
        return Err(CountError::InvalidTiling(format!(
            "overlap {overlap} must be smaller than tile size {tile_size}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(CountError::InvalidTiling(format!("empty image {width}x{height}")));
    }
    let stride = tile_size - overlap;
    let xs = origins(width, tile_size, stride);
    let ys = origins(height, tile_size, stride);
    let tiles = ys
        .iter()
        .flat_map(|&y0| {
            xs.iter().map(move |&x0| Tile {
                x0,
                y0,
                x1: (x0 + tile_size).min(width),
                y1: (y0 + tile_size).min(height),
            })
        })
        .collect();
    Ok(TileGrid {
        width,
        height,
        tile_size,
        overlap,
        tiles,
    })
}

/// Per-tile detection, shifted to image coordinates and concatenated in grid
/// order, then one global threshold + NMS pass. Merged detections are
/// re-indexed by their position in the concatenation.
pub fn tile_and_merge(
    image_ref: &str,
    grid: &TileGrid,
    backend: &dyn Backend,
    params: &InferenceParams,
) -> Result<DetectionSet, CountError> {
    let base = params.role_or("spike");
    let per_tile: Vec<DetectionSet> = grid
        .tiles
        .par_iter()
        .map(|t| infer::detect(backend, image_ref, &t.role(base)))
        .collect::<Result<_, _>>()?;
    let mut merged = DetectionSet::new(image_ref, grid.width, grid.height);
    for (tile, set) in grid.tiles.iter().zip(per_tile) {
        for mut d in set.detections {
            d.bbox = d.bbox.translated(tile.x0 as f64, tile.y0 as f64);
            d.index = merged.detections.len();
            merged.detections.push(d);
        }
    }
    merged.flag_out_of_frame();
    Ok(infer::postprocess(&merged, params))
}

/// Spikes per square metre, when the ground sampling distance is known.
pub fn spikes_per_area(count: usize, gsd_mm_per_px: Option<f64>, width: u32, height: u32) -> Option<f64> {
    let gsd = gsd_mm_per_px?;
    let area_m2 = width as f64 * height as f64 * gsd * gsd / 1e6;
    Some(count as f64 / area_m2)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeletAssignment {
    /// Keyed by spike detection index; every spike appears, possibly with 0.
    pub per_spike_counts: BTreeMap<usize, usize>,
    /// Spikelet detection indices no spike claimed.
    pub unassigned: Vec<usize>,
    /// Spikelet detection index to spike detection index.
    pub assignment: BTreeMap<usize, usize>,
}

impl SpikeletAssignment {
    pub fn total(&self) -> usize {
        self.per_spike_counts.values().sum::<usize>() + self.unassigned.len()
    }
}

/// Assign each spikelet to the spike covering the largest fraction of the
/// spikelet's own area, provided that fraction reaches `tau`.
pub fn associate_spikelets(spikes: &DetectionSet, spikelets: &DetectionSet, tau: f64) -> SpikeletAssignment {
    let spike_polys: Vec<_> = spikes.detections.iter().map(|d| obb_corners(&d.bbox)).collect();
    let mut out = SpikeletAssignment {
        per_spike_counts: spikes.detections.iter().map(|d| (d.index, 0)).collect(),
        ..Default::default()
    };
    for s in &spikelets.detections {
        let poly = obb_corners(&s.bbox);
        let own = poly.area();
        let mut best: Option<(usize, f64)> = None;
        for (spike, sp) in spikes.detections.iter().zip(&spike_polys) {
            let ratio = convex_intersection(&poly, sp).area() / own;
            let better = match best {
                None => true,
                Some((bi, br)) => ratio > br || (ratio == br && spike.index < bi),
            };
            if better {
                best = Some((spike.index, ratio));
            }
        }
        match best {
            Some((spike, ratio)) if ratio >= tau => {
                *out.per_spike_counts.entry(spike).or_default() += 1;
                out.assignment.insert(s.index, spike);
            }
            _ => out.unassigned.push(s.index),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::OrientedBox;
    use crate::infer::Detection;

    fn set(boxes: &[(f64, f64, f64, f64)], cat: &str) -> DetectionSet {
        let mut s = DetectionSet::new("img", 1000, 1000);
        for (i, &(cx, cy, w, h)) in boxes.iter().enumerate() {
            let b = OrientedBox::new(cx, cy, w, h, 0.0).unwrap();
            s.detections.push(Detection::new(i, b, cat, 0.9).unwrap());
        }
        s
    }

    fn grid_by_loop(len: u32, tile: u32, overlap: u32) -> Vec<(u32, u32)> {
        // independent recomputation: step until the far edge is reached
        let mut v = Vec::new();
        let mut x = 0u32;
        loop {
            if x + tile >= len {
                let start = len.saturating_sub(tile);
                v.push((start, len.min(start + tile)));
                break;
            }
            v.push((x, x + tile));
            x += tile - overlap;
        }
        v
    }

    #[test]
    fn tile_plan_arithmetic() {
        let g = plan_tiles(4000, 3000, 1024, 128).unwrap();
        assert_eq!(g.tiles.len(), 20);
        let cols: Vec<_> = g.tiles.iter().filter(|t| t.y0 == 0).map(|t| (t.x0, t.x1)).collect();
        assert_eq!(cols, grid_by_loop(4000, 1024, 128));
        assert_eq!(cols.last().unwrap().1, 4000);
        assert_eq!(cols[1].0, 896);
        let rows: Vec<_> = g.tiles.iter().filter(|t| t.x0 == 0).map(|t| (t.y0, t.y1)).collect();
        assert_eq!(rows, grid_by_loop(3000, 1024, 128));

        let single = plan_tiles(800, 600, 1024, 128).unwrap();
        assert_eq!(single.tiles, vec![Tile { x0: 0, y0: 0, x1: 800, y1: 600 }]);
        assert!(matches!(plan_tiles(100, 100, 128, 128), Err(CountError::InvalidTiling(_))));
    }

    #[test]
    fn tile_coverage() {
        for (w, h, t, o) in [(4000, 3000, 1024, 128), (1030, 1024, 1024, 0), (2049, 700, 512, 100)] {
            let g = plan_tiles(w, h, t, o).unwrap();
            for x in (0..w).step_by(7) {
                for y in (0..h).step_by(11) {
                    assert!(g.tiles.iter().any(|t| t.x0 <= x && x < t.x1 && t.y0 <= y && y < t.y1));
                }
            }
        }
    }

    #[test]
    fn density() {
        assert_eq!(spikes_per_area(120, Some(1.0), 4000, 3000), Some(10.0));
        assert_eq!(spikes_per_area(120, None, 4000, 3000), None);
        assert_eq!(spikes_per_area(0, Some(1.0), 4000, 3000), Some(0.0));
    }

    #[test]
    fn spikelet_argmax_and_threshold() {
        let spikes = set(&[(50.0, 50.0, 100.0, 100.0), (150.0, 50.0, 100.0, 100.0)], "spike");
        let spikelets = set(
            &[
                (50.0, 50.0, 10.0, 10.0),   // inside spike 0
                (96.0, 50.0, 10.0, 10.0),   // 0.9 / 0.1
                (50.0, 102.0, 10.0, 10.0),  // 0.3 / 0.0
                (400.0, 400.0, 10.0, 10.0), // nowhere
                (100.0, 50.0, 20.0, 10.0),  // 0.5 / 0.5: tie to lower index
            ],
            "spikelet",
        );
        let a = associate_spikelets(&spikes, &spikelets, 0.5);
        assert_eq!(a.assignment.get(&0), Some(&0));
        assert_eq!(a.assignment.get(&1), Some(&0));
        assert_eq!(a.assignment.get(&4), Some(&0));
        assert_eq!(a.unassigned, vec![2, 3]);
        assert_eq!(a.per_spike_counts, BTreeMap::from([(0, 3), (1, 0)]));
        assert_eq!(a.total(), 5);
    }

    #[test]
    fn sixty_forty_split_goes_to_larger_share() {
        let spikes = set(&[(0.0, 0.0, 100.0, 100.0), (100.0, 0.0, 100.0, 100.0)], "spike");
        // spans x in [44, 54): 6 units in spike 0, 4 in spike 1
        let spikelets = set(&[(49.0, 0.0, 10.0, 4.0)], "spikelet");
        let a = associate_spikelets(&spikes, &spikelets, 0.5);
        assert_eq!(a.assignment.get(&0), Some(&0));
    }
}
