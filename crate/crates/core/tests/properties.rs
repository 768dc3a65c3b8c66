use std::f64::consts::PI;

use proptest::prelude::*;

use wheatai::calib::{calibration_manual, convert_measurement, to_pixels, Homography, MeasureKind, Unit};
use wheatai::counting::{associate_spikelets, plan_tiles};
use wheatai::disease::{fhb_metrics, ratio, SpikeFHBRecord};
use wheatai::geom::{convex_intersection, min_area_rect, obb_corners, obb_nms, rotated_iou, OrientedBox, Point2};
use wheatai::infer::{Detection, DetectionSet};

fn obb() -> impl Strategy<Value = OrientedBox> {
    (-50.0..50.0, -50.0..50.0, 0.5..30.0, 0.5..30.0, -PI..PI)
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

fn detections(max: usize) -> impl Strategy<Value = DetectionSet> {
    prop::collection::vec((obb(), 0usize..2, 1u8..=4), 0..max).prop_map(|items| {
        let mut s = DetectionSet::new("p", 100, 100);
        for (i, (b, cat, conf)) in items.into_iter().enumerate() {
            let c = ["spike", "spikelet"][cat];
            s.detections.push(Detection::new(i, b, c, conf as f64 / 4.0).unwrap());
        }
        s
    })
}

proptest! {
    #[test]
    fn iou_is_bounded_and_symmetric(a in obb(), b in obb()) {
        let v = rotated_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, rotated_iou(&b, &a));
        prop_assert_eq!(rotated_iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_survives_rigid_motion(a in obb(), b in obb(), phi in -PI..PI, dx in -100.0..100.0, dy in -100.0..100.0) {
        let before = rotated_iou(&a, &b);
        let after = rotated_iou(&a.transformed(phi, dx, dy), &b.transformed(phi, dx, dy));
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn half_turn_is_the_same_box(b in obb()) {
        let turned = OrientedBox::new(b.cx(), b.cy(), b.w(), b.h(), b.theta() + PI).unwrap();
        prop_assert!(b.same_shape(&turned, 1e-9));
        prop_assert!((-PI / 2.0..PI / 2.0).contains(&turned.theta()));
    }

    #[test]
    fn intersection_is_no_larger_than_either(a in obb(), b in obb()) {
        let i = convex_intersection(&obb_corners(&a), &obb_corners(&b)).area();
        prop_assert!(i <= a.area().min(b.area()) * (1.0 + 1e-12) + 1e-12);
        prop_assert!(i >= 0.0);
    }

    #[test]
    fn nms_is_an_idempotent_subset(set in detections(25), thr in 0.05..0.95f64) {
        let kept = obb_nms(&set, thr);
        prop_assert!(kept.detections.iter().all(|k| set.detections.contains(k)));
        prop_assert_eq!(obb_nms(&kept, thr), kept.clone());
        // the most confident detection of each category always survives
        for cat in set.categories() {
            let top = set.detections.iter().filter(|d| d.category == cat).map(|d| d.confidence).fold(0.0, f64::max);
            prop_assert!(kept.detections.iter().any(|d| d.category == cat && d.confidence == top));
        }
    }

    #[test]
    fn min_rect_encloses_and_beats_the_axis_box(pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..30)) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let Ok(r) = min_area_rect(&pts) else { return Ok(()) };
        prop_assert!(pts.iter().all(|p| r.contains(*p, 1e-7)));
        let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
        let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.y), b.max(p.y)));
        prop_assert!(r.area() <= (x1 - x0) * (y1 - y0) * (1.0 + 1e-9));
        prop_assert!(r.w() >= r.h());
    }

    #[test]
    fn tiles_cover_the_image(w in 1u32..5000, h in 1u32..5000, tile in 64u32..2048, frac in 0.0..0.9f64) {
        let overlap = (tile as f64 * frac) as u32;
        let g = plan_tiles(w, h, tile, overlap).unwrap();
        for t in &g.tiles {
            prop_assert!(t.x1 <= w && t.y1 <= h && t.x0 < t.x1 && t.y0 < t.y1);
            prop_assert!(t.x1 - t.x0 <= tile && t.y1 - t.y0 <= tile);
        }
        // every column and row lies in some tile, and consecutive tiles overlap enough
        let mut xs: Vec<(u32, u32)> = g.tiles.iter().map(|t| (t.x0, t.x1)).collect();
        xs.sort();
        xs.dedup();
        prop_assert_eq!(xs[0].0, 0);
        prop_assert_eq!(xs.last().unwrap().1, w);
        for p in xs.windows(2) {
            prop_assert!(p[0].1 >= p[1].0 + overlap.min(p[0].1 - p[0].0));
        }
    }

    #[test]
    fn spikelets_are_counted_once(spikes in detections(8), spikelets in detections(20), tau in 0.0..1.0f64) {
        let a = associate_spikelets(&spikes, &spikelets, tau);
        prop_assert_eq!(a.total(), spikelets.len());
        prop_assert_eq!(a.assignment.len() + a.unassigned.len(), spikelets.len());
        prop_assert_eq!(a.per_spike_counts.len(), spikes.len());
    }

    #[test]
    fn fhb_chain(spikes in prop::collection::vec((0usize..30, 0usize..30), 0..40)) {
        let records: Vec<SpikeFHBRecord> = spikes
            .iter()
            .enumerate()
            .map(|(i, &(t, d))| SpikeFHBRecord::new(i, t, d.min(t)))
            .collect();
        match fhb_metrics(&records) {
            None => prop_assert!(records.iter().all(|r| r.total_spikelets == 0)),
            Some(s) => {
                prop_assert!(ratio(0, 1) <= s.index);
                prop_assert!(s.index <= s.incidence);
                prop_assert!(s.incidence <= ratio(1, 1));
                prop_assert!(s.severity_all <= s.severity_infected);
                prop_assert!(s.n_infected <= s.n_assessed);
            }
        }
    }

    #[test]
    fn calibration_round_trips(px in 0.01..1000.0f64, v in 0.0..1e6f64) {
        let c = calibration_manual(px, Unit::Millimeter).unwrap();
        for kind in [MeasureKind::Length, MeasureKind::Area] {
            let back = to_pixels(convert_measurement(v, kind, &c), kind, &c);
            prop_assert!((back - v).abs() <= 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn homography_maps_its_corners(b in obb(), s in 10.0..300.0f64) {
        let src = b.corners();
        let dst = [Point2::new(0.0, 0.0), Point2::new(s, 0.0), Point2::new(s, s), Point2::new(0.0, s)];
        let h = Homography::from_points(&src, &dst).unwrap();
        for (p, q) in src.iter().zip(&dst) {
            prop_assert!(h.apply(*p).dist(*q) < 1e-6 * s);
        }
    }
}
