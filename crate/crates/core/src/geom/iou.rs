use std::cmp::Ordering;
use std::collections::HashMap;

use super::{convex_intersection, obb_corners, OrientedBox};
use crate::infer::DetectionSet;

fn key_cmp(a: &OrientedBox, b: &OrientedBox) -> Ordering {
    a.cx()
        .total_cmp(&b.cx())
        .then(a.cy().total_cmp(&b.cy()))
        .then(a.w().total_cmp(&b.w()))
        .then(a.h().total_cmp(&b.h()))
        .then(a.theta().total_cmp(&b.theta()))
}

fn aabb_disjoint(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (ax0, ay0, ax1, ay1) = a.aabb();
    let (bx0, by0, bx1, by1) = b.aabb();
    ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0
}

/// Polygon-exact intersection over union of two oriented boxes.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // Fixed argument order makes the result bit-for-bit symmetric.
    let (a, b) = if key_cmp(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    if aabb_disjoint(a, b) {
        return 0.0;
    }
    if a.same_shape(b, 1e-9) {
        return 1.0;
    }
    let inter = convex_intersection(&obb_corners(a), &obb_corners(b)).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy per-category suppression.
///
/// Candidates are visited by descending confidence, ties going to the lower
/// detection index, then the lower input position. A candidate survives when its IoU with every survivor of
/// the same category is below `iou_thresh`. Survivors keep their input order.
pub fn obb_nms(dets: &DetectionSet, iou_thresh: f64) -> DetectionSet {
    let d = &dets.detections;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| {
        d[j].confidence
            .total_cmp(&d[i].confidence)
            .then(d[i].index.cmp(&d[j].index))
            .then(i.cmp(&j))
    });

    let mut kept_by_cat: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut keep = vec![false; d.len()];
    for i in order {
        let peers = kept_by_cat.entry(d[i].category.as_str()).or_default();
        let suppressed = peers
            .iter()
            .any(|&k| rotated_iou(&d[i].bbox, &d[k].bbox) >= iou_thresh);
        if !suppressed {
            peers.push(i);
            keep[i] = true;
        }
    }

    DetectionSet {
        detections: d
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(det, _)| det.clone())
            .collect(),
        ..dets.clone_meta()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::Detection;
    use std::f64::consts::FRAC_PI_4;

    fn bx(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, h, t).unwrap()
    }

    fn set(items: &[(OrientedBox, &str, f64)]) -> DetectionSet {
        DetectionSet {
            image_ref: "t".into(),
            width: 100,
            height: 100,
            detections: items
                .iter()
                .enumerate()
                .map(|(i, (b, c, s))| Detection::new(i, *b, c, *s).unwrap())
                .collect(),
        }
    }

    #[test]
    fn closed_form_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(rotated_iou(&a, &a), 1.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);

        // unit square vs itself turned 45 degrees: octagon of area 2(sqrt2 - 1)
        let u = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let r = bx(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        let oct = 2.0 * (2f64.sqrt() - 1.0);
        let expect = oct / (2.0 - oct);
        assert!((expect - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((rotated_iou(&u, &r) - expect).abs() < 1e-12);
    }

    #[test]
    fn swapped_representation_is_identical() {
        let a = bx(5.0, 5.0, 4.0, 2.0, 0.3);
        let b = bx(5.0, 5.0, 2.0, 4.0, 0.3 + std::f64::consts::FRAC_PI_2);
        assert_eq!(rotated_iou(&a, &b), 1.0);
    }

    #[test]
    fn containment_ratio() {
        let outer = bx(0.0, 0.0, 10.0, 6.0, 0.4);
        let inner = bx(0.0, 0.0, 5.0, 3.0, 0.4);
        assert!((rotated_iou(&outer, &inner) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn nms_suppresses_same_category_only() {
        let a = bx(50.0, 50.0, 20.0, 10.0, 0.0);
        let b = bx(50.5, 50.0, 20.0, 10.0, 0.0);
        assert!(rotated_iou(&a, &b) > 0.9);
        let kept = obb_nms(&set(&[(a, "spike", 0.8), (b, "spike", 0.9)]), 0.3);
        assert_eq!(kept.detections.len(), 1);
        assert_eq!(kept.detections[0].confidence, 0.9);
        assert_eq!(kept.detections[0].index, 1);

        let both = obb_nms(&set(&[(a, "spike", 0.9), (b, "spikelet", 0.8)]), 0.3);
        assert_eq!(both.detections.len(), 2);

        assert!(obb_nms(&set(&[]), 0.3).detections.is_empty());
    }

    #[test]
    fn nms_tie_goes_to_lower_index() {
        let a = bx(50.0, 50.0, 20.0, 10.0, 0.0);
        let b = bx(51.0, 50.0, 20.0, 10.0, 0.0);
        let kept = obb_nms(&set(&[(a, "spike", 0.5), (b, "spike", 0.5)]), 0.3);
        assert_eq!(kept.detections.len(), 1);
        assert_eq!(kept.detections[0].index, 0);
    }
}
