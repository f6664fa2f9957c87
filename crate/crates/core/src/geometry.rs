//! Axis-aligned box helpers. Corner boxes are `[x1, y1, x2, y2]`,
//! center boxes are `[cx, cy, w, h]`, all in normalized image coordinates.

pub type Corners = [f64; 4];
pub type CenterBox = [f64; 4];

pub fn cxcywh_to_xyxy(b: &CenterBox) -> Corners {
    [
        b[0] - 0.5 * b[2],
        b[1] - 0.5 * b[3],
        b[0] + 0.5 * b[2],
        b[1] + 0.5 * b[3],
    ]
}

pub fn xyxy_to_cxcywh(b: &Corners) -> CenterBox {
    [0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]), b[2] - b[0], b[3] - b[1]]
}

pub fn clamp_unit(b: &Corners) -> Corners {
    b.map(|v| v.clamp(0.0, 1.0))
}

pub fn area(b: &Corners) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn is_valid_corners(b: &Corners) -> bool {
    b.iter().all(|v| v.is_finite()) && b[0] < b[2] && b[1] < b[3]
}

fn intersection(a: &Corners, b: &Corners) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

/// Intersection over union, in `[0, 1]`. Zero-area unions give 0.
pub fn iou(a: &Corners, b: &Corners) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU in `[-1, 1]`.
pub fn giou(a: &Corners, b: &Corners) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    let hull = [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])];
    let hull_area = area(&hull);
    if union <= 0.0 || hull_area <= 0.0 {
        return 0.0;
    }
    inter / union - (hull_area - union) / hull_area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &[2.0, 2.0, 3.0, 3.0]), 0.0);
        // shifted by half a side: 0.5 / (1 + 1 - 0.5)
        let b = [0.5, 0.0, 1.5, 1.0];
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn giou_examples() {
        let a = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(giou(&a, &a), 1.0);
        // disjoint unit squares with a unit gap: hull 3, union 2
        let b = [2.0, 0.0, 3.0, 1.0];
        assert!((giou(&a, &b) - (-1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn conversions_round_trip() {
        let c = [0.4, 0.5, 0.2, 0.3];
        let back = xyxy_to_cxcywh(&cxcywh_to_xyxy(&c));
        for (x, y) in c.iter().zip(back) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
