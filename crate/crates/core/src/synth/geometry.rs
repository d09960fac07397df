//! Oriented rectangles and the separating-axis test.

/// A rectangle in the plane: center, heading, full length along the heading
/// and full width across it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(x: f64, y: f64, heading: f64, length: f64, width: f64) -> Self {
        Self {
            x,
            y,
            heading,
            length,
            width,
        }
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.heading.sin_cos();
        [(c, s), (-s, c)]
    }

    /// Half extent of the projection onto the unit vector `axis`.
    fn radius(&self, axis: (f64, f64)) -> f64 {
        let [u, v] = self.axes();
        0.5 * self.length * (u.0 * axis.0 + u.1 * axis.1).abs() + 0.5 * self.width * (v.0 * axis.0 + v.1 * axis.1).abs()
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let [u, v] = self.axes();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .map(|(a, b)| (self.x + a * hl * u.0 + b * hw * v.0, self.y + a * hl * u.1 + b * hw * v.1))
    }

    /// Point-in-rectangle test, boundary inclusive.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let [u, v] = self.axes();
        let (dx, dy) = (px - self.x, py - self.y);
        (dx * u.0 + dy * u.1).abs() <= 0.5 * self.length && (dx * v.0 + dy * v.1).abs() <= 0.5 * self.width
    }
}

/// Largest separation between the projections of `a` and `b` over the four
/// edge normals. Positive means disjoint (and is a lower bound on the
/// Euclidean distance); zero or negative means the boxes touch or overlap.
pub fn obb_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    a.axes()
        .into_iter()
        .chain(b.axes())
        .map(|ax| (dx * ax.0 + dy * ax.1).abs() - a.radius(ax) - b.radius(ax))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Exact separating-axis overlap test. Touching boxes count as overlapping.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    obb_gap(a, b) <= 0.0
}
