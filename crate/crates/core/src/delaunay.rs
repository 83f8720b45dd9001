//! Incremental Delaunay triangulation (Bowyer-Watson with a super-triangle)
//! and barycentric point indexing against the resulting triangles.

use nalgebra::Point2;

use crate::error::{Error, Result};

/// Triangle as indices into the point set that was triangulated.
pub type Triangle = [usize; 3];

/// Signed double area of triangle (a, b, c); positive when counter-clockwise.
fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// True when `p` lies strictly inside the circumcircle of the
/// counter-clockwise triangle (a, b, c).
fn in_circumcircle(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, p: Point2<f64>) -> bool {
    let (ax, ay) = (a.x - p.x, a.y - p.y);
    let (bx, by) = (b.x - p.x, b.y - p.y);
    let (cx, cy) = (c.x - p.x, c.y - p.y);
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    det > 0.0
}

/// Delaunay triangulation of a point set by incremental insertion. Fails
/// when the points are all (numerically) collinear.
pub fn triangulate(points: &[Point2<f64>]) -> Result<Vec<Triangle>> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }

    // Super-triangle comfortably enclosing the point set.
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let mid_x = 0.5 * (min_x + max_x);
    let mid_y = 0.5 * (min_y + max_y);
    let mut vertices: Vec<Point2<f64>> = points.to_vec();
    let s0 = vertices.len();
    vertices.push(Point2::new(mid_x - 20.0 * span, mid_y - 10.0 * span));
    vertices.push(Point2::new(mid_x + 20.0 * span, mid_y - 10.0 * span));
    vertices.push(Point2::new(mid_x, mid_y + 20.0 * span));

    let mut triangles: Vec<Triangle> = vec![[s0, s0 + 1, s0 + 2]];

    for (idx, &point) in points.iter().enumerate() {
        // Collect triangles whose circumcircle contains the new point.
        let mut bad = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if in_circumcircle(a, b, c, point) {
                bad.push(t);
            }
        }
        // Boundary of the cavity: edges not shared by two bad triangles.
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        for &t in &bad {
            let tri = triangles[t];
            for e in 0..3 {
                let edge = (tri[e], tri[(e + 1) % 3]);
                if let Some(pos) = boundary
                    .iter()
                    .position(|&(u, v)| (u, v) == (edge.1, edge.0))
                {
                    boundary.swap_remove(pos);
                } else {
                    boundary.push(edge);
                }
            }
        }
        for &t in bad.iter().rev() {
            triangles.swap_remove(t);
        }
        for (u, v) in boundary {
            // Keep counter-clockwise orientation.
            if orient(vertices[u], vertices[v], point) > 0.0 {
                triangles.push([u, v, idx]);
            } else {
                triangles.push([v, u, idx]);
            }
        }
    }

    triangles.retain(|tri| tri.iter().all(|&v| v < s0));
    if triangles.is_empty() {
        return Err(Error::DegenerateGeometry(
            "point set is collinear; no triangulation exists".into(),
        ));
    }
    triangles.sort_unstable();
    Ok(triangles)
}

/// Barycentric coordinates of `p` in triangle (a, b, c). Coordinates sum to
/// 1 and may leave [0, 1] for points outside the triangle.
pub fn barycentric(
    a: Point2<f64>,
    b: Point2<f64>,
    c: Point2<f64>,
    p: Point2<f64>,
) -> Result<[f64; 3]> {
    let area = orient(a, b, c);
    if area == 0.0 {
        return Err(Error::DegenerateGeometry(
            "zero-area triangle has no barycentric frame".into(),
        ));
    }
    let wa = orient(p, b, c) / area;
    let wb = orient(a, p, c) / area;
    let wc = 1.0 - wa - wb;
    Ok([wa, wb, wc])
}

/// Pick the triangle containing `p`, falling back to the triangle with the
/// nearest centroid for points outside every triangle.
pub fn locate(points: &[Point2<f64>], triangles: &[Triangle], p: Point2<f64>) -> usize {
    const EDGE_SLACK: f64 = 1e-12;
    let mut nearest = 0usize;
    let mut nearest_dist = f64::INFINITY;
    for (t, tri) in triangles.iter().enumerate() {
        let (a, b, c) = (points[tri[0]], points[tri[1]], points[tri[2]]);
        if let Ok(w) = barycentric(a, b, c, p) {
            if w.iter().all(|&v| v >= -EDGE_SLACK) {
                return t;
            }
        }
        let centroid = Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let dist = (centroid - p).norm_squared();
        if dist < nearest_dist {
            nearest_dist = dist;
            nearest = t;
        }
    }
    nearest
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn four_points_match_circumcircle_oracle() {
        // Convex quad: exactly one of the two diagonals yields the Delaunay
        // triangulation; check against the empty-circumcircle criterion.
        let points = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.2),
            Point2::new(2.1, 1.9),
            Point2::new(-0.2, 1.6),
        ];
        let triangles = triangulate(&points).unwrap();
        assert_eq!(triangles.len(), 2);

        // Brute-force oracle over both diagonal choices.
        let splits = [
            [[0usize, 1, 2], [0, 2, 3]], // diagonal 0-2
            [[0, 1, 3], [1, 2, 3]],      // diagonal 1-3
        ];
        let empty_circumcircle = |tris: &[[usize; 3]; 2]| {
            tris.iter().all(|tri| {
                let (a, mut b, mut c) =
                    (points[tri[0]], points[tri[1]], points[tri[2]]);
                if orient(a, b, c) < 0.0 {
                    std::mem::swap(&mut b, &mut c);
                }
                (0..4).all(|v| {
                    tri.contains(&v) || !in_circumcircle(a, b, c, points[v])
                })
            })
        };
        let valid: Vec<_> = splits.iter().filter(|s| empty_circumcircle(s)).collect();
        assert_eq!(valid.len(), 1, "exactly one diagonal is Delaunay");
        let mut expected: Vec<Triangle> = valid[0].to_vec();
        for tri in &mut expected {
            tri.sort_unstable();
        }
        expected.sort_unstable();
        let mut got = triangles.clone();
        for tri in &mut got {
            tri.sort_unstable();
        }
        got.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn random_sets_satisfy_delaunay_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let points: Vec<Point2<f64>> = (0..25)
                .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let triangles = triangulate(&points).unwrap();
            for tri in &triangles {
                let (a, mut b, mut c) = (points[tri[0]], points[tri[1]], points[tri[2]]);
                if orient(a, b, c) < 0.0 {
                    std::mem::swap(&mut b, &mut c);
                }
                for (v, &p) in points.iter().enumerate() {
                    if tri.contains(&v) {
                        continue;
                    }
                    assert!(
                        !in_circumcircle(a, b, c, p),
                        "point {v} inside circumcircle of {tri:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let points: Vec<Point2<f64>> = (0..5).map(|i| Point2::new(i as f64, 2.0)).collect();
        assert!(matches!(
            triangulate(&points),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn barycentric_special_points() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(4.0, 0.0);
        let c = Point2::new(0.0, 4.0);

        let w = barycentric(a, b, c, a).unwrap();
        assert_eq!(w, [1.0, 0.0, 0.0]);

        let centroid = Point2::new(4.0 / 3.0, 4.0 / 3.0);
        let w = barycentric(a, b, c, centroid).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        // Outside points extrapolate but still sum to 1.
        let w = barycentric(a, b, c, Point2::new(-1.0, -1.0)).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().any(|&v| v < 0.0));
    }

    #[test]
    fn locate_falls_back_to_nearest_centroid() {
        let points = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
        ];
        let triangles = triangulate(&points).unwrap();
        let inside = locate(&points, &triangles, Point2::new(0.25, 0.25));
        let tri = triangles[inside];
        let w = barycentric(
            points[tri[0]],
            points[tri[1]],
            points[tri[2]],
            Point2::new(0.25, 0.25),
        )
        .unwrap();
        assert!(w.iter().all(|&v| v >= -1e-12));

        // Far outside: still assigned to some triangle.
        let outside = locate(&points, &triangles, Point2::new(50.0, 50.0));
        assert!(outside < triangles.len());
    }
}
