//! Convex hull of pixel centers and its exact rasterized area.

type Point = (i64, i64);

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull with collinear points dropped, counter-clockwise.
/// Points are `(x, y)`.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Number of integer points inside or on the boundary of a convex polygon
/// (given by its vertices in order; degenerate 1- and 2-vertex hulls allowed).
pub fn rasterized_area(hull: &[Point]) -> usize {
    match hull.len() {
        0 => return 0,
        1 => return 1,
        _ => {}
    }
    let ymin = hull.iter().map(|p| p.1).min().unwrap();
    let ymax = hull.iter().map(|p| p.1).max().unwrap();
    let mut total = 0usize;
    for y in ymin..=ymax {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for i in 0..hull.len() {
            let (p, q) = (hull[i], hull[(i + 1) % hull.len()]);
            if p.1 == q.1 {
                if p.1 == y {
                    lo = lo.min(p.0.min(q.0));
                    hi = hi.max(p.0.max(q.0));
                }
                continue;
            }
            let (a, b) = if p.1 < q.1 { (p, q) } else { (q, p) };
            if y < a.1 || y > b.1 {
                continue;
            }
            // x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y), kept as an exact fraction
            let dy = b.1 - a.1;
            let num = a.0 * dy + (y - a.1) * (b.0 - a.0);
            let floor = num.div_euclid(dy);
            let ceil = -(-num).div_euclid(dy);
            lo = lo.min(ceil);
            hi = hi.max(floor);
        }
        if hi >= lo {
            total += (hi - lo + 1) as usize;
        }
    }
    total
}

/// Rasterized hull area of a pixel set (`(row, col)` flat indices on a
/// raster of the given width). Only row extremes feed the hull.
pub fn pixel_hull_area(pixels: &[usize], width: usize) -> usize {
    let mut extremes: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &i in pixels {
        let (y, x) = (i / width, i % width);
        extremes
            .entry(y)
            .and_modify(|e| {
                e.0 = e.0.min(x);
                e.1 = e.1.max(x);
            })
            .or_insert((x, x));
    }
    let pts: Vec<Point> = extremes
        .iter()
        .flat_map(|(&y, &(x0, x1))| [(x0 as i64, y as i64), (x1 as i64, y as i64)])
        .collect();
    rasterized_area(&convex_hull(&pts))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force: a point is inside a CCW convex polygon when it is on the
    /// left of (or on) every edge; degenerate hulls check segment membership.
    fn brute_force_area(hull: &[Point]) -> usize {
        let (x0, x1) = (hull.iter().map(|p| p.0).min().unwrap(), hull.iter().map(|p| p.0).max().unwrap());
        let (y0, y1) = (hull.iter().map(|p| p.1).min().unwrap(), hull.iter().map(|p| p.1).max().unwrap());
        let mut n = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let inside = match hull.len() {
                    1 => true,
                    2 => cross(hull[0], hull[1], (x, y)) == 0,
                    _ => (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], (x, y)) >= 0),
                };
                n += usize::from(inside);
            }
        }
        n
    }

    #[test]
    fn square_and_triangle() {
        let sq = convex_hull(&[(0, 0), (3, 0), (3, 3), (0, 3), (1, 1)]);
        assert_eq!(sq.len(), 4);
        assert_eq!(rasterized_area(&sq), 16);
        let tri = convex_hull(&[(0, 0), (4, 0), (0, 4)]);
        assert_eq!(rasterized_area(&tri), 15);
        assert_eq!(brute_force_area(&tri), 15);
    }

    #[test]
    fn degenerate_hulls() {
        assert_eq!(rasterized_area(&convex_hull(&[(2, 5)])), 1);
        let seg = convex_hull(&[(0, 0), (2, 1), (4, 2)]);
        assert_eq!(seg.len(), 2);
        assert_eq!(rasterized_area(&seg), 3);
        let diag = convex_hull(&[(0, 0), (3, 1)]);
        assert_eq!(rasterized_area(&diag), 2);
    }

    #[test]
    fn random_hulls_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let n = rng.gen_range(1..12);
            let pts: Vec<Point> = (0..n).map(|_| (rng.gen_range(0..15), rng.gen_range(0..15))).collect();
            let hull = convex_hull(&pts);
            assert_eq!(rasterized_area(&hull), brute_force_area(&hull), "{pts:?}");
        }
    }
}
