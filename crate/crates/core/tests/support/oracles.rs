//! Independent reference implementations used by the property suites and
//! the acceptance target. Nothing here calls into the code under test
//! beyond plain data types.

#![allow(dead_code)]

use facecheck_core::corpus::Label;
use facecheck_core::geometry::{LandmarkSet, MaskSpec, MaskType, Point};
use rand::Rng;

/// Pixel `(r, c)` has its center at `(x, y) = (c, r)`.
pub fn disk_union(points: &[Point], radius: f64, h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = points.iter().any(|p| {
                let (dx, dy) = (c as f64 - p.x, r as f64 - p.y);
                (dx * dx + dy * dy).sqrt() <= radius
            });
        }
    }
    out
}

/// Gift-wrapping hull, counter-clockwise, collinear points skipped.
pub fn jarvis_hull(points: &[Point]) -> Vec<Point> {
    let start = points
        .iter()
        .copied()
        .min_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)))
        .expect("non-empty");
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut next = points[0];
        for &p in points {
            if next == current {
                next = p;
                continue;
            }
            let turn = (next.x - current.x) * (p.y - current.y) - (next.y - current.y) * (p.x - current.x);
            let farther = current.dist(p) > current.dist(next);
            if turn < 0.0 || (turn == 0.0 && farther) {
                next = p;
            }
        }
        if next == start || hull.len() > points.len() {
            break;
        }
        hull.push(next);
        current = next;
    }
    hull
}

fn on_edge(a: Point, b: Point, p: Point) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    cross == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Even-odd ray casting along +x; points on an edge count as inside.
pub fn in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if on_edge(a, b, p) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn polygon_fill(points: &[Point], h: usize, w: usize) -> Vec<bool> {
    let hull = jarvis_hull(points);
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = in_polygon(&hull, Point::new(c as f64, r as f64));
        }
    }
    out
}

/// 1-indexed landmark ranges behind each mask type.
pub fn subset_points(mask_type: MaskType, lms: &LandmarkSet) -> Vec<Point> {
    let range = match mask_type {
        MaskType::NoMask => return Vec::new(),
        MaskType::EyeMask => 37..=48,
        MaskType::HullMask | MaskType::InnerMask => 18..=68,
        MaskType::UniteMask => 1..=68,
    };
    range.map(|i| lms.points()[i - 1]).collect()
}

/// Row-major per-pixel membership for any mask spec.
pub fn mask_membership(spec: &MaskSpec, lms: &LandmarkSet, h: usize, w: usize) -> Vec<bool> {
    let pts = subset_points(spec.mask_type, lms);
    match spec.mask_type {
        MaskType::NoMask => vec![false; h * w],
        MaskType::UniteMask | MaskType::InnerMask => disk_union(&pts, spec.radius_k as f64, h, w),
        MaskType::EyeMask | MaskType::HullMask => polygon_fill(&pts, h, w),
    }
}

/// 68 points scattered over (and slightly beyond) an `size x size` grid.
pub fn random_landmarks(rng: &mut impl Rng, size: usize) -> LandmarkSet {
    let hi = size as f64 + 2.0;
    loop {
        let pts: Vec<Point> = (0..68)
            .map(|_| Point::new(rng.random_range(-2.0..hi), rng.random_range(-2.0..hi)))
            .collect();
        if let Ok(l) = LandmarkSet::new(&pts) {
            return l;
        }
    }
}

/// Pairwise Mann-Whitney count with ties worth one half; fakes positive.
pub fn auc_by_pairs(scores: &[(f64, Label)]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for &(f, lf) in scores {
        if lf != Label::Fake {
            continue;
        }
        for &(r, lr) in scores {
            if lr != Label::Real {
                continue;
            }
            pairs += 1.0;
            if f > r {
                num += 1.0;
            } else if f == r {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Random two-class score set of size `2..=max_len`; `levels > 0` draws
/// scores from that many discrete values to force ties.
pub fn random_scores(rng: &mut impl Rng, max_len: usize, levels: u32) -> Vec<(f64, Label)> {
    let n = rng.random_range(2..=max_len);
    let mut out: Vec<(f64, Label)> = (0..n)
        .map(|_| {
            let label = if rng.random_bool(0.5) { Label::Fake } else { Label::Real };
            let score = if levels > 0 {
                rng.random_range(0..levels) as f64 / levels as f64
            } else {
                rng.random_range(-1.0..1.0)
            };
            (score, label)
        })
        .collect();
    out[0].1 = Label::Fake;
    out[1].1 = Label::Real;
    out
}

/// Plain-loop margin loss in f64, written without the library's helpers.
pub fn margin_loss(features: &[f64], labels: &[usize], weights: &[f64], d: usize, s: f64, m: f64) -> f64 {
    let n = weights.len() / d;
    let unit = |v: &[f64]| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let w: Vec<Vec<f64>> = (0..n).map(|j| unit(&weights[j * d..(j + 1) * d])).collect();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let f = unit(&features[i * d..(i + 1) * d]);
        let mut z = Vec::with_capacity(n);
        for (j, wj) in w.iter().enumerate() {
            let c: f64 = f.iter().zip(wj).map(|(a, b)| a * b).sum();
            if j == y {
                let c = c.clamp(-1.0 + 1e-7, 1.0 - 1e-7);
                z.push(s * (c.acos() + m).cos());
            } else {
                z.push(s * c);
            }
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(&x);
            x[i] = orig - h;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate error measured against the gradient's own scale
/// (its largest magnitude), so near-zero coordinates are judged against
/// the numbers that matter in an update rather than against themselves.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}
