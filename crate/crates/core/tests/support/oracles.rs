//! Brute-force reference implementations. Each one is written from the
//! definition, slow on purpose, and shares no code with the kernel it checks
//! beyond the plain data types.

#![allow(dead_code)]

use gmt_core::geometry::OrientedBox;
use gmt_core::Vec3;
use ndarray::{Array1, Array2};
use rand::Rng;

/// Discrete Fréchet distance by enumerating every monotone coupling.
pub fn brute_frechet(p: &[Vec3], q: &[Vec3]) -> f64 {
    fn walk(p: &[Vec3], q: &[Vec3], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max((p[i] - q[j]).norm());
        if i + 1 == p.len() && j + 1 == q.len() {
            *best = best.min(worst);
            return;
        }
        if i + 1 < p.len() {
            walk(p, q, i + 1, j, worst, best);
        }
        if j + 1 < q.len() {
            walk(p, q, i, j + 1, worst, best);
        }
        if i + 1 < p.len() && j + 1 < q.len() {
            walk(p, q, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(p, q, 0, 0, 0.0, &mut best);
    best
}

/// Inverse-squared-distance interpolation after a full sort of the cloud.
pub fn brute_propagate(points: &[Vec3], features: &Array2<f64>, query: &Vec3, k: usize) -> Array1<f64> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.min(points.len());
    if order[0].0 < 1e-8 {
        return features.row(order[0].1).to_owned();
    }
    let mut num = Array1::<f64>::zeros(features.ncols());
    let mut den = 0.0;
    for &(d, i) in &order[..k] {
        let w = 1.0 / (d * d);
        num = num + features.row(i).to_owned() * w;
        den += w;
    }
    num / den
}

fn inside(b: &OrientedBox, p: &Vec3) -> bool {
    let r = b.rotation_matrix();
    let d = p - b.center;
    (0..3).all(|i| r.column(i).dot(&d).abs() <= b.size[i] / 2.0)
}

fn corners(b: &OrientedBox) -> Vec<Vec3> {
    let r = b.rotation_matrix();
    let mut out = Vec::with_capacity(8);
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                out.push(b.center + r * Vec3::new(sx * b.size.x, sy * b.size.y, sz * b.size.z));
            }
        }
    }
    out
}

/// Monte Carlo intersection test. Half of the `n` points are drawn
/// uniformly from `a` clipped to the bounds of `b` in `a`'s frame, half the
/// other way round; both regions contain the whole intersection. A hit is a
/// point inside both boxes.
pub fn sampled_intersect(a: &OrientedBox, b: &OrientedBox, n: usize, rng: &mut impl Rng) -> bool {
    sample_in_frame(a, b, n / 2, rng) || sample_in_frame(b, a, n - n / 2, rng)
}

fn sample_in_frame(a: &OrientedBox, b: &OrientedBox, n: usize, rng: &mut impl Rng) -> bool {
    let r = a.rotation_matrix();
    let local: Vec<Vec3> = corners(b).iter().map(|c| r.transpose() * (c - a.center)).collect();
    let h = a.size / 2.0;
    let lo = local.iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p)).sup(&-h);
    let hi = local.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p)).inf(&h);
    if (0..3).any(|i| lo[i] > hi[i]) {
        return false;
    }
    (0..n).any(|_| {
        let p = a.center + r * Vec3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        inside(a, &p) && inside(b, &p)
    })
}

/// Whether segment `p0 → p1` meets the solid box (slab clipping).
fn segment_hits(b: &OrientedBox, p0: &Vec3, p1: &Vec3) -> bool {
    let r = b.rotation_matrix();
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..3 {
        let axis = r.column(i);
        let s = axis.dot(&(p0 - b.center));
        let d = axis.dot(&(p1 - p0));
        let h = b.size[i] / 2.0;
        if d == 0.0 {
            if s.abs() > h {
                return false;
            }
            continue;
        }
        let (mut lo, mut hi) = ((-h - s) / d, (h - s) / d);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    true
}

fn edges(b: &OrientedBox) -> Vec<(Vec3, Vec3)> {
    let c = corners(b);
    let mut out = Vec::new();
    for i in 0..8 {
        for bit in [1, 2, 4] {
            if i & bit == 0 {
                out.push((c[i], c[i | bit]));
            }
        }
    }
    out
}

/// Exact test for convex polytopes: two boxes meet iff an edge of one
/// touches the other solid box.
pub fn polytope_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    edges(a).iter().any(|(p, q)| segment_hits(b, p, q)) || edges(b).iter().any(|(p, q)| segment_hits(a, p, q))
}

/// True when growing or shrinking `a` by `delta` on every side changes the
/// exact answer, i.e. the pair is within `delta` of first contact.
pub fn near_contact(a: &OrientedBox, b: &OrientedBox, delta: f64) -> bool {
    let grown = OrientedBox::new(a.center, a.size.add_scalar(2.0 * delta), a.rotation).unwrap();
    let shrunk_size = a.size.map(|s| (s - 2.0 * delta).max(1e-12));
    let shrunk = OrientedBox::new(a.center, shrunk_size, a.rotation).unwrap();
    polytope_intersect(&grown, b) != polytope_intersect(&shrunk, b)
}

pub fn random_box(rng: &mut impl Rng) -> OrientedBox {
    let v = |rng: &mut dyn rand::RngCore| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    loop {
        let a1 = v(rng);
        let a2 = v(rng);
        if a1.norm() < 0.1 || a1.cross(&a2).norm() < 0.1 {
            continue;
        }
        let center = v(rng) * 0.6;
        let size = Vec3::from_fn(|_, _| rng.random_range(0.1..0.8));
        return OrientedBox::new(center, size, gmt_core::Rot6D::new(a1, a2)).unwrap();
    }
}
