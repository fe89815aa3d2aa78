//! Closed-form masses of elementary sets under uniform ball measures.

use std::f64::consts::PI;

/// Fraction of the unit disk lying in `{z : z·v ≥ t}` for a unit vector `v`.
pub fn segment_fraction(t: f64) -> f64 {
    if t <= -1.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        (t.acos() - t * (1.0 - t * t).sqrt()) / PI
    }
}

/// Area of the intersection of two disks with radii `r1`, `r2` whose
/// centres are `dist` apart.
pub fn lens_area(dist: f64, r1: f64, r2: f64) -> f64 {
    if dist >= r1 + r2 {
        return 0.0;
    }
    let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if dist + small <= large {
        return PI * small * small;
    }
    let d2 = dist * dist;
    let a1 = ((d2 + r1 * r1 - r2 * r2) / (2.0 * dist * r1)).clamp(-1.0, 1.0).acos();
    let a2 = ((d2 + r2 * r2 - r1 * r1) / (2.0 * dist * r2)).clamp(-1.0, 1.0).acos();
    let k = (-dist + r1 + r2) * (dist + r1 - r2) * (dist - r1 + r2) * (dist + r1 + r2);
    r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k.max(0.0).sqrt()
}

/// Fraction of the disk `B(x, eps)` covered by the disk `B(c, r)`, as a pair
/// `(inside, outside)`. Containment and disjointness are reported exactly.
pub fn disk_in_disk_fraction(dist: f64, eps: f64, r: f64) -> (f64, f64) {
    if dist >= eps + r {
        (0.0, 1.0)
    } else if dist + eps <= r {
        (1.0, 0.0)
    } else {
        let f = (lens_area(dist, eps, r) / (PI * eps * eps)).clamp(0.0, 1.0);
        (f, 1.0 - f)
    }
}

/// Length of `[a_lo, a_hi] ∩ [b_lo, b_hi]`.
pub fn interval_overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Euclidean distance from `x` to the closed box `[lo, hi]`.
pub fn box_distance(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&xi, (&l, &h))| {
            let d = if xi < l {
                l - xi
            } else if xi > h {
                xi - h
            } else {
                0.0
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lebesgue volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    // V_d = 2π/d · V_{d-2}, V_0 = 1, V_1 = 2
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}
