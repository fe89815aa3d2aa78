//! Local limit of the probabilistic perimeter in the plane.
//!
//! For a smooth set `A`, `(1/ε) ProbPer_Ψ(A)` tends to
//! `∫_{∂A} σ⁰_Ψ ρ0 + σ¹_Ψ ρ1 dH¹` as `ε → 0`. For radial kernels both
//! surface tensions equal `σ_Ψ = ∫_0^1 Ψ(F(t)) dt`, where `F(t)` is the
//! kernel mass of the half-plane `{z·v ≥ t}`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{disk_in_disk_fraction, dot, norm};
use crate::measures::RadialProfile;
use crate::psi::Psi;
use crate::quad;

const QUAD_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSet2D {
    /// Open disk.
    Disk { center: [f64; 2], radius: f64 },
    /// `{x : normal·x > offset}`; only the boundary segment with tangential
    /// coordinate in `[s_min, s_max]` is considered.
    HalfPlane { normal: [f64; 2], offset: f64, s_min: f64, s_max: f64 },
}

impl SmoothSet2D {
    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothSet2D::Disk { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(invalid("disk radius must be positive"));
                }
            }
            SmoothSet2D::HalfPlane { normal, s_min, s_max, .. } => {
                if (norm(normal) - 1.0).abs() > 1e-12 {
                    return Err(invalid("half-plane normal must have unit norm"));
                }
                if !(s_min < s_max) {
                    return Err(invalid("boundary segment is empty"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        match self {
            SmoothSet2D::Disk { center, radius } => {
                (x[0] - center[0]).hypot(x[1] - center[1]) < *radius
            }
            SmoothSet2D::HalfPlane { normal, offset, .. } => dot(normal, &x) > *offset,
        }
    }

    pub fn boundary_length(&self) -> f64 {
        match self {
            SmoothSet2D::Disk { radius, .. } => 2.0 * PI * radius,
            SmoothSet2D::HalfPlane { s_min, s_max, .. } => s_max - s_min,
        }
    }

    /// Boundary point and outward unit normal at arc-length parameter `s`.
    pub fn boundary_point(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        match self {
            SmoothSet2D::Disk { center, radius } => {
                let a = s / radius;
                let n = [a.cos(), a.sin()];
                ([center[0] + radius * n[0], center[1] + radius * n[1]], n)
            }
            SmoothSet2D::HalfPlane { normal, offset, .. } => {
                let t = [-normal[1], normal[0]];
                let p = [offset * normal[0] + s * t[0], offset * normal[1] + s * t[1]];
                // A lies on the side the normal points to
                (p, [-normal[0], -normal[1]])
            }
        }
    }

    fn arc_range(&self) -> (f64, f64) {
        match self {
            SmoothSet2D::Disk { radius, .. } => (0.0, 2.0 * PI * radius),
            SmoothSet2D::HalfPlane { s_min, s_max, .. } => (*s_min, *s_max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityFn {
    Constant { value: f64 },
    /// `max{value + gradient·x, 0}`.
    Affine { value: f64, gradient: [f64; 2] },
    /// `amplitude · exp(-|x - center|² / (2 scale²))`.
    Gaussian { center: [f64; 2], scale: f64, amplitude: f64 },
}

impl DensityFn {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            DensityFn::Constant { value } => *value,
            DensityFn::Affine { value, gradient } => (value + dot(gradient, &x)).max(0.0),
            DensityFn::Gaussian { center, scale, amplitude } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-r2 / (2.0 * scale * scale)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            DensityFn::Constant { value } => *value >= 0.0,
            DensityFn::Affine { value, .. } => value.is_finite(),
            DensityFn::Gaussian { scale, amplitude, .. } => *scale > 0.0 && *amplitude >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("density must be non-negative"))
        }
    }
}

/// Continuous class densities `ρ0`, `ρ1`, discretised per cell of width
/// `cells_per_eps⁻¹ · ε` within the ε-collar of a boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityField {
    pub rho0: DensityFn,
    pub rho1: DensityFn,
    #[serde(default = "default_cells_per_eps")]
    pub cells_per_eps: usize,
}

fn default_cells_per_eps() -> usize {
    20
}

impl DensityField {
    pub fn constant(c0: f64, c1: f64) -> Self {
        Self {
            rho0: DensityFn::Constant { value: c0 },
            rho1: DensityFn::Constant { value: c1 },
            cells_per_eps: default_cells_per_eps(),
        }
    }
}

/// `σ_Ψ = ∫_0^1 Ψ(F(t)) dt` for a radial kernel in the plane, with the
/// integral split where `F` crosses a breakpoint of Ψ.
pub fn sigma_psi(psi: &Psi, profile: RadialProfile, side: u8, v: [f64; 2]) -> Result<f64> {
    psi.validate()?;
    if side > 1 {
        return Err(invalid("side must be 0 or 1"));
    }
    if (norm(&v) - 1.0).abs() > 1e-9 {
        return Err(invalid("direction must be a unit vector"));
    }
    // for a radial kernel both sides reduce to the same integral
    let f = |t: f64| profile.half_plane_tail(t);
    let mut cuts = vec![0.0];
    for b in psi.breakpoints() {
        if b < f(0.0) && b > 0.0 {
            cuts.push(quad::bisect(f, 0.0, 1.0, b));
        }
    }
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    Ok(cuts
        .windows(2)
        .map(|w| quad::integrate(|t| psi.apply(f(t).clamp(0.0, 1.0)), w[0], w[1], QUAD_TOL))
        .sum())
}

/// `∫_{∂A} σ⁰_Ψ ρ0 + σ¹_Ψ ρ1 dH¹`.
pub fn boundary_integral(set: &SmoothSet2D, field: &DensityField, psi: &Psi, profile: RadialProfile) -> Result<f64> {
    set.validate()?;
    field.rho0.validate()?;
    field.rho1.validate()?;
    let (_, n) = set.boundary_point(set.arc_range().0);
    let s0 = sigma_psi(psi, profile, 0, n)?;
    let s1 = sigma_psi(psi, profile, 1, n)?;
    let (a, b) = set.arc_range();
    let integrand = |s: f64| {
        let (p, _) = set.boundary_point(s);
        s0 * field.rho0.eval(p) + s1 * field.rho1.eval(p)
    };
    // split the arc so that smooth but localised densities are resolved
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    Ok((0..pieces).map(|k| quad::integrate(integrand, a + k as f64 * h, a + (k + 1) as f64 * h, 1e-13)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub scaled_per: f64,
    pub limit: f64,
    /// Relative error, or the absolute error when the limit is zero.
    pub rel_error: f64,
}

/// Kernel mass of `B(c, r)` for a kernel of radius `eps` centred at distance
/// `dist` from `c`: inside and outside fractions.
fn disk_mass(profile: RadialProfile, dist: f64, eps: f64, r: f64) -> (f64, f64) {
    if profile == RadialProfile::Uniform {
        return disk_in_disk_fraction(dist, eps, r);
    }
    if dist >= eps + r {
        return (0.0, 1.0);
    }
    if dist + eps <= r {
        return (1.0, 0.0);
    }
    let c = profile.constant(2);
    // angular share of the circle |z| = s·eps lying inside the disk
    let share = |s: f64| {
        let rad = s * eps;
        if dist == 0.0 {
            return if rad < r { 1.0 } else { 0.0 };
        }
        let cos = ((dist * dist + rad * rad - r * r) / (2.0 * dist * rad)).clamp(-1.0, 1.0);
        cos.acos() / PI
    };
    let inside = quad::integrate(|s| 2.0 * PI * c * profile.shape(s) * share(s) * s, 0.0, 1.0, 1e-12);
    let outside = quad::integrate(|s| 2.0 * PI * c * profile.shape(s) * (1.0 - share(s)) * s, 0.0, 1.0, 1e-12);
    (inside.clamp(0.0, 1.0), outside.clamp(0.0, 1.0))
}

/// `(1/ε) ProbPer_Ψ(A)` for the collar discretisation at one `ε`.
pub fn scaled_perimeter(
    set: &SmoothSet2D,
    field: &DensityField,
    psi: &Psi,
    profile: RadialProfile,
    eps: f64,
) -> Result<f64> {
    set.validate()?;
    psi.validate()?;
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    if field.cells_per_eps == 0 {
        return Err(invalid("cells_per_eps must be positive"));
    }
    let h = eps / field.cells_per_eps as f64;
    let cell = h * h;
    // contribution of the two atoms at z, given signed distance to ∂A
    // (positive inside A) and the masses of A and Aᶜ seen from z
    let atom = |z: [f64; 2], inside: bool, m_in: f64, m_out: f64| {
        if inside {
            cell * field.rho1.eval(z) * psi.apply(m_out)
        } else {
            cell * field.rho0.eval(z) * psi.apply(m_in)
        }
    };
    let rows: Vec<f64> = match set {
        SmoothSet2D::Disk { center, radius } => {
            let r_out = radius + eps;
            let n = (2.0 * r_out / h).ceil() as usize;
            let lo = [center[0] - r_out, center[1] - r_out];
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let x = lo[0] + (i as f64 + 0.5) * h;
                    let terms: Vec<f64> = (0..n)
                        .filter_map(|j| {
                            let y = lo[1] + (j as f64 + 0.5) * h;
                            let d = (x - center[0]).hypot(y - center[1]);
                            if (d - radius).abs() >= eps {
                                return None;
                            }
                            let (m_in, m_out) = disk_mass(profile, d, eps, *radius);
                            Some(atom([x, y], d < *radius, m_in, m_out))
                        })
                        .collect();
                    quad::pairwise_sum(&terms)
                })
                .collect()
        }
        SmoothSet2D::HalfPlane { normal, offset, s_min, s_max } => {
            let t = [-normal[1], normal[0]];
            let ns = ((s_max - s_min) / h).ceil() as usize;
            let hs = (s_max - s_min) / ns as f64;
            let nr = 2 * field.cells_per_eps;
            (0..ns)
                .into_par_iter()
                .map(|i| {
                    let s = s_min + (i as f64 + 0.5) * hs;
                    let terms: Vec<f64> = (0..nr)
                        .map(|j| {
                            let r = -eps + (j as f64 + 0.5) * h;
                            let z = [
                                offset * normal[0] + s * t[0] + r * normal[0],
                                offset * normal[1] + s * t[1] + r * normal[1],
                            ];
                            let q = r / eps;
                            let (m_in, m_out) = (profile.half_plane_tail(-q), profile.half_plane_tail(q));
                            atom(z, r > 0.0, m_in, m_out) * hs / h
                        })
                        .collect();
                    quad::pairwise_sum(&terms)
                })
                .collect()
        }
    };
    Ok(quad::pairwise_sum(&rows) / eps)
}

/// Scaled perimeter against the boundary-integral limit for each `ε`.
pub fn epsilon_sweep(
    set: &SmoothSet2D,
    field: &DensityField,
    psi: &Psi,
    profile: RadialProfile,
    eps_list: &[f64],
) -> Result<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return Err(invalid("empty epsilon list"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("epsilon list must be strictly decreasing"));
    }
    let limit = boundary_integral(set, field, psi, profile)?;
    eps_list
        .iter()
        .map(|&eps| {
            let scaled = scaled_perimeter(set, field, psi, profile, eps)?;
            let err = (scaled - limit).abs();
            Ok(SweepRow {
                epsilon: eps,
                scaled_per: scaled,
                limit,
                rel_error: if limit != 0.0 { err / limit.abs() } else { err },
            })
        })
        .collect()
}
