//! Hard classifiers as sets and soft classifiers as functions into `[0, 1]`.
//!
//! A hard classifier is the set `A` of points labelled 1. Sets are built from
//! half-spaces, open disks, finite point sets, grid masks and Boolean
//! expressions over those. Soft classifiers carry parameters and expose
//! parameter gradients for training.
//!
//! Grid cells are half-open boxes `[lo, hi)`; cells are indexed row-major
//! (axis 0 slowest). Points outside the bounding box are never members of a
//! grid mask and get value 0 from a grid function.

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, invalid, PrlError, Result};
use crate::geometry::{dist, dot, norm};
use crate::rng::RngState;

const UNIT_NORMAL_TOL: f64 = 1e-12;

/// Axis-aligned bounding box with a per-axis cell count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridShape {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let shape = Self { lo, hi, resolution };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lo.len();
        if d == 0 {
            return Err(invalid("grid needs at least one axis"));
        }
        check_dim(d, self.hi.len())?;
        check_dim(d, self.resolution.len())?;
        for k in 0..d {
            if !(self.lo[k] < self.hi[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite() {
                return Err(invalid(format!("grid axis {k} has empty extent")));
            }
            if self.resolution[k] == 0 {
                return Err(invalid(format!("grid axis {k} has zero resolution")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.resolution[axis] as f64
    }

    /// Flat index of the cell containing `x`, if any.
    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for (k, &xk) in x.iter().enumerate().take(self.dim()) {
            if !(xk >= self.lo[k] && xk < self.hi[k]) {
                return None;
            }
            let n = self.resolution[k];
            let i = (((xk - self.lo[k]) / self.cell_width(k)).floor() as usize).min(n - 1);
            idx = idx * n + i;
        }
        Some(idx)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        let mut rest = flat;
        for k in (0..self.dim()).rev() {
            out[k] = rest % self.resolution[k];
            rest /= self.resolution[k];
        }
        out
    }

    pub fn cell_bounds(&self, flat: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.multi_index(flat);
        let lo = (0..self.dim()).map(|k| self.lo[k] + idx[k] as f64 * self.cell_width(k)).collect();
        let hi = (0..self.dim())
            .map(|k| {
                if idx[k] + 1 == self.resolution[k] {
                    self.hi[k]
                } else {
                    self.lo[k] + (idx[k] + 1) as f64 * self.cell_width(k)
                }
            })
            .collect();
        (lo, hi)
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        (0..self.dim())
            .map(|k| self.lo[k] + (idx[k] as f64 + 0.5) * self.cell_width(k))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|k| x[k] >= self.lo[k] && x[k] < self.hi[k])
    }
}

/// Binary mask over a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridMaskRepr")]
pub struct GridMask {
    pub shape: GridShape,
    #[serde(serialize_with = "bits_to_base64")]
    pub bits: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridMaskRepr {
    shape: GridShape,
    #[serde(deserialize_with = "bits_from_base64")]
    bits: Vec<bool>,
}

impl TryFrom<GridMaskRepr> for GridMask {
    type Error = PrlError;

    fn try_from(raw: GridMaskRepr) -> Result<Self> {
        let n = raw.shape.n_cells();
        let mut bits = raw.bits;
        if bits.len() < n || bits.len() >= n + 8 || bits[n..].iter().any(|b| *b) {
            return Err(invalid(format!("bit string does not encode {n} cells")));
        }
        bits.truncate(n);
        GridMask::new(raw.shape, bits)
    }
}

impl GridMask {
    pub fn new(shape: GridShape, bits: Vec<bool>) -> Result<Self> {
        let mask = Self { shape, bits };
        mask.validate()?;
        Ok(mask)
    }

    pub fn empty(shape: GridShape) -> Self {
        let n = shape.n_cells();
        Self { shape, bits: vec![false; n] }
    }

    /// Mask from the low bits of `code`; cell `i` is set iff bit `i` is.
    pub fn from_code(shape: GridShape, code: u64) -> Self {
        let n = shape.n_cells();
        let bits = (0..n).map(|i| i < 64 && (code >> i) & 1 == 1).collect();
        Self { shape, bits }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.bits.len() != self.shape.n_cells() {
            return Err(invalid(format!(
                "grid mask has {} bits but {} cells",
                self.bits.len(),
                self.shape.n_cells()
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.shape.cell_index(x).map(|i| self.bits[i]).unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn bits_to_base64<S: Serializer>(bits: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&encode_bits(bits))
}

fn bits_from_base64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    let encoded = String::deserialize(d)?;
    decode_bits(&encoded).map_err(serde::de::Error::custom)
}

/// Packs bits LSB-first into bytes and base64-encodes them. The bit count is
/// not stored; it is implied by the grid shape.
pub fn encode_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_bits(encoded: &str) -> std::result::Result<Vec<bool>, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(encoded)
        .map_err(|e| e.to_string())?;
    Ok(bytes
        .iter()
        .flat_map(|byte| (0..8).map(move |k| byte & (1 << k) != 0))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOp {
    Union,
    Intersect,
    Complement,
}

/// A measurable set used as a hard classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum HardSet {
    Empty,
    Full,
    /// `{x : normal·x > offset}` with a unit normal.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// Open ball `{x : |x - center| < radius}`.
    Disk { center: Vec<f64>, radius: f64 },
    /// A finite set of points; null for every atomless perturbation model.
    Points { points: Vec<Vec<f64>> },
    GridMask(GridMask),
    /// `{x : u(x) ≥ level}`, or `{x : u(x) > level}` when `strict`.
    Superlevel {
        classifier: Box<SoftClassifier>,
        level: f64,
        strict: bool,
    },
    SetExpr { op: SetOp, children: Vec<HardSet> },
}

impl HardSet {
    /// Half-space with the normal rescaled to unit length.
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n = norm(&normal);
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("half-space normal must be non-zero"));
        }
        Ok(HardSet::HalfSpace {
            normal: normal.iter().map(|v| v / n).collect(),
            offset: offset / n,
        })
    }

    pub fn disk(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(invalid("disk radius must be non-negative"));
        }
        Ok(HardSet::Disk { center, radius })
    }

    pub fn union(a: HardSet, b: HardSet) -> Self {
        HardSet::SetExpr { op: SetOp::Union, children: vec![a, b] }
    }

    pub fn intersect(a: HardSet, b: HardSet) -> Self {
        HardSet::SetExpr { op: SetOp::Intersect, children: vec![a, b] }
    }

    pub fn complement(a: HardSet) -> Self {
        HardSet::SetExpr { op: SetOp::Complement, children: vec![a] }
    }

    /// Dimension of the ambient space, `None` for `Empty`/`Full` and
    /// expressions built only from them.
    pub fn dim(&self) -> Option<usize> {
        match self {
            HardSet::Empty | HardSet::Full => None,
            HardSet::HalfSpace { normal, .. } => Some(normal.len()),
            HardSet::Disk { center, .. } => Some(center.len()),
            HardSet::Points { points } => points.first().map(|p| p.len()),
            HardSet::GridMask(m) => Some(m.shape.dim()),
            HardSet::Superlevel { classifier, .. } => classifier.dim(),
            HardSet::SetExpr { children, .. } => children.iter().find_map(|c| c.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HardSet::Empty | HardSet::Full => Ok(()),
            HardSet::HalfSpace { normal, offset } => {
                if (norm(normal) - 1.0).abs() > UNIT_NORMAL_TOL {
                    return Err(invalid("half-space normal must have unit norm"));
                }
                if !offset.is_finite() {
                    return Err(invalid("half-space offset must be finite"));
                }
                Ok(())
            }
            HardSet::Disk { radius, .. } => {
                if radius.is_finite() && *radius >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("disk radius must be finite and non-negative"))
                }
            }
            HardSet::Points { points } => {
                if let Some(first) = points.first() {
                    for p in points {
                        check_dim(first.len(), p.len())?;
                    }
                }
                Ok(())
            }
            HardSet::GridMask(m) => m.validate(),
            HardSet::Superlevel { classifier, .. } => classifier.validate(),
            HardSet::SetExpr { op, children } => {
                let arity_ok = match op {
                    SetOp::Complement => children.len() == 1,
                    _ => !children.is_empty(),
                };
                if !arity_ok {
                    return Err(invalid(format!("{op:?} has {} children", children.len())));
                }
                let mut dim = None;
                for c in children {
                    c.validate()?;
                    match (dim, c.dim()) {
                        (Some(a), Some(b)) => check_dim(a, b)?,
                        (None, Some(b)) => dim = Some(b),
                        _ => {}
                    }
                }
                Ok(())
            }
        }
    }

    /// `1_A(x)`.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            HardSet::Empty => false,
            HardSet::Full => true,
            HardSet::HalfSpace { normal, offset } => dot(normal, x) > *offset,
            HardSet::Disk { center, radius } => dist(center, x) < *radius,
            HardSet::Points { points } => points.iter().any(|p| p.as_slice() == x),
            HardSet::GridMask(m) => m.contains(x),
            HardSet::Superlevel { classifier, level, strict } => {
                let v = classifier.eval(x);
                if *strict {
                    v > *level
                } else {
                    v >= *level
                }
            }
            HardSet::SetExpr { op, children } => match op {
                SetOp::Union => children.iter().any(|c| c.contains(x)),
                SetOp::Intersect => children.iter().all(|c| c.contains(x)),
                SetOp::Complement => !children[0].contains(x),
            },
        }
    }

    /// Checked membership.
    pub fn membership(&self, x: &[f64]) -> Result<bool> {
        if let Some(d) = self.dim() {
            check_dim(d, x.len())?;
        }
        Ok(self.contains(x))
    }

    /// Drops parts that carry no mass under an atomless measure: finite point
    /// sets become empty and resolvable superlevel sets are replaced by
    /// explicit geometry. The result agrees with `self` up to a null set.
    pub fn without_null_parts(&self) -> HardSet {
        match self {
            HardSet::Points { .. } => HardSet::Empty,
            HardSet::Superlevel { .. } => match self.resolve_superlevel() {
                Some(resolved) => resolved.without_null_parts(),
                None => self.clone(),
            },
            HardSet::SetExpr { op, children } => {
                let reduced: Vec<HardSet> = children.iter().map(|c| c.without_null_parts()).collect();
                match op {
                    SetOp::Complement => match &reduced[0] {
                        HardSet::Empty => HardSet::Full,
                        HardSet::Full => HardSet::Empty,
                        other => HardSet::complement(other.clone()),
                    },
                    SetOp::Union => {
                        if reduced.contains(&HardSet::Full) {
                            return HardSet::Full;
                        }
                        let mut kept: Vec<HardSet> =
                            reduced.into_iter().filter(|c| *c != HardSet::Empty).collect();
                        match kept.len() {
                            0 => HardSet::Empty,
                            1 => kept.pop().unwrap(),
                            _ => HardSet::SetExpr { op: SetOp::Union, children: kept },
                        }
                    }
                    SetOp::Intersect => {
                        if reduced.contains(&HardSet::Empty) {
                            return HardSet::Empty;
                        }
                        let mut kept: Vec<HardSet> =
                            reduced.into_iter().filter(|c| *c != HardSet::Full).collect();
                        match kept.len() {
                            0 => HardSet::Full,
                            1 => kept.pop().unwrap(),
                            _ => HardSet::SetExpr { op: SetOp::Intersect, children: kept },
                        }
                    }
                }
            }
            other => other.clone(),
        }
    }

    /// Whether the open ball `B(x, eps)` meets the set (`Some(true)`), misses
    /// it (`Some(false)`), or the answer has no closed form here (`None`).
    pub fn ball_meets(&self, x: &[f64], eps: f64) -> Option<bool> {
        match self {
            HardSet::Empty => Some(false),
            HardSet::Full => Some(true),
            HardSet::HalfSpace { normal, offset } => Some(dot(normal, x) - offset > -eps),
            HardSet::Disk { center, radius } => Some(*radius > 0.0 && dist(center, x) < radius + eps),
            HardSet::Points { points } => Some(points.iter().any(|p| dist(p, x) < eps)),
            HardSet::GridMask(m) => Some(m.bits.iter().enumerate().any(|(i, &b)| {
                b && {
                    let (lo, hi) = m.shape.cell_bounds(i);
                    crate::geometry::box_distance(x, &lo, &hi) < eps
                }
            })),
            HardSet::Superlevel { .. } => self.resolve_superlevel()?.ball_meets(x, eps),
            HardSet::SetExpr { op, children } => match op {
                SetOp::Complement => children[0].ball_meets_complement(x, eps),
                SetOp::Union => {
                    let mut all_known = true;
                    for c in children {
                        match c.ball_meets(x, eps) {
                            Some(true) => return Some(true),
                            Some(false) => {}
                            None => all_known = false,
                        }
                    }
                    all_known.then_some(false)
                }
                SetOp::Intersect => {
                    // exact only when all but one child is Full
                    let non_full: Vec<&HardSet> = children.iter().filter(|c| **c != HardSet::Full).collect();
                    match non_full.len() {
                        0 => Some(true),
                        1 => non_full[0].ball_meets(x, eps),
                        _ => {
                            if non_full.iter().any(|c| c.ball_meets(x, eps) == Some(false)) {
                                Some(false)
                            } else {
                                None
                            }
                        }
                    }
                }
            },
        }
    }

    /// Whether the open ball `B(x, eps)` meets the complement of the set.
    pub fn ball_meets_complement(&self, x: &[f64], eps: f64) -> Option<bool> {
        match self {
            HardSet::Empty => Some(true),
            HardSet::Full => Some(false),
            HardSet::HalfSpace { normal, offset } => Some(dot(normal, x) - offset < eps),
            HardSet::Disk { center, radius } => Some(dist(center, x) + eps > *radius),
            // removing finitely many points from an open ball leaves it non-empty
            HardSet::Points { .. } => Some(true),
            HardSet::GridMask(m) => {
                let s = &m.shape;
                let leaves_box = (0..s.dim()).any(|k| x[k] - eps < s.lo[k] || x[k] + eps > s.hi[k]);
                if leaves_box {
                    return Some(true);
                }
                Some(m.bits.iter().enumerate().any(|(i, &b)| {
                    !b && {
                        let (lo, hi) = s.cell_bounds(i);
                        crate::geometry::box_distance(x, &lo, &hi) < eps
                    }
                }))
            }
            HardSet::Superlevel { .. } => self.resolve_superlevel()?.ball_meets_complement(x, eps),
            HardSet::SetExpr { op, children } => match op {
                SetOp::Complement => children[0].ball_meets(x, eps),
                SetOp::Intersect => {
                    let mut all_known = true;
                    for c in children {
                        match c.ball_meets_complement(x, eps) {
                            Some(true) => return Some(true),
                            Some(false) => {}
                            None => all_known = false,
                        }
                    }
                    all_known.then_some(false)
                }
                SetOp::Union => {
                    // (A ∪ P)^c differs from A^c by a finite set, which never
                    // empties an open ball's intersection with an open region
                    let non_null: Vec<&HardSet> = children
                        .iter()
                        .filter(|c| !matches!(c, HardSet::Points { .. } | HardSet::Empty))
                        .collect();
                    match non_null.len() {
                        0 => Some(true),
                        1 => non_null[0].ball_meets_complement(x, eps),
                        _ => {
                            if non_null.iter().any(|c| c.ball_meets_complement(x, eps) == Some(false)) {
                                Some(false)
                            } else {
                                None
                            }
                        }
                    }
                }
            },
        }
    }
}

impl HardSet {
    /// Explicit geometry for a superlevel set, equal up to a null set, when
    /// the classifier admits one.
    pub fn resolve_superlevel(&self) -> Option<HardSet> {
        let HardSet::Superlevel { classifier, level, strict } = self else {
            return None;
        };
        let (t, strict) = (*level, *strict);
        let passes = |v: f64| if strict { v > t } else { v >= t };
        let all_or_nothing = |b: bool| if b { HardSet::Full } else { HardSet::Empty };
        match classifier.as_ref() {
            SoftClassifier::Constant { value } => Some(all_or_nothing(passes(*value))),
            SoftClassifier::LinearSigmoid { weights, bias } => {
                if t <= 0.0 {
                    return Some(HardSet::Full);
                }
                if t >= 1.0 {
                    return Some(HardSet::Empty);
                }
                if norm(weights) == 0.0 {
                    return Some(all_or_nothing(passes(sigmoid(*bias))));
                }
                HardSet::half_space(weights.clone(), logit(t) - bias).ok()
            }
            SoftClassifier::GridFunction { shape, values } => {
                let bits = values.iter().map(|v| passes(*v)).collect();
                let mask = HardSet::GridMask(GridMask { shape: shape.clone(), bits });
                // outside the box u = 0
                Some(if passes(0.0) { HardSet::union(mask, outside_box(shape)) } else { mask })
            }
            SoftClassifier::Indicator { set } => Some(match (passes(0.0), passes(1.0)) {
                (true, true) => HardSet::Full,
                (false, false) => HardSet::Empty,
                (false, true) => set.clone(),
                (true, false) => HardSet::complement(set.clone()),
            }),
            SoftClassifier::Mlp1 { .. } => None,
        }
    }
}

/// Complement of a grid's bounding box.
fn outside_box(shape: &GridShape) -> HardSet {
    HardSet::complement(HardSet::GridMask(GridMask {
        shape: shape.clone(),
        bits: vec![true; shape.n_cells()],
    }))
}

/// `op(a, b)` as a set expression; `b` is ignored for `Complement`.
pub fn set_algebra(op: SetOp, a: HardSet, b: Option<HardSet>) -> Result<HardSet> {
    let expr = match op {
        SetOp::Complement => HardSet::complement(a),
        SetOp::Union | SetOp::Intersect => {
            let b = b.ok_or_else(|| invalid(format!("{op:?} needs two operands")))?;
            HardSet::SetExpr { op, children: vec![a, b] }
        }
    };
    expr.validate()?;
    Ok(expr)
}

/// Cell-wise combination of two masks on the same grid.
pub fn combine_masks(op: SetOp, a: &GridMask, b: &GridMask) -> Result<GridMask> {
    if a.shape != b.shape {
        return Err(invalid("grid masks live on different grids"));
    }
    let bits = match op {
        SetOp::Union => a.bits.iter().zip(&b.bits).map(|(x, y)| *x || *y).collect(),
        SetOp::Intersect => a.bits.iter().zip(&b.bits).map(|(x, y)| *x && *y).collect(),
        SetOp::Complement => a.bits.iter().map(|x| !x).collect(),
    };
    GridMask::new(a.shape.clone(), bits)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(t: f64) -> f64 {
    (t / (1.0 - t)).ln()
}

/// A soft classifier `u : R^d -> [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SoftClassifier {
    Constant { value: f64 },
    /// `sigmoid(weights·x + bias)`.
    LinearSigmoid { weights: Vec<f64>, bias: f64 },
    /// One hidden tanh layer followed by a logistic output.
    /// `w1` is `hidden × input_dim`, row-major.
    Mlp1 {
        input_dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
    /// Piecewise-constant values on grid cells, 0 outside the box.
    GridFunction { shape: GridShape, values: Vec<f64> },
    /// `1_A`, parameter-free.
    Indicator { set: HardSet },
}

impl SoftClassifier {
    /// Weights drawn uniformly from `±1/√fan_in`, biases zero.
    pub fn mlp1_random(input_dim: usize, hidden: usize, rng: RngState) -> Self {
        let mut g = rng.sequential();
        let mut draw = |fan_in: usize| (2.0 * g.random::<f64>() - 1.0) / (fan_in.max(1) as f64).sqrt();
        SoftClassifier::Mlp1 {
            input_dim,
            hidden,
            w1: (0..hidden * input_dim).map(|_| draw(input_dim)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| draw(hidden)).collect(),
            b2: 0.0,
        }
    }

    pub fn mlp1_zeros(input_dim: usize, hidden: usize) -> Self {
        SoftClassifier::Mlp1 {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            SoftClassifier::Constant { .. } => None,
            SoftClassifier::LinearSigmoid { weights, .. } => Some(weights.len()),
            SoftClassifier::Mlp1 { input_dim, .. } => Some(*input_dim),
            SoftClassifier::GridFunction { shape, .. } => Some(shape.dim()),
            SoftClassifier::Indicator { set } => set.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SoftClassifier::Constant { value } => {
                if (0.0..=1.0).contains(value) {
                    Ok(())
                } else {
                    Err(invalid("constant classifier value must lie in [0, 1]"))
                }
            }
            SoftClassifier::LinearSigmoid { weights, bias } => {
                if weights.is_empty() || !bias.is_finite() {
                    return Err(invalid("linear classifier needs weights and a finite bias"));
                }
                Ok(())
            }
            SoftClassifier::Mlp1 { input_dim, hidden, w1, b1, w2, .. } => {
                if *input_dim == 0 || *hidden == 0 {
                    return Err(invalid("mlp needs positive input and hidden widths"));
                }
                check_dim(hidden * input_dim, w1.len())?;
                check_dim(*hidden, b1.len())?;
                check_dim(*hidden, w2.len())
            }
            SoftClassifier::GridFunction { shape, values } => {
                shape.validate()?;
                check_dim(shape.n_cells(), values.len())?;
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(invalid("grid function values must lie in [0, 1]"));
                }
                Ok(())
            }
            SoftClassifier::Indicator { set } => set.validate(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SoftClassifier::Constant { value } => *value,
            SoftClassifier::LinearSigmoid { weights, bias } => sigmoid(dot(weights, x) + bias),
            SoftClassifier::Mlp1 { .. } => sigmoid(self.mlp_forward(x).0),
            SoftClassifier::GridFunction { shape, values } => {
                shape.cell_index(x).map(|i| values[i]).unwrap_or(0.0)
            }
            SoftClassifier::Indicator { set } => {
                if set.contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn mlp_forward(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let SoftClassifier::Mlp1 { input_dim, hidden, w1, b1, w2, b2 } = self else {
            unreachable!()
        };
        let h: Vec<f64> = (0..*hidden)
            .map(|j| (dot(&w1[j * input_dim..(j + 1) * input_dim], x) + b1[j]).tanh())
            .collect();
        (dot(w2, &h) + b2, h)
    }

    pub fn n_params(&self) -> usize {
        match self {
            SoftClassifier::Constant { .. } => 1,
            SoftClassifier::LinearSigmoid { weights, .. } => weights.len() + 1,
            SoftClassifier::Mlp1 { input_dim, hidden, .. } => hidden * input_dim + 2 * hidden + 1,
            SoftClassifier::GridFunction { values, .. } => values.len(),
            SoftClassifier::Indicator { .. } => 0,
        }
    }

    /// Flat parameter vector. Layout for `Mlp1`: `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        match self {
            SoftClassifier::Constant { value } => vec![*value],
            SoftClassifier::LinearSigmoid { weights, bias } => {
                let mut p = weights.clone();
                p.push(*bias);
                p
            }
            SoftClassifier::Mlp1 { w1, b1, w2, b2, .. } => {
                let mut p = w1.clone();
                p.extend_from_slice(b1);
                p.extend_from_slice(w2);
                p.push(*b2);
                p
            }
            SoftClassifier::GridFunction { values, .. } => values.clone(),
            SoftClassifier::Indicator { .. } => Vec::new(),
        }
    }

    /// Copy with new parameters. Constant and grid values are clamped into
    /// `[0, 1]`.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        check_dim(self.n_params(), p.len())?;
        Ok(match self {
            SoftClassifier::Constant { .. } => SoftClassifier::Constant { value: p[0].clamp(0.0, 1.0) },
            SoftClassifier::LinearSigmoid { weights, .. } => SoftClassifier::LinearSigmoid {
                weights: p[..weights.len()].to_vec(),
                bias: p[weights.len()],
            },
            SoftClassifier::Mlp1 { input_dim, hidden, .. } => {
                let (n1, h) = (hidden * input_dim, *hidden);
                SoftClassifier::Mlp1 {
                    input_dim: *input_dim,
                    hidden: h,
                    w1: p[..n1].to_vec(),
                    b1: p[n1..n1 + h].to_vec(),
                    w2: p[n1 + h..n1 + 2 * h].to_vec(),
                    b2: p[n1 + 2 * h],
                }
            }
            SoftClassifier::GridFunction { shape, .. } => SoftClassifier::GridFunction {
                shape: shape.clone(),
                values: p.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            },
            SoftClassifier::Indicator { set } => SoftClassifier::Indicator { set: set.clone() },
        })
    }

    /// Pre-squash output and its parameter gradient, for classifiers with a
    /// logistic output layer.
    pub fn logit_and_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        match self {
            SoftClassifier::LinearSigmoid { weights, bias } => {
                let mut g = x.to_vec();
                g.push(1.0);
                Some((dot(weights, x) + bias, g))
            }
            SoftClassifier::Mlp1 { input_dim, hidden, w2, .. } => {
                let (z, h) = self.mlp_forward(x);
                let (n1, hd) = (hidden * input_dim, *hidden);
                let mut g = vec![0.0; n1 + 2 * hd + 1];
                for j in 0..hd {
                    let dh = w2[j] * (1.0 - h[j] * h[j]);
                    for k in 0..*input_dim {
                        g[j * input_dim + k] = dh * x[k];
                    }
                    g[n1 + j] = dh;
                    g[n1 + hd + j] = h[j];
                }
                g[n1 + 2 * hd] = 1.0;
                Some((z, g))
            }
            _ => None,
        }
    }

    /// `(u(x), ∂u(x)/∂θ)`.
    pub fn eval_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if let Some((z, mut g)) = self.logit_and_grad(x) {
            let u = sigmoid(z);
            let s = u * (1.0 - u);
            g.iter_mut().for_each(|v| *v *= s);
            return (u, g);
        }
        match self {
            SoftClassifier::Constant { value } => (*value, vec![1.0]),
            SoftClassifier::GridFunction { shape, values } => {
                let mut g = vec![0.0; values.len()];
                let v = match shape.cell_index(x) {
                    Some(i) => {
                        g[i] = 1.0;
                        values[i]
                    }
                    None => 0.0,
                };
                (v, g)
            }
            SoftClassifier::Indicator { .. } => (self.eval(x), Vec::new()),
            _ => unreachable!(),
        }
    }
}

/// Any classifier that can label a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Classifier {
    Hard(HardSet),
    Soft(SoftClassifier),
}

impl Classifier {
    /// Predicted label; soft classifiers predict 1 where `u ≥ ½`.
    pub fn predict(&self, x: &[f64]) -> u8 {
        match self {
            Classifier::Hard(set) => set.contains(x) as u8,
            Classifier::Soft(u) => (u.eval(x) >= 0.5) as u8,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Classifier::Hard(set) => set.dim(),
            Classifier::Soft(u) => u.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Classifier::Hard(set) => set.validate(),
            Classifier::Soft(u) => u.validate(),
        }
    }
}

impl From<HardSet> for Classifier {
    fn from(set: HardSet) -> Self {
        Classifier::Hard(set)
    }
}

impl From<SoftClassifier> for Classifier {
    fn from(u: SoftClassifier) -> Self {
        Classifier::Soft(u)
    }
}

/// Checked `soft_eval_and_grad`.
pub fn soft_eval_and_grad(u: &SoftClassifier, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if let Some(d) = u.dim() {
        check_dim(d, x.len())?;
    }
    Ok(u.eval_and_grad(x))
}

/// The superlevel set `{u ≥ t}`.
///
/// Linear classifiers give an exact half-space, grid functions a mask on
/// their own grid. Other classifiers are rasterised at cell centres of
/// `raster`, which is then required.
pub fn threshold(u: &SoftClassifier, t: f64, raster: Option<&GridShape>) -> Result<HardSet> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("threshold level {t} outside [0, 1]")));
    }
    u.validate()?;
    if t <= 0.0 {
        return Ok(HardSet::Full);
    }
    match u {
        SoftClassifier::Constant { value } => Ok(if *value >= t { HardSet::Full } else { HardSet::Empty }),
        SoftClassifier::LinearSigmoid { weights, bias } => {
            if t >= 1.0 {
                return Ok(HardSet::Empty);
            }
            if norm(weights) == 0.0 {
                return Ok(if sigmoid(*bias) >= t { HardSet::Full } else { HardSet::Empty });
            }
            HardSet::half_space(weights.clone(), logit(t) - bias)
        }
        SoftClassifier::GridFunction { shape, values } => {
            let bits = values.iter().map(|v| *v >= t).collect();
            Ok(HardSet::GridMask(GridMask::new(shape.clone(), bits)?))
        }
        SoftClassifier::Indicator { set } => Ok(set.clone()),
        SoftClassifier::Mlp1 { .. } => {
            let shape = raster.ok_or_else(|| invalid("rasterising an mlp needs a grid"))?;
            if Some(shape.dim()) != u.dim() {
                return Err(PrlError::DimensionMismatch { expected: u.dim().unwrap_or(0), got: shape.dim() });
            }
            let bits = (0..shape.n_cells()).map(|i| u.eval(&shape.cell_center(i)) >= t).collect();
            Ok(HardSet::GridMask(GridMask::new(shape.clone(), bits)?))
        }
    }
}
