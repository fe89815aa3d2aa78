//! Scalar transforms `Ψ : [0, 1] → [0, 1]` applied to perturbation masses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PrlError, Result};

const DOMAIN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Psi {
    /// `1_{t > p}`.
    IndicatorGtP { p: f64 },
    /// `min{t / p, 1}`.
    CvarRamp { p: f64 },
    /// `1_{t > 0}`.
    EsssupZero,
    Identity,
    /// Linear interpolation between `(t, value)` knots spanning `[0, 1]`.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl Psi {
    pub fn indicator(p: f64) -> Result<Self> {
        let psi = Psi::IndicatorGtP { p };
        psi.validate()?;
        Ok(psi)
    }

    pub fn cvar_ramp(p: f64) -> Result<Self> {
        let psi = Psi::CvarRamp { p };
        psi.validate()?;
        Ok(psi)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Psi::IndicatorGtP { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(invalid(format!("indicator level {p} outside [0, 1]")));
                }
            }
            // levels above 1 are allowed: Ψ_p then never reaches 1
            Psi::CvarRamp { p } => {
                if !(*p > 0.0) || !p.is_finite() {
                    return Err(invalid(format!("ramp level {p} must be positive")));
                }
            }
            Psi::EsssupZero | Psi::Identity => {}
            Psi::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(invalid("piecewise-linear Ψ needs at least two knots"));
                }
                if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
                    return Err(invalid("knots must start at t = 0 and end at t = 1"));
                }
                for w in knots.windows(2) {
                    if !(w[0].0 < w[1].0) {
                        return Err(invalid("knot positions must increase strictly"));
                    }
                }
                if knots.iter().any(|(_, v)| !(0.0..=1.0).contains(v)) {
                    return Err(invalid("knot values must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Checked evaluation; arguments within `1e-9` of `[0, 1]` are clamped.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&t) {
            return Err(invalid(format!("Ψ argument {t} outside [0, 1]")));
        }
        Ok(self.apply(t.clamp(0.0, 1.0)))
    }

    /// Unchecked evaluation for arguments already known to lie in `[0, 1]`.
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Psi::IndicatorGtP { p } => {
                if t > *p {
                    1.0
                } else {
                    0.0
                }
            }
            Psi::CvarRamp { p } => (t / p).min(1.0),
            Psi::EsssupZero => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Psi::Identity => t,
            Psi::PiecewiseLinear { knots } => {
                let k = knots.partition_point(|(s, _)| *s <= t).clamp(1, knots.len() - 1);
                let ((t0, v0), (t1, v1)) = (knots[k - 1], knots[k]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn is_concave(&self) -> bool {
        match self {
            Psi::IndicatorGtP { p } => *p >= 1.0,
            Psi::CvarRamp { .. } | Psi::Identity => true,
            Psi::EsssupZero => false,
            Psi::PiecewiseLinear { knots } => {
                let slopes: Vec<f64> = knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
                slopes.windows(2).all(|s| s[1] <= s[0])
            }
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        match self {
            Psi::PiecewiseLinear { knots } => knots.windows(2).all(|w| w[1].1 >= w[0].1),
            _ => true,
        }
    }

    pub fn psi_at_zero(&self) -> f64 {
        self.apply(0.0)
    }

    /// Points where Ψ has a jump or a kink inside `(0, 1)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let inner = |t: f64| t > 0.0 && t < 1.0;
        match self {
            Psi::IndicatorGtP { p } | Psi::CvarRamp { p } => {
                if inner(*p) {
                    vec![*p]
                } else {
                    Vec::new()
                }
            }
            Psi::EsssupZero | Psi::Identity => Vec::new(),
            Psi::PiecewiseLinear { knots } => knots.iter().map(|k| k.0).filter(|t| inner(*t)).collect(),
        }
    }
}

impl fmt::Display for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psi::IndicatorGtP { p } => write!(f, "indicator:{p}"),
            Psi::CvarRamp { p } => write!(f, "cvar:{p}"),
            Psi::EsssupZero => write!(f, "esssup0"),
            Psi::Identity => write!(f, "identity"),
            Psi::PiecewiseLinear { knots } => {
                let parts: Vec<String> = knots.iter().map(|(t, v)| format!("{t},{v}")).collect();
                write!(f, "pwl:{}", parts.join(";"))
            }
        }
    }
}

/// Parses `esssup0`, `identity`, `indicator:<p>`, `cvar:<p>` and
/// `pwl:<t>,<v>;<t>,<v>;...`.
impl FromStr for Psi {
    type Err = PrlError;

    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {v:?}: {e}")));
        let psi = match s.split_once(':') {
            None => match s {
                "esssup0" => Psi::EsssupZero,
                "identity" => Psi::Identity,
                _ => return Err(invalid(format!("unknown Ψ {s:?}"))),
            },
            Some(("indicator", p)) => Psi::IndicatorGtP { p: num(p)? },
            Some(("cvar", p)) => Psi::CvarRamp { p: num(p)? },
            Some(("pwl", rest)) => {
                let knots = rest
                    .split(';')
                    .map(|pair| {
                        let (t, v) = pair.split_once(',').ok_or_else(|| invalid(format!("bad knot {pair:?}")))?;
                        Ok((num(t)?, num(v)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Psi::PiecewiseLinear { knots }
            }
            Some((name, _)) => return Err(invalid(format!("unknown Ψ family {name:?}"))),
        };
        psi.validate()?;
        Ok(psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((Psi::cvar_ramp(0.5).unwrap().eval(0.3).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(Psi::indicator(0.5).unwrap().eval(0.5).unwrap(), 0.0);
        assert_eq!(Psi::EsssupZero.eval(0.0).unwrap(), 0.0);
        assert_eq!(Psi::EsssupZero.eval(1e-9).unwrap(), 1.0);
        assert!(Psi::Identity.eval(1.1).is_err());
    }

    #[test]
    fn flags() {
        assert!(Psi::cvar_ramp(0.2).unwrap().is_concave());
        assert!(!Psi::indicator(0.2).unwrap().is_concave());
        let tent = Psi::PiecewiseLinear { knots: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)] };
        assert!(tent.is_concave() && tent.is_nondecreasing());
        assert_eq!(tent.apply(0.25), 0.5);
        assert_eq!(tent.apply(1.0), 1.0);
    }

    #[test]
    fn parse_roundtrip() {
        for s in ["esssup0", "identity", "indicator:0.1", "cvar:0.5", "pwl:0,0;0.5,1;1,1"] {
            let psi: Psi = s.parse().unwrap();
            assert_eq!(psi.to_string().parse::<Psi>().unwrap(), psi);
        }
        assert!("cvar:0".parse::<Psi>().is_err());
    }
}
