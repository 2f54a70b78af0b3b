//! Equilibrium level of clustering: the point n* where the scaled benefit an
//! entrant draws from n incumbents equals the scaled cost they impose.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance of the bisection.
pub const BISECTION_TOLERANCE: f64 = 1e-12;

const MAX_EXPANSIONS: usize = 2048;

/// `coefficient · n^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub coefficient: f64,
    pub exponent: f64,
}

impl PowerCurve {
    pub fn eval(&self, n: f64) -> f64 {
        self.coefficient * n.powf(self.exponent)
    }
}

/// Concave benefit f(n) = A·n^p, 0 < p < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitCurve(PowerCurve);

impl BenefitCurve {
    pub fn new(a: f64, p: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Domain(format!("benefit coefficient must be > 0, got {a}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::CurveFamily(format!("benefit exponent must lie in (0, 1), got {p}")));
        }
        Ok(BenefitCurve(PowerCurve { coefficient: a, exponent: p }))
    }

    pub fn curve(&self) -> PowerCurve {
        self.0
    }

    pub fn eval(&self, n: f64) -> f64 {
        self.0.eval(n)
    }
}

/// Convex cost g(n) = B·n^q, q > 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve(PowerCurve);

impl CostCurve {
    pub fn new(b: f64, q: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Domain(format!("cost coefficient must be > 0, got {b}")));
        }
        if !(q > 1.0 && q.is_finite()) {
            return Err(Error::CurveFamily(format!("cost exponent must be > 1, got {q}")));
        }
        Ok(CostCurve(PowerCurve { coefficient: b, exponent: q }))
    }

    pub fn curve(&self) -> PowerCurve {
        self.0
    }

    pub fn eval(&self, n: f64) -> f64 {
        self.0.eval(n)
    }
}

/// Facility-type multipliers on benefit (α) and cost (β).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacilityScale {
    pub alpha: f64,
    pub beta: f64,
}

impl FacilityScale {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_scale("alpha", alpha)?;
        check_scale("beta", beta)?;
        Ok(FacilityScale { alpha, beta })
    }
}

impl Default for FacilityScale {
    fn default() -> Self {
        FacilityScale { alpha: 1.0, beta: 1.0 }
    }
}

/// Area-specific bounds on the benefit (θ) and cost (η) multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaScale {
    pub theta: (f64, f64),
    pub eta: (f64, f64),
}

impl AreaScale {
    pub fn new(theta: (f64, f64), eta: (f64, f64)) -> Result<Self> {
        for (name, (lo, hi)) in [("theta", theta), ("eta", eta)] {
            check_scale(name, lo)?;
            check_scale(name, hi)?;
            if hi < lo {
                return Err(Error::Domain(format!("{name} interval [{lo}, {hi}] is reversed")));
            }
        }
        Ok(AreaScale { theta, eta })
    }
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub n_star: f64,
    /// Final bisection bracket.
    pub bracket: (f64, f64),
    /// |scaled benefit − scaled cost| at n*.
    pub residual: f64,
    /// ⌊n*⌋, the largest whole number of incumbents not exceeding n*.
    pub n_floor: u64,
}

/// Root of a function that is positive below its root and negative above,
/// found by doubling or halving from 1 and then bisecting.
pub fn crossing_custom<H: Fn(f64) -> f64>(h: H) -> Result<EquilibriumResult> {
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    let h1 = h(1.0);
    if h1.is_nan() {
        return Err(Error::Numeric("crossing function is NaN at n = 1".into()));
    }
    if h1 == 0.0 {
        return Ok(EquilibriumResult { n_star: 1.0, bracket: (1.0, 1.0), residual: 0.0, n_floor: 1 });
    }
    let mut steps = 0;
    if h1 > 0.0 {
        while h(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > MAX_EXPANSIONS || !hi.is_finite() {
                return Err(Error::Numeric("no sign change found above n = 1".into()));
            }
        }
    } else {
        while h(lo) < 0.0 {
            hi = lo;
            lo /= 2.0;
            steps += 1;
            if steps > MAX_EXPANSIONS || lo == 0.0 {
                return Err(Error::Numeric("no sign change found below n = 1".into()));
            }
        }
    }
    if h(hi) == 0.0 {
        lo = hi;
    } else if h(lo) == 0.0 {
        hi = lo;
    }
    while hi - lo > BISECTION_TOLERANCE * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid);
        if v.is_nan() {
            return Err(Error::Numeric(format!("crossing function is NaN at n = {mid}")));
        }
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
        }
    }
    let n_star = 0.5 * (lo + hi);
    Ok(EquilibriumResult {
        n_star,
        bracket: (lo, hi),
        residual: h(n_star).abs(),
        n_floor: n_star.floor() as u64,
    })
}

/// n* with scale_benefit·f(n*) = scale_cost·g(n*).
pub fn crossing(f: &BenefitCurve, g: &CostCurve, scale_benefit: f64, scale_cost: f64) -> Result<EquilibriumResult> {
    check_scale("benefit scale", scale_benefit)?;
    check_scale("cost scale", scale_cost)?;
    // compare in log space so extreme scales do not overflow
    let (f, g) = (f.curve(), g.curve());
    let lb = (scale_benefit * f.coefficient).ln();
    let lc = (scale_cost * g.coefficient).ln();
    let mut r = crossing_custom(|n| {
        let ln = n.ln();
        (lb + f.exponent * ln) - (lc + g.exponent * ln)
    })?;
    r.residual = (scale_benefit * f.eval(r.n_star) - scale_cost * g.eval(r.n_star)).abs();
    Ok(r)
}

/// (scale_benefit·A / (scale_cost·B))^(1/(q − p)).
pub fn closed_form_crossing(f: &BenefitCurve, g: &CostCurve, scale_benefit: f64, scale_cost: f64) -> f64 {
    let (f, g) = (f.curve(), g.curve());
    ((scale_benefit * f.coefficient) / (scale_cost * g.coefficient)).powf(1.0 / (g.exponent - f.exponent))
}

/// Ordering of n*_i relative to n*_j. Values within the bisection
/// tolerance compare equal.
pub fn compare_facilities(i: &FacilityScale, j: &FacilityScale, f: &BenefitCurve, g: &CostCurve) -> Result<Ordering> {
    let ni = crossing(f, g, i.alpha, i.beta)?.n_star;
    let nj = crossing(f, g, j.alpha, j.beta)?.n_star;
    if (ni - nj).abs() <= 4.0 * BISECTION_TOLERANCE * ni.max(nj) {
        return Ok(Ordering::Equal);
    }
    Ok(ni.partial_cmp(&nj).unwrap_or(Ordering::Equal))
}

/// (n_min, n_max) over the area-specific multiplier bounds.
pub fn equilibrium_range(facility: &FacilityScale, area: &AreaScale, f: &BenefitCurve, g: &CostCurve) -> Result<(EquilibriumResult, EquilibriumResult)> {
    let low = crossing(f, g, area.theta.0 * facility.alpha, area.eta.1 * facility.beta)?;
    let high = crossing(f, g, area.theta.1 * facility.alpha, area.eta.0 * facility.beta)?;
    Ok((low, high))
}
