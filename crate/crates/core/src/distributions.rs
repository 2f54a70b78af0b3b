//! Tail probabilities used by the hypothesis tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Upper tail P(X > x) of the chi-square distribution with `df` degrees of
/// freedom (regularized upper incomplete gamma Q(df/2, x/2)).
pub fn chi_square_sf(x: f64, df: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square statistic {x} must be >= 0")));
    }
    let d = ChiSquared::new(df).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sf(x).clamp(0.0, 1.0))
}

/// Two-sided p-value P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if t.is_nan() {
        return Err(Error::Numeric("t statistic is NaN".into()));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let d = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((2.0 * d.sf(t.abs())).clamp(0.0, 1.0))
}
