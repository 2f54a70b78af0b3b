//! Additive decomposition of inverse Taylor exponents,
//! 1/b_ij ≈ c_i + f_j, into a city-specific factor c_i and a
//! facility-specific factor f_j.
//!
//! The model has a one-dimensional null space: adding δ to every c_i and
//! subtracting it from every f_j leaves all fitted values unchanged. A
//! [`Gauge`] picks one representative. Fitted values, residuals and the
//! orderings within c and within f do not depend on the gauge.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partial city × facility matrix of Taylor exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTable {
    pub cities: Vec<String>,
    pub facilities: Vec<String>,
    /// Row-major, `cities.len() × facilities.len()`; `None` marks a missing cell.
    pub entries: Vec<Option<f64>>,
}

impl ExponentTable {
    pub fn new(cities: Vec<String>, facilities: Vec<String>) -> Self {
        let n = cities.len() * facilities.len();
        ExponentTable {
            cities,
            facilities,
            entries: vec![None; n],
        }
    }

    /// Build from (city, facility, b) triples. Labels are kept in order of
    /// first appearance; a repeated cell is an error.
    pub fn from_triples<I, S, T>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let triples: Vec<(String, String, f64)> = triples
            .into_iter()
            .map(|(c, f, b)| (c.into(), f.into(), b))
            .collect();
        let mut cities: Vec<String> = Vec::new();
        let mut facilities: Vec<String> = Vec::new();
        for (c, f, _) in &triples {
            if !cities.contains(c) {
                cities.push(c.clone());
            }
            if !facilities.contains(f) {
                facilities.push(f.clone());
            }
        }
        let mut t = ExponentTable::new(cities, facilities);
        for (c, f, b) in &triples {
            let (i, j) = (t.city_index(c).unwrap(), t.facility_index(f).unwrap());
            if t.get(i, j).is_some() {
                return Err(Error::Domain(format!("duplicate cell ({c}, {f})")));
            }
            t.set(i, j, *b)?;
        }
        Ok(t)
    }

    pub fn city_index(&self, city: &str) -> Option<usize> {
        self.cities.iter().position(|c| c == city)
    }

    pub fn facility_index(&self, facility: &str) -> Option<usize> {
        self.facilities.iter().position(|f| f == facility)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.facilities.len() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, b: f64) -> Result<()> {
        check_exponent(b, &self.cities[i], &self.facilities[j])?;
        let m = self.facilities.len();
        self.entries[i * m + j] = Some(b);
        Ok(())
    }

    /// 1/b for a present cell.
    pub fn inverse(&self, i: usize, j: usize) -> Option<f64> {
        self.get(i, j).map(|b| 1.0 / b)
    }

    /// Present cells as (city index, facility index, b), row-major.
    pub fn present(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.facilities.len();
        self.entries
            .iter()
            .enumerate()
            .filter_map(move |(k, b)| b.map(|b| (k / m, k % m, b)))
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// CSV with header `city,facility,b`, present cells only.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["city", "facility", "b"])?;
        for (i, j, b) in self.present() {
            w.write_record([self.cities[i].as_str(), self.facilities[j].as_str(), &b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_exponent(b: f64, city: &str, facility: &str) -> Result<()> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::Domain(format!(
            "exponent for ({city}, {facility}) must be finite and > 0, got {b}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Gauge {
    /// Minimum Euclidean norm of (c, f).
    #[default]
    MinNorm,
    /// Shift so the facility factors average to the given value.
    FixedFacilityMean(f64),
}

/// Per-city and per-facility factor levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub cities: Vec<String>,
    pub facilities: Vec<String>,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
}

impl FactorModel {
    pub fn fitted(&self, i: usize, j: usize) -> f64 {
        self.c[i] + self.f[j]
    }

    pub fn city_factor(&self, city: &str) -> Option<f64> {
        self.cities.iter().position(|c| c == city).map(|i| self.c[i])
    }

    pub fn facility_factor(&self, facility: &str) -> Option<f64> {
        self.facilities.iter().position(|f| f == facility).map(|j| self.f[j])
    }

    /// |1/b − (c + f)| / (1/b) for every cell of `table` whose city and
    /// facility are both known to the model (matched by label).
    pub fn cell_relative_residuals(&self, table: &ExponentTable) -> Vec<(String, String, f64)> {
        let mut out = Vec::new();
        for (i, j, b) in table.present() {
            let (city, fac) = (&table.cities[i], &table.facilities[j]);
            if let (Some(c), Some(f)) = (self.city_factor(city), self.facility_factor(fac)) {
                let y = 1.0 / b;
                out.push((city.clone(), fac.clone(), (y - (c + f)).abs() / y));
            }
        }
        out
    }

    /// Mean over `cells` of c_i / (c_i + f_j), with its complement.
    pub fn contribution_shares_over(&self, cells: impl IntoIterator<Item = (usize, usize)>) -> Result<(f64, f64)> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, j) in cells {
            let total = self.fitted(i, j);
            if total.is_nan() || total <= 0.0 {
                return Err(Error::DegenerateCell {
                    city: self.cities[i].clone(),
                    facility: self.facilities[j].clone(),
                    value: total,
                });
            }
            sum += self.c[i] / total;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData {
                what: "cells for contribution shares",
                needed: 1,
                got: 0,
            });
        }
        let csf = sum / n as f64;
        Ok((csf, 1.0 - csf))
    }

    /// Shares over the full city × facility grid.
    pub fn contribution_shares_all(&self) -> Result<(f64, f64)> {
        let m = self.f.len();
        self.contribution_shares_over((0..self.c.len()).flat_map(|i| (0..m).map(move |j| (i, j))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub model: FactorModel,
    pub gauge: Gauge,
    /// Present cells as (i, j); residuals and shares refer to these.
    pub cells: Vec<(usize, usize)>,
    /// y_ij − (c_i + f_j) for each entry of `cells`.
    pub residuals: Vec<f64>,
    /// Least-squares objective J = Σ residual².
    pub objective: f64,
    pub mean_relative_residual: f64,
    pub csf_share: f64,
    pub fsf_share: f64,
}

impl DecompositionResult {
    pub fn c(&self) -> &[f64] {
        &self.model.c
    }

    pub fn f(&self) -> &[f64] {
        &self.model.f
    }

    /// CSV: header `kind,label,value`, one gauge line, then one row per
    /// city factor and per facility factor.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "label", "value"])?;
        match self.gauge {
            Gauge::MinNorm => w.write_record(["gauge", "min_norm", ""])?,
            Gauge::FixedFacilityMean(v) => w.write_record(["gauge", "fixed_facility_mean", &v.to_string()])?,
        }
        for (name, c) in self.model.cities.iter().zip(&self.model.c) {
            w.write_record(["city", name.as_str(), &c.to_string()])?;
        }
        for (name, f) in self.model.facilities.iter().zip(&self.model.f) {
            w.write_record(["facility", name.as_str(), &f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Connected components of the bipartite city–facility graph of present
/// cells. Node ids: cities `0..n`, facilities `n..n+m`.
fn components(table: &ExponentTable) -> Vec<Vec<usize>> {
    let n = table.cities.len();
    let total = n + table.facilities.len();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j, _) in table.present() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for x in 0..total {
        let r = find(&mut parent, x);
        groups.entry(r).or_default().push(x);
    }
    groups.into_values().collect()
}

/// Least-squares fit of y_ij = 1/b_ij ≈ c_i + f_j over the present cells.
///
/// The normal equations are solved with the last facility factor pinned to
/// zero (a nonsingular system when the cell graph is connected); the
/// solution is then moved along the null direction (1, …, 1, −1, …, −1) to
/// satisfy the requested gauge.
pub fn decompose(table: &ExponentTable, gauge: Gauge) -> Result<DecompositionResult> {
    let (n, m) = (table.cities.len(), table.facilities.len());
    if n == 0 || m == 0 || table.present_count() == 0 {
        return Err(Error::InsufficientData {
            what: "exponent table cells",
            needed: 1,
            got: 0,
        });
    }
    for (i, j, b) in table.present() {
        check_exponent(b, &table.cities[i], &table.facilities[j])?;
    }
    let comps = components(table);
    if comps.len() > 1 {
        let label = |x: usize| {
            if x < n {
                format!("city:{}", table.cities[x])
            } else {
                format!("facility:{}", table.facilities[x - n])
            }
        };
        return Err(Error::Identifiability {
            components: comps.iter().map(|c| c.iter().map(|&x| label(x)).collect()).collect(),
        });
    }

    // unknowns: c_0..c_{n-1}, f_0..f_{m-2}; f_{m-1} = 0
    let k = n + m - 1;
    let mut normal = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for (i, j, b) in table.present() {
        let y = 1.0 / b;
        let mut idx = vec![i];
        if j + 1 < m {
            idx.push(n + j);
        }
        for &r in &idx {
            rhs[r] += y;
            for &s in &idx {
                normal[(r, s)] += 1.0;
            }
        }
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numeric("normal equations not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    let mut c: Vec<f64> = (0..n).map(|i| sol[i]).collect();
    let mut f: Vec<f64> = (0..m).map(|j| if j + 1 < m { sol[n + j] } else { 0.0 }).collect();

    // every solution is (c + t, f − t); pick t by gauge
    let t = match gauge {
        Gauge::MinNorm => {
            let dot = c.iter().sum::<f64>() - f.iter().sum::<f64>();
            -dot / (n + m) as f64
        }
        Gauge::FixedFacilityMean(v) => {
            if !v.is_finite() {
                return Err(Error::Domain(format!("gauge value {v} must be finite")));
            }
            f.iter().sum::<f64>() / m as f64 - v
        }
    };
    c.iter_mut().for_each(|x| *x += t);
    f.iter_mut().for_each(|x| *x -= t);

    let model = FactorModel {
        cities: table.cities.clone(),
        facilities: table.facilities.clone(),
        c,
        f,
    };
    let cells: Vec<(usize, usize)> = table.present().map(|(i, j, _)| (i, j)).collect();
    let residuals: Vec<f64> = table
        .present()
        .map(|(i, j, b)| 1.0 / b - model.fitted(i, j))
        .collect();
    let objective = residuals.iter().map(|r| r * r).sum();
    let mean_relative_residual = table
        .present()
        .zip(&residuals)
        .map(|((_, _, b), r)| r.abs() * b)
        .sum::<f64>()
        / cells.len() as f64;
    let (csf_share, fsf_share) = model.contribution_shares_over(cells.iter().copied())?;
    Ok(DecompositionResult {
        model,
        gauge,
        cells,
        residuals,
        objective,
        mean_relative_residual,
        csf_share,
        fsf_share,
    })
}

/// Mean of |r_ij| / y_ij over the cells of `table` the model covers.
pub fn relative_residual(model: &FactorModel, table: &ExponentTable) -> f64 {
    let r = model.cell_relative_residuals(table);
    if r.is_empty() {
        return 0.0;
    }
    r.iter().map(|x| x.2).sum::<f64>() / r.len() as f64
}

/// (CSF share, FSF share) averaged over the fitted cells.
pub fn contribution_shares(result: &DecompositionResult) -> Result<(f64, f64)> {
    result.model.contribution_shares_over(result.cells.iter().copied())
}

/// Average contributions of the two factors under the power-law link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorMeans {
    /// (S²)^c / a^(1/(2b))
    pub m_y: f64,
    /// (S²)^f / a^(1/(2b))
    pub m_z: f64,
    /// (S²)^(1/b) / a^(1/b)
    pub m: f64,
}

/// `a` is the Taylor coefficient itself, not its logarithm. When
/// c + f = 1/b the three values satisfy m_y · m_z = m.
pub fn factor_means(s2: f64, c: f64, f: f64, a: f64, b: f64) -> Result<FactorMeans> {
    for (name, v) in [("S²", s2), ("a", a), ("b", b)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")));
        }
    }
    if !(c.is_finite() && f.is_finite()) {
        return Err(Error::Domain("factors must be finite".into()));
    }
    let common = a.powf(1.0 / (2.0 * b));
    Ok(FactorMeans {
        m_y: s2.powf(c) / common,
        m_z: s2.powf(f) / common,
        m: s2.powf(1.0 / b) / a.powf(1.0 / b),
    })
}
