//! Nested quadrat grid: a square window split into sub-areas, each split
//! into quadrats. The default is a 40 km window, 4 × 4 sub-areas and 5 × 5
//! quadrats per sub-area, i.e. 2 km quadrats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoproj::PlanarPoint;
use crate::pointgen::WindowRegion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Full side length of the square window in meters.
    pub window_extent: f64,
    /// Sub-areas per axis.
    pub subarea_divisions: usize,
    /// Quadrats per axis within one sub-area.
    pub quadrat_divisions: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            window_extent: 40_000.0,
            subarea_divisions: 4,
            quadrat_divisions: 5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_extent.is_finite() && self.window_extent > 0.0) {
            return Err(Error::Config(format!(
                "window_extent must be > 0, got {}",
                self.window_extent
            )));
        }
        if self.subarea_divisions == 0 || self.quadrat_divisions == 0 {
            return Err(Error::Config("grid divisions must be >= 1".into()));
        }
        Ok(())
    }

    /// Quadrats per axis over the whole window.
    pub fn quadrats_per_axis(&self) -> usize {
        self.subarea_divisions * self.quadrat_divisions
    }

    pub fn quadrat_side(&self) -> f64 {
        self.window_extent / self.quadrats_per_axis() as f64
    }

    /// Number of sub-areas (J).
    pub fn subarea_count(&self) -> usize {
        self.subarea_divisions * self.subarea_divisions
    }

    /// Number of quadrats per sub-area (I).
    pub fn quadrats_per_subarea(&self) -> usize {
        self.quadrat_divisions * self.quadrat_divisions
    }

    pub fn window(&self) -> WindowRegion {
        let h = self.window_extent / 2.0;
        WindowRegion {
            x_min: -h,
            x_max: h,
            y_min: -h,
            y_max: h,
        }
    }

    /// Lower edge of global quadrat column/row `k`. Cell membership is
    /// defined against exactly these values.
    fn edge(&self, k: usize) -> f64 {
        -self.window_extent / 2.0 + k as f64 * self.quadrat_side()
    }

    /// Center of the global quadrat at column `gx`, row `gy`.
    pub fn quadrat_center(&self, gx: usize, gy: usize) -> PlanarPoint {
        let s = self.quadrat_side();
        PlanarPoint::new(self.edge(gx) + s / 2.0, self.edge(gy) + s / 2.0)
    }

    fn axis_index(&self, v: f64) -> Option<usize> {
        let q = self.quadrats_per_axis();
        if !(v >= self.edge(0) && v < self.window_extent / 2.0) {
            return None;
        }
        let mut k = (((v - self.edge(0)) / self.quadrat_side()).floor() as usize).min(q - 1);
        // floor() can be off by one next to an edge; settle against edge() itself
        while k > 0 && v < self.edge(k) {
            k -= 1;
        }
        while k + 1 < q && v >= self.edge(k + 1) {
            k += 1;
        }
        Some(k)
    }
}

/// Cell of the nested grid. Pairs are (column, row), counted from the
/// south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellAddress {
    pub subarea: (usize, usize),
    pub quadrat: (usize, usize),
}

impl CellAddress {
    /// Linear sub-area index j.
    pub fn subarea_index(&self, spec: &GridSpec) -> usize {
        self.subarea.1 * spec.subarea_divisions + self.subarea.0
    }

    /// Linear quadrat index i within the sub-area.
    pub fn quadrat_index(&self, spec: &GridSpec) -> usize {
        self.quadrat.1 * spec.quadrat_divisions + self.quadrat.0
    }
}

/// Cell containing `point`, or `None` when it falls outside the window.
/// Cells are half-open `[low, high)` on both axes.
pub fn assign(point: &PlanarPoint, spec: &GridSpec) -> Option<CellAddress> {
    let gx = spec.axis_index(point.x)?;
    let gy = spec.axis_index(point.y)?;
    let d = spec.quadrat_divisions;
    Some(CellAddress {
        subarea: (gx / d, gy / d),
        quadrat: (gx % d, gy % d),
    })
}

/// Event counts X_ji per quadrat, stored sub-area major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratCounts {
    pub subareas: usize,
    pub quadrats_per_subarea: usize,
    pub counts: Vec<u32>,
    pub total_in_window: usize,
    pub total_outside: usize,
}

impl QuadratCounts {
    pub fn zeros(spec: &GridSpec) -> Self {
        QuadratCounts {
            subareas: spec.subarea_count(),
            quadrats_per_subarea: spec.quadrats_per_subarea(),
            counts: vec![0; spec.subarea_count() * spec.quadrats_per_subarea()],
            total_in_window: 0,
            total_outside: 0,
        }
    }

    /// Build directly from per-sub-area count rows.
    pub fn from_subareas(rows: &[Vec<u32>]) -> Result<Self> {
        let per = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != per) {
            return Err(Error::DegenerateGrid("ragged sub-area rows".into()));
        }
        let counts: Vec<u32> = rows.concat();
        let total = counts.iter().map(|&c| c as usize).sum();
        Ok(QuadratCounts {
            subareas: rows.len(),
            quadrats_per_subarea: per,
            counts,
            total_in_window: total,
            total_outside: 0,
        })
    }

    pub fn get(&self, subarea: usize, quadrat: usize) -> u32 {
        self.counts[subarea * self.quadrats_per_subarea + quadrat]
    }

    pub fn subarea(&self, j: usize) -> &[u32] {
        let i = self.quadrats_per_subarea;
        &self.counts[j * i..(j + 1) * i]
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: u32) -> Self {
        QuadratCounts {
            counts: self.counts.iter().map(|&c| c * k).collect(),
            total_in_window: self.total_in_window * k as usize,
            total_outside: self.total_outside * k as usize,
            ..self.clone()
        }
    }
}

pub fn count_points(points: &[PlanarPoint], spec: &GridSpec) -> Result<QuadratCounts> {
    spec.validate()?;
    let mut out = QuadratCounts::zeros(spec);
    for p in points {
        match assign(p, spec) {
            Some(cell) => {
                let idx = cell.subarea_index(spec) * out.quadrats_per_subarea + cell.quadrat_index(spec);
                out.counts[idx] += 1;
                out.total_in_window += 1;
            }
            None => out.total_outside += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    /// Denominator I − 1.
    #[default]
    Sample,
    /// Denominator I.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVariancePair {
    pub subarea_index: usize,
    pub mean: f64,
    pub variance: f64,
    pub nonzero_quadrats: usize,
}

/// Per-sub-area (m_j, S_j²) with the sample-variance estimator.
pub fn subarea_stats(counts: &QuadratCounts, min_nonzero: usize) -> Result<Vec<MeanVariancePair>> {
    subarea_stats_with(counts, min_nonzero, VarianceEstimator::Sample)
}

/// Sub-areas with fewer than `min_nonzero` occupied quadrats are dropped.
pub fn subarea_stats_with(
    counts: &QuadratCounts,
    min_nonzero: usize,
    estimator: VarianceEstimator,
) -> Result<Vec<MeanVariancePair>> {
    let n = counts.quadrats_per_subarea;
    if n < 2 {
        return Err(Error::DegenerateGrid(format!(
            "{n} quadrat(s) per sub-area; variance needs at least 2"
        )));
    }
    let denom = match estimator {
        VarianceEstimator::Sample => (n - 1) as f64,
        VarianceEstimator::Population => n as f64,
    };
    let mut out = Vec::new();
    for j in 0..counts.subareas {
        let row = counts.subarea(j);
        let nonzero = row.iter().filter(|&&c| c > 0).count();
        if nonzero < min_nonzero {
            continue;
        }
        let mean = row.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
        let ss: f64 = row.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
        out.push(MeanVariancePair {
            subarea_index: j,
            mean,
            variance: ss / denom,
            nonzero_quadrats: nonzero,
        });
    }
    Ok(out)
}
