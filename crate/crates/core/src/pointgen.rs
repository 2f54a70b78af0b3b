//! Seeded point-process generators: binomial, homogeneous Poisson and the
//! Thomas cluster process.
//!
//! Every generator draws from a ChaCha stream selected by
//! `(seed, stream)`, so simulation `k` of a Monte Carlo run can be produced
//! on any thread and still come out identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoproj::PlanarPoint;

/// Largest expected event count a generator will attempt.
pub const MAX_EXPECTED_EVENTS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSeed {
    pub const fn new(seed: u64, stream: u64) -> Self {
        RandomSeed { seed, stream }
    }

    pub const fn with_stream(self, stream: u64) -> Self {
        RandomSeed { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Axis-aligned rectangle `[x_min, x_max) × [y_min, y_max)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl WindowRegion {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let w = WindowRegion {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        w.validate()?;
        Ok(w)
    }

    /// Square of side `extent` centered on the origin.
    pub fn centered_square(extent: f64) -> Result<Self> {
        Self::new(-extent / 2.0, extent / 2.0, -extent / 2.0, extent / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::Domain(format!("invalid window {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &PlanarPoint) -> bool {
        p.x >= self.x_min && p.x < self.x_max && p.y >= self.y_min && p.y < self.y_max
    }

    pub fn expanded(&self, margin: f64) -> Self {
        WindowRegion {
            x_min: self.x_min - margin,
            x_max: self.x_max + margin,
            y_min: self.y_min - margin,
            y_max: self.y_max + margin,
        }
    }

    /// Distance from `p` to the nearest window edge.
    pub fn distance_to_boundary(&self, p: &PlanarPoint) -> f64 {
        (p.x - self.x_min)
            .min(self.x_max - p.x)
            .min(p.y - self.y_min)
            .min(self.y_max - p.y)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> PlanarPoint {
        PlanarPoint::new(
            rng.random_range(self.x_min..self.x_max),
            rng.random_range(self.y_min..self.y_max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThomasParams {
    /// Parents per m².
    pub parent_intensity: f64,
    /// Expected children per parent.
    pub mean_offspring: f64,
    /// Standard deviation of the isotropic Gaussian offspring scatter, meters.
    pub dispersion: f64,
}

impl ThomasParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.parent_intensity) && ok(self.mean_offspring) && ok(self.dispersion)) {
            return Err(Error::Domain(format!(
                "Thomas parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `n` independent uniform points on `window`.
pub fn gen_binomial(n: usize, window: &WindowRegion, seed: RandomSeed) -> Vec<PlanarPoint> {
    let mut rng = seed.rng();
    (0..n).map(|_| window.sample(&mut rng)).collect()
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> Result<usize> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::Domain(format!("invalid Poisson mean {mean}")));
    }
    if mean > MAX_EXPECTED_EVENTS {
        return Err(Error::Domain(format!(
            "expected event count {mean:e} exceeds the {MAX_EXPECTED_EVENTS:e} limit"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(d.sample(rng) as usize)
}

/// Homogeneous Poisson process with `intensity` events per m².
pub fn gen_poisson(intensity: f64, window: &WindowRegion, seed: RandomSeed) -> Result<Vec<PlanarPoint>> {
    window.validate()?;
    if !(intensity.is_finite() && intensity >= 0.0) {
        return Err(Error::Domain(format!("intensity {intensity} must be >= 0")));
    }
    let mut rng = seed.rng();
    let n = poisson_count(intensity * window.area(), &mut rng)?;
    Ok((0..n).map(|_| window.sample(&mut rng)).collect())
}

/// Thomas cluster process restricted to `window`.
///
/// Parents are drawn on the window grown by 4σ on every side so clusters
/// centered just outside still contribute children.
pub fn gen_thomas(params: &ThomasParams, window: &WindowRegion, seed: RandomSeed) -> Result<Vec<PlanarPoint>> {
    params.validate()?;
    window.validate()?;
    let parent_window = window.expanded(4.0 * params.dispersion);
    let mut rng = seed.rng();
    let n_parents = poisson_count(params.parent_intensity * parent_window.area(), &mut rng)?;
    if params.mean_offspring * n_parents as f64 > MAX_EXPECTED_EVENTS {
        return Err(Error::Domain("expected offspring count too large".into()));
    }
    let offspring = Poisson::new(params.mean_offspring).map_err(|e| Error::Domain(e.to_string()))?;
    let scatter = Normal::new(0.0, params.dispersion).map_err(|e| Error::Domain(e.to_string()))?;
    let mut out = Vec::new();
    for _ in 0..n_parents {
        let parent = parent_window.sample(&mut rng);
        let k = offspring.sample(&mut rng) as usize;
        for _ in 0..k {
            let child = PlanarPoint::new(
                parent.x + scatter.sample(&mut rng),
                parent.y + scatter.sample(&mut rng),
            );
            if window.contains(&child) {
                out.push(child);
            }
        }
    }
    Ok(out)
}
