//! Taylor's power law S² = a·m^b, fitted by ordinary least squares of
//! log S² on log m (natural logs).

use serde::{Deserialize, Serialize};

use crate::distributions::student_t_two_sided;
use crate::error::{Error, Result};
use crate::grid::MeanVariancePair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSource {
    pub city: String,
    pub facility: String,
    pub subarea: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogPoint {
    pub log_m: f64,
    pub log_s2: f64,
    pub source: PairSource,
}

impl LogLogPoint {
    /// `None` when the pair cannot be log-transformed (m ≤ 0 or S² ≤ 0).
    pub fn from_pair(pair: &MeanVariancePair, city: &str, facility: &str) -> Option<Self> {
        usable(pair).then(|| LogLogPoint {
            log_m: pair.mean.ln(),
            log_s2: pair.variance.ln(),
            source: PairSource {
                city: city.to_string(),
                facility: facility.to_string(),
                subarea: pair.subarea_index,
            },
        })
    }
}

fn usable(pair: &MeanVariancePair) -> bool {
    pair.mean > 0.0 && pair.variance > 0.0 && pair.mean.is_finite() && pair.variance.is_finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorFit {
    pub log_a: f64,
    pub b: f64,
    pub se_log_a: f64,
    pub se_b: f64,
    pub t_log_a: f64,
    pub t_b: f64,
    pub p_log_a: f64,
    pub p_b: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl TaylorFit {
    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }
}

/// Fit on (m, S²) pairs; pairs that cannot be log-transformed are skipped.
pub fn fit_taylor(pairs: &[MeanVariancePair]) -> Result<TaylorFit> {
    let xy: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|p| usable(p))
        .map(|p| (p.mean.ln(), p.variance.ln()))
        .collect();
    fit_log_log(&xy)
}

/// OLS of `y` on `x` with classical homoskedastic standard errors and
/// t tests of each coefficient against zero (n − 2 df).
pub fn fit_log_log(xy: &[(f64, f64)]) -> Result<TaylorFit> {
    let n = xy.len();
    if n < 3 {
        return Err(Error::InsufficientData {
            what: "usable (mean, variance) pairs",
            needed: 3,
            got: n,
        });
    }
    let nf = n as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in xy {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let b = sxy / sxx;
    let log_a = my - b * mx;
    let ssr: f64 = xy.iter().map(|&(x, y)| (y - log_a - b * x).powi(2)).sum();
    let sigma2 = ssr / (nf - 2.0);
    let se_b = (sigma2 / sxx).sqrt();
    let se_log_a = (sigma2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    let df = nf - 2.0;
    let t_b = t_stat(b, se_b);
    let t_log_a = t_stat(log_a, se_log_a);
    Ok(TaylorFit {
        log_a,
        b,
        se_log_a,
        se_b,
        t_log_a,
        t_b,
        p_log_a: student_t_two_sided(t_log_a, df)?,
        p_b: student_t_two_sided(t_b, df)?,
        r_squared,
        n_points: n,
    })
}

fn t_stat(est: f64, se: f64) -> f64 {
    if se > 0.0 {
        est / se
    } else if est == 0.0 {
        0.0
    } else {
        est.signum() * f64::INFINITY
    }
}

/// One city's data for a facility: its total count (used for ranking) and
/// its retained sub-area pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityDataset {
    pub city: String,
    pub total: usize,
    pub pairs: Vec<MeanVariancePair>,
}

/// Cities ranked by total count (descending, ties by name) and cut at `rank_cutoff`.
pub fn select_top_cities(datasets: &[CityDataset], rank_cutoff: usize) -> Vec<&CityDataset> {
    let mut ranked: Vec<&CityDataset> = datasets.iter().collect();
    ranked.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.city.cmp(&b.city)));
    ranked.truncate(rank_cutoff);
    ranked
}

/// Pool the pairs of the top-ranked cities into a single regression.
pub fn aggregate_fit(datasets: &[CityDataset], rank_cutoff: usize) -> Result<TaylorFit> {
    if rank_cutoff == 0 {
        return Err(Error::Config("rank cutoff must be >= 1".into()));
    }
    let pooled: Vec<MeanVariancePair> = select_top_cities(datasets, rank_cutoff)
        .into_iter()
        .flat_map(|d| d.pairs.iter().copied())
        .collect();
    fit_taylor(&pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentRegime {
    /// b near 0.
    Random,
    /// b near 1.
    Poisson,
    /// b clearly above 1.
    Clumped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentClassification {
    pub regime: ExponentRegime,
    pub band: f64,
}

pub const DEFAULT_POISSON_BAND: f64 = 0.1;

/// Poisson when |b − 1| ≤ band, Clumped above that, Random when b ≤ band;
/// values strictly between fall to whichever of 0 and 1 is nearer.
pub fn classify_exponent(fit: &TaylorFit, poisson_band: f64) -> ExponentClassification {
    let b = fit.b;
    let regime = if (b - 1.0).abs() <= poisson_band {
        ExponentRegime::Poisson
    } else if b - 1.0 > poisson_band {
        ExponentRegime::Clumped
    } else if b <= poisson_band || b < 0.5 {
        ExponentRegime::Random
    } else {
        ExponentRegime::Poisson
    };
    ExponentClassification {
        regime,
        band: poisson_band,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{count_points, subarea_stats, GridSpec, QuadratCounts};
    use crate::pointgen::{gen_poisson, RandomSeed};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn pair(m: f64, s2: f64) -> MeanVariancePair {
        MeanVariancePair { subarea_index: 0, mean: m, variance: s2, nonzero_quadrats: 25 }
    }

    fn fit_with_b(b: f64) -> TaylorFit {
        TaylorFit { log_a: 0.0, b, se_log_a: 0.0, se_b: 0.0, t_log_a: 0.0, t_b: 0.0, p_log_a: 1.0, p_b: 1.0, r_squared: 1.0, n_points: 3 }
    }

    #[test]
    fn identity_line() {
        let f = fit_taylor(&[pair(1.0, 1.0), pair(10.0, 10.0), pair(100.0, 100.0)]).unwrap();
        assert!((f.b - 1.0).abs() < 1e-12);
        assert!(f.log_a.abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.se_b < 1e-7 && f.se_log_a < 1e-7);
    }

    #[test]
    fn exact_square_law() {
        let f = fit_taylor(&[pair(1.0, 2.0), pair(10.0, 200.0), pair(100.0, 20000.0)]).unwrap();
        assert!((f.b - 2.0).abs() < 1e-12);
        assert!((f.log_a - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unusable_pairs_dropped_before_counting() {
        let pairs = [pair(1.0, 1.0), pair(10.0, 10.0), pair(0.0, 0.0), pair(5.0, 0.0)];
        assert!(matches!(fit_taylor(&pairs), Err(Error::InsufficientData { got: 2, .. })));
        let same_m = [pair(2.0, 1.0), pair(2.0, 3.0), pair(2.0, 5.0)];
        assert!(matches!(fit_taylor(&same_m), Err(Error::DegenerateRegressor)));
    }

    #[test]
    fn standard_errors_match_closed_form() {
        // y = 1 + 2x + e with e = (+1, -1, -1, +1) at x = 0..3
        let xy = [(0.0, 2.0), (1.0, 2.0), (2.0, 4.0), (3.0, 8.0)];
        let f = fit_log_log(&xy).unwrap();
        // e is orthogonal to x - 1.5, so b = 2, log a = 1, SSR = 4, sigma² = 2, Sxx = 5, SST = 24
        assert!((f.b - 2.0).abs() < 1e-12);
        assert!((f.log_a - 1.0).abs() < 1e-12);
        assert!((f.se_b - (2.0f64 / 5.0).sqrt()).abs() < 1e-12);
        assert!((f.se_log_a - (2.0f64 * (0.25 + 2.25 / 5.0)).sqrt()).abs() < 1e-12);
        assert!((f.r_squared - (1.0 - 4.0 / 24.0)).abs() < 1e-12);
        let want_p = crate::distributions::student_t_two_sided(f.b / f.se_b, 2.0).unwrap();
        assert_eq!(f.p_b, want_p);
    }

    #[test]
    fn homogeneous_poisson_city_is_consistent_with_one() {
        // One homogeneous city gives little spread in log m, so the slope is
        // noisy; check it is within three standard errors of 1 and that the
        // median over cities sits near 1.
        let g = GridSpec::default();
        let lambda = 20.0 / (g.quadrat_side() * g.quadrat_side());
        let mut bs = Vec::new();
        let mut within = 0;
        for s in 0..60 {
            let pts = gen_poisson(lambda, &g.window(), RandomSeed::new(300 + s, 0)).unwrap();
            let c = count_points(&pts, &g).unwrap();
            let f = fit_taylor(&subarea_stats(&c, 5).unwrap()).unwrap();
            assert_eq!(f.n_points, 16);
            if (f.b - 1.0).abs() <= 3.0 * f.se_b {
                within += 1;
            }
            bs.push(f.b);
        }
        assert!(within >= 57, "{within}/60 within 3 se");
        bs.sort_by(f64::total_cmp);
        let median = bs[bs.len() / 2];
        assert!((median - 1.0).abs() < 0.3, "{median}");
    }

    #[test]
    fn top_city_selection() {
        let d = |c: &str, t| CityDataset { city: c.into(), total: t, pairs: vec![] };
        let three = [d("A", 1), d("B", 2), d("C", 3)];
        assert_eq!(select_top_cities(&three, 30).len(), 3);
        let abc = [d("A", 10), d("B", 20), d("C", 30)];
        let names: Vec<_> = select_top_cities(&abc, 2).iter().map(|d| d.city.as_str()).collect();
        assert_eq!(names, ["C", "B"]);
        let tie = [d("B", 5), d("A", 5)];
        let names: Vec<_> = select_top_cities(&tie, 1).iter().map(|d| d.city.as_str()).collect();
        assert_eq!(names, ["A"]);
    }

    fn noisy_city(seed: u64, city: &str) -> CityDataset {
        let mut rng = RandomSeed::new(seed, 0).rng();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pairs = (0..16)
            .map(|j| {
                let m: f64 = rng.random_range(0.5..50.0);
                MeanVariancePair { subarea_index: j, mean: m, variance: (1.2 + 1.6 * m.ln() + noise.sample(&mut rng)).exp(), nonzero_quadrats: 25 }
            })
            .collect();
        CityDataset { city: city.into(), total: 100 + seed as usize, pairs }
    }

    #[test]
    fn aggregate_of_one_city_equals_its_fit() {
        let c = noisy_city(1, "X");
        assert_eq!(aggregate_fit(std::slice::from_ref(&c), 30).unwrap(), fit_taylor(&c.pairs).unwrap());
    }

    #[test]
    fn duplicated_city_doubles_points_same_estimates() {
        let c = noisy_city(2, "X");
        let mut twin = c.clone();
        twin.city = "Y".into();
        let one = fit_taylor(&c.pairs).unwrap();
        let two = aggregate_fit(&[c, twin], 30).unwrap();
        assert_eq!(two.n_points, 2 * one.n_points);
        assert!((two.b - one.b).abs() < 1e-12);
        assert!((two.log_a - one.log_a).abs() < 1e-12);
        // SSR doubles, Sxx doubles, df goes 14 -> 30
        let ratio = two.se_b / one.se_b;
        assert!((ratio - (14.0f64 / 30.0).sqrt()).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let cities: Vec<_> = (0..6).map(|s| noisy_city(s, &format!("C{s}"))).collect();
        let a = aggregate_fit(&cities, 4).unwrap();
        let mut rev = cities.clone();
        rev.reverse();
        assert_eq!(a, aggregate_fit(&rev, 4).unwrap());
        assert!(aggregate_fit(&cities, 0).is_err());
    }

    #[test]
    fn synthetic_recovery_within_three_standard_errors() {
        let mut hits = 0;
        for s in 0..300 {
            let c = noisy_city(1000 + s, "X");
            let f = fit_taylor(&c.pairs).unwrap();
            if (f.b - 1.6).abs() <= 3.0 * f.se_b && (f.log_a - 1.2).abs() <= 3.0 * f.se_log_a {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.99 * 300.0, "{hits}");
    }

    #[test]
    fn classification() {
        assert_eq!(classify_exponent(&fit_with_b(1.0), 0.1).regime, ExponentRegime::Poisson);
        assert_eq!(classify_exponent(&fit_with_b(1.61), 0.1).regime, ExponentRegime::Clumped);
        assert_eq!(classify_exponent(&fit_with_b(0.02), 0.1).regime, ExponentRegime::Random);
        assert_eq!(classify_exponent(&fit_with_b(0.3), 0.1).regime, ExponentRegime::Random);
        assert_eq!(classify_exponent(&fit_with_b(0.7), 0.1).regime, ExponentRegime::Poisson);
        assert_eq!(classify_exponent(&fit_with_b(-0.5), 0.1).regime, ExponentRegime::Random);
        assert_eq!(classify_exponent(&fit_with_b(1.2), 0.1).band, 0.1);
    }

    #[test]
    fn scaling_counts_keeps_slope() {
        let rows: Vec<Vec<u32>> = (0..8u32).map(|j| (0..25u32).map(|i| (i * 7 + j * 13) % (j + 3) + j).collect()).collect();
        let c = QuadratCounts::from_subareas(&rows).unwrap();
        let f1 = fit_taylor(&subarea_stats(&c, 0).unwrap()).unwrap();
        for k in [2u32, 5, 17] {
            let fk = fit_taylor(&subarea_stats(&c.scaled(k), 0).unwrap()).unwrap();
            assert!((fk.b - f1.b).abs() < 1e-12);
            let shift = (2.0 - f1.b) * (k as f64).ln();
            assert!((fk.log_a - f1.log_a - shift).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn collinear_points_fit_exactly(la in -3.0..3.0f64, b in 0.2..2.5f64, xs in prop::collection::btree_set(-300i32..300, 3..20)) {
            let xy: Vec<(f64, f64)> = xs.iter().map(|&x| { let x = x as f64 / 50.0; (x, la + b * x) }).collect();
            let f = fit_log_log(&xy).unwrap();
            prop_assert!((f.b - b).abs() < 1e-9);
            prop_assert!((f.log_a - la).abs() < 1e-9);
            prop_assert!(f.r_squared > 1.0 - 1e-12);
            prop_assert!(f.se_b < 1e-6);
        }
    }
}
