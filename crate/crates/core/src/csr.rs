//! Tests against complete spatial randomness: the quadrat index-of-dispersion
//! test, the nearest-neighbour distribution function Ĝ(r), and Monte Carlo
//! envelopes of Ĝ under a uniform null.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::chi_square_sf;
use crate::error::{Error, Result};
use crate::geoproj::PlanarPoint;
use crate::grid::QuadratCounts;
use crate::pointgen::{gen_binomial, gen_poisson, RandomSeed, WindowRegion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionTestResult {
    /// Σ (X_k − m̄)² / m̄ over all quadrats.
    pub t_cc: f64,
    pub df: usize,
    pub p_value: f64,
    pub quadrats_used: usize,
}

/// Index-of-dispersion test over every quadrat of the window.
pub fn dispersion_test(counts: &QuadratCounts) -> Result<DispersionTestResult> {
    index_of_dispersion(&counts.counts)
}

/// Index-of-dispersion statistic for an arbitrary list of quadrat counts,
/// referred to chi-square with Q − 1 degrees of freedom.
pub fn index_of_dispersion(counts: &[u32]) -> Result<DispersionTestResult> {
    let q = counts.len();
    if q < 2 {
        return Err(Error::InsufficientData {
            what: "quadrats",
            needed: 2,
            got: q,
        });
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(Error::EmptyWindow);
    }
    let mean = total as f64 / q as f64;
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
    let t_cc = ss / mean;
    let df = q - 1;
    Ok(DispersionTestResult {
        t_cc,
        df,
        p_value: chi_square_sf(t_cc, df as f64)?,
        quadrats_used: q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFunctionCurve {
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub n_points: usize,
}

/// 0 to 2000 m in 10 m steps.
pub fn default_r_grid() -> Vec<f64> {
    r_grid(2000.0, 10.0)
}

/// `0, step, 2·step, ...` up to and including `max` (when it falls on a step).
pub fn r_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

fn check_r_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.iter().any(|r| !r.is_finite()) || r_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("r grid must be finite and ascending".into()));
    }
    Ok(())
}

/// Uniform bucket grid for exact nearest-neighbour queries.
struct BucketGrid<'a> {
    points: &'a [PlanarPoint],
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    /// Point indices sorted by bucket; `starts[b]..starts[b + 1]` is bucket b.
    order: Vec<usize>,
    starts: Vec<usize>,
}

impl<'a> BucketGrid<'a> {
    fn new(points: &'a [PlanarPoint]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let (w, h) = ((x1 - x0).max(f64::MIN_POSITIVE), (y1 - y0).max(f64::MIN_POSITIVE));
        // about two points per bucket
        let mut cell = ((w * h) / points.len() as f64 * 2.0).sqrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = w.max(h).max(1.0);
        }
        let nx = ((w / cell).floor().min(4095.0) as usize) + 1;
        let ny = ((h / cell).floor().min(4095.0) as usize) + 1;
        let cell = cell.max(w / nx as f64).max(h / ny as f64);

        let mut grid = BucketGrid {
            points,
            x0,
            y0,
            cell,
            nx,
            ny,
            order: Vec::new(),
            starts: Vec::new(),
        };
        let buckets: Vec<usize> = points
            .iter()
            .map(|p| {
                let (bx, by) = grid.bucket_of(p);
                by * nx + bx
            })
            .collect();
        let mut starts = vec![0usize; nx * ny + 1];
        for &b in &buckets {
            starts[b + 1] += 1;
        }
        for k in 1..starts.len() {
            starts[k] += starts[k - 1];
        }
        let mut fill = starts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &b) in buckets.iter().enumerate() {
            order[fill[b]] = i;
            fill[b] += 1;
        }
        grid.order = order;
        grid.starts = starts;
        grid
    }

    fn bucket_of(&self, p: &PlanarPoint) -> (usize, usize) {
        let bx = (((p.x - self.x0) / self.cell) as usize).min(self.nx - 1);
        let by = (((p.y - self.y0) / self.cell) as usize).min(self.ny - 1);
        (bx, by)
    }

    fn nearest_distance(&self, i: usize) -> f64 {
        let p = &self.points[i];
        let (bx, by) = self.bucket_of(p);
        let mut best = f64::INFINITY;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            // points in ring k+1 or beyond are at least k·cell away
            if ring > 0 && best <= (ring - 1) as f64 * self.cell {
                break;
            }
            let (lo_x, hi_x) = (bx as isize - ring as isize, bx as isize + ring as isize);
            let (lo_y, hi_y) = (by as isize - ring as isize, by as isize + ring as isize);
            for cy in lo_y..=hi_y {
                if cy < 0 || cy >= self.ny as isize {
                    continue;
                }
                let on_edge_row = cy == lo_y || cy == hi_y;
                let step = if on_edge_row || ring == 0 { 1 } else { (hi_x - lo_x).max(1) };
                let mut cx = lo_x;
                while cx <= hi_x {
                    if cx >= 0 && cx < self.nx as isize {
                        let b = cy as usize * self.nx + cx as usize;
                        for &j in &self.order[self.starts[b]..self.starts[b + 1]] {
                            if j != i {
                                let d = p.distance(&self.points[j]);
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                    cx += step;
                }
            }
        }
        best
    }
}

/// Nearest-neighbour distance of every point, in input order.
pub fn nearest_neighbour_distances(points: &[PlanarPoint]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            what: "points for nearest-neighbour distances",
            needed: 2,
            got: points.len(),
        });
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::Domain("non-finite point".into()));
    }
    let grid = BucketGrid::new(points);
    Ok((0..points.len()).map(|i| grid.nearest_distance(i)).collect())
}

fn ecdf_at(sorted: &[f64], r_grid: &[f64], denom: f64) -> Vec<f64> {
    r_grid
        .iter()
        .map(|&r| sorted.partition_point(|&d| d <= r) as f64 / denom)
        .collect()
}

/// Raw empirical Ĝ(r) = #{i : d_i ≤ r} / N, without edge correction.
pub fn g_function(points: &[PlanarPoint], r_grid: &[f64]) -> Result<GFunctionCurve> {
    check_r_grid(r_grid)?;
    let mut d = nearest_neighbour_distances(points)?;
    d.sort_by(f64::total_cmp);
    Ok(GFunctionCurve {
        r_grid: r_grid.to_vec(),
        values: ecdf_at(&d, r_grid, points.len() as f64),
        n_points: points.len(),
    })
}

/// Border-corrected (reduced-sample) Ĝ: at each r only points at least r
/// from the window edge are counted.
pub fn g_function_border(points: &[PlanarPoint], window: &WindowRegion, r_grid: &[f64]) -> Result<GFunctionCurve> {
    check_r_grid(r_grid)?;
    let d = nearest_neighbour_distances(points)?;
    let b: Vec<f64> = points.iter().map(|p| window.distance_to_boundary(p)).collect();
    let values = r_grid
        .iter()
        .map(|&r| {
            let (mut num, mut den) = (0usize, 0usize);
            for (di, bi) in d.iter().zip(&b) {
                if *bi >= r {
                    den += 1;
                    if *di <= r {
                        num += 1;
                    }
                }
            }
            if den == 0 {
                f64::NAN
            } else {
                num as f64 / den as f64
            }
        })
        .collect();
    Ok(GFunctionCurve {
        r_grid: r_grid.to_vec(),
        values,
        n_points: points.len(),
    })
}

/// Null model for envelope simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullModel {
    /// Condition on the observed count N.
    #[default]
    Binomial,
    /// Draw counts from Poisson(N) with intensity N / area.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub r_grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub empirical: Vec<f64>,
    pub n_sims: usize,
    /// Share of grid points where the empirical curve exceeds `upper`.
    pub above_fraction: f64,
}

impl EnvelopeResult {
    /// Share of grid points with `lower ≤ empirical ≤ upper`.
    pub fn inside_fraction(&self) -> f64 {
        let inside = (0..self.r_grid.len())
            .filter(|&k| self.empirical[k] >= self.lower[k] && self.empirical[k] <= self.upper[k])
            .count();
        inside as f64 / self.r_grid.len() as f64
    }

    /// `above_fraction` restricted to grid points with r ≤ `r_max`.
    pub fn above_fraction_within(&self, r_max: f64) -> f64 {
        let idx: Vec<usize> = (0..self.r_grid.len()).filter(|&k| self.r_grid[k] <= r_max).collect();
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&k| self.empirical[k] > self.upper[k]).count() as f64 / idx.len() as f64
    }

    /// CSV with columns `r,lower,upper,empirical`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "lower", "upper", "empirical"])?;
        for k in 0..self.r_grid.len() {
            w.write_record(&[
                self.r_grid[k].to_string(),
                self.lower[k].to_string(),
                self.upper[k].to_string(),
                self.empirical[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn mc_envelope(
    points: &[PlanarPoint],
    window: &WindowRegion,
    n_sims: usize,
    seed: RandomSeed,
    r_grid: &[f64],
) -> Result<EnvelopeResult> {
    mc_envelope_with(points, window, n_sims, seed, r_grid, NullModel::Binomial)
}

/// Pointwise min/max envelope of Ĝ over `n_sims` null simulations.
/// Simulation k uses stream k of `seed.seed`, so the result does not depend
/// on how the work is scheduled.
pub fn mc_envelope_with(
    points: &[PlanarPoint],
    window: &WindowRegion,
    n_sims: usize,
    seed: RandomSeed,
    r_grid: &[f64],
    null: NullModel,
) -> Result<EnvelopeResult> {
    if n_sims == 0 {
        return Err(Error::Domain("n_sims must be >= 1".into()));
    }
    window.validate()?;
    let empirical = g_function(points, r_grid)?;
    let n = points.len();
    let sims: Vec<GFunctionCurve> = (0..n_sims as u64)
        .into_par_iter()
        .map(|k| {
            let s = seed.with_stream(k);
            let pts = match null {
                NullModel::Binomial => gen_binomial(n, window, s),
                NullModel::Poisson => gen_poisson(n as f64 / window.area(), window, s)?,
            };
            g_function(&pts, r_grid)
        })
        .collect::<Result<_>>()?;

    let mut lower = sims[0].values.clone();
    let mut upper = sims[0].values.clone();
    for s in &sims[1..] {
        for (k, &v) in s.values.iter().enumerate() {
            lower[k] = lower[k].min(v);
            upper[k] = upper[k].max(v);
        }
    }
    let above = (0..r_grid.len()).filter(|&k| empirical.values[k] > upper[k]).count();
    let above_fraction = if r_grid.is_empty() { 0.0 } else { above as f64 / r_grid.len() as f64 };
    Ok(EnvelopeResult {
        r_grid: r_grid.to_vec(),
        lower,
        upper,
        empirical: empirical.values,
        n_sims,
        above_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointgen::{gen_thomas, ThomasParams};
    use proptest::prelude::*;

    fn brute_nn(points: &[PlanarPoint]) -> Vec<f64> {
        (0..points.len())
            .map(|i| {
                (0..points.len())
                    .filter(|&j| j != i)
                    .map(|j| points[i].distance(&points[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn pts(v: &[(f64, f64)]) -> Vec<PlanarPoint> {
        v.iter().map(|&(x, y)| PlanarPoint::new(x, y)).collect()
    }

    #[test]
    fn equal_counts_give_zero_statistic() {
        let r = index_of_dispersion(&[4, 4, 4, 4]).unwrap();
        assert_eq!(r.t_cc, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dispersion_examples() {
        let r = index_of_dispersion(&[0, 1, 2, 3]).unwrap();
        assert!((r.t_cc - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.df, 3);
        assert!((r.p_value - 0.343030146138243721).abs() < 1e-10);

        let r = index_of_dispersion(&[0, 0, 0, 20]).unwrap();
        assert!((r.t_cc - 60.0).abs() < 1e-12);
        assert!(r.p_value < 1e-12);
        assert!((r.p_value - 5.878230727906912341e-13).abs() < 1e-20);
    }

    #[test]
    fn dispersion_errors() {
        assert!(matches!(index_of_dispersion(&[0, 0, 0]), Err(Error::EmptyWindow)));
        assert!(matches!(index_of_dispersion(&[3]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn integer_scaling_scales_statistic() {
        let base = [0u32, 3, 1, 7, 2, 2, 9, 0];
        let t1 = index_of_dispersion(&base).unwrap().t_cc;
        for k in [2u32, 3, 10] {
            let scaled: Vec<u32> = base.iter().map(|&c| c * k).collect();
            let tk = index_of_dispersion(&scaled).unwrap().t_cc;
            assert!((tk - k as f64 * t1).abs() < 1e-9 * tk);
        }
    }

    #[test]
    fn two_points() {
        let g = g_function(&pts(&[(0.0, 0.0), (100.0, 0.0)]), &[0.0, 50.0, 99.9, 100.0, 150.0]).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn collinear_points() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]);
        assert_eq!(brute_nn(&p), vec![1.0, 1.0, 2.0]);
        let g = g_function(&p, &[0.5, 1.0, 1.5, 2.0]).unwrap();
        assert_eq!(g.values, vec![0.0, 2.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn duplicates_count_at_zero() {
        let p = pts(&[(5.0, 5.0), (5.0, 5.0), (100.0, 5.0)]);
        let g = g_function(&p, &[0.0]).unwrap();
        assert_eq!(g.values, vec![2.0 / 3.0]);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(g_function(&pts(&[(0.0, 0.0)]), &[1.0]), Err(Error::InsufficientData { .. })));
        assert!(g_function(&pts(&[(0.0, 0.0), (1.0, 1.0)]), &[2.0, 1.0]).is_err());
    }

    #[test]
    fn bucket_search_is_exact() {
        let w = WindowRegion::centered_square(40_000.0).unwrap();
        let p = ThomasParams { parent_intensity: 30.0 / w.area(), mean_offspring: 40.0, dispersion: 300.0 };
        for s in 0..5 {
            let a = gen_binomial(1000, &w, RandomSeed::new(s, 0));
            assert_eq!(nearest_neighbour_distances(&a).unwrap(), brute_nn(&a));
            let t = gen_thomas(&p, &w, RandomSeed::new(s, 0)).unwrap();
            assert_eq!(nearest_neighbour_distances(&t).unwrap(), brute_nn(&t));
        }
        // degenerate layouts: all on a line, all identical
        let line = pts(&(0..50).map(|k| (k as f64 * 3.0, 7.0)).collect::<Vec<_>>());
        assert_eq!(nearest_neighbour_distances(&line).unwrap(), brute_nn(&line));
        let same = pts(&[(1.0, 1.0); 10]);
        assert_eq!(nearest_neighbour_distances(&same).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn thomas_rises_above_poisson_envelope_at_short_range() {
        let w = WindowRegion::centered_square(40_000.0).unwrap();
        // about 5000 points in tight clusters
        let p = ThomasParams { parent_intensity: 100.0 / w.area(), mean_offspring: 50.0, dispersion: 200.0 };
        let t = gen_thomas(&p, &w, RandomSeed::new(42, 0)).unwrap();
        assert!(t.len() > 3000);
        let env = mc_envelope(&t, &w, 99, RandomSeed::new(7, 0), &[200.0]).unwrap();
        assert!(env.empirical[0] > env.upper[0] + 0.3, "{env:?}");
    }

    #[test]
    fn single_simulation_envelope_is_degenerate() {
        let w = WindowRegion::centered_square(10_000.0).unwrap();
        let p = gen_binomial(200, &w, RandomSeed::new(1, 0));
        let grid = r_grid(1000.0, 50.0);
        let env = mc_envelope(&p, &w, 1, RandomSeed::new(5, 0), &grid).unwrap();
        assert_eq!(env.lower, env.upper);
        let sim = g_function(&gen_binomial(200, &w, RandomSeed::new(5, 0)), &grid).unwrap();
        assert_eq!(env.lower, sim.values);
        assert!(mc_envelope(&p, &w, 0, RandomSeed::new(5, 0), &grid).is_err());
    }

    #[test]
    fn envelope_is_deterministic() {
        let w = WindowRegion::centered_square(10_000.0).unwrap();
        let p = gen_binomial(300, &w, RandomSeed::new(2, 0));
        let grid = r_grid(800.0, 20.0);
        let a = mc_envelope(&p, &w, 39, RandomSeed::new(11, 0), &grid).unwrap();
        let b = mc_envelope(&p, &w, 39, RandomSeed::new(11, 0), &grid).unwrap();
        assert_eq!(a, b);
        assert!(a.lower.iter().zip(&a.upper).all(|(l, u)| l <= u));
        let c = mc_envelope_with(&p, &w, 39, RandomSeed::new(11, 0), &grid, NullModel::Poisson).unwrap();
        assert_eq!(c, mc_envelope_with(&p, &w, 39, RandomSeed::new(11, 0), &grid, NullModel::Poisson).unwrap());
    }

    #[test]
    fn poisson_data_rarely_escapes_envelope() {
        let w = WindowRegion::centered_square(40_000.0).unwrap();
        let grid = default_r_grid();
        let ok = (0..100)
            .filter(|&s| {
                let p = gen_poisson(1000.0 / w.area(), &w, RandomSeed::new(500 + s, 0)).unwrap();
                let env = mc_envelope(&p, &w, 99, RandomSeed::new(9000 + s, 0), &grid).unwrap();
                env.above_fraction <= 0.05
            })
            .count();
        assert!(ok >= 90, "{ok}");
    }

    #[test]
    fn border_correction_matches_raw_far_from_edges() {
        let w = WindowRegion::centered_square(1000.0).unwrap();
        let p = gen_binomial(400, &w, RandomSeed::new(3, 0));
        let raw = g_function(&p, &[0.0]).unwrap();
        let bord = g_function_border(&p, &w, &[0.0]).unwrap();
        assert_eq!(raw.values, bord.values);
        let bord = g_function_border(&p, &w, &r_grid(100.0, 10.0)).unwrap();
        assert!(bord.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn envelope_csv_columns() {
        let env = EnvelopeResult {
            r_grid: vec![0.0, 10.0],
            lower: vec![0.0, 0.1],
            upper: vec![0.0, 0.3],
            empirical: vec![0.0, 0.5],
            n_sims: 99,
            above_fraction: 0.5,
        };
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "r,lower,upper,empirical\n0,0,0,0\n10,0.1,0.3,0.5\n");
    }

    proptest! {
        #[test]
        fn g_is_monotone_and_rigid_motion_invariant(
            raw in prop::collection::vec((0.0..1000.0f64, 0.0..1000.0f64), 2..80),
            angle in 0.0..std::f64::consts::TAU,
            (tx, ty) in (-1e4..1e4f64, -1e4..1e4f64),
        ) {
            let p = pts(&raw);
            let grid = r_grid(300.0, 5.0);
            let g = g_function(&p, &grid).unwrap();
            prop_assert!(g.values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(*g.values.last().unwrap() <= 1.0);
            let (s, c) = angle.sin_cos();
            let moved: Vec<_> = p.iter().map(|q| PlanarPoint::new(c * q.x - s * q.y + tx, s * q.x + c * q.y + ty)).collect();
            let d0 = nearest_neighbour_distances(&p).unwrap();
            let d1 = nearest_neighbour_distances(&moved).unwrap();
            for (a, b) in d0.iter().zip(&d1) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }

        #[test]
        fn fast_nn_equals_brute_force(raw in prop::collection::vec((0.0..500.0f64, 0.0..50.0f64), 2..150)) {
            let p = pts(&raw);
            prop_assert_eq!(nearest_neighbour_distances(&p).unwrap(), brute_nn(&p));
        }
    }
}
