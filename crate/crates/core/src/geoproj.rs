//! Longitude/latitude to local planar coordinates.
//!
//! A sample is placed relative to a city center by measuring two arcs on a
//! spherical Earth: the east-west arc along the center's latitude gives `x`,
//! the north-south arc along the center's meridian gives `y`. Each distance
//! is signed by the direction of the offset from the center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters used throughout the analysis.
pub const DEFAULT_EARTH_RADIUS: f64 = 6_371_004.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    /// Degrees east.
    pub lng: f64,
    /// Degrees north.
    pub lat: f64,
}

impl GeoCoordinate {
    pub fn new(lng: f64, lat: f64) -> Result<Self> {
        let c = GeoCoordinate { lng, lat };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-180.0..=180.0).contains(&self.lng) {
            return Err(Error::Domain(format!(
                "longitude {} outside [-180, 180]",
                self.lng
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Domain(format!(
                "latitude {} outside [-90, 90]",
                self.lat
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityCenter {
    pub name: String,
    pub center: GeoCoordinate,
}

impl CityCenter {
    pub fn new(name: impl Into<String>, lng: f64, lat: f64) -> Result<Self> {
        Ok(CityCenter {
            name: name.into(),
            center: GeoCoordinate::new(lng, lat)?,
        })
    }

    /// The Beijing center used as the bundled default.
    pub fn beijing() -> Self {
        CityCenter {
            name: "Beijing".to_string(),
            center: GeoCoordinate {
                lng: 116.413648,
                lat: 39.913561,
            },
        }
    }
}

/// Signed offset in meters from a city center (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    /// Euclidean distance. All nearest-neighbour code goes through this so
    /// that different search strategies agree bit for bit.
    #[inline]
    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub radius: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel {
            radius: DEFAULT_EARTH_RADIUS,
        }
    }
}

impl EarthModel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Domain(format!("earth radius {radius} must be > 0")));
        }
        Ok(EarthModel { radius })
    }
}

/// Sign with `sign(0) = 0`, unlike `f64::signum`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Great-circle distance in meters (haversine form).
pub fn great_circle_distance(
    p: &GeoCoordinate,
    q: &GeoCoordinate,
    earth: &EarthModel,
) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    Ok(earth.radius * central_angle(p, q))
}

fn central_angle(p: &GeoCoordinate, q: &GeoCoordinate) -> f64 {
    let phi1 = p.lat.to_radians();
    let phi2 = q.lat.to_radians();
    let dphi = (q.lat - p.lat).to_radians();
    let dlambda = (q.lng - p.lng).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

/// Project `sample` to planar meters relative to `center`.
pub fn project(
    center: &CityCenter,
    sample: &GeoCoordinate,
    earth: &EarthModel,
) -> Result<PlanarPoint> {
    let c = &center.center;
    c.validate()?;
    sample.validate()?;
    let along_parallel = GeoCoordinate {
        lng: sample.lng,
        lat: c.lat,
    };
    let along_meridian = GeoCoordinate {
        lng: c.lng,
        lat: sample.lat,
    };
    let x = earth.radius * central_angle(&along_parallel, c) * sign(sample.lng - c.lng);
    let y = earth.radius * central_angle(&along_meridian, c) * sign(sample.lat - c.lat);
    Ok(PlanarPoint { x, y })
}

/// Inverse of [`project`]: recover the coordinate whose projection is `point`.
///
/// Used to write simulated patterns back out in the ingestion schema.
/// Fails when `x` exceeds the great-circle half-width reachable along the
/// center's latitude or `y` would leave the latitude range.
pub fn unproject(center: &CityCenter, point: &PlanarPoint, earth: &EarthModel) -> Result<GeoCoordinate> {
    let c = &center.center;
    c.validate()?;
    if !(point.x.is_finite() && point.y.is_finite()) {
        return Err(Error::Domain("non-finite planar point".into()));
    }
    let lat = c.lat + (point.y / earth.radius).to_degrees();
    // hav(theta) = cos^2(lat0) * hav(dlambda) for two points on the same parallel
    let theta = point.x.abs() / earth.radius;
    let cos_lat = c.lat.to_radians().cos();
    let s = (theta / 2.0).sin() / cos_lat;
    if !(s.is_finite() && s <= 1.0) || theta > std::f64::consts::PI {
        return Err(Error::Domain(format!(
            "x = {} m is not reachable along latitude {}",
            point.x, c.lat
        )));
    }
    let dlambda = (2.0 * s.asin()).to_degrees();
    let lng = c.lng + sign(point.x) * dlambda;
    GeoCoordinate::new(lng, lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const BEIJING_EAST_0_01: f64 = 852.880_421_771_991; // spherical law of cosines, 40 digits
    const NORTH_0_01: f64 = 1_111.949_964_577_288;

    /// Independent route: spherical law of cosines.
    fn slc_distance(p: &GeoCoordinate, q: &GeoCoordinate, r: f64) -> f64 {
        let (l1, p1, l2, p2) = (
            p.lng.to_radians(),
            p.lat.to_radians(),
            q.lng.to_radians(),
            q.lat.to_radians(),
        );
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * (l2 - l1).cos();
        r * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identity_distance_is_zero() {
        let p = GeoCoordinate::new(116.4, 39.9).unwrap();
        assert_eq!(great_circle_distance(&p, &p, &EarthModel::default()).unwrap(), 0.0);
    }

    #[test]
    fn antipodal_half_circumference() {
        let p = GeoCoordinate::new(0.0, 0.0).unwrap();
        let q = GeoCoordinate::new(180.0, 0.0).unwrap();
        let d = great_circle_distance(&p, &q, &EarthModel::default()).unwrap();
        assert_relative_eq!(d, std::f64::consts::PI * DEFAULT_EARTH_RADIUS, max_relative = 1e-12);
    }

    #[test]
    fn beijing_east_offset_matches_oracle() {
        let p = GeoCoordinate::new(116.413648, 39.913561).unwrap();
        let q = GeoCoordinate::new(116.423648, 39.913561).unwrap();
        let d = great_circle_distance(&p, &q, &EarthModel::default()).unwrap();
        assert!((d - BEIJING_EAST_0_01).abs() < 1e-6, "{d}");
    }

    #[test]
    fn out_of_bounds_rejected() {
        let bad = GeoCoordinate { lng: 0.0, lat: 95.0 };
        let ok = GeoCoordinate { lng: 0.0, lat: 0.0 };
        assert!(matches!(
            great_circle_distance(&bad, &ok, &EarthModel::default()),
            Err(Error::Domain(_))
        ));
        assert!(GeoCoordinate::new(181.0, 0.0).is_err());
        let center = CityCenter::beijing();
        assert!(project(&center, &bad, &EarthModel::default()).is_err());
    }

    #[test]
    fn project_examples() {
        let center = CityCenter::beijing();
        let earth = EarthModel::default();
        let origin = project(&center, &center.center, &earth).unwrap();
        assert_eq!(origin, PlanarPoint::new(0.0, 0.0));

        let north = GeoCoordinate::new(116.413648, 39.913561 + 0.01).unwrap();
        let p = project(&center, &north, &earth).unwrap();
        assert_eq!(p.x, 0.0);
        assert!((p.y - NORTH_0_01).abs() < 1e-6, "{}", p.y);

        let east = GeoCoordinate::new(116.423648, 39.913561).unwrap();
        let p = project(&center, &east, &earth).unwrap();
        assert!((p.x - BEIJING_EAST_0_01).abs() < 1e-6);
        assert_eq!(p.y, 0.0);

        let west = GeoCoordinate::new(116.403648, 39.913561).unwrap();
        assert!(project(&center, &west, &earth).unwrap().x < 0.0);
    }

    #[test]
    fn custom_radius_rejected_when_nonpositive() {
        assert!(EarthModel::new(0.0).is_err());
        assert!(EarthModel::new(-1.0).is_err());
        assert!(EarthModel::new(6.4e6).is_ok());
    }

    fn near_beijing() -> impl Strategy<Value = GeoCoordinate> {
        (115.9..116.9f64, 39.5..40.3f64).prop_map(|(lng, lat)| GeoCoordinate { lng, lat })
    }

    proptest! {
        #[test]
        fn sign_symmetry(dlng in -0.3..0.3f64, dlat in -0.3..0.3f64) {
            let center = CityCenter::beijing();
            let earth = EarthModel::default();
            let c = center.center;
            let p = project(&center, &GeoCoordinate { lng: c.lng + dlng, lat: c.lat + dlat }, &earth).unwrap();
            let mirrored_lng = project(&center, &GeoCoordinate { lng: c.lng - dlng, lat: c.lat + dlat }, &earth).unwrap();
            let mirrored_lat = project(&center, &GeoCoordinate { lng: c.lng + dlng, lat: c.lat - dlat }, &earth).unwrap();
            prop_assert!((p.x + mirrored_lng.x).abs() < 1e-6);
            prop_assert_eq!(p.y, mirrored_lng.y);
            prop_assert!((p.y + mirrored_lat.y).abs() < 1e-6);
            // x depends only on the longitude offset at the center latitude
            prop_assert_eq!(p.x, mirrored_lat.x);
        }

        #[test]
        fn triangle_inequality(a in near_beijing(), b in near_beijing(), c in near_beijing()) {
            let e = EarthModel::default();
            let ab = great_circle_distance(&a, &b, &e).unwrap();
            let bc = great_circle_distance(&b, &c, &e).unwrap();
            let ac = great_circle_distance(&a, &c, &e).unwrap();
            prop_assert!(ac <= ab + bc + 1e-6);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, great_circle_distance(&b, &a, &e).unwrap());
        }

        #[test]
        fn haversine_agrees_with_law_of_cosines(a in near_beijing(), b in near_beijing()) {
            let e = EarthModel::default();
            let h = great_circle_distance(&a, &b, &e).unwrap();
            let s = slc_distance(&a, &b, e.radius);
            // law of cosines loses precision at small angles (acos near 1)
            prop_assert!((h - s).abs() < 0.05 + 1e-9 * h);
        }

        #[test]
        fn flat_earth_within_a_tenth_of_a_percent(a in near_beijing(), b in near_beijing()) {
            let e = EarthModel::default();
            let h = great_circle_distance(&a, &b, &e).unwrap();
            prop_assume!(h > 1.0 && h < 100_000.0);
            let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
            let dx = (b.lng - a.lng).to_radians() * mean_lat.cos() * e.radius;
            let dy = (b.lat - a.lat).to_radians() * e.radius;
            let flat = (dx * dx + dy * dy).sqrt();
            prop_assert!((h - flat).abs() / h < 1e-3);
        }

        #[test]
        fn unproject_inverts_project(s in near_beijing()) {
            let center = CityCenter::beijing();
            let e = EarthModel::default();
            let p = project(&center, &s, &e).unwrap();
            let back = unproject(&center, &p, &e).unwrap();
            prop_assert!((back.lng - s.lng).abs() < 1e-9);
            prop_assert!((back.lat - s.lat).abs() < 1e-9);
        }
    }
}
