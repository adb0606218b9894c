//! WGS84 locations, the 16-byte LOC record codec, great-circle distance and
//! grid coarsening for location privacy.

use core::fmt;

mod loc;
mod text;

pub use loc::{decode_loc, encode_loc, LocWire, LOC_LEN};

/// Mean earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const MIN_ALTITUDE_M: f64 = -100_000.0;
pub const MAX_ALTITUDE_M: f64 = 42_849_672.95;
/// Largest size/precision value the LOC encoding can carry (9e9 cm).
pub const MAX_PRECISION_M: f64 = 90_000_000.0;

/// Meters per 0.001 arcsecond of latitude; below this the codec cannot
/// distinguish positions.
pub const CODEC_RESOLUTION_M: f64 = EARTH_RADIUS_M * core::f64::consts::PI / 180.0 / 3_600_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoError {
    /// A field is outside its representable range.
    OutOfRange(&'static str),
    /// The wire form has a version other than 0.
    UnknownVersion(u8),
    /// Wrong length or unparsable text.
    Malformed,
}

impl fmt::Display for GeoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeoError::OutOfRange(field) => write!(f, "{field} out of range"),
            GeoError::UnknownVersion(v) => write!(f, "unknown LOC version {v}"),
            GeoError::Malformed => f.write_str("malformed LOC data"),
        }
    }
}

impl core::error::Error for GeoError {}

/// A point on the WGS84 ellipsoid as carried by LOC records. Size is the
/// diameter of the enclosing sphere; the precisions are the horizontal and
/// vertical uncertainty, all in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoLocation {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub size: f64,
    pub horiz_precision: f64,
    pub vert_precision: f64,
}

impl GeoLocation {
    /// A point with the LOC defaults: 1 m size, 10 km horizontal and 10 m
    /// vertical precision.
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> GeoLocation {
        GeoLocation {
            latitude,
            longitude,
            altitude,
            size: 1.0,
            horiz_precision: 10_000.0,
            vert_precision: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        fn within(v: f64, lo: f64, hi: f64) -> bool {
            v.is_finite() && v >= lo && v <= hi
        }
        if !within(self.latitude, -90.0, 90.0) {
            return Err(GeoError::OutOfRange("latitude"));
        }
        if !within(self.longitude, -180.0, 180.0) {
            return Err(GeoError::OutOfRange("longitude"));
        }
        if !within(self.altitude, MIN_ALTITUDE_M, MAX_ALTITUDE_M) {
            return Err(GeoError::OutOfRange("altitude"));
        }
        for (name, v) in [
            ("size", self.size),
            ("horizontal precision", self.horiz_precision),
            ("vertical precision", self.vert_precision),
        ] {
            if !within(v, 0.0, MAX_PRECISION_M) {
                return Err(GeoError::OutOfRange(name));
            }
        }
        Ok(())
    }

    /// The location as it reads back after a trip through the LOC codec.
    pub fn quantized(&self) -> Result<GeoLocation, GeoError> {
        decode_loc(&encode_loc(self)?)
    }
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_M`]. Altitude is
/// ignored.
pub fn great_circle_distance(a: &GeoLocation, b: &GeoLocation) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let s_lat = libm::sin(dlat / 2.0);
    let s_lon = libm::sin(dlon / 2.0);
    let h = s_lat * s_lat + libm::cos(lat1) * libm::cos(lat2) * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.clamp(0.0, 1.0)))
}

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * core::f64::consts::PI / 180.0;

/// Snap a location to the center of its cell on an equirectangular grid
/// anchored at (0, 0). Cells are `resolution` meters tall; their width in
/// degrees is scaled by the cosine of the cell's center latitude so they
/// are roughly square on the ground. The size field is raised so the
/// published sphere covers the cell.
pub fn reduce_precision(g: &GeoLocation, resolution: f64) -> GeoLocation {
    if resolution.is_nan() || resolution <= CODEC_RESOLUTION_M {
        return *g;
    }
    let dlat = resolution / METERS_PER_DEGREE;
    let lat = ((libm::floor(g.latitude / dlat) + 0.5) * dlat).clamp(-90.0, 90.0);
    let cos_lat = libm::cos(lat.to_radians());
    let dlon = if cos_lat * 360.0 * METERS_PER_DEGREE <= resolution {
        360.0
    } else {
        resolution / (METERS_PER_DEGREE * cos_lat)
    };
    let lon = ((libm::floor((g.longitude + 180.0) / dlon) + 0.5) * dlon - 180.0).clamp(-180.0, 180.0);
    GeoLocation {
        latitude: lat,
        longitude: lon,
        size: loc::precision_ceil(g.size.max(resolution)),
        ..*g
    }
}

impl fmt::Display for GeoLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_loc(self, f)
    }
}

impl core::str::FromStr for GeoLocation {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        text::parse_loc(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ZURICH: (f64, f64) = (47.3769, 8.5417);
    const FRANKFURT: (f64, f64) = (50.1109, 8.6821);

    /// Spherical law of cosines in f64, an independent route to the same
    /// great-circle distance.
    fn law_of_cosines(a: (f64, f64), b: (f64, f64)) -> f64 {
        let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
        let dl = (b.1 - a.1).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_M * c.acos()
    }

    #[test]
    fn zurich_frankfurt() {
        let a = GeoLocation::new(ZURICH.0, ZURICH.1, 0.0);
        let b = GeoLocation::new(FRANKFURT.0, FRANKFURT.1, 0.0);
        let d = great_circle_distance(&a, &b);
        let oracle = law_of_cosines(ZURICH, FRANKFURT);
        assert!((d - oracle).abs() / oracle < 0.005, "{d} vs {oracle}");
        // roughly 304 km between the two cities
        assert!((d - 304_000.0).abs() < 3_000.0, "{d}");
        assert_eq!(great_circle_distance(&a, &a), 0.0);
    }

    #[test]
    fn altitude_ignored() {
        let a = GeoLocation::new(10.0, 10.0, 0.0);
        let b = GeoLocation::new(10.0, 10.0, 9000.0);
        assert_eq!(great_circle_distance(&a, &b), 0.0);
    }

    #[test]
    fn reduce_below_codec_resolution_is_identity() {
        let g = GeoLocation::new(47.123456, 8.654321, 400.0);
        assert_eq!(reduce_precision(&g, 0.01), g);
        assert_eq!(reduce_precision(&g, 0.0), g);
    }

    /// Two points 10 m apart inside one 10 km cell. The cell of latitude
    /// 47.3769 is floor(47.3769 / 0.0899322) = 526, so both snap to
    /// (526.5 * 0.0899322) = 47.34929 degrees.
    #[test]
    fn nearby_points_collapse() {
        let a = GeoLocation::new(47.3769, 8.5417, 0.0);
        let b = GeoLocation::new(47.3769 + 10.0 / METERS_PER_DEGREE, 8.5417, 0.0);
        assert!((great_circle_distance(&a, &b) - 10.0).abs() < 0.01);
        let ra = reduce_precision(&a, 10_000.0);
        let rb = reduce_precision(&b, 10_000.0);
        assert_eq!(ra, rb);
        let dlat = 10_000.0 / (6_371_000.0 * core::f64::consts::PI / 180.0);
        assert!((ra.latitude - 526.5 * dlat).abs() < 1e-9);
        assert!((ra.latitude - 47.34929).abs() < 1e-4);
        assert!(ra.size >= 10_000.0);
    }

    fn arb_location() -> impl Strategy<Value = GeoLocation> {
        (-90.0..=90.0f64, -180.0..=180.0f64, MIN_ALTITUDE_M..=1_000_000.0f64)
            .prop_map(|(la, lo, al)| GeoLocation::new(la, lo, al))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn distance_symmetric_nonnegative(a in arb_location(), b in arb_location()) {
            let d = great_circle_distance(&a, &b);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, great_circle_distance(&b, &a));
        }

        #[test]
        fn triangle_inequality(a in arb_location(), b in arb_location(), c in arb_location()) {
            let ab = great_circle_distance(&a, &b);
            let bc = great_circle_distance(&b, &c);
            let ac = great_circle_distance(&a, &c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn reduce_is_idempotent(g in arb_location(), r in 1.0..100_000.0f64) {
            let once = reduce_precision(&g, r);
            prop_assert_eq!(reduce_precision(&once, r), once);
            prop_assert!(once.size >= r);
        }

        #[test]
        fn reduce_moves_at_most_half_diagonal(
            la in -80.0..80.0f64, lo in -180.0..180.0f64, r in 10.0..50_000.0f64
        ) {
            let g = GeoLocation::new(la, lo, 0.0);
            let moved = great_circle_distance(&g, &reduce_precision(&g, r));
            prop_assert!(moved <= r * core::f64::consts::SQRT_2 / 2.0 * 1.1, "{moved} > bound for r={r}");
        }
    }
}
