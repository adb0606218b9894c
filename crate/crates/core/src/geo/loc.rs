use super::{GeoError, GeoLocation};

pub const LOC_LEN: usize = 16;

const EQUATOR: i64 = 1 << 31;
/// Thousandths of an arcsecond per degree.
const MAS_PER_DEGREE: f64 = 3_600_000.0;
/// Altitude reference: 100 000 m below the WGS84 spheroid, in cm.
const ALT_BASE_CM: i64 = 10_000_000;

/// The 16-byte LOC RDATA: version, size, horizontal precision, vertical
/// precision, then latitude, longitude and altitude as big-endian u32.
pub type LocWire = [u8; LOC_LEN];

/// Smallest `m * 10^e` cm (m, e in 0..=9) that is at least `meters`,
/// returned as the encoded byte.
fn precision_byte_ceil(meters: f64) -> Result<u8, GeoError> {
    let cm = libm::round(meters * 100.0 * 1e6) / 1e6;
    let mut scale = 1.0;
    for exp in 0..=9u8 {
        let mantissa = libm::ceil(cm / scale - 1e-9);
        if mantissa <= 9.0 {
            return Ok(((mantissa.max(0.0) as u8) << 4) | exp);
        }
        scale *= 10.0;
    }
    Err(GeoError::OutOfRange("precision"))
}

/// Nearest representable value, the RFC 1876 encoder behavior.
fn precision_byte(meters: f64) -> Result<u8, GeoError> {
    let cm = meters * 100.0;
    let mut scale = 1.0;
    for exp in 0..=9u8 {
        let mantissa = libm::round(cm / scale);
        if mantissa <= 9.0 {
            return Ok(((mantissa as u8) << 4) | exp);
        }
        scale *= 10.0;
    }
    Err(GeoError::OutOfRange("precision"))
}

fn precision_meters(byte: u8) -> Result<f64, GeoError> {
    let (mantissa, exp) = (byte >> 4, byte & 0x0f);
    if mantissa > 9 || exp > 9 {
        return Err(GeoError::Malformed);
    }
    Ok(mantissa as f64 * libm::pow(10.0, exp as f64) / 100.0)
}

/// Round a size or precision up to the next value the codec can carry.
pub(crate) fn precision_ceil(meters: f64) -> f64 {
    precision_byte_ceil(meters)
        .and_then(precision_meters)
        .unwrap_or(super::MAX_PRECISION_M)
}

pub fn encode_loc(g: &GeoLocation) -> Result<LocWire, GeoError> {
    g.validate()?;
    let lat = EQUATOR + libm::round(g.latitude * MAS_PER_DEGREE) as i64;
    let lon = EQUATOR + libm::round(g.longitude * MAS_PER_DEGREE) as i64;
    let alt = ALT_BASE_CM + libm::round(g.altitude * 100.0) as i64;
    if !(0..=u32::MAX as i64).contains(&alt) {
        return Err(GeoError::OutOfRange("altitude"));
    }
    let mut out = [0u8; LOC_LEN];
    out[0] = 0;
    out[1] = precision_byte(g.size)?;
    out[2] = precision_byte(g.horiz_precision)?;
    out[3] = precision_byte(g.vert_precision)?;
    out[4..8].copy_from_slice(&(lat as u32).to_be_bytes());
    out[8..12].copy_from_slice(&(lon as u32).to_be_bytes());
    out[12..16].copy_from_slice(&(alt as u32).to_be_bytes());
    Ok(out)
}

pub fn decode_loc(w: &[u8]) -> Result<GeoLocation, GeoError> {
    if w.len() != LOC_LEN {
        return Err(GeoError::Malformed);
    }
    if w[0] != 0 {
        return Err(GeoError::UnknownVersion(w[0]));
    }
    let field = |i: usize| u32::from_be_bytes([w[i], w[i + 1], w[i + 2], w[i + 3]]) as i64;
    let g = GeoLocation {
        latitude: (field(4) - EQUATOR) as f64 / MAS_PER_DEGREE,
        longitude: (field(8) - EQUATOR) as f64 / MAS_PER_DEGREE,
        altitude: (field(12) - ALT_BASE_CM) as f64 / 100.0,
        size: precision_meters(w[1])?,
        horiz_precision: precision_meters(w[2])?,
        vert_precision: precision_meters(w[3])?,
    };
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand_core::RngCore;

    fn fields(w: &LocWire) -> (u32, u32, u32) {
        let f = |i: usize| u32::from_be_bytes(w[i..i + 4].try_into().unwrap());
        (f(4), f(8), f(12))
    }

    #[test]
    fn origin_fields() {
        let w = encode_loc(&GeoLocation::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(fields(&w), (1 << 31, 1 << 31, 10_000_000));
        // RFC 1876 defaults: 1 m, 10 km, 10 m
        assert_eq!(&w[..4], &[0x00, 0x12, 0x16, 0x13]);
    }

    #[test]
    fn zurich_latitude_matches_reference_formula() {
        let w = encode_loc(&GeoLocation::new(47.3769, 8.5417, 408.0)).unwrap();
        let (lat, lon, alt) = fields(&w);
        // 47.3769 * 3_600_000 = 170_556_840; 8.5417 * 3_600_000 = 30_750_120
        assert_eq!(lat, 2_147_483_648 + 170_556_840);
        assert_eq!(lon, 2_147_483_648 + 30_750_120);
        assert_eq!(alt, 10_000_000 + 40_800);
    }

    #[test]
    fn southern_western_hemispheres() {
        let w = encode_loc(&GeoLocation::new(-33.8688, -151.2093, -12.5)).unwrap();
        let (lat, lon, alt) = fields(&w);
        assert_eq!(lat, 2_147_483_648 - 121_927_680);
        assert_eq!(lon, 2_147_483_648 - 544_353_480);
        assert_eq!(alt, 10_000_000 - 1_250);
        let g = decode_loc(&w).unwrap();
        assert!((g.latitude + 33.8688).abs() < 1e-9);
    }

    #[test]
    fn precision_encoding() {
        assert_eq!(precision_byte(0.0).unwrap(), 0x00);
        assert_eq!(precision_byte(1.0).unwrap(), 0x12);
        assert_eq!(precision_byte(10_000.0).unwrap(), 0x16);
        assert_eq!(precision_byte(90_000_000.0).unwrap(), 0x99);
        assert!(precision_byte(200_000_000.0).is_err());
        assert_eq!(precision_meters(0x16).unwrap(), 10_000.0);
        assert!(precision_meters(0xa0).is_err());
        assert_eq!(precision_ceil(1234.0), 2000.0);
        assert_eq!(precision_ceil(10_000.0), 10_000.0);
        assert_eq!(precision_ceil(0.5), 0.5);
    }

    #[test]
    fn range_errors() {
        assert!(encode_loc(&GeoLocation::new(90.5, 0.0, 0.0)).is_err());
        assert!(encode_loc(&GeoLocation::new(0.0, -180.5, 0.0)).is_err());
        assert!(encode_loc(&GeoLocation::new(0.0, 0.0, -100_000.5)).is_err());
        assert!(encode_loc(&GeoLocation::new(0.0, 0.0, 42_849_673.0)).is_err());
        assert!(encode_loc(&GeoLocation::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(encode_loc(&GeoLocation::new(90.0, 180.0, 42_849_672.95)).is_ok());
        assert!(encode_loc(&GeoLocation::new(-90.0, -180.0, -100_000.0)).is_ok());
    }

    #[test]
    fn decode_rejects_bad_input() {
        let mut w = encode_loc(&GeoLocation::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(decode_loc(&w[..15]), Err(GeoError::Malformed));
        w[0] = 1;
        assert_eq!(decode_loc(&w), Err(GeoError::UnknownVersion(1)));
        w[0] = 0;
        w[4..8].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(decode_loc(&w).is_err());
    }

    /// Round-trip error over 10^4 random locations stays within one codec
    /// step: 0.001 arcsec horizontally and 1 cm vertically.
    #[test]
    fn round_trip_error_bound() {
        let mut r = rng(99);
        let unit = |r: &mut rand_chacha::ChaCha20Rng| r.next_u64() as f64 / u64::MAX as f64;
        for _ in 0..10_000 {
            let g = GeoLocation::new(
                unit(&mut r) * 180.0 - 90.0,
                unit(&mut r) * 360.0 - 180.0,
                unit(&mut r) * 1_000_000.0 - 100_000.0,
            );
            let w = encode_loc(&g).unwrap();
            assert_eq!(w.len(), 16);
            let back = decode_loc(&w).unwrap();
            assert!((back.latitude - g.latitude).abs() * 3_600_000.0 <= 1.0 + 1e-6);
            assert!((back.longitude - g.longitude).abs() * 3_600_000.0 <= 1.0 + 1e-6);
            assert!((back.altitude - g.altitude).abs() <= 0.01 + 1e-9);
            assert_eq!(encode_loc(&back).unwrap(), w);
        }
    }
}
