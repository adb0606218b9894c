//! Zone-file presentation: `d1 [m1 [s1]] {N|S} d2 [m2 [s2]] {E|W} alt[m]
//! [size[m] [hp[m] [vp[m]]]]`.

use core::fmt;

use super::{GeoError, GeoLocation};

fn write_angle(f: &mut fmt::Formatter<'_>, degrees: f64, pos: char, neg: char) -> fmt::Result {
    let mas = libm::round(libm::fabs(degrees) * 3_600_000.0) as u64;
    let (d, rem) = (mas / 3_600_000, mas % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, frac) = (rem / 1000, rem % 1000);
    let hemi = if degrees < 0.0 && mas != 0 { neg } else { pos };
    write!(f, "{d} {m} {s}.{frac:03} {hemi}")
}

fn write_meters(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let cm = libm::round(v * 100.0) as i64;
    let sign = if cm < 0 { "-" } else { "" };
    let cm = cm.unsigned_abs();
    if cm.is_multiple_of(100) {
        write!(f, "{sign}{}m", cm / 100)
    } else {
        write!(f, "{sign}{}.{:02}m", cm / 100, cm % 100)
    }
}

pub(super) fn write_loc(g: &GeoLocation, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    write_angle(f, g.latitude, 'N', 'S')?;
    f.write_str(" ")?;
    write_angle(f, g.longitude, 'E', 'W')?;
    for v in [g.altitude, g.size, g.horiz_precision, g.vert_precision] {
        f.write_str(" ")?;
        write_meters(f, v)?;
    }
    Ok(())
}

fn parse_meters(tok: &str) -> Result<f64, GeoError> {
    tok.strip_suffix('m')
        .unwrap_or(tok)
        .parse::<f64>()
        .map_err(|_| GeoError::Malformed)
}

/// Consume `d [m [s]] H` and return signed degrees.
fn parse_angle<'a>(
    toks: &mut core::iter::Peekable<impl Iterator<Item = &'a str>>,
    pos: &str,
    neg: &str,
    max_deg: f64,
) -> Result<f64, GeoError> {
    let mut parts = [0.0f64; 3];
    let mut n = 0;
    let sign = loop {
        let tok = toks.next().ok_or(GeoError::Malformed)?;
        if tok.eq_ignore_ascii_case(pos) {
            break 1.0;
        }
        if tok.eq_ignore_ascii_case(neg) {
            break -1.0;
        }
        if n == 3 {
            return Err(GeoError::Malformed);
        }
        parts[n] = tok.parse::<f64>().map_err(|_| GeoError::Malformed)?;
        n += 1;
    };
    if n == 0 || parts[1] >= 60.0 || parts[2] >= 60.0 || parts.iter().any(|p| *p < 0.0) {
        return Err(GeoError::Malformed);
    }
    let deg = parts[0] + parts[1] / 60.0 + parts[2] / 3600.0;
    if deg > max_deg {
        return Err(GeoError::OutOfRange(if max_deg == 90.0 { "latitude" } else { "longitude" }));
    }
    Ok(sign * deg)
}

pub(super) fn parse_loc(s: &str) -> Result<GeoLocation, GeoError> {
    let mut toks = s.split_ascii_whitespace().peekable();
    let latitude = parse_angle(&mut toks, "N", "S", 90.0)?;
    let longitude = parse_angle(&mut toks, "E", "W", 180.0)?;
    let altitude = parse_meters(toks.next().ok_or(GeoError::Malformed)?)?;
    let mut g = GeoLocation::new(latitude, longitude, altitude);
    for slot in [&mut g.size, &mut g.horiz_precision, &mut g.vert_precision] {
        match toks.next() {
            Some(t) => *slot = parse_meters(t)?,
            None => break,
        }
    }
    if toks.next().is_some() {
        return Err(GeoError::Malformed);
    }
    g.validate()?;
    Ok(g)
}
