//! Cyclic encodings for season and location.
//!
//! Reconstruction targets the encodings, not the raw month or coordinates,
//! so wrap-around neighbors stay close in target space.

use crate::error::{LabError, Result};

/// Month m in 1..=12 to [cos(pi m / 6), sin(pi m / 6)].
pub fn month_encoding(month: u32) -> Result<[f64; 2]> {
    if !(1..=12).contains(&month) {
        return Err(LabError::Dataset(format!(
            "month {} outside 1..=12",
            month
        )));
    }
    let a = std::f64::consts::PI * month as f64 / 6.0;
    Ok([a.cos(), a.sin()])
}

/// Degrees (lon, lat) to [cos lon, sin lon, cos lat, sin lat] in radians.
pub fn geolocation_encoding(lon_deg: f64, lat_deg: f64) -> Result<[f64; 4]> {
    if !lon_deg.is_finite() || !lat_deg.is_finite() {
        return Err(LabError::Dataset("non-finite coordinates".into()));
    }
    let lon = lon_deg.to_radians();
    let lat = lat_deg.to_radians();
    Ok([lon.cos(), lon.sin(), lat.cos(), lat.sin()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn month_frozen_examples() {
        let m3 = month_encoding(3).unwrap();
        close(m3[0], 0.0);
        close(m3[1], 1.0);
        let m6 = month_encoding(6).unwrap();
        close(m6[0], -1.0);
        close(m6[1], 0.0);
        let m12 = month_encoding(12).unwrap();
        close(m12[0], 1.0);
        close(m12[1], 0.0);
    }

    #[test]
    fn month_range_is_enforced() {
        assert!(month_encoding(0).is_err());
        assert!(month_encoding(13).is_err());
    }

    #[test]
    fn geolocation_frozen_examples() {
        let e = geolocation_encoding(0.0, 0.0).unwrap();
        for (got, want) in e.iter().zip(&[1.0, 0.0, 1.0, 0.0]) {
            close(*got, *want);
        }
        let e = geolocation_encoding(180.0, 0.0).unwrap();
        for (got, want) in e.iter().zip(&[-1.0, 0.0, 1.0, 0.0]) {
            close(*got, *want);
        }
        let e = geolocation_encoding(90.0, -90.0).unwrap();
        for (got, want) in e.iter().zip(&[0.0, 1.0, 0.0, -1.0]) {
            close(*got, *want);
        }
    }

    #[test]
    fn antimeridian_neighbors_encode_close() {
        let w = geolocation_encoding(179.9, 10.0).unwrap();
        let e = geolocation_encoding(-179.9, 10.0).unwrap();
        let d: f64 = w.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!(d.sqrt() < 0.01);
    }
}
