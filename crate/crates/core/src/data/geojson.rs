//! Import of tile locations from GeoJSON point collections.

use serde_json::Value;

use crate::error::{LabError, Result};

/// Parse a GeoJSON FeatureCollection of Point features into (id, (lon, lat))
/// pairs, sorted by id. Every feature must carry an integer `id` and a
/// two-element numeric coordinate pair; anything else is rejected.
pub fn parse_geojson_points(text: &str) -> Result<Vec<(u64, (f64, f64))>> {
    let bad = |reason: &str| Err(LabError::GeoJson(reason.into()));
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Err(LabError::GeoJson(format!("not valid JSON: {}", e))),
    };
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return bad("top-level type must be FeatureCollection");
    }
    let Some(features) = root.get("features").and_then(Value::as_array) else {
        return bad("missing features array");
    };
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let ctx = |reason: String| LabError::GeoJson(format!("feature {}: {}", i, reason));
        if f.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(ctx("type must be Feature".into()));
        }
        let id = f
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| ctx("missing non-negative integer id".into()))?;
        let Some(geom) = f.get("geometry") else {
            return Err(ctx("missing geometry".into()));
        };
        if geom.get("type").and_then(Value::as_str) != Some("Point") {
            return Err(ctx("geometry type must be Point".into()));
        }
        let Some(coords) = geom.get("coordinates").and_then(Value::as_array) else {
            return Err(ctx("missing coordinates".into()));
        };
        if coords.len() != 2 {
            return Err(ctx(format!(
                "coordinates must be [lon, lat], got {} elements",
                coords.len()
            )));
        }
        let lon = coords[0]
            .as_f64()
            .ok_or_else(|| ctx("longitude is not a number".into()))?;
        let lat = coords[1]
            .as_f64()
            .ok_or_else(|| ctx("latitude is not a number".into()))?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(ctx(format!("({}, {}) is off the globe", lon, lat)));
        }
        out.push((id, (lon, lat)));
    }
    out.sort_by_key(|p| p.0);
    for w in out.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(LabError::GeoJson(format!("duplicate feature id {}", w[0].0)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "id": 1, "geometry": {"type": "Point", "coordinates": [12.5, -3.25]}, "properties": {}},
        {"type": "Feature", "id": 0, "geometry": {"type": "Point", "coordinates": [-100.0, 45.0]}, "properties": {}}
      ]
    }"#;

    #[test]
    fn parses_and_sorts_by_id() {
        let pts = parse_geojson_points(GOOD).unwrap();
        assert_eq!(pts, vec![(0, (-100.0, 45.0)), (1, (12.5, -3.25))]);
    }

    #[test]
    fn rejects_non_point_geometry() {
        let text = r#"{
          "type": "FeatureCollection",
          "features": [
            {"type": "Feature", "id": 0, "geometry": {"type": "Polygon", "coordinates": []}}
          ]
        }"#;
        let err = parse_geojson_points(text).unwrap_err();
        assert!(matches!(err, LabError::GeoJson(_)));
    }

    #[test]
    fn rejects_missing_or_duplicate_ids() {
        let no_id = r#"{
          "type": "FeatureCollection",
          "features": [
            {"type": "Feature", "geometry": {"type": "Point", "coordinates": [0, 0]}}
          ]
        }"#;
        assert!(parse_geojson_points(no_id).is_err());
        let dup = r#"{
          "type": "FeatureCollection",
          "features": [
            {"type": "Feature", "id": 2, "geometry": {"type": "Point", "coordinates": [0, 0]}},
            {"type": "Feature", "id": 2, "geometry": {"type": "Point", "coordinates": [1, 1]}}
          ]
        }"#;
        assert!(parse_geojson_points(dup).is_err());
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(parse_geojson_points("{").is_err());
        assert!(parse_geojson_points(r#"{"type": "Feature"}"#).is_err());
        let off_globe = r#"{
          "type": "FeatureCollection",
          "features": [
            {"type": "Feature", "id": 0, "geometry": {"type": "Point", "coordinates": [200, 0]}}
          ]
        }"#;
        assert!(parse_geojson_points(off_globe).is_err());
    }
}
