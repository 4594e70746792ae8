//! Simple polygons and point containment.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A simple polygon in lon/lat degrees. Vertices are stored open; the edge
/// from the last vertex back to the first is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(LabError::DegeneratePolygon);
        }
        for &(x, y) in &vertices {
            if !x.is_finite() || !y.is_finite() {
                return Err(LabError::Split("non-finite polygon vertex".into()));
            }
        }
        Ok(Polygon { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }
}

/// Even-odd ray-casting containment; points exactly on an edge count as
/// inside, so region membership is stable under vertex ordering.
pub fn point_in_polygon(p: (f64, f64), poly: &Polygon) -> bool {
    let (px, py) = p;
    let v = poly.vertices();
    let n = v.len();

    for i in 0..n {
        let (x1, y1) = v[i];
        let (x2, y2) = v[(i + 1) % n];
        // On-edge check: collinear and within the segment's bounding box.
        let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
        if cross == 0.0
            && px >= x1.min(x2)
            && px <= x1.max(x2)
            && py >= y1.min(y2)
            && py <= y1.max(y2)
        {
            return true;
        }
    }

    let mut inside = false;
    for i in 0..n {
        let (x1, y1) = v[i];
        let (x2, y2) = v[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
            if px < x_int {
                inside = !inside;
            }
        }
    }
    inside
}
