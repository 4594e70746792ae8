//! Flat parameter stores with named segments.
//!
//! A store is one contiguous f64 vector; segments name shaped windows into
//! it. Gradients with respect to a store use the same layout, so update
//! rules and norms operate on plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tensor::Tensor;
use crate::util::hash_f64s;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn builder() -> ParamStoreBuilder {
        ParamStoreBuilder {
            segments: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| LabError::Shape(format!("no parameter segment {}", name)))
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let s = self.segment(name)?;
        Ok(&self.data[s.offset..s.offset + s.len()])
    }

    /// Segment values as a tensor with the segment's shape.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let s = self.segment(name)?;
        Tensor::new(s.shape.clone(), self.data[s.offset..s.offset + s.len()].to_vec())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Replace all values; the layout stays.
    pub fn set_data(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.data.len() {
            return Err(LabError::Shape(format!(
                "store holds {} values, got {}",
                self.data.len(),
                flat.len()
            )));
        }
        self.data.copy_from_slice(flat);
        Ok(())
    }

    /// Order-stable checksum over the exact bit pattern of every value.
    pub fn checksum(&self) -> u64 {
        hash_f64s(&self.data)
    }
}

pub struct ParamStoreBuilder {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamStoreBuilder {
    pub fn add(mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(LabError::Shape(format!(
                "segment {}: shape {:?} wants {} values, got {}",
                name,
                shape,
                len,
                values.len()
            )));
        }
        if self.segments.iter().any(|s| s.name == name) {
            return Err(LabError::Shape(format!("duplicate segment {}", name)));
        }
        self.segments.push(Segment {
            name: name.into(),
            offset: self.data.len(),
            shape,
        });
        self.data.extend_from_slice(&values);
        Ok(self)
    }

    pub fn build(self) -> ParamStore {
        ParamStore {
            segments: self.segments,
            data: self.data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::builder()
            .add("w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap()
            .add("b", vec![3], vec![0.0, 0.0, 0.0])
            .unwrap()
            .build()
    }

    #[test]
    fn segments_window_the_flat_data() {
        let s = store();
        assert_eq!(s.len(), 9);
        assert_eq!(s.get("b").unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.segment("b").unwrap().offset, 6);
        assert_eq!(s.tensor("w").unwrap().shape(), &[2, 3]);
        assert!(s.get("nope").is_err());
    }

    #[test]
    fn duplicate_segment_is_rejected() {
        let r = ParamStore::builder()
            .add("w", vec![1], vec![0.0])
            .unwrap()
            .add("w", vec![1], vec![0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn checksum_tracks_bit_changes() {
        let mut s = store();
        let c0 = s.checksum();
        assert_eq!(c0, store().checksum());
        let flipped = f64::from_bits(s.data()[0].to_bits() ^ 1);
        s.data_mut()[0] = flipped;
        assert_ne!(c0, s.checksum());
    }

    #[test]
    fn set_data_requires_matching_length() {
        let mut s = store();
        assert!(s.set_data(&[0.0; 8]).is_err());
        let nine = [0.5; 9];
        s.set_data(&nine).unwrap();
        assert_eq!(s.get("w").unwrap()[0], 0.5);
    }
}
