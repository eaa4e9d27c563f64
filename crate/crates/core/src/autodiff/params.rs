use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Flat parameter vector with named, disjoint, contiguous segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    segments: Vec<Segment>,
    index: BTreeMap<String, usize>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment at the end of the flat vector.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::shape(format!(
                "segment `{name}` of shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter segment `{name}`")));
        }
        let offset = self.values.len();
        self.index.insert(name.clone(), self.segments.len());
        self.segments.push(Segment {
            name,
            offset,
            len,
            shape,
        });
        self.values.extend_from_slice(&values);
        self.grads.resize(self.values.len(), 0.0);
        Ok(())
    }

    /// Appends every segment of `other`, prefixing nothing.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for seg in other.segments {
            let vals = other.values[seg.offset..seg.offset + seg.len].to_vec();
            self.push(seg.name, seg.shape, vals)?;
        }
        Ok(())
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.index
            .get(name)
            .map(|&i| &self.segments[i])
            .ok_or_else(|| Error::UnknownSegment(name.to_string()))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let s = self.segment(name)?;
        Ok(&self.values[s.offset..s.offset + s.len])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let (o, l) = {
            let s = self.segment(name)?;
            (s.offset, s.len)
        };
        Ok(&mut self.values[o..o + l])
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        let s = self.segment(name)?;
        Ok(&self.grads[s.offset..s.offset + s.len])
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Segment that owns flat index `i`.
    pub fn segment_of(&self, i: usize) -> Option<&Segment> {
        let pos = self.segments.partition_point(|s| s.offset + s.len <= i);
        self.segments.get(pos).filter(|s| s.offset <= i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_disjoint_and_cover() {
        let mut p = ParamStore::new();
        p.push("a", vec![2, 3], vec![0.0; 6]).unwrap();
        p.push("b", vec![4], vec![1.0; 4]).unwrap();
        p.push("c", vec![], vec![2.0]).unwrap();
        let mut cursor = 0;
        for s in p.segments() {
            assert_eq!(s.offset, cursor);
            cursor += s.len;
        }
        assert_eq!(cursor, p.len());
        assert_eq!(p.segment_of(6).unwrap().name, "b");
        assert_eq!(p.segment_of(10).unwrap().name, "c");
        assert!(p.segment_of(11).is_none());
        assert!(p.push("a", vec![1], vec![0.0]).is_err());
        assert!(matches!(p.get("zz"), Err(Error::UnknownSegment(_))));
    }
}
