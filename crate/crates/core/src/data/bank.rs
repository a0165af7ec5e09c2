use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::StreamSpec;

/// Per-frame feature vectors for a set of named streams.
///
/// Frame ids are unique within a stream and iterate in ascending order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBank {
    manifest: Vec<StreamSpec>,
    frames: BTreeMap<String, BTreeMap<u64, Vec<f64>>>,
}

impl FeatureBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_stream(&mut self, spec: StreamSpec) -> Result<()> {
        if self.frames.contains_key(&spec.name) {
            return Err(Error::InvalidArgument(format!("stream `{}` declared twice", spec.name)));
        }
        if spec.dim == 0 {
            return Err(Error::InvalidArgument(format!("stream `{}` has zero dimension", spec.name)));
        }
        self.frames.insert(spec.name.clone(), BTreeMap::new());
        self.manifest.push(spec);
        Ok(())
    }

    pub fn insert(&mut self, stream: &str, frame: u64, vector: Vec<f64>) -> Result<()> {
        let dim = self.spec(stream)?.dim;
        if vector.len() != dim {
            return Err(Error::StreamDimension {
                stream: stream.into(),
                expected: dim,
                actual: vector.len(),
            });
        }
        let frames = self.frames.get_mut(stream).expect("declared above");
        if frames.contains_key(&frame) {
            return Err(Error::InvalidArgument(format!("duplicate frame {frame} in stream `{stream}`")));
        }
        frames.insert(frame, vector);
        Ok(())
    }

    pub fn streams(&self) -> &[StreamSpec] {
        &self.manifest
    }

    pub fn spec(&self, stream: &str) -> Result<&StreamSpec> {
        self.manifest
            .iter()
            .find(|s| s.name == stream)
            .ok_or_else(|| Error::UnknownStream(stream.into()))
    }

    pub fn vector(&self, stream: &str, frame: u64) -> Option<&[f64]> {
        self.frames.get(stream)?.get(&frame).map(|v| v.as_slice())
    }

    pub fn frames(&self, stream: &str) -> Result<impl Iterator<Item = (&u64, &Vec<f64>)>> {
        self.frames
            .get(stream)
            .map(|m| m.iter())
            .ok_or_else(|| Error::UnknownStream(stream.into()))
    }

    pub fn frame_counts(&self) -> Vec<(String, usize)> {
        self.manifest
            .iter()
            .map(|s| (s.name.clone(), self.frames[&s.name].len()))
            .collect()
    }

    /// Sorted frame ids present in every listed stream.
    pub fn aligned_frames(&self, streams: &[&str]) -> Result<Vec<u64>> {
        let mut maps = Vec::with_capacity(streams.len());
        for s in streams {
            maps.push(self.frames.get(*s).ok_or_else(|| Error::UnknownStream((*s).into()))?);
        }
        let Some((first, rest)) = maps.split_first() else {
            return Ok(Vec::new());
        };
        Ok(first
            .keys()
            .filter(|id| rest.iter().all(|m| m.contains_key(id)))
            .copied()
            .collect())
    }

    /// A bank holding only the listed streams, in the listed order.
    pub fn select(&self, streams: &[&str]) -> Result<FeatureBank> {
        let mut out = FeatureBank::new();
        for s in streams {
            out.add_stream(self.spec(s)?.clone())?;
            out.frames.insert((*s).into(), self.frames[*s].clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dimension_and_duplicate_checks() {
        let mut b = FeatureBank::new();
        b.add_stream(StreamSpec::new("fau", 17)).unwrap();
        for f in 0..3 {
            b.insert("fau", f, vec![0.0; 17]).unwrap();
        }
        assert_eq!(b.frame_counts(), vec![("fau".into(), 3)]);
        assert!(matches!(
            b.insert("fau", 9, vec![0.0; 16]),
            Err(Error::StreamDimension { expected: 17, actual: 16, .. })
        ));
        assert!(b.insert("fau", 1, vec![0.0; 17]).is_err());
        assert!(matches!(b.insert("eac", 1, vec![]), Err(Error::UnknownStream(_))));
    }

    #[test]
    fn alignment_is_intersection_in_any_order() {
        let mut b = FeatureBank::new();
        b.add_stream(StreamSpec::new("a", 1)).unwrap();
        b.add_stream(StreamSpec::new("b", 1)).unwrap();
        for f in [1, 2, 3] {
            b.insert("a", f, vec![0.0]).unwrap();
        }
        for f in [4, 3, 2] {
            b.insert("b", f, vec![0.0]).unwrap();
        }
        assert_eq!(b.aligned_frames(&["a", "b"]).unwrap(), vec![2, 3]);
        assert_eq!(b.aligned_frames(&["b", "a"]).unwrap(), vec![2, 3]);
    }
}
