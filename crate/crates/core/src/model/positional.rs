use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal position table of shape `max_len × d_model`.
///
/// Row `pos`, column `2i` holds `sin(pos / 10000^(2i/d_model))`; column
/// `2i+1` holds the cosine at the same frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalTable {
    table: Tensor,
}

impl PositionalTable {
    pub fn new(max_len: usize, d_model: usize) -> Result<Self> {
        if d_model == 0 || !d_model.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "positional encoding needs an even width, got {d_model}"
            )));
        }
        let mut data = Vec::with_capacity(max_len * d_model);
        for pos in 0..max_len {
            for i in 0..d_model / 2 {
                let freq = libm::pow(10000.0, (2 * i) as f64 / d_model as f64);
                let angle = pos as f64 / freq;
                data.push(libm::sin(angle));
                data.push(libm::cos(angle));
            }
        }
        Ok(Self {
            table: Tensor::new(&[max_len, d_model], data)?,
        })
    }

    pub fn max_len(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn d_model(&self) -> usize {
        self.table.dims()[1]
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// The first `len` rows as a `len × d_model` tensor.
    pub fn rows(&self, len: usize) -> Result<Tensor> {
        if len > self.max_len() {
            return Err(Error::SequenceTooLong {
                len,
                max: self.max_len(),
            });
        }
        let d = self.d_model();
        Tensor::new(&[len, d], self.table.data()[..len * d].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = PositionalTable::new(4, 8).unwrap();
        let row0 = &pe.table().data()[..8];
        for (j, v) in row0.iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn second_row_first_entry_is_sin_one() {
        let pe = PositionalTable::new(4, 8).unwrap();
        assert!((pe.table().at(&[1, 0]) - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn bounded_on_large_table() {
        let pe = PositionalTable::new(512, 256).unwrap();
        assert!(pe.table().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_width_rejected() {
        assert!(PositionalTable::new(4, 7).is_err());
    }

    #[test]
    fn rows_beyond_table_rejected() {
        let pe = PositionalTable::new(4, 8).unwrap();
        assert_eq!(pe.rows(3).unwrap().dims(), &[3, 8]);
        assert!(matches!(pe.rows(5), Err(Error::SequenceTooLong { len: 5, max: 4 })));
    }
}
