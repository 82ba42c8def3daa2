use serde::{Deserialize, Serialize};

use super::{CodecError, Result};

/// `freq × time` grid of codeword ids with a per-cell mask.
///
/// Masked cells carry no token; their stored index is meaningless and kept at 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenGrid {
    freq: usize,
    time: usize,
    indices: Vec<u32>,
    mask: Vec<bool>,
}

impl TokenGrid {
    /// Fully masked grid.
    pub fn masked(freq: usize, time: usize) -> Self {
        Self {
            freq,
            time,
            indices: vec![0; freq * time],
            mask: vec![true; freq * time],
        }
    }

    /// Fully unmasked grid from row-major (`f * time + t`) indices.
    pub fn from_indices(freq: usize, time: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != freq * time {
            return Err(CodecError::ShapeMismatch(format!(
                "{} indices for a {freq}x{time} grid",
                indices.len()
            )));
        }
        Ok(Self {
            freq,
            time,
            mask: vec![false; indices.len()],
            indices,
        })
    }

    pub fn freq(&self) -> usize {
        self.freq
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.freq, self.time)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn cell(&self, f: usize, t: usize) -> usize {
        f * self.time + t
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.time, cell % self.time)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    /// Token at `cell`, or `None` when masked.
    pub fn token(&self, cell: usize) -> Option<u32> {
        (!self.mask[cell]).then_some(self.indices[cell])
    }

    pub fn set(&mut self, cell: usize, index: u32) {
        self.indices[cell] = index;
        self.mask[cell] = false;
    }

    pub fn mask_cell(&mut self, cell: usize) {
        self.indices[cell] = 0;
        self.mask[cell] = true;
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_cells(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&c| self.mask[c]).collect()
    }

    pub fn is_complete(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Copy of time columns `[start, end)`, mask included.
    pub fn columns(&self, start: usize, end: usize) -> TokenGrid {
        assert!(start <= end && end <= self.time);
        let width = end - start;
        let mut out = TokenGrid::masked(self.freq, width);
        for f in 0..self.freq {
            for t in 0..width {
                let src = self.cell(f, start + t);
                let dst = out.cell(f, t);
                out.indices[dst] = self.indices[src];
                out.mask[dst] = self.mask[src];
            }
        }
        out
    }

    /// Writes `src`'s columns into this grid starting at column `at`.
    pub fn put_columns(&mut self, at: usize, src: &TokenGrid) {
        assert_eq!(src.freq, self.freq);
        assert!(at + src.time <= self.time);
        for f in 0..self.freq {
            for t in 0..src.time {
                let s = src.cell(f, t);
                let d = self.cell(f, at + t);
                self.indices[d] = src.indices[s];
                self.mask[d] = src.mask[s];
            }
        }
    }

    pub fn check_vocab(&self, k: usize) -> Result<()> {
        match self
            .indices
            .iter()
            .zip(&self.mask)
            .position(|(&i, &m)| !m && i as usize >= k)
        {
            Some(cell) => Err(CodecError::IndexOutOfRange {
                cell,
                index: self.indices[cell],
                k,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_roundtrip() {
        let mut g = TokenGrid::from_indices(2, 4, (0..8).collect()).unwrap();
        let tail = g.columns(2, 4);
        assert_eq!(tail.indices(), &[2, 3, 6, 7]);
        let mut next = TokenGrid::masked(2, 4);
        next.put_columns(0, &tail);
        assert_eq!(next.columns(0, 2), tail);
        assert_eq!(next.masked_count(), 4);
        g.mask_cell(1);
        assert_eq!(g.token(1), None);
        assert_eq!(g.token(2), Some(2));
    }

    #[test]
    fn vocab_check() {
        let g = TokenGrid::from_indices(1, 3, vec![0, 1, 5]).unwrap();
        assert!(g.check_vocab(6).is_ok());
        assert!(matches!(
            g.check_vocab(5),
            Err(CodecError::IndexOutOfRange { cell: 2, .. })
        ));
    }
}
