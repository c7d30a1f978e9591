use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;

/// Run-length encoding of a binary mask: `[start, length]` runs of ones in
/// row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub rows: usize,
    pub cols: usize,
    pub runs: Vec<[u32; 2]>,
}

impl Rle {
    pub fn from_mask(mask: &Mask) -> Self {
        let mut runs: Vec<[u32; 2]> = Vec::new();
        for (i, &v) in mask.as_slice().iter().enumerate() {
            if v == 0 {
                continue;
            }
            match runs.last_mut() {
                Some(r) if (r[0] + r[1]) as usize == i => r[1] += 1,
                _ => runs.push([i as u32, 1]),
            }
        }
        Rle {
            rows: mask.rows(),
            cols: mask.cols(),
            runs,
        }
    }

    pub fn to_mask(&self) -> Result<Mask> {
        let mut m = Mask::new(self.rows, self.cols);
        let n = m.len();
        let data = m.as_mut_slice();
        let mut prev_end = 0usize;
        for &[start, len] in &self.runs {
            let (s, e) = (start as usize, start as usize + len as usize);
            if s < prev_end || e > n || len == 0 {
                return Err(Error::invalid(format!("malformed run [{start}, {len}]")));
            }
            data[s..e].iter_mut().for_each(|v| *v = 1);
            prev_end = e;
        }
        Ok(m)
    }

    pub fn count_ones(&self) -> usize {
        self.runs.iter().map(|r| r[1] as usize).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn round_trip() {
        let m = Grid::from_vec(3, 3, vec![1, 1, 0, 0, 1, 1, 1, 0, 1]).unwrap();
        let r = Rle::from_mask(&m);
        assert_eq!(r.runs, vec![[0, 2], [4, 3], [8, 1]]);
        assert_eq!(r.to_mask().unwrap(), m);
        assert_eq!(r.count_ones(), 6);
        let empty = Mask::new(2, 2);
        assert!(Rle::from_mask(&empty).runs.is_empty());
    }

    #[test]
    fn rejects_overlapping_runs() {
        let r = Rle {
            rows: 2,
            cols: 2,
            runs: vec![[0, 2], [1, 1]],
        };
        assert!(r.to_mask().is_err());
    }
}
