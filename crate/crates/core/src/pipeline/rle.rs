//! Run-length mask encoding: column-major traversal, alternating runs
//! starting with a (possibly empty) run of zeros.

use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("runs sum to {sum}, expected {expected} pixels")]
pub struct RleError {
    pub sum: u64,
    pub expected: u64,
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = mask.dims();
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.data[y * w + x];
            if v != current {
                runs.push(len);
                current = v;
                len = 0;
            }
            len += 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], dims: (usize, usize)) -> Result<BinaryMask, RleError> {
    let (w, h) = dims;
    let sum: u64 = runs.iter().map(|&r| r as u64).sum();
    let expected = (w * h) as u64;
    if sum != expected {
        return Err(RleError { sum, expected });
    }
    let mut mask = BinaryMask::new(w, h);
    let mut i = 0usize;
    for (k, &r) in runs.iter().enumerate() {
        if k % 2 == 1 {
            for j in i..i + r as usize {
                let (x, y) = (j / h, j % h);
                mask.data[y * w + x] = true;
            }
        }
        i += r as usize;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_masks() {
        assert_eq!(rle_encode(&BinaryMask::new(4, 4)), vec![16]);
        assert_eq!(rle_encode(&BinaryMask::full(4, 4)), vec![0, 16]);
        assert_eq!(rle_decode(&[0, 16], (4, 4)).unwrap(), BinaryMask::full(4, 4));
        assert_eq!(rle_decode(&[3, 2], (2, 2)), Err(RleError { sum: 5, expected: 4 }));
    }

    #[test]
    fn column_major_order() {
        // only (1, 0) set in a 2×2 mask: column 0 is (0,0),(0,1), then (1,0)
        let m = BinaryMask::from_fn(2, 2, |x, y| x == 1 && y == 0);
        assert_eq!(rle_encode(&m), vec![2, 1, 1]);
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..20, h in 1usize..20, bits in proptest::collection::vec(any::<bool>(), 400)) {
            let m = BinaryMask::from_vec(w, h, bits[..w * h].to_vec());
            let runs = rle_encode(&m);
            prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), w * h);
            prop_assert!(runs[1..].iter().all(|&r| r > 0));
            prop_assert_eq!(rle_decode(&runs, (w, h)).unwrap(), m);
        }
    }
}
