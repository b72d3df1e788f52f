//! Mask run-length codec shared with the bridge.
//!
//! Row-major runs alternating false/true, starting with a (possibly empty)
//! false run, written as ASCII decimals separated by single spaces. The run
//! lengths sum to `height · width`.

use crate::error::{Error, Result};
use crate::tensor_io::BinaryMask;

pub fn encode(mask: &BinaryMask) -> String {
    let mut runs: Vec<usize> = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &v in mask.data() {
        if v != current {
            runs.push(len);
            current = v;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn decode(text: &str, height: usize, width: usize) -> Result<BinaryMask> {
    let total = height * width;
    let mut data = Vec::with_capacity(total);
    let mut value = false;
    for tok in text.split(' ') {
        let n: usize = tok
            .parse()
            .map_err(|_| Error::Protocol(format!("bad RLE run {tok:?}")))?;
        if data.len() + n > total {
            return Err(Error::Protocol(format!(
                "RLE runs exceed {height}x{width} raster"
            )));
        }
        data.extend(std::iter::repeat_n(value, n));
        value = !value;
    }
    if data.len() != total {
        return Err(Error::Protocol(format!(
            "RLE runs sum to {}, expected {total}",
            data.len()
        )));
    }
    BinaryMask::from_vec(height, width, data).map_err(|e| Error::Protocol(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        let full = BinaryMask::from_fn(1, 5, |_, _| true);
        assert_eq!(encode(&full), "0 5");
        assert_eq!(decode("0 5", 1, 5).unwrap(), full);
        assert_eq!(encode(&BinaryMask::new(2, 3)), "6");
        let m = BinaryMask::from_vec(2, 3, vec![false, true, true, false, false, true]).unwrap();
        assert_eq!(encode(&m), "1 2 2 1");
    }

    #[test]
    fn malformed_runs() {
        assert!(matches!(decode("1 2", 1, 5), Err(Error::Protocol(_))));
        assert!(matches!(decode("3 4", 1, 5), Err(Error::Protocol(_))));
        assert!(matches!(decode("2 x 3", 1, 5), Err(Error::Protocol(_))));
        assert!(matches!(decode("", 1, 5), Err(Error::Protocol(_))));
        assert!(matches!(decode("2  3", 1, 5), Err(Error::Protocol(_))));
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = BinaryMask::from_fn(h, w, |r, c| bits[r * 12 + c]);
            let text = encode(&m);
            let sum: usize = text.split(' ').map(|t| t.parse::<usize>().unwrap()).sum();
            prop_assert_eq!(sum, h * w);
            prop_assert_eq!(decode(&text, h, w).unwrap(), m);
        }
    }
}
