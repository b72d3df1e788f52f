use crate::tensor_io::BinaryMask;

const N8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];
const N4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

fn flood(
    mask: &BinaryMask,
    value: bool,
    offsets: &[(isize, isize)],
    seen: &mut [bool],
    start: usize,
    out: &mut Vec<usize>,
) {
    let (h, w) = mask.dims();
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        out.push(i);
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for &(dy, dx) in offsets {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !seen[j] && mask.data()[j] == value {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
}

/// 8-connected foreground components as flat pixel indices, in row-major
/// order of each component's first pixel.
pub fn components_8(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.data().len()];
    let mut comps = Vec::new();
    for i in 0..seen.len() {
        if mask.data()[i] && !seen[i] {
            let mut pixels = Vec::new();
            flood(mask, true, &N8, &mut seen, i, &mut pixels);
            pixels.sort_unstable();
            comps.push(pixels);
        }
    }
    comps
}

/// Sets every background pixel that is not 4-connected to the raster border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut scratch = Vec::new();
    let border = (0..w)
        .flat_map(|x| [x, (h - 1) * w + x])
        .chain((0..h).flat_map(|y| [y * w, y * w + w - 1]));
    for i in border {
        if !mask.data()[i] && !seen[i] {
            flood(mask, false, &N4, &mut seen, i, &mut scratch);
        }
    }
    let data = mask
        .data()
        .iter()
        .zip(&seen)
        .map(|(&fg, &outside)| fg || !outside)
        .collect();
    BinaryMask::from_vec(h, w, data).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_join_under_8_connectivity() {
        let m = BinaryMask::from_fn(3, 3, |r, c| r == c);
        assert_eq!(components_8(&m).len(), 1);
        let m = BinaryMask::from_fn(3, 4, |_, c| c == 0 || c == 3);
        assert_eq!(components_8(&m).len(), 2);
    }

    #[test]
    fn fills_interior_hole_only() {
        // ring with a 2x2 hole
        let m = BinaryMask::from_fn(6, 6, |r, c| {
            (1..5).contains(&r) && (1..5).contains(&c) && !((2..4).contains(&r) && (2..4).contains(&c))
        });
        let filled = fill_holes(&m);
        assert_eq!(filled.count(), 16);
        // a notch reaching the border is not a hole
        let open = BinaryMask::from_fn(5, 5, |r, c| r < 4 && c < 4 && !((1..=2).contains(&r) && c >= 1));
        assert_eq!(fill_holes(&open), open);
    }

    #[test]
    fn diagonal_gap_still_a_hole_under_4_connectivity() {
        // background pixel whose only escape is diagonal stays enclosed
        #[rustfmt::skip]
        let m = BinaryMask::from_vec(3, 3, vec![
            true,  true,  false,
            true,  false, true,
            true,  true,  true,
        ]).unwrap();
        let filled = fill_holes(&m);
        assert!(filled.get(1, 1));
        assert!(!filled.get(0, 2));
    }
}
