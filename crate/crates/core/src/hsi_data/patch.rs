use ndarray::Array3;

use super::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Mirror reflection about the border, excluding the border pixel itself:
/// `-1 -> 1`, `n -> n - 2`. Valid for `-(n - 1) <= index <= 2n - 2`.
pub fn reflect_index(index: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if index < 0 {
        -index
    } else if index >= n {
        2 * (n - 1) - index
    } else {
        index
    };
    debug_assert!((0..n).contains(&r), "reflection of {index} outside 0..{n}");
    r as usize
}

pub(super) fn check_patch_args(cube: &HsiCube, size: usize) -> Result<()> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("patch size must be odd, got {size}")));
    }
    let limit = 2 * cube.height().min(cube.width()) - 1;
    if size > limit {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds {limit} for a {}x{} scene",
            cube.height(),
            cube.width()
        )));
    }
    Ok(())
}

fn check_center(cube: &HsiCube, row: usize, col: usize) -> Result<()> {
    if row >= cube.height() || col >= cube.width() {
        return Err(Error::InvalidArgument(format!(
            "centre ({row}, {col}) outside {}x{} scene",
            cube.height(),
            cube.width()
        )));
    }
    Ok(())
}

/// Writes the `L x S x S` patch around `(row, col)` into `out`.
pub(super) fn fill_patch<T: Real>(cube: &HsiCube, row: usize, col: usize, size: usize, out: &mut [T]) -> Result<()> {
    check_center(cube, row, col)?;
    let half = (size / 2) as isize;
    let (h, w) = (cube.height(), cube.width());
    let rows: Vec<usize> = (-half..=half).map(|d| reflect_index(row as isize + d, h)).collect();
    let cols: Vec<usize> = (-half..=half).map(|d| reflect_index(col as isize + d, w)).collect();
    let values = cube.values();
    let mut it = out.iter_mut();
    for band in values.outer_iter() {
        for &r in &rows {
            for &c in &cols {
                *it.next().expect("output sized L*S*S") = T::from_f64_lossy(band[[r, c]] as f64);
            }
        }
    }
    Ok(())
}

/// Extracts the `L x size x size` window centred on `(row, col)`, reflecting
/// coordinates that fall outside the scene.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, size: usize) -> Result<Array3<f32>> {
    check_patch_args(cube, size)?;
    let mut data = vec![0f32; cube.bands() * size * size];
    fill_patch(cube, row, col, size, &mut data)?;
    Ok(Array3::from_shape_vec((cube.bands(), size, size), data).expect("sized above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array};
    use proptest::prelude::*;

    /// Independent reflection oracle: walk from the nearest border, bouncing.
    fn bounce(mut i: isize, n: usize) -> usize {
        let n = n as isize;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return i as usize;
            }
        }
    }

    fn cube(l: usize, h: usize, w: usize) -> HsiCube {
        HsiCube::new(
            "p",
            Array::from_shape_fn((l, h, w), |(a, b, c)| (a * 1000 + b * 31 + c) as f32),
            None,
        )
        .unwrap()
    }

    #[test]
    fn corner_rows_reflect_to_one_zero_one() {
        let rows: Vec<usize> = (-1..=1).map(|d| reflect_index(d, 5)).collect();
        assert_eq!(rows, vec![1, 0, 1]);
        let c = cube(2, 5, 5);
        let p = extract_patch(&c, 0, 0, 3).unwrap();
        for (i, r) in [1usize, 0, 1].into_iter().enumerate() {
            for (j, q) in [1usize, 0, 1].into_iter().enumerate() {
                assert_eq!(p[[1, i, j]], c.values()[[1, r, q]]);
            }
        }
    }

    #[test]
    fn reflection_agrees_with_bounce_oracle_over_all_offsets() {
        for n in 1..12usize {
            for i in -(n as isize - 1)..=(2 * n as isize - 2) {
                assert_eq!(reflect_index(i, n), bounce(i, n), "i={i} n={n}");
            }
        }
    }

    #[test]
    fn unit_window_is_the_spectral_column() {
        let c = cube(6, 4, 3);
        let p = extract_patch(&c, 2, 1, 1).unwrap();
        assert_eq!(p.dim(), (6, 1, 1));
        assert_eq!(p.iter().copied().collect::<Vec<_>>(), c.spectrum(2, 1));
    }

    #[test]
    fn pavia_sized_patch_shape() {
        let c = HsiCube::new("pu", Array3::zeros((103, 30, 30)), None).unwrap();
        assert_eq!(extract_patch(&c, 0, 29, 27).unwrap().dim(), (103, 27, 27));
    }

    #[test]
    fn invalid_arguments() {
        let c = cube(2, 5, 5);
        assert!(extract_patch(&c, 0, 0, 4).is_err());
        assert!(extract_patch(&c, 5, 0, 3).is_err());
        assert!(extract_patch(&c, 0, 0, 11).is_err());
        assert!(extract_patch(&c, 0, 0, 9).is_ok());
    }

    proptest! {
        #[test]
        fn interior_patch_is_a_plain_slice(
            l in 1usize..4, h in 5usize..12, w in 5usize..12, half in 0usize..3,
            seed_r in 0usize..100, seed_c in 0usize..100,
        ) {
            let c = cube(l, h, w);
            prop_assume!(h > 2 * half && w > 2 * half);
            let row = half + seed_r % (h - 2 * half);
            let col = half + seed_c % (w - 2 * half);
            let size = 2 * half + 1;
            let p = extract_patch(&c, row, col, size).unwrap();
            // naive per-element copy
            for b in 0..l {
                for i in 0..size {
                    for j in 0..size {
                        prop_assert_eq!(p[[b, i, j]], c.values()[[b, row + i - half, col + j - half]]);
                    }
                }
            }
            let sliced = c.values().slice(s![.., row - half..=row + half, col - half..=col + half]);
            prop_assert_eq!(p, sliced.to_owned());
        }
    }
}
