//! Fixed two-dimensional sine-cosine positional tables.

use ndarray::Array2;

use super::Scalar;

/// Positional table for a `rows x cols` grid: row index `r * cols + c`
/// holds the encoding of grid cell `(r, c)`. The first half of the vector
/// encodes the row coordinate, the second half the column, each as
/// interleaved `sin`/`cos` at geometrically spaced frequencies.
///
/// `dim` must be divisible by 4. The table is a pure function of its
/// arguments, so it is never serialized with model weights.
pub fn sincos_2d<F: Scalar>(rows: usize, cols: usize, dim: usize) -> Array2<F> {
    assert!(dim % 4 == 0, "positional dim {dim} must be divisible by 4");
    let quarter = dim / 4;
    let mut table = Array2::zeros((rows * cols, dim));
    for r in 0..rows {
        for c in 0..cols {
            let row_idx = r * cols + c;
            for (axis, coord) in [(0usize, r as f64), (1, c as f64)] {
                let base = axis * (dim / 2);
                for i in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
                    table[[row_idx, base + 2 * i]] = F::from_f((coord * omega).sin());
                    table[[row_idx, base + 2 * i + 1]] = F::from_f((coord * omega).cos());
                }
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distinct_for_distinct_positions() {
        let t: Array2<f64> = sincos_2d(14, 14, 16);
        for i in 0..t.nrows() {
            for j in i + 1..t.nrows() {
                let diff: f64 = t
                    .row(i)
                    .iter()
                    .zip(t.row(j).iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert!(diff > 1e-6, "rows {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a: Array2<f32> = sincos_2d(7, 7, 96);
        let b: Array2<f32> = sincos_2d(7, 7, 96);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
