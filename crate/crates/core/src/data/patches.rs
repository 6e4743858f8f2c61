//! Dilated neighbourhood sampling on per-pixel feature maps.

use ndarray::{concatenate, Array2, Axis};

use super::GridScene;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// For every pixel of an `height × width` map (one pixel per row of
/// `features`), concatenates the features of the `(2r+1)²` neighbours at
/// offsets `{−r·d, …, 0, …, r·d}²`, scanned row-major, with border
/// replication. Output width is `channels · (2r+1)²`.
pub fn patches_of<T: Scalar>(
    features: &Array2<T>,
    height: usize,
    width: usize,
    radius: usize,
    dilation: usize,
) -> Result<Array2<T>> {
    if dilation == 0 {
        return Err(Error::invalid("dilation", "must be at least 1"));
    }
    if features.nrows() != height * width {
        return Err(Error::shape(
            "patches",
            format!("{} rows for a {height}x{width} map", features.nrows()),
        ));
    }
    let channels = features.ncols();
    let side = 2 * radius + 1;
    let mut out = Array2::zeros((height * width, channels * side * side));
    let (r, d) = (radius as isize, dilation as isize);
    for row in 0..height {
        for col in 0..width {
            let p = row * width + col;
            let mut k = 0;
            for dy in -r..=r {
                let rr = (row as isize + dy * d).clamp(0, height as isize - 1) as usize;
                for dx in -r..=r {
                    let cc = (col as isize + dx * d).clamp(0, width as isize - 1) as usize;
                    let src = features.row(rr * width + cc);
                    out.row_mut(p)
                        .slice_mut(ndarray::s![k..k + channels])
                        .assign(&src);
                    k += channels;
                }
            }
        }
    }
    Ok(out)
}

pub fn extract_patches<T: Scalar>(
    scene: &GridScene<T>,
    radius: usize,
    dilation: usize,
) -> Result<Array2<T>> {
    patches_of(&scene.features, scene.height, scene.width, radius, dilation)
}

/// Concatenation of several `(radius, dilation)` patch extractions.
pub fn extract_multiscale<T: Scalar>(
    features: &Array2<T>,
    height: usize,
    width: usize,
    scales: &[(usize, usize)],
) -> Result<Array2<T>> {
    if scales.is_empty() {
        return Err(Error::invalid("scales", "need at least one scale"));
    }
    let parts = scales
        .iter()
        .map(|&(r, d)| patches_of(features, height, width, r, d))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("rows agree"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h * w, 1), |(p, _)| p as f64)
    }

    #[test]
    fn radius_zero_is_identity() {
        let f = Array2::from_shape_fn((12, 2), |(i, j)| (i * 2 + j) as f64);
        assert_eq!(patches_of(&f, 3, 4, 0, 1).unwrap(), f);
    }

    #[test]
    fn constant_field() {
        let f = Array2::from_elem((25, 1), 3.5);
        let p = patches_of(&f, 5, 5, 1, 1).unwrap();
        assert_eq!(p.ncols(), 9);
        assert!(p.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn dilated_offsets_at_center() {
        let (h, w) = (9, 9);
        let f = ramp(h, w);
        let p = patches_of(&f, h, w, 1, 2).unwrap();
        let center = 4 * w + 4;
        let mut expected = Vec::new();
        for dy in [-2isize, 0, 2] {
            for dx in [-2isize, 0, 2] {
                expected.push(f[[((4 + dy) as usize) * w + (4 + dx) as usize, 0]]);
            }
        }
        assert_eq!(p.row(center).to_vec(), expected);
    }

    #[test]
    fn borders_replicate() {
        let f = ramp(3, 3);
        let p = patches_of(&f, 3, 3, 1, 1).unwrap();
        // Top-left corner: the out-of-range neighbours clamp to row/col 0.
        assert_eq!(
            p.row(0).to_vec(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 4.0]
        );
    }

    #[test]
    fn multiscale_concatenates() {
        let f = ramp(8, 8);
        let m = extract_multiscale(&f, 8, 8, &[(1, 1), (1, 3)]).unwrap();
        assert_eq!(m.ncols(), 18);
        assert!(patches_of(&f, 8, 8, 1, 0).is_err());
    }
}
