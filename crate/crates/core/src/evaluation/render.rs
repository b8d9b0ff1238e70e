//! Grayscale images and CSV dumps of fields on evaluation grids.

use super::{EvalError, EvalSet};

/// 16-bit binary PGM (`P5`, max value 65535, big-endian samples) of a
/// field on a 2-D grid. Columns follow axis 0, rows follow axis 1 with its
/// largest value on top. Values are min-max normalized; a constant field
/// maps to mid-gray 32768.
pub fn render_pgm(values: &[f64], sizes: &[usize]) -> Result<Vec<u8>, EvalError> {
    if sizes.len() != 2 {
        return Err(EvalError::Grid(format!("images need a 2-D grid, got {} axes", sizes.len())));
    }
    let (w, h) = (sizes[0], sizes[1]);
    if values.len() != w * h {
        return Err(EvalError::Length {
            truth: w * h,
            pred: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("field"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = |v: f64| -> u16 {
        if hi > lo {
            ((v - lo) / (hi - lo) * 65535.0).round() as u16
        } else {
            32768
        }
    };
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * w * h);
    for row in 0..h {
        let j = h - 1 - row;
        for i in 0..w {
            out.extend_from_slice(&level(values[i * h + j]).to_be_bytes());
        }
    }
    Ok(out)
}

/// One row per grid point: coordinates, truth, prediction.
pub fn field_csv(set: &EvalSet, coord_names: &[&str], pred: &[f64]) -> Result<String, EvalError> {
    if pred.len() != set.truth.len() {
        return Err(EvalError::Length {
            truth: set.truth.len(),
            pred: pred.len(),
        });
    }
    let mut s = coord_names.join(",");
    s.push_str(",truth,prediction\n");
    for r in 0..set.points.rows() {
        for v in set.points.row_slice(r) {
            s.push_str(&format!("{v:e},"));
        }
        s.push_str(&format!("{:e},{:e}\n", set.truth[r], pred[r]));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(img: &[u8]) -> Vec<u16> {
        let header_end = img
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .nth(2)
            .unwrap()
            .0;
        img[header_end + 1..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    }

    #[test]
    fn constant_is_mid_gray() {
        let img = render_pgm(&[2.5; 6], &[2, 3]).unwrap();
        assert!(img.starts_with(b"P5\n2 3\n65535\n"));
        assert_eq!(pixels(&img), vec![32768; 6]);
    }

    #[test]
    fn checkerboard_hits_extremes() {
        // Axis 0 slowest: values[i * 2 + j] for (x_i, y_j).
        let img = render_pgm(&[0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap();
        assert_eq!(pixels(&img), vec![65535, 0, 0, 65535]);
        assert_eq!(img, render_pgm(&[0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(render_pgm(&[f64::NAN; 4], &[2, 2]).is_err());
        assert!(render_pgm(&[0.0; 8], &[2, 2, 2]).is_err());
        assert!(render_pgm(&[0.0; 3], &[2, 2]).is_err());
    }
}
