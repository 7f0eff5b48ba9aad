use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_BLOCK: usize = 8;

/// `round_half_up(255 * v^gamma)`
fn intensity(v: f64, gamma: f64) -> u8 {
    (255.0 * v.powf(gamma) + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Binary PGM (P5, maxval 255) with each cell drawn as a `block x block` square.
pub fn encode_pgm(matrix: &SquareMatrix, gamma: f64, block: usize) -> Result<Vec<u8>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if block == 0 {
        return Err(Error::InvalidArgument(
            "block size must be at least 1".into(),
        ));
    }
    if let Some(v) = matrix.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "matrix entry {v} is outside [0, 1]"
        )));
    }
    let n = matrix.dim();
    let side = n * block;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side);
    for r in 0..n {
        let row: Vec<u8> = matrix
            .row(r)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(intensity(v, gamma), block))
            .collect();
        for _ in 0..block {
            out.extend_from_slice(&row);
        }
    }
    Ok(out)
}

pub fn render_matrix_heatmap(
    matrix: &SquareMatrix,
    path: impl AsRef<Path>,
    gamma: f64,
    block: usize,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(matrix, gamma, block)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
