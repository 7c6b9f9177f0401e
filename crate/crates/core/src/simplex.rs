//! Row-wise helpers for keeping matrices on the probability simplex.

use crate::Matrix;

/// Clamps negative entries of each row to zero and rescales the row to sum to one.
///
/// Returns the index of the first row whose clamped sum is not positive, leaving the
/// matrix partially normalized.
pub fn clamp_normalize_rows(m: &mut Matrix) -> Result<(), usize> {
    for i in 0..m.nrows() {
        let mut row = m.row_mut(i);
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let s = row.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(i);
        }
        row /= s;
    }
    Ok(())
}

/// Same as [`clamp_normalize_rows`] but rows that vanish become uniform `1/m`.
pub fn clamp_normalize_rows_or_uniform(m: &mut Matrix) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        let mut row = m.row_mut(i);
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let s = row.sum();
        if s > 0.0 && s.is_finite() {
            row /= s;
        } else {
            row.fill(1.0 / cols as f64);
        }
    }
}

/// Largest deviation of a row sum from one.
pub fn max_row_sum_error(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}
