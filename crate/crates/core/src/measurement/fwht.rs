use crate::error::{Error, Result};

/// In-place fast Walsh–Hadamard transform.
///
/// The butterfly uses Sylvester ordering, so the unnormalized transform of
/// `v` equals `H v` with `H[r][c] = (-1)^popcount(r & c)`. With `normalize`
/// the output is scaled by `1/sqrt(n)`, which makes the transform orthogonal
/// and an involution.
pub fn fwht(v: &mut [f64], normalize: bool) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    fwht_unchecked(v);
    if normalize && n > 1 {
        let s = 1.0 / (n as f64).sqrt();
        v.iter_mut().for_each(|x| *x *= s);
    }
    Ok(())
}

/// Butterfly without the length check or scaling. `v.len()` must be a power of two.
pub(crate) fn fwht_unchecked(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Entry `(r, c)` of the normalized Hadamard matrix of order `n`.
pub fn hadamard_entry(n: usize, r: usize, c: usize) -> f64 {
    let sign = if (r & c).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    sign / (n as f64).sqrt()
}
