//! Sinusoidal positional encoding with the raw input as frequency-0 channel.

use crate::real::Real;

/// Encoded width of `dim` inputs at `freqs` octaves.
pub fn posenc_dim(dim: usize, freqs: usize) -> usize {
    dim * (1 + 2 * freqs)
}

/// `[x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ...]` per component.
pub fn posenc<S: Real>(x: &[S], freqs: usize, out: &mut Vec<S>) {
    out.extend_from_slice(x);
    let mut scale = std::f64::consts::PI;
    for _ in 0..freqs {
        for &v in x {
            let a = v * S::from_f64(scale);
            out.push(a.sin());
            out.push(a.cos());
        }
        scale *= 2.0;
    }
}
