/// Sinusoidal features of `u = ln t`: `sin(u·f_j)` in the first half,
/// `cos(u·f_j)` in the second, with `f_j` spaced geometrically from
/// [`MIN_FREQ`] to [`MAX_FREQ`].
pub fn timestep_embedding(t: usize, dim: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), dim);
    let half = dim / 2;
    let u = (t.max(1) as f64).ln();
    let ratio = (MAX_FREQ / MIN_FREQ).ln();
    for j in 0..half {
        let pos = if half > 1 { j as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = MIN_FREQ * (ratio * pos).exp();
        let (s, c) = (u * freq).sin_cos();
        out[j] = s;
        out[j + half] = c;
    }
    if dim % 2 == 1 {
        out[dim - 1] = 0.0;
    }
}

pub const MIN_FREQ: f64 = 0.05;
pub const MAX_FREQ: f64 = 4.0;
