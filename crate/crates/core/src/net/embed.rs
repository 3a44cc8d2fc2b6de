/// Sinusoidal features of the step index: `dim / 2` sines followed by
/// `dim / 2` cosines on geometrically spaced frequencies.
pub fn sinusoidal(n: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = n as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_frequency_is_the_raw_step() {
        let e = sinusoidal(3, 8);
        assert_eq!(e.len(), 8);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
        assert!((e[4] - 3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn distinct_steps_have_distinct_embeddings() {
        assert_ne!(sinusoidal(1, 32), sinusoidal(2, 32));
    }
}
