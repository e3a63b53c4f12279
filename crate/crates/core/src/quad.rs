//! Composite Simpson rules.

/// Weights of the composite Simpson rule on `intervals + 1` nodes over an
/// interval of width `h·intervals` (`intervals` even).
pub fn simpson_weights(intervals: usize, h: f64) -> Vec<f64> {
    assert!(intervals >= 2 && intervals % 2 == 0, "Simpson needs an even number of intervals");
    (0..=intervals)
        .map(|i| {
            let c = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Tensor-product Simpson sums of `f` on the cube `[−half, half]ⁿ` with `N`
/// and `N/2` intervals per axis, from one pass over the fine nodes.
/// `N` must be a multiple of 4.
pub fn tensor_simpson_pair<T>(n: usize, half: f64, intervals: usize, f: impl Fn(&[f64]) -> T) -> (T, T)
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    assert!(intervals % 4 == 0, "interval count must be a multiple of 4");
    let h = 2.0 * half / intervals as f64;
    let fine = simpson_weights(intervals, h);
    let coarse = simpson_weights(intervals / 2, 2.0 * h);
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut s_fine = T::default();
    let mut s_coarse = T::default();
    loop {
        let mut wf = 1.0;
        let mut wc = 1.0;
        let mut on_coarse = true;
        for d in 0..n {
            x[d] = -half + idx[d] as f64 * h;
            wf *= fine[idx[d]];
            if idx[d] % 2 == 0 {
                wc *= coarse[idx[d] / 2];
            } else {
                on_coarse = false;
            }
        }
        let v = f(&x);
        s_fine = s_fine + v * wf;
        if on_coarse {
            s_coarse = s_coarse + v * wc;
        }
        let mut d = 0;
        loop {
            if d == n {
                return (s_fine, s_coarse);
            }
            idx[d] += 1;
            if idx[d] <= intervals {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_is_exact() {
        let w = simpson_weights(4, 0.25);
        let s: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * 0.25).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_in_two_dimensions() {
        let (fine, coarse) = tensor_simpson_pair(2, 8.0, 128, |x: &[f64]| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp());
        let exact = 2.0 * std::f64::consts::PI;
        assert!((fine - exact).abs() < 1e-10);
        assert!((coarse - exact).abs() < 1e-6);
    }
}
