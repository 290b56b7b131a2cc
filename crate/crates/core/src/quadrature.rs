//! One-dimensional quadrature used by the kernel diagnostics and oracles.

/// 8-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            acc += w * f(mid + half * x);
        }
        total += half * acc;
    }
    total
}

/// Gauss–Legendre over `[a, b]` split at the given interior breakpoints, so
/// that piecewise-smooth integrands are integrated panel by panel.
pub fn gauss_legendre_pieces(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    panels_per_piece: usize,
) -> f64 {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    for &p in pts.iter().chain(std::iter::once(&b)) {
        total += gauss_legendre(&f, lo, p, panels_per_piece);
        lo = p;
    }
    total
}

/// `∫_a^∞ f` through the substitution `m = a + t/(1-t)`.
pub fn integrate_tail(f: impl Fn(f64) -> f64, a: f64, panels: usize) -> f64 {
    gauss_legendre(
        |t| {
            let one_minus = 1.0 - t;
            let m = a + t / one_minus;
            f(m) / (one_minus * one_minus)
        },
        0.0,
        1.0,
        panels,
    )
}

/// Composite trapezoid rule on samples `ys` at abscissae `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Ordinary least squares fit `y = intercept + slope x`; returns
/// `(slope, intercept, rms residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Some((slope, intercept, (rss / nf).sqrt()))
}

/// `n` points log-spaced on `[a, b]`, endpoints included.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_polynomial_exactness() {
        // An 8-point rule integrates degree 15 exactly.
        let v = gauss_legendre(|x| x.powi(15) + x.powi(4), 0.0, 1.0, 1);
        assert!((v - (1.0 / 16.0 + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn pieces_handle_kinks() {
        let v = gauss_legendre_pieces(|x| (x - 0.3).abs(), 0.0, 1.0, &[0.3], 1);
        assert!((v - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn tail_of_exponential() {
        let v = integrate_tail(|m| (-m).exp(), 2.0, 64);
        assert!((v - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 0.5 * x).collect();
        let (s, i, r) = linear_fit(&xs, &ys).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (i - 1.0).abs() < 1e-14 && r < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
