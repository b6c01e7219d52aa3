//! Small numerical helpers shared across modules.

/// Natural-log to bits.
pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Standard normal CDF difference `Phi(b) - Phi(a)` for `a <= b`, accurate in
/// both tails.
#[inline]
pub fn normal_interval(a: f64, b: f64) -> f64 {
    const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * INV_SQRT2) - libm::erfc(b * INV_SQRT2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * INV_SQRT2) - libm::erfc(-a * INV_SQRT2))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * INV_SQRT2) + libm::erfc(b * INV_SQRT2))
    }
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}

/// Shannon entropy in bits of a (not necessarily normalized) distribution.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| {
            let q = q / total;
            -q * q.log2()
        })
        .sum()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Result of a golden-section maximization.
#[derive(Debug, Clone, Copy)]
pub struct GoldenMax {
    pub x: f64,
    pub value: f64,
}

/// Maximize `f` on `[lo, hi]` with a fixed number of golden-section steps.
///
/// Returns the best point seen, including the bracket ends.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    iterations: usize,
) -> GoldenMax {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc >= fd {
        GoldenMax { x: c, value: fc }
    } else {
        GoldenMax { x: d, value: fd }
    };
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc > best.value {
                best = GoldenMax { x: c, value: fc };
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd > best.value {
                best = GoldenMax { x: d, value: fd };
            }
        }
    }
    for x in [lo, hi] {
        let v = f(x);
        if v > best.value {
            best = GoldenMax { x, value: v };
        }
    }
    best
}
