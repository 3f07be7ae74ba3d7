//! Laguerre polynomials, log-space combinatorics, and numerical checks of
//! the summation/integral identities the channel algebra relies on.
//!
//! Each `check_*` function returns the measured residual of one identity so
//! callers can assert it against a tolerance; preconditions that would make
//! the underlying series diverge are enforced as errors.

use crate::error::{Error, Result};

/// ln(n!) by direct summation; exact at 0 and 1, relative error well below
/// 1e-14 for the argument ranges used here.
pub fn log_factorial(n: usize) -> f64 {
    let mut acc = 0.0;
    for k in 2..=n {
        acc += (k as f64).ln();
    }
    acc
}

/// Cumulative table of ln(k!) for k = 0..=max_n.
pub fn log_factorial_table(max_n: usize) -> Vec<f64> {
    let mut table = vec![0.0; max_n + 1];
    for k in 2..=max_n {
        table[k] = table[k - 1] + (k as f64).ln();
    }
    table
}

/// ln C(n, k), computed as a log-factorial difference to avoid overflow.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    assert!(k <= n, "ln_binomial requires k <= n");
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

/// Laguerre polynomial L_s(x) via the three-term recurrence
/// (k+1) L_{k+1}(x) = (2k+1-x) L_k(x) - k L_{k-1}(x).
///
/// The recurrence is the production path; the explicit alternating sum loses
/// precision for large x and is kept only as a test oracle.
pub fn laguerre(s: usize, x: f64) -> f64 {
    if s == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 - x;
    for k in 1..s {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Compensated (Kahan) accumulator; keeps long alternating sums near
/// machine precision.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Residual of the negative-binomial summation identity
/// Σ_{m=0}^{terms} C(m+n, m) (-x)^m = (1+x)^{-n-1}.
///
/// Convergence requires |x| < 1, enforced here; x = 0 is allowed (every
/// term beyond m = 0 vanishes).
pub fn check_negative_binomial_sum(n: usize, x: f64, terms: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::InvalidParameter {
            name: "x",
            value: x,
            constraint: "0 <= x < 1",
        });
    }
    let mut sum = KahanSum::default();
    // c_m = C(m+n, m) (-x)^m, built incrementally
    let mut c = 1.0;
    sum.add(c);
    for m in 1..=terms {
        c *= -x * (m + n) as f64 / m as f64;
        sum.add(c);
    }
    let closed = (1.0 + x).powi(-(n as i32) - 1);
    Ok((sum.value() - closed).abs())
}

/// Residual of the Laguerre generating-function identity
/// Σ_{n=0}^{terms} C(n+s, s) (-λ)^n L_{n+s}(z)
///   = (1+λ)^{-s-1} e^{λz/(1+λ)} L_s(z/(1+λ)).
pub fn check_generating_function(s: usize, lambda: f64, z: f64, terms: usize) -> Result<f64> {
    if lambda.abs() >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
            constraint: "|lambda| < 1",
        });
    }
    // Stream L_k(z) upward through the recurrence once; the n-th summand
    // needs L_{n+s}(z).
    let mut lhs = KahanSum::default();
    let mut l_prev = 1.0; // L_0(z)
    let mut l_cur = 1.0 - z; // L_1(z)
    let mut held = 1usize; // index of l_cur
    let mut binom = 1.0; // C(n+s, s)
    let mut lam_pow = 1.0; // (-lambda)^n
    for n in 0..=terms {
        let k = n + s;
        while held < k {
            let j = held as f64;
            let next = ((2.0 * j + 1.0 - z) * l_cur - j * l_prev) / (j + 1.0);
            l_prev = l_cur;
            l_cur = next;
            held += 1;
        }
        let lk = if k == 0 { 1.0 } else { l_cur };
        lhs.add(binom * lam_pow * lk);
        binom *= (n + s + 1) as f64 / (n + 1) as f64;
        lam_pow *= -lambda;
    }
    let rhs = (1.0 + lambda).powi(-(s as i32) - 1)
        * (lambda * z / (1.0 + lambda)).exp()
        * laguerre(s, z / (1.0 + lambda));
    Ok((lhs.value() - rhs).abs())
}

/// Residual of the Laguerre integral identity
/// ∫_0^∞ e^{-bx} L_l(x) dx = (b-1)^l b^{-l-1},
/// evaluated by adaptive Simpson quadrature with the upper cutoff chosen so
/// the truncated tail is below 1e-13 (|L_l(x)| <= e^{x/2} for x >= 0).
pub fn check_laguerre_integral(l: usize, b: f64) -> Result<f64> {
    if b <= 0.5 {
        return Err(Error::InvalidParameter {
            name: "b",
            value: b,
            constraint: "b > 0.5",
        });
    }
    let decay = b - 0.5;
    let upper = (1.0 / (1e-13 * decay)).ln() / decay;
    let f = |x: f64| (-b * x).exp() * laguerre(l, x);
    let quad = adaptive_simpson(&f, 0.0, upper, 1e-13);
    let closed = (b - 1.0).powi(l as i32) * b.powi(-(l as i32) - 1);
    Ok((quad - closed).abs())
}

/// Adaptive Simpson quadrature on [a, b] with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 60)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
