//! Oracles shared by the integration tests. Nothing here calls into the
//! library's numerical code.

#![allow(dead_code)]

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Composite Simpson on a regular grid with `n` (even) intervals.
pub fn simpson_grid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Mass of Beta(a, b) on `[lo, hi]`, by integrating the kernel and
/// normalizing by its integral over the unit interval. The interval is split
/// at the mode so the peak is never straddled.
pub fn beta_mass(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let mode = if a + b > 2.0 { ((a - 1.0) / (a + b - 2.0)).clamp(0.0, 1.0) } else { 0.5 };
    let log_at = |x: f64| -> f64 {
        let lx = if x <= 0.0 {
            if a == 1.0 { 0.0 } else { return f64::NEG_INFINITY }
        } else {
            (a - 1.0) * x.ln()
        };
        let l1x = if x >= 1.0 {
            if b == 1.0 { 0.0 } else { return f64::NEG_INFINITY }
        } else {
            (b - 1.0) * (1.0 - x).ln()
        };
        lx + l1x
    };
    let log_peak = log_at(mode);
    let kernel = |x: f64| (log_at(x) - log_peak).exp();
    let integrate = |l: f64, h: f64| -> f64 {
        if h <= l {
            return 0.0;
        }
        if l < mode && mode < h {
            simpson(&kernel, l, mode, 1e-15) + simpson(&kernel, mode, h, 1e-15)
        } else {
            simpson(&kernel, l, h, 1e-15)
        }
    };
    integrate(lo, hi) / integrate(0.0, 1.0)
}

/// Root of a non-decreasing function on `[lo, hi]` by plain bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
