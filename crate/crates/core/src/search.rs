//! One-dimensional minimization: uniform grid scan and golden-section search.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Evaluates `f` on `lo, lo + step, ...` plus `hi`; returns the best point.
pub fn grid_scan<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    assert!(
        step > 0.0 && hi >= lo,
        "grid_scan needs step > 0 and hi >= lo"
    );
    let n = ((hi - lo) / step).floor() as usize;
    let mut best = (hi, f(hi));
    for k in 0..=n {
        let x = (lo + step * k as f64).min(hi);
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Golden-section search for a minimum of a unimodal `f` on `[lo, hi]`,
/// stopping once the bracket is narrower than `tol`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}
