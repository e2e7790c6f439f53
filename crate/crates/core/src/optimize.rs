//! Scalar maximization by golden-section search.

/// `(√5 − 1) / 2`
const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenMax {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Maximizes a unimodal `f` on `[lo, hi]` until the bracket is narrower than `tol`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> GoldenMax {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evaluations = 2;

    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evaluations += 1;
    }

    let (x, value) = if fc >= fd { (c, fc) } else { (d, fd) };
    GoldenMax { x, value, evaluations }
}
