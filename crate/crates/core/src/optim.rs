//! One-dimensional search: golden-section maximization and bisection.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy)]
pub struct Maximum {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Maximize `f` on `[lo, hi]` by golden-section search until the bracket is
/// narrower than `tol`. Returns the best point evaluated.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Maximum {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evaluations = 2;
    while b - a > tol {
        // ties move toward the smaller abscissa
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
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    Maximum { x, fx, evaluations }
}

/// Root of `g` in `[a, b]` given `g(a)` and `g(b)` of opposite sign, to an
/// absolute tolerance on x.
pub fn bisect<F: FnMut(f64) -> f64>(mut g: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut ga = g(a);
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
