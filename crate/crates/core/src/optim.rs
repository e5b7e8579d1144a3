//! Small scalar search routines shared by several modules.

/// Golden-section search for a minimum of a unimodal `f` on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(c, fc), (d, fd), (x, fx)]
        .into_iter()
        .fold((x, fx), |best, p| if p.1 < best.1 { p } else { best })
}

/// Minimum of `f` over `[a, b]`: dense sampling followed by a golden-section
/// polish around the best sample. Endpoints are always candidates.
pub fn bounded_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, samples: usize) -> (f64, f64) {
    if a == b {
        return (a, f(a));
    }
    let n = samples.max(3);
    let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let (imin, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let lo = xs[imin.saturating_sub(1)];
    let hi = xs[(imin + 1).min(n - 1)];
    let polished = golden_min(&mut f, lo, hi, 1e-12 * (1.0 + b.abs()));
    if polished.1 < vals[imin] {
        polished
    } else {
        (xs[imin], vals[imin])
    }
}

/// Bisection on a sign change of `f` between `lo` and `hi` (`f(lo)` and
/// `f(hi)` of opposite sign). Stops when the bracket is narrower than `tol`
/// or `f` vanishes exactly. Returns the final bracket.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let mut flo = f(lo);
    for _ in 0..max_iter {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return (mid, mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, v) = golden_min(|x| (x - 0.3) * (x - 0.3) + 1.0, -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bounded_min_endpoint() {
        let (x, v) = bounded_min(|x| x, 0.25, 1.0, 64);
        assert_eq!(x, 0.25);
        assert_eq!(v, 0.25);
    }

    #[test]
    fn bisect_sqrt2() {
        let (lo, hi) = bisect(|x| x * x - 2.0, 1.0, 2.0, 1e-14, 200);
        assert!((0.5 * (lo + hi) - 2f64.sqrt()).abs() < 1e-13);
    }
}
