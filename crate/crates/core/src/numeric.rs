//! Small numerical helpers shared by the solvers.

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite
/// sign. Returns the final bracket `(lo, hi)` oriented so that `f(lo)` has
/// the sign of `f(a)`.
pub(crate) fn brent<F, E>(
    mut f: F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let sign_a = fa.signum();
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return Ok((a, a));
    }
    if fb == 0.0 {
        return Ok((b, b));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            break;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    // b is the best estimate; c brackets it from the other side
    if fb == 0.0 {
        Ok((b, b))
    } else if fb.signum() == sign_a {
        Ok((b, c))
    } else {
        Ok((c, b))
    }
}

/// Ordinary least squares for `y ≈ Σ_j β_j x_j` with two regressors and no
/// intercept.
pub(crate) fn least_squares_2(x1: &[f64], x2: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&a, &b), &v) in x1.iter().zip(x2).zip(y) {
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * v;
        s2y += b * v;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-300 || det.abs() < 1e-14 * s11 * s22 {
        return None;
    }
    Some(((s22 * s1y - s12 * s2y) / det, (s11 * s2y - s12 * s1y) / det))
}

/// Rounds to `digits` significant decimal digits.
pub(crate) fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let text = format!("{:.*e}", (digits - 1).max(0) as usize, x);
    text.parse().unwrap_or(x)
}

/// Nine significant digits in the shortest decimal form.
pub(crate) fn fmt_sig(x: f64) -> String {
    let r = round_sig(x, 9);
    if r == 0.0 || (1e-4..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}
