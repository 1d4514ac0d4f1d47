//! Special functions used by the collision weights.

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Bessel function of the first kind of integer order.
pub fn bessel_j(m: i32, x: f64) -> f64 {
    libm::jn(m, x)
}

/// Spherical Bessel functions j_0..=j_lmax at `x`, written into `out`.
///
/// Upward recurrence when it is stable (x > lmax), Miller's downward
/// recurrence normalised by j_0 otherwise.
pub fn spherical_bessel_j_all(x: f64, out: &mut [f64]) {
    let lmax = out.len().saturating_sub(1);
    if out.is_empty() {
        return;
    }
    let ax = x.abs();
    if ax == 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    if ax < 1e-6 {
        // leading series term x^l / (2l+1)!!
        let mut term = 1.0;
        for (l, o) in out.iter_mut().enumerate() {
            if l > 0 {
                term *= x / (2 * l + 1) as f64;
            }
            *o = term * (1.0 - x * x / (2.0 * (2 * l + 3) as f64));
        }
        return;
    }
    if ax > lmax as f64 {
        out[0] = sinc(x);
        if lmax >= 1 {
            out[1] = (x.sin() / x - x.cos()) / x;
        }
        for l in 1..lmax {
            out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        }
        return;
    }
    let start = lmax + 16 + (ax as usize) + ((40 * (lmax + 1)) as f64).sqrt() as usize;
    let mut next = 0.0;
    let mut cur = 1e-300;
    for l in (1..=start).rev() {
        let prev = (2 * l + 1) as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if l - 1 <= lmax {
            out[l - 1] = cur;
        }
        if cur.abs() > 1e200 {
            let s = 1e-200;
            cur *= s;
            next *= s;
            for o in out.iter_mut().skip(l - 1) {
                *o *= s;
            }
        }
    }
    let scale = sinc(x) / out[0];
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Spherical Bessel function j_l(x).
pub fn spherical_bessel_j(l: usize, x: f64) -> f64 {
    let mut buf = vec![0.0; l + 1];
    spherical_bessel_j_all(x, &mut buf);
    buf[l]
}

/// Legendre polynomials P_0..=P_lmax at `x`.
pub fn legendre_all(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for l in 1..out.len().saturating_sub(1) {
        out[l + 1] = ((2 * l + 1) as f64 * x * out[l] - l as f64 * out[l - 1]) / (l + 1) as f64;
    }
}

/// Chebyshev polynomials T_0..=T_mmax at `x`, i.e. cos(m acos x).
pub fn chebyshev_all(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for m in 1..out.len().saturating_sub(1) {
        out[m + 1] = 2.0 * x * out[m] - out[m - 1];
    }
}
