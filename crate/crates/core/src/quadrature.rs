//! One-dimensional quadrature: Gauss-Legendre rules and adaptive
//! Gauss-Kronrod integration.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss-Kronrod pair used on each panel of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KronrodRule {
    /// 7-point Gauss embedded in a 15-point Kronrod rule.
    Gk15,
    /// 10-point Gauss embedded in a 21-point Kronrod rule.
    Gk21,
}

#[allow(clippy::excessive_precision)]
const XGK15: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK15: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG7: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];
#[allow(clippy::excessive_precision)]
const XGK21: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK21: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208685080656,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
#[allow(clippy::excessive_precision)]
const WG10: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

impl KronrodRule {
    /// Returns (Kronrod estimate, |Kronrod - Gauss|) on [a, b].
    pub fn apply<F: FnMut(f64) -> f64>(self, f: &mut F, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let (xgk, wgk, wg): (&[f64], &[f64], &[f64]) = match self {
            KronrodRule::Gk15 => (&XGK15, &WGK15, &WG7),
            KronrodRule::Gk21 => (&XGK21, &WGK21, &WG10),
        };
        let last = xgk.len() - 1;
        let fc = f(c);
        let mut rk = wgk[last] * fc;
        // the 7-point Gauss rule contains the centre, the 10-point rule does not
        let mut rg = if wg.len() * 2 == xgk.len() { wg[wg.len() - 1] * fc } else { 0.0 };
        for j in 0..last {
            let dx = h * xgk[j];
            let s = f(c - dx) + f(c + dx);
            rk += wgk[j] * s;
            if j % 2 == 1 {
                rg += wg[j / 2] * s;
            }
        }
        (rk * h, ((rk - rg) * h).abs())
    }
}

/// Settings for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveSpec {
    pub rule: KronrodRule,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of panel bisections before giving up.
    pub max_subdivisions: usize,
}

impl Default for AdaptiveSpec {
    fn default() -> Self {
        AdaptiveSpec { rule: KronrodRule::Gk21, abs_tol: 1e-12, rel_tol: 1e-12, max_subdivisions: 4000 }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive Gauss-Kronrod integration of `f` over [a, b],
/// starting from `initial_panels` equal panels.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    spec: &AdaptiveSpec,
) -> Integral {
    let panels = initial_panels.max(1);
    let h = (b - a) / panels as f64;
    let mut work: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            let (v, e) = spec.rule.apply(&mut f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    let mut splits = 0;
    loop {
        let total: f64 = work.iter().map(|p| p.2).sum();
        let err: f64 = work.iter().map(|p| p.3).sum();
        if err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Integral { value: total, error: err, converged: true };
        }
        if splits >= spec.max_subdivisions {
            return Integral { value: total, error: err, converged: false };
        }
        let (worst, _) = work
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = work.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = spec.rule.apply(&mut f, lo, mid);
        let (v2, e2) = spec.rule.apply(&mut f, mid, hi);
        work.push((lo, mid, v1, e1));
        work.push((mid, hi, v2, e2));
        splits += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1usize, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for p in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-13, "n={n} p={p}");
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn kronrod_rules_exact_for_polynomials() {
        for (rule, deg) in [(KronrodRule::Gk15, 22), (KronrodRule::Gk21, 30)] {
            for p in 0..=deg {
                let (v, _) = rule.apply(&mut |x: f64| x.powi(p), 0.0, 1.0);
                assert!((v - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "{rule:?} p={p}");
            }
        }
    }

    #[test]
    fn adaptive_handles_oscillation() {
        let spec = AdaptiveSpec::default();
        let r = integrate_adaptive(|x| (40.0 * x).cos() * x, 0.0, 3.0, 1, &spec);
        let exact = (120.0f64.cos() - 1.0) / 1600.0 + 3.0 * 120.0f64.sin() / 40.0;
        assert!(r.converged);
        assert!((r.value - exact).abs() < 1e-11);
    }
}
