use bspc::grid::*;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn grid(d: usize, n: usize, l: f64) -> Arc<VelocityGrid> {
    Arc::new(VelocityGrid::new(d, n, l).unwrap())
}

fn gaussian(v: &[f64], t: f64) -> f64 {
    (-v.iter().map(|x| x * x).sum::<f64>() / (2.0 * t)).exp() / (2.0 * PI * t).powf(v.len() as f64 / 2.0)
}

/// Random coefficients with Hermitian symmetry and a zero Nyquist band.
fn band_limited(g: &VelocityGrid, seed: &[f64]) -> Vec<f64> {
    let mut c = vec![Complex64::default(); g.len()];
    let half = g.points() as i64 / 2;
    for flat in 0..g.len() {
        let k = g.mode(flat);
        if k[..g.dim()].iter().any(|&x| x == -half) {
            continue;
        }
        c[flat] = Complex64::new(seed[flat % seed.len()], seed[(flat * 7 + 3) % seed.len()]);
    }
    for flat in 0..g.len() {
        let k = g.mode(flat);
        let neg: Vec<i64> = k[..g.dim()].iter().map(|x| -x).collect();
        if let Some(j) = g.mode_index(&neg) {
            if j > flat {
                c[j] = c[flat].conj();
            } else if j == flat {
                c[flat].im = 0.0;
            }
        }
    }
    g.inverse_real(&c).unwrap()
}

#[test]
fn maxwellian_transform_matches_analytic_gaussian() {
    let g = grid(3, 32, 7.0);
    let t0 = 0.8;
    let s = State::from_fn(g.clone(), |v| gaussian(v, t0)).unwrap();
    let c = s.coefficients().unwrap();
    let dz = g.mode_spacing();
    let mut worst: f64 = 0.0;
    for (flat, x) in c.iter().enumerate() {
        let k = g.mode(flat);
        if k.iter().any(|m| m.abs() > 4) {
            continue;
        }
        let z2: f64 = k.iter().map(|m| (*m as f64 * dz).powi(2)).sum();
        let exact = (2.0 * PI).powf(-1.5) * (-t0 * z2 / 2.0).exp();
        worst = worst.max((x - Complex64::new(exact, 0.0)).norm());
    }
    // tail mass outside (-7, 7)^3 at T = 0.8 and midpoint aliasing are both below 1e-9
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn parseval_with_mode_measure() {
    for d in [2, 3] {
        let g = grid(d, 8, 2.5);
        let vals: Vec<f64> = (0..g.len()).map(|j| ((j * 131 % 17) as f64 - 8.0) / 5.0).collect();
        let s = State::new(g.clone(), vals, 0.0).unwrap();
        let lhs: f64 = s.coefficients().unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() * g.mode_spacing().powi(d as i32);
        let rhs = s.l2_norm().powi(2);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs, "{lhs} vs {rhs}");
    }
}

#[test]
fn band_limited_projection_is_identity() {
    let g = grid(2, 16, 3.0);
    let s = State::from_fn(g.clone(), |v| (PI * v[0] / 3.0).cos() * (2.0 * PI * v[1] / 3.0).sin() + 0.5).unwrap();
    let p = project(&s, 3).unwrap();
    for (a, b) in s.values().iter().zip(p.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn projection_error_decays_faster_than_second_order() {
    // for |k|_inf > N some |zeta_a| >= pi N / L, hence
    // ||g - P_N g|| <= (L / (pi N))^2 (sum_a ||d_a^2 g||^2)^{1/2}
    for d in [2, 3] {
        let l = 6.0;
        let g = grid(d, 32, l);
        let s = State::from_fn(g.clone(), |v| gaussian(v, 1.0)).unwrap();
        let curvature: f64 = (0..d)
            .map(|a| {
                let mut b = vec![0; d];
                b[a] = 2;
                g.l2_norm(&derivative(&s, &b).unwrap()).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let err = |n: usize| {
            let p = project(&s, n).unwrap();
            let diff: Vec<f64> = s.values().iter().zip(p.values()).map(|(a, b)| a - b).collect();
            g.l2_norm(&diff)
        };
        for n in [2, 3, 4, 6] {
            let (e1, e2) = (err(n), err(2 * n));
            assert!(e1 <= (l / (PI * n as f64)).powi(2) * curvature, "d={d} N={n}");
            assert!(e1 / e2 >= 4.0, "d={d} N={n}: ratio {}", e1 / e2);
        }
    }
}

#[test]
fn single_mode_sobolev_norm() {
    let l = 2.0;
    let g = grid(2, 16, l);
    let s = State::from_fn(g.clone(), |v| (PI * v[0] / l).sin()).unwrap();
    let cos = State::from_fn(g.clone(), |v| (PI * v[0] / l).cos()).unwrap();
    let d1 = derivative(&s, &[1, 0]).unwrap();
    assert!((g.l2_norm(&d1) - PI / l * cos.l2_norm()).abs() < 1e-12);
}

#[test]
fn spectral_derivative_matches_finite_differences() {
    // smooth periodic-compatible field; centred differences converge at O(dv^2)
    let l = 3.0;
    let f = |v: &[f64]| (-2.0 * v.iter().map(|x| x * x).sum::<f64>()).exp();
    let mut errs = Vec::new();
    for n in [32, 64] {
        let g = grid(2, n, l);
        let s = State::from_fn(g.clone(), f).unwrap();
        let spec = derivative(&s, &[1, 0]).unwrap();
        let h = g.spacing();
        let fd: Vec<f64> = (0..g.len())
            .map(|j| {
                let v = g.node(j);
                (f(&[v[0] + h, v[1]]) - f(&[v[0] - h, v[1]])) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = spec.iter().zip(&fd).map(|(a, b)| a - b).collect();
        errs.push(g.l2_norm(&diff));
    }
    let order = (errs[0] / errs[1]).log2();
    assert!((order - 2.0).abs() < 0.2, "observed order {order}");
}

fn bisection_oracle(d: usize, t0: f64, mu: f64) -> f64 {
    // tail of <v>^2 mass of a centred Maxwellian outside (-L, L)^d, by
    // composite Simpson integration of the 1-D factors
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let n = 20000;
        let h = (b - a) / n as f64;
        (0..=n).map(|i| f(a + i as f64 * h) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>() * h / 3.0
    };
    let p = |x: f64| (-x * x / (2.0 * t0)).exp() / (2.0 * PI * t0).sqrt();
    let tail = |l: f64| {
        let inside0 = simpson(&p, -l, l);
        let inside2 = simpson(&|x| x * x * p(x), -l, l);
        // integral over the box of (1 + |v|^2) M
        let box_total = inside0.powi(d as i32) + d as f64 * inside2 * inside0.powi(d as i32 - 1);
        1.0 + d as f64 * t0 - box_total
    };
    let target = mu * (1.0 + d as f64 * t0);
    let (mut lo, mut hi) = (0.1, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn domain_matches_quadrature_oracle() {
    let l = choose_domain(3, 1.0, &[0.0; 3], 1.0, 1.0, 1e-6, 0.0).unwrap().half_width;
    let oracle = bisection_oracle(3, 1.0, 1e-6);
    assert!((l - oracle).abs() < 1e-6 * oracle, "{l} vs {oracle}");
}

#[test]
fn domain_scales_with_temperature() {
    // the target itself grows with T0, so the scaling is close to but not exactly sqrt(2)
    let l1 = choose_domain(3, 1.0, &[0.0; 3], 1.0, 1.0, 1e-6, 0.0).unwrap().half_width;
    let l2 = choose_domain(3, 1.0, &[0.0; 3], 2.0, 1.0, 1e-6, 0.0).unwrap().half_width;
    assert!((l2 / l1 - 2f64.sqrt()).abs() < 0.05, "{}", l2 / l1);
}

#[test]
fn domain_near_unit_tolerance_is_support_bound() {
    let c = choose_domain(2, 1.0, &[0.0; 2], 1.0, 1.0, 1.0 - 1e-12, 1.5).unwrap();
    assert_eq!(c.half_width, 1.5);
    assert!(c.support_limited);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transform_round_trip(seed in prop::collection::vec(-1.0f64..1.0, 16), d in 2usize..=3) {
        let g = grid(d, 8, 1.7);
        let vals = band_limited(&g, &seed);
        let back = g.inverse_real(&g.forward(&vals).unwrap()).unwrap();
        let scale = vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in vals.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn projection_is_idempotent_contraction(vals in prop::collection::vec(-1.0f64..1.0, 64), keep in 0usize..=4) {
        let g = grid(2, 8, 2.0);
        let s = State::new(g, vals, 0.0).unwrap();
        let p = project(&s, keep).unwrap();
        let pp = project(&p, keep).unwrap();
        prop_assert!(p.l2_norm() <= s.l2_norm() * (1.0 + 1e-13));
        for (a, b) in p.values().iter().zip(pp.values()) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_order_sobolev_is_l2(vals in prop::collection::vec(-2.0f64..2.0, 64)) {
        let g = grid(2, 8, 2.0);
        let s = State::new(g, vals, 0.0).unwrap();
        prop_assert_eq!(sobolev_norm(&s, &[0, 0], 0.0).unwrap(), s.l2_norm());
    }

    #[test]
    fn domain_monotone(mu1 in 1e-8f64..1e-2, mu2 in 1e-8f64..1e-2, t1 in 0.2f64..3.0, t2 in 0.2f64..3.0) {
        let (mu_lo, mu_hi) = if mu1 < mu2 { (mu1, mu2) } else { (mu2, mu1) };
        let (t_lo, t_hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let u = [0.3, -0.2, 0.1];
        let l = |mu: f64, t: f64| choose_domain(3, 1.0, &u, t, 1.0, mu, 0.0).unwrap().half_width;
        prop_assert!(l(mu_hi, t_lo) <= l(mu_lo, t_lo) * (1.0 + 1e-12));
        prop_assert!(l(mu_lo, t_lo) <= l(mu_lo, t_hi) * (1.0 + 1e-12));
    }
}
