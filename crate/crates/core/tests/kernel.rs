use bspc::grid::VelocityGrid;
use bspc::kernel::*;
use bspc::quadrature::gauss_legendre;
use proptest::prelude::*;
use std::f64::consts::PI;

fn iso(d: usize, lambda: f64, beta: f64) -> KernelSpec {
    KernelSpec::new(d, lambda, beta, Angular::Isotropic).unwrap()
}

fn cfg(storage: TableStorage) -> TableConfig {
    TableConfig { storage, ..TableConfig::default() }
}

/// Every (m, k) pair covered by a table.
fn entries(t: &WeightTable) -> Vec<([i64; 3], [i64; 3], f64)> {
    let l = t.layout();
    let mut out = Vec::new();
    for o in 0..l.out_len() {
        let k = l.out_mode(o);
        for f in 0..l.fine_len() {
            let m = l.fine_mode(f);
            if let Some(v) = t.value(m, k) {
                out.push((m, k, v));
            }
        }
    }
    out
}

#[test]
fn constant_cross_sections_normalise_to_inverse_sphere_area() {
    let b3 = normalize_angular(3, &[1.0; 9]).unwrap();
    assert!(b3.values().iter().all(|v| (v - 1.0 / (4.0 * PI)).abs() < 1e-14));
    let b2 = normalize_angular(2, &[1.0; 9]).unwrap();
    assert!(b2.values().iter().all(|v| (v - 1.0 / (2.0 * PI)).abs() < 1e-14));
    let doubled: Vec<f64> = b3.values().iter().map(|v| 2.0 * v).collect();
    let again = normalize_angular(3, &doubled).unwrap();
    for (a, b) in again.values().iter().zip(b3.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn weight_g_trivial_zeros() {
    let spec = iso(3, 0.5, 1.0);
    assert_eq!(weight_g(&[1.0, 2.0, 0.5], &[0.0; 3], &spec).norm(), 0.0);
    assert_eq!(weight_g(&[0.0; 3], &[1.0, -1.0, 2.0], &spec).norm(), 0.0);
}

#[test]
fn weight_g_hat_trivial_zeros() {
    let q = RadialQuadrature::default();
    let spec = iso(3, 1.0, 1.0);
    assert_eq!(weight_g_hat(&[0.4, 0.1, 0.0], &[0.0; 3], 4.0, &spec, &q).unwrap(), 0.0);
    let maxwell = iso(3, 0.0, 1.0);
    // zeta = 0 is exact; the limit xi = zeta -> 0 of the integrand vanishes too
    assert_eq!(weight_g_hat(&[0.0; 3], &[0.0; 3], 4.0, &maxwell, &q).unwrap(), 0.0);
    let tiny = weight_g_hat(&[0.0; 3], &[1e-9, 0.0, 0.0], 4.0, &maxwell, &q).unwrap();
    assert!(tiny.abs() < 1e-12, "{tiny}");
}

#[test]
fn weight_g_hat_matches_fixed_rule_oracle() {
    // 4 pi int_0^{2 sqrt(3) L} r^3 (sinc^2(r pi / 2L) - 1) dr, 200-point Gauss-Legendre per panel
    let l = 3.0;
    let umax = 2.0 * 3f64.sqrt() * l;
    let a = PI / (2.0 * l);
    let (x, w) = gauss_legendre(200);
    let panels = 8;
    let h = umax / panels as f64;
    let mut oracle = 0.0;
    for p in 0..panels {
        for (xi, wi) in x.iter().zip(&w) {
            let r = (p as f64 + 0.5 * (xi + 1.0)) * h;
            let s = (a * r).sin() / (a * r);
            oracle += 0.5 * h * wi * r.powi(3) * (s * s - 1.0);
        }
    }
    oracle *= 4.0 * PI;
    let got = weight_g_hat(&[0.0; 3], &[PI / l, 0.0, 0.0], umax, &iso(3, 1.0, 1.0), &RadialQuadrature::default()).unwrap();
    assert!((got - oracle).abs() <= 1e-8 * oracle.abs(), "{got} vs {oracle}");
}

#[test]
fn weight_g_hat_matches_sphere_quadrature_of_weight_g() {
    // Ghat(xi, zeta) = int_{|u| < R} G(u, zeta) e^{-i xi.u} du over a polar rule
    let spec = iso(3, 1.0, 1.0);
    let umax = 3.0;
    let xi = [0.7, -0.2, 0.4];
    let zeta = [0.9, 0.3, -0.5];
    let (r, wr) = gauss_legendre(60);
    let (c, wc) = gauss_legendre(60);
    let nphi = 80;
    let mut acc = num_complex::Complex64::default();
    for (ri, wri) in r.iter().zip(&wr) {
        let rad = 0.5 * umax * (ri + 1.0);
        for (ci, wci) in c.iter().zip(&wc) {
            let s = (1.0 - ci * ci).sqrt();
            for j in 0..nphi {
                let phi = 2.0 * PI * j as f64 / nphi as f64;
                let u = [rad * s * phi.cos(), rad * s * phi.sin(), rad * ci];
                let w = 0.5 * umax * wri * rad * rad * wci * 2.0 * PI / nphi as f64;
                let ph = -(xi[0] * u[0] + xi[1] * u[1] + xi[2] * u[2]);
                acc += weight_g(&u, &zeta, &spec) * num_complex::Complex64::from_polar(w, ph);
            }
        }
    }
    let got = weight_g_hat(&xi, &zeta, umax, &spec, &RadialQuadrature::default()).unwrap();
    assert!(acc.im.abs() < 1e-10 * acc.re.abs().max(1.0));
    assert!((got - acc.re).abs() < 1e-9 * acc.re.abs(), "{got} vs {}", acc.re);
}

#[test]
fn table_rows_at_zero_output_mode_vanish() {
    let g = VelocityGrid::new(2, 8, 3.0).unwrap();
    let t = build_weight_table(&g, &iso(2, 1.0, 1.0), &cfg(TableStorage::Reduced)).unwrap();
    for (_, k, v) in entries(&t) {
        if k == [0, 0, 0] {
            assert_eq!(v, 0.0);
        }
    }
}

fn assert_tables_agree(g: &VelocityGrid, spec: &KernelSpec, tol: f64) {
    let full = build_weight_table(g, spec, &cfg(TableStorage::Full)).unwrap();
    let reduced = build_weight_table(g, spec, &cfg(TableStorage::Reduced)).unwrap();
    let scale = entries(&full).iter().fold(0.0f64, |m, e| m.max(e.2.abs()));
    for (m, k, v) in entries(&full) {
        let r = reduced.value(m, k).expect("reduced table covers every pair");
        assert!((v - r).abs() <= tol * scale, "m={m:?} k={k:?}: {v} vs {r}");
    }
}

#[test]
fn full_and_reduced_tables_agree_isotropic_3d() {
    let g = VelocityGrid::new(3, 8, 4.0).unwrap();
    assert_tables_agree(&g, &iso(3, 1.0, 1.0), 1e-12);
}

#[test]
fn full_and_reduced_tables_agree_inelastic_and_anisotropic() {
    let g = VelocityGrid::new(2, 8, 3.0).unwrap();
    assert_tables_agree(&g, &iso(2, 0.5, 0.8), 1e-12);
    let b = normalize_angular(2, &[1.0, 1.5, 2.0, 1.0, 0.5]).unwrap();
    let spec = KernelSpec::new(2, 1.0, 1.0, Angular::Tabulated(b)).unwrap();
    assert_tables_agree(&g, &spec, 1e-12);
}

#[test]
fn refined_quadrature_changes_entries_below_threshold() {
    let g = VelocityGrid::new(3, 8, 4.0).unwrap();
    let spec = iso(3, 1.0, 1.0);
    let base = build_weight_table(&g, &spec, &cfg(TableStorage::Reduced)).unwrap();
    let mut fine_cfg = cfg(TableStorage::Reduced);
    fine_cfg.quadrature = fine_cfg.quadrature.refined();
    let fine = build_weight_table(&g, &spec, &fine_cfg).unwrap();
    let scale = entries(&base).iter().fold(0.0f64, |m, e| m.max(e.2.abs()));
    for (m, k, v) in entries(&base) {
        assert!((v - fine.value(m, k).unwrap()).abs() < 1e-9 * scale);
    }
}

#[test]
fn entries_respect_trivial_bound_and_symmetries() {
    let g = VelocityGrid::new(3, 8, 4.0).unwrap();
    let spec = iso(3, 1.0, 1.0);
    // full storage: every entry is an independent quadrature
    let t = build_weight_table(&g, &spec, &cfg(TableStorage::Full)).unwrap();
    let bound = 2.0 * sphere_area(3) * t.umax().powf(1.0 + 3.0) / (1.0 + 3.0);
    for (m, k, v) in entries(&t) {
        assert!(v.abs() <= bound);
        let neg = |x: [i64; 3]| [-x[0], -x[1], -x[2]];
        // Ghat(-xi, -zeta) = conj Ghat(xi, zeta), and the value is real
        assert!((t.value(neg(m), neg(k)).unwrap() - v).abs() <= 1e-13 * bound);
        // rotations that map grid modes onto grid modes
        let perm = |x: [i64; 3]| [x[2], x[0], x[1]];
        let flip = |x: [i64; 3]| [-x[0], x[1], x[2]];
        assert!((t.value(perm(m), perm(k)).unwrap() - v).abs() <= 1e-13 * bound);
        assert!((t.value(flip(m), flip(k)).unwrap() - v).abs() <= 1e-13 * bound);
    }
}

#[test]
fn cache_round_trip_and_hit() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TableCache::new(dir.path());
    let g = VelocityGrid::new(2, 8, 3.0).unwrap();
    let spec = iso(2, 1.0, 1.0);
    let c = cfg(TableStorage::Full);
    let (t1, s1) = cache.load_or_build(&g, &spec, &c).unwrap();
    let (t2, s2) = cache.load_or_build(&g, &spec, &c).unwrap();
    assert_eq!((s1, s2), (CacheStatus::Miss, CacheStatus::Hit));
    for (m, k, v) in entries(&t1) {
        assert_eq!(t2.value(m, k), Some(v));
    }
    // a different kernel maps to a different file
    let other = iso(2, 0.5, 1.0);
    let (_, s3) = cache.load_or_build(&g, &other, &c).unwrap();
    assert_eq!(s3, CacheStatus::Miss);
    assert_eq!(cache.clear().unwrap(), 2);
    assert_eq!(cache.clear().unwrap(), 0);
}

#[test]
fn corrupted_cache_file_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TableCache::new(dir.path());
    let g = VelocityGrid::new(2, 8, 3.0).unwrap();
    let spec = iso(2, 0.0, 1.0);
    let c = cfg(TableStorage::Reduced);
    let (t, _) = cache.load_or_build(&g, &spec, &c).unwrap();
    std::fs::write(cache.path_for(t.key()), b"garbage").unwrap();
    let (_, status) = cache.load_or_build(&g, &spec, &c).unwrap();
    assert_eq!(status, CacheStatus::Miss);
}

#[test]
fn full_storage_respects_memory_budget() {
    let g = VelocityGrid::new(3, 8, 3.0).unwrap();
    let c = TableConfig { storage: TableStorage::Full, memory_budget: 1 << 10, ..TableConfig::default() };
    assert!(matches!(build_weight_table(&g, &iso(3, 1.0, 1.0), &c), Err(bspc::Error::MemoryBudget { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn isotropic_closed_form_matches_sphere_rule(
        u in prop::array::uniform3(-5.7f64..5.7),
        z in prop::array::uniform3(-5.7f64..5.7),
        lambda in 0.0f64..=1.0,
    ) {
        let spec = iso(3, lambda, 1.0);
        let exact = weight_g(&u, &z, &spec);
        let quad = weight_g_sphere(&u, &z, &spec, 96, 96);
        prop_assert!((exact - quad).norm() <= 1e-10 * (1.0 + exact.norm()), "{exact} vs {quad}");
    }

    #[test]
    fn isotropic_2d_closed_form_matches_circle_rule(
        u in prop::array::uniform2(-7.0f64..7.0),
        z in prop::array::uniform2(-7.0f64..7.0),
        beta in 0.55f64..=1.0,
    ) {
        let spec = iso(2, 1.0, beta);
        let exact = weight_g(&u, &z, &spec);
        let quad = weight_g_sphere(&u, &z, &spec, 8, 256);
        prop_assert!((exact - quad).norm() <= 1e-10 * (1.0 + exact.norm()), "{exact} vs {quad}");
    }
}
