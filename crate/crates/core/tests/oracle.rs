use bspc::conserve::{build_constraints, ConstraintKind};
use bspc::grid::{State, VelocityGrid};
use bspc::kernel::{Angular, KernelSpec};
use bspc::oracle::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn grid(d: usize, n: usize, l: f64) -> Arc<VelocityGrid> {
    Arc::new(VelocityGrid::new(d, n, l).unwrap())
}

fn bump(g: &Arc<VelocityGrid>) -> State {
    State::from_fn(g.clone(), |v| {
        let a = (-((v[0] - 0.8).powi(2) + v[1] * v[1]) / 0.5).exp();
        let b = 0.6 * (-((v[0] + 0.8).powi(2) + (v[1] - 0.3).powi(2)) / 0.4).exp();
        a + b
    })
    .unwrap()
}

#[test]
fn sphere_rule_integrates_low_order_polynomials() {
    let r3 = SphereRule::product(3, 6).unwrap();
    let sum = |f: &dyn Fn(&[f64; 3]) -> f64, r: &SphereRule| r.nodes().iter().zip(r.weights()).map(|(s, w)| w * f(s)).sum::<f64>();
    assert!((sum(&|_| 1.0, &r3) - 4.0 * PI).abs() < 1e-12);
    assert!((sum(&|s| s[2] * s[2], &r3) - 4.0 * PI / 3.0).abs() < 1e-12);
    assert!((sum(&|s| s[0] * s[0] * s[1] * s[1], &r3) - 4.0 * PI / 15.0).abs() < 1e-12);
    assert!(sum(&|s| s[0] * s[1] * s[2], &r3).abs() < 1e-12);
    let r2 = SphereRule::product(2, 6).unwrap();
    assert!((sum(&|_| 1.0, &r2) - 2.0 * PI).abs() < 1e-12);
    assert!((sum(&|s| s[0].powi(4), &r2) - 0.75 * PI).abs() < 1e-12);
    assert!(SphereRule::product(3, 0).is_err());
    assert!(SphereRule::product(4, 3).is_err());
}

#[test]
fn zero_field_has_zero_collisions() {
    let g = grid(2, 8, 2.0);
    let spec = KernelSpec::new(2, 1.0, 1.0, Angular::Isotropic).unwrap();
    let out = collision_direct(&State::zeros(g.clone()), &spec, &QuadratureSpec::grid(2, 4).unwrap()).unwrap();
    assert_eq!(out.nodes.len(), g.len());
    assert!(out.values.iter().all(|x| *x == 0.0));
}

#[test]
fn direct_operator_nearly_conserves_mass() {
    let spec = KernelSpec::new(2, 1.0, 1.0, Angular::Isotropic).unwrap();
    // the multilinear interpolant makes the strong form conservative only up to O(dv^2)
    let defect = |n: usize| {
        let g = grid(2, n, 6.0);
        let s = State::from_fn(g.clone(), |v| (-((v[0] - 1.0).powi(2) + v[1] * v[1]) / 1.5).exp() + (-((v[0] + 1.0).powi(2) + v[1] * v[1]) / 1.5).exp()).unwrap();
        let q = collision_direct(&s, &spec, &QuadratureSpec::grid(2, 16).unwrap()).unwrap().to_dense(g.len());
        q.iter().sum::<f64>().abs() / q.iter().map(|x| x.abs()).sum::<f64>()
    };
    let (a, b) = (defect(16), defect(32));
    assert!(a < 0.15 && b < a / 3.0, "{a} {b}");
}

#[test]
fn stride_subsamples_output() {
    let g = grid(2, 8, 2.0);
    let spec = KernelSpec::new(2, 1.0, 1.0, Angular::Isotropic).unwrap();
    let mut q = QuadratureSpec::grid(2, 4).unwrap();
    let full = collision_direct(&bump(&g), &spec, &q).unwrap();
    q.stride = 4;
    let coarse = collision_direct(&bump(&g), &spec, &q).unwrap();
    assert_eq!(coarse.nodes.len(), 4);
    for (j, v) in coarse.nodes.iter().zip(&coarse.values) {
        assert_eq!(*v, full.values[*j]);
    }
    q.stride = 0;
    assert!(collision_direct(&bump(&g), &spec, &q).is_err());
}

#[test]
fn inelastic_direct_operator_dissipates_energy() {
    let g = grid(2, 12, 3.5);
    let spec = KernelSpec::new(2, 1.0, 0.8, Angular::Isotropic).unwrap();
    let q = collision_direct(&bump(&g), &spec, &QuadratureSpec::grid(2, 12).unwrap()).unwrap().to_dense(g.len());
    let w = g.cell_volume();
    let mass: f64 = q.iter().sum::<f64>() * w;
    let energy: f64 = q.iter().enumerate().map(|(j, x)| x * (g.node(j)[0].powi(2) + g.node(j)[1].powi(2))).sum::<f64>() * w;
    let scale: f64 = q.iter().map(|x| x.abs()).sum::<f64>() * w;
    // deposits landing outside the box are dropped; the field there is below 1e-7
    assert!(mass.abs() < 1e-6 * scale, "{mass}");
    assert!(energy < -1e-3 * scale, "{energy}");
}

#[test]
fn single_gaussian_is_an_equilibrium_of_the_mixture_oracle() {
    let mix = GaussianMixture { weights: vec![1.0], centers: vec![[0.3, 0.0, -0.2]], temperature: 0.9 };
    for lambda in [0.0, 0.5, 1.0] {
        for v in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.7], [2.5, 0.0, 0.0]] {
            let q = mix.collision(&v, lambda).unwrap();
            assert!(q.abs() < 1e-10, "lambda={lambda} v={v:?}: {q}");
        }
    }
}

#[test]
fn mixture_oracle_agrees_with_polar_quadrature() {
    let mix = GaussianMixture { weights: vec![0.5, 0.5], centers: vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], temperature: 0.6 };
    let g = grid(3, 8, 4.0);
    let spec = KernelSpec::new(3, 1.0, 1.0, Angular::Isotropic).unwrap();
    let mut q = QuadratureSpec::polar(3, 12, 7.0, 4, 8).unwrap();
    q.stride = 4;
    let field = Truncated { f: |v: &[f64]| mix.eval(v), half_width: 20.0 };
    let direct = collision_direct_field(&field, &g, None, &spec, &q).unwrap();
    let scale = direct.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (j, value) in direct.nodes.iter().zip(&direct.values) {
        let exact = mix.collision(&g.node(*j), 1.0).unwrap();
        assert!((value - exact).abs() < 1e-3 * scale, "node {j}: {value} vs {exact}");
    }
}

#[test]
fn dense_projection_is_feasible() {
    let g = grid(2, 16, 3.0);
    let cs = build_constraints(g.clone(), ConstraintKind::Elastic).unwrap();
    let qu: Vec<f64> = (0..g.len()).map(|j| ((j * 37 % 11) as f64 - 5.0) * 0.1).collect();
    let x = nearest_conservative_dense(&qu, cs.matrix()).unwrap();
    assert!(cs.apply(&x).unwrap().iter().all(|r| r.abs() < 1e-12));
    let fast = cs.conserve_discrete(&qu).unwrap();
    assert!(x.iter().zip(&fast).all(|(a, b)| (a - b).abs() < 1e-10));
    assert!(nearest_conservative_dense(&qu[1..], cs.matrix()).is_err());
}

#[test]
fn pointwise_evaluation_matches_node_output() {
    let g = grid(2, 8, 2.5);
    let spec = KernelSpec::new(2, 1.0, 1.0, Angular::Isotropic).unwrap();
    let q = QuadratureSpec::polar(2, 8, 4.0, 2, 6).unwrap();
    let s = bump(&g);
    let nodes = collision_direct(&s, &spec, &q).unwrap();
    let points: Vec<[f64; 3]> = [3, 17, 40].iter().map(|&j| g.node(j)).collect();
    let field = Multilinear::new(&s);
    let at = collision_direct_points(&field, &g, &points, &spec, &q).unwrap();
    for (v, j) in at.iter().zip([3, 17, 40]) {
        assert_eq!(*v, nodes.values[j]);
    }
    let inelastic = KernelSpec::new(2, 1.0, 0.8, Angular::Isotropic).unwrap();
    assert!(collision_direct_points(&field, &g, &points, &inelastic, &q).is_err());
}
