//! Acceptance checks, one line per criterion.
//!
//! `BSPC_ACCEPTANCE_ONLY=1,3` restricts the run to the listed criteria.
//! `BSPC_ACCEPTANCE_STRICT=1` turns any failure into a nonzero exit code;
//! by default failures are reported but the target exits successfully.

use bspc::cli::{parse_config, prepare, DomainSpec, RunConfig};
use bspc::collision::CollisionWorkspace;
use bspc::conserve::{build_constraints, ConstraintKind};
use bspc::diagnostics::{entropy, equilibrium_of, maxwellian, moments, negative_part_norm, tail_moment_bound_check};
use bspc::grid::{choose_domain, project, State, VelocityGrid};
use bspc::integrate::{run, IntegratorConfig};
use bspc::kernel::{Angular, KernelSpec, TableConfig};
use bspc::oracle::{collision_direct_field, collision_direct_points, nearest_conservative_dense, GaussianMixture, QuadratureSpec, Truncated, VelocityField};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

const MU: f64 = 1e-4;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id}: {} {detail} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    }
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next()).collect()
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn benchmark_config(cache: &Path, d: usize, n: usize, beta: f64) -> RunConfig {
    let text = format!(
        "[physics]\ndimension = {d}\nlambda = 1.0\nbeta = {beta}\n\
         [initial]\nkind = \"two-gaussian\"\nmass = 1.0\nseparation = 2.0\ntemperature = 0.6\n\
         [domain]\nhalf_width = \"auto\"\ntolerance = {MU}\npoints = {n}\n\
         [integrator]\nmethod = \"rk4\"\n\
         [table]\ncache = \"{}\"\n",
        cache.display()
    );
    parse_config(&text).unwrap()
}

/// 1 / (m0 <|v - w|>) for the Maxwellian with the invariants of `s`.
fn mean_free_time(s: &State) -> f64 {
    let m = moments(s, 0.0, &[]);
    let d = m.momentum.len() as f64;
    // mean relative speed of two Maxwellians at temperature T: 2 sqrt(T) <|z|> for a unit normal z
    let mean_norm = if d == 3.0 { (8.0 / PI).sqrt() } else { (PI / 2.0).sqrt() };
    1.0 / (m.mass * 2f64.sqrt() * m.temperature().sqrt() * mean_norm)
}

struct Record {
    t: f64,
    mass: f64,
    momentum: Vec<f64>,
    energy: f64,
    error: f64,
    negative: f64,
    entropy: f64,
}

struct Trajectory {
    records: Vec<Record>,
    half_width: f64,
    initial_norm: f64,
    thermal_speed: f64,
    steps: usize,
    wall: f64,
    aborted: bool,
    samples: Vec<State>,
}

fn run_benchmark(cfg: &RunConfig, t_end: f64, sample_every: usize) -> Trajectory {
    let initial = cfg.initial_state().unwrap();
    let grid = initial.grid().clone();
    let (ws, cs, _) = prepare(cfg, grid.clone(), &mut std::io::sink()).unwrap();
    let reference = equilibrium_of(&initial).unwrap();
    let ref_norm = reference.l2_norm();
    let mut records = Vec::new();
    let mut samples = Vec::new();
    let mut sink = |s: &State, step: usize| -> bspc::Result<()> {
        let m = moments(s, 0.0, &[]);
        let diff: Vec<f64> = s.values().iter().zip(reference.values()).map(|(a, b)| a - b).collect();
        records.push(Record {
            t: s.t,
            mass: m.mass,
            momentum: m.momentum,
            energy: m.energy,
            error: grid.l2_norm(&diff) / ref_norm,
            negative: negative_part_norm(s),
            entropy: entropy(s),
        });
        if sample_every > 0 && step % sample_every == 0 {
            samples.push(s.clone());
        }
        Ok(())
    };
    let icfg = IntegratorConfig { t_end, ..cfg.integrator() };
    let out = run(&initial, &icfg, &ws, &cs, 1, &mut [&mut sink]).unwrap();
    let m0 = moments(&initial, 0.0, &[]);
    Trajectory {
        records,
        half_width: grid.half_width(),
        initial_norm: initial.l2_norm(),
        thermal_speed: m0.temperature().sqrt(),
        steps: out.steps,
        wall: out.wall_time.as_secs_f64(),
        aborted: out.abort.is_some(),
        samples,
    }
}

/// Largest relative change of mass, each momentum component and (optionally) energy.
fn drift(tr: &Trajectory, with_energy: bool) -> f64 {
    let r0 = &tr.records[0];
    let p_scale = r0.mass * tr.thermal_speed;
    let mut worst: f64 = 0.0;
    for r in &tr.records {
        worst = worst.max((r.mass - r0.mass).abs() / r0.mass);
        for (a, b) in r.momentum.iter().zip(&r0.momentum) {
            worst = worst.max((a - b).abs() / p_scale);
        }
        if with_energy {
            worst = worst.max((r.energy - r0.energy).abs() / r0.energy);
        }
    }
    worst
}

fn criterion_1_5_6_8(rep: &mut Report, only: &dyn Fn(u32) -> bool, cache: &Path) {
    if ![1, 5, 6, 8].iter().any(|&c| only(c)) {
        return;
    }
    let started = Instant::now();
    let cfg = benchmark_config(cache, 3, 16, 1.0);
    let tau = mean_free_time(&cfg.initial_state().unwrap());
    let t_end = 5.0 * tau;
    let tr = run_benchmark(&cfg, t_end, 0);
    let last = tr.records.last().unwrap();
    let header = format!("(d=3 n=16 L={:.4} t_end={:.4}=5 mean free times, {} RK4 steps, {:.0} s)", tr.half_width, last.t, tr.steps, tr.wall);
    if only(1) {
        let dr = drift(&tr, true);
        rep.line(1, !tr.aborted && dr <= 1e-9, format!("max relative invariant drift {dr:.3e} <= 1e-9 {header}"), started);
    }
    let skip = tr.records.len() / 10;
    if only(5) {
        let rise = tr.records[skip..].windows(2).map(|w| w[1].error - w[0].error).fold(f64::NEG_INFINITY, f64::max);
        let pass = last.error <= 1e-2 && rise <= 1e-6;
        rep.line(5, pass, format!("||g-M0||/||M0|| at t_end = {:.3e} (<= 1e-2), largest increase after 10% = {rise:.2e} (<= 1e-6)", last.error), started);
    }
    if only(8) {
        let worst = tr.records[skip..]
            .windows(2)
            .map(|w| (w[1].entropy - w[0].entropy) / w[0].entropy.abs())
            .fold(f64::NEG_INFINITY, f64::max);
        rep.line(8, worst <= 1e-6, format!("largest relative entropy increase after 10% = {worst:.2e} (<= 1e-6); H: {:.6} -> {:.6}", tr.records[0].entropy, last.entropy), started);
    }
    if only(6) {
        let sup = tr.records.iter().map(|r| r.negative).fold(0.0, f64::max);
        let mut wide = cfg.clone();
        wide.domain = DomainSpec::Explicit(1.5 * tr.half_width);
        let tw = run_benchmark(&wide, t_end, 0);
        let sup_wide = tw.records.iter().map(|r| r.negative).fold(0.0, f64::max);
        let bound = 1e-3 * tr.initial_norm;
        let pass = sup <= bound && sup_wide < sup && !tw.aborted;
        rep.line(
            6,
            pass,
            format!("sup ||g-|| = {sup:.3e} (<= {bound:.3e}); at 1.5L = {:.4}: {sup_wide:.3e} (strictly smaller required)", 1.5 * tr.half_width),
            started,
        );
    }
}

fn criterion_2(rep: &mut Report) {
    let started = Instant::now();
    let mut rng = Lcg(2024);
    let mut worst_idem: f64 = 0.0;
    let mut worst_feas: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for n in [8, 16] {
        let g = Arc::new(VelocityGrid::new(3, n, 3.0).unwrap());
        let cs = build_constraints(g.clone(), ConstraintKind::Elastic).unwrap();
        let c = cs.matrix();
        for _ in 0..1000 {
            let x = rng.vec(g.len());
            let px = cs.conserve_discrete(&x).unwrap();
            let ppx = cs.conserve_discrete(&px).unwrap();
            worst_idem = px.iter().zip(&ppx).map(|(a, b)| (a - b).abs()).fold(worst_idem, f64::max);
            let res = cs.apply(&px).unwrap();
            for (r, value) in res.iter().enumerate() {
                // roundoff scale of the row sum
                let scale: f64 = (0..g.len()).map(|j| (c[(r, j)] * px[j]).abs()).sum();
                worst_feas = worst_feas.max(value.abs() / scale);
            }
        }
        for _ in 0..2 {
            let x = rng.vec(g.len());
            let dense = nearest_conservative_dense(&x, c).unwrap();
            worst_kkt = worst_kkt.max(rel_l2(&cs.conserve_discrete(&x).unwrap(), &dense));
        }
    }
    let pass = worst_idem <= 1e-12 && worst_feas <= 1e-12 && worst_kkt <= 1e-10;
    rep.line(
        2,
        pass,
        format!("1000 vectors at n=8,16 (d=3): idempotency {worst_idem:.2e}, relative C*Lambda(x) {worst_feas:.2e} (<= 1e-12); dense KKT up to M=4096 {worst_kkt:.2e} (<= 1e-10)"),
        started,
    );
}

fn workspace(g: &Arc<VelocityGrid>, lambda: f64, beta: f64) -> CollisionWorkspace {
    let spec = KernelSpec::new(g.dim(), lambda, beta, Angular::Isotropic).unwrap();
    CollisionWorkspace::build(g.clone(), spec, &TableConfig::default(), None).unwrap().0
}

struct Anisotropic {
    temps: [f64; 3],
    shift: [f64; 3],
}

impl VelocityField for Anisotropic {
    fn eval(&self, v: &[f64]) -> f64 {
        (0..3).map(|a| (-(v[a] + self.shift[a]).powi(2) / (2.0 * self.temps[a])).exp() / (2.0 * PI * self.temps[a]).sqrt()).product()
    }
}

fn criterion_3(rep: &mut Report) {
    let started = Instant::now();
    let mix = GaussianMixture { weights: vec![0.5, 0.5], centers: vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], temperature: 0.6 };
    let temps = [0.5, 0.8, 1.2];
    let aniso = Anisotropic { temps, shift: [0.0; 3] };
    let t_mean = temps.iter().sum::<f64>() / 3.0;
    let l_mix = choose_domain(3, 1.0, &[0.0; 3], 0.6 + 1.0 / 3.0, 1.0, MU, 0.0).unwrap().half_width;
    let l_aniso = choose_domain(3, 1.0, &[0.0; 3], t_mean, 1.0, MU, 0.0).unwrap().half_width;
    let polar = |order: usize| QuadratureSpec::polar(3, order, 10.0, 6, 8).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    for lambda in [0.0, 1.0] {
        // two Gaussians against the semi-analytic whole-space operator
        let mut err_mix = Vec::new();
        for n in [8, 10] {
            let g = Arc::new(VelocityGrid::new(3, n, l_mix).unwrap());
            let ws = workspace(&g, lambda, 1.0);
            let s = State::from_fn(g.clone(), |v| mix.eval(v)).unwrap();
            let exact: Vec<f64> = (0..g.len()).map(|j| mix.collision(&g.node(j), lambda).unwrap()).collect();
            err_mix.push(rel_l2(&ws.q_u(&s).unwrap(), &exact));
        }
        // anisotropic Gaussian against direct quadrature on one octant of
        // nodes (the field is even in every coordinate)
        let mut err_aniso = Vec::new();
        for (n, orders) in [(8, vec![8, 16]), (10, vec![16])] {
            let g = Arc::new(VelocityGrid::new(3, n, l_aniso).unwrap());
            let ws = workspace(&g, lambda, 1.0);
            let s = State::from_fn(g.clone(), |v| aniso.eval(v)).unwrap();
            let q = ws.q_u(&s).unwrap();
            let half = n / 2;
            let picked: Vec<usize> = (0..g.len()).filter(|&j| g.unflatten(j)[..3].iter().all(|&i| i >= half)).collect();
            let points: Vec<[f64; 3]> = picked.iter().map(|&j| g.node(j)).collect();
            let spectral: Vec<f64> = picked.iter().map(|&j| q[j]).collect();
            let spec = ws.spec().clone();
            let field = Truncated { f: |v: &[f64]| aniso.eval(v), half_width: 50.0 };
            for order in orders {
                let direct = collision_direct_points(&field, &g, &points, &spec, &polar(order)).unwrap();
                err_aniso.push((n, order, rel_l2(&spectral, &direct)));
            }
        }
        let calibrated = [err_mix[0], err_aniso[1].2];
        let threshold = calibrated.iter().all(|e| *e <= 1e-3);
        let decrease = err_mix[1] < err_mix[0] && err_aniso[2].2 < err_aniso[0].2;
        pass &= threshold && decrease;
        notes.push(format!(
            "lambda={lambda}: two-Gaussian n=8 {:.2e}, n=10 {:.2e}; anisotropic n=8/order 8 {:.2e}, n=8/order 16 {:.2e}, n=10/order 16 {:.2e}",
            err_mix[0], err_mix[1], err_aniso[0].2, err_aniso[1].2, err_aniso[2].2
        ));
    }
    rep.line(3, pass, format!("relative L2 at n=8 <= 1e-3 and decrease under refinement; {}", notes.join("; ")), started);
}

fn criterion_4(rep: &mut Report) {
    let started = Instant::now();
    let l = choose_domain(3, 1.0, &[0.0; 3], 1.0, 1.0, MU, 0.0).unwrap().half_width;
    let residual = |n: usize| {
        let g = Arc::new(VelocityGrid::new(3, n, l).unwrap());
        let ws = workspace(&g, 1.0, 1.0);
        let m = maxwellian(g.clone(), 1.0, &[0.0; 3], 1.0).unwrap();
        g.l2_norm(&ws.q_u(&m).unwrap())
    };
    let (r8, r16) = (residual(8), residual(16));
    let fine = Arc::new(VelocityGrid::new(3, 32, 6.0).unwrap());
    let gauss = maxwellian(fine.clone(), 1.0, &[0.0; 3], 1.0).unwrap();
    let err = |keep: usize| {
        let p = project(&gauss, keep).unwrap();
        let d: Vec<f64> = gauss.values().iter().zip(p.values()).map(|(a, b)| a - b).collect();
        fine.l2_norm(&d)
    };
    let ratios: Vec<f64> = [2, 3, 4, 6].iter().map(|&n| err(n) / err(2 * n)).collect();
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = r8 / r16 >= 4.0 && min_ratio >= 4.0;
    rep.line(
        4,
        pass,
        format!("||q_u(M)||: n=8 {r8:.3e}, n=16 {r16:.3e}, ratio {:.1} (>= 4); projection error ratios N->2N for N=2,3,4,6: {ratios:.1?} (>= 4)", r8 / r16),
        started,
    );
}

fn criterion_7(rep: &mut Report, cache: &Path) {
    let started = Instant::now();
    let cfg = benchmark_config(cache, 3, 12, 0.8);
    let tau = mean_free_time(&cfg.initial_state().unwrap());
    let tr = run_benchmark(&cfg, 5.0 * tau, 60);
    let dr = drift(&tr, false);
    let rise = tr.records.windows(2).map(|w| (w[1].energy - w[0].energy) / w[0].energy).fold(f64::NEG_INFINITY, f64::max);
    let spec = KernelSpec::new(3, 1.0, 0.8, Angular::Isotropic).unwrap();
    let q = QuadratureSpec::grid(3, 4).unwrap();
    let mut direct_energy = Vec::new();
    for s in &tr.samples {
        let g = s.grid();
        let out = collision_direct_field(&bspc::oracle::Multilinear::new(s), g, Some(s.values()), &spec, &q).unwrap();
        let e: f64 = out.to_dense(g.len()).iter().enumerate().map(|(j, x)| x * g.node(j).iter().map(|c| c * c).sum::<f64>()).sum::<f64>() * g.cell_volume();
        direct_energy.push(e);
    }
    let worst_direct = direct_energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last = tr.records.last().unwrap();
    let pass = !tr.aborted && dr <= 1e-9 && rise <= 0.0 && worst_direct <= 0.0;
    rep.line(
        7,
        pass,
        format!(
            "beta=0.8 d=3 n=12, {} steps to t={:.3}: mass/momentum drift {dr:.2e} (<= 1e-9), largest relative energy step {rise:.2e} (<= 0), energy {:.5} -> {:.5}; direct energy moment at {} states max {worst_direct:.3e} (<= 0)",
            tr.steps,
            last.t,
            tr.records[0].energy,
            last.energy,
            direct_energy.len()
        ),
        started,
    );
}

fn criterion_9(rep: &mut Report) {
    let started = Instant::now();
    let l = choose_domain(3, 1.0, &[0.0; 3], 1.0, 1.0, MU, 0.0).unwrap().half_width;
    let g = Arc::new(VelocityGrid::new(3, 16, l).unwrap());
    let ws = workspace(&g, 1.0, 1.0);
    let m = maxwellian(g.clone(), 1.0, &[0.0; 3], 1.0).unwrap();
    let r = tail_moment_bound_check(&m, &ws, 2, l / 2.0).unwrap();
    rep.line(9, r.ratio <= 1.0, format!("k=2, L'=L/2={:.3}: tail {:.3e}, bound {:.3e}, ratio {:.3e} (<= 1)", l / 2.0, r.tail, r.bound, r.ratio), started);
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("BSPC_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let only = |c: u32| selected.as_ref().map_or(true, |v| v.contains(&c));
    let strict = std::env::var("BSPC_ACCEPTANCE_STRICT").is_ok_and(|v| v != "0");
    let cache = tempfile::tempdir().unwrap();
    let mut rep = Report { failures: 0 };
    criterion_1_5_6_8(&mut rep, &only, cache.path());
    if only(2) {
        criterion_2(&mut rep);
    }
    if only(3) {
        criterion_3(&mut rep);
    }
    if only(4) {
        criterion_4(&mut rep);
    }
    if only(7) {
        criterion_7(&mut rep, cache.path());
    }
    if only(9) {
        criterion_9(&mut rep);
    }
    println!("acceptance: {} failing criteria", rep.failures);
    if strict && rep.failures > 0 {
        std::process::exit(1);
    }
}
