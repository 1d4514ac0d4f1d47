//! Collision kernel B(|u|, cos) = |u|^lambda b(cos), its Fourier-side weight
//! Ghat(xi, zeta) and precomputed weight tables.
//!
//! The weight separates into a gain part depending on (|zeta|, |eta|,
//! eta.zeta) with eta = beta zeta / 2 - xi, and a loss part depending on
//! |xi| only. Expanding b in Legendre polynomials (d = 3) or cosines (d = 2)
//! reduces both to one-dimensional radial integrals over |u| <= umax.

use crate::grid::VelocityGrid;
use crate::quadrature::{gauss_legendre, integrate_adaptive, AdaptiveSpec, Integral, KronrodRule};
use crate::special::{bessel_j, chebyshev_all, legendre_all, sinc, spherical_bessel_j_all};
use crate::{Error, Result};
use fnv::FnvHasher;
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Largest number of angular samples accepted for a tabulated b.
pub const MAX_ANGULAR_NODES: usize = 64;

/// Surface measure of the unit sphere S^{d-1}.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {d}"),
    }
}

/// Sample points in s = cos(theta) at which a tabulated b is given:
/// Gauss-Legendre nodes for d = 3, Chebyshev nodes cos((i + 1/2) pi / count)
/// for d = 2 (ascending in both cases).
pub fn angular_nodes(d: usize, count: usize) -> Vec<f64> {
    if d == 3 {
        gauss_legendre(count).0
    } else {
        let mut s: Vec<f64> = (0..count).map(|i| ((i as f64 + 0.5) * PI / count as f64).cos()).collect();
        s.reverse();
        s
    }
}

/// A normalised angular cross-section given by samples at [`angular_nodes`].
///
/// b is the polynomial in s interpolating the samples. `coeffs` are its
/// Funk-Hecke moments: 2 pi int b P_l ds for d = 3, int_0^{2 pi} b(cos t) cos(l t) dt
/// for d = 2. Normalisation makes `coeffs[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularTable {
    d: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
    coeffs: Vec<f64>,
}

/// Rescale raw samples of b so that its integral over S^{d-1} is one.
pub fn normalize_angular(d: usize, b_raw: &[f64]) -> Result<AngularTable> {
    if d != 2 && d != 3 {
        return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}")));
    }
    if b_raw.is_empty() || b_raw.len() > MAX_ANGULAR_NODES {
        return Err(Error::InvalidArgument(format!(
            "angular table needs 1..={MAX_ANGULAR_NODES} samples, got {}",
            b_raw.len()
        )));
    }
    if let Some(x) = b_raw.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidArgument(format!("angular samples must be finite and nonnegative, got {x}")));
    }
    if b_raw.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("angular samples are all zero".into()));
    }
    let count = b_raw.len();
    let nodes = angular_nodes(d, count);
    let mut coeffs = vec![0.0; count];
    if d == 3 {
        let (_, w) = gauss_legendre(count);
        let mut p = vec![0.0; count];
        for ((&s, &wi), &bi) in nodes.iter().zip(&w).zip(b_raw) {
            legendre_all(s, &mut p);
            for (c, pl) in coeffs.iter_mut().zip(&p) {
                *c += 2.0 * PI * wi * bi * pl;
            }
        }
    } else {
        let mut t = vec![0.0; count];
        for (&s, &bi) in nodes.iter().zip(b_raw) {
            chebyshev_all(s, &mut t);
            for (c, tm) in coeffs.iter_mut().zip(&t) {
                *c += 2.0 * PI / count as f64 * bi * tm;
            }
        }
    }
    let norm = coeffs[0];
    Ok(AngularTable {
        d,
        nodes,
        values: b_raw.iter().map(|x| x / norm).collect(),
        coeffs: coeffs.iter().map(|c| c / norm).collect(),
    })
}

impl AngularTable {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Normalised samples.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Funk-Hecke moments (see the type documentation).
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Angular part b of the collision kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Angular {
    /// b constant on the sphere.
    Isotropic,
    Tabulated(AngularTable),
}

const ISOTROPIC_COEFFS: [f64; 1] = [1.0];

impl Angular {
    fn coefficients(&self) -> &[f64] {
        match self {
            Angular::Isotropic => &ISOTROPIC_COEFFS,
            Angular::Tabulated(t) => &t.coeffs,
        }
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        match self {
            Angular::Isotropic => h.write(b"isotropic"),
            Angular::Tabulated(t) => {
                h.write(b"tabulated");
                for v in &t.values {
                    h.write(&v.to_le_bytes());
                }
            }
        }
        h.finish()
    }
}

/// Interaction class implied by the potential exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    MaxwellMolecules,
    VariableHardPotentials,
    HardSpheres,
}

/// Collision kernel |u|^lambda b(u_hat . sigma) with restitution beta.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    d: usize,
    lambda: f64,
    beta: f64,
    angular: Angular,
}

impl KernelSpec {
    pub fn new(d: usize, lambda: f64, beta: f64, angular: Angular) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if !(beta > 0.5 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (1/2, 1], got {beta}")));
        }
        if let Angular::Tabulated(t) = &angular {
            if t.d != d {
                return Err(Error::InvalidArgument(format!(
                    "angular table built for d = {}, kernel has d = {d}",
                    t.d
                )));
            }
        }
        Ok(KernelSpec { d, lambda, beta, angular })
    }

    /// Elastic isotropic hard spheres.
    pub fn hard_spheres(d: usize) -> Result<Self> {
        KernelSpec::new(d, 1.0, 1.0, Angular::Isotropic)
    }

    /// Elastic isotropic Maxwell molecules.
    pub fn maxwell_molecules(d: usize) -> Result<Self> {
        KernelSpec::new(d, 0.0, 1.0, Angular::Isotropic)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn angular(&self) -> &Angular {
        &self.angular
    }

    pub fn is_elastic(&self) -> bool {
        self.beta == 1.0
    }

    pub fn interaction(&self) -> Interaction {
        if self.lambda == 0.0 {
            Interaction::MaxwellMolecules
        } else if self.lambda == 1.0 {
            Interaction::HardSpheres
        } else {
            Interaction::VariableHardPotentials
        }
    }

    /// b(s) at s = cos(theta).
    pub fn b(&self, s: f64) -> f64 {
        let c = self.angular.coefficients();
        let mut poly = vec![0.0; c.len()];
        if self.d == 3 {
            legendre_all(s, &mut poly);
            c.iter().zip(&poly).enumerate().map(|(l, (cl, pl))| (2 * l + 1) as f64 * cl * pl).sum::<f64>()
                / (4.0 * PI)
        } else {
            chebyshev_all(s, &mut poly);
            c.iter().zip(&poly).enumerate().map(|(m, (cm, tm))| if m == 0 { *cm } else { 2.0 * cm * tm }).sum::<f64>()
                / (2.0 * PI)
        }
    }

    /// Velocity after a collision with partner `w` in direction `sigma`:
    /// v' = v + beta (|u| sigma - u) / 2, u = v - w.
    pub fn post_collision(&self, v: &[f64], w: &[f64], sigma: &[f64], out: &mut [f64]) {
        let speed = v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        for a in 0..self.d {
            out[a] = v[a] + 0.5 * self.beta * (speed * sigma[a] - (v[a] - w[a]));
        }
    }

    /// beta as p / q with q <= 64, if such a representation exists.
    pub fn beta_ratio(&self) -> Option<(i64, i64)> {
        (1..=64i64).find_map(|q| {
            let p = (self.beta * q as f64).round();
            ((p / q as f64 - self.beta).abs() < 1e-12).then_some((p as i64, q))
        })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// G(u, zeta) = |u|^lambda int b(u_hat.sigma) (e^{-i beta zeta.(|u| sigma - u)/2} - 1) dsigma.
///
/// Closed forms for isotropic b; otherwise a product sphere rule whose order
/// is doubled until successive values agree to 1e-13.
pub fn weight_g(u: &[f64], zeta: &[f64], spec: &KernelSpec) -> Complex64 {
    let r = norm(u);
    let z = norm(zeta);
    if z == 0.0 || r == 0.0 {
        return Complex64::default();
    }
    let scale = r.powf(spec.lambda);
    let arg = 0.5 * spec.beta * r * z;
    let shift = Complex64::from_polar(1.0, 0.5 * spec.beta * dot(zeta, u));
    match (&spec.angular, spec.d) {
        (Angular::Isotropic, 3) => scale * (shift * sinc(arg) - 1.0),
        (Angular::Isotropic, _) => scale * (shift * bessel_j(0, arg) - 1.0),
        _ => {
            let mut order = 32;
            let mut prev = weight_g_sphere(u, zeta, spec, order, order);
            loop {
                order *= 2;
                let next = weight_g_sphere(u, zeta, spec, order, order);
                if (next - prev).norm() <= 1e-13 * (1.0 + next.norm()) || order >= 1024 {
                    return next;
                }
                prev = next;
            }
        }
    }
}

/// Orthonormal frame whose first vector is `axis / |axis|`.
pub(crate) fn frame(axis: &[f64]) -> [[f64; 3]; 3] {
    let r = norm(axis);
    let mut e0 = [0.0; 3];
    for (a, x) in axis.iter().enumerate() {
        e0[a] = x / r;
    }
    if axis.len() == 2 {
        return [e0, [-e0[1], e0[0], 0.0], [0.0; 3]];
    }
    let pick = if e0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let p = dot(&pick, &e0);
    let mut e1 = [pick[0] - p * e0[0], pick[1] - p * e0[1], pick[2] - p * e0[2]];
    let n1 = norm(&e1);
    e1.iter_mut().for_each(|x| *x /= n1);
    let e2 = [e0[1] * e1[2] - e0[2] * e1[1], e0[2] * e1[0] - e0[0] * e1[2], e0[0] * e1[1] - e0[1] * e1[0]];
    [e0, e1, e2]
}

/// G(u, zeta) with a fixed sphere rule: Gauss-Legendre in cos(theta) about
/// u_hat times a uniform azimuth rule (d = 3), uniform angles (d = 2).
pub fn weight_g_sphere(u: &[f64], zeta: &[f64], spec: &KernelSpec, n_theta: usize, n_phi: usize) -> Complex64 {
    let r = norm(u);
    if r == 0.0 || norm(zeta) == 0.0 {
        return Complex64::default();
    }
    let e = frame(u);
    let zu = dot(zeta, u);
    let half_beta = 0.5 * spec.beta;
    let mut acc = Complex64::default();
    if spec.d == 3 {
        let (s, w) = gauss_legendre(n_theta);
        let z = [dot(zeta, &e[0]), dot(zeta, &e[1]), dot(zeta, &e[2])];
        for (&si, &wi) in s.iter().zip(&w) {
            let sin = (1.0 - si * si).max(0.0).sqrt();
            let bw = spec.b(si) * wi * 2.0 * PI / n_phi as f64;
            for j in 0..n_phi {
                let phi = 2.0 * PI * j as f64 / n_phi as f64;
                let zs = si * z[0] + sin * (phi.cos() * z[1] + phi.sin() * z[2]);
                acc += bw * (Complex64::from_polar(1.0, -half_beta * (r * zs - zu)) - 1.0);
            }
        }
    } else {
        let z = [dot(zeta, &e[0][..2]), dot(zeta, &e[1][..2])];
        for j in 0..n_phi {
            let th = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
            let zs = th.cos() * z[0] + th.sin() * z[1];
            let bw = spec.b(th.cos()) * 2.0 * PI / n_phi as f64;
            acc += bw * (Complex64::from_polar(1.0, -half_beta * (r * zs - zu)) - 1.0);
        }
    }
    acc * r.powf(spec.lambda)
}

/// Radial quadrature settings for the weight integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialQuadrature {
    pub rule: KronrodRule,
    /// Tolerance relative to the scale umax^{lambda+d} of the integrand.
    pub rel_tol: f64,
    /// Initial panels per half period of the fastest oscillation.
    pub panels_per_half_wave: usize,
}

impl Default for RadialQuadrature {
    fn default() -> Self {
        RadialQuadrature { rule: KronrodRule::Gk21, rel_tol: 1e-13, panels_per_half_wave: 1 }
    }
}

impl RadialQuadrature {
    /// Same rule family at higher order with twice the initial panels.
    pub fn refined(&self) -> Self {
        RadialQuadrature { rule: KronrodRule::Gk21, rel_tol: self.rel_tol, panels_per_half_wave: 2 * self.panels_per_half_wave }
    }
}

/// int_0^R r^{lambda+d-1} J_l(a r) J_l(b r) dr with J the spherical (d = 3)
/// or cylindrical (d = 2) Bessel function; `b = None` drops the second factor.
fn radial_integral(d: usize, lambda: f64, l: usize, a: f64, b: Option<f64>, umax: f64, q: &RadialQuadrature) -> Integral {
    let power = lambda + d as f64 - 1.0;
    let freq = a + b.unwrap_or(0.0);
    let panels = q.panels_per_half_wave * ((freq * umax / PI).ceil() as usize + 1);
    let spec = AdaptiveSpec {
        rule: q.rule,
        abs_tol: q.rel_tol * umax.powf(power + 1.0),
        rel_tol: 0.0,
        max_subdivisions: 20_000,
    };
    let bessel = |x: f64| -> f64 {
        if d == 3 {
            if l == 0 {
                sinc(x)
            } else {
                let mut buf = [0.0; MAX_ANGULAR_NODES];
                spherical_bessel_j_all(x, &mut buf[..=l]);
                buf[l]
            }
        } else {
            bessel_j(l as i32, x)
        }
    };
    integrate_adaptive(
        |r| {
            let base = r.powf(power) * bessel(a * r);
            match b {
                Some(b) => base * bessel(b * r),
                None => base,
            }
        },
        0.0,
        umax,
        panels,
        &spec,
    )
}

fn angular_weights(d: usize, coeffs: &[f64], cos: f64, out: &mut [f64]) {
    if d == 3 {
        legendre_all(cos, out);
        for (l, o) in out.iter_mut().enumerate() {
            *o *= (2 * l + 1) as f64 * coeffs[l];
        }
    } else {
        chebyshev_all(cos, out);
        for (m, o) in out.iter_mut().enumerate() {
            *o *= if m == 0 { 1.0 } else { 2.0 } * coeffs[m];
        }
    }
}

/// Ghat(xi, zeta) = int_{|u| <= umax} G(u, zeta) e^{-i xi.u} du.
///
/// The value is real for every kernel handled here. Computed as
/// |S^{d-1}| (sum_l c_l Poly_l(cos) I_l(beta |zeta| / 2, |eta|) - I_0(|xi|))
/// with eta = beta zeta / 2 - xi and I_l the radial integrals.
pub fn weight_g_hat(xi: &[f64], zeta: &[f64], umax: f64, spec: &KernelSpec, q: &RadialQuadrature) -> Result<f64> {
    let zn = norm(zeta);
    if zn == 0.0 {
        return Ok(0.0);
    }
    let eta: Vec<f64> = zeta.iter().zip(xi).map(|(z, x)| 0.5 * spec.beta * z - x).collect();
    let en = norm(&eta);
    let cos = if en == 0.0 { 1.0 } else { (dot(&eta, zeta) / (en * zn)).clamp(-1.0, 1.0) };
    let coeffs = spec.angular.coefficients();
    let mut poly = vec![0.0; coeffs.len()];
    angular_weights(spec.d, coeffs, cos, &mut poly);
    let fail = |est: f64| Error::Quadrature { xi: xi.to_vec(), zeta: zeta.to_vec(), estimate: est };
    let mut gain = 0.0;
    for (l, p) in poly.iter().enumerate() {
        if *p == 0.0 || (l > 0 && en == 0.0) {
            continue;
        }
        let r = radial_integral(spec.d, spec.lambda, l, 0.5 * spec.beta * zn, Some(en), umax, q);
        if !r.converged {
            return Err(fail(r.error));
        }
        gain += p * r.value;
    }
    let loss = radial_integral(spec.d, spec.lambda, 0, norm(xi), None, umax, q);
    if !loss.converged {
        return Err(fail(loss.error));
    }
    Ok(sphere_area(spec.d) * (gain - loss.value))
}

/// Storage scheme for a [`WeightTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStorage {
    /// One entry per (output mode, lattice mode) pair.
    Full,
    /// Radial integrals keyed by integer invariants of the mode pair.
    Reduced,
}

/// Settings for [`build_weight_table`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableConfig {
    pub storage: TableStorage,
    /// Refinement p of the convolution lattice xi_j = j pi / (p L).
    pub padding: usize,
    /// Truncation radius umax in units of L.
    pub radius: f64,
    pub quadrature: RadialQuadrature,
    /// Byte budget for table storage.
    pub memory_budget: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            storage: TableStorage::Reduced,
            padding: 2,
            radius: 2.0,
            quadrature: RadialQuadrature::default(),
            memory_budget: 256 << 20,
        }
    }
}

/// Index geometry of the weighted convolution.
///
/// Lattice modes xi_m = m delta with |m|_inf <= F, output modes zeta_k =
/// p k delta with |k|_inf <= K = n/2 - 1, where delta = pi / (p L) and
/// F = p n / 2 - 1. Axes beyond d have extent one so that every loop is
/// three-dimensional.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionLayout {
    pub d: usize,
    pub n: usize,
    pub padding: usize,
    pub fine_half: [i64; 3],
    pub out_half: [i64; 3],
    pub spacing: f64,
    /// eta = beta zeta / 2 - xi = (delta / wb) (wa k - wb m) when beta is rational.
    pub eta_coeffs: Option<(i64, i64)>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl ConvolutionLayout {
    fn new(grid: &VelocityGrid, spec: &KernelSpec, padding: usize) -> Self {
        let d = grid.dim();
        let n = grid.points();
        let f = (padding * n / 2 - 1) as i64;
        let k = (n / 2 - 1) as i64;
        let mut fine_half = [0; 3];
        let mut out_half = [0; 3];
        for a in 3 - d..3 {
            fine_half[a] = f;
            out_half[a] = k;
        }
        let eta_coeffs = spec.beta_ratio().map(|(p, q)| {
            let wa = p * padding as i64;
            let wb = 2 * q;
            let g = gcd(wa, wb);
            (wa / g, wb / g)
        });
        ConvolutionLayout {
            d,
            n,
            padding,
            fine_half,
            out_half,
            spacing: PI / (padding as f64 * grid.half_width()),
            eta_coeffs,
        }
    }

    pub fn fine_extent(&self) -> [usize; 3] {
        self.fine_half.map(|f| (2 * f + 1) as usize)
    }

    pub fn out_extent(&self) -> [usize; 3] {
        self.out_half.map(|k| (2 * k + 1) as usize)
    }

    pub fn fine_len(&self) -> usize {
        self.fine_extent().iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_extent().iter().product()
    }

    pub fn fine_index(&self, m: [i64; 3]) -> usize {
        let e = self.fine_extent();
        (((m[0] + self.fine_half[0]) as usize * e[1]) + (m[1] + self.fine_half[1]) as usize) * e[2]
            + (m[2] + self.fine_half[2]) as usize
    }

    pub fn out_index(&self, k: [i64; 3]) -> usize {
        let e = self.out_extent();
        (((k[0] + self.out_half[0]) as usize * e[1]) + (k[1] + self.out_half[1]) as usize) * e[2]
            + (k[2] + self.out_half[2]) as usize
    }

    pub fn out_mode(&self, idx: usize) -> [i64; 3] {
        let e = self.out_extent();
        [
            (idx / (e[1] * e[2])) as i64 - self.out_half[0],
            ((idx / e[2]) % e[1]) as i64 - self.out_half[1],
            (idx % e[2]) as i64 - self.out_half[2],
        ]
    }

    pub fn fine_mode(&self, idx: usize) -> [i64; 3] {
        let e = self.fine_extent();
        [
            (idx / (e[1] * e[2])) as i64 - self.fine_half[0],
            ((idx / e[2]) % e[1]) as i64 - self.fine_half[1],
            (idx % e[2]) as i64 - self.fine_half[2],
        ]
    }

    /// Physical vectors (xi, zeta) of a lattice/output pair, d entries.
    pub fn vectors(&self, m: [i64; 3], k: [i64; 3]) -> (Vec<f64>, Vec<f64>) {
        let p = self.padding as f64;
        let xi = (3 - self.d..3).map(|a| m[a] as f64 * self.spacing).collect();
        let zeta = (3 - self.d..3).map(|a| p * k[a] as f64 * self.spacing).collect();
        (xi, zeta)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ReducedTable {
    /// sphere_area * I_0(|xi|) by |m|^2
    pub(crate) loss: Vec<f64>,
    /// number of angular orders
    pub(crate) orders: usize,
    /// |w|^2 range of a row
    pub(crate) width: usize,
    /// sphere_area * c_l-weighted radial integrals, [|k|^2][|w|^2][l]
    pub(crate) gain: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum Storage {
    Full(Vec<f64>),
    Reduced(ReducedTable),
}

/// Everything that determines the table contents; part of the cache header.
#[derive(Debug, Clone, PartialEq)]
pub struct TableKey {
    pub d: u32,
    pub n: u32,
    pub half_width: f64,
    pub lambda: f64,
    pub beta: f64,
    pub angular: u64,
    pub padding: u32,
    pub umax: f64,
    pub rule: u32,
    pub rel_tol: f64,
    pub panels: u32,
    pub storage: u32,
}

impl TableKey {
    fn new(grid: &VelocityGrid, spec: &KernelSpec, cfg: &TableConfig) -> Self {
        TableKey {
            d: grid.dim() as u32,
            n: grid.points() as u32,
            half_width: grid.half_width(),
            lambda: spec.lambda,
            beta: spec.beta,
            angular: spec.angular.fingerprint(),
            padding: cfg.padding as u32,
            umax: cfg.radius * grid.half_width(),
            rule: match cfg.quadrature.rule {
                KronrodRule::Gk15 => 15,
                KronrodRule::Gk21 => 21,
            },
            rel_tol: cfg.quadrature.rel_tol,
            panels: cfg.quadrature.panels_per_half_wave as u32,
            storage: match cfg.storage {
                TableStorage::Full => 0,
                TableStorage::Reduced => 1,
            },
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(80);
        for x in [self.d, self.n] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        for x in [self.half_width, self.lambda, self.beta] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&self.angular.to_le_bytes());
        b.extend_from_slice(&self.padding.to_le_bytes());
        b.extend_from_slice(&self.umax.to_le_bytes());
        b.extend_from_slice(&self.rule.to_le_bytes());
        b.extend_from_slice(&self.rel_tol.to_le_bytes());
        for x in [self.panels, self.storage] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    /// Stable 64-bit digest used for cache file names.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.to_bytes());
        h.finish()
    }
}

/// Precomputed Ghat values for one grid, kernel and lattice.
#[derive(Debug, Clone)]
pub struct WeightTable {
    key: TableKey,
    layout: ConvolutionLayout,
    umax: f64,
    lambda: f64,
    coeffs: Vec<f64>,
    pub(crate) storage: Storage,
}

impl WeightTable {
    pub fn key(&self) -> &TableKey {
        &self.key
    }

    pub fn layout(&self) -> &ConvolutionLayout {
        &self.layout
    }

    pub fn umax(&self) -> f64 {
        self.umax
    }

    pub fn storage(&self) -> TableStorage {
        match self.storage {
            Storage::Full(_) => TableStorage::Full,
            Storage::Reduced(_) => TableStorage::Reduced,
        }
    }

    /// Number of stored real entries.
    pub fn stored_entries(&self) -> usize {
        match &self.storage {
            Storage::Full(v) => v.len(),
            Storage::Reduced(r) => r.loss.len() + r.gain.len(),
        }
    }

    pub(crate) fn angular_coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Ghat(xi_m, zeta_k) for lattice index m and output index k, if the
    /// pair enters the convolution (both m and p k - m on the lattice).
    pub fn value(&self, m: [i64; 3], k: [i64; 3]) -> Option<f64> {
        let l = &self.layout;
        if (0..3).any(|a| m[a].abs() > l.fine_half[a] || k[a].abs() > l.out_half[a]) {
            return None;
        }
        let range = partner_range(l, k);
        if (0..3).any(|a| m[a] < range[a].0 || m[a] > range[a].1) {
            return None;
        }
        if k == [0, 0, 0] {
            return Some(0.0);
        }
        match &self.storage {
            Storage::Full(v) => Some(v[l.out_index(k) * l.fine_len() + l.fine_index(m)]),
            Storage::Reduced(r) => {
                let (wa, wb) = l.eta_coeffs?;
                let w = [wa * k[0] - wb * m[0], wa * k[1] - wb * m[1], wa * k[2] - wb * m[2]];
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
                let w2 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) as usize;
                let m2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as usize;
                let base = (k2 * r.width + w2) * r.orders;
                let row = &r.gain[base..base + r.orders];
                let gain = if r.orders == 1 {
                    row[0]
                } else {
                    let cos = cosine(k, w);
                    let mut poly = vec![0.0; r.orders];
                    angular_weights(l.d, &self.coeffs, cos, &mut poly);
                    row.iter().zip(&poly).map(|(a, b)| a * b).sum()
                };
                Some(gain - r.loss[m2])
            }
        }
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut b = CACHE_MAGIC.to_vec();
        b.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        b.extend_from_slice(&self.key.to_bytes());
        b
    }

    /// Write the table: header (magic, version, key) followed by sections of
    /// little-endian f64 entries stored as (re, im) pairs.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.header_bytes();
        let mut section = |vals: &[f64], dims: &[u64]| {
            out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
            for x in dims {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
                out.extend_from_slice(&0f64.to_le_bytes());
            }
        };
        match &self.storage {
            Storage::Full(v) => section(v, &[v.len() as u64]),
            Storage::Reduced(r) => {
                section(&r.loss, &[r.loss.len() as u64]);
                section(&r.gain, &[(r.gain.len() / (r.width * r.orders)) as u64, r.width as u64, r.orders as u64]);
            }
        }
        section(&self.coeffs, &[self.coeffs.len() as u64]);
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Read a table written by [`WeightTable::save`]. Returns `Ok(None)` when
    /// the file belongs to a different grid, kernel or configuration.
    pub fn load(path: &Path, grid: &VelocityGrid, spec: &KernelSpec, cfg: &TableConfig) -> Result<Option<WeightTable>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let key = TableKey::new(grid, spec, cfg);
        let layout = ConvolutionLayout::new(grid, spec, cfg.padding);
        let mut table = WeightTable {
            key,
            layout,
            umax: cfg.radius * grid.half_width(),
            lambda: spec.lambda,
            coeffs: Vec::new(),
            storage: Storage::Full(Vec::new()),
        };
        let header = table.header_bytes();
        if bytes.len() < header.len() || bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
            return Err(Error::Format { path: path.into(), message: "not a weight table file".into() });
        }
        if bytes[..header.len()] != header[..] {
            return Ok(None);
        }
        let bad = |m: &str| Error::Format { path: path.into(), message: m.into() };
        let mut pos = header.len();
        let take_u64 = |pos: &mut usize| -> Result<u64> {
            let s = bytes.get(*pos..*pos + 8).ok_or_else(|| bad("truncated file"))?;
            *pos += 8;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        };
        let mut sections = Vec::new();
        while pos < bytes.len() {
            let rank = take_u64(&mut pos)? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| take_u64(&mut pos).map(|x| x as usize)).collect::<Result<_>>()?;
            let count: usize = dims.iter().product();
            let mut vals = Vec::with_capacity(count);
            for _ in 0..count {
                vals.push(f64::from_bits(take_u64(&mut pos)?));
                take_u64(&mut pos)?;
            }
            sections.push((dims, vals));
        }
        let mut it = sections.into_iter();
        table.storage = match cfg.storage {
            TableStorage::Full => Storage::Full(it.next().ok_or_else(|| bad("missing entries"))?.1),
            TableStorage::Reduced => {
                let (_, loss) = it.next().ok_or_else(|| bad("missing loss entries"))?;
                let (dims, gain) = it.next().ok_or_else(|| bad("missing gain entries"))?;
                if dims.len() != 3 {
                    return Err(bad("malformed gain section"));
                }
                Storage::Reduced(ReducedTable { loss, orders: dims[2], width: dims[1], gain })
            }
        };
        table.coeffs = it.next().ok_or_else(|| bad("missing angular coefficients"))?.1;
        Ok(Some(table))
    }
}

const CACHE_MAGIC: [u8; 8] = *b"BSPCWGT\0";
const CACHE_VERSION: u32 = 1;

fn cosine(k: [i64; 3], w: [i64; 3]) -> f64 {
    let kw = (k[0] * w[0] + k[1] * w[1] + k[2] * w[2]) as f64;
    let kk = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
    let ww = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) as f64;
    if kk == 0.0 || ww == 0.0 {
        1.0
    } else {
        (kw / (kk * ww).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Output modes k and the inclusive lattice ranges of m for which both
/// xi_m and p k - m lie in the lattice band.
pub(crate) fn partner_range(layout: &ConvolutionLayout, k: [i64; 3]) -> [(i64, i64); 3] {
    let p = layout.padding as i64;
    let mut r = [(0, 0); 3];
    for a in 0..3 {
        let f = layout.fine_half[a];
        r[a] = ((p * k[a] - f).max(-f), (p * k[a] + f).min(f));
    }
    r
}

/// Build the weight table for `grid` and `spec`.
pub fn build_weight_table(grid: &VelocityGrid, spec: &KernelSpec, cfg: &TableConfig) -> Result<WeightTable> {
    if spec.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!("kernel is {}-D, grid is {}-D", spec.dim(), grid.dim())));
    }
    if cfg.padding < 2 {
        return Err(Error::InvalidArgument(format!("lattice refinement must be at least 2, got {}", cfg.padding)));
    }
    let umax = cfg.radius * grid.half_width();
    let alias_free = 2.0 * (cfg.padding as f64 - 1.0);
    if !(cfg.radius > 0.0 && cfg.radius <= alias_free * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "truncation radius {} L aliases on a lattice refined {}x; it must lie in (0, {alias_free}] L",
            cfg.radius, cfg.padding
        )));
    }
    let layout = ConvolutionLayout::new(grid, spec, cfg.padding);
    let coeffs = spec.angular.coefficients().to_vec();
    let storage = match cfg.storage {
        TableStorage::Full => build_full(&layout, spec, umax, cfg)?,
        TableStorage::Reduced => build_reduced(&layout, spec, umax, cfg)?,
    };
    Ok(WeightTable { key: TableKey::new(grid, spec, cfg), layout, umax, lambda: spec.lambda, coeffs, storage })
}

fn quadrature_error(est: f64, xi: Vec<f64>, zeta: Vec<f64>) -> Error {
    Error::Quadrature { xi, zeta, estimate: est }
}

fn build_full(layout: &ConvolutionLayout, spec: &KernelSpec, umax: f64, cfg: &TableConfig) -> Result<Storage> {
    let entries = layout.out_len() * layout.fine_len();
    let needed = entries * std::mem::size_of::<f64>();
    if needed > cfg.memory_budget {
        return Err(Error::MemoryBudget { needed, budget: cfg.memory_budget });
    }
    let orders = spec.angular.coefficients().len();
    let area = sphere_area(spec.d);
    // distinct radial arguments, keyed by their bit patterns
    let mut gain_keys: HashMap<(u64, u64), usize> = HashMap::new();
    let mut loss_keys: HashMap<u64, usize> = HashMap::new();
    let mut gain_args = Vec::new();
    let mut loss_args = Vec::new();
    let mut plan = Vec::with_capacity(entries);
    for o in 0..layout.out_len() {
        let k = layout.out_mode(o);
        for f in 0..layout.fine_len() {
            let m = layout.fine_mode(f);
            if k == [0, 0, 0] {
                plan.push(None);
                continue;
            }
            let (xi, zeta) = layout.vectors(m, k);
            let zn = norm(&zeta);
            let eta: Vec<f64> = zeta.iter().zip(&xi).map(|(z, x)| 0.5 * spec.beta * z - x).collect();
            let en = norm(&eta);
            let a = 0.5 * spec.beta * zn;
            let cos = if en == 0.0 { 1.0 } else { (dot(&eta, &zeta) / (en * zn)).clamp(-1.0, 1.0) };
            let gi = *gain_keys.entry((a.to_bits(), en.to_bits())).or_insert_with(|| {
                gain_args.push((a, en, xi.clone(), zeta.clone()));
                gain_args.len() - 1
            });
            let xn = norm(&xi);
            let li = *loss_keys.entry(xn.to_bits()).or_insert_with(|| {
                loss_args.push((xn, xi.clone(), zeta.clone()));
                loss_args.len() - 1
            });
            plan.push(Some((gi, li, cos)));
        }
    }
    let q = cfg.quadrature;
    let gains: Vec<Vec<f64>> = gain_args
        .par_iter()
        .map(|(a, e, xi, zeta)| {
            (0..orders)
                .map(|l| {
                    if l > 0 && *e == 0.0 {
                        return Ok(0.0);
                    }
                    let r = radial_integral(spec.d, spec.lambda, l, *a, Some(*e), umax, &q);
                    if r.converged {
                        Ok(r.value)
                    } else {
                        Err(quadrature_error(r.error, xi.clone(), zeta.clone()))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = loss_args
        .par_iter()
        .map(|(c, xi, zeta)| {
            let r = radial_integral(spec.d, spec.lambda, 0, *c, None, umax, &q);
            if r.converged {
                Ok(r.value)
            } else {
                Err(quadrature_error(r.error, xi.clone(), zeta.clone()))
            }
        })
        .collect::<Result<_>>()?;
    let coeffs = spec.angular.coefficients();
    let mut poly = vec![0.0; orders];
    let values = plan
        .into_iter()
        .map(|p| match p {
            None => 0.0,
            Some((gi, li, cos)) => {
                angular_weights(spec.d, coeffs, cos, &mut poly);
                let gain: f64 = poly.iter().zip(&gains[gi]).map(|(a, b)| a * b).sum();
                area * (gain - losses[li])
            }
        })
        .collect();
    Ok(Storage::Full(values))
}

fn build_reduced(layout: &ConvolutionLayout, spec: &KernelSpec, umax: f64, cfg: &TableConfig) -> Result<Storage> {
    let (wa, wb) = layout.eta_coeffs.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "reduced tables need beta = p/q with q <= 64; beta = {} is not; use full storage",
            spec.beta
        ))
    })?;
    let orders = spec.angular.coefficients().len();
    let d = layout.d as i64;
    let fmax = layout.fine_half.iter().copied().max().unwrap();
    let kmax = layout.out_half.iter().copied().max().unwrap();
    let max_k2 = (d * kmax * kmax) as usize;
    let max_m2 = (d * fmax * fmax) as usize;
    let max_w2 = (d * (wa * kmax + wb * fmax).pow(2)) as usize;
    let width = max_w2 + 1;
    let needed = ((max_k2 + 1) * width * orders + max_m2 + 1) * std::mem::size_of::<f64>() * 2;
    if needed > cfg.memory_budget {
        return Err(Error::MemoryBudget { needed, budget: cfg.memory_budget });
    }
    let mut used = vec![false; (max_k2 + 1) * width];
    for o in 0..layout.out_len() {
        let k = layout.out_mode(o);
        if k == [0, 0, 0] {
            continue;
        }
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
        let row = &mut used[k2 * width..(k2 + 1) * width];
        let r = partner_range(layout, k);
        for m0 in r[0].0..=r[0].1 {
            let w0 = wa * k[0] - wb * m0;
            for m1 in r[1].0..=r[1].1 {
                let w1 = wa * k[1] - wb * m1;
                let s = w0 * w0 + w1 * w1;
                for m2 in r[2].0..=r[2].1 {
                    let w2 = wa * k[2] - wb * m2;
                    row[(s + w2 * w2) as usize] = true;
                }
            }
        }
    }
    let delta = layout.spacing;
    let p = layout.padding as f64;
    let jobs: Vec<(usize, usize)> = used
        .iter()
        .enumerate()
        .filter(|(_, u)| **u)
        .map(|(i, _)| (i / width, i % width))
        .collect();
    let q = cfg.quadrature;
    let coeff_area = sphere_area(spec.d);
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(k2, w2)| {
            let a = 0.5 * spec.beta * p * delta * (k2 as f64).sqrt();
            let e = delta * (w2 as f64).sqrt() / wb as f64;
            (0..orders)
                .map(|l| {
                    if l > 0 && e == 0.0 {
                        return Ok(0.0);
                    }
                    let r = radial_integral(spec.d, spec.lambda, l, a, Some(e), umax, &q);
                    if r.converged {
                        Ok(coeff_area * r.value)
                    } else {
                        Err(quadrature_error(r.error, vec![e], vec![a]))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut gain = vec![f64::NAN; (max_k2 + 1) * width * orders];
    for ((k2, w2), vals) in jobs.iter().zip(results) {
        let base = (k2 * width + w2) * orders;
        gain[base..base + orders].copy_from_slice(&vals);
    }
    let loss = (0..=max_m2)
        .into_par_iter()
        .map(|m2| {
            let c = delta * (m2 as f64).sqrt();
            let r = radial_integral(spec.d, spec.lambda, 0, c, None, umax, &q);
            if r.converged {
                Ok(coeff_area * r.value)
            } else {
                Err(quadrature_error(r.error, vec![c], vec![]))
            }
        })
        .collect::<Result<_>>()?;
    Ok(Storage::Reduced(ReducedTable { loss, orders, width, gain }))
}

/// Outcome of a cache lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

/// Directory of weight tables keyed by [`TableKey::digest`].
#[derive(Debug, Clone)]
pub struct TableCache {
    root: PathBuf,
}

impl TableCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TableCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &TableKey) -> PathBuf {
        self.root.join(format!("weights-{:016x}.bin", key.digest()))
    }

    /// Load a matching table or build and store one.
    pub fn load_or_build(&self, grid: &VelocityGrid, spec: &KernelSpec, cfg: &TableConfig) -> Result<(WeightTable, CacheStatus)> {
        let path = self.path_for(&TableKey::new(grid, spec, cfg));
        if path.exists() {
            if let Ok(Some(t)) = WeightTable::load(&path, grid, spec, cfg) {
                return Ok((t, CacheStatus::Hit));
            }
        }
        let table = build_weight_table(grid, spec, cfg)?;
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        table.save(&path)?;
        Ok((table, CacheStatus::Miss))
    }

    /// Delete every table file; returns how many were removed.
    pub fn clear(&self) -> Result<usize> {
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(Error::io(&self.root, e)),
        };
        let mut removed = 0;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.root, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("weights-") && name.ends_with(".bin") {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

impl WeightTable {
    /// Potential exponent the table was built for.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}
