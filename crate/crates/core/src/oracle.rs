//! Slow reference implementations used to validate the spectral solver:
//! direct quadrature of the collision integral, a semi-analytic collision
//! operator for Gaussian mixtures and a dense constrained least-squares solve.

use crate::grid::{State, VelocityGrid};
use crate::kernel::{Angular, KernelSpec};
use crate::quadrature::{gauss_legendre, integrate_adaptive, AdaptiveSpec};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Nodes and weights on S^{d-1}; weights sum to the sphere area.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    d: usize,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl SphereRule {
    /// Gauss-Legendre in cos(theta) with `order` nodes times 2 `order`
    /// uniform azimuths (d = 3), or 2 `order` uniform angles (d = 2).
    /// The rule is invariant under sigma -> -sigma.
    pub fn product(d: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("sphere rule order must be positive".into()));
        }
        let n_phi = 2 * order;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        match d {
            3 => {
                let (s, w) = gauss_legendre(order);
                for (&si, &wi) in s.iter().zip(&w) {
                    let sin = (1.0 - si * si).max(0.0).sqrt();
                    for j in 0..n_phi {
                        let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                        nodes.push([sin * phi.cos(), sin * phi.sin(), si]);
                        weights.push(wi * 2.0 * PI / n_phi as f64);
                    }
                }
            }
            2 => {
                for j in 0..n_phi {
                    let t = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                    nodes.push([t.cos(), t.sin(), 0.0]);
                    weights.push(2.0 * PI / n_phi as f64);
                }
            }
            _ => return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}"))),
        }
        Ok(SphereRule { d, nodes, weights })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// How the partner velocity w is integrated.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterRule {
    /// Sum over the grid nodes with weight dv^d.
    Grid,
    /// w = v - r omega with composite Gauss-Legendre in r on [0, radius]
    /// (`panels` x `per_panel` nodes) and a sphere rule in omega.
    Polar { radius: f64, panels: usize, per_panel: usize, directions: SphereRule },
}

/// Quadrature settings of [`collision_direct`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    /// Rule for the scattering direction sigma.
    pub sphere: SphereRule,
    pub outer: OuterRule,
    /// Strong-form output is computed at nodes whose multi-index is a
    /// multiple of `stride` along every axis.
    pub stride: usize,
}

impl QuadratureSpec {
    /// Grid outer rule with a sphere rule of the given order.
    pub fn grid(d: usize, order: usize) -> Result<Self> {
        Ok(QuadratureSpec { sphere: SphereRule::product(d, order)?, outer: OuterRule::Grid, stride: 1 })
    }

    /// Polar outer rule; `order` sets both sphere rules.
    pub fn polar(d: usize, order: usize, radius: f64, panels: usize, per_panel: usize) -> Result<Self> {
        Ok(QuadratureSpec {
            sphere: SphereRule::product(d, order)?,
            outer: OuterRule::Polar { radius, panels, per_panel, directions: SphereRule::product(d, order)? },
            stride: 1,
        })
    }
}

/// A distribution that can be evaluated anywhere in velocity space.
pub trait VelocityField: Sync {
    fn eval(&self, v: &[f64]) -> f64;
}

/// Multilinear interpolation of nodal values; zero outside (-L, L)^d and
/// with zero ghost values beyond the outermost nodes.
pub struct Multilinear<'a> {
    state: &'a State,
}

impl<'a> Multilinear<'a> {
    pub fn new(state: &'a State) -> Self {
        Multilinear { state }
    }
}

impl VelocityField for Multilinear<'_> {
    fn eval(&self, v: &[f64]) -> f64 {
        let grid = self.state.grid();
        let (d, n, l, dv) = (grid.dim(), grid.points() as i64, grid.half_width(), grid.spacing());
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..d {
            if v[a].abs() > l {
                return 0.0;
            }
            let t = (v[a] + l) / dv - 0.5;
            let i = t.floor();
            base[a] = i as i64;
            frac[a] = t - i;
        }
        let values = self.state.values();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0i64;
            let mut inside = true;
            for a in 0..d {
                let bit = ((corner >> a) & 1) as i64;
                let i = base[a] + bit;
                if i < 0 || i >= n {
                    inside = false;
                    break;
                }
                weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * n + i;
            }
            if inside {
                acc += weight * values[flat as usize];
            }
        }
        acc
    }
}

/// A closure restricted to (-L, L)^d.
pub struct Truncated<F> {
    pub f: F,
    pub half_width: f64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> VelocityField for Truncated<F> {
    fn eval(&self, v: &[f64]) -> f64 {
        if v.iter().any(|x| x.abs() > self.half_width) {
            0.0
        } else {
            (self.f)(v)
        }
    }
}

/// Output of [`collision_direct`]: values at a subset of grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectField {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirectField {
    /// Scatter into a full nodal array (unlisted nodes are zero).
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&j, &v) in self.nodes.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }
}

/// Direct quadrature of Q(f, f) with f the multilinear interpolant of `f`.
///
/// Elastic kernels use the strong form at the nodes selected by `q.stride`.
/// Inelastic kernels use the weak form: each collision deposits its
/// post-collision velocity onto the grid with a stencil exact for
/// quadratics and removes the pre-collision one, so the result is given at
/// every node.
pub fn collision_direct(f: &State, spec: &KernelSpec, q: &QuadratureSpec) -> Result<DirectField> {
    collision_direct_field(&Multilinear::new(f), f.grid(), Some(f.values()), spec, q)
}

/// [`collision_direct`] for an arbitrary field. `nodal` supplies exact
/// values at the grid nodes for the weak form; otherwise the field is used.
pub fn collision_direct_field(
    field: &dyn VelocityField,
    grid: &VelocityGrid,
    nodal: Option<&[f64]>,
    spec: &KernelSpec,
    q: &QuadratureSpec,
) -> Result<DirectField> {
    if spec.dim() != grid.dim() || q.sphere.dim() != grid.dim() {
        return Err(Error::GridMismatch("kernel, quadrature and grid dimensions differ".into()));
    }
    if let OuterRule::Polar { directions, .. } = &q.outer {
        if directions.dim() != grid.dim() {
            return Err(Error::GridMismatch("outer sphere rule has the wrong dimension".into()));
        }
    }
    if q.stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if spec.is_elastic() {
        let nodes: Vec<usize> = (0..grid.len())
            .filter(|&j| grid.unflatten(j)[..grid.dim()].iter().all(|i| i % q.stride == 0))
            .collect();
        let values = nodes.par_iter().map(|&j| strong_form(field, grid, spec, q, grid.node(j))).collect();
        Ok(DirectField { nodes, values })
    } else {
        let own: Vec<f64>;
        let nodal = match nodal {
            Some(v) => v,
            None => {
                own = (0..grid.len()).map(|j| field.eval(&grid.node(j)[..grid.dim()])).collect();
                &own
            }
        };
        let values = weak_form(field, nodal, grid, spec, q);
        Ok(DirectField { nodes: (0..grid.len()).collect(), values })
    }
}

/// Strong-form Q(f, f) of an elastic kernel at arbitrary velocities.
/// `grid` fixes the dimension and, for [`OuterRule::Grid`], the partners.
pub fn collision_direct_points(
    field: &dyn VelocityField,
    grid: &VelocityGrid,
    points: &[[f64; 3]],
    spec: &KernelSpec,
    q: &QuadratureSpec,
) -> Result<Vec<f64>> {
    if spec.dim() != grid.dim() || q.sphere.dim() != grid.dim() {
        return Err(Error::GridMismatch("kernel, quadrature and grid dimensions differ".into()));
    }
    if !spec.is_elastic() {
        return Err(Error::InvalidArgument("pointwise evaluation needs an elastic kernel".into()));
    }
    Ok(points.par_iter().map(|&v| strong_form(field, grid, spec, q, v)).collect())
}

/// Outer partners w of v with their weights.
fn partners(grid: &VelocityGrid, q: &QuadratureSpec, v: &[f64; 3]) -> Vec<([f64; 3], f64)> {
    let d = grid.dim();
    match &q.outer {
        OuterRule::Grid => (0..grid.len()).map(|j| (grid.node(j), grid.cell_volume())).collect(),
        OuterRule::Polar { radius, panels, per_panel, directions } => {
            let (x, w) = gauss_legendre(*per_panel);
            let h = radius / *panels as f64;
            let mut out = Vec::with_capacity(panels * per_panel * directions.len());
            for p in 0..*panels {
                for (xi, wi) in x.iter().zip(&w) {
                    let r = h * (p as f64 + 0.5 * (xi + 1.0));
                    let rw = 0.5 * h * wi * r.powi(d as i32 - 1);
                    for (om, ow) in directions.nodes().iter().zip(directions.weights()) {
                        let mut pt = [0.0; 3];
                        for a in 0..d {
                            pt[a] = v[a] - r * om[a];
                        }
                        out.push((pt, rw * ow));
                    }
                }
            }
            out
        }
    }
}

fn strong_form(field: &dyn VelocityField, grid: &VelocityGrid, spec: &KernelSpec, q: &QuadratureSpec, v: [f64; 3]) -> f64 {
    let d = grid.dim();
    let fv = field.eval(&v[..d]);
    let isotropic = matches!(spec.angular(), Angular::Isotropic);
    let b_iso = spec.b(1.0);
    let mut gain = 0.0;
    let mut loss = 0.0;
    let mut vp = [0.0; 3];
    let mut wp = [0.0; 3];
    for (w, ww) in partners(grid, q, &v) {
        let mut u = [0.0; 3];
        for a in 0..d {
            u[a] = v[a] - w[a];
        }
        let r = u[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 && spec.lambda() > 0.0 {
            continue;
        }
        let kin = r.powf(spec.lambda()) * ww;
        let fw = field.eval(&w[..d]);
        let mut g = 0.0;
        let mut l = 0.0;
        for (s, sw) in q.sphere.nodes().iter().zip(q.sphere.weights()) {
            let b = if isotropic || r == 0.0 {
                b_iso
            } else {
                spec.b(u[..d].iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / r)
            };
            for a in 0..d {
                let c = 0.5 * (v[a] + w[a]);
                vp[a] = c + 0.5 * r * s[a];
                wp[a] = c - 0.5 * r * s[a];
            }
            g += sw * b * field.eval(&vp[..d]) * field.eval(&wp[..d]);
            l += sw * b;
        }
        gain += kin * g;
        loss += kin * l * fw;
    }
    gain - fv * loss
}

/// Quadratic Lagrange weights on three consecutive nodes per axis.
fn stencil(grid: &VelocityGrid, x: f64) -> Option<(usize, [f64; 3])> {
    let (n, l, dv) = (grid.points() as i64, grid.half_width(), grid.spacing());
    if x.abs() > l {
        return None;
    }
    let t = (x + l) / dv - 0.5;
    let c = (t.round() as i64).clamp(1, n - 2);
    let s = t - c as f64;
    Some(((c - 1) as usize, [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)]))
}

fn weak_form(field: &dyn VelocityField, nodal: &[f64], grid: &VelocityGrid, spec: &KernelSpec, q: &QuadratureSpec) -> Vec<f64> {
    let d = grid.dim();
    let n = grid.points();
    let isotropic = matches!(spec.angular(), Angular::Isotropic);
    let b_iso = spec.b(1.0);
    let dv_d = grid.cell_volume();
    let beta = spec.beta();
    let deposit = |out: &mut Vec<f64>, i: usize, v: &[f64; 3], w: &[f64; 3], weight: f64| {
        let mut u = [0.0; 3];
        for a in 0..d {
            u[a] = v[a] - w[a];
        }
        let r = u[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 {
            return;
        }
        let kin = weight * r.powf(spec.lambda());
        for (s, sw) in q.sphere.nodes().iter().zip(q.sphere.weights()) {
            let b = if isotropic { b_iso } else { spec.b(u[..d].iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / r) };
            let mass = kin * sw * b;
            out[i] -= mass;
            let mut idx = [(0usize, [0.0; 3]); 3];
            let mut ok = true;
            for a in 0..d {
                let vp = v[a] + 0.5 * beta * (r * s[a] - u[a]);
                match stencil(grid, vp) {
                    Some(st) => idx[a] = st,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            for c in 0..3usize.pow(d as u32) {
                let mut flat = 0;
                let mut wgt = mass;
                let mut rem = c;
                for st in idx.iter().take(d) {
                    let o = rem % 3;
                    rem /= 3;
                    flat = flat * n + st.0 + o;
                    wgt *= st.1[o];
                }
                out[flat] += wgt;
            }
        }
    };
    let total = (0..grid.len())
        .into_par_iter()
        .fold(
            || vec![0.0; grid.len()],
            |mut acc, i| {
                let fv = nodal[i];
                if fv == 0.0 {
                    return acc;
                }
                let v = grid.node(i);
                for (w, ww) in partners(grid, q, &v) {
                    let fw = field.eval(&w[..d]);
                    if fw != 0.0 {
                        deposit(&mut acc, i, &v, &w, fv * fw * ww * dv_d);
                    }
                }
                acc
            },
        )
        .reduce(|| vec![0.0; grid.len()], |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        });
    total.into_iter().map(|x| x / dv_d).collect()
}

/// Mixture sum_i c_i N(a_i, T) of isotropic Gaussians with a shared
/// temperature T in three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub centers: Vec<[f64; 3]>,
    pub temperature: f64,
}

impl VelocityField for GaussianMixture {
    fn eval(&self, v: &[f64]) -> f64 {
        let t = self.temperature;
        let norm = (2.0 * PI * t).powf(-1.5);
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(c, a)| {
                let r2: f64 = (0..3).map(|k| (v[k] - a[k]).powi(2)).sum();
                c * norm * (-0.5 * r2 / t).exp()
            })
            .sum()
    }
}

/// ln(sinh(x) / x) for x >= 0.
fn ln_shc(x: f64) -> f64 {
    if x < 1e-4 {
        x * x / 6.0
    } else {
        x - (2.0 * x).ln() + (-(-2.0 * x).exp()).ln_1p()
    }
}

/// int_0^inf r^p exp(-alpha r^2 - c0) shc(b1 r) shc(b2 r) dr.
fn radial_gaussian(p: f64, alpha: f64, c0: f64, b1: f64, b2: f64) -> Result<f64> {
    let peak = (b1 + b2) / (2.0 * alpha) + (p / (2.0 * alpha)).sqrt();
    let upper = peak + 12.0 / alpha.sqrt();
    let spec = AdaptiveSpec { abs_tol: 0.0, rel_tol: 1e-13, ..AdaptiveSpec::default() };
    let f = |r: f64| {
        if r == 0.0 {
            return if p == 0.0 { (-c0).exp() } else { 0.0 };
        }
        (p * r.ln() - alpha * r * r - c0 + ln_shc(b1 * r) + ln_shc(b2 * r)).exp()
    };
    let res = integrate_adaptive(f, 0.0, upper, 24, &spec);
    if !res.converged {
        return Err(Error::Quadrature { xi: vec![b1, b2], zeta: vec![alpha], estimate: res.error });
    }
    Ok(res.value)
}

impl GaussianMixture {
    /// Q(f, f)(v) for the isotropic elastic kernel |u|^lambda / (4 pi) on
    /// the whole space. The sphere and direction integrals are done in
    /// closed form, leaving one radial integral per pair of components.
    pub fn collision(&self, v: &[f64], lambda: f64) -> Result<f64> {
        let t = self.temperature;
        let k = self.weights.len();
        let mut gain = 0.0;
        for i in 0..k {
            for j in 0..k {
                let (ai, aj) = (self.centers[i], self.centers[j]);
                let delta = (0..3).map(|a| 0.25 * (ai[a] - aj[a]).powi(2)).sum::<f64>().sqrt();
                let p = (0..3).map(|a| (v[a] - 0.5 * (ai[a] + aj[a])).powi(2)).sum::<f64>().sqrt();
                let c0 = (delta * delta + p * p) / t;
                let radial = radial_gaussian(2.0 + lambda, 0.5 / t, c0, delta / t, p / t)?;
                gain += self.weights[i] * self.weights[j] * radial;
            }
        }
        gain *= 4.0 * PI * (2.0 * PI * t).powi(-3);
        let mut rate = 0.0;
        for (c, a) in self.weights.iter().zip(&self.centers) {
            let rho = (0..3).map(|x| (v[x] - a[x]).powi(2)).sum::<f64>().sqrt();
            rate += c * radial_gaussian(2.0 + lambda, 0.5 / t, 0.5 * rho * rho / t, rho / t, 0.0)?;
        }
        rate *= 4.0 * PI * (2.0 * PI * t).powf(-1.5);
        Ok(gain - self.eval(v) * rate)
    }
}

/// argmin ||qu - x||_2 subject to C x = 0, from the dense KKT system
/// [I C^T; C 0] [x; nu] = [qu; 0] solved by LU.
pub fn nearest_conservative_dense(qu: &[f64], c: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = qu.len();
    let r = c.nrows();
    if r > 0 && c.ncols() != m {
        return Err(Error::GridMismatch(format!("constraint matrix has {} columns, vector has {m} entries", c.ncols())));
    }
    if r == 0 {
        return Ok(qu.to_vec());
    }
    let size = m + r;
    let mut kkt = DMatrix::zeros(size, size);
    for i in 0..m {
        kkt[(i, i)] = 1.0;
    }
    for a in 0..r {
        for j in 0..m {
            kkt[(m + a, j)] = c[(a, j)];
            kkt[(j, m + a)] = c[(a, j)];
        }
    }
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, m).copy_from_slice(qu);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("KKT system is singular; constraint rows are dependent".into()))?;
    Ok(sol.rows(0, m).iter().copied().collect())
}
