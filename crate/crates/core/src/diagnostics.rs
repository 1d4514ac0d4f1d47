//! Moments, Maxwellians, error norms, negative mass, entropy and the
//! collision tail bound.

use crate::collision::CollisionWorkspace;
use crate::grid::{sobolev_norm, State, VelocityGrid};
use crate::{Error, Result};
use std::f64::consts::PI;
use std::sync::Arc;

/// Moments of a field at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    /// (1/2) int g |v|^2
    pub energy: f64,
    /// (k, m_k) with m_k = int |g| |v|^{lambda k}
    pub generalized: Vec<(f64, f64)>,
}

impl MomentSet {
    /// Mean velocity u0 = momentum / mass.
    pub fn mean_velocity(&self) -> Vec<f64> {
        self.momentum.iter().map(|p| p / self.mass).collect()
    }

    /// Per-axis temperature T0 with energy = m0 (|u0|^2 + d T0) / 2.
    pub fn temperature(&self) -> f64 {
        let u = self.mean_velocity();
        let d = self.momentum.len() as f64;
        (2.0 * self.energy / self.mass - u.iter().map(|x| x * x).sum::<f64>()) / d
    }

    pub fn generalized_moment(&self, k: f64) -> Option<f64> {
        self.generalized.iter().find(|(kk, _)| *kk == k).map(|(_, m)| *m)
    }
}

/// Midpoint-rule moments of `s`; `k_list` orders use exponent lambda k.
pub fn moments(s: &State, lambda: f64, k_list: &[f64]) -> MomentSet {
    let grid = s.grid();
    let d = grid.dim();
    let w = grid.cell_volume();
    let mut mass = 0.0;
    let mut momentum = vec![0.0; d];
    let mut energy = 0.0;
    let mut generalized: Vec<(f64, f64)> = k_list.iter().map(|&k| (k, 0.0)).collect();
    for (j, &g) in s.values().iter().enumerate() {
        let v = grid.node(j);
        let r2: f64 = v[..d].iter().map(|x| x * x).sum();
        mass += g;
        for a in 0..d {
            momentum[a] += g * v[a];
        }
        energy += g * r2;
        for (k, m) in generalized.iter_mut() {
            *m += g.abs() * r2.powf(0.5 * lambda * *k);
        }
    }
    momentum.iter_mut().for_each(|p| *p *= w);
    generalized.iter_mut().for_each(|(_, m)| *m *= w);
    MomentSet { t: s.t, mass: mass * w, momentum, energy: 0.5 * energy * w, generalized }
}

/// M[m0, u0, T0](v) = m0 (2 pi T0)^{-d/2} exp(-|v - u0|^2 / (2 T0)) at the nodes.
pub fn maxwellian(grid: Arc<VelocityGrid>, m0: f64, u0: &[f64], t0: f64) -> Result<State> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {t0}")));
    }
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::InvalidArgument(format!("mass must be positive, got {m0}")));
    }
    let d = grid.dim();
    if u0.len() != d {
        return Err(Error::InvalidArgument(format!("mean velocity needs {d} entries, got {}", u0.len())));
    }
    let norm = m0 / (2.0 * PI * t0).powf(d as f64 / 2.0);
    State::from_fn(grid, |v| {
        let r2: f64 = v.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum();
        norm * (-0.5 * r2 / t0).exp()
    })
}

/// Maxwellian with the mass, momentum and energy of `s`.
pub fn equilibrium_of(s: &State) -> Result<State> {
    let m = moments(s, 0.0, &[]);
    maxwellian(s.grid().clone(), m.mass, &m.mean_velocity(), m.temperature())
}

/// ||min(g, 0)||_2.
pub fn negative_part_norm(s: &State) -> f64 {
    let neg: Vec<f64> = s.values().iter().map(|&x| x.min(0.0)).collect();
    s.grid().l2_norm(&neg)
}

/// int g+ log g+ over the nodes where g > 0.
pub fn entropy(s: &State) -> f64 {
    s.values().iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>() * s.grid().cell_volume()
}

/// Distances between two fields on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    /// ||(s - ref) <v>^k||_2
    pub l2_k: f64,
    /// discrete H^alpha_k norm of s - ref
    pub h_alpha_k: f64,
}

/// Weighted L2 and Sobolev distances between `s` and `reference`.
pub fn error_norms(s: &State, reference: &State, k: f64, alpha: &[u32]) -> Result<ErrorNorms> {
    if **s.grid() != **reference.grid() {
        return Err(Error::GridMismatch("error norms need states on the same grid".into()));
    }
    let grid = s.grid();
    let diff: Vec<f64> = s.values().iter().zip(reference.values()).map(|(a, b)| a - b).collect();
    let diff = State::new(grid.clone(), diff, s.t)?;
    let zero = vec![0; grid.dim()];
    Ok(ErrorNorms { l2_k: sobolev_norm(&diff, &zero, k)?, h_alpha_k: sobolev_norm(&diff, alpha, k)? })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Z_k = sum_{j=0}^{k-1} C(k, j) m_{j+1} m_{k-j}, with `m[i]` = m_i.
pub fn z_k(m: &[f64], k: usize) -> f64 {
    (0..k).map(|j| binomial(k, j) * m[j + 1] * m[k - j]).sum()
}

/// Both sides of the collision tail estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailReport {
    /// |sum of Q_u outside the inner window| times the cell volume
    pub tail: f64,
    /// L'^{-lambda k} [(m_{k+1} m_0 + m_k m_1) + 2 ||b||_1 (m_{k+1} m_0 + Z_k)]
    pub bound: f64,
    pub ratio: f64,
}

/// Right side of the tail estimate for moments `m[0..=k+1]`.
pub fn tail_bound(m: &[f64], k: usize, lambda: f64, inner: f64) -> f64 {
    let loss = m[k + 1] * m[0] + m[k] * m[1];
    let gain = 2.0 * (m[k + 1] * m[0] + z_k(m, k));
    inner.powf(-lambda * k as f64) * (loss + gain)
}

/// Compare the collision mass outside (-L', L')^d with its moment bound.
pub fn tail_moment_bound_check(s: &State, ws: &CollisionWorkspace, k: usize, inner: f64) -> Result<TailReport> {
    let grid = s.grid();
    if !(inner > 0.0 && inner <= grid.half_width()) {
        return Err(Error::InvalidArgument(format!("inner window must lie in (0, L], got {inner}")));
    }
    let lambda = ws.spec().lambda();
    let q = ws.q_u(s)?;
    let d = grid.dim();
    let outside: f64 = q
        .iter()
        .enumerate()
        .filter(|(j, _)| grid.node(*j)[..d].iter().any(|x| x.abs() >= inner))
        .map(|(_, x)| x)
        .sum();
    let tail = (outside * grid.cell_volume()).abs();
    let orders: Vec<f64> = (0..=k + 1).map(|i| i as f64).collect();
    let ms = moments(s, lambda, &orders);
    let m: Vec<f64> = ms.generalized.iter().map(|(_, v)| *v).collect();
    let bound = tail_bound(&m, k, lambda, inner);
    Ok(TailReport { tail, bound, ratio: tail / bound })
}
