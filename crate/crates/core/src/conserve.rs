//! Conservation correction: the L2-nearest field to Q_u whose discrete
//! collision invariants (mass, momentum and, for elastic collisions,
//! energy) vanish.

use crate::grid::VelocityGrid;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::Arc;

/// Which invariants are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Mass, momentum and energy.
    Elastic,
    /// Mass and momentum only.
    Inelastic,
}

impl ConstraintKind {
    pub fn rows(self, d: usize) -> usize {
        match self {
            ConstraintKind::Elastic => d + 2,
            ConstraintKind::Inelastic => d + 1,
        }
    }
}

/// Integration matrix C with rows w_j psi_i(v_j), psi = (1, v_1, .., v_d, |v|^2),
/// and the Cholesky factor of C C^T.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    grid: Arc<VelocityGrid>,
    kind: ConstraintKind,
    c: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
}

/// Multipliers gamma of the correction Q_c = Q_u + C^T gamma / 2.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeMultipliers {
    pub gamma: Vec<f64>,
}

fn invariant(kind: ConstraintKind, d: usize, row: usize, v: &[f64; 3]) -> f64 {
    match row {
        0 => 1.0,
        r if r <= d => v[r - 1],
        _ => {
            debug_assert_eq!(kind, ConstraintKind::Elastic);
            v[..d].iter().map(|x| x * x).sum()
        }
    }
}

/// Assemble C for `grid` and factor its Gram matrix.
pub fn build_constraints(grid: Arc<VelocityGrid>, kind: ConstraintKind) -> Result<ConstraintSystem> {
    let d = grid.dim();
    let rows = kind.rows(d);
    let w = grid.cell_volume();
    let mut c = DMatrix::zeros(rows, grid.len());
    for j in 0..grid.len() {
        let node = grid.node(j);
        for r in 0..rows {
            c[(r, j)] = w * invariant(kind, d, r, &node);
        }
    }
    let gram = Cholesky::new(&c * c.transpose())
        .ok_or_else(|| Error::Singular("constraint Gram matrix is not positive definite".into()))?;
    Ok(ConstraintSystem { grid, kind, c, gram })
}

impl ConstraintSystem {
    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!("expected {} values, got {}", self.grid.len(), x.len())));
        }
        Ok(())
    }

    /// C x: discrete mass, momentum and (elastic) energy moments of x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.rows()).map(|r| self.c.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect())
    }

    /// Q_c = Q_u + C^T gamma / 2 with gamma = -2 (C C^T)^{-1} C Q_u.
    pub fn conserve_discrete(&self, qu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.conserve_with_multipliers(qu)?.0)
    }

    pub fn conserve_with_multipliers(&self, qu: &[f64]) -> Result<(Vec<f64>, LagrangeMultipliers)> {
        let moments = DVector::from_vec(self.apply(qu)?);
        let gamma = self.gram.solve(&moments) * -2.0;
        let mut out = qu.to_vec();
        for (r, g) in gamma.iter().enumerate() {
            let half = 0.5 * g;
            for (o, c) in out.iter_mut().zip(self.c.row(r).iter()) {
                *o += half * c;
            }
        }
        Ok((out, LagrangeMultipliers { gamma: gamma.iter().copied().collect() }))
    }
}

/// int_{-L}^{L} x^e dx.
fn axis_moment(l: f64, e: u32) -> f64 {
    if e % 2 == 1 {
        0.0
    } else {
        2.0 * l.powi(e as i32 + 1) / (e + 1) as f64
    }
}

/// The invariant psi_r as a list of (coefficient, per-axis exponents).
fn monomials(d: usize, r: usize) -> Vec<(f64, [u32; 3])> {
    match r {
        0 => vec![(1.0, [0; 3])],
        r if r <= d => {
            let mut e = [0; 3];
            e[r - 1] = 1;
            vec![(1.0, e)]
        }
        _ => (0..d)
            .map(|a| {
                let mut e = [0; 3];
                e[a] = 2;
                (1.0, e)
            })
            .collect(),
    }
}

/// Exact int over (-L, L)^d of psi_r psi_s.
fn exact_product_integral(d: usize, l: f64, r: usize, s: usize) -> f64 {
    let mut total = 0.0;
    for (cr, er) in monomials(d, r) {
        for (cs, es) in monomials(d, s) {
            total += cr * cs * (0..d).map(|a| axis_moment(l, er[a] + es[a])).product::<f64>();
        }
    }
    total
}

/// Continuous-moment variant: gamma solves A gamma = 2 b with A_rs the exact
/// integrals of psi_r psi_s over the box and b_r the (midpoint) moments of
/// Q_u; returns Q_c = Q_u - (1/2) sum_r gamma_r psi_r.
pub fn conserve_continuous(qu: &[f64], grid: &VelocityGrid, kind: ConstraintKind) -> Result<(Vec<f64>, LagrangeMultipliers)> {
    if qu.len() != grid.len() {
        return Err(Error::GridMismatch(format!("expected {} values, got {}", grid.len(), qu.len())));
    }
    let d = grid.dim();
    let rows = kind.rows(d);
    let l = grid.half_width();
    let a = DMatrix::from_fn(rows, rows, |r, s| exact_product_integral(d, l, r, s));
    let w = grid.cell_volume();
    let mut b = DVector::zeros(rows);
    for (j, q) in qu.iter().enumerate() {
        let node = grid.node(j);
        for r in 0..rows {
            b[r] += w * invariant(kind, d, r, &node) * q;
        }
    }
    let gamma = a
        .cholesky()
        .ok_or_else(|| Error::Singular("moment matrix is not positive definite".into()))?
        .solve(&(b * 2.0));
    let out = qu
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let node = grid.node(j);
            q - 0.5 * (0..rows).map(|r| gamma[r] * invariant(kind, d, r, &node)).sum::<f64>()
        })
        .collect();
    Ok((out, LagrangeMultipliers { gamma: gamma.iter().copied().collect() }))
}

/// ||(Q_c - Q_u) <v>^{lambda k}||_2 with <v> = sqrt(1 + |v|^2).
pub fn correction_magnitude(grid: &VelocityGrid, qu: &[f64], qc: &[f64], lambda: f64, k: f64) -> Result<f64> {
    if qu.len() != grid.len() || qc.len() != grid.len() {
        return Err(Error::GridMismatch("correction fields do not match the grid".into()));
    }
    let d = grid.dim();
    let sum: f64 = qu
        .iter()
        .zip(qc)
        .enumerate()
        .map(|(j, (u, c))| {
            let node = grid.node(j);
            let weight = (1.0 + node[..d].iter().map(|x| x * x).sum::<f64>()).powf(0.5 * lambda * k);
            ((c - u) * weight).powi(2)
        })
        .sum();
    Ok((sum * grid.cell_volume()).sqrt())
}
