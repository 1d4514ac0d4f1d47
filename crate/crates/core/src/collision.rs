//! Spectral collision operator Q_u(g): the weighted convolution
//! Qhat(zeta_k) = (2 pi)^{-d/2} delta^d sum_m ghat(zeta_k - xi_m) ghat(xi_m) Ghat(xi_m, zeta_k)
//! over the refined lattice xi_m = m delta, followed by the inverse transform.

use crate::fft::CubeFft;
use crate::grid::{State, VelocityGrid};
use crate::kernel::{
    build_weight_table, partner_range, CacheStatus, ConvolutionLayout, KernelSpec, Storage, TableCache, TableConfig,
    WeightTable,
};
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Grid, kernel and weight table bound together for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CollisionWorkspace {
    grid: Arc<VelocityGrid>,
    spec: KernelSpec,
    table: Arc<WeightTable>,
    fft: CubeFft,
    scale: f64,
}

impl CollisionWorkspace {
    pub fn new(grid: Arc<VelocityGrid>, spec: KernelSpec, table: Arc<WeightTable>) -> Result<Self> {
        let key = table.key();
        if key.d as usize != grid.dim() || key.n as usize != grid.points() || key.half_width != grid.half_width() {
            return Err(Error::GridMismatch(format!(
                "weight table built for d = {}, n = {}, L = {}; grid has d = {}, n = {}, L = {}",
                key.d,
                key.n,
                key.half_width,
                grid.dim(),
                grid.points(),
                grid.half_width()
            )));
        }
        if key.lambda != spec.lambda() || key.beta != spec.beta() || spec.dim() != grid.dim() {
            return Err(Error::InvalidArgument("weight table was built for a different kernel".into()));
        }
        let layout = table.layout();
        let d = grid.dim();
        let fft = CubeFft::new(layout.padding * grid.points(), d);
        let scale = layout.spacing.powi(d as i32) / (2.0 * PI).powf(d as f64 / 2.0);
        Ok(CollisionWorkspace { grid, spec, table, fft, scale })
    }

    /// Build (or load from `cache`) the weight table and bind it.
    pub fn build(
        grid: Arc<VelocityGrid>,
        spec: KernelSpec,
        cfg: &TableConfig,
        cache: Option<&TableCache>,
    ) -> Result<(Self, CacheStatus)> {
        let (table, status) = match cache {
            Some(c) => c.load_or_build(&grid, &spec, cfg)?,
            None => (build_weight_table(&grid, &spec, cfg)?, CacheStatus::Miss),
        };
        Ok((CollisionWorkspace::new(grid, spec, Arc::new(table))?, status))
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn table(&self) -> &Arc<WeightTable> {
        &self.table
    }

    /// (2 pi)^{-d/2} delta^d.
    pub fn normalization(&self) -> f64 {
        self.scale
    }

    /// ghat on the refined lattice, a (p n - 1)^d box centred on mode 0.
    pub fn lattice_transform(&self, values: &[f64]) -> Vec<Complex64> {
        self.grid.padded_forward(values, self.table.layout().padding, &self.fft)
    }

    /// Qhat on the output box |k|_inf <= n/2 - 1 from lattice coefficients.
    pub fn q_hat_lattice(&self, lattice: &[Complex64]) -> Vec<Complex64> {
        let layout = self.table.layout();
        let len = layout.out_len();
        let centre = len / 2;
        let half: Vec<(usize, Complex64)> = (centre + 1..len)
            .into_par_iter()
            .map(|o| (o, self.scale * self.mode_sum(layout, lattice, layout.out_mode(o))))
            .collect();
        let mut out = vec![Complex64::default(); len];
        for (o, v) in half {
            out[o] = v;
            out[len - 1 - o] = v.conj();
        }
        out
    }

    fn mode_sum(&self, layout: &ConvolutionLayout, lattice: &[Complex64], k: [i64; 3]) -> Complex64 {
        match &self.table.storage {
            Storage::Full(values) => {
                let row = &values[layout.out_index(k) * layout.fine_len()..];
                convolve(layout, lattice, k, |m| row[layout.fine_index(m)])
            }
            Storage::Reduced(r) => {
                let (wa, wb) = layout.eta_coeffs.expect("reduced table without integer eta coefficients");
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
                let row = &r.gain[k2 * r.width * r.orders..(k2 + 1) * r.width * r.orders];
                let loss = &r.loss;
                let w_of = |m: [i64; 3]| [wa * k[0] - wb * m[0], wa * k[1] - wb * m[1], wa * k[2] - wb * m[2]];
                if r.orders == 1 {
                    convolve(layout, lattice, k, |m| {
                        let w = w_of(m);
                        let w2 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) as usize;
                        let m2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as usize;
                        row[w2] - loss[m2]
                    })
                } else {
                    let coeffs = self.table.angular_coeffs();
                    let d = layout.d;
                    let orders = r.orders;
                    convolve(layout, lattice, k, |m| {
                        let w = w_of(m);
                        let w2 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) as usize;
                        let m2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as usize;
                        let kw = (k[0] * w[0] + k[1] * w[1] + k[2] * w[2]) as f64;
                        let cos = if w2 == 0 { 1.0 } else { (kw / ((k2 * w2) as f64).sqrt()).clamp(-1.0, 1.0) };
                        let radial = &row[w2 * orders..(w2 + 1) * orders];
                        angular_sum(d, coeffs, cos, radial) - loss[m2]
                    })
                }
            }
        }
    }

    /// Qhat at the grid modes in FFT order; the Nyquist modes are zero.
    pub fn q_hat(&self, s: &State) -> Result<Vec<Complex64>> {
        self.check_state(s)?;
        let lattice = self.lattice_transform(s.values());
        Ok(self.to_grid_order(&self.q_hat_lattice(&lattice)))
    }

    /// Q_u(g) at the grid nodes.
    pub fn q_u(&self, s: &State) -> Result<Vec<f64>> {
        Ok(self.q_u_with_residue(s)?.0)
    }

    /// Q_u(g) together with the largest imaginary part left by the inverse
    /// transform (zero up to rounding since Qhat is Hermitian).
    pub fn q_u_with_residue(&self, s: &State) -> Result<(Vec<f64>, f64)> {
        let coeffs = self.q_hat(s)?;
        let field = self.grid.inverse(&coeffs)?;
        let residue = field.iter().fold(0.0f64, |acc, c| acc.max(c.im.abs()));
        Ok((field.into_iter().map(|c| c.re).collect(), residue))
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if **s.grid() != *self.grid {
            return Err(Error::GridMismatch("state and collision workspace use different grids".into()));
        }
        Ok(())
    }

    fn to_grid_order(&self, out: &[Complex64]) -> Vec<Complex64> {
        let layout = self.table.layout();
        let d = self.grid.dim();
        let mut coeffs = vec![Complex64::default(); self.grid.len()];
        for (o, v) in out.iter().enumerate() {
            let k = layout.out_mode(o);
            if let Some(idx) = self.grid.mode_index(&k[3 - d..]) {
                coeffs[idx] = *v;
            }
        }
        coeffs
    }
}

/// sum_l (angular weight)_l * radial_l at the given cosine.
fn angular_sum(d: usize, coeffs: &[f64], cos: f64, radial: &[f64]) -> f64 {
    let mut acc = radial[0] * coeffs[0];
    let (mut p0, mut p1) = (1.0, cos);
    for (l, r) in radial.iter().enumerate().skip(1) {
        let factor = if d == 3 { (2 * l + 1) as f64 } else { 2.0 };
        acc += factor * coeffs[l] * p1 * r;
        let next = if d == 3 {
            ((2 * l + 1) as f64 * cos * p1 - l as f64 * p0) / (l + 1) as f64
        } else {
            2.0 * cos * p1 - p0
        };
        p0 = p1;
        p1 = next;
    }
    acc
}

#[inline]
fn convolve<W: Fn([i64; 3]) -> f64>(layout: &ConvolutionLayout, lattice: &[Complex64], k: [i64; 3], weight: W) -> Complex64 {
    let p = layout.padding as i64;
    let r = partner_range(layout, k);
    let mut acc = Complex64::default();
    for m0 in r[0].0..=r[0].1 {
        for m1 in r[1].0..=r[1].1 {
            for m2 in r[2].0..=r[2].1 {
                let m = [m0, m1, m2];
                let partner = [p * k[0] - m0, p * k[1] - m1, p * k[2] - m2];
                let g = lattice[layout.fine_index(partner)] * lattice[layout.fine_index(m)];
                acc += g * weight(m);
            }
        }
    }
    acc
}
