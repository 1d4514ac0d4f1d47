//! Velocity grid on the cube (-L, L)^d, its Fourier modes and transforms,
//! the spectral projection, discrete Sobolev norms and the choice of L.

use crate::fft::CubeFft;
use crate::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

/// Uniform midpoint grid on (-L, L)^d with matching Fourier modes
/// zeta_k = pi k / L, k in {-n/2, ..., n/2 - 1} per axis.
///
/// Node and coefficient arrays are row-major with the last axis fastest.
/// Coefficient arrays use FFT ordering along each axis: index i holds
/// mode k = i for i < n/2 and k = i - n otherwise.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    d: usize,
    n: usize,
    l: f64,
    dv: f64,
    axis: Vec<f64>,
    fft: CubeFft,
}

impl PartialEq for VelocityGrid {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n && self.l == other.l
    }
}

impl VelocityGrid {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("points per axis must be even and at least 8, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidArgument(format!("half-width must be positive and finite, got {l}")));
        }
        let dv = 2.0 * l / n as f64;
        let axis = (0..n).map(|i| -l + (i as f64 + 0.5) * dv).collect();
        Ok(VelocityGrid { d, n, l, dv, axis, fft: CubeFft::new(n, d) })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.l
    }

    pub fn spacing(&self) -> f64 {
        self.dv
    }

    /// Quadrature weight dv^d shared by every node.
    pub fn cell_volume(&self) -> f64 {
        self.dv.powi(self.d as i32)
    }

    /// Fourier mode spacing pi / L.
    pub fn mode_spacing(&self) -> f64 {
        PI / self.l
    }

    /// Node coordinates along one axis.
    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis
    }

    /// Total number of nodes n^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat node or coefficient index.
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.d).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    /// Velocity of a flat node index; unused trailing entries are zero.
    pub fn node(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut v = [0.0; 3];
        for a in 0..self.d {
            v[a] = self.axis[idx[a]];
        }
        v
    }

    /// Signed mode number for an FFT-ordered axis index.
    pub fn mode_number(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Signed mode multi-index of a flat coefficient index.
    pub fn mode(&self, flat: usize) -> [i64; 3] {
        let idx = self.unflatten(flat);
        let mut k = [0; 3];
        for a in 0..self.d {
            k[a] = self.mode_number(idx[a]);
        }
        k
    }

    /// Flat coefficient index of a signed mode, if it lies in the mode set.
    pub fn mode_index(&self, k: &[i64]) -> Option<usize> {
        let half = (self.n / 2) as i64;
        let mut flat = 0;
        for &ka in k.iter().take(self.d) {
            if ka < -half || ka >= half {
                return None;
            }
            let i = if ka < 0 { ka + self.n as i64 } else { ka } as usize;
            flat = flat * self.n + i;
        }
        Some(flat)
    }

    /// Sample a function at every node.
    pub fn sample<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Vec<f64> {
        (0..self.len()).map(|j| f(&self.node(j)[..self.d])).collect()
    }

    /// Midpoint-rule integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Discrete L2 norm of nodal values.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        (values.iter().map(|x| x * x).sum::<f64>() * self.cell_volume()).sqrt()
    }

    fn phase(&self, k: i64) -> Complex64 {
        // e^{-i zeta_k v_j} = phase(k) e^{-2 pi i k j / n} for midpoint nodes
        Complex64::from_polar(1.0, PI * k as f64 * (1.0 - 1.0 / self.n as f64))
    }

    fn phase_table(&self) -> Vec<Complex64> {
        (0..self.n).map(|i| self.phase(self.mode_number(i))).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::GridMismatch(format!("expected {} values, got {len}", self.len())));
        }
        Ok(())
    }

    fn check_finite(&self, values: &[f64]) -> Result<()> {
        if let Some(j) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { node: self.unflatten(j)[..self.d].to_vec(), value: values[j] });
        }
        Ok(())
    }

    /// ghat(zeta_k) = (2 pi)^{-d/2} sum_j g(v_j) e^{-i zeta_k . v_j} dv^d.
    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        self.check_finite(values)?;
        let mut buf: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward(&mut buf);
        let scale = self.cell_volume() / (2.0 * PI).powf(self.d as f64 / 2.0);
        let ph = self.phase_table();
        self.apply_phases(&mut buf, &ph, scale);
        Ok(buf)
    }

    /// g(v_j) = (2 pi)^{d/2} / (2L)^d sum_k ghat(zeta_k) e^{i zeta_k . v_j}.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        let mut buf = coeffs.to_vec();
        let ph: Vec<Complex64> = self.phase_table().iter().map(|p| p.conj()).collect();
        let scale = (2.0 * PI).powf(self.d as f64 / 2.0) / (2.0 * self.l).powi(self.d as i32);
        self.apply_phases(&mut buf, &ph, scale);
        self.fft.inverse(&mut buf);
        Ok(buf)
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.inverse(coeffs)?.into_iter().map(|c| c.re).collect())
    }

    fn apply_phases(&self, buf: &mut [Complex64], ph: &[Complex64], scale: f64) {
        for (flat, c) in buf.iter_mut().enumerate() {
            let idx = self.unflatten(flat);
            let mut p = Complex64::new(scale, 0.0);
            for &i in idx.iter().take(self.d) {
                p *= ph[i];
            }
            *c *= p;
        }
    }

    /// Midpoint Fourier transform on the refined lattice xi_j = j pi / (p L),
    /// |j|_inf <= p n / 2 - 1, stored as a (p n - 1)^d box indexed by j + p n/2 - 1.
    pub(crate) fn padded_forward(&self, values: &[f64], p: usize, fft: &CubeFft) -> Vec<Complex64> {
        let m = p * self.n;
        let f = m / 2 - 1;
        let w = 2 * f + 1;
        let d = self.d;
        let mut buf = vec![Complex64::default(); m.pow(d as u32)];
        for (j, &x) in values.iter().enumerate() {
            let idx = self.unflatten(j);
            let mut flat = 0;
            for &i in idx.iter().take(d) {
                flat = flat * m + i;
            }
            buf[flat] = Complex64::new(x, 0.0);
        }
        fft.forward(&mut buf);
        let scale = self.cell_volume() / (2.0 * PI).powf(d as f64 / 2.0);
        let ph: Vec<Complex64> = (0..w)
            .map(|i| {
                let j = i as f64 - f as f64;
                Complex64::from_polar(1.0, PI * j * (1.0 - 1.0 / self.n as f64) / p as f64)
            })
            .collect();
        let mut out = vec![Complex64::default(); w.pow(d as u32)];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut rem = o;
            let mut src = 0;
            let mut stride = 1;
            let mut phase = Complex64::new(scale, 0.0);
            for _ in 0..d {
                let i = rem % w;
                rem /= w;
                let j = i as i64 - f as i64;
                let wrapped = if j < 0 { (j + m as i64) as usize } else { j as usize };
                src += wrapped * stride;
                stride *= m;
                phase *= ph[i];
            }
            *slot = buf[src] * phase;
        }
        out
    }
}

/// Distribution values on a grid at time `t`, with lazily computed
/// Fourier coefficients.
#[derive(Debug, Clone)]
pub struct State {
    grid: Arc<VelocityGrid>,
    values: Vec<f64>,
    coeffs: OnceLock<Vec<Complex64>>,
    pub t: f64,
}

impl State {
    pub fn new(grid: Arc<VelocityGrid>, values: Vec<f64>, t: f64) -> Result<Self> {
        grid.check_len(values.len())?;
        grid.check_finite(&values)?;
        Ok(State { grid, values, coeffs: OnceLock::new(), t })
    }

    pub fn zeros(grid: Arc<VelocityGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        State { grid, values, coeffs: OnceLock::new(), t: 0.0 }
    }

    /// Sample `f` at the nodes.
    pub fn from_fn<F: FnMut(&[f64]) -> f64>(grid: Arc<VelocityGrid>, f: F) -> Result<Self> {
        let values = grid.sample(f);
        State::new(grid, values, 0.0)
    }

    /// Real part of the inverse transform of `coeffs`.
    pub fn from_coefficients(grid: Arc<VelocityGrid>, coeffs: &[Complex64], t: f64) -> Result<Self> {
        let values = grid.inverse_real(coeffs)?;
        State::new(grid, values, t)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable nodal values; invalidates the cached coefficients.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.coeffs = OnceLock::new();
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Whether the coefficient cache currently holds the transform of the values.
    pub fn is_synchronized(&self) -> bool {
        self.coeffs.get().is_some()
    }

    /// Fourier coefficients, computed on first use.
    pub fn coefficients(&self) -> Result<&[Complex64]> {
        if let Some(c) = self.coeffs.get() {
            return Ok(c);
        }
        let c = self.grid.forward(&self.values)?;
        Ok(self.coeffs.get_or_init(|| c))
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }
}

/// Forward transform of a state (see [`VelocityGrid::forward`]).
pub fn forward_transform(s: &State) -> Result<Vec<Complex64>> {
    Ok(s.coefficients()?.to_vec())
}

/// Nodal values from coefficients (real part of the inverse transform).
pub fn inverse_transform(grid: &VelocityGrid, coeffs: &[Complex64]) -> Result<Vec<f64>> {
    grid.inverse_real(coeffs)
}

/// Zero every coefficient with |k|_inf > `n_keep`.
pub fn project_coefficients(grid: &VelocityGrid, coeffs: &mut [Complex64], n_keep: usize) {
    let n_keep = n_keep as i64;
    for (flat, c) in coeffs.iter_mut().enumerate() {
        if grid.mode(flat).iter().any(|k| k.abs() > n_keep) {
            *c = Complex64::default();
        }
    }
}

/// Spectral projection: coefficients with |k|_inf > `n_keep` removed.
pub fn project(s: &State, n_keep: usize) -> Result<State> {
    let grid = s.grid();
    if n_keep > grid.points() / 2 {
        return Err(Error::InvalidArgument(format!(
            "mode cutoff {n_keep} exceeds n/2 = {}",
            grid.points() / 2
        )));
    }
    let mut c = s.coefficients()?.to_vec();
    project_coefficients(grid, &mut c, n_keep);
    let out = State::from_coefficients(grid.clone(), &c, s.t)?;
    let _ = out.coeffs.set(c);
    Ok(out)
}

/// Spectral derivative d^beta g, beta a per-axis derivative order.
/// The Nyquist coefficient is dropped along axes with odd order.
pub fn derivative(s: &State, beta: &[u32]) -> Result<Vec<f64>> {
    let grid = s.grid();
    if beta.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!("derivative order needs {} entries", grid.dim())));
    }
    let half = (grid.points() / 2) as i64;
    let dz = grid.mode_spacing();
    let mut c = s.coefficients()?.to_vec();
    for (flat, x) in c.iter_mut().enumerate() {
        let k = grid.mode(flat);
        let mut factor = Complex64::new(1.0, 0.0);
        for (a, &b) in beta.iter().enumerate() {
            if b == 0 {
                continue;
            }
            if b % 2 == 1 && k[a] == -half {
                factor = Complex64::default();
                break;
            }
            factor *= Complex64::new(0.0, k[a] as f64 * dz).powu(b);
        }
        *x *= factor;
    }
    grid.inverse_real(&c)
}

/// Discrete H^alpha_k norm: sqrt of the sum over beta <= alpha (per axis)
/// of ||<v>^k d^beta g||_2^2, derivatives taken spectrally.
pub fn sobolev_norm(s: &State, alpha: &[u32], k: f64) -> Result<f64> {
    let grid = s.grid();
    if alpha.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!("derivative order needs {} entries", grid.dim())));
    }
    let weight: Vec<f64> = grid.sample(|v| (1.0 + v.iter().map(|x| x * x).sum::<f64>()).powf(0.5 * k));
    let mut beta = vec![0u32; alpha.len()];
    let mut total = 0.0;
    loop {
        let dg = if beta.iter().all(|&b| b == 0) { s.values().to_vec() } else { derivative(s, &beta)? };
        total += dg.iter().zip(&weight).map(|(x, w)| (x * w).powi(2)).sum::<f64>() * grid.cell_volume();
        let mut a = 0;
        loop {
            if a == beta.len() {
                return Ok(total.sqrt());
            }
            if beta[a] < alpha[a] {
                beta[a] += 1;
                break;
            }
            beta[a] = 0;
            a += 1;
        }
    }
}

/// Band-limited (trigonometric) interpolation of `s` onto `target`, which
/// must share the dimension and half-width.
pub fn resample(s: &State, target: &Arc<VelocityGrid>) -> Result<State> {
    let src = s.grid();
    if src.dim() != target.dim() || src.half_width() != target.half_width() {
        return Err(Error::GridMismatch("resampling needs equal dimension and half-width".into()));
    }
    let d = src.dim();
    let (ns, nt) = (src.points(), target.points());
    let scale = (2.0 * PI).powf(d as f64 / 2.0) / (2.0 * src.half_width()).powi(d as i32);
    // matrix e^{i zeta_k x_t}, rows target nodes, columns FFT-ordered source modes
    let mat: Vec<Complex64> = target
        .axis_nodes()
        .iter()
        .flat_map(|&x| (0..ns).map(move |i| (i, x)))
        .map(|(i, x)| Complex64::from_polar(1.0, src.mode_number(i) as f64 * src.mode_spacing() * x))
        .collect();
    let mut data = s.coefficients()?.to_vec();
    let mut shape = vec![ns; d];
    for axis in 0..d {
        let before: usize = shape[..axis].iter().product();
        let after: usize = shape[axis + 1..].iter().product();
        let mut out = vec![Complex64::default(); before * nt * after];
        for b in 0..before {
            for t in 0..nt {
                let row = &mat[t * ns..(t + 1) * ns];
                for a in 0..after {
                    let mut acc = Complex64::default();
                    for (i, m) in row.iter().enumerate() {
                        acc += m * data[(b * ns + i) * after + a];
                    }
                    out[(b * nt + t) * after + a] = acc;
                }
            }
        }
        data = out;
        shape[axis] = nt;
    }
    State::new(target.clone(), data.iter().map(|c| c.re * scale).collect(), s.t)
}

/// Result of [`choose_domain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainChoice {
    pub half_width: f64,
    /// True when the support radius, not the tail tolerance, fixed L.
    pub support_limited: bool,
}

struct AxisTail {
    /// probability outside (-L, L)
    mass_out: f64,
    /// second moment about 0 outside (-L, L)
    second_out: f64,
    /// second moment about 0 over the real line
    second: f64,
}

fn axis_tail(a: f64, t: f64, l: f64) -> AxisTail {
    let s = t.sqrt();
    let z1 = (-l - a) / s;
    let z2 = (l - a) / s;
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let upper = |z: f64| 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    let (right, left) = (upper(z2), upper(-z1));
    let right2 = a * a * right + 2.0 * a * s * pdf(z2) + t * (right + z2 * pdf(z2));
    let left2 = a * a * left - 2.0 * a * s * pdf(z1) + t * (left - z1 * pdf(z1));
    AxisTail { mass_out: right + left, second_out: right2 + left2, second: a * a + t }
}

/// Integral of C * M[m0, u0, T0] <v>^2 over the complement of (-L, L)^d.
pub fn maxwellian_tail(d: usize, m0: f64, u0: &[f64], t0: f64, c: f64, l: f64) -> f64 {
    let tails: Vec<AxisTail> = (0..d).map(|j| axis_tail(u0.get(j).copied().unwrap_or(0.0), t0, l)).collect();
    // 1 - prod(1 - q) without cancellation
    let outside_excluding = |skip: Option<usize>| {
        let s: f64 = tails
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, tl)| (-tl.mass_out).ln_1p())
            .sum();
        -s.exp_m1()
    };
    let mut total = outside_excluding(None);
    for (j, tl) in tails.iter().enumerate() {
        let inside_second = tl.second - tl.second_out;
        total += tl.second_out + inside_second * outside_excluding(Some(j));
    }
    c * m0 * total
}

/// Smallest L with supp f0 inside (-L, L)^d and the C-dilated Maxwellian
/// tail of <v>^2 mass at most mu times its whole-space value
/// m0 (1 + |u0|^2 + d T0). T0 is the per-axis temperature.
pub fn choose_domain(
    d: usize,
    m0: f64,
    u0: &[f64],
    t0: f64,
    c: f64,
    mu: f64,
    supp_radius: f64,
) -> Result<DomainChoice> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if d != 2 && d != 3 {
        return bad(format!("dimension must be 2 or 3, got {d}"));
    }
    if !(m0 > 0.0 && m0.is_finite()) {
        return bad(format!("mass must be positive, got {m0}"));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return bad(format!("temperature must be positive, got {t0}"));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return bad(format!("tail tolerance must lie in (0, 1), got {mu}"));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return bad(format!("dilating constant must be at least 1, got {c}"));
    }
    if !(supp_radius >= 0.0 && supp_radius.is_finite()) {
        return bad(format!("support radius must be nonnegative, got {supp_radius}"));
    }
    if u0.len() != d || u0.iter().any(|x| !x.is_finite()) {
        return bad(format!("mean velocity needs {d} finite entries"));
    }
    let speed2: f64 = u0.iter().map(|x| x * x).sum();
    let target = mu * m0 * (1.0 + speed2 + d as f64 * t0);
    let tail = |l: f64| maxwellian_tail(d, m0, u0, t0, c, l);
    let l_tail = if tail(0.0) <= target {
        0.0
    } else {
        let mut hi = speed2.sqrt() + t0.sqrt();
        while tail(hi) > target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        while hi - lo > 1e-13 * hi {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    Ok(if supp_radius >= l_tail {
        DomainChoice { half_width: supp_radius, support_limited: true }
    } else {
        DomainChoice { half_width: l_tail, support_limited: false }
    })
}
