//! `W^(q)` and `Z^(q)` for any real `q`, by two independent methods, plus
//! the exit-time and potential-density formulas built from them.
//!
//! Method one sums the power series `Σ_n q^n W^{⊗(n+1)}`, truncated where
//! the factorial tail bound drops below the family tolerance (on the grid
//! the series even terminates: ⊗ is nilpotent). Method two marches the
//! Volterra equation
//!
//! ```text
//! f(y) = W(x, y) + q Σ_{x<u<y} f(u) W(u, y) m_u
//! ```
//!
//! forward in `y`, which is explicit because the sum only involves
//! already-computed values. Negative `q` runs through the same code paths;
//! that is the analytic extension everything downstream relies on.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, Grid};
use crate::kernel::{series_tail_bound, Kernel};
use crate::process::{BaseKernelPair, BoundaryMode, ProcessModel};

/// Denominators at or below this (relative) size are pole signals, not
/// numbers to divide by: for negative `q` they mean `q <= -λ₀` on the
/// interval in question.
pub const POLE_EPS: f64 = 1e-13;

/// Default per-entry series tolerance.
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SeriesInfo {
    /// Number of series terms `q^n W^{⊗(n+1)}`, n = 0 .. terms-1.
    pub terms: usize,
    /// Factorial tail bound for everything dropped.
    pub tail_bound: f64,
}

/// Which representation `g^(q)(x, ·) = E_·[e^{-q τ_x^-}]` is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GRoute {
    /// `Z^(q)(y, z_max) / Z^(q)(x, z_max)`; exact when the upper end is a
    /// real boundary killed only at 0, stable under truncation otherwise.
    ZRatio,
    /// `W^(q)(y, z_max) / W^(q)(x, z_max)`, the two-sided exit transform;
    /// exact in two-sided mode, a stabilized limit under truncation.
    WRatio,
}

/// A row of `Z^(q)(x, z_ref)` for `x` at or below the reference node.
#[derive(Debug, Clone)]
pub struct ZFunction {
    pub q: f64,
    pub z_ref: usize,
    values: Vec<f64>,
}

impl ZFunction {
    /// `Z^(q)(x_i, x_{z_ref})`; 1 for `i >= z_ref` (empty interval).
    pub fn value(&self, i: usize) -> f64 {
        if i >= self.z_ref {
            1.0
        } else {
            self.values[i]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The base pair plus everything needed to evaluate the `q`-family:
/// cached ⊗-powers, cached `W^(q)` kernels and the tail-bound data.
pub struct ScaleFamily {
    base: BaseKernelPair,
    mode: BoundaryMode,
    tol: f64,
    w_max: f64,
    wbar_max: f64,
    powers: Mutex<Vec<Kernel>>,
    by_q: Mutex<HashMap<u64, Kernel>>,
}

impl ScaleFamily {
    pub fn new(base: BaseKernelPair, mode: BoundaryMode, tol: f64) -> Result<ScaleFamily> {
        if !(tol > 0.0) {
            return Err(Error::Solver(format!("series tolerance must be > 0, got {tol}")));
        }
        let n = base.w0.grid().last();
        let w_max = base.w0.get(0, n);
        let masses = base.measure.masses();
        let wbar_max: f64 = (1..n).map(|k| base.w0.get(0, k) * masses[k]).sum();
        Ok(ScaleFamily {
            base,
            mode,
            tol,
            w_max,
            wbar_max,
            powers: Mutex::new(Vec::new()),
            by_q: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_model(model: &ProcessModel, tol: f64) -> Result<ScaleFamily> {
        ScaleFamily::new(model.base()?, model.boundary_mode, tol)
    }

    pub fn grid(&self) -> &Grid {
        self.base.w0.grid()
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.base.measure
    }

    pub fn w0(&self) -> &Kernel {
        &self.base.w0
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `W̄(0, x_N)`, the largest interior mass integral of the base row.
    pub fn wbar_max(&self) -> f64 {
        self.wbar_max
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    /// Terms needed so the dropped tail is below the family tolerance,
    /// capped at the nilpotency order of the grid.
    pub fn series_info(&self, q: f64) -> Result<SeriesInfo> {
        if !q.is_finite() {
            return Err(Error::Solver(format!("non-finite q = {q}")));
        }
        let cap = self.grid().last();
        let mut terms = 1usize;
        loop {
            let tail = series_tail_bound(self.w_max, self.wbar_max, q, terms)?;
            if tail <= self.tol || terms >= cap {
                let tail = if terms >= cap { 0.0 } else { tail };
                return Ok(SeriesInfo {
                    terms,
                    tail_bound: tail,
                });
            }
            terms += 1;
        }
    }

    fn ensure_powers(&self, count: usize) -> Result<Vec<Kernel>> {
        let mut powers = self.powers.lock().unwrap();
        while powers.len() < count {
            let next = match powers.last() {
                None => self.base.w0.clone(),
                Some(prev) => {
                    let mut k = crate::kernel::otimes(prev, &self.base.w0, &self.base.measure)?;
                    k.label = format!("W^⊗{}", powers.len() + 1);
                    if k.max_abs() == 0.0 {
                        // nilpotent from here on
                        powers.push(k);
                        break;
                    }
                    k
                }
            };
            powers.push(next);
        }
        Ok(powers.iter().take(count).cloned().collect())
    }

    /// `W^(q)` as the truncated power series (cached per `q`).
    pub fn scale_q_series(&self, q: f64) -> Result<Kernel> {
        if let Some(k) = self.by_q.lock().unwrap().get(&q.to_bits()) {
            return Ok(k.clone());
        }
        let info = self.series_info(q)?;
        let powers = self.ensure_powers(info.terms)?;
        let n = self.grid().last();
        let len = (n + 1) * (n + 2) / 2;
        let mut acc = vec![0.0f64; len];
        let mut qn = 1.0f64;
        for p in &powers {
            let mut off = 0usize;
            for i in 0..=n {
                let row = p.row(i);
                for (a, v) in acc[off..off + row.len()].iter_mut().zip(row) {
                    *a += qn * v;
                }
                off += row.len();
            }
            qn *= q;
        }
        let mut rows = Vec::with_capacity(n + 1);
        let mut off = 0usize;
        for i in 0..=n {
            rows.push(acc[off..off + (n + 1 - i)].to_vec());
            off += n + 1 - i;
        }
        let k = Kernel::from_rows(self.grid().clone(), rows, format!("W^(q) q={q}"))?;
        self.by_q.lock().unwrap().insert(q.to_bits(), k.clone());
        Ok(k)
    }

    /// One row of the series without materializing full power kernels:
    /// the iterated row `r_{p+1}(j) = Σ_k r_p(k) W(k, j) m_k`.
    pub fn scale_q_series_row(&self, q: f64, i: usize) -> Result<Vec<f64>> {
        let info = self.series_info(q)?;
        let n = self.grid().last();
        let w = &self.base.w0;
        let masses = self.base.measure.masses();
        let mut power_row: Vec<f64> = w.row(i).to_vec();
        let mut acc = power_row.clone();
        let mut qn = 1.0f64;
        for _ in 1..info.terms {
            qn *= q;
            let mut next = vec![0.0f64; n + 1 - i];
            for k in i + 1..n {
                let c = power_row[k - i] * masses[k];
                if c == 0.0 {
                    continue;
                }
                let wrow = w.row(k);
                for (o, wv) in next[k + 1 - i..].iter_mut().zip(&wrow[1..]) {
                    *o += c * wv;
                }
            }
            power_row = next;
            if power_row.iter().all(|v| *v == 0.0) {
                break;
            }
            for (a, v) in acc.iter_mut().zip(&power_row) {
                *a += qn * v;
            }
        }
        Ok(acc)
    }

    /// Row `W^(q)(x_i, ·)` by explicit forward marching of the Volterra
    /// equation; valid for any real `q`.
    pub fn scale_q_volterra_row(&self, q: f64, i: usize) -> Result<Vec<f64>> {
        if !q.is_finite() {
            return Err(Error::Solver(format!("non-finite q = {q}")));
        }
        let n = self.grid().last();
        let w = &self.base.w0;
        let masses = self.base.measure.masses();
        let w_row_i = w.row(i);
        let mut f = vec![0.0f64; n + 1 - i];
        let mut carried = vec![0.0f64; n + 1 - i];
        f[0] = w_row_i[0];
        for j in i + 1..=n {
            let fj = w_row_i[j - i] + carried[j - i];
            f[j - i] = fj;
            if j < n {
                let c = q * fj * masses[j];
                if c != 0.0 {
                    let wrow_j = w.row(j);
                    for (a, wv) in carried[j + 1 - i..].iter_mut().zip(&wrow_j[1..]) {
                        *a += c * wv;
                    }
                }
            }
        }
        Ok(f)
    }

    /// Full `W^(q)` by row-wise Volterra marching (rows in parallel).
    pub fn scale_q_volterra(&self, q: f64) -> Result<Kernel> {
        let n = self.grid().last();
        let rows: Result<Vec<Vec<f64>>> = (0..=n)
            .into_par_iter()
            .map(|i| self.scale_q_volterra_row(q, i))
            .collect();
        Kernel::from_rows(self.grid().clone(), rows?, format!("W^(q) volterra q={q}"))
    }

    /// Column `W^(q)(·, x_j)` by backward marching in the lower argument:
    /// `g(i) = W(i, j) + q Σ_{i<k<j} W(i, k) g(k) m_k`.
    pub fn scale_q_column(&self, q: f64, j: usize) -> Result<Vec<f64>> {
        if !q.is_finite() {
            return Err(Error::Solver(format!("non-finite q = {q}")));
        }
        let w = &self.base.w0;
        let masses = self.base.measure.masses();
        let mut g = vec![0.0f64; j + 1];
        g[j] = w.get(j, j);
        for i in (0..j).rev() {
            let row = w.row(i);
            let mut s = 0.0f64;
            for k in i + 1..j {
                s += row[k - i] * g[k] * masses[k];
            }
            g[i] = row[j - i] + q * s;
        }
        Ok(g)
    }

    /// `Z^(q)(x, ·)` table from a `W^(q)` kernel: running interior mass of
    /// each row, scaled by `q`, plus one.
    pub fn z_kernel_from(&self, wq: &Kernel, q: f64) -> Result<Kernel> {
        let n = self.grid().last();
        let masses = self.base.measure.masses();
        let rows: Vec<Vec<f64>> = (0..=n)
            .map(|i| {
                let wrow = wq.row(i);
                let mut out = vec![1.0f64; n + 1 - i];
                let mut acc = 0.0f64;
                for j in i + 2..=n {
                    acc += wrow[j - 1 - i] * masses[j - 1];
                    out[j - i] = 1.0 + q * acc;
                }
                out
            })
            .collect();
        Kernel::from_rows(self.grid().clone(), rows, format!("Z^(q) q={q}"))
    }

    /// `Z^(q)(x, z_ref)` for all `x <= z_ref`, through the `W^(q)` series.
    pub fn z_q(&self, q: f64, z_ref: usize) -> Result<ZFunction> {
        let wq = self.scale_q_series(q)?;
        let masses = self.base.measure.masses();
        let values: Vec<f64> = (0..=z_ref)
            .map(|i| {
                let wrow = wq.row(i);
                let mut acc = 0.0f64;
                for k in i + 1..z_ref {
                    acc += wrow[k - i] * masses[k];
                }
                1.0 + q * acc
            })
            .collect();
        Ok(ZFunction { q, z_ref, values })
    }

    /// `Z^(q)(·, z_ref)` by backward marching of its own Volterra equation
    /// `f(y) = 1 + q Σ_{y<u<z} W(y, u) f(u) m_u`; independent of [`z_q`].
    pub fn z_q_volterra(&self, q: f64, z_ref: usize) -> Result<ZFunction> {
        if !q.is_finite() {
            return Err(Error::Solver(format!("non-finite q = {q}")));
        }
        let w = &self.base.w0;
        let masses = self.base.measure.masses();
        let mut f = vec![1.0f64; z_ref + 1];
        for i in (0..z_ref).rev() {
            let row = w.row(i);
            let mut s = 0.0f64;
            for k in i + 1..z_ref {
                s += row[k - i] * f[k] * masses[k];
            }
            f[i] = 1.0 + q * s;
        }
        Ok(ZFunction {
            q,
            z_ref,
            values: f,
        })
    }

    /// `E_y[e^{-q τ_x^-}, τ_x^- < τ_z^+] = W^(q)(y, z) / W^(q)(x, z)`.
    ///
    /// Implemented as the literal ratio; a vanishing denominator at
    /// negative `q` signals `q <= -λ₀` on `[x, z]`.
    pub fn exit_laplace_down(&self, q: f64, x: usize, y: usize, z: usize) -> Result<f64> {
        if !(x < y && y <= z) {
            return Err(Error::Solver(format!("need x < y <= z, got ({x}, {y}, {z})")));
        }
        let col = self.scale_q_column(q, z)?;
        self.ratio_guarded(col[y], col[x], x, z)
    }

    /// `E_y[e^{-q τ_z^+}, τ_z^+ < τ_x^-]
    ///  = Z^(q)(y, z) − W^(q)(y, z)/W^(q)(x, z) · Z^(q)(x, z)`.
    pub fn exit_laplace_up(&self, q: f64, x: usize, y: usize, z: usize) -> Result<f64> {
        if !(x < y && y < z) {
            return Err(Error::Solver(format!("need x < y < z, got ({x}, {y}, {z})")));
        }
        let col = self.scale_q_column(q, z)?;
        let ratio = self.ratio_guarded(col[y], col[x], x, z)?;
        let zf = self.z_q_volterra(q, z)?;
        Ok(zf.value(y) - ratio * zf.value(x))
    }

    fn ratio_guarded(&self, num: f64, den: f64, x: usize, z: usize) -> Result<f64> {
        let scale = self.base.w0.get(x, z).max(1.0);
        if den.abs() <= POLE_EPS * scale {
            return Err(Error::Pole(format!(
                "W^(q)({x}, {z}) = {den} vanished; q is at or below -λ₀ on this interval"
            )));
        }
        Ok(num / den)
    }

    /// Potential density (against `m`) of the process started at `y`,
    /// killed on exiting `(a, z)`, evaluated at `u`.
    pub fn potential_density_interval(
        &self,
        q: f64,
        a: usize,
        y: usize,
        z: usize,
        u: usize,
    ) -> Result<f64> {
        Ok(self.potential_density_interval_row(q, a, y, z)?[u])
    }

    /// The whole row `u = 0 ..= last` of [`Self::potential_density_interval`];
    /// zero outside `(a, z)` by construction.
    pub fn potential_density_interval_row(
        &self,
        q: f64,
        a: usize,
        y: usize,
        z: usize,
    ) -> Result<Vec<f64>> {
        if !(a < y && y < z) {
            return Err(Error::Solver(format!("need a < y < z, got ({a}, {y}, {z})")));
        }
        let ratio = self.exit_laplace_down(q, a, y, z)?;
        let row_a = self.scale_q_volterra_row(q, a)?;
        let row_y = self.scale_q_volterra_row(q, y)?;
        let n = self.grid().last();
        let mut out = vec![0.0f64; n + 1];
        for u in a + 1..z {
            let w_au = row_a[u - a];
            let w_yu = if u >= y { row_y[u - y] } else { 0.0 };
            out[u] = w_au * ratio - w_yu;
        }
        Ok(out)
    }

    /// Potential density of the process started at `y` killed at `τ_a^-`
    /// on the half line above `a`: `g^(q)(a, y) W^(q)(a, u) − W^(q)(y, u)`.
    pub fn potential_density_halfline_row(&self, q: f64, a: usize, y: usize) -> Result<Vec<f64>> {
        if a >= y {
            return Err(Error::Solver(format!("need a < y, got ({a}, {y})")));
        }
        let g = self.g_q(q, a, y, self.default_g_route())?;
        let row_a = self.scale_q_volterra_row(q, a)?;
        let row_y = self.scale_q_volterra_row(q, y)?;
        let n = self.grid().last();
        let mut out = vec![0.0f64; n + 1];
        for u in a + 1..=n {
            let w_au = row_a[u - a];
            let w_yu = if u >= y { row_y[u - y] } else { 0.0 };
            out[u] = g * w_au - w_yu;
        }
        Ok(out)
    }

    pub fn potential_density_halfline(&self, q: f64, a: usize, y: usize, u: usize) -> Result<f64> {
        Ok(self.potential_density_halfline_row(q, a, y)?[u])
    }

    /// Sensible default for how `g^(q)` is represented in this mode.
    pub fn default_g_route(&self) -> GRoute {
        match self.mode {
            BoundaryMode::AccessibleKillAtZeroOnly => GRoute::ZRatio,
            BoundaryMode::AccessibleBoth | BoundaryMode::InaccessibleUpper => GRoute::WRatio,
        }
    }

    /// `g^(q)(x, y) = E_y[e^{-q τ_x^-}]` read at the top reference node.
    pub fn g_q(&self, q: f64, x: usize, y: usize, route: GRoute) -> Result<f64> {
        if x >= y {
            return Err(Error::Solver(format!("need x < y, got ({x}, {y})")));
        }
        Ok(self.g_row(q, x, route)?[y - x])
    }

    /// `g^(q)(x, u)` for `u = x ..= last` (1 at `u = x`).
    pub fn g_row(&self, q: f64, x: usize, route: GRoute) -> Result<Vec<f64>> {
        let n = self.grid().last();
        match route {
            GRoute::ZRatio => {
                let zf = self.z_q_volterra(q, n)?;
                let den = zf.value(x);
                if den.abs() <= POLE_EPS {
                    return Err(Error::Pole(format!(
                        "Z^(q)(x_{x}) = {den} vanished; q at or below -λ₀^[x]"
                    )));
                }
                Ok((x..=n).map(|u| zf.value(u) / den).collect())
            }
            GRoute::WRatio => {
                let col = self.scale_q_column(q, n)?;
                let den = col[x];
                let scale = self.base.w0.get(x, n).max(1.0);
                if den.abs() <= POLE_EPS * scale {
                    return Err(Error::Pole(format!(
                        "W^(q)(x_{x}, z_max) = {den} vanished; q at or below -λ₀^[x]"
                    )));
                }
                Ok((x..=n).map(|u| col[u] / den).collect())
            }
        }
    }

    /// How much `g^(q)(x, y)` moves when the reference node drops to
    /// three quarters of the grid — the truncation-stabilization proxy.
    pub fn g_q_z_sensitivity(&self, q: f64, x: usize, y: usize) -> Result<f64> {
        let n = self.grid().last();
        let z_lo = x.max(y) + (n - x.max(y)) * 3 / 4;
        if z_lo <= y {
            return Ok(f64::NAN);
        }
        let full = self.g_q(q, x, y, GRoute::WRatio)?;
        let col = self.scale_q_column(q, z_lo)?;
        let part = self.ratio_guarded(col[y], col[x], x, z_lo)?;
        Ok((full - part).abs() / full.abs().max(f64::MIN_POSITIVE))
    }
}

/// Relative deviation with an exact-zero fast path.
pub fn rel_dev(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Maximum relative entry deviation between two kernels on the same grid.
pub fn max_rel_deviation(a: &Kernel, b: &Kernel) -> f64 {
    let n = a.grid().last();
    let mut worst = 0.0f64;
    for i in 0..=n {
        for (x, y) in a.row(i).iter().zip(b.row(i)) {
            worst = worst.max(rel_dev(*x, *y));
        }
    }
    worst
}
