//! Process catalog: base scale kernels, reference measures and a path
//! simulator for the supported process families.
//!
//! Two families are built in:
//!
//! * non-singular diffusions described by drift `b(x)` and diffusion
//!   `σ(x)`, via the classical scale function / speed measure pair, and
//! * spectrally positive Lévy processes of Brownian-with-drift type
//!   (optionally with compound-Poisson exponential jumps for simulation;
//!   the closed-form base kernel exists only in the continuous case).
//!
//! Both supply the same thing: the `q = 0` kernel `W(x, y)`, the reference
//! measure `m` the kernel algebra integrates against, and an Euler scheme
//! for Monte Carlo cross-checks.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::grid::{measure_from_density, DiscreteMeasure, Grid};
use crate::kernel::Kernel;

/// Drift or diffusion coefficient: constant, expression in `x`, or node samples.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Const(f64),
    Expr(CoefficientExpr),
    /// Samples at the model grid nodes; evaluated off-grid by linear
    /// interpolation (clamped at the ends).
    Samples(Vec<f64>),
}

impl Coefficient {
    pub fn expr(src: &str) -> Result<Coefficient> {
        Ok(Coefficient::Expr(CoefficientExpr::parse(src)?))
    }

    pub fn eval_on(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            Coefficient::Const(c) => Ok(vec![*c; grid.len()]),
            Coefficient::Expr(e) => e.eval_on(grid.nodes()),
            Coefficient::Samples(s) => {
                if s.len() != grid.len() {
                    return Err(Error::Catalog(format!(
                        "{} coefficient samples for {} nodes",
                        s.len(),
                        grid.len()
                    )));
                }
                Ok(s.clone())
            }
        }
    }

    pub fn eval_at(&self, grid: &Grid, x: f64) -> f64 {
        match self {
            Coefficient::Const(c) => *c,
            Coefficient::Expr(e) => e.eval(x),
            Coefficient::Samples(s) => {
                let nodes = grid.nodes();
                if x <= nodes[0] {
                    return s[0];
                }
                if x >= nodes[nodes.len() - 1] {
                    return s[s.len() - 1];
                }
                let j = nodes.partition_point(|&n| n <= x).min(nodes.len() - 1);
                let (x0, x1) = (nodes[j - 1], nodes[j]);
                let t = (x - x0) / (x1 - x0);
                s[j - 1] * (1.0 - t) + s[j] * t
            }
        }
    }
}

/// Where the state interval kills the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundaryMode {
    /// Killed at 0 only; the upper end is inaccessible (possibly a
    /// truncation stand-in for `+∞`).
    InaccessibleUpper,
    /// Killed at 0 and at the accessible upper end.
    AccessibleBoth,
    /// Upper end accessible but only hitting 0 kills.
    AccessibleKillAtZeroOnly,
}

#[derive(Debug, Clone)]
pub enum ProcessKind {
    Diffusion {
        drift: Coefficient,
        sigma: Coefficient,
    },
    SpectrallyPositiveLevy {
        /// Actual drift of the process (negative values drift toward 0);
        /// the Laplace exponent is `ψ(β) = σ²β²/2 − drift·β` plus the jump part.
        drift: f64,
        sigma: f64,
        /// Compound-Poisson intensity of positive jumps (0 for none).
        jump_rate: f64,
        /// Rate of the exponential jump-size law.
        jump_exp_rate: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ProcessModel {
    pub kind: ProcessKind,
    pub grid: Grid,
    pub boundary_mode: BoundaryMode,
}

impl ProcessModel {
    /// Brownian motion with drift as a spectrally positive Lévy process.
    pub fn brownian(grid: Grid, drift: f64, sigma: f64, boundary_mode: BoundaryMode) -> ProcessModel {
        ProcessModel {
            kind: ProcessKind::SpectrallyPositiveLevy {
                drift,
                sigma,
                jump_rate: 0.0,
                jump_exp_rate: 1.0,
            },
            grid,
            boundary_mode,
        }
    }

    pub fn diffusion(
        grid: Grid,
        drift: Coefficient,
        sigma: Coefficient,
        boundary_mode: BoundaryMode,
    ) -> ProcessModel {
        ProcessModel {
            kind: ProcessKind::Diffusion { drift, sigma },
            grid,
            boundary_mode,
        }
    }

    /// Base kernel / measure pair for whichever family the model is.
    pub fn base(&self) -> Result<BaseKernelPair> {
        match &self.kind {
            ProcessKind::Diffusion { .. } => diffusion_base(self),
            ProcessKind::SpectrallyPositiveLevy { .. } => levy_base(self),
        }
    }
}

/// The `q = 0` scale kernel together with the reference measure.
#[derive(Debug, Clone)]
pub struct BaseKernelPair {
    pub w0: Kernel,
    pub measure: DiscreteMeasure,
}

impl BaseKernelPair {
    /// Structural checks: zero diagonal, positivity off the diagonal and
    /// monotonicity in both arguments.
    pub fn validate(&self) -> Result<()> {
        let n = self.w0.grid().last();
        for i in 0..=n {
            let row = self.w0.row(i);
            if row[0] != 0.0 {
                return Err(Error::Invariant(format!("W({i},{i}) = {} != 0", row[0])));
            }
            for d in 1..row.len() {
                if row[d] <= 0.0 {
                    return Err(Error::Invariant(format!(
                        "W({}, {}) = {} is not positive",
                        i,
                        i + d,
                        row[d]
                    )));
                }
                if row[d] < row[d - 1] {
                    return Err(Error::Invariant(format!(
                        "W({i}, ·) decreases at j = {}",
                        i + d
                    )));
                }
            }
        }
        for j in 1..=n {
            for i in 1..j {
                if self.w0.get(i, j) > self.w0.get(i - 1, j) {
                    return Err(Error::Invariant(format!("W(·, {j}) increases at i = {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Scale function values and speed density at the grid nodes:
/// `s'(x) = exp(-∫_{x_0}^x 2 b / σ²)`, `s(x) = ∫_{x_0}^x s'`, speed
/// density `2 / (σ² s')`, all by trapezoidal accumulation.
fn diffusion_scale_speed(model: &ProcessModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let ProcessKind::Diffusion { drift, sigma } = &model.kind else {
        return Err(Error::Catalog("not a diffusion model".into()));
    };
    let grid = &model.grid;
    let b = drift.eval_on(grid)?;
    let sg = sigma.eval_on(grid)?;
    if let Some((i, _)) = sg.iter().enumerate().find(|(_, &s)| s <= 0.0) {
        return Err(Error::Catalog(format!(
            "sigma must be positive, got {} at x = {}",
            sg[i],
            grid.node(i)
        )));
    }
    let nodes = grid.nodes();
    let n = grid.last();
    let g: Vec<f64> = (0..=n).map(|i| 2.0 * b[i] / (sg[i] * sg[i])).collect();
    let mut log_sp = vec![0.0; n + 1];
    for i in 1..=n {
        log_sp[i] = log_sp[i - 1] - 0.5 * (g[i - 1] + g[i]) * (nodes[i] - nodes[i - 1]);
    }
    let sp: Vec<f64> = log_sp.iter().map(|l| l.exp()).collect();
    if sp.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::Catalog(
            "scale derivative under/overflowed; rescale the interval".into(),
        ));
    }
    let mut s = vec![0.0; n + 1];
    for i in 1..=n {
        s[i] = s[i - 1] + 0.5 * (sp[i - 1] + sp[i]) * (nodes[i] - nodes[i - 1]);
    }
    let speed: Vec<f64> = (0..=n).map(|i| 2.0 / (sg[i] * sg[i] * sp[i])).collect();
    Ok((s, speed))
}

/// Scale-function / speed-measure pair for a non-singular diffusion,
/// normalized so that `s(x_0) = 0`.
pub fn diffusion_base(model: &ProcessModel) -> Result<BaseKernelPair> {
    let (s, speed) = diffusion_scale_speed(model)?;
    let w0 = Kernel::from_fn(&model.grid, "W", |i, j| s[j] - s[i]);
    let measure = measure_from_density(&model.grid, &speed, (0.0, 0.0))?;
    Ok(BaseKernelPair { w0, measure })
}

/// First kernel row `W(x_0, ·)` and the measure, without materializing the
/// O(N²) table — what truncation-doubling classification sweeps need.
pub fn base_first_row(model: &ProcessModel) -> Result<(Vec<f64>, DiscreteMeasure)> {
    match &model.kind {
        ProcessKind::Diffusion { .. } => {
            let (s, speed) = diffusion_scale_speed(model)?;
            let measure = measure_from_density(&model.grid, &speed, (0.0, 0.0))?;
            Ok((s, measure))
        }
        ProcessKind::SpectrallyPositiveLevy { .. } => {
            let grid = &model.grid;
            let x0 = grid.left_end();
            let row: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|&x| closed_form_wq(model, 0.0, x - x0))
                .collect::<Result<_>>()?;
            Ok((row, crate::grid::lebesgue(grid)))
        }
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `∫_(x_0, x_N) W(x_0, u) m(du)`, the boundary-classification integral.
///
/// For diffusions this is `∫ s(u) · speed(u) du` with `s` and `speed`
/// carrying opposite exponentials that can each overflow f64 long before
/// their product does (steep inward drift), so the pairing is done in log
/// space. Lévy catalog entries use the closed-form row directly.
pub fn classification_integral(model: &ProcessModel) -> Result<f64> {
    match &model.kind {
        ProcessKind::Diffusion { drift, sigma } => {
            let grid = &model.grid;
            let b = drift.eval_on(grid)?;
            let sg = sigma.eval_on(grid)?;
            if let Some((i, _)) = sg.iter().enumerate().find(|(_, &s)| s <= 0.0) {
                return Err(Error::Catalog(format!(
                    "sigma must be positive, got {} at x = {}",
                    sg[i],
                    grid.node(i)
                )));
            }
            let nodes = grid.nodes();
            let n = grid.last();
            // φ = log s' accumulated by trapezoid; ln s by log-sum-exp
            let mut phi = vec![0.0f64; n + 1];
            for i in 1..=n {
                let gim = 2.0 * b[i - 1] / (sg[i - 1] * sg[i - 1]);
                let gi = 2.0 * b[i] / (sg[i] * sg[i]);
                phi[i] = phi[i - 1] - 0.5 * (gim + gi) * (nodes[i] - nodes[i - 1]);
            }
            let mut ln_s = f64::NEG_INFINITY;
            let mut acc = 0.0f64;
            for i in 1..n {
                let step = nodes[i] - nodes[i - 1];
                let ln_inc = logaddexp(phi[i - 1], phi[i]) + (0.5 * step).ln();
                ln_s = logaddexp(ln_s, ln_inc);
                let ln_speed = (2.0 / (sg[i] * sg[i])).ln() - phi[i];
                acc += (ln_s + ln_speed).exp() * grid.cell_width(i);
            }
            Ok(acc)
        }
        ProcessKind::SpectrallyPositiveLevy { .. } => {
            let (row, measure) = base_first_row(model)?;
            let masses = measure.masses();
            let n = model.grid.last();
            Ok((1..n).map(|k| row[k] * masses[k]).sum())
        }
    }
}

/// Base kernel `W(x, y) = W̃(y - x)` and Lebesgue reference measure for a
/// spectrally positive Lévy model with a catalog closed form.
pub fn levy_base(model: &ProcessModel) -> Result<BaseKernelPair> {
    let ProcessKind::SpectrallyPositiveLevy { jump_rate, .. } = &model.kind else {
        return Err(Error::Catalog("levy_base needs a Lévy model".into()));
    };
    if *jump_rate != 0.0 {
        return Err(Error::Catalog(
            "no closed-form scale function for the requested Lévy triplet (jumps present); \
             only Brownian-with-drift is in the catalog"
                .into(),
        ));
    }
    let grid = &model.grid;
    let n = grid.last();
    let nodes = grid.nodes();
    // keep W(x, y) exactly translation invariant on uniform grids by
    // sampling W̃ per diagonal offset
    let h = (nodes[n] - nodes[0]) / n as f64;
    let uniform = nodes
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0));
    let w0 = if uniform {
        let diag: Vec<f64> = (0..=n)
            .map(|d| closed_form_wq(model, 0.0, d as f64 * h))
            .collect::<Result<_>>()?;
        Kernel::from_fn(grid, "W", |i, j| diag[j - i])
    } else {
        Kernel::from_fn(grid, "W", |i, j| {
            closed_form_wq(model, 0.0, nodes[j] - nodes[i]).unwrap_or(f64::NAN)
        })
    };
    let measure = crate::grid::lebesgue(grid);
    Ok(BaseKernelPair { w0, measure })
}

/// Closed-form `W̃^(q)(x)` for the Brownian-with-drift catalog entries.
///
/// With actual drift `μ` and diffusion `σ`, the Laplace exponent is
/// `ψ(β) = σ²β²/2 − μβ` and inverting `1/(ψ(β) − q)` by partial fractions
/// gives `W̃^(q)(x) = (2/Δ) e^{μx/σ²} sinh(xΔ/σ²)` with `Δ = √(μ² + 2qσ²)`,
/// continued through `Δ² < 0` by the matching sine form.
pub fn closed_form_wq(model: &ProcessModel, q: f64, x: f64) -> Result<f64> {
    let ProcessKind::SpectrallyPositiveLevy {
        drift,
        sigma,
        jump_rate,
        ..
    } = &model.kind
    else {
        return Err(Error::Catalog(
            "closed-form scale functions are available for the Lévy catalog only".into(),
        ));
    };
    if *jump_rate != 0.0 {
        return Err(Error::Catalog(
            "no closed-form scale function with jumps present".into(),
        ));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let s2 = sigma * sigma;
    let disc = drift * drift + 2.0 * q * s2;
    let envelope = (drift * x / s2).exp();
    let val = if disc > 1e-12 {
        let d = disc.sqrt();
        2.0 / d * envelope * (x * d / s2).sinh()
    } else if disc < -1e-12 {
        let d = (-disc).sqrt();
        2.0 / d * envelope * (x * d / s2).sin()
    } else {
        2.0 * x / s2 * envelope
    };
    Ok(val)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ExitSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PathRecord {
    /// First time the discrete path reached the killing set, if it did.
    pub exit_time: Option<f64>,
    pub exit_side: Option<ExitSide>,
    pub final_state: f64,
    pub steps: u64,
}

impl PathRecord {
    pub fn killed(&self) -> bool {
        self.exit_time.is_some()
    }
}

/// Euler–Maruyama path: Gaussian increment plus drift each step, plus
/// compound-Poisson positive jumps for Lévy models. Killing uses the
/// discrete crossing check (`X ≤ 0`, and `X ≥ ℓ` in two-sided mode) with
/// no bridge correction; the O(√dt) detection bias is the caller's to
/// control via the step size.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &ProcessModel,
    x0: f64,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<PathRecord> {
    simulate_with_checkpoints(model, x0, dt, horizon, &[], rng).map(|(p, _)| p)
}

/// As [`simulate_path`], additionally recording the state at the given
/// (sorted) checkpoint times; a checkpoint after death records `None`.
pub fn simulate_with_checkpoints<R: Rng + ?Sized>(
    model: &ProcessModel,
    x0: f64,
    dt: f64,
    horizon: f64,
    checkpoints: &[f64],
    rng: &mut R,
) -> Result<(PathRecord, Vec<Option<f64>>)> {
    if !(dt > 0.0) {
        return Err(Error::MonteCarlo(format!("need dt > 0, got {dt}")));
    }
    if horizon < 0.0 {
        return Err(Error::MonteCarlo(format!("negative horizon {horizon}")));
    }
    let lower = model.grid.left_end();
    let upper = model.grid.right_end();
    let kill_upper = model.boundary_mode == BoundaryMode::AccessibleBoth;
    if x0 < lower || (kill_upper && x0 > upper) {
        return Err(Error::MonteCarlo(format!(
            "x0 = {x0} outside the state interval [{lower}, {upper}]"
        )));
    }

    let mut snaps = vec![None; checkpoints.len()];
    let mut next_cp = 0usize;
    let record = |t: f64, x: f64, alive: bool, next_cp: &mut usize, snaps: &mut Vec<Option<f64>>| {
        while *next_cp < checkpoints.len() && checkpoints[*next_cp] <= t + 1e-12 * dt {
            snaps[*next_cp] = alive.then_some(x);
            *next_cp += 1;
        }
    };

    // already at (or on) a killing boundary
    if x0 <= lower {
        record(horizon, x0, false, &mut next_cp, &mut snaps);
        return Ok((
            PathRecord {
                exit_time: Some(0.0),
                exit_side: Some(ExitSide::Lower),
                final_state: x0,
                steps: 0,
            },
            snaps,
        ));
    }
    if kill_upper && x0 >= upper {
        record(horizon, x0, false, &mut next_cp, &mut snaps);
        return Ok((
            PathRecord {
                exit_time: Some(0.0),
                exit_side: Some(ExitSide::Upper),
                final_state: x0,
                steps: 0,
            },
            snaps,
        ));
    }

    let sdt = dt.sqrt();
    let n_steps = (horizon / dt).round() as u64;
    let mut x = x0;
    let mut t = 0.0f64;
    record(0.0, x, true, &mut next_cp, &mut snaps);

    match &model.kind {
        ProcessKind::SpectrallyPositiveLevy {
            drift,
            sigma,
            jump_rate,
            jump_exp_rate,
        } => {
            let mut next_jump = if *jump_rate > 0.0 {
                Exp::new(*jump_rate)
                    .map_err(|e| Error::MonteCarlo(e.to_string()))?
                    .sample(rng)
            } else {
                f64::INFINITY
            };
            let jump_size = if *jump_rate > 0.0 {
                Some(Exp::new(*jump_exp_rate).map_err(|e| Error::MonteCarlo(e.to_string()))?)
            } else {
                None
            };
            for k in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                x += drift * dt + sigma * sdt * z;
                t = (k + 1) as f64 * dt;
                while next_jump <= t {
                    x += jump_size.as_ref().unwrap().sample(rng);
                    next_jump += Exp::new(*jump_rate).unwrap().sample(rng);
                }
                if x <= lower {
                    record(horizon, x, false, &mut next_cp, &mut snaps);
                    return Ok((
                        PathRecord {
                            exit_time: Some(t),
                            exit_side: Some(ExitSide::Lower),
                            final_state: x,
                            steps: k + 1,
                        },
                        snaps,
                    ));
                }
                if kill_upper && x >= upper {
                    record(horizon, x, false, &mut next_cp, &mut snaps);
                    return Ok((
                        PathRecord {
                            exit_time: Some(t),
                            exit_side: Some(ExitSide::Upper),
                            final_state: x,
                            steps: k + 1,
                        },
                        snaps,
                    ));
                }
                record(t, x, true, &mut next_cp, &mut snaps);
            }
        }
        ProcessKind::Diffusion { drift, sigma } => {
            for k in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                let b = drift.eval_at(&model.grid, x);
                let s = sigma.eval_at(&model.grid, x);
                x += b * dt + s * sdt * z;
                t = (k + 1) as f64 * dt;
                if x <= lower {
                    record(horizon, x, false, &mut next_cp, &mut snaps);
                    return Ok((
                        PathRecord {
                            exit_time: Some(t),
                            exit_side: Some(ExitSide::Lower),
                            final_state: x,
                            steps: k + 1,
                        },
                        snaps,
                    ));
                }
                if kill_upper && x >= upper {
                    record(horizon, x, false, &mut next_cp, &mut snaps);
                    return Ok((
                        PathRecord {
                            exit_time: Some(t),
                            exit_side: Some(ExitSide::Upper),
                            final_state: x,
                            steps: k + 1,
                        },
                        snaps,
                    ));
                }
                record(t, x, true, &mut next_cp, &mut snaps);
            }
        }
    }
    let _ = t;
    Ok((
        PathRecord {
            exit_time: None,
            exit_side: None,
            final_state: x,
            steps: n_steps,
        },
        snaps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_uniform_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bm01() -> ProcessModel {
        let g = build_uniform_grid(0.0, 1.0, 100).unwrap();
        ProcessModel::brownian(g, 0.0, 1.0, BoundaryMode::AccessibleBoth)
    }

    #[test]
    fn diffusion_bm_scale_and_speed() {
        let g = build_uniform_grid(0.0, 1.0, 100).unwrap();
        let m = ProcessModel::diffusion(
            g.clone(),
            Coefficient::Const(0.0),
            Coefficient::Const(1.0),
            BoundaryMode::AccessibleBoth,
        );
        let base = diffusion_base(&m).unwrap();
        base.validate().unwrap();
        // w0(x, y) = y - x
        assert!((base.w0.get(10, 60) - 0.5).abs() < 1e-12);
        assert_eq!(base.w0.get(25, 25), 0.0);
        // speed density 2 => interior masses 2h
        assert!((base.measure.mass(50) - 0.02).abs() < 1e-14);
        // q = 0 exit identity is exact on the grid
        let (x, y, z) = (10usize, 35usize, 80usize);
        let ratio = base.w0.get(y, z) / base.w0.get(x, z);
        let exact = (g.node(z) - g.node(y)) / (g.node(z) - g.node(x));
        assert!((ratio - exact).abs() < 1e-13);
    }

    #[test]
    fn diffusion_cubic_drift_scale_derivative() {
        let g = build_uniform_grid(0.0, 3.0, 3000).unwrap();
        let m = ProcessModel::diffusion(
            g.clone(),
            Coefficient::expr("-x^3").unwrap(),
            Coefficient::Const(1.0),
            BoundaryMode::InaccessibleUpper,
        );
        let base = diffusion_base(&m).unwrap();
        base.validate().unwrap();
        // s'(x) = e^{x^4/2}: check s(1) against fine quadrature of the exponent
        let exact_s1 = {
            let n = 200_000;
            let h = 1.0 / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let u0 = k as f64 * h;
                let u1 = u0 + h;
                acc += 0.5 * ((u0.powi(4) / 2.0).exp() + (u1.powi(4) / 2.0).exp()) * h;
            }
            acc
        };
        let j = g.index_of(1.0).unwrap();
        assert!((base.w0.get(0, j) - exact_s1).abs() / exact_s1 < 1e-5);
        // tail integrand s(u)·speed(u) behaves like u^{-3}
        let ju = g.index_of(2.5).unwrap();
        let integrand = base.w0.get(0, ju) * 2.0 * (-g.node(ju).powi(4) / 2.0f64).exp();
        let u3 = g.node(ju).powi(3);
        assert!((integrand * u3 - 1.0).abs() < 0.2, "{}", integrand * u3);
    }

    #[test]
    fn sigma_must_not_vanish() {
        let g = build_uniform_grid(0.0, 1.0, 10).unwrap();
        let m = ProcessModel::diffusion(
            g,
            Coefficient::Const(0.0),
            Coefficient::expr("x").unwrap(), // vanishes at the left node
            BoundaryMode::AccessibleBoth,
        );
        assert!(diffusion_base(&m).is_err());
    }

    #[test]
    fn levy_bm_base_kernel() {
        let model = bm01();
        let base = levy_base(&model).unwrap();
        base.validate().unwrap();
        // W̃(x) = 2x and off-diagonal zero convention
        assert!((base.w0.get(0, 50) - 1.0).abs() < 1e-14);
        assert_eq!(base.w0.get(30, 30), 0.0);
        // translation invariance is grid-exact
        for d in 1..20 {
            let v = base.w0.get(0, d);
            for i in 1..(100 - d) {
                assert_eq!(base.w0.get(i, i + d), v);
            }
        }
        // Lebesgue measure
        assert!((base.measure.mass(50) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn levy_drift_base_matches_formula() {
        let g = build_uniform_grid(0.0, 5.0, 500).unwrap();
        let model = ProcessModel::brownian(g.clone(), -1.0, 1.0, BoundaryMode::InaccessibleUpper);
        let base = levy_base(&model).unwrap();
        base.validate().unwrap();
        for &x in &[0.5, 1.0, 3.0] {
            let j = g.index_of(x).unwrap();
            let exact = 1.0 - (-2.0 * x).exp();
            assert!((base.w0.get(0, j) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn jumps_have_no_closed_form_base() {
        let g = build_uniform_grid(0.0, 1.0, 10).unwrap();
        let model = ProcessModel {
            kind: ProcessKind::SpectrallyPositiveLevy {
                drift: -1.0,
                sigma: 1.0,
                jump_rate: 0.5,
                jump_exp_rate: 2.0,
            },
            grid: g,
            boundary_mode: BoundaryMode::InaccessibleUpper,
        };
        assert!(levy_base(&model).is_err());
        assert!(closed_form_wq(&model, 1.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_oracle_values() {
        let model = bm01();
        let sqrt2 = 2f64.sqrt();
        let wq = closed_form_wq(&model, 1.0, 1.0).unwrap();
        assert!((wq - 2.0 * sqrt2.sinh() / sqrt2).abs() < 1e-14);
        let wneg = closed_form_wq(&model, -1.0, 1.0).unwrap();
        assert!((wneg - 2.0 * sqrt2.sin() / sqrt2).abs() < 1e-14);
        assert_eq!(closed_form_wq(&model, 7.0, 0.0).unwrap(), 0.0);
        // drifted form at the degenerate discriminant: μ = -1, q = -1/2
        let g = build_uniform_grid(0.0, 2.0, 10).unwrap();
        let drifted = ProcessModel::brownian(g, -1.0, 1.0, BoundaryMode::InaccessibleUpper);
        let v = closed_form_wq(&drifted, -0.5, 1.5).unwrap();
        assert!((v - 2.0 * 1.5 * (-1.5f64).exp()).abs() < 5e-7);
    }

    #[test]
    fn zero_horizon_and_boundary_starts() {
        let model = bm01();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = simulate_path(&model, 0.5, 1e-3, 0.0, &mut rng).unwrap();
        assert!(!p.killed());
        assert_eq!(p.final_state, 0.5);
        let p = simulate_path(&model, 0.0, 1e-3, 1.0, &mut rng).unwrap();
        assert_eq!(p.exit_time, Some(0.0));
        assert_eq!(p.exit_side, Some(ExitSide::Lower));
        assert!(simulate_path(&model, -0.2, 1e-3, 1.0, &mut rng).is_err());
        assert!(simulate_path(&model, 0.5, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn gamblers_ruin_smoke() {
        let model = bm01();
        let n = 20_000usize;
        let mut lower = 0usize;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ i as u64);
            let p = simulate_path(&model, 0.5, 1e-3, 50.0, &mut rng).unwrap();
            match p.exit_side {
                Some(ExitSide::Lower) => lower += 1,
                Some(ExitSide::Upper) => {}
                None => panic!("path survived an absurd horizon"),
            }
        }
        let est = lower as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((est - 0.5).abs() < 3.5 * se, "{est} vs 0.5 ± {se}");
    }

    #[test]
    fn checkpoints_record_alive_only() {
        let g = build_uniform_grid(0.0, 1.0, 10).unwrap();
        let model = ProcessModel::brownian(g, 0.0, 1.0, BoundaryMode::AccessibleBoth);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, snaps) =
            simulate_with_checkpoints(&model, 0.5, 1e-3, 2.0, &[0.0, 0.05, 2.0], &mut rng).unwrap();
        assert_eq!(snaps[0], Some(0.5));
        if let Some(t) = p.exit_time {
            for (cp, s) in [0.0, 0.05, 2.0].iter().zip(&snaps) {
                assert_eq!(s.is_some(), *cp < t, "checkpoint {cp} vs death {t}");
            }
        }
    }

    #[test]
    fn compound_poisson_jumps_move_up() {
        let g = build_uniform_grid(0.0, 10.0, 10).unwrap();
        let model = ProcessModel {
            kind: ProcessKind::SpectrallyPositiveLevy {
                drift: 0.0,
                sigma: 0.0,
                jump_rate: 5.0,
                jump_exp_rate: 1.0,
            },
            grid: g,
            boundary_mode: BoundaryMode::InaccessibleUpper,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = simulate_path(&model, 1.0, 1e-2, 3.0, &mut rng).unwrap();
        // pure positive jumps never kill at 0 and must end above the start
        assert!(!p.killed());
        assert!(p.final_state > 1.0);
    }
}
