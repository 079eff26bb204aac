//! The kernel-identity battery: residuals that must sit at floating-point
//! level on every model, because the identities are exact in the discrete
//! ⊗-algebra.
//!
//! Residuals are scaled per entry by `max(1, |W^(q)|, |W^(r)|)` so the
//! budgets mean the same thing on kernels of magnitude 1e-9 and 1e+10
//! (a drifted model on a long interval reaches both).

use crate::error::Result;
use crate::kernel::{otimes, wbar, Kernel};
use crate::scale::ScaleFamily;

/// `max |W^(q) − W^(r) − (q−r) W^(q) ⊗ W^(r)|`, entrywise scaled.
pub fn resolvent_residual(fam: &ScaleFamily, q: f64, r: f64) -> Result<f64> {
    let wq = fam.scale_q_volterra(q)?;
    let wr = fam.scale_q_volterra(r)?;
    let cross = otimes(&wq, &wr, fam.measure())?;
    let n = fam.grid().last();
    let mut worst = 0.0f64;
    for i in 0..=n {
        let (aq, ar, ax) = (wq.row(i), wr.row(i), cross.row(i));
        for ((vq, vr), vx) in aq.iter().zip(ar).zip(ax) {
            let res = (vq - vr - (q - r) * vx).abs();
            let scale = vq.abs().max(vr.abs()).max(1.0);
            worst = worst.max(res / scale);
        }
    }
    Ok(worst)
}

/// Residuals of both forms of the `Z` identity:
/// `Z^(q) − Z^(r) = (q−r) W^(q) ⊗ Z^(r) = (q−r) W^(r) ⊗ Z^(q)`.
pub fn z_resolvent_residual(fam: &ScaleFamily, q: f64, r: f64) -> Result<(f64, f64)> {
    let wq = fam.scale_q_volterra(q)?;
    let wr = fam.scale_q_volterra(r)?;
    let zq = fam.z_kernel_from(&wq, q)?;
    let zr = fam.z_kernel_from(&wr, r)?;
    let qr_cross = otimes(&wq, &zr, fam.measure())?;
    let rq_cross = otimes(&wr, &zq, fam.measure())?;
    let n = fam.grid().last();
    let mut worst_a = 0.0f64;
    let mut worst_b = 0.0f64;
    for i in 0..=n {
        let (zq_row, zr_row) = (zq.row(i), zr.row(i));
        let (ca, cb) = (qr_cross.row(i), rq_cross.row(i));
        for k in 0..zq_row.len() {
            let lhs = zq_row[k] - zr_row[k];
            let scale = zq_row[k].abs().max(zr_row[k].abs()).max(1.0);
            worst_a = worst_a.max((lhs - (q - r) * ca[k]).abs() / scale);
            worst_b = worst_b.max((lhs - (q - r) * cb[k]).abs() / scale);
        }
    }
    Ok((worst_a, worst_b))
}

/// `max |W^(q) ⊗ W^(r) − W^(r) ⊗ W^(q)|`, entrywise scaled.
pub fn commutativity_residual(fam: &ScaleFamily, q: f64, r: f64) -> Result<f64> {
    let wq = fam.scale_q_volterra(q)?;
    let wr = fam.scale_q_volterra(r)?;
    let a = otimes(&wq, &wr, fam.measure())?;
    let b = otimes(&wr, &wq, fam.measure())?;
    let n = fam.grid().last();
    let mut worst = 0.0f64;
    for i in 0..=n {
        for (va, vb) in a.row(i).iter().zip(b.row(i)) {
            worst = worst.max((va - vb).abs() / va.abs().max(vb.abs()).max(1.0));
        }
    }
    Ok(worst)
}

/// Worst relative excess of `W^{⊗n}` over the factorial bound
/// `W · W̄^{n-1} / (n-1)!` for `n = 1 ..= n_max` (0 when the bound holds).
pub fn power_bound_excess(fam: &ScaleFamily, n_max: usize) -> Result<f64> {
    let w = fam.w0();
    let m = fam.measure();
    let wb = wbar(w, m)?;
    let n = fam.grid().last();
    let mut power = w.clone();
    let mut factorial = 1.0f64;
    let mut worst = 0.0f64;
    for p in 1..=n_max {
        if p > 1 {
            power = otimes(&power, w, m)?;
            factorial *= (p - 1) as f64;
        }
        for i in 0..=n {
            let (pr, wr, br) = (power.row(i), w.row(i), wb.row(i));
            for k in 0..pr.len() {
                let bound = wr[k] * br[k].powi(p as i32 - 1) / factorial;
                if bound == 0.0 {
                    if pr[k] != 0.0 {
                        worst = worst.max(f64::INFINITY);
                    }
                } else {
                    worst = worst.max(pr[k] / bound - 1.0);
                }
            }
        }
    }
    Ok(worst.max(0.0))
}

/// Worst relative excess of `|Z^(q)|` over `1 + |q| W̄ e^{|q| W̄}`.
pub fn z_bound_excess(fam: &ScaleFamily, q: f64) -> Result<f64> {
    let wq = fam.scale_q_volterra(q)?;
    let zq = fam.z_kernel_from(&wq, q)?;
    let wb = wbar(fam.w0(), fam.measure())?;
    let n = fam.grid().last();
    let mut worst = 0.0f64;
    for i in 0..=n {
        for (zv, bv) in zq.row(i).iter().zip(wb.row(i)) {
            let bound = 1.0 + q.abs() * bv * (q.abs() * bv).exp();
            worst = worst.max(zv.abs() / bound - 1.0);
        }
    }
    Ok(worst.max(0.0))
}

/// Worst violation of strict entrywise growth of `q ↦ W^(q)` over the
/// given (sorted ascending) `q` values, above the diagonal.
pub fn q_monotonicity_violation(fam: &ScaleFamily, qs: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    let n = fam.grid().last();
    let mut prev: Option<Kernel> = None;
    for &q in qs {
        let cur = fam.scale_q_volterra(q)?;
        if let Some(p) = &prev {
            for i in 0..=n {
                let (pr, cr) = (p.row(i), cur.row(i));
                for k in 1..pr.len() {
                    let gap = pr[k] - cr[k]; // must be negative above the diagonal
                    worst = worst.max(gap / cr[k].abs().max(pr[k].abs()).max(1.0));
                }
            }
        }
        prev = Some(cur);
    }
    Ok(worst.max(0.0))
}

/// `max |W^(q)(x, y) / W(x, y) − 1|` over node pairs `y - x = sep` cells;
/// shrinks with the physical separation, which is the ratio-limit behavior
/// grid-halving studies check.
pub fn ratio_limit_deviation(fam: &ScaleFamily, q: f64, sep: usize) -> Result<f64> {
    let n = fam.grid().last();
    if sep == 0 || sep > n {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for i in 0..=n - sep {
        let row = fam.scale_q_volterra_row(q, i)?;
        let base = fam.w0().get(i, i + sep);
        if base > 0.0 {
            worst = worst.max((row[sep] / base - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Attainable floating-point precision for the `q`-series on this family:
/// the series envelope `w e^{|q| W̄}` (the same bound that proves
/// analyticity) times machine epsilon and a growth factor for the term
/// count. Agreement checks below this level are asking f64 for more
/// cancellation than it has.
pub fn series_roundoff_budget(fam: &ScaleFamily, q: f64) -> Result<f64> {
    let info = fam.series_info(q)?;
    let envelope = fam.w_max() * (q.abs() * fam.wbar_max()).exp();
    Ok(f64::EPSILON * envelope * (info.terms.max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_uniform_grid;
    use crate::process::{BoundaryMode, ProcessModel};
    use crate::scale::DEFAULT_SERIES_TOL;

    fn bm_family(n: usize) -> ScaleFamily {
        let g = build_uniform_grid(0.0, 1.0, n).unwrap();
        let model = ProcessModel::brownian(g, 0.0, 1.0, BoundaryMode::AccessibleBoth);
        ScaleFamily::from_model(&model, DEFAULT_SERIES_TOL).unwrap()
    }

    fn drifted_family(l: f64, n: usize) -> ScaleFamily {
        let mut g = build_uniform_grid(0.0, l, n).unwrap();
        g.truncated = true;
        let model = ProcessModel::brownian(g, -1.0, 1.0, BoundaryMode::InaccessibleUpper);
        ScaleFamily::from_model(&model, DEFAULT_SERIES_TOL).unwrap()
    }

    #[test]
    fn resolvent_identity_is_discretely_exact() {
        let fam = bm_family(120);
        for &(q, r) in &[(1.0, 0.0), (-1.0, 0.5), (2.0, -0.5), (-2.0, -1.0)] {
            let res = resolvent_residual(&fam, q, r).unwrap();
            assert!(res < 1e-12, "({q},{r}): {res}");
        }
    }

    #[test]
    fn resolvent_identity_on_drifted_long_interval() {
        // entries span ~e^{+9} here; the scaled residual stays at fp level
        let fam = drifted_family(10.0, 200);
        for &(q, r) in &[(2.0, 0.5), (-0.4, 1.0)] {
            let res = resolvent_residual(&fam, q, r).unwrap();
            assert!(res < 1e-11, "({q},{r}): {res}");
        }
    }

    #[test]
    fn z_resolvent_both_forms() {
        let fam = bm_family(120);
        for &(q, r) in &[(1.0, 0.0), (-1.0, 0.5), (2.0, -0.5)] {
            let (a, b) = z_resolvent_residual(&fam, q, r).unwrap();
            assert!(a < 1e-12 && b < 1e-12, "({q},{r}): {a} {b}");
        }
    }

    #[test]
    fn cross_products_commute() {
        let fam = bm_family(100);
        let res = commutativity_residual(&fam, 1.3, -0.7).unwrap();
        assert!(res < 1e-12, "{res}");
    }

    #[test]
    fn factorial_bound_and_z_bound_hold() {
        let fam = bm_family(80);
        assert_eq!(power_bound_excess(&fam, 8).unwrap(), 0.0);
        for &q in &[-2.0, -0.5, 0.5, 2.0] {
            let ex = z_bound_excess(&fam, q).unwrap();
            assert_eq!(ex, 0.0, "q={q}");
        }
    }

    #[test]
    fn q_monotone_above_minus_lambda0() {
        let fam = bm_family(100);
        // all q above -κ₀ ≈ -4.93
        let v = q_monotonicity_violation(&fam, &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]).unwrap();
        assert!(v <= 1e-13, "{v}");
    }

    #[test]
    fn ratio_limit_shrinks_with_separation() {
        let fam = bm_family(256);
        let d4 = ratio_limit_deviation(&fam, 1.0, 4).unwrap();
        let d16 = ratio_limit_deviation(&fam, 1.0, 16).unwrap();
        let d64 = ratio_limit_deviation(&fam, 1.0, 64).unwrap();
        assert!(d4 < d16 && d16 < d64, "{d4} {d16} {d64}");
        // fixed cell separation on a halved grid means half the physical
        // separation, so the deviation must drop by about half
        let fine = bm_family(512);
        let d16f = ratio_limit_deviation(&fine, 1.0, 16).unwrap();
        assert!(d16f < 0.6 * d16, "{d16f} vs {d16}");
    }

    #[test]
    fn roundoff_budget_tracks_conditioning() {
        let small = bm_family(60);
        let long = drifted_family(20.0, 200);
        let b_small = series_roundoff_budget(&small, 2.0).unwrap();
        let b_long = series_roundoff_budget(&long, 2.0).unwrap();
        // |q| W̄ = 2 vs ≈ 39: wildly different attainable precision
        assert!(b_small < 1e-13, "{b_small}");
        assert!(b_long > 1.0, "{b_long}");
    }
}
