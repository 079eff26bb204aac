//! Lower-triangular kernel tables and their measure-weighted convolution.
//!
//! A kernel stores `K(x_i, x_j)` for `i <= j` only; values for `i > j` are
//! logically zero. The product
//!
//! ```text
//! (f ⊗ g)[i][j] = Σ_{i<k<j} f[i][k] g[k][j] m_k
//! ```
//!
//! sums strictly interior nodes, so the diagonal and the first
//! superdiagonal of a product always vanish. The product is associative,
//! and on the grid it is nilpotent: the n-th power vanishes once `n`
//! exceeds the node count, which is why the scale-function series below
//! terminates exactly.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, Grid};

/// Packed row-major table of `K(x_i, x_j)` for `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    grid: Grid,
    /// Row `i` holds entries `j = i ..= last`, rows concatenated.
    values: Arc<Vec<f64>>,
    pub label: String,
}

impl Kernel {
    pub fn from_rows(grid: Grid, rows: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Kernel> {
        let n = grid.last();
        if rows.len() != n + 1 || rows.iter().enumerate().any(|(i, r)| r.len() != n + 1 - i) {
            return Err(Error::Kernel("row shapes do not match the grid".into()));
        }
        let mut values = Vec::with_capacity((n + 1) * (n + 2) / 2);
        for r in &rows {
            values.extend_from_slice(r);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Kernel(format!("non-finite entry in {:?}", rows.len())));
        }
        Ok(Kernel {
            grid,
            values: Arc::new(values),
            label: label.into(),
        })
    }

    /// Build from a function of node values `(x_i, x_j)`, `i <= j`.
    pub fn from_fn(grid: &Grid, label: impl Into<String>, f: impl Fn(usize, usize) -> f64) -> Kernel {
        let n = grid.last();
        let mut values = Vec::with_capacity((n + 1) * (n + 2) / 2);
        for i in 0..=n {
            for j in i..=n {
                values.push(f(i, j));
            }
        }
        Kernel {
            grid: grid.clone(),
            values: Arc::new(values),
            label: label.into(),
        }
    }

    pub fn zeros(grid: &Grid, label: impl Into<String>) -> Kernel {
        let n = grid.last();
        Kernel {
            grid: grid.clone(),
            values: Arc::new(vec![0.0; (n + 1) * (n + 2) / 2]),
            label: label.into(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn offset(&self, i: usize) -> usize {
        let n1 = self.grid.len();
        i * n1 - i * (i.wrapping_sub(1)) / 2
    }

    /// Entry `K(x_i, x_j)`; zero for `i > j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i > j {
            return 0.0;
        }
        self.values[self.offset(i) + (j - i)]
    }

    /// Stored row `i` as a slice over `j = i ..= last`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.offset(i);
        let n1 = self.grid.len();
        &self.values[start..start + (n1 - i)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn same_grid(&self, other: &Kernel) -> bool {
        self.grid.nodes() == other.grid.nodes()
    }

    /// CSV triples `x_i,x_j,value` over the stored triangle.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x_i,x_j,value")?;
        let n = self.grid.last();
        for i in 0..=n {
            let row = self.row(i);
            for (dj, v) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", self.grid.node(i), self.grid.node(i + dj), v)?;
            }
        }
        Ok(())
    }

    /// Row-major binary dump (little-endian): magic, node count, nodes, packed values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SQK1")?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        for x in self.grid.nodes() {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, truncated: bool, label: impl Into<String>) -> Result<Kernel> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SQK1" {
            return Err(Error::Kernel("bad magic in kernel dump".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n1 = u64::from_le_bytes(b8) as usize;
        let mut nodes = Vec::with_capacity(n1);
        for _ in 0..n1 {
            r.read_exact(&mut b8)?;
            nodes.push(f64::from_le_bytes(b8));
        }
        let grid = Grid::new(nodes, truncated)?;
        let mut values = Vec::with_capacity(n1 * (n1 + 1) / 2);
        for _ in 0..n1 * (n1 + 1) / 2 {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(Kernel {
            grid,
            values: Arc::new(values),
            label: label.into(),
        })
    }
}

fn check_compatible(f: &Kernel, g: &Kernel, m: &DiscreteMeasure) -> Result<()> {
    if !f.same_grid(g) || f.grid.nodes() != m.grid().nodes() {
        return Err(Error::Kernel(format!(
            "grid mismatch between {:?}, {:?} and the measure",
            f.label, g.label
        )));
    }
    Ok(())
}

/// Measure-weighted convolution `f ⊗ g` over strictly interior nodes.
pub fn otimes(f: &Kernel, g: &Kernel, m: &DiscreteMeasure) -> Result<Kernel> {
    check_compatible(f, g, m)?;
    let n = f.grid.last();
    let masses = m.masses();
    let rows: Vec<Vec<f64>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; n + 1 - i];
            let f_row = f.row(i);
            for k in i + 1..n {
                let c = f_row[k - i] * masses[k];
                if c == 0.0 {
                    continue;
                }
                let g_row = g.row(k);
                // out[j - i] += c * g(k, j) for j in k+1 ..= n
                for (o, gv) in out[k + 1 - i..].iter_mut().zip(&g_row[1..]) {
                    *o += c * gv;
                }
            }
            out
        })
        .collect();
    Kernel::from_rows(
        f.grid.clone(),
        rows,
        format!("({}) ⊗ ({})", f.label, g.label),
    )
}

/// `w^{⊗n}` by repeated ⊗; `n = 1` returns the kernel unchanged.
pub fn kernel_power(w: &Kernel, m: &DiscreteMeasure, n: usize) -> Result<Kernel> {
    if n == 0 {
        return Err(Error::Kernel("kernel power needs n >= 1".into()));
    }
    let mut acc = w.clone();
    for p in 2..=n {
        acc = otimes(&acc, w, m)?;
        acc.label = format!("({})^⊗{}", w.label, p);
    }
    Ok(acc)
}

/// `W̄(x, y) = ∫_(x,y) W(x, u) m(du)`, the running interior mass of each row.
pub fn wbar(w: &Kernel, m: &DiscreteMeasure) -> Result<Kernel> {
    if w.grid.nodes() != m.grid().nodes() {
        return Err(Error::Kernel("grid mismatch between kernel and measure".into()));
    }
    let n = w.grid.last();
    let masses = m.masses();
    let rows: Vec<Vec<f64>> = (0..=n)
        .map(|i| {
            let mut out = vec![0.0; n + 1 - i];
            let w_row = w.row(i);
            for j in i + 2..=n {
                out[j - i] = out[j - i - 1] + w_row[j - 1 - i] * masses[j - 1];
            }
            out
        })
        .collect();
    Kernel::from_rows(w.grid.clone(), rows, format!("bar({})", w.label))
}

/// Tail of the dominating series: `Σ_{k >= n} |q|^k w wbar^k / k!`, summed
/// forward from the `n`-th term so nothing large ever cancels.
pub fn series_tail_bound(w_xy: f64, wbar_xy: f64, q: f64, n: usize) -> Result<f64> {
    if w_xy < 0.0 || wbar_xy < 0.0 {
        return Err(Error::Kernel("tail bound needs non-negative w and wbar".into()));
    }
    if n == 0 {
        return Err(Error::Kernel("tail bound needs n >= 1".into()));
    }
    if !q.is_finite() {
        return Err(Error::Kernel(format!("non-finite q = {q}")));
    }
    let a = q.abs() * wbar_xy;
    if a == 0.0 {
        return Ok(0.0);
    }
    // a^n / n!
    let mut term = 1.0f64;
    for k in 1..=n {
        term *= a / k as f64;
    }
    let mut sum = 0.0f64;
    let mut k = n;
    loop {
        sum += term;
        k += 1;
        term *= a / k as f64;
        if term < sum * 1e-18 || term < f64::MIN_POSITIVE {
            break;
        }
        if k > n + 10_000 {
            return Err(Error::Kernel(format!(
                "tail bound did not converge (a = {a})"
            )));
        }
    }
    Ok(w_xy * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_uniform_grid, lebesgue, measure_from_density};
    use proptest::prelude::*;

    fn bm_kernel(grid: &Grid) -> Kernel {
        Kernel::from_fn(grid, "W", |i, j| 2.0 * (grid.node(j) - grid.node(i)))
    }

    #[test]
    fn product_diagonal_and_superdiagonal_vanish() {
        let g = build_uniform_grid(0.0, 1.0, 16).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let p = otimes(&w, &w, &m).unwrap();
        for i in 0..g.len() {
            assert_eq!(p.get(i, i), 0.0);
            if i + 1 < g.len() {
                assert_eq!(p.get(i, i + 1), 0.0);
            }
        }
    }

    #[test]
    fn single_interior_atom_product_is_one_term() {
        let g = build_uniform_grid(0.0, 1.0, 4).unwrap();
        // one atom of weight 0.7 at x = 0.5, nothing else
        let masses = vec![0.0, 0.0, 0.7, 0.0, 0.0];
        let m = DiscreteMeasure::new(g.clone(), masses).unwrap();
        let f = Kernel::from_fn(&g, "f", |i, j| (i + 2 * j) as f64);
        let h = Kernel::from_fn(&g, "g", |i, j| (3 * i + j) as f64 + 0.5);
        let p = otimes(&f, &h, &m).unwrap();
        // (f ⊗ g)(x_0, x_4) = f(x_0, x_2) g(x_2, x_4) * 0.7
        assert_eq!(p.get(0, 4), f.get(0, 2) * h.get(2, 4) * 0.7);
        // intervals that do not strictly contain the atom see nothing
        assert_eq!(p.get(0, 2), 0.0);
        assert_eq!(p.get(2, 4), 0.0);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g1 = build_uniform_grid(0.0, 1.0, 8).unwrap();
        let g2 = build_uniform_grid(0.0, 2.0, 8).unwrap();
        let m = lebesgue(&g1);
        let a = bm_kernel(&g1);
        let b = bm_kernel(&g2);
        assert!(otimes(&a, &b, &m).is_err());
    }

    #[test]
    fn bm_convolution_cubic() {
        // ∫_0^x 2u · 2(x-u) du = (2/3) x^3
        let g = build_uniform_grid(0.0, 1.0, 400).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let p = otimes(&w, &w, &m).unwrap();
        for &x in &[0.25, 0.5, 1.0] {
            let j = g.index_of(x).unwrap();
            let exact = 2.0 / 3.0 * x.powi(3);
            assert!(
                (p.get(0, j) - exact).abs() < 1e-5,
                "x={x}: {} vs {exact}",
                p.get(0, j)
            );
        }
    }

    #[test]
    fn bm_third_power_quintic() {
        // iterating the integral once more gives x^5 / 15, the q^2
        // coefficient of 2 sinh(x sqrt(2q)) / sqrt(2q)
        let g = build_uniform_grid(0.0, 1.0, 400).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let p3 = kernel_power(&w, &m, 3).unwrap();
        let j = g.last();
        let exact = 1.0 / 15.0;
        assert!((p3.get(0, j) - exact).abs() < 1e-5, "{}", p3.get(0, j));
    }

    #[test]
    fn power_one_is_identity_and_zero_rejected() {
        let g = build_uniform_grid(0.0, 1.0, 8).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let p1 = kernel_power(&w, &m, 1).unwrap();
        assert_eq!(p1.row(0), w.row(0));
        assert!(kernel_power(&w, &m, 0).is_err());
    }

    #[test]
    fn wbar_quadratic_for_bm() {
        // ∫_0^x 2u du = x^2
        let g = build_uniform_grid(0.0, 1.0, 500).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let wb = wbar(&w, &m).unwrap();
        assert_eq!(wb.get(3, 3), 0.0);
        for &x in &[0.5, 1.0] {
            let j = g.index_of(x).unwrap();
            assert!((wb.get(0, j) - x * x).abs() < 5e-3);
        }
        // wbar is the ⊗ product against the constant-one kernel
        let ones = Kernel::from_fn(&g, "1", |_, _| 1.0);
        let via_otimes = otimes(&w, &ones, &m).unwrap();
        for j in 0..g.len() {
            assert!((wb.get(0, j) - via_otimes.get(0, j)).abs() < 1e-14);
        }
    }

    #[test]
    fn wbar_non_decreasing_in_y() {
        let g = build_uniform_grid(0.0, 2.0, 64).unwrap();
        let d: Vec<f64> = g.nodes().iter().map(|&x| 1.5 + x.sin().abs()).collect();
        let m = measure_from_density(&g, &d, (0.0, 0.0)).unwrap();
        let w = bm_kernel(&g);
        let wb = wbar(&w, &m).unwrap();
        for i in 0..g.len() {
            let row = wb.row(i);
            assert!(row.windows(2).all(|p| p[1] >= p[0]));
        }
    }

    #[test]
    fn power_bound_holds_for_bm() {
        // W^{⊗n}(x,y) <= W(x,y) wbar(x,y)^{n-1} / (n-1)!
        let g = build_uniform_grid(0.0, 1.0, 60).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        let wb = wbar(&w, &m).unwrap();
        let mut p = w.clone();
        let mut factorial = 1.0;
        for n in 1..=8usize {
            if n > 1 {
                p = otimes(&p, &w, &m).unwrap();
                factorial *= (n - 1) as f64;
            }
            for i in 0..g.len() {
                for j in i..g.len() {
                    let bound = w.get(i, j) * wb.get(i, j).powi(n as i32 - 1) / factorial;
                    assert!(
                        p.get(i, j) <= bound * (1.0 + 1e-12) + 1e-300,
                        "n={n} ({i},{j}): {} > {}",
                        p.get(i, j),
                        bound
                    );
                }
            }
        }
    }

    #[test]
    fn powers_non_increasing_in_x() {
        let g = build_uniform_grid(0.0, 1.0, 50).unwrap();
        let m = lebesgue(&g);
        let w = bm_kernel(&g);
        for n in 1..=4usize {
            let p = kernel_power(&w, &m, n).unwrap();
            let j = g.last();
            for i in 0..j {
                assert!(p.get(i, j) >= p.get(i + 1, j) - 1e-15);
            }
        }
    }

    #[test]
    fn tail_bound_examples() {
        // q = 0 has an empty tail
        assert_eq!(series_tail_bound(2.0, 1.0, 0.0, 1).unwrap(), 0.0);
        // full series bound w e^{wbar} at (0,1) for BM, q = 1
        let full = series_tail_bound(2.0, 1.0, 1.0, 1).unwrap() + 2.0;
        assert!((full - 2.0 * 1f64.exp()).abs() < 1e-12);
        // ... which dominates W^(1)(0,1) = 2 sinh(sqrt 2)/sqrt 2
        let sqrt2 = 2f64.sqrt();
        assert!(full > 2.0 * sqrt2.sinh() / sqrt2);
        // remainder algebra: tail(n) <= w (a^n/n!) e^a
        let (w, wb, q, n) = (2.0, 1.0, 1.5, 6usize);
        let a: f64 = q * wb;
        let mut an = 1.0;
        for k in 1..=n {
            an *= a / k as f64;
        }
        let tail = series_tail_bound(w, wb, q, n).unwrap();
        assert!(tail <= w * an * a.exp() + 1e-15);
        // errors
        assert!(series_tail_bound(-1.0, 1.0, 1.0, 1).is_err());
        assert!(series_tail_bound(1.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let g = build_uniform_grid(0.0, 1.0, 12).unwrap();
        let w = bm_kernel(&g);
        let mut buf = Vec::new();
        w.write_binary(&mut buf).unwrap();
        let back = Kernel::read_binary(&buf[..], false, "W").unwrap();
        assert_eq!(w.row(3), back.row(3));
        assert_eq!(back.grid().nodes(), g.nodes());
    }

    proptest! {
        // With integer kernel entries and dyadic masses every partial sum is
        // exactly representable, so associativity holds bitwise.
        #[test]
        fn associativity_exact_on_dyadic_inputs(
            fe in proptest::collection::vec(0u8..16, 91),
            ge in proptest::collection::vec(0u8..16, 91),
            he in proptest::collection::vec(0u8..16, 91),
            ms in proptest::collection::vec(0u8..8, 13),
        ) {
            let g = build_uniform_grid(0.0, 1.0, 12).unwrap();
            let mk = |vals: &[u8], label: &str| {
                let idx = std::cell::Cell::new(0usize);
                Kernel::from_fn(&g, label, |_, _| {
                    let v = vals[idx.get()] as f64;
                    idx.set(idx.get() + 1);
                    v
                })
            };
            let f = mk(&fe, "f");
            let gg = mk(&ge, "g");
            let h = mk(&he, "h");
            let masses: Vec<f64> = ms.iter().map(|&v| v as f64 / 8.0).collect();
            let m = DiscreteMeasure::new(g.clone(), masses).unwrap();
            let left = otimes(&otimes(&f, &gg, &m).unwrap(), &h, &m).unwrap();
            let right = otimes(&f, &otimes(&gg, &h, &m).unwrap(), &m).unwrap();
            for i in 0..g.len() {
                prop_assert_eq!(left.row(i), right.row(i));
            }
        }

        #[test]
        fn open_interval_mass_additive(
            ms in proptest::collection::vec(0.0f64..2.0, 21),
            split in 1usize..20,
        ) {
            let g = build_uniform_grid(0.0, 1.0, 20).unwrap();
            let m = DiscreteMeasure::new(g.clone(), ms).unwrap();
            // (x_0, x_k) + {x_k} + (x_k, x_N) = (x_0, x_N)
            let total = m.open_interval_mass_idx(0, 20);
            let lhs = m.open_interval_mass_idx(0, split) + m.mass(split)
                + m.open_interval_mass_idx(split, 20);
            prop_assert!((lhs - total).abs() <= 1e-12 * total.max(1.0));
        }
    }
}
