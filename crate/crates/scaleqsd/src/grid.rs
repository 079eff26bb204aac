//! Discretized state interval and reference measure.
//!
//! All integrals downstream are open-interval sums `Σ_{i<k<j} f(x_k) m_k`:
//! the endpoints are excluded exactly, matching the integration convention
//! the kernel product is defined with. An integral with `y <= x` is an
//! integral over the empty set and is 0.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Ordered nodes discretizing `[left_end, right_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Arc<Vec<f64>>,
    /// True when `right_end` stands in for an infinite or inaccessible
    /// upper boundary and results must be checked under truncation doubling.
    pub truncated: bool,
}

impl Grid {
    pub fn new(nodes: Vec<f64>, truncated: bool) -> Result<Grid> {
        if nodes.len() < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 nodes (2 cells), got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Grid("non-finite node".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("nodes must be strictly increasing".into()));
        }
        Ok(Grid {
            nodes: Arc::new(nodes),
            truncated,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes (cells + 1).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the last node.
    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn left_end(&self) -> f64 {
        self.nodes[0]
    }

    pub fn right_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Cell width attributed to node `i` (half-open midpoint cells).
    pub fn cell_width(&self, i: usize) -> f64 {
        let n = self.last();
        if i == 0 {
            (self.nodes[1] - self.nodes[0]) / 2.0
        } else if i == n {
            (self.nodes[n] - self.nodes[n - 1]) / 2.0
        } else {
            (self.nodes[i + 1] - self.nodes[i - 1]) / 2.0
        }
    }

    /// Locate a value as a grid node (exact within a half-spacing slack).
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let nodes = self.nodes();
        let i = match nodes.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => {
                let cand = if i == 0 {
                    0
                } else if i >= nodes.len() {
                    nodes.len() - 1
                } else if (x - nodes[i - 1]).abs() <= (nodes[i] - x).abs() {
                    i - 1
                } else {
                    i
                };
                let spacing = if cand + 1 < nodes.len() {
                    nodes[cand + 1] - nodes[cand]
                } else {
                    nodes[cand] - nodes[cand - 1]
                };
                if (nodes[cand] - x).abs() > 1e-9 * spacing.max(1.0) {
                    return Err(Error::Grid(format!("{x} is not a grid node")));
                }
                cand
            }
        };
        Ok(i)
    }
}

/// Equispaced grid on `[a, b]` with `n` cells (`n + 1` nodes).
pub fn build_uniform_grid(a: f64, b: f64, n: usize) -> Result<Grid> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Grid(format!("non-finite endpoints ({a}, {b})")));
    }
    if !(a < b) {
        return Err(Error::Grid(format!("need a < b, got ({a}, {b})")));
    }
    if n < 2 {
        return Err(Error::Grid(format!("need at least 2 cells, got {n}")));
    }
    let h = (b - a) / n as f64;
    let mut nodes: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
    nodes[n] = b;
    Grid::new(nodes, false)
}

/// Per-node masses approximating the reference measure `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: Grid,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: Grid, masses: Vec<f64>) -> Result<DiscreteMeasure> {
        if masses.len() != grid.len() {
            return Err(Error::Measure(format!(
                "{} masses for {} nodes",
                masses.len(),
                grid.len()
            )));
        }
        if masses.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::Measure("masses must be finite and >= 0".into()));
        }
        Ok(DiscreteMeasure { grid, masses })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `m((x_i, x_j))`: strictly interior nodes only; 0 when `j <= i`.
    pub fn open_interval_mass_idx(&self, i: usize, j: usize) -> f64 {
        if j <= i + 1 {
            return 0.0;
        }
        self.masses[i + 1..j].iter().sum()
    }

    /// As [`open_interval_mass_idx`], locating `x` and `y` as grid nodes.
    pub fn open_interval_mass(&self, x: f64, y: f64) -> Result<f64> {
        let i = self.grid.index_of(x)?;
        let j = self.grid.index_of(y)?;
        if j <= i {
            return Ok(0.0);
        }
        Ok(self.open_interval_mass_idx(i, j))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,mass")?;
        for (x, m) in self.grid.nodes().iter().zip(&self.masses) {
            writeln!(w, "{x},{m}")?;
        }
        Ok(())
    }
}

/// Midpoint-cell quadrature of a density sampled at the nodes.
///
/// Interior node `i` gets `density(x_i) * cell_width(i)`; the two boundary
/// nodes carry only the explicit atoms (0 by default — a regular boundary
/// stand-in carries no mass). Because every downstream integral is a strict
/// interior sum, boundary cells never enter the kernel quadrature anyway.
pub fn measure_from_density(grid: &Grid, density: &[f64], atoms: (f64, f64)) -> Result<DiscreteMeasure> {
    if density.len() != grid.len() {
        return Err(Error::Measure(format!(
            "{} density samples for {} nodes",
            density.len(),
            grid.len()
        )));
    }
    if let Some((i, d)) = density
        .iter()
        .enumerate()
        .find(|(_, &d)| !d.is_finite() || d < 0.0)
    {
        return Err(Error::Measure(format!(
            "density sample {d} at node {} (x = {})",
            i,
            grid.node(i)
        )));
    }
    if atoms.0 < 0.0 || atoms.1 < 0.0 {
        return Err(Error::Measure("boundary atoms must be >= 0".into()));
    }
    let n = grid.last();
    let mut masses = vec![0.0; grid.len()];
    for i in 1..n {
        masses[i] = density[i] * grid.cell_width(i);
    }
    masses[0] = atoms.0;
    masses[n] = atoms.1;
    DiscreteMeasure::new(grid.clone(), masses)
}

/// Lebesgue measure on the grid (unit density, no atoms).
pub fn lebesgue(grid: &Grid) -> DiscreteMeasure {
    measure_from_density(grid, &vec![1.0; grid.len()], (0.0, 0.0)).expect("unit density is valid")
}
