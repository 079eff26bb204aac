//! Scale functions, boundary classification and quasi-stationary distributions
//! for one-dimensional Markov processes with no negative jumps.
//!
//! The library discretizes the state interval, represents the base scale
//! kernel `W(x, y)` together with a reference measure `m`, and builds
//! everything else on the measure-weighted convolution
//!
//! ```text
//! (f ⊗ g)(x, y) = ∫_(x,y) f(x, u) g(u, y) m(du)
//! ```
//!
//! over strictly interior nodes. The `q`-scale functions are obtained two
//! independent ways — a power series in `q` of iterated ⊗-powers, and a
//! marching solver for the Volterra equation of the second kind — and both
//! are valid for negative `q`, which is what decay parameters and
//! quasi-stationary distributions are made of.
//!
//! ## Capability tour (runnable examples)
//!
//! ```bash
//! cargo run --release -p scaleqsd --example scale_functions        # W^(q) two ways + closed forms
//! cargo run --release -p scaleqsd --example exit_probabilities    # exit laws and potential densities
//! cargo run --release -p scaleqsd --example resolvent_identities  # residual table for the kernel identities
//! cargo run --release -p scaleqsd --example boundary_classification
//! cargo run --release -p scaleqsd --example decay_and_qsd         # λ₀ / κ₀ and QSD densities
//! cargo run --release -p scaleqsd --example entrance_diffusion    # a diffusion with an entrance boundary
//! cargo run --release -p scaleqsd --example monte_carlo_validation
//! cargo run --release -p scaleqsd --example yaglom_simulation
//! ```
//!
//! The thin `scaleqsd` binary drives the same library from JSON run
//! configurations (`compute-w`, `z`, `lambda0`, `qsd`, `identities`, `mc`,
//! `report`).

pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod identities;
pub mod kernel;
pub mod montecarlo;
pub mod process;
pub mod qsd;
pub mod report;
pub mod scale;

pub use error::{Error, Result};
pub use grid::{DiscreteMeasure, Grid};
pub use kernel::Kernel;
pub use process::{BaseKernelPair, BoundaryMode, ProcessModel};
pub use scale::ScaleFamily;
