//! A 2D multibody viscoelastic fault-system simulator.
//!
//! The library couples layered viscoelastic bodies across frictional fault
//! interfaces governed by Dieterich--Ruina rate-and-state friction. The
//! pieces fit together as follows:
//!
//! - [`mesh`]: layered rectangular domains, fault-graded red-green
//!   refinement and the nested hierarchy feeding the multigrid solver;
//! - [`fem`]: P1 vector finite elements, assembly of mass, viscosity and
//!   elasticity operators;
//! - [`friction`]: the rate functional, its regularization, and the state
//!   functionals of the aging and slip laws;
//! - [`mortar`]: dual-basis contact coupling of non-matching fault meshes
//!   and the jump-coordinate basis change;
//! - [`stepper`]: Newmark time stepping with step-doubling adaptivity;
//! - [`solver`]: the rate/state fixed-point splitting and the truncated
//!   nonsmooth Newton multigrid solver for the rate problem;
//! - [`scenario`]: experiment presets, configuration and batch outputs.
//!
//! A minimal end-to-end run:
//!
//! ```
//! use faultsim::scenario::{Preset, ScenarioConfig, run_scenario};
//!
//! let mut config = ScenarioConfig::preset(Preset::SpringSlider);
//! config.mesh.level_cap = 1;       // coarse desk demo
//! config.loading.max_time = Some(0.0); // only the initial record
//! let outputs = run_scenario(&config).unwrap();
//! assert_eq!(outputs.steps.len(), 1);
//! ```

pub mod fem;
/// The chapters of the user guide (`book/`), included here so that
/// `cargo test --doc` compiles and runs every code listing in the book
/// against the current API.
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    pub mod meshes {}
    #[doc = include_str!("../../../book/src/friction.md")]
    pub mod friction {}
    #[doc = include_str!("../../../book/src/contact.md")]
    pub mod contact {}
    #[doc = include_str!("../../../book/src/time-stepping.md")]
    pub mod time_stepping {}
    #[doc = include_str!("../../../book/src/solver.md")]
    pub mod solver {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub mod scenarios {}
}
pub mod friction;
pub mod linalg;
pub mod mesh;
pub mod mortar;
pub mod scenario;
pub mod solver;
pub mod stepper;
