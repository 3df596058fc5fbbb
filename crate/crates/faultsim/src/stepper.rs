//! Newmark time stepping, initial-condition problems, Dirichlet loading
//! and step-doubling adaptivity.
//!
//! The trapezoidal Newmark scheme eliminates displacement and acceleration
//! in favour of the velocity: each step solves a rate problem for
//! `udot_n` and recovers `u_n`, `uddot_n` algebraically. The time step is
//! chosen by comparing the state obtained with one step of size `2 tau`
//! against two steps of size `tau` in the discrete `L2` norm on the fault.

use crate::fem::{self, DofMap, FemError, MaterialParams};
use crate::friction::{FrictionParams, StateLaw};
use crate::linalg::{bv_sub, bv_zeros, pcg_solve, BlockCsr, ScalarCsr, Vec2};
use crate::mesh::{BoundaryTag, MeshHierarchy, Triangulation};
use crate::mortar::{ContactCoupling, MortarError};
use crate::solver::{
    fixed_point_solve, ContactDof, FixedPointReport, MgHierarchy, RateSystem, SolverConfig,
    SolverError,
};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mortar(#[from] MortarError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("time step underflow: tau = {tau:.3e} s below the minimum {tau_min:.3e} s at t = {t:.6e} s")]
    TauUnderflow { tau: f64, tau_min: f64, t: f64 },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Time-dependent Dirichlet loading of the upper boundary.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LoadingProfile {
    /// loading speed (m/s)
    pub v_d: f64,
    /// final time (s)
    pub t0: f64,
    /// replace the 4 pi ramp frequency by 5 pi (sensitivity-study variant)
    pub smooth_ramp: bool,
}

impl LoadingProfile {
    /// Ramp factor: `1/2 (1 - cos(4 pi t / T0))` while `t <= T0/10`, else 1.
    pub fn xi(&self, t: f64) -> f64 {
        if t <= self.t0 / 10.0 {
            let freq = if self.smooth_ramp { 5.0 } else { 4.0 };
            0.5 * (1.0 - (freq * std::f64::consts::PI * t / self.t0).cos())
        } else {
            1.0
        }
    }
}

/// Full kinematic and state description at one time instant. Vectors run
/// over all dofs (Dirichlet values included); `alpha` is meaningful at
/// fault nodes and constant elsewhere.
#[derive(Clone, Debug)]
pub struct SystemState {
    pub t: f64,
    /// last accepted step size (or the startup value)
    pub tau_prev: f64,
    pub u: Vec<Vec2>,
    pub v: Vec<Vec2>,
    pub acc: Vec<Vec2>,
    pub alpha: Vec<f64>,
}

/// Newmark elimination formulas:
/// `uddot_n = (2/tau)(udot_n - udot_{n-1}) - uddot_{n-1}`,
/// `u_n = u_{n-1} + (tau/2)(udot_n + udot_{n-1})`.
pub fn newmark_update(
    v_new: &[Vec2],
    u_prev: &[Vec2],
    v_prev: &[Vec2],
    acc_prev: &[Vec2],
    tau: f64,
) -> (Vec<Vec2>, Vec<Vec2>) {
    debug_assert!(tau > 0.0);
    let n = v_new.len();
    let mut u = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for i in 0..n {
        acc.push((2.0 / tau) * (v_new[i] - v_prev[i]) - acc_prev[i]);
        u.push(u_prev[i] + (tau / 2.0) * (v_new[i] + v_prev[i]));
    }
    (u, acc)
}

/// Per-node diagnostics of one committed step.
#[derive(Clone, Debug)]
pub struct ContactDiag {
    pub dof: usize,
    pub interface: usize,
    pub measure: f64,
    /// signed tangential slip rate (m/s)
    pub slip_rate: f64,
    pub alpha: f64,
    /// reference position of the node
    pub position: Vec2,
}

#[derive(Clone, Debug)]
pub struct StepDiag {
    pub fp: FixedPointReport,
    pub nodes: Vec<ContactDiag>,
}

/// Assembled operators and scenario-independent data of one mesh.
pub struct Model {
    pub meshes: Vec<Triangulation>,
    pub dofs: DofMap,
    pub positions: Vec<Vec2>,
    pub mass: BlockCsr,
    pub visc: BlockCsr,
    pub elast: BlockCsr,
    pub ell: Vec<Vec2>,
    pub prolongations: Vec<ScalarCsr>,
    pub material: MaterialParams,
    pub law: StateLaw,
    pub loading: LoadingProfile,
    /// dofs on the driven (upper) Dirichlet boundary
    pub driven: Vec<bool>,
    /// y coordinate of the driven boundary, reference for lithostatic depth
    pub y_top: f64,
    /// fixed normal-stress bound; `None` selects lithostatic rho g depth
    pub sigma_override: Option<f64>,
    /// friction constants; the per-node normal stress is filled in
    pub friction: FrictionParams,
}

impl Model {
    pub fn new(
        hier: &MeshHierarchy,
        material: MaterialParams,
        friction: FrictionParams,
        loading: LoadingProfile,
    ) -> Result<Model, FemError> {
        let meshes = hier.finest().clone();
        let dofs = DofMap::new(&meshes);
        let positions = dofs.positions(&meshes);
        let mass = fem::assemble_mass(&meshes, &dofs, &material)?;
        let visc = fem::assemble_viscosity(&meshes, &dofs, &material)?;
        let elast = fem::assemble_elasticity(&meshes, &dofs, &material)?;
        let ell = fem::assemble_load(&meshes, &dofs, &material, None)?;
        let prolongations = fem::global_prolongations(hier);
        // the driven boundary is the Dirichlet part of the topmost body
        let top_sub = meshes.len() - 1;
        let mut driven = vec![false; dofs.len()];
        let mut y_top = f64::NEG_INFINITY;
        for face in &meshes[top_sub].boundary_faces {
            if face.tag == BoundaryTag::Dirichlet {
                for &v in &face.v {
                    let g = dofs.global(top_sub, v);
                    driven[g] = true;
                    y_top = y_top.max(positions[g].y);
                }
            }
        }
        Ok(Model {
            meshes,
            dofs,
            positions,
            mass,
            visc,
            elast,
            ell,
            prolongations,
            material,
            law: friction.law,
            loading,
            driven,
            y_top,
            sigma_override: None,
            friction,
        })
    }

    /// Frozen normal-stress bound at height `y`: lithostatic pressure below
    /// the driven boundary unless overridden.
    pub fn sigma_n(&self, y: f64) -> f64 {
        match self.sigma_override {
            Some(s) => s,
            None => self.material.rho * self.material.g * (self.y_top - y),
        }
    }

    /// Prescribed boundary velocities at time `t`: the driven boundary
    /// moves horizontally with `v_D xi(t)`, the foundation is fixed.
    pub fn prescribed_velocity(&self, t: f64) -> Vec<Vec2> {
        let speed = self.loading.v_d * self.loading.xi(t);
        let mut out = bv_zeros(self.dofs.len());
        for (i, v) in out.iter_mut().enumerate() {
            if self.driven[i] {
                *v = Vec2::new(speed, 0.0);
            }
        }
        out
    }

    pub fn contact_dofs(&self, coupling: &ContactCoupling) -> Vec<ContactDof> {
        coupling
            .transform
            .nodes
            .iter()
            .map(|n| ContactDof {
                dof: n.dof,
                measure: n.measure,
                params: FrictionParams {
                    sigma_n_bar: self.sigma_n(self.positions[n.dof].y),
                    ..self.friction
                },
            })
            .collect()
    }

    /// One Newmark step of size `tau` from `state`.
    pub fn step_once(
        &self,
        state: &SystemState,
        tau: f64,
        cfg: &SolverConfig,
    ) -> Result<(SystemState, StepDiag), StepError> {
        let coupling = ContactCoupling::build(&self.meshes, &self.dofs, &state.u)?;
        let an = fem::compose_an(&self.mass, &self.visc, &self.elast, tau);
        let ln = fem::compose_ln(&self.ell, &self.mass, &self.elast, &state.u, &state.v, &state.acc, tau);
        let a_hat = coupling.transform.transform_matrix(&an);
        let rhs = coupling.transform.transform_vector(&ln);
        let fixed = coupling.transform.constrained_fixed(&self.dofs);
        let prescribed = self.prescribed_velocity(state.t + tau);
        let contact = self.contact_dofs(&coupling);
        let alpha_prev: Vec<f64> = contact.iter().map(|c| state.alpha[c.dof]).collect();
        let sys = RateSystem::new(&a_hat, &rhs, fixed, &prescribed, contact, self.prolongations.clone());
        let z0 = coupling.transform.rotated_from_primal(&state.v);
        let (z, alpha_c, fp) = fixed_point_solve(&sys, &alpha_prev, tau, &z0, cfg)?;
        let v_new = coupling.transform.primal_from_rotated(&z);
        let (u_new, acc_new) = newmark_update(&v_new, &state.u, &state.v, &state.acc, tau);
        let mut alpha = state.alpha.clone();
        let mut nodes = Vec::with_capacity(sys.contact.len());
        for (k, c) in sys.contact.iter().enumerate() {
            alpha[c.dof] = alpha_c[k];
            nodes.push(ContactDiag {
                dof: c.dof,
                interface: coupling.transform.nodes[k].interface,
                measure: c.measure,
                slip_rate: z[c.dof].x,
                alpha: alpha_c[k],
                position: self.positions[c.dof],
            });
        }
        let new_state = SystemState {
            t: state.t + tau,
            tau_prev: tau,
            u: u_new,
            v: v_new,
            acc: acc_new,
            alpha,
        };
        Ok((new_state, StepDiag { fp, nodes }))
    }

    /// Initial displacement: one step of the geometric fixed-point
    /// iteration from `u = 0`, i.e. the constrained stationary solve
    /// `b(u_0, v) = l(v)` with the contact map built at zero deformation.
    pub fn initial_displacement(&self, cfg: &SolverConfig) -> Result<Vec<Vec2>, StepError> {
        let zero = bv_zeros(self.dofs.len());
        let coupling = ContactCoupling::build(&self.meshes, &self.dofs, &zero)?;
        let mut b_hat = coupling.transform.transform_matrix(&self.elast);
        let fixed = coupling.transform.constrained_fixed(&self.dofs);
        b_hat.constrain(&fixed);
        let mut rhs = coupling.transform.transform_vector(&self.ell);
        for i in 0..self.dofs.len() {
            for c in 0..2 {
                if fixed[i][c] {
                    rhs[i][c] = 0.0;
                }
            }
        }
        let mg = MgHierarchy::build(b_hat.clone(), fixed, &self.prolongations);
        let mut z = bv_zeros(self.dofs.len());
        let rhs_norm = crate::linalg::bv_norm(&rhs).max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            let res = bv_sub(&rhs, &b_hat.mul_vec(&z));
            if crate::linalg::bv_norm(&res) <= 1e-10 * rhs_norm {
                break;
            }
            let corr = mg.solve(&res, 1, cfg);
            crate::linalg::bv_axpy(&mut z, 1.0, &corr);
        }
        Ok(coupling.transform.primal_from_rotated(&z))
    }

    /// Initial acceleration from `(rho uddot_0, v) = l(v) - b(u_0, v)` on
    /// the unconstrained free space.
    pub fn initial_acceleration(&self, u0: &[Vec2]) -> Vec<Vec2> {
        let mut rhs = bv_sub(&self.ell, &self.elast.mul_vec(u0));
        let mut m = self.mass.clone();
        m.constrain(&self.dofs.fixed);
        for i in 0..self.dofs.len() {
            for c in 0..2 {
                if self.dofs.fixed[i][c] {
                    rhs[i][c] = 0.0;
                }
            }
        }
        pcg_solve(&m, &rhs, 1e-12, 10_000)
    }

    /// Complete initial state at `t = 0`.
    pub fn initial_state(&self, alpha0: f64, cfg: &SolverConfig) -> Result<SystemState, StepError> {
        let u = self.initial_displacement(cfg)?;
        let acc = self.initial_acceleration(&u);
        Ok(SystemState {
            t: 0.0,
            tau_prev: 1e-4 * self.loading.t0,
            u,
            v: bv_zeros(self.dofs.len()),
            acc,
            alpha: vec![alpha0; self.dofs.len()],
        })
    }

    /// One adaptive macro step: selects `tau_n` by step doubling and
    /// commits the two-half-step solution (advancing `2 tau_n`).
    pub fn adaptive_step(
        &self,
        state: &SystemState,
        cfg: &SolverConfig,
        delta_tau: f64,
        tau_min: f64,
    ) -> Result<AdaptiveOutcome, StepError> {
        let remaining = self.loading.t0 - state.t;
        let trial0 = state.tau_prev.min(remaining / 2.0).max(tau_min);
        let mut evals = 0usize;
        // Steps taken from the unchanged base state recur across trials
        // (the coarse step of one trial is the first half step of the
        // doubled trial, and vice versa under bisection), so cache them.
        let first_steps: std::cell::RefCell<
            std::collections::HashMap<u64, (SystemState, StepDiag)>,
        > = Default::default();
        let step_from_base = |tau: f64| -> Result<(SystemState, StepDiag), StepError> {
            if let Some(hit) = first_steps.borrow().get(&tau.to_bits()) {
                return Ok(hit.clone());
            }
            let out = self.step_once(state, tau, cfg)?;
            first_steps.borrow_mut().insert(tau.to_bits(), out.clone());
            Ok(out)
        };
        let eval = |tau: f64| -> Result<(f64, TrialResult), StepError> {
            let (big, big_diag) = step_from_base(2.0 * tau)?;
            let (half1, d1) = step_from_base(tau)?;
            let (half2, d2) = self.step_once(&half1, tau, cfg)?;
            // discrete L2(Gamma_F) distance over the coarse trial's nodes
            let err = big_diag
                .nodes
                .iter()
                .map(|n| n.measure * (big.alpha[n.dof] - half2.alpha[n.dof]).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok((err, TrialResult { states: [half1, half2], diags: [d1, d2] }))
        };
        // a solver failure within a trial counts as a violated criterion
        let mut try_eval = |tau: f64| -> Result<Option<(f64, TrialResult)>, StepError> {
            evals += 1;
            match eval(tau) {
                Ok(r) => Ok(Some(r)),
                Err(StepError::Solver(_)) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let mut tau = trial0;
        let first = try_eval(tau)?;
        let accepted = match first {
            Some((err, res)) if err <= delta_tau => {
                // coarsening: double while the criterion holds
                let mut best = res;
                loop {
                    let doubled = 2.0 * tau;
                    if state.t + 2.0 * doubled > self.loading.t0 + 1e-12 * self.loading.t0 {
                        break;
                    }
                    match try_eval(doubled)? {
                        Some((e2, r2)) if e2 <= delta_tau => {
                            tau = doubled;
                            best = r2;
                        }
                        _ => break,
                    }
                }
                best
            }
            _ => {
                // refinement: bisect until the criterion holds
                loop {
                    tau *= 0.5;
                    if tau < tau_min {
                        return Err(StepError::TauUnderflow { tau, tau_min, t: state.t });
                    }
                    if let Some((e2, r2)) = try_eval(tau)? {
                        if e2 <= delta_tau {
                            break r2;
                        }
                    }
                }
            }
        };
        Ok(AdaptiveOutcome { tau, states: accepted.states, diags: accepted.diags, trials: evals })
    }
}

struct TrialResult {
    states: [SystemState; 2],
    diags: [StepDiag; 2],
}

/// Result of one adaptive macro step: two committed sub-steps of size
/// `tau` each.
pub struct AdaptiveOutcome {
    pub tau: f64,
    pub states: [SystemState; 2],
    pub diags: [StepDiag; 2],
    /// number of trial evaluations used by the step selection
    pub trials: usize,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSCK0001";

/// Writes the state as portable binary: magic, u64 dof count, then t,
/// tau_prev and the u/v/acc/alpha arrays as little-endian f64.
pub fn write_checkpoint(state: &SystemState, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(state.u.len() as u64).to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    w.write_all(&state.tau_prev.to_le_bytes())?;
    for arr in [&state.u, &state.v, &state.acc] {
        for v in arr.iter() {
            w.write_all(&v.x.to_le_bytes())?;
            w.write_all(&v.y.to_le_bytes())?;
        }
    }
    for a in &state.alpha {
        w.write_all(&a.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<SystemState, StepError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(StepError::BadCheckpoint("bad magic".into()));
    }
    let mut buf8 = [0u8; 8];
    let mut f64_of = |r: &mut dyn Read| -> Result<f64, StepError> {
        r.read_exact(&mut buf8)?;
        Ok(f64::from_le_bytes(buf8))
    };
    let mut cnt = [0u8; 8];
    r.read_exact(&mut cnt)?;
    let n = u64::from_le_bytes(cnt) as usize;
    if n > 1 << 32 {
        return Err(StepError::BadCheckpoint(format!("implausible dof count {n}")));
    }
    let t = f64_of(r)?;
    let tau_prev = f64_of(r)?;
    let read_bv = |r: &mut dyn Read| -> Result<Vec<Vec2>, StepError> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let x = f64::from_le_bytes(buf);
            r.read_exact(&mut buf)?;
            let y = f64::from_le_bytes(buf);
            out.push(Vec2::new(x, y));
        }
        Ok(out)
    };
    let u = read_bv(r)?;
    let v = read_bv(r)?;
    let acc = read_bv(r)?;
    let mut alpha = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        alpha.push(f64::from_le_bytes(buf));
    }
    Ok(SystemState { t, tau_prev, u, v, acc, alpha })
}
