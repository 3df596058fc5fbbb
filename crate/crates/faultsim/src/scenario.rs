//! Experiment definitions, configuration ingestion and output emission.
//!
//! A [`ScenarioConfig`] fully describes one run: geometry, material,
//! friction and loading constants, mesh controls and solver tolerances.
//! [`run_scenario`] builds the mesh hierarchy, assembles the operators,
//! solves the initial problems and marches the adaptive time loop,
//! streaming CSV records and snapshots as it goes.

use crate::fem::{FemError, MaterialParams};
use crate::friction::{FrictionParams, StateLaw};
use crate::mesh::{self, MeshError, Rect};
use crate::solver::SolverConfig;
use crate::stepper::{
    read_checkpoint, write_checkpoint, LoadingProfile, Model, StepDiag, StepError, SystemState,
};
use std::io::Write as _;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configuration parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("step {step} failed during {phase}: {source}")]
    Run { step: usize, phase: &'static str, source: StepError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// True when the failure is a solver breakdown rather than bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, ScenarioError::Run { .. })
    }
}

/// Built-in experiment geometries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// two 5 m x 1 m bodies with a single fault at y = 0
    SpringSlider,
    /// five layers with faults at y in {-0.345, -0.045, 0.045, 0.345}
    Layered5Body,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GeometryConfig {
    /// rectangular bodies ordered bottom to top, sharing horizontal edges
    pub bodies: Vec<Rect>,
}

/// Friction constants shared by all faults; the normal-stress bound is
/// lithostatic and filled in per node.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FrictionConfig {
    pub law: StateLaw,
    pub v0: f64,
    pub mu0: f64,
    pub a: f64,
    pub b: f64,
    pub l: f64,
    /// uniform initial transformed state alpha = log theta
    pub alpha0: f64,
}

impl FrictionConfig {
    pub fn params(&self) -> FrictionParams {
        FrictionParams {
            v0: self.v0,
            mu0: self.mu0,
            a: self.a,
            b: self.b,
            l: self.l,
            sigma_n_bar: 0.0,
            law: self.law,
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LoadingConfig {
    /// loading speed of the upper boundary (m/s)
    pub v_d: f64,
    /// final time T0 (s)
    pub t0: f64,
    #[serde(default)]
    pub smooth_ramp: bool,
    /// stop the march early at this physical time (s); `None` runs to T0
    #[serde(default)]
    pub max_time: Option<f64>,
}

impl LoadingConfig {
    pub fn profile(&self) -> LoadingProfile {
        LoadingProfile { v_d: self.v_d, t0: self.t0, smooth_ramp: self.smooth_ramp }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MeshConfig {
    /// initial cell size per body (m); a single entry applies to all
    pub h0: Vec<f64>,
    /// target diameter at the faults (m)
    pub h_min: f64,
    /// growth factor of the admissible diameter with fault distance
    pub grading: f64,
    /// maximum number of refinement sweeps
    pub level_cap: usize,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TimeConfig {
    /// state-increment threshold of the step-doubling criterion
    pub delta_tau: f64,
    /// smallest admissible step size (s)
    pub tau_min: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct OutputConfig {
    /// directory for steps.csv, fault_<i>.csv, contours_<i>.txt and the
    /// final checkpoint; `None` keeps results in memory only
    #[serde(default)]
    pub directory: Option<PathBuf>,
    /// snapshot every n-th committed step outside events
    pub snapshot_stride: usize,
    /// accepted steps shorter than this (s) count as event resolution and
    /// are always snapshotted
    pub event_tau_threshold: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: GeometryConfig,
    pub material: MaterialParams,
    pub friction: FrictionConfig,
    pub loading: LoadingConfig,
    pub solver: SolverConfig,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn preset(which: Preset) -> ScenarioConfig {
        let (name, bodies, h0) = match which {
            Preset::SpringSlider => (
                "spring_slider",
                vec![
                    Rect { x_min: -2.5, x_max: 2.5, y_min: -1.0, y_max: 0.0 },
                    Rect { x_min: -2.5, x_max: 2.5, y_min: 0.0, y_max: 1.0 },
                ],
                vec![1.0, 1.0],
            ),
            Preset::Layered5Body => (
                "layered_5body",
                vec![
                    Rect { x_min: -2.5, x_max: 2.5, y_min: -1.345, y_max: -0.345 },
                    Rect { x_min: -2.5, x_max: 2.5, y_min: -0.345, y_max: -0.045 },
                    Rect { x_min: -2.5, x_max: 2.5, y_min: -0.045, y_max: 0.045 },
                    Rect { x_min: -2.5, x_max: 2.5, y_min: 0.045, y_max: 0.345 },
                    Rect { x_min: -2.5, x_max: 2.5, y_min: 0.345, y_max: 1.345 },
                ],
                vec![1.0, 0.3, 0.09, 0.3, 1.0],
            ),
        };
        ScenarioConfig {
            name: name.to_string(),
            geometry: GeometryConfig { bodies },
            material: MaterialParams::table1(),
            friction: FrictionConfig {
                law: StateLaw::Dieterich,
                v0: 1e-6,
                mu0: 0.6,
                a: 0.010,
                b: 0.015,
                l: 1e-5,
                alpha0: -10.0,
            },
            loading: LoadingConfig { v_d: 2e-4, t0: 60.0, smooth_ramp: false, max_time: None },
            solver: SolverConfig::default(),
            mesh: MeshConfig { h0, h_min: 0.0625, grading: 80.0, level_cap: 5 },
            time: TimeConfig { delta_tau: 1e-5, tau_min: 1e-9 },
            output: OutputConfig {
                directory: None,
                snapshot_stride: 10,
                event_tau_threshold: 1e-3,
            },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<ScenarioConfig, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Config(m));
        if self.geometry.bodies.is_empty() {
            return err("geometry.bodies must not be empty".into());
        }
        mesh::layered_stack(&self.geometry.bodies)?;
        self.material.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        let mut f = self.friction.params();
        f.sigma_n_bar = 1.0;
        f.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        if self.loading.t0 <= 0.0 {
            return err("loading.t0 must be positive".into());
        }
        if self.loading.v_d < 0.0 {
            return err("loading.v_d must be non-negative".into());
        }
        if let Some(mt) = self.loading.max_time {
            if mt < 0.0 {
                return err("loading.max_time must be non-negative".into());
            }
        }
        let n = self.geometry.bodies.len();
        if self.mesh.h0.len() != 1 && self.mesh.h0.len() != n {
            return err(format!(
                "mesh.h0 needs 1 or {n} entries, got {}",
                self.mesh.h0.len()
            ));
        }
        if self.mesh.h0.iter().any(|&h| h <= 0.0) || self.mesh.h_min <= 0.0 {
            return err("mesh sizes must be positive".into());
        }
        if self.mesh.grading < 0.0 {
            return err("mesh.grading must be non-negative".into());
        }
        if self.mesh.level_cap == 0 {
            return err("mesh.level_cap must be at least 1".into());
        }
        if self.time.delta_tau <= 0.0 || self.time.tau_min <= 0.0 {
            return err("time tolerances must be positive".into());
        }
        if self.solver.omega <= 0.0 || self.solver.omega > 1.0 {
            return err("solver.omega must lie in (0, 1]".into());
        }
        if self.output.snapshot_stride == 0 {
            return err("output.snapshot_stride must be at least 1".into());
        }
        Ok(())
    }

    fn h0_per_body(&self) -> Vec<f64> {
        if self.mesh.h0.len() == 1 {
            vec![self.mesh.h0[0]; self.geometry.bodies.len()]
        } else {
            self.mesh.h0.clone()
        }
    }
}

/// One committed time step, with per-fault mean slip rates.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: f64,
    pub tau: f64,
    pub fp_iters: usize,
    pub mg_iters: usize,
    /// weighted mean |relative velocity| per fault interface (m/s)
    pub mean_rel_vel: Vec<f64>,
}

/// Fault profile at one snapshot time, on the fixed non-mortar node grid.
#[derive(Clone, Debug)]
pub struct FaultSnapshot {
    pub t: f64,
    pub rel_vel: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Snapshot series of one fault interface.
#[derive(Clone, Debug)]
pub struct FaultSeries {
    pub interface: usize,
    /// x coordinates of the non-mortar nodes, ascending
    pub x: Vec<f64>,
    dofs: Vec<usize>,
    pub snapshots: Vec<FaultSnapshot>,
}

/// One detected slip event on a fault.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlipEvent {
    pub onset: f64,
    pub peak_t: f64,
    pub peak_vel: f64,
    pub end: f64,
}

pub struct RunOutputs {
    pub steps: Vec<StepRecord>,
    pub faults: Vec<FaultSeries>,
    /// detected slip events per fault interface
    pub events: Vec<Vec<SlipEvent>>,
    pub final_state: SystemState,
    pub total_vertices: usize,
}

/// Maximal intervals where the series exceeds `factor * v_d`, with gaps
/// shorter than `merge_gap` seconds merged.
pub fn detect_slip_events(
    t: &[f64],
    mean_vel: &[f64],
    v_d: f64,
    factor: f64,
    merge_gap: f64,
) -> Vec<SlipEvent> {
    assert_eq!(t.len(), mean_vel.len());
    let threshold = factor * v_d;
    // maximal above-threshold runs as index ranges
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &v) in mean_vel.iter().enumerate() {
        if v > threshold {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            runs.push((s, i - 1));
        }
    }
    if let Some(s) = start {
        runs.push((s, mean_vel.len() - 1));
    }
    // merge runs separated by short quiescent gaps
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if t[r.0] - t[last.1] < merge_gap => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    merged
        .into_iter()
        .map(|(s, e)| {
            let mut peak = s;
            for i in s..=e {
                if mean_vel[i] > mean_vel[peak] {
                    peak = i;
                }
            }
            SlipEvent { onset: t[s], peak_t: t[peak], peak_vel: mean_vel[peak], end: t[e] }
        })
        .collect()
}

/// Contour levels of Fig. style velocity plots, in m/s.
pub const CONTOUR_LEVELS: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

/// Marching-segments contouring of the space-time field |relative
/// velocity|(x, t). Each output line is `level_um x1 t1 x2 t2`.
pub fn emit_level_lines(series: &FaultSeries, levels: &[f64]) -> String {
    let mut out = String::new();
    let nx = series.x.len();
    if nx < 2 || series.snapshots.len() < 2 {
        return out;
    }
    for &level in levels {
        let level_um = level * 1e6;
        for w in series.snapshots.windows(2) {
            let (s0, s1) = (&w[0], &w[1]);
            for j in 0..nx - 1 {
                // cell corners: (x_j, t0) (x_{j+1}, t0) (x_{j+1}, t1) (x_j, t1)
                let xs = [series.x[j], series.x[j + 1], series.x[j + 1], series.x[j]];
                let ts = [s0.t, s0.t, s1.t, s1.t];
                let vs = [s0.rel_vel[j], s0.rel_vel[j + 1], s1.rel_vel[j + 1], s1.rel_vel[j]];
                let mut crossings: Vec<(f64, f64)> = Vec::new();
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    let (va, vb) = (vs[a], vs[b]);
                    if (va > level) != (vb > level) {
                        let s = (level - va) / (vb - va);
                        crossings.push((
                            xs[a] + s * (xs[b] - xs[a]),
                            ts[a] + s * (ts[b] - ts[a]),
                        ));
                    }
                }
                // 0, 2 or 4 crossings; pair consecutively (deterministic
                // resolution of the saddle case)
                for pair in crossings.chunks(2) {
                    if let [p, q] = pair {
                        out.push_str(&format!(
                            "{} {} {} {} {}\n",
                            level_um, p.0, p.1, q.0, q.1
                        ));
                    }
                }
            }
        }
    }
    out
}

struct OutputWriters {
    steps: std::io::BufWriter<std::fs::File>,
    dir: PathBuf,
}

impl OutputWriters {
    fn create(dir: &PathBuf) -> Result<OutputWriters, ScenarioError> {
        std::fs::create_dir_all(dir)?;
        let mut steps = std::io::BufWriter::new(std::fs::File::create(dir.join("steps.csv"))?);
        writeln!(steps, "t,tau,fp_iters,mg_iters,fault_id,mean_rel_vel")?;
        Ok(OutputWriters { steps, dir: dir.clone() })
    }

    fn write_record(&mut self, r: &StepRecord) -> Result<(), ScenarioError> {
        for (fid, v) in r.mean_rel_vel.iter().enumerate() {
            writeln!(
                self.steps,
                "{},{},{},{},{},{}",
                r.t, r.tau, r.fp_iters, r.mg_iters, fid, v
            )?;
        }
        self.steps.flush()?;
        Ok(())
    }

    fn finish(mut self, outputs: &RunOutputs) -> Result<(), ScenarioError> {
        self.steps.flush()?;
        for series in &outputs.faults {
            let mut f = std::io::BufWriter::new(std::fs::File::create(
                self.dir.join(format!("fault_{}.csv", series.interface)),
            )?);
            writeln!(f, "t,x,rel_vel,alpha")?;
            for snap in &series.snapshots {
                for (j, &x) in series.x.iter().enumerate() {
                    writeln!(f, "{},{},{},{}", snap.t, x, snap.rel_vel[j], snap.alpha[j])?;
                }
            }
            f.flush()?;
            std::fs::write(
                self.dir.join(format!("contours_{}.txt", series.interface)),
                emit_level_lines(series, &CONTOUR_LEVELS),
            )?;
        }
        let mut ck = std::io::BufWriter::new(std::fs::File::create(
            self.dir.join("checkpoint.bin"),
        )?);
        write_checkpoint(&outputs.final_state, &mut ck)?;
        ck.flush()?;
        Ok(())
    }
}

/// Builds mesh, operators and initial state for a configuration.
pub fn build_model(config: &ScenarioConfig) -> Result<(Model, usize), ScenarioError> {
    config.validate()?;
    let specs = mesh::layered_stack(&config.geometry.bodies)?;
    let initial = mesh::build_initial_mesh(&specs, &config.h0_per_body())?;
    let faults = mesh::fault_segments(&specs);
    let hier = mesh::refine_adaptive_capped(
        initial,
        &faults,
        config.mesh.h_min,
        config.mesh.grading,
        config.mesh.level_cap,
    );
    let total_vertices = hier.total_vertices(hier.num_levels() - 1);
    let model = Model::new(
        &hier,
        config.material,
        config.friction.params(),
        config.loading.profile(),
    )?;
    Ok((model, total_vertices))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutputs, ScenarioError> {
    run_scenario_from(config, None)
}

/// Runs a scenario, optionally resuming from a checkpointed state.
pub fn run_scenario_from(
    config: &ScenarioConfig,
    resume: Option<SystemState>,
) -> Result<RunOutputs, ScenarioError> {
    let (model, total_vertices) = build_model(config)?;
    let mut solver_cfg = config.solver;
    solver_cfg.fp_tol = 0.1 * config.time.delta_tau;

    let mut state = match resume {
        Some(s) => {
            if s.u.len() != model.dofs.len() {
                return Err(ScenarioError::Config(format!(
                    "checkpoint has {} dofs but the mesh has {}",
                    s.u.len(),
                    model.dofs.len()
                )));
            }
            s
        }
        None => model
            .initial_state(config.friction.alpha0, &solver_cfg)
            .map_err(|e| ScenarioError::Run { step: 0, phase: "initial conditions", source: e })?,
    };

    // fixed snapshot grid: non-mortar nodes of each interface at u = 0
    let zero = crate::linalg::bv_zeros(model.dofs.len());
    let coupling = crate::mortar::ContactCoupling::build(&model.meshes, &model.dofs, &zero)
        .map_err(|e| ScenarioError::Run { step: 0, phase: "contact setup", source: e.into() })?;
    let n_faults = config.geometry.bodies.len().saturating_sub(1);
    let mut faults: Vec<FaultSeries> = (0..n_faults)
        .map(|i| {
            let mut nodes: Vec<(usize, f64)> = coupling
                .transform
                .nodes
                .iter()
                .filter(|n| n.interface == i)
                .map(|n| (n.dof, model.positions[n.dof].x))
                .collect();
            nodes.sort_by(|a, b| a.1.total_cmp(&b.1));
            FaultSeries {
                interface: i,
                x: nodes.iter().map(|&(_, x)| x).collect(),
                dofs: nodes.iter().map(|&(d, _)| d).collect(),
                snapshots: Vec::new(),
            }
        })
        .collect();

    let mut writers = match &config.output.directory {
        Some(dir) => Some(OutputWriters::create(dir)?),
        None => None,
    };

    let mean_per_fault = |diag: &StepDiag| -> Vec<f64> {
        let mut num = vec![0.0; n_faults];
        let mut den = vec![0.0; n_faults];
        for n in &diag.nodes {
            num[n.interface] += n.measure * n.slip_rate.abs();
            den[n.interface] += n.measure;
        }
        num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 }).collect()
    };

    let mut steps: Vec<StepRecord> = Vec::new();
    let initial_record = StepRecord {
        t: state.t,
        tau: 0.0,
        fp_iters: 0,
        mg_iters: 0,
        mean_rel_vel: vec![0.0; n_faults],
    };
    if let Some(w) = writers.as_mut() {
        w.write_record(&initial_record)?;
    }
    steps.push(initial_record);

    let end = config.loading.max_time.unwrap_or(config.loading.t0).min(config.loading.t0);
    let mut committed = 0usize;
    while state.t < end - 1e-9 {
        let out = model
            .adaptive_step(&state, &solver_cfg, config.time.delta_tau, config.time.tau_min)
            .map_err(|e| ScenarioError::Run {
                step: committed + 1,
                phase: "adaptive step",
                source: e,
            })?;
        let [s1, s2] = out.states;
        let [d1, d2] = out.diags;
        for (sub, diag) in [(&s1, &d1), (&s2, &d2)] {
            committed += 1;
            let record = StepRecord {
                t: sub.t,
                tau: out.tau,
                fp_iters: diag.fp.fp_iterations,
                mg_iters: diag.fp.vcycles,
                mean_rel_vel: mean_per_fault(diag),
            };
            if let Some(w) = writers.as_mut() {
                w.write_record(&record)?;
            }
            steps.push(record);
            let snapshot = out.tau < config.output.event_tau_threshold
                || committed % config.output.snapshot_stride == 0;
            if snapshot {
                let mut per_node: std::collections::HashMap<usize, (f64, f64)> =
                    std::collections::HashMap::new();
                for n in &diag.nodes {
                    per_node.insert(n.dof, (n.slip_rate.abs(), n.alpha));
                }
                for series in faults.iter_mut() {
                    let rel_vel: Vec<f64> =
                        series.dofs.iter().map(|d| per_node.get(d).map_or(0.0, |v| v.0)).collect();
                    let alpha: Vec<f64> =
                        series.dofs.iter().map(|d| sub.alpha[*d]).collect();
                    series.snapshots.push(FaultSnapshot { t: sub.t, rel_vel, alpha });
                }
            }
        }
        state = s2;
    }

    let events = (0..n_faults)
        .map(|i| {
            let t: Vec<f64> = steps.iter().map(|r| r.t).collect();
            let v: Vec<f64> = steps.iter().map(|r| r.mean_rel_vel[i]).collect();
            detect_slip_events(&t, &v, config.loading.v_d, 10.0, 0.05)
        })
        .collect();

    let outputs = RunOutputs { steps, faults, events, final_state: state, total_vertices };
    if let Some(w) = writers {
        w.finish(&outputs)?;
    }
    Ok(outputs)
}

/// Reads a checkpoint file written by a previous run.
pub fn load_checkpoint(path: &std::path::Path) -> Result<SystemState, ScenarioError> {
    let mut f = std::fs::File::open(path)?;
    read_checkpoint(&mut f).map_err(|e| ScenarioError::Run {
        step: 0,
        phase: "checkpoint load",
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ScenarioConfig::preset(Preset::SpringSlider).validate().unwrap();
        ScenarioConfig::preset(Preset::Layered5Body).validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_idempotent() {
        for p in [Preset::SpringSlider, Preset::Layered5Body] {
            let cfg = ScenarioConfig::preset(p);
            let s1 = cfg.to_toml_string();
            let cfg2 = ScenarioConfig::from_toml_str(&s1).unwrap();
            let s2 = cfg2.to_toml_string();
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.time.delta_tau = 0.0;
        assert!(matches!(cfg.validate(), Err(ScenarioError::Config(_))));
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.geometry.bodies[1].y_min = 0.5; // gap between bodies
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.mesh.h0 = vec![1.0, 1.0, 1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn event_detection_trivial_and_synthetic() {
        let v_d = 2e-4;
        // constant series below threshold
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let flat = vec![v_d; 100];
        assert!(detect_slip_events(&t, &flat, v_d, 10.0, 0.05).is_empty());
        // three separated Gaussian pulses
        let centers = [2.0, 5.0, 8.0];
        let v: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let pulse: f64 = centers
                    .iter()
                    .map(|c| (-((ti - c) / 0.2).powi(2)).exp())
                    .sum();
                v_d + 100.0 * v_d * pulse
            })
            .collect();
        let events = detect_slip_events(&t, &v, v_d, 10.0, 0.05);
        assert_eq!(events.len(), 3);
        for (e, c) in events.iter().zip(centers) {
            assert!((e.peak_t - c).abs() <= 0.1 + 1e-12, "peak at {} vs {}", e.peak_t, c);
            assert!(e.onset <= e.peak_t && e.peak_t <= e.end);
            assert!(e.peak_vel >= 10.0 * v_d);
        }
    }

    #[test]
    fn event_detection_merges_short_gaps() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let mut v = vec![1.0; 10];
        v[4] = 0.0; // 0.01 s dip, below merge_gap
        let events = detect_slip_events(&t, &v, 0.01, 10.0, 0.05);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].onset, 0.0);
        assert_eq!(events[0].end, t[9]);
    }

    fn synthetic_series(f: impl Fn(f64, f64) -> f64) -> FaultSeries {
        let x: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.2).collect();
        let snapshots = times
            .iter()
            .map(|&t| FaultSnapshot {
                t,
                rel_vel: x.iter().map(|&xi| f(xi, t)).collect(),
                alpha: vec![0.0; x.len()],
            })
            .collect();
        FaultSeries { interface: 0, x: x.clone(), dofs: vec![0; x.len()], snapshots }
    }

    #[test]
    fn contours_trivial_and_planar() {
        // constant field below the lowest level: empty output
        let flat = synthetic_series(|_, _| 1e-7);
        assert!(emit_level_lines(&flat, &CONTOUR_LEVELS).is_empty());
        // planar field v = 1e-5 (1 + x): the level v = 1.5e-5 is the
        // straight line x = 0.5, interior to the grid
        let plane = synthetic_series(|x, _| 1e-5 * (1.0 + x));
        let out = emit_level_lines(&plane, &[1.5e-5]);
        assert!(!out.is_empty());
        for line in out.lines() {
            let f: Vec<f64> = line.split_whitespace().map(|s| s.parse().unwrap()).collect();
            assert_eq!(f.len(), 5);
            assert!((f[0] - 15.0).abs() < 1e-12, "level in um/s");
            assert!((f[1] - 0.5).abs() < 1e-12 && (f[3] - 0.5).abs() < 1e-12,
                "contour must lie on x = 0.5, got {line}");
        }
    }

    #[test]
    fn max_time_zero_emits_only_the_initial_record() {
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.mesh.level_cap = 1;
        cfg.loading.max_time = Some(0.0);
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.steps[0].t, 0.0);
        assert_eq!(out.steps[0].mean_rel_vel, vec![0.0]);
    }

    #[test]
    fn short_run_emits_files_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.mesh.level_cap = 1;
        cfg.friction.alpha0 = 0.0; // mild transient keeps the test fast
        cfg.loading.max_time = Some(0.02);
        cfg.output.directory = Some(dir.path().to_path_buf());
        cfg.output.snapshot_stride = 1;
        let out = run_scenario(&cfg).unwrap();
        assert!(out.steps.len() > 1);
        assert!(out.final_state.t >= 0.02);
        let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
        assert!(csv.starts_with("t,tau,fp_iters,mg_iters,fault_id,mean_rel_vel\n"));
        assert_eq!(csv.lines().count(), 1 + out.steps.len());
        assert!(dir.path().join("fault_0.csv").exists());
        assert!(dir.path().join("contours_0.txt").exists());
        // resume from the final checkpoint and continue
        let state = load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(state.u.len(), out.final_state.u.len());
        let mut cfg2 = cfg.clone();
        cfg2.loading.max_time = Some(state.t + 0.01);
        cfg2.output.directory = None;
        let out2 = run_scenario_from(&cfg2, Some(state)).unwrap();
        assert!(out2.final_state.t > out.final_state.t);
    }

    #[test]
    fn short_runs_are_deterministic() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
            cfg.mesh.level_cap = 1;
            cfg.friction.alpha0 = 0.0;
            cfg.loading.max_time = Some(0.02);
            cfg.output.directory = Some(dir.path().to_path_buf());
            run_scenario(&cfg).unwrap();
            std::fs::read(dir.path().join("steps.csv")).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_times_strictly_increase() {
        let mut cfg = ScenarioConfig::preset(Preset::SpringSlider);
        cfg.mesh.level_cap = 1;
        cfg.friction.alpha0 = 0.0;
        cfg.loading.max_time = Some(0.01);
        let out = run_scenario(&cfg).unwrap();
        for w in out.steps.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].mean_rel_vel.iter().all(|&v| v >= 0.0));
        }
    }
}
