use clap::{Parser, Subcommand, ValueEnum};
use faultsim::scenario::{
    load_checkpoint, run_scenario_from, Preset, ScenarioConfig, ScenarioError,
};
use faultsim::stepper::write_checkpoint;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "faultsim", version, about = "Multibody viscoelastic fault-system simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    #[value(name = "spring_slider")]
    SpringSlider,
    #[value(name = "layered_5body")]
    Layered5Body,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a configuration file or a builtin preset
    Run {
        /// scenario configuration (TOML)
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// builtin scenario
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// directory for steps.csv, fault_<i>.csv, contours and checkpoint
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// stop the march at this physical time (s)
        #[arg(long)]
        max_time: Option<f64>,
        /// override the number of mesh refinement sweeps
        #[arg(long)]
        refinements: Option<usize>,
        /// write the final state to this checkpoint file
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// resume from a checkpoint written by a previous run
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FAULTSIM_LOG")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, preset, output_dir, max_time, refinements, checkpoint, resume } => {
            run(config, preset, output_dir, max_time, refinements, checkpoint, resume)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: Option<PathBuf>,
    preset: Option<PresetArg>,
    output_dir: Option<PathBuf>,
    max_time: Option<f64>,
    refinements: Option<usize>,
    checkpoint: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> ExitCode {
    let mut cfg = match (config, preset) {
        (Some(path), None) => {
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match ScenarioConfig::from_toml_str(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
        }
        (None, Some(p)) => ScenarioConfig::preset(match p {
            PresetArg::SpringSlider => Preset::SpringSlider,
            PresetArg::Layered5Body => Preset::Layered5Body,
        }),
        _ => {
            eprintln!("error: provide exactly one of --config or --preset");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(dir) = output_dir {
        cfg.output.directory = Some(dir);
    }
    if let Some(mt) = max_time {
        cfg.loading.max_time = Some(mt);
    }
    if let Some(k) = refinements {
        cfg.mesh.level_cap = k;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }

    let initial = match resume {
        Some(path) => match load_checkpoint(&path) {
            Ok(s) => {
                log::info!("resuming from t = {:.6e} s ({})", s.t, path.display());
                Some(s)
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => None,
    };

    log::info!("running scenario '{}'", cfg.name);
    let outputs = match run_scenario_from(&cfg, initial) {
        Ok(o) => o,
        Err(e @ ScenarioError::Run { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_SOLVER);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    if let Some(path) = checkpoint {
        let write = || -> std::io::Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_checkpoint(&outputs.final_state, &mut f)?;
            std::io::Write::flush(&mut f)
        };
        if let Err(e) = write() {
            eprintln!("error: cannot write checkpoint {}: {e}", path.display());
            return ExitCode::from(EXIT_SOLVER);
        }
    }

    let n_events: usize = outputs.events.iter().map(|e| e.len()).sum();
    println!(
        "scenario '{}': {} vertices, {} committed steps, final t = {:.6} s, {} slip events",
        cfg.name,
        outputs.total_vertices,
        outputs.steps.len() - 1,
        outputs.final_state.t,
        n_events
    );
    ExitCode::SUCCESS
}
