use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sgraphs::config::{OdometrySource, PipelineConfig};
use sgraphs::eval::{compute_ate, compute_map_rmse};
use sgraphs::perception::read_xyz;
use sgraphs::pipeline::{export_outputs, run_dataset_dir};
use sgraphs::simulator::scenarios::{self, Scenario};
use sgraphs::simulator::{parse_waypoints, simulate_trajectory, write_dataset, SimConfig, World};
use sgraphs::trajectory::read_tum;

#[derive(Parser)]
#[command(
    name = "sgraphs",
    version,
    about = "Situational-graph LiDAR SLAM on simulated indoor datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Odom {
    Dataset,
    Icp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    FourRooms,
    Corridor,
    TwoFloors,
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM over a dataset directory and write est.tum, map.xyz, sgraph.json and report.json.
    Run {
        dataset_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        odom: Option<Odom>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        single_thread: bool,
    },
    /// Generate a dataset from a world file and a waypoint file.
    Simulate {
        world_file: PathBuf,
        #[arg(long)]
        waypoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Per-step odometry translation noise, m.
        #[arg(long)]
        sigma_t: Option<f64>,
        /// Per-step odometry yaw noise, degrees.
        #[arg(long)]
        sigma_rot_deg: Option<f64>,
        /// Range noise of each LiDAR return, m.
        #[arg(long)]
        range_sigma: Option<f64>,
    },
    /// Absolute trajectory error between two TUM files.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Map RMSE of an xyz cloud against the surfaces of a world.
    EvalMap {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        world: PathBuf,
    },
    /// Write a bundled world and its waypoints as world.json and waypoints.txt.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioName,
        #[arg(long)]
        out: PathBuf,
    },
}

type DataResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> DataResult {
    match cmd {
        Command::Run {
            dataset_dir,
            config,
            out,
            odom,
            seed,
            single_thread,
        } => {
            let mut cfg = PipelineConfig::from_config_str(&fs::read_to_string(&config)?)?;
            if let Some(o) = odom {
                cfg.odometry = match o {
                    Odom::Dataset => OdometrySource::Dataset,
                    Odom::Icp => OdometrySource::Icp,
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.single_thread |= single_thread;
            let (dataset, mut state) = run_dataset_dir(&dataset_dir, &cfg)?;
            let report = state.report(&dataset);
            export_outputs(&state, &report, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate {
            world_file,
            waypoints,
            out,
            seed,
            sigma_t,
            sigma_rot_deg,
            range_sigma,
        } => {
            let world = World::from_json(&fs::read_to_string(&world_file)?)?;
            let wps = parse_waypoints(&fs::read_to_string(&waypoints)?)?;
            let mut cfg = SimConfig {
                seed,
                ..SimConfig::default()
            };
            if let Some(v) = sigma_t {
                cfg.sigma_t = v;
            }
            if let Some(v) = sigma_rot_deg {
                cfg.sigma_rot_deg = v;
            }
            if let Some(v) = range_sigma {
                cfg.range_sigma = v;
            }
            let frames = simulate_trajectory(&world, &wps, &cfg)?;
            write_dataset(&world, &frames, &out)?;
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Eval { est, reference } => {
            let ate = compute_ate(&read_tum(&est)?, &read_tum(&reference)?)?;
            println!("{}", serde_json::json!({ "ate_rmse": ate }));
        }
        Command::EvalMap { est, world } => {
            let world = World::from_json(&fs::read_to_string(&world)?)?;
            let rmse = compute_map_rmse(&read_xyz(&est)?, &world.sample_surfaces(0.05))?;
            println!("{}", serde_json::json!({ "map_rmse": rmse }));
        }
        Command::Scenario { name, out } => {
            let s: Scenario = match name {
                ScenarioName::FourRooms => scenarios::four_rooms(SimConfig::default()),
                ScenarioName::Corridor => scenarios::corridor(SimConfig::default()),
                ScenarioName::TwoFloors => scenarios::two_floors(SimConfig::default()),
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("world.json"), s.world.to_json() + "\n")?;
            let lines: String = s
                .waypoints
                .iter()
                .map(|w| format!("{} {} {}\n", w.x, w.y, w.floor))
                .collect();
            fs::write(out.join("waypoints.txt"), lines)?;
        }
    }
    Ok(())
}
