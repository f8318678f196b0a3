use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use vitactip::config::Config;
use vitactip::conversion::Direction;
use vitactip::dataset::{self, DatasetManifest, GenerationProtocol};
use vitactip::mechanics::{calibrate_force_scale, solve_contact};
use vitactip::optics::{add_pixel_noise, RenderPass, SceneObject};
use vitactip::protocol::Task;
use vitactip::sensor::{build_sensor, SensorMode};
use vitactip::stimulus::{Placement, Stimulus, StimulusPose};
use vitactip::tasks::{self, TrainedModel};
use vitactip::{Error, Result};

#[derive(Parser)]
#[command(name = "vitactip", version, about = "Vision-tactile fusion sensor simulator")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for dataset generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one sensor mode (default: all modes).
    #[arg(long, global = true)]
    sensor: Option<SensorMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset for one task.
    Gen(GenArgs),
    /// Solve and render a single contact state to PNG.
    Render(RenderArgs),
    /// Convert a dataset's fused frames to another modality or export training pairs.
    Convert(ConvertArgs),
    /// Fit the task model of every mode and save it.
    Train(TaskArgs),
    /// Evaluate every mode and write task reports.
    Eval(TaskArgs),
    /// Summarize task reports as a table comparing sensor modes.
    Report(ReportArgs),
    /// Print the force scale that makes a centered 1 mm flat press read 0.8 N.
    Calibrate,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct GenArgs {
    task: Task,
    /// Output directory (default: data/<task>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total sample count (pose and force).
    #[arg(long)]
    samples: Option<usize>,
    /// Samples per grating class.
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Use the published sample counts.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Grating,
    Edge,
    Sphere,
    Plate,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    stimulus: Shape,
    /// Grating line spacing.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Sphere radius.
    #[arg(long, default_value_t = 25.0)]
    radius: f64,
    /// Edge cube side.
    #[arg(long, default_value_t = 40.0)]
    side: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    y: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    z: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    shear_x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    shear_y: f64,
    #[arg(long)]
    ambient: Option<f64>,
    /// Output PNG (default mode: vitactip).
    #[arg(long, default_value = "frame.png")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    ToVitac,
    ToTactip,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::ToVitac => Direction::ToViTac,
            DirectionArg::ToTactip => Direction::ToTacTip,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    direction: DirectionArg,
    #[arg(long)]
    out: PathBuf,
    /// Export aligned source/target pairs instead of converted frames.
    #[arg(long)]
    pairs: bool,
}

#[derive(Args)]
struct TaskArgs {
    task: Task,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output root for models/ and reports/ (default: the dataset directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding task report JSON files.
    #[arg(long)]
    reports: PathBuf,
    /// Also write the summary as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn modes(sensor: Option<SensorMode>) -> Vec<SensorMode> {
    sensor.map_or_else(|| SensorMode::ALL.to_vec(), |m| vec![m])
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen(args) => {
            if let Some(n) = args.samples_per_class {
                config.protocol.grating.samples_per_class = n;
                config.protocol.grating.paper_samples_per_class = n;
            }
            if let Some(n) = args.samples {
                config.protocol.pose.samples = n;
                config.protocol.pose.paper_samples = n;
                config.protocol.force.samples = n;
                config.protocol.force.paper_samples = n;
            }
            let protocol = GenerationProtocol::new(args.task, &config.protocol, seed, &modes(cli.sensor), args.paper_scale);
            let out = args.out.unwrap_or_else(|| PathBuf::from("data").join(args.task.name()));
            let manifest = dataset::generate(&config, &protocol, &out)?;
            println!(
                "wrote {} records ({} samples) to {} [dataset {}]",
                manifest.records.len(),
                protocol.samples,
                out.display(),
                manifest.header.id
            );
        }
        Command::Render(args) => render(&config, cli.sensor, &args)?,
        Command::Convert(args) => {
            let manifest = DatasetManifest::open(&args.dataset)?;
            let n = if args.pairs {
                dataset::export_pairs(&manifest, args.direction.into(), &args.out)?
            } else {
                dataset::convert_dataset(&manifest, args.direction.into(), &args.out)?
            };
            println!("wrote {n} {} to {}", if args.pairs { "pairs" } else { "frames" }, args.out.display());
        }
        Command::Train(args) => {
            let (manifest, out) = open_task_dataset(&args)?;
            for mode in task_modes(&manifest, cli.sensor)? {
                let table = tasks::extract_features(&manifest, mode, &config)?;
                let model = tasks::train_model(&manifest, &table, &config)?;
                let path = out.join("models").join(format!("{}_{mode}.json", args.task));
                model.save(&path)?;
                println!("saved {}", path.display());
            }
        }
        Command::Eval(args) => {
            let (manifest, out) = open_task_dataset(&args)?;
            let mut reports = Vec::new();
            for mode in task_modes(&manifest, cli.sensor)? {
                let table = tasks::extract_features(&manifest, mode, &config)?;
                let model_path = out.join("models").join(format!("{}_{mode}.json", args.task));
                let model = if model_path.is_file() {
                    TrainedModel::load(&model_path)?
                } else {
                    tasks::train_model(&manifest, &table, &config)?
                };
                let report = tasks::evaluate_model(&manifest, &table, &model, &config)?;
                for p in report.write(&out.join("reports"))? {
                    println!("wrote {}", p.display());
                }
                reports.push(report);
            }
            print!("{}", tasks::summary_table(&reports));
        }
        Command::Report(args) => {
            let reports = tasks::load_reports(&args.reports)?;
            if reports.is_empty() {
                return Err(Error::Validation(format!("no reports in {}", args.reports.display())));
            }
            print!("{}", tasks::summary_table(&reports));
            if let Some(path) = args.csv {
                std::fs::write(&path, tasks::summary_csv(&reports)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Calibrate => {
            let model = build_sensor(&config.sensor)?;
            let scale = calibrate_force_scale(&model, &config.solver, 1.0, 0.8)?;
            println!("{scale:.8}");
        }
        Command::Config => print!("{}", config.to_toml()),
    }
    Ok(())
}

fn open_task_dataset(args: &TaskArgs) -> Result<(DatasetManifest, PathBuf)> {
    let dir = args
        .dataset
        .clone()
        .unwrap_or_else(|| PathBuf::from("data").join(args.task.name()));
    let manifest = DatasetManifest::open(&dir)?;
    if manifest.task() != args.task {
        return Err(Error::Validation(format!(
            "{} holds a {} dataset, not {}",
            dir.display(),
            manifest.task(),
            args.task
        )));
    }
    Ok((manifest, args.out.clone().unwrap_or(dir)))
}

fn task_modes(manifest: &DatasetManifest, sensor: Option<SensorMode>) -> Result<Vec<SensorMode>> {
    let available = manifest.modes();
    match sensor {
        Some(m) if !available.contains(&m) => Err(Error::Validation(format!("dataset has no `{m}` frames"))),
        Some(m) => Ok(vec![m]),
        None => Ok(available),
    }
}

fn render(config: &Config, sensor: Option<SensorMode>, args: &RenderArgs) -> Result<()> {
    let stimulus = match args.stimulus {
        Shape::Grating => Stimulus::grating(args.spacing),
        Shape::Edge => Stimulus::SquareEdge { side_mm: args.side },
        Shape::Sphere => Stimulus::Sphere { radius_mm: args.radius },
        Shape::Plate => Stimulus::FlatPlate,
    };
    let pose = StimulusPose {
        x_mm: args.x,
        y_mm: args.y,
        z_mm: args.z,
        theta_deg: args.theta,
        shear_mm: (args.shear_x, args.shear_y),
    };
    let model = build_sensor(&config.sensor)?;
    let (state, wrench) = solve_contact(&model, &stimulus, &pose, &config.solver)?;
    let mut scene = config.render.scene(args.ambient.unwrap_or(config.render.ambient_light))?;
    scene.object = Some(SceneObject {
        placement: Placement::at_pose(&model, stimulus, &pose),
        albedo: config.render.object_albedo,
    });
    let pass = RenderPass::new(&model, &state, &scene, &config.sensor)?;
    let mode = sensor.unwrap_or(SensorMode::ViTacTip);
    let spec = mode.apply_to(&config.sensor, config.sensor.transparency_alpha);
    let mut frame = pass.frame(&spec)?;
    add_pixel_noise(&mut frame, config.render.pixel_noise_std, 0);
    frame.save_png(&args.out)?;
    println!("wrote {} ({mode})", args.out.display());
    println!("{}", serde_json::to_string(&wrench).expect("serializable"));
    Ok(())
}
