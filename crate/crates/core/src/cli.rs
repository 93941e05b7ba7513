//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::clustering::{ClusterLabels, ClusterMethod};
use crate::fep;
use crate::model_io::{self, Artifact};
use crate::pipeline::{run_until, PipelineConfig, PipelineError, Stage};
use crate::ranking::ReferenceMethod;
use crate::synth::{self, SynthSpec};

const CONFIG_KEYS: &str = "\
Config file (JSON, all keys optional except `version`):
  version                         must be 1
  seed                            global seed (training init, shuffles, noise)
  jobs                            concurrent training jobs
  tolerance                       relative sigma/epsilon tolerance for subtypes (0.10)
  paths.topology                  topology JSON
  paths.trajectory                extended-XYZ trajectory
  paths.workdir                   artifact directory (else $CASTELO_WORKDIR, else ./castelo-work)
  contacts.cutoff                 contact distance, Å (4.5)
  contacts.pocket_radius          pocket radius around the frame-0 ligand, Å (10)
  contacts.all_protein            use every protein atom instead of the pocket (false)
  contacts.heavy_atoms_only       drop hydrogens from rows and columns (false)
  contacts.delta                  dynamism lag, frames (500)
  ensemble.architectures          list of {filters, latent_dim} ([32,64] x [3,5,10])
  ensemble.conv_layers            encoder depth (4)
  train.learning_rate             RMSProp step (0.005)
  train.rho                       RMSProp decay (0.9)
  train.epsilon                   RMSProp epsilon (1e-8)
  train.max_epochs                epoch cap (600)
  train.patience                  early-stopping patience (10)
  train.batch_size                minibatch size (64)
  train.kl_weight                 KL term weight (1.0)
  hdbscan.min_cluster_size        (50)
  hdbscan.min_samples             defaults to min_cluster_size
  refcluster.rmsd_cutoff          QT cutoff, Å (2.0)
  refcluster.max_clusters         (5)
  ranking.reference               rmsd_qt | whole_molecule (rmsd_qt)
  ranking.mean_centered           centre metric means across subtypes (false)
  ranking.persistence_threshold_ps  stability-flag threshold, ps (50000)
Command-line flags override the file.";

#[derive(Debug, Parser)]
#[command(name = "castelo", version, about = "Flag unstable ligand atom subtypes from contact dynamics", after_long_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic topology and trajectory.
    Synth(SynthArgs),
    /// Group ligand atom types into subtypes.
    Subtype(PipelineArgs),
    /// Pocket selection, contact and dynamism tensors.
    Contacts(PipelineArgs),
    /// Reference RMSD clustering.
    Refcluster(PipelineArgs),
    /// Train the CVAE ensemble for every subtype.
    Train(PipelineArgs),
    /// Cluster latent vectors (hdbscan) or frames by RMSD (rmsd).
    Cluster(ClusterArgs),
    /// Rank subtypes against the reference.
    Rank(PipelineArgs),
    /// Render SVG figures.
    Report(PipelineArgs),
    /// Free-energy utilities.
    Fep(FepArgs),
    /// Run every stage.
    Run(PipelineArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct PipelineArgs {
    /// Pipeline config JSON (see --help for keys).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    pocket_radius: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    heavy_atoms_only: bool,
    #[arg(long)]
    all_protein: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    rmsd_cutoff: Option<f64>,
    #[arg(long)]
    max_clusters: Option<usize>,
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    #[arg(long)]
    mean_centered: bool,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
    /// Suppress per-stage log lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Rmsd,
    WholeMolecule,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
enum MethodArg {
    #[default]
    Hdbscan,
    Rmsd,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long, value_enum, default_value = "hdbscan")]
    method: MethodArg,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// SynthSpec JSON; defaults are used for absent keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for topology.json, trajectory.xyz, ground_truth.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Args)]
struct FepArgs {
    #[command(subcommand)]
    command: FepCommand,
}

#[derive(Debug, Subcommand)]
enum FepCommand {
    /// Exponential average of one ΔU sample file.
    Zwanzig {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = fep::DEFAULT_TEMPERATURE)]
        temp: f64,
        #[arg(long, default_value_t = fep::DEFAULT_BOOTSTRAP_SEED)]
        seed: u64,
    },
    /// ΔΔF = ΔF_free − ΔF_bind from two sample files.
    Ddf {
        #[arg(long)]
        bind: PathBuf,
        #[arg(long)]
        free: PathBuf,
        #[arg(long, default_value_t = fep::DEFAULT_TEMPERATURE)]
        temp: f64,
        #[arg(long, default_value_t = fep::DEFAULT_BOOTSTRAP_SEED)]
        seed: u64,
    },
    /// Computed relative sweetness from ΔΔF values.
    Crs {
        #[arg(long, allow_hyphen_values = true)]
        ddf: f64,
        #[arg(long = "ref", allow_hyphen_values = true)]
        reference: f64,
        #[arg(long, default_value_t = fep::DEFAULT_TEMPERATURE)]
        temp: f64,
    },
}

fn effective_config(args: &PipelineArgs) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    if args.workdir.is_some() {
        c.paths.workdir = args.workdir.clone();
    }
    if args.topology.is_some() {
        c.paths.topology = args.topology.clone();
    }
    if args.trajectory.is_some() {
        c.paths.trajectory = args.trajectory.clone();
    }
    set!(args.seed => c.seed);
    set!(args.jobs => c.jobs);
    set!(args.tolerance => c.tolerance);
    set!(args.cutoff => c.contacts.cutoff);
    set!(args.pocket_radius => c.contacts.pocket_radius);
    set!(args.delta => c.contacts.delta);
    c.contacts.heavy_atoms_only |= args.heavy_atoms_only;
    c.contacts.all_protein |= args.all_protein;
    set!(args.max_epochs => c.train.max_epochs);
    set!(args.learning_rate => c.train.learning_rate);
    set!(args.patience => c.train.patience);
    set!(args.batch_size => c.train.batch_size);
    set!(args.kl_weight => c.train.kl_weight);
    set!(args.min_cluster_size => c.hdbscan.min_cluster_size);
    set!(args.rmsd_cutoff => c.refcluster.rmsd_cutoff);
    set!(args.max_clusters => c.refcluster.max_clusters);
    if let Some(r) = args.reference {
        c.ranking.reference = match r {
            ReferenceArg::Rmsd => ReferenceMethod::RmsdQt,
            ReferenceArg::WholeMolecule => ReferenceMethod::WholeMolecule,
        };
    }
    c.ranking.mean_centered |= args.mean_centered;
    c.validate()?;
    Ok(c)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn pipeline_command(args: &PipelineArgs, stage: Stage) -> Result<(), PipelineError> {
    let config = effective_config(args)?;
    if args.print_config {
        print_json(&serde_json::to_value(&config).map_err(|e| PipelineError::internal(e.to_string()))?);
        return Ok(());
    }
    let outcome = run_until(&config, stage, args.quiet)?;
    let mut out = json!({
        "workdir": outcome.workdir,
        "stages": outcome.stages.iter().map(|s| json!({"stage": s.stage, "status": s.status})).collect::<Vec<_>>(),
    });
    if let Some(report) = &outcome.report {
        out["order"] = json!(report.order);
        out["suggestion"] = json!(report.suggestion());
    }
    print_json(&out);
    Ok(())
}

fn cluster_command(args: &ClusterArgs) -> Result<(), PipelineError> {
    match args.method {
        MethodArg::Hdbscan => pipeline_command(&args.pipeline, Stage::Cluster),
        MethodArg::Rmsd => {
            pipeline_command(&args.pipeline, Stage::RefCluster)?;
            let config = effective_config(&args.pipeline)?;
            let path = config.workdir().join("refcluster/labels.csv");
            let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::internal(e.to_string()))?;
            let labels = ClusterLabels::from_csv(&text, ClusterMethod::RmsdQt, &path)
                .map_err(|e| PipelineError::internal(e.to_string()))?;
            print_json(&json!({"method": "rmsd", "cluster_sizes": labels.cluster_sizes()}));
            Ok(())
        }
    }
}

fn synth_command(args: &SynthArgs) -> Result<(), PipelineError> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(f) = args.frames {
        spec.frames = f;
    }
    let out = synth::generate(&spec).map_err(|e| match e {
        synth::SynthError::InvalidSpec(m) => PipelineError::config(m),
        other => PipelineError::internal(other.to_string()),
    })?;
    write_synth(&args.out, &out)?;
    print_json(&json!({
        "topology": args.out.join("topology.json"),
        "trajectory": args.out.join("trajectory.xyz"),
        "ground_truth": out.ground_truth.flip_rates,
    }));
    Ok(())
}

pub fn write_synth(dir: &Path, out: &synth::SynthOutput) -> Result<(), PipelineError> {
    let io = |e: model_io::ModelIoError| PipelineError::internal(e.to_string());
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::config(format!("{}: {e}", dir.display())))?;
    model_io::write_topology(&out.topology, &dir.join("topology.json")).map_err(io)?;
    model_io::write_trajectory(&out.trajectory, &out.topology, &dir.join("trajectory.xyz")).map_err(io)?;
    out.ground_truth.write_to(&dir.join("ground_truth.json")).map_err(io)
}

fn fep_command(args: &FepArgs) -> Result<(), PipelineError> {
    let parse = |e: fep::FepError| match e {
        fep::FepError::InvalidTemperature(_) => PipelineError::config(e.to_string()),
        _ => PipelineError::parse(e.to_string()),
    };
    let estimate = |path: &Path, temp: f64, seed: u64| -> Result<fep::FreeEnergyResult, PipelineError> {
        let samples = fep::EnergySamples::new(fep::read_energy_csv(path).map_err(parse)?, temp).map_err(parse)?;
        fep::zwanzig_seeded(&samples, seed).map_err(parse)
    };
    match &args.command {
        FepCommand::Zwanzig { samples, temp, seed } => {
            let r = estimate(samples, *temp, *seed)?;
            print_json(&json!({"delta_f": r.delta_f, "stderr": r.stderr, "temperature": temp}));
        }
        FepCommand::Ddf { bind, free, temp, seed } => {
            let b = estimate(bind, *temp, *seed)?;
            let f = estimate(free, *temp, *seed)?;
            let dd = fep::relative_binding_free_energy(&b, &f);
            print_json(&json!({"ddf": dd.delta_f, "stderr": dd.stderr, "bind": b.delta_f, "free": f.delta_f}));
        }
        FepCommand::Crs { ddf, reference, temp } => {
            let r = fep::computed_relative_sweetness(*ddf, *reference, *temp).map_err(parse)?;
            print_json(&json!({"crs": r.crs, "log10_crs": r.log10_crs, "ddf": ddf, "ref": reference, "temperature": temp}));
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let err = PipelineError::config(e.to_string().lines().next().unwrap_or("invalid arguments").to_string());
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth_command(a),
        Command::Subtype(a) => pipeline_command(a, Stage::Subtype),
        Command::Contacts(a) => pipeline_command(a, Stage::Contacts),
        Command::Refcluster(a) => pipeline_command(a, Stage::RefCluster),
        Command::Train(a) => pipeline_command(a, Stage::Train),
        Command::Cluster(a) => cluster_command(a),
        Command::Rank(a) => pipeline_command(a, Stage::Rank),
        Command::Report(a) | Command::Run(a) => pipeline_command(a, Stage::Report),
        Command::Fep(a) => fep_command(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
