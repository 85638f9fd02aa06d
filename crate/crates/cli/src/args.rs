use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dwiqc", version, about = "Slice-level artifact QC for diffusion MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic clean head phantoms.
    Phantoms(PhantomsArgs),
    /// Write the frozen feature backbone asset and print its declaration.
    MakeBackbone(MakeBackboneArgs),
    /// Inject artifacts into clean volumes and write a labelled benchmark.
    Simulate(SimulateArgs),
    /// Train one view-specific detector from an experiment config.
    Train(TrainArgs),
    /// Run dual-view QC on volumes and write reports.
    Qc(QcArgs),
    /// Cross-validation, cross-dataset, threshold sweep or fine-tune runs.
    Evaluate(EvaluateArgs),
    /// Serve reports and collect review decisions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub gradients: usize,
    /// Brain scale range `lo,hi` as a fraction of the half field of view.
    #[arg(long)]
    pub brain_scale: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MakeBackboneArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `kind=fraction`, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub mix: Vec<String>,
    /// Severity range `lo,hi`.
    #[arg(long, default_value = "0.3,0.7")]
    pub severity: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ViewArg {
    Axial,
    Sagittal,
}

impl From<ViewArg> for dwiqc::View {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Axial => dwiqc::View::Axial,
            ViewArg::Sagittal => dwiqc::View::Sagittal,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub view: Option<ViewArg>,
    /// Overrides the config backend with its defaults, e.g. `gabor_rf`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub out_model: PathBuf,
}

#[derive(Debug, Args)]
pub struct QcArgs {
    /// A NIfTI volume or a directory of volumes.
    #[arg(long)]
    pub input: PathBuf,
    /// Model file, or `oracle:<labels.csv>`.
    #[arg(long)]
    pub axial_model: String,
    #[arg(long)]
    pub sagittal_model: String,
    #[arg(long, default_value_t = 3)]
    pub axial_threshold: usize,
    #[arg(long, default_value_t = 7)]
    pub sagittal_threshold: usize,
    #[arg(long)]
    pub report_dir: PathBuf,
    #[arg(long)]
    pub thumbnails: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Cv,
    CrossDataset,
    Sweep,
    Finetune,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub report_dir: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Append-only label CSV receiving review decisions.
    #[arg(long)]
    pub label_out: PathBuf,
}
