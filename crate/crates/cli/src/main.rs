use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod setup;

#[derive(Debug, Parser)]
#[command(name = "mamimo", version, about = "Massive MIMO CSI synthesis, campaign simulation and analysis")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    /// Seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// `key = value` file with radio, layout, topology and link settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset over a square grid.
    Synth(SynthArgs),
    /// Run a measurement campaign against simulated or remote services.
    Campaign(CampaignArgs),
    /// Serve the capture trigger and the positioner bank until interrupted.
    ServeCapture(ServeArgs),
    /// Received-power map when beamforming towards one position.
    Powermap(PowermapArgs),
    /// Group users with DEF, SUS or at random and report spectral efficiency.
    Schedule(ScheduleArgs),
    /// Build a fingerprint database and evaluate kNN localization.
    Locate(LocateArgs),
    /// Print the header of a sample file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Topology {
    Ura,
    Ula,
    Da,
}

impl From<Topology> for mamimo_csi::TopologyKind {
    fn from(t: Topology) -> Self {
        match t {
            Topology::Ura => Self::Ura,
            Topology::Ula => Self::Ula,
            Topology::Da => Self::Da,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Mrt,
    Zf,
}

impl From<Scheme> for mamimo_csi::PrecodingScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Mrt => Self::Mrt,
            Scheme::Zf => Self::Zf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    Raster,
    Serpentine,
}

impl From<Pattern> for mamimo_csi::Traversal {
    fn from(p: Pattern) -> Self {
        match p {
            Pattern::Raster => Self::Raster,
            Pattern::Serpentine => Self::Serpentine,
        }
    }
}

/// Channel model switches shared by the generating subcommands.
#[derive(Debug, Args)]
pub struct ChannelArgs {
    #[arg(long, value_enum, default_value_t = Topology::Ura)]
    pub topology: Topology,
    /// Per-entry SNR in dB; noiseless when omitted.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Scatterer CSV (`x_mm,y_mm,z_mm,gamma_re,gamma_im`); enables multipath.
    #[arg(long, value_name = "CSV")]
    pub scatterers: Option<PathBuf>,
    /// Element pattern exponent; 0 is isotropic.
    #[arg(long)]
    pub pattern_exponent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Output directory for `<id>.bin` files and `index.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid nodes per side.
    #[arg(long, default_value_t = 21)]
    pub nodes: usize,
    /// Grid pitch in mm; the layout resolution when omitted.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Grid centre `x,y` in mm; the ROI centre when omitted.
    #[arg(long, value_parser = parse_xy)]
    pub centre: Option<(f64, f64)>,
    /// Pilot set (user id) the samples are generated on.
    #[arg(long, default_value_t = 0)]
    pub user: u8,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Nodes per side on each positioner; the whole table with `--full`.
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Scan each positioner's whole work area.
    #[arg(long)]
    pub full: bool,
    /// Positioners driven round-robin, 1 to 4.
    #[arg(long, default_value_t = 1)]
    pub positioners: u8,
    #[arg(long, value_enum, default_value_t = Pattern::Serpentine)]
    pub pattern: Pattern,
    /// Remote capture service; in-process when neither address is set.
    #[arg(long, env = "CSI_CAPTURE_ADDR")]
    pub capture_addr: Option<String>,
    /// Remote positioner endpoint.
    #[arg(long, env = "CSI_POSITIONER_ADDR")]
    pub positioner_addr: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "CSI_CAPTURE_ADDR", default_value = "127.0.0.1:5025")]
    pub listen: String,
    #[arg(long, env = "CSI_POSITIONER_ADDR", default_value = "127.0.0.1:5026")]
    pub positioner_listen: String,
}

#[derive(Debug, Args)]
pub struct PowermapArgs {
    /// Topology to map; `all` writes one jointly normalised map per topology.
    #[arg(long, default_value = "ura", value_parser = ["ura", "ula", "da", "all"])]
    pub topology: String,
    /// Beam target `x,y` in mm at user height; the ROI centre when omitted.
    #[arg(long, value_parser = parse_xy)]
    pub target: Option<(f64, f64)>,
    /// PGM output; the CSV goes next to it with a `.csv` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 51)]
    pub nodes: usize,
    /// Grid pitch in mm; spans the ROI when omitted.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long, value_parser = parse_xy)]
    pub centre: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = Scheme::Mrt)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    pub min_db: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub max_db: f64,
    /// Map measured samples from an index instead of synthesising.
    #[arg(long, value_name = "INDEX")]
    pub dataset: Option<PathBuf>,
    /// Sample id of the beam target within `--dataset`.
    #[arg(long, requires = "dataset")]
    pub target_id: Option<String>,
    #[arg(long)]
    pub scatterers: Option<PathBuf>,
    #[arg(long)]
    pub pattern_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Def,
    Sus,
    Random,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum, default_value_t = Topology::Ura)]
    pub topology: Topology,
    /// Random users placed in the ROI when no dataset is given.
    #[arg(long, default_value_t = 24)]
    pub users: usize,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, value_enum, default_value_t = Algorithm::Def)]
    pub algorithm: Algorithm,
    /// SUS orthogonality threshold.
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Scheme::Zf)]
    pub scheme: Scheme,
    /// Use the labelled samples of an index as the pool.
    #[arg(long, value_name = "INDEX")]
    pub dataset: Option<PathBuf>,
    /// Schedule CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    Raw,
    Magnitude,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Idw,
}

#[derive(Debug, Args)]
pub struct LocateArgs {
    /// Training index.
    #[arg(long, value_name = "INDEX")]
    pub dataset: PathBuf,
    /// Test index; leave-one-out on the training set when omitted.
    #[arg(long, value_name = "INDEX")]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::Idw)]
    pub weighting: WeightingArg,
    #[arg(long, value_enum, default_value_t = Features::Raw)]
    pub features: Features,
    /// Save the fingerprint database.
    #[arg(long)]
    pub db_out: Option<PathBuf>,
    /// Per-query error CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub file: PathBuf,
}

fn parse_xy(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    let (x, y) = (parse(x)?, parse(y)?);
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("non-finite coordinate in `{s}`"));
    }
    Ok((x, y))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
