//! Command-line arguments, the `key = value` config file, and the merged
//! [`RunConfig`] the commands run from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvqkd::postselect::{GridSpec, DEFAULT_D_INTERVAL};
use cvqkd::ChannelParams;

pub const DEFAULT_D: f64 = 2.1;
pub const DEFAULT_EVENTS: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 7;

/// Invalid or conflicting user input; the process exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "cvqkd",
    version,
    about = "Postselected key rates for coherent-state CV-QKD under the beamsplitter attack",
    after_help = "Config files hold `key = value` lines using the long flag names \
                  (e.g. `loss = 0.5`, `n-x = 1601`); `#` starts a comment. \
                  Flags given on the command line override the file."
)]
pub struct Cli {
    /// Worker threads for grid and simulation work [default: all cores]
    #[arg(long, global = true, env = "CVQKD_THREADS")]
    pub threads: Option<usize>,

    /// Read defaults from a `key = value` config file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key rate R_k/R_r for one transmission and modulation width
    Keyrate(CommonArgs),
    /// Modulation width d maximizing the key rate
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Lower end of the d search interval [default: 0.1]
        #[arg(long)]
        d_min: Option<f64>,
        /// Upper end of the d search interval [default: 10]
        #[arg(long)]
        d_max: Option<f64>,
    },
    /// Information difference I_AB − I_AE tabulated over (E, x)
    Map(CommonArgs),
    /// Monte Carlo protocol simulation checked against the quadrature
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of simulated channel uses [default: 1000000]
        #[arg(long)]
        n: Option<u64>,
        /// Master seed of the event generator [default: 7]
        #[arg(long)]
        seed: Option<u64>,
        /// Also write every event as CSV to this path
        #[arg(long, value_name = "PATH")]
        events: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(id = "channel", multiple = false)]
pub struct ChannelArgs {
    /// Channel transmission eta in (0, 1]
    #[arg(long, group = "channel")]
    pub eta: Option<f64>,
    /// Line loss as a linear fraction, eta = 1 − loss
    #[arg(long, group = "channel")]
    pub loss: Option<f64>,
    /// Line loss in dB, eta = 10^(−dB/10)
    #[arg(long, group = "channel")]
    pub loss_db: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Modulation width d of the effective amplitudes [default: 2.1]
    #[arg(long)]
    pub d: Option<f64>,
    /// Upper bound of the E range [default: 4]
    #[arg(long)]
    pub e_max: Option<f64>,
    /// Symmetric bound of the x range [default: 4]
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Grid nodes along E [default: 801]
    #[arg(long)]
    pub n_e: Option<usize>,
    /// Grid nodes along x [default: 1601]
    #[arg(long)]
    pub n_x: Option<usize>,
    /// Write the result here instead of stdout
    #[arg(short, long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Output format [default: csv for `map`, json otherwise]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Keyrate,
    Optimize,
    Map,
    Simulate,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub params: ChannelParams,
    pub grid: GridSpec,
    pub d_interval: (f64, f64),
    pub n_events: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
}

/// Parsed `key = value` config file.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "eta", "loss", "loss-db", "d", "e-max", "x-max", "n-e", "n-x", "n", "seed", "output", "format",
    "threads", "d-min", "d-max", "events",
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return usage(format!("config line {}: expected `key = value`", lineno + 1));
            };
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return usage(format!("config line {}: unknown key `{key}`", lineno + 1));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| UsageError(format!("config key `{key}`: invalid value `{v}`: {e}")))
            })
            .transpose()
    }
}

fn pick<T: FromStr>(cli: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, UsageError>
where
    T::Err: fmt::Display,
{
    match cli {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Transmission from exactly one of `eta`, `loss`, `loss_db`.
pub fn resolve_eta(eta: Option<f64>, loss: Option<f64>, loss_db: Option<f64>) -> Result<f64, UsageError> {
    match (eta, loss, loss_db) {
        (Some(eta), None, None) => Ok(eta),
        (None, Some(loss), None) => Ok(1.0 - loss),
        (None, None, Some(db)) => Ok(10f64.powf(-db / 10.0)),
        (None, None, None) => usage("one of --eta, --loss or --loss-db is required"),
        _ => usage("--eta, --loss and --loss-db are mutually exclusive"),
    }
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, UsageError> {
        let file = match &cli.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };

        let (kind, common, d_min, d_max, n, seed, events) = match cli.command {
            Command::Keyrate(c) => (CommandKind::Keyrate, c, None, None, None, None, None),
            Command::Map(c) => (CommandKind::Map, c, None, None, None, None, None),
            Command::Optimize { common, d_min, d_max } => {
                (CommandKind::Optimize, common, d_min, d_max, None, None, None)
            }
            Command::Simulate {
                common,
                n,
                seed,
                events,
            } => (CommandKind::Simulate, common, None, None, n, seed, events),
        };

        let ch = &common.channel;
        let eta = if ch.eta.is_some() || ch.loss.is_some() || ch.loss_db.is_some() {
            resolve_eta(ch.eta, ch.loss, ch.loss_db)?
        } else {
            resolve_eta(file.get("eta")?, file.get("loss")?, file.get("loss-db")?)?
        };
        let d = pick(common.d, &file, "d")?.unwrap_or(DEFAULT_D);
        let params = ChannelParams::new(eta, d).map_err(|e| UsageError(e.to_string()))?;

        let default_grid = GridSpec::default();
        let grid = GridSpec::new(
            pick(common.e_max, &file, "e-max")?.unwrap_or(default_grid.e_max),
            pick(common.x_max, &file, "x-max")?.unwrap_or(default_grid.x_max),
            pick(common.n_e, &file, "n-e")?.unwrap_or(default_grid.n_e),
            pick(common.n_x, &file, "n-x")?.unwrap_or(default_grid.n_x),
        )
        .map_err(|e| UsageError(e.to_string()))?;

        let d_interval = (
            pick(d_min, &file, "d-min")?.unwrap_or(DEFAULT_D_INTERVAL.0),
            pick(d_max, &file, "d-max")?.unwrap_or(DEFAULT_D_INTERVAL.1),
        );
        if !(d_interval.0 > 0.0 && d_interval.1 > d_interval.0 && d_interval.1.is_finite()) {
            return usage(format!("invalid d search interval [{}, {}]", d_interval.0, d_interval.1));
        }

        let n_events = pick(n, &file, "n")?.unwrap_or(DEFAULT_EVENTS);
        if n_events == 0 {
            return usage("--n must be at least 1");
        }

        let default_format = if kind == CommandKind::Map { Format::Csv } else { Format::Json };
        let format = pick(common.format, &file, "format")?.unwrap_or(default_format);
        if format == Format::Csv && matches!(kind, CommandKind::Optimize | CommandKind::Simulate) {
            return usage("csv output is only available for `keyrate` and `map`");
        }

        let threads = pick(cli.threads, &file, "threads")?;
        if threads == Some(0) {
            return usage("--threads must be at least 1");
        }

        Ok(Self {
            command: kind,
            params,
            grid,
            d_interval,
            n_events,
            seed: pick(seed, &file, "seed")?.unwrap_or(DEFAULT_SEED),
            output: pick(common.output, &file, "output")?,
            events: pick(events, &file, "events")?,
            format,
            threads,
        })
    }
}
