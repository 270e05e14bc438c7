//! `survkit`: survival analysis of right-censored CSV data from the command line.

mod commands;
mod render;

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use survkit::aft::AftDistribution;
use survkit::cohort::{load_csv, Cohort, ColumnKind, ColumnSpec, CsvConfig};
use survkit::cox::{Ties, TimeTransform};
use survkit::error::{Error, Result};
use survkit::km::BandKind;
use survkit::rank_tests::WeightSpec;

#[derive(Debug, Parser)]
#[command(name = "survkit", version, about = "Survival analysis of right-censored lifetime data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file with a header row; `-` reads standard input.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Duration column.
    #[arg(long, default_value = "age")]
    pub time: String,
    /// Event column (1 = event observed, 0 = censored).
    #[arg(long, default_value = "status")]
    pub event: String,
    /// Columns read as categorical even when numeric. Other columns are
    /// categorical only if some cell is not a number.
    #[arg(long, value_delimiter = ',', default_value = "form,strategy")]
    pub categorical: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the result here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Counts, censoring and moments of every variable.
    Summarize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Kaplan-Meier estimates, overall or per level.
    Km {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Categorical variables to stratify by (repeatable).
        #[arg(long, value_delimiter = ',')]
        by: Vec<String>,
        /// Evaluation times for the estimate table.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,15")]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Band::Loglog)]
        band: Band,
        /// Also write the step-function CSV to this path.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Weighted log-rank k-sample tests.
    Test {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        by: Vec<String>,
        /// logrank, gehan, peto or fh(rho,gamma); repeatable.
        #[arg(long, value_delimiter = ';', default_value = "logrank;peto")]
        weight: Vec<WeightSpec>,
    },
    /// Pairwise tests between levels with Benjamini-Hochberg adjustment.
    Pairwise {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long)]
        by: String,
        #[arg(long, default_value = "peto")]
        weight: WeightSpec,
    },
    /// Cox fit and Grambsch-Therneau proportional-hazards test.
    Phtest {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Model variables; all covariates when omitted.
        #[arg(long, value_delimiter = ',')]
        vars: Vec<String>,
        #[arg(long, default_value = "efron")]
        ties: Ties,
        #[arg(long, default_value = "km")]
        transform: TimeTransform,
    },
    /// Accelerated failure time regression.
    Aft {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value = "loglogistic")]
        dist: AftDistribution,
        /// Model variables; all covariates when omitted.
        #[arg(long, value_delimiter = ',')]
        vars: Vec<String>,
        /// Add single-variable fits of every covariate next to the multiple fit.
        #[arg(long)]
        screen: bool,
    },
    /// AIC comparison of AFT distributions on one design.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, value_delimiter = ',')]
        vars: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        dists: Vec<AftDistribution>,
    },
    /// Group the level-wise survival curves of a categorical variable.
    Group {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long)]
        by: String,
        #[arg(long, default_value = "peto")]
        weight: WeightSpec,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        max_groups: Option<usize>,
        /// Also write a level,group CSV to this path.
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Generate a synthetic cohort.
    Simulate {
        /// Built-in configuration.
        #[arg(long, value_enum, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<Preset>,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for every random draw; overrides the seed in a config file.
        #[arg(long)]
        seed: u64,
        /// Override the number of records.
        #[arg(long)]
        n: Option<usize>,
        /// Cohort CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved configuration as TOML instead of simulating.
        #[arg(long)]
        print_config: bool,
        /// Format of the run report printed when --out is given.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Band {
    Loglog,
    Linear,
}

impl From<Band> for BandKind {
    fn from(b: Band) -> Self {
        match b {
            Band::Loglog => BandKind::LogLog,
            Band::Linear => BandKind::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
}

impl InputArgs {
    pub fn load(&self) -> Result<Cohort> {
        let config = CsvConfig {
            duration_column: self.time.clone(),
            event_column: self.event.clone(),
            columns: self
                .categorical
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| ColumnSpec {
                    name: c.clone(),
                    kind: ColumnKind::Categorical(None),
                })
                .collect(),
            include_unlisted: true,
        };
        let name = self.input.display().to_string();
        let located = |e: Error| match e {
            Error::Data(m) => Error::Data(format!("{name}: {m}")),
            Error::Row { line, message } => Error::Row {
                line,
                message: format!("{name}: {message}"),
            },
            other => other,
        };
        if name == "-" {
            let mut buf = Vec::new();
            io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| Error::Data(format!("reading standard input: {e}")))?;
            load_csv(buf.as_slice(), &config).map_err(located)
        } else {
            let file = fs::File::open(&self.input).map_err(|e| Error::Data(format!("{name}: {e}")))?;
            load_csv(io::BufReader::new(file), &config).map_err(located)
        }
    }
}

pub fn write_to(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Data(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Data(format!("writing standard output: {e}")))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    use commands::*;
    match cli.command {
        Command::Summarize { input, out } => summarize(&input, &out),
        Command::Km {
            input,
            out,
            by,
            times,
            band,
            plot_data,
        } => km(&input, &out, &by, &times, band.into(), plot_data.as_ref()),
        Command::Test { input, out, by, weight } => test(&input, &out, &by, &weight),
        Command::Pairwise { input, out, by, weight } => pairwise(&input, &out, &by, weight),
        Command::Phtest {
            input,
            out,
            vars,
            ties,
            transform,
        } => phtest(&input, &out, &vars, ties, transform),
        Command::Aft {
            input,
            out,
            dist,
            vars,
            screen,
        } => aft(&input, &out, dist, &vars, screen),
        Command::Compare {
            input,
            out,
            vars,
            dists,
        } => compare(&input, &out, &vars, &dists),
        Command::Group {
            input,
            out,
            by,
            weight,
            alpha,
            max_groups,
            assignments,
        } => group(&input, &out, &by, weight, alpha, max_groups, assignments.as_ref()),
        Command::Simulate {
            preset,
            config,
            seed,
            n,
            out,
            print_config,
            format,
        } => simulate(preset, config.as_ref(), seed, n, out.as_ref(), print_config, format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and errors to stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("survkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
