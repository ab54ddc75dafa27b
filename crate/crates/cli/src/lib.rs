//! Command-line front end for the Monte Carlo harness.
//!
//! Settings come from built-in defaults, then an optional TOML file
//! (`--config`, same keys as the long flags), then the flags themselves.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::Parser;
use thiserror::Error;

use ghz_qkd::adversary::{AttackKind, ZAncillae};
use ghz_qkd::ghz::EncodingMode;
use ghz_qkd::harness::{run_monte_carlo, write_report, ExperimentConfig, ExperimentReport, HarnessError, ReportFormat};

/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: u8 = 1;
/// Exit status for I/O failures.
pub const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ghz-qkd", version, about = "Monte Carlo runner for multi-key GHZ QKD sessions")]
pub struct Cli {
    /// TOML file supplying defaults for any of the options below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of parties [default: 3].
    #[arg(long)]
    pub parties: Option<usize>,
    /// Key positions per sequence [default: 16].
    #[arg(long)]
    pub n: Option<usize>,
    /// Pre-encoding check positions [default: 8].
    #[arg(long)]
    pub d: Option<usize>,
    /// Post-decoding check positions [default: 8].
    #[arg(long)]
    pub dprime: Option<usize>,
    /// Eavesdropper [default: none].
    #[arg(long, value_parser = attack_parser())]
    pub attack: Option<AttackKind>,
    /// Operator-to-bit agreement [default: two-op].
    #[arg(long, value_parser = encoding_parser())]
    pub encoding: Option<EncodingMode>,
    /// Eve knows which encoding convention is in use.
    #[arg(long)]
    pub eve_knows_agreement: bool,
    /// Number of sessions [default: 1000].
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest accepted d′ error rate, in [0, 1] [default: 0].
    #[arg(long, value_parser = parse_fraction)]
    pub threshold: Option<f64>,
    /// Substitutes for mitm-z: "random", or one bit per recipient such as "01".
    #[arg(long, value_parser = parse_ancillae)]
    pub z_ancillae: Option<ZAncillae>,
    /// Drop a sequence once its pre-encoding check fails.
    #[arg(long)]
    pub abort_on_detection: bool,
    /// Report file; `.csv` gives the tabular format, anything else JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Directory for one JSON-lines transcript per trial.
    #[arg(long, value_name = "DIR")]
    pub dump_transcripts: Option<PathBuf>,
}

fn attack_parser() -> impl TypedValueParser<Value = AttackKind> {
    PossibleValuesParser::new(AttackKind::ALL.map(AttackKind::name))
        .map(|s| s.parse::<AttackKind>().expect("listed name"))
}

fn encoding_parser() -> impl TypedValueParser<Value = EncodingMode> {
    PossibleValuesParser::new(["two-op", "four-op"]).map(|s| match s.as_str() {
        "two-op" => EncodingMode::TwoOp,
        _ => EncodingMode::FourOp,
    })
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_ancillae(s: &str) -> Result<ZAncillae, String> {
    if s == "random" {
        return Ok(ZAncillae::Random);
    }
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(format!("expected \"random\" or a string of 0s and 1s, got {s:?}")),
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|bits| {
            if bits.is_empty() {
                Err("empty bit string".to_string())
            } else {
                Ok(ZAncillae::Fixed(bits))
            }
        })
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Usage errors, and help or version requests.
    #[error("{0}")]
    Usage(#[from] clap::Error),
    #[error("cannot read config file {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {}: {source}", path.display())]
    ConfigParse { path: PathBuf, source: Box<toml::de::Error> },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::ConfigRead { .. } => EXIT_IO,
            CliError::Harness(e) if e.is_io() => EXIT_IO,
            _ => EXIT_CONFIG,
        }
    }
}

impl Cli {
    /// Layers the flags over `base`.
    pub fn apply(self, mut c: ExperimentConfig) -> ExperimentConfig {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(parties => num_parties, n => n, d => d, dprime => d_prime, attack => attack,
             encoding => encoding_mode, trials => trials, seed => seed,
             threshold => error_threshold, z_ancillae => z_ancillae);
        c.eve_knows_agreement |= self.eve_knows_agreement;
        c.abort_on_detection |= self.abort_on_detection;
        if self.out.is_some() {
            c.out = self.out;
        }
        if self.dump_transcripts.is_some() {
            c.dump_transcripts = self.dump_transcripts;
        }
        c
    }
}

/// Parses `argv` (program name first) into a validated configuration.
pub fn parse_cli<I, T>(argv: I) -> Result<ExperimentConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let base = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
                path: path.clone(),
                source,
            })?;
            toml::from_str(&text).map_err(|source| CliError::ConfigParse {
                path: path.clone(),
                source: Box::new(source),
            })?
        }
    };
    let config = cli.apply(base);
    config.validate()?;
    Ok(config)
}

fn summary(report: &ExperimentReport) -> String {
    let mut s = format!(
        "{} trials, attack {}, seed {} ({:.2?})\n",
        report.trials, report.attack, report.seed, report.elapsed
    );
    for (name, r) in report.metrics() {
        s.push_str(&format!(
            "{name:<28} {:.4}  [{:.4}, {:.4}]\n",
            r.estimate, r.ci_low, r.ci_high
        ));
    }
    s
}

/// Runs the program; returns the exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = parse_cli(argv).and_then(|config| {
        let report = run_monte_carlo(&config)?;
        if let Some(path) = &config.out {
            write_report(&report, ReportFormat::from_path(path), path)?;
        }
        Ok(report)
    });
    match outcome {
        Ok(report) => {
            let _ = stdout.write_all(summary(&report).as_bytes());
            0
        }
        Err(CliError::Usage(e)) => {
            let text = e.render().to_string();
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
