//! Monte Carlo experiments over many independent sessions.
//!
//! Trial `k` draws all of its randomness from ChaCha stream `k` of the
//! master seed, so a report depends only on the configuration and the seed,
//! never on scheduling.

mod stats;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{audit_leakage, build_adversary, AttackKind, ZAncillae};
use crate::ghz::EncodingMode;
use crate::protocol::{run_session, ConfigError, SequencePlan, SessionConfig, SessionReport, SimRng};

pub use stats::{wilson_interval, Rate, WILSON_Z};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiments need at least 3 parties, got {0}")]
    TooFewParties(usize),
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    pub fn is_io(&self) -> bool {
        matches!(self, HarnessError::Io { .. })
    }

    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One experiment. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(rename = "parties")]
    pub num_parties: usize,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "dprime")]
    pub d_prime: usize,
    pub attack: AttackKind,
    #[serde(rename = "encoding")]
    pub encoding_mode: EncodingMode,
    pub eve_knows_agreement: bool,
    pub trials: u64,
    pub seed: u64,
    #[serde(rename = "threshold")]
    pub error_threshold: f64,
    pub z_ancillae: ZAncillae,
    pub abort_on_detection: bool,
    pub out: Option<PathBuf>,
    pub dump_transcripts: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_parties: 3,
            n: 16,
            d: 8,
            d_prime: 8,
            attack: AttackKind::None,
            encoding_mode: EncodingMode::TwoOp,
            eve_knows_agreement: false,
            trials: 1000,
            seed: 1,
            error_threshold: 0.0,
            z_ancillae: ZAncillae::Random,
            abort_on_detection: false,
            out: None,
            dump_transcripts: None,
        }
    }
}

impl ExperimentConfig {
    pub fn session_config(&self) -> Result<SessionConfig, ConfigError> {
        let config = SessionConfig {
            encoding_mode: self.encoding_mode,
            eve_knows_agreement: self.eve_knows_agreement,
            error_threshold: self.error_threshold,
            abort_on_detection: self.abort_on_detection,
            ..SessionConfig::new(self.num_parties, SequencePlan::new(self.n, self.d, self.d_prime)?)
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.num_parties < 3 {
            return Err(HarnessError::TooFewParties(self.num_parties));
        }
        if self.trials == 0 {
            return Err(HarnessError::ZeroTrials);
        }
        self.session_config()?;
        build_adversary(self.attack, &self.z_ancillae, self.num_parties).map_err(ConfigError::from)?;
        Ok(())
    }
}

/// Random stream of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs trial `trial` of `config` on its own stream.
pub fn run_trial(config: &ExperimentConfig, trial: u64) -> Result<SessionReport, HarnessError> {
    let session = config.session_config()?;
    let mut eve =
        build_adversary(config.attack, &config.z_ancillae, config.num_parties).map_err(ConfigError::from)?;
    let mut rng = trial_rng(config.seed, trial);
    Ok(run_session(session, eve.as_mut(), &mut rng)?)
}

/// What one session contributes to the aggregate.
#[derive(Debug, Clone, Default)]
struct TrialSummary {
    detected: bool,
    owner_detected: Vec<bool>,
    z_checks: u64,
    z_failures: u64,
    x_checks: u64,
    x_failures: u64,
    owner_dprime: Vec<Option<f64>>,
    agreement: bool,
    accepted: Vec<bool>,
    selected: Option<usize>,
    aborted: bool,
    home_intact: bool,
    audit_passed: bool,
    eve_whole_key: bool,
    eve_bits_guessed: u64,
    eve_bits_correct: u64,
    substitutions: u64,
    exact_substitutions: u64,
}

impl TrialSummary {
    fn of(r: &SessionReport) -> Self {
        let mut s = TrialSummary {
            detected: r.any_detected(),
            owner_detected: r.detected.clone(),
            owner_dprime: (0..r.num_parties).map(|o| r.max_dprime_error(o)).collect(),
            agreement: r.full_agreement(),
            accepted: r.accepted.clone(),
            selected: r.selected_key_owner,
            aborted: r.aborted.is_some(),
            home_intact: r.home_particles_intact,
            audit_passed: audit_leakage(&r.transcript),
            eve_whole_key: r.eve.whole_key,
            eve_bits_guessed: r.eve.bits_guessed as u64,
            eve_bits_correct: r.eve.bits_correct as u64,
            substitutions: r.eve.substitutions as u64,
            exact_substitutions: r.eve.exact_substitutions as u64,
            ..TrialSummary::default()
        };
        for c in r.checks.iter().flatten() {
            s.z_checks += c.z_checks as u64;
            s.z_failures += c.z_failures as u64;
            s.x_checks += c.x_checks as u64;
            s.x_failures += c.x_failures as u64;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerStats {
    pub owner: usize,
    pub detection: Rate,
    /// Mean over sessions of the owner's worst partner `d′` error rate.
    pub mean_dprime_error: f64,
    pub accepted: Rate,
    /// Sessions in which this owner's key was selected.
    pub selected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub trials: u64,
    pub attack: AttackKind,
    /// Sessions in which some owner's pre-encoding check failed.
    pub detection: Rate,
    pub z_check_failure: Rate,
    pub x_check_failure: Rate,
    pub owners: Vec<OwnerStats>,
    pub key_agreement: Rate,
    pub no_key_selected: u64,
    pub aborted: u64,
    pub eve_whole_key: Rate,
    pub eve_bits: Rate,
    pub exact_substitution: Rate,
    pub leakage_audit_failures: u64,
    pub home_particles_intact: bool,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ExperimentReport {
    /// Named scalar metrics, in a fixed order.
    pub fn metrics(&self) -> Vec<(String, Rate)> {
        let mut rows = vec![
            ("detection_rate".to_string(), self.detection),
            ("z_check_failure_rate".to_string(), self.z_check_failure),
            ("x_check_failure_rate".to_string(), self.x_check_failure),
            ("key_agreement_rate".to_string(), self.key_agreement),
            ("eve_whole_key_rate".to_string(), self.eve_whole_key),
            ("eve_bit_rate".to_string(), self.eve_bits),
            ("exact_substitution_rate".to_string(), self.exact_substitution),
        ];
        for o in &self.owners {
            rows.push((format!("owner{}_detection_rate", o.owner), o.detection));
            rows.push((format!("owner{}_accepted_rate", o.owner), o.accepted));
            rows.push((
                format!("owner{}_mean_dprime_error", o.owner),
                Rate::point(o.mean_dprime_error, self.trials),
            ));
            rows.push((
                format!("owner{}_selected_rate", o.owner),
                Rate::new(o.selected, self.trials),
            ));
        }
        rows
    }
}

fn aggregate(config: &ExperimentConfig, summaries: &[TrialSummary]) -> ExperimentReport {
    let trials = summaries.len() as u64;
    let count = |f: &dyn Fn(&TrialSummary) -> bool| summaries.iter().filter(|s| f(s)).count() as u64;
    let sum = |f: &dyn Fn(&TrialSummary) -> u64| summaries.iter().map(f).sum::<u64>();

    let owners = (0..config.num_parties)
        .map(|o| {
            let rates: Vec<f64> = summaries.iter().filter_map(|s| s.owner_dprime[o]).collect();
            let mean = if rates.is_empty() {
                0.0
            } else {
                rates.iter().sum::<f64>() / rates.len() as f64
            };
            OwnerStats {
                owner: o,
                detection: Rate::new(count(&|s| s.owner_detected[o]), trials),
                mean_dprime_error: mean,
                accepted: Rate::new(count(&|s| s.accepted[o]), trials),
                selected: count(&|s| s.selected == Some(o)),
            }
        })
        .collect();

    ExperimentReport {
        config: config.clone(),
        seed: config.seed,
        trials,
        attack: config.attack,
        detection: Rate::new(count(&|s| s.detected), trials),
        z_check_failure: Rate::new(sum(&|s| s.z_failures), sum(&|s| s.z_checks)),
        x_check_failure: Rate::new(sum(&|s| s.x_failures), sum(&|s| s.x_checks)),
        owners,
        key_agreement: Rate::new(count(&|s| s.agreement), trials),
        no_key_selected: count(&|s| s.selected.is_none()),
        aborted: count(&|s| s.aborted),
        eve_whole_key: Rate::new(count(&|s| s.eve_whole_key), trials),
        eve_bits: Rate::new(sum(&|s| s.eve_bits_correct), sum(&|s| s.eve_bits_guessed)),
        exact_substitution: Rate::new(sum(&|s| s.exact_substitutions), sum(&|s| s.substitutions)),
        leakage_audit_failures: count(&|s| !s.audit_passed),
        home_particles_intact: summaries.iter().all(|s| s.home_intact),
        elapsed: Duration::ZERO,
    }
}

/// Path of the transcript dump of one trial.
pub fn transcript_path(dir: &Path, trial: u64) -> PathBuf {
    dir.join(format!("trial-{trial:06}.jsonl"))
}

/// Runs every trial and aggregates the results. Transcripts are written
/// when `config.dump_transcripts` names a directory; the report itself is
/// only returned.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let start = Instant::now();
    if let Some(dir) = &config.dump_transcripts {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let summaries = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let report = run_trial(config, trial)?;
            if let Some(dir) = &config.dump_transcripts {
                let path = transcript_path(dir, trial);
                let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
                let mut out = BufWriter::new(file);
                report
                    .transcript
                    .write_jsonl(&mut out)
                    .and_then(|_| out.flush())
                    .map_err(|e| HarnessError::io(&path, e))?;
            }
            Ok(TrialSummary::of(&report))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut report = aggregate(config, &summaries);
    report.elapsed = start.elapsed();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects the tabular format, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["metric", "estimate", "ci_low", "ci_high", "trials", "seed"])
                .expect("in-memory write");
            for (name, rate) in report.metrics() {
                w.write_record([
                    name,
                    rate.estimate.to_string(),
                    rate.ci_low.to_string(),
                    rate.ci_high.to_string(),
                    rate.trials.to_string(),
                    report.seed.to_string(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

pub fn write_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    fs::write(path, render_report(report, format)).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(attack: AttackKind, trials: u64) -> ExperimentConfig {
        ExperimentConfig {
            n: 4,
            d: 4,
            d_prime: 4,
            attack,
            trials,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn no_attack_is_clean() {
        let r = run_monte_carlo(&small(AttackKind::None, 30)).unwrap();
        assert_eq!(r.detection.successes, 0);
        assert_eq!(r.key_agreement.successes, 30);
        assert!(r.owners.iter().all(|o| o.mean_dprime_error == 0.0));
        assert_eq!(r.no_key_selected, 0);
        assert_eq!(r.owners[0].selected, 30);
        assert_eq!(r.leakage_audit_failures, 0);
    }

    #[test]
    fn trial_streams_differ() {
        let a = run_trial(&small(AttackKind::None, 1), 0).unwrap();
        let b = run_trial(&small(AttackKind::None, 1), 1).unwrap();
        assert_ne!(a.own_keys, b.own_keys);
        let c = run_trial(&small(AttackKind::None, 1), 0).unwrap();
        assert_eq!(a.own_keys, c.own_keys);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ExperimentConfig {
                num_parties: 2,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                trials: 0,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                d: 0,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                error_threshold: 1.5,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                attack: AttackKind::MitmZ,
                z_ancillae: ZAncillae::Fixed(vec![true]),
                ..ExperimentConfig::default()
            },
        ];
        for c in bad {
            let e = run_monte_carlo(&c).unwrap_err();
            assert!(!e.is_io(), "{e}");
        }
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let r = run_monte_carlo(&small(AttackKind::DoubleCnot, 5)).unwrap();
        let text = String::from_utf8(render_report(&r, ReportFormat::Csv)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("metric,estimate,ci_low,ci_high,trials,seed"));
        assert_eq!(lines.count(), r.metrics().len());
        assert!(text.contains("\neve_whole_key_rate,"));
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(ReportFormat::from_path(Path::new("a/b.CSV")), ReportFormat::Csv);
        assert_eq!(ReportFormat::from_path(Path::new("a/b.json")), ReportFormat::Json);
        assert_eq!(ReportFormat::from_path(Path::new("report")), ReportFormat::Json);
    }
}
