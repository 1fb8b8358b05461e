//! Experiment configuration: one key=value file (dotted sections, TOML
//! syntax) drives the entire pipeline.

use crate::bidding::{BatchMode, LambdaSolveConfig};
use crate::data::{CampaignGenSpec, CampaignId, SplitRule, SyntheticMarketSpec};
use crate::error::{Error, Result};
use crate::market::{CvrDistribution, WinningFunction};
use crate::replay::InflationSchedule;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub payoff: PayoffSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub tuning: TuningSection,
    pub rounds: Option<RoundsSection>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub inflation: InflationSection,
}

fn default_out_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "log" or "synthetic".
    pub source: String,
    pub log_path: Option<String>,
    #[serde(default)]
    pub cpm: bool,
    #[serde(default)]
    pub clicks_as_conversions: bool,
    #[serde(default = "default_cvr_bins")]
    pub cvr_bins: usize,
    /// Market model family fitted from prices: "longtail" or "uniform".
    #[serde(default = "default_market_family")]
    pub market: String,
    /// Fit one winning function per campaign (global fit is the fallback).
    #[serde(default = "default_true")]
    pub per_campaign_market: bool,
}

fn default_cvr_bins() -> usize {
    100
}

fn default_market_family() -> String {
    "longtail".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub last_days: Option<u32>,
    pub cut_ms: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    /// "easy" (0.8 eCPA), "hard" (0.2 eCPA), or "explicit".
    #[serde(default = "default_payoff_mode")]
    pub mode: String,
    /// Per-campaign payoffs for explicit mode, keyed by campaign id.
    #[serde(default)]
    pub explicit: BTreeMap<String, f64>,
}

fn default_payoff_mode() -> String {
    "easy".to_string()
}

impl Default for PayoffSection {
    fn default() -> Self {
        PayoffSection { mode: default_payoff_mode(), explicit: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_selections")]
    pub selections: Vec<String>,
    #[serde(default = "default_divisors")]
    pub divisors: Vec<u32>,
    #[serde(default)]
    pub trace: bool,
}

fn default_strategies() -> Vec<String> {
    ["const", "rand", "truth", "lin", "ortb", "sam1", "sam2"]
        .map(String::from)
        .to_vec()
}

fn default_selections() -> Vec<String> {
    ["uniform", "greedy", "portfolio"].map(String::from).to_vec()
}

fn default_divisors() -> Vec<u32> {
    vec![2, 4, 8, 16, 32, 64, 128, 256]
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            strategies: default_strategies(),
            selections: default_selections(),
            divisors: default_divisors(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.1
}

impl Default for PortfolioSection {
    fn default() -> Self {
        PortfolioSection { alpha: default_alpha() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    #[serde(default = "default_em_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol_v")]
    pub tol_v: f64,
    #[serde(default = "default_tol_lambda")]
    pub tol_lambda: f64,
    #[serde(default = "default_mc_reps")]
    pub mc_reps: usize,
    /// Expected auction volume; defaults to the test record count.
    pub volume: Option<usize>,
}

fn default_em_iters() -> usize {
    20
}
fn default_tol_v() -> f64 {
    1e-3
}
fn default_tol_lambda() -> f64 {
    1e-4
}
fn default_mc_reps() -> usize {
    50
}

impl Default for EmSection {
    fn default() -> Self {
        EmSection {
            max_iters: default_em_iters(),
            tol_v: default_tol_v(),
            tol_lambda: default_tol_lambda(),
            mc_reps: default_mc_reps(),
            volume: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_lambda_iters")]
    pub max_iters: usize,
    /// Absolute residual tolerance; default is 1e-4 * (B/T).
    pub tolerance: Option<f64>,
    /// "full", "stochastic", or a mini-batch size.
    #[serde(default = "default_batch")]
    pub batch: String,
}

fn default_eta() -> f64 {
    1e-3
}
fn default_lambda_iters() -> usize {
    10_000
}
fn default_batch() -> String {
    "full".to_string()
}

impl Default for LambdaSection {
    fn default() -> Self {
        LambdaSection {
            eta: default_eta(),
            max_iters: default_lambda_iters(),
            tolerance: None,
            batch: default_batch(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    /// Number of log-spaced candidates per tunable parameter.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Sweep bounds as multiples of the mean training price.
    #[serde(default = "default_lo_factor")]
    pub lo_factor: f64,
    #[serde(default = "default_hi_factor")]
    pub hi_factor: f64,
}

fn default_grid() -> usize {
    20
}
fn default_lo_factor() -> f64 {
    0.05
}
fn default_hi_factor() -> f64 {
    20.0
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection {
            grid_points: default_grid(),
            lo_factor: default_lo_factor(),
            hi_factor: default_hi_factor(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundsSection {
    pub period_hours: u32,
    /// Defaults to the test span rounded up to whole hours.
    pub horizon_hours: Option<u32>,
    #[serde(default = "default_rounds_strategy")]
    pub strategy: String,
    #[serde(default = "default_rounds_selection")]
    pub selection: String,
    #[serde(default = "default_rounds_divisor")]
    pub divisor: u32,
}

fn default_rounds_strategy() -> String {
    "sam2".to_string()
}
fn default_rounds_selection() -> String {
    "portfolio".to_string()
}
fn default_rounds_divisor() -> u32 {
    16
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub horizon_hours: u32,
    #[serde(default = "default_price_cap")]
    pub price_cap_factor: f64,
    #[serde(default)]
    pub start_ms: i64,
    pub campaigns: Vec<SyntheticCampaign>,
}

fn default_price_cap() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCampaign {
    pub id: String,
    /// E.g. "beta(2,8)".
    pub cvr: String,
    /// E.g. "longtail(0.05)" or "uniform(0.3)".
    pub market: String,
    pub records_per_hour: u32,
    pub payoff: Option<f64>,
    #[serde(default)]
    pub drift: Vec<DriftEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEntry {
    pub hour: u32,
    pub cvr: Option<String>,
    pub market: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationSection {
    #[serde(default)]
    pub schedule: Vec<InflationPoint>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationPoint {
    pub hour: f64,
    pub factor: f64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "log" => {
                if self.data.log_path.is_none() {
                    return Err(Error::config(
                        "data.log_path",
                        "required when data.source = \"log\"",
                    ));
                }
            }
            "synthetic" => {
                let synth = self.synthetic.as_ref().ok_or_else(|| {
                    Error::config("synthetic", "required when data.source = \"synthetic\"")
                })?;
                if synth.campaigns.is_empty() {
                    return Err(Error::config("synthetic.campaigns", "need at least one"));
                }
                for c in &synth.campaigns {
                    parse_cvr(&c.cvr).map_err(|e| {
                        Error::config(format!("synthetic.campaigns.{}.cvr", c.id), e.to_string())
                    })?;
                    parse_market(&c.market).map_err(|e| {
                        Error::config(format!("synthetic.campaigns.{}.market", c.id), e.to_string())
                    })?;
                    for d in &c.drift {
                        if let Some(s) = &d.cvr {
                            parse_cvr(s).map_err(|e| {
                                Error::config(
                                    format!("synthetic.campaigns.{}.drift", c.id),
                                    e.to_string(),
                                )
                            })?;
                        }
                        if let Some(s) = &d.market {
                            parse_market(s).map_err(|e| {
                                Error::config(
                                    format!("synthetic.campaigns.{}.drift", c.id),
                                    e.to_string(),
                                )
                            })?;
                        }
                    }
                }
            }
            other => {
                return Err(Error::config(
                    "data.source",
                    format!("must be \"log\" or \"synthetic\", got \"{other}\""),
                ));
            }
        }
        if !matches!(self.data.market.as_str(), "longtail" | "uniform") {
            return Err(Error::config(
                "data.market",
                "must be \"longtail\" or \"uniform\"",
            ));
        }
        if self.data.cvr_bins == 0 {
            return Err(Error::config("data.cvr_bins", "must be at least 1"));
        }
        if !matches!(self.payoff.mode.as_str(), "easy" | "hard" | "explicit") {
            return Err(Error::config(
                "payoff.mode",
                "must be \"easy\", \"hard\", or \"explicit\"",
            ));
        }
        if self.run.strategies.is_empty() {
            return Err(Error::config("run.strategies", "need at least one strategy"));
        }
        for s in &self.run.strategies {
            if !matches!(
                s.as_str(),
                "const" | "rand" | "truth" | "lin" | "ortb" | "sam1" | "sam2"
            ) {
                return Err(Error::config(
                    "run.strategies",
                    format!("unknown strategy \"{s}\""),
                ));
            }
        }
        for s in &self.run.selections {
            if !matches!(s.as_str(), "single" | "uniform" | "greedy" | "portfolio") {
                return Err(Error::config(
                    "run.selections",
                    format!("unknown selection \"{s}\""),
                ));
            }
        }
        for &d in &self.run.divisors {
            if !(2..=256).contains(&d) || d.count_ones() != 1 {
                return Err(Error::config(
                    "run.divisors",
                    format!("divisors must be powers of two in [2, 256], got {d}"),
                ));
            }
        }
        if self.split.last_days.is_some() && self.split.cut_ms.is_some() {
            return Err(Error::config("split", "set last_days or cut_ms, not both"));
        }
        if self.portfolio.alpha < 0.0 || !self.portfolio.alpha.is_finite() {
            return Err(Error::config("portfolio.alpha", "must be nonnegative"));
        }
        if let Some(r) = &self.rounds {
            if r.period_hours == 0 {
                return Err(Error::config("rounds.period_hours", "must be positive"));
            }
        }
        self.lambda_config()?;
        Ok(())
    }

    pub fn split_rule(&self) -> SplitRule {
        if let Some(t) = self.split.cut_ms {
            SplitRule::AtTimestamp(t)
        } else {
            SplitRule::LastDays(self.split.last_days.unwrap_or(3))
        }
    }

    pub fn lambda_config(&self) -> Result<LambdaSolveConfig> {
        let batch = match self.lambda.batch.as_str() {
            "full" => BatchMode::Full,
            "stochastic" => BatchMode::Stochastic,
            other => {
                let size: usize = other.parse().map_err(|_| {
                    Error::config(
                        "lambda.batch",
                        format!(
                            "must be \"full\", \"stochastic\", or a mini-batch size, got \"{other}\""
                        ),
                    )
                })?;
                if size == 0 {
                    return Err(Error::config("lambda.batch", "mini-batch size must be positive"));
                }
                BatchMode::MiniBatch(size)
            }
        };
        Ok(LambdaSolveConfig {
            learning_rate: self.lambda.eta,
            max_iters: self.lambda.max_iters,
            tolerance: self.lambda.tolerance,
            batch,
        })
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticMarketSpec> {
        let section = self
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::config("synthetic", "section missing"))?;
        let campaigns = section
            .campaigns
            .iter()
            .map(|c| {
                let cvr = parse_cvr(&c.cvr)?;
                let market = parse_market(&c.market)?;
                let mut cvr_drift = Vec::new();
                let mut market_drift = Vec::new();
                for d in &c.drift {
                    if let Some(s) = &d.cvr {
                        cvr_drift.push((d.hour, parse_cvr(s)?));
                    }
                    if let Some(s) = &d.market {
                        market_drift.push((d.hour, parse_market(s)?));
                    }
                }
                Ok(CampaignGenSpec {
                    id: CampaignId(c.id.clone()),
                    cvr,
                    market,
                    payoff: c.payoff,
                    records_per_hour: c.records_per_hour,
                    cvr_drift,
                    market_drift,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticMarketSpec {
            campaigns,
            horizon_hours: section.horizon_hours,
            seed: self.seed,
            price_cap_factor: section.price_cap_factor,
            start_ms: section.start_ms,
        })
    }

    pub fn inflation_schedule(&self) -> Option<InflationSchedule> {
        if self.inflation.schedule.is_empty() {
            return None;
        }
        let mut points: Vec<(f64, f64)> =
            self.inflation.schedule.iter().map(|p| (p.hour, p.factor)).collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Some(InflationSchedule { points })
    }
}

/// Parses "beta(a,b)" into a CVR distribution.
pub fn parse_cvr(text: &str) -> Result<CvrDistribution> {
    let (name, args) = split_call(text)
        .ok_or_else(|| Error::invalid("cvr spec", format!("expected beta(a,b), got \"{text}\"")))?;
    match name {
        "beta" if args.len() == 2 => CvrDistribution::beta(args[0], args[1]),
        _ => Err(Error::invalid(
            "cvr spec",
            format!("expected beta(a,b), got \"{text}\""),
        )),
    }
}

/// Parses "longtail(l)" or "uniform(l)" into a winning function.
pub fn parse_market(text: &str) -> Result<WinningFunction> {
    let (name, args) = split_call(text).ok_or_else(|| {
        Error::invalid(
            "market spec",
            format!("expected longtail(l) or uniform(l), got \"{text}\""),
        )
    })?;
    match name {
        "longtail" if args.len() == 1 => WinningFunction::long_tail(args[0]),
        "uniform" if args.len() == 1 => WinningFunction::uniform(args[0]),
        _ => Err(Error::invalid(
            "market spec",
            format!("expected longtail(l) or uniform(l), got \"{text}\""),
        )),
    }
}

fn split_call(text: &str) -> Option<(&str, Vec<f64>)> {
    let text = text.trim();
    let open = text.find('(')?;
    if !text.ends_with(')') {
        return None;
    }
    let name = &text[..open];
    let inner = &text[open + 1..text.len() - 1];
    let args = inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok())
        .collect::<Option<Vec<f64>>>()?;
    Some((name, args))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[data]
source = "synthetic"

[synthetic]
horizon_hours = 48

[[synthetic.campaigns]]
id = "a"
cvr = "beta(2,8)"
market = "longtail(0.05)"
records_per_hour = 100
"#;

    #[test]
    fn minimal_synthetic_config_parses() {
        let cfg = ExperimentConfig::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.run.divisors.len(), 8);
        let spec = cfg.synthetic_spec().unwrap();
        assert_eq!(spec.campaigns.len(), 1);
        assert_eq!(spec.horizon_hours, 48);
    }

    #[test]
    fn missing_data_source_names_the_field() {
        let err = ExperimentConfig::from_str("seed = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data"), "message was: {msg}");
    }

    #[test]
    fn log_source_requires_path() {
        let err = ExperimentConfig::from_str("[data]\nsource = \"log\"\n").unwrap_err();
        assert!(err.to_string().contains("log_path"));
    }

    #[test]
    fn bad_divisor_is_rejected() {
        let text = format!("{MINIMAL}\n[run]\ndivisors = [3]\n");
        let err = ExperimentConfig::from_str(&text).unwrap_err();
        assert!(err.to_string().contains("divisors"));
    }

    #[test]
    fn parses_cvr_and_market_specs() {
        assert!(matches!(
            parse_cvr("beta(2, 8)").unwrap(),
            CvrDistribution::Beta { .. }
        ));
        assert!(matches!(
            parse_market("longtail(50)").unwrap(),
            WinningFunction::LongTail { .. }
        ));
        assert!(matches!(
            parse_market("uniform(300)").unwrap(),
            WinningFunction::UniformMarket { .. }
        ));
        assert!(parse_cvr("gaussian(1,2)").is_err());
        assert!(parse_market("longtail(-5)").is_err());
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let text = format!("{MINIMAL}\n[run]\nstrategies = [\"sam3\"]\n");
        assert!(ExperimentConfig::from_str(&text).is_err());
    }

    #[test]
    fn lambda_batch_modes_parse() {
        let text = format!("{MINIMAL}\n[lambda]\nbatch = \"256\"\n");
        let cfg = ExperimentConfig::from_str(&text).unwrap();
        assert_eq!(cfg.lambda_config().unwrap().batch, BatchMode::MiniBatch(256));
    }
}
