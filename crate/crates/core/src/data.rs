//! Bid-log parsing, synthetic market generation, and train/test splitting.
//!
//! Log schema: tab-separated `timestamp, campaign_id, pcvr, winning_price,
//! converted[, feature_hash]`, optional header, UTF-8. Timestamps are integer
//! milliseconds; prices are per-impression currency unless the CPM option is
//! set, in which case the column is divided by 1000 on the way in.

use crate::error::{Error, Result};
use crate::market::{fit_long_tail_l, fit_uniform_l, CvrDistribution, WinningFunction};
use crate::numeric::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const MS_PER_HOUR: i64 = 3_600_000;
pub const MS_PER_DAY: i64 = 86_400_000;

/// Campaign identifier as it appears in the log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CampaignId(pub String);

impl std::fmt::Display for CampaignId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CampaignId {
    fn from(s: &str) -> Self {
        CampaignId(s.to_string())
    }
}

/// One replayable auction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidRecord {
    pub timestamp_ms: i64,
    pub campaign: CampaignId,
    /// Predicted CVR in [0, 1].
    pub pcvr: f64,
    /// Logged auction winning price, per impression.
    pub winning_price: f64,
    pub converted: bool,
    pub feature_hash: Option<String>,
}

/// All records of one campaign, ordered by timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStream {
    pub id: CampaignId,
    pub records: Vec<BidRecord>,
}

impl CampaignStream {
    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.winning_price).sum()
    }

    pub fn conversions(&self) -> u64 {
        self.records.iter().filter(|r| r.converted).count() as u64
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Divide the price column by 1000 (CPM quotes).
    pub cpm_prices: bool,
    /// `None` autodetects a header by checking whether the first field of the
    /// first line parses as an integer timestamp.
    pub has_header: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseStats {
    pub lines: u64,
    pub valid: u64,
    pub rejected: BTreeMap<String, u64>,
    pub campaigns: usize,
}

impl ParseStats {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

/// Parses a record-per-line bid log into per-campaign streams sorted stably
/// by timestamp. Invalid lines are counted by reason, never silently dropped.
/// Files ending in `.gz` are decompressed on the fly.
pub fn parse_log(path: &Path, opts: &ParseOptions) -> Result<(Vec<CampaignStream>, ParseStats)> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_log_reader(BufReader::new(flate2::read::GzDecoder::new(file)), opts)
    } else {
        parse_log_reader(BufReader::new(file), opts)
    }
}

pub fn parse_log_reader<R: BufRead>(
    reader: R,
    opts: &ParseOptions,
) -> Result<(Vec<CampaignStream>, ParseStats)> {
    let mut stats = ParseStats::default();
    let mut streams: BTreeMap<CampaignId, Vec<BidRecord>> = BTreeMap::new();
    let mut first = true;

    for line in reader.lines() {
        let line = line.map_err(|source| Error::Io {
            path: "<log stream>".to_string(),
            source,
        })?;
        if first {
            first = false;
            let skip = match opts.has_header {
                Some(h) => h,
                None => line
                    .split('\t')
                    .next()
                    .map_or(false, |f| f.trim().parse::<i64>().is_err()),
            };
            if skip {
                continue;
            }
        }
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        match parse_line(&line, opts.cpm_prices) {
            Ok(rec) => {
                stats.valid += 1;
                streams.entry(rec.campaign.clone()).or_default().push(rec);
            }
            Err(reason) => {
                *stats.rejected.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    if stats.valid == 0 {
        return Err(Error::NoValidRecords {
            rejected: stats.rejected_total(),
        });
    }
    let mut out = Vec::with_capacity(streams.len());
    for (id, mut records) in streams {
        records.sort_by_key(|r| r.timestamp_ms);
        out.push(CampaignStream { id, records });
    }
    stats.campaigns = out.len();
    Ok((out, stats))
}

fn parse_line(line: &str, cpm: bool) -> std::result::Result<BidRecord, &'static str> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 && fields.len() != 6 {
        return Err("bad field count");
    }
    let timestamp_ms: i64 = fields[0].trim().parse().map_err(|_| "bad timestamp")?;
    let campaign = fields[1].trim();
    if campaign.is_empty() {
        return Err("empty campaign id");
    }
    let pcvr: f64 = fields[2].trim().parse().map_err(|_| "bad pcvr")?;
    if !pcvr.is_finite() || !(0.0..=1.0).contains(&pcvr) {
        return Err("pcvr out of range");
    }
    let mut winning_price: f64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| "bad winning price")?;
    if !winning_price.is_finite() || winning_price < 0.0 {
        return Err("negative winning price");
    }
    if cpm {
        winning_price /= 1000.0;
    }
    let converted = match fields[4].trim() {
        "0" => false,
        "1" => true,
        _ => return Err("bad converted flag"),
    };
    let feature_hash = fields.get(5).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
    Ok(BidRecord {
        timestamp_ms,
        campaign: CampaignId(campaign.to_string()),
        pcvr,
        winning_price,
        converted,
        feature_hash,
    })
}

/// Formats a price or pCVR with up to 6 fractional digits, trimming trailing
/// zeros, so that `write_log(parse_log(x))` is line-equivalent for
/// schema-conforming input.
fn format_decimal(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

/// Writes streams back to the log schema, merged by (timestamp, campaign id).
pub fn write_log<W: Write>(streams: &[CampaignStream], mut w: W) -> std::io::Result<()> {
    let mut rows: Vec<&BidRecord> = streams.iter().flat_map(|s| s.records.iter()).collect();
    rows.sort_by(|a, b| {
        a.timestamp_ms
            .cmp(&b.timestamp_ms)
            .then_with(|| a.campaign.cmp(&b.campaign))
    });
    for r in rows {
        match &r.feature_hash {
            Some(h) => writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.timestamp_ms,
                r.campaign,
                format_decimal(r.pcvr),
                format_decimal(r.winning_price),
                u8::from(r.converted),
                h
            )?,
            None => writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                r.timestamp_ms,
                r.campaign,
                format_decimal(r.pcvr),
                format_decimal(r.winning_price),
                u8::from(r.converted)
            )?,
        }
    }
    Ok(())
}

/// Generator parameters for one synthetic campaign. Drift entries are
/// piecewise-constant overrides applied from the given hour onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignGenSpec {
    pub id: CampaignId,
    pub cvr: CvrDistribution,
    pub market: WinningFunction,
    /// Explicit payoff; `None` defers to eCPA-derived payoffs downstream.
    pub payoff: Option<f64>,
    pub records_per_hour: u32,
    #[serde(default)]
    pub cvr_drift: Vec<(u32, CvrDistribution)>,
    #[serde(default)]
    pub market_drift: Vec<(u32, WinningFunction)>,
}

/// A seeded synthetic market: per-campaign CVR and market-price models over a
/// fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMarketSpec {
    pub campaigns: Vec<CampaignGenSpec>,
    pub horizon_hours: u32,
    pub seed: u64,
    /// Sampled prices are capped at `price_cap_factor * l`; the long-tail
    /// density has infinite mean without a cap.
    pub price_cap_factor: f64,
    /// Epoch milliseconds of hour 0.
    pub start_ms: i64,
}

impl SyntheticMarketSpec {
    pub fn new(campaigns: Vec<CampaignGenSpec>, horizon_hours: u32, seed: u64) -> Self {
        SyntheticMarketSpec {
            campaigns,
            horizon_hours,
            seed,
            price_cap_factor: 1000.0,
            start_ms: 0,
        }
    }
}

/// Generates per-campaign streams. Deterministic given the spec (including
/// its seed); conversions are Bernoulli draws of the sampled CVR.
pub fn generate_synthetic(spec: &SyntheticMarketSpec) -> Result<Vec<CampaignStream>> {
    if spec.price_cap_factor <= 1.0 {
        return Err(Error::invalid("price cap factor", "must exceed 1"));
    }
    let mut out = Vec::with_capacity(spec.campaigns.len());
    for (idx, c) in spec.campaigns.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, idx as u64));
        let mut records = Vec::with_capacity(spec.horizon_hours as usize * c.records_per_hour as usize);
        for hour in 0..spec.horizon_hours {
            let cvr = pick_asof(&c.cvr_drift, hour).unwrap_or(&c.cvr);
            let market = pick_asof(&c.market_drift, hour).unwrap_or(&c.market);
            let cap = spec.price_cap_factor * market.scale();
            let pdf = market.pdf();
            let hour_start = spec.start_ms + hour as i64 * MS_PER_HOUR;
            for _ in 0..c.records_per_hour {
                let offset: i64 = rng.gen_range(0..MS_PER_HOUR);
                let theta = cvr.sample(&mut rng).clamp(0.0, 1.0);
                let z = pdf.sample(&mut rng).min(cap);
                let converted = rng.gen_bool(theta);
                records.push(BidRecord {
                    timestamp_ms: hour_start + offset,
                    campaign: c.id.clone(),
                    pcvr: theta,
                    winning_price: z,
                    converted,
                    feature_hash: None,
                });
            }
        }
        records.sort_by_key(|r| r.timestamp_ms);
        out.push(CampaignStream { id: c.id.clone(), records });
    }
    Ok(out)
}

fn pick_asof<T>(drift: &[(u32, T)], hour: u32) -> Option<&T> {
    drift
        .iter()
        .filter(|(from, _)| *from <= hour)
        .max_by_key(|(from, _)| *from)
        .map(|(_, v)| v)
}

/// Train/test split rule. Boundary records go to test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Per campaign, the records within the last `k` days of that campaign's
    /// final record form the test slice.
    LastDays(u32),
    /// Global cut: train strictly before the timestamp, test at or after.
    AtTimestamp(i64),
}

/// Splits every stream into disjoint, exhaustive train/test slices.
pub fn split_train_test(
    streams: &[CampaignStream],
    rule: SplitRule,
) -> Result<(Vec<CampaignStream>, Vec<CampaignStream>)> {
    if streams.is_empty() {
        return Err(Error::EmptyInput { what: "streams" });
    }
    let mut train = Vec::with_capacity(streams.len());
    let mut test = Vec::with_capacity(streams.len());
    for s in streams {
        if s.records.is_empty() {
            return Err(Error::EmptySplit {
                campaign: s.id.to_string(),
                side: "input",
            });
        }
        let cut = match rule {
            SplitRule::LastDays(k) => {
                let max_ts = s.records.last().expect("nonempty").timestamp_ms;
                max_ts - k as i64 * MS_PER_DAY
            }
            SplitRule::AtTimestamp(t) => t,
        };
        let split_at = s.records.partition_point(|r| r.timestamp_ms < cut);
        let (tr, te) = s.records.split_at(split_at);
        if tr.is_empty() {
            return Err(Error::EmptySplit {
                campaign: s.id.to_string(),
                side: "train",
            });
        }
        if te.is_empty() {
            return Err(Error::EmptySplit {
                campaign: s.id.to_string(),
                side: "test",
            });
        }
        train.push(CampaignStream { id: s.id.clone(), records: tr.to_vec() });
        test.push(CampaignStream { id: s.id.clone(), records: te.to_vec() });
    }
    Ok((train, test))
}

/// A fully prepared campaign: payoff contract, fitted distributions, and its
/// training/test log slices.
#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub id: CampaignId,
    /// CPA payoff per conversion.
    pub payoff: f64,
    pub cvr: CvrDistribution,
    /// Realized cost per conversion over the training slice, when defined.
    pub ecpa: Option<f64>,
    /// Per-campaign winning-function fit; `None` falls back to the global
    /// model chosen by the caller.
    pub win: Option<WinningFunction>,
    pub train: Vec<BidRecord>,
    pub test: Vec<BidRecord>,
    train_thetas: Vec<f64>,
}

/// Which market model to fit from a campaign's training prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WinFit {
    LongTail,
    Uniform,
    None,
}

impl CampaignSpec {
    pub fn new(
        id: CampaignId,
        train: Vec<BidRecord>,
        test: Vec<BidRecord>,
        payoff: f64,
        cvr: CvrDistribution,
        win: Option<WinningFunction>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySplit { campaign: id.to_string(), side: "train" });
        }
        if !payoff.is_finite() || payoff < 0.0 {
            return Err(Error::invalid("payoff", format!("must be nonnegative, got {payoff}")));
        }
        let train_thetas: Vec<f64> = train.iter().map(|r| r.pcvr).collect();
        let cost: f64 = train.iter().map(|r| r.winning_price).sum();
        let convs = train.iter().filter(|r| r.converted).count() as f64;
        let ecpa = (convs > 0.0).then(|| cost / convs);
        Ok(CampaignSpec { id, payoff, cvr, ecpa, win, train, test, train_thetas })
    }

    /// Builds a campaign from log slices, fitting the CVR histogram and the
    /// requested market model from the training data.
    pub fn from_logs(
        id: CampaignId,
        train: Vec<BidRecord>,
        test: Vec<BidRecord>,
        payoff: f64,
        cvr_bins: usize,
        fit: WinFit,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySplit { campaign: id.to_string(), side: "train" });
        }
        let thetas: Vec<f64> = train.iter().map(|r| r.pcvr).collect();
        let cvr = CvrDistribution::fit_empirical(&thetas, cvr_bins)?;
        let prices: Vec<f64> = train.iter().map(|r| r.winning_price).collect();
        let win = match fit {
            WinFit::LongTail => Some(WinningFunction::long_tail(fit_long_tail_l(&prices)?)?),
            WinFit::Uniform => Some(WinningFunction::uniform(fit_uniform_l(&prices)?)?),
            WinFit::None => None,
        };
        Self::new(id, train, test, payoff, cvr, win)
    }

    pub fn train_thetas(&self) -> &[f64] {
        &self.train_thetas
    }

    pub fn train_cost(&self) -> f64 {
        self.train.iter().map(|r| r.winning_price).sum()
    }

    pub fn train_conversions(&self) -> u64 {
        self.train.iter().filter(|r| r.converted).count() as u64
    }

    /// Empirical second moment of the training CVRs.
    pub fn train_phi(&self) -> f64 {
        if self.train_thetas.is_empty() {
            return 0.0;
        }
        self.train_thetas.iter().map(|t| t * t).sum::<f64>() / self.train_thetas.len() as f64
    }

    /// Mean training CVR.
    pub fn train_mean_theta(&self) -> f64 {
        if self.train_thetas.is_empty() {
            return 0.0;
        }
        self.train_thetas.iter().sum::<f64>() / self.train_thetas.len() as f64
    }
}
