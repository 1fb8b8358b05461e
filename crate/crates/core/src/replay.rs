//! Second-price auction replay over logged or synthetic bid streams, with
//! budget accounting, budget sweeps, and periodically re-trained dynamic
//! rounds.
//!
//! Replay protocol: sample a campaign from the selection vector, pass that
//! campaign's next test record to the bid agent, and settle a second-price
//! auction against the logged winning price. The test ends when a sampled
//! stream is exhausted. An auction is entered only when the remaining budget
//! covers the bid price (the maximal possible charge); a bid at the logged
//! price wins and pays it.
//!
//! Money is settled in integer nano-currency so that `cost <= budget` and the
//! per-campaign accounting identities hold exactly.

use crate::bidding::BidFunction;
use crate::data::{BidRecord, CampaignId, CampaignSpec, CampaignStream, WinFit, MS_PER_HOUR};
use crate::engine::{run_em, EmConfig, SamSolution};
use crate::error::{Error, Result};
use crate::market::WinningFunction;
use crate::numeric::derive_seed;
use crate::portfolio::SelectionVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const NANOS_PER_UNIT: f64 = 1e9;

fn to_nanos(x: f64) -> i128 {
    (x * NANOS_PER_UNIT).round() as i128
}

fn to_currency(n: i128) -> f64 {
    n as f64 / NANOS_PER_UNIT
}

/// How each campaign's CPA payoff is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PayoffMode {
    /// `0.8 * eCPA`: generous contracts, easy arbitrage.
    Easy,
    /// `0.2 * eCPA`: tight contracts, hard arbitrage.
    Hard,
    /// Caller-provided payoffs, one per campaign.
    Explicit { values: Vec<f64> },
}

/// Derives per-campaign payoffs from training logs:
/// `eCPA_i = training cost / training conversions`, scaled by the mode.
pub fn derive_payoffs(train: &[CampaignStream], mode: &PayoffMode) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptyInput { what: "training streams" });
    }
    match mode {
        PayoffMode::Explicit { values } => {
            if values.len() != train.len() {
                return Err(Error::DimensionMismatch {
                    left: values.len(),
                    right: train.len(),
                    context: "explicit payoffs vs campaigns",
                });
            }
            Ok(values.clone())
        }
        PayoffMode::Easy | PayoffMode::Hard => {
            let factor = if matches!(mode, PayoffMode::Easy) { 0.8 } else { 0.2 };
            train
                .iter()
                .map(|s| {
                    let convs = s.conversions();
                    if convs == 0 {
                        return Err(Error::ZeroConversions { campaign: s.id.to_string() });
                    }
                    Ok(factor * s.total_cost() / convs as f64)
                })
                .collect()
        }
    }
}

/// Piecewise-constant multiplier applied to logged winning prices, keyed by
/// hours since replay start. Stands in for full competitor modelling: it
/// shifts the market against the agent without simulating other bidders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationSchedule {
    /// (from_hour, factor), sorted by hour. Factor 1.0 before the first entry.
    pub points: Vec<(f64, f64)>,
}

impl InflationSchedule {
    pub fn constant(factor: f64) -> Self {
        InflationSchedule { points: vec![(0.0, factor)] }
    }

    fn factor_at(&self, hours: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(from, _)| *from <= hours)
            .last()
            .map(|(_, f)| *f)
            .unwrap_or(1.0)
    }
}

/// Inputs for one replay run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub budget: f64,
    /// Set when the budget was derived as `test-log cost / divisor`.
    pub budget_divisor: Option<u32>,
    pub seed: u64,
    pub market_inflation: Option<InflationSchedule>,
    /// Record a per-auction trace for accounting audits.
    pub record_trace: bool,
}

impl ReplayConfig {
    pub fn with_budget(budget: f64, seed: u64) -> Self {
        ReplayConfig {
            budget,
            budget_divisor: None,
            seed,
            market_inflation: None,
            record_trace: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.budget.is_finite() || self.budget <= 0.0 {
            return Err(Error::invalid("budget", "must be positive"));
        }
        if let Some(d) = self.budget_divisor {
            validate_divisor(d)?;
        }
        Ok(())
    }
}

fn validate_divisor(d: u32) -> Result<()> {
    if !(2..=256).contains(&d) || d.count_ones() != 1 {
        return Err(Error::invalid(
            "budget divisor",
            format!("must be a power of two in [2, 256], got {d}"),
        ));
    }
    Ok(())
}

/// One auction in the optional replay trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionTrace {
    pub auction: u64,
    pub campaign: CampaignId,
    pub timestamp_ms: i64,
    pub theta: f64,
    pub bid: f64,
    /// Winning price after inflation.
    pub price: f64,
    pub gated: bool,
    pub won: bool,
    pub paid: f64,
    pub converted: bool,
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTotals {
    pub id: CampaignId,
    pub auctions: u64,
    pub bids: u64,
    pub wins: u64,
    pub conversions: u64,
    pub cost: f64,
    pub profit: f64,
    pub gated: u64,
}

/// Hourly accounting bucket (absolute hour = timestamp / 1h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub hour: i64,
    pub bids: u64,
    pub wins: u64,
    pub conversions: u64,
    pub cost: f64,
    pub profit: f64,
}

/// Accounting for one replay: totals, per-campaign breakdown, hourly series.
///
/// All currency fields are exact multiples of one nano-unit; accounting
/// identities (cost <= budget, per-campaign costs summing to the total) hold
/// exactly at that resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub auctions: u64,
    pub bids: u64,
    pub wins: u64,
    pub conversions: u64,
    pub cost: f64,
    pub profit: f64,
    /// `profit / cost`; `None` (flagged undefined) when cost is zero.
    pub margin: Option<f64>,
    pub budget: f64,
    pub budget_remaining: f64,
    pub per_campaign: Vec<CampaignTotals>,
    pub buckets: Vec<BucketRow>,
    pub skipped_records: u64,
    pub gated: u64,
    pub trace: Option<Vec<AuctionTrace>>,
}

#[derive(Default, Clone)]
struct Tally {
    auctions: u64,
    bids: u64,
    wins: u64,
    conversions: u64,
    cost_nanos: i128,
    gated: u64,
}

#[derive(Default, Clone)]
struct BucketTally {
    bids: u64,
    wins: u64,
    conversions: u64,
    cost_nanos: i128,
    profit_nanos: i128,
}

/// Replays ordered per-campaign streams under one strategy per campaign.
///
/// Deterministic given (records, strategy parameters, seed). Malformed
/// records are counted and skipped.
pub fn replay(
    streams: &[CampaignStream],
    strategies: &[BidFunction],
    payoffs: &[f64],
    v: &SelectionVector,
    cfg: &ReplayConfig,
) -> Result<ReplayReport> {
    cfg.validate()?;
    let m = streams.len();
    if m == 0 {
        return Err(Error::EmptyInput { what: "test streams" });
    }
    if strategies.len() != m || payoffs.len() != m || v.len() != m {
        return Err(Error::DimensionMismatch {
            left: strategies.len().max(payoffs.len()).max(v.len()),
            right: m,
            context: "strategies/payoffs/selection vs streams",
        });
    }
    if streams.iter().all(|s| s.records.is_empty()) {
        return Err(Error::EmptyInput { what: "test records" });
    }

    let payoff_nanos: Vec<i128> = payoffs.iter().map(|r| to_nanos(*r)).collect();
    let start_ms = streams
        .iter()
        .filter_map(|s| s.records.first().map(|r| r.timestamp_ms))
        .min()
        .expect("nonempty stream exists");

    let budget_nanos = to_nanos(cfg.budget);
    let mut remaining = budget_nanos;
    let mut cursors = vec![0usize; m];
    let mut tallies = vec![Tally::default(); m];
    let mut buckets: BTreeMap<i64, BucketTally> = BTreeMap::new();
    let mut skipped = 0u64;
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = v.as_slice();
    let mut auction_index = 0u64;

    loop {
        // Sample a campaign by inverse CDF; one uniform draw per round.
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = m - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let cursor = cursors[chosen];
        if cursor >= streams[chosen].records.len() {
            break; // the sampled campaign ran out of bid requests
        }
        cursors[chosen] += 1;
        let rec: &BidRecord = &streams[chosen].records[cursor];
        let tally = &mut tallies[chosen];
        tally.auctions += 1;
        let index = auction_index;
        auction_index += 1;

        if !rec.pcvr.is_finite()
            || !(0.0..=1.0).contains(&rec.pcvr)
            || !rec.winning_price.is_finite()
            || rec.winning_price < 0.0
        {
            skipped += 1;
            continue;
        }

        let factor = cfg
            .market_inflation
            .as_ref()
            .map(|s| s.factor_at((rec.timestamp_ms - start_ms) as f64 / MS_PER_HOUR as f64))
            .unwrap_or(1.0);
        let price_nanos = to_nanos(rec.winning_price * factor);

        let (bid_value, bid_nanos) = if matches!(strategies[chosen], BidFunction::AllIn) {
            (to_currency(remaining), remaining)
        } else {
            let b = strategies[chosen].bid(rec.pcvr, payoffs[chosen], index)?;
            (b, to_nanos(b))
        };

        // Enter the auction only if the full bid is affordable.
        if bid_nanos > remaining {
            tally.gated += 1;
            if let Some(t) = trace.as_mut() {
                t.push(AuctionTrace {
                    auction: index,
                    campaign: rec.campaign.clone(),
                    timestamp_ms: rec.timestamp_ms,
                    theta: rec.pcvr,
                    bid: bid_value,
                    price: to_currency(price_nanos),
                    gated: true,
                    won: false,
                    paid: 0.0,
                    converted: rec.converted,
                    payoff: payoffs[chosen],
                });
            }
            continue;
        }

        tally.bids += 1;
        let won = bid_nanos >= price_nanos;
        let mut paid = 0i128;
        let bucket = buckets.entry(rec.timestamp_ms.div_euclid(MS_PER_HOUR)).or_default();
        bucket.bids += 1;
        if won {
            paid = price_nanos;
            remaining -= paid;
            tally.wins += 1;
            tally.cost_nanos += paid;
            bucket.wins += 1;
            bucket.cost_nanos += paid;
            bucket.profit_nanos -= paid;
            if rec.converted {
                tally.conversions += 1;
                bucket.conversions += 1;
                bucket.profit_nanos += payoff_nanos[chosen];
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(AuctionTrace {
                auction: index,
                campaign: rec.campaign.clone(),
                timestamp_ms: rec.timestamp_ms,
                theta: rec.pcvr,
                bid: bid_value,
                price: to_currency(price_nanos),
                gated: false,
                won,
                paid: to_currency(paid),
                converted: rec.converted,
                payoff: payoffs[chosen],
            });
        }
    }

    let mut per_campaign = Vec::with_capacity(m);
    let mut total_cost: i128 = 0;
    let mut total_profit: i128 = 0;
    let (mut auctions, mut bids, mut wins, mut conversions, mut gated) = (0, 0, 0, 0, 0);
    for (i, t) in tallies.iter().enumerate() {
        let profit_nanos = t.conversions as i128 * payoff_nanos[i] - t.cost_nanos;
        total_cost += t.cost_nanos;
        total_profit += profit_nanos;
        auctions += t.auctions;
        bids += t.bids;
        wins += t.wins;
        conversions += t.conversions;
        gated += t.gated;
        per_campaign.push(CampaignTotals {
            id: streams[i].id.clone(),
            auctions: t.auctions,
            bids: t.bids,
            wins: t.wins,
            conversions: t.conversions,
            cost: to_currency(t.cost_nanos),
            profit: to_currency(profit_nanos),
            gated: t.gated,
        });
    }
    debug_assert_eq!(budget_nanos - total_cost, remaining);

    Ok(ReplayReport {
        auctions,
        bids,
        wins,
        conversions,
        cost: to_currency(total_cost),
        profit: to_currency(total_profit),
        margin: (total_cost > 0).then(|| total_profit as f64 / total_cost as f64),
        budget: to_currency(budget_nanos),
        budget_remaining: to_currency(remaining),
        per_campaign,
        buckets: buckets
            .into_iter()
            .map(|(hour, b)| BucketRow {
                hour,
                bids: b.bids,
                wins: b.wins,
                conversions: b.conversions,
                cost: to_currency(b.cost_nanos),
                profit: to_currency(b.profit_nanos),
            })
            .collect(),
        skipped_records: skipped,
        gated,
        trace,
    })
}

/// One named strategy entering a budget sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub label: String,
    pub selection_label: String,
    pub strategies: Vec<BidFunction>,
    pub v: SelectionVector,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub selection_label: String,
    pub divisor: u32,
    pub report: ReplayReport,
}

/// Total logged cost of the streams (the budget base for sweeps).
pub fn total_log_cost(streams: &[CampaignStream]) -> f64 {
    let nanos: i128 = streams
        .iter()
        .flat_map(|s| s.records.iter())
        .map(|r| to_nanos(r.winning_price))
        .sum();
    to_currency(nanos)
}

/// Replays every (strategy, divisor) pair with budget
/// `test-log cost / divisor`. Rows come back ordered by entry then divisor;
/// independent replays run in parallel.
pub fn budget_sweep(
    streams: &[CampaignStream],
    entries: &[SweepEntry],
    payoffs: &[f64],
    divisors: &[u32],
    base: &ReplayConfig,
) -> Result<Vec<SweepRow>> {
    if entries.is_empty() {
        return Err(Error::EmptyInput { what: "sweep entries" });
    }
    if streams.iter().all(|s| s.records.is_empty()) {
        return Err(Error::EmptyInput { what: "test records" });
    }
    for &d in divisors {
        validate_divisor(d)?;
    }
    let total_nanos = to_nanos(total_log_cost(streams));
    let mut jobs = Vec::new();
    for entry in entries {
        for &d in divisors {
            jobs.push((entry, d));
        }
    }
    jobs.par_iter()
        .map(|(entry, d)| {
            let cfg = ReplayConfig {
                budget: to_currency(total_nanos / *d as i128),
                budget_divisor: Some(*d),
                ..base.clone()
            };
            let report = replay(streams, &entry.strategies, payoffs, &entry.v, &cfg)?;
            Ok(SweepRow {
                label: entry.label.clone(),
                selection_label: entry.selection_label.clone(),
                divisor: *d,
                report,
            })
        })
        .collect()
}

/// Timing of dynamic re-training rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub horizon_hours: u32,
    pub period_hours: u32,
}

impl RoundSchedule {
    pub fn rounds(&self) -> usize {
        (self.horizon_hours as usize).div_ceil(self.period_hours as usize)
    }

    fn validate(&self) -> Result<()> {
        if self.period_hours == 0 || self.horizon_hours == 0 {
            return Err(Error::invalid("round schedule", "period and horizon must be positive"));
        }
        if self.period_hours > self.horizon_hours {
            return Err(Error::invalid("round schedule", "period exceeds horizon"));
        }
        Ok(())
    }
}

/// Outcome of one dynamic round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub start_hour: i64,
    pub hours: u32,
    /// Budget available this round (allocation plus carried underspend).
    pub budget: f64,
    pub skipped: bool,
    /// False when retraining failed and the previous solution was reused.
    pub retrained: bool,
    pub solution: Option<SamSolution>,
    pub report: Option<ReplayReport>,
}

/// Dynamic multi-campaign arbitrage: re-train per round on the bidding data
/// collected in the previous round (round 1 uses the provided training
/// slices), replay the round's records, and carry unspent budget forward.
pub fn run_dynamic(
    campaigns: &[CampaignSpec],
    global_win: &WinningFunction,
    family: crate::bidding::SamFamily,
    schedule: &RoundSchedule,
    em_template: &EmConfig,
    cfg: &ReplayConfig,
) -> Result<Vec<RoundOutcome>> {
    schedule.validate()?;
    cfg.validate()?;
    if campaigns.is_empty() {
        return Err(Error::EmptyInput { what: "campaigns" });
    }
    let t0 = campaigns
        .iter()
        .filter_map(|c| c.test.first().map(|r| r.timestamp_ms))
        .min()
        .ok_or(Error::EmptyInput { what: "test records" })?;

    let total_budget_nanos = to_nanos(cfg.budget);
    let n_rounds = schedule.rounds();
    let mut outcomes = Vec::with_capacity(n_rounds);
    let mut carry: i128 = 0;
    let mut specs: Vec<CampaignSpec> = campaigns.to_vec();
    let mut prev_solution: Option<SamSolution> = None;
    let mut prev_window_count: Option<usize> = None;

    for round in 0..n_rounds {
        let start_h = round as u32 * schedule.period_hours;
        let end_h = (start_h + schedule.period_hours).min(schedule.horizon_hours);
        let hours = end_h - start_h;
        let w_start = t0 + start_h as i64 * MS_PER_HOUR;
        let w_end = t0 + end_h as i64 * MS_PER_HOUR;

        let windows: Vec<Vec<BidRecord>> = campaigns
            .iter()
            .map(|c| {
                let lo = c.test.partition_point(|r| r.timestamp_ms < w_start);
                let hi = c.test.partition_point(|r| r.timestamp_ms < w_end);
                c.test[lo..hi].to_vec()
            })
            .collect();
        let window_total: usize = windows.iter().map(Vec::len).sum();
        let allocation =
            total_budget_nanos * hours as i128 / schedule.horizon_hours as i128;

        if window_total == 0 {
            carry += allocation;
            outcomes.push(RoundOutcome {
                round,
                start_hour: w_start.div_euclid(MS_PER_HOUR),
                hours,
                budget: to_currency(allocation),
                skipped: true,
                retrained: false,
                solution: None,
                report: None,
            });
            continue;
        }

        let round_budget = allocation + carry;
        // Volume forecast: the previous round's arrival count, scaled to this
        // round's length; round 1 extrapolates from the training slices.
        let volume = match prev_window_count {
            Some(n) => (n.max(1) as f64 * hours as f64 / schedule.period_hours as f64) as usize,
            None => {
                let train_records: usize = specs.iter().map(|c| c.train.len()).sum();
                let span_ms: i64 = specs
                    .iter()
                    .filter_map(|c| {
                        Some(c.train.last()?.timestamp_ms - c.train.first()?.timestamp_ms)
                    })
                    .max()
                    .unwrap_or(MS_PER_HOUR);
                let span_h = (span_ms as f64 / MS_PER_HOUR as f64).max(1.0);
                (train_records as f64 * hours as f64 / span_h) as usize
            }
        }
        .max(1);

        let mut em_cfg = em_template.clone();
        em_cfg.budget = to_currency(round_budget);
        em_cfg.volume = volume;
        em_cfg.seed = derive_seed(em_template.seed, round as u64);

        let (solution, retrained) = match run_em(&specs, global_win, family, &em_cfg) {
            Ok(s) => (s, true),
            Err(e) => match prev_solution.clone() {
                Some(s) => (s, false),
                None => return Err(e),
            },
        };

        let round_streams: Vec<CampaignStream> = campaigns
            .iter()
            .zip(&windows)
            .map(|(c, w)| CampaignStream { id: c.id.clone(), records: w.clone() })
            .collect();
        let payoffs: Vec<f64> = specs.iter().map(|c| c.payoff).collect();
        let round_cfg = ReplayConfig {
            budget: to_currency(round_budget),
            budget_divisor: None,
            seed: derive_seed(cfg.seed, round as u64),
            market_inflation: cfg.market_inflation.clone(),
            record_trace: cfg.record_trace,
        };
        let report = replay(
            &round_streams,
            &solution.bids,
            &payoffs,
            &solution.v,
            &round_cfg,
        )?;
        carry = to_nanos(report.budget_remaining);

        // Next round trains on the data collected in this round; campaigns
        // with no data this round keep their previous fit.
        specs = specs
            .iter()
            .zip(&windows)
            .map(|(spec, w)| {
                if w.is_empty() {
                    Ok(spec.clone())
                } else {
                    CampaignSpec::from_logs(
                        spec.id.clone(),
                        w.clone(),
                        Vec::new(),
                        spec.payoff,
                        100,
                        match global_win {
                            WinningFunction::LongTail { .. } => WinFit::LongTail,
                            WinningFunction::UniformMarket { .. } => WinFit::Uniform,
                        },
                    )
                }
            })
            .collect::<Result<Vec<_>>>()?;
        prev_window_count = Some(window_total);
        prev_solution = Some(solution.clone());

        outcomes.push(RoundOutcome {
            round,
            start_hour: w_start.div_euclid(MS_PER_HOUR),
            hours,
            budget: to_currency(round_budget),
            skipped: false,
            retrained,
            solution: Some(solution),
            report: Some(report),
        });
    }
    Ok(outcomes)
}
