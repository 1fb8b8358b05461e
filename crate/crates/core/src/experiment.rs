//! End-to-end experiment driver: load or generate data, split, derive
//! payoffs, fit market models, train strategies, replay, and emit artifacts.

use crate::bidding::{BidFunction, SamFamily};
use crate::config::ExperimentConfig;
use crate::data::{
    generate_synthetic, parse_log, split_train_test, CampaignId, CampaignSpec, CampaignStream,
    ParseOptions, WinFit, MS_PER_HOUR,
};
use crate::engine::{run_em, select_once, EmConfig, SamSolution, SelectionScheme};
use crate::error::{Error, Result};
use crate::market::{fit_long_tail_l, fit_uniform_l, WinningFunction};
use crate::numeric::derive_seed;
use crate::portfolio::{
    estimate_margin_mc, optimize_selection, portfolio_stats, MarginEstimate, PortfolioModel,
    SelectionVector,
};
use crate::replay::{
    derive_payoffs, replay, run_dynamic, total_log_cost, PayoffMode, ReplayConfig, ReplayReport,
    RoundOutcome, RoundSchedule,
};
use crate::report::{
    format_frontier_csv, format_report_csv, format_rounds_csv, format_trace_csv, write_file,
    write_json, EmRunRecord, FrontierRow, ReportRow, RunMeta, TaggedTrace,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

const TUNE_SEED_STREAM: u64 = 0x54554e45;
const RAND_SEED_STREAM: u64 = 0x52414e44;

/// Everything derived from the data before any strategy runs.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub campaigns: Vec<CampaignSpec>,
    pub train_streams: Vec<CampaignStream>,
    pub test_streams: Vec<CampaignStream>,
    pub payoffs: Vec<f64>,
    pub payoff_label: String,
    pub global_win: WinningFunction,
    pub em_volume: usize,
    pub test_total_cost: f64,
    pub train_total_cost: f64,
}

impl PreparedExperiment {
    pub fn campaign_ids(&self) -> Vec<CampaignId> {
        self.campaigns.iter().map(|c| c.id.clone()).collect()
    }
}

/// Loads (or generates) the data, splits it, derives payoffs, and fits the
/// market models.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    let streams = match cfg.data.source.as_str() {
        "log" => {
            let path = cfg.data.log_path.as_ref().expect("validated");
            let opts = ParseOptions { cpm_prices: cfg.data.cpm, has_header: None };
            let (streams, _stats) = parse_log(Path::new(path), &opts)?;
            streams
        }
        _ => generate_synthetic(&cfg.synthetic_spec()?)?,
    };
    let (train_streams, test_streams) = split_train_test(&streams, cfg.split_rule())?;

    let payoff_mode = match cfg.payoff.mode.as_str() {
        "easy" => PayoffMode::Easy,
        "hard" => PayoffMode::Hard,
        _ => {
            let values = train_streams
                .iter()
                .map(|s| {
                    if let Some(v) = cfg.payoff.explicit.get(&s.id.0) {
                        return Ok(*v);
                    }
                    if let Some(synth) = &cfg.synthetic {
                        if let Some(c) = synth.campaigns.iter().find(|c| c.id == s.id.0) {
                            if let Some(p) = c.payoff {
                                return Ok(p);
                            }
                        }
                    }
                    Err(Error::config(
                        format!("payoff.explicit.{}", s.id),
                        "explicit payoff mode needs a value for every campaign",
                    ))
                })
                .collect::<Result<Vec<f64>>>()?;
            PayoffMode::Explicit { values }
        }
    };
    let payoffs = derive_payoffs(&train_streams, &payoff_mode)?;

    let pooled: Vec<f64> = train_streams
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.winning_price))
        .collect();
    let fit = match cfg.data.market.as_str() {
        "uniform" => WinFit::Uniform,
        _ => WinFit::LongTail,
    };
    let global_win = match fit {
        WinFit::Uniform => WinningFunction::uniform(fit_uniform_l(&pooled)?)?,
        _ => WinningFunction::long_tail(fit_long_tail_l(&pooled)?)?,
    };

    let per_campaign_fit = if cfg.data.per_campaign_market { fit } else { WinFit::None };
    let campaigns: Vec<CampaignSpec> = train_streams
        .iter()
        .zip(&test_streams)
        .zip(&payoffs)
        .map(|((tr, te), &payoff)| {
            CampaignSpec::from_logs(
                tr.id.clone(),
                tr.records.clone(),
                te.records.clone(),
                payoff,
                cfg.data.cvr_bins,
                per_campaign_fit,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let test_records: usize = test_streams.iter().map(|s| s.records.len()).sum();
    Ok(PreparedExperiment {
        em_volume: cfg.em.volume.unwrap_or(test_records),
        test_total_cost: total_log_cost(&test_streams),
        train_total_cost: total_log_cost(&train_streams),
        payoff_label: cfg.payoff.mode.clone(),
        campaigns,
        train_streams,
        test_streams,
        payoffs,
        global_win,
    })
}

fn selection_scheme(cfg: &ExperimentConfig, name: &str) -> SelectionScheme {
    match name {
        "greedy" => SelectionScheme::Greedy,
        "portfolio" => SelectionScheme::Portfolio { alpha: cfg.portfolio.alpha },
        _ => SelectionScheme::Uniform,
    }
}

fn em_config(cfg: &ExperimentConfig, prepared: &PreparedExperiment, budget: f64, scheme: SelectionScheme) -> Result<EmConfig> {
    Ok(EmConfig {
        max_iters: cfg.em.max_iters,
        tol_v: cfg.em.tol_v,
        tol_lambda: cfg.em.tol_lambda,
        selection: scheme,
        budget,
        volume: prepared.em_volume,
        mc_reps: cfg.em.mc_reps,
        seed: cfg.seed,
        lambda: cfg.lambda_config()?,
        per_campaign_win: cfg.data.per_campaign_market,
    })
}

/// Log-spaced parameter candidates scaled to the mean training price.
fn tuning_targets(cfg: &ExperimentConfig, mean_price: f64) -> Vec<f64> {
    let n = cfg.tuning.grid_points.max(1);
    let lo = (cfg.tuning.lo_factor * mean_price).max(1e-12);
    let hi = (cfg.tuning.hi_factor * mean_price).max(lo * (1.0 + 1e-9));
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            lo * (hi / lo).powf(t)
        })
        .collect()
}

/// Builds the per-campaign bid functions for one baseline candidate.
fn candidate_bids(
    strategy: &str,
    target: f64,
    campaigns: &[CampaignSpec],
    wins: &[WinningFunction],
    seed: u64,
) -> Vec<BidFunction> {
    campaigns
        .iter()
        .zip(wins)
        .map(|(c, w)| match strategy {
            "const" => BidFunction::Const { bid: target },
            "rand" => BidFunction::Rand {
                lo: 0.0,
                hi: 2.0 * target,
                seed: derive_seed(seed, RAND_SEED_STREAM),
            },
            "lin" => BidFunction::Lin {
                base: target,
                avg_theta: c.train_mean_theta().max(1e-12),
            },
            _ => {
                // ortb: c is the fitted price scale; the multiplier is set so
                // the bid at the campaign's mean CVR equals the target.
                let scale = w.scale();
                let theta_bar = c.train_mean_theta();
                let lambda =
                    (scale * theta_bar / (target * target + 2.0 * target * scale)).max(1e-12);
                BidFunction::Ortb { c: scale, lambda }
            }
        })
        .collect()
}

/// Sweeps a baseline's scale parameter over the tuning grid and keeps the
/// candidate with the best training-replay net profit.
fn tune_baseline(
    cfg: &ExperimentConfig,
    prepared: &PreparedExperiment,
    wins: &[WinningFunction],
    strategy: &str,
    divisor: u32,
) -> Result<Vec<BidFunction>> {
    let pooled_n: usize = prepared.train_streams.iter().map(|s| s.records.len()).sum();
    let mean_price = prepared.train_total_cost / pooled_n.max(1) as f64;
    let targets = tuning_targets(cfg, mean_price);
    let budget = prepared.train_total_cost / divisor as f64;
    let v = SelectionVector::uniform(prepared.campaigns.len())?;
    let tune_cfg = ReplayConfig {
        budget,
        budget_divisor: None,
        seed: derive_seed(cfg.seed, TUNE_SEED_STREAM),
        market_inflation: None,
        record_trace: false,
    };

    let scored: Vec<(usize, f64, Vec<BidFunction>)> = targets
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let bids = candidate_bids(strategy, t, &prepared.campaigns, wins, cfg.seed);
            let report = replay(
                &prepared.train_streams,
                &bids,
                &prepared.payoffs,
                &v,
                &tune_cfg,
            )?;
            Ok((i, report.profit, bids))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scored
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
        .expect("at least one candidate");
    Ok(best.2)
}

/// A trained strategy ready to replay: per-campaign bid functions, the
/// selection vector, and the EM solution when one was run.
#[derive(Debug, Clone)]
pub struct ResolvedStrategy {
    pub bids: Vec<BidFunction>,
    pub v: SelectionVector,
    pub em: Option<SamSolution>,
}

/// Trains one (strategy, selection) pair at the given budget.
pub fn resolve_strategy(
    cfg: &ExperimentConfig,
    prepared: &PreparedExperiment,
    campaigns: &[CampaignSpec],
    tuned: Option<&Vec<BidFunction>>,
    strategy: &str,
    selection: &str,
    budget: f64,
) -> Result<ResolvedStrategy> {
    let scheme = selection_scheme(cfg, selection);
    let wins = crate::engine::resolve_wins(campaigns, &prepared.global_win, cfg.data.per_campaign_market);
    match strategy {
        "sam1" | "sam2" => {
            let family = if strategy == "sam1" { SamFamily::Sam1 } else { SamFamily::Sam2 };
            let em_cfg = em_config(cfg, prepared, budget, scheme)?;
            let sol = run_em(campaigns, &prepared.global_win, family, &em_cfg)?;
            Ok(ResolvedStrategy { bids: sol.bids.clone(), v: sol.v.clone(), em: Some(sol) })
        }
        "truth" => {
            let bids = vec![BidFunction::Truth; campaigns.len()];
            let v = select_once(campaigns, &bids, &wins, scheme, prepared.em_volume, cfg.em.mc_reps, cfg.seed)?;
            Ok(ResolvedStrategy { bids, v, em: None })
        }
        _ => {
            let bids = tuned
                .cloned()
                .ok_or_else(|| Error::invalid("tuned strategy", format!("no tuned parameters for {strategy}")))?;
            let v = select_once(campaigns, &bids, &wins, scheme, prepared.em_volume, cfg.em.mc_reps, cfg.seed)?;
            Ok(ResolvedStrategy { bids, v, em: None })
        }
    }
}

/// Full experiment output prior to artifact emission.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub campaign_ids: Vec<CampaignId>,
    pub rows: Vec<ReportRow>,
    pub em_runs: Vec<EmRunRecord>,
    pub rounds: Vec<RoundOutcome>,
    pub traces: Vec<TaggedTrace>,
    /// Set when a later stage failed after earlier results were computed.
    pub partial_error: Option<String>,
}

fn em_record(
    strategy: &str,
    selection: &str,
    payoff: &str,
    divisor: u32,
    ids: &[CampaignId],
    sol: &SamSolution,
) -> EmRunRecord {
    EmRunRecord {
        strategy: strategy.to_string(),
        selection: selection.to_string(),
        payoff: payoff.to_string(),
        divisor,
        campaign_ids: ids.iter().map(|i| i.to_string()).collect(),
        lambda: sol.lambda,
        objective: sol.objective,
        converged: sol.converged,
        iterations: sol.iterations,
        frozen: sol.frozen.clone(),
        under_spend: sol.lambda_info.under_spend,
        iterations_trace: sol.trace.clone(),
    }
}

/// Runs the configured sweep (and dynamic rounds, when configured).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prepared = prepare(cfg)?;
    let ids = prepared.campaign_ids();
    let m = prepared.campaigns.len();
    let wins =
        crate::engine::resolve_wins(&prepared.campaigns, &prepared.global_win, cfg.data.per_campaign_market);

    let mut rows = Vec::new();
    let mut em_runs = Vec::new();
    let mut traces = Vec::new();

    // Baseline parameters are tuned per (strategy, divisor) on the training
    // replay and shared across selection schemes.
    let mut tuned: BTreeMap<(String, u32), Vec<BidFunction>> = BTreeMap::new();
    for strategy in &cfg.run.strategies {
        if matches!(strategy.as_str(), "const" | "rand" | "lin" | "ortb") {
            for &d in &cfg.run.divisors {
                let bids = tune_baseline(cfg, &prepared, &wins, strategy, d)?;
                tuned.insert((strategy.clone(), d), bids);
            }
        }
    }

    for &divisor in &cfg.run.divisors {
        let budget = prepared.test_total_cost / divisor as f64;
        for selection in &cfg.run.selections {
            for strategy in &cfg.run.strategies {
                let replay_cfg = ReplayConfig {
                    budget,
                    budget_divisor: Some(divisor),
                    seed: cfg.seed,
                    market_inflation: cfg.inflation_schedule(),
                    record_trace: cfg.run.trace,
                };
                let report = if selection == "single" {
                    run_single_selection(
                        cfg, &prepared, &tuned, strategy, divisor, &mut em_runs, &mut traces,
                    )?
                } else {
                    let resolved = resolve_strategy(
                        cfg,
                        &prepared,
                        &prepared.campaigns,
                        tuned.get(&(strategy.clone(), divisor)),
                        strategy,
                        selection,
                        budget,
                    )?;
                    if let Some(sol) = &resolved.em {
                        em_runs.push(em_record(strategy, selection, &prepared.payoff_label, divisor, &ids, sol));
                    }
                    let report = replay(
                        &prepared.test_streams,
                        &resolved.bids,
                        &prepared.payoffs,
                        &resolved.v,
                        &replay_cfg,
                    )?;
                    if let Some(t) = &report.trace {
                        traces.push(TaggedTrace {
                            strategy: strategy.clone(),
                            selection: selection.clone(),
                            payoff: prepared.payoff_label.clone(),
                            divisor,
                            rows: t.clone(),
                        });
                    }
                    report
                };
                rows.push(ReportRow::from_replay(
                    strategy,
                    selection,
                    &prepared.payoff_label,
                    divisor,
                    &report,
                ));
            }
        }
    }

    // Dynamic rounds, when configured. Failures here keep the sweep results
    // and mark the run as partial.
    let mut rounds = Vec::new();
    let mut partial_error = None;
    if let Some(section) = &cfg.rounds {
        match run_dynamic_stage(cfg, &prepared, section, m) {
            Ok(r) => rounds = r,
            Err(e) => partial_error = Some(e.to_string()),
        }
    }

    Ok(ExperimentOutcome {
        campaign_ids: ids,
        rows,
        em_runs,
        rounds,
        traces,
        partial_error,
    })
}

/// "single" selection: each campaign replays alone with a one-hot vector and
/// its own budget share; totals aggregate across campaigns.
fn run_single_selection(
    cfg: &ExperimentConfig,
    prepared: &PreparedExperiment,
    tuned: &BTreeMap<(String, u32), Vec<BidFunction>>,
    strategy: &str,
    divisor: u32,
    em_runs: &mut Vec<EmRunRecord>,
    traces: &mut Vec<TaggedTrace>,
) -> Result<ReplayReport> {
    let mut agg: Option<ReplayReport> = None;
    for (i, campaign) in prepared.campaigns.iter().enumerate() {
        let solo_campaigns = vec![campaign.clone()];
        let solo_streams = vec![prepared.test_streams[i].clone()];
        let budget = total_log_cost(&solo_streams) / divisor as f64;
        let solo_tuned = tuned
            .get(&(strategy.to_string(), divisor))
            .map(|bids| vec![bids[i]]);
        let resolved = resolve_strategy(
            cfg,
            prepared,
            &solo_campaigns,
            solo_tuned.as_ref(),
            strategy,
            "uniform",
            budget,
        )?;
        if let Some(sol) = &resolved.em {
            em_runs.push(em_record(
                strategy,
                "single",
                &prepared.payoff_label,
                divisor,
                &[campaign.id.clone()],
                sol,
            ));
        }
        let replay_cfg = ReplayConfig {
            budget,
            budget_divisor: Some(divisor),
            seed: derive_seed(cfg.seed, i as u64),
            market_inflation: cfg.inflation_schedule(),
            record_trace: cfg.run.trace,
        };
        let report = replay(
            &solo_streams,
            &resolved.bids,
            &[prepared.payoffs[i]],
            &resolved.v,
            &replay_cfg,
        )?;
        if let Some(t) = &report.trace {
            traces.push(TaggedTrace {
                strategy: strategy.to_string(),
                selection: "single".to_string(),
                payoff: prepared.payoff_label.clone(),
                divisor,
                rows: t.clone(),
            });
        }
        agg = Some(match agg {
            None => report,
            Some(mut a) => {
                a.auctions += report.auctions;
                a.bids += report.bids;
                a.wins += report.wins;
                a.conversions += report.conversions;
                a.cost += report.cost;
                a.profit += report.profit;
                a.budget += report.budget;
                a.budget_remaining += report.budget_remaining;
                a.skipped_records += report.skipped_records;
                a.gated += report.gated;
                a.per_campaign.extend(report.per_campaign);
                a.margin = (a.cost > 0.0).then(|| a.profit / a.cost);
                a
            }
        });
    }
    agg.ok_or(Error::EmptyInput { what: "campaigns" })
}

fn run_dynamic_stage(
    cfg: &ExperimentConfig,
    prepared: &PreparedExperiment,
    section: &crate::config::RoundsSection,
    _m: usize,
) -> Result<Vec<RoundOutcome>> {
    let family = match section.strategy.as_str() {
        "sam1" => SamFamily::Sam1,
        "sam2" => SamFamily::Sam2,
        other => {
            return Err(Error::config(
                "rounds.strategy",
                format!("dynamic rounds need sam1 or sam2, got \"{other}\""),
            ))
        }
    };
    let horizon = section.horizon_hours.unwrap_or_else(|| test_span_hours(prepared));
    let schedule = RoundSchedule {
        horizon_hours: horizon,
        period_hours: section.period_hours.min(horizon.max(1)),
    };
    let budget = prepared.test_total_cost / section.divisor as f64;
    let em_cfg = em_config(cfg, prepared, budget, selection_scheme(cfg, &section.selection))?;
    let replay_cfg = ReplayConfig {
        budget,
        budget_divisor: Some(section.divisor),
        seed: cfg.seed,
        market_inflation: cfg.inflation_schedule(),
        record_trace: false,
    };
    run_dynamic(
        &prepared.campaigns,
        &prepared.global_win,
        family,
        &schedule,
        &em_cfg,
        &replay_cfg,
    )
}

fn test_span_hours(prepared: &PreparedExperiment) -> u32 {
    let min = prepared
        .test_streams
        .iter()
        .filter_map(|s| s.records.first().map(|r| r.timestamp_ms))
        .min()
        .unwrap_or(0);
    let max = prepared
        .test_streams
        .iter()
        .filter_map(|s| s.records.last().map(|r| r.timestamp_ms))
        .max()
        .unwrap_or(0);
    (((max - min) / MS_PER_HOUR) + 1).max(1) as u32
}

/// Risk/return frontier over an alpha grid, with the single-campaign points.
pub fn run_frontier(
    cfg: &ExperimentConfig,
    alphas: &[f64],
) -> Result<(Vec<CampaignId>, Vec<FrontierRow>)> {
    let prepared = prepare(cfg)?;
    let m = prepared.campaigns.len();
    if m < 2 {
        return Err(Error::invalid("frontier", "needs at least 2 campaigns"));
    }
    if alphas.is_empty() {
        return Err(Error::EmptyInput { what: "alpha grid" });
    }
    let family = if cfg.run.strategies.iter().any(|s| s == "sam2") || !cfg.run.strategies.iter().any(|s| s == "sam1") {
        SamFamily::Sam2
    } else {
        SamFamily::Sam1
    };
    let divisor = cfg.run.divisors.first().copied().unwrap_or(16);
    let budget = prepared.test_total_cost / divisor as f64;
    let em_cfg = em_config(
        cfg,
        &prepared,
        budget,
        SelectionScheme::Portfolio { alpha: cfg.portfolio.alpha },
    )?;
    let sol = run_em(&prepared.campaigns, &prepared.global_win, family, &em_cfg)?;

    let wins =
        crate::engine::resolve_wins(&prepared.campaigns, &prepared.global_win, cfg.data.per_campaign_market);
    let estimates: Vec<MarginEstimate> = prepared
        .campaigns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            estimate_margin_mc(c, &sol.bids[i], &wins[i], prepared.em_volume, cfg.em.mc_reps, cfg.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let corr = crate::engine::correlation_matrix_public(&prepared.campaigns, &sol.bids, &wins)?;
    let model = PortfolioModel::from_margins(&estimates, &corr)?;

    let mut grid: Vec<f64> = alphas.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut rows = Vec::with_capacity(grid.len() + m);
    for alpha in grid {
        let v = optimize_selection(&model, alpha)?;
        let (mu_p, var_p) = portfolio_stats(&model, &v)?;
        rows.push(FrontierRow {
            point: "frontier".to_string(),
            alpha: Some(alpha),
            mu_p,
            sigma_p: var_p.sqrt(),
            v: v.as_slice().to_vec(),
        });
    }
    for i in 0..m {
        let v = SelectionVector::one_hot(m, i)?;
        let (mu_p, var_p) = portfolio_stats(&model, &v)?;
        rows.push(FrontierRow {
            point: format!("campaign:{}", prepared.campaigns[i].id),
            alpha: None,
            mu_p,
            sigma_p: var_p.sqrt(),
            v: v.as_slice().to_vec(),
        });
    }
    Ok((prepared.campaign_ids(), rows))
}

/// Runs the full experiment and writes `report.csv`, `em_trace.json`,
/// `rounds.csv` (when rounds are configured), the optional auction trace,
/// and a `run_meta.json` status marker into the output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let dir = Path::new(&cfg.out_dir);
    match run_experiment(cfg) {
        Ok(outcome) => {
            write_file(dir, "report.csv", &format_report_csv(&outcome.rows))?;
            write_json(dir, "em_trace.json", &outcome.em_runs)?;
            if cfg.rounds.is_some() {
                write_file(dir, "rounds.csv", &format_rounds_csv(&outcome.rounds))?;
            }
            if cfg.run.trace {
                write_file(dir, "trace.csv", &format_trace_csv(&outcome.traces))?;
            }
            let partial = outcome.partial_error.is_some();
            write_json(
                dir,
                "run_meta.json",
                &RunMeta { partial, error: outcome.partial_error.clone(), seed: cfg.seed },
            )?;
            match outcome.partial_error {
                Some(e) => Err(Error::invalid("dynamic stage", e)),
                None => Ok(()),
            }
        }
        Err(e) => {
            let _ = write_json(
                dir,
                "run_meta.json",
                &RunMeta { partial: true, error: Some(e.to_string()), seed: cfg.seed },
            );
            Err(e)
        }
    }
}

/// Frontier command: writes `frontier.csv`.
pub fn cmd_frontier(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<()> {
    let (ids, rows) = run_frontier(cfg, alphas)?;
    write_file(Path::new(&cfg.out_dir), "frontier.csv", &format_frontier_csv(&ids, &rows))
}

/// Generates the configured synthetic market and writes it as a bid log.
pub fn cmd_gen(cfg: &ExperimentConfig, out_path: &Path) -> Result<()> {
    let streams = generate_synthetic(&cfg.synthetic_spec()?)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    let file = std::fs::File::create(out_path).map_err(|source| Error::Io {
        path: out_path.display().to_string(),
        source,
    })?;
    crate::data::write_log(&streams, std::io::BufWriter::new(file)).map_err(|source| Error::Io {
        path: out_path.display().to_string(),
        source,
    })
}
