//! Joint optimization of the bidding function and the campaign-selection
//! vector, alternating in EM fashion.
//!
//! Initialization is truth-telling bids and a uniform selection vector. Each
//! iteration runs an E-step (margin estimation per campaign, correlation
//! assembly, risk-averse selection) and an M-step (solve the budget
//! multiplier for the fixed selection, rebuild the bid functions), until the
//! selection and multiplier both stabilize or the iteration cap is hit.
//!
//! The Monte Carlo seed is frozen across iterations (common random numbers)
//! so the objective trace is smooth and its monotonicity is testable.

use crate::bidding::{
    sam1_lambda_portfolio, solve_lambda_numeric, BidFunction, LambdaCampaign, LambdaSolution,
    LambdaSolveConfig, SamFamily, LAMBDA_MIN,
};
use crate::data::CampaignSpec;
use crate::error::{Error, Result};
use crate::market::WinningFunction;
use crate::portfolio::{
    estimate_margin_detail, hourly_margin_series, margin_correlation, optimize_selection,
    MarginEstimate, PortfolioModel, SelectionVector,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the E-step chooses the selection vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SelectionScheme {
    /// Fixed `v = 1/M`.
    Uniform,
    /// Risk-ignoring argmax of the margin mean (`alpha = 0`).
    Greedy,
    /// Mean-variance trade-off at the given risk aversion.
    Portfolio { alpha: f64 },
}

impl SelectionScheme {
    pub fn label(&self) -> &'static str {
        match self {
            SelectionScheme::Uniform => "uniform",
            SelectionScheme::Greedy => "greedy",
            SelectionScheme::Portfolio { .. } => "portfolio",
        }
    }
}

/// Configuration of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// L1 tolerance on the selection vector between iterations.
    pub tol_v: f64,
    /// Relative tolerance on the budget multiplier between iterations.
    pub tol_lambda: f64,
    pub selection: SelectionScheme,
    /// Total budget for the arbitrage period.
    pub budget: f64,
    /// Expected number of bid requests over the period.
    pub volume: usize,
    /// Monte Carlo repetitions per margin estimate.
    pub mc_reps: usize,
    pub seed: u64,
    pub lambda: LambdaSolveConfig,
    /// Use each campaign's own fitted winning function when available,
    /// falling back to the global one.
    pub per_campaign_win: bool,
}

impl EmConfig {
    pub fn new(budget: f64, volume: usize, seed: u64) -> Self {
        EmConfig {
            max_iters: 20,
            tol_v: 1e-3,
            tol_lambda: 1e-4,
            selection: SelectionScheme::Portfolio { alpha: 0.1 },
            budget,
            volume,
            mc_reps: 50,
            seed,
            lambda: LambdaSolveConfig::default(),
            per_campaign_win: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("em iterations", "must be at least 1"));
        }
        if self.tol_v <= 0.0 || self.tol_lambda <= 0.0 {
            return Err(Error::invalid("em tolerances", "must be positive"));
        }
        if !self.budget.is_finite() || self.budget <= 0.0 {
            return Err(Error::invalid("budget", "must be positive"));
        }
        if self.volume == 0 {
            return Err(Error::invalid("volume", "must be at least 1"));
        }
        if self.mc_reps < 2 {
            return Err(Error::invalid("mc repetitions", "need at least 2"));
        }
        if let SelectionScheme::Portfolio { alpha } = self.selection {
            if !alpha.is_finite() || alpha < 0.0 {
                return Err(Error::invalid("risk aversion", "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTraceRow {
    pub iteration: usize,
    /// Plug-in expected net profit of this iteration's (v, bid).
    pub objective: f64,
    /// Monte Carlo standard error of the objective.
    pub objective_se: f64,
    pub lambda: f64,
    pub v: Vec<f64>,
    /// Per-campaign margin means; `None` for frozen campaigns.
    pub margin_mu: Vec<Option<f64>>,
    pub margin_sigma: Vec<Option<f64>>,
}

/// The solved selection vector and bidding functions, with the full
/// optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamSolution {
    pub family: SamFamily,
    pub lambda: f64,
    pub v: SelectionVector,
    /// One bid function per campaign: the shared family and multiplier with
    /// each campaign's own price scale.
    pub bids: Vec<BidFunction>,
    /// Final plug-in expected net profit.
    pub objective: f64,
    pub trace: Vec<EmTraceRow>,
    pub converged: bool,
    pub iterations: usize,
    /// Campaigns frozen at weight zero because their margin was undefined at
    /// the first iteration.
    pub frozen: Vec<usize>,
    pub lambda_info: LambdaSolution,
}

/// Plug-in expected net profit
/// `T * sum_i v_i * mean_theta[(theta*r_i - b_i) * w_i(b_i)]`
/// over each campaign's training CVR samples. Linear in `v`.
pub fn expected_net_profit(
    v: &SelectionVector,
    bids: &[BidFunction],
    campaigns: &[CampaignSpec],
    wins: &[WinningFunction],
    volume: usize,
) -> Result<f64> {
    per_campaign_means(bids, campaigns, wins)?
        .iter()
        .zip(v.as_slice())
        .map(|((profit, _), vi)| Ok(vi * profit))
        .sum::<Result<f64>>()
        .map(|s| s * volume as f64)
}

/// Plug-in expected cost `T * sum_i v_i * mean_theta[b_i * w_i(b_i)]`.
pub fn expected_cost(
    v: &SelectionVector,
    bids: &[BidFunction],
    campaigns: &[CampaignSpec],
    wins: &[WinningFunction],
    volume: usize,
) -> Result<f64> {
    per_campaign_means(bids, campaigns, wins)?
        .iter()
        .zip(v.as_slice())
        .map(|((_, cost), vi)| Ok(vi * cost))
        .sum::<Result<f64>>()
        .map(|s| s * volume as f64)
}

/// Per-campaign `(mean profit, mean spend)` per auction.
fn per_campaign_means(
    bids: &[BidFunction],
    campaigns: &[CampaignSpec],
    wins: &[WinningFunction],
) -> Result<Vec<(f64, f64)>> {
    if bids.len() != campaigns.len() || wins.len() != campaigns.len() {
        return Err(Error::DimensionMismatch {
            left: bids.len(),
            right: campaigns.len(),
            context: "bids/wins vs campaigns",
        });
    }
    campaigns
        .iter()
        .zip(bids)
        .zip(wins)
        .map(|((c, bid), win)| {
            let mut profit = 0.0;
            let mut cost = 0.0;
            for (i, &theta) in c.train_thetas().iter().enumerate() {
                let b = bid.bid(theta, c.payoff, i as u64)?;
                let w = win.win_prob(b)?;
                profit += (theta * c.payoff - b) * w;
                cost += b * w;
            }
            let n = c.train_thetas().len().max(1) as f64;
            Ok((profit / n, cost / n))
        })
        .collect()
}

/// Resolves the winning function used for each campaign.
pub fn resolve_wins(
    campaigns: &[CampaignSpec],
    global: &WinningFunction,
    per_campaign: bool,
) -> Vec<WinningFunction> {
    campaigns
        .iter()
        .map(|c| {
            if per_campaign {
                c.win.unwrap_or(*global)
            } else {
                *global
            }
        })
        .collect()
}

/// Runs the alternating optimization (Algorithm-style EM loop).
pub fn run_em(
    campaigns: &[CampaignSpec],
    global_win: &WinningFunction,
    family: SamFamily,
    cfg: &EmConfig,
) -> Result<SamSolution> {
    cfg.validate()?;
    let m = campaigns.len();
    if m == 0 {
        return Err(Error::EmptyInput { what: "campaigns" });
    }
    let wins = resolve_wins(campaigns, global_win, cfg.per_campaign_win);

    let mut v = SelectionVector::uniform(m)?;
    let mut bids: Vec<BidFunction> = vec![BidFunction::Truth; m];
    let mut lambda_prev: Option<f64> = None;
    let mut lambda_info = LambdaSolution {
        lambda: 0.0,
        residual: 0.0,
        converged: false,
        under_spend: false,
        iterations: 0,
    };
    let mut active = vec![true; m];
    let mut frozen: Vec<usize> = Vec::new();
    let mut trace: Vec<EmTraceRow> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=cfg.max_iters {
        iterations = iteration;

        // E-step: margin estimates under the current bids. One shared seed
        // across campaigns and iterations (common random numbers): identical
        // campaigns get identical estimates and the trace stays smooth.
        let details: Vec<_> = campaigns
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                if !active[i] {
                    return Ok(None);
                }
                estimate_margin_detail(c, &bids[i], &wins[i], cfg.volume, cfg.mc_reps, cfg.seed)
                    .map(Some)
            })
            .collect::<Vec<Result<_>>>();

        let mut estimates: Vec<Option<MarginEstimate>> = vec![None; m];
        let mut profit_sds: Vec<f64> = vec![0.0; m];
        for (i, d) in details.into_iter().enumerate() {
            match d {
                Ok(Some(detail)) => {
                    estimates[i] = Some(detail.estimate);
                    profit_sds[i] = detail.profit_sd;
                }
                Ok(None) => {}
                Err(Error::UndefinedMargin { .. }) if iteration == 1 => {
                    active[i] = false;
                    frozen.push(i);
                }
                Err(e) => return Err(e),
            }
        }
        let active_idx: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
        if active_idx.is_empty() {
            return Err(Error::AllCampaignsUndefined);
        }

        let v_new = select_weights(cfg, campaigns, &bids, &wins, &estimates, &active_idx, m)?;

        // M-step: solve the budget multiplier for the fixed selection.
        let all_uniform = active_idx
            .iter()
            .all(|&i| matches!(wins[i], WinningFunction::UniformMarket { .. }));
        let info = if family == SamFamily::Sam1 && all_uniform {
            let terms: Vec<(f64, f64, f64, f64)> = (0..m)
                .map(|i| {
                    (
                        campaigns[i].payoff,
                        campaigns[i].train_phi(),
                        wins[i].scale(),
                        v_new.as_slice()[i],
                    )
                })
                .collect();
            let lambda = sam1_lambda_portfolio(&terms, cfg.budget, cfg.volume as f64)?;
            if lambda > LAMBDA_MIN {
                LambdaSolution {
                    lambda,
                    residual: 0.0,
                    converged: true,
                    under_spend: false,
                    iterations: 0,
                }
            } else {
                LambdaSolution {
                    lambda: LAMBDA_MIN,
                    residual: f64::INFINITY,
                    converged: false,
                    under_spend: true,
                    iterations: 0,
                }
            }
        } else {
            let lc: Vec<LambdaCampaign<'_>> = (0..m)
                .map(|i| LambdaCampaign {
                    payoff: campaigns[i].payoff,
                    thetas: campaigns[i].train_thetas(),
                    weight: v_new.as_slice()[i],
                    win: wins[i],
                })
                .collect();
            solve_lambda_numeric(family, &lc, cfg.budget, cfg.volume as f64, &cfg.lambda)?
        };
        let lambda = info.lambda;
        let bids_new: Vec<BidFunction> = (0..m)
            .map(|i| match family {
                SamFamily::Sam1 => BidFunction::Sam1 { lambda },
                SamFamily::Sam2 => BidFunction::Sam2 { lambda, l: wins[i].scale() },
            })
            .collect();

        let objective = expected_net_profit(&v_new, &bids_new, campaigns, &wins, cfg.volume)?;
        let objective_se = (0..m)
            .map(|i| {
                let vi = v_new.as_slice()[i];
                vi * vi * profit_sds[i] * profit_sds[i] / cfg.mc_reps as f64
            })
            .sum::<f64>()
            .sqrt();
        trace.push(EmTraceRow {
            iteration,
            objective,
            objective_se,
            lambda,
            v: v_new.as_slice().to_vec(),
            margin_mu: estimates.iter().map(|e| e.map(|e| e.mu)).collect(),
            margin_sigma: estimates.iter().map(|e| e.map(|e| e.sigma)).collect(),
        });

        let v_moved = v_new.l1_distance(&v);
        let lambda_moved = lambda_prev
            .map(|lp| (lambda - lp).abs() / (1.0 + lp.abs()))
            .unwrap_or(f64::INFINITY);
        v = v_new;
        bids = bids_new;
        lambda_prev = Some(lambda);
        lambda_info = info;
        if v_moved < cfg.tol_v && lambda_moved < cfg.tol_lambda {
            converged = true;
            break;
        }
    }

    let objective = trace.last().map(|r| r.objective).unwrap_or(0.0);
    Ok(SamSolution {
        family,
        lambda: lambda_prev.unwrap_or(0.0),
        v,
        bids,
        objective,
        trace,
        converged,
        iterations,
        frozen,
        lambda_info,
    })
}

/// One-shot selection for a fixed bid function (no multiplier coupling):
/// estimate margins under the given bids and optimize the selection vector.
/// Campaigns with undefined margins are frozen at weight zero.
///
/// This is how selection schemes apply to the baseline strategies, which
/// have no budget multiplier to alternate with.
pub fn select_once(
    campaigns: &[CampaignSpec],
    bids: &[BidFunction],
    wins: &[WinningFunction],
    scheme: SelectionScheme,
    volume: usize,
    mc_reps: usize,
    seed: u64,
) -> Result<SelectionVector> {
    let m = campaigns.len();
    if m == 0 {
        return Err(Error::EmptyInput { what: "campaigns" });
    }
    if let SelectionScheme::Uniform = scheme {
        return SelectionVector::uniform(m);
    }
    let mut estimates: Vec<Option<MarginEstimate>> = vec![None; m];
    let details: Vec<_> = campaigns
        .par_iter()
        .enumerate()
        .map(|(i, c)| estimate_margin_detail(c, &bids[i], &wins[i], volume, mc_reps, seed))
        .collect::<Vec<Result<_>>>();
    let mut active_idx = Vec::with_capacity(m);
    for (i, d) in details.into_iter().enumerate() {
        match d {
            Ok(detail) => {
                estimates[i] = Some(detail.estimate);
                active_idx.push(i);
            }
            Err(Error::UndefinedMargin { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if active_idx.is_empty() {
        return Err(Error::AllCampaignsUndefined);
    }
    let cfg_stub = EmConfig {
        selection: scheme,
        ..EmConfig::new(1.0, volume.max(1), seed)
    };
    select_weights(&cfg_stub, campaigns, bids, wins, &estimates, &active_idx, m)
}

/// Pairwise margin correlation matrix over all campaigns, from hourly series
/// under the given bids.
pub fn correlation_matrix_public(
    campaigns: &[CampaignSpec],
    bids: &[BidFunction],
    wins: &[WinningFunction],
) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..campaigns.len()).collect();
    correlation_matrix(campaigns, bids, wins, &all)
}

/// E-step selection over the active campaigns, embedded back into the full
/// vector with frozen campaigns at weight zero.
fn select_weights(
    cfg: &EmConfig,
    campaigns: &[CampaignSpec],
    bids: &[BidFunction],
    wins: &[WinningFunction],
    estimates: &[Option<MarginEstimate>],
    active_idx: &[usize],
    m: usize,
) -> Result<SelectionVector> {
    let k = active_idx.len();
    let weights_active: Vec<f64> = match cfg.selection {
        SelectionScheme::Uniform => vec![1.0 / k as f64; k],
        SelectionScheme::Greedy | SelectionScheme::Portfolio { .. } => {
            let alpha = match cfg.selection {
                SelectionScheme::Portfolio { alpha } => alpha,
                _ => 0.0,
            };
            let est: Vec<MarginEstimate> = active_idx
                .iter()
                .map(|&i| estimates[i].expect("active campaigns have estimates"))
                .collect();
            let corr = correlation_matrix(campaigns, bids, wins, active_idx)?;
            let model = PortfolioModel::from_margins(&est, &corr)?;
            optimize_selection(&model, alpha)?.as_slice().to_vec()
        }
    };
    let mut v_full = vec![0.0; m];
    for (slot, &i) in active_idx.iter().enumerate() {
        v_full[i] = weights_active[slot];
    }
    SelectionVector::new(v_full)
}

/// Pairwise margin correlations from hourly realized-margin series aligned on
/// common buckets. Pairs sharing fewer than 3 buckets get factor 0.
fn correlation_matrix(
    campaigns: &[CampaignSpec],
    bids: &[BidFunction],
    wins: &[WinningFunction],
    active_idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let k = active_idx.len();
    let series: Vec<Vec<(i64, f64)>> = active_idx
        .iter()
        .map(|&i| hourly_margin_series(&campaigns[i], &bids[i], &wins[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut corr = vec![vec![1.0; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut jb = 0usize;
            for &(hour, ma) in &series[a] {
                while jb < series[b].len() && series[b][jb].0 < hour {
                    jb += 1;
                }
                if jb < series[b].len() && series[b][jb].0 == hour {
                    xs.push(ma);
                    ys.push(series[b][jb].1);
                }
            }
            let beta = if xs.len() < 3 {
                0.0
            } else {
                margin_correlation(&xs, &ys)?
            };
            corr[a][b] = beta;
            corr[b][a] = beta;
        }
    }
    Ok(corr)
}
