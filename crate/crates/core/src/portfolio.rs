//! Net-profit-margin estimation and risk-averse campaign selection over the
//! probability simplex.

use crate::bidding::BidFunction;
use crate::data::{CampaignSpec, MS_PER_HOUR};
use crate::error::{Error, Result};
use crate::market::WinningFunction;
use crate::numeric::{derive_seed, mean, sample_std};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean and standard deviation of one campaign's net profit margin, from
/// bootstrap repetitions over its training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub mu: f64,
    pub sigma: f64,
    /// Repetitions that produced a defined margin.
    pub n_samples: usize,
}

/// Margin estimate plus the per-repetition profit moments the EM driver needs
/// for its statistical monotonicity tolerance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MarginDetail {
    pub estimate: MarginEstimate,
    /// Standard deviation of per-repetition total profit; feeds the EM
    /// objective's statistical tolerance.
    pub profit_sd: f64,
}

/// Estimates the net-profit-margin distribution of one campaign under a bid
/// function: repeat `reps` times, each time sampling `volume` bid requests
/// with replacement from the training log and recording
/// `gamma = sum((theta*r - b)*w(b)) / sum(b*w(b))`.
///
/// Profit and cost use expected-value semantics (`theta*r`, `b*w(b)`);
/// randomness comes only from the resampling. Repetitions whose total cost is
/// zero carry no margin and are skipped; if every repetition is skipped the
/// margin is undefined. When the outcome space is small enough to enumerate
/// within the repetition budget (`n_records^volume <= reps`) the bootstrap
/// distribution is computed exactly instead of sampled.
///
/// Deterministic given the seed.
pub fn estimate_margin_mc(
    campaign: &CampaignSpec,
    bid: &BidFunction,
    win: &WinningFunction,
    volume: usize,
    reps: usize,
    seed: u64,
) -> Result<MarginEstimate> {
    estimate_margin_detail(campaign, bid, win, volume, reps, seed).map(|d| d.estimate)
}

pub(crate) fn estimate_margin_detail(
    campaign: &CampaignSpec,
    bid: &BidFunction,
    win: &WinningFunction,
    volume: usize,
    reps: usize,
    seed: u64,
) -> Result<MarginDetail> {
    if campaign.train.is_empty() {
        return Err(Error::EmptyInput { what: "campaign training log" });
    }
    if reps < 2 {
        return Err(Error::invalid("repetitions", "need at least 2"));
    }
    if volume == 0 {
        return Err(Error::invalid("volume", "need at least 1"));
    }
    if matches!(bid, BidFunction::AllIn) {
        return Err(Error::invalid(
            "bid function",
            "margin is undefined for the all-in diagnostic strategy",
        ));
    }

    let n = campaign.train.len();
    let per_record = per_record_values(campaign, bid, win)?;

    let outcomes: Vec<(f64, f64)> = if enumerable(n, volume, reps) {
        enumerate_outcomes(&per_record, volume)
    } else {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
                let mut profit = 0.0;
                let mut cost = 0.0;
                for _ in 0..volume {
                    let j = rng.gen_range(0..n);
                    let (p, c) = per_record[j];
                    profit += p;
                    cost += c;
                }
                (profit, cost)
            })
            .collect()
    };

    let margins: Vec<f64> = outcomes
        .iter()
        .filter(|(_, c)| *c > 0.0)
        .map(|(p, c)| p / c)
        .collect();
    if margins.is_empty() {
        return Err(Error::UndefinedMargin { campaign: campaign.id.to_string() });
    }
    let profits: Vec<f64> = outcomes.iter().map(|(p, _)| *p).collect();
    let (mu, sigma) = if enumerable(n, volume, reps) {
        // Equally weighted exact enumeration: population moments.
        let m = mean(&margins);
        let var = margins.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / margins.len() as f64;
        (m, var.sqrt())
    } else {
        (mean(&margins), sample_std(&margins))
    };
    Ok(MarginDetail {
        estimate: MarginEstimate { mu, sigma, n_samples: margins.len() },
        profit_sd: sample_std(&profits),
    })
}

fn enumerable(n: usize, volume: usize, reps: usize) -> bool {
    let mut total: u128 = 1;
    for _ in 0..volume {
        total = match total.checked_mul(n as u128) {
            Some(t) if t <= reps as u128 => t,
            _ => return false,
        };
    }
    true
}

/// Expected per-record (profit, cost): `((theta*r - b)*w(b), b*w(b))`.
fn per_record_values(
    campaign: &CampaignSpec,
    bid: &BidFunction,
    win: &WinningFunction,
) -> Result<Vec<(f64, f64)>> {
    campaign
        .train
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let b = bid.bid(rec.pcvr, campaign.payoff, i as u64)?;
            let w = win.win_prob(b)?;
            Ok(((rec.pcvr * campaign.payoff - b) * w, b * w))
        })
        .collect()
}

/// Walks every ordered `volume`-tuple of record indices (all equally likely
/// under with-replacement sampling).
fn enumerate_outcomes(per_record: &[(f64, f64)], volume: usize) -> Vec<(f64, f64)> {
    let n = per_record.len();
    let total = (n as u128).pow(volume as u32) as usize;
    (0..total)
        .map(|code| {
            let mut idx = code;
            let mut profit = 0.0;
            let mut cost = 0.0;
            for _ in 0..volume {
                let (p, c) = per_record[idx % n];
                profit += p;
                cost += c;
                idx /= n;
            }
            (profit, cost)
        })
        .collect()
}

/// Realized margin per time bucket over a campaign's training log, in
/// expected-value semantics. Returns (bucket index, margin) for buckets with
/// positive expected cost.
pub(crate) fn margin_time_series(
    campaign: &CampaignSpec,
    bid: &BidFunction,
    win: &WinningFunction,
    bucket_ms: i64,
) -> Result<Vec<(i64, f64)>> {
    let mut buckets: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for (i, rec) in campaign.train.iter().enumerate() {
        let b = bid.bid(rec.pcvr, campaign.payoff, i as u64)?;
        let w = win.win_prob(b)?;
        let entry = buckets.entry(rec.timestamp_ms.div_euclid(bucket_ms)).or_insert((0.0, 0.0));
        entry.0 += (rec.pcvr * campaign.payoff - b) * w;
        entry.1 += b * w;
    }
    Ok(buckets
        .into_iter()
        .filter(|(_, (_, c))| *c > 0.0)
        .map(|(k, (p, c))| (k, p / c))
        .collect())
}

/// Hourly margin series used for pairwise correlations.
pub(crate) fn hourly_margin_series(
    campaign: &CampaignSpec,
    bid: &BidFunction,
    win: &WinningFunction,
) -> Result<Vec<(i64, f64)>> {
    margin_time_series(campaign, bid, win, MS_PER_HOUR)
}

/// Pearson correlation of two margin series, clamped to [-1, 1].
/// A zero-variance series carries no co-movement information and yields 0.
pub fn margin_correlation(series_i: &[f64], series_j: &[f64]) -> Result<f64> {
    if series_i.len() != series_j.len() {
        return Err(Error::DimensionMismatch {
            left: series_i.len(),
            right: series_j.len(),
            context: "margin series",
        });
    }
    if series_i.len() < 3 {
        return Err(Error::SeriesTooShort(series_i.len()));
    }
    let (mi, mj) = (mean(series_i), mean(series_j));
    let mut sii = 0.0;
    let mut sjj = 0.0;
    let mut sij = 0.0;
    for (a, b) in series_i.iter().zip(series_j) {
        let (da, db) = (a - mi, b - mj);
        sii += da * da;
        sjj += db * db;
        sij += da * db;
    }
    if sii == 0.0 || sjj == 0.0 {
        return Ok(0.0);
    }
    Ok((sij / (sii.sqrt() * sjj.sqrt())).clamp(-1.0, 1.0))
}

/// Mean vector and covariance matrix of per-campaign margins.
///
/// The covariance is assembled from standard deviations and pairwise
/// correlation factors, then projected to the nearest positive-semidefinite
/// matrix if clamped correlations made it indefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioModel {
    mu: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl PortfolioModel {
    /// Builds the model from margin estimates and an MxM correlation matrix.
    pub fn from_margins(estimates: &[MarginEstimate], corr: &[Vec<f64>]) -> Result<Self> {
        let m = estimates.len();
        if m == 0 {
            return Err(Error::EmptyInput { what: "margin estimates" });
        }
        if corr.len() != m || corr.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch {
                left: corr.len(),
                right: m,
                context: "correlation matrix",
            });
        }
        let mut cov = vec![vec![0.0; m]; m];
        for i in 0..m {
            if estimates[i].sigma < 0.0 {
                return Err(Error::invalid("margin sigma", "must be nonnegative"));
            }
            for j in 0..m {
                if i == j {
                    cov[i][j] = estimates[i].sigma * estimates[i].sigma;
                    continue;
                }
                let beta = 0.5 * (corr[i][j] + corr[j][i]);
                if !( -1.0..=1.0).contains(&beta) || beta.is_nan() {
                    return Err(Error::invalid(
                        "correlation factor",
                        format!("beta[{i}][{j}] = {beta} outside [-1, 1]"),
                    ));
                }
                cov[i][j] = beta * estimates[i].sigma * estimates[j].sigma;
            }
        }
        let mu = estimates.iter().map(|e| e.mu).collect();
        Ok(PortfolioModel { mu, cov: repair_psd(cov) })
    }

    /// Builds the model directly from moments (tests, external estimates).
    pub fn from_moments(mu: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let m = mu.len();
        if m == 0 {
            return Err(Error::EmptyInput { what: "margin means" });
        }
        if cov.len() != m || cov.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch {
                left: cov.len(),
                right: m,
                context: "covariance matrix",
            });
        }
        let mut sym = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                sym[i][j] = 0.5 * (cov[i][j] + cov[j][i]);
            }
        }
        Ok(PortfolioModel { mu, cov: repair_psd(sym) })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    fn sigma(&self, i: usize) -> f64 {
        self.cov[i][i].max(0.0).sqrt()
    }

    fn cov_mul(&self, v: &[f64]) -> Vec<f64> {
        self.cov
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Clamps negative eigenvalues to zero and re-symmetrizes; identity when the
/// matrix is already positive semidefinite.
fn repair_psd(cov: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let m = cov.len();
    let mat = DMatrix::from_fn(m, m, |i, j| cov[i][j]);
    let eig = mat.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = eig.eigenvalues.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if min_eig >= -1e-12 * (1.0 + scale) {
        return cov;
    }
    let clamped = DVector::from_iterator(m, eig.eigenvalues.iter().map(|v| v.max(0.0)));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            out[i][j] = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
        }
    }
    out
}

/// Campaign-selection probabilities: entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVector(Vec<f64>);

impl SelectionVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::EmptyInput { what: "selection vector" });
        }
        if v.iter().any(|x| !(0.0..=1.0).contains(x) || x.is_nan()) {
            return Err(Error::invalid("selection vector", "entries must lie in [0, 1]"));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "selection vector",
                format!("entries must sum to 1, got {sum}"),
            ));
        }
        Ok(SelectionVector(v))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyInput { what: "selection vector" });
        }
        Ok(SelectionVector(vec![1.0 / m as f64; m]))
    }

    pub fn one_hot(m: usize, index: usize) -> Result<Self> {
        if index >= m {
            return Err(Error::DimensionMismatch {
                left: index,
                right: m,
                context: "one-hot index",
            });
        }
        let mut v = vec![0.0; m];
        v[index] = 1.0;
        Ok(SelectionVector(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &SelectionVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Portfolio mean and variance `(v'mu, v'Sigma v)` for a selection vector.
pub fn portfolio_stats(model: &PortfolioModel, v: &SelectionVector) -> Result<(f64, f64)> {
    if v.len() != model.len() {
        return Err(Error::DimensionMismatch {
            left: v.len(),
            right: model.len(),
            context: "selection vector vs portfolio model",
        });
    }
    let vs = v.as_slice();
    let mu_p: f64 = vs.iter().zip(model.mu()).map(|(a, b)| a * b).sum();
    let sv = model.cov_mul(vs);
    let var_p: f64 = vs.iter().zip(&sv).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    Ok((mu_p, var_p))
}

fn objective(model: &PortfolioModel, alpha: f64, v: &[f64]) -> f64 {
    let mu: f64 = v.iter().zip(model.mu()).map(|(a, b)| a * b).sum();
    let sv = model.cov_mul(v);
    let var: f64 = v.iter().zip(&sv).map(|(a, b)| a * b).sum();
    mu - alpha * var
}

/// Euclidean projection onto the probability simplex, renormalized so the
/// entries sum to 1 exactly.
fn project_simplex(x: &mut [f64]) {
    let n = x.len();
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut sum = 0.0;
    for xi in x.iter_mut() {
        *xi = (*xi - tau).max(0.0);
        sum += *xi;
    }
    if sum > 0.0 {
        for xi in x.iter_mut() {
            *xi /= sum;
        }
    } else {
        let u = 1.0 / n as f64;
        x.iter_mut().for_each(|xi| *xi = u);
    }
}

/// Maximum KKT violation of `max v'mu - alpha v'Sigma v` on the simplex.
fn kkt_residual(model: &PortfolioModel, alpha: f64, v: &[f64]) -> f64 {
    let sv = model.cov_mul(v);
    let grad: Vec<f64> = model
        .mu()
        .iter()
        .zip(&sv)
        .map(|(m, s)| m - 2.0 * alpha * s)
        .collect();
    let active_max = v
        .iter()
        .zip(&grad)
        .filter(|(vi, _)| **vi > 1e-12)
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    let active_min = v
        .iter()
        .zip(&grad)
        .filter(|(vi, _)| **vi > 1e-12)
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    let inactive_excess = v
        .iter()
        .zip(&grad)
        .filter(|(vi, _)| **vi <= 1e-12)
        .map(|(_, g)| (g - active_max).max(0.0))
        .fold(0.0f64, f64::max);
    (active_max - active_min).max(inactive_excess)
}

/// Maximizes `v'mu - alpha * v'Sigma v` over the probability simplex.
///
/// `alpha = 0` returns the greedy vertex: argmax mu, ties broken by lowest
/// sigma then lowest index. For `alpha > 0` we run projected gradient ascent
/// (step `1/(2*alpha*||Sigma||_F + ||mu||)`, 10k iteration cap, 1e-10
/// objective-change stop) and then polish the identified active set by
/// solving its KKT system exactly, which brings the residual to solver
/// precision on ill-conditioned covariances.
pub fn optimize_selection(model: &PortfolioModel, alpha: f64) -> Result<SelectionVector> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::invalid("risk aversion", "must be nonnegative"));
    }
    let m = model.len();
    if alpha == 0.0 {
        let mut best = 0usize;
        for i in 1..m {
            let better = model.mu()[i] > model.mu()[best]
                || (model.mu()[i] == model.mu()[best] && model.sigma(i) < model.sigma(best));
            if better {
                best = i;
            }
        }
        return SelectionVector::one_hot(m, best);
    }

    let frob: f64 = model
        .cov()
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let mu_norm: f64 = model.mu().iter().map(|x| x * x).sum::<f64>().sqrt();
    let step = 1.0 / (2.0 * alpha * frob + mu_norm).max(f64::MIN_POSITIVE);

    let mut v = vec![1.0 / m as f64; m];
    let mut prev_obj = objective(model, alpha, &v);
    for _ in 0..10_000 {
        let sv = model.cov_mul(&v);
        for i in 0..m {
            v[i] += step * (model.mu()[i] - 2.0 * alpha * sv[i]);
        }
        project_simplex(&mut v);
        let obj = objective(model, alpha, &v);
        if (obj - prev_obj).abs() < 1e-10 {
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }

    if kkt_residual(model, alpha, &v) > 1e-8 {
        if let Some(polished) = active_set_polish(model, alpha, &v) {
            if objective(model, alpha, &polished) >= prev_obj - 1e-12 {
                v = polished;
            }
        }
    }
    SelectionVector::new(v)
}

/// Solves the equality-constrained KKT system on a candidate support,
/// swapping members in and out until primal and dual feasibility hold.
fn active_set_polish(model: &PortfolioModel, alpha: f64, start: &[f64]) -> Option<Vec<f64>> {
    let m = model.len();
    let mut support: Vec<usize> = (0..m).filter(|&i| start[i] > 1e-9).collect();
    if support.is_empty() {
        support = (0..m).collect();
    }
    for _ in 0..4 * m.max(4) {
        let k = support.len();
        // [ 2*alpha*Sigma_SS  1 ] [v_S]   [mu_S]
        // [ 1'                0 ] [ c ] = [ 1  ]
        let mut a = DMatrix::zeros(k + 1, k + 1);
        let mut b = DVector::zeros(k + 1);
        for (p, &i) in support.iter().enumerate() {
            for (q, &j) in support.iter().enumerate() {
                a[(p, q)] = 2.0 * alpha * model.cov()[i][j];
            }
            a[(p, k)] = 1.0;
            a[(k, p)] = 1.0;
            b[p] = model.mu()[i];
        }
        b[k] = 1.0;
        let sol = a.lu().solve(&b)?;
        let v_s: Vec<f64> = (0..k).map(|p| sol[p]).collect();
        let c = sol[k];

        if let Some(worst) = v_s
            .iter()
            .enumerate()
            .filter(|(_, x)| **x < -1e-12)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(p, _)| p)
        {
            if support.len() == 1 {
                return None;
            }
            support.remove(worst);
            continue;
        }

        let mut v = vec![0.0; m];
        for (p, &i) in support.iter().enumerate() {
            v[i] = v_s[p].max(0.0);
        }
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);

        let sv = model.cov_mul(&v);
        let violator = (0..m)
            .filter(|i| !support.contains(i))
            .map(|i| (i, model.mu()[i] - 2.0 * alpha * sv[i] - c))
            .filter(|(_, e)| *e > 1e-10)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match violator {
            Some((i, _)) => support.push(i),
            None => return Some(v),
        }
    }
    None
}
