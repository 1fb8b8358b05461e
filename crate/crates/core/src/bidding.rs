//! Bid-price functions and the budget-multiplier (lambda) solvers.
//!
//! `sam1`/`sam2` are the closed-form maximizers of the per-impression
//! Lagrangian `(theta*r - (1+lambda)*b) * w(b)` under the uniform-market and
//! long-tail winning functions respectively. The remaining families are the
//! baseline strategies used for comparison replays.

use crate::error::{Error, Result};
use crate::market::WinningFunction;
use crate::numeric::hash_unit;
use serde::{Deserialize, Serialize};

/// Which closed-form arbitrage family is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamFamily {
    Sam1,
    Sam2,
}

/// A bid-price function `b(theta, r)`.
///
/// All parameters are per-impression currency. `Rand` is deterministic in
/// `(seed, call index)` so replays are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BidFunction {
    /// Fixed bid regardless of the request.
    Const { bid: f64 },
    /// Uniform bid in `[lo, hi)` keyed by call index.
    Rand { lo: f64, hi: f64, seed: u64 },
    /// Truth-telling: the expected impression value `r * theta`.
    Truth,
    /// Linear in CVR: `base * theta / avg_theta`.
    Lin { base: f64, avg_theta: f64 },
    /// Concave ortb1 form `sqrt(c*theta/lambda + c^2) - c`.
    Ortb { c: f64, lambda: f64 },
    /// Uniform-market arbitrage form `r*theta / (2*(1+lambda))`.
    Sam1 { lambda: f64 },
    /// Long-tail arbitrage form `sqrt(r*l*theta/(1+lambda) + l^2) - l`.
    Sam2 { lambda: f64, l: f64 },
    /// Bids the entire remaining budget; the replay resolves the balance.
    /// Diagnostic upper bound, not a tunable strategy.
    AllIn,
}

impl BidFunction {
    /// Evaluates the bid for predicted CVR `theta` and payoff `r`.
    ///
    /// `call_index` only affects `Rand`; every other family ignores it.
    /// `AllIn` returns infinity, which the replay resolves to the remaining
    /// budget.
    pub fn bid(&self, theta: f64, payoff: f64, call_index: u64) -> Result<f64> {
        if !theta.is_finite() || !(0.0..=1.0).contains(&theta) {
            return Err(Error::CvrOutOfRange(theta));
        }
        if !payoff.is_finite() || payoff < 0.0 {
            return Err(Error::invalid(
                "payoff",
                format!("must be nonnegative, got {payoff}"),
            ));
        }
        match *self {
            BidFunction::Const { bid } => {
                check_nonneg("constant bid", bid)?;
                Ok(bid)
            }
            BidFunction::Rand { lo, hi, seed } => {
                check_nonneg("random bid lower bound", lo)?;
                if hi < lo {
                    return Err(Error::invalid(
                        "random bid range",
                        format!("hi {hi} below lo {lo}"),
                    ));
                }
                Ok(lo + hash_unit(seed, call_index) * (hi - lo))
            }
            BidFunction::Truth => Ok(payoff * theta),
            BidFunction::Lin { base, avg_theta } => {
                check_nonneg("linear bid base", base)?;
                if avg_theta <= 0.0 {
                    return Err(Error::invalid(
                        "linear bid average CVR",
                        format!("must be positive, got {avg_theta}"),
                    ));
                }
                Ok(base * theta / avg_theta)
            }
            BidFunction::Ortb { c, lambda } => {
                if c <= 0.0 || lambda <= 0.0 {
                    return Err(Error::invalid(
                        "ortb parameters",
                        format!("c and lambda must be positive, got ({c}, {lambda})"),
                    ));
                }
                Ok((c * theta / lambda + c * c).sqrt() - c)
            }
            BidFunction::Sam1 { lambda } => {
                check_lambda(lambda)?;
                Ok(payoff * theta / (2.0 * (1.0 + lambda)))
            }
            BidFunction::Sam2 { lambda, l } => {
                check_lambda(lambda)?;
                if l <= 0.0 {
                    return Err(Error::invalid(
                        "sam2 price scale",
                        format!("must be positive, got {l}"),
                    ));
                }
                Ok((payoff * l * theta / (1.0 + lambda) + l * l).sqrt() - l)
            }
            BidFunction::AllIn => Ok(f64::INFINITY),
        }
    }

    /// Short name used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            BidFunction::Const { .. } => "const",
            BidFunction::Rand { .. } => "rand",
            BidFunction::Truth => "truth",
            BidFunction::Lin { .. } => "lin",
            BidFunction::Ortb { .. } => "ortb",
            BidFunction::Sam1 { .. } => "sam1",
            BidFunction::Sam2 { .. } => "sam2",
            BidFunction::AllIn => "allin",
        }
    }
}

fn check_nonneg(what: &'static str, x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::invalid(what, format!("must be nonnegative, got {x}")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda <= -1.0 {
        return Err(Error::invalid(
            "lambda",
            format!("must be greater than -1, got {lambda}"),
        ));
    }
    Ok(())
}

/// Smallest admissible budget multiplier; the closed forms divide by
/// `1 + lambda`.
pub const LAMBDA_MIN: f64 = -1.0 + 1e-6;

/// Analytic lambda for sam1 under a uniform market:
/// `lambda = (r/2) * sqrt(T*phi / (B*l)) - 1`.
pub fn sam1_lambda_closed_form(
    payoff: f64,
    volume: f64,
    budget: f64,
    l: f64,
    phi: f64,
) -> Result<f64> {
    for (name, v) in [
        ("payoff", payoff),
        ("volume", volume),
        ("budget", budget),
        ("price scale", l),
        ("cvr second moment", phi),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok(payoff / 2.0 * (volume * phi / (budget * l)).sqrt() - 1.0)
}

/// The payoff-free sam1 slope `sqrt(B*l / (T*phi))`; the final sam1 bid is
/// `slope * theta` regardless of `r`.
pub fn sam1_bid_slope(budget: f64, l: f64, volume: f64, phi: f64) -> f64 {
    (budget * l / (volume * phi)).sqrt()
}

/// Multi-campaign generalization of the sam1 closed form for a shared
/// multiplier: solves
/// `sum_i v_i * r_i^2 * phi_i / (4*(1+lambda)^2*l_i) = B/T` for `lambda`.
pub fn sam1_lambda_portfolio(
    terms: &[(f64, f64, f64, f64)], // (payoff, phi, l, weight)
    budget: f64,
    volume: f64,
) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::EmptyInput { what: "campaign terms" });
    }
    if budget <= 0.0 || volume <= 0.0 {
        return Err(Error::invalid(
            "budget or volume",
            "must be positive for the closed form",
        ));
    }
    let mut acc = 0.0;
    for &(r, phi, l, v) in terms {
        if l <= 0.0 {
            return Err(Error::invalid("price scale", "must be positive"));
        }
        acc += v * r * r * phi / l;
    }
    Ok(0.5 * (volume * acc / budget).sqrt() - 1.0)
}

/// Batching scheme for the gradient-descent lambda solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    MiniBatch(usize),
    Stochastic,
}

/// Hyperparameters for the numeric lambda solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolveConfig {
    /// Base learning rate; scaled internally by the inverse spend-gradient
    /// magnitude at the starting point.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Absolute tolerance on the mean-spend residual `|E[b*w(b)] - B/T|`.
    /// `None` resolves to `1e-4 * (B/T)`.
    pub tolerance: Option<f64>,
    pub batch: BatchMode,
}

impl Default for LambdaSolveConfig {
    fn default() -> Self {
        LambdaSolveConfig {
            learning_rate: 1e-3,
            max_iters: 10_000,
            tolerance: None,
            batch: BatchMode::Full,
        }
    }
}

impl LambdaSolveConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max iterations", "must be at least 1"));
        }
        if let Some(t) = self.tolerance {
            if t <= 0.0 {
                return Err(Error::invalid("tolerance", "must be positive"));
            }
        }
        if let BatchMode::MiniBatch(0) = self.batch {
            return Err(Error::invalid("mini-batch size", "must be at least 1"));
        }
        Ok(())
    }

    fn resolved_tolerance(&self, budget_per_auction: f64) -> f64 {
        self.tolerance.unwrap_or(1e-4 * budget_per_auction)
    }
}

/// One campaign's data as seen by the lambda solvers.
#[derive(Debug, Clone)]
pub struct LambdaCampaign<'a> {
    pub payoff: f64,
    pub thetas: &'a [f64],
    pub weight: f64,
    pub win: WinningFunction,
}

/// Outcome of a numeric lambda solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolution {
    pub lambda: f64,
    /// `|sum_i v_i * mean_k[b*w(b)] - B/T|` at the returned lambda.
    pub residual: f64,
    pub converged: bool,
    /// Set when even maximally aggressive bidding cannot spend `B/T` per
    /// auction; `lambda` is then [`LAMBDA_MIN`].
    pub under_spend: bool,
    pub iterations: usize,
}

#[inline]
fn family_bid(family: SamFamily, lambda: f64, win: &WinningFunction, theta: f64, payoff: f64) -> f64 {
    match family {
        SamFamily::Sam1 => payoff * theta / (2.0 * (1.0 + lambda)),
        SamFamily::Sam2 => {
            let l = win.scale();
            (payoff * l * theta / (1.0 + lambda) + l * l).sqrt() - l
        }
    }
}

/// Mean per-auction spend `sum_i v_i * mean_k[b*w(b)]` over a batch window.
fn mean_spend(
    family: SamFamily,
    campaigns: &[LambdaCampaign<'_>],
    lambda: f64,
    window: Option<(usize, usize)>, // (start, len) cycled within each campaign
) -> f64 {
    let mut total = 0.0;
    for c in campaigns {
        if c.weight == 0.0 || c.thetas.is_empty() {
            continue;
        }
        let n = c.thetas.len();
        let (start, len) = match window {
            Some((s, l)) => (s % n, l.min(n)),
            None => (0, n),
        };
        let mut acc = 0.0;
        for j in 0..len {
            let theta = c.thetas[(start + j) % n];
            let b = family_bid(family, lambda, &c.win, theta, c.payoff);
            acc += b * c.win.win_prob_unchecked(b);
        }
        total += c.weight * acc / len as f64;
    }
    total
}

fn validate_lambda_inputs(
    campaigns: &[LambdaCampaign<'_>],
    budget: f64,
    volume: f64,
) -> Result<()> {
    if campaigns.is_empty() {
        return Err(Error::EmptyInput { what: "campaigns" });
    }
    if budget <= 0.0 || volume <= 0.0 {
        return Err(Error::invalid("budget or volume", "must be positive"));
    }
    let sum: f64 = campaigns.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "selection weights",
            format!("must sum to 1, got {sum}"),
        ));
    }
    for c in campaigns {
        if c.weight < 0.0 {
            return Err(Error::invalid("selection weight", "must be nonnegative"));
        }
        if c.weight > 0.0 && c.thetas.is_empty() {
            return Err(Error::EmptyInput {
                what: "cvr samples for a campaign with positive weight",
            });
        }
    }
    Ok(())
}

/// Solves the budget condition `sum_i v_i * mean_k[b*w(b)] = B/T` by descent
/// on the squared residual, with a multiplicative step-size adaptation.
pub fn solve_lambda_gd(
    family: SamFamily,
    campaigns: &[LambdaCampaign<'_>],
    budget: f64,
    volume: f64,
    cfg: &LambdaSolveConfig,
) -> Result<LambdaSolution> {
    cfg.validate()?;
    validate_lambda_inputs(campaigns, budget, volume)?;
    let target = budget / volume;
    let tol = cfg.resolved_tolerance(target);

    if let Some(sol) = under_spend_check(family, campaigns, target, tol) {
        return Ok(sol);
    }

    let batch_len = |c: &LambdaCampaign<'_>| match cfg.batch {
        BatchMode::Full => c.thetas.len(),
        BatchMode::MiniBatch(s) => s,
        BatchMode::Stochastic => 1,
    };
    let residual_at = |lambda: f64, iter: usize| -> f64 {
        let window = match cfg.batch {
            BatchMode::Full => None,
            BatchMode::MiniBatch(s) => Some((iter * s, s)),
            BatchMode::Stochastic => Some((iter, 1)),
        };
        let _ = batch_len;
        mean_spend(family, campaigns, lambda, window) - target
    };
    let grad_at = |lambda: f64, iter: usize| -> f64 {
        let h = 1e-6 * (1.0 + lambda.abs());
        let lo = (lambda - h).max(LAMBDA_MIN);
        let hi = lambda + h;
        (residual_at(hi, iter) - residual_at(lo, iter)) / (hi - lo)
    };

    let mut lambda: f64 = 0.0;
    let mut g = residual_at(lambda, 0);
    let g0_slope = grad_at(lambda, 0).abs().max(f64::MIN_POSITIVE);
    let mut eta = cfg.learning_rate / g0_slope;
    let mut best = (g.abs(), lambda);
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        if g.abs() <= tol {
            return Ok(LambdaSolution {
                lambda,
                residual: g.abs(),
                converged: true,
                under_spend: false,
                iterations: iter,
            });
        }
        let slope = grad_at(lambda, iter);
        let proposal = (lambda - eta * g * slope).max(LAMBDA_MIN);
        let g_new = residual_at(proposal, iter);
        if g_new.abs() < g.abs() {
            lambda = proposal;
            g = g_new;
            eta *= 1.5;
            if g.abs() < best.0 {
                best = (g.abs(), lambda);
            }
        } else {
            eta *= 0.5;
        }
    }

    // Not converged: report the best iterate seen.
    let (residual, lambda) = best;
    Ok(LambdaSolution {
        lambda,
        residual,
        converged: residual <= tol,
        under_spend: false,
        iterations,
    })
}

/// Solves the budget condition by bisection on the monotone spend map.
pub fn solve_lambda_bisect(
    family: SamFamily,
    campaigns: &[LambdaCampaign<'_>],
    budget: f64,
    volume: f64,
    cfg: &LambdaSolveConfig,
) -> Result<LambdaSolution> {
    cfg.validate()?;
    validate_lambda_inputs(campaigns, budget, volume)?;
    let target = budget / volume;
    let tol = cfg.resolved_tolerance(target);
    let g = |lambda: f64| mean_spend(family, campaigns, lambda, None) - target;

    if let Some(sol) = under_spend_check(family, campaigns, target, tol) {
        return Ok(sol);
    }

    // Spend decreases in lambda, so g(LAMBDA_MIN) >= 0 here; expand the upper
    // bracket until spend falls below target.
    let mut lo = LAMBDA_MIN;
    let mut hi = 1.0;
    let mut iterations = 0;
    while g(hi) > 0.0 {
        iterations += 1;
        hi = hi * 4.0 + 3.0;
        if hi > 1e18 {
            return Ok(LambdaSolution {
                lambda: hi,
                residual: g(hi).abs(),
                converged: false,
                under_spend: false,
                iterations,
            });
        }
    }
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * (1.0 + hi.abs()) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let residual = g(lambda).abs();
    Ok(LambdaSolution {
        lambda,
        residual,
        converged: residual <= tol,
        under_spend: false,
        iterations,
    })
}

/// Default solver: gradient descent per the paper's update, with a bisection
/// fallback when descent stalls and the spend map verifies as monotone.
pub fn solve_lambda_numeric(
    family: SamFamily,
    campaigns: &[LambdaCampaign<'_>],
    budget: f64,
    volume: f64,
    cfg: &LambdaSolveConfig,
) -> Result<LambdaSolution> {
    let gd = solve_lambda_gd(family, campaigns, budget, volume, cfg)?;
    if gd.converged || gd.under_spend {
        return Ok(gd);
    }
    if spend_is_monotone(family, campaigns) {
        let bis = solve_lambda_bisect(family, campaigns, budget, volume, cfg)?;
        if bis.residual < gd.residual {
            return Ok(bis);
        }
    }
    Ok(gd)
}

fn under_spend_check(
    family: SamFamily,
    campaigns: &[LambdaCampaign<'_>],
    target: f64,
    tol: f64,
) -> Option<LambdaSolution> {
    let spend_max = mean_spend(family, campaigns, LAMBDA_MIN, None);
    if spend_max < target {
        Some(LambdaSolution {
            lambda: LAMBDA_MIN,
            residual: (spend_max - target).abs(),
            converged: (spend_max - target).abs() <= tol,
            under_spend: true,
            iterations: 0,
        })
    } else {
        None
    }
}

fn spend_is_monotone(family: SamFamily, campaigns: &[LambdaCampaign<'_>]) -> bool {
    let probes = [LAMBDA_MIN, -0.5, 0.0, 1.0, 10.0, 100.0, 1e4];
    let mut prev = f64::INFINITY;
    for &l in &probes {
        let s = mean_spend(family, campaigns, l, None);
        if s > prev + 1e-12 * (1.0 + prev.abs()) {
            return false;
        }
        prev = s;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_max_bid(objective: impl Fn(f64) -> f64, hi: f64) -> f64 {
        // Coarse grid then golden refinement; independent of the closed forms.
        let steps = 20_000;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=steps {
            let b = hi * i as f64 / steps as f64;
            let v = objective(b);
            if v > best.0 {
                best = (v, b);
            }
        }
        let span = hi / steps as f64;
        let lo = (best.1 - span).max(0.0);
        let hi2 = (best.1 + span).min(hi);
        crate::numeric::golden_section_max(&objective, lo, hi2, 1e-12)
    }

    #[test]
    fn sam2_bid_matches_spec_example() {
        let f = BidFunction::Sam2 { lambda: 0.0, l: 50.0 };
        let b = f.bid(0.01, 300.0, 0).unwrap();
        assert!((b - 1.4782).abs() < 1e-4, "b={b}");
        // Oracle: grid search over (theta*r - (1+lambda)*b) * b/(b+l).
        let oracle = grid_max_bid(|x| (0.01 * 300.0 - x) * x / (x + 50.0), 10.0);
        assert!((b - oracle).abs() / oracle < 1e-4);
    }

    #[test]
    fn sam1_bid_matches_spec_example() {
        let f = BidFunction::Sam1 { lambda: 0.0 };
        let b = f.bid(0.01, 300.0, 0).unwrap();
        assert!((b - 1.5).abs() < 1e-12);
        let oracle = grid_max_bid(|x| (0.01 * 300.0 - x) * x / 300.0, 300.0);
        assert!((b - oracle).abs() / oracle < 1e-4);
    }

    #[test]
    fn truth_bid_is_expected_value() {
        let b = BidFunction::Truth.bid(0.02, 100.0, 0).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sam_families_bid_zero_at_zero_cvr() {
        let fns = [
            BidFunction::Truth,
            BidFunction::Lin { base: 2.0, avg_theta: 0.1 },
            BidFunction::Ortb { c: 40.0, lambda: 1e-5 },
            BidFunction::Sam1 { lambda: 0.3 },
            BidFunction::Sam2 { lambda: 0.3, l: 50.0 },
        ];
        for f in fns {
            assert_eq!(f.bid(0.0, 100.0, 0).unwrap(), 0.0, "{:?}", f);
        }
    }

    #[test]
    fn bid_rejects_cvr_out_of_range() {
        assert!(BidFunction::Truth.bid(1.5, 100.0, 0).is_err());
        assert!(BidFunction::Truth.bid(-0.1, 100.0, 0).is_err());
        assert!(BidFunction::Truth.bid(f64::NAN, 100.0, 0).is_err());
    }

    #[test]
    fn rand_bid_is_deterministic_per_index() {
        let f = BidFunction::Rand { lo: 1.0, hi: 3.0, seed: 9 };
        let a = f.bid(0.5, 10.0, 7).unwrap();
        let b = f.bid(0.2, 99.0, 7).unwrap();
        assert_eq!(a, b);
        assert!((1.0..3.0).contains(&a));
        assert_ne!(a, f.bid(0.5, 10.0, 8).unwrap());
    }

    #[test]
    fn sam1_lambda_example_and_slope_equivalence() {
        let (r, t, b, l, phi) = (300.0, 1e5, 1000.0, 300.0, 0.0545455);
        let lambda = sam1_lambda_closed_form(r, t, b, l, phi).unwrap();
        assert!((lambda - 19.23).abs() < 0.01, "lambda={lambda}");
        let slope_direct = sam1_bid_slope(b, l, t, phi);
        assert!((slope_direct - 7.416).abs() < 1e-3);
        // Route 2: through lambda and the rtheta/(2(1+lambda)) form.
        let slope_via_lambda = r / (2.0 * (1.0 + lambda));
        assert!((slope_direct - slope_via_lambda).abs() < 1e-9);
    }

    #[test]
    fn sam1_lambda_boundary_is_zero() {
        // (r/2)*sqrt(T*phi/(B*l)) = 1 at these values.
        let (r, phi, l) = (2.0, 1.0, 1.0);
        let (t, b) = (1.0, 1.0);
        let lambda = sam1_lambda_closed_form(r, t, b, l, phi).unwrap();
        assert!(lambda.abs() < 1e-12);
    }

    #[test]
    fn sam1_doubling_payoff_keeps_slope() {
        let (t, b, l, phi) = (5e4, 500.0, 120.0, 0.03);
        let l1 = sam1_lambda_closed_form(100.0, t, b, l, phi).unwrap();
        let l2 = sam1_lambda_closed_form(200.0, t, b, l, phi).unwrap();
        assert!(((1.0 + l2) / (1.0 + l1) - 2.0).abs() < 1e-12);
        let s1 = 100.0 / (2.0 * (1.0 + l1));
        let s2 = 200.0 / (2.0 * (1.0 + l2));
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn sam1_lambda_rejects_nonpositive_inputs() {
        assert!(sam1_lambda_closed_form(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(sam1_lambda_closed_form(1.0, 1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sam1_portfolio_reduces_to_single_campaign() {
        let (r, phi, l) = (80.0, 0.05, 60.0);
        let (b, t) = (400.0, 2e4);
        let single = sam1_lambda_closed_form(r, t, b, l, phi).unwrap();
        let multi = sam1_lambda_portfolio(&[(r, phi, l, 1.0)], b, t).unwrap();
        assert!((single - multi).abs() < 1e-12);
    }

    fn one_campaign<'a>(thetas: &'a [f64], payoff: f64, l: f64) -> Vec<LambdaCampaign<'a>> {
        vec![LambdaCampaign {
            payoff,
            thetas,
            weight: 1.0,
            win: WinningFunction::long_tail(l).unwrap(),
        }]
    }

    #[test]
    fn lambda_single_theta_matches_bisection_oracle() {
        // All thetas equal: lambda must set b*w(b) exactly to B/T. Oracle is a
        // fresh bisection on the scalar map, written out here independently.
        let thetas = vec![0.05; 64];
        let (payoff, l) = (120.0, 4.0);
        let campaigns = one_campaign(&thetas, payoff, l);
        let (budget, volume) = (300.0, 10_000.0);
        let target = budget / volume;

        let spend = |lambda: f64| {
            let b = (payoff * l * 0.05 / (1.0 + lambda) + l * l).sqrt() - l;
            b * b / (b + l)
        };
        let (mut lo, mut hi) = (LAMBDA_MIN, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);

        // Tight residual tolerance so lambda itself is pinned to 1e-5.
        let cfg = LambdaSolveConfig {
            tolerance: Some(1e-9 * target),
            ..Default::default()
        };
        let sol = solve_lambda_numeric(SamFamily::Sam2, &campaigns, budget, volume, &cfg).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!(
            (sol.lambda - oracle).abs() / (1.0 + oracle.abs()) < 1e-5,
            "sol={} oracle={oracle}",
            sol.lambda
        );
    }

    #[test]
    fn lambda_under_spend_flag_when_budget_unreachable() {
        // All thetas zero: every bid is zero, spend is zero at any lambda.
        let thetas = vec![0.0; 16];
        let campaigns = one_campaign(&thetas, 50.0, 10.0);
        let cfg = LambdaSolveConfig::default();
        let sol = solve_lambda_numeric(SamFamily::Sam2, &campaigns, 100.0, 10.0, &cfg).unwrap();
        assert!(sol.under_spend);
        assert_eq!(sol.lambda, LAMBDA_MIN);
    }

    #[test]
    fn lambda_zero_weight_campaign_is_inert() {
        let thetas_a = vec![0.02, 0.05, 0.08, 0.11];
        let thetas_b = vec![0.9; 8];
        let win = WinningFunction::long_tail(3.0).unwrap();
        let solo = vec![LambdaCampaign { payoff: 60.0, thetas: &thetas_a, weight: 1.0, win }];
        let pair = vec![
            LambdaCampaign { payoff: 60.0, thetas: &thetas_a, weight: 1.0, win },
            LambdaCampaign { payoff: 999.0, thetas: &thetas_b, weight: 0.0, win },
        ];
        let cfg = LambdaSolveConfig::default();
        let a = solve_lambda_bisect(SamFamily::Sam2, &solo, 50.0, 5000.0, &cfg).unwrap();
        let b = solve_lambda_bisect(SamFamily::Sam2, &pair, 50.0, 5000.0, &cfg).unwrap();
        assert_eq!(a.lambda, b.lambda);
    }

    #[test]
    fn gd_and_bisection_agree() {
        let thetas: Vec<f64> = (1..=400).map(|i| i as f64 / 4000.0).collect();
        let campaigns = one_campaign(&thetas, 200.0, 5.0);
        let (budget, volume) = (800.0, 100_000.0);
        let cfg = LambdaSolveConfig::default();
        let gd = solve_lambda_gd(SamFamily::Sam2, &campaigns, budget, volume, &cfg).unwrap();
        let bi = solve_lambda_bisect(SamFamily::Sam2, &campaigns, budget, volume, &cfg).unwrap();
        assert!(gd.converged, "{gd:?}");
        assert!(bi.converged, "{bi:?}");
        assert!(
            (gd.lambda - bi.lambda).abs() / (1.0 + bi.lambda.abs()) < 1e-4,
            "gd={} bi={}",
            gd.lambda,
            bi.lambda
        );
    }

    #[test]
    fn spend_is_monotone_in_lambda_for_sam2() {
        let thetas = [0.001, 0.01, 0.1, 0.5];
        let campaigns = one_campaign(&thetas, 150.0, 8.0);
        for theta in thetas {
            let mut prev = f64::INFINITY;
            for i in 0..60 {
                let lambda = -0.9 + i as f64 * 0.35;
                let b = family_bid(SamFamily::Sam2, lambda, &campaigns[0].win, theta, 150.0);
                let spend = b * campaigns[0].win.win_prob_unchecked(b);
                assert!(spend <= prev + 1e-12);
                prev = spend;
            }
        }
    }

    #[test]
    fn closed_forms_match_grid_search_on_random_tuples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let theta: f64 = rng.gen_range(0.001..0.5);
            let r: f64 = rng.gen_range(10.0..500.0);
            let lambda: f64 = rng.gen_range(-0.5..8.0);
            // sam2 under long-tail w.
            let l: f64 = rng.gen_range(1.0..200.0);
            let b2 = BidFunction::Sam2 { lambda, l }.bid(theta, r, 0).unwrap();
            let hi = theta * r / (1.0 + lambda) + 1.0;
            let oracle2 =
                grid_max_bid(|x| (theta * r - (1.0 + lambda) * x) * x / (x + l), hi);
            if oracle2 > 1e-9 {
                assert!(
                    (b2 - oracle2).abs() / oracle2 < 1e-4,
                    "sam2 {b2} vs {oracle2}"
                );
            }
            // sam1 under uniform w, with l above the interior maximizer.
            let b1_free = r * theta / (2.0 * (1.0 + lambda));
            let ul: f64 = rng.gen_range(1.0f64..50.0).max(b1_free * 1.5);
            let b1 = BidFunction::Sam1 { lambda }.bid(theta, r, 0).unwrap();
            let oracle1 =
                grid_max_bid(|x| (theta * r - (1.0 + lambda) * x) * x / ul, ul);
            if oracle1 > 1e-9 {
                assert!(
                    (b1 - oracle1).abs() / oracle1 < 1e-4,
                    "sam1 {b1} vs {oracle1}"
                );
            }
        }
    }

    #[test]
    fn sam2_is_concave_in_cvr() {
        let f = BidFunction::Sam2 { lambda: 0.4, l: 30.0 };
        let h = 1e-3;
        for i in 1..900 {
            let theta = i as f64 / 1000.0;
            let b0 = f.bid(theta - h, 100.0, 0).unwrap();
            let b1 = f.bid(theta, 100.0, 0).unwrap();
            let b2 = f.bid(theta + h, 100.0, 0).unwrap();
            assert!(b2 - 2.0 * b1 + b0 <= 1e-12);
        }
    }

    #[test]
    fn sam2_never_exceeds_truth_at_zero_lambda() {
        let f = BidFunction::Sam2 { lambda: 0.0, l: 45.0 };
        for i in 0..=100 {
            let theta = i as f64 / 100.0;
            let sam2 = f.bid(theta, 90.0, 0).unwrap();
            let truth = 90.0 * theta;
            if theta == 0.0 {
                assert_eq!(sam2, truth);
            } else {
                assert!(sam2 < truth, "theta={theta}: {sam2} vs {truth}");
            }
        }
    }

    #[test]
    fn minibatch_and_stochastic_modes_run() {
        let thetas: Vec<f64> = (1..=100).map(|i| i as f64 / 500.0).collect();
        let campaigns = one_campaign(&thetas, 100.0, 5.0);
        for batch in [BatchMode::MiniBatch(16), BatchMode::Stochastic] {
            let cfg = LambdaSolveConfig { batch, ..Default::default() };
            let sol =
                solve_lambda_numeric(SamFamily::Sam2, &campaigns, 100.0, 20_000.0, &cfg).unwrap();
            assert!(sol.lambda > LAMBDA_MIN);
        }
    }
}
