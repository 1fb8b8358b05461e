//! Market-price and CVR distribution models: win probability, densities,
//! sampling, fitting, and moments.
//!
//! Prices are per-impression currency units everywhere in this module; CPM
//! quotes are converted at the I/O boundary.

use crate::error::{Error, Result};
use crate::numeric::golden_section_max;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Win-probability model `w(b)` induced by the market-price distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WinningFunction {
    /// Market price uniform on `[0, l]`; `w(b) = min(b/l, 1)`.
    UniformMarket { l: f64 },
    /// Long-tail market price `p_z(z) = l/(z+l)^2`; `w(b) = b/(b+l)`.
    LongTail { l: f64 },
}

impl WinningFunction {
    pub fn uniform(l: f64) -> Result<Self> {
        check_scale(l)?;
        Ok(WinningFunction::UniformMarket { l })
    }

    pub fn long_tail(l: f64) -> Result<Self> {
        check_scale(l)?;
        Ok(WinningFunction::LongTail { l })
    }

    /// The price-scale parameter `l`.
    pub fn scale(&self) -> f64 {
        match *self {
            WinningFunction::UniformMarket { l } | WinningFunction::LongTail { l } => l,
        }
    }

    /// Probability of winning an auction at bid `b`.
    pub fn win_prob(&self, bid: f64) -> Result<f64> {
        if !bid.is_finite() || bid < 0.0 {
            return Err(Error::NegativeBid(bid));
        }
        Ok(self.win_prob_unchecked(bid))
    }

    /// `win_prob` without the domain check; callers guarantee `bid >= 0`.
    #[inline]
    pub(crate) fn win_prob_unchecked(&self, bid: f64) -> f64 {
        match *self {
            WinningFunction::UniformMarket { l } => (bid / l).min(1.0),
            WinningFunction::LongTail { l } => bid / (bid + l),
        }
    }

    /// The market-price density paired with this winning function.
    pub fn pdf(&self) -> MarketPricePdf {
        MarketPricePdf { win: *self }
    }
}

fn check_scale(l: f64) -> Result<()> {
    if !l.is_finite() || l <= 0.0 {
        return Err(Error::invalid(
            "price scale",
            format!("l must be positive and finite, got {l}"),
        ));
    }
    Ok(())
}

/// Market-price density `p_z(z)` for a [`WinningFunction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketPricePdf {
    win: WinningFunction,
}

impl MarketPricePdf {
    pub fn density(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        match self.win {
            WinningFunction::UniformMarket { l } => {
                if z <= l {
                    1.0 / l
                } else {
                    0.0
                }
            }
            WinningFunction::LongTail { l } => l / ((z + l) * (z + l)),
        }
    }

    /// Draws a market price by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        match self.win {
            WinningFunction::UniformMarket { l } => u * l,
            // CDF z/(z+l) inverted: z = l*u/(1-u).
            WinningFunction::LongTail { l } => l * u / (1.0 - u),
        }
    }
}

/// Distribution of predicted CVR values for one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvrDistribution {
    Beta { alpha: f64, beta: f64 },
    /// Normalized histogram; `edges` has one more entry than `masses`.
    /// Zero-width histograms represent point masses.
    Histogram { edges: Vec<f64>, masses: Vec<f64> },
}

impl CvrDistribution {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::invalid(
                "beta distribution",
                format!("shape parameters must be positive, got ({alpha}, {beta})"),
            ));
        }
        Ok(CvrDistribution::Beta { alpha, beta })
    }

    pub fn histogram(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if edges.len() != masses.len() + 1 {
            return Err(Error::DimensionMismatch {
                left: edges.len(),
                right: masses.len(),
                context: "histogram needs masses.len() + 1 edges",
            });
        }
        if masses.is_empty() {
            return Err(Error::EmptyInput { what: "histogram masses" });
        }
        if edges.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("histogram", "edges must be non-decreasing"));
        }
        if edges[0] < 0.0 || *edges.last().unwrap() > 1.0 {
            return Err(Error::invalid("histogram", "support must lie within [0, 1]"));
        }
        if masses.iter().any(|m| *m < 0.0) {
            return Err(Error::invalid("histogram", "masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "histogram",
                format!("masses must sum to 1 (got {total})"),
            ));
        }
        Ok(CvrDistribution::Histogram { edges, masses })
    }

    /// A single point mass at `theta`.
    pub fn point_mass(theta: f64) -> Result<Self> {
        Self::histogram(vec![theta, theta], vec![1.0])
    }

    /// Fits a normalized equal-width histogram over `[0, max theta observed]`.
    pub fn fit_empirical(thetas: &[f64], bins: usize) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::EmptyInput { what: "cvr samples" });
        }
        if bins == 0 {
            return Err(Error::invalid("histogram", "bin count must be at least 1"));
        }
        let mut max_t: f64 = 0.0;
        for &t in thetas {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(Error::CvrOutOfRange(t));
            }
            max_t = max_t.max(t);
        }
        if max_t == 0.0 {
            return Self::point_mass(0.0);
        }
        let width = max_t / bins as f64;
        let mut counts = vec![0u64; bins];
        for &t in thetas {
            let idx = ((t / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let n = thetas.len() as f64;
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let masses = counts.iter().map(|&c| c as f64 / n).collect();
        Self::histogram(edges, masses)
    }

    /// Mean `E[theta]`.
    pub fn mean(&self) -> f64 {
        match self {
            CvrDistribution::Beta { alpha, beta } => alpha / (alpha + beta),
            CvrDistribution::Histogram { edges, masses } => masses
                .iter()
                .enumerate()
                .map(|(i, m)| m * 0.5 * (edges[i] + edges[i + 1]))
                .sum(),
        }
    }

    /// Second moment `phi = E[theta^2]`.
    ///
    /// Beta is analytic; histograms use the bin-midpoint rule.
    pub fn second_moment(&self) -> f64 {
        match self {
            CvrDistribution::Beta { alpha, beta } => {
                let (a, b) = (*alpha, *beta);
                let s = a + b;
                let var = a * b / (s * s * (s + 1.0));
                let mean = a / s;
                var + mean * mean
            }
            CvrDistribution::Histogram { edges, masses } => masses
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mid = 0.5 * (edges[i] + edges[i + 1]);
                    m * mid * mid
                })
                .sum(),
        }
    }

    /// Draws one CVR value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CvrDistribution::Beta { alpha, beta } => {
                let dist = rand_distr::Beta::new(*alpha, *beta)
                    .expect("construction validated the shape parameters");
                rng.sample(dist)
            }
            CvrDistribution::Histogram { edges, masses } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, m) in masses.iter().enumerate() {
                    acc += m;
                    if u < acc || i == masses.len() - 1 {
                        let (lo, hi) = (edges[i], edges[i + 1]);
                        let frac: f64 = rng.gen();
                        return lo + frac * (hi - lo);
                    }
                }
                unreachable!("masses sum to 1")
            }
        }
    }
}

/// Maximum-likelihood fit of the long-tail scale `l` for
/// `p_z(z) = l/(z+l)^2`, by golden-section search on the log-likelihood.
///
/// Deterministic given its input. The search bracket is
/// `[min positive price / 100, max price * 100]`.
pub fn fit_long_tail_l(prices: &[f64]) -> Result<f64> {
    if prices.is_empty() {
        return Err(Error::EmptyInput { what: "winning prices" });
    }
    let mut min_pos = f64::INFINITY;
    let mut max_p: f64 = 0.0;
    for &p in prices {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid(
                "winning price",
                format!("prices must be nonnegative and finite, got {p}"),
            ));
        }
        if p > 0.0 {
            min_pos = min_pos.min(p);
        }
        max_p = max_p.max(p);
    }
    if max_p == 0.0 {
        return Err(Error::invalid(
            "winning prices",
            "all prices are zero; the long-tail scale is unidentifiable",
        ));
    }
    let lo = min_pos / 100.0;
    let hi = max_p * 100.0;
    let n = prices.len() as f64;
    let log_lik = |l: f64| n * l.ln() - 2.0 * prices.iter().map(|&z| (z + l).ln()).sum::<f64>();
    Ok(golden_section_max(log_lik, lo, hi, 1e-6))
}

/// Maximum-likelihood fit of the uniform-market upper bound: the sample max.
pub fn fit_uniform_l(prices: &[f64]) -> Result<f64> {
    if prices.is_empty() {
        return Err(Error::EmptyInput { what: "winning prices" });
    }
    let max_p = prices.iter().cloned().fold(0.0f64, f64::max);
    if max_p <= 0.0 {
        return Err(Error::invalid(
            "winning prices",
            "all prices are zero; the uniform-market bound is unidentifiable",
        ));
    }
    Ok(max_p)
}
