//! Statistical arbitrage mining for RTB display advertising.
//!
//! A meta-bidder buys CPM-priced impressions in second-price auctions and is
//! paid per conversion on CPA contracts. This crate jointly optimizes the
//! bidding function and the campaign-selection probability vector to maximize
//! expected arbitrage net profit under budget and risk constraints, and
//! evaluates strategies by replaying auctions over logged or synthetic bid
//! data.
//!
//! Module map:
//! - [`market`]: win-probability / market-price / CVR distribution models
//! - [`bidding`]: bid functions (sam1/sam2 closed forms, baselines) and the
//!   budget-multiplier solvers
//! - [`portfolio`]: margin estimation and risk-averse campaign selection
//! - [`engine`]: the alternating (EM-style) joint optimizer
//! - [`replay`]: second-price auction replay, budget sweeps, dynamic rounds
//! - [`data`]: bid-log parsing, synthetic market generation, train/test split
//! - [`config`] / [`experiment`] / [`report`]: end-to-end experiment driver
//!   and CSV/JSON artifact emission

pub mod bidding;
pub mod config;
pub mod data;
pub mod engine;
mod error;
pub mod experiment;
pub mod market;
mod numeric;
pub mod portfolio;
pub mod replay;
pub mod report;

pub use error::{Error, Result};
