//! Report rows and CSV/JSON artifact emission.
//!
//! Reports are data-only; plotting is left to external tools. Column order
//! and headers are stable across runs and versions.

use crate::data::CampaignId;
use crate::engine::EmTraceRow;
use crate::error::{Error, Result};
use crate::replay::{AuctionTrace, ReplayReport, RoundOutcome};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const REPORT_HEADER: &str = "strategy,selection,payoff,divisor,profit,margin,bids,imps,convs,cost";
pub const ROUNDS_HEADER: &str =
    "round,start_hour,hours,budget,profit,margin,bids,imps,convs,cost,retrained,skipped";
pub const TRACE_HEADER: &str = "strategy,selection,payoff,divisor,auction,campaign,timestamp_ms,theta,bid,price,gated,won,paid,converted,payoff_value";

/// One row of report.csv, mirroring the replay accounting columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub strategy: String,
    pub selection: String,
    pub payoff: String,
    pub divisor: u32,
    pub profit: f64,
    pub margin: Option<f64>,
    pub bids: u64,
    pub imps: u64,
    pub convs: u64,
    pub cost: f64,
}

impl ReportRow {
    pub fn from_replay(
        strategy: &str,
        selection: &str,
        payoff: &str,
        divisor: u32,
        report: &ReplayReport,
    ) -> Self {
        ReportRow {
            strategy: strategy.to_string(),
            selection: selection.to_string(),
            payoff: payoff.to_string(),
            divisor,
            profit: report.profit,
            margin: report.margin,
            bids: report.bids,
            imps: report.wins,
            convs: report.conversions,
            cost: report.cost,
        }
    }
}

/// Machine-readable record of one EM run for em_trace.json.
#[derive(Debug, Clone, Serialize)]
pub struct EmRunRecord {
    pub strategy: String,
    pub selection: String,
    pub payoff: String,
    pub divisor: u32,
    pub campaign_ids: Vec<String>,
    pub lambda: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub frozen: Vec<usize>,
    pub under_spend: bool,
    pub iterations_trace: Vec<EmTraceRow>,
}

/// One auction-trace row tagged with its run key.
#[derive(Debug, Clone)]
pub struct TaggedTrace {
    pub strategy: String,
    pub selection: String,
    pub payoff: String,
    pub divisor: u32,
    pub rows: Vec<AuctionTrace>,
}

fn money(v: f64) -> String {
    format!("{v:.6}")
}

fn opt_money(v: Option<f64>) -> String {
    v.map(money).unwrap_or_default()
}

pub fn format_report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.selection,
            r.payoff,
            r.divisor,
            money(r.profit),
            opt_money(r.margin),
            r.bids,
            r.imps,
            r.convs,
            money(r.cost)
        ));
    }
    out
}

pub fn format_rounds_csv(rounds: &[RoundOutcome]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in rounds {
        let (profit, margin, bids, imps, convs, cost) = match &r.report {
            Some(rep) => (
                money(rep.profit),
                opt_money(rep.margin),
                rep.bids.to_string(),
                rep.wins.to_string(),
                rep.conversions.to_string(),
                money(rep.cost),
            ),
            None => (String::new(), String::new(), String::new(), String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.start_hour,
            r.hours,
            money(r.budget),
            profit,
            margin,
            bids,
            imps,
            convs,
            cost,
            r.retrained,
            r.skipped
        ));
    }
    out
}

/// Frontier rows: the risk/return curve over the alpha grid plus the M
/// single-campaign points.
#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    /// "frontier" or "campaign:<id>".
    pub point: String,
    pub alpha: Option<f64>,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub v: Vec<f64>,
}

pub fn format_frontier_csv(ids: &[CampaignId], rows: &[FrontierRow]) -> String {
    let mut out = String::from("point,alpha,mu_p,sigma_p");
    for id in ids {
        out.push_str(&format!(",v_{id}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            r.point,
            r.alpha.map(|a| format!("{a:e}")).unwrap_or_default(),
            money(r.mu_p),
            money(r.sigma_p)
        ));
        for v in &r.v {
            out.push_str(&format!(",{}", money(*v)));
        }
        out.push('\n');
    }
    out
}

pub fn format_trace_csv(traces: &[TaggedTrace]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in traces {
        for row in &t.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                t.strategy,
                t.selection,
                t.payoff,
                t.divisor,
                row.auction,
                row.campaign,
                row.timestamp_ms,
                money(row.theta),
                money(row.bid.min(1e18)),
                money(row.price),
                row.gated,
                row.won,
                money(row.paid),
                u8::from(row.converted),
                money(row.payoff)
            ));
        }
    }
    out
}

/// Run status marker written next to every artifact set.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub partial: bool,
    pub error: Option<String>,
    pub seed: u64,
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid("json artifact", e.to_string()))?;
    write_file(dir, name, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_header_is_pinned() {
        assert_eq!(
            REPORT_HEADER,
            "strategy,selection,payoff,divisor,profit,margin,bids,imps,convs,cost"
        );
    }

    #[test]
    fn undefined_margin_renders_blank() {
        let row = ReportRow {
            strategy: "truth".into(),
            selection: "uniform".into(),
            payoff: "easy".into(),
            divisor: 16,
            profit: 1.5,
            margin: None,
            bids: 10,
            imps: 5,
            convs: 2,
            cost: 0.0,
        };
        let csv = format_report_csv(&[row]);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line, "truth,uniform,easy,16,1.500000,,10,5,2,0.000000");
    }
}
