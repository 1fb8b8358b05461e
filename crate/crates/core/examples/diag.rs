// scratch diagnostic
use samkit::config::ExperimentConfig;
use samkit::experiment::{prepare, run_experiment};

fn main() {
    let text = std::fs::read_to_string("/tmp/diag_cfg.toml").unwrap();
    let cfg = ExperimentConfig::from_str(&text).unwrap();
    let prepared = prepare(&cfg).unwrap();
    println!("test_total_cost {:.2}  budget@16 {:.2}  em_volume {}", prepared.test_total_cost, prepared.test_total_cost/16.0, prepared.em_volume);
    for (c, p) in prepared.campaigns.iter().zip(&prepared.payoffs) {
        println!("campaign {} payoff {:.3} ecpa {:?} l {:?} train {} test {}", c.id, p, c.ecpa, c.win.map(|w| w.scale()), c.train.len(), c.test.len());
    }
    let out = run_experiment(&cfg).unwrap();
    for r in &out.rows {
        println!("{:>6} d{:<3} profit {:>12.2} cost {:>10.2} convs {:>6} bids {:>7} imps {:>7} margin {:?}", r.strategy, r.divisor, r.profit, r.cost, r.convs, r.bids, r.imps, r.margin.map(|m| (m*100.0).round()/100.0));
    }
    for e in &out.em_runs {
        println!("EM {} d{} lambda {:.4} converged {} iters {} underspend {}", e.strategy, e.divisor, e.lambda, e.converged, e.iterations, e.under_spend);
    }
}
