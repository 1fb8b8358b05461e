//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured values. Tolerances are pinned in the assertions.

use samkit::bidding::{
    sam1_bid_slope, sam1_lambda_closed_form, solve_lambda_bisect, solve_lambda_gd, BidFunction,
    LambdaCampaign, LambdaSolveConfig, SamFamily,
};
use samkit::config::ExperimentConfig;
use samkit::data::{
    generate_synthetic, split_train_test, CampaignGenSpec, CampaignId, CampaignSpec, SplitRule,
    SyntheticMarketSpec, WinFit,
};
use samkit::engine::{expected_cost, resolve_wins, run_em, EmConfig, SelectionScheme};
use samkit::market::{fit_long_tail_l, CvrDistribution, WinningFunction};
use samkit::portfolio::{
    estimate_margin_mc, optimize_selection, MarginEstimate, PortfolioModel, SelectionVector,
};
use samkit::replay::{replay, run_dynamic, ReplayConfig, RoundSchedule};
use samkit::experiment::{prepare, run_experiment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid search plus local refinement; the independent oracle for the
/// closed-form bids.
fn grid_max(objective: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let steps = 40_000;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=steps {
        let b = hi * i as f64 / steps as f64;
        let v = objective(b);
        if v > best.0 {
            best = (v, b);
        }
    }
    let span = hi / steps as f64;
    golden_max(&objective, (best.1 - span).max(0.0), (best.1 + span).min(hi))
}

#[test]
fn criterion_01_closed_form_bid_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for case in 0..50 {
        let theta: f64 = rng.gen_range(0.0005..0.5);
        let r: f64 = rng.gen_range(5.0..800.0);
        let lambda: f64 = rng.gen_range(-0.6..10.0);
        let l: f64 = rng.gen_range(0.5..300.0);

        // sam2 against the long-tail Lagrangian.
        let sam2 = BidFunction::Sam2 { lambda, l }.bid(theta, r, 0).unwrap();
        let hi = theta * r / (1.0 + lambda) + 1.0;
        let oracle2 = grid_max(|b| (theta * r - (1.0 + lambda) * b) * b / (b + l), hi);
        assert!(
            (sam2 - oracle2).abs() <= 1e-4 * oracle2.max(1e-12),
            "case {case}: sam2 {sam2} vs oracle {oracle2}"
        );

        // sam1 against the uniform-market Lagrangian, with the bound above
        // the interior maximizer (the closed form's validity domain).
        let sam1 = BidFunction::Sam1 { lambda }.bid(theta, r, 0).unwrap();
        let ul = (sam1 * rng.gen_range(1.5..50.0)).max(1e-6);
        let oracle1 = grid_max(|b| (theta * r - (1.0 + lambda) * b) * b / ul, ul);
        assert!(
            (sam1 - oracle1).abs() <= 1e-4 * oracle1.max(1e-12),
            "case {case}: sam1 {sam1} vs oracle {oracle1}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 01 PASS: 50 tuples matched within 1e-4 in {elapsed:?}");
}

#[test]
fn criterion_02_sam1_payoff_independence() {
    let (t, b, l, phi) = (1e5, 1000.0, 300.0, 0.0545455);
    let direct = sam1_bid_slope(b, l, t, phi);
    let mut slopes = Vec::new();
    for r in [10.0, 100.0, 1000.0] {
        let lambda = sam1_lambda_closed_form(r, t, b, l, phi).unwrap();
        slopes.push(r / (2.0 * (1.0 + lambda)));
    }
    for s in &slopes {
        assert!(
            (s - direct).abs() <= 1e-9,
            "slope {s} differs from payoff-free form {direct}"
        );
    }
    println!("criterion 02 PASS: slopes {slopes:?} all equal {direct:.9} to 1e-9");
}

#[test]
fn criterion_03_phi_oracle_beta_2_8() {
    let d = CvrDistribution::beta(2.0, 8.0).unwrap();
    let phi = d.second_moment();
    assert!((phi - 0.0545455).abs() <= 1e-7, "phi={phi}");

    // Quadrature oracle: midpoint rule on the unnormalized beta density,
    // normalized numerically.
    let steps = 4_000_000usize;
    let h = 1.0 / steps as f64;
    let mut norm = 0.0;
    let mut second = 0.0;
    for i in 0..steps {
        let t = (i as f64 + 0.5) * h;
        let p = t.powf(1.0) * (1.0 - t).powf(7.0);
        norm += p * h;
        second += t * t * p * h;
    }
    let quad = second / norm;
    assert!((phi - quad).abs() <= 1e-7, "phi={phi} quadrature={quad}");
    println!("criterion 03 PASS: phi={phi:.9} vs quadrature {quad:.9}");
}

#[test]
fn criterion_04_lambda_budget_condition() {
    let start = Instant::now();
    // Synthetic single campaign: Beta(2,8) CVR, long-tail prices with the
    // scale fit from the campaign's own prices.
    let spec = SyntheticMarketSpec::new(
        vec![CampaignGenSpec {
            id: CampaignId("solo".into()),
            cvr: CvrDistribution::beta(2.0, 8.0).unwrap(),
            market: WinningFunction::long_tail(0.06).unwrap(),
            payoff: None,
            records_per_hour: 500,
            cvr_drift: vec![],
            market_drift: vec![],
        }],
        40,
        4004,
    );
    let streams = generate_synthetic(&spec).unwrap();
    let prices: Vec<f64> = streams[0].records.iter().map(|r| r.winning_price).collect();
    let thetas: Vec<f64> = streams[0].records.iter().map(|r| r.pcvr).collect();
    let l = fit_long_tail_l(&prices).unwrap();
    let win = WinningFunction::long_tail(l).unwrap();
    let payoff = 0.8 * prices.iter().sum::<f64>()
        / streams[0].records.iter().filter(|r| r.converted).count().max(1) as f64;

    let campaigns = vec![LambdaCampaign { payoff, thetas: &thetas, weight: 1.0, win }];
    // Budget set to a quarter of the unconstrained spend so the multiplier is
    // strictly positive and interior.
    let spend0: f64 = thetas
        .iter()
        .map(|&t| {
            let b = BidFunction::Sam2 { lambda: 0.0, l }.bid(t, payoff, 0).unwrap();
            b * win.win_prob(b).unwrap()
        })
        .sum::<f64>()
        / thetas.len() as f64;
    let volume = 1e6;
    let budget = spend0 / 4.0 * volume;
    let target = budget / volume;

    let cfg = LambdaSolveConfig { tolerance: Some(1e-7 * target), ..Default::default() };
    let gd = solve_lambda_gd(SamFamily::Sam2, &campaigns, budget, volume, &cfg).unwrap();
    let bis = solve_lambda_bisect(SamFamily::Sam2, &campaigns, budget, volume, &cfg).unwrap();
    assert!(gd.converged, "gradient descent did not converge: {gd:?}");
    assert!(bis.converged, "bisection did not converge: {bis:?}");

    // Empirical mean spend at the solved multiplier within 0.1% of B/T.
    let spend_at = |lambda: f64| {
        thetas
            .iter()
            .map(|&t| {
                let b = BidFunction::Sam2 { lambda, l }.bid(t, payoff, 0).unwrap();
                b * win.win_prob(b).unwrap()
            })
            .sum::<f64>()
            / thetas.len() as f64
    };
    let achieved = spend_at(gd.lambda);
    assert!(
        (achieved - target).abs() <= 1e-3 * target,
        "spend {achieved} vs target {target}"
    );
    let rel = (gd.lambda - bis.lambda).abs() / (1.0 + bis.lambda.abs());
    assert!(rel <= 1e-4, "gd {} vs bisect {}", gd.lambda, bis.lambda);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 04 PASS: lambda gd={:.6} bisect={:.6}, spend within {:.4}% of B/T, {elapsed:?}",
        gd.lambda,
        bis.lambda,
        100.0 * (achieved - target).abs() / target
    );
}

fn four_campaign_fixture(seed: u64) -> Vec<CampaignSpec> {
    let params = [
        ("a", 2.0, 8.0, 0.05),
        ("b", 3.0, 7.0, 0.06),
        ("c", 1.5, 8.5, 0.04),
        ("d", 2.5, 9.0, 0.055),
    ];
    let gen: Vec<CampaignGenSpec> = params
        .iter()
        .map(|&(id, a, b, l)| CampaignGenSpec {
            id: CampaignId(id.into()),
            cvr: CvrDistribution::beta(a, b).unwrap(),
            market: WinningFunction::long_tail(l).unwrap(),
            payoff: None,
            records_per_hour: 80,
            cvr_drift: vec![],
            market_drift: vec![],
        })
        .collect();
    let streams = generate_synthetic(&SyntheticMarketSpec::new(gen, 96, seed)).unwrap();
    let (train, test) = split_train_test(&streams, SplitRule::LastDays(1)).unwrap();
    train
        .into_iter()
        .zip(test)
        .map(|(tr, te)| {
            let ecpa = tr.total_cost() / tr.conversions().max(1) as f64;
            CampaignSpec::from_logs(tr.id.clone(), tr.records, te.records, 0.8 * ecpa, 100, WinFit::LongTail)
                .unwrap()
        })
        .collect()
}

#[test]
fn criterion_05_em_monotone_and_fast() {
    let campaigns = four_campaign_fixture(5005);
    let mut cfg = EmConfig::new(30.0, 30_000, 777);
    cfg.selection = SelectionScheme::Portfolio { alpha: 0.5 };
    cfg.mc_reps = 30;
    let w = WinningFunction::long_tail(0.05).unwrap();
    let sol = run_em(&campaigns, &w, SamFamily::Sam2, &cfg).unwrap();
    assert!(sol.converged, "did not converge: {} iterations", sol.iterations);
    assert!(sol.iterations <= 5, "took {} EM iterations (> 5)", sol.iterations);
    for pair in sol.trace.windows(2) {
        let eps = 1e-6 * pair[0].objective.abs() + 10.0 * pair[0].objective_se;
        assert!(
            pair[1].objective >= pair[0].objective - eps,
            "objective dropped beyond eps: {} -> {} (eps {eps})",
            pair[0].objective,
            pair[1].objective
        );
    }
    println!(
        "criterion 05 PASS: converged in {} iterations, trace {:?}",
        sol.iterations,
        sol.trace.iter().map(|r| r.objective).collect::<Vec<_>>()
    );
}

fn sweep_config(extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 606
out_dir = "unused"

[data]
source = "synthetic"

[synthetic]
horizon_hours = 96

[[synthetic.campaigns]]
id = "a"
cvr = "beta(2,8)"
market = "longtail(0.05)"
records_per_hour = 60

[[synthetic.campaigns]]
id = "b"
cvr = "beta(3,7)"
market = "longtail(0.06)"
records_per_hour = 60

[split]
last_days = 1

{extra}
"#
    );
    ExperimentConfig::from_str(&text).unwrap()
}

#[test]
fn criterion_06_budget_feasibility() {
    // Full sweep: every replay must respect its budget exactly.
    let cfg = sweep_config(
        r#"
[run]
strategies = ["const", "rand", "truth", "lin", "ortb", "sam1", "sam2"]
selections = ["uniform", "portfolio"]
divisors = [2, 4, 8, 16, 32, 64, 128, 256]

[em]
mc_reps = 20
"#,
    );
    let prepared = prepare(&cfg).unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 7 * 2 * 8);
    for row in &out.rows {
        let budget = prepared.test_total_cost / row.divisor as f64;
        assert!(
            row.cost <= budget,
            "{}/{} at divisor {} spent {} over budget {}",
            row.strategy,
            row.selection,
            row.divisor,
            row.cost,
            budget
        );
    }

    // EM solutions keep the plug-in expected cost within 0.1% of the budget.
    let wins = resolve_wins(&prepared.campaigns, &prepared.global_win, true);
    for divisor in [2u32, 16, 256] {
        let budget = prepared.test_total_cost / divisor as f64;
        let mut em_cfg = EmConfig::new(budget, prepared.em_volume, cfg.seed);
        em_cfg.mc_reps = 20;
        let sol = run_em(&prepared.campaigns, &prepared.global_win, SamFamily::Sam2, &em_cfg).unwrap();
        let cost =
            expected_cost(&sol.v, &sol.bids, &prepared.campaigns, &wins, prepared.em_volume).unwrap();
        assert!(
            cost <= budget * 1.001,
            "divisor {divisor}: plug-in E[C]={cost} exceeds B*1.001={}",
            budget * 1.001
        );
    }
    println!("criterion 06 PASS: {} sweep rows within budget; E[C] <= 1.001*B", out.rows.len());
}

#[test]
fn criterion_07_portfolio_solver_vs_grid() {
    use rayon::prelude::*;
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let mut models = Vec::new();
    for _ in 0..100 {
        let est: Vec<MarginEstimate> = (0..3)
            .map(|_| MarginEstimate {
                mu: rng.gen_range(-0.3..1.0),
                sigma: rng.gen_range(0.02..0.7),
                n_samples: 10,
            })
            .collect();
        let mut corr = vec![vec![1.0; 3]; 3];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let b = rng.gen_range(-0.95..0.95);
                corr[i][j] = b;
                corr[j][i] = b;
            }
        }
        let alpha = rng.gen_range(0.05..5.0);
        models.push((PortfolioModel::from_margins(&est, &corr).unwrap(), alpha));
    }

    let objective = |m: &PortfolioModel, alpha: f64, v: &[f64]| {
        let mu: f64 = v.iter().zip(m.mu()).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                var += v[i] * m.cov()[i][j] * v[j];
            }
        }
        mu - alpha * var
    };

    models.par_iter().for_each(|(model, alpha)| {
        let v = optimize_selection(model, *alpha).unwrap();
        let solver_obj = objective(model, *alpha, v.as_slice());
        // Dense simplex grid, step 1e-3.
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=1000usize {
            for j in 0..=(1000 - i) {
                let cand = [i as f64 / 1000.0, j as f64 / 1000.0, (1000 - i - j) as f64 / 1000.0];
                let o = objective(model, *alpha, &cand);
                if o > grid_best {
                    grid_best = o;
                }
            }
        }
        assert!(
            solver_obj >= grid_best - 1e-5,
            "solver {solver_obj} below grid {grid_best} (alpha {alpha})"
        );
    });

    // alpha = 0 returns the argmax-mu vertex.
    for (model, _) in models.iter().take(20) {
        let v = optimize_selection(model, 0.0).unwrap();
        let best = model
            .mu()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(v.as_slice()[best], 1.0);
    }
    println!("criterion 07 PASS: 100 random models match the 1e-3 simplex grid within 1e-5");
}

/// The qualitative Table-2 fixture: 4 campaigns, ~200k test auctions, easy
/// payoffs.
fn table2_config(divisors: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 808
out_dir = "unused"

[data]
source = "synthetic"

[synthetic]
horizon_hours = 240

[[synthetic.campaigns]]
id = "a"
cvr = "beta(2,8)"
market = "longtail(0.05)"
records_per_hour = 700

[[synthetic.campaigns]]
id = "b"
cvr = "beta(3,7)"
market = "longtail(0.07)"
records_per_hour = 700

[[synthetic.campaigns]]
id = "c"
cvr = "beta(1.5,8.5)"
market = "longtail(0.04)"
records_per_hour = 700

[[synthetic.campaigns]]
id = "d"
cvr = "beta(2.5,9)"
market = "longtail(0.06)"
records_per_hour = 700

[split]
last_days = 3

[payoff]
mode = "easy"

[run]
strategies = ["const", "rand", "truth", "lin", "ortb", "sam2"]
selections = ["uniform"]
divisors = [{divisors}]

[em]
mc_reps = 20
"#
    );
    ExperimentConfig::from_str(&text).unwrap()
}

#[test]
fn criterion_08_qualitative_strategy_ordering() {
    let start = Instant::now();
    let cfg = table2_config("2, 16");
    let out = run_experiment(&cfg).unwrap();
    let profit = |strategy: &str, divisor: u32| {
        out.rows
            .iter()
            .find(|r| r.strategy == strategy && r.divisor == divisor)
            .unwrap_or_else(|| panic!("row {strategy}/{divisor} missing"))
            .profit
    };
    let test_auctions: u64 = out.rows.iter().find(|r| r.divisor == 16).map(|_| 0).unwrap_or(0);
    let _ = test_auctions;

    let sam2_16 = profit("sam2", 16);
    for other in ["lin", "ortb", "truth", "const", "rand"] {
        let p = profit(other, 16);
        assert!(
            sam2_16 >= p,
            "at divisor 16 sam2 ({sam2_16:.2}) must beat {other} ({p:.2})"
        );
    }
    let sam2_2 = profit("sam2", 2);
    let truth_2 = profit("truth", 2);
    assert!(
        (truth_2 - sam2_2).abs() <= 0.10 * sam2_2,
        "at divisor 2 truth ({truth_2:.2}) must be within 10% of sam2 ({sam2_2:.2})"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "criterion 08 PASS: d16 sam2={sam2_16:.2} >= all baselines; d2 truth={truth_2:.2} within 10% of sam2={sam2_2:.2}; {elapsed:?}"
    );
}

/// Heterogeneous-risk fixture for selection comparisons: campaign "spiky" has
/// a skewed CVR and a deliberately rich payoff (high margin, high variance);
/// the others are stable with modest payoffs.
fn risk_fixture(seed: u64) -> (Vec<CampaignSpec>, WinningFunction) {
    let gen = vec![
        CampaignGenSpec {
            id: CampaignId("spiky".into()),
            cvr: CvrDistribution::beta(0.3, 25.0).unwrap(),
            market: WinningFunction::long_tail(0.05).unwrap(),
            payoff: None,
            records_per_hour: 200,
            cvr_drift: vec![],
            market_drift: vec![],
        },
        CampaignGenSpec {
            id: CampaignId("steady1".into()),
            cvr: CvrDistribution::beta(4.0, 16.0).unwrap(),
            market: WinningFunction::long_tail(0.05).unwrap(),
            payoff: None,
            records_per_hour: 200,
            cvr_drift: vec![],
            market_drift: vec![],
        },
        CampaignGenSpec {
            id: CampaignId("steady2".into()),
            cvr: CvrDistribution::beta(5.0, 15.0).unwrap(),
            market: WinningFunction::long_tail(0.06).unwrap(),
            payoff: None,
            records_per_hour: 200,
            cvr_drift: vec![],
            market_drift: vec![],
        },
        CampaignGenSpec {
            id: CampaignId("steady3".into()),
            cvr: CvrDistribution::beta(6.0, 14.0).unwrap(),
            market: WinningFunction::long_tail(0.055).unwrap(),
            payoff: None,
            records_per_hour: 200,
            cvr_drift: vec![],
            market_drift: vec![],
        },
    ];
    let streams = generate_synthetic(&SyntheticMarketSpec::new(gen, 96, seed)).unwrap();
    let (train, test) = split_train_test(&streams, SplitRule::LastDays(3)).unwrap();
    let campaigns: Vec<CampaignSpec> = train
        .into_iter()
        .zip(test)
        .enumerate()
        .map(|(i, (tr, te))| {
            let ecpa = tr.total_cost() / tr.conversions().max(1) as f64;
            // Rich contract on the spiky campaign, modest on the others.
            let payoff = if i == 0 { 1.5 * ecpa } else { 0.7 * ecpa };
            CampaignSpec::from_logs(tr.id.clone(), tr.records, te.records, payoff, 100, WinFit::LongTail)
                .unwrap()
        })
        .collect();
    (campaigns, WinningFunction::long_tail(0.05).unwrap())
}

#[test]
fn criterion_09_selection_ordering_and_variance() {
    let base_seed = 909;
    let (campaigns, global_win) = risk_fixture(base_seed);
    let test_cost: f64 = campaigns
        .iter()
        .flat_map(|c| c.test.iter())
        .map(|r| r.winning_price)
        .sum();
    let budget = test_cost / 16.0;
    let volume: usize = campaigns.iter().map(|c| c.test.len()).sum();
    let payoffs: Vec<f64> = campaigns.iter().map(|c| c.payoff).collect();

    // Train each selection scheme once on the shared training slice.
    let mut solutions = Vec::new();
    for scheme in [
        SelectionScheme::Portfolio { alpha: 0.1 },
        SelectionScheme::Greedy,
        SelectionScheme::Uniform,
    ] {
        let mut cfg = EmConfig::new(budget, volume, 4242);
        cfg.selection = scheme;
        cfg.mc_reps = 30;
        solutions.push(run_em(&campaigns, &global_win, SamFamily::Sam2, &cfg).unwrap());
    }

    // Deploy on 20 fresh market realizations (new test-period draws of the
    // same generators) and collect per-seed profits.
    let mut profits = vec![Vec::new(); 3];
    for s in 0..20u64 {
        let (fresh, _) = risk_fixture(base_seed + 1 + s);
        let streams: Vec<_> = fresh
            .iter()
            .map(|c| samkit::data::CampaignStream { id: c.id.clone(), records: c.test.clone() })
            .collect();
        for (k, sol) in solutions.iter().enumerate() {
            let cfg = ReplayConfig::with_budget(budget, 100 + s);
            let report = replay(&streams, &sol.bids, &payoffs, &sol.v, &cfg).unwrap();
            profits[k].push(report.profit);
        }
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64]| {
        let m = mean(xs);
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (p_mean, g_var, u_mean) = (mean(&profits[0]), var(&profits[1]), mean(&profits[2]));
    let p_var = var(&profits[0]);
    assert!(
        p_mean >= u_mean,
        "portfolio mean profit {p_mean:.2} below uniform {u_mean:.2}"
    );
    assert!(
        p_var <= g_var,
        "portfolio variance {p_var:.2} above greedy {g_var:.2}"
    );
    println!(
        "criterion 09 PASS: portfolio mean {p_mean:.2} >= uniform {u_mean:.2}; portfolio var {p_var:.2} <= greedy var {g_var:.2}"
    );
}

#[test]
fn criterion_10_dynamic_beats_static_under_drift() {
    let start = Instant::now();
    // 96h horizon: 24h training, 72h test with upward CVR drift at test
    // hours 24 and 48 (absolute hours 48 and 72).
    let gen: Vec<CampaignGenSpec> = [("a", 0.05), ("b", 0.06), ("c", 0.045), ("d", 0.055)]
        .iter()
        .map(|&(id, l)| CampaignGenSpec {
            id: CampaignId(id.into()),
            cvr: CvrDistribution::beta(2.0, 8.0).unwrap(),
            market: WinningFunction::long_tail(l).unwrap(),
            payoff: None,
            records_per_hour: 250,
            cvr_drift: vec![
                (48, CvrDistribution::beta(4.0, 6.0).unwrap()),
                (72, CvrDistribution::beta(6.0, 4.0).unwrap()),
            ],
            market_drift: vec![],
        })
        .collect();
    let streams = generate_synthetic(&SyntheticMarketSpec::new(gen, 96, 1010)).unwrap();
    let (train, test) = split_train_test(&streams, SplitRule::LastDays(3)).unwrap();
    let campaigns: Vec<CampaignSpec> = train
        .into_iter()
        .zip(test)
        .map(|(tr, te)| {
            let ecpa = tr.total_cost() / tr.conversions().max(1) as f64;
            CampaignSpec::from_logs(tr.id.clone(), tr.records, te.records, 0.8 * ecpa, 100, WinFit::LongTail)
                .unwrap()
        })
        .collect();
    let global_win = WinningFunction::long_tail(0.05).unwrap();
    let test_cost: f64 = campaigns
        .iter()
        .flat_map(|c| c.test.iter())
        .map(|r| r.winning_price)
        .sum();
    let budget = test_cost / 16.0;
    let volume: usize = campaigns.iter().map(|c| c.test.len()).sum();

    let mut em_cfg = EmConfig::new(budget, volume, 2020);
    em_cfg.selection = SelectionScheme::Portfolio { alpha: 0.1 };
    em_cfg.mc_reps = 20;
    let replay_cfg = ReplayConfig::with_budget(budget, 3030);

    // Static: one round covering the whole horizon.
    let static_rounds = run_dynamic(
        &campaigns,
        &global_win,
        SamFamily::Sam2,
        &RoundSchedule { horizon_hours: 72, period_hours: 72 },
        &em_cfg,
        &replay_cfg,
    )
    .unwrap();
    let static_profit: f64 = static_rounds
        .iter()
        .filter_map(|r| r.report.as_ref().map(|rep| rep.profit))
        .sum();

    // Dynamic: 6-hour rounds, re-trained on the previous round's data.
    let dynamic_rounds = run_dynamic(
        &campaigns,
        &global_win,
        SamFamily::Sam2,
        &RoundSchedule { horizon_hours: 72, period_hours: 6 },
        &em_cfg,
        &replay_cfg,
    )
    .unwrap();
    assert_eq!(dynamic_rounds.len(), 12);
    let dynamic_profit: f64 = dynamic_rounds
        .iter()
        .filter_map(|r| r.report.as_ref().map(|rep| rep.profit))
        .sum();

    assert!(
        dynamic_profit >= 1.2 * static_profit,
        "dynamic {dynamic_profit:.2} below 1.2x static {static_profit:.2}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "took {elapsed:?}");
    println!(
        "criterion 10 PASS: dynamic {dynamic_profit:.2} >= 1.2 * static {static_profit:.2}; {elapsed:?}"
    );
}

#[test]
fn criterion_11_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let base = sweep_config(
        r#"
[run]
strategies = ["truth", "sam2"]
selections = ["uniform", "portfolio"]
divisors = [8, 32]

[em]
mc_reps = 20
"#,
    );
    let mut first = base.clone();
    first.out_dir = dir.path().join("run1").display().to_string();
    samkit::experiment::cmd_run(&first).unwrap();
    let mut second = base;
    second.out_dir = dir.path().join("run2").display().to_string();
    samkit::experiment::cmd_run(&second).unwrap();

    let a = std::fs::read(dir.path().join("run1/report.csv")).unwrap();
    let b = std::fs::read(dir.path().join("run2/report.csv")).unwrap();
    assert_eq!(a, b, "report.csv differs between identical runs");
    println!("criterion 11 PASS: report.csv byte-identical across runs ({} bytes)", a.len());
}

#[test]
fn criterion_12_mc_margin_matches_enumeration() {
    // Two records with distinct CVRs under truth bidding, volume 2: the four
    // ordered draws are equally likely; enumerate them by hand.
    let payoff = 10.0;
    let (t1, t2) = (0.1, 0.3);
    let mk = |ts: i64, pcvr: f64| samkit::data::BidRecord {
        timestamp_ms: ts,
        campaign: CampaignId("e".into()),
        pcvr,
        winning_price: 1.0,
        converted: false,
        feature_hash: None,
    };
    let campaign = CampaignSpec::new(
        CampaignId("e".into()),
        vec![mk(0, t1), mk(1, t2)],
        vec![],
        payoff,
        CvrDistribution::point_mass(0.2).unwrap(),
        None,
    )
    .unwrap();
    let win = WinningFunction::long_tail(2.0).unwrap();

    let value = |theta: f64| {
        let b = payoff * theta;
        let w = b / (b + 2.0);
        ((theta * payoff - b) * w, b * w)
    };
    let (p1, c1) = value(t1);
    let (p2, c2) = value(t2);
    let gammas = [
        (p1 + p1) / (c1 + c1),
        (p1 + p2) / (c1 + c2),
        (p2 + p1) / (c2 + c1),
        (p2 + p2) / (c2 + c2),
    ];
    let mu = gammas.iter().sum::<f64>() / 4.0;
    let sigma =
        (gammas.iter().map(|g| (g - mu) * (g - mu)).sum::<f64>() / 4.0).sqrt();

    let est = estimate_margin_mc(&campaign, &BidFunction::Truth, &win, 2, 64, 5).unwrap();
    assert!((est.mu - mu).abs() <= 1e-12, "mu {} vs {}", est.mu, mu);
    assert!((est.sigma - sigma).abs() <= 1e-12, "sigma {} vs {}", est.sigma, sigma);
    println!("criterion 12 PASS: mu={mu:.15} sigma={sigma:.15} matched to 1e-12");
}

// The spec's invariant that the selection always lands on the simplex, and
// that replays under one-hot vectors stay consistent, are exercised by the
// criteria above via SelectionVector's constructor checks.
#[test]
fn selection_vectors_from_em_always_satisfy_the_simplex() {
    let campaigns = four_campaign_fixture(1313);
    let mut cfg = EmConfig::new(10.0, 10_000, 1);
    cfg.mc_reps = 10;
    cfg.selection = SelectionScheme::Portfolio { alpha: 1.0 };
    let sol = run_em(
        &campaigns,
        &WinningFunction::long_tail(0.05).unwrap(),
        SamFamily::Sam2,
        &cfg,
    )
    .unwrap();
    let sum: f64 = sol.v.as_slice().iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!(SelectionVector::new(sol.v.as_slice().to_vec()).is_ok());
}
