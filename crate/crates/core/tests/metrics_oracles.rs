mod common;

use arena_core::agents::Strategy;
use arena_core::games::OutcomeKind;
use arena_core::gateway::FixtureBackend;
use arena_core::metrics::*;
use arena_core::orchestrator::{execute_all, expand_matrix, ExecOptions, ExperimentConfig, RunRecord};
use arena_core::protocol::{GameKind, Role};
use common::*;
use proptest::prelude::*;

fn rate_cell(r: RateSummary) -> String {
    format!("{:.2}% ± {:.2}%", 100.0 * r.rate, 100.0 * r.std_err)
}

#[test]
fn acceptance_nine_of_ten() {
    let mut records: Vec<RunRecord> = (0..9).map(|i| ultimatum(30 + i, true)).collect();
    records.push(ultimatum(30, false));
    let r = acceptance_rate(&records).unwrap();
    assert_eq!((r.successes, r.n), (9, 10));
    assert_eq!(r.rate, 0.9);
}

#[test]
fn all_agreements_show_zero_spread() {
    let records: Vec<RunRecord> = (0..12).map(|i| ultimatum(i, true)).collect();
    let r = acceptance_rate(&records).unwrap();
    assert_eq!(rate_cell(r), "100.00% ± 0.00%");
}

#[test]
fn fifty_seven_record_set_matches_hand_computation() {
    let mut records: Vec<RunRecord> = (0..56).map(|i| ultimatum(i % 40, true)).collect();
    records.push(ultimatum(5, false));
    let r = acceptance_rate(&records).unwrap();
    let p: f64 = 56.0 / 57.0;
    let se = (p * (1.0 - p) / 57.0).sqrt();
    assert!(close(r.rate, p, 1e-15));
    assert!(close(r.std_err, se, 1e-12));
    assert_eq!(rate_cell(r), format!("98.25% ± {:.2}%", 100.0 * se));
    let groups = aggregate(&records, &["language"]).unwrap();
    let table = metrics_table(&groups, GameKind::Ultimatum).unwrap();
    assert_eq!(table.rows[0][1], rate_cell(r));
}

/// Some n ≤ `max_n` reproduces both printed figures of a reference rate cell.
fn consistent_n(rate_pct: f64, pm_pct: f64, max_n: u64, spread: impl Fn(&RateSummary) -> f64) -> Option<(u64, u64)> {
    (1..=max_n).flat_map(|n| (0..=n).map(move |k| (k, n))).find(|&(k, n)| {
        let r = RateSummary::new(k, n).unwrap();
        format!("{:.2}", 100.0 * r.rate) == format!("{rate_pct:.2}")
            && format!("{:.2}", 100.0 * spread(&r)) == format!("{pm_pct:.2}")
    })
}

#[test]
fn ultimatum_table_rates_carry_binomial_standard_errors() {
    // Reference Ultimatum acceptance and win-rate cells, at most 120 runs per language.
    for (rate, pm) in
        [(98.25, 1.23), (92.45, 2.57), (87.61, 3.10), (94.74, 2.09), (96.04, 1.94), (86.44, 4.46), (70.97, 5.76)]
    {
        assert!(consistent_n(rate, pm, 120, |r| r.std_err).is_some(), "{rate} ± {pm}");
    }
}

#[test]
fn buysell_table_rates_carry_sample_bernoulli_std() {
    for (rate, pm) in [(97.44, 15.87), (98.21, 13.30), (98.23, 13.24)] {
        assert!(consistent_n(rate, pm, 120, |r| r.sample_std).is_some(), "{rate} ± {pm}");
    }
    assert!(consistent_n(97.44, 15.87, 120, |r| r.std).is_none());
}

#[test]
fn payoff_mean_counts_rejections_as_zero() {
    let records = vec![ultimatum(30, true), ultimatum(30, false)];
    assert_eq!(records[0].utilities, [70, 30]);
    let p1 = payoff_stats(&records, Role::Player1).unwrap();
    assert_eq!((p1.mean, p1.n), (35.0, 2));
}

#[test]
fn reference_gujarati_row_obeys_the_identity() {
    let (p1, p2, acceptance) = (52.49_f64, 39.96_f64, 92.45_f64);
    assert!((p1 + p2 - acceptance).abs() < 0.005 + 1e-9);
}

proptest! {
    #[test]
    fn ultimatum_identity_on_any_log(runs in prop::collection::vec((0i64..=100, any::<bool>()), 1..40)) {
        let records: Vec<RunRecord> = runs.iter().map(|&(s, a)| ultimatum(s, a)).collect();
        let acc = acceptance_rate(&records).unwrap();
        let p1 = payoff_stats(&records, Role::Player1).unwrap();
        let p2 = payoff_stats(&records, Role::Player2).unwrap();
        let lhs = p1.mean + p2.mean;
        let rhs = 100.0 * acc.rate;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn resource_payoff_means_sum_to_sixty(seeds in prop::collection::vec(any::<u64>(), 1..20)) {
        let records: Vec<RunRecord> = seeds
            .iter()
            .map(|&s| run(defaults(GameKind::ResourceExchange), Strategy::RandomLegal { seed: s }, Strategy::RandomLegal { seed: s ^ 1 }, s))
            .collect();
        let p1 = payoff_stats(&records, Role::Player1).unwrap();
        let p2 = payoff_stats(&records, Role::Player2).unwrap();
        prop_assert!((p1.mean + p2.mean - 60.0).abs() < 1e-9);
    }

    #[test]
    fn merged_shards_equal_the_union(seeds in prop::collection::vec(any::<u64>(), 2..30), cut in 0usize..30) {
        let records: Vec<RunRecord> = seeds
            .iter()
            .map(|&s| run(defaults(GameKind::Ultimatum), Strategy::RandomLegal { seed: s }, Strategy::RandomLegal { seed: !s }, s))
            .collect();
        let cut = cut.min(records.len());
        let whole = aggregate(&records, &["language"]).unwrap().remove(0);
        let (mut a, mut b) = (GroupAccumulator::default(), GroupAccumulator::default());
        records[..cut].iter().for_each(|r| a.push(r));
        records[cut..].iter().for_each(|r| b.push(r));
        a.merge(&b);
        let merged = a.finish(whole.key.clone());
        prop_assert_eq!(merged.runs, whole.runs);
        prop_assert_eq!(merged.acceptance, whole.acceptance);
        prop_assert_eq!(merged.win_rate_p1, whole.win_rate_p1);
        for (m, w) in [(merged.payoff_p1, whole.payoff_p1), (merged.rounds, whole.rounds), (merged.initial_offer, whole.initial_offer)] {
            match (m, w) {
                (Some(m), Some(w)) => {
                    prop_assert_eq!(m.n, w.n);
                    prop_assert!(close(m.mean, w.mean, 1e-12) && close(m.std, w.std, 1e-9));
                }
                (m, w) => prop_assert_eq!(m, w),
            }
        }
    }
}

#[test]
fn win_rate_excludes_draws() {
    let mut records: Vec<RunRecord> = (0..7).map(|_| ultimatum(30, true)).collect();
    records.extend((0..2).map(|_| ultimatum(70, true)));
    records.push(ultimatum(50, true));
    let w = win_rate_p1(&records).unwrap();
    assert_eq!((w.successes, w.n), (7, 9));
    assert!((w.rate - 7.0 / 9.0).abs() < 1e-15);

    let rejections: Vec<RunRecord> = (0..4).map(|i| ultimatum(10 * i, false)).collect();
    assert_eq!(win_rate_p1(&rejections).unwrap_err(), MetricError::AllDraws);
    let groups = aggregate(&rejections, &["language"]).unwrap();
    assert_eq!(groups[0].win_rate_p1, None);
    assert_eq!(metrics_table(&groups, GameKind::Ultimatum).unwrap().rows[0][5], "n/a");
}

#[test]
fn win_rate_equals_recount_over_a_random_tournament() {
    for kind in GameKind::ALL {
        let records: Vec<RunRecord> = (0..300)
            .map(|s| {
                run(defaults(kind), Strategy::RandomLegal { seed: s }, Strategy::RandomLegal { seed: s + 1000 }, s)
            })
            .collect();
        let (mut p1, mut p2) = (0u64, 0u64);
        for r in records.iter().filter(|r| r.outcome != OutcomeKind::ProtocolFailure) {
            let [a, b] = r.utilities;
            if a > b {
                p1 += 1;
            } else if b > a {
                p2 += 1;
            }
        }
        let w = win_rate_p1(&records).unwrap();
        assert_eq!((w.successes, w.n), (p1, p1 + p2), "{kind}");
        assert!((0.0..=1.0).contains(&w.rate));
    }
}

#[test]
fn initial_offer_statistics() {
    let mut records = vec![ultimatum(20, true), ultimatum(25, false), ultimatum(20, true)];
    let s = initial_offer_stats(&records).unwrap();
    assert_eq!(format!("{:.2}", s.mean), "21.67");
    assert_eq!(s.n, 3);
    records.push(setup_failure(GameKind::Ultimatum));
    assert_eq!(records[3].initial_offer, None);
    assert_eq!(initial_offer_stats(&records).unwrap().n, 3);

    let fixed: Vec<RunRecord> = (0..5)
        .map(|s| {
            run(
                defaults(GameKind::Ultimatum),
                Strategy::GridProposer { offers: vec![50, 40] },
                Strategy::AlwaysReject,
                s,
            )
        })
        .collect();
    let s = initial_offer_stats(&fixed).unwrap();
    assert_eq!((s.mean, s.std, s.n), (50.0, 0.0, 5));
    assert_eq!(initial_offer_stats(&[setup_failure(GameKind::Ultimatum)]).unwrap_err(), MetricError::EmptyInput);
}

fn sale(price: i64) -> RunRecord {
    run(defaults(GameKind::BuySell), Strategy::FixedPriceSeller { price }, Strategy::AlwaysAccept, price as u64)
}

#[test]
fn advantages_count_agreements_only() {
    let (s, b) = advantage_stats(&[sale(47)]).unwrap();
    assert_eq!((s.mean, b.mean), (7.0, 13.0));

    let mut records = vec![sale(47), sale(50), sale(55)];
    for seed in 0..2 {
        let r = run(
            defaults(GameKind::BuySell),
            Strategy::FixedPriceSeller { price: 70 },
            Strategy::ReservationBuyer,
            seed,
        );
        assert_eq!(r.outcome, OutcomeKind::NoDealTimeout);
        records.push(r);
    }
    let (s, b) = advantage_stats(&records).unwrap();
    assert_eq!((s.n, b.n), (3, 3));
    assert!((s.mean + b.mean - 20.0).abs() < 1e-12);
    assert_eq!(acceptance_rate(&records).unwrap().n, 5);
}

#[test]
fn advantage_means_sum_to_the_zone_width() {
    let records: Vec<RunRecord> = (0..400)
        .map(|s| {
            run(
                defaults(GameKind::BuySell),
                Strategy::RandomLegal { seed: s },
                Strategy::RandomLegal { seed: s * 7 + 3 },
                s,
            )
        })
        .collect();
    let (s, b) = advantage_stats(&records).unwrap();
    assert!(s.n > 0);
    assert!((s.mean + b.mean - 20.0).abs() < 1e-9);
    assert!((s.std - b.std).abs() < 1e-9);
}

#[test]
fn trade_volume_counts_both_legs() {
    let backend = FixtureBackend::default()
        .with_replies("resource_propose", vec![r#"<rationale>swap</rationale><propose give="X:5" take="Y:3"/>"#.into()])
        .with_replies("resource_respond", vec!["<rationale>fine</rationale><accept/>".into()]);
    let traded = llm_run(defaults(GameKind::ResourceExchange), backend, 1);
    assert_eq!(traded.outcome, OutcomeKind::Agreement, "{:?}", traded.failure);
    assert_eq!(traded.utilities, [28, 32]);
    assert_eq!(trade_volume_stats(std::slice::from_ref(&traded)).unwrap().mean, 8.0);

    let idle = run(defaults(GameKind::ResourceExchange), Strategy::AlwaysReject, Strategy::AlwaysReject, 2);
    assert_ne!(idle.outcome, OutcomeKind::Agreement);
    let v = trade_volume_stats(&[traded, idle]).unwrap();
    assert_eq!((v.mean, v.n), (4.0, 2));
}

#[test]
fn trade_volume_equals_recount() {
    let records: Vec<RunRecord> = (0..300)
        .map(|s| {
            run(
                defaults(GameKind::ResourceExchange),
                Strategy::RandomLegal { seed: s },
                Strategy::RandomLegal { seed: s + 5 },
                s,
            )
        })
        .collect();
    let volumes: Vec<f64> =
        records.iter().map(|r| r.trades.iter().map(|t| t.give.total() + t.take.total()).sum::<u64>() as f64).collect();
    let (mean, std) = mean_std(&volumes);
    let v = trade_volume_stats(&records).unwrap();
    assert!(close(v.mean, mean, 1e-12) && close(v.std, std, 1e-9));
}

#[test]
fn rounds_statistics() {
    let mut picked = Vec::new();
    for want in [2, 3, 4] {
        let r = (0..500)
            .map(|s| {
                run(
                    defaults(GameKind::BuySell),
                    Strategy::RandomLegal { seed: s },
                    Strategy::RandomLegal { seed: s + 9 },
                    s,
                )
            })
            .find(|r| r.rounds == want)
            .expect("some seed gives the wanted length");
        picked.push(r);
    }
    let s = rounds_stats(&picked).unwrap();
    assert!((s.mean - 3.0).abs() < 1e-12);
    assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(ultimatum(40, true).rounds, 2);
    assert_eq!(ultimatum(40, false).rounds, 2);
}

#[test]
fn failures_only_reach_the_failure_rate() {
    let records = vec![ultimatum(30, true), ultimatum(30, false), setup_failure(GameKind::Ultimatum)];
    assert_eq!(acceptance_rate(&records).unwrap().n, 2);
    assert_eq!(payoff_stats(&records, Role::Player1).unwrap().n, 2);
    assert_eq!(rounds_stats(&records).unwrap().n, 2);
    let f = failure_rate(&records).unwrap();
    assert_eq!((f.successes, f.n), (1, 3));
    let table = metrics_table(&aggregate(&records, &["language"]).unwrap(), GameKind::Ultimatum).unwrap();
    assert!(table.notes.iter().any(|n| n.contains("English 1/3")));
}

#[test]
fn empty_and_mixed_inputs() {
    let none: Vec<RunRecord> = Vec::new();
    assert_eq!(acceptance_rate(&none).unwrap_err(), MetricError::EmptyInput);
    assert_eq!(rounds_stats(&none).unwrap_err(), MetricError::EmptyInput);
    let mixed = vec![ultimatum(30, true), sale(50)];
    assert_eq!(acceptance_rate(&mixed).unwrap_err(), MetricError::MixedGames);
    assert_eq!(aggregate(&mixed, &["model"]).unwrap_err(), MetricError::UnknownField("model".into()));
}

fn four_model_log(languages: &str) -> Vec<RunRecord> {
    let config = ExperimentConfig::from_toml_str(&format!(
        r#"
        seed = 11
        runs_per_cell = 3
        languages = {languages}
        [[models]]
        name = "m1"
        scripted = {{ strategy = "random_legal", seed = 1 }}
        [[models]]
        name = "m2"
        scripted = {{ strategy = "concession_proposer", start = 20, step = 5 }}
        [[models]]
        name = "m3"
        scripted = {{ strategy = "threshold_responder", t = 35 }}
        [[models]]
        name = "m4"
        scripted = {{ strategy = "always_accept" }}
        "#
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    execute_all(
        &expand_matrix(&config).unwrap(),
        &scripted_env(),
        &log,
        &ExecOptions { concurrency: 4, stop_after: None },
        |_| {},
    )
    .unwrap();
    let mut records = arena_core::orchestrator::read_log(&log).unwrap();
    records.sort_by(|a, b| a.run_id().cmp(b.run_id()));
    records
}

#[test]
fn language_tables_have_the_reference_column_sets() {
    let records = four_model_log(r#"["english", "gujarati", "hindi", "marwadi", "punjabi"]"#);
    let groups = aggregate(&records, &["language"]).unwrap();
    let expected: [(GameKind, &[&str]); 3] = [
        (
            GameKind::Ultimatum,
            &[
                "Language",
                "Acceptance Rate",
                "Initial Offer",
                "P1 Payoff",
                "P2 Payoff",
                "P1 Win Rate",
                "Conversation Rounds",
            ],
        ),
        (
            GameKind::BuySell,
            &[
                "Language",
                "Acceptance Rate",
                "Seller Advantage",
                "Buyer Advantage",
                "Conversation Rounds",
                "Player 1 Win Rate",
            ],
        ),
        (
            GameKind::ResourceExchange,
            &[
                "Language",
                "Acceptance Rate (%)",
                "Trade Volume",
                "P1 Payoff",
                "P2 Payoff",
                "P1 Win Rate (%)",
                "Conversation Rounds",
            ],
        ),
    ];
    for (kind, columns) in expected {
        let t = metrics_table(&groups, kind).unwrap();
        assert_eq!(t.columns, columns);
        assert_eq!(t.rows.len(), 5);
        let labels: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(labels, ["English", "Gujarati", "Hindi", "Marwadi", "Punjabi"]);
        assert!(t.rows.iter().all(|r| r.len() == columns.len()));
    }

    let mut csv = Vec::new();
    let ultimatum_only: Vec<GroupMetrics> =
        groups.iter().filter(|g| g.key.game == GameKind::Ultimatum).cloned().collect();
    export(&ultimatum_only, ExportFormat::Csv, &mut csv).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert!(lines.iter().all(|l| l.split(',').count() == CSV_COLUMNS.len()));
    let mut again = Vec::new();
    export(&ultimatum_only, ExportFormat::Csv, &mut again).unwrap();
    assert_eq!(csv, again);
}

#[test]
fn pair_grids_are_four_by_four_without_diagonal() {
    let records = four_model_log(r#"["hindi"]"#);
    let groups = aggregate(&records, &["language", "pair"]).unwrap();
    assert_eq!(groups.len(), 3 * 12);
    let grids = heatmap_grids(&groups).unwrap();
    assert_eq!(grids.len(), 3 * 2);
    for g in &grids {
        assert_eq!(g.labels, ["m1", "m2", "m3", "m4"]);
        assert_eq!(g.cells.len(), 4);
        for (i, row) in g.cells.iter().enumerate() {
            assert_eq!(row.len(), 4);
            for (j, cell) in row.iter().enumerate() {
                assert_eq!(i == j, *cell == Cell::Diagonal);
            }
        }
    }
    let text = render_heatmaps(&grids);
    let first: Vec<&str> = text.lines().take(6).collect();
    assert!(first[0].starts_with("# heatmap game=ultimatum language=Hindi metric=win_rate_p1"));
    assert_eq!(first[1], "P1\\P2,m1,m2,m3,m4");
    assert!(first[2].starts_with("m1,,"));
    assert!(first[5].ends_with(','));

    let language_only = aggregate(&records, &["language"]).unwrap();
    assert_eq!(heatmap_grids(&language_only).unwrap_err(), MetricError::NeedsPairGrouping);
    let mut out = Vec::new();
    export(&groups, ExportFormat::HeatmapGrid, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text);
}

#[test]
fn structured_records_round_trip() {
    let records = four_model_log(r#"["english"]"#);
    let groups = aggregate(&records, &["pair"]).unwrap();
    let mut out = Vec::new();
    export(&groups, ExportFormat::Records, &mut out).unwrap();
    let back: Vec<GroupMetrics> =
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, groups);
    assert!(groups.iter().all(|g| g.key.language.is_none() && g.key.model_p1.is_some()));
}
