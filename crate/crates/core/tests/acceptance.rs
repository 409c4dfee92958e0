//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arena_core::agents::{build_prompt, render_turn_prompt, LanguageFraming, Strategy};
use arena_core::games::*;
use arena_core::gateway::{ChatBackend, FixtureBackend, Gateway};
use arena_core::metrics::*;
use arena_core::orchestrator::*;
use arena_core::protocol::*;
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> Verdict {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let took = start.elapsed();
    let (verdict, detail) = match result {
        Ok(d) if d.starts_with("SKIP") => (Verdict::Skip, d.trim_start_matches("SKIP").trim().to_string()),
        Ok(d) if took > budget => (Verdict::Fail, format!("{d}; over the {}s budget", budget.as_secs())),
        Ok(d) => (Verdict::Pass, d),
        Err(e) => (Verdict::Fail, e),
    };
    let label = match verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("{label} {n} {name}: {detail} [{:.2}s]", took.as_secs_f64());
    verdict
}

// ---------------------------------------------------------------------------
// 1. Conservation

fn random_strategy(rng: &mut ChaCha8Rng, scale: i64) -> Strategy {
    match rng.gen_range(0..10) {
        0 => Strategy::ThresholdResponder { t: rng.gen_range(0..=scale) },
        1 => Strategy::GridProposer { offers: (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..=scale)).collect() },
        2 => Strategy::ConcessionProposer { start: rng.gen_range(0..=scale), step: rng.gen_range(-5..=5) },
        3 => Strategy::FixedPriceSeller { price: rng.gen_range(0..=scale) },
        4 => Strategy::ReservationBuyer,
        5 => Strategy::AlwaysAccept,
        6 => Strategy::AlwaysReject,
        _ => Strategy::RandomLegal { seed: rng.gen() },
    }
}

fn random_game(kind: GameKind, rng: &mut ChaCha8Rng) -> (GameConfig, i64) {
    let max_turns = rng.gen_range(2..=12);
    if rng.gen_bool(0.2) {
        let c = GameConfig::default_for(kind);
        let scale = match kind {
            GameKind::Ultimatum => 100,
            GameKind::BuySell => 100,
            GameKind::ResourceExchange => 25,
        };
        return (c, scale);
    }
    match kind {
        GameKind::Ultimatum => {
            let pool = rng.gen_range(1..=1000);
            (GameConfig::Ultimatum(UltimatumConfig { pool, max_turns }), i64::from(pool))
        }
        GameKind::BuySell => {
            let seller_min = rng.gen_range(0..=500);
            let buyer_max = seller_min + rng.gen_range(1..=500);
            (GameConfig::BuySell(BuySellConfig { seller_min, buyer_max, max_turns }), i64::from(buyer_max) + 50)
        }
        GameKind::ResourceExchange => {
            let bundle = |rng: &mut ChaCha8Rng| loop {
                let mut b = ResourceBundle::new();
                for k in ["X", "Y", "Z"] {
                    if rng.gen_bool(0.7) {
                        b.set(k, rng.gen_range(0..=30));
                    }
                }
                if b.total() > 0 {
                    return b;
                }
            };
            loop {
                let c = GameConfig::ResourceExchange(ResourceConfig {
                    endowment_p1: bundle(rng),
                    endowment_p2: bundle(rng),
                    max_turns,
                    ..ResourceConfig::default()
                });
                if c.validate().is_ok() {
                    return (c, 30);
                }
            }
        }
    }
}

fn conservation() -> Outcome {
    const GAMES: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut summary = Vec::new();
    for kind in [GameKind::Ultimatum, GameKind::BuySell, GameKind::ResourceExchange] {
        let mut agreements = 0u64;
        for i in 0..GAMES {
            let (game, scale) = random_game(kind, &mut rng);
            let (a, b) = (random_strategy(&mut rng, scale), random_strategy(&mut rng, scale));
            let r = run(game.clone(), a.clone(), b.clone(), rng.gen());
            let ctx = || format!("{kind} game {i}: {a:?} vs {b:?} in {game:?} -> {:?} {:?}", r.outcome, r.utilities);
            let issues = validate_record(&r);
            ensure(issues.is_empty(), || format!("{}: {issues:?}", ctx()))?;
            ensure(!r.is_failure(), || format!("{}: {:?}", ctx(), r.failure))?;
            let [u1, u2] = r.utilities;
            let agreed = r.outcome == OutcomeKind::Agreement;
            agreements += u64::from(agreed);
            let expected = match &game {
                GameConfig::Ultimatum(c) if agreed => i64::from(c.pool),
                GameConfig::Ultimatum(_) => 0,
                GameConfig::BuySell(c) if agreed => i64::from(c.buyer_max - c.seller_min),
                GameConfig::BuySell(_) => 0,
                GameConfig::ResourceExchange(c) => c.total_endowment() as i64,
            };
            ensure(u1 + u2 == expected, || format!("{}: sum {} != {expected}", ctx(), u1 + u2))?;
            if let GameConfig::ResourceExchange(c) = &game {
                if *c == ResourceConfig::default() {
                    ensure(u1 + u2 == 60, || format!("{}: default total {}", ctx(), u1 + u2))?;
                }
            }
        }
        summary.push(format!("{kind} {GAMES} games ({agreements} agreements)"));
    }
    Ok(summary.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Ultimatum identity

fn ultimatum_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for pool in [100u32, 1, 37, 1000] {
        let game = GameConfig::Ultimatum(UltimatumConfig { pool, ..UltimatumConfig::default() });
        let bank: Vec<RunRecord> = (0..300)
            .map(|i| {
                let p1 = random_strategy(&mut rng, i64::from(pool));
                let p2 = random_strategy(&mut rng, i64::from(pool));
                let mut r = run(game.clone(), p1, p2, i);
                if i % 29 == 0 {
                    r = execute_run(
                        &spec(i, game.clone(), llm("a", Role::Player1), llm("b", Role::Player2), i),
                        &scripted_env(),
                    );
                }
                r
            })
            .collect();
        for _ in 0..500 {
            let n = rng.gen_range(1..=80);
            let log: Vec<&RunRecord> = (0..n).map(|_| bank.choose(&mut rng).unwrap()).collect();
            let Ok(acc) = acceptance_rate(log.iter().copied()) else { continue };
            let m1 = payoff_stats(log.iter().copied(), Role::Player1).map_err(|e| e.to_string())?.mean;
            let m2 = payoff_stats(log.iter().copied(), Role::Player2).map_err(|e| e.to_string())?.mean;
            let target = f64::from(pool) * acc.rate;
            let rel = (m1 + m2 - target).abs() / target.abs().max(1.0);
            worst = worst.max(rel);
            ensure(rel <= 1e-9, || format!("pool {pool}: {m1} + {m2} vs {target}"))?;
            checked += 1;
        }
    }
    // Gujarati reference row, in hundredths: payoffs 52.49 and 39.96, acceptance 92.45%.
    let gujarati: [i64; 3] = [5249, 3996, 9245];
    ensure(gujarati[0] + gujarati[1] == gujarati[2], || "Gujarati reference row does not add up".into())?;
    Ok(format!("{checked} synthetic logs, worst relative error {worst:.1e}; Gujarati row 52.49 + 39.96 = 92.45"))
}

// ---------------------------------------------------------------------------
// 3. Oracle equivalence

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn oracle_equivalence() -> Outcome {
    let mut records = Vec::new();
    let (mut p1, mut p2, mut offers, mut rounds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut accepted, mut p1_wins, mut p2_wins) = (0u64, 0u64, 0u64);
    for t in 0..=100i64 {
        for offer in 0..=100i64 {
            let r = run(
                defaults(GameKind::Ultimatum),
                Strategy::GridProposer { offers: vec![offer] },
                Strategy::ThresholdResponder { t },
                (t * 101 + offer) as u64,
            );
            let takes = offer >= t;
            let u = if takes { [100 - offer, offer] } else { [0, 0] };
            let winner = match u[0].cmp(&u[1]) {
                std::cmp::Ordering::Greater => Winner::Player1,
                std::cmp::Ordering::Less => Winner::Player2,
                std::cmp::Ordering::Equal => Winner::Draw,
            };
            let kind = if takes { OutcomeKind::Agreement } else { OutcomeKind::Rejection };
            ensure(
                r.outcome == kind
                    && r.utilities == u
                    && r.winner == winner
                    && r.rounds == 2
                    && r.initial_offer == Some(offer as u32),
                || {
                    format!(
                        "offer {offer} t {t}: engine {:?} {:?} {:?} rounds {}",
                        r.outcome, r.utilities, r.winner, r.rounds
                    )
                },
            )?;
            accepted += u64::from(takes);
            p1_wins += u64::from(winner == Winner::Player1);
            p2_wins += u64::from(winner == Winner::Player2);
            p1.push(u[0] as f64);
            p2.push(u[1] as f64);
            offers.push(offer as f64);
            rounds.push(2.0);
            records.push(r);
        }
    }
    let n = records.len() as u64;
    ensure(n == 10_201, || format!("{n} games"))?;
    let acc = acceptance_rate(&records).map_err(|e| e.to_string())?;
    ensure(acc.successes == accepted && acc.n == n, || {
        format!("acceptance {}/{} vs {accepted}/{n}", acc.successes, acc.n)
    })?;
    let p = accepted as f64 / n as f64;
    ensure(same(acc.rate, p) && same(acc.std_err, (p * (1.0 - p) / n as f64).sqrt()), || "acceptance rate".into())?;
    let win = win_rate_p1(&records).map_err(|e| e.to_string())?;
    ensure(win.successes == p1_wins && win.n == p1_wins + p2_wins, || format!("win rate {}/{}", win.successes, win.n))?;
    for (name, got, xs) in [
        ("P1 payoff", payoff_stats(&records, Role::Player1), &p1),
        ("P2 payoff", payoff_stats(&records, Role::Player2), &p2),
        ("initial offer", initial_offer_stats(&records), &offers),
        ("rounds", rounds_stats(&records), &rounds),
    ] {
        let got = got.map_err(|e| format!("{name}: {e}"))?;
        let (mean, std) = two_pass(xs);
        ensure(got.n == n && same(got.mean, mean) && same(got.std, std), || {
            format!("{name}: {} ± {} vs {mean} ± {std}", got.mean, got.std)
        })?;
    }
    // Per-threshold groups through the grouped path.
    for t in [0usize, 1, 37, 50, 99, 100] {
        let slice = &records[t * 101..(t + 1) * 101];
        let acc = acceptance_rate(slice).map_err(|e| e.to_string())?;
        ensure(acc.successes == (101 - t) as u64, || format!("t {t}: {} accepted", acc.successes))?;
    }
    Ok(format!(
        "10201 games, {accepted} agreements, {p1_wins}/{} decisive wins for P1; all metrics equal",
        p1_wins + p2_wins
    ))
}

// ---------------------------------------------------------------------------
// 4. Protocol round-trip and fuzz

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[&str] = &[
        "a", "Z", " ", "\n", "<", ">", "/", "=", "\"", "&", ";", "amp", "lt", "0", "7", "४", "ગ", "é", "\u{200d}", "💰",
    ];
    (0..rng.gen_range(0..=max)).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn random_bundle(rng: &mut ChaCha8Rng) -> ResourceBundle {
    let mut b = ResourceBundle::new();
    for k in ["X", "Y", "gold", "w_2"] {
        if rng.gen_bool(0.6) {
            b.set(k, rng.gen_range(0..=60));
        }
    }
    b
}

fn random_message(rng: &mut ChaCha8Rng, kind: GameKind) -> Option<(AgentMessage, Bounds)> {
    let who = if rng.gen() { Role::Player1 } else { Role::Player2 };
    let bounds = match kind {
        GameKind::Ultimatum => Bounds::Ultimatum { pool: rng.gen_range(1..=10_000) },
        GameKind::BuySell => Bounds::BuySell,
        GameKind::ResourceExchange => Bounds::ResourceExchange { holdings: [random_bundle(rng), random_bundle(rng)] },
    };
    let action = match rng.gen_range(0..4) {
        0 => Action::Accept,
        1 => Action::Reject { is_final: rng.gen() },
        _ => Action::Propose {
            terms: match &bounds {
                Bounds::Ultimatum { pool } => Terms::Split { split_to_p2: rng.gen_range(0..=*pool) },
                Bounds::BuySell => Terms::Price { price: rng.gen() },
                Bounds::ResourceExchange { holdings } => {
                    let part = |b: &ResourceBundle, rng: &mut ChaCha8Rng| {
                        let mut out = ResourceBundle::new();
                        for (k, v) in b.iter() {
                            out.set(k, rng.gen_range(0..=v));
                        }
                        out
                    };
                    let give = part(&holdings[who.index()], rng);
                    let take = part(&holdings[who.other().index()], rng);
                    if give.is_empty() && take.is_empty() {
                        return None;
                    }
                    Terms::Trade { give, take }
                }
            },
        },
    };
    let rationale = random_text(rng, 120);
    Some((AgentMessage::canonical(who, &rationale, action, &bounds).ok()?, bounds))
}

fn protocol_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [GameKind::Ultimatum, GameKind::BuySell, GameKind::ResourceExchange] {
        let mut cases = 0;
        while cases < 1000 {
            let Some((msg, bounds)) = random_message(&mut rng, kind) else { continue };
            let text = serialize_message(&msg, &bounds).map_err(|e| format!("{kind}: serialize {e}"))?;
            let back =
                parse_message(&text, msg.speaker, &bounds).map_err(|e| format!("{kind}: parse {text:?}: {e}"))?;
            ensure(back == msg, || format!("{kind}: {text:?} parsed to {back:?}"))?;
            cases += 1;
        }
    }
    const FRAGMENTS: &[&str] = &[
        "<propose",
        "<accept/>",
        "<reject",
        "/>",
        ">",
        "<rationale>",
        "</rationale>",
        " split_to_p2=\"",
        " price=\"",
        " give=\"",
        " take=\"",
        "X:",
        "Y:",
        ",",
        "\"",
        " final=\"true\"",
        "99999999999999999999",
        "-3",
        "१२",
        "&lt;",
        "<accept>",
        "<PROPOSE",
        "'",
        "\u{0}",
    ];
    let holdings = [ResourceBundle::new().with("X", 25).with("Y", 5), ResourceBundle::new().with("X", 25).with("Y", 5)];
    let all_bounds = [Bounds::Ultimatum { pool: 100 }, Bounds::BuySell, Bounds::ResourceExchange { holdings }];
    let (mut inputs, mut parsed) = (0u64, 0u64);
    for i in 0..100_000u64 {
        let text = if i % 2 == 0 {
            (0..rng.gen_range(0..16)).map(|_| *FRAGMENTS.choose(&mut rng).unwrap()).collect::<String>()
                + &random_text(&mut rng, 10)
        } else {
            random_text(&mut rng, 200)
        };
        let bounds = &all_bounds[(i % 3) as usize];
        let result = catch_unwind(|| parse_message(&text, Role::Player1, bounds))
            .map_err(|_| format!("parser crashed on {text:?}"))?;
        if let Ok(m) = result {
            parsed += 1;
            ensure(m.raw_text == text, || format!("raw text not kept for {text:?}"))?;
        }
        inputs += 1;
    }
    Ok(format!("1000 round-trips per game; {inputs} fuzz inputs, 0 crashes ({parsed} parsed)"))
}

// ---------------------------------------------------------------------------
// 5. Orchestrator determinism and resume

const MATRIX: &str = r#"
seed = 1800
runs_per_cell = 10
[[models]]
name = "m-gpt-4o"
llm = { model_id = "gpt-4o" }
[[models]]
name = "m-gpt-3.5"
llm = { model_id = "gpt-3.5-turbo" }
[[models]]
name = "m-haiku"
llm = { model_id = "claude-3-haiku-20240307" }
[[models]]
name = "m-haiku-3.5"
llm = { model_id = "claude-3-5-haiku-20241022" }
"#;

fn sorted_lines(path: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_to_string(path).unwrap().lines().map(String::from).collect();
    v.sort();
    v
}

fn arena() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_arena"));
    c.env("RUST_LOG", "off").stdout(Stdio::null()).stderr(Stdio::null());
    c
}

fn determinism_and_resume() -> Outcome {
    let config = ExperimentConfig::from_toml_str(MATRIX).map_err(|e| e.to_string())?;
    let specs = expand_matrix(&config).map_err(|e| e.to_string())?;
    ensure(specs.len() == 1800, || format!("{} specs", specs.len()))?;
    let backend: Arc<dyn ChatBackend> = Arc::new(FixtureBackend::builtin());
    let env = RunEnv { backend: Some(backend), clock: fixed_clock() };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    execute_all(&specs, &env, &a, &ExecOptions { concurrency: 8, stop_after: None }, |_| {})
        .map_err(|e| e.to_string())?;
    execute_all(&specs, &env, &b, &ExecOptions { concurrency: 1, stop_after: None }, |_| {})
        .map_err(|e| e.to_string())?;
    let records = read_log(&a).map_err(|e| e.to_string())?;
    let mut ids: Vec<&str> = records.iter().map(|r| r.run_id()).collect();
    ids.sort();
    ids.dedup();
    ensure(records.len() == 1800 && ids.len() == 1800, || {
        format!("{} records, {} distinct", records.len(), ids.len())
    })?;
    let reference = sorted_lines(&a);
    ensure(reference == sorted_lines(&b), || "rerun produced different records".into())?;
    let failures = records.iter().filter(|r| r.is_failure()).count();

    // Kill a real process mid-run, then resume it.
    let cfg = dir.path().join("matrix.toml");
    fs::write(&cfg, MATRIX).map_err(|e| e.to_string())?;
    let killed = dir.path().join("killed.jsonl");
    let args = |cmd: &str, out: &PathBuf| -> Vec<String> {
        [
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--mock",
            "--fixed-clock",
            EPOCH,
            "--concurrency",
            "4",
        ]
        .map(String::from)
        .to_vec()
    };
    let mut child = arena().args(args("run", &killed)).spawn().map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut at_kill = 0;
    loop {
        at_kill = fs::read(&killed).map(|b| b.iter().filter(|&&c| c == b'\n').count()).unwrap_or(at_kill);
        if at_kill >= 300 || Instant::now() > deadline {
            break;
        }
        if child.try_wait().map_err(|e| e.to_string())?.is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    let _ = child.kill();
    let status = child.wait().map_err(|e| e.to_string())?;
    let interrupted = !status.success();
    if !interrupted {
        // Finished before the kill landed; fall back to a cut-short session.
        fs::remove_file(&killed).map_err(|e| e.to_string())?;
        let mut a = args("run", &killed);
        a.extend(["--stop-after".to_string(), "600".to_string()]);
        ensure(arena().args(a).status().map_err(|e| e.to_string())?.success(), || "partial run failed".into())?;
    }
    let before = fs::read(&killed).map(|b| b.iter().filter(|&&c| c == b'\n').count()).unwrap_or(0);
    let resumed = arena().args(args("resume", &killed)).status().map_err(|e| e.to_string())?;
    ensure(resumed.success(), || format!("resume exited {resumed}"))?;
    ensure(sorted_lines(&killed) == reference, || "resumed log differs from an uninterrupted run".into())?;
    let how = if interrupted { "killed" } else { "stopped" };
    Ok(format!(
        "1800 specs exactly once ({failures} protocol failures); rerun identical; {how} at {before} records, resume identical"
    ))
}

// ---------------------------------------------------------------------------
// 6. Analysis shape

fn demo(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file)
}

fn analyze(group: &str) -> Result<String, String> {
    let out = arena()
        .args(["analyze", "--log", demo("runs.jsonl").to_str().unwrap(), "--group-by", group])
        .stdout(Stdio::piped())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("analyze --group-by {group} exited {}", out.status))?;
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn analysis_shape() -> Outcome {
    let expected: [(&str, &[&str]); 3] = [
        (
            "Ultimatum Game",
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
            "Buy-Sell Game",
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
            "Resource Exchange Game",
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
    let text = analyze("language")?;
    for (title, columns) in expected {
        let at = text.find(&format!("## {title}\n")).ok_or_else(|| format!("no {title} table"))?;
        let header = text[at..].lines().nth(2).unwrap_or_default();
        let got: Vec<&str> = header.trim_matches('|').split('|').map(str::trim).collect();
        ensure(got == columns, || format!("{title} columns {got:?}"))?;
        let rows: Vec<&str> = text[at..].lines().skip(4).take_while(|l| l.starts_with('|')).collect();
        let labels: Vec<&str> = rows.iter().map(|r| r.trim_matches('|').split('|').next().unwrap().trim()).collect();
        ensure(labels == ["English", "Gujarati", "Hindi", "Marwadi", "Punjabi"], || {
            format!("{title} rows {labels:?}")
        })?;
    }
    ensure(text == fs::read_to_string(demo("golden/analyze_language.txt")).unwrap_or_default(), || {
        "language tables differ from golden".into()
    })?;

    let grids = analyze("pair")?;
    let mut count = 0;
    for block in grids.split("\n\n").filter(|b| b.starts_with("# heatmap")) {
        let lines: Vec<&str> = block.lines().collect();
        ensure(lines.len() == 6, || format!("grid with {} lines: {}", lines.len(), lines[0]))?;
        let labels: Vec<&str> = lines[1].split(',').skip(1).collect();
        ensure(labels.len() == 4, || format!("{} columns in {}", labels.len(), lines[0]))?;
        for (i, row) in lines[2..].iter().enumerate() {
            let cells: Vec<&str> = row.split(',').collect();
            ensure(cells.len() == 5 && cells[0] == labels[i], || format!("row {row:?} in {}", lines[0]))?;
            for (j, c) in cells[1..].iter().enumerate() {
                ensure((i == j) == c.is_empty(), || format!("cell ({i},{j}) {c:?} in {}", lines[0]))?;
            }
        }
        count += 1;
    }
    // Five languages; two metrics for each of three games.
    ensure(count == 5 * 2 * 3, || format!("{count} grids"))?;
    ensure(grids == fs::read_to_string(demo("golden/analyze_pair.txt")).unwrap_or_default(), || {
        "heatmap grids differ from golden".into()
    })?;
    ensure(analyze("language")? == text && analyze("pair")? == grids, || "analyze output not byte-stable".into())?;
    Ok(format!("3 tables with the reference column sets; {count} 4x4 grids with empty diagonals; goldens match"))
}

// ---------------------------------------------------------------------------
// 7. Prompt control

/// A copy of `game` with `role`'s private values changed.
fn perturb(game: &GameConfig, role: Role, rng: &mut ChaCha8Rng) -> GameConfig {
    match game.clone() {
        GameConfig::BuySell(mut c) => {
            match role {
                Role::Player1 => c.seller_min = rng.gen_range(0..c.buyer_max),
                Role::Player2 => c.buyer_max = c.seller_min + rng.gen_range(1..400),
            }
            GameConfig::BuySell(c)
        }
        GameConfig::ResourceExchange(mut c) => {
            let goal = ResourceGoal {
                weights: Some(BTreeMap::from([("X".into(), rng.gen_range(1..9)), ("Y".into(), rng.gen_range(1..9))])),
            };
            match role {
                Role::Player1 => c.goal_p1 = goal,
                Role::Player2 => c.goal_p2 = goal,
            }
            GameConfig::ResourceExchange(c)
        }
        other => other,
    }
}

fn prompt_control() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut configs: Vec<GameConfig> =
        [GameKind::Ultimatum, GameKind::BuySell, GameKind::ResourceExchange].map(GameConfig::default_for).to_vec();
    for _ in 0..100 {
        for kind in [GameKind::BuySell, GameKind::ResourceExchange] {
            let (g, _) = random_game(kind, &mut rng);
            configs.push(perturb(&perturb(&g, Role::Player1, &mut rng), Role::Player2, &mut rng));
        }
    }
    let mut prompts = 0;
    for game in &configs {
        for role in [Role::Player1, Role::Player2] {
            let base = build_prompt(game, role, LanguageFraming::English);
            let hidden = perturb(game, role.other(), &mut rng);
            for framing in LanguageFraming::ALL {
                let p = build_prompt(game, role, framing);
                let q = build_prompt(&hidden, role, framing);
                ensure(p == q, || format!("{role:?} prompt in {game:?} depends on the opponent's private values"))?;
                let state = new_game(game.clone(), 1).map_err(|e| e.to_string())?;
                let state_q = new_game(hidden.clone(), 1).map_err(|e| e.to_string())?;
                ensure(
                    render_turn_prompt(&p, &state.view(role)) == render_turn_prompt(&q, &state_q.view(role)),
                    || format!("{role:?} turn prompt leaks in {game:?}"),
                )?;
                ensure(p.turn_prompt_template == base.turn_prompt_template, || {
                    "turn template varies by framing".into()
                })?;
                match framing.persona_clause() {
                    None => ensure(p == base, || "baseline differs".into())?,
                    Some(clause) => {
                        ensure(p.system_prompt.matches(&clause).count() == 1, || format!("{framing} clause count"))?;
                        ensure(
                            p.system_prompt.replacen(&format!("\n\n{clause}"), "", 1) == base.system_prompt,
                            || format!("{framing} prompt differs beyond the persona clause"),
                        )?;
                    }
                }
                prompts += 1;
            }
        }
    }
    Ok(format!("{prompts} (game, role, framing) prompts: no opponent values, persona clause is the only difference"))
}

// ---------------------------------------------------------------------------
// 8. Live smoke

fn live_smoke() -> Outcome {
    if std::env::var("ARENA_LIVE_SMOKE").as_deref() != Ok("1") {
        return Ok("SKIP opt-in only; set ARENA_LIVE_SMOKE=1 with provider keys".into());
    }
    let p1 = std::env::var("ARENA_SMOKE_P1").unwrap_or_else(|_| "gpt-4o".into());
    let p2 = std::env::var("ARENA_SMOKE_P2").unwrap_or_else(|_| "claude-3-haiku-20240307".into());
    let gw = Gateway::from_env().map_err(|e| e.to_string())?;
    for m in [&p1, &p2] {
        gw.check_credentials(m).map_err(|e| format!("{m}: {e}"))?;
    }
    let config = format!(
        "seed = 8\nruns_per_cell = 1\n[[models]]\nname = \"{p1}\"\nllm = {{ model_id = \"{p1}\" }}\n[[models]]\nname = \"{p2}\"\nllm = {{ model_id = \"{p2}\" }}\n"
    );
    let specs = expand_matrix(&ExperimentConfig::from_toml_str(&config).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let backend: Arc<dyn ChatBackend> = Arc::new(gw);
    let env = RunEnv { backend: Some(backend), clock: Arc::new(SystemClock) };
    let (mut ok, mut parse_failures) = (0, 0);
    for s in specs.iter().filter(|s| s.model_index == [0, 1]) {
        let r = execute_run(s, &env);
        match &r.failure {
            None => ok += 1,
            Some(f) if !f.infrastructure => parse_failures += 1,
            Some(f) => return Err(format!("{} {}: {:?} {}", s.game.kind(), s.framing, f.class, f.detail)),
        }
    }
    Ok(format!("{p1} vs {p2}: {ok} completed, {parse_failures} classified protocol failures"))
}

fn main() {
    let verdicts = [
        criterion(1, "conservation", Duration::from_secs(60), conservation),
        criterion(2, "ultimatum identity", Duration::from_secs(30), ultimatum_identity),
        criterion(3, "oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        criterion(4, "protocol round-trip and fuzz", Duration::from_secs(120), protocol_round_trip),
        criterion(5, "orchestrator determinism and resume", Duration::from_secs(300), determinism_and_resume),
        criterion(6, "analysis shape", Duration::from_secs(30), analysis_shape),
        criterion(7, "prompt control", Duration::from_secs(30), prompt_control),
        criterion(8, "live smoke", Duration::from_secs(600), live_smoke),
    ];
    if verdicts.iter().any(|v| matches!(v, Verdict::Fail)) {
        std::process::exit(1);
    }
}
