//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relrank::backtest::{backtest_scores, metric_mrr, metric_mse, oracle_scores, run_backtest, score_matrix, simulate};
use relrank::diffcore::{Tape, Tensor};
use relrank::marketdata::{fractional_split, synth_market, Dataset, RelationTensor, RelationType, SynthConfig};
use relrank::ranker::{check_model_gradients, ranking_loss, train, ModelMode, RankModelConfig, ToyScale, GRADCHECK_EPS};
use relrank::relembed::{
    binary_adjacency, gcn_layer, graph_laplacian, graph_regularizer, tgc_propagate, uniform_propagate, Normalization,
    NormalizedAdjacency, RelationalGraph, TgcMode, TgcOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs())
}

fn toy_example() -> Outcome {
    let start = Instant::now();
    let truth = vec![vec![30.0, 10.0, -50.0]];
    let pred_a = vec![vec![50.0, -10.0, -50.0]];
    let pred_b = vec![vec![20.0, 30.0, -40.0]];
    let mse_a = metric_mse(&pred_a, &truth).unwrap();
    let mse_b = metric_mse(&pred_b, &truth).unwrap();
    let profit_a = simulate(&pred_a, &truth, 1).unwrap().1.irr;
    let profit_b = simulate(&pred_b, &truth, 1).unwrap().1.irr;
    let elapsed = start.elapsed();
    let pass = (mse_a - 800.0 / 3.0).abs() < 1e-9
        && (mse_b - 200.0).abs() < 1e-9
        && profit_a == 30.0
        && profit_b == 10.0
        && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!("mse {mse_a:.6} / {mse_b:.6}, profit {profit_a} / {profit_b}, {}", within(elapsed, Duration::from_secs(1))),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let scale = ToyScale { stocks: 4, window: 2, hidden: 3, types: 2, features: 5 };
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for mode in ModelMode::ALL {
        for seed in 0..5 {
            let r = check_model_gradients(mode, scale, seed, GRADCHECK_EPS, false).unwrap();
            if r.max_rel_err >= worst {
                worst = r.max_rel_err;
                worst_at = format!("{mode} seed {seed}");
            }
        }
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(30);
    outcome(
        worst < 1e-4 && elapsed < limit,
        format!("worst rel err {worst:.3e} ({worst_at}), {}", within(elapsed, limit)),
    )
}

/// Mixed symmetric and directed relation types.
fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> RelationTensor {
    let types = vec![
        RelationType { name: "sym".into(), symmetric: true },
        RelationType { name: "dir".into(), symmetric: false },
    ];
    let mut rel = RelationTensor::new(n, types);
    let p = rng.random_range(0.1..0.6);
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random::<f64>() < p {
                let t = rng.random_range(0..2);
                rel.add_edge(s, d, &[t]).unwrap();
            }
        }
    }
    rel
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_abs(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn reduction_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let u = rng.random_range(1..=4);
        let rel = random_graph(n, &mut rng);
        let e = random_matrix(n, u, &mut rng);
        let graph = RelationalGraph::<f64>::new(&rel);
        let adj = NormalizedAdjacency::new(&binary_adjacency::<f64>(&rel, false), Normalization::Column, false);
        let unit = TgcOptions { unit_strength: true, ..Default::default() };

        let mut tape = Tape::new();
        let ev = tape.constant(e.clone()).unwrap();
        let w = tape.constant(Tensor::vector(vec![0.7, -1.3])).unwrap();
        let b = tape.constant(Tensor::scalar(0.4)).unwrap();
        let explicit = tgc_propagate(&mut tape, ev, &graph, TgcMode::Explicit, Some(w), Some(b), unit).unwrap();
        let uniform = uniform_propagate(&mut tape, ev, &graph).unwrap();
        let eye = tape.constant(Tensor::identity(u)).unwrap();
        let zero = tape.constant(Tensor::zeros(&[u])).unwrap();
        let gcn = gcn_layer(&mut tape, ev, &adj, eye, zero).unwrap();
        let (x, y, z) = (tape.value(explicit), tape.value(uniform), tape.value(gcn));
        worst = worst.max(max_abs(x, y)).max(max_abs(y, z)).max(max_abs(x, z));
    }
    outcome(worst < 1e-12, format!("max abs diff {worst:.3e} over 20 graphs"))
}

fn laplacian_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=12);
        let cols = rng.random_range(1..=4);
        let rel = random_graph(n, &mut rng);
        let scores = random_matrix(n, cols, &mut rng);
        let lap = graph_laplacian::<f64>(&rel);
        let trace = scores.transpose().unwrap().matmul(&lap.matrix.matmul(&scores).unwrap()).unwrap();
        let trace: f64 = (0..cols).map(|c| trace.get2(c, c)).sum();

        // Symmetrized 0/1 adjacency and degrees, built from the edge list.
        let mut a = vec![vec![0.0; n]; n];
        for (s, d, _) in rel.edges() {
            a[s][d] = 1.0;
            a[d][s] = 1.0;
        }
        let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
        let mut pairwise = 0.0;
        for i in 0..n {
            for j in 0..n {
                if a[i][j] == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let diff = scores.get2(i, c) / deg[i].sqrt() - scores.get2(j, c) / deg[j].sqrt();
                    pairwise += 0.5 * a[i][j] * diff * diff;
                }
            }
        }

        let mut on_tape = 0.0;
        for c in 0..cols {
            let mut tape = Tape::new();
            let col: Vec<f64> = (0..n).map(|i| scores.get2(i, c)).collect();
            let v = tape.constant(Tensor::vector(col)).unwrap();
            let q = graph_regularizer(&mut tape, v, &lap).unwrap();
            on_tape += tape.value(q).data()[0];
        }
        worst = worst.max((trace - pairwise).abs()).max((on_tape - pairwise).abs());
    }
    outcome(worst < 1e-10, format!("max abs diff {worst:.3e} over 20 graphs"))
}

/// Descending order by repeated maximum selection, lowest index on ties.
fn brute_order(v: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..v.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for p in 1..left.len() {
            if v[left[p]] > v[left[best]] {
                best = p;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=20);
        let days = rng.random_range(1..=30);
        let k = rng.random_range(1..=n);
        // Coarse values so ties occur.
        let draw = |rng: &mut ChaCha8Rng| (rng.random_range(-4..=4) as f64) * 0.01;
        let truths: Vec<Vec<f64>> = (0..days).map(|_| (0..n).map(|_| draw(&mut rng)).collect()).collect();
        let scores: Vec<Vec<f64>> = (0..days).map(|_| (0..n).map(|_| draw(&mut rng)).collect()).collect();
        let (ledger, report) = simulate(&scores, &truths, k).unwrap();

        let mut irr = 0.0;
        let mut rr = 0.0;
        let mut top1 = Vec::new();
        for (t, (s, r)) in scores.iter().zip(&truths).enumerate() {
            let order = brute_order(s);
            let picked = order[..k].to_vec();
            exact &= ledger.days[t].ranking == order && ledger.days[t].selected == picked;
            let day = picked.iter().map(|&i| r[i]).sum::<f64>() / k as f64;
            irr += day;
            worst = worst.max((ledger.days[t].day_return - day).abs());
            worst = worst.max((ledger.days[t].cumulative_irr - irr).abs());
            let pos = brute_order(r).iter().position(|&i| i == order[0]).unwrap() + 1;
            rr += 1.0 / pos as f64;
            top1.push(order[0]);
        }
        worst = worst.max((report.irr - irr).abs());
        worst = worst.max((report.mrr - rr / days as f64).abs());
        worst = worst.max((metric_mrr(&top1, &truths).unwrap() - rr / days as f64).abs());
    }

    // A trained model's ledger against a replay of its own predictions.
    let m = synth_market(&SynthConfig { n_stocks: 12, n_days: 100, seed: 9, ..Default::default() }).unwrap();
    let ds = Dataset::from_prices(&m.prices).unwrap().with_relations(m.relations).unwrap();
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let config = RankModelConfig { mode: ModelMode::RsrE, window: 3, hidden: 4, epochs: 2, ..Default::default() };
    let (model, _) = train(&ds, &split, &config).unwrap();
    let (ledger, _) = run_backtest(&model, &ds, split.test.clone(), 3).unwrap();
    let mut irr = 0.0;
    for (d, t) in ledger.days.iter().zip(split.test.clone()) {
        let pred = model.predict(&ds.window(t, config.window).unwrap()).unwrap();
        let order = brute_order(&pred);
        exact &= d.selected == order[..3];
        irr += order[..3].iter().map(|&i| ds.labels(t)[i]).sum::<f64>() / 3.0;
        worst = worst.max((d.cumulative_irr - irr).abs());
    }
    outcome(exact && worst < 1e-12, format!("selections exact: {exact}, max accumulation error {worst:.3e}"))
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=30);
        let alpha = rng.random_range(0.0..10.0);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sq = 0.0;
        for i in 0..n {
            sq += (p[i] - r[i]) * (p[i] - r[i]);
        }
        let mut hinge = 0.0;
        for i in 0..n {
            for j in 0..n {
                hinge += (-(p[i] - p[j]) * (r[i] - r[j])).max(0.0);
            }
        }
        let nf = n as f64;
        worst = worst.max((ranking_loss(&p, &r, alpha, true).unwrap() - (sq / nf + alpha * hinge / (nf * nf))).abs());
        worst = worst.max((ranking_loss(&p, &r, 0.0, true).unwrap() - sq / nf).abs());
        worst = worst.max(ranking_loss(&r, &r, alpha, true).unwrap().abs());
    }
    outcome(worst < 1e-12, format!("max abs diff {worst:.3e} over 50 instances"))
}

struct E2eRun {
    val_mse: f64,
    test_irr: f64,
    oracle_irr: f64,
    topk_mean_err: f64,
}

fn e2e_run(mode: ModelMode, seed: u64) -> E2eRun {
    let m = synth_market(&SynthConfig { n_stocks: 30, n_days: 400, n_factors: 3, seed, ..Default::default() }).unwrap();
    let ds = Dataset::from_prices(&m.prices).unwrap().with_relations(m.relations).unwrap();
    let split = fractional_split(ds.n_days(), 0.6, 0.2).unwrap();
    let config = RankModelConfig { mode, window: 4, hidden: 16, alpha: 1.0, seed, ..Default::default() };
    let (model, history) = train(&ds, &split, &config).unwrap();
    let scores = score_matrix(&model, &ds, split.test.clone()).unwrap();
    let (_, test) = backtest_scores(&ds, split.test.clone(), &scores, 1).unwrap();
    let oracle = oracle_scores(&ds, split.test.clone()).unwrap();
    let (_, best) = backtest_scores(&ds, split.test.clone(), &oracle, 1).unwrap();
    let mut topk_mean_err = 0.0f64;
    for k in [1, 3, 5, 10] {
        let (ledger, _) = backtest_scores(&ds, split.test.clone(), &scores, k).unwrap();
        for d in &ledger.days {
            let mean = d.selected.iter().map(|&i| d.returns[i]).sum::<f64>() / k as f64;
            topk_mean_err = topk_mean_err.max((d.day_return - mean).abs());
        }
    }
    E2eRun { val_mse: history.selected().validation.mse, test_irr: test.irr, oracle_irr: best.irr, topk_mean_err }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn relational_advantage() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in 0..5 {
        runs.push((e2e_run(ModelMode::RankLstm, seed), e2e_run(ModelMode::RsrI, seed)));
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(600);
    let lstm_mse = median(runs.iter().map(|r| r.0.val_mse).collect());
    let rsr_mse = median(runs.iter().map(|r| r.1.val_mse).collect());
    let lstm_irr = median(runs.iter().map(|r| r.0.test_irr).collect());
    let rsr_irr = median(runs.iter().map(|r| r.1.test_irr).collect());
    let advantage = outcome(
        rsr_mse < lstm_mse && rsr_irr > lstm_irr && elapsed < limit,
        format!(
            "median val mse rsr_i {rsr_mse:.4e} vs rank_lstm {lstm_mse:.4e}, median test irr {rsr_irr:.4} vs {lstm_irr:.4}, {}",
            within(elapsed, limit)
        ),
    );
    let all: Vec<&E2eRun> = runs.iter().flat_map(|(a, b)| [a, b]).collect();
    let dominated = all.iter().all(|r| r.oracle_irr >= r.test_irr);
    let mean_err = all.iter().map(|r| r.topk_mean_err).fold(0.0, f64::max);
    let bounds = outcome(
        dominated && mean_err < 1e-12,
        format!("oracle >= model on {} runs: {dominated}, top-k mean error {mean_err:.3e}", all.len()),
    );
    (advantage, bounds)
}

fn relrank(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_relrank"))
        .args(args)
        .current_dir(dir)
        .env_remove("RELRANK_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    if !relrank(&["synth", "--stocks", "10", "--days", "120", "--seed", "4", "--out", "market"], d) {
        return outcome(false, "synth failed");
    }
    fs::write(
        d.join("run.json"),
        r#"{"prices": "market/prices", "relations": "market/relations.json", "output": "out", "seed": 13,
            "model": {"mode": "rsr_i", "window": 4, "hidden": 8, "alpha": 1.0, "epochs": 5}}"#,
    )
    .unwrap();
    let mut captures = Vec::new();
    for _ in 0..2 {
        let ok = relrank(&["train", "--config", "run.json"], d)
            && relrank(&["backtest", "--checkpoint", "out/model.ckpt", "--k", "3"], d);
        if !ok {
            return outcome(false, "train or backtest failed");
        }
        let files = ["manifest.json", "model.ckpt", "ledger_top3.csv", "report_top3.json"];
        captures.push(files.map(|f| fs::read(d.join("out").join(f)).unwrap()));
        fs::remove_dir_all(d.join("out")).unwrap();
    }
    let same = captures[0] == captures[1];
    outcome(same, format!("manifest, checkpoint, ledger and report byte-identical: {same}"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("toy ranking example", toy_example()),
        ("gradient suite", gradient_suite()),
        ("reduction equivalence", reduction_equivalence()),
        ("laplacian cross-check", laplacian_cross_check()),
        ("metric oracles", metric_oracles()),
        ("loss oracle", loss_oracle()),
    ];
    let (advantage, bounds) = relational_advantage();
    results.push(("end-to-end relational advantage", advantage));
    results.push(("back-test bounds", bounds));
    results.push(("determinism", determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
