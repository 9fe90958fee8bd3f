//! Acceptance criteria, one pass/fail line each. The MNIST criteria read
//! the IDX files from `LINABS_MNIST_DIR` (default `<workspace>/data/mnist`).

mod common;

use std::path::PathBuf;
use std::time::Instant;

use linabs::abstraction::{abstract_network, greedy_basis_selection, AbstractionConfig, AbstractionState, CoefficientMethod, Selection, Target};
use linabs::data_io::{load_dataset, sample_indices, train_mlp, TrainConfig};
use linabs::error_analysis::{relative_error_stats, theorem_bound, EtaNorm};
use linabs::experiment::{counterexamples_outside, run_method, Method};
use linabs::network::{accuracy, LabeledDataset, Network};
use linabs::numerics::{l1_fit, least_squares, norm1, Matrix, Vector};
use linabs::refinement::{refine, Heuristic, RefinementConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

/// Criteria that the faithful implementation is known not to meet. A
/// listed criterion that starts passing fails the run, as does any other
/// failure.
const EXPECTED_FAILURES: &[usize] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

/// `(layer, neuron, coefficients)`
type Replacement = (usize, usize, Vec<(usize, f64)>);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit_s: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let started = Instant::now();
    let mut o = f();
    let t = started.elapsed().as_secs_f64();
    o.detail = format!("{}; {t:.1}s (limit {limit_s}s)", o.detail);
    o.pass &= t < limit_s;
    o
}

fn exact_replacement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let input = rng.gen_range(3..=8);
        let hidden = random_hidden(&mut rng, 2..=4, 4..=16);
        let output = rng.gen_range(2..=5);
        let base = random_net(&mut rng, input, &hidden, output);
        // neuron i of layer l becomes c times neuron j: an exact combination
        let l = rng.gen_range(1..=hidden.len());
        let width = hidden[l - 1];
        let i = rng.gen_range(0..width);
        let j = (i + rng.gen_range(1..width)) % width;
        let c = rng.gen_range(0.2..3.0);
        let mut layers = base.layers().to_vec();
        let row: Vec<f64> = layers[l - 1].weights.row(j).iter().map(|w| c * w).collect();
        layers[l - 1].weights.row_mut(i).copy_from_slice(&row);
        layers[l - 1].bias[i] = c * layers[l - 1].bias[j];
        let net = Network::new(input, layers).unwrap();

        let mut state = AbstractionState::new(&net);
        let basis: Vec<usize> = (0..width).filter(|&k| k != i).collect();
        state.set_basis(l, basis.clone()).unwrap();
        let alpha: Vec<(usize, f64)> = basis.iter().map(|&k| (k, if k == j { c } else { 0.0 })).collect();
        state.replace_neuron(l, i, &alpha).unwrap();
        for x in random_inputs(&mut rng, 1000, input) {
            worst = worst.max(max_abs_diff(&net.logits(&x).unwrap(), &state.current.logits(&x).unwrap()));
        }
    }
    outcome(worst <= 1e-9, format!("max |N(x) - N'(x)| = {worst:.2e} over 100 nets x 1000 inputs (tol 1e-9)"))
}

fn bound_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for n in 0..50 {
        let input = rng.gen_range(3..=6);
        let hidden = random_hidden(&mut rng, 2..=3, 4..=10);
        let output = rng.gen_range(2..=4);
        let net = random_net(&mut rng, input, &hidden, output);
        let xs = random_inputs(&mut rng, 40, input);
        let config = AbstractionConfig {
            selection: if n % 2 == 0 { Selection::Variance } else { Selection::Greedy },
            coefficients: if n % 3 == 0 { CoefficientMethod::L1 } else { CoefficientMethod::Orthogonal },
            target: Target::ReductionRate(rng.gen_range(0.1..0.6)),
            ..AbstractionConfig::with_rate(0.0)
        };
        let state = abstract_network(&net, &xs, &config).unwrap();
        for norm in [EtaNorm::L1, EtaNorm::MaxAbs] {
            let r = theorem_bound(&state, &xs, norm).unwrap();
            if r.empirical > r.bound {
                violations += 1;
            }
            if r.bound > 0.0 {
                tightest = tightest.min(r.bound / r.empirical.max(f64::MIN_POSITIVE));
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in 50 nets x 2 eta norms; smallest bound/empirical ratio {tightest:.3}"),
    )
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut cross_layer = 0;
    for _ in 0..200 {
        let input = rng.gen_range(2..=5);
        let hidden = random_hidden(&mut rng, 2..=3, 3..=7);
        let net = random_net(&mut rng, input, &hidden, 3);
        // replace a random subset of non-basis neurons in every layer
        let mut fresh = AbstractionState::new(&net);
        let mut plan: Vec<Replacement> = Vec::new();
        for (h, &w) in hidden.iter().enumerate() {
            let mut idx: Vec<usize> = (0..w).collect();
            idx.shuffle(&mut rng);
            let k = rng.gen_range(1..w);
            let basis = idx[..k].to_vec();
            fresh.set_basis(h + 1, basis.clone()).unwrap();
            for &i in &idx[k..] {
                if rng.gen_bool(0.7) {
                    let alpha = basis.iter().map(|&j| (j, rng.gen_range(-2.0..2.0))).collect();
                    plan.push((h + 1, i, alpha));
                }
            }
        }
        if plan.is_empty() {
            continue;
        }
        plan.shuffle(&mut rng);
        let layers_hit: std::collections::BTreeSet<usize> = plan.iter().map(|p| p.0).collect();
        if layers_hit.iter().zip(layers_hit.iter().skip(1)).any(|(a, b)| b - a == 1) {
            cross_layer += 1;
        }
        let mut state = fresh.clone();
        for (l, i, a) in &plan {
            state.replace_neuron(*l, *i, a).unwrap();
        }
        let stored = state.deltas.clone();
        for (d, r) in stored.iter().zip(state.rebuild_deltas()) {
            worst = worst.max(d.max_abs_diff(&r));
        }
        // restoring one neuron equals never having replaced it
        let pick = rng.gen_range(0..plan.len());
        let (pl, pi, _) = &plan[pick];
        let mut one = state.clone();
        one.restore_neuron(*pl, *pi).unwrap();
        let mut without = fresh.clone();
        for (k, (l, i, a)) in plan.iter().enumerate() {
            if k != pick {
                without.replace_neuron(*l, *i, a).unwrap();
            }
        }
        worst = worst.max(network_diff(&one.current, &without.current));
        for (a, b) in one.deltas.iter().zip(&without.deltas) {
            worst = worst.max(a.max_abs_diff(b));
        }
        // restoring everything gives back the original
        let mut order = plan.clone();
        order.shuffle(&mut rng);
        for (l, i, _) in &order {
            state.restore_neuron(*l, *i).unwrap();
        }
        worst = worst.max(network_diff(&state.current, &net));
        for d in &state.deltas {
            worst = worst.max(d.as_slice().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max weight/D deviation {worst:.2e} over 200 triples, {cross_layer} with adjacent-layer replacements (tol 1e-9)"),
    )
}

fn network_diff(a: &Network, b: &Network) -> f64 {
    a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| x.weights.max_abs_diff(&y.weights).max(max_abs_diff(&x.bias, &y.bias)))
        .fold(0.0, f64::max)
}

fn coefficient_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut orth = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(10..40);
        let n = rng.gen_range(1..8);
        let a = random_matrix(&mut rng, m, n);
        let y: Vector = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = least_squares(&a, &y).unwrap();
        let fit = a.matvec(&alpha);
        let r: Vector = y.iter().zip(&fit).map(|(p, q)| p - q).collect();
        orth = orth.max(a.transpose().matvec(&r).iter().fold(0.0, |acc, v| acc.max(v.abs())));
    }
    let mut grid_gap = 0.0f64;
    for _ in 0..50 {
        let m = rng.gen_range(5..30);
        let col: Vector = (0..m).map(|_| rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let y: Vector = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lp = l1_fit(&Matrix::from_columns(std::slice::from_ref(&col)).unwrap(), &y).unwrap();
        let cost = |t: f64| col.iter().zip(&y).map(|(a, b)| (b - t * a).abs()).sum::<f64>();
        let coarse = (-1000..=1000).map(|k| k as f64 * 0.01).min_by(|p, q| cost(*p).total_cmp(&cost(*q))).unwrap();
        let fine = (-2000..=2000)
            .map(|k| coarse + k as f64 * 1e-5)
            .map(cost)
            .fold(f64::INFINITY, f64::min);
        grid_gap = grid_gap.max((lp.residual_l1 - fine).abs());
    }
    let mut worse = 0;
    for _ in 0..100 {
        let m = rng.gen_range(8..40);
        let n = rng.gen_range(1..6);
        let a = random_matrix(&mut rng, m, n);
        let y: Vector = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lp = l1_fit(&a, &y).unwrap();
        let ls = least_squares(&a, &y).unwrap();
        let ls_l1 = norm1(&y.iter().zip(a.matvec(&ls)).map(|(p, q)| p - q).collect::<Vec<_>>());
        if lp.residual_l1 > ls_l1 + 1e-12 {
            worse += 1;
        }
    }
    outcome(
        orth <= 1e-8 && grid_gap <= 2e-3 && worse == 0,
        format!(
            "max |A^T r| = {orth:.2e} (tol 1e-8); L1 vs grid gap {grid_gap:.2e} (tol 2e-3); L1 worse than L2 in {worse}/100"
        ),
    )
}

fn greedy_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut steps = 0;
    let mut mismatches = 0;
    for _ in 0..20 {
        let layers = rng.gen_range(1..=3);
        let zs: Vec<Matrix> = (0..layers)
            .map(|_| {
                let rows = rng.gen_range(3..=7);
                random_matrix(&mut rng, rows, 15)
            })
            .collect();
        let cap: usize = zs.iter().map(|z| z.rows() - 1).sum();
        let k = rng.gen_range(1..=cap);
        let refs: Vec<&Matrix> = zs.iter().collect();
        let sel = greedy_basis_selection(&refs, k).unwrap();
        let mut bases: Vec<Vec<usize>> = zs.iter().map(|z| (0..z.rows()).collect()).collect();
        for &chosen in &sel.order {
            let mut best: Option<((usize, usize), f64)> = None;
            for (h, basis) in bases.iter().enumerate() {
                if basis.len() <= 1 {
                    continue;
                }
                for &j in basis {
                    let rest: Vec<usize> = basis.iter().copied().filter(|&b| b != j).collect();
                    let e = normal_equation_error(&zs[h], &rest);
                    if best.is_none_or(|(_, b)| e < b) {
                        best = Some(((h, j), e));
                    }
                }
            }
            steps += 1;
            if best.unwrap().0 != chosen {
                mismatches += 1;
            }
            bases[chosen.0].retain(|&b| b != chosen.1);
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of {steps} greedy steps differ from brute-force argmin over 20 instances"))
}

struct Mnist {
    train: LabeledDataset,
    test: LabeledDataset,
    net: Network,
    io_indices: Vec<usize>,
    io: Vec<Vector>,
    train_seconds: f64,
    test_accuracy: f64,
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("LINABS_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_mnist() -> Result<Mnist, String> {
    let dir = mnist_dir();
    let file = |n: &str| dir.join(n);
    let load = |i: &str, l: &str| {
        load_dataset(file(i), file(l)).map_err(|e| format!("{e} (set LINABS_MNIST_DIR or run scripts/fetch_mnist.sh)"))
    };
    let train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    let started = Instant::now();
    let (net, report) = train_mlp(&train, &TrainConfig::default(), Some(&test)).map_err(|e| e.to_string())?;
    let train_seconds = started.elapsed().as_secs_f64();
    let io_indices = sample_indices(train.len(), 1000, 0).map_err(|e| e.to_string())?;
    let io = io_indices.iter().map(|&i| train.inputs[i].clone()).collect();
    Ok(Mnist {
        test_accuracy: report.test_accuracy.unwrap(),
        train,
        test,
        net,
        io_indices,
        io,
        train_seconds,
    })
}

fn variance_accuracy(m: &Mnist, rr: f64) -> (f64, f64) {
    let run = run_method(&m.net, &m.io, Method::VarianceOp, rr).unwrap();
    (accuracy(&run.network, &m.test).unwrap(), run.wall_time_s)
}

fn mnist_stability(m: &Mnist) -> Outcome {
    let started = Instant::now();
    let (a5, _) = variance_accuracy(m, 0.5);
    let (a6, _) = variance_accuracy(m, 0.6);
    let total = m.train_seconds + started.elapsed().as_secs_f64();
    let d5 = 100.0 * (m.test_accuracy - a5);
    let d6 = 100.0 * (m.test_accuracy - a6);
    outcome(
        m.test_accuracy >= 0.95 && d5 <= 3.0 && d6 <= 5.0 && total < 300.0,
        format!(
            "original {:.4}; RR 0.5 {a5:.4} (-{d5:.2} pp, tol 3); RR 0.6 {a6:.4} (-{d6:.2} pp, tol 5); {total:.1}s incl. training (limit 300s)",
            m.test_accuracy
        ),
    )
}

fn semantic_beats_bisim(m: &Mnist) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for rr in [0.5, 0.6, 0.7, 0.8] {
        let (lin, _) = variance_accuracy(m, rr);
        let b = run_method(&m.net, &m.io, Method::Bisim, rr).unwrap();
        let bis = accuracy(&b.network, &m.test).unwrap();
        pass &= lin >= bis;
        parts.push(format!("RR {rr}: {lin:.4} vs {bis:.4} (bisim RR {:.3})", b.reduction_rate));
    }
    outcome(pass, parts.join("; "))
}

fn refinement_benefit(m: &Mnist) -> Outcome {
    // five hidden layers, as in the original refinement experiment
    let config = TrainConfig {
        hidden: vec![100; 5],
        ..TrainConfig::default()
    };
    let (net, report) = train_mlp(&m.train, &config, Some(&m.test)).unwrap();
    let direct = accuracy(&run_method(&net, &m.io, Method::VarianceOp, 0.8).unwrap().network, &m.test).unwrap();
    let mut state = abstract_network(&net, &m.io, &AbstractionConfig::with_rate(0.9)).unwrap();
    let coarse = accuracy(&state.current, &m.test).unwrap();
    let target = (0.8 * net.hidden_neurons() as f64).round() as usize;
    let ces = counterexamples_outside(&state.original, &state.current, &m.train, &m.io_indices, 200).unwrap();
    let config = RefinementConfig {
        heuristic: Heuristic::Difference,
        budget: state.replaced_count() - target,
        ..RefinementConfig::default()
    };
    let refined_report = refine(&mut state, &ces, &config).unwrap();
    let refined = accuracy(&state.current, &m.test).unwrap();
    outcome(
        refined >= direct - 0.02,
        format!(
            "5x100 (test {:.4}): RR 0.9 {coarse:.4} -> refined {refined:.4} at RR {:.3} ({} restored, {}/{} counterexamples fixed); direct RR 0.8 {direct:.4} (tol -2 pp)",
            report.test_accuracy.unwrap(),
            state.reduction_rate(),
            refined_report.restored.len(),
            refined_report.fixed,
            ces.len()
        ),
    )
}

fn relative_error_shape(m: &Mnist) -> Outcome {
    let state = abstract_network(&m.net, &m.io, &AbstractionConfig::with_rate(0.3)).unwrap();
    let stats = relative_error_stats(&state, &m.io, &m.test.inputs).unwrap();
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("relative_error_rr0.3.csv");
    let mut w = csv::Writer::from_path(&path).unwrap();
    for n in &stats.neurons {
        w.serialize(n).unwrap();
    }
    w.flush().unwrap();
    let median = stats.median_geometric_mean().unwrap_or(f64::NAN);
    outcome(
        median < 1.0,
        format!(
            "median geometric mean {median:.4} (< 1); fraction with max > 1: {:.4} of {} neurons; CSV {}",
            stats.fraction_max_above_one(),
            stats.inexact().count(),
            path.display()
        ),
    )
}

fn timing_shape(m: &Mnist) -> Outcome {
    let rates = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    // best of five to damp scheduler noise
    let times: Vec<f64> = rates
        .iter()
        .map(|&rr| (0..5).map(|_| variance_accuracy(m, rr).1).fold(f64::INFINITY, f64::min))
        .collect();
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(0.0, f64::max);
    let g1 = run_method(&m.net, &m.io, Method::GreedyOp, 0.1).unwrap().wall_time_s;
    let g9 = run_method(&m.net, &m.io, Method::GreedyOp, 0.9).unwrap().wall_time_s;
    outcome(
        hi / lo < 2.0 && g9 > g1,
        format!("variance times {lo:.3}s..{hi:.3}s (ratio {:.2}, tol 2); greedy RR 0.1 {g1:.3}s, RR 0.9 {g9:.3}s", hi / lo),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "exact replacement of planted combinations", timed(30.0, exact_replacement)),
        (2, "output-error bound soundness", timed(60.0, bound_soundness)),
        (3, "replace/restore round trip", timed(30.0, round_trip)),
        (4, "coefficient optimality", coefficient_optimality()),
        (5, "greedy fidelity", greedy_fidelity()),
    ];
    let mnist_names = [
        (6, "MNIST accuracy stability"),
        (7, "semantic abstraction vs bisimulation"),
        (8, "refinement benefit"),
        (9, "relative-error shape"),
        (10, "timing shape"),
    ];
    match load_mnist() {
        Ok(m) => {
            eprintln!(
                "MNIST 3x100 trained in {:.1}s, test accuracy {:.4}",
                m.train_seconds, m.test_accuracy
            );
            let checks: [fn(&Mnist) -> Outcome; 5] =
                [mnist_stability, semantic_beats_bisim, refinement_benefit, relative_error_shape, timing_shape];
            for ((n, name), check) in mnist_names.into_iter().zip(checks) {
                results.push((n, name, check(&m)));
            }
        }
        Err(e) => {
            for (n, name) in mnist_names {
                results.push((n, name, outcome(false, format!("MNIST unavailable: {e}"))));
            }
        }
    }
    let mut failed = 0;
    let mut surprises = 0;
    for (n, name, o) in &results {
        let expected = EXPECTED_FAILURES.contains(n);
        let tag = match (o.pass, expected) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (expected)",
            (true, true) => "PASS (unexpected)",
        };
        println!("{tag} criterion {n:>2} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
        surprises += usize::from(o.pass == expected);
    }
    println!("{} passed, {failed} failed, {} expected to fail", results.len() - failed, EXPECTED_FAILURES.len());
    if surprises > 0 {
        std::process::exit(1);
    }
}
