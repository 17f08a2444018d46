//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIPPED line
//! per criterion and exits nonzero if any criterion fails.
//!
//! Criterion 8 needs the published flow CSV; point `ICSFLOW_DATASET` at it.

mod common;

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{compare_flows, decode_bytes, flow_invariants, oracle_flows};
use icsflow::dataset::{
    clean_dataset, clean_dataset_file, dataset_stats_file, minmax_normalize, split_dataset, CleanOptions,
    NormalizationParams, Scheme, SplitMode, SplitTag, Task, DEFAULT_FRACTIONS,
};
use icsflow::eval::{compute_metrics, confusion_matrix, ConfusionMatrix};
use icsflow::flow::{generate_flows, write_flows, FlowRecord, DEFAULT_INTERVAL};
use icsflow::label::{label_flows, AttackLog, AttackLogEntry, NORMAL};
use icsflow::packet::MacAddr;
use icsflow::models::{
    dt_fit, mlp_fit, reference_spec, rf_fit, Activation, Criterion, ForestParams, MlpModel, MlpParams, ModelKind,
    TreeParams,
};
use icsflow::select::{discretize, entropy, mrmr_rank, mutual_information};
use icsflow::synth::random::{pcap_bytes, random_frames};
use icsflow::synth::{synth_attack_entries, synth_trace, AttackKind, PhaseSpec, TraceScript};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

enum Status {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a}, expected {b}"))
}

/// One randomized trace for criteria 1 and 2: packet count, endpoint count
/// and interval drawn from the seed.
fn random_trace(seed: u64) -> (Vec<icsflow::packet::DecodedPacket>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=2000);
    let endpoints = rng.gen_range(2..=8);
    let interval = if seed % 2 == 0 {
        DEFAULT_INTERVAL
    } else {
        rng.gen_range(0.01..3.0)
    };
    let bytes = pcap_bytes(1_660_000_000, &random_frames(seed, n, endpoints));
    (decode_bytes(&bytes), interval)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut flows = 0;
    let mut packets = 0;
    for seed in 0..200 {
        let (p, interval) = random_trace(seed);
        let (got, _) = generate_flows(&p, interval).map_err(|e| e.to_string())?;
        let want = oracle_flows(&p, interval);
        compare_flows(&got, &want, 1e-9).map_err(|e| format!("trace {seed}: {e}"))?;
        flows += got.len();
        packets += p.len();
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("200 traces, {packets} packets, {flows} flows, {secs:.2} s"))
}

fn manifest_fixtures() -> Vec<TraceScript> {
    let mut scripts = vec![
        TraceScript::all_attacks(11, 120.0),
        TraceScript::all_attacks(12, 300.0),
        TraceScript::benign(13, 60.0),
    ];
    let mut dense = TraceScript::all_attacks(14, 90.0);
    for p in &mut dense.phases {
        p.intensity = 3.0;
    }
    dense.flow_interval = 0.2;
    scripts.push(dense);
    let mut overlap = TraceScript::benign(15, 60.0);
    overlap.allow_overlap = true;
    overlap.phases = vec![
        PhaseSpec {
            attack: AttackKind::Ddos,
            start: 10.0,
            end: 35.0,
            intensity: 1.0,
            target: None,
        },
        PhaseSpec {
            attack: AttackKind::Replay,
            start: 20.0,
            end: 45.0,
            intensity: 2.0,
            target: None,
        },
    ];
    scripts.push(overlap);
    scripts
}

fn labeled_fixture(script: &TraceScript) -> Result<(Vec<FlowRecord>, icsflow::synth::TraceManifest), String> {
    let (bytes, manifest) = synth_trace(script).map_err(|e| e.to_string())?;
    let packets = decode_bytes(&bytes);
    let (mut flows, _) = generate_flows(&packets, script.flow_interval).map_err(|e| e.to_string())?;
    label_flows(&mut flows, &AttackLog::new(synth_attack_entries(script)));
    Ok((flows, manifest))
}

fn criterion_2() -> Outcome {
    let mut checked = 0;
    for seed in 0..200 {
        let (p, interval) = random_trace(seed);
        let (flows, stats) = generate_flows(&p, interval).map_err(|e| e.to_string())?;
        let kept: u64 = flows.iter().map(|f| f.total_packets()).sum();
        ensure(kept + stats.packets_discarded == p.len() as u64, || {
            format!("trace {seed}: {kept} kept + {} discarded != {}", stats.packets_discarded, p.len())
        })?;
        for f in &flows {
            flow_invariants(f, interval).map_err(|e| format!("trace {seed}: {e}"))?;
        }
        checked += flows.len();
    }
    for script in manifest_fixtures() {
        let (flows, manifest) = labeled_fixture(&script)?;
        let kept: u64 = flows.iter().map(|f| f.total_packets()).sum();
        ensure(kept == manifest.total_packets, || {
            format!("seed {}: {kept} packets in flows, manifest has {}", script.seed, manifest.total_packets)
        })?;
        for f in &flows {
            flow_invariants(f, script.flow_interval).map_err(|e| format!("seed {}: {e}", script.seed))?;
        }
        checked += flows.len();
    }
    Ok(format!("{checked} flows checked"))
}

fn random_log(rng: &mut ChaCha8Rng, endpoints: u8) -> AttackLog {
    let n = rng.gen_range(0..5);
    let entries = (0..n)
        .map(|i| {
            let start = 1_660_000_000.0 + rng.gen_range(0.0..5.0);
            let who = 1 + 7 * rng.gen_range(0..endpoints);
            AttackLogEntry {
                attack: AttackKind::ALL[rng.gen_range(0..5)].as_str().into(),
                start_ts: start,
                end_ts: start + rng.gen_range(0.0..3.0),
                attacker_ip: [10, 0, rng.gen_range(0..3), who].into(),
                attacker_mac: MacAddr([2, 0, 0, 0, 0, who]),
                extra: String::new(),
                order: i,
            }
        })
        .collect();
    AttackLog::new(entries)
}

fn criterion_3() -> Outcome {
    let mut mismatches = 0;
    let mut compared = 0;
    let mut subset_checked = 0;
    for script in manifest_fixtures() {
        let (flows, manifest) = labeled_fixture(&script)?;
        let truth: HashMap<(String, String, String, u64), &str> = manifest
            .flows
            .iter()
            .map(|f| {
                (
                    (f.sender.clone(), f.receiver.clone(), f.protocol.clone(), f.start.to_bits()),
                    f.it_label.as_str(),
                )
            })
            .collect();
        ensure(truth.len() == flows.len(), || {
            format!("seed {}: {} flows, manifest lists {}", script.seed, flows.len(), truth.len())
        })?;
        for f in &flows {
            let key = (
                f.key.sender.to_string(),
                f.key.receiver.to_string(),
                f.key.protocol.as_str().to_string(),
                f.start.to_bits(),
            );
            let l = f.labels.as_ref().ok_or("unlabeled flow")?;
            match truth.get(&key) {
                Some(&want) if want == l.it_m => {}
                _ => mismatches += 1,
            }
            ensure(l.nst_b <= l.it_b, || format!("NST attack outside IT attacks: {key:?}"))?;
            compared += 1;
        }
        subset_checked += flows.len();
    }
    ensure(mismatches == 0, || format!("{mismatches} IT mismatches out of {compared}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..50 {
        let (p, interval) = random_trace(seed);
        let (mut flows, _) = generate_flows(&p, interval).map_err(|e| e.to_string())?;
        label_flows(&mut flows, &random_log(&mut rng, 8));
        for f in &flows {
            let l = f.labels.as_ref().ok_or("unlabeled flow")?;
            ensure(l.nst_b <= l.it_b, || format!("trace {seed}: NST attack outside IT attacks"))?;
        }
        subset_checked += flows.len();
        label_flows(&mut flows, &AttackLog::default());
        ensure(
            flows.iter().all(|f| f.labels.as_ref().is_some_and(|l| l.it_m == NORMAL && l.nst_m == NORMAL)),
            || format!("trace {seed}: empty log left non-normal labels"),
        )?;
    }
    Ok(format!("{compared} manifest flows, 0 IT mismatches; NST ⊆ IT on {subset_checked} flows"))
}

fn criterion_4() -> Outcome {
    let cols = vec!["v".to_string()];
    let p = NormalizationParams::fit(&cols, array![[0.0], [10.0], [3.0]].view());
    close(p.scale(0, 5.0), 0.5, 1e-9, "V=5 in [0,10]")?;
    close(p.scale(0, 12.0), 1.2, 1e-9, "V=12 in [0,10]")?;
    let c = NormalizationParams::fit(&cols, array![[7.0], [7.0]].view());
    close(c.scale(0, 7.0), 0.0, 0.0, "constant column")?;
    close(c.scale(0, 9.0), 0.0, 0.0, "constant column, unseen value")?;

    // Binary matrix with TP=50, FP=1, FN=2, TN=47 for the attack class.
    let names = vec![NORMAL.to_string(), "attack".to_string()];
    let mut cm = ConfusionMatrix::new(names.clone());
    cm.counts = vec![vec![47, 1], vec![2, 50]];
    let r = compute_metrics(&cm).map_err(|e| e.to_string())?;
    let a = r.class("attack").ok_or("no attack row")?;
    let (tp, fp, fn_, tn) = (50.0, 1.0, 2.0, 47.0);
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    close(a.precision, precision, 1e-9, "precision")?;
    close(a.recall, recall, 1e-9, "recall")?;
    close(a.f1, 2.0 / (1.0 / precision + 1.0 / recall), 1e-9, "F1")?;
    close(a.f1, 0.970873786, 1e-9, "F1 literal")?;
    close(a.accuracy, (tp + tn) / (tp + tn + fp + fn_), 1e-9, "accuracy")?;
    close(r.accuracy, 97.0 / 100.0, 1e-9, "overall accuracy")?;

    // No predicted positives for class 1; class 2 never occurs.
    let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 0, 0, 0], &["a".into(), "b".into(), "c".into()])
        .map_err(|e| e.to_string())?;
    let r = compute_metrics(&cm).map_err(|e| e.to_string())?;
    let b = &r.classes[1];
    ensure(b.precision == 0.0 && b.precision_undefined, || "precision with TP+FP=0 not a flagged zero".into())?;
    ensure(b.f1 == 0.0 && b.f1_undefined, || "F1 with P+R=0 not a flagged zero".into())?;
    let c = &r.classes[2];
    ensure(c.recall == 0.0 && c.recall_undefined, || "recall with TP+FN=0 not a flagged zero".into())?;
    ensure(r.classes.iter().all(|c| c.f1.is_finite() && c.precision.is_finite()), || "NaN metric".into())?;
    Ok("Min-Max and metric examples within 1e-9; zero divisions flagged".into())
}

/// Plug-in MI in bits from an explicit joint table.
fn oracle_mi(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut px: HashMap<usize, f64> = HashMap::new();
    let mut py: HashMap<usize, f64> = HashMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1.0 / n;
        *px.entry(a).or_default() += 1.0 / n;
        *py.entry(b).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(a, b), &p)| p * (p / (px[&a] * py[&b])).log2()).sum()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..100 {
        let n = rng.gen_range(2..400);
        let kx = rng.gen_range(1..10);
        let ky = rng.gen_range(1..10);
        let x: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kx)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ky)).collect();
        let xy = mutual_information(&x, &y).map_err(|e| e.to_string())?;
        let yx = mutual_information(&y, &x).map_err(|e| e.to_string())?;
        ensure((xy - yx).abs() <= 1e-12, || format!("table {t}: MI asymmetric {xy} vs {yx}"))?;
        ensure(xy <= entropy(&x).min(entropy(&y)) + 1e-12, || format!("table {t}: MI above entropy bound"))?;
        close(xy, oracle_mi(&x, &y), 1e-12, "MI vs oracle")?;
    }

    // Label copy plus noise: the copy ranks first.
    let n = 600;
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let mut rows = Array2::zeros((n, 4));
    for i in 0..n {
        rows[[i, 0]] = rng.gen_range(0.0..1.0);
        rows[[i, 1]] = rng.gen_range(0.0..1.0) + labels[i] as f64 * 0.2;
        rows[[i, 2]] = labels[i] as f64;
        rows[[i, 3]] = rng.gen_range(0.0..1.0);
    }
    let names: Vec<String> = ["noise", "weak", "copy", "noise2"].iter().map(|s| s.to_string()).collect();
    let ranking = mrmr_rank(rows.view(), &labels, &names, 16).map_err(|e| e.to_string())?;
    ensure(ranking.features[0].name == "copy", || {
        format!("label copy ranked {:?}", ranking.position("copy"))
    })?;

    // y = 2a + b with a balanced and b skewed, so a is picked first and b
    // competes with the exact copy a' at step two. Checked against
    // brute-force greedy scoring.
    let a: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let b: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(0.3))).collect();
    let noise: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let y: Vec<usize> = a.iter().zip(&b).map(|(a, b)| 2 * a + b).collect();
    let cols = [a.clone(), b.clone(), a.clone(), noise];
    let names: Vec<String> = ["a", "b", "a_copy", "noise"].iter().map(|s| s.to_string()).collect();
    let rows = Array2::from_shape_fn((n, 4), |(i, j)| cols[j][i] as f64);
    let ranking = mrmr_rank(rows.view(), &y, &names, 16).map_err(|e| e.to_string())?;

    let binned: Vec<Vec<usize>> = (0..4).map(|j| discretize(&rows.column(j).to_vec(), 16)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut copy_score_when_b_picked = f64::NAN;
    while chosen.len() < 4 {
        let score = |j: usize| {
            let rel = oracle_mi(&binned[j], &y);
            if chosen.is_empty() {
                rel
            } else {
                rel - chosen.iter().map(|&s| oracle_mi(&binned[j], &binned[s])).sum::<f64>() / chosen.len() as f64
            }
        };
        let best = (0..4)
            .filter(|j| !chosen.contains(j))
            .fold(None::<(usize, f64)>, |acc, j| match acc {
                Some((_, s)) if s >= score(j) - 1e-12 => acc,
                _ => Some((j, score(j))),
            })
            .unwrap();
        if best.0 == 1 && chosen == [0] {
            copy_score_when_b_picked = score(2);
        }
        chosen.push(best.0);
    }
    let oracle_order: Vec<&str> = chosen.iter().map(|&j| names[j].as_str()).collect();
    let got: Vec<&str> = ranking.features.iter().map(|f| f.name.as_str()).collect();
    ensure(got == oracle_order, || format!("ranking {got:?}, brute force {oracle_order:?}"))?;
    ensure(copy_score_when_b_picked <= 1e-12, || {
        format!("duplicate scored {copy_score_when_b_picked} at its competing step")
    })?;
    let pos = |s| ranking.position(s).unwrap();
    ensure(pos("a_copy") > pos("b"), || "duplicate ranked above the informative feature".into())?;
    Ok(format!("100 tables; label copy first; duplicate ranking {got:?}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let activations = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::None];
    let mut worst: f64 = 0.0;
    for cfg in 0..20 {
        let layers = rng.gen_range(1..=3);
        let hidden: Vec<usize> = (0..layers).map(|_| rng.gen_range(1..=8)).collect();
        let k = rng.gen_range(2..=4);
        let act = activations[cfg % 4];
        let mut model = MlpModel::init(5, k, MlpParams::new(hidden.clone(), act, rng.gen()))
            .map_err(|e| e.to_string())?;
        for l in &mut model.layers {
            l.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let x = Array2::from_shape_simple_fn((10, 5), || rng.gen_range(-2.0..2.0));
        let y: Vec<usize> = (0..10).map(|_| rng.gen_range(0..k)).collect();
        let (_, grads) = model.loss_and_gradient(x.view(), &y);
        let eps = 1e-5;
        for li in 0..model.layers.len() {
            let (r, c) = model.layers[li].weights.dim();
            let mut params: Vec<(Option<(usize, usize)>, usize, f64)> = Vec::new();
            for i in 0..r {
                for j in 0..c {
                    params.push((Some((i, j)), 0, grads[li].weights[[i, j]]));
                }
            }
            for j in 0..c {
                params.push((None, j, grads[li].bias[j]));
            }
            for (w, j, analytic) in params {
                let probe = |delta: f64| {
                    let mut m = model.clone();
                    match w {
                        Some(ij) => m.layers[li].weights[ij] += delta,
                        None => m.layers[li].bias[j] += delta,
                    }
                    m.loss(x.view(), &y)
                };
                let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                ensure(rel < 1e-4, || {
                    format!("config {cfg} ({hidden:?}, {act:?}): layer {li} analytic {analytic} numeric {numeric}")
                })?;
            }
        }
    }

    let xor = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let xor_y = [0, 1, 1, 0];
    for criterion in [Criterion::Gini, Criterion::Twoing, Criterion::Deviance] {
        for max_splits in [3, 4, 10] {
            let t = dt_fit(xor.view(), &xor_y, 2, &TreeParams { criterion, max_splits }).map_err(|e| e.to_string())?;
            for (row, &want) in xor.rows().into_iter().zip(&xor_y) {
                let p = t.leaf_probs(row);
                ensure(p[want] == 1.0, || format!("XOR misfit with {criterion:?}, max_splits {max_splits}"))?;
            }
        }
    }

    for trial in 0..10 {
        let n = 200;
        let x = Array2::from_shape_simple_fn((n, 3), || rng.gen_range(0..20) as f64);
        let mut seen = std::collections::HashSet::new();
        let keep: Vec<usize> = (0..n).filter(|&i| seen.insert(format!("{}", x.row(i)))).collect();
        let x = x.select(ndarray::Axis(0), &keep);
        let y: Vec<usize> = (0..x.nrows()).map(|_| rng.gen_range(0..3)).collect();
        for criterion in [Criterion::Gini, Criterion::Twoing, Criterion::Deviance] {
            let t = dt_fit(x.view(), &y, 3, &TreeParams { criterion, max_splits: usize::MAX })
                .map_err(|e| e.to_string())?;
            let wrong = x.rows().into_iter().zip(&y).filter(|(r, &c)| t.leaf_probs(*r)[c] != 1.0).count();
            ensure(wrong == 0, || format!("trial {trial}, {criterion:?}: {wrong} training rows misfit at purity"))?;
        }
    }

    let x = Array2::from_shape_simple_fn((300, 6), || rng.gen_range(-1.0..1.0));
    let y: Vec<usize> = x.rows().into_iter().map(|r| usize::from(r[0] + r[1] * r[2] > 0.0)).collect();
    let fp = ForestParams::new(15, 40, 3, 99);
    let f1 = rf_fit(x.view(), &y, 2, &fp).map_err(|e| e.to_string())?;
    let f2 = rf_fit(x.view(), &y, 2, &fp).map_err(|e| e.to_string())?;
    ensure(f1 == f2, || "forest differs between runs".into())?;
    let mp = MlpParams::new(vec![7, 4], Activation::Tanh, 99);
    let m1 = mlp_fit(x.view(), &y, 2, &mp).map_err(|e| e.to_string())?;
    let m2 = mlp_fit(x.view(), &y, 2, &mp).map_err(|e| e.to_string())?;
    let bits = |m: &MlpModel| -> Vec<u64> {
        m.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v.to_bits()).collect::<Vec<_>>())
            .chain(m.loss_curve.iter().map(|v| v.to_bits()))
            .collect()
    };
    ensure(bits(&m1) == bits(&m2), || "MLP differs between runs".into())?;
    Ok(format!("worst gradient relative error {worst:.2e}; XOR and purity fits exact; RF/MLP bit-identical"))
}

fn criterion_7() -> Outcome {
    let script = TraceScript::all_attacks(2024, 300.0);
    let (flows, _) = labeled_fixture(&script)?;
    let mut csv = Vec::new();
    write_flows(&mut csv, &flows).map_err(|e| e.to_string())?;
    let mut m = clean_dataset(&csv[..], Task::Detect, Scheme::Nst, &CleanOptions::default()).map_err(|e| e.to_string())?;
    split_dataset(&mut m, DEFAULT_FRACTIONS, 7, SplitMode::Random).map_err(|e| e.to_string())?;
    minmax_normalize(&mut m).map_err(|e| e.to_string())?;
    let (xtr, ytr) = m.part(SplitTag::Train).map_err(|e| e.to_string())?;
    let (xte, yte) = m.part(SplitTag::Test).map_err(|e| e.to_string())?;
    let p = m.column_names.len();
    let predictors = (p as f64).sqrt().round() as usize;
    let forest = rf_fit(xtr.view(), &ytr, 2, &ForestParams::new(10, 850, predictors, 7)).map_err(|e| e.to_string())?;
    let pred: Vec<usize> = xte
        .rows()
        .into_iter()
        .map(|r| icsflow::models::argmax(&forest.predict_proba_row(r)))
        .collect();
    let cm = confusion_matrix(&yte, &pred, &m.class_names).map_err(|e| e.to_string())?;
    let r = compute_metrics(&cm).map_err(|e| e.to_string())?;
    let f1 = r.class("attack").ok_or("no attack class")?.f1;
    let attacks = yte.iter().filter(|&&c| c == 1).count();
    ensure(f1 >= 0.90, || format!("attack F1 {f1:.4} < 0.90"))?;
    Ok(format!(
        "{} flows, test {} rows ({attacks} attack), predictors {predictors}, attack F1 {f1:.4}",
        m.n_rows(),
        yte.len()
    ))
}

fn criterion_8() -> Result<Status, String> {
    let Some(path) = std::env::var_os("ICSFLOW_DATASET") else {
        return Ok(Status::Skipped("ICSFLOW_DATASET not set".into()));
    };
    let t0 = Instant::now();
    let stats = dataset_stats_file(&path).map_err(|e| e.to_string())?;
    let counts = (stats.it_count(NORMAL), stats.nst_count(NORMAL), stats.total);
    ensure(counts == (30236, 36706, 45719), || format!("(IT normal, NST normal, total) = {counts:?}"))?;

    let mut detail = format!("counts {counts:?}");
    for task in [Task::Detect, Task::Identify] {
        let mut m = clean_dataset_file(&path, task, Scheme::Nst, &CleanOptions { allow_extra_columns: true })
            .map_err(|e| e.to_string())?;
        split_dataset(&mut m, DEFAULT_FRACTIONS, 1, SplitMode::Random).map_err(|e| e.to_string())?;
        minmax_normalize(&mut m).map_err(|e| e.to_string())?;
        let (xtr, ytr) = m.part(SplitTag::Train).map_err(|e| e.to_string())?;
        let (xte, yte) = m.part(SplitTag::Test).map_err(|e| e.to_string())?;
        let model = reference_spec(ModelKind::Rf, task, m.column_names.len(), 1)
            .fit(xtr.view(), &ytr, m.n_classes())
            .map_err(|e| e.to_string())?;
        let pred = model.predict(xte.view()).map_err(|e| e.to_string())?;
        let r = compute_metrics(&confusion_matrix(&yte, &pred, &m.class_names).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        match task {
            Task::Detect => {
                ensure(r.accuracy >= 0.990, || format!("binary accuracy {:.4} < 0.990", r.accuracy))?;
            }
            Task::Identify => {
                ensure(r.accuracy >= 0.975, || format!("multi-class accuracy {:.4} < 0.975", r.accuracy))?;
                let scan = r.class("ip-scan").ok_or("no ip-scan class")?.f1;
                ensure(scan <= 0.75, || format!("IP-Scan F1 {scan:.4} > 0.75"))?;
                detail.push_str(&format!(", IP-Scan F1 {scan:.4}"));
            }
        }
        detail.push_str(&format!(", {task:?} accuracy {:.4}", r.accuracy));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 1800.0, || format!("took {secs:.0} s"))?;
    Ok(Status::Pass(format!("{detail}, {secs:.0} s")))
}

fn run(f: impl FnOnce() -> Result<Status, String>) -> Status {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(msg)) => Status::Fail(msg),
        Err(p) => Status::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| p.downcast_ref::<&str>().copied())
                .unwrap_or("?")
        )),
    }
}

fn plain(f: fn() -> Outcome) -> impl FnOnce() -> Result<Status, String> {
    move || f().map(Status::Pass)
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Result<Status, String>>)> = vec![
        ("1 flow aggregation matches brute-force oracle", Box::new(plain(criterion_1))),
        ("2 flow invariants", Box::new(plain(criterion_2))),
        ("3 labeling properties", Box::new(plain(criterion_3))),
        ("4 normalization and metric values", Box::new(plain(criterion_4))),
        ("5 MRMR properties", Box::new(plain(criterion_5))),
        ("6 model checks", Box::new(plain(criterion_6))),
        ("7 end-to-end synthetic detection", Box::new(plain(criterion_7))),
        ("8 published dataset reproduction", Box::new(criterion_8)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let status = run(f);
        let secs = t0.elapsed().as_secs_f64();
        match status {
            Status::Pass(d) => println!("PASS    criterion {name} ({secs:.2} s): {d}"),
            Status::Skipped(d) => println!("SKIPPED criterion {name}: {d}"),
            Status::Fail(d) => {
                failed += 1;
                println!("FAIL    criterion {name} ({secs:.2} s): {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
