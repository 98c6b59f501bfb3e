//! Acceptance suite: one test per criterion, each printing a single
//! `[PASS]`/`[FAIL]` line before asserting. Run with `--nocapture` to see the
//! lines.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{full_split, small_dataset};
use subscore_mtl::data::{
    generate_synthetic_cohort, round_half_even, subject_split, Group, SynthConfig,
};
use subscore_mtl::eval::{mae, pearson_r, rmse, LITERATURE_LABEL};
use subscore_mtl::loss::{total_loss, weighted_mse_task, WeightConfig, EMPHASIZED};
use subscore_mtl::model::{init_params, ModelConfig};
use subscore_mtl::train::{gradcheck, train, train_with, TrainConfig};
use subscore_mtl::N_TASKS;

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!(
        "[{}] criterion {id:>2}: {name} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subscore-mtl"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn binary");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn c01_gradient_correctness() {
    let cfg = ModelConfig::tiny();
    let n_params = cfg.param_count();
    let started = Instant::now();
    let rep = gradcheck(&cfg, 0, 1e-5).unwrap();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        n_params <= 10_000 && rep.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{n_params} params, max rel error {:.2e} over {} coordinates ({}), {secs:.1}s",
            rep.max_rel_error, rep.checked, rep.worst_tensor
        ),
    );
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn c02_loss_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_hom, mut worst_add, mut worst_uni) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let b = rng.random_range(1..=16);
        let mut row =
            || -> [f64; N_TASKS] { std::array::from_fn(|_| rng.random_range(-5.0..15.0)) };
        let preds: Vec<[f64; N_TASKS]> = (0..b).map(|_| row()).collect();
        let targets: Vec<[f64; N_TASKS]> = (0..b).map(|_| row()).collect();
        let w: [f64; N_TASKS] = std::array::from_fn(|_| rng.random_range(0.0..2.0));
        let wc = WeightConfig::new(None, w).unwrap();
        let c = rng.random_range(0.01..100.0);

        let l = total_loss(&preds, &targets, &wc).unwrap();
        let lc = total_loss(&preds, &targets, &wc.scaled(c)).unwrap();
        worst_hom = worst_hom.max(rel(lc, c * l));

        let per_task: f64 = (0..N_TASKS)
            .map(|j| {
                let p: Vec<f64> = preds.iter().map(|r| r[j]).collect();
                let y: Vec<f64> = targets.iter().map(|r| r[j]).collect();
                weighted_mse_task(&p, &y, w[j]).unwrap()
            })
            .sum();
        worst_add = worst_add.max(rel(l, per_task));

        // Unweighted sum of per-task MSEs, straight from the definition.
        let mut plain = 0.0;
        for j in 0..N_TASKS {
            let mut s = 0.0;
            for i in 0..b {
                s += (targets[i][j] - preds[i][j]).powi(2);
            }
            plain += s / b as f64;
        }
        let lu = total_loss(&preds, &targets, &WeightConfig::uniform()).unwrap();
        worst_uni = worst_uni.max(rel(lu, plain));
    }
    verdict(
        2,
        "loss algebra",
        worst_hom <= 1e-12 && worst_add <= 1e-12 && worst_uni <= 1e-12,
        format!(
            "1000 triples; worst relative error homogeneity {worst_hom:.1e}, additivity {worst_add:.1e}, uniform vs plain MSE {worst_uni:.1e}"
        ),
    );
}

#[test]
fn c03_preset_fidelity() {
    let m = WeightConfig::moderate();
    let s = WeightConfig::strong();
    let u = WeightConfig::uniform();
    let pct = |x: f64, d: usize| format!("{:.*}%", d, 100.0 * x);
    let emphasized_ok = [&m, &s].iter().all(|wc| {
        let hi = wc.w[EMPHASIZED[0]];
        (0..N_TASKS).all(|j| (wc.w[j] == hi) == EMPHASIZED.contains(&j))
    });
    let ok = m.total() == 1.0
        && s.total() == 1.0
        && m.emphasized_share() == 0.48
        && s.emphasized_share() == 0.96
        && pct(m.emphasized_share(), 1) == "48.0%"
        && pct(s.emphasized_share(), 0) == "96%"
        && (u.emphasized_share() - 3.0 / 13.0).abs() < 1e-15
        && pct(u.emphasized_share(), 1) == "23.1%"
        && u.total() == 13.0
        && emphasized_ok;
    verdict(
        3,
        "preset fidelity",
        ok,
        format!(
            "totals {}/{}/{}; Q1+Q4+Q8 shares moderate {}, strong {}, uniform {}",
            m.total(),
            s.total(),
            u.total(),
            pct(m.emphasized_share(), 1),
            pct(s.emphasized_share(), 0),
            pct(u.emphasized_share(), 1)
        ),
    );
}

fn brute_mae(y: &[f64], yh: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in (0..y.len()).rev() {
        s += (y[i] - yh[i]).abs();
    }
    s / y.len() as f64
}

fn brute_rmse(y: &[f64], yh: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in (0..y.len()).rev() {
        s += (y[i] - yh[i]) * (y[i] - yh[i]);
    }
    (s / y.len() as f64).sqrt()
}

fn brute_r(y: &[f64], yh: &[f64]) -> f64 {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yh.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..y.len() {
        sxy += (y[i] - my) * (yh[i] - mh);
        sxx += (y[i] - my).powi(2);
        syy += (yh[i] - mh).powi(2);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[test]
fn c04_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_oracle, mut worst_affine) = (0.0f64, 0.0f64);
    let mut ordering_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..64);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let yh: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let (m, r2, r) = (
            mae(&y, &yh).unwrap(),
            rmse(&y, &yh).unwrap(),
            pearson_r(&y, &yh).unwrap().unwrap(),
        );
        worst_oracle = worst_oracle
            .max((m - brute_mae(&y, &yh)).abs())
            .max((r2 - brute_rmse(&y, &yh)).abs())
            .max((r - brute_r(&y, &yh)).abs());
        ordering_ok &= m <= r2;

        let a = rng.random_range(0.01..100.0);
        let b = rng.random_range(-50.0..50.0);
        let ay: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let ayh: Vec<f64> = yh.iter().map(|v| a * v + b).collect();
        worst_affine = worst_affine
            .max((pearson_r(&ay, &yh).unwrap().unwrap() - r).abs())
            .max((pearson_r(&y, &ayh).unwrap().unwrap() - r).abs());
    }
    verdict(
        4,
        "metrics oracle",
        worst_oracle <= 1e-9 && ordering_ok && worst_affine <= 1e-12,
        format!(
            "1000 vectors; worst deviation from brute force {worst_oracle:.1e}, MAE<=RMSE {}, worst affine change in r {worst_affine:.1e}",
            if ordering_ok { "always" } else { "violated" }
        ),
    );
}

#[test]
fn c05_head_isolation() {
    let data = small_dataset(4, 4, 5);
    let split = full_split(&data);
    let silenced = [1usize, 2, 5, 9, 12];
    let mut w = WeightConfig::strong().w;
    for &j in &silenced {
        w[j] = 0.0;
    }
    let mcfg = ModelConfig::tiny();
    let tcfg = TrainConfig {
        // 8 subjects in batches of 4: 2 steps per epoch.
        epochs: 25,
        weights: WeightConfig::new(None, w).unwrap(),
        seed: 5,
        ..Default::default()
    };
    let init = init_params::<f32>(&mcfg, tcfg.seed).unwrap();
    let mut steps = 0;
    let (trained, _) = train_with(init.clone(), &data, &split, &tcfg, |_| steps += 2).unwrap();
    let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut unchanged = 0;
    let mut all_same = true;
    for &j in &silenced {
        for ti in init.layout.heads[j].tensors() {
            unchanged += 1;
            all_same &= bits(init.t(ti)) == bits(trained.t(ti));
        }
    }
    let others_moved = (0..N_TASKS)
        .filter(|j| !silenced.contains(j))
        .all(|j| init.t(init.layout.heads[j].weight) != trained.t(init.layout.heads[j].weight));
    verdict(
        5,
        "head isolation",
        steps == 50 && all_same && others_moved,
        format!(
            "{steps} steps; {unchanged} tensors of zero-weight heads bit-unchanged: {all_same}; weighted heads moved: {others_moved}"
        ),
    );
}

// Training settings for the overfit run. The criterion fixes cohort, model,
// preset and epoch count but not the optimizer; the default Adam settings
// (lr 1e-3, beta2 0.999, batch 4) escape the mean-predictor plateau too late
// on many cohorts, these reach the threshold on most.
const OVERFIT_SEED: u64 = 0;
const OVERFIT_BATCH: usize = 2;
const OVERFIT_LR: f64 = 7e-4;
const OVERFIT_BETA2: f64 = 0.95;

#[test]
fn c06_overfit_capacity() {
    let data = small_dataset(4, 4, OVERFIT_SEED);
    let split = full_split(&data);
    let mut tcfg = TrainConfig {
        epochs: 200,
        batch_size: OVERFIT_BATCH,
        weights: WeightConfig::strong(),
        seed: OVERFIT_SEED,
        ..Default::default()
    };
    tcfg.adam.learning_rate = OVERFIT_LR;
    tcfg.adam.beta2 = OVERFIT_BETA2;
    let started = Instant::now();
    let (_, h) = train(&data, &split, &ModelConfig::tiny(), &tcfg).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let last = h.final_train_loss().unwrap();
    let ratio = last / h.initial_train_loss;
    verdict(
        6,
        "overfit capacity",
        ratio < 0.05 && secs < 300.0,
        format!(
            "8 subjects, tiny model, strong preset, 200 epochs: loss {:.4} -> {last:.4} ({:.2}% of initial), {secs:.1}s",
            h.initial_train_loss,
            100.0 * ratio
        ),
    );
}

#[test]
fn c07_split_hygiene() {
    let mut sc = SynthConfig::new(163, 95, 7);
    sc.dims = [8, 8, 8];
    let cohort = generate_synthetic_cohort(&sc).unwrap().cohort;
    let all: BTreeSet<String> = cohort.ids().map(String::from).collect();
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let s = subject_split(&cohort, 0.8, seed).unwrap();
        let union: BTreeSet<String> = s.train_ids.union(&s.val_ids).cloned().collect();
        let mut ok = s.train_ids.is_disjoint(&s.val_ids)
            && union == all
            && s.train_ids.len() == 206
            && s.val_ids.len() == 52;
        for g in Group::ALL {
            let n_g = cohort.count(g);
            let in_train = s
                .train_ids
                .iter()
                .filter(|id| cohort.get(id).unwrap().group == g)
                .count();
            ok &= in_train == round_half_even(0.8 * n_g as f64);
        }
        if !ok {
            failures.push(seed);
        }
    }
    verdict(
        7,
        "split hygiene",
        all.len() == 258 && failures.is_empty(),
        format!(
            "258 subjects x 100 seeds: 206/52, disjoint, covering, per-group 130/33 + 76/19; failing seeds {failures:?}"
        ),
    );
}

#[test]
fn c08_weight_derivation() {
    let dir = tempfile::tempdir().unwrap();
    let cohort_dir = dir.path().join("cohort");
    run_ok(
        bin()
            .args([
                "synth", "--cn", "163", "--mci", "95", "--seed", "7", "--dim", "8",
            ])
            .arg("--out")
            .arg(&cohort_dir),
    );
    let out = dir.path().join("weights.json");
    let stdout = run_ok(
        bin()
            .args([
                "derive-weights",
                "--top-k",
                "3",
                "--high",
                "0.32",
                "--low",
                "0.004",
            ])
            .arg("--manifest")
            .arg(cohort_dir.join("manifest.csv"))
            .arg("--out")
            .arg(&out),
    );
    let emitted = fs::read(&out).unwrap();
    let derived = WeightConfig::from_json(std::str::from_utf8(&emitted).unwrap()).unwrap();
    let selected: Vec<usize> = (0..N_TASKS).filter(|&j| derived.w[j] == 0.32).collect();
    let strong = WeightConfig::strong().to_json();
    verdict(
        8,
        "weight derivation",
        selected == EMPHASIZED && emitted == strong.as_bytes() && stdout.contains(&strong),
        format!(
            "selected {:?}; emitted config {} the strong preset byte-for-byte",
            selected
                .iter()
                .map(|j| format!("Q{}", j + 1))
                .collect::<Vec<_>>(),
            if emitted == strong.as_bytes() {
                "equals"
            } else {
                "differs from"
            }
        ),
    );
}

#[test]
fn c09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cohort_dir = dir.path().join("cohort");
    run_ok(
        bin()
            .args(["synth", "--cn", "6", "--mci", "6", "--seed", "3"])
            .arg("--out")
            .arg(&cohort_dir),
    );
    let manifest = cohort_dir.join("manifest.csv");
    let run = |name: &str| {
        let out = dir.path().join(name);
        run_ok(
            bin()
                .args([
                    "--threads",
                    "1",
                    "train",
                    "--tiny",
                    "--epochs",
                    "4",
                    "--preset",
                    "strong",
                    "--seed",
                    "11",
                    "--split-seed",
                    "2",
                ])
                .arg("--manifest")
                .arg(&manifest)
                .arg("--out")
                .arg(&out),
        );
        ["history.csv", "checkpoint.json", "checkpoint.bin"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let a = run("a");
    let b = run("b");
    let same = a == b;
    verdict(
        9,
        "determinism",
        same,
        format!(
            "two --threads 1 train runs: history.csv, checkpoint.json, checkpoint.bin ({} bytes) {}",
            a[2].len(),
            if same { "byte-identical" } else { "differ" }
        ),
    );
}

#[test]
fn c10_ablation_harness_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cohort_dir = dir.path().join("cohort");
    run_ok(
        bin()
            .args(["synth", "--cn", "5", "--mci", "5", "--seed", "1"])
            .arg("--out")
            .arg(&cohort_dir),
    );
    let out = dir.path().join("ablation");
    run_ok(
        bin()
            .args(["ablate", "--tiny", "--epochs", "2", "--seed", "1"])
            .arg("--manifest")
            .arg(cohort_dir.join("manifest.csv"))
            .arg("--out")
            .arg(&out),
    );
    let records = |name: &str| -> Vec<csv::StringRecord> {
        let text = fs::read_to_string(out.join(name)).unwrap();
        csv::Reader::from_reader(text.as_bytes())
            .records()
            .map(Result::unwrap)
            .collect()
    };
    let overall = records("ablation.csv");
    let trained: Vec<&str> = overall
        .iter()
        .filter(|r| &r[0] != LITERATURE_LABEL)
        .map(|r| r.get(2).unwrap())
        .collect();
    let literature: Vec<[String; 4]> = overall
        .iter()
        .filter(|r| &r[0] == LITERATURE_LABEL)
        .map(|r| [1, 4, 5, 6].map(|k| r[k].to_string()))
        .collect();
    let expected = [
        ["Strong weighted ViT", "4.49", "5.29", "0.21"],
        ["Moderate weighted ViT", "4.52", "5.16", "0.24"],
        ["Uniform weighted ViT", "4.58", "5.28", "0.13"],
    ];
    let groups = records("ablation_groups.csv");
    let group_refs: Vec<[String; 5]> = groups
        .iter()
        .filter(|r| &r[0] == LITERATURE_LABEL)
        .map(|r| [1, 3, 5, 6, 7].map(|k| r[k].to_string()))
        .collect();
    let expected_groups = [
        ["Strong weighted ViT", "CN", "3.94", "4.74", "0.10"],
        ["Moderate weighted ViT", "CN", "4.08", "4.62", "0.30"],
        ["Dirty Model", "CN", "3.18", "n/a", "0.08"],
        ["Strong weighted ViT", "MCI", "5.32", "6.02", "0.27"],
        ["Moderate weighted ViT", "MCI", "5.18", "5.87", "0.15"],
        ["Dirty Model", "MCI", "5.06", "n/a", "0.37"],
    ];
    let text = fs::read_to_string(out.join("ablation.txt")).unwrap();
    let ok = trained == ["strong", "moderate", "uniform"]
        && literature == expected.map(|r| r.map(String::from))
        && group_refs == expected_groups.map(|r| r.map(String::from))
        && text.contains("not reproduced");
    verdict(
        10,
        "ablation harness shape",
        ok,
        format!(
            "{} trained rows {:?} + {} literature rows labelled {LITERATURE_LABEL:?}; {} group reference rows",
            trained.len(),
            trained,
            literature.len(),
            group_refs.len()
        ),
    );
}
