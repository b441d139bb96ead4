//! Acceptance suite. Prints one `criterion N: PASS|FAIL|SKIP` line per
//! criterion and exits non-zero when any criterion fails.

use std::fmt::Write as _;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlg::dataset::{split_of, ReferenceInstance, Split};
use vlg::evaluation::{
    evaluate, read_results_file, render_table, student_t_two_tailed, welch_t, ResultRow, Stat,
};
use vlg::features::synth::{generate_dataset, SynthConfig, SynthDataset, SynthDatasetSpec};
use vlg::model::{batch_loss, gradients, init_params, ModelConfig, Pooling, Variant};
use vlg::training::loss::{smoothed_bce, LossConfig};
use vlg::training::{adamw_tensor, lr_at, train, TrainConfig};
use vlg::voxel::{assemble_volume, factor_volume, FactorSet, FactorTriplet, GRID, NUM_FACTORS};

const VOXEL_ORACLE_TOL: f64 = 1e-12;
const VOXEL_LINEARITY_TOL: f64 = 1e-10;
const VOXEL_TRIPLETS: usize = 100;
const VOXEL_BUDGET: Duration = Duration::from_secs(5);

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;
/// Tensors whose numeric and analytic gradient norms are both below this
/// carry no gradient; their relative error is rounding noise.
const FD_ZERO_GRADIENT: f64 = 1e-7;
const FD_BUDGET: Duration = Duration::from_secs(120);

const LOSS_TOL: f64 = 1e-9;
const ADAMW_TOL: f64 = 1e-12;

const OVERFIT_PAIRS: usize = 80;
const OVERFIT_TRAIN_PAIRS: usize = 64;
const OVERFIT_MAX_STEPS: u64 = 500;
const OVERFIT_MIN_ACC: f64 = 95.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(180);

const HELDOUT_PAIRS: usize = 200;
const HELDOUT_SEEDS: [u64; 3] = [1, 2, 3];
const FULL_MIN_BLIND: f64 = 85.0;
const VISIOLINGUISTIC_MAX_BLIND: f64 = 60.0;
const MIN_VISUAL: f64 = 85.0;
const HELDOUT_BUDGET: Duration = Duration::from_secs(600);

const WELCH_ORACLE_TOL: f64 = 1e-9;
const WELCH_QUADRATURE_TOL: f64 = 1e-6;

const SNARE_DIR_ENV: &str = "VLG_SNARE_DIR";
const SNARE_CATEGORIES_ENV: &str = "VLG_SNARE_CATEGORIES";

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(outcome: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    match outcome {
        Outcome::Pass(d) if elapsed > budget => Outcome::Fail(format!(
            "{d}; took {:.1}s, budget {}s",
            elapsed.as_secs_f64(),
            budget.as_secs()
        )),
        other => other,
    }
}

// Criterion 1

fn random_triplet(rng: &mut ChaCha8Rng) -> FactorTriplet {
    let mut profile = || -> Vec<f32> { (0..GRID).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    let (x, y, z) = (profile(), profile(), profile());
    FactorTriplet::from_slices(&x, &y, &z).unwrap()
}

fn triple_loop(f: &FactorTriplet) -> Vec<f64> {
    let mut out = vec![0.0; GRID * GRID * GRID];
    for i in 0..GRID {
        for j in 0..GRID {
            for k in 0..GRID {
                out[(i * GRID + j) * GRID + k] =
                    f64::from(f.x[i]) * f64::from(f.y[j]) * f64::from(f.z[k]);
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn voxel_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let triplets: Vec<FactorTriplet> = (0..VOXEL_TRIPLETS).map(|_| random_triplet(&mut rng)).collect();
    let oracle_err = triplets
        .iter()
        .map(|f| max_abs_diff(factor_volume(f).unwrap().values(), &triple_loop(f)))
        .fold(0.0, f64::max);
    let mut linearity_err: f64 = 0.0;
    for chunk in triplets.chunks(NUM_FACTORS).filter(|c| c.len() == NUM_FACTORS) {
        let fs = FactorSet::new(chunk.to_vec()).unwrap();
        let mut sum = vec![0.0; GRID * GRID * GRID];
        for f in chunk {
            for (s, v) in sum.iter_mut().zip(triple_loop(f)) {
                *s += v;
            }
        }
        linearity_err = linearity_err.max(max_abs_diff(assemble_volume(&fs).unwrap().values(), &sum));
    }
    let elapsed = start.elapsed();
    let outcome = check(
        oracle_err <= VOXEL_ORACLE_TOL && linearity_err <= VOXEL_LINEARITY_TOL,
        format!(
            "{VOXEL_TRIPLETS} triplets, oracle max err {oracle_err:.2e} (tol {VOXEL_ORACLE_TOL:e}), \
             linearity max err {linearity_err:.2e} (tol {VOXEL_LINEARITY_TOL:e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    within_budget(outcome, elapsed, VOXEL_BUDGET)
}

// Criterion 2

fn gradient_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_view: 16,
        d_text: 16,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 12,
        mlp_hidden: 6,
        fusion_dim: 4,
        variant,
        max_words: 4,
        word_positions: true,
        factor_positions: true,
        view_pooling: Pooling::Max,
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Worst per-tensor relative L2 error and the number of tensors checked.
fn gradient_error(variant: Variant, data: &SynthDataset) -> (f64, String, usize) {
    let loss = LossConfig::default();
    let p = init_params(&gradient_model(variant), 23).unwrap();
    let batch: Vec<&ReferenceInstance> = data.instances.iter().take(2).collect();
    let (_, g) = gradients(&p, &batch, &data.archive, &loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = g
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let (mut worst, mut worst_name, mut checked) = (0.0f64, String::new(), 0);
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..a.len())
            .map(|k| {
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    let mut tensors = q.named_tensors_mut();
                    *tensors[ti].1.iter_mut().nth(k).unwrap() += delta;
                    drop(tensors);
                    batch_loss(&q, &batch, &data.archive, &loss).unwrap()
                };
                (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
            })
            .collect();
        let scale = l2(&numeric).max(l2(a));
        if scale <= FD_ZERO_GRADIENT {
            continue;
        }
        checked += 1;
        let diff: Vec<f64> = numeric.iter().zip(a).map(|(n, a)| n - a).collect();
        let rel = l2(&diff) / scale;
        if rel > worst {
            worst = rel;
            worst_name = name.clone();
        }
    }
    (worst, worst_name, checked)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut spec = SynthDatasetSpec::new(12, 6, 11);
    spec.config = SynthConfig {
        views: 3,
        d_view: 16,
        d_text: 16,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&spec).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for variant in Variant::ALL {
        let (err, name, checked) = gradient_error(variant, &data);
        ok &= err <= FD_TOL;
        let _ = write!(detail, "{variant} max rel err {err:.2e} ({name}, {checked} tensors); ");
    }
    let elapsed = start.elapsed();
    let outcome = check(
        ok,
        format!("{detail}tol {FD_TOL:e}, h {FD_STEP:e}, {:.1}s", elapsed.as_secs_f64()),
    );
    within_budget(outcome, elapsed, FD_BUDGET)
}

// Criterion 3

fn binary_ce(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn loss_and_schedule() -> Outcome {
    let mut worst_loss: f64 = 0.0;
    worst_loss = worst_loss.max((smoothed_bce(0.5, 0.5, 0.0) - 2.0 * std::f64::consts::LN_2).abs());
    // 2·[-0.8 ln 0.8 - 0.2 ln 0.2]
    worst_loss = worst_loss.max((smoothed_bce(0.8, 0.2, 0.2) - 1.000_804_847_076_375_7).abs());
    for &(st, sd, eps) in &[(0.9, 0.3, 0.1), (0.35, 0.6, 0.2), (0.99, 0.01, 0.0)] {
        let want = binary_ce(st, 1.0 - eps) + binary_ce(sd, eps);
        worst_loss = worst_loss.max((smoothed_bce(st, sd, eps) - want).abs());
    }

    let cfg = TrainConfig::default();
    let lr_exact = lr_at(10_000, &cfg) == 1e-3;

    let scalar = |v: f64| ArrayD::from_elem(vec![1], v);
    let mut theta = scalar(0.3);
    let (mut m, mut v) = (scalar(0.0), scalar(0.0));
    let grads = [0.5, -0.25, 1.5, 0.0, -2.0];
    for (step, &g) in grads.iter().enumerate() {
        adamw_tensor(
            theta.view_mut(),
            scalar(g).view(),
            m.view_mut(),
            v.view_mut(),
            cfg.base_lr,
            &cfg,
            step as u64 + 1,
        );
    }
    let (mut t, mut m1, mut m2, mut b1t, mut b2t) = (0.3f64, 0.0f64, 0.0f64, 1.0f64, 1.0f64);
    for &g in &grads {
        m1 = 0.9 * m1 + 0.1 * g;
        m2 = 0.999 * m2 + 0.001 * g * g;
        b1t *= 0.9;
        b2t *= 0.999;
        t -= 1e-3 * ((m1 / (1.0 - b1t)) / ((m2 / (1.0 - b2t)).sqrt() + 1e-8) + 1e-2 * t);
    }
    let adam_err = (theta[[0]] - t).abs();
    check(
        worst_loss <= LOSS_TOL && lr_exact && adam_err <= ADAMW_TOL,
        format!(
            "loss fixtures max err {worst_loss:.2e} (tol {LOSS_TOL:e}), lr_at(10000)={} exact={lr_exact}, \
             AdamW 5-step err {adam_err:.2e} (tol {ADAMW_TOL:e})",
            lr_at(10_000, &cfg)
        ),
    )
}

// Criteria 4 and 5 share one small model.

fn small_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_view: 32,
        d_text: 32,
        d_model: 32,
        n_heads: 4,
        n_layers: 1,
        d_ff: 64,
        mlp_hidden: 64,
        fusion_dim: 32,
        variant,
        max_words: 8,
        word_positions: true,
        factor_positions: false,
        view_pooling: Pooling::Max,
    }
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        views: 4,
        d_view: 32,
        d_text: 32,
        ..SynthConfig::default()
    }
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let mut spec = SynthDatasetSpec::new(40, OVERFIT_PAIRS, 1);
    spec.valid_fraction = 0.2;
    spec.test_fraction = 0.0;
    spec.config = small_synth();
    let data = generate_dataset(&spec).unwrap();
    let train_set = split_of(&data.instances, Split::Train);
    if train_set.len() != OVERFIT_TRAIN_PAIRS {
        return Outcome::Fail(format!("expected {OVERFIT_TRAIN_PAIRS} train pairs, got {}", train_set.len()));
    }
    let cfg = TrainConfig {
        base_lr: 1e-3,
        warmup_steps: 50,
        epochs: 63,
        batch_size: 8,
        max_steps: Some(OVERFIT_MAX_STEPS),
        seed: 1,
        ..TrainConfig::default()
    };
    let model = small_model(Variant::Full);
    let run = || train(&cfg, &model, &data.instances, &data.archive, None).unwrap();
    let (a, b) = (run(), run());
    let steps: u64 = a.record.epochs.last().map_or(0, |e| e.steps);
    let acc = evaluate(&train_set, &data.archive, &a.last).unwrap().all;
    let deterministic = a.last == b.last && a.record == b.record;
    let elapsed = start.elapsed();
    let outcome = check(
        acc >= OVERFIT_MIN_ACC && steps <= OVERFIT_MAX_STEPS && deterministic,
        format!(
            "train accuracy {acc:.1}% on {} pairs after {steps} steps (need >= {OVERFIT_MIN_ACC}% within \
             {OVERFIT_MAX_STEPS}), deterministic={deterministic}, {:.1}s for two runs",
            train_set.len(),
            elapsed.as_secs_f64()
        ),
    );
    within_budget(outcome, elapsed, OVERFIT_BUDGET)
}

fn heldout_accuracy(variant: Variant, seed: u64) -> (f64, f64, usize) {
    let total = 2000;
    let mut spec = SynthDatasetSpec::new(600, total, seed);
    spec.disjoint_objects = true;
    spec.valid_fraction = HELDOUT_PAIRS as f64 / total as f64;
    spec.test_fraction = HELDOUT_PAIRS as f64 / total as f64;
    spec.config = small_synth();
    let data = generate_dataset(&spec).unwrap();
    let cfg = TrainConfig {
        base_lr: 1e-3,
        warmup_steps: 100,
        epochs: 15,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &small_model(variant), &data.instances, &data.archive, None).unwrap();
    let test = split_of(&data.instances, Split::Test);
    let acc = evaluate(&test, &data.archive, &out.best).unwrap();
    (acc.visual.unwrap_or(0.0), acc.blind.unwrap_or(0.0), test.len())
}

fn heldout_claim() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for seed in HELDOUT_SEEDS {
        let (fv, fb, n) = heldout_accuracy(Variant::Full, seed);
        let (vv, vb, _) = heldout_accuracy(Variant::VisiolinguisticOnly, seed);
        ok &= fb >= FULL_MIN_BLIND && vb <= VISIOLINGUISTIC_MAX_BLIND;
        ok &= fv >= MIN_VISUAL && vv >= MIN_VISUAL;
        let _ = write!(
            detail,
            "seed {seed} ({n} pairs): full visual {fv:.1} blind {fb:.1}, visiolinguistic_only visual {vv:.1} blind {vb:.1}; "
        );
    }
    let elapsed = start.elapsed();
    let outcome = check(
        ok,
        format!(
            "{detail}need full blind >= {FULL_MIN_BLIND}, visiolinguistic_only blind <= \
             {VISIOLINGUISTIC_MAX_BLIND}, visual >= {MIN_VISUAL}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
    within_budget(outcome, elapsed, HELDOUT_BUDGET)
}

// Criterion 6

/// Two-tailed tail mass by Simpson quadrature of the t density after the
/// substitution `t = √ν·tan θ`, which turns it into `cos^(ν−1) θ`.
fn quadrature_p(t: f64, dof: f64) -> f64 {
    let f = |theta: f64| theta.cos().powf(dof - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n)
            .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h))
            .sum();
        (f(a) + f(b) + inner) * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    simpson((t.abs() / dof.sqrt()).atan(), half_pi) / simpson(0.0, half_pi)
}

fn statistics_oracle() -> Outcome {
    // scipy.stats.ttest_ind(a, b, equal_var=False).pvalue
    let fixtures: [(&[f64], &[f64], f64); 4] = [
        (&[84.6, 84.9, 85.2], &[82.0, 82.4, 82.8], 0.0013631728536173517),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 11.0], 0.11499016052991887),
        (&[91.2, 90.8, 91.6], &[90.6, 90.2, 91.0], 0.14006598491201955),
        (&[0.1, 0.5, 0.3, 0.9], &[1.4, 1.1], 0.032175378967287394),
    ];
    let oracle_err = fixtures
        .iter()
        .map(|(a, b, p)| (welch_t(a, b).unwrap().p - p).abs())
        .fold(0.0, f64::max);
    let mut quad_err: f64 = 0.0;
    let mut points = 0;
    for &dof in &[2.0, 3.5, 5.0, 8.0, 15.0, 30.0, 60.0] {
        for &t in &[0.0, 0.25, 0.8, 1.5, 2.2, 3.0, 4.5, 7.0] {
            quad_err = quad_err.max((student_t_two_tailed(t, dof) - quadrature_p(t, dof)).abs());
            points += 1;
        }
    }
    check(
        oracle_err <= WELCH_ORACLE_TOL && quad_err <= WELCH_QUADRATURE_TOL,
        format!(
            "reference p max err {oracle_err:.2e} (tol {WELCH_ORACLE_TOL:e}), quadrature max err \
             {quad_err:.2e} over {points} (t, dof) points (tol {WELCH_QUADRATURE_TOL:e})"
        ),
    )
}

// Criterion 7

fn stat(mean: f64, std: Option<f64>) -> Option<Stat> {
    Some(Stat { mean, std })
}

fn published_row(model: &str, split: &str, cells: [(f64, Option<f64>); 3]) -> ResultRow {
    let [v, b, a] = cells.map(|(m, s)| stat(m, s));
    ResultRow {
        model: model.into(),
        split: split.into(),
        visual: v,
        blind: b,
        all: a,
    }
}

fn published_rows() -> Vec<ResultRow> {
    let val = "val";
    let mut rows = vec![
        published_row("ViLBERT", val, [(89.5, None), (76.6, None), (83.1, None)]),
        published_row("MATCH", val, [(89.2, Some(0.9)), (75.2, Some(0.7)), (82.2, Some(0.4))]),
        published_row("MATCH*", val, [(90.6, Some(0.4)), (75.7, Some(1.2)), (83.2, Some(0.8))]),
        published_row("LAGOR", val, [(89.8, Some(0.4)), (75.3, Some(0.7)), (82.6, Some(0.4))]),
        published_row("LAGOR*", val, [(89.8, Some(0.5)), (75.0, Some(0.4)), (82.5, Some(0.1))]),
        published_row("VLG (Ours)", val, [(91.2, Some(0.4)), (78.4, Some(0.7)), (84.9, Some(0.3))]),
    ];
    let test = "test";
    rows.extend([
        published_row("ViLBERT", test, [(80.2, None), (73.0, None), (76.6, None)]),
        published_row("MATCH", test, [(83.9, Some(0.5)), (68.7, Some(0.9)), (76.5, Some(0.5))]),
        published_row("LAGOR", test, [(84.3, Some(0.4)), (69.4, Some(0.5)), (77.0, Some(0.5))]),
        published_row("VLG (Ours)", test, [(86.0, None), (71.7, None), (79.0, None)]),
    ]);
    let ablation = "val-ablation";
    rows.extend([
        published_row("VGG16", ablation, [(91.4, Some(0.5)), (76.5, Some(0.9)), (84.0, Some(0.2))]),
        published_row("MLP", ablation, [(91.1, Some(0.8)), (77.9, Some(0.9)), (84.6, Some(0.1))]),
        published_row("no-CLIP", ablation, [(71.0, Some(0.6)), (65.8, Some(0.7)), (68.4, Some(0.1))]),
        published_row("VLG", ablation, [(91.2, Some(0.4)), (78.4, Some(0.7)), (84.9, Some(0.3))]),
    ]);
    rows
}

fn report_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    vlg::evaluation::write_results_file(&published_rows(), &path).unwrap();
    let rows = read_results_file(&path).unwrap();
    let table = |split: &str| {
        let subset: Vec<ResultRow> = rows.iter().filter(|r| r.split == split).cloned().collect();
        render_table(&subset, split)
    };
    let val = table("val");
    let test = table("test");
    let ablation = table("val-ablation");
    let expected = [
        (&val, "VLG (Ours)  91.2 (0.4)  78.4 (0.7)  84.9 (0.3)"),
        (&val, "ViLBERT     89.5        76.6        83.1"),
        (&test, "VLG (Ours)  86.0        71.7        79.0"),
        (&ablation, "MLP      91.1 (0.8)  77.9 (0.9)  84.6 (0.1)"),
        (&ablation, "VLG      91.2 (0.4)  78.4 (0.7)  84.9 (0.3)"),
    ];
    let missing: Vec<&str> = expected
        .iter()
        .filter(|(text, line)| !text.lines().any(|l| l == *line))
        .map(|(_, line)| *line)
        .collect();
    check(
        missing.is_empty(),
        if missing.is_empty() {
            format!("rendered {} rows; VLG validation row reads \"91.2 (0.4)  78.4 (0.7)  84.9 (0.3)\"", rows.len())
        } else {
            format!("lines not found: {missing:?}\n{val}{test}{ablation}")
        },
    )
}

// Criterion 8

fn snare_counts() -> Outcome {
    let Some(dir) = std::env::var_os(SNARE_DIR_ENV) else {
        return Outcome::Skip(format!("{SNARE_DIR_ENV} not set"));
    };
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vlg"));
    cmd.arg("validate-data").arg("--snare").arg(&dir);
    if let Some(categories) = std::env::var_os(SNARE_CATEGORIES_ENV) {
        cmd.arg("--categories").arg(categories);
    }
    let out = cmd.output().expect("run vlg");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let failures: Vec<&str> = stdout.lines().filter(|l| l.starts_with("diff.")).collect();
    check(
        out.status.success(),
        if out.status.success() {
            "all nine dataset constants reproduced".into()
        } else {
            format!(
                "exit {:?}: {} {}",
                out.status.code(),
                failures.join("; "),
                String::from_utf8_lossy(&out.stderr).trim()
            )
        },
    )
}

type Criterion = (u8, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "voxel oracle", voxel_oracle),
        (2, "gradient suite", gradient_suite),
        (3, "loss and schedule identities", loss_and_schedule),
        (4, "overfit sanity", overfit),
        (5, "held-out blind vs visual split", heldout_claim),
        (6, "statistics oracle", statistics_oracle),
        (7, "report fidelity", report_fidelity),
        (8, "SNARE counts", snare_counts),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        match run() {
            Outcome::Pass(d) => println!("criterion {n}: PASS {name}: {d}"),
            Outcome::Skip(d) => println!("criterion {n}: SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {n}: FAIL {name}: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
