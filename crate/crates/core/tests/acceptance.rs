//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 and 9 check mechanisms and must hold; the process exits
//! nonzero if any of them fails. Criteria 5-8 are desk-scale reproductions of
//! empirical trends and are reported without failing the run, unless
//! `PLDG_ACCEPTANCE_STRICT=1` is set. `PLDG_ACCEPTANCE=1,4` selects criteria.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use pldg::backbone::{Encoder, EncoderConfig, ParamSet};
use pldg::data::{augment_image, generate_trap, Artifact, Dataset, TrapSpec};
use pldg::discovery::{nmi, write_diagnostics_csv, DiagnosticRow};
use pldg::evalkit::{accuracy, frechet_distance, gaussian_frechet, roc_auc, write_metrics_csv};
use pldg::experiments::{
    clustering_diagnostics, distance_study, find_summary, metric_reports, summarize, sweep, DistanceSetup, Method,
    RunResult, SweepSpec,
};
use pldg::objectives::{
    compute_loss, cross_entropy, domain_term, mixup_term, weight_supervision, weighted_term, Batch, DropoutSeed,
    LossConfig, MixupSample, ModelGrads, PldgModel, Toggles, WeightNorm,
};
use pldg::prompts::{combine_prompts, weighted_prompt, AdapterParams, PromptBank, PromptWeights};
use pldg::trainer::{fit, init_model, AdamW, StepLog, TrainConfig, TrainData, TAG_AUGMENT, TAG_SHUFFLE};
use pldg::util::{rng_for, Rng};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Results shared between the sweep-based criteria.
#[derive(Default)]
struct Shared {
    sweep: Option<Vec<RunResult>>,
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("PLDG_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("PLDG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut shared = Shared::default();

    type Check = fn(&mut Shared) -> Outcome;
    let criteria: [(u32, &str, bool, Check); 9] = [
        (1, "gradient suite", true, |_| gradient_suite()),
        (2, "reduction suite", true, |_| reduction_suite()),
        (3, "rank-one prompt structure", true, |_| rank_one_structure()),
        (4, "metric oracles", true, |_| metric_oracles()),
        (5, "layer-wise clustering trend", false, |_| layer_trend()),
        (6, "bias sweep direction", false, bias_sweep),
        (7, "distance versus adapter weight", false, |_| distance_weight()),
        (8, "ablation ordering", false, ablation_order),
        (9, "reproducibility", true, reproducibility),
    ];

    let mut hard_failures = 0;
    let mut soft_failures = 0;
    for (id, name, hard, check) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = check(&mut shared);
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} {tag} {name}: {} [{:.1}s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            if hard {
                hard_failures += 1;
            } else {
                soft_failures += 1;
            }
        }
    }
    println!("acceptance: {hard_failures} mechanism failure(s), {soft_failures} reproduction failure(s)");
    if hard_failures > 0 || (strict && soft_failures > 0) {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn random_images(cfg: &EncoderConfig, n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..cfg.pixels_per_image()).map(|_| rng.random::<f32>()).collect())
        .collect()
}

fn tiny_model(seed: u64) -> PldgModel {
    let cfg = EncoderConfig::tiny();
    PldgModel {
        encoder: Encoder::new(cfg.clone(), seed).unwrap(),
        prompts: Some(PromptBank::generator(2, 2, cfg.embed_dim, seed + 1)),
        adapter: Some(AdapterParams::init(cfg.embed_dim, 8, 2, seed + 2)),
    }
}

fn small_trap(rho: f64, seed: u64) -> TrapSpec {
    TrapSpec {
        rho,
        artifacts: vec![Artifact::CurveHair],
        image_size: 16,
        n_train: 600,
        n_val: 200,
        n_test_id: 200,
        n_test_ood: 400,
        seed,
        ..TrapSpec::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ------------------------------------------------------ 1: gradient suite

type Perturb = Box<dyn Fn(&mut PldgModel, f64)>;

/// Every prompt and adapter coordinate plus a random sample of backbone ones.
fn coordinates(g: &ModelGrads) -> Vec<(String, f64, Perturb)> {
    let mut out: Vec<(String, f64, Perturb)> = Vec::new();
    if let Some(PromptBank::Generator(pg)) = &g.prompts {
        for (name, t, which) in [("P*", &pg.shared, 0), ("u", &pg.u, 1), ("v", &pg.v, 2)] {
            for (k, &gk) in t.iter().enumerate() {
                out.push((
                    format!("{name}[{k}]"),
                    gk,
                    Box::new(move |m, d| {
                        let Some(PromptBank::Generator(p)) = m.prompts.as_mut() else { unreachable!() };
                        let t = [&mut p.shared, &mut p.u, &mut p.v];
                        t.into_iter().nth(which).unwrap().as_slice_mut().unwrap()[k] += d;
                    }),
                ));
            }
        }
    }
    if let Some(ga) = &g.adapter {
        for (ti, t) in ga.tensors().iter().enumerate() {
            for (k, &gk) in t.iter().enumerate() {
                out.push((
                    format!("adapter {ti}[{k}]"),
                    gk,
                    Box::new(move |m, d| m.adapter.as_mut().unwrap().tensors_mut()[ti][k] += d),
                ));
            }
        }
    }
    let enc = g.encoder.tensors();
    let mut rng = Rng::seed_from_u64(17);
    for ti in 0..enc.len() {
        for _ in 0..3 {
            let k = rng.random_range(0..enc[ti].len());
            out.push((
                format!("encoder {ti}[{k}]"),
                enc[ti][k],
                Box::new(move |m, d| m.encoder.params.tensors_mut()[ti][k] += d),
            ));
        }
    }
    out
}

/// The weighted term as a function of the perturbed model, with the domain
/// prompts and the adapter input held at the values of `frozen` (both are
/// constants on this path).
fn weighted_reference(frozen: &PldgModel, m: &PldgModel, batch: &Batch<'_>, lambda_w: f64) -> f64 {
    let prompts = frozen.prompts.as_ref().unwrap().generate_all();
    let (features, _) = frozen.encoder.forward_plain(&batch.images).unwrap();
    let adapter = m.adapter.as_ref().unwrap();
    let mut ce = 0.0;
    let mut weights = Vec::new();
    for (i, img) in batch.images.iter().enumerate() {
        let w = adapter.trace(features.row(i)).unwrap().weights;
        let logits = m
            .encoder
            .trace(img, Some(combine_prompts(&prompts, &w).view()), None)
            .unwrap()
            .logits;
        ce += cross_entropy(logits.view(), batch.labels[i]).0;
        weights.push(PromptWeights::new(w).unwrap());
    }
    ce / batch.len() as f64 + lambda_w * weight_supervision(&weights, &batch.domains, 2, WeightNorm::Double).unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let m = tiny_model(3);
    let imgs = random_images(&m.encoder.config, 4, 21);
    let labels = vec![0, 1, 1, 0];
    let domains = vec![0, 1, 0, 1];
    let batch = Batch {
        images: imgs.iter().map(|v| v.as_slice()).collect(),
        labels: labels.clone(),
        domains: domains.clone(),
    };
    let samples: Vec<MixupSample> = (0..4)
        .map(|i| {
            let j = (i + 1) % 4;
            MixupSample::new(i, j, &imgs[i], &imgs[j], labels[i], labels[j], 0.7, domains[i], domains[j])
        })
        .collect();
    let lambda_w = 0.8;
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut record = |num: f64, ana: f64, what: String| {
        let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
        checked += 1;
        if err > worst.0 {
            worst = (err, what);
        }
    };

    // first term (mixup through the dominant domain's prompt)
    let mut g = m.zero_grads();
    mixup_term(&m, &samples, DropoutSeed(None), Some(&mut g)).unwrap();
    for (what, ana, perturb) in coordinates(&g) {
        let f = |d: f64| {
            let mut mm = m.clone();
            perturb(&mut mm, d);
            mixup_term(&mm, &samples, DropoutSeed(None), None).unwrap()
        };
        record((f(h) - f(-h)) / (2.0 * h), ana, format!("mixup {what}"));
    }
    // domain term, used when mixup is off
    let mut g = m.zero_grads();
    domain_term(&m, &batch, DropoutSeed(None), Some(&mut g)).unwrap();
    for (what, ana, perturb) in coordinates(&g) {
        let f = |d: f64| {
            let mut mm = m.clone();
            perturb(&mut mm, d);
            domain_term(&mm, &batch, DropoutSeed(None), None).unwrap()
        };
        record((f(h) - f(-h)) / (2.0 * h), ana, format!("domain {what}"));
    }
    // weighted term
    let mut g = m.zero_grads();
    weighted_term(&m, &batch, lambda_w, WeightNorm::Double, DropoutSeed(None), Some(&mut g)).unwrap();
    for (what, ana, perturb) in coordinates(&g) {
        let f = |d: f64| {
            let mut mm = m.clone();
            perturb(&mut mm, d);
            weighted_reference(&m, &mm, &batch, lambda_w)
        };
        record((f(h) - f(-h)) / (2.0 * h), ana, format!("weighted {what}"));
    }

    // the total's gradient is the sum of its terms
    let cfg = LossConfig {
        toggles: Toggles::ALL,
        lambda_w,
        weight_norm: WeightNorm::Double,
    };
    let (_, total) = compute_loss(&m, &batch, Some(&samples), &cfg, DropoutSeed(None), true).unwrap();
    let mut sum = m.zero_grads();
    mixup_term(&m, &samples, DropoutSeed(None), Some(&mut sum)).unwrap();
    weighted_term(&m, &batch, lambda_w, WeightNorm::Double, DropoutSeed(None), Some(&mut sum)).unwrap();
    let additive = total.unwrap() == sum;

    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && additive && secs < 60.0,
        format!(
            "{checked} coordinates, max relative error {:.2e} at {}, total equals sum of terms: {additive}",
            worst.0, worst.1
        ),
    )
}

// ----------------------------------------------------- 2: reduction suite

/// Plain ERM: shuffled minibatches, augmentation, mean cross-entropy, AdamW.
/// Gradients are accumulated in runs of 8 samples to match the library's
/// summation order, so the comparison can be bitwise.
fn plain_erm_losses(cfg: &TrainConfig, train: &Dataset) -> Vec<f64> {
    let mut encoder = init_model(cfg).unwrap().encoder;
    let mut opt = AdamW::new(&encoder.params);
    let size = cfg.encoder.image_size;
    let mut losses = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut aug = rng_for(cfg.seed, &[TAG_AUGMENT, step]);
            let imgs: Vec<Vec<f32>> = chunk
                .iter()
                .map(|&i| augment_image(&train.samples[i].pixels, size, &cfg.augment, &mut aug))
                .collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = encoder.params.zeros_like();
            let mut loss = 0.0;
            for (run_imgs, run_idx) in imgs.chunks(8).zip(chunk.chunks(8)) {
                let mut g = encoder.params.zeros_like();
                let mut l = 0.0;
                for (img, &i) in run_imgs.iter().zip(run_idx) {
                    let trace = encoder.trace(img, None, None).unwrap();
                    let (li, d) = cross_entropy(trace.logits.view(), train.samples[i].class_label);
                    l += li;
                    encoder.backward(&trace, &(d * scale), None, &mut g);
                }
                loss += l;
                grads.add_assign(&g);
            }
            losses.push(loss * scale);
            opt.step(&mut encoder.params, &grads, cfg.lr, cfg.weight_decay);
        }
    }
    losses
}

fn reduction_suite() -> Outcome {
    let mut notes = Vec::new();

    // toggles off against plain ERM
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 20,
        ..TrainConfig::erm_small()
    };
    let splits = generate_trap(&TrapSpec {
        n_train: 100,
        n_val: 40,
        n_test_id: 8,
        n_test_ood: 8,
        ..small_trap(0.5, 4)
    })
    .unwrap();
    let mut log = StepLog::default();
    fit(
        &cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: None,
        },
        &mut log,
    )
    .unwrap();
    let library: Vec<f64> = log.steps.iter().map(|s| s.loss.total).collect();
    let plain = plain_erm_losses(&cfg, &splits.train);
    let trajectory = library == plain;
    notes.push(format!("ERM trajectory identical over {} steps: {trajectory}", plain.len()));

    // empty prompt leaves the forward untouched
    let enc_cfg = EncoderConfig::tiny();
    let enc = Encoder::new(enc_cfg.clone(), 9).unwrap();
    let imgs = random_images(&enc_cfg, 6, 2);
    let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
    let plain_fwd = enc.forward_plain(&refs).unwrap();
    let empty = Array2::<f64>::zeros((0, enc_cfg.embed_dim));
    let prompted = enc.forward_prompted(&refs, empty.view()).unwrap();
    let per_sample = enc.forward_per_sample(&refs, &vec![empty.clone(); refs.len()]).unwrap();
    let s0 = plain_fwd == prompted && plain_fwd == per_sample;
    notes.push(format!("s=0 forward bitwise equal: {s0}"));

    // one-hot weighted prompt is the domain prompt
    let mut one_hot = true;
    for seed in 0..20 {
        let bank = PromptBank::generator(4, 3, 16, seed);
        for k in 0..4 {
            let w = PromptWeights::one_hot(4, k);
            one_hot &= weighted_prompt(&bank, w.values()).unwrap() == bank.generate(k).unwrap();
        }
    }
    notes.push(format!("one-hot weighted prompt bitwise equal: {one_hot}"));
    outcome(trajectory && s0 && one_hot, notes.join("; "))
}

// -------------------------------------------------- 3: rank-one structure

fn max_minor(a: &Array2<f64>) -> f64 {
    let (r, c) = a.dim();
    let mut worst = 0.0f64;
    for i in 0..r {
        for k in i + 1..r {
            for j in 0..c {
                for l in j + 1..c {
                    worst = worst.max((a[[i, j]] * a[[k, l]] - a[[i, l]] * a[[k, j]]).abs());
                }
            }
        }
    }
    worst
}

fn rank_one_structure() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..25 {
        let PromptBank::Generator(g) = PromptBank::generator(4, 4, 16, seed) else { unreachable!() };
        for m in 0..4 {
            worst = worst.max(max_minor(&g.factor(m)));
        }
    }
    let minors_ok = worst < 1e-10;

    // a batch drawn only from domain 0
    let m = tiny_model(5);
    let imgs = random_images(&m.encoder.config, 4, 8);
    let batch = Batch {
        images: imgs.iter().map(|v| v.as_slice()).collect(),
        labels: vec![0, 1, 0, 1],
        domains: vec![0; 4],
    };
    let mut g = m.zero_grads();
    domain_term(&m, &batch, DropoutSeed(None), Some(&mut g)).unwrap();
    let Some(PromptBank::Generator(pg)) = &g.prompts else { unreachable!() };
    let shared = pg.shared.iter().any(|&x| x != 0.0);
    let own = pg.u.row(0).iter().any(|&x| x != 0.0) && pg.v.row(0).iter().any(|&x| x != 0.0);
    let cross_zero = pg.u.row(1).iter().all(|&x| x == 0.0) && pg.v.row(1).iter().all(|&x| x == 0.0);

    // the same batch labelled domain 1 moves the shared prompt too
    let batch1 = Batch {
        domains: vec![1; 4],
        ..batch
    };
    let mut g1 = m.zero_grads();
    domain_term(&m, &batch1, DropoutSeed(None), Some(&mut g1)).unwrap();
    let Some(PromptBank::Generator(pg1)) = &g1.prompts else { unreachable!() };
    let coupled = shared && pg1.shared.iter().any(|&x| x != 0.0) && pg1.u.row(0).iter().all(|&x| x == 0.0);

    outcome(
        minors_ok && own && cross_zero && coupled,
        format!(
            "max 2x2 minor {worst:.1e} over 100 factors; shared gradient from either domain: {coupled}; \
             other domain's u/v gradient exactly zero: {cross_zero}"
        ),
    )
}

// ------------------------------------------------------ 4: metric oracles

fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    let mut table = vec![vec![0.0f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let ra: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cb: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    // base-2 logs: the ratio does not depend on the base
    let h = |v: &[f64]| -> f64 { v.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).log2()).sum() };
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = table[i][j];
            if c > 0.0 {
                mi += (c / n) * (c * n / (ra[i] * cb[j])).log2();
            }
        }
    }
    mi / (h(&ra) * h(&cb)).sqrt()
}

fn auc_oracle(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut p = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        p += 1;
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    let q = labels.iter().filter(|&&y| y == 0).count();
    wins / (p * q) as f64
}

/// `Tr((AB)^{1/2})` for 2×2 SPD `A`, `B`: `sqrt(tr(AB) + 2 sqrt(det(AB)))`.
fn trace_sqrt_2x2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    let ab = [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ];
    let tr = ab[0][0] + ab[1][1];
    let det = ab[0][0] * ab[1][1] - ab[0][1] * ab[1][0];
    (tr + 2.0 * det.max(0.0).sqrt()).sqrt()
}

fn sample_moments_2d(x: &Array2<f64>) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = x.nrows() as f64;
    let mu = [x.column(0).sum() / n, x.column(1).sum() / n];
    let mut c = [[0.0; 2]; 2];
    for r in x.rows() {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    for (i, row) in c.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
        row[i] += 1e-6;
    }
    (mu, c)
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::seed_from_u64(2024);
    let instances = 150;
    let mut fails: BTreeMap<&str, usize> = BTreeMap::new();
    let mut worst_nmi = 0.0f64;
    let mut worst_fd = 0.0f64;

    for _ in 0..instances {
        // nmi: both labelings use at least two clusters
        let n = rng.random_range(4..40);
        let ka = rng.random_range(2..5);
        let kb = rng.random_range(2..5);
        let mut a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let mut b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        a[0] = 0;
        a[1] = 1;
        b[0] = 1;
        b[1] = 0;
        let d = (nmi(&a, &b).unwrap() - nmi_oracle(&a, &b)).abs();
        worst_nmi = worst_nmi.max(d);
        if d > 1e-12 {
            *fails.entry("nmi").or_default() += 1;
        }

        // roc_auc on integer-valued scores to force ties
        let m = rng.random_range(2..30);
        let mut y: Vec<usize> = (0..m).map(|_| rng.random_range(0..2)).collect();
        y[0] = 0;
        y[1] = 1;
        let s: Vec<f64> = (0..m).map(|_| rng.random_range(0..6) as f64 * 0.25).collect();
        if roc_auc(&s, &y).unwrap() != auc_oracle(&s, &y) {
            *fails.entry("roc_auc").or_default() += 1;
        }

        // accuracy
        let pred: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let truth: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let hits = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        if accuracy(&pred, &truth).unwrap() != hits as f64 / m as f64 {
            *fails.entry("accuracy").or_default() += 1;
        }

        // frechet on sample moments, 2-D closed form
        let na = rng.random_range(5..30);
        let nb = rng.random_range(5..30);
        let xa = Array2::from_shape_fn((na, 2), |_| rng.random_range(-2.0..2.0));
        let xb = Array2::from_shape_fn((nb, 2), |(_, j)| rng.random_range(-1.0..3.0) * (1.0 + j as f64));
        let (ma, ca) = sample_moments_2d(&xa);
        let (mb, cb) = sample_moments_2d(&xb);
        let oracle = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2) + ca[0][0] + ca[1][1] + cb[0][0]
            + cb[1][1]
            - 2.0 * trace_sqrt_2x2(ca, cb);
        let d = (frechet_distance(xa.view(), xb.view()).unwrap() - oracle).abs();
        worst_fd = worst_fd.max(d);
        if d > 1e-6 {
            *fails.entry("frechet").or_default() += 1;
        }

        // frechet between diagonal Gaussians: sum of squared root differences
        let dim = rng.random_range(1..7);
        let da: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..4.0)).collect();
        let db: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..4.0)).collect();
        let mu_a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu_b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle: f64 = (0..dim)
            .map(|i| (mu_a[i] - mu_b[i]).powi(2) + (da[i].sqrt() - db[i].sqrt()).powi(2))
            .sum();
        let got = gaussian_frechet(
            &nalgebra::DVector::from_vec(mu_a),
            &nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(da)),
            &nalgebra::DVector::from_vec(mu_b),
            &nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(db)),
        );
        let d = (got - oracle).abs();
        worst_fd = worst_fd.max(d);
        if d > 1e-6 {
            *fails.entry("frechet").or_default() += 1;
        }
    }
    outcome(
        fails.is_empty(),
        format!(
            "{instances} instances per metric (frechet x2); failures {fails:?}; \
             max nmi gap {worst_nmi:.1e}, max frechet gap {worst_fd:.1e}"
        ),
    )
}

// ------------------------------------------- 5: layer-wise clustering trend

fn layer_trend_rows(seed: u64) -> (TrainConfig, Vec<DiagnosticRow>) {
    let cfg = TrainConfig {
        num_domains: 2,
        seed,
        ..TrainConfig::pldg_small()
    };
    let trap = TrapSpec {
        rho: 0.9,
        artifacts: vec![Artifact::ColorTint],
        image_size: 16,
        n_train: 600,
        n_val: 100,
        n_test_id: 50,
        n_test_ood: 50,
        seed,
        ..TrapSpec::default()
    };
    let rows = clustering_diagnostics(&cfg, &trap, vec![1, cfg.encoder.depth]).unwrap();
    (cfg, rows)
}

fn layer_trend() -> Outcome {
    let (cfg, rows) = layer_trend_rows(0);
    let w = cfg.cluster_epoch;
    let at = |layer: usize| rows.iter().find(|r| r.epoch == w && r.layer == layer).unwrap();
    let first = at(1);
    let last = at(cfg.encoder.depth);
    let art = first.nmi_given_domain.unwrap();
    let prev = first.nmi_prev.unwrap();
    let a = art > first.nmi_class;
    let b = last.nmi_class > first.nmi_class;
    let c = prev > 0.8;
    outcome(
        a && b && c,
        format!(
            "at epoch {w}: layer 1 artifact {art:.3} vs class {:.3} ({a}); final-layer class {:.3} > layer-1 class \
             ({b}); layer-1 consecutive-epoch {prev:.3} > 0.8 ({c})",
            first.nmi_class, last.nmi_class
        ),
    )
}

// --------------------------------------------------- 6: bias sweep direction

fn sweep_methods() -> (Method, Method) {
    let base = TrainConfig::pldg_small();
    (Method::ablation(&base, Toggles::NONE), Method::ablation(&base, Toggles::ALL))
}

fn bias_sweep(shared: &mut Shared) -> Outcome {
    let (erm, pldg) = sweep_methods();
    let spec = SweepSpec {
        rhos: vec![0.0, 0.5, 1.0],
        seeds: vec![0, 1, 2],
        methods: vec![erm.clone(), pldg.clone()],
        trap: small_trap(0.0, 0),
    };
    let results = sweep(&spec, &mut |_| {}).unwrap();
    let summary = summarize(&results);
    let get = |m: &Method, rho: f64| find_summary(&summary, &m.name, rho).unwrap().mean_ood_auc;
    let (e0, e1, p0, p1) = (get(&erm, 0.0), get(&erm, 1.0), get(&pldg, 0.0), get(&pldg, 1.0));
    shared.sweep = Some(results);
    let margin = p1 - e1;
    let drops = (e0 - e1) > (p0 - p1);
    outcome(
        margin >= 0.03 && drops,
        format!(
            "mean OOD AUC at rho=1: ERM {e1:.3}, PLDG {p1:.3} (margin {margin:+.3}, need >= 0.03); \
             drop rho 0->1: ERM {:.3}, PLDG {:.3} (ERM larger: {drops})",
            e0 - e1,
            p0 - p1
        ),
    )
}

// --------------------------------------- 7: distance versus adapter weight

fn distance_weight() -> Outcome {
    let cfg = TrainConfig {
        num_domains: 4,
        ..TrainConfig::pldg_small()
    };
    let setup = DistanceSetup::default();
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let st = distance_study(&cfg, &setup, seed).unwrap();
        let rho = st.report.spearman.unwrap_or(f64::NAN);
        let argmax = st.report.argmax_weight_domain().unwrap();
        let closest = st.report.min_distance_domain().unwrap();
        if rho < 0.0 && argmax == closest {
            hits += 1;
        }
        notes.push(format!(
            "seed {seed}: spearman {rho:+.2}, argmax-weight {argmax} (style {}), min-distance {closest}",
            st.domain_styles[argmax]
        ));
    }
    outcome(hits >= 2, format!("{hits}/3 seeds hold; {}", notes.join("; ")))
}

// ------------------------------------------------------- 8: ablation order

fn ablation_order(shared: &mut Shared) -> Outcome {
    let base = TrainConfig::pldg_small();
    let plus_p = Method::ablation(&base, Toggles::parse("+P").unwrap());
    let (erm, pldg) = sweep_methods();
    let spec = SweepSpec {
        rhos: vec![1.0],
        seeds: vec![0, 1, 2],
        methods: vec![plus_p.clone()],
        trap: small_trap(1.0, 0),
    };
    let mut results = sweep(&spec, &mut |_| {}).unwrap();
    // baseline and full runs at rho=1 are the same runs as the bias sweep
    let from_sweep = shared.sweep.get_or_insert_with(|| {
        sweep(
            &SweepSpec {
                methods: vec![erm.clone(), pldg.clone()],
                ..spec.clone()
            },
            &mut |_| {},
        )
        .unwrap()
    });
    results.extend(from_sweep.iter().filter(|r| r.rho == 1.0).cloned());
    let score = |m: &Method| {
        mean(
            &results
                .iter()
                .filter(|r| r.method == m.name)
                .map(|r| r.ood_auc)
                .collect::<Vec<_>>(),
        )
    };
    let (b, p, f) = (score(&erm), score(&plus_p), score(&pldg));
    outcome(
        b <= p && p <= f,
        format!(
            "mean OOD AUC at rho=1: baseline {b:.3} <= +P {p:.3} ({}), +P <= +P+A+M+G {f:.3} ({})",
            b <= p,
            p <= f
        ),
    )
}

// --------------------------------------------------- 9: reproducibility

fn metrics_csv(results: &[RunResult]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&metric_reports(results).unwrap(), &mut buf).unwrap();
    buf
}

fn reproducibility(shared: &mut Shared) -> Outcome {
    let (erm, pldg) = sweep_methods();
    let spec = SweepSpec {
        rhos: vec![1.0],
        seeds: vec![0, 1, 2],
        methods: vec![erm, pldg],
        trap: small_trap(1.0, 0),
    };
    let repeat = sweep(&spec, &mut |_| {}).unwrap();
    let first: Vec<RunResult> = match &shared.sweep {
        Some(r) => r.iter().filter(|r| r.rho == 1.0).cloned().collect(),
        None => sweep(&spec, &mut |_| {}).unwrap(),
    };
    let metrics_same = metrics_csv(&first) == metrics_csv(&repeat);

    let diag_csv = || {
        let mut buf = Vec::new();
        write_diagnostics_csv(&layer_trend_rows(1).1, &mut buf).unwrap();
        buf
    };
    let diag_same = diag_csv() == diag_csv();

    let dist_csv = || {
        let cfg = TrainConfig {
            num_domains: 4,
            ..TrainConfig::pldg_small()
        };
        let mut buf = Vec::new();
        distance_study(&cfg, &DistanceSetup::default(), 7)
            .unwrap()
            .report
            .write_csv(&mut buf)
            .unwrap();
        buf
    };
    let dist_same = dist_csv() == dist_csv();

    let out_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out_dir).unwrap();
    std::fs::write(out_dir.join("metrics_rho1.csv"), metrics_csv(&repeat)).unwrap();

    outcome(
        metrics_same && diag_same && dist_same,
        format!(
            "metrics CSV ({} rows) identical: {metrics_same}; diagnostics CSV identical: {diag_same}; \
             distance CSV identical: {dist_same}",
            repeat.len() * 2
        ),
    )
}

