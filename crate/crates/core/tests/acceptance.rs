//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so every criterion reports even when an earlier one fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::grad;
use gestalt_core::dataio::synth::{neutral_landmarks, SynthConfig};
use gestalt_core::ensemble::{rank, GestaltScores, RankedEntry, RankedList};
use gestalt_core::evaluation::{
    binary_metrics, check_ranked, confusion_matrix, permutation_mean_analytic, permutation_test, topk_accuracy,
    topk_table, BinaryMetrics,
};
use gestalt_core::experiments::pipeline::{build_sample_template, labeled, load_pretrain, prepare, region_specs};
use gestalt_core::experiments::{run, DataSource, ExperimentConfig};
use gestalt_core::gestaltnet::{
    finetune_region, pretrain_region, top1_accuracy, ArchitectureDescriptor, ArchitectureOptions, LayerSpec, Network,
};
use gestalt_core::nn::{softmax, PoolKind, Tensor4};
use gestalt_core::preproc::{estimate_alignment, LandmarkSet, Point, RegionTag, SimilarityTransform};
use gestalt_core::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = std::result::Result<String, String>;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> std::result::Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn gradient_integrity() -> Outcome {
    let t = Instant::now();
    for check in [
        grad::conv2d,
        grad::dense,
        grad::batchnorm_train_mode,
        grad::pooling,
        grad::relu_away_from_kink,
        grad::weighted_cross_entropy,
        grad::whole_network,
    ] {
        check();
    }
    within(t.elapsed(), Duration::from_secs(120))?;
    Ok("seven ops, 20 cases each".into())
}

fn architecture_conformance() -> Outcome {
    let arch = ArchitectureDescriptor::gestalt(&ArchitectureOptions::default(), 7).map_err(|e| e.to_string())?;
    let convs: Vec<bool> = arch
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv { bn_relu, .. } => Some(*bn_relu),
            _ => None,
        })
        .collect();
    ensure(convs.len() == 10, || format!("{} conv layers", convs.len()))?;
    ensure(convs[..9].iter().all(|&b| b) && !convs[9], || format!("BN/ReLU flags {convs:?}"))?;
    let kinds = arch.pool_kinds();
    ensure(kinds == [PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Avg], || {
        format!("pool kinds {kinds:?}")
    })?;
    let net = Network::<f32>::new(arch, 1).map_err(|e| e.to_string())?;
    let mut rng = stream(2, &[]);
    let input = Tensor4::from_vec([1, 1, 100, 100], (0..10_000).map(|_| rng.random::<f32>()).collect()).unwrap();
    let (logits, pools) = net.forward_with_activations(&input).map_err(|e| e.to_string())?;
    let sides: Vec<(usize, usize)> = pools.iter().map(|p| (p.height(), p.width())).collect();
    ensure(sides == [(50, 50), (25, 25), (12, 12), (6, 6), (1, 1)], || format!("pool outputs {sides:?}"))?;
    ensure(pools[4].channels() == 160, || format!("{} final channels", pools[4].channels()))?;
    ensure(logits.shape() == [1, 7, 1, 1], || format!("logits {:?}", logits.shape()))?;
    let p = softmax(&logits.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
    ensure((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, || "softmax not normalized".into())?;
    Ok("100 -> 50 -> 25 -> 12 -> 6 -> 1, head 7".into())
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(&config_path("synthetic_multiclass.toml")).expect("desk config loads")
}

/// Schedule scale for the overfit run: 100 fine-tune epochs.
const OVERFIT_SCALE: f64 = 0.2;

fn overfit_oracle() -> Outcome {
    let t = Instant::now();
    let mut cfg = desk_config();
    cfg.regions = vec![RegionTag::Eyes];
    cfg.schedule.scale_factor = OVERFIT_SCALE;
    let (pt, pv) = load_pretrain(&cfg).map_err(|e| e.to_string())?;
    let template = build_sample_template(&pt, &cfg).map_err(|e| e.to_string())?;
    let specs = region_specs(&cfg);
    let identities = {
        let mut l: Vec<String> = pt.iter().map(|s| s.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    };
    let base_train = labeled(&prepare(&pt, &template, &specs), 0, &identities).unwrap();
    let base_val = labeled(&prepare(&pv, &template, &specs), 0, &identities).unwrap();
    let (base, _) = pretrain_region(&cfg.architecture, &base_train, Some(&base_val), &cfg.schedule, 1)
        .map_err(|e| e.to_string())?;
    let five = common::samples(&SynthConfig::syndromes(5, 20, 13));
    let mut classes: Vec<String> = five.iter().map(|s| s.label.clone()).collect();
    classes.dedup();
    let train = labeled(&prepare(&five, &template, &specs), 0, &classes).unwrap();
    ensure(train.len() == 100, || format!("{} usable crops", train.len()))?;
    let (model, _) =
        finetune_region(&base, &train, None, &cfg.schedule, cfg.head_init_scale, 2).map_err(|e| e.to_string())?;
    let acc = top1_accuracy(&model, &train).map_err(|e| e.to_string())?;
    ensure(acc >= 0.99, || format!("train top-1 {:.2}%", 100.0 * acc))?;
    within(t.elapsed(), Duration::from_secs(600))?;
    Ok(format!("train top-1 {:.2}% in {:.0}s", 100.0 * acc, t.elapsed().as_secs_f64()))
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let cfg = desk_config();
    match &cfg.data {
        DataSource::Synthetic { synth, test_per_class } => ensure(
            synth.classes == 8 && synth.per_class - test_per_class == 25 && *test_per_class == 10,
            || "config is not 8 classes x (25 train + 10 test)".into(),
        )?,
        DataSource::Manifest { .. } => return Err("config is not synthetic".into()),
    }
    ensure(cfg.regions.len() == 6, || "six regions expected".into())?;
    let report = run(&cfg, None).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure(report.counts.train + report.counts.val == 200 && report.counts.test == 80, || {
        format!("counts {:?}", report.counts)
    })?;
    let top1 = report.aggregate_topk(1).unwrap();
    let top5 = report.aggregate_topk(5).unwrap();
    let best5 = RegionTag::ALL
        .iter()
        .filter_map(|&r| report.region_topk(r, 5))
        .fold(0.0f64, f64::max);
    let summary = format!(
        "top-1 {:.2}%, top-5 {:.2}%, best region top-5 {:.2}%, {:.0}s",
        100.0 * top1,
        100.0 * top5,
        100.0 * best5,
        elapsed.as_secs_f64()
    );
    ensure(top1 >= 0.70, || format!("{summary}: top-1 below 70%"))?;
    ensure(top5 >= 0.95, || format!("{summary}: top-5 below 95%"))?;
    ensure(top5 >= best5 - 0.02, || format!("{summary}: aggregate more than 2 points below best region"))?;
    within(elapsed, Duration::from_secs(3600))?;
    Ok(summary)
}

fn binary_arithmetic() -> Outcome {
    let pct = |x: Option<f64>| format!("{:.2}", 100.0 * x.unwrap());
    let m = BinaryMetrics::from_counts(8, 2, 15, 0);
    let got = (pct(m.accuracy), pct(m.sensitivity), pct(m.specificity));
    ensure(got == ("92.00".into(), "80.00".into(), "100.00".into()), || format!("{got:?}"))?;
    // 23 positives all found, 8 of 9 negatives rejected.
    let actual: Vec<bool> = (0..32).map(|i| i < 23).collect();
    let predicted: Vec<bool> = (0..32).map(|i| i < 24).collect();
    let m = binary_metrics(&predicted, &actual).map_err(|e| e.to_string())?;
    ensure(pct(m.accuracy) == "96.88", || format!("31/32 gives {}", pct(m.accuracy)))?;
    Ok(format!("{}/{}/{}; 31/32 = {}", got.0, got.1, got.2, pct(m.accuracy)))
}

fn list_with_top(top: &str, classes: &[String]) -> RankedList {
    let mut order: Vec<&String> = vec![classes.iter().find(|c| *c == top).unwrap()];
    order.extend(classes.iter().filter(|c| *c != top));
    let n = order.len() as f64;
    let w: Vec<f64> = (0..order.len()).map(|i| (n - i as f64) / (n * (n + 1.0) / 2.0)).collect();
    rank(&GestaltScores::new(order.into_iter().cloned().collect(), w).unwrap())
}

fn specialized_fixture() -> Outcome {
    let classes: Vec<String> = ["KRAS", "PTPN11", "RAF1", "RIT1", "SOS1"].map(String::from).to_vec();
    let labels: Vec<String> = (0..25).map(|i| classes[i % 5].clone()).collect();
    // The first 16 are scored correctly, the rest go to the next class.
    let tops: Vec<String> = (0..25).map(|i| if i < 16 { labels[i].clone() } else { classes[(i + 1) % 5].clone() }).collect();
    let ranked: Vec<RankedList> = tops.iter().map(|t| list_with_top(t, &classes)).collect();
    let top1 = topk_accuracy(&ranked, &labels, 1).map_err(|e| e.to_string())?;
    let cm = confusion_matrix(&tops, &labels, &classes).map_err(|e| e.to_string())?;
    ensure(format!("{:.2}", 100.0 * top1) == "64.00", || format!("top-1 {top1}"))?;
    ensure(cm.trace() == 16 && cm.total() == 25, || format!("trace {} of {}", cm.trace(), cm.total()))?;
    Ok("top-1 64.00%, trace 16".into())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn permutation_test_checks() -> Outcome {
    let t = Instant::now();
    let classes: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let mut worst = 0.0f64;
    for fixture in 0..10u64 {
        let mut rng = stream(fixture, &[]);
        let labels: Vec<String> = (0..4).map(|_| classes[rng.random_range(0..3)].clone()).collect();
        let ranked: Vec<RankedList> = (0..4)
            .map(|_| {
                let mut order = classes.clone();
                order.shuffle(&mut rng);
                list_with_top(&order[0], &order)
            })
            .collect();
        for k in 1..=2 {
            let topk: Vec<Vec<&str>> = ranked
                .iter()
                .map(|r| r.entries[..k].iter().map(|e| e.label.as_str()).collect())
                .collect();
            let perms = permutations(4);
            assert_eq!(perms.len(), 24);
            let accs: Vec<usize> = perms
                .iter()
                .map(|p| (0..4).filter(|&i| topk[i].contains(&labels[p[i]].as_str())).count())
                .collect();
            let hits: usize = accs.iter().sum();
            let exact_mean = hits as f64 / (24.0 * 4.0);
            let s: usize = topk
                .iter()
                .map(|t| t.iter().map(|c| labels.iter().filter(|l| l == c).count()).sum::<usize>())
                .sum();
            ensure(hits * 4 == 24 * s, || format!("fixture {fixture}: formula {s}/16 vs enumeration {hits}/96"))?;
            let analytic = permutation_mean_analytic(&ranked, &labels, k).map_err(|e| e.to_string())?;
            ensure(analytic == s as f64 / 16.0, || format!("analytic {analytic} vs {s}/16"))?;
            let var = accs.iter().map(|&a| (a as f64 / 4.0 - exact_mean).powi(2)).sum::<f64>() / 24.0;
            let stats = permutation_test(&ranked, &labels, k, 100_000, fixture).map_err(|e| e.to_string())?;
            let se = (var / 100_000.0).sqrt();
            let z = if se == 0.0 { 0.0 } else { (stats.mean - exact_mean).abs() / se };
            ensure(se > 0.0 || stats.mean == exact_mean, || "degenerate fixture mean differs".into())?;
            ensure(z <= 4.0, || format!("fixture {fixture} k {k}: sampled mean {z:.2} SE off"))?;
            ensure(stats.p_value > 0.0 && stats.p_value <= 1.0, || format!("p {}", stats.p_value))?;
            worst = worst.max(z);
        }
    }
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("10 fixtures x K in {{1,2}}, worst deviation {worst:.2} SE"))
}

fn tiny_experiment(seed: u64) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/data/tiny.toml");
    let mut cfg = ExperimentConfig::load(&path).expect("tiny config");
    cfg.regions = RegionTag::ALL.to_vec();
    cfg.seed = seed;
    cfg
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&cfg, Some(&a)).map_err(|e| e.to_string())?;
    run(&cfg, Some(&b)).map_err(|e| e.to_string())?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.len() == tb.len(), || "different file sets".into())?;
    for ((pa, da), (pb, db)) in ta.iter().zip(&tb) {
        ensure(pa == pb && da == db, || format!("{} differs", pa.display()))?;
    }
    let ckpts = ta.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "ckpt")).count();
    ensure(ckpts == 12, || format!("{ckpts} checkpoints"))?;
    let other = run(&tiny_experiment(6), None).map_err(|e| e.to_string())?;
    let first = std::fs::read(a.join("report.json")).unwrap();
    ensure(other.to_json().as_bytes() != first, || "a different seed gave the same report".into())?;
    Ok(format!("{} files byte-identical, {ckpts} checkpoints", ta.len()))
}

fn runtime_assertions() -> Outcome {
    let mut rng = stream(77, &[]);
    let mut checked = 0;
    for _ in 0..200 {
        let c = rng.random_range(2..12);
        let n = rng.random_range(1..30);
        let classes: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
        let ranked: Vec<RankedList> = (0..n)
            .map(|_| {
                let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-20.0..20.0)).collect();
                rank(&GestaltScores::from_logits(classes.clone(), &logits).unwrap())
            })
            .collect();
        let labels: Vec<String> = (0..n).map(|_| classes[rng.random_range(0..c)].clone()).collect();
        check_ranked(&ranked).map_err(|e| e.to_string())?;
        topk_table(&ranked, &labels, &[1, 2, 5, 10]).map_err(|e| e.to_string())?;
        checked += 1;
    }
    // The guards fire on violations.
    let bad = RankedList {
        entries: vec![
            RankedEntry { label: "a".into(), score: 0.7 },
            RankedEntry { label: "b".into(), score: 0.7 },
        ],
    };
    ensure(check_ranked(&[bad]).is_err(), || "unnormalized list accepted".into())?;
    ensure(GestaltScores::new(vec!["a".into()], vec![0.5]).is_err(), || "unnormalized scores accepted".into())?;
    Ok(format!("{checked} random evaluations, guards reject violations"))
}

fn alignment_recovery() -> Outcome {
    let mut rng = stream(10, &[]);
    let base = neutral_landmarks(128);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let jitter: Vec<(f64, f64)> =
            (0..base.len()).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect();
        let src = LandmarkSet::new(
            base.schema_name(),
            base.points().iter().zip(&jitter).map(|(p, d)| Point::new(p.x + d.0, p.y + d.1)).collect(),
        )
        .unwrap();
        let truth = SimilarityTransform {
            scale: rng.random_range(0.3..3.0),
            rotation: rng.random_range(-3.0..3.0),
            tx: rng.random_range(-100.0..100.0),
            ty: rng.random_range(-100.0..100.0),
        };
        let dst = src.map(|p| truth.apply(p));
        let got = estimate_alignment(&src, &dst).map_err(|e| e.to_string())?;
        let dr = (got.rotation - truth.rotation + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
            - std::f64::consts::PI;
        let err = [got.scale - truth.scale, dr, got.tx - truth.tx, got.ty - truth.ty]
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        ensure(err < 1e-6, || format!("case {case}: error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 transforms, worst error {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", gradient_integrity),
        ("architecture conformance", architecture_conformance),
        ("overfit oracle", overfit_oracle),
        ("end-to-end multi-class", end_to_end),
        ("binary metric arithmetic", binary_arithmetic),
        ("specialized fixture", specialized_fixture),
        ("permutation test", permutation_test_checks),
        ("determinism", determinism),
        ("runtime assertions", runtime_assertions),
        ("alignment recovery", alignment_recovery),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("criterion {n:>2} {name}: SKIP");
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({why})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
