//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails. Criterion 7 trains for 200 epochs at
//! 224² and dominates the runtime (roughly a quarter of an hour on one core).

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{grad_suite, rng, uniform};
use rand::Rng;
use slpnet::bench::analyze;
use slpnet::checkpoint;
use slpnet::metrics::{confusion, ConfusionCounts, Metrics};
use slpnet::ops::conv2d;
use slpnet::params::Init;
use slpnet::snp::{Activation, Branch, ConvSnp, MsConvSnp};
use slpnet::{ConvSpec, Error, ModelConfig, ParamStore, Shape, SlpNet, Tape, Tensor};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn slpnet(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slpnet"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "slpnet {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn num(kv: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    kv.get(key)
        .ok_or_else(|| format!("report has no {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn parameter_count() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("analyze.txt");
    slpnet(&["analyze", "--size", "224", "--out", path_str(&out)])?;
    let kv = read_kv(&out)?;
    let total = num(&kv, "params")?;
    let (slp3, sfa2) = (num(&kv, "params_slp3")?, num(&kv, "params_sfa2")?);
    let detail = format!("total {total} (band 150000..=300000), slp3 {slp3} (want 19712), sfa2 {sfa2} (want 20545)");
    ensure(slp3 == 19712.0 && sfa2 == 20545.0, format!("subtotals off: {detail}"))?;
    ensure(
        (150_000.0..=300_000.0).contains(&total),
        format!("total outside band: {detail}"),
    )?;
    Ok(detail)
}

fn flop_count() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("analyze.txt");
    slpnet(&["analyze", "--size", "224", "--out", path_str(&out)])?;
    let gflops = num(&read_kv(&out)?, "gflops")?;

    let net = SlpNet::<f32>::build(ModelConfig::default()).map_err(|e| e.to_string())?;
    let full = analyze(&net, (224, 224)).map_err(|e| e.to_string())?;
    let half = analyze(&net, (112, 112)).map_err(|e| e.to_string())?;
    let mut conv_blocks = 0;
    for (a, b) in full.flops.rows.iter().zip(&half.flops.rows) {
        if a.flops.conv > 0 {
            conv_blocks += 1;
            ensure(
                a.flops.conv == 4 * b.flops.conv,
                format!("{}: {} vs 4·{}", a.module, a.flops.conv, b.flops.conv),
            )?;
        }
    }
    let detail = format!("{gflops:.4} GFLOPs at 224² (band 1.5..=3.5), {conv_blocks} conv blocks scale by exactly 4");
    ensure((1.5..=3.5).contains(&gflops), format!("total outside band: {detail}"))?;
    Ok(detail)
}

fn gradient_correctness() -> Check {
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (name, case) in grad_suite::CASES {
        let w = case();
        if !w.passes() {
            failed.push(format!("{name}: {w}"));
        }
        lines.push((name, w.err));
    }
    ensure(failed.is_empty(), failed.join("; "))?;
    let worst = lines.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!(
        "{} cases × {} trials, worst rel err {worst:.2e}",
        lines.len(),
        grad_suite::TRIALS
    ))
}

fn randomized(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for e in store.entries_mut() {
        e.value = uniform(e.value.shape(), &mut r);
    }
}

fn snp_output(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    f: impl Fn(&mut Tape<f64>, &slpnet::Bound, slpnet::Var) -> slpnet::Var,
) -> Tensor<f64> {
    let mut tape = Tape::inference();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = f(&mut tape, &p, xv);
    tape.value(y).clone()
}

fn snp_semantics() -> Check {
    let spec = ConvSpec::new(3, 4, (3, 3)).same_padding();
    let x = uniform(Shape::new(2, 3, 6, 6), &mut rng(1));
    ensure(x.data().iter().any(|&v| v < 0.0), "input has no negative entries")?;

    for (act, expect_equal) in [(Activation::Identity, true), (Activation::Relu, false)] {
        let mut store = ParamStore::<f64>::new();
        let n = ConvSnp::new(&mut store, "n", spec, act, &mut Init::new(0)).map_err(|e| e.to_string())?;
        randomized(&mut store, 2);
        let ours = snp_output(&store, &x, |t, p, v| n.forward(t, p, v).unwrap());
        let (w, b) = (store.get(n.conv.weight), store.get(n.conv.bias));
        let conventional = conv2d(&x, w, Some(b), &spec).map_err(|e| e.to_string())?;
        let conventional = if expect_equal {
            conventional
        } else {
            conventional.map(|v| v.max(0.0))
        };
        let same = ours.data() == conventional.data();
        ensure(
            same == expect_equal,
            format!("{act:?}: bitwise equal to conventional = {same}"),
        )?;
    }

    let mut store = ParamStore::<f64>::new();
    let branch = Branch::new(&mut store, "ms.b0", &[("w", spec)], &mut Init::new(0)).map_err(|e| e.to_string())?;
    let ms = MsConvSnp::new(&mut store, "ms", vec![branch], 4, Activation::Relu).map_err(|e| e.to_string())?;
    let snp = ConvSnp::new(&mut store, "n", spec, Activation::Relu, &mut Init::new(0)).map_err(|e| e.to_string())?;
    randomized(&mut store, 3);
    let (w, b) = (
        store.get(ms.branches[0].stages[0].1).clone(),
        store.get(ms.bias).clone(),
    );
    *store.get_mut(snp.conv.weight) = w;
    *store.get_mut(snp.conv.bias) = b;
    let a = snp_output(&store, &x, |t, p, v| ms.forward(t, p, v).unwrap());
    let c = snp_output(&store, &x, |t, p, v| snp.forward(t, p, v).unwrap());
    ensure(a.data() == c.data(), "MSConvSNP with r = 1 differs from ConvSNP")?;

    for r in 1..=4 {
        let mut store = ParamStore::<f64>::new();
        let branches = (0..r)
            .map(|i| {
                Branch::new(
                    &mut store,
                    &format!("ms.b{i}"),
                    &[("w", spec)],
                    &mut Init::new(i as u64),
                )
                .unwrap()
            })
            .collect();
        let ms = MsConvSnp::new(&mut store, "ms", branches, 4, Activation::Relu).map_err(|e| e.to_string())?;
        randomized(&mut store, 4);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = ms.forward(&mut tape, &p, xv).map_err(|e| e.to_string())?;
        let loss = tape.sum(y);
        tape.backward(loss).map_err(|e| e.to_string())?;
        store.collect_grads(&tape, &p);
        let biases: Vec<_> = store.entries().iter().filter(|e| e.name.ends_with("bias")).collect();
        ensure(biases.len() == 1, format!("r = {r}: {} bias tensors", biases.len()))?;
        let g = biases[0].grad.as_ref().ok_or("bias has no gradient")?;
        ensure(
            g.data().iter().all(|&v| v == 72.0),
            format!("r = {r}: bias gradient {:?}, want n·h·w = 72", g.data()),
        )?;
    }
    Ok("identity bitwise, relu differs, r=1 matches, one bias gradient for r = 1..4".into())
}

fn separability() -> Check {
    let mut worst: f64 = 0.0;
    for (i, d) in [1usize, 5, 9, 17].into_iter().enumerate() {
        let mut r = rng(50 + i as u64);
        let c = 3;
        let x = uniform(Shape::new(1, c, 40, 37), &mut r);
        let u = uniform(Shape::new(1, c, 3, 1), &mut r);
        let v = uniform(Shape::new(1, 1, 1, 3), &mut r);
        let k = Tensor::from_fn(Shape::new(1, c, 3, 3), |_, ch, a, b| {
            u.at(0, ch, a, 0) * v.at(0, 0, 0, b)
        });
        let full = conv2d(&x, &k, None, &ConvSpec::new(c, 1, (3, 3)).dilation(d, d).same_padding()).unwrap();
        let mid = conv2d(&x, &u, None, &ConvSpec::new(c, 1, (3, 1)).dilation(d, 1).same_padding()).unwrap();
        let two = conv2d(
            &mid,
            &v,
            None,
            &ConvSpec::new(1, 1, (1, 3)).dilation(1, d).same_padding(),
        )
        .unwrap();
        let gap = full.max_rel_diff(&two, 1e-12);
        ensure(gap < 1e-5, format!("dilation {d}: {gap:e}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("dilations 1, 5, 9, 17; worst rel diff {worst:.2e}"))
}

fn metric_oracle() -> Check {
    let mut r = rng(6);
    let mut identity_worst: f64 = 0.0;
    for i in 0..1000 {
        let shape = Shape::new(1, 1, r.random_range(1..=16), r.random_range(1..=16));
        let (pd, gd) = (r.random_range(0.0..=1.0), [0.0, 0.1, 0.5, 0.9, 1.0][i % 5]);
        let pred = Tensor::from_fn(shape, |_, _, _, _| f64::from(u8::from(r.random_bool(pd))));
        let gt = Tensor::from_fn(shape, |_, _, _, _| f64::from(u8::from(r.random_bool(gd))));
        let mut oracle = ConfusionCounts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p > 0.5, g > 0.5) {
                (true, true) => oracle.tp += 1,
                (false, false) => oracle.tn += 1,
                (true, false) => oracle.fp += 1,
                (false, true) => oracle.fn_ += 1,
            }
        }
        let c = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        ensure(c == oracle, format!("pair {i}: {c:?} vs {oracle:?}"))?;
        let m = Metrics::from_counts(&c);
        let o = &oracle;
        let total = o.total() as f64;
        ensure(m.acc == (o.tp + o.tn) as f64 / total, format!("pair {i}: acc"))?;
        if o.tp + o.fn_ > 0 {
            ensure(m.sens == o.tp as f64 / (o.tp + o.fn_) as f64, format!("pair {i}: sens"))?;
        }
        if o.tn + o.fp > 0 {
            ensure(m.spec == o.tn as f64 / (o.tn + o.fp) as f64, format!("pair {i}: spec"))?;
        }
        if o.tp + o.fp + o.fn_ > 0 {
            ensure(
                m.ji == o.tp as f64 / (o.tp + o.fp + o.fn_) as f64,
                format!("pair {i}: ji"),
            )?;
            ensure(
                m.dsc == (2 * o.tp) as f64 / (2 * o.tp + o.fp + o.fn_) as f64,
                format!("pair {i}: dsc"),
            )?;
            let gap = (m.dsc - 2.0 * m.ji / (1.0 + m.ji)).abs();
            ensure(gap < 1e-12, format!("pair {i}: DSC-JI identity off by {gap:e}"))?;
            identity_worst = identity_worst.max(gap);
        }
    }
    let hand = Metrics::from_counts(&ConfusionCounts {
        tp: 1,
        tn: 1,
        fp: 1,
        fn_: 1,
    })
    .values();
    ensure(
        hand == [0.5, 0.5, 0.5, 1.0 / 3.0, 0.5],
        format!("hand example gave {hand:?}"),
    )?;
    Ok(format!(
        "1000 pairs exact, DSC-JI identity worst {identity_worst:.1e}, hand example (0.5, 0.5, 0.5, 1/3, 0.5)"
    ))
}

fn losses(kv: &BTreeMap<String, String>) -> Vec<f64> {
    kv.iter()
        .filter(|(k, _)| k.starts_with("loss_epoch_"))
        .filter_map(|(_, v)| v.parse().ok())
        .collect()
}

fn overfit_capacity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("synth");
    let run = dir.path().join("run");
    slpnet(&["gen-synth", "--out", path_str(&data), "--count", "8"])?;
    slpnet(&[
        "train",
        "--data-root",
        path_str(&data),
        "--epochs",
        "200",
        "--eval",
        "train",
        "--checkpoint-every",
        "0",
        "--out-dir",
        path_str(&run),
    ])?;
    let kv = read_kv(&run.join("report.txt"))?;
    let dsc = num(&kv, "eval_dsc")?;
    let l = losses(&kv);
    ensure(l.len() == 200, format!("{} epoch losses recorded", l.len()))?;
    ensure(l.iter().all(|v| v.is_finite()), "non-finite loss")?;
    let lead = l[..10].iter().sum::<f64>() / 10.0;
    let trail = l[190..].iter().sum::<f64>() / 10.0;
    let detail = format!("train DSC {dsc:.2}% (want > 95), loss leading-10 {lead:.4} → trailing-10 {trail:.4}");
    ensure(dsc > 95.0 && trail < lead, detail.clone())?;
    Ok(detail)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("synth");
    slpnet(&["gen-synth", "--out", path_str(&data), "--count", "8"])?;
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        slpnet(&[
            "train",
            "--data-root",
            path_str(&data),
            "--epochs",
            "1",
            "--seed",
            "7",
            "--out-dir",
            path_str(&out),
        ])?;
        let ckpt = fs::read(out.join("final.ckpt")).map_err(|e| e.to_string())?;
        let report = fs::read(out.join("report.txt")).map_err(|e| e.to_string())?;
        artifacts.push((ckpt, report));
    }
    ensure(artifacts[0].0 == artifacts[1].0, "checkpoints differ")?;
    ensure(artifacts[0].1 == artifacts[1].1, "reports differ")?;

    let net: SlpNet<f32> = checkpoint::load(dir.path().join("a/final.ckpt"), None).map_err(|e| e.to_string())?;
    let resaved = dir.path().join("resaved.ckpt");
    checkpoint::save(&net, &resaved).map_err(|e| e.to_string())?;
    ensure(
        fs::read(&resaved).map_err(|e| e.to_string())? == artifacts[0].0,
        "re-saved checkpoint differs",
    )?;
    let back: SlpNet<f32> = checkpoint::load(&resaved, Some(net.config())).map_err(|e| e.to_string())?;
    let mut r = rng(8);
    let x = Tensor::from_fn(Shape::new(1, 3, 224, 224), |_, _, _, _| r.random_range(0.0f32..1.0));
    let (y1, y2) = (
        net.predict(&x).map_err(|e| e.to_string())?,
        back.predict(&x).map_err(|e| e.to_string())?,
    );
    ensure(y1.data() == y2.data(), "reloaded model gives different outputs")?;
    Ok(format!(
        "two seed-7 runs give identical {}-byte checkpoints; reload is bitwise",
        artifacts[0].0.len()
    ))
}

fn fully_convolutional() -> Check {
    let net = SlpNet::<f32>::build(ModelConfig::default()).map_err(|e| e.to_string())?;
    for s in [64, 96, 224] {
        let y = net
            .predict(&Tensor::full(Shape::new(1, 3, s, s), 0.5))
            .map_err(|e| format!("{s}: {e}"))?;
        ensure(
            y.shape() == Shape::new(1, 1, s, s),
            format!("{s}: output {}", y.shape()),
        )?;
    }
    match net.predict(&Tensor::full(Shape::new(1, 3, 100, 100), 0.5)) {
        Err(Error::IndivisibleInput { divisor: 8, .. }) => {
            Ok("64, 96, 224 preserved; 100 rejected as not divisible by 8".into())
        }
        other => Err(format!("size 100 gave {other:?}")),
    }
}

fn bench_smoke() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut fps = Vec::new();
    for run in ["1", "2"] {
        let out = dir.path().join(format!("bench{run}.txt"));
        slpnet(&["bench", "--size", "224", "--out", path_str(&out)])?;
        let kv = read_kv(&out)?;
        for key in ["lat_ms_mean", "lat_ms_min", "lat_ms_max"] {
            ensure(num(&kv, key)? > 0.0, format!("{key} missing or zero"))?;
        }
        fps.push(num(&kv, "fps_mean")?);
    }
    let spread = (fps[0] - fps[1]).abs() / fps[0].max(fps[1]);
    let detail = format!(
        "FPS {:.2} then {:.2}, difference {:.1}% (want < 20%)",
        fps[0],
        fps[1],
        100.0 * spread
    );
    ensure(fps.iter().all(|f| *f > 0.0) && spread < 0.2, detail.clone())?;
    Ok(detail)
}

type Criterion = (&'static str, fn() -> Check);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("parameter count", parameter_count),
        ("FLOPs", flop_count),
        ("gradient correctness", gradient_correctness),
        ("SNP ordering semantics", snp_semantics),
        ("separability identity", separability),
        ("metric oracle", metric_oracle),
        ("overfit capacity", overfit_capacity),
        ("determinism", determinism),
        ("fully convolutional", fully_convolutional),
        ("bench smoke", bench_smoke),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} FAIL {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    assert_eq!(failures, 0, "{failures} of {} criteria failed", criteria.len());
}
