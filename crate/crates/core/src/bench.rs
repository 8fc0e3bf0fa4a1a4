//! Complexity report and forward-pass throughput measurement.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FlopTable, ModelConfig, ParamTable, SlpNet};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeReport {
    pub config: ModelConfig,
    pub size: (usize, usize),
    pub params: ParamTable,
    pub flops: FlopTable,
}

pub fn analyze<T: Element>(model: &SlpNet<T>, size: (usize, usize)) -> Result<AnalyzeReport> {
    Ok(AnalyzeReport {
        config: model.config().clone(),
        size,
        params: model.count_params(),
        flops: model.count_flops(size)?,
    })
}

impl AnalyzeReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "SLP-Net complexity at {}x{} (FLOPs count 2 per multiply-add)",
            self.size.0, self.size.1
        );
        let _ = writeln!(
            s,
            "{:<8} {:<10} {:>10} {:>16} {:>12}",
            "module", "kind", "params", "output", "MFLOPs"
        );
        for r in &self.flops.rows {
            let params = self.params.get(&r.module).map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "{:<8} {:<10} {:>10} {:>16} {:>12.3}",
                r.module,
                r.kind.to_string(),
                params,
                r.output.to_string(),
                r.flops.total() as f64 / 1e6
            );
        }
        let _ = writeln!(
            s,
            "total params   {} ({:.2}M, {:.2} MB)",
            self.params.total,
            self.params.total as f64 / 1e6,
            self.params.size_mb()
        );
        let _ = writeln!(s, "total GFLOPs   {:.4}", self.flops.gflops());
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "flop_convention=2_per_mac");
        let _ = writeln!(s, "input_size={}x{}", self.size.0, self.size.1);
        let _ = writeln!(s, "seed={}", self.config.seed);
        let _ = writeln!(s, "params={}", self.params.total);
        let _ = writeln!(s, "params_mb={:.4}", self.params.size_mb());
        let _ = writeln!(s, "flops={}", self.flops.total());
        let _ = writeln!(s, "gflops={:.6}", self.flops.gflops());
        for r in &self.params.rows {
            let _ = writeln!(s, "params_{}={}", r.module, r.params);
        }
        for r in &self.flops.rows {
            let _ = writeln!(s, "flops_{}={}", r.module, r.flops.total());
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub size: (usize, usize),
    pub warmup: usize,
    pub iters: usize,
    pub batch: usize,
    /// Independent model copies run concurrently, one thread each.
    pub instances: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            size: (224, 224),
            warmup: 10,
            iters: 100,
            batch: 1,
            instances: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    /// Images per second across all instances.
    pub fps: f64,
    pub lat_ms_mean: f64,
    pub lat_ms_min: f64,
    pub lat_ms_max: f64,
    pub total_secs: f64,
}

fn timed_run(model: &SlpNet<f32>, input: &Tensor<f32>, warmup: usize, iters: usize) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        model.predict(input)?;
    }
    let mut lat = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(model.predict(input)?);
        lat.push(t.elapsed().as_secs_f64());
    }
    Ok(lat)
}

/// Untimed warmup, then `iters` timed forwards per instance. FPS is
/// `instances · iters · batch / wall seconds` of the timed section.
pub fn bench_fps(model: &SlpNet<f32>, cfg: BenchConfig) -> Result<BenchReport> {
    if cfg.iters == 0 || cfg.batch == 0 || cfg.instances == 0 {
        return Err(Error::InvalidConfig(
            "iters, batch and instances must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = Shape::new(cfg.batch, 3, cfg.size.0, cfg.size.1);
    let input = Tensor::from_fn(shape, |_, _, _, _| rng.random::<f32>());

    let (lat, total_secs) = if cfg.instances == 1 {
        for _ in 0..cfg.warmup {
            model.predict(&input)?;
        }
        let start = Instant::now();
        let lat = timed_run(model, &input, 0, cfg.iters)?;
        (lat, start.elapsed().as_secs_f64())
    } else {
        let copies: Vec<SlpNet<f32>> = (0..cfg.instances).map(|_| model.clone()).collect();
        // warm every copy first so the timed section only holds steady-state work
        std::thread::scope(|s| {
            let handles: Vec<_> = copies
                .iter()
                .map(|m| s.spawn(|| timed_run(m, &input, cfg.warmup, 0)))
                .collect();
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("bench thread").map(drop))
        })?;
        let start = Instant::now();
        let all = std::thread::scope(|s| {
            let handles: Vec<_> = copies
                .iter()
                .map(|m| s.spawn(|| timed_run(m, &input, 0, cfg.iters)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench thread"))
                .collect::<Result<Vec<_>>>()
        })?;
        (all.concat(), start.elapsed().as_secs_f64())
    };

    let images = (cfg.instances * cfg.iters * cfg.batch) as f64;
    let ms: Vec<f64> = lat.iter().map(|s| s * 1e3).collect();
    Ok(BenchReport {
        config: cfg,
        fps: images / total_secs,
        lat_ms_mean: ms.iter().sum::<f64>() / ms.len() as f64,
        lat_ms_min: ms.iter().cloned().fold(f64::INFINITY, f64::min),
        lat_ms_max: ms.iter().cloned().fold(0.0, f64::max),
        total_secs,
    })
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        format!(
            "bench {}x{} batch {} x{} instance(s), {} warmup + {} timed\n  FPS {:.2}\n  latency ms mean {:.3} min {:.3} max {:.3}\n",
            c.size.0, c.size.1, c.batch, c.instances, c.warmup, c.iters, self.fps, self.lat_ms_mean, self.lat_ms_min, self.lat_ms_max
        )
    }

    /// Key-value lines, led by the complexity summary when `model` is given.
    pub fn to_kv(&self, model: Option<&AnalyzeReport>) -> String {
        let c = &self.config;
        let mut s = String::new();
        if let Some(a) = model {
            let _ = writeln!(s, "params={}", a.params.total);
            let _ = writeln!(s, "params_mb={:.4}", a.params.size_mb());
            let _ = writeln!(s, "gflops={:.6}", a.flops.gflops());
        }
        let _ = writeln!(s, "input_size={}x{}", c.size.0, c.size.1);
        let _ = writeln!(s, "batch={}", c.batch);
        let _ = writeln!(s, "instances={}", c.instances);
        let _ = writeln!(s, "warmup={}", c.warmup);
        let _ = writeln!(s, "iters={}", c.iters);
        let _ = writeln!(s, "seed={}", c.seed);
        let _ = writeln!(s, "fps_mean={:.4}", self.fps);
        let _ = writeln!(s, "lat_ms_mean={:.4}", self.lat_ms_mean);
        let _ = writeln!(s, "lat_ms_min={:.4}", self.lat_ms_min);
        let _ = writeln!(s, "lat_ms_max={:.4}", self.lat_ms_max);
        let _ = writeln!(s, "build={} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(
            s,
            "build_profile={}",
            if cfg!(debug_assertions) { "debug" } else { "release" }
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iter_fps_is_inverse_latency() {
        let cfg = ModelConfig {
            stage_widths: [4, 8, 16, 24],
            dilation_zeros: [0, 1, 2, 3],
            input_size: (16, 16),
            seed: 0,
        };
        let net = SlpNet::<f32>::build(cfg).unwrap();
        let r = bench_fps(
            &net,
            BenchConfig {
                size: (16, 16),
                warmup: 1,
                iters: 1,
                ..BenchConfig::default()
            },
        )
        .unwrap();
        // one timed forward: wall time and latency differ only by loop overhead
        assert!((r.fps * r.lat_ms_mean / 1e3 - 1.0).abs() < 0.05);
        assert_eq!(r.lat_ms_min, r.lat_ms_max);
    }
}
