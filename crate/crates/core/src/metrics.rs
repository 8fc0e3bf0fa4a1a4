//! Pixelwise confusion counts and the five lesion-segmentation metrics
//! (accuracy, sensitivity, specificity, Jaccard index, Dice coefficient).

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::pointwise::check_binary;
use crate::tensor::{Element, Tensor};

/// Probability above which a pixel is labelled lesion. Strict: `p > 0.5`.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Tallies a binary prediction against a binary ground truth (lesion = 1).
pub fn confusion<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("confusion", gt.shape(), pred.shape()));
    }
    check_binary("confusion pred", pred)?;
    check_binary("confusion gt", gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == T::one(), g == T::one()) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `1` where `p > 0.5`, else `0`.
pub fn binarize<T: Element>(prob: &Tensor<T>) -> Tensor<T> {
    let th = T::from_f64_lossy(THRESHOLD);
    prob.map(|p| if p > th { T::one() } else { T::zero() })
}

/// Which ratios hit a zero denominator and fell back to the convention value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Degenerate {
    pub acc: bool,
    pub sens: bool,
    pub spec: bool,
    pub ji: bool,
    pub dsc: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.acc || self.sens || self.spec || self.ji || self.dsc
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub sens: f64,
    pub spec: f64,
    pub ji: f64,
    pub dsc: f64,
    pub degenerate: Degenerate,
}

pub const METRIC_NAMES: [&str; 5] = ["acc", "sens", "spec", "ji", "dsc"];

/// `num / den`; a zero denominator yields 1 when the matching error count is
/// also zero, 0 otherwise, and sets the flag.
fn ratio(num: u64, den: u64, errors: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        if errors == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Metrics {
        let mut d = Degenerate::default();
        let acc = ratio(c.tp + c.tn, c.total(), c.fp + c.fn_, &mut d.acc);
        let sens = ratio(c.tp, c.tp + c.fn_, c.fn_, &mut d.sens);
        let spec = ratio(c.tn, c.tn + c.fp, c.fp, &mut d.spec);
        let ji = ratio(c.tp, c.tp + c.fp + c.fn_, c.fp + c.fn_, &mut d.ji);
        let dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, c.fp + c.fn_, &mut d.dsc);
        Metrics {
            acc,
            sens,
            spec,
            ji,
            dsc,
            degenerate: d,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.sens, self.spec, self.ji, self.dsc]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean of per-image metrics.
    #[default]
    PerImage,
    /// Metrics of the pooled confusion counts.
    Global,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-image" => Ok(Aggregation::PerImage),
            "global" => Ok(Aggregation::Global),
            _ => Err(Error::InvalidConfig(format!(
                "aggregation must be per-image or global, got {s:?}"
            ))),
        }
    }
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::PerImage => "per-image",
            Aggregation::Global => "global",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub aggregation: Aggregation,
    pub images: usize,
    /// Aggregated values in [`METRIC_NAMES`] order.
    pub values: [f64; 5],
    /// Images (or, in global mode, 0/1) with at least one degenerate ratio.
    pub degenerate_images: usize,
}

impl MetricReport {
    pub fn aggregate(counts: &[ConfusionCounts], aggregation: Aggregation) -> MetricReport {
        let per_image: Vec<Metrics> = counts.iter().map(Metrics::from_counts).collect();
        let (values, degenerate_images) = match aggregation {
            Aggregation::PerImage => {
                let mut sum = [0.0; 5];
                for m in &per_image {
                    for (s, v) in sum.iter_mut().zip(m.values()) {
                        *s += v;
                    }
                }
                let n = per_image.len().max(1) as f64;
                (
                    sum.map(|s| s / n),
                    per_image.iter().filter(|m| m.degenerate.any()).count(),
                )
            }
            Aggregation::Global => {
                let mut pooled = ConfusionCounts::default();
                counts.iter().for_each(|c| pooled.merge(c));
                let m = Metrics::from_counts(&pooled);
                (m.values(), usize::from(m.degenerate.any()))
            }
        };
        MetricReport {
            aggregation,
            images: counts.len(),
            values,
            degenerate_images,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|&n| n == name).map(|i| self.values[i])
    }

    pub fn dsc(&self) -> f64 {
        self.values[4]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("metrics ({}, {} images)\n", self.aggregation.as_str(), self.images);
        for (name, v) in METRIC_NAMES.iter().zip(self.values) {
            let _ = writeln!(s, "  {:<5} {:>8.2}%", name.to_uppercase(), 100.0 * v);
        }
        if self.degenerate_images > 0 {
            let _ = writeln!(s, "  ({} with a zero-denominator ratio)", self.degenerate_images);
        }
        s
    }

    /// One `key=value` per line; metric values as percentages to 4 decimals.
    pub fn to_kv(&self) -> String {
        let mut s = format!("aggregation={}\nimages={}\n", self.aggregation.as_str(), self.images);
        for (name, v) in METRIC_NAMES.iter().zip(self.values) {
            let _ = writeln!(s, "{name}={:.4}", 100.0 * v);
        }
        let _ = writeln!(s, "degenerate={}", self.degenerate_images);
        s
    }
}

/// Mean and sample standard deviation of several runs (e.g. seeds).
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub runs: usize,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl RunSummary {
    pub fn from_reports(reports: &[MetricReport]) -> RunSummary {
        let n = reports.len();
        let mut mean = [0.0; 5];
        for r in reports {
            for (m, v) in mean.iter_mut().zip(r.values) {
                *m += v / n as f64;
            }
        }
        let mut std = [0.0; 5];
        if n > 1 {
            for r in reports {
                for ((s, v), m) in std.iter_mut().zip(r.values).zip(mean) {
                    *s += (v - m).powi(2);
                }
            }
            std = std.map(|s| (s / (n - 1) as f64).sqrt());
        }
        RunSummary { runs: n, mean, std }
    }

    /// `ACC 93.87 ± 0.14` style lines, in percent.
    pub fn to_text(&self) -> String {
        let mut s = format!("metrics over {} runs (mean ± sample std)\n", self.runs);
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {:<5} {:.2} ± {:.2}",
                name.to_uppercase(),
                100.0 * self.mean[i],
                100.0 * self.std[i]
            );
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!("runs={}\n", self.runs);
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let _ = writeln!(s, "{name}_mean={:.4}", 100.0 * self.mean[i]);
            let _ = writeln!(s, "{name}_std={:.4}", 100.0 * self.std[i]);
        }
        s
    }
}
