//! Full network assembly.
//!
//! ```text
//! image ─ init(3→16) ─ SDS1 ─ SLP1 ─ SDS2 ─ SLP2 ─ SDS3 ─ SLP3 ─ US ×8 ─┐
//!   │                   ▲       └ SFA1 ×2 ┐ ▲      └ SFA2 ×4 ┐ ▲             │
//!   ├── ½ ──────────────┘                 │ │                │ │             │
//!   ├── ¼ ────────────────────────────────┼─┘                │ │             │
//!   └── ⅛ ────────────────────────────────┼──────────────────┼─┘             │
//!                                         └─────── concat ───┴───────────────┘
//!                                                    └ 1×1 → sigmoid
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blocks::{Flops, InitBlock, SdsBlock, SfaBlock, SlpBlock};
use crate::error::{Error, Result};
use crate::ops::{resize, ConvSpec};
use crate::params::{Bound, Init, ParamStore};
use crate::snp::ConvLayer;
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel widths of the stem and of the three encoder stages.
    pub stage_widths: [usize; 4],
    /// Zeros inserted between kernel taps in each SLP branch.
    pub dilation_zeros: [usize; 4],
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_widths: [16, 32, 64, 128],
            dilation_zeros: [0, 4, 8, 16],
            input_size: (224, 224),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.stage_widths;
        if w[0] == 0 || w.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidConfig(format!(
                "stage widths must be positive and strictly increasing: {w:?}"
            )));
        }
        if w[1..].iter().any(|c| c % 2 != 0) {
            return Err(Error::InvalidConfig(format!(
                "stage widths after the stem must be even: {w:?}"
            )));
        }
        let mut z = self.dilation_zeros.to_vec();
        z.sort_unstable();
        z.dedup();
        if z.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "SLP dilations must be distinct: {:?}",
                self.dilation_zeros
            )));
        }
        let (h, wd) = self.input_size;
        if h == 0 || wd == 0 || h % 8 != 0 || wd % 8 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{wd} must be a positive multiple of 8"
            )));
        }
        Ok(())
    }

    /// True when two configs describe the same architecture (seed and
    /// nominal input size may differ).
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.stage_widths == other.stage_widths && self.dilation_zeros == other.dilation_zeros
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModuleKind {
    Pyramid,
    Init,
    Sds,
    Slp,
    Sfa,
    Upsample,
    Head,
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModuleKind::Pyramid => "pyramid",
            ModuleKind::Init => "initblock",
            ModuleKind::Sds => "SDS",
            ModuleKind::Slp => "SLP",
            ModuleKind::Sfa => "SFA",
            ModuleKind::Upsample => "US",
            ModuleKind::Head => "head",
        };
        f.write_str(s)
    }
}

pub const US_SCALE: usize = 8;

#[derive(Clone, Debug)]
pub struct SlpNet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    init: InitBlock,
    sds: [SdsBlock; 3],
    slp: [SlpBlock; 3],
    sfa: [SfaBlock; 2],
    head: ConvLayer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub module: String,
    pub kind: ModuleKind,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
    pub total: usize,
}

impl ParamTable {
    pub fn get(&self, module: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.module == module).map(|r| r.params)
    }

    /// Size at 4 bytes per parameter, in MiB.
    pub fn size_mb(&self) -> f64 {
        self.total as f64 * 4.0 / (1u64 << 20) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopRow {
    pub module: String,
    pub kind: ModuleKind,
    pub output: Shape,
    pub flops: Flops,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopTable {
    pub input: Shape,
    pub rows: Vec<FlopRow>,
}

impl FlopTable {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.flops.total()).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 / 1e9
    }

    pub fn get(&self, module: &str) -> Option<&FlopRow> {
        self.rows.iter().find(|r| r.module == module)
    }
}

impl<T: Element> SlpNet<T> {
    /// Builds the network with parameters drawn deterministically from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let w = config.stage_widths;
        let z = config.dilation_zeros;
        let mut store = ParamStore::new();
        let mut rng = Init::new(config.seed);
        let init = InitBlock::new(&mut store, "init", w[0], &mut rng)?;
        let sds1 = SdsBlock::new(&mut store, "sds1", w[0], w[1], &mut rng)?;
        let slp1 = SlpBlock::new(&mut store, "slp1", w[1], &z, &mut rng)?;
        let sds2 = SdsBlock::new(&mut store, "sds2", w[1], w[2], &mut rng)?;
        let slp2 = SlpBlock::new(&mut store, "slp2", w[2], &z, &mut rng)?;
        let sds3 = SdsBlock::new(&mut store, "sds3", w[2], w[3], &mut rng)?;
        let slp3 = SlpBlock::new(&mut store, "slp3", w[3], &z, &mut rng)?;
        let sfa1 = SfaBlock::new(&mut store, "sfa1", w[1], 2, &mut rng)?;
        let sfa2 = SfaBlock::new(&mut store, "sfa2", w[2], 4, &mut rng)?;
        let fused = w[3] + w[1] + w[2];
        // the fused features are not activated, so the head uses unit gain
        let head = ConvLayer::with_gain(&mut store, "head", ConvSpec::new(fused, 1, (1, 1)), 1.0, &mut rng)?;
        Ok(SlpNet {
            config,
            params: store,
            init,
            sds: [sds1, sds2, sds3],
            slp: [slp1, slp2, slp3],
            sfa: [sfa1, sfa2],
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn slp_blocks(&self) -> &[SlpBlock; 3] {
        &self.slp
    }

    pub fn sfa_blocks(&self) -> &[SfaBlock; 2] {
        &self.sfa
    }

    /// Module tree in execution order.
    pub fn modules(&self) -> Vec<(String, ModuleKind)> {
        let mut out = vec![("init".to_string(), ModuleKind::Init)];
        for i in 1..=3 {
            out.push((format!("sds{i}"), ModuleKind::Sds));
            out.push((format!("slp{i}"), ModuleKind::Slp));
        }
        out.push(("us".into(), ModuleKind::Upsample));
        out.push(("sfa1".into(), ModuleKind::Sfa));
        out.push(("sfa2".into(), ModuleKind::Sfa));
        out.push(("head".into(), ModuleKind::Head));
        out
    }

    fn check_input(shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape("slpnet", "3-channel image", shape));
        }
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(8) || !shape.w.is_multiple_of(8) {
            return Err(Error::IndivisibleInput {
                op: "slpnet",
                h: shape.h,
                w: shape.w,
                divisor: 8,
            });
        }
        Ok(())
    }

    /// Probability map `(n, 1, H, W)` for an `(n, 3, H, W)` image batch.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        let s = tape.shape(image);
        Self::check_input(s)?;
        let pyramid = [
            tape.resize_bilinear(image, s.h / 2, s.w / 2)?,
            tape.resize_bilinear(image, s.h / 4, s.w / 4)?,
            tape.resize_bilinear(image, s.h / 8, s.w / 8)?,
        ];
        let mut x = self.init.forward(tape, p, image)?;
        let mut stage = Vec::with_capacity(3);
        for ((sds, slp), img) in self.sds.iter().zip(&self.slp).zip(pyramid) {
            x = sds.forward(tape, p, x, img)?;
            x = slp.forward(tape, p, x)?;
            stage.push(x);
        }
        let us = tape.upsample_bilinear(stage[2], US_SCALE)?;
        let f1 = self.sfa[0].forward(tape, p, stage[0])?;
        let f2 = self.sfa[1].forward(tape, p, stage[1])?;
        let fused = tape.concat_channels(&[us, f1, f2])?;
        let logits = self.head.forward(tape, p, fused)?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference convenience: runs a no-gradient tape and returns the map.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(images.clone());
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.take_value(y))
    }

    /// Exact parameter counts per module, in module order.
    pub fn count_params(&self) -> ParamTable {
        let rows: Vec<ParamRow> = self
            .modules()
            .into_iter()
            .map(|(module, kind)| ParamRow {
                params: self.params.count_prefix(&module),
                module,
                kind,
            })
            .collect();
        let total = self.params.count();
        debug_assert_eq!(total, rows.iter().map(|r| r.params).sum::<usize>());
        ParamTable { rows, total }
    }

    /// Forward FLOPs per module for one image of the given size, from shapes only.
    pub fn count_flops(&self, input: (usize, usize)) -> Result<FlopTable> {
        let input = Shape::new(1, 3, input.0, input.1);
        Self::check_input(input)?;
        let mut rows = Vec::new();
        let mut push = |module: &str, kind, output, flops| {
            rows.push(FlopRow {
                module: module.to_string(),
                kind,
                output,
                flops,
            })
        };

        let mut pyr = Flops::default();
        for k in [2, 4, 8] {
            pyr += Flops::resample(input.with_spatial(input.h / k, input.w / k));
        }
        push(
            "pyramid",
            ModuleKind::Pyramid,
            input.with_spatial(input.h / 8, input.w / 8),
            pyr,
        );

        let (mut s, f) = self.init.flops(input)?;
        push("init", ModuleKind::Init, s, f);
        let mut stage = Vec::new();
        for (i, (sds, slp)) in self.sds.iter().zip(&self.slp).enumerate() {
            let (o, f) = sds.flops(s)?;
            push(&format!("sds{}", i + 1), ModuleKind::Sds, o, f);
            let (o, f) = slp.flops(o)?;
            push(&format!("slp{}", i + 1), ModuleKind::Slp, o, f);
            stage.push(o);
            s = o;
        }
        let us = resize::upsample_output_shape(stage[2], US_SCALE)?;
        push("us", ModuleKind::Upsample, us, Flops::resample(us));
        let mut fused_c = us.c;
        for (i, sfa) in self.sfa.iter().enumerate() {
            let (o, f) = sfa.flops(stage[i])?;
            fused_c += o.c;
            push(&format!("sfa{}", i + 1), ModuleKind::Sfa, o, f);
        }
        let fused = us.with_channels(fused_c);
        let (_, mut f) = Flops::conv(&self.head.spec, fused)?;
        let out = self.head.spec.output_shape(fused)?;
        f += Flops::elementwise(out);
        f += Flops::elementwise(out);
        push("head", ModuleKind::Head, out, f);
        Ok(FlopTable { input, rows })
    }
}
