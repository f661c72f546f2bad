//! Spatiotemporal feature encoder: a 3D convolutional stem, residual
//! stages of per-frame 2D basic blocks, and global spatial average
//! pooling, mapping `B x 1 x T x H x W` clips to `B x C x T` features.
//!
//! Per-frame 2D convolutions are run as 3D convolutions with a temporal
//! kernel extent of 1 directly on the 5D tensor. That is the same
//! computation as folding time into the batch axis, which [`fold_time`]
//! and [`unfold_time`] expose for testing.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ops::ReduceOp, Var};
use crate::error::{Error, Result};
use crate::nn::{max_pool3d, BatchNorm, Conv3d, ConvGeometry, Forward, ParamStore, TimeMask};
use crate::rng::StreamRng;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSpec {
    /// Stem kernel extents (time, height, width).
    pub stem_kernel: [usize; 3],
    pub stem_stride: usize,
    /// 3x3 stride-2 max pooling after the stem.
    pub stem_pool: bool,
    /// Channel width of each residual stage; the stem emits the first.
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl Default for FrontendSpec {
    fn default() -> Self {
        FrontendSpec {
            stem_kernel: [5, 7, 7],
            stem_stride: 2,
            stem_pool: true,
            stage_widths: vec![16, 32, 64, 128],
            blocks_per_stage: 1,
        }
    }
}

impl FrontendSpec {
    /// The residual-network-18 layout: widths 64..512, two blocks per stage.
    pub fn resnet18() -> Self {
        FrontendSpec {
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            ..Self::default()
        }
    }

    pub fn output_channels(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let [kt, kh, kw] = self.stem_kernel;
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(
                "stem_kernel",
                format!("{:?} must have odd extents", self.stem_kernel),
            ));
        }
        if self.stem_stride == 0 {
            return Err(Error::config("stem_stride", "must be positive"));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::config(
                "stage_widths",
                "needs at least one positive width",
            ));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage", "must be positive"));
        }
        Ok(())
    }

    fn stem_geometry(&self) -> ConvGeometry {
        let [kt, kh, kw] = self.stem_kernel;
        ConvGeometry::new(self.stem_kernel)
            .stride([1, self.stem_stride, self.stem_stride])
            .same_padding([kt / 2, kh / 2, kw / 2])
    }

    /// Spatial extents after every stage for a `h x w` input, starting
    /// with the stem output.
    pub fn spatial_extents(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        let mut e = self.stem_geometry().output_extent([1, h, w])?;
        if self.stem_pool {
            e = pool_geometry().output_extent(e)?;
        }
        out.push((e[1], e[2]));
        for _ in 1..self.stage_widths.len() {
            e = block_geometry(2).output_extent(e)?;
            out.push((e[1], e[2]));
        }
        Ok(out)
    }
}

fn pool_geometry() -> ConvGeometry {
    ConvGeometry::new([1, 3, 3])
        .stride([1, 2, 2])
        .same_padding([0, 1, 1])
}

fn block_geometry(stride: usize) -> ConvGeometry {
    ConvGeometry::new([1, 3, 3])
        .stride([1, stride, stride])
        .same_padding([0, 1, 1])
}

/// Residual basic block applied independently to every frame.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv3d,
    pub bn1: BatchNorm,
    pub conv2: Conv3d,
    pub bn2: BatchNorm,
    pub downsample: Option<(Conv3d, BatchNorm)>,
}

impl BasicBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let conv1 = Conv3d::new(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            block_geometry(stride),
            false,
            rng,
        );
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), out_channels);
        let conv2 = Conv3d::new(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            block_geometry(1),
            false,
            rng,
        );
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), out_channels);
        let downsample = (stride != 1 || in_channels != out_channels).then(|| {
            let geom = ConvGeometry::new([1, 1, 1]).stride([1, stride, stride]);
            (
                Conv3d::new(
                    store,
                    &format!("{name}.down"),
                    in_channels,
                    out_channels,
                    geom,
                    false,
                    rng,
                ),
                BatchNorm::new(store, &format!("{name}.down_bn"), out_channels),
            )
        });
        BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            downsample,
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let mut h = self.conv1.forward(ctx, x)?;
        h = self.bn1.forward(ctx, h, mask)?.relu();
        h = self.conv2.forward(ctx, h)?;
        h = self.bn2.forward(ctx, h, mask)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s, mask)?
            }
            None => x,
        };
        Ok(h.add(skip)?.relu())
    }
}

#[derive(Clone, Debug)]
pub struct Frontend {
    pub spec: FrontendSpec,
    pub stem: Conv3d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<BasicBlock>>,
}

impl Frontend {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: FrontendSpec,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        spec.validate()?;
        let w0 = spec.stage_widths[0];
        let stem = Conv3d::new(
            store,
            &format!("{name}.stem"),
            1,
            w0,
            spec.stem_geometry(),
            false,
            rng,
        );
        let stem_bn = BatchNorm::new(store, &format!("{name}.stem_bn"), w0);
        let mut stages = Vec::new();
        let mut cin = w0;
        for (i, &width) in spec.stage_widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for j in 0..spec.blocks_per_stage {
                let stride = if i > 0 && j == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    store,
                    &format!("{name}.stage{i}.block{j}"),
                    cin,
                    width,
                    stride,
                    rng,
                ));
                cin = width;
            }
            stages.push(blocks);
        }
        Ok(Frontend {
            spec,
            stem,
            stem_bn,
            stages,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.spec.output_channels()
    }

    /// Stem: 3D convolution, batchnorm, ReLU and (optionally) spatial max
    /// pooling. Time is never strided.
    pub fn stem_forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::invalid(
                "frontend",
                format!("expected grayscale B x 1 x T x H x W input, got {shape:?}"),
            ));
        }
        let mut h = self.stem.forward(ctx, x)?;
        h = self.stem_bn.forward(ctx, h, mask)?.relu();
        if self.spec.stem_pool {
            h = max_pool3d(h, pool_geometry())?;
        }
        Ok(h)
    }

    pub fn stage_forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        stage: usize,
        mut x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        for block in &self.stages[stage] {
            x = block.forward(ctx, x, mask)?;
        }
        Ok(x)
    }

    /// `B x 1 x T x H x W` to `B x C x T`.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let mut h = self.stem_forward(ctx, x, mask)?;
        for stage in 0..self.stages.len() {
            h = self.stage_forward(ctx, stage, h, mask)?;
        }
        spatial_gap(h)
    }
}

/// Mean over the two spatial axes: `B x C x T x H x W` to `B x C x T`.
pub fn spatial_gap<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 5 {
        return Err(Error::invalid(
            "spatial_gap",
            format!("expected rank 5, got {shape:?}"),
        ));
    }
    x.reduce(ReduceOp::Mean, &[3, 4], false)
}

/// `B x C x T x H x W` to `(B*T) x C x 1 x H x W`.
pub fn fold_time<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let &[b, c, t, h, w] = s.as_slice() else {
        return Err(Error::invalid(
            "fold_time",
            format!("expected rank 5, got {s:?}"),
        ));
    };
    x.permute(&[0, 2, 1, 3, 4])?.reshape(&[b * t, c, 1, h, w])
}

/// Inverse of [`fold_time`] for a batch of `batch` clips.
pub fn unfold_time<'t, T: Real>(x: Var<'t, T>, batch: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let &[bt, c, 1, h, w] = s.as_slice() else {
        return Err(Error::invalid(
            "unfold_time",
            format!("expected (B*T) x C x 1 x H x W, got {s:?}"),
        ));
    };
    if batch == 0 || bt % batch != 0 {
        return Err(Error::invalid(
            "unfold_time",
            format!("{bt} frames do not split into {batch} clips"),
        ));
    }
    let t = bt / batch;
    x.reshape(&[batch, t, c, h, w])?.permute(&[0, 2, 1, 3, 4])
}
