//! The dilated-gated generator with its multi-scale side-output branch.
//!
//! Layer plan for cube side `S` and base width `w` (`S = 64`, `w = 64` is
//! the reference configuration):
//!
//! | layer   | input                  | output          | notes                  |
//! |---------|------------------------|-----------------|------------------------|
//! | gconv1  | `[x_erased, mask]`     | `w x S^3`       | same padding           |
//! | gconv2  | gconv1                 | `2w x (S/2)^3`  | stride 2               |
//! | gconv3  | gconv2                 | `2w x (S/2)^3`  |                        |
//! | gconv4  | gconv3                 | `4w x (S/4)^3`  | stride 2               |
//! | gconv5  | gconv4                 | `4w x (S/4)^3`  |                        |
//! | gconv6  | gconv5                 | `4w x (S/4)^3`  |                        |
//! | dgconv1 | gconv6                 | `4w x (S/4)^3`  | dilation 2             |
//! | dgconv2 | dgconv1                | `4w x (S/4)^3`  | dilation 4             |
//! | gconv7  | dgconv2                | `4w x (S/4)^3`  |                        |
//! | gconv8  | gconv7                 | `4w x (S/4)^3`  |                        |
//! | gconv9  | `[gconv8, gconv4]`     | `2w x (S/2)^3`  | gated conv, then 2x up |
//! | gconv10 | gconv9                 | `2w x (S/2)^3`  |                        |
//! | gconv11 | `[gconv10, gconv2]`    | `w x S^3`       | gated conv, then 2x up |
//! | gconv12 | gconv11                | `w x S^3`       |                        |
//! | gconv13 | gconv12                | `1 x S^3`       | sigmoid features       |
//! | conv1   | gconv7 + gconv8        | `1 x (S/4)^3`   | `1x1x1`                |
//! | conv2   | gconv9 + gconv10       | `1 x (S/2)^3`   | `1x1x1`                |
//! | conv3   | gconv11 + gconv12      | `1 x S^3`       | side output 3          |
//! | up1     | conv1                  | `1 x S^3`       | trilinear, side 1      |
//! | up2     | conv2                  | `1 x S^3`       | trilinear, side 2      |
//! | conv4   | `[conv3, up1, up2]`    | `1 x S^3`       | side output 4          |

use serde::{Deserialize, Serialize};

use super::{LayerShape, Trace};
use crate::error::{Error, Result};
use crate::nn::{prefixed, Activation, ConvLayer, GatedConvLayer, Init, Module, NamedParam};
use crate::tensor::{concat, ConvGeometry, Scalar, Tensor};

/// Number of side outputs of the branch.
pub const SIDE_OUTPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Edge length of the cubic input.
    pub side: usize,
    /// Channel count of the first encoder layer.
    pub width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { side: 64, width: 64 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 4 || self.side % 4 != 0 {
            return Err(Error::arg("generator", format!("cube side {} must be a positive multiple of 4", self.side)));
        }
        if self.width == 0 {
            return Err(Error::arg("generator", "width must be positive"));
        }
        Ok(())
    }

    /// Expected output shape of every named layer, `C x S x S x S`.
    pub fn shape_table(&self) -> Vec<LayerShape> {
        let (s, w) = (self.side, self.width);
        let row = |name: &str, c: usize, e: usize| LayerShape { name: name.to_string(), shape: [c, e, e, e] };
        vec![
            row("gconv1", w, s),
            row("gconv2", 2 * w, s / 2),
            row("gconv3", 2 * w, s / 2),
            row("gconv4", 4 * w, s / 4),
            row("gconv5", 4 * w, s / 4),
            row("gconv6", 4 * w, s / 4),
            row("dgconv1", 4 * w, s / 4),
            row("dgconv2", 4 * w, s / 4),
            row("gconv7", 4 * w, s / 4),
            row("gconv8", 4 * w, s / 4),
            row("gconv9", 2 * w, s / 2),
            row("gconv10", 2 * w, s / 2),
            row("gconv11", w, s),
            row("gconv12", w, s),
            row("gconv13", 1, s),
            row("conv1", 1, s / 4),
            row("conv2", 1, s / 2),
            row("conv3", 1, s),
            row("up1", 1, s),
            row("up2", 1, s),
            row("conv4", 1, s),
        ]
    }
}

/// Final image plus the four side outputs `phi_1..phi_4` (up1, up2, conv3, conv4).
#[derive(Debug, Clone)]
pub struct GeneratorOutput<S: Scalar = f32> {
    pub image: Tensor<S>,
    pub sides: [Tensor<S>; SIDE_OUTPUTS],
}

#[derive(Debug, Clone)]
pub struct Generator<S: Scalar = f32> {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub gated: Vec<GatedConvLayer<S>>,
    pub branch: [ConvLayer<S>; 4],
}

/// Names of `gated` in order.
pub const GATED_NAMES: [&str; 15] = [
    "gconv1", "gconv2", "gconv3", "gconv4", "gconv5", "gconv6", "dgconv1", "dgconv2", "gconv7", "gconv8", "gconv9", "gconv10",
    "gconv11", "gconv12", "gconv13",
];

const BRANCH_NAMES: [&str; 4] = ["conv1", "conv2", "conv3", "conv4"];

impl<S: Scalar> Generator<S> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let mut init = Init::new(seed);
        let same = ConvGeometry::same(3, 1);
        let down = ConvGeometry::new(2, 1, 1);
        let plan: [(usize, usize, ConvGeometry); 15] = [
            (2, w, same),
            (w, 2 * w, down),
            (2 * w, 2 * w, same),
            (2 * w, 4 * w, down),
            (4 * w, 4 * w, same),
            (4 * w, 4 * w, same),
            (4 * w, 4 * w, ConvGeometry::same(3, 2)),
            (4 * w, 4 * w, ConvGeometry::same(3, 4)),
            (4 * w, 4 * w, same),
            (4 * w, 4 * w, same),
            (8 * w, 2 * w, same),
            (2 * w, 2 * w, same),
            (4 * w, w, same),
            (w, w, same),
            (w, 1, same),
        ];
        let mut gated: Vec<GatedConvLayer<S>> = plan.iter().map(|&(ci, co, g)| GatedConvLayer::new(&mut init, ci, co, 3, g)).collect();
        gated[14].activation = Activation::Sigmoid;
        let branch = [
            ConvLayer::pointwise(&mut init, 4 * w, 1),
            ConvLayer::pointwise(&mut init, 2 * w, 1),
            ConvLayer::pointwise(&mut init, w, 1),
            ConvLayer::pointwise(&mut init, 3, 1),
        ];
        Ok(Generator { config, seed, gated, branch })
    }

    pub fn forward(&self, x_erased: &Tensor<S>, mask: &Tensor<S>) -> Result<GeneratorOutput<S>> {
        self.forward_traced(x_erased, mask, None)
    }

    /// Forward pass that also records each layer's per-item output shape.
    pub fn forward_traced(&self, x_erased: &Tensor<S>, mask: &Tensor<S>, mut trace: Option<&mut Trace>) -> Result<GeneratorOutput<S>> {
        let s = self.config.side;
        let batched = x_erased.rank() == 5;
        let lift = |t: &Tensor<S>, what: &str| -> Result<Tensor<S>> {
            let want_rank = if batched { 5 } else { 4 };
            let off = t.rank().saturating_sub(3);
            if t.rank() != want_rank || t.shape()[off - 1] != 1 {
                return Err(Error::dim("generator", None, format!("{what} must be [N x] 1 x {s}^3, got {:?}", t.shape())));
            }
            for (i, &e) in t.shape()[off..].iter().enumerate() {
                if e != s {
                    return Err(Error::dim("generator", Some(off + i), format!("{what} extent {e}, expected {s}")));
                }
            }
            if batched {
                Ok(t.clone())
            } else {
                t.reshape(&[1, 1, s, s, s])
            }
        };
        let x = lift(x_erased, "erased input")?;
        let m = lift(mask, "mask")?;
        if x.shape()[0] != m.shape()[0] {
            return Err(Error::dim("generator", Some(0), format!("batch {} vs {}", x.shape()[0], m.shape()[0])));
        }

        let mut record = |name: &str, t: &Tensor<S>| {
            if let Some(tr) = trace.as_deref_mut() {
                let sh = t.shape();
                tr.push(LayerShape { name: name.to_string(), shape: [sh[1], sh[2], sh[3], sh[4]] });
            }
        };
        let g = &self.gated;
        let input = concat(&[&x, &m], 1)?;
        let run = |i: usize, inp: &Tensor<S>| g[i].forward(inp);

        let g1 = run(0, &input)?;
        record("gconv1", &g1);
        let g2 = run(1, &g1)?;
        record("gconv2", &g2);
        let g3 = run(2, &g2)?;
        record("gconv3", &g3);
        let g4 = run(3, &g3)?;
        record("gconv4", &g4);
        let g5 = run(4, &g4)?;
        record("gconv5", &g5);
        let g6 = run(5, &g5)?;
        record("gconv6", &g6);
        let d1 = run(6, &g6)?;
        record("dgconv1", &d1);
        let d2 = run(7, &d1)?;
        record("dgconv2", &d2);

        let g7 = run(8, &d2)?;
        record("gconv7", &g7);
        let g8 = run(9, &g7)?;
        record("gconv8", &g8);
        let g9 = run(10, &concat(&[&g8, &g4], 1)?)?.upsample_trilinear(2)?;
        record("gconv9", &g9);
        let g10 = run(11, &g9)?;
        record("gconv10", &g10);
        let g11 = run(12, &concat(&[&g10, &g2], 1)?)?.upsample_trilinear(2)?;
        record("gconv11", &g11);
        let g12 = run(13, &g11)?;
        record("gconv12", &g12);
        let image = run(14, &g12)?;
        record("gconv13", &image);

        let [b1, b2, b3, b4] = &self.branch;
        let c1 = b1.forward(&g7.add(&g8)?)?;
        record("conv1", &c1);
        let c2 = b2.forward(&g9.add(&g10)?)?;
        record("conv2", &c2);
        let c3 = b3.forward(&g11.add(&g12)?)?;
        record("conv3", &c3);
        let up1 = c1.upsample_trilinear(4)?;
        record("up1", &up1);
        let up2 = c2.upsample_trilinear(2)?;
        record("up2", &up2);
        let c4 = b4.forward(&concat(&[&c3, &up1, &up2], 1)?)?;
        record("conv4", &c4);

        let mut sides = [up1, up2, c3, c4];
        let mut image = image;
        if !batched {
            let unbatch = |t: &Tensor<S>| t.reshape(&[1, s, s, s]);
            image = unbatch(&image)?;
            for side in sides.iter_mut() {
                *side = unbatch(side)?;
            }
        }
        Ok(GeneratorOutput { image, sides })
    }
}

impl<S: Scalar> Module<S> for Generator<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        let mut out = Vec::new();
        for (name, layer) in GATED_NAMES.iter().zip(self.gated.iter_mut()) {
            out.extend(prefixed(name, layer.params_mut()));
        }
        for (name, layer) in BRANCH_NAMES.iter().zip(self.branch.iter_mut()) {
            out.extend(prefixed(name, layer.params_mut()));
        }
        out
    }
}
