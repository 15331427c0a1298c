use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::tensor::{Bound, Graph, ParamStore, Var};

use super::CROP_HEIGHT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Output channels of the four plain conv layers.
    pub channels: [usize; 4],
    /// Horizontal pooling factor of the first layer (1 keeps full width).
    pub width_pool: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            channels: [8, 16, 16, 16],
            width_pool: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || !(1..=4).contains(&self.width_pool) {
            return Err(Error::Config(format!("bad backbone {self:?}")));
        }
        Ok(())
    }

    /// Feature width for an input of `width` pixels.
    pub fn output_width(&self, width: usize) -> usize {
        width / self.width_pool
    }

    pub fn output_channels(&self) -> usize {
        self.channels[3]
    }
}

/// Four conv layers that pool height 32 -> 4, followed by two residual
/// blocks whose convolutions all use stride 1.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    convs: Vec<Conv2d>,
    blocks: Vec<(Conv2d, Conv2d)>,
}

/// Feature-map height after the backbone.
pub const FEATURE_HEIGHT: usize = CROP_HEIGHT / 8;

impl Backbone {
    pub fn new(store: &mut ParamStore, config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut convs = Vec::new();
        let mut input = 1;
        for (i, &out) in c.iter().enumerate() {
            convs.push(Conv2d::same3(store, &format!("backbone.conv{}", i + 1), input, out, rng));
            input = out;
        }
        let blocks = (0..2)
            .map(|i| {
                (
                    Conv2d::same3(store, &format!("backbone.res{}.a", i + 1), c[3], c[3], rng),
                    Conv2d::same3(store, &format!("backbone.res{}.b", i + 1), c[3], c[3], rng),
                )
            })
            .collect();
        Ok(Backbone {
            config,
            convs,
            blocks,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &(Conv2d, Conv2d)> {
        self.blocks.iter()
    }

    /// `[1, 1, 32, W]` to `[1, C, 4, W / width_pool]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != CROP_HEIGHT {
            return Err(Error::Image(format!(
                "backbone expects [N, 1, {CROP_HEIGHT}, W] input, got {s:?}"
            )));
        }
        if self.config.output_width(s[3]) == 0 {
            return Err(Error::Image(format!("input width {} is too small", s[3])));
        }
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(g, p, h)?;
            h = g.relu(y);
            let pool = match i {
                0 => (2, self.config.width_pool),
                1 | 2 => (2, 1),
                _ => continue,
            };
            h = g.max_pool2d(h, pool, pool)?;
        }
        for (a, b) in &self.blocks {
            let y = a.forward(g, p, h)?;
            let y = g.relu(y);
            let y = b.forward(g, p, y)?;
            let sum = g.add(h, y)?;
            h = g.relu(sum);
        }
        Ok(h)
    }
}
