use std::path::Path;

use dcil_autodiff::{wrap_angle, Checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::KinematicBounds;
use crate::dynamics::UnicycleState;
use crate::error::{check_len, Error, Result};

/// Length of the measurement vector fed to the network:
/// `(v, ω, d_goal, cos θ_goal, sin θ_goal)`, each normalised.
pub const MEASUREMENT_DIM: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `2H` bounded controls, `[v.., ω..]`.
    Controls,
    /// `4H` raw state outputs, `[x.., y.., cos.., sin..]`.
    States,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub image_size: usize,
    /// Pixels per metre.
    pub resolution: f64,
    /// Image row holding the robot; rows above it lie ahead.
    pub anchor_row: usize,
    pub conv_filters: [usize; 2],
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub head: HeadKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            resolution: 5.0,
            anchor_row: 44,
            conv_filters: [6, 16],
            kernel: 5,
            pool: 2,
            hidden: 200,
            horizon: 10,
            head: HeadKind::Controls,
        }
    }
}

impl NetConfig {
    /// The larger 128 px, 10 px/m input.
    pub fn full_scale() -> Self {
        Self {
            image_size: 128,
            resolution: 10.0,
            anchor_row: 88,
            ..Self::default()
        }
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn anchor_col(&self) -> usize {
        self.image_size / 2
    }

    fn conv_out(&self) -> Result<[usize; 2]> {
        let c1 = self
            .image_size
            .checked_sub(self.kernel - 1)
            .ok_or_else(|| Error::invalid("image smaller than kernel"))?
            / self.pool;
        let c2 = c1
            .checked_sub(self.kernel - 1)
            .ok_or_else(|| Error::invalid("feature map smaller than kernel"))?
            / self.pool;
        if c2 == 0 {
            return Err(Error::invalid("image too small for the encoder"));
        }
        Ok([c1, c2])
    }

    /// Length of the flattened convolutional features.
    pub fn flatten_size(&self) -> Result<usize> {
        let [_, c2] = self.conv_out()?;
        Ok(self.conv_filters[1] * c2 * c2)
    }

    pub fn output_size(&self) -> usize {
        match self.head {
            HeadKind::Controls => 2 * self.horizon,
            HeadKind::States => 4 * self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.anchor_row >= self.image_size {
            return Err(Error::invalid("anchor row outside the image"));
        }
        self.flatten_size().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// LeNet-style encoder followed by a two-layer tanh MLP and a linear output
/// layer.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub config: NetConfig,
    pub params: ParamStore,
    ids: Ids,
}

/// Graph handles produced by [`PolicyNet::build`].
#[derive(Clone, Copy, Debug)]
pub struct NetNodes {
    pub latent: NodeId,
    /// Output-layer pre-activations.
    pub raw: NodeId,
}

fn layer_specs(cfg: &NetConfig) -> Result<Vec<(&'static str, Vec<usize>, usize)>> {
    let [f1, f2] = cfg.conv_filters;
    let k = cfg.kernel;
    let feat = cfg.flatten_size()? + MEASUREMENT_DIM;
    let h = cfg.hidden;
    Ok(vec![
        ("conv1.w", vec![f1, 1, k, k], k * k),
        ("conv1.b", vec![f1], k * k),
        ("conv2.w", vec![f2, f1, k, k], f1 * k * k),
        ("conv2.b", vec![f2], f1 * k * k),
        ("fc1.w", vec![h, feat], feat),
        ("fc1.b", vec![h], feat),
        ("fc2.w", vec![h, h], h),
        ("fc2.b", vec![h], h),
        ("out.w", vec![cfg.output_size(), h], h),
        ("out.b", vec![cfg.output_size()], h),
    ])
}

impl PolicyNet {
    /// Fresh parameters drawn uniformly from `±1/√fan_in`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in layer_specs(&config)? {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let init = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.add(name, &shape, init);
        }
        Self::from_store(config, params)
    }

    fn from_store(config: NetConfig, params: ParamStore) -> Result<Self> {
        let id = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        let ids = Ids {
            conv1_w: id("conv1.w")?,
            conv1_b: id("conv1.b")?,
            conv2_w: id("conv2.w")?,
            conv2_b: id("conv2.b")?,
            fc1_w: id("fc1.w")?,
            fc1_b: id("fc1.b")?,
            fc2_w: id("fc2.w")?,
            fc2_b: id("fc2.b")?,
            out_w: id("out.w")?,
            out_b: id("out.b")?,
        };
        Ok(Self { config, params, ids })
    }

    /// Adds the network to `g` for one observation.
    pub fn build(&self, g: &mut Graph, image: &[f64], measurements: &[f64]) -> Result<NetNodes> {
        let cfg = &self.config;
        let s = cfg.image_size;
        check_len("image", s * s, image.len())?;
        check_len("measurements", MEASUREMENT_DIM, measurements.len())?;
        let p = |g: &mut Graph, id| g.param(&self.params, id);
        let img = g.constant(Tensor::new(&[1, s, s], image.to_vec()));
        let (w1, b1) = (p(g, self.ids.conv1_w), p(g, self.ids.conv1_b));
        let c1 = g.conv2d(img, w1, b1, 1);
        let c1 = g.tanh(c1);
        let c1 = g.max_pool2d(c1, cfg.pool);
        let (w2, b2) = (p(g, self.ids.conv2_w), p(g, self.ids.conv2_b));
        let c2 = g.conv2d(c1, w2, b2, 1);
        let c2 = g.tanh(c2);
        let c2 = g.max_pool2d(c2, cfg.pool);
        let flat = g.reshape(c2, &[cfg.flatten_size()?]);
        let m = g.vector(measurements.to_vec());
        let feat = g.concat(&[flat, m]);
        let dense = |g: &mut Graph, w, b, x| {
            let (w, b) = (p(g, w), p(g, b));
            let z = g.matmul(w, x);
            g.add(z, b)
        };
        let h1 = dense(g, self.ids.fc1_w, self.ids.fc1_b, feat);
        let latent = g.tanh(h1);
        let h2 = dense(g, self.ids.fc2_w, self.ids.fc2_b, latent);
        let h2 = g.tanh(h2);
        let raw = dense(g, self.ids.out_w, self.ids.out_b, h2);
        Ok(NetNodes { latent, raw })
    }

    /// Evaluates the network and returns the raw output layer.
    pub fn forward(&self, image: &[f64], measurements: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let n = self.build(&mut g, image, measurements)?;
        g.forward(&self.params, &Default::default())?;
        Ok(g.value(n.raw).unwrap().data().to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "net": self.config, "extra": extra });
        Checkpoint::from_store(&self.params, meta).save(path)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`PolicyNet::save`], returning the
    /// network and the extra metadata.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        let config: NetConfig = serde_json::from_value(ck.metadata["net"].clone())?;
        let extra = ck.metadata["extra"].clone();
        let mut net = PolicyNet::new(config, 0)?;
        ck.restore_into(&mut net.params)?;
        Ok((net, extra))
    }
}

/// Maps pre-activations to controls inside the box: `lo + σ(z) (hi - lo)`.
pub fn controls_head(g: &mut Graph, raw: NodeId, bounds: &KinematicBounds) -> NodeId {
    let h = g.numel(raw) / 2;
    let mut widths = vec![bounds.v.width(); h];
    widths.extend(std::iter::repeat(bounds.omega.width()).take(h));
    let mut lows = vec![bounds.v.lo; h];
    lows.extend(std::iter::repeat(bounds.omega.lo).take(h));
    let s = g.sigmoid(raw);
    let scaled = g.mul_const(s, widths);
    let lo = g.vector(lows);
    g.add(scaled, lo)
}

/// Numeric version of [`controls_head`].
pub fn predict_controls(raw: &[f64], bounds: &KinematicBounds) -> Vec<f64> {
    let mut g = Graph::new();
    let r = g.vector(raw.to_vec());
    let u = controls_head(&mut g, r, bounds);
    g.eval().expect("bounded head is finite for finite input");
    g.value(u).unwrap().data().to_vec()
}

/// Graph nodes of a state head: positions and unit heading vectors.
#[derive(Clone, Copy, Debug)]
pub struct StateHead {
    pub x: NodeId,
    pub y: NodeId,
    pub cos: NodeId,
    pub sin: NodeId,
}

/// Splits a state-head output and normalises each `(cos, sin)` pair.
pub fn states_head(g: &mut Graph, raw: NodeId) -> StateHead {
    let h = g.numel(raw) / 4;
    let x = g.slice(raw, 0, h);
    let y = g.slice(raw, h, h);
    let c = g.slice(raw, 2 * h, h);
    let s = g.slice(raw, 3 * h, h);
    let c2 = g.square(c);
    let s2 = g.square(s);
    let n = g.add(c2, s2);
    let n = g.offset(n, 1e-12);
    let n = g.sqrt(n);
    StateHead {
        x,
        y,
        cos: g.div(c, n),
        sin: g.div(s, n),
    }
}

/// Decodes a state-head output into poses `x_1..x_H`. A `(cos, sin)` pair
/// shorter than `1e-6` keeps the previous heading.
pub fn predict_states(raw: &[f64], x0: &UnicycleState) -> Vec<UnicycleState> {
    let h = raw.len() / 4;
    let mut prev = x0.phi;
    (0..h)
        .map(|k| {
            let (c, s) = (raw[2 * h + k], raw[3 * h + k]);
            let phi = if c.hypot(s) < 1e-6 { prev } else { wrap_angle(s.atan2(c)) };
            prev = phi;
            UnicycleState {
                x: raw[k],
                y: raw[h + k],
                phi,
            }
        })
        .collect()
}
