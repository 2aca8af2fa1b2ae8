//! Temporal-spatial CNN with multi-view channel attention.
//!
//! Layer stack for a `1×21×256` input (channels at `width_mult = 1`):
//!
//! | layer         | kernel | pad | out C | extra           |
//! |---------------|--------|-----|-------|-----------------|
//! | temporal conv | 1×37   | 2   | 16    | ReLU            |
//! | spatial conv  | 3×1    | 1   | 32    |                 |
//! | conv1         | 3×3    | 1   | 64    | attention       |
//! | pool1         | 2×4    |     |       |                 |
//! | conv2         | 3×3    | 1   | 128   | ReLU, attention |
//! | pool2         | 2×4    |     |       |                 |
//! | conv3         | 3×3    | 1   | 128   | ReLU            |
//! | pool3         | 2×2    |     |       |                 |
//! | conv4         | 3×3    | 1   | 256   | ReLU, attention |
//! | pool4         | 2×2    |     |       |                 |
//! | conv5         | 3×3    | 1   | 256   | ReLU            |
//!
//! The `256×1×3` output of conv5 is flattened into a 4-way linear layer. The
//! attention blocks are dropped when `attention_enabled` is false.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::{N_CHANNELS, N_CLASSES, N_TIMEPOINTS};
use crate::tensor::kernels::out_extent;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        name: String,
        /// Channel count at `width_mult = 1`.
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        relu: bool,
        attention: bool,
    },
    MaxPool {
        name: String,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. } | LayerSpec::MaxPool { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub attention_enabled: bool,
    /// Multiplier applied to every convolution's channel count (rounded,
    /// at least 1).
    pub width_mult: f64,
    pub input_channels: usize,
    pub input_timepoints: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        fn conv(name: &str, out: usize, k: (usize, usize), pad: usize, relu: bool, ca: bool) -> LayerSpec {
            LayerSpec::Conv {
                name: name.into(),
                out_channels: out,
                kernel: k,
                stride: (1, 1),
                padding: (pad, pad),
                relu,
                attention: ca,
            }
        }
        fn pool(name: &str, k: (usize, usize)) -> LayerSpec {
            LayerSpec::MaxPool {
                name: name.into(),
                kernel: k,
                stride: k,
            }
        }
        ModelSpec {
            attention_enabled: true,
            width_mult: 1.0,
            input_channels: N_CHANNELS,
            input_timepoints: N_TIMEPOINTS,
            classes: N_CLASSES,
            layers: vec![
                conv("temporal_conv", 16, (1, 37), 2, true, false),
                conv("spatial_conv", 32, (3, 1), 1, false, false),
                conv("conv1", 64, (3, 3), 1, false, true),
                pool("pool1", (2, 4)),
                conv("conv2", 128, (3, 3), 1, true, true),
                pool("pool2", (2, 4)),
                conv("conv3", 128, (3, 3), 1, true, false),
                pool("pool3", (2, 2)),
                conv("conv4", 256, (3, 3), 1, true, true),
                pool("pool4", (2, 2)),
                conv("conv5", 256, (3, 3), 1, true, false),
            ],
        }
    }
}

impl ModelSpec {
    /// The attention-free ablation of the default stack.
    pub fn without_attention() -> Self {
        ModelSpec {
            attention_enabled: false,
            ..Self::default()
        }
    }

    pub fn with_width(mut self, width_mult: f64) -> Self {
        self.width_mult = width_mult;
        self
    }

    pub fn scaled(&self, base_channels: usize) -> usize {
        ((base_channels as f64 * self.width_mult).round() as usize).max(1)
    }

    /// Output channel count of every convolution, in order.
    pub fn conv_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(self.scaled(*out_channels)),
                LayerSpec::MaxPool { .. } => None,
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.width_mult.is_finite() && self.width_mult > 0.0) {
            return Err(Error::input(format!("width_mult must be positive, got {}", self.width_mult)));
        }
        if self.input_channels == 0 || self.input_timepoints == 0 || self.classes == 0 {
            return Err(Error::input("input extents and class count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    /// Channels × height × width.
    pub dims: [usize; 3],
}

/// Per-layer output dimensions, starting with the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub entries: Vec<TraceEntry>,
}

impl ShapeTrace {
    /// Dimensions of the last feature map before flattening.
    pub fn pre_flatten(&self) -> [usize; 3] {
        self.entries.last().expect("trace has the input entry").dims
    }

    pub fn get(&self, name: &str) -> Option<[usize; 3]> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.dims)
    }
}

/// Output dimensions of every layer, from the shape formulas alone.
pub fn shape_trace(spec: &ModelSpec) -> Result<ShapeTrace> {
    spec.validate()?;
    let mut dims = [1, spec.input_channels, spec.input_timepoints];
    let mut entries = vec![TraceEntry {
        name: "input".into(),
        dims,
    }];
    for layer in &spec.layers {
        let [c, h, w] = dims;
        let (kernel, stride, padding, out_c) = match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => (*kernel, *stride, *padding, spec.scaled(*out_channels)),
            LayerSpec::MaxPool { kernel, stride, .. } => (*kernel, *stride, (0, 0), c),
        };
        let oh = out_extent(h, kernel.0, stride.0, padding.0);
        let ow = out_extent(w, kernel.1, stride.1, padding.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                layer.name(),
                format!("kernel {kernel:?} with padding {padding:?} does not fit a {h}x{w} input"),
            ));
        };
        dims = [out_c, oh, ow];
        entries.push(TraceEntry {
            name: layer.name().to_string(),
            dims,
        });
    }
    Ok(ShapeTrace { entries })
}

/// Graph handles of one attention block's parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub avg_weight: Var,
    pub avg_bias: Var,
    pub max_weight: Var,
    pub max_bias: Var,
}

/// Kernel and bias of the average-pool path and of the max-pool path.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub avg_weight: [f64; 3],
    pub avg_bias: f64,
    pub max_weight: [f64; 3],
    pub max_bias: f64,
}

impl AttentionParams {
    pub fn zeros() -> Self {
        AttentionParams {
            avg_weight: [0.0; 3],
            avg_bias: 0.0,
            max_weight: [0.0; 3],
            max_bias: 0.0,
        }
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> AttentionVars {
        AttentionVars {
            avg_weight: g.leaf(Tensor::from_vec(self.avg_weight.to_vec()), requires_grad),
            avg_bias: g.leaf(Tensor::scalar(self.avg_bias), requires_grad),
            max_weight: g.leaf(Tensor::from_vec(self.max_weight.to_vec()), requires_grad),
            max_bias: g.leaf(Tensor::scalar(self.max_bias), requires_grad),
        }
    }

    /// Attention applied outside of any training graph.
    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let p = self.bind(&mut g, false);
        let out = mv_channel_attention(&mut g, f, &p)?;
        Ok(g.value(out).clone())
    }
}

/// Multi-view channel attention.
///
/// Global average and global max pooling reduce `F` (`N×C×H×W`) to two
/// `N×C` channel descriptors. Each is passed through its own 3-tap,
/// length-preserving convolution along the channel axis; the sum of the two
/// goes through a sigmoid and rescales every channel plane of `F`.
pub fn mv_channel_attention(g: &mut Graph, features: Var, p: &AttentionVars) -> Result<Var> {
    let pooled_avg = g.global_avg_pool(features)?;
    let pooled_max = g.global_max_pool(features)?;
    let ra = g.conv1d(pooled_avg, p.avg_weight, p.avg_bias)?;
    let rm = g.conv1d(pooled_max, p.max_weight, p.max_bias)?;
    let fused = g.add(ra, rm)?;
    let weights = g.sigmoid(fused);
    g.channel_scale(features, weights)
}

#[derive(Debug, Clone)]
enum Step {
    Conv {
        name: String,
        weight: usize,
        bias: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        relu: bool,
        attention: Option<usize>,
    },
    Pool {
        name: String,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
}

/// A parameterized network. Parameters are stored in construction order:
/// for each convolution its weight and bias, then (when attention follows
/// it) the four attention tensors, and finally the linear weight and bias.
#[derive(Debug, Clone)]
pub struct Tscnn {
    spec: ModelSpec,
    trace: ShapeTrace,
    params: Vec<Tensor>,
    names: Vec<String>,
    steps: Vec<Step>,
    linear: (usize, usize),
}

impl Tscnn {
    /// Builds the network with fan-in scaled uniform weights
    /// (`U(−√(6/fan_in), √(6/fan_in))`) and zero biases. Each tensor draws
    /// from its own stream of `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let trace = shape_trace(spec)?;
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut steps = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: Option<usize>| {
            let idx = params.len();
            let mut t = Tensor::zeros(&shape);
            if let Some(fan_in) = fan_in {
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut r = rng::stream(seed, idx as u64);
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = r.gen_range(-bound..bound));
            }
            params.push(t);
            names.push(name);
            idx
        };
        let mut in_c = 1;
        for layer in &spec.layers {
            match layer {
                LayerSpec::Conv {
                    name,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    relu,
                    attention,
                } => {
                    let out_c = spec.scaled(*out_channels);
                    let fan_in = in_c * kernel.0 * kernel.1;
                    let weight = push(
                        format!("{name}.weight"),
                        vec![out_c, in_c, kernel.0, kernel.1],
                        Some(fan_in),
                    );
                    let bias = push(format!("{name}.bias"), vec![out_c], None);
                    let attention = (*attention && spec.attention_enabled).then(|| {
                        let first = push(format!("{name}.attention.avg_weight"), vec![3], Some(3));
                        push(format!("{name}.attention.avg_bias"), vec![1], None);
                        push(format!("{name}.attention.max_weight"), vec![3], Some(3));
                        push(format!("{name}.attention.max_bias"), vec![1], None);
                        first
                    });
                    steps.push(Step::Conv {
                        name: name.clone(),
                        weight,
                        bias,
                        stride: *stride,
                        padding: *padding,
                        relu: *relu,
                        attention,
                    });
                    in_c = out_c;
                }
                LayerSpec::MaxPool { name, kernel, stride } => steps.push(Step::Pool {
                    name: name.clone(),
                    kernel: *kernel,
                    stride: *stride,
                }),
            }
        }
        let features: usize = trace.pre_flatten().iter().product();
        let lw = push("linear.weight".into(), vec![spec.classes, features], Some(features));
        let lb = push("linear.bias".into(), vec![spec.classes], None);
        Ok(Tscnn {
            spec: spec.clone(),
            trace,
            params,
            names,
            steps,
            linear: (lw, lb),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shape_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a graph leaf, in storage order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.clone(), requires_grad))
            .collect()
    }

    /// Logits for a `N×1×H×W` batch. `params` must come from [`Tscnn::bind`].
    pub fn forward(&self, g: &mut Graph, input: Var, params: &[Var]) -> Result<Var> {
        self.forward_traced(g, input, params, None)
    }

    /// Like [`Tscnn::forward`], also recording each layer's output dims.
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        input: Var,
        params: &[Var],
        mut trace: Option<&mut Vec<TraceEntry>>,
    ) -> Result<Var> {
        assert_eq!(params.len(), self.params.len(), "bind the model's own parameters");
        let mut record = |g: &Graph, name: &str, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                let s = g.shape(v);
                t.push(TraceEntry {
                    name: name.to_string(),
                    dims: [s[1], s[2], s[3]],
                });
            }
        };
        let in_shape = g.shape(input).to_vec();
        if in_shape.len() != 4 {
            return Err(Error::shape("input", format!("expected N×1×H×W, got {in_shape:?}")));
        }
        record(g, "input", input);
        let mut x = input;
        for step in &self.steps {
            match step {
                Step::Conv {
                    name,
                    weight,
                    bias,
                    stride,
                    padding,
                    relu,
                    attention,
                } => {
                    x = g
                        .conv2d(x, params[*weight], params[*bias], *stride, *padding)
                        .map_err(|e| e.in_layer(name))?;
                    if *relu {
                        x = g.relu(x);
                    }
                    if let Some(a) = attention {
                        let vars = AttentionVars {
                            avg_weight: params[*a],
                            avg_bias: params[a + 1],
                            max_weight: params[a + 2],
                            max_bias: params[a + 3],
                        };
                        x = mv_channel_attention(g, x, &vars).map_err(|e| e.in_layer(name))?;
                    }
                    record(g, name, x);
                }
                Step::Pool {
                    name,
                    kernel,
                    stride,
                } => {
                    x = g
                        .maxpool2d(x, *kernel, *stride)
                        .map_err(|e| e.in_layer(name))?;
                    record(g, name, x);
                }
            }
        }
        let flat = g.flatten(x)?;
        g.linear(flat, params[self.linear.0], params[self.linear.1])
            .map_err(|e| e.in_layer("linear"))
    }

    /// Logits for a batch, outside of any training graph.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, x, &params)?;
        Ok(g.value(out).clone())
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let logits = self.logits(batch)?;
        let k = logits.shape()[1];
        let mut data = logits.into_data();
        for row in data.chunks_mut(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Tensor::new(vec![data.len() / k, k], data)
    }

    /// Arg-max class per row; ties resolve to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(argmax_rows(logits.data(), logits.shape()[1]))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = serde_json::to_vec(&self.spec)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(spec.len() as u32).to_le_bytes())?;
        w.write_all(&spec)?;
        w.write_all(&(self.num_parameters() as u64).to_le_bytes())?;
        for p in &self.params {
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor::new(&bytes);
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(cur.error(0, "bad magic"));
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(cur.error(4, format!("unsupported version {version}")));
        }
        let spec_len = u32::from_le_bytes(cur.array()?) as usize;
        let spec_at = cur.pos;
        let spec: ModelSpec = serde_json::from_slice(cur.take(spec_len)?)
            .map_err(|e| cur.error(spec_at, format!("model spec: {e}")))?;
        let mut model = Tscnn::build(&spec, 0)?;
        let count_at = cur.pos;
        let count = u64::from_le_bytes(cur.array()?) as usize;
        if count != model.num_parameters() {
            return Err(cur.error(
                count_at,
                format!("{count} parameters, spec needs {}", model.num_parameters()),
            ));
        }
        for p in &mut model.params {
            for v in p.data_mut() {
                *v = f64::from_le_bytes(cur.array()?);
            }
        }
        if cur.pos != bytes.len() {
            return Err(cur.error(cur.pos, "trailing bytes"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            format: "TSNN checkpoint",
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(self.bytes.len(), format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub(crate) fn argmax_rows(data: &[f64], k: usize) -> Vec<usize> {
    data.chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
