//! The parametrized auction: a feasible allocation network and an
//! individually rational payment network, with analytic reverse-mode
//! gradients with respect to both the parameters and the reported bids.
//!
//! Both heads are plain feedforward networks over the flattened `n * m` bid
//! vector. The allocation head emits `(n + 1) * m` logits which are
//! softmax-normalized per item over the `n` bidders plus one "unsold" slot,
//! so every item is allocated at most once. The payment head emits `n`
//! sigmoid fractions `alpha_i` and bidder `i` pays `alpha_i` times the
//! reported value of its allocation, which is never more than that value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::valuations::BidProfile;

pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const IR_TOL: f64 = 1e-9;
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_hidden_layers() -> usize {
    2
}

fn default_hidden_width() -> usize {
    64
}

fn default_init_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Weight standard deviation is `init_gain / sqrt(fan_in)`. Zero gives
    /// the all-zero network.
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

impl NetworkConfig {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            hidden_layers: default_hidden_layers(),
            hidden_width: default_hidden_width(),
            activation: Activation::default(),
            init_gain: default_init_gain(),
        }
    }

    pub fn with_hidden(mut self, layers: usize, width: usize) -> Self {
        self.hidden_layers = layers;
        self.hidden_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if self.hidden_layers == 0 {
            return Err(Error::config("hidden_layers", "must be at least 1"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width", "must be at least 1"));
        }
        if !self.init_gain.is_finite() || self.init_gain < 0.0 {
            return Err(Error::config("init_gain", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Standard deviation of freshly initialized weights for a layer.
    pub fn init_std(&self, fan_in: usize) -> f64 {
        self.init_gain / (fan_in as f64).sqrt()
    }

    fn head_layers(&self, outputs: usize, offset: &mut usize) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(self.hidden_layers + 1);
        let mut inputs = self.n * self.m;
        for k in 0..=self.hidden_layers {
            let out = if k == self.hidden_layers {
                outputs
            } else {
                self.hidden_width
            };
            layers.push(LayerSpec {
                offset: *offset,
                inputs,
                outputs: out,
            });
            *offset += out * inputs + out;
            inputs = out;
        }
        layers
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let allocation = self.head_layers((self.n + 1) * self.m, &mut offset);
        let payment = self.head_layers(self.n, &mut offset);
        Layout {
            allocation,
            payment,
            len: offset,
        }
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSpec {
    offset: usize,
    inputs: usize,
    outputs: usize,
}

impl LayerSpec {
    fn weights<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.offset..self.offset + self.inputs * self.outputs]
    }

    fn bias<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inputs * self.outputs;
        &flat[start..start + self.outputs]
    }

    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone)]
struct Layout {
    allocation: Vec<LayerSpec>,
    payment: Vec<LayerSpec>,
    len: usize,
}

/// A dense layer: `outputs x inputs` row-major weights plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-head layer lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredParams {
    pub allocation: Vec<DenseLayer>,
    pub payment: Vec<DenseLayer>,
}

/// All weights of both networks. Stored flat; the layer structure is derived
/// from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionParams {
    config: NetworkConfig,
    flat: Vec<f64>,
}

impl AuctionParams {
    pub fn from_flat(config: NetworkConfig, flat: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if flat.len() != expected {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected,
                got: flat.len(),
            });
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("parameters must be finite".into()));
        }
        Ok(Self { config, flat })
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        let d = config.param_count();
        Self::from_flat(config, vec![0.0; d])
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// `self += scale * direction`.
    pub fn add_scaled(&mut self, scale: f64, direction: &[f64]) -> Result<()> {
        if direction.len() != self.flat.len() {
            return Err(Error::Dimension {
                what: "parameter update",
                expected: self.flat.len(),
                got: direction.len(),
            });
        }
        for (w, d) in self.flat.iter_mut().zip(direction) {
            *w += scale * d;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.flat)
    }

    fn head_norms(&self) -> (f64, f64) {
        let layout = self.config.layout();
        let split = layout.payment[0].offset;
        (l2_norm(&self.flat[..split]), l2_norm(&self.flat[split..]))
    }

    pub fn to_structured(&self) -> StructuredParams {
        let layout = self.config.layout();
        let expand = |specs: &[LayerSpec]| {
            specs
                .iter()
                .map(|s| DenseLayer {
                    inputs: s.inputs,
                    outputs: s.outputs,
                    weights: s.weights(&self.flat).to_vec(),
                    bias: s.bias(&self.flat).to_vec(),
                })
                .collect()
        };
        StructuredParams {
            allocation: expand(&layout.allocation),
            payment: expand(&layout.payment),
        }
    }

    pub fn from_structured(config: NetworkConfig, structured: &StructuredParams) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut flat = Vec::with_capacity(layout.len);
        for (specs, layers) in [
            (&layout.allocation, &structured.allocation),
            (&layout.payment, &structured.payment),
        ] {
            if specs.len() != layers.len() {
                return Err(Error::Dimension {
                    what: "layer count",
                    expected: specs.len(),
                    got: layers.len(),
                });
            }
            for (spec, layer) in specs.iter().zip(layers) {
                if layer.weights.len() != spec.inputs * spec.outputs
                    || layer.bias.len() != spec.outputs
                {
                    return Err(Error::Dimension {
                        what: "dense layer size",
                        expected: spec.len(),
                        got: layer.weights.len() + layer.bias.len(),
                    });
                }
                flat.extend_from_slice(&layer.weights);
                flat.extend_from_slice(&layer.bias);
            }
        }
        Self::from_flat(config, flat)
    }

    pub fn snapshot(&self, seed: u64) -> ParamsSnapshot {
        ParamsSnapshot {
            config: self.config.clone(),
            flat_params: self.flat.clone(),
            seed,
            format_version: SNAPSHOT_FORMAT_VERSION,
        }
    }
}

/// On-disk parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSnapshot {
    pub config: NetworkConfig,
    pub flat_params: Vec<f64>,
    pub seed: u64,
    pub format_version: u32,
}

impl ParamsSnapshot {
    pub fn into_params(self) -> Result<AuctionParams> {
        if self.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::InvalidValue(format!(
                "unsupported parameter snapshot format_version {}",
                self.format_version
            )));
        }
        AuctionParams::from_flat(self.config, self.flat_params)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Zero-mean uniform weights with fan-in scaling; biases zero.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<AuctionParams> {
    config.validate()?;
    let layout = config.layout();
    let mut flat = vec![0.0; layout.len];
    let mut rng = rng::stream(seed, &[rng::TAG_INIT]);
    for spec in layout.allocation.iter().chain(&layout.payment) {
        // Uniform(-a, a) has standard deviation a / sqrt(3).
        let bound = config.init_std(spec.inputs) * 3f64.sqrt();
        let weights = &mut flat[spec.offset..spec.offset + spec.inputs * spec.outputs];
        if bound > 0.0 {
            for w in weights {
                *w = rng.random_range(-bound..bound);
            }
        }
    }
    AuctionParams::from_flat(config.clone(), flat)
}

/// Allocation probabilities, bidder-major `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    n: usize,
    m: usize,
    z: Vec<f64>,
}

impl Allocation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, bidder: usize, item: usize) -> f64 {
        self.z[bidder * self.m + item]
    }

    pub fn row(&self, bidder: usize) -> &[f64] {
        &self.z[bidder * self.m..(bidder + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn column_sum(&self, item: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, item)).sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.z.iter().all(|p| (0.0..=1.0).contains(p))
            && (0..self.m).all(|j| self.column_sum(j) <= 1.0 + FEASIBILITY_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
}

impl Outcome {
    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }

    /// `payments[i] <= sum_j z_ij * b_ij + IR_TOL` for every bidder.
    pub fn is_ir_for(&self, bids: &BidProfile) -> bool {
        (0..self.allocation.n).all(|i| {
            let value: f64 = bids
                .row(i)
                .iter()
                .zip(self.allocation.row(i))
                .map(|(b, z)| b * z)
                .sum();
            self.payments[i] >= 0.0 && self.payments[i] <= value + IR_TOL
        })
    }
}

/// A scalar function of the auction outcome on a fixed bid profile.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Constant(f64),
    /// Sum of all payments.
    Revenue,
    Payment(usize),
    /// Bidder `bidder`'s utility under the given true valuation row.
    Utility {
        bidder: usize,
        valuation: Vec<f64>,
    },
    /// Weighted sum of sub-objectives.
    Combination(Vec<(f64, Objective)>),
}

impl Objective {
    fn validate(&self, n: usize, m: usize) -> Result<()> {
        match self {
            Objective::Constant(_) | Objective::Revenue => Ok(()),
            Objective::Payment(i) => check_bidder(*i, n),
            Objective::Utility { bidder, valuation } => {
                check_bidder(*bidder, n)?;
                if valuation.len() != m {
                    return Err(Error::Dimension {
                        what: "valuation row",
                        expected: m,
                        got: valuation.len(),
                    });
                }
                Ok(())
            }
            Objective::Combination(parts) => parts.iter().try_for_each(|(_, o)| o.validate(n, m)),
        }
    }

    fn value(&self, pass: &ForwardPass) -> f64 {
        match self {
            Objective::Constant(c) => *c,
            Objective::Revenue => pass.payments.iter().sum(),
            Objective::Payment(i) => pass.payments[*i],
            Objective::Utility { bidder, valuation } => {
                let z = &pass.probs[bidder * pass.m..(bidder + 1) * pass.m];
                let value: f64 = valuation.iter().zip(z).map(|(v, p)| v * p).sum();
                value - pass.payments[*bidder]
            }
            Objective::Combination(parts) => parts.iter().map(|(w, o)| w * o.value(pass)).sum(),
        }
    }

    /// Adds `scale * d(objective)/d(z, payments)` into the adjoint buffers.
    fn accumulate(&self, scale: f64, m: usize, dz: &mut [f64], dpay: &mut [f64]) {
        match self {
            Objective::Constant(_) => {}
            Objective::Revenue => dpay.iter_mut().for_each(|d| *d += scale),
            Objective::Payment(i) => dpay[*i] += scale,
            Objective::Utility { bidder, valuation } => {
                for (d, v) in dz[bidder * m..(bidder + 1) * m].iter_mut().zip(valuation) {
                    *d += scale * v;
                }
                dpay[*bidder] -= scale;
            }
            Objective::Combination(parts) => {
                for (w, o) in parts {
                    o.accumulate(scale * w, m, dz, dpay);
                }
            }
        }
    }
}

fn check_bidder(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::Index {
            what: "bidder",
            index: i,
            len: n,
        });
    }
    Ok(())
}

struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

fn mlp_forward(
    flat: &[f64],
    layers: &[LayerSpec],
    act: Activation,
    x: &[f64],
) -> (Vec<f64>, MlpCache) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut h = x.to_vec();
    let last = layers.len() - 1;
    for (k, spec) in layers.iter().enumerate() {
        let w = spec.weights(flat);
        let mut a = spec.bias(flat).to_vec();
        for (r, out) in a.iter_mut().enumerate() {
            let row = &w[r * spec.inputs..(r + 1) * spec.inputs];
            *out += row.iter().zip(&h).map(|(wi, hi)| wi * hi).sum::<f64>();
        }
        inputs.push(std::mem::take(&mut h));
        if k == last {
            h = a;
        } else {
            h = a.iter().map(|&x| act.apply(x)).collect();
            pre.push(a);
        }
    }
    (h, MlpCache { inputs, pre })
}

/// Backpropagates `d_out` through the network. Parameter gradients are
/// accumulated into `grad` when given; returns the input gradient.
fn mlp_backward(
    flat: &[f64],
    layers: &[LayerSpec],
    act: Activation,
    cache: &MlpCache,
    d_out: Vec<f64>,
    mut grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut delta = d_out;
    for (k, spec) in layers.iter().enumerate().rev() {
        if k < layers.len() - 1 {
            // `delta` currently holds d/d(output of hidden layer k).
            let a = &cache.pre[k];
            let h = &cache.inputs[k + 1];
            for ((d, &x), &y) in delta.iter_mut().zip(a).zip(h) {
                *d *= act.derivative(x, y);
            }
        }
        let input = &cache.inputs[k];
        let w = spec.weights(flat);
        if let Some(g) = grad.as_deref_mut() {
            let (gw, gb) =
                g[spec.offset..spec.offset + spec.len()].split_at_mut(spec.inputs * spec.outputs);
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                for (gwi, hi) in gw[r * spec.inputs..(r + 1) * spec.inputs]
                    .iter_mut()
                    .zip(input)
                {
                    *gwi += d * hi;
                }
            }
        }
        let mut prev = vec![0.0; spec.inputs];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (p, wi) in prev
                .iter_mut()
                .zip(&w[r * spec.inputs..(r + 1) * spec.inputs])
            {
                *p += d * wi;
            }
        }
        delta = prev;
    }
    delta
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct ForwardPass {
    n: usize,
    m: usize,
    alloc_cache: MlpCache,
    pay_cache: MlpCache,
    /// Softmax output, slot-major `(n + 1) x m`; the first `n * m` entries
    /// are the bidder allocation.
    probs: Vec<f64>,
    alpha: Vec<f64>,
    /// Reported value of each bidder's allocation.
    alloc_value: Vec<f64>,
    payments: Vec<f64>,
}

fn forward(w: &AuctionParams, b: &BidProfile) -> Result<ForwardPass> {
    let cfg = &w.config;
    if b.n() != cfg.n || b.m() != cfg.m {
        return Err(Error::Dimension {
            what: "bid profile size (n*m)",
            expected: cfg.n * cfg.m,
            got: b.n() * b.m(),
        });
    }
    let (n, m) = (cfg.n, cfg.m);
    let layout = cfg.layout();
    let x = b.values();

    let (logits, alloc_cache) = mlp_forward(&w.flat, &layout.allocation, cfg.activation, x);
    let mut probs = logits;
    for j in 0..m {
        let max = (0..=n)
            .map(|k| probs[k * m + j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..=n {
            let e = (probs[k * m + j] - max).exp();
            probs[k * m + j] = e;
            total += e;
        }
        for k in 0..=n {
            probs[k * m + j] /= total;
        }
    }

    let (pay_logits, pay_cache) = mlp_forward(&w.flat, &layout.payment, cfg.activation, x);
    let alpha: Vec<f64> = pay_logits.into_iter().map(sigmoid).collect();
    let alloc_value: Vec<f64> = (0..n)
        .map(|i| {
            b.row(i)
                .iter()
                .zip(&probs[i * m..(i + 1) * m])
                .map(|(bij, zij)| bij * zij)
                .sum()
        })
        .collect();
    let payments: Vec<f64> = alpha.iter().zip(&alloc_value).map(|(a, v)| a * v).collect();

    if probs.iter().chain(&payments).any(|x| !x.is_finite()) {
        let (alloc_norm, pay_norm) = w.head_norms();
        return Err(Error::NonFinite {
            alloc_norm,
            pay_norm,
        });
    }
    Ok(ForwardPass {
        n,
        m,
        alloc_cache,
        pay_cache,
        probs,
        alpha,
        alloc_value,
        payments,
    })
}

impl ForwardPass {
    fn allocation(&self) -> Allocation {
        Allocation {
            n: self.n,
            m: self.m,
            z: self.probs[..self.n * self.m].to_vec(),
        }
    }

    /// Reverse pass from adjoints on `(z, payments)`. Returns the gradient
    /// with respect to the bids and, if requested, the parameters.
    fn backward(
        &self,
        w: &AuctionParams,
        b: &BidProfile,
        mut dz: Vec<f64>,
        dpay: &[f64],
        want_params: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let (n, m) = (self.n, self.m);
        let cfg = &w.config;
        let layout = cfg.layout();
        let mut db = vec![0.0; n * m];
        let mut dalpha = vec![0.0; n];

        // payment_i = alpha_i * sum_j z_ij b_ij
        for i in 0..n {
            dalpha[i] = dpay[i] * self.alloc_value[i];
            let ds = dpay[i] * self.alpha[i];
            for j in 0..m {
                dz[i * m + j] += ds * b.get(i, j);
                db[i * m + j] += ds * self.probs[i * m + j];
            }
        }

        // Per-item softmax over n + 1 slots; the unsold slot has no adjoint.
        let mut dlogits = vec![0.0; (n + 1) * m];
        for j in 0..m {
            let inner: f64 = (0..n).map(|i| self.probs[i * m + j] * dz[i * m + j]).sum();
            for k in 0..=n {
                let upstream = if k < n { dz[k * m + j] } else { 0.0 };
                dlogits[k * m + j] = self.probs[k * m + j] * (upstream - inner);
            }
        }
        let dpay_logits: Vec<f64> = dalpha
            .iter()
            .zip(&self.alpha)
            .map(|(d, a)| d * a * (1.0 - a))
            .collect();

        let mut grad = want_params.then(|| vec![0.0; w.flat.len()]);
        let dx_alloc = mlp_backward(
            &w.flat,
            &layout.allocation,
            cfg.activation,
            &self.alloc_cache,
            dlogits,
            grad.as_deref_mut(),
        );
        let dx_pay = mlp_backward(
            &w.flat,
            &layout.payment,
            cfg.activation,
            &self.pay_cache,
            dpay_logits,
            grad.as_deref_mut(),
        );
        for ((d, a), p) in db.iter_mut().zip(&dx_alloc).zip(&dx_pay) {
            *d += a + p;
        }
        (db, grad)
    }
}

/// Evaluates `objective` and its gradients at `(w, b)`: returns the value,
/// the bid gradient (`n * m`, bidder-major) and, if requested, the flat
/// parameter gradient.
pub fn evaluate_with_gradients(
    w: &AuctionParams,
    b: &BidProfile,
    objective: &Objective,
    want_params: bool,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    objective.validate(b.n(), b.m())?;
    let pass = forward(w, b)?;
    let value = objective.value(&pass);
    let mut dz = vec![0.0; pass.n * pass.m];
    let mut dpay = vec![0.0; pass.n];
    objective.accumulate(1.0, pass.m, &mut dz, &mut dpay);
    let (db, grad) = pass.backward(w, b, dz, &dpay, want_params);
    let finite = value.is_finite()
        && db.iter().all(|x| x.is_finite())
        && grad
            .as_ref()
            .is_none_or(|g| g.iter().all(|x| x.is_finite()));
    if !finite {
        let (alloc_norm, pay_norm) = w.head_norms();
        return Err(Error::NonFinite {
            alloc_norm,
            pay_norm,
        });
    }
    Ok((value, db, grad))
}

pub fn allocate(w: &AuctionParams, b: &BidProfile) -> Result<Allocation> {
    Ok(forward(w, b)?.allocation())
}

/// Payments `alpha_i(w, b) * sum_j z_ij b_ij` for an allocation `z`
/// produced from `(w, b)`.
pub fn pay(w: &AuctionParams, b: &BidProfile, z: &Allocation) -> Result<Vec<f64>> {
    let pass = forward(w, b)?;
    if z.n != b.n() || z.m != b.m() {
        return Err(Error::Dimension {
            what: "allocation size (n*m)",
            expected: b.n() * b.m(),
            got: z.n * z.m,
        });
    }
    Ok((0..b.n())
        .map(|i| {
            let value: f64 = b
                .row(i)
                .iter()
                .zip(z.row(i))
                .map(|(bij, zij)| bij * zij)
                .sum();
            pass.alpha[i] * value
        })
        .collect())
}

pub fn outcome(w: &AuctionParams, b: &BidProfile) -> Result<Outcome> {
    let pass = forward(w, b)?;
    Ok(Outcome {
        allocation: pass.allocation(),
        payments: pass.payments,
    })
}

/// Bidder `i`'s utility `v_i . z_i - p_i` when the reports are `b`.
pub fn utility(
    w: &AuctionParams,
    true_valuation_row: &[f64],
    b: &BidProfile,
    i: usize,
) -> Result<f64> {
    let objective = Objective::Utility {
        bidder: i,
        valuation: true_valuation_row.to_vec(),
    };
    objective.validate(b.n(), b.m())?;
    Ok(objective.value(&forward(w, b)?))
}

pub fn revenue(w: &AuctionParams, b: &BidProfile) -> Result<f64> {
    Ok(forward(w, b)?.payments.iter().sum())
}

/// Gradient of `objective` with respect to the flat parameters at fixed bids.
pub fn grad_params(w: &AuctionParams, b: &BidProfile, objective: &Objective) -> Result<Vec<f64>> {
    let (_, _, grad) = evaluate_with_gradients(w, b, objective, true)?;
    Ok(grad.expect("parameter gradient requested"))
}

/// Gradient of bidder `i`'s utility (under `v_true_row`) with respect to its
/// own reported row of `b`.
pub fn grad_misreport(
    w: &AuctionParams,
    v_true_row: &[f64],
    b: &BidProfile,
    i: usize,
) -> Result<Vec<f64>> {
    let objective = Objective::Utility {
        bidder: i,
        valuation: v_true_row.to_vec(),
    };
    let (_, db, _) = evaluate_with_gradients(w, b, &objective, false)?;
    let m = b.m();
    Ok(db[i * m..(i + 1) * m].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_net(n: usize, m: usize) -> AuctionParams {
        AuctionParams::zeros(NetworkConfig::new(n, m).with_hidden(1, 4)).unwrap()
    }

    fn random_profile(rng: &mut ChaCha8Rng, n: usize, m: usize) -> BidProfile {
        BidProfile::new(
            n,
            m,
            (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = NetworkConfig::new(3, 2);
        let a = init_params(&cfg, 11).unwrap();
        assert_eq!(a, init_params(&cfg, 11).unwrap());
        assert_ne!(a, init_params(&cfg, 12).unwrap());
        let s = a.to_structured();
        for layer in s.allocation.iter().chain(&s.payment) {
            assert!(layer.bias.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn init_scale_matches_fan_in_rule() {
        // First allocation layer of a 10x10 net with width 128 has 12800 weights.
        let cfg = NetworkConfig::new(10, 10).with_hidden(1, 128);
        let s = init_params(&cfg, 3).unwrap().to_structured();
        let w = &s.allocation[0].weights;
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = cfg.init_std(100);
        assert!(
            (std - target).abs() <= 0.2 * target,
            "std {std} target {target}"
        );
    }

    #[test]
    fn zero_weights_give_uniform_allocation() {
        let w = zero_net(3, 2);
        let b = BidProfile::from_rows(&[[0.2, 0.9], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        let z = allocate(&w, &b).unwrap();
        assert!(z.values().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_weight_single_bidder_hand_values() {
        // alpha = 0.5; z = 1/2 per item; p = 0.5 * (0.5 + 0.5) = 0.5
        let w = zero_net(1, 2);
        let b = BidProfile::from_rows(&[[1.0, 1.0]]).unwrap();
        let z = allocate(&w, &b).unwrap();
        assert_eq!(z.values(), &[0.5, 0.5]);
        assert_eq!(pay(&w, &b, &z).unwrap(), vec![0.5]);

        // u = 0.5*1 - 0.5*0.5*1 = 0.25
        let w = zero_net(1, 1);
        let b = BidProfile::from_rows(&[[1.0]]).unwrap();
        assert!((utility(&w, &[1.0], &b, 0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_bids_pay_nothing() {
        let w = init_params(&NetworkConfig::new(3, 3), 5).unwrap();
        let b = BidProfile::zeros(3, 3).unwrap();
        let o = outcome(&w, &b).unwrap();
        assert!(o.payments.iter().all(|p| *p == 0.0));
        assert_eq!(revenue(&w, &b).unwrap(), 0.0);
    }

    #[test]
    fn zero_valuation_utility_is_negative_payment() {
        let w = init_params(&NetworkConfig::new(2, 2), 8).unwrap();
        let b = BidProfile::from_rows(&[[0.7, 0.4], [0.3, 0.9]]).unwrap();
        let o = outcome(&w, &b).unwrap();
        let u = utility(&w, &[0.0, 0.0], &b, 1).unwrap();
        assert_eq!(u, -o.payments[1]);
        assert!(u <= 0.0);
    }

    #[test]
    fn feasibility_and_ir_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..200 {
            let (n, m) = (rng.random_range(1..5), rng.random_range(1..4));
            let mut cfg = NetworkConfig::new(n, m).with_hidden(rng.random_range(1..3), 8);
            cfg.init_gain = rng.random_range(0.0..4.0);
            let w = init_params(&cfg, case).unwrap();
            let b = random_profile(&mut rng, n, m);
            let o = outcome(&w, &b).unwrap();
            assert!(o.allocation.is_feasible());
            assert!(o.is_ir_for(&b));
            for i in 0..n {
                assert!(utility(&w, b.row(i), &b, i).unwrap() >= -IR_TOL);
            }
        }
    }

    #[test]
    fn flat_structured_round_trip() {
        let cfg = NetworkConfig::new(2, 3).with_hidden(2, 5);
        let w = init_params(&cfg, 4).unwrap();
        let s = w.to_structured();
        assert_eq!(s.allocation.len(), 3);
        assert_eq!(s.allocation[2].outputs, 9);
        assert_eq!(s.payment[2].outputs, 2);
        assert_eq!(AuctionParams::from_structured(cfg, &s).unwrap(), w);
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = NetworkConfig::new(2, 2).with_hidden(1, 3);
        let w = init_params(&cfg, 4).unwrap();
        let json = serde_json::to_string(&w.snapshot(4)).unwrap();
        assert!(json.contains("\"format_version\":1"));
        let back: ParamsSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_params().unwrap(), w);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let w = init_params(&NetworkConfig::new(2, 2).with_hidden(1, 6), 2).unwrap();
        let b = BidProfile::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let g = grad_params(&w, &b, &Objective::Constant(3.0)).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_objective() {
        let w = init_params(&NetworkConfig::new(2, 2).with_hidden(2, 6), 2).unwrap();
        let b = BidProfile::from_rows(&[[0.1, 0.8], [0.6, 0.4]]).unwrap();
        let u = Objective::Utility {
            bidder: 1,
            valuation: vec![0.3, 0.9],
        };
        let sum = Objective::Combination(vec![(1.0, Objective::Revenue), (1.0, u.clone())]);
        let g_sum = grad_params(&w, &b, &sum).unwrap();
        let g_rev = grad_params(&w, &b, &Objective::Revenue).unwrap();
        let g_u = grad_params(&w, &b, &u).unwrap();
        for k in 0..g_sum.len() {
            assert!((g_sum[k] - g_rev[k] - g_u[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_errors() {
        let w = zero_net(2, 2);
        let b = BidProfile::zeros(3, 2).unwrap();
        assert!(matches!(allocate(&w, &b), Err(Error::Dimension { .. })));
        let b = BidProfile::zeros(2, 2).unwrap();
        assert!(matches!(
            utility(&w, &[0.0], &b, 0),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            utility(&w, &[0.0, 0.0], &b, 2),
            Err(Error::Index { .. })
        ));
        assert!(AuctionParams::from_flat(w.config().clone(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn huge_weights_do_not_break_feasibility() {
        let cfg = NetworkConfig::new(2, 2).with_hidden(1, 4);
        let d = cfg.param_count();
        let w = AuctionParams::from_flat(cfg, vec![1e150; d]).unwrap();
        let b = BidProfile::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        // Saturated logits are all equal, the softmax stays well defined.
        match outcome(&w, &b) {
            Ok(o) => assert!(o.allocation.is_feasible()),
            Err(Error::NonFinite { alloc_norm, .. }) => assert!(alloc_norm > 0.0),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
