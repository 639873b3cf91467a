//! A small message-passing network with exact analytic gradients.
//!
//! One layer updates the per-node state `h_i` (initially the standardized
//! covariates) with two single-layer perceptrons: an aggregation transform
//! and a combine step,
//!
//! ```text
//! a_i  = concat( mean, max, sum over { h_j : j in N(i) } )   (zeros when isolated)
//! u_i  = act( W1 [h_i ; a_i] + b1 )
//! h'_i = act( W0 [h_i ; u_i] + b0 )
//! ```
//!
//! followed after the last layer by a scalar linear head. Multi-statistic
//! aggregation follows Hamilton et al. (2017) and Corso et al. (2020); the
//! mean-only variant is selectable. Depth `L` controls how many hops of the
//! graph influence a prediction: a node's output depends on covariates at
//! most `L` hops away, and relabeling the nodes permutes the outputs
//! bit-for-bit (mean and sum accumulate their summands in value order, so no
//! floating-point reordering leaks through).
//!
//! Training is deterministic full-batch gradient descent from a seeded
//! initialization, with backtracking: a step that raises the loss is
//! rejected and the step size halved, so the recorded loss path is
//! monotone. Gradients come from reverse-mode differentiation of the exact
//! forward computation; the finite-difference suite in the integration tests
//! checks them against central differences.
//!
//! Input and (for squared loss) target standardization are part of the
//! trained parameters: `gnn_forward` applies the stored affine maps, so a
//! trained model predicts on the original data scale while freshly
//! constructed parameters (identity scalers) map all-zero weights to
//! all-zero outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest supported number of message-passing layers.
pub const MAX_LAYERS: usize = 3;
/// Largest supported hidden width.
pub const MAX_HIDDEN: usize = 8;

/// Elementwise activation for both perceptrons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Rectifier `max(z, 0)`; the subgradient at zero is taken as zero.
    Relu,
    /// Identity (used by hand-computed gradient checks).
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Which neighbor statistics the aggregation step concatenates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorSet {
    /// `[mean ; max ; sum]`, three blocks.
    MeanMaxSum,
    /// Mean only, one block.
    Mean,
}

impl AggregatorSet {
    /// Number of concatenated statistic blocks.
    pub fn blocks(self) -> usize {
        match self {
            AggregatorSet::MeanMaxSum => 3,
            AggregatorSet::Mean => 1,
        }
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnLoss {
    /// Mean `-y f + log(1 + exp(f))` over the fitting rows; predictions are
    /// probabilities after a sigmoid.
    Logistic,
    /// Mean `0.5 (f - y)^2` over the fitting rows.
    Square,
}

/// Parameters of one message-passing layer.
///
/// With input dimension `d`, hidden width `h`, and `A` aggregation blocks:
/// `w1` is `h x (d + A d)` row-major, `w0` is `h x (d + h)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer {
    /// Aggregation transform weights.
    pub w1: Vec<f64>,
    /// Aggregation transform bias.
    pub b1: Vec<f64>,
    /// Combine weights.
    pub w0: Vec<f64>,
    /// Combine bias.
    pub b0: Vec<f64>,
}

/// Full parameter set of the network, including the affine input/output
/// maps learned during training (identity on fresh parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    /// Covariate dimension the network expects.
    pub p_in: usize,
    /// Hidden width.
    pub hidden: usize,
    /// Message-passing layers, outermost first.
    pub layers: Vec<GnnLayer>,
    /// Linear head weights, length `hidden`.
    pub head_w: Vec<f64>,
    /// Linear head bias.
    pub head_b: f64,
    /// Activation used by both perceptrons.
    pub activation: Activation,
    /// Aggregation statistics.
    pub aggregators: AggregatorSet,
    /// Per-column input shift, length `p_in`.
    pub input_loc: Vec<f64>,
    /// Per-column input scale, length `p_in`.
    pub input_scale: Vec<f64>,
    /// Output shift applied after the head.
    pub output_loc: f64,
    /// Output scale applied after the head.
    pub output_scale: f64,
}

impl GnnParams {
    /// All-zero parameters with identity scalers. With these, every
    /// prediction is exactly zero.
    pub fn zeros(
        p_in: usize,
        layers: usize,
        hidden: usize,
        activation: Activation,
        aggregators: AggregatorSet,
    ) -> Result<Self> {
        check_arch(p_in, layers, hidden)?;
        let blocks = aggregators.blocks();
        let layer_params = (0..layers)
            .map(|l| {
                let d = if l == 0 { p_in } else { hidden };
                GnnLayer {
                    w1: vec![0.0; hidden * (d + blocks * d)],
                    b1: vec![0.0; hidden],
                    w0: vec![0.0; hidden * (d + hidden)],
                    b0: vec![0.0; hidden],
                }
            })
            .collect();
        Ok(GnnParams {
            p_in,
            hidden,
            layers: layer_params,
            head_w: vec![0.0; hidden],
            head_b: 0.0,
            activation,
            aggregators,
            input_loc: vec![0.0; p_in],
            input_scale: vec![1.0; p_in],
            output_loc: 0.0,
            output_scale: 1.0,
        })
    }

    /// Seeded uniform initialization with Glorot scaling per weight matrix;
    /// biases start at zero, scalers at identity.
    pub fn init(
        p_in: usize,
        layers: usize,
        hidden: usize,
        activation: Activation,
        aggregators: AggregatorSet,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(p_in, layers, hidden, activation, aggregators)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |w: &mut [f64], rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-a..a);
            }
        };
        let blocks = params.aggregators.blocks();
        for l in 0..params.layers.len() {
            let d = if l == 0 { p_in } else { hidden };
            let layer = &mut params.layers[l];
            fill(&mut layer.w1, hidden, d + blocks * d, &mut rng);
            fill(&mut layer.w0, hidden, d + hidden, &mut rng);
        }
        let mut head = std::mem::take(&mut params.head_w);
        fill(&mut head, 1, hidden, &mut rng);
        params.head_w = head;
        Ok(params)
    }

    /// Total number of trainable scalars (scalers excluded).
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w1.len() + l.b1.len() + l.w0.len() + l.b0.len())
            .sum::<usize>()
            + self.head_w.len()
            + 1
    }

    /// Flattens trainable parameters in a fixed order: per layer `w1, b1,
    /// w0, b0`, then `head_w`, then `head_b`. Gradient vectors use the same
    /// layout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w1);
            out.extend_from_slice(&l.b1);
            out.extend_from_slice(&l.w0);
            out.extend_from_slice(&l.b0);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    /// Overwrites trainable parameters from a flat vector in [`to_flat`]
    /// order.
    ///
    /// [`to_flat`]: GnnParams::to_flat
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                what: "flat parameter vector",
                got: flat.len(),
                expected: self.n_params(),
            });
        }
        let mut k = 0;
        let take = |dst: &mut [f64], k: &mut usize| {
            dst.copy_from_slice(&flat[*k..*k + dst.len()]);
            *k += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.w1, &mut k);
            take(&mut l.b1, &mut k);
            take(&mut l.w0, &mut k);
            take(&mut l.b0, &mut k);
        }
        take(&mut self.head_w, &mut k);
        self.head_b = flat[k];
        Ok(())
    }
}

fn check_arch(p_in: usize, layers: usize, hidden: usize) -> Result<()> {
    if p_in == 0 {
        return Err(Error::InvalidConfig("gnn input dimension must be positive".into()));
    }
    if layers == 0 || layers > MAX_LAYERS {
        return Err(Error::InvalidConfig(format!(
            "gnn layers must be in 1..={MAX_LAYERS}, got {layers}"
        )));
    }
    if hidden == 0 || hidden > MAX_HIDDEN {
        return Err(Error::InvalidConfig(format!(
            "gnn hidden width must be in 1..={MAX_HIDDEN}, got {hidden}"
        )));
    }
    Ok(())
}

/// Per-layer forward cache used by the backward pass.
struct LayerCache {
    /// Layer input, `n x d`.
    input: Vec<f64>,
    /// Aggregated neighbor statistics, `n x (blocks * d)`.
    agg: Vec<f64>,
    /// Neighbor attaining the max, per `(node, dim)`; `usize::MAX` marks an
    /// isolated node. Empty under mean-only aggregation.
    argmax: Vec<usize>,
    /// Pre-activation of the aggregation transform, `n x h`.
    u_pre: Vec<f64>,
    /// Post-activation of the aggregation transform, `n x h`.
    u: Vec<f64>,
    /// Pre-activation of the combine step, `n x h`.
    h_pre: Vec<f64>,
    /// Layer output, `n x h`.
    output: Vec<f64>,
}

fn validate_forward_inputs(params: &GnnParams, graph: &Graph, x: &[f64], p: usize) -> Result<()> {
    check_arch(params.p_in, params.layers.len(), params.hidden)?;
    if p != params.p_in {
        return Err(Error::InvalidConfig(format!(
            "gnn expects {} input columns, got {p}",
            params.p_in
        )));
    }
    if x.len() != graph.n() * p {
        return Err(Error::LengthMismatch {
            what: "gnn input matrix",
            got: x.len(),
            expected: graph.n() * p,
        });
    }
    for (row, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "gnn inputs",
                row: row / p.max(1),
            });
        }
    }
    Ok(())
}

/// Sums `values` in ascending value order. The result depends only on the
/// multiset of values, which makes aggregation invariant to node relabeling
/// at the bit level.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

fn aggregate(
    graph: &Graph,
    input: &[f64],
    d: usize,
    aggregators: AggregatorSet,
) -> (Vec<f64>, Vec<usize>) {
    let n = graph.n();
    let blocks = aggregators.blocks();
    let use_max = matches!(aggregators, AggregatorSet::MeanMaxSum);
    let mut agg = vec![0.0; n * blocks * d];
    let mut argmax = if use_max {
        vec![usize::MAX; n * d]
    } else {
        Vec::new()
    };
    let mut scratch: Vec<f64> = Vec::new();
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let inv_deg = 1.0 / nbrs.len() as f64;
        for c in 0..d {
            scratch.clear();
            let mut best = f64::NEG_INFINITY;
            let mut best_j = usize::MAX;
            for &j in nbrs {
                let v = input[j * d + c];
                scratch.push(v);
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            let total = sorted_sum(&mut scratch);
            let row = &mut agg[i * blocks * d..(i + 1) * blocks * d];
            match aggregators {
                AggregatorSet::MeanMaxSum => {
                    row[c] = total * inv_deg;
                    row[d + c] = best;
                    row[2 * d + c] = total;
                }
                AggregatorSet::Mean => {
                    row[c] = total * inv_deg;
                }
            }
            if use_max {
                argmax[i * d + c] = best_j;
            }
        }
    }
    (agg, argmax)
}

/// Runs the full forward pass, returning layer caches and the raw head
/// output `f` (before the output affine map).
fn forward_cached(
    params: &GnnParams,
    graph: &Graph,
    x: &[f64],
    p: usize,
) -> (Vec<LayerCache>, Vec<f64>) {
    let n = graph.n();
    let h = params.hidden;
    let blocks = params.aggregators.blocks();
    let act = params.activation;

    // Standardized input block.
    let mut current: Vec<f64> = (0..n * p)
        .map(|k| (x[k] - params.input_loc[k % p]) / params.input_scale[k % p])
        .collect();

    let mut caches = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let d = if l == 0 { p } else { h };
        let (agg, argmax) = aggregate(graph, &current, d, params.aggregators);
        let in1 = d + blocks * d;
        let in0 = d + h;
        let mut u_pre = vec![0.0; n * h];
        let mut u = vec![0.0; n * h];
        let mut h_pre = vec![0.0; n * h];
        let mut output = vec![0.0; n * h];
        for i in 0..n {
            let own = &current[i * d..(i + 1) * d];
            let arow = &agg[i * blocks * d..(i + 1) * blocks * d];
            for k in 0..h {
                let w = &layer.w1[k * in1..(k + 1) * in1];
                let mut z = layer.b1[k];
                for (c, &v) in own.iter().enumerate() {
                    z += w[c] * v;
                }
                for (c, &v) in arow.iter().enumerate() {
                    z += w[d + c] * v;
                }
                u_pre[i * h + k] = z;
                u[i * h + k] = act.apply(z);
            }
            let urow = &u[i * h..(i + 1) * h];
            for k in 0..h {
                let w = &layer.w0[k * in0..(k + 1) * in0];
                let mut z = layer.b0[k];
                for (c, &v) in own.iter().enumerate() {
                    z += w[c] * v;
                }
                for (c, &v) in urow.iter().enumerate() {
                    z += w[d + c] * v;
                }
                h_pre[i * h + k] = z;
                output[i * h + k] = act.apply(z);
            }
        }
        caches.push(LayerCache {
            input: std::mem::replace(&mut current, output.clone()),
            agg,
            argmax,
            u_pre,
            u,
            h_pre,
            output,
        });
    }

    let f: Vec<f64> = (0..n)
        .map(|i| {
            let hrow = &current[i * h..(i + 1) * h];
            params.head_b
                + hrow
                    .iter()
                    .zip(&params.head_w)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    (caches, f)
}

/// Deterministic forward pass: predictions for every node, on the output
/// scale stored in `params` (`f * output_scale + output_loc`).
///
/// For a logistic-trained network this is the logit; apply [`sigmoid`] for
/// probabilities.
///
/// [`sigmoid`]: crate::nuisance::glm::sigmoid
pub fn gnn_forward(params: &GnnParams, graph: &Graph, x: &[f64], p: usize) -> Result<Vec<f64>> {
    validate_forward_inputs(params, graph, x, p)?;
    let (_, f) = forward_cached(params, graph, x, p);
    Ok(f.into_iter()
        .map(|v| v * params.output_scale + params.output_loc)
        .collect())
}

fn loss_and_df(f: &[f64], y: &[f64], mask: &[bool], loss: GnnLoss) -> (f64, Vec<f64>) {
    let m = mask.iter().filter(|&&b| b).count() as f64;
    let mut total = 0.0;
    let mut df = vec![0.0; f.len()];
    for i in 0..f.len() {
        if !mask[i] {
            continue;
        }
        match loss {
            GnnLoss::Logistic => {
                let z = f[i];
                let sp = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                total += -y[i] * z + sp;
                df[i] = (crate::nuisance::glm::sigmoid(z) - y[i]) / m;
            }
            GnnLoss::Square => {
                let r = f[i] - y[i];
                total += 0.5 * r * r;
                df[i] = r / m;
            }
        }
    }
    (total / m, df)
}

fn full_mask(n: usize) -> Vec<bool> {
    vec![true; n]
}

fn validate_targets(
    n: usize,
    y: &[f64],
    mask: Option<&[bool]>,
    loss: GnnLoss,
) -> Result<Vec<bool>> {
    if y.len() != n {
        return Err(Error::LengthMismatch {
            what: "gnn targets",
            got: y.len(),
            expected: n,
        });
    }
    let mask = match mask {
        Some(m) => {
            if m.len() != n {
                return Err(Error::LengthMismatch {
                    what: "gnn mask",
                    got: m.len(),
                    expected: n,
                });
            }
            m.to_vec()
        }
        None => full_mask(n),
    };
    if !mask.iter().any(|&b| b) {
        return Err(Error::InvalidData("gnn mask selects no rows".into()));
    }
    for (row, (&v, &keep)) in y.iter().zip(&mask).enumerate() {
        if !keep {
            continue;
        }
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "gnn targets",
                row,
            });
        }
        if loss == GnnLoss::Logistic && v != 0.0 && v != 1.0 {
            return Err(Error::InvalidData(format!(
                "logistic targets must be 0 or 1, got {v} at row {row}"
            )));
        }
    }
    Ok(mask)
}

/// Training objective at the given parameters: the masked mean loss of the
/// raw head output against `y`. The output affine map is not applied; the
/// trainer standardizes targets instead.
pub fn gnn_loss(
    params: &GnnParams,
    graph: &Graph,
    x: &[f64],
    p: usize,
    y: &[f64],
    mask: Option<&[bool]>,
    loss: GnnLoss,
) -> Result<f64> {
    validate_forward_inputs(params, graph, x, p)?;
    let mask = validate_targets(graph.n(), y, mask, loss)?;
    let (_, f) = forward_cached(params, graph, x, p);
    Ok(loss_and_df(&f, y, &mask, loss).0)
}

/// Per-layer gradient blocks `(w1, b1, w0, b0)`.
type LayerGrads = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Reverse-mode gradient of [`gnn_loss`] with respect to every trainable
/// parameter, in [`GnnParams::to_flat`] order. Returns `(loss, gradient)`.
pub fn gnn_backward(
    params: &GnnParams,
    graph: &Graph,
    x: &[f64],
    p: usize,
    y: &[f64],
    mask: Option<&[bool]>,
    loss: GnnLoss,
) -> Result<(f64, Vec<f64>)> {
    validate_forward_inputs(params, graph, x, p)?;
    let n = graph.n();
    let mask = validate_targets(n, y, mask, loss)?;
    let h = params.hidden;
    let blocks = params.aggregators.blocks();
    let act = params.activation;

    let (caches, f) = forward_cached(params, graph, x, p);
    let (loss_value, df) = loss_and_df(&f, y, &mask, loss);

    // Head gradients.
    let last = caches.last().expect("at least one layer");
    let mut d_head_w = vec![0.0; h];
    let mut d_head_b = 0.0;
    let mut g_h = vec![0.0; n * h];
    for i in 0..n {
        let g = df[i];
        if g != 0.0 {
            let hrow = &last.output[i * h..(i + 1) * h];
            for k in 0..h {
                d_head_w[k] += g * hrow[k];
                g_h[i * h + k] = g * params.head_w[k];
            }
            d_head_b += g;
        }
    }

    // Layer gradients, collected innermost-last and reassembled at the end.
    let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let cache = &caches[l];
        let d = if l == 0 { p } else { h };
        let in1 = d + blocks * d;
        let in0 = d + h;
        let mut dw1 = vec![0.0; h * in1];
        let mut db1 = vec![0.0; h];
        let mut dw0 = vec![0.0; h * in0];
        let mut db0 = vec![0.0; h];
        let mut g_input = vec![0.0; n * d];

        for i in 0..n {
            let own = &cache.input[i * d..(i + 1) * d];
            let urow = &cache.u[i * h..(i + 1) * h];
            let arow = &cache.agg[i * blocks * d..(i + 1) * blocks * d];

            // Combine step.
            let mut g_u = vec![0.0; h];
            for k in 0..h {
                let g_out = g_h[i * h + k];
                if g_out == 0.0 {
                    continue;
                }
                let g_pre = g_out * act.derivative(cache.h_pre[i * h + k]);
                if g_pre == 0.0 {
                    continue;
                }
                db0[k] += g_pre;
                let wrow = &layer.w0[k * in0..(k + 1) * in0];
                let dwrow = &mut dw0[k * in0..(k + 1) * in0];
                for c in 0..d {
                    dwrow[c] += g_pre * own[c];
                    g_input[i * d + c] += g_pre * wrow[c];
                }
                for c in 0..h {
                    dwrow[d + c] += g_pre * urow[c];
                    g_u[c] += g_pre * wrow[d + c];
                }
            }

            // Aggregation transform.
            let mut g_agg = vec![0.0; blocks * d];
            for k in 0..h {
                if g_u[k] == 0.0 {
                    continue;
                }
                let g_pre = g_u[k] * act.derivative(cache.u_pre[i * h + k]);
                if g_pre == 0.0 {
                    continue;
                }
                db1[k] += g_pre;
                let wrow = &layer.w1[k * in1..(k + 1) * in1];
                let dwrow = &mut dw1[k * in1..(k + 1) * in1];
                for c in 0..d {
                    dwrow[c] += g_pre * own[c];
                    g_input[i * d + c] += g_pre * wrow[c];
                }
                for c in 0..blocks * d {
                    dwrow[d + c] += g_pre * arow[c];
                    g_agg[c] += g_pre * wrow[d + c];
                }
            }

            // Scatter aggregation gradients to neighbors.
            let nbrs = graph.neighbors(i);
            if nbrs.is_empty() {
                continue;
            }
            let inv_deg = 1.0 / nbrs.len() as f64;
            match params.aggregators {
                AggregatorSet::MeanMaxSum => {
                    for c in 0..d {
                        let g_mean = g_agg[c];
                        let g_max = g_agg[d + c];
                        let g_sum = g_agg[2 * d + c];
                        if g_mean != 0.0 || g_sum != 0.0 {
                            let shared = g_mean * inv_deg + g_sum;
                            for &j in nbrs {
                                g_input[j * d + c] += shared;
                            }
                        }
                        if g_max != 0.0 {
                            let j = cache.argmax[i * d + c];
                            g_input[j * d + c] += g_max;
                        }
                    }
                }
                AggregatorSet::Mean => {
                    for c in 0..d {
                        let g_mean = g_agg[c];
                        if g_mean != 0.0 {
                            let shared = g_mean * inv_deg;
                            for &j in nbrs {
                                g_input[j * d + c] += shared;
                            }
                        }
                    }
                }
            }
        }

        layer_grads.push((dw1, db1, dw0, db0));
        g_h = g_input;
    }
    layer_grads.reverse();

    let mut flat = Vec::with_capacity(params.n_params());
    for (dw1, db1, dw0, db0) in &layer_grads {
        flat.extend_from_slice(dw1);
        flat.extend_from_slice(db1);
        flat.extend_from_slice(dw0);
        flat.extend_from_slice(db0);
    }
    flat.extend_from_slice(&d_head_w);
    flat.push(d_head_b);
    Ok((loss_value, flat))
}

/// Configuration for [`gnn_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnTrainConfig {
    /// Message-passing depth, in `1..=3`.
    pub layers: usize,
    /// Hidden width, in `1..=8`.
    pub hidden: usize,
    /// Gradient steps to attempt.
    pub epochs: usize,
    /// Initial step size.
    pub lr: f64,
    /// Initialization seed.
    pub seed: u64,
    /// Training objective.
    pub loss: GnnLoss,
    /// Activation.
    pub activation: Activation,
    /// Aggregation statistics.
    pub aggregators: AggregatorSet,
}

/// Diagnostics from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnTrainReport {
    /// Loss at the initial parameters.
    pub initial_loss: f64,
    /// Loss after the final accepted step.
    pub final_loss: f64,
    /// Gradient steps attempted.
    pub epochs_run: usize,
    /// Step-size halvings triggered by rejected steps.
    pub halvings: usize,
    /// Step size in effect when training stopped.
    pub final_lr: f64,
    /// Max-norm of the gradient at the final parameters.
    pub grad_norm: f64,
}

/// Trains a network by deterministic full-batch gradient descent with
/// backtracking step halving.
///
/// `mask`, when given, restricts the loss to the selected rows; predictions
/// are still produced for every node. For [`GnnLoss::Square`] the targets
/// are standardized over the fitting rows and the inverse map is stored in
/// the returned parameters, so `gnn_forward` predicts on the original
/// scale. For [`GnnLoss::Logistic`] the forward output is the logit.
pub fn gnn_train(
    graph: &Graph,
    x: &[f64],
    p: usize,
    y: &[f64],
    mask: Option<&[bool]>,
    config: &GnnTrainConfig,
) -> Result<(GnnParams, GnnTrainReport)> {
    let n = graph.n();
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gnn lr must be positive, got {}",
            config.lr
        )));
    }
    let mut params = GnnParams::init(
        p,
        config.layers,
        config.hidden,
        config.activation,
        config.aggregators,
        config.seed,
    )?;
    validate_forward_inputs(&params, graph, x, p)?;
    let mask_vec = validate_targets(n, y, mask, config.loss)?;

    // Input standardization over all rows; constant columns keep scale 1.
    for c in 0..p {
        let mean = (0..n).map(|i| x[i * p + c]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let v = x[i * p + c] - mean;
                v * v
            })
            .sum::<f64>()
            / n as f64;
        params.input_loc[c] = mean;
        params.input_scale[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    // Target standardization over the fitting rows (squared loss only).
    let mut targets = y.to_vec();
    if config.loss == GnnLoss::Square {
        let rows: Vec<usize> = (0..n).filter(|&i| mask_vec[i]).collect();
        let m = rows.len() as f64;
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
        let var = rows
            .iter()
            .map(|&i| {
                let v = y[i] - mean;
                v * v
            })
            .sum::<f64>()
            / m;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for t in targets.iter_mut() {
            *t = (*t - mean) / scale;
        }
        params.output_loc = mean;
        params.output_scale = scale;
    }

    let mut flat = params.to_flat();
    let (mut loss, mut grad) = gnn_backward(
        &params,
        graph,
        x,
        p,
        &targets,
        Some(&mask_vec),
        config.loss,
    )?;
    let initial_loss = loss;
    let mut lr = config.lr;
    let mut halvings = 0usize;
    let mut epochs_run = 0usize;
    let mut grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));

    'outer: for _ in 0..config.epochs {
        if grad_norm <= 1e-12 {
            break;
        }
        epochs_run += 1;
        // Backtracking: shrink the step until the loss is non-increasing.
        loop {
            let candidate: Vec<f64> = flat
                .iter()
                .zip(&grad)
                .map(|(v, g)| v - lr * g)
                .collect();
            params.set_from_flat(&candidate)?;
            let cand_loss = gnn_loss(
                &params,
                graph,
                x,
                p,
                &targets,
                Some(&mask_vec),
                config.loss,
            )?;
            if cand_loss <= loss {
                flat = candidate;
                loss = cand_loss;
                break;
            }
            halvings += 1;
            lr *= 0.5;
            if lr < 1e-15 {
                params.set_from_flat(&flat)?;
                break 'outer;
            }
        }
        let (_, g) = gnn_backward(
            &params,
            graph,
            x,
            p,
            &targets,
            Some(&mask_vec),
            config.loss,
        )?;
        grad = g;
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    }
    params.set_from_flat(&flat)?;

    Ok((
        params,
        GnnTrainReport {
            initial_loss,
            final_loss: loss,
            epochs_run,
            halvings,
            final_lr: lr,
            grad_norm,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_params_give_zero_outputs() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let params =
            GnnParams::zeros(2, 2, 4, Activation::Relu, AggregatorSet::MeanMaxSum).unwrap();
        let out = gnn_forward(&params, &g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_computed_gradient_single_node_identity() {
        // One isolated node, one layer, H = 1, identity activation. With
        // x = 2, w1 = [a, ...agg zeros], u = a x + b1,
        // h = c x + e u + b0, f = w f_h h + f_b, L = 0.5 (f - y)^2.
        let g = Graph::empty(1);
        let mut params =
            GnnParams::zeros(1, 1, 1, Activation::Identity, AggregatorSet::MeanMaxSum).unwrap();
        let (a, b1, c, e, b0, wh, bh) = (0.3, 0.1, -0.4, 0.7, 0.2, 1.5, -0.6);
        params.layers[0].w1 = vec![a, 0.0, 0.0, 0.0];
        params.layers[0].b1 = vec![b1];
        params.layers[0].w0 = vec![c, e];
        params.layers[0].b0 = vec![b0];
        params.head_w = vec![wh];
        params.head_b = bh;
        let x = 2.0;
        let y = 1.0;

        let u = a * x + b1;
        let hval = c * x + e * u + b0;
        let f = wh * hval + bh;
        let r = f - y;
        let (loss, grad) = gnn_backward(
            &params,
            &g,
            &[x],
            1,
            &[y],
            None,
            GnnLoss::Square,
        )
        .unwrap();
        assert_relative_eq!(loss, 0.5 * r * r, epsilon = 1e-14);

        // Chain rule by hand: dL/df = r, dL/dh = r*wh, dL/du = r*wh*e.
        let dh = r * wh;
        let du = dh * e;
        // Flat order: w1(4), b1(1), w0(2), b0(1), head_w(1), head_b(1).
        assert_relative_eq!(grad[0], du * x, epsilon = 1e-14); // d/da
        assert_relative_eq!(grad[1], 0.0, epsilon = 1e-14); // dead agg slot
        assert_relative_eq!(grad[4], du, epsilon = 1e-14); // d/db1
        assert_relative_eq!(grad[5], dh * x, epsilon = 1e-14); // d/dc
        assert_relative_eq!(grad[6], dh * u, epsilon = 1e-14); // d/de
        assert_relative_eq!(grad[7], dh, epsilon = 1e-14); // d/db0
        assert_relative_eq!(grad[8], r * hval, epsilon = 1e-14); // d/dwh
        assert_relative_eq!(grad[9], r, epsilon = 1e-14); // d/dbh
    }

    #[test]
    fn locality_matches_depth() {
        // Path 0-1-2-3: with L layers, node 0's prediction depends on nodes
        // at most L hops away; perturbing x at distance L+1 leaves it
        // unchanged, perturbing at distance L changes it.
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        for layers in 1..=3usize {
            // Identity activation: with random weights the map is linear
            // with generically nonzero coefficients, so dependence on every
            // hop within range is guaranteed rather than seed-dependent.
            let params = GnnParams::init(
                1,
                layers,
                3,
                Activation::Identity,
                AggregatorSet::MeanMaxSum,
                7,
            )
            .unwrap();
            let x = vec![0.5, -0.3, 0.8, 0.1];
            let base = gnn_forward(&params, &g, &x, 1).unwrap();
            if layers < 3 {
                let mut far = x.clone();
                far[layers + 1] += 10.0;
                let out = gnn_forward(&params, &g, &far, 1).unwrap();
                assert_eq!(out[0], base[0], "L={layers} leaked beyond {layers} hops");
            }
            let mut near = x.clone();
            near[layers] += 10.0;
            let out = gnn_forward(&params, &g, &near, 1).unwrap();
            assert_ne!(out[0], base[0], "L={layers} ignored hop {layers}");
        }
    }

    #[test]
    fn permutation_equivariance_is_bit_exact() {
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
        let g = Graph::from_edges(5, &edges).unwrap();
        let params =
            GnnParams::init(2, 2, 4, Activation::Relu, AggregatorSet::MeanMaxSum, 11).unwrap();
        let x: Vec<f64> = (0..10).map(|k| (k as f64) * 0.37 - 1.1).collect();
        let base = gnn_forward(&params, &g, &x, 2).unwrap();

        let perm = [3usize, 0, 4, 1, 2]; // new index of each old node
        let ped: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let gp = Graph::from_edges(5, &ped).unwrap();
        let mut xp = vec![0.0; 10];
        for old in 0..5 {
            xp[perm[old] * 2] = x[old * 2];
            xp[perm[old] * 2 + 1] = x[old * 2 + 1];
        }
        let out = gnn_forward(&params, &gp, &xp, 2).unwrap();
        for old in 0..5 {
            assert!(
                base[old] == out[perm[old]],
                "node {old}: {} != {}",
                base[old],
                out[perm[old]]
            );
        }
    }

    #[test]
    fn training_decreases_loss_and_is_deterministic() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let x = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let y = vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.1];
        let cfg = GnnTrainConfig {
            layers: 2,
            hidden: 4,
            epochs: 200,
            lr: 0.1,
            seed: 5,
            loss: GnnLoss::Square,
            activation: Activation::Relu,
            aggregators: AggregatorSet::MeanMaxSum,
        };
        let (params_a, report_a) = gnn_train(&g, &x, 1, &y, None, &cfg).unwrap();
        let (params_b, report_b) = gnn_train(&g, &x, 1, &y, None, &cfg).unwrap();
        assert!(report_a.final_loss < report_a.initial_loss);
        assert_eq!(params_a, params_b);
        assert_eq!(report_a.final_loss, report_b.final_loss);
        // Predictions come back on the original target scale.
        let pred = gnn_forward(&params_a, &g, &x, 1).unwrap();
        let mean_pred = pred.iter().sum::<f64>() / 6.0;
        assert!((mean_pred - 0.6).abs() < 0.3, "mean prediction {mean_pred}");
    }

    #[test]
    fn masked_training_ignores_off_mask_targets() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let mask = vec![true, true, false, false];
        let y_a = vec![1.0, 2.0, 0.0, 0.0];
        let y_b = vec![1.0, 2.0, 99.0, f64::NAN];
        let cfg = GnnTrainConfig {
            layers: 1,
            hidden: 2,
            epochs: 50,
            lr: 0.1,
            seed: 3,
            loss: GnnLoss::Square,
            activation: Activation::Relu,
            aggregators: AggregatorSet::MeanMaxSum,
        };
        // Off-mask targets (even non-finite ones) cannot influence the fit.
        let (pa, _) = gnn_train(&g, &x, 1, &y_a, Some(&mask), &cfg).unwrap();
        let (pb, _) = gnn_train(&g, &x, 1, &y_b, Some(&mask), &cfg).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn rejects_invalid_architecture_and_targets() {
        let g = Graph::empty(2);
        assert!(GnnParams::zeros(1, 0, 3, Activation::Relu, AggregatorSet::Mean).is_err());
        assert!(GnnParams::zeros(1, 4, 3, Activation::Relu, AggregatorSet::Mean).is_err());
        assert!(GnnParams::zeros(1, 2, 9, Activation::Relu, AggregatorSet::Mean).is_err());
        let cfg = GnnTrainConfig {
            layers: 1,
            hidden: 2,
            epochs: 10,
            lr: 0.1,
            seed: 0,
            loss: GnnLoss::Logistic,
            activation: Activation::Relu,
            aggregators: AggregatorSet::MeanMaxSum,
        };
        // Non-binary labels under the logistic loss.
        assert!(gnn_train(&g, &[0.0, 1.0], 1, &[0.5, 1.0], None, &cfg).is_err());
        // All-false mask.
        assert!(
            gnn_train(&g, &[0.0, 1.0], 1, &[0.0, 1.0], Some(&[false, false]), &cfg).is_err()
        );
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let mut params =
            GnnParams::init(2, 3, 5, Activation::Relu, AggregatorSet::MeanMaxSum, 9).unwrap();
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.n_params());
        let mut other =
            GnnParams::zeros(2, 3, 5, Activation::Relu, AggregatorSet::MeanMaxSum).unwrap();
        other.set_from_flat(&flat).unwrap();
        // Scalers are not part of the flat vector.
        other.input_loc = params.input_loc.clone();
        other.input_scale = params.input_scale.clone();
        assert_eq!(params, other);
        assert!(params.set_from_flat(&flat[1..]).is_err());
    }
}
