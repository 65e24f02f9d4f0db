//! The binary autoencoder and its end-to-end training loop.
//!
//! Tx is one fully connected layer mapping m-bit labels (via one-hot row
//! selection) to complex points, re-normalized to unit mean power on
//! every forward pass; Rx is a three-layer ReLU network of width 128
//! emitting per-bit posteriors through a logistic output. Training runs
//! the batch through AWGN + Wiener phase noise + the soft BPS at an
//! annealed temperature and minimizes masked binary cross-entropy with
//! Adam on Tx and Rx jointly.

pub mod graph;

use std::io::Write as _;
use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, streams, ChannelConfig, ChannelKind, RngStream};
use crate::constellation::Constellation;
use crate::cpe::{self, BpsConfig, BpsMode};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

use graph::{Graph, NodeId};

/// Tx mapping: an M x 2 weight matrix, row i holding the (re, im) pair
/// transmitted for label i (labels are read MSB-first).
#[derive(Clone, Debug)]
pub struct TxParams<F> {
    pub weights: Tensor<F>,
    pub order_m: u32,
}

impl<F: Real> TxParams<F> {
    /// Rows drawn from a circular Gaussian, then scaled to unit mean power.
    pub fn random_init(order_m: u32, stream: RngStream) -> Self {
        let size = 1usize << order_m;
        let mut rng = stream.rng();
        let points: Vec<Complex<F>> = (0..size)
            .map(|_| {
                Complex::new(
                    F::standard_normal(&mut rng),
                    F::standard_normal(&mut rng),
                )
            })
            .collect();
        let points = crate::constellation::normalize(&points).expect("gaussian rows are nonzero");
        Self {
            weights: Tensor::from_complex(&points),
            order_m,
        }
    }

    /// Gray-QAM warm start: row i is the Gray-QAM point labeled i.
    pub fn gray_init(order_m: u32) -> Result<Self> {
        let c = Constellation::<F>::gray_qam(order_m)?;
        Ok(Self {
            weights: Tensor::from_complex(c.points()),
            order_m,
        })
    }

    /// Crystallize the current weights into a normalized, identity-labeled
    /// constellation.
    pub fn constellation(&self) -> Result<Constellation<F>> {
        let points = crate::constellation::normalize(&self.weights.to_complex())?;
        let size = 1usize << self.order_m;
        Constellation::new(points, (0..size as u32).collect(), self.order_m)
    }
}

/// One dense layer, stored input-major: weights are in x out, bias 1 x out.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseLayer<F> {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> DenseLayer<F> {
    fn weight_tensor(&self) -> Tensor<F> {
        Tensor::from_vec(self.input, self.output, self.weights.clone())
    }

    fn bias_tensor(&self) -> Tensor<F> {
        Tensor::from_vec(1, self.output, self.bias.clone())
    }
}

/// Rx posterior network: dense layers with ReLU between them and a
/// logistic on the output, mapping (re, im) features to m per-bit
/// probabilities.
#[derive(Clone, Debug)]
pub struct RxParams<F> {
    pub layers: Vec<DenseLayer<F>>,
}

pub const RX_HIDDEN_WIDTH: usize = 128;

impl<F: Real> RxParams<F> {
    /// The architecture used throughout: 2 -> 128 -> 128 -> m.
    pub fn init(order_m: u32, stream: RngStream) -> Self {
        Self::with_widths(
            &[2, RX_HIDDEN_WIDTH, RX_HIDDEN_WIDTH, order_m as usize],
            stream,
        )
    }

    /// He-initialized network over arbitrary widths (first entry is the
    /// input feature count, last the bit count).
    pub fn with_widths(widths: &[usize], stream: RngStream) -> Self {
        assert!(widths.len() >= 2);
        let mut rng = stream.rng();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (input, output) = (w[0], w[1]);
                let std = (F::lit(2.0) / F::from_usize(input).unwrap()).sqrt();
                DenseLayer {
                    input,
                    output,
                    weights: (0..input * output)
                        .map(|_| F::standard_normal(&mut rng) * std)
                        .collect(),
                    bias: vec![F::zero(); output],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn order_m(&self) -> u32 {
        self.layers.last().expect("nonempty").output as u32
    }

    /// Plain value-level forward pass (used by validation and metrics).
    pub fn forward(&self, features: &Tensor<F>) -> Tensor<F> {
        let mut x = features.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = layer.weight_tensor();
            let mut y = graph::matmul_nn(&x, &w);
            for r in 0..y.rows() {
                for (v, &b) in y.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if i < last {
                y.data_mut().iter_mut().for_each(|v| *v = v.max(F::zero()));
            } else {
                let one = F::one();
                y.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = one / (one + (-*v).exp()));
            }
            x = y;
        }
        x
    }
}

/// Serialized Rx checkpoint with a version tag.
#[derive(Serialize, Deserialize)]
struct RxCheckpoint<F> {
    version: u32,
    layers: Vec<DenseLayer<F>>,
}

const RX_CHECKPOINT_VERSION: u32 = 1;

impl<F: Real + Serialize + for<'de> Deserialize<'de>> RxParams<F> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = RxCheckpoint {
            version: RX_CHECKPOINT_VERSION,
            layers: self.layers.clone(),
        };
        let text = serde_json::to_string(&ckpt)
            .map_err(|e| Error::Config(format!("rx checkpoint serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: RxCheckpoint<F> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: 0,
            msg: format!("rx checkpoint parse: {e}"),
        })?;
        if ckpt.version != RX_CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: 0,
                msg: format!("unsupported rx checkpoint version {}", ckpt.version),
            });
        }
        Ok(Self {
            layers: ckpt.layers,
        })
    }
}

/// Graph handles for the Tx forward pass.
pub struct TxGraph {
    /// Raw weight leaf (Adam updates read this node's gradient).
    pub weights: NodeId,
    /// Unit-mean-power weights, the constellation the BPS sees.
    pub normalized: NodeId,
    /// Selected symbols, rows x 2.
    pub symbols: NodeId,
}

/// Build the Tx forward pass: normalize the M x 2 weight matrix to unit
/// mean power inside the graph, then select one row per symbol by the
/// MSB-first label of its bit row.
pub fn tx_forward<F: Real>(g: &mut Graph<F>, tx: &TxParams<F>, bits: &[u8]) -> TxGraph {
    let m = tx.order_m as usize;
    assert_eq!(bits.len() % m, 0, "bit row length mismatch");
    let weights = g.leaf(tx.weights.clone());
    let normalized = normalize_unit_power(g, weights);
    let indices: Vec<u32> = bits
        .chunks_exact(m)
        .map(|row| row.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b)))
        .collect();
    let symbols = g.gather_rows(normalized, &indices);
    TxGraph {
        weights,
        normalized,
        symbols,
    }
}

/// Scale a points-as-rows tensor to unit mean power inside the graph.
pub fn normalize_unit_power<F: Real>(g: &mut Graph<F>, points: NodeId) -> NodeId {
    let rows = g.value(points).rows();
    let sq = g.mul(points, points);
    let total = g.sum(sq);
    let mean = g.scale(total, F::from_usize(rows).unwrap().recip());
    let factor = g.powf(mean, F::lit(-0.5));
    g.mul_scalar(points, factor)
}

/// Graph handles for the Rx forward pass.
pub struct RxGraph {
    /// (weight, bias) leaf per layer, in order.
    pub params: Vec<(NodeId, NodeId)>,
    /// rows x m per-bit probabilities.
    pub probs: NodeId,
}

/// Dense ReLU stack with a logistic output, differentiable end to end.
pub fn rx_forward<F: Real>(g: &mut Graph<F>, rx: &RxParams<F>, features: NodeId) -> RxGraph {
    let mut params = Vec::with_capacity(rx.layers.len());
    let mut x = features;
    let last = rx.layers.len() - 1;
    for (i, layer) in rx.layers.iter().enumerate() {
        let w = g.leaf(layer.weight_tensor());
        let b = g.leaf(layer.bias_tensor());
        params.push((w, b));
        let y = g.matmul(x, w);
        let yb = g.add_bias(y, b);
        x = if i < last { g.relu(yb) } else { g.logistic(yb) };
    }
    RxGraph { params, probs: x }
}

/// Masked binary cross-entropy in nats (see [`Graph::bce`]).
pub fn bce_loss<F: Real>(
    g: &mut Graph<F>,
    probs: NodeId,
    bits: &[u8],
    mask: &[bool],
) -> Result<NodeId> {
    g.bce(probs, bits, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
}

/// Adam state over a fixed parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: usize,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Real> AdamState<F> {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            step: 0,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            epsilon: F::lit(1e-8),
        }
    }
}

/// One Adam update over parallel slices of parameters and gradients.
/// Rejects non-finite gradients instead of corrupting the parameters.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    state: &mut AdamState<F>,
    lr: F,
    step_for_diagnostics: usize,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                param: format!("parameter {i}"),
                step: step_for_diagnostics,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let one = F::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *mv = state.beta1 * *mv + (one - state.beta1) * gv;
            *vv = state.beta2 * *vv + (one - state.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxInit {
    Random,
    Gray,
}

#[derive(Clone, Debug)]
pub struct TrainConfig<F> {
    pub order_m: u32,
    /// Sequences per step (B).
    pub batch_sequences: usize,
    /// Symbols per sequence (K); must exceed twice the BPS half-window.
    pub sequence_length: usize,
    pub steps: usize,
    pub learning_rate: F,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub channel: ChannelConfig<F>,
    pub bps: BpsConfig<F>,
    /// Temperature schedule endpoints for the soft BPS.
    pub t_start: F,
    pub t_end: F,
    pub tx_init: TxInit,
    /// Freeze the Tx mapping (train the Rx demapper only).
    pub train_tx: bool,
}

impl<F: Real> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.bps.validate()?;
        if self.order_m < 1 || self.order_m > 16 {
            return Err(Error::Config(format!(
                "order_m must be in 1..=16, got {}",
                self.order_m
            )));
        }
        if self.batch_sequences == 0 {
            return Err(Error::Config("batch_sequences must be >= 1".into()));
        }
        if self.channel.kind == ChannelKind::Wiener
            && self.sequence_length <= 2 * self.bps.half_window
        {
            return Err(Error::Config(format!(
                "sequence_length {} must exceed 2 * half_window = {}",
                self.sequence_length,
                2 * self.bps.half_window
            )));
        }
        if self.sequence_length == 0 {
            return Err(Error::Config("sequence_length must be >= 1".into()));
        }
        if !(self.learning_rate > F::zero()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        cpe::temperature_schedule(0, 1, self.t_start, self.t_end)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord<F> {
    pub step: usize,
    pub loss: F,
    pub temperature: F,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<F> {
    pub constellation: Constellation<F>,
    pub rx: RxParams<F>,
    pub loss_history: Vec<LossRecord<F>>,
}

/// Write the loss history as `step,loss,temperature` CSV.
pub fn save_loss_history<F: Real>(history: &[LossRecord<F>], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "step,loss,temperature")?;
    for rec in history {
        writeln!(file, "{},{},{}", rec.step, rec.loss, rec.temperature)?;
    }
    Ok(())
}

/// End-to-end training. The channel kind selects the pipeline: `wiener`
/// trains through AWGN + per-sequence Wiener phase + soft BPS with the
/// annealed temperature and edge-masked loss; `rpn-surrogate` and
/// `awgn-only` train without a CPE in the loop and without a mask.
pub fn train<F: Real>(cfg: &TrainConfig<F>) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    let tx = match cfg.tx_init {
        TxInit::Random => TxParams::random_init(
            cfg.order_m,
            RngStream::new(cfg.seed, streams::id(streams::TX_INIT, 0, 0)),
        ),
        TxInit::Gray => TxParams::gray_init(cfg.order_m)?,
    };
    let rx = RxParams::init(
        cfg.order_m,
        RngStream::new(cfg.seed, streams::id(streams::RX_INIT, 0, 0)),
    );
    train_from(cfg, tx, rx)
}

/// [`train`] from explicit initial parameters (warm restarts, tests).
pub fn train_from<F: Real>(
    cfg: &TrainConfig<F>,
    mut tx: TxParams<F>,
    mut rx: RxParams<F>,
) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    let history = train_loop(cfg, &mut tx, &mut rx, cfg.train_tx)?;
    Ok(TrainOutput {
        constellation: tx.constellation()?,
        rx,
        loss_history: history,
    })
}

/// Reference training on the AWGN + memoryless-RPN surrogate channel:
/// no CPE in the loop, no mask.
pub fn train_rpn_reference<F: Real>(cfg: &TrainConfig<F>) -> Result<TrainOutput<F>> {
    let mut cfg = cfg.clone();
    cfg.channel.kind = ChannelKind::RpnSurrogate;
    train(&cfg)
}

/// Train only the Rx demapper for a fixed constellation, running the
/// channel plus the *hard* BPS outside the graph. Used for reference
/// curves (e.g. Gray QAM with a trained demapper).
pub fn train_rx_demapper<F: Real>(
    c: &Constellation<F>,
    cfg: &TrainConfig<F>,
    align_rotation: bool,
) -> Result<(RxParams<F>, Vec<LossRecord<F>>)> {
    cfg.validate()?;
    let mut rx = RxParams::init(
        c.order_m(),
        RngStream::new(cfg.seed, streams::id(streams::RX_INIT, 0, 0)),
    );
    let b = cfg.batch_sequences;
    let k = cfg.sequence_length;
    let m = c.order_m() as usize;
    let hard = BpsConfig {
        mode: BpsMode::Hard,
        ..cfg.bps
    };
    let sigma_phi2 = cfg.channel.sigma_phi2()?;
    let shapes = rx_param_shapes(&rx);
    let mut adam = AdamState::new(&shapes);
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut bits = Vec::with_capacity(b * k * m);
        let mut feats = Tensor::zeros(b * k, 2);
        let mut mask = Vec::with_capacity(b * k);
        for seq in 0..b {
            let (seq_bits, symbols) =
                draw_symbols(c, k, RngStream::new(cfg.seed, step_stream(streams::BITS, step, seq)));
            bits.extend_from_slice(&seq_bits);
            let noisy = channel::awgn(
                &symbols,
                cfg.channel.snr_db,
                RngStream::new(cfg.seed, step_stream(streams::AWGN, step, seq)),
            );
            let phi = channel::wiener_phase(
                k,
                sigma_phi2,
                RngStream::new(cfg.seed, step_stream(streams::PHASE, step, seq)),
            );
            let z = channel::apply_phase(&noisy, &phi)?;
            let out = cpe::bps(&z, c, &hard)?;
            let corrected = if align_rotation {
                crate::metrics::align_global_rotation(&out.corrected, &symbols, &out.valid_mask).0
            } else {
                out.corrected
            };
            for (row, sym) in corrected.iter().enumerate() {
                feats.set(seq * k + row, 0, sym.re);
                feats.set(seq * k + row, 1, sym.im);
            }
            mask.extend_from_slice(&out.valid_mask);
        }
        let mut g = Graph::new();
        let features = g.leaf(feats);
        let rxg = rx_forward(&mut g, &rx, features);
        let loss = g.bce(rxg.probs, &bits, &mask)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step });
        }
        g.backward(loss);
        let t = cpe::temperature_schedule(step, cfg.steps.max(1), cfg.t_start, cfg.t_end)?;
        apply_rx_update(&mut rx, &rxg, &g, &mut adam, cfg.learning_rate, step)?;
        history.push(LossRecord {
            step,
            loss: loss_value,
            temperature: t,
        });
    }
    Ok((rx, history))
}

fn step_stream(purpose: u64, step: usize, seq: usize) -> u64 {
    streams::id(purpose, step as u64, seq as u64)
}

/// Uniform bit rows and the matching constellation symbols.
fn draw_symbols<F: Real>(
    c: &Constellation<F>,
    count: usize,
    stream: RngStream,
) -> (Vec<u8>, Vec<Complex<F>>) {
    let m = c.order_m() as usize;
    let size = c.size();
    let mut label_to_index = vec![0usize; size];
    for (i, &l) in c.labels().iter().enumerate() {
        label_to_index[l as usize] = i;
    }
    let mut rng = stream.rng();
    let mut bits = Vec::with_capacity(count * m);
    let mut symbols = Vec::with_capacity(count);
    for _ in 0..count {
        let label: u32 = rng.gen_range(0..size as u32);
        for j in 0..m {
            bits.push(((label >> (m - 1 - j)) & 1) as u8);
        }
        symbols.push(c.points()[label_to_index[label as usize]]);
    }
    (bits, symbols)
}

fn rx_param_shapes<F: Real>(rx: &RxParams<F>) -> Vec<(usize, usize)> {
    rx.layers
        .iter()
        .flat_map(|l| [(l.input, l.output), (1, l.output)])
        .collect()
}

fn apply_rx_update<F: Real>(
    rx: &mut RxParams<F>,
    rxg: &RxGraph,
    g: &Graph<F>,
    adam: &mut AdamState<F>,
    lr: F,
    step: usize,
) -> Result<()> {
    let mut tensors: Vec<Tensor<F>> = Vec::new();
    for layer in &rx.layers {
        tensors.push(layer.weight_tensor());
        tensors.push(layer.bias_tensor());
    }
    let grads: Vec<&Tensor<F>> = rxg
        .params
        .iter()
        .flat_map(|&(w, b)| [g.grad(w), g.grad(b)])
        .collect();
    {
        let mut refs: Vec<&mut Tensor<F>> = tensors.iter_mut().collect();
        adam_step(&mut refs, &grads, adam, lr, step)?;
    }
    for (i, layer) in rx.layers.iter_mut().enumerate() {
        layer.weights = tensors[2 * i].data().to_vec();
        layer.bias = tensors[2 * i + 1].data().to_vec();
    }
    Ok(())
}

/// One training step's computation graph with its parameter handles.
pub struct StepGraph<F: Real> {
    pub graph: Graph<F>,
    pub tx: TxGraph,
    pub rx: RxGraph,
    pub loss: NodeId,
    pub bits: Vec<u8>,
    pub mask: Vec<bool>,
}

/// Build the forward graph of one training step at a given temperature:
/// Tx -> AWGN -> phase impairment -> (soft BPS when the channel kind is
/// wiener) -> Rx -> masked BCE. All stochastic draws are determined by
/// (seed, step), so rebuilding with perturbed parameters reproduces the
/// identical noise — which is what finite-difference checks need.
pub fn build_training_step<F: Real>(
    cfg: &TrainConfig<F>,
    tx: &TxParams<F>,
    rx: &RxParams<F>,
    step: usize,
    temperature: F,
) -> Result<StepGraph<F>> {
    let b = cfg.batch_sequences;
    let k = cfg.sequence_length;
    let m = cfg.order_m as usize;
    let n = cfg.bps.half_window;
    let sigma_phi2 = cfg.channel.sigma_phi2()?;
    let phases = cpe::test_phase_grid::<F>(cfg.bps.num_test_phases)?;

    let mut bits = Vec::with_capacity(b * k * m);
    for seq in 0..b {
        let mut rng = RngStream::new(cfg.seed, step_stream(streams::BITS, step, seq)).rng();
        for _ in 0..k * m {
            bits.push(u8::from(rng.gen_bool(0.5)));
        }
    }

    let mut g = Graph::new();
    let txg = tx_forward(&mut g, tx, &bits);
    let mut parts = Vec::with_capacity(b);
    let mut mask = Vec::with_capacity(b * k);
    for seq in 0..b {
        let idx: Vec<u32> = ((seq * k) as u32..((seq + 1) * k) as u32).collect();
        let x = g.gather_rows(txg.symbols, &idx);
        let noise = channel::awgn_noise(
            k,
            cfg.channel.snr_db,
            RngStream::new(cfg.seed, step_stream(streams::AWGN, step, seq)),
        );
        let y = g.add_const(x, &Tensor::from_complex(&noise));
        let (corrected, valid) = match cfg.channel.kind {
            ChannelKind::AwgnOnly => (y, vec![true; k]),
            ChannelKind::RpnSurrogate => {
                let theta = channel::rpn_phases(
                    k,
                    cfg.channel.rpn_sigma,
                    RngStream::new(cfg.seed, step_stream(streams::RPN, step, seq)),
                );
                (g.rotate_const(y, &theta), vec![true; k])
            }
            ChannelKind::Wiener => {
                let phi = channel::wiener_phase(
                    k,
                    sigma_phi2,
                    RngStream::new(cfg.seed, step_stream(streams::PHASE, step, seq)),
                );
                let z = g.rotate_const(y, &phi);
                let d = g.bps_distances(z, txg.normalized, &phases);
                let s = g.window_sums(d, n);
                let raw = g.softmin_dot(s, &phases, temperature);
                // unwrap corrections are piecewise constant: apply them
                // as a constant offset, gradients pass through unchanged
                let raw_vals = g.value(raw).data().to_vec();
                let unwrapped = cpe::unwrap_phases(&raw_vals);
                let offsets: Vec<F> = unwrapped
                    .iter()
                    .zip(&raw_vals)
                    .map(|(&u, &r)| u - r)
                    .collect();
                let est = g.add_const(raw, &Tensor::from_column(&offsets));
                let corrected = g.rotate(z, est);
                let valid = (0..k).map(|i| i >= n && i + n < k).collect();
                (corrected, valid)
            }
        };
        parts.push(corrected);
        mask.extend_from_slice(&valid);
    }
    let features = g.concat_rows(&parts);
    let rxg = rx_forward(&mut g, rx, features);
    let loss = g.bce(rxg.probs, &bits, &mask)?;
    Ok(StepGraph {
        graph: g,
        tx: txg,
        rx: rxg,
        loss,
        bits,
        mask,
    })
}

/// Shared Tx+Rx training loop behind [`train`].
fn train_loop<F: Real>(
    cfg: &TrainConfig<F>,
    tx: &mut TxParams<F>,
    rx: &mut RxParams<F>,
    train_tx: bool,
) -> Result<Vec<LossRecord<F>>> {
    let mut shapes = vec![tx.weights.shape()];
    shapes.extend(rx_param_shapes(rx));
    let mut adam = AdamState::new(&shapes);
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let t = cpe::temperature_schedule(step, cfg.steps.max(1), cfg.t_start, cfg.t_end)?;
        let mut sg = build_training_step(cfg, tx, rx, step, t)?;
        let loss_value = sg.graph.value(sg.loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step });
        }
        sg.graph.backward(sg.loss);
        let g = &sg.graph;

        // rx-only training keeps the Adam slot layout and feeds a zero
        // Tx gradient, so warm restarts stay comparable
        let zero_tx = Tensor::zeros(tx.weights.rows(), tx.weights.cols());
        let mut tensors: Vec<Tensor<F>> = vec![tx.weights.clone()];
        for layer in &rx.layers {
            tensors.push(layer.weight_tensor());
            tensors.push(layer.bias_tensor());
        }
        let mut grads: Vec<&Tensor<F>> = vec![if train_tx {
            g.grad(sg.tx.weights)
        } else {
            &zero_tx
        }];
        grads.extend(
            sg.rx
                .params
                .iter()
                .flat_map(|&(w, bnode)| [g.grad(w), g.grad(bnode)]),
        );
        {
            let mut refs: Vec<&mut Tensor<F>> = tensors.iter_mut().collect();
            adam_step(&mut refs, &grads, &mut adam, cfg.learning_rate, step)?;
        }
        if train_tx {
            tx.weights = tensors[0].clone();
        }
        for (i, layer) in rx.layers.iter_mut().enumerate() {
            layer.weights = tensors[2 * i + 1].data().to_vec();
            layer.bias = tensors[2 * i + 2].data().to_vec();
        }

        history.push(LossRecord {
            step,
            loss: loss_value,
            temperature: t,
        });
    }
    Ok(history)
}
