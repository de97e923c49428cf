use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gru::{self, GruTape};
use super::layers::{
    apply_row_mask, batch_norm_backward, batch_norm_infer, batch_norm_train, col2im, dense,
    dense_backward, im2col, max_pool, max_pool_backward, relu, sigmoid, BnTape, BN_MOMENTUM,
};
use super::{NetworkConfig, SeqBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics in batch normalisation.
    Train,
    /// Deterministic: no dropout, running statistics.
    Infer,
}

#[derive(Debug, Clone, Copy)]
struct DenseIx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnIx {
    gamma: usize,
    beta: usize,
    /// indices into the buffer list
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvIx {
    w: usize,
    width: usize,
    bn: BnIx,
}

#[derive(Debug, Clone, Copy)]
struct HighwayIx {
    h: DenseIx,
    t: DenseIx,
}

#[derive(Debug, Clone, Copy)]
struct GruIx {
    w_in: usize,
    w_hid: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    prenet: Vec<DenseIx>,
    bank: Vec<ConvIx>,
    proj1: ConvIx,
    proj2: ConvIx,
    highway: Vec<HighwayIx>,
    gru: [GruIx; 2],
    head: DenseIx,
}

/// Named tensors in a fixed order. Everything is stored as a matrix; vectors
/// are `1 x n` and conv kernels are `(width * in) x out`.
#[derive(Debug, Clone, PartialEq)]
struct TensorList {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl TensorList {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: Array2<f64>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }
}

struct Builder {
    params: TensorList,
    buffers: TensorList,
    rng: ChaCha8Rng,
}

impl Builder {
    fn uniform(&mut self, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-limit..limit))
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: f64) -> DenseIx {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = self.uniform(fan_in, fan_out, limit);
        DenseIx {
            w: self.params.push(format!("{name}.weight"), w),
            b: self
                .params
                .push(format!("{name}.bias"), Array2::from_elem((1, fan_out), bias)),
        }
    }

    fn conv(&mut self, name: &str, width: usize, cin: usize, cout: usize) -> ConvIx {
        let limit = (6.0 / ((cin + cout) * width) as f64).sqrt();
        let w = self.uniform(width * cin, cout, limit);
        let w = self.params.push(format!("{name}.weight"), w);
        let bn = BnIx {
            gamma: self
                .params
                .push(format!("{name}.bn.gamma"), Array2::ones((1, cout))),
            beta: self
                .params
                .push(format!("{name}.bn.beta"), Array2::zeros((1, cout))),
            mean: self
                .buffers
                .push(format!("{name}.bn.running_mean"), Array2::zeros((1, cout))),
            var: self
                .buffers
                .push(format!("{name}.bn.running_var"), Array2::ones((1, cout))),
        };
        ConvIx { w, width, bn }
    }

    fn gru(&mut self, name: &str, input: usize, units: usize) -> GruIx {
        let limit = 1.0 / (units as f64).sqrt();
        let w_in = self.uniform(input, 3 * units, limit);
        let w_hid = self.uniform(units, 3 * units, limit);
        GruIx {
            w_in: self.params.push(format!("{name}.w_input"), w_in),
            w_hid: self.params.push(format!("{name}.w_hidden"), w_hid),
            bias: self
                .params
                .push(format!("{name}.bias"), Array2::zeros((1, 3 * units))),
        }
    }
}

fn build(cfg: &NetworkConfig, seed: u64) -> (Plan, TensorList, TensorList) {
    let mut b = Builder {
        params: TensorList::new(),
        buffers: TensorList::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let p = cfg.prenet_units;
    let mut prenet = Vec::with_capacity(cfg.prenet_layers);
    let mut width = cfg.input_dim;
    for i in 0..cfg.prenet_layers {
        prenet.push(b.dense(&format!("prenet.{i}"), width, p, 0.0));
        width = p;
    }
    let bank = (1..=cfg.conv_bank_k)
        .map(|k| b.conv(&format!("cbhg.bank.{k}"), k, p, cfg.bank_channels))
        .collect();
    let proj1 = b.conv(
        "cbhg.proj.0",
        3,
        cfg.conv_bank_k * cfg.bank_channels,
        cfg.cbhg_units,
    );
    let proj2 = b.conv("cbhg.proj.1", 3, cfg.cbhg_units, p);
    let highway = (0..cfg.highway_layers)
        .map(|i| HighwayIx {
            h: b.dense(&format!("cbhg.highway.{i}.h"), p, p, 0.0),
            t: b.dense(&format!("cbhg.highway.{i}.t"), p, p, -1.0),
        })
        .collect();
    let gru = [
        b.gru("cbhg.gru.fwd", p, cfg.gru_units),
        b.gru("cbhg.gru.bwd", p, cfg.gru_units),
    ];
    let head = b.dense("head", 2 * cfg.gru_units, cfg.head_width(), 0.0);
    (
        Plan {
            prenet,
            bank,
            proj1,
            proj2,
            highway,
            gru,
            head,
        },
        b.params,
        b.buffers,
    )
}

#[derive(Debug, Clone)]
struct ConvTape {
    cols: Array2<f64>,
    bn: Option<BnTape>,
    /// post-BN, pre-activation
    z: Array2<f64>,
}

#[derive(Debug, Clone)]
struct HighwayTape {
    x: Array2<f64>,
    h_pre: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    spans: Vec<(usize, usize)>,
    mask: Vec<f64>,
    prenet_in: Vec<Array2<f64>>,
    prenet_pre: Vec<Array2<f64>>,
    prenet_drop: Vec<Option<Array2<f64>>>,
    bank: Vec<ConvTape>,
    pool_next: Array2<bool>,
    proj1: ConvTape,
    proj2: ConvTape,
    highway: Vec<HighwayTape>,
    gru_in: Array2<f64>,
    gru: [Vec<GruTape>; 2],
    gru_out: Array2<f64>,
}

/// Gradients aligned with [`Network::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            values: net
                .params
                .values
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// A CBHG network with its trainable parameters and batch-norm buffers.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    plan: Plan,
    params: TensorList,
    buffers: TensorList,
    mode: Mode,
    retained: Option<Box<Tape>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.buffers == other.buffers
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64, layer: usize) -> Array2<f64> {
    // counter-style stream: one generator per (seed, layer)
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64 + 1);
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

impl Network {
    /// Deterministic initialisation from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (plan, params, buffers) = build(&config, seed);
        Ok(Self {
            config,
            plan,
            params,
            buffers,
            mode: Mode::Train,
            retained: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Infer {
            self.retained = None;
        }
    }

    /// Number of scalar trainable parameters (batch-norm running statistics
    /// are buffers and not counted).
    pub fn param_count(&self) -> usize {
        self.params.values.iter().map(|v| v.len()).sum()
    }

    pub fn param_names(&self) -> &[String] {
        &self.params.names
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params.values
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params.values
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffers.names
    }

    pub fn buffers(&self) -> &[Array2<f64>] {
        &self.buffers.values
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        let i = self.params.names.iter().position(|n| n == name)?;
        Some(&self.params.values[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        let i = self.params.names.iter().position(|n| n == name)?;
        Some(&mut self.params.values[i])
    }

    /// Replaces a parameter or buffer by name; the shape must match.
    pub fn set_tensor(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let slot = if let Some(i) = self.params.names.iter().position(|n| n == name) {
            &mut self.params.values[i]
        } else if let Some(i) = self.buffers.names.iter().position(|n| n == name) {
            &mut self.buffers.values[i]
        } else {
            return Err(Error::Checkpoint(format!("unknown tensor {name}")));
        };
        if slot.dim() != value.dim() {
            return Err(Error::shape(
                name.to_string(),
                format!("{:?}", slot.dim()),
                format!("{:?}", value.dim()),
            ));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        *slot = value;
        Ok(())
    }

    /// Forward pass over one sequence using the current mode. `seed` drives
    /// dropout masks and is ignored in infer mode.
    pub fn forward(&self, x: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
        self.forward_batch(&SeqBatch::single(x.clone()), seed)
    }

    pub fn forward_batch(&self, batch: &SeqBatch, seed: u64) -> Result<Array2<f64>> {
        Ok(self.run(batch, self.mode == Mode::Train, seed)?.0)
    }

    /// Train-mode forward that retains activations for [`Network::backward`]
    /// and folds the batch statistics into the running averages.
    pub fn forward_train(&mut self, batch: &SeqBatch, seed: u64) -> Result<Array2<f64>> {
        if self.mode != Mode::Train {
            return Err(Error::Config("forward_train on a network in infer mode".into()));
        }
        let (out, tape) = self.run(batch, true, seed)?;
        self.update_running_stats(&tape);
        self.retained = Some(Box::new(tape));
        Ok(out)
    }

    /// Gradients of the scalar loss whose derivative w.r.t. the network
    /// output is `loss_grad`. Consumes the retained forward pass.
    pub fn backward(&mut self, loss_grad: &Array2<f64>) -> Result<Gradients> {
        let tape = self.retained.take().ok_or(Error::NoForward)?;
        self.backprop(&tape, loss_grad)
    }

    /// Loss and gradients without touching running statistics; used for
    /// finite-difference checks.
    pub fn loss_and_gradients(
        &self,
        batch: &SeqBatch,
        seed: u64,
        loss_fn: &dyn Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
    ) -> Result<(f64, Gradients)> {
        let (out, tape) = self.run(batch, true, seed)?;
        let (loss, grad) = loss_fn(&out)?;
        Ok((loss, self.backprop(&tape, &grad)?))
    }

    pub(crate) fn train_loss(
        &self,
        batch: &SeqBatch,
        seed: u64,
        loss_fn: &dyn Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
    ) -> Result<f64> {
        let (out, _) = self.run(batch, true, seed)?;
        Ok(loss_fn(&out)?.0)
    }

    fn update_running_stats(&mut self, tape: &Tape) {
        let convs = self
            .plan
            .bank
            .iter()
            .zip(&tape.bank)
            .chain([(&self.plan.proj1, &tape.proj1), (&self.plan.proj2, &tape.proj2)]);
        let mut updates = Vec::new();
        for (ix, ct) in convs {
            if let Some(bn) = &ct.bn {
                updates.push((ix.bn, bn.mean.clone(), bn.var.clone()));
            }
        }
        for (ix, mean, var) in updates {
            let rm = &mut self.buffers.values[ix.mean];
            rm.row_mut(0)
                .zip_mut_with(&mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            let rv = &mut self.buffers.values[ix.var];
            rv.row_mut(0)
                .zip_mut_with(&var, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v);
        }
    }

    fn p(&self, i: usize) -> &Array2<f64> {
        &self.params.values[i]
    }

    fn conv_forward(
        &self,
        ix: &ConvIx,
        x: &Array2<f64>,
        batch_spans: &[(usize, usize)],
        mask: &[f64],
        train: bool,
        activate: bool,
    ) -> (Array2<f64>, ConvTape) {
        let cols = im2col(x, batch_spans, ix.width);
        let y = cols.dot(self.p(ix.w));
        let (gamma, beta) = (self.p(ix.bn.gamma), self.p(ix.bn.beta));
        let (z, bn) = if train {
            let (z, t) = batch_norm_train(&y, gamma, beta, mask);
            (z, Some(t))
        } else {
            let z = batch_norm_infer(
                &y,
                gamma,
                beta,
                &self.buffers.values[ix.bn.mean],
                &self.buffers.values[ix.bn.var],
            );
            (z, None)
        };
        let mut out = if activate { z.mapv(relu) } else { z.clone() };
        apply_row_mask(&mut out, mask);
        (out, ConvTape { cols, bn, z })
    }

    fn conv_backward(
        &self,
        ix: &ConvIx,
        tape: &ConvTape,
        dout: &Array2<f64>,
        batch_spans: &[(usize, usize)],
        mask: &[f64],
        activate: bool,
        grads: &mut [Array2<f64>],
    ) -> Array2<f64> {
        let mut dz = dout.clone();
        apply_row_mask(&mut dz, mask);
        if activate {
            dz.zip_mut_with(&tape.z, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let bn = tape.bn.as_ref().expect("train tape carries batch statistics");
        let (dy, dgamma, dbeta) = batch_norm_backward(bn, self.p(ix.bn.gamma), &dz, mask);
        grads[ix.bn.gamma] += &dgamma;
        grads[ix.bn.beta] += &dbeta;
        grads[ix.w] += &tape.cols.t().dot(&dy);
        let dcols = dy.dot(&self.p(ix.w).t());
        let cin = self.p(ix.w).nrows() / ix.width;
        col2im(&dcols, batch_spans, ix.width, cin)
    }

    fn run(&self, batch: &SeqBatch, train: bool, seed: u64) -> Result<(Array2<f64>, Tape)> {
        let x = batch.inputs();
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape("network input columns", self.config.input_dim, x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let spans = batch.spans();
        let mask = batch.mask();
        let cfg = &self.config;

        let mut h = x.clone();
        let mut prenet_in = Vec::new();
        let mut prenet_pre = Vec::new();
        let mut prenet_drop = Vec::new();
        for (i, ix) in self.plan.prenet.iter().enumerate() {
            let pre = dense(&h.view(), self.p(ix.w), self.p(ix.b));
            let mut a = pre.mapv(relu);
            let drop = (train && cfg.dropout_rate > 0.0)
                .then(|| dropout_mask(a.nrows(), a.ncols(), cfg.dropout_rate, seed, i));
            if let Some(d) = &drop {
                a *= d;
            }
            apply_row_mask(&mut a, mask);
            prenet_in.push(std::mem::replace(&mut h, a));
            prenet_pre.push(pre);
            prenet_drop.push(drop);
        }
        let prenet_out = h;

        let mut bank_out = Vec::with_capacity(self.plan.bank.len());
        let mut bank_tapes = Vec::with_capacity(self.plan.bank.len());
        for ix in &self.plan.bank {
            let (o, t) = self.conv_forward(ix, &prenet_out, spans, mask, train, true);
            bank_out.push(o);
            bank_tapes.push(t);
        }
        let views: Vec<_> = bank_out.iter().map(|a| a.view()).collect();
        let stacked = concatenate(Axis(1), &views).expect("bank outputs share row count");
        let (mut pooled, pool_next) = max_pool(&stacked, spans);
        apply_row_mask(&mut pooled, mask);
        let (p1, proj1) = self.conv_forward(&self.plan.proj1, &pooled, spans, mask, train, true);
        let (p2, proj2) = self.conv_forward(&self.plan.proj2, &p1, spans, mask, train, false);
        let mut r = p2 + &prenet_out;

        let mut highway = Vec::with_capacity(self.plan.highway.len());
        for ix in &self.plan.highway {
            let h_pre = dense(&r.view(), self.p(ix.h.w), self.p(ix.h.b));
            let hval = h_pre.mapv(relu);
            let g = dense(&r.view(), self.p(ix.t.w), self.p(ix.t.b)).mapv(sigmoid);
            let mut y = &hval * &g + &r * &g.mapv(|v| 1.0 - v);
            apply_row_mask(&mut y, mask);
            highway.push(HighwayTape {
                x: std::mem::replace(&mut r, y),
                h_pre,
                h: hval,
                g,
            });
        }
        let gru_in = r;

        let mut outs = Vec::with_capacity(2);
        let mut gru_tapes: [Vec<GruTape>; 2] = [Vec::new(), Vec::new()];
        for (dir, ix) in self.plan.gru.iter().enumerate() {
            let xw = dense(&gru_in.view(), self.p(ix.w_in), self.p(ix.bias));
            let (o, t) = gru::forward(&xw, self.p(ix.w_hid), spans, mask, dir == 1);
            outs.push(o);
            gru_tapes[dir] = t;
        }
        let gru_out = concatenate(Axis(1), &[outs[0].view(), outs[1].view()])
            .expect("directions share row count");
        let out = dense(&gru_out.view(), self.p(self.plan.head.w), self.p(self.plan.head.b));

        Ok((
            out,
            Tape {
                spans: spans.to_vec(),
                mask: mask.to_vec(),
                prenet_in,
                prenet_pre,
                prenet_drop,
                bank: bank_tapes,
                pool_next,
                proj1,
                proj2,
                highway,
                gru_in,
                gru: gru_tapes,
                gru_out,
            },
        ))
    }

    fn backprop(&self, tape: &Tape, loss_grad: &Array2<f64>) -> Result<Gradients> {
        let rows = tape.mask.len();
        if loss_grad.dim() != (rows, self.config.head_width()) {
            return Err(Error::shape(
                "loss gradient",
                format!("{:?}", (rows, self.config.head_width())),
                format!("{:?}", loss_grad.dim()),
            ));
        }
        let mut grads = Gradients::zeros_like(self).values;
        let spans = &tape.spans;
        let mask = &tape.mask;

        let head = self.plan.head;
        let mut loss_grad = loss_grad.clone();
        apply_row_mask(&mut loss_grad, mask);
        let (mut d_gru, dw, db) = dense_backward(&tape.gru_out.view(), self.p(head.w), &loss_grad);
        grads[head.w] += &dw;
        grads[head.b] += &db;
        apply_row_mask(&mut d_gru, mask);

        let units = self.config.gru_units;
        let mut dr = Array2::zeros(tape.gru_in.raw_dim());
        for (dir, ix) in self.plan.gru.iter().enumerate() {
            let dout = d_gru.slice(s![.., dir * units..(dir + 1) * units]).to_owned();
            let (dxw, du) = gru::backward(&tape.gru[dir], self.p(ix.w_hid), &dout, spans, mask, dir == 1);
            grads[ix.w_hid] += &du;
            let (dx, dw, db) = dense_backward(&tape.gru_in.view(), self.p(ix.w_in), &dxw);
            grads[ix.w_in] += &dw;
            grads[ix.bias] += &db;
            dr += &dx;
        }

        for (ix, ht) in self.plan.highway.iter().zip(&tape.highway).rev() {
            apply_row_mask(&mut dr, mask);
            let dh = &dr * &ht.g;
            let dg = &dr * &(&ht.h - &ht.x);
            let mut dx = &dr * &ht.g.mapv(|g| 1.0 - g);
            let mut dh_pre = dh;
            dh_pre.zip_mut_with(&ht.h_pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            let dt_pre = &dg * &ht.g.mapv(|g| g * (1.0 - g));
            let (dxh, dwh, dbh) = dense_backward(&ht.x.view(), self.p(ix.h.w), &dh_pre);
            let (dxt, dwt, dbt) = dense_backward(&ht.x.view(), self.p(ix.t.w), &dt_pre);
            grads[ix.h.w] += &dwh;
            grads[ix.h.b] += &dbh;
            grads[ix.t.w] += &dwt;
            grads[ix.t.b] += &dbt;
            dx += &dxh;
            dx += &dxt;
            dr = dx;
        }

        // residual: r = proj2 + prenet_out
        let mut d_prenet = dr.clone();
        let d_p1 = self.conv_backward(&self.plan.proj2, &tape.proj2, &dr, spans, mask, false, &mut grads);
        let d_pooled = self.conv_backward(&self.plan.proj1, &tape.proj1, &d_p1, spans, mask, true, &mut grads);
        let mut d_pooled = d_pooled;
        apply_row_mask(&mut d_pooled, mask);
        let d_stacked = max_pool_backward(&d_pooled, &tape.pool_next);
        let bank_ch = self.config.bank_channels;
        for (k, (ix, ct)) in self.plan.bank.iter().zip(&tape.bank).enumerate() {
            let dk = d_stacked
                .slice(s![.., k * bank_ch..(k + 1) * bank_ch])
                .to_owned();
            d_prenet += &self.conv_backward(ix, ct, &dk, spans, mask, true, &mut grads);
        }

        let mut dh = d_prenet;
        for (i, ix) in self.plan.prenet.iter().enumerate().rev() {
            apply_row_mask(&mut dh, mask);
            if let Some(d) = &tape.prenet_drop[i] {
                dh *= d;
            }
            dh.zip_mut_with(&tape.prenet_pre[i], |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            let (dx, dw, db) = dense_backward(&tape.prenet_in[i].view(), self.p(ix.w), &dh);
            grads[ix.w] += &dw;
            grads[ix.b] += &db;
            dh = dx;
        }
        let g = Gradients { values: grads };
        if !g.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(g)
    }

    pub(crate) fn from_parts(
        config: NetworkConfig,
        tensors: Vec<(String, Array2<f64>)>,
    ) -> Result<Self> {
        let mut net = Network::new(config, 0)?;
        let expected = net.params.names.len() + net.buffers.names.len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors, found {}",
                tensors.len()
            )));
        }
        for (name, value) in tensors {
            net.set_tensor(&name, value)?;
        }
        Ok(net)
    }
}
