//! Two-hidden-layer sigmoid nets trained on expert labels, and the ensemble
//! representation built from their first hidden layers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};

pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + exp(-z))
}

/// Per-net hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    /// `h1 × m`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `h2 × h1`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// Output weights, length `h2`.
    pub v: Vec<f64>,
    pub b3: f64,
    pub hyper: Hyper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub f: f64,
}

fn layer(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| sigmoid(b[i] + linalg::dot(w.row(i), x))).collect()
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let a = sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..=a))
}

impl Net {
    /// All-zero net of the given shape.
    pub fn zeros(m: usize, hyper: Hyper) -> Self {
        Net {
            w1: Matrix::zeros(hyper.h1, m),
            b1: vec![0.0; hyper.h1],
            w2: Matrix::zeros(hyper.h2, hyper.h1),
            b2: vec![0.0; hyper.h2],
            v: vec![0.0; hyper.h2],
            b3: 0.0,
            hyper,
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(m: usize, hyper: Hyper, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Net::zeros(m, hyper);
        net.w1 = glorot(rng, hyper.h1, m);
        net.w2 = glorot(rng, hyper.h2, hyper.h1);
        net.v = glorot(rng, 1, hyper.h2).row(0).to_vec();
        net
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        check_dim(self.input_dim(), x.len())?;
        let h1 = layer(&self.w1, &self.b1, x);
        let h2 = layer(&self.w2, &self.b2, &h1);
        let f = sigmoid(self.b3 + linalg::dot(&self.v, &h2));
        Ok(Activations { h1, h2, f })
    }

    /// First hidden layer only.
    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(layer(&self.w1, &self.b1, x))
    }

    pub fn n_params(&self) -> usize {
        let (h1, h2, m) = (self.hyper.h1, self.hyper.h2, self.input_dim());
        h1 * m + h1 + h2 * h1 + h2 + h2 + 1
    }

    /// Parameters flattened in the order `W1, b1, W2, b2, V, b3`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.as_slice());
        p.extend_from_slice(&self.b2);
        p.extend_from_slice(&self.v);
        p.push(self.b3);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.n_params(), p.len())?;
        let (w1, rest) = p.split_at(self.w1.as_slice().len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.as_slice().len());
        let (b2, rest) = rest.split_at(self.b2.len());
        let (v, rest) = rest.split_at(self.v.len());
        self.w1.data_mut().copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.data_mut().copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        self.v.copy_from_slice(v);
        self.b3 = rest[0];
        Ok(())
    }

    /// `Σ‖W1‖² + Σ‖W2‖² + Σ‖V‖²`.
    pub fn weight_sum_squares(&self) -> f64 {
        self.w1.sum_squares() + self.w2.sum_squares() + self.v.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|x| x.is_finite())
    }

    /// Mean squared label error `C = (1/n) Σ (g − f)²`.
    pub fn cost(&self, x: &Matrix, g: &[f64]) -> Result<f64> {
        check_dim(x.rows(), g.len())?;
        let mut c = 0.0;
        for (i, gi) in g.iter().enumerate() {
            let f = self.forward(x.row(i))?.f;
            c += (gi - f) * (gi - f);
        }
        Ok(c / g.len().max(1) as f64)
    }

    /// `L = C + μ Σ W²` over the given rows.
    pub fn loss(&self, x: &Matrix, g: &[f64]) -> Result<f64> {
        Ok(self.cost(x, g)? + self.hyper.weight_decay * self.weight_sum_squares())
    }

    /// Loss and its gradient (flattened like [`Net::params`]) over `rows` of
    /// `x`.
    pub fn loss_gradient(&self, x: &Matrix, g: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.input_dim(), x.cols())?;
        let (h1n, h2n, m) = (self.hyper.h1, self.hyper.h2, self.input_dim());
        let mut grad = vec![0.0; self.n_params()];
        let o_b1 = h1n * m;
        let o_w2 = o_b1 + h1n;
        let o_b2 = o_w2 + h2n * h1n;
        let o_v = o_b2 + h2n;
        let o_b3 = o_v + h2n;
        let scale = 1.0 / rows.len().max(1) as f64;
        let mut cost = 0.0;
        let mut d1 = vec![0.0; h1n];
        for &r in rows {
            let xr = x.row(r);
            let a = self.forward(xr)?;
            let err = a.f - g[r];
            cost += err * err;
            let d3 = 2.0 * scale * err * a.f * (1.0 - a.f);
            grad[o_b3] += d3;
            for j in 0..h2n {
                grad[o_v + j] += d3 * a.h2[j];
            }
            d1.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..h2n {
                let d2 = d3 * self.v[j] * a.h2[j] * (1.0 - a.h2[j]);
                grad[o_b2 + j] += d2;
                let w2row = self.w2.row(j);
                let gw2 = &mut grad[o_w2 + j * h1n..o_w2 + (j + 1) * h1n];
                for k in 0..h1n {
                    gw2[k] += d2 * a.h1[k];
                    d1[k] += d2 * w2row[k];
                }
            }
            for k in 0..h1n {
                let d = d1[k] * a.h1[k] * (1.0 - a.h1[k]);
                grad[o_b1 + k] += d;
                let gw1 = &mut grad[k * m..(k + 1) * m];
                for (gv, xv) in gw1.iter_mut().zip(xr) {
                    *gv += d * xv;
                }
            }
        }
        let mu = self.hyper.weight_decay;
        let p = self.params();
        for (range_start, range_end) in [(0, o_b1), (o_w2, o_b2), (o_v, o_b3)] {
            for i in range_start..range_end {
                grad[i] += 2.0 * mu * p[i];
            }
        }
        Ok((cost * scale + mu * self.weight_sum_squares(), grad))
    }
}

/// Operator 2-norm bounds on the Lipschitz constants of `h1` and `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    /// `‖W1‖/4`, bounding `‖h1(x) − h1(y)‖ / ‖x − y‖`.
    pub metric: f64,
    /// `‖V‖‖W2‖‖W1‖/64`, bounding `|f(x) − f(y)| / ‖x − y‖`.
    pub output: f64,
}

pub fn lipschitz_bound(net: &Net) -> LipschitzBound {
    let w1 = linalg::spectral_norm(&net.w1, 1e-8);
    let w2 = linalg::spectral_norm(&net.w2, 1e-8);
    let v = linalg::norm(&net.v);
    LipschitzBound { metric: w1 / 4.0, output: v * w2 * w1 / 64.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 30, learning_rate: 0.05, batch_size: 32 }
    }
}

/// Trains one denoising autoencoder layer `x ↦ σ(Wx̃ + b)` with a linear
/// decoder, where `x̃` zeroes each input with probability `dropout`.
/// Returns the clean reconstruction MSE after each epoch (entry 0 is before
/// training).
pub fn pretrain_layer(
    w: &mut Matrix,
    b: &mut [f64],
    x: &Matrix,
    dropout: f64,
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let (h, m) = (w.rows(), w.cols());
    check_dim(m, x.cols())?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::validation("pretraining needs at least one row"));
    }
    let mut dec = glorot(rng, m, h);
    let mut c = vec![0.0; m];
    let recon_mse = |w: &Matrix, b: &[f64], dec: &Matrix, c: &[f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let hid = layer(w, b, x.row(i));
            for k in 0..m {
                let r = c[k] + linalg::dot(dec.row(k), &hid) - x[(i, k)];
                total += r * r;
            }
        }
        total / (n * m) as f64
    };
    let mut history = vec![recon_mse(w, b, &dec, &c)];
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.clamp(1, n);
    let mut xt = vec![0.0; m];
    let mut gw = Matrix::zeros(h, m);
    let mut gb = vec![0.0; h];
    let mut gd = Matrix::zeros(m, h);
    let mut gc = vec![0.0; m];
    let mut resid = vec![0.0; m];
    let mut dh = vec![0.0; h];
    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            gw.data_mut().iter_mut().for_each(|v| *v = 0.0);
            gd.data_mut().iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            gc.iter_mut().for_each(|v| *v = 0.0);
            let scale = 2.0 / (chunk.len() * m) as f64;
            for &i in chunk {
                let xi = x.row(i);
                for k in 0..m {
                    xt[k] = if dropout > 0.0 && rng.gen::<f64>() < dropout { 0.0 } else { xi[k] };
                }
                let hid = layer(w, b, &xt);
                for k in 0..m {
                    resid[k] = scale * (c[k] + linalg::dot(dec.row(k), &hid) - xi[k]);
                }
                dh.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..m {
                    gc[k] += resid[k];
                    let drow = dec.row(k);
                    let grow = gd.row_mut(k);
                    for j in 0..h {
                        grow[j] += resid[k] * hid[j];
                        dh[j] += resid[k] * drow[j];
                    }
                }
                for j in 0..h {
                    let d = dh[j] * hid[j] * (1.0 - hid[j]);
                    gb[j] += d;
                    for (gv, xv) in gw.row_mut(j).iter_mut().zip(&xt) {
                        *gv += d * xv;
                    }
                }
            }
            let lr = cfg.learning_rate;
            w.data_mut().iter_mut().zip(gw.as_slice()).for_each(|(p, g)| *p -= lr * g);
            dec.data_mut().iter_mut().zip(gd.as_slice()).for_each(|(p, g)| *p -= lr * g);
            b.iter_mut().zip(&gb).for_each(|(p, g)| *p -= lr * g);
            c.iter_mut().zip(&gc).for_each(|(p, g)| *p -= lr * g);
        }
        let mse = recon_mse(w, b, &dec, &c);
        if !mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: history.len(), learning_rate: cfg.learning_rate });
        }
        history.push(mse);
    }
    Ok(history)
}

/// Layerwise denoising pretraining of `W1, b1` and then `W2, b2`.
pub fn pretrain_autoencoder(net: &mut Net, x: &Matrix, cfg: &PretrainConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let dropout = net.hyper.dropout_rate;
    pretrain_layer(&mut net.w1, &mut net.b1, x, dropout, cfg, rng)?;
    let h1 = Matrix::from_rows(&(0..x.rows()).map(|i| layer(&net.w1, &net.b1, x.row(i))).collect::<Vec<_>>())?;
    pretrain_layer(&mut net.w2, &mut net.b2, &h1, dropout, cfg, rng)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `C` on the training rows after the last epoch.
    pub final_cost: f64,
    /// Loss `L` after each epoch.
    pub trajectory: Vec<f64>,
    pub epochs_run: usize,
    pub learning_rate: f64,
}

/// Mini-batch gradient descent on `L = C + μ Σ W²`.
pub fn train_backprop(net: &mut Net, x: &Matrix, g01: &[f64], batch_size: usize, rng: &mut ChaCha8Rng) -> Result<TrainReport> {
    check_dim(x.rows(), g01.len())?;
    if let Some(bad) = g01.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::validation(format!("labels must lie in [0, 1], found {bad}")));
    }
    let n = x.rows();
    let lr = net.hyper.learning_rate;
    let batch = batch_size.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut trajectory = Vec::with_capacity(net.hyper.epochs);
    let mut params = net.params();
    for epoch in 0..net.hyper.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            let (_, grad) = net.loss_gradient(x, g01, chunk)?;
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
            net.set_params(&params)?;
        }
        let l = net.loss(x, g01)?;
        if !l.is_finite() || !net.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, learning_rate: lr });
        }
        trajectory.push(l);
    }
    Ok(TrainReport { final_cost: net.cost(x, g01)?, epochs_run: trajectory.len(), trajectory, learning_rate: lr })
}

/// Sampling intervals for per-net hyperparameters; bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperRanges {
    pub h1: (usize, usize),
    pub h2: (usize, usize),
    pub dropout: (f64, f64),
    /// Sampled log-uniformly.
    pub weight_decay: (f64, f64),
}

impl Default for HyperRanges {
    fn default() -> Self {
        HyperRanges { h1: (30, 70), h2: (15, 35), dropout: (0.0, 0.3), weight_decay: (1e-5, 1e-2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub k: usize,
    pub ranges: HyperRanges,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain: PretrainConfig,
    /// When false only the autoencoder pretraining runs.
    pub backprop: bool,
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 100,
            ranges: HyperRanges::default(),
            epochs: 60,
            learning_rate: 0.5,
            batch_size: 32,
            pretrain: PretrainConfig::default(),
            backprop: true,
            master_seed: 0,
        }
    }
}

impl EnsembleConfig {
    fn validate(&self) -> Result<()> {
        let r = &self.ranges;
        if self.k == 0 {
            return Err(Error::validation("ensemble size must be at least 1"));
        }
        if r.h1.0 == 0 || r.h1.0 > r.h1.1 || r.h2.0 == 0 || r.h2.0 > r.h2.1 {
            return Err(Error::validation("hidden widths need 1 <= min <= max"));
        }
        if !(0.0 <= r.dropout.0 && r.dropout.0 <= r.dropout.1 && r.dropout.1 < 1.0) {
            return Err(Error::validation("dropout range must lie in [0, 1)"));
        }
        if !(0.0 < r.weight_decay.0 && r.weight_decay.0 <= r.weight_decay.1) {
            return Err(Error::validation("weight decay range must be positive and ordered"));
        }
        if !(self.learning_rate > 0.0) || !(self.pretrain.learning_rate > 0.0) {
            return Err(Error::validation("learning rates must be positive"));
        }
        Ok(())
    }
}

/// Seed of net `index`, derived from the master seed alone.
pub fn net_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn sample_hyper(cfg: &EnsembleConfig, seed: u64, rng: &mut ChaCha8Rng) -> Hyper {
    let r = &cfg.ranges;
    let (lo, hi) = (log(r.weight_decay.0), log(r.weight_decay.1));
    Hyper {
        h1: rng.gen_range(r.h1.0..=r.h1.1),
        h2: rng.gen_range(r.h2.0..=r.h2.1),
        seed,
        dropout_rate: if r.dropout.1 > r.dropout.0 { rng.gen_range(r.dropout.0..r.dropout.1) } else { r.dropout.0 },
        weight_decay: if hi > lo { exp(rng.gen_range(lo..hi)) } else { r.weight_decay.0 },
        learning_rate: cfg.learning_rate,
        epochs: if cfg.backprop { cfg.epochs } else { 0 },
    }
}

/// Trains one ensemble member from its seed; retries once at half the
/// learning rate if the loss blows up.
pub fn train_member(x: &Matrix, g01: &[f64], cfg: &EnsembleConfig, seed: u64) -> Result<(Net, TrainReport)> {
    let attempt = |lr_scale: f64| -> Result<(Net, TrainReport)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hyper = sample_hyper(cfg, seed, &mut rng);
        hyper.learning_rate *= lr_scale;
        let mut net = Net::init(x.cols(), hyper, &mut rng);
        let pre = PretrainConfig { learning_rate: cfg.pretrain.learning_rate * lr_scale, ..cfg.pretrain };
        pretrain_autoencoder(&mut net, x, &pre, &mut rng)?;
        let report = train_backprop(&mut net, x, g01, cfg.batch_size, &mut rng)?;
        Ok((net, report))
    };
    match attempt(1.0) {
        Err(Error::NonFiniteLoss { .. }) => attempt(0.5),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEnsemble {
    pub nets: Vec<Net>,
    pub reports: Vec<TrainReport>,
    pub master_seed: u64,
    /// Indices of members that diverged twice and were dropped.
    pub failed: Vec<usize>,
    /// Range of the raw label scores, for mapping `f` back to label units.
    pub label_range: (f64, f64),
    pub schema_version: u32,
}

/// Fraction of members allowed to fail before the ensemble is rejected.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

pub fn train_ensemble(x: &Matrix, g01: &[f64], label_range: (f64, f64), cfg: &EnsembleConfig) -> Result<NetEnsemble> {
    cfg.validate()?;
    check_dim(x.rows(), g01.len())?;
    if x.rows() == 0 {
        return Err(Error::validation("no training rows"));
    }
    let mut nets = Vec::with_capacity(cfg.k);
    let mut reports = Vec::with_capacity(cfg.k);
    let mut failed = Vec::new();
    for i in 0..cfg.k {
        match train_member(x, g01, cfg, net_seed(cfg.master_seed, i)) {
            Ok((net, report)) => {
                nets.push(net);
                reports.push(report);
            }
            Err(Error::NonFiniteLoss { .. }) => failed.push(i),
            Err(e) => return Err(e),
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * cfg.k as f64 {
        return Err(Error::Internal(format!(
            "{} of {} nets diverged even at half the learning rate; lower the learning rate",
            failed.len(),
            cfg.k
        )));
    }
    Ok(NetEnsemble { nets, reports, master_seed: cfg.master_seed, failed, label_range, schema_version: ENSEMBLE_SCHEMA_VERSION })
}

impl NetEnsemble {
    pub fn from_nets(nets: Vec<Net>) -> Self {
        NetEnsemble { nets, reports: Vec::new(), master_seed: 0, failed: Vec::new(), label_range: (0.0, 1.0), schema_version: ENSEMBLE_SCHEMA_VERSION }
    }

    pub fn input_dim(&self) -> usize {
        self.nets.first().map_or(0, Net::input_dim)
    }

    pub fn representation_dim(&self) -> usize {
        self.nets.iter().map(|n| n.hyper.h1).sum()
    }

    /// `Ω*(x)`: first hidden layers concatenated in net order.
    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.representation_dim());
        for net in &self.nets {
            out.extend(net.hidden(x)?);
        }
        Ok(out)
    }

    pub fn representation_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| self.representation(x.row(i))).collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.representation_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Mean output `f(x) = (1/K) Σ f_i(x)` in `(0, 1)`.
    pub fn rank(&self, x: &[f64]) -> Result<f64> {
        if self.nets.is_empty() {
            return Err(Error::validation("empty ensemble"));
        }
        let mut s = 0.0;
        for net in &self.nets {
            s += net.forward(x)?.f;
        }
        Ok(s / self.nets.len() as f64)
    }

    pub fn ranks(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows()).map(|i| self.rank(x.row(i))).collect()
    }

    /// `f` mapped back to the raw label scale.
    pub fn rank_on_label_scale(&self, x: &[f64]) -> Result<f64> {
        let (lo, hi) = self.label_range;
        Ok(lo + self.rank(x)? * (hi - lo))
    }

    /// `‖Ω*(x) − Ω*(y)‖`.
    pub fn dnn_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(linalg::dist(&self.representation(x)?, &self.representation(y)?))
    }
}
