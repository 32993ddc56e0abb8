//! Gaussian-visible, tanh-hidden restricted Boltzmann machine.
//!
//! The energy of a joint configuration is
//!
//! ```text
//! E(v, h) = sum_j (v_j - a_j)^2 / (2 sigma_j^2) - sum_i b_i h_i - sum_ij (v_j / sigma_j) W_ji h_i
//! ```
//!
//! with hidden units taking values in {-1, +1}. The conditional mean of a
//! hidden unit is therefore `tanh(b_i + sum_j (v_j / sigma_j) W_ji)` and the
//! visible conditional is Gaussian with mean `a_j + sigma_j sum_i W_ji h_i`
//! and deviation `sigma_j`.
//!
//! Training uses contrastive divergence with L1 weight decay. The L1 step is
//! applied to `W` only; biases are not regularized.

use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::data::{self, DataError, Dtype, SampleMatrix};

/// Largest hidden layer for which the exact likelihood is enumerated.
pub const MAX_EXACT_HIDDEN: usize = 16;

/// Deviation of the initial Gaussian weights.
pub const INIT_WEIGHT_SD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RbmError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("exact likelihood needs 2^{hidden} hidden states; limit is {max} hidden units")]
    TooManyHidden { hidden: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}: parameters became non-finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Visible unit model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisibleUnits {
    /// Real-valued Gaussian units with per-unit scale sigma.
    #[default]
    Gaussian,
    /// Real values in [-1, 1] (outputs of a tanh layer); the linear
    /// conditional mean is clipped to that range and sigma is 1.
    Bounded,
}

/// How hidden states are drawn during the Gibbs step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenSampling {
    /// ±1 spins with mean tanh(.)
    #[default]
    Spin,
    /// Use the conditional mean directly.
    MeanField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `V x H` visible-to-hidden weights.
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub sigma: Array1<f64>,
    pub visible: VisibleUnits,
}

impl RbmParams {
    pub fn zeros(visible: usize, hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((visible, hidden)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
            sigma: Array1::ones(visible),
            visible: VisibleUnits::Gaussian,
        }
    }

    /// Small seeded Gaussian weights, zero biases, unit sigma.
    pub fn init(visible: usize, hidden: usize, units: VisibleUnits, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_WEIGHT_SD).expect("valid deviation");
        let weights = Array2::from_shape_simple_fn((visible, hidden), || normal.sample(rng));
        Self {
            weights,
            visible: units,
            ..Self::zeros(visible, hidden)
        }
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn validate(&self) -> Result<(), RbmError> {
        let (v, h) = self.weights.dim();
        if v == 0 || h == 0 {
            return Err(RbmError::InvalidParams(format!(
                "empty weight matrix {v}x{h}"
            )));
        }
        check_len("visible bias", v, self.visible_bias.len())?;
        check_len("sigma", v, self.sigma.len())?;
        check_len("hidden bias", h, self.hidden_bias.len())?;
        let all = self
            .weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .chain(&self.sigma);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(RbmError::InvalidParams("non-finite parameter".into()));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(RbmError::InvalidParams(
                "sigma entries must be positive".into(),
            ));
        }
        if self.visible == VisibleUnits::Bounded && self.sigma.iter().any(|&s| s != 1.0) {
            return Err(RbmError::InvalidParams(
                "bounded visible units require unit sigma".into(),
            ));
        }
        Ok(())
    }

    /// Mean absolute weight.
    pub fn mean_abs_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum::<f64>() / self.weights.len() as f64
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), RbmError> {
    if expected != found {
        return Err(RbmError::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmTrainConfig {
    pub hidden_units: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub cd_steps: usize,
    pub seed: u64,
    pub momentum: f64,
    pub sampling: HiddenSampling,
    /// Draw Gaussian visible reconstructions instead of using their mean.
    pub sample_visible: bool,
    pub visible: VisibleUnits,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            epsilon: 0.08,
            lambda: 0.1,
            batch_size: 5,
            epochs: 100,
            cd_steps: 1,
            seed: 0,
            momentum: 0.0,
            sampling: HiddenSampling::Spin,
            sample_visible: false,
            visible: VisibleUnits::Gaussian,
        }
    }
}

impl RbmTrainConfig {
    pub fn validate(&self) -> Result<(), RbmError> {
        let bad = |msg: &str| Err(RbmError::InvalidConfig(msg.into()));
        if self.hidden_units == 0 {
            return bad("hidden_units must be >= 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.cd_steps == 0 {
            return bad("cd_steps must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Mean squared error between data and the mean-field one-step reconstruction.
    pub reconstruction_error: Vec<f64>,
    pub mean_abs_weight: Vec<f64>,
}

/// Ascent direction on the log-likelihood (data statistics minus model statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmGradient {
    fn zeros(v: usize, h: usize) -> Self {
        Self {
            weights: Array2::zeros((v, h)),
            visible_bias: Array1::zeros(v),
            hidden_bias: Array1::zeros(h),
        }
    }

    /// All components flattened as `[W (row-major), a, b]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .copied()
            .collect()
    }
}

pub fn energy(
    v: ArrayView1<'_, f64>,
    h: ArrayView1<'_, f64>,
    p: &RbmParams,
) -> Result<f64, RbmError> {
    check_len("visible vector", p.n_visible(), v.len())?;
    check_len("hidden vector", p.n_hidden(), h.len())?;
    let scaled = &v / &p.sigma;
    let quadratic: f64 = Zip::from(&v)
        .and(&p.visible_bias)
        .and(&p.sigma)
        .fold(0.0, |acc, &vj, &aj, &sj| {
            acc + (vj - aj).powi(2) / (2.0 * sj * sj)
        });
    let hidden_term = p.hidden_bias.dot(&h);
    let coupling = scaled.dot(&p.weights.dot(&h));
    Ok(quadratic - hidden_term - coupling)
}

pub fn hidden_mean(v: ArrayView1<'_, f64>, p: &RbmParams) -> Result<Array1<f64>, RbmError> {
    check_len("visible vector", p.n_visible(), v.len())?;
    let input = (&v / &p.sigma).dot(&p.weights) + &p.hidden_bias;
    Ok(input.mapv(f64::tanh))
}

/// Row-wise [`hidden_mean`] for a `N x V` batch.
pub fn hidden_mean_batch(v: ArrayView2<'_, f64>, p: &RbmParams) -> Result<Array2<f64>, RbmError> {
    check_len("visible columns", p.n_visible(), v.ncols())?;
    let scaled = &v / &p.sigma.view().insert_axis(Axis(0));
    let mut input = scaled.dot(&p.weights);
    input += &p.hidden_bias.view().insert_axis(Axis(0));
    input.mapv_inplace(f64::tanh);
    Ok(input)
}

/// Draws ±1 spins: entry i is +1 with probability `(1 + mean_i) / 2`.
pub fn sample_hidden(mean: ArrayView1<'_, f64>, rng: &mut impl Rng) -> Array1<f64> {
    mean.mapv(|m| spin(m, rng))
}

fn spin(mean: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    if u < (1.0 + mean) / 2.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn visible_mean(h: ArrayView1<'_, f64>, p: &RbmParams) -> Result<Array1<f64>, RbmError> {
    check_len("hidden vector", p.n_hidden(), h.len())?;
    let mut mean = &p.weights.dot(&h) * &p.sigma + &p.visible_bias;
    if p.visible == VisibleUnits::Bounded {
        mean.mapv_inplace(|x| x.clamp(-1.0, 1.0));
    }
    Ok(mean)
}

/// Row-wise [`visible_mean`] for a `N x H` batch.
pub fn visible_mean_batch(h: ArrayView2<'_, f64>, p: &RbmParams) -> Result<Array2<f64>, RbmError> {
    check_len("hidden columns", p.n_hidden(), h.ncols())?;
    let mut mean = h.dot(&p.weights.t());
    mean *= &p.sigma.view().insert_axis(Axis(0));
    mean += &p.visible_bias.view().insert_axis(Axis(0));
    if p.visible == VisibleUnits::Bounded {
        mean.mapv_inplace(|x| x.clamp(-1.0, 1.0));
    }
    Ok(mean)
}

/// Adds independent Gaussian noise with deviation sigma_j to each entry.
pub fn sample_visible(mean: ArrayView1<'_, f64>, p: &RbmParams, rng: &mut impl Rng) -> Array1<f64> {
    let mut out = mean.to_owned();
    for (x, &s) in out.iter_mut().zip(&p.sigma) {
        let z: f64 = StandardNormal.sample(rng);
        *x += s * z;
    }
    if p.visible == VisibleUnits::Bounded {
        out.mapv_inplace(|x| x.clamp(-1.0, 1.0));
    }
    out
}

/// Contrastive divergence estimate of the likelihood gradient on one batch.
/// Returns the gradient and the batch reconstruction error.
pub fn cd_gradient(
    batch: ArrayView2<'_, f64>,
    p: &RbmParams,
    cfg: &RbmTrainConfig,
    rng: &mut impl Rng,
) -> Result<(RbmGradient, f64), RbmError> {
    let n = batch.nrows();
    if n == 0 {
        return Err(RbmError::EmptyBatch);
    }
    let h0 = hidden_mean_batch(batch, p)?;

    let recon = visible_mean_batch(h0.view(), p)?;
    let recon_err = (&batch - &recon).mapv(|d| d * d).mean().unwrap_or(0.0);

    let mut h_state = draw_hidden(&h0, cfg.sampling, rng);
    let mut v_neg = Array2::zeros(batch.raw_dim());
    let mut h_neg = h0.clone();
    for step in 0..cfg.cd_steps {
        v_neg = visible_mean_batch(h_state.view(), p)?;
        if cfg.sample_visible {
            for mut row in v_neg.rows_mut() {
                let noisy = sample_visible(row.view(), p, rng);
                row.assign(&noisy);
            }
        }
        h_neg = hidden_mean_batch(v_neg.view(), p)?;
        if step + 1 < cfg.cd_steps {
            h_state = draw_hidden(&h_neg, cfg.sampling, rng);
        }
    }

    let sigma_row = p.sigma.view().insert_axis(Axis(0));
    let pos = (&batch / &sigma_row).t().dot(&h0);
    let neg = (&v_neg / &sigma_row).t().dot(&h_neg);
    let inv_n = 1.0 / n as f64;
    let weights = (pos - neg) * inv_n;
    let visible_bias = (&batch - &v_neg).sum_axis(Axis(0)) * inv_n / p.sigma.mapv(|s| s * s);
    let hidden_bias = (&h0 - &h_neg).sum_axis(Axis(0)) * inv_n;
    Ok((
        RbmGradient {
            weights,
            visible_bias,
            hidden_bias,
        },
        recon_err,
    ))
}

fn draw_hidden(mean: &Array2<f64>, sampling: HiddenSampling, rng: &mut impl Rng) -> Array2<f64> {
    match sampling {
        HiddenSampling::MeanField => mean.clone(),
        HiddenSampling::Spin => mean.mapv(|m| spin(m, rng)),
    }
}

/// Momentum buffers for the parameter updates.
#[derive(Debug, Clone)]
struct Velocity(RbmGradient);

fn apply_update(
    p: &mut RbmParams,
    grad: &RbmGradient,
    cfg: &RbmTrainConfig,
    vel: Option<&mut Velocity>,
) {
    let eps = cfg.epsilon;
    let shrink = eps * cfg.lambda;
    let mut step = RbmGradient {
        weights: &grad.weights * eps - &p.weights.mapv(|w| shrink * sign(w)),
        visible_bias: &grad.visible_bias * eps,
        hidden_bias: &grad.hidden_bias * eps,
    };
    if let Some(Velocity(v)) = vel {
        if cfg.momentum > 0.0 {
            v.weights = &v.weights * cfg.momentum + &step.weights;
            v.visible_bias = &v.visible_bias * cfg.momentum + &step.visible_bias;
            v.hidden_bias = &v.hidden_bias * cfg.momentum + &step.hidden_bias;
            step = v.clone();
        }
    }
    p.weights += &step.weights;
    p.visible_bias += &step.visible_bias;
    if p.visible == VisibleUnits::Bounded {
        p.visible_bias.mapv_inplace(|a| a.clamp(-1.0, 1.0));
    }
    p.hidden_bias += &step.hidden_bias;
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One CD-k step on `batch` without momentum. Returns the updated
/// parameters and the batch reconstruction error.
pub fn cd1_update(
    batch: ArrayView2<'_, f64>,
    p: &RbmParams,
    cfg: &RbmTrainConfig,
    rng: &mut impl Rng,
) -> Result<(RbmParams, f64), RbmError> {
    let (grad, err) = cd_gradient(batch, p, cfg, rng)?;
    let mut next = p.clone();
    apply_update(&mut next, &grad, cfg, None);
    Ok((next, err))
}

/// Trains an RBM from scratch on `data`.
pub fn train(
    data: &SampleMatrix,
    cfg: &RbmTrainConfig,
) -> Result<(RbmParams, TrainTrace), RbmError> {
    cfg.validate()?;
    if cfg.visible == VisibleUnits::Gaussian && !looks_standardized(data) {
        warn!("training data columns are not z-scored; Gaussian units assume unit variance");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = RbmParams::init(data.cols(), cfg.hidden_units, cfg.visible, &mut rng);
    let trace = train_from(&mut params, data, cfg, &mut rng)?;
    Ok((params, trace))
}

/// Continues training `params` in place.
pub fn train_from(
    params: &mut RbmParams,
    data: &SampleMatrix,
    cfg: &RbmTrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainTrace, RbmError> {
    cfg.validate()?;
    params.validate()?;
    check_len("data columns", params.n_visible(), data.cols())?;
    let n = data.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = Velocity(RbmGradient::zeros(params.n_visible(), params.n_hidden()));
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sq_err = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.values().select(Axis(0), chunk);
            let (grad, err) = cd_gradient(batch.view(), params, cfg, rng)?;
            apply_update(params, &grad, cfg, Some(&mut velocity));
            sq_err += err * chunk.len() as f64;
        }
        let mean_abs = params.mean_abs_weight();
        if !(sq_err.is_finite() && mean_abs.is_finite()) {
            return Err(RbmError::Diverged { epoch });
        }
        trace.reconstruction_error.push(sq_err / n as f64);
        trace.mean_abs_weight.push(mean_abs);
    }
    Ok(trace)
}

fn looks_standardized(data: &SampleMatrix) -> bool {
    data.values().columns().into_iter().all(|col| {
        let (mean, sd) = data::mean_and_population_sd(col);
        mean.abs() < 1e-6 && (sd == 0.0 || (sd - 1.0).abs() < 1e-6)
    })
}

/// Negates every hidden unit whose weight column sums to a negative value,
/// together with its hidden bias.
pub fn flip_negative_fields(p: &RbmParams) -> RbmParams {
    let mut out = p.clone();
    for (i, mut col) in out.weights.columns_mut().into_iter().enumerate() {
        if col.sum() < 0.0 {
            col.mapv_inplace(|w| -w);
            out.hidden_bias[i] = -out.hidden_bias[i];
        }
    }
    out
}

/// Hidden means for every sample: a `samples x H` matrix of time courses.
pub fn feed_forward_timecourses(
    data: &SampleMatrix,
    p: &RbmParams,
) -> Result<SampleMatrix, RbmError> {
    let h = hidden_mean_batch(data.view(), p)?;
    Ok(SampleMatrix::new(h)?)
}

/// Receptive fields as an `H x V` matrix (one spatial map per row).
pub fn receptive_fields(p: &RbmParams) -> Result<SampleMatrix, RbmError> {
    let mut fields = p.weights.t().to_owned();
    fields *= &p.sigma.view().insert_axis(Axis(0));
    Ok(SampleMatrix::new(fields)?)
}

/// Enumerates every hidden configuration in {-1, +1}^H, bit i of the index
/// selecting the sign of unit i.
fn hidden_states(h: usize) -> impl Iterator<Item = Array1<f64>> {
    (0u64..1 << h)
        .map(move |bits| Array1::from_shape_fn(h, |i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

struct HiddenMarginal {
    states: Vec<Array1<f64>>,
    /// Unnormalized log weight of each hidden state after integrating out v.
    log_weights: Vec<f64>,
    log_z: f64,
}

fn hidden_marginal(p: &RbmParams) -> Result<HiddenMarginal, RbmError> {
    let h = p.n_hidden();
    if h > MAX_EXACT_HIDDEN {
        return Err(RbmError::TooManyHidden {
            hidden: h,
            max: MAX_EXACT_HIDDEN,
        });
    }
    if p.visible != VisibleUnits::Gaussian {
        return Err(RbmError::InvalidParams(
            "exact likelihood needs Gaussian visible units".into(),
        ));
    }
    let a_over_s = &p.visible_bias / &p.sigma;
    let states: Vec<_> = hidden_states(h).collect();
    // Integrating v_j out of exp(-E) leaves exp(a_j c_j / sigma_j + c_j^2 / 2)
    // with c = W h, times the Gaussian normalizer sqrt(2 pi) sigma_j.
    let log_weights: Vec<f64> = states
        .iter()
        .map(|s| {
            let c = p.weights.dot(s);
            p.hidden_bias.dot(s) + a_over_s.dot(&c) + 0.5 * c.dot(&c)
        })
        .collect();
    let gauss_norm: f64 = p
        .sigma
        .iter()
        .map(|s| 0.5 * (2.0 * std::f64::consts::PI).ln() + s.ln())
        .sum();
    let log_z = log_sum_exp(&log_weights) + gauss_norm;
    Ok(HiddenMarginal {
        states,
        log_weights,
        log_z,
    })
}

/// Mean log-likelihood of the rows of `data`, with the partition function
/// computed by enumerating the hidden states.
pub fn exact_log_likelihood(data: &SampleMatrix, p: &RbmParams) -> Result<f64, RbmError> {
    p.validate()?;
    check_len("data columns", p.n_visible(), data.cols())?;
    let marginal = hidden_marginal(p)?;
    let mut total = 0.0;
    for v in data.values().rows() {
        let quadratic: f64 = Zip::from(&v)
            .and(&p.visible_bias)
            .and(&p.sigma)
            .fold(0.0, |acc, &vj, &aj, &sj| {
                acc + (vj - aj).powi(2) / (2.0 * sj * sj)
            });
        let input = (&v / &p.sigma).dot(&p.weights) + &p.hidden_bias;
        let free: f64 = input
            .iter()
            .map(|&x| std::f64::consts::LN_2 + log_cosh(x))
            .sum();
        total += free - quadratic;
    }
    Ok(total / data.rows() as f64 - marginal.log_z)
}

/// Exact gradient of [`exact_log_likelihood`] with respect to W, a and b.
pub fn exact_loglik_gradient(data: &SampleMatrix, p: &RbmParams) -> Result<RbmGradient, RbmError> {
    p.validate()?;
    check_len("data columns", p.n_visible(), data.cols())?;
    let marginal = hidden_marginal(p)?;
    let (nv, nh) = p.weights.dim();
    let n = data.rows() as f64;

    let mut grad = RbmGradient::zeros(nv, nh);
    let sigma_row = p.sigma.view().insert_axis(Axis(0));
    let h_data = hidden_mean_batch(data.view(), p)?;
    grad.weights = (data.values() / &sigma_row).t().dot(&h_data) / n;
    grad.visible_bias = (data.values() - &p.visible_bias.view().insert_axis(Axis(0)))
        .sum_axis(Axis(0))
        / n
        / p.sigma.mapv(|s| s * s);
    grad.hidden_bias = h_data.sum_axis(Axis(0)) / n;

    let log_norm = log_sum_exp(&marginal.log_weights);
    let a_over_s = &p.visible_bias / &p.sigma;
    for (s, lw) in marginal.states.iter().zip(&marginal.log_weights) {
        let prob = (lw - log_norm).exp();
        let c = p.weights.dot(s);
        // E[v_j / sigma_j | h] = a_j / sigma_j + c_j
        let v_over_s = &a_over_s + &c;
        for j in 0..nv {
            for i in 0..nh {
                grad.weights[[j, i]] -= prob * v_over_s[j] * s[i];
            }
            grad.visible_bias[j] -= prob * c[j] / p.sigma[j];
        }
        grad.hidden_bias.scaled_add(-prob, s);
    }
    Ok(grad)
}

const MODEL_MAGIC: &str = "DEEPMRI-RBM";

pub(crate) fn write_params_payload(out: &mut Vec<u8>, p: &RbmParams, dtype: Dtype) {
    data::encode_floats(out, p.weights.iter().copied(), dtype);
    data::encode_floats(out, p.visible_bias.iter().copied(), dtype);
    data::encode_floats(out, p.hidden_bias.iter().copied(), dtype);
}

/// Writes the model with 32-bit float payloads. Sigma is stored only when it
/// differs from all ones.
pub fn save_rbm(p: &RbmParams, path: impl AsRef<Path>) -> Result<(), RbmError> {
    p.validate()?;
    let unit_sigma = p.sigma.iter().all(|&s| s == 1.0);
    let units = match p.visible {
        VisibleUnits::Gaussian => "gaussian",
        VisibleUnits::Bounded => "bounded",
    };
    let header = format!(
        "{MODEL_MAGIC} 1\nvisible {}\nhidden {}\nsigma {}\nunits {units}\ndtype f32\nend\n",
        p.n_visible(),
        p.n_hidden(),
        if unit_sigma { "unit" } else { "vector" },
    );
    let mut out = header.into_bytes();
    write_params_payload(&mut out, p, Dtype::F32);
    if !unit_sigma {
        data::encode_floats(&mut out, p.sigma.iter().copied(), Dtype::F32);
    }
    std::fs::write(path, out).map_err(DataError::from)?;
    Ok(())
}

pub fn load_rbm(path: impl AsRef<Path>) -> Result<RbmParams, RbmError> {
    let bytes = data::read_file(path.as_ref())?;
    let malformed = |m: String| RbmError::Data(DataError::MalformedHeader(m));
    let (lines, body) = data::split_header(&bytes, MODEL_MAGIC).map_err(malformed)?;
    data::check_version(&lines).map_err(malformed)?;
    let nv = data::parse_usize(&lines, "visible").map_err(malformed)?;
    let nh = data::parse_usize(&lines, "hidden").map_err(malformed)?;
    let unit_sigma = match data::header_field(&lines, "sigma").as_deref() {
        Some(["unit"]) => true,
        Some(["vector"]) => false,
        other => return Err(malformed(format!("bad sigma mode {other:?}"))),
    };
    let visible = match data::header_field(&lines, "units").as_deref() {
        Some(["gaussian"]) => VisibleUnits::Gaussian,
        Some(["bounded"]) => VisibleUnits::Bounded,
        other => return Err(malformed(format!("bad unit kind {other:?}"))),
    };
    if data::header_field(&lines, "dtype").as_deref() != Some(&["f32"]) {
        return Err(malformed("only f32 payloads are supported".into()));
    }
    let count = nv * nh + nv + nh + if unit_sigma { 0 } else { nv };
    if body.len() != count * 4 {
        return Err(RbmError::Data(DataError::SizeMismatch {
            expected: count * 4,
            found: body.len(),
        }));
    }
    let values = data::decode_floats(body, Dtype::F32);
    let (w, rest) = values.split_at(nv * nh);
    let (a, rest) = rest.split_at(nv);
    let (b, rest) = rest.split_at(nh);
    let params = RbmParams {
        weights: Array2::from_shape_vec((nv, nh), w.to_vec()).expect("length checked"),
        visible_bias: Array1::from(a.to_vec()),
        hidden_bias: Array1::from(b.to_vec()),
        sigma: if unit_sigma {
            Array1::ones(nv)
        } else {
            Array1::from(rest.to_vec())
        },
        visible,
    };
    params.validate()?;
    Ok(params)
}
