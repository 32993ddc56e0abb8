//! Deep belief networks: a stack of tanh layers pretrained greedily as RBMs,
//! topped by a softmax head and fine-tuned with backpropagation.
//!
//! The first layer is a Gaussian-visible RBM on the (z-scored) data. Upper
//! layers see the previous layer's mean activations, which live in
//! [-1, 1], and are trained as RBMs with bounded visible units.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{self, DataError, Dtype, SampleMatrix};
use crate::rbm::{self, RbmError, RbmTrainConfig, TrainTrace, VisibleUnits};

#[derive(Debug, Error)]
pub enum DbnError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model has no softmax head")]
    NoSoftmax,
    #[error("depth {depth} out of range 1..={layers}")]
    DepthOutOfRange { depth: usize, layers: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Rbm(#[from] RbmError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Affine map `x W + b`, `W` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights);
        out += &self.bias.view().insert_axis(Axis(0));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    pub layers: Vec<DenseLayer>,
    pub softmax: Option<DenseLayer>,
}

impl DbnModel {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Output width of every hidden layer, bottom to top.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::outputs).collect()
    }

    pub fn classes(&self) -> Option<usize> {
        self.softmax.as_ref().map(DenseLayer::outputs)
    }

    /// The bottom `depth` layers without a softmax head.
    pub fn truncated(&self, depth: usize) -> Result<DbnModel, DbnError> {
        self.check_depth(depth)?;
        Ok(DbnModel {
            layers: self.layers[..depth].to_vec(),
            softmax: None,
        })
    }

    fn check_depth(&self, depth: usize) -> Result<(), DbnError> {
        if depth == 0 || depth > self.depth() {
            return Err(DbnError::DepthOutOfRange {
                depth,
                layers: self.depth(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DbnError> {
        if self.layers.is_empty() {
            return Err(DbnError::InvalidModel("no hidden layers".into()));
        }
        let mut width = self.layers[0].inputs();
        let mut all = self.layers.iter().chain(self.softmax.as_ref());
        if let Some(head) = &self.softmax {
            if head.outputs() < 2 {
                return Err(DbnError::InvalidModel(
                    "softmax needs at least 2 classes".into(),
                ));
            }
        }
        all.try_for_each(|layer| {
            if layer.inputs() != width || layer.bias.len() != layer.outputs() {
                return Err(DbnError::InvalidModel(format!(
                    "layer expects {} inputs, previous width is {width}",
                    layer.inputs()
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|x| !x.is_finite())
            {
                return Err(DbnError::InvalidModel("non-finite parameter".into()));
            }
            width = layer.outputs();
            Ok(())
        })
    }
}

/// Greedy layer-wise pretraining. Layer `i` uses seed `cfg.seed + i` and
/// `layer_sizes[i]` hidden units; `cfg.hidden_units` and `cfg.visible` are
/// overridden per layer. Returns the stack and each layer's training trace.
pub fn pretrain(
    data: &SampleMatrix,
    layer_sizes: &[usize],
    cfg: &RbmTrainConfig,
) -> Result<(DbnModel, Vec<TrainTrace>), DbnError> {
    if layer_sizes.is_empty() {
        return Err(DbnError::InvalidConfig(
            "layer_sizes must be non-empty".into(),
        ));
    }
    if let Some(i) = layer_sizes.iter().position(|&w| w == 0) {
        return Err(DbnError::InvalidConfig(format!("layer {i} has zero width")));
    }
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut traces = Vec::with_capacity(layer_sizes.len());
    let mut input = data.clone();
    for (i, &width) in layer_sizes.iter().enumerate() {
        let layer_cfg = RbmTrainConfig {
            hidden_units: width,
            visible: if i == 0 {
                VisibleUnits::Gaussian
            } else {
                VisibleUnits::Bounded
            },
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (params, trace) = rbm::train(&input, &layer_cfg)?;
        if i + 1 < layer_sizes.len() {
            input = rbm::feed_forward_timecourses(&input, &params)?;
        }
        layers.push(DenseLayer {
            weights: params.weights,
            bias: params.hidden_bias,
        });
        traces.push(trace);
    }
    Ok((
        DbnModel {
            layers,
            softmax: None,
        },
        traces,
    ))
}

/// Activations of every hidden layer, bottom to top.
pub fn forward(m: &DbnModel, x: &SampleMatrix) -> Result<Vec<Array2<f64>>, DbnError> {
    forward_view(m, x.view())
}

fn forward_view(m: &DbnModel, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>, DbnError> {
    if m.layers.is_empty() {
        return Err(DbnError::InvalidModel("no hidden layers".into()));
    }
    if x.ncols() != m.input_width() {
        return Err(DbnError::DimensionMismatch {
            what: "input columns",
            expected: m.input_width(),
            found: x.ncols(),
        });
    }
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(m.depth());
    for layer in &m.layers {
        let input = acts.last().map_or(x, |a| a.view());
        let mut out = layer.affine(input);
        out.mapv_inplace(f64::tanh);
        acts.push(out);
    }
    Ok(acts)
}

/// Activations at `depth` (1-based).
pub fn hidden_features(
    m: &DbnModel,
    x: &SampleMatrix,
    depth: usize,
) -> Result<SampleMatrix, DbnError> {
    m.check_depth(depth)?;
    let truncated = m.truncated(depth)?;
    let mut acts = forward(&truncated, x)?;
    Ok(SampleMatrix::new(acts.pop().expect("depth >= 1"))?)
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row.mapv_inplace(|p| p / total);
    }
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per row and the class probabilities.
pub fn predict(m: &DbnModel, x: &SampleMatrix) -> Result<(Vec<usize>, Array2<f64>), DbnError> {
    let head = m.softmax.as_ref().ok_or(DbnError::NoSoftmax)?;
    let acts = forward(m, x)?;
    let mut probs = head.affine(acts.last().expect("non-empty").view());
    softmax_rows(&mut probs);
    let labels = probs.rows().into_iter().map(argmax).collect();
    Ok((labels, probs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    /// Weight each sample's loss by the inverse frequency of its class.
    pub class_weights: bool,
    /// Number of classes when attaching a new head; defaults to `max label + 1`.
    pub classes: Option<usize>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 10,
            seed: 0,
            l2: 0.0,
            class_weights: false,
            classes: None,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<(), DbnError> {
        let bad = |m: &str| Err(DbnError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be >= 0");
        }
        if matches!(self.classes, Some(c) if c < 2) {
            return bad("classes must be >= 2");
        }
        Ok(())
    }
}

/// Gradient of the fine-tuning loss, one entry per hidden layer plus the head.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnGradient {
    pub layers: Vec<DenseLayer>,
    pub softmax: DenseLayer,
}

/// Mean (optionally weighted) cross-entropy plus `l2 / 2` times the squared
/// norm of every weight matrix, and its gradient. `sample_weights` default to 1.
pub fn loss_and_gradient(
    m: &DbnModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    l2: f64,
    sample_weights: Option<&[f64]>,
) -> Result<(f64, DbnGradient), DbnError> {
    let head = m.softmax.as_ref().ok_or(DbnError::NoSoftmax)?;
    let n = x.nrows();
    if labels.len() != n {
        return Err(DbnError::DimensionMismatch {
            what: "labels",
            expected: n,
            found: labels.len(),
        });
    }
    let classes = head.outputs();
    check_labels(labels, classes)?;
    let acts = forward_view(m, x)?;
    let top = acts.last().expect("non-empty");
    let mut probs = head.affine(top.view());
    softmax_rows(&mut probs);

    let weight = |i: usize| sample_weights.map_or(1.0, |w| w[i]);
    let mut loss = 0.0;
    // delta = d loss / d logits
    let mut delta = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let w = weight(i) / n as f64;
        loss -= w * probs[[i, y]].max(f64::MIN_POSITIVE).ln();
        delta[[i, y]] -= 1.0;
        delta.row_mut(i).mapv_inplace(|d| d * w);
    }
    let reg = |w: &Array2<f64>| w.iter().map(|v| v * v).sum::<f64>();
    loss += 0.5 * l2 * (m.layers.iter().map(|l| reg(&l.weights)).sum::<f64>() + reg(&head.weights));

    let softmax_grad = DenseLayer {
        weights: top.t().dot(&delta) + &head.weights * l2,
        bias: delta.sum_axis(Axis(0)),
    };
    let mut back = delta.dot(&head.weights.t());
    let mut layer_grads = Vec::with_capacity(m.depth());
    for (l, layer) in m.layers.iter().enumerate().rev() {
        // tanh' = 1 - a^2
        back.zip_mut_with(&acts[l], |d, &a| *d *= 1.0 - a * a);
        let input = if l == 0 { x } else { acts[l - 1].view() };
        layer_grads.push(DenseLayer {
            weights: input.t().dot(&back) + &layer.weights * l2,
            bias: back.sum_axis(Axis(0)),
        });
        if l > 0 {
            back = back.dot(&layer.weights.t());
        }
    }
    layer_grads.reverse();
    Ok((
        loss,
        DbnGradient {
            layers: layer_grads,
            softmax: softmax_grad,
        },
    ))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), DbnError> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(DbnError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn class_balance_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    labels
        .iter()
        .map(|&l| n / (present * counts[l] as f64))
        .collect()
}

/// Training loss after every epoch, evaluated on the full training set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FineTuneTrace {
    pub loss: Vec<f64>,
}

/// Supervised fine-tuning of every layer by mini-batch SGD on cross-entropy.
/// A zero-initialized softmax head is attached when absent.
pub fn fine_tune(
    m: &DbnModel,
    data: &SampleMatrix,
    labels: &[usize],
    cfg: &FineTuneConfig,
) -> Result<(DbnModel, FineTuneTrace), DbnError> {
    cfg.validate()?;
    m.validate()?;
    if labels.len() != data.rows() {
        return Err(DbnError::DimensionMismatch {
            what: "labels",
            expected: data.rows(),
            found: labels.len(),
        });
    }
    let mut model = m.clone();
    let classes = match (&model.softmax, cfg.classes) {
        (Some(head), _) => head.outputs(),
        (None, Some(c)) => c,
        (None, None) => labels.iter().max().map_or(2, |&l| (l + 1).max(2)),
    };
    check_labels(labels, classes)?;
    if model.softmax.is_none() {
        let top = *model.widths().last().expect("validated");
        model.softmax = Some(DenseLayer::zeros(top, classes));
    }
    let weights = cfg
        .class_weights
        .then(|| class_balance_weights(labels, classes));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut trace = FineTuneTrace::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.values().select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let wb: Option<Vec<f64>> = weights
                .as_ref()
                .map(|w| chunk.iter().map(|&i| w[i]).collect());
            let (_, grad) = loss_and_gradient(&model, xb.view(), &yb, cfg.l2, wb.as_deref())?;
            apply_gradient(&mut model, &grad, cfg.learning_rate);
        }
        let (loss, _) = loss_and_gradient(&model, data.view(), labels, cfg.l2, weights.as_deref())?;
        trace.loss.push(loss);
    }
    Ok((model, trace))
}

fn apply_gradient(m: &mut DbnModel, grad: &DbnGradient, lr: f64) {
    for (layer, g) in m.layers.iter_mut().zip(&grad.layers) {
        layer.weights.scaled_add(-lr, &g.weights);
        layer.bias.scaled_add(-lr, &g.bias);
    }
    let head = m.softmax.as_mut().expect("head attached");
    head.weights.scaled_add(-lr, &grad.softmax.weights);
    head.bias.scaled_add(-lr, &grad.softmax.bias);
}

const MODEL_MAGIC: &str = "DEEPMRI-DBN";

/// Writes the model with 32-bit float payloads: each hidden layer's weights
/// then bias, followed by the softmax head when present.
pub fn save_dbn(m: &DbnModel, path: impl AsRef<Path>) -> Result<(), DbnError> {
    m.validate()?;
    let mut widths = vec![m.input_width()];
    widths.extend(m.widths());
    let header = format!(
        "{MODEL_MAGIC} 1\nlayers {}\nwidths {}\nclasses {}\ndtype f32\nend\n",
        m.depth(),
        widths
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" "),
        m.classes().unwrap_or(0)
    );
    let mut out = header.into_bytes();
    for layer in m.layers.iter().chain(m.softmax.as_ref()) {
        data::encode_floats(&mut out, layer.weights.iter().copied(), Dtype::F32);
        data::encode_floats(&mut out, layer.bias.iter().copied(), Dtype::F32);
    }
    std::fs::write(path, out).map_err(DataError::from)?;
    Ok(())
}

pub fn load_dbn(path: impl AsRef<Path>) -> Result<DbnModel, DbnError> {
    let bytes = data::read_file(path.as_ref())?;
    let malformed = |m: String| DbnError::Data(DataError::MalformedHeader(m));
    let (lines, body) = data::split_header(&bytes, MODEL_MAGIC).map_err(malformed)?;
    data::check_version(&lines).map_err(malformed)?;
    let depth = data::parse_usize(&lines, "layers").map_err(malformed)?;
    let classes = data::parse_usize(&lines, "classes").map_err(malformed)?;
    let widths: Vec<usize> = data::header_field(&lines, "widths")
        .ok_or_else(|| malformed("missing `widths`".into()))?
        .iter()
        .map(|w| w.parse().map_err(|_| malformed(format!("bad width `{w}`"))))
        .collect::<Result<_, _>>()?;
    if depth == 0 || widths.len() != depth + 1 {
        return Err(malformed(format!(
            "{depth} layers need {} widths",
            depth + 1
        )));
    }
    if data::header_field(&lines, "dtype").as_deref() != Some(&["f32"]) {
        return Err(malformed("only f32 payloads are supported".into()));
    }
    let mut shapes: Vec<(usize, usize)> = widths.windows(2).map(|w| (w[0], w[1])).collect();
    if classes > 0 {
        shapes.push((widths[depth], classes));
    }
    let expected: usize = shapes.iter().map(|(i, o)| (i * o + o) * 4).sum();
    if body.len() != expected {
        return Err(DbnError::Data(DataError::SizeMismatch {
            expected,
            found: body.len(),
        }));
    }
    let values = data::decode_floats(body, Dtype::F32);
    let mut rest = values.as_slice();
    let mut layers: Vec<DenseLayer> = shapes
        .iter()
        .map(|&(i, o)| {
            let (w, tail) = rest.split_at(i * o);
            let (b, tail) = tail.split_at(o);
            rest = tail;
            DenseLayer {
                weights: Array2::from_shape_vec((i, o), w.to_vec()).expect("length checked"),
                bias: Array1::from(b.to_vec()),
            }
        })
        .collect();
    let softmax = (classes > 0).then(|| layers.pop().expect("head shape pushed"));
    let model = DbnModel { layers, softmax };
    model.validate()?;
    Ok(model)
}
