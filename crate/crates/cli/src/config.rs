//! Run configuration: one TOML file per run, with a section per subcommand.
//!
//! ```toml
//! seed = 3
//! out = "runs/a"
//!
//! [synth]
//! kind = "sources"
//! snr = 10.0
//!
//! [rbm]
//! input = "runs/a/x.mat"
//! hidden_units = 16
//! ```
//!
//! Relative paths inside the file resolve against the file's directory.
//! Every section falls back to its defaults, so an empty file is valid.

use std::fs;
use std::path::{Path, PathBuf};

use deepmri::dbn::FineTuneConfig;
use deepmri::embed::{ConstraintMode, EmbedConfig};
use deepmri::eval::{DepthExperimentConfig, InputScaling, LogRegConfig};
use deepmri::rbm::{HiddenSampling, RbmTrainConfig};
use deepmri::synth::{self, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Threaded into every stochastic stage.
    pub seed: u64,
    pub out: PathBuf,
    pub synth: SynthSection,
    pub rbm: RbmSection,
    pub dbn: DbnSection,
    pub finetune: FineTuneSection,
    pub embed: EmbedSection,
    pub eval: EvalSection,
    pub plot: PlotSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            synth: SynthSection::default(),
            rbm: RbmSection::default(),
            dbn: DbnSection::default(),
            finetune: FineTuneSection::default(),
            embed: EmbedSection::default(),
            eval: EvalSection::default(),
            plot: PlotSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    None,
    /// Per-column z-score.
    #[default]
    Zscore,
    /// Mask below the grand mean, remove the mean image, then z-score.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    #[default]
    Sources,
    Sweep,
    Labeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub grid: [usize; 2],
    /// Equal-width sources on a lattice; overrides the default layout.
    pub sources: Option<usize>,
    pub width: f64,
    pub centers: Option<Vec<[f64; 2]>>,
    pub widths: Option<Vec<f64>>,
    pub overlap: f64,
    pub timepoints: usize,
    /// Defaults to 10, or to the labeled-data level for `labeled`.
    pub snr: Option<f64>,
    pub levels: Vec<f64>,
    pub n_per_class: usize,
    pub effect: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthSpec::default();
        Self {
            kind: SynthKind::Sources,
            grid: [d.grid.0, d.grid.1],
            sources: None,
            width: 2.0,
            centers: None,
            widths: None,
            overlap: d.overlap,
            timepoints: d.timepoints,
            snr: None,
            levels: vec![0.0, 2.0, 4.0, 6.0],
            n_per_class: 100,
            effect: synth::DEFAULT_EFFECT,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64) -> Result<SynthSpec, CliError> {
        let grid = (self.grid[0], self.grid[1]);
        let base = match self.kind {
            SynthKind::Labeled => SynthSpec::labeled(),
            _ => SynthSpec::default(),
        };
        let mut spec = match self.sources {
            Some(r) => SynthSpec {
                snr: base.snr,
                ..SynthSpec::lattice(grid, r, self.width)
            },
            None => SynthSpec {
                grid,
                centers: synth::lattice_centers(grid, 4, 2),
                ..base
            },
        };
        if let Some(c) = &self.centers {
            spec.centers = c.iter().map(|p| (p[0], p[1])).collect();
        }
        if let Some(w) = &self.widths {
            spec.widths = w.clone();
        }
        spec.overlap = self.overlap;
        spec.timepoints = self.timepoints;
        if let Some(snr) = self.snr {
            spec.snr = snr;
        }
        spec.seed = seed;
        spec.validate()
            .map_err(|e| CliError::validation(format!("synth: {e}")))?;
        if self.kind == SynthKind::Sweep && self.levels.is_empty() {
            return Err(CliError::validation("synth: levels must be non-empty"));
        }
        if self.kind == SynthKind::Labeled && (self.n_per_class == 0 || !self.effect.is_finite()) {
            return Err(CliError::validation(
                "synth: n_per_class must be >= 1 and effect finite",
            ));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    Spin,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmSection {
    pub input: Option<PathBuf>,
    pub preprocess: Preprocess,
    pub hidden_units: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub cd_steps: usize,
    pub momentum: f64,
    pub sampling: Sampling,
    pub sample_visible: bool,
}

impl Default for RbmSection {
    fn default() -> Self {
        let d = RbmTrainConfig::default();
        Self {
            input: None,
            preprocess: Preprocess::Zscore,
            hidden_units: d.hidden_units,
            epsilon: d.epsilon,
            lambda: d.lambda,
            batch_size: d.batch_size,
            epochs: d.epochs,
            cd_steps: d.cd_steps,
            momentum: d.momentum,
            sampling: Sampling::Spin,
            sample_visible: d.sample_visible,
        }
    }
}

impl RbmSection {
    pub fn train_config(&self, seed: u64) -> Result<RbmTrainConfig, CliError> {
        let cfg = RbmTrainConfig {
            hidden_units: self.hidden_units,
            epsilon: self.epsilon,
            lambda: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            cd_steps: self.cd_steps,
            seed,
            momentum: self.momentum,
            sampling: match self.sampling {
                Sampling::Spin => HiddenSampling::Spin,
                Sampling::MeanField => HiddenSampling::MeanField,
            },
            sample_visible: self.sample_visible,
            ..RbmTrainConfig::default()
        };
        cfg.validate()
            .map_err(|e| CliError::validation(format!("rbm: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnSection {
    pub input: Option<PathBuf>,
    pub preprocess: Preprocess,
    pub layers: Vec<usize>,
    pub epsilon: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DbnSection {
    fn default() -> Self {
        let d = DepthExperimentConfig::default();
        Self {
            input: None,
            preprocess: Preprocess::Zscore,
            layers: d.layer_sizes,
            epsilon: d.pretrain.epsilon,
            lambda: d.pretrain.lambda,
            batch_size: d.pretrain.batch_size,
            epochs: d.pretrain.epochs,
        }
    }
}

impl DbnSection {
    pub fn pretrain_config(&self, seed: u64) -> Result<RbmTrainConfig, CliError> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(CliError::validation(
                "dbn: layers must be non-empty positive widths",
            ));
        }
        let cfg = RbmTrainConfig {
            epsilon: self.epsilon,
            lambda: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..RbmTrainConfig::default()
        };
        cfg.validate()
            .map_err(|e| CliError::validation(format!("dbn: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSection {
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub preprocess: Preprocess,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub class_weights: bool,
}

impl Default for FineTuneSection {
    fn default() -> Self {
        let d = FineTuneConfig::default();
        Self {
            model: None,
            input: None,
            labels: None,
            preprocess: Preprocess::Zscore,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            l2: d.l2,
            class_weights: d.class_weights,
        }
    }
}

impl FineTuneSection {
    pub fn fine_tune_config(&self, seed: u64) -> Result<FineTuneConfig, CliError> {
        let cfg = FineTuneConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            l2: self.l2,
            class_weights: self.class_weights,
            classes: None,
        };
        cfg.validate()
            .map_err(|e| CliError::validation(format!("finetune: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub input: Option<PathBuf>,
    pub preprocess: Preprocess,
    pub k: usize,
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub osc_window: usize,
    pub osc_tol: f64,
    /// `exact-distance` or `cap`.
    pub mode: String,
}

impl Default for EmbedSection {
    fn default() -> Self {
        let d = EmbedConfig::default();
        Self {
            input: None,
            preprocess: Preprocess::None,
            k: d.k,
            beta: d.beta,
            max_iters: d.max_iters,
            tol: d.tol,
            osc_window: d.osc_window,
            osc_tol: d.osc_tol,
            mode: d.mode.to_string(),
        }
    }
}

impl EmbedSection {
    pub fn embed_config(&self, seed: u64) -> Result<EmbedConfig, CliError> {
        let mode: ConstraintMode = self
            .mode
            .parse()
            .map_err(|e| CliError::validation(format!("embed: {e}")))?;
        let cfg = EmbedConfig {
            k: self.k,
            beta: self.beta,
            max_iters: self.max_iters,
            tol: self.tol,
            osc_window: self.osc_window,
            osc_tol: self.osc_tol,
            mode,
            seed,
        };
        cfg.validate()
            .map_err(|e| CliError::validation(format!("embed: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    /// Spatial maps (and time courses) against ground truth.
    #[default]
    Match,
    /// A fine-tuned network's predictions against labels.
    Classify,
    /// Cross-validated raw versus hidden-layer features.
    Depth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub kind: EvalKind,
    pub estimate_sm: Option<PathBuf>,
    pub estimate_tc: Option<PathBuf>,
    pub truth_sm: Option<PathBuf>,
    pub truth_tc: Option<PathBuf>,
    /// Observed data; enables the PCA baseline for `match`.
    pub input: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub preprocess: Preprocess,
    pub folds: usize,
    pub knn_k: usize,
    /// `global` or `per-column` scaling inside each fold.
    pub scaling: String,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = DepthExperimentConfig::default();
        Self {
            kind: EvalKind::Match,
            estimate_sm: None,
            estimate_tc: None,
            truth_sm: None,
            truth_tc: None,
            input: None,
            model: None,
            labels: None,
            preprocess: Preprocess::Zscore,
            folds: d.folds,
            knn_k: d.knn_k,
            scaling: "global".into(),
            pretrain_epochs: d.pretrain.epochs,
            finetune_epochs: d.fine_tune.epochs,
        }
    }
}

impl EvalSection {
    pub fn depth_config(
        &self,
        dbn: &DbnSection,
        seed: u64,
    ) -> Result<DepthExperimentConfig, CliError> {
        let d = DepthExperimentConfig::default();
        let scaling = match self.scaling.as_str() {
            "global" => InputScaling::Global,
            "per-column" => InputScaling::PerColumn,
            other => {
                return Err(CliError::validation(format!(
                    "eval: unknown scaling `{other}`"
                )))
            }
        };
        let mut pretrain = dbn.pretrain_config(seed)?;
        pretrain.epochs = self.pretrain_epochs;
        pretrain
            .validate()
            .map_err(|e| CliError::validation(format!("eval: {e}")))?;
        let fine_tune = FineTuneConfig {
            epochs: self.finetune_epochs,
            seed,
            ..d.fine_tune
        };
        fine_tune
            .validate()
            .map_err(|e| CliError::validation(format!("eval: {e}")))?;
        if self.folds < 2 || self.knn_k == 0 {
            return Err(CliError::validation(
                "eval: folds must be >= 2 and knn_k >= 1",
            ));
        }
        Ok(DepthExperimentConfig {
            layer_sizes: dbn.layers.clone(),
            pretrain,
            fine_tune,
            logreg: LogRegConfig::default(),
            knn_k: self.knn_k,
            folds: self.folds,
            scaling,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// 2-D positions colored by a label column.
    #[default]
    Scatter,
    /// Matrix on a diverging scale centered at zero.
    Heatmap,
    /// Two-column `x y` table drawn as a curve.
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub kind: PlotKind,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub title: String,
    /// Output file name inside the output directory.
    pub output: Option<String>,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            kind: PlotKind::Scatter,
            input: None,
            labels: None,
            title: String::new(),
            output: None,
        }
    }
}

impl RunConfig {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("config: {}", e.message())))
    }

    /// Applies `section.key=value` overrides, the value parsed as TOML
    /// (bare words fall back to strings).
    pub fn with_overrides(self, sets: &[String]) -> Result<Self, CliError> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut table =
            toml::Table::try_from(&self).map_err(|e| CliError::runtime(e.to_string()))?;
        for set in sets {
            let (key, raw) = set.split_once('=').ok_or_else(|| {
                CliError::validation(format!("override `{set}` is not key=value"))
            })?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            insert(&mut table, &path, value)
                .map_err(|m| CliError::validation(format!("override `{set}`: {m}")))?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::validation(format!("config: {}", e.message())))
    }

    /// The effective configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        let optional = [
            &mut self.rbm.input,
            &mut self.dbn.input,
            &mut self.finetune.model,
            &mut self.finetune.input,
            &mut self.finetune.labels,
            &mut self.embed.input,
            &mut self.eval.estimate_sm,
            &mut self.eval.estimate_tc,
            &mut self.eval.truth_sm,
            &mut self.eval.truth_tc,
            &mut self.eval.input,
            &mut self.eval.model,
            &mut self.eval.labels,
            &mut self.plot.input,
            &mut self.plot.labels,
        ];
        for p in optional.into_iter().flatten() {
            fix(p);
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn insert(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), String> {
    match path {
        [] => Err("empty key".into()),
        [leaf] => {
            table.insert((*leaf).to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry((*head).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(inner) => insert(inner, rest, value),
                _ => Err(format!("`{head}` is not a section")),
            }
        }
    }
}

/// The input path or a validation error naming the missing key.
pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::validation(format!("missing `{key}`")))?;
    if !p.exists() {
        return Err(CliError::validation(format!(
            "`{key}` does not exist: {}",
            p.display()
        )));
    }
    Ok(p)
}
