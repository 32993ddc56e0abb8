//! One function per subcommand. Each reads only declared file formats and
//! writes into `cfg.out`, starting with the effective `config.toml`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deepmri::data::{self, SampleMatrix};
use deepmri::{dbn, embed, eval, rbm, synth};

use crate::config::{require, EvalKind, PlotKind, Preprocess, RunConfig, SynthKind};
use crate::{plot, CliError};

fn prepare(m: &SampleMatrix, p: Preprocess) -> Result<SampleMatrix, CliError> {
    Ok(match p {
        Preprocess::None => m.clone(),
        Preprocess::Zscore => data::zscore_voxels(m)?,
        Preprocess::Full => data::preprocess(m)?.0,
    })
}

fn start(cfg: &RunConfig) -> Result<&Path, CliError> {
    let out = cfg.out.as_path();
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.echo())?;
    Ok(out)
}

fn write_ground_truth(gt: &synth::SynthGroundTruth, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    data::save_matrix(&gt.spatial_maps, dir.join("sm.mat"))?;
    data::save_matrix(&gt.time_courses, dir.join("tc.mat"))?;
    data::save_matrix(&gt.data, dir.join("x.mat"))?;
    Ok(())
}

/// `sources`: sm.mat, tc.mat, x.mat. `sweep`: one such set per level under
/// `level_<i>/` plus levels.txt. `labeled`: x.mat and labels.txt.
pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.synth;
    let spec = s.spec(cfg.seed)?;
    let out = start(cfg)?;
    match s.kind {
        SynthKind::Sources => write_ground_truth(&synth::generate(&spec)?, out)?,
        SynthKind::Sweep => {
            let mut levels = String::from("# index overlap\n");
            for (i, gt) in synth::overlap_sweep(&spec, &s.levels)?.iter().enumerate() {
                write_ground_truth(gt, &out.join(format!("level_{i}")))?;
                let _ = writeln!(levels, "{i} {}", s.levels[i]);
            }
            fs::write(out.join("levels.txt"), levels)?;
        }
        SynthKind::Labeled => {
            let (x, labels) = synth::generate_labeled(&spec, s.n_per_class, s.effect)?;
            data::save_matrix(&x, out.join("x.mat"))?;
            data::save_labels(&labels, out.join("labels.txt"))?;
        }
    }
    Ok(())
}

/// rbm.model, sm.mat (sign-aligned receptive fields), tc.mat (hidden means
/// per sample) and trace.txt.
pub fn train_rbm(cfg: &RunConfig) -> Result<(), CliError> {
    let r = &cfg.rbm;
    let train_cfg = r.train_config(cfg.seed)?;
    let input = require(&r.input, "rbm.input")?;
    let out = start(cfg)?;
    let x = prepare(&data::load_matrix(input)?, r.preprocess)?;
    let (params, trace) = rbm::train(&x, &train_cfg)?;
    let params = rbm::flip_negative_fields(&params);
    rbm::save_rbm(&params, out.join("rbm.model"))?;
    let mut sm = rbm::receptive_fields(&params)?;
    if let Some(g) = x.geometry() {
        sm = sm.with_geometry(g.clone())?;
    }
    data::save_matrix(&sm, out.join("sm.mat"))?;
    data::save_matrix(
        &rbm::feed_forward_timecourses(&x, &params)?,
        out.join("tc.mat"),
    )?;
    let mut text = String::from("# epoch reconstruction_error mean_abs_weight\n");
    for (e, (err, w)) in trace
        .reconstruction_error
        .iter()
        .zip(&trace.mean_abs_weight)
        .enumerate()
    {
        let _ = writeln!(text, "{e} {err:e} {w:e}");
    }
    fs::write(out.join("trace.txt"), text)?;
    Ok(())
}

/// dbn.model (no softmax head) and trace.txt.
pub fn dbn_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let d = &cfg.dbn;
    let pre = d.pretrain_config(cfg.seed)?;
    let input = require(&d.input, "dbn.input")?;
    let out = start(cfg)?;
    let x = prepare(&data::load_matrix(input)?, d.preprocess)?;
    let (model, traces) = dbn::pretrain(&x, &d.layers, &pre)?;
    dbn::save_dbn(&model, out.join("dbn.model"))?;
    let mut text = String::from("# layer epoch reconstruction_error mean_abs_weight\n");
    for (l, t) in traces.iter().enumerate() {
        for (e, (err, w)) in t
            .reconstruction_error
            .iter()
            .zip(&t.mean_abs_weight)
            .enumerate()
        {
            let _ = writeln!(text, "{l} {e} {err:e} {w:e}");
        }
    }
    fs::write(out.join("trace.txt"), text)?;
    Ok(())
}

/// dbn.model (with head), loss.txt and predictions.txt on the training data.
pub fn dbn_finetune(cfg: &RunConfig) -> Result<(), CliError> {
    let f = &cfg.finetune;
    let ft = f.fine_tune_config(cfg.seed)?;
    let model_path = require(&f.model, "finetune.model")?;
    let input = require(&f.input, "finetune.input")?;
    let labels_path = require(&f.labels, "finetune.labels")?;
    let out = start(cfg)?;
    let model = dbn::load_dbn(model_path)?;
    let x = prepare(&data::load_matrix(input)?, f.preprocess)?;
    let labels = data::load_labels(labels_path)?;
    let (tuned, trace) = dbn::fine_tune(&model, &x, &labels, &ft)?;
    dbn::save_dbn(&tuned, out.join("dbn.model"))?;
    let mut text = String::from("# epoch loss\n");
    for (e, l) in trace.loss.iter().enumerate() {
        let _ = writeln!(text, "{e} {l:e}");
    }
    fs::write(out.join("loss.txt"), text)?;
    let (pred, _) = dbn::predict(&tuned, &x)?;
    data::save_labels(&pred, out.join("predictions.txt"))?;
    Ok(())
}

/// positions.mat, report.txt and residual.txt.
pub fn embed(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.embed;
    let ecfg = e.embed_config(cfg.seed)?;
    let input = require(&e.input, "embed.input")?;
    let out = start(cfg)?;
    let x = prepare(&data::load_matrix(input)?, e.preprocess)?;
    let result = embed::embed(&x, &ecfg)?;
    data::save_matrix_as(
        &result.positions_matrix(),
        out.join("positions.mat"),
        data::Dtype::F64,
    )?;
    fs::write(out.join("report.txt"), result.report())?;
    let mut text = String::from("# iteration residual\n");
    for (i, r) in result.residual_trace.iter().enumerate() {
        let _ = writeln!(text, "{i} {r:e}");
    }
    fs::write(out.join("residual.txt"), text)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.eval.kind {
        EvalKind::Match => eval_match(cfg),
        EvalKind::Classify => eval_classify(cfg),
        EvalKind::Depth => eval_depth(cfg),
    }
}

/// match.txt; with time courses also fnc.mat (matched, sign-aligned
/// estimates in ground-truth order) and its modularity.
fn eval_match(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.eval;
    let est_sm_path = require(&e.estimate_sm, "eval.estimate_sm")?;
    let truth_sm_path = require(&e.truth_sm, "eval.truth_sm")?;
    let tcs = match (&e.estimate_tc, &e.truth_tc) {
        (None, None) => None,
        _ => Some((
            require(&e.estimate_tc, "eval.estimate_tc")?,
            require(&e.truth_tc, "eval.truth_tc")?,
        )),
    };
    let input = e
        .input
        .as_ref()
        .map(|_| require(&e.input, "eval.input"))
        .transpose()?;
    let out = start(cfg)?;

    let est = data::load_matrix(est_sm_path)?;
    let truth = data::load_matrix(truth_sm_path)?;
    let mut result = eval::match_components(&est, &truth)?;
    let mut text = String::new();
    let mut fnc = None;
    if let Some((est_tc_path, truth_tc_path)) = tcs {
        let est_tc = data::load_matrix(est_tc_path)?;
        result = result.with_time_courses(&est_tc, &data::load_matrix(truth_tc_path)?)?;
        let matched =
            ndarray::Array2::from_shape_fn((est_tc.rows(), result.pairs.len()), |(t, k)| {
                let p = &result.pairs[k];
                p.sign * est_tc.values()[[t, p.estimate]]
            });
        fnc = Some(eval::fnc(&SampleMatrix::new(matched)?)?);
    }
    let _ = writeln!(
        text,
        "mean_sm_correlation {:.6}",
        result.mean_sm_correlation
    );
    if let Some(tc) = result.mean_tc_correlation {
        let _ = writeln!(text, "mean_tc_correlation {tc:.6}");
    }
    if let Some(path) = input {
        let x = prepare(&data::load_matrix(path)?, e.preprocess)?;
        let pca = eval::pca_baseline(&x, truth.rows().min(x.rows()))?;
        let baseline = eval::match_components(&SampleMatrix::new(pca.components)?, &truth)?;
        let _ = writeln!(
            text,
            "pca_mean_sm_correlation {:.6}",
            baseline.mean_sm_correlation
        );
    }
    if let Some(c) = &fnc {
        let m = eval::modularity(c.view())?;
        let _ = writeln!(text, "fnc_modularity {:.6}", m.q);
        let _ = writeln!(text, "fnc_communities {}", m.communities());
        data::save_matrix_as(
            &SampleMatrix::new(c.clone())?,
            out.join("fnc.mat"),
            data::Dtype::F64,
        )?;
    }
    text.push_str("# ground_truth estimate sign sm_correlation tc_correlation\n");
    for (k, p) in result.pairs.iter().enumerate() {
        let tc = result
            .tc_correlations
            .as_ref()
            .map_or(String::from("-"), |c| format!("{:.6}", c[k]));
        let _ = writeln!(
            text,
            "pair {} {} {:+} {:.6} {tc}",
            p.ground_truth, p.estimate, p.sign as i32, p.correlation
        );
    }
    fs::write(out.join("match.txt"), text)?;
    Ok(())
}

fn f_score_report(pred: &[usize], truth: &[usize]) -> Result<String, CliError> {
    let mut text = format!("macro_f {:.6}\n", eval::macro_f_score(pred, truth)?);
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    let _ = writeln!(
        text,
        "accuracy {:.6}",
        correct as f64 / truth.len().max(1) as f64
    );
    for (class, f) in eval::per_class_f_scores(pred, truth)? {
        let _ = writeln!(text, "class_f {class} {f:.6}");
    }
    Ok(text)
}

/// classify.txt and predictions.txt.
fn eval_classify(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.eval;
    let model_path = require(&e.model, "eval.model")?;
    let input = require(&e.input, "eval.input")?;
    let labels_path = require(&e.labels, "eval.labels")?;
    let out = start(cfg)?;
    let model = dbn::load_dbn(model_path)?;
    let x = prepare(&data::load_matrix(input)?, e.preprocess)?;
    let labels = data::load_labels(labels_path)?;
    if labels.len() != x.rows() {
        return Err(CliError::runtime(format!(
            "{} labels for {} samples",
            labels.len(),
            x.rows()
        )));
    }
    let (pred, _) = dbn::predict(&model, &x)?;
    fs::write(out.join("classify.txt"), f_score_report(&pred, &labels)?)?;
    data::save_labels(&pred, out.join("predictions.txt"))?;
    Ok(())
}

/// depth.txt: per-depth, per-classifier fold scores.
fn eval_depth(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.eval;
    let dcfg = e.depth_config(&cfg.dbn, cfg.seed)?;
    let input = require(&e.input, "eval.input")?;
    let labels_path = require(&e.labels, "eval.labels")?;
    let out = start(cfg)?;
    let x = data::load_matrix(input)?;
    let labels = data::load_labels(labels_path)?;
    let table = eval::depth_experiment(&x, &labels, &dcfg)?;
    fs::write(out.join("depth.txt"), table.to_text())?;
    Ok(())
}

fn read_text_labels(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// `<kind>.svg`, or the configured output name.
pub fn plot(cfg: &RunConfig) -> Result<(), CliError> {
    let p = &cfg.plot;
    let input = require(&p.input, "plot.input")?;
    let labels_path = p
        .labels
        .as_ref()
        .map(|_| require(&p.labels, "plot.labels"))
        .transpose()?;
    let name = p.output.clone().unwrap_or_else(|| {
        match p.kind {
            PlotKind::Scatter => "scatter.svg",
            PlotKind::Heatmap => "heatmap.svg",
            PlotKind::Sweep => "sweep.svg",
        }
        .to_string()
    });
    let svg = match p.kind {
        PlotKind::Scatter => {
            let positions = data::load_matrix(input)?;
            if positions.cols() < 2 {
                return Err(CliError::validation(format!(
                    "plot.input has {} column(s); scatter needs 2",
                    positions.cols()
                )));
            }
            let labels = labels_path.map(read_text_labels).transpose()?;
            if let Some(ls) = &labels {
                if ls.len() != positions.rows() {
                    return Err(CliError::validation(format!(
                        "plot.labels has {} entries for {} points",
                        ls.len(),
                        positions.rows()
                    )));
                }
            }
            plot::scatter(positions.view(), labels.as_deref(), &p.title)
        }
        PlotKind::Heatmap => plot::heatmap(data::load_matrix(input)?.view(), &p.title),
        PlotKind::Sweep => {
            let points =
                plot::parse_table(&fs::read_to_string(input)?).map_err(CliError::validation)?;
            if points.is_empty() {
                return Err(CliError::validation("plot.input has no rows"));
            }
            plot::sweep(&points, &p.title, "level", "value")
        }
    };
    let out = start(cfg)?;
    fs::write(out.join(name), svg)?;
    Ok(())
}
