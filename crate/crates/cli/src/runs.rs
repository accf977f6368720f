use std::path::Path;
use std::time::Instant;

use hflgen::bounds::discrete::exact_bounds;
use hflgen::bounds::{
    glm_cmi_bound_mc, glm_taylor_gen, glm_true_gen, glm_wasserstein_bound, subtree_bound_mc,
    wasserstein_bound_mc, BoundReport,
};
use hflgen::dp_round::dp_empirical_vs_bound;
use hflgen::risk::gen_error_mc;
use hflgen::{Algorithm, Error, KernelKind, Loss, MonteCarlo};
use serde_json::{json, Value};

use crate::config::{BoundChoice, ExperimentConfig, Loaded, Point};
use crate::output::{line_chart, out_files, write_report, CsvSink, Curve};
use crate::CliError;

pub const GLM_COLUMNS: &[&str] = &[
    "axis",
    "x",
    "true_gen",
    "taylor_gen",
    "wasserstein_bound",
    "bound_over_taylor",
    "gen_mc",
    "gen_mc_se",
];

pub const BOUNDS_COLUMNS: &[&str] = &[
    "axis",
    "x",
    "family",
    "metric",
    "layer",
    "contribution",
    "std_error",
    "total",
    "total_std_error",
];

pub const DP_COLUMNS: &[&str] = &["schedule", "epsilon_total", "bound", "gen_mc", "gen_mc_se", "dominates"];

fn mc(config: &ExperimentConfig) -> MonteCarlo {
    MonteCarlo::new(config.trials.outer, config.seed).with_inner(config.trials.inner)
}

fn axis(config: &ExperimentConfig) -> &'static str {
    config.sweep.as_ref().map_or("none", |s| s.axis.name())
}

fn report(command: &str, loaded: &Loaded, sink: &CsvSink, outputs: &[&str], started: Instant) -> Value {
    json!({
        "command": command,
        "schema": loaded.config.schema,
        "config_hash": loaded.config.hash(),
        "input_digest": loaded.input_digest,
        "seed": loaded.config.seed,
        "rows": sink.json_rows(),
        "outputs": outputs,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
    })
}

/// The leaf-average closed forms against a Monte Carlo cross-check, one
/// row per sweep point, plus the comparison chart.
pub fn run_glm(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let config = &loaded.config;
    if !config.kernel.is_gaussian() {
        return Err(Error::Config("glm runs need a gaussian_location kernel".into()).into());
    }
    if config.loss != Loss::Absolute || config.algorithm.build() != Algorithm::LeafAverage {
        return Err(Error::Config("glm runs use the leaf average under absolute loss".into()).into());
    }
    let points = config.points()?;
    let (csv, svg, json) = out_files(out);
    let mut sink = CsvSink::create(&csv, &config.hash(), GLM_COLUMNS)?;
    let mc = mc(config);
    for point in &points {
        let p = point.glm()?;
        let truth = glm_true_gen(&p);
        let taylor = match glm_taylor_gen(&p) {
            Ok(t) => t,
            Err(Error::Domain(_)) if p.total_variance() == 0.0 => 0.0,
            Err(e) => return Err(e.into()),
        };
        let bound = glm_wasserstein_bound(&p).total;
        let ratio = if taylor > 0.0 { bound / taylor } else { f64::NAN };
        let gen = gen_error_mc(&point.model, &Algorithm::LeafAverage, &Loss::Absolute, &mc)?;
        sink.push(vec![
            axis(config).into(),
            point.x.into(),
            truth.into(),
            taylor.into(),
            bound.into(),
            ratio.into(),
            gen.mean.into(),
            gen.std_error.into(),
        ])?;
    }

    let xs: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| if p.x.is_nan() { (i + 1) as f64 } else { p.x })
        .collect();
    let column = |i: usize| -> Vec<f64> { sink.rows().iter().map(|r| r[i].num().unwrap()).collect() };
    let x_label = match config.sweep.as_ref() {
        Some(s) => match s.layer {
            Some(l) => format!("{} (layer {l})", s.axis.name()),
            None => format!("{} (every layer)", s.axis.name()),
        },
        None => "point".to_string(),
    };
    let chart = line_chart(
        &xs,
        &[
            Curve {
                label: "true generalization error",
                colour: "#1f77b4",
                ys: column(2),
            },
            Curve {
                label: "Wasserstein bound",
                colour: "#d62728",
                ys: column(4),
            },
        ],
        &x_label,
        "generalization error",
    );
    std::fs::write(&svg, chart)?;
    write_report(
        &json,
        &report("glm", loaded, &sink, &["results.csv", "comparison.svg", "report.json"], started),
    )?;
    Ok(())
}

fn push_report(sink: &mut CsvSink, axis: &str, x: f64, family: &str, r: &BoundReport) -> Result<(), CliError> {
    let metric = r.metric.map_or("none", |m| m.name());
    for c in &r.per_layer {
        sink.push(vec![
            axis.into(),
            x.into(),
            family.into(),
            metric.into(),
            (c.layer as f64).into(),
            c.contribution.into(),
            c.std_error.into(),
            r.total.into(),
            r.total_std_error.into(),
        ])?;
    }
    Ok(())
}

/// Per-layer contributions of every requested bound family.
pub fn run_bounds(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let config = &loaded.config;
    let points = config.points()?;
    let algorithm = config.algorithm.build();
    let contract = config.loss.lipschitz();
    let lipschitz = config.lipschitz.unwrap_or(contract.constant);
    let mc = mc(config);
    // Refuse unsupported requests before any file is touched.
    if config.bounds.contains(&BoundChoice::Cmi) {
        match config.kernel.kind() {
            KernelKind::DiscreteFinite { .. } if algorithm == Algorithm::LeafAverage => {}
            KernelKind::DiscreteFinite { .. } => {
                return Err(Error::Unsupported("exact cmi models the leaf average only".into()).into())
            }
            KernelKind::GaussianLocation { .. } if config.kernel.pinned().is_empty() => {}
            _ => {
                return Err(Error::Unsupported(
                    "cmi is available for discrete kernels and the unpinned gaussian location model".into(),
                )
                .into())
            }
        }
    }
    let (csv, _, json) = out_files(out);
    let mut sink = CsvSink::create(&csv, &config.hash(), BOUNDS_COLUMNS)?;
    let axis = axis(config);
    for point in &points {
        let Point { x, model } = point;
        for choice in &config.bounds {
            match choice {
                BoundChoice::Wasserstein => {
                    let r = wasserstein_bound_mc(model, &algorithm, lipschitz, contract.metric, &mc)?;
                    push_report(&mut sink, axis, *x, "wasserstein", &r)?;
                }
                BoundChoice::Subtree => {
                    let r = subtree_bound_mc(model, &algorithm, lipschitz, contract.metric, &mc)?;
                    push_report(&mut sink, axis, *x, "subtree", &r)?;
                }
                BoundChoice::Cmi if model.kernel.is_discrete() => {
                    let exact = exact_bounds(model, config.flip)?;
                    push_report(&mut sink, axis, *x, "wasserstein_exact", &exact.wasserstein)?;
                    push_report(&mut sink, axis, *x, "cmi", &exact.cmi)?;
                }
                BoundChoice::Cmi => {
                    let r = glm_cmi_bound_mc(&point.glm()?, &algorithm, &mc)?;
                    push_report(&mut sink, axis, *x, "cmi", &r)?;
                }
            }
        }
    }
    write_report(&json, &report("bounds", loaded, &sink, &["results.csv", "report.json"], started))?;
    Ok(())
}

/// The private aggregation round against its bound, one row per epsilon
/// schedule.
pub fn run_dp(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let config = &loaded.config;
    let Some(dp) = &config.dp else {
        return Err(Error::Config("dp runs need a \"dp\" section".into()).into());
    };
    if config.sweep.is_some() {
        return Err(Error::Config("dp runs sweep over epsilon schedules; drop \"sweep\"".into()).into());
    }
    if !matches!(config.loss.range(), Some((lo, hi)) if lo >= 0.0 && hi <= 1.0) {
        return Err(Error::Contract("dp runs need a loss bounded in [0, 1]".into()).into());
    }
    let model = config.base_model()?;
    let plans = dp
        .schedules()
        .iter()
        .map(|eps| Ok((eps.clone(), dp.plan(eps)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    for (_, plan) in &plans {
        plan.validate_for(&model.topology)?;
    }
    let (csv, _, json) = out_files(out);
    let mut sink = CsvSink::create(&csv, &config.hash(), DP_COLUMNS)?;
    let mc = mc(config);
    for (eps, plan) in &plans {
        let cmp = dp_empirical_vs_bound(&model, plan, &config.loss, &mc)?;
        let schedule: Vec<String> = eps.iter().map(|e| format!("{e:.16e}")).collect();
        sink.push(vec![
            schedule.join(";").into(),
            eps.iter().sum::<f64>().into(),
            cmp.bound.total.into(),
            cmp.gen.mean.into(),
            cmp.gen.std_error.into(),
            cmp.dominates.into(),
        ])?;
    }
    write_report(&json, &report("dp", loaded, &sink, &["results.csv", "report.json"], started))?;
    Ok(())
}
