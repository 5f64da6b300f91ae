//! The five pipeline commands. Results go to files in the output directory;
//! progress and timings go to the log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use distreg::evalcv::{
    biomarkers, compare_representations, fit_functional, fit_scalar, paired_difference, spearman_matrix,
    write_biomarkers_csv, write_cv_table_csv, write_replications_csv, write_spearman_csv, CvTable, Outcome, Transform,
    BIOMARKER_KINDS,
};
use distreg::ingest::{join_outcomes, load_epochs, synthetic_start, write_epochs, write_outcomes, EpochWindow};
use distreg::represent::{barycenter, pooled_grid, represent_on_grid, write_curves_csv};
use distreg::sofr::{coef_curve, write_coef_curve_csv, FunctionalFit, PathPoint, ScalarFit, SmoothingCriterion};
use distreg::synthgen::simulate_cohort;
use distreg::{Curve, Execution, RepresentationKind, SubjectSample};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Runs `f` and logs how long it took.
pub fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    log::info!("{name}: started");
    let out = f();
    match &out {
        Ok(_) => log::info!("{name}: done in {:.2?}", start.elapsed()),
        Err(e) => log::error!("{name}: failed after {:.2?}: {e}", start.elapsed()),
    }
    out
}

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

/// Opens `dir/name`, lets `f` fill it, and flushes.
fn write_file<E: std::fmt::Display>(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> std::result::Result<(), E>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = create(&path)?;
    f(&mut w).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    finish(w, &path)?;
    log::debug!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)
    })
}

/// The cohort named by the config: read from `[input]` or simulated.
pub fn load_cohort(config: &RunConfig) -> Result<Vec<SubjectSample>> {
    stage("load cohort", || {
        if let Some(input) = &config.input {
            let epochs = load_epochs(&input.epochs, input.window)?;
            let samples = join_outcomes(&epochs, &input.outcomes, input.min_epochs)?;
            log::info!("{} subjects with epochs and outcomes", samples.len());
            Ok(samples)
        } else if let Some(synthetic) = &config.synthetic {
            let design = synthetic.design()?;
            let seed = config.require_seed("simulation")?;
            Ok(simulate_cohort(&design, seed)?)
        } else {
            Err(CliError::Config("no data source".into()))
        }
    })
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let synthetic =
        config.synthetic.as_ref().ok_or_else(|| CliError::Config("simulate needs a [synthetic] table".into()))?;
    let design = synthetic.design()?;
    let dir = output_dir(config)?;
    let cohort = load_cohort(config)?;
    stage("write cohort", || {
        let window = EpochWindow::default();
        Ok(vec![
            write_file(dir, "epochs.csv", |w| write_epochs(w, &cohort, window, synthetic_start()))?,
            write_file(dir, "outcomes.csv", |w| write_outcomes(w, &cohort))?,
            write_json(dir, "design.json", &design)?,
        ])
    })
}

/// Pointwise mean curve per binary group (`group0`, `group1`), or a single
/// `all` curve when any subject lacks a binary label.
pub fn group_barycenters(samples: &[SubjectSample], curves: &[Curve]) -> Result<Vec<(String, Curve)>> {
    if samples.len() != curves.len() {
        return Err(CliError::Data(format!("{} subjects but {} curves", samples.len(), curves.len())));
    }
    if samples.iter().any(|s| s.outcome_binary.is_none()) {
        return Ok(vec![("all".into(), barycenter(curves)?)]);
    }
    let mut out = Vec::new();
    for g in [0u8, 1] {
        let members: Vec<Curve> =
            samples.iter().zip(curves).filter(|(s, _)| s.outcome_binary == Some(g)).map(|(_, c)| c.clone()).collect();
        if !members.is_empty() {
            out.push((format!("group{g}"), barycenter(&members)?));
        }
    }
    Ok(out)
}

fn scalar_means_csv<W: Write>(w: W, samples: &[SubjectSample]) -> std::io::Result<()> {
    let mut w = w;
    writeln!(w, "subject_id,group,mean")?;
    for s in samples {
        let g = s.outcome_binary.map_or("NA".to_string(), |g| g.to_string());
        writeln!(w, "{},{},{}", s.subject_id, g, s.mean())?;
    }
    Ok(())
}

pub fn cmd_represent(config: &RunConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let dir = output_dir(config)?;
    let samples = load_cohort(config)?;
    let mut written = Vec::new();
    for transform in config.transforms() {
        let data = transform.apply(&samples);
        let t = transform.name();
        let grid = pooled_grid(&data, &config.grid)?;
        for &kind in &config.representations {
            stage(&format!("represent {kind} ({t})"), || {
                if kind == RepresentationKind::ScalarMean {
                    written.push(write_file(dir, &format!("scalar_mean_{t}.csv"), |w| scalar_means_csv(w, &data))?);
                    return Ok(());
                }
                let curves = represent_on_grid(&data, &grid, kind, &config.represent, exec)?;
                let labeled: Vec<(&str, &Curve)> =
                    data.iter().zip(&curves).map(|(s, c)| (s.subject_id.as_str(), c)).collect();
                written.push(write_file(dir, &format!("curves_{kind}_{t}.csv"), |w| write_curves_csv(w, &labeled))?);
                let bary = group_barycenters(&data, &curves)?;
                let labeled: Vec<(&str, &Curve)> = bary.iter().map(|(g, c)| (g.as_str(), c)).collect();
                written.push(write_file(dir, &format!("barycenter_{kind}_{t}.csv"), |w| write_curves_csv(w, &labeled))?);
                Ok(())
            })?;
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct FunctionalReport<'a> {
    representation: RepresentationKind,
    transform: Transform,
    outcome: Outcome,
    criterion: SmoothingCriterion,
    lambda: f64,
    lambda_scale: f64,
    /// Evaluation grid of the representation (sample space or levels).
    grid: &'a [f64],
    fit: &'a FunctionalFit,
    path: &'a [PathPoint],
}

#[derive(Debug, Serialize)]
struct ScalarReport<'a> {
    representation: RepresentationKind,
    transform: Transform,
    outcome: Outcome,
    fit: &'a ScalarFit,
}

fn fit_one(
    config: &RunConfig,
    dir: &Path,
    data: &[SubjectSample],
    kind: RepresentationKind,
    transform: Transform,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let t = transform.name();
    let outcome = config.outcome;
    if kind == RepresentationKind::ScalarMean {
        let fit = fit_scalar(data, outcome, &config.model())?;
        let report = ScalarReport { representation: kind, transform, outcome, fit: &fit };
        return Ok(vec![write_json(dir, &format!("fit_{kind}_{t}.json"), &report)?]);
    }
    let model = fit_functional(data, kind, outcome, &config.model(), exec)?;
    let fit = &model.selection.fit;
    let grid = model.grid.for_kind(kind);
    let report = FunctionalReport {
        representation: kind,
        transform,
        outcome,
        criterion: model.selection.criterion,
        lambda: fit.smoothing,
        lambda_scale: model.lambda_scale,
        grid,
        fit,
        path: &model.selection.path,
    };
    let json = write_json(dir, &format!("fit_{kind}_{t}.json"), &report)?;
    let curve = coef_curve(fit, &model.basis, &model.basis.normalized_grid(grid))?;
    let csv = write_file(dir, &format!("coef_{kind}_{t}.csv"), |w| write_coef_curve_csv(w, &curve))?;
    Ok(vec![json, csv])
}

pub fn cmd_fit(config: &RunConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let dir = output_dir(config)?;
    let samples = load_cohort(config)?;
    let mut written = Vec::new();
    let mut failed = Vec::new();
    for transform in config.transforms() {
        let data = transform.apply(&samples);
        for &kind in &config.representations {
            let name = format!("fit {kind} ({})", transform.name());
            match stage(&name, || fit_one(config, dir, &data, kind, transform, exec)) {
                Ok(paths) => written.extend(paths),
                Err(e @ CliError::Numerical(_)) => failed.push(format!("{name}: {e}")),
                Err(e) => return Err(e),
            }
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Numerical(failed.join("; ")));
    }
    Ok(written)
}

/// Paired `functional − scalar_mean` metric differences, one row per
/// functional cell whose scalar counterpart succeeded.
fn write_differences<W: Write>(w: W, table: &CvTable) -> std::result::Result<(), CliError> {
    let mut w = w;
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    writeln!(w, "representation,transform,outcome,baseline,mean_diff,lo95,hi95").map_err(io)?;
    for cell in &table.cells {
        if cell.representation == RepresentationKind::ScalarMean {
            continue;
        }
        let (Ok(a), Some(Ok(b))) =
            (&cell.result, table.get(RepresentationKind::ScalarMean, cell.transform).map(|c| &c.result))
        else {
            continue;
        };
        let d = paired_difference(a, b)?;
        writeln!(
            w,
            "{},{},{},scalar_mean,{},{},{}",
            cell.representation,
            cell.transform.name(),
            cell.outcome.name(),
            d.mean,
            d.lower,
            d.upper
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn cmd_crossval(config: &RunConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let spec = config.cv_spec()?;
    let dir = output_dir(config)?;
    let samples = load_cohort(config)?;
    let table = stage("cross-validation", || {
        Ok(compare_representations(
            &samples,
            &config.representations,
            &config.transforms(),
            config.outcome,
            &spec,
            &config.model(),
            exec,
        )?)
    })?;
    let written = vec![
        write_file(dir, "cv_table.csv", |w| write_cv_table_csv(w, &table))?,
        write_file(dir, "cv_replications.csv", |w| write_replications_csv(w, &table))?,
        write_file(dir, "cv_differences.csv", |w| write_differences(w, &table))?,
    ];
    if table.failures() > 0 {
        return Err(CliError::Numerical(format!("{} cross-validation cell(s) failed; see cv_table.csv", table.failures())));
    }
    Ok(written)
}

pub fn cmd_biomarkers(config: &RunConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let dir = output_dir(config)?;
    let samples = load_cohort(config)?;
    let model = config.model();
    let mut written = Vec::new();
    for transform in config.transforms() {
        let t = transform.name();
        let data = transform.apply(&samples);
        stage(&format!("biomarkers ({t})"), || {
            let models = BIOMARKER_KINDS
                .iter()
                .map(|&kind| fit_functional(&data, kind, config.outcome, &model, exec))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let scalar = fit_scalar(&data, config.outcome, &model)?;
            let table = biomarkers(&data, &models, &scalar, &config.represent, exec)?;
            let rho = spearman_matrix(&table)?;
            written.push(write_file(dir, &format!("biomarkers_{t}.csv"), |w| write_biomarkers_csv(w, &table))?);
            written.push(write_file(dir, &format!("spearman_{t}.csv"), |w| write_spearman_csv(w, &rho))?);
            Ok(())
        })?;
    }
    Ok(written)
}
