//! Command implementations with the exit-code contract:
//! 0 success/equivalent, 1 inequivalent or failed certificate,
//! 2 config error, 3 metric validation, 4 trapped under --strict,
//! 5 support violation.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use lenscat_core::cuspmap::{
    classical_scattering_map, lens_equivalent, sample_cusp_points, write_graph_csv,
    CuspSamplingSpec,
};
use lenscat_core::metric::{DiffeoField, GridSpec, MetricField, ScalarField};
use lenscat_core::sampling;
use lenscat_core::scattering::{
    check_non_trapping, scatter, sojourn_limit, write_lens_csv, BoundaryRay, NonTrappingSpec,
    ScatterOptions, ScatterResult,
};
use lenscat_core::Error as CoreError;

use crate::config::{CommandKind, ExperimentConfig, OutputFormat, TOOL_VERSION};

/// A command outcome that still produced a report: carries the exit code.
pub struct Outcome {
    pub exit_code: i32,
}

/// Failures mapped onto the exit-code contract.
pub enum Failure {
    /// exit 2
    Config(String),
    /// exit 3
    Metric(String),
    /// exit 4
    TrappedStrict(serde_json::Value),
    /// exit 5
    Support(String),
    /// exit 2 (I/O counts as a configuration problem: bad paths)
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Metric(_) => 3,
            Failure::TrappedStrict(_) => 4,
            Failure::Support(_) => 5,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Config(m) => format!("configuration error: {m}"),
            Failure::Io(m) => format!("i/o error: {m}"),
            Failure::Metric(m) => format!("metric validation failed: {m}"),
            Failure::TrappedStrict(v) => {
                format!("trapped ray under --strict: {v}")
            }
            Failure::Support(m) => format!("support violation: {m}"),
        }
    }
}

type CommandResult = Result<Outcome, Failure>;

fn read_json(path: &str) -> Result<serde_json::Value, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("cannot read {path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{path}: {e}")))
}

fn load_metric(path: &str) -> Result<MetricField, Failure> {
    let value = read_json(path)?;
    let field = MetricField::from_spec_value(&value)
        .map_err(|e| Failure::Config(format!("{path}: {e}")))?;
    field
        .validate()
        .map_err(|e| Failure::Metric(format!("{path}: {e}")))?;
    Ok(field)
}

fn load_diffeo(path: &str) -> Result<DiffeoField, Failure> {
    let value = read_json(path)?;
    DiffeoField::from_spec_value(&value).map_err(|e| Failure::Config(format!("{path}: {e}")))
}

fn load_scalar(path: &str, dim: usize) -> Result<ScalarField, Failure> {
    let value = read_json(path)?;
    let f = ScalarField::from_spec_value(&value)
        .map_err(|e| Failure::Config(format!("{path}: {e}")))?;
    if f.dim() != dim {
        return Err(Failure::Config(format!(
            "{path}: scalar field dimension {} does not match metric dimension {dim}",
            f.dim()
        )));
    }
    Ok(f)
}

fn pullback_or_support_failure(
    base: &MetricField,
    diffeo: &DiffeoField,
) -> Result<MetricField, Failure> {
    base.pullback(diffeo).map_err(|e| match e {
        CoreError::SupportViolation { .. } | CoreError::Invalid { .. } => {
            Failure::Support(e.to_string())
        }
        other => Failure::Metric(other.to_string()),
    })
}

fn write_text(path: Option<&str>, contents: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            if let Some(parent) = Path::new(p).parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)
                        .map_err(|e| Failure::Io(format!("cannot create {parent:?}: {e}")))?;
                }
            }
            fs::write(p, contents).map_err(|e| Failure::Io(format!("cannot write {p}: {e}")))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn csv_header_comment(config: &ExperimentConfig, columns: &str) -> String {
    format!(
        "# lenscat {TOOL_VERSION} command={} config={} columns={columns}\n",
        config.command,
        config.result_hash()
    )
}

fn sample_entries(field: &MetricField, count: usize, seed: u64) -> Vec<BoundaryRay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (t, z, v) = sampling::random_inward_entry(
                field.dim(),
                field.support_radius(),
                // Entries cover the interacting times plus a flat margin.
                field.time_radius() + 0.5,
                &mut rng,
            );
            BoundaryRay::new(t, z, v).expect("sampled entries are strictly inward")
        })
        .collect()
}

fn entry_json(entry: &BoundaryRay) -> serde_json::Value {
    json!({
        "t": entry.t,
        "z": entry.z.iter().copied().collect::<Vec<f64>>(),
        "v": entry.v.iter().copied().collect::<Vec<f64>>(),
    })
}

fn scatter_sweep(
    field: &MetricField,
    entries: &[BoundaryRay],
    l_max: Option<f64>,
) -> Vec<Result<ScatterResult, CoreError>> {
    let opts = ScatterOptions {
        l_max,
        ..ScatterOptions::default()
    };
    entries
        .par_iter()
        .map(|entry| scatter(field, entry, &opts))
        .collect()
}

pub fn run_scatter(config: &ExperimentConfig) -> CommandResult {
    let field = load_metric(&config.metric)?;
    let entries = sample_entries(&field, config.rays, config.seed);
    let outcomes = scatter_sweep(&field, &entries, config.l_max);

    let mut results = Vec::new();
    let mut trapped = 0usize;
    let mut max_length: f64 = 0.0;
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome {
            Ok(res) => {
                max_length = max_length.max(res.length);
                results.push(res);
            }
            Err(CoreError::TrappedRay { .. }) => {
                if config.strict {
                    return Err(Failure::TrappedStrict(entry_json(entry)));
                }
                trapped += 1;
            }
            Err(e) => return Err(Failure::Metric(e.to_string())),
        }
    }

    let mut csv = Vec::new();
    write_lens_csv(field.dim(), &results, &mut csv).expect("in-memory write");
    let mut text = csv_header_comment(config, "t,z_in,v_in,z_out,v_out,length,sojourn");
    text.push_str(&String::from_utf8(csv).expect("csv is utf-8"));
    write_text(config.out.as_deref(), &text)?;

    let summary = json!({
        "command": "scatter",
        "rays": entries.len(),
        "trapped": trapped,
        "max_length": max_length,
        "config": config.result_hash(),
    });
    let summary_text = serde_json::to_string_pretty(&summary).expect("summary");
    // keep stdout clean when the CSV itself streams there
    if config.out.is_some() {
        println!("{summary_text}");
    } else {
        eprintln!("{summary_text}");
    }
    Ok(Outcome { exit_code: 0 })
}

pub fn run_sojourn(config: &ExperimentConfig) -> CommandResult {
    let field = load_metric(&config.metric)?;
    let s_max = config
        .s_max
        .unwrap_or(1e4 * field.support_radius());
    let entries = sample_entries(&field, config.rays, config.seed);
    let opts = ScatterOptions {
        l_max: config.l_max,
        ..ScatterOptions::default()
    };
    let rows: Vec<_> = entries
        .par_iter()
        .map(|entry| {
            let res = scatter(&field, entry, &opts)?;
            let (value, decay) = sojourn_limit(&field, entry, s_max)?;
            Ok((res, value, decay))
        })
        .collect::<Vec<Result<_, CoreError>>>();

    let dim = field.dim();
    let mut body = String::new();
    let mut trapped = 0usize;
    let mut max_gap: f64 = 0.0;
    let mut kept = 0usize;
    for (entry, row) in entries.iter().zip(rows) {
        match row {
            Ok((res, value, decay)) => {
                kept += 1;
                let extrapolated = value - decay;
                max_gap = max_gap.max((extrapolated - res.sojourn).abs());
                body.push_str(&format!("{}", entry.t));
                for x in entry.z.iter().chain(entry.v.iter()) {
                    body.push_str(&format!(",{x}"));
                }
                body.push_str(&format!(
                    ",{},{},{},{},{}\n",
                    res.length, res.sojourn, value, decay, extrapolated
                ));
            }
            Err(CoreError::TrappedRay { .. }) => {
                if config.strict {
                    return Err(Failure::TrappedStrict(entry_json(entry)));
                }
                trapped += 1;
            }
            Err(e) => return Err(Failure::Metric(e.to_string())),
        }
    }

    let mut header = String::from("t");
    for i in 1..=dim {
        header.push_str(&format!(",z_in_{i}"));
    }
    for i in 1..=dim {
        header.push_str(&format!(",v_in_{i}"));
    }
    header.push_str(",length,sojourn_closed,sojourn_limit,decay_estimate,extrapolated\n");
    let mut text = csv_header_comment(
        config,
        "t,z_in,v_in,length,sojourn_closed,sojourn_limit,decay_estimate,extrapolated",
    );
    text.push_str(&header);
    text.push_str(&body);
    write_text(config.out.as_deref(), &text)?;

    let summary = json!({
        "command": "sojourn",
        "rays": entries.len(),
        "kept": kept,
        "trapped": trapped,
        "s_max": s_max,
        "max_extrapolation_gap": max_gap,
        "config": config.result_hash(),
    });
    let summary_text = serde_json::to_string_pretty(&summary).expect("summary");
    if config.out.is_some() {
        println!("{summary_text}");
    } else {
        eprintln!("{summary_text}");
    }
    Ok(Outcome { exit_code: 0 })
}

/// Splits the requested ray budget into a cusp-sampling lattice of at
/// least that many points.
fn cusp_spec_for(rays: usize, seed: u64) -> CuspSamplingSpec {
    let offset_count = 13usize;
    let xi_count = 5usize;
    let direction_count = rays.div_ceil(offset_count * xi_count).max(2);
    CuspSamplingSpec {
        direction_count,
        xi_count,
        offset_count,
        offset_fraction: 0.95,
        seed,
    }
}

pub fn run_compare(config: &ExperimentConfig) -> CommandResult {
    let g1 = load_metric(&config.metric)?;
    let g2 = match (&config.metric2, &config.diffeo) {
        (Some(path), _) => load_metric(path)?,
        (None, Some(path)) => {
            let diffeo = load_diffeo(path)?;
            pullback_or_support_failure(&g1, &diffeo)?
        }
        (None, None) => unreachable!("validated in config"),
    };
    let spec = cusp_spec_for(config.rays, config.seed);
    let report = lens_equivalent(&g1, &g2, &spec, config.tol)
        .map_err(|e| Failure::Metric(e.to_string()))?;

    if config.format == OutputFormat::Csv {
        // Graph exports alongside the JSON verdict, one file per metric.
        if let Some(out) = &config.out {
            let points = sample_cusp_points(
                g1.dim(),
                g1.support_radius(),
                g1.time_radius(),
                &spec,
            );
            for (field, suffix) in [(&g1, "g1"), (&g2, "g2")] {
                let graphs: Vec<_> = points
                    .par_iter()
                    .map(|p| classical_scattering_map(field, p))
                    .collect::<Result<_, _>>()
                    .map_err(|e| Failure::Metric(e.to_string()))?;
                let mut csv = Vec::new();
                write_graph_csv(field.dim(), &graphs, &mut csv).expect("in-memory write");
                let path = format!("{out}.{suffix}.csv");
                let mut text = csv_header_comment(config, "cusp graph");
                text.push_str(&String::from_utf8(csv).expect("csv is utf-8"));
                write_text(Some(&path), &text)?;
            }
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        write_text(config.out.as_deref(), &text)?;
        if config.out.is_some() {
            println!("{text}");
        }
    }
    Ok(Outcome {
        exit_code: if report.equivalent { 0 } else { 1 },
    })
}

pub fn run_check(config: &ExperimentConfig) -> CommandResult {
    let field = load_metric(&config.metric)?;
    let f = match &config.f {
        Some(path) => load_scalar(path, field.dim())?,
        None => ScalarField::quadratic(field.dim()),
    };
    let grid = GridSpec {
        seed: config.seed,
        ..GridSpec::default()
    };
    let admissibility = field
        .admissibility_report(&f, &grid)
        .map_err(|e| Failure::Metric(e.to_string()))?;
    let nt_spec = NonTrappingSpec {
        l_max: config
            .l_max
            .unwrap_or(50.0 * field.support_radius()),
        ..NonTrappingSpec::with_l_max_for(&field)
    };
    let non_trapping = check_non_trapping(&field, &nt_spec);

    let passed = admissibility.admissible && non_trapping.certificate;
    let merged = json!({
        "command": "check",
        "admissibility": admissibility,
        "non_trapping": non_trapping,
        "passed": passed,
        "config": config.result_hash(),
    });
    let text = serde_json::to_string_pretty(&merged).expect("report serializes");
    write_text(config.out.as_deref(), &text)?;
    if config.out.is_some() {
        println!("{text}");
    }
    Ok(Outcome {
        exit_code: if passed { 0 } else { 1 },
    })
}

pub fn run_pullback(config: &ExperimentConfig) -> CommandResult {
    let field = load_metric(&config.metric)?;
    let diffeo = load_diffeo(config.diffeo.as_deref().expect("validated in config"))?;
    let pulled = pullback_or_support_failure(&field, &diffeo)?;
    let tabulated = pulled
        .tabulate(config.grid_time, config.grid_space)
        .map_err(|e| Failure::Metric(e.to_string()))?;
    // The tabulation must itself satisfy the support invariants.
    tabulated.validate().map_err(|e| match e {
        CoreError::SupportViolation { .. } => Failure::Support(e.to_string()),
        other => Failure::Metric(other.to_string()),
    })?;
    let spec_value = tabulated.to_spec_value();
    let text = serde_json::to_string(&spec_value).expect("spec serializes");
    write_text(config.out.as_deref(), &text)?;

    // Probe agreement between the reload and the on-the-fly pullback.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..100 {
        let z = sampling::random_in_ball(field.dim(), field.support_radius(), &mut rng);
        let t = -field.time_radius()
            + 2.0 * field.time_radius() * rand::Rng::gen_range(&mut rng, 0.0..1.0f64);
        let dev = (pulled.metric_matrix(t, &z) - tabulated.metric_matrix(t, &z)).norm();
        max_dev = max_dev.max(dev);
    }
    let summary = json!({
        "command": "pullback",
        "grid_time": config.grid_time,
        "grid_space": config.grid_space,
        "probe_max_deviation": max_dev,
        "config": config.result_hash(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary"));
    Ok(Outcome { exit_code: 0 })
}

pub fn dispatch(config: &ExperimentConfig) -> CommandResult {
    config.validate().map_err(Failure::Config)?;
    match config.command {
        CommandKind::Scatter => run_scatter(config),
        CommandKind::Sojourn => run_sojourn(config),
        CommandKind::Compare => run_compare(config),
        CommandKind::Check => run_check(config),
        CommandKind::Pullback => run_pullback(config),
    }
}
