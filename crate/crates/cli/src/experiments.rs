//! The four config-driven experiments.

use std::path::Path;

use enki_core::{
    adaptive_walk, build_elliptic, integrate, integrate_moments, io, mean_square_response_deviation,
    run_discrete, spread, synthesize_observation, uniform_walk, DiscreteConfig, Ensemble,
    FlowConfig, FlowTrace, MomentState, MultiObjectiveProblem, NoiseModel, Observation,
    ParetoApproximation, RhsKind, StabilizationParams, WalkOptions,
};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use crate::config::{ExperimentConfig, ExperimentKind, InitKind, Variant};
use crate::metrics::{deb_reference, fit_slope, front_coverage, reconstruction_metrics};
use crate::report::{write_metadata, write_summary, ReportBundle};
use crate::HarnessError;

/// Runs the configured experiment, writing traces, metadata and a scalar
/// summary under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    cfg.validate().map_err(HarnessError::Validation)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| HarnessError::Runtime(format!("cannot create output dir: {e}")))?;
    match cfg.experiment {
        ExperimentKind::EllipticInversion => elliptic_inversion(cfg),
        ExperimentKind::DebPareto => deb_pareto(cfg),
        ExperimentKind::CollapseRate => collapse_rate(cfg),
        ExperimentKind::MomentConsistency => moment_consistency(cfg),
    }
}

/// Seed offsets: the observation stream uses `seed`, the initial ensemble
/// `seed + 1`.
fn initial_ensemble(cfg: &ExperimentConfig) -> Result<Ensemble, HarnessError> {
    let mut stream = enki_core::rng::seeded(cfg.seed.wrapping_add(1));
    let ens = match cfg.init {
        InitKind::Normal => {
            Ensemble::sample_normal(cfg.ensemble_size, cfg.dim, cfg.init_spread, &mut stream)
        }
        InitKind::Uniform => Ensemble::sample_uniform(
            cfg.ensemble_size,
            cfg.dim,
            -cfg.init_spread,
            cfg.init_spread,
            &mut stream,
        ),
    };
    ens.map_err(HarnessError::from)
}

fn flow_config(cfg: &ExperimentConfig) -> FlowConfig {
    let mut fc = FlowConfig::new(cfg.t_final, cfg.step);
    fc.trace_stride = cfg.trace_stride;
    fc
}

fn write_trace(
    bundle: &mut ReportBundle,
    name: &str,
    trace: &FlowTrace,
) -> Result<(), HarnessError> {
    let path = bundle.track(bundle.output_dir.join(name));
    trace.write_csv(&path).map_err(HarnessError::from)
}

fn elliptic_inversion(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    let mut bundle = ReportBundle::new(&cfg.output_dir);
    let model = build_elliptic(cfg.dim).map_err(HarnessError::from)?;
    let x = model.grid();
    let truth = DVector::from_iterator(cfg.dim, x.iter().map(|&xi| (8.0 * xi).sin()));
    let obs =
        synthesize_observation(&model, &truth, cfg.gamma, cfg.seed).map_err(HarnessError::from)?;
    let ens0 = initial_ensemble(cfg)?;

    write_metadata(
        &mut bundle,
        cfg,
        &[
            ("init_seed".into(), cfg.seed.wrapping_add(1).to_string()),
            ("k".into(), cfg.dim.to_string()),
            ("mesh_width".into(), io::format_float(model.mesh_width())),
        ],
    )?;
    let truth_path = bundle.track(bundle.output_dir.join("truth.csv"));
    io::write_vector_csv(&truth_path, &truth).map_err(HarnessError::from)?;
    let obs_path = bundle.track(bundle.output_dir.join("observation.csv"));
    io::write_vector_csv(&obs_path, &obs.y).map_err(HarnessError::from)?;

    let variants: Vec<Variant> = match cfg.variant {
        Some(v) => vec![v],
        None => vec![Variant::VanillaFlow, Variant::StabilizedFlow],
    };

    let mut reconstruction_cols: Vec<(String, DVector<f64>)> = Vec::new();
    let mut vanilla_final_misfit = None;
    let mut stabilized_trace: Option<FlowTrace> = None;

    for variant in &variants {
        let (label, final_ens) = match variant {
            Variant::Discrete => {
                let mut dc = DiscreteConfig::new(cfg.dt, cfg.max_iter);
                dc.seed = cfg.seed.wrapping_add(2);
                let (final_ens, trace) =
                    run_discrete(&ens0, &obs, &model, &dc).map_err(HarnessError::from)?;
                let path = bundle.track(bundle.output_dir.join("discrete_trace.csv"));
                trace.write_csv(&path).map_err(HarnessError::from)?;
                bundle.metric("discrete_iterations", (trace.records.len() - 1).to_string());
                ("discrete", final_ens)
            }
            Variant::VanillaFlow => {
                let mut fc = flow_config(cfg);
                fc.monotonicity_guard = true;
                let (final_ens, trace) =
                    integrate(RhsKind::Vanilla, &ens0, &obs, &model, None, &fc)
                        .map_err(HarnessError::from)?;
                write_trace(&mut bundle, "vanilla_trace.csv", &trace)?;
                bundle.metric("vanilla_guard_retries", trace.guard_retries.to_string());
                bundle.metric_f64(
                    "vanilla_max_step_increase",
                    trace.max_step_increase.unwrap_or(f64::NAN),
                );
                vanilla_final_misfit = trace.records.last().map(|r| r.misfit_mean);
                ("vanilla", final_ens)
            }
            Variant::StabilizedFlow => {
                let params = StabilizationParams::identity(cfg.dim, cfg.alpha, cfg.beta);
                let fc = flow_config(cfg);
                let (final_ens, trace) =
                    integrate(RhsKind::Stabilized, &ens0, &obs, &model, Some(&params), &fc)
                        .map_err(HarnessError::from)?;
                write_trace(&mut bundle, "stabilized_trace.csv", &trace)?;
                stabilized_trace = Some(trace);
                ("stabilized", final_ens)
            }
        };

        let (phi, residual, spread) = reconstruction_metrics(&final_ens, &obs, &model)?;
        bundle.metric_f64(&format!("{label}_final_misfit"), phi);
        bundle.metric_f64(&format!("{label}_final_residual"), residual);
        bundle.metric_f64(&format!("{label}_final_spread"), spread);
        reconstruction_cols.push((format!("u_{label}"), final_ens.mean()));
    }

    // Time for the stabilized flow to reach the vanilla flow's final misfit.
    if let (Some(vfinal), Some(strace)) = (vanilla_final_misfit, &stabilized_trace) {
        let hit = strace
            .records
            .iter()
            .find(|r| r.misfit_mean <= vfinal)
            .map_or(f64::NAN, |r| r.t);
        bundle.metric_f64("stabilized_time_to_vanilla_final_misfit", hit);
    }

    let mut header = vec!["x".to_string(), "u_truth".to_string()];
    header.extend(reconstruction_cols.iter().map(|(name, _)| name.clone()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..cfg.dim)
        .map(|i| {
            let mut row = vec![x[i], truth[i]];
            row.extend(reconstruction_cols.iter().map(|(_, mean)| mean[i]));
            row
        })
        .collect();
    let recon_path = bundle.track(bundle.output_dir.join("reconstruction.csv"));
    io::write_table_csv(&recon_path, &header_refs, &rows).map_err(HarnessError::from)?;

    write_summary(&mut bundle)?;
    Ok(bundle)
}

/// The two-objective benchmark problem: two exponential bumps, data zero,
/// unit noise.
pub fn deb_problem() -> MultiObjectiveProblem {
    let (g1, g2) = enki_core::deb_pair();
    MultiObjectiveProblem::new(
        vec![Arc::new(g1), Arc::new(g2)],
        vec![DVector::zeros(1), DVector::zeros(1)],
        NoiseModel::identity(1),
    )
    .expect("static problem definition")
}

/// Grid length of the brute-force reference front.
pub const REFERENCE_GRID: usize = 400;

fn write_front(
    bundle: &mut ReportBundle,
    name: &str,
    front: &ParetoApproximation,
) -> Result<(), HarnessError> {
    let path = bundle.track(bundle.output_dir.join(name));
    front.write_csv(&path).map_err(HarnessError::from)
}

fn deb_pareto(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    let mut bundle = ReportBundle::new(&cfg.output_dir);
    let problem = deb_problem();
    let ens0 = initial_ensemble(cfg)?;
    let fc = flow_config(cfg);
    let opts = WalkOptions::default();

    write_metadata(
        &mut bundle,
        cfg,
        &[
            ("init_seed".into(), cfg.seed.wrapping_add(1).to_string()),
            ("reference_grid".into(), REFERENCE_GRID.to_string()),
        ],
    )?;

    let adaptive =
        adaptive_walk(&problem, &ens0, cfg.delta, &fc, &opts).map_err(HarnessError::from)?;
    write_front(&mut bundle, "adaptive_front.csv", &adaptive)?;
    let uniform =
        uniform_walk(&problem, &ens0, cfg.n_points, &fc, &opts).map_err(HarnessError::from)?;
    write_front(&mut bundle, "uniform_front.csv", &uniform)?;

    let (ref_points, ref_front) = deb_reference(REFERENCE_GRID);
    let ref_path = bundle.track(bundle.output_dir.join("reference_front.csv"));
    let ref_rows: Vec<Vec<f64>> = ref_points
        .iter()
        .zip(&ref_front)
        .map(|(u, f)| vec![u[0], u[1], f[0], f[1]])
        .collect();
    io::write_table_csv(&ref_path, &["u1", "u2", "g1", "g2"], &ref_rows)
        .map_err(HarnessError::from)?;

    bundle.metric("adaptive_points", adaptive.entries.len().to_string());
    bundle.metric("uniform_points", uniform.entries.len().to_string());
    bundle.metric_f64("coverage_adaptive", front_coverage(&adaptive, &ref_front));
    bundle.metric_f64("coverage_uniform", front_coverage(&uniform, &ref_front));

    let max_set_distance = adaptive
        .entries
        .iter()
        .map(|e| {
            ref_points
                .iter()
                .map(|p| (p - &e.minimizer).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max);
    bundle.metric_f64("adaptive_max_set_distance", max_set_distance);

    let max_taylor = adaptive
        .entries
        .iter()
        .map(|e| e.taylor_error)
        .filter(|t| t.is_finite())
        .fold(0.0f64, f64::max);
    bundle.metric_f64("adaptive_max_taylor_error", max_taylor);

    let max_step_product = adaptive
        .entries
        .windows(2)
        .map(|pair| {
            (pair[1].lambda.scalar() - pair[0].lambda.scalar()) * pair[0].gradient_norm
        })
        .fold(0.0f64, f64::max);
    bundle.metric_f64("adaptive_max_step_product", max_step_product);

    write_summary(&mut bundle)?;
    Ok(bundle)
}

fn scalar_identity_observation(y: f64) -> Observation {
    Observation::new(DVector::from_element(1, y), NoiseModel::identity(1))
        .expect("static observation")
}

fn collapse_rate(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    let mut bundle = ReportBundle::new(&cfg.output_dir);
    let model = enki_core::LinearModel::identity(1);
    let obs = scalar_identity_observation(1.0);
    let ens0 = initial_ensemble(cfg)?;

    write_metadata(
        &mut bundle,
        cfg,
        &[("init_seed".into(), cfg.seed.wrapping_add(1).to_string())],
    )?;

    let mut fc = flow_config(cfg);
    fc.record_ensembles = true;
    let (_, trace) =
        integrate(RhsKind::Vanilla, &ens0, &obs, &model, None, &fc).map_err(HarnessError::from)?;
    write_trace(&mut bundle, "flow_trace.csv", &trace)?;

    // Collapse diagnostics per snapshot: max-norm response spread and the
    // mean squared weighted response deviation.
    let mut rows = Vec::new();
    let mut norm_points = Vec::new();
    let mut square_points = Vec::new();
    for (t, snap) in &trace.snapshots {
        let resp = enki_core::evaluate_ensemble(&model, snap).map_err(HarnessError::from)?;
        let sp = spread(snap, &resp, &obs.noise).map_err(HarnessError::from)?;
        let msq = mean_square_response_deviation(&resp, &obs.noise);
        rows.push(vec![*t, sp.response, msq]);
        if *t >= 1.0 {
            norm_points.push((t.ln(), sp.response.ln()));
            square_points.push((t.ln(), msq.ln()));
        }
    }
    let collapse_path = bundle.track(bundle.output_dir.join("collapse.csv"));
    io::write_table_csv(
        &collapse_path,
        &["t", "spread_response", "mean_square_response_deviation"],
        &rows,
    )
    .map_err(HarnessError::from)?;

    bundle.metric_f64("slope_response_spread", fit_slope(&norm_points));
    bundle.metric_f64("slope_mean_square_deviation", fit_slope(&square_points));
    bundle.metric_f64("fit_window_start", 1.0);
    bundle.metric_f64("fit_window_end", cfg.t_final);

    write_summary(&mut bundle)?;
    Ok(bundle)
}

fn moment_consistency(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    let mut bundle = ReportBundle::new(&cfg.output_dir);
    let model = enki_core::LinearModel::identity(1);
    let y = 1.0;
    let obs = scalar_identity_observation(y);
    let ens0 = initial_ensemble(cfg)?;

    write_metadata(
        &mut bundle,
        cfg,
        &[
            ("init_seed".into(), cfg.seed.wrapping_add(1).to_string()),
            ("data_value".into(), io::format_float(y)),
        ],
    )?;

    let mut fc = flow_config(cfg);
    fc.record_ensembles = true;
    let (_, trace) =
        integrate(RhsKind::Vanilla, &ens0, &obs, &model, None, &fc).map_err(HarnessError::from)?;

    let particle_rows: Vec<Vec<f64>> = trace
        .snapshots
        .iter()
        .map(|(t, snap)| vec![*t, snap.mean()[0], snap.state_covariance()[(0, 0)]])
        .collect();
    let particle_path = bundle.track(bundle.output_dir.join("particle_moments.csv"));
    io::write_table_csv(&particle_path, &["t", "mean", "covariance"], &particle_rows)
        .map_err(HarnessError::from)?;

    let params = StabilizationParams::identity(1, 1.0, 0.0);
    let state0 = MomentState::new(DVector::zeros(1), DMatrix::identity(1, 1))
        .map_err(HarnessError::from)?;
    let moments = integrate_moments(&state0, &obs.y, &params, &fc).map_err(HarnessError::from)?;
    let moment_path = bundle.track(bundle.output_dir.join("moment_trace.csv"));
    moments.write_csv(&moment_path).map_err(HarnessError::from)?;

    let tolerance = 5.0 / (cfg.ensemble_size as f64).sqrt();
    bundle.metric_f64("tolerance", tolerance);
    for frac in [0.25, 0.5, 1.0] {
        let t = cfg.t_final * frac;
        let snap = trace
            .snapshots
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-9 * t.max(1.0))
            .map(|(_, e)| e);
        let reference = moments.state_at(t);
        if let (Some(snap), Some(reference)) = (snap, reference) {
            let mean_err = (snap.mean()[0] - reference.mean[0]).abs();
            let cov_err = (snap.state_covariance()[(0, 0)] - reference.covariance[(0, 0)]).abs();
            bundle.metric_f64(&format!("mean_error_t{t}"), mean_err);
            bundle.metric_f64(&format!("cov_error_t{t}"), cov_err);
        }
    }

    write_summary(&mut bundle)?;
    Ok(bundle)
}

/// Checks that an experiment directory was produced by `run_experiment`
/// with byte-identical CSV content to another run.
pub fn csv_outputs_match(a: &Path, b: &Path) -> Result<bool, HarnessError> {
    let list = |dir: &Path| -> Result<Vec<String>, HarnessError> {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| HarnessError::Runtime(format!("cannot list {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.file_name().to_string_lossy().into_owned())
            .filter(|name| name.ends_with(".csv"))
            .collect();
        names.sort();
        Ok(names)
    };
    let names_a = list(a)?;
    if names_a != list(b)? {
        return Ok(false);
    }
    for name in names_a {
        let read = |dir: &Path| {
            std::fs::read(dir.join(&name))
                .map_err(|e| HarnessError::Runtime(format!("cannot read {name}: {e}")))
        };
        if read(a)? != read(b)? {
            return Ok(false);
        }
    }
    Ok(true)
}
