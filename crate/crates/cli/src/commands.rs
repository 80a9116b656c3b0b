//! One function per subcommand; each returns the `result` section of result.json.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spectral_interp::cache::{read_system, write_system};
use spectral_interp::estimator::estimate_with_system;
use spectral_interp::minimax::{saddle_iterate, KktResiduals, SaddleOptions};
use spectral_interp::model::{Model, ModelDocument};
use spectral_interp::simulation::oracle::{gaussian_oracle, CovarianceSource};
use spectral_interp::simulation::{covariance_decay, empirical_mse, simulate_pair, SimulationConfig, MARGIN_FACTOR};
use spectral_interp::weight::Expression;
use spectral_interp::{
    assemble_system, minimality_check, validate_density, verify_orthogonality, DensitySpec, EstimateSolution,
    OperatorSystem, WeightFunction,
};

use crate::config::{simulation_settings, ClassesDocument};
use crate::error::CliError;
use crate::output::{c_csv, density_csv, h_csv, paths_csv, trace_csv, OutputDir};

pub struct Context<'a> {
    pub doc: &'a ModelDocument,
    pub model: &'a Model,
    pub out: &'a mut OutputDir,
    pub cache_dir: Option<&'a Path>,
}

fn densities_report(model: &Model) -> (Value, bool) {
    let f = validate_density(&model.f, &model.grid);
    let g = validate_density(&model.g, &model.grid);
    let pass = f.pass && g.pass;
    // Per-frequency tables stay out of result.json; violations name the indices.
    let brief = |r: &spectral_interp::ValidationReport| {
        json!({
            "pass": r.pass,
            "max_hermitian_defect": r.max_hermitian_defect,
            "min_eigenvalue": r.min_eigenvalue,
            "max_symmetry_defect": r.max_symmetry_defect,
            "violations": r.violations,
        })
    };
    (json!({"F": brief(&f), "G": brief(&g)}), pass)
}

fn require_valid(model: &Model) -> Result<(), CliError> {
    let (report, pass) = densities_report(model);
    if pass {
        Ok(())
    } else {
        Err(CliError::Validation(format!("densities fail validation: {report}")))
    }
}

pub fn validate(ctx: &mut Context) -> Result<(Value, bool), CliError> {
    let model = ctx.model;
    let (densities, pass) = densities_report(model);
    let probe = WeightFunction::from_expression(&model.set, Expression::Sin2, &vec![1.0; model.document.dim]);
    let minimality = model
        .f
        .add(&model.g)
        .map_err(CliError::from)
        .and_then(|s| minimality_check(&s, &probe, &model.set, &model.grid).map_err(CliError::from));
    let minimality = match minimality {
        Ok(r) => json!(r),
        Err(e) => json!({"error": e.to_string()}),
    };
    let result = json!({
        "pass": pass,
        "densities": densities,
        "minimality": minimality,
        "integrability": model.a.integrability(&model.set),
        "missing_set": {
            "n_nodes": model.set.len(),
            "n_interior": model.set.interior_nodes().len(),
            "time_step": model.set.time_step(),
            "aliasing_margin": model.set.aliasing_margin(&model.grid),
        },
    });
    Ok((result, pass))
}

fn mode_of(model: &Model) -> spectral_interp::Mode {
    model.document.mode.unwrap_or_else(|| model.problem().default_mode())
}

/// Assembles the operators, going through the cache directory when one is given.
fn system(model: &Model, cache_dir: Option<&Path>) -> Result<(OperatorSystem, Option<bool>), CliError> {
    let mode = mode_of(model);
    let assemble = || assemble_system(&model.f, &model.g, &model.set, &model.grid, mode);
    let Some(dir) = cache_dir else {
        return Ok((assemble()?, None));
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let hash = model.document.content_hash();
    let name: String = hash.iter().take(16).map(|b| format!("{b:02x}")).collect();
    let path: PathBuf = dir.join(format!("{name}.ops"));
    if path.exists() {
        if let Some(sys) = read_system(&path, &hash)? {
            if sys.mode() == mode {
                return Ok((sys, Some(true)));
            }
        }
    }
    let sys = assemble()?;
    write_system(&path, &sys, &hash)?;
    Ok((sys, Some(false)))
}

fn solve(model: &Model, cache_dir: Option<&Path>) -> Result<(EstimateSolution, OperatorSystem, Option<bool>), CliError> {
    require_valid(model)?;
    let (sys, cache_hit) = system(model, cache_dir)?;
    let sol = estimate_with_system(&model.problem(), &sys, &model.document.estimate_options())?;
    Ok((sol, sys, cache_hit))
}

/// Five observed times around S for the orthogonality check.
fn probe_times(model: &Model) -> Vec<f64> {
    let (lo, hi) = model.set.span();
    vec![lo - 2.0, lo - 0.5, hi + 0.25, hi + 1.0, hi + 3.0]
}

fn estimate_summary(model: &Model, sol: &EstimateSolution, sys: &OperatorSystem, cache_hit: Option<bool>) -> Result<Value, CliError> {
    let g_used = match sol.mode {
        spectral_interp::Mode::Noisy => model.g.clone(),
        spectral_interp::Mode::Noiseless => spectral_interp::SpectralDensity::zeros(&model.grid, model.f.dim()),
    };
    let orth = verify_orthogonality(
        &sol.h,
        &sol.a_transform,
        &model.f,
        &g_used,
        &model.grid,
        &model.set,
        &probe_times(model),
    )?;
    let scale = sol.delta_operator_form.abs().max(sol.delta_spectral_form.abs());
    let mut v = json!({
        "delta": sol.delta,
        "delta_operator_form": sol.delta_operator_form,
        "delta_spectral_form": sol.delta_spectral_form,
        "dual_form_relative_gap": if scale > 0.0 { (sol.delta_operator_form - sol.delta_spectral_form).abs() / scale } else { 0.0 },
        "variance": sol.variance,
        "mode": sol.mode,
        "condition_number": sol.condition_number,
        "regularization_used": sol.c.regularization_used,
        "solve_residual": sol.c.residual,
        "n_nodes": model.set.len(),
        "n_unknowns": sys.unknown_indices().len(),
        "time_step": model.set.time_step(),
        "orthogonality": orth,
    });
    if let Some(hit) = cache_hit {
        v["operator_cache_hit"] = json!(hit);
    }
    Ok(v)
}

fn write_characteristic(ctx: &mut Context, sol: &EstimateSolution) -> Result<(), CliError> {
    let dim = ctx.model.f.dim();
    ctx.out.write("h.csv", h_csv(&ctx.model.grid, &sol.h).as_bytes())?;
    ctx.out.write("c.csv", c_csv(&ctx.model.set, &sol.c.c, dim).as_bytes())
}

pub fn estimate(ctx: &mut Context) -> Result<Value, CliError> {
    let (sol, sys, hit) = solve(ctx.model, ctx.cache_dir)?;
    let summary = estimate_summary(ctx.model, &sol, &sys, hit)?;
    write_characteristic(ctx, &sol)?;
    Ok(summary)
}

pub fn simulate(ctx: &mut Context, emit_paths: bool) -> Result<Value, CliError> {
    let model = ctx.model;
    let (sol, sys, hit) = solve(model, ctx.cache_dir)?;
    let settings = simulation_settings(ctx.doc);
    let cfg = SimulationConfig {
        window: settings.window.unwrap_or_else(|| model.default_window()),
        time_step: settings.time_step.unwrap_or_else(|| model.set.time_step()),
        n_replications: settings.n_replications,
        seed: settings.seed,
    };
    cfg.check(&model.set)?;
    let g_used = match sol.mode {
        spectral_interp::Mode::Noisy => model.g.clone(),
        spectral_interp::Mode::Noiseless => spectral_interp::SpectralDensity::zeros(&model.grid, model.f.dim()),
    };
    let ensemble = empirical_mse(&model.f, &g_used, &model.grid, &sol.h, &sol.a_transform, sol.delta, &cfg)?;
    let decay = covariance_decay(&model.f, &model.grid);
    let margin = cfg.margin(&model.set);
    if emit_paths {
        let (paths, _, _) = simulate_pair(&model.f, &g_used, &model.grid, &cfg, 0)?;
        ctx.out.write("paths.csv", paths_csv(&paths.times, &paths.xi, &paths.eta).as_bytes())?;
    }
    write_characteristic(ctx, &sol)?;
    Ok(json!({
        "estimate": estimate_summary(model, &sol, &sys, hit)?,
        "ensemble": ensemble,
        "window": [cfg.window.0, cfg.window.1],
        "covariance_decay": decay,
        "window_margin": margin,
        "window_margin_sufficient": margin >= MARGIN_FACTOR * decay.efold_scale,
    }))
}

fn covariance_source<'a>(spec: &'a DensitySpec, density: &'a spectral_interp::SpectralDensity, model: &'a Model) -> CovarianceSource<'a> {
    let dim = model.document.dim;
    if spec.covariance(0.0, dim).is_some() && spec.white_part(dim).is_some() {
        CovarianceSource::Analytic { spec, dim }
    } else {
        CovarianceSource::Sampled {
            density,
            grid: &model.grid,
        }
    }
}

pub fn report(ctx: &mut Context) -> Result<Value, CliError> {
    let model = ctx.model;
    let (sol, sys, hit) = solve(model, ctx.cache_dir)?;
    let oracle_settings = model.oracle_settings();
    let window = oracle_settings.window.unwrap_or_else(|| model.default_window());
    let noise = match sol.mode {
        spectral_interp::Mode::Noisy => &ctx.doc.g,
        spectral_interp::Mode::Noiseless => &DensitySpec::Zero,
    };
    let oracle = gaussian_oracle(
        covariance_source(&ctx.doc.f, &model.f, model),
        covariance_source(noise, &model.g, model),
        &model.set,
        &model.a,
        window,
        oracle_settings.fine_step,
    )?;
    let refined_doc = ctx.doc.refined();
    let refined = refined_doc.build()?;
    let (refined_sol, _, _) = solve(&refined, None)?;
    let rel = |d: f64| if oracle.mse > 0.0 { (d - oracle.mse).abs() / oracle.mse } else { 0.0 };
    let mut table = String::from("lambda_max,n_points,delta_operator_form,delta_spectral_form,oracle,relative_gap\n");
    let mut rows = Vec::new();
    for (doc, s) in [(ctx.doc, &sol), (&refined_doc, &refined_sol)] {
        table.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e}\n",
            doc.grid.lambda_max,
            doc.grid.n_points,
            s.delta_operator_form,
            s.delta_spectral_form,
            oracle.mse,
            rel(s.delta)
        ));
        rows.push(json!({
            "lambda_max": doc.grid.lambda_max,
            "n_points": doc.grid.n_points,
            "delta": s.delta,
            "relative_gap": rel(s.delta),
        }));
    }
    ctx.out.write("convergence.csv", table.as_bytes())?;
    write_characteristic(ctx, &sol)?;
    Ok(json!({
        "estimate": estimate_summary(model, &sol, &sys, hit)?,
        "oracle": oracle,
        "oracle_window": [window.0, window.1],
        "convergence": rows,
    }))
}

fn kkt_json(k: &KktResiduals) -> Value {
    let mut residuals = serde_json::Map::new();
    let mut multipliers = serde_json::Map::new();
    let mut slackness = serde_json::Map::new();
    for side in [&k.f_side, &k.g_side].into_iter().flatten() {
        residuals.insert(
            side.side.clone(),
            json!({
                "class": side.class,
                "max_relative": side.max_relative,
                "rms_relative": side.rms_relative,
                "n_evaluated": side.n_evaluated,
                "ball_equality_defect": side.ball_equality_defect,
            }),
        );
        multipliers.insert(side.side.clone(), json!(side.multipliers));
        slackness.insert(side.side.clone(), json!(side.slackness));
    }
    let variants: Vec<Value> = k
        .variants
        .iter()
        .map(|v| {
            json!({
                "side": v.side,
                "class": v.class,
                "max_relative": v.max_relative,
                "rms_relative": v.rms_relative,
                "slackness": v.slackness,
            })
        })
        .collect();
    json!({
        "max_relative": k.max_relative,
        "residuals": residuals,
        "multipliers": multipliers,
        "slackness": slackness,
        "variants": variants,
    })
}

pub fn minimax(ctx: &mut Context, classes: &ClassesDocument, options: &SaddleOptions) -> Result<Value, CliError> {
    let model = ctx.model;
    let doc = ctx.doc;
    let class_f = classes.f.build(&model.grid, doc.dim, doc.alias_folding)?;
    let class_g = classes.g.build(&model.grid, doc.dim, doc.alias_folding)?;
    let f_init = class_f.center(&model.grid)?;
    let g_init = class_g.center(&model.grid)?;
    let sp = saddle_iterate(&f_init, &g_init, &class_f, &class_g, &model.a, &model.set, &model.grid, options)?;
    let dim = doc.dim;
    ctx.out.write("h.csv", h_csv(&model.grid, &sp.h0).as_bytes())?;
    ctx.out.write("c.csv", c_csv(&model.set, &sp.c, dim).as_bytes())?;
    ctx.out.write("f0.csv", density_csv(&model.grid, &sp.f0).as_bytes())?;
    ctx.out.write("g0.csv", density_csv(&model.grid, &sp.g0).as_bytes())?;
    ctx.out.write("trace.csv", trace_csv(&sp.trace).as_bytes())?;
    Ok(json!({
        "delta0": sp.delta0,
        "gap": sp.gap,
        "iterations": sp.iterations,
        "converged": sp.converged,
        "mode": sp.mode,
        "verification": sp.verification,
        "kkt": sp.kkt.as_ref().map(kkt_json),
    }))
}
