//! Browser bindings. Every export takes and returns JSON text.
//!
//! The `*_json` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only turn their errors into JS exceptions.

use serde::Deserialize;
use serde_json::{json, Value};
use spectral_interp::minimax::{saddle_iterate, ClassSpec, SaddleOptions};
use spectral_interp::model::{Model, ModelDocument};
use spectral_interp::{estimate, validate_density, SpectralDensity};
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Classes {
    #[serde(rename = "F")]
    f: ClassSpec,
    #[serde(rename = "G")]
    g: ClassSpec,
}

fn build(model_json: &str) -> Result<Model, String> {
    let doc = ModelDocument::from_json(model_json).map_err(|e| e.to_string())?;
    doc.build().map_err(|e| e.to_string())
}

fn density_report(name: &str, x: &SpectralDensity, model: &Model) -> Value {
    let r = validate_density(x, &model.grid);
    json!({
        "name": name,
        "pass": r.pass,
        "min_eigenvalue": r.min_eigenvalue,
        "max_hermitian_defect": r.max_hermitian_defect,
        "violations": r.violations.len(),
    })
}

/// Largest eigenvalue per grid frequency, for plotting.
fn top_eigenvalues(x: &SpectralDensity, model: &Model) -> Vec<f64> {
    (0..model.grid.len())
        .map(|j| {
            x.sample(j)
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Euclidean norm of h(λ) per grid frequency.
fn norms(h: &[spectral_interp::linalg::CVector]) -> Vec<f64> {
    h.iter().map(|v| v.norm()).collect()
}

/// First component of c at each node of S.
fn first_component(c: &[num_complex::Complex64], dim: usize) -> Vec<f64> {
    c.chunks(dim).map(|node| node[0].re).collect()
}

pub fn validate_json(model_json: &str) -> Result<String, String> {
    let model = build(model_json)?;
    let f = density_report("F", &model.f, &model);
    let g = density_report("G", &model.g, &model);
    let pass = f["pass"].as_bool() == Some(true) && g["pass"].as_bool() == Some(true);
    Ok(json!({
        "pass": pass,
        "densities": [f, g],
        "n_nodes": model.set.len(),
        "time_step": model.set.time_step(),
        "lambda": model.grid.nodes(),
        "f_top": top_eigenvalues(&model.f, &model),
        "g_top": top_eigenvalues(&model.g, &model),
    })
    .to_string())
}

pub fn estimate_json(model_json: &str) -> Result<String, String> {
    let model = build(model_json)?;
    let sol = estimate(&model.problem(), &model.document.estimate_options()).map_err(|e| e.to_string())?;
    Ok(json!({
        "delta": sol.delta,
        "variance": sol.variance,
        "mode": sol.mode,
        "condition_number": sol.condition_number,
        "lambda": model.grid.nodes(),
        "h_norm": norms(&sol.h),
        "t": model.set.times(),
        "c_re": first_component(&sol.c.c, model.f.dim()),
    })
    .to_string())
}

pub fn minimax_json(model_json: &str, classes_json: &str, max_iter: usize) -> Result<String, String> {
    let model = build(model_json)?;
    let classes: Classes = serde_json::from_str(classes_json).map_err(|e| e.to_string())?;
    let doc = &model.document;
    let class_f = classes.f.build(&model.grid, doc.dim, doc.alias_folding).map_err(|e| e.to_string())?;
    let class_g = classes.g.build(&model.grid, doc.dim, doc.alias_folding).map_err(|e| e.to_string())?;
    let f_init = class_f.center(&model.grid).map_err(|e| e.to_string())?;
    let g_init = class_g.center(&model.grid).map_err(|e| e.to_string())?;
    let options = SaddleOptions {
        max_iter,
        estimate: doc.estimate_options(),
        trace_every: 10,
        ..SaddleOptions::default()
    };
    let sp = saddle_iterate(&f_init, &g_init, &class_f, &class_g, &model.a, &model.set, &model.grid, &options)
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "delta0": sp.delta0,
        "gap": sp.gap,
        "iterations": sp.iterations,
        "converged": sp.converged,
        "verification": sp.verification,
        "kkt_max_relative": sp.kkt.as_ref().map(|k| k.max_relative),
        "lambda": model.grid.nodes(),
        "f0_top": top_eigenvalues(&sp.f0, &model),
        "g0_top": top_eigenvalues(&sp.g0, &model),
        "h_norm": norms(&sp.h0),
        "trace_delta": sp.trace.iter().map(|r| r.delta).collect::<Vec<_>>(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn validate(model_json: &str) -> Result<String, JsError> {
    validate_json(model_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = estimate)]
pub fn estimate_js(model_json: &str) -> Result<String, JsError> {
    estimate_json(model_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn minimax(model_json: &str, classes_json: &str, max_iter: usize) -> Result<String, JsError> {
    minimax_json(model_json, classes_json, max_iter).map_err(|e| JsError::new(&e))
}
