//! Result files: atomic writes and the fixed CSV layouts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use spectral_interp::linalg::CVector;
use spectral_interp::minimax::saddle::IterationRecord;
use spectral_interp::{FrequencyGrid, MissingSet, SpectralDensity};

use crate::error::CliError;

/// Version of the h.csv / c.csv column layout, recorded in result.json.
pub const CSV_SCHEMA: u32 = 1;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes to a temporary sibling, then renames over the target.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let target = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp{}", std::process::id()));
        let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        file.write_all(contents).map_err(|e| CliError::io(&tmp, e))?;
        file.sync_all().map_err(|e| CliError::io(&tmp, e))?;
        drop(file);
        fs::rename(&tmp, &target).map_err(|e| CliError::io(&target, e))?;
        self.written.push(target);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

fn header(out: &mut String, first: &str, prefix: &str, dim: usize) {
    out.push_str(first);
    for part in ["re", "im"] {
        for k in 1..=dim {
            let _ = write!(out, ",{part}_{prefix}_{k}");
        }
    }
    out.push('\n');
}

/// lambda, re_h_1..re_h_T, im_h_1..im_h_T
pub fn h_csv(grid: &FrequencyGrid, h: &[CVector]) -> String {
    let dim = h.first().map_or(0, |v| v.len());
    let mut out = String::new();
    header(&mut out, "lambda", "h", dim);
    for (lambda, v) in grid.nodes().iter().zip(h) {
        let _ = write!(out, "{lambda:e}");
        for z in v.iter() {
            let _ = write!(out, ",{:e}", z.re);
        }
        for z in v.iter() {
            let _ = write!(out, ",{:e}", z.im);
        }
        out.push('\n');
    }
    out
}

/// t, re_c_1..re_c_T, im_c_1..im_c_T over the nodes of S.
pub fn c_csv(set: &MissingSet, c: &[num_complex::Complex64], dim: usize) -> String {
    let mut out = String::new();
    header(&mut out, "t", "c", dim);
    for (k, t) in set.times().iter().enumerate() {
        let node = &c[k * dim..(k + 1) * dim];
        let _ = write!(out, "{t:e}");
        for z in node {
            let _ = write!(out, ",{:e}", z.re);
        }
        for z in node {
            let _ = write!(out, ",{:e}", z.im);
        }
        out.push('\n');
    }
    out
}

/// lambda, then re and im of every entry (row-major).
pub fn density_csv(grid: &FrequencyGrid, x: &SpectralDensity) -> String {
    let dim = x.dim();
    let mut out = String::from("lambda");
    for part in ["re", "im"] {
        for i in 1..=dim {
            for k in 1..=dim {
                let _ = write!(out, ",{part}_{i}{k}");
            }
        }
    }
    out.push('\n');
    for (j, lambda) in grid.nodes().iter().enumerate() {
        let m = x.sample(j);
        let _ = write!(out, "{lambda:e}");
        for i in 0..dim {
            for k in 0..dim {
                let _ = write!(out, ",{:e}", m[(i, k)].re);
            }
        }
        for i in 0..dim {
            for k in 0..dim {
                let _ = write!(out, ",{:e}", m[(i, k)].im);
            }
        }
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,delta,gap\n");
    for r in trace {
        let _ = writeln!(out, "{},{:e},{:e}", r.iteration, r.delta, r.gap);
    }
    out
}

/// t, xi_1..xi_T, eta_1..eta_T
pub fn paths_csv(times: &[f64], xi: &[Vec<f64>], eta: &[Vec<f64>]) -> String {
    let dim = xi.first().map_or(0, |v| v.len());
    let mut out = String::from("t");
    for name in ["xi", "eta"] {
        for k in 1..=dim {
            let _ = write!(out, ",{name}_{k}");
        }
    }
    out.push('\n');
    for ((t, x), e) in times.iter().zip(xi).zip(eta) {
        let _ = write!(out, "{t:e}");
        for v in x.iter().chain(e) {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}
