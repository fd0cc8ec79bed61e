//! CSV rows and JSON documents for computed reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::geometry::{FractionEstimate, GeometryParams};
use crate::ids::{IdsReport, WindowReport};

pub const QUADRATURE_HEADER: &str = "lambda,epsilon,G,cutoff,value,floor,ratio,wall_time_ms";
pub const FRACTION_HEADER: &str = "rho,v,theta_radius,samples,fraction,ci_halfwidth";

fn wall(ms: Option<u128>) -> String {
    ms.map(|t| t.to_string()).unwrap_or_default()
}

/// IDS row: `epsilon` is 0, `floor` holds the free IDS and `ratio` is
/// `value / floor`.
pub fn ids_row(r: &IdsReport, wall_time_ms: Option<u128>) -> String {
    let ratio = if r.free_reference > 0.0 {
        r.value / r.free_reference
    } else {
        f64::NAN
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        r.lambda,
        0.0,
        r.grid,
        r.cutoff,
        r.value,
        r.free_reference,
        ratio,
        wall(wall_time_ms)
    )
}

pub fn window_row(r: &WindowReport, wall_time_ms: Option<u128>) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.lambda,
        r.epsilon,
        r.grid,
        r.cutoff,
        r.window,
        r.floor,
        r.ratio,
        wall(wall_time_ms)
    )
}

pub fn fraction_row(p: &GeometryParams, f: &FractionEstimate) -> String {
    format!(
        "{},{},{},{},{},{}",
        p.rho, p.v, p.theta_radius, f.samples, f.fraction, f.ci_halfwidth
    )
}

pub fn csv_document(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{r}");
    }
    out
}

pub fn json_document<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
}
