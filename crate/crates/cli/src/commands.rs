//! One function per subcommand. Each resolves defaults into the config,
//! computes, and writes its artifacts under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bloch_dos::decay::{verify_decay, verify_gradient_with_step, DecayConstants, CUTOFF_MARGIN, DEFAULT_STEP};
use bloch_dos::fibre::{assemble_with, spectrum, suggest_cutoff, AssemblyOptions};
use bloch_dos::geometry::{regular_direction_fraction, GeometryParams};
use bloch_dos::ids::{Quadrature, QuadratureGrid, DEFAULT_BUFFER};
use bloch_dos::lattice::Lattice;
use bloch_dos::potential::Potential;
use bloch_dos::{report, Parallelism};
use serde::Serialize;

use crate::config::{require, CommandName, RunConfig};
use crate::error::CliError;

pub const DEFAULT_ETA: f64 = 0.9;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_BANDS: usize = 8;

/// JSON report: the resolved configuration next to the results.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    config: &'a RunConfig,
    results: T,
}

pub struct Run {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Context {
    command: CommandName,
    config: RunConfig,
    lattice: Lattice,
    potential: Potential,
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Context {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        report::write(&path, contents).map_err(|e| CliError::Io(path.clone(), e))?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, results: T) -> Result<(), CliError> {
        let doc = Document {
            config: &self.config,
            results,
        };
        let text = report::json_document(&doc).map_err(|e| CliError::Config(format!("serializing report: {e}")))?;
        let name = format!("{}.json", self.command.as_str());
        self.write(&name, &text)
    }

    fn v_upper(&self) -> f64 {
        self.potential.sup_norm_upper()
    }

    fn buffer(&mut self) -> f64 {
        *self.config.params.buffer.get_or_insert(DEFAULT_BUFFER)
    }
}

pub fn run(command: CommandName, config: &RunConfig, out: &Path) -> Result<Run, CliError> {
    if let Some(c) = config.command {
        if c != command {
            return Err(CliError::Config(format!(
                "config is for `{}` but `{}` was requested",
                c.as_str(),
                command.as_str()
            )));
        }
    }
    let lattice = config.lattice()?;
    let potential = config.potential(&lattice)?;
    // the embedded config describes the computation, not where it ran
    let mut resolved = config.clone();
    resolved.command = Some(command);
    resolved.output = None;
    resolved.workers = None;
    let mut ctx = Context {
        command,
        config: resolved,
        lattice,
        potential,
        out: out.to_path_buf(),
        files: Vec::new(),
    };
    let summary = match command {
        CommandName::Bands => bands(&mut ctx)?,
        CommandName::Ids => ids(&mut ctx)?,
        CommandName::Window => window(&mut ctx)?,
        CommandName::Fraction => fraction(&mut ctx)?,
        CommandName::VerifyDecay => decay(&mut ctx)?,
        CommandName::VerifyGradient => gradient(&mut ctx)?,
    };
    Ok(Run {
        summary,
        files: ctx.files,
    })
}

fn bands(ctx: &mut Context) -> Result<String, CliError> {
    let kpoints = require(&ctx.config.params.kpoints, "kpoints", ctx.command)?;
    let count = *ctx.config.params.bands.get_or_insert(DEFAULT_BANDS);
    let cutoff = match ctx.config.params.cutoff {
        Some(c) => c,
        None => {
            let lambda = require(&ctx.config.params.lambda, "cutoff` or `params.lambda", ctx.command)?;
            let top = lambda.values().into_iter().fold(f64::NEG_INFINITY, f64::max);
            let buffer = ctx.buffer();
            let c = suggest_cutoff(top, ctx.v_upper(), buffer)?;
            ctx.config.params.cutoff = Some(c);
            c
        }
    };
    let opts = AssemblyOptions {
        convention: ctx.config.params.convention.unwrap_or_default(),
        ..AssemblyOptions::dense()
    };
    let d = ctx.lattice.dim();
    let mut header = String::from("k_index");
    for i in 0..d {
        header.push_str(&format!(",k{}", i + 1));
    }
    header.push_str(",band,energy");
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (i, k) in kpoints.iter().enumerate() {
        if k.len() != d {
            return Err(CliError::Config(format!("k-point {i} has {} components, lattice has {d}", k.len())));
        }
        let reduced = ctx.potential.dual().decompose(k).fractional_part;
        let m = assemble_with(&ctx.potential, &reduced, cutoff, &opts)?;
        let energies: Vec<f64> = spectrum(&m)?.into_iter().take(count).collect();
        for (j, e) in energies.iter().enumerate() {
            let ks: Vec<String> = k.iter().map(|x| x.to_string()).collect();
            rows.push(format!("{i},{},{j},{e}", ks.join(",")));
        }
        results.push(BandsAt { k: k.clone(), energies });
    }
    ctx.write("bands.csv", &report::csv_document(&header, &rows))?;
    ctx.write_json(&results)?;
    Ok(format!("bands: {} k-points x {count} bands at cutoff {cutoff}", kpoints.len()))
}

#[derive(Serialize)]
struct BandsAt {
    k: Vec<f64>,
    energies: Vec<f64>,
}

fn quadrature_setup(ctx: &mut Context, top: f64) -> Result<(QuadratureGrid, f64), CliError> {
    let g = require(&ctx.config.params.grid, "grid", ctx.command)?;
    let grid = QuadratureGrid::new(ctx.potential.dual(), g)?;
    let cutoff = match ctx.config.params.cutoff {
        Some(c) => c,
        None => {
            let buffer = ctx.buffer();
            let c = suggest_cutoff(top, ctx.v_upper(), buffer)?;
            ctx.config.params.cutoff = Some(c);
            c
        }
    };
    Ok((grid, cutoff))
}

fn lambdas(ctx: &Context) -> Result<Vec<f64>, CliError> {
    let l = require(&ctx.config.params.lambda, "lambda", ctx.command)?.values();
    if l.is_empty() || l.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config("`params.lambda` must be finite and non-empty".into()));
    }
    Ok(l)
}

fn ids(ctx: &mut Context) -> Result<String, CliError> {
    let ls = lambdas(ctx)?;
    let top = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (grid, cutoff) = quadrature_setup(ctx, top)?;
    let convention = ctx.config.params.convention.unwrap_or_default();
    let start = Instant::now();
    let reports = Quadrature::new(&ctx.potential, &grid, cutoff)
        .convention(convention)
        .ids_many(&ls)?;
    let wall = ctx.config.params.record_wall_time.then(|| start.elapsed().as_millis());
    let rows: Vec<String> = reports.iter().map(|r| report::ids_row(r, wall)).collect();
    ctx.write("ids.csv", &report::csv_document(report::QUADRATURE_HEADER, &rows))?;
    ctx.write_json(&reports)?;
    let last = reports.last().expect("at least one lambda");
    Ok(format!(
        "ids: {} values, N({}) = {} (free {}), grid {}, cutoff {cutoff}",
        reports.len(),
        last.lambda,
        last.value,
        last.free_reference,
        grid.per_dim
    ))
}

fn window(ctx: &mut Context) -> Result<String, CliError> {
    let ls = lambdas(ctx)?;
    let eps = require(&ctx.config.params.epsilon, "epsilon", ctx.command)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(CliError::Config(format!("`params.epsilon` must be positive, got {eps}")));
    }
    let top = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max) + eps;
    let (grid, cutoff) = quadrature_setup(ctx, top)?;
    let convention = ctx.config.params.convention.unwrap_or_default();
    let requests: Vec<(f64, f64)> = ls.iter().map(|&l| (l, eps)).collect();
    let start = Instant::now();
    let reports = Quadrature::new(&ctx.potential, &grid, cutoff)
        .convention(convention)
        .windows(&requests)?;
    let wall = ctx.config.params.record_wall_time.then(|| start.elapsed().as_millis());
    let rows: Vec<String> = reports.iter().map(|r| report::window_row(r, wall)).collect();
    ctx.write("window.csv", &report::csv_document(report::QUADRATURE_HEADER, &rows))?;
    ctx.write_json(&reports)?;
    let ratios: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.ratio)).collect();
    Ok(format!("window: eps {eps}, ratios [{}], grid {}, cutoff {cutoff}", ratios.join(", "), grid.per_dim))
}

fn fraction(ctx: &mut Context) -> Result<String, CliError> {
    let rhos = require(&ctx.config.params.rho, "rho", ctx.command)?.values();
    let theta = require(&ctx.config.params.theta_radius, "theta_radius", ctx.command)?;
    let v = match ctx.config.params.v {
        Some(v) => v,
        None => *ctx.config.params.v.insert(ctx.v_upper()),
    };
    let samples = *ctx.config.params.samples.get_or_insert(DEFAULT_SAMPLES);
    let seed = *ctx.config.params.seed.get_or_insert(0);
    let d = ctx.lattice.dim();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for rho in rhos {
        let p = GeometryParams::new(rho, v, d, theta)?;
        let f = regular_direction_fraction(&p, ctx.potential.dual(), samples, seed, Parallelism::default())?;
        rows.push(report::fraction_row(&p, &f));
        results.push(FractionAt { params: p, estimate: f });
    }
    ctx.write("fraction.csv", &report::csv_document(report::FRACTION_HEADER, &rows))?;
    ctx.write_json(&results)?;
    let fs: Vec<String> = results.iter().map(|r| format!("{:.4}", r.estimate.fraction)).collect();
    Ok(format!("fraction: [{}] with {samples} directions, seed {seed}", fs.join(", ")))
}

#[derive(Serialize)]
struct FractionAt {
    params: GeometryParams,
    estimate: bloch_dos::geometry::FractionEstimate,
}

fn verification_inputs(ctx: &mut Context) -> Result<(Vec<f64>, f64, f64), CliError> {
    let d = ctx.lattice.dim();
    let k = ctx.config.params.k.get_or_insert_with(|| vec![0.0; d]).clone();
    if k.len() != d {
        return Err(CliError::Config(format!("`params.k` has {} components, lattice has {d}", k.len())));
    }
    let target = require(&ctx.config.params.band_target, "band_target", ctx.command)?;
    let eta = *ctx.config.params.eta.get_or_insert(DEFAULT_ETA);
    Ok((k, target, eta))
}

fn decay(ctx: &mut Context) -> Result<String, CliError> {
    let (k, target, eta) = verification_inputs(ctx)?;
    let cutoff = match ctx.config.params.cutoff {
        Some(c) => c,
        None => {
            // large enough for the eigenvalue nearest the target
            let c = DecayConstants::for_potential(&ctx.potential, eta)?;
            let zeta = target.max(0.0) + ctx.v_upper();
            *ctx.config.params.cutoff.insert((CUTOFF_MARGIN * c.threshold_radius(zeta)).ceil() + 1.0)
        }
    };
    let r = verify_decay(&ctx.potential, &k, target, eta, cutoff)?;
    ctx.write_json(&r)?;
    Ok(format!(
        "verify-decay: zeta {} (zeta_0 {}), {} coefficients tested, {} violations, margin_min {:.3e}",
        r.zeta,
        r.constants.zeta0,
        r.checked,
        r.violations.len(),
        r.margin_min
    ))
}

fn gradient(ctx: &mut Context) -> Result<String, CliError> {
    let (k, target, eta) = verification_inputs(ctx)?;
    let step = *ctx.config.params.step.get_or_insert(DEFAULT_STEP);
    let cutoff = match ctx.config.params.cutoff {
        Some(c) => c,
        None => {
            let buffer = ctx.buffer();
            let c = suggest_cutoff(target.max(1.0), ctx.v_upper(), buffer)?;
            *ctx.config.params.cutoff.insert(c)
        }
    };
    let g = verify_gradient_with_step(&ctx.potential, &k, target, eta, cutoff, step)?;
    ctx.write_json(&g)?;
    Ok(format!(
        "verify-gradient: zeta {}, |v| {:.6} <= {:.6}: {}, |hf - fd| {:.3e}",
        g.zeta,
        g.speed(),
        g.bound,
        g.bound_ok,
        g.discrepancy()
    ))
}

