//! Plot-ready output files: CSV samples and curves, JSON metadata.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{ChainSummary, CoinOutcome, CoinSettings, SvOutcome, SvSettings, WeibullOutcome, WeibullSettings};
use crate::model::ParameterVector;
use crate::sampler::ChainResult;
use crate::two_stage::TsEvaluation;

/// Hex SHA-256 of the JSON serialization of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Config(format!("unserializable config: {e}")))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Comma-separated rows under a header line.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.as_ref().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("unserializable metadata: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_samples(path: &Path, names: &[&str], chain: &ChainResult) -> Result<()> {
    write_csv(path, names, chain.samples.iter().map(ParameterVector::as_slice))
}

pub fn write_points(path: &Path, names: &[&str], points: &[ParameterVector]) -> Result<()> {
    write_csv(path, names, points.iter().map(ParameterVector::as_slice))
}

/// Two-column `x,y` file.
pub fn write_curve(path: &Path, names: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    write_csv(path, &names, xs.iter().zip(ys).map(|(x, y)| [*x, *y]))
}

/// `θ, θ̂` rows for a two-parameter evaluation.
pub fn write_scatter(path: &Path, eval: &TsEvaluation) -> Result<()> {
    write_csv(
        path,
        &["eta", "gamma", "eta_hat", "gamma_hat"],
        eval.pairs.iter().map(|(t, e)| [t[0], t[1], e[0], e[1]]),
    )
}

/// Coin artifacts: one sample file per chain, the reference curve and metadata.
pub fn write_coin(dir: &Path, settings: &CoinSettings, outcome: &CoinOutcome, wall_seconds: f64) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut blocks = Vec::new();
    for block in &outcome.blocks {
        let mut chains = Vec::new();
        for (r, chain) in block.chains.iter().enumerate() {
            let path = dir.join(format!("samples_n{}_r{r}.csv", block.samples));
            write_samples(&path, &["phi"], chain)?;
            files.push(path);
            chains.push(ChainSummary::of(chain, &outcome.constraint)?);
        }
        blocks.push(json!({
            "samples": block.samples,
            "tv_distance": block.tv,
            "median_tv_distance": block.median_tv(),
            "chains": chains,
        }));
    }
    let curve = dir.join("reference_curve.csv");
    write_curve(&curve, ["phi", "density"], &outcome.reference.grid, &outcome.reference.density)?;
    files.push(curve);
    let meta = dir.join("metadata.json");
    write_json(
        &meta,
        &json!({
            "experiment": "coin",
            "config": settings,
            "config_hash": config_hash(settings)?,
            "burn_in_rule": "samples / 10 unless burn_in is set",
            "blocks": blocks,
            "wall_time_seconds": wall_seconds,
        }),
    )?;
    files.push(meta);
    Ok(files)
}

pub fn write_sv(dir: &Path, settings: &SvSettings, outcome: &SvOutcome, wall_seconds: f64) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let samples = dir.join("samples.csv");
    write_samples(&samples, &["phi"], &outcome.chain)?;
    let curve = dir.join("reference_curve.csv");
    write_curve(&curve, ["phi", "density"], &outcome.reference.grid, &outcome.reference.density)?;
    let grid = dir.join("fim_grid.csv");
    write_curve(&grid, ["phi", "fim"], &outcome.grid().points, &outcome.grid().values)?;
    let meta = dir.join("metadata.json");
    write_json(
        &meta,
        &json!({
            "experiment": "sv",
            "config": settings,
            "config_hash": config_hash(settings)?,
            "burn_in_rule": "samples / 10 unless burn_in is set",
            "fim_fit_coefficients": outcome.surrogate.coefficients(),
            "chain": ChainSummary::of(&outcome.chain, &outcome.constraint)?,
            "tv_distance": outcome.tv,
            "density_ratio_084_090_over_030_036": outcome.density_ratio((0.84, 0.9), (0.3, 0.36)),
            "wall_time_seconds": wall_seconds,
        }),
    )?;
    Ok(vec![samples, curve, grid, meta])
}

pub fn write_weibull(dir: &Path, settings: &WeibullSettings, outcome: &WeibullOutcome, wall_seconds: f64) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut reps = Vec::new();
    for (r, rep) in outcome.repetitions.iter().enumerate() {
        let named = |stem: &str| dir.join(format!("{stem}_r{r}.csv"));
        let paths = [
            named("jeffreys_samples"),
            named("uniform_samples"),
            named("scatter_jeffreys"),
            named("scatter_uniform"),
        ];
        write_points(&paths[0], &["eta", "gamma"], &rep.jeffreys_points)?;
        write_points(&paths[1], &["eta", "gamma"], &rep.uniform_points)?;
        write_scatter(&paths[2], &rep.jeffreys)?;
        write_scatter(&paths[3], &rep.uniform)?;
        files.extend(paths);
        reps.push(json!({
            "seed": rep.seed,
            "chain": ChainSummary::of(&rep.chain, &outcome.constraint)?,
            "jeffreys": { "rmse": rep.jeffreys.rmse, "rmse_shape_below": rep.jeffreys.rmse_restricted },
            "uniform": { "rmse": rep.uniform.rmse, "rmse_shape_below": rep.uniform.rmse_restricted },
        }));
    }
    let meta = dir.join("metadata.json");
    write_json(
        &meta,
        &json!({
            "experiment": "weibull",
            "config": settings,
            "config_hash": config_hash(settings)?,
            "repetitions": reps,
            "wall_time_seconds": wall_seconds,
        }),
    )?;
    files.push(meta);
    Ok(files)
}
