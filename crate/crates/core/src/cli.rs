//! Command-line front end. Scalar reports are JSON, curves are CSV; all
//! numbers carry 9 significant digits.

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::blocklength::{
    geometric_grid, lemma2_check, normal_approx, operating_point, rate_curve, rate_redundancy_oracle,
    BerryEsseenOptions,
};
use crate::codebook::{
    converse_rate_bound, coverage, exact_min_code, greedy_cover_code, type_union_code, type_union_delta_r, Codebook,
    CoverageMode,
};
use crate::dispersion::{dispersion_report, DispersionOptions};
use crate::exponent::{exponent_curve, ExponentOptions};
use crate::gaussian::{gaussian_curve, GaussianSpec};
use crate::numeric::round_sig;
use crate::rd::rd_at_distortion;
use crate::source::{DiscreteSource, DistortionKind, DistortionSpec, SourceFile};

#[derive(Debug, Parser)]
#[command(
    name = "lossy-dispersion",
    version,
    about = "Rate-distortion, dispersion and finite-blocklength rates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Show rates in bits.
    #[arg(long, global = true)]
    pub bits: bool,
    /// Seed for Monte Carlo estimates.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rate-distortion function at one distortion level (JSON).
    Rdf(SourceArgs),
    /// Dispersion from every route with agreement diagnostics (JSON).
    Dispersion(DispersionArgs),
    /// Excess-distortion exponent at one or more rates (JSON).
    Exponent(ExponentArgs),
    /// Normal approximation over a blocklength grid (CSV).
    Curve(CurveArgs),
    /// Exact rate redundancy at one blocklength (JSON).
    Oracle(OracleArgs),
    /// Probability that the type leaves the neighbourhood of the source (JSON).
    Lemma2(Lemma2Args),
    /// Build or evaluate a covering code (JSON).
    Codebook(CodebookArgs),
    /// Quadratic-Gaussian rates over a blocklength grid (CSV).
    Gaussian(GaussianArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Hamming,
    Difference,
    General,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// JSON source description.
    #[arg(long)]
    pub source: PathBuf,
    /// Distortion kind; overrides the kind in the source file.
    #[arg(long, value_enum)]
    pub distortion: Option<KindArg>,
    /// Distortion level.
    #[arg(short = 'D', long = "D")]
    pub d: f64,
}

#[derive(Debug, Args)]
pub struct DispersionArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    /// Finite-difference step.
    #[arg(long, default_value_t = crate::dispersion::DEFAULT_STEP)]
    pub step: f64,
    /// Skip the exponent route.
    #[arg(long)]
    pub no_exponent: bool,
}

#[derive(Debug, Args)]
pub struct ExponentArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    /// Rates in nats, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rate: Vec<f64>,
    /// Grid points per simplex dimension.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct Grid {
    #[arg(long)]
    pub nmin: u64,
    #[arg(long)]
    pub nmax: u64,
    /// Ratio between consecutive blocklengths.
    #[arg(long, default_value_t = 10.0)]
    pub geom: f64,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub grid: Grid,
    /// Add the exact type-enumeration oracle.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    #[arg(long)]
    pub eps: f64,
    #[arg(short = 'n', long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct Lemma2Args {
    /// JSON source description.
    #[arg(long)]
    pub source: PathBuf,
    /// Blocklengths, comma separated.
    #[arg(short = 'n', long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Construction {
    Greedy,
    Exact,
    TypeUnion,
}

#[derive(Debug, Args)]
pub struct CodebookArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "greedy")]
    pub method: Construction,
    /// Slack for the per-type construction; defaults to the value leaving
    /// type-tail probability eps − 2L/n².
    #[arg(long)]
    pub delta_r: Option<f64>,
    /// Evaluate this codebook instead of building one.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Save the codebook in text form.
    #[arg(long)]
    pub write_codebook: Option<PathBuf>,
    /// Estimate coverage by Monte Carlo with this many samples (needs --seed).
    #[arg(long)]
    pub mc_samples: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    /// Source variance.
    #[arg(long)]
    pub var: f64,
    #[arg(short = 'D', long = "D")]
    pub d: f64,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub grid: Grid,
    /// Additive constant of the achievable rate.
    #[arg(long, default_value_t = 0.0)]
    pub c0: f64,
}

fn load(args: &SourceArgs) -> Result<(DiscreteSource, DistortionSpec)> {
    load_path(&args.source, args.distortion)
}

fn load_path(path: &Path, kind: Option<KindArg>) -> Result<(DiscreteSource, DistortionSpec)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = SourceFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (source, from_file) = file
        .build()
        .with_context(|| format!("invalid input in {}", path.display()))?;
    let dist = match (kind, from_file) {
        (Some(KindArg::Hamming), _) => DistortionSpec::hamming(source.len())?,
        (Some(k), Some(spec)) => {
            let kind = match k {
                KindArg::Difference => DistortionKind::Difference,
                _ => DistortionKind::General,
            };
            DistortionSpec::from_matrix(&spec.to_rows(), kind)?
        }
        (Some(k), None) => bail!("distortion kind {k:?} needs a matrix in {}", path.display()),
        (None, Some(spec)) => spec,
        (None, None) => bail!(
            "no distortion measure given: pass --distortion or add one to {}",
            path.display()
        ),
    };
    Ok((source, dist))
}

/// Rounds every float in `v` to 9 significant digits.
fn round_json(v: &mut Value) {
    match v {
        Value::Number(num) if num.is_f64() => {
            if let Some(x) = num.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x, 9))) {
                *num = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Divides the named fields (numbers or arrays of numbers) by `factor`.
fn rescale(v: &mut Value, keys: &[&str], factor: f64) {
    match v {
        Value::Object(map) => {
            for (k, item) in map.iter_mut() {
                if keys.contains(&k.as_str()) {
                    scale_all(item, factor);
                } else {
                    rescale(item, keys, factor);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| rescale(i, keys, factor)),
        _ => {}
    }
}

fn scale_all(v: &mut Value, factor: f64) {
    match v {
        Value::Number(num) => {
            if let Some(x) = num.as_f64().and_then(|x| serde_json::Number::from_f64(x / factor)) {
                *num = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| scale_all(i, factor)),
        _ => {}
    }
}

fn finish_json(mut v: Value, bits: bool, rate_keys: &[&str], var_keys: &[&str]) -> Result<String> {
    if bits {
        rescale(&mut v, rate_keys, LN_2);
        rescale(&mut v, var_keys, LN_2 * LN_2);
    }
    if let Value::Object(map) = &mut v {
        map.insert("units".into(), json!(if bits { "bits" } else { "nats" }));
    }
    round_json(&mut v);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Runs one command and returns the report text.
pub fn run(cli: &Cli) -> Result<String> {
    let bits = cli.bits;
    match &cli.command {
        Command::Rdf(a) => {
            let (source, dist) = load(a)?;
            let sol = rd_at_distortion(&source, &dist, a.d, 1e-10).with_context(|| format!("rdf at D = {}", a.d))?;
            let v = json!({
                "distortion": a.d,
                "rate": sol.rate_at(a.d),
                "slope": sol.lambda,
                "reproduction": sol.repro_marginal,
            });
            finish_json(v, bits, &["rate"], &[])
        }
        Command::Dispersion(a) => {
            let (source, dist) = load(&a.src)?;
            let mut opts = DispersionOptions {
                step: a.step,
                ..DispersionOptions::default()
            };
            if a.no_exponent {
                opts.deltas.clear();
            }
            let report = dispersion_report(&source, &dist, a.src.d, &opts)
                .with_context(|| format!("dispersion at D = {}", a.src.d))?;
            finish_json(
                serde_json::to_value(report)?,
                bits,
                &["rdf", "f_values", "r_prime_deltas"],
                &["v_derivative", "v_exponent", "v_tilted", "derivative_error_estimate"],
            )
        }
        Command::Exponent(a) => {
            let (source, dist) = load(&a.src)?;
            let mut rates = a.rate.clone();
            rates.sort_by(f64::total_cmp);
            let opts = ExponentOptions {
                resolution: a.resolution,
                ..ExponentOptions::default()
            };
            let sols = exponent_curve(&source, &dist, a.src.d, &rates, opts)
                .with_context(|| format!("exponent at D = {}", a.src.d))?;
            let points: Vec<Value> = rates
                .iter()
                .zip(sols)
                .map(|(&r, s)| match s {
                    Ok(sol) => json!({"rate": r, "exponent": sol.value, "minimizer": sol.minimizer,
                        "method": sol.method, "constraint_active": sol.constraint_active}),
                    Err(e) => json!({"rate": r, "error": e.to_string()}),
                })
                .collect();
            finish_json(
                json!({"distortion": a.src.d, "points": points}),
                bits,
                &["rate", "exponent"],
                &[],
            )
        }
        Command::Curve(a) => {
            let (source, dist) = load(&a.src)?;
            let ns = geometric_grid(a.grid.nmin, a.grid.nmax, a.grid.geom)?;
            let curve = rate_curve(
                &source,
                &dist,
                a.src.d,
                a.eps,
                &ns,
                a.oracle,
                BerryEsseenOptions::default(),
            )
            .with_context(|| format!("rate curve at D = {}", a.src.d))?;
            Ok(curve.to_csv(bits))
        }
        Command::Oracle(a) => {
            let (source, dist) = load(&a.src)?;
            let op = operating_point(&source, &dist, a.src.d)?;
            let res = rate_redundancy_oracle(&source, &dist, a.src.d, a.eps, a.n, 0.0)
                .with_context(|| format!("oracle at n = {}", a.n))?;
            let normal = normal_approx(op.rdf, op.dispersion, a.eps, a.n as u64)?;
            let mut v = serde_json::to_value(&res)?;
            if let Value::Object(map) = &mut v {
                map.insert("eps".into(), json!(a.eps));
                map.insert("rdf".into(), json!(op.rdf));
                map.insert("dispersion".into(), json!(op.dispersion));
                map.insert("r_oracle".into(), json!(op.rdf + res.delta_r));
                map.insert("r_normal".into(), json!(normal));
            }
            finish_json(v, bits, &["delta_r", "rdf", "r_oracle", "r_normal"], &["dispersion"])
        }
        Command::Lemma2(a) => {
            let file = SourceFile::from_json(
                &std::fs::read_to_string(&a.source).with_context(|| format!("reading {}", a.source.display()))?,
            )
            .with_context(|| format!("parsing {}", a.source.display()))?;
            let source = DiscreteSource::new(&file.probs)?;
            let checks =
                a.n.iter()
                    .map(|&n| lemma2_check(&source, n).with_context(|| format!("lemma2 at n = {n}")))
                    .collect::<Result<Vec<_>>>()?;
            finish_json(json!({"checks": checks}), bits, &[], &[])
        }
        Command::Codebook(a) => codebook_command(a, cli.seed, bits),
        Command::Gaussian(a) => {
            let spec = GaussianSpec::new(a.var, a.d, a.eps)?;
            let ns = geometric_grid(a.grid.nmin, a.grid.nmax, a.grid.geom)?;
            Ok(gaussian_curve(&spec, &ns, a.c0)?.to_csv(bits))
        }
    }
}

fn codebook_command(a: &CodebookArgs, seed: Option<u64>, bits: bool) -> Result<String> {
    let (source, dist) = load(&a.src)?;
    let d = a.src.d;
    let mode = match (a.mc_samples, seed) {
        (Some(samples), Some(seed)) => CoverageMode::MonteCarlo { samples, seed },
        (Some(_), None) => bail!("Monte Carlo coverage requires --seed"),
        (None, _) => CoverageMode::Exact,
    };
    let mut delta_r = None;
    let (label, code) = match &a.codebook {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let code = Codebook::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
            if code.n() != a.n {
                bail!("codebook blocklength {} differs from -n {}", code.n(), a.n);
            }
            ("file", code)
        }
        None => match a.method {
            Construction::Greedy => ("greedy", greedy_cover_code(&source, &dist, a.n, d, a.eps)?),
            Construction::Exact => ("exact", exact_min_code(&source, &dist, a.n, d, a.eps)?),
            Construction::TypeUnion => {
                let dr = match a.delta_r {
                    Some(v) => v,
                    None => type_union_delta_r(&source, &dist, a.n, d, a.eps)?,
                };
                delta_r = Some(dr);
                ("type_union", type_union_code(&source, &dist, a.n, d, dr)?)
            }
        },
    };
    if let Some(path) = &a.write_codebook {
        std::fs::write(path, code.to_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    let cov = coverage(&source, &dist, &code, d, mode).map_err(|e| anyhow!("coverage: {e}"))?;
    let converse = converse_rate_bound(&source, &dist, a.n, d, a.eps).ok();
    let v = json!({
        "n": a.n,
        "distortion": d,
        "eps": a.eps,
        "construction": label,
        "delta_r": delta_r,
        "size": code.len(),
        "rate": code.rate(),
        "converse_rate": converse,
        "covered_probability": cov.covered_probability,
        "method": cov.method,
        "mc_stderr": cov.mc_stderr,
        "seed": cov.seed,
        "excess_probability": cov.excess_probability(),
    });
    finish_json(v, bits, &["rate", "converse_rate", "delta_r"], &[])
}

/// Runs the command and writes the report to `--output` or standard output.
pub fn execute(cli: &Cli) -> Result<()> {
    let text = run(cli)?;
    match &cli.output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("lossy-dispersion").chain(args.iter().copied())).unwrap()
    }

    fn source_file(json: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), json).unwrap();
        f
    }

    #[test]
    fn rdf_json() {
        let f = source_file(r#"{"probs":[0.2,0.8]}"#);
        let out = run(&cli(&[
            "rdf",
            "--source",
            f.path().to_str().unwrap(),
            "--distortion",
            "hamming",
            "-D",
            "0.05",
        ]))
        .unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rate"].as_f64().unwrap(), 0.30188718);
        assert_eq!(v["units"], "nats");
    }

    #[test]
    fn bits_rescales_rates() {
        let f = source_file(r#"{"probs":[0.5,0.5],"distortion":{"kind":"hamming"}}"#);
        let path = f.path().to_str().unwrap();
        let out = run(&cli(&["rdf", "--source", path, "-D", "0.11", "--bits"])).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!((v["rate"].as_f64().unwrap() - 0.500084042).abs() < 1e-8);
        assert_eq!(v["units"], "bits");
    }

    #[test]
    fn missing_distortion_is_an_error() {
        let f = source_file(r#"{"probs":[0.5,0.5]}"#);
        let err = run(&cli(&["rdf", "--source", f.path().to_str().unwrap(), "-D", "0.1"])).unwrap_err();
        assert!(err.to_string().contains("no distortion measure"));
    }

    #[test]
    fn monte_carlo_needs_seed() {
        let f = source_file(r#"{"probs":[0.5,0.5]}"#);
        let path = f.path().to_str().unwrap();
        let args = [
            "codebook",
            "--source",
            path,
            "--distortion",
            "hamming",
            "-D",
            "0.25",
            "-n",
            "4",
            "--eps",
            "0.1",
            "--mc-samples",
            "1000",
        ];
        assert!(run(&cli(&args)).is_err());
        let mut seeded = args.to_vec();
        seeded.extend(["--seed", "3"]);
        let out = run(&cli(&seeded)).unwrap();
        assert!(out.contains("\"monte_carlo\""));
    }

    #[test]
    fn gaussian_csv_header() {
        let out = run(&cli(&[
            "gaussian", "--var", "1", "--D", "0.25", "--eps", "0.05", "--nmin", "100", "--nmax", "10000",
        ]))
        .unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "#schema=1");
        assert_eq!(lines[1], "n,r_normal_nats,r_achievable_nats,r_converse_nats,eps");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn codebook_roundtrip_through_file() {
        let f = source_file(r#"{"probs":[0.4,0.6]}"#);
        let dir = tempfile::tempdir().unwrap();
        let cb = dir.path().join("c.txt");
        let path = f.path().to_str().unwrap();
        let base = [
            "codebook",
            "--source",
            path,
            "--distortion",
            "hamming",
            "-D",
            "0.25",
            "-n",
            "6",
            "--eps",
            "0.1",
        ];
        let mut build = base.to_vec();
        build.extend(["--write-codebook", cb.to_str().unwrap()]);
        let built: Value = serde_json::from_str(&run(&cli(&build)).unwrap()).unwrap();
        let mut eval = base.to_vec();
        eval.extend(["--codebook", cb.to_str().unwrap()]);
        let evaluated: Value = serde_json::from_str(&run(&cli(&eval)).unwrap()).unwrap();
        assert_eq!(built["covered_probability"], evaluated["covered_probability"]);
        assert_eq!(evaluated["construction"], "file");
    }
}
