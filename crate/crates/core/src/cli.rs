//! `isoeb` command-line front end.
//!
//! Every subcommand writes its outputs plus `<subcommand>.manifest.json` into
//! `--output-dir`. Exit codes: 0 success, 2 argument or configuration error,
//! 1 runtime error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Serialize, Serializer};
use serde_json::json;

use crate::crossfit::{b1_holds, crossfit_estimate, crossfit_unknown_sigma, margin_holds, Cap, CloneVariant, CrossfitConfig};
use crate::deaton::{deaton_fit, DeatonOptions, IsoMethod, SigmaChoice};
use crate::error::{Error, Result};
use crate::io::{fmt_num, read_json, read_table, write_csv, write_json, FileDigest, RunManifest};
use crate::isotonic::{pava, Cone};
use crate::plot::{Chart, Series};
use crate::risk_lab::{run_risk, squared_error, Cell, ClassSpec, Estimator, ExperimentConfig, RiskReport};
use crate::seq_core::{simulate, OrderedSparseClass, RngStream, SobolevEllipsoid, SobolevPlacement, SparseProfile, VarianceProfile};
use crate::shrinkage::{
    adaptive_grr, g_prior_fit, global_eb, grr_weights, pcr_weights, stein_positive_part, table1_fit, ShrinkageFit, SpectralDesign, WeightFamily,
};

/// Parse a kebab-case serde enum from a flag value.
fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unrecognized value {s:?}"))
}

fn as_display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// `sparse:s=2,R=4` or `sobolev:beta=1,R=1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassArg {
    Sparse { s: usize, r: f64 },
    Sobolev { beta: f64, r: f64 },
}

impl FromStr for ClassArg {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, String> {
        let (kind, params) = text.split_once(':').unwrap_or((text, ""));
        let mut s = None;
        let mut r = None;
        let mut beta = None;
        for kv in params.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let bad = |_| format!("bad value for {k}: {v:?}");
            match k.trim() {
                "s" => s = Some(v.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "R" | "r" => r = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "beta" => beta = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                other => return Err(format!("unknown class parameter {other:?}")),
            }
        }
        match kind {
            "sparse" => Ok(ClassArg::Sparse {
                s: s.ok_or("sparse class needs s=")?,
                r: r.ok_or("sparse class needs R=")?,
            }),
            "sobolev" => Ok(ClassArg::Sobolev {
                beta: beta.ok_or("sobolev class needs beta=")?,
                r: r.ok_or("sobolev class needs R=")?,
            }),
            other => Err(format!("unknown class {other:?} (expected sparse or sobolev)")),
        }
    }
}

impl fmt::Display for ClassArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassArg::Sparse { s, r } => write!(f, "sparse:s={s},R={r}"),
            ClassArg::Sobolev { beta, r } => write!(f, "sobolev:beta={beta},R={r}"),
        }
    }
}

/// A numeric cap or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapArg(pub Cap);

impl FromStr for CapArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(CapArg(Cap::Auto));
        }
        match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(CapArg(Cap::Known(r))),
            _ => Err(format!("cap must be a positive number or \"auto\", got {s:?}")),
        }
    }
}

impl fmt::Display for CapArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Cap::Auto => f.write_str("auto"),
            Cap::Known(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleArg {
    GlobalEb,
    Stein,
    Grr,
    Pcr,
    GPrior,
    Table1(WeightFamily),
}

impl FromStr for RuleArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "global-eb" => Ok(RuleArg::GlobalEb),
            "stein" => Ok(RuleArg::Stein),
            "grr" => Ok(RuleArg::Grr),
            "pcr" => Ok(RuleArg::Pcr),
            "gprior" => Ok(RuleArg::GPrior),
            _ => match s.strip_prefix("table1:") {
                Some(fam) => fam.parse().map(RuleArg::Table1).map_err(|e: Error| e.to_string()),
                None => Err(format!("unknown rule {s:?}")),
            },
        }
    }
}

impl fmt::Display for RuleArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleArg::GlobalEb => f.write_str("global-eb"),
            RuleArg::Stein => f.write_str("stein"),
            RuleArg::Grr => f.write_str("grr"),
            RuleArg::Pcr => f.write_str("pcr"),
            RuleArg::GPrior => f.write_str("gprior"),
            RuleArg::Table1(fam) => write!(f, "table1:{fam}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TruthArg {
    Random,
    Flat,
    Geometric,
    Spike,
    Envelope,
}

impl FromStr for TruthArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(TruthArg::Random),
            "flat" => Ok(TruthArg::Flat),
            "geometric" => Ok(TruthArg::Geometric),
            "spike" => Ok(TruthArg::Spike),
            "envelope" => Ok(TruthArg::Envelope),
            _ => Err(format!("unknown truth {s:?}")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "isoeb", version, about = "Isotonic empirical Bayes shrinkage for Gaussian sequence models")]
pub struct Cli {
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a truth from a parameter class and simulate observations.
    Simulate(SimulateArgs),
    /// Antitonic regression of column `x` (optional weights `w`).
    Isoreg(IsoregArgs),
    /// Closed-form shrinkage rules.
    Shrink(ShrinkArgs),
    /// Cross-fitted isotonic EB estimate of column `y`.
    Crossfit(CrossfitArgs),
    /// Orthogonal polynomial regression with order-restricted precisions.
    Deaton(DeatonArgs),
    /// Monte Carlo risk experiments.
    Risklab(RisklabArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub n: f64,
    #[arg(long)]
    #[serde(serialize_with = "as_display")]
    pub class: ClassArg,
    /// random, flat, geometric, spike (sparse) or envelope (Sobolev).
    #[arg(long, default_value = "random")]
    pub truth: TruthArg,
    #[arg(long, default_value = "interior", value_parser = kebab::<SobolevPlacement>)]
    pub placement: SobolevPlacement,
    /// Sort a random Sobolev draw by decreasing magnitude.
    #[arg(long)]
    pub monotone: bool,
    #[arg(long, env = "ISOEB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct IsoregArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "nonincreasing", value_parser = kebab::<Cone>)]
    pub cone: Cone,
}

#[derive(Debug, Args, Serialize)]
pub struct ShrinkArgs {
    /// CSV with `y` (or `z`); `grr` and `pcr` need `d` with `z` or `alpha`.
    #[arg(long)]
    pub input: PathBuf,
    /// global-eb, stein, grr, pcr, gprior or table1:<GRN|GRI1|GRI|GRP|GRC>.
    #[arg(long)]
    #[serde(serialize_with = "as_display")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Stein threshold.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long)]
    pub g: Option<f64>,
    /// Constant ridge penalty; `grr` without it uses the adaptive penalties.
    #[arg(long)]
    pub k: Option<f64>,
    /// Number of retained components for `pcr`.
    #[arg(long)]
    pub components: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossfitArgs {
    /// CSV with `y` and optionally the truth `theta`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub n: f64,
    /// Bound on `theta_i^2`, or `auto` (heuristic, from the first-fold proxies).
    #[arg(long, default_value = "auto")]
    #[serde(serialize_with = "as_display")]
    pub cap: CapArg,
    #[arg(long, default_value = "scaled", value_parser = kebab::<CloneVariant>)]
    pub variant: CloneVariant,
    #[arg(long, requires = "s")]
    pub unknown_sigma: bool,
    /// Head length for `--unknown-sigma`.
    #[arg(long)]
    pub s: Option<usize>,
    /// Margin parameter for the diagnostic when `theta` is given.
    #[arg(long, default_value_t = 0.2)]
    pub kappa: f64,
    #[arg(long, env = "ISOEB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DeatonArgs {
    /// CSV with columns `x` and `y`.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of polynomial coefficients `m`.
    #[arg(long)]
    pub degree: usize,
    /// Prior degrees of freedom (one value, or one per coefficient).
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_sigma: f64,
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Fix the noise variance used in `z_j`.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Noise variance source when `--sigma2` is absent: isotonic or raw.
    #[arg(long, default_value = "isotonic")]
    pub sigma: String,
    #[arg(long, default_value = "restricted-mle", value_parser = kebab::<IsoMethod>)]
    pub method: IsoMethod,
}

#[derive(Debug, Args, Serialize)]
pub struct RisklabArgs {
    /// JSON experiment configuration; other experiment flags are then ignored
    /// except `--replicates` and `--seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sparse or sobolev.
    #[arg(long, default_value = "sparse")]
    pub family: String,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub s: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub p: Vec<usize>,
    #[arg(long = "R", default_value_t = 4.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub n: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "crossfit,oracle,global-eb", value_parser = kebab::<Estimator>)]
    pub estimators: Vec<Estimator>,
    #[arg(long, value_delimiter = ',', default_value = "flat,geometric,spike", value_parser = kebab::<SparseProfile>)]
    pub profiles: Vec<SparseProfile>,
    #[arg(long, default_value = "scaled", value_parser = kebab::<CloneVariant>)]
    pub variant: CloneVariant,
    #[arg(long, default_value_t = 1.0)]
    pub bound_constant: f64,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, env = "ISOEB_SEED")]
    pub seed: Option<u64>,
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let rest: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, rest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }
}

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<()> {
    fs::create_dir_all(&cli.output_dir).map_err(|e| Error::Io(format!("{}: {e}", cli.output_dir.display())))?;
    let mut out = Outputs {
        dir: &cli.output_dir,
        written: Vec::new(),
    };
    let (name, flags, seed, inputs) = match &cli.command {
        Command::Simulate(a) => {
            simulate_cmd(a, &mut out)?;
            ("simulate", json!(a), Some(a.seed), vec![])
        }
        Command::Isoreg(a) => {
            isoreg_cmd(a, &mut out)?;
            ("isoreg", json!(a), None, vec![a.input.clone()])
        }
        Command::Shrink(a) => {
            shrink_cmd(a, &mut out)?;
            ("shrink", json!(a), None, vec![a.input.clone()])
        }
        Command::Crossfit(a) => {
            crossfit_cmd(a, &mut out)?;
            ("crossfit", json!(a), Some(a.seed), vec![a.input.clone()])
        }
        Command::Deaton(a) => {
            deaton_cmd(a, &mut out)?;
            ("deaton", json!(a), None, vec![a.input.clone()])
        }
        Command::Risklab(a) => {
            let seed = risklab_cmd(a, &mut out)?;
            ("risklab", json!(a), Some(seed), a.config.iter().cloned().collect())
        }
    };
    let mut argv = argv;
    if let Some(seed) = seed {
        if !argv.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
            argv.extend(["--seed".to_string(), seed.to_string()]);
        }
    }
    let mut manifest = RunManifest::new(name, argv, flags, seed);
    manifest.inputs = inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?;
    manifest.outputs = out.written.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?;
    write_json(&cli.output_dir.join(RunManifest::file_name(name)), &manifest)
}

fn simulate_cmd(a: &SimulateArgs, out: &mut Outputs) -> Result<()> {
    let mut rng = RngStream::new(a.seed, 0).rng();
    let theta = match (a.class, a.truth) {
        (ClassArg::Sparse { s, r }, t) => {
            let class = OrderedSparseClass::new(s, r, a.p)?;
            match t {
                TruthArg::Random => class.sample(&mut rng)?,
                TruthArg::Flat => class.profile(SparseProfile::Flat)?,
                TruthArg::Geometric => class.profile(SparseProfile::Geometric)?,
                TruthArg::Spike => class.profile(SparseProfile::Spike)?,
                TruthArg::Envelope => return Err(Error::InvalidArgument("the envelope truth needs a Sobolev class".into())),
            }
        }
        (ClassArg::Sobolev { beta, r }, t) => {
            let ell = SobolevEllipsoid::new(beta, r, a.p)?;
            match t {
                TruthArg::Random => ell.sample(&mut rng, a.placement, a.monotone)?,
                TruthArg::Envelope => ell.envelope(),
                _ => return Err(Error::InvalidArgument("Sobolev classes support the random and envelope truths".into())),
            }
        }
    };
    let prob = simulate(&theta, a.sigma2, a.n, &mut rng)?;
    let rows: Vec<Vec<String>> = theta
        .iter()
        .zip(&prob.y)
        .enumerate()
        .map(|(i, (t, y))| vec![(i + 1).to_string(), fmt_num(*t), fmt_num(*y)])
        .collect();
    write_csv(&out.path("simulate.csv"), &["i", "theta", "y"], &rows)
}

fn isoreg_cmd(a: &IsoregArgs, out: &mut Outputs) -> Result<()> {
    let table = read_table(&a.input, &["x", "w"])?;
    let x = table.require("x")?;
    let w = table.column("w").map_or_else(|| vec![1.0; x.len()], <[f64]>::to_vec);
    let fit = pava(x, &w, a.cone)?;
    let rows: Vec<Vec<String>> = (0..x.len())
        .map(|i| vec![(i + 1).to_string(), fmt_num(x[i]), fmt_num(w[i]), fmt_num(fit.values[i])])
        .collect();
    write_csv(&out.path("isoreg.csv"), &["i", "x", "w", "fit"], &rows)?;
    let blocks: Vec<Vec<String>> = fit
        .blocks
        .iter()
        .map(|b| vec![(b.start + 1).to_string(), b.end.to_string(), fmt_num(b.mean), fmt_num(b.value)])
        .collect();
    write_csv(&out.path("isoreg_blocks.csv"), &["first", "last", "mean", "value"], &blocks)?;
    write_json(
        &out.path("isoreg.json"),
        &json!({"cone": a.cone, "objective": fit.objective, "blocks": fit.blocks.len()}),
    )
}

fn shrink_cmd(a: &ShrinkArgs, out: &mut Outputs) -> Result<()> {
    let table = read_table(&a.input, &["y", "z", "d", "alpha"])?;
    let response = || {
        table
            .column("y")
            .or_else(|| table.column("z"))
            .ok_or_else(|| Error::InvalidArgument("input needs a y or z column".into()))
    };
    let design = || -> Result<SpectralDesign> {
        let d = table.require("d")?;
        let alpha: Vec<f64> = match (table.column("alpha"), table.column("z")) {
            (Some(al), _) => al.to_vec(),
            (None, Some(z)) => z.iter().zip(d).map(|(z, d)| z / d).collect(),
            _ => return Err(Error::InvalidArgument("design rules need an alpha or z column next to d".into())),
        };
        SpectralDesign::new(d.to_vec(), alpha, a.sigma2)
    };
    let (input, fit): (Vec<f64>, ShrinkageFit) = match a.rule {
        RuleArg::GlobalEb => {
            let y = response()?;
            (y.to_vec(), global_eb(y, a.sigma2)?)
        }
        RuleArg::Stein => {
            let y = response()?;
            let sd = a.sigma2.sqrt();
            let scaled: Vec<f64> = y.iter().map(|v| v / sd).collect();
            let f = stein_positive_part(&scaled, a.t)?;
            (y.to_vec(), ShrinkageFit::from_weights(f.weights, y, f.rule, f.hyper))
        }
        RuleArg::GPrior => {
            let y = response()?;
            let g = a.g.ok_or_else(|| Error::InvalidArgument("gprior needs --g".into()))?;
            (y.to_vec(), g_prior_fit(y, g)?)
        }
        RuleArg::Table1(fam) => {
            let y = response()?;
            (y.to_vec(), table1_fit(y, a.sigma2, fam)?)
        }
        RuleArg::Grr => {
            let d = design()?;
            let fit = match a.k {
                Some(k) => grr_weights(&d, &vec![k; d.d.len()])?,
                None => adaptive_grr(&d)?,
            };
            (d.alpha_hat.clone(), fit)
        }
        RuleArg::Pcr => {
            let d = design()?;
            let k = a.components.ok_or_else(|| Error::InvalidArgument("pcr needs --components".into()))?;
            (d.alpha_hat.clone(), pcr_weights(&d, k)?)
        }
    };
    let rows: Vec<Vec<String>> = input
        .iter()
        .zip(&fit.weights)
        .zip(&fit.estimate)
        .enumerate()
        .map(|(i, ((x, w), e))| vec![(i + 1).to_string(), fmt_num(*x), fmt_num(*w), fmt_num(*e)])
        .collect();
    write_csv(&out.path("shrink.csv"), &["i", "input", "weight", "estimate"], &rows)?;
    write_json(&out.path("shrink.json"), &json!({"rule": a.rule.to_string(), "hyper": fit.hyper}))
}

fn crossfit_cmd(a: &CrossfitArgs, out: &mut Outputs) -> Result<()> {
    let table = read_table(&a.input, &["y", "theta"])?;
    let y = table.require("y")?.to_vec();
    let theta = table.column("theta").map(<[f64]>::to_vec);
    let prob = crate::seq_core::SequenceProblem::new(y, a.sigma2, a.n, theta.clone())?;
    let report = if a.unknown_sigma {
        let s = a.s.ok_or_else(|| Error::InvalidArgument("--unknown-sigma needs --s".into()))?;
        let fit = crossfit_unknown_sigma(&prob, s)?;
        json!({
            "mode": "unknown-sigma",
            "s": fit.s,
            "sigma2_hat": fit.sigma2_hat,
            "lambda_hat": fit.lambda_hat,
            "profile": fit.profile,
            "posterior_mean": fit.posterior.mean,
            "posterior_var": fit.posterior.var,
            "loss": theta.as_ref().map(|t| squared_error(&fit.posterior.mean, t)),
        })
    } else {
        let cfg = CrossfitConfig {
            cap: a.cap.0,
            variant: a.variant,
        };
        let fit = crossfit_estimate(&prob, &cfg, &mut RngStream::new(a.seed, 0).rng())?;
        let (b1, margin) = match &theta {
            Some(t) => {
                let truth = VarianceProfile {
                    v: t.iter().map(|v| v * v).collect(),
                    cap: None,
                };
                (Some(b1_holds(&fit.binning, &truth, fit.nu)), Some(margin_holds(&truth, fit.nu, a.kappa)?))
            }
            None => (None, None),
        };
        json!({
            "mode": "known-sigma",
            "variant": a.variant,
            "lambda": prob.noise_var,
            "nu": fit.nu,
            "cap": fit.cap,
            "cap_heuristic": matches!(a.cap.0, Cap::Auto),
            "thresholds": fit.binning.thresholds,
            "bin_of": fit.binning.bin_of,
            "profile": fit.profile.v,
            "raw_profile": fit.raw_profile,
            "posterior_mean": fit.posterior.mean,
            "posterior_var": fit.posterior.var,
            "b1_holds": b1,
            "margin_holds": margin,
            "loss": theta.as_ref().map(|t| squared_error(&fit.posterior.mean, t)),
        })
    };
    write_json(&out.path("crossfit.json"), &report)
}

fn deaton_cmd(a: &DeatonArgs, out: &mut Outputs) -> Result<()> {
    let table = read_table(&a.input, &["x", "y"])?;
    let (x, y) = (table.require("x")?, table.require("y")?);
    let sigma = match (a.sigma2, a.sigma.as_str()) {
        (Some(s2), _) => SigmaChoice::Fixed(s2),
        (None, "isotonic") => SigmaChoice::Isotonic,
        (None, "raw") => SigmaChoice::Raw,
        (None, other) => return Err(Error::InvalidArgument(format!("--sigma must be isotonic or raw, got {other:?}"))),
    };
    let opts = DeatonOptions {
        gamma: a.gamma.clone(),
        beta_prior: a.beta,
        gamma_sigma: a.gamma_sigma,
        n_bar: a.nbar,
        sigma,
        method: a.method,
    };
    let fit = deaton_fit(x, y, a.degree, &opts)?;
    let rows: Vec<Vec<String>> = (0..fit.theta_hat.len())
        .map(|j| {
            vec![
                (j + 1).to_string(),
                fmt_num(fit.theta_hat[j]),
                fmt_num(fit.kappa_unconstrained[j]),
                fmt_num(fit.kappa_iso[j]),
                fmt_num(fit.z_hat[j]),
                fmt_num(fit.theta_shrunk[j]),
            ]
        })
        .collect();
    write_csv(
        &out.path("deaton.csv"),
        &["j", "theta_hat", "kappa_hat", "kappa_iso", "z_hat", "theta_shrunk"],
        &rows,
    )?;

    let ols = fit.basis.combine(&fit.theta_hat);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &k| x[i].total_cmp(&x[k]));
    let curve: Vec<Vec<String>> = order
        .iter()
        .map(|&i| vec![fmt_num(x[i]), fmt_num(y[i]), fmt_num(ols[i]), fmt_num(fit.fitted[i])])
        .collect();
    write_csv(&out.path("deaton_curve.csv"), &["x", "y", "fitted_ols", "fitted_shrunk"], &curve)?;
    let chart = Chart {
        title: format!("polynomial fit, m = {}", a.degree),
        x_label: "x".into(),
        y_label: "y".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series {
                name: "least squares".into(),
                points: order.iter().map(|&i| (x[i], ols[i])).collect(),
            },
            Series {
                name: "shrunk".into(),
                points: order.iter().map(|&i| (x[i], fit.fitted[i])).collect(),
            },
        ],
    };
    fs::write(out.path("deaton_curve.svg"), chart.to_svg()).map_err(|e| Error::Io(e.to_string()))?;
    write_json(
        &out.path("deaton.json"),
        &json!({
            "degree": a.degree,
            "n_bar": fit.n_bar,
            "rss": fit.rss,
            "w_last": fit.w_last,
            "sigma2_hat": fit.sigma2_hat,
            "kappa_last": fit.kappa_last,
            "kappa_iso_last": fit.kappa_iso_last,
            "gamma": fit.gamma,
            "beta_prior": fit.beta_prior,
        }),
    )
}

fn risklab_config(a: &RisklabArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => {
            let class = match a.family.as_str() {
                "sparse" => ClassSpec::Sparse { profiles: a.profiles.clone() },
                "sobolev" => ClassSpec::Sobolev { beta: a.beta },
                other => return Err(Error::InvalidArgument(format!("--family must be sparse or sobolev, got {other:?}"))),
            };
            let mut sweep = Vec::new();
            for &p in &a.p {
                for &s in &a.s {
                    for &n in &a.n {
                        sweep.push(Cell {
                            s,
                            p,
                            r: a.r,
                            sigma2: a.sigma2,
                            n,
                        });
                    }
                }
            }
            ExperimentConfig {
                class,
                estimators: a.estimators.clone(),
                replicates: 10_000,
                seed: 0,
                sweep,
                variant: a.variant,
                bound_constant: a.bound_constant,
                margin_kappa: None,
            }
        }
    };
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn risklab_cmd(a: &RisklabArgs, out: &mut Outputs) -> Result<u64> {
    let cfg = risklab_config(a)?;
    let report = run_risk(&cfg)?;
    write_json(&out.path("risklab.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .results
        .iter()
        .map(|r| {
            vec![
                r.cell_index.to_string(),
                r.cell.s.to_string(),
                r.cell.p.to_string(),
                fmt_num(r.cell.r),
                fmt_num(r.cell.sigma2),
                fmt_num(r.cell.n),
                r.truth.clone(),
                r.estimator.name().to_string(),
                fmt_num(r.risk),
                fmt_num(r.se),
                fmt_num(r.bound),
                fmt_num(r.ratio),
            ]
        })
        .collect();
    write_csv(
        &out.path("risklab.csv"),
        &["cell", "s", "p", "R", "sigma2", "n", "truth", "estimator", "risk", "se", "bound", "ratio"],
        &rows,
    )?;
    write_curves(&cfg, &report, out)?;
    Ok(cfg.seed)
}

/// Worst-truth risk per cell and estimator, plus risk-vs-n and risk-vs-s charts
/// along the first cell's slice of the sweep.
fn write_curves(cfg: &ExperimentConfig, report: &RiskReport, out: &mut Outputs) -> Result<()> {
    let mut rows = Vec::new();
    let first = cfg.sweep[0];
    let mut vs_n = Vec::new();
    let mut vs_s = Vec::new();
    for est in &cfg.estimators {
        let worst = report.worst_per_cell(*est);
        for w in &worst {
            rows.push(vec![
                est.name().to_string(),
                w.cell.s.to_string(),
                w.cell.p.to_string(),
                fmt_num(w.cell.n),
                w.truth.clone(),
                fmt_num(w.risk),
                fmt_num(w.se),
                fmt_num(w.bound),
            ]);
        }
        let pick = |f: &dyn Fn(&Cell) -> bool, x: &dyn Fn(&Cell) -> f64| -> Series {
            let mut pts: Vec<(f64, f64)> = worst.iter().filter(|w| f(&w.cell)).map(|w| (x(&w.cell), w.risk)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: est.name().to_string(),
                points: pts,
            }
        };
        vs_n.push(pick(&|c| c.s == first.s && c.p == first.p, &|c| c.n));
        vs_s.push(pick(&|c| c.n == first.n && c.p == first.p, &|c| c.s as f64));
    }
    write_csv(
        &out.path("risklab_curves.csv"),
        &["estimator", "s", "p", "n", "worst_truth", "risk", "se", "bound"],
        &rows,
    )?;
    for (name, series, label) in [("risklab_vs_n.svg", vs_n, "n"), ("risklab_vs_s.svg", vs_s, "s")] {
        if series.iter().any(|s| s.points.len() >= 2) {
            let chart = Chart {
                title: format!("worst-case risk vs {label}"),
                x_label: label.into(),
                y_label: "risk".into(),
                log_x: true,
                log_y: true,
                series,
            };
            fs::write(out.path(name), chart.to_svg()).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_arguments_parse() {
        assert_eq!("sparse:s=2,R=4".parse::<ClassArg>().unwrap(), ClassArg::Sparse { s: 2, r: 4.0 });
        assert_eq!("sobolev:beta=1.5,R=2".parse::<ClassArg>().unwrap(), ClassArg::Sobolev { beta: 1.5, r: 2.0 });
        assert!("sparse:s=2".parse::<ClassArg>().is_err());
        assert!("dense:s=2,R=1".parse::<ClassArg>().is_err());
        let c = ClassArg::Sparse { s: 3, r: 0.5 };
        assert_eq!(c.to_string().parse::<ClassArg>().unwrap(), c);
    }

    #[test]
    fn rule_and_cap_arguments_parse() {
        assert_eq!("table1:grp".parse::<RuleArg>().unwrap(), RuleArg::Table1(WeightFamily::Grp));
        assert_eq!("global-eb".parse::<RuleArg>().unwrap(), RuleArg::GlobalEb);
        assert!("lasso".parse::<RuleArg>().is_err());
        assert_eq!("auto".parse::<CapArg>().unwrap(), CapArg(Cap::Auto));
        assert_eq!("2.5".parse::<CapArg>().unwrap(), CapArg(Cap::Known(2.5)));
        assert!("-1".parse::<CapArg>().is_err());
    }

    #[test]
    fn unknown_flag_exits_with_two() {
        assert_eq!(dispatch(["isoeb", "simulate", "--bogus"]), 2);
        assert_eq!(dispatch(["isoeb", "frobnicate"]), 2);
    }
}
