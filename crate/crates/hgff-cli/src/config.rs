//! Command-line schema, config-file merging and pre-flight validation.
//!
//! A config file is flat INI: keys in `[common]` (or before any header) apply
//! to every subcommand, keys in a section named after the subcommand apply to
//! that subcommand only. Keys are the long flag names. File values are spliced
//! into the argument vector ahead of the user's own flags, so flags win and
//! unknown keys are rejected by the same parser that rejects unknown flags.

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use hgff::corrector::Profile;
use hgff::green::{DEFAULT_ORDER, DEFAULT_RADIUS};
use hgff::linalg::SpdMatrix;
use hgff::markov::DEFAULT_PROPORTIONALITY_TOL;
use serde::Serialize;
use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

/// Validation failure; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Comma-separated numbers, parsed as one value so a later flag replaces an earlier one.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<T>().map_err(|e| format!("'{}': {e}", t.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// Semicolon-separated lattice points, e.g. `0,0,0;1,0,0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Points(pub Vec<Vec<i64>>);

impl FromStr for Points {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(';').map(|p| p.parse::<List<i64>>().map(|l| l.0)).collect::<Result<_, _>>().map(Points)
    }
}

/// Restriction domain for `gff-sample`, in lattice units.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mask {
    /// `{x : n·x < offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `{x : |x − c| < r}` with the periodic distance.
    Ball { center: Vec<f64>, radius: f64 },
}

impl FromStr for Mask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or("expected half-space:n1,..,nd,offset or ball:c1,..,cd,r")?;
        let mut v = rest.parse::<List<f64>>()?.0;
        let last = v.pop().ok_or("missing numbers")?;
        match kind {
            "half-space" => Ok(Mask::HalfSpace { normal: v, offset: last }),
            "ball" => Ok(Mask::Ball { center: v, radius: last }),
            other => Err(format!("unknown mask kind '{other}' (expected half-space or ball)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    JsonLines,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Neumann,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    C0,
    C1,
    C2,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    Profile::from_name(s).map_err(|e| e.to_string())
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "hgff", version, about = "Fluctuation tensors, generalized Gaussian free fields and lattice Green functions", args_override_self = true)]
pub struct Cli {
    /// INI config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (default stdout); relative paths resolve under $HGFF_OUTPUT_DIR.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::JsonLines)]
    pub format: Format,
    /// Worker threads (0 = all cores); falls back to $HGFF_THREADS.
    /// Not echoed: results do not depend on it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Record wall-clock times. Off by default so that reruns are byte-identical.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Lattice Green function values, Hessian sums and third-difference decay fits.
    Green(GreenArgs),
    /// Corrector solves and the homogenized-matrix estimate.
    Corrector(CorrectorArgs),
    /// Monte Carlo estimate of the fluctuation tensor Q_ξ.
    Qtensor(QtensorArgs),
    /// Small-contrast coefficients c0, c1 (vanishing check) and c2.
    Expansion(ExpansionArgs),
    /// Generalized GFF samples with optional domain restriction.
    GffSample(GffArgs),
    /// Locality verdict or non-Markov witness for (ā, Q).
    MarkovTest(MarkovArgs),
    /// Quartic divisibility test for a symmetric matrix.
    MatrixLemma(MatrixArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Green(_) => "green",
            Command::Corrector(_) => "corrector",
            Command::Qtensor(_) => "qtensor",
            Command::Expansion(_) => "expansion",
            Command::GffSample(_) => "gff-sample",
            Command::MarkovTest(_) => "markov-test",
            Command::MatrixLemma(_) => "matrix-lemma",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GreenArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Points at which to evaluate G, e.g. `0,0,0;1,0,0`.
    #[arg(long, default_value = "0,0,0")]
    pub points: Points,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Also report Σ|∇∇ᵢG(eⱼ,·)|² over this box radius for every i ≤ j.
    #[arg(long)]
    pub hessian_radius: Option<usize>,
    /// Also fit third-difference decay out to this radius (d = 3).
    #[arg(long)]
    pub decay_radius: Option<usize>,
    #[arg(long, default_value = "0,0.01,0.1,1")]
    pub decay_lambdas: List<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrectorArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long = "L", default_value_t = 16)]
    pub l: usize,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value = "tanh", value_parser = parse_profile)]
    pub profile: Profile,
    /// Axes of the unit directions eⱼ (1-based); default all.
    #[arg(long)]
    pub directions: Option<List<usize>>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Explicit environment seeds; overrides --seed/--samples.
    #[arg(long)]
    pub seeds: Option<List<u64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub samples: u64,
    #[arg(long, default_value_t = hgff::corrector::CG_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct QtensorArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long = "L", default_value_t = 16)]
    pub l: usize,
    /// Single contrast; mutually exclusive with --taus.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Contrast grid sharing common random numbers.
    #[arg(long)]
    pub taus: Option<List<f64>>,
    #[arg(long)]
    pub xi: List<f64>,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "tanh", value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Gauss–Laguerre nodes of the Mehler resolvent.
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    /// Antithetic pairs per node.
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, value_enum, default_value_t = Method::Neumann)]
    pub method: Method,
    #[arg(long, default_value_t = 8)]
    pub neumann_order: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub cg_tol: f64,
    /// Estimate the zeroth-order right factor by Monte Carlo too.
    #[arg(long)]
    pub no_control_variate: bool,
    /// Also write the matrices as CSV rows `tau,i,j,value,stderr`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpansionArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long)]
    pub xi: List<f64>,
    #[arg(long, default_value = "tanh", value_parser = parse_profile)]
    pub profile: Profile,
    /// Row of the off-diagonal entry (1-based).
    #[arg(long, default_value_t = 1)]
    pub i: usize,
    /// Column of the off-diagonal entry (1-based).
    #[arg(long, default_value_t = 2)]
    pub j: usize,
    /// c1: torus size of the Monte Carlo.
    #[arg(long = "L", default_value_t = 16)]
    pub l: usize,
    /// c1: contrast grid of the cubic fit.
    #[arg(long, default_value = "0.02,0.03,0.04,0.05,0.06")]
    pub taus: List<f64>,
    /// c1: environments.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// c2: Hessian-sum radius.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: usize,
    /// c2: Hermite degree cap.
    #[arg(long, default_value_t = Profile::HERMITE_DEGREE)]
    pub degree: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GffArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long = "L", default_value_t = 16)]
    pub l: usize,
    /// ā entries, row-major.
    #[arg(long)]
    pub abar: List<f64>,
    /// Q entries, row-major.
    #[arg(long)]
    pub q: List<f64>,
    #[arg(long, default_value_t = 1)]
    pub samples: u64,
    /// First sample index.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `half-space:n1,..,nd,offset` or `ball:c1,..,cd,r` (lattice units).
    #[arg(long)]
    pub mask: Option<Mask>,
    /// Write each field as `<dir>/field_<index>.bin`.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MarkovArgs {
    #[arg(long)]
    pub abar: List<f64>,
    #[arg(long)]
    pub q: List<f64>,
    /// Normal of the half-space U = {n·x < offset}.
    #[arg(long, default_value = "0,0,1")]
    pub normal: List<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    /// Proportionality tolerance on ‖ā/trā − Q/trQ‖.
    #[arg(long, default_value_t = DEFAULT_PROPORTIONALITY_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MatrixArgs {
    /// Symmetric matrix entries, row-major.
    #[arg(long)]
    pub matrix: List<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

fn square_dim(n: usize, what: &str) -> Result<usize, ConfigError> {
    let d = (n as f64).sqrt().round() as usize;
    if d == 0 || d * d != n {
        return Err(invalid(format!("{what}: {n} entries do not form a square matrix")));
    }
    Ok(d)
}

/// Builds the matrix, rejecting asymmetric or indefinite entries.
pub fn spd(entries: &List<f64>, what: &str) -> Result<SpdMatrix, ConfigError> {
    let d = square_dim(entries.0.len(), what)?;
    SpdMatrix::new(d, entries.0.clone()).map_err(|e| invalid(format!("{what}: {e}")))
}

fn check_tau(t: f64) -> Result<(), ConfigError> {
    if !(0.0..1.0).contains(&t) {
        return Err(invalid(format!("ellipticity: tau = {t} must lie in [0, 1)")));
    }
    Ok(())
}

fn check_grid(d: usize, l: usize) -> Result<(), ConfigError> {
    if d == 0 || l < 2 {
        return Err(invalid(format!("grid: need d >= 1 and L >= 2, got d = {d}, L = {l}")));
    }
    Ok(())
}

fn check_len(n: usize, d: usize, what: &str) -> Result<(), ConfigError> {
    if n != d {
        return Err(invalid(format!("{what}: {n} components given, d = {d}")));
    }
    Ok(())
}

fn check_mass(lambda: f64, d: usize) -> Result<(), ConfigError> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be >= 0")));
    }
    if lambda == 0.0 && d <= 2 {
        return Err(invalid(format!("the massless Green function requires d >= 3, got d = {d}")));
    }
    Ok(())
}

impl Command {
    /// Module preconditions, checked before any computation starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Command::Green(a) => {
                check_mass(a.lambda, a.d)?;
                if a.order == 0 {
                    return Err(invalid("order must be >= 1"));
                }
                for p in &a.points.0 {
                    check_len(p.len(), a.d, "points")?;
                }
                if let Some(r) = a.hessian_radius {
                    if a.d < 3 || r < 2 {
                        return Err(invalid("hessian-radius needs d >= 3 and a radius >= 2"));
                    }
                }
                if let Some(r) = a.decay_radius {
                    if a.d != 3 || r < 4 {
                        return Err(invalid("decay-radius needs d = 3 and a radius >= 4"));
                    }
                    if a.decay_lambdas.0.iter().any(|l| !(*l >= 0.0)) {
                        return Err(invalid("decay-lambdas must be >= 0"));
                    }
                }
            }
            Command::Corrector(a) => {
                check_grid(a.d, a.l)?;
                check_tau(a.tau)?;
                if !(a.lambda >= 0.0) {
                    return Err(invalid(format!("lambda = {} must be >= 0", a.lambda)));
                }
                if let Some(dirs) = &a.directions {
                    if dirs.0.iter().any(|&j| j == 0 || j > a.d) {
                        return Err(invalid(format!("directions are axes 1..={}", a.d)));
                    }
                }
                if a.seeds.is_none() && a.samples == 0 {
                    return Err(invalid("samples must be >= 1"));
                }
                if !(a.tol > 0.0) {
                    return Err(invalid("tol must be > 0"));
                }
            }
            Command::Qtensor(a) => {
                check_grid(a.d, a.l)?;
                check_len(a.xi.0.len(), a.d, "xi")?;
                let taus = match (&a.tau, &a.taus) {
                    (Some(t), None) => vec![*t],
                    (None, Some(t)) => t.0.clone(),
                    _ => return Err(invalid("give exactly one of --tau or --taus")),
                };
                taus.iter().try_for_each(|&t| check_tau(t))?;
                if a.samples < 2 {
                    return Err(invalid("samples must be >= 2 for a standard error"));
                }
                if a.nodes == 0 || a.pairs == 0 {
                    return Err(invalid("nodes and pairs must be >= 1"));
                }
                if !(a.lambda >= 0.0) {
                    return Err(invalid(format!("lambda = {} must be >= 0", a.lambda)));
                }
                if a.method == Method::Neumann && a.neumann_order == 0 {
                    return Err(invalid("neumann-order must be >= 1"));
                }
            }
            Command::Expansion(a) => {
                check_len(a.xi.0.len(), a.d, "xi")?;
                let off_diagonal = a.i != a.j && (1..=a.d).contains(&a.i) && (1..=a.d).contains(&a.j);
                match a.check {
                    Check::C0 => {}
                    Check::C1 => {
                        check_grid(a.d, a.l)?;
                        if !off_diagonal {
                            return Err(invalid("c1 is checked for an off-diagonal entry: need i != j in 1..=d"));
                        }
                        a.taus.0.iter().try_for_each(|&t| check_tau(t))?;
                        if a.taus.0.len() < 4 {
                            return Err(invalid("the cubic fit needs at least 4 tau values"));
                        }
                        if a.samples < 2 {
                            return Err(invalid("samples must be >= 2"));
                        }
                    }
                    Check::C2 => {
                        if a.d < 3 {
                            return Err(invalid("c2 needs d >= 3"));
                        }
                        if !off_diagonal {
                            return Err(invalid("c2 is derived for an off-diagonal entry: need i != j in 1..=d"));
                        }
                        if a.radius < 2 {
                            return Err(invalid("radius must be >= 2"));
                        }
                        if a.degree > hgff::fluctuation::hermite::MAX_DEGREE {
                            return Err(invalid(format!("degree must be <= {}", hgff::fluctuation::hermite::MAX_DEGREE)));
                        }
                    }
                }
            }
            Command::GffSample(a) => {
                check_grid(a.d, a.l)?;
                check_len(square_dim(a.abar.0.len(), "abar")?, a.d, "abar dimension")?;
                check_len(square_dim(a.q.0.len(), "q")?, a.d, "q dimension")?;
                spd(&a.abar, "abar")?;
                spd(&a.q, "q")?;
                match &a.mask {
                    Some(Mask::HalfSpace { normal, .. }) => check_len(normal.len(), a.d, "mask normal")?,
                    Some(Mask::Ball { center, radius }) => {
                        check_len(center.len(), a.d, "mask center")?;
                        if !(*radius > 0.0) {
                            return Err(invalid("mask radius must be > 0"));
                        }
                    }
                    None => {}
                }
            }
            Command::MarkovTest(a) => {
                let d = square_dim(a.abar.0.len(), "abar")?;
                check_len(square_dim(a.q.0.len(), "q")?, d, "q dimension")?;
                check_len(a.normal.0.len(), d, "normal")?;
                spd(&a.abar, "abar")?;
                spd(&a.q, "q")?;
                if a.normal.0.iter().all(|v| *v == 0.0) {
                    return Err(invalid("normal must be nonzero"));
                }
                if !(a.tol > 0.0) {
                    return Err(invalid("tol must be > 0"));
                }
            }
            Command::MatrixLemma(a) => {
                spd(&a.matrix, "matrix")?;
                if !(a.tol > 0.0) {
                    return Err(invalid("tol must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Turns the config file into flags for `subcommand`, checking boolean keys.
fn file_flags(text: &str, subcommand: &str) -> Result<Vec<OsString>, ConfigError> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| invalid(format!("config file: {e}")))?;
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(subcommand).expect("parsed subcommand exists");
    let mut out = Vec::new();
    for (section, props) in ini.iter() {
        match section {
            None | Some("common") => {}
            Some(s) if s == subcommand => {}
            Some(s) if cmd.find_subcommand(s).is_some() => continue,
            Some(s) => return Err(invalid(format!("config file: unknown section [{s}]"))),
        }
        for (key, value) in props.iter() {
            let key = key.replace('_', "-");
            if key == "config" {
                return Err(invalid("config file: 'config' cannot be set from a config file"));
            }
            let arg = sub.get_arguments().chain(cmd.get_arguments()).find(|a| a.get_long() == Some(key.as_str()));
            let switch = arg.is_some_and(|a| !a.get_action().takes_values());
            if switch {
                match value.trim() {
                    "true" | "yes" | "1" => out.push(format!("--{key}").into()),
                    "false" | "no" | "0" => {}
                    v => return Err(invalid(format!("config file: {key} = {v} is not a boolean"))),
                }
            } else {
                out.push(format!("--{key}").into());
                out.push(value.trim().into());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Parses the arguments, merging the config file if one is named.
pub fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cmd = Cli::command();
    let pos = args.iter().skip(1).position(|a| a.to_str().is_some_and(|s| cmd.find_subcommand(s).is_some()));
    let (Some(path), Some(pos)) = (config_path(&args), pos) else {
        return Cli::try_parse_from(args);
    };
    let pos = pos + 1;
    let name = args[pos].to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| cmd.clone().error(clap::error::ErrorKind::Io, format!("config file {}: {e}", path.display())))?;
    let injected = file_flags(&text, &name).map_err(|e| cmd.clone().error(clap::error::ErrorKind::InvalidValue, e.0))?;
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    Cli::try_parse_from(merged)
}
