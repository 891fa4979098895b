//! Command-line front end: one subcommand per module, CSV and JSON tables, and a run
//! manifest written last as the completion marker.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::HypError;
use crate::fuchsian::{
    group_ball, injectivity_radius, lattice_count_bound, octagon_group, cyclic_group, systole, thin_part_fraction_in,
    CylinderWindow, DirichletDomain, GroupSpec, Quotient,
};
use crate::geom::{geodesic_flow, hyp_dist, polar_coords, polar_from, sample_in_ball};
use crate::propagator::{
    ergodic_average_decay, hs_norm_estimate, intersection_volume, kernel_pt_a_pt, lens_growth_slope,
    midpoint_change_of_var_check, FrameTestFunction, HsOptions, LensRule, Observable,
};
use crate::qe::{qe_variance, qe_variance_values, BoundParameters};
use crate::quad::Adaptive;
use crate::rng::{stream_rng, Rng};
use crate::selberg::{
    abel_transform, heat_bound_constant, heat_kernel_fn, selberg_forward, selberg_inverse_with, InverseOptions,
    RadialKernel, SpectralFunction,
};
use crate::spectral_action::{
    h_table, lower_bound_chain, time_average, verify_period_bound, SpectralInterval, AVERAGE_GRID,
};
use crate::trace::{
    eigencount_estimate, exp_sum_fit, pretrace_check, weyl_density_with_breaks, weyl_heat, CountOptions, CylinderGrid,
    EigenData, Trapezoid,
};
use crate::{MobiusElement, Point, UnitTangent};

#[derive(Parser, Debug, Serialize)]
#[command(name = "hyplab", version, about = "Spectral geometry of hyperbolic surfaces")]
pub struct Cli {
    /// Base seed of every Monte Carlo stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance of the subcommand's check; each subcommand has its own default.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads (falls back to HYPLAB_THREADS, then to one per core).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Isometry, flow and polar-coordinate identities on random points.
    GeomCheck {
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Group ball enumeration, injectivity radius, systole, thin part.
    Group {
        #[command(subcommand)]
        op: GroupOp,
    },
    /// Selberg transform pair and the heat kernel.
    Selberg {
        #[command(subcommand)]
        op: SelbergOp,
    },
    /// Disc-averaging propagator, lens volumes and Hilbert–Schmidt estimates.
    Propagator {
        #[command(subcommand)]
        op: PropagatorOp,
    },
    /// Spectral action constants of the disc multiplier on an interval of `s`.
    SpectralAction {
        /// Interval `a,b` of the spectral parameter.
        #[arg(long, value_parser = parse_pair, default_value = "1,2")]
        interval: Pair,
        #[arg(long = "T", default_value_t = 50.0)]
        big_t: f64,
        #[arg(long, default_value_t = 50)]
        k_max: usize,
        /// Points per `s` in the `h_t(s)` table.
        #[arg(long, default_value_t = 401)]
        n_t: usize,
    },
    /// Weyl density, pre-trace identity, eigenvalue counts.
    Trace {
        #[command(subcommand)]
        op: TraceOp,
    },
    /// Quantum ergodicity variance of ingested eigen-data.
    Qe {
        #[arg(long)]
        eigen: PathBuf,
        /// Observable: JSON file, inline JSON, or one of `constant:<c>`, `axis-sign`.
        #[arg(long)]
        observable: String,
        /// Eigenvalue interval `lo,hi`.
        #[arg(long, value_parser = parse_pair)]
        interval: Pair,
        #[arg(long = "R", default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        ell_min: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_gap: f64,
        #[arg(long, default_value_t = 0.0)]
        thin_volume: f64,
        /// Fail when the mesh Gram matrix deviates from the identity by more than 1e-2.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupOp {
    Ball {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        z: Option<Pair>,
        #[arg(long)]
        radius: f64,
    },
    Injrad {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        z: Option<Pair>,
        #[arg(long, default_value_t = 10.0)]
        r_cap: f64,
    },
    Systole {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long, default_value_t = 8.0)]
        search_radius: f64,
    },
    ThinPart {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long = "R")]
        radius: f64,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        /// Window half-width for one-generator groups.
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Disc,
    Gaussian,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierKind {
    Heat,
    Gaussian,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelbergOp {
    /// Tables of `g(u)` and `h(s)` for a kernel.
    Forward {
        #[arg(long, value_enum, default_value_t = KernelKind::Disc)]
        kernel: KernelKind,
        /// Disc radius or Gaussian width.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 10.0)]
        s_max: f64,
        #[arg(long, default_value_t = 201)]
        n: usize,
    },
    /// Table of `k(ρ)` for a multiplier.
    Inverse {
        #[arg(long, value_enum, default_value_t = MultiplierKind::Heat)]
        multiplier: MultiplierKind,
        /// Heat time or Gaussian width.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 20.0)]
        band: f64,
        #[arg(long, default_value_t = 6.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 121)]
        n: usize,
    },
    /// `forward(inverse(h))` against `h` for `h = forward(k)`.
    Roundtrip {
        #[arg(long, value_enum, default_value_t = KernelKind::Disc)]
        kernel: KernelKind,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 40.0)]
        band: f64,
        #[arg(long, default_value_t = 81)]
        n: usize,
    },
    /// Heat kernel table, total mass and the fitted Gaussian bound constant.
    Heat {
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 6.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 601)]
        n: usize,
    },
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorOp {
    /// Kernel of `P_t a P_t` at a pair of points.
    Kernel {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long, default_value = "axis-sign")]
        observable: String,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        z: Pair,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        w: Pair,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
    /// Split Hilbert–Schmidt estimate of the time-averaged kernel.
    Hs {
        #[arg(long, default_value = "cyclic:2")]
        group: String,
        #[arg(long, default_value = "axis-sign")]
        observable: String,
        #[arg(long = "T")]
        big_t: f64,
        #[arg(long = "R")]
        radius: f64,
        /// Systole; computed when omitted.
        #[arg(long)]
        ell_min: Option<f64>,
        /// Thin-part fraction below `R`; estimated when omitted.
        #[arg(long)]
        thin_fraction: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
    /// Lens-average deviations against the lens volume.
    ErgodicDecay {
        #[arg(long, default_value = "cyclic:2")]
        group: String,
        #[arg(long, default_value = "axis-sign")]
        observable: String,
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,2.5,3")]
        t_list: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        r: f64,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
    /// Both sides of the midpoint change of variables for random invariant functions.
    MidpointCheck {
        #[arg(long, default_value = "bolza")]
        group: String,
        #[arg(long = "R", default_value_t = 1.5)]
        radius: f64,
        #[arg(long, default_value_t = 5)]
        functions: usize,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
    /// Monte Carlo lens volumes and the growth slope in `t − r/2`.
    LensVolume {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
        t_list: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        r: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
    },
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceOp {
    /// Weyl density of `heat:<t>`, `indicator:<a>,<b>` or `trapezoid:<a>,<b>,<eps>`.
    Weyl {
        #[arg(long)]
        function: String,
    },
    /// Pre-trace identity on a window of the hyperbolic cylinder.
    Pretrace {
        #[arg(long, default_value_t = 1.5)]
        length: f64,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
        t: Vec<f64>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        h: f64,
        #[arg(long, default_value_t = 20.0)]
        r_max: f64,
    },
    /// Eigenvalue count in an interval, exact from eigen-data or estimated from the trace.
    Count {
        #[arg(long, value_parser = parse_pair)]
        interval: Pair,
        #[arg(long)]
        eigen: Option<PathBuf>,
        #[arg(long, default_value = "cyclic:2")]
        group: String,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 40)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Exponential-sum fit of the smoothed indicator of an interval.
    Expfit {
        #[arg(long, value_parser = parse_pair)]
        interval: Pair,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 40)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        grid: usize,
    },
}

/// `a,b` pair of reals.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Pair(pub f64, pub f64);

fn parse_pair(s: &str) -> std::result::Result<Pair, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => {
            let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
            let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
            Ok(Pair(a, b))
        }
        _ => Err(format!("expected two comma-separated numbers, got {s:?}")),
    }
}

/// Observable description read from `--observable`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableFile {
    Constant {
        value: f64,
    },
    /// Indicator of a coordinate box, evaluated at the reduced point.
    Cell {
        x: [f64; 2],
        y: [f64; 2],
        #[serde(default = "one")]
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    /// `sign(sin(π s))` in the Fermi coordinate `s` along the imaginary axis.
    AxisSign,
    /// Values at the mesh points of the eigen-data (qe only).
    Values {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl ObservableFile {
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        if let Some(c) = spec.strip_prefix("constant:") {
            return c.parse().map(|value| Self::Constant { value }).map_err(|e| format!("{e}"));
        }
        if spec == "axis-sign" {
            return Ok(Self::AxisSign);
        }
        let text = if spec.trim_start().starts_with('{') {
            spec.to_string()
        } else {
            fs::read_to_string(spec).map_err(|e| format!("{spec}: {e}"))?
        };
        serde_json::from_str(&text).map_err(|e| format!("{spec}: {e}"))
    }

    /// The observable on the plane; with a surface, evaluated at the reduced point.
    pub fn build(&self, surface: Option<Arc<Surface>>) -> std::result::Result<Observable, String> {
        let reduce = move |z: Point| surface.as_ref().map_or(z, |s| s.reduce(z).0);
        Ok(match *self {
            Self::Constant { value } => Observable::constant(value),
            Self::Cell { x, y, inside, outside } => Observable::new(
                move |z| {
                    let w = reduce(z);
                    if (x[0]..x[1]).contains(&w.x) && (y[0]..y[1]).contains(&w.y) {
                        inside
                    } else {
                        outside
                    }
                },
                inside.abs().max(outside.abs()),
            ),
            Self::AxisSign => Observable::new(
                move |z| (std::f64::consts::PI * CylinderWindow::fermi(reduce(z)).0).sin().signum(),
                1.0,
            ),
            Self::Values { .. } => return Err("mesh values only apply to qe".into()),
        })
    }
}

/// A region of the plane standing for a quotient: a Dirichlet domain, or a cylinder window
/// for one-generator groups.
#[derive(Debug, Clone)]
pub enum Surface {
    Domain(DirichletDomain),
    Cylinder(CylinderWindow),
}

impl Surface {
    pub fn new(spec: &GroupSpec, reach: f64, width: f64) -> crate::Result<Self> {
        if spec.generators.len() == 1 {
            Ok(Self::Cylinder(CylinderWindow::from_spec(spec, width)?))
        } else {
            Ok(Self::Domain(DirichletDomain::with_reach(spec, reach)?))
        }
    }
}

impl Quotient for Surface {
    fn volume(&self) -> f64 {
        match self {
            Self::Domain(d) => d.volume(),
            Self::Cylinder(c) => c.volume(),
        }
    }
    fn contains(&self, z: Point) -> bool {
        match self {
            Self::Domain(d) => d.contains(z),
            Self::Cylinder(c) => c.contains(z),
        }
    }
    fn sample(&self, rng: &mut Rng) -> Point {
        match self {
            Self::Domain(d) => d.sample(rng),
            Self::Cylinder(c) => c.sample(rng),
        }
    }
    fn reduce(&self, z: Point) -> (Point, MobiusElement) {
        match self {
            Self::Domain(d) => d.reduce(z),
            Self::Cylinder(c) => c.reduce(z),
        }
    }
    fn translates(&self, z: Point, r: f64) -> crate::Result<Vec<(MobiusElement, f64)>> {
        match self {
            Self::Domain(d) => d.translates(z, r),
            Self::Cylinder(c) => c.translates(z, r),
        }
    }
}

/// `bolza`, `cyclic:<L>`, or a group JSON file.
pub fn load_group(spec: &str) -> std::result::Result<GroupSpec, String> {
    if spec == "bolza" || spec == "octagon" {
        return Ok(octagon_group());
    }
    if let Some(l) = spec.strip_prefix("cyclic:") {
        let l: f64 = l.parse().map_err(|e| format!("{spec}: {e}"))?;
        return cyclic_group(l).map_err(|e| e.to_string());
    }
    GroupSpec::load(spec).map_err(|e| format!("{spec}: {e}"))
}

/// Run record written after every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub wall_time: f64,
}

enum Failure {
    Usage(String),
    Numerical(HypError),
    Check(Value),
    Io(std::io::Error),
}

impl From<HypError> for Failure {
    fn from(e: HypError) -> Self {
        match e {
            HypError::Io(e) => Failure::Io(e),
            e => Failure::Numerical(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(flag: &str, msg: impl std::fmt::Display) -> Outcome<T> {
    Err(Failure::Usage(format!("{flag}: {msg}")))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// CSV cell.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_f64(*v),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    tolerances: BTreeMap<String, f64>,
}

impl Output {
    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Outcome {
        let path = self.dir.join(name);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome {
        let text = serde_json::to_string_pretty(value).map_err(HypError::from)?;
        fs::write(self.dir.join(name), text + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn tol(&mut self, name: &str, requested: Option<f64>, default: f64) -> f64 {
        let t = requested.unwrap_or(default);
        self.tolerances.insert(name.to_string(), t);
        t
    }
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Io(std::io::Error::other(e))
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on numerical failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var("HYPLAB_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) => Some(t),
                Err(e) => {
                    eprintln!("error: HYPLAB_THREADS: {e}");
                    return 2;
                }
            },
            Err(_) => None,
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: --threads: {e}");
            return 2;
        }
    };
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: --out {}: {e}", cli.out.display());
        return 2;
    }
    let start = Instant::now();
    let mut out = Output { dir: cli.out.clone(), files: Vec::new(), tolerances: BTreeMap::new() };
    let result = pool.install(|| dispatch(&cli, &mut out));
    match result {
        Ok(()) => {
            let config = serde_json::to_vec(&cli).expect("config serializes");
            let manifest = RunManifest {
                command: command_name(&cli.command),
                config_hash: hex::encode(Sha256::digest(&config)),
                seed: cli.seed,
                tolerances: out.tolerances,
                outputs: out.files,
                wall_time: start.elapsed().as_secs_f64(),
            };
            match write_manifest(&cli.out, &manifest) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: writing manifest: {e}");
                    1
                }
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Numerical(e)) => {
            let diag = json!({ "command": command_name(&cli.command), "error": format!("{e:?}"), "message": e.to_string() });
            report_failure(&cli.out, &diag);
            1
        }
        Err(Failure::Check(diag)) => {
            report_failure(&cli.out, &json!({ "command": command_name(&cli.command), "check_failed": diag }));
            1
        }
    }
}

fn report_failure(dir: &Path, diag: &Value) {
    let text = serde_json::to_string_pretty(diag).unwrap_or_default();
    eprintln!("{text}");
    let _ = fs::write(dir.join("error.json"), text + "\n");
}

fn write_manifest(dir: &Path, m: &RunManifest) -> std::io::Result<()> {
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(m).map_err(std::io::Error::other)? + "\n")?;
    fs::rename(tmp, dir.join("manifest.json"))
}

fn command_name(c: &Command) -> String {
    let sub = |v: &dyn std::fmt::Debug| {
        let s = format!("{v:?}");
        let head = s.split([' ', '{', '(']).next().unwrap_or_default().to_string();
        kebab(&head)
    };
    match c {
        Command::GeomCheck { .. } => "geom-check".into(),
        Command::Group { op } => format!("group {}", sub(op)),
        Command::Selberg { op } => format!("selberg {}", sub(op)),
        Command::Propagator { op } => format!("propagator {}", sub(op)),
        Command::SpectralAction { .. } => "spectral-action".into(),
        Command::Trace { op } => format!("trace {}", sub(op)),
        Command::Qe { .. } => "qe".into(),
    }
}

fn kebab(s: &str) -> String {
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if ch.is_uppercase() {
            if i > 0 {
                out.push('-');
            }
            out.extend(ch.to_lowercase());
        } else {
            out.push(ch);
        }
    }
    out
}

fn dispatch(cli: &Cli, out: &mut Output) -> Outcome {
    let seed = cli.seed;
    match &cli.command {
        Command::GeomCheck { n } => geom_check(*n, seed, cli.tol, out),
        Command::Group { op } => group_cmd(op, seed, out),
        Command::Selberg { op } => selberg_cmd(op, cli.tol, out),
        Command::Propagator { op } => propagator_cmd(op, seed, cli.tol, out),
        Command::SpectralAction { interval, big_t, k_max, n_t } => {
            spectral_action_cmd(*interval, *big_t, *k_max, *n_t, cli.tol, out)
        }
        Command::Trace { op } => trace_cmd(op, seed, out),
        Command::Qe { eigen, observable, interval, radius, ell_min, rho_gap, thin_volume, strict } => {
            let params = BoundParameters { radius: *radius, ell_min: *ell_min, rho_gap: *rho_gap, thin_volume: *thin_volume };
            qe_cmd(eigen, observable, *interval, params, *strict, out)
        }
    }
}

fn geom_check(n: usize, seed: u64, tol: Option<f64>, out: &mut Output) -> Outcome {
    use rand::Rng as _;
    let tol = out.tol("geom", tol, 1e-9);
    let mut rng = stream_rng(seed, 0x6765_6f6d);
    let mut worst = [0.0f64; 4];
    for _ in 0..n.max(1) {
        let z = sample_in_ball(&mut rng, Point::i(), 3.0);
        let w = sample_in_ball(&mut rng, Point::i(), 3.0);
        let u = sample_in_ball(&mut rng, Point::i(), 3.0);
        let a = 0.3 + 2.0 * rng.gen::<f64>();
        let (b, c) = (2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0);
        let g = MobiusElement::new(a, b, c, (1.0 + b * c) / a)?;
        let d = hyp_dist(z, w);
        worst[0] = worst[0].max((hyp_dist(g.apply(z), g.apply(w)) - d).abs() / (1.0 + d));
        worst[1] = worst[1].max(hyp_dist(z, u) - d - hyp_dist(w, u));
        let theta = std::f64::consts::TAU * rng.gen::<f64>();
        let t = 6.0 * rng.gen::<f64>() - 3.0;
        let v = geodesic_flow(&UnitTangent::new(z, theta), t);
        worst[2] = worst[2].max((hyp_dist(z, v.base) - t.abs()).abs() / (1.0 + t.abs()));
        let r = 3.0 * rng.gen::<f64>() + 0.1;
        let (th, rr) = polar_coords(z, polar_from(z, theta, r));
        let dth = (th - theta).rem_euclid(std::f64::consts::TAU);
        worst[3] = worst[3].max((rr - r).abs().max(dth.min(std::f64::consts::TAU - dth)));
    }
    let names = ["isometry", "triangle", "flow_speed", "polar_roundtrip"];
    let rows = names
        .iter()
        .zip(worst)
        .map(|(name, w)| vec![Cell::S(name.to_string()), w.into(), tol.into(), Cell::S((w <= tol).to_string())])
        .collect();
    out.csv("geom_check.csv", &["check", "max_defect", "tol", "pass"], rows)?;
    if worst.iter().any(|&w| !(w <= tol)) {
        return Err(Failure::Check(json!({ "checks": names, "max_defect": worst, "tol": tol })));
    }
    Ok(())
}

fn group_arg(spec: &str) -> Outcome<GroupSpec> {
    load_group(spec).or_else(|e| usage("--group", e))
}

fn point_or_base(z: Option<Pair>, spec: &GroupSpec) -> Outcome<Point> {
    match z {
        None => Ok(spec.base_point),
        Some(Pair(x, y)) => Point::checked(x, y).or_else(|e| usage("--z", e)),
    }
}

fn group_cmd(op: &GroupOp, seed: u64, out: &mut Output) -> Outcome {
    match op {
        GroupOp::Ball { group, z, radius } => {
            let spec = group_arg(group)?;
            let z = point_or_base(*z, &spec)?;
            let ball = group_ball(&spec, z, *radius)?;
            let rows = ball
                .elements
                .iter()
                .map(|e| {
                    let word = e.word.iter().map(i32::to_string).collect::<Vec<_>>().join(" ");
                    let m = e.element;
                    vec![Cell::S(word), e.displacement.into(), m.a.into(), m.b.into(), m.c.into(), m.d.into()]
                })
                .collect();
            out.csv("ball.csv", &["word", "displacement", "a", "b", "c", "d"], rows)?;
            out.json("ball.json", &json!({ "group": spec.name, "center": [z.x, z.y], "radius": radius, "count": ball.len() }))
        }
        GroupOp::Injrad { group, z, r_cap } => {
            let spec = group_arg(group)?;
            let z = point_or_base(*z, &spec)?;
            let r = injectivity_radius(&spec, z, *r_cap)?;
            out.json("injrad.json", &json!({ "group": spec.name, "z": [z.x, z.y], "injectivity_radius": r }))
        }
        GroupOp::Systole { group, search_radius } => {
            let spec = group_arg(group)?;
            let s = systole(&spec, *search_radius)?;
            let bound = lattice_count_bound(*search_radius, s);
            out.json("systole.json", &json!({ "group": spec.name, "systole": s, "search_radius": search_radius, "lattice_count_bound": bound }))
        }
        GroupOp::ThinPart { group, radius, n, width } => {
            let spec = group_arg(group)?;
            let surface = Surface::new(&spec, 2.0 * radius, *width)?;
            let thin = thin_part_fraction_in(&surface, *radius, *n, seed)?;
            out.json("thin_part.json", &json!({ "group": spec.name, "R": radius, "volume": surface.volume(), "thin": thin }))
        }
    }
}

fn kernel_of(kind: KernelKind, t: f64) -> Outcome<RadialKernel> {
    if !(t > 0.0) {
        return usage("--t", "must be positive");
    }
    Ok(match kind {
        KernelKind::Disc => RadialKernel::disc(t)?,
        KernelKind::Gaussian => RadialKernel::gaussian(t)?,
    })
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn selberg_cmd(op: &SelbergOp, tol: Option<f64>, out: &mut Output) -> Outcome {
    match op {
        SelbergOp::Forward { kernel, t, s_max, n } => {
            let k = kernel_of(*kernel, *t)?;
            let h = selberg_forward(&k)?;
            let rows = grid(0.0, *s_max, *n).into_iter().map(|s| vec![s.into(), h.eval(s).into()]).collect();
            out.csv("h.csv", &["s", "h"], rows)?;
            let mut abel = Vec::with_capacity(*n);
            for u in grid(0.0, k.support, *n) {
                abel.push(vec![u.into(), abel_transform(&k, u)?.into()]);
            }
            out.csv("g.csv", &["u", "g"], abel)
        }
        SelbergOp::Inverse { multiplier, t, band, rho_max, n } => {
            if !(*t > 0.0) {
                return usage("--t", "must be positive");
            }
            let h = match multiplier {
                MultiplierKind::Heat => SpectralFunction::heat(*t),
                MultiplierKind::Gaussian => SpectralFunction::gaussian(*t),
            };
            let opts = InverseOptions { tol: out.tol("roundtrip", tol, 1e-5), ..InverseOptions::default() };
            let k = selberg_inverse_with(&h, *band, &opts)?;
            let rows = grid(0.0, *rho_max, *n).into_iter().map(|r| vec![r.into(), k.eval(r).into()]).collect();
            out.csv("k.csv", &["rho", "k"], rows)
        }
        SelbergOp::Roundtrip { kernel, t, band, n } => {
            let tol = out.tol("roundtrip", tol, 1e-5);
            let k = kernel_of(*kernel, *t)?;
            let h = selberg_forward(&k)?;
            let opts = InverseOptions { check_points: 0, ..InverseOptions::default() };
            let back = selberg_forward(&selberg_inverse_with(&h, *band, &opts)?)?;
            let mut sup = 0.0f64;
            let rows = grid(0.0, 0.5 * band, *n)
                .into_iter()
                .map(|s| {
                    let (a, b) = (h.eval(s), back.eval(s));
                    sup = sup.max((a - b).abs());
                    vec![s.into(), a.into(), b.into(), (a - b).abs().into()]
                })
                .collect();
            out.csv("roundtrip.csv", &["s", "h", "h_roundtrip", "error"], rows)?;
            out.json("roundtrip.json", &json!({ "band": band, "sup_error": sup, "tol": tol }))?;
            if !(sup <= tol) {
                return Err(HypError::BandTooSmall { band: *band, sup_err: sup, tolerance: tol }.into());
            }
            Ok(())
        }
        SelbergOp::Heat { t, rho_max, n } => {
            let tol = out.tol("mass", tol, 1e-6);
            let k = heat_kernel_fn(*t)?;
            let mass = Adaptive::new(1e-14, 1e-12)
                .integrate(|r: f64| k.eval(r) * std::f64::consts::TAU * r.sinh(), 0.0, k.support)?
                .value;
            let c = heat_bound_constant(*t, *rho_max, *n)?;
            let rows = grid(0.0, *rho_max, *n).into_iter().map(|r| vec![r.into(), k.eval(r).into()]).collect();
            out.csv("heat.csv", &["rho", "p"], rows)?;
            out.json("heat.json", &json!({ "t": t, "mass": mass, "bound_constant": c, "rho_max": rho_max }))?;
            if !((mass - 1.0).abs() <= tol) {
                return Err(Failure::Check(json!({ "mass": mass, "tol": tol })));
            }
            Ok(())
        }
    }
}

fn observable_arg(spec: &str, surface: Option<Arc<Surface>>) -> Outcome<Observable> {
    ObservableFile::parse(spec).and_then(|f| f.build(surface)).or_else(|e| usage("--observable", e))
}

fn propagator_cmd(op: &PropagatorOp, seed: u64, tol: Option<f64>, out: &mut Output) -> Outcome {
    match op {
        PropagatorOp::Kernel { group, observable, z, w, t, n, width } => {
            let spec = group_arg(group)?;
            let surface = Arc::new(Surface::new(&spec, 0.0, *width)?);
            let a = observable_arg(observable, Some(surface))?;
            let z = Point::checked(z.0, z.1).or_else(|e| usage("--z", e))?;
            let w = Point::checked(w.0, w.1).or_else(|e| usage("--w", e))?;
            let k = kernel_pt_a_pt(&a, z, w, *t, *n, seed)?;
            out.json("kernel.json", &json!({ "t": t, "distance": hyp_dist(z, w), "kernel": k }))
        }
        PropagatorOp::Hs { group, observable, big_t, radius, ell_min, thin_fraction, n, width } => {
            let spec = group_arg(group)?;
            let surface = Arc::new(Surface::new(&spec, radius.max(2.0 * big_t), *width)?);
            let a = observable_arg(observable, Some(surface.clone()))?;
            let ell = match ell_min {
                Some(l) => *l,
                None => systole(&spec, 8.0)?,
            };
            let thin = match thin_fraction {
                Some(f) => *f,
                None => thin_part_fraction_in(surface.as_ref(), *radius, 4000, seed ^ 0x7468)?.fraction,
            };
            let opts = HsOptions { n: *n, seed, ..HsOptions::default() };
            let e = hs_norm_estimate(surface.as_ref(), &a, *big_t, *radius, ell, thin, &opts)?;
            out.json("hs.json", &json!({ "T": big_t, "R": radius, "ell_min": ell, "thin_fraction": thin, "estimate": e }))
        }
        PropagatorOp::ErgodicDecay { group, observable, t_list, r, n, width } => {
            let spec = group_arg(group)?;
            let surface = Arc::new(Surface::new(&spec, 0.0, *width)?);
            let a = observable_arg(observable, Some(surface.clone()))?;
            let table = ergodic_average_decay(surface.as_ref(), &a, t_list, *r, *n, seed, LensRule::default())?;
            let rows = table
                .rows
                .iter()
                .map(|row| vec![row.t.into(), row.set_volume.into(), row.deviation.into(), row.stderr.into()])
                .collect();
            out.csv("decay.csv", &["t", "set_volume", "deviation", "stderr"], rows)?;
            out.json(
                "decay.json",
                &json!({
                    "exponent": table.exponent,
                    "nonincreasing": table.nonincreasing,
                    "subtracted_mean": table.subtracted_mean,
                    "mean_stderr": table.mean_stderr,
                }),
            )
        }
        PropagatorOp::MidpointCheck { group, radius, functions, n, width } => {
            let max_sigma = out.tol("sigma", tol, 3.0);
            let spec = group_arg(group)?;
            let surface = Surface::new(&spec, 2.0 * radius, *width)?;
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for i in 0..*functions {
                let f = FrameTestFunction::random(seed.wrapping_add(i as u64));
                let c = midpoint_change_of_var_check(|v, r| f.eval(&surface, v, r), *radius, &surface, *n, seed.wrapping_add(1000 + i as u64))?;
                worst = worst.max(c.sigma());
                rows.push(vec![
                    i.into(),
                    c.lhs.value.into(),
                    c.lhs.stderr.into(),
                    c.rhs.value.into(),
                    c.rhs.stderr.into(),
                    c.sigma().into(),
                ]);
            }
            out.csv("midpoint.csv", &["function", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "sigma"], rows)?;
            if !(worst <= max_sigma) {
                return Err(Failure::Check(json!({ "max_sigma": worst, "tol": max_sigma })));
            }
            Ok(())
        }
        PropagatorOp::LensVolume { t_list, r, n } => {
            let (slope, vols) = if t_list.len() >= 2 {
                let (s, v) = lens_growth_slope(t_list, *r, *n, seed)?;
                (Some(s), v)
            } else {
                let mut v = Vec::new();
                for &t in t_list {
                    v.push(intersection_volume(t, *r, *n, seed)?);
                }
                (None, v)
            };
            let rows = vols
                .iter()
                .map(|l| vec![l.t.into(), l.r.into(), l.volume.into(), l.stderr.into(), l.reference.into(), l.rho.into(), l.acceptance.into()])
                .collect();
            out.csv("lens.csv", &["t", "r", "volume", "stderr", "reference", "rho", "acceptance"], rows)?;
            out.json("lens.json", &json!({ "slope": slope }))
        }
    }
}

fn spectral_action_cmd(interval: Pair, big_t: f64, k_max: usize, n_t: usize, tol: Option<f64>, out: &mut Output) -> Outcome {
    out.tol("period", tol, crate::spectral_action::PERIOD_TOL);
    let iv = SpectralInterval::new(interval.0, interval.1).or_else(|e| usage("--interval", e))?;
    if !(big_t > 0.0) {
        return usage("--T", "must be positive");
    }
    let period = verify_period_bound(iv, k_max)?;
    let grid_s = iv.grid(AVERAGE_GRID);
    let avgs: Vec<f64> = grid_s.iter().map(|&s| time_average(s, big_t)).collect();
    let (c_big, argmin) = grid_s.iter().zip(&avgs).fold((f64::INFINITY, 0.0), |m, (&s, &v)| if v < m.0 { (v, s) } else { m });
    out.csv("average.csv", &["s", "T", "avg"], grid_s.iter().zip(&avgs).map(|(&s, &v)| vec![s.into(), big_t.into(), v.into()]).collect())?;
    let mut rows = Vec::new();
    for s in iv.grid(5) {
        for (t, h) in h_table(s, 0.0, big_t, n_t) {
            rows.push(vec![s.into(), t.into(), h.into()]);
        }
    }
    out.csv("h_table.csv", &["s", "t", "h"], rows)?;
    let chain = lower_bound_chain(iv, k_max)?;
    out.json(
        "spectral_action.json",
        &json!({
            "interval": [iv.a, iv.b],
            "T": big_t,
            "c_I": period.c_i,
            "c_I_certified": period.c_i_certified,
            "k0": period.k0,
            "worst_margin": period.worst_margin,
            "C_I_estimate": c_big,
            "argmin_s": argmin,
            "chain": chain,
        }),
    )
}

fn trace_cmd(op: &TraceOp, seed: u64, out: &mut Output) -> Outcome {
    match op {
        TraceOp::Weyl { function } => {
            let (kind, args) = function.split_once(':').unwrap_or((function.as_str(), ""));
            let nums: Vec<f64> = match args.split(',').filter(|s| !s.is_empty()).map(str::parse).collect() {
                Ok(v) => v,
                Err(e) => return usage("--function", e),
            };
            let value = match (kind, nums.as_slice()) {
                ("heat", [t]) if *t > 0.0 => weyl_heat(*t)?,
                ("indicator", [a, b]) if b > a => {
                    let f = |x: f64| f64::from(u8::from(x >= *a && x <= *b));
                    weyl_density_with_breaks(f, *b, &[*a, *b])?
                }
                ("trapezoid", [a, b, eps]) if b > a && *eps > 0.0 => Trapezoid::new(*a, *b, *eps, 0).weyl()?,
                _ => return usage("--function", format!("unrecognized {function:?}")),
            };
            out.json("weyl.json", &json!({ "function": function, "weyl_density": value }))
        }
        TraceOp::Pretrace { length, width, t, n, h, r_max } => {
            let grid = CylinderGrid { h: *h, r_max: *r_max, ..CylinderGrid::default() };
            let mut checks = Vec::new();
            for (i, &tt) in t.iter().enumerate() {
                checks.push(pretrace_check(*length, *width, tt, grid, *n, seed.wrapping_add(i as u64))?);
            }
            let rows = checks
                .iter()
                .map(|c| {
                    vec![
                        c.t.into(),
                        c.spectral.into(),
                        c.weyl_term.into(),
                        c.geometric.into(),
                        c.residual.into(),
                        c.allowed.into(),
                        Cell::S(c.passes().to_string()),
                    ]
                })
                .collect();
            out.csv("pretrace.csv", &["t", "spectral", "weyl_term", "geometric", "residual", "allowed", "pass"], rows)?;
            out.json("pretrace.json", &checks)?;
            if checks.iter().any(|c| !c.passes()) {
                return Err(Failure::Check(serde_json::to_value(&checks).unwrap_or_default()));
            }
            Ok(())
        }
        TraceOp::Count { interval, eigen, group, width, eps, k, n } => {
            let spec = group_arg(group)?;
            let e = match eigen {
                Some(p) => Some(EigenData::load(p).map_err(|e| Failure::Usage(format!("--eigen: {e}")))?),
                None => None,
            };
            let ell = if spec.generators.len() == 1 {
                CylinderWindow::from_spec(&spec, *width)?.length
            } else {
                systole(&spec, 8.0)?
            };
            let surface = Surface::new(&spec, 0.0, *width)?;
            let opts = CountOptions { eps: *eps, k: *k, ell, n: *n, seed, ..CountOptions::default() };
            let c = eigencount_estimate(&surface, e.as_ref(), (interval.0, interval.1), opts)?;
            out.json("count.json", &json!({ "interval": [interval.0, interval.1], "count": c }))
        }
        TraceOp::Expfit { interval, eps, k, grid: g } => {
            if !(interval.1 > interval.0) {
                return usage("--interval", "needs lo < hi");
            }
            let f = Trapezoid::new(interval.0, interval.1, *eps, 0);
            let x_max = Trapezoid::new(interval.0, interval.1, *eps, 1).support_end() + 1.0;
            let fit = exp_sum_fit(|x| f.eval(x), *k, x_max, None, *g)?;
            let rows = grid(0.0, x_max, *g).into_iter().map(|x| vec![x.into(), f.eval(x).into(), fit.eval(x).into()]).collect();
            out.csv("expfit.csv", &["x", "f", "approx"], rows)?;
            out.json("expfit.json", &fit)
        }
    }
}

fn qe_cmd(eigen: &Path, observable: &str, interval: Pair, params: BoundParameters, strict: bool, out: &mut Output) -> Outcome {
    out.tol("gram", None, crate::qe::GRAM_WARNING);
    let e = EigenData::load(eigen).map_err(|e| Failure::Usage(format!("--eigen: {e}")))?;
    let file = ObservableFile::parse(observable).or_else(|e| usage("--observable", e))?;
    let report = match &file {
        ObservableFile::Values { values } => qe_variance_values(&e, values, (interval.0, interval.1), params, strict),
        other => {
            let a = other.build(None).or_else(|e| usage("--observable", e))?;
            qe_variance(&e, &a, (interval.0, interval.1), params, strict)
        }
    };
    let report = match report {
        Err(HypError::InvalidInput(msg)) => return usage("qe", msg),
        r => r?,
    };
    let rows = report
        .terms
        .iter()
        .map(|t| vec![t.index.into(), t.lambda.into(), t.matrix_element.into(), t.deviation_sq.into()])
        .collect();
    out.csv("qe_terms.csv", &["j", "lambda", "matrix_element", "deviation_sq"], rows)?;
    let mut summary = serde_json::to_value(&report).map_err(HypError::from)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("terms");
    }
    out.json("qe.json", &summary)
}
