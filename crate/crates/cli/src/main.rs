//! Command-line front end: each subcommand runs one experiment and writes CSV/JSON artifacts.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use isoscatter::equilibria::{
    collision_restpoints, infinity_restpoint_binary, infinity_restpoint_hyperbolic, CatalogEntry, CentralShape,
};
use isoscatter::manifolds::{
    find_epsilon, homothetic_orbit, homothetic_speed, infinity_chain, trace_unstable_branch_m0, Epsilon,
    StarredLagrange, TraceOptions,
};
use isoscatter::model::{u_of_theta, EnergyLevel, MassParams};
use isoscatter::scattering::{
    scatter_at, scatter_map, scatter_traced, u_plus_profile_from_l, unstable_disc_init, OutcomeKind, ScatterConfig,
    ScatterMap,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "isoscatter", version, about = "Isosceles three-body scattering experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Mass of the third body.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    m3: f64,
    /// Total energy.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    h: f64,
    /// Output path prefix; writes <prefix>.json and, where there is tabular data, <prefix>.csv.
    /// Without it the JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores for sweeps, 1 otherwise).
    #[arg(long)]
    threads: Option<usize>,
    /// Flat key = value file; any flag of this subcommand, overridden by the command line.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// ScatterConfig fields. Values are parsed by the library so config files and flags agree.
#[derive(Args, Clone, Default)]
struct ScatterFlags {
    /// Radius of the unstable disc around the incoming restpoint [1e-6].
    #[arg(long)]
    rho: Option<String>,
    /// Arc parameters: lo:hi:n or a comma list, inside [-1, 1] [-1:1:400].
    #[arg(long, allow_hyphen_values = true)]
    z_grid: Option<String>,
    /// Escape once s exceeds this with w settled [1 - 1e-6].
    #[arg(long)]
    s_escape: Option<String>,
    /// Triple collision once s drops below this [1e-6].
    #[arg(long)]
    s_collision: Option<String>,
    /// Triple collision also needs v below this [-sqrt(2h)/2].
    #[arg(long, allow_hyphen_values = true)]
    v_collision: Option<String>,
    /// |w| below which an escape counts as settled [1e-7].
    #[arg(long)]
    w_settle: Option<String>,
    /// Integration budget in regularized time [200].
    #[arg(long)]
    tau_max: Option<String>,
    /// Absolute tolerance [1e-12].
    #[arg(long)]
    atol: Option<String>,
    /// Relative tolerance [1e-12].
    #[arg(long)]
    rtol: Option<String>,
    /// Bisect fate changes down to this width in z [1e-10].
    #[arg(long)]
    refine_width: Option<String>,
    /// Bisect neighbouring escapes whose final shapes differ by more [0.01].
    #[arg(long)]
    coverage_step: Option<String>,
    /// A u₊ jump above this between escapes marks a hidden collision [1].
    #[arg(long)]
    u_jump: Option<String>,
    /// Cap on orbits added by refinement [20000].
    #[arg(long)]
    max_refine: Option<String>,
    /// Project each step onto the energy shell (true/false).
    #[arg(long)]
    projection: Option<String>,
    /// Stop early on a certified bound binary with m3 receding (true/false).
    #[arg(long)]
    binary_certificate: Option<String>,
}

impl ScatterFlags {
    fn config(&self) -> Result<ScatterConfig> {
        let mut cfg = ScatterConfig::default();
        let pairs = [
            ("rho", &self.rho),
            ("z_grid", &self.z_grid),
            ("s_escape", &self.s_escape),
            ("s_collision", &self.s_collision),
            ("v_collision", &self.v_collision),
            ("w_settle", &self.w_settle),
            ("tau_max", &self.tau_max),
            ("atol", &self.atol),
            ("rtol", &self.rtol),
            ("refine_width", &self.refine_width),
            ("coverage_step", &self.coverage_step),
            ("u_jump", &self.u_jump),
            ("max_refine", &self.max_refine),
            ("projection", &self.projection),
            ("binary_certificate", &self.binary_certificate),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v).map_err(usage)?;
            }
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct ShapeMinus {
    /// Initial shape: lagrange, lagrange-minus, euler, or θ₋ in radians.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "u0")]
    theta_minus: Option<String>,
    /// Initial shape as the covering angle u₀.
    #[arg(long, allow_hyphen_values = true)]
    u0: Option<f64>,
}

impl ShapeMinus {
    fn u0(&self, p: &MassParams) -> Result<f64> {
        match (&self.theta_minus, self.u0) {
            (_, Some(u)) => Ok(u),
            (None, None) => Ok(p.l_plus),
            (Some(t), None) => match t.as_str() {
                "lagrange" | "lagrange-plus" => Ok(p.l_plus),
                "lagrange-minus" => Ok(-p.l_plus),
                "euler" => Ok(0.0),
                v => {
                    let th: f64 = v.parse().map_err(|_| usage(format!("--theta-minus: bad value {v:?}")))?;
                    if !(th.abs() < std::f64::consts::FRAC_PI_2) {
                        bail!(usage(format!("--theta-minus must lie in (-pi/2, pi/2), got {th}")));
                    }
                    Ok(u_of_theta(th))
                }
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sign {
    #[value(name = "+", alias = "plus")]
    Plus,
    #[value(name = "-", alias = "minus")]
    Minus,
}

impl Sign {
    fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Starred {
    LstarPlus,
    LstarMinus,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Eps1,
    Eps2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    LagrangePlus,
    Euler,
    LagrangeMinus,
}

impl From<Shape> for CentralShape {
    fn from(s: Shape) -> Self {
        match s {
            Shape::LagrangePlus => CentralShape::LagrangePlus,
            Shape::Euler => CentralShape::Euler,
            Shape::LagrangeMinus => CentralShape::LagrangeMinus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LagrangeSide {
    LPlus,
    LMinus,
}

#[derive(Subcommand)]
enum Cmd {
    /// Restpoint catalog with eigenvalues and manifold dimensions.
    #[command(args_override_self = true)]
    Equilibria {
        #[command(flatten)]
        common: Common,
        /// Also list the hyperbolic infinity restpoints at these shapes (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u0: Vec<f64>,
        /// Also list the binary infinity restpoints at these speeds.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Vec<f64>,
    },
    /// Trace one branch of the unstable manifold of L*± inside the collision manifold.
    #[command(name = "trace-m0", args_override_self = true)]
    TraceM0 {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lstar-plus")]
        which: Starred,
        /// Sign of w along the branch.
        #[arg(long, value_enum, allow_hyphen_values = true, default_value = "+")]
        sign: Sign,
        #[arg(long, default_value_t = 1e-6)]
        rho: f64,
        #[arg(long, default_value_t = 2000.0)]
        tau_max: f64,
    },
    /// Locate a bifurcation mass by bisection on the branch fate.
    #[command(args_override_self = true)]
    Bifurcate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        /// Bracket width at which bisection stops.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Analytic restpoint chain inside the infinity manifold.
    #[command(args_override_self = true)]
    Chain {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        u0: f64,
        #[arg(long, value_enum, allow_hyphen_values = true, default_value = "+")]
        sign: Sign,
        /// Number of samples along the chain.
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
    /// Homothetic orbit from collision to infinity.
    #[command(args_override_self = true)]
    Homothetic {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lagrange-plus")]
        shape: Shape,
    },
    /// One orbit from the unstable arc of an incoming restpoint.
    #[command(args_override_self = true)]
    Scatter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeMinus,
        /// Arc parameter in [-1, 1].
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        #[command(flatten)]
        flags: ScatterFlags,
    },
    /// Final shape along the unstable arc of an incoming restpoint.
    #[command(name = "scatter-map", args_override_self = true)]
    ScatterMap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeMinus,
        #[command(flatten)]
        flags: ScatterFlags,
    },
    /// Final shape along the unstable arc of the collision restpoint L±.
    #[command(name = "from-collision", args_override_self = true)]
    FromCollision {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "l-plus")]
        which: LagrangeSide,
        #[command(flatten)]
        flags: ScatterFlags,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Equilibria { common, .. }
            | Cmd::TraceM0 { common, .. }
            | Cmd::Bifurcate { common, .. }
            | Cmd::Chain { common, .. }
            | Cmd::Homothetic { common, .. }
            | Cmd::Scatter { common, .. }
            | Cmd::ScatterMap { common, .. }
            | Cmd::FromCollision { common, .. } => common,
        }
    }

    fn is_sweep(&self) -> bool {
        matches!(self, Cmd::ScatterMap { .. } | Cmd::FromCollision { .. } | Cmd::Bifurcate { .. })
    }
}

/// Marker for errors caused by the invocation rather than the numerics.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(UsageError(e.to_string()))
}

fn setup(c: &Common) -> Result<(MassParams, EnergyLevel)> {
    Ok((MassParams::new(c.m3).map_err(usage)?, EnergyLevel::new(c.h).map_err(usage)?))
}

/// Insert `--key value` pairs from the config file right after the subcommand, so that flags
/// given on the command line come later and win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(sub_idx) = strs.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1) else {
        return Ok(args);
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&strs[sub_idx]) else { return Ok(args) };
    let own: BTreeSet<String> = sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let all: BTreeSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| s.get_arguments().filter_map(|a| a.get_long().map(str::to_string)))
        .collect();
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("config {path}: {e}")))?;
    let mut extra = vec![];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| usage(format!("config {path} line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key == "config" {
            continue;
        }
        if own.contains(&key) {
            extra.push(OsString::from(format!("--{key}={}", v.trim())));
        } else if !all.contains(&key) {
            return Err(usage(format!("config {path} line {}: unknown key {:?}", n + 1, k.trim())));
        }
    }
    let mut out = args[..=sub_idx].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub_idx + 1..]);
    Ok(out)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Write the JSON document (and CSV, when given) under the output prefix, or print the JSON.
fn emit(common: &Common, doc: &Value, csv: Option<&dyn Fn(&mut dyn Write) -> Result<()>>) -> Result<()> {
    match &common.out {
        Some(prefix) => {
            let jp = with_ext(prefix, "json");
            let mut f = create(&jp)?;
            serde_json::to_writer_pretty(&mut f, doc)?;
            writeln!(f)?;
            f.flush()?;
            let mut written = vec![jp.display().to_string()];
            if let Some(write_csv) = csv {
                let cp = with_ext(prefix, "csv");
                let mut f = create(&cp)?;
                write_csv(&mut f)?;
                f.flush()?;
                written.push(cp.display().to_string());
            }
            println!("{}", json!({ "written": written }));
        }
        None => println!("{}", serde_json::to_string_pretty(doc)?),
    }
    Ok(())
}

fn header(command: &str, p: &MassParams, h: &EnergyLevel) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("version".into(), json!(VERSION));
    m.insert("command".into(), json!(command));
    m.insert("m3".into(), json!(p.m3));
    m.insert("h".into(), json!(h.h));
    m
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    Ok(serde_json::to_value(x)?)
}

fn map_doc(command: &str, map: &ScatterMap, cfg: &ScatterConfig, u0: Option<f64>) -> Result<Value> {
    let mut d = header(command, &map.params, &map.energy);
    if let Some(u0) = u0 {
        d.insert("u0".into(), json!(u0));
    }
    d.insert("config".into(), to_value(cfg)?);
    d.insert(
        "summary".into(),
        json!({
            "entries": map.entries.len(),
            "escape": map.count(OutcomeKind::Escape),
            "triple_collision": map.count(OutcomeKind::TripleCollision),
            "budget": map.count(OutcomeKind::Budget),
            "failed": map.count(OutcomeKind::Failed),
            "refined": map.n_refined,
        }),
    );
    d.insert("collision_brackets".into(), to_value(&map.collision_brackets)?);
    d.insert("p_minus".into(), to_value(&CatalogEntry::from(&map.p_minus))?);
    d.insert("rho".into(), json!(map.rho));
    d.insert("entries".into(), to_value(&map.entries)?);
    Ok(Value::Object(d))
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.cmd.common().clone();
    let threads = common.threads.unwrap_or(if cli.cmd.is_sweep() { 0 } else { 1 });
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    let (p, h) = setup(&common)?;
    match cli.cmd {
        Cmd::Equilibria { u0, v0, .. } => {
            let mut rps = collision_restpoints(&p, &h);
            for u in u0 {
                for sign in [-1, 1] {
                    rps.push(infinity_restpoint_hyperbolic(u, &p, &h, sign).map_err(usage)?);
                }
            }
            for v in v0 {
                rps.push(infinity_restpoint_binary(v, &h).map_err(usage)?);
            }
            let mut d = header("equilibria", &p, &h);
            d.insert("mass_params".into(), to_value(&p)?);
            let cat: Vec<CatalogEntry> = rps.iter().map(CatalogEntry::from).collect();
            d.insert("restpoints".into(), to_value(&cat)?);
            emit(&common, &Value::Object(d), None)
        }
        Cmd::TraceM0 { which, sign, rho, tau_max, .. } => {
            let w = match which {
                Starred::LstarPlus => StarredLagrange::LStarPlus,
                Starred::LstarMinus => StarredLagrange::LStarMinus,
            };
            let opts = TraceOptions { tau_max, ..TraceOptions::default() };
            let (tr, fate) = trace_unstable_branch_m0(w, sign.value(), &p, &h, rho, &opts)?;
            let mut d = header("trace-m0", &p, &h);
            d.insert("which".into(), to_value(&w)?);
            d.insert("sign_w".into(), json!(sign.value()));
            d.insert("rho".into(), json!(rho));
            d.insert("fate".into(), to_value(&fate)?);
            emit(&common, &Value::Object(d), Some(&|out| Ok(tr.write_csv(out)?)))
        }
        Cmd::Bifurcate { which, lo, hi, tol, .. } => {
            let (e, default) = match which {
                Which::Eps1 => (Epsilon::Eps1, (0.2, 0.5)),
                Which::Eps2 => (Epsilon::Eps2, (2.0, 3.0)),
            };
            let bracket = (lo.unwrap_or(default.0), hi.unwrap_or(default.1));
            if !(bracket.0 > 0.0 && bracket.0 < bracket.1) || !(tol > 0.0) {
                bail!(usage(format!("need 0 < lo < hi and tol > 0, got {bracket:?}, {tol}")));
            }
            let value = find_epsilon(e, bracket, tol, &TraceOptions::default())?;
            let mut d = header("bifurcate", &p, &h);
            d.remove("m3");
            d.insert("which".into(), json!(format!("{e:?}").to_lowercase()));
            d.insert("value".into(), json!(value));
            d.insert("bracket".into(), json!([bracket.0, bracket.1]));
            d.insert("tol".into(), json!(tol));
            emit(&common, &Value::Object(d), None)
        }
        Cmd::Chain { u0, sign, samples, .. } => {
            let c = infinity_chain(u0, &h, sign.value()).map_err(usage)?;
            let mut d = header("chain", &p, &h);
            d.insert("chain".into(), to_value(&c)?);
            emit(&common, &Value::Object(d), Some(&|out| Ok(c.write_csv(&p, samples, out)?)))
        }
        Cmd::Homothetic { shape, .. } => {
            let shape = CentralShape::from(shape);
            let tr = homothetic_orbit(&p, &h, shape)?;
            let uc = shape.u(&p);
            let du = tr.nodes.iter().map(|n| (n.state.u - uc).abs()).fold(0.0, f64::max);
            let mut d = header("homothetic", &p, &h);
            d.insert("shape".into(), to_value(&shape)?);
            d.insert("u_c".into(), json!(uc));
            d.insert("v_collision".into(), json!(homothetic_speed(uc, &p)));
            d.insert("nodes".into(), json!(tr.len()));
            d.insert("tau_span".into(), json!([tr.first().tau, tr.last().tau]));
            d.insert("max_u_drift".into(), json!(du));
            d.insert("max_energy_residual".into(), json!(tr.max_energy_residual()));
            emit(&common, &Value::Object(d), Some(&|out| Ok(tr.write_csv(out)?)))
        }
        Cmd::Scatter { shape, z, flags, .. } => {
            let cfg = flags.config()?;
            let u0 = shape.u0(&p)?;
            let rp = infinity_restpoint_hyperbolic(u0, &p, &h, -1).map_err(usage)?;
            if !(-1.0..=1.0).contains(&z) {
                bail!(usage(format!("--z must lie in [-1, 1], got {z}")));
            }
            let mut d = header("scatter", &p, &h);
            d.insert("u0".into(), json!(u0));
            d.insert("z".into(), json!(z));
            if z.abs() == 1.0 {
                let outcome = scatter_at(&rp, &p, &h, &cfg, z);
                let c = infinity_chain(u0, &h, z)?;
                d.insert("outcome".into(), to_value(&outcome)?);
                emit(&common, &Value::Object(d), Some(&|out| Ok(c.write_csv(&p, 400, out)?)))
            } else {
                let x0 = unstable_disc_init(&rp, &p, &h, cfg.rho, z)?;
                let (tr, outcome) = scatter_traced(x0, &p, &h, &cfg)?;
                d.insert("outcome".into(), to_value(&outcome)?);
                emit(&common, &Value::Object(d), Some(&|out| Ok(tr.write_csv(out)?)))
            }
        }
        Cmd::ScatterMap { shape, flags, .. } => {
            let cfg = flags.config()?;
            let u0 = shape.u0(&p)?;
            let rp = infinity_restpoint_hyperbolic(u0, &p, &h, -1).map_err(usage)?;
            let map = scatter_map(&rp, &p, &h, &cfg)?;
            let doc = map_doc("scatter-map", &map, &cfg, Some(u0))?;
            emit(&common, &doc, Some(&|out| Ok(map.write_csv(out)?)))
        }
        Cmd::FromCollision { which, flags, .. } => {
            let cfg = flags.config()?;
            let shape = match which {
                LagrangeSide::LPlus => CentralShape::LagrangePlus,
                LagrangeSide::LMinus => CentralShape::LagrangeMinus,
            };
            let map = u_plus_profile_from_l(shape, &p, &h, &cfg)?;
            let doc = map_doc("from-collision", &map, &cfg, None)?;
            emit(&common, &doc, Some(&|out| Ok(map.write_csv(out)?)))
        }
    }
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", error_json("usage", &e.to_string()));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.render().to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<isoscatter::Error>(), Some(isoscatter::Error::Domain(_)));
            let kind = if is_usage { "usage" } else { "numerical" };
            eprintln!("{}", error_json(kind, &format!("{e:#}")));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
