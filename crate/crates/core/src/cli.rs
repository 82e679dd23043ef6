//! Command-line driver.
//!
//! Every command reads one [`RunConfig`] built from per-command defaults, an
//! optional flat `key = value [tag]` file and `--key value` flags (flags win),
//! runs inside a worker pool of `threads` threads and writes `summary.txt` under
//! `out`. Exit codes: 0 success, 1 validation failure, 2 numerical
//! non-convergence, 64 usage or malformed configuration.

use crate::carleman::{
    probe_laplacian_estimate, probe_magnetic_estimate, probe_magnetic_perturbation, sweep_h, CarlemanWeight,
    Statistic, CANONICAL_HS,
};
use crate::cgo::{build_cgo, h1_scl_on_mask, make_zeta_pair, CgoOptions, CgoSolution, Side};
use crate::dbar::{
    boundedness_constant, cauchy_transform_inverse, make_frame, norm3, random_frames, random_sources,
    transport_cancellation_residual, transport_phase, transport_residual,
};
use crate::error::{Error, Result};
use crate::fields::{Grid3, ScalarField, VectorField};
use crate::forward::{build_cauchy_dataset, verify_gauge_equivalence, BoxDomain, CauchyDataset, SOLVER_TOL};
use crate::potentials::{
    box_mask, gaussian_profile, gauge_shift, magnetic_field, make_test_potential, mollify, MollifierSpec,
    PotentialKind, Potentials, Taper, TestPotentialParams, MARGIN_FRACTION,
};
use crate::recon::{band_limit, band_limit_form, fourier_coefficient, reconstruct, relative_l2, ReconConfig};
use crate::rng::substream;
use crate::C64;
use clap::error::ErrorKind;
use clap::{Arg, Command};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::f64::consts::PI;
use std::fmt::Display;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

pub const COMMANDS: [(&str, &str); 7] = [
    ("forward", "Cauchy dataset of one potential pair on a box"),
    ("cgo", "CGO solutions over an h-sweep"),
    ("carleman-probe", "Carleman ratio sweeps with a log-log slope fit"),
    ("dbar-verify", "residuals of the inverse of zeta0.grad and of the transport equation"),
    ("reconstruct", "dA, gauge potential and q difference from the integral identity"),
    ("verify-gauge", "Cauchy data of (A, q) against (A + grad psi, q)"),
    ("eskin-ralston", "phase drop-out identity over random frames"),
];

pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    pub tag: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, flag: &'static str, tag: &'static str, help: &'static str) -> Key {
    Key { name, flag, tag, help }
}

pub const KEYS: &[Key] = &[
    key("n", "n", "count", "torus points per axis"),
    key("l", "l", "length", "torus side length"),
    key("margin", "margin", "fraction_of_L", "gap between the support box and the torus edge"),
    key("seed", "seed", "id", "root seed for all random streams"),
    key("out", "out", "path", "output directory"),
    key("threads", "threads", "count", "worker pool size"),
    key("p1", "p1", "kind", "smooth|indicator|gradient|plane_wave|zero|dir:PATH"),
    key("p2", "p2", "kind", "as p1, or same|gauge (gauge_shift of p1); none skips it"),
    key("width", "width", "length", "Gaussian width, or ball radius for indicator"),
    key("a_scale", "a-scale", "dimensionless", "factor on the magnetic amplitude"),
    key("psi_support", "psi-support", "kind", "interior (tapered Gaussian) or crossing (bump)"),
    key("psi_amplitude", "psi-amplitude", "dimensionless", "gauge function amplitude"),
    key("psi_width", "psi-width", "length", "gauge Gaussian width or bump radius"),
    key("psi_center", "psi-center", "length", "gauge function center"),
    key("h", "h", "dimensionless", "descending h-sweep"),
    key("tau_rule", "tau-rule", "rule", "power (tau = h^sigma) or fixed (tau list)"),
    key("tau", "tau", "length", "descending mollification widths; 0 disables"),
    key("epsilon", "epsilon", "dimensionless", "descending convexification sweep"),
    key("sigma", "sigma", "dimensionless", "mollification exponent in (0, 1/2)"),
    key("xi", "xi", "direction", "frequency direction"),
    key("xi_norm", "xi-norm", "inverse_length", "frequency magnitude"),
    key("side", "side", "index", "CGO side, 1 or 2"),
    key("solve_remainder", "solve-remainder", "bool", "solve for the CGO remainder"),
    key("max_iter", "max-iter", "count", "remainder solver iteration cap"),
    key("rel_tol", "rel-tol", "dimensionless", "remainder solver tolerance"),
    key("weak_bumps", "weak-bumps", "count", "weak-residual test functions per CGO"),
    key("s", "s", "sobolev_index", "Sobolev index of the Laplacian probe"),
    key("samples", "samples", "count", "probe family size, or source count"),
    key("probe", "probe", "kind", "laplacian|magnetic|perturbation"),
    key("alpha", "alpha", "direction", "Carleman weight direction"),
    key("frames", "frames", "count", "random frames per check"),
    key("xi_max", "xi-max", "lattice_2pi_over_L", "frequency ball radius"),
    key("extrapolation_tol", "extrapolation-tol", "dimensionless", "flag threshold for the h-extrapolation"),
    key("curl_tol", "curl-tol", "dimensionless", "gradient test threshold"),
    key("mismatch_tol", "mismatch-tol", "dimensionless", "allowed A mismatch before the electric stage"),
    key("dataset", "dataset", "bool", "also compare boundary data on the box"),
    key("cgo_input", "cgo-input", "path", "CGO solution directory to read back, or none"),
    key("m", "m", "count", "boundary basis size"),
    key("box_half", "box-half", "nodes", "box half-width in torus points"),
    key("stride", "stride", "nodes", "box node spacing in torus points"),
    key("outer_half", "outer-half", "nodes", "enclosing box half-width, 0 for none"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub l: f64,
    pub margin: f64,
    pub seed: u64,
    pub out: String,
    pub threads: usize,
    pub p1: String,
    pub p2: String,
    pub width: f64,
    pub a_scale: f64,
    pub psi_support: String,
    pub psi_amplitude: f64,
    pub psi_width: f64,
    pub psi_center: [f64; 3],
    pub h: Vec<f64>,
    pub tau_rule: String,
    pub tau: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub sigma: f64,
    pub xi: [f64; 3],
    pub xi_norm: f64,
    pub side: u32,
    pub solve_remainder: bool,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub weak_bumps: usize,
    pub s: f64,
    pub samples: usize,
    pub probe: String,
    pub alpha: [f64; 3],
    pub frames: usize,
    pub xi_max: f64,
    pub extrapolation_tol: f64,
    pub curl_tol: f64,
    pub mismatch_tol: f64,
    pub dataset: bool,
    pub cgo_input: String,
    pub m: usize,
    pub box_half: usize,
    pub stride: usize,
    pub outer_half: usize,
}

impl RunConfig {
    pub fn defaults_for(command: &str) -> RunConfig {
        let l = 2.0 * PI;
        let mut c = RunConfig {
            n: 32,
            l,
            margin: MARGIN_FRACTION,
            seed: 1,
            out: format!("out/{command}"),
            threads: 1,
            p1: "smooth".into(),
            p2: "zero".into(),
            width: 0.6,
            a_scale: 1.0,
            psi_support: "interior".into(),
            psi_amplitude: 0.5,
            psi_width: 0.35,
            psi_center: [0.2, -0.1, 0.0],
            h: vec![0.2, 0.1, 0.05],
            tau_rule: "power".into(),
            tau: vec![0.0],
            epsilon: vec![0.1],
            sigma: 1.0 / 3.0,
            xi: [1.0, 0.0, 0.0],
            xi_norm: 1.0,
            side: 1,
            solve_remainder: true,
            max_iter: 500,
            rel_tol: 1e-6,
            weak_bumps: 20,
            s: -1.0,
            samples: 100,
            probe: "laplacian".into(),
            alpha: [1.0, 0.0, 0.0],
            frames: 5,
            xi_max: 1.0,
            extrapolation_tol: 1e-2,
            curl_tol: 1e-5,
            mismatch_tol: 1e-6,
            dataset: false,
            cgo_input: "none".into(),
            m: 9,
            box_half: 8,
            stride: 2,
            outer_half: 0,
        };
        match command {
            "forward" => {
                c.p2 = "none".into();
                c.width = 0.5;
            }
            "cgo" => {
                c.n = 48;
                c.p1 = "indicator".into();
                c.width = 0.2 * l;
                c.h = CANONICAL_HS.to_vec();
                c.xi = [1.0, 0.5, -0.7];
            }
            "carleman-probe" => {
                c.n = 64;
                c.h = CANONICAL_HS.to_vec();
            }
            "dbar-verify" => {
                c.n = 64;
                c.width = 0.4;
                c.samples = 10;
            }
            "reconstruct" => {
                c.h = vec![0.01, 0.005];
                c.tau_rule = "fixed".into();
                c.solve_remainder = false;
                c.xi_max = 2.0;
            }
            "verify-gauge" => {
                c.n = 64;
                c.width = 0.5;
                c.box_half = 16;
                c.m = 25;
                c.psi_amplitude = 0.7;
                c.psi_width = 0.2;
                c.psi_center = [0.05, -0.1, 0.0];
            }
            "eskin-ralston" => {
                c.n = 48;
                c.p1 = "indicator".into();
                c.width = 0.2 * l;
                c.tau = vec![0.05 * l];
            }
            _ => {}
        }
        c
    }

    fn as_map(&self) -> serde_json::Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    /// Parses `raw` with the type of the current value of `key`.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        let mut map = self.as_map();
        let cur = map.get(key).ok_or_else(|| format!("unknown key '{key}'"))?;
        let v = parse_like(cur, raw.trim()).ok_or_else(|| format!("malformed value '{raw}' for '{key}'"))?;
        map.insert(key.to_string(), v);
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| format!("malformed value '{raw}' for '{key}': {e}"))?;
        Ok(())
    }

    pub fn value_string(&self, key: &str) -> Option<String> {
        self.as_map().get(key).map(render)
    }

    /// The value lines echoed into every summary, in key-table order.
    pub fn echo(&self) -> Vec<String> {
        let map = self.as_map();
        KEYS.iter().map(|k| format!("config.{} = {} [{}]", k.name, render(&map[k.name]), k.tag)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        Grid3::new(self.n, self.l)?;
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if !(self.margin >= MARGIN_FRACTION && self.margin < 0.5) {
            return bad(format!("margin must lie in [{MARGIN_FRACTION}, 0.5), got {}", self.margin));
        }
        for (name, list, strict_positive) in [("h", &self.h, true), ("tau", &self.tau, false), ("epsilon", &self.epsilon, true)] {
            if list.is_empty() {
                return bad(format!("{name} sweep is empty"));
            }
            if list.iter().any(|v| !(v.is_finite() && (*v > 0.0 || (!strict_positive && *v == 0.0)))) {
                return bad(format!("{name} values must be {}", if strict_positive { "positive" } else { "nonnegative" }));
            }
            if list.windows(2).any(|w| w[1] >= w[0]) {
                return bad(format!("{name} sweep must be sorted strictly descending"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad(format!("sigma must lie in (0, 1/2), got {}", self.sigma));
        }
        if !matches!(self.tau_rule.as_str(), "power" | "fixed") {
            return bad(format!("tau_rule must be power or fixed, got '{}'", self.tau_rule));
        }
        if !matches!(self.probe.as_str(), "laplacian" | "magnetic" | "perturbation") {
            return bad(format!("unknown probe '{}'", self.probe));
        }
        if !matches!(self.psi_support.as_str(), "interior" | "crossing") {
            return bad(format!("psi_support must be interior or crossing, got '{}'", self.psi_support));
        }
        if !(self.width > 0.0 && self.psi_width > 0.0) {
            return bad("widths must be positive".into());
        }
        if !(self.xi_norm > 0.0 && self.xi_norm.is_finite()) || norm3(self.xi) == 0.0 || norm3(self.alpha) == 0.0 {
            return bad("xi, xi_norm and alpha must be nonzero".into());
        }
        if self.frames == 0 || self.samples == 0 || self.m == 0 {
            return bad("frames, samples and m must be positive".into());
        }
        Side::from_index(self.side)?;
        Ok(())
    }
}

fn parse_like(cur: &Value, raw: &str) -> Option<Value> {
    match cur {
        Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().ok().map(Value::from),
        Value::Number(n) if n.is_i64() => raw.parse::<i64>().ok().map(Value::from),
        Value::Number(_) => {
            let v = raw.parse::<f64>().ok().filter(|v| v.is_finite())?;
            serde_json::Number::from_f64(v).map(Value::Number)
        }
        Value::String(_) => (!raw.is_empty()).then(|| Value::String(raw.to_string())),
        Value::Array(items) => {
            let proto = items.first()?;
            raw.split(',').map(|s| parse_like(proto, s.trim())).collect::<Option<Vec<_>>>().map(Value::Array)
        }
        _ => None,
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Reads `key = value [tag]` lines; `#` starts a comment. A tag, when given,
/// must match the key's declared tag.
pub fn parse_config_text(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
        let k = k.trim();
        let spec = KEYS.iter().find(|x| x.name == k).ok_or_else(|| format!("line {}: unknown key '{k}'", no + 1))?;
        let mut v = v.trim();
        if let Some(open) = v.rfind('[').filter(|_| v.ends_with(']')) {
            let tag = v[open + 1..v.len() - 1].trim();
            if tag != spec.tag {
                return Err(format!("line {}: key '{k}' is tagged [{}], got [{tag}]", no + 1, spec.tag));
            }
            v = v[..open].trim();
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn command_line() -> Command {
    let mut root = Command::new("magcgo")
        .about("Numerical workbench for the magnetic Schrodinger inverse boundary problem")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sc = Command::new(name)
            .about(about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("flat key = value [tag] file"));
        for k in KEYS {
            sc = sc.arg(Arg::new(k.name).long(k.flag).value_name(k.tag).help(k.help).allow_hyphen_values(true));
        }
        root = root.subcommand(sc);
    }
    root
}

fn usage_error(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    eprintln!("{}", command_line().render_usage());
    64
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command(argv: &[String]) -> i32 {
    let matches = match command_line().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    64
                }
            }
        }
    };
    let (command, sub) = matches.subcommand().expect("subcommand is required");
    let mut cfg = RunConfig::defaults_for(command);
    if let Some(path) = sub.get_one::<String>("config") {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return usage_error(&format!("cannot read config {path}: {e}")),
        };
        let pairs = match parse_config_text(&text) {
            Ok(p) => p,
            Err(e) => return usage_error(&format!("{path}: {e}")),
        };
        for (k, v) in pairs {
            if let Err(e) = cfg.set(&k, &v) {
                return usage_error(&format!("{path}: {e}"));
            }
        }
    }
    for k in KEYS {
        if let Some(v) = sub.get_one::<String>(k.name) {
            if let Err(e) = cfg.set(k.name, v) {
                return usage_error(&e);
            }
        }
    }
    execute(command, &cfg)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Stage { source, .. } => exit_code(source),
        Error::NoConvergence { .. } | Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

#[derive(Debug, Default)]
pub struct Summary {
    results: Vec<(String, String)>,
}

impl Summary {
    fn put(&mut self, key: impl Into<String>, value: impl Display) {
        self.results.push((key.into(), value.to_string()));
    }

    fn num(&mut self, key: impl Into<String>, v: f64) {
        self.put(key, format!("{v:e}"));
    }

    fn list(&mut self, key: impl Into<String>, vs: impl IntoIterator<Item = f64>) {
        self.put(key, vs.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
    }

    fn render(&self, command: &str, cfg: &RunConfig, outcome: &Result<()>) -> String {
        let (status, code) = match outcome {
            Ok(()) => ("ok", 0),
            Err(e) if exit_code(e) == 2 => ("no_convergence", 2),
            Err(_) => ("validation_error", 1),
        };
        let mut lines = vec![
            format!("schema_version = {SCHEMA_VERSION}"),
            format!("command = {command}"),
            format!("status = {status}"),
            format!("exit_code = {code}"),
        ];
        if let Err(e) = outcome {
            lines.push(format!("error = {}", e.to_string().replace('\n', " ")));
        }
        lines.extend(cfg.echo());
        lines.extend(self.results.iter().map(|(k, v)| format!("result.{k} = {v}")));
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

/// Runs an already-parsed configuration and writes `out/summary.txt`.
pub fn execute(command: &str, cfg: &RunConfig) -> i32 {
    let out = PathBuf::from(&cfg.out);
    let mut summary = Summary::default();
    let outcome = cfg.validate().and_then(|_| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| dispatch(command, cfg, &out, &mut summary))
    });
    let text = summary.render(command, cfg, &outcome);
    let code = outcome.as_ref().map(|_| 0).unwrap_or_else(exit_code);
    if let Err(e) = std::fs::create_dir_all(&out).and_then(|_| std::fs::write(out.join("summary.txt"), &text)) {
        eprintln!("error: cannot write summary under {}: {e}", out.display());
        return if code == 0 { 1 } else { code };
    }
    print!("{text}");
    if let Err(e) = &outcome {
        eprintln!("error: {e}");
    }
    code
}

fn dispatch(command: &str, cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match command {
        "forward" => run_forward(cfg, out, s),
        "cgo" => run_cgo(cfg, out, s),
        "carleman-probe" => run_carleman(cfg, out, s),
        "dbar-verify" => run_dbar(cfg, out, s),
        "reconstruct" => run_reconstruct(cfg, out, s),
        "verify-gauge" => run_verify_gauge(cfg, s),
        "eskin-ralston" => run_eskin_ralston(cfg, out, s),
        other => Err(Error::invalid(format!("unknown command '{other}'"))),
    }
}

fn grid(cfg: &RunConfig) -> Result<Grid3> {
    Grid3::new(cfg.n, cfg.l)
}

fn support_mask(cfg: &RunConfig, g: Grid3) -> ScalarField {
    box_mask(g, (0.5 - cfg.margin) * g.l)
}

/// Potentials named by `spec`; `base` resolves `same` and `gauge`.
pub fn potential(cfg: &RunConfig, spec: &str, g: Grid3, base: Option<&Potentials>) -> Result<Potentials> {
    let mask = support_mask(cfg, g);
    if let Some(path) = spec.strip_prefix("dir:") {
        let p = Potentials::read_dir(Path::new(path))?;
        g.check_same(p.grid())?;
        return Ok(p);
    }
    match (spec, base) {
        ("zero", _) => return Ok(Potentials::zero(mask)),
        ("same", Some(b)) => return Ok(b.clone()),
        ("gauge", Some(b)) => return gauge_shift(b, &gauge_function(cfg, g)?),
        ("same" | "gauge", None) => return Err(Error::invalid(format!("'{spec}' is only valid for p2"))),
        _ => {}
    }
    let kind: PotentialKind = spec.parse()?;
    let mut prm = TestPotentialParams::default_for(kind, g);
    prm.width = cfg.width;
    if kind != PotentialKind::Indicator {
        prm.q_width = cfg.width;
    }
    prm.amplitude = prm.amplitude.map(|a| a * cfg.a_scale);
    let p = make_test_potential(g, kind, &prm)?;
    Potentials::new(p.a, p.q, mask)
}

/// `interior`: amplitude · Gaussian · taper ending 0.01L inside the support box.
/// `crossing`: amplitude · compact bump of radius `psi_width`, untapered.
pub fn gauge_function(cfg: &RunConfig, g: Grid3) -> Result<ScalarField> {
    let amp = C64::new(cfg.psi_amplitude, 0.0);
    match cfg.psi_support.as_str() {
        "interior" => {
            let outer = (0.5 - cfg.margin - 0.01) * g.l;
            let taper = Taper { inner: outer - 0.11 * g.l, outer };
            let (p, _) = gaussian_profile(g, cfg.psi_center, cfg.psi_width);
            Ok(p.mul(&taper.field(g)).scale(amp))
        }
        "crossing" => Ok(crate::dbar::bump(g, cfg.psi_center, cfg.psi_width).scale(amp)),
        other => Err(Error::invalid(format!("unknown psi_support '{other}'"))),
    }
}

fn fixed_tau(cfg: &RunConfig, count: usize) -> Result<Vec<Option<f64>>> {
    match cfg.tau_rule.as_str() {
        "power" => Ok(vec![None; count]),
        _ if cfg.tau.len() == 1 => Ok(vec![Some(cfg.tau[0]); count]),
        _ if cfg.tau.len() == count => Ok(cfg.tau.iter().map(|t| Some(*t)).collect()),
        _ => Err(Error::invalid(format!("fixed tau needs 1 or {count} values, got {}", cfg.tau.len()))),
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    v.map(|x| x / n)
}

fn dataset_discrepancy_csv(d1: &CauchyDataset, d2: &CauchyDataset) -> String {
    let mut csv = String::from("i,j,q1_re,q1_im,q2_re,q2_im,abs_diff\n");
    for i in 0..d1.m() {
        for j in 0..d1.m() {
            let (a, b) = (d1.q[i][j], d2.q[i][j]);
            csv.push_str(&format!("{i},{j},{:e},{:e},{:e},{:e},{:e}\n", a.re, a.im, b.re, b.im, (a - b).norm()));
        }
    }
    csv
}

fn run_forward(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let dom = BoxDomain::new(&g, cfg.box_half, cfg.stride)?;
    let p1 = potential(cfg, &cfg.p1, g, None)?;
    let p2 = match cfg.p2.as_str() {
        "none" => None,
        spec => Some(potential(cfg, spec, g, Some(&p1))?),
    };
    p1.write_dir(&out.join("potentials"), "p1")?;
    let d1 = build_cauchy_dataset(&p1, &dom, cfg.m)?;
    d1.write_dir(&out.join("dataset"))?;
    s.put("nodes", dom.len());
    s.put("m", d1.m());
    s.num("max_abs", d1.max_abs());
    s.num("hermitian_defect", d1.hermitian_defect());
    s.num("max_solver_residual", d1.max_solver_residual);
    if let Some(p2) = p2 {
        let d2 = build_cauchy_dataset(&p2, &dom, cfg.m)?;
        d2.write_dir(&out.join("dataset_p2"))?;
        let csv = dataset_discrepancy_csv(&d1, &d2);
        std::fs::write(out.join("discrepancy.csv"), &csv)?;
        print!("{csv}");
        let d = d1.max_discrepancy(&d2)?;
        s.num("max_discrepancy", d);
        s.num("relative_discrepancy", d / d1.max_abs().max(1e-300));
    }
    Ok(())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn run_cgo(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let frame = make_frame(unit(cfg.xi).map(|v| v * cfg.xi_norm))?;
    for &h in &cfg.h {
        make_zeta_pair(frame, h)?;
    }
    let side = Side::from_index(cfg.side)?;
    let taus = fixed_tau(cfg, cfg.h.len())?;
    let p = potential(cfg, &cfg.p1, g, None)?;
    let p = if side == Side::Two { p.conj() } else { p };
    let mut csv = String::from("h,tau,g_norm_hm1,g_over_h,r_norm_h1,iterations,solve_residual,weak_residual\n");
    let (mut rs, mut gs) = (Vec::new(), Vec::new());
    for (i, (&h, tau)) in cfg.h.iter().zip(taus).enumerate() {
        let opts = CgoOptions {
            sigma: cfg.sigma,
            tau,
            max_iter: cfg.max_iter,
            rel_tol: cfg.rel_tol,
            neglect_remainder: !cfg.solve_remainder,
            weak_bumps: cfg.weak_bumps,
            ..CgoOptions::default()
        };
        let sol = build_cgo(&p, frame, h, side, &opts)?;
        sol.write_dir(&out.join(format!("cgo/h{i}")))?;
        let d = &sol.diagnostics;
        let weak = d.weak_residual.map(|w| format!("{w:e}")).unwrap_or_else(|| "none".into());
        csv.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{},{:e},{}\n",
            h, d.tau, d.g_norm_hm1, d.g_over_h, d.r_norm_h1, d.iterations, d.solve_residual, weak
        ));
        let k = format!("h{i}");
        s.num(format!("{k}.h"), h);
        s.num(format!("{k}.tau"), d.tau);
        s.num(format!("{k}.g_over_h"), d.g_over_h);
        s.num(format!("{k}.r_norm_h1"), d.r_norm_h1);
        s.put(format!("{k}.iterations"), d.iterations);
        s.num(format!("{k}.solve_residual"), d.solve_residual);
        s.put(format!("{k}.weak_residual"), weak);
        s.put(format!("{k}.weak_enforced"), d.weak_enforced);
        rs.push(d.r_norm_h1);
        gs.push(d.g_over_h);
    }
    std::fs::write(out.join("cgo_sweep.csv"), csv)?;
    s.put("r_norm_decreasing", strictly_decreasing(&rs));
    s.put("g_over_h_decreasing", strictly_decreasing(&gs));
    Ok(())
}

fn run_carleman(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let mask = support_mask(cfg, g);
    let alpha = unit(cfg.alpha);
    let p = if cfg.probe == "laplacian" { None } else { Some(potential(cfg, &cfg.p1, g, None)?) };
    let mut csv = String::new();
    for (k, &eps) in cfg.epsilon.iter().enumerate() {
        let w = CarlemanWeight::new(alpha, eps, cfg.h[0])?;
        let sweep = match (cfg.probe.as_str(), &p) {
            ("magnetic", Some(p)) => sweep_h(&w, &cfg.h, Statistic::Min, |w| probe_magnetic_estimate(p, w, cfg.samples, cfg.seed)),
            ("perturbation", Some(p)) => {
                sweep_h(&w, &cfg.h, Statistic::Max, |w| probe_magnetic_perturbation(p, w, cfg.samples, cfg.seed))
            }
            _ => sweep_h(&w, &cfg.h, Statistic::Min, |w| probe_laplacian_estimate(&mask, w, cfg.s, cfg.samples, cfg.seed)),
        }?;
        let body = sweep.to_csv();
        if k == 0 {
            csv.push_str(&body);
        } else {
            csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
        }
        let key = format!("sweep{k}");
        s.num(format!("{key}.epsilon"), eps);
        s.put(format!("{key}.statistic"), if cfg.probe == "perturbation" { "max" } else { "min" });
        s.list(format!("{key}.values"), sweep.values());
        s.put(
            format!("{key}.in_regime"),
            sweep.reports.iter().map(|r| r.in_regime.to_string()).collect::<Vec<_>>().join(","),
        );
        s.num(format!("{key}.slope"), sweep.slope);
        s.num(format!("{key}.constant"), sweep.constant);
    }
    std::fs::write(out.join("carleman.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn sharp(p: &Potentials, tau: f64) -> Result<VectorField> {
    if tau > 0.0 {
        mollify(p, MollifierSpec { tau })
    } else {
        Ok(p.a.clone())
    }
}

fn run_dbar(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let mut rng = substream(cfg.seed, "cli-dbar");
    let frames = random_frames(&mut rng, cfg.frames, 3.0)?;
    let sources = random_sources(g, &mut rng, cfg.samples);
    let mut csv = String::from("frame,source,residual\n");
    let mut worst: f64 = 0.0;
    for (i, fr) in frames.iter().enumerate() {
        for (j, f) in sources.iter().enumerate() {
            let phi = cauchy_transform_inverse(f, fr.zeta0())?;
            let r = transport_residual(&phi, f, fr.zeta0())?;
            worst = worst.max(r);
            csv.push_str(&format!("{i},{j},{r:e}\n"));
        }
    }
    std::fs::write(out.join("dbar_inverse.csv"), csv)?;
    s.put("inverse.cases", frames.len() * sources.len());
    s.num("inverse.max_residual", worst);
    s.num("inverse.boundedness_constant", boundedness_constant(&sources, frames[0].zeta0())?);

    let p = potential(cfg, &cfg.p1, g, None)?;
    let tau = cfg.tau[0];
    let a_sharp = sharp(&p, tau)?;
    let mut csv = String::from("frame,residual,control_residual,inflation\n");
    let (mut worst, mut inflation) = (0.0f64, f64::INFINITY);
    for (i, fr) in frames.iter().enumerate() {
        let z0 = fr.zeta0();
        let good = transport_cancellation_residual(&transport_phase(&a_sharp, z0, tau)?.amplitude(), &a_sharp, z0)?;
        // control: the phase that solves the transport equation for conj(ζ₀)
        let wrong = transport_phase(&a_sharp, z0.map(|v| v.conj()), tau)?.amplitude();
        let bad = transport_cancellation_residual(&wrong, &a_sharp, z0)?;
        let ratio = bad / good.max(1e-300);
        worst = worst.max(good);
        inflation = inflation.min(ratio);
        csv.push_str(&format!("{i},{good:e},{bad:e},{ratio:e}\n"));
    }
    std::fs::write(out.join("dbar_transport.csv"), csv)?;
    s.num("transport.max_residual", worst);
    s.num("transport.min_control_inflation", inflation);
    Ok(())
}

fn run_reconstruct(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let p1 = potential(cfg, &cfg.p1, g, None)?;
    let p2 = potential(cfg, &cfg.p2, g, Some(&p1))?;
    let rc = ReconConfig {
        hs: cfg.h.clone(),
        sigma: cfg.sigma,
        tau: fixed_tau(cfg, 1)?[0],
        xi_max: cfg.xi_max,
        solve_remainder: cfg.solve_remainder,
        cgo_max_iter: cfg.max_iter,
        cgo_rel_tol: cfg.rel_tol,
        cgo_weak_bumps: cfg.weak_bumps,
        extrapolation_tol: cfg.extrapolation_tol,
        curl_tol: cfg.curl_tol,
        mismatch_tol: cfg.mismatch_tol,
        dataset_m: cfg.m,
    };
    rc.validate(&g)?;
    let dom = if cfg.dataset { Some(BoxDomain::new(&g, cfg.box_half, cfg.stride)?) } else { None };
    if cfg.cgo_input != "none" {
        let sol = CgoSolution::read_dir(Path::new(&cfg.cgo_input))?;
        g.check_same(sol.remainder.grid())?;
        s.num("cgo_input.h", sol.h());
        s.num("cgo_input.r_norm_h1", h1_scl_on_mask(&sol.remainder, &sol.grad_remainder, &p1.mask, sol.h()));
        s.num("cgo_input.stored_r_norm_h1", sol.diagnostics.r_norm_h1);
        s.num("cgo_input.amplitude_l2", sol.amplitude.a.l2_norm());
        s.num("cgo_input.remainder_l2", sol.remainder.l2_norm());
    }
    let res = reconstruct(&p1, &p2, dom.as_ref(), &rc)?;
    res.write_dir(&out.join("recon"))?;
    let d = &res.diagnostics;
    s.put("modes", d.modes);
    s.put("hermitian", d.hermitian);
    s.put("flagged", d.flagged);
    s.put("swap_violations", d.swap_violations);
    s.num("projection_residual", d.projection_residual);
    s.put("gauge_status", serde_json::to_value(d.gauge_status).map(|v| render(&v)).unwrap_or_default());
    s.put("gauge_rejection", d.gauge_rejection.clone().unwrap_or_else(|| "none".into()));
    s.num("a_mismatch", d.a_mismatch);
    match d.dataset_discrepancy {
        Some(v) => s.num("dataset_discrepancy", v),
        None => s.put("dataset_discrepancy", "none"),
    }
    let max_v = res.transverse.iter().flat_map(|(_, v)| v.iter().map(|c| c.norm())).fold(0.0, f64::max);
    let max_q = res.q_coefficients.iter().map(|(_, c)| c.norm()).fold(0.0, f64::max);
    s.num("max_magnetic_coefficient", max_v);
    s.num("max_electric_coefficient", max_q);
    s.put("at_noise_floor", max_v <= 1e-6 && max_q <= 1e-6);
    s.num("da_l2", res.da_estimate.l2_norm());
    let oracle = band_limit_form(&magnetic_field(&p1.a.sub(&p2.a)), cfg.xi_max)?;
    s.num("da_oracle_l2", oracle.l2_norm());
    s.num(
        "da_error",
        if oracle.l2_norm() > 0.0 { relative_l2(&res.da_estimate, &oracle) } else { res.da_estimate.l2_norm() },
    );
    match &res.psi_estimate {
        Some(psi) => s.num("psi_l2", psi.l2_norm()),
        None => s.put("psi_l2", "none"),
    }
    let dq = p1.q.sub(&p2.q);
    let worst_q = res
        .q_coefficients
        .iter()
        .map(|(m, v)| {
            let o = fourier_coefficient(&dq, m.map(|c| c as f64 * 2.0 * PI / g.l));
            (v - o).norm() / o.norm().max(1e-300)
        })
        .fold(0.0, f64::max);
    s.num("q_coefficient_max_relative_error", worst_q);
    let q_oracle = band_limit(&dq, cfg.xi_max)?.mul(&p1.mask);
    let q_err = res.q_diff_estimate.sub(&q_oracle).l2_norm();
    s.num("q_diff_l2", res.q_diff_estimate.l2_norm());
    s.num("q_oracle_l2", q_oracle.l2_norm());
    s.num("q_error", if q_oracle.l2_norm() > 0.0 { q_err / q_oracle.l2_norm() } else { q_err });
    std::fs::write(out.join("coefficients.csv"), res.coefficients_csv())?;
    Ok(())
}

fn run_verify_gauge(cfg: &RunConfig, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let p = potential(cfg, &cfg.p1, g, None)?;
    let psi = gauge_function(cfg, g)?;
    let dom = BoxDomain::new(&g, cfg.box_half, cfg.stride)?;
    let outer = if cfg.outer_half > 0 { Some(BoxDomain::new(&g, cfg.outer_half, cfg.stride)?) } else { None };
    let rep = verify_gauge_equivalence(&p, &psi, &dom, outer.as_ref(), cfg.m)?;
    s.put("m", rep.m);
    s.num("solver_tol", rep.solver_tol);
    s.num("inner.discrepancy", rep.inner);
    s.num("inner.scale", rep.inner_scale);
    s.num("inner.relative", rep.inner_relative());
    s.put("inner.within_10x_tol", rep.inner_relative() <= 10.0 * SOLVER_TOL);
    s.put("inner.above_100x_tol", rep.inner_relative() >= 100.0 * SOLVER_TOL);
    if let Some(r) = rep.outer_relative() {
        s.num("outer.relative", r);
        s.put("outer.within_10x_tol", r <= 10.0 * SOLVER_TOL);
    }
    Ok(())
}

fn run_eskin_ralston(cfg: &RunConfig, out: &Path, s: &mut Summary) -> Result<()> {
    let g = grid(cfg)?;
    let p = potential(cfg, &cfg.p1, g, None)?;
    let frames = random_frames(&mut substream(cfg.seed, "cli-eskin-ralston"), cfg.frames, 3.0)?;
    let mut csv = String::from("tau,frame,lhs_re,lhs_im,rhs_re,rhs_im,relative\n");
    for (i, &tau) in cfg.tau.iter().enumerate() {
        let w = sharp(&p, tau)?;
        let mut worst: f64 = 0.0;
        for (j, fr) in frames.iter().enumerate() {
            let (lhs, rhs) = crate::recon::eskin_ralston_check(&w, *fr)?;
            let rel = (lhs - rhs).norm() / rhs.norm().max(1e-300);
            worst = worst.max(rel);
            csv.push_str(&format!("{tau:e},{j},{:e},{:e},{:e},{:e},{rel:e}\n", lhs.re, lhs.im, rhs.re, rhs.im));
        }
        s.num(format!("tau{i}.tau"), tau);
        s.num(format!("tau{i}.max_relative"), worst);
    }
    std::fs::write(out.join("eskin_ralston.csv"), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_table_matches_the_struct() {
        let cfg = RunConfig::defaults_for("cgo");
        let map = cfg.as_map();
        assert_eq!(map.len(), KEYS.len());
        for k in KEYS {
            assert!(map.contains_key(k.name), "{}", k.name);
            assert_eq!(k.flag, k.name.replace('_', "-"));
        }
    }

    #[test]
    fn set_parses_by_type_and_rejects_garbage() {
        let mut c = RunConfig::defaults_for("reconstruct");
        c.set("h", "0.3, 0.2").unwrap();
        assert_eq!(c.h, vec![0.3, 0.2]);
        c.set("n", "16").unwrap();
        c.set("dataset", "true").unwrap();
        c.set("xi", "0,1,0").unwrap();
        assert_eq!(c.xi, [0.0, 1.0, 0.0]);
        assert!(c.set("xi", "0,1").is_err());
        assert!(c.set("n", "-3").is_err());
        assert!(c.set("sigma", "abc").is_err());
        assert!(c.set("bogus", "1").is_err());
        assert_eq!(c.value_string("h").unwrap(), "0.3,0.2");
    }

    #[test]
    fn config_text_checks_tags_and_keys() {
        let ok = parse_config_text("# c\nn = 16 [count]\nh = 0.2,0.1\n\nsigma = 0.25 [dimensionless] # tail\n").unwrap();
        assert_eq!(ok.len(), 3);
        assert_eq!(ok[0], ("n".to_string(), "16".to_string()));
        assert!(parse_config_text("n = 16 [length]").is_err());
        assert!(parse_config_text("nn = 16").is_err());
        assert!(parse_config_text("n 16").is_err());
    }

    #[test]
    fn validation_catches_unsorted_sweeps() {
        let mut c = RunConfig::defaults_for("cgo");
        assert!(c.validate().is_ok());
        c.h = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        let mut c = RunConfig::defaults_for("cgo");
        c.sigma = 0.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig::defaults_for("cgo");
        c.epsilon = vec![];
        assert!(c.validate().is_err());
    }
}
