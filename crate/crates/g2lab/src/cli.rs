//! Command-line front end: plain key=value config parsing, the four analysis
//! commands (sphere7-analyze, flow-run, flow-verify, eta-init), tolerance
//! checks, and bit-stable CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exterior::coframe3;
use crate::flow::{integrate, verify_solution, FlowSolution, FlowState, IntegratorConfig};
use crate::reduction::{eta_to_coframe, BaseGeometry, InvariantData};
use crate::sphere7;
use crate::G2Error;

/// Exit codes: 0 pass, 1 tolerance failure, 2 config parse error,
/// 3 invalid values, 4 IO error.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 4,
            message: message.into(),
        }
    }
}

fn from_g2(err: G2Error) -> CliError {
    match err {
        G2Error::InvalidInput(m) => CliError::invalid(m),
        other => CliError {
            code: 1,
            message: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sphere7Analyze,
    FlowRun,
    FlowVerify,
    EtaInit,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Sphere7Analyze => "sphere7-analyze",
            Command::FlowRun => "flow-run",
            Command::FlowVerify => "flow-verify",
            Command::EtaInit => "eta-init",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Declared tolerances; defaults mirror the library's own test suite.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub extremum: f64,
    pub closed_form: f64,
    pub nearly_parallel: f64,
    pub deg_split: f64,
    pub commutation: f64,
    pub s_max_rel: f64,
    pub eta_round_trip: f64,
    pub symmetry: f64,
    pub h_consistency: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            extremum: 1e-8,
            closed_form: 1e-8,
            nearly_parallel: 1e-6,
            deg_split: 1e-8,
            commutation: 1e-7,
            s_max_rel: 1e-6,
            eta_round_trip: 1e-12,
            symmetry: 1e-10,
            h_consistency: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub bianchi: [f64; 3],
    pub s0: f64,
    pub h0: Matrix3<f64>,
    pub u0: Matrix3<f64>,
    pub integrator: IntegratorConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub format: OutputFormat,
    /// Monte Carlo budget for sphere7-analyze.
    pub samples: usize,
    /// Coefficient rows of the closed two-form triple for eta-init:
    /// eta_i = eta[i] . (e^23, e^31, e^12).
    pub eta: Option<Matrix3<f64>>,
    pub swap_eta23: bool,
    pub tol: Tolerances,
    /// Normalised config text, hashed into reports.
    pub source: String,
}

fn parse_f64(key: &str, raw: &str) -> Result<f64, CliError> {
    raw.parse::<f64>()
        .map_err(|_| CliError::parse(format!("key `{key}`: cannot parse `{raw}` as a number")))
}

fn parse_numbers(key: &str, raw: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let toks: Vec<&str> = raw
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect();
    if toks.len() != n {
        return Err(CliError::parse(format!(
            "key `{key}`: expected {n} numbers, got {}",
            toks.len()
        )));
    }
    toks.iter().map(|t| parse_f64(key, t)).collect()
}

fn parse_matrix(key: &str, raw: &str) -> Result<Matrix3<f64>, CliError> {
    let v = parse_numbers(key, raw, 9)?;
    Ok(Matrix3::from_row_slice(&v))
}

/// Parses the plain key=value config dialect. Lines may carry `#` comments;
/// matrix values are nine row-major numbers. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut command = None;
    let mut config = RunConfig {
        command: Command::FlowRun,
        bianchi: [0.0; 3],
        s0: 0.5,
        h0: Matrix3::identity(),
        u0: Matrix3::identity(),
        integrator: IntegratorConfig::default(),
        seed: 0,
        output: PathBuf::from("out"),
        format: OutputFormat::Csv,
        samples: 1_000_000,
        eta: None,
        swap_eta23: false,
        tol: Tolerances::default(),
        source: text.to_string(),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::parse(format!(
                "line {}: expected `key = value`",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "command" => {
                command = Some(match value {
                    "sphere7-analyze" => Command::Sphere7Analyze,
                    "flow-run" => Command::FlowRun,
                    "flow-verify" => Command::FlowVerify,
                    "eta-init" => Command::EtaInit,
                    other => {
                        return Err(CliError::parse(format!("unknown command `{other}`")));
                    }
                });
            }
            "bianchi" => {
                let v = parse_numbers(key, value, 3)?;
                config.bianchi = [v[0], v[1], v[2]];
            }
            "s0" => config.s0 = parse_f64(key, value)?,
            "H0" => config.h0 = parse_matrix(key, value)?,
            "U0" => config.u0 = parse_matrix(key, value)?,
            "eta" => config.eta = Some(parse_matrix(key, value)?),
            "swap_eta23" => {
                config.swap_eta23 = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(CliError::parse(format!(
                            "key `swap_eta23`: expected true/false, got `{other}`"
                        )))
                    }
                }
            }
            "seed" => {
                config.seed = value
                    .parse::<u64>()
                    .map_err(|_| CliError::parse(format!("key `seed`: bad integer `{value}`")))?;
            }
            "samples" => {
                config.samples = value.parse::<usize>().map_err(|_| {
                    CliError::parse(format!("key `samples`: bad integer `{value}`"))
                })?;
            }
            "output" => config.output = PathBuf::from(value),
            "format" => {
                config.format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => {
                        return Err(CliError::parse(format!("unknown format `{other}`")));
                    }
                };
            }
            "integrator.step" => config.integrator.step = parse_f64(key, value)?,
            "integrator.direction" => config.integrator.direction = parse_f64(key, value)?,
            "integrator.rho_min" => config.integrator.rho_min = parse_f64(key, value)?,
            "integrator.u_min" => config.integrator.det_u_min = parse_f64(key, value)?,
            "integrator.s_min" => config.integrator.s_min = parse_f64(key, value)?,
            "integrator.s_end" => config.integrator.s_end = Some(parse_f64(key, value)?),
            "integrator.max_steps" => {
                config.integrator.max_steps = value.parse::<usize>().map_err(|_| {
                    CliError::parse(format!("key `integrator.max_steps`: bad integer `{value}`"))
                })?;
            }
            "tol.extremum" => config.tol.extremum = parse_f64(key, value)?,
            "tol.closed_form" => config.tol.closed_form = parse_f64(key, value)?,
            "tol.nearly_parallel" => config.tol.nearly_parallel = parse_f64(key, value)?,
            "tol.deg_split" => config.tol.deg_split = parse_f64(key, value)?,
            "tol.commutation" => config.tol.commutation = parse_f64(key, value)?,
            "tol.s_max" => config.tol.s_max_rel = parse_f64(key, value)?,
            "tol.eta_round_trip" => config.tol.eta_round_trip = parse_f64(key, value)?,
            "tol.symmetry" => config.tol.symmetry = parse_f64(key, value)?,
            "tol.h_consistency" => config.tol.h_consistency = parse_f64(key, value)?,
            other => {
                return Err(CliError::parse(format!("unknown key `{other}`")));
            }
        }
    }
    let Some(command) = command else {
        return Err(CliError::parse("missing required key `command`"));
    };
    config.command = command;
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &RunConfig) -> Result<(), CliError> {
    let sym = (config.h0 - config.h0.transpose()).abs().max();
    if sym > 1e-12 {
        return Err(CliError::invalid("H0 must be symmetric"));
    }
    if config.h0.cholesky().is_none() {
        return Err(CliError::invalid("H0 must be positive-definite"));
    }
    if config.integrator.validate().is_err() {
        return Err(CliError::invalid(
            "integrator thresholds must be positive and direction +-1",
        ));
    }
    match config.command {
        Command::FlowRun | Command::FlowVerify => {
            if config.s0 == 0.0 {
                return Err(CliError::invalid("s0 = 0 is a degenerate start"));
            }
            if config.u0.determinant().abs() < 1e-12 {
                return Err(CliError::invalid("U0 must be invertible"));
            }
            let data = InvariantData {
                s: config.s0,
                u: config.u0,
                h: config.h0,
                base: BaseGeometry {
                    lambda: config.bianchi,
                },
            };
            if let Err(e) = data.validate() {
                return Err(CliError::invalid(e.to_string()));
            }
        }
        Command::EtaInit => {
            if config.eta.is_none() {
                return Err(CliError::invalid("eta-init requires the `eta` key"));
            }
            if !(config.s0 > 0.0 && config.s0 < 1.0) {
                return Err(CliError::invalid("eta-init requires 0 < s0 < 1"));
            }
        }
        Command::Sphere7Analyze => {
            if config.samples == 0 {
                return Err(CliError::invalid("samples must be positive"));
            }
        }
    }
    Ok(())
}

/// FNV-1a hash of the config text, reported for reproducibility.
pub fn config_hash(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            pass: value.is_finite() && value.abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub config_hash: String,
    pub headline: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification_counts: Option<BTreeMap<String, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaReport {
    pub f: Vec<f64>,
    pub epsilon: f64,
    pub c_hat: f64,
    /// alpha = u * e, usable as U0 with H0 = Id.
    pub u: Vec<Vec<f64>>,
}

impl RunReport {
    fn new(command: Command, config: &RunConfig) -> Self {
        RunReport {
            schema: 1,
            command: command.as_str().to_string(),
            config_hash: config_hash(&config.source),
            headline: BTreeMap::new(),
            checks: Vec::new(),
            pass: true,
            termination: None,
            hessian: None,
            hessian_rank: None,
            classification_counts: None,
            eta: None,
        }
    }

    fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: std::io::Write + ?Sized>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes with floats at 17 significant digits, for bit-stable output.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value.serialize(&mut ser).expect("report serialization");
    String::from_utf8(out).expect("json is utf-8")
}

/// Writes via a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    let write = || -> std::io::Result<()> {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    };
    write().map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trajectory CSV: s, U row-major, H upper-triangular, h, rho, residual
/// columns, termination flag on the last row.
pub fn trajectory_csv(solution: &FlowSolution) -> String {
    let mut out = String::new();
    out.push_str(
        "s,u11,u12,u13,u21,u22,u23,u31,u32,u33,h11,h12,h13,h22,h23,h33,h,rho,\
         res_h_prime,res_b_natural,res_sigma_natural,symmetry_drift,termination\n",
    );
    let n = solution.samples.len();
    for (i, sample) in solution.samples.iter().enumerate() {
        let st = &sample.state;
        let mut row: Vec<String> = vec![fmt_float(st.s)];
        for r in 0..3 {
            for c in 0..3 {
                row.push(fmt_float(st.u[(r, c)]));
            }
        }
        for (r, c) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
            row.push(fmt_float(st.h[(r, c)]));
        }
        row.push(fmt_float(st.h_det()));
        row.push(fmt_float(st.rho()));
        row.push(fmt_float(sample.residuals.h_prime));
        row.push(fmt_float(sample.residuals.b_natural));
        row.push(fmt_float(sample.residuals.sigma_natural));
        row.push(fmt_float(sample.symmetry_drift));
        row.push(if i + 1 == n {
            solution.termination.as_str().to_string()
        } else {
            String::new()
        });
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[derive(Serialize)]
struct TrajectoryRow {
    s: f64,
    u: Vec<f64>,
    h_upper: Vec<f64>,
    h: f64,
    rho: f64,
    res_h_prime: f64,
    res_b_natural: f64,
    res_sigma_natural: f64,
    symmetry_drift: f64,
}

#[derive(Serialize)]
struct TrajectoryJson {
    schema: u32,
    termination: String,
    rows: Vec<TrajectoryRow>,
}

pub fn trajectory_json(solution: &FlowSolution) -> String {
    let rows = solution
        .samples
        .iter()
        .map(|sample| {
            let st = &sample.state;
            TrajectoryRow {
                s: st.s,
                u: (0..3)
                    .flat_map(|r| (0..3).map(move |c| (r, c)))
                    .map(|(r, c)| st.u[(r, c)])
                    .collect(),
                h_upper: [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
                    .iter()
                    .map(|&(r, c)| st.h[(r, c)])
                    .collect(),
                h: st.h_det(),
                rho: st.rho(),
                res_h_prime: sample.residuals.h_prime,
                res_b_natural: sample.residuals.b_natural,
                res_sigma_natural: sample.residuals.sigma_natural,
                symmetry_drift: sample.symmetry_drift,
            }
        })
        .collect();
    let doc = TrajectoryJson {
        schema: 1,
        termination: solution.termination.as_str().to_string(),
        rows,
    };
    to_json_string(&doc)
}

fn run_sphere7(config: &RunConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new(Command::Sphere7Analyze, config);
    let (_, max_nu) = sphere7::maximize_nu(config.seed, config.samples, true);
    let (_, min_nu) = sphere7::maximize_nu(config.seed ^ 0x9e3779b97f4a7c15, config.samples, false);
    report.headline.insert("max_nu".into(), max_nu);
    report.headline.insert("min_nu".into(), min_nu);
    report.push(Check::new("extremum_max", max_nu - 0.25, config.tol.extremum));
    report.push(Check::new("extremum_min", min_nu + 0.25, config.tol.extremum));

    let q = sphere7::extremum_point(1.0);
    let (hessian, rank) = sphere7::hessian_at(&q).map_err(from_g2)?;
    let reference = sphere7::reference_hessian();
    let hess_diff = (&hessian - &reference).abs().max();
    report.push(Check::new("hessian_entrywise", hess_diff, 1e-14));
    report.push(Check::new("hessian_rank", rank as f64 - 4.0, 0.0));
    report.hessian = Some(
        (0..8)
            .map(|i| (0..8).map(|j| hessian[(i, j)]).collect())
            .collect(),
    );
    report.hessian_rank = Some(rank);

    // the six three-spheres where two complex coordinates vanish
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(17));
    let mut worst_grad = 0.0f64;
    let mut worst_nu = 0.0f64;
    for i in 1..=4 {
        for j in (i + 1)..=4 {
            for _ in 0..200 {
                let p = sphere7::zero_sphere_point(i, j, &mut rng);
                let g = sphere7::grad_nu(&p);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_grad = worst_grad.max(gn);
                worst_nu = worst_nu.max(sphere7::nu(&p).abs());
            }
        }
    }
    report.push(Check::new("zero_sphere_grad", worst_grad, 1e-10));
    report.push(Check::new("zero_sphere_nu", worst_nu, 1e-12));

    // classification counts over random points plus the known critical sets
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut tally = |p: &sphere7::SpherePoint| -> Result<(), CliError> {
        let rep = sphere7::critical_classify(p).map_err(from_g2)?;
        *counts
            .entry(rep.classification.as_str().to_string())
            .or_insert(0) += 1;
        Ok(())
    };
    for _ in 0..2000 {
        let p = sphere7::SpherePoint::random(&mut rng);
        tally(&p)?;
    }
    tally(&q)?;
    tally(&sphere7::extremum_point(-1.0))?;
    tally(&sphere7::SpherePoint::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())?;
    report.classification_counts = Some(counts);
    Ok(report)
}

fn is_identity(m: &Matrix3<f64>) -> bool {
    (m - Matrix3::identity()).abs().max() == 0.0
}

fn run_flow(config: &RunConfig, verify: bool) -> Result<RunReport, CliError> {
    let command = if verify {
        Command::FlowVerify
    } else {
        Command::FlowRun
    };
    let mut report = RunReport::new(command, config);
    let base = BaseGeometry {
        lambda: config.bianchi,
    };
    let initial = FlowState {
        s: config.s0,
        u: config.u0,
        h: config.h0,
    };
    let solution = integrate(&initial, base, &config.integrator).map_err(from_g2)?;
    report.termination = Some(solution.termination.as_str().to_string());
    let s_final = solution.final_state().s;
    report.headline.insert("s_final".into(), s_final);
    report
        .headline
        .insert("samples".into(), solution.samples.len() as f64);
    report.push(Check::new(
        "symmetry_drift",
        solution.max_symmetry_drift(),
        config.tol.symmetry,
    ));
    report.push(Check::new(
        "h_consistency",
        solution.max_h_consistency(),
        config.tol.h_consistency,
    ));

    // closed-form comparison available for the flat base with identity data
    if config.bianchi == [0.0; 3] && is_identity(&config.u0) && is_identity(&config.h0) {
        let mut worst = 0.0f64;
        for sample in &solution.samples {
            let (r, u) = crate::flow::abelian_closed_form(config.s0, sample.state.s);
            worst = worst.max((sample.state.h[(0, 0)] - r).abs() / r.abs());
            worst = worst.max((sample.state.u[(0, 0)] - u).abs() / u.abs().max(1e-12));
        }
        report.headline.insert("closed_form_error".into(), worst);
        report.push(Check::new("closed_form", worst, config.tol.closed_form));
    }

    if verify {
        let vr = verify_solution(&solution, 200).map_err(from_g2)?;
        report
            .headline
            .insert("nearly_parallel".into(), vr.max_nearly_parallel);
        report.headline.insert("commutation".into(), vr.max_commutation);
        report.push(Check::new(
            "nearly_parallel",
            vr.max_nearly_parallel,
            config.tol.nearly_parallel,
        ));
        report.push(Check::new("deg0_residual", vr.max_deg0, config.tol.deg_split));
        report.push(Check::new("deg1_residual", vr.max_deg1, config.tol.deg_split));
        report.push(Check::new(
            "sigma_evolution",
            vr.max_sigma_evolution,
            1e-7,
        ));
        report.push(Check::new("tau_evolution", vr.max_tau_evolution, 1e-7));
        report.push(Check::new(
            "commutation",
            vr.max_commutation,
            config.tol.commutation,
        ));
        // wall location stability under step halving
        if config.integrator.s_end.is_none() {
            let half = IntegratorConfig {
                step: config.integrator.step / 2.0,
                ..config.integrator
            };
            let refined = integrate(&initial, base, &half).map_err(from_g2)?;
            let rel = (refined.final_state().s - s_final).abs() / s_final.abs().max(1e-12);
            report.headline.insert("s_max_halving_drift".into(), rel);
            report.push(Check::new("s_max_agreement", rel, config.tol.s_max_rel));
        }
    }

    let (name, bytes) = match config.format {
        OutputFormat::Csv => ("trajectory.csv", trajectory_csv(&solution)),
        OutputFormat::Json => ("trajectory.json", trajectory_json(&solution)),
    };
    atomic_write(&config.output.join(name), bytes.as_bytes())?;
    Ok(report)
}

fn run_eta(config: &RunConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new(Command::EtaInit, config);
    let coeff = config.eta.expect("validated");
    let eta = coframe3().wedge_square().apply(&coeff);
    let dec = eta_to_coframe(&eta, config.s0, config.swap_eta23).map_err(from_g2)?;
    let residual = dec
        .alpha
        .wedge_square()
        .max_abs_diff(&dec.eta.scale(dec.c_hat * dec.epsilon));
    report.headline.insert("round_trip".into(), residual);
    report.headline.insert("epsilon".into(), dec.epsilon);
    report.push(Check::new("round_trip", residual, config.tol.eta_round_trip));
    report.eta = Some(EtaReport {
        f: dec.f.to_vec(),
        epsilon: dec.epsilon,
        c_hat: dec.c_hat,
        u: (0..3)
            .map(|i| (0..3).map(|j| dec.u[(i, j)]).collect())
            .collect(),
    });
    Ok(report)
}

/// Runs the configured command and writes `report.json` (plus command
/// outputs) under the output directory.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    let report = match config.command {
        Command::Sphere7Analyze => run_sphere7(config)?,
        Command::FlowRun => run_flow(config, false)?,
        Command::FlowVerify => run_flow(config, true)?,
        Command::EtaInit => run_eta(config)?,
    };
    let mut json = to_json_string(&report);
    json.push('\n');
    atomic_write(&config.output.join("report.json"), json.as_bytes())?;
    Ok(report)
}
