//! The inverse-construction flow: a first-order ODE system in s for the
//! coframe coefficients U (alpha = U e) and the fibre metric H, together with
//! the algebraic quantities (B, K, R, S, F, A, W) entering the equations,
//! consistency residuals, a fixed-step RK4 integrator with wall detection,
//! closed-form references, and end-to-end verification of the reassembled
//! seven-dimensional structure.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exterior::{adjugate, coframe3, natural_flat, FormTriple, Jet, KForm};
use crate::reduction::{
    assemble_seven, curvature_matrix, BaseGeometry, InvariantData, StateDerivatives,
};
use crate::{G2Error, Result};

/// The flow unknowns at one value of s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    pub s: f64,
    /// alpha = u * e.
    pub u: Matrix3<f64>,
    /// Fibre metric; symmetry is monitored, never enforced.
    pub h: Matrix3<f64>,
}

impl FlowState {
    pub fn h_det(&self) -> f64 {
        self.h.determinant()
    }

    pub fn rho(&self) -> f64 {
        self.h_det() - self.s * self.s
    }

    pub fn symmetry_drift(&self) -> f64 {
        (self.h - self.h.transpose()).abs().max()
    }

    pub fn validate(&self) -> Result<()> {
        InvariantData {
            s: self.s,
            u: self.u,
            h: self.h,
            base: BaseGeometry::abelian(),
        }
        .validate()
    }

    pub fn data(&self, base: BaseGeometry) -> InvariantData {
        InvariantData {
            s: self.s,
            u: self.u,
            h: self.h,
            base,
        }
    }
}

/// Antisymmetric matrix with the given natural-flat vector.
pub fn antisym_from_flat(v: &Vector3<f64>) -> Matrix3<f64> {
    0.5 * Matrix3::new(
        0.0, v[2], -v[1], //
        -v[2], 0.0, v[0], //
        v[1], -v[0], 0.0,
    )
}

/// Pointwise first-order spatial data at a flow state: d_3 alpha = B Hd(alpha)
/// and d_3 H_{ia} = sum_p K^p_{ia} alpha_p, plus the derived matrices.
#[derive(Debug, Clone)]
pub struct PointwiseJet {
    pub b: Matrix3<f64>,
    /// k[p][(i,a)] = K^p_{ia}, symmetric in (i,a).
    pub k: [Matrix3<f64>; 3],
    /// R_{ia} = K^b_{ic} - K^c_{ib} for (abc) cyclic.
    pub r: Matrix3<f64>,
    /// d_3 h = S^T alpha, S_p = sum K^p_{ia} (adj H)_{ia}.
    pub s_vec: Vector3<f64>,
    /// F_{ip} = H_{ir} S_q - H_{iq} S_r for (pqr) cyclic.
    pub f: Matrix3<f64>,
    /// alpha' = A alpha.
    pub a: Matrix3<f64>,
    /// W = -A^T + (Tr A) Id.
    pub w: Matrix3<f64>,
}

impl PointwiseJet {
    pub fn new(state: &FlowState, b: Matrix3<f64>, k: [Matrix3<f64>; 3]) -> Result<Self> {
        for kp in &k {
            let drift = (kp - kp.transpose()).abs().max();
            if drift > 1e-12 {
                return Err(G2Error::InvalidInput(
                    "K must be symmetric in its first two indices".into(),
                ));
            }
        }
        let s = state.s;
        let h = state.h_det();
        let rho = state.rho();
        if s == 0.0 || h <= 0.0 || rho <= 0.0 {
            return Err(G2Error::OutsideRegularRegime(format!(
                "s = {s:.3e}, h = {h:.3e}, rho = {rho:.3e}"
            )));
        }
        let adj_h = adjugate(&state.h);
        let r = Matrix3::from_fn(|i, a| {
            let (bb, cc) = ((a + 1) % 3, (a + 2) % 3);
            k[bb][(i, cc)] - k[cc][(i, bb)]
        });
        let s_vec = Vector3::from_fn(|p, _| {
            (0..3)
                .flat_map(|i| (0..3).map(move |a| (i, a)))
                .map(|(i, a)| k[p][(i, a)] * adj_h[(i, a)])
                .sum()
        });
        let f = Matrix3::from_fn(|i, p| -> f64 {
            let (q, rr) = ((p + 1) % 3, (p + 2) % 3);
            state.h[(i, rr)] * s_vec[q] - state.h[(i, q)] * s_vec[rr]
        });
        debug_assert!(r.trace().abs() < 1e-12 * (1.0 + r.abs().max()));
        debug_assert!(f.trace().abs() < 1e-12 * (1.0 + f.abs().max()));
        let a = -Matrix3::identity() * (5.0 * s / (2.0 * rho)) - f.transpose() * (s / (4.0 * h * rho))
            + (r.transpose() + b.transpose() * state.h) * (s / (4.0 * h));
        let w = -a.transpose() + Matrix3::identity() * a.trace();
        Ok(PointwiseJet {
            b,
            k,
            r,
            s_vec,
            f,
            a,
            w,
        })
    }

    /// The left-invariant (spatially constant) jet: K = 0 and symmetric B.
    pub fn homogeneous(state: &FlowState, b: Matrix3<f64>) -> Result<Self> {
        PointwiseJet::new(state, b, [Matrix3::zeros(); 3])
    }
}

/// Recovers A from W: A = -W^T + (1/2)(Tr W) Id.
pub fn a_from_w(w: &Matrix3<f64>) -> Matrix3<f64> {
    -w.transpose() + Matrix3::identity() * (0.5 * w.trace())
}

/// B for a left-invariant coframe on a diagonal Bianchi base:
/// B = U diag(lambda) U^T / det U, verified against the defining relation
/// d_3(U e) = B wedge_square(U e).
pub fn structure_coeffs(state: &FlowState, base: &BaseGeometry) -> Result<Matrix3<f64>> {
    let det = state.u.determinant();
    // relative degeneracy guard: a uniformly shrinking U keeps det U
    // comparable to |U|^3 and stays well-conditioned
    let scale = state.u.abs().max().powi(3);
    if det.abs() < 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(G2Error::NearCollapse(format!("det U = {det:.3e}")));
    }
    let b = state.u * Matrix3::from_diagonal(&Vector3::from(base.lambda)) * state.u.transpose()
        / det;
    let frame = base.frame();
    let alpha = coframe3().apply(&state.u);
    let residual = alpha.d(&frame).sub(&alpha.wedge_square().apply(&b));
    if residual.max_abs() > 1e-12 * (1.0 + b.abs().max()) {
        return Err(G2Error::SolveFailed(
            "structure coefficients fail the defining relation".into(),
        ));
    }
    Ok(b)
}

/// Right-hand side of the flow: H' and U' = A U, with h' computed via
/// Tr(H' adj H).
#[derive(Debug, Clone, Copy)]
pub struct FlowRhs {
    pub u_prime: Matrix3<f64>,
    pub h_prime: Matrix3<f64>,
    pub h_det_prime: f64,
}

/// H' = -H/s + (rho/(4hs)) H B H - (s/(4h)) R H and U' = A U.
pub fn flow_rhs(state: &FlowState, jet: &PointwiseJet) -> Result<FlowRhs> {
    let s = state.s;
    let h = state.h_det();
    let rho = state.rho();
    if s == 0.0 || h <= 0.0 || rho <= 0.0 {
        return Err(G2Error::OutsideRegularRegime(format!(
            "s = {s:.3e}, h = {h:.3e}, rho = {rho:.3e}"
        )));
    }
    let h_prime = -state.h / s + state.h * jet.b * state.h * (rho / (4.0 * h * s))
        - jet.r * state.h * (s / (4.0 * h));
    let u_prime = jet.a * state.u;
    let h_det_prime = (h_prime * adjugate(&state.h)).trace();
    Ok(FlowRhs {
        u_prime,
        h_prime,
        h_det_prime,
    })
}

/// The three pointwise consistency residuals:
/// the scalar h'-identity h' = -3h/s + (rho/(4s)) Tr(HB),
/// the closedness constraint B-flat = -(s^2/(h rho)) S, and
/// (RH + HBH)-flat = -(1/rho)(adj H) S.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConsistencyResiduals {
    pub h_prime: f64,
    pub b_natural: f64,
    pub sigma_natural: f64,
}

impl ConsistencyResiduals {
    pub fn max(&self) -> f64 {
        self.h_prime.max(self.b_natural).max(self.sigma_natural)
    }
}

pub fn consistency_residuals(state: &FlowState, jet: &PointwiseJet) -> Result<ConsistencyResiduals> {
    let rhs = flow_rhs(state, jet)?;
    let s = state.s;
    let h = state.h_det();
    let rho = state.rho();
    let h_prime_alt = -3.0 * h / s + (rho / (4.0 * s)) * (state.h * jet.b).trace();
    let b_nat = (natural_flat(&jet.b) + jet.s_vec * (s * s / (h * rho))).norm();
    let m = jet.r * state.h + state.h * jet.b * state.h;
    let sigma_nat = (natural_flat(&m) + adjugate(&state.h) * jet.s_vec / rho).norm();
    Ok(ConsistencyResiduals {
        h_prime: (rhs.h_det_prime - h_prime_alt).abs(),
        b_natural: b_nat,
        sigma_natural: sigma_nat,
    })
}

fn unpack_unknowns(x: &DVector<f64>) -> ([Matrix3<f64>; 3], Vector3<f64>) {
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let mut k = [Matrix3::zeros(); 3];
    for p in 0..3 {
        for (n, &(i, a)) in pairs.iter().enumerate() {
            let v = x[6 * p + n];
            k[p][(i, a)] = v;
            k[p][(a, i)] = v;
        }
    }
    let b_flat = Vector3::new(x[18], x[19], x[20]);
    (k, b_flat)
}

/// Draws a random pointwise jet satisfying both closedness constraints, by
/// minimum-norm projection of a seeded random draw onto the kernel of the
/// 6x21 homogeneous constraint system in (K, B-flat), with a fixed random
/// symmetric part of B.
pub fn sample_consistent_jet(state: &FlowState, seed: u64) -> Result<PointwiseJet> {
    state.validate()?;
    let s = state.s;
    let h = state.h_det();
    let rho = state.rho();
    let adj_h = adjugate(&state.h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _attempt in 0..8 {
        let sym = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let b_sym = (sym + sym.transpose()) * 0.5;
        // residual map, linear and homogeneous in the 21 unknowns
        let eval = |x: &DVector<f64>| -> DVector<f64> {
            let (k, b_flat) = unpack_unknowns(x);
            let b = b_sym + antisym_from_flat(&b_flat);
            let s_vec = Vector3::from_fn(|p, _| {
                (0..3)
                    .flat_map(|i| (0..3).map(move |a| (i, a)))
                    .map(|(i, a)| k[p][(i, a)] * adj_h[(i, a)])
                    .sum()
            });
            let r = Matrix3::from_fn(|i, a| {
                let (bb, cc) = ((a + 1) % 3, (a + 2) % 3);
                k[bb][(i, cc)] - k[cc][(i, bb)]
            });
            let e1 = natural_flat(&b) + s_vec * (s * s / (h * rho));
            let m = r * state.h + state.h * b * state.h;
            let e2 = natural_flat(&m) + adj_h * s_vec / rho;
            DVector::from_iterator(6, e1.iter().chain(e2.iter()).copied())
        };
        let mut a = DMatrix::zeros(6, 21);
        for col in 0..21 {
            let mut unit = DVector::zeros(21);
            unit[col] = 1.0;
            a.set_column(col, &eval(&unit));
        }
        let x0 = DVector::from_fn(21, |_, _| rng.gen_range(-1.0..1.0));
        let aat = &a * a.transpose();
        let rhs = &a * &x0;
        let Some(correction) = aat.clone().lu().solve(&rhs) else {
            continue;
        };
        let x = &x0 - a.transpose() * correction;
        if eval(&x).amax() > 1e-11 {
            continue;
        }
        let (k, b_flat) = unpack_unknowns(&x);
        let b = b_sym + antisym_from_flat(&b_flat);
        let jet = PointwiseJet::new(state, b, k)?;
        let res = consistency_residuals(state, &jet)?;
        if res.b_natural < 1e-12 && res.sigma_natural < 1e-12 {
            return Ok(jet);
        }
    }
    Err(G2Error::SolveFailed(
        "consistent jet sampling exhausted retries".into(),
    ))
}

/// theta' = (1/s) alpha' + (1/rho) alpha as a one-form triple over the base
/// coframe; the coefficient matrix is ((1/s) A + (1/rho) Id) U.
pub fn theta_prime_matrix(state: &FlowState, jet: &PointwiseJet) -> Matrix3<f64> {
    (jet.a / state.s + Matrix3::identity() / state.rho()) * state.u
}

pub fn theta_prime(state: &FlowState, jet: &PointwiseJet) -> FormTriple {
    coframe3().apply(&theta_prime_matrix(state, jet))
}

/// Integration controls: classical RK4 with a fixed base step, halving near
/// the walls (rho, |det U|, s approaching zero).
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub step: f64,
    pub direction: f64,
    pub rho_min: f64,
    /// Floor on |det U|^{1/3}.
    pub det_u_min: f64,
    pub s_min: f64,
    pub max_steps: usize,
    /// Stop exactly at this s if reached before any wall.
    pub s_end: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: 1e-4,
            direction: 1.0,
            rho_min: 1e-6,
            det_u_min: 1e-8,
            s_min: 1e-8,
            max_steps: 500_000,
            s_end: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.rho_min > 0.0 && self.det_u_min > 0.0 && self.s_min > 0.0) {
            return Err(G2Error::InvalidInput(
                "integrator thresholds must be positive".into(),
            ));
        }
        if self.direction != 1.0 && self.direction != -1.0 {
            return Err(G2Error::InvalidInput("direction must be +1 or -1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    RhoFloor,
    UFloor,
    SFloor,
    MaxSteps,
    ReachedEnd,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::RhoFloor => "rho_floor",
            TerminationReason::UFloor => "u_floor",
            TerminationReason::SFloor => "s_floor",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::ReachedEnd => "reached_end",
        }
    }
}

/// One recorded sample along a trajectory.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub state: FlowState,
    /// h integrated through its own scalar equation, for cross-checking
    /// against det H.
    pub h_aux: f64,
    pub symmetry_drift: f64,
    pub residuals: ConsistencyResiduals,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub samples: Vec<FlowSample>,
    pub termination: TerminationReason,
    pub base: BaseGeometry,
}

impl FlowSolution {
    pub fn final_state(&self) -> &FlowState {
        &self.samples.last().expect("solution is never empty").state
    }

    pub fn max_symmetry_drift(&self) -> f64 {
        self.samples
            .iter()
            .fold(0.0f64, |m, s| m.max(s.symmetry_drift))
    }

    pub fn max_h_consistency(&self) -> f64 {
        self.samples
            .iter()
            .fold(0.0f64, |m, s| m.max((s.state.h_det() - s.h_aux).abs()))
    }
}

#[derive(Clone, Copy)]
struct ExtState {
    s: f64,
    u: Matrix3<f64>,
    h: Matrix3<f64>,
    h_aux: f64,
}

impl ExtState {
    fn flow(&self) -> FlowState {
        FlowState {
            s: self.s,
            u: self.u,
            h: self.h,
        }
    }

    fn valid(&self) -> bool {
        let fs = self.flow();
        self.s > 0.0
            && self.u.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.h_aux.is_finite()
            && fs.rho() > 0.0
            && self.u.determinant().abs() > 0.0
    }
}

struct Derivative {
    u: Matrix3<f64>,
    h: Matrix3<f64>,
    h_aux: f64,
}

fn rhs_ext(x: &ExtState, base: &BaseGeometry) -> Result<Derivative> {
    let state = x.flow();
    let b = structure_coeffs(&state, base)?;
    let jet = PointwiseJet::homogeneous(&state, b)?;
    let rhs = flow_rhs(&state, &jet)?;
    // the auxiliary h evolves through its own scalar identity
    let rho_aux = x.h_aux - x.s * x.s;
    let h_aux_prime = -3.0 * x.h_aux / x.s + (rho_aux / (4.0 * x.s)) * (x.h * b).trace();
    Ok(Derivative {
        u: rhs.u_prime,
        h: rhs.h_prime,
        h_aux: h_aux_prime,
    })
}

fn rk4_step(x: &ExtState, dt: f64, base: &BaseGeometry) -> Result<ExtState> {
    let add = |x: &ExtState, d: &Derivative, c: f64| ExtState {
        s: x.s + c,
        u: x.u + d.u * c,
        h: x.h + d.h * c,
        h_aux: x.h_aux + d.h_aux * c,
    };
    let k1 = rhs_ext(x, base)?;
    let k2 = rhs_ext(&add(x, &k1, dt / 2.0), base)?;
    let k3 = rhs_ext(&add(x, &k2, dt / 2.0), base)?;
    let k4 = rhs_ext(&add(x, &k3, dt), base)?;
    Ok(ExtState {
        s: x.s + dt,
        u: x.u + (k1.u + k2.u * 2.0 + k3.u * 2.0 + k4.u) * (dt / 6.0),
        h: x.h + (k1.h + k2.h * 2.0 + k3.h * 2.0 + k4.h) * (dt / 6.0),
        h_aux: x.h_aux + (k1.h_aux + 2.0 * k2.h_aux + 2.0 * k3.h_aux + k4.h_aux) * (dt / 6.0),
    })
}

fn u_eff(u: &Matrix3<f64>) -> f64 {
    u.determinant().abs().cbrt()
}

fn wall_reason(x: &ExtState, config: &IntegratorConfig) -> TerminationReason {
    let fs = x.flow();
    let ratios = [
        (fs.rho() / config.rho_min, TerminationReason::RhoFloor),
        (u_eff(&x.u) / config.det_u_min, TerminationReason::UFloor),
        (x.s / config.s_min, TerminationReason::SFloor),
    ];
    ratios
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap()
        .1
}

fn record(x: &ExtState, base: &BaseGeometry) -> FlowSample {
    let state = x.flow();
    let residuals = structure_coeffs(&state, base)
        .and_then(|b| PointwiseJet::homogeneous(&state, b))
        .and_then(|jet| consistency_residuals(&state, &jet))
        .unwrap_or_default();
    FlowSample {
        symmetry_drift: state.symmetry_drift(),
        h_aux: x.h_aux,
        residuals,
        state,
    }
}

/// Integrates the flow from `initial` until a wall, `s_end`, or the step
/// budget. H is never re-symmetrized: drift beyond 1e-8 fails the run.
pub fn integrate(
    initial: &FlowState,
    base: BaseGeometry,
    config: &IntegratorConfig,
) -> Result<FlowSolution> {
    config.validate()?;
    initial.validate()?;
    if initial.s <= config.s_min {
        return Err(G2Error::InvalidInput(
            "initial s must exceed the s floor".into(),
        ));
    }
    let mut x = ExtState {
        s: initial.s,
        u: initial.u,
        h: initial.h,
        h_aux: initial.h_det(),
    };
    let mut samples = vec![record(&x, &base)];
    let base_dt = config.step * config.direction;
    let dt_min = config.step * 2f64.powi(-42);
    let mut dt = base_dt;
    let mut termination = TerminationReason::MaxSteps;

    for _ in 0..config.max_steps {
        let mut landing = false;
        if let Some(s_end) = config.s_end {
            let remaining = (s_end - x.s) * config.direction;
            if remaining <= 1e-15 {
                termination = TerminationReason::ReachedEnd;
                break;
            }
            if remaining < dt.abs() {
                dt = remaining * config.direction;
                landing = true;
            }
        }
        // attempt the step, halving while the candidate is invalid or moves
        // any wall quantity by more than 25%
        let mut accepted = None;
        while dt.abs() >= dt_min {
            match rk4_step(&x, dt, &base) {
                Ok(cand) if cand.valid() => {
                    let fs_old = x.flow();
                    let fs_new = cand.flow();
                    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-300);
                    let jump = rel(fs_old.rho(), fs_new.rho())
                        .max(rel(u_eff(&x.u), u_eff(&cand.u)))
                        .max(rel(fs_old.h_det(), fs_new.h_det()));
                    if jump <= 0.25 {
                        accepted = Some(cand);
                        break;
                    }
                }
                _ => {}
            }
            dt *= 0.5;
            landing = false;
        }
        let Some(next) = accepted else {
            termination = wall_reason(&x, config);
            break;
        };
        x = next;
        samples.push(record(&x, &base));
        if samples.last().unwrap().symmetry_drift > 1e-8 {
            return Err(G2Error::SolveFailed(format!(
                "H symmetry drift {:.3e} at s = {:.6}",
                samples.last().unwrap().symmetry_drift,
                x.s
            )));
        }
        let fs = x.flow();
        if fs.rho() <= config.rho_min {
            termination = TerminationReason::RhoFloor;
            break;
        }
        if u_eff(&x.u) <= config.det_u_min {
            termination = TerminationReason::UFloor;
            break;
        }
        if x.s <= config.s_min {
            termination = TerminationReason::SFloor;
            break;
        }
        if landing {
            termination = TerminationReason::ReachedEnd;
            break;
        }
        // recover towards the base step after halvings
        if dt.abs() < base_dt.abs() {
            dt = (dt * 2.0).clamp(-base_dt.abs(), base_dt.abs());
        }
    }
    Ok(FlowSolution {
        samples,
        termination,
        base,
    })
}

/// Closed-form solution on the abelian base with H0 = Id, U0 = Id at s0:
/// H = (s0/s) Id, U = u Id with u = (s0^3 - s^5)^{1/2} / (c0 s0^{3/2}) and
/// c0 = (1 - s0^2)^{1/2}. Returns (r, u).
pub fn abelian_closed_form(s0: f64, s: f64) -> (f64, f64) {
    let c0 = (1.0 - s0 * s0).sqrt();
    let r = s0 / s;
    let u = (s0.powi(3) - s.powi(5)).sqrt() / (c0 * s0.powf(1.5));
    (r, u)
}

/// Residual report of [`verify_solution`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyReport {
    pub max_nearly_parallel: f64,
    /// Degree-0-in-theta part of d(phi) - 4 star(phi).
    pub max_deg0: f64,
    /// Degree-1-in-theta part.
    pub max_deg1: f64,
    pub max_sigma_evolution: f64,
    pub max_tau_evolution: f64,
    pub max_commutation: f64,
    pub samples_checked: usize,
}

impl VerifyReport {
    fn fold(&mut self, other: &VerifyReport) {
        self.max_nearly_parallel = self.max_nearly_parallel.max(other.max_nearly_parallel);
        self.max_deg0 = self.max_deg0.max(other.max_deg0);
        self.max_deg1 = self.max_deg1.max(other.max_deg1);
        self.max_sigma_evolution = self.max_sigma_evolution.max(other.max_sigma_evolution);
        self.max_tau_evolution = self.max_tau_evolution.max(other.max_tau_evolution);
        self.max_commutation = self.max_commutation.max(other.max_commutation);
        self.samples_checked += other.samples_checked;
    }
}

fn five_point(prev2: &Matrix3<f64>, prev1: &Matrix3<f64>, next1: &Matrix3<f64>, next2: &Matrix3<f64>, dt: f64) -> Matrix3<f64> {
    (prev2 - prev1 * 8.0 + next1 * 8.0 - next2) / (12.0 * dt)
}

/// Verifies a trajectory end to end, independently of the analytic
/// right-hand side: on the longest uniform-step stretch of samples, U', H'
/// and the curvature coefficients are differentiated by 4th-order central
/// differences, the seven-dimensional structure is assembled at each interior
/// point, and the nearly parallel equation plus the evolution identities for
/// sigma and tau are measured as residuals. At most `max_points` interior
/// points are checked (evenly subsampled).
pub fn verify_solution(solution: &FlowSolution, max_points: usize) -> Result<VerifyReport> {
    let samples = &solution.samples;
    // longest run of uniform spacing
    let mut best = (0usize, 0usize);
    let mut start = 0;
    for i in 1..samples.len() {
        let dt0 = samples[start + 1].state.s - samples[start].state.s;
        let dt = samples[i].state.s - samples[i - 1].state.s;
        if (dt - dt0).abs() > 1e-12 * dt0.abs() {
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i - 1;
        }
    }
    if samples.len() - start > best.1 - best.0 {
        best = (start, samples.len());
    }
    let run = &samples[best.0..best.1];
    if run.len() < 5 {
        return Err(G2Error::InvalidInput(
            "verification needs at least 5 uniformly spaced samples".into(),
        ));
    }
    let dt = run[1].state.s - run[0].state.s;
    let base = solution.base;
    let lambda = Matrix3::from_diagonal(&Vector3::from(base.lambda));

    // precompute the invariant coefficient matrices along the run
    let mut curv = Vec::with_capacity(run.len());
    let mut sigma = Vec::with_capacity(run.len());
    let mut tau = Vec::with_capacity(run.len());
    for sample in run {
        let data = sample.state.data(base);
        let t = crate::reduction::tau_matrix(&data);
        curv.push(curvature_matrix(&data)?);
        sigma.push(data.h * t);
        tau.push(t);
    }

    let interior: Vec<usize> = (2..run.len() - 2).collect();
    let stride = (interior.len() / max_points.max(1)).max(1);
    let mut report = VerifyReport::default();
    for &i in interior.iter().step_by(stride) {
        let state = &run[i].state;
        let data = state.data(base);
        let s = state.s;
        let rho = state.rho();
        let h = state.h_det();
        let u_dot = five_point(&run[i - 2].state.u, &run[i - 1].state.u, &run[i + 1].state.u, &run[i + 2].state.u, dt);
        let h_dot = five_point(&run[i - 2].state.h, &run[i - 1].state.h, &run[i + 1].state.h, &run[i + 2].state.h, dt);
        let c_dot = five_point(&curv[i - 2], &curv[i - 1], &curv[i + 1], &curv[i + 2], dt);
        let sigma_dot = five_point(&sigma[i - 2], &sigma[i - 1], &sigma[i + 1], &sigma[i + 2], dt);
        let tau_dot = five_point(&tau[i - 2], &tau[i - 1], &tau[i + 1], &tau[i + 2], dt);

        let u_inv = state
            .u
            .try_inverse()
            .ok_or_else(|| G2Error::NearCollapse("det U ~ 0 in verification".into()))?;
        let a_fd = u_dot * u_inv;
        let theta_p_matrix = (a_fd / s + Matrix3::identity() / rho) * state.u;
        let theta_p = coframe3().apply(&theta_p_matrix);

        // curvature triple with finite-difference jets in its coefficients
        let sq = [[2usize, 3], [3, 1], [1, 2]];
        let mut curv_triple = FormTriple::zero(3, 2);
        for ci in 0..3 {
            let mut f = KForm::zero(3, 2);
            for (a, idx) in sq.iter().enumerate() {
                f.add_term(idx, Jet::new(curv[i][(ci, a)], c_dot[(ci, a)]));
            }
            curv_triple.components[ci] = f;
        }
        let derivs = StateDerivatives { u_dot, h_dot };
        let seven = assemble_seven(&data, &derivs, &curv_triple, &theta_p, 1e-5)?;
        let split = seven.residual_by_theta_degree();

        // evolution identities
        let sigma_rhs = -(state.h * state.u) * lambda * (s / rho);
        let tau_rhs = tau[i] / s - state.u * lambda * (h / (s * rho));
        let commutation = (c_dot - theta_p_matrix * lambda).abs().max();

        report.fold(&VerifyReport {
            max_nearly_parallel: seven.nearly_parallel_residual(),
            max_deg0: split[0],
            max_deg1: split[1],
            max_sigma_evolution: (sigma_dot - sigma_rhs).abs().max(),
            max_tau_evolution: (tau_dot - tau_rhs).abs().max(),
            max_commutation: commutation,
            samples_checked: 1,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn su2_state(s: f64, r: f64, u: f64) -> FlowState {
        FlowState {
            s,
            u: Matrix3::identity() * u,
            h: Matrix3::identity() * r,
        }
    }

    fn random_regular_state(rng: &mut StdRng) -> FlowState {
        loop {
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
            let h = m * m.transpose() + Matrix3::identity() * rng.gen_range(0.5..1.5);
            let u = Matrix3::from_fn(|_, _| rng.gen_range(-1.0f64..1.0));
            if u.determinant().abs() < 0.1 {
                continue;
            }
            let s = rng.gen_range(0.05..0.8) * h.determinant().sqrt();
            let state = FlowState { s, u, h };
            if state.validate().is_ok() && state.rho() > 0.05 {
                return state;
            }
        }
    }

    #[test]
    fn structure_coeffs_examples() {
        // SU(2), alpha = u e: B = (1/u) Id
        let state = su2_state(0.5, 1.0, 2.0);
        let b = structure_coeffs(&state, &BaseGeometry::su2()).unwrap();
        assert!((b - Matrix3::identity() * 0.5).abs().max() < 1e-14);
        // abelian: B = 0
        let b = structure_coeffs(&state, &BaseGeometry::abelian()).unwrap();
        assert!(b.abs().max() < 1e-15);
        // diagonal U with generic lambda: B = diag(lambda_i a_i^2 / (a1 a2 a3))
        let a = [1.3, 0.7, 2.1];
        let lambda = [1.0, -1.0, 0.5];
        let state = FlowState {
            s: 0.2,
            u: Matrix3::from_diagonal(&Vector3::from(a)),
            h: Matrix3::identity() * 1.5,
        };
        let b = structure_coeffs(&state, &BaseGeometry { lambda }).unwrap();
        let prod = a[0] * a[1] * a[2];
        for i in 0..3 {
            assert!((b[(i, i)] - lambda[i] * a[i] * a[i] / prod).abs() < 1e-14);
        }
    }

    #[test]
    fn su2_rhs_spot_values() {
        let state = su2_state(0.5, 1.0, 1.0);
        let b = structure_coeffs(&state, &BaseGeometry::su2()).unwrap();
        let jet = PointwiseJet::homogeneous(&state, b).unwrap();
        let rhs = flow_rhs(&state, &jet).unwrap();
        // r' = -r/s + (r^3 - s^2)/(4sru) = -2 + 3/8 = -13/8
        assert!((rhs.h_prime[(0, 0)] + 13.0 / 8.0).abs() < 1e-13);
        // u' = s/(4r^2) - 5su/(2(r^3 - s^2)) = 1/8 - 5/3 = -37/24
        assert!((rhs.u_prime[(0, 0)] + 37.0 / 24.0).abs() < 1e-13);
        // theta' coefficient = 1/(4r^2) - 3u/(2(r^3 - s^2)) = 1/4 - 2 = -7/4
        let tp = theta_prime_matrix(&state, &jet);
        assert!((tp[(0, 0)] + 7.0 / 4.0).abs() < 1e-13);
    }

    #[test]
    fn abelian_rhs_is_dilation() {
        let state = su2_state(0.4, 0.9, 1.1);
        let jet = PointwiseJet::homogeneous(&state, Matrix3::zeros()).unwrap();
        let rhs = flow_rhs(&state, &jet).unwrap();
        assert!((rhs.h_prime + state.h / state.s).abs().max() < 1e-14);
    }

    #[test]
    fn a_w_round_trip() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let w = -a.transpose() + Matrix3::identity() * a.trace();
            let back = a_from_w(&w);
            assert!((back - a).abs().max() < 1e-13);
        }
    }

    #[test]
    fn homogeneous_jets_are_consistent() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..100 {
            let state = random_regular_state(&mut rng);
            let sym = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let jet =
                PointwiseJet::homogeneous(&state, (sym + sym.transpose()) * 0.5).unwrap();
            let res = consistency_residuals(&state, &jet).unwrap();
            assert!(res.max() < 1e-12);
            // adding an antisymmetric part to B breaks the first constraint
            let bad = jet.b + antisym_from_flat(&Vector3::new(0.3, -0.1, 0.2));
            let bad_jet = PointwiseJet::new(&state, bad, jet.k).unwrap();
            let res = consistency_residuals(&state, &bad_jet).unwrap();
            assert!(res.b_natural > 1e-3);
        }
    }

    #[test]
    fn consistent_jets_keep_h_prime_symmetric() {
        let mut rng = StdRng::seed_from_u64(23);
        for trial in 0..1000 {
            let state = random_regular_state(&mut rng);
            let jet = sample_consistent_jet(&state, 1000 + trial).unwrap();
            let res = consistency_residuals(&state, &jet).unwrap();
            assert!(res.max() < 1e-12, "trial {trial}: residual {:?}", res);
            let rhs = flow_rhs(&state, &jet).unwrap();
            let nf = natural_flat(&rhs.h_prime).norm();
            assert!(nf < 1e-11, "trial {trial}: natural_flat(H') = {nf:.3e}");
        }
    }

    #[test]
    fn perturbed_jet_breaks_symmetry() {
        let mut rng = StdRng::seed_from_u64(24);
        let state = random_regular_state(&mut rng);
        let jet = sample_consistent_jet(&state, 7).unwrap();
        let mut k = jet.k;
        k[0][(1, 2)] += 1e-3;
        k[0][(2, 1)] += 1e-3;
        let bad = PointwiseJet::new(&state, jet.b, k).unwrap();
        let rhs = flow_rhs(&state, &bad).unwrap();
        assert!(natural_flat(&rhs.h_prime).norm() > 1e-6);
    }

    #[test]
    fn abelian_matches_closed_form() {
        let s0 = 0.5;
        let initial = su2_state(s0, 1.0, 1.0);
        let mut worst = 0.0f64;
        for (direction, s_end) in [(1.0, 0.6), (-1.0, 0.1)] {
            let config = IntegratorConfig {
                direction,
                s_end: Some(s_end),
                ..Default::default()
            };
            let solution = integrate(&initial, BaseGeometry::abelian(), &config).unwrap();
            assert_eq!(solution.termination, TerminationReason::ReachedEnd);
            for sample in &solution.samples {
                let (r, u) = abelian_closed_form(s0, sample.state.s);
                let er = (sample.state.h[(0, 0)] - r).abs() / r;
                let eu = (sample.state.u[(0, 0)] - u).abs() / u;
                worst = worst.max(er).max(eu);
            }
            assert!(solution.max_symmetry_drift() < 1e-10);
            assert!(solution.max_h_consistency() < 1e-8);
        }
        assert!(worst < 1e-8, "closed-form error {worst:.3e}");
    }

    #[test]
    fn rk4_order_check() {
        let s0 = 0.5;
        let initial = su2_state(s0, 1.0, 1.0);
        let err = |step: f64| {
            let config = IntegratorConfig {
                step,
                s_end: Some(0.6),
                ..Default::default()
            };
            let solution = integrate(&initial, BaseGeometry::abelian(), &config).unwrap();
            let state = solution.final_state();
            let (r, u) = abelian_closed_form(s0, state.s);
            (state.h[(0, 0)] - r).abs().max((state.u[(0, 0)] - u).abs())
        };
        let factor = err(4e-3) / err(2e-3);
        assert!(
            (12.0..=20.0).contains(&factor),
            "halving factor {factor:.2}"
        );
    }

    #[test]
    fn abelian_hits_rho_wall() {
        let s0 = 0.5f64;
        let initial = su2_state(s0, 1.0, 1.0);
        let config = IntegratorConfig::default();
        let solution = integrate(&initial, BaseGeometry::abelian(), &config).unwrap();
        assert_eq!(solution.termination, TerminationReason::RhoFloor);
        // rho = (s0^3 - s^5)/s^3 vanishes at s = s0^{3/5}
        let wall = s0.powf(0.6);
        let s_final = solution.final_state().s;
        assert!(s_final < wall && wall - s_final < 1e-3, "s_final = {s_final}");
    }

    #[test]
    fn su2_terminates_with_u_collapse() {
        let initial = su2_state(0.5, 1.0, 1.0);
        // rho and u collapse together at s_max (rho ~ u^2), so push the rho
        // floor out of the way and stop on the u wall
        let config = IntegratorConfig {
            rho_min: 1e-14,
            det_u_min: 1e-5,
            ..Default::default()
        };
        let solution = integrate(&initial, BaseGeometry::su2(), &config).unwrap();
        assert_eq!(solution.termination.as_str(), "u_floor");
        let s_max = solution.final_state().s;
        assert!(s_max > 0.5);
        let u_final = u_eff(&solution.final_state().u);
        assert!(u_final < 1.1e-4, "u at termination = {u_final:.3e}");
        // step halving: s_max stable at 1e-6 relative
        let config2 = IntegratorConfig {
            step: 5e-5,
            ..config
        };
        let solution2 = integrate(&initial, BaseGeometry::su2(), &config2).unwrap();
        let rel = (solution2.final_state().s - s_max).abs() / s_max;
        assert!(rel < 1e-6, "s_max drift {rel:.3e}");
        assert!(solution.max_symmetry_drift() < 1e-10);
    }

    #[test]
    fn verify_abelian_trajectory() {
        let initial = su2_state(0.5, 1.0, 1.0);
        let config = IntegratorConfig {
            s_end: Some(0.6),
            ..Default::default()
        };
        let solution = integrate(&initial, BaseGeometry::abelian(), &config).unwrap();
        let report = verify_solution(&solution, 100).unwrap();
        assert!(report.samples_checked >= 50);
        assert!(report.max_nearly_parallel < 1e-6, "{report:?}");
        assert!(report.max_deg0 < 1e-8, "{report:?}");
        assert!(report.max_deg1 < 1e-8, "{report:?}");
        assert!(report.max_sigma_evolution < 1e-7, "{report:?}");
        assert!(report.max_tau_evolution < 1e-7, "{report:?}");
    }

    #[test]
    fn verify_su2_trajectory_interior() {
        let initial = su2_state(0.5, 1.0, 1.0);
        let solution = integrate(&initial, BaseGeometry::su2(), &IntegratorConfig::default()).unwrap();
        // restrict to the interior 10%-90% by slicing the sample list
        let n = solution.samples.len();
        let interior = FlowSolution {
            samples: solution.samples[n / 10..(9 * n) / 10].to_vec(),
            termination: solution.termination,
            base: solution.base,
        };
        let report = verify_solution(&interior, 100).unwrap();
        assert!(report.max_nearly_parallel < 1e-6, "{report:?}");
        assert!(report.max_commutation < 1e-7, "{report:?}");
    }

    #[test]
    fn verify_detects_frozen_h() {
        let initial = su2_state(0.5, 1.0, 1.0);
        let config = IntegratorConfig {
            s_end: Some(0.6),
            ..Default::default()
        };
        let mut solution = integrate(&initial, BaseGeometry::abelian(), &config).unwrap();
        for sample in &mut solution.samples {
            sample.state.h = initial.h;
        }
        // detected either as a broken connection (the d^2 = 0 check) or as a
        // large nearly-parallel residual
        match verify_solution(&solution, 50) {
            Err(G2Error::InconsistentConnection(_)) => {}
            Ok(report) => assert!(report.max_nearly_parallel > 1e-2, "{report:?}"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn su2_commutation_closed_form() {
        // c'(s) of the curvature coefficient equals the theta' coefficient
        // along the solution; checked here at one state via the chain rule
        // with the analytic ODE values
        let state = su2_state(0.5, 1.0, 1.0);
        let base = BaseGeometry::su2();
        let b = structure_coeffs(&state, &base).unwrap();
        let jet = PointwiseJet::homogeneous(&state, b).unwrap();
        let rhs = flow_rhs(&state, &jet).unwrap();
        // c(s, r, u) = (u/s)(1 - 4 r^2 u / (r^3 - s^2))
        let c = |s: f64, r: f64, u: f64| (u / s) * (1.0 - 4.0 * r * r * u / (r.powi(3) - s * s));
        let (s, r, u) = (0.5, 1.0, 1.0);
        let (rp, up) = (rhs.h_prime[(0, 0)], rhs.u_prime[(0, 0)]);
        let eps = 1e-6;
        let c_dot = (c(s + eps, r + eps * rp, u + eps * up)
            - c(s - eps, r - eps * rp, u - eps * up))
            / (2.0 * eps);
        let tp = theta_prime_matrix(&state, &jet)[(0, 0)];
        assert!((c_dot - tp).abs() < 1e-7, "c' = {c_dot}, theta' = {tp}");
        // and the curvature coefficient itself matches curvature_matrix
        let cm = curvature_matrix(&state.data(base)).unwrap();
        assert!((cm[(0, 0)] - c(s, r, u)).abs() < 1e-13);
    }
}
