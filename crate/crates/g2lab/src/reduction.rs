//! Reduced data of a T^3-invariant nearly parallel structure on a
//! three-dimensional base: the derived forms beta, sigma, tau, the bundle
//! curvature, basis-change covariance, construction of initial coframes from
//! a closed two-form triple, and reassembly of the full seven-dimensional
//! structure from invariant data.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::exterior::{adjugate, coframe3, natural_flat, FormTriple, FrameAlgebra, Jet, KForm};
use crate::flow::PointwiseJet;
use crate::{G2Error, Result};

/// Left-invariant base geometry in diagonal Bianchi normal form:
/// de^i = lambda_i e^{jk} for (ijk) cyclic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseGeometry {
    pub lambda: [f64; 3],
}

impl BaseGeometry {
    pub fn abelian() -> Self {
        BaseGeometry { lambda: [0.0; 3] }
    }

    pub fn su2() -> Self {
        BaseGeometry { lambda: [1.0; 3] }
    }

    pub fn frame(&self) -> FrameAlgebra {
        FrameAlgebra::bianchi(self.lambda)
    }
}

/// Invariant data on the base: the multi-moment value s, the coframe
/// coefficients U (alpha = U e), and the torus metric H.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantData {
    pub s: f64,
    /// alpha = u * e.
    pub u: Matrix3<f64>,
    /// Torus fibre metric, symmetric positive-definite.
    pub h: Matrix3<f64>,
    pub base: BaseGeometry,
}

impl InvariantData {
    pub fn h_det(&self) -> f64 {
        self.h.determinant()
    }

    pub fn rho(&self) -> f64 {
        self.h_det() - self.s * self.s
    }

    pub fn validate(&self) -> Result<()> {
        let sym = (self.h - self.h.transpose()).abs().max();
        if sym > 1e-10 {
            return Err(G2Error::InvalidInput(format!(
                "H is not symmetric (drift {sym:.3e})"
            )));
        }
        if self.h.cholesky().is_none() {
            return Err(G2Error::InvalidInput("H is not positive-definite".into()));
        }
        if self.rho() <= 0.0 {
            return Err(G2Error::OutsideRegularRegime(format!(
                "rho = {:.3e} <= 0",
                self.rho()
            )));
        }
        let u_scale = self.u.abs().max().powi(3);
        if self.u.determinant().abs() < 1e-12 * u_scale.max(f64::MIN_POSITIVE) {
            return Err(G2Error::NearCollapse("det U ~ 0".into()));
        }
        Ok(())
    }

    /// alpha as a coefficient triple over the base coframe.
    pub fn alpha(&self) -> FormTriple {
        coframe3().apply(&self.u)
    }
}

/// beta = H alpha, sigma = H tau, tau, and the scalars h, rho.
#[derive(Debug, Clone)]
pub struct DerivedForms {
    pub beta: FormTriple,
    pub sigma: FormTriple,
    pub tau: FormTriple,
    pub h: f64,
    pub rho: f64,
}

/// Computes the derived forms, cross-checking the three expressions for tau:
/// (4/rho) beta_j ^ beta_k, (4/rho)(adj H) Hd alpha, and
/// (4h/rho) H^{-1} Hd alpha.
pub fn derive_forms(data: &InvariantData) -> Result<DerivedForms> {
    data.validate()?;
    let h = data.h_det();
    let rho = data.rho();
    let alpha = data.alpha();
    let beta = alpha.apply(&data.h);
    let hd_alpha = alpha.wedge_square();

    let tau_star = beta.wedge_square().scale(4.0 / rho);
    let tau_adj = hd_alpha.apply(&adjugate(&data.h)).scale(4.0 / rho);
    let h_inv = data
        .h
        .try_inverse()
        .ok_or_else(|| G2Error::CollapsedOrbit)?;
    let tau_inv = hd_alpha.apply(&h_inv).scale(4.0 * h / rho);

    let scale = tau_adj.max_abs().max(1.0);
    let d1 = tau_star.max_abs_diff(&tau_adj);
    let d2 = tau_inv.max_abs_diff(&tau_adj);
    if d1 > 1e-11 * scale || d2 > 1e-11 * scale {
        return Err(G2Error::SolveFailed(format!(
            "tau expressions disagree ({d1:.3e}, {d2:.3e})"
        )));
    }
    let sigma = tau_adj.apply(&data.h);
    Ok(DerivedForms {
        beta,
        sigma,
        tau: tau_adj,
        h,
        rho,
    })
}

/// tau as a coefficient matrix over wedge_square(e):
/// tau = (4/rho) adj(H) adj(U)^T wedge_square(e).
pub fn tau_matrix(data: &InvariantData) -> Matrix3<f64> {
    adjugate(&data.h) * adjugate(&data.u).transpose() * (4.0 / data.rho())
}

/// Closedness report for the derived two-forms.
#[derive(Debug, Clone)]
pub struct ClosedReport {
    pub sigma_residual: f64,
    pub tau_residual: f64,
    /// Coefficients of tau/s against wedge_square(e); integrality of the
    /// class is the caller's concern.
    pub integrality_coefficients: Matrix3<f64>,
}

/// Closedness of sigma and tau. For purely left-invariant data the residuals
/// are the norms of d_3 sigma and d_3 tau on the base frame. When a pointwise
/// jet supplies spatial variation of (H, alpha), the residuals become the
/// algebraic obstructions: d_3 tau = 0 reduces to
/// B-flat + (s^2/(h rho)) S = 0 and d_3 sigma = 0 to
/// (RH + HBH)-flat + (1/rho)(adj H) S = 0.
pub fn check_closed(data: &InvariantData, jet: Option<&PointwiseJet>) -> Result<ClosedReport> {
    data.validate()?;
    let integrality = tau_matrix(data) / data.s;
    match jet {
        None => {
            let frame = data.base.frame();
            let forms = derive_forms(data)?;
            Ok(ClosedReport {
                sigma_residual: forms.sigma.d(&frame).max_abs(),
                tau_residual: forms.tau.d(&frame).max_abs(),
                integrality_coefficients: integrality,
            })
        }
        Some(jet) => {
            let h = data.h_det();
            let rho = data.rho();
            let s = data.s;
            let b_flat = natural_flat(&jet.b);
            let tau_res = (b_flat + jet.s_vec * (s * s / (h * rho))).norm();
            let m = jet.r * data.h + data.h * jet.b * data.h;
            let sigma_res =
                (natural_flat(&m) + adjugate(&data.h) * jet.s_vec / rho).norm();
            Ok(ClosedReport {
                sigma_residual: sigma_res,
                tau_residual: tau_res,
                integrality_coefficients: integrality,
            })
        }
    }
}

/// Curvature of the torus bundle, d_6 theta = (1/s)(d_3 alpha - tau).
pub fn curvature(data: &InvariantData) -> Result<FormTriple> {
    if data.s == 0.0 {
        return Err(G2Error::InvalidInput("curvature requires s != 0".into()));
    }
    let forms = derive_forms(data)?;
    let frame = data.base.frame();
    let d_alpha = data.alpha().d(&frame);
    Ok(d_alpha.sub(&forms.tau).scale(1.0 / data.s))
}

/// Curvature as a coefficient matrix over wedge_square(e):
/// (1/s)(U diag(lambda) - (4/rho) adj(H) adj(U)^T).
pub fn curvature_matrix(data: &InvariantData) -> Result<Matrix3<f64>> {
    if data.s == 0.0 {
        return Err(G2Error::InvalidInput("curvature requires s != 0".into()));
    }
    let d3 = data.u * Matrix3::from_diagonal(&Vector3::from(data.base.lambda));
    Ok((d3 - tau_matrix(data)) / data.s)
}

/// Result of factoring a closed, pointwise-independent two-form triple eta
/// into a coframe: eta_i = f_i gamma_j ^ gamma_k, alpha_i = (b/f_i) gamma_i
/// with b^2 = eps c_hat f_1 f_2 f_3, giving wedge_square(alpha) =
/// c_hat eps eta. The paired initial torus metric is H = Id.
#[derive(Debug, Clone)]
pub struct EtaDecomposition {
    pub eta: FormTriple,
    pub f: [f64; 3],
    pub gamma: FormTriple,
    pub epsilon: f64,
    pub c_hat: f64,
    pub alpha: FormTriple,
    /// Coefficients of alpha over the base coframe, usable as U in
    /// [`InvariantData`].
    pub u: Matrix3<f64>,
}

/// Builds the initial coframe of the inverse construction from a closed
/// two-form triple and the starting value s0 (0 < s0^2 < 1, s0 > 0). Set
/// `swap_eta23` to exchange eta_2 and eta_3 first, which flips the sign
/// epsilon.
pub fn eta_to_coframe(eta: &FormTriple, s0: f64, swap_eta23: bool) -> Result<EtaDecomposition> {
    if !(s0 > 0.0 && s0 < 1.0) {
        return Err(G2Error::InvalidInput(
            "eta construction requires 0 < s0 < 1".into(),
        ));
    }
    assert_eq!(eta.dim(), 3);
    assert_eq!(eta.degree(), 2);
    let eta = if swap_eta23 {
        FormTriple::new([
            eta.components[0].clone(),
            eta.components[2].clone(),
            eta.components[1].clone(),
        ])
    } else {
        eta.clone()
    };
    // eta_i = w_i . wedge_square(e); the kernel field of eta_i is Y_i = w_i
    let sq = [[2usize, 3], [3, 1], [1, 2]];
    let mut y = Matrix3::<f64>::zeros();
    for i in 0..3 {
        for a in 0..3 {
            y[(i, a)] = eta.components[i].coefficient(&sq[a]).val;
        }
    }
    if y.determinant().abs() < 1e-12 {
        return Err(G2Error::DegeneratePlane);
    }
    // gamma dual to the Y_i, with each Y_i sign fixed so gamma_i ^ eta_i > 0
    let mut gamma_coeff = y
        .transpose()
        .try_inverse()
        .ok_or(G2Error::DegeneratePlane)?;
    for i in 0..3 {
        let gi = KForm::monomial(3, &[1], gamma_coeff[(i, 0)])
            .add(&KForm::monomial(3, &[2], gamma_coeff[(i, 1)]))
            .add(&KForm::monomial(3, &[3], gamma_coeff[(i, 2)]));
        let top = gi.wedge(&eta.components[i]).coefficient(&[1, 2, 3]).val;
        if top < 0.0 {
            for a in 0..3 {
                gamma_coeff[(i, a)] = -gamma_coeff[(i, a)];
            }
        }
    }
    let gamma = coframe3().apply(&gamma_coeff);
    // f_i from eta_i = f_i gamma_j ^ gamma_k
    let gamma_sq = gamma.wedge_square();
    let mut f = [0.0f64; 3];
    for i in 0..3 {
        // ratio against the largest coefficient of gamma_j ^ gamma_k
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (m, c) in gamma_sq.components[i].terms() {
            if c.val.abs() > den.abs() {
                den = c.val;
                let idx: Vec<usize> = (0..3).filter(|b| m & (1 << b) != 0).map(|b| b + 1).collect();
                num = eta.components[i].coefficient(&idx).val;
            }
        }
        if den.abs() < 1e-12 {
            return Err(G2Error::DegeneratePlane);
        }
        f[i] = num / den;
        let check = gamma_sq.components[i].scale(f[i]);
        if !check.approx_eq(&eta.components[i], 1e-10 * (1.0 + eta.max_abs())) {
            return Err(G2Error::InvalidInput(
                "eta component is not decomposable over the kernel coframe".into(),
            ));
        }
    }
    let prod = f[0] * f[1] * f[2];
    if prod.abs() < 1e-12 {
        return Err(G2Error::DegeneratePlane);
    }
    let epsilon = prod.signum();
    let c_hat = (1.0 - s0 * s0) * s0 / 4.0;
    let b_sq = epsilon * c_hat * prod;
    if b_sq <= 0.0 {
        return Err(G2Error::InvalidInput(format!(
            "scaling constant b^2 = {b_sq:.3e} is not positive"
        )));
    }
    let b = b_sq.sqrt();
    let a = Matrix3::from_diagonal(&Vector3::new(b / f[0], b / f[1], b / f[2]));
    let u = a * gamma_coeff;
    let alpha = gamma.apply(&a);
    Ok(EtaDecomposition {
        eta,
        f,
        gamma,
        epsilon,
        c_hat,
        alpha,
        u,
    })
}

/// Basis change of the torus lattice by an invertible P: s -> (det P) s,
/// H -> P H P^T, alpha -> (adj P)^T alpha (so U -> (adj P)^T U).
pub fn basis_change(data: &InvariantData, p: &Matrix3<f64>) -> Result<InvariantData> {
    if p.determinant().abs() < 1e-12 {
        return Err(G2Error::InvalidInput("singular basis change".into()));
    }
    Ok(InvariantData {
        s: p.determinant() * data.s,
        u: adjugate(p).transpose() * data.u,
        h: p * data.h * p.transpose(),
        base: data.base,
    })
}

/// s-derivatives of the invariant data, needed to differentiate the
/// assembled forms.
#[derive(Debug, Clone, Copy)]
pub struct StateDerivatives {
    pub u_dot: Matrix3<f64>,
    pub h_dot: Matrix3<f64>,
}

/// The assembled seven-dimensional structure on the extended frame
/// (ds, theta_1, theta_2, theta_3, e^1, e^2, e^3) — generators 1..7.
#[derive(Debug, Clone)]
pub struct SevenStructure {
    pub frame: FrameAlgebra,
    pub metric: DMatrix<f64>,
    pub phi: KForm,
    /// star(phi) from the displayed invariant expression (not from the Hodge
    /// operator; compare with `hodge_residual`).
    pub star_phi: KForm,
    pub vol: KForm,
    pub theta: FormTriple,
    pub alpha: FormTriple,
}

impl SevenStructure {
    /// || d(phi) - 4 star(phi) || with star taken from the assembled metric.
    pub fn nearly_parallel_residual(&self) -> f64 {
        crate::g2::nearly_parallel_residual(&self.phi, &self.frame)
    }

    /// Max coefficient difference between the Hodge dual of phi and the
    /// displayed expression for star(phi).
    pub fn hodge_residual(&self) -> f64 {
        self.phi.hodge(&self.frame).max_abs_diff(&self.star_phi)
    }

    /// Coefficient norms of d(phi) - 4 star(phi) split by the number of
    /// theta factors (generators 2..4) in each monomial.
    pub fn residual_by_theta_degree(&self) -> [f64; 4] {
        let residual = self
            .phi
            .d(&self.frame)
            .sub(&self.phi.hodge(&self.frame).scale(4.0));
        let theta_bits: u16 = 0b1110;
        let mut out = [0.0f64; 4];
        for (m, c) in residual.terms() {
            let deg = (m & theta_bits).count_ones() as usize;
            out[deg.min(3)] = out[deg.min(3)].max(c.val.abs());
        }
        out
    }
}

fn lift_one_forms(val: &Matrix3<f64>, dot: &Matrix3<f64>) -> FormTriple {
    let mk = |i: usize| {
        let mut f = KForm::zero(7, 1);
        for a in 0..3 {
            f.add_term(&[5 + a], Jet::new(val[(i, a)], dot[(i, a)]));
        }
        f
    };
    FormTriple::new([mk(0), mk(1), mk(2)])
}

/// Assembles the seven-dimensional structure from invariant data, the bundle
/// curvature (a two-form triple over the base with s-derivative jets in its
/// coefficients), theta' (a one-form triple over the base), and the
/// s-derivatives of (U, H). Fails if d^2 != 0 on the extended frame beyond
/// `d2_tol`, i.e. if the supplied connection data is inconsistent.
pub fn assemble_seven(
    data: &InvariantData,
    derivs: &StateDerivatives,
    theta_curvature: &FormTriple,
    theta_prime: &FormTriple,
    d2_tol: f64,
) -> Result<SevenStructure> {
    data.validate()?;
    let s = data.s;
    let h_scalar = data.h_det();
    let rho = data.rho();
    let adj_h = adjugate(&data.h);
    let h_dot = (derivs.h_dot * adj_h).trace();
    let nu = Jet::new(s, 1.0);
    let h_jet = Jet::new(h_scalar, h_dot);
    let rho_jet = h_jet - nu * nu;
    let inv_rho = rho_jet.inv();

    // extended frame generators: 1 = ds, 2..4 = theta, 5..7 = base coframe
    let lift2 = |f: &KForm| f.remap(7, &[5, 6, 7]);
    let base_frame = data.base.frame();
    let mut d_gen: Vec<KForm> = Vec::with_capacity(7);
    d_gen.push(KForm::zero(7, 2)); // d(ds) = 0
    let ds = KForm::basis(7, &[1]);
    for i in 0..3 {
        let curv = lift2(&theta_curvature.components[i]);
        let dtheta = curv.add(&ds.wedge(&lift2(&theta_prime.components[i])));
        d_gen.push(dtheta);
    }
    for i in 0..3 {
        d_gen.push(lift2(&base_frame.d_gen[i]));
    }

    let mut metric = DMatrix::zeros(7, 7);
    metric[(0, 0)] = 1.0 / (16.0 * rho);
    for i in 0..3 {
        for j in 0..3 {
            metric[(1 + i, 1 + j)] = data.h[(i, j)];
        }
    }
    let alpha_gram = data.u.transpose() * data.h * data.u / rho;
    for a in 0..3 {
        for b in 0..3 {
            metric[(4 + a, 4 + b)] = alpha_gram[(a, b)];
        }
    }
    let orientation = data.u.determinant().signum();
    let frame = FrameAlgebra::new(7, d_gen, metric.clone(), orientation, Some(1));

    let d2 = frame.d_squared_residual();
    if d2 > d2_tol {
        return Err(G2Error::InconsistentConnection(format!(
            "d^2 residual {d2:.3e} exceeds {d2_tol:.1e}"
        )));
    }

    let theta = FormTriple::new([
        KForm::basis(7, &[2]),
        KForm::basis(7, &[3]),
        KForm::basis(7, &[4]),
    ]);
    let alpha = lift_one_forms(&data.u, &derivs.u_dot);
    let beta_val = data.h * data.u;
    let beta_dot = derivs.h_dot * data.u + data.h * derivs.u_dot;
    let beta = lift_one_forms(&beta_val, &beta_dot);

    let vol_theta = theta.volume();
    let vol_alpha = alpha.volume();
    let hd_theta = theta.wedge_square();
    let hd_alpha = alpha.wedge_square();

    // phi = nu vol_theta - (Hd theta)^T ^ alpha - (nu/rho) theta^T ^ Hd alpha
    //       - (1/(4 rho)) ds ^ theta^T ^ beta + (1/rho) vol_alpha
    let mut phi = vol_theta.scale(nu);
    phi = phi.sub(&hd_theta.dot_wedge(&alpha));
    phi = phi.sub(&theta.dot_wedge(&hd_alpha).scale(nu * inv_rho));
    phi = phi.sub(&ds.wedge(&theta.dot_wedge(&beta)).scale(inv_rho * 0.25));
    phi = phi.add(&vol_alpha.scale(inv_rho));

    let tau = beta.wedge_square().scale(inv_rho * 4.0);
    // star phi = (1/4) ds ^ vol_theta - (1/4)(Hd theta)^T ^ tau
    //            + (nu/(4 rho)) ds ^ (Hd theta)^T ^ alpha
    //            - (1/(4 rho)) ds ^ theta^T ^ Hd alpha
    //            - (nu/(4 rho^2)) ds ^ vol_alpha
    let mut star_phi = ds.wedge(&vol_theta).scale(0.25);
    star_phi = star_phi.sub(&hd_theta.dot_wedge(&tau).scale(0.25));
    star_phi = star_phi.add(
        &ds.wedge(&hd_theta.dot_wedge(&alpha))
            .scale(nu * inv_rho * 0.25),
    );
    star_phi = star_phi.sub(&ds.wedge(&theta.dot_wedge(&hd_alpha)).scale(inv_rho * 0.25));
    star_phi = star_phi.sub(
        &ds.wedge(&vol_alpha)
            .scale(nu * inv_rho * inv_rho * 0.25),
    );

    // vol = (h / 4 rho^2) vol_theta ^ vol_alpha ^ ds
    let vol = vol_theta
        .wedge(&vol_alpha)
        .wedge(&ds)
        .scale(h_jet * inv_rho * inv_rho * 0.25);

    Ok(SevenStructure {
        frame,
        metric,
        phi,
        star_phi,
        vol,
        theta,
        alpha,
    })
}
