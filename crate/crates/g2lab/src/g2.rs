//! G2-specific constructions: the standard three-form and its dual, metric
//! recovery from a definite three-form, cross product and associativity of
//! three-planes, the multi-moment map, the pointwise normal form of three
//! commuting symmetry fields, and the nearly parallel residual.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::exterior::{FormTriple, FrameAlgebra, KForm};
use crate::{G2Error, Result};

/// Builds the model three-form
/// e^{123} - e^1(e^{45}+e^{67}) - e^2(e^{46}+e^{75}) - e^3(e^{47}+e^{56})
/// on the listed generators of a frame of dimension `dim`.
pub fn model_phi(dim: usize, g: &[usize; 7]) -> KForm {
    let mut phi = KForm::zero(dim, 3);
    phi.add_term(&[g[0], g[1], g[2]], 1.0);
    phi.add_term(&[g[0], g[3], g[4]], -1.0);
    phi.add_term(&[g[0], g[5], g[6]], -1.0);
    phi.add_term(&[g[1], g[3], g[5]], -1.0);
    phi.add_term(&[g[1], g[6], g[4]], -1.0);
    phi.add_term(&[g[2], g[3], g[6]], -1.0);
    phi.add_term(&[g[2], g[4], g[5]], -1.0);
    phi
}

/// The dual model four-form
/// e^{4567} - e^{23}(e^{45}+e^{67}) - e^{31}(e^{46}+e^{75}) - e^{12}(e^{47}+e^{56}).
pub fn model_star_phi(dim: usize, g: &[usize; 7]) -> KForm {
    let mut psi = KForm::zero(dim, 4);
    psi.add_term(&[g[3], g[4], g[5], g[6]], 1.0);
    psi.add_term(&[g[1], g[2], g[3], g[4]], -1.0);
    psi.add_term(&[g[1], g[2], g[5], g[6]], -1.0);
    psi.add_term(&[g[2], g[0], g[3], g[5]], -1.0);
    psi.add_term(&[g[2], g[0], g[6], g[4]], -1.0);
    psi.add_term(&[g[0], g[1], g[3], g[6]], -1.0);
    psi.add_term(&[g[0], g[1], g[4], g[5]], -1.0);
    psi
}

/// A G2-structure: the three-form with its induced metric, volume and dual.
#[derive(Debug, Clone)]
pub struct G2Structure {
    pub phi: KForm,
    pub frame: FrameAlgebra,
    pub star_phi: KForm,
    pub metric: DMatrix<f64>,
    pub volume: KForm,
}

impl G2Structure {
    /// The standard structure on an orthonormal oriented 7-frame.
    pub fn standard(frame: FrameAlgebra) -> Self {
        assert_eq!(frame.dim, 7);
        let phi = model_phi(7, &[1, 2, 3, 4, 5, 6, 7]);
        let star_phi = model_star_phi(7, &[1, 2, 3, 4, 5, 6, 7]);
        let metric = DMatrix::identity(7, 7);
        let volume = KForm::basis(7, &[1, 2, 3, 4, 5, 6, 7]);
        G2Structure {
            phi,
            frame,
            star_phi,
            metric,
            volume,
        }
    }

    /// Recovers metric, volume and dual from a definite three-form. The
    /// generator differentials of `dgen_frame` are kept so that d can still
    /// be evaluated against the recovered metric.
    pub fn from_three_form(phi: KForm, dgen_frame: &FrameAlgebra) -> Result<Self> {
        let (metric, volume) = metric_from_three_form(&phi)?;
        let frame = FrameAlgebra::new(
            7,
            dgen_frame.d_gen.clone(),
            metric.clone(),
            1.0,
            dgen_frame.s_index,
        );
        let star_phi = phi.hodge(&frame);
        Ok(G2Structure {
            phi,
            frame,
            star_phi,
            metric,
            volume,
        })
    }
}

/// Recovers (g, vol) with 6 g(X,Y) vol = (X -| phi) ^ (Y -| phi) ^ phi.
///
/// B_ij is the top coefficient of (E_i -| phi) ^ (E_j -| phi) ^ phi; then
/// det g = (det B / 6^7)^{2/9} and g = B / (6 sqrt(det g)).
pub fn metric_from_three_form(phi: &KForm) -> Result<(DMatrix<f64>, KForm)> {
    assert_eq!(phi.dim(), 7);
    assert_eq!(phi.degree(), 3);
    let phi = phi.value_part();
    let mut contractions = Vec::with_capacity(7);
    for i in 0..7 {
        let mut e = [0.0; 7];
        e[i] = 1.0;
        contractions.push(phi.interior(&e));
    }
    let mut b = DMatrix::zeros(7, 7);
    let all = [1, 2, 3, 4, 5, 6, 7];
    for i in 0..7 {
        for j in 0..=i {
            let w = contractions[i].wedge(&contractions[j]).wedge(&phi);
            let c = w.coefficient(&all).val;
            b[(i, j)] = c;
            b[(j, i)] = c;
        }
    }
    let det_b = b.determinant();
    if det_b < 1e-20 {
        return Err(G2Error::NotG2(format!(
            "recovered bilinear form is not positive (det B = {det_b:.3e})"
        )));
    }
    let det_g = (det_b / 6f64.powi(7)).powf(2.0 / 9.0);
    let g = b / (6.0 * det_g.sqrt());
    if g.clone().cholesky().is_none() {
        return Err(G2Error::NotG2(
            "recovered bilinear form is not positive-definite".into(),
        ));
    }
    let volume = KForm::monomial(7, &all, det_g.sqrt());
    Ok((g, volume))
}

/// Cross product: g(X x Y, Z) = phi(X, Y, Z).
pub fn cross(structure: &G2Structure, x: &[f64; 7], y: &[f64; 7]) -> [f64; 7] {
    let one_form = structure.phi.interior(x).interior(y);
    let mut covector = DVector::zeros(7);
    for i in 0..7 {
        let mut idx = [0usize; 1];
        idx[0] = i + 1;
        covector[i] = one_form.coefficient(&idx).val;
    }
    let v = structure
        .metric
        .clone()
        .cholesky()
        .expect("metric is positive-definite")
        .solve(&covector);
    [v[0], v[1], v[2], v[3], v[4], v[5], v[6]]
}

/// Whether span{x, y, z} is closed under the cross product. The inputs must
/// be linearly independent; the closure residual is measured on a
/// g-orthonormalised basis of the plane, which makes the test scale-free.
pub fn is_associative(
    structure: &G2Structure,
    x: &[f64; 7],
    y: &[f64; 7],
    z: &[f64; 7],
) -> Result<bool> {
    let g = &structure.metric;
    let dot = |a: &[f64; 7], b: &[f64; 7]| {
        let mut acc = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                acc += a[i] * g[(i, j)] * b[j];
            }
        }
        acc
    };
    // Gram-Schmidt in the metric g
    let mut basis: Vec<[f64; 7]> = Vec::new();
    for v in [x, y, z] {
        let mut w = *v;
        for b in &basis {
            let c = dot(&w, b);
            for i in 0..7 {
                w[i] -= c * b[i];
            }
        }
        let n = dot(&w, &w).sqrt();
        let scale = dot(v, v).sqrt().max(1e-300);
        if n < 1e-10 * scale {
            return Err(G2Error::DegeneratePlane);
        }
        for wi in &mut w {
            *wi /= n;
        }
        basis.push(w);
    }
    let mut worst = 0.0f64;
    for a in 0..3 {
        for b in (a + 1)..3 {
            let c = cross(structure, &basis[a], &basis[b]);
            // residual of c off the plane
            let mut r = c;
            for e in &basis {
                let p = dot(&c, e);
                for i in 0..7 {
                    r[i] -= p * e[i];
                }
            }
            worst = worst.max(dot(&r, &r).sqrt());
        }
    }
    Ok(worst < 1e-10)
}

/// Multi-moment data of three symmetry fields: the value nu = phi(U1,U2,U3)
/// and the one-form -4 (star phi)(U1,U2,U3, .) that equals d(nu).
pub fn multi_moment(
    structure: &G2Structure,
    u1: &[f64; 7],
    u2: &[f64; 7],
    u3: &[f64; 7],
) -> (f64, KForm) {
    let nu = structure.phi.evaluate(&[u1, u2, u3]);
    let dnu = structure
        .star_phi
        .interior(u1)
        .interior(u2)
        .interior(u3)
        .scale(-4.0);
    (nu, dnu)
}

/// The pointwise staircase normal form of three commuting symmetry fields:
/// (U1,U2,U3)^T = V (E1,E2,E3,E4)^T.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrameData {
    pub p: f64,
    pub q1: f64,
    pub q2: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

impl LocalFrameData {
    pub fn regular(&self) -> bool {
        self.p > 0.0 && self.q2 > 0.0 && self.r_tilde_sq() > 0.0
    }

    pub fn r_tilde_sq(&self) -> f64 {
        self.r3 * self.r3 + self.r4 * self.r4
    }

    /// The 3x4 staircase matrix V.
    pub fn v_matrix(&self) -> [[f64; 4]; 3] {
        [
            [self.p, 0.0, 0.0, 0.0],
            [self.q1, self.q2, 0.0, 0.0],
            [self.r1, self.r2, self.r3, self.r4],
        ]
    }

    /// H = V V^T.
    pub fn h_matrix(&self) -> Matrix3<f64> {
        let v = self.v_matrix();
        Matrix3::from_fn(|i, j| (0..4).map(|a| v[i][a] * v[j][a]).sum())
    }

    pub fn nu(&self) -> f64 {
        self.p * self.q2 * self.r3
    }

    pub fn h_det(&self) -> f64 {
        self.p * self.p * self.q2 * self.q2 * self.r_tilde_sq()
    }

    /// U_i as 7-vectors in the frame E_1..E_7.
    pub fn u_vectors(&self) -> [[f64; 7]; 3] {
        let v = self.v_matrix();
        let mut u = [[0.0; 7]; 3];
        for i in 0..3 {
            u[i][..4].copy_from_slice(&v[i]);
        }
        u
    }

    /// The 3x4 coefficient matrix X of the pointwise expressions for theta
    /// and alpha.
    pub fn x_matrix(&self) -> [[f64; 4]; 3] {
        let (p, q1, q2) = (self.p, self.q1, self.q2);
        let (r1, r2, r3, r4) = (self.r1, self.r2, self.r3, self.r4);
        let rt2 = self.r_tilde_sq();
        let left = [
            [q2, -q1, q1 * r2 - q2 * r1],
            [0.0, p, -p * r2],
            [0.0, 0.0, p * q2],
        ];
        let right = [
            [rt2, 0.0, 0.0, 0.0],
            [0.0, rt2, 0.0, 0.0],
            [0.0, 0.0, r3, r4],
        ];
        let scale = 1.0 / (p * q2 * rt2);
        let mut x = [[0.0; 4]; 3];
        for i in 0..3 {
            for a in 0..4 {
                x[i][a] = scale * (0..3).map(|k| left[i][k] * right[k][a]).sum::<f64>();
            }
        }
        x
    }
}

/// The invariant one-forms theta (dual to the U_i) and alpha (basic) in the
/// pointwise normal form: theta = X (e^1..e^4)^T and
/// alpha = p q2 r4 X (e^6, -e^5, e^4, -e^3)^T.
pub fn local_invariant_forms(data: &LocalFrameData) -> Result<(FormTriple, FormTriple)> {
    if !data.regular() {
        return Err(G2Error::CollapsedOrbit);
    }
    let x = data.x_matrix();
    let mk = |i: usize, columns: &[(usize, f64); 4]| {
        let mut f = KForm::zero(7, 1);
        for (a, &(idx, sign)) in columns.iter().enumerate() {
            f.add_term(&[idx], sign * x[i][a]);
        }
        f
    };
    let theta_cols = [(1usize, 1.0), (2, 1.0), (3, 1.0), (4, 1.0)];
    let alpha_cols = [(6usize, 1.0), (5, -1.0), (4, 1.0), (3, -1.0)];
    let scale = data.p * data.q2 * data.r4;
    let theta = FormTriple::new([
        mk(0, &theta_cols),
        mk(1, &theta_cols),
        mk(2, &theta_cols),
    ]);
    let alpha = FormTriple::new([
        mk(0, &alpha_cols).scale(scale),
        mk(1, &alpha_cols).scale(scale),
        mk(2, &alpha_cols).scale(scale),
    ]);
    Ok((theta, alpha))
}

/// || d(phi) - 4 star(phi) || in the induced norm on four-forms, with both
/// d and star taken from `frame`. Zero exactly for nearly parallel
/// structures normalised to d(phi) = 4 star(phi).
pub fn nearly_parallel_residual(phi: &KForm, frame: &FrameAlgebra) -> f64 {
    let dphi = phi.d(frame);
    let star = phi.hodge(frame);
    dphi.sub(&star.scale(4.0)).norm(frame)
}
