//! The round seven-sphere worked example: the Spin(7) four-form on R^8, the
//! induced G2-structure on tangent spaces, the multi-moment map
//! nu = 4 Im(z^1 z^2 z^3 z^4) of the standard three-torus of rotations, its
//! critical sets, and the Hessian at the extrema.

use nalgebra::{Complex, DMatrix, SMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::exterior::{FrameAlgebra, KForm};
use crate::g2::{is_associative, model_phi, model_star_phi, G2Structure};
use crate::{G2Error, Result};

/// A point of the unit sphere in R^8, coordinates x^0..x^7.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    pub x: [f64; 8],
}

impl SpherePoint {
    pub fn new(x: [f64; 8]) -> Result<Self> {
        let n: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() >= 1e-12 {
            return Err(G2Error::InvalidInput(format!(
                "point is not on the unit sphere (|x| = {n:.17})"
            )));
        }
        Ok(SpherePoint { x })
    }

    /// Normalises a nonzero ambient vector onto the sphere.
    pub fn project(x: [f64; 8]) -> Self {
        let n: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n > 0.0, "cannot project the origin");
        SpherePoint {
            x: std::array::from_fn(|i| x[i] / n),
        }
    }

    /// Uniform random point (normalised Gaussian, Box-Muller).
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut x = [0.0; 8];
        for pair in x.chunks_mut(2) {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            pair[0] = r * u2.cos();
            pair[1] = r * u2.sin();
        }
        SpherePoint::project(x)
    }

    /// The complex coordinates z^1 = x^0 - i x^1, z^2 = x^2 - i x^3,
    /// z^3 = x^4 + i x^5, z^4 = x^6 + i x^7.
    pub fn z(&self) -> [Complex<f64>; 4] {
        let x = &self.x;
        [
            Complex::new(x[0], -x[1]),
            Complex::new(x[2], -x[3]),
            Complex::new(x[4], x[5]),
            Complex::new(x[6], x[7]),
        ]
    }
}

/// d z^{pair(k)} / d x^k.
fn z_factor(k: usize) -> Complex<f64> {
    match k {
        0 | 2 | 4 | 6 => Complex::new(1.0, 0.0),
        1 | 3 => Complex::new(0.0, -1.0),
        _ => Complex::new(0.0, 1.0),
    }
}

/// The rotation fields V_i = -x^{2i+1} d_{2i} + x^{2i} d_{2i+1} and the
/// derived torus generators U_1 = V_0 + V_3, U_2 = V_1 + V_3, U_3 = V_2 - V_3.
pub struct TorusGenerators;

impl TorusGenerators {
    /// Linear matrix of V_i, so V_i(x) = M x.
    pub fn v_matrix(i: usize) -> SMatrix<f64, 8, 8> {
        assert!(i < 4);
        let mut m = SMatrix::zeros();
        m[(2 * i, 2 * i + 1)] = -1.0;
        m[(2 * i + 1, 2 * i)] = 1.0;
        m
    }

    pub fn u_matrix(i: usize) -> SMatrix<f64, 8, 8> {
        match i {
            1 => Self::v_matrix(0) + Self::v_matrix(3),
            2 => Self::v_matrix(1) + Self::v_matrix(3),
            3 => Self::v_matrix(2) - Self::v_matrix(3),
            _ => panic!("torus generator index must be 1, 2 or 3"),
        }
    }

    pub fn v_at(i: usize, p: &SpherePoint) -> [f64; 8] {
        let x = &p.x;
        let mut v = [0.0; 8];
        v[2 * i] = -x[2 * i + 1];
        v[2 * i + 1] = x[2 * i];
        v
    }

    pub fn u_at(i: usize, p: &SpherePoint) -> [f64; 8] {
        let (a, b, sign) = match i {
            1 => (0, 3, 1.0),
            2 => (1, 3, 1.0),
            3 => (2, 3, -1.0),
            _ => panic!("torus generator index must be 1, 2 or 3"),
        };
        let va = Self::v_at(a, p);
        let vb = Self::v_at(b, p);
        std::array::from_fn(|k| va[k] + sign * vb[k])
    }

    pub fn all_u_at(p: &SpherePoint) -> [[f64; 8]; 3] {
        [Self::u_at(1, p), Self::u_at(2, p), Self::u_at(3, p)]
    }
}

/// The Spin(7) four-form Psi = dx^0 ^ phi_0 + star_7 phi_0 on R^8
/// (generators 1..8 are dx^0..dx^7). 14 terms, all coefficients +-1.
pub fn spin7_form() -> KForm {
    let g: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];
    let dx0 = KForm::basis(8, &[1]);
    dx0.wedge(&model_phi(8, &g)).add(&model_star_phi(8, &g))
}

/// An orthonormal frame of the tangent space at p: rows orthogonal to p.
pub fn tangent_frame(p: &SpherePoint) -> [[f64; 8]; 7] {
    let mut frame = [[0.0f64; 8]; 7];
    let mut count = 0;
    // Gram-Schmidt of projected coordinate directions, skipping the most
    // p-aligned one so the result is well conditioned.
    let skip = (0..8)
        .max_by(|&a, &b| p.x[a].abs().partial_cmp(&p.x[b].abs()).unwrap())
        .unwrap();
    for k in 0..8 {
        if k == skip {
            continue;
        }
        let mut v = [0.0f64; 8];
        v[k] = 1.0;
        let d: f64 = (0..8).map(|i| v[i] * p.x[i]).sum();
        for i in 0..8 {
            v[i] -= d * p.x[i];
        }
        for row in frame.iter().take(count) {
            let d: f64 = (0..8).map(|i| v[i] * row[i]).sum();
            for i in 0..8 {
                v[i] -= d * row[i];
            }
        }
        let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(n > 1e-8, "tangent frame degenerated");
        for vi in &mut v {
            *vi /= n;
        }
        frame[count] = v;
        count += 1;
    }
    // orient the frame so that (p, E_1, ..., E_7) is positively oriented,
    // matching the orientation induced by the ambient four-form
    let m = SMatrix::<f64, 8, 8>::from_fn(|r, c| if r == 0 { p.x[c] } else { frame[r - 1][c] });
    if m.determinant() < 0.0 {
        for v in &mut frame[6] {
            *v = -*v;
        }
    }
    frame
}

/// The induced three-form phi = E -| Psi restricted to the given tangent
/// frame at p (Euler field E = p on the unit sphere).
pub fn induced_phi_on_frame(p: &SpherePoint, frame: &[[f64; 8]; 7]) -> KForm {
    let psi = spin7_form();
    let slot = psi.interior(&p.x);
    let mut phi = KForm::zero(7, 3);
    for a in 0..7 {
        for b in (a + 1)..7 {
            for c in (b + 1)..7 {
                let v = slot.evaluate(&[&frame[a], &frame[b], &frame[c]]);
                if v != 0.0 {
                    phi.add_term(&[a + 1, b + 1, c + 1], v);
                }
            }
        }
    }
    phi
}

/// The induced G2-structure at p on an orthonormal tangent frame, returned
/// together with the frame.
pub fn induced_structure_at(p: &SpherePoint) -> Result<(G2Structure, [[f64; 8]; 7])> {
    let frame = tangent_frame(p);
    let phi = induced_phi_on_frame(p, &frame);
    let s = G2Structure::from_three_form(phi, &FrameAlgebra::orthonormal(7))?;
    Ok((s, frame))
}

/// Coordinates of a tangent ambient vector in an orthonormal tangent frame.
pub fn frame_coords(frame: &[[f64; 8]; 7], v: &[f64; 8]) -> [f64; 7] {
    std::array::from_fn(|a| (0..8).map(|i| frame[a][i] * v[i]).sum())
}

/// nu = 4 Im(z^1 z^2 z^3 z^4).
pub fn nu(p: &SpherePoint) -> f64 {
    let z = p.z();
    4.0 * (z[0] * z[1] * z[2] * z[3]).im
}

/// Euclidean gradient of the quartic polynomial nu.
pub fn euclidean_grad_nu(p: &SpherePoint) -> [f64; 8] {
    let z = p.z();
    std::array::from_fn(|k| {
        let pair = k / 2;
        let mut prod = z_factor(k);
        for (q, zq) in z.iter().enumerate() {
            if q != pair {
                prod *= zq;
            }
        }
        4.0 * prod.im
    })
}

/// The gradient of nu restricted to the sphere: tangent projection of the
/// Euclidean gradient.
pub fn grad_nu(p: &SpherePoint) -> [f64; 8] {
    let g = euclidean_grad_nu(p);
    let d: f64 = (0..8).map(|i| g[i] * p.x[i]).sum();
    std::array::from_fn(|i| g[i] - d * p.x[i])
}

fn norm8(v: &[f64; 8]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Euclidean Hessian of the quartic polynomial nu; entries vanish within
/// a complex pair since nu is linear in each pair.
pub fn euclidean_hessian_nu(p: &SpherePoint) -> SMatrix<f64, 8, 8> {
    let z = p.z();
    SMatrix::from_fn(|k, l| {
        let (pk, pl) = (k / 2, l / 2);
        if pk == pl {
            return 0.0;
        }
        let mut prod = z_factor(k) * z_factor(l);
        for (q, zq) in z.iter().enumerate() {
            if q != pk && q != pl {
                prod *= zq;
            }
        }
        4.0 * prod.im
    })
}

/// Hess(X_i, X_j) = X_i(X_j nu) for the projected coordinate fields
/// X_i = d_i - x^i E, at any point. Expanding with E nu = 4 nu
/// (nu is homogeneous quartic):
/// Hess_ij = d_i d_j nu - 4 delta_ij nu - 4 x^j d_i nu - 3 x^i d_j nu
///           + 20 x^i x^j nu.
pub fn hessian_projected_fields(p: &SpherePoint) -> SMatrix<f64, 8, 8> {
    let n = nu(p);
    let g = euclidean_grad_nu(p);
    let h = euclidean_hessian_nu(p);
    let x = &p.x;
    SMatrix::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        h[(i, j)] - 4.0 * delta * n - 4.0 * x[j] * g[i] - 3.0 * x[i] * g[j]
            + 20.0 * x[i] * x[j] * n
    })
}

/// Spanning-set order and signs used at the extrema:
/// X_0, X_2, X_4, eps X_7, X_1, X_3, -X_5, eps X_6.
const SPAN_ORDER: [usize; 8] = [0, 2, 4, 7, 1, 3, 5, 6];

fn span_signs(eps: f64) -> [f64; 8] {
    [1.0, 1.0, 1.0, eps, 1.0, 1.0, -1.0, eps]
}

/// Hessian matrix in the signed spanning set above, with eps = sign(nu)
/// (taken +1 on the zero level), and its rank at singular-value threshold
/// 1e-8. Contract: the point must be critical.
pub fn hessian_at(p: &SpherePoint) -> Result<(DMatrix<f64>, usize)> {
    let gn = norm8(&grad_nu(p));
    if gn >= 1e-9 {
        return Err(G2Error::InvalidInput(format!(
            "hessian requested at a non-critical point (|grad| = {gn:.3e})"
        )));
    }
    let eps = if nu(p) < 0.0 { -1.0 } else { 1.0 };
    let signs = span_signs(eps);
    let full = hessian_projected_fields(p);
    let h = DMatrix::from_fn(8, 8, |i, j| {
        signs[i] * signs[j] * full[(SPAN_ORDER[i], SPAN_ORDER[j])]
    });
    let sv = h.clone().singular_values();
    let rank = sv.iter().filter(|&&s| s > 1e-8).count();
    Ok((h, rank))
}

/// How a point sits relative to the multi-moment map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Regular,
    CriticalNonzeroAssociative,
    CriticalZeroDegenerate,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Regular => "regular",
            Classification::CriticalNonzeroAssociative => "critical_nonzero_associative",
            Classification::CriticalZeroDegenerate => "critical_zero_degenerate",
        }
    }
}

/// Full classification record for one point.
#[derive(Debug, Clone)]
pub struct CriticalReport {
    pub point: SpherePoint,
    pub nu: f64,
    pub grad_norm: f64,
    pub classification: Classification,
    pub hessian: Option<DMatrix<f64>>,
    pub hessian_rank: Option<usize>,
}

/// Classifies a point: critical iff |grad| < 1e-9; critical points split by
/// nu != 0 (the torus orbit is an associative three-plane) versus nu = 0
/// (the generators are linearly dependent).
pub fn critical_classify(p: &SpherePoint) -> Result<CriticalReport> {
    let n = nu(p);
    let grad_norm = norm8(&grad_nu(p));
    if grad_norm >= 1e-9 {
        return Ok(CriticalReport {
            point: *p,
            nu: n,
            grad_norm,
            classification: Classification::Regular,
            hessian: None,
            hessian_rank: None,
        });
    }
    let us = TorusGenerators::all_u_at(p);
    let classification = if n.abs() > 1e-9 {
        let (structure, frame) = induced_structure_at(p)?;
        let c: [[f64; 7]; 3] = std::array::from_fn(|i| frame_coords(&frame, &us[i]));
        if !is_associative(&structure, &c[0], &c[1], &c[2])? {
            return Err(G2Error::InconsistentConnection(
                "critical orbit with nonzero nu is not associative".into(),
            ));
        }
        Classification::CriticalNonzeroAssociative
    } else {
        let m = SMatrix::<f64, 3, 8>::from_fn(|i, j| us[i][j]);
        if m.rank(1e-9) == 3 {
            return Err(G2Error::InconsistentConnection(
                "zero-level critical point with independent generators".into(),
            ));
        }
        Classification::CriticalZeroDegenerate
    };
    let (hessian, rank) = hessian_at(p)?;
    Ok(CriticalReport {
        point: *p,
        nu: n,
        grad_norm,
        classification,
        hessian: Some(hessian),
        hessian_rank: Some(rank),
    })
}

/// Moves p along the torus action to the slice x^1 = x^3 = x^5 = 0 with
/// x^0, x^2, x^4 >= 0, by rotating the phases of z^1, z^2, z^3 (the phase of
/// z^4 absorbs the matching rotation so nu is unchanged).
pub fn slice_representative(p: &SpherePoint) -> SpherePoint {
    let z = p.z();
    // exp(t1 U1 + t2 U2 + t3 U3) multiplies the z's by
    // (e^{i t1}, e^{i t2}, e^{i t3}, e^{i(t1 + t2 - t3)}).
    let unit = |w: Complex<f64>| {
        let n = w.norm();
        if n < 1e-300 {
            Complex::new(1.0, 0.0)
        } else {
            w / n
        }
    };
    let (u1, u2, u3) = (unit(z[0]), unit(z[1]), unit(z[2]));
    let r = [
        z[0] * u1.conj(),
        z[1] * u2.conj(),
        z[2] * u3.conj(),
        z[3] * u1 * u2 * u3,
    ];
    // invert the coordinate chart (z^1, z^2 conjugated)
    SpherePoint::project([
        r[0].re, -r[0].im, r[1].re, -r[1].im, r[2].re, r[2].im, r[3].re, r[3].im,
    ])
}

/// Lie derivative of a constant-coefficient form along the linear field
/// x -> M x: (L_U w)(e_a, ...) = sum over slots of w(..., M e_slot, ...).
pub fn lie_derivative_linear(form: &KForm, m: &SMatrix<f64, 8, 8>) -> KForm {
    assert_eq!(form.dim(), 8);
    let k = form.degree();
    let mut out = KForm::zero(8, k);
    // enumerate ordered index sets via recursion over 8 choose k
    let mut idx = vec![0usize; k];
    fn rec(
        form: &KForm,
        m: &SMatrix<f64, 8, 8>,
        idx: &mut Vec<usize>,
        depth: usize,
        start: usize,
        out: &mut KForm,
    ) {
        let k = idx.len();
        if depth == k {
            let mut total = 0.0;
            for slot in 0..k {
                let mut vectors: Vec<[f64; 8]> = Vec::with_capacity(k);
                for (pos, &i) in idx.iter().enumerate() {
                    let mut v = [0.0f64; 8];
                    if pos == slot {
                        for r in 0..8 {
                            v[r] = m[(r, i)];
                        }
                    } else {
                        v[i] = 1.0;
                    }
                    vectors.push(v);
                }
                let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
                total += form.evaluate(&refs);
            }
            if total != 0.0 {
                let ones: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
                out.add_term(&ones, total);
            }
            return;
        }
        for i in start..8 {
            idx[depth] = i;
            rec(form, m, idx, depth + 1, i + 1, out);
        }
    }
    rec(form, m, &mut idx, 0, 0, &mut out);
    out
}

/// Gradient ascent (or descent) on the sphere with backtracking, polishing a
/// seed towards a local extremum of nu. Returns the polished point.
pub fn polish_extremum(seed: &SpherePoint, maximize: bool) -> SpherePoint {
    let sign = if maximize { 1.0 } else { -1.0 };
    let mut p = *seed;
    let mut step = 0.5;
    for _ in 0..2000 {
        let g = grad_nu(&p);
        let gn = norm8(&g);
        if gn < 1e-13 {
            break;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let cand = SpherePoint::project(std::array::from_fn(|i| {
                p.x[i] + sign * step * g[i]
            }));
            // sufficient-increase condition, so the step stays near optimal
            // instead of crawling along with overshooting steps
            if sign * nu(&cand) >= sign * nu(&p) + 0.5 * step * gn * gn {
                p = cand;
                accepted = true;
                step = (step * 2.0).min(1.0);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    p
}

fn thread_count() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("G2LAB_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).map_or(avail, |n| n.min(avail)),
        Err(_) => avail,
    }
}

/// Monte Carlo search for the extremum of nu. The sample budget is split
/// over a fixed number of independent seeded streams, so the result does not
/// depend on how many worker threads execute them.
pub fn maximize_nu(seed: u64, samples: usize, maximize: bool) -> (SpherePoint, f64) {
    const STREAMS: usize = 64;
    let threads = thread_count().min(STREAMS);
    let sign = if maximize { 1.0 } else { -1.0 };
    let per = samples.div_ceil(STREAMS);
    let run_stream = move |stream: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream as u64));
        let mut best_p = SpherePoint::random(&mut rng);
        let mut best_v = sign * nu(&best_p);
        for _ in 1..per {
            let p = SpherePoint::random(&mut rng);
            let v = sign * nu(&p);
            if v > best_v {
                best_v = v;
                best_p = p;
            }
        }
        (best_p, best_v)
    };
    let best = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            handles.push(scope.spawn(move || {
                let mut acc: Option<(SpherePoint, f64)> = None;
                let mut stream = t;
                while stream < STREAMS {
                    let cand = run_stream(stream);
                    if acc.map_or(true, |a| cand.1 > a.1) {
                        acc = Some(cand);
                    }
                    stream += threads;
                }
                acc.expect("every worker owns at least one stream")
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
    });
    let polished = polish_extremum(&best.0, maximize);
    (polished, nu(&polished))
}

/// Random point on the three-sphere {z^i = z^j = 0} (i != j, 1-based pair
/// indices): supported on the remaining two complex pairs.
pub fn zero_sphere_point(i: usize, j: usize, rng: &mut impl Rng) -> SpherePoint {
    assert!(i != j && (1..=4).contains(&i) && (1..=4).contains(&j));
    let mut x = [0.0f64; 8];
    let mut any = false;
    for pair in 0..4 {
        if pair + 1 == i || pair + 1 == j {
            continue;
        }
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (-2.0 * u1.ln()).sqrt();
        x[2 * pair] = r * u2.cos();
        x[2 * pair + 1] = r * u2.sin();
        any = true;
    }
    assert!(any);
    SpherePoint::project(x)
}

/// The extremum point q = (1/2, 0, 1/2, 0, 1/2, 0, 0, eps/2).
pub fn extremum_point(eps: f64) -> SpherePoint {
    SpherePoint::new([0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, eps * 0.5]).unwrap()
}

/// The exact Hessian blocks at the maximum in the signed spanning set (the
/// minimum carries the negated matrix):
/// block-diagonal with H1 on the first four and H2 = -1_{4x4} on the last
/// four. H1 has -3/2 on the diagonal and 1/2 off it, which is the unique
/// symmetric circulant consistent with rank 4 and the spanning-set
/// dependency.
pub fn reference_hessian() -> DMatrix<f64> {
    DMatrix::from_fn(8, 8, |i, j| {
        if i < 4 && j < 4 {
            if i == j {
                -1.5
            } else {
                0.5
            }
        } else if i >= 4 && j >= 4 {
            -1.0
        } else {
            0.0
        }
    })
}
