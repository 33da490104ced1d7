//! Exterior algebra over small frames (dimension <= 8).
//!
//! Forms are sparse: a term is a canonically ordered index set, stored as a
//! bitmask over {1..dim}, with a first-order jet coefficient. The jet carries
//! the value of the coefficient together with its derivative along the flow
//! parameter `s`, so the exterior derivative can act on coefficients through
//! the `ds` channel without any symbolic machinery.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, Matrix3, Vector3};

/// Coefficients pruned below this magnitude by default.
pub const PRUNE_EPS: f64 = 1e-14;
/// Default tolerance for form equality.
pub const EQ_TOL: f64 = 1e-10;

/// A scalar together with its derivative in the flow parameter `s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub val: f64,
    pub dot: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet { val: 0.0, dot: 0.0 };

    pub fn new(val: f64, dot: f64) -> Self {
        Jet { val, dot }
    }

    pub fn constant(val: f64) -> Self {
        Jet { val, dot: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.val.is_finite() && self.dot.is_finite()
    }

    /// Multiplicative inverse as a first-order jet.
    pub fn inv(self) -> Jet {
        Jet::new(1.0 / self.val, -self.dot / (self.val * self.val))
    }

    fn magnitude(&self) -> f64 {
        self.val.abs().max(self.dot.abs())
    }
}

impl From<f64> for Jet {
    fn from(val: f64) -> Self {
        Jet::constant(val)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        Jet::new(self.val + rhs.val, self.dot + rhs.dot)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        self.val += rhs.val;
        self.dot += rhs.dot;
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet::new(self.val - rhs.val, self.dot - rhs.dot)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        Jet::new(self.val * rhs.val, self.val * rhs.dot + self.dot * rhs.val)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        Jet::new(self.val * rhs, self.dot * rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::new(-self.val, -self.dot)
    }
}

/// Sign of e^a wedge e^b for disjoint index masks: (-1)^inversions.
fn wedge_sign(a: u16, b: u16) -> f64 {
    let mut inversions = 0u32;
    let mut bits = b;
    while bits != 0 {
        let i = bits.trailing_zeros();
        // indices in `a` strictly above bit i must hop over it
        inversions += (a >> (i + 1)).count_ones();
        bits &= bits - 1;
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sparse exterior form of fixed degree over a frame of dimension <= 8.
#[derive(Debug, Clone)]
pub struct KForm {
    dim: u8,
    degree: u8,
    terms: BTreeMap<u16, Jet>,
}

impl KForm {
    pub fn zero(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1 && dim <= 8, "frame dimension must be 1..=8");
        assert!(degree <= dim, "degree exceeds dimension");
        KForm {
            dim: dim as u8,
            degree: degree as u8,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(dim: usize, c: impl Into<Jet>) -> Self {
        let mut f = KForm::zero(dim, 0);
        f.add_term(&[], c);
        f
    }

    /// Basis monomial e^{i1} ^ ... ^ e^{ik}; indices are 1-based and may come
    /// in any order, the sign is accounted for.
    pub fn basis(dim: usize, indices: &[usize]) -> Self {
        KForm::monomial(dim, indices, 1.0)
    }

    pub fn monomial(dim: usize, indices: &[usize], c: impl Into<Jet>) -> Self {
        let mut f = KForm::zero(dim, indices.len());
        f.add_term(indices, c);
        f
    }

    /// Adds c * e^{indices}, merging with an existing term.
    pub fn add_term(&mut self, indices: &[usize], c: impl Into<Jet>) {
        let mut mask: u16 = 0;
        let mut sign = 1.0;
        for &i in indices {
            assert!(i >= 1 && i <= self.dim as usize, "index out of range");
            let bit = 1u16 << (i - 1);
            assert!(mask & bit == 0, "repeated index in basis monomial");
            sign *= wedge_sign(mask, bit);
            mask |= bit;
        }
        assert_eq!(indices.len(), self.degree as usize, "degree mismatch");
        let c = c.into() * sign;
        let entry = self.terms.entry(mask).or_insert(Jet::ZERO);
        *entry += c;
        if entry.magnitude() < PRUNE_EPS {
            self.terms.remove(&mask);
        }
    }

    fn insert_mask(&mut self, mask: u16, c: Jet) {
        let entry = self.terms.entry(mask).or_insert(Jet::ZERO);
        *entry += c;
        if entry.magnitude() < PRUNE_EPS {
            self.terms.remove(&mask);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u16, Jet)> + '_ {
        self.terms.iter().map(|(&m, &c)| (m, c))
    }

    /// Coefficient of the canonically ordered monomial e^{indices}.
    pub fn coefficient(&self, indices: &[usize]) -> Jet {
        let mut mask: u16 = 0;
        let mut sign = 1.0;
        for &i in indices {
            let bit = 1u16 << (i - 1);
            if mask & bit != 0 {
                return Jet::ZERO;
            }
            sign *= wedge_sign(mask, bit);
            mask |= bit;
        }
        self.terms.get(&mask).copied().unwrap_or(Jet::ZERO) * sign
    }

    pub fn prune(&mut self, threshold: f64) {
        self.terms.retain(|_, c| c.magnitude() >= threshold);
    }

    pub fn scale(&self, c: impl Into<Jet>) -> KForm {
        let c = c.into();
        let mut out = KForm::zero(self.dim(), self.degree());
        for (&m, &v) in &self.terms {
            out.insert_mask(m, v * c);
        }
        out
    }

    pub fn add(&self, other: &KForm) -> KForm {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        assert_eq!(self.degree, other.degree, "degree mismatch");
        let mut out = self.clone();
        for (&m, &c) in &other.terms {
            out.insert_mask(m, c);
        }
        out
    }

    pub fn sub(&self, other: &KForm) -> KForm {
        self.add(&other.scale(-1.0))
    }

    /// Termwise comparison of coefficient values.
    pub fn approx_eq(&self, other: &KForm, tol: f64) -> bool {
        if self.dim != other.dim || self.degree != other.degree {
            return false;
        }
        self.max_abs_diff(other) <= tol
    }

    pub fn max_abs_diff(&self, other: &KForm) -> f64 {
        let mut max = 0.0f64;
        for (&m, &c) in &self.terms {
            let d = (c.val - other.terms.get(&m).map_or(0.0, |x| x.val)).abs();
            max = max.max(d);
        }
        for (&m, &c) in &other.terms {
            if !self.terms.contains_key(&m) {
                max = max.max(c.val.abs());
            }
        }
        max
    }

    /// Largest coefficient magnitude (value channel).
    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0f64, |m, c| m.max(c.val.abs()))
    }

    /// Exterior product with canonical sign bookkeeping.
    pub fn wedge(&self, other: &KForm) -> KForm {
        assert_eq!(self.dim, other.dim, "dimension mismatch in wedge");
        let degree = self.degree as usize + other.degree as usize;
        assert!(degree <= self.dim as usize, "wedge degree exceeds dimension");
        let mut out = KForm::zero(self.dim(), degree);
        for (&ma, &ca) in &self.terms {
            for (&mb, &cb) in &other.terms {
                if ma & mb != 0 {
                    continue;
                }
                let sign = wedge_sign(ma, mb);
                out.insert_mask(ma | mb, ca * cb * sign);
            }
        }
        out
    }

    /// Interior product v -| a for a vector expressed in the dual frame basis.
    pub fn interior(&self, v: &[f64]) -> KForm {
        assert_eq!(v.len(), self.dim as usize, "dimension mismatch in interior");
        if self.degree == 0 {
            return KForm::zero(self.dim(), 0);
        }
        let mut out = KForm::zero(self.dim(), self.degree as usize - 1);
        for (&m, &c) in &self.terms {
            for (i, &vi) in v.iter().enumerate() {
                let bit = 1u16 << i;
                if m & bit == 0 || vi == 0.0 {
                    continue;
                }
                // sign (-1)^{# indices below i in m}
                let below = (m & (bit - 1)).count_ones();
                let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
                out.insert_mask(m & !bit, c * (vi * sign));
            }
        }
        out
    }

    /// Full contraction of a degree-k form against k vectors.
    pub fn evaluate(&self, vectors: &[&[f64]]) -> f64 {
        assert_eq!(vectors.len(), self.degree as usize);
        let mut f = self.clone();
        for v in vectors {
            f = f.interior(v);
        }
        f.coefficient(&[]).val
    }

    /// Exterior derivative against the frame's generator differentials,
    /// with the coefficient jets feeding the `ds` channel when present.
    pub fn d(&self, frame: &FrameAlgebra) -> KForm {
        assert_eq!(self.dim as usize, frame.dim, "dimension mismatch in d");
        assert!((self.degree as usize) < frame.dim, "top-degree d is zero");
        let mut out = KForm::zero(self.dim(), self.degree as usize + 1);
        for (&m, &c) in &self.terms {
            // ds channel: dc = c' ds
            if let Some(si) = frame.s_index {
                let bit = 1u16 << (si - 1);
                if m & bit == 0 && c.dot != 0.0 {
                    let sign = wedge_sign(bit, m);
                    out.insert_mask(m | bit, Jet::constant(c.dot * sign));
                }
            }
            // Leibniz over generators
            let mut rest = m;
            let mut pos = 0u32;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize; // 0-based generator
                let bit = 1u16 << i;
                let dgen = &frame.d_gen[i];
                if !dgen.is_zero() {
                    let leibniz = if pos % 2 == 0 { 1.0 } else { -1.0 };
                    let stripped = m & !bit;
                    for (&dm, &dc) in &dgen.terms {
                        if dm & stripped != 0 {
                            continue;
                        }
                        let sign = wedge_sign(dm, stripped) * leibniz;
                        out.insert_mask(dm | stripped, c * dc * sign);
                    }
                }
                pos += 1;
                rest &= rest - 1;
            }
        }
        out
    }

    /// Hodge star for the frame's metric and orientation.
    ///
    /// Defined by b ^ *a = <b, a> vol for all b of the same degree, with
    /// vol = orientation * sqrt(det g) e^{1..n}.
    pub fn hodge(&self, frame: &FrameAlgebra) -> KForm {
        assert_eq!(self.dim as usize, frame.dim, "dimension mismatch in hodge");
        let n = frame.dim;
        let k = self.degree as usize;
        let full: u16 = ((1u32 << n) - 1) as u16;
        let sqrt_det = frame.det_metric().sqrt();
        let mut out = KForm::zero(self.dim(), n - k);
        for (&mi, &c) in &self.terms {
            let rows = mask_indices(mi);
            // iterate over all complement-degree candidates via all masks of size k
            for mj in masks_of_size(n, k) {
                let cols = mask_indices(mj);
                let g = frame.inverse_minor(&rows, &cols);
                if g == 0.0 {
                    continue;
                }
                let comp = full & !mj;
                let sign = wedge_sign(mj, comp);
                out.insert_mask(comp, c * (g * sign * sqrt_det * frame.orientation));
            }
        }
        out
    }

    /// Metric inner product on forms, <a, b> = sum a_I b_J det(g^{-1}[I,J]).
    pub fn inner(&self, other: &KForm, frame: &FrameAlgebra) -> f64 {
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.dim, other.dim);
        let mut acc = 0.0;
        for (&mi, &ci) in &self.terms {
            let rows = mask_indices(mi);
            for (&mj, &cj) in &other.terms {
                let cols = mask_indices(mj);
                acc += ci.val * cj.val * frame.inverse_minor(&rows, &cols);
            }
        }
        acc
    }

    pub fn norm(&self, frame: &FrameAlgebra) -> f64 {
        self.inner(self, frame).max(0.0).sqrt()
    }

    /// Transplants the form onto a larger frame, sending generator i to
    /// map[i-1]. The map must be strictly increasing so signs are unchanged.
    pub fn remap(&self, new_dim: usize, map: &[usize]) -> KForm {
        assert_eq!(map.len(), self.dim as usize);
        assert!(map.windows(2).all(|w| w[0] < w[1]), "map must be increasing");
        assert!(*map.last().unwrap() <= new_dim);
        let mut out = KForm::zero(new_dim, self.degree());
        for (&m, &c) in &self.terms {
            let mut nm: u16 = 0;
            let mut rest = m;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                nm |= 1u16 << (map[i] - 1);
                rest &= rest - 1;
            }
            out.insert_mask(nm, c);
        }
        out
    }

    /// Drops the derivative channel of every coefficient.
    pub fn value_part(&self) -> KForm {
        let mut out = KForm::zero(self.dim(), self.degree());
        for (&m, &c) in &self.terms {
            out.insert_mask(m, Jet::constant(c.val));
        }
        out
    }
}

impl fmt::Display for KForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (&m, &c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{:.6}*e{:?}", c.val, mask_indices(m))?;
        }
        Ok(())
    }
}

fn mask_indices(mask: u16) -> Vec<usize> {
    let mut out = Vec::new();
    let mut m = mask;
    while m != 0 {
        out.push(m.trailing_zeros() as usize + 1);
        m &= m - 1;
    }
    out
}

fn masks_of_size(n: usize, k: usize) -> Vec<u16> {
    let mut out = Vec::new();
    for m in 0u16..(1 << n) {
        if m.count_ones() as usize == k {
            out.push(m);
        }
    }
    out
}

/// A coframe with generator differentials, a metric on generators, and an
/// orientation. Defines d, the Hodge star, and the volume form.
#[derive(Debug, Clone)]
pub struct FrameAlgebra {
    pub dim: usize,
    pub d_gen: Vec<KForm>,
    pub metric: DMatrix<f64>,
    pub orientation: f64,
    /// 1-based index of the `ds` generator, if this is an s-extended frame.
    pub s_index: Option<usize>,
    inverse_metric: DMatrix<f64>,
}

impl FrameAlgebra {
    pub fn new(
        dim: usize,
        d_gen: Vec<KForm>,
        metric: DMatrix<f64>,
        orientation: f64,
        s_index: Option<usize>,
    ) -> Self {
        assert_eq!(d_gen.len(), dim);
        assert_eq!(metric.nrows(), dim);
        assert_eq!(metric.ncols(), dim);
        let sym = (&metric - metric.transpose()).abs().max();
        assert!(sym < 1e-10, "metric must be symmetric");
        let chol = metric
            .clone()
            .cholesky()
            .expect("metric must be positive-definite");
        let inverse_metric = chol.inverse();
        FrameAlgebra {
            dim,
            d_gen,
            metric,
            orientation,
            s_index,
            inverse_metric,
        }
    }

    /// Orthonormal frame with all generator differentials zero.
    pub fn orthonormal(dim: usize) -> Self {
        let d_gen = (0..dim).map(|_| KForm::zero(dim, 2)).collect();
        FrameAlgebra::new(dim, d_gen, DMatrix::identity(dim, dim), 1.0, None)
    }

    /// Three-dimensional frame in diagonal Bianchi normal form,
    /// de^i = lambda_i e^{jk} for (ijk) cyclic.
    pub fn bianchi(lambda: [f64; 3]) -> Self {
        let mut d_gen = Vec::with_capacity(3);
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let mut f = KForm::zero(3, 2);
            if lambda[i] != 0.0 {
                f.add_term(&[j + 1, k + 1], lambda[i]);
            }
            d_gen.push(f);
        }
        FrameAlgebra::new(3, d_gen, DMatrix::identity(3, 3), 1.0, None)
    }

    pub fn det_metric(&self) -> f64 {
        self.metric.determinant()
    }

    /// Determinant of the inverse-metric minor with the given rows/columns
    /// (1-based generator indices).
    fn inverse_minor(&self, rows: &[usize], cols: &[usize]) -> f64 {
        debug_assert_eq!(rows.len(), cols.len());
        match rows.len() {
            0 => 1.0,
            1 => self.inverse_metric[(rows[0] - 1, cols[0] - 1)],
            _ => {
                let k = rows.len();
                let mut m = DMatrix::zeros(k, k);
                for (a, &r) in rows.iter().enumerate() {
                    for (b, &c) in cols.iter().enumerate() {
                        m[(a, b)] = self.inverse_metric[(r - 1, c - 1)];
                    }
                }
                m.determinant()
            }
        }
    }

    /// Volume form: orientation * sqrt(det g) e^{1..n}.
    pub fn volume(&self) -> KForm {
        let idx: Vec<usize> = (1..=self.dim).collect();
        KForm::monomial(
            self.dim,
            &idx,
            self.orientation * self.det_metric().sqrt(),
        )
    }

    /// Max norm of d(d e^i) over all generators.
    pub fn d_squared_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for dg in &self.d_gen {
            if self.dim < 3 || dg.is_zero() {
                continue;
            }
            worst = worst.max(dg.d(self).max_abs());
        }
        worst
    }
}

/// An R^3-valued form: exactly three components of equal degree and dim.
#[derive(Debug, Clone)]
pub struct FormTriple {
    pub components: [KForm; 3],
}

impl FormTriple {
    pub fn new(components: [KForm; 3]) -> Self {
        let (d, k) = (components[0].dim(), components[0].degree());
        assert!(
            components.iter().all(|f| f.dim() == d && f.degree() == k),
            "triple components must share degree and dimension"
        );
        FormTriple { components }
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        FormTriple::new([
            KForm::zero(dim, degree),
            KForm::zero(dim, degree),
            KForm::zero(dim, degree),
        ])
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn degree(&self) -> usize {
        self.components[0].degree()
    }

    /// Componentwise matrix action: (M gamma)_i = sum_a M_ia gamma_a.
    pub fn apply(&self, m: &Matrix3<f64>) -> FormTriple {
        let mk = |i: usize| {
            let mut f = self.components[0].scale(m[(i, 0)]);
            f = f.add(&self.components[1].scale(m[(i, 1)]));
            f.add(&self.components[2].scale(m[(i, 2)]))
        };
        FormTriple::new([mk(0), mk(1), mk(2)])
    }

    /// (Hd gamma)_i = gamma_j ^ gamma_k for (ijk) cyclic.
    pub fn wedge_square(&self) -> FormTriple {
        let c = &self.components;
        FormTriple::new([c[1].wedge(&c[2]), c[2].wedge(&c[0]), c[0].wedge(&c[1])])
    }

    /// (gamma barwedge delta)_i = gamma_j ^ delta_k for (ijk) cyclic.
    pub fn barwedge(&self, other: &FormTriple) -> FormTriple {
        let (a, b) = (&self.components, &other.components);
        FormTriple::new([a[1].wedge(&b[2]), a[2].wedge(&b[0]), a[0].wedge(&b[1])])
    }

    /// gamma_1 ^ gamma_2 ^ gamma_3.
    pub fn volume(&self) -> KForm {
        self.components[0]
            .wedge(&self.components[1])
            .wedge(&self.components[2])
    }

    /// sum_i v_i gamma_i.
    pub fn contract(&self, v: &Vector3<f64>) -> KForm {
        self.components[0]
            .scale(v[0])
            .add(&self.components[1].scale(v[1]))
            .add(&self.components[2].scale(v[2]))
    }

    /// sum_i gamma_i ^ delta_i.
    pub fn dot_wedge(&self, other: &FormTriple) -> KForm {
        let mut acc = self.components[0].wedge(&other.components[0]);
        acc = acc.add(&self.components[1].wedge(&other.components[1]));
        acc.add(&self.components[2].wedge(&other.components[2]))
    }

    pub fn add(&self, other: &FormTriple) -> FormTriple {
        FormTriple::new([
            self.components[0].add(&other.components[0]),
            self.components[1].add(&other.components[1]),
            self.components[2].add(&other.components[2]),
        ])
    }

    pub fn sub(&self, other: &FormTriple) -> FormTriple {
        FormTriple::new([
            self.components[0].sub(&other.components[0]),
            self.components[1].sub(&other.components[1]),
            self.components[2].sub(&other.components[2]),
        ])
    }

    pub fn scale(&self, c: impl Into<Jet> + Copy) -> FormTriple {
        FormTriple::new([
            self.components[0].scale(c),
            self.components[1].scale(c),
            self.components[2].scale(c),
        ])
    }

    pub fn d(&self, frame: &FrameAlgebra) -> FormTriple {
        FormTriple::new([
            self.components[0].d(frame),
            self.components[1].d(frame),
            self.components[2].d(frame),
        ])
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .fold(0.0f64, |m, c| m.max(c.max_abs()))
    }

    pub fn max_abs_diff(&self, other: &FormTriple) -> f64 {
        self.components
            .iter()
            .zip(other.components.iter())
            .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn approx_eq(&self, other: &FormTriple, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }
}

/// Coordinate coframe triple (e^1, e^2, e^3) on a 3-frame.
pub fn coframe3() -> FormTriple {
    FormTriple::new([
        KForm::basis(3, &[1]),
        KForm::basis(3, &[2]),
        KForm::basis(3, &[3]),
    ])
}

/// (X^natural)_i = X_jk - X_kj for (ijk) cyclic; zero iff X symmetric.
pub fn natural_flat(x: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        x[(1, 2)] - x[(2, 1)],
        x[(2, 0)] - x[(0, 2)],
        x[(0, 1)] - x[(1, 0)],
    )
}

/// Adjugate: H * adj(H) = det(H) * Id.
pub fn adjugate(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    // adj = cofactor transpose
    Matrix3::from_fn(|i, j| c(j, i))
}
