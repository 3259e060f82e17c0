//! Dense complex linear algebra over labeled tensor-product spaces.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::registers::SpaceLayout;

pub type Amplitude = Complex64;

/// Numerical tolerance for normalization, isometry and probability checks.
pub const TOL: f64 = 1e-12;

/// Tolerance for orthonormality of user-supplied outcome vectors.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

const ZERO: Amplitude = Amplitude::new(0.0, 0.0);
const ONE: Amplitude = Amplitude::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: SpaceLayout,
    amps: Vec<Amplitude>,
}

impl StateVector {
    pub fn new(layout: SpaceLayout, amps: Vec<Amplitude>) -> Result<Self> {
        if amps.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                actual: amps.len(),
            });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { layout, amps })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn amps(&self) -> &[Amplitude] {
        &self.amps
    }

    pub fn into_amps(self) -> Vec<Amplitude> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= TOL
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: self.norm() })
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self.scaled(Amplitude::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, factor: Amplitude) -> Self {
        Self {
            layout: self.layout.clone(),
            amps: self.amps.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn add(&self, other: &StateVector) -> Result<Self> {
        check_same_layout(&self.layout, &other.layout)?;
        Ok(Self {
            layout: self.layout.clone(),
            amps: self.amps.iter().zip(&other.amps).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn zero(layout: &SpaceLayout) -> Self {
        Self {
            layout: layout.clone(),
            amps: vec![ZERO; layout.dim()],
        }
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_deviation(&self, other: &StateVector) -> Result<f64> {
        check_same_layout(&self.layout, &other.layout)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Re-express the state in a layout holding the same registers in another order.
    pub fn reorder(&self, target: &SpaceLayout) -> Result<Self> {
        if !self.layout.is_permutation_of(target) {
            return Err(Error::LayoutMismatch(format!(
                "{} is not a permutation of {}",
                target, self.layout
            )));
        }
        let perm: Vec<usize> = target
            .names()
            .map(|n| self.layout.position(n).expect("checked permutation"))
            .collect();
        let mut amps = vec![ZERO; self.amps.len()];
        let mut source = vec![0; perm.len()];
        for (i, slot) in amps.iter_mut().enumerate() {
            let digits = target.digits(i);
            for (k, &p) in perm.iter().enumerate() {
                source[p] = digits[k];
            }
            *slot = self.amps[self.layout.index_of_digits(&source)];
        }
        Ok(Self {
            layout: target.clone(),
            amps,
        })
    }
}

/// A linear map between two layouts, stored row-major (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    in_layout: SpaceLayout,
    out_layout: SpaceLayout,
    matrix: Vec<Amplitude>,
}

impl LinearMap {
    pub fn new(in_layout: SpaceLayout, out_layout: SpaceLayout, matrix: Vec<Amplitude>) -> Result<Self> {
        let expected = in_layout.dim() * out_layout.dim();
        if matrix.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: matrix.len(),
            });
        }
        if matrix.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            in_layout,
            out_layout,
            matrix,
        })
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let d = layout.dim();
        let mut matrix = vec![ZERO; d * d];
        for i in 0..d {
            matrix[i * d + i] = ONE;
        }
        Self {
            in_layout: layout.clone(),
            out_layout: layout.clone(),
            matrix,
        }
    }

    pub fn in_layout(&self) -> &SpaceLayout {
        &self.in_layout
    }

    pub fn out_layout(&self) -> &SpaceLayout {
        &self.out_layout
    }

    pub fn rows(&self) -> usize {
        self.out_layout.dim()
    }

    pub fn cols(&self) -> usize {
        self.in_layout.dim()
    }

    pub fn entry(&self, row: usize, col: usize) -> Amplitude {
        self.matrix[row * self.cols() + col]
    }

    pub fn matrix(&self) -> &[Amplitude] {
        &self.matrix
    }

    pub fn adjoint(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut matrix = vec![ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                matrix[j * r + i] = self.matrix[i * c + j].conj();
            }
        }
        Self {
            in_layout: self.out_layout.clone(),
            out_layout: self.in_layout.clone(),
            matrix,
        }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &LinearMap) -> Result<Self> {
        check_same_layout(&self.in_layout, &inner.out_layout)?;
        let (r, k, c) = (self.rows(), self.cols(), inner.cols());
        let mut matrix = vec![ZERO; r * c];
        for i in 0..r {
            for m in 0..k {
                let a = self.matrix[i * k + m];
                if a == ZERO {
                    continue;
                }
                for j in 0..c {
                    matrix[i * c + j] += a * inner.matrix[m * c + j];
                }
            }
        }
        Ok(Self {
            in_layout: inner.in_layout.clone(),
            out_layout: self.out_layout.clone(),
            matrix,
        })
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_deviation(&self, other: &LinearMap) -> Result<f64> {
        check_same_layout(&self.in_layout, &other.in_layout)?;
        check_same_layout(&self.out_layout, &other.out_layout)?;
        Ok(self
            .matrix
            .iter()
            .zip(&other.matrix)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn is_square(&self) -> bool {
        self.in_layout == self.out_layout
    }
}

fn check_same_layout(a: &SpaceLayout, b: &SpaceLayout) -> Result<()> {
    if a != b {
        return Err(Error::LayoutMismatch(format!("{a} vs {b}")));
    }
    Ok(())
}

/// Kronecker product; `a`'s registers come first.
pub fn tensor(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    let layout = a.layout.concat(&b.layout)?;
    let mut amps = Vec::with_capacity(layout.dim());
    for x in &a.amps {
        for y in &b.amps {
            amps.push(x * y);
        }
    }
    Ok(StateVector { layout, amps })
}

pub fn apply(m: &LinearMap, s: &StateVector) -> Result<StateVector> {
    if m.in_layout != s.layout {
        return Err(Error::LayoutMismatch(format!(
            "map expects {} but state is on {}",
            m.in_layout, s.layout
        )));
    }
    let c = m.cols();
    let amps = (0..m.rows())
        .map(|i| {
            m.matrix[i * c..(i + 1) * c]
                .iter()
                .zip(&s.amps)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok(StateVector {
        layout: m.out_layout.clone(),
        amps,
    })
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<Amplitude> {
    check_same_layout(&a.layout, &b.layout)?;
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}

/// Check that `vs` are orthonormal within `tol`; reports the first offending pair.
pub fn check_orthonormal(vs: &[StateVector], tol: f64) -> Result<()> {
    for i in 0..vs.len() {
        for j in i..vs.len() {
            let ip = inner(&vs[i], &vs[j])?;
            let target = if i == j { ONE } else { ZERO };
            if (ip - target).norm() > tol {
                return Err(Error::NotOrthonormal {
                    i,
                    j,
                    inner_re: ip.re,
                    inner_im: ip.im,
                });
            }
        }
    }
    Ok(())
}

/// Orthogonal projector onto the span of orthonormal `vs`.
pub fn projector(vs: &[StateVector]) -> Result<LinearMap> {
    let first = vs
        .first()
        .ok_or_else(|| Error::Empty("projector needs at least one vector".into()))?;
    check_orthonormal(vs, ORTHONORMAL_TOL)?;
    let layout = first.layout.clone();
    let d = layout.dim();
    let mut matrix = vec![ZERO; d * d];
    for v in vs {
        for i in 0..d {
            if v.amps[i] == ZERO {
                continue;
            }
            for j in 0..d {
                matrix[i * d + j] += v.amps[i] * v.amps[j].conj();
            }
        }
    }
    Ok(LinearMap {
        in_layout: layout.clone(),
        out_layout: layout,
        matrix,
    })
}

/// Index bookkeeping for acting on a subset of registers of a larger layout.
struct Embedding {
    /// Offsets in the full index of each local basis element.
    offsets: Vec<usize>,
    /// Full indices whose target digits are all zero.
    bases: Vec<usize>,
}

impl Embedding {
    fn new(local: &SpaceLayout, full: &SpaceLayout) -> Result<Self> {
        for r in local.registers() {
            let fr = full.register(r.name())?;
            if fr != r {
                return Err(Error::LayoutMismatch(format!(
                    "register `{}` differs between local and full layout",
                    r.name()
                )));
            }
        }
        let strides = full.strides();
        let positions: Vec<usize> = local
            .names()
            .map(|n| full.position(n).expect("checked above"))
            .collect();
        let offsets = (0..local.dim())
            .map(|l| {
                local
                    .digits(l)
                    .iter()
                    .zip(&positions)
                    .map(|(&d, &p)| d * strides[p])
                    .sum()
            })
            .collect();
        let bases = (0..full.dim())
            .filter(|&i| {
                let digits = full.digits(i);
                positions.iter().all(|&p| digits[p] == 0)
            })
            .collect();
        Ok(Self { offsets, bases })
    }
}

/// Lift a square map on `targets` to `full`, acting as identity elsewhere.
pub fn embed(m: &LinearMap, targets: &[&str], full: &SpaceLayout) -> Result<LinearMap> {
    if !m.is_square() {
        return Err(Error::LayoutMismatch("only square maps can be embedded".into()));
    }
    let local_names: Vec<&str> = m.in_layout.names().collect();
    if local_names != targets {
        return Err(Error::LayoutMismatch(format!(
            "map is defined on {} but targets are {:?}",
            m.in_layout, targets
        )));
    }
    let emb = Embedding::new(&m.in_layout, full)?;
    let d = full.dim();
    let k = m.cols();
    let mut matrix = vec![ZERO; d * d];
    for &base in &emb.bases {
        for r in 0..k {
            for c in 0..k {
                matrix[(base + emb.offsets[r]) * d + base + emb.offsets[c]] = m.matrix[r * k + c];
            }
        }
    }
    Ok(LinearMap {
        in_layout: full.clone(),
        out_layout: full.clone(),
        matrix,
    })
}

/// Apply a square map on a subset of registers without materializing the embedding.
pub fn apply_local(m: &LinearMap, s: &StateVector) -> Result<StateVector> {
    if !m.is_square() {
        return Err(Error::LayoutMismatch("only square maps act locally".into()));
    }
    let emb = Embedding::new(&m.in_layout, &s.layout)?;
    let k = m.cols();
    let mut out = vec![ZERO; s.amps.len()];
    let mut local = vec![ZERO; k];
    for &base in &emb.bases {
        for (c, slot) in local.iter_mut().enumerate() {
            *slot = s.amps[base + emb.offsets[c]];
        }
        for r in 0..k {
            out[base + emb.offsets[r]] = m.matrix[r * k..(r + 1) * k]
                .iter()
                .zip(&local)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    Ok(StateVector {
        layout: s.layout.clone(),
        amps: out,
    })
}

/// `⟨s| m |s⟩` for a square map acting on a subset of `s`'s registers.
pub fn expectation(m: &LinearMap, s: &StateVector) -> Result<Amplitude> {
    inner(s, &apply_local(m, s)?)
}

/// Max-entry deviation of `M†M` from the identity.
pub fn isometry_defect(m: &LinearMap) -> f64 {
    let (r, c) = (m.rows(), m.cols());
    let mut worst: f64 = 0.0;
    for i in 0..c {
        for j in 0..c {
            let mut acc = ZERO;
            for k in 0..r {
                acc += m.matrix[k * c + i].conj() * m.matrix[k * c + j];
            }
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((acc - target).norm());
        }
    }
    worst
}

pub fn is_isometry(m: &LinearMap) -> bool {
    isometry_defect(m) <= TOL
}
