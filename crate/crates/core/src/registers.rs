//! Named registers and the layout of the composite Hilbert space.
//!
//! A [`SpaceLayout`] is an ordered list of registers; the tensor order is the
//! order in which registers were added. Basis index arithmetic is row-major:
//! the last register varies fastest.

use std::fmt;

use crate::error::{Error, Result};
use crate::qcore::{Amplitude, StateVector};

/// Tolerance on the norm of a `superpose` input before it is rejected.
pub const SUPERPOSE_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Register {
    name: String,
    labels: Vec<String>,
}

impl Register {
    pub fn new<S: Into<String>>(name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let name = name.into();
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if name.is_empty() {
            return Err(Error::InvalidRegister {
                name,
                reason: "empty name".into(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidRegister {
                name,
                reason: "dimension must be at least 1".into(),
            });
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidRegister {
                    name,
                    reason: format!("label `{l}` repeated"),
                });
            }
        }
        Ok(Self { name, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel {
                register: self.name.clone(),
                label: label.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SpaceLayout {
    registers: Vec<Register>,
}

impl SpaceLayout {
    pub fn new(registers: Vec<Register>) -> Result<Self> {
        for (i, r) in registers.iter().enumerate() {
            if registers[..i].iter().any(|o| o.name == r.name) {
                return Err(Error::DuplicateRegister(r.name.clone()));
            }
        }
        Ok(Self { registers })
    }

    /// The trivial one-dimensional space with no registers.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.registers.iter().map(Register::dim).product()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.registers.iter().map(|r| r.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.registers.iter().position(|r| r.name == name)
    }

    pub fn register(&self, name: &str) -> Result<&Register> {
        self.registers
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegister(name.to_string()))
    }

    /// Stride of each register in the flattened index.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.registers.len()];
        for k in (0..self.registers.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.registers[k + 1].dim();
        }
        strides
    }

    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.registers.len()];
        for k in (0..self.registers.len()).rev() {
            let d = self.registers[k].dim();
            digits[k] = index % d;
            index /= d;
        }
        digits
    }

    pub fn index_of_digits(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.registers)
            .fold(0, |acc, (&d, r)| acc * r.dim() + d)
    }

    /// Flattened index of the product basis element named by `assignment`.
    pub fn index_of(&self, assignment: &[(&str, &str)]) -> Result<usize> {
        let mut digits = vec![None; self.registers.len()];
        for &(name, label) in assignment {
            let k = self
                .position(name)
                .ok_or_else(|| Error::UnknownRegister(name.to_string()))?;
            if digits[k].is_some() {
                return Err(Error::OverlappingTargets(name.to_string()));
            }
            digits[k] = Some(self.registers[k].index_of(label)?);
        }
        let digits = digits
            .into_iter()
            .zip(&self.registers)
            .map(|(d, r)| d.ok_or_else(|| Error::IncompleteAssignment(r.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.index_of_digits(&digits))
    }

    /// Labels of the product basis element at `index`, in layout order.
    pub fn labels_at(&self, index: usize) -> Vec<&str> {
        self.digits(index)
            .into_iter()
            .zip(&self.registers)
            .map(|(d, r)| r.label(d))
            .collect()
    }

    /// Concatenation; `self`'s registers come first.
    pub fn concat(&self, other: &SpaceLayout) -> Result<SpaceLayout> {
        let mut registers = self.registers.clone();
        registers.extend(other.registers.iter().cloned());
        SpaceLayout::new(registers)
    }

    pub fn with(&self, register: Register) -> Result<SpaceLayout> {
        let mut registers = self.registers.clone();
        registers.push(register);
        SpaceLayout::new(registers)
    }

    /// Sub-layout holding the named registers in the given order.
    pub fn select(&self, names: &[&str]) -> Result<SpaceLayout> {
        let registers = names
            .iter()
            .map(|n| self.register(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        SpaceLayout::new(registers)
    }

    pub fn without(&self, names: &[&str]) -> SpaceLayout {
        SpaceLayout {
            registers: self
                .registers
                .iter()
                .filter(|r| !names.contains(&r.name.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Same registers, possibly in a different order.
    pub fn is_permutation_of(&self, other: &SpaceLayout) -> bool {
        self.len() == other.len()
            && self
                .registers
                .iter()
                .all(|r| other.register(&r.name).map(|o| o == r).unwrap_or(false))
    }
}

impl fmt::Display for SpaceLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.registers.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", r.name)?;
        }
        write!(f, ")")
    }
}

/// One-hot state on the product basis element named by `assignment`.
pub fn basis_state(layout: &SpaceLayout, assignment: &[(&str, &str)]) -> Result<StateVector> {
    let index = layout.index_of(assignment)?;
    let mut amps = vec![Amplitude::new(0.0, 0.0); layout.dim()];
    amps[index] = Amplitude::new(1.0, 0.0);
    StateVector::new(layout.clone(), amps)
}

/// Weighted sum of basis states.
///
/// The sum must already be normalized to within [`SUPERPOSE_NORM_TOL`]; it is
/// then renormalized exactly. Larger deviations are rejected rather than
/// silently fixed.
pub fn superpose(layout: &SpaceLayout, terms: &[(Amplitude, Vec<(&str, &str)>)]) -> Result<StateVector> {
    if terms.is_empty() {
        return Err(Error::Empty("superposition needs at least one term".into()));
    }
    let mut amps = vec![Amplitude::new(0.0, 0.0); layout.dim()];
    for (amp, assignment) in terms {
        if !(amp.re.is_finite() && amp.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        amps[layout.index_of(assignment)?] += amp;
    }
    let state = StateVector::new(layout.clone(), amps)?;
    let norm = state.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if (norm - 1.0).abs() > SUPERPOSE_NORM_TOL {
        return Err(Error::NotNormalized { norm });
    }
    state.normalized()
}

/// Append a fresh register prepared in the basis state `initial`.
pub fn extend(state: &StateVector, register: Register, initial: &str) -> Result<(SpaceLayout, StateVector)> {
    if state.layout().contains(register.name()) {
        return Err(Error::DuplicateRegister(register.name().to_string()));
    }
    let single = SpaceLayout::new(vec![register])?;
    let name = single.registers()[0].name().to_string();
    let fresh = basis_state(&single, &[(name.as_str(), initial)])?;
    let extended = crate::qcore::tensor(state, &fresh)?;
    Ok((extended.layout().clone(), extended))
}
