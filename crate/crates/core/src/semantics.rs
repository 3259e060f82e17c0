//! The two measurement calculi.
//!
//! *Collapse*: Born probabilities followed by projection onto the observed
//! outcome (conditionalization). *Relative state*: a measurement is an
//! isometry correlating the measured registers with a fresh memory register;
//! probabilities are read off memory projectors on the uncollapsed state.

use crate::error::{Error, Result};
use crate::qcore::{
    apply, apply_local, check_orthonormal, embed, expectation, inner, projector, tensor, Amplitude,
    LinearMap, StateVector, ORTHONORMAL_TOL, TOL,
};
use crate::registers::{basis_state, Register, SpaceLayout};

/// Label reserved for the pre-measurement memory state of a unitary dilation.
pub const READY: &str = "ready";

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    label: String,
    vectors: Vec<StateVector>,
}

impl Outcome {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Orthonormal basis of the outcome subspace.
    pub fn vectors(&self) -> &[StateVector] {
        &self.vectors
    }

    pub fn projector(&self) -> LinearMap {
        projector(&self.vectors).expect("validated at construction")
    }
}

/// A projective measurement by `agent` on an ordered set of registers.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    agent: String,
    space: SpaceLayout,
    outcomes: Vec<Outcome>,
}

impl Measurement {
    /// Outcome vectors must be mutually orthonormal and together span `space`.
    pub fn new(agent: impl Into<String>, space: SpaceLayout, outcomes: Vec<(String, Vec<StateVector>)>) -> Result<Self> {
        let agent = agent.into();
        if space.is_empty() {
            return Err(Error::Empty("measurement needs at least one target register".into()));
        }
        if outcomes.is_empty() {
            return Err(Error::Empty("measurement needs at least one outcome".into()));
        }
        let mut all = Vec::new();
        for (i, (label, vectors)) in outcomes.iter().enumerate() {
            if outcomes[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::DuplicateOutcome(label.clone()));
            }
            if vectors.is_empty() {
                return Err(Error::Empty(format!("outcome `{label}` has no vectors")));
            }
            for v in vectors {
                if v.layout() != &space {
                    return Err(Error::LayoutMismatch(format!(
                        "outcome `{label}` vector is on {} but the measurement acts on {}",
                        v.layout(),
                        space
                    )));
                }
                all.push(v.clone());
            }
        }
        check_orthonormal(&all, ORTHONORMAL_TOL)?;
        if all.len() != space.dim() {
            return Err(Error::IncompleteMeasurement {
                space: space.to_string(),
                rank: all.len(),
                dim: space.dim(),
            });
        }
        Ok(Self {
            agent,
            space,
            outcomes: outcomes
                .into_iter()
                .map(|(label, vectors)| Outcome { label, vectors })
                .collect(),
        })
    }

    /// Measurement in the label basis of a single register.
    pub fn computational(agent: impl Into<String>, register: &Register) -> Self {
        let space = SpaceLayout::new(vec![register.clone()]).expect("single register");
        let outcomes = register
            .labels()
            .iter()
            .map(|l| {
                let v = basis_state(&space, &[(register.name(), l)]).expect("valid label");
                (l.clone(), vec![v])
            })
            .collect();
        Self::new(agent, space, outcomes).expect("label basis is orthonormal and complete")
    }

    pub fn agent(&self) -> &str {
        &self.agent
    }

    pub fn space(&self) -> &SpaceLayout {
        &self.space
    }

    pub fn targets(&self) -> Vec<&str> {
        self.space.names().collect()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn labels(&self) -> Vec<&str> {
        self.outcomes.iter().map(|o| o.label.as_str()).collect()
    }

    pub fn outcome(&self, label: &str) -> Result<&Outcome> {
        self.outcomes
            .iter()
            .find(|o| o.label == label)
            .ok_or_else(|| Error::UnknownOutcome {
                agent: self.agent.clone(),
                outcome: label.to_string(),
            })
    }

    pub fn outcome_index(&self, label: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o.label == label)
            .ok_or_else(|| Error::UnknownOutcome {
                agent: self.agent.clone(),
                outcome: label.to_string(),
            })
    }

    /// Memory register recording this measurement's outcome labels.
    pub fn memory_register(&self, name: &str) -> Result<Register> {
        Register::new(name, self.labels())
    }

    /// Same measurement attributed to a different agent.
    pub fn with_agent(&self, agent: impl Into<String>) -> Self {
        Self {
            agent: agent.into(),
            ..self.clone()
        }
    }

    /// Largest entry-wise difference between outcome vectors; `None` if the
    /// measurements differ in agent, space or outcome structure.
    pub fn max_deviation(&self, other: &Measurement) -> Option<f64> {
        if self.agent != other.agent || self.space != other.space || self.outcomes.len() != other.outcomes.len() {
            return None;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.outcomes.iter().zip(&other.outcomes) {
            if a.label != b.label || a.vectors.len() != b.vectors.len() {
                return None;
            }
            for (x, y) in a.vectors.iter().zip(&b.vectors) {
                worst = worst.max(x.max_deviation(y).ok()?);
            }
        }
        Some(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    entries: Vec<(String, f64)>,
}

impl OutcomeDistribution {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

/// Projector onto one label of a single register.
pub fn label_projector(register: &Register, label: &str) -> Result<LinearMap> {
    let space = SpaceLayout::new(vec![register.clone()])?;
    projector(&[basis_state(&space, &[(register.name(), label)])?])
}

/// Born-rule outcome probabilities of `m` on `s`.
pub fn born_distribution(s: &StateVector, m: &Measurement) -> Result<OutcomeDistribution> {
    s.ensure_normalized()?;
    let entries = m
        .outcomes
        .iter()
        .map(|o| Ok((o.label.clone(), expectation(&o.projector(), s)?.re)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OutcomeDistribution { entries })
}

/// Project onto `outcome` and renormalize.
pub fn collapse(s: &StateVector, m: &Measurement, outcome: &str) -> Result<StateVector> {
    s.ensure_normalized()?;
    let projected = apply_local(&m.outcome(outcome)?.projector(), s)?;
    let p = projected.norm_sqr();
    if p <= TOL {
        return Err(Error::zero_probability(format!("{}={}", m.agent, outcome), p));
    }
    Ok(projected.scaled(Amplitude::new(1.0 / p.sqrt(), 0.0)))
}

/// `p(b|a)` for two measurements in sequence under the collapse calculus.
pub fn sequential_conditional(
    s: &StateVector,
    first: &Measurement,
    a: &str,
    second: &Measurement,
    b: &str,
) -> Result<f64> {
    let post = collapse(s, first, a)?;
    let dist = born_distribution(&post, second)?;
    dist.get(b).ok_or_else(|| Error::UnknownOutcome {
        agent: second.agent.clone(),
        outcome: b.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DilationRecord {
    measurement: Measurement,
    memory: Register,
    isometry: LinearMap,
}

impl DilationRecord {
    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    pub fn memory(&self) -> &Register {
        &self.memory
    }

    pub fn isometry(&self) -> &LinearMap {
        &self.isometry
    }

    pub fn apply(&self, s: &StateVector) -> Result<StateVector> {
        apply(&self.isometry, s)
    }
}

/// Relative-state dilation into a memory register named after the agent.
pub fn dilate(m: &Measurement, layout: &SpaceLayout) -> Result<DilationRecord> {
    dilate_into(m, layout, m.agent())
}

/// Isometry `layout → layout ⊗ memory` sending each outcome subspace `a` to
/// `a ⊗ |a⟩_memory`. Degenerate outcomes record only their label.
pub fn dilate_into(m: &Measurement, layout: &SpaceLayout, memory_name: &str) -> Result<DilationRecord> {
    if layout.contains(memory_name) {
        return Err(Error::DuplicateRegister(memory_name.to_string()));
    }
    let memory = m.memory_register(memory_name)?;
    let out = layout.with(memory.clone())?;
    let targets = m.targets();
    let d = layout.dim();
    let k = memory.dim();
    let mut matrix = vec![Amplitude::new(0.0, 0.0); d * k * d];
    for (a, o) in m.outcomes.iter().enumerate() {
        let pa = embed(&o.projector(), &targets, layout)?;
        for i in 0..d {
            for j in 0..d {
                matrix[(i * k + a) * d + j] = pa.entry(i, j);
            }
        }
    }
    Ok(DilationRecord {
        measurement: m.clone(),
        memory,
        isometry: LinearMap::new(layout.clone(), out, matrix)?,
    })
}

/// Square unitary on `layout ⊗ memory` with an extra `ready` memory label.
///
/// On inputs with memory in `ready` it agrees with [`dilate_into`]; the
/// remaining columns are a deterministic orthonormal completion.
pub fn dilate_unitary(m: &Measurement, layout: &SpaceLayout, memory_name: &str) -> Result<DilationRecord> {
    if m.labels().contains(&READY) {
        return Err(Error::InvalidRegister {
            name: memory_name.to_string(),
            reason: format!("outcome label `{READY}` is reserved"),
        });
    }
    let iso = dilate_into(m, layout, memory_name)?;
    let mut labels = vec![READY.to_string()];
    labels.extend(m.labels().into_iter().map(String::from));
    let memory = Register::new(memory_name, labels)?;
    let full = layout.with(memory.clone())?;
    let d = layout.dim();
    let k = memory.dim();
    let n = d * k;
    let zero = Amplitude::new(0.0, 0.0);

    // Columns for |j, ready⟩: the isometry's image, re-indexed with the shifted memory labels.
    let mut columns: Vec<Option<Vec<Amplitude>>> = vec![None; n];
    for j in 0..d {
        let mut col = vec![zero; n];
        for i in 0..d {
            for a in 0..k - 1 {
                col[i * k + a + 1] = iso.isometry.entry(i * (k - 1) + a, j);
            }
        }
        columns[j * k] = Some(col);
    }
    let mut accepted: Vec<Vec<Amplitude>> = columns.iter().flatten().cloned().collect();
    let mut candidate = 0;
    for slot in columns.iter_mut().filter(|c| c.is_none()) {
        loop {
            let mut v = vec![zero; n];
            v[candidate] = Amplitude::new(1.0, 0.0);
            candidate += 1;
            for _ in 0..2 {
                for b in &accepted {
                    let ip: Amplitude = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= ip * bi;
                    }
                }
            }
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.5 {
                let v: Vec<Amplitude> = v.into_iter().map(|x| x / norm).collect();
                accepted.push(v.clone());
                *slot = Some(v);
                break;
            }
        }
    }
    let mut matrix = vec![zero; n * n];
    for (c, col) in columns.into_iter().enumerate() {
        for (r, x) in col.expect("completed").into_iter().enumerate() {
            matrix[r * n + c] = x;
        }
    }
    Ok(DilationRecord {
        measurement: m.clone(),
        memory,
        isometry: LinearMap::new(full.clone(), full, matrix)?,
    })
}

/// Probability that the memory register reads `outcome`.
pub fn rs_outcome_probability(s: &StateVector, memory: &str, outcome: &str) -> Result<f64> {
    s.ensure_normalized()?;
    let reg = s.layout().register(memory)?;
    Ok(expectation(&label_projector(reg, outcome)?, s)?.re)
}

/// Expectation of a product of local projectors on disjoint register sets.
pub fn rs_joint(s: &StateVector, projectors: &[LinearMap]) -> Result<f64> {
    s.ensure_normalized()?;
    let mut seen: Vec<&str> = Vec::new();
    for p in projectors {
        for name in p.in_layout().names() {
            if seen.contains(&name) {
                return Err(Error::OverlappingTargets(name.to_string()));
            }
            seen.push(name);
        }
    }
    let mut v = s.clone();
    for p in projectors {
        v = apply_local(p, &v)?;
    }
    Ok(inner(s, &v)?.re)
}

/// `q(target | cond)` read from memory projectors on a fully dilated state.
pub fn rs_conditional(s: &StateVector, cond: (&str, &str), target: (&str, &str)) -> Result<f64> {
    let cond_reg = s.layout().register(cond.0)?.clone();
    let target_reg = s.layout().register(target.0)?.clone();
    if cond.0 == target.0 {
        return Err(Error::OverlappingTargets(cond.0.to_string()));
    }
    target_reg.index_of(target.1)?;
    let pc = label_projector(&cond_reg, cond.1)?;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for label in target_reg.labels() {
        let q = rs_joint(s, &[pc.clone(), label_projector(&target_reg, label)?])?;
        denominator += q;
        if label == target.1 {
            numerator = q;
        }
    }
    if denominator <= TOL {
        return Err(Error::zero_probability(format!("{}={}", cond.0, cond.1), denominator));
    }
    Ok(numerator / denominator)
}

/// Collapse-calculus conditional for a super-observer measuring observer + system.
///
/// The inner measurement is collapsed on `a`, its record `|a⟩⊗|A_a⟩` is
/// formed, and the Born rule is applied to the outer measurement.
pub fn encapsulated_collapse_conditional(
    s: &StateVector,
    inner_m: &Measurement,
    a: &str,
    outer: &Measurement,
    b: &str,
) -> Result<f64> {
    encapsulated_collapse_conditional_via(s, inner_m, a, &[], outer, b)
}

/// As [`encapsulated_collapse_conditional`], with intermediate measurements
/// (`relays`) applied unitarily between the inner and outer measurement.
pub fn encapsulated_collapse_conditional_via(
    s: &StateVector,
    inner_m: &Measurement,
    a: &str,
    relays: &[Measurement],
    outer: &Measurement,
    b: &str,
) -> Result<f64> {
    check_outer_overlap(inner_m, inner_m.agent(), outer)?;
    let collapsed = collapse(s, inner_m, a)?;
    let record = inner_m.memory_register(inner_m.agent())?;
    let single = SpaceLayout::new(vec![record.clone()])?;
    let pointer = basis_state(&single, &[(record.name(), a)])?;
    let mut state = tensor(&collapsed, &pointer)?;
    for relay in relays {
        state = dilate(relay, state.layout())?.apply(&state)?;
    }
    let dist = born_distribution(&state, outer)?;
    dist.get(b).ok_or_else(|| Error::UnknownOutcome {
        agent: outer.agent.clone(),
        outcome: b.to_string(),
    })
}

/// Only outer target sets that avoid the inner lab, or contain the whole
/// measured system, are supported.
fn check_outer_overlap(inner_m: &Measurement, memory: &str, outer: &Measurement) -> Result<()> {
    let system = inner_m.targets();
    let outer_targets = outer.targets();
    let touches = outer_targets.iter().any(|t| system.contains(t) || *t == memory);
    let covers_system = system.iter().all(|t| outer_targets.contains(t));
    if touches && !covers_system {
        return Err(Error::Unsupported(format!(
            "outer measurement on {} partially overlaps the inner lab {}+{}",
            outer.space(),
            inner_m.space(),
            memory
        )));
    }
    Ok(())
}

/// True iff every outer outcome vector is, up to phase, a pointer product
/// `|a⟩⊗|A_a⟩` (with `|a⟩` in outcome subspace `a`) or is orthogonal to all
/// such products, and so carries no weight after the inner dilation.
pub fn product_pointer_check(outer: &Measurement, inner_dilation: &DilationRecord) -> bool {
    let inner_m = &inner_dilation.measurement;
    let memory = &inner_dilation.memory;
    let Ok(lab) = inner_m.space().with(memory.clone()) else {
        return false;
    };
    if !outer.space().is_permutation_of(&lab) {
        return false;
    }
    let sectors: Vec<LinearMap> = inner_m
        .outcomes
        .iter()
        .map(|o| {
            let mem_space = SpaceLayout::new(vec![memory.clone()]).expect("single register");
            let pointer = basis_state(&mem_space, &[(memory.name(), o.label())]).expect("label exists");
            let vectors: Vec<StateVector> = o
                .vectors
                .iter()
                .map(|v| tensor(v, &pointer).expect("disjoint"))
                .collect();
            projector(&vectors).expect("orthonormal products")
        })
        .collect();
    outer.outcomes.iter().flat_map(|o| &o.vectors).all(|v| {
        let Ok(v) = v.reorder(&lab) else { return false };
        let weights: Vec<f64> = sectors
            .iter()
            .map(|p| apply(p, &v).map(|w| w.norm_sqr()).unwrap_or(f64::NAN))
            .collect();
        let total: f64 = weights.iter().sum();
        let max = weights.iter().copied().fold(0.0, f64::max);
        total <= TOL || max >= 1.0 - TOL
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{is_isometry, isometry_defect};
    use crate::random::{random_basis, random_completion, random_state};
    use crate::registers::superpose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Amplitude {
        Amplitude::new(re, 0.0)
    }

    fn coin_reg() -> Register {
        Register::new("R", ["h", "t"]).unwrap()
    }

    fn spin_reg() -> Register {
        Register::new("S", ["-1/2", "+1/2"]).unwrap()
    }

    fn coin_state() -> StateVector {
        let l = SpaceLayout::new(vec![coin_reg()]).unwrap();
        superpose(
            &l,
            &[
                (c(1.0 / 3f64.sqrt()), vec![("R", "h")]),
                (c((2.0f64 / 3.0).sqrt()), vec![("R", "t")]),
            ],
        )
        .unwrap()
    }

    fn ok_fail_on(agent: &str, reg: &Register) -> Measurement {
        let space = SpaceLayout::new(vec![reg.clone()]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let ok = StateVector::new(space.clone(), vec![c(r), c(-r)]).unwrap();
        let fail = StateVector::new(space.clone(), vec![c(r), c(r)]).unwrap();
        Measurement::new(agent, space, vec![("ok".into(), vec![ok]), ("fail".into(), vec![fail])]).unwrap()
    }

    fn random_measurement(rng: &mut ChaCha8Rng, agent: &str, space: &SpaceLayout) -> Measurement {
        let basis = random_basis(rng, space);
        Measurement::new(
            agent,
            space.clone(),
            basis.into_iter().enumerate().map(|(i, v)| (format!("o{i}"), vec![v])).collect(),
        )
        .unwrap()
    }

    fn qudit(name: &str, d: usize) -> Register {
        Register::new(name, (0..d).map(|i| format!("q{i}"))).unwrap()
    }

    #[test]
    fn measurement_validation() {
        let space = SpaceLayout::new(vec![coin_reg()]).unwrap();
        let h = basis_state(&space, &[("R", "h")]).unwrap();
        let t = basis_state(&space, &[("R", "t")]).unwrap();
        assert!(matches!(
            Measurement::new("X", space.clone(), vec![("h".into(), vec![h.clone()])]),
            Err(Error::IncompleteMeasurement { rank: 1, dim: 2, .. })
        ));
        assert!(matches!(
            Measurement::new("X", space.clone(), vec![("h".into(), vec![h.clone()]), ("h".into(), vec![t.clone()])]),
            Err(Error::DuplicateOutcome(_))
        ));
        assert!(matches!(
            Measurement::new("X", space.clone(), vec![("a".into(), vec![h.clone()]), ("b".into(), vec![h.clone()])]),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn born_coin_weights() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let d = born_distribution(&coin_state(), &m).unwrap();
        assert!((d.get("h").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.get("t").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn born_eigenstate_and_equal_superposition() {
        let m = Measurement::computational("F", &spin_reg());
        let l = SpaceLayout::new(vec![spin_reg()]).unwrap();
        let up = basis_state(&l, &[("S", "+1/2")]).unwrap();
        let d = born_distribution(&up, &m).unwrap();
        assert_eq!(d.get("+1/2"), Some(1.0));
        assert_eq!(d.get("-1/2"), Some(0.0));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let right = StateVector::new(l, vec![c(r), c(r)]).unwrap();
        let d = born_distribution(&right, &m).unwrap();
        assert!((d.get("-1/2").unwrap() - 0.5).abs() < 1e-15);
        assert!((d.get("+1/2").unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn born_rejects_unnormalized_and_unknown() {
        let m = Measurement::computational("F", &spin_reg());
        let s = coin_state().scaled(c(2.0));
        assert!(matches!(
            born_distribution(&s, &Measurement::computational("X", &coin_reg())),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(born_distribution(&coin_state(), &m), Err(Error::UnknownRegister(_))));
    }

    #[test]
    fn collapse_examples() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let post = collapse(&coin_state(), &m, "t").unwrap();
        let t = basis_state(post.layout(), &[("R", "t")]).unwrap();
        assert!((inner(&t, &post).unwrap().norm_sqr() - 1.0).abs() < 1e-12);

        let h = basis_state(post.layout(), &[("R", "h")]).unwrap();
        let err = collapse(&h, &m, "t").unwrap_err();
        assert!(err.is_zero_probability());

        let spin = Measurement::computational("F", &spin_reg());
        let l = SpaceLayout::new(vec![spin_reg()]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let right = StateVector::new(l.clone(), vec![c(r), c(r)]).unwrap();
        let down = basis_state(&l, &[("S", "-1/2")]).unwrap();
        let post = collapse(&right, &spin, "-1/2").unwrap();
        assert!((inner(&down, &post).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequential_conditional_examples() {
        let first = Measurement::computational("Fbar", &coin_reg());
        let second = ok_fail_on("Wbar", &coin_reg());
        let p = sequential_conditional(&coin_state(), &first, "t", &second, "fail").unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        for a in ["h", "t"] {
            for b in ["h", "t"] {
                let p = sequential_conditional(&coin_state(), &first, a, &first, b).unwrap();
                assert!((p - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let h = basis_state(coin_state().layout(), &[("R", "h")]).unwrap();
        assert!(sequential_conditional(&h, &first, "t", &second, "ok")
            .unwrap_err()
            .is_zero_probability());
    }

    #[test]
    fn sequential_conditional_matches_overlap_formula_on_qutrits() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let space = SpaceLayout::new(vec![qudit("A", 3)]).unwrap();
        for _ in 0..25 {
            let s = random_state(&mut rng, &space);
            let m1 = random_measurement(&mut rng, "O1", &space);
            let m2 = random_measurement(&mut rng, "O2", &space);
            for oa in m1.outcomes() {
                for ob in m2.outcomes() {
                    // Oracle: |⟨b|a⟩|².
                    let expected = inner(&ob.vectors()[0], &oa.vectors()[0]).unwrap().norm_sqr();
                    let p = sequential_conditional(&s, &m1, oa.label(), &m2, ob.label()).unwrap();
                    assert!((p - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dilation_of_coin() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let s = coin_state();
        let rec = dilate(&m, s.layout()).unwrap();
        assert!(is_isometry(rec.isometry()));
        let out = rec.apply(&s).unwrap();
        let hh = basis_state(out.layout(), &[("R", "h"), ("Fbar", "h")]).unwrap();
        let tt = basis_state(out.layout(), &[("R", "t"), ("Fbar", "t")]).unwrap();
        assert!((inner(&hh, &out).unwrap() - c(1.0 / 3f64.sqrt())).norm() < 1e-15);
        assert!((inner(&tt, &out).unwrap() - c((2.0f64 / 3.0).sqrt())).norm() < 1e-15);
        assert!(dilate(&m.with_agent("R"), s.layout()).is_err());
    }

    #[test]
    fn degenerate_dilation_copies_only_label() {
        // Outcome `low` is the 2-dimensional subspace span{q0, q1} of a qutrit.
        let reg = qudit("A", 3);
        let space = SpaceLayout::new(vec![reg.clone()]).unwrap();
        let e = |l: &str| basis_state(&space, &[("A", l)]).unwrap();
        let m = Measurement::new(
            "O",
            space.clone(),
            vec![("low".into(), vec![e("q0"), e("q1")]), ("high".into(), vec![e("q2")])],
        )
        .unwrap();
        let rec = dilate(&m, &space).unwrap();
        assert_eq!(rec.memory().dim(), 2);
        assert!(is_isometry(rec.isometry()));
        // Image dimension equals the target-space dimension: V†V = 1 (rank 3)
        // and the images of q0 and q1 share the memory label `low`.
        let v0 = rec.apply(&e("q0")).unwrap();
        let v1 = rec.apply(&e("q1")).unwrap();
        assert!(inner(&v0, &v1).unwrap().norm() < 1e-15);
        for v in [&v0, &v1] {
            assert!((rs_outcome_probability(v, "O", "low").unwrap() - 1.0).abs() < 1e-15);
        }
        let gram_rank = (0..3)
            .filter(|&i| rec.apply(&e(&format!("q{i}"))).unwrap().norm() > 0.5)
            .count();
        assert_eq!(gram_rank, 3);
    }

    #[test]
    fn unitary_dilation_agrees_with_isometry_on_ready() {
        let m = ok_fail_on("W", &coin_reg());
        let s = coin_state();
        let u = dilate_unitary(&m, s.layout(), "W").unwrap();
        assert!(isometry_defect(u.isometry()) < 1e-12);
        let (_, ready) = crate::registers::extend(&s, u.memory().clone(), READY).unwrap();
        let via_unitary = u.apply(&ready).unwrap();
        let via_iso = dilate(&m, s.layout()).unwrap().apply(&s).unwrap();
        for label in ["ok", "fail"] {
            let a = rs_outcome_probability(&via_unitary, "W", label).unwrap();
            let b = rs_outcome_probability(&via_iso, "W", label).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        let ready_m = Measurement::new(
            "X",
            SpaceLayout::new(vec![coin_reg()]).unwrap(),
            vec![
                ("ready".into(), vec![basis_state(s.layout(), &[("R", "h")]).unwrap()]),
                ("t".into(), vec![basis_state(s.layout(), &[("R", "t")]).unwrap()]),
            ],
        )
        .unwrap();
        assert!(dilate_unitary(&ready_m, s.layout(), "X").is_err());
    }

    #[test]
    fn rs_outcome_probabilities_for_coin() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let s = coin_state();
        let out = dilate(&m, s.layout()).unwrap().apply(&s).unwrap();
        let pt = rs_outcome_probability(&out, "Fbar", "t").unwrap();
        let ph = rs_outcome_probability(&out, "Fbar", "h").unwrap();
        assert!((pt - 2.0 / 3.0).abs() < 1e-12);
        assert!((ph - 1.0 / 3.0).abs() < 1e-12);
        assert!((pt + ph - 1.0).abs() < 1e-12);
        assert!(rs_outcome_probability(&out, "Fbar", "x").is_err());
    }

    #[test]
    fn rs_joint_examples() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let s = coin_state();
        let out = dilate(&m, s.layout()).unwrap().apply(&s).unwrap();
        let r = coin_reg();
        let mem = out.layout().register("Fbar").unwrap().clone();
        for a1 in ["h", "t"] {
            for a in ["h", "t"] {
                let q = rs_joint(&out, &[label_projector(&r, a1).unwrap(), label_projector(&mem, a).unwrap()]).unwrap();
                let p = born_distribution(&s, &m).unwrap().get(a).unwrap();
                // q(|a'⟩, a) = δ(a', a) · p(a); conditionally δ.
                assert!((q - if a1 == a { p } else { 0.0 }).abs() < 1e-12);
            }
        }
        let both_t = rs_joint(&out, &[label_projector(&r, "t").unwrap(), label_projector(&mem, "t").unwrap()]).unwrap();
        assert!((both_t - 2.0 / 3.0).abs() < 1e-12);
        let id = rs_joint(
            &out,
            &[LinearMap::identity(&SpaceLayout::new(vec![r.clone()]).unwrap())],
        )
        .unwrap();
        assert!((id - 1.0).abs() < 1e-12);
        assert!(matches!(
            rs_joint(&out, &[label_projector(&r, "t").unwrap(), label_projector(&r, "h").unwrap()]),
            Err(Error::OverlappingTargets(_))
        ));
    }

    fn two_observer_state(rng: &mut ChaCha8Rng, dim: usize) -> (StateVector, Measurement, Measurement, StateVector) {
        let space = SpaceLayout::new(vec![qudit("A", dim)]).unwrap();
        let s = random_state(rng, &space);
        let m1 = random_measurement(rng, "O1", &space);
        let m2 = random_measurement(rng, "O2", &space);
        let a = dilate(&m1, s.layout()).unwrap().apply(&s).unwrap();
        let b = dilate(&m2, a.layout()).unwrap().apply(&a).unwrap();
        (s, m1, m2, b)
    }

    #[test]
    fn relative_state_conditional_equals_collapse_without_encapsulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let dim = rng.random_range(2..=4);
            let (s, m1, m2, full) = two_observer_state(&mut rng, dim);
            for oa in m1.labels() {
                if born_distribution(&s, &m1).unwrap().get(oa).unwrap() <= 1e-9 {
                    continue;
                }
                for ob in m2.labels() {
                    let q = rs_conditional(&full, ("O1", oa), ("O2", ob)).unwrap();
                    let p = sequential_conditional(&s, &m1, oa, &m2, ob).unwrap();
                    worst = worst.max((q - p).abs());
                }
            }
        }
        assert!(worst <= 1e-10, "worst deviation {worst}");
    }

    #[test]
    fn rs_conditional_on_certain_event_is_unconditional() {
        let m = Measurement::computational("Fbar", &coin_reg());
        let s = coin_state();
        let out = dilate(&m, s.layout()).unwrap().apply(&s).unwrap();
        // A second observer reads a register that is certainly 0.
        let extra = qudit("X", 2);
        let (_, out) = crate::registers::extend(&out, extra.clone(), "q0").unwrap();
        let mx = Measurement::computational("Ox", &extra);
        let out = dilate(&mx, out.layout()).unwrap().apply(&out).unwrap();
        let q = rs_conditional(&out, ("Ox", "q0"), ("Fbar", "t")).unwrap();
        assert!((q - 2.0 / 3.0).abs() < 1e-12);
        let err = rs_conditional(&out, ("Ox", "q1"), ("Fbar", "t")).unwrap_err();
        assert!(err.is_zero_probability());
    }

    #[test]
    fn movable_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let dim = rng.random_range(2..=3);
            let space = SpaceLayout::new(vec![qudit("A", dim)]).unwrap();
            let s = random_state(&mut rng, &space);
            let m = random_measurement(&mut rng, "O1", &space);
            let born = born_distribution(&s, &m).unwrap();
            let mut state = dilate(&m, s.layout()).unwrap().apply(&s).unwrap();
            let depth = rng.random_range(1..=3);
            let mut memories = vec!["O1".to_string()];
            for k in 2..=depth {
                // Each further observer reads the previous memory in its pointer basis.
                let prev = state.layout().register(memories.last().unwrap()).unwrap().clone();
                let reader = Measurement::computational(format!("O{k}"), &prev);
                state = dilate(&reader, state.layout()).unwrap().apply(&state).unwrap();
                memories.push(format!("O{k}"));
            }
            for mem in &memories {
                for (label, p) in born.entries() {
                    let q = rs_outcome_probability(&state, mem, label).unwrap();
                    assert!((q - p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn classical_record_restores_collapse_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let dim = rng.random_range(2..=3);
            let space = SpaceLayout::new(vec![qudit("S", dim)]).unwrap();
            let s = random_state(&mut rng, &space);
            let inner_m = random_measurement(&mut rng, "O", &space);
            let after_o = dilate(&inner_m, s.layout()).unwrap().apply(&s).unwrap();
            let mem = after_o.layout().register("O").unwrap().clone();
            let recorder = Measurement::computational("Rec", &mem);
            let recorded = dilate(&recorder, after_o.layout()).unwrap().apply(&after_o).unwrap();
            let lab = space.with(mem.clone()).unwrap();
            let outer = random_measurement(&mut rng, "SO", &lab);
            let full = dilate(&outer, recorded.layout()).unwrap().apply(&recorded).unwrap();
            let probs = born_distribution(&s, &inner_m).unwrap();
            for (a, pa) in probs.entries() {
                if *pa <= 1e-9 {
                    continue;
                }
                for b in outer.labels() {
                    let q = rs_conditional(&full, ("Rec", a), ("SO", b)).unwrap();
                    let p = encapsulated_collapse_conditional(&s, &inner_m, a, &outer, b).unwrap();
                    assert!((q - p).abs() < 1e-10);
                }
            }
        }
    }

    fn fr_lab_state() -> StateVector {
        // (1/√3)|h,↓⟩ + √(2/3)|t,→⟩ on (R, S): the coin after F̄'s controlled preparation.
        let l = SpaceLayout::new(vec![coin_reg(), spin_reg()]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let tt = (2.0f64 / 3.0).sqrt() * r;
        superpose(
            &l,
            &[
                (c(1.0 / 3f64.sqrt()), vec![("R", "h"), ("S", "-1/2")]),
                (c(tt), vec![("R", "t"), ("S", "-1/2")]),
                (c(tt), vec![("R", "t"), ("S", "+1/2")]),
            ],
        )
        .unwrap()
    }

    fn w_measurement() -> Measurement {
        let f_mem = spin_reg().labels().to_vec();
        let lab = SpaceLayout::new(vec![spin_reg(), Register::new("F", f_mem).unwrap()]).unwrap();
        let e = |a: &str, b: &str| basis_state(&lab, &[("S", a), ("F", b)]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let ok = e("-1/2", "-1/2").scaled(c(r)).add(&e("+1/2", "+1/2").scaled(c(-r))).unwrap();
        let fail = e("-1/2", "-1/2").scaled(c(r)).add(&e("+1/2", "+1/2").scaled(c(r))).unwrap();
        Measurement::new(
            "W",
            lab.clone(),
            vec![
                ("ok".into(), vec![ok]),
                ("fail".into(), vec![fail]),
                ("other".into(), vec![e("-1/2", "+1/2"), e("+1/2", "-1/2")]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn encapsulated_conditional_fr_tails() {
        let s = fr_lab_state();
        let fbar = Measurement::computational("Fbar", &coin_reg());
        let f = Measurement::computational("F", &spin_reg());
        let w = w_measurement();
        let ok = encapsulated_collapse_conditional_via(&s, &fbar, "t", std::slice::from_ref(&f), &w, "ok").unwrap();
        let fail = encapsulated_collapse_conditional_via(&s, &fbar, "t", &[f], &w, "fail").unwrap();
        assert!(ok.abs() < 1e-12);
        assert!((fail - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encapsulated_conditional_pointer_basis_is_delta() {
        let space = SpaceLayout::new(vec![spin_reg()]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = StateVector::new(space.clone(), vec![c(r), c(r)]).unwrap();
        let f = Measurement::computational("F", &spin_reg());
        let lab = space.with(f.memory_register("F").unwrap()).unwrap();
        let pointer = Measurement::new(
            "W",
            lab.clone(),
            (0..4)
                .map(|i| {
                    let labels = lab.labels_at(i);
                    let v = basis_state(&lab, &[("S", labels[0]), ("F", labels[1])]).unwrap();
                    (format!("{}|{}", labels[0], labels[1]), vec![v])
                })
                .collect(),
        )
        .unwrap();
        for a in ["-1/2", "+1/2"] {
            for b in pointer.labels() {
                let p = encapsulated_collapse_conditional(&s, &f, a, &pointer, b).unwrap();
                let expected = if b == format!("{a}|{a}") { 1.0 } else { 0.0 };
                assert!((p - expected).abs() < 1e-12);
            }
        }
        let rec = dilate(&f, &space).unwrap();
        assert!(product_pointer_check(&pointer, &rec));
    }

    #[test]
    fn encapsulated_rejects_partial_overlap() {
        let l = SpaceLayout::new(vec![qudit("A", 2), qudit("B", 2)]).unwrap();
        let s = basis_state(&l, &[("A", "q0"), ("B", "q0")]).unwrap();
        let inner_m = random_measurement(&mut ChaCha8Rng::seed_from_u64(1), "O", &l);
        let outer = Measurement::computational("SO", &qudit("A", 2));
        assert!(matches!(
            encapsulated_collapse_conditional(&s, &inner_m, "o0", &outer, "q0"),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fr_ok_fail_basis_is_not_product_pointer() {
        let f = Measurement::computational("F", &spin_reg());
        let rec = dilate(&f, &SpaceLayout::new(vec![spin_reg()]).unwrap()).unwrap();
        assert!(!product_pointer_check(&w_measurement(), &rec));
    }

    #[test]
    fn random_rotated_outer_basis_breaks_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let space = SpaceLayout::new(vec![qudit("S", 2)]).unwrap();
        let mut disagreements = 0;
        for _ in 0..20 {
            let s = random_state(&mut rng, &space);
            let inner_m = random_measurement(&mut rng, "O", &space);
            let rec = dilate(&inner_m, &space).unwrap();
            let lab = space.with(rec.memory().clone()).unwrap();
            let outer = random_measurement(&mut rng, "SO", &lab);
            assert!(!product_pointer_check(&outer, &rec));
            let full = dilate(&outer, rec.isometry().out_layout())
                .unwrap()
                .apply(&rec.apply(&s).unwrap())
                .unwrap();
            let mut worst: f64 = 0.0;
            for a in inner_m.labels() {
                for b in outer.labels() {
                    let q = rs_conditional(&full, ("O", a), ("SO", b)).unwrap();
                    let p = encapsulated_collapse_conditional(&s, &inner_m, a, &outer, b).unwrap();
                    worst = worst.max((q - p).abs());
                }
            }
            if worst > 1e-6 {
                disagreements += 1;
            }
        }
        assert_eq!(disagreements, 20);
    }

    #[test]
    fn pointer_basis_with_random_complement_passes_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let space = SpaceLayout::new(vec![qudit("S", 3)]).unwrap();
        let inner_m = random_measurement(&mut rng, "O", &space);
        let rec = dilate(&inner_m, &space).unwrap();
        let lab = space.with(rec.memory().clone()).unwrap();
        let pointers: Vec<StateVector> = inner_m
            .outcomes()
            .iter()
            .map(|o| {
                let mem = SpaceLayout::new(vec![rec.memory().clone()]).unwrap();
                let p = basis_state(&mem, &[("O", o.label())]).unwrap();
                tensor(&o.vectors()[0], &p).unwrap()
            })
            .collect();
        let rest = random_completion(&mut rng, &lab, &pointers);
        let mut outcomes: Vec<(String, Vec<StateVector>)> =
            pointers.into_iter().enumerate().map(|(i, v)| (format!("p{i}"), vec![v])).collect();
        outcomes.extend(rest.into_iter().enumerate().map(|(i, v)| (format!("r{i}"), vec![v])));
        let outer = Measurement::new("SO", lab, outcomes).unwrap();
        assert!(product_pointer_check(&outer, &rec));
    }
}
