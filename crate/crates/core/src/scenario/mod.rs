//! Clocked multi-agent protocols: definition, execution and inspection.

mod branches;
mod ledger;

pub use branches::{annotate, branches, intact_memories, joint_distribution, Branch, PRUNE_TOL};
pub use ledger::{
    certainty_q, chain_certainty, check_single_value, closed_ledger, derive_q_ledger, q_distribution,
    CertaintyStatement, Event, Ledger, Polarity, QMode, Rule, Violation,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qcore::{Amplitude, StateVector};
use crate::registers::{basis_state, extend, superpose, Register, SpaceLayout};
use crate::semantics::{born_distribution, collapse, dilate, Measurement};

/// Clock tag `n:XX`. A step scheduled at `n` ends at `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(pub u32);

impl ClockTime {
    pub fn next(self) -> ClockTime {
        ClockTime(self.0 + 1)
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n:{:02}", self.0)
    }
}

impl FromStr for ClockTime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix("n:").unwrap_or(s);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::UnknownTime(s.to_string()));
        }
        digits
            .parse()
            .map(ClockTime)
            .map_err(|_| Error::UnknownTime(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Unitary,
    Collapse,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Unitary => "unitary",
            Policy::Collapse => "collapse",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unitary" => Ok(Policy::Unitary),
            "collapse" => Ok(Policy::Collapse),
            other => Err(Error::InvalidScenario(format!("unknown policy `{other}`"))),
        }
    }
}

/// State placed into a fresh register when the step's outcome is `outcome`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preparation {
    outcome: String,
    register: Register,
    state: StateVector,
}

impl Preparation {
    pub fn new(outcome: impl Into<String>, state: StateVector) -> Result<Self> {
        if state.layout().len() != 1 {
            return Err(Error::InvalidScenario(format!(
                "preparation state must live on a single register, got {}",
                state.layout()
            )));
        }
        state.ensure_normalized()?;
        Ok(Self {
            outcome: outcome.into(),
            register: state.layout().registers()[0].clone(),
            state,
        })
    }

    pub fn outcome(&self) -> &str {
        &self.outcome
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    time: ClockTime,
    measurement: Measurement,
    policy: Policy,
    preps: Vec<Preparation>,
}

impl Step {
    pub fn new(time: ClockTime, measurement: Measurement, policy: Policy, preps: Vec<Preparation>) -> Self {
        Self {
            time,
            measurement,
            policy,
            preps,
        }
    }

    pub fn time(&self) -> ClockTime {
        self.time
    }

    pub fn agent(&self) -> &str {
        self.measurement.agent()
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn preps(&self) -> &[Preparation] {
        &self.preps
    }

    pub fn targets(&self) -> Vec<&str> {
        self.measurement.targets()
    }

    /// Registers introduced by conditional preparations, in first-use order.
    pub fn prep_registers(&self) -> Vec<&Register> {
        let mut out: Vec<&Register> = Vec::new();
        for p in &self.preps {
            if !out.iter().any(|r| r.name() == p.register.name()) {
                out.push(&p.register);
            }
        }
        out
    }

    /// The same step content scheduled at another time.
    pub fn at(&self, time: ClockTime) -> Step {
        Step { time, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Communication {
    pub time: ClockTime,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    initial: StateVector,
    steps: Vec<Step>,
    comms: Vec<Communication>,
    final_layout: SpaceLayout,
}

impl Scenario {
    pub fn new(initial: StateVector, steps: Vec<Step>, comms: Vec<Communication>) -> Result<Self> {
        initial.ensure_normalized()?;
        let invalid = |msg: String| Error::InvalidScenario(msg);
        let mut layout = initial.layout().clone();
        for (i, step) in steps.iter().enumerate() {
            if i > 0 && steps[i - 1].time >= step.time {
                return Err(invalid(format!(
                    "step times must be strictly increasing ({} follows {})",
                    step.time,
                    steps[i - 1].time
                )));
            }
            if steps[..i].iter().any(|s| s.agent() == step.agent()) {
                return Err(invalid(format!("agent `{}` measures more than once", step.agent())));
            }
            for t in step.targets() {
                if !layout.contains(t) {
                    return Err(invalid(format!(
                        "step at {} measures `{t}`, which does not exist yet",
                        step.time
                    )));
                }
            }
            if layout.contains(step.agent()) {
                return Err(invalid(format!(
                    "memory register `{}` at {} clashes with an existing register",
                    step.agent(),
                    step.time
                )));
            }
            layout = layout.with(step.measurement.memory_register(step.agent())?)?;
            for reg in step.prep_registers() {
                if layout.contains(reg.name()) {
                    return Err(invalid(format!(
                        "preparation at {} targets existing register `{}`",
                        step.time,
                        reg.name()
                    )));
                }
                for label in step.measurement.labels() {
                    let matching: Vec<&Preparation> = step
                        .preps
                        .iter()
                        .filter(|p| p.register.name() == reg.name() && p.outcome == label)
                        .collect();
                    if matching.len() != 1 {
                        return Err(invalid(format!(
                            "step at {} needs exactly one preparation of `{}` for outcome `{label}`",
                            step.time,
                            reg.name()
                        )));
                    }
                    if &matching[0].register != reg {
                        return Err(invalid(format!(
                            "preparations of `{}` at {} disagree on its labels",
                            reg.name(),
                            step.time
                        )));
                    }
                }
                layout = layout.with(reg.clone())?;
            }
            for p in &step.preps {
                step.measurement.outcome(p.outcome())?;
            }
        }
        for c in &comms {
            for agent in [&c.from, &c.to] {
                if !steps.iter().any(|s| s.agent() == agent) {
                    return Err(invalid(format!("communication at {} names unknown agent `{agent}`", c.time)));
                }
            }
            if c.from == c.to {
                return Err(invalid(format!("communication at {} from `{}` to itself", c.time, c.from)));
            }
            if steps.iter().any(|s| s.time == c.time) {
                return Err(invalid(format!("communication at {} coincides with a step", c.time)));
            }
        }
        Ok(Self {
            initial,
            steps,
            comms,
            final_layout: layout,
        })
    }

    pub fn initial(&self) -> &StateVector {
        &self.initial
    }

    pub fn layout(&self) -> &SpaceLayout {
        self.initial.layout()
    }

    /// Layout after every step has executed.
    pub fn final_layout(&self) -> &SpaceLayout {
        &self.final_layout
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn comms(&self) -> &[Communication] {
        &self.comms
    }

    pub fn step_at(&self, time: ClockTime) -> Result<&Step> {
        self.steps
            .iter()
            .find(|s| s.time == time)
            .ok_or_else(|| Error::UnknownTime(time.to_string()))
    }

    pub fn step_index_of_agent(&self, agent: &str) -> Result<usize> {
        self.steps
            .iter()
            .position(|s| s.agent() == agent)
            .ok_or_else(|| Error::InvalidScenario(format!("no step for agent `{agent}`")))
    }

    pub fn step_of_agent(&self, agent: &str) -> Result<&Step> {
        Ok(&self.steps[self.step_index_of_agent(agent)?])
    }

    /// Copy of the scenario with the contents of two time slots exchanged.
    pub fn with_swapped(&self, a: ClockTime, b: ClockTime) -> Result<Scenario> {
        let ia = self
            .steps
            .iter()
            .position(|s| s.time == a)
            .ok_or_else(|| Error::UnknownTime(a.to_string()))?;
        let ib = self
            .steps
            .iter()
            .position(|s| s.time == b)
            .ok_or_else(|| Error::UnknownTime(b.to_string()))?;
        let mut steps = self.steps.clone();
        steps[ia] = self.steps[ib].at(a);
        steps[ib] = self.steps[ia].at(b);
        Scenario::new(self.initial.clone(), steps, self.comms.clone())
    }

    /// Largest amplitude difference against a structurally identical scenario.
    pub fn max_deviation(&self, other: &Scenario) -> Option<f64> {
        if self.steps.len() != other.steps.len() || self.comms != other.comms {
            return None;
        }
        let mut worst = self.initial.max_deviation(&other.initial).ok()?;
        for (a, b) in self.steps.iter().zip(&other.steps) {
            if a.time != b.time || a.policy != b.policy || a.preps.len() != b.preps.len() {
                return None;
            }
            worst = worst.max(a.measurement.max_deviation(&b.measurement)?);
            for (p, q) in a.preps.iter().zip(&b.preps) {
                if p.outcome != q.outcome || p.register != q.register {
                    return None;
                }
                worst = worst.max(p.state.max_deviation(&q.state).ok()?);
            }
        }
        Some(worst)
    }
}

/// Apply one step. Returns the new state and, for collapse, the probability of `choice`.
pub fn execute_step(
    state: &StateVector,
    step: &Step,
    policy: Policy,
    choice: Option<&str>,
) -> Result<(StateVector, Option<f64>)> {
    let m = &step.measurement;
    let (after, probability) = match policy {
        Policy::Unitary => (dilate(m, state.layout())?.apply(state)?, None),
        Policy::Collapse => {
            let choice = choice.ok_or_else(|| {
                Error::CollapseChoice(format!("no outcome chosen for collapse step at {}", step.time))
            })?;
            let p = born_distribution(state, m)?
                .get(choice)
                .ok_or_else(|| Error::UnknownOutcome {
                    agent: m.agent().to_string(),
                    outcome: choice.to_string(),
                })?;
            let post = collapse(state, m, choice)?;
            let (_, extended) = extend(&post, m.memory_register(m.agent())?, choice)?;
            (extended, Some(p))
        }
    };
    Ok((apply_preps(after, step)?, probability))
}

/// Isometry `Σ_a |A_a⟩⟨A_a| ⊗ |prep_a⟩` for each prepared register.
fn apply_preps(mut state: StateVector, step: &Step) -> Result<StateVector> {
    for reg in step.prep_registers() {
        let layout = state.layout().clone();
        let mem_pos = layout
            .position(step.agent())
            .ok_or_else(|| Error::UnknownRegister(step.agent().to_string()))?;
        let memory = layout.registers()[mem_pos].clone();
        let preps: Vec<&StateVector> = memory
            .labels()
            .iter()
            .map(|label| {
                step.preps
                    .iter()
                    .find(|p| p.register.name() == reg.name() && &p.outcome == label)
                    .map(|p| &p.state)
                    .ok_or_else(|| Error::InvalidScenario(format!("no preparation of `{}` for `{label}`", reg.name())))
            })
            .collect::<Result<_>>()?;
        let out_layout = layout.with(reg.clone())?;
        let dr = reg.dim();
        let mut amps = vec![Amplitude::new(0.0, 0.0); out_layout.dim()];
        for (i, a) in state.amps().iter().enumerate() {
            let label = layout.digits(i)[mem_pos];
            for (r, x) in preps[label].amps().iter().enumerate() {
                amps[i * dr + r] = a * x;
            }
        }
        state = StateVector::new(out_layout, amps)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub overrides: BTreeMap<ClockTime, Policy>,
    pub halt_at: Option<ClockTime>,
    pub collapse_choices: BTreeMap<ClockTime, String>,
}

impl RunOptions {
    pub fn all(sc: &Scenario, policy: Policy) -> Self {
        Self {
            overrides: sc.steps.iter().map(|s| (s.time, policy)).collect(),
            ..Self::default()
        }
    }

    pub fn halt(mut self, time: ClockTime) -> Self {
        self.halt_at = Some(time);
        self
    }

    pub fn collapse(mut self, time: ClockTime, outcome: impl Into<String>) -> Self {
        self.overrides.insert(time, Policy::Collapse);
        self.collapse_choices.insert(time, outcome.into());
        self
    }

    pub fn policy_of(&self, step: &Step) -> Policy {
        self.overrides.get(&step.time).copied().unwrap_or(step.policy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub start: ClockTime,
    pub end: ClockTime,
    pub agent: String,
    pub policy: Policy,
    pub outcome: Option<String>,
    pub probability: Option<f64>,
    pub state: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub initial: StateVector,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn final_state(&self) -> &StateVector {
        self.entries.last().map(|e| &e.state).unwrap_or(&self.initial)
    }

    /// State at a clock tag: the latest state whose step ended at or before it.
    pub fn state_at(&self, time: ClockTime) -> &StateVector {
        self.entries
            .iter()
            .rev()
            .find(|e| e.end <= time)
            .map(|e| &e.state)
            .unwrap_or(&self.initial)
    }

    /// Steps executed, by scenario index.
    pub fn executed(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.step).collect()
    }
}

/// Execute the schedule. A step runs iff its start time precedes `halt_at`.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<Trace> {
    for t in opts.overrides.keys() {
        sc.step_at(*t)?;
    }
    if let Some(h) = opts.halt_at {
        if !sc.steps.iter().any(|s| s.time == h || s.time.next() == h) {
            return Err(Error::UnknownTime(h.to_string()));
        }
    }
    for t in opts.collapse_choices.keys() {
        let step = sc.step_at(*t)?;
        if opts.policy_of(step) != Policy::Collapse {
            return Err(Error::CollapseChoice(format!(
                "outcome given for step at {t}, which is not a collapse step"
            )));
        }
    }
    let mut state = sc.initial.clone();
    let mut entries = Vec::new();
    for (i, step) in sc.steps.iter().enumerate() {
        if opts.halt_at.is_some_and(|h| step.time >= h) {
            break;
        }
        let policy = opts.policy_of(step);
        let choice = opts.collapse_choices.get(&step.time).map(String::as_str);
        let (next, probability) = execute_step(&state, step, policy, choice)?;
        state = next;
        entries.push(TraceEntry {
            step: i,
            start: step.time,
            end: step.time.next(),
            agent: step.agent().to_string(),
            policy,
            outcome: choice.filter(|_| policy == Policy::Collapse).map(String::from),
            probability,
            state: state.clone(),
        });
    }
    Ok(Trace {
        initial: sc.initial.clone(),
        entries,
    })
}

pub const COIN: &str = "R";
pub const SPIN: &str = "S";
pub const FRIEND_BAR: &str = "Fbar";
pub const FRIEND: &str = "F";
pub const WIGNER_BAR: &str = "Wbar";
pub const WIGNER: &str = "W";
pub const DOWN: &str = "-1/2";
pub const UP: &str = "+1/2";

/// Two-lab basis `ok = (|a,a⟩ − |b,b⟩)/√2`, `fail = (|a,a⟩ + |b,b⟩)/√2` and an
/// `other` outcome covering the mismatched pairs.
fn lab_measurement(agent: &str, system: &Register, memory: &Register) -> Result<Measurement> {
    let lab = SpaceLayout::new(vec![system.clone(), memory.clone()])?;
    let (a, b) = (system.label(0), system.label(1));
    let r = std::f64::consts::FRAC_1_SQRT_2;
    fn pair<'a>(system: &'a Register, memory: &'a Register, x: &'a str, y: &'a str) -> Vec<(&'a str, &'a str)> {
        vec![(system.name(), x), (memory.name(), y)]
    }
    let pair = |x, y| pair(system, memory, x, y);
    let ok = superpose(&lab, &[(Amplitude::new(r, 0.0), pair(a, a)), (Amplitude::new(-r, 0.0), pair(b, b))])?;
    let fail = superpose(&lab, &[(Amplitude::new(r, 0.0), pair(a, a)), (Amplitude::new(r, 0.0), pair(b, b))])?;
    let other = vec![basis_state(&lab, &pair(a, b))?, basis_state(&lab, &pair(b, a))?];
    Measurement::new(
        agent,
        lab,
        vec![("ok".into(), vec![ok]), ("fail".into(), vec![fail]), ("other".into(), other)],
    )
}

/// The four-agent extended Wigner's-friend protocol, all steps unitary.
pub fn build_fr() -> Scenario {
    let coin = Register::new(COIN, ["h", "t"]).expect("valid");
    let spin = Register::new(SPIN, [DOWN, UP]).expect("valid");
    let coin_space = SpaceLayout::new(vec![coin.clone()]).expect("valid");
    let spin_space = SpaceLayout::new(vec![spin.clone()]).expect("valid");
    let initial = superpose(
        &coin_space,
        &[
            (Amplitude::new(1.0 / 3f64.sqrt(), 0.0), vec![(COIN, "h")]),
            (Amplitude::new((2.0f64 / 3.0).sqrt(), 0.0), vec![(COIN, "t")]),
        ],
    )
    .expect("normalized");
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let down = basis_state(&spin_space, &[(SPIN, DOWN)]).expect("valid");
    let right = superpose(
        &spin_space,
        &[(Amplitude::new(r, 0.0), vec![(SPIN, DOWN)]), (Amplitude::new(r, 0.0), vec![(SPIN, UP)])],
    )
    .expect("normalized");

    let fbar = Measurement::computational(FRIEND_BAR, &coin);
    let f = Measurement::computational(FRIEND, &spin);
    let fbar_memory = fbar.memory_register(FRIEND_BAR).expect("valid");
    let f_memory = f.memory_register(FRIEND).expect("valid");
    let wbar = lab_measurement(WIGNER_BAR, &coin, &fbar_memory).expect("valid");
    let w = lab_measurement(WIGNER, &spin, &f_memory).expect("valid");

    let steps = vec![
        Step::new(
            ClockTime(0),
            fbar,
            Policy::Unitary,
            vec![
                Preparation::new("h", down).expect("valid"),
                Preparation::new("t", right).expect("valid"),
            ],
        ),
        Step::new(ClockTime(10), f, Policy::Unitary, vec![]),
        Step::new(ClockTime(20), wbar, Policy::Unitary, vec![]),
        Step::new(ClockTime(30), w, Policy::Unitary, vec![]),
    ];
    let comms = vec![Communication {
        time: ClockTime(22),
        from: WIGNER_BAR.into(),
        to: WIGNER.into(),
    }];
    Scenario::new(initial, steps, comms).expect("protocol is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::inner;
    use crate::random::{random_basis, random_state};
    use crate::semantics::born_distribution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn amp(s: &StateVector, assignment: &[(&str, &str)]) -> Amplitude {
        s.amps()[s.layout().index_of(assignment).unwrap()]
    }

    #[test]
    fn clock_time_parse_and_display() {
        assert_eq!("n:10".parse::<ClockTime>().unwrap(), ClockTime(10));
        assert_eq!("31".parse::<ClockTime>().unwrap(), ClockTime(31));
        assert_eq!(ClockTime(0).to_string(), "n:00");
        assert!("n:x".parse::<ClockTime>().is_err());
        assert!("".parse::<ClockTime>().is_err());
    }

    #[test]
    fn fr_layout() {
        let sc = build_fr();
        let names: Vec<&str> = sc.final_layout().names().collect();
        assert_eq!(names, ["R", "Fbar", "S", "F", "Wbar", "W"]);
        assert_eq!(sc.final_layout().dim(), 144);
    }

    #[test]
    fn fr_psi_11() {
        let sc = build_fr();
        let trace = run(&sc, &RunOptions::default().halt(ClockTime(11))).unwrap();
        let s = trace.final_state();
        let third = 1.0 / 3f64.sqrt();
        let cases = [("h", DOWN, third), ("t", DOWN, third), ("t", UP, third), ("h", UP, 0.0)];
        for (c, z, expected) in cases {
            let a = amp(s, &[("R", c), ("Fbar", c), ("S", z), ("F", z)]);
            assert!((a - Amplitude::new(expected, 0.0)).norm() < 1e-12, "{c} {z}: {a}");
        }
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fr_psi_31_amplitudes() {
        let sc = build_fr();
        let s = run(&sc, &RunOptions::default()).unwrap().final_state().clone();
        let twelfth = 1.0 / 12f64.sqrt();
        let expected = [
            ("ok", "ok", twelfth),
            ("ok", "fail", -twelfth),
            ("fail", "ok", twelfth),
            ("fail", "fail", 3f64.sqrt() / 2.0),
        ];
        let lab_bar = sc.step_at(ClockTime(20)).unwrap().measurement().clone();
        let lab = sc.step_at(ClockTime(30)).unwrap().measurement().clone();
        for (wb, w, coefficient) in expected {
            // Oracle: ⟨ok̄|⊗⟨ok|⊗⟨wb,w| applied to Ψ^{n:31}.
            let v_bar = &lab_bar.outcome(wb).unwrap().vectors()[0];
            let v = &lab.outcome(w).unwrap().vectors()[0];
            let mem = SpaceLayout::new(vec![
                sc.final_layout().register("Wbar").unwrap().clone(),
                sc.final_layout().register("W").unwrap().clone(),
            ])
            .unwrap();
            let m = basis_state(&mem, &[("Wbar", wb), ("W", w)]).unwrap();
            let probe = crate::qcore::tensor(&crate::qcore::tensor(v_bar, v).unwrap(), &m)
                .unwrap()
                .reorder(sc.final_layout())
                .unwrap();
            let a = inner(&probe, &s).unwrap();
            assert!((a - Amplitude::new(coefficient, 0.0)).norm() < 1e-12, "{wb} {w}: {a}");
        }
    }

    #[test]
    fn fr_collapse_then_unitary_friend() {
        let sc = build_fr();
        let opts = RunOptions::default().collapse(ClockTime(0), "t").halt(ClockTime(11));
        let trace = run(&sc, &opts).unwrap();
        assert!((trace.entries[0].probability.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let s = trace.final_state();
        // |t⟩_L̄ |fail⟩_L with fail = (|↓,↓⟩ + |↑,↑⟩)/√2.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (z, expected) in [(DOWN, r), (UP, r)] {
            let a = amp(s, &[("R", "t"), ("Fbar", "t"), ("S", z), ("F", z)]);
            assert!((a - Amplitude::new(expected, 0.0)).norm() < 1e-12);
        }
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn run_errors() {
        let sc = build_fr();
        assert!(matches!(
            run(&sc, &RunOptions::default().halt(ClockTime(15))),
            Err(Error::UnknownTime(_))
        ));
        let mut opts = RunOptions::default();
        opts.overrides.insert(ClockTime(0), Policy::Collapse);
        assert!(matches!(run(&sc, &opts), Err(Error::CollapseChoice(_))));
        let mut opts = RunOptions::default();
        opts.collapse_choices.insert(ClockTime(0), "t".into());
        assert!(matches!(run(&sc, &opts), Err(Error::CollapseChoice(_))));
        // F̄ collapsed on h, then W̄ collapsed on `other` is impossible.
        let opts = RunOptions::default()
            .collapse(ClockTime(0), "h")
            .collapse(ClockTime(20), "other");
        assert!(run(&sc, &opts).unwrap_err().is_zero_probability());
    }

    #[test]
    fn scenario_validation() {
        let sc = build_fr();
        let mut steps = sc.steps().to_vec();
        steps.swap(0, 1);
        assert!(matches!(
            Scenario::new(sc.initial().clone(), steps, vec![]),
            Err(Error::InvalidScenario(_))
        ));
        let mut steps = sc.steps().to_vec();
        steps[1] = steps[1].at(ClockTime(0));
        assert!(Scenario::new(sc.initial().clone(), steps, vec![]).is_err());
        let bad_comm = vec![Communication {
            time: ClockTime(22),
            from: "Wbar".into(),
            to: "Nobody".into(),
        }];
        assert!(Scenario::new(sc.initial().clone(), sc.steps().to_vec(), bad_comm).is_err());
        // Dropping one preparation leaves outcome `t` without a state for S.
        let mut steps = sc.steps().to_vec();
        let first = &steps[0];
        steps[0] = Step::new(
            first.time(),
            first.measurement().clone(),
            first.policy(),
            vec![first.preps()[0].clone()],
        );
        assert!(Scenario::new(sc.initial().clone(), steps, vec![]).is_err());
    }

    #[test]
    fn unitary_trace_preserves_norm() {
        let sc = build_fr();
        let trace = run(&sc, &RunOptions::default()).unwrap();
        for e in &trace.entries {
            assert!((e.state.norm() - 1.0).abs() < 1e-12);
        }
    }

    fn random_chain(rng: &mut ChaCha8Rng, steps: usize) -> Scenario {
        let a = Register::new("A", ["0", "1", "2"]).unwrap();
        let b = Register::new("B", ["0", "1"]).unwrap();
        let layout = SpaceLayout::new(vec![a.clone(), b.clone()]).unwrap();
        let initial = random_state(rng, &layout);
        let mut out = Vec::new();
        for k in 0..steps {
            let reg = if rng.random_bool(0.5) { &a } else { &b };
            let space = SpaceLayout::new(vec![reg.clone()]).unwrap();
            let basis = random_basis(rng, &space);
            let m = Measurement::new(
                format!("O{k}"),
                space,
                basis.into_iter().enumerate().map(|(i, v)| (format!("m{i}"), vec![v])).collect(),
            )
            .unwrap();
            out.push(Step::new(ClockTime(10 * k as u32), m, Policy::Unitary, vec![]));
        }
        Scenario::new(initial, out, vec![]).unwrap()
    }

    #[test]
    fn halting_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let sc = random_chain(&mut rng, 3);
            let full = run(&sc, &RunOptions::default()).unwrap();
            for (k, step) in sc.steps().iter().enumerate() {
                let before = run(&sc, &RunOptions::default().halt(step.time())).unwrap();
                let dist = born_distribution(before.final_state(), step.measurement()).unwrap();
                let after = &full.entries[k].state;
                for (label, p) in dist.entries() {
                    // The memory record of step k is untouched by later steps on other registers.
                    let q = crate::semantics::rs_outcome_probability(full.final_state(), step.agent(), label).unwrap();
                    let r = crate::semantics::rs_outcome_probability(after, step.agent(), label).unwrap();
                    assert!((p - q).abs() < 1e-12);
                    assert!((p - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn swapped_scenario() {
        let sc = build_fr();
        let swapped = sc.with_swapped(ClockTime(20), ClockTime(30)).unwrap();
        assert_eq!(swapped.step_at(ClockTime(20)).unwrap().agent(), "W");
        assert_eq!(swapped.step_at(ClockTime(30)).unwrap().agent(), "Wbar");
        assert!(sc.with_swapped(ClockTime(0), ClockTime(10)).is_err());
        assert_eq!(sc.max_deviation(&build_fr()), Some(0.0));
    }
}
