//! Certainty bookkeeping: statements derived from the quantum state (Q),
//! closed under transitivity between agents (C), and checked against the
//! outcomes recorded on each branch (S).

use std::fmt;

use crate::error::{Error, Result};
use crate::qcore::TOL;
use crate::semantics::{born_distribution, rs_conditional};

use super::branches::Branch;
use super::{execute_step, run, ClockTime, Communication, Policy, RunOptions, Scenario};

/// Outcome `outcome` of the step that `agent` performs at `time`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub time: ClockTime,
    pub agent: String,
    pub outcome: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}@{}", self.agent, self.outcome, self.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Certain,
    CertainNot,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Certain => "certain",
            Polarity::CertainNot => "certain-not",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Q,
    C,
    Communication,
    Observation,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Q => "Q",
            Rule::C => "C",
            Rule::Communication => "comm",
            Rule::Observation => "observation",
        })
    }
}

/// How Q evaluates a prediction about a later measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QMode {
    /// Collapse the holder's step, then run only the intermediate steps that
    /// leave the holder's lab alone, as if the experiment stopped there.
    #[default]
    Halted,
    /// Relative-state conditional on the memories of the complete unitary run.
    FullRun,
}

/// `holder`, from `time` on, is certain (or certain-not) of `target`
/// whenever `condition` is what happened.
#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyStatement {
    pub holder: String,
    pub time: ClockTime,
    pub condition: Event,
    pub target: Event,
    pub polarity: Polarity,
    pub rule: Rule,
    /// Indices of the statements this one was derived from.
    pub premises: Vec<usize>,
}

impl CertaintyStatement {
    fn key(&self) -> (&str, &Event, &Event, Polarity) {
        (&self.holder, &self.condition, &self.target, self.polarity)
    }

    /// Whether the statement applies on a branch recording `labels`.
    pub fn is_active(&self, labels: &[(&str, &str)]) -> bool {
        labels
            .iter()
            .any(|(m, l)| *m == self.condition.agent && *l == self.condition.outcome)
    }
}

impl fmt::Display for CertaintyStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} @{}: if {} then {} {} [{}",
            self.holder, self.time, self.condition, self.polarity, self.target, self.rule
        )?;
        if !self.premises.is_empty() {
            let p: Vec<String> = self.premises.iter().map(|i| format!("#{i}")).collect();
            write!(f, " from {}", p.join(","))?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    statements: Vec<CertaintyStatement>,
}

impl Ledger {
    pub fn new(statements: Vec<CertaintyStatement>) -> Result<Self> {
        let ledger = Self { statements };
        ledger.validate()?;
        Ok(ledger)
    }

    pub fn statements(&self) -> &[CertaintyStatement] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Premises must point to earlier statements, which rules out cycles.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.statements.iter().enumerate() {
            if s.premises.iter().any(|&p| p >= i) {
                return Err(Error::ProvenanceCycle(i));
            }
        }
        Ok(())
    }

    /// Statements held by `holder` whose condition is recorded in `labels`.
    pub fn active<'a>(&'a self, holder: &'a str, labels: &'a [(&str, &str)]) -> impl Iterator<Item = &'a CertaintyStatement> {
        self.statements
            .iter()
            .filter(move |s| s.holder == holder && s.is_active(labels))
    }

    fn contains(&self, s: &CertaintyStatement) -> bool {
        self.statements.iter().any(|t| t.key() == s.key())
    }

    fn push_new(&mut self, s: CertaintyStatement) -> bool {
        if self.contains(&s) {
            return false;
        }
        self.statements.push(s);
        true
    }
}

/// Probabilities `agent` assigns to the outcomes of `target_agent`'s step
/// given its own outcome. `None` when the prediction cannot be formed, e.g.
/// because the target's registers never come into being in the halted run.
pub fn q_distribution(
    sc: &Scenario,
    agent: &str,
    own_outcome: &str,
    target_agent: &str,
    mode: QMode,
) -> Result<Option<Vec<(String, f64)>>> {
    let xi = sc.step_index_of_agent(agent)?;
    let ti = sc.step_index_of_agent(target_agent)?;
    let x = &sc.steps()[xi];
    let t = &sc.steps()[ti];
    x.measurement().outcome(own_outcome)?;
    if ti == xi {
        return Ok(None);
    }
    if ti < xi {
        // A prediction about an earlier measurement reads that step's memory,
        // provided nothing up to and including the holder's step disturbed it.
        if sc.steps()[..=xi].iter().any(|s| s.targets().contains(&target_agent)) {
            return Ok(None);
        }
        let trace = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(x.time().next()))?;
        let state = trace.final_state();
        let probs = t
            .measurement()
            .labels()
            .into_iter()
            .map(|l| Ok((l.to_string(), rs_conditional(state, (agent, own_outcome), (target_agent, l))?)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Some(probs));
    }
    match mode {
        QMode::FullRun => {
            let trace = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(t.time().next()))?;
            let state = trace.final_state();
            let probs = t
                .measurement()
                .labels()
                .into_iter()
                .map(|l| Ok((l.to_string(), rs_conditional(state, (agent, own_outcome), (target_agent, l))?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(probs))
        }
        QMode::Halted => {
            let before = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(x.time()))?;
            let (mut state, _) = execute_step(before.final_state(), x, Policy::Collapse, Some(own_outcome))?;
            let mut lab: Vec<&str> = x.targets();
            lab.push(agent);
            for s in &sc.steps()[xi + 1..ti] {
                let available = s.targets().iter().all(|r| state.layout().contains(r));
                if !available || s.targets().iter().any(|r| lab.contains(r)) {
                    continue;
                }
                state = execute_step(&state, s, Policy::Unitary, None)?.0;
            }
            if !t.targets().iter().all(|r| state.layout().contains(r)) {
                return Ok(None);
            }
            let dist = born_distribution(&state, t.measurement())?;
            Ok(Some(dist.entries().to_vec()))
        }
    }
}

/// Q: statements `agent` draws about `target_agent`'s outcome after seeing
/// `own_outcome`. A certain outcome yields one `Certain` statement; otherwise
/// each outcome that was possible beforehand but now has probability zero
/// yields a `CertainNot` statement.
pub fn certainty_q(
    sc: &Scenario,
    agent: &str,
    own_outcome: &str,
    target_agent: &str,
    mode: QMode,
) -> Result<Vec<CertaintyStatement>> {
    let Some(probs) = q_distribution(sc, agent, own_outcome, target_agent, mode)? else {
        return Ok(Vec::new());
    };
    let x = sc.step_of_agent(agent)?;
    let t = sc.step_of_agent(target_agent)?;
    let statement = |outcome: &str, polarity| CertaintyStatement {
        holder: agent.to_string(),
        time: x.time().next(),
        condition: Event {
            time: x.time(),
            agent: agent.to_string(),
            outcome: own_outcome.to_string(),
        },
        target: Event {
            time: t.time(),
            agent: target_agent.to_string(),
            outcome: outcome.to_string(),
        },
        polarity,
        rule: Rule::Q,
        premises: Vec::new(),
    };
    if let Some((label, _)) = probs.iter().find(|(_, p)| *p >= 1.0 - TOL) {
        return Ok(vec![statement(label, Polarity::Certain)]);
    }
    let unitary = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(t.time()))?;
    let prior = born_distribution(unitary.final_state(), t.measurement())?;
    Ok(probs
        .iter()
        .filter(|(label, p)| *p <= TOL && prior.get(label).is_some_and(|q| q > TOL))
        .map(|(label, _)| statement(label, Polarity::CertainNot))
        .collect())
}

/// Q statements for every agent, possible outcome and other step.
pub fn derive_q_ledger(sc: &Scenario, mode: QMode) -> Result<Ledger> {
    let unitary = run(sc, &RunOptions::all(sc, Policy::Unitary))?;
    let mut ledger = Ledger::default();
    for (i, x) in sc.steps().iter().enumerate() {
        let before = if i == 0 {
            &unitary.initial
        } else {
            &unitary.entries[i - 1].state
        };
        let dist = born_distribution(before, x.measurement())?;
        for (outcome, p) in dist.entries() {
            if *p <= TOL {
                continue;
            }
            for t in sc.steps() {
                if t.agent() == x.agent() {
                    continue;
                }
                for s in certainty_q(sc, x.agent(), outcome, t.agent(), mode)? {
                    ledger.push_new(s);
                }
            }
        }
    }
    Ok(ledger)
}

/// Close the ledger under the C rule and communication.
///
/// C: if X, given c, is certain that Y observed o, and Y, having observed o,
/// holds a statement about T, then X given c holds it too. Communication
/// hands every statement the sender holds by then to the receiver.
pub fn chain_certainty(ledger: &Ledger, comms: &[Communication]) -> Result<Ledger> {
    ledger.validate()?;
    let mut out = ledger.clone();
    loop {
        let mut added = false;
        let n = out.statements.len();
        for a in 0..n {
            if out.statements[a].polarity != Polarity::Certain {
                continue;
            }
            for b in 0..n {
                let (sa, sb) = (&out.statements[a], &out.statements[b]);
                if sb.holder != sb.condition.agent || sb.condition != sa.target {
                    continue;
                }
                if sb.target.agent == sa.condition.agent {
                    continue;
                }
                let derived = CertaintyStatement {
                    holder: sa.holder.clone(),
                    time: sa.time,
                    condition: sa.condition.clone(),
                    target: sb.target.clone(),
                    polarity: sb.polarity,
                    rule: Rule::C,
                    premises: vec![a, b],
                };
                added |= out.push_new(derived);
            }
        }
        for c in comms {
            let n = out.statements.len();
            for i in 0..n {
                let s = &out.statements[i];
                if s.holder != c.from || s.time > c.time {
                    continue;
                }
                let moved = CertaintyStatement {
                    holder: c.to.clone(),
                    time: c.time,
                    rule: Rule::Communication,
                    premises: vec![i],
                    ..s.clone()
                };
                added |= out.push_new(moved);
            }
        }
        if !added {
            break;
        }
    }
    out.validate()?;
    Ok(out)
}

/// Q ledger closed under C and communication.
pub fn closed_ledger(sc: &Scenario, mode: QMode) -> Result<Ledger> {
    chain_certainty(&derive_q_ledger(sc, mode)?, sc.comms())
}

/// An agent on one branch holding incompatible beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub branch: usize,
    pub labels: Vec<(String, String)>,
    pub weight: f64,
    pub agent: String,
    pub observed: String,
    /// Indices into the ledger of the statements involved.
    pub statements: Vec<usize>,
    pub description: String,
}

/// S: on each branch, an agent may not be certain of two different
/// outcomes, certain of and certain-not of the same outcome, or certain of
/// something its own record contradicts.
pub fn check_single_value(branches: &[Branch], ledger: &Ledger) -> Vec<Violation> {
    let mut out = Vec::new();
    for (bi, branch) in branches.iter().enumerate() {
        let labels: Vec<(&str, &str)> = branch.labels.iter().map(|(m, l)| (m.as_str(), l.as_str())).collect();
        for (agent, observed) in &labels {
            let active: Vec<(usize, &CertaintyStatement)> = ledger
                .statements
                .iter()
                .enumerate()
                .filter(|(_, s)| s.holder == *agent && s.is_active(&labels))
                .collect();
            let mut involved = Vec::new();
            let mut reasons = Vec::new();
            for (i, s) in &active {
                if s.target.agent == *agent {
                    let clash = match s.polarity {
                        Polarity::Certain => s.target.outcome != *observed,
                        Polarity::CertainNot => s.target.outcome == *observed,
                    };
                    if clash {
                        involved.push(*i);
                        reasons.push(format!("{} {} but saw {observed}", s.polarity, s.target));
                    }
                }
                for (j, t) in &active {
                    if j <= i || s.target.agent != t.target.agent || s.target.time != t.target.time {
                        continue;
                    }
                    let clash = match (s.polarity, t.polarity) {
                        (Polarity::Certain, Polarity::Certain) => s.target.outcome != t.target.outcome,
                        (Polarity::CertainNot, Polarity::CertainNot) => false,
                        _ => s.target.outcome == t.target.outcome,
                    };
                    if clash {
                        involved.extend([*i, *j]);
                        reasons.push(format!("{} {} and {} {}", s.polarity, s.target, t.polarity, t.target));
                    }
                }
            }
            if !involved.is_empty() {
                involved.sort_unstable();
                involved.dedup();
                out.push(Violation {
                    branch: bi,
                    labels: branch.labels.clone(),
                    weight: branch.weight(),
                    agent: agent.to_string(),
                    observed: observed.to_string(),
                    statements: involved,
                    description: reasons.join("; "),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{branches, build_fr, intact_memories};

    fn find<'a>(l: &'a Ledger, holder: &str, cond: &str, target: &str) -> Vec<&'a CertaintyStatement> {
        l.statements()
            .iter()
            .filter(|s| {
                s.holder == holder
                    && format!("{}={}", s.condition.agent, s.condition.outcome) == cond
                    && format!("{}={}", s.target.agent, s.target.outcome) == target
            })
            .collect()
    }

    #[test]
    fn q_fbar_tails_predicts_fail() {
        let sc = build_fr();
        let probs = q_distribution(&sc, "Fbar", "t", "W", QMode::Halted).unwrap().unwrap();
        let ok = probs.iter().find(|(l, _)| l == "ok").unwrap().1;
        assert!(ok.abs() < 1e-12);
        let st = certainty_q(&sc, "Fbar", "t", "W", QMode::Halted).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].polarity, Polarity::Certain);
        assert_eq!(st[0].target.outcome, "fail");
    }

    #[test]
    fn q_fbar_heads_is_undecided() {
        let sc = build_fr();
        let probs = q_distribution(&sc, "Fbar", "h", "W", QMode::Halted).unwrap().unwrap();
        // Oracle: |⟨ok|↓,↓⟩|² = 1/2.
        let ok = probs.iter().find(|(l, _)| l == "ok").unwrap().1;
        assert!((ok - 0.5).abs() < 1e-12);
        assert!(certainty_q(&sc, "Fbar", "h", "W", QMode::Halted).unwrap().is_empty());
    }

    #[test]
    fn full_run_q_gives_one_sixth() {
        let sc = build_fr();
        let probs = q_distribution(&sc, "Fbar", "t", "W", QMode::FullRun).unwrap().unwrap();
        let ok = probs.iter().find(|(l, _)| l == "ok").unwrap().1;
        assert!((ok - 1.0 / 6.0).abs() < 1e-12);
        assert!(certainty_q(&sc, "Fbar", "t", "W", QMode::FullRun).unwrap().is_empty());
    }

    #[test]
    fn q_zero_probability_outcome_errors() {
        let sc = build_fr();
        let err = q_distribution(&sc, "Wbar", "other", "W", QMode::Halted).unwrap_err();
        assert!(err.is_zero_probability());
    }

    #[test]
    fn retrodictive_q() {
        let sc = build_fr();
        let st = certainty_q(&sc, "F", "+1/2", "Fbar", QMode::Halted).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].target.outcome, "t");
        let st = certainty_q(&sc, "Wbar", "ok", "F", QMode::Halted).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].target.outcome, "+1/2");
        // F̄'s memory has been measured by W̄ itself.
        assert!(certainty_q(&sc, "Wbar", "ok", "Fbar", QMode::Halted).unwrap().is_empty());
    }

    #[test]
    fn chain_reaches_w() {
        let sc = build_fr();
        let ledger = closed_ledger(&sc, QMode::Halted).unwrap();
        let wbar = find(&ledger, "Wbar", "Wbar=ok", "W=fail");
        assert_eq!(wbar.len(), 1);
        assert_eq!(wbar[0].rule, Rule::C);
        let w = find(&ledger, "W", "Wbar=ok", "W=fail");
        assert_eq!(w.len(), 1);
        assert!(matches!(w[0].rule, Rule::Communication | Rule::C));
        assert_eq!(w[0].time, ClockTime(22));
        assert!(!find(&ledger, "Wbar", "Wbar=ok", "Fbar=t").is_empty());
    }

    #[test]
    fn chaining_is_idempotent() {
        let sc = build_fr();
        let once = closed_ledger(&sc, QMode::Halted).unwrap();
        let twice = chain_certainty(&once, sc.comms()).unwrap();
        assert_eq!(once, twice);
        let empty = chain_certainty(&Ledger::default(), sc.comms()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn cyclic_provenance_rejected() {
        let s = CertaintyStatement {
            holder: "A".into(),
            time: ClockTime(1),
            condition: Event {
                time: ClockTime(0),
                agent: "A".into(),
                outcome: "x".into(),
            },
            target: Event {
                time: ClockTime(10),
                agent: "B".into(),
                outcome: "y".into(),
            },
            polarity: Polarity::Certain,
            rule: Rule::C,
            premises: vec![0],
        };
        assert_eq!(Ledger::new(vec![s]).unwrap_err(), Error::ProvenanceCycle(0));
    }

    #[test]
    fn fr_single_violation() {
        let sc = build_fr();
        let ledger = closed_ledger(&sc, QMode::Halted).unwrap();
        let trace = run(&sc, &RunOptions::default()).unwrap();
        let mems = intact_memories(&sc, &trace);
        let mems: Vec<&str> = mems.iter().map(String::as_str).collect();
        let bs = branches(trace.final_state(), &mems).unwrap();
        let v = check_single_value(&bs, &ledger);
        assert_eq!(v.len(), 1, "{v:#?}");
        assert_eq!(v[0].agent, "W");
        assert_eq!(v[0].observed, "ok");
        assert_eq!(v[0].labels, [("Wbar".to_string(), "ok".to_string()), ("W".to_string(), "ok".to_string())]);
        assert!((v[0].weight - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn no_violation_before_w() {
        let sc = build_fr();
        let ledger = closed_ledger(&sc, QMode::Halted).unwrap();
        for halt in [11, 21] {
            let trace = run(&sc, &RunOptions::default().halt(ClockTime(halt))).unwrap();
            let mems = intact_memories(&sc, &trace);
            let mems: Vec<&str> = mems.iter().map(String::as_str).collect();
            let bs = branches(trace.final_state(), &mems).unwrap();
            assert!(check_single_value(&bs, &ledger).is_empty());
        }
    }

    #[test]
    fn full_run_ledger_has_no_violation() {
        let sc = build_fr();
        let ledger = closed_ledger(&sc, QMode::FullRun).unwrap();
        let trace = run(&sc, &RunOptions::default()).unwrap();
        let bs = branches(trace.final_state(), &["Wbar", "W"]).unwrap();
        assert!(check_single_value(&bs, &ledger).is_empty());
        assert!(check_single_value(&bs, &Ledger::default()).is_empty());
    }

    #[test]
    fn annotations_are_deterministic() {
        let sc = build_fr();
        let ledger = closed_ledger(&sc, QMode::Halted).unwrap();
        let trace = run(&sc, &RunOptions::default().halt(ClockTime(11))).unwrap();
        let mut a = branches(trace.final_state(), &["Fbar", "F"]).unwrap();
        let mut b = a.clone();
        crate::scenario::annotate(&mut a, &ledger);
        crate::scenario::annotate(&mut b, &ledger);
        assert_eq!(a, b);
        let tails = a.iter().find(|b| b.label("Fbar") == Some("t")).unwrap();
        assert!(tails.annotation("Fbar").unwrap().contains("certain W=fail"));
    }
}
