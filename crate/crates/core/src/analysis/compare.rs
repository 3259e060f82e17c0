use crate::error::{Error, Result};
use crate::scenario::{run, ClockTime, Policy, RunOptions, Scenario};
use crate::semantics::{born_distribution, dilate, product_pointer_check, rs_conditional};

/// Tolerance for declaring the two calculi in agreement.
pub const AGREE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// (agent, outcome) conditioned on; under the relative-state calculus this
    /// is a projector on that agent's memory register.
    pub condition: (String, String),
    pub target: (String, String),
    pub p_collapse: f64,
    pub q_relative_state: f64,
    pub agree: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Whether every later measurement on the conditioning agent's lab uses a
    /// product-pointer basis, in which case the rows are expected to agree.
    pub predicted_agreement: bool,
}

impl ComparisonReport {
    pub fn all_agree(&self) -> bool {
        self.rows.iter().all(|r| r.agree)
    }

    pub fn max_difference(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.p_collapse - r.q_relative_state).abs())
            .fold(0.0, f64::max)
    }

    pub fn row(&self, target_outcome: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.target.1 == target_outcome)
    }
}

/// Tabulate `p(target | condition)` with the conditioning step collapsed and
/// everything else unitary, against `q(target | condition)` read from
/// memories of the all-unitary run.
pub fn compare_semantics(sc: &Scenario, condition: (&str, &str), target_agent: &str) -> Result<ComparisonReport> {
    let (agent, outcome) = condition;
    let ci = sc.step_index_of_agent(agent)?;
    let ti = sc.step_index_of_agent(target_agent)?;
    if ti <= ci {
        return Err(Error::InvalidScenario(format!(
            "`{target_agent}` must measure after `{agent}` to compare conditionals"
        )));
    }
    let cond_step = &sc.steps()[ci];
    let target_step = &sc.steps()[ti];

    let collapsed = run(
        sc,
        &RunOptions::all(sc, Policy::Unitary)
            .collapse(cond_step.time(), outcome)
            .halt(target_step.time()),
    )?;
    let p = born_distribution(collapsed.final_state(), target_step.measurement())?;

    let unitary = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(target_step.time().next()))?;
    let final_state = unitary.final_state();

    let before_cond = run(sc, &RunOptions::all(sc, Policy::Unitary).halt(cond_step.time()))?;
    let inner = dilate(cond_step.measurement(), before_cond.final_state().layout())?;
    let mut lab: Vec<&str> = cond_step.targets();
    lab.push(agent);
    let mut notes = Vec::new();
    let mut predicted = true;
    for s in &sc.steps()[ci + 1..=ti] {
        if !s.targets().iter().any(|r| lab.contains(r)) {
            continue;
        }
        let pointer = product_pointer_check(s.measurement(), &inner);
        predicted &= pointer;
        notes.push(format!(
            "{} measures {}'s lab {} pointer basis",
            s.agent(),
            agent,
            if pointer { "in a" } else { "outside the" }
        ));
    }
    if notes.is_empty() {
        notes.push(format!("no measurement on {agent}'s lab"));
    }
    let note = format!("q conditions on memory {agent}; {}", notes.join(", "));

    let rows = p
        .entries()
        .iter()
        .map(|(label, p)| {
            let q = rs_conditional(final_state, (agent, outcome), (target_agent, label))?;
            Ok(ComparisonRow {
                condition: (agent.to_string(), outcome.to_string()),
                target: (target_agent.to_string(), label.clone()),
                p_collapse: *p,
                q_relative_state: q,
                agree: (p - q).abs() <= AGREE_TOL,
                note: note.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        rows,
        predicted_agreement: predicted,
    })
}

/// Convenience for callers holding clock tags instead of agent names.
pub fn compare_at(sc: &Scenario, time: ClockTime, outcome: &str, target: ClockTime) -> Result<ComparisonReport> {
    let a = sc.step_at(time)?.agent().to_string();
    let t = sc.step_at(target)?.agent().to_string();
    compare_semantics(sc, (&a, outcome), &t)
}
