use crate::error::{Error, Result};
use crate::qcore::{inner, tensor, Amplitude, StateVector};
use crate::registers::basis_state;
use crate::scenario::{
    build_fr, execute_step, joint_distribution, run, ClockTime, Policy, RunOptions, Scenario, COIN, FRIEND_BAR,
    WIGNER, WIGNER_BAR,
};
use crate::semantics::{dilate, label_projector, rs_conditional, rs_joint, Measurement};

use super::compare::{compare_semantics, ComparisonReport};

/// Register holding the heads/tails reading of F̄'s whole lab after W̄ acted.
pub const REMEASURE: &str = "Wbarbar";
/// Register copying F̄'s memory before W̄ acts.
pub const RECORD: &str = "FbarRecord";

#[derive(Debug, Clone, PartialEq)]
pub struct Clarification {
    /// Rows for F̄ = t against W's outcomes, conditioning on F̄'s memory.
    pub report: ComparisonReport,
    /// p(ok_W | t_F̄) with F̄'s measurement collapsed.
    pub p_ok_given_t: f64,
    /// q(ok_W | t) conditioning on F̄'s memory register in the full unitary run.
    pub q_ok_given_record_t: f64,
    /// q_Φ(ok_W, t_L̄): W's ok jointly with a heads/tails reading of F̄'s lab
    /// taken after W̄'s measurement.
    pub q_joint_ok_t: f64,
    pub q_joint_fail_t: f64,
    /// Probability of the tails reading itself.
    pub q_t: f64,
    pub q_ok_given_t: f64,
    /// Joint distribution of (F̄ record taken before W̄, tails reading after W̄).
    pub record_vs_remeasure: Vec<(String, String, f64)>,
}

/// Heads/tails measurement of F̄'s lab on (R, F̄): h = |h,h⟩, t = |t,t⟩,
/// other = the mismatched pairs.
pub fn lab_readout(agent: &str, sc: &Scenario) -> Result<Measurement> {
    let lab = sc.final_layout().select(&[COIN, FRIEND_BAR])?;
    let e = |x: &str, y: &str| basis_state(&lab, &[(COIN, x), (FRIEND_BAR, y)]);
    Measurement::new(
        agent,
        lab.clone(),
        vec![
            ("h".into(), vec![e("h", "h")?]),
            ("t".into(), vec![e("t", "t")?]),
            ("other".into(), vec![e("h", "t")?, e("t", "h")?]),
        ],
    )
}

/// The protocol's conditional probabilities for F̄ = t and W = ok under both
/// calculi, including the reading of F̄'s lab by a further super-observer.
pub fn bw_clarification() -> Result<Clarification> {
    let sc = build_fr();
    let report = compare_semantics(&sc, (FRIEND_BAR, "t"), WIGNER)?;
    let row = report.row("ok").ok_or_else(|| Error::UnknownOutcome {
        agent: WIGNER.into(),
        outcome: "ok".into(),
    })?;
    let p_ok_given_t = row.p_collapse;
    let q_ok_given_record_t = row.q_relative_state;

    let readout = lab_readout(REMEASURE, &sc)?;
    let w_step = sc.step_of_agent(WIGNER)?;
    let phi = run(&sc, &RunOptions::default().halt(ClockTime(21)))?.final_state().clone();
    let read = dilate(&readout, phi.layout())?.apply(&phi)?;
    let full = execute_step(&read, w_step, Policy::Unitary, None)?.0;
    let tails = label_projector(full.layout().register(REMEASURE)?, "t")?;
    let w_reg = full.layout().register(WIGNER)?.clone();
    let q_joint_ok_t = rs_joint(&full, &[tails.clone(), label_projector(&w_reg, "ok")?])?;
    let q_joint_fail_t = rs_joint(&full, &[tails.clone(), label_projector(&w_reg, "fail")?])?;
    let q_t = rs_joint(&full, &[tails])?;
    let q_ok_given_t = rs_conditional(&full, (REMEASURE, "t"), (WIGNER, "ok"))?;

    let at_11 = run(&sc, &RunOptions::default().halt(ClockTime(11)))?.final_state().clone();
    let fbar_memory = at_11.layout().register(FRIEND_BAR)?.clone();
    let copy = Measurement::computational(RECORD, &fbar_memory);
    let recorded = dilate(&copy, at_11.layout())?.apply(&at_11)?;
    let after_wbar = execute_step(&recorded, sc.step_of_agent(WIGNER_BAR)?, Policy::Unitary, None)?.0;
    let reread = dilate(&readout, after_wbar.layout())?.apply(&after_wbar)?;
    let record_vs_remeasure = joint_distribution(&reread, &[RECORD, REMEASURE])?
        .into_iter()
        .map(|(k, p)| (k[0].clone(), k[1].clone(), p))
        .collect();

    Ok(Clarification {
        report,
        p_ok_given_t,
        q_ok_given_record_t,
        q_joint_ok_t,
        q_joint_fail_t,
        q_t,
        q_ok_given_t,
        record_vs_remeasure,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealeyTerm {
    /// F̄'s lab reading: `h` for |h,h⟩, `t` for |t,t⟩.
    pub lab_bar: String,
    pub wigner_bar: String,
    /// F's lab in W's basis.
    pub lab: String,
    pub closed_form: f64,
    pub extracted: Amplitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealeyDecomposition {
    pub terms: Vec<HealeyTerm>,
    pub max_coefficient_deviation: f64,
    /// Distance between Φ and the expansion rebuilt from extracted coefficients.
    pub recontraction_deviation: f64,
    /// Distance between Φ and the expansion rebuilt from the closed forms.
    pub closed_form_deviation: f64,
    pub norm: f64,
}

fn closed_form(lab_bar: &str, wigner_bar: &str, lab: &str) -> f64 {
    let a = (5.0f64 / 6.0).sqrt() / 2f64.sqrt();
    let b = 1.0 / (6f64.sqrt() * 2.0);
    match (lab_bar, wigner_bar, lab) {
        (_, "fail", "fail") => a * 3.0 / 10f64.sqrt(),
        ("h", "ok", "fail") => -a / 10f64.sqrt(),
        ("t", "ok", "fail") => a / 10f64.sqrt(),
        (_, "fail", "ok") => b,
        ("h", "ok", "ok") => b,
        ("t", "ok", "ok") => -b,
        _ => unreachable!("only h/t, ok/fail combinations are expanded"),
    }
}

/// Expand the post-W̄ state Φ over F̄'s lab in {h,t}, W̄'s memory in
/// {fail, ok} and F's lab in W's {fail, ok} basis, and check it against the
/// closed-form coefficients.
pub fn healey_decomposition(phi: &StateVector) -> Result<HealeyDecomposition> {
    let sc = build_fr();
    let expected = run(&sc, &RunOptions::default().halt(ClockTime(21)))?;
    if !phi.layout().is_permutation_of(expected.final_state().layout()) {
        return Err(Error::LayoutMismatch(format!(
            "expected a state on {}, got {}",
            expected.final_state().layout(),
            phi.layout()
        )));
    }
    phi.ensure_normalized()?;
    let w = sc.step_of_agent(WIGNER)?.measurement().clone();
    let lab_bar_space = phi.layout().select(&[COIN, FRIEND_BAR])?;
    let memory_space = phi.layout().select(&[WIGNER_BAR])?;
    let mut terms = Vec::new();
    let mut rebuilt = StateVector::zero(phi.layout());
    let mut rebuilt_closed = StateVector::zero(phi.layout());
    for lab_bar in ["h", "t"] {
        let x = basis_state(&lab_bar_space, &[(COIN, lab_bar), (FRIEND_BAR, lab_bar)])?;
        for wigner_bar in ["fail", "ok"] {
            let m = basis_state(&memory_space, &[(WIGNER_BAR, wigner_bar)])?;
            for lab in ["fail", "ok"] {
                let l = &w.outcome(lab)?.vectors()[0];
                let probe = tensor(&tensor(&x, l)?, &m)?.reorder(phi.layout())?;
                let extracted = inner(&probe, phi)?;
                let cf = closed_form(lab_bar, wigner_bar, lab);
                rebuilt = rebuilt.add(&probe.scaled(extracted))?;
                rebuilt_closed = rebuilt_closed.add(&probe.scaled(Amplitude::new(cf, 0.0)))?;
                terms.push(HealeyTerm {
                    lab_bar: lab_bar.into(),
                    wigner_bar: wigner_bar.into(),
                    lab: lab.into(),
                    closed_form: cf,
                    extracted,
                });
            }
        }
    }
    let recontraction_deviation = rebuilt.max_deviation(phi)?;
    if recontraction_deviation > 1e-9 {
        return Err(Error::Unsupported(format!(
            "state has weight outside the lab product structure (deviation {recontraction_deviation:.3e})"
        )));
    }
    let max_coefficient_deviation = terms
        .iter()
        .map(|t| (t.extracted - Amplitude::new(t.closed_form, 0.0)).norm())
        .fold(0.0, f64::max);
    let norm = terms.iter().map(|t| t.extracted.norm_sqr()).sum::<f64>().sqrt();
    Ok(HealeyDecomposition {
        terms,
        max_coefficient_deviation,
        recontraction_deviation,
        closed_form_deviation: rebuilt_closed.max_deviation(phi)?,
        norm,
    })
}

/// Φ, the protocol state right after W̄'s measurement.
pub fn fr_phi() -> Result<StateVector> {
    let sc = build_fr();
    Ok(run(&sc, &RunOptions::default().halt(ClockTime(21)))?.final_state().clone())
}
