use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::qcore::{Amplitude, StateVector};

use super::ledger::{Ledger, Polarity};
use super::{Scenario, Trace};

/// Branches with weight at or below this are not reported.
pub const PRUNE_TOL: f64 = 1e-12;

/// One term of a state expanded in the label bases of chosen memory registers.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub amplitude: Amplitude,
    /// (memory register, label), in the order the memories were requested.
    pub labels: Vec<(String, String)>,
    /// (agent, annotation) for agents whose memory appears in `labels`.
    pub annotations: Vec<(String, String)>,
    /// Normalized state of the remaining registers; `None` if nothing remains.
    pub residual: Option<StateVector>,
}

impl Branch {
    pub fn weight(&self) -> f64 {
        self.amplitude.norm_sqr()
    }

    pub fn label(&self, memory: &str) -> Option<&str> {
        self.labels.iter().find(|(m, _)| m == memory).map(|(_, l)| l.as_str())
    }

    pub fn annotation(&self, agent: &str) -> Option<&str> {
        self.annotations.iter().find(|(a, _)| a == agent).map(|(_, s)| s.as_str())
    }
}

/// Expand `state` over the label bases of `memories`.
///
/// Each residual is normalized with its first significant entry real and
/// positive, so the branch amplitude carries the relative phase. Branches
/// are ordered by the memory label indices.
pub fn branches(state: &StateVector, memories: &[&str]) -> Result<Vec<Branch>> {
    let layout = state.layout();
    let mut positions = Vec::with_capacity(memories.len());
    for (i, m) in memories.iter().enumerate() {
        if memories[..i].contains(m) {
            return Err(Error::OverlappingTargets(m.to_string()));
        }
        positions.push(layout.position(m).ok_or_else(|| Error::UnknownRegister(m.to_string()))?);
    }
    let rest = layout.without(memories);
    let rest_positions: Vec<usize> = rest.names().map(|n| layout.position(n).expect("subset")).collect();
    let zero = Amplitude::new(0.0, 0.0);
    let mut grouped: BTreeMap<Vec<usize>, Vec<Amplitude>> = BTreeMap::new();
    for (i, a) in state.amps().iter().enumerate() {
        let digits = layout.digits(i);
        let key: Vec<usize> = positions.iter().map(|&p| digits[p]).collect();
        let rest_digits: Vec<usize> = rest_positions.iter().map(|&p| digits[p]).collect();
        let j = rest.index_of_digits(&rest_digits);
        grouped.entry(key).or_insert_with(|| vec![zero; rest.dim()])[j] = *a;
    }
    let mut out = Vec::new();
    for (key, amps) in grouped {
        let weight: f64 = amps.iter().map(|x| x.norm_sqr()).sum();
        if weight <= PRUNE_TOL {
            continue;
        }
        let labels = memories
            .iter()
            .zip(&positions)
            .zip(&key)
            .map(|((m, &p), &d)| (m.to_string(), layout.registers()[p].label(d).to_string()))
            .collect();
        let (amplitude, residual) = if rest.is_empty() {
            (amps[0], None)
        } else {
            let norm = weight.sqrt();
            let lead = amps
                .iter()
                .find(|x| x.norm() > 1e-6 * norm)
                .expect("nonzero vector has a significant entry");
            let amplitude = norm * lead / lead.norm();
            let residual: Vec<Amplitude> = amps.iter().map(|x| x / amplitude).collect();
            (amplitude, Some(StateVector::new(rest.clone(), residual)?))
        };
        out.push(Branch {
            amplitude,
            labels,
            annotations: Vec::new(),
            residual,
        });
    }
    Ok(out)
}

/// Probability of every label tuple of `registers`, zero entries included.
pub fn joint_distribution(state: &StateVector, registers: &[&str]) -> Result<BTreeMap<Vec<String>, f64>> {
    let layout = state.layout();
    let positions: Vec<usize> = registers
        .iter()
        .map(|m| layout.position(m).ok_or_else(|| Error::UnknownRegister(m.to_string())))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    let sub_dims: Vec<usize> = positions.iter().map(|&p| layout.registers()[p].dim()).collect();
    let total: usize = sub_dims.iter().product();
    for k in 0..total {
        let mut rem = k;
        let mut key = vec![String::new(); positions.len()];
        for (slot, (&p, &d)) in positions.iter().zip(&sub_dims).enumerate().rev() {
            key[slot] = layout.registers()[p].label(rem % d).to_string();
            rem /= d;
        }
        out.insert(key, 0.0);
    }
    for (i, a) in state.amps().iter().enumerate() {
        let digits = layout.digits(i);
        let key: Vec<String> = positions
            .iter()
            .map(|&p| layout.registers()[p].label(digits[p]).to_string())
            .collect();
        *out.get_mut(&key).expect("all keys present") += a.norm_sqr();
    }
    Ok(out)
}

/// Memories of executed steps that no later executed step measures.
pub fn intact_memories(sc: &Scenario, trace: &Trace) -> Vec<String> {
    let executed = trace.executed();
    executed
        .iter()
        .filter(|&&i| {
            let agent = sc.steps()[i].agent();
            !executed
                .iter()
                .filter(|&&j| j > i)
                .any(|&j| sc.steps()[j].targets().contains(&agent))
        })
        .map(|&i| sc.steps()[i].agent().to_string())
        .collect()
}

/// Attach each recorded agent's outcome and active certainties.
pub fn annotate(branches: &mut [Branch], ledger: &Ledger) {
    for b in branches.iter_mut() {
        let labels: Vec<(&str, &str)> = b.labels.iter().map(|(m, l)| (m.as_str(), l.as_str())).collect();
        b.annotations = labels
            .iter()
            .map(|(agent, label)| {
                let mut text = format!("saw {label}");
                for s in ledger.active(agent, &labels) {
                    let verb = match s.polarity {
                        Polarity::Certain => "certain",
                        Polarity::CertainNot => "certain not",
                    };
                    text.push_str(&format!("; {verb} {}={} at {}", s.target.agent, s.target.outcome, s.target.time));
                }
                (agent.to_string(), text)
            })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registers::{basis_state, superpose, Register, SpaceLayout};
    use crate::scenario::{build_fr, run, ClockTime, RunOptions};

    #[test]
    fn fr_psi_11_branches() {
        let sc = build_fr();
        let trace = run(&sc, &RunOptions::default().halt(ClockTime(11))).unwrap();
        let mems = intact_memories(&sc, &trace);
        assert_eq!(mems, ["Fbar", "F"]);
        let bs = branches(trace.final_state(), &["Fbar", "F"]).unwrap();
        let got: Vec<(&str, &str, f64)> = bs
            .iter()
            .map(|b| (b.label("Fbar").unwrap(), b.label("F").unwrap(), b.weight()))
            .collect();
        assert_eq!(got.len(), 3);
        for ((fb, f, w), (efb, ef)) in got.iter().zip([("h", "-1/2"), ("t", "-1/2"), ("t", "+1/2")]) {
            assert_eq!((*fb, *f), (efb, ef));
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fr_psi_31_branches() {
        let sc = build_fr();
        let trace = run(&sc, &RunOptions::default()).unwrap();
        let mems = intact_memories(&sc, &trace);
        assert_eq!(mems, ["Wbar", "W"]);
        let bs = branches(trace.final_state(), &["Wbar", "W"]).unwrap();
        let expected = [
            ("ok", "ok", 1.0 / 12f64.sqrt()),
            ("ok", "fail", -1.0 / 12f64.sqrt()),
            ("fail", "ok", 1.0 / 12f64.sqrt()),
            ("fail", "fail", 3f64.sqrt() / 2.0),
        ];
        assert_eq!(bs.len(), 4);
        for (b, (wb, w, a)) in bs.iter().zip(expected) {
            assert_eq!((b.label("Wbar").unwrap(), b.label("W").unwrap()), (wb, w));
            assert!((b.amplitude - Amplitude::new(a, 0.0)).norm() < 1e-12);
        }
        let total: f64 = bs.iter().map(Branch::weight).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_state_is_one_branch() {
        let l = SpaceLayout::new(vec![
            Register::new("A", ["0", "1"]).unwrap(),
            Register::new("M", ["x", "y"]).unwrap(),
        ])
        .unwrap();
        let s = basis_state(&l, &[("A", "1"), ("M", "y")]).unwrap();
        let bs = branches(&s, &["M"]).unwrap();
        assert_eq!(bs.len(), 1);
        assert_eq!(bs[0].label("M"), Some("y"));
        assert!((bs[0].weight() - 1.0).abs() < 1e-15);
        let all = branches(&s, &["A", "M"]).unwrap();
        assert_eq!(all.len(), 1);
        assert!(all[0].residual.is_none());
    }

    #[test]
    fn branch_phase_sits_on_amplitude() {
        let l = SpaceLayout::new(vec![
            Register::new("A", ["0", "1"]).unwrap(),
            Register::new("M", ["x", "y"]).unwrap(),
        ])
        .unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = superpose(
            &l,
            &[
                (Amplitude::new(0.0, r), vec![("A", "0"), ("M", "x")]),
                (Amplitude::new(-r, 0.0), vec![("A", "1"), ("M", "y")]),
            ],
        )
        .unwrap();
        let bs = branches(&s, &["M"]).unwrap();
        assert!((bs[0].amplitude - Amplitude::new(0.0, r)).norm() < 1e-15);
        assert!((bs[1].amplitude - Amplitude::new(-r, 0.0)).norm() < 1e-15);
        let res = bs[1].residual.as_ref().unwrap();
        assert!((res.amps()[1] - Amplitude::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn joint_distribution_sums_to_one() {
        let sc = build_fr();
        let s = run(&sc, &RunOptions::default()).unwrap().final_state().clone();
        let d = joint_distribution(&s, &["Wbar", "W"]).unwrap();
        assert_eq!(d.len(), 9);
        assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d[&vec!["ok".to_string(), "ok".to_string()]] - 1.0 / 12.0).abs() < 1e-12);
    }
}
