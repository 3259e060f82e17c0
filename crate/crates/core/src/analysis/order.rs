use crate::error::{Error, Result};
use crate::scenario::{joint_distribution, run, ClockTime, Policy, RunOptions, Scenario, Step};

fn footprint(step: &Step) -> Vec<&str> {
    let mut out = step.targets();
    out.push(step.agent());
    out.extend(step.prep_registers().into_iter().map(|r| r.name()));
    out
}

/// Run the scenario with the contents of two time slots exchanged, all
/// steps unitary, and return the largest change in any joint probability of
/// all memory registers.
pub fn order_invariance(sc: &Scenario, a: ClockTime, b: ClockTime) -> Result<f64> {
    let sa = sc.step_at(a)?;
    let sb = sc.step_at(b)?;
    if a == b {
        return Ok(0.0);
    }
    for (x, y) in [(sa, sb), (sb, sa)] {
        let fy = footprint(y);
        if let Some(r) = x.targets().into_iter().find(|r| fy.contains(r)) {
            return Err(Error::OverlappingTargets(r.to_string()));
        }
    }
    let swapped = sc.with_swapped(a, b)?;
    let mut memories: Vec<&str> = sc.steps().iter().map(Step::agent).collect();
    memories.sort_unstable();
    let original = run(sc, &RunOptions::all(sc, Policy::Unitary))?;
    let reordered = run(&swapped, &RunOptions::all(&swapped, Policy::Unitary))?;
    let d1 = joint_distribution(original.final_state(), &memories)?;
    let d2 = joint_distribution(reordered.final_state(), &memories)?;
    Ok(d1
        .iter()
        .map(|(k, p)| (p - d2.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_fr;

    #[test]
    fn fr_wigners_commute() {
        let sc = build_fr();
        assert!(order_invariance(&sc, ClockTime(20), ClockTime(30)).unwrap() <= 1e-12);
    }

    #[test]
    fn same_slot_is_zero() {
        let sc = build_fr();
        assert_eq!(order_invariance(&sc, ClockTime(30), ClockTime(30)).unwrap(), 0.0);
        assert!(matches!(order_invariance(&sc, ClockTime(30), ClockTime(40)), Err(Error::UnknownTime(_))));
    }

    #[test]
    fn overlapping_steps_rejected() {
        let sc = build_fr();
        assert!(matches!(
            order_invariance(&sc, ClockTime(10), ClockTime(30)),
            Err(Error::OverlappingTargets(_))
        ));
    }
}
