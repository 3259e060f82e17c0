//! Seeded sampling of protocol outcomes.
//!
//! Collapse steps draw their outcome when they execute. Unitary steps leave
//! their record in a memory register, and those registers are read out
//! jointly once the protocol has finished. Each sample uses its own ChaCha
//! stream keyed by (seed, sample index), so counts do not depend on how the
//! work is split across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qcore::TOL;
use crate::scenario::{execute_step, joint_distribution, ClockTime, Policy, Scenario};
use crate::semantics::born_distribution;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Collapse {
        slot: usize,
        /// (outcome index, probability, subtree) for outcomes with nonzero weight.
        children: Vec<(usize, f64, Node)>,
    },
    Leaf {
        slots: Vec<usize>,
        outcomes: Vec<(Vec<usize>, f64)>,
    },
}

/// Exact outcome distribution of a scenario under a fixed set of policies.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    agents: Vec<String>,
    labels: Vec<Vec<String>>,
    root: Node,
}

impl OutcomeModel {
    pub fn new(sc: &Scenario, overrides: &BTreeMap<ClockTime, Policy>) -> Result<Self> {
        for t in overrides.keys() {
            sc.step_at(*t)?;
        }
        let policies: Vec<Policy> = sc
            .steps()
            .iter()
            .map(|s| overrides.get(&s.time()).copied().unwrap_or(s.policy()))
            .collect();
        let root = build(sc, &policies, sc.initial().clone(), 0)?;
        Ok(Self {
            agents: sc.steps().iter().map(|s| s.agent().to_string()).collect(),
            labels: sc
                .steps()
                .iter()
                .map(|s| s.measurement().labels().into_iter().map(String::from).collect())
                .collect(),
            root,
        })
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    /// Probability of every outcome tuple (indices in step order) with nonzero weight.
    pub fn distribution(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut out = BTreeMap::new();
        let mut key = vec![0; self.agents.len()];
        collect(&self.root, 1.0, &mut key, &mut out);
        out
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut key = vec![0; self.agents.len()];
        let mut node = &self.root;
        loop {
            match node {
                Node::Collapse { slot, children } => {
                    let i = pick(rng.random::<f64>(), children.iter().map(|c| c.1));
                    key[*slot] = children[i].0;
                    node = &children[i].2;
                }
                Node::Leaf { slots, outcomes } => {
                    let i = pick(rng.random::<f64>(), outcomes.iter().map(|o| o.1));
                    for (s, v) in slots.iter().zip(&outcomes[i].0) {
                        key[*s] = *v;
                    }
                    return key;
                }
            }
        }
    }
}

fn pick(u: f64, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

fn collect(node: &Node, weight: f64, key: &mut Vec<usize>, out: &mut BTreeMap<Vec<usize>, f64>) {
    match node {
        Node::Collapse { slot, children } => {
            for (i, p, child) in children {
                key[*slot] = *i;
                collect(child, weight * p, key, out);
            }
        }
        Node::Leaf { slots, outcomes } => {
            for (values, p) in outcomes {
                for (s, v) in slots.iter().zip(values) {
                    key[*s] = *v;
                }
                *out.entry(key.clone()).or_insert(0.0) += weight * p;
            }
        }
    }
}

fn build(sc: &Scenario, policies: &[Policy], mut state: crate::qcore::StateVector, from: usize) -> Result<Node> {
    for (i, step) in sc.steps().iter().enumerate().skip(from) {
        if policies[i] == Policy::Unitary {
            state = execute_step(&state, step, Policy::Unitary, None)?.0;
            continue;
        }
        let dist = born_distribution(&state, step.measurement())?;
        let mut children = Vec::new();
        for (k, (label, p)) in dist.entries().iter().enumerate() {
            if *p <= TOL {
                continue;
            }
            let (next, _) = execute_step(&state, step, Policy::Collapse, Some(label))?;
            children.push((k, *p, build(sc, policies, next, i + 1)?));
        }
        return Ok(Node::Collapse { slot: i, children });
    }
    let slots: Vec<usize> = (0..sc.steps().len()).filter(|&i| policies[i] == Policy::Unitary).collect();
    let names: Vec<&str> = slots.iter().map(|&i| sc.steps()[i].agent()).collect();
    let joint = joint_distribution(&state, &names)?;
    let outcomes = joint
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(labels, p)| {
            let idx = labels
                .iter()
                .zip(&slots)
                .map(|(l, &s)| sc.steps()[s].measurement().outcome_index(l))
                .collect::<Result<Vec<_>>>()?;
            Ok((idx, p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Node::Leaf { slots, outcomes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    agents: Vec<String>,
    labels: Vec<Vec<String>>,
    counts: BTreeMap<Vec<usize>, u64>,
    n: u64,
    seed: u64,
}

impl EmpiricalDistribution {
    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    /// Counts keyed by outcome indices in step order.
    pub fn counts(&self) -> &BTreeMap<Vec<usize>, u64> {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels_of(&self, key: &[usize]) -> Vec<&str> {
        key.iter()
            .zip(&self.labels)
            .map(|(&i, ls)| ls[i].as_str())
            .collect()
    }

    /// Counts over a subset of agents, keyed by their labels.
    pub fn marginal(&self, agents: &[&str]) -> Result<BTreeMap<Vec<String>, u64>> {
        let slots = self.slots(agents)?;
        let mut out = BTreeMap::new();
        for (key, c) in &self.counts {
            let k: Vec<String> = slots.iter().map(|&s| self.labels[s][key[s]].clone()).collect();
            *out.entry(k).or_insert(0) += c;
        }
        Ok(out)
    }

    fn slots(&self, agents: &[&str]) -> Result<Vec<usize>> {
        agents
            .iter()
            .map(|a| {
                self.agents
                    .iter()
                    .position(|x| x == a)
                    .ok_or_else(|| Error::UnknownRegister(a.to_string()))
            })
            .collect()
    }
}

/// Sample `n` protocol runs under the scenario's own policies.
pub fn mc_sample(sc: &Scenario, n: u64, seed: u64) -> Result<EmpiricalDistribution> {
    mc_sample_with(sc, &BTreeMap::new(), n, seed)
}

pub fn mc_sample_with(
    sc: &Scenario,
    overrides: &BTreeMap<ClockTime, Policy>,
    n: u64,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    if n == 0 {
        return Err(Error::Empty("sample count must be at least 1".into()));
    }
    let model = OutcomeModel::new(sc, overrides)?;
    let counts = (0..n)
        .into_par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<Vec<usize>, u64>, i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            *acc.entry(model.sample(&mut rng)).or_insert(0) += 1;
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    Ok(EmpiricalDistribution {
        agents: model.agents.clone(),
        labels: model.labels.clone(),
        counts,
        n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub labels: Vec<String>,
    pub probability: f64,
    pub frequency: f64,
    pub sigma: f64,
    /// |frequency − probability| in units of σ (0 when σ = 0 and they match).
    pub deviation_sigmas: f64,
    pub within: bool,
}

/// Compare empirical frequencies over `agents` with exact probabilities,
/// accepting deviations up to `bands` binomial standard errors.
pub fn sigma_bands(
    emp: &EmpiricalDistribution,
    exact: &BTreeMap<Vec<String>, f64>,
    agents: &[&str],
    bands: f64,
) -> Result<Vec<BandRow>> {
    let counts = emp.marginal(agents)?;
    let n = emp.n as f64;
    let mut keys: Vec<&Vec<String>> = exact.keys().chain(counts.keys()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .into_iter()
        .map(|k| {
            let p = exact.get(k).copied().unwrap_or(0.0);
            let f = counts.get(k).copied().unwrap_or(0) as f64 / n;
            let sigma = (p * (1.0 - p) / n).max(0.0).sqrt();
            let diff = (f - p).abs();
            let deviation_sigmas = if sigma > 0.0 {
                diff / sigma
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            BandRow {
                labels: k.clone(),
                probability: p,
                frequency: f,
                sigma,
                deviation_sigmas,
                within: deviation_sigmas <= bands,
            }
        })
        .collect())
}

/// Exact marginal over `agents`, keyed by labels.
pub fn exact_marginal(
    sc: &Scenario,
    overrides: &BTreeMap<ClockTime, Policy>,
    agents: &[&str],
) -> Result<BTreeMap<Vec<String>, f64>> {
    let model = OutcomeModel::new(sc, overrides)?;
    let slots: Vec<usize> = agents
        .iter()
        .map(|a| {
            model
                .agents
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| Error::UnknownRegister(a.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (key, p) in model.distribution() {
        let k: Vec<String> = slots.iter().map(|&s| model.labels[s][key[s]].clone()).collect();
        *out.entry(k).or_insert(0.0) += p;
    }
    Ok(out)
}

/// Total-variation distance between empirical and exact marginals.
pub fn total_variation(emp: &EmpiricalDistribution, exact: &BTreeMap<Vec<String>, f64>, agents: &[&str]) -> Result<f64> {
    Ok(sigma_bands(emp, exact, agents, f64::INFINITY)?
        .iter()
        .map(|r| (r.frequency - r.probability).abs())
        .sum::<f64>()
        / 2.0)
}
