//! The `wfsim` command line.

pub mod amplitude;
pub mod dsl;
pub mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    bw_clarification, compare_semantics, exact_marginal, fr_phi, healey_decomposition, mc_sample_with,
    order_invariance, sigma_bands,
};
use crate::error::{Error, Result};
use crate::scenario::{
    annotate, branches, build_fr, check_single_value, closed_ledger, intact_memories, q_distribution, run, Branch,
    ClockTime, Ledger, Policy, QMode, RunOptions, Scenario, Violation,
};

pub use amplitude::{parse_amplitude, AmplitudeExpr};
pub use dsl::{parse_scenario, parse_scenario_file, ScenarioFile, FR_SCENARIO};
pub use report::{Format, Report, Section, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ZERO_PROBABILITY: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

/// Tolerance for the order check and the Monte Carlo band width.
const ORDER_TOL: f64 = 1e-12;
const MC_BANDS: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "wfsim", version, about = "Simulate nested-observer protocols under two measurement semantics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file, or `fr` for the bundled protocol.
    Run(RunArgs),
}

#[derive(Debug, Clone, PartialEq)]
enum Semantics {
    Declared,
    All(Policy),
    Mixed(BTreeMap<ClockTime, Policy>),
}

fn parse_semantics(s: &str) -> std::result::Result<Semantics, String> {
    match s {
        "declared" => Ok(Semantics::Declared),
        "unitary" => Ok(Semantics::All(Policy::Unitary)),
        "collapse" => Ok(Semantics::All(Policy::Collapse)),
        _ => {
            let body = s
                .strip_prefix("mixed:")
                .ok_or_else(|| format!("expected unitary, collapse, declared or mixed:<time>=<policy>,..., got `{s}`"))?;
            let mut map = BTreeMap::new();
            for item in body.split(',') {
                let (t, p) = item
                    .split_once('=')
                    .ok_or_else(|| format!("expected <time>=<policy>, got `{item}`"))?;
                let t: ClockTime = t.parse().map_err(|_| format!("invalid time `{t}`"))?;
                let p: Policy = p.parse().map_err(|_| format!("invalid policy `{p}`"))?;
                if map.insert(t, p).is_some() {
                    return Err(format!("time {t} given twice"));
                }
            }
            Ok(Semantics::Mixed(map))
        }
    }
}

fn parse_condition(s: &str) -> std::result::Result<(String, String), String> {
    let (a, o) = s
        .split_once('=')
        .ok_or_else(|| format!("expected <agent>=<outcome>, got `{s}`"))?;
    if a.is_empty() || o.is_empty() {
        return Err(format!("expected <agent>=<outcome>, got `{s}`"));
    }
    Ok((a.to_string(), o.to_string()))
}

fn parse_time(s: &str) -> std::result::Result<ClockTime, String> {
    s.parse().map_err(|_| format!("invalid time `{s}`"))
}

fn parse_time_pair(s: &str) -> std::result::Result<(ClockTime, ClockTime), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected <t1>,<t2>, got `{s}`"))?;
    Ok((parse_time(a)?, parse_time(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Kv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QRule {
    Halted,
    FullRun,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Path to a scenario file, or `fr`.
    scenario: String,
    /// unitary | collapse | declared | mixed:<time>=<policy>,...
    #[arg(long, default_value = "declared", value_parser = parse_semantics)]
    semantics: Semantics,
    /// Condition on <agent>=<outcome>; fixes the outcome of a collapse step.
    #[arg(long, value_parser = parse_condition)]
    condition: Vec<(String, String)>,
    /// Print the branch decomposition over intact memories.
    #[arg(long)]
    branches: bool,
    /// Print the certainty ledger and the single-value check.
    #[arg(long)]
    ledger: bool,
    /// Print the collapse / relative-state comparison for the bundled protocol.
    #[arg(long)]
    clarify: bool,
    /// Swap two time slots and report the largest change in memory statistics.
    #[arg(long, value_name = "T1,T2", value_parser = parse_time_pair)]
    order_check: Option<(ClockTime, ClockTime)>,
    /// Number of Monte Carlo samples.
    #[arg(long, value_name = "N")]
    mc: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Exit with status 3 when the single-value check fails.
    #[arg(long)]
    fail_on_violation: bool,
    /// Stop before the first step starting at or after this time.
    #[arg(long, value_parser = parse_time)]
    halt: Option<ClockTime>,
    /// How Q predictions about later measurements are formed.
    #[arg(long, value_enum, default_value = "halted")]
    q_rule: QRule,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let Command::Run(args) = cli.command;
    let format = match args.format {
        FormatArg::Text => Format::Text,
        FormatArg::Kv => Format::Kv,
    };
    match execute(&args) {
        Ok((report, violated)) => {
            let _ = write!(out, "{}", report.render(format));
            if violated && args.fail_on_violation {
                EXIT_VIOLATION
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_zero_probability() {
                EXIT_ZERO_PROBABILITY
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn load(name: &str) -> Result<Scenario> {
    if name == "fr" {
        return parse_scenario(FR_SCENARIO);
    }
    let text = std::fs::read_to_string(name).map_err(|e| Error::InvalidScenario(format!("cannot read `{name}`: {e}")))?;
    parse_scenario(&text)
}

/// The steps that run before `halt`, with the communications among them.
fn truncate(sc: &Scenario, halt: Option<ClockTime>) -> Result<Scenario> {
    let Some(h) = halt else {
        return Ok(sc.clone());
    };
    if !sc.steps().iter().any(|s| s.time() == h || s.time().next() == h) {
        return Err(Error::UnknownTime(h.to_string()));
    }
    let steps: Vec<_> = sc.steps().iter().filter(|s| s.time() < h).cloned().collect();
    let comms = sc.comms().iter().filter(|c| c.time < h).cloned().collect();
    Scenario::new(sc.initial().clone(), steps, comms)
}

fn overrides(sc: &Scenario, semantics: &Semantics) -> Result<BTreeMap<ClockTime, Policy>> {
    Ok(match semantics {
        Semantics::Declared => BTreeMap::new(),
        Semantics::All(p) => sc.steps().iter().map(|s| (s.time(), *p)).collect(),
        Semantics::Mixed(m) => {
            for t in m.keys() {
                sc.step_at(*t)?;
            }
            m.clone()
        }
    })
}

fn joined(labels: &[(String, String)]) -> String {
    labels.iter().map(|(m, l)| format!("{m}={l}")).collect::<Vec<_>>().join(",")
}

fn branch_section(name: &str, bs: &[Branch]) -> Section {
    let mut s = Section::new(name);
    for (i, b) in bs.iter().enumerate() {
        let notes: Vec<String> = b.annotations.iter().map(|(a, n)| format!("{a}: {n}")).collect();
        s.push(vec![
            ("index", i.into()),
            ("labels", joined(&b.labels).into()),
            ("amplitude", b.amplitude.into()),
            ("weight", b.weight().into()),
            ("annotations", notes.join("; ").into()),
        ]);
    }
    s
}

fn execute(args: &RunArgs) -> Result<(Report, bool)> {
    let full = load(&args.scenario)?;
    let sc = truncate(&full, args.halt)?;
    let overrides = overrides(&sc, &args.semantics)?;
    let mode = match args.q_rule {
        QRule::Halted => QMode::Halted,
        QRule::FullRun => QMode::FullRun,
    };
    let mut report = Report::default();

    let mut opts = RunOptions {
        overrides: overrides.clone(),
        halt_at: None,
        collapse_choices: BTreeMap::new(),
    };
    for (agent, outcome) in &args.condition {
        let step = full.step_of_agent(agent)?;
        step.measurement().outcome(outcome)?;
        if sc.step_at(step.time()).is_ok() && opts.policy_of(step) == Policy::Collapse {
            opts.collapse_choices.insert(step.time(), outcome.clone());
        }
    }

    let mut head = Section::new("scenario");
    head.push(vec![
        ("source", args.scenario.as_str().into()),
        ("steps", sc.steps().len().into()),
        ("dimension", sc.final_layout().dim().into()),
        ("halt", args.halt.map_or("none".to_string(), |h| h.to_string()).into()),
    ]);
    report.push(head);

    let mut schedule = Section::new("schedule");
    for s in full.steps() {
        let executed = sc.step_at(s.time()).is_ok();
        schedule.push(vec![
            ("time", s.time().to_string().into()),
            ("agent", s.agent().into()),
            ("measures", s.targets().join(",").into()),
            ("policy", opts.policy_of(s).to_string().into()),
            ("executed", executed.into()),
        ]);
    }
    for c in full.comms() {
        schedule.push(vec![
            ("time", c.time.to_string().into()),
            ("agent", c.from.as_str().into()),
            ("measures", format!("-> {}", c.to).into()),
            ("policy", "comm".into()),
            ("executed", args.halt.is_none_or(|h| c.time < h).into()),
        ]);
    }
    report.push(schedule);

    let agents: Vec<&str> = sc.steps().iter().map(|s| s.agent()).collect();
    let mut outcomes = Section::new("outcomes");
    for (labels, p) in exact_marginal(&sc, &overrides, &agents)? {
        if p <= crate::scenario::PRUNE_TOL {
            continue;
        }
        let pairs: Vec<(String, String)> = agents.iter().map(|a| a.to_string()).zip(labels).collect();
        outcomes.push(vec![("outcome", joined(&pairs).into()), ("probability", p.into())]);
    }
    report.push(outcomes);

    for (agent, outcome) in &args.condition {
        let ci = full.step_index_of_agent(agent)?;
        let mut section = Section::new("conditional");
        for later in sc.steps().iter().skip(ci + 1) {
            let cmp = compare_semantics(&sc, (agent, outcome), later.agent())?;
            for r in &cmp.rows {
                section.push(vec![
                    ("condition", format!("{agent}={outcome}").into()),
                    ("target", format!("{}={}", r.target.0, r.target.1).into()),
                    ("p_collapse", r.p_collapse.into()),
                    ("q_relative_state", r.q_relative_state.into()),
                    ("agree", r.agree.into()),
                    ("pointer_basis", cmp.predicted_agreement.into()),
                ]);
            }
        }
        report.push(section);
    }

    let needs_ledger = args.ledger || args.fail_on_violation;
    let ledger = if needs_ledger {
        Some(closed_ledger(&full, mode)?)
    } else {
        None
    };

    if args.branches {
        let trace = run(&sc, &opts).map_err(|e| match e {
            Error::CollapseChoice(m) => Error::CollapseChoice(format!("{m}; fix it with --condition <agent>=<outcome>")),
            other => other,
        })?;
        let mems = intact_memories(&sc, &trace);
        let mems: Vec<&str> = mems.iter().map(String::as_str).collect();
        let mut bs = branches(trace.final_state(), &mems)?;
        if let Some(l) = &ledger {
            annotate(&mut bs, l);
        }
        if trace.entries.iter().any(|e| e.probability.is_some()) {
            let mut cs = Section::new("collapse");
            for e in trace.entries.iter().filter(|e| e.probability.is_some()) {
                cs.push(vec![
                    ("time", e.start.to_string().into()),
                    ("agent", e.agent.as_str().into()),
                    ("outcome", e.outcome.clone().unwrap_or_default().into()),
                    ("probability", e.probability.unwrap_or(0.0).into()),
                ]);
            }
            report.push(cs);
        }
        report.push(branch_section("branches", &bs));
    }

    let mut violated = false;
    if let Some(l) = &ledger {
        if args.ledger {
            report.push(ledger_section(l));
            report.push(q_table(&full, &sc)?);
        }
        let violations = s_check(&sc, l)?;
        violated = !violations.is_empty();
        report.push(violation_section(&violations));
    }

    if args.clarify {
        clarify_sections(&full, &mut report)?;
    }

    if let Some((a, b)) = args.order_check {
        let d = order_invariance(&sc, a, b)?;
        let mut s = Section::new("order-check");
        s.push(vec![
            ("first", a.to_string().into()),
            ("second", b.to_string().into()),
            ("max_difference", d.into()),
            ("invariant", (d <= ORDER_TOL).into()),
        ]);
        report.push(s);
    }

    if let Some(n) = args.mc {
        let emp = mc_sample_with(&sc, &overrides, n, args.seed)?;
        let exact = exact_marginal(&sc, &overrides, &agents)?;
        let counts = emp.marginal(&agents)?;
        let mut head = Section::new("monte-carlo");
        head.push(vec![
            ("samples", n.into()),
            ("seed", args.seed.into()),
            ("bands", MC_BANDS.into()),
        ]);
        report.push(head);
        let mut s = Section::new("monte-carlo-bands");
        for r in sigma_bands(&emp, &exact, &agents, MC_BANDS)? {
            let pairs: Vec<(String, String)> = agents.iter().map(|a| a.to_string()).zip(r.labels.clone()).collect();
            s.push(vec![
                ("outcome", joined(&pairs).into()),
                ("count", counts.get(&r.labels).copied().unwrap_or(0).into()),
                ("frequency", r.frequency.into()),
                ("probability", r.probability.into()),
                ("sigma", r.sigma.into()),
                ("deviation_sigmas", r.deviation_sigmas.into()),
                ("within", r.within.into()),
            ]);
        }
        report.push(s);
    }

    Ok((report, violated))
}

fn ledger_section(l: &Ledger) -> Section {
    let mut s = Section::new("ledger");
    for (i, st) in l.statements().iter().enumerate() {
        let premises: Vec<String> = st.premises.iter().map(|p| format!("#{p}")).collect();
        s.push(vec![
            ("index", i.into()),
            ("holder", st.holder.as_str().into()),
            ("from", st.time.to_string().into()),
            ("condition", st.condition.to_string().into()),
            ("polarity", st.polarity.to_string().into()),
            ("target", st.target.to_string().into()),
            ("rule", st.rule.to_string().into()),
            ("premises", premises.join(",").into()),
        ]);
    }
    s
}

/// Q predictions under both rules side by side.
fn q_table(full: &Scenario, sc: &Scenario) -> Result<Section> {
    let mut s = Section::new("q-predictions");
    let steps = sc.steps();
    for (i, x) in steps.iter().enumerate() {
        for y in steps.iter().skip(i + 1) {
            for own in x.measurement().labels() {
                let halted = match q_distribution(full, x.agent(), own, y.agent(), QMode::Halted) {
                    Err(e) if e.is_zero_probability() => continue,
                    other => other?,
                };
                let full_run = match q_distribution(full, x.agent(), own, y.agent(), QMode::FullRun) {
                    Err(e) if e.is_zero_probability() => None,
                    other => other?,
                };
                for target in y.measurement().labels() {
                    let pick = |d: &Option<Vec<(String, f64)>>| -> Value {
                        d.as_ref()
                            .and_then(|d| d.iter().find(|(l, _)| l == target).map(|(_, p)| Value::Real(*p)))
                            .unwrap_or_else(|| "n/a".into())
                    };
                    s.push(vec![
                        ("holder", format!("{}={own}", x.agent()).into()),
                        ("target", format!("{}={target}", y.agent()).into()),
                        ("q_halted", pick(&halted)),
                        ("q_full_run", pick(&full_run)),
                    ]);
                }
            }
        }
    }
    Ok(s)
}

/// Single-value check on the unitary run's branches over intact memories.
fn s_check(sc: &Scenario, ledger: &Ledger) -> Result<Vec<Violation>> {
    let trace = run(sc, &RunOptions::all(sc, Policy::Unitary))?;
    let mems = intact_memories(sc, &trace);
    let mems: Vec<&str> = mems.iter().map(String::as_str).collect();
    let bs = branches(trace.final_state(), &mems)?;
    Ok(check_single_value(&bs, ledger))
}

fn violation_section(vs: &[Violation]) -> Section {
    let mut s = Section::new("violations");
    for v in vs {
        let st: Vec<String> = v.statements.iter().map(|p| format!("#{p}")).collect();
        s.push(vec![
            ("branch", v.branch.into()),
            ("labels", joined(&v.labels).into()),
            ("weight", v.weight.into()),
            ("agent", v.agent.as_str().into()),
            ("observed", v.observed.as_str().into()),
            ("statements", st.join(",").into()),
            ("description", v.description.as_str().into()),
        ]);
    }
    s
}

fn clarify_sections(sc: &Scenario, report: &mut Report) -> Result<()> {
    let reference = build_fr();
    if sc.final_layout() != reference.final_layout() || sc.max_deviation(&reference).is_none_or(|d| d > 1e-12) {
        return Err(Error::Unsupported(
            "--clarify applies only to the bundled `fr` protocol".into(),
        ));
    }
    let c = bw_clarification()?;
    let mut table = Section::new("clarify");
    for r in &c.report.rows {
        table.push(vec![
            ("condition", format!("{}={}", r.condition.0, r.condition.1).into()),
            ("target", format!("{}={}", r.target.0, r.target.1).into()),
            ("p_collapse", r.p_collapse.into()),
            ("q_relative_state", r.q_relative_state.into()),
            ("agree", r.agree.into()),
            ("note", r.note.as_str().into()),
        ]);
    }
    report.push(table);

    let mut q = Section::new("clarify-quantities");
    for (name, v) in [
        ("p(W=ok | Fbar=t), Fbar collapsed", c.p_ok_given_t),
        ("q(W=ok | Fbar memory t)", c.q_ok_given_record_t),
        ("q(W=ok, lab reading t)", c.q_joint_ok_t),
        ("q(W=fail, lab reading t)", c.q_joint_fail_t),
        ("q(lab reading t)", c.q_t),
        ("q(W=ok | lab reading t)", c.q_ok_given_t),
    ] {
        q.push(vec![("quantity", name.into()), ("value", v.into())]);
    }
    report.push(q);

    let mut rr = Section::new("record-vs-remeasure");
    for (record, reading, p) in &c.record_vs_remeasure {
        rr.push(vec![
            ("record", record.as_str().into()),
            ("reading", reading.as_str().into()),
            ("probability", (*p).into()),
        ]);
    }
    report.push(rr);

    let h = healey_decomposition(&fr_phi()?)?;
    let mut hs = Section::new("healey");
    for t in &h.terms {
        hs.push(vec![
            ("lab_bar", t.lab_bar.as_str().into()),
            ("wigner_bar", t.wigner_bar.as_str().into()),
            ("lab", t.lab.as_str().into()),
            ("closed_form", t.closed_form.into()),
            ("extracted", t.extracted.into()),
        ]);
    }
    report.push(hs);
    let mut hc = Section::new("healey-check");
    hc.push(vec![
        ("max_coefficient_deviation", h.max_coefficient_deviation.into()),
        ("recontraction_deviation", h.recontraction_deviation.into()),
        ("closed_form_deviation", h.closed_form_deviation.into()),
        ("norm", h.norm.into()),
    ]);
    report.push(hc);
    Ok(())
}
