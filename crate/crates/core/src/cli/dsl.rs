//! Line-oriented scenario files.
//!
//! ```text
//! register <name> <dim> <label>[,<label>...]
//! init <reg>:<label>[,<reg>:<label>...]=<amp>[; ...]
//! state <name> on <reg> { <label>=<amp>; ... }
//! basis <name> on <reg>[,<reg>...] { <outcome>: [<amp>*]|<l1,l2>> [+|- ...]; ... }
//! step <time> agent <name> measure <basis> policy <unitary|collapse> [prep <outcome>-><reg>:<state>]...
//! comm <time> <from> -> <to>
//! ```
//!
//! `#` starts a comment. A brace block may continue over several lines.
//! An outcome label listed more than once in a basis collects several
//! vectors into one degenerate outcome. Each agent's memory register is named
//! after the agent and can be measured by later bases.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::qcore::{Amplitude, StateVector};
use crate::registers::{superpose, Register, SpaceLayout};
use crate::scenario::{ClockTime, Communication, Policy, Preparation, Scenario, Step};
use crate::semantics::Measurement;

use super::amplitude::{locate, parse_located, AmplitudeExpr, Located};

/// The protocol bundled with the binary.
pub const FR_SCENARIO: &str = include_str!("../../scenarios/fr.scn");

#[derive(Debug, Clone, PartialEq)]
pub struct InitTerm {
    pub assignment: Vec<(String, String)>,
    pub amplitude: AmplitudeExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KetTerm {
    pub negated: bool,
    pub amplitude: AmplitudeExpr,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisEntry {
    pub outcome: String,
    pub terms: Vec<KetTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepSpec {
    pub outcome: String,
    pub register: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Register {
        name: String,
        labels: Vec<String>,
    },
    Init {
        terms: Vec<InitTerm>,
    },
    State {
        name: String,
        register: String,
        entries: Vec<(String, AmplitudeExpr)>,
    },
    Basis {
        name: String,
        registers: Vec<String>,
        entries: Vec<BasisEntry>,
    },
    Step {
        time: ClockTime,
        agent: String,
        basis: String,
        policy: Policy,
        preps: Vec<PrepSpec>,
    },
    Comm {
        time: ClockTime,
        from: String,
        to: String,
    },
}

fn write_amp_prefix(f: &mut fmt::Formatter<'_>, a: &AmplitudeExpr) -> fmt::Result {
    if *a != AmplitudeExpr::one() {
        write!(f, "{a}*")?;
    }
    Ok(())
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Register { name, labels } => {
                write!(f, "register {name} {} {}", labels.len(), labels.join(","))
            }
            Directive::Init { terms } => {
                f.write_str("init ")?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    let a: Vec<String> = t.assignment.iter().map(|(r, l)| format!("{r}:{l}")).collect();
                    write!(f, "{}={}", a.join(","), t.amplitude)?;
                }
                Ok(())
            }
            Directive::State { name, register, entries } => {
                write!(f, "state {name} on {register} {{ ")?;
                let e: Vec<String> = entries.iter().map(|(l, a)| format!("{l}={a}")).collect();
                write!(f, "{} }}", e.join("; "))
            }
            Directive::Basis {
                name,
                registers,
                entries,
            } => {
                write!(f, "basis {name} on {} {{ ", registers.join(","))?;
                for (i, e) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{}: ", e.outcome)?;
                    for (j, t) in e.terms.iter().enumerate() {
                        match (j, t.negated) {
                            (0, true) => f.write_str("-")?,
                            (0, false) => {}
                            (_, true) => f.write_str(" - ")?,
                            (_, false) => f.write_str(" + ")?,
                        }
                        write_amp_prefix(f, &t.amplitude)?;
                        write!(f, "|{}>", t.labels.join(","))?;
                    }
                }
                f.write_str(" }")
            }
            Directive::Step {
                time,
                agent,
                basis,
                policy,
                preps,
            } => {
                write!(f, "step {time} agent {agent} measure {basis} policy {policy}")?;
                for p in preps {
                    write!(f, " prep {}->{}:{}", p.outcome, p.register, p.state)?;
                }
                Ok(())
            }
            Directive::Comm { time, from, to } => write!(f, "comm {time} {from} -> {to}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    /// Directives with the line each one starts on.
    pub items: Vec<(usize, Directive)>,
}

impl ScenarioFile {
    pub fn directives(&self) -> impl Iterator<Item = &Directive> {
        self.items.iter().map(|(_, d)| d)
    }
}

impl fmt::Display for ScenarioFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.directives() {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

fn perr(at: (usize, usize), message: impl Into<String>) -> Error {
    Error::Parse {
        line: at.0,
        column: at.1,
        message: message.into(),
    }
}

fn pos(s: &[Located], end: (usize, usize)) -> (usize, usize) {
    s.first().map(|c| (c.1, c.2)).unwrap_or(end)
}

fn text(s: &[Located]) -> String {
    s.iter().map(|c| c.0).collect()
}

fn trim(s: &[Located]) -> &[Located] {
    let start = s.iter().position(|c| !c.0.is_whitespace()).unwrap_or(s.len());
    let end = s.iter().rposition(|c| !c.0.is_whitespace()).map_or(start, |i| i + 1);
    &s[start..end]
}

fn find(s: &[Located], c: char) -> Option<usize> {
    s.iter().position(|x| x.0 == c)
}

fn split(s: &[Located], c: char) -> Vec<&[Located]> {
    s.split(|x| x.0 == c).collect()
}

fn words(s: &[Located]) -> Vec<&[Located]> {
    s.split(|x| x.0.is_whitespace()).filter(|w| !w.is_empty()).collect()
}

const RESERVED: &[char] = &[',', ':', ';', '=', '|', '>', '{', '}', '#'];

fn name(s: &[Located], what: &str, end: (usize, usize)) -> Result<String> {
    let s = trim(s);
    if s.is_empty() {
        return Err(perr(pos(s, end), format!("expected {what}")));
    }
    if let Some(c) = s.iter().find(|c| c.0.is_whitespace() || RESERVED.contains(&c.0)) {
        return Err(perr((c.1, c.2), format!("unexpected `{}` in {what}", c.0)));
    }
    Ok(text(s))
}

fn amplitude(s: &[Located], end: (usize, usize)) -> Result<AmplitudeExpr> {
    let s = trim(s);
    let end = s.last().map(|c| (c.1, c.2 + 1)).unwrap_or(end);
    parse_located(s, end)
}

fn time(s: &[Located], end: (usize, usize)) -> Result<ClockTime> {
    text(s)
        .parse()
        .map_err(|_| perr(pos(s, end), format!("invalid time `{}`", text(s))))
}

/// Split into directives, joining lines while a `{` is open.
fn logical_lines(input: &str) -> Result<Vec<Vec<Located>>> {
    let mut out = Vec::new();
    let mut current: Vec<Located> = Vec::new();
    let mut depth = 0usize;
    let mut open_at = (0, 0);
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let chars = locate(body, line, 1);
        for c in &chars {
            match c.0 {
                '{' => {
                    if depth == 0 {
                        open_at = (c.1, c.2);
                    }
                    depth += 1;
                }
                '}' => {
                    if depth == 0 {
                        return Err(perr((c.1, c.2), "unmatched `}`"));
                    }
                    depth -= 1;
                }
                _ => {}
            }
        }
        if !current.is_empty() {
            current.push((' ', line, 0));
        }
        current.extend(chars);
        if depth == 0 {
            if !trim(&current).is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
        }
    }
    if depth > 0 {
        return Err(perr(open_at, "unclosed `{`"));
    }
    Ok(out)
}

/// Split `head { body }` into its parts.
fn braced(s: &[Located], end: (usize, usize)) -> Result<(&[Located], &[Located])> {
    let open = find(s, '{').ok_or_else(|| perr(pos(s, end), "expected `{`"))?;
    let close = s
        .iter()
        .rposition(|c| c.0 == '}')
        .ok_or_else(|| perr(end, "expected `}`"))?;
    if let Some(c) = trim(&s[close + 1..]).first() {
        return Err(perr((c.1, c.2), "unexpected content after `}`"));
    }
    Ok((&s[..open], &s[open + 1..close]))
}

fn parse_ket_terms(s: &[Located], end: (usize, usize)) -> Result<Vec<KetTerm>> {
    let mut terms = Vec::new();
    let mut i = 0;
    let skip = |i: &mut usize| {
        while *i < s.len() && s[*i].0.is_whitespace() {
            *i += 1;
        }
    };
    skip(&mut i);
    if i == s.len() {
        return Err(perr(end, "expected at least one ket"));
    }
    loop {
        skip(&mut i);
        let mut negated = false;
        if !terms.is_empty() {
            match s.get(i).map(|c| c.0) {
                Some('+') => i += 1,
                Some('-') => {
                    negated = true;
                    i += 1;
                }
                Some(c) => return Err(perr((s[i].1, s[i].2), format!("expected `+` or `-`, found `{c}`"))),
                None => break,
            }
        } else if s.get(i).map(|c| c.0) == Some('-') && s.get(i + 1).map(|c| c.0) != Some('|') {
            // A leading minus sign is kept with the amplitude.
        } else if s.get(i).map(|c| c.0) == Some('-') {
            negated = true;
            i += 1;
        }
        let bar = s[i..]
            .iter()
            .position(|c| c.0 == '|')
            .map(|p| p + i)
            .ok_or_else(|| perr(pos(&s[i..], end), "expected a ket `|...>`"))?;
        let close = s[bar..]
            .iter()
            .position(|c| c.0 == '>')
            .map(|p| p + bar)
            .ok_or_else(|| perr((s[bar].1, s[bar].2), "unclosed ket"))?;
        let mut amp = trim(&s[i..bar]);
        let amplitude = if amp.is_empty() {
            AmplitudeExpr::one()
        } else {
            if amp.last().map(|c| c.0) != Some('*') {
                let c = amp.last().expect("nonempty");
                return Err(perr((c.1, c.2 + 1), "expected `*` before ket"));
            }
            amp = &amp[..amp.len() - 1];
            amplitude(amp, (s[bar].1, s[bar].2))?
        };
        let labels = split(&s[bar + 1..close], ',')
            .into_iter()
            .map(|l| name(l, "ket label", (s[close].1, s[close].2)))
            .collect::<Result<Vec<_>>>()?;
        terms.push(KetTerm {
            negated,
            amplitude,
            labels,
        });
        i = close + 1;
        skip(&mut i);
        if i == s.len() {
            break;
        }
    }
    Ok(terms)
}

fn parse_directive(s: &[Located]) -> Result<Directive> {
    let s = trim(s);
    let end = s.last().map(|c| (c.1, c.2 + 1)).unwrap_or((0, 0));
    let w = words(s);
    let keyword = text(w[0]);
    let rest = trim(&s[w[0].len()..]);
    match keyword.as_str() {
        "register" => {
            if w.len() < 4 {
                return Err(perr(end, "expected `register <name> <dim> <labels>`"));
            }
            let name_ = name(w[1], "register name", end)?;
            let dim: usize = text(w[2])
                .parse()
                .map_err(|_| perr(pos(w[2], end), format!("invalid dimension `{}`", text(w[2]))))?;
            let label_start = w[3].as_ptr() as usize - s.as_ptr() as usize;
            let label_part = &s[label_start / std::mem::size_of::<Located>()..];
            let labels = split(label_part, ',')
                .into_iter()
                .map(|l| name(l, "label", end))
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != dim {
                return Err(perr(
                    pos(w[2], end),
                    format!("dimension {dim} does not match {} labels", labels.len()),
                ));
            }
            Ok(Directive::Register { name: name_, labels })
        }
        "init" => {
            let terms = split(rest, ';')
                .into_iter()
                .map(|t| {
                    let t = trim(t);
                    let eq = find(t, '=').ok_or_else(|| perr(pos(t, end), "expected `<reg>:<label>=<amplitude>`"))?;
                    let assignment = split(&t[..eq], ',')
                        .into_iter()
                        .map(|a| {
                            let colon = find(a, ':').ok_or_else(|| perr(pos(trim(a), end), "expected `<reg>:<label>`"))?;
                            Ok((name(&a[..colon], "register", end)?, name(&a[colon + 1..], "label", end)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(InitTerm {
                        assignment,
                        amplitude: amplitude(&t[eq + 1..], end)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Directive::Init { terms })
        }
        "state" => {
            let (head, body) = braced(rest, end)?;
            let hw = words(head);
            if hw.len() != 3 || text(hw[1]) != "on" {
                return Err(perr(pos(head, end), "expected `state <name> on <register> { ... }`"));
            }
            let entries = split(body, ';')
                .into_iter()
                .filter(|e| !trim(e).is_empty())
                .map(|e| {
                    let e = trim(e);
                    let eq = find(e, '=').ok_or_else(|| perr(pos(e, end), "expected `<label>=<amplitude>`"))?;
                    Ok((name(&e[..eq], "label", end)?, amplitude(&e[eq + 1..], end)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Directive::State {
                name: name(hw[0], "state name", end)?,
                register: name(hw[2], "register", end)?,
                entries,
            })
        }
        "basis" => {
            let (head, body) = braced(rest, end)?;
            let hw = words(head);
            if hw.len() < 3 || text(hw[1]) != "on" {
                return Err(perr(pos(head, end), "expected `basis <name> on <registers> { ... }`"));
            }
            let reg_start = (hw[2].as_ptr() as usize - head.as_ptr() as usize) / std::mem::size_of::<Located>();
            let registers = split(&head[reg_start..], ',')
                .into_iter()
                .map(|r| name(r, "register", end))
                .collect::<Result<Vec<_>>>()?;
            let entries = split(body, ';')
                .into_iter()
                .filter(|e| !trim(e).is_empty())
                .map(|e| {
                    let e = trim(e);
                    let colon = find(e, ':').ok_or_else(|| perr(pos(e, end), "expected `<outcome>: <kets>`"))?;
                    let term_end = e.last().map(|c| (c.1, c.2 + 1)).unwrap_or(end);
                    Ok(BasisEntry {
                        outcome: name(&e[..colon], "outcome label", end)?,
                        terms: parse_ket_terms(&e[colon + 1..], term_end)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Directive::Basis {
                name: name(hw[0], "basis name", end)?,
                registers,
                entries,
            })
        }
        "step" => {
            let expect = |i: usize, kw: &str| -> Result<()> {
                match w.get(i) {
                    Some(x) if text(x) == kw => Ok(()),
                    Some(x) => Err(perr(pos(x, end), format!("expected `{kw}`, found `{}`", text(x)))),
                    None => Err(perr(end, format!("expected `{kw}`"))),
                }
            };
            if w.len() < 8 {
                return Err(perr(
                    end,
                    "expected `step <time> agent <name> measure <basis> policy <policy>`",
                ));
            }
            expect(2, "agent")?;
            expect(4, "measure")?;
            expect(6, "policy")?;
            let policy = text(w[7])
                .parse()
                .map_err(|_| perr(pos(w[7], end), format!("unknown policy `{}`", text(w[7]))))?;
            let mut preps = Vec::new();
            let mut i = 8;
            while i < w.len() {
                expect(i, "prep")?;
                let spec = w
                    .get(i + 1)
                    .ok_or_else(|| perr(end, "expected `<outcome>-><register>:<state>`"))?;
                let spec_text = text(spec);
                let arrow = spec_text
                    .find("->")
                    .ok_or_else(|| perr(pos(spec, end), "expected `->` in preparation"))?;
                let arrow = spec_text[..arrow].chars().count();
                let after = &spec[arrow + 2..];
                let colon = find(after, ':').ok_or_else(|| perr(pos(after, end), "expected `<register>:<state>`"))?;
                preps.push(PrepSpec {
                    outcome: name(&spec[..arrow], "outcome label", end)?,
                    register: name(&after[..colon], "register", end)?,
                    state: name(&after[colon + 1..], "state name", end)?,
                });
                i += 2;
            }
            Ok(Directive::Step {
                time: time(w[1], end)?,
                agent: name(w[3], "agent name", end)?,
                basis: name(w[5], "basis name", end)?,
                policy,
                preps,
            })
        }
        "comm" => {
            if w.len() != 5 || text(w[3]) != "->" {
                return Err(perr(pos(rest, end), "expected `comm <time> <from> -> <to>`"));
            }
            Ok(Directive::Comm {
                time: time(w[1], end)?,
                from: name(w[2], "agent name", end)?,
                to: name(w[4], "agent name", end)?,
            })
        }
        other => Err(perr(pos(w[0], end), format!("unknown directive `{other}`"))),
    }
}

pub fn parse_scenario_file(input: &str) -> Result<ScenarioFile> {
    let items = logical_lines(input)?
        .into_iter()
        .map(|l| {
            let line = trim(&l).first().map(|c| c.1).unwrap_or(0);
            Ok((line, parse_directive(&l)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioFile { items })
}

pub fn parse_scenario(input: &str) -> Result<Scenario> {
    parse_scenario_file(input)?.resolve()
}

fn at_line(line: usize, message: impl Into<String>) -> Error {
    perr((line, 1), message)
}

struct BasisDecl<'a> {
    line: usize,
    registers: &'a [String],
    entries: &'a [BasisEntry],
}

fn resolve_basis(
    name: &str,
    agent: &str,
    decl: &BasisDecl<'_>,
    known: &BTreeMap<String, Register>,
) -> Result<Measurement> {
    let regs = decl
        .registers
        .iter()
        .map(|r| {
            known
                .get(r)
                .cloned()
                .ok_or_else(|| at_line(decl.line, format!("basis `{name}` uses undefined register `{r}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let layout = SpaceLayout::new(regs).map_err(|e| at_line(decl.line, e.to_string()))?;
    let mut outcomes: Vec<(String, Vec<StateVector>)> = Vec::new();
    for entry in decl.entries {
        let mut amps = vec![Amplitude::new(0.0, 0.0); layout.dim()];
        for t in &entry.terms {
            if t.labels.len() != decl.registers.len() {
                return Err(at_line(
                    decl.line,
                    format!("ket |{}> in basis `{name}` needs {} labels", t.labels.join(","), decl.registers.len()),
                ));
            }
            let assignment: Vec<(&str, &str)> = decl
                .registers
                .iter()
                .map(String::as_str)
                .zip(t.labels.iter().map(String::as_str))
                .collect();
            let idx = layout
                .index_of(&assignment)
                .map_err(|e| at_line(decl.line, format!("basis `{name}`: {e}")))?;
            let a = t.amplitude.eval();
            amps[idx] += if t.negated { -a } else { a };
        }
        let v = StateVector::new(layout.clone(), amps).map_err(|e| at_line(decl.line, e.to_string()))?;
        match outcomes.iter_mut().find(|(l, _)| *l == entry.outcome) {
            Some((_, vs)) => vs.push(v),
            None => outcomes.push((entry.outcome.clone(), vec![v])),
        }
    }
    let labels: Vec<String> = outcomes.iter().map(|(l, _)| l.clone()).collect();
    Measurement::new(agent, layout, outcomes).map_err(|e| match e {
        Error::NotOrthonormal {
            i,
            j,
            inner_re,
            inner_im,
        } => at_line(
            decl.line,
            format!(
                "basis `{name}` is not orthonormal: vectors {i} and {j} have inner product {inner_re:+.6e}{inner_im:+.6e}i"
            ),
        ),
        other => at_line(decl.line, format!("basis `{name}` ({}): {other}", labels.join(","))),
    })
}

struct StateDecl<'a> {
    line: usize,
    register: &'a str,
    entries: &'a [(String, AmplitudeExpr)],
}

fn resolve_state(name: &str, decl: &StateDecl<'_>, known: &BTreeMap<String, Register>) -> Result<StateVector> {
    let reg = known
        .get(decl.register)
        .ok_or_else(|| at_line(decl.line, format!("state `{name}` uses undefined register `{}`", decl.register)))?;
    let layout = SpaceLayout::new(vec![reg.clone()])?;
    let mut amps = vec![Amplitude::new(0.0, 0.0); layout.dim()];
    for (label, a) in decl.entries {
        let i = reg
            .index_of(label)
            .map_err(|e| at_line(decl.line, format!("state `{name}`: {e}")))?;
        amps[i] += a.eval();
    }
    let v = StateVector::new(layout, amps)?;
    v.ensure_normalized()
        .map_err(|e| at_line(decl.line, format!("state `{name}`: {e}")))?;
    Ok(v)
}

impl ScenarioFile {
    /// Resolve names and build the scenario.
    pub fn resolve(&self) -> Result<Scenario> {
        let mut declared: Vec<Register> = Vec::new();
        let mut bases: BTreeMap<&str, BasisDecl<'_>> = BTreeMap::new();
        let mut states: BTreeMap<&str, StateDecl<'_>> = BTreeMap::new();
        let mut init: Option<(usize, &[InitTerm])> = None;
        for (line, d) in &self.items {
            let line = *line;
            match d {
                Directive::Register { name, labels } => {
                    if declared.iter().any(|r| r.name() == name) {
                        return Err(at_line(line, format!("register `{name}` declared twice")));
                    }
                    declared.push(Register::new(name.clone(), labels.clone()).map_err(|e| at_line(line, e.to_string()))?);
                }
                Directive::Init { terms } => {
                    if init.is_some() {
                        return Err(at_line(line, "more than one init directive"));
                    }
                    init = Some((line, terms));
                }
                Directive::State { name, register, entries } => {
                    if states
                        .insert(
                            name,
                            StateDecl {
                                line,
                                register,
                                entries,
                            },
                        )
                        .is_some()
                    {
                        return Err(at_line(line, format!("state `{name}` declared twice")));
                    }
                }
                Directive::Basis {
                    name,
                    registers,
                    entries,
                } => {
                    if bases
                        .insert(
                            name,
                            BasisDecl {
                                line,
                                registers,
                                entries,
                            },
                        )
                        .is_some()
                    {
                        return Err(at_line(line, format!("basis `{name}` declared twice")));
                    }
                }
                Directive::Step { .. } | Directive::Comm { .. } => {}
            }
        }
        let (init_line, init_terms) = init.ok_or_else(|| perr((1, 1), "no init directive"))?;

        let mut known: BTreeMap<String, Register> =
            declared.iter().map(|r| (r.name().to_string(), r.clone())).collect();
        let mut init_regs: Vec<Register> = Vec::new();
        for t in init_terms {
            for (r, _) in &t.assignment {
                let reg = known
                    .get(r)
                    .ok_or_else(|| at_line(init_line, format!("init uses undefined register `{r}`")))?;
                if !init_regs.iter().any(|x| x.name() == r) {
                    init_regs.push(reg.clone());
                }
            }
        }
        init_regs.sort_by_key(|r| declared.iter().position(|d| d.name() == r.name()));
        let init_layout = SpaceLayout::new(init_regs)?;
        let terms: Vec<(Amplitude, Vec<(&str, &str)>)> = init_terms
            .iter()
            .map(|t| {
                (
                    t.amplitude.eval(),
                    t.assignment.iter().map(|(r, l)| (r.as_str(), l.as_str())).collect(),
                )
            })
            .collect();
        let initial = superpose(&init_layout, &terms).map_err(|e| at_line(init_line, format!("init: {e}")))?;

        let mut steps = Vec::new();
        let mut comms = Vec::new();
        let mut last_time: Option<ClockTime> = None;
        for (line, d) in &self.items {
            let line = *line;
            match d {
                Directive::Step {
                    time,
                    agent,
                    basis,
                    policy,
                    preps,
                } => {
                    if last_time.is_some_and(|t| t >= *time) {
                        return Err(at_line(line, format!("step time {time} is not after the previous step")));
                    }
                    last_time = Some(*time);
                    let decl = bases
                        .get(basis.as_str())
                        .ok_or_else(|| at_line(line, format!("undefined basis `{basis}`")))?;
                    let m = resolve_basis(basis, agent, decl, &known)?;
                    let mut resolved = Vec::new();
                    for p in preps {
                        let sd = states
                            .get(p.state.as_str())
                            .ok_or_else(|| at_line(line, format!("undefined state `{}`", p.state)))?;
                        if sd.register != p.register {
                            return Err(at_line(
                                line,
                                format!("state `{}` lives on `{}`, not `{}`", p.state, sd.register, p.register),
                            ));
                        }
                        let v = resolve_state(&p.state, sd, &known)?;
                        resolved.push(Preparation::new(p.outcome.clone(), v).map_err(|e| at_line(line, e.to_string()))?);
                    }
                    if known.contains_key(agent.as_str()) && !declared.iter().any(|r| r.name() == agent) {
                        return Err(at_line(line, format!("agent `{agent}` measures twice")));
                    }
                    known.insert(agent.clone(), m.memory_register(agent)?);
                    steps.push(Step::new(*time, m, *policy, resolved));
                }
                Directive::Comm { time, from, to } => comms.push(Communication {
                    time: *time,
                    from: from.clone(),
                    to: to.clone(),
                }),
                _ => {}
            }
        }
        let used: Vec<&str> = self
            .directives()
            .filter_map(|d| match d {
                Directive::Step { basis, .. } => Some(basis.as_str()),
                _ => None,
            })
            .collect();
        for (name, decl) in &bases {
            if !used.contains(name) {
                resolve_basis(name, "unused", decl, &known)?;
            }
        }
        for (name, decl) in &states {
            resolve_state(name, decl, &known)?;
        }
        Scenario::new(initial, steps, comms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_fr;

    #[test]
    fn bundled_fr_matches_builder() {
        let parsed = parse_scenario(FR_SCENARIO).unwrap();
        let built = build_fr();
        assert_eq!(parsed.final_layout(), built.final_layout());
        let dev = parsed.max_deviation(&built).expect("same structure");
        assert!(dev <= 1e-12, "deviation {dev}");
    }

    #[test]
    fn round_trip() {
        let file = parse_scenario_file(FR_SCENARIO).unwrap();
        let printed = file.to_string();
        let again = parse_scenario_file(&printed).unwrap();
        assert_eq!(file.directives().collect::<Vec<_>>(), again.directives().collect::<Vec<_>>());
        assert_eq!(again.to_string(), printed);
        let a = file.resolve().unwrap();
        let b = again.resolve().unwrap();
        assert_eq!(a.max_deviation(&b), Some(0.0));
    }

    #[test]
    fn empty_input() {
        match parse_scenario("") {
            Err(Error::Parse { message, .. }) => assert_eq!(message, "no init directive"),
            other => panic!("{other:?}"),
        }
        assert!(parse_scenario("# only a comment\n").is_err());
    }

    #[test]
    fn unknown_directive() {
        match parse_scenario("register A 2 x,y\nfrobnicate A\n") {
            Err(Error::Parse { line, column, message }) => {
                assert_eq!((line, column), (2, 1));
                assert!(message.contains("unknown directive"));
            }
            other => panic!("{other:?}"),
        }
    }

    const SMALL: &str = "register A 2 x,y
init A:x=1
basis z on A { x: |x>; y: |y> }
";

    #[test]
    fn undefined_references() {
        let e = parse_scenario(&format!("{SMALL}step 0 agent O measure nope policy unitary\n")).unwrap_err();
        assert!(e.to_string().contains("undefined basis"), "{e}");
        let e = parse_scenario("register A 2 x,y\ninit B:x=1\n").unwrap_err();
        assert!(e.to_string().contains("undefined register"), "{e}");
        let e = parse_scenario(&format!("{SMALL}step 0 agent O measure z policy unitary prep x->B:s\n")).unwrap_err();
        assert!(e.to_string().contains("undefined state"), "{e}");
    }

    #[test]
    fn non_increasing_times() {
        let text = format!(
            "{SMALL}step 10 agent O measure z policy unitary\nstep 10 agent P measure z policy unitary\n"
        );
        match parse_scenario(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("not after"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_basis_reports_inner_product() {
        let text = "register A 2 x,y\ninit A:x=1\nbasis bad on A { p: |x>; q: 1/sqrt(2)*|x> + 1/sqrt(2)*|y> }\n";
        match parse_scenario(text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("inner product +7.071068e-1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiline_basis_and_degenerate_outcome() {
        let text = "register A 3 a,b,c
init A:a=1/sqrt(2); A:c=1/sqrt(2)
basis coarse on A {
  low: |a>;
  low: |b>;
  high: |c>
}
step n:00 agent O measure coarse policy unitary
";
        let sc = parse_scenario(text).unwrap();
        let m = sc.steps()[0].measurement();
        assert_eq!(m.labels(), ["low", "high"]);
        assert_eq!(m.outcome("low").unwrap().vectors().len(), 2);
    }

    #[test]
    fn ket_signs_and_errors() {
        let text = "register A 2 x,y\ninit A:x=1\nbasis pm on A { m: -1/sqrt(2)*|x> + 1/sqrt(2)*|y>; p: |x> + |y> }\n";
        // `p` is unnormalized, so the basis is rejected.
        assert!(parse_scenario(text).is_err());
        let text = "register A 2 x,y\ninit A:x=1\nbasis pm on A { m: 1/sqrt(2)*|x> - 1/sqrt(2)*|y>; p: 1/sqrt(2)*|x> + 1/sqrt(2)*|y> }\n";
        let file = parse_scenario_file(text).unwrap();
        assert_eq!(parse_scenario_file(&file.to_string()).unwrap().directives().collect::<Vec<_>>(), file.directives().collect::<Vec<_>>());
        assert!(parse_scenario(text).is_ok());
        let bad = "register A 2 x,y\ninit A:x=1\nbasis pm on A { m: 2 |x> }\n";
        assert!(matches!(parse_scenario_file(bad), Err(Error::Parse { line: 3, .. })));
        let unclosed = "register A 2 x,y\nbasis pm on A { m: |x>\n";
        assert!(matches!(parse_scenario_file(unclosed), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn amplitude_errors_keep_positions() {
        match parse_scenario_file("register A 2 x,y\ninit A:x=1/0\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 12)),
            other => panic!("{other:?}"),
        }
    }
}
