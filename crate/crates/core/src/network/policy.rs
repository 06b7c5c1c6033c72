//! Endorsement policies as boolean trees over org atoms, written as
//! s-expressions:
//!
//! ```text
//! policy := org-id | (submitter) | (and policy+) | (or policy+) | (outof k policy+)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::identity::OrgId;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyExpr {
    And(Vec<PolicyExpr>),
    Or(Vec<PolicyExpr>),
    OutOf(usize, Vec<PolicyExpr>),
    Org(OrgId),
    /// Bound at evaluation time to the submitting client's org.
    Submitter,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy parse error at byte {at}: {message}")]
pub struct PolicyParseError {
    pub at: usize,
    pub message: String,
}

impl PolicyExpr {
    pub fn parse(src: &str) -> Result<Self, PolicyParseError> {
        let tokens = tokenize(src);
        let mut pos = 0;
        let expr = parse_expr(&tokens, &mut pos)?;
        if let Some((at, tok)) = tokens.get(pos) {
            return Err(err(*at, format!("trailing input `{tok}`")));
        }
        Ok(expr)
    }

    /// Evaluates against the set of orgs with valid endorsements.
    pub fn evaluate(&self, endorsers: &BTreeSet<OrgId>, submitter_org: &str) -> bool {
        match self {
            PolicyExpr::Org(o) => endorsers.contains(o),
            PolicyExpr::Submitter => endorsers.contains(submitter_org),
            PolicyExpr::And(xs) => xs.iter().all(|x| x.evaluate(endorsers, submitter_org)),
            PolicyExpr::Or(xs) => xs.iter().any(|x| x.evaluate(endorsers, submitter_org)),
            PolicyExpr::OutOf(k, xs) => xs.iter().filter(|x| x.evaluate(endorsers, submitter_org)).count() >= *k,
        }
    }

    /// Org ids named by atoms (not counting the submitter atom).
    pub fn orgs(&self) -> BTreeSet<OrgId> {
        let mut out = BTreeSet::new();
        self.collect_orgs(&mut out);
        out
    }

    fn collect_orgs(&self, out: &mut BTreeSet<OrgId>) {
        match self {
            PolicyExpr::Org(o) => {
                out.insert(o.clone());
            }
            PolicyExpr::Submitter => {}
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) | PolicyExpr::OutOf(_, xs) => {
                xs.iter().for_each(|x| x.collect_orgs(out))
            }
        }
    }

    /// A small set of orgs whose endorsements satisfy the policy, choosing
    /// only among `available` orgs. `None` when unsatisfiable.
    pub fn endorsement_plan(&self, available: &BTreeSet<OrgId>, submitter_org: &str) -> Option<BTreeSet<OrgId>> {
        match self {
            PolicyExpr::Org(o) => available.contains(o).then(|| BTreeSet::from([o.clone()])),
            PolicyExpr::Submitter => {
                available.contains(submitter_org).then(|| BTreeSet::from([submitter_org.to_string()]))
            }
            PolicyExpr::And(xs) => {
                let mut out = BTreeSet::new();
                for x in xs {
                    out.extend(x.endorsement_plan(available, submitter_org)?);
                }
                Some(out)
            }
            PolicyExpr::Or(xs) => {
                xs.iter().filter_map(|x| x.endorsement_plan(available, submitter_org)).min_by_key(|s| s.len())
            }
            PolicyExpr::OutOf(k, xs) => {
                let mut plans: Vec<_> = xs.iter().filter_map(|x| x.endorsement_plan(available, submitter_org)).collect();
                if plans.len() < *k {
                    return None;
                }
                plans.sort_by_key(|s| s.len());
                Some(plans.into_iter().take(*k).flatten().collect())
            }
        }
    }

    /// `true` when no endorsement set lacking `org` can satisfy the policy,
    /// whichever of `members` submits.
    pub fn requires_org(&self, org: &str, members: &BTreeSet<OrgId>) -> bool {
        let without: BTreeSet<OrgId> = members.iter().filter(|m| *m != org).cloned().collect();
        members.iter().filter(|m| *m != org).all(|submitter| !self.evaluate(&without, submitter))
            && !self.evaluate(&without, "")
    }

    /// Structural checks: no empty operator, 1 <= k <= arity.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            PolicyExpr::Org(o) if o.is_empty() => Err("empty org atom".into()),
            PolicyExpr::Org(_) | PolicyExpr::Submitter => Ok(()),
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) if xs.is_empty() => Err("operator without operands".into()),
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) => xs.iter().try_for_each(PolicyExpr::validate),
            PolicyExpr::OutOf(k, xs) => {
                if *k == 0 || *k > xs.len() {
                    return Err(format!("outof {k} over {} operands", xs.len()));
                }
                xs.iter().try_for_each(PolicyExpr::validate)
            }
        }
    }
}

impl fmt::Display for PolicyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, head: &str, xs: &[PolicyExpr]| {
            write!(f, "({head}")?;
            for x in xs {
                write!(f, " {x}")?;
            }
            write!(f, ")")
        };
        match self {
            PolicyExpr::Org(o) => write!(f, "{o}"),
            PolicyExpr::Submitter => write!(f, "(submitter)"),
            PolicyExpr::And(xs) => list(f, "and", xs),
            PolicyExpr::Or(xs) => list(f, "or", xs),
            PolicyExpr::OutOf(k, xs) => list(f, &format!("outof {k}"), xs),
        }
    }
}

impl FromStr for PolicyExpr {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyExpr::parse(s)
    }
}

impl Serialize for PolicyExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PolicyExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PolicyExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn err(at: usize, message: impl Into<String>) -> PolicyParseError {
    PolicyParseError { at, message: message.into() }
}

fn tokenize(src: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut cur: Option<(usize, String)> = None;
    for (i, c) in src.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(t) = cur.take() {
                out.push(t);
            }
            if !c.is_whitespace() {
                out.push((i, c.to_string()));
            }
        } else {
            cur.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    out.extend(cur);
    out
}

fn parse_expr(tokens: &[(usize, String)], pos: &mut usize) -> Result<PolicyExpr, PolicyParseError> {
    let end = tokens.last().map_or(0, |(at, t)| at + t.len());
    let Some((at, tok)) = tokens.get(*pos) else { return Err(err(end, "unexpected end of input")) };
    *pos += 1;
    if tok == ")" {
        return Err(err(*at, "unexpected `)`"));
    }
    if tok != "(" {
        return Ok(PolicyExpr::Org(tok.clone()));
    }
    let Some((op_at, op)) = tokens.get(*pos) else { return Err(err(end, "unexpected end of input")) };
    *pos += 1;
    let k = if op.eq_ignore_ascii_case("outof") {
        let Some((k_at, k)) = tokens.get(*pos) else { return Err(err(end, "missing outof count")) };
        *pos += 1;
        Some(k.parse::<usize>().map_err(|_| err(*k_at, format!("bad outof count `{k}`")))?)
    } else {
        None
    };
    let mut args = Vec::new();
    loop {
        match tokens.get(*pos) {
            None => return Err(err(end, "missing `)`")),
            Some((_, t)) if t == ")" => {
                *pos += 1;
                break;
            }
            Some(_) => args.push(parse_expr(tokens, pos)?),
        }
    }
    let expr = match op.to_ascii_lowercase().as_str() {
        "and" => PolicyExpr::And(args),
        "or" => PolicyExpr::Or(args),
        "outof" => PolicyExpr::OutOf(k.expect("parsed above"), args),
        "submitter" if args.is_empty() => PolicyExpr::Submitter,
        _ => return Err(err(*op_at, format!("unknown operator `{op}`"))),
    };
    expr.validate().map_err(|m| err(*at, m))?;
    Ok(expr)
}
