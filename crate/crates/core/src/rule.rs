//! Chain rules, their statistics and groundings.
//!
//! A rule `h(X,Y) <- r1(X,Z1) ^ r2(Z1,Z2) ^ ... ^ rn(Zn-1,Y)` is fully
//! determined by its head relation and the ordered body relations, since the
//! variable chain is always canonical. [`Rule`] stores just that; atoms with
//! explicit variables are derived on demand.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, KgError, KnowledgeGraph, RelationId, Triple};

pub const MIN_HOP: usize = 2;
pub const MAX_HOP: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule body must have between {MIN_HOP} and {MAX_HOP} atoms, got {0}")]
    BadHop(usize),
    #[error("invalid threshold `{0}`: expected a decimal in [0, 1]")]
    BadThreshold(String),
    #[error("malformed rule record: {0}")]
    Record(String),
}

/// Variable symbols in canonical chain order: `X, Z1, ..., Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    Z(u8),
    Y,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => f.write_str("X"),
            Var::Z(i) => write!(f, "Z{i}"),
            Var::Y => f.write_str("Y"),
        }
    }
}

impl FromStr for Var {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "X" => Ok(Var::X),
            "Y" => Ok(Var::Y),
            _ => s
                .strip_prefix('Z')
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|&n| n >= 1)
                .map(Var::Z)
                .ok_or_else(|| RuleError::Record(format!("bad variable `{s}`"))),
        }
    }
}

/// Variable sequence for a chain of `hop` atoms.
pub fn chain_vars(hop: usize) -> Vec<Var> {
    let mut vars = Vec::with_capacity(hop + 1);
    vars.push(Var::X);
    vars.extend((1..hop).map(|i| Var::Z(i as u8)));
    vars.push(Var::Y);
    vars
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub relation: RelationId,
    pub subject: Var,
    pub object: Var,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    head: RelationId,
    body: Vec<RelationId>,
}

impl Rule {
    pub fn new(head: RelationId, body: Vec<RelationId>) -> Result<Self, RuleError> {
        if !(MIN_HOP..=MAX_HOP).contains(&body.len()) {
            return Err(RuleError::BadHop(body.len()));
        }
        Ok(Self { head, body })
    }

    pub fn head(&self) -> RelationId {
        self.head
    }

    pub fn body(&self) -> &[RelationId] {
        &self.body
    }

    pub fn hop(&self) -> usize {
        self.body.len()
    }

    pub fn head_atom(&self) -> Atom {
        Atom { relation: self.head, subject: Var::X, object: Var::Y }
    }

    pub fn body_atoms(&self) -> Vec<Atom> {
        let vars = chain_vars(self.hop());
        self.body
            .iter()
            .zip(vars.windows(2))
            .map(|(&relation, w)| Atom { relation, subject: w[0], object: w[1] })
            .collect()
    }

    /// Stable textual encoding, also used as the rule id:
    /// `head(X,Y) <- r1(X,Z1) ^ r2(Z1,Y)`.
    pub fn encode(&self, kg: &KnowledgeGraph) -> String {
        let atom = |a: &Atom| format!("{}({},{})", kg.relation_name(a.relation), a.subject, a.object);
        let body: Vec<String> = self.body_atoms().iter().map(atom).collect();
        format!("{} <- {}", atom(&self.head_atom()), body.join(" ^ "))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(X,Y) <-", self.head)?;
        for (i, a) in self.body_atoms().iter().enumerate() {
            let sep = if i == 0 { " " } else { " ^ " };
            write!(f, "{sep}{}({},{})", a.relation, a.subject, a.object)?;
        }
        Ok(())
    }
}

/// An exact non-negative rational threshold parsed from a decimal string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Threshold {
    num: u64,
    den: u64,
}

impl Threshold {
    pub const fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `y / x > self`, evaluated exactly.
    pub fn exceeded_by(self, y: u64, x: u64) -> bool {
        x > 0 && (y as u128) * (self.den as u128) > (self.num as u128) * (x as u128)
    }
}

impl FromStr for Threshold {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RuleError::BadThreshold(s.to_owned());
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if int.is_empty() && frac.is_empty()
            || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        if num > den {
            return Err(bad());
        }
        Ok(Self { num, den })
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

/// Support and confidence counts for one rule on one graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleStats {
    pub rule: Rule,
    /// Canonical encoding of `rule`.
    pub id: String,
    /// Groundings whose head fact also holds (support).
    pub instance_count: u64,
    /// Distinct full body groundings (x).
    pub body_count: u64,
    /// Body groundings with the head fact present (y).
    pub head_and_body_count: u64,
}

impl RuleStats {
    pub fn is_scorable(&self) -> bool {
        self.body_count > 0
    }

    pub fn confidence(&self) -> Option<f64> {
        self.is_scorable()
            .then(|| self.head_and_body_count as f64 / self.body_count as f64)
    }

    /// Descending confidence, exact; unscorable rules sort last.
    pub fn cmp_confidence_desc(&self, other: &Self) -> Ordering {
        match (self.is_scorable(), other.is_scorable()) {
            (false, false) => Ordering::Equal,
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (true, true) => {
                let lhs = self.head_and_body_count as u128 * other.body_count as u128;
                let rhs = other.head_and_body_count as u128 * self.body_count as u128;
                rhs.cmp(&lhs)
            }
        }
    }
}

/// A grounding of a rule: `bindings[i]` is the entity bound to the i-th chain
/// variable (`X, Z1, ..., Y`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleInstance {
    pub rule: Rule,
    pub bindings: Vec<EntityId>,
    pub body_facts: Vec<Triple>,
    pub head_fact: Triple,
}

impl RuleInstance {
    pub fn from_bindings(rule: &Rule, bindings: Vec<EntityId>) -> Self {
        debug_assert_eq!(bindings.len(), rule.hop() + 1);
        let body_facts = rule
            .body()
            .iter()
            .zip(bindings.windows(2))
            .map(|(&r, w)| Triple::new(w[0], r, w[1]))
            .collect();
        let head_fact = Triple::new(bindings[0], rule.head(), bindings[rule.hop()]);
        Self { rule: rule.clone(), bindings, body_facts, head_fact }
    }

    pub fn subject(&self) -> EntityId {
        self.bindings[0]
    }

    pub fn object(&self) -> EntityId {
        *self.bindings.last().expect("bindings are never empty")
    }
}

/// One atom in a rules-file record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub relation: String,
    pub vars: [String; 2],
}

/// One line of the rules file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: String,
    pub head: AtomRecord,
    pub body: Vec<AtomRecord>,
    pub hop: usize,
    pub support: u64,
    pub body_count: u64,
    pub confidence: f64,
}

impl RuleRecord {
    pub fn from_stats(kg: &KnowledgeGraph, stats: &RuleStats) -> Self {
        let atom = |a: Atom| AtomRecord {
            relation: kg.relation_name(a.relation).to_owned(),
            vars: [a.subject.to_string(), a.object.to_string()],
        };
        Self {
            id: stats.id.clone(),
            head: atom(stats.rule.head_atom()),
            body: stats.rule.body_atoms().into_iter().map(atom).collect(),
            hop: stats.rule.hop(),
            support: stats.instance_count,
            body_count: stats.body_count,
            confidence: stats.confidence().unwrap_or(0.0),
        }
    }

    /// Rebuilds the stats; relation names must resolve in `kg` and the
    /// variables must form the canonical chain.
    pub fn to_stats(&self, kg: &KnowledgeGraph) -> Result<RuleStats, RuleError> {
        let rel = |name: &str| {
            kg.relation_id(name)
                .ok_or_else(|| RuleError::Record(KgError::UnknownRelationName(name.into()).to_string()))
        };
        let body: Vec<RelationId> =
            self.body.iter().map(|a| rel(&a.relation)).collect::<Result<_, _>>()?;
        let rule = Rule::new(rel(&self.head.relation)?, body)?;
        if rule.hop() != self.hop {
            return Err(RuleError::Record(format!("hop {} does not match body", self.hop)));
        }
        let expect = |a: &AtomRecord, want: Atom| -> Result<(), RuleError> {
            let got: (Var, Var) = (a.vars[0].parse()?, a.vars[1].parse()?);
            if got != (want.subject, want.object) {
                return Err(RuleError::Record(format!(
                    "atom {}({},{}) breaks the variable chain",
                    a.relation, a.vars[0], a.vars[1]
                )));
            }
            Ok(())
        };
        expect(&self.head, rule.head_atom())?;
        for (a, want) in self.body.iter().zip(rule.body_atoms()) {
            expect(a, want)?;
        }
        let head_and_body_count = self.support;
        if head_and_body_count > self.body_count {
            return Err(RuleError::Record("support exceeds body count".into()));
        }
        Ok(RuleStats {
            id: rule.encode(kg),
            rule,
            instance_count: self.support,
            body_count: self.body_count,
            head_and_body_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_bounds() {
        let r = RelationId;
        assert_eq!(Rule::new(r(0), vec![r(1)]), Err(RuleError::BadHop(1)));
        assert!(Rule::new(r(0), vec![r(1); 4]).is_ok());
        assert_eq!(Rule::new(r(0), vec![r(1); 5]), Err(RuleError::BadHop(5)));
    }

    #[test]
    fn atoms_form_chain() {
        let rule = Rule::new(RelationId(0), vec![RelationId(1), RelationId(2), RelationId(3)]).unwrap();
        let vars: Vec<(Var, Var)> = rule.body_atoms().iter().map(|a| (a.subject, a.object)).collect();
        assert_eq!(vars, vec![(Var::X, Var::Z(1)), (Var::Z(1), Var::Z(2)), (Var::Z(2), Var::Y)]);
    }

    #[test]
    fn encoding() {
        let kg = KnowledgeGraph::from_tsv("a\tborn_in\tb\nb\tcity_of\tc\na\tcitizen_of\tc\n").unwrap();
        let rel = |n| kg.relation_id(n).unwrap();
        let rule = Rule::new(rel("citizen_of"), vec![rel("born_in"), rel("city_of")]).unwrap();
        assert_eq!(rule.encode(&kg), "citizen_of(X,Y) <- born_in(X,Z1) ^ city_of(Z1,Y)");
    }

    #[test]
    fn threshold_parsing_is_exact() {
        let t: Threshold = "0.6".parse().unwrap();
        assert!(!t.exceeded_by(3, 5));
        assert!(t.exceeded_by(61, 100));
        assert!(!t.exceeded_by(0, 0));
        assert_eq!("1".parse::<Threshold>().unwrap(), Threshold::new(1, 1));
        assert!("1.5".parse::<Threshold>().is_err());
        assert!("-0.1".parse::<Threshold>().is_err());
        assert!("abc".parse::<Threshold>().is_err());
        assert!(".".parse::<Threshold>().is_err());
        assert_eq!(".5".parse::<Threshold>().unwrap().as_f64(), 0.5);
    }

    #[test]
    fn record_round_trip_and_chain_check() {
        let kg = KnowledgeGraph::from_tsv("a\tp\tb\nb\tq\tc\na\th\tc\n").unwrap();
        let rel = |n| kg.relation_id(n).unwrap();
        let rule = Rule::new(rel("h"), vec![rel("p"), rel("q")]).unwrap();
        let stats = RuleStats {
            id: rule.encode(&kg),
            rule,
            instance_count: 1,
            body_count: 2,
            head_and_body_count: 1,
        };
        let rec = RuleRecord::from_stats(&kg, &stats);
        assert_eq!(rec.to_stats(&kg).unwrap(), stats);
        let mut broken = rec.clone();
        broken.body[1].vars[0] = "X".into();
        assert!(broken.to_stats(&kg).is_err());
    }
}
