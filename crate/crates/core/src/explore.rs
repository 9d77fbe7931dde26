//! Trial-and-error exploration: try candidate rules against a fact oracle,
//! record missing facts, move on, and render the resulting trace.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ProbeCache, Verdict, ANSWER_POLISH_INSTRUCTION};
use crate::generation::{
    bounded, known_and_golden, polish_checked, render_chain, render_conclusion, render_fact, Naming, QueryInstance,
};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rule::{Rule, RuleInstance, RuleStats};
use crate::templates::{relation_words, QuerySide, TemplateError, TemplateSet};

/// Membership predicate over facts.
pub trait FactOracle: Sync {
    fn holds(&self, fact: &Triple) -> bool;
}

/// The graph itself.
pub struct KgOracle<'a>(pub &'a KnowledgeGraph);

impl FactOracle for KgOracle<'_> {
    fn holds(&self, fact: &Triple) -> bool {
        self.0.contains(fact)
    }
}

/// An explicit fact set, e.g. the facts of an injected corpus.
#[derive(Clone, Debug, Default)]
pub struct FactSetOracle(pub HashSet<Triple>);

impl FromIterator<Triple> for FactSetOracle {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl FactOracle for FactSetOracle {
    fn holds(&self, fact: &Triple) -> bool {
        self.0.contains(fact)
    }
}

/// Knows nothing.
pub struct EmptyOracle;

impl FactOracle for EmptyOracle {
    fn holds(&self, _: &Triple) -> bool {
        false
    }
}

/// Asks a model whether it knows the rendered fact sentence. Only a known
/// verdict counts as true.
pub struct ProbeOracle<'a> {
    pub cache: &'a ProbeCache<'a>,
    pub templates: &'a TemplateSet,
    pub naming: Naming<'a>,
}

impl FactOracle for ProbeOracle<'_> {
    fn holds(&self, fact: &Triple) -> bool {
        match render_fact(fact, self.templates, &self.naming) {
            Ok(sentence) => self.cache.probe(&sentence) == Verdict::Known,
            Err(_) => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: RelationId,
    pub known: EntityId,
    pub side: QuerySide,
}

impl Query {
    pub fn of_instance(instance: &RuleInstance, side: QuerySide) -> Self {
        let (known, _) = known_and_golden(&instance.head_fact, side);
        Self { head: instance.rule.head(), known, side }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("max_trials must be at least 1")]
    ZeroTrials,
    #[error("exhausted traces have no answer to render")]
    Exhausted,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Rules concluding `head`, by descending confidence, then ascending hop,
/// then encoding.
pub fn order_candidates(library: &[RuleStats], head: RelationId) -> Vec<Rule> {
    let mut rules: Vec<&RuleStats> = library.iter().filter(|s| s.rule.head() == head).collect();
    rules.sort_by(|a, b| {
        a.cmp_confidence_desc(b)
            .then(a.rule.hop().cmp(&b.rule.hop()))
            .then_with(|| a.id.cmp(&b.id))
    });
    rules.into_iter().map(|s| s.rule.clone()).collect()
}

/// The fact an exploration could not establish: from `anchor` along
/// `relation`, either a specific rejected candidate or, when the graph
/// offers none, any entity at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attempted {
    pub anchor: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
    pub rejected: Option<EntityId>,
}

impl Attempted {
    pub fn fact(&self) -> Option<Triple> {
        self.rejected.map(|c| match self.direction {
            Direction::Forward => Triple::new(self.anchor, self.relation, c),
            Direction::Inverse => Triple::new(c, self.relation, self.anchor),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    TryRule(Rule),
    MissingFact {
        rule: Rule,
        atom_index: usize,
        /// Facts established before the failure, in discovery order.
        supported: Vec<Triple>,
        attempted: Attempted,
    },
    Conclude {
        rule: Rule,
        bindings: Vec<EntityId>,
        answer: EntityId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplorationTrace {
    pub query: Query,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

impl ExplorationTrace {
    pub fn trials(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::TryRule(_))).count()
    }

    pub fn errors(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::MissingFact { .. })).count()
    }

    /// `(rule, bindings, answer)` of a success trace.
    pub fn conclusion(&self) -> Option<(&Rule, &[EntityId], EntityId)> {
        match self.steps.last() {
            Some(Step::Conclude { rule, bindings, answer }) => Some((rule, bindings, *answer)),
            _ => None,
        }
    }

    /// Facts stated in the rendered trace: supported facts and one uncertain
    /// fact per failed attempt, plus the final chain.
    pub fn rendered_hops(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                Step::TryRule(_) => 0,
                Step::MissingFact { supported, .. } => supported.len() + 1,
                Step::Conclude { rule, .. } => rule.hop(),
            })
            .sum()
    }
}

struct Failure {
    depth: usize,
    atom_index: usize,
    supported: Vec<Triple>,
    attempted: Attempted,
}

struct Grounder<'a, O: ?Sized> {
    kg: &'a KnowledgeGraph,
    rule: &'a Rule,
    side: QuerySide,
    oracle: &'a O,
    path: Vec<EntityId>,
    facts: Vec<Triple>,
    failure: Option<Failure>,
}

impl<O: FactOracle + ?Sized> Grounder<'_, O> {
    fn atom_at(&self, depth: usize) -> usize {
        match self.side {
            QuerySide::Object => depth,
            QuerySide::Subject => self.rule.hop() - 1 - depth,
        }
    }

    /// Depth-first search in canonical candidate order; true once the path
    /// spans the whole body.
    fn search(&mut self) -> bool {
        let depth = self.facts.len();
        if depth == self.rule.hop() {
            return true;
        }
        let atom = self.atom_at(depth);
        let relation = self.rule.body()[atom];
        let anchor = *self.path.last().expect("path starts at the known entity");
        let direction = match self.side {
            QuerySide::Object => Direction::Forward,
            QuerySide::Subject => Direction::Inverse,
        };
        let mut rejected = None;
        let mut any_true = false;
        for c in self.kg.along(anchor, relation, direction) {
            let fact = match direction {
                Direction::Forward => Triple::new(anchor, relation, c),
                Direction::Inverse => Triple::new(c, relation, anchor),
            };
            if !self.oracle.holds(&fact) {
                rejected.get_or_insert(c);
                continue;
            }
            any_true = true;
            self.path.push(c);
            self.facts.push(fact);
            if self.search() {
                return true;
            }
            self.path.pop();
            self.facts.pop();
        }
        if !any_true && self.failure.as_ref().is_none_or(|f| depth > f.depth) {
            self.failure = Some(Failure {
                depth,
                atom_index: atom,
                supported: self.facts.clone(),
                attempted: Attempted { anchor, relation, direction, rejected },
            });
        }
        false
    }
}

/// Grounds `rule` from the query's known entity. Returns the bindings
/// `[X, Z1, ..., Y]` or the deepest missing fact.
fn ground<O: FactOracle + ?Sized>(
    kg: &KnowledgeGraph,
    rule: &Rule,
    query: &Query,
    oracle: &O,
) -> Result<Vec<EntityId>, Step> {
    let mut g = Grounder {
        kg,
        rule,
        side: query.side,
        oracle,
        path: vec![query.known],
        facts: Vec::with_capacity(rule.hop()),
        failure: None,
    };
    if g.search() {
        let mut bindings = g.path;
        if query.side == QuerySide::Subject {
            bindings.reverse();
        }
        return Ok(bindings);
    }
    let f = g.failure.expect("a failed search records a failure");
    Err(Step::MissingFact { rule: rule.clone(), atom_index: f.atom_index, supported: f.supported, attempted: f.attempted })
}

fn answer_of(bindings: &[EntityId], side: QuerySide) -> EntityId {
    match side {
        QuerySide::Object => *bindings.last().expect("non-empty"),
        QuerySide::Subject => bindings[0],
    }
}

/// Tries `candidates` in order until one is fully supported by `oracle`, or
/// until candidates or `max_trials` run out.
pub fn explore<O: FactOracle + ?Sized>(
    kg: &KnowledgeGraph,
    query: Query,
    candidates: &[Rule],
    oracle: &O,
    max_trials: usize,
) -> Result<ExplorationTrace, ExploreError> {
    if max_trials == 0 {
        return Err(ExploreError::ZeroTrials);
    }
    let mut steps = Vec::new();
    for rule in candidates.iter().take(max_trials) {
        steps.push(Step::TryRule(rule.clone()));
        match ground(kg, rule, &query, oracle) {
            Ok(bindings) => {
                let answer = answer_of(&bindings, query.side);
                steps.push(Step::Conclude { rule: rule.clone(), bindings, answer });
                return Ok(ExplorationTrace { query, steps, outcome: Outcome::Success });
            }
            Err(missing) => steps.push(missing),
        }
    }
    Ok(ExplorationTrace { query, steps, outcome: Outcome::Exhausted })
}

/// Training trace for a pool instance: the first unsupported competing rule
/// (if any within `max_trials - 1` tries) followed by the instance's own
/// rule, concluded with the instance's bindings.
pub fn synthesize<O: FactOracle + ?Sized>(
    kg: &KnowledgeGraph,
    q: &QueryInstance,
    library: &[RuleStats],
    oracle: &O,
    max_trials: usize,
) -> Result<ExplorationTrace, ExploreError> {
    if max_trials == 0 {
        return Err(ExploreError::ZeroTrials);
    }
    let query = Query::of_instance(q.instance, q.side);
    let own = &q.instance.rule;
    let mut steps = Vec::new();
    let distractors = order_candidates(library, query.head);
    for rule in distractors.iter().filter(|r| *r != own).take(max_trials - 1) {
        if let Err(missing) = ground(kg, rule, &query, oracle) {
            steps.push(Step::TryRule(rule.clone()));
            steps.push(missing);
            break;
        }
    }
    steps.push(Step::TryRule(own.clone()));
    let unsupported = q.instance.body_facts.iter().position(|f| !oracle.holds(f));
    if let Some(atom_index) = unsupported {
        let f = q.instance.body_facts[atom_index];
        steps.push(Step::MissingFact {
            rule: own.clone(),
            atom_index,
            supported: q.instance.body_facts[..atom_index].to_vec(),
            attempted: Attempted { anchor: f.head, relation: f.relation, direction: Direction::Forward, rejected: Some(f.tail) },
        });
        return Ok(ExplorationTrace { query, steps, outcome: Outcome::Exhausted });
    }
    let bindings = q.instance.bindings.clone();
    let answer = answer_of(&bindings, q.side);
    steps.push(Step::Conclude { rule: own.clone(), bindings, answer });
    Ok(ExplorationTrace { query, steps, outcome: Outcome::Success })
}

/// Explores many queries in parallel; output order follows `queries`.
pub fn explore_all<O: FactOracle + ?Sized>(
    kg: &KnowledgeGraph,
    queries: &[Query],
    library: &[RuleStats],
    oracle: &O,
    max_trials: usize,
    workers: usize,
) -> Result<Vec<ExplorationTrace>, ExploreError> {
    bounded(workers, || {
        queries
            .par_iter()
            .map(|q| explore(kg, *q, &order_candidates(library, q.head), oracle, max_trials))
            .collect()
    })
}

fn uncertainty(a: &Attempted, naming: &Naming) -> String {
    let words = relation_words(naming.kg().relation_name(a.relation));
    let anchor = naming.entity(a.anchor);
    match a.direction {
        Direction::Forward => format!("{anchor}'s {words}"),
        Direction::Inverse => format!("what has the {words} {anchor}"),
    }
}

fn trace_names<'a>(trace: &ExplorationTrace, naming: &Naming<'a>) -> Vec<&'a str> {
    let mut names = Vec::new();
    for step in &trace.steps {
        match step {
            Step::TryRule(_) => {}
            Step::MissingFact { supported, attempted, .. } => {
                names.extend(supported.iter().flat_map(|t| [naming.entity(t.head), naming.entity(t.tail)]));
                names.push(naming.entity(attempted.anchor));
            }
            Step::Conclude { bindings, .. } => names.extend(bindings.iter().map(|&e| naming.entity(e))),
        }
    }
    names.sort_unstable();
    names.dedup();
    names
}

/// Natural-language trace. A trace without errors renders exactly like the
/// plain answer for its final chain.
pub fn render_trace(
    kg: &KnowledgeGraph,
    trace: &ExplorationTrace,
    templates: &TemplateSet,
    naming: &Naming,
    polisher: Option<&dyn crate::client::ModelClient>,
) -> Result<String, ExploreError> {
    if trace.outcome != Outcome::Success || trace.conclusion().is_none() {
        return Err(ExploreError::Exhausted);
    }
    let errors = trace.errors();
    let mut parts: Vec<String> = Vec::new();
    let mut first = true;
    for step in &trace.steps {
        match step {
            Step::TryRule(rule) if errors > 0 => {
                let lead = if first {
                    "To find the answer, we can follow the reasoning path:"
                } else {
                    "Let's consider a different path:"
                };
                parts.push(format!("{lead} {}.", rule.encode(kg)));
                first = false;
            }
            Step::TryRule(_) => {}
            Step::MissingFact { supported, attempted, .. } => {
                if !supported.is_empty() {
                    parts.push(render_chain(supported, templates, naming)?);
                }
                parts.push(format!(
                    "But since we are unsure of {}, this path is not applicable.",
                    uncertainty(attempted, naming)
                ));
            }
            Step::Conclude { rule, bindings, answer } => {
                let inst = RuleInstance::from_bindings(rule, bindings.clone());
                parts.push(render_chain(&inst.body_facts, templates, naming)?);
                parts.push(render_conclusion(&inst.head_fact, *answer, templates, naming)?);
            }
        }
    }
    let text = parts.join(" ");
    Ok(polish_checked(polisher, ANSWER_POLISH_INSTRUCTION, &text, &trace_names(trace, naming)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub rule_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_index: Option<usize>,
    /// Missing fact (unknown end written `?`) or concluded head fact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<[String; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}

impl TraceRecord {
    pub fn from_trace(kg: &KnowledgeGraph, trace: &ExplorationTrace, naming: &Naming) -> Self {
        let steps = trace
            .steps
            .iter()
            .map(|s| match s {
                Step::TryRule(rule) => StepRecord {
                    kind: "try_rule".into(),
                    rule_id: rule.encode(kg),
                    atom_index: None,
                    fact: None,
                    answer: None,
                },
                Step::MissingFact { rule, atom_index, attempted, .. } => {
                    let anchor = naming.entity(attempted.anchor).to_owned();
                    let other = attempted.rejected.map_or("?".to_owned(), |c| naming.entity(c).to_owned());
                    let rel = kg.relation_name(attempted.relation).to_owned();
                    let fact = match attempted.direction {
                        Direction::Forward => [anchor, rel, other],
                        Direction::Inverse => [other, rel, anchor],
                    };
                    StepRecord {
                        kind: "missing_fact".into(),
                        rule_id: rule.encode(kg),
                        atom_index: Some(*atom_index),
                        fact: Some(fact),
                        answer: None,
                    }
                }
                Step::Conclude { rule, bindings, answer } => {
                    let inst = RuleInstance::from_bindings(rule, bindings.clone());
                    StepRecord {
                        kind: "conclude".into(),
                        rule_id: rule.encode(kg),
                        atom_index: None,
                        fact: Some(naming.fact(&inst.head_fact)),
                        answer: Some(naming.entity(*answer).to_owned()),
                    }
                }
            })
            .collect();
        Self { steps, outcome: trace.outcome }
    }
}
