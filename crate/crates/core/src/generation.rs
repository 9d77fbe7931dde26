//! Rendering of pool instances into questions, chain-of-knowledge answers and
//! entity-centric knowledge corpora.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ModelClient, ANSWER_POLISH_INSTRUCTION};
use crate::explore::TraceRecord;
use crate::kg::{Direction, EntityId, KnowledgeGraph, Triple};
use crate::rule::RuleInstance;
use crate::selection::{AnonymizationMap, SelectionPool, Setting};
use crate::templates::{QuerySide, TemplateError, TemplateSet, CONCLUSION_WORDS};

/// Facts per corpus group.
pub const CORPUS_GROUP: usize = 10;
/// Versions generated per corpus group.
pub const CORPUS_VERSIONS: u8 = 4;

pub const CORPUS_POLISH_INSTRUCTION: &str =
    "Turn these facts into a single flowing paragraph. Keep every name exactly as written and introduce no new facts:";

/// Words the renderers emit around facts; synthetic names must avoid them.
const NARRATIVE_WORDS: &[&str] = &[
    "a", "alternative", "answer", "applicable", "are", "as", "but", "can", "consider", "correct",
    "different", "entity", "find", "follow", "has", "is", "it", "its", "let's", "means", "not",
    "of", "path", "possible", "reasoning", "since", "that", "the", "this", "to", "unsure", "we",
    "which",
];

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("corpus input has no facts")]
    NoFacts,
}

/// Surface names of entities in one setting.
#[derive(Clone, Copy)]
pub struct Naming<'a> {
    kg: &'a KnowledgeGraph,
    anon: Option<&'a AnonymizationMap>,
}

impl<'a> Naming<'a> {
    pub fn new(kg: &'a KnowledgeGraph, anon: Option<&'a AnonymizationMap>) -> Self {
        Self { kg, anon }
    }

    pub fn of_pool(kg: &'a KnowledgeGraph, pool: &'a SelectionPool) -> Self {
        Self::new(kg, pool.anonymization())
    }

    pub fn kg(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    pub fn entity(&self, e: EntityId) -> &'a str {
        match self.anon {
            Some(map) => map.name(e),
            None => self.kg.entity_name(e),
        }
    }

    pub fn resolve(&self, name: &str) -> Option<EntityId> {
        match self.anon {
            Some(map) => map.resolve(name),
            None => self.kg.entity_id(name),
        }
    }

    /// Every entity's surface name, in id order.
    pub fn names(&self) -> Vec<&'a str> {
        self.kg.entities().map(|e| self.entity(e)).collect()
    }

    pub fn fact(&self, t: &Triple) -> [String; 3] {
        [
            self.entity(t.head).to_owned(),
            self.kg.relation_name(t.relation).to_owned(),
            self.entity(t.tail).to_owned(),
        ]
    }
}

/// Lowercase words that may appear in rendered text around entity names.
pub fn reserved_words(templates: &TemplateSet) -> HashSet<String> {
    let mut out: HashSet<String> = NARRATIVE_WORDS.iter().map(|w| w.to_string()).collect();
    out.extend(CONCLUSION_WORDS.iter().map(|w| w.to_string()));
    for t in templates.relation_templates() {
        out.extend(
            t.pattern()
                .split(|c: char| !c.is_alphanumeric() && c != '\'')
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase),
        );
    }
    out
}

/// Side of the head atom to ask about so that the answer is unique.
pub fn select_query_side(kg: &KnowledgeGraph, head: &Triple) -> Option<QuerySide> {
    let unique = |e, dir| {
        let mut it = kg.along(e, head.relation, dir);
        it.next().is_some() && it.next().is_none()
    };
    if unique(head.head, Direction::Forward) {
        Some(QuerySide::Object)
    } else if unique(head.tail, Direction::Inverse) {
        Some(QuerySide::Subject)
    } else {
        None
    }
}

/// `(known, golden)` entities of a head fact for a query side.
pub fn known_and_golden(head: &Triple, side: QuerySide) -> (EntityId, EntityId) {
    match side {
        QuerySide::Object => (head.head, head.tail),
        QuerySide::Subject => (head.tail, head.head),
    }
}

pub fn render_question(
    instance: &RuleInstance,
    side: QuerySide,
    templates: &TemplateSet,
    naming: &Naming,
) -> Result<String, TemplateError> {
    let head = &instance.head_fact;
    let (known, _) = known_and_golden(head, side);
    templates
        .question(naming.kg.relation_name(head.relation), side)?
        .render(naming.entity(known))
}

pub fn render_fact(t: &Triple, templates: &TemplateSet, naming: &Naming) -> Result<String, TemplateError> {
    templates
        .relation(naming.kg.relation_name(t.relation))?
        .render(naming.entity(t.head), naming.entity(t.tail))
}

/// Fact sentences separated by single spaces.
pub fn render_chain(facts: &[Triple], templates: &TemplateSet, naming: &Naming) -> Result<String, TemplateError> {
    let sentences = facts
        .iter()
        .map(|t| render_fact(t, templates, naming))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sentences.join(" "))
}

/// Possibility-tone conclusion followed by the answer sentence.
pub fn render_conclusion(
    head: &Triple,
    answer: EntityId,
    templates: &TemplateSet,
    naming: &Naming,
) -> Result<String, TemplateError> {
    let possible = templates
        .relation(naming.kg.relation_name(head.relation))?
        .render_possible(naming.entity(head.head), naming.entity(head.tail))?;
    Ok(format!("Therefore, {possible}. Thus, {} is the answer.", naming.entity(answer)))
}

/// Template-only answer: body facts in chain order, then the conclusion.
pub fn plain_cok_answer(
    instance: &RuleInstance,
    side: QuerySide,
    templates: &TemplateSet,
    naming: &Naming,
) -> Result<String, TemplateError> {
    let (_, golden) = known_and_golden(&instance.head_fact, side);
    let chain = render_chain(&instance.body_facts, templates, naming)?;
    let conclusion = render_conclusion(&instance.head_fact, golden, templates, naming)?;
    Ok(format!("{chain} {conclusion}"))
}

fn mentions_all(text: &str, names: &[&str]) -> bool {
    names.iter().all(|n| text.contains(n))
}

/// Polishes `text`, keeping the original when any required name is lost.
pub fn polish_checked(polisher: Option<&dyn ModelClient>, instruction: &str, text: &str, required: &[&str]) -> String {
    let Some(client) = polisher else { return text.to_owned() };
    match client.polish(instruction, text) {
        Ok(out) if mentions_all(&out, required) => out,
        Ok(_) => {
            log::warn!("polished text dropped an entity name; keeping the template text");
            text.to_owned()
        }
        Err(e) => {
            log::warn!("polish failed ({e}); keeping the template text");
            text.to_owned()
        }
    }
}

fn instance_names<'a>(instance: &RuleInstance, naming: &Naming<'a>) -> Vec<&'a str> {
    let mut names: Vec<&str> = instance.bindings.iter().map(|&e| naming.entity(e)).collect();
    names.sort_unstable();
    names.dedup();
    names
}

pub fn render_cok_answer(
    instance: &RuleInstance,
    side: QuerySide,
    templates: &TemplateSet,
    naming: &Naming,
    polisher: Option<&dyn ModelClient>,
) -> Result<String, TemplateError> {
    let plain = plain_cok_answer(instance, side, templates, naming)?;
    let names = instance_names(instance, naming);
    Ok(polish_checked(polisher, ANSWER_POLISH_INSTRUCTION, &plain, &names))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub relation: String,
    pub known_entity: String,
    pub side: QuerySide,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoKSample {
    pub id: String,
    pub setting: Setting,
    pub hop: usize,
    pub rule_id: String,
    pub question: String,
    pub answer: String,
    pub golden_entity: String,
    pub query: QueryRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRecord>,
}

/// A pool instance selected for questioning.
#[derive(Clone, Copy, Debug)]
pub struct QueryInstance<'p> {
    pub rule_id: &'p str,
    pub instance: &'p RuleInstance,
    pub side: QuerySide,
}

/// Pool instances with a unique answer, in canonical pool order.
pub fn query_instances<'p>(kg: &KnowledgeGraph, pool: &'p SelectionPool) -> Vec<QueryInstance<'p>> {
    pool.instances()
        .filter_map(|(rule_id, instance)| {
            select_query_side(kg, &instance.head_fact).map(|side| QueryInstance { rule_id, instance, side })
        })
        .collect()
}

pub fn query_record(q: &QueryInstance, naming: &Naming) -> QueryRecord {
    let (known, _) = known_and_golden(&q.instance.head_fact, q.side);
    QueryRecord {
        relation: naming.kg.relation_name(q.instance.rule.head()).to_owned(),
        known_entity: naming.entity(known).to_owned(),
        side: q.side,
    }
}

pub fn sample_id(prefix: &str, n: usize) -> String {
    format!("{prefix}-{n:06}")
}

/// Runs `job` on a rayon pool of `threads` workers.
pub(crate) fn bounded<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(tp) => tp.install(job),
        Err(_) => job(),
    }
}

/// Renders one CoK sample per uniquely answerable pool instance.
pub fn generate_samples(
    kg: &KnowledgeGraph,
    pool: &SelectionPool,
    templates: &TemplateSet,
    polisher: Option<&dyn ModelClient>,
    parallelism: usize,
) -> Result<Vec<CoKSample>, GenerationError> {
    let naming = Naming::of_pool(kg, pool);
    let queries = query_instances(kg, pool);
    let skipped = pool.len() - queries.len();
    if skipped > 0 {
        log::info!("{skipped} instances skipped: answer not unique on either side");
    }
    let rendered: Vec<Result<CoKSample, TemplateError>> = bounded(parallelism, || {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let (_, golden) = known_and_golden(&q.instance.head_fact, q.side);
                Ok(CoKSample {
                    id: sample_id("cok", i + 1),
                    setting: pool.setting,
                    hop: q.instance.rule.hop(),
                    rule_id: q.rule_id.to_owned(),
                    question: render_question(q.instance, q.side, templates, &naming)?,
                    answer: render_cok_answer(q.instance, q.side, templates, &naming, polisher)?,
                    golden_entity: naming.entity(golden).to_owned(),
                    query: query_record(q, &naming),
                    trace: None,
                })
            })
            .collect()
    });
    Ok(rendered.into_iter().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub entity: String,
    pub version: u8,
    pub text: String,
    pub source_facts: Vec<[String; 3]>,
}

/// Groups of at most ten facts about `entity`, each in four versions: the
/// first in the given order, the rest seeded sentence-order permutations.
pub fn build_entity_corpus(
    entity: EntityId,
    facts: &[Triple],
    templates: &TemplateSet,
    naming: &Naming,
    polisher: Option<&dyn ModelClient>,
    seed: u64,
) -> Result<Vec<CorpusDoc>, GenerationError> {
    if facts.is_empty() {
        return Err(GenerationError::NoFacts);
    }
    let name = naming.entity(entity);
    let mut docs = Vec::new();
    for (g, group) in facts.chunks(CORPUS_GROUP).enumerate() {
        let sentences = group
            .iter()
            .map(|t| render_fact(t, templates, naming))
            .collect::<Result<Vec<_>, _>>()?;
        let mut required: Vec<&str> = group.iter().flat_map(|t| [naming.entity(t.head), naming.entity(t.tail)]).collect();
        required.sort_unstable();
        required.dedup();
        let source_facts: Vec<[String; 3]> = group.iter().map(|t| naming.fact(t)).collect();
        for version in 1..=CORPUS_VERSIONS {
            let mut order = sentences.clone();
            if version > 1 {
                let label = format!("corpus/{name}/{g}/{version}");
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::selection::sub_seed(seed, &label)));
            }
            let text = polish_checked(polisher, CORPUS_POLISH_INSTRUCTION, &order.join(" "), &required);
            docs.push(CorpusDoc { entity: name.to_owned(), version, text, source_facts: source_facts.clone() });
        }
    }
    Ok(docs)
}

/// Corpus over the body facts of every pool instance, each fact filed under
/// its subject entity.
pub fn build_corpus(
    kg: &KnowledgeGraph,
    pool: &SelectionPool,
    templates: &TemplateSet,
    polisher: Option<&dyn ModelClient>,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<CorpusDoc>, GenerationError> {
    let naming = Naming::of_pool(kg, pool);
    let mut by_entity: BTreeMap<EntityId, Vec<Triple>> = BTreeMap::new();
    for (_, inst) in pool.instances() {
        for t in &inst.body_facts {
            by_entity.entry(t.head).or_default().push(*t);
        }
    }
    for facts in by_entity.values_mut() {
        facts.sort_unstable();
        facts.dedup();
    }
    let groups: Vec<(EntityId, Vec<Triple>)> = by_entity.into_iter().collect();
    let docs: Vec<Result<Vec<CorpusDoc>, GenerationError>> = bounded(parallelism, || {
        groups
            .par_iter()
            .map(|(e, facts)| build_entity_corpus(*e, facts, templates, &naming, polisher, seed))
            .collect()
    });
    let mut out = Vec::new();
    for d in docs {
        out.extend(d?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::MockClient;
    use crate::mining::ground_rule;
    use crate::rule::Rule;
    use crate::selection::Provenance;

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::from_tsv(
            "Anykid\tmember_of_team\tCckqlvy\n\
             Cckqlvy\tteam_country\tVevedgta\n\
             Anykid\tcitizen_of\tVevedgta\n",
        )
        .unwrap()
    }

    fn team_rule(kg: &KnowledgeGraph) -> Rule {
        let r = |n| kg.relation_id(n).unwrap();
        Rule::new(r("citizen_of"), vec![r("member_of_team"), r("team_country")]).unwrap()
    }

    fn templates() -> TemplateSet {
        TemplateSet::fallback(["member_of_team", "team_country", "citizen_of"])
    }

    #[test]
    fn query_side_rules() {
        let kg = KnowledgeGraph::from_tsv("a\tr\tc\na\tr\td\nb\tr\tc\n").unwrap();
        let t = |h, tl| kg.resolve(h, "r", tl).unwrap();
        // a has two r-objects; c has two r-subjects.
        assert_eq!(select_query_side(&kg, &t("a", "c")), None);
        assert_eq!(select_query_side(&kg, &t("b", "c")), Some(QuerySide::Object));
        assert_eq!(select_query_side(&kg, &t("a", "d")), Some(QuerySide::Subject));
        let kg = KnowledgeGraph::from_tsv("a\tr\tc\n").unwrap();
        assert_eq!(select_query_side(&kg, &kg.resolve("a", "r", "c").unwrap()), Some(QuerySide::Object));
    }

    #[test]
    fn question_and_answer_shape() {
        let kg = kg();
        let naming = Naming::new(&kg, None);
        let rule = team_rule(&kg);
        let inst = &ground_rule(&kg, &rule, true)[0];
        let side = select_query_side(&kg, &inst.head_fact).unwrap();
        assert_eq!(side, QuerySide::Object);
        let q = render_question(inst, side, &templates(), &naming).unwrap();
        assert_eq!(q, "Which country might Anykid be a citizen of?");
        let a = render_cok_answer(inst, side, &templates(), &naming, None).unwrap();
        assert_eq!(
            a,
            "Cckqlvy has Anykid as a part of their team. Cckqlvy is from the country Vevedgta. \
             Therefore, it is possible that Anykid is a citizen of Vevedgta. Thus, Vevedgta is the answer."
        );
        let mock = MockClient::default();
        assert_eq!(render_cok_answer(inst, side, &templates(), &naming, Some(&mock)).unwrap(), a);
    }

    #[test]
    fn polish_validation_falls_back() {
        struct Lossy;
        impl ModelClient for Lossy {
            fn probe_fact(&self, _: &str) -> Result<crate::client::Verdict, crate::client::ClientError> {
                Ok(crate::client::Verdict::Undecided)
            }
            fn polish(&self, _: &str, _: &str) -> Result<String, crate::client::ClientError> {
                Ok("Something else entirely.".into())
            }
            fn complete(&self, _: &str) -> Option<String> {
                None
            }
        }
        assert_eq!(polish_checked(Some(&Lossy), "x", "Ann met Bob.", &["Ann", "Bob"]), "Ann met Bob.");
    }

    #[test]
    fn four_hop_answer_has_four_sentences() {
        let kg = KnowledgeGraph::from_tsv("a\tp\tb\nb\tp\tc\nc\tp\td\nd\tp\te\na\th\te\n").unwrap();
        let p = kg.relation_id("p").unwrap();
        let rule = Rule::new(kg.relation_id("h").unwrap(), vec![p; 4]).unwrap();
        let inst = &ground_rule(&kg, &rule, true)[0];
        let set = TemplateSet::fallback(["p", "h"]);
        let a = plain_cok_answer(inst, QuerySide::Object, &set, &Naming::new(&kg, None)).unwrap();
        let (chain, _) = a.split_once("Therefore").unwrap();
        assert_eq!(chain.matches("has the p").count(), 4);
    }

    #[test]
    fn corpus_groups_and_versions() {
        let mut tsv = String::new();
        for i in 0..23 {
            tsv.push_str(&format!("hub\tlinks\tn{i}\n"));
        }
        let kg = KnowledgeGraph::from_tsv(&tsv).unwrap();
        let hub = kg.entity_id("hub").unwrap();
        let facts: Vec<Triple> = kg.triples().collect();
        let set = TemplateSet::fallback(["links"]);
        let naming = Naming::new(&kg, None);
        let docs = build_entity_corpus(hub, &facts, &set, &naming, None, 5).unwrap();
        assert_eq!(docs.len(), 12);
        for d in &docs {
            assert!(d.text.contains("hub"));
            for f in &d.source_facts {
                assert!(d.text.contains(&f[0]) && d.text.contains(&f[2]));
            }
        }
        assert_eq!(build_entity_corpus(hub, &facts[..1], &set, &naming, None, 5).unwrap().len(), 4);
        assert!(matches!(build_entity_corpus(hub, &[], &set, &naming, None, 5), Err(GenerationError::NoFacts)));
        assert_eq!(docs, build_entity_corpus(hub, &facts, &set, &naming, None, 5).unwrap());
    }

    #[test]
    fn samples_are_deterministic() {
        let kg = kg();
        let rule = team_rule(&kg);
        let mut per_rule = BTreeMap::new();
        per_rule.insert(rule.encode(&kg), ground_rule(&kg, &rule, true));
        let pool = SelectionPool::new(Setting::Regular, per_rule, Provenance::default());
        let a = generate_samples(&kg, &pool, &templates(), None, 2).unwrap();
        let b = generate_samples(&kg, &pool, &templates(), None, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].id, "cok-000001");
        assert_eq!(a[0].hop, 2);
        assert!(a[0].answer.contains(&a[0].golden_entity));
    }
}
