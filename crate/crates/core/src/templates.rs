//! Relation and question templates, and the template-driven fact matcher
//! used to read facts back out of generated or model-written text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

use crate::client::ModelClient;

pub const SLOT_SUBJECT: &str = "<ENT1>";
pub const SLOT_OBJECT: &str = "<ENT2>";
pub const SLOT_QUERY: &str = "<ENT>";

/// Words that open a conclusion in rendered answers. Relation templates may
/// not contain them, otherwise the fact chain could not be delimited.
pub const CONCLUSION_WORDS: &[&str] = &["therefore", "thus", "hence", "consequently", "so"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template for `{relation}` must contain {slot} exactly once: `{pattern}`")]
    Slot { relation: String, slot: &'static str, pattern: String },
    #[error("template for `{relation}` uses the reserved conclusion word `{word}`")]
    Reserved { relation: String, word: &'static str },
    #[error("no relation template for `{0}`")]
    MissingRelation(String),
    #[error("no {1} question template for `{0}`")]
    MissingQuestion(String, QuerySide),
    #[error("empty entity name")]
    EmptyEntity,
    #[error("line {0}: {1}")]
    Parse(usize, String),
}

/// Which end of the head atom a question asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySide {
    /// Ask for X given Y.
    Subject,
    /// Ask for Y given X.
    Object,
}

impl fmt::Display for QuerySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuerySide::Subject => "subject",
            QuerySide::Object => "object",
        })
    }
}

impl FromStr for QuerySide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subject" => Ok(QuerySide::Subject),
            "object" => Ok(QuerySide::Object),
            other => Err(format!("unknown query side `{other}`")),
        }
    }
}

fn count(hay: &str, needle: &str) -> usize {
    hay.matches(needle).count()
}

fn contains_word(text: &str, word: &str) -> bool {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .any(|w| w == word)
}

/// Sentence pattern for one relation, e.g. `<ENT1> is a citizen of <ENT2>.`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationTemplate {
    relation: String,
    pattern: String,
}

impl RelationTemplate {
    pub fn new(relation: &str, pattern: &str) -> Result<Self, TemplateError> {
        for slot in [SLOT_SUBJECT, SLOT_OBJECT] {
            if count(pattern, slot) != 1 {
                return Err(TemplateError::Slot {
                    relation: relation.into(),
                    slot,
                    pattern: pattern.into(),
                });
            }
        }
        let literal = pattern.replace(SLOT_SUBJECT, " ").replace(SLOT_OBJECT, " ");
        if let Some(&word) = CONCLUSION_WORDS.iter().find(|w| contains_word(&literal, w)) {
            return Err(TemplateError::Reserved { relation: relation.into(), word });
        }
        Ok(Self { relation: relation.into(), pattern: pattern.trim().into() })
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn render(&self, subject: &str, object: &str) -> Result<String, TemplateError> {
        if subject.trim().is_empty() || object.trim().is_empty() {
            return Err(TemplateError::EmptyEntity);
        }
        let mut s = self.pattern.replace(SLOT_SUBJECT, subject).replace(SLOT_OBJECT, object);
        if !s.ends_with(['.', '!', '?']) {
            s.push('.');
        }
        Ok(s)
    }

    /// Possibility-tone clause for a conclusion, without final punctuation:
    /// `it is possible that <sentence>`.
    pub fn render_possible(&self, subject: &str, object: &str) -> Result<String, TemplateError> {
        let sentence = self.render(subject, object)?;
        let body = sentence.trim_end_matches(['.', '!', '?']);
        let body = if self.pattern.starts_with('<') { body.to_owned() } else { lower_first(body) };
        Ok(format!("it is possible that {body}"))
    }

    /// `(prefix, subject_first, middle, suffix)` with the final period
    /// removed from the suffix.
    fn parts(&self) -> (String, bool, String, String) {
        let s = self.pattern.find(SLOT_SUBJECT).expect("validated");
        let o = self.pattern.find(SLOT_OBJECT).expect("validated");
        let (first, first_len, second, second_len) = if s < o {
            (s, SLOT_SUBJECT.len(), o, SLOT_OBJECT.len())
        } else {
            (o, SLOT_OBJECT.len(), s, SLOT_SUBJECT.len())
        };
        let prefix = self.pattern[..first].to_owned();
        let middle = self.pattern[first + first_len..second].to_owned();
        let suffix = self.pattern[second + second_len..].trim_end_matches('.').to_owned();
        (prefix, s < o, middle, suffix)
    }
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionTemplate {
    relation: String,
    side: QuerySide,
    pattern: String,
}

impl QuestionTemplate {
    pub fn new(relation: &str, side: QuerySide, pattern: &str) -> Result<Self, TemplateError> {
        if count(pattern, SLOT_QUERY) != 1 {
            return Err(TemplateError::Slot {
                relation: relation.into(),
                slot: SLOT_QUERY,
                pattern: pattern.into(),
            });
        }
        Ok(Self { relation: relation.into(), side, pattern: pattern.trim().into() })
    }

    pub fn side(&self) -> QuerySide {
        self.side
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Substitutes the known entity.
    pub fn render(&self, known: &str) -> Result<String, TemplateError> {
        if known.trim().is_empty() {
            return Err(TemplateError::EmptyEntity);
        }
        Ok(self.pattern.replace(SLOT_QUERY, known))
    }
}

/// Human-readable relation label: `member_of_team` -> `member of team`.
pub fn relation_words(relation: &str) -> String {
    relation.replace(['_', '-'], " ").trim().to_owned()
}

const BUILTIN_RELATIONS: &[(&str, &str)] = &[
    ("born_in", "<ENT1> was born in <ENT2>."),
    ("cast_member", "<ENT1> has <ENT2> as a cast member."),
    ("citizen_of", "<ENT1> is a citizen of <ENT2>."),
    ("city_of", "<ENT1> is a city in <ENT2>."),
    ("film_country", "<ENT1> was produced in the country <ENT2>."),
    ("headquarters", "<ENT1> has its headquarters in <ENT2>."),
    ("high_school", "<ENT1> went to high school at <ENT2>."),
    ("lives_in", "<ENT1> lives in <ENT2>."),
    ("located_in", "<ENT1> is located in <ENT2>."),
    ("member_of_team", "<ENT2> has <ENT1> as a part of their team."),
    ("official_language", "The official language of <ENT1> is <ENT2>."),
    ("original_language", "The original language of <ENT1> is <ENT2>."),
    ("speaks", "<ENT1> speaks the language <ENT2>."),
    ("spouse", "<ENT1> is married to <ENT2>."),
    ("team_country", "<ENT1> is from the country <ENT2>."),
    ("works_for", "<ENT1> works for <ENT2>."),
];

const BUILTIN_QUESTIONS: &[(&str, QuerySide, &str)] = &[
    ("born_in", QuerySide::Object, "In which city might <ENT> have been born?"),
    ("born_in", QuerySide::Subject, "Who might have been born in <ENT>?"),
    ("citizen_of", QuerySide::Object, "Which country might <ENT> be a citizen of?"),
    ("citizen_of", QuerySide::Subject, "Who might be a citizen of <ENT>?"),
    ("film_country", QuerySide::Object, "In which country might <ENT> have been produced?"),
    ("film_country", QuerySide::Subject, "Which film might have been produced in <ENT>?"),
    ("lives_in", QuerySide::Object, "Which city might <ENT> live in?"),
    ("lives_in", QuerySide::Subject, "Who might live in <ENT>?"),
    ("original_language", QuerySide::Object, "What may be the original language of <ENT>?"),
    ("original_language", QuerySide::Subject, "Which work might have <ENT> as its original language?"),
    ("speaks", QuerySide::Object, "Which language might <ENT> speak?"),
    ("speaks", QuerySide::Subject, "Who might speak <ENT>?"),
    ("team_country", QuerySide::Object, "Which country might the team <ENT> be from?"),
    ("team_country", QuerySide::Subject, "Which team might be from <ENT>?"),
];

/// All templates for one run, keyed by relation name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplateSet {
    relations: BTreeMap<String, RelationTemplate>,
    questions: BTreeMap<(String, QuerySide), QuestionTemplate>,
}

impl TemplateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_relation(&mut self, t: RelationTemplate) {
        self.relations.insert(t.relation.clone(), t);
    }

    pub fn insert_question(&mut self, t: QuestionTemplate) {
        self.questions.insert((t.relation.clone(), t.side), t);
    }

    /// Hand-written templates for the listed relations, with a generic
    /// phrasing for any relation the built-in table does not cover.
    pub fn fallback<'a, I: IntoIterator<Item = &'a str>>(relations: I) -> Self {
        let mut set = Self::new();
        for rel in relations {
            let pattern = BUILTIN_RELATIONS
                .iter()
                .find(|(r, _)| *r == rel)
                .map(|(_, p)| (*p).to_owned())
                .unwrap_or_else(|| format!("<ENT1> has the {} <ENT2>.", relation_words(rel)));
            match RelationTemplate::new(rel, &pattern) {
                Ok(t) => set.insert_relation(t),
                Err(_) => set.insert_relation(
                    RelationTemplate::new(rel, "<ENT1> is linked to <ENT2>.").expect("static template"),
                ),
            }
            for side in [QuerySide::Object, QuerySide::Subject] {
                let pattern = BUILTIN_QUESTIONS
                    .iter()
                    .find(|(r, s, _)| *r == rel && *s == side)
                    .map(|(_, _, p)| (*p).to_owned())
                    .unwrap_or_else(|| match side {
                        QuerySide::Object => format!("What might be the {} of <ENT>?", relation_words(rel)),
                        QuerySide::Subject => {
                            format!("Which entity might have the {} <ENT>?", relation_words(rel))
                        }
                    });
                set.insert_question(QuestionTemplate::new(rel, side, &pattern).expect("one slot"));
            }
        }
        set
    }

    pub fn relation(&self, relation: &str) -> Result<&RelationTemplate, TemplateError> {
        self.relations
            .get(relation)
            .ok_or_else(|| TemplateError::MissingRelation(relation.into()))
    }

    pub fn question(&self, relation: &str, side: QuerySide) -> Result<&QuestionTemplate, TemplateError> {
        self.questions
            .get(&(relation.to_owned(), side))
            .ok_or_else(|| TemplateError::MissingQuestion(relation.into(), side))
    }

    pub fn relation_templates(&self) -> impl Iterator<Item = &RelationTemplate> {
        self.relations.values()
    }

    /// `relation\tpattern` lines, sorted by relation.
    pub fn relations_tsv(&self) -> String {
        self.relations.values().map(|t| format!("{}\t{}\n", t.relation, t.pattern)).collect()
    }

    /// `relation\tside\tpattern` lines, sorted by relation then side.
    pub fn questions_tsv(&self) -> String {
        self.questions
            .values()
            .map(|t| format!("{}\t{}\t{}\n", t.relation, t.side, t.pattern))
            .collect()
    }

    pub fn parse(relations_tsv: &str, questions_tsv: &str) -> Result<Self, TemplateError> {
        let mut set = Self::new();
        for (i, line) in relations_tsv.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (rel, pattern) = line
                .split_once('\t')
                .ok_or_else(|| TemplateError::Parse(i + 1, "expected `relation<TAB>pattern`".into()))?;
            set.insert_relation(RelationTemplate::new(rel, pattern)?);
        }
        for (i, line) in questions_tsv.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(3, '\t').collect();
            if fields.len() != 3 {
                return Err(TemplateError::Parse(i + 1, "expected `relation<TAB>side<TAB>pattern`".into()));
            }
            let side = fields[1].parse().map_err(|e| TemplateError::Parse(i + 1, e))?;
            set.insert_question(QuestionTemplate::new(fields[0], side, fields[2])?);
        }
        Ok(set)
    }
}

/// Prompt for a relation sentence template.
pub fn relation_template_prompt(relation: &str) -> String {
    format!(
        "Write one declarative English sentence that states the relation in a knowledge-graph triple. \
         Use the literal placeholders <ENT1> for the subject and <ENT2> for the object, each exactly once. \
         Reply with the sentence only.\n\
         Triple: (<ENT1>, lives in, <ENT2>)\nSentence: <ENT1> lives in <ENT2>.\n\
         Triple: (<ENT1>, {}, <ENT2>)\nSentence:",
        relation_words(relation)
    )
}

/// Prompt for a possibility-tone question template asking for one side.
pub fn question_template_prompt(relation: &str, side: QuerySide) -> String {
    let (triple, example) = match side {
        QuerySide::Object => ("(<ENT>, lives in, ?)", "Which city might <ENT> live in?"),
        QuerySide::Subject => ("(?, lives in, <ENT>)", "Who might live in <ENT>?"),
    };
    let target = match side {
        QuerySide::Object => format!("(<ENT>, {}, ?)", relation_words(relation)),
        QuerySide::Subject => format!("(?, {}, <ENT>)", relation_words(relation)),
    };
    format!(
        "Write one English question asking for the missing entity `?` of a knowledge-graph triple. \
         Phrase it tentatively (might, may) and keep the literal placeholder <ENT> exactly once. \
         Reply with the question only.\n\
         Triple: {triple}\nQuestion: {example}\n\
         Triple: {target}\nQuestion:"
    )
}

/// Asks the client for templates, falling back to the built-in table for any
/// reply that fails validation (and for every relation in mock mode).
pub fn generate_templates<'a, I>(relations: I, client: &dyn ModelClient) -> TemplateSet
where
    I: IntoIterator<Item = &'a str>,
{
    let relations: Vec<&str> = relations.into_iter().collect();
    let mut set = TemplateSet::fallback(relations.iter().copied());
    for rel in relations {
        if let Some(reply) = client.complete(&relation_template_prompt(rel)) {
            match RelationTemplate::new(rel, reply.lines().next().unwrap_or("").trim()) {
                Ok(t) => set.insert_relation(t),
                Err(e) => log::warn!("keeping fallback relation template: {e}"),
            }
        }
        for side in [QuerySide::Object, QuerySide::Subject] {
            if let Some(reply) = client.complete(&question_template_prompt(rel, side)) {
                match QuestionTemplate::new(rel, side, reply.lines().next().unwrap_or("").trim()) {
                    Ok(t) => set.insert_question(t),
                    Err(e) => log::warn!("keeping fallback question template: {e}"),
                }
            }
        }
    }
    set
}

/// A fact recognized in free text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchedFact {
    pub start: usize,
    pub end: usize,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub name: String,
}

struct CompiledTemplate {
    relation: String,
    prefix: String,
    subject_first: bool,
    middle: String,
    suffix: String,
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Recognizes entity mentions and template-shaped facts in text.
pub struct FactMatcher {
    names: Vec<String>,
    automaton: Option<AhoCorasick>,
    templates: Vec<CompiledTemplate>,
}

impl FactMatcher {
    pub fn new<S: AsRef<str>>(templates: &TemplateSet, entity_names: &[S]) -> Self {
        let names: Vec<String> = entity_names
            .iter()
            .map(|s| s.as_ref().to_owned())
            .filter(|s| !s.is_empty())
            .collect();
        let automaton = (!names.is_empty()).then(|| {
            AhoCorasick::builder()
                .match_kind(MatchKind::LeftmostLongest)
                .build(&names)
                .expect("entity automaton")
        });
        let templates = templates
            .relation_templates()
            .map(|t| {
                let (prefix, subject_first, middle, suffix) = t.parts();
                CompiledTemplate {
                    relation: t.relation.clone(),
                    prefix: norm(&prefix),
                    subject_first,
                    middle: norm(&middle),
                    suffix: norm(&suffix),
                }
            })
            .collect();
        Self { names, automaton, templates }
    }

    /// Whole-word entity mentions, left to right, non-overlapping.
    pub fn mentions(&self, text: &str) -> Vec<Mention> {
        let Some(ac) = &self.automaton else { return Vec::new() };
        ac.find_iter(text)
            .filter(|m| {
                let before = text[..m.start()].chars().next_back();
                let after = text[m.end()..].chars().next();
                !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
            })
            .map(|m| Mention {
                start: m.start(),
                end: m.end(),
                name: self.names[m.pattern().as_usize()].clone(),
            })
            .collect()
    }

    /// Facts stated between consecutive mentions, in text order.
    pub fn facts(&self, text: &str) -> Vec<MatchedFact> {
        let mentions = self.mentions(text);
        let mut out = Vec::new();
        for (i, pair) in mentions.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let gap = norm(&text[a.end..b.start]);
            let before_start = if i == 0 { 0 } else { mentions[i - 1].end };
            let before = norm(&text[before_start..a.start]);
            let after_end = mentions.get(i + 2).map_or(text.len(), |m| m.start);
            let after = norm(&text[b.end..after_end]);
            for t in &self.templates {
                if gap != t.middle || !before.ends_with(&t.prefix) || !after.starts_with(&t.suffix) {
                    continue;
                }
                let (subject, object) = if t.subject_first {
                    (a.name.clone(), b.name.clone())
                } else {
                    (b.name.clone(), a.name.clone())
                };
                out.push(MatchedFact {
                    start: a.start,
                    end: b.end,
                    subject,
                    relation: t.relation.clone(),
                    object,
                });
                break;
            }
        }
        out
    }
}
