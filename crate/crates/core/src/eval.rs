//! Evaluation: ID/OOD splits, exact match, rule-length usage and error
//! classification by first incorrect step.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::generation::{CoKSample, Naming};
use crate::kg::{KnowledgeGraph, Triple};
use crate::rule::RuleStats;
use crate::templates::{FactMatcher, MatchedFact, QuerySide, CONCLUSION_WORDS};

const PATH_SWITCH_MARKERS: &[&str] = &["let's consider a different path", "let's consider an alternative path"];
const EXTRA_CONCLUSION_MARKERS: &[&str] = &["this means"];
const UNSURE_MARKER: &str = "unsure of";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("split is empty")]
    EmptySplit,
    #[error("sample {sample} references unknown rule `{rule}`")]
    UnknownRule { sample: String, rule: String },
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the first whole-word occurrence of `needle` in `hay`
/// (both ASCII-lowercased by the caller).
fn find_word(hay: &str, needle: &str) -> Option<usize> {
    let bytes = hay.as_bytes();
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle).map(|i| i + from) {
        let end = i + needle.len();
        let before_ok = i == 0 || !is_word_byte(bytes[i - 1]);
        let after_ok = end == bytes.len() || !is_word_byte(bytes[end]);
        if before_ok && after_ok {
            return Some(i);
        }
        from = i + 1;
    }
    None
}

/// Splits a reasoning text into path attempts.
pub fn segments(text: &str) -> Vec<&str> {
    let lower = text.to_ascii_lowercase();
    let mut cuts: Vec<usize> = PATH_SWITCH_MARKERS
        .iter()
        .flat_map(|m| lower.match_indices(m).map(|(i, _)| i).collect::<Vec<_>>())
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for c in cuts {
        out.push(&text[start..c]);
        start = c;
    }
    out.push(&text[start..]);
    out
}

/// The part of a segment before its first conclusion marker.
pub fn premises(segment: &str) -> &str {
    let lower = segment.to_ascii_lowercase();
    let cut = CONCLUSION_WORDS
        .iter()
        .chain(EXTRA_CONCLUSION_MARKERS)
        .filter_map(|w| find_word(&lower, w))
        .min()
        .unwrap_or(segment.len());
    &segment[..cut]
}

/// Facts of the final reasoning path, in text order.
pub fn parse_chain(text: &str, matcher: &FactMatcher) -> Vec<MatchedFact> {
    let segs = segments(text);
    matcher.facts(premises(segs[segs.len() - 1]))
}

/// Facts stated across all attempts plus one per uncertainty statement.
pub fn count_rendered_hops(text: &str, matcher: &FactMatcher) -> usize {
    let facts: usize = segments(text).iter().map(|s| matcher.facts(premises(s)).len()).sum();
    facts + text.to_ascii_lowercase().matches(UNSURE_MARKER).count()
}

/// Entity named by a terminal-answer sentence, else the last mentioned
/// entity.
pub fn extract_prediction(text: &str, matcher: &FactMatcher) -> Option<String> {
    let mentions = matcher.mentions(text);
    let lower = text.to_ascii_lowercase();
    let marked = mentions.iter().rev().find(|m| {
        let after = lower[m.end..].trim_start();
        let before = lower[..m.start].trim_end();
        after.starts_with("is the answer")
            || after.starts_with("is the correct answer")
            || before.ends_with("the answer is")
            || before.ends_with("the answer is:")
    });
    marked.or(mentions.last()).map(|m| m.name.clone())
}

/// Case- and whitespace-normalized form used for exact match.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
}

impl Score {
    pub fn ratio(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Percentage rounded to two decimals.
    pub fn percent(&self) -> f64 {
        (self.ratio() * 10_000.0).round() / 100.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%", self.percent())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitName {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Id => "ID",
            SplitName::Ood => "OOD",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Hop(usize),
    All,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Hop(h) => write!(f, "{h}-hop"),
            Bucket::All => f.write_str("all"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSplit {
    pub name: SplitName,
    pub bucket: Bucket,
    pub samples: Vec<CoKSample>,
}

/// ID/OOD by training-rule membership, each bucketed by hop (2, 3, 4, all).
/// `bucket_size` truncates each bucket to its first samples in id order.
pub fn build_splits(
    samples: &[CoKSample],
    training_rules: &HashSet<String>,
    library: &HashSet<String>,
    bucket_size: Option<usize>,
) -> Result<Vec<EvalSplit>, EvalError> {
    let mut sorted: Vec<&CoKSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    for s in &sorted {
        if !library.contains(&s.rule_id) {
            return Err(EvalError::UnknownRule { sample: s.id.clone(), rule: s.rule_id.clone() });
        }
    }
    for name in [SplitName::Id, SplitName::Ood] {
        for bucket in [Bucket::Hop(2), Bucket::Hop(3), Bucket::Hop(4), Bucket::All] {
            let mut picked: Vec<CoKSample> = sorted
                .iter()
                .filter(|s| training_rules.contains(&s.rule_id) == (name == SplitName::Id))
                .filter(|s| bucket == Bucket::All || bucket == Bucket::Hop(s.hop))
                .map(|s| (*s).clone())
                .collect();
            if let Some(n) = bucket_size {
                picked.truncate(n);
            }
            out.push(EvalSplit { name, bucket, samples: picked });
        }
    }
    Ok(out)
}

/// One model output with its parsed reading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub output: String,
    pub chain: Vec<MatchedFact>,
    pub predicted: Option<String>,
}

impl Prediction {
    pub fn parse(id: &str, output: &str, matcher: &FactMatcher) -> Self {
        Self {
            id: id.to_owned(),
            output: output.to_owned(),
            chain: parse_chain(output, matcher),
            predicted: extract_prediction(output, matcher),
        }
    }
}

/// One line of the predictions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub output: String,
}

/// Exact match over a split; samples without a parsed prediction count as
/// wrong.
pub fn exact_match_score(predictions: &HashMap<String, Prediction>, split: &EvalSplit) -> Result<Score, EvalError> {
    if split.samples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let correct = split
        .samples
        .iter()
        .filter(|s| {
            predictions
                .get(&s.id)
                .and_then(|p| p.predicted.as_deref())
                .is_some_and(|p| normalize(p) == normalize(&s.golden_entity))
        })
        .count();
    Ok(Score { correct, total: split.samples.len() })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleLengthUsage {
    pub parseable: usize,
    pub unparseable: usize,
    pub counts: BTreeMap<usize, usize>,
    /// Percent of parseable outputs per hop.
    pub proportions: BTreeMap<usize, f64>,
}

/// Hop count of the final reasoning path of each output; outputs without a
/// parsed chain are excluded from the denominator.
pub fn rule_length_usage<'a, I: IntoIterator<Item = &'a Prediction>>(predictions: I) -> RuleLengthUsage {
    let mut usage = RuleLengthUsage::default();
    for p in predictions {
        if p.chain.is_empty() {
            usage.unparseable += 1;
        } else {
            usage.parseable += 1;
            *usage.counts.entry(p.chain.len()).or_default() += 1;
        }
    }
    for (&hop, &n) in &usage.counts {
        usage.proportions.insert(hop, 100.0 * n as f64 / usage.parseable as f64);
    }
    usage
}

/// Valid body relation sequences per head relation, by name.
#[derive(Clone, Debug, Default)]
pub struct RuleIndex(HashMap<String, HashSet<Vec<String>>>);

impl RuleIndex {
    pub fn new(kg: &KnowledgeGraph, library: &[RuleStats]) -> Self {
        let mut map: HashMap<String, HashSet<Vec<String>>> = HashMap::new();
        for s in library {
            let body = s.rule.body().iter().map(|&r| kg.relation_name(r).to_owned()).collect();
            map.entry(kg.relation_name(s.rule.head()).to_owned()).or_default().insert(body);
        }
        Self(map)
    }

    pub fn contains(&self, head: &str, body: &[String]) -> bool {
        self.0.get(head).is_some_and(|set| set.contains(body))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Correct,
    RuleError,
    /// 1-based index of the first wrong fact.
    FactError(usize),
    ValidAlternative,
    Unparseable,
}

impl ErrorClass {
    pub fn key(&self) -> String {
        match self {
            ErrorClass::Correct => "correct".into(),
            ErrorClass::RuleError => "rule_error".into(),
            ErrorClass::FactError(k) => format!("fact_error_{k}"),
            ErrorClass::ValidAlternative => "valid_alternative".into(),
            ErrorClass::Unparseable => "unparseable".into(),
        }
    }
}

/// Verdict by first incorrect step of the output's final reasoning path.
pub fn classify_error(prediction: &Prediction, sample: &CoKSample, naming: &Naming, rules: &RuleIndex) -> ErrorClass {
    let Some(predicted) = prediction.predicted.as_deref() else { return ErrorClass::Unparseable };
    if normalize(predicted) == normalize(&sample.golden_entity) {
        return ErrorClass::Correct;
    }
    let chain = &prediction.chain;
    if chain.is_empty() {
        return ErrorClass::Unparseable;
    }
    let body: Vec<String> = chain.iter().map(|f| f.relation.clone()).collect();
    if !rules.contains(&sample.query.relation, &body) {
        return ErrorClass::RuleError;
    }
    let kg = naming.kg();
    let known = normalize(&sample.query.known_entity);
    let last = chain.len();
    for (k, f) in chain.iter().enumerate() {
        let resolved = match (naming.resolve(&f.subject), kg.relation_id(&f.relation), naming.resolve(&f.object)) {
            (Some(h), Some(r), Some(t)) => Some(Triple::new(h, r, t)),
            _ => None,
        };
        let present = resolved.is_some_and(|t| kg.contains(&t));
        let linked = k == 0 || normalize(&chain[k - 1].object) == normalize(&f.subject);
        let anchored = match sample.query.side {
            QuerySide::Object => k != 0 || normalize(&f.subject) == known,
            QuerySide::Subject => k + 1 != last || normalize(&f.object) == known,
        };
        if !present || !linked || !anchored {
            return ErrorClass::FactError(k + 1);
        }
    }
    let derived = match sample.query.side {
        QuerySide::Object => &chain[last - 1].object,
        QuerySide::Subject => &chain[0].subject,
    };
    if normalize(derived) == normalize(predicted) {
        ErrorClass::ValidAlternative
    } else {
        ErrorClass::Unparseable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: SplitName,
    pub bucket: Bucket,
    pub correct: usize,
    pub total: usize,
    pub percent: f64,
    pub verdicts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub counts: BTreeMap<String, usize>,
    /// Percent of all evaluated samples.
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub missing_predictions: usize,
    pub splits: Vec<SplitScore>,
    pub rule_length: RuleLengthUsage,
    pub errors: ErrorBreakdown,
}

impl EvalReport {
    /// Number of classified samples.
    pub fn verdicts_total(&self) -> usize {
        self.errors.counts.values().sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split  bucket   correct  total  exact-match");
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{:<6} {:<8} {:>7} {:>6}  {:>10.2}%",
                s.split.to_string(),
                s.bucket.to_string(),
                s.correct,
                s.total,
                s.percent
            );
        }
        let _ = writeln!(out, "\nrule length (parseable {}, unparseable {})", self.rule_length.parseable, self.rule_length.unparseable);
        for (hop, p) in &self.rule_length.proportions {
            let _ = writeln!(out, "  {hop}-hop  {p:.2}%");
        }
        let _ = writeln!(out, "\nverdicts over {} samples ({} without prediction)", self.samples, self.missing_predictions);
        for (k, n) in &self.errors.counts {
            let _ = writeln!(out, "  {k:<20} {n:>6}  {:.2}%", self.errors.proportions[k]);
        }
        out
    }
}

/// Scores `records` against the evaluation samples.
pub fn evaluate(
    samples: &[CoKSample],
    records: &[PredictionRecord],
    training_rules: &HashSet<String>,
    naming: &Naming,
    library: &[RuleStats],
    matcher: &FactMatcher,
    bucket_size: Option<usize>,
) -> Result<EvalReport, EvalError> {
    let kg = naming.kg();
    let library_ids: HashSet<String> = library.iter().map(|s| s.id.clone()).collect();
    let splits = build_splits(samples, training_rules, &library_ids, bucket_size)?;
    let predictions: HashMap<String, Prediction> = records
        .iter()
        .map(|r| (r.id.clone(), Prediction::parse(&r.id, &r.output, matcher)))
        .collect();
    let rules = RuleIndex::new(kg, library);
    let missing = Prediction { id: String::new(), output: String::new(), chain: Vec::new(), predicted: None };
    let mut verdicts: HashMap<&str, String> = HashMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing_predictions = 0;
    let mut used = Vec::new();
    for s in samples {
        let p = predictions.get(&s.id).unwrap_or_else(|| {
            missing_predictions += 1;
            &missing
        });
        used.push(p);
        let key = classify_error(p, s, naming, &rules).key();
        *counts.entry(key.clone()).or_default() += 1;
        verdicts.insert(&s.id, key);
    }
    let scores = splits
        .iter()
        .filter(|s| !s.samples.is_empty())
        .map(|s| {
            let score = exact_match_score(&predictions, s)?;
            let mut tally = BTreeMap::new();
            for sample in &s.samples {
                *tally.entry(verdicts[sample.id.as_str()].clone()).or_default() += 1;
            }
            Ok(SplitScore {
                split: s.name,
                bucket: s.bucket,
                correct: score.correct,
                total: score.total,
                percent: score.percent(),
                verdicts: tally,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let proportions = counts
        .iter()
        .map(|(k, &n)| (k.clone(), 100.0 * n as f64 / samples.len().max(1) as f64))
        .collect();
    Ok(EvalReport {
        samples: samples.len(),
        missing_predictions,
        splits: scores,
        rule_length: rule_length_usage(used),
        errors: ErrorBreakdown { counts, proportions },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::QueryRecord;
    use crate::mining::score_rule;
    use crate::rule::Rule;
    use crate::selection::Setting;
    use crate::templates::{RelationTemplate, TemplateSet};

    fn sample(id: &str, rule: &str, hop: usize, golden: &str) -> CoKSample {
        CoKSample {
            id: id.into(),
            setting: Setting::Anonymized,
            hop,
            rule_id: rule.into(),
            question: String::new(),
            answer: String::new(),
            golden_entity: golden.into(),
            query: QueryRecord { relation: "h".into(), known_entity: "k".into(), side: QuerySide::Object },
            trace: None,
        }
    }

    #[test]
    fn score_arithmetic() {
        let s = Score { correct: 34, total: 201 };
        assert_eq!(s.percent(), 16.92);
        assert_eq!(s.to_string(), "16.92%");
        assert_eq!((s.ratio() * 201.0).round() as usize, 34);
        assert_eq!(Score { correct: 5, total: 5 }.percent(), 100.0);
        assert_eq!(Score { correct: 0, total: 5 }.percent(), 0.0);
    }

    #[test]
    fn splits_by_rule_membership() {
        let samples = vec![sample("a", "R1", 2, "x"), sample("b", "R2", 3, "y"), sample("c", "R1", 2, "z")];
        let train: HashSet<String> = ["R1".to_string()].into();
        let lib: HashSet<String> = ["R1".to_string(), "R2".to_string()].into();
        let splits = build_splits(&samples, &train, &lib, None).unwrap();
        let get = |n, b| splits.iter().find(|s| s.name == n && s.bucket == b).unwrap().samples.len();
        assert_eq!(get(SplitName::Id, Bucket::Hop(2)), 2);
        assert_eq!(get(SplitName::Id, Bucket::All), 2);
        assert_eq!(get(SplitName::Ood, Bucket::Hop(3)), 1);
        assert_eq!(get(SplitName::Ood, Bucket::Hop(2)), 0);
        let capped = build_splits(&samples, &train, &lib, Some(1)).unwrap();
        assert!(capped.iter().all(|s| s.samples.len() <= 1));
        let bad = vec![sample("d", "R9", 2, "x")];
        assert!(matches!(build_splits(&bad, &train, &lib, None), Err(EvalError::UnknownRule { .. })));

        let empty = EvalSplit { name: SplitName::Id, bucket: Bucket::All, samples: vec![] };
        assert_eq!(exact_match_score(&HashMap::new(), &empty), Err(EvalError::EmptySplit));
    }

    #[test]
    fn prediction_extraction() {
        let set = TemplateSet::fallback(["team_country"]);
        let m = FactMatcher::new(&set, &["Zxdxcgh", "Mfqep", "Vevedgta", "Anykid"]);
        assert_eq!(extract_prediction("Thus, Zxdxcgh is the answer.", &m).as_deref(), Some("Zxdxcgh"));
        assert_eq!(extract_prediction("I do not know.", &m), None);
        assert_eq!(
            extract_prediction("Mfqep is from the country Vevedgta. So the answer is Vevedgta.", &m).as_deref(),
            Some("Vevedgta")
        );
        assert_eq!(extract_prediction("Vevedgta is the answer, not Anykid.", &m).as_deref(), Some("Vevedgta"));
    }

    #[test]
    fn usage_proportions() {
        let p = |n: usize| Prediction {
            id: String::new(),
            output: String::new(),
            chain: (0..n)
                .map(|_| MatchedFact { start: 0, end: 0, subject: "a".into(), relation: "r".into(), object: "b".into() })
                .collect(),
            predicted: None,
        };
        let u = rule_length_usage(&[p(2), p(2)]);
        assert_eq!(u.proportions[&2], 100.0);
        let u = rule_length_usage(&[p(2), p(3), p(0)]);
        assert_eq!(u.proportions[&2], 50.0);
        assert_eq!(u.proportions[&3], 50.0);
        assert_eq!(u.unparseable, 1);
    }

    /// Fixtures shaped after three failure cases: an unreasonable path, a
    /// wrong first fact and a wrong second fact.
    fn fixture() -> (KnowledgeGraph, TemplateSet, Vec<RuleStats>) {
        let kg = KnowledgeGraph::from_tsv(
            "Wcsa\tauthor_country\tLkqr\n\
             Ztgl\tmember_of\tMfqep\n\
             Mfqep\tteam_country\tZxdxcgh\n\
             Ztgl\tcitizen_of\tTrwq\n\
             Arstkb\tcast_member\tQoztebgc\n\
             Qoztebgc\tspeaks\tEngl\n\
             Arstkb\toriginal_language\tEngl\n\
             Nobody\thead_coach\tNoteam\n\
             Noteam\tteam_country\tNowhere\n\
             Nobody\tcitizen_of\tNowhere\n\
             Other\tcast_member\tOtherx\n\
             Otherx\tspeaks\tCrbzovw\n\
             Other\toriginal_language\tCrbzovw\n\
             Wcsa\tfilm_country\tTrwq\n\
             Wcsa\tcast_member\tQoztebgc\n\
             Qoztebgc\tcitizen_of\tTrwq\n",
        )
        .unwrap();
        let mut set = TemplateSet::new();
        for (r, p) in [
            ("author_country", "<ENT1> is the country that the author of <ENT2> is a citizen of."),
            ("head_coach", "<ENT1> is the head coach of <ENT2>."),
            ("member_of", "<ENT1> plays for <ENT2>."),
            ("team_country", "<ENT1> is from the country <ENT2>."),
            ("citizen_of", "<ENT1> belongs to the country <ENT2>."),
            ("cast_member", "<ENT1> has cast member <ENT2>"),
            ("speaks", "<ENT1>, who speaks the language <ENT2>"),
            ("original_language", "<ENT1> uses the language <ENT2>."),
            ("film_country", "<ENT1> was produced in <ENT2>."),
        ] {
            set.insert_relation(RelationTemplate::new(r, p).unwrap());
        }
        let r = |n: &str| kg.relation_id(n).unwrap();
        let library = vec![
            score_rule(&kg, &Rule::new(r("citizen_of"), vec![r("head_coach"), r("team_country")]).unwrap()),
            score_rule(&kg, &Rule::new(r("original_language"), vec![r("cast_member"), r("speaks")]).unwrap()),
            score_rule(&kg, &Rule::new(r("film_country"), vec![r("cast_member"), r("citizen_of")]).unwrap()),
        ];
        (kg, set, library)
    }

    fn classify(kg: &KnowledgeGraph, set: &TemplateSet, lib: &[RuleStats], out: &str, s: &CoKSample) -> ErrorClass {
        let naming = Naming::new(kg, None);
        let m = FactMatcher::new(set, kg.entity_names());
        classify_error(&Prediction::parse(&s.id, out, &m), s, &naming, &RuleIndex::new(kg, lib))
    }

    fn query(rel: &str, known: &str, golden: &str) -> CoKSample {
        let mut s = sample("q", "r", 2, golden);
        s.query = QueryRecord { relation: rel.into(), known_entity: known.into(), side: QuerySide::Object };
        s
    }

    #[test]
    fn error_verdicts_on_fixtures() {
        let (kg, set, lib) = fixture();
        let row1 = "Lkqr is the country that the author of Wcsa is a citizen of. \
                    Therefore, it is possible that Wcsa was produced in Lkqr. Thus, Lkqr is the answer.";
        assert_eq!(classify(&kg, &set, &lib, row1, &query("film_country", "Wcsa", "Trwq")), ErrorClass::RuleError);

        let row2 = "Ztgl is the head coach of Mfqep. Mfqep is from the country Zxdxcgh. \
                    Therefore, it is possible that Ztgl also belongs to the country Zxdxcgh. Thus, Zxdxcgh is the answer.";
        assert_eq!(classify(&kg, &set, &lib, row2, &query("citizen_of", "Ztgl", "Trwq")), ErrorClass::FactError(1));

        let row3 = "Arstkb has cast member Qoztebgc, who speaks the language Crbzovw. \
                    This means that Arstkb uses the language Crbzovw. Thus, Crbzovw is the answer.";
        assert_eq!(
            classify(&kg, &set, &lib, row3, &query("original_language", "Arstkb", "Engl")),
            ErrorClass::FactError(2)
        );

        let good = "Arstkb has cast member Qoztebgc, who speaks the language Engl. Thus, Engl is the answer.";
        assert_eq!(classify(&kg, &set, &lib, good, &query("original_language", "Arstkb", "Engl")), ErrorClass::Correct);

        let alt = "Arstkb has cast member Qoztebgc, who speaks the language Engl. Thus, Engl is the answer.";
        assert_eq!(
            classify(&kg, &set, &lib, alt, &query("original_language", "Arstkb", "Crbzovw")),
            ErrorClass::ValidAlternative
        );
        assert_eq!(classify(&kg, &set, &lib, "no idea", &query("speaks", "Arstkb", "Engl")), ErrorClass::Unparseable);
    }

    #[test]
    fn hop_counting_from_text() {
        let set = TemplateSet::fallback(["p", "q"]);
        let m = FactMatcher::new(&set, &["aa", "bb", "cc", "dd"]);
        let plain = "aa has the p bb. bb has the q cc. Therefore, it is possible that aa has the p cc. Thus, cc is the answer.";
        assert_eq!(count_rendered_hops(plain, &m), 2);
        let te = "To find the answer, we can follow the reasoning path: h(X,Y) <- p(X,Z1) ^ p(Z1,Y). \
                  aa has the p dd. But since we are unsure of dd's p, this path is not applicable. \
                  Let's consider a different path: h(X,Y) <- p(X,Z1) ^ q(Z1,Y). \
                  aa has the p bb. bb has the q cc. Therefore, it is possible that aa has the p cc. Thus, cc is the answer.";
        assert_eq!(count_rendered_hops(te, &m), 4);
        assert_eq!(parse_chain(te, &m).len(), 2);
    }
}
