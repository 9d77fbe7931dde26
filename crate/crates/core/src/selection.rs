//! Knowledge selection: balanced, leakage-free instance pools in the
//! anonymized or regular setting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::Verdict;
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::rule::{RuleInstance, RuleStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Anonymized,
    Regular,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Anonymized => "anonymized",
            Setting::Regular => "regular",
        })
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anonymized" => Ok(Setting::Anonymized),
            "regular" => Ok(Setting::Regular),
            other => Err(format!("unknown setting `{other}`")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("per-rule sample count must be at least 1")]
    ZeroPerRule,
    #[error("anonymization is only valid in the anonymized setting")]
    WrongSetting,
    #[error("could not draw a fresh synthetic name after {0} attempts")]
    NameSpaceExhausted(usize),
    #[error("pool record references unknown rule `{0}`")]
    UnknownRule(String),
    #[error("pool record: {0}")]
    Record(String),
}

/// 64-bit FNV-1a, used to derive stable sub-seeds from labels.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for an independent stream identified by `label`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    fnv1a(format!("{seed}:{label}").as_bytes())
}

/// Audit trail of one selection run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub per_rule: usize,
    /// Instances removed per filter stage.
    pub dropped: BTreeMap<String, usize>,
    /// Rules removed because too few instances survived.
    pub rules_dropped: BTreeMap<String, usize>,
}

impl Provenance {
    fn add(map: &mut BTreeMap<String, usize>, stage: &str, n: usize) {
        *map.entry(stage.to_owned()).or_default() += n;
    }
}

/// Synthetic entity names, injective and disjoint from the graph's names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnonymizationMap {
    seed: u64,
    names: Vec<String>,
    index: HashMap<String, EntityId>,
}

impl AnonymizationMap {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self, e: EntityId) -> &str {
        &self.names[e.index()]
    }

    pub fn resolve(&self, synthetic: &str) -> Option<EntityId> {
        self.index.get(synthetic).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `original\tsynthetic` lines, sorted by original name.
    pub fn to_tsv(&self, kg: &KnowledgeGraph) -> String {
        kg.entities().map(|e| format!("{}\t{}\n", kg.entity_name(e), self.name(e))).collect()
    }

    pub fn from_tsv(kg: &KnowledgeGraph, text: &str, seed: u64) -> Result<Self, SelectionError> {
        let mut names = vec![String::new(); kg.entity_count()];
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (orig, synth) = line
                .split_once('\t')
                .ok_or_else(|| SelectionError::Record(format!("map line {}: expected two columns", i + 1)))?;
            let e = kg
                .entity_id(orig)
                .ok_or_else(|| SelectionError::Record(format!("map line {}: unknown entity `{orig}`", i + 1)))?;
            names[e.index()] = synth.to_owned();
        }
        if names.iter().any(String::is_empty) {
            return Err(SelectionError::Record("anonymization map does not cover every entity".into()));
        }
        let index: HashMap<String, EntityId> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), EntityId(i as u32))).collect();
        if index.len() != names.len() {
            return Err(SelectionError::Record("anonymization map is not injective".into()));
        }
        Ok(Self { seed, names, index })
    }
}

/// Draws one capitalized name of 3 to 8 Latin letters.
fn synthetic_name(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=8);
    (0..len)
        .map(|i| {
            let c = (b'a' + rng.gen_range(0..26u8)) as char;
            if i == 0 { c.to_ascii_uppercase() } else { c }
        })
        .collect()
}

const NAME_ATTEMPTS: usize = 10_000;

/// Builds a global map covering every entity of `kg`, in id order. Names
/// whose lowercase form is in `avoid` are never drawn.
pub fn anonymization_map(
    kg: &KnowledgeGraph,
    seed: u64,
    avoid: &HashSet<String>,
) -> Result<AnonymizationMap, SelectionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "anonymize"));
    let originals: HashSet<&str> = kg.entity_names().iter().map(String::as_str).collect();
    let mut names = Vec::with_capacity(kg.entity_count());
    let mut index = HashMap::with_capacity(kg.entity_count());
    for e in kg.entities() {
        let mut attempts = 0;
        let name = loop {
            let candidate = synthetic_name(&mut rng);
            if !originals.contains(candidate.as_str())
                && !index.contains_key(&candidate)
                && !avoid.contains(&candidate.to_lowercase())
            {
                break candidate;
            }
            attempts += 1;
            if attempts >= NAME_ATTEMPTS {
                return Err(SelectionError::NameSpaceExhausted(attempts));
            }
        };
        index.insert(name.clone(), e);
        names.push(name);
    }
    Ok(AnonymizationMap { seed, names, index })
}

/// Instances grouped by rule id.
#[derive(Clone, Debug)]
pub struct SelectionPool {
    pub setting: Setting,
    pub per_rule: BTreeMap<String, Vec<RuleInstance>>,
    pub provenance: Provenance,
    anonymization: Option<AnonymizationMap>,
}

impl SelectionPool {
    pub fn new(setting: Setting, per_rule: BTreeMap<String, Vec<RuleInstance>>, provenance: Provenance) -> Self {
        Self { setting, per_rule, provenance, anonymization: None }
    }

    pub fn anonymization(&self) -> Option<&AnonymizationMap> {
        self.anonymization.as_ref()
    }

    pub fn with_anonymization(mut self, map: AnonymizationMap) -> Self {
        self.anonymization = Some(map);
        self
    }

    pub fn instances(&self) -> impl Iterator<Item = (&str, &RuleInstance)> {
        self.per_rule.iter().flat_map(|(id, v)| v.iter().map(move |i| (id.as_str(), i)))
    }

    pub fn len(&self) -> usize {
        self.per_rule.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(min, max)` per-rule count, `(0, 0)` when empty.
    pub fn count_range(&self) -> (usize, usize) {
        let counts = self.per_rule.values().map(Vec::len);
        (counts.clone().min().unwrap_or(0), counts.max().unwrap_or(0))
    }

    /// Surface name of an entity in this pool's setting.
    pub fn entity_name<'a>(&'a self, kg: &'a KnowledgeGraph, e: EntityId) -> &'a str {
        match &self.anonymization {
            Some(map) => map.name(e),
            None => kg.entity_name(e),
        }
    }
}

fn sample_keep(items: &mut Vec<RuleInstance>, n: usize, rng: &mut ChaCha8Rng) {
    if items.len() <= n {
        return;
    }
    let mut picked = index::sample(rng, items.len(), n).into_vec();
    picked.sort_unstable();
    let kept: Vec<RuleInstance> = picked.into_iter().map(|i| items[i].clone()).collect();
    *items = kept;
}

/// Draws exactly `n` instances per rule (uniform, without replacement);
/// rules with fewer than `n` are dropped.
pub fn balance_instances(
    per_rule: BTreeMap<String, Vec<RuleInstance>>,
    n: usize,
    seed: u64,
    setting: Setting,
) -> Result<SelectionPool, SelectionError> {
    if n == 0 {
        return Err(SelectionError::ZeroPerRule);
    }
    let mut provenance = Provenance { seed, per_rule: n, ..Default::default() };
    let mut kept = BTreeMap::new();
    for (rule_id, mut instances) in per_rule {
        if instances.len() < n {
            log::info!("dropping rule {rule_id}: {} instances < {n}", instances.len());
            Provenance::add(&mut provenance.rules_dropped, "balance", 1);
            Provenance::add(&mut provenance.dropped, "balance", instances.len());
            continue;
        }
        let before = instances.len();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("balance/{rule_id}")));
        sample_keep(&mut instances, n, &mut rng);
        Provenance::add(&mut provenance.dropped, "balance", before - n);
        kept.insert(rule_id, instances);
    }
    if kept.is_empty() {
        log::warn!("every rule has fewer than {n} instances; the pool is empty");
    }
    Ok(SelectionPool::new(setting, kept, provenance))
}

/// Drops emptied rules and trims the rest to the smallest remaining count.
fn rebalance(pool: &mut SelectionPool, stage: &str) {
    let emptied: Vec<String> = pool
        .per_rule
        .iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(k, _)| k.clone())
        .collect();
    for k in emptied {
        pool.per_rule.remove(&k);
        Provenance::add(&mut pool.provenance.rules_dropped, stage, 1);
    }
    let (min, max) = pool.count_range();
    if min == max {
        return;
    }
    let seed = pool.provenance.seed;
    let mut trimmed = 0;
    for (rule_id, instances) in pool.per_rule.iter_mut() {
        let before = instances.len();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("{stage}/{rule_id}")));
        sample_keep(instances, min, &mut rng);
        trimmed += before - instances.len();
    }
    Provenance::add(&mut pool.provenance.dropped, &format!("{stage}-rebalance"), trimmed);
}

/// Discards every instance whose head fact occurs among the body facts of
/// any instance in the pool, then restores balance.
pub fn leakage_filter(mut pool: SelectionPool) -> SelectionPool {
    let body: HashSet<Triple> = pool
        .per_rule
        .values()
        .flatten()
        .flat_map(|i| i.body_facts.iter().copied())
        .collect();
    let mut dropped = 0;
    for instances in pool.per_rule.values_mut() {
        let before = instances.len();
        instances.retain(|i| !body.contains(&i.head_fact));
        dropped += before - instances.len();
    }
    Provenance::add(&mut pool.provenance.dropped, "leakage", dropped);
    rebalance(&mut pool, "leakage");
    pool
}

/// Replaces entity surface names through one global synthetic map.
pub fn anonymize(
    pool: SelectionPool,
    kg: &KnowledgeGraph,
    seed: u64,
    avoid: &HashSet<String>,
) -> Result<(SelectionPool, AnonymizationMap), SelectionError> {
    if pool.setting != Setting::Anonymized {
        return Err(SelectionError::WrongSetting);
    }
    let map = anonymization_map(kg, seed, avoid)?;
    Ok((pool.with_anonymization(map.clone()), map))
}

/// Keeps instances whose body facts are all known and whose head is unknown.
/// Any undecided probe excludes the instance.
pub fn probe_filter<F>(mut pool: SelectionPool, oracle: F, parallelism: usize) -> SelectionPool
where
    F: Fn(&Triple) -> Verdict + Sync,
{
    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Outcome {
        Keep,
        HeadKnown,
        BodyUnknown,
        Undecided,
    }
    let judge = |i: &RuleInstance| -> Outcome {
        let mut undecided = false;
        for f in &i.body_facts {
            match oracle(f) {
                Verdict::Known => {}
                Verdict::Unknown => return Outcome::BodyUnknown,
                Verdict::Undecided => undecided = true,
            }
        }
        match oracle(&i.head_fact) {
            Verdict::Known => Outcome::HeadKnown,
            Verdict::Undecided => Outcome::Undecided,
            Verdict::Unknown if undecided => Outcome::Undecided,
            Verdict::Unknown => Outcome::Keep,
        }
    };
    let all: Vec<(&String, &RuleInstance)> =
        pool.per_rule.iter().flat_map(|(k, v)| v.iter().map(move |i| (k, i))).collect();
    let run = || all.par_iter().map(|(_, i)| judge(i)).collect::<Vec<_>>();
    let outcomes = match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(tp) => tp.install(run),
        Err(_) => run(),
    };
    let mut kept: BTreeMap<String, Vec<RuleInstance>> =
        pool.per_rule.keys().map(|k| (k.clone(), Vec::new())).collect();
    let mut counts = [0usize; 3];
    for ((rule_id, inst), outcome) in all.iter().zip(&outcomes) {
        match outcome {
            Outcome::Keep => kept.get_mut(*rule_id).expect("key").push((*inst).clone()),
            Outcome::HeadKnown => counts[0] += 1,
            Outcome::BodyUnknown => counts[1] += 1,
            Outcome::Undecided => counts[2] += 1,
        }
    }
    if counts[2] > 0 {
        log::warn!("{} instances excluded because a probe was undecided", counts[2]);
    }
    pool.per_rule = kept;
    Provenance::add(&mut pool.provenance.dropped, "probe-head-known", counts[0]);
    Provenance::add(&mut pool.provenance.dropped, "probe-body-unknown", counts[1]);
    Provenance::add(&mut pool.provenance.dropped, "probe-undecided", counts[2]);
    rebalance(&mut pool, "probe");
    pool
}

/// One line of the pool file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub rule_id: String,
    pub bindings: Vec<String>,
    pub body_facts: Vec<[String; 3]>,
    pub head_fact: [String; 3],
    pub setting: Setting,
}

fn named(kg: &KnowledgeGraph, pool: &SelectionPool, t: &Triple) -> [String; 3] {
    [
        pool.entity_name(kg, t.head).to_owned(),
        kg.relation_name(t.relation).to_owned(),
        pool.entity_name(kg, t.tail).to_owned(),
    ]
}

impl SelectionPool {
    pub fn records(&self, kg: &KnowledgeGraph) -> Vec<PoolRecord> {
        self.instances()
            .map(|(rule_id, i)| PoolRecord {
                rule_id: rule_id.to_owned(),
                bindings: i.bindings.iter().map(|&e| self.entity_name(kg, e).to_owned()).collect(),
                body_facts: i.body_facts.iter().map(|t| named(kg, self, t)).collect(),
                head_fact: named(kg, self, &i.head_fact),
                setting: self.setting,
            })
            .collect()
    }

    /// Rebuilds a pool from file records; instances are re-derived from the
    /// bindings and checked against the recorded facts.
    pub fn from_records(
        kg: &KnowledgeGraph,
        library: &[RuleStats],
        records: &[PoolRecord],
        anonymization: Option<AnonymizationMap>,
        provenance: Provenance,
    ) -> Result<Self, SelectionError> {
        let rules: HashMap<&str, &RuleStats> = library.iter().map(|s| (s.id.as_str(), s)).collect();
        let setting = records.first().map_or(
            if anonymization.is_some() { Setting::Anonymized } else { Setting::Regular },
            |r| r.setting,
        );
        let resolve = |name: &str| -> Result<EntityId, SelectionError> {
            let id = match &anonymization {
                Some(map) => map.resolve(name),
                None => kg.entity_id(name),
            };
            id.ok_or_else(|| SelectionError::Record(format!("unknown entity `{name}`")))
        };
        let mut per_rule: BTreeMap<String, Vec<RuleInstance>> = BTreeMap::new();
        for rec in records {
            let stats = rules
                .get(rec.rule_id.as_str())
                .ok_or_else(|| SelectionError::UnknownRule(rec.rule_id.clone()))?;
            let bindings = rec.bindings.iter().map(|n| resolve(n)).collect::<Result<Vec<_>, _>>()?;
            if bindings.len() != stats.rule.hop() + 1 {
                return Err(SelectionError::Record(format!("binding count mismatch for `{}`", rec.rule_id)));
            }
            let inst = RuleInstance::from_bindings(&stats.rule, bindings);
            per_rule.entry(rec.rule_id.clone()).or_default().push(inst);
        }
        let mut pool = SelectionPool::new(setting, per_rule, provenance);
        pool.anonymization = anonymization;
        if pool.records(kg) != records {
            return Err(SelectionError::Record("recorded facts do not match bindings".into()));
        }
        Ok(pool)
    }
}
