//! Two-hop rule mining, scoring, filtering, composition and grounding.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use rayon::prelude::*;

use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rule::{Rule, RuleInstance, RuleStats, Threshold, MAX_HOP};

/// Thresholds for keeping a rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleFilter {
    pub min_support: u64,
    pub min_confidence: Threshold,
}

impl Default for RuleFilter {
    fn default() -> Self {
        Self { min_support: 1000, min_confidence: Threshold::new(6, 10) }
    }
}

/// One closed two-hop path: `(a, r1, b), (b, r2, c)` with `(a, r3, c)` present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Closure {
    a: EntityId,
    r1: RelationId,
    b: EntityId,
    r2: RelationId,
    c: EntityId,
    r3: RelationId,
}

/// Breadth-first expansion from every head entity in `heads`: for each
/// `(a, r1, b)` and each `(b, r2, c)`, every relation `r3` linking `a` to `c`
/// closes the path. Visits closures in canonical order.
fn visit_closures<F: FnMut(Closure)>(kg: &KnowledgeGraph, heads: Range<u32>, mut f: F) {
    let mut closing: HashMap<EntityId, Vec<RelationId>> = HashMap::new();
    for a in heads.map(EntityId) {
        let out = kg.adjacent(a, Direction::Forward);
        if out.is_empty() {
            continue;
        }
        closing.clear();
        for &(r3, c) in out {
            closing.entry(c).or_default().push(r3);
        }
        for &(r1, b) in out {
            for &(r2, c) in kg.adjacent(b, Direction::Forward) {
                if let Some(r3s) = closing.get(&c) {
                    for &r3 in r3s {
                        f(Closure { a, r1, b, r2, c, r3 });
                    }
                }
            }
        }
    }
}

fn partitions(kg: &KnowledgeGraph, workers: usize) -> Vec<Range<u32>> {
    let n = kg.entity_count() as u32;
    let chunks = (workers.max(1) * 8) as u32;
    let step = n.div_ceil(chunks).max(1);
    (0..n).step_by(step as usize).map(|lo| lo..(lo + step).min(n)).collect()
}

fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    if workers <= 1 {
        return job();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(job),
        Err(e) => {
            log::warn!("falling back to a single worker: {e}");
            job()
        }
    }
}

fn closure_instance(c: Closure) -> RuleInstance {
    let rule = Rule::new(c.r3, vec![c.r1, c.r2]).expect("two-hop rule");
    RuleInstance::from_bindings(&rule, vec![c.a, c.b, c.c])
}

/// Every two-hop rule instance in the graph, in canonical order
/// `(X, r1, Z1, r2, Y, head relation)`.
pub fn mine_two_hop_instances(kg: &KnowledgeGraph) -> Vec<RuleInstance> {
    mine_two_hop_instances_with(kg, 1)
}

pub fn mine_two_hop_instances_with(kg: &KnowledgeGraph, workers: usize) -> Vec<RuleInstance> {
    let parts = partitions(kg, workers);
    let chunks: Vec<Vec<RuleInstance>> = with_workers(workers, || {
        parts
            .into_par_iter()
            .map(|range| {
                let mut out = Vec::new();
                visit_closures(kg, range, |c| out.push(closure_instance(c)));
                out
            })
            .collect()
    });
    chunks.into_iter().flatten().collect()
}

/// Instance counts per two-hop rule, without materializing instances.
pub fn count_two_hop_support(kg: &KnowledgeGraph, workers: usize) -> Vec<(Rule, u64)> {
    let parts = partitions(kg, workers);
    let merged: HashMap<(RelationId, RelationId, RelationId), u64> = with_workers(workers, || {
        parts
            .into_par_iter()
            .map(|range| {
                let mut counts: HashMap<(RelationId, RelationId, RelationId), u64> = HashMap::new();
                visit_closures(kg, range, |c| *counts.entry((c.r3, c.r1, c.r2)).or_default() += 1);
                counts
            })
            .reduce(HashMap::new, |mut acc, part| {
                for (k, v) in part {
                    *acc.entry(k).or_default() += v;
                }
                acc
            })
    });
    let mut out: Vec<(Rule, u64)> = merged
        .into_iter()
        .map(|((h, r1, r2), n)| (Rule::new(h, vec![r1, r2]).expect("two-hop rule"), n))
        .collect();
    out.sort_unstable();
    out
}

/// Counts body groundings (x) and those whose head fact holds (y).
pub fn score_rule(kg: &KnowledgeGraph, rule: &Rule) -> RuleStats {
    let mut body_count = 0u64;
    let mut hits = 0u64;
    let mut frontier: HashMap<EntityId, u64> = HashMap::new();
    let mut next: HashMap<EntityId, u64> = HashMap::new();
    for x in kg.entities() {
        let first = rule.body()[0];
        if kg.along(x, first, Direction::Forward).next().is_none() {
            continue;
        }
        frontier.clear();
        frontier.insert(x, 1);
        for &rel in rule.body() {
            next.clear();
            for (&e, &paths) in &frontier {
                for y in kg.along(e, rel, Direction::Forward) {
                    *next.entry(y).or_default() += paths;
                }
            }
            std::mem::swap(&mut frontier, &mut next);
            if frontier.is_empty() {
                break;
            }
        }
        for (&y, &paths) in &frontier {
            body_count += paths;
            if kg.contains(&Triple::new(x, rule.head(), y)) {
                hits += paths;
            }
        }
    }
    RuleStats {
        id: rule.encode(kg),
        rule: rule.clone(),
        instance_count: hits,
        body_count,
        head_and_body_count: hits,
    }
}

pub fn score_rules(kg: &KnowledgeGraph, rules: &[Rule], workers: usize) -> Vec<RuleStats> {
    with_workers(workers, || rules.par_iter().map(|r| score_rule(kg, r)).collect())
}

/// Mines and scores every two-hop rule that has at least one instance.
/// Output is sorted by rule id.
pub fn mine_two_hop_rules(kg: &KnowledgeGraph, workers: usize) -> Vec<RuleStats> {
    let rules: Vec<Rule> = count_two_hop_support(kg, workers).into_iter().map(|(r, _)| r).collect();
    let mut stats = score_rules(kg, &rules, workers);
    stats.sort_by(|a, b| a.id.cmp(&b.id));
    stats
}

/// Keeps rules with `support >= min_support` and `confidence > min_confidence`
/// (strict), ordered by descending confidence then ascending id.
pub fn filter_rules(stats: &[RuleStats], filter: RuleFilter) -> Vec<RuleStats> {
    let mut kept: Vec<RuleStats> = stats
        .iter()
        .filter(|s| {
            s.instance_count >= filter.min_support
                && filter.min_confidence.exceeded_by(s.head_and_body_count, s.body_count)
        })
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.cmp_confidence_desc(b).then_with(|| a.id.cmp(&b.id)));
    kept
}

/// Splices `inner`'s body into `outer` at every body position whose relation
/// is `inner`'s head, returning the distinct results within `max_hop`.
pub fn compositions(outer: &Rule, inner: &Rule, max_hop: usize) -> Vec<Rule> {
    let hop = outer.hop() + inner.hop() - 1;
    if hop > max_hop.min(MAX_HOP) {
        return Vec::new();
    }
    let mut out: Vec<Rule> = Vec::new();
    for (pos, &rel) in outer.body().iter().enumerate() {
        if rel != inner.head() {
            continue;
        }
        let mut body = Vec::with_capacity(hop);
        body.extend_from_slice(&outer.body()[..pos]);
        body.extend_from_slice(inner.body());
        body.extend_from_slice(&outer.body()[pos + 1..]);
        let rule = Rule::new(outer.head(), body).expect("hop checked above");
        if !out.contains(&rule) {
            out.push(rule);
        }
    }
    out
}

/// First splice of `inner` into `outer`, if any.
pub fn compose_rules(outer: &Rule, inner: &Rule, max_hop: usize) -> Option<Rule> {
    compositions(outer, inner, max_hop).into_iter().next()
}

/// Settings for growing the two-hop library into longer rules.
#[derive(Clone, Copy, Debug)]
pub struct ComposeConfig {
    pub max_hop: usize,
    /// Filter applied to re-scored composed rules.
    pub filter: RuleFilter,
    pub workers: usize,
}

/// Builds rules of hop `3..=max_hop`: level `h` splices every kept two-hop
/// rule into every kept rule of level `h - 1`. Candidates are deduplicated,
/// re-scored on `kg`, and kept only if they pass `config.filter`. Returns the
/// composed rules only, ordered by hop, then as [`filter_rules`] orders them.
pub fn compose_library(kg: &KnowledgeGraph, two_hop: &[RuleStats], config: ComposeConfig) -> Vec<RuleStats> {
    let base: Vec<&Rule> = two_hop.iter().map(|s| &s.rule).collect();
    let mut previous: Vec<Rule> = base.iter().map(|r| (*r).clone()).collect();
    let mut out = Vec::new();
    for hop in 3..=config.max_hop.min(MAX_HOP) {
        let mut candidates: BTreeSet<Rule> = BTreeSet::new();
        for outer in &previous {
            for inner in &base {
                candidates.extend(
                    compositions(outer, inner, config.max_hop)
                        .into_iter()
                        .filter(|r| r.hop() == hop),
                );
            }
        }
        let candidates: Vec<Rule> = candidates.into_iter().collect();
        let scored = score_rules(kg, &candidates, config.workers);
        let kept = filter_rules(&scored, config.filter);
        previous = kept.iter().map(|s| s.rule.clone()).collect();
        out.extend(kept);
        if previous.is_empty() {
            break;
        }
    }
    out
}

fn walk_groundings<F: FnMut(&[EntityId])>(kg: &KnowledgeGraph, rule: &Rule, path: &mut Vec<EntityId>, f: &mut F) {
    let depth = path.len() - 1;
    if depth == rule.hop() {
        f(path);
        return;
    }
    let from = path[depth];
    for next in kg.along(from, rule.body()[depth], Direction::Forward) {
        path.push(next);
        walk_groundings(kg, rule, path, f);
        path.pop();
    }
}

/// Calls `f` with the bindings `[X, Z1, ..., Y]` of every body grounding, in
/// lexicographic binding order.
pub fn for_each_grounding<F: FnMut(&[EntityId])>(kg: &KnowledgeGraph, rule: &Rule, mut f: F) {
    let mut path = Vec::with_capacity(rule.hop() + 1);
    for x in kg.entities() {
        path.clear();
        path.push(x);
        walk_groundings(kg, rule, &mut path, &mut f);
    }
}

/// All body groundings of `rule`; with `require_head`, only the instances
/// (groundings whose head fact exists).
pub fn ground_rule(kg: &KnowledgeGraph, rule: &Rule, require_head: bool) -> Vec<RuleInstance> {
    let mut out = Vec::new();
    for_each_grounding(kg, rule, |b| {
        let head = Triple::new(b[0], rule.head(), b[b.len() - 1]);
        if !require_head || kg.contains(&head) {
            out.push(RuleInstance::from_bindings(rule, b.to_vec()));
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(lines: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(lines.iter().copied())
    }

    fn rule(kg: &KnowledgeGraph, head: &str, body: &[&str]) -> Rule {
        let rel = |n: &str| kg.relation_id(n).unwrap();
        Rule::new(rel(head), body.iter().map(|n| rel(n)).collect()).unwrap()
    }

    fn names(kg: &KnowledgeGraph, b: &[EntityId]) -> Vec<String> {
        b.iter().map(|&e| kg.entity_name(e).to_owned()).collect()
    }

    #[test]
    fn single_closed_path() {
        let g = kg(&[("a", "r2", "b"), ("b", "r3", "c"), ("a", "r1", "c")]);
        let inst = mine_two_hop_instances(&g);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].rule, rule(&g, "r1", &["r2", "r3"]));
        assert_eq!(names(&g, &inst[0].bindings), ["a", "b", "c"]);
    }

    #[test]
    fn no_closing_triple() {
        let g = kg(&[("a", "r", "b"), ("b", "r", "c")]);
        assert!(mine_two_hop_instances(&g).is_empty());
        assert!(mine_two_hop_instances(&KnowledgeGraph::default()).is_empty());
    }

    #[test]
    fn self_loop_closes_on_itself() {
        let g = kg(&[("a", "r", "a")]);
        let inst = mine_two_hop_instances(&g);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].rule, rule(&g, "r", &["r", "r"]));
        assert_eq!(names(&g, &inst[0].bindings), ["a", "a", "a"]);
    }

    #[test]
    fn score_half_confidence() {
        let g = kg(&[("a", "r2", "b"), ("b", "r3", "c"), ("a", "r1", "c"), ("d", "r2", "b")]);
        let s = score_rule(&g, &rule(&g, "r1", &["r2", "r3"]));
        assert_eq!((s.body_count, s.head_and_body_count, s.instance_count), (2, 1, 1));
        assert_eq!(s.confidence(), Some(0.5));
        assert_eq!(ground_rule(&g, &s.rule, true).len(), 1);
        assert_eq!(ground_rule(&g, &s.rule, false).len(), 2);
    }

    #[test]
    fn full_and_unscorable() {
        let g = kg(&[("a", "p", "b"), ("b", "q", "c"), ("a", "h", "c"), ("x", "z", "y")]);
        assert_eq!(score_rule(&g, &rule(&g, "h", &["p", "q"])).confidence(), Some(1.0));
        let s = score_rule(&g, &rule(&g, "h", &["z", "q"]));
        assert!(!s.is_scorable());
        assert_eq!(s.confidence(), None);
        assert!(ground_rule(&KnowledgeGraph::default(), &Rule::new(RelationId(0), vec![RelationId(0); 2]).unwrap(), false).is_empty());
    }

    fn stats(id: &str, y: u64, x: u64) -> RuleStats {
        RuleStats {
            rule: Rule::new(RelationId(0), vec![RelationId(1), RelationId(2)]).unwrap(),
            id: id.into(),
            instance_count: y,
            body_count: x,
            head_and_body_count: y,
        }
    }

    #[test]
    fn filter_is_strict_and_sorted() {
        let f = RuleFilter { min_support: 1, min_confidence: "0.6".parse().unwrap() };
        let input = vec![stats("b", 3, 5), stats("c", 61, 100), stats("a", 9, 10), stats("d", 9, 10)];
        let kept: Vec<String> = filter_rules(&input, f).into_iter().map(|s| s.id).collect();
        assert_eq!(kept, ["a", "d", "c"]);
        assert!(filter_rules(&[], RuleFilter::default()).is_empty());
        let strict = RuleFilter { min_support: 62, ..f };
        assert_eq!(filter_rules(&input, strict).len(), 0);
        assert_eq!(RuleFilter::default().min_support, 1000);
        assert_eq!(RuleFilter::default().min_confidence, "0.6".parse().unwrap());
    }

    #[test]
    fn compose_born_in_example() {
        let g = kg(&[
            ("p", "HighSchool", "s"),
            ("s", "LocateIn", "t"),
            ("t", "CityOf", "c"),
            ("p", "BornIn", "t"),
            ("p", "CitizenOf", "c"),
        ]);
        let inner = rule(&g, "BornIn", &["HighSchool", "LocateIn"]);
        let outer = rule(&g, "CitizenOf", &["BornIn", "CityOf"]);
        let composed = compose_rules(&outer, &inner, 4).unwrap();
        assert_eq!(
            composed.encode(&g),
            "CitizenOf(X,Y) <- HighSchool(X,Z1) ^ LocateIn(Z1,Z2) ^ CityOf(Z2,Y)"
        );
        assert_eq!(compose_rules(&inner, &outer, 4), None);
        let three = rule(&g, "CitizenOf", &["BornIn", "CityOf", "CityOf"]);
        let three_inner = rule(&g, "BornIn", &["HighSchool", "LocateIn", "LocateIn"]);
        assert_eq!(compose_rules(&three, &three_inner, 4), None);
        assert_eq!(compose_rules(&outer, &inner, 2), None);
    }

    #[test]
    fn compose_every_position() {
        let r = RelationId;
        let outer = Rule::new(r(0), vec![r(1), r(1)]).unwrap();
        let inner = Rule::new(r(1), vec![r(2), r(3)]).unwrap();
        let all = compositions(&outer, &inner, 4);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].body(), &[r(2), r(3), r(1)]);
        assert_eq!(all[1].body(), &[r(1), r(2), r(3)]);
    }

    #[test]
    fn workers_do_not_change_output() {
        let g = crate::synth::generate(&crate::synth::SynthConfig { triples: 3000, seed: 5, ..Default::default() });
        let one = mine_two_hop_rules(&g, 1);
        let four = mine_two_hop_rules(&g, 4);
        assert_eq!(one, four);
        assert_eq!(mine_two_hop_instances_with(&g, 1), mine_two_hop_instances_with(&g, 3));
    }

    #[test]
    fn mined_support_matches_score() {
        let g = crate::synth::generate(&crate::synth::SynthConfig { triples: 2000, seed: 9, ..Default::default() });
        for (rule, support) in count_two_hop_support(&g, 2) {
            let s = score_rule(&g, &rule);
            assert_eq!(s.instance_count, support, "{}", s.id);
            assert!(s.head_and_body_count <= s.body_count);
        }
    }

    #[test]
    fn instances_hold_in_graph() {
        let g = crate::synth::generate(&crate::synth::SynthConfig { triples: 1500, seed: 2, ..Default::default() });
        for inst in mine_two_hop_instances(&g).iter().take(2000) {
            assert!(inst.body_facts.iter().all(|f| g.has_fact(f).unwrap()));
            assert!(g.has_fact(&inst.head_fact).unwrap());
        }
    }

    #[test]
    fn filter_is_monotone() {
        let g = crate::synth::generate(&crate::synth::SynthConfig { triples: 2000, seed: 3, ..Default::default() });
        let stats = mine_two_hop_rules(&g, 1);
        let mut prev = usize::MAX;
        for (support, conf) in [(1, "0.1"), (2, "0.1"), (2, "0.5"), (5, "0.5"), (5, "0.9")] {
            let n = filter_rules(&stats, RuleFilter { min_support: support, min_confidence: conf.parse().unwrap() }).len();
            assert!(n <= prev);
            prev = n;
        }
    }
}
