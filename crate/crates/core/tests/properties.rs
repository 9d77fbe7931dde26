use std::collections::{BTreeMap, HashSet};

use cok_core::eval::{count_rendered_hops, Score};
use cok_core::explore::{explore, order_candidates, FactSetOracle, Outcome, Query, Step};
use cok_core::generation::{plain_cok_answer, Naming};
use cok_core::mining::{compositions, filter_rules, ground_rule, mine_two_hop_rules};
use cok_core::selection::{anonymization_map, balance_instances, leakage_filter};
use cok_core::templates::{FactMatcher, TemplateSet};
use cok_core::{KnowledgeGraph, QuerySide, Rule, RuleFilter, RuleStats, Setting, Threshold, Triple};
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = KnowledgeGraph> {
    prop::collection::vec((0u8..12, 0u8..3, 0u8..12), 1..80).prop_map(|rows| {
        let tsv: String = rows.iter().map(|(h, r, t)| format!("e{h}\tr{r}\te{t}\n")).collect();
        KnowledgeGraph::from_tsv(&tsv).unwrap()
    })
}

fn library(kg: &KnowledgeGraph) -> Vec<RuleStats> {
    filter_rules(&mine_two_hop_rules(kg, 1), RuleFilter { min_support: 1, min_confidence: Threshold::new(0, 1) })
}

fn grounded(kg: &KnowledgeGraph, lib: &[RuleStats]) -> BTreeMap<String, Vec<cok_core::RuleInstance>> {
    lib.iter().map(|s| (s.id.clone(), ground_rule(kg, &s.rule, true))).collect()
}

fn arb_rule(max_hop: usize) -> impl Strategy<Value = Rule> {
    (0u32..3, prop::collection::vec(0u32..3, 2..=max_hop)).prop_map(|(h, body)| {
        Rule::new(cok_core::RelationId(h), body.into_iter().map(cok_core::RelationId).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn decimal_threshold_is_strict(k in 0u64..100, y in 0u64..500, x in 1u64..500) {
        let t: Threshold = format!("0.{k:02}").parse().unwrap();
        prop_assert_eq!(t.exceeded_by(y, x), 100 * y > k * x);
    }

    #[test]
    fn splices_preserve_head_and_length(outer in arb_rule(3), inner in arb_rule(3)) {
        for r in compositions(&outer, &inner, 4) {
            prop_assert_eq!(r.head(), outer.head());
            prop_assert_eq!(r.hop(), outer.hop() + inner.hop() - 1);
            let at = (0..outer.hop()).find(|&i| r.body()[i..].starts_with(inner.body()) && outer.body()[i] == inner.head());
            prop_assert!(at.is_some());
        }
        if outer.hop() + inner.hop() - 1 > 4 || !outer.body().contains(&inner.head()) {
            prop_assert!(compositions(&outer, &inner, 4).is_empty());
        }
    }

    #[test]
    fn balanced_pools_are_equal_sized_subsets(kg in arb_graph(), n in 1usize..4, seed in any::<u64>()) {
        let per_rule = grounded(&kg, &library(&kg));
        let pool = balance_instances(per_rule.clone(), n, seed, Setting::Anonymized).unwrap();
        for (id, kept) in &pool.per_rule {
            prop_assert_eq!(kept.len(), n);
            prop_assert!(kept.iter().all(|i| per_rule[id].contains(i)));
        }
        let again = balance_instances(per_rule, n, seed, Setting::Anonymized).unwrap();
        prop_assert_eq!(pool.per_rule, again.per_rule);
    }

    #[test]
    fn leakage_filter_removes_every_leak(kg in arb_graph(), n in 1usize..4, seed in any::<u64>()) {
        let pool = leakage_filter(balance_instances(grounded(&kg, &library(&kg)), n, seed, Setting::Anonymized).unwrap());
        let body: HashSet<Triple> = pool.instances().flat_map(|(_, i)| i.body_facts.clone()).collect();
        prop_assert!(pool.instances().all(|(_, i)| !body.contains(&i.head_fact)));
        let (min, max) = pool.count_range();
        prop_assert_eq!(min, max);
    }

    #[test]
    fn anonymization_is_injective(kg in arb_graph(), seed in any::<u64>()) {
        let avoid: HashSet<String> = ["the", "of", "is"].iter().map(|s| s.to_string()).collect();
        let map = anonymization_map(&kg, seed, &avoid).unwrap();
        let names: HashSet<&str> = map.names().iter().map(String::as_str).collect();
        prop_assert_eq!(names.len(), kg.entity_count());
        for e in kg.entities() {
            let n = map.name(e);
            prop_assert!(kg.entity_id(n).is_none());
            prop_assert!(!avoid.contains(&n.to_lowercase()));
            prop_assert_eq!(map.resolve(n), Some(e));
        }
    }

    #[test]
    fn exploration_is_sound(kg in arb_graph(), keep in prop::collection::vec(any::<bool>(), 80), pick in any::<u16>()) {
        let lib = library(&kg);
        let facts: Vec<Triple> = kg.triples().collect();
        let oracle: FactSetOracle = facts.iter().zip(keep.iter().cycle()).filter(|(_, &k)| k).map(|(t, _)| *t).collect();
        let t = facts[pick as usize % facts.len()];
        let side = if pick % 2 == 0 { QuerySide::Object } else { QuerySide::Subject };
        let known = if side == QuerySide::Object { t.head } else { t.tail };
        let q = Query { head: t.relation, known, side };
        let candidates = order_candidates(&lib, q.head);
        prop_assume!(!candidates.is_empty());
        let max_trials = 1 + pick as usize % candidates.len();
        let trace = explore(&kg, q, &candidates, &oracle, max_trials).unwrap();
        prop_assert!(trace.trials() <= max_trials);
        for step in &trace.steps {
            if let Step::MissingFact { supported, attempted, .. } = step {
                prop_assert!(supported.iter().all(|f| oracle.0.contains(f)));
                if let Some(f) = attempted.fact() {
                    prop_assert!(!oracle.0.contains(&f));
                }
            }
        }
        if let Some((rule, bindings, _)) = trace.conclusion() {
            prop_assert_eq!(trace.outcome, Outcome::Success);
            for (w, &r) in bindings.windows(2).zip(rule.body()) {
                prop_assert!(oracle.0.contains(&Triple::new(w[0], r, w[1])));
            }
        } else {
            prop_assert_eq!(trace.outcome, Outcome::Exhausted);
        }
    }

    #[test]
    fn plain_answers_render_their_hop_count(kg in arb_graph()) {
        let templates = TemplateSet::fallback(kg.relation_names().iter().map(String::as_str));
        let naming = Naming::new(&kg, None);
        let matcher = FactMatcher::new(&templates, kg.entity_names());
        for s in library(&kg).iter().take(3) {
            for inst in ground_rule(&kg, &s.rule, true).iter().take(3) {
                let text = plain_cok_answer(inst, QuerySide::Object, &templates, &naming).unwrap();
                let distinct: HashSet<_> = inst.bindings.iter().collect();
                if distinct.len() == inst.bindings.len() {
                    prop_assert_eq!(count_rendered_hops(&text, &matcher), s.rule.hop());
                }
            }
        }
    }

    #[test]
    fn percent_recovers_the_count(total in 1usize..5000, frac in 0.0f64..=1.0) {
        let correct = (frac * total as f64).floor() as usize;
        let s = Score { correct, total };
        prop_assert!((0.0..=100.0).contains(&s.percent()));
        prop_assert_eq!((s.percent() / 100.0 * total as f64).round() as usize, correct);
    }
}
