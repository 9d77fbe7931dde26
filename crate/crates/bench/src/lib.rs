//! Shared fixtures for the criterion benches.

use cok_core::synth::{self, SynthConfig};
use cok_core::KnowledgeGraph;

pub fn graph(triples: usize) -> KnowledgeGraph {
    synth::generate(&SynthConfig { triples, seed: 11, ..Default::default() })
}

pub fn tsv(triples: usize) -> String {
    synth::generate_triples(&SynthConfig { triples, seed: 11, ..Default::default() })
        .into_iter()
        .map(|(h, r, t)| format!("{h}\t{r}\t{t}\n"))
        .collect()
}
