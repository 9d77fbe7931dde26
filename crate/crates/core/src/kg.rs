//! Interned, immutable triple store.
//!
//! Entities and relations are interned into dense ids assigned in ascending
//! name order once the whole input has been read, so every id (and therefore
//! every canonical ordering built on ids) is independent of input line order.
//! Adjacency is stored in CSR form for both directions, each list sorted by
//! `(relation, entity)`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A single fact `(head, relation, tail)`. Ordering is lexicographic over the
/// three ids, which is the canonical fact order used throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Edges leaving the entity: `(relation, tail)`.
    Forward,
    /// Edges entering the entity: `(relation, head)`.
    Inverse,
}

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Malformed { line: usize, found: usize },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown entity `{0}`")]
    UnknownEntityName(String),
    #[error("unknown relation `{0}`")]
    UnknownRelationName(String),
    #[error("store file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counts reported by `store stats`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

#[derive(Clone, Debug, Default)]
struct Csr {
    offsets: Vec<usize>,
    edges: Vec<(RelationId, EntityId)>,
}

impl Csr {
    fn build(node_count: usize, mut rows: Vec<(EntityId, RelationId, EntityId)>) -> Self {
        rows.sort_unstable();
        let mut offsets = vec![0usize; node_count + 1];
        for (node, _, _) in &rows {
            offsets[node.index() + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        let edges = rows.into_iter().map(|(_, r, e)| (r, e)).collect();
        Self { offsets, edges }
    }

    fn row(&self, node: EntityId) -> &[(RelationId, EntityId)] {
        &self.edges[self.offsets[node.index()]..self.offsets[node.index() + 1]]
    }
}

#[derive(Clone, Debug, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn from_sorted(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, index }
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }
}

/// The fact universe. Immutable after construction.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    fwd: Csr,
    inv: Csr,
}

/// Accumulates raw string triples; ids are assigned in [`KgBuilder::build`].
#[derive(Debug, Default)]
pub struct KgBuilder {
    entity_ids: HashMap<String, u32>,
    entity_names: Vec<String>,
    relation_ids: HashMap<String, u32>,
    relation_names: Vec<String>,
    raw: Vec<(u32, u32, u32)>,
}

fn intern(map: &mut HashMap<String, u32>, names: &mut Vec<String>, name: &str) -> u32 {
    if let Some(&id) = map.get(name) {
        return id;
    }
    let id = names.len() as u32;
    names.push(name.to_owned());
    map.insert(name.to_owned(), id);
    id
}

/// Returns `old id -> new id` so that new ids follow ascending name order.
fn sorted_remap(names: &[String]) -> (Vec<String>, Vec<u32>) {
    let mut order: Vec<u32> = (0..names.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| names[a as usize].cmp(&names[b as usize]));
    let mut remap = vec![0u32; names.len()];
    let mut sorted = Vec::with_capacity(names.len());
    for (new, &old) in order.iter().enumerate() {
        remap[old as usize] = new as u32;
        sorted.push(names[old as usize].clone());
    }
    (sorted, remap)
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an entity name without any fact attached to it.
    pub fn add_entity(&mut self, name: &str) {
        intern(&mut self.entity_ids, &mut self.entity_names, name);
    }

    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) {
        let h = intern(&mut self.entity_ids, &mut self.entity_names, head);
        let r = intern(&mut self.relation_ids, &mut self.relation_names, relation);
        let t = intern(&mut self.entity_ids, &mut self.entity_names, tail);
        self.raw.push((h, r, t));
    }

    /// Parses one `head\trelation\ttail` line. `line_no` is 1-based and only
    /// used for error reporting. Blank lines are skipped.
    pub fn add_line(&mut self, line: &str, line_no: usize) -> Result<(), KgError> {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            return Ok(());
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed { line: line_no, found: fields.len() });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::EmptyField { line: line_no });
        }
        self.add_triple(fields[0], fields[1], fields[2]);
        Ok(())
    }

    pub fn build(self) -> KnowledgeGraph {
        let (entity_names, emap) = sorted_remap(&self.entity_names);
        let (relation_names, rmap) = sorted_remap(&self.relation_names);
        let mut triples: Vec<Triple> = self
            .raw
            .into_iter()
            .map(|(h, r, t)| {
                Triple::new(
                    EntityId(emap[h as usize]),
                    RelationId(rmap[r as usize]),
                    EntityId(emap[t as usize]),
                )
            })
            .collect();
        triples.sort_unstable();
        triples.dedup();
        KnowledgeGraph::from_parts(entity_names, relation_names, &triples)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreSnapshot {
    format: String,
    version: u32,
    entities: Vec<String>,
    relations: Vec<String>,
    triples: Vec<[u32; 3]>,
}

const STORE_FORMAT: &str = "cok-kg-store";
const STORE_VERSION: u32 = 1;

impl KnowledgeGraph {
    fn from_parts(entities: Vec<String>, relations: Vec<String>, triples: &[Triple]) -> Self {
        let n = entities.len();
        let fwd = Csr::build(n, triples.iter().map(|t| (t.head, t.relation, t.tail)).collect());
        let inv = Csr::build(n, triples.iter().map(|t| (t.tail, t.relation, t.head)).collect());
        Self {
            entities: Interner::from_sorted(entities),
            relations: Interner::from_sorted(relations),
            fwd,
            inv,
        }
    }

    /// Reads a tab-separated triple stream. Fails on the first malformed line.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, KgError> {
        let mut builder = KgBuilder::new();
        for (i, line) in reader.lines().enumerate() {
            builder.add_line(&line?, i + 1)?;
        }
        Ok(builder.build())
    }

    pub fn from_tsv(text: &str) -> Result<Self, KgError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = KgBuilder::new();
        for (h, r, t) in triples {
            builder.add_triple(h, r, t);
        }
        builder.build()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.fwd.edges.len()
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            entities: self.entity_count(),
            relations: self.relation_count(),
            triples: self.triple_count(),
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations.names[id.index()]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_count() as u32).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relation_count() as u32).map(RelationId)
    }

    fn check_entity(&self, e: EntityId) -> Result<(), KgError> {
        if e.index() < self.entity_count() {
            Ok(())
        } else {
            Err(KgError::UnknownEntity(e.0))
        }
    }

    fn check_relation(&self, r: RelationId) -> Result<(), KgError> {
        if r.index() < self.relation_count() {
            Ok(())
        } else {
            Err(KgError::UnknownRelation(r.0))
        }
    }

    /// Resolves a triple of names into ids.
    pub fn resolve(&self, head: &str, relation: &str, tail: &str) -> Result<Triple, KgError> {
        let h = self
            .entity_id(head)
            .ok_or_else(|| KgError::UnknownEntityName(head.to_owned()))?;
        let r = self
            .relation_id(relation)
            .ok_or_else(|| KgError::UnknownRelationName(relation.to_owned()))?;
        let t = self
            .entity_id(tail)
            .ok_or_else(|| KgError::UnknownEntityName(tail.to_owned()))?;
        Ok(Triple::new(h, r, t))
    }

    /// Membership test. Unknown ids are an error, distinct from an absent fact.
    pub fn has_fact(&self, t: &Triple) -> Result<bool, KgError> {
        self.check_entity(t.head)?;
        self.check_relation(t.relation)?;
        self.check_entity(t.tail)?;
        Ok(self.contains(t))
    }

    /// Unchecked membership for ids already known to be valid.
    pub fn contains(&self, t: &Triple) -> bool {
        self.fwd.row(t.head).binary_search(&(t.relation, t.tail)).is_ok()
    }

    pub fn neighbors(
        &self,
        e: EntityId,
        direction: Direction,
    ) -> Result<&[(RelationId, EntityId)], KgError> {
        self.check_entity(e)?;
        Ok(self.adjacent(e, direction))
    }

    /// Unchecked adjacency row.
    pub fn adjacent(&self, e: EntityId, direction: Direction) -> &[(RelationId, EntityId)] {
        match direction {
            Direction::Forward => self.fwd.row(e),
            Direction::Inverse => self.inv.row(e),
        }
    }

    /// Entities `y` with `(e, relation, y)` (forward) or `(y, relation, e)`
    /// (inverse), ascending.
    pub fn along(
        &self,
        e: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> impl Iterator<Item = EntityId> + '_ {
        let row = self.adjacent(e, direction);
        let lo = row.partition_point(|&(r, _)| r < relation);
        let hi = row.partition_point(|&(r, _)| r <= relation);
        row[lo..hi].iter().map(|&(_, y)| y)
    }

    /// Every fact where `e` is head or tail, canonical order.
    pub fn facts_of(&self, e: EntityId) -> Result<Vec<Triple>, KgError> {
        self.check_entity(e)?;
        let mut out: Vec<Triple> = self
            .fwd
            .row(e)
            .iter()
            .map(|&(r, t)| Triple::new(e, r, t))
            .chain(self.inv.row(e).iter().map(|&(r, h)| Triple::new(h, r, e)))
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// All facts in canonical order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.entities()
            .flat_map(move |h| self.fwd.row(h).iter().map(move |&(r, t)| Triple::new(h, r, t)))
    }

    pub fn fact_names(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail),
        )
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in self.triples() {
            let (h, r, tl) = self.fact_names(&t);
            writeln!(out, "{h}\t{r}\t{tl}")?;
        }
        Ok(())
    }

    /// Writes the versioned JSON store snapshot.
    pub fn save<W: Write>(&self, out: W) -> Result<(), KgError> {
        let snapshot = StoreSnapshot {
            format: STORE_FORMAT.to_owned(),
            version: STORE_VERSION,
            entities: self.entities.names.clone(),
            relations: self.relations.names.clone(),
            triples: self
                .triples()
                .map(|t| [t.head.0, t.relation.0, t.tail.0])
                .collect(),
        };
        serde_json::to_writer(out, &snapshot).map_err(|e| KgError::Format(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, KgError> {
        let snap: StoreSnapshot =
            serde_json::from_reader(input).map_err(|e| KgError::Format(e.to_string()))?;
        if snap.format != STORE_FORMAT {
            return Err(KgError::Format(format!("unexpected format tag `{}`", snap.format)));
        }
        if snap.version != STORE_VERSION {
            return Err(KgError::Format(format!("unsupported store version {}", snap.version)));
        }
        if !snap.entities.windows(2).all(|w| w[0] < w[1])
            || !snap.relations.windows(2).all(|w| w[0] < w[1])
        {
            return Err(KgError::Format("name tables must be strictly ascending".into()));
        }
        let (ne, nr) = (snap.entities.len() as u32, snap.relations.len() as u32);
        let mut triples = Vec::with_capacity(snap.triples.len());
        for [h, r, t] in snap.triples {
            if h >= ne || t >= ne {
                return Err(KgError::UnknownEntity(h.max(t)));
            }
            if r >= nr {
                return Err(KgError::UnknownRelation(r));
            }
            triples.push(Triple::new(EntityId(h), RelationId(r), EntityId(t)));
        }
        triples.sort_unstable();
        triples.dedup();
        Ok(Self::from_parts(snap.entities, snap.relations, &triples))
    }
}
