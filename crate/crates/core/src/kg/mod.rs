//! In-memory knowledge graph: entity and relation tables, name tables,
//! the triple list and the indices the samplers rely on.
//!
//! A graph is built once (from TSV files or a [`KgBuilder`]) and is immutable
//! afterwards, so it can be shared freely between corpus workers.

mod sample;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sample::{PatternSupport, MAX_PATTERN_RESTARTS};

#[derive(Error, Debug)]
pub enum KgError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dangling id reference(s): {}", .ids.join(", "))]
    Integrity { ids: Vec<String> },
    #[error("knowledge graph has no triples to sample from")]
    EmptySource,
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("no {pattern} found after {attempts} attempts")]
    PatternExhausted { pattern: String, attempts: usize },
    #[error("invalid request: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// Either kind of identifier, for name lookups.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ItemId {
    Entity(EntityId),
    Relation(RelationId),
}

impl From<EntityId> for ItemId {
    fn from(id: EntityId) -> Self {
        ItemId::Entity(id)
    }
}

impl From<RelationId> for ItemId {
    fn from(id: RelationId) -> Self {
        ItemId::Relation(id)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Text,
    Number,
    Date,
}

impl AttributeKind {
    pub fn tag(self) -> &'static str {
        match self {
            AttributeKind::Text => "text",
            AttributeKind::Number => "number",
            AttributeKind::Date => "date",
        }
    }
}

/// A literal tail value together with its text form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeValue {
    kind: AttributeKind,
    raw: String,
    rendering: String,
}

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d", "%Y%m%d", "%d.%m.%Y"];

impl AttributeValue {
    /// Parses a raw value of the given kind. Numbers must be finite decimals;
    /// dates that do not match a known calendar format keep their free-text form.
    pub fn new(kind: AttributeKind, raw: &str) -> std::result::Result<Self, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err("empty attribute value".into());
        }
        let rendering = match kind {
            AttributeKind::Text => normalize_whitespace(raw),
            AttributeKind::Number => {
                let value: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
                if !value.is_finite() {
                    return Err(format!("`{raw}` is not a finite number"));
                }
                // f64 Display gives the shortest round-tripping decimal, no exponent.
                format!("{}", value + 0.0)
            }
            AttributeKind::Date => DATE_FORMATS
                .iter()
                .find_map(|fmt| NaiveDate::parse_from_str(raw, fmt).ok())
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| normalize_whitespace(raw)),
        };
        Ok(AttributeValue {
            kind,
            raw: raw.to_string(),
            rendering,
        })
    }

    pub fn text(raw: &str) -> Self {
        Self::new(AttributeKind::Text, raw).expect("non-empty text attribute")
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn rendering(&self) -> &str {
        &self.rendering
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tail {
    Entity(EntityId),
    Attribute(AttributeValue),
}

impl Tail {
    pub fn entity(&self) -> Option<EntityId> {
        match self {
            Tail::Entity(e) => Some(*e),
            Tail::Attribute(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: Tail,
}

/// id → ordered, non-empty list of names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameTable {
    names: Vec<Vec<String>>,
}

impl NameTable {
    pub fn names(&self, index: usize) -> &[String] {
        &self.names[index]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entity_keys: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_keys: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    entity_names: NameTable,
    relation_names: NameTable,
    triples: Vec<Triple>,
    by_head: Vec<Vec<usize>>,
    by_head_relation: BTreeMap<(EntityId, RelationId), Vec<usize>>,
    entity_tail_heads: HashSet<EntityId>,
    entity_tail_triples: Vec<usize>,
    // (head, relation) buckets reduced to distinct tails, longest first.
    object_buckets: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: usize) -> &Triple {
        &self.triples[index]
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.entity_keys.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_keys.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_keys.len() as u32).map(EntityId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relation_keys.len() as u32).map(RelationId)
    }

    pub fn entity(&self, key: &str) -> Option<EntityId> {
        self.entity_lookup.get(key).copied()
    }

    pub fn relation(&self, key: &str) -> Option<RelationId> {
        self.relation_lookup.get(key).copied()
    }

    pub fn entity_key(&self, id: EntityId) -> &str {
        &self.entity_keys[id.0 as usize]
    }

    pub fn relation_key(&self, id: RelationId) -> &str {
        &self.relation_keys[id.0 as usize]
    }

    pub fn names(&self, id: impl Into<ItemId>) -> Result<&[String]> {
        match id.into() {
            ItemId::Entity(e) if (e.0 as usize) < self.entity_names.len() => Ok(self.entity_names.names(e.0 as usize)),
            ItemId::Relation(r) if (r.0 as usize) < self.relation_names.len() => {
                Ok(self.relation_names.names(r.0 as usize))
            }
            other => Err(KgError::UnknownId(format!("{other:?}"))),
        }
    }

    /// Every name plus every attribute rendering, in graph order.
    pub fn surface_texts(&self) -> impl Iterator<Item = &str> {
        let names = (0..self.entity_names.len())
            .flat_map(|i| self.entity_names.names(i))
            .chain((0..self.relation_names.len()).flat_map(|i| self.relation_names.names(i)))
            .map(String::as_str);
        let values = self.triples.iter().filter_map(|t| match &t.tail {
            Tail::Attribute(v) => Some(v.rendering()),
            Tail::Entity(_) => None,
        });
        names.chain(values)
    }

    /// First listed name; used where a stable surface form is needed.
    pub fn canonical_name(&self, id: impl Into<ItemId>) -> Result<&str> {
        Ok(&self.names(id)?[0])
    }

    pub fn by_head(&self, head: EntityId) -> &[usize] {
        self.by_head.get(head.0 as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn by_head_relation(&self, head: EntityId, relation: RelationId) -> &[usize] {
        self.by_head_relation
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn head_relation_buckets(&self) -> impl Iterator<Item = (&(EntityId, RelationId), &Vec<usize>)> {
        self.by_head_relation.iter()
    }

    pub fn has_entity_tail_edges(&self, head: EntityId) -> bool {
        self.entity_tail_heads.contains(&head)
    }

    /// Positions of every triple whose tail is an entity.
    pub fn entity_tail_triples(&self) -> &[usize] {
        &self.entity_tail_triples
    }

    /// Text form of a tail: the attribute rendering, or the entity's first name.
    pub fn tail_text<'a>(&'a self, tail: &'a Tail) -> Result<&'a str> {
        match tail {
            Tail::Entity(e) => self.canonical_name(*e),
            Tail::Attribute(v) => Ok(v.rendering()),
        }
    }

    /// Writes the graph back out in the TSV formats `load_kg` reads.
    pub fn save(&self, triples_path: &Path, names_path: &Path) -> Result<()> {
        fn io(path: &Path) -> impl Fn(std::io::Error) -> KgError + '_ {
            move |source| KgError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
        let file = File::create(triples_path).map_err(io(triples_path))?;
        let mut out = BufWriter::new(file);
        for t in &self.triples {
            let (tail, kind) = match &t.tail {
                Tail::Entity(e) => (self.entity_key(*e), "entity"),
                Tail::Attribute(v) => (v.raw(), v.kind().tag()),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.entity_key(t.head),
                self.relation_key(t.relation),
                tail,
                kind
            )
            .map_err(io(triples_path))?;
        }
        out.flush().map_err(io(triples_path))?;

        let file = File::create(names_path).map_err(io(names_path))?;
        let mut out = BufWriter::new(file);
        for (i, key) in self.entity_keys.iter().enumerate() {
            for name in self.entity_names.names(i) {
                writeln!(out, "{key}\t{name}").map_err(io(names_path))?;
            }
        }
        for (i, key) in self.relation_keys.iter().enumerate() {
            for name in self.relation_names.names(i) {
                writeln!(out, "{key}\t{name}").map_err(io(names_path))?;
            }
        }
        out.flush().map_err(io(names_path))
    }
}

/// Tail as written in the triples file, before id resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawTail {
    Entity(String),
    Attribute(AttributeValue),
}

#[derive(Clone, Debug)]
struct RawTriple {
    head: String,
    relation: String,
    tail: RawTail,
}

/// Accumulates names and triples, then resolves and indexes them.
///
/// Every id must be declared with at least one name. Ids used in relation
/// position form the relation table; all other declared ids are entities,
/// ordered by first declaration.
#[derive(Clone, Debug, Default)]
pub struct KgBuilder {
    names: Vec<(String, String)>,
    triples: Vec<RawTriple>,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn name(&mut self, id: &str, name: &str) -> &mut Self {
        self.names.push((id.to_string(), name.to_string()));
        self
    }

    pub fn names<'a>(&mut self, id: &str, names: impl IntoIterator<Item = &'a str>) -> &mut Self {
        for n in names {
            self.name(id, n);
        }
        self
    }

    pub fn entity_triple(&mut self, head: &str, relation: &str, tail: &str) -> &mut Self {
        self.triples.push(RawTriple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: RawTail::Entity(tail.to_string()),
        });
        self
    }

    pub fn attribute_triple(&mut self, head: &str, relation: &str, value: AttributeValue) -> &mut Self {
        self.triples.push(RawTriple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: RawTail::Attribute(value),
        });
        self
    }

    pub fn build(&self) -> Result<KnowledgeGraph> {
        let relation_set: HashSet<&str> = self.triples.iter().map(|t| t.relation.as_str()).collect();
        let entity_used: HashSet<&str> = self
            .triples
            .iter()
            .flat_map(|t| {
                let tail = match &t.tail {
                    RawTail::Entity(e) => Some(e.as_str()),
                    RawTail::Attribute(_) => None,
                };
                std::iter::once(t.head.as_str()).chain(tail)
            })
            .collect();

        let mut entity_keys = Vec::new();
        let mut entity_lookup = HashMap::new();
        let mut relation_keys = Vec::new();
        let mut relation_lookup = HashMap::new();
        let mut entity_names: Vec<Vec<String>> = Vec::new();
        let mut relation_names: Vec<Vec<String>> = Vec::new();

        for (id, name) in &self.names {
            let name = normalize_whitespace(name);
            if name.is_empty() {
                return Err(KgError::Config(format!("empty name for `{id}`")));
            }
            let is_relation = relation_set.contains(id.as_str());
            let is_entity = entity_used.contains(id.as_str()) || !is_relation;
            if is_relation {
                let next = RelationId(relation_keys.len() as u32);
                let rid = *relation_lookup.entry(id.clone()).or_insert_with(|| {
                    relation_keys.push(id.clone());
                    relation_names.push(Vec::new());
                    next
                });
                relation_names[rid.0 as usize].push(name.clone());
            }
            if is_entity {
                let next = EntityId(entity_keys.len() as u32);
                let eid = *entity_lookup.entry(id.clone()).or_insert_with(|| {
                    entity_keys.push(id.clone());
                    entity_names.push(Vec::new());
                    next
                });
                entity_names[eid.0 as usize].push(name);
            }
        }

        let mut dangling: Vec<String> = Vec::new();
        let mut note = |id: &str| {
            if !dangling.iter().any(|d| d == id) {
                dangling.push(id.to_string());
            }
        };
        let mut triples = Vec::with_capacity(self.triples.len());
        for raw in &self.triples {
            let head = entity_lookup.get(&raw.head).copied();
            let relation = relation_lookup.get(&raw.relation).copied();
            let tail = match &raw.tail {
                RawTail::Entity(e) => entity_lookup.get(e).copied().map(Tail::Entity).or_else(|| {
                    note(e);
                    None
                }),
                RawTail::Attribute(v) => Some(Tail::Attribute(v.clone())),
            };
            if head.is_none() {
                note(&raw.head);
            }
            if relation.is_none() {
                note(&raw.relation);
            }
            if let (Some(head), Some(relation), Some(tail)) = (head, relation, tail) {
                triples.push(Triple { head, relation, tail });
            }
        }
        if !dangling.is_empty() {
            return Err(KgError::Integrity { ids: dangling });
        }

        Ok(index(
            entity_keys,
            entity_lookup,
            relation_keys,
            relation_lookup,
            NameTable { names: entity_names },
            NameTable { names: relation_names },
            triples,
        ))
    }
}

fn index(
    entity_keys: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_keys: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    entity_names: NameTable,
    relation_names: NameTable,
    triples: Vec<Triple>,
) -> KnowledgeGraph {
    let mut by_head = vec![Vec::new(); entity_keys.len()];
    let mut by_head_relation: BTreeMap<(EntityId, RelationId), Vec<usize>> = BTreeMap::new();
    let mut entity_tail_heads = HashSet::new();
    let mut entity_tail_triples = Vec::new();
    for (i, t) in triples.iter().enumerate() {
        by_head[t.head.0 as usize].push(i);
        by_head_relation.entry((t.head, t.relation)).or_default().push(i);
        if let Tail::Entity(_) = t.tail {
            entity_tail_heads.insert(t.head);
            entity_tail_triples.push(i);
        }
    }
    let mut object_buckets: Vec<Vec<usize>> = by_head_relation
        .values()
        .map(|bucket| {
            let mut seen = HashSet::new();
            bucket
                .iter()
                .copied()
                .filter(|&i| seen.insert(&triples[i].tail))
                .collect::<Vec<_>>()
        })
        .filter(|b| b.len() >= 2)
        .collect();
    // Stable sort keeps BTreeMap order among equal sizes.
    object_buckets.sort_by(|a, b| b.len().cmp(&a.len()));

    KnowledgeGraph {
        entity_keys,
        entity_lookup,
        relation_keys,
        relation_lookup,
        entity_names,
        relation_names,
        triples,
        by_head,
        by_head_relation,
        entity_tail_heads,
        entity_tail_triples,
        object_buckets,
    }
}

fn parse_tail_kind(tag: &str) -> Option<Option<AttributeKind>> {
    match tag {
        "entity" => Some(None),
        "text" => Some(Some(AttributeKind::Text)),
        "number" => Some(Some(AttributeKind::Number)),
        "date" => Some(Some(AttributeKind::Date)),
        _ => None,
    }
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((i + 1, trimmed.to_string()));
    }
    Ok(lines)
}

/// Loads a graph from a triples TSV (`head relation tail kind`) and a names TSV (`id name`).
pub fn load_kg(triples_path: &Path, names_path: &Path) -> Result<KnowledgeGraph> {
    let mut builder = KgBuilder::new();
    let parse_err = |path: &Path, line: usize, message: String| KgError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (line_no, line) in data_lines(names_path)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_err(
                names_path,
                line_no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let (id, name) = (cols[0].trim(), cols[1]);
        if id.is_empty() || normalize_whitespace(name).is_empty() {
            return Err(parse_err(names_path, line_no, "empty id or name".into()));
        }
        builder.name(id, name);
    }

    for (line_no, line) in data_lines(triples_path)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_err(
                triples_path,
                line_no,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let (head, relation, tail, tag) = (cols[0].trim(), cols[1].trim(), cols[2], cols[3].trim());
        if head.is_empty() || relation.is_empty() {
            return Err(parse_err(triples_path, line_no, "empty head or relation".into()));
        }
        match parse_tail_kind(tag) {
            None => return Err(parse_err(triples_path, line_no, format!("unknown tail kind `{tag}`"))),
            Some(None) => {
                builder.entity_triple(head, relation, tail.trim());
            }
            Some(Some(kind)) => {
                let value = AttributeValue::new(kind, tail).map_err(|m| parse_err(triples_path, line_no, m))?;
                builder.attribute_triple(head, relation, value);
            }
        }
    }
    builder.build()
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tail {
            Tail::Entity(t) => write!(f, "({}, {}, {})", self.head.0, self.relation.0, t.0),
            Tail::Attribute(v) => write!(f, "({}, {}, {:?})", self.head.0, self.relation.0, v.raw()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_the_comet_example() {
        let dir = tempfile::tempdir().unwrap();
        let triples = write(
            dir.path(),
            "t.tsv",
            "# comment\ne1\tauthor\te2\tentity\ne2\tperiod\t1828-1905\ttext\n",
        );
        let names = write(
            dir.path(),
            "n.tsv",
            "e1\tOff on a Comet\ne2\tJules Verne\nauthor\tauthor\nperiod\tperiod\n",
        );
        let kg = load_kg(&triples, &names).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(kg.entity_count(), 2);
        assert_eq!(kg.relation_count(), 2);
        let e1 = kg.entity("e1").unwrap();
        let e2 = kg.entity("e2").unwrap();
        assert_eq!(kg.triple(0).head, e1);
        assert_eq!(kg.triple(0).tail, Tail::Entity(e2));
        assert_eq!(kg.canonical_name(e2).unwrap(), "Jules Verne");
        match &kg.triple(1).tail {
            Tail::Attribute(v) => {
                assert_eq!(v.kind(), AttributeKind::Text);
                assert_eq!(v.rendering(), "1828-1905");
            }
            other => panic!("unexpected tail {other:?}"),
        }
        assert_eq!(kg.by_head(e1), &[0]);
        assert_eq!(kg.by_head(e2), &[1]);
        assert!(kg.has_entity_tail_edges(e1));
        assert!(!kg.has_entity_tail_edges(e2));
    }

    #[test]
    fn dangling_reference_names_the_id() {
        let mut b = KgBuilder::new();
        b.name("e1", "one").name("r", "rel");
        b.entity_triple("e1", "r", "e9");
        match b.build() {
            Err(KgError::Integrity { ids }) => assert_eq!(ids, vec!["e9".to_string()]),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let names = write(dir.path(), "n.tsv", "e1\tone\nr\trel\n");
        let bad_cols = write(dir.path(), "a.tsv", "e1\tr\te1\tentity\ne1\tr\n");
        match load_kg(&bad_cols, &names) {
            Err(KgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_kind = write(dir.path(), "b.tsv", "# c\ne1\tr\tx\tblob\n");
        match load_kg(&bad_kind, &names) {
            Err(KgError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("blob"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn attribute_renderings_are_canonical() {
        let n = AttributeValue::new(AttributeKind::Number, "007.50").unwrap();
        assert_eq!(n.rendering(), "7.5");
        let n = AttributeValue::new(AttributeKind::Number, "1200").unwrap();
        assert_eq!(n.rendering(), "1200");
        assert!(AttributeValue::new(AttributeKind::Number, "abc").is_err());
        let d = AttributeValue::new(AttributeKind::Date, "1905/03/24").unwrap();
        assert_eq!(d.rendering(), "1905-03-24");
        let d = AttributeValue::new(AttributeKind::Date, "early 1900s").unwrap();
        assert_eq!(d.rendering(), "early 1900s");
        assert!(AttributeValue::new(AttributeKind::Text, "   ").is_err());
    }

    #[test]
    fn names_accumulate_in_file_order() {
        let mut b = KgBuilder::new();
        b.names("e", ["p : nsw", "au - ns"]).name("r", "rel").name("f", "f");
        b.entity_triple("e", "r", "f");
        let kg = b.build().unwrap();
        let e = kg.entity("e").unwrap();
        assert_eq!(kg.names(e).unwrap(), &["p : nsw".to_string(), "au - ns".to_string()]);
        assert!(kg.names(EntityId(99)).is_err());
    }

    #[test]
    fn save_then_load_is_identical() {
        let mut b = KgBuilder::new();
        b.names("a", ["alpha", "al"]).name("b", "beta").name("c", "gamma");
        b.name("r1", "knows").name("r2", "born");
        b.entity_triple("a", "r1", "b")
            .entity_triple("b", "r1", "c")
            .attribute_triple(
                "a",
                "r2",
                AttributeValue::new(AttributeKind::Date, "1901-02-03").unwrap(),
            )
            .attribute_triple("c", "r2", AttributeValue::new(AttributeKind::Number, "12").unwrap());
        let kg = b.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, n) = (dir.path().join("t.tsv"), dir.path().join("n.tsv"));
        kg.save(&t, &n).unwrap();
        let again = load_kg(&t, &n).unwrap();
        assert_eq!(again.triples(), kg.triples());
        assert_eq!(again.entity_keys, kg.entity_keys);
        assert_eq!(again.relation_keys, kg.relation_keys);
        assert_eq!(again.by_head, kg.by_head);
        assert_eq!(again.by_head_relation, kg.by_head_relation);
        assert_eq!(again.entity_names, kg.entity_names);
    }
}
