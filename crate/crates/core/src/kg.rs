//! Triplet-format knowledge graph with entity/property catalogs, a
//! subject-role degree index and holdout removal.
//!
//! Degree is the number of stored triplets having the entity as subject.
//! Object-role occurrences do not count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::KgError;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, KgError> {
                let id = id.into();
                validate_id(&id)?;
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = KgError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

id_newtype!(
    /// Entity identifier such as `Q42`.
    EntityId
);
id_newtype!(
    /// Property identifier such as `P19`.
    PropertyId
);

fn validate_id(id: &str) -> Result<(), KgError> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(KgError::InvalidId(id.to_owned()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Entity,
    Literal,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Entity => "entity",
            ObjectKind::Literal => "literal",
        }
    }
}

impl std::str::FromStr for ObjectKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entity" => Ok(ObjectKind::Entity),
            "literal" => Ok(ObjectKind::Literal),
            other => Err(format!("unknown object kind {other:?}")),
        }
    }
}

/// The object slot of a triplet. Literal objects (dates, strings) have no
/// outgoing edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Object {
    Entity(EntityId),
    Literal(String),
}

impl Object {
    pub fn kind(&self) -> ObjectKind {
        match self {
            Object::Entity(_) => ObjectKind::Entity,
            Object::Literal(_) => ObjectKind::Literal,
        }
    }

    /// The raw value: an entity id or the literal text.
    pub fn value(&self) -> &str {
        match self {
            Object::Entity(id) => id.as_str(),
            Object::Literal(s) => s,
        }
    }

    pub fn as_entity(&self) -> Option<&EntityId> {
        match self {
            Object::Entity(id) => Some(id),
            Object::Literal(_) => None,
        }
    }
}

impl Ord for Object {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.value()
            .cmp(other.value())
            .then_with(|| self.kind().cmp(&other.kind()))
    }
}

impl PartialOrd for Object {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One `(subject, property, object)` fact.
///
/// Field order gives the derived ordering: subject, then property, then
/// object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "TripletRecord", into = "TripletRecord")]
pub struct Triplet {
    pub subject: EntityId,
    pub property: PropertyId,
    pub object: Object,
}

impl Triplet {
    pub fn new(subject: EntityId, property: PropertyId, object: Object) -> Self {
        Self {
            subject,
            property,
            object,
        }
    }

    /// Convenience constructor for an entity-valued triplet; panics on
    /// invalid ids, so meant for fixtures.
    pub fn entity(s: &str, p: &str, o: &str) -> Self {
        Self::new(
            EntityId::new(s).expect("valid subject id"),
            PropertyId::new(p).expect("valid property id"),
            Object::Entity(EntityId::new(o).expect("valid object id")),
        )
    }

    /// Convenience constructor for a literal-valued triplet.
    pub fn literal(s: &str, p: &str, o: &str) -> Self {
        Self::new(
            EntityId::new(s).expect("valid subject id"),
            PropertyId::new(p).expect("valid property id"),
            Object::Literal(o.to_owned()),
        )
    }
}

impl AsRef<Triplet> for Triplet {
    fn as_ref(&self) -> &Triplet {
        self
    }
}

/// Flat wire form of a triplet, shared by every line-delimited file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripletRecord {
    pub subject: String,
    pub property: String,
    pub object: String,
    pub object_kind: ObjectKind,
}

impl TryFrom<TripletRecord> for Triplet {
    type Error = KgError;
    fn try_from(r: TripletRecord) -> Result<Self, Self::Error> {
        let object = match r.object_kind {
            ObjectKind::Entity => Object::Entity(EntityId::new(r.object)?),
            ObjectKind::Literal => Object::Literal(r.object),
        };
        Ok(Triplet::new(
            EntityId::new(r.subject)?,
            PropertyId::new(r.property)?,
            object,
        ))
    }
}

impl From<Triplet> for TripletRecord {
    fn from(t: Triplet) -> Self {
        let object_kind = t.object.kind();
        let object = match t.object {
            Object::Entity(id) => String::from(id),
            Object::Literal(s) => s,
        };
        TripletRecord {
            subject: t.subject.into(),
            property: t.property.into(),
            object,
            object_kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub label: String,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
}

impl Entity {
    /// Builds an entity, dropping any alias equal to the label.
    pub fn new(
        id: EntityId,
        label: impl Into<String>,
        aliases: impl IntoIterator<Item = String>,
    ) -> Result<Self, KgError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(KgError::EmptyLabel(id.to_string()));
        }
        let aliases = aliases
            .into_iter()
            .filter(|a| a != &label && !a.trim().is_empty())
            .collect();
        Ok(Self { id, label, aliases })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub id: PropertyId,
    pub label: String,
}

/// Entity and property catalogs, loaded separately from the triplets so the
/// same triplet file can be re-labeled.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entities: HashMap<EntityId, Entity>,
    properties: HashMap<PropertyId, Property>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_entity(&mut self, entity: Entity) {
        self.entities.insert(entity.id.clone(), entity);
    }

    pub fn insert_property(&mut self, property: Property) -> Result<(), KgError> {
        if property.label.trim().is_empty() {
            return Err(KgError::EmptyLabel(property.id.to_string()));
        }
        self.properties.insert(property.id.clone(), property);
        Ok(())
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn property(&self, id: &PropertyId) -> Option<&Property> {
        self.properties.get(id)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn property_count(&self) -> usize {
        self.properties.len()
    }

    pub fn property_ids(&self) -> BTreeSet<PropertyId> {
        self.properties.keys().cloned().collect()
    }

    /// Entities in id order.
    pub fn entities_sorted(&self) -> Vec<&Entity> {
        let mut v: Vec<&Entity> = self.entities.values().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Properties in id order.
    pub fn properties_sorted(&self) -> Vec<&Property> {
        let mut v: Vec<&Property> = self.properties.values().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Surface form of an object: entity label or the literal text.
    pub fn object_label<'a>(&'a self, object: &'a Object) -> Option<&'a str> {
        match object {
            Object::Entity(id) => self.entity(id).map(|e| e.label.as_str()),
            Object::Literal(s) => Some(s.as_str()),
        }
    }

    /// Aliases of an object; literals have none.
    pub fn object_aliases(&self, object: &Object) -> BTreeSet<String> {
        match object {
            Object::Entity(id) => self
                .entity(id)
                .map(|e| e.aliases.clone())
                .unwrap_or_default(),
            Object::Literal(_) => BTreeSet::new(),
        }
    }

    pub fn resolves(&self, t: &Triplet) -> bool {
        self.entities.contains_key(&t.subject)
            && self.properties.contains_key(&t.property)
            && t
                .object
                .as_entity()
                .is_none_or(|o| self.entities.contains_key(o))
    }

    /// Loads line-delimited `{"id", "label", "aliases"}` entity records.
    pub fn load_entities(&mut self, path: &Path) -> Result<usize, KgError> {
        let mut n = 0;
        for (line_no, line) in read_lines(path)? {
            let raw: EntityRecord =
                serde_json::from_str(&line).map_err(|e| KgError::Malformed {
                    path: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                })?;
            let id = EntityId::new(raw.id).map_err(|e| at_line(path, line_no, e))?;
            let entity = Entity::new(id, raw.label, raw.aliases)
                .map_err(|e| at_line(path, line_no, e))?;
            self.insert_entity(entity);
            n += 1;
        }
        Ok(n)
    }

    /// Loads line-delimited `{"id", "label"}` property records.
    pub fn load_properties(&mut self, path: &Path) -> Result<usize, KgError> {
        let mut n = 0;
        for (line_no, line) in read_lines(path)? {
            let property: Property =
                serde_json::from_str(&line).map_err(|e| KgError::Malformed {
                    path: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                })?;
            self.insert_property(property)
                .map_err(|e| at_line(path, line_no, e))?;
            n += 1;
        }
        Ok(n)
    }
}

#[derive(Deserialize)]
struct EntityRecord {
    id: String,
    label: String,
    #[serde(default)]
    aliases: Vec<String>,
}

fn at_line(path: &Path, line: usize, e: KgError) -> KgError {
    KgError::Malformed {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, KgError> {
    let file = File::open(path).map_err(|e| KgError::Io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KgError::Io(path.display().to_string(), e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_owned()));
    }
    Ok(out)
}

/// How rows whose ids do not resolve in the catalog are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub skipped_unresolved: usize,
}

/// An edge leaving a subject: `(property, object)`.
pub type Edge = (PropertyId, Object);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    adjacency: BTreeMap<EntityId, BTreeSet<Edge>>,
    len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub removed: usize,
    pub absent: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triplets(triplets: impl IntoIterator<Item = Triplet>) -> Self {
        let mut g = Self::new();
        for t in triplets {
            g.insert(t);
        }
        g
    }

    /// Inserts a triplet, returning false if it was already present.
    pub fn insert(&mut self, t: Triplet) -> bool {
        let inserted = self
            .adjacency
            .entry(t.subject)
            .or_default()
            .insert((t.property, t.object));
        if inserted {
            self.len += 1;
        }
        inserted
    }

    /// Reads a tab-separated triplet file:
    /// `subject_id \t property_id \t object \t object_kind`.
    ///
    /// With a catalog, rows that do not resolve either fail the load
    /// (`Strict`) or are skipped and counted (`Lenient`).
    pub fn ingest(
        path: &Path,
        catalog: Option<&Catalog>,
        mode: IngestMode,
    ) -> Result<(Self, IngestReport), KgError> {
        let mut graph = Self::new();
        let mut report = IngestReport::default();
        for (line_no, line) in read_lines(path)? {
            report.rows += 1;
            let t = parse_row(&line).map_err(|message| KgError::Malformed {
                path: path.display().to_string(),
                line: line_no,
                message,
            })?;
            if let Some(catalog) = catalog {
                if !catalog.resolves(&t) {
                    match mode {
                        IngestMode::Strict => {
                            return Err(KgError::Unresolved {
                                line: line_no,
                                row: line.clone(),
                            })
                        }
                        IngestMode::Lenient => {
                            report.skipped_unresolved += 1;
                            continue;
                        }
                    }
                }
            }
            if graph.insert(t) {
                report.stored += 1;
            } else {
                report.duplicates += 1;
            }
        }
        if report.skipped_unresolved > 0 {
            log::warn!(
                "{}: skipped {} rows with unresolved references",
                path.display(),
                report.skipped_unresolved
            );
        }
        Ok((graph, report))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.adjacency
            .get(&t.subject)
            .is_some_and(|edges| edges.contains(&(t.property.clone(), t.object.clone())))
    }

    /// Subject-role degree; 0 for unknown ids.
    pub fn degree(&self, e: &EntityId) -> usize {
        self.adjacency.get(e).map_or(0, BTreeSet::len)
    }

    /// Outgoing edges of `e`, sorted by property id then object.
    pub fn edges(&self, e: &EntityId) -> impl Iterator<Item = &Edge> {
        self.adjacency.get(e).into_iter().flatten()
    }

    /// Triplets with subject `e`, sorted by property id then object.
    pub fn triplets_of(&self, e: &EntityId) -> Vec<Triplet> {
        self.edges(e)
            .map(|(p, o)| Triplet::new(e.clone(), p.clone(), o.clone()))
            .collect()
    }

    /// Entities with at least one outgoing triplet, with their degrees, in id
    /// order.
    pub fn subjects(&self) -> impl Iterator<Item = (&EntityId, usize)> {
        self.adjacency.iter().map(|(e, edges)| (e, edges.len()))
    }

    pub fn subject_count(&self) -> usize {
        self.adjacency.len()
    }

    /// All triplets in `(subject, property, object)` order.
    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.adjacency.iter().flat_map(|(s, edges)| {
            edges
                .iter()
                .map(move |(p, o)| Triplet::new(s.clone(), p.clone(), o.clone()))
        })
    }

    pub fn property_ids(&self) -> BTreeSet<PropertyId> {
        self.adjacency
            .values()
            .flat_map(|edges| edges.iter().map(|(p, _)| p.clone()))
            .collect()
    }

    /// Removes the listed triplets. Idempotent; absent triplets are counted.
    pub fn remove_holdout<'a>(
        &mut self,
        triplets: impl IntoIterator<Item = &'a Triplet>,
    ) -> HoldoutReport {
        let mut report = HoldoutReport::default();
        for t in triplets {
            let removed = match self.adjacency.get_mut(&t.subject) {
                Some(edges) => {
                    let removed = edges.remove(&(t.property.clone(), t.object.clone()));
                    if edges.is_empty() {
                        self.adjacency.remove(&t.subject);
                    }
                    removed
                }
                None => false,
            };
            if removed {
                self.len -= 1;
                report.removed += 1;
            } else {
                report.absent += 1;
            }
        }
        report
    }

    /// Counts subject entities per degree bin. Only non-empty bins are
    /// returned, in ascending order.
    pub fn degree_histogram(&self, bins: &DegreeBins) -> Vec<HistogramBin> {
        let mut counts: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        for (_, degree) in self.subjects() {
            let (lo, hi) = bins.bin_of(degree as u64);
            *counts.entry((lo, hi)).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|((bin_lo, bin_hi), count)| HistogramBin {
                bin_lo,
                bin_hi,
                count,
            })
            .collect()
    }
}

fn parse_row(line: &str) -> Result<Triplet, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    let subject = EntityId::new(fields[0].trim()).map_err(|e| e.to_string())?;
    let property = PropertyId::new(fields[1].trim()).map_err(|e| e.to_string())?;
    let kind: ObjectKind = fields[3].trim().parse()?;
    let object = match kind {
        ObjectKind::Entity => Object::Entity(EntityId::new(fields[2].trim()).map_err(|e| e.to_string())?),
        ObjectKind::Literal => Object::Literal(fields[2].to_owned()),
    };
    Ok(Triplet::new(subject, property, object))
}

/// Renders a triplet as one row of the tab-separated triplet file.
pub fn format_row(t: &Triplet) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        t.subject,
        t.property,
        t.object.value(),
        t.object.kind().as_str()
    )
}

/// Degree binning: exact bins `[d, d]` up to `exact_up_to`, then
/// power-of-two bins `(2^k, 2^(k+1)]` above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeBins {
    pub exact_up_to: u64,
}

impl Default for DegreeBins {
    fn default() -> Self {
        Self { exact_up_to: 100 }
    }
}

impl DegreeBins {
    pub fn bin_of(&self, degree: u64) -> (u64, u64) {
        if degree <= self.exact_up_to {
            return (degree, degree);
        }
        let hi = degree.next_power_of_two();
        let lo = (hi / 2 + 1).max(self.exact_up_to + 1);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: u64,
    pub bin_hi: u64,
    pub count: u64,
}
