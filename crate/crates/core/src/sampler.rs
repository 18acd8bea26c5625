//! Degree buckets and seeded tail-entity sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::BucketError;
use crate::kg::{EntityId, KnowledgeGraph, Triplet};

/// Inclusive degree range with a name, e.g. `fine = [1, 2]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeBucket {
    pub name: String,
    pub min_degree: u64,
    pub max_degree: u64,
}

impl DegreeBucket {
    pub fn new(name: impl Into<String>, min_degree: u64, max_degree: u64) -> Self {
        Self {
            name: name.into(),
            min_degree,
            max_degree,
        }
    }

    pub fn contains(&self, degree: u64) -> bool {
        self.min_degree <= degree && degree <= self.max_degree
    }
}

/// A validated list of pairwise-disjoint buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct BucketSet(Vec<DegreeBucket>);

impl BucketSet {
    pub fn new(buckets: Vec<DegreeBucket>) -> Result<Self, BucketError> {
        for (i, b) in buckets.iter().enumerate() {
            if b.min_degree > b.max_degree {
                return Err(BucketError::InvertedBounds {
                    name: b.name.clone(),
                    min: b.min_degree,
                    max: b.max_degree,
                });
            }
            for other in &buckets[..i] {
                if other.name == b.name {
                    return Err(BucketError::DuplicateName(b.name.clone()));
                }
                if other.min_degree <= b.max_degree && b.min_degree <= other.max_degree {
                    return Err(BucketError::Overlap(other.name.clone(), b.name.clone()));
                }
            }
        }
        Ok(Self(buckets))
    }

    /// fine = [1, 2], coarse = [15, 100]; degrees 3..=14 are unassigned.
    pub fn tail_defaults() -> Self {
        Self(vec![
            DegreeBucket::new("fine", 1, 2),
            DegreeBucket::new("coarse", 15, 100),
        ])
    }

    pub fn iter(&self) -> impl Iterator<Item = &DegreeBucket> {
        self.0.iter()
    }

    pub fn get(&self, name: &str) -> Result<&DegreeBucket, BucketError> {
        self.0
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| BucketError::Unknown(name.to_owned()))
    }

    /// Bucket containing `degree`. Degree 0 never classifies: such an
    /// entity has nothing to generate from.
    pub fn classify_degree(&self, degree: u64) -> Option<&DegreeBucket> {
        if degree == 0 {
            return None;
        }
        self.0.iter().find(|b| b.contains(degree))
    }

    pub fn classify(&self, graph: &KnowledgeGraph, e: &EntityId) -> Option<&DegreeBucket> {
        self.classify_degree(graph.degree(e) as u64)
    }
}

/// How many entities to draw from a bucket: a number, or `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityCount {
    All,
    Count(usize),
}

impl Serialize for EntityCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EntityCount::All => s.serialize_str("all"),
            EntityCount::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for EntityCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(EntityCount::Count(n)),
            Raw::Word(w) if w == "all" => Ok(EntityCount::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "entity_count must be a number or \"all\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub bucket: DegreeBucket,
    pub entity_count: EntityCount,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySample {
    pub bucket: String,
    pub population: usize,
    /// Sampled ids in ascending order.
    pub entities: Vec<EntityId>,
    /// Set when more entities were requested than the bucket holds.
    pub exhausted: bool,
}

/// Members of `bucket` in id order.
pub fn bucket_members(graph: &KnowledgeGraph, bucket: &DegreeBucket) -> Vec<EntityId> {
    graph
        .subjects()
        .filter(|(_, d)| *d > 0 && bucket.contains(*d as u64))
        .map(|(e, _)| e.clone())
        .collect()
}

/// Uniform sample without replacement from the bucket's members.
///
/// Members are enumerated in id order before sampling, so the result depends
/// only on the graph contents and the `SampleSpec`.
pub fn sample_entities(graph: &KnowledgeGraph, spec: &SampleSpec) -> EntitySample {
    let members = bucket_members(graph, &spec.bucket);
    let population = members.len();
    let (mut entities, exhausted) = match spec.entity_count {
        EntityCount::All => (members, false),
        EntityCount::Count(n) if n >= population => {
            if n > population {
                log::warn!(
                    "bucket {} has {} members, fewer than the {} requested",
                    spec.bucket.name,
                    population,
                    n
                );
            }
            (members, n > population)
        }
        EntityCount::Count(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let picked = rand::seq::index::sample(&mut rng, population, n);
            (picked.into_iter().map(|i| members[i].clone()).collect(), false)
        }
    };
    entities.sort();
    EntitySample {
        bucket: spec.bucket.name.clone(),
        population,
        entities,
        exhausted,
    }
}

/// A triplet tagged with the bucket its subject was sampled from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub triplet: Triplet,
    pub bucket: String,
}

impl AsRef<Triplet> for Candidate {
    fn as_ref(&self) -> &Triplet {
        &self.triplet
    }
}

/// All triplets of the sampled entities, in entity order then property and
/// object order.
pub fn extract_candidates(graph: &KnowledgeGraph, sample: &EntitySample) -> Vec<Candidate> {
    let mut entities = sample.entities.clone();
    entities.sort();
    entities.dedup();
    entities
        .iter()
        .flat_map(|e| graph.triplets_of(e))
        .map(|triplet| Candidate {
            triplet,
            bucket: sample.bucket.clone(),
        })
        .collect()
}
