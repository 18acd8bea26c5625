//! Seeded synthetic knowledge graphs and passage corpora for tests, demos
//! and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Catalog, Entity, EntityId, Object, Property, PropertyId, Triplet};
use crate::retrieval::Passage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Entities that may appear as subjects.
    pub entities: usize,
    /// Share of entities that never appear as a subject.
    pub zero_degree_share: f64,
    /// Exponent of the power-law degree distribution.
    pub zipf_exponent: f64,
    pub max_degree: usize,
    pub distractor_passages: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            entities: 1_000,
            zero_degree_share: 0.1,
            zipf_exponent: 1.6,
            max_degree: 200,
            distractor_passages: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjectRule {
    AnyEntity,
    Class,
    Country,
    WebUrl,
    LogoFile,
    FamilyName,
    Year,
    DrivingSide,
}

const PROPERTIES: &[(&str, &str, ObjectRule)] = &[
    ("P31", "instance of", ObjectRule::Class),
    ("P17", "country", ObjectRule::Country),
    ("P27", "country of citizenship", ObjectRule::Country),
    ("P19", "place of birth", ObjectRule::AnyEntity),
    ("P276", "location", ObjectRule::AnyEntity),
    ("P740", "location of formation", ObjectRule::AnyEntity),
    ("P607", "conflict", ObjectRule::AnyEntity),
    ("P106", "occupation", ObjectRule::AnyEntity),
    ("P108", "employer", ObjectRule::AnyEntity),
    ("P69", "educated at", ObjectRule::AnyEntity),
    ("P463", "member of", ObjectRule::AnyEntity),
    ("P136", "genre", ObjectRule::AnyEntity),
    ("P166", "award received", ObjectRule::AnyEntity),
    ("P361", "part of", ObjectRule::AnyEntity),
    ("P571", "inception", ObjectRule::Year),
    ("P1622", "driving side", ObjectRule::DrivingSide),
    ("P734", "family name", ObjectRule::FamilyName),
    ("P856", "official website", ObjectRule::WebUrl),
    ("P1581", "official blog url", ObjectRule::WebUrl),
    ("P154", "logo image", ObjectRule::LogoFile),
];

const CLASSES: &[&str] = &["human", "musical group", "city", "organization", "film"];
const COUNTRIES: &[(&str, &[&str])] = &[
    ("South Korea", &["Republic of Korea"]),
    ("France", &[]),
    ("United States of America", &["USA", "United States"]),
    ("Japan", &[]),
    ("Brazil", &[]),
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ve", "ri", "ta", "mon", "zel", "ar", "ni", "bo", "shu", "den", "pra", "vi", "el", "gor",
    "sa", "tem", "qua", "lin", "ov", "ru", "ma", "fen",
];

const FILLER: &[&str] = &[
    "river", "quiet", "market", "season", "harbor", "northern", "ancient", "festival", "library", "bridge",
    "garden", "railway", "theatre", "valley", "museum", "coastal", "winter", "council", "orchestra", "stone",
];

/// A generated graph with its catalog and a passage corpus.
#[derive(Debug, Clone)]
pub struct SyntheticKg {
    pub catalog: Catalog,
    pub triplets: Vec<Triplet>,
    pub passages: Vec<Passage>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap_or(&"ka")).collect()
}

/// Degree weights proportional to `d^-s` for `d` in `1..=max`.
fn degree_distribution(max: usize, s: f64) -> Vec<f64> {
    (1..=max.max(1)).map(|d| (d as f64).powf(-s)).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticKg {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut catalog = Catalog::new();
    for (id, label, _) in PROPERTIES {
        catalog
            .insert_property(Property {
                id: PropertyId::new(*id).expect("static id"),
                label: (*label).into(),
            })
            .expect("static property");
    }

    let mut next_id = 1usize;
    let mut mint = |catalog: &mut Catalog, label: &str, aliases: Vec<String>| {
        let id = EntityId::new(format!("Q{next_id}")).expect("generated id");
        next_id += 1;
        catalog.insert_entity(Entity::new(id.clone(), label, aliases).expect("non-empty label"));
        id
    };
    let classes: Vec<EntityId> = CLASSES.iter().map(|c| mint(&mut catalog, c, vec![])).collect();
    let countries: Vec<EntityId> = COUNTRIES
        .iter()
        .map(|(c, a)| mint(&mut catalog, c, a.iter().map(|s| s.to_string()).collect()))
        .collect();
    let sides: Vec<EntityId> = ["left", "right"].iter().map(|s| mint(&mut catalog, s, vec![])).collect();

    let mut used = BTreeSet::new();
    let mut subjects = Vec::with_capacity(cfg.entities);
    let mut family = BTreeMap::new();
    for _ in 0..cfg.entities {
        let (label, last) = loop {
            let first = capitalize(&word(&mut rng));
            let last = capitalize(&word(&mut rng));
            let label = format!("{first} {last}");
            if used.insert(label.clone()) {
                break (label, last);
            }
        };
        let aliases = if rng.random_bool(0.2) {
            vec![label.split_whitespace().map(|w| &w[..1]).collect::<String>()]
        } else {
            vec![]
        };
        let id = mint(&mut catalog, &label, aliases);
        family.insert(id.clone(), last);
        subjects.push(id);
    }

    let weights = WeightedIndex::new(degree_distribution(cfg.max_degree, cfg.zipf_exponent))
        .expect("positive weights");
    let rules: Vec<(PropertyId, ObjectRule)> = PROPERTIES
        .iter()
        .map(|(id, _, r)| (PropertyId::new(*id).expect("static id"), *r))
        .collect();
    let mut triplets = Vec::new();
    for subject in &subjects {
        if rng.random_bool(cfg.zero_degree_share.clamp(0.0, 1.0)) {
            continue;
        }
        let degree = weights.sample(&mut rng) + 1;
        let mut edges: BTreeSet<(PropertyId, Object)> = BTreeSet::new();
        let mut attempts = 0;
        while edges.len() < degree && attempts < degree * 20 {
            attempts += 1;
            let (pid, rule) = if edges.is_empty() {
                rules[0].clone()
            } else {
                rules[rng.random_range(0..rules.len())].clone()
            };
            let object = match rule {
                ObjectRule::Class => Object::Entity(classes.choose(&mut rng).expect("classes").clone()),
                ObjectRule::Country => Object::Entity(countries.choose(&mut rng).expect("countries").clone()),
                ObjectRule::DrivingSide => Object::Entity(sides.choose(&mut rng).expect("sides").clone()),
                ObjectRule::AnyEntity => loop {
                    let o = subjects.choose(&mut rng).expect("subjects");
                    if o != subject {
                        break Object::Entity(o.clone());
                    }
                    if subjects.len() == 1 {
                        break Object::Entity(countries[0].clone());
                    }
                },
                ObjectRule::Year => Object::Literal(rng.random_range(1850..2020).to_string()),
                ObjectRule::FamilyName => Object::Literal(family[subject].clone()),
                ObjectRule::WebUrl => Object::Literal(format!(
                    "https://www.{}.example.org/",
                    family[subject].to_lowercase()
                )),
                ObjectRule::LogoFile => Object::Literal(format!("{}_logo.svg", family[subject].to_lowercase())),
            };
            edges.insert((pid, object));
        }
        triplets.extend(
            edges
                .into_iter()
                .map(|(p, o)| Triplet::new(subject.clone(), p, o)),
        );
    }

    let passages = build_passages(&catalog, &triplets, cfg.distractor_passages, &mut rng);
    SyntheticKg {
        catalog,
        triplets,
        passages,
    }
}

/// One passage per subject stating its facts, plus filler passages.
fn build_passages(
    catalog: &Catalog,
    triplets: &[Triplet],
    distractors: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Passage> {
    let mut by_subject: BTreeMap<&EntityId, Vec<&Triplet>> = BTreeMap::new();
    for t in triplets {
        by_subject.entry(&t.subject).or_default().push(t);
    }
    let mut passages = Vec::new();
    for (subject, facts) in by_subject {
        let Some(entity) = catalog.entity(subject) else {
            continue;
        };
        let sentences: Vec<String> = facts
            .iter()
            .filter_map(|t| {
                let p = catalog.property(&t.property)?;
                let o = catalog.object_label(&t.object)?;
                Some(format!("The {} of {} is {}.", p.label, entity.label, o))
            })
            .collect();
        passages.push(Passage {
            id: format!("doc-{:06}", passages.len()),
            title: entity.label.clone(),
            text: sentences.join(" "),
        });
    }
    for _ in 0..distractors {
        let n = rng.random_range(8..20);
        let text: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap_or(&"stone")).collect();
        passages.push(Passage {
            id: format!("doc-{:06}", passages.len()),
            title: String::new(),
            text: text.join(" "),
        });
    }
    passages
}
