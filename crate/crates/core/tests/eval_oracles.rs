mod common;

use proptest::prelude::*;
use tailqa_core::backend::{EchoGoldBackend, MockQuestionBackend};
use tailqa_core::eval::{
    answer_dataset, exact_match, import_error_annotations, score, Annotation, AnswerMode, AnswerTemplate,
    ErrorCategory, Prediction,
};
use tailqa_core::generate::{split_outcomes, Generator, PromptTemplate};
use tailqa_core::kg::KnowledgeGraph;
use tailqa_core::sampler::{extract_candidates, sample_entities, BucketSet, EntityCount, SampleSpec};
use tailqa_core::synthetic::{generate, SyntheticConfig};

use common::item;

fn surface() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["the", "a", "Seoul", "korea", "South", "WW2", "WWII", "war", "II", "-", "."]),
        0..5,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn adding_aliases_never_flips_correct(
        pred in surface(),
        answer in surface(),
        aliases in prop::collection::vec(surface(), 0..3),
        extra in prop::collection::vec(surface(), 0..3),
    ) {
        let base: Vec<&str> = std::iter::once(answer.as_str()).chain(aliases.iter().map(String::as_str)).collect();
        let grown: Vec<&str> = base.iter().copied().chain(extra.iter().map(String::as_str)).collect();
        if exact_match(&pred, base.iter().copied()) {
            prop_assert!(exact_match(&pred, grown.iter().copied()));
        }
    }
}

#[test]
fn alias_rescues_ww2() {
    let it = item("q1", "World War II", &["WWII", "WW2", "Second World War"]);
    let preds = vec![Prediction {
        qid: "q1".into(),
        prediction: "WW2".into(),
        context_passage: None,
        mode: AnswerMode::ClosedBook,
        backend: "test".into(),
        flags: vec![],
    }];
    let (records, report) = score("d", &[it], &preds);
    assert!(records[0].correct);
    assert_eq!(records[0].matched.as_deref(), Some("WW2"));
    assert_eq!(report.accuracy, 1.0);
}

#[test]
fn granularity_miss_stays_incorrect() {
    let it = item("q1", "South Korea", &["Republic of Korea"]);
    let preds = vec![Prediction {
        qid: "q1".into(),
        prediction: "Seoul".into(),
        context_passage: None,
        mode: AnswerMode::ClosedBook,
        backend: "test".into(),
        flags: vec![],
    }];
    let (records, _) = score("d", &[it], &preds);
    assert!(!records[0].correct);
}

#[test]
fn echo_gold_scores_one_on_generated_dataset() {
    let kg = generate(&SyntheticConfig {
        entities: 400,
        ..SyntheticConfig::default()
    });
    let graph = KnowledgeGraph::from_triplets(kg.triplets.clone());
    let buckets = BucketSet::tail_defaults();
    let mut candidates = Vec::new();
    for bucket in buckets.iter() {
        let sample = sample_entities(
            &graph,
            &SampleSpec {
                bucket: bucket.clone(),
                entity_count: EntityCount::Count(40),
                seed: 11,
            },
        );
        candidates.extend(extract_candidates(&graph, &sample));
    }
    let generator = Generator {
        template: &PromptTemplate::default(),
        catalog: &kg.catalog,
        backend: &MockQuestionBackend,
        attempts: 1,
    };
    let (items, failures) = split_outcomes(generator.generate_all(&candidates));
    assert!(failures.is_empty());
    assert!(items.len() > 100);
    let echo = EchoGoldBackend::from_items(&items);
    let preds = answer_dataset(&items, &echo, &AnswerTemplate::default(), AnswerMode::ClosedBook, None, 1);
    let (_, report) = score("synthetic", &items, &preds);
    assert_eq!(report.correct, items.len());
    assert_eq!(report.accuracy, 1.0);
}

#[test]
fn table_split_reproduced_exactly() {
    let items: Vec<_> = (0..100).map(|i| item(&format!("q{i:03}"), "gold", &[])).collect();
    let (mut records, _) = score("d", &items, &[]);
    let split = [
        (ErrorCategory::Incorrect, 45),
        (ErrorCategory::Granularity, 19),
        (ErrorCategory::IncorrectQuestion, 12),
        (ErrorCategory::ExactMatch, 9),
        (ErrorCategory::MultipleAnswers, 3),
        (ErrorCategory::Other, 12),
    ];
    let mut annotations = Vec::new();
    for (category, n) in split {
        for _ in 0..n {
            annotations.push(Annotation {
                qid: format!("q{:03}", annotations.len()),
                category,
            });
        }
    }
    let dist = import_error_annotations(&mut records, &annotations).unwrap();
    assert_eq!(dist.annotated, 100);
    for (category, n) in split {
        assert_eq!(dist.categories[&category].count, n);
        assert_eq!(dist.ratio(category), n as f64 / 100.0);
    }
}
