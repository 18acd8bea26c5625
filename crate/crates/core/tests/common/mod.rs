#![allow(dead_code)]

use std::collections::BTreeSet;

use tailqa_core::generate::{QaItem, TemplateMode};
use tailqa_core::kg::ObjectKind;

pub fn item(qid: &str, answer: &str, aliases: &[&str]) -> QaItem {
    QaItem {
        qid: qid.into(),
        question: format!("question {qid}?"),
        answer: answer.into(),
        aliases: aliases.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        subject: "Q1".into(),
        property: "P1".into(),
        object: "Q2".into(),
        object_kind: ObjectKind::Entity,
        bucket: "fine".into(),
        flags: vec![],
        mode: TemplateMode::FullTriplet,
        backend: "mock".into(),
    }
}
