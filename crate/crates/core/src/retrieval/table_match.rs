//! Similarity of two serialized infoboxes: field-type F1 plus a tenth of
//! value-unigram F1.
//!
//! An infobox is whitespace-separated `field:value` tokens, possibly over
//! several lines. The field type drops a trailing `_<digits>` position
//! suffix, so `name_1:john name_2:smith` has the single field type `name`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub const VALUE_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Infobox {
    pub fields: BTreeSet<String>,
    pub values: BTreeSet<String>,
}

fn field_type(field: &str) -> &str {
    match field.rsplit_once('_') {
        Some((head, tail)) if !head.is_empty() && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => head,
        _ => field,
    }
}

pub fn parse_infobox(text: &str) -> Result<Infobox> {
    let mut ib = Infobox::default();
    for (lineno, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            let (field, value) = tok.split_once(':').filter(|(f, _)| !f.is_empty()).ok_or_else(|| {
                Error::Format(format!("infobox line {}: token {tok:?} is not field:value", lineno + 1))
            })?;
            ib.fields.insert(field_type(field).to_string());
            if !value.is_empty() {
                ib.values.insert(value.to_string());
            }
        }
    }
    Ok(ib)
}

fn set_f1(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(b).count() as f64;
    2.0 * common / (a.len() + b.len()) as f64
}

pub fn infobox_similarity(a: &Infobox, b: &Infobox) -> f64 {
    set_f1(&a.fields, &b.fields) + VALUE_WEIGHT * set_f1(&a.values, &b.values)
}

pub fn table_match(a: &str, b: &str) -> Result<f64> {
    Ok(infobox_similarity(&parse_infobox(a)?, &parse_infobox(b)?))
}
