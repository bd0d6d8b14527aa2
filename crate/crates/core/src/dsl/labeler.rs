//! Semi-automated labeling: scan titles for schema keywords and attach the
//! matching value and type labels to the title, asking a prompt otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::schema::{KeywordRule, LabelSchema};
use crate::model::LabelSet;
use crate::store::{StoreClient, StoreError};
use crate::title::{attach_labels, extract_labels};

#[derive(Debug, Error)]
pub enum LabelerError {
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelSource {
    KeywordMatch,
    Manual,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingOutcome {
    pub original_title: String,
    pub new_title: String,
    pub applied: LabelSet,
    pub source: LabelSource,
    /// Set when the renamed key already existed; the object was left as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<String>,
}

impl LabelingOutcome {
    pub fn changed(&self) -> bool {
        self.original_title != self.new_title
    }
}

/// Rules whose keyword occurs, case-insensitively, in the bare title.
/// Returned in schema order.
pub fn scan_title<'s>(schema: &'s LabelSchema, title: &str) -> Vec<&'s KeywordRule> {
    let bare = extract_labels(title).map(|(b, _)| b).unwrap_or_else(|_| title.to_string());
    let haystack = bare.to_lowercase();
    schema
        .rules
        .iter()
        .filter(|r| haystack.contains(&r.keyword.to_lowercase()))
        .collect()
}

/// Labels contributed by `rules`: value then type of each rule, deduplicated.
pub fn labels_for(rules: &[&KeywordRule]) -> LabelSet {
    let mut set = LabelSet::new();
    for r in rules {
        set.insert(r.value_if_keyword.clone());
        set.insert(r.type_if_keyword.clone());
    }
    set
}

/// Labels every object in `bucket`. `prompt` is called with the object's
/// title when no keyword matches; returning `None` or an empty set skips it.
pub async fn apply_labels<C, P>(
    store: &C,
    bucket: &str,
    schema: &LabelSchema,
    mut prompt: P,
) -> Result<Vec<LabelingOutcome>, LabelerError>
where
    C: StoreClient + ?Sized,
    P: FnMut(&str) -> Option<LabelSet>,
{
    let objects = store.list_objects(bucket).await?;
    let mut outcomes = Vec::with_capacity(objects.len());
    for obj in objects {
        let title = obj.key.as_str().to_string();
        let (bare, existing) = match extract_labels(&title) {
            Ok(parts) => parts,
            Err(e) => {
                tracing::warn!(bucket, key = %title, error = %e, "unparsable title; skipped");
                outcomes.push(LabelingOutcome {
                    new_title: title.clone(),
                    original_title: title,
                    applied: LabelSet::new(),
                    source: LabelSource::Skipped,
                    conflict: None,
                });
                continue;
            }
        };
        let matched = scan_title(schema, &title);
        let (applied, source) = if !matched.is_empty() {
            (labels_for(&matched), LabelSource::KeywordMatch)
        } else {
            match prompt(&title) {
                Some(ls) if !ls.is_empty() => (ls, LabelSource::Manual),
                _ => (LabelSet::new(), LabelSource::Skipped),
            }
        };

        let mut merged = existing.clone();
        merged.extend(applied.iter().cloned());
        let mut outcome = LabelingOutcome {
            original_title: title.clone(),
            new_title: title.clone(),
            applied,
            source,
            conflict: None,
        };
        if !merged.same_members(&existing) {
            let target = attach_labels(&bare, &merged);
            match store.rename_object(bucket, &title, &target).await {
                Ok(_) => outcome.new_title = target,
                Err(StoreError::ObjectExists(_)) => outcome.conflict = Some(target),
                Err(e) => return Err(e.into()),
            }
        }
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_schema;
    use crate::model::{Label, Region, ReplicaStatus, Timestamp};
    use crate::store::{ObjectStore, StoreConfig};
    use bytes::Bytes;

    const SCHEMA: &str = "\
values { low, high, personal }
types { Application, Customer, Public }
keywords { CV, order }
when CV -> value personal type Application
when order -> value high type Customer
";

    fn schema() -> LabelSchema {
        parse_schema(SCHEMA).unwrap()
    }

    fn store_with(keys: &[&str]) -> ObjectStore {
        let s = ObjectStore::new(StoreConfig { start: Timestamp(10), ..StoreConfig::default() });
        s.create_bucket("b", Region::new("eu-west-1").unwrap()).unwrap();
        for k in keys {
            s.put_object("b", k, Bytes::from(k.to_string())).unwrap();
        }
        s
    }

    fn keys(s: &ObjectStore) -> Vec<String> {
        s.list_objects("b").unwrap().into_iter().map(|o| o.key.to_string()).collect()
    }

    fn no_prompt(_: &str) -> Option<LabelSet> {
        None
    }

    #[test]
    fn scan_is_case_insensitive_and_ordered() {
        let s = schema();
        let hits = scan_title(&s, "smith_CV.pdf");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].keyword, "CV");
        assert_eq!(scan_title(&s, "smith_cv.pdf").len(), 1);
        let hits = scan_title(&s, "q3_order.pdf");
        assert_eq!(labels_for(&hits).to_header_value(), "high,Customer");
        assert!(scan_title(&s, "notes.txt").is_empty());
        let both: Vec<_> = scan_title(&s, "order_cv.pdf").iter().map(|r| r.keyword.as_str()).collect();
        assert_eq!(both, ["CV", "order"]);
    }

    #[test]
    fn scan_ignores_existing_label_text() {
        let s = parse_schema("values{v}types{T}keywords{secret}when secret -> value v type T").unwrap();
        assert!(scan_title(&s, "memo[secret].txt").is_empty());
    }

    #[tokio::test]
    async fn keyword_match_renames_object() {
        let store = store_with(&["smith_cv.pdf", "q3_order.pdf"]);
        let out = apply_labels(&store, "b", &schema(), no_prompt).await.unwrap();
        assert_eq!(out.len(), 2);
        let cv = out.iter().find(|o| o.original_title == "smith_cv.pdf").unwrap();
        assert_eq!(cv.new_title, "smith_cv[personal][Application].pdf");
        assert_eq!(cv.source, LabelSource::KeywordMatch);
        let order = out.iter().find(|o| o.original_title == "q3_order.pdf").unwrap();
        assert_eq!(order.new_title, "q3_order[high][Customer].pdf");
        assert_eq!(keys(&store), ["q3_order[high][Customer].pdf", "smith_cv[personal][Application].pdf"]);
        let rec = store.get_object("b", "smith_cv[personal][Application].pdf").unwrap();
        assert_eq!(rec.content, "smith_cv.pdf");
        assert_eq!(rec.created_at, Timestamp(10));
        assert_eq!(rec.replica_status, ReplicaStatus::Source);
    }

    #[tokio::test]
    async fn relabeling_is_idempotent() {
        let store = store_with(&["smith_cv[personal][Application].pdf"]);
        let out = apply_labels(&store, "b", &schema(), no_prompt).await.unwrap();
        assert!(!out[0].changed());
        assert_eq!(out[0].source, LabelSource::KeywordMatch);
        assert_eq!(keys(&store), ["smith_cv[personal][Application].pdf"]);
    }

    #[tokio::test]
    async fn existing_labels_are_kept() {
        let store = store_with(&["smith_cv[urgent].pdf"]);
        apply_labels(&store, "b", &schema(), no_prompt).await.unwrap();
        assert_eq!(keys(&store), ["smith_cv[urgent][personal][Application].pdf"]);
    }

    #[tokio::test]
    async fn manual_prompt_and_skip() {
        let store = store_with(&["notes.txt", "misc.bin"]);
        let mut asked = Vec::new();
        let out = apply_labels(&store, "b", &schema(), |title: &str| {
            asked.push(title.to_string());
            (title == "notes.txt").then(|| [Label::new("public").unwrap()].into_iter().collect())
        })
        .await
        .unwrap();
        assert_eq!(asked, ["misc.bin", "notes.txt"]);
        let notes = out.iter().find(|o| o.original_title == "notes.txt").unwrap();
        assert_eq!(notes.new_title, "notes[public].txt");
        assert_eq!(notes.source, LabelSource::Manual);
        let misc = out.iter().find(|o| o.original_title == "misc.bin").unwrap();
        assert_eq!(misc.source, LabelSource::Skipped);
        assert!(!misc.changed());
    }

    #[tokio::test]
    async fn rename_collision_is_flagged() {
        let store = store_with(&["smith_cv.pdf", "smith_cv[personal][Application].pdf"]);
        let out = apply_labels(&store, "b", &schema(), no_prompt).await.unwrap();
        let plain = out.iter().find(|o| o.original_title == "smith_cv.pdf").unwrap();
        assert_eq!(plain.conflict.as_deref(), Some("smith_cv[personal][Application].pdf"));
        assert!(!plain.changed());
        assert_eq!(keys(&store).len(), 2);
    }

    #[tokio::test]
    async fn missing_bucket_is_an_error() {
        let store = store_with(&[]);
        assert!(apply_labels(&store, "nope", &schema(), no_prompt).await.is_err());
    }
}
