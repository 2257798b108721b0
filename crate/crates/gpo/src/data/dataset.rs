use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EmbeddingStore;
use crate::error::{validation_err, Result};

/// Preferences whose sum is within this of 1 are renormalized on load.
const SUM_TOLERANCE: f64 = 1e-4;

/// On-disk question record of a group dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub ordinal: bool,
    pub options: Vec<String>,
    pub preferences: Vec<f64>,
    pub embedding_refs: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_ordinals: Option<Vec<u32>>,
}

/// On-disk group dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    pub group_id: String,
    pub questions: Vec<QuestionRecord>,
}

/// One answer option of one question.
#[derive(Clone, Debug, PartialEq)]
pub struct Viewpoint {
    pub option_index: usize,
    pub embedding_ref: u32,
    pub option_ordinal: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionBlock {
    pub question_id: String,
    pub options: Vec<String>,
    pub viewpoints: Vec<Viewpoint>,
    /// The group's answer distribution; sums to 1.
    pub preferences: Vec<f64>,
    pub ordinal: bool,
}

impl QuestionBlock {
    pub fn n_options(&self) -> usize {
        self.viewpoints.len()
    }

    /// Ordinal position (1-based) of each option, when the question is ordinal.
    pub fn ordinals(&self) -> Option<Vec<u32>> {
        if !self.ordinal {
            return None;
        }
        self.viewpoints.iter().map(|v| v.option_ordinal).collect()
    }
}

/// Every question block answered by one group.
#[derive(Clone, Debug)]
pub struct GroupDataset {
    pub group_id: String,
    pub questions: Vec<QuestionBlock>,
    pub store: Arc<EmbeddingStore>,
}

impl GroupDataset {
    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.store.dim()
    }

    pub fn embeddings(&self, q: &QuestionBlock) -> Vec<Vec<f32>> {
        q.viewpoints
            .iter()
            .map(|v| self.store.vector(v.embedding_ref as usize).to_vec())
            .collect()
    }

    pub fn from_file_record(file: GroupFile, store: Arc<EmbeddingStore>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut questions = Vec::with_capacity(file.questions.len());
        for rec in file.questions {
            if !seen.insert(rec.question_id.clone()) {
                return validation_err(format!(
                    "group {}: duplicate question_id {}",
                    file.group_id, rec.question_id
                ));
            }
            questions.push(validate_question(rec, &store)?);
        }
        Ok(GroupDataset {
            group_id: file.group_id,
            questions,
            store,
        })
    }

    pub fn from_json(json: &str, store: Arc<EmbeddingStore>) -> Result<Self> {
        Self::from_file_record(serde_json::from_str(json)?, store)
    }

    pub fn to_file_record(&self) -> GroupFile {
        GroupFile {
            group_id: self.group_id.clone(),
            questions: self
                .questions
                .iter()
                .map(|q| QuestionRecord {
                    question_id: q.question_id.clone(),
                    ordinal: q.ordinal,
                    options: q.options.clone(),
                    preferences: q.preferences.clone(),
                    embedding_refs: q.viewpoints.iter().map(|v| v.embedding_ref).collect(),
                    option_ordinals: q.ordinals(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file_record())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

fn validate_question(rec: QuestionRecord, store: &EmbeddingStore) -> Result<QuestionBlock> {
    let id = &rec.question_id;
    let t = rec.preferences.len();
    if t < 2 {
        return validation_err(format!("question {id}: {t} options, at least 2 required"));
    }
    if rec.options.len() != t || rec.embedding_refs.len() != t {
        return validation_err(format!(
            "question {id}: {} options, {t} preferences and {} embedding refs disagree",
            rec.options.len(),
            rec.embedding_refs.len()
        ));
    }
    if let Some(&r) = rec.embedding_refs.iter().find(|&&r| r as usize >= store.count()) {
        return validation_err(format!(
            "question {id}: unknown embedding_ref {r} (store holds {})",
            store.count()
        ));
    }
    if let Some(p) = rec.preferences.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return validation_err(format!("question {id}: negative or non-finite preference {p}"));
    }
    let total: f64 = rec.preferences.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return validation_err(format!("question {id}: preferences sum to {total}, not 1"));
    }
    let preferences: Vec<f64> = rec.preferences.iter().map(|p| p / total).collect();
    let ordinals = match (&rec.option_ordinals, rec.ordinal) {
        (Some(o), _) if o.len() != t => {
            return validation_err(format!("question {id}: {} option_ordinals for {t} options", o.len()))
        }
        (Some(o), true) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (1..=t as u32).collect::<Vec<_>>() {
                return validation_err(format!(
                    "question {id}: option_ordinals {o:?} are not a permutation of 1..{t}"
                ));
            }
            Some(o.clone())
        }
        (None, true) => Some((1..=t as u32).collect()),
        (_, false) => None,
    };
    let viewpoints = (0..t)
        .map(|i| Viewpoint {
            option_index: i,
            embedding_ref: rec.embedding_refs[i],
            option_ordinal: ordinals.as_ref().map(|o| o[i]),
        })
        .collect();
    Ok(QuestionBlock {
        question_id: rec.question_id,
        options: rec.options,
        viewpoints,
        preferences,
        ordinal: rec.ordinal,
    })
}

pub fn load_group_dataset(path: impl AsRef<Path>, store: Arc<EmbeddingStore>) -> Result<GroupDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    GroupDataset::from_json(&text, store)
}

/// Normalizes raw response counts into a distribution.
pub fn build_preference_vector(raw_counts: &[f64]) -> Result<Vec<f64>> {
    if let Some(c) = raw_counts.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return validation_err(format!("negative or non-finite count {c}"));
    }
    let total: f64 = raw_counts.iter().sum();
    if total <= 0.0 {
        return validation_err("counts must include at least one positive value");
    }
    Ok(raw_counts.iter().map(|c| c / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> Arc<EmbeddingStore> {
        Arc::new(EmbeddingStore::new(2, (0..16).map(|i| i as f32).collect()).unwrap())
    }

    fn json(prefs: &str, refs: &str, options: usize) -> String {
        let opts: Vec<String> = (0..options).map(|i| format!("\"o{i}\"")).collect();
        format!(
            r#"{{"group_id":"g","questions":[{{"question_id":"q1","ordinal":false,
            "options":[{}],"preferences":{prefs},"embedding_refs":{refs}}}]}}"#,
            opts.join(",")
        )
    }

    #[test]
    fn accepts_percentages_that_sum_to_one() {
        let ds = GroupDataset::from_json(&json("[0.25,0.35,0.40]", "[0,1,2]", 3), store()).unwrap();
        assert_eq!(ds.questions[0].n_options(), 3);
        let total: f64 = ds.questions[0].preferences.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_sum_far_from_one() {
        let err = GroupDataset::from_json(&json("[0.5,0.6]", "[0,1]", 2), store()).unwrap_err();
        assert!(err.to_string().contains("sum"));
    }

    #[test]
    fn renormalizes_within_tolerance() {
        let ds = GroupDataset::from_json(&json("[0.33333,0.33333,0.33334]", "[0,1,2]", 3), store()).unwrap();
        let total: f64 = ds.questions[0].preferences.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let ds = GroupDataset::from_json(&json("[0.33333,0.33333,0.33333]", "[0,1,2]", 3), store()).unwrap();
        let total: f64 = ds.questions[0].preferences.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_ref_single_option_and_negative() {
        assert!(GroupDataset::from_json(&json("[0.5,0.5]", "[0,99]", 2), store()).is_err());
        assert!(GroupDataset::from_json(&json("[1.0]", "[0]", 1), store()).is_err());
        assert!(GroupDataset::from_json(&json("[1.2,-0.2]", "[0,1]", 2), store()).is_err());
    }

    #[test]
    fn rejects_duplicate_question_ids() {
        let q = r#"{"question_id":"q1","ordinal":false,"options":["a","b"],"preferences":[0.5,0.5],"embedding_refs":[0,1]}"#;
        let s = format!(r#"{{"group_id":"g","questions":[{q},{q}]}}"#);
        let err = GroupDataset::from_json(&s, store()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn ordinal_defaults_and_permutation_check() {
        let base = r#"{"group_id":"g","questions":[{"question_id":"q","ordinal":true,"options":["a","b","c"],"preferences":[0.2,0.3,0.5],"embedding_refs":[0,1,2]ORD}]}"#;
        let ds = GroupDataset::from_json(&base.replace("ORD", ""), store()).unwrap();
        assert_eq!(ds.questions[0].ordinals(), Some(vec![1, 2, 3]));
        let ds = GroupDataset::from_json(&base.replace("ORD", r#","option_ordinals":[3,1,2]"#), store()).unwrap();
        assert_eq!(ds.questions[0].ordinals(), Some(vec![3, 1, 2]));
        assert!(GroupDataset::from_json(&base.replace("ORD", r#","option_ordinals":[1,1,2]"#), store()).is_err());
    }

    #[test]
    fn preference_vector_normalization() {
        assert_eq!(build_preference_vector(&[10.0, 30.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(build_preference_vector(&[7.0]).unwrap(), vec![1.0]);
        let p = build_preference_vector(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(build_preference_vector(&[0.0, 0.0]).is_err());
    }
}
