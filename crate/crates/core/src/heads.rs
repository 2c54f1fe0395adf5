//! The four prediction tasks and their canonical class orderings.
//!
//! Index 0 of every head is (surprise, male, Caucasian, 0-3), so the label
//! list `[[1,0,0,0,0,0,0],[1,0,0],[1,0,0],[1,0,0,0,0]]` reads as a surprised
//! Caucasian male aged 0-3.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Emotion,
    Gender,
    Race,
    Age,
}

pub const EMOTION_CLASSES: [&str; 7] = [
    "surprise", "fear", "disgust", "happy", "sad", "angry", "neutral",
];
pub const GENDER_CLASSES: [&str; 3] = ["male", "female", "unsure"];
pub const RACE_CLASSES: [&str; 3] = ["Caucasian", "African-American", "Asian"];
pub const AGE_CLASSES: [&str; 5] = ["0-3", "4-19", "20-39", "40-69", "70+"];

impl Head {
    /// Output order used for labels, masks, model heads and report rows.
    pub const ALL: [Head; 4] = [Head::Emotion, Head::Gender, Head::Race, Head::Age];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Emotion => "emotion",
            Head::Gender => "gender",
            Head::Race => "race",
            Head::Age => "age",
        }
    }

    /// Row label in evaluation tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Head::Race => "race/ethnicity",
            h => h.name(),
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Head::Emotion => &EMOTION_CLASSES,
            Head::Gender => &GENDER_CLASSES,
            Head::Race => &RACE_CLASSES,
            Head::Age => &AGE_CLASSES,
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn from_name(name: &str) -> Option<Head> {
        Head::ALL.into_iter().find(|h| h.name() == name)
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One-hot vector of length `classes` with a 1 at `index`.
pub fn one_hot(index: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[index] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_counts() {
        let counts: Vec<_> = Head::ALL.iter().map(|h| h.num_classes()).collect();
        assert_eq!(counts, [7, 3, 3, 5]);
    }

    #[test]
    fn index_zero_names() {
        let names: Vec<_> = Head::ALL.iter().map(|h| h.class_names()[0]).collect();
        assert_eq!(names, ["surprise", "male", "Caucasian", "0-3"]);
    }
}
