use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Supervised selection by predicted prediction error.
    Sas,
    /// Unsupervised selection by learned multi-kernel similarity.
    Mkml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedAtlas {
    pub subject_id: usize,
    pub score: f64,
}

/// Atlases ordered best-first: ascending predicted error for
/// [`Strategy::Sas`], descending similarity for [`Strategy::Mkml`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasRanking {
    pub strategy: Strategy,
    pub entries: Vec<RankedAtlas>,
}

impl AtlasRanking {
    /// Sorts `entries` best-first, breaking ties by lower subject id.
    pub fn new(strategy: Strategy, mut entries: Vec<RankedAtlas>) -> Self {
        entries.sort_by(|a, b| {
            let by_score = match strategy {
                Strategy::Sas => a.score.total_cmp(&b.score),
                Strategy::Mkml => b.score.total_cmp(&a.score),
            };
            by_score.then(a.subject_id.cmp(&b.subject_id))
        });
        AtlasRanking { strategy, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedAtlas] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// Drops the given subject (used for leave-one-out inside a fold).
    pub fn without(&self, subject_id: usize) -> AtlasRanking {
        AtlasRanking {
            strategy: self.strategy,
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|e| e.subject_id != subject_id)
                .collect(),
        }
    }
}
