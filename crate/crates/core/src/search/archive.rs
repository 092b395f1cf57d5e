//! Two-objective Pareto archive: FLOPS minimised, score maximised.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch_space::ArchEncoding;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchiveError {
    #[error("eval_id {0} is already in the history")]
    Duplicate(u64),
    #[error("cannot select a parent from an empty archive")]
    Empty,
}

/// An evaluated (or failed) genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub eval_id: u64,
    pub arch: ArchEncoding,
    pub flops: u64,
    /// `None` when evaluation failed.
    pub score: Option<f64>,
    pub parent: Option<u64>,
    pub birth_step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Candidate {
    pub fn objectives(&self) -> Option<(u64, f64)> {
        self.score.map(|s| (self.flops, s))
    }
}

/// `a` dominates `b`: no more FLOPS, no lower score, strictly better in one.
pub fn dominates(a: (u64, f64), b: (u64, f64)) -> bool {
    a.0 <= b.0 && a.1 >= b.1 && (a.0 < b.0 || a.1 > b.1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    members: Vec<Candidate>,
    history: Vec<Candidate>,
    #[serde(skip)]
    ids: HashSet<u64>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds an archive by inserting `history` in order.
    pub fn replay(history: impl IntoIterator<Item = Candidate>) -> Result<Self, ArchiveError> {
        let mut archive = Self::new();
        for c in history {
            archive.insert(c)?;
        }
        Ok(archive)
    }

    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn history(&self) -> &[Candidate] {
        &self.history
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains_id(&self, eval_id: u64) -> bool {
        self.ids.contains(&eval_id)
    }

    /// Records `candidate` in the history and, if it is evaluated and not
    /// dominated by any member, adds it to the front and evicts members it
    /// dominates. Returns whether it joined the front.
    pub fn insert(&mut self, candidate: Candidate) -> Result<bool, ArchiveError> {
        if !self.ids.insert(candidate.eval_id) {
            return Err(ArchiveError::Duplicate(candidate.eval_id));
        }
        let joined = match candidate.objectives() {
            Some(obj) if !self.members.iter().any(|m| dominates(m.objectives().unwrap(), obj)) => {
                self.members.retain(|m| !dominates(obj, m.objectives().unwrap()));
                self.members.push(candidate.clone());
                true
            }
            _ => false,
        };
        self.history.push(candidate);
        Ok(joined)
    }

    /// Uniform draw from the current front.
    pub fn select_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Candidate, ArchiveError> {
        if self.members.is_empty() {
            return Err(ArchiveError::Empty);
        }
        Ok(&self.members[rng.random_range(0..self.members.len())])
    }

    /// Front members sorted by FLOPS, then eval_id.
    pub fn sorted_front(&self) -> Vec<&Candidate> {
        let mut front: Vec<&Candidate> = self.members.iter().collect();
        front.sort_by(|a, b| a.flops.cmp(&b.flops).then(a.eval_id.cmp(&b.eval_id)));
        front
    }

    /// Area dominated by the front inside `[0, ref_flops] x [0, 1]`
    /// (FLOPS to the left, score upwards).
    pub fn hypervolume(&self, ref_flops: u64) -> f64 {
        let mut pts: Vec<(u64, f64)> = self
            .members
            .iter()
            .filter_map(Candidate::objectives)
            .filter(|&(f, _)| f < ref_flops)
            .collect();
        pts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut area = 0.0;
        let mut prev_score = 0.0;
        for (f, s) in pts {
            if s > prev_score {
                area += (ref_flops - f) as f64 * (s - prev_score);
                prev_score = s;
            }
        }
        area
    }

    /// Checks both archive invariants; used by tests and snapshot loading.
    pub fn check_invariants(&self) -> Result<(), String> {
        for a in &self.members {
            let oa = a.objectives().ok_or_else(|| format!("member {} has no score", a.eval_id))?;
            for b in &self.members {
                if dominates(oa, b.objectives().unwrap_or((0, 0.0))) {
                    return Err(format!("member {} dominates member {}", a.eval_id, b.eval_id));
                }
            }
            if !self.history.iter().any(|h| h == a) {
                return Err(format!("member {} is missing from the history", a.eval_id));
            }
        }
        let mut seen = HashSet::new();
        for h in &self.history {
            if !seen.insert(h.eval_id) {
                return Err(format!("eval_id {} appears twice in the history", h.eval_id));
            }
        }
        Ok(())
    }

    /// Restores the id index after deserialisation.
    pub(crate) fn reindex(&mut self) {
        self.ids = self.history.iter().map(|c| c.eval_id).collect();
    }

    pub(crate) fn from_parts(members: Vec<Candidate>, history: Vec<Candidate>) -> Self {
        let mut archive = Self {
            members,
            history,
            ids: HashSet::new(),
        };
        archive.reindex();
        archive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch_space::{parse_backbone, FusionSpec};
    use crate::point_blend::BlendParamSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn arch() -> ArchEncoding {
        ArchEncoding::new(
            parse_backbone("BB_64_13_[5,9]_[7,12]").unwrap(),
            FusionSpec {
                layers: vec![],
                channels: 128,
                heads_at: BTreeSet::from([1]),
            },
            BlendParamSet::defaults([1], (512, 288)),
        )
        .unwrap()
    }

    pub(crate) fn cand(eval_id: u64, flops: u64, score: f64) -> Candidate {
        Candidate {
            eval_id,
            arch: arch(),
            flops,
            score: Some(score),
            parent: None,
            birth_step: eval_id,
            error: None,
        }
    }

    fn objectives(a: &ParetoArchive) -> Vec<(u64, f64)> {
        let mut v: Vec<_> = a.members().iter().filter_map(Candidate::objectives).collect();
        v.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        v
    }

    #[test]
    fn dominated_member_is_evicted() {
        let mut a = ParetoArchive::new();
        assert!(a.insert(cand(0, 2, 0.7)).unwrap());
        assert!(a.insert(cand(1, 1, 0.8)).unwrap());
        assert_eq!(objectives(&a), vec![(1, 0.8)]);
        assert_eq!(a.history().len(), 2);
    }

    #[test]
    fn incomparable_members_coexist() {
        let mut a = ParetoArchive::new();
        a.insert(cand(0, 1, 0.8)).unwrap();
        assert!(a.insert(cand(1, 3, 0.9)).unwrap());
        assert_eq!(objectives(&a), vec![(1, 0.8), (3, 0.9)]);
        assert!(!a.insert(cand(2, 3, 0.85)).unwrap());
    }

    #[test]
    fn equal_objectives_both_kept() {
        let mut a = ParetoArchive::new();
        a.insert(cand(0, 5, 0.5)).unwrap();
        assert!(a.insert(cand(1, 5, 0.5)).unwrap());
        assert_eq!(a.members().len(), 2);
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut a = ParetoArchive::new();
        a.insert(cand(0, 1, 0.5)).unwrap();
        assert_eq!(a.insert(cand(0, 2, 0.9)), Err(ArchiveError::Duplicate(0)));
        assert_eq!(a.history().len(), 1);
    }

    #[test]
    fn failed_candidates_only_enter_history() {
        let mut a = ParetoArchive::new();
        let mut c = cand(0, 1, 0.5);
        c.score = None;
        c.error = Some("boom".into());
        assert!(!a.insert(c).unwrap());
        assert!(a.is_empty());
        assert_eq!(a.history().len(), 1);
    }

    #[test]
    fn select_parent_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = ParetoArchive::new();
        assert_eq!(a.select_parent(&mut rng).unwrap_err(), ArchiveError::Empty);

        let mut a = ParetoArchive::new();
        a.insert(cand(4, 1, 0.5)).unwrap();
        assert_eq!(a.select_parent(&mut rng).unwrap().eval_id, 4);

        let mut a = ParetoArchive::new();
        for (i, (f, s)) in [(1, 0.1), (2, 0.2), (3, 0.3), (4, 0.4), (5, 0.05), (6, 0.35)].into_iter().enumerate() {
            a.insert(cand(i as u64, f, s)).unwrap();
        }
        let front: Vec<u64> = a.members().iter().map(|c| c.eval_id).collect();
        assert_eq!(front.len(), 4);
        let draws = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts.entry(a.select_parent(&mut rng).unwrap().eval_id).or_insert(0u32) += 1;
        }
        let k = front.len() as f64;
        let p = 1.0 / k;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for id in &front {
            let c = counts[id] as f64;
            assert!((c - draws as f64 * p).abs() <= 3.0 * sd, "id {id}: {c}");
        }
        assert!(!counts.contains_key(&4) && !counts.contains_key(&5));
    }

    #[test]
    fn hypervolume_examples() {
        let mut a = ParetoArchive::new();
        a.insert(cand(0, 2, 0.5)).unwrap();
        assert_eq!(a.hypervolume(10), 8.0 * 0.5);
        a.insert(cand(1, 6, 0.75)).unwrap();
        assert_eq!(a.hypervolume(10), 8.0 * 0.5 + 4.0 * 0.25);
    }

    #[test]
    fn random_insertions_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = ParetoArchive::new();
        let mut hv = 0.0;
        for i in 0..3000u64 {
            let c = cand(i, rng.random_range(0..500), (rng.random_range(0..400) as f64) / 400.0);
            a.insert(c).unwrap();
            a.check_invariants().unwrap();
            let now = a.hypervolume(1000);
            assert!(now >= hv);
            hv = now;
        }
        let hist: Vec<(u64, f64)> = a.history().iter().filter_map(Candidate::objectives).collect();
        let mut brute: Vec<(u64, f64)> = hist
            .iter()
            .copied()
            .filter(|&p| !hist.iter().any(|&q| dominates(q, p)))
            .collect();
        brute.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        assert_eq!(objectives(&a), brute);
        let replayed = ParetoArchive::replay(a.history().to_vec()).unwrap();
        assert_eq!(replayed.members(), a.members());
    }
}
