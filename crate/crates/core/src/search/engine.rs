//! Mutation-driven search loop over a pool of evaluation workers.
//!
//! Every step draws a parent uniformly from the current front, mutates one
//! part of its genome (backbone, fusion or blend parameters), evaluates the
//! child and offers it to the archive. A single consumer owns the archive;
//! workers only read a copy of the front.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex, RwLock};
use std::thread;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::archive::{ArchiveError, Candidate, ParetoArchive};
use super::evaluator::Evaluator;
use crate::arch_space::{
    mutate_backbone, mutate_fusion, ArchEncoding, ArchError, FusionSpec, MutationConfig, SpaceConfig,
};
use crate::cost_model::{candidate_cost, CostConfig, CostError};
use crate::point_blend::BlendParamSpace;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("invalid search config: {0}")]
    Config(String),
}

/// Relative weights of the three mutation families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationProbs {
    pub backbone: f64,
    pub fusion: f64,
    pub blend: f64,
}

impl MutationProbs {
    /// For expensive (training) evaluators.
    pub const EXPENSIVE: Self = Self {
        backbone: 0.4,
        fusion: 0.3,
        blend: 0.3,
    };
    /// Post-processing only.
    pub const BLEND_ONLY: Self = Self {
        backbone: 0.0,
        fusion: 0.0,
        blend: 1.0,
    };
}

impl Default for MutationProbs {
    fn default() -> Self {
        Self::EXPENSIVE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Evaluations after the initial population.
    pub budget: u64,
    pub initial_population: usize,
    pub workers: usize,
    pub seed: u64,
    pub mutation: MutationProbs,
    pub backbone_mutation: MutationConfig,
    pub space: SpaceConfig,
    pub cost: CostConfig,
    pub blend_space: BlendParamSpace,
    /// Redraws allowed when a deterministic evaluator would see a genome
    /// twice; after that a random genome is used.
    pub max_redraws: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let cost = CostConfig::default();
        Self {
            budget: 100,
            initial_population: 16,
            workers: 1,
            seed: 0,
            mutation: MutationProbs::default(),
            backbone_mutation: MutationConfig::default(),
            space: SpaceConfig::default(),
            blend_space: BlendParamSpace::for_image(cost.resolution),
            cost,
            max_redraws: 32,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        self.space.validate()?;
        self.blend_space
            .validate()
            .map_err(|e| SearchError::Config(e.to_string()))?;
        let p = self.mutation;
        if [p.backbone, p.fusion, p.blend].iter().any(|v| *v < 0.0 || !v.is_finite())
            || p.backbone + p.fusion + p.blend <= 0.0
        {
            return Err(SearchError::Config(format!("bad mutation probabilities {p:?}")));
        }
        if self.workers == 0 {
            return Err(SearchError::Config("need at least one worker".into()));
        }
        Ok(())
    }
}

/// Uniformly random genome inside the configured space.
pub fn random_genome<R: Rng + ?Sized>(config: &SearchConfig, rng: &mut R) -> ArchEncoding {
    let backbone = config.space.random_backbone(rng);
    let fusion = FusionSpec::random(config.space.fusion_layers, backbone.stage_count(), rng);
    let blend = config.blend_space.default_params(fusion.heads_at.iter().copied());
    ArchEncoding {
        backbone,
        fusion,
        blend,
    }
}

/// Applies one mutation from the family drawn according to
/// `config.mutation`, repairing the other parts if the stage count or head
/// set changed.
pub fn mutate_genome<R: Rng + ?Sized>(
    arch: &ArchEncoding,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<ArchEncoding, SearchError> {
    let p = config.mutation;
    let draw = rng.random::<f64>() * (p.backbone + p.fusion + p.blend);
    let mut next = arch.clone();
    let image = config.blend_space.image_size;
    if draw < p.backbone {
        next.backbone = mutate_backbone(&arch.backbone, &config.space, &config.backbone_mutation, rng)?;
        next.fusion.fit_to_stages(next.backbone.stage_count());
        next.blend.fit_to_levels(&next.fusion.heads_at, image);
    } else if draw < p.backbone + p.fusion {
        next.fusion = mutate_fusion(&arch.fusion, arch.backbone.stage_count(), rng);
        next.blend.fit_to_levels(&next.fusion.heads_at, image);
    } else {
        next.blend = config.blend_space.perturb(&arch.blend, rng);
    }
    Ok(next)
}

fn genome_key(arch: &ArchEncoding) -> String {
    serde_json::to_string(arch).expect("genomes serialise")
}

fn worker_rng(seed: u64, resume_offset: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ resume_offset.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Produces the genome for one evaluation slot.
struct Generator<'a> {
    config: &'a SearchConfig,
    dedupe: bool,
}

impl Generator<'_> {
    fn child(
        &self,
        front: &[Candidate],
        seen: &Mutex<HashSet<String>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ArchEncoding, Option<u64>), SearchError> {
        let mut last = None;
        for _ in 0..=self.config.max_redraws {
            let (arch, parent) = if front.is_empty() {
                (random_genome(self.config, rng), None)
            } else {
                let parent = &front[rng.random_range(0..front.len())];
                (mutate_genome(&parent.arch, self.config, rng)?, Some(parent.eval_id))
            };
            if !self.dedupe || seen.lock().expect("seen lock").insert(genome_key(&arch)) {
                return Ok((arch, parent));
            }
            last = Some((arch, parent));
        }
        // everything near the front has been seen; jump somewhere new
        for _ in 0..=self.config.max_redraws {
            let arch = random_genome(self.config, rng);
            if seen.lock().expect("seen lock").insert(genome_key(&arch)) {
                return Ok((arch, None));
            }
        }
        Ok(last.expect("at least one draw"))
    }
}

fn evaluate_slot(
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    eval_id: u64,
    birth_step: u64,
    arch: ArchEncoding,
    parent: Option<u64>,
) -> Result<Candidate, SearchError> {
    let flops = candidate_cost(&arch, &config.cost)?.total_flops;
    let (score, error) = match evaluator.evaluate(eval_id, &arch) {
        Ok(s) if (0.0..=1.0).contains(&s) => (Some(s), None),
        Ok(s) => (None, Some(format!("score {s} outside [0, 1]"))),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Candidate {
        eval_id,
        arch,
        flops,
        score,
        parent,
        birth_step,
        error,
    })
}

/// Runs a fresh search.
pub fn run_search(config: &SearchConfig, evaluator: &dyn Evaluator) -> Result<ParetoArchive, SearchError> {
    resume_search(ParetoArchive::new(), config, evaluator, |_, _| {})
}

/// Continues `archive` until it holds `initial_population + budget`
/// evaluations. `observer` sees the archive after every insertion.
///
/// With one worker the run is fully deterministic for a given seed and
/// starting archive. With more workers the set of evaluated genomes depends
/// on scheduling but the archive invariants still hold.
pub fn resume_search<F>(
    mut archive: ParetoArchive,
    config: &SearchConfig,
    evaluator: &dyn Evaluator,
    mut observer: F,
) -> Result<ParetoArchive, SearchError>
where
    F: FnMut(&ParetoArchive, &Candidate),
{
    config.validate()?;
    let done = archive.history().len() as u64;
    let target = config.initial_population as u64 + config.budget;
    if done >= target {
        return Ok(archive);
    }
    let remaining = target - done;
    let first_id = archive.history().iter().map(|c| c.eval_id + 1).max().unwrap_or(0);

    let dedupe = evaluator.is_deterministic();
    let seen: Mutex<HashSet<String>> = Mutex::new(archive.history().iter().map(|c| genome_key(&c.arch)).collect());
    let generator = Generator { config, dedupe };

    let mut init_rng = worker_rng(config.seed, done, 0);
    let missing_init = (config.initial_population as u64).saturating_sub(done).min(remaining);
    let mut initial = Vec::with_capacity(missing_init as usize);
    for _ in 0..missing_init {
        let mut arch = random_genome(config, &mut init_rng);
        for _ in 0..config.max_redraws {
            if !dedupe || seen.lock().expect("seen lock").insert(genome_key(&arch)) {
                break;
            }
            arch = random_genome(config, &mut init_rng);
        }
        initial.push(arch);
    }

    if config.workers == 1 {
        let mut rng = worker_rng(config.seed, done, 1);
        for slot in 0..remaining {
            let (arch, parent) = if let Some(arch) = initial.get(slot as usize) {
                (arch.clone(), None)
            } else {
                generator.child(archive.members(), &seen, &mut rng)?
            };
            let c = evaluate_slot(evaluator, config, first_id + slot, done + slot, arch, parent)?;
            archive.insert(c.clone())?;
            observer(&archive, &c);
        }
        return Ok(archive);
    }

    let front = RwLock::new(archive.members().to_vec());
    let next_slot = AtomicU64::new(0);
    let (tx, rx) = mpsc::channel::<Result<Candidate, SearchError>>();
    let result = thread::scope(|scope| -> Result<(), SearchError> {
        for w in 0..config.workers {
            let tx = tx.clone();
            let (front, next_slot, seen, initial, generator) = (&front, &next_slot, &seen, &initial, &generator);
            scope.spawn(move || {
                let mut rng = worker_rng(config.seed, done, w as u64 + 1);
                loop {
                    let slot = next_slot.fetch_add(1, Ordering::SeqCst);
                    if slot >= remaining {
                        break;
                    }
                    let produced = match initial.get(slot as usize) {
                        Some(arch) => Ok((arch.clone(), None)),
                        None => {
                            let snapshot = front.read().expect("front lock").clone();
                            generator.child(&snapshot, seen, &mut rng)
                        }
                    };
                    let out = produced.and_then(|(arch, parent)| {
                        evaluate_slot(evaluator, config, first_id + slot, done + slot, arch, parent)
                    });
                    let failed = out.is_err();
                    if tx.send(out).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(tx);
        for msg in rx {
            let c = msg?;
            archive.insert(c.clone())?;
            *front.write().expect("front lock") = archive.members().to_vec();
            observer(&archive, &c);
        }
        Ok(())
    });
    result?;
    Ok(archive)
}
