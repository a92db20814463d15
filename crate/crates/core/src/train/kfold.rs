use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{predict, train, Example, HistoryRow, PredictionRecord, Result, TrainConfig, TrainError};
use crate::tensor::rng;

/// Fold index per id: ids are ranked by a seeded hash and dealt round-robin,
/// so folds differ in size by at most one and membership depends only on
/// the id set and the seed.
pub fn assign_folds(ids: &[&str], k: usize, fold_seed: u64) -> Vec<usize> {
    let mut order: Vec<(u64, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (rng::fnv1a(format!("{fold_seed}:{id}").as_bytes()), i))
        .collect();
    order.sort_unstable();
    let mut folds = vec![0; ids.len()];
    for (rank, &(_, i)) in order.iter().enumerate() {
        folds[i] = rank % k;
    }
    folds
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub seed: u64,
    pub fold: usize,
    pub oof: Vec<PredictionRecord>,
    pub test: Vec<PredictionRecord>,
    pub best_step: usize,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Clone, Default)]
pub struct KfoldOutput {
    pub runs: Vec<FoldRun>,
}

impl KfoldOutput {
    /// Out-of-fold predictions per seed, each covering every sample once.
    pub fn oof_sets(&self, seeds: &[u64]) -> Vec<Vec<PredictionRecord>> {
        seeds
            .iter()
            .map(|&s| self.runs.iter().filter(|r| r.seed == s).flat_map(|r| r.oof.iter().cloned()).collect())
            .collect()
    }

    pub fn test_sets(&self) -> Vec<Vec<PredictionRecord>> {
        self.runs.iter().map(|r| r.test.clone()).collect()
    }
}

/// For every (seed, fold): train on the other folds, early-stop on the
/// held-out fold, predict it and the test set. Folds come from
/// `config.seed`; jobs run on `config.workers` threads.
pub fn kfold_ensemble(config: &TrainConfig, data: &[Example], test: &[Example], seeds: &[u64]) -> Result<KfoldOutput> {
    config.validate()?;
    let k = config.folds;
    if data.len() < k {
        return Err(TrainError::Config(format!("{} samples cannot fill {k} folds", data.len())));
    }
    let ids: Vec<&str> = data.iter().map(|e| e.tok.id.as_str()).collect();
    let folds = assign_folds(&ids, k, config.seed);
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..k).map(move |f| (s, f))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());

    let work = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(seed, fold)) = jobs.get(j) else { break };
        let run = (|| {
            let (tr, held): (Vec<Example>, Vec<Example>) = {
                let mut tr = Vec::new();
                let mut held = Vec::new();
                for (e, &f) in data.iter().zip(&folds) {
                    if f == fold { held.push(e.clone()) } else { tr.push(e.clone()) }
                }
                (tr, held)
            };
            let cfg = TrainConfig { seed, ..config.clone() };
            log::info!("seed {seed} fold {fold}: {} train / {} held out", tr.len(), held.len());
            let out = train(&cfg, &tr, &held)?;
            Ok(FoldRun {
                seed,
                fold,
                oof: predict(&out.model, &held)?,
                test: predict(&out.model, test)?,
                best_step: out.best_step,
                history: out.history,
            })
        })();
        results.lock().expect("results lock")[j] = Some(run);
    };
    let workers = config.workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let runs = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(KfoldOutput { runs })
}
