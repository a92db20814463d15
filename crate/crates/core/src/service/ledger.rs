use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread;

use tokio::sync::oneshot;

use super::ServiceError;
use crate::data::{append_correction, apply_corrections, load_corrections, CorrectionRecord, GapSample, Label};

/// Labels after folding every ledger record over the corpus.
#[derive(Debug)]
struct Fold {
    labels: Vec<Label>,
    records: Vec<CorrectionRecord>,
}

struct Job {
    index: usize,
    id: String,
    new_label: Label,
    note: String,
    reply: oneshot::Sender<Result<Option<CorrectionRecord>, ServiceError>>,
}

/// Append-only corrections ledger. Reads go through a shared lock; every
/// write is handled by one writer thread, which appends and fsyncs before
/// updating the fold and replying.
pub struct Ledger {
    path: PathBuf,
    fold: Arc<RwLock<Fold>>,
    tx: Mutex<mpsc::Sender<Job>>,
}

impl Ledger {
    pub fn open(path: PathBuf, samples: &[GapSample]) -> Result<Self, ServiceError> {
        let records = if path.exists() { load_corrections(&path)? } else { Vec::new() };
        let (corrected, _) = apply_corrections(samples, &records)?;
        let fold = Arc::new(RwLock::new(Fold {
            labels: corrected.iter().map(GapSample::label).collect(),
            records,
        }));
        let (tx, rx) = mpsc::channel::<Job>();
        let writer_fold = fold.clone();
        let writer_path = path.clone();
        thread::Builder::new().name("ledger-writer".into()).spawn(move || {
            for job in rx {
                let res = write_one(&writer_path, &writer_fold, &job);
                let _ = job.reply.send(res);
            }
        })?;
        Ok(Self { path, fold, tx: Mutex::new(tx) })
    }

    pub fn path(&self) -> &std::path::Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.fold.read().expect("ledger fold").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<Label> {
        self.fold.read().expect("ledger fold").labels.clone()
    }

    pub fn label(&self, index: usize) -> Label {
        self.fold.read().expect("ledger fold").labels[index]
    }

    pub fn records_for(&self, id: &str) -> Vec<CorrectionRecord> {
        self.fold.read().expect("ledger fold").records.iter().filter(|r| r.sample_id == id).cloned().collect()
    }

    /// Queue a label change. `Ok(None)` means the sample already has that
    /// label and nothing was written.
    pub async fn submit(&self, index: usize, id: String, new_label: Label, note: String) -> Result<Option<CorrectionRecord>, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .lock()
            .expect("ledger queue")
            .send(Job { index, id, new_label, note, reply })
            .map_err(|_| ServiceError::WriterGone)?;
        rx.await.map_err(|_| ServiceError::WriterGone)?
    }
}

fn write_one(path: &std::path::Path, fold: &RwLock<Fold>, job: &Job) -> Result<Option<CorrectionRecord>, ServiceError> {
    let old_label = fold.read().expect("ledger fold").labels[job.index];
    if old_label == job.new_label {
        return Ok(None);
    }
    let rec = CorrectionRecord {
        sample_id: job.id.clone(),
        old_label,
        new_label: job.new_label,
        note: job.note.clone(),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    append_correction(path, &rec)?;
    let mut f = fold.write().expect("ledger fold");
    f.labels[job.index] = job.new_label;
    f.records.push(rec.clone());
    Ok(Some(rec))
}
