use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::select::SelectionStrategy;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::nn::{Model, Tensor};
use crate::tasks::LabeledDataset;

/// One remembered example with the logits the model produced for it when
/// its task was finished.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub input: Vec<f32>,
    pub logits: Vec<f32>,
    pub label: Option<usize>,
    pub task_id: usize,
    pub head_id: usize,
}

/// Evaluates `model` on the selected rows and packs the results.
pub fn record_logits(
    model: &Model,
    ds: &LabeledDataset,
    indices: &[usize],
    head: usize,
    task_id: usize,
) -> Result<Vec<MemoryEntry>> {
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let x = ds.inputs.select_rows(indices);
    let z = model.predict(&x, head)?;
    Ok(indices
        .iter()
        .enumerate()
        .map(|(r, &i)| MemoryEntry {
            input: ds.input(i).to_vec(),
            logits: z.row(r).to_vec(),
            label: Some(ds.labels[i]),
            task_id,
            head_id: head,
        })
        .collect())
}

/// Append-only per-task store.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodicMemory {
    tasks: BTreeMap<usize, Vec<MemoryEntry>>,
    fingerprints: BTreeMap<usize, String>,
    /// Maximum entries per task.
    pub capacity: usize,
    pub strategy: SelectionStrategy,
}

impl EpisodicMemory {
    pub fn new(capacity: usize, strategy: SelectionStrategy) -> Self {
        Self {
            capacity,
            strategy,
            ..Default::default()
        }
    }

    /// Stores the entries of a finished task. A task can be stored once.
    pub fn insert_task(&mut self, task_id: usize, entries: Vec<MemoryEntry>, fingerprint: impl Into<String>) -> Result<()> {
        if self.tasks.contains_key(&task_id) {
            return Err(Error::invalid(format!("memory for task {task_id} already recorded")));
        }
        if entries.len() > self.capacity {
            return Err(Error::invalid(format!(
                "task {task_id}: {} entries exceed capacity {}",
                entries.len(),
                self.capacity
            )));
        }
        if let Some(e) = entries.iter().find(|e| e.task_id != task_id) {
            return Err(Error::invalid(format!("entry of task {} filed under {task_id}", e.task_id)));
        }
        if entries.iter().any(|e| e.logits.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("memory logits"));
        }
        self.tasks.insert(task_id, entries);
        self.fingerprints.insert(task_id, fingerprint.into());
        Ok(())
    }

    /// Replaces the stored logits of every entry (used by the optional
    /// refresh-at-task-boundary mode); inputs, labels and heads are kept.
    pub fn refresh_logits(&mut self, model: &Model) -> Result<()> {
        for entries in self.tasks.values_mut() {
            let mut by_head: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, e) in entries.iter().enumerate() {
                by_head.entry(e.head_id).or_default().push(i);
            }
            for (head, rows) in by_head {
                let x = Tensor::from_rows(&rows.iter().map(|&i| entries[i].input.clone()).collect::<Vec<_>>())?;
                let z = model.predict(&x, head)?;
                for (r, &i) in rows.iter().enumerate() {
                    entries[i].logits = z.row(r).to_vec();
                }
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.tasks.keys().copied()
    }

    pub fn task(&self, task_id: usize) -> Option<&[MemoryEntry]> {
        self.tasks.get(&task_id).map(Vec::as_slice)
    }

    pub fn fingerprint(&self, task_id: usize) -> Option<&str> {
        self.fingerprints.get(&task_id).map(String::as_str)
    }

    /// All entries, ordered by task then insertion.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.tasks.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut inputs = Vec::new();
        let mut logits = Vec::new();
        let mut table = Vec::new();
        for e in self.entries() {
            inputs.extend_from_slice(&e.input);
            logits.extend_from_slice(&e.logits);
            table.push(EntryMeta {
                task_id: e.task_id,
                head_id: e.head_id,
                label: e.label,
                input_len: e.input.len(),
                logits_len: e.logits.len(),
            });
        }
        let header = MemoryHeader {
            kind: "memory".into(),
            capacity: self.capacity,
            strategy: self.strategy,
            fingerprints: self.fingerprints.clone(),
            entries: table,
        };
        Ok(Container {
            header: serde_json::to_value(header)?,
            arrays: vec![inputs, logits],
        })
    }

    pub fn from_container(c: &Container, origin: &Path) -> Result<Self> {
        let h: MemoryHeader = serde_json::from_value(c.header.clone())?;
        if h.kind != "memory" || c.arrays.len() != 2 {
            return Err(Error::format(origin, "not a memory snapshot"));
        }
        let (mut ip, mut lp) = (0usize, 0usize);
        let mut mem = EpisodicMemory::new(h.capacity, h.strategy);
        let mut grouped: BTreeMap<usize, Vec<MemoryEntry>> = BTreeMap::new();
        for m in &h.entries {
            let input = c.arrays[0]
                .get(ip..ip + m.input_len)
                .ok_or_else(|| Error::format(origin, "truncated inputs"))?
                .to_vec();
            let logits = c.arrays[1]
                .get(lp..lp + m.logits_len)
                .ok_or_else(|| Error::format(origin, "truncated logits"))?
                .to_vec();
            ip += m.input_len;
            lp += m.logits_len;
            grouped.entry(m.task_id).or_default().push(MemoryEntry {
                input,
                logits,
                label: m.label,
                task_id: m.task_id,
                head_id: m.head_id,
            });
        }
        for task in h.fingerprints.keys() {
            grouped.entry(*task).or_default();
        }
        for (task, entries) in grouped {
            let fp = h.fingerprints.get(&task).cloned().unwrap_or_default();
            mem.insert_task(task, entries, fp)?;
        }
        Ok(mem)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?, path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    task_id: usize,
    head_id: usize,
    label: Option<usize>,
    input_len: usize,
    logits_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MemoryHeader {
    kind: String,
    capacity: usize,
    strategy: SelectionStrategy,
    fingerprints: BTreeMap<usize, String>,
    entries: Vec<EntryMeta>,
}
