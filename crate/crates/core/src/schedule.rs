//! Two-stage execution plan for a reconstruction tree and its simulated
//! makespan under list scheduling.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::TmrTree;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("worker count must be >= 1")]
    NoWorkers,
    #[error("merge cost must be finite and >= 0 (got {0})")]
    BadMergeCost(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workers {
    Limited(usize),
    Unlimited,
}

impl std::fmt::Display for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Workers::Limited(p) => write!(f, "{p}"),
            Workers::Unlimited => f.write_str("unlimited"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TaskKind {
    /// Base model of a kernel.
    Kernel { kernel: usize },
    /// Registers a leaf cluster onto its kernel's base model.
    Leaf { cluster: usize, kernel: usize },
    /// Leaf-cluster models into the image-cluster model.
    ClusterMerge { kernel: usize },
    /// Image-cluster models into the final model.
    GlobalMerge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    pub cost: f64,
    pub deps: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub task: usize,
    pub worker: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub workers: Workers,
    pub tasks: Vec<Task>,
    /// One slot per task, in task id order.
    pub slots: Vec<Slot>,
    pub makespan: f64,
    /// Sum of all task costs.
    pub serial: f64,
    pub speedup: f64,
}

/// Task DAG of the tree. Unit cost per image; merges cost `merge_cost`.
pub fn build_tasks(tree: &TmrTree, merge_cost: f64) -> Vec<Task> {
    let mut tasks = Vec::new();
    for k in &tree.kernels {
        tasks.push(Task {
            id: tasks.len(),
            kind: TaskKind::Kernel { kernel: k.id },
            cost: k.members.len() as f64,
            deps: vec![],
        });
    }
    let mut merge_deps: Vec<Vec<usize>> = (0..tree.kernels.len()).map(|k| vec![k]).collect();
    for c in tree.leaf_clusters.iter().filter(|c| !c.quarantined) {
        merge_deps[c.kernel].push(tasks.len());
        tasks.push(Task {
            id: tasks.len(),
            kind: TaskKind::Leaf {
                cluster: c.id,
                kernel: c.kernel,
            },
            cost: c.members.len() as f64,
            deps: vec![c.kernel],
        });
    }
    let mut global_deps = Vec::new();
    for (k, deps) in merge_deps.into_iter().enumerate() {
        global_deps.push(tasks.len());
        tasks.push(Task {
            id: tasks.len(),
            kind: TaskKind::ClusterMerge { kernel: k },
            cost: merge_cost,
            deps,
        });
    }
    if !tree.kernels.is_empty() {
        tasks.push(Task {
            id: tasks.len(),
            kind: TaskKind::GlobalMerge,
            cost: merge_cost,
            deps: global_deps,
        });
    }
    tasks
}

/// Greedy list scheduling: whenever a worker is free it takes the ready task
/// with the largest cost (smallest id on ties).
pub fn plan_schedule(tree: &TmrTree, workers: Workers, merge_cost: f64) -> Result<SchedulePlan, ScheduleError> {
    if workers == Workers::Limited(0) {
        return Err(ScheduleError::NoWorkers);
    }
    if !(merge_cost >= 0.0 && merge_cost.is_finite()) {
        return Err(ScheduleError::BadMergeCost(merge_cost));
    }
    let tasks = build_tasks(tree, merge_cost);
    let n = tasks.len();
    let mut waiting: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in &tasks {
        for &d in &t.deps {
            children[d].push(t.id);
        }
    }
    let capacity = match workers {
        Workers::Limited(p) => p,
        Workers::Unlimited => n.max(1),
    };
    let mut free: Vec<usize> = (0..capacity).rev().collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| waiting[i] == 0).collect();
    let mut running: Vec<(f64, usize, usize)> = Vec::new();
    let mut slots: Vec<Option<Slot>> = vec![None; n];
    let mut now = 0.0;
    let by_priority = |a: &usize, b: &usize| {
        tasks[*b]
            .cost
            .total_cmp(&tasks[*a].cost)
            .then(a.cmp(b))
    };

    loop {
        ready.sort_by(by_priority);
        while !ready.is_empty() && !free.is_empty() {
            let t = ready.remove(0);
            let w = free.pop().unwrap();
            let end = now + tasks[t].cost;
            slots[t] = Some(Slot {
                task: t,
                worker: w,
                start: now,
                end,
            });
            running.push((end, t, w));
        }
        if running.is_empty() {
            break;
        }
        running.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        let (end, _, _) = *running.last().unwrap();
        now = end;
        while let Some(&(e, t, w)) = running.last() {
            if e.total_cmp(&now) != Ordering::Equal {
                break;
            }
            running.pop();
            free.push(w);
            for &c in &children[t] {
                waiting[c] -= 1;
                if waiting[c] == 0 {
                    ready.push(c);
                }
            }
        }
        free.sort_unstable_by(|a, b| b.cmp(a));
    }

    let slots: Vec<Slot> = slots.into_iter().map(|s| s.expect("DAG is acyclic")).collect();
    let makespan = slots.iter().map(|s| s.end).fold(0.0, f64::max);
    let serial: f64 = tasks.iter().map(|t| t.cost).sum();
    let speedup = if makespan > 0.0 { serial / makespan } else { 1.0 };
    Ok(SchedulePlan {
        workers,
        tasks,
        slots,
        makespan,
        serial,
        speedup,
    })
}

impl SchedulePlan {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph plan {\n  rankdir=LR;\n");
        for t in &self.tasks {
            let label = match t.kind {
                TaskKind::Kernel { kernel } => format!("K{kernel}"),
                TaskKind::Leaf { cluster, .. } => format!("L{cluster}"),
                TaskKind::ClusterMerge { kernel } => format!("merge K{kernel}"),
                TaskKind::GlobalMerge => "merge all".to_string(),
            };
            let _ = writeln!(out, "  t{} [label=\"{label} ({})\"];", t.id, t.cost);
        }
        for t in &self.tasks {
            for d in &t.deps {
                let _ = writeln!(out, "  t{d} -> t{};", t.id);
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn respects_dependencies(&self) -> bool {
        self.tasks.iter().all(|t| {
            t.deps
                .iter()
                .all(|&d| self.slots[d].end <= self.slots[t.id].start)
        })
    }
}
