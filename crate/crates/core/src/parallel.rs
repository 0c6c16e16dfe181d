//! Plane-distributed cyclic reduction over `p` workers.
//!
//! Workers are scoped threads. Each one owns a contiguous range of planes
//! and exchanges immutable payloads with the owners of neighboring planes
//! through channels: during factorization an eliminated plane ships
//! `{D⁻¹, E, F}` to its two neighbors, during solves plane vectors travel
//! the same edges. A barrier separates the two phases of every level.
//! Every block operation is the one the sequential path performs, so the
//! results are bitwise identical for any `p`.

use crate::acr::{
    apply_inv, back_plane, eliminate_odd, reduce_plane, AcrConfig, AcrError, AcrFactorization, Apex, Arith, Block,
    Level, Neighbor, ReducedSystem, SharedBlock,
};
use crate::scalar::Scalar;
use crate::system::{BlockTridiagonalSystem, PlaneVector, SystemError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Barrier};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParallelError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Acr(#[from] AcrError),
}

/// Planes present at one level and the worker owning each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelAssignment {
    /// Original plane indices, in order.
    pub planes: Vec<usize>,
    pub owner: Vec<usize>,
}

impl LevelAssignment {
    pub fn planes_per_worker(&self, p: usize) -> Vec<usize> {
        let mut c = vec![0; p];
        for &w in &self.owner {
            c[w] += 1;
        }
        c
    }

    /// Planes eliminated (even positions) per worker.
    pub fn eliminated_per_worker(&self, p: usize) -> Vec<usize> {
        let mut c = vec![0; p];
        if self.planes.len() > 1 {
            for &w in self.owner.iter().step_by(2) {
                c[w] += 1;
            }
        }
        c
    }

    pub fn active_workers(&self, p: usize) -> usize {
        self.planes_per_worker(p).iter().filter(|&&c| c > 0).count()
    }
}

/// Plane-to-worker mapping for every reduction level.
///
/// Plane `j` stays on worker `j / (n/p)` for its whole life; the last
/// entry of `levels` holds the single remaining plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPlan {
    pub p: usize,
    pub n_planes: usize,
    /// First level at which every active worker holds one plane: `log₂(n/p)`.
    pub c_level: usize,
    pub levels: Vec<LevelAssignment>,
}

impl ParallelPlan {
    pub fn owner_of(&self, plane: usize) -> usize {
        plane / (self.n_planes / self.p)
    }
}

pub fn plan_schedule(n_planes: usize, p: usize) -> Result<ParallelPlan, ParallelError> {
    if !n_planes.is_power_of_two() {
        return Err(ParallelError::Plan(format!("plane count {n_planes} is not a power of two")));
    }
    if p == 0 || !p.is_power_of_two() || p > n_planes {
        return Err(ParallelError::Plan(format!(
            "worker count {p} must be a power of two no larger than {n_planes}"
        )));
    }
    let per = n_planes / p;
    let mut planes: Vec<usize> = (0..n_planes).collect();
    let mut levels = Vec::new();
    loop {
        let owner = planes.iter().map(|&j| j / per).collect();
        levels.push(LevelAssignment {
            planes: planes.clone(),
            owner,
        });
        if planes.len() <= 1 {
            break;
        }
        planes = planes.iter().skip(1).step_by(2).copied().collect();
    }
    Ok(ParallelPlan {
        p,
        n_planes,
        c_level: per.trailing_zeros() as usize,
        levels,
    })
}

/// Longest per-worker chain of plane eliminations: the busiest worker's
/// eliminated-plane count summed over levels.
pub fn critical_path_length(plan: &ParallelPlan) -> usize {
    plan.levels
        .iter()
        .map(|l| l.eliminated_per_worker(plan.p).into_iter().max().unwrap_or(0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Eliminated-plane factors sent to the neighbors.
    Factor,
    /// `D⁻¹ f` of eliminated planes during the forward sweep.
    Forward,
    /// Gathering the final planes on one worker and scattering back.
    Apex,
    /// Solutions of retained planes sent to eliminated neighbors.
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from_plane: usize,
    pub to_plane: usize,
    pub from_worker: usize,
    pub to_worker: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTraffic {
    pub phase: Phase,
    pub level: usize,
    pub active_workers: usize,
    pub idle_workers: usize,
    pub messages: Vec<Message>,
}

impl LevelTraffic {
    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    pub fn bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }
}

/// Compact per-level view for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub phase: Phase,
    pub level: usize,
    pub messages: usize,
    pub bytes: usize,
    pub active_workers: usize,
    pub idle_workers: usize,
}

/// Every inter-worker message, grouped by phase and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLedger {
    pub p: usize,
    pub levels: Vec<LevelTraffic>,
}

impl MessageLedger {
    pub fn total_messages(&self) -> usize {
        self.levels.iter().map(LevelTraffic::message_count).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.levels.iter().map(LevelTraffic::bytes).sum()
    }

    pub fn summary(&self) -> Vec<TrafficSummary> {
        self.levels
            .iter()
            .map(|l| TrafficSummary {
                phase: l.phase,
                level: l.level,
                messages: l.message_count(),
                bytes: l.bytes(),
                active_workers: l.active_workers,
                idle_workers: l.idle_workers,
            })
            .collect()
    }

    /// True when every factor, forward and backward message joins planes
    /// adjacent at its level.
    pub fn is_neighbor_only(&self, plan: &ParallelPlan) -> bool {
        self.levels.iter().filter(|l| l.phase != Phase::Apex).all(|l| {
            let Some(a) = plan.levels.get(l.level) else {
                return false;
            };
            let pos: HashMap<usize, usize> = a.planes.iter().enumerate().map(|(i, &j)| (j, i)).collect();
            l.messages.iter().all(|m| match (pos.get(&m.from_plane), pos.get(&m.to_plane)) {
                (Some(&x), Some(&y)) => x.abs_diff(y) == 1,
                _ => false,
            })
        })
    }
}

enum Packet<T: Scalar> {
    Factors {
        inv: SharedBlock<T>,
        e: Option<SharedBlock<T>>,
        f: Option<SharedBlock<T>>,
    },
    Plane {
        d: Block<T>,
        e: Option<SharedBlock<T>>,
        f: Option<SharedBlock<T>>,
    },
    Vector(Vec<T>),
}

/// `(phase, level, position of the sending plane at that level)`
type Key = (Phase, usize, usize);

/// One worker's endpoints and local message log.
struct Mailbox<T: Scalar> {
    me: usize,
    rx: Receiver<(Key, Packet<T>)>,
    tx: Vec<Sender<(Key, Packet<T>)>>,
    inbox: HashMap<Key, Packet<T>>,
    sent: BTreeMap<(Phase, usize), Vec<Message>>,
}

impl<T: Scalar> Mailbox<T> {
    fn send(&mut self, key: Key, to_worker: usize, from_plane: usize, to_plane: usize, bytes: usize, packet: Packet<T>) {
        self.sent.entry((key.0, key.1)).or_default().push(Message {
            from_plane,
            to_plane,
            from_worker: self.me,
            to_worker,
            bytes,
        });
        self.tx[to_worker].send((key, packet)).expect("receiver lives for the whole scope");
    }

    fn drain(&mut self) {
        while let Ok((k, p)) = self.rx.try_recv() {
            self.inbox.insert(k, p);
        }
    }
}

fn mailboxes<T: Scalar>(p: usize) -> Vec<Mailbox<T>> {
    let (tx, rx): (Vec<_>, Vec<_>) = (0..p).map(|_| channel()).unzip();
    rx.into_iter()
        .enumerate()
        .map(|(me, rx)| Mailbox {
            me,
            rx,
            tx: tx.clone(),
            inbox: HashMap::new(),
            sent: BTreeMap::new(),
        })
        .collect()
}

fn opt_bytes<T: Scalar>(b: &Option<SharedBlock<T>>) -> usize {
    b.as_ref().map_or(0, |b| b.bytes())
}

fn merge_ledger(plan: &ParallelPlan, logs: Vec<BTreeMap<(Phase, usize), Vec<Message>>>, phases: &[(Phase, usize)]) -> MessageLedger {
    let mut all: BTreeMap<(Phase, usize), Vec<Message>> = phases.iter().map(|&k| (k, Vec::new())).collect();
    for log in logs {
        for (k, msgs) in log {
            all.entry(k).or_default().extend(msgs);
        }
    }
    let levels = all
        .into_iter()
        .map(|((phase, level), mut messages)| {
            messages.sort_by_key(|m| (m.from_plane, m.to_plane));
            let active = plan.levels[level.min(plan.levels.len() - 1)].active_workers(plan.p);
            LevelTraffic {
                phase,
                level,
                active_workers: active,
                idle_workers: plan.p - active,
                messages,
            }
        })
        .collect();
    MessageLedger { p: plan.p, levels }
}

/// Reduction levels performed before the apex takes over.
fn level_count(n_planes: usize, stop_planes: usize) -> usize {
    let mut c = n_planes;
    let mut levels = 0;
    while c > stop_planes {
        c /= 2;
        levels += 1;
    }
    levels
}

type Owned<T> = BTreeMap<usize, (Block<T>, Option<SharedBlock<T>>, Option<SharedBlock<T>>)>;
type Record<T> = (usize, Option<SharedBlock<T>>, Option<SharedBlock<T>>, Option<SharedBlock<T>>);

struct FactorOutput<T: Scalar> {
    records: Vec<Vec<Record<T>>>,
    seconds: Vec<(f64, f64)>,
    apex: Option<Apex<T>>,
    sent: BTreeMap<(Phase, usize), Vec<Message>>,
    error: Option<AcrError>,
}

struct FactorShared<'a, T: Scalar> {
    system: &'a BlockTridiagonalSystem<T>,
    plan: &'a ParallelPlan,
    arith: &'a Arith<T>,
    levels: usize,
    barrier: Barrier,
    abort: AtomicBool,
}

impl<T: Scalar> FactorShared<'_, T> {
    /// Barrier followed by a consistent read of the abort flag.
    fn sync(&self) -> bool {
        self.barrier.wait();
        let stop = self.abort.load(Ordering::SeqCst);
        self.barrier.wait();
        stop
    }
}

fn factor_worker<T: Scalar>(sh: &FactorShared<'_, T>, mut mb: Mailbox<T>) -> FactorOutput<T> {
    let me = mb.me;
    let plan = sh.plan;
    let arith = sh.arith;
    let mut out = FactorOutput {
        records: Vec::new(),
        seconds: Vec::new(),
        apex: None,
        sent: BTreeMap::new(),
        error: None,
    };
    let fail = |out: &mut FactorOutput<T>, e: AcrError| {
        if out.error.is_none() {
            out.error = Some(e);
        }
        sh.abort.store(true, Ordering::SeqCst);
    };

    // block-wise compression of the owned planes
    let mut owned: Owned<T> = BTreeMap::new();
    for j in (0..plan.n_planes).filter(|&j| plan.owner_of(j) == me) {
        let compressed = (|| -> Result<_, AcrError> {
            let opt = |b: Option<&crate::system::PlaneBlock<T>>| -> Result<Option<SharedBlock<T>>, AcrError> {
                Ok(b.map(|b| arith.compress(b)).transpose()?.map(Arc::new))
            };
            Ok((arith.compress(sh.system.d(j))?, opt(sh.system.e(j))?, opt(sh.system.f_block(j))?))
        })();
        match compressed {
            Ok(c) => {
                owned.insert(j, c);
            }
            Err(e) => fail(&mut out, e),
        }
    }
    if sh.sync() {
        mb.drain();
        out.sent = mb.sent;
        return out;
    }

    for level in 0..sh.levels {
        let a = &plan.levels[level];
        let c = a.planes.len();
        let t0 = Instant::now();
        let mut records = Vec::new();
        let mut local: HashMap<usize, (SharedBlock<T>, Option<SharedBlock<T>>, Option<SharedBlock<T>>)> = HashMap::new();
        for (&j, (d, e, f)) in owned.iter().filter(|(j, _)| *j % 2 == 0) {
            let inv = match arith.invert(d) {
                Ok(b) => Arc::new(b),
                Err(source) => {
                    fail(&mut out, AcrError::Singular { level, plane: a.planes[j], source });
                    continue;
                }
            };
            let bytes = inv.bytes() + opt_bytes(e) + opt_bytes(f);
            for nb in [j.checked_sub(1), Some(j + 1).filter(|&k| k < c)].into_iter().flatten() {
                let w = a.owner[nb];
                if w == me {
                    local.insert(j, (inv.clone(), e.clone(), f.clone()));
                } else {
                    let packet = Packet::Factors {
                        inv: inv.clone(),
                        e: e.clone(),
                        f: f.clone(),
                    };
                    mb.send((Phase::Factor, level, j), w, a.planes[j], a.planes[nb], bytes, packet);
                }
            }
            records.push((j, Some(inv), e.clone(), f.clone()));
        }
        let t1 = Instant::now();
        if sh.sync() {
            break;
        }
        mb.drain();
        let mut neighbor = |j: usize| -> (SharedBlock<T>, Option<SharedBlock<T>>, Option<SharedBlock<T>>) {
            if let Some(x) = local.get(&j) {
                return x.clone();
            }
            match mb.inbox.remove(&(Phase::Factor, level, j)) {
                Some(Packet::Factors { inv, e, f }) => {
                    local.insert(j, (inv.clone(), e.clone(), f.clone()));
                    (inv, e, f)
                }
                _ => panic!("factors of plane {j} at level {level} not delivered"),
            }
        };
        let mut next: Owned<T> = BTreeMap::new();
        for (j, (d, e, f)) in std::mem::take(&mut owned) {
            if j % 2 == 0 {
                continue;
            }
            let prev = neighbor(j - 1);
            let after = (j + 1 < c).then(|| neighbor(j + 1));
            let (d_new, e_new, f_new) = eliminate_odd(
                arith,
                &d,
                e.as_deref().expect("odd plane has a predecessor"),
                f.as_deref(),
                Neighbor {
                    inv: &prev.0,
                    e: prev.1.as_deref(),
                    f: prev.2.as_deref(),
                },
                after.as_ref().map(|x| Neighbor {
                    inv: &x.0,
                    e: x.1.as_deref(),
                    f: x.2.as_deref(),
                }),
            );
            records.push((j, None, e, f));
            next.insert((j - 1) / 2, (d_new, e_new.map(Arc::new), f_new.map(Arc::new)));
        }
        owned = next;
        out.records.push(records);
        out.seconds.push(((t1 - t0).as_secs_f64(), t1.elapsed().as_secs_f64()));
        sh.barrier.wait();
    }

    if out.error.is_none() && !sh.abort.load(Ordering::SeqCst) {
        // gather the remaining planes on the owner of the last one
        let a = &plan.levels[sh.levels];
        let c = a.planes.len();
        let root = a.owner[c - 1];
        if me != root {
            for (j, (d, e, f)) in std::mem::take(&mut owned) {
                let bytes = d.bytes() + opt_bytes(&e) + opt_bytes(&f);
                mb.send((Phase::Apex, sh.levels, j), root, a.planes[j], a.planes[c - 1], bytes, Packet::Plane { d, e, f });
            }
        }
        sh.barrier.wait();
        if me == root {
            mb.drain();
            let mut sys = ReducedSystem {
                planes: a.planes.clone(),
                d: Vec::with_capacity(c),
                e: Vec::with_capacity(c),
                f: Vec::with_capacity(c),
            };
            for j in 0..c {
                let (d, e, f) = match owned.remove(&j) {
                    Some(x) => x,
                    None => match mb.inbox.remove(&(Phase::Apex, sh.levels, j)) {
                        Some(Packet::Plane { d, e, f }) => (d, e, f),
                        _ => panic!("apex plane {j} not delivered"),
                    },
                };
                sys.d.push(d);
                sys.e.push(e);
                sys.f.push(f);
            }
            match Apex::factor(arith, sys, sh.levels) {
                Ok(apex) => out.apex = Some(apex),
                Err(e) => fail(&mut out, e),
            }
        }
    }
    out.sent = mb.sent;
    out
}

fn check_plan(plan: &ParallelPlan, planes: usize) -> Result<(), ParallelError> {
    if plan.n_planes != planes {
        return Err(ParallelError::Plan(format!(
            "plan covers {} planes, system has {planes}",
            plan.n_planes
        )));
    }
    Ok(())
}

/// Factorization on `plan.p` workers. Equal, block by block, to
/// [`crate::acr::acr_factor`] with the same configuration.
pub fn execute_parallel_factor<T: Scalar>(
    system: &BlockTridiagonalSystem<T>,
    plan: &ParallelPlan,
    config: &AcrConfig,
) -> Result<(AcrFactorization<T>, MessageLedger), ParallelError> {
    check_plan(plan, system.plane_count())?;
    if config.stop_planes == 0 {
        return Err(AcrError::Config("stop_planes must be at least 1".into()).into());
    }
    let t0 = Instant::now();
    let arith = Arith::new(config.mode, system.coords()).map_err(AcrError::from)?;
    let levels = level_count(plan.n_planes, config.stop_planes);
    let shared = FactorShared {
        system,
        plan,
        arith: &arith,
        levels,
        barrier: Barrier::new(plan.p),
        abort: AtomicBool::new(false),
    };
    let outputs: Vec<FactorOutput<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = mailboxes(plan.p)
            .into_iter()
            .map(|mb| {
                let sh = &shared;
                s.spawn(move || factor_worker(sh, mb))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    if let Some(e) = outputs
        .iter()
        .filter_map(|o| o.error.clone())
        .min_by_key(|e| match e {
            AcrError::Singular { level, plane, .. } => (*level, *plane),
            _ => (usize::MAX, usize::MAX),
        })
    {
        return Err(e.into());
    }

    let mut stored: Vec<Level<T>> = (0..levels)
        .map(|l| {
            let c = plan.levels[l].planes.len();
            Level {
                planes: plan.levels[l].planes.clone(),
                inv: vec![None; c],
                e: vec![None; c],
                f: vec![None; c],
                invert_seconds: 0.0,
                update_seconds: 0.0,
            }
        })
        .collect();
    let mut apex = None;
    let mut logs = Vec::with_capacity(outputs.len());
    for o in outputs {
        for (l, (records, (ti, tu))) in o.records.into_iter().zip(o.seconds).enumerate() {
            let level = &mut stored[l];
            level.invert_seconds = level.invert_seconds.max(ti);
            level.update_seconds = level.update_seconds.max(tu);
            for (j, inv, e, f) in records {
                level.inv[j] = inv;
                level.e[j] = e;
                level.f[j] = f;
            }
        }
        apex = apex.or(o.apex);
        logs.push(o.sent);
    }
    let mut phases: Vec<(Phase, usize)> = (0..levels).map(|l| (Phase::Factor, l)).collect();
    phases.push((Phase::Apex, levels));
    let ledger = merge_ledger(plan, logs, &phases);
    let fact = AcrFactorization::from_parts(
        arith,
        stored,
        apex.expect("apex factored by its owner"),
        system.plane_dim(),
        t0.elapsed().as_secs_f64(),
    );
    Ok((fact, ledger))
}

struct SolveShared<'a, T: Scalar> {
    fact: &'a AcrFactorization<T>,
    plan: &'a ParallelPlan,
    barrier: Barrier,
}

fn solve_worker<T: Scalar>(sh: &SolveShared<'_, T>, mut mb: Mailbox<T>, mut owned: BTreeMap<usize, Vec<T>>) -> (Vec<(usize, Vec<T>)>, BTreeMap<(Phase, usize), Vec<Message>>) {
    let me = mb.me;
    let plan = sh.plan;
    let levels = sh.fact.levels();
    let vbytes = sh.fact.plane_dim() * std::mem::size_of::<T>();
    let mut saved: Vec<BTreeMap<usize, Vec<T>>> = Vec::with_capacity(levels.len());

    for (l, level) in levels.iter().enumerate() {
        let a = &plan.levels[l];
        let c = a.planes.len();
        let mut w_local: HashMap<usize, Vec<T>> = HashMap::new();
        let mut w_saved = BTreeMap::new();
        for (&j, f) in owned.iter().filter(|(j, _)| *j % 2 == 0) {
            let w = apply_inv(level.inv[j].as_ref().expect("even plane"), f);
            for nb in [j.checked_sub(1), Some(j + 1).filter(|&k| k < c)].into_iter().flatten() {
                if a.owner[nb] == me {
                    w_local.insert(j, w.clone());
                } else {
                    mb.send((Phase::Forward, l, j), a.owner[nb], a.planes[j], a.planes[nb], vbytes, Packet::Vector(w.clone()));
                }
            }
            w_saved.insert(j, w);
        }
        sh.barrier.wait();
        mb.drain();
        let mut fetch = |j: usize| -> Vec<T> {
            if let Some(w) = w_local.get(&j) {
                return w.clone();
            }
            match mb.inbox.remove(&(Phase::Forward, l, j)) {
                Some(Packet::Vector(w)) => {
                    w_local.insert(j, w.clone());
                    w
                }
                _ => panic!("forward vector of plane {j} at level {l} not delivered"),
            }
        };
        let mut next = BTreeMap::new();
        for (j, f) in std::mem::take(&mut owned) {
            if j % 2 == 1 {
                let prev = fetch(j - 1);
                let after = (j + 1 < c).then(|| fetch(j + 1));
                next.insert((j - 1) / 2, reduce_plane(level, j, &f, Some(&prev), after.as_deref()));
            }
        }
        owned = next;
        saved.push(w_saved);
        sh.barrier.wait();
    }

    // apex: gather right-hand sides, solve on the root, scatter solutions
    let top = levels.len();
    let a = &plan.levels[top];
    let c = a.planes.len();
    let root = a.owner[c - 1];
    if me != root {
        for (j, f) in std::mem::take(&mut owned) {
            mb.send((Phase::Apex, top, j), root, a.planes[j], a.planes[c - 1], vbytes, Packet::Vector(f));
        }
    }
    sh.barrier.wait();
    let mut u: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    if me == root {
        mb.drain();
        let rhs: Vec<Vec<T>> = (0..c)
            .map(|j| {
                owned.remove(&j).unwrap_or_else(|| match mb.inbox.remove(&(Phase::Apex, top, j)) {
                    Some(Packet::Vector(f)) => f,
                    _ => panic!("apex right-hand side {j} not delivered"),
                })
            })
            .collect();
        for (j, x) in sh.fact.apex().solve(rhs).into_iter().enumerate() {
            if a.owner[j] == me {
                u.insert(j, x);
            } else {
                mb.send((Phase::Apex, top, c + j), a.owner[j], a.planes[c - 1], a.planes[j], vbytes, Packet::Vector(x));
            }
        }
    }
    sh.barrier.wait();
    mb.drain();
    for j in 0..c {
        if a.owner[j] == me && me != root {
            match mb.inbox.remove(&(Phase::Apex, top, c + j)) {
                Some(Packet::Vector(x)) => {
                    u.insert(j, x);
                }
                _ => panic!("apex solution {j} not delivered"),
            }
        }
    }

    for (l, level) in levels.iter().enumerate().rev() {
        let a = &plan.levels[l];
        let c = a.planes.len();
        // retained plane k of level l + 1 sits at position 2k + 1 here
        let mut u_local: HashMap<usize, Vec<T>> = HashMap::new();
        for (k, x) in std::mem::take(&mut u) {
            let j = 2 * k + 1;
            for nb in [j - 1, j + 1].into_iter().filter(|&nb| nb < c) {
                if a.owner[nb] != me {
                    mb.send((Phase::Backward, l, j), a.owner[nb], a.planes[j], a.planes[nb], vbytes, Packet::Vector(x.clone()));
                }
            }
            u_local.insert(j, x);
        }
        sh.barrier.wait();
        mb.drain();
        let mut fetch = |j: usize| -> Vec<T> {
            if let Some(x) = u_local.get(&j) {
                return x.clone();
            }
            match mb.inbox.remove(&(Phase::Backward, l, j)) {
                Some(Packet::Vector(x)) => {
                    u_local.insert(j, x.clone());
                    x
                }
                _ => panic!("backward vector of plane {j} at level {l} not delivered"),
            }
        };
        let mut recovered = BTreeMap::new();
        for (j, w) in std::mem::take(&mut saved[l]) {
            let prev = (j > 0).then(|| fetch(j - 1));
            let after = (j + 1 < c).then(|| fetch(j + 1));
            recovered.insert(j, back_plane(level, j, w, prev.as_deref(), after.as_deref()));
        }
        u = u_local.into_iter().filter(|(j, _)| a.owner[*j] == me).collect();
        u.extend(recovered);
        sh.barrier.wait();
    }
    let base = &plan.levels[0];
    (u.into_iter().map(|(j, x)| (base.planes[j], x)).collect(), mb.sent)
}

/// Solve with a stored factorization on `plan.p` workers; bitwise equal
/// to [`AcrFactorization::solve`].
pub fn execute_parallel_solve<T: Scalar>(
    fact: &AcrFactorization<T>,
    plan: &ParallelPlan,
    f: &[PlaneVector<T>],
) -> Result<(Vec<PlaneVector<T>>, MessageLedger), ParallelError> {
    check_plan(plan, fact.plane_count())?;
    if f.len() != plan.n_planes {
        return Err(AcrError::from(SystemError::PlaneCount {
            expected: plan.n_planes,
            found: f.len(),
        })
        .into());
    }
    for (j, v) in f.iter().enumerate() {
        if v.len() != fact.plane_dim() {
            return Err(AcrError::from(SystemError::DimensionMismatch {
                plane: j,
                expected: fact.plane_dim(),
                found: v.len(),
            })
            .into());
        }
    }
    let levels = fact.levels().len();
    if plan.levels.get(levels).map(|a| &a.planes) != Some(&fact.apex().planes) {
        return Err(ParallelError::Plan("factorization levels do not follow the plan".into()));
    }
    let shared = SolveShared {
        fact,
        plan,
        barrier: Barrier::new(plan.p),
    };
    let outputs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = mailboxes(plan.p)
            .into_iter()
            .map(|mb| {
                let sh = &shared;
                let owned = (0..plan.n_planes)
                    .filter(|&j| plan.owner_of(j) == mb.me)
                    .map(|j| (j, f[j].values.clone()))
                    .collect();
                s.spawn(move || solve_worker(sh, mb, owned))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut u: Vec<Option<Vec<T>>> = vec![None; plan.n_planes];
    let mut logs = Vec::new();
    for (planes, sent) in outputs {
        for (j, x) in planes {
            u[j] = Some(x);
        }
        logs.push(sent);
    }
    let mut phases: Vec<(Phase, usize)> = Vec::new();
    for l in 0..levels {
        phases.push((Phase::Forward, l));
        phases.push((Phase::Backward, l));
    }
    phases.push((Phase::Apex, levels));
    let ledger = merge_ledger(plan, logs, &phases);
    let u = u
        .into_iter()
        .enumerate()
        .map(|(j, x)| PlaneVector::new(j, x.expect("every plane solved")))
        .collect();
    Ok((u, ledger))
}
