//! Threaded driver for the domain-decomposed renderer.
//!
//! Workers share one scheduler state behind a mutex. At most
//! `memory_budget` sub-domains are resident at once; idle residents are
//! swapped out for sub-domains with a backlog, their ledgers handed to a
//! gather thread that merges them while tracing continues.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use vitrail_core::ddm::{
    partition, trace_subdomain, BoundaryRay, Counters, DdmContext, Gatherer, IdCounters, Ledger, LoadedSubdomain,
    Partial, Partition, ShadowAudit, TraceOutput,
};
use vitrail_core::render_global::PhotonMaps;
use vitrail_core::render_local::{generate_primary_ray, Diagnostics, Framebuffer, Tile};
use vitrail_core::scene::Scene;
use vitrail_core::Bands;

#[derive(Debug, Clone, PartialEq)]
pub struct DdmConfig {
    pub subdomains: u32,
    pub workers: usize,
    /// Maximum number of simultaneously resident sub-domains.
    pub memory_budget: usize,
    /// Fraction of the per-sub-domain primary ray count below which a
    /// resident may be swapped out.
    pub watermark_low: f64,
    /// Backlog fraction that justifies swapping a sub-domain in.
    pub watermark_high: f64,
    /// Rays taken from a queue per claim.
    pub batch: usize,
    /// No progress for this long with rays queued aborts the run.
    pub epoch: Duration,
    /// Record sequence numbers and shadow verdicts.
    pub audit: bool,
}

impl Default for DdmConfig {
    fn default() -> Self {
        DdmConfig {
            subdomains: 1,
            workers: 1,
            memory_budget: 1,
            watermark_low: 0.01,
            watermark_high: 0.10,
            batch: 1024,
            epoch: Duration::from_secs(30),
            audit: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DdmError {
    #[error(transparent)]
    Core(#[from] vitrail_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scheduler made no progress for a full epoch:\n{0}")]
    Deadlock(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Load,
    Unload,
    Claim,
    Flush,
    Gather,
    BoundaryEmit,
    BoundaryConsume,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Load => "load",
            EventKind::Unload => "unload",
            EventKind::Claim => "claim",
            EventKind::Flush => "flush",
            EventKind::Gather => "gather",
            EventKind::BoundaryEmit => "boundary_emit",
            EventKind::BoundaryConsume => "boundary_consume",
        }
    }
}

/// Interval events (`load`, `claim`, `gather`) log a `begin` and an `end`
/// record; their detail starts with that word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub ns: u64,
    pub kind: EventKind,
    pub subdomain: u32,
    pub detail: String,
}

pub fn write_event_log(events: &[Event], path: &Path) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["event_ns", "kind", "subdomain_id", "detail"])?;
    for e in events {
        w.write_record(&[e.ns.to_string(), e.kind.as_str().to_string(), e.subdomain.to_string(), e.detail.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// What the event log says about a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventAudit {
    pub max_resident: usize,
    pub loads: usize,
    pub unloads: usize,
    /// Gather intervals that overlap some claim interval.
    pub overlapping_gathers: usize,
    pub gathers: usize,
}

/// Replays the event log; a sub-domain counts as resident from its load `begin`.
pub fn audit_events(events: &[Event]) -> EventAudit {
    let mut a = EventAudit::default();
    let mut resident = 0usize;
    let mut claims: Vec<(u64, u64)> = Vec::new();
    let mut gathers: Vec<(u64, u64)> = Vec::new();
    let mut open_claim = std::collections::HashMap::new();
    let mut open_gather = None;
    for e in events {
        let begin = e.detail.starts_with("begin");
        match e.kind {
            EventKind::Load if begin => {
                resident += 1;
                a.loads += 1;
                a.max_resident = a.max_resident.max(resident);
            }
            EventKind::Unload => {
                resident -= 1;
                a.unloads += 1;
            }
            EventKind::Claim if begin => {
                open_claim.insert(e.subdomain, e.ns);
            }
            EventKind::Claim => {
                if let Some(b) = open_claim.remove(&e.subdomain) {
                    claims.push((b, e.ns));
                }
            }
            EventKind::Gather if begin => open_gather = Some(e.ns),
            EventKind::Gather => {
                if let Some(b) = open_gather.take() {
                    gathers.push((b, e.ns));
                }
            }
            _ => {}
        }
    }
    a.gathers = gathers.len();
    a.overlapping_gathers = gathers.iter().filter(|g| claims.iter().any(|c| g.0 <= c.1 && c.0 <= g.1)).count();
    a
}

/// Result of a decomposed render.
#[derive(Debug)]
pub struct DdmOutput {
    pub image: Framebuffer,
    pub events: Vec<Event>,
    pub counters: Counters,
    pub diagnostics: Diagnostics,
    /// Sorted sequence numbers of emitted and consumed boundary rays (audit mode).
    pub emitted: Vec<u64>,
    pub consumed: Vec<u64>,
    pub shadow_audit: Vec<ShadowAudit>,
    pub partition: Partition,
}

impl DdmOutput {
    /// Every emitted boundary ray was consumed exactly once.
    pub fn exactly_once(&self) -> bool {
        self.emitted == self.consumed && self.emitted.windows(2).all(|w| w[0] < w[1])
    }
}

enum Slot {
    Unloaded,
    Loading,
    Resident(Arc<LoadedSubdomain>),
}

struct Sub {
    slot: Slot,
    queue: VecDeque<BoundaryRay>,
    busy: bool,
    ledger: Ledger,
    flushes: u32,
    ids: IdCounters,
}

struct State {
    subs: Vec<Sub>,
    in_flight: usize,
    active: usize,
    progress: u64,
    error: Option<DdmError>,
    events: Vec<Event>,
    counters: Counters,
    diagnostics: Diagnostics,
    emitted: Vec<u64>,
    consumed: Vec<u64>,
    shadow_audit: Vec<ShadowAudit>,
    /// Partials of evicted sub-domains, sent when the next claim starts.
    outbox: Vec<Partial>,
}

struct Shared<'a> {
    ctx: DdmContext<'a>,
    config: &'a DdmConfig,
    low: usize,
    high: usize,
    start: Instant,
    state: Mutex<State>,
    wake: Condvar,
    gather: Mutex<mpsc::Sender<Partial>>,
    /// Test knob: never load anything.
    frozen: bool,
}

impl Shared<'_> {
    fn ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    fn log(&self, st: &mut State, kind: EventKind, subdomain: u32, detail: String) {
        let ns = self.ns();
        st.events.push(Event { ns, kind, subdomain, detail });
    }

    fn flush(&self, st: &mut State, i: usize) {
        let ledger = st.subs[i].ledger.take();
        let flush = st.subs[i].flushes;
        st.subs[i].flushes += 1;
        self.log(st, EventKind::Flush, i as u32, format!("flush={flush} pixels={}", ledger.entries.len()));
        st.outbox.push(Partial { subdomain: i as u32, flush, ledger });
    }

    fn post(&self, st: &mut State) {
        let tx = self.gather.lock().unwrap();
        for p in st.outbox.drain(..) {
            // the receiver outlives every worker
            let _ = tx.send(p);
        }
    }
}

enum Action {
    Work(usize),
    Load { load: usize, unload: Option<usize> },
}

fn plan(shared: &Shared, st: &State) -> Option<Action> {
    let pending = |i: usize| st.subs[i].queue.len();
    let work = (0..st.subs.len())
        .filter(|&i| matches!(st.subs[i].slot, Slot::Resident(_)) && !st.subs[i].busy && pending(i) > 0)
        .max_by_key(|&i| (pending(i), std::cmp::Reverse(i)));
    if let Some(i) = work {
        return Some(Action::Work(i));
    }
    if shared.frozen {
        return None;
    }
    let load = (0..st.subs.len())
        .filter(|&i| matches!(st.subs[i].slot, Slot::Unloaded) && pending(i) > 0)
        .max_by_key(|&i| (pending(i), std::cmp::Reverse(i)))?;
    let resident = st.subs.iter().filter(|s| !matches!(s.slot, Slot::Unloaded)).count();
    if resident < shared.config.memory_budget {
        return Some(Action::Load { load, unload: None });
    }
    let victim = (0..st.subs.len())
        .filter(|&i| matches!(st.subs[i].slot, Slot::Resident(_)) && !st.subs[i].busy)
        .min_by_key(|&i| (pending(i), i))?;
    let swap = pending(victim) == 0 || (pending(victim) <= shared.low && pending(load) >= shared.high);
    swap.then_some(Action::Load { load, unload: Some(victim) })
}

fn dump(st: &State) -> String {
    st.subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let slot = match s.slot {
                Slot::Unloaded => "unloaded",
                Slot::Loading => "loading",
                Slot::Resident(_) => "resident",
            };
            format!("  sub-domain {i}: {slot}, {} queued, busy={}\n", s.queue.len(), s.busy)
        })
        .collect()
}

fn worker(shared: &Shared) {
    let lock = || shared.state.lock().unwrap();
    let mut st: MutexGuard<State> = lock();
    loop {
        if st.error.is_some() || (st.in_flight == 0 && st.active == 0) {
            shared.wake.notify_all();
            return;
        }
        match plan(shared, &st) {
            Some(Action::Work(i)) => {
                let Slot::Resident(sub) = &st.subs[i].slot else { unreachable!() };
                let sub = Arc::clone(sub);
                let n = st.subs[i].queue.len().min(shared.config.batch);
                let batch: Vec<BoundaryRay> = st.subs[i].queue.drain(..n).collect();
                let ledger = st.subs[i].ledger.take();
                let mut ids = st.subs[i].ids;
                st.subs[i].busy = true;
                st.active += 1;
                let inbound = batch.iter().filter(|m| m.seq != 0).count();
                shared.log(&mut st, EventKind::Claim, i as u32, format!("begin rays={n}"));
                if inbound > 0 {
                    shared.log(&mut st, EventKind::BoundaryConsume, i as u32, format!("count={inbound}"));
                }
                shared.post(&mut st);
                drop(st);

                let consumed: Vec<u64> =
                    if shared.config.audit { batch.iter().filter(|m| m.seq != 0).map(|m| m.seq).collect() } else { Vec::new() };
                let mut out = TraceOutput { ledger, ..TraceOutput::default() };
                let result = trace_subdomain(&shared.ctx, &sub, batch, &mut ids, &mut out);

                st = lock();
                let s = &mut st.subs[i];
                s.ids = ids;
                s.ledger = std::mem::take(&mut out.ledger);
                s.busy = false;
                st.active -= 1;
                match result {
                    Err(e) => st.error = Some(e.into()),
                    Ok(()) => {
                        let emitted = out.outbound.len();
                        if shared.config.audit {
                            st.consumed.extend(consumed);
                            st.emitted.extend(out.outbound.iter().map(|m| m.seq));
                            st.shadow_audit.append(&mut out.shadow_audit);
                        }
                        for m in out.outbound.drain(..) {
                            st.subs[m.destination as usize].queue.push_back(m);
                        }
                        st.in_flight += emitted;
                        if emitted > 0 {
                            shared.log(&mut st, EventKind::BoundaryEmit, i as u32, format!("count={emitted}"));
                        }
                        st.counters.merge(&out.counters);
                        st.diagnostics.merge(&out.diagnostics);
                    }
                }
                st.in_flight -= n;
                shared.log(&mut st, EventKind::Claim, i as u32, "end".into());
                st.progress += 1;
                shared.wake.notify_all();
            }
            Some(Action::Load { load, unload }) => {
                if let Some(v) = unload {
                    shared.flush(&mut st, v);
                    st.subs[v].slot = Slot::Unloaded;
                    shared.log(&mut st, EventKind::Unload, v as u32, String::new());
                }
                st.subs[load].slot = Slot::Loading;
                st.active += 1;
                shared.log(&mut st, EventKind::Load, load as u32, "begin".into());
                drop(st);
                let loaded = shared.ctx.partition.load(shared.ctx.scene, load as u32);
                st = lock();
                st.subs[load].slot = Slot::Resident(Arc::new(loaded));
                st.active -= 1;
                shared.log(&mut st, EventKind::Load, load as u32, "end".into());
                st.progress += 1;
                shared.wake.notify_all();
            }
            None => {
                let before = st.progress;
                let (guard, timeout) = shared.wake.wait_timeout(st, shared.config.epoch).unwrap();
                st = guard;
                if timeout.timed_out() && st.progress == before && st.active == 0 && st.in_flight > 0 && st.error.is_none() {
                    st.error = Some(DdmError::Deadlock(dump(&st)));
                }
            }
        }
    }
}

/// Decomposed local-illumination render (photon estimates when `photons` is given).
pub fn run_ddm(scene: &Scene, config: &DdmConfig, photons: Option<&PhotonMaps>) -> Result<DdmOutput, DdmError> {
    run_inner(scene, config, photons, false)
}

fn run_inner(scene: &Scene, config: &DdmConfig, photons: Option<&PhotonMaps>, frozen: bool) -> Result<DdmOutput, DdmError> {
    let k = config.subdomains;
    if config.workers == 0 {
        return Err(DdmError::Config("worker count must be at least 1".into()));
    }
    if config.memory_budget == 0 || config.memory_budget > k as usize {
        return Err(DdmError::Config(format!("memory budget must lie in [1, {k}]")));
    }
    if !(0.0..=1.0).contains(&config.watermark_low) || !(config.watermark_low <= config.watermark_high) {
        return Err(DdmError::Config("watermarks must satisfy 0 <= low <= high".into()));
    }
    let part = partition(scene, k)?;
    let cam = &scene.camera;
    let per_sub = cam.pixel_count() as f64 / k as f64;
    let low = (config.watermark_low * per_sub).ceil() as usize;
    let high = ((config.watermark_high * per_sub).ceil() as usize).max(1);

    let (tx, rx) = mpsc::channel::<Partial>();
    let start = Instant::now();
    let ctx = DdmContext::new(scene, &part, Bands::ALL, photons, config.audit);
    let mut counters = Counters::default();
    let mut subs: Vec<Sub> = (0..k)
        .map(|_| Sub { slot: Slot::Unloaded, queue: VecDeque::new(), busy: false, ledger: Ledger::default(), flushes: 0, ids: IdCounters::default() })
        .collect();
    let mut in_flight = 0;
    for px in Tile::full(cam).pixels() {
        let ray = generate_primary_ray(cam, px)?;
        if let Some(m) = ctx.inject(ray, &mut counters)? {
            subs[m.destination as usize].queue.push_back(m);
            in_flight += 1;
        }
    }
    let shared = Shared {
        ctx,
        config,
        low,
        high,
        start,
        state: Mutex::new(State {
            subs,
            in_flight,
            active: 0,
            progress: 0,
            error: None,
            events: Vec::new(),
            counters,
            diagnostics: Diagnostics::default(),
            emitted: Vec::new(),
            consumed: Vec::new(),
            shadow_audit: Vec::new(),
            outbox: Vec::new(),
        }),
        wake: Condvar::new(),
        gather: Mutex::new(tx),
        frozen,
    };

    let (gatherer, gather_events) = thread::scope(|s| {
        let gather = s.spawn(|| {
            let mut g = Gatherer::new(cam.width, cam.height, k as usize, Bands::ALL);
            let mut events = Vec::new();
            let ns = || start.elapsed().as_nanos() as u64;
            for p in rx {
                let detail = format!("flush={}", p.flush);
                events.push(Event { ns: ns(), kind: EventKind::Gather, subdomain: p.subdomain, detail: format!("begin {detail}") });
                g.gather(&p);
                events.push(Event { ns: ns(), kind: EventKind::Gather, subdomain: p.subdomain, detail: format!("end {detail}") });
            }
            (g, events)
        });
        let workers: Vec<_> = (0..config.workers).map(|_| s.spawn(|| worker(&shared))).collect();
        for w in workers {
            w.join().expect("ddm worker panicked");
        }
        {
            let mut st = shared.state.lock().unwrap();
            if st.error.is_none() {
                for i in 0..k as usize {
                    if matches!(st.subs[i].slot, Slot::Resident(_)) {
                        // end of run: flushed, not evicted
                        shared.flush(&mut st, i);
                    }
                }
            }
            shared.post(&mut st);
        }
        // closing the channel ends the gather loop
        drop(std::mem::replace(&mut *shared.gather.lock().unwrap(), mpsc::channel().0));
        gather.join().expect("gather thread panicked")
    });

    let mut st = shared.state.into_inner().unwrap();
    if let Some(e) = st.error.take() {
        return Err(e);
    }
    let flushes: Vec<u32> = st.subs.iter().map(|s| s.flushes).collect();
    let image = gatherer.finish(&flushes)?;
    let mut events = st.events;
    events.extend(gather_events);
    events.sort_by_key(|e| e.ns);
    st.emitted.sort_unstable();
    st.consumed.sort_unstable();
    Ok(DdmOutput {
        image,
        events,
        counters: st.counters,
        diagnostics: st.diagnostics,
        emitted: st.emitted,
        consumed: st.consumed,
        shadow_audit: st.shadow_audit,
        partition: part,
    })
}
