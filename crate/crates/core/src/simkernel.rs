//! Deterministic discrete-event engine.
//!
//! Time is an integer count of microseconds. Events that fire at the same
//! instant run in the order they were scheduled. Randomness comes from named
//! substreams derived from a master seed, so a new consumer of randomness
//! never shifts the values seen by existing ones.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A point (or span) on the virtual clock, in microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const MAX: VirtualTime = VirtualTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        VirtualTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        VirtualTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(other.0))
    }
}

impl Add for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0 + rhs.0)
    }
}

impl AddAssign for VirtualTime {
    fn add_assign(&mut self, rhs: VirtualTime) {
        self.0 += rhs.0;
    }
}

impl Sub for VirtualTime {
    type Output = VirtualTime;
    fn sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0 - rhs.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Identifier of a scheduled event, unique within one scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {at}, clock is already at {now}")]
    InPast { at: VirtualTime, now: VirtualTime },
    #[error("run bound {bound} lies before the current time {now}")]
    BoundInPast {
        bound: VirtualTime,
        now: VirtualTime,
    },
}

struct Pending<A> {
    fire_at: VirtualTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Pending<A> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<A> Eq for Pending<A> {}

impl<A> PartialOrd for Pending<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Pending<A> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Event queue plus virtual clock.
pub struct Scheduler<A> {
    now: VirtualTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<A>>,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> fmt::Debug for Scheduler<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("now", &self.now)
            .field("pending", &self.queue.len())
            .finish()
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Scheduler {
            now: VirtualTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedules `action` to run `delay` after the current time.
    pub fn schedule(&mut self, delay: VirtualTime, action: A) -> EventId {
        let at = self.now + delay;
        self.push(at, action)
    }

    /// Schedules `action` at an absolute time, which may not lie in the past.
    pub fn schedule_at(&mut self, at: VirtualTime, action: A) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        Ok(self.push(at, action))
    }

    /// Schedules with a signed microsecond delay; negative delays are rejected.
    pub fn schedule_signed(&mut self, delay_us: i64, action: A) -> Result<EventId, SimError> {
        if delay_us < 0 {
            return Err(SimError::InPast {
                at: VirtualTime(self.now.0.saturating_sub(delay_us.unsigned_abs())),
                now: self.now,
            });
        }
        Ok(self.schedule(VirtualTime(delay_us as u64), action))
    }

    fn push(&mut self, fire_at: VirtualTime, action: A) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending {
            fire_at,
            seq,
            action,
        });
        EventId(seq)
    }

    /// Pops the next event if it fires no later than `bound`, advancing the clock.
    pub fn pop_due(&mut self, bound: VirtualTime) -> Option<(EventId, A)> {
        match self.queue.peek() {
            Some(p) if p.fire_at <= bound => {
                let p = self.queue.pop().expect("peeked");
                debug_assert!(p.fire_at >= self.now);
                self.now = p.fire_at;
                Some((EventId(p.seq), p.action))
            }
            _ => None,
        }
    }

    /// Executes every event with `fire_at <= t_end` through `handler`, which
    /// may schedule further events. Returns the number executed. On return the
    /// clock sits at `t_end`.
    pub fn run_until<F>(&mut self, t_end: VirtualTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Scheduler<A>, EventId, A),
    {
        if t_end < self.now {
            return Err(SimError::BoundInPast {
                bound: t_end,
                now: self.now,
            });
        }
        let mut executed = 0;
        while let Some((id, action)) = self.pop_due(t_end) {
            handler(self, id, action);
            executed += 1;
        }
        self.now = t_end;
        Ok(executed)
    }

    /// Drains the queue without executing, returning the discarded actions in
    /// firing order.
    pub fn drain_pending(&mut self) -> Vec<(VirtualTime, A)> {
        let mut out = Vec::with_capacity(self.queue.len());
        while let Some(p) = self.queue.pop() {
            out.push((p.fire_at, p.action));
        }
        out
    }
}

/// Seeded, label-addressed random substreams.
#[derive(Debug, Clone)]
pub struct RngStreams {
    master: u64,
    streams: BTreeMap<String, ChaCha12Rng>,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams {
            master,
            streams: BTreeMap::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master
    }

    /// The generator for `label`, created on first use from (master seed, label).
    pub fn stream(&mut self, label: &str) -> &mut ChaCha12Rng {
        let master = self.master;
        self.streams
            .entry(label.to_owned())
            .or_insert_with(|| substream(master, label))
    }

    /// One uniform draw in [0, 1) from the `label` substream.
    pub fn draw(&mut self, label: &str) -> f64 {
        self.stream(label).random::<f64>()
    }
}

/// Builds the generator for one substream. Exposed so that pure code (e.g.
/// link id assignment) can derive streams without a [`RngStreams`] registry.
pub fn substream(master: u64, label: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha12Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Reverse;

    #[test]
    fn equal_times_run_fifo() {
        let mut s = Scheduler::new();
        s.schedule(VirtualTime::ZERO, 'a');
        s.schedule(VirtualTime::ZERO, 'b');
        let mut seen = Vec::new();
        s.run_until(VirtualTime::from_secs(1), |_, _, a| seen.push(a))
            .unwrap();
        assert_eq!(seen, vec!['a', 'b']);
    }

    #[test]
    fn delayed_event_fires_at_offset() {
        let mut s = Scheduler::new();
        s.schedule(VirtualTime::from_millis(5), ());
        let mut at = None;
        s.run_until(VirtualTime::from_secs(1), |s, _, ()| at = Some(s.now()))
            .unwrap();
        assert_eq!(at, Some(VirtualTime::from_millis(5)));
    }

    #[test]
    fn empty_queue_moves_clock_to_bound() {
        let mut s: Scheduler<()> = Scheduler::new();
        let n = s.run_until(VirtualTime::from_millis(7), |_, _, _| {}).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.now(), VirtualTime::from_millis(7));
    }

    #[test]
    fn run_until_respects_bound() {
        let mut s = Scheduler::new();
        for t in 1..=3 {
            s.schedule(VirtualTime::from_secs(t), t);
        }
        let n = s.run_until(VirtualTime::from_secs(2), |_, _, _| {}).unwrap();
        assert_eq!(n, 2);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn negative_or_past_scheduling_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.run_until(VirtualTime::from_secs(1), |_, _, _| {}).unwrap();
        assert!(s.schedule_signed(-1, ()).is_err());
        assert!(s.schedule_at(VirtualTime::from_millis(10), ()).is_err());
        assert!(s.run_until(VirtualTime::ZERO, |_, _, _| {}).is_err());
        assert!(s.schedule_signed(0, ()).is_ok());
    }

    #[test]
    fn event_ids_are_unique() {
        let mut s = Scheduler::new();
        let a = s.schedule(VirtualTime::ZERO, ());
        let b = s.schedule(VirtualTime::ZERO, ());
        assert_ne!(a, b);
    }

    fn random_run(seed: u64) -> Vec<(u64, u32)> {
        let mut rng = RngStreams::new(seed);
        let mut s = Scheduler::new();
        for i in 0..10_000u32 {
            let d = (rng.draw("delays") * 1e6) as u64;
            s.schedule(VirtualTime(d), i);
        }
        let mut order = Vec::new();
        s.run_until(VirtualTime::MAX, |s, _, i| order.push((s.now().0, i)))
            .unwrap();
        order
    }

    #[test]
    fn replay_with_same_seed_is_identical() {
        assert_eq!(random_run(7), random_run(7));
        assert_ne!(random_run(7), random_run(8));
    }

    // Reference oracle: a plain (time, insertion index) min-heap with every
    // event known up front, including ones spawned by running events.
    #[test]
    fn spawned_events_match_heap_oracle() {
        #[derive(Clone, Copy)]
        struct Job {
            id: u32,
            spawn: Option<(u64, u32)>,
        }
        let mut rng = RngStreams::new(3);
        let mut jobs = Vec::new();
        for id in 0..2_000u32 {
            let d = (rng.draw("d") * 1000.0) as u64;
            let spawn = if rng.draw("s") < 0.5 {
                Some(((rng.draw("c") * 300.0) as u64, 10_000 + id))
            } else {
                None
            };
            jobs.push((d, Job { id, spawn }));
        }

        let mut s = Scheduler::new();
        for &(d, j) in &jobs {
            s.schedule(VirtualTime(d), j);
        }
        let mut got = Vec::new();
        s.run_until(VirtualTime::MAX, |s, _, j: Job| {
            got.push((s.now().0, j.id));
            if let Some((d, child)) = j.spawn {
                s.schedule(VirtualTime(d), Job { id: child, spawn: None });
            }
        })
        .unwrap();

        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        for &(d, j) in &jobs {
            heap.push(Reverse((d, seq, j.id, j.spawn)));
            seq += 1;
        }
        let mut want = Vec::new();
        while let Some(Reverse((t, _, id, spawn))) = heap.pop() {
            want.push((t, id));
            if let Some((d, child)) = spawn {
                heap.push(Reverse((t + d, seq, child, None)));
                seq += 1;
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn substreams_are_reproducible_and_independent() {
        let mut a = RngStreams::new(11);
        let mut b = RngStreams::new(11);
        for _ in 0..100 {
            a.draw("noise");
        }
        let xa: Vec<f64> = (0..10).map(|_| a.draw("B")).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.draw("B")).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn uniform_mean_within_three_sigma() {
        let mut r = RngStreams::new(99);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.draw("u")).sum::<f64>() / n as f64;
        let sigma = (1.0f64 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");
    }
}
