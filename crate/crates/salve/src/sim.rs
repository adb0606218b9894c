//! A deterministic discrete-event network. Time is virtual, in nanoseconds;
//! every link has a fixed one-way latency, so delivery preserves the order
//! in which a node sent messages to the same peer.
//!
//! A link can be tapped: traffic in either direction is then delivered to
//! the tapping node instead, which may forward, alter, hold, drop or
//! inject messages under any identity.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

pub type NodeId = usize;

pub const NS_PER_MS: u64 = 1_000_000;

pub fn ms_to_ns(ms: f64) -> u64 {
    (ms * NS_PER_MS as f64).round().max(0.0) as u64
}

pub fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / NS_PER_MS as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope<M> {
    pub from: NodeId,
    /// The intended recipient, which differs from the receiving node when
    /// the link is tapped.
    pub to: NodeId,
    pub msg: M,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent<M> {
    Deliver(Envelope<M>),
    Timer(u64),
}

struct Scheduled<M> {
    at: u64,
    seq: u64,
    node: NodeId,
    event: SimEvent<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<M> Eq for Scheduled<M> {}

impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Scheduled<M> {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct SimNetwork<M> {
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled<M>>,
    latency: BTreeMap<(NodeId, NodeId), u64>,
    default_latency: u64,
    taps: BTreeMap<(NodeId, NodeId), NodeId>,
    delivered: u64,
}

impl<M> Default for SimNetwork<M> {
    fn default() -> Self {
        SimNetwork {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            latency: BTreeMap::new(),
            default_latency: 0,
            taps: BTreeMap::new(),
            delivered: 0,
        }
    }
}

impl<M> SimNetwork<M> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ns(&self) -> u64 {
        self.now
    }

    pub fn now_ms(&self) -> f64 {
        ns_to_ms(self.now)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Latency for links without an explicit setting.
    pub fn set_default_latency_ms(&mut self, ms: f64) {
        self.default_latency = ms_to_ns(ms);
    }

    /// Sets the one-way latency in both directions.
    pub fn set_latency_ms(&mut self, a: NodeId, b: NodeId, ms: f64) {
        let ns = ms_to_ns(ms);
        self.latency.insert((a, b), ns);
        self.latency.insert((b, a), ns);
    }

    pub fn latency_ns(&self, from: NodeId, to: NodeId) -> u64 {
        self.latency.get(&(from, to)).copied().unwrap_or(self.default_latency)
    }

    /// Routes all traffic between `a` and `b` through `tap`.
    pub fn tap(&mut self, a: NodeId, b: NodeId, tap: NodeId) {
        self.taps.insert((a, b), tap);
        self.taps.insert((b, a), tap);
    }

    pub fn tapped_by(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        self.taps.get(&(from, to)).copied()
    }

    fn push(&mut self, at: u64, node: NodeId, event: SimEvent<M>) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, node, event });
    }

    /// Sends now.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) {
        self.send_at(from, to, msg, self.now);
    }

    /// Sends when the sender finishes work at `depart` (not before now). A
    /// tapped link delivers to the tap after the sender-to-tap latency.
    pub fn send_at(&mut self, from: NodeId, to: NodeId, msg: M, depart: u64) {
        let depart = depart.max(self.now);
        let receiver = self.tapped_by(from, to).unwrap_or(to);
        let at = depart + self.latency_ns(from, receiver);
        self.push(at, receiver, SimEvent::Deliver(Envelope { from, to, msg }));
    }

    /// Sends as `from` over the link from `via` to `to`, bypassing taps.
    /// This is how a tapping node forwards or forges traffic.
    pub fn inject(&mut self, via: NodeId, from: NodeId, to: NodeId, msg: M, depart: u64) {
        let depart = depart.max(self.now);
        let at = depart + self.latency_ns(via, to);
        self.push(at, to, SimEvent::Deliver(Envelope { from, to, msg }));
    }

    pub fn timer_at(&mut self, node: NodeId, at: u64, token: u64) {
        let at = at.max(self.now);
        self.push(at, node, SimEvent::Timer(token));
    }

    /// Pops the next event and advances the clock to it.
    pub fn next_event(&mut self) -> Option<(NodeId, SimEvent<M>)> {
        let s = self.queue.pop()?;
        debug_assert!(s.at >= self.now);
        self.now = s.at;
        if matches!(s.event, SimEvent::Deliver(_)) {
            self.delivered += 1;
        }
        Some((s.node, s.event))
    }

    /// Time of the next event, if any.
    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|s| s.at)
    }
}

/// A processor with a fixed number of cores serving work first come, first
/// served.
#[derive(Debug, Clone)]
pub struct Cpu {
    free_at: Vec<u64>,
    busy_ns: u64,
}

impl Cpu {
    pub fn new(cores: usize) -> Cpu {
        Cpu { free_at: vec![0; cores.max(1)], busy_ns: 0 }
    }

    /// Runs `cost` nanoseconds of work that becomes ready at `ready`;
    /// returns when it completes.
    pub fn run(&mut self, ready: u64, cost: u64) -> u64 {
        let core = (0..self.free_at.len()).min_by_key(|&i| self.free_at[i]).expect("at least one core");
        let done = self.free_at[core].max(ready) + cost;
        self.free_at[core] = done;
        self.busy_ns += cost;
        done
    }

    pub fn busy_ns(&self) -> u64 {
        self.busy_ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(net: &mut SimNetwork<u32>) -> Vec<(u64, NodeId, SimEvent<u32>)> {
        let mut out = Vec::new();
        while let Some((node, ev)) = net.next_event() {
            out.push((net.now_ns(), node, ev));
        }
        out
    }

    #[test]
    fn latency_and_order() {
        let mut net = SimNetwork::new();
        net.set_latency_ms(0, 1, 5.0);
        net.send(0, 1, 1);
        net.send(0, 1, 2);
        net.send_at(0, 1, 3, ms_to_ns(1.0));
        net.timer_at(0, ms_to_ns(2.0), 9);
        let got = drain(&mut net);
        assert_eq!(got[0], (ms_to_ns(2.0), 0, SimEvent::Timer(9)));
        let msgs: Vec<(u64, u32)> = got[1..]
            .iter()
            .map(|(t, _, e)| match e {
                SimEvent::Deliver(env) => (*t, env.msg),
                SimEvent::Timer(_) => unreachable!(),
            })
            .collect();
        assert_eq!(msgs, [(ms_to_ns(5.0), 1), (ms_to_ns(5.0), 2), (ms_to_ns(6.0), 3)]);
    }

    #[test]
    fn tapped_links_reach_the_tap() {
        let mut net = SimNetwork::new();
        net.set_latency_ms(0, 2, 1.0);
        net.set_latency_ms(2, 1, 1.0);
        net.set_latency_ms(0, 1, 10.0);
        net.tap(0, 1, 2);
        net.send(0, 1, 7);
        let (node, ev) = net.next_event().unwrap();
        assert_eq!(node, 2);
        assert_eq!(net.now_ns(), ms_to_ns(1.0));
        assert_eq!(ev, SimEvent::Deliver(Envelope { from: 0, to: 1, msg: 7 }));
        net.inject(2, 0, 1, 8, net.now_ns());
        let (node, _) = net.next_event().unwrap();
        assert_eq!((node, net.now_ns()), (1, ms_to_ns(2.0)));
        net.send(1, 0, 9);
        assert_eq!(net.next_event().unwrap().0, 2);
    }

    #[test]
    fn cpu_queues_on_busy_cores() {
        let mut cpu = Cpu::new(2);
        assert_eq!(cpu.run(0, 10), 10);
        assert_eq!(cpu.run(0, 10), 10);
        assert_eq!(cpu.run(0, 10), 20);
        assert_eq!(cpu.run(50, 10), 60);
        assert_eq!(cpu.busy_ns(), 40);
    }

    #[test]
    fn clock_never_runs_backwards() {
        let mut net = SimNetwork::new();
        net.timer_at(0, 100, 1);
        net.next_event();
        net.send_at(0, 1, 5u32, 10);
        net.timer_at(0, 20, 2);
        for (t, _, _) in drain(&mut net) {
            assert!(t >= 100);
        }
    }
}
