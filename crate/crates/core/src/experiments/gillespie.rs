//! Continuous-time dynamics driven by the same instruction field.
//!
//! Each site rings at rate `(1+lambda) * active(x)`. A ring applies the next
//! unused instruction of that site, so on a stable stop the per-site ring
//! counts are a legal toppling order and must equal the stabilizer odometer.

use serde::Serialize;

use crate::field::InstructionField;
use crate::lattice::{Configuration, JumpTable};
use crate::rng::{CounterRng, Stream};
use crate::topple::{topple_with, Odometer, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GillespieStop {
    /// Time horizon; `f64::INFINITY` runs until stable.
    pub horizon: f64,
    /// Safety bound on events.
    pub max_events: u64,
}

impl GillespieStop {
    pub fn until_stable(max_events: u64) -> Self {
        Self { horizon: f64::INFINITY, max_events }
    }

    pub fn horizon(t: f64) -> Self {
        Self { horizon: t, max_events: u64::MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GillespieTermination {
    Stable,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TransitionKind {
    Sleep { fell_asleep: bool },
    Jump { to: usize },
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub site: usize,
    pub kind: TransitionKind,
}

#[derive(Debug, Clone)]
pub struct GillespieTrace {
    pub events: Vec<TransitionEvent>,
    /// Transitions per site.
    pub counts: Odometer,
    pub config: Configuration,
    pub time: f64,
    pub termination: GillespieTermination,
}

/// Ring rate of a site.
pub fn site_rate(config: &Configuration, lambda: f64, site: usize) -> f64 {
    (1.0 + lambda) * config.get(site).active_count() as f64
}

/// Fenwick tree of active counts, for picking a site proportionally to its rate.
struct Fenwick {
    tree: Vec<u64>,
    top: usize,
}

impl Fenwick {
    fn new(values: impl ExactSizeIterator<Item = u64>) -> Self {
        let n = values.len();
        let mut tree = vec![0u64; n + 1];
        for (i, v) in values.enumerate() {
            tree[i + 1] += v;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        let top = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        Self { tree, top }
    }

    fn add(&mut self, site: usize, delta: i64) {
        let mut i = site + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add(delta as u64);
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest site whose prefix sum exceeds `k`.
    fn find(&self, mut k: u64) -> usize {
        let mut pos = 0;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= k {
                pos = next;
                k -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Runs the continuous-time chain from `config` until stable or `stop`.
pub fn gillespie_run(config: &Configuration, field: &InstructionField, stop: GillespieStop, clock_seed: u64) -> GillespieTrace {
    let lambda = field.lambda();
    let mut config = config.clone();
    let n = config.len();
    let table = JumpTable::new(config.domain(), field.kernel());
    let mut counts = Odometer::zeros(n);
    let mut rng = CounterRng::new(clock_seed, Stream::Gillespie, 0);
    let mut weight: Vec<u64> = config.states().iter().map(|s| s.active_count() as u64).collect();
    let mut fenwick = Fenwick::new(weight.iter().copied());
    let mut sync = |fenwick: &mut Fenwick, config: &Configuration, x: usize| {
        let now = config.get(x).active_count() as u64;
        if now != weight[x] {
            fenwick.add(x, now as i64 - weight[x] as i64);
            weight[x] = now;
        }
    };
    let mut events = Vec::new();
    let mut time = 0.0f64;
    loop {
        let active = config.active_particles();
        if active == 0 {
            return GillespieTrace { events, counts, config, time, termination: GillespieTermination::Stable };
        }
        if events.len() as u64 >= stop.max_events {
            break;
        }
        let rate = (1.0 + lambda) * active as f64;
        let mut next = time + rng.exponential(rate);
        if next <= time {
            next = time.next_up();
        }
        if next > stop.horizon {
            time = stop.horizon;
            break;
        }
        time = next;
        let site = fenwick.find(rng.below(active));
        let effect = topple_with(&mut config, &mut counts, field, &table, site);
        sync(&mut fenwick, &config, site);
        let kind = match effect.outcome {
            Outcome::Sleep { fell_asleep } => TransitionKind::Sleep { fell_asleep },
            Outcome::Moved { to } => {
                sync(&mut fenwick, &config, to);
                TransitionKind::Jump { to }
            }
            Outcome::Exited => TransitionKind::Exit,
        };
        events.push(TransitionEvent { time, site, kind });
    }
    GillespieTrace { events, counts, config, time, termination: GillespieTermination::Truncated }
}
