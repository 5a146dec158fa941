//! One-forward-one-backward event timing for a stream of units.
//!
//! Stage `s` of `S` runs `min(S - s - 1, M)` warm-up forwards, then
//! alternates forward and backward, then drains the remaining backwards.
//! A forward on stage `s` waits for the same unit's forward on `s - 1`; a
//! backward waits for the unit's backward on `s + 1` (or its own forward on
//! the last stage). Each stage runs its ops in that fixed order, so the
//! timeline follows from the recurrence `start = max(stage free, dependency)`.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Unit {
    /// Forward seconds on a stage with multiplier 1.
    pub forward: f64,
    pub noop: bool,
    /// Position in the caller's stream, used in traces.
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Op {
    F,
    B,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub stage: usize,
    pub op: Op,
    pub unit: usize,
    pub start: f64,
    pub end: f64,
}

impl std::fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.op {
            Op::F => "F",
            Op::B => "B",
            Op::N => "N",
        };
        write!(
            f,
            "stage={} op={op} unit={} start={:.9} end={:.9}",
            self.stage, self.unit, self.start, self.end
        )
    }
}

pub(crate) struct Run {
    pub end: f64,
    pub busy: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Pass {
    Fwd(usize),
    Bwd(usize),
}

fn stage_order(stage: usize, stages: usize, m: usize) -> Vec<Pass> {
    let warm = (stages - stage - 1).min(m);
    let mut ops = Vec::with_capacity(2 * m);
    ops.extend((0..warm).map(Pass::Fwd));
    for i in 0..m - warm {
        ops.push(Pass::Fwd(warm + i));
        ops.push(Pass::Bwd(i));
    }
    ops.extend((m - warm..m).map(Pass::Bwd));
    ops
}

/// Times one flushed 1F1B run that starts at `start` with every stage idle.
pub(crate) fn run_1f1b(
    units: &[Unit],
    multipliers: &[f64],
    backward_ratio: f64,
    start: f64,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> Run {
    let stages = multipliers.len();
    let m = units.len();
    let mut busy = vec![0.0; stages];
    if m == 0 {
        return Run { end: start, busy };
    }
    let orders: Vec<Vec<Pass>> = (0..stages).map(|s| stage_order(s, stages, m)).collect();
    let mut fwd_done = vec![f64::NAN; stages * m];
    let mut bwd_done = vec![f64::NAN; stages * m];
    let mut free = vec![start; stages];
    let mut next = vec![0usize; stages];
    let mut remaining = 2 * m * stages;
    while remaining > 0 {
        let mut progressed = false;
        for s in 0..stages {
            while let Some(&op) = orders[s].get(next[s]) {
                let (i, dep) = match op {
                    Pass::Fwd(i) => (i, if s == 0 { start } else { fwd_done[(s - 1) * m + i] }),
                    Pass::Bwd(i) => (
                        i,
                        if s + 1 == stages {
                            fwd_done[s * m + i]
                        } else {
                            bwd_done[(s + 1) * m + i]
                        },
                    ),
                };
                if dep.is_nan() {
                    break;
                }
                let u = units[i];
                let fwd = u.forward * multipliers[s];
                let dur = match op {
                    Pass::Fwd(_) => fwd,
                    Pass::Bwd(_) => fwd * backward_ratio,
                };
                let t0 = free[s].max(dep);
                let t1 = t0 + dur;
                match op {
                    Pass::Fwd(_) => fwd_done[s * m + i] = t1,
                    Pass::Bwd(_) => bwd_done[s * m + i] = t1,
                }
                free[s] = t1;
                if !u.noop {
                    busy[s] += dur;
                }
                if let Some(t) = trace.as_deref_mut() {
                    let kind = match (u.noop, op) {
                        (true, _) => Op::N,
                        (false, Pass::Fwd(_)) => Op::F,
                        (false, Pass::Bwd(_)) => Op::B,
                    };
                    t.push(TraceEvent {
                        stage: s,
                        op: kind,
                        unit: u.label,
                        start: t0,
                        end: t1,
                    });
                }
                next[s] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        assert!(progressed, "1F1B dependency cycle");
    }
    let end = free.iter().copied().fold(start, f64::max);
    Run { end, busy }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(m: usize, f: f64) -> Vec<Unit> {
        (0..m).map(|i| Unit { forward: f, noop: false, label: i }).collect()
    }

    #[test]
    fn single_unit_round_trip() {
        let r = run_1f1b(&uniform(1, 1.0), &[1.0; 3], 2.0, 0.0, None);
        assert!((r.end - 9.0).abs() < 1e-12);
        assert_eq!(r.busy, vec![3.0; 3]);
    }

    #[test]
    fn order_has_every_op_once() {
        for s in 0..4 {
            for m in 0..7 {
                let ops = stage_order(s, 4, m);
                assert_eq!(ops.len(), 2 * m);
            }
        }
    }

    #[test]
    fn causality_in_trace() {
        let units: Vec<Unit> = (0..6)
            .map(|i| Unit {
                forward: 1.0 + (i % 3) as f64,
                noop: i == 2,
                label: i,
            })
            .collect();
        let mut t = Vec::new();
        run_1f1b(&units, &[1.0, 1.5, 1.0], 2.0, 0.0, Some(&mut t));
        let find = |s: usize, u: usize, back: bool| {
            t.iter()
                .filter(|e| e.stage == s && e.unit == u)
                .nth(usize::from(back))
                .copied()
                .unwrap()
        };
        for u in 0..6 {
            for s in 1..3 {
                assert!(find(s, u, false).start >= find(s - 1, u, false).end);
                assert!(find(s - 1, u, true).start >= find(s, u, true).end);
            }
            assert!(find(2, u, true).start >= find(2, u, false).end);
        }
        assert!(t.iter().filter(|e| e.unit == 2).all(|e| e.op == Op::N));
        assert_eq!(
            t[0].to_string(),
            "stage=0 op=F unit=0 start=0.000000000 end=1.000000000"
        );
    }
}
