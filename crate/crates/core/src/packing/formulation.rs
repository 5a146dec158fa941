//! Explicit integer programs for the two packing stages.
//!
//! The branch-and-bound in this module's parent never builds these models;
//! they exist to state the optimization problems in one place, to check any
//! packing against them, and to export them in CPLEX LP format for an
//! external solver.
//!
//! Stage 1 over `B` candidate bins: binary `x[s][b]` (sample in bin), integer
//! `k[a][b]` (padding units of adapter `a` in bin `b`), binary `z[b]` (bin
//! used), minimizing `sum z`. Stage 2 over exactly `B` bins adds binary
//! selectors `y[b]` and a continuous `t`, minimizing `t` subject to
//! `t >= load_b - C(1 - y_b)` and `sum y = 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Microbatch, PackingError};
use crate::workload::SampleRecord;

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Integer,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    MinBins,
    MinSmallestBin,
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub stage: Stage,
    pub bins: usize,
    pub capacity: u64,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    keys: Vec<(String, String)>,
    adapters: Vec<String>,
    paddings: Vec<u32>,
}

struct Builder {
    vars: Vec<Variable>,
    index: BTreeMap<String, usize>,
}

impl Builder {
    fn var(&mut self, name: String, kind: VarKind, lower: f64, upper: f64) -> usize {
        let i = self.vars.len();
        self.index.insert(name.clone(), i);
        self.vars.push(Variable { name, kind, lower, upper });
        i
    }
}

impl MilpModel {
    pub fn min_bins(samples: &[SampleRecord], capacity: u64, paddings: &BTreeMap<String, u32>, bins: usize) -> Result<Self, PackingError> {
        Self::build(Stage::MinBins, samples, capacity, paddings, bins)
    }

    pub fn min_smallest_bin(samples: &[SampleRecord], capacity: u64, paddings: &BTreeMap<String, u32>, bins: usize) -> Result<Self, PackingError> {
        Self::build(Stage::MinSmallestBin, samples, capacity, paddings, bins)
    }

    fn build(stage: Stage, samples: &[SampleRecord], capacity: u64, paddings: &BTreeMap<String, u32>, bins: usize) -> Result<Self, PackingError> {
        if capacity == 0 {
            return Err(PackingError::ZeroCapacity);
        }
        if bins == 0 {
            return Err(PackingError::InfeasibleBinCount { bins });
        }
        let mut adapters: Vec<String> = samples.iter().map(|s| s.adapter_id.clone()).collect();
        adapters.sort();
        adapters.dedup();
        let pads: Vec<u32> = adapters
            .iter()
            .map(|a| paddings.get(a).copied().ok_or_else(|| PackingError::UnknownAdapter(a.clone())))
            .collect::<Result<_, _>>()?;
        let c = capacity as f64;
        let mut bld = Builder {
            vars: Vec::new(),
            index: BTreeMap::new(),
        };
        let x: Vec<Vec<usize>> = (0..samples.len())
            .map(|s| (0..bins).map(|b| bld.var(format!("x_{s}_{b}"), VarKind::Binary, 0.0, 1.0)).collect())
            .collect();
        let k: Vec<Vec<usize>> = (0..adapters.len())
            .map(|a| {
                let ub = (capacity / u64::from(pads[a])) as f64;
                (0..bins).map(|b| bld.var(format!("k_{a}_{b}"), VarKind::Integer, 0.0, ub)).collect()
            })
            .collect();
        let adapter_of: Vec<usize> = samples
            .iter()
            .map(|s| adapters.binary_search(&s.adapter_id).expect("collected"))
            .collect();

        let mut cons = Vec::new();
        for (s, row) in x.iter().enumerate() {
            cons.push(Constraint {
                name: format!("assign_{s}"),
                terms: row.iter().map(|&v| (v, 1.0)).collect(),
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }
        for (a, krow) in k.iter().enumerate() {
            let p = f64::from(pads[a]);
            for b in 0..bins {
                let mut terms: Vec<(usize, f64)> = samples
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| adapter_of[*s] == a)
                    .map(|(s, rec)| (x[s][b], f64::from(rec.length_tokens)))
                    .collect();
                terms.push((krow[b], -p));
                cons.push(Constraint {
                    name: format!("pad_{a}_{b}"),
                    terms,
                    sense: Sense::Le,
                    rhs: 0.0,
                });
            }
        }
        let load_terms = |b: usize, scale: f64| -> Vec<(usize, f64)> {
            k.iter().enumerate().map(|(a, row)| (row[b], scale * f64::from(pads[a]))).collect()
        };

        let objective = match stage {
            Stage::MinBins => {
                let z: Vec<usize> = (0..bins).map(|b| bld.var(format!("z_{b}"), VarKind::Binary, 0.0, 1.0)).collect();
                for b in 0..bins {
                    let mut cap = load_terms(b, 1.0);
                    cap.push((z[b], -c));
                    cons.push(Constraint {
                        name: format!("cap_{b}"),
                        terms: cap,
                        sense: Sense::Le,
                        rhs: 0.0,
                    });
                    let mut used = load_terms(b, -1.0);
                    used.push((z[b], 1.0));
                    cons.push(Constraint {
                        name: format!("used_{b}"),
                        terms: used,
                        sense: Sense::Le,
                        rhs: 0.0,
                    });
                    if b + 1 < bins {
                        cons.push(Constraint {
                            name: format!("order_{b}"),
                            terms: vec![(z[b + 1], 1.0), (z[b], -1.0)],
                            sense: Sense::Le,
                            rhs: 0.0,
                        });
                    }
                }
                z.iter().map(|&v| (v, 1.0)).collect()
            }
            Stage::MinSmallestBin => {
                let y: Vec<usize> = (0..bins).map(|b| bld.var(format!("y_{b}"), VarKind::Binary, 0.0, 1.0)).collect();
                let t = bld.var("t".into(), VarKind::Continuous, 0.0, c);
                for b in 0..bins {
                    cons.push(Constraint {
                        name: format!("cap_{b}"),
                        terms: load_terms(b, 1.0),
                        sense: Sense::Le,
                        rhs: c,
                    });
                    cons.push(Constraint {
                        name: format!("nonempty_{b}"),
                        terms: x.iter().map(|row| (row[b], 1.0)).collect(),
                        sense: Sense::Ge,
                        rhs: 1.0,
                    });
                    let mut sel = load_terms(b, -1.0);
                    sel.push((t, 1.0));
                    sel.push((y[b], -c));
                    cons.push(Constraint {
                        name: format!("select_{b}"),
                        terms: sel,
                        sense: Sense::Ge,
                        rhs: -c,
                    });
                }
                cons.push(Constraint {
                    name: "one_selected".into(),
                    terms: y.iter().map(|&v| (v, 1.0)).collect(),
                    sense: Sense::Eq,
                    rhs: 1.0,
                });
                vec![(t, 1.0)]
            }
        };

        Ok(Self {
            stage,
            bins,
            capacity,
            variables: bld.vars,
            constraints: cons,
            objective,
            keys: samples.iter().map(|s| (s.adapter_id.clone(), s.sample_id.clone())).collect(),
            adapters,
            paddings: pads,
        })
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Checks bounds, integrality and every constraint; returns the objective.
    pub fn check(&self, values: &[f64]) -> Result<f64, String> {
        if values.len() != self.variables.len() {
            return Err(format!("expected {} values, got {}", self.variables.len(), values.len()));
        }
        for (v, &x) in self.variables.iter().zip(values) {
            if x < v.lower - FEAS_TOL || x > v.upper + FEAS_TOL {
                return Err(format!("{} = {x} outside [{}, {}]", v.name, v.lower, v.upper));
            }
            if v.kind != VarKind::Continuous && (x - x.round()).abs() > FEAS_TOL {
                return Err(format!("{} = {x} is not integral", v.name));
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(i, a)| a * values[i]).sum();
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + FEAS_TOL,
                Sense::Ge => lhs >= c.rhs - FEAS_TOL,
                Sense::Eq => (lhs - c.rhs).abs() <= FEAS_TOL,
            };
            if !ok {
                return Err(format!("constraint {} violated: lhs {lhs} vs rhs {}", c.name, c.rhs));
            }
        }
        Ok(self.objective.iter().map(|&(i, a)| a * values[i]).sum())
    }

    /// Variable assignment encoding `packing`, with minimal padding units and,
    /// for stage 2, the smallest bin selected.
    pub fn solution_from_packing(&self, packing: &[Microbatch]) -> Result<Vec<f64>, String> {
        if packing.len() > self.bins {
            return Err(format!("{} bins exceed the model's {}", packing.len(), self.bins));
        }
        let mut values = vec![0.0; self.variables.len()];
        let idx = |name: String| self.var(&name).ok_or_else(|| format!("no variable {name}"));
        let mut loads = vec![0u64; self.bins];
        for (b, mb) in packing.iter().enumerate() {
            for seg in &mb.segments {
                let a = self
                    .adapters
                    .binary_search(&seg.adapter_id)
                    .map_err(|_| format!("unknown adapter {}", seg.adapter_id))?;
                let units = seg.raw_tokens.div_ceil(u64::from(self.paddings[a]));
                values[idx(format!("k_{a}_{b}"))?] = units as f64;
                loads[b] += units * u64::from(self.paddings[a]);
                for s in &seg.samples {
                    let si = self
                        .keys
                        .iter()
                        .position(|(ad, id)| *ad == seg.adapter_id && *id == s.sample_id)
                        .ok_or_else(|| format!("unknown sample {}", s.sample_id))?;
                    values[idx(format!("x_{si}_{b}"))?] = 1.0;
                }
            }
        }
        match self.stage {
            Stage::MinBins => {
                for b in 0..packing.len() {
                    values[idx(format!("z_{b}"))?] = 1.0;
                }
            }
            Stage::MinSmallestBin => {
                let (sel, &small) = loads.iter().enumerate().min_by_key(|&(b, l)| (*l, b)).expect("bins >= 1");
                values[idx(format!("y_{sel}"))?] = 1.0;
                values[idx("t".into())?] = small as f64;
            }
        }
        Ok(values)
    }

    /// CPLEX LP text of the model.
    pub fn to_lp(&self) -> String {
        let name = |i: usize| self.variables[i].name.as_str();
        let expr = |terms: &[(usize, f64)]| {
            let mut s = String::new();
            for (j, &(i, a)) in terms.iter().enumerate() {
                let sign = if a < 0.0 { "-" } else if j > 0 { "+" } else { "" };
                let mag = a.abs();
                let _ = if mag == 1.0 {
                    write!(s, " {sign} {}", name(i))
                } else {
                    write!(s, " {sign} {mag} {}", name(i))
                };
            }
            s
        };
        let mut out = String::from("Minimize\n obj:");
        out.push_str(&expr(&self.objective));
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {}:{} {op} {}", c.name, expr(&c.terms), c.rhs);
        }
        out.push_str("Bounds\n");
        for v in self.variables.iter().filter(|v| v.kind != VarKind::Binary) {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        }
        for (header, kind) in [("General", VarKind::Integer), ("Binary", VarKind::Binary)] {
            let names: Vec<&str> = self.variables.iter().filter(|v| v.kind == kind).map(|v| v.name.as_str()).collect();
            if !names.is_empty() {
                let _ = writeln!(out, "{header}\n {}", names.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}
