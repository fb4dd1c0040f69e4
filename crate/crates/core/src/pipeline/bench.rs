//! Grid benchmark over the step pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{run_step, DurationDist, StepConfig, TensorCache, MIB};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "workers,blob_mib,ipss,iptc,gen_ms_p50,ser_critical_ms,deser_count,step_ms";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub workers: Vec<usize>,
    pub blob_mib: Vec<f64>,
    pub ipss: Vec<bool>,
    pub iptc: Vec<bool>,
    pub dists: Vec<DurationDist>,
    pub repeats: usize,
    /// Everything not swept.
    pub base: StepConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            workers: vec![8],
            blob_mib: vec![2.0, 4.0, 8.0],
            ipss: vec![false, true],
            iptc: vec![false, true],
            dists: vec![DurationDist::Uniform],
            repeats: 3,
            base: StepConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(Error::config("bench needs at least 3 repeats"));
        }
        if [
            self.workers.is_empty(),
            self.blob_mib.is_empty(),
            self.ipss.is_empty(),
            self.iptc.is_empty(),
            self.dists.is_empty(),
        ]
        .contains(&true)
        {
            return Err(Error::config("every bench axis needs at least one value"));
        }
        if self.blob_mib.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::config("blob sizes must be finite and nonnegative"));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Spread {
            median,
            min: v.first().copied().unwrap_or(f64::NAN),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub workers: usize,
    pub blob_mib: f64,
    pub ipss: bool,
    pub iptc: bool,
    pub dist: DurationDist,
    pub gen_ms: Spread,
    pub ser_critical_ms: Spread,
    pub dispatch_ms: Spread,
    pub deser_count: u32,
    pub step_ms: Spread,
    /// Batch hash per repeat.
    pub hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub cells: Vec<BenchCell>,
}

type Group = (usize, u64, DurationDist);

fn group_of(c: &BenchCell) -> Group {
    (c.workers, c.blob_mib.to_bits(), c.dist)
}

impl BenchReport {
    pub fn find(
        &self,
        workers: usize,
        blob_mib: f64,
        dist: DurationDist,
        ipss: bool,
        iptc: bool,
    ) -> Option<&BenchCell> {
        self.cells.iter().find(|c| {
            c.workers == workers && c.blob_mib == blob_mib && c.dist == dist && c.ipss == ipss && c.iptc == iptc
        })
    }

    /// Median step time of the naive cell over that of `cell`.
    pub fn speedup_vs_naive(&self, cell: &BenchCell) -> Option<f64> {
        let base = self.find(cell.workers, cell.blob_mib, cell.dist, false, false)?;
        Some(base.step_ms.median / cell.step_ms.median)
    }

    /// Effect of streaming serialization with the cache flag held fixed.
    pub fn ipss_speedup(&self, cell: &BenchCell) -> Option<f64> {
        let off = self.find(cell.workers, cell.blob_mib, cell.dist, false, cell.iptc)?;
        let on = self.find(cell.workers, cell.blob_mib, cell.dist, true, cell.iptc)?;
        Some(off.step_ms.median / on.step_ms.median)
    }

    /// True when every flag combination in a (workers, blob, distribution)
    /// group produced the same batch hash on each repeat.
    pub fn hashes_consistent(&self) -> bool {
        let mut by_group: BTreeMap<Group, &Vec<String>> = BTreeMap::new();
        self.cells.iter().all(|c| match by_group.get(&group_of(c)) {
            Some(h) => *h == &c.hashes,
            None => {
                by_group.insert(group_of(c), &c.hashes);
                true
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3},{:.3},{},{:.3}",
                c.workers,
                c.blob_mib,
                c.ipss,
                c.iptc,
                c.gen_ms.median,
                c.ser_critical_ms.median,
                c.deser_count,
                c.step_ms.median
            );
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "pipeline benchmark, {} repeats per cell, medians [min, max] in ms\n\n",
            self.repeats
        );
        let _ = writeln!(
            out,
            "{:>7} {:>8} {:>9} {:>5} {:>5} {:>22} {:>22} {:>5} {:>22} {:>8} {:>9}",
            "workers",
            "blob_mib",
            "dist",
            "ipss",
            "iptc",
            "ser_critical",
            "dispatch",
            "deser",
            "step",
            "ipss_x",
            "total_x"
        );
        let fmt = |s: &Spread| format!("{:.1} [{:.1}, {:.1}]", s.median, s.min, s.max);
        let ratio = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:>7} {:>8} {:>9} {:>5} {:>5} {:>22} {:>22} {:>5} {:>22} {:>8} {:>9}",
                c.workers,
                c.blob_mib,
                c.dist.name(),
                c.ipss,
                c.iptc,
                fmt(&c.ser_critical_ms),
                fmt(&c.dispatch_ms),
                c.deser_count,
                fmt(&c.step_ms),
                ratio(self.ipss_speedup(c)),
                ratio(self.speedup_vs_naive(c)),
            );
        }
        let _ = writeln!(
            out,
            "\nbatch content identical across flags: {}",
            if self.hashes_consistent() { "yes" } else { "NO" }
        );
        out
    }
}

/// Runs every grid cell `repeats` times. Repeat `r` uses step id `r`, so all
/// flag combinations see the same rollout durations and contents.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let cache = TensorCache::default();
    let mut cells = Vec::new();
    for &dist in &cfg.dists {
        for &workers in &cfg.workers {
            for &blob_mib in &cfg.blob_mib {
                for &ipss in &cfg.ipss {
                    for &iptc in &cfg.iptc {
                        let mut step_cfg = cfg.base.clone();
                        step_cfg.workers = workers;
                        step_cfg.blob_bytes = (blob_mib * MIB as f64).round() as usize;
                        step_cfg.ipss = ipss;
                        step_cfg.iptc = iptc;
                        step_cfg.cost.dist = dist;
                        let runs = (0..cfg.repeats as u64)
                            .map(|r| {
                                step_cfg.step = r;
                                run_step(&step_cfg, &cache)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let col = |f: fn(&super::StepTiming) -> f64| {
                            Spread::of(&runs.iter().map(|o| f(&o.timing)).collect::<Vec<_>>())
                        };
                        let deser = runs.iter().map(|o| o.timing.deser_count()).max().unwrap_or(0);
                        cells.push(BenchCell {
                            workers,
                            blob_mib,
                            ipss,
                            iptc,
                            dist,
                            gen_ms: col(|t| t.gen_ms),
                            ser_critical_ms: col(|t| t.ser_critical_ms),
                            dispatch_ms: col(|t| t.dispatch_ms),
                            deser_count: deser,
                            step_ms: col(|t| t.step_ms),
                            hashes: runs.into_iter().map(|o| o.batch_hash).collect(),
                        });
                    }
                }
            }
        }
    }
    Ok(BenchReport {
        repeats: cfg.repeats,
        cells,
    })
}
