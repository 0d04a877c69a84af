//! Per-step measurements, derived rates and CSV output.
//!
//! `cells_per_s = cells · stages / wall`, per step and over the run, where
//! wall time covers only the timestep loop. FLOP figures are analytic:
//! stage launches × cells × per-cell constants.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::hydro::{Mode, RK3_STAGES};

/// Production-code reference: FLOP per timestep over cell count at the
/// largest benchmarked level, `1.68309e12 / 3.8e6`.
pub const REFERENCE_FLOP_PER_CELL_STEP: f64 = 1.68309e12 / 3.8e6;

/// Analytic per-cell, per-stage operation counts of the stage kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopModel {
    /// Both face states of one variable along one axis.
    pub reconstruct: f64,
    /// One Riemann flux along one axis, all variables.
    pub flux: f64,
    /// Flux differences and update, all variables.
    pub update: f64,
    /// Primitive conversions and floor checks.
    pub conversions: f64,
    /// Stage combine, all variables.
    pub combine: f64,
    pub nvar: usize,
}

impl FlopModel {
    pub fn for_mode(mode: &Mode) -> FlopModel {
        match mode {
            // slopes (2 sub), minmod (3), two half-slope states (2 mul, 2 add)
            Mode::Scalar { .. } => FlopModel {
                reconstruct: 9.0,
                flux: 5.0,
                update: 8.0,
                conversions: 0.0,
                combine: 3.0,
                nvar: 1,
            },
            Mode::Euler { .. } => FlopModel {
                reconstruct: 9.0,
                // two physical fluxes with sound speeds, then the Rusanov blend
                flux: 2.0 * 24.0 + 5.0 * 4.0 + 3.0,
                update: 5.0 * 8.0,
                conversions: 12.0,
                combine: 5.0 * 3.0,
                nvar: 5,
            },
        }
    }

    pub fn per_cell_stage(&self) -> f64 {
        3.0 * (self.nvar as f64 * self.reconstruct + self.flux) + self.update + self.conversions + self.combine
    }

    pub fn per_cell_step(&self) -> f64 {
        RK3_STAGES as f64 * self.per_cell_stage()
    }

    /// `cell_stages` is the number of cells processed summed over stages.
    pub fn estimate(&self, cell_stages: u64) -> f64 {
        cell_stages as f64 * self.per_cell_stage()
    }
}

/// Counter deltas of one step, summed over localities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub tasks_spawned: u64,
    pub steals: u64,
    pub launches: u64,
    pub fused_launches: u64,
    pub solo_launches: u64,
    pub parcels_sent: u64,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    /// Pool size after the step, summed over localities.
    pub pool_created: u64,
    pub floors: u64,
}

impl StepCounters {
    pub const LEN: usize = 10;

    pub fn to_array(self) -> [u64; Self::LEN] {
        [
            self.tasks_spawned,
            self.steals,
            self.launches,
            self.fused_launches,
            self.solo_launches,
            self.parcels_sent,
            self.messages_sent,
            self.bytes_sent,
            self.pool_created,
            self.floors,
        ]
    }

    pub fn from_array(a: [u64; Self::LEN]) -> Self {
        StepCounters {
            tasks_spawned: a[0],
            steals: a[1],
            launches: a[2],
            fused_launches: a[3],
            solo_launches: a[4],
            parcels_sent: a[5],
            messages_sent: a[6],
            bytes_sent: a[7],
            pool_created: a[8],
            floors: a[9],
        }
    }

    pub fn add(&mut self, o: &StepCounters) {
        let mut a = self.to_array();
        for (x, y) in a.iter_mut().zip(o.to_array()) {
            *x += y;
        }
        *self = StepCounters::from_array(a);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Time after the step.
    pub t: f64,
    pub dt: f64,
    pub cells: u64,
    pub wall_ms: f64,
    pub counters: StepCounters,
    /// Relative drift of each conserved total after the step.
    pub drift: Vec<f64>,
    /// Wire messages sent during each ghost-exchange pass of the step.
    pub exchange_messages: u64,
}

impl StepRecord {
    pub fn cells_per_s(&self) -> f64 {
        rate(self.cells * RK3_STAGES as u64, self.wall_ms)
    }
}

fn rate(cell_stages: u64, wall_ms: f64) -> f64 {
    if wall_ms > 0.0 {
        cell_stages as f64 / (wall_ms * 1e-3)
    } else {
        0.0
    }
}

/// Median of `values`; the mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `t_ref · n_ref / (t · n)`.
pub fn parallel_efficiency(t_ref: f64, n_ref: usize, t: f64, n: usize) -> f64 {
    t_ref * n_ref as f64 / (t * n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub steps: Vec<StepRecord>,
    /// Worker threads times localities.
    pub processing_units: usize,
    pub flop_model: FlopModel,
    /// Conserved totals at t = 0, then Σ|q|·V at t = 0, per variable.
    pub initial_totals: Vec<f64>,
    pub initial_abs_totals: Vec<f64>,
    pub final_totals: Vec<f64>,
}

impl Metrics {
    pub fn new(
        processing_units: usize,
        flop_model: FlopModel,
        initial_totals: Vec<f64>,
        initial_abs: Vec<f64>,
    ) -> Self {
        Metrics {
            steps: Vec::new(),
            processing_units,
            flop_model,
            final_totals: initial_totals.clone(),
            initial_totals,
            initial_abs_totals: initial_abs,
        }
    }

    /// Relative drift `|T − T₀| / Σ|q₀|·V` per variable.
    pub fn drift_of(&self, totals: &[f64]) -> Vec<f64> {
        totals
            .iter()
            .zip(&self.initial_totals)
            .zip(&self.initial_abs_totals)
            .map(|((t, t0), a)| if *a > 0.0 { (t - t0).abs() / a } else { (t - t0).abs() })
            .collect()
    }

    pub fn step_walls_ms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.wall_ms).collect()
    }

    pub fn median_step_ms(&self) -> Option<f64> {
        median(&self.step_walls_ms())
    }

    /// The first step fills the buffer pool and is reported separately.
    pub fn warmup_step_ms(&self) -> Option<f64> {
        self.steps.first().map(|s| s.wall_ms)
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.steps.iter().map(|s| s.wall_ms).sum()
    }

    pub fn cells_processed(&self) -> u64 {
        self.steps.iter().map(|s| s.cells * RK3_STAGES as u64).sum()
    }

    pub fn cells_per_second(&self) -> f64 {
        rate(self.cells_processed(), self.total_wall_ms())
    }

    pub fn flop_estimate(&self) -> f64 {
        self.flop_model.estimate(self.cells_processed())
    }

    pub fn flops_per_second(&self) -> f64 {
        let ms = self.total_wall_ms();
        if ms > 0.0 {
            self.flop_estimate() / (ms * 1e-3)
        } else {
            0.0
        }
    }

    pub fn totals(&self) -> StepCounters {
        let mut c = StepCounters::default();
        for s in &self.steps {
            c.add(&s.counters);
        }
        c.pool_created = self.steps.last().map_or(0, |s| s.counters.pool_created);
        c
    }

    /// Largest drift over all steps, per variable.
    pub fn max_drift(&self) -> Vec<f64> {
        let mut worst = vec![0.0f64; self.initial_totals.len()];
        for s in &self.steps {
            for (w, d) in worst.iter_mut().zip(&s.drift) {
                *w = w.max(*d);
            }
        }
        worst
    }

    pub fn end_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t)
    }

    /// Efficiency against `baseline`, from median step times.
    pub fn efficiency(&self, baseline: &Metrics) -> Option<f64> {
        Some(parallel_efficiency(
            baseline.median_step_ms()?,
            baseline.processing_units,
            self.median_step_ms()?,
            self.processing_units,
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "# cells_per_s = cells * 3 stages / wall; wall_ms excludes setup, I/O and checkpoints; \
             counters are per-step deltas except pool_created; mass_drift = |M - M0| / sum|q0|V\n",
        );
        out.push_str(CSV_COLUMNS.join(",").as_str());
        out.push('\n');
        for s in &self.steps {
            let c = &s.counters;
            let _ = writeln!(
                out,
                "{},{:e},{:e},{},{:.6},{:.6e},{},{},{},{},{},{:e}",
                s.step,
                s.t,
                s.dt,
                s.cells,
                s.wall_ms,
                s.cells_per_s(),
                c.tasks_spawned,
                c.fused_launches,
                c.parcels_sent,
                c.bytes_sent,
                c.pool_created,
                s.drift.first().copied().unwrap_or(0.0),
            );
        }
        let c = self.totals();
        let _ = writeln!(
            out,
            "summary,{:e},,{},{:.6},{:.6e},{},{},{},{},{},{:e}",
            self.end_time(),
            self.cells_processed(),
            self.total_wall_ms(),
            self.cells_per_second(),
            c.tasks_spawned,
            c.fused_launches,
            c.parcels_sent,
            c.bytes_sent,
            c.pool_created,
            self.max_drift().first().copied().unwrap_or(0.0),
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "step",
    "t",
    "dt",
    "cells",
    "wall_ms",
    "cells_per_s",
    "tasks_spawned",
    "fused_launches",
    "parcels_sent",
    "bytes_sent",
    "pool_created",
    "mass_drift",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(walls: &[f64]) -> Metrics {
        let mut m = Metrics::new(
            1,
            FlopModel::for_mode(&Mode::Scalar {
                velocity: [1.0, 0.0, 0.0],
            }),
            vec![1.0],
            vec![1.0],
        );
        for (n, &w) in walls.iter().enumerate() {
            m.steps.push(StepRecord {
                step: n as u64 + 1,
                t: 0.1 * (n + 1) as f64,
                dt: 0.1,
                cells: 512,
                wall_ms: w,
                counters: StepCounters::default(),
                drift: vec![0.0],
                exchange_messages: 0,
            });
        }
        m
    }

    #[test]
    fn median_and_efficiency() {
        assert_eq!(median(&[2.0, 1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
        assert_eq!(parallel_efficiency(10.0, 1, 2.5, 8), 0.5);
        let m = metrics(&[2.0, 1.0, 3.0]);
        assert_eq!(m.median_step_ms(), Some(2.0));
        assert_eq!(m.cells_processed(), 3 * 3 * 512);
        assert_eq!(metrics(&[]).efficiency(&m), None);
    }

    #[test]
    fn empty_run() {
        let m = metrics(&[]);
        assert!(m.step_walls_ms().is_empty());
        assert_eq!(m.cells_processed(), 0);
        assert_eq!(m.cells_per_second(), 0.0);
    }

    #[test]
    fn csv_shape() {
        let m = metrics(&[4.0]);
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[2].starts_with("summary,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
        assert_eq!(csv, m.to_csv());
        // one step of 512 cells in 4 ms, three stages each
        let rate: f64 = lines[1].split(',').nth(5).unwrap().parse().unwrap();
        assert!((rate - 512.0 * 3.0 / 4e-3).abs() < 1e-3 * rate);
    }

    #[test]
    fn flop_model_is_linear() {
        let f = FlopModel::for_mode(&Mode::Euler { gamma: 1.4 });
        assert_eq!(f.estimate(10), 10.0 * f.per_cell_stage());
        assert!(f.per_cell_step() < REFERENCE_FLOP_PER_CELL_STEP);
        assert!((REFERENCE_FLOP_PER_CELL_STEP - 4.43e5).abs() < 1e3);
    }
}
