//! Component ablation: commutation, preservation and bench suites with one
//! component swapped for its baseline, reported against the full engine.

use crate::bench::{run_kpi, BenchError, EngineFlags, WorkloadConfig};
use crate::commute::{measure_all, CommutationRow, CommuteError, Component, Composition, MeasureConfig, Projection};
use crate::preserve::{run_checks, PreservationReport, PreserveConfig};

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Commute(#[from] CommuteError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub workload: WorkloadConfig,
    pub horizon: usize,
    pub reps: usize,
    pub preserve: PreserveConfig,
}

impl AblationConfig {
    pub fn new(workload: WorkloadConfig, horizon: usize, reps: usize) -> Self {
        let preserve = PreserveConfig {
            seed: workload.seed,
            ..Default::default()
        };
        Self {
            workload,
            horizon,
            reps,
            preserve,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    /// `None` for the full engine.
    pub component: Option<Component>,
    pub preservation: PreservationReport,
    pub commutation: Vec<CommutationRow>,
    pub wa: f64,
    pub p99_5_ms: f64,
    pub wa_delta: f64,
    pub p99_5_delta_ms: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "component,preservation_rate,nc_projections,wa,wa_delta,p99_5_ms,p99_5_delta_ms";

    pub fn name(&self) -> &'static str {
        self.component.map_or("none", Component::as_str)
    }

    /// Projections whose non-commutation rate CI excludes zero.
    pub fn nc_projections(&self) -> Vec<Projection> {
        self.commutation.iter().filter(|r| r.non_commuting()).map(|r| r.projection).collect()
    }

    pub fn csv_row(&self) -> String {
        let nc: Vec<_> = self.nc_projections().iter().map(|p| p.label()).collect();
        format!(
            "{},{:.6},{},{:.6},{:+.6},{:.3},{:+.3}",
            self.name(),
            self.preservation.rate(),
            if nc.is_empty() { "none".into() } else { nc.join(";") },
            self.wa,
            self.wa_delta,
            self.p99_5_ms,
            self.p99_5_delta_ms
        )
    }

    pub fn summary_line(&self) -> String {
        let nc: Vec<_> = self.nc_projections().iter().map(|p| p.label()).collect();
        format!(
            "ablate {}: preservation {}/{}, non-commuting [{}], WA {:.4} ({:+.4}), p99.5 {:.3} ms ({:+.3})",
            self.name(),
            self.preservation.passed(),
            self.preservation.checks.len(),
            nc.join(","),
            self.wa,
            self.wa_delta,
            self.p99_5_ms,
            self.p99_5_delta_ms
        )
    }
}

fn run_one(component: Option<Component>, cfg: &AblationConfig) -> Result<AblationRow, AblationError> {
    let (composition, flags) = match component {
        None => (Composition::FULL, EngineFlags::default()),
        Some(c) => (Composition::without(c), EngineFlags::without(c)),
    };
    let commutation = measure_all(&MeasureConfig::new(cfg.horizon, cfg.reps, cfg.workload.seed, composition))?;
    let preservation = run_checks(&composition, &cfg.preserve);
    let kpi = run_kpi(&cfg.workload, flags)?;
    Ok(AblationRow {
        component,
        preservation,
        commutation,
        wa: kpi.write_amplification.mean,
        p99_5_ms: kpi.latency_p99_5.mean,
        wa_delta: 0.0,
        p99_5_delta_ms: 0.0,
    })
}

/// The full engine followed by one row per requested component, with
/// deltas taken against the full engine.
pub fn run_ablation(components: &[Component], cfg: &AblationConfig) -> Result<Vec<AblationRow>, AblationError> {
    let full = run_one(None, cfg)?;
    let mut rows = vec![full];
    for c in components {
        let mut r = run_one(Some(*c), cfg)?;
        r.wa_delta = r.wa - rows[0].wa;
        r.p99_5_delta_ms = r.p99_5_ms - rows[0].p99_5_ms;
        rows.push(r);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{}\n", AblationRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AblationConfig {
        let workload = WorkloadConfig {
            n: 300,
            m: 2,
            warmup_ops: 200,
            window_ops: 1500,
            trials: 2,
            segment_bytes: 256 * 1024,
            ..Default::default()
        };
        let mut cfg = AblationConfig::new(workload, 40, 30);
        cfg.preserve = PreserveConfig {
            sequences: 4,
            steps: 24,
            attempts: 200,
            stress_ops: 8_000,
            ..cfg.preserve
        };
        cfg
    }

    #[test]
    fn cas_and_ownership_ablations() {
        let rows = run_ablation(&[Component::Cas, Component::Ownership], &tiny()).unwrap();
        assert_eq!(rows[0].preservation.passed(), 6);
        assert_eq!(rows[0].wa_delta, 0.0);
        let cas = &rows[1];
        let content = cas.commutation.iter().find(|r| r.projection == Projection::Content).unwrap();
        assert!(content.rate > 0.0);
        assert!(cas.wa_delta > 0.0);
        assert_eq!(cas.preservation.passed(), 4);
        let own = &rows[2];
        for p in [Projection::Order, Projection::Ownership] {
            assert!(own.commutation.iter().find(|r| r.projection == p).unwrap().rate > 0.0);
        }
        assert_eq!(ablation_csv(&rows).lines().count(), 4);
    }
}
