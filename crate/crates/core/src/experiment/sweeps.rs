//! Parameter sweeps over seeds with ordering verdicts.

use serde::{Deserialize, Serialize};

use super::{CellCache, CellResult, CheckLine, CheckStatus, LabConfig, Stats};
use crate::train::DivergenceKind;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Lambda,
    Noise,
    Divergence,
    Depth,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Lambda => "lambda",
            SweepKind::Noise => "noise",
            SweepKind::Divergence => "divergence",
            SweepKind::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub seeds: Vec<u64>,
    pub accuracy: Stats,
    pub cos: Stats,
    pub sis: Stats,
    pub coverage: Stats,
    pub mean_cs: Stats,
    pub runs: Vec<CellResult>,
}

impl SweepCell {
    fn from_runs(value: String, runs: Vec<CellResult>) -> Self {
        let col = |f: &dyn Fn(&CellResult) -> f64| Stats::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            value,
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracy: col(&|r| r.report.accuracy),
            cos: col(&|r| r.cos()),
            sis: col(&|r| r.report.sis.value.unwrap_or(0.0)),
            coverage: col(&|r| r.ledger.coverage),
            mean_cs: col(&|r| r.report.mean_cs.unwrap_or(0.0)),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub grid: Vec<String>,
    pub cells: Vec<SweepCell>,
    /// λ = 0 reference, run by the divergence sweep.
    pub baseline: Option<SweepCell>,
    pub verdicts: Vec<CheckLine>,
    /// Grid points the verdicts needed but the grid lacked.
    pub missing: Vec<String>,
}

impl SweepReport {
    pub fn cell(&self, value: &str) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.value == value)
    }

    /// Cell count over every grid point and seed.
    pub fn run_count(&self) -> usize {
        self.cells.iter().map(|c| c.runs.len()).sum::<usize>() + self.baseline.as_ref().map_or(0, |b| b.runs.len())
    }

    /// Means per grid point as CSV rows, for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,n,accuracy_mean,accuracy_sd,cos_mean,cos_sd,sis_mean,sis_sd,coverage_mean\n");
        for c in self.baseline.iter().chain(&self.cells) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.value,
                c.runs.len(),
                c.accuracy.mean,
                c.accuracy.sd,
                c.cos.mean,
                c.cos.sd,
                c.sis.mean,
                c.sis.sd,
                c.coverage.mean
            ));
        }
        s
    }
}

fn fmt_value(x: f64) -> String {
    format!("{x}")
}

fn variants(kind: SweepKind, lab: &LabConfig) -> Result<Vec<(String, LabConfig)>> {
    let g = &lab.grids;
    let out: Vec<(String, LabConfig)> = match kind {
        SweepKind::Lambda => g
            .lambda
            .iter()
            .map(|&v| {
                let mut c = lab.clone();
                c.train.lambda = v;
                (fmt_value(v), c)
            })
            .collect(),
        SweepKind::Noise => g
            .noise
            .iter()
            .map(|&v| {
                let mut c = lab.clone();
                c.train.operator_noise.noise_rate = v;
                (fmt_value(v), c)
            })
            .collect(),
        SweepKind::Divergence => g
            .divergence
            .iter()
            .map(|&d| {
                let mut c = lab.clone();
                c.train.divergence = d;
                (d.name().to_string(), c)
            })
            .collect(),
        SweepKind::Depth => g
            .depth
            .iter()
            .map(|&d| {
                let mut c = lab.clone();
                c.train.edit_depth = d;
                (d.to_string(), c)
            })
            .collect(),
    };
    if out.is_empty() {
        return Err(Error::Config(format!("{} grid is empty", kind.name())));
    }
    // Duplicate points would share a cache slot across concurrent jobs.
    let mut seen = std::collections::BTreeSet::new();
    for (v, c) in &out {
        if !seen.insert(v.clone()) {
            return Err(Error::Config(format!("{} grid repeats {v}", kind.name())));
        }
        c.validate()?;
    }
    Ok(out)
}

/// λ = 0 variant of `lab`; the divergence setting is irrelevant there.
pub fn baseline_of(lab: &LabConfig) -> LabConfig {
    let mut c = lab.clone();
    c.train.lambda = 0.0;
    c.train.divergence = DivergenceKind::Kl;
    c
}

/// Runs each grid point over `seeds` (cells in parallel) and derives the
/// verdicts for `kind`.
pub fn sweep(kind: SweepKind, lab: &LabConfig, seeds: &[u64], cache: &CellCache) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut points = variants(kind, lab)?;
    let with_baseline = kind == SweepKind::Divergence;
    if with_baseline {
        points.push(("baseline".into(), baseline_of(lab)));
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = par::map_indexed(&jobs, |_, &(p, seed)| {
        let (value, cfg) = &points[p];
        cache
            .get(cfg, &format!("{}-{}", kind.name(), value), seed)
            .map(|c| c.result.clone())
    });
    let mut per_point: Vec<Vec<CellResult>> = vec![Vec::new(); points.len()];
    for ((p, _), r) in jobs.iter().zip(results) {
        per_point[*p].push(r?);
    }
    let mut cells: Vec<SweepCell> = points
        .iter()
        .zip(per_point)
        .map(|((v, _), runs)| SweepCell::from_runs(v.clone(), runs))
        .collect();
    let baseline = if with_baseline { cells.pop() } else { None };
    let grid = cells.iter().map(|c| c.value.clone()).collect();
    let mut report = SweepReport {
        kind,
        grid,
        cells,
        baseline,
        verdicts: Vec::new(),
        missing: Vec::new(),
    };
    verdicts(&mut report, seeds.len() >= lab.checks.min_seeds_for_verdict);
    Ok(report)
}

fn verdicts(r: &mut SweepReport, enough_seeds: bool) {
    let name = format!("sweep-{}", r.kind.name());
    let mut lines = Vec::new();
    match r.kind {
        SweepKind::Lambda => {
            let need = |r: &SweepReport, v: &str, missing: &mut Vec<String>| {
                let c = r.cells.iter().find(|c| c.value.parse::<f64>().ok() == v.parse::<f64>().ok()).cloned();
                if c.is_none() {
                    missing.push(v.to_string());
                }
                c
            };
            let mut missing = Vec::new();
            let (c01, c05, c10) = (need(r, "0.1", &mut missing), need(r, "0.5", &mut missing), need(r, "1", &mut missing));
            r.missing = missing;
            if let (Some(c01), Some(c05)) = (&c01, &c05) {
                lines.push(CheckLine::new(
                    format!("{name} cos(0.5)>cos(0.1)"),
                    CheckStatus::from_bool(c05.cos.mean > c01.cos.mean),
                    format!("cos {} vs {}", c05.cos, c01.cos),
                ));
            }
            if let (Some(c05), Some(c10)) = (&c05, &c10) {
                lines.push(CheckLine::new(
                    format!("{name} acc(1.0)<acc(0.5)"),
                    CheckStatus::from_bool(c10.accuracy.mean < c05.accuracy.mean),
                    format!("accuracy {} vs {}", c10.accuracy, c05.accuracy),
                ));
            }
            if !r.missing.is_empty() {
                lines.push(CheckLine::new(
                    format!("{name} grid"),
                    CheckStatus::Fail,
                    format!("partial report, grid lacks {:?}", r.missing),
                ));
            }
        }
        SweepKind::Noise => {
            let mut sorted: Vec<&SweepCell> = r.cells.iter().collect();
            sorted.sort_by(|a, b| {
                let (x, y) = (a.value.parse::<f64>().unwrap_or(0.0), b.value.parse::<f64>().unwrap_or(0.0));
                x.total_cmp(&y)
            });
            let ok = sorted
                .windows(2)
                .all(|w| w[1].cos.mean <= w[0].cos.mean + w[0].cos.sd.max(w[1].cos.sd));
            let path: Vec<String> = sorted.iter().map(|c| format!("{}:{}", c.value, c.cos)).collect();
            lines.push(CheckLine::new(
                format!("{name} cos non-increasing"),
                CheckStatus::from_bool(ok),
                path.join(" "),
            ));
        }
        SweepKind::Divergence => {
            if let Some(base) = &r.baseline {
                for c in &r.cells {
                    lines.push(CheckLine::new(
                        format!("{name} {} beats baseline", c.value),
                        CheckStatus::from_bool(c.cos.clearly_above(&base.cos)),
                        format!("cos {} vs λ=0 {}", c.cos, base.cos),
                    ));
                }
            }
        }
        SweepKind::Depth => {
            let best = r
                .cells
                .iter()
                .max_by(|a, b| a.cos.mean.total_cmp(&b.cos.mean))
                .map(|c| c.value.clone())
                .unwrap_or_default();
            let all: Vec<String> = r.cells.iter().map(|c| format!("{}:{}", c.value, c.cos)).collect();
            lines.push(CheckLine::new(
                format!("{name} argmax"),
                CheckStatus::Pass,
                format!("best depth {best}; {}", all.join(" ")),
            ));
        }
    }
    // The depth report is informational and survives a single seed.
    if !enough_seeds && r.kind != SweepKind::Depth {
        for l in &mut lines {
            l.status = CheckStatus::Suppressed;
        }
    }
    r.verdicts = lines;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{FlipCounts, Fraction, MetricsReport, ShortcutReliance};
    use crate::train::LedgerSummary;

    fn run(seed: u64, acc: f64, cos: f64) -> CellResult {
        CellResult {
            label: "x".into(),
            seed,
            key: String::new(),
            train_dataset_hash: String::new(),
            eval_dataset_hash: String::new(),
            checkpoint_hash: String::new(),
            epoch_checkpoint_hashes: vec![],
            ledger: LedgerSummary {
                steps: 0,
                forward_passes: 0,
                baseline_forward_passes: 0,
                overhead: 0.0,
                csr_applied: 0,
                examples_after_warm_start: 0,
                coverage: 1.0,
                skip_reasons: Default::default(),
                wall_seconds: 0.0,
                editor_updates: 0,
                final_train_accuracy: None,
            },
            report: MetricsReport {
                n_eval: 100,
                accuracy: acc,
                cos: Fraction {
                    num: 0,
                    den: 0,
                    value: Some(cos),
                },
                cos_excluded: 0,
                sis: Fraction::new(1, 1),
                sis_excluded: 0,
                mean_cs: None,
                mean_comp: None,
                mean_suff: None,
                n_probes: 0,
                ece: 0.0,
                flip_precision: None,
                flip_recall: None,
                flip_counts: FlipCounts::default(),
                sis_kind: String::new(),
            },
            reliance: ShortcutReliance {
                accuracy: acc,
                scrambled_accuracy: acc,
                reliance: 0.0,
            },
        }
    }

    fn report(kind: SweepKind, cells: Vec<(&str, Vec<(f64, f64)>)>) -> SweepReport {
        let cells: Vec<SweepCell> = cells
            .into_iter()
            .map(|(v, rs)| {
                let runs = rs.iter().enumerate().map(|(i, &(a, c))| run(i as u64, a, c)).collect();
                SweepCell::from_runs(v.into(), runs)
            })
            .collect();
        SweepReport {
            kind,
            grid: cells.iter().map(|c| c.value.clone()).collect(),
            cells,
            baseline: None,
            verdicts: vec![],
            missing: vec![],
        }
    }

    #[test]
    fn lambda_verdicts_follow_the_means() {
        let mut r = report(
            SweepKind::Lambda,
            vec![
                ("0.1", vec![(0.9, 0.1), (0.9, 0.12), (0.9, 0.11)]),
                ("0.5", vec![(0.8, 0.6), (0.81, 0.62), (0.79, 0.61)]),
                ("1", vec![(0.5, 0.7), (0.52, 0.7), (0.51, 0.7)]),
            ],
        );
        verdicts(&mut r, true);
        assert!(r.verdicts.iter().all(|v| v.status == CheckStatus::Pass), "{:?}", r.verdicts);
        verdicts(&mut r, false);
        assert!(r.verdicts.iter().all(|v| v.status == CheckStatus::Suppressed));
    }

    #[test]
    fn missing_lambda_points_flag_a_partial_report() {
        let mut r = report(SweepKind::Lambda, vec![("0.3", vec![(0.9, 0.1)])]);
        verdicts(&mut r, true);
        assert_eq!(r.missing.len(), 3);
        assert!(r.verdicts.iter().any(|v| v.status == CheckStatus::Fail));
    }

    #[test]
    fn noise_tolerates_one_sd_of_increase() {
        let mut r = report(
            SweepKind::Noise,
            vec![
                ("0", vec![(0.8, 0.5), (0.8, 0.6), (0.8, 0.7)]),
                ("0.2", vec![(0.8, 0.62), (0.8, 0.7), (0.8, 0.66)]),
                ("0.5", vec![(0.8, 0.3), (0.8, 0.3), (0.8, 0.3)]),
            ],
        );
        verdicts(&mut r, true);
        assert_eq!(r.verdicts[0].status, CheckStatus::Pass);
        r.cells[2] = SweepCell::from_runs("0.5".into(), vec![run(0, 0.8, 0.95), run(1, 0.8, 0.95)]);
        verdicts(&mut r, true);
        assert_eq!(r.verdicts[0].status, CheckStatus::Fail);
    }
}
