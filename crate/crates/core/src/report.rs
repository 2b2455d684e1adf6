//! Median-over-seeds summaries of a finished matrix and their markdown
//! rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::experiment::{split_fraction_label, ExperimentConfig, Method, ResultRow, RunFailure};

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

fn cell_rows(rows: &[ResultRow], method: Method, percent: u64) -> impl Iterator<Item = &ResultRow> {
    rows.iter()
        .filter(move |r| r.method == method && r.split_percent == percent)
}

pub fn median_ap(rows: &[ResultRow], method: Method, percent: u64) -> Option<f64> {
    median(&cell_rows(rows, method, percent).map(|r| r.eval.mean_ap).collect::<Vec<_>>())
}

pub fn median_steps(rows: &[ResultRow], method: Method, percent: u64) -> Option<f64> {
    median(&cell_rows(rows, method, percent).map(|r| r.steps as f64).collect::<Vec<_>>())
}

/// Median mean AP at each GBA stage boundary, keyed by epoch.
pub fn stage_medians(rows: &[ResultRow], percent: u64) -> BTreeMap<u32, f64> {
    let mut by_epoch: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in cell_rows(rows, Method::Gba, percent) {
        for s in &r.stages {
            by_epoch.entry(s.epoch).or_default().push(s.eval.mean_ap);
        }
    }
    by_epoch
        .into_iter()
        .filter_map(|(e, v)| median(&v).map(|m| (e, m)))
        .collect()
}

/// Published figures for the task each source preset stands in for. They
/// annotate reports only and are never compared against.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub task: &'static str,
    pub oracle: f64,
    pub source_only: f64,
    pub target_only: f64,
    pub fine_tune: f64,
    pub ba: f64,
    pub gba: f64,
    pub stages: [f64; 5],
    pub fine_tune_small: f64,
    pub gba_small: f64,
}

pub fn reference(preset: &str) -> Option<Reference> {
    let common = |task, source_only, fine_tune, ba, gba, stages, fine_tune_small, gba_small| Reference {
        task,
        oracle: 81.22,
        source_only,
        target_only: 67.08,
        fine_tune,
        ba,
        gba,
        stages,
        fine_tune_small,
        gba_small,
    };
    match preset {
        "dense" => Some(common(
            "Waymo -> nuScenes",
            47.52,
            74.03,
            56.31,
            77.55,
            [52.13, 57.81, 58.88, 63.58, 77.55],
            71.72,
            74.22,
        )),
        "medium" => Some(common(
            "PandaSet -> nuScenes",
            48.77,
            72.31,
            70.09,
            74.99,
            [60.98, 65.34, 69.77, 72.45, 74.99],
            69.73,
            69.66,
        )),
        "coarse" => Some(common(
            "ONCE -> nuScenes",
            47.45,
            70.26,
            64.55,
            73.35,
            [57.85, 58.96, 62.86, 68.46, 73.35],
            67.45,
            68.77,
        )),
        _ => None,
    }
}

impl Reference {
    fn for_method(&self, m: Method) -> f64 {
        match m {
            Method::Oracle => self.oracle,
            Method::SourceOnly => self.source_only,
            Method::TargetOnly => self.target_only,
            Method::FineTune => self.fine_tune,
            Method::Ba => self.ba,
            Method::Gba => self.gba,
        }
    }
}

const ANNOTATION: &str = "paper, not reproduced";

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn fmt_ref(r: Option<Reference>, f: impl Fn(&Reference) -> f64) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| format!("{:.2}", f(&r)))
}

/// Renders the markdown report. AP values are shown in percent.
pub fn render_report(cfg: &ExperimentConfig, rows: &[ResultRow], failures: &[RunFailure]) -> String {
    let reference = reference(&cfg.source_preset);
    let main = cfg.split_percent;
    let small = cfg.ablation_percent;
    let mut out = String::new();
    let w = &mut out;

    writeln!(w, "# Experiment report\n").unwrap();
    writeln!(
        w,
        "Source preset `{}`, {} source / {} target / {} validation scenes, seeds {:?}. \
         Values are medians over seeds of mean AP (percent).",
        cfg.source_preset, cfg.source_scenes, cfg.target_scenes, cfg.val_scenes, cfg.seeds
    )
    .unwrap();
    if let Some(r) = reference {
        writeln!(w, "Annotation columns quote the {} task ({ANNOTATION}).", r.task).unwrap();
    }

    writeln!(w, "\n## Methods (labeled split {})\n", split_fraction_label(main)).unwrap();
    writeln!(
        w,
        "| method | seeds | mean AP | AP@0.25 | AP@0.5 | AP@1.0 | AP@2.0 | {ANNOTATION} |"
    )
    .unwrap();
    writeln!(w, "|---|---|---|---|---|---|---|---|").unwrap();
    for &m in &cfg.methods {
        let cell: Vec<&ResultRow> = cell_rows(rows, m, main).collect();
        let per_t = |key: &str| {
            median(
                &cell
                    .iter()
                    .filter_map(|r| r.eval.ap.get(key).copied())
                    .collect::<Vec<_>>(),
            )
        };
        writeln!(
            w,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            m,
            cell.len(),
            fmt_ap(median_ap(rows, m, main)),
            fmt_ap(per_t("0.25")),
            fmt_ap(per_t("0.5")),
            fmt_ap(per_t("1.0")),
            fmt_ap(per_t("2.0")),
            fmt_ref(reference, |r| r.for_method(m)),
        )
        .unwrap();
    }

    writeln!(w, "\n## Batch alternation with and without source reduction\n").unwrap();
    writeln!(w, "| | BA | GBA | GBA - BA | BA ({ANNOTATION}) | GBA ({ANNOTATION}) |").unwrap();
    writeln!(w, "|---|---|---|---|---|---|").unwrap();
    let (ba, gba) = (median_ap(rows, Method::Ba, main), median_ap(rows, Method::Gba, main));
    let diff = ba.zip(gba).map(|(b, g)| g - b);
    writeln!(
        w,
        "| {} | {} | {} | {} | {} | {} |",
        cfg.source_preset,
        fmt_ap(ba),
        fmt_ap(gba),
        fmt_ap(diff),
        fmt_ref(reference, |r| r.ba),
        fmt_ref(reference, |r| r.gba)
    )
    .unwrap();

    writeln!(w, "\n## GBA stage checkpoints\n").unwrap();
    let stages = stage_medians(rows, main);
    let pct = |e: u32| -> String {
        let stage = cfg.schedule.stage_of(e).min(100);
        let left = 100u32.saturating_sub(stage * cfg.schedule.reduce_percent);
        format!("{left}% (epoch {e})")
    };
    let epochs: Vec<u32> = stages.keys().copied().collect();
    let header: Vec<String> = epochs.iter().map(|&e| pct(e)).collect();
    writeln!(w, "| | {} |", header.join(" | ")).unwrap();
    writeln!(w, "|---|{}", "---|".repeat(epochs.len())).unwrap();
    let vals: Vec<String> = epochs.iter().map(|e| fmt_ap(stages.get(e).copied())).collect();
    writeln!(w, "| median mean AP | {} |", vals.join(" | ")).unwrap();
    if let Some(r) = reference {
        if epochs.len() == r.stages.len() {
            let refs: Vec<String> = r.stages.iter().map(|v| format!("{v:.2}")).collect();
            writeln!(w, "| {ANNOTATION} | {} |", refs.join(" | ")).unwrap();
        }
    }

    writeln!(
        w,
        "\n## Smaller labeled split: {} ({})\n",
        split_fraction_label(small),
        split_fraction_label(main)
    )
    .unwrap();
    writeln!(w, "| method | mean AP | {ANNOTATION} |").unwrap();
    writeln!(w, "|---|---|---|").unwrap();
    for &m in &cfg.ablation_methods {
        let note = match m {
            Method::FineTune => fmt_ref(reference, |r| r.fine_tune_small) + &format!(" ({})", fmt_ref(reference, |r| r.fine_tune)),
            Method::Gba => fmt_ref(reference, |r| r.gba_small) + &format!(" ({})", fmt_ref(reference, |r| r.gba)),
            _ => "n/a".into(),
        };
        writeln!(
            w,
            "| {} | {} ({}) | {} |",
            m,
            fmt_ap(median_ap(rows, m, small)),
            fmt_ap(median_ap(rows, m, main)),
            note
        )
        .unwrap();
    }

    writeln!(w, "\n## Optimizer steps (median per run)\n").unwrap();
    writeln!(w, "| method | split | steps |").unwrap();
    writeln!(w, "|---|---|---|").unwrap();
    for (m, p) in cfg.cells() {
        let steps = median_steps(rows, m, p).map_or_else(|| "missing".into(), |s| format!("{s:.0}"));
        writeln!(w, "| {} | {} | {} |", m, split_fraction_label(p), steps).unwrap();
    }
    writeln!(
        w,
        "\nFine-tuning counts both phases. GBA's count shrinks as the source pool is reduced."
    )
    .unwrap();

    if !failures.is_empty() {
        writeln!(w, "\n## Failed runs\n").unwrap();
        for f in failures {
            writeln!(
                w,
                "- {} seed {} split {}: {}",
                f.method,
                f.seed,
                split_fraction_label(f.split_percent),
                f.error
            )
            .unwrap();
        }
    }

    writeln!(
        w,
        "\nTeacher-student baselines are not run: they need unlabeled target data, which this setting excludes."
    )
    .unwrap();
    writeln!(w, "\n## Configuration\n\n```json").unwrap();
    let pretty: serde_json::Value = serde_json::from_slice(&cfg.to_json()).expect("config serializes to JSON");
    writeln!(w, "{}", serde_json::to_string_pretty(&pretty).expect("value serializes")).unwrap();
    writeln!(w, "```").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even_empty() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn references_cover_all_presets() {
        for name in crate::experiment::presets::SOURCE_NAMES {
            assert!(reference(name).is_some());
        }
        assert_eq!(reference("dense").unwrap().gba, 77.55);
        assert_eq!(reference("dense").unwrap().ba, 56.31);
    }

    #[test]
    fn empty_report_marks_missing_cells() {
        let cfg = ExperimentConfig::default();
        let text = render_report(&cfg, &[], &[]);
        assert!(text.contains("missing"));
        assert!(text.contains(ANNOTATION));
        assert!(text.contains("77.55"));
    }
}
