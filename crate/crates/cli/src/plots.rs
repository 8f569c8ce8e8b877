//! Rank-difference bar data, rank scatter data and their minimal SVG
//! renderings. Output bytes depend only on the input report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bidistill::RankDiffReport;

pub const RANKDIFF_HEADER: &str = "position,user,item,diff\n";
pub const SCATTER_HEADER: &str = "rank_s,rank_t\n";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const PAD: f64 = 20.0;

/// Test interactions sorted by increasing `rank_T − rank_S`.
pub fn rankdiff_csv(report: &RankDiffReport) -> String {
    let mut rows: Vec<_> = report.records.iter().collect();
    rows.sort_by_key(|r| (r.diff, r.user, r.item));
    let mut out = String::from(RANKDIFF_HEADER);
    for (pos, r) in rows.iter().enumerate() {
        writeln!(out, "{pos},{},{},{}", r.user, r.item, r.diff).unwrap();
    }
    out
}

pub fn scatter_csv(report: &RankDiffReport) -> String {
    let mut out = String::from(SCATTER_HEADER);
    for p in &report.scatter {
        writeln!(out, "{},{}", p.rank_s, p.rank_t).unwrap();
    }
    out
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>{title}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
}

/// One bar per test interaction in sorted order, around a zero line.
pub fn rankdiff_svg(diffs_sorted: &[i64]) -> String {
    let mut out = svg_open("rank difference (teacher rank minus student rank)");
    let mid = HEIGHT / 2.0;
    writeln!(
        out,
        "<line x1=\"{PAD}\" y1=\"{mid}\" x2=\"{}\" y2=\"{mid}\" stroke=\"black\"/>",
        WIDTH - PAD
    )
    .unwrap();
    let max = diffs_sorted.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0).max(1) as f64;
    let bar_w = (WIDTH - 2.0 * PAD) / diffs_sorted.len().max(1) as f64;
    for (idx, &d) in diffs_sorted.iter().enumerate() {
        let h = (d.unsigned_abs() as f64 / max) * (mid - PAD);
        let y = if d >= 0 { mid - h } else { mid };
        let fill = if d >= 0 { "steelblue" } else { "indianred" };
        writeln!(
            out,
            "<rect x=\"{:.3}\" y=\"{y:.3}\" width=\"{bar_w:.3}\" height=\"{h:.3}\" fill=\"{fill}\"/>",
            PAD + idx as f64 * bar_w
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Student rank on x, teacher rank on y, both from 1 at the origin.
pub fn scatter_svg(report: &RankDiffReport) -> String {
    let mut out = svg_open("student rank (x) against teacher rank (y)");
    let max = report
        .scatter
        .iter()
        .map(|p| p.rank_s.max(p.rank_t))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sx = (WIDTH - 2.0 * PAD) / max;
    let sy = (HEIGHT - 2.0 * PAD) / max;
    writeln!(
        out,
        "<polyline points=\"{PAD},{PAD} {PAD},{} {},{}\" fill=\"none\" stroke=\"black\"/>",
        HEIGHT - PAD,
        WIDTH - PAD,
        HEIGHT - PAD
    )
    .unwrap();
    for p in &report.scatter {
        writeln!(
            out,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"1\" fill=\"steelblue\" fill-opacity=\"0.4\"/>",
            PAD + (p.rank_s as f64 - 1.0) * sx,
            HEIGHT - PAD - (p.rank_t as f64 - 1.0) * sy
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `rankdiff.csv`, `rankdiff.svg`, `scatter.csv` and `scatter.svg`.
pub fn emit_plots(report: &RankDiffReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = [
        ("rankdiff.csv", rankdiff_csv(report)),
        ("rankdiff.svg", rankdiff_svg(&report.sorted_diffs)),
        ("scatter.csv", scatter_csv(report)),
        ("scatter.svg", scatter_svg(report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bidistill::ranking::{RankDiffRecord, ScatterPoint};

    fn report(diffs: &[i64]) -> RankDiffReport {
        let records: Vec<_> = diffs
            .iter()
            .enumerate()
            .map(|(u, &diff)| RankDiffRecord {
                user: u as u32,
                item: 7,
                diff,
            })
            .collect();
        let mut sorted_diffs = diffs.to_vec();
        sorted_diffs.sort();
        RankDiffReport {
            records,
            sorted_diffs,
            student_win_fraction: 0.0,
            average_rank_difference: 0.0,
            scatter: vec![ScatterPoint { rank_s: 1, rank_t: 3 }, ScatterPoint { rank_s: 2, rank_t: 1 }],
            top_r: 10,
        }
    }

    #[test]
    fn empty_input_gives_header_only_csv() {
        let mut r = report(&[]);
        r.scatter.clear();
        assert_eq!(rankdiff_csv(&r), RANKDIFF_HEADER);
        assert_eq!(scatter_csv(&r), SCATTER_HEADER);
        assert!(rankdiff_svg(&[]).ends_with("</svg>\n"));
    }

    #[test]
    fn two_point_series_renders_two_bars() {
        let svg = rankdiff_svg(&[-2, 5]);
        assert_eq!(svg.matches("<rect ").count(), 3); // background plus two bars
    }

    #[test]
    fn one_row_per_test_interaction_in_sorted_order() {
        let r = report(&[4, -1, 0, 2]);
        let csv = rankdiff_csv(&r);
        let diffs: Vec<i64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(diffs, vec![-1, 0, 2, 4]);
    }

    #[test]
    fn output_is_byte_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let r = report(&[3, -1]);
        emit_plots(&r, a.path()).unwrap();
        emit_plots(&r, b.path()).unwrap();
        for name in ["rankdiff.csv", "rankdiff.svg", "scatter.csv", "scatter.svg"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
    }
}
