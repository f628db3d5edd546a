use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{DailyScore, Method, SummaryRow};
use crate::error::{Error, Result};

/// `question_id,date,cutoff,method,daily_brier`
pub fn write_daily<W: Write>(writer: W, rows: &[DailyScore]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["question_id", "date", "cutoff", "method", "daily_brier"])?;
    for r in rows {
        wtr.write_record([
            r.question_id.clone(),
            r.date.to_string(),
            r.cutoff.to_string(),
            r.method.to_string(),
            r.daily_brier.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<daily>", e))?;
    Ok(())
}

/// `cutoff,method,mmdb`
pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["cutoff", "method", "mmdb"])?;
    for r in rows {
        wtr.write_record([r.cutoff.to_string(), r.method.to_string(), r.mmdb.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn read_summary<R: Read>(reader: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["cutoff", "method", "mmdb"] {
        return Err(Error::MalformedHeader("cutoff,method,mmdb".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{}` in summary", &row[i])))
        };
        out.push(SummaryRow {
            cutoff: num(0)?,
            method: row[1].parse()?,
            mmdb: num(2)?,
        });
    }
    Ok(out)
}

fn colour(method: Method) -> &'static str {
    match method {
        Method::Neural => "#3b6ea8",
        Method::Baseline => "#d08c2e",
        Method::Unweighted => "#555555",
    }
}

/// Grouped bars of MMDB per cutoff for the neural and baseline crowds, with
/// the unweighted crowd drawn as a dashed reference line.
pub fn render_summary_svg(rows: &[SummaryRow]) -> Result<String> {
    let mut cutoffs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method != Method::Unweighted)
        .map(|r| r.cutoff)
        .collect();
    cutoffs.sort_by(f64::total_cmp);
    cutoffs.dedup();
    if cutoffs.is_empty() {
        return Err(Error::Empty("summary has no ranked rows"));
    }
    let unweighted = rows.iter().find(|r| r.method == Method::Unweighted).map(|r| r.mmdb);
    let y_max = rows.iter().map(|r| r.mmdb).fold(0.0_f64, f64::max).max(1e-9) * 1.15;

    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);
    let group_w = plot_w / cutoffs.len() as f64;
    let bar_w = group_w * 0.35;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">MMDB by cutoff (lower is better)</text>"#, w / 2.0);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            w - right,
            left - 6.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    for (g, &c) in cutoffs.iter().enumerate() {
        let x0 = left + g as f64 * group_w + (group_w - 2.0 * bar_w) / 2.0;
        for (b, method) in [Method::Neural, Method::Baseline].into_iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.method == method && r.cutoff == c) else {
                continue;
            };
            let x = x0 + b as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"><title>{method} {c}%: {}</title></rect>"#,
                y(r.mmdb),
                top + plot_h - y(r.mmdb),
                colour(method),
                r.mmdb
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{c}%</text>"#,
            x0 + bar_w,
            h - bottom + 18.0
        );
    }
    if let Some(u) = unweighted {
        let _ = writeln!(
            s,
            r#"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="{}" stroke-dasharray="6 4"/>"#,
            w - right,
            colour(Method::Unweighted),
            y = y(u)
        );
    }
    let legend = [Method::Neural, Method::Baseline, Method::Unweighted];
    for (i, m) in legend.into_iter().enumerate() {
        let x = left + i as f64 * 120.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{m}</text>"#,
            h - 22.0,
            colour(m),
            x + 16.0,
            h - 12.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
