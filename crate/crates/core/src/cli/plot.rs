//! Kaplan-Meier step points as CSV and a self-drawn SVG.

use std::fmt::Write as _;

use crate::survstats::KmCurve;

/// Step points of a curve, starting at `(0, 1)`.
pub fn steps(curve: &KmCurve) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 1.0)];
    pts.extend(curve.times.iter().copied().zip(curve.survival.iter().copied()));
    pts
}

pub fn km_csv(curves: &[(&str, &KmCurve)]) -> String {
    let mut out = String::from("group,time,survival,at_risk,events\n");
    for (name, c) in curves {
        writeln!(out, "{name},0,1,,").unwrap();
        for i in 0..c.times.len() {
            writeln!(
                out,
                "{name},{:.17e},{:.17e},{},{}",
                c.times[i], c.survival[i], c.at_risk[i], c.events[i]
            )
            .unwrap();
        }
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 44.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Step polylines for each group, axis ticks, a legend and the log-rank
/// p-value.
pub fn km_svg(curves: &[(&str, &str, &KmCurve)], end_time: f64, p_value: f64) -> String {
    let t_max = if end_time > 0.0 { end_time } else { 1.0 };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |t: f64| LEFT + pw * (t / t_max).min(1.0);
    let y = |s: f64| TOP + ph * (1.0 - s);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    )
    .unwrap();
    for k in 0..=4 {
        let s = k as f64 / 4.0;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{:.2}" x2="{LEFT}" y2="{:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{s:.2}</text>"#,
            LEFT - 4.0,
            y(s),
            y(s),
            LEFT - 6.0,
            y(s) + 4.0
        )
        .unwrap();
    }
    let step = nice_step(t_max);
    let mut t = 0.0;
    while t <= t_max + 1e-9 {
        writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{}" x2="{:.2}" y2="{}" stroke="black"/><text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x(t),
            TOP + ph,
            x(t),
            TOP + ph + 4.0,
            x(t),
            TOP + ph + 16.0,
            format_tick(t)
        )
        .unwrap();
        t += step;
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">time</text>"#,
        LEFT + pw / 2.0,
        H - 8.0
    )
    .unwrap();
    for (i, (name, color, curve)) in curves.iter().enumerate() {
        let mut d = format!("M{:.2} {:.2}", x(0.0), y(1.0));
        for (t, s) in steps(curve).into_iter().skip(1) {
            write!(d, " H{:.2} V{:.2}", x(t), y(s)).unwrap();
        }
        write!(d, " H{:.2}", x(t_max)).unwrap();
        writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#).unwrap();
        let ly = TOP + 14.0 + 14.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            LEFT + pw - 110.0,
            LEFT + pw - 92.0,
            LEFT + pw - 88.0,
            ly + 4.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}">p = {}</text>"#,
        LEFT + 10.0,
        TOP + ph - 10.0,
        format_p(p_value)
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn format_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SurvivalLabel;
    use crate::survstats::kaplan_meier;

    fn curve() -> KmCurve {
        let labels = [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)].map(|(t, e)| SurvivalLabel { time: t, event: e });
        kaplan_meier(&labels)
    }

    #[test]
    fn csv_reproduces_the_estimator() {
        let c = curve();
        let csv = km_csv(&[("low", &c)]);
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[0][1..3], ["0", "1"]);
        let parsed: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
        assert_eq!(parsed, c.survival);
        assert_eq!(parsed, vec![0.75, 0.375, 0.0]);
    }

    #[test]
    fn svg_is_well_formed_and_annotated() {
        let c = curve();
        let svg = km_svg(&[("low risk", "green", &c), ("high risk", "red", &c)], 4.0, 0.0042);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 3);
        assert!(svg.contains("p = 0.0042"));
    }

    #[test]
    fn tick_spacing() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(nice_step(0.7), 0.2);
        assert_eq!(format_tick(0.4), "0.4");
    }
}
