//! SVG 1.1 rendering of the bifurcation diagram: the first coordinate of
//! every tracked fixed point against learning time, coloured by stability,
//! with events marked.

use hbl_core::fixedpoints::{BifurcationEvent, StabilityClass, Tracking};
use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 50.0;

fn colour(class: StabilityClass) -> &'static str {
    match class {
        StabilityClass::Stable => "#1f77b4",
        StabilityClass::UsefulSaddle => "#ff7f0e",
        StabilityClass::OtherUnstable(_) => "#7f7f7f",
    }
}

pub fn diagram(tracking: &Tracking<f64>, events: &[BifurcationEvent<f64>]) -> String {
    let t0 = *tracking.sample_times.first().unwrap_or(&0.0);
    let t1 = tracking.sample_times.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let mut lo: f64 = -1.0;
    let mut hi: f64 = 1.0;
    for b in &tracking.branches {
        for s in &b.samples {
            lo = lo.min(s.point.location[0]);
            hi = hi.max(s.point.location[0]);
        }
    }
    let px = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let py = |x: f64| HEIGHT - MARGIN - (x - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">t</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="14" text-anchor="middle">x1</text>"#,
        HEIGHT / 2.0
    );
    for (v, anchor) in [(t0, "start"), (t1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="{anchor}">{v}</text>"#,
            px(v),
            HEIGHT - MARGIN + 16.0
        );
    }
    for v in [lo, hi] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            py(v) + 4.0
        );
    }

    // One polyline per run of equal class along each branch.
    for b in &tracking.branches {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let mut class = b.samples[0].point.stability_class;
        let flush = |s: &mut String, run: &[(f64, f64)], class: StabilityClass| {
            if run.len() < 2 {
                return;
            }
            let pts: Vec<String> = run.iter().map(|&(t, x)| format!("{:.2},{:.2}", px(t), py(x))).collect();
            let dash = if class == StabilityClass::Stable {
                ""
            } else {
                r#" stroke-dasharray="4,3""#
            };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                pts.join(" "),
                colour(class)
            );
        };
        for smp in &b.samples {
            let c = smp.point.stability_class;
            if c != class {
                let last = run.last().copied();
                flush(&mut s, &run, class);
                run.clear();
                run.extend(last);
                class = c;
            }
            run.push((smp.t, smp.point.location[0]));
        }
        flush(&mut s, &run, class);
    }
    for e in events {
        for p in &e.participants {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="#e377c2" stroke-width="1.5"><title>{} t={}</title></circle>"##,
                px(e.t_star),
                py(p.location[0]),
                e.kind.label(),
                e.t_star
            );
        }
    }
    let _ = writeln!(s, "</svg>");
    s
}
