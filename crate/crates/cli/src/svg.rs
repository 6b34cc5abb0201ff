//! Self-contained SVG plots. Every number is printed with a fixed precision so
//! the text is a pure function of the data.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 5] = ["#d7191c", "#fdae61", "#ffffbf", "#abd9e9", "#2c7bb6"];
const FOLD_COLOURS: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];
const MISSING: &str = "#9e9e9e";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick label precision that keeps adjacent ticks distinct.
fn tick_decimals(step: f64) -> usize {
    if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let r = raw / magnitude;
    let nice = if r <= 1.0 {
        1.0
    } else if r <= 2.0 {
        2.0
    } else if r <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * magnitude
}

/// Linear map from a data rectangle onto the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    out: String,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64), title: &str, x_label: &str, y_label: &str) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let mut frame = Self {
            x: widen(x),
            y: widen(y),
            out: String::new(),
        };
        let o = &mut frame.out;
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
            HEIGHT - 15.0,
            escape(x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
            TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
            escape(y_label)
        );
        frame.axes();
        frame
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self) {
        let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
        let mut o = String::new();
        let _ = writeln!(
            o,
            r##"<path d="M{LEFT:.1},{TOP:.1} V{y0:.1} H{:.1}" fill="none" stroke="#333"/>"##,
            WIDTH - RIGHT
        );
        for (lo, hi, horizontal) in [(self.x.0, self.x.1, true), (self.y.0, self.y.1, false)] {
            let step = nice_step(hi - lo);
            let decimals = tick_decimals(step);
            let mut t = (lo / step).ceil() * step;
            while t <= hi + step * 1e-9 {
                if horizontal {
                    let p = self.px(t);
                    let _ = writeln!(
                        o,
                        r##"<line x1="{p:.1}" y1="{y0:.1}" x2="{p:.1}" y2="{:.1}" stroke="#333"/><text x="{p:.1}" y="{:.1}" text-anchor="middle">{t:.decimals$}</text>"##,
                        y0 + 5.0,
                        y0 + 19.0
                    );
                } else {
                    let p = self.py(t);
                    let _ = writeln!(
                        o,
                        r##"<line x1="{x0:.1}" y1="{p:.1}" x2="{:.1}" y2="{p:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end">{t:.decimals$}</text>"##,
                        x0 - 5.0,
                        x0 - 8.0,
                        p + 4.0
                    );
                }
                t += step;
            }
        }
        self.out.push_str(&o);
    }

    fn polyline(&mut self, xs: &[f64], ys: &[f64], stroke: &str, width: f64) {
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.out,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width:.1}"/>"#,
            points.join(" ")
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, colour)) in entries.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 130.0;
            let _ = writeln!(
                self.out,
                r##"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{colour}" stroke="#333"/><text x="{:.1}" y="{:.1}">{}</text>"##,
                y - 9.0,
                x + 15.0,
                y,
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// One ROC curve per fold, with the chance diagonal.
pub fn roc(curves: &[Option<(Vec<f64>, Vec<f64>)>]) -> String {
    let mut f = Frame::new((0.0, 1.0), (0.0, 1.0), "Out-of-fold ROC", "false positive rate", "true positive rate");
    f.polyline(&[0.0, 1.0], &[0.0, 1.0], "#bbbbbb", 1.0);
    let mut legend = Vec::new();
    for (fold, curve) in curves.iter().enumerate() {
        let colour = FOLD_COLOURS[fold % FOLD_COLOURS.len()];
        if let Some((fpr, tpr)) = curve {
            f.polyline(fpr, tpr, colour, 1.5);
            legend.push((format!("fold {fold}"), colour));
        }
    }
    f.legend(&legend);
    f.finish()
}

/// Bars over equal-width bins of [0, 1].
pub fn histogram(counts: &[usize], title: &str, x_label: &str) -> String {
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut f = Frame::new((0.0, 1.0), (0.0, top), title, x_label, "traps");
    let width = 1.0 / counts.len() as f64;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x0, x1) = (f.px(i as f64 * width), f.px((i + 1) as f64 * width));
        let (y0, y1) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            f.out,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#4a7ab5" stroke="white"/>"##,
            x1 - x0,
            y1 - y0
        );
    }
    f.finish()
}

/// A trap for the score map; `score` is `None` outside T*.
pub struct MapPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub score: Option<f64>,
}

/// Upper edges of the first four quintile classes.
pub fn quintile_breaks(scores: &[f64]) -> [f64; 4] {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    std::array::from_fn(|i| trapscore_core::causal::quantile(&s, (i + 1) as f64 / 5.0))
}

fn quintile(score: f64, breaks: &[f64; 4]) -> usize {
    breaks.iter().filter(|&&b| score > b).count()
}

/// Longitude/latitude scatter coloured by score quintile.
pub fn score_map(points: &[MapPoint]) -> String {
    let bounds = |v: Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-3);
        (lo - pad, hi + pad)
    };
    let x = bounds(points.iter().map(|p| p.longitude).collect());
    let y = bounds(points.iter().map(|p| p.latitude).collect());
    let mut f = Frame::new(x, y, "Trap scores", "longitude", "latitude");
    let scored: Vec<f64> = points.iter().filter_map(|p| p.score).collect();
    let breaks = (!scored.is_empty()).then(|| quintile_breaks(&scored));
    // unscored traps first so scored ones sit on top
    for pass in [false, true] {
        for p in points.iter().filter(|p| p.score.is_some() == pass) {
            let colour = match (p.score, &breaks) {
                (Some(s), Some(b)) => PALETTE[quintile(s, b)],
                _ => MISSING,
            };
            let _ = writeln!(
                f.out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{colour}" stroke="#333" stroke-width="0.5"/>"##,
                f.px(p.longitude),
                f.py(p.latitude)
            );
        }
    }
    let mut legend: Vec<(String, &str)> = (0..5).map(|q| (format!("quintile {}", q + 1), PALETTE[q])).collect();
    legend.push(("no score".into(), MISSING));
    f.legend(&legend);
    f.finish()
}

/// Dose-response curve with a shaded μ̂ ± 1.96·se band when available.
pub fn adrf(exposure: &str, grid: &[f64], mu: &[f64], se: Option<&[f64]>) -> String {
    let band: Option<(Vec<f64>, Vec<f64>)> = se.map(|se| {
        (
            mu.iter().zip(se).map(|(m, s)| m - 1.96 * s).collect(),
            mu.iter().zip(se).map(|(m, s)| m + 1.96 * s).collect(),
        )
    });
    let (lower, upper) = band.clone().unwrap_or_else(|| (mu.to_vec(), mu.to_vec()));
    let lo = lower.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let x = (grid[0].min(grid[grid.len() - 1]), grid[0].max(grid[grid.len() - 1]));
    let mut f = Frame::new(x, (lo - pad, hi + pad), &format!("Dose response: {exposure}"), exposure, "mean score");
    if let Some((lower, upper)) = &band {
        let mut d = String::new();
        for (i, (x, y)) in grid.iter().zip(upper).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, f.px(*x), f.py(*y));
        }
        for (x, y) in grid.iter().zip(lower).rev() {
            let _ = write!(d, "L{:.2},{:.2} ", f.px(*x), f.py(*y));
        }
        let _ = writeln!(f.out, r##"<path d="{}Z" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##, d);
    }
    f.polyline(grid, mu, "#08519c", 2.0);
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_the_range() {
        assert_eq!(nice_step(1.0), 0.2);
        assert_eq!(nice_step(18000.0), 5000.0);
        assert_eq!(tick_decimals(0.2), 1);
        assert_eq!(tick_decimals(0.05), 2);
    }

    #[test]
    fn quintiles_split_evenly() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let breaks = quintile_breaks(&scores);
        let mut counts = [0; 5];
        for &s in &scores {
            counts[quintile(s, &breaks)] += 1;
        }
        assert_eq!(counts, [20; 5]);
    }

    #[test]
    fn band_is_drawn_only_with_errors() {
        let grid = [0.0, 0.5, 1.0];
        let mu = [0.2, 0.4, 0.6];
        assert!(adrf("x", &grid, &mu, Some(&[0.1, 0.1, 0.1])).contains("fill-opacity"));
        let plain = adrf("x", &grid, &mu, None);
        assert!(!plain.contains("fill-opacity"));
        assert!(plain.ends_with("</svg>\n"));
    }

    #[test]
    fn labels_are_escaped() {
        assert!(adrf("a<b", &[0.0, 1.0], &[0.0, 1.0], None).contains("a&lt;b"));
    }
}
