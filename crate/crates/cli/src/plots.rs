//! Static SVG figures built by hand; nothing here needs more than lines,
//! dots, polygons and text.

use std::fmt::Write;

use panelvar_core::diagnostics::ParamSummary;
use panelvar_core::evaluation::ForecastResult;
use panelvar_core::irf::IrfResult;
use panelvar_core::{Response, N_RESPONSES};

const BLUE: &str = "#1f5fbf";
const RED: &str = "#c0392b";
const GREY: &str = "#777777";
const BAND: &str = "#9ecae1";

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg { width, height, body: String::new() }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, w: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{w}"/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, w: f64) {
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{w}"/>"#,
            points(pts)
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str) {
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}" stroke="none"/>"#, points(pts));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#bbbbbb"/>"##
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#,
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn points(pts: &[(f64, f64)]) -> String {
    pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps a data range onto a pixel rectangle.
#[derive(Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xlim: (f64, f64),
    ylim: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xlim.0) / (self.xlim.1 - self.xlim.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.ylim.0) / (self.ylim.1 - self.ylim.0) * self.h
    }
}

/// Padded range covering `values`; never empty.
fn limits(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

/// 4 × 4 grid: row = responding variable, column = shocked variable.
pub fn irf_grid(irf: &IrfResult) -> String {
    let (cell, margin) = (220.0, 50.0);
    let mut svg = Svg::new(margin + N_RESPONSES as f64 * cell, margin + N_RESPONSES as f64 * cell);
    for i in 0..N_RESPONSES {
        for j in 0..N_RESPONSES {
            let bands: Vec<(f64, f64, f64)> = (0..=irf.horizon).map(|h| irf.band(h, i, j)).collect();
            let f = Frame {
                x0: margin + j as f64 * cell + 10.0,
                y0: margin + i as f64 * cell + 10.0,
                w: cell - 20.0,
                h: cell - 30.0,
                xlim: (0.0, irf.horizon.max(1) as f64),
                ylim: limits(bands.iter().flat_map(|b| [b.1, b.2, 0.0])),
            };
            svg.rect(f.x0, f.y0, f.w, f.h);
            let mut poly: Vec<(f64, f64)> = bands.iter().enumerate().map(|(h, b)| (f.x(h as f64), f.y(b.2))).collect();
            poly.extend(bands.iter().enumerate().rev().map(|(h, b)| (f.x(h as f64), f.y(b.1))));
            svg.polygon(&poly, BAND);
            svg.line(f.x0, f.y(0.0), f.x0 + f.w, f.y(0.0), GREY, 0.8);
            let mean: Vec<(f64, f64)> = bands.iter().enumerate().map(|(h, b)| (f.x(h as f64), f.y(b.0))).collect();
            svg.polyline(&mean, BLUE, 1.5);
            svg.text(f.x0 + f.w / 2.0, f.y0 + f.h + 14.0, 9.0, "middle", "weeks");
        }
        let r = Response::ALL[i].label();
        svg.text(margin + i as f64 * cell + cell / 2.0, margin - 12.0, 12.0, "middle", &format!("shock: {r}"));
        svg.text(4.0, margin + i as f64 * cell + cell / 2.0, 12.0, "start", r);
    }
    svg.text(margin, 16.0, 13.0, "start", &format!("{} impulse responses, mean and 95% CrI", irf.kind.label().to_uppercase()));
    svg.finish()
}

/// Dot-and-whisker plot of coefficient summaries in two columns (changes,
/// levels); significant effects are coloured by sign.
pub fn coefficient_forest(summaries: &[ParamSummary]) -> String {
    let cols: [(&str, &str); 2] = [("delta[", "NPI changes"), ("lambda[", "NPI levels")];
    let groups: Vec<Vec<&ParamSummary>> = cols
        .iter()
        .map(|(p, _)| summaries.iter().filter(|s| s.name.starts_with(p)).collect())
        .collect();
    let rows = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let (row_h, label_w, plot_w, top) = (14.0, 190.0, 260.0, 50.0);
    let col_w = label_w + plot_w + 20.0;
    let mut svg = Svg::new(2.0 * col_w + 20.0, top + rows as f64 * row_h + 40.0);
    for (c, (g, (_, title))) in groups.iter().zip(cols).enumerate() {
        let f = Frame {
            x0: 10.0 + c as f64 * col_w + label_w,
            y0: top,
            w: plot_w,
            h: rows as f64 * row_h,
            xlim: limits(g.iter().flat_map(|s| [s.cri_low, s.cri_high, 0.0])),
            ylim: (0.0, 1.0),
        };
        svg.text(f.x0 + f.w / 2.0, top - 20.0, 13.0, "middle", title);
        svg.rect(f.x0, f.y0, f.w, f.h);
        svg.line(f.x(0.0), f.y0, f.x(0.0), f.y0 + f.h, GREY, 0.8);
        for (r, s) in g.iter().enumerate() {
            let y = top + (r as f64 + 0.5) * row_h;
            let colour = if s.cri_low > 0.0 {
                BLUE
            } else if s.cri_high < 0.0 {
                RED
            } else {
                GREY
            };
            svg.text(f.x0 - 6.0, y + 3.5, 9.0, "end", &s.name);
            svg.line(f.x(s.cri_low), y, f.x(s.cri_high), y, colour, 1.5);
            svg.circle(f.x(s.mean), y, 2.5, colour);
        }
        if g.is_empty() {
            svg.text(f.x0 + f.w / 2.0, top + row_h, 10.0, "middle", "not in model");
        }
    }
    svg.finish()
}

/// Forecast against realised value per response; black model, red naive.
pub fn forecast_scatter(f: &ForecastResult) -> String {
    let (cell, margin) = (300.0, 40.0);
    let mut svg = Svg::new(2.0 * cell + margin, 2.0 * cell + margin);
    for r in Response::ALL {
        let i = r.index();
        let rows: Vec<_> = f.rows.iter().filter(|x| x.variable == r).collect();
        let lim = limits(rows.iter().flat_map(|x| [x.actual, x.model, x.naive]));
        let fr = Frame {
            x0: margin + (i % 2) as f64 * cell + 10.0,
            y0: margin + (i / 2) as f64 * cell + 10.0,
            w: cell - 30.0,
            h: cell - 40.0,
            xlim: lim,
            ylim: lim,
        };
        svg.rect(fr.x0, fr.y0, fr.w, fr.h);
        svg.line(fr.x(lim.0), fr.y(lim.0), fr.x(lim.1), fr.y(lim.1), GREY, 0.8);
        for x in &rows {
            svg.circle(fr.x(x.actual), fr.y(x.naive), 1.2, RED);
        }
        for x in &rows {
            svg.circle(fr.x(x.actual), fr.y(x.model), 1.2, "black");
        }
        svg.text(
            fr.x0 + fr.w / 2.0,
            fr.y0 - 4.0,
            11.0,
            "middle",
            &format!("{}: RMSE reduction {:.1}%", r.label(), 100.0 * f.reduction[i]),
        );
        svg.text(fr.x0 + fr.w / 2.0, fr.y0 + fr.h + 16.0, 9.0, "middle", "actual x(t+1)");
    }
    svg.text(margin, 20.0, 13.0, "start", "One-step forecasts: model (black) and naive x(t) (red)");
    svg.finish()
}
