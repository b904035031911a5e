//! Minimal SVG plots for the CSV reports.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const M: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if f.x1 <= f.x0 {
            f.x1 = f.x0 + 1.0;
        }
        if f.y1 <= f.y0 {
            f.y1 = f.y0 + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn open(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{t}\" text-anchor=\"middle\">{xlabel} [{:.3}, {:.3}]</text>\n\
         <text x=\"12\" y=\"{cy}\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">{ylabel} [{:.3}, {:.3}]</text>\n",
        f.x0,
        f.x1,
        f.y0,
        f.y1,
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        t = H - 10.0,
        cy = H / 2.0,
    );
}

pub fn lines(xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.1.iter().copied()));
    let mut s = String::new();
    open(&mut s, &f, xlabel, ylabel);
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{c}\" points=\"{}\"/>", path.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{name}</text>", M + 8.0, M + 14.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

pub fn histogram(xlabel: &str, bins: &[(f64, usize)]) -> String {
    let max = bins.iter().map(|b| b.1).max().unwrap_or(0).max(1) as f64;
    let f = Frame { x0: -1.0, x1: 1.0, y0: 0.0, y1: max };
    let mut s = String::new();
    open(&mut s, &f, xlabel, "count");
    let bw = (W - 2.0 * M) / bins.len().max(1) as f64;
    for &(lo, n) in bins {
        let top = f.py(n as f64);
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            f.px(lo),
            bw * 0.9,
            H - M - top,
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter(xlabel: &str, ylabel: &str, pts: &[(f64, f64)]) -> String {
    let f = Frame::fit(pts.iter().copied());
    let mut s = String::new();
    open(&mut s, &f, xlabel, ylabel);
    for &(x, y) in pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>", f.px(x), f.py(y), COLORS[1]);
    }
    s.push_str("</svg>\n");
    s
}
