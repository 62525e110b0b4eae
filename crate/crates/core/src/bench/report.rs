use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::timing::{BenchRecord, Phase};

pub const CSV_HEADER: &str = "variant,n,d_h,layers,batch,phase,median_ms,steps_per_s,flops,peak_bytes,repeats,status";

pub fn write_records_csv(records: &[BenchRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<bench csv>", e))
}

pub fn read_records_csv(r: impl Read) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scale {
    Log2,
    Log10,
    Linear,
}

impl Scale {
    fn name(self) -> &'static str {
        match self {
            Scale::Log2 => "log2",
            Scale::Log10 => "log10",
            Scale::Linear => "linear",
        }
    }

    fn map(self, v: f64) -> f64 {
        match self {
            Scale::Log2 => v.log2(),
            Scale::Log10 => v.log10(),
            Scale::Linear => v,
        }
    }

    /// Tick values covering `[lo, hi]`.
    fn ticks(self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            Scale::Log2 | Scale::Log10 => {
                let base: f64 = if self == Scale::Log2 { 2.0 } else { 10.0 };
                let (a, b) = (self.map(lo).floor() as i32, self.map(hi).ceil() as i32);
                (a..=b.max(a + 1)).map(|k| base.powi(k)).collect()
            }
            Scale::Linear => {
                let step = nice_step((hi - lo).max(1e-12) / 5.0);
                let start = (lo / step).floor() as i64;
                let end = (hi / step).ceil() as i64;
                (start..=end.max(start + 1)).map(|k| k as f64 * step).collect()
            }
        }
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn label(v: f64) -> String {
    if v >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    xs: Scale,
    ys: Scale,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (a, b) = (self.xs.map(self.x_range.0), self.xs.map(self.x_range.1));
        LEFT + (self.xs.map(x) - a) / (b - a) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (a, b) = (self.ys.map(self.y_range.0), self.ys.map(self.y_range.1));
        H - BOTTOM - (self.ys.map(y) - a) / (b - a) * (H - TOP - BOTTOM)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, W - RIGHT);
    let (y0, y1) = (H - BOTTOM, TOP);
    let _ = writeln!(svg, "<g class=\"axis x\" data-scale=\"{}\">", f.xs.name());
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    for t in f.xs.ticks(f.x_range.0, f.x_range.1) {
        let x = f.px(t);
        if !(x0 - 0.5..=x1 + 0.5).contains(&x) {
            continue;
        }
        let _ = writeln!(
            svg,
            "<line class=\"tick\" data-value=\"{t}\" x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            y0 + 5.0,
            y0 + 18.0,
            label(t)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n</g>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(svg, "<g class=\"axis y\" data-scale=\"{}\">", f.ys.name());
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for t in f.ys.ticks(f.y_range.0, f.y_range.1) {
        let y = f.py(t);
        if !(y1 - 0.5..=y0 + 0.5).contains(&y) {
            continue;
        }
        let _ = writeln!(
            svg,
            "<line class=\"tick\" data-value=\"{t}\" x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>\
             <line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n</g>",
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn range(values: impl Iterator<Item = f64>, scale: Scale) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return None;
    }
    Some(match scale {
        Scale::Log2 | Scale::Log10 => {
            let t = scale.ticks(lo, hi);
            (t[0], *t.last().expect("ticks"))
        }
        Scale::Linear => {
            let t = scale.ticks(lo.min(0.0), hi);
            (t[0], *t.last().expect("ticks"))
        }
    })
}

fn line_chart(title: &str, x_label: &str, y_label: &str, ys: Scale, series: &[Series]) -> Option<String> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let x_range = range(pts().map(|p| p.0), Scale::Log2)?;
    let y_range = range(pts().map(|p| p.1), ys)?;
    let f = Frame {
        xs: Scale::Log2,
        ys,
        x_range,
        y_range,
    };
    let mut svg = svg_open(title);
    axes(&mut svg, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline class=\"series\" data-name=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            escape(&s.name),
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                f.px(x),
                f.py(y)
            );
        }
        let ly = TOP + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            W - RIGHT + 12.0,
            ly - 4.0,
            W - RIGHT + 28.0,
            ly,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn bar_chart(title: &str, bars: &[(String, f64)]) -> Option<String> {
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    if bars.is_empty() || max <= 0.0 {
        return None;
    }
    let mut svg = svg_open(title);
    let (x0, x1, y0) = (LEFT, W - RIGHT, H - BOTTOM);
    let slot = (x1 - x0) / bars.len() as f64;
    let scale = (H - TOP - BOTTOM) / max;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v * scale;
        let x = x0 + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            svg,
            "<rect class=\"bar\" data-name=\"{}\" data-value=\"{v}\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>\
             <text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3} GFLOP</text>",
            escape(name),
            y0 - h,
            slot * 0.7,
            PALETTE[i % PALETTE.len()],
            x + slot * 0.35,
            y0 + 18.0,
            escape(name),
            x + slot * 0.35,
            y0 - h - 5.0,
            v / 1e9
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn is_attention(variant: &str) -> bool {
    let base = variant.split('+').next().unwrap_or(variant);
    base == "bert" || base == "attention"
}

/// Writes `<stem>.csv` plus SVG charts into `out_dir`: time against length
/// (log₂ length, log₁₀ ms), speed-up against the attention variant, and
/// FLOPs per variant at the longest length. Returns the files written.
pub fn emit_report(records: &[BenchRecord], out_dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("benchmark records"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_records_csv(records, file)?;
    written.push(csv_path);

    let mut save = |name: String, svg: Option<String>| -> Result<()> {
        if let Some(svg) = svg {
            let path = out_dir.join(name);
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(())
    };

    let mut groups: BTreeMap<(String, Phase), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        groups.entry((r.variant.clone(), r.phase)).or_default().push(r);
    }
    let points = |rs: &[&BenchRecord], f: &dyn Fn(&BenchRecord) -> Option<f64>| {
        let mut p: Vec<(f64, f64)> = rs.iter().filter_map(|r| Some((r.n as f64, f(r)?))).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        p
    };
    let time: Vec<Series> = groups
        .iter()
        .map(|((v, ph), rs)| Series {
            name: format!("{v} {ph}"),
            points: points(rs, &|r| r.median_ms),
        })
        .collect();
    save(
        format!("{stem}_time.svg"),
        line_chart(
            "median time vs sequence length",
            "sequence length n",
            "median ms",
            Scale::Log10,
            &time,
        ),
    )?;

    let speedup: Vec<Series> = groups
        .iter()
        .filter(|((v, _), _)| !is_attention(v))
        .filter_map(|((v, ph), rs)| {
            let p = points(rs, &|r| {
                let base = records
                    .iter()
                    .find(|b| is_attention(&b.variant) && b.n == r.n && b.phase == r.phase && b.is_ok())?;
                Some(base.median_ms? / r.median_ms?)
            });
            (!p.is_empty()).then(|| Series {
                name: format!("{v} {ph}"),
                points: p,
            })
        })
        .collect();
    save(
        format!("{stem}_speedup.svg"),
        line_chart(
            "speed-up vs attention",
            "sequence length n",
            "multiplier",
            Scale::Linear,
            &speedup,
        ),
    )?;

    let longest = records.iter().map(|r| r.n).max().unwrap_or(0);
    let mut bars: Vec<(String, f64)> = Vec::new();
    for r in records.iter().filter(|r| r.n == longest) {
        let name = format!("{} {}", r.variant, r.phase);
        if !bars.iter().any(|b| b.0 == name) {
            bars.push((name, r.flops));
        }
    }
    save(
        format!("{stem}_flops.svg"),
        bar_chart(&format!("analytic FLOPs at n = {longest}"), &bars),
    )?;
    Ok(written)
}
