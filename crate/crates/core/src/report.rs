//! CSV tables, a combined `summary.json`, and hand-emitted SVG figures.
//!
//! Tables use fixed precision: perplexity 1 decimal, priming and H2 means
//! 2 and 1 decimals, slopes and tau 3 decimals with explicit sign, p-values
//! in scientific notation with 3 significant figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::battery::{Condition, H1Result};
use crate::error::{invalid, Result};
use crate::orchestrator::{Analysis, CellResult, HypothesisVerdicts};
use crate::stats::{mean, ols_fit, sample_sd, Transform};
use crate::util::{create_dir, write_bytes, write_json};

pub fn fmt_p(p: f64) -> String {
    format!("{p:.2e}")
}

pub fn fmt_signed(x: f64, decimals: usize) -> String {
    format!("{x:+.decimals$}")
}

/// `[anti-ME, priming, sign p]` as printed in the H1 table.
pub fn h1_row(cell: &CellResult) -> Option<[String; 3]> {
    let h = cell.h1.as_ref()?;
    Some([
        format!("{}/{}", h.summary.anti_me, h.summary.n),
        format!("{:.2}", h.summary.mean_priming),
        fmt_p(h.sign_test.p_value),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`Table::to_csv`].
    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().map(parse_csv_line);
        let header = lines.next().ok_or_else(|| invalid("empty csv"))??;
        let rows = lines.collect::<Result<Vec<_>>>()?;
        if rows.iter().any(|r| r.len() != header.len()) {
            return Err(invalid("ragged csv"));
        }
        Ok(Table {
            name: name.into(),
            header,
            rows,
        })
    }
}

fn csv_field(f: &str) -> String {
    if f.contains([',', '"', '\n']) {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_string()
    }
}

fn parse_csv_line(line: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.is_empty() => quoted = true,
            (',', false) => out.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    if quoted {
        return Err(invalid("unterminated quote in csv"));
    }
    out.push(cur);
    Ok(out)
}

const H2_COLUMNS: [Condition; 5] = [
    Condition::NonceOnly,
    Condition::FullContext,
    Condition::FamOnly,
    Condition::SwapContext,
    Condition::NoPreamble,
];

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// Builds the perplexity, H1, H2 and H3 tables. Missing data leaves a
/// blank field.
pub fn build_tables(cells: &[CellResult]) -> Result<Vec<Table>> {
    if cells.is_empty() {
        return Err(invalid("no cells to tabulate"));
    }
    let mut ppl = Table::new("ppl", &["cell", "size", "epochs", "models", "ppl_mean", "ppl_sd"]);
    let mut h1 = Table::new("h1", &["cell", "anti_me", "priming", "sign_p"]);
    let mut h2 = Table::new(
        "h2",
        &["cell", "nonce_only", "full_context", "fam_only", "swap_context", "no_preamble", "wilcoxon_p"],
    );
    let mut h3 = Table::new("h3", &["cell", "monotonic", "slope", "slope_ci_low", "slope_ci_high", "kendall_tau", "p"]);
    for c in cells {
        let label = c.label();
        let n = c.perplexity.len();
        ppl.rows.push(vec![
            label.clone(),
            c.size.clone(),
            c.epochs.to_string(),
            n.to_string(),
            if n > 0 { format!("{:.1}", mean(&c.perplexity)) } else { String::new() },
            if n > 1 { format!("{:.1}", sample_sd(&c.perplexity)) } else { String::new() },
        ]);
        let mut row = vec![label.clone()];
        row.extend(h1_row(c).map_or_else(|| vec![String::new(); 3], Vec::from));
        h1.rows.push(row);

        let mut row = vec![label.clone()];
        match &c.h2 {
            Some(h) => {
                row.extend(H2_COLUMNS.iter().map(|k| opt(h.means.get(k), |m| format!("{m:.1}"))));
                row.push(opt(h.wilcoxon.as_ref(), |t| fmt_p(t.p_value)));
            }
            None => row.extend(vec![String::new(); 6]),
        }
        h2.rows.push(row);

        let mut row = vec![label];
        match &c.h3 {
            Some(h) => row.extend([
                format!("{}/{}", h.monotone, h.units.len()),
                fmt_signed(h.slope, 3),
                opt(h.slope_ci, |ci| fmt_signed(ci.0, 3)),
                opt(h.slope_ci, |ci| fmt_signed(ci.1, 3)),
                opt(h.kendall.as_ref(), |t| fmt_signed(t.statistic, 3)),
                opt(h.kendall.as_ref(), |t| fmt_p(t.p_value)),
            ]),
            None => row.extend(vec![String::new(); 6]),
        }
        h3.rows.push(row);
    }
    Ok(vec![ppl, h1, h2, h3])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tables: Vec<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<HypothesisVerdicts>,
}

/// Writes `tables/<name>.csv` for every table and `summary.json` holding
/// all of them plus the verdicts.
pub fn emit_tables(cells: &[CellResult], verdicts: Option<&HypothesisVerdicts>, out: &Path) -> Result<Vec<PathBuf>> {
    let tables = build_tables(cells)?;
    let dir = out.join("tables");
    create_dir(&dir)?;
    let mut paths = Vec::new();
    for t in &tables {
        let p = dir.join(format!("{}.csv", t.name));
        write_bytes(&p, t.to_csv().as_bytes())?;
        paths.push(p);
    }
    let summary_path = out.join("summary.json");
    write_json(
        &summary_path,
        &Summary {
            tables,
            verdicts: verdicts.cloned(),
        },
    )?;
    paths.push(summary_path);
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// Anti-ME rate and mean priming per size x epochs cell.
    Heatmap,
    /// Mean ME-consistent count per H2 condition across all models.
    Bars,
    /// Mean H3 advantage by dose, one line per cell, SEM error bars.
    DoseCurves,
    /// Perplexity against mean priming, one point per model.
    Scatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub path: PathBuf,
}

impl FigureSpec {
    pub fn defaults(dir: &Path) -> Vec<FigureSpec> {
        let mk = |kind, file: &str, title: &str, x: &str, y: &str| FigureSpec {
            kind,
            title: title.into(),
            x_label: x.into(),
            y_label: y.into(),
            path: dir.join(file),
        };
        vec![
            mk(FigureKind::Heatmap, "heatmap.svg", "Anti-ME rate and mean priming", "Epochs", "Size"),
            mk(FigureKind::Bars, "diagnostic.svg", "Context-dependence diagnostic", "Condition", "ME-consistent items"),
            mk(FigureKind::DoseCurves, "dose.svg", "Dose-response", "Dose", "Advantage (nats)"),
            mk(FigureKind::Scatter, "scatter.svg", "Perplexity vs priming", "Perplexity", "Mean priming (nats)"),
        ]
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
const DASHES: [&str; 4] = ["", "6 3", "2 3", "8 3 2 3"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round coordinates so output bytes do not depend on last-bit noise.
fn n(x: f64) -> String {
    let r = format!("{x:.2}");
    if r == "-0.00" { "0.00".into() } else { r }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(body, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            body,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            n(W / 2.0),
            esc(title)
        );
        Svg { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: &str) {
        let dash = if dash.is_empty() { String::new() } else { format!(" stroke-dasharray=\"{dash}\"") };
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\"{dash}/>",
            n(x1),
            n(y1),
            n(x2),
            n(y2)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\">{}</text>",
            n(x),
            n(y),
            esc(s)
        );
    }

    fn small_text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            n(x),
            n(y),
            esc(s)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"#444\"/>",
            n(x),
            n(y),
            n(w),
            n(h)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, dash: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", n(*x), n(*y))).collect();
        let dash = if dash.is_empty() { String::new() } else { format!(" stroke-dasharray=\"{dash}\"") };
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"{dash}/>",
            p.join(" ")
        );
    }

    fn marker(&mut self, shape: usize, x: f64, y: f64, fill: &str) {
        let _ = match shape % 3 {
            0 => writeln!(self.body, "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{fill}\"/>", n(x), n(y)),
            1 => writeln!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"{fill}\"/>",
                n(x - 4.0),
                n(y - 4.0)
            ),
            _ => writeln!(
                self.body,
                "<polygon points=\"{},{} {},{} {},{}\" fill=\"{fill}\"/>",
                n(x),
                n(y - 5.0),
                n(x - 5.0),
                n(y + 4.0),
                n(x + 5.0),
                n(y + 4.0)
            ),
        };
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Tick positions covering `[lo, hi]` with a 1/2/5 step.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn padded(xs: &[f64], ys: &[f64]) -> Self {
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { 0.08 * (hi - lo) } else { 1.0 };
            (lo - pad, hi + pad)
        };
        let (x0, x1) = range(xs);
        let (y0, y1) = range(ys);
        Axes { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn draw(&self, svg: &mut Svg, spec: &FigureSpec, x_ticks: Option<&[(f64, String)]>) {
        let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        svg.line(l, b, r, b, "#000", "");
        svg.line(l, t, l, b, "#000", "");
        let xt: Vec<(f64, String)> = match x_ticks {
            Some(v) => v.to_vec(),
            None => nice_ticks(self.x0, self.x1, 6).into_iter().map(|v| (v, tick_label(v))).collect(),
        };
        let categorical = x_ticks.is_some();
        for (v, label) in xt {
            let x = self.px(v);
            svg.line(x, b, x, b + 4.0, "#000", "");
            if categorical {
                svg.small_text(x, b + 16.0, &label);
            } else {
                svg.text(x, b + 17.0, "middle", &label);
            }
        }
        for v in nice_ticks(self.y0, self.y1, 6) {
            let y = self.py(v);
            svg.line(l - 4.0, y, l, y, "#000", "");
            svg.text(l - 7.0, y + 4.0, "end", &tick_label(v));
        }
        svg.text((l + r) / 2.0, H - 14.0, "middle", &spec.x_label);
        let _ = writeln!(
            svg.body,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            n((t + b) / 2.0),
            n((t + b) / 2.0),
            esc(&spec.y_label)
        );
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Legend rows of (label, colour, dash, marker shape). A row with a
/// marker shows the marker instead of a line sample.
fn legend(svg: &mut Svg, entries: &[(String, &str, &str, Option<usize>)]) {
    let x = W - RIGHT + 14.0;
    for (i, (label, color, dash, marker)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        match marker {
            Some(shape) => svg.marker(*shape, x + 11.0, y, color),
            None => svg.polyline(&[(x, y), (x + 22.0, y)], color, dash),
        }
        svg.text(x + 28.0, y + 4.0, "start", label);
    }
}

fn ordered<'a>(cells: &'a [CellResult], key: impl Fn(&CellResult) -> String) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in cells {
        let k = key(c);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn heatmap(spec: &FigureSpec, cells: &[CellResult]) -> Result<String> {
    let sizes = ordered(cells, |c| c.size.clone());
    let mut epochs: Vec<usize> = cells.iter().map(|c| c.epochs).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let mut svg = Svg::new(&spec.title);
    let (gw, gh) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let (cw, ch) = (gw / epochs.len() as f64, gh / sizes.len() as f64);
    for c in cells {
        let h = c.h1.as_ref().ok_or_else(|| invalid(format!("{}: no H1 data for heatmap", c.label())))?;
        let i = sizes.iter().position(|s| *s == c.size).expect("listed");
        let j = epochs.iter().position(|e| *e == c.epochs).expect("listed");
        let rate = h.summary.anti_me as f64 / h.summary.n as f64;
        // white at chance, saturated blue at 100%
        let t = ((rate - 0.5) * 2.0).clamp(0.0, 1.0);
        let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
        let fill = format!("#{:02x}{:02x}{:02x}", shade(33.0), shade(102.0), shade(172.0));
        let (x, y) = (LEFT + j as f64 * cw, TOP + i as f64 * ch);
        svg.rect(x, y, cw, ch, &fill);
        svg.text(x + cw / 2.0, y + ch / 2.0 - 3.0, "middle", &format!("{:.0}%", 100.0 * rate));
        svg.text(x + cw / 2.0, y + ch / 2.0 + 13.0, "middle", &format!("{:.2}", h.summary.mean_priming));
    }
    for (j, e) in epochs.iter().enumerate() {
        svg.text(LEFT + (j as f64 + 0.5) * cw, H - BOTTOM + 17.0, "middle", &e.to_string());
    }
    for (i, s) in sizes.iter().enumerate() {
        svg.text(LEFT - 7.0, TOP + (i as f64 + 0.5) * ch + 4.0, "end", s);
    }
    svg.text(LEFT + gw / 2.0, H - 14.0, "middle", &spec.x_label);
    Ok(svg.finish())
}

/// Pooled mean per H2 condition over every model seed of every cell.
pub fn h2_pooled_means(cells: &[CellResult]) -> BTreeMap<Condition, f64> {
    let mut pooled: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
    for h in cells.iter().filter_map(|c| c.h2.as_ref()) {
        for (k, v) in &h.per_seed {
            pooled.entry(*k).or_default().extend(v);
        }
    }
    pooled.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

fn bars(spec: &FigureSpec, cells: &[CellResult]) -> Result<String> {
    let items = cells
        .iter()
        .find_map(|c| c.h2.as_ref().map(|h| h.items))
        .ok_or_else(|| invalid("no H2 data for bar chart"))?;
    let means = h2_pooled_means(cells);
    let axes = Axes {
        x0: 0.0,
        x1: H2_COLUMNS.len() as f64,
        y0: 0.0,
        y1: items as f64,
    };
    let mut svg = Svg::new(&spec.title);
    let ticks: Vec<(f64, String)> = H2_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64 + 0.5, c.to_string()))
        .collect();
    axes.draw(&mut svg, spec, Some(&ticks));
    for (i, c) in H2_COLUMNS.iter().enumerate() {
        let Some(&m) = means.get(c) else { continue };
        let (x, top) = (axes.px(i as f64 + 0.15), axes.py(m));
        svg.rect(x, top, axes.px(i as f64 + 0.85) - x, axes.py(0.0) - top, PALETTE[i % PALETTE.len()]);
        svg.text(axes.px(i as f64 + 0.5), top - 5.0, "middle", &format!("{m:.1}"));
    }
    let chance = axes.py(items as f64 / 2.0);
    svg.line(axes.px(0.0), chance, axes.px(H2_COLUMNS.len() as f64), chance, "#000", "6 4");
    legend(&mut svg, &[(format!("chance ({}/{items})", items / 2), "#000", "6 4", None)]);
    Ok(svg.finish())
}

fn dose_curves(spec: &FigureSpec, cells: &[CellResult]) -> Result<String> {
    let curves: Vec<&CellResult> = cells.iter().filter(|c| c.h3.is_some()).collect();
    if curves.is_empty() {
        return Err(invalid("no H3 data for dose curves"));
    }
    let sizes = ordered(cells, |c| c.size.clone());
    let epochs = ordered(cells, |c| c.epochs.to_string());
    let mut ys = Vec::new();
    for c in &curves {
        let h = c.h3.as_ref().expect("filtered");
        for d in 0..4 {
            ys.push(h.mean_by_dose[d] - h.sem_by_dose[d]);
            ys.push(h.mean_by_dose[d] + h.sem_by_dose[d]);
        }
    }
    let mut axes = Axes::padded(&[0.0, 3.0], &ys);
    axes.x0 = -0.3;
    axes.x1 = 3.3;
    let mut svg = Svg::new(&spec.title);
    let ticks: Vec<(f64, String)> = (0..4).map(|d| (d as f64, d.to_string())).collect();
    axes.draw(&mut svg, spec, Some(&ticks));
    let mut entries = Vec::new();
    for c in &curves {
        let h = c.h3.as_ref().expect("filtered");
        let color = PALETTE[sizes.iter().position(|s| *s == c.size).expect("listed") % PALETTE.len()];
        let dash = DASHES[epochs.iter().position(|e| *e == c.epochs.to_string()).expect("listed") % DASHES.len()];
        let pts: Vec<(f64, f64)> = (0..4).map(|d| (axes.px(d as f64), axes.py(h.mean_by_dose[d]))).collect();
        svg.polyline(&pts, color, dash);
        for d in 0..4 {
            let x = axes.px(d as f64);
            let (lo, hi) = (
                axes.py(h.mean_by_dose[d] - h.sem_by_dose[d]),
                axes.py(h.mean_by_dose[d] + h.sem_by_dose[d]),
            );
            svg.line(x, lo, x, hi, color, "");
            svg.line(x - 3.0, lo, x + 3.0, lo, color, "");
            svg.line(x - 3.0, hi, x + 3.0, hi, color, "");
        }
        entries.push((c.label(), color, dash, None));
    }
    legend(&mut svg, &entries);
    Ok(svg.finish())
}

/// (size, perplexity, mean priming) per model.
fn model_points(cells: &[CellResult]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for c in cells {
        let Some(h) = &c.h1 else { continue };
        for (i, &seed) in c.seeds.iter().enumerate() {
            let p: Vec<f64> = h.results.iter().filter(|r| r.model_seed == seed).map(H1Result::priming).collect();
            if let (false, Some(&ppl)) = (p.is_empty(), c.perplexity.get(i)) {
                out.push((c.size.clone(), ppl, mean(&p)));
            }
        }
    }
    out
}

fn scatter(spec: &FigureSpec, cells: &[CellResult], notices: &mut Vec<String>) -> Result<String> {
    let pts = model_points(cells);
    if pts.is_empty() {
        return Err(invalid("no models with perplexity and H1 data for scatter"));
    }
    let sizes = ordered(cells, |c| c.size.clone());
    let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.2).chain([0.0]).collect();
    let axes = Axes::padded(&xs, &ys);
    let mut svg = Svg::new(&spec.title);
    axes.draw(&mut svg, spec, None);
    let zero = axes.py(0.0);
    svg.line(axes.px(axes.x0), zero, axes.px(axes.x1), zero, "#000", "2 3");
    for (size, x, y) in &pts {
        let k = sizes.iter().position(|s| s == size).expect("listed");
        svg.marker(k, axes.px(*x), axes.py(*y), PALETTE[k % PALETTE.len()]);
    }
    let prim: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let fit = if pts.len() >= 2 { ols_fit(&xs, &prim, Transform::Identity).ok() } else { None };
    match fit {
        Some(f) => {
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            svg.line(axes.px(lo), axes.py(f.predict(lo)), axes.px(hi), axes.py(f.predict(hi)), "#333", "6 4");
        }
        None => {
            let msg = format!("regression omitted: {} distinct model point(s)", pts.len());
            svg.text(W / 2.0, TOP + 12.0, "middle", &msg);
            notices.push(msg);
        }
    }
    let mut entries: Vec<(String, &str, &str, Option<usize>)> =
        sizes.iter().enumerate().map(|(k, s)| (s.clone(), PALETTE[k % PALETTE.len()], "", Some(k))).collect();
    entries.push(("regression".into(), "#333", "6 4", None));
    entries.push(("zero".into(), "#000", "2 3", None));
    legend(&mut svg, &entries);
    Ok(svg.finish())
}

/// Renders one figure to SVG text. Notices (such as an omitted regression
/// overlay) are appended to `notices`.
pub fn render_svg(spec: &FigureSpec, cells: &[CellResult], notices: &mut Vec<String>) -> Result<String> {
    if cells.is_empty() {
        return Err(invalid("no cells to plot"));
    }
    match spec.kind {
        FigureKind::Heatmap => heatmap(spec, cells),
        FigureKind::Bars => bars(spec, cells),
        FigureKind::DoseCurves => dose_curves(spec, cells),
        FigureKind::Scatter => scatter(spec, cells, notices),
    }
}

pub fn render_figure(spec: &FigureSpec, cells: &[CellResult]) -> Result<Vec<String>> {
    let mut notices = Vec::new();
    let svg = render_svg(spec, cells, &mut notices)?;
    write_bytes(&spec.path, svg.as_bytes())?;
    Ok(notices)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Tables, summary and every default figure whose data is present.
pub fn write_report(analysis: &Analysis, out: &Path) -> Result<ReportOutput> {
    let mut rep = ReportOutput {
        files: emit_tables(&analysis.cells, Some(&analysis.verdicts), out)?,
        ..Default::default()
    };
    for spec in FigureSpec::defaults(&out.join("figures")) {
        let mut notices = Vec::new();
        match render_svg(&spec, &analysis.cells, &mut notices) {
            Ok(svg) => {
                write_bytes(&spec.path, svg.as_bytes())?;
                rep.files.push(spec.path.clone());
            }
            Err(e) => notices.push(format!("{}: skipped ({e})", spec.path.display())),
        }
        for msg in notices {
            log::warn!("{msg}");
            rep.notices.push(msg);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::reference_cells;

    #[test]
    fn h1_row_matches_reference_rendering() {
        let cells = reference_cells();
        assert_eq!(h1_row(&cells[0]).unwrap().join(", "), "100/100, -1.14, 7.89e-31");
        assert_eq!(h1_row(&cells[8]).unwrap().join(", "), "85/100, -0.58, 2.41e-13");
        let t = build_tables(&cells).unwrap();
        assert_eq!(t[0].rows[8][4..], ["15.2".to_string(), "0.1".to_string()]);
        assert_eq!(t[2].rows[0][1..3], ["5.0".to_string(), "2.2".to_string()]);
        assert_eq!(t[3].rows[8][1], "12/25");
        assert_eq!(t[3].rows[8][6], "2.66e-5");
    }

    #[test]
    fn empty_cells_are_rejected() {
        assert!(build_tables(&[]).is_err());
        let spec = &FigureSpec::defaults(Path::new("f"))[0];
        assert!(render_svg(spec, &[], &mut Vec::new()).is_err());
    }

    #[test]
    fn csv_round_trips_at_emitted_precision() {
        let cells = reference_cells();
        for t in build_tables(&cells).unwrap() {
            let back = Table::from_csv(&t.name, &t.to_csv()).unwrap();
            assert_eq!(back, t);
        }
        let h1 = &build_tables(&cells).unwrap()[1];
        for (row, c) in h1.rows.iter().zip(&cells) {
            let s = &c.h1.as_ref().unwrap().summary;
            let p: f64 = row[2].parse().unwrap();
            assert!((p - s.mean_priming).abs() <= 0.005 + 1e-12);
            assert_eq!(format!("{p:.2}"), row[2]);
        }
        let odd = Table {
            name: "x".into(),
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["x,y".into(), "say \"hi\"".into()]],
        };
        assert_eq!(Table::from_csv("x", &odd.to_csv()).unwrap(), odd);
    }

    #[test]
    fn figures_are_deterministic_and_complete() {
        let cells = reference_cells();
        for spec in FigureSpec::defaults(Path::new("f")) {
            let a = render_svg(&spec, &cells, &mut Vec::new()).unwrap();
            let b = render_svg(&spec, &cells, &mut Vec::new()).unwrap();
            assert_eq!(a, b);
            assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        }
        let dose = render_svg(&FigureSpec::defaults(Path::new("f"))[2], &cells, &mut Vec::new()).unwrap();
        assert_eq!(dose.matches("<polyline").count(), 9 + 9);
    }

    #[test]
    fn single_cell_renders_and_scatter_notices_missing_fit() {
        let one = vec![reference_cells().remove(0)];
        let specs = FigureSpec::defaults(Path::new("f"));
        let heat = render_svg(&specs[0], &one, &mut Vec::new()).unwrap();
        assert_eq!(heat.matches("<rect").count(), 2);
        let mut single = one.clone();
        single[0].seeds.truncate(1);
        single[0].perplexity.truncate(1);
        let mut notices = Vec::new();
        let s = render_svg(&specs[3], &single, &mut notices).unwrap();
        assert_eq!(notices.len(), 1);
        assert!(s.contains("regression omitted"));
        let mut notices = Vec::new();
        render_svg(&specs[3], &reference_cells(), &mut notices).unwrap();
        assert!(notices.is_empty());
    }

    #[test]
    fn report_means_agree_with_stats_means() {
        let cells = reference_cells();
        let pooled = h2_pooled_means(&cells);
        let nonce: Vec<f64> = cells.iter().map(|c| c.h2.as_ref().unwrap().means[&Condition::NonceOnly]).collect();
        assert!((pooled[&Condition::NonceOnly] - mean(&nonce)).abs() < 1e-12);
        for c in &cells {
            let h = c.h3.as_ref().unwrap();
            for d in 0..4 {
                let col: Vec<f64> = h.units.iter().map(|u| u.advantages[d]).collect();
                assert!((h.mean_by_dose[d] - mean(&col)).abs() < 1e-12);
                assert!((h.sem_by_dose[d] - crate::stats::sem(&col)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ticks_cover_range() {
        assert_eq!(nice_ticks(0.0, 8.0, 4), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(tick_label(-0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
    }
}
