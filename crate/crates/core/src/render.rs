//! Figure writers: standalone SVG charts, a force-directed relationship
//! layout, and DOT export.
//!
//! Every renderer is a pure function returning the file contents; numbers are
//! printed with fixed precision so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use thiserror::Error;

use crate::corpus::FamilyLabel;
use crate::experiments::{align_columns, AriMatrix, ElbowCurve, FamilyAriSummary, HIGH_ARI_THRESHOLD};
use crate::metrics::ContingencyTable;
use crate::seed::rng_from;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("EmptyGraph: a layout needs at least one node")]
    EmptyGraph,
    #[error("InvalidEdge: edge ({0}, {1}) refers to a missing node")]
    InvalidEdge(usize, usize),
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RenderError {
    pub fn kind(&self) -> &'static str {
        match self {
            RenderError::EmptyGraph => "EmptyGraph",
            RenderError::InvalidEdge(..) => "InvalidEdge",
            RenderError::Io { .. } => "IoError",
        }
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_artifact(path: &Path, contents: &str) -> Result<(), RenderError> {
    let io = |source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

/// `<experiment>_<kind>_<params>.<ext>`, or without the params part when it
/// is empty.
pub fn artifact_name(experiment: &str, kind: &str, params: &str, ext: &str) -> String {
    if params.is_empty() {
        format!("{experiment}_{kind}.{ext}")
    } else {
        format!("{experiment}_{kind}_{params}.{ext}")
    }
}

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn svg_open(out: &mut String, width: f64, height: f64, metadata: &[String]) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    if !metadata.is_empty() {
        out.push_str("<metadata>\n");
        for line in metadata {
            let _ = writeln!(out, "{}", escape_xml(line));
        }
        out.push_str("</metadata>\n");
    }
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn text(out: &mut String, x: f64, y: f64, size: f64, anchor: &str, fill: &str, body: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.1}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
        escape_xml(body)
    );
}

const LIGHT: [f64; 3] = [247.0, 251.0, 255.0];
const DARK: [f64; 3] = [8.0, 48.0, 107.0];

/// Linear light-to-dark color for `t` in `[0, 1]`; values outside are
/// clamped.
pub fn scale_color(t: f64) -> String {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let c: Vec<u8> = (0..3)
        .map(|i| (LIGHT[i] + (DARK[i] - LIGHT[i]) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn ink_for(t: f64) -> &'static str {
    if t > 0.5 {
        "white"
    } else {
        "black"
    }
}

/// Heatmap of the ARI matrix: one cell per entry, family indices on both
/// axes, the value printed to two decimals.
pub fn render_heatmap(matrix: &AriMatrix, metadata: &[String]) -> String {
    let f = matrix.len();
    let cell = 32.0;
    let margin = 40.0;
    let side = margin + cell * f as f64 + 10.0;
    let mut out = String::new();
    svg_open(&mut out, side, side, metadata);
    for (i, fam) in matrix.families().iter().enumerate() {
        let pos = margin + cell * (i as f64 + 0.5);
        text(&mut out, pos, margin - 8.0, 11.0, "middle", "black", &fam.index.to_string());
        text(&mut out, margin - 8.0, pos + 4.0, 11.0, "end", "black", &fam.index.to_string());
    }
    for i in 0..f {
        for j in 0..f {
            let v = matrix.get(i, j);
            let (x, y) = (margin + cell * j as f64, margin + cell * i as f64);
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}" stroke="white" data-value="{v:.4}"><title>{} / {}</title></rect>"#,
                scale_color(v),
                escape_xml(&matrix.families()[i].name),
                escape_xml(&matrix.families()[j].name)
            );
            text(&mut out, x + cell / 2.0, y + cell / 2.0 + 3.5, 9.0, "middle", ink_for(v), &format!("{v:.2}"));
        }
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarMode {
    Total,
    Average,
}

/// One bar per family in index order. Average mode draws the 0.5 reference
/// line and marks flagged families with class `bar high`.
pub fn render_bars(summaries: &[FamilyAriSummary], mode: BarMode, metadata: &[String]) -> String {
    let mut rows: Vec<&FamilyAriSummary> = summaries.iter().collect();
    rows.sort_by_key(|s| s.family.index);
    let value = |s: &FamilyAriSummary| match mode {
        BarMode::Total => s.total_ari,
        BarMode::Average => s.average_ari,
    };
    let floor = rows.iter().map(|s| value(s)).fold(0.0f64, f64::min);
    let ceil = rows.iter().map(|s| value(s)).fold(1.0f64, f64::max);
    let (bar_w, gap, plot_h, left, top) = (24.0, 8.0, 240.0, 50.0, 20.0);
    let width = left + (bar_w + gap) * rows.len() as f64 + gap + 10.0;
    let height = top + plot_h + 40.0;
    let y_of = |v: f64| top + plot_h * (ceil - v) / (ceil - floor);
    let mut out = String::new();
    svg_open(&mut out, width, height, metadata);
    let zero = y_of(0.0);
    let _ = writeln!(
        out,
        r#"<line x1="{left:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#,
        width - 10.0
    );
    for tick in [floor, 0.0, ceil] {
        text(&mut out, left - 6.0, y_of(tick) + 4.0, 10.0, "end", "black", &format!("{tick:.2}"));
    }
    for (i, s) in rows.iter().enumerate() {
        let v = value(s);
        let x = left + gap + (bar_w + gap) * i as f64;
        let (y, h) = if v >= 0.0 {
            (y_of(v), zero - y_of(v))
        } else {
            (zero, y_of(v) - zero)
        };
        let class = if s.high_flag { "bar high" } else { "bar" };
        let fill = if s.high_flag { "#08306b" } else { "#6baed6" };
        let _ = writeln!(
            out,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{fill}" data-value="{v:.6}"><title>{}</title></rect>"#,
            escape_xml(&s.family.name)
        );
        text(
            &mut out,
            x + bar_w / 2.0,
            top + plot_h + 16.0,
            10.0,
            "middle",
            "black",
            &s.family.index.to_string(),
        );
    }
    if mode == BarMode::Average {
        let y = y_of(HIGH_ARI_THRESHOLD);
        let _ = writeln!(
            out,
            r#"<line class="threshold" x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="red" stroke-dasharray="6,4"/>"#,
            width - 10.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Shaded confusion grid. Rows are true classes; columns are cluster ids in
/// display-aligned order. Shade is the cell's share of its row.
pub fn render_confusion(table: &ContingencyTable, row_names: &[String], metadata: &[String]) -> String {
    let order = align_columns(table);
    let (r, s) = (table.rows(), table.cols());
    let cell = 48.0;
    let left = 10.0 + 7.0 * row_names.iter().map(|n| n.len()).max().unwrap_or(4).max(4) as f64;
    let top = 30.0;
    let width = left + cell * s as f64 + 10.0;
    let height = top + cell * r as f64 + 10.0;
    let mut out = String::new();
    svg_open(&mut out, width, height, metadata);
    for (pos, &j) in order.iter().enumerate() {
        let x = left + cell * (pos as f64 + 0.5);
        text(&mut out, x, top - 8.0, 11.0, "middle", "black", &format!("c{}", table.col_labels()[j]));
    }
    for i in 0..r {
        let y = top + cell * i as f64;
        let name = row_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("class{}", table.row_labels()[i]));
        text(&mut out, left - 6.0, y + cell / 2.0 + 4.0, 11.0, "end", "black", &name);
        let row_total = table.row_sums()[i].max(1) as f64;
        for (pos, &j) in order.iter().enumerate() {
            let count = table.get(i, j);
            let t = count as f64 / row_total;
            let x = left + cell * pos as f64;
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}" stroke="white" data-count="{count}"/>"#,
                scale_color(t)
            );
            text(&mut out, x + cell / 2.0, y + cell / 2.0 + 4.0, 11.0, "middle", ink_for(t), &count.to_string());
        }
    }
    out.push_str("</svg>\n");
    out
}

fn polyline_panel(out: &mut String, xs: &[usize], ys: &[f64], origin: (f64, f64), size: (f64, f64), title: &str, mark: usize) {
    let (ox, oy) = origin;
    let (w, h) = size;
    let (xmin, xmax) = (xs[0] as f64, *xs.last().expect("non-empty") as f64);
    let ymax = ys.iter().cloned().fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax } else { 1.0 };
    let px = |k: usize| {
        if xmax > xmin {
            ox + w * (k as f64 - xmin) / (xmax - xmin)
        } else {
            ox + w / 2.0
        }
    };
    let py = |v: f64| oy + h * (1.0 - v / ymax);
    let _ = writeln!(
        out,
        r#"<rect x="{ox:.2}" y="{oy:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#
    );
    text(out, ox + w / 2.0, oy - 8.0, 12.0, "middle", "black", title);
    let points: Vec<String> = xs.iter().zip(ys).map(|(&k, &v)| format!("{:.2},{:.2}", px(k), py(v))).collect();
    let _ = writeln!(
        out,
        r##"<polyline class="series" points="{}" fill="none" stroke="#08306b" stroke-width="2"/>"##,
        points.join(" ")
    );
    for (&k, &v) in xs.iter().zip(ys) {
        let fill = if k == mark { "red" } else { "#08306b" };
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{fill}" data-k="{k}" data-value="{v:e}"/>"#,
            px(k),
            py(v)
        );
        text(out, px(k), oy + h + 14.0, 10.0, "middle", "black", &k.to_string());
    }
}

/// Distortion and inertia against k, side by side, with the suggested k
/// marked.
pub fn render_elbow(curve: &ElbowCurve, metadata: &[String]) -> String {
    let mut out = String::new();
    let (w, h) = (300.0, 220.0);
    svg_open(&mut out, 2.0 * w + 90.0, h + 70.0, metadata);
    polyline_panel(&mut out, &curve.ks, &curve.distortion, (30.0, 30.0), (w, h), "distortion", curve.suggested_k);
    polyline_panel(&mut out, &curve.ks, &curve.inertia, (w + 60.0, 30.0), (w, h), "inertia", curve.suggested_k);
    out.push_str("</svg>\n");
    out
}

/// Node positions in normalized canvas coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutPoint {
    pub node: FamilyLabel,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphStyle {
    /// Drawn filled.
    pub focus: FamilyLabel,
    /// Edges with weight above this are solid, the rest dotted.
    pub threshold: f64,
    pub iterations: usize,
    /// Temperature multiplier applied after every iteration.
    pub cooling: f64,
    /// Starting temperature, as a fraction of the unit square.
    pub initial_temperature: f64,
    pub seed: u64,
}

impl GraphStyle {
    pub fn new(focus: FamilyLabel, seed: u64) -> Self {
        GraphStyle {
            focus,
            threshold: HIGH_ARI_THRESHOLD,
            iterations: 200,
            cooling: 0.95,
            initial_temperature: 0.1,
            seed,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "layout: fruchterman-reingold area=1 iterations={} t0={} cooling={} seed={} threshold={}",
            self.iterations, self.initial_temperature, self.cooling, self.seed, self.threshold
        )
    }
}

/// An undirected weighted edge between node positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Fruchterman-Reingold spring layout on the unit square.
///
/// Repulsion `k^2/d` acts between every pair of nodes and attraction
/// `w * d^2/k` along each edge (negative weights count as zero), with
/// `k = sqrt(1/|nodes|)`. Moves are capped by a temperature that decays
/// geometrically. The result is rescaled (preserving aspect) into `[0,1]^2`.
pub fn layout_force_directed(
    nodes: &[FamilyLabel],
    edges: &[GraphEdge],
    style: &GraphStyle,
) -> Result<Vec<LayoutPoint>, RenderError> {
    let n = nodes.len();
    if n == 0 {
        return Err(RenderError::EmptyGraph);
    }
    if let Some(e) = edges.iter().find(|e| e.a >= n || e.b >= n) {
        return Err(RenderError::InvalidEdge(e.a, e.b));
    }
    let mut rng = rng_from(style.seed);
    let mut pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let k = (1.0 / n as f64).sqrt();
    let mut temperature = style.initial_temperature;
    for _ in 0..style.iterations {
        let mut disp = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy, d) = separation(&pos, i, j);
                let force = k * k / d;
                disp[i][0] += dx / d * force;
                disp[i][1] += dy / d * force;
                disp[j][0] -= dx / d * force;
                disp[j][1] -= dy / d * force;
            }
        }
        for e in edges.iter().filter(|e| e.a != e.b) {
            let (dx, dy, d) = separation(&pos, e.a, e.b);
            let force = e.weight.max(0.0) * d * d / k;
            disp[e.a][0] -= dx / d * force;
            disp[e.a][1] -= dy / d * force;
            disp[e.b][0] += dx / d * force;
            disp[e.b][1] += dy / d * force;
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len > 0.0 {
                let step = len.min(temperature);
                p[0] += d[0] / len * step;
                p[1] += d[1] / len * step;
            }
        }
        temperature *= style.cooling;
    }
    Ok(normalize(&pos)
        .into_iter()
        .zip(nodes)
        .map(|([x, y], node)| LayoutPoint {
            node: node.clone(),
            x,
            y,
        })
        .collect())
}

/// Offset from node `j` to node `i` and its length, never zero.
fn separation(pos: &[[f64; 2]], i: usize, j: usize) -> (f64, f64, f64) {
    let (mut dx, mut dy) = (pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
    let mut d = (dx * dx + dy * dy).sqrt();
    if d < 1e-9 {
        let angle = (i * 31 + j * 17) as f64;
        dx = 1e-9 * angle.cos();
        dy = 1e-9 * angle.sin();
        d = 1e-9;
    }
    (dx, dy, d)
}

fn normalize(pos: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let lo = |a: usize| pos.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
    let hi = |a: usize| pos.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (lo(0), hi(0), lo(1), hi(1));
    let span = (x1 - x0).max(y1 - y0);
    if span.is_nan() || span <= 0.0 || !span.is_finite() {
        return vec![[0.5, 0.5]; pos.len()];
    }
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    pos.iter()
        .map(|p| {
            [
                (0.5 + (p[0] - cx) / span).clamp(0.0, 1.0),
                (0.5 + (p[1] - cy) / span).clamp(0.0, 1.0),
            ]
        })
        .collect()
}

/// Relationship graph drawing: nodes labeled by family index, solid edges
/// above the threshold, dotted at or below it, the focus node filled.
pub fn render_graph(layout: &[LayoutPoint], edges: &[GraphEdge], style: &GraphStyle, metadata: &[String]) -> String {
    let (size, pad) = (480.0, 30.0);
    let at = |p: &LayoutPoint| (pad + p.x * size, pad + p.y * size);
    let mut out = String::new();
    svg_open(&mut out, size + 2.0 * pad, size + 2.0 * pad, metadata);
    for e in edges {
        let ((x1, y1), (x2, y2)) = (at(&layout[e.a]), at(&layout[e.b]));
        let strong = e.weight > style.threshold;
        let dash = if strong { "" } else { r#" stroke-dasharray="2,4""# };
        let _ = writeln!(
            out,
            r#"<line class="edge {}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="gray"{dash} data-weight="{:.4}"/>"#,
            if strong { "solid" } else { "dotted" },
            e.weight
        );
    }
    for p in layout {
        let (x, y) = at(p);
        let focus = p.node == style.focus;
        let (fill, ink) = if focus { ("#08306b", "white") } else { ("white", "black") };
        let _ = writeln!(
            out,
            r#"<circle class="node{}" cx="{x:.2}" cy="{y:.2}" r="12" fill="{fill}" stroke="black"><title>{}</title></circle>"#,
            if focus { " focus" } else { "" },
            escape_xml(&p.node.name)
        );
        text(&mut out, x, y + 4.0, 11.0, "middle", ink, &p.node.index.to_string());
    }
    out.push_str("</svg>\n");
    out
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT export of a relationship graph. Node ids are `n<index>`; positions
/// from `layout`, when given, are written as pinned `pos` attributes.
pub fn export_graph_dot(
    nodes: &[FamilyLabel],
    edges: &[GraphEdge],
    layout: Option<&[LayoutPoint]>,
    style: &GraphStyle,
    metadata: &[String],
) -> String {
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "// {line}");
    }
    out.push_str("graph relationships {\n    node [shape=circle];\n");
    for (i, node) in nodes.iter().enumerate() {
        let mut attrs = vec![
            format!("label={}", dot_quote(&node.index.to_string())),
            format!("tooltip={}", dot_quote(&node.name)),
        ];
        if *node == style.focus {
            attrs.push("style=filled".into());
            attrs.push("fillcolor=\"#08306b\"".into());
            attrs.push("fontcolor=white".into());
        }
        if let Some(p) = layout.and_then(|l| l.get(i)) {
            attrs.push(format!("pos=\"{:.4},{:.4}!\"", p.x * 10.0, (1.0 - p.y) * 10.0));
        }
        let _ = writeln!(out, "    n{} [{}];", node.index, attrs.join(", "));
    }
    for e in edges {
        let style_attr = if e.weight > style.threshold { "solid" } else { "dotted" };
        let _ = writeln!(
            out,
            "    n{} -- n{} [style={style_attr}, label=\"{:.2}\", weight={:.4}];",
            nodes[e.a].index,
            nodes[e.b].index,
            e.weight,
            e.weight.max(0.0)
        );
    }
    out.push_str("}\n");
    out
}

/// Star graph around `focus`: every other family joined to it by its ARI.
pub fn focus_graph(matrix: &AriMatrix, focus_position: usize) -> Vec<GraphEdge> {
    (0..matrix.len())
        .filter(|&j| j != focus_position)
        .map(|j| GraphEdge {
            a: focus_position,
            b: j,
            weight: matrix.get(focus_position, j),
        })
        .collect()
}
