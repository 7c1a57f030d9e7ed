use proptest::prelude::*;
use quick_xml::events::Event;
use quick_xml::Reader;

use malclust::experiments::{summarize_families, AriMatrix};
use malclust::metrics::ContingencyTable;
use malclust::render::{
    export_graph_dot, focus_graph, layout_force_directed, render_bars, render_confusion, render_elbow,
    render_graph, render_heatmap, scale_color, BarMode, GraphEdge, GraphStyle,
};
use malclust::{FamilyLabel, MalwareType};

fn labels(n: usize) -> Vec<FamilyLabel> {
    (0..n)
        .map(|i| FamilyLabel {
            name: format!("Fam{i}"),
            index: i,
            malware_type: MalwareType::Trojan,
        })
        .collect()
}

fn matrix(n: usize, seed: u64) -> AriMatrix {
    let mut m = AriMatrix::identity(labels(n));
    let mut x = seed;
    for i in 0..n {
        for j in i + 1..n {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            m.set(i, j, (x >> 11) as f64 / (1u64 << 53) as f64);
        }
    }
    m
}

/// Attribute maps of every element named `tag`, after checking the whole
/// document parses and is balanced.
fn elements(svg: &str, tag: &str) -> Vec<Vec<(String, String)>> {
    let mut reader = Reader::from_str(svg);
    let mut depth = 0i32;
    let mut found = Vec::new();
    loop {
        let event = reader.read_event().expect("well-formed xml");
        let start = match &event {
            Event::Start(e) => {
                depth += 1;
                Some(e.clone())
            }
            Event::Empty(e) => Some(e.clone()),
            Event::End(_) => {
                depth -= 1;
                None
            }
            Event::Eof => break,
            _ => None,
        };
        if let Some(e) = start {
            if e.name().as_ref() == tag.as_bytes() {
                found.push(
                    e.attributes()
                        .map(|a| {
                            let a = a.unwrap();
                            (
                                String::from_utf8(a.key.as_ref().to_vec()).unwrap(),
                                a.unescape_value().unwrap().into_owned(),
                            )
                        })
                        .collect(),
                );
            }
        }
    }
    assert_eq!(depth, 0);
    found
}

fn attr<'a>(el: &'a [(String, String)], key: &str) -> &'a str {
    el.iter().find(|(k, _)| k == key).map_or("", |(_, v)| v.as_str())
}

fn cells(svg: &str) -> Vec<Vec<(String, String)>> {
    elements(svg, "rect").into_iter().filter(|e| e.iter().any(|(k, v)| k == "class" && v == "cell")).collect()
}

#[test]
fn small_heatmap() {
    let m = AriMatrix::identity(labels(2));
    let svg = render_heatmap(&m, &["tool: test".into()]);
    assert_eq!(cells(&svg).len(), 4);
    assert_eq!(svg.matches(">1.00</text>").count(), 2);
    assert_eq!(svg.matches(">0.00</text>").count(), 2);
    let lightest = scale_color(0.0);
    assert!(cells(&svg).iter().any(|c| attr(c, "fill") == lightest));
}

#[test]
fn full_heatmap_is_symmetric() {
    let m = matrix(20, 3);
    let c = cells(&render_heatmap(&m, &[]));
    assert_eq!(c.len(), 400);
    for i in 0..20 {
        for j in 0..20 {
            assert_eq!(attr(&c[i * 20 + j], "fill"), attr(&c[j * 20 + i], "fill"));
        }
    }
}

#[test]
fn bars_flag_exactly_the_families_above_half() {
    let mut m = matrix(6, 8);
    for j in 1..6 {
        m.set(0, j, 0.9);
    }
    let summaries = summarize_families(&m);
    let svg = render_bars(&summaries, BarMode::Average, &[]);
    let bars: Vec<_> = elements(&svg, "rect").into_iter().filter(|e| attr(e, "class").starts_with("bar")).collect();
    assert_eq!(bars.len(), 6);
    for (bar, s) in bars.iter().zip(&summaries) {
        let value: f64 = attr(bar, "data-value").parse().unwrap();
        assert_eq!(value > 0.5, attr(bar, "class") == "bar high");
        assert_eq!(s.high_flag, attr(bar, "class") == "bar high");
    }
    assert_eq!(elements(&svg, "line").iter().filter(|l| attr(l, "class") == "threshold").count(), 1);

    let zero = summarize_families(&AriMatrix::identity(labels(3)));
    let flat = render_bars(&zero, BarMode::Average, &[]);
    assert_eq!(elements(&flat, "line").iter().filter(|l| attr(l, "class") == "threshold").count(), 1);
    let total = render_bars(&zero[..1], BarMode::Total, &[]);
    assert_eq!(elements(&total, "rect").iter().filter(|e| attr(e, "class") == "bar").count(), 1);
    assert!(elements(&total, "line").iter().all(|l| attr(l, "class") != "threshold"));
}

#[test]
fn confusion_grids() {
    let names = vec!["A".to_string(), "B".to_string()];
    let perfect = ContingencyTable::from_counts(2, vec![1000, 0, 0, 1000]);
    let c = cells(&render_confusion(&perfect, &names, &[]));
    assert_eq!(attr(&c[0], "fill"), scale_color(1.0));
    assert_eq!(attr(&c[3], "fill"), scale_color(1.0));
    assert_eq!(attr(&c[1], "fill"), scale_color(0.0));

    let even = ContingencyTable::from_counts(2, vec![500; 4]);
    let c = cells(&render_confusion(&even, &names, &[]));
    assert!(c.iter().all(|x| attr(x, "fill") == attr(&c[0], "fill")));

    let seven = ContingencyTable::from_counts(7, (0..49).map(|i| (i % 5) as u64 + 1).collect());
    let names: Vec<String> = (0..7).map(|i| format!("F{i}")).collect();
    assert_eq!(cells(&render_confusion(&seven, &names, &[])).len(), 49);
}

#[test]
fn layouts_keep_nodes_apart() {
    let m = matrix(20, 1);
    let edges: Vec<GraphEdge> = (0..20)
        .flat_map(|a| (a + 1..20).map(move |b| (a, b)))
        .map(|(a, b)| GraphEdge { a, b, weight: m.get(a, b) })
        .collect();
    for seed in 0..10 {
        let style = GraphStyle::new(m.families()[0].clone(), seed);
        let layout = layout_force_directed(m.families(), &edges, &style).unwrap();
        assert_eq!(layout, layout_force_directed(m.families(), &edges, &style).unwrap());
        for (i, p) in layout.iter().enumerate() {
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            for q in &layout[i + 1..] {
                let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                assert!(d > 1e-6, "seed {seed}: nodes {} and {} coincide", p.node.name, q.node.name);
            }
        }
    }
}

#[test]
fn graph_outputs_are_pure_and_well_formed() {
    let m = matrix(20, 5);
    let style = GraphStyle::new(m.families()[3].clone(), 42);
    let edges = focus_graph(&m, 3);
    assert_eq!(edges.len(), 19);
    let layout = layout_force_directed(m.families(), &edges, &style).unwrap();
    let svg = render_graph(&layout, &edges, &style, &["seed: 42".into()]);
    assert_eq!(svg, render_graph(&layout, &edges, &style, &["seed: 42".into()]));
    assert_eq!(elements(&svg, "circle").len(), 20);
    let lines = elements(&svg, "line");
    assert_eq!(lines.len(), 19);
    for (line, e) in lines.iter().zip(&edges) {
        assert_eq!(attr(line, "class") == "edge solid", e.weight > 0.5);
    }
    let dot = export_graph_dot(m.families(), &edges, Some(&layout), &style, &["seed: 42".into()]);
    assert_eq!(dot.matches("filled").count(), 1);
    assert_eq!(dot.matches(" -- ").count(), 19);
    assert_eq!(dot.matches("style=solid").count(), edges.iter().filter(|e| e.weight > 0.5).count());
    assert!(dot.starts_with("// seed: 42\ngraph relationships {\n"));
    assert!(dot.ends_with("}\n"));
}

#[test]
fn elbow_plot_has_both_series() {
    let curve = malclust::experiments::ElbowCurve {
        ks: vec![1, 2, 3],
        distortion: vec![3.0, 1.0, 0.5],
        inertia: vec![30.0, 10.0, 5.0],
        n: 10,
        suggested_k: 2,
    };
    let svg = render_elbow(&curve, &[]);
    assert_eq!(elements(&svg, "polyline").len(), 2);
    assert_eq!(elements(&svg, "circle").len(), 6);
}

#[test]
fn metadata_is_escaped() {
    let svg = render_heatmap(&AriMatrix::identity(labels(1)), &["flags: --families <a&b>".into()]);
    assert!(svg.contains("--families &lt;a&amp;b&gt;"));
    elements(&svg, "rect");
}

proptest! {
    #[test]
    fn heatmap_color_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let darkness = |t: f64| {
            let c = scale_color(t);
            (1..7).step_by(2).map(|i| u32::from_str_radix(&c[i..i + 2], 16).unwrap()).sum::<u32>()
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(darkness(lo) >= darkness(hi));
    }

    #[test]
    fn heatmap_is_a_pure_function(seed in any::<u64>(), n in 1usize..8) {
        let m = matrix(n, seed);
        prop_assert_eq!(render_heatmap(&m, &[]), render_heatmap(&m.clone(), &[]));
    }
}
