//! Dependency-free SVG rendering of evaluation outputs: spatial heatmaps
//! of per-node scores over the lake layout, and per-node time series with
//! shaded predictive intervals. Also the readers for the CSV files the
//! evaluation stage writes, with parse errors that name the offending line.

use crate::error::{Error, Result};
use crate::graph::Node;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 520.0;
const MARGIN: f64 = 60.0;

/// Linear blue-to-red ramp over `t` in `[0, 1]`.
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(70.0, 220.0), lerp(130.0, 60.0), lerp(180.0, 50.0))
}

const UNDEFINED_FILL: &str = "#9aa0a6";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps `v` from `[vmin, vmax]` onto `[lo, hi]`; degenerate ranges land in
/// the middle.
fn scale(v: f64, vmin: f64, vmax: f64, lo: f64, hi: f64) -> f64 {
    if vmax > vmin {
        lo + (v - vmin) / (vmax - vmin) * (hi - lo)
    } else {
        0.5 * (lo + hi)
    }
}

/// Renders one per-node score map as a spatial heatmap. `values[i]` belongs
/// to `nodes[i]`; undefined entries draw gray. The legend prints the exact
/// data extremes the color scale spans.
pub fn heatmap_svg(nodes: &[Node], values: &[Option<f64>], title: &str) -> Result<String> {
    if nodes.is_empty() || nodes.len() != values.len() {
        return Err(Error::Contract(format!(
            "{} values for {} nodes",
            values.len(),
            nodes.len()
        )));
    }
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Domain(format!(
            "no defined values to draw for {title}"
        )));
    }
    let (vmin, vmax) = (
        defined.iter().cloned().fold(f64::INFINITY, f64::min),
        defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (xmin, xmax) = (
        nodes.iter().map(|n| n.x).fold(f64::INFINITY, f64::min),
        nodes.iter().map(|n| n.x).fold(f64::NEG_INFINITY, f64::max),
    );
    let (ymin, ymax) = (
        nodes.iter().map(|n| n.y).fold(f64::INFINITY, f64::min),
        nodes.iter().map(|n| n.y).fold(f64::NEG_INFINITY, f64::max),
    );

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"30\" font-size=\"18\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        esc(title)
    );
    let plot_bottom = HEIGHT - 90.0;
    for (node, value) in nodes.iter().zip(values) {
        let cx = scale(node.x, xmin, xmax, MARGIN, WIDTH - MARGIN);
        // SVG y grows downward; lake north stays up.
        let cy = scale(node.y, ymin, ymax, plot_bottom, MARGIN);
        let fill = match value {
            Some(v) => color(scale(*v, vmin, vmax, 0.0, 1.0)),
            None => UNDEFINED_FILL.to_string(),
        };
        let label = match value {
            Some(v) => format!("{}: {v}", esc(&node.id)),
            None => format!("{}: undefined", esc(&node.id)),
        };
        let _ = write!(
            svg,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"10\" fill=\"{fill}\" \
             stroke=\"#333333\" stroke-width=\"0.5\"><title>{label}</title></circle>"
        );
    }
    // Legend: gradient strip with the exact extremes at its ends.
    let strip_y = HEIGHT - 55.0;
    let strip_w = WIDTH - 2.0 * MARGIN;
    let steps = 32;
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        let x = MARGIN + t * strip_w * (1.0 - 1.0 / steps as f64);
        let _ = write!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{strip_y}\" width=\"{:.2}\" height=\"14\" fill=\"{}\"/>",
            strip_w / steps as f64 + 0.5,
            color(t)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"13\" text-anchor=\"start\">{vmin}</text>",
        strip_y + 30.0
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"end\">{vmax}</text>",
        WIDTH - MARGIN,
        strip_y + 30.0
    );
    svg.push_str("</svg>");
    Ok(svg)
}

/// Renders one node's test-span series: observed targets as dots, the
/// ensemble median as a line, and an optional shaded interval band.
pub fn timeseries_svg(
    hours: &[usize],
    target: &[f64],
    valid: &[f64],
    median: &[f64],
    band: Option<(&[f64], &[f64])>,
    title: &str,
) -> Result<String> {
    let t_len = hours.len();
    if t_len == 0 {
        return Err(Error::Contract("no hours to draw".into()));
    }
    if target.len() != t_len || valid.len() != t_len || median.len() != t_len {
        return Err(Error::Shape("series lengths disagree".into()));
    }
    if let Some((lo, hi)) = band {
        if lo.len() != t_len || hi.len() != t_len {
            return Err(Error::Shape("interval band lengths disagree".into()));
        }
    }
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    let mut feed = |v: f64| {
        ymin = ymin.min(v);
        ymax = ymax.max(v);
    };
    for i in 0..t_len {
        feed(median[i]);
        if valid[i] != 0.0 {
            feed(target[i]);
        }
        if let Some((lo, hi)) = band {
            feed(lo[i]);
            feed(hi[i]);
        }
    }
    if !ymin.is_finite() || !ymax.is_finite() {
        return Err(Error::Numeric("series contains non-finite values".into()));
    }
    let (hmin, hmax) = (hours[0] as f64, hours[t_len - 1] as f64);
    let plot_bottom = HEIGHT - 70.0;
    let to_x = |h: usize| scale(h as f64, hmin, hmax, MARGIN, WIDTH - MARGIN);
    let to_y = |v: f64| scale(v, ymin, ymax, plot_bottom, 50.0);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"30\" font-size=\"18\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        esc(title)
    );
    if let Some((lo, hi)) = band {
        let mut points = String::new();
        for i in 0..t_len {
            let _ = write!(points, "{:.2},{:.2} ", to_x(hours[i]), to_y(lo[i]));
        }
        for i in (0..t_len).rev() {
            let _ = write!(points, "{:.2},{:.2} ", to_x(hours[i]), to_y(hi[i]));
        }
        let _ = write!(
            svg,
            "<polygon points=\"{}\" fill=\"#f2b050\" stroke=\"none\" opacity=\"0.35\"/>",
            points.trim_end()
        );
    }
    let mut line = String::new();
    for i in 0..t_len {
        let _ = write!(line, "{:.2},{:.2} ", to_x(hours[i]), to_y(median[i]));
    }
    let _ = write!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#b3443c\" stroke-width=\"1.5\"/>",
        line.trim_end()
    );
    for i in 0..t_len {
        if valid[i] != 0.0 {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.6\" fill=\"#2d5d8f\"/>",
                to_x(hours[i]),
                to_y(target[i])
            );
        }
    }
    // Axis extremes.
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"start\">hour {}</text>",
        MARGIN,
        HEIGHT - 30.0,
        hours[0]
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">hour {}</text>",
        WIDTH - MARGIN,
        HEIGHT - 30.0,
        hours[t_len - 1]
    );
    let _ = write!(
        svg,
        "<text x=\"10\" y=\"{}\" font-size=\"12\" text-anchor=\"start\">{ymin}</text>",
        plot_bottom
    );
    let _ = write!(
        svg,
        "<text x=\"10\" y=\"54\" font-size=\"12\" text-anchor=\"start\">{ymax}</text>"
    );
    svg.push_str("</svg>");
    Ok(svg)
}

/// Cheap structural XML check used by the test suite: tags must nest and
/// the document must hold exactly one root element.
pub fn check_svg_well_formed(svg: &str) -> Result<()> {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let mut rest = svg;
    while let Some(start) = rest.find('<') {
        let tail = &rest[start + 1..];
        let end = tail
            .find('>')
            .ok_or_else(|| Error::Data("unterminated tag".into()))?;
        let tag = &tail[..end];
        if tag.is_empty() {
            return Err(Error::Data("empty tag".into()));
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                Some(open) => {
                    return Err(Error::Data(format!(
                        "mismatched tags: <{open}> closed by </{name}>"
                    )))
                }
                None => return Err(Error::Data(format!("stray closing tag </{name}>"))),
            }
            if stack.is_empty() {
                roots += 1;
            }
        } else if !tag.ends_with('/') {
            let name = tag.split_whitespace().next().unwrap_or("").to_string();
            stack.push(name);
        } else if stack.is_empty() {
            roots += 1;
        }
        rest = &tail[end + 1..];
    }
    if !stack.is_empty() {
        return Err(Error::Data(format!("unclosed tag <{}>", stack.pop().unwrap())));
    }
    if roots != 1 {
        return Err(Error::Data(format!("expected one root element, found {roots}")));
    }
    Ok(())
}

/// The per-node score table written next to a metric report.
#[derive(Debug, Clone)]
pub struct NodeTable {
    /// Column names after the leading `node` column.
    pub metrics: Vec<String>,
    pub nodes: Vec<usize>,
    /// One column per metric name, aligned with `nodes`; empty CSV fields
    /// are undefined scores.
    pub columns: Vec<Vec<Option<f64>>>,
}

impl NodeTable {
    pub fn column(&self, metric: &str) -> Option<&[Option<f64>]> {
        self.metrics
            .iter()
            .position(|m| m == metric)
            .map(|i| self.columns[i].as_slice())
    }
}

fn data_err(path: &Path, line: usize, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}:{line}: {what}", path.display()))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| data_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

/// Reads a per-node score CSV (`node,rmse,...`).
pub fn read_node_csv(path: &Path) -> Result<NodeTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| data_err(path, 1, "empty file"))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.first() != Some(&"node") {
        return Err(data_err(path, 1, "header must start with the node column"));
    }
    let metrics: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
    let mut nodes = Vec::new();
    let mut columns = vec![Vec::new(); metrics.len()];
    for (idx, row) in lines {
        let line = idx + 1;
        if row.is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != metrics.len() + 1 {
            return Err(data_err(
                path,
                line,
                format!("expected {} fields, found {}", metrics.len() + 1, cells.len()),
            ));
        }
        nodes.push(parse_field(path, line, "node index", cells[0])?);
        for (k, cell) in cells[1..].iter().enumerate() {
            let value = if cell.trim().is_empty() {
                None
            } else {
                Some(parse_field(path, line, &metrics[k], cell)?)
            };
            columns[k].push(value);
        }
    }
    if nodes.is_empty() {
        return Err(data_err(path, 1, "no data rows"));
    }
    Ok(NodeTable { metrics, nodes, columns })
}

/// One node's slice of a predictions table.
#[derive(Debug, Clone, Default)]
pub struct NodeSeries {
    pub hours: Vec<usize>,
    pub target: Vec<f64>,
    pub valid: Vec<f64>,
    pub median: Vec<f64>,
    /// One bound series per interval level, `[level][t]`.
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

/// A predictions CSV regrouped per node.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    /// Level tags as they appear in the header (`lo_<tag>`), e.g. `"90"`.
    pub levels: Vec<String>,
    pub series: BTreeMap<usize, NodeSeries>,
}

/// Reads a predictions CSV
/// (`hour,node,target,valid,median[,lo_XX,hi_XX]...`).
pub fn read_predictions_csv(path: &Path) -> Result<PredictionTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| data_err(path, 1, "empty file"))?;
    let fields: Vec<&str> = header.split(',').collect();
    let fixed = ["hour", "node", "target", "valid", "median"];
    if fields.len() < fixed.len() || fields[..fixed.len()] != fixed {
        return Err(data_err(
            path,
            1,
            "header must start with hour,node,target,valid,median",
        ));
    }
    let rest = &fields[fixed.len()..];
    if rest.len() % 2 != 0 {
        return Err(data_err(path, 1, "interval columns must come in lo/hi pairs"));
    }
    let mut levels = Vec::new();
    for pair in rest.chunks(2) {
        match (pair[0].strip_prefix("lo_"), pair[1].strip_prefix("hi_")) {
            (Some(a), Some(b)) if a == b => levels.push(a.to_string()),
            _ => {
                return Err(data_err(
                    path,
                    1,
                    format!("malformed interval pair {},{}", pair[0], pair[1]),
                ))
            }
        }
    }
    let mut series: BTreeMap<usize, NodeSeries> = BTreeMap::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != fields.len() {
            return Err(data_err(
                path,
                line,
                format!("expected {} fields, found {}", fields.len(), cells.len()),
            ));
        }
        let hour: usize = parse_field(path, line, "hour", cells[0])?;
        let node: usize = parse_field(path, line, "node index", cells[1])?;
        let entry = series.entry(node).or_insert_with(|| NodeSeries {
            lo: vec![Vec::new(); levels.len()],
            hi: vec![Vec::new(); levels.len()],
            ..Default::default()
        });
        entry.hours.push(hour);
        entry.target.push(parse_field(path, line, "target", cells[2])?);
        entry.valid.push(parse_field(path, line, "valid flag", cells[3])?);
        entry.median.push(parse_field(path, line, "median", cells[4])?);
        for (k, pair) in cells[fixed.len()..].chunks(2).enumerate() {
            entry.lo[k].push(parse_field(path, line, "interval bound", pair[0])?);
            entry.hi[k].push(parse_field(path, line, "interval bound", pair[1])?);
        }
    }
    if series.is_empty() {
        return Err(data_err(path, 1, "no data rows"));
    }
    Ok(PredictionTable { levels, series })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_nodes(k: usize) -> Vec<Node> {
        (0..k)
            .map(|i| Node {
                id: i.to_string(),
                x: (i % 3) as f64 * 100.0,
                y: (i / 3) as f64 * 100.0,
            })
            .collect()
    }

    fn circle_fills(svg: &str) -> Vec<String> {
        svg.match_indices("<circle")
            .map(|(i, _)| {
                let tail = &svg[i..];
                let f = tail.find("fill=\"").unwrap() + 6;
                tail[f..f + 7].to_string()
            })
            .collect()
    }

    #[test]
    fn well_formedness_checker_accepts_and_rejects() {
        check_svg_well_formed("<svg><g><rect/></g></svg>").unwrap();
        assert!(check_svg_well_formed("<svg><g></svg>").is_err());
        assert!(check_svg_well_formed("<svg></svg><svg></svg>").is_err());
        assert!(check_svg_well_formed("<svg>").is_err());
        assert!(check_svg_well_formed("</svg>").is_err());
    }

    #[test]
    fn single_node_heatmap_is_wellformed() {
        let svg = heatmap_svg(&square_nodes(1), &[Some(0.5)], "rmse").unwrap();
        check_svg_well_formed(&svg).unwrap();
        assert!(svg.contains("rmse"));
        // Degenerate range: the legend prints the lone value at both ends.
        assert_eq!(svg.matches(">0.5<").count(), 2);
    }

    #[test]
    fn constant_metric_renders_uniform_fill() {
        let svg = heatmap_svg(&square_nodes(5), &[Some(0.3); 5], "picp_90").unwrap();
        check_svg_well_formed(&svg).unwrap();
        let fills = circle_fills(&svg);
        assert_eq!(fills.len(), 5);
        assert!(fills.iter().all(|f| f == &fills[0]));
    }

    #[test]
    fn legend_prints_data_extremes() {
        let values = [Some(0.2), Some(0.8), Some(0.5), None];
        let svg = heatmap_svg(&square_nodes(4), &values, "r2").unwrap();
        check_svg_well_formed(&svg).unwrap();
        assert!(svg.contains(">0.2</text>"));
        assert!(svg.contains(">0.8</text>"));
        // The undefined node draws gray, not a ramp color.
        assert!(circle_fills(&svg).contains(&UNDEFINED_FILL.to_string()));
    }

    #[test]
    fn heatmap_rejects_empty_and_all_undefined() {
        assert!(heatmap_svg(&[], &[], "rmse").is_err());
        assert!(heatmap_svg(&square_nodes(2), &[None, None], "rmse").is_err());
        assert!(heatmap_svg(&square_nodes(2), &[Some(1.0)], "rmse").is_err());
    }

    #[test]
    fn timeseries_draws_band_median_and_extremes() {
        let hours: Vec<usize> = (100..140).collect();
        let median: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let lo: Vec<f64> = median.iter().map(|v| v - 0.5).collect();
        let hi: Vec<f64> = median.iter().map(|v| v + 0.5).collect();
        let target: Vec<f64> = median.iter().map(|v| v + 0.1).collect();
        let valid: Vec<f64> = (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let svg = timeseries_svg(&hours, &target, &valid, &median, Some((&lo, &hi)), "node 3")
            .unwrap();
        check_svg_well_formed(&svg).unwrap();
        assert!(svg.contains("<polygon"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("hour 100"));
        assert!(svg.contains("hour 139"));
        // Only valid targets get dots: 14 of 40, plus none from the band.
        assert_eq!(svg.matches("r=\"1.6\"").count(), 14);
        // Without a band no polygon appears.
        let bare = timeseries_svg(&hours, &target, &valid, &median, None, "node 3").unwrap();
        assert!(!bare.contains("<polygon"));
        check_svg_well_formed(&bare).unwrap();
    }

    #[test]
    fn node_csv_reader_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nodes.csv");
        std::fs::write(&path, "node,rmse,r2\n0,1.5,0.9\n1,,0.8\n").unwrap();
        let table = read_node_csv(&path).unwrap();
        assert_eq!(table.metrics, ["rmse", "r2"]);
        assert_eq!(table.nodes, [0, 1]);
        assert_eq!(table.column("rmse").unwrap(), &[Some(1.5), None]);
        assert_eq!(table.column("r2").unwrap(), &[Some(0.9), Some(0.8)]);
        assert!(table.column("mpiw_90").is_none());

        std::fs::write(&path, "node,rmse,r2\n0,1.5,0.9\n1,oops,0.8\n").unwrap();
        let err = read_node_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
        std::fs::write(&path, "node,rmse,r2\n0,1.5\n").unwrap();
        let err = read_node_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn predictions_reader_groups_by_node() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        std::fs::write(
            &path,
            "hour,node,target,valid,median,lo_90,hi_90\n\
             5,0,1.0,1,1.1,0.5,1.7\n5,1,2.0,0,2.1,1.5,2.7\n\
             6,0,1.2,1,1.3,0.6,1.8\n6,1,2.2,1,2.3,1.6,2.8\n",
        )
        .unwrap();
        let table = read_predictions_csv(&path).unwrap();
        assert_eq!(table.levels, ["90"]);
        assert_eq!(table.series.len(), 2);
        let s0 = &table.series[&0];
        assert_eq!(s0.hours, [5, 6]);
        assert_eq!(s0.median, [1.1, 1.3]);
        assert_eq!(s0.lo[0], [0.5, 0.6]);
        let s1 = &table.series[&1];
        assert_eq!(s1.valid, [0.0, 1.0]);
        assert_eq!(s1.hi[0], [2.7, 2.8]);

        std::fs::write(&path, "hour,node,target,valid,median,lo_90,hi_75\nrow\n").unwrap();
        assert!(read_predictions_csv(&path).unwrap_err().to_string().contains(":1:"));
        std::fs::write(
            &path,
            "hour,node,target,valid,median\n1,0,1.0,1,1.0\nbad,0,1.0,1,1.0\n",
        )
        .unwrap();
        assert!(read_predictions_csv(&path).unwrap_err().to_string().contains(":3:"));
    }
}
