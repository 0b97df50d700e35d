use std::path::Path;

use epsim_core::{Error, Mesh, Result, SimTrace};
use plotters::prelude::*;

type Series<'a> = (&'a str, Vec<(f64, f64)>);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

const COLORS: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

/// Line chart of one or more series.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { y0.abs().max(1e-12) * 0.05 };
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (k, (name, data)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        chart
            .draw_series(LineSeries::new(data.iter().copied(), color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn column(trace: &SimTrace, f: impl Fn(&epsim_core::TraceSample) -> f64) -> Vec<(f64, f64)> {
    trace.samples.iter().map(|s| (s.t * 1e6, f(s))).collect()
}

/// Current, pore states, apparent conductivity and temperature rise plots.
/// Returns the written file names.
pub fn trace_plots(trace: &SimTrace, dir: &Path, prefix: &str) -> Result<Vec<String>> {
    let t0 = trace.t0;
    let charts: [(&str, &str, &str, Vec<Series>); 4] = [
        ("current", "Terminal current", "I [A]", vec![("I", column(trace, |s| s.i))]),
        (
            "states",
            "Pore states at the centre",
            "concentration",
            vec![
                ("p0", column(trace, |s| s.p0)),
                ("p1", column(trace, |s| s.p1)),
                ("p2", column(trace, |s| s.p2)),
            ],
        ),
        (
            "sigma",
            "Apparent conductivity at the centre",
            "sigma [S/m]",
            vec![("sigma", column(trace, |s| s.sigma_app))],
        ),
        (
            "temperature",
            "Temperature rise at the centre",
            "dT [K]",
            vec![("dT", column(trace, |s| s.temperature - t0))],
        ),
    ];
    let mut written = Vec::new();
    for (tag, title, y, series) in charts.iter() {
        let name = format!("{prefix}_{tag}.svg");
        line_chart(&dir.join(&name), title, "t [us]", y, series)?;
        written.push(name);
    }
    Ok(written)
}

/// Element edges in the `(r, z)` plane, sample cells in blue and electrode
/// cells in grey. Coordinates in millimetres.
pub fn mesh_plot(mesh: &Mesh, path: &Path) -> Result<()> {
    let (mut r1, mut z0, mut z1) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for p in &mesh.nodes {
        r1 = r1.max(p[0] * 1e3);
        z0 = z0.min(p[1] * 1e3);
        z1 = z1.max(p[1] * 1e3);
    }
    let h = 700;
    let w = ((h as f64) * r1 / (z1 - z0).max(1e-9)).clamp(200.0, 2000.0) as u32 + 100;
    let root = SVGBackend::new(path, (w, h + 60)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..r1, z0..z1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("r [mm]")
        .y_desc("z [mm]")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(mesh.elements.iter().map(|el| {
            let mut pts: Vec<(f64, f64)> = el.nodes.iter().map(|&n| (mesh.nodes[n][0] * 1e3, mesh.nodes[n][1] * 1e3)).collect();
            pts.push(pts[0]);
            let color = if el.region == epsim_core::mesh::Region::Sample { BLUE } else { RGBColor(140, 140, 140) };
            PathElement::new(pts, color)
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
