//! Trace emitters: a CSV table mirroring the per-step accounting, and a
//! dependency-free SVG bar chart. Both render byte-identically for
//! identical inputs so they can be golden-file tested.

use std::path::Path;

use opsched_core::sched::MemoryTrace;

use crate::model::{write_atomic, LoadedModel};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Svg,
}

/// Renders and writes a trace atomically in the requested format.
pub fn emit_trace(
    model: &LoadedModel,
    trace: &MemoryTrace,
    format: TraceFormat,
    path: &Path,
) -> Result<(), CliError> {
    let text = match format {
        TraceFormat::Csv => render_trace_csv(model, trace),
        TraceFormat::Svg => render_trace_svg(model, trace),
    };
    write_atomic(path, text.as_bytes())
}

/// One row per step: `step,operator_id,opcode,resident_tensor_ids,bytes`,
/// ids in document id space, resident ids `;`-joined ascending, and a final
/// `# peak_bytes=.. peak_step=.. flash_bytes=..` comment row. Steps are
/// 0-based.
pub fn render_trace_csv(model: &LoadedModel, trace: &MemoryTrace) -> String {
    let mut out = String::from("step,operator_id,opcode,resident_tensor_ids,bytes\n");
    for (step, record) in trace.steps.iter().enumerate() {
        let op = model.graph.operator(record.operator);
        let mut resident: Vec<u64> = record
            .resident
            .iter()
            .map(|t| model.original_tensor_id(t))
            .collect();
        resident.sort_unstable();
        let resident = resident
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{step},{},{},{resident},{}\n",
            model.original_op_id(op.id),
            csv_field(&op.opcode),
            record.bytes
        ));
    }
    out.push_str(&format!(
        "# peak_bytes={} peak_step={} flash_bytes={}\n",
        trace.peak_bytes, trace.peak_step, trace.flash_bytes
    ));
    out
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 74.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;

/// A fixed 800x400 bar chart of bytes per step with a dashed line at the
/// peak and the peak value written out.
pub fn render_trace_svg(model: &LoadedModel, trace: &MemoryTrace) -> String {
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let n = trace.steps.len();
    let max_y = trace.peak_bytes.max(1) as f64;
    let y = |bytes: f64| MARGIN_T + plot_h - bytes / max_y * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"monospace\" font-size=\"12px\">\n"
    ));
    out.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let title = match model.graph.name() {
        Some(name) => format!("{name}: working-set bytes per step"),
        None => "working-set bytes per step".to_string(),
    };
    out.push_str(&format!(
        "  <text x=\"{MARGIN_L}\" y=\"20\" font-size=\"14px\">{}</text>\n",
        xml_escape(&title)
    ));

    // Horizontal gridlines at quarters of the peak.
    for quarter in 0..=4u32 {
        let value = max_y * f64::from(quarter) / 4.0;
        let gy = y(value);
        out.push_str(&format!(
            "  <line x1=\"{MARGIN_L}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" \
             stroke=\"#dddddd\"/>\n",
            MARGIN_L + plot_w
        ));
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            gy + 4.0,
            value.round() as u64
        ));
    }

    // Bars.
    if n > 0 {
        let slot = plot_w / n as f64;
        let bar_w = slot * 0.72;
        let label_stride = n.div_ceil(16);
        for (step, record) in trace.steps.iter().enumerate() {
            let x = MARGIN_L + slot * step as f64 + (slot - bar_w) / 2.0;
            let top = y(record.bytes as f64);
            out.push_str(&format!(
                "  <rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{:.2}\" \
                 fill=\"#4878a8\"><title>step {step}: operator {}, {} B</title></rect>\n",
                MARGIN_T + plot_h - top,
                model.original_op_id(record.operator),
                record.bytes
            ));
            if step % label_stride == 0 {
                out.push_str(&format!(
                    "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{step}</text>\n",
                    x + bar_w / 2.0,
                    MARGIN_T + plot_h + 16.0
                ));
            }
        }
    }

    // Peak line and annotation.
    let peak_y = y(trace.peak_bytes as f64);
    out.push_str(&format!(
        "  <line x1=\"{MARGIN_L}\" y1=\"{peak_y:.2}\" x2=\"{:.2}\" y2=\"{peak_y:.2}\" \
         stroke=\"#c03030\" stroke-dasharray=\"6,3\"/>\n",
        MARGIN_L + plot_w
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#c03030\">peak {} B</text>\n",
        MARGIN_L + plot_w - 4.0,
        peak_y - 6.0,
        trace.peak_bytes
    ));

    // Axes and x label.
    out.push_str(&format!(
        "  <line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.2}\" \
         stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    out.push_str(&format!(
        "  <line x1=\"{MARGIN_L}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">execution step</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 10.0
    ));
    out.push_str("</svg>\n");
    out
}

fn xml_escape(raw: &str) -> String {
    raw.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
