use std::fmt::Write as _;

use super::Report;

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Plain-text tables: explanation scores per dataset, then answer accuracy,
/// then the invariant checks.
pub fn render_table(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", report.tool, report.version);
    let _ = writeln!(s);
    let cols = ["BLEU-4", "ROUGE-L", "METEOR", "CIDEr", "SPICE", "BERTScore"];
    let _ = write!(s, "{:<8} {:>8} {:>8} {:>8}", "Dataset", "S_O", "S_T", "S_E");
    for c in cols {
        let _ = write!(s, " {c:>9}");
    }
    let _ = writeln!(s, " {:>6}", "gated");
    for d in &report.datasets {
        let Some(e) = &d.evil else { continue };
        let _ = write!(
            s,
            "{:<8} {:>8} {:>8} {:>8}",
            d.dataset.as_str(),
            if e.empty_gate {
                "-".into()
            } else {
                cell(Some(e.s_o))
            },
            cell(Some(e.s_t)),
            cell(e.s_e)
        );
        for c in cols {
            let _ = write!(s, " {:>9}", cell(d.metrics.get(c).copied()));
        }
        let _ = writeln!(s, " {:>6}", e.gated_count);
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<8} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "Dataset", "train", "test", "S_T", "MC-PPL", "MC-Emb", "DA", "Joint"
    );
    for d in &report.datasets {
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
            d.dataset.as_str(),
            d.n_train,
            d.n_test,
            cell(Some(d.s_t)),
            cell(d.mc_accuracy_ppl),
            cell(d.mc_accuracy_embedding),
            cell(d.da_accuracy),
            cell(d.joint_answer_accuracy),
        );
    }
    let _ = writeln!(s);
    for c in &report.checks {
        let _ = writeln!(
            s,
            "[{}] {} ({})",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    s
}
