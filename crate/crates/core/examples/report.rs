//! Renders the stored reference results as JSON, CSV and SVG.

use crashformer::eval::{fixtures, render_csv, report_render};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("crashformer-report"));
    for (name, report) in [
        ("seq_sweep", fixtures::seq_sweep_report()),
        ("ablation", fixtures::ablation_report()),
        ("houston_spatial", fixtures::houston_spatial_report()),
    ] {
        report_render(&report, &out.join(name), name)?;
        println!("{name}:\n{}", render_csv(&report));
        for imp in &report.improvements {
            println!("  {} over {}: {:+.3}%", imp.reference, imp.arm, imp.percent);
        }
    }
    println!("written under {}", out.display());
    Ok(())
}
