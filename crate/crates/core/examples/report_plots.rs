//! Builds a metrics file with curves and renders it to SVG.

use pulsegate::report::{write_plots, Curve, MetricsReport, RunTable, PLOT_FAR_FRR};
use pulsegate::verify::{far_frr_eer, SWEEP_RESOLUTION};

fn main() -> pulsegate::Result<()> {
    let genuine: Vec<f64> = (0..200).map(|i| 0.4 + 0.6 * (i as f64 / 200.0)).collect();
    let imposter: Vec<f64> = (0..600).map(|i| 0.7 * (i as f64 / 600.0)).collect();
    let curve = far_frr_eer(&genuine, &imposter, SWEEP_RESOLUTION)?;

    let mut metrics = MetricsReport::new("example", "0", 0);
    metrics.scalar("eer", curve.eer).scalar("auc", curve.auc);
    for (name, rates) in [("FAR", &curve.far), ("FRR", &curve.frr)] {
        metrics.curves.push(Curve {
            plot: PLOT_FAR_FRR.into(),
            name: name.into(),
            points: curve
                .thresholds
                .iter()
                .zip(rates)
                .map(|(&t, &r)| [t, r])
                .collect(),
        });
    }
    let dir = std::env::temp_dir().join("pulsegate-report");
    std::fs::create_dir_all(&dir).expect("create output dir");
    metrics.save(dir.join("metrics.json"))?;
    for p in write_plots(&metrics.curves, &dir)? {
        println!("wrote {}", p.display());
    }

    let mut table = RunTable::new(&["accuracy", "f1"]);
    table.push("fold1", vec![0.97, 0.96]);
    table.push("fold2", vec![0.99, 0.98]);
    table.push("fold3", vec![0.98, 0.98]);
    print!("{}", table.to_csv(None));
    Ok(())
}
