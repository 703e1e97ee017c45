use pmucal::datagen::{generate, preset, PRESETS};
use pmucal::{calibrate, EmsReference, ScanConfig};

fn main() {
    for name in PRESETS {
        let spec = preset(name).unwrap();
        let d = generate(&spec).unwrap();
        let t = std::time::Instant::now();
        let cfg = if name.starts_with("case1") { ScanConfig::exact_reference() } else { ScanConfig::default() };
        let r = calibrate(&d.snapshots, EmsReference::from(d.truth.ems), &cfg).unwrap();
        let b: Vec<String> = r.biases.to_array().iter().map(|v| format!("{:.4}", v * 1e3)).collect();
        println!(
            "{name:18} pct {:?} biased {:?} F[e-3] {} ({:.2?})",
            r.ems_error_pct.map(|v| (v * 100.0).round() / 100.0),
            r.biased_channels(),
            b.join(" "),
            t.elapsed()
        );
    }
}
