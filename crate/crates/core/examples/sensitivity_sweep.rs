use pmucal::datagen::{generate, ScenarioSpec};
use pmucal::estimator::{reference_error_sweep, Axis};
use pmucal::ResidualRows;

fn main() {
    let d = generate(&ScenarioSpec::default()).unwrap();
    for rows in [ResidualRows::Impedance, ResidualRows::ImpedanceAndConductance] {
        for a in Axis::ALL {
            let s = reference_error_sweep(&d.snapshots, &d.truth.line, a, &[-0.1, -0.05, 0.0], rows).unwrap();
            for (l, f) in [-10, -5, 0].iter().zip(&s) {
                let v: Vec<String> = f.to_array().iter().map(|x| format!("{x:10.2e}")).collect();
                println!("{rows:?} {} {l:4} {}", a.name(), v.join(" "));
            }
        }
    }
}
