//! Writes synthetic observations of the tongs object for `hri identify`.
//!
//! cargo run -p hri-core --example synth_observations -- OUT.csv [ASSIGNMENT] [DT]
//!
//! ASSIGNMENT is one candidate index per joint, e.g. `010`.

use std::path::PathBuf;

use hri_core::topology::{synthesize, write_observations, Catalog, ObjectSpec, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(
        args.next()
            .ok_or("usage: synth_observations OUT.csv [ASSIGNMENT] [DT]")?,
    );
    let assignment: Vec<u8> = args
        .next()
        .unwrap_or_else(|| "010".into())
        .chars()
        .map(|c| {
            c.to_digit(10)
                .map(|d| d as u8)
                .ok_or("assignment digits must be 0 or 1")
        })
        .collect::<Result<_, _>>()?;
    let dt: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2e-3);

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/tongs");
    let object: ObjectSpec = serde_json::from_str(&std::fs::read_to_string(dir.join("object.json"))?)?;
    let catalog: Catalog = serde_json::from_str(&std::fs::read_to_string(dir.join("catalog.json"))?)?;
    let spec = SynthSpec {
        assignment,
        start: 0.0,
        duration: 1.0,
        dt,
        seed: 3,
        base_amplitude: [0.1, 0.4],
        joint_amplitude: [0.6, 0.05],
    };
    let obs = synthesize(&object, &catalog, &spec)?;
    write_observations(&out, &obs)?;
    println!(
        "{} samples of {} written to {}",
        obs.len(),
        catalog.label(&spec.assignment),
        out.display()
    );
    Ok(())
}
