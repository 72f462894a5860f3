//! Round trip of a dataset through CSV and its alphabet sidecar.

use bellman_calib::mdp::TransitionDataset;
use bellman_calib::simulation::{generate_dataset, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let dir = std::env::temp_dir().join("bellman-io");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let path = dir.join("sim.csv");

    let data = generate_dataset(&SimConfig::new(500, 0.8, 0.6, 2)?)?;
    data.write_csv(&path)?;
    let back = TransitionDataset::read_csv(&path)?;
    println!("{} rows, {} states, sidecar {}", back.len(), back.n_states(), TransitionDataset::sidecar_path(&path).display());
    let r = back.record(0);
    println!("first row: s0 {:?} a0 {} y0 {} s1 {:?}", back.alphabet().tuple(r.s0), r.a0, r.y0, back.alphabet().tuple(r.s1));
    assert_eq!(back.records(), data.records());
    Ok(())
}
