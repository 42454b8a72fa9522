use cagekit::cage::{build_cage, CageConfig};
use cagekit::mvc::MvcCoords;
use cagekit::net::synth_dataset;
use std::time::Instant;

fn main() {
    let data = synth_dataset(1, 1024, 1234);
    let cloud = &data[3]; // cone
    let config = CageConfig::default();

    let t0 = Instant::now();
    let artifacts = build_cage(cloud, &config).unwrap();
    let t_build = t0.elapsed().as_secs_f64();

    let cage = artifacts.final_cage();
    let t1 = Instant::now();
    let coords = MvcCoords::bind(cloud, cage).unwrap();
    let t_bind = t1.elapsed().as_secs_f64();

    println!(
        "build {:.2}s (faces {} -> {}), bind {:.3}s, neg frac {:.4}, log len {}",
        t_build,
        artifacts.initial.faces.len(),
        cage.faces.len(),
        t_bind,
        coords.negative_fraction(),
        artifacts.log.len()
    );
}
