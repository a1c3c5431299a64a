use volterra_core::{grid_hilbert::TimeGrid, kernels::KernelSpec, silt, simulate, Seed};
fn main() {
    let spec = KernelSpec::wiener();
    for m in [128usize, 256, 512] {
        let ens = simulate::sample_planar(&spec, &TimeGrid::uniform(m).unwrap().shared(), 2000, Seed::new(7)).unwrap();
        for eps in [0.1, 0.03, 0.01, 0.003, 0.001] {
            let (p, r) = silt::silt_both(&ens, eps, &silt::SimplexConfig::nested(2)).unwrap();
            println!(
                "M {m} eps {eps} plain var {:.5} rosen var {:.5} rosen mean {:.4}",
                p.variance, r.variance, r.mean
            );
        }
    }
}
