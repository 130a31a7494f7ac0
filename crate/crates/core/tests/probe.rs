// temporary diagnostic, deleted before finishing
use qbo_core::gp::{GpModel, ObservationSet};
use qbo_core::kernel::{MeanFunction, SeKernelParams};
use qbo_core::linalg::Mat;
use qbo_core::qei::{build_transform, quadrature_qei};
use qbo_core::rng::{Purpose, Stream};
use qbo_core::sga::*;

fn desk_model(seed: u64) -> GpModel<f64> {
    let bounds = vec![(0.0, 1.0), (0.0, 1.0)];
    let pts = latin_hypercube(6, &bounds, Stream::new(seed, Purpose::LhsStart, 9, 0));
    let s = Stream::new(seed, Purpose::Sample, 9, 0);
    let mut obs = ObservationSet::new(bounds);
    for (i, p) in pts.into_iter().enumerate() {
        obs.push(p, s.normal(i as u64)).unwrap();
    }
    GpModel::fit(obs, SeKernelParams::new(1.0, vec![0.4, 0.4]), MeanFunction::zero(), 1e-4).unwrap()
}

#[test]
fn probe() {
    let model = desk_model(9);
    println!("y = {:?}", model.observations().values());
    println!("fstar = {:?}", model.incumbent());
    let h = FeasibleSet::new(vec![(0.0, 1.0), (0.0, 1.0)], 1e-5, model.observations().points().to_vec());
    let cfg = SgaConfig { restarts: Some(4), iterations: 30, grad_replicates: 256, eval_samples: 65_536, ..SgaConfig::default() };
    let flat: Vec<(f64, f64)> = vec![(0.0, 1.0); 4];
    let starts = latin_hypercube(4, &flat, Stream::new(cfg.seed, Purpose::LhsStart, 0, 0));
    for (r, s) in starts.iter().enumerate() {
        let x0 = project(&Mat::from_vec(2, 2, s.clone()), &h).unwrap();
        // oracle qEI at start
        let post = qbo_core::gp::posterior_batch(&model, &x0, false).unwrap();
        let t = build_transform(&post, model.incumbent().unwrap(), 0).unwrap();
        let oracle: f64 = quadrature_qei(&t, 50).unwrap();
        println!("start {r}: x0={:?} oracle_qei={oracle:.6} mean={:?} cov=[{:.4},{:.4};{:.4}]", x0.as_slice(), post.mean, post.cov.get(0,0), post.cov.get(0,1), post.cov.get(1,1));
        let (avg, trace) = sga_run(&model, &h, &Mat::zeros(0, 2), &x0, &cfg, r as u64).unwrap();
        let post2 = qbo_core::gp::posterior_batch(&model, &avg, false).unwrap();
        let t2 = build_transform(&post2, model.incumbent().unwrap(), 0).unwrap();
        let oracle2: f64 = quadrature_qei(&t2, 50).unwrap();
        println!("  avg={:?} oracle_qei={oracle2:.6}", avg.as_slice());
        println!("  qei trace: {:?}", trace.qei.iter().map(|v| (v*1e3).round()/1e3).collect::<Vec<_>>());
    }
}
