// Scratch probe: desk-scale mesh for 2D temporal studies (temporary).

use fraccn::harness::{run_study, Axis, GridPoint, StudyConfig};
use fraccn::problems::huxley_2d;
use fraccn::quadrature::FractionalOrder;

#[test]
fn probe_temporal_floor() {
    let mut cfg = StudyConfig::default();
    cfg.load_quad_degree = Some(1);
    for m in [160usize, 192, 224] {
        for a in [0.4, 0.6] {
            let problem = huxley_2d(FractionalOrder::new(a).unwrap());
            let grid: Vec<GridPoint> = (0..4)
                .map(|i| GridPoint { m, dt: 2f64.powi(-(1 + i as i32)) })
                .collect();
            let report = run_study(&problem, Axis::Temporal, &grid, &cfg).unwrap();
            let rates: Vec<String> = report
                .rows
                .iter()
                .skip(1)
                .map(|r| format!("{:.4}", r.rate.unwrap()))
                .collect();
            println!("m={m} alpha={a}: rates = {rates:?}");
        }
    }
    panic!("probe only");
}
