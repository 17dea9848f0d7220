use std::time::Instant;

use trian::gradcheck::run_suite;

#[test]
fn every_op_and_the_model_pass_finite_differences() {
    let start = Instant::now();
    let suite = run_suite(3).unwrap();
    for e in &suite {
        eprintln!("{:<18} {:.3e} ({} coords) {:?}", e.name, e.report.max_rel_error, e.report.coordinates, e.report.worst);
    }
    eprintln!("{:?}", start.elapsed());
    assert!(suite.iter().all(|e| e.passes()));
}
