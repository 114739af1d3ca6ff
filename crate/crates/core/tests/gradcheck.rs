use ldrcnet::gradcheck::{CheckOptions, GradCheckRegistry};

#[test]
fn every_registered_case_passes() {
    let reports = GradCheckRegistry::default().run(None, &CheckOptions::default()).unwrap();
    for r in &reports {
        println!("{:<24} {:<7} worst {:.3e} checked {:>4} skipped {} {:?}", r.name, r.module, r.worst, r.checked, r.skipped, r.elapsed);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
