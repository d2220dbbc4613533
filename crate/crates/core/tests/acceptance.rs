use kld_core::validation::run_all;

#[test]
fn acceptance_criteria() {
    let reports = run_all(0, &[]);
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
