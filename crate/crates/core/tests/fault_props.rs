use mm_core::testkit::{check_fault_run, fault_op};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn injected_provider_faults_leave_stories_valid(ops in prop::collection::vec(fault_op(), 1..20)) {
        let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        runtime
            .block_on(check_fault_run(&ops, dir.path()))
            .map_err(TestCaseError::fail)?;
    }
}
