#![no_main]

use gridmpc::harness::{read_plans_csv, write_plans_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(plans) = read_plans_csv(data) {
        let mut out = Vec::new();
        write_plans_csv(&plans, &mut out).unwrap();
        let again = read_plans_csv(out.as_slice()).unwrap();
        assert_eq!(again.len(), plans.len());
    }
});
