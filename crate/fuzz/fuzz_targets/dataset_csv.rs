#![no_main]

use gridmpc::scenario::IoDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = IoDataset::read_csv(data) {
        let mut out = Vec::new();
        set.write_csv(&mut out).unwrap();
        assert_eq!(IoDataset::read_csv(out.as_slice()).unwrap(), set);
    }
});
