#![no_main]

use gridmpc::scenario::Profile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(profile) = Profile::read_csv(data, 30.0) {
        let mut out = Vec::new();
        profile.write_csv(&mut out).unwrap();
        assert_eq!(Profile::read_csv(out.as_slice(), 30.0).unwrap(), profile);
    }
});
