#![no_main]

use gridmpc::problems::Program;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(program) = Program::from_json(text) {
            let again = Program::from_json(&program.to_json().unwrap()).unwrap();
            assert_eq!(again.num_vars(), program.num_vars());
            let _ = program.max_residual(&vec![0.0; program.num_vars()]);
        }
    }
});
