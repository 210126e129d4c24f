#![no_main]

use libfuzzer_sys::fuzz_target;
use qamsched_core::Policy;

fuzz_target!(|input: &str| {
    if let Ok(p) = Policy::from_csv(input) {
        assert_eq!(Policy::from_csv(&p.to_csv()).unwrap(), p);
    }
});
