#![no_main]

use libfuzzer_sys::fuzz_target;
use qamsched_core::structure::{policy_to_thresholds, thresholds_to_policy, thresholds_to_policy_lenient};
use qamsched_core::ThresholdVector;

fuzz_target!(|data: (u8, u8, u8, Vec<u8>)| {
    let (queue_size, num_h, max_action, raw) = data;
    let queue_size = usize::from(queue_size % 32);
    let num_h = usize::from(num_h % 8) + 1;
    let max_action = usize::from(max_action % 8) + 1;
    let values: Vec<usize> = raw.iter().map(|&v| usize::from(v)).collect();
    let Ok(t) = ThresholdVector::from_flat(queue_size, num_h, max_action, values) else {
        return;
    };
    let lenient = thresholds_to_policy_lenient(&t);
    let repaired = t.repaired();
    assert!(repaired.is_feasible());
    let strict = thresholds_to_policy(&repaired).expect("repaired thresholds decode");
    // Feasible thresholds survive the round trip through a policy.
    assert_eq!(policy_to_thresholds(&strict, max_action).unwrap(), repaired);
    if t.is_feasible() {
        assert_eq!(lenient, strict);
    }
});
