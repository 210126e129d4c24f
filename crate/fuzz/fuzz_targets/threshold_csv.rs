#![no_main]

use libfuzzer_sys::fuzz_target;
use qamsched_core::ThresholdVector;

fuzz_target!(|data: (u8, &str)| {
    let (queue_size, text) = data;
    let queue_size = usize::from(queue_size);
    if let Ok(t) = ThresholdVector::from_csv(text, queue_size) {
        assert_eq!(ThresholdVector::from_csv(&t.to_csv(), queue_size).unwrap(), t);
    }
});
