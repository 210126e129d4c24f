#![no_main]

use libfuzzer_sys::fuzz_target;
use qamsched_cli::ExperimentSpec;

fuzz_target!(|input: &str| {
    let Ok(spec) = ExperimentSpec::parse(input) else {
        return;
    };
    // Accepted specs re-serialize to a spec that parses back to itself.
    let again = ExperimentSpec::parse(&spec.to_json()).expect("resolved spec parses");
    assert_eq!(again, spec);
    // Building must report errors, not panic.
    if spec.channel.num_states <= 64 && spec.system.queue_size <= 64 {
        let _ = spec.build_model();
    }
});
