#![no_main]

use libfuzzer_sys::fuzz_target;
use slowfast::experiments::{parse_ini, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Err(e) = parse_ini(text) {
        assert!(e.offset <= text.len());
    }
    if let Ok(config) = ExperimentConfig::parse(text) {
        let again = ExperimentConfig::parse(&config.canonical()).expect("canonical form parses");
        assert_eq!(again, config);
    }
});
