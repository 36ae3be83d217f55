#![no_main]

use libfuzzer_sys::fuzz_target;
use slowfast::experiments::parse_expression;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match parse_expression(text) {
        Ok(e) => {
            // printing must give back the same tree
            let again = parse_expression(&e.to_string()).expect("printed form parses");
            assert_eq!(again.tree, e.tree);
            let _ = e.eval(0.5, -1.25);
        }
        Err(err) => assert!(err.offset <= text.len()),
    }
});
