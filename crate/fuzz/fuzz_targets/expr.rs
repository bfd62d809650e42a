#![no_main]

use libfuzzer_sys::fuzz_target;
use loopon::io::parse_expr;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(v) = parse_expr(s) {
            assert!(v.is_finite());
        }
    }
});
