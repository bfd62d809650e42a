#![no_main]

use libfuzzer_sys::fuzz_target;
use loopon::io::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(c) = RunConfig::parse(s) {
            let args = c.to_args();
            assert_eq!(args[0], c.command);
            let json = serde_json::to_string(&c).unwrap();
            let back = RunConfig::parse(&json).unwrap();
            assert_eq!(back.to_args(), args);
        }
    }
});
