#![no_main]

use libfuzzer_sys::fuzz_target;
use loopon::io::RunManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = RunManifest::parse(s) {
            let text = serde_json::to_string(&m).unwrap();
            let back = RunManifest::parse(&text).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
            let _ = m.core().to_config().to_args();
        }
    }
});
