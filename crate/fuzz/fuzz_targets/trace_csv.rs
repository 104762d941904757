#![no_main]
use iaad_core::link::LatencyTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(trace) = LatencyTrace::from_csv_str(text) {
            let again = LatencyTrace::from_csv_str(&trace.to_csv_string()).expect("written traces parse");
            assert_eq!(again, trace);
        }
    }
});
