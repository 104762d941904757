#![no_main]
use iaad_core::metrics::MetricsReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = MetricsReport::from_json_str(text) {
            let _ = MetricsReport::from_json_str(&report.to_json_string());
        }
    }
});
