#![no_main]

use libfuzzer_sys::fuzz_target;
use safe_mdp::benchmark::{make_grid_benchmark, BenchmarkConfig, MAX_GRID_STATES};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = BenchmarkConfig::from_json(text) else { return };
    if cfg.dim1 * cfg.dim2 <= MAX_GRID_STATES.min(400) {
        let (mdp, baseline) = make_grid_benchmark(&cfg).expect("validated configs build");
        assert_eq!(baseline.n_states(), mdp.n_states());
    }
});
