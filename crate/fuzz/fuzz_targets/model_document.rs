#![no_main]

use libfuzzer_sys::fuzz_target;
use safe_mdp::document::{ErrorSource, ModelDocument};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(doc) = ModelDocument::from_json(text) else { return };
    if let Ok(mdp) = doc.to_mdp() {
        let again = ModelDocument::from_json(&ModelDocument::from_mdp(&mdp).to_json()).expect("emitted documents parse");
        assert_eq!(again.to_mdp().expect("emitted documents validate"), mdp);
    }
    let _ = doc.uncertainty_set(ErrorSource::Counts { delta: 0.05 });
    let _ = doc.uncertainty_set(ErrorSource::Inline);
});
