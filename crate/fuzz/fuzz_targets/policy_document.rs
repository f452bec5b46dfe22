#![no_main]

use libfuzzer_sys::fuzz_target;
use safe_mdp::document::PolicyDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(doc) = PolicyDocument::from_json(text) else { return };
    for (n, m) in [(1, 1), (2, 2), (3, 4)] {
        if let Ok(pi) = doc.to_policy(n, m) {
            assert_eq!(PolicyDocument::from_policy(&pi).to_policy(n, m).expect("emitted policies validate"), pi);
        }
    }
});
