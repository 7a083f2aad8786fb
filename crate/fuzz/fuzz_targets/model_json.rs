#![no_main]

use gfmid::normalform::HwNormalForm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = HwNormalForm::from_json(text) {
        let again = HwNormalForm::from_json(&model.to_json()).expect("written model parses");
        assert_eq!(again.n_ivars(), model.n_ivars());
    }
});
