#![no_main]

use libfuzzer_sys::fuzz_target;
use rnn_ekf::models::{DynamicModel, ModelFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = ModelFile::from_json_str(text) {
        let (model, theta) = file.instantiate().unwrap();
        let x = vec![0.0; model.n_x()];
        let u = vec![0.0; model.n_u()];
        let (tx, ty) = model.split(theta.as_slice());
        model.state_update(&x, &u, tx);
        model.output(&x, &u, ty);
        let again = ModelFile::from_json_str(&file.to_json().unwrap()).unwrap();
        assert_eq!(again, file);
    }
});
