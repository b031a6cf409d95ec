#![no_main]

use libfuzzer_sys::fuzz_target;
use rnn_ekf::data::parse_csv;

// First byte picks the channel counts, the rest is the file body.
fuzz_target!(|data: &[u8]| {
    let Some((&dims, body)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(body) else {
        return;
    };
    let (n_u, n_y) = ((dims & 0x0f) as usize % 4, (dims >> 4) as usize % 4);
    if let Ok(d) = parse_csv(text, n_u, n_y) {
        assert_eq!(d.n_u(), n_u);
        assert_eq!(d.n_y(), n_y);
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        let back = parse_csv(std::str::from_utf8(&out).unwrap(), n_u, n_y).unwrap();
        assert_eq!(back.total_len(), d.total_len());
    }
});
