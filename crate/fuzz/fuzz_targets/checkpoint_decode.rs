#![no_main]

use libfuzzer_sys::fuzz_target;
use pilir::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // Anything that decodes must re-encode to something that decodes
        // to the same value.
        let again = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.tensors.len(), ckpt.tensors.len());
        let _ = ckpt.to_model();
        let _ = ckpt.problem();
    }
});
