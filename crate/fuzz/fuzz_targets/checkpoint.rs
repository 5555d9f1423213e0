#![no_main]
use gestalt_core::gestaltnet::RegionModel;
use gestalt_core::nn::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // Compared as bytes: NaN payloads make tensor equality useless here.
        let bytes = ckpt.encode().expect("decoded checkpoint re-encodes");
        let again = Checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.encode().unwrap(), bytes);
        let _ = RegionModel::from_checkpoint(&ckpt);
    }
});
