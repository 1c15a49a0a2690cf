use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlann::dataio::{
    generate_synthetic_corpus, load_wav, synthesize_clip, total_counts, write_wav, AudioClip, CorpusDir, Label,
    SurrogateClass,
};

fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["audio", "annotations"] {
        for e in std::fs::read_dir(root.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.insert(
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                std::fs::read(&p).unwrap(),
            );
        }
    }
    out.insert("split.txt".into(), std::fs::read(root.join("split.txt")).unwrap());
    out
}

#[test]
fn synthetic_corpus_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(10, 7, a.path()).unwrap();
    generate_synthetic_corpus(10, 7, b.path()).unwrap();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.len(), 2 * 30 + 1);
    assert_eq!(fa, fb);
}

#[test]
fn synthetic_corpus_reloads_with_valid_splits() {
    let d = tempfile::tempdir().unwrap();
    let written = generate_synthetic_corpus(10, 3, d.path()).unwrap();
    let corpus = CorpusDir::new(d.path());
    let loaded = corpus.load_splits().unwrap();
    for (w, l) in written.iter().zip(&loaded) {
        let mut we = w.events.clone();
        let mut le = l.events.clone();
        we.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        le.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        assert_eq!(we, le);
    }
    let counts = total_counts(&loaded);
    assert_eq!(counts[Label::Normal.index()], 10);
    assert_eq!(counts[Label::Wheeze.index()], 10);
    assert_eq!(counts[Label::FineCrackle.index()], 10);
    assert_eq!(
        counts.iter().sum::<usize>(),
        loaded.iter().map(|s| s.len()).sum::<usize>()
    );
    let train = loaded[0].patients();
    assert!(loaded[2].patients().iter().all(|p| !train.contains(p)));
    assert!(loaded[1].patients().iter().all(|p| train.contains(p)));
    let ev = &loaded[1].events[0];
    let clip = corpus.event_clip(ev).unwrap();
    assert_eq!(clip.len() as u64, (ev.offset_ms - ev.onset_ms) * 8);
}

#[test]
fn wheeze_spectrum_peaks_in_tone_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let (clip, f0) = synthesize_clip(SurrogateClass::Wheeze, 2000, &mut rng).unwrap();
        let x = clip.samples();
        let n = x.len();
        // 4 Hz bins; magnitude of the DFT at each bin up to Nyquist
        let (peak, _) = (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let ang = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    re += v * ang.cos();
                    im -= v * ang.sin();
                }
                (k, re.hypot(im))
            })
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let hz = peak as f64 * 8000.0 / n as f64;
        assert!((400.0..=800.0).contains(&hz), "peak at {hz} Hz");
        assert!((hz - f0.unwrap()).abs() <= 4.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wav_round_trip_within_one_lsb(vals in prop::collection::vec(-1.0f64..1.0, 1..400), rate in 1000u32..48000) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.wav");
        let clip = AudioClip::new(vals, rate).unwrap();
        write_wav(&p, &clip).unwrap();
        let back = load_wav(&p).unwrap();
        prop_assert_eq!(back.sample_rate_hz(), rate);
        prop_assert_eq!(back.len(), clip.len());
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        // a second pass is exact
        write_wav(&p, &back).unwrap();
        prop_assert_eq!(load_wav(&p).unwrap(), back);
    }
}
