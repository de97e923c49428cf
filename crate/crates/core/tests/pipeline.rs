use std::fs;

use ppgvc::corpus::{generate_corpus, noise_seed, render, utterance_plan, Corpus, CorpusSpec};
use ppgvc::dsp::{Analyzer, DspConfig, Waveform};
use ppgvc::neural::Network;
use ppgvc::pipeline::{
    features, prepare_stage1, relative_l2, synthesize_stage3_pairs, train_stage1, train_stage2, train_stage3,
    train_stage3_with, ArchConfig, CascadeConverter, Converter, DirectConverter, StageConfig,
};
use ppgvc::Error;

fn small_spec() -> CorpusSpec {
    CorpusSpec {
        utterances_per_speaker: 3,
        utterance_seconds: 0.6,
        ..CorpusSpec::default()
    }
}

fn arch() -> ArchConfig {
    ArchConfig::scaled(16, 2, 1, 8)
}

fn quick(epochs: usize) -> StageConfig {
    StageConfig {
        epochs,
        batch_segments: 4,
        learning_rate: 3e-3,
        seed: 11,
        ..StageConfig::default()
    }
}

fn speech(spec: &CorpusSpec, speaker: usize, utterances: std::ops::Range<usize>) -> Vec<Waveform> {
    utterances
        .map(|u| render(spec, &spec.speakers[speaker], &utterance_plan(spec, u), noise_seed(spec, speaker, u)).unwrap())
        .collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: Corpus,
    analyzer: Analyzer,
}

fn fixture() -> Fixture {
    let dsp = DspConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(), dir.path(), &dsp).unwrap();
    Fixture {
        _dir: dir,
        corpus,
        analyzer: Analyzer::new(&dsp).unwrap(),
    }
}

fn cascade(f: &Fixture) -> CascadeConverter {
    let spec = small_spec();
    let examples = prepare_stage1(&f.corpus, &f.analyzer).unwrap();
    let net1 = train_stage1(&examples, 8, f.analyzer.config(), &arch(), &quick(2)).unwrap().network;
    let net2 = train_stage2(&net1, &f.analyzer, &speech(&spec, 5, 0..3), &arch(), &quick(2))
        .unwrap()
        .network;
    CascadeConverter::new(net1, net2, f.analyzer.clone()).unwrap()
}

#[test]
fn zero_epochs_return_the_initialisation() {
    let f = fixture();
    let dsp = f.analyzer.config();
    let examples = prepare_stage1(&f.corpus, &f.analyzer).unwrap();
    let trained = train_stage1(&examples, 8, dsp, &arch(), &quick(0)).unwrap();
    assert!(trained.losses.is_empty());
    assert_eq!(trained.network, Network::new(arch().net1(dsp, 8), 11).unwrap());
    let net2 = train_stage2(&trained.network, &f.analyzer, &speech(&small_spec(), 5, 0..1), &arch(), &quick(0))
        .unwrap()
        .network;
    assert_eq!(net2, Network::new(arch().net2(dsp, 8), 11).unwrap());
}

#[test]
fn stage1_is_deterministic() {
    let f = fixture();
    let examples = prepare_stage1(&f.corpus, &f.analyzer).unwrap();
    let a = train_stage1(&examples, 8, f.analyzer.config(), &arch(), &quick(2)).unwrap();
    let b = train_stage1(&examples, 8, f.analyzer.config(), &arch(), &quick(2)).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.losses, b.losses);
    let c = train_stage1(&examples, 8, f.analyzer.config(), &arch(), &StageConfig { seed: 12, ..quick(2) }).unwrap();
    assert_ne!(a.network, c.network);
}

#[test]
fn label_count_mismatch_names_the_utterance() {
    let f = fixture();
    let victim = &f.corpus.utterances[4];
    let labels = victim.labels.as_ref().unwrap();
    let text = fs::read_to_string(labels).unwrap();
    fs::write(labels, text.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    match prepare_stage1(&f.corpus, &f.analyzer).unwrap_err() {
        Error::Labels { utterance, .. } => assert_eq!(utterance, victim.id),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn empty_inputs_are_rejected() {
    let f = fixture();
    let dsp = f.analyzer.config();
    assert!(train_stage1(&[], 8, dsp, &arch(), &quick(1)).is_err());
    let net1 = Network::new(arch().net1(dsp, 8), 0).unwrap();
    let mut net1 = net1;
    net1.set_mode(ppgvc::neural::Mode::Infer);
    assert!(matches!(
        train_stage2(&net1, &f.analyzer, &[], &arch(), &quick(1)),
        Err(Error::Empty(_))
    ));
    assert!(matches!(train_stage3(&[], dsp, &arch(), &quick(1), None), Err(Error::Empty(_))));
}

#[test]
fn cascade_pairs_match_conversion_and_preserve_frames() {
    let f = fixture();
    let casc = cascade(&f);
    let spec = small_spec();
    let src = speech(&spec, 0, 0..2);
    let pairs = synthesize_stage3_pairs(&casc, &src).unwrap();
    let again = synthesize_stage3_pairs(&casc, &src).unwrap();
    assert_eq!(pairs, again);
    for (p, w) in pairs.iter().zip(&src) {
        assert_eq!(p.input.n_frames(), p.target.n_frames());
        assert_eq!(p.input, features(&f.analyzer, w).unwrap());
        assert_eq!(&p.target, &casc.convert_spectrogram(w).unwrap());
    }
}

#[test]
fn conversion_accepts_unseen_speakers_and_is_repeatable() {
    let f = fixture();
    let casc = cascade(&f);
    let dsp = f.analyzer.config();
    let net3 = Network::new(arch().net3(dsp), 3).unwrap();
    let direct = DirectConverter::new(net3, f.analyzer.clone()).unwrap();
    // the source speaker is in no training set used above
    let w = &speech(&small_spec(), 4, 2..3)[0];
    let frames = f.analyzer.mfcc(w).unwrap().n_frames();
    for conv in [&casc as &dyn Converter, &direct] {
        let (s1, a1) = conv.convert(w).unwrap();
        let (s2, a2) = conv.convert(w).unwrap();
        assert_eq!(s1.n_frames(), frames);
        assert_eq!(s1.frames().ncols(), 257);
        assert_eq!(s1, s2);
        assert_eq!(a1.samples(), a2.samples());
    }
}

#[test]
fn converters_reject_mismatched_networks() {
    let dsp = DspConfig::default();
    let an = Analyzer::new(&dsp).unwrap();
    let net1 = Network::new(arch().net1(&dsp, 8), 0).unwrap();
    let wrong_p = Network::new(arch().net2(&dsp, 7), 0).unwrap();
    assert!(CascadeConverter::new(net1.clone(), wrong_p, an.clone()).is_err());
    assert!(DirectConverter::new(net1, an).is_err());
}

#[test]
fn direct_network_overfits_a_single_pair() {
    let f = fixture();
    let examples = prepare_stage1(&f.corpus, &f.analyzer).unwrap();
    let net1 = train_stage1(&examples, 8, f.analyzer.config(), &arch(), &quick(10)).unwrap().network;
    // a cascade that has learned something, so the pseudo-target looks like speech
    let stage2 = StageConfig {
        learning_rate: 3e-3,
        ..quick(60)
    };
    let net2 = train_stage2(&net1, &f.analyzer, &speech(&small_spec(), 5, 0..3), &arch(), &stage2)
        .unwrap()
        .network;
    let casc = CascadeConverter::new(net1, net2, f.analyzer.clone()).unwrap();
    let pairs = synthesize_stage3_pairs(&casc, &speech(&small_spec(), 1, 0..1)).unwrap();
    let cfg = StageConfig {
        epochs: 250,
        learning_rate: 1e-3,
        ..quick(0)
    };
    let arch = ArchConfig {
        dropout_rate: 0.0,
        ..ArchConfig::scaled(32, 2, 1, 16)
    };
    let target = pairs[0].target.to_log(f.analyzer.config());
    let mut trajectory = Vec::new();
    let trained = train_stage3_with(&pairs, f.analyzer.config(), &arch, &cfg, None, &mut |epoch, net| {
        if epoch % 50 == 49 {
            let direct = DirectConverter::new(net.clone(), f.analyzer.clone())?;
            let s = direct.spectrogram_from_features(&pairs[0].input)?;
            trajectory.push(relative_l2(&s.to_log(f.analyzer.config()), &target)?);
        }
        Ok(())
    })
    .unwrap();
    let direct = DirectConverter::new(trained.network, f.analyzer.clone()).unwrap();
    let fit = relative_l2(&direct.spectrogram_from_features(&pairs[0].input).unwrap().to_log(f.analyzer.config()), &target).unwrap();
    assert!(fit < 0.05, "relative L2 {fit}, trajectory {trajectory:?}");
    assert!(trained.losses.last().unwrap() < &trained.losses[0]);
}
