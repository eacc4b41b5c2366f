mod common;

use std::cell::Cell;

use common::fixture::{self, Fixture};
use maskcd::decoding::{softmax, LogitSource};
use maskcd::eval::{answer_pope, caption_scenes, pope_metrics};
use maskcd::model::{GroundingLayout, GroundingOptions, HeadRole, LanguagePrior};
use maskcd::synthdata::{
    build_pope_questions, corpus_stats, make_prompt, question_prompt, Answer, Lexicon, PopeSplit,
    PromptTemplate, Scene,
};
use maskcd::trace::{profile_counts, profile_parallel};
use maskcd::{
    build_grounded_model, build_mask, count_exceedances, decode_baseline, decode_maskcd, profile,
    DecodeParams, Error, HeadId, ImageHeadMask, Model, ModelConfig, MultimodalSequence, Result,
    StepOutput,
};

fn scene_with(lexicon: &Lexicon, names: &[&str]) -> Scene {
    let sp = lexicon.specials();
    let mut objects: Vec<usize> = names.iter().map(|n| lexicon.find(n).unwrap()).collect();
    objects.sort_unstable();
    let mut image = Vec::new();
    for (k, o) in objects.iter().enumerate() {
        image.push(lexicon.object(*o).image_token);
        if k + 1 < objects.len() {
            image.push(sp.image_background);
        }
    }
    image.resize(8, sp.image_end);
    Scene {
        scene_id: 0,
        objects,
        image,
    }
}

fn caption_prompt<T>(f: &Fixture<T>, scene: &Scene) -> MultimodalSequence {
    make_prompt(scene, &f.template.caption_instruction, &f.template, 40).unwrap()
}

fn planted_mask<T: maskcd::Scalar>(f: &Fixture<T>) -> ImageHeadMask {
    let (layers, heads) = f.model.head_shape();
    ImageHeadMask::from_image_heads(layers, heads, &f.heads).unwrap()
}

#[test]
fn single_object_caption_names_it() {
    let f = fixture::build::<f64>(4, 4, 4, 10, false, 1);
    let scene = scene_with(&f.lexicon, &["dog"]);
    let params = DecodeParams::greedy(0.0, 10).with_stop(f.lexicon.specials().eos);
    let out = decode_baseline(&f.model, &caption_prompt(&f, &scene), &params).unwrap();
    let dog = f.lexicon.object(f.lexicon.find("dog").unwrap()).token;
    assert_eq!(out.tokens, vec![dog, f.lexicon.specials().eos]);
    assert!(out.stopped);
}

#[test]
fn two_object_caption_names_both() {
    let f = fixture::build::<f32>(4, 4, 6, 10, false, 2);
    let scene = scene_with(&f.lexicon, &["dog", "cup"]);
    let params = DecodeParams::greedy(0.0, 10).with_stop(f.lexicon.specials().eos);
    let out = decode_baseline(&f.model, &caption_prompt(&f, &scene), &params).unwrap();
    for name in ["dog", "cup"] {
        let t = f.lexicon.object(f.lexicon.find(name).unwrap()).token;
        assert!(out.tokens.contains(&t), "{name} missing from {:?}", out.tokens);
    }
}

#[test]
fn clean_fixture_captions_are_exact() {
    let f = fixture::build::<f64>(4, 4, 4, 40, false, 3);
    let params = DecodeParams::greedy(0.0, 12);
    let caps = caption_scenes(&f.model, None, &f.scenes, &f.lexicon, &f.template, &params).unwrap();
    for (c, s) in caps.iter().zip(&f.scenes) {
        let words: Vec<usize> = c.tokens.iter().filter_map(|t| f.lexicon.object_of_text(*t)).collect();
        assert_eq!(words, s.objects);
    }
}

#[test]
fn planted_heads_recovered_across_tau() {
    for (l, h, k, seed) in [(4, 4, 2, 10), (6, 6, 9, 11), (8, 8, 8, 12)] {
        let f = fixture::build::<f32>(l, h, k, 12, false, seed);
        let corpus: Vec<_> = f.scenes.iter().map(|s| caption_prompt(&f, s)).collect();
        let trace = profile(&f.model, &corpus, 12, None).unwrap();
        for tau in [0.5, 0.6, 0.7, 0.8, 0.9] {
            let mask = build_mask(&count_exceedances(&trace, tau).unwrap());
            assert_eq!(mask.image_heads(), f.heads, "L={l} H={h} tau={tau}");
        }
    }
}

#[test]
fn grounding_mass_bounds_hold_at_every_step() {
    let f = fixture::build::<f64>(4, 4, 5, 15, true, 4);
    let layout = GroundingLayout::new(f.model.config(), &f.lexicon, &f.template, &f.heads).unwrap();
    let corpus: Vec<_> = f.scenes.iter().map(|s| caption_prompt(&f, s)).collect();
    let trace = profile(&f.model, &corpus, 20, None).unwrap();
    for entry in trace.entries() {
        for (id, v) in entry.iter() {
            match layout.role(id) {
                HeadRole::Weak => assert!(*v <= 0.4, "{id:?} {v}"),
                _ => assert!(*v >= 0.9, "{id:?} {v}"),
            }
        }
    }
}

#[test]
fn masked_branch_is_blind_to_the_image() {
    let lexicon = Lexicon::standard(12).unwrap();
    let template = PromptTemplate::standard(&lexicon);
    let cfg = ModelConfig::new(4, 4, 96, lexicon.vocab_size(), 40, 5);
    let heads = vec![HeadId::new(0, 1), HeadId::new(2, 3), HeadId::new(3, 0)];
    let options = GroundingOptions {
        weak_fraction: 0.0,
        ..GroundingOptions::default()
    };
    let m: Model<f64> = build_grounded_model(&cfg, &lexicon, &template, &heads, &options).unwrap();
    let mask = ImageHeadMask::from_image_heads(4, 4, &heads).unwrap();
    let a = scene_with(&lexicon, &["dog", "cup"]);
    let b = scene_with(&lexicon, &["clock"]);
    let pa = make_prompt(&a, &template.caption_instruction, &template, 40).unwrap();
    let pb = make_prompt(&b, &template.caption_instruction, &template, 40).unwrap();
    let (ma, _) = m.forward_step(&pa, Some(&mask), None).unwrap();
    let (mb, _) = m.forward_step(&pb, Some(&mask), None).unwrap();
    assert_eq!(ma.logits, mb.logits);

    // Direct path only: unembedding of token plus position embedding.
    let w = m.weights();
    let last = pa.len() - 1;
    let x = &w.token_embedding.row(pa.tokens()[last] as usize) + &w.position_embedding.row(last);
    let direct = w.unembedding.dot(&x);
    for (got, want) in ma.logits.iter().zip(direct.iter()) {
        assert!((got - want).abs() <= 1e-9);
    }
    let (full, _) = m.forward_step(&pa, None, None).unwrap();
    assert_ne!(full.logits, ma.logits);
}

#[test]
fn contrast_raises_grounded_token_probability() {
    let f = fixture::build::<f64>(8, 8, 8, 50, true, 6);
    let mask = planted_mask(&f);
    let params = DecodeParams::greedy(1.0, 1).recording();
    for scene in &f.scenes {
        let prompt = caption_prompt(&f, scene);
        let out = decode_maskcd(&f.model, &mask, &prompt, &params).unwrap();
        let step = &out.steps[0];
        let first = f.lexicon.object(scene.objects[0]).token as usize;
        let p_base = softmax(&step.base)[first];
        let p_comb = softmax(&step.combined)[first];
        assert!(p_comb >= p_base, "scene {}: {p_comb} < {p_base}", scene.scene_id);
    }
}

#[test]
fn grounded_margin_grows_with_alpha() {
    let f = fixture::build::<f64>(8, 8, 8, 30, true, 7);
    let mask = planted_mask(&f);
    for scene in &f.scenes {
        let prompt = caption_prompt(&f, scene);
        let first = f.lexicon.object(scene.objects[0]).token as usize;
        let prior_words: Vec<usize> = (0..f.lexicon.len())
            .filter(|o| !scene.contains(*o))
            .map(|o| f.lexicon.object(o).token as usize)
            .collect();
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.0, 0.5, 1.0, 2.0, 4.0, 6.0] {
            let out = decode_maskcd(&f.model, &mask, &prompt, &DecodeParams::greedy(alpha, 1).recording()).unwrap();
            let c = &out.steps[0].combined;
            assert!(c.iter().all(|v| v.is_finite()));
            let margin = prior_words.iter().map(|w| c[first] - c[*w]).fold(f64::INFINITY, f64::min);
            assert!(margin >= last - 1e-9);
            last = margin;
        }
    }
}

#[test]
fn unmasked_branch_matches_standalone_run() {
    let f = fixture::build::<f32>(4, 4, 4, 8, true, 8);
    let mask = planted_mask(&f);
    let params = DecodeParams::greedy(2.0, 10).recording();
    for scene in &f.scenes {
        let prompt = caption_prompt(&f, scene);
        let out = decode_maskcd(&f.model, &mask, &prompt, &params).unwrap();
        let mut seq = prompt.clone();
        let mut state = None;
        for (step, tok) in out.steps.iter().zip(&out.tokens) {
            let (alone, next) = f.model.forward_step(&seq, None, state.take()).unwrap();
            state = Some(next);
            assert_eq!(alone.logits, step.base);
            seq.push_generated(*tok);
        }
    }
}

/// Counts forward passes of the wrapped model.
struct Counting<'a, T> {
    inner: &'a Model<T>,
    calls: Cell<usize>,
}

impl<T: maskcd::Scalar> LogitSource<T> for Counting<'_, T> {
    type State = maskcd::IncrementalState<T>;

    fn head_shape(&self) -> (usize, usize) {
        self.inner.head_shape()
    }

    fn max_seq_len(&self) -> usize {
        self.inner.config().max_seq_len
    }

    fn step(
        &self,
        seq: &MultimodalSequence,
        mask: Option<&ImageHeadMask>,
        state: Option<Self::State>,
    ) -> Result<(StepOutput<T>, Self::State)> {
        self.calls.set(self.calls.get() + 1);
        self.inner.forward_step(seq, mask, state)
    }
}

#[test]
fn maskcd_costs_two_passes_per_token() {
    let f = fixture::build::<f32>(4, 4, 4, 10, true, 9);
    let mask = planted_mask(&f);
    let counting = Counting {
        inner: &f.model,
        calls: Cell::new(0),
    };
    for (i, scene) in f.scenes.iter().enumerate() {
        counting.calls.set(0);
        let mut params = DecodeParams::greedy(1.0, 3 + i % 9);
        if i % 2 == 0 {
            params.stop_token = Some(f.lexicon.specials().eos);
        }
        let out = decode_maskcd(&counting, &mask, &caption_prompt(&f, scene), &params).unwrap();
        assert_eq!(counting.calls.get(), 2 * out.tokens.len());
        assert_eq!(out.forward_passes, 2 * out.tokens.len());
        counting.calls.set(0);
        let base = decode_baseline(&counting, &caption_prompt(&f, scene), &params).unwrap();
        assert_eq!(counting.calls.get(), base.tokens.len());
    }
}

#[test]
fn identity_reductions_on_fixture() {
    let f = fixture::build::<f64>(4, 4, 4, 20, true, 10);
    let mask = planted_mask(&f);
    let ones = ImageHeadMask::all_ones(4, 4);
    for scene in &f.scenes {
        let p = caption_prompt(&f, scene);
        let base = decode_baseline(&f.model, &p, &DecodeParams::greedy(0.0, 12)).unwrap();
        let zero = decode_maskcd(&f.model, &mask, &p, &DecodeParams::greedy(0.0, 12)).unwrap();
        let full = decode_maskcd(&f.model, &ones, &p, &DecodeParams::greedy(4.0, 12)).unwrap();
        assert_eq!(base.tokens, zero.tokens);
        assert_eq!(base.tokens, full.tokens);
    }
}

#[test]
fn decoding_rejects_bad_requests() {
    let f = fixture::build::<f32>(2, 2, 2, 2, false, 11);
    let p = caption_prompt(&f, &f.scenes[0]);
    assert!(matches!(
        decode_baseline(&f.model, &p, &DecodeParams::greedy(0.0, 29)),
        Err(Error::SequenceOverflow { len: 41, max: 40 })
    ));
    assert!(decode_baseline(&f.model, &p, &DecodeParams::greedy(0.0, 28)).is_ok());
    let wrong = ImageHeadMask::all_ones(3, 2);
    assert!(matches!(
        decode_maskcd(&f.model, &wrong, &p, &DecodeParams::greedy(1.0, 4)),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn stop_token_truncates() {
    let f = fixture::build::<f64>(4, 4, 4, 10, false, 12);
    let scene = scene_with(&f.lexicon, &["dog", "cup"]);
    let sp = f.lexicon.specials();
    let params = DecodeParams::greedy(0.0, 12).with_stop(sp.eos);
    let out = decode_baseline(&f.model, &caption_prompt(&f, &scene), &params).unwrap();
    assert_eq!(out.tokens.len(), 4);
    assert_eq!(out.tokens.last(), Some(&sp.eos));
    let sep = DecodeParams::greedy(0.0, 12).with_stop(sp.separator);
    assert_eq!(decode_baseline(&f.model, &caption_prompt(&f, &scene), &sep).unwrap().tokens.len(), 2);
}

#[test]
fn profile_concatenates_and_parallelizes() {
    let f = fixture::build::<f32>(4, 4, 4, 9, true, 13);
    let corpus: Vec<_> = f.scenes.iter().map(|s| caption_prompt(&f, s)).collect();
    let two = profile(&f.model, &corpus[..2], 5, None).unwrap();
    assert_eq!(two.len(), 10);
    assert_eq!(two.prompts(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    assert!(matches!(profile(&f.model, &[], 5, None), Err(Error::EmptyCorpus)));

    let seq = profile(&f.model, &corpus, 15, Some(f.lexicon.specials().eos)).unwrap();
    assert_eq!(seq, profile(&f.model, &corpus, 15, Some(f.lexicon.specials().eos)).unwrap());
    for workers in [1, 2, 4, 16] {
        let par = profile_parallel(&f.model, &corpus, 15, Some(f.lexicon.specials().eos), workers).unwrap();
        assert_eq!(par, seq);
        let streamed = profile_counts(&f.model, &corpus, 15, Some(f.lexicon.specials().eos), 0.5, workers).unwrap();
        assert_eq!(streamed, count_exceedances(&seq, 0.5).unwrap());
    }
}

#[test]
fn pope_present_objects_answer_yes() {
    let f = fixture::build::<f64>(4, 4, 4, 30, false, 14);
    let qs = build_pope_questions(&f.scenes, &f.lexicon, 2, PopeSplit::Random, 1).unwrap();
    let answers = answer_pope(&f.model, None, &qs, &f.scenes, &f.lexicon, &f.template, &DecodeParams::greedy(0.0, 1)).unwrap();
    for a in &answers {
        assert!(!a.invalid);
        assert_eq!(a.predicted, Some(a.question.truth));
    }
    let masked = answer_pope(
        &f.model,
        Some(&planted_mask(&f)),
        &qs,
        &f.scenes,
        &f.lexicon,
        &f.template,
        &DecodeParams::greedy(0.0, 1),
    )
    .unwrap();
    assert_eq!(answers, masked);
}

#[test]
fn masked_answers_follow_the_prior_only() {
    let f = fixture::build::<f64>(4, 4, 4, 60, true, 15);
    let stats = corpus_stats(&f.scenes, &f.lexicon);
    let prior = LanguagePrior::contaminated(&stats);
    let mask = planted_mask(&f);
    let sp = f.lexicon.specials();
    for split in PopeSplit::ALL {
        for q in build_pope_questions(&f.scenes, &f.lexicon, 2, split, 2).unwrap() {
            let scene = &f.scenes[q.scene_id];
            let prompt = question_prompt(scene, q.object, &f.lexicon, &f.template, 40).unwrap();
            let (out, _) = f.model.forward_step(&prompt, Some(&mask), None).unwrap();
            let gap = out.logits[sp.yes as usize] - out.logits[sp.no as usize];
            let want = prior.answer_strength * prior.popularity[q.object]
                - GroundingOptions::default().answer_threshold;
            assert!((gap - want).abs() <= 1e-9);
        }
    }
}

#[test]
fn baseline_accuracy_degrades_from_random_to_adversarial() {
    let f = fixture::build::<f32>(4, 4, 4, 600, true, 16);
    let params = DecodeParams::greedy(0.0, 1);
    let mut acc = Vec::new();
    for split in PopeSplit::ALL {
        let qs = build_pope_questions(&f.scenes, &f.lexicon, 2, split, 3).unwrap();
        assert!(qs.len() >= 1000);
        let answers = answer_pope(&f.model, None, &qs, &f.scenes, &f.lexicon, &f.template, &params).unwrap();
        let r = pope_metrics(&answers).unwrap();
        assert_eq!(qs.iter().filter(|q| q.truth == Answer::Yes).count() * 2, qs.len());
        acc.push(r.accuracy);
    }
    // Two standard errors of a 1200-question accuracy.
    let tol = 2.0 * (0.25f64 / 1200.0).sqrt();
    assert!(acc[0] + tol >= acc[1], "{acc:?}");
    assert!(acc[1] + tol >= acc[2], "{acc:?}");
    assert!(acc[0] > acc[2], "{acc:?}");
}
