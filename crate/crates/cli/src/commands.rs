use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use maskcd::eval::{
    answer_pope, caption_scenes, chair_metrics, pope_metrics, CaptionRecord, EvalReport, PopeAnswer,
};
use maskcd::synthdata::{
    build_pope_questions, generate_scenes, make_prompt, read_jsonl, write_jsonl, Lexicon,
    PopeQuestion, PopeSplit, PromptTemplate, Scene, SceneParams,
};
use maskcd::trace::{
    counts_to_string, heatmap_csv, heatmap_pgm, mask_to_string, read_counts, read_mask,
    read_trace_csv, trace_to_csv,
};
use maskcd::{
    build_mask, count_exceedances, mask_overlap, mask_stats, normalize_counts, random_mask,
    trace::profile_parallel, CountMatrix, DecodeParams, ImageHeadMask, Model32, MultimodalSequence,
    Overlap,
};

use crate::config::{ModelFile, RunConfig};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const PROFILE_SCENES_FILE: &str = "profile_scenes.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const TRACE_FILE: &str = "trace.csv";
pub const COUNTS_FILE: &str = "counts.txt";
pub const MASK_FILE: &str = "mask.txt";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub split: Option<PopeSplit>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Loaded config plus the model it points at.
pub struct Context {
    pub config: RunConfig,
    pub model_file: ModelFile,
    pub model_hash: String,
    pub lexicon: Lexicon,
    pub template: PromptTemplate,
    pub model: Model32,
}

impl Context {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut config = RunConfig::load(path)?;
        if let Some(t) = overrides.tau {
            config.tau = t;
        }
        if let Some(a) = overrides.alpha {
            config.alpha = a;
        }
        if let Some(s) = overrides.split {
            config.split = s;
        }
        if let Some(w) = overrides.workers {
            config.workers = w;
        }
        if let Some(o) = &overrides.out_dir {
            config.out_dir.clone_from(o);
        }
        Self::new(config)
    }

    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model_file = ModelFile::load(&config.model_config)?;
        let lexicon = Lexicon::standard(config.objects)?;
        ensure!(
            model_file.config.vocab_size >= lexicon.vocab_size(),
            "model vocabulary {} is smaller than the lexicon's {}",
            model_file.config.vocab_size,
            lexicon.vocab_size()
        );
        let template = PromptTemplate::standard(&lexicon);
        let model = model_file.build(&lexicon, &template)?;
        let model_hash = model_file.hash();
        Ok(Self { config, model_file, model_hash, lexicon, template, model })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn shape(&self) -> (usize, usize) {
        (self.model_file.config.num_layers, self.model_file.config.num_heads)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.config.out_dir)
            .with_context(|| format!("creating {}", self.config.out_dir.display()))
    }

    fn check_hash(&self, what: &str, hash: Option<&str>) -> Result<()> {
        match hash {
            Some(h) if h != self.model_hash => bail!(
                "{what} was produced with model {h}, active model is {}",
                self.model_hash
            ),
            _ => Ok(()),
        }
    }

    fn check_shape(&self, what: &str, layers: usize, heads: usize) -> Result<()> {
        let (l, h) = self.shape();
        ensure!(
            (layers, heads) == (l, h),
            "{what} has shape {layers}x{heads}, model has {l}x{h}"
        );
        Ok(())
    }

    pub fn load_mask(&self, path: &Path) -> Result<ImageHeadMask> {
        let mask = read_mask(path).with_context(|| format!("reading mask {}", path.display()))?;
        self.check_shape("mask", mask.layers(), mask.heads())?;
        self.check_hash("mask", mask.config_hash.as_deref())?;
        Ok(mask)
    }

    pub fn load_counts(&self, path: &Path) -> Result<CountMatrix> {
        let counts = read_counts(path).with_context(|| format!("reading counts {}", path.display()))?;
        self.check_shape("count file", counts.counts.layers(), counts.counts.heads())?;
        self.check_hash("count file", counts.config_hash.as_deref())?;
        Ok(counts)
    }

    fn scene_params(&self) -> SceneParams {
        SceneParams {
            image_budget: self.template.image_budget,
            ..SceneParams::default()
        }
    }

    /// Evaluation scenes, profiling scenes and probing questions.
    pub fn synthesize(&self) -> Result<(Vec<Scene>, Vec<Scene>, Vec<PopeQuestion>)> {
        let c = &self.config;
        let params = self.scene_params();
        let scenes = generate_scenes(&self.lexicon, &params, c.scenes, c.component_seed("scenes"))?;
        let profile = generate_scenes(
            &self.lexicon,
            &params,
            c.profile_scenes,
            c.component_seed("profile-scenes"),
        )?;
        let questions = build_pope_questions(
            &scenes,
            &self.lexicon,
            c.questions_per_scene,
            c.split,
            c.component_seed(&format!("questions-{}", c.split)),
        )?;
        Ok((scenes, profile, questions))
    }

    pub fn cmd_synth(&self) -> Result<()> {
        self.ensure_out()?;
        let (scenes, profile, questions) = self.synthesize()?;
        write_jsonl(self.out(SCENES_FILE), &scenes)?;
        write_jsonl(self.out(PROFILE_SCENES_FILE), &profile)?;
        write_jsonl(self.out(QUESTIONS_FILE), &questions)?;
        Ok(())
    }

    fn read_or_synth<R: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<R>> {
        let path = self.out(name);
        if !path.exists() {
            self.cmd_synth()?;
        }
        read_jsonl(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn caption_prompts(&self, scenes: &[Scene]) -> Result<Vec<MultimodalSequence>> {
        scenes
            .iter()
            .map(|s| {
                make_prompt(
                    s,
                    &self.template.caption_instruction,
                    &self.template,
                    self.model_file.config.max_seq_len,
                )
                .map_err(Into::into)
            })
            .collect()
    }

    /// Writes the trace and the counts at the configured tau; returns the
    /// counts and the number of recorded tokens.
    pub fn cmd_profile(&self) -> Result<CountMatrix> {
        self.ensure_out()?;
        let scenes: Vec<Scene> = self.read_or_synth(PROFILE_SCENES_FILE)?;
        let corpus = self.caption_prompts(&scenes)?;
        let mut trace = profile_parallel(
            &self.model,
            &corpus,
            self.config.profile_tokens,
            Some(self.lexicon.specials().eos),
            self.config.workers,
        )?;
        trace.config_hash = Some(self.model_hash.clone());
        let mut counts = count_exceedances(&trace, self.config.tau)?;
        counts.config_hash = Some(self.model_hash.clone());
        fs::write(self.out(TRACE_FILE), trace_to_csv(&trace))?;
        fs::write(self.out(COUNTS_FILE), counts_to_string(&counts))?;
        Ok(counts)
    }

    /// Mask from a count file, or from a trace file re-thresholded at the
    /// configured tau.
    pub fn cmd_mask(&self, counts: Option<&Path>, trace: Option<&Path>) -> Result<ImageHeadMask> {
        let counts = match (counts, trace) {
            (Some(p), None) => {
                let c = self.load_counts(p)?;
                ensure!(
                    c.tau == self.config.tau,
                    "count file was thresholded at tau={}, requested tau={}; rebuild it from the trace",
                    c.tau,
                    self.config.tau
                );
                c
            }
            (None, Some(p)) => {
                let t = read_trace_csv(p).with_context(|| format!("reading trace {}", p.display()))?;
                self.check_shape("trace", t.layers(), t.heads())?;
                self.check_hash("trace", t.config_hash.as_deref())?;
                let mut c = count_exceedances(&t, self.config.tau)?;
                c.config_hash = t.config_hash.clone();
                c
            }
            _ => bail!("give exactly one of a count file or a trace file"),
        };
        let mask = build_mask(&counts).with_config_hash(Some(self.model_hash.clone()));
        Ok(mask)
    }

    pub fn cmd_random_mask(&self, reference: &Path, seed: u64) -> Result<ImageHeadMask> {
        let reference = self.load_mask(reference)?;
        Ok(random_mask(&reference, seed)?)
    }

    pub fn cmd_overlap(&self, a: &Path, b: &Path) -> Result<Overlap> {
        let a = self.load_mask(a)?;
        let b = self.load_mask(b)?;
        Ok(mask_overlap(&a, &b)?)
    }

    fn decode_params(&self, len: usize) -> DecodeParams {
        DecodeParams::greedy(self.config.alpha, len).with_stop(self.lexicon.specials().eos)
    }

    /// Captions and probing answers, written under `out/<label>/`.
    pub fn cmd_decode(&self, mask: Option<&ImageHeadMask>, label: &str) -> Result<(Vec<CaptionRecord>, Vec<PopeAnswer>)> {
        if let Some(m) = mask {
            self.check_shape("mask", m.layers(), m.heads())?;
            self.check_hash("mask", m.config_hash.as_deref())?;
        }
        let scenes: Vec<Scene> = self.read_or_synth(SCENES_FILE)?;
        let questions: Vec<PopeQuestion> = self.read_or_synth(QUESTIONS_FILE)?;
        let captions = caption_scenes(
            &self.model,
            mask,
            &scenes,
            &self.lexicon,
            &self.template,
            &self.decode_params(self.config.gen_len),
        )?;
        let answers = answer_pope(
            &self.model,
            mask,
            &questions,
            &scenes,
            &self.lexicon,
            &self.template,
            &self.decode_params(1),
        )?;
        let dir = self.out(label);
        fs::create_dir_all(&dir)?;
        write_jsonl(dir.join(CAPTIONS_FILE), &captions)?;
        write_jsonl(dir.join(ANSWERS_FILE), &answers)?;
        Ok((captions, answers))
    }

    /// Scores `out/<label>/` and writes `report.txt` and `report.json` there.
    pub fn cmd_eval(&self, label: &str) -> Result<EvalReport> {
        let dir = self.out(label);
        let scenes: Vec<Scene> = read_jsonl(self.out(SCENES_FILE))
            .with_context(|| format!("reading {}", self.out(SCENES_FILE).display()))?;
        let mut report = EvalReport::default();
        let captions_path = dir.join(CAPTIONS_FILE);
        if captions_path.exists() {
            let captions: Vec<CaptionRecord> = read_jsonl(&captions_path)?;
            report.chair = Some(chair_metrics(&captions, &scenes, &self.lexicon)?);
        }
        let answers_path = dir.join(ANSWERS_FILE);
        if answers_path.exists() {
            let answers: Vec<PopeAnswer> = read_jsonl(&answers_path)?;
            report.pope = Some(pope_metrics(&answers)?);
        }
        ensure!(
            report.chair.is_some() || report.pope.is_some(),
            "nothing to evaluate in {}",
            dir.display()
        );
        fs::write(dir.join("report.txt"), report.to_key_value())?;
        fs::write(dir.join("report.json"), report.to_json() + "\n")?;
        Ok(report)
    }

    /// Normalized count heatmap as CSV and PGM.
    pub fn cmd_plot(&self, counts: &Path) -> Result<()> {
        self.ensure_out()?;
        let counts = self.load_counts(counts)?;
        let grid = normalize_counts(&counts);
        fs::write(self.out("heatmap.csv"), heatmap_csv(&grid))?;
        fs::write(self.out("heatmap.pgm"), heatmap_pgm(&grid))?;
        Ok(())
    }

    /// synth, profile, mask, plot, then baseline / contrastive / random-mask
    /// decodes with their reports and a summary file.
    pub fn cmd_run(&self) -> Result<RunSummary> {
        self.cmd_synth()?;
        let counts = self.cmd_profile()?;
        let mask = self.cmd_mask(Some(&self.out(COUNTS_FILE)), None)?;
        fs::write(self.out(MASK_FILE), mask_to_string(&mask))?;
        self.cmd_plot(&self.out(COUNTS_FILE))?;

        self.cmd_decode(None, "baseline")?;
        let baseline = self.cmd_eval("baseline")?;
        self.cmd_decode(Some(&mask), "maskcd")?;
        let maskcd = self.cmd_eval("maskcd")?;
        let mut random = Vec::with_capacity(self.config.random_masks);
        for r in 0..self.config.random_masks {
            let rm = random_mask(&mask, self.config.component_seed(&format!("random-mask-{r}")))?;
            let label = format!("random_{r}");
            fs::write(self.out(&format!("mask_{label}.txt")), mask_to_string(&rm))?;
            self.cmd_decode(Some(&rm), &label)?;
            random.push(self.cmd_eval(&label)?);
        }
        let summary = RunSummary {
            tokens: counts.total_tokens,
            layers: counts.counts.layers(),
            heads: counts.counts.heads(),
            image_heads: mask_stats(&mask).num_image_heads,
            baseline,
            maskcd,
            random,
        };
        fs::write(self.out("summary.txt"), summary.to_string())?;
        Ok(summary)
    }
}

/// Headline numbers of a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub tokens: u64,
    pub layers: usize,
    pub heads: usize,
    pub image_heads: usize,
    pub baseline: EvalReport,
    pub maskcd: EvalReport,
    pub random: Vec<EvalReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

impl RunSummary {
    fn row(name: &str, r: &EvalReport) -> String {
        let c = r.chair.as_ref();
        let p = r.pope.as_ref();
        format!(
            "{name:<10} chair_s={:.4} chair_i={:.4} pope_acc={:.4} pope_f1={:.4}\n",
            c.map_or(f64::NAN, |c| c.chair_s),
            c.map_or(f64::NAN, |c| c.chair_i),
            p.map_or(f64::NAN, |p| p.accuracy),
            p.map_or(f64::NAN, |p| p.f1),
        )
    }

    pub fn random_mean_chair(&self) -> (f64, f64) {
        let chairs = || self.random.iter().filter_map(|r| r.chair.as_ref());
        (mean(chairs().map(|c| c.chair_s)), mean(chairs().map(|c| c.chair_i)))
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "profiled T={} tokens over L={} H={}; {} image heads",
            self.tokens, self.layers, self.heads, self.image_heads
        )?;
        f.write_str(&Self::row("baseline", &self.baseline))?;
        f.write_str(&Self::row("maskcd", &self.maskcd))?;
        for (i, r) in self.random.iter().enumerate() {
            f.write_str(&Self::row(&format!("random_{i}"), r))?;
        }
        if !self.random.is_empty() {
            let (s, i) = self.random_mean_chair();
            writeln!(f, "random mean chair_s={s:.4} chair_i={i:.4}")?;
        }
        Ok(())
    }
}
