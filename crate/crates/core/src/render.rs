//! Prompt rendering.
//!
//! A demonstration block is `v_I(x) + intra + v_O(label)`; blocks are joined
//! with the inter-separator and the test block follows one more
//! inter-separator. Strings are used verbatim: nothing is trimmed, inserted or
//! re-cased. The scored continuation starts at the placeholder of the last
//! verbalizer in the sequence and runs to the end of the string, so any
//! pattern text after the placeholder is part of the continuation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{split_pattern, ComponentSet, Template};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    #[serde(rename = "label")]
    pub class_index: usize,
}

impl Demonstration {
    pub fn new(text: impl Into<String>, class_index: usize) -> Self {
        Self { text: text.into(), class_index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Channel,
    ContentFree,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Channel => "channel",
            Mode::ContentFree => "content_free",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "channel" => Ok(Mode::Channel),
            "content_free" | "content-free" => Ok(Mode::ContentFree),
            other => Err(Error::invalid(format!("unknown render mode {other:?}"))),
        }
    }
}

/// Provenance tags carried alongside a prompt. Scoring backends that model a
/// real language model never look at these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMeta {
    pub template_id: u64,
    pub example_id: Option<u64>,
    pub class_index: usize,
    pub seed: Option<u64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub prefix: String,
    pub continuation: String,
    pub meta: PromptMeta,
}

impl RenderedPrompt {
    pub fn full_text(&self) -> String {
        format!("{}{}", self.prefix, self.continuation)
    }
}

/// Everything besides the class that determines a rendered prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub grammar: &'a ComponentSet,
    pub template: &'a Template,
    pub demos: &'a [Demonstration],
    pub example_id: Option<u64>,
    pub seed: Option<u64>,
}

impl<'a> PromptContext<'a> {
    pub fn new(grammar: &'a ComponentSet, template: &'a Template, demos: &'a [Demonstration]) -> Self {
        Self { grammar, template, demos, example_id: None, seed: None }
    }

    pub fn with_example(mut self, example_id: u64) -> Self {
        self.example_id = Some(example_id);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn meta(&self, class_index: usize, mode: Mode) -> PromptMeta {
        PromptMeta { template_id: self.template.id, example_id: self.example_id, class_index, seed: self.seed, mode }
    }
}

fn fill(pattern: &str, value: &str) -> String {
    let (before, after) = split_pattern(pattern);
    let mut s = String::with_capacity(before.len() + value.len() + after.len());
    s.push_str(before);
    s.push_str(value);
    s.push_str(after);
    s
}

/// Renders the demonstration blocks followed by the trailing inter-separator,
/// or nothing for zero demonstrations.
fn demo_context(ctx: &PromptContext<'_>, channel: bool) -> Result<String> {
    let t = ctx.template;
    let mut out = String::new();
    for demo in ctx.demos {
        let word = ctx.grammar.label_word(demo.class_index)?;
        let input = fill(&t.input_verbalizer, &demo.text);
        let output = fill(&t.output_verbalizer, word);
        let (first, second) = if channel { (output, input) } else { (input, output) };
        out.push_str(&first);
        out.push_str(&t.intra_separator);
        out.push_str(&second);
        out.push_str(&t.inter_separator);
    }
    Ok(out)
}

fn check_template(ctx: &PromptContext<'_>) -> Result<()> {
    if ctx.grammar.contains(ctx.template) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "template {} is not part of grammar {:?}",
            ctx.template.id,
            ctx.grammar.task_name()
        )))
    }
}

fn render_forward(ctx: &PromptContext<'_>, test_text: &str, class_index: usize, mode: Mode) -> Result<RenderedPrompt> {
    check_template(ctx)?;
    let word = ctx.grammar.label_word(class_index)?;
    let t = ctx.template;
    let mut prefix = demo_context(ctx, false)?;
    prefix.push_str(&fill(&t.input_verbalizer, test_text));
    prefix.push_str(&t.intra_separator);
    let (out_before, out_after) = split_pattern(&t.output_verbalizer);
    prefix.push_str(out_before);
    let continuation = format!("{word}{out_after}");
    Ok(RenderedPrompt { prefix, continuation, meta: ctx.meta(class_index, mode) })
}

/// Scores `P(label | input)`: the continuation is the label word plus any
/// output-verbalizer suffix.
pub fn render_direct(ctx: &PromptContext<'_>, test_text: &str, class_index: usize) -> Result<RenderedPrompt> {
    render_forward(ctx, test_text, class_index, Mode::Direct)
}

/// Scores `P(input | label)`: every block is written output-first and the
/// continuation is the test input plus any input-verbalizer suffix, which is
/// the same string for every class.
pub fn render_channel(ctx: &PromptContext<'_>, test_text: &str, class_index: usize) -> Result<RenderedPrompt> {
    check_template(ctx)?;
    let word = ctx.grammar.label_word(class_index)?;
    let t = ctx.template;
    let mut prefix = demo_context(ctx, true)?;
    prefix.push_str(&fill(&t.output_verbalizer, word));
    prefix.push_str(&t.intra_separator);
    let (in_before, in_after) = split_pattern(&t.input_verbalizer);
    prefix.push_str(in_before);
    let continuation = format!("{test_text}{in_after}");
    if continuation.is_empty() {
        return Err(Error::EmptyContinuation);
    }
    Ok(RenderedPrompt { prefix, continuation, meta: ctx.meta(class_index, Mode::Channel) })
}

/// Direct rendering with the test input replaced by a content-free token.
pub fn render_content_free(ctx: &PromptContext<'_>, cf_token: &str, class_index: usize) -> Result<RenderedPrompt> {
    render_forward(ctx, cf_token, class_index, Mode::ContentFree)
}

pub fn render(ctx: &PromptContext<'_>, mode: Mode, text: &str, class_index: usize) -> Result<RenderedPrompt> {
    match mode {
        Mode::Direct => render_direct(ctx, text, class_index),
        Mode::Channel => render_channel(ctx, text, class_index),
        Mode::ContentFree => render_content_free(ctx, text, class_index),
    }
}

/// Escapes control characters so separators are visible in terminal output.
pub fn escape_visible(s: &str) -> String {
    s.escape_debug().to_string()
}
