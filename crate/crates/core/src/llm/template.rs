//! Prompt templates with `{{name}}` placeholders.
//!
//! The six built-in templates drive every LLM stage: candidate reranking,
//! schema selection, plan generation, per-row execution, task expansion and
//! difficulty judging. Quirks of wording are intentional; downstream parsing
//! and the deterministic transcripts both key off the exact text.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("missing binding: {0}")]
    MissingBinding(String),
    #[error("template has no placeholders and no text")]
    EmptyTemplate,
}

/// Which pipeline stage a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Rerank,
    SchemaSelect,
    Plan,
    Execute,
    TaskExpand,
    Difficulty,
}

impl TemplateName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::Rerank => "rerank",
            TemplateName::SchemaSelect => "schema_select",
            TemplateName::Plan => "plan",
            TemplateName::Execute => "execute",
            TemplateName::TaskExpand => "task_expand",
            TemplateName::Difficulty => "difficulty",
        }
    }
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-zA-Z_][a-zA-Z0-9_]*)\}\}").expect("valid regex"))
}

/// A prompt template plus the placeholder names scanned from its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub template_text: String,
    pub placeholders: Vec<String>,
}

impl PromptTemplate {
    /// Build a template, deriving `placeholders` from the text so the two
    /// can never disagree.
    pub fn new(name: TemplateName, template_text: impl Into<String>) -> Self {
        let template_text = template_text.into();
        let mut placeholders = Vec::new();
        for cap in placeholder_regex().captures_iter(&template_text) {
            let ph = cap[1].to_string();
            if !placeholders.contains(&ph) {
                placeholders.push(ph);
            }
        }
        Self { name, template_text, placeholders }
    }

    /// The built-in template for a stage.
    pub fn builtin(name: TemplateName) -> Self {
        let text = match name {
            TemplateName::Rerank => RERANK_TEMPLATE,
            TemplateName::SchemaSelect => SCHEMA_SELECT_TEMPLATE,
            TemplateName::Plan => PLAN_TEMPLATE,
            TemplateName::Execute => EXECUTE_TEMPLATE,
            TemplateName::TaskExpand => TASK_EXPAND_TEMPLATE,
            TemplateName::Difficulty => DIFFICULTY_TEMPLATE,
        };
        Self::new(name, text)
    }

    /// Substitute every placeholder. Bindings must cover all placeholders;
    /// bound values are inserted verbatim and never rescanned, so values
    /// containing brace syntax cannot inject further substitution. Unknown
    /// binding names are tolerated with a warning.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        for key in bindings.keys() {
            if !self.placeholders.contains(key) {
                tracing::warn!(template = self.name.as_str(), binding = %key, "unknown binding ignored");
            }
        }
        let mut out = String::with_capacity(self.template_text.len());
        let mut last = 0;
        for cap in placeholder_regex().captures_iter(&self.template_text) {
            let whole = cap.get(0).expect("capture 0");
            let name = &cap[1];
            let value = bindings
                .get(name)
                .ok_or_else(|| TemplateError::MissingBinding(name.to_string()))?;
            out.push_str(&self.template_text[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.template_text[last..]);
        Ok(out)
    }
}

/// Convenience for building a bindings map from pairs.
pub fn bindings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub const RERANK_TEMPLATE: &str = "Your objective is to choose the most relevant dataset for a given a task (and few examples of the task). For each dataset, you will be provided with the dataset description, and tags related to the dataset. Please return the most relevant dataset, e.g., squad

The following is the task
{{instruction}}
and these are some examples of the same:
{{examples}}
There are {{num}} datasets available for this task.
{{datasets}}
The name of the most relevant dataset for this task is:";

pub const SCHEMA_SELECT_TEMPLATE: &str = "Your objective is to carefully analyze the task and the dataset mentioned, and decide whether the columns are relevant input, relevant output, irrelevant for the given task, or if it is ambiguous. There should be at most one output column. It is possible to have no relevant columns, in which case return the input and output column as empty lists.  Answer in a json format, with the following keys: input, output, irrelevant, ambiguous.
{{incontext_examples}}
After seeing these examples with the required columns, please provide the relevant columns for this context:

You are tasked with the following process. {{instruction}} For this task, you will use the {{dataset_name}} dataset from HuggingFace. Dataset Description: {{dataset_description}}
A sample data instance from this is as follows. {{sample_row}}.
This dataset has the following columns: {{dataset_columns}}
Required Columns :";

pub const PLAN_TEMPLATE: &str = "You are a Planning Agent. You create a plan to transform data samples from their existing format into the required format for a given task.

-------------------------------------------------
Here are some examples for your reference.

{{in_context_examples}}

------------------------------------------------
Now do the following task:

Task Description: {{task_description}}

Task Examples:
{{examples}}

Here are samples from a potentially relevant dataset for the task above. Notice how the format below is not as required by the task above.

Dataset Samples:
{{dataset_row}}

Carefully analyze the `Task Description` and the `Task Examples`. Propose a higher-level plan to convert data from the Dataset Sample to data in the required format task examples. Your plan should be a list of sequential steps that can be taken to perform the data transformation. You don't need to use all columns, as the dataset may not be fully relevant. Keep steps as simple, explicit and concise as possible. Each step in the plan may take any of the following actions:
1. Generate new columns as required by the task, and save them
2. Expand on a particular column to make it something more relevant to the task and save it
3. Combine multiple columns from the dataset
4. Choose columns that will form \"input\"
5. After the input field is created, carefully analyze it to choose/generate the output field
6. Ignore a data sample because it is not all relevant and return null for them.

Return only the plan.";

pub const EXECUTE_TEMPLATE: &str = "You are a Data Transforming Agent. Your job is to transform data from a given format to the required format. Following are the detailed instructions for the same:
1. Read the `Task Description`.
2. An example of the input and output looks like for the task is shown in `Task Examples`
3. The sample to be transformed is in `Data Sample`.
4. Read the data transformation plan carefully that will help you convert the `Data Sample` into the required format. This should be relevant and intune to the `Task Description`
5. Perform the plan step by step and explain your thinking.
6. End your response with the transformed sample as a JSON response with exactly 2 fields: \"input\" and \"output\".
-------------------------------------------------
Here are some examples for your reference.
{{incontext_examples}}
------------------------------------------------
Now do the following task:

Task Description: {{task_description}}

Task Examples:
{{sample}}

{{plan}}

Dataset Sample:
{{dataset_row}}

Think step by step through the plan to convert the above `Dataset Sample` and show your working. End your response as a JSON with exactly two fields: \"input\", and \"output\"
Response:";

pub const TASK_EXPAND_TEMPLATE: &str = "Carefully analyse the task description and examples of the task, and explain the task to give a clearer description. Do not explain each example, but rather capture the general trends. Also place special focus on the format of the input/output examples.
-------------------------------------------------

Task Description: {{task_description}}

Task Examples: {{examples}}";

/// Default difficulty prompt. Difficulty prompts are task-specific by
/// design; this one covers code-description tasks and is the shipped
/// example. Callers supply their own template for other tasks.
pub const DIFFICULTY_TEMPLATE: &str = "We are building a dataset for automatically describing code
(in words). Evaluate and rate the difficulty and complexity
of describing the following code lines. You should give an
overall score on a scale of 1 to 5,
where a higher score indicates higher difficulty.
You must just give a score without any other reasons.
Here's the grading scale:
1: Very easy. Anyone who understands the
programming language could describe this almost instantly
2: Easy. Anyone who understands the programming
language could describe this with a bit of thought
3. Neutral. Most non-expert people who understand
the programming language would be able to describe this,
but it might take time for them to understand the code
4. Hard. It would require at least a minute
for a non-expert person who understand the
programming lanugage to understand and describe this code.
5. Very hard. Most non-experts would make a mistake
when trying to describe this code in a fixed timeframe.
Professional programmers would have an easier time.

Your answer shoud be a single number, 1 through 5,
with nothing else in your response.

{{incontext_examples}}

{{example}}";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerank_render_ends_with_answer_cue() {
        let template = PromptTemplate::builtin(TemplateName::Rerank);
        let rendered = template
            .render(&bindings(&[
                ("instruction", "Describe Python code."),
                ("examples", "Example 1:\ninput: x = 1\noutput: assigns one"),
                ("num", "2"),
                ("datasets", "1. alpha\n2. beta"),
            ]))
            .unwrap();
        assert!(rendered.ends_with("The name of the most relevant dataset for this task is:"));
        assert!(rendered.contains("Describe Python code."));
        assert!(!rendered.contains("{{"));
    }

    #[test]
    fn zero_placeholder_template_is_identity() {
        let template = PromptTemplate::new(TemplateName::Difficulty, "score this");
        assert!(template.placeholders.is_empty());
        let rendered = template.render(&BTreeMap::new()).unwrap();
        assert_eq!(rendered, "score this");
    }

    #[test]
    fn missing_binding_names_the_placeholder() {
        let template = PromptTemplate::builtin(TemplateName::Plan);
        let incomplete = bindings(&[
            ("in_context_examples", "..."),
            ("task_description", "t"),
            ("examples", "e"),
        ]);
        let err = template.render(&incomplete).unwrap_err();
        assert_eq!(err.to_string(), "missing binding: dataset_row");
    }

    #[test]
    fn placeholders_are_scanned_from_text() {
        let template = PromptTemplate::builtin(TemplateName::SchemaSelect);
        assert_eq!(
            template.placeholders,
            vec![
                "incontext_examples",
                "instruction",
                "dataset_name",
                "dataset_description",
                "sample_row",
                "dataset_columns"
            ]
        );
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let template = PromptTemplate::new(TemplateName::Execute, "row: {{a}} end {{b}}");
        let rendered = template
            .render(&bindings(&[("a", "{{b}}"), ("b", "two")]))
            .unwrap();
        assert_eq!(rendered, "row: {{b}} end two");
    }

    #[test]
    fn distinct_bindings_render_distinctly() {
        let template = PromptTemplate::new(TemplateName::Execute, "[{{a}}|{{b}}]");
        let one = template.render(&bindings(&[("a", "x"), ("b", "y")])).unwrap();
        let two = template.render(&bindings(&[("a", "y"), ("b", "x")])).unwrap();
        assert_ne!(one, two);
    }
}
