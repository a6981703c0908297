//! Default in-context examples for the schema-selection, planning,
//! execution and difficulty prompts. Each is one small worked example;
//! deployments can replace any of them with their own fixture files.

use std::path::Path;

pub const SCHEMA_SELECT_FIXTURE: &str = r#"You are tasked with the following process. Classify the sentiment of a product review as positive or negative. For this task, you will use the shop_reviews dataset from HuggingFace. Dataset Description: Customer reviews with star ratings collected from an online store.
A sample data instance from this is as follows. {"review_text": "Great blender, crushes ice easily.", "stars": "5", "reviewer_id": "u1932", "upvotes": "3"}.
This dataset has the following columns: review_text, stars, reviewer_id, upvotes
Required Columns :
{"input": ["review_text"], "output": ["stars"], "irrelevant": ["reviewer_id"], "ambiguous": ["upvotes"]}"#;

pub const PLAN_FIXTURE: &str = r#"Task Description: Classify the sentiment of a product review as positive or negative.

Task Examples:
Example 1:
input: This kettle boils fast and looks great.
output: positive

Dataset Samples:
{"review_text": "Great blender, crushes ice easily.", "stars": "5"}

Plan:
1. Extract the "review_text" field from the dataset; this is the review to classify.
2. Use the "review_text" value as the "input" field without modification.
3. Map the "stars" field to a sentiment label: 4 or 5 stars become "positive", 1 or 2 stars become "negative".
4. If the "stars" value is 3 or missing, the sentiment is unclear; ignore the data sample and return null for that entry.
5. Set the mapped sentiment label as the "output" field."#;

pub const EXECUTE_FIXTURE: &str = r#"Task Description: Classify the sentiment of a product review as positive or negative.

Transformation Plan:
1. Extract the "review_text" field from the dataset; this is the review to classify.
2. Use the "review_text" value as the "input" field without modification.
3. Map the "stars" field to a sentiment label: 4 or 5 stars become "positive", 1 or 2 stars become "negative".
4. If the "stars" value is 3 or missing, the sentiment is unclear; ignore the data sample and return null for that entry.
5. Set the mapped sentiment label as the "output" field.

Dataset Sample:
{"review_text": "Arrived broken and support never replied.", "stars": "1"}

Response:
Following the plan: the review text becomes the input unchanged. The rating is 1 star, which maps to "negative", so that is the output.
{"input": "Arrived broken and support never replied.", "output": "negative"}"#;

pub const DIFFICULTY_FIXTURE: &str = r#"Code: y = [x**2 for x in range(10)]
Score: 2

Code: result = functools.reduce(operator.xor, (hash(frozenset(d.items())) for d in records), 0)
Score: 5"#;

/// In-context example set for the prompt stages. Defaults ship with the
/// crate; any member can be replaced from a fixture directory containing
/// `schema_select.txt`, `plan.txt`, `execute.txt` or `difficulty.txt`.
#[derive(Debug, Clone)]
pub struct InContextFixtures {
    pub schema_select: String,
    pub plan: String,
    pub execute: String,
    pub difficulty: String,
}

impl Default for InContextFixtures {
    fn default() -> Self {
        Self {
            schema_select: SCHEMA_SELECT_FIXTURE.to_string(),
            plan: PLAN_FIXTURE.to_string(),
            execute: EXECUTE_FIXTURE.to_string(),
            difficulty: DIFFICULTY_FIXTURE.to_string(),
        }
    }
}

impl InContextFixtures {
    /// Defaults overridden by whichever fixture files exist under `dir`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut fixtures = Self::default();
        for (file, slot) in [
            ("schema_select.txt", &mut fixtures.schema_select),
            ("plan.txt", &mut fixtures.plan),
            ("execute.txt", &mut fixtures.execute),
            ("difficulty.txt", &mut fixtures.difficulty),
        ] {
            let path = dir.join(file);
            if path.is_file() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(fixtures)
    }
}
