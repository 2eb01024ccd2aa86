//! Prompt templates sent to the policy, the answer generator and the judges.
//!
//! The templates are frozen byte-for-byte by the golden files under
//! `tests/golden/`; edit both together or not at all.

use crate::memory::{MemoryType, RenderedMemory};

pub const MEMORIZE_PROMPT: &str = "Remember the following content chunk by completing these steps:

1. **Core Memory Update**: Maintain an understanding of the user, or a summary of what the user is reading, or a set of classification rules summarized from the classification examples (label 1: meaning; label 2: meaning, etc.). Keep updates brief (a few sentences maximum).

2. **Memory Storage**:
   - **Episodic Memory**: Record user actions, user's friends' actions and assistant actions with timestamps (format: \"At timestamp t, user did X\")
   - **Semantic Memory**: Record key facts and information (format: \"John is User's 18-year-old friend\", \"Harry Potter author: J.K. Rowling\", \"Sample: xxx; Label: xxx\")

<new_chunk>
{context}
</new_chunk>

**Important**: Response limit is {max_new_tokens} tokens. Be concise and brief in all memory updates.";

pub const CORE_JUDGE_PROMPT: &str = "You are an expert memory analyst. Analyze the quality of core memory content.

The core memory is invalid if any of the following meets:
(1) The literal content \"core memory\" appears in the memory such as \"This is core memory ...\", \"The core memory has been updated ...\".
(2) The core memory is apparently a placeholder such as \"Here we save the summary\" while not stating what the \"summary\" is, \"Here are some rules\" and not stating what the \"rules\" are.

Otherwise, the core memory is valid.

Respond ONLY with a JSON code block in this exact format:
```json
{
  \"VALID\": true/false,
  \"ISSUES\": [list any problems found],
  \"EXPLANATION\": \"brief explanation of the assessment\"
}
```";

pub const EPISODIC_JUDGE_PROMPT: &str = "You are an expert memory analyst. Analyze the quality of episodic memory content.

Episodic memory should contain:
- Experiences or events
- Clear temporal information (when it happened)
- Contextual details (what happened)

Respond ONLY with a JSON code block in this exact format:
```json
{
  \"VALID\": true/false,
  \"ISSUES\": [list any problems found],
  \"EXPLANATION\": \"brief explanation of the assessment\"
}
```";

pub const SEMANTIC_JUDGE_PROMPT: &str = "You are an expert memory analyst. Analyze the quality of semantic memory content.

Semantic memory should contain:
- Information or Knowledge about somebody or something
- Definitions, theories, principles, or explanations
- How-to knowledge or procedural information
- Research findings or established facts

Two other memories are Core memory (User Personalities) and Episodic memory (User Experiences). The information not suitable for these two memories should be considered as semantic memory.

Respond ONLY with a JSON code block in this exact format:
```json
{
  \"VALID\": true/false,
  \"ISSUES\": [list any problems found],
  \"EXPLANATION\": \"brief explanation of the assessment\"
}
```";

pub const KEYWORD_PROMPT: &str = "Analyze the following book summary and extract the most important keywords. Focus on:

1. Character names (main and supporting characters)
2. Key events and plot points
3. Important locations/settings
4. Central themes and concepts
5. Significant objects or symbols
6. Time periods or dates mentioned
7. Key relationships between characters
8. Important actions or decisions

Example:
Summary: \"Elizabeth Bennet meets Mr. Darcy at a ball in Hertfordshire. Initially, she finds him proud and disagreeable. After learning about his past with Wickham and his role in separating Jane and Bingley, her dislike intensifies. However, when Darcy proposes and she rejects him, he writes a letter explaining his actions. Elizabeth realizes her prejudices and eventually falls in love with him after visiting Pemberley.\"

Keywords: Elizabeth Bennet, Mr. Darcy, ball, Hertfordshire, proud, Wickham, Jane, Bingley, proposal, rejection, letter, prejudices, Pemberley, love, Pride and Prejudice themes, marriage, social class, first impressions, misunderstanding, character growth

Now analyze this summary:
{summary}

Extract keywords/phrases that capture the essential information in this summary, make sure they are complete and cover all aspects of the story.
Return ONLY a comma-separated list of keywords, nothing else.
Focus on concrete, specific terms rather than generic words.
Include both single words and short phrases (2-3 words max).
Prioritize proper nouns, specific events, and unique concepts.";

pub const ANSWER_PROMPT: &str = "You are a reasoning assistant with access to structured memory. Use the memories below to provide accurate, relevant, and comprehensive responses to user queries.

MEMORY STRUCTURE:

- Core Memory: Fundamental facts about the user (preferences, roles, goals, etc.)
- Semantic Memory: General knowledge, factual or conceptual information
- Episodic Memory: Specific personal experiences or events with time and context

CURRENT MEMORY STATE:

<core_memory>
{core_memory_content}
<\\core_memory>

<episodic_memory>
{episodic_memory_content}
<\\episodic_memory>

<semantic_memory>
{semantic_memory_content}
<\\semantic_memory>

INSTRUCTIONS:
- Use the memories above to inform your responses
- If information is available in memory, reference it appropriately
- If memory is insufficient to answer a question, acknowledge this clearly
- Provide helpful and contextual responses based on the available memory
- Be concise but comprehensive in your answers";

/// Yes/no grading prompt for the LLM-judge answer metric. Not part of the
/// original prompt set.
pub const ANSWER_JUDGE_PROMPT: &str = "You are grading whether a model's answer to a question is correct.

Question: {question}
Reference answer: {gold}
Model answer: {prediction}

Does the model answer contain the information in the reference answer? Reply with exactly one word: yes or no.";

/// Heading placed above the rendered memory in the memorize system message.
pub const MEMORY_HEADING: &str = "# Current Memory";

/// Substitutes `{name}` placeholders in a single left-to-right pass, so text
/// inserted for one placeholder is never rescanned for another.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let key_len = name.len() + 2;
            if tail.as_bytes().get(key_len - 1) == Some(&b'}')
                && tail.get(1..key_len - 1) == Some(*name)
            {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn memorize_instruction(chunk: &str, max_new_tokens: usize) -> String {
    fill(
        MEMORIZE_PROMPT,
        &[("context", chunk), ("max_new_tokens", &max_new_tokens.to_string())],
    )
}

/// The memorize system message: current memory followed by the instruction.
pub fn memorize_system(memory: &RenderedMemory, chunk: &str, max_new_tokens: usize) -> String {
    format!(
        "{MEMORY_HEADING}\n\n{}\n\n{}",
        memory.to_text(),
        memorize_instruction(chunk, max_new_tokens)
    )
}

pub fn answer_system(core: &str, episodic: &str, semantic: &str) -> String {
    fill(
        ANSWER_PROMPT,
        &[
            ("core_memory_content", core),
            ("episodic_memory_content", episodic),
            ("semantic_memory_content", semantic),
        ],
    )
}

pub fn content_judge_prompt(memory_type: MemoryType) -> &'static str {
    match memory_type {
        MemoryType::Core => CORE_JUDGE_PROMPT,
        MemoryType::Episodic => EPISODIC_JUDGE_PROMPT,
        MemoryType::Semantic => SEMANTIC_JUDGE_PROMPT,
    }
}

pub fn keyword_prompt(summary: &str) -> String {
    fill(KEYWORD_PROMPT, &[("summary", summary)])
}

pub fn answer_judge_prompt(question: &str, gold: &str, prediction: &str) -> String {
    fill(
        ANSWER_JUDGE_PROMPT,
        &[("question", question), ("gold", gold), ("prediction", prediction)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("{a}-{b}", &[("a", "{b}"), ("b", "x")]), "{b}-x");
        assert_eq!(fill("{ \"VALID\": {a} }", &[("a", "1")]), "{ \"VALID\": 1 }");
        assert_eq!(fill("{unknown} {", &[("a", "1")]), "{unknown} {");
        assert_eq!(fill("é{a}é", &[("a", "ü")]), "éüé");
    }

    #[test]
    fn memorize_substitutes_budget() {
        let text = memorize_instruction("chunk text", 1024);
        assert!(text.contains("Response limit is 1024 tokens."));
        assert!(text.contains("<new_chunk>\nchunk text\n</new_chunk>"));
        let core = text.find("**Core Memory Update**").unwrap();
        let episodic = text.find("**Episodic Memory**").unwrap();
        let semantic = text.find("**Semantic Memory**").unwrap();
        assert!(core < episodic && episodic < semantic);
    }

    #[test]
    fn chunk_text_is_not_rescanned() {
        let text = memorize_instruction("literal {max_new_tokens}", 7);
        assert!(text.contains("literal {max_new_tokens}"));
        assert!(text.contains("Response limit is 7 tokens."));
    }
}
