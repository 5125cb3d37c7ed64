//! Prompt templates for every LLM-facing stage. Templates are part of the
//! configuration surface: stages interpolate into these exact strings, and
//! mocks match on their distinctive fragments.

/// Open information extraction over one chunk, tuple-per-line output.
pub fn extraction_prompt(chunk_text: &str) -> (String, String) {
    let system = "You are an information extraction engine. You identify entities and \
                  relationships in text and emit them in a strict line format."
        .to_string();
    let user = format!(
        "-Goal-\n\
         Given the text below, identify all named entities and all relationships between them.\n\
         \n\
         -Steps-\n\
         1. For each entity emit one line:\n\
         (\"entity\"|<entity_name>|<entity_type>|<entity_description>)\n\
         2. For each pair of clearly related entities emit one line:\n\
         (\"relationship\"|<source_entity>|<target_entity>|<relationship_description>|<strength 1-10>)\n\
         3. Emit nothing else.\n\
         \n\
         -Text-\n\
         {chunk_text}\n\
         \n\
         -Output-"
    );
    (system, user)
}

/// Module summarization from member texts.
pub fn summary_prompt(member_texts: &str, budget_chars: usize) -> (String, String) {
    let system = "You write terse factual summaries of grouped knowledge-graph content."
        .to_string();
    let user = format!(
        "Summarize the following related items as a single coherent paragraph of at most \
         {budget_chars} characters. Keep every load-bearing fact.\n\
         \n\
         -Items-\n\
         {member_texts}\n\
         \n\
         -Summary-"
    );
    (system, user)
}

/// Directed causal verification between two module summaries. One call per
/// unordered pair; the answer carries the direction.
pub fn gate_verification_prompt(summary_a: &str, summary_b: &str) -> (String, String) {
    let system = "You judge whether the content of one knowledge module causally depends on \
                  another: explicit logical dependencies or event sequences, not mere topical \
                  similarity."
        .to_string();
    let user = format!(
        "Module A:\n{summary_a}\n\n\
         Module B:\n{summary_b}\n\n\
         Is there a causal dependency between module A and module B?\n\
         Answer with exactly one word:\n\
         forward  (A causes or enables B)\n\
         backward (B causes or enables A)\n\
         both     (dependencies run both ways)\n\
         none     (no causal dependency)"
    );
    (system, user)
}

/// Spurious-aware causal evidence selection over a linearized subgraph.
pub fn spurious_aware_selection_prompt(query: &str, table: &str) -> (String, String) {
    let system = "You are a causality analyst. You select the evidence items that form valid \
                  causal chains for a question and explicitly separate spurious associations."
        .to_string();
    let user = format!(
        "Question: {query}\n\
         \n\
         Evidence table (id: content):\n\
         {table}\n\
         \n\
         Select the ids that form valid causal support chains for the question. Also list ids \
         that are merely spurious associations (topical coincidence, hub nodes, co-occurrence \
         without dependency).\n\
         Respond with a single JSON object, no prose:\n\
         {{\"precise\": [\"N1\", \"R2\"], \"ct_precise\": [\"N9\"]}}"
    );
    (system, user)
}

/// Standard causal evidence selection: ids only, no spurious tagging.
pub fn standard_selection_prompt(query: &str, table: &str) -> (String, String) {
    let system = "You are a causality analyst. You select the evidence items that form valid \
                  causal chains for a question."
        .to_string();
    let user = format!(
        "Question: {query}\n\
         \n\
         Evidence table (id: content):\n\
         {table}\n\
         \n\
         Output only the ids of the items that form valid causal support for the question, as \
         a single JSON array, no prose:\n\
         [\"N1\", \"R2\"]"
    );
    (system, user)
}

/// Grounded answer generation over the pruned evidence.
pub fn generation_prompt(query: &str, evidence: &str) -> (String, String) {
    let system = "You answer questions using only the evidence provided. If the evidence is \
                  insufficient, say so; never invent facts."
        .to_string();
    let user = if evidence.is_empty() {
        format!(
            "Question: {query}\n\
             \n\
             Evidence: [no verified evidence]\n\
             \n\
             There is no verified evidence for this question. State that the question cannot \
             be answered from the corpus."
        )
    } else {
        format!(
            "Question: {query}\n\
             \n\
             Evidence:\n\
             {evidence}\n\
             \n\
             Answer the question strictly from the evidence above."
        )
    };
    (system, user)
}
