//! Deterministic synthetic corpus over the full 13-node taxonomy.
//!
//! Utterances are assembled from class-specific phrase templates. A share of
//! them borrow the phrasing of a closely related skill, so the text alone is
//! ambiguous for those examples while their annotation edges are not.

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, HeteroGraph, NodeKind, NodeRecord};
use crate::labels::LabelSet;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MIN_EXAMPLES: usize = 15;

/// Probability that an utterance uses the phrasing of its confusable skill.
const BORROW_PROBABILITY: f64 = 0.3;
/// Probability that a fully labeled utterance carries no common-factor cue.
const DROP_CF_CUE_PROBABILITY: f64 = 0.3;
/// Probability that a fully labeled example demonstrates a second skill.
const SECOND_SKILL_PROBABILITY: f64 = 0.1;

pub const ROOT_ID: &str = "root";
pub const CF_IDS: [&str; 3] = ["cf-bond", "cf-goal-alignment", "cf-task-agreement"];
pub const IC_IDS: [&str; 2] = ["ic-ear", "ic-cp"];
pub const SKILL_IDS: [&str; 7] = [
    "skill-open-ended-questions",
    "skill-reflective-listening",
    "skill-affirmation",
    "skill-validation",
    "skill-genuineness",
    "skill-respect-for-autonomy",
    "skill-asking-for-permission",
];

const CF_TEXT: [(&str, &str); 3] = [
    (
        "Bond",
        "The emotional connection of trust, warmth and mutual respect between client and therapist.",
    ),
    (
        "Goal alignment",
        "Client and therapist agree on what the client wants to change and why it matters.",
    ),
    (
        "Task agreement",
        "Client and therapist agree on the concrete steps and activities of the work.",
    ),
];

const IC_TEXT: [(&str, &str); 2] = [
    (
        "Empathy, acceptance and positive regard",
        "Understanding the client's inner world and accepting them without judgement.",
    ),
    (
        "Collaboration and partnership",
        "Working side by side with the client as an equal partner in deciding the course of therapy.",
    ),
];

const SKILL_TEXT: [(&str, &str); 7] = [
    (
        "Open-ended questions",
        "Questions that invite the client to elaborate in their own words rather than answer yes or no.",
    ),
    (
        "Reflective listening",
        "Mirroring back what the client said or feels so they know they were heard.",
    ),
    (
        "Affirmation",
        "Recognising the client's strengths, efforts and progress.",
    ),
    (
        "Validation",
        "Communicating that the client's feelings and reactions are understandable.",
    ),
    (
        "Genuineness",
        "The therapist being open, honest and authentic about their own reactions.",
    ),
    (
        "Respect for autonomy",
        "Emphasising that the client has the right and the capacity to make their own choices.",
    ),
    (
        "Asking for permission",
        "Asking before offering information, advice or a new topic.",
    ),
];

/// IC conveyed by each skill.
const SKILL_IC: [usize; 7] = [1, 0, 0, 0, 0, 1, 1];
/// CFs supported by each skill.
const SKILL_CFS: [&[usize]; 7] = [&[1, 2], &[0, 1], &[0], &[0], &[0], &[2, 1], &[2]];
/// (CF, IC) includes pairs.
const CF_IC: [(usize, usize); 3] = [(0, 0), (1, 1), (2, 1)];
/// The skill whose phrasing is most easily confused with each skill. The
/// pairs are symmetric; reflective listening maps to itself and is never
/// borrowed, so its phrasing alone identifies it.
const CONFUSABLE: [usize; 7] = [6, 1, 3, 2, 5, 4, 0];

const OPENERS: [&str; 8] = ["", "So", "Okay", "Well", "Right", "Mm", "I see", "Alright"];
const TOPICS: [&str; 10] = [
    "your sister",
    "work",
    "the move",
    "your drinking",
    "school",
    "the diagnosis",
    "your marriage",
    "sleep",
    "money",
    "your father",
];
const FILLERS: [&str; 6] = ["", "today", "right now", "this week", "lately", "for a moment"];

const SKILL_PHRASES: [[&str; 6]; 7] = [
    [
        "what would you like to talk about regarding {t}",
        "how do you feel about {t}",
        "what has {t} been like for you",
        "can you tell me more about {t}",
        "what matters most to you about {t}",
        "how would you describe {t}",
    ],
    [
        "it sounds like {t} has been weighing on you",
        "so you are feeling torn about {t}",
        "you're saying {t} leaves you exhausted",
        "what i hear is that {t} feels overwhelming",
        "you feel stuck when it comes to {t}",
        "it seems {t} has left you frustrated",
    ],
    [
        "you showed real courage in facing {t}",
        "that took a lot of strength with {t}",
        "you have worked hard on {t}",
        "i admire how you handled {t}",
        "you made real progress with {t}",
        "you are resourceful in dealing with {t}",
    ],
    [
        "it makes sense that {t} upsets you",
        "anyone would feel that way about {t}",
        "your reaction to {t} is completely understandable",
        "it is natural to struggle with {t}",
        "of course {t} feels hard",
        "feeling hurt by {t} is valid",
    ],
    [
        "honestly i also find {t} difficult to think about",
        "i want to be open with you about {t}",
        "to be candid i am moved by what you shared about {t}",
        "i will be honest i am not sure about {t} either",
        "speaking personally {t} touches me too",
        "i genuinely care about how {t} turns out",
    ],
    [
        "it is your decision what to do about {t}",
        "you are the expert on your own life and {t}",
        "whatever you choose about {t} is up to you",
        "you get to decide how to handle {t}",
        "i trust you to choose your path with {t}",
        "you can take {t} at whatever pace feels right",
    ],
    [
        "would it be okay if we talked about {t}",
        "may i share some thoughts on {t}",
        "is it alright if i ask about {t}",
        "do i have your permission to explore {t}",
        "would you be open to hearing an idea about {t}",
        "can i offer a suggestion about {t}",
    ],
];

const CF_PHRASES: [[&str; 3]; 3] = [
    [
        "i am here with you",
        "we are in this together",
        "you can trust this space",
    ],
    [
        "so we can work toward your goal",
        "keeping your goals in mind",
        "to get closer to what you want",
    ],
    [
        "and we can agree on the next step",
        "so we plan the steps together",
        "as part of the work we agreed on",
    ],
];

const NEUTRAL_PHRASES: [&str; 8] = [
    "the parking lot was full this morning",
    "let me check the clock",
    "our next appointment is on tuesday",
    "the weather has been strange lately",
    "please fill out this form before you leave",
    "the office will be closed next monday",
    "i need to update your contact details",
    "the printer is out of paper again",
];

/// The 13 taxonomy nodes and their wiring, without examples.
pub fn taxonomy() -> (Vec<NodeRecord>, Vec<(String, String, EdgeKind)>) {
    let mut nodes = vec![NodeRecord::taxonomy(
        ROOT_ID,
        NodeKind::Root,
        "Therapeutic alliance",
        "The collaborative relationship between client and therapist that underlies change.",
    )];
    for (id, (name, desc)) in CF_IDS.iter().zip(CF_TEXT) {
        nodes.push(NodeRecord::taxonomy(id, NodeKind::CommonFactor, name, desc));
    }
    for (id, (name, desc)) in IC_IDS.iter().zip(IC_TEXT) {
        nodes.push(NodeRecord::taxonomy(id, NodeKind::InterventionConcept, name, desc));
    }
    for (id, (name, desc)) in SKILL_IDS.iter().zip(SKILL_TEXT) {
        nodes.push(NodeRecord::taxonomy(id, NodeKind::Skill, name, desc));
    }

    let edge = |s: &str, t: &str, k| (s.to_string(), t.to_string(), k);
    let mut edges = Vec::new();
    for cf in CF_IDS {
        edges.push(edge(ROOT_ID, cf, EdgeKind::Includes));
    }
    for (cf, ic) in CF_IC {
        edges.push(edge(CF_IDS[cf], IC_IDS[ic], EdgeKind::Includes));
    }
    for (s, id) in SKILL_IDS.iter().enumerate() {
        edges.push(edge(id, IC_IDS[SKILL_IC[s]], EdgeKind::Conveys));
        for &cf in SKILL_CFS[s] {
            edges.push(edge(id, CF_IDS[cf], EdgeKind::Supports));
        }
    }
    (nodes, edges)
}

enum Kind {
    Full,
    SkillOnly,
    Neutral,
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn skill_phrase(rng: &mut ChaCha8Rng, skill: usize) -> String {
    let phrasing = if rng.random_bool(BORROW_PROBABILITY) {
        CONFUSABLE[skill]
    } else {
        skill
    };
    let template = pick(rng, &SKILL_PHRASES[phrasing]);
    template.replace("{t}", pick(rng, &TOPICS))
}

fn sentence(parts: &[&str]) -> String {
    let body = parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ");
    let mut chars = body.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect::<String>() + ".",
        None => String::new(),
    }
}

/// Generates a complete graph file with `n_examples` example nodes:
/// about 60% fully labeled, 35% skill-only and 5% neutral (edge-less).
pub fn generate_toy_dataset(seed: u64, n_examples: usize) -> Result<Vec<u8>> {
    Ok(generate_toy_graph(seed, n_examples)?.to_json().into_bytes())
}

pub fn generate_toy_graph(seed: u64, n_examples: usize) -> Result<HeteroGraph> {
    if n_examples < MIN_EXAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_EXAMPLES} examples to cover every class, got {n_examples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_neutral = ((n_examples as f64 * 0.05).round() as usize).max(1);
    let n_full = (n_examples as f64 * 0.6).round() as usize;
    let n_skill_only = n_examples - n_full - n_neutral;

    let mut plan: Vec<(Kind, usize)> = Vec::with_capacity(n_examples);
    let mut full: Vec<usize> = (0..n_full).map(|i| i % 7).collect();
    full.shuffle(&mut rng);
    plan.extend(full.into_iter().map(|s| (Kind::Full, s)));
    let mut partial: Vec<usize> = (0..n_skill_only).map(|i| i % 7).collect();
    partial.shuffle(&mut rng);
    plan.extend(partial.into_iter().map(|s| (Kind::SkillOnly, s)));
    plan.extend((0..n_neutral).map(|_| (Kind::Neutral, 0)));
    plan.shuffle(&mut rng);

    let (mut nodes, mut edges) = taxonomy();
    let width = n_examples.to_string().len().max(3);
    for (i, (kind, skill)) in plan.into_iter().enumerate() {
        let id = format!("ex-{:0width$}", i + 1);
        let opener = pick(&mut rng, &OPENERS);
        let filler = pick(&mut rng, &FILLERS);
        match kind {
            Kind::Full => {
                let cfs = SKILL_CFS[skill];
                let cf = cfs[rng.random_range(0..cfs.len())];
                let ic = SKILL_IC[skill];
                let primary = skill_phrase(&mut rng, skill);
                let second = rng.random_bool(SECOND_SKILL_PROBABILITY).then(|| {
                    // another skill conveying the same IC
                    let others: Vec<usize> = (0..7).filter(|&s| s != skill && SKILL_IC[s] == ic).collect();
                    others[rng.random_range(0..others.len())]
                });
                let second_phrase = second.map(|s| skill_phrase(&mut rng, s)).unwrap_or_default();
                let cf_cue = if rng.random_bool(DROP_CF_CUE_PROBABILITY) {
                    ""
                } else {
                    pick(&mut rng, &CF_PHRASES[cf])
                };
                let text = sentence(&[opener, &primary, filler, &second_phrase, cf_cue]);
                nodes.push(NodeRecord::example(
                    &id,
                    &text,
                    LabelSet::new(Some(cf), Some(ic), Some(skill)),
                ));
                edges.push((id.clone(), CF_IDS[cf].to_string(), EdgeKind::Fosters));
                edges.push((id.clone(), IC_IDS[ic].to_string(), EdgeKind::Expresses));
                edges.push((id.clone(), SKILL_IDS[skill].to_string(), EdgeKind::Demonstrates));
                if let Some(s) = second {
                    edges.push((id.clone(), SKILL_IDS[s].to_string(), EdgeKind::Demonstrates));
                }
            }
            Kind::SkillOnly => {
                let phrase = skill_phrase(&mut rng, skill);
                let text = sentence(&[opener, &phrase, filler]);
                nodes.push(NodeRecord::example(&id, &text, LabelSet::new(None, None, Some(skill))));
                edges.push((id.clone(), SKILL_IDS[skill].to_string(), EdgeKind::Demonstrates));
            }
            Kind::Neutral => {
                let text = sentence(&[opener, pick(&mut rng, &NEUTRAL_PHRASES), filler]);
                nodes.push(NodeRecord::example(&id, &text, LabelSet::neutral()));
            }
        }
    }
    HeteroGraph::new(nodes, &edges)
}

/// A fresh, unambiguous utterance of the given skill, drawn from the same
/// templates the generator uses.
pub fn template_utterance(skill: usize, variant: usize) -> String {
    let template = SKILL_PHRASES[skill][variant % 6];
    sentence(&[&template.replace("{t}", TOPICS[variant % TOPICS.len()])])
}

/// Skill class index for a skill node id.
pub fn skill_index(id: &str) -> Option<usize> {
    SKILL_IDS.iter().position(|s| *s == id)
}
