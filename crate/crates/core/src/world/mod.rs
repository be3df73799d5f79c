//! The synthetic universe: topics, prompts and stance-labeled candidate
//! responses, plus the SFT and preference datasets drawn from it.
//!
//! Identifiers are dense indices: the `i`-th topic, prompt and response of a
//! [`World`] carry id `i`. Every constructor and the JSON loader enforce this,
//! so lookups never need a hash map.

mod generate;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stance::{Stance, StanceVector};

pub use generate::{
    flip_labels, generate_preference_dataset, generate_sft_dataset, generate_world, Alignment,
    SftGeneration, StanceMix, WorldParams, DEFAULT_TOPICS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topic {
    pub id: TopicId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub id: PromptId,
    pub topic_id: TopicId,
    pub response_ids: Vec<ResponseId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: ResponseId,
    /// Sequence length in tokens; the normalizer of length-averaged objectives.
    pub token_length: u32,
    /// Ground-truth stance label.
    pub stance: StanceVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftExample {
    pub prompt_id: PromptId,
    pub response_id: ResponseId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt_id: PromptId,
    pub chosen_id: ResponseId,
    pub rejected_id: ResponseId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    topics: Vec<Topic>,
    prompts: Vec<Prompt>,
    responses: Vec<Response>,
    // prompt ids grouped by topic, in prompt order
    by_topic: Vec<Vec<PromptId>>,
}

impl World {
    pub fn new(topics: Vec<Topic>, prompts: Vec<Prompt>, responses: Vec<Response>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, t) in topics.iter().enumerate() {
            if t.id.0 != i {
                return Err(Error::invalid(format!("topic at position {i} has id {}", t.id.0)));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::invalid(format!("duplicate topic name {:?}", t.name)));
            }
        }
        for (i, r) in responses.iter().enumerate() {
            if r.id.0 != i {
                return Err(Error::invalid(format!("response at position {i} has id {}", r.id.0)));
            }
            if r.token_length == 0 {
                return Err(Error::invalid(format!("response {i} has zero token length")));
            }
        }
        let mut by_topic = vec![Vec::new(); topics.len()];
        for (i, p) in prompts.iter().enumerate() {
            if p.id.0 != i {
                return Err(Error::invalid(format!("prompt at position {i} has id {}", p.id.0)));
            }
            let group = by_topic.get_mut(p.topic_id.0).ok_or_else(|| {
                Error::invalid(format!("prompt {i} refers to unknown topic {}", p.topic_id.0))
            })?;
            group.push(p.id);
            if p.response_ids.is_empty() {
                return Err(Error::invalid(format!("prompt {i} has no candidate responses")));
            }
            let mut seen = HashSet::new();
            for r in &p.response_ids {
                if r.0 >= responses.len() {
                    return Err(Error::invalid(format!(
                        "prompt {i} refers to unknown response {}",
                        r.0
                    )));
                }
                if !seen.insert(*r) {
                    return Err(Error::invalid(format!(
                        "prompt {i} lists response {} twice",
                        r.0
                    )));
                }
            }
        }
        Ok(World {
            topics,
            prompts,
            responses,
            by_topic,
        })
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn topic(&self, id: TopicId) -> Result<&Topic> {
        self.topics
            .get(id.0)
            .ok_or_else(|| Error::invalid(format!("unknown topic {}", id.0)))
    }

    pub fn prompt(&self, id: PromptId) -> Result<&Prompt> {
        self.prompts
            .get(id.0)
            .ok_or_else(|| Error::invalid(format!("unknown prompt {}", id.0)))
    }

    pub fn response(&self, id: ResponseId) -> Result<&Response> {
        self.responses
            .get(id.0)
            .ok_or_else(|| Error::invalid(format!("unknown response {}", id.0)))
    }

    pub fn topic_by_name(&self, name: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.name == name)
    }

    /// Prompts of a topic, in prompt-id order.
    pub fn prompts_of(&self, topic: TopicId) -> &[PromptId] {
        self.by_topic.get(topic.0).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Position of `response` within the candidate list of `prompt`.
    pub fn candidate_index(&self, prompt: PromptId, response: ResponseId) -> Result<usize> {
        self.prompt(prompt)?
            .response_ids
            .iter()
            .position(|&r| r == response)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "response {} is not a candidate of prompt {}",
                    response.0, prompt.0
                ))
            })
    }

    /// Candidates of a prompt grouped by dominant stance.
    pub fn candidates_by_stance(&self, prompt: PromptId) -> Result<[Vec<ResponseId>; 3]> {
        let mut groups: [Vec<ResponseId>; 3] = Default::default();
        for &r in &self.prompt(prompt)?.response_ids {
            groups[self.responses[r.0].stance.dominant().index()].push(r);
        }
        Ok(groups)
    }

    pub fn check_sft(&self, ex: &SftExample) -> Result<()> {
        self.candidate_index(ex.prompt_id, ex.response_id).map(|_| ())
    }

    pub fn check_pair(&self, pair: &PreferencePair) -> Result<()> {
        self.candidate_index(pair.prompt_id, pair.chosen_id)?;
        self.candidate_index(pair.prompt_id, pair.rejected_id)?;
        if pair.chosen_id == pair.rejected_id {
            return Err(Error::invalid(format!(
                "pair on prompt {} has identical chosen and rejected response {}",
                pair.prompt_id.0, pair.chosen_id.0
            )));
        }
        Ok(())
    }

    /// Count of responses whose dominant stance is `stance`.
    pub fn stance_count(&self, stance: Stance) -> usize {
        self.responses
            .iter()
            .filter(|r| r.stance.dominant() == stance)
            .count()
    }
}

/// On-disk JSON document for a world and, optionally, its datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDocument {
    pub topics: Vec<Topic>,
    pub prompts: Vec<Prompt>,
    pub responses: Vec<Response>,
    #[serde(default)]
    pub sft: Vec<SftExample>,
    #[serde(default)]
    pub pref: Vec<PreferencePair>,
}

impl WorldDocument {
    pub fn new(world: &World, sft: &[SftExample], pref: &[PreferencePair]) -> Self {
        WorldDocument {
            topics: world.topics.clone(),
            prompts: world.prompts.clone(),
            responses: world.responses.clone(),
            sft: sft.to_vec(),
            pref: pref.to_vec(),
        }
    }

    /// Validates references and splits into the world and its datasets.
    pub fn into_parts(self) -> Result<(World, Vec<SftExample>, Vec<PreferencePair>)> {
        let world = World::new(self.topics, self.prompts, self.responses)?;
        for ex in &self.sft {
            world.check_sft(ex)?;
        }
        for pair in &self.pref {
            world.check_pair(pair)?;
        }
        Ok((world, self.sft, self.pref))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(crate::runner::config::json_parse_error)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Dataset-only JSON document; other top-level keys are ignored so a full
/// world document can be read as one too.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetDocument {
    #[serde(default)]
    pub sft: Vec<SftExample>,
    #[serde(default)]
    pub pref: Vec<PreferencePair>,
}

impl DatasetDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(crate::runner::config::json_parse_error)
    }
}
