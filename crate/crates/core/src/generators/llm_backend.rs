//! Generator backed by a chat-completions endpoint.

use super::{render_prompt, GeneratorSession, PlanGenerator, Proposal, ProposeError};
use crate::evolution::SkillSet;
use crate::llm::{first_fenced_block, LlmClient, LlmError};
use crate::plan::OptimizationPlan;
use crate::taskspec::TaskSpec;

const REASK: &str = "\n\nYour previous reply did not contain a valid plan. Reply with exactly one ```json fenced \
                     block holding the plan object and nothing else.\n";

pub struct LlmGenerator {
    client: LlmClient,
}

impl LlmGenerator {
    pub fn new(client: LlmClient) -> Self {
        LlmGenerator { client }
    }
}

/// Parse the plan from the first fenced block of a completion.
pub fn parse_plan_completion(text: &str) -> Result<OptimizationPlan, String> {
    let block = first_fenced_block(text).ok_or("completion has no fenced block")?;
    OptimizationPlan::from_json(block).map_err(|e| format!("plan JSON is invalid: {e}"))
}

fn transport(e: LlmError) -> ProposeError {
    ProposeError::Transport(e.to_string())
}

impl PlanGenerator for LlmGenerator {
    fn name(&self) -> &str {
        "llm"
    }

    /// One re-ask on an unparseable reply, then `NoPlan`.
    fn propose(&self, task: &TaskSpec, skill: &SkillSet, session: &GeneratorSession) -> Result<Proposal, ProposeError> {
        let prompt = render_prompt(task, skill, session);
        let first = self.client.complete(&prompt).map_err(transport)?;
        let mut tokens = first.total_tokens;
        match parse_plan_completion(&first.text) {
            Ok(plan) => return Ok(Proposal { plan, tokens }),
            Err(_) => {
                let second = self.client.complete(&format!("{prompt}{REASK}")).map_err(transport)?;
                tokens += second.total_tokens;
                parse_plan_completion(&second.text)
                    .map(|plan| Proposal { plan, tokens })
                    .map_err(ProposeError::NoPlan)
            }
        }
    }
}
