//! Verifiable rewards for in-context retrieval training, hard-negative
//! corpus construction, and evaluation analyses over model outputs and
//! attention dumps.

pub mod corpus;
pub mod evaluation;
pub mod judge;
pub mod matching;
pub mod parsing;
pub mod records;
pub mod rewards;

pub use corpus::{BuildConfig, Candidate, ContextInstance, Document, Origin};
pub use evaluation::{AttentionRecord, EvalReport};
pub use judge::{JudgeClient, JudgeMode, JudgeRequest, RecordedJudge};
pub use matching::NormalizationRules;
pub use parsing::{FormatFlag, ParsedOutput};
pub use rewards::{compute_reward, RewardConfig, RewardKind, RewardResult};
