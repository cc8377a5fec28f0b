mod eval;
mod explain;
mod extract;
mod predict;
mod synth;
mod train;

pub use eval::{cmd_eval_saliency, EvalOptions, MethodChoice};
pub use explain::{cmd_explain, ExplainMethod, ExplainOptions};
pub use extract::cmd_extract;
pub use predict::{cmd_predict, PredictOptions};
pub use synth::{cmd_synth, SynthOptions};
pub use train::{cmd_train, TrainSummary};
