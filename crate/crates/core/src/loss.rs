//! Training losses on the differentiation tape.
//!
//! Age is a regression problem trained with `1 - CCC`; gender is 3-class
//! classification trained with cross entropy. The joint objective is the
//! arithmetic mean of the two.

use crate::tensor::{Graph, NodeId};
use crate::Result;

/// `1 - CCC(pred, target)` over a batch of scalar predictions.
///
/// CCC uses population statistics and an epsilon of 1e-8 in the denominator;
/// batches of fewer than two samples are rejected because the variance terms
/// are undefined.
pub fn ccc_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    g.ccc_loss_node(pred, target)
}

/// Mean cross entropy of `[batch x classes]` logits against integer labels,
/// stabilized via log-sum-exp. The gradient wrt the logits is
/// `(softmax - one_hot) / batch`.
pub fn ce_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.ce_loss_node(logits, labels)
}

/// Average of the two task losses; gradient flows into both heads.
pub fn combined_loss(g: &mut Graph, age_loss: NodeId, gender_loss: NodeId) -> Result<NodeId> {
    let sum = g.add(age_loss, gender_loss)?;
    Ok(g.scale(sum, 0.5))
}
