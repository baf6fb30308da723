use std::collections::VecDeque;
use std::sync::Arc;

use super::frontier::{distributions, Frontier};
use super::select::{Advance, Draft};
use super::DecodeError;
use crate::model::Model;
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub(crate) struct Hypothesis<T> {
    pub frontier: Frontier<T>,
    pub log_prob: f64,
    drafts: VecDeque<Draft>,
}

impl<T> Hypothesis<T> {
    fn finished(&self) -> bool {
        self.frontier.done && self.drafts.is_empty()
    }
}

/// Beam search in which every head of every step is a separate decision, so
/// width 1 reproduces the per-head argmax. Hypotheses are ranked by summed
/// log-probability; ties keep the earlier hypothesis. Returns the finished
/// hypotheses, best first.
pub(crate) fn search<T: Scalar>(
    model: &Model<T>,
    start: Frontier<T>,
    width: usize,
) -> Result<Vec<Hypothesis<T>>, DecodeError> {
    let width = width.max(1);
    let mut beam = vec![Hypothesis {
        frontier: start,
        log_prob: 0.0,
        drafts: VecDeque::new(),
    }];
    loop {
        let mut requests = Vec::new();
        for (h, hyp) in beam.iter().enumerate() {
            if hyp.drafts.is_empty() {
                requests.extend(hyp.frontier.slots().into_iter().map(|s| (h, s)));
            }
        }
        if !requests.is_empty() {
            let refs: Vec<_> = requests
                .iter()
                .map(|&(h, s)| (&beam[h].frontier, s))
                .collect();
            let dists = distributions(model, &refs)?;
            for ((h, slot), (dist, hidden)) in requests.into_iter().zip(dists) {
                let hyp = &mut beam[h];
                if let Some(hidden) = hidden {
                    hyp.frontier.record_hidden(slot, hidden);
                }
                let allowed = hyp.frontier.allowed_types(slot, &model.config);
                hyp.drafts
                    .push_back(Draft::new(slot, Arc::new(dist), allowed));
            }
        }
        if beam.iter().all(Hypothesis::finished) {
            return Ok(beam);
        }
        let mut pool = Vec::with_capacity(beam.len() * width);
        for mut hyp in beam {
            let Some(draft) = hyp.drafts.pop_front() else {
                pool.push(hyp);
                continue;
            };
            for (option, lp) in draft.options(width) {
                let mut child = hyp.clone();
                child.log_prob += lp;
                match draft.advance(option, &model.config) {
                    Advance::Pending(next) => child.drafts.push_front(next),
                    Advance::Done(choice) => {
                        child.frontier.apply(draft.slot, choice);
                        if child.frontier.done {
                            child.drafts.clear();
                        }
                    }
                }
                pool.push(child);
            }
        }
        pool.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        pool.truncate(width);
        if pool.is_empty() {
            return Err(DecodeError::NoHypotheses);
        }
        beam = pool;
    }
}
